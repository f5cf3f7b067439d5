//! Text snapshot of an [`InteractionGraph`].
//!
//! ```text
//! gnnrec-graph v1
//! users 2 items 3 edges 3 levels 5
//! 0<TAB>0:5,2:3
//! 1<TAB>1:4
//! ```
//! One adjacency line per user, UTF-8, LF endings. External keys live in a
//! separate id-map file (`u<TAB>idx<TAB>key` / `i<TAB>idx<TAB>key`).

use std::io::{BufRead, Write};

use super::{Edge, GraphError, InteractionGraph, Side};

pub const GRAPH_HEADER: &str = "gnnrec-graph v1";

pub fn write_graph<W: Write>(out: &mut W, graph: &InteractionGraph) -> std::io::Result<()> {
    writeln!(out, "{GRAPH_HEADER}")?;
    writeln!(
        out,
        "users {} items {} edges {} levels {}",
        graph.n_users(),
        graph.n_items(),
        graph.n_edges(),
        graph.rating_levels()
    )?;
    let mut line = String::new();
    for u in 0..graph.n_users() {
        line.clear();
        let (items, ratings) = graph.neighbor_slices(Side::User, u);
        for (k, (i, r)) in items.iter().zip(ratings).enumerate() {
            if k > 0 {
                line.push(',');
            }
            line.push_str(&format!("{i}:{r}"));
        }
        writeln!(out, "{u}\t{line}")?;
    }
    Ok(())
}

pub fn write_id_maps<W: Write>(out: &mut W, graph: &InteractionGraph) -> std::io::Result<()> {
    for (i, k) in graph.user_keys().iter().enumerate() {
        writeln!(out, "u\t{i}\t{k}")?;
    }
    for (i, k) in graph.item_keys().iter().enumerate() {
        writeln!(out, "i\t{i}\t{k}")?;
    }
    Ok(())
}

fn parse_err(line: usize, message: impl Into<String>) -> GraphError {
    GraphError::Parse {
        source_name: "<graph snapshot>".into(),
        line,
        message: message.into(),
    }
}

fn io_err(source: std::io::Error) -> GraphError {
    GraphError::Io {
        path: "<graph snapshot>".into(),
        source,
    }
}

/// Reads user and item keys written by [`write_id_maps`].
pub fn read_id_maps<R: BufRead>(input: R) -> Result<(Vec<String>, Vec<String>), GraphError> {
    let (mut users, mut items) = (Vec::new(), Vec::new());
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.is_empty() {
            continue;
        }
        let mut f = line.splitn(3, '\t');
        let (kind, idx, key) = match (f.next(), f.next(), f.next()) {
            (Some(k), Some(i), Some(key)) => (k, i, key),
            _ => return Err(parse_err(n + 1, "expected `side<TAB>index<TAB>key`")),
        };
        let idx: usize = idx.parse().map_err(|_| parse_err(n + 1, "bad index"))?;
        let target = match kind {
            "u" => &mut users,
            "i" => &mut items,
            _ => return Err(parse_err(n + 1, format!("unknown side `{kind}`"))),
        };
        if idx != target.len() {
            return Err(parse_err(n + 1, "indices must be consecutive"));
        }
        target.push(key.to_string());
    }
    Ok((users, items))
}

/// Reads a graph snapshot. Without id maps, keys default to the dense indices.
pub fn read_graph<R: BufRead>(
    input: R,
    keys: Option<(Vec<String>, Vec<String>)>,
) -> Result<InteractionGraph, GraphError> {
    let mut lines = input.lines();
    let mut next = |n: usize| -> Result<String, GraphError> {
        lines
            .next()
            .ok_or_else(|| parse_err(n, "unexpected end of snapshot"))?
            .map_err(io_err)
    };
    let header = next(1)?;
    if header != GRAPH_HEADER {
        return Err(parse_err(1, format!("unsupported header `{header}`")));
    }
    let counts = next(2)?;
    let f: Vec<&str> = counts.split(' ').collect();
    let field = |name: &str, pos: usize| -> Result<usize, GraphError> {
        if f.get(pos) != Some(&name) {
            return Err(parse_err(2, format!("expected `{name}`")));
        }
        f.get(pos + 1)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_err(2, format!("bad `{name}` count")))
    };
    let (n_users, n_items, n_edges, levels) = (
        field("users", 0)?,
        field("items", 2)?,
        field("edges", 4)?,
        field("levels", 6)?,
    );
    let mut edges = Vec::with_capacity(n_edges);
    for u in 0..n_users {
        let line_no = u + 3;
        let line = next(line_no)?;
        let (idx, adj) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(line_no, "missing tab"))?;
        if idx.parse::<usize>().ok() != Some(u) {
            return Err(parse_err(line_no, "user lines must be in index order"));
        }
        for tok in adj.split(',').filter(|t| !t.is_empty()) {
            let (i, r) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(line_no, format!("bad entry `{tok}`")))?;
            edges.push(Edge {
                user: u as u32,
                item: i
                    .parse()
                    .map_err(|_| parse_err(line_no, "bad item index"))?,
                rating: r.parse().map_err(|_| parse_err(line_no, "bad rating"))?,
            });
        }
    }
    if edges.len() != n_edges {
        return Err(parse_err(
            2,
            format!("header says {n_edges} edges, found {}", edges.len()),
        ));
    }
    let (user_keys, item_keys) = match keys {
        Some((u, i)) => {
            if u.len() != n_users || i.len() != n_items {
                return Err(GraphError::Invalid(
                    "id maps do not match graph counts".into(),
                ));
            }
            (u, i)
        }
        None => (
            (0..n_users).map(|i| i.to_string()).collect(),
            (0..n_items).map(|i| i.to_string()).collect(),
        ),
    };
    InteractionGraph::from_edges(user_keys, item_keys, levels as u8, &edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_layout() {
        let g = InteractionGraph::from_indexed_edges(2, 3, 5, &[(0, 2, 3), (0, 0, 5), (1, 1, 4)])
            .unwrap();
        let mut buf = Vec::new();
        write_graph(&mut buf, &g).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "gnnrec-graph v1\nusers 2 items 3 edges 3 levels 5\n0\t0:5,2:3\n1\t1:4\n"
        );
    }

    #[test]
    fn rejects_corrupt_snapshots() {
        assert!(read_graph("nope\n".as_bytes(), None).is_err());
        let short = "gnnrec-graph v1\nusers 1 items 1 edges 2 levels 1\n0\t0:1\n";
        assert!(read_graph(short.as_bytes(), None).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(edges in proptest::collection::btree_set((0u32..6, 0u32..7), 0..30), seed in 1u8..4) {
            let e: Vec<_> = edges.iter().map(|&(u, i)| (u, i, (u + i) as u8 % seed + 1)).collect();
            let g = InteractionGraph::from_indexed_edges(6, 7, 4, &e).unwrap();
            let mut buf = Vec::new();
            write_graph(&mut buf, &g).unwrap();
            let mut ids = Vec::new();
            write_id_maps(&mut ids, &g).unwrap();
            let keys = read_id_maps(ids.as_slice()).unwrap();
            let back = read_graph(buf.as_slice(), Some(keys)).unwrap();
            prop_assert_eq!(&back, &g);
            for i in 0..7 {
                prop_assert_eq!(back.neighbors(Side::Item, i).unwrap(), g.neighbors(Side::Item, i).unwrap());
            }
        }
    }
}
