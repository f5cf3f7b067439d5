use std::io::{BufRead, Write};

use rand::seq::SliceRandom;

use super::{Edge, GraphError, InteractionGraph, Side};
use crate::rng::rng_from;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SplitStrategy {
    /// Each user's edges are shuffled independently and a fixed fraction held out.
    #[default]
    PerUserRandom,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
    pub strategy: SplitStrategy,
}

impl SplitSpec {
    pub fn new(test_fraction: f64, seed: u64) -> Self {
        SplitSpec {
            test_fraction,
            seed,
            strategy: SplitStrategy::PerUserRandom,
        }
    }

    /// Edges held out for a user of the given degree. Users with fewer than
    /// two edges keep everything in train; otherwise at least one edge stays.
    pub fn holdout(&self, degree: usize) -> usize {
        if degree < 2 {
            return 0;
        }
        let raw = self.test_fraction * degree as f64;
        // tolerate representation error such as 0.1 * 30 = 3.0000000000000004
        let n = (raw - 1e-9).ceil().max(0.0) as usize;
        n.min(degree - 1)
    }
}

/// Splits per user into a train graph (same node sets and keys) and the
/// held-out edges, sorted by `(user, item)`.
pub fn split_train_test(
    graph: &InteractionGraph,
    spec: &SplitSpec,
) -> Result<(InteractionGraph, Vec<Edge>), GraphError> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(GraphError::Invalid(format!(
            "test_fraction {} outside (0, 1)",
            spec.test_fraction
        )));
    }
    let mut rng = rng_from(spec.seed);
    let mut train = Vec::with_capacity(graph.n_edges());
    let mut test = Vec::new();
    let mut order = Vec::new();
    for u in 0..graph.n_users() {
        let (items, ratings) = graph.neighbor_slices(Side::User, u);
        let n_test = spec.holdout(items.len());
        order.clear();
        order.extend(0..items.len());
        if n_test > 0 {
            order.shuffle(&mut rng);
        }
        for (k, &pos) in order.iter().enumerate() {
            let e = Edge {
                user: u as u32,
                item: items[pos],
                rating: ratings[pos],
            };
            if k < n_test {
                test.push(e);
            } else {
                train.push(e);
            }
        }
    }
    test.sort_unstable();
    Ok((graph.with_edges(&train)?, test))
}

/// Held-out edge manifest: one `user_idx<TAB>item_idx<TAB>rating` line per edge.
pub fn write_edges<W: Write>(out: &mut W, edges: &[Edge]) -> std::io::Result<()> {
    for e in edges {
        writeln!(out, "{}\t{}\t{}", e.user, e.item, e.rating)?;
    }
    Ok(())
}

pub fn read_edges<R: BufRead>(input: R) -> Result<Vec<Edge>, GraphError> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|source| GraphError::Io {
            path: "<edges>".into(),
            source,
        })?;
        if line.is_empty() {
            continue;
        }
        let bad = || GraphError::Parse {
            source_name: "<edges>".into(),
            line: n + 1,
            message: format!("malformed edge line `{line}`"),
        };
        let mut f = line.split('\t');
        let mut next = || f.next().ok_or_else(bad);
        let user = next()?.parse().map_err(|_| bad())?;
        let item = next()?.parse().map_err(|_| bad())?;
        let rating = next()?.parse().map_err(|_| bad())?;
        out.push(Edge { user, item, rating });
    }
    Ok(out)
}
