//! Ratings ingestion and the immutable bipartite interaction graph.

mod ratings;
mod snapshot;
mod split;

pub use ratings::{
    filter_min_interactions, parse_amazon, parse_file, parse_movielens, parse_reader, ParseOptions,
    RatingRecord, RatingsFormat, RatingsTable,
};
pub use snapshot::{read_graph, read_id_maps, write_graph, write_id_maps, GRAPH_HEADER};
pub use split::{read_edges, split_train_test, write_edges, SplitSpec, SplitStrategy};

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("degenerate graph: {0}")]
    Degenerate(&'static str),
    #[error("{side} index {index} out of range (count {count})")]
    OutOfBounds {
        side: Side,
        index: usize,
        count: usize,
    },
    #[error("unknown {side} key `{key}`")]
    UnknownKey { side: Side, key: String },
    #[error("invalid graph: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    User,
    Item,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::User => Side::Item,
            Side::Item => Side::User,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::User => "user",
            Side::Item => "item",
        })
    }
}

/// A user–item interaction with its retained rating level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub user: u32,
    pub item: u32,
    pub rating: u8,
}

/// Compressed adjacency lists, neighbours sorted ascending within each row.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    ratings: Vec<u8>,
}

impl Adjacency {
    fn build(n: usize, mut pairs: Vec<(u32, u32, u8)>) -> Self {
        pairs.sort_unstable_by_key(|&(s, t, _)| (s, t));
        let mut offsets = vec![0usize; n + 1];
        for &(s, _, _) in &pairs {
            offsets[s as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        Adjacency {
            offsets,
            targets: pairs.iter().map(|p| p.1).collect(),
            ratings: pairs.iter().map(|p| p.2).collect(),
        }
    }

    #[inline]
    fn row(&self, i: usize) -> (&[u32], &[u8]) {
        let span = self.offsets[i]..self.offsets[i + 1];
        (&self.targets[span.clone()], &self.ratings[span])
    }
}

/// Weighted user–user relations (`r_{u,n}`), only present when supplied.
#[derive(Clone, Debug, PartialEq)]
pub struct UserRelations {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
}

impl UserRelations {
    pub fn row(&self, user: usize) -> (&[u32], &[f64]) {
        let span = self.offsets[user]..self.offsets[user + 1];
        (&self.targets[span.clone()], &self.weights[span])
    }
}

/// Immutable bipartite user–item graph.
///
/// Both directions are stored as sorted CSR lists that are exact transposes
/// of each other. External keys map to dense indices assigned in first-seen
/// order.
#[derive(Clone, Debug)]
pub struct InteractionGraph {
    by_user: Adjacency,
    by_item: Adjacency,
    user_keys: Vec<String>,
    item_keys: Vec<String>,
    user_lookup: HashMap<String, u32>,
    item_lookup: HashMap<String, u32>,
    rating_levels: u8,
    relations: Option<UserRelations>,
}

impl PartialEq for InteractionGraph {
    fn eq(&self, other: &Self) -> bool {
        self.by_user == other.by_user
            && self.user_keys == other.user_keys
            && self.item_keys == other.item_keys
            && self.rating_levels == other.rating_levels
            && self.relations == other.relations
    }
}

fn lookup(keys: &[String]) -> HashMap<String, u32> {
    keys.iter()
        .enumerate()
        .map(|(i, k)| (k.clone(), i as u32))
        .collect()
}

impl InteractionGraph {
    /// Builds a graph from explicit edges. Duplicate pairs, out-of-range
    /// indices and rating levels outside `1..=rating_levels` are rejected.
    pub fn from_edges(
        user_keys: Vec<String>,
        item_keys: Vec<String>,
        rating_levels: u8,
        edges: &[Edge],
    ) -> Result<Self, GraphError> {
        let (n_users, n_items) = (user_keys.len(), item_keys.len());
        for e in edges {
            if e.user as usize >= n_users || e.item as usize >= n_items {
                return Err(GraphError::Invalid(format!(
                    "edge ({}, {}) outside {n_users}×{n_items}",
                    e.user, e.item
                )));
            }
            if e.rating == 0 || e.rating > rating_levels {
                return Err(GraphError::Invalid(format!(
                    "rating level {} outside 1..={rating_levels}",
                    e.rating
                )));
            }
        }
        let by_user = Adjacency::build(
            n_users,
            edges.iter().map(|e| (e.user, e.item, e.rating)).collect(),
        );
        if by_user
            .offsets
            .windows(2)
            .any(|w| by_user.targets[w[0]..w[1]].windows(2).any(|p| p[0] == p[1]))
        {
            return Err(GraphError::Invalid("duplicate user-item edge".into()));
        }
        let by_item = Adjacency::build(
            n_items,
            edges.iter().map(|e| (e.item, e.user, e.rating)).collect(),
        );
        Ok(InteractionGraph {
            by_user,
            by_item,
            user_lookup: lookup(&user_keys),
            item_lookup: lookup(&item_keys),
            user_keys,
            item_keys,
            rating_levels,
            relations: None,
        })
    }

    /// Graph with keys `"0".."n-1"`; convenient for fixtures.
    pub fn from_indexed_edges(
        n_users: usize,
        n_items: usize,
        rating_levels: u8,
        edges: &[(u32, u32, u8)],
    ) -> Result<Self, GraphError> {
        let keys = |n: usize| (0..n).map(|i| i.to_string()).collect();
        let edges: Vec<Edge> = edges
            .iter()
            .map(|&(user, item, rating)| Edge { user, item, rating })
            .collect();
        Self::from_edges(keys(n_users), keys(n_items), rating_levels, &edges)
    }

    /// Attaches user–user relation weights. Each `(a, b, r)` adds `b` to the
    /// neighbourhood of `a` with raw weight `r` (softmax-normalised at use).
    pub fn with_user_relations(
        mut self,
        relations: &[(u32, u32, f64)],
    ) -> Result<Self, GraphError> {
        let n = self.n_users();
        if let Some(&(a, b, _)) = relations
            .iter()
            .find(|&&(a, b, _)| a as usize >= n || b as usize >= n)
        {
            return Err(GraphError::Invalid(format!(
                "relation ({a}, {b}) outside {n} users"
            )));
        }
        let mut sorted = relations.to_vec();
        sorted.sort_by_key(|x| (x.0, x.1));
        let mut offsets = vec![0usize; n + 1];
        for &(a, _, _) in &sorted {
            offsets[a as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        self.relations = Some(UserRelations {
            offsets,
            targets: sorted.iter().map(|r| r.1).collect(),
            weights: sorted.iter().map(|r| r.2).collect(),
        });
        Ok(self)
    }

    pub fn user_relations(&self) -> Option<&UserRelations> {
        self.relations.as_ref()
    }

    pub fn n_users(&self) -> usize {
        self.user_keys.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_keys.len()
    }

    pub fn count(&self, side: Side) -> usize {
        match side {
            Side::User => self.n_users(),
            Side::Item => self.n_items(),
        }
    }

    pub fn n_edges(&self) -> usize {
        self.by_user.targets.len()
    }

    /// Number of rating levels `R`; rating embeddings are indexed `level - 1`.
    pub fn rating_levels(&self) -> u8 {
        self.rating_levels
    }

    pub fn user_keys(&self) -> &[String] {
        &self.user_keys
    }

    pub fn item_keys(&self) -> &[String] {
        &self.item_keys
    }

    pub fn user_index(&self, key: &str) -> Result<usize, GraphError> {
        self.user_lookup
            .get(key)
            .map(|&i| i as usize)
            .ok_or_else(|| GraphError::UnknownKey {
                side: Side::User,
                key: key.to_string(),
            })
    }

    pub fn item_index(&self, key: &str) -> Result<usize, GraphError> {
        self.item_lookup
            .get(key)
            .map(|&i| i as usize)
            .ok_or_else(|| GraphError::UnknownKey {
                side: Side::Item,
                key: key.to_string(),
            })
    }

    fn adjacency(&self, side: Side) -> &Adjacency {
        match side {
            Side::User => &self.by_user,
            Side::Item => &self.by_item,
        }
    }

    /// Neighbour indices and rating levels of a node. Panics if out of range;
    /// see [`InteractionGraph::neighbors`] for the checked form.
    #[inline]
    pub fn neighbor_slices(&self, side: Side, index: usize) -> (&[u32], &[u8]) {
        self.adjacency(side).row(index)
    }

    #[inline]
    pub fn degree(&self, side: Side, index: usize) -> usize {
        let adj = self.adjacency(side);
        adj.offsets[index + 1] - adj.offsets[index]
    }

    pub fn check_index(&self, side: Side, index: usize) -> Result<(), GraphError> {
        let count = self.count(side);
        if index >= count {
            return Err(GraphError::OutOfBounds { side, index, count });
        }
        Ok(())
    }

    /// Sorted `(neighbour, rating level)` pairs of a node.
    pub fn neighbors(&self, side: Side, index: usize) -> Result<Vec<(usize, u8)>, GraphError> {
        self.check_index(side, index)?;
        let (t, r) = self.neighbor_slices(side, index);
        Ok(t.iter()
            .map(|&n| n as usize)
            .zip(r.iter().copied())
            .collect())
    }

    pub fn has_edge(&self, user: usize, item: usize) -> bool {
        self.neighbor_slices(Side::User, user)
            .0
            .binary_search(&(item as u32))
            .is_ok()
    }

    /// All edges in user-major, item-ascending order.
    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        (0..self.n_users()).flat_map(move |u| {
            let (items, ratings) = self.neighbor_slices(Side::User, u);
            items.iter().zip(ratings).map(move |(&item, &rating)| Edge {
                user: u as u32,
                item,
                rating,
            })
        })
    }

    /// `edges / (users × items)`.
    pub fn density(&self) -> Result<f64, GraphError> {
        if self.n_users() == 0 || self.n_items() == 0 {
            return Err(GraphError::Degenerate(
                "density needs at least one user and one item",
            ));
        }
        Ok(self.n_edges() as f64 / (self.n_users() as f64 * self.n_items() as f64))
    }

    /// Same node sets and keys, different edges.
    pub fn with_edges(&self, edges: &[Edge]) -> Result<Self, GraphError> {
        let mut g = Self::from_edges(
            self.user_keys.clone(),
            self.item_keys.clone(),
            self.rating_levels,
            edges,
        )?;
        g.relations = self.relations.clone();
        Ok(g)
    }
}

/// Binarises a ratings table: every observed pair becomes an edge, keeping its
/// rating level. Dense indices follow first appearance in the table.
pub fn to_implicit(table: &RatingsTable) -> Result<InteractionGraph, GraphError> {
    if table.is_empty() {
        return Err(GraphError::EmptyInput("ratings table has no records"));
    }
    let mut user_ix = vec![u32::MAX; table.user_keys.len()];
    let mut item_ix = vec![u32::MAX; table.item_keys.len()];
    let (mut user_keys, mut item_keys) = (Vec::new(), Vec::new());
    let mut edges = Vec::with_capacity(table.len());
    for r in &table.records {
        let u = &mut user_ix[r.user as usize];
        if *u == u32::MAX {
            *u = user_keys.len() as u32;
            user_keys.push(table.user_keys[r.user as usize].clone());
        }
        let i = &mut item_ix[r.item as usize];
        if *i == u32::MAX {
            *i = item_keys.len() as u32;
            item_keys.push(table.item_keys[r.item as usize].clone());
        }
        edges.push(Edge {
            user: *u,
            item: *i,
            rating: r.rating,
        });
    }
    InteractionGraph::from_edges(user_keys, item_keys, table.max_rating.max(1), &edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> InteractionGraph {
        let t = parse_reader(
            "1::10::5::0\n1::11::3::0\n2::10::4::0\n".as_bytes(),
            RatingsFormat::MovieLens,
            &ParseOptions::default(),
        )
        .unwrap();
        to_implicit(&t).unwrap()
    }

    #[test]
    fn implicit_fixture() {
        let g = fixture();
        assert_eq!((g.n_users(), g.n_items(), g.n_edges()), (2, 2, 3));
        assert_eq!(g.neighbors(Side::User, 0).unwrap(), vec![(0, 5), (1, 3)]);
        assert_eq!(g.neighbors(Side::Item, 0).unwrap(), vec![(0, 5), (1, 4)]);
        assert_eq!(g.user_index("2").unwrap(), 1);
        assert_eq!(g.item_keys()[1], "11");
        assert_eq!(g.rating_levels(), 5);
        assert!(g.has_edge(1, 0) && !g.has_edge(1, 1));
    }

    #[test]
    fn single_record_and_empty_table() {
        let t = RatingsTable::from_records(5, [("a", "x", 3, None)]);
        let g = to_implicit(&t).unwrap();
        assert_eq!((g.n_users(), g.n_items(), g.n_edges()), (1, 1, 1));
        assert!(matches!(
            to_implicit(&RatingsTable::default()),
            Err(GraphError::EmptyInput(_))
        ));
    }

    #[test]
    fn density_examples() {
        let full = InteractionGraph::from_indexed_edges(
            2,
            2,
            1,
            &[(0, 0, 1), (0, 1, 1), (1, 0, 1), (1, 1, 1)],
        )
        .unwrap();
        assert_eq!(full.density().unwrap(), 1.0);
        let g = InteractionGraph::from_indexed_edges(2, 3, 1, &[(0, 0, 1), (1, 1, 1), (1, 2, 1)])
            .unwrap();
        assert_eq!(g.density().unwrap(), 0.5);
        let empty = InteractionGraph::from_indexed_edges(0, 3, 1, &[]).unwrap();
        assert!(matches!(empty.density(), Err(GraphError::Degenerate(_))));
    }

    #[test]
    fn neighbors_bounds_and_isolated() {
        let g = InteractionGraph::from_indexed_edges(3, 2, 1, &[(0, 1, 1)]).unwrap();
        assert!(g.neighbors(Side::User, 2).unwrap().is_empty());
        assert!(matches!(
            g.neighbors(Side::User, 3),
            Err(GraphError::OutOfBounds { index: 3, .. })
        ));
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(InteractionGraph::from_indexed_edges(1, 1, 1, &[(0, 0, 1), (0, 0, 1)]).is_err());
        assert!(InteractionGraph::from_indexed_edges(1, 1, 1, &[(0, 1, 1)]).is_err());
        assert!(InteractionGraph::from_indexed_edges(1, 1, 2, &[(0, 0, 3)]).is_err());
    }

    #[test]
    fn relations_sorted_per_user() {
        let g = InteractionGraph::from_indexed_edges(3, 1, 1, &[(0, 0, 1)])
            .unwrap()
            .with_user_relations(&[(0, 2, 0.5), (0, 1, 1.0)])
            .unwrap();
        let (t, w) = g.user_relations().unwrap().row(0);
        assert_eq!((t, w), (&[1u32, 2][..], &[1.0, 0.5][..]));
        assert!(g.clone().with_user_relations(&[(0, 9, 1.0)]).is_err());
    }
}
