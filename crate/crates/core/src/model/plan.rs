//! Receptive-field bookkeeping for a batched forward pass.
//!
//! For `L` layers the nodes needed at level `l - 1` are the level-`l` nodes
//! plus their sampled neighbours (and user relations). Each level keeps its
//! node set sorted, and every index below is a position within those sets.

use std::sync::Arc;

use crate::graph::{GraphError, InteractionGraph, Side};
use crate::numeric::ops::softmax;
use crate::numeric::Offsets;
use crate::sampler::SampledAdjacency;

/// Gather indices for one side of one layer.
#[derive(Clone, Debug)]
pub(crate) struct SidePlan {
    /// Centre positions in the same side's previous-level set.
    pub self_rows: Vec<usize>,
    /// Distinct neighbours, as positions in the other side's previous-level set.
    pub nbr_rows: Vec<usize>,
    /// Distinct `(neighbour, rating)` pairs: index into `nbr_rows` and rating level (0-based).
    pub pair_nbr: Vec<usize>,
    pub pair_level: Vec<usize>,
    /// Per edge, grouped by centre: pair index and centre position.
    pub edge_pair: Vec<usize>,
    pub edge_center: Vec<usize>,
    pub offsets: Offsets,
    pub has_nbrs: Vec<bool>,
    pub mean_weights: Vec<f64>,
    pub relations: Option<RelationPlan>,
}

/// Softmax-normalised user–user relations for the centres of a user layer.
#[derive(Clone, Debug)]
pub(crate) struct RelationPlan {
    pub rows: Vec<usize>,
    pub weights: Vec<f64>,
    pub offsets: Offsets,
}

/// Node sets and gather indices for a batch.
#[derive(Clone, Debug)]
pub struct BatchPlan {
    pub(crate) users: Vec<Vec<usize>>,
    pub(crate) items: Vec<Vec<usize>>,
    /// `steps[l - 1]` holds layer `l`, indexed `[user side, item side]`.
    pub(crate) steps: Vec<[SidePlan; 2]>,
}

struct Marks {
    seen: Vec<bool>,
}

impl Marks {
    fn new(n: usize) -> Self {
        Marks {
            seen: vec![false; n],
        }
    }

    fn set(&mut self, i: usize) {
        self.seen[i] = true;
    }

    fn sorted(&self) -> Vec<usize> {
        self.seen
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
            .collect()
    }
}

fn sorted_unique(nodes: &[usize], n: usize, side: Side) -> Result<Vec<usize>, GraphError> {
    let mut marks = Marks::new(n);
    for &x in nodes {
        if x >= n {
            return Err(GraphError::OutOfBounds {
                side,
                index: x,
                count: n,
            });
        }
        marks.set(x);
    }
    Ok(marks.sorted())
}

fn positions(set: &[usize], n: usize) -> Vec<usize> {
    let mut pos = vec![usize::MAX; n];
    for (k, &x) in set.iter().enumerate() {
        pos[x] = k;
    }
    pos
}

impl BatchPlan {
    pub fn build(
        graph: &InteractionGraph,
        sampled: &SampledAdjacency,
        layers: usize,
        target_users: &[usize],
        target_items: &[usize],
    ) -> Result<Self, GraphError> {
        let (nu, ni) = (graph.n_users(), graph.n_items());
        let mut users = vec![Vec::new(); layers + 1];
        let mut items = vec![Vec::new(); layers + 1];
        users[layers] = sorted_unique(target_users, nu, Side::User)?;
        items[layers] = sorted_unique(target_items, ni, Side::Item)?;
        let relations = graph.user_relations();

        for l in (1..=layers).rev() {
            let mut um = Marks::new(nu);
            let mut im = Marks::new(ni);
            for &u in &users[l] {
                um.set(u);
                sampled
                    .neighbors(Side::User, u)
                    .0
                    .iter()
                    .for_each(|&i| im.set(i as usize));
                if let Some(rel) = relations {
                    rel.row(u).0.iter().for_each(|&n| um.set(n as usize));
                }
            }
            for &i in &items[l] {
                im.set(i);
                sampled
                    .neighbors(Side::Item, i)
                    .0
                    .iter()
                    .for_each(|&u| um.set(u as usize));
            }
            users[l - 1] = um.sorted();
            items[l - 1] = im.sorted();
        }

        let levels = usize::from(graph.rating_levels());
        let mut steps = Vec::with_capacity(layers);
        for l in 1..=layers {
            let upos = positions(&users[l - 1], nu);
            let ipos = positions(&items[l - 1], ni);
            let user_plan = side_plan(sampled, Side::User, &users[l], &upos, &ipos, levels);
            let item_plan = side_plan(sampled, Side::Item, &items[l], &ipos, &upos, levels);
            let user_plan = match relations {
                Some(rel) => {
                    let mut rows = Vec::new();
                    let mut weights = Vec::new();
                    let mut offsets = vec![0];
                    for &u in &users[l] {
                        let (nbrs, r) = rel.row(u);
                        if !nbrs.is_empty() {
                            rows.extend(nbrs.iter().map(|&n| upos[n as usize]));
                            weights.extend(
                                softmax(r).map_err(|e| GraphError::Invalid(e.to_string()))?,
                            );
                        }
                        offsets.push(rows.len());
                    }
                    SidePlan {
                        relations: Some(RelationPlan {
                            rows,
                            weights,
                            offsets: Arc::from(offsets),
                        }),
                        ..user_plan
                    }
                }
                None => user_plan,
            };
            steps.push([user_plan, item_plan]);
        }
        Ok(BatchPlan {
            users,
            items,
            steps,
        })
    }

    pub fn layers(&self) -> usize {
        self.steps.len()
    }

    /// Nodes whose representation is needed at level `level` (0 = embeddings).
    pub fn nodes(&self, side: Side, level: usize) -> &[usize] {
        match side {
            Side::User => &self.users[level],
            Side::Item => &self.items[level],
        }
    }

    /// Position of `node` in the final-level set of `side`.
    pub fn position(&self, side: Side, node: usize) -> Option<usize> {
        self.nodes(side, self.layers()).binary_search(&node).ok()
    }
}

fn side_plan(
    sampled: &SampledAdjacency,
    side: Side,
    centers: &[usize],
    same_pos: &[usize],
    other_pos: &[usize],
    levels: usize,
) -> SidePlan {
    let self_rows = centers.iter().map(|&c| same_pos[c]).collect();

    let mut nbr_local = vec![usize::MAX; other_pos.len()];
    let mut nbr_rows = Vec::new();
    for &c in centers {
        for &n in sampled.neighbors(side, c).0 {
            let n = n as usize;
            if nbr_local[n] == usize::MAX {
                nbr_local[n] = nbr_rows.len();
                nbr_rows.push(other_pos[n]);
            }
        }
    }

    let mut pair_of = vec![usize::MAX; nbr_rows.len() * levels];
    let (mut pair_nbr, mut pair_level) = (Vec::new(), Vec::new());
    let (mut edge_pair, mut edge_center) = (Vec::new(), Vec::new());
    let mut offsets = Vec::with_capacity(centers.len() + 1);
    offsets.push(0);
    let mut has_nbrs = Vec::with_capacity(centers.len());
    let mut mean_weights = Vec::new();
    for (k, &c) in centers.iter().enumerate() {
        let (nbrs, ratings) = sampled.neighbors(side, c);
        for (&n, &r) in nbrs.iter().zip(ratings) {
            let local = nbr_local[n as usize];
            let level = usize::from(r) - 1;
            let slot = &mut pair_of[local * levels + level];
            if *slot == usize::MAX {
                *slot = pair_nbr.len();
                pair_nbr.push(local);
                pair_level.push(level);
            }
            edge_pair.push(*slot);
            edge_center.push(k);
        }
        let deg = nbrs.len();
        mean_weights.extend(std::iter::repeat_n(1.0 / deg as f64, deg));
        has_nbrs.push(deg > 0);
        offsets.push(edge_pair.len());
    }
    SidePlan {
        self_rows,
        nbr_rows,
        pair_nbr,
        pair_level,
        edge_pair,
        edge_center,
        offsets: Arc::from(offsets),
        has_nbrs,
        mean_weights,
        relations: None,
    }
}
