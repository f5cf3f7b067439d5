//! Importance-based neighbour sampling.
//!
//! Each neighbour `n` of a centre node `c` gets a tightness weight
//! `w(c, n) = rating(c, n) / degree(n)`: a strong rating towards a selective
//! neighbour counts more than the same rating towards a hub. Scores are the
//! weights normalised over the neighbourhood, and sampling keeps a bounded
//! number of high-score neighbours, either deterministically (top-k) or by
//! weighted draws without replacement.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::graph::{GraphError, InteractionGraph, Side};
use crate::par::{map_range, ExecMode};
use crate::rng::{derive_index, rng_from, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SamplingMode {
    /// The `S` highest-score neighbours, ties broken by ascending index.
    #[default]
    TopK,
    /// `S` draws without replacement with probability proportional to score.
    Proportional,
}

impl FromStr for SamplingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "topk" | "top-k" => Ok(SamplingMode::TopK),
            "proportional" => Ok(SamplingMode::Proportional),
            other => Err(format!(
                "unknown sampler mode `{other}` (expected topk|proportional)"
            )),
        }
    }
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingMode::TopK => "topk",
            SamplingMode::Proportional => "proportional",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImportanceConfig {
    pub sample_size: usize,
    pub mode: SamplingMode,
    pub seed: u64,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        ImportanceConfig {
            sample_size: 10,
            mode: SamplingMode::TopK,
            seed: 0,
        }
    }
}

impl ImportanceConfig {
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.sample_size == 0 {
            return Err(GraphError::Invalid(
                "sampler.size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Normalised importance of every neighbour of `center`, in neighbour order.
pub fn importance_scores(
    graph: &InteractionGraph,
    side: Side,
    center: usize,
) -> Result<Vec<(usize, f64)>, GraphError> {
    graph.check_index(side, center)?;
    Ok(scores_unchecked(graph, side, center))
}

fn scores_unchecked(graph: &InteractionGraph, side: Side, center: usize) -> Vec<(usize, f64)> {
    let (nbrs, ratings) = graph.neighbor_slices(side, center);
    let weights: Vec<f64> = nbrs
        .iter()
        .zip(ratings)
        .map(|(&n, &r)| f64::from(r) / graph.degree(side.other(), n as usize) as f64)
        .collect();
    let total: f64 = weights.iter().sum();
    nbrs.iter()
        .zip(weights)
        .map(|(&n, w)| (n as usize, w / total))
        .collect()
}

/// Picks at most `config.sample_size` neighbours of `center`, returned as
/// `(neighbour, rating)` in ascending neighbour order. `rng` is only consumed
/// in proportional mode.
pub fn sample_neighbors(
    graph: &InteractionGraph,
    side: Side,
    center: usize,
    config: &ImportanceConfig,
    rng: &mut Rng,
) -> Result<Vec<(usize, u8)>, GraphError> {
    config.validate()?;
    graph.check_index(side, center)?;
    Ok(sample_unchecked(graph, side, center, config, rng))
}

fn sample_unchecked(
    graph: &InteractionGraph,
    side: Side,
    center: usize,
    config: &ImportanceConfig,
    rng: &mut Rng,
) -> Vec<(usize, u8)> {
    let (nbrs, ratings) = graph.neighbor_slices(side, center);
    let all = || {
        nbrs.iter()
            .zip(ratings)
            .map(|(&n, &r)| (n as usize, r))
            .collect()
    };
    if nbrs.len() <= config.sample_size {
        return all();
    }
    let scores = scores_unchecked(graph, side, center);
    let mut chosen: Vec<usize> = match config.mode {
        SamplingMode::TopK => {
            let mut order: Vec<usize> = (0..nbrs.len()).collect();
            order.sort_by(|&a, &b| {
                scores[b]
                    .1
                    .partial_cmp(&scores[a].1)
                    .expect("finite scores")
                    .then(a.cmp(&b))
            });
            order.truncate(config.sample_size);
            order
        }
        SamplingMode::Proportional => {
            let positions: Vec<usize> = (0..nbrs.len()).collect();
            positions
                .choose_multiple_weighted(rng, config.sample_size, |&p| scores[p].1)
                .expect("positive finite weights")
                .copied()
                .collect()
        }
    };
    chosen.sort_unstable();
    chosen
        .into_iter()
        .map(|p| (nbrs[p] as usize, ratings[p]))
        .collect()
}

/// Sampled neighbourhoods for every node of both sides, stored as CSR.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampledAdjacency {
    user: SampledSide,
    item: SampledSide,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct SampledSide {
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    ratings: Vec<u8>,
}

impl SampledSide {
    fn from_lists(lists: Vec<Vec<(usize, u8)>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut neighbors = Vec::new();
        let mut ratings = Vec::new();
        for l in lists {
            for (n, r) in l {
                neighbors.push(n as u32);
                ratings.push(r);
            }
            offsets.push(neighbors.len());
        }
        SampledSide {
            offsets,
            neighbors,
            ratings,
        }
    }
}

impl SampledAdjacency {
    /// Samples every node. `draw` selects an independent resample in
    /// proportional mode (each node gets its own derived RNG stream, so the
    /// result does not depend on evaluation order); top-k ignores it.
    pub fn build(
        graph: &InteractionGraph,
        config: &ImportanceConfig,
        draw: u64,
        mode: ExecMode,
    ) -> Result<Self, GraphError> {
        config.validate()?;
        let draw_seed = derive_index(config.seed, draw);
        let side = |side: Side, salt: u64| {
            SampledSide::from_lists(map_range(mode, graph.count(side), |c| {
                let mut rng = rng_from(derive_index(draw_seed, (c as u64) << 1 | salt));
                sample_unchecked(graph, side, c, config, &mut rng)
            }))
        };
        Ok(SampledAdjacency {
            user: side(Side::User, 0),
            item: side(Side::Item, 1),
        })
    }

    /// The full neighbourhoods, unsampled.
    pub fn full(graph: &InteractionGraph) -> Self {
        let side = |side: Side| {
            SampledSide::from_lists(
                (0..graph.count(side))
                    .map(|c| graph.neighbors(side, c).expect("in range"))
                    .collect(),
            )
        };
        SampledAdjacency {
            user: side(Side::User),
            item: side(Side::Item),
        }
    }

    pub fn neighbors(&self, side: Side, node: usize) -> (&[u32], &[u8]) {
        let s = match side {
            Side::User => &self.user,
            Side::Item => &self.item,
        };
        let span = s.offsets[node]..s.offsets[node + 1];
        (&s.neighbors[span.clone()], &s.ratings[span])
    }
}
