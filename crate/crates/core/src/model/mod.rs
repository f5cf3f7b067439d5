//! The graph neural network recommender.
//!
//! Every node starts from a row of an embedding table. Each propagation layer
//! builds, for every sampled neighbour, an interaction vector from the
//! neighbour's representation and the embedding of the rating on the edge,
//! aggregates those vectors (mean, learned attention or max-pooling), and
//! combines the result with a self message through a LeakyReLU. Users and
//! items are updated symmetrically. Scores come from a sigmoid of the dot
//! product of the final representations, or optionally an MLP head.
//!
//! Two evaluation paths share the same kernels: the single-vector functions
//! in [`layers`] (readable, used as reference) and the batched tape pass in
//! `forward`, which deduplicates work over `(neighbour, rating)` pairs.

mod forward;
pub mod layers;
mod plan;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::eval::{EmbeddingScorer, Link};
use crate::graph::{GraphError, InteractionGraph, Side};
use crate::numeric::{
    grad_check, GradCheckReport, Matrix, NumericError, ParamId, ParamStore, Tape,
};
use crate::par::ExecMode;
use crate::rng::{derive_seed, rng_from};
use crate::sampler::{ImportanceConfig, SampledAdjacency, SamplingMode};

pub use layers::{
    aggregate_attention, aggregate_mean, aggregate_pooling, aggregate_user_neighbors,
    attention_score, attention_weights, fuse_interaction, predict, Affine, AttentionNet, FusionNet,
    Message, MlpHead,
};
pub use plan::BatchPlan;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

impl ModelError {
    /// Folds into a numeric error, for objectives driven by [`grad_check`].
    pub(crate) fn into_numeric(self) -> NumericError {
        match self {
            ModelError::Numeric(n) => n,
            other => NumericError::InvalidArgument(other.to_string()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Aggregator {
    Mean,
    #[default]
    Attention,
    Pooling,
}

impl FromStr for Aggregator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Aggregator::Mean),
            "attention" => Ok(Aggregator::Attention),
            "pooling" => Ok(Aggregator::Pooling),
            other => Err(format!(
                "unknown aggregator `{other}` (expected mean|attention|pooling)"
            )),
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregator::Mean => "mean",
            Aggregator::Attention => "attention",
            Aggregator::Pooling => "pooling",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Head {
    /// `σ(u · i)`
    #[default]
    Dot,
    /// `σ(w2 · ReLU(W1 [u ⊕ i] + b1) + b2)`
    Mlp,
}

impl FromStr for Head {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dot" => Ok(Head::Dot),
            "mlp" => Ok(Head::Mlp),
            other => Err(format!("unknown head `{other}` (expected dot|mlp)")),
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Head::Dot => "dot",
            Head::Mlp => "mlp",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    /// Propagation layers; 0 degenerates to plain matrix factorisation.
    pub layers: usize,
    pub aggregator: Aggregator,
    pub head: Head,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            layers: 2,
            aggregator: Aggregator::Attention,
            head: Head::Dot,
            leaky_slope: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.dim == 0 {
            return Err(ModelError::Config("model.dim must be at least 1".into()));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(ModelError::Config(
                "model.leaky_slope must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingKind {
    User,
    Item,
    Rating,
}

/// Parameters owned by one receiving side (shared across layers).
#[derive(Clone, Copy, Debug)]
struct SideParams {
    fuse_w1: ParamId,
    fuse_b1: ParamId,
    fuse_w2: ParamId,
    fuse_b2: ParamId,
    attn: Option<[ParamId; 4]>,
    pool: Option<[ParamId; 2]>,
}

/// Per-layer transforms for one side.
#[derive(Clone, Copy, Debug)]
struct LayerParams {
    agg_w: ParamId,
    agg_b: ParamId,
    self_w: ParamId,
    self_b: ParamId,
}

#[derive(Clone, Debug)]
struct ParamIds {
    user_emb: ParamId,
    item_emb: ParamId,
    rating_emb: ParamId,
    /// Indexed by receiving side (`side_index`); empty when `layers == 0`.
    sides: Vec<SideParams>,
    layers: Vec<[LayerParams; 2]>,
    head: Option<[ParamId; 4]>,
}

fn side_index(side: Side) -> usize {
    match side {
        Side::User => 0,
        Side::Item => 1,
    }
}

fn side_name(side: Side) -> &'static str {
    match side {
        Side::User => "user",
        Side::Item => "item",
    }
}

/// Trainable GNN with its parameters and the sampler that feeds it.
#[derive(Clone, Debug)]
pub struct GnnModel {
    config: ModelConfig,
    sampler: ImportanceConfig,
    n_users: usize,
    n_items: usize,
    n_levels: usize,
    store: ParamStore,
    ids: ParamIds,
    mode: ExecMode,
    cached: Option<SampledAdjacency>,
}

impl GnnModel {
    /// Builds a model for `graph`'s node counts with Xavier-initialised
    /// weights and zero biases, drawn from `seed`.
    pub fn new(
        graph: &InteractionGraph,
        config: ModelConfig,
        sampler: ImportanceConfig,
        seed: u64,
    ) -> Result<Self, ModelError> {
        Self::with_counts(
            graph.n_users(),
            graph.n_items(),
            usize::from(graph.rating_levels()),
            config,
            sampler,
            seed,
        )
    }

    pub fn with_counts(
        n_users: usize,
        n_items: usize,
        n_levels: usize,
        config: ModelConfig,
        sampler: ImportanceConfig,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        sampler.validate()?;
        if n_users == 0 || n_items == 0 || n_levels == 0 {
            return Err(ModelError::Config(
                "model needs at least one user, item and rating level".into(),
            ));
        }
        let d = config.dim;
        let mut rng = rng_from(derive_seed(seed, "init"));
        let mut store = ParamStore::new();
        let user_emb = store.add_xavier("emb.user", n_users, d, true, &mut rng);
        let item_emb = store.add_xavier("emb.item", n_items, d, true, &mut rng);
        let rating_emb = store.add_xavier("emb.rating", n_levels, d, false, &mut rng);

        let mut sides = Vec::new();
        if config.layers > 0 {
            for side in [Side::User, Side::Item] {
                let s = side_name(side);
                let fuse_w1 = store.add_xavier(format!("fuse.{s}.w1"), d, 2 * d, false, &mut rng);
                let fuse_b1 = store.add_zeros(format!("fuse.{s}.b1"), 1, d);
                let fuse_w2 = store.add_xavier(format!("fuse.{s}.w2"), d, d, false, &mut rng);
                let fuse_b2 = store.add_zeros(format!("fuse.{s}.b2"), 1, d);
                let attn = (config.aggregator == Aggregator::Attention).then(|| {
                    [
                        store.add_xavier(format!("attn.{s}.w1"), d, 2 * d, false, &mut rng),
                        store.add_zeros(format!("attn.{s}.b1"), 1, d),
                        store.add_xavier(format!("attn.{s}.w2"), 1, d, false, &mut rng),
                        store.add_zeros(format!("attn.{s}.b2"), 1, 1),
                    ]
                });
                let pool = (config.aggregator == Aggregator::Pooling).then(|| {
                    [
                        store.add_xavier(format!("pool.{s}.w"), d, d, false, &mut rng),
                        store.add_zeros(format!("pool.{s}.b"), 1, d),
                    ]
                });
                sides.push(SideParams {
                    fuse_w1,
                    fuse_b1,
                    fuse_w2,
                    fuse_b2,
                    attn,
                    pool,
                });
            }
        }
        let mut layers = Vec::with_capacity(config.layers);
        for l in 1..=config.layers {
            let mut make = |side: Side| {
                let s = side_name(side);
                LayerParams {
                    agg_w: store.add_xavier(format!("layer{l}.{s}.agg.w"), d, d, false, &mut rng),
                    agg_b: store.add_zeros(format!("layer{l}.{s}.agg.b"), 1, d),
                    self_w: store.add_xavier(format!("layer{l}.{s}.self.w"), d, d, false, &mut rng),
                    self_b: store.add_zeros(format!("layer{l}.{s}.self.b"), 1, d),
                }
            };
            layers.push([make(Side::User), make(Side::Item)]);
        }
        let head = (config.head == Head::Mlp).then(|| {
            [
                store.add_xavier("head.w1", d, 2 * d, false, &mut rng),
                store.add_zeros("head.b1", 1, d),
                store.add_xavier("head.w2", 1, d, false, &mut rng),
                store.add_zeros("head.b2", 1, 1),
            ]
        });
        Ok(GnnModel {
            config,
            sampler,
            n_users,
            n_items,
            n_levels,
            store,
            ids: ParamIds {
                user_emb,
                item_emb,
                rating_emb,
                sides,
                layers,
                head,
            },
            mode: ExecMode::default(),
            cached: None,
        })
    }

    pub fn with_exec_mode(mut self, mode: ExecMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn exec_mode(&self) -> ExecMode {
        self.mode
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn sampler(&self) -> &ImportanceConfig {
        &self.sampler
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        (self.n_users, self.n_items, self.n_levels)
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Row `index` of the user, item or rating-level table.
    pub fn embed_lookup(&self, kind: EmbeddingKind, index: usize) -> Result<Vec<f64>, ModelError> {
        let id = match kind {
            EmbeddingKind::User => self.ids.user_emb,
            EmbeddingKind::Item => self.ids.item_emb,
            EmbeddingKind::Rating => self.ids.rating_emb,
        };
        let table = self.store.value(id);
        if index >= table.rows() {
            return Err(NumericError::OutOfBounds {
                index,
                len: table.rows(),
            }
            .into());
        }
        Ok(table.row(index).to_vec())
    }

    pub fn embedding_id(&self, kind: EmbeddingKind) -> ParamId {
        match kind {
            EmbeddingKind::User => self.ids.user_emb,
            EmbeddingKind::Item => self.ids.item_emb,
            EmbeddingKind::Rating => self.ids.rating_emb,
        }
    }

    fn affine(&self, w: ParamId, b: ParamId) -> Affine<'_> {
        Affine {
            w: self.store.value(w),
            b: self.store.value(b).row(0),
        }
    }

    fn no_layers(&self) -> ModelError {
        ModelError::Config("model has no propagation layers".into())
    }

    /// The interaction network used by nodes on `side` to read their neighbours.
    pub fn fusion(&self, side: Side) -> Result<FusionNet<'_>, ModelError> {
        let p = self
            .ids
            .sides
            .get(side_index(side))
            .ok_or_else(|| self.no_layers())?;
        Ok(FusionNet {
            hidden: self.affine(p.fuse_w1, p.fuse_b1),
            output: self.affine(p.fuse_w2, p.fuse_b2),
        })
    }

    pub fn attention(&self, side: Side) -> Option<AttentionNet<'_>> {
        let [w1, b1, w2, b2] = self.ids.sides.get(side_index(side))?.attn?;
        Some(AttentionNet {
            hidden: self.affine(w1, b1),
            out_w: self.store.value(w2).row(0),
            out_b: self.store.value(b2).get(0, 0),
        })
    }

    pub fn pool(&self, side: Side) -> Option<Affine<'_>> {
        let [w, b] = self.ids.sides.get(side_index(side))?.pool?;
        Some(self.affine(w, b))
    }

    /// `(aggregate transform, self transform)` of layer `layer` (1-based).
    pub fn layer_transforms(
        &self,
        layer: usize,
        side: Side,
    ) -> Result<(Affine<'_>, Affine<'_>), ModelError> {
        let p = layer
            .checked_sub(1)
            .and_then(|l| self.ids.layers.get(l))
            .ok_or_else(|| ModelError::Config(format!("no layer {layer}")))?[side_index(side)];
        Ok((
            self.affine(p.agg_w, p.agg_b),
            self.affine(p.self_w, p.self_b),
        ))
    }

    pub fn head(&self) -> Option<MlpHead<'_>> {
        let [w1, b1, w2, b2] = self.ids.head?;
        Some(MlpHead {
            hidden: self.affine(w1, b1),
            out_w: self.store.value(w2).row(0),
            out_b: self.store.value(b2).get(0, 0),
        })
    }

    /// Sampled neighbourhoods for a training step. Top-k sampling is fixed
    /// for a given graph and cached; proportional sampling is redrawn for
    /// every `draw`.
    pub fn sampled_neighbors(
        &mut self,
        graph: &InteractionGraph,
        draw: u64,
    ) -> Result<SampledAdjacency, ModelError> {
        self.check_graph(graph)?;
        if self.sampler.mode == SamplingMode::TopK {
            if self.cached.is_none() {
                self.cached = Some(SampledAdjacency::build(graph, &self.sampler, 0, self.mode)?);
            }
            return Ok(self.cached.clone().expect("cached"));
        }
        Ok(SampledAdjacency::build(
            graph,
            &self.sampler,
            draw,
            self.mode,
        )?)
    }

    /// Forgets cached neighbourhoods, e.g. before training on another graph.
    pub fn clear_cache(&mut self) {
        self.cached = None;
    }

    fn check_graph(&self, graph: &InteractionGraph) -> Result<(), ModelError> {
        if graph.n_users() != self.n_users
            || graph.n_items() != self.n_items
            || usize::from(graph.rating_levels()) != self.n_levels
        {
            return Err(ModelError::Config(format!(
                "graph has {} users, {} items, {} levels but the model was built for {}, {}, {}",
                graph.n_users(),
                graph.n_items(),
                graph.rating_levels(),
                self.n_users,
                self.n_items,
                self.n_levels
            )));
        }
        Ok(())
    }

    /// Final representations of every user and item over `sampled`.
    pub fn propagate(
        &self,
        graph: &InteractionGraph,
        sampled: &SampledAdjacency,
    ) -> Result<(Matrix, Matrix), ModelError> {
        self.check_graph(graph)?;
        let users: Vec<usize> = (0..self.n_users).collect();
        let items: Vec<usize> = (0..self.n_items).collect();
        let plan = BatchPlan::build(graph, sampled, self.config.layers, &users, &items)?;
        let mut tape = Tape::new(self.mode);
        let out = forward::forward(self, &mut tape, &plan)?;
        Ok((tape.value(out.users).clone(), tape.value(out.items).clone()))
    }

    /// Final representations using the model's own (top-k or first-draw) sampling.
    pub fn final_representations(
        &self,
        graph: &InteractionGraph,
    ) -> Result<(Matrix, Matrix), ModelError> {
        self.check_graph(graph)?;
        let sampled = match &self.cached {
            Some(s) => s.clone(),
            None => SampledAdjacency::build(graph, &self.sampler, 0, self.mode)?,
        };
        self.propagate(graph, &sampled)
    }

    /// A frozen scorer over the final representations.
    pub fn scorer(&self, graph: &InteractionGraph) -> Result<EmbeddingScorer, ModelError> {
        let (users, items) = self.final_representations(graph)?;
        let link = match self.head() {
            None => Link::Dot,
            Some(h) => Link::Mlp {
                w1: h.hidden.w.clone(),
                b1: h.hidden.b.to_vec(),
                w2: h.out_w.to_vec(),
                b2: h.out_b,
            },
        };
        Ok(EmbeddingScorer::new(users, items, link)?)
    }

    /// Objective over `(user, item, label)` pairs: summed binary cross-entropy
    /// plus `λ/2` times the squared norm of every embedding row in the batch's
    /// receptive field and of every dense weight. When `accumulate` is set
    /// the gradient is added into the parameter accumulators.
    pub fn batch_objective(
        &mut self,
        graph: &InteractionGraph,
        sampled: &SampledAdjacency,
        pairs: &[(usize, usize, bool)],
        lambda: f64,
        accumulate: bool,
    ) -> Result<f64, ModelError> {
        self.check_graph(graph)?;
        let mut tape = Tape::new(self.mode);
        let total = forward::objective(self, &mut tape, graph, sampled, pairs, lambda)?;
        if accumulate {
            tape.backward(total, &mut self.store)?;
        }
        Ok(tape.scalar(total))
    }

    /// Central-difference check of [`GnnModel::batch_objective`]'s gradient
    /// over every parameter coordinate.
    pub fn check_gradients(
        &mut self,
        graph: &InteractionGraph,
        sampled: &SampledAdjacency,
        pairs: &[(usize, usize, bool)],
        lambda: f64,
        epsilon: f64,
    ) -> Result<GradCheckReport, ModelError> {
        let mut store = std::mem::take(&mut self.store);
        let report = grad_check(&mut store, epsilon, |s, acc| {
            std::mem::swap(&mut self.store, s);
            let value = self.batch_objective(graph, sampled, pairs, lambda, acc);
            std::mem::swap(&mut self.store, s);
            value.map_err(ModelError::into_numeric)
        });
        self.store = store;
        Ok(report?)
    }

    /// Restores a model from named tensors; every parameter must be present.
    pub fn load_params(&mut self, tensors: &[(String, Matrix)]) -> Result<(), ModelError> {
        let ids: Vec<ParamId> = self.store.ids().collect();
        for id in ids {
            let name = self.store.get(id).name.clone();
            let value = tensors
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, m)| m)
                .ok_or_else(|| ModelError::Snapshot(format!("missing tensor `{name}`")))?;
            self.store.load(&name, value)?;
        }
        self.cached = None;
        Ok(())
    }
}

#[cfg(test)]
mod tests;
