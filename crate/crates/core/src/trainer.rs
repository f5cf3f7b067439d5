//! Negative sampling, the training loop and loss-curve recording.
//!
//! Both models train on the same schedule: positive edges in a seeded
//! shuffled order, fixed-size batches, negatives drawn uniformly from items
//! the user has not interacted with, one optimizer step per batch.

use std::io::Write;
use std::time::Instant;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng as _;
use thiserror::Error;

use crate::bpr::BprModel;
use crate::eval::EmbeddingScorer;
use crate::graph::{InteractionGraph, Side};
use crate::model::{GnnModel, ModelError};
use crate::numeric::{Optimizer, OptimizerKind, ParamStore};
use crate::rng::{derive_index, derive_seed, rng_from, Rng};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("user {user} has {available} unseen items, {requested} negatives requested")]
    NotEnoughNegatives {
        user: usize,
        requested: usize,
        available: usize,
    },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 0.001,
            lambda: 1e-4,
            epochs: 30,
            batch_size: 1024,
            negatives_per_positive: 1,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad("lambda must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.negatives_per_positive == 0 {
            return bad("negatives_per_positive must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    /// 1-based.
    pub epoch: usize,
    /// Objective summed over a positive edge and its negatives, averaged over positive edges.
    pub mean_train_loss: f64,
    pub wall_time: f64,
}

/// One positive edge with its sampled negatives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingSample {
    pub user: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

/// A model that can be trained by [`train_epoch`] and evaluated.
pub trait Recommender {
    fn kind(&self) -> &'static str;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Adds the gradient of the batch objective to the accumulators and
    /// returns the objective. `step` identifies the batch across the run.
    fn accumulate(
        &mut self,
        graph: &InteractionGraph,
        batch: &[TrainingSample],
        lambda: f64,
        step: u64,
    ) -> Result<f64, ModelError>;
    fn scorer(&self, graph: &InteractionGraph) -> Result<EmbeddingScorer, ModelError>;
}

impl Recommender for GnnModel {
    fn kind(&self) -> &'static str {
        "gnn"
    }

    fn params(&self) -> &ParamStore {
        GnnModel::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        GnnModel::params_mut(self)
    }

    fn accumulate(
        &mut self,
        graph: &InteractionGraph,
        batch: &[TrainingSample],
        lambda: f64,
        step: u64,
    ) -> Result<f64, ModelError> {
        let sampled = self.sampled_neighbors(graph, step)?;
        let mut pairs = Vec::with_capacity(batch.len() * 2);
        for s in batch {
            pairs.push((s.user, s.positive, true));
            pairs.extend(s.negatives.iter().map(|&j| (s.user, j, false)));
        }
        self.batch_objective(graph, &sampled, &pairs, lambda, true)
    }

    fn scorer(&self, graph: &InteractionGraph) -> Result<EmbeddingScorer, ModelError> {
        GnnModel::scorer(self, graph)
    }
}

impl Recommender for BprModel {
    fn kind(&self) -> &'static str {
        "bpr"
    }

    fn params(&self) -> &ParamStore {
        BprModel::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        BprModel::params_mut(self)
    }

    fn accumulate(
        &mut self,
        _graph: &InteractionGraph,
        batch: &[TrainingSample],
        lambda: f64,
        _step: u64,
    ) -> Result<f64, ModelError> {
        let triplets: Vec<(usize, usize, usize)> = batch
            .iter()
            .flat_map(|s| s.negatives.iter().map(move |&j| (s.user, s.positive, j)))
            .collect();
        self.batch_objective(&triplets, lambda, true)
    }

    fn scorer(&self, _graph: &InteractionGraph) -> Result<EmbeddingScorer, ModelError> {
        BprModel::scorer(self)
    }
}

/// `n` distinct items `user` has not interacted with, uniformly at random.
pub fn sample_negatives(
    graph: &InteractionGraph,
    user: usize,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>, TrainError> {
    graph
        .check_index(Side::User, user)
        .map_err(ModelError::from)?;
    let ni = graph.n_items();
    let seen = graph.neighbor_slices(Side::User, user).0;
    let available = ni - seen.len();
    if n > available || available == 0 {
        return Err(TrainError::NotEnoughNegatives {
            user,
            requested: n,
            available,
        });
    }
    let is_seen = |i: usize| seen.binary_search(&(i as u32)).is_ok();
    if 2 * seen.len() <= ni && n <= available / 2 {
        let mut out: Vec<usize> = Vec::with_capacity(n);
        while out.len() < n {
            let j = rng.gen_range(0..ni);
            if !is_seen(j) && !out.contains(&j) {
                out.push(j);
            }
        }
        Ok(out)
    } else {
        let complement: Vec<usize> = (0..ni).filter(|&i| !is_seen(i)).collect();
        Ok(sample(rng, complement.len(), n)
            .into_iter()
            .map(|k| complement[k])
            .collect())
    }
}

/// One pass over the training edges.
pub fn train_epoch<M: Recommender + ?Sized>(
    graph: &InteractionGraph,
    model: &mut M,
    optimizer: &mut Optimizer,
    config: &TrainingConfig,
    epoch: usize,
    rng: &mut Rng,
) -> Result<LossRecord, TrainError> {
    config.validate()?;
    if graph.n_edges() == 0 {
        return Err(TrainError::Config("training graph has no edges".into()));
    }
    let start = Instant::now();
    let mut edges: Vec<(usize, usize)> = graph
        .edges()
        .map(|e| (e.user as usize, e.item as usize))
        .collect();
    edges.shuffle(rng);
    let mut total = 0.0;
    model.params_mut().zero_grad();
    for (b, chunk) in edges.chunks(config.batch_size).enumerate() {
        let batch = chunk
            .iter()
            .map(|&(u, i)| {
                Ok(TrainingSample {
                    user: u,
                    positive: i,
                    negatives: sample_negatives(graph, u, config.negatives_per_positive, rng)?,
                })
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        let step = (epoch as u64) << 32 | b as u64;
        let loss = model.accumulate(graph, &batch, config.lambda, step)?;
        if !loss.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                batch: b,
                loss,
            });
        }
        optimizer.step(model.params_mut());
        total += loss;
    }
    Ok(LossRecord {
        epoch,
        mean_train_loss: total / edges.len() as f64,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Trains for `config.epochs` epochs; epoch `e` draws from its own stream of
/// the `negatives` seed so runs are reproducible.
pub fn fit<M: Recommender + ?Sized>(
    graph: &InteractionGraph,
    model: &mut M,
    config: &TrainingConfig,
) -> Result<Vec<LossRecord>, TrainError> {
    config.validate()?;
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    let stream = derive_seed(config.seed, "negatives");
    (1..=config.epochs)
        .map(|epoch| {
            let mut rng = rng_from(derive_index(stream, epoch as u64));
            train_epoch(graph, model, &mut optimizer, config, epoch, &mut rng)
        })
        .collect()
}

/// Writes `epoch,mean_loss,wall_time_s`.
pub fn write_loss_csv<W: Write>(out: &mut W, records: &[LossRecord]) -> std::io::Result<()> {
    writeln!(out, "epoch,mean_loss,wall_time_s")?;
    for r in records {
        writeln!(out, "{},{},{:.6}", r.epoch, r.mean_train_loss, r.wall_time)?;
    }
    Ok(())
}
