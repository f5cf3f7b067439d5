//! Matrix factorisation trained with the pairwise BPR objective, the
//! baseline the GNN is compared against. It shares the optimizer, the
//! training loop and the evaluation path with the GNN.

use crate::eval::{EmbeddingScorer, Link};
use crate::graph::InteractionGraph;
use crate::model::ModelError;
use crate::numeric::ops::{dot, softplus};
use crate::numeric::{
    grad_check, GradCheckReport, Matrix, NumericError, ParamId, ParamStore, Tape,
};
use crate::par::ExecMode;
use crate::rng::{derive_seed, rng_from};

#[derive(Clone, Debug)]
pub struct BprModel {
    dim: usize,
    store: ParamStore,
    users: ParamId,
    items: ParamId,
    mode: ExecMode,
}

impl BprModel {
    pub fn new(graph: &InteractionGraph, dim: usize, seed: u64) -> Result<Self, ModelError> {
        Self::with_counts(graph.n_users(), graph.n_items(), dim, seed)
    }

    pub fn with_counts(
        n_users: usize,
        n_items: usize,
        dim: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if dim == 0 || n_users == 0 || n_items == 0 {
            return Err(ModelError::Config(
                "BPR needs dim, users and items all at least 1".into(),
            ));
        }
        let mut rng = rng_from(derive_seed(seed, "init"));
        let mut store = ParamStore::new();
        let users = store.add_xavier("bpr.user", n_users, dim, true, &mut rng);
        let items = store.add_xavier("bpr.item", n_items, dim, true, &mut rng);
        Ok(BprModel {
            dim,
            store,
            users,
            items,
            mode: ExecMode::default(),
        })
    }

    /// Model over the given factor matrices.
    pub fn from_factors(users: Matrix, items: Matrix) -> Result<Self, ModelError> {
        if users.cols() != items.cols() || users.cols() == 0 {
            return Err(NumericError::Shape {
                op: "bpr factors",
                expected: (items.rows(), users.cols()),
                found: items.shape(),
            }
            .into());
        }
        let mut m = Self::with_counts(users.rows(), items.rows(), users.cols(), 0)?;
        m.store.value_mut(m.users).clone_from(&users);
        m.store.value_mut(m.items).clone_from(&items);
        Ok(m)
    }

    pub fn with_exec_mode(mut self, mode: ExecMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn user_factors(&self) -> &Matrix {
        self.store.value(self.users)
    }

    pub fn item_factors(&self) -> &Matrix {
        self.store.value(self.items)
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn check(&self, user: usize, item: usize) -> Result<(), ModelError> {
        for (index, len) in [
            (user, self.user_factors().rows()),
            (item, self.item_factors().rows()),
        ] {
            if index >= len {
                return Err(NumericError::OutOfBounds { index, len }.into());
            }
        }
        Ok(())
    }

    /// `u · i`, unbounded.
    pub fn bpr_score(&self, user: usize, item: usize) -> Result<f64, ModelError> {
        self.check(user, item)?;
        Ok(dot(
            self.user_factors().row(user),
            self.item_factors().row(item),
        ))
    }

    /// `-ln σ(x_ui - x_uj) + λ/2 (‖u‖² + ‖i‖² + ‖j‖²)`.
    pub fn bpr_loss(
        &self,
        user: usize,
        pos: usize,
        neg: usize,
        lambda: f64,
    ) -> Result<f64, ModelError> {
        let gap = self.bpr_score(user, pos)? - self.bpr_score(user, neg)?;
        let sq = |m: &Matrix, r: usize| dot(m.row(r), m.row(r));
        let (u, v) = (self.user_factors(), self.item_factors());
        Ok(softplus(-gap) + 0.5 * lambda * (sq(u, user) + sq(v, pos) + sq(v, neg)))
    }

    /// Summed [`BprModel::bpr_loss`] over `(user, positive, negative)`
    /// triplets; with `accumulate` the gradient is added to the parameters.
    pub fn batch_objective(
        &mut self,
        triplets: &[(usize, usize, usize)],
        lambda: f64,
        accumulate: bool,
    ) -> Result<f64, ModelError> {
        let mut tape = Tape::new(self.mode);
        let u = tape.gather_param(
            &self.store,
            self.users,
            triplets.iter().map(|t| t.0).collect(),
        )?;
        let i = tape.gather_param(
            &self.store,
            self.items,
            triplets.iter().map(|t| t.1).collect(),
        )?;
        let j = tape.gather_param(
            &self.store,
            self.items,
            triplets.iter().map(|t| t.2).collect(),
        )?;
        let xi = tape.row_dot(u, i)?;
        let xj = tape.row_dot(u, j)?;
        let gap = tape.sub(xi, xj)?;
        let mut total = tape.neg_log_sigmoid(gap);
        if lambda != 0.0 {
            let (su, si, sj) = (
                tape.sum_squares(u),
                tape.sum_squares(i),
                tape.sum_squares(j),
            );
            let s = tape.add(su, si)?;
            let s = tape.add(s, sj)?;
            let reg = tape.scale(s, 0.5 * lambda);
            total = tape.add(total, reg)?;
        }
        if accumulate {
            tape.backward(total, &mut self.store)?;
        }
        Ok(tape.scalar(total))
    }

    /// Central-difference check of [`BprModel::batch_objective`]'s gradient.
    pub fn check_gradients(
        &mut self,
        triplets: &[(usize, usize, usize)],
        lambda: f64,
        epsilon: f64,
    ) -> Result<GradCheckReport, ModelError> {
        let mut store = std::mem::take(&mut self.store);
        let report = grad_check(&mut store, epsilon, |s, acc| {
            std::mem::swap(&mut self.store, s);
            let value = self.batch_objective(triplets, lambda, acc);
            std::mem::swap(&mut self.store, s);
            value.map_err(ModelError::into_numeric)
        });
        self.store = store;
        Ok(report?)
    }

    pub fn scorer(&self) -> Result<EmbeddingScorer, ModelError> {
        Ok(EmbeddingScorer::new(
            self.user_factors().clone(),
            self.item_factors().clone(),
            Link::Dot,
        )?)
    }
}
