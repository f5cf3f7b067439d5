use std::fmt;
use std::str::FromStr;

use super::{Matrix, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer `{other}` (expected sgd|adam)")),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

/// SGD or Adam over a [`ParamStore`].
///
/// Sparse parameters are stepped only on the rows that received gradient
/// since the last step (lazy Adam: untouched rows keep stale moments). The
/// bias correction uses the global step count.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    moments: Vec<Option<(Matrix, Matrix)>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        if self.moments.len() < store.len() {
            self.moments.resize_with(store.len(), || None);
        }
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (slot, p) in self.moments.iter_mut().zip(store.iter_mut()) {
            let rows = p.active_rows();
            let cols = p.value.cols();
            match self.kind {
                OptimizerKind::Sgd => {
                    for &r in &rows {
                        let g = &p.grad.as_slice()[r * cols..(r + 1) * cols];
                        let v = &mut p.value.as_mut_slice()[r * cols..(r + 1) * cols];
                        for (vi, gi) in v.iter_mut().zip(g) {
                            *vi -= self.lr * gi;
                        }
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v2) = slot.get_or_insert_with(|| {
                        (
                            Matrix::zeros(p.value.rows(), cols),
                            Matrix::zeros(p.value.rows(), cols),
                        )
                    });
                    for &r in &rows {
                        let span = r * cols..(r + 1) * cols;
                        let g = &p.grad.as_slice()[span.clone()];
                        let m = &mut m.as_mut_slice()[span.clone()];
                        let v2 = &mut v2.as_mut_slice()[span.clone()];
                        let val = &mut p.value.as_mut_slice()[span];
                        for k in 0..cols {
                            m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                            v2[k] = self.beta2 * v2[k] + (1.0 - self.beta2) * g[k] * g[k];
                            let mhat = m[k] / bc1;
                            let vhat = v2[k] / bc2;
                            val[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                        }
                    }
                }
            }
            p.zero_grad();
        }
    }
}
