use rand::Rng as _;

use super::{Matrix, NumericError};
use crate::rng::Rng;

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// A trainable tensor with its gradient accumulator.
///
/// Sparse parameters (embedding tables) track which rows received gradient so
/// the optimizer only steps those rows; dense parameters always step in full.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    pub sparse: bool,
    touched: Vec<usize>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Matrix, sparse: bool) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Parameter {
            name: name.into(),
            value,
            grad,
            sparse,
            touched: Vec::new(),
        }
    }

    pub(crate) fn mark_rows(&mut self, rows: &[usize]) {
        if self.sparse {
            self.touched.extend_from_slice(rows);
        }
    }

    /// Rows that an optimizer step must visit, sorted and deduplicated.
    pub fn active_rows(&self) -> Vec<usize> {
        if self.sparse {
            let mut rows = self.touched.clone();
            rows.sort_unstable();
            rows.dedup();
            rows
        } else {
            (0..self.value.rows()).collect()
        }
    }

    pub fn zero_grad(&mut self) {
        if self.sparse {
            let cols = self.grad.cols();
            for &r in &self.touched {
                self.grad.as_mut_slice()[r * cols..(r + 1) * cols].fill(0.0);
            }
            self.touched.clear();
        } else {
            self.grad.fill(0.0);
        }
    }
}

/// Owns every trainable tensor of a model, addressed by [`ParamId`].
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, param: Parameter) -> ParamId {
        self.params.push(param);
        ParamId(self.params.len() - 1)
    }

    /// Adds a Xavier-uniform initialised parameter, bound `sqrt(6 / (fan_in + fan_out))`
    /// with `fan_out = rows`, `fan_in = cols`.
    pub fn add_xavier(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        sparse: bool,
        rng: &mut Rng,
    ) -> ParamId {
        let bound = xavier_bound(rows, cols);
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        let value = Matrix::from_vec(rows, cols, data).expect("shape");
        self.add(Parameter::new(name, value, sparse))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(Parameter::new(name, Matrix::zeros(rows, cols), false))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].grad
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    /// Redraws every entry, biases included, uniformly from `[-bound, bound]`.
    /// Gradient checks need this: zero biases put ReLU inputs exactly on the
    /// kink.
    pub fn randomize(&mut self, bound: f64, rng: &mut Rng) {
        for p in &mut self.params {
            for v in p.value.as_mut_slice() {
                *v = rng.gen_range(-bound..=bound);
            }
        }
    }

    /// Sum of squared entries over all parameters.
    pub fn sq_norm(&self) -> f64 {
        self.params.iter().map(|p| p.value.sq_norm()).sum()
    }

    /// Overwrites a parameter's value from a snapshot tensor.
    pub fn load(&mut self, name: &str, value: &Matrix) -> Result<(), NumericError> {
        let id = self
            .find(name)
            .ok_or_else(|| NumericError::MissingTensor(name.to_string()))?;
        let p = self.get_mut(id);
        if p.value.shape() != value.shape() {
            return Err(NumericError::Shape {
                op: "load",
                expected: p.value.shape(),
                found: value.shape(),
            });
        }
        p.value = value.clone();
        Ok(())
    }

    /// `(name, value)` pairs in registration order.
    pub fn named_values(&self) -> Vec<(&str, &Matrix)> {
        self.params
            .iter()
            .map(|p| (p.name.as_str(), &p.value))
            .collect()
    }
}

pub fn xavier_bound(fan_out: usize, fan_in: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
