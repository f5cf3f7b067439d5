//! A minimal reverse-mode tape over row-batched matrices.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and [`Tape::backward`] simply walks it in reverse. Each
//! op stores what its backward rule needs. Parameter leaves write their
//! gradients straight into the owning [`ParamStore`]; nothing else mutates
//! the store, which keeps accumulation single-writer.

use std::ops::Range;
use std::sync::Arc;

use super::ops::{
    axpy, compensated_sum, dot, leaky_relu_scalar, relu_scalar, sigmoid_scalar, softmax_into,
    softplus,
};
use super::{Matrix, NumericError, ParamId, ParamStore};
use crate::par::{for_each_row, ExecMode};

/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Segment boundaries: segment `s` spans rows `offsets[s]..offsets[s + 1]`.
pub type Offsets = Arc<[usize]>;

enum Op {
    Constant,
    Param(ParamId),
    GatherParam {
        id: ParamId,
        rows: Vec<usize>,
    },
    Gather {
        src: Var,
        rows: Vec<usize>,
    },
    Linear {
        x: Var,
        w: Var,
        cols: Range<usize>,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    MaskRows {
        x: Var,
        keep: Vec<bool>,
    },
    ConcatCols(Var, Var),
    SegmentSoftmax {
        x: Var,
        offsets: Offsets,
    },
    SegmentWeightedSum {
        x: Var,
        w: Var,
        offsets: Offsets,
    },
    SegmentMax {
        x: Var,
        argmax: Vec<usize>,
    },
    RowDot(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    SumSquares(Var),
    BceWithLogits {
        x: Var,
        slopes: Vec<f64>,
    },
    NegLogSigmoid(Var),
}

struct Node {
    value: Matrix,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
    mode: ExecMode,
}

fn shape_err(op: &'static str, expected: (usize, usize), found: (usize, usize)) -> NumericError {
    NumericError::Shape {
        op,
        expected,
        found,
    }
}

impl Tape {
    pub fn new(mode: ExecMode) -> Self {
        Tape {
            nodes: Vec::new(),
            mode,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Reads a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.get(0, 0)
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// Leaf holding a full copy of a parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    /// Leaf holding selected rows of a parameter; backward only touches those rows.
    pub fn gather_param(
        &mut self,
        store: &ParamStore,
        id: ParamId,
        rows: Vec<usize>,
    ) -> Result<Var, NumericError> {
        let src = store.value(id);
        let mut out = Matrix::zeros(rows.len(), src.cols());
        for (k, &r) in rows.iter().enumerate() {
            if r >= src.rows() {
                return Err(NumericError::OutOfBounds {
                    index: r,
                    len: src.rows(),
                });
            }
            out.row_mut(k).copy_from_slice(src.row(r));
        }
        Ok(self.push(out, Op::GatherParam { id, rows }))
    }

    pub fn gather(&mut self, src: Var, rows: Vec<usize>) -> Result<Var, NumericError> {
        let s = self.value(src);
        let mut out = Matrix::zeros(rows.len(), s.cols());
        for (k, &r) in rows.iter().enumerate() {
            if r >= s.rows() {
                return Err(NumericError::OutOfBounds {
                    index: r,
                    len: s.rows(),
                });
            }
            out.row_mut(k).copy_from_slice(s.row(r));
        }
        Ok(self.push(out, Op::Gather { src, rows }))
    }

    /// `x · Wᵀ + b` with `W: out × in`, `x: m × in`, `b: 1 × out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NumericError> {
        let cols = 0..self.value(w).cols();
        self.linear_cols(x, w, cols, b)
    }

    /// Like [`Tape::linear`] but only uses the column block `cols` of `W`, i.e.
    /// the slice of a concatenated-input layer that multiplies `x`.
    pub fn linear_cols(
        &mut self,
        x: Var,
        w: Var,
        cols: Range<usize>,
        b: Option<Var>,
    ) -> Result<Var, NumericError> {
        let (xm, wm) = (self.value(x), self.value(w));
        let width = cols.end - cols.start;
        if cols.end > wm.cols() || xm.cols() != width {
            return Err(shape_err("linear", (wm.rows(), width), xm.shape()));
        }
        if let Some(b) = b {
            if self.value(b).shape() != (1, wm.rows()) {
                return Err(shape_err(
                    "linear bias",
                    (1, wm.rows()),
                    self.value(b).shape(),
                ));
            }
        }
        let out_dim = wm.rows();
        let mut out = Matrix::zeros(xm.rows(), out_dim);
        let bias = b.map(|b| self.value(b).row(0));
        let c0 = cols.start;
        for_each_row(self.mode, out.as_mut_slice(), out_dim, |m, row| {
            let xr = xm.row(m);
            for (j, o) in row.iter_mut().enumerate() {
                *o = dot(&wm.row(j)[c0..c0 + width], xr) + bias.map_or(0.0, |b| b[j]);
            }
        });
        Ok(self.push(out, Op::Linear { x, w, cols, b }))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumericError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.same_shape("sub", a, b)?;
        let mut out = self.value(a).clone();
        for (o, v) in out.as_mut_slice().iter_mut().zip(self.value(b).as_slice()) {
            *o -= v;
        }
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = relu_scalar(*v));
        self.push(out, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let mut out = self.value(x).clone();
        out.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = leaky_relu_scalar(*v, slope));
        self.push(out, Op::LeakyRelu(x, slope))
    }

    /// Zeroes the rows where `keep` is false.
    pub fn mask_rows(&mut self, x: Var, keep: Vec<bool>) -> Result<Var, NumericError> {
        let mut out = self.value(x).clone();
        if keep.len() != out.rows() {
            return Err(shape_err("mask_rows", out.shape(), (keep.len(), 1)));
        }
        for (r, &k) in keep.iter().enumerate() {
            if !k {
                out.row_mut(r).fill(0.0);
            }
        }
        Ok(self.push(out, Op::MaskRows { x, keep }))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (am, bm) = (self.value(a), self.value(b));
        if am.rows() != bm.rows() {
            return Err(shape_err("concat_cols", am.shape(), bm.shape()));
        }
        let mut out = Matrix::zeros(am.rows(), am.cols() + bm.cols());
        for r in 0..am.rows() {
            let row = out.row_mut(r);
            row[..am.cols()].copy_from_slice(am.row(r));
            row[am.cols()..].copy_from_slice(bm.row(r));
        }
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    fn check_offsets(
        &self,
        op: &'static str,
        x: Var,
        offsets: &[usize],
    ) -> Result<(), NumericError> {
        let rows = self.value(x).rows();
        let ok = offsets.first() == Some(&0)
            && offsets.last() == Some(&rows)
            && offsets.windows(2).all(|w| w[0] <= w[1]);
        if !ok {
            return Err(shape_err(
                op,
                (rows, 1),
                (offsets.last().copied().unwrap_or(0), 1),
            ));
        }
        Ok(())
    }

    /// Softmax of an `E × 1` column within each segment.
    pub fn segment_softmax(&mut self, x: Var, offsets: Offsets) -> Result<Var, NumericError> {
        self.check_offsets("segment_softmax", x, &offsets)?;
        let xm = self.value(x);
        if xm.cols() != 1 {
            return Err(shape_err("segment_softmax", (xm.rows(), 1), xm.shape()));
        }
        let mut out = Matrix::zeros(xm.rows(), 1);
        for s in offsets.windows(2) {
            if s[0] < s[1] {
                softmax_into(
                    &xm.as_slice()[s[0]..s[1]],
                    &mut out.as_mut_slice()[s[0]..s[1]],
                );
            }
        }
        Ok(self.push(out, Op::SegmentSoftmax { x, offsets }))
    }

    /// Per segment `Σ w_e · x_e` for `x: E × d`, `w: E × 1`. Empty segments give zero rows.
    pub fn segment_weighted_sum(
        &mut self,
        x: Var,
        w: Var,
        offsets: Offsets,
    ) -> Result<Var, NumericError> {
        self.check_offsets("segment_weighted_sum", x, &offsets)?;
        let (xm, wm) = (self.value(x), self.value(w));
        if wm.shape() != (xm.rows(), 1) {
            return Err(shape_err(
                "segment_weighted_sum",
                (xm.rows(), 1),
                wm.shape(),
            ));
        }
        let d = xm.cols();
        let mut out = Matrix::zeros(offsets.len() - 1, d);
        for_each_row(self.mode, out.as_mut_slice(), d, |s, row| {
            for e in offsets[s]..offsets[s + 1] {
                axpy(wm.get(e, 0), xm.row(e), row);
            }
        });
        Ok(self.push(out, Op::SegmentWeightedSum { x, w, offsets }))
    }

    /// Elementwise max over each segment's rows. Empty segments give zero rows.
    pub fn segment_max(&mut self, x: Var, offsets: Offsets) -> Result<Var, NumericError> {
        self.check_offsets("segment_max", x, &offsets)?;
        let xm = self.value(x);
        let d = xm.cols();
        let n_seg = offsets.len() - 1;
        let mut out = Matrix::zeros(n_seg, d);
        let mut argmax = vec![usize::MAX; n_seg * d];
        for s in 0..n_seg {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if lo == hi {
                continue;
            }
            for c in 0..d {
                let mut best = lo;
                for e in lo + 1..hi {
                    if xm.get(e, c) > xm.get(best, c) {
                        best = e;
                    }
                }
                out.set(s, c, xm.get(best, c));
                argmax[s * d + c] = best;
            }
        }
        Ok(self.push(out, Op::SegmentMax { x, argmax }))
    }

    /// Row-wise inner products, `m × 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.same_shape("row_dot", a, b)?;
        let (am, bm) = (self.value(a), self.value(b));
        let data = (0..am.rows()).map(|r| dot(am.row(r), bm.row(r))).collect();
        let out = Matrix::from_vec(am.rows(), 1, data)?;
        Ok(self.push(out, Op::RowDot(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let mut out = self.value(x).clone();
        out.as_mut_slice().iter_mut().for_each(|v| *v *= c);
        self.push(out, Op::Scale(x, c))
    }

    /// Sum of all entries, `1 × 1`.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = compensated_sum(self.value(x).as_slice().iter().copied());
        self.push(Matrix::filled(1, 1, s), Op::Sum(x))
    }

    /// Sum of squared entries, `1 × 1`.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = compensated_sum(self.value(x).as_slice().iter().map(|v| v * v));
        self.push(Matrix::filled(1, 1, s), Op::SumSquares(x))
    }

    /// `Σ -ln p` over an `m × 1` logit column, `p = σ(x)` for label `true` and
    /// `1 - σ(x)` for `false`, each clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    /// A clamped entry has zero gradient.
    pub fn bce_with_logits(&mut self, x: Var, labels: &[bool]) -> Result<Var, NumericError> {
        let xm = self.value(x);
        if xm.shape() != (labels.len(), 1) {
            return Err(shape_err("bce_with_logits", (labels.len(), 1), xm.shape()));
        }
        let (losses, slopes): (Vec<f64>, Vec<f64>) = xm
            .as_slice()
            .iter()
            .zip(labels)
            .map(|(&z, &label)| bce_term(z, label))
            .unzip();
        let total = compensated_sum(losses);
        Ok(self.push(Matrix::filled(1, 1, total), Op::BceWithLogits { x, slopes }))
    }

    /// `Σ -ln σ(x)` computed as a softplus, `1 × 1`.
    pub fn neg_log_sigmoid(&mut self, x: Var) -> Var {
        let s = compensated_sum(self.value(x).as_slice().iter().map(|&z| softplus(-z)));
        self.push(Matrix::filled(1, 1, s), Op::NegLogSigmoid(x))
    }

    /// Back-propagates from a `1 × 1` output, accumulating into `store`.
    pub fn backward(&self, output: Var, store: &mut ParamStore) -> Result<(), NumericError> {
        let out_shape = self.value(output).shape();
        if out_shape != (1, 1) {
            return Err(shape_err("backward", (1, 1), out_shape));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let p = store.get_mut(*id);
                    p.grad.add_assign(&g);
                    if p.sparse {
                        let all: Vec<usize> = (0..p.value.rows()).collect();
                        p.mark_rows(&all);
                    }
                }
                Op::GatherParam { id, rows } => {
                    let p = store.get_mut(*id);
                    for (k, &r) in rows.iter().enumerate() {
                        axpy(1.0, g.row(k), p.grad.row_mut(r));
                    }
                    p.mark_rows(rows);
                }
                Op::Gather { src, rows } => {
                    let gs = self.grad_slot(&mut grads, *src);
                    for (k, &r) in rows.iter().enumerate() {
                        axpy(1.0, g.row(k), gs.row_mut(r));
                    }
                }
                Op::Linear { x, w, cols, b } => {
                    self.linear_backward(&g, *x, *w, cols, *b, &mut grads)
                }
                Op::Add(a, b) => {
                    self.grad_slot(&mut grads, *a).add_assign(&g);
                    self.grad_slot(&mut grads, *b).add_assign(&g);
                }
                Op::Sub(a, b) => {
                    self.grad_slot(&mut grads, *a).add_assign(&g);
                    let gb = self.grad_slot(&mut grads, *b);
                    for (o, v) in gb.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *o -= v;
                    }
                }
                Op::Relu(x) | Op::LeakyRelu(x, _) => {
                    let slope = match node.op {
                        Op::LeakyRelu(_, s) => s,
                        _ => 0.0,
                    };
                    let xv = self.value(*x).as_slice();
                    let gx = self.grad_slot(&mut grads, *x);
                    for ((o, &gi), &xi) in gx.as_mut_slice().iter_mut().zip(g.as_slice()).zip(xv) {
                        *o += if xi > 0.0 { gi } else { slope * gi };
                    }
                }
                Op::MaskRows { x, keep } => {
                    let gx = self.grad_slot(&mut grads, *x);
                    for (r, &k) in keep.iter().enumerate() {
                        if k {
                            axpy(1.0, g.row(r), gx.row_mut(r));
                        }
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ac = self.value(*a).cols();
                    let ga = self.grad_slot(&mut grads, *a);
                    for r in 0..g.rows() {
                        axpy(1.0, &g.row(r)[..ac], ga.row_mut(r));
                    }
                    let gb = self.grad_slot(&mut grads, *b);
                    for r in 0..g.rows() {
                        axpy(1.0, &g.row(r)[ac..], gb.row_mut(r));
                    }
                }
                Op::SegmentSoftmax { x, offsets } => {
                    let y = node.value.as_slice();
                    let gv = g.as_slice();
                    let gx = self.grad_slot(&mut grads, *x);
                    for s in offsets.windows(2) {
                        let inner: f64 = (s[0]..s[1]).map(|e| y[e] * gv[e]).sum();
                        for e in s[0]..s[1] {
                            gx.as_mut_slice()[e] += y[e] * (gv[e] - inner);
                        }
                    }
                }
                Op::SegmentWeightedSum { x, w, offsets } => {
                    let (xm, wm) = (self.value(*x), self.value(*w));
                    let gx = self.grad_slot(&mut grads, *x);
                    for s in 0..offsets.len() - 1 {
                        for e in offsets[s]..offsets[s + 1] {
                            axpy(wm.get(e, 0), g.row(s), gx.row_mut(e));
                        }
                    }
                    let gw = self.grad_slot(&mut grads, *w);
                    for s in 0..offsets.len() - 1 {
                        for e in offsets[s]..offsets[s + 1] {
                            gw.as_mut_slice()[e] += dot(g.row(s), xm.row(e));
                        }
                    }
                }
                Op::SegmentMax { x, argmax } => {
                    let d = g.cols();
                    let gx = self.grad_slot(&mut grads, *x);
                    for (k, &src) in argmax.iter().enumerate() {
                        if src != usize::MAX {
                            let c = k % d;
                            let cur = gx.get(src, c);
                            gx.set(src, c, cur + g.as_slice()[k]);
                        }
                    }
                }
                Op::RowDot(a, b) => {
                    let (am, bm) = (self.value(*a), self.value(*b));
                    let ga = self.grad_slot(&mut grads, *a);
                    for r in 0..am.rows() {
                        axpy(g.get(r, 0), bm.row(r), ga.row_mut(r));
                    }
                    let gb = self.grad_slot(&mut grads, *b);
                    for r in 0..am.rows() {
                        axpy(g.get(r, 0), am.row(r), gb.row_mut(r));
                    }
                }
                Op::Scale(x, c) => {
                    let gx = self.grad_slot(&mut grads, *x);
                    axpy(*c, g.as_slice(), gx.as_mut_slice());
                }
                Op::Sum(x) => {
                    let gx = self.grad_slot(&mut grads, *x);
                    let gs = g.get(0, 0);
                    gx.as_mut_slice().iter_mut().for_each(|v| *v += gs);
                }
                Op::SumSquares(x) => {
                    let xv = self.value(*x).as_slice();
                    let gs = g.get(0, 0);
                    let gx = self.grad_slot(&mut grads, *x);
                    axpy(2.0 * gs, xv, gx.as_mut_slice());
                }
                Op::BceWithLogits { x, slopes } => {
                    let gs = g.get(0, 0);
                    let gx = self.grad_slot(&mut grads, *x);
                    axpy(gs, slopes, gx.as_mut_slice());
                }
                Op::NegLogSigmoid(x) => {
                    let xv = self.value(*x).as_slice();
                    let gs = g.get(0, 0);
                    let gx = self.grad_slot(&mut grads, *x);
                    for (o, &z) in gx.as_mut_slice().iter_mut().zip(xv) {
                        *o += gs * (sigmoid_scalar(z) - 1.0);
                    }
                }
            }
        }
        Ok(())
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Matrix>], v: Var) -> &'g mut Matrix {
        let (r, c) = self.value(v).shape();
        grads[v.0].get_or_insert_with(|| Matrix::zeros(r, c))
    }

    fn linear_backward(
        &self,
        g: &Matrix,
        x: Var,
        w: Var,
        cols: &Range<usize>,
        b: Option<Var>,
        grads: &mut [Option<Matrix>],
    ) {
        let (xm, wm) = (self.value(x), self.value(w));
        let width = cols.end - cols.start;
        let c0 = cols.start;
        let out_dim = wm.rows();

        let mut gx = Matrix::zeros(xm.rows(), width);
        for_each_row(self.mode, gx.as_mut_slice(), width, |m, row| {
            for j in 0..out_dim {
                let gj = g.get(m, j);
                if gj != 0.0 {
                    axpy(gj, &wm.row(j)[c0..c0 + width], row);
                }
            }
        });
        self.grad_slot(grads, x).add_assign(&gx);

        let mut gw = Matrix::zeros(out_dim, width);
        for_each_row(self.mode, gw.as_mut_slice(), width, |j, row| {
            for m in 0..xm.rows() {
                let gj = g.get(m, j);
                if gj != 0.0 {
                    axpy(gj, xm.row(m), row);
                }
            }
        });
        let gw_full = self.grad_slot(grads, w);
        for j in 0..out_dim {
            axpy(1.0, gw.row(j), &mut gw_full.row_mut(j)[c0..c0 + width]);
        }

        if let Some(b) = b {
            let gb = self.grad_slot(grads, b);
            for m in 0..g.rows() {
                axpy(1.0, g.row(m), gb.row_mut(0));
            }
        }
    }
}

/// Clamped binary cross-entropy term and its derivative w.r.t. the logit.
pub(crate) fn bce_term(z: f64, label: bool) -> (f64, f64) {
    // probability assigned to the observed label
    let p = if label {
        sigmoid_scalar(z)
    } else {
        sigmoid_scalar(-z)
    };
    if p < PROB_CLAMP {
        (-PROB_CLAMP.ln(), 0.0)
    } else if p > 1.0 - PROB_CLAMP {
        (-(1.0 - PROB_CLAMP).ln(), 0.0)
    } else {
        let slope = if label { p - 1.0 } else { 1.0 - p };
        (-p.ln(), slope)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{ops, Parameter};

    fn store_with(name: &str, m: Matrix) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add(Parameter::new(name, m, false));
        (s, id)
    }

    #[test]
    fn linear_matches_affine_kernel() {
        let w = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let (mut store, wid) = store_with("w", w.clone());
        let bid = store.add(Parameter::new("b", Matrix::row_vector(&[0.5, -0.5]), false));
        let mut t = Tape::new(ExecMode::Sequential);
        let x = t.constant(Matrix::from_rows(&[[1.0, 1.0], [0.0, 2.0]]));
        let wv = t.param(&store, wid);
        let bv = t.param(&store, bid);
        let y = t.linear(x, wv, Some(bv)).unwrap();
        assert_eq!(
            t.value(y).row(0),
            ops::affine(&w, &[1.0, 1.0], &[0.5, -0.5]).unwrap()
        );
        assert_eq!(t.value(y).row(1), &[4.5, 7.5]);

        let s = t.sum(y);
        t.backward(s, &mut store).unwrap();
        // d/dW_jk = Σ_m x_mk
        assert_eq!(store.grad(wid).as_slice(), &[1.0, 3.0, 1.0, 3.0]);
        assert_eq!(store.grad(bid).as_slice(), &[2.0, 2.0]);
    }

    #[test]
    fn column_block_linear() {
        let w = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let (mut store, wid) = store_with("w", w);
        let mut t = Tape::new(ExecMode::Sequential);
        let x = t.constant(Matrix::from_rows(&[[1.0, 1.0]]));
        let wv = t.param(&store, wid);
        let y = t.linear_cols(x, wv, 1..3, None).unwrap();
        assert_eq!(t.value(y).as_slice(), &[5.0, 11.0]);
        let s = t.sum(y);
        t.backward(s, &mut store).unwrap();
        assert_eq!(store.grad(wid).as_slice(), &[0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        assert!(t.linear_cols(x, wv, 0..3, None).is_err());
    }

    #[test]
    fn segment_ops_forward() {
        let mut t = Tape::new(ExecMode::Sequential);
        let scores = t.constant(Matrix::from_vec(3, 1, vec![0.0, 0.0, 5.0]).unwrap());
        let offsets: Offsets = vec![0, 2, 2, 3].into();
        let sm = t.segment_softmax(scores, offsets.clone()).unwrap();
        assert_eq!(t.value(sm).as_slice(), &[0.5, 0.5, 1.0]);

        let x = t.constant(Matrix::from_rows(&[[2.0, 0.0], [0.0, 2.0], [1.0, -1.0]]));
        let ws = t.segment_weighted_sum(x, sm, offsets.clone()).unwrap();
        assert_eq!(t.value(ws).as_slice(), &[1.0, 1.0, 0.0, 0.0, 1.0, -1.0]);
        let mx = t.segment_max(x, offsets).unwrap();
        assert_eq!(t.value(mx).as_slice(), &[2.0, 2.0, 0.0, 0.0, 1.0, -1.0]);
    }

    #[test]
    fn bce_and_clamp() {
        let (l, s) = bce_term(0.0, true);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15 && (s + 0.5).abs() < 1e-15);
        let (l, s) = bce_term(-100.0, true);
        assert_eq!(s, 0.0);
        assert!((l - 1e-12f64.ln().abs()).abs() < 1e-9);
        let (l, s) = bce_term(100.0, false);
        assert_eq!(s, 0.0);
        assert!(l.is_finite());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut store = ParamStore::new();
        let mut t = Tape::new(ExecMode::Sequential);
        let x = t.constant(Matrix::zeros(2, 2));
        assert!(t.backward(x, &mut store).is_err());
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::new(ExecMode::Sequential);
        let a = t.constant(Matrix::zeros(2, 2));
        let b = t.constant(Matrix::zeros(2, 3));
        assert!(t.add(a, b).is_err());
        assert!(t.row_dot(a, b).is_err());
        assert!(t.segment_softmax(a, vec![0, 2].into()).is_err());
        assert!(t.gather(a, vec![5]).is_err());
        assert!(t.mask_rows(a, vec![true]).is_err());
    }
}
