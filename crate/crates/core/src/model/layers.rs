//! Single-vector building blocks. The batched forward pass uses the same
//! kernels, and tests use these functions as its reference.

use crate::numeric::ops::{
    affine, concat, dot, relu, relu_scalar, sigmoid_scalar, softmax, uniform_weights, weighted_sum,
};
use crate::numeric::{Matrix, NumericError};

/// Borrowed affine map `W x + b`.
#[derive(Clone, Copy, Debug)]
pub struct Affine<'a> {
    pub w: &'a Matrix,
    pub b: &'a [f64],
}

impl Affine<'_> {
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, NumericError> {
        affine(self.w, x, self.b)
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }
}

/// Two-layer interaction network `W2 ReLU(W1 [e_n ⊕ e_r] + b1) + b2`.
#[derive(Clone, Copy, Debug)]
pub struct FusionNet<'a> {
    pub hidden: Affine<'a>,
    pub output: Affine<'a>,
}

/// Attention scorer `w2 · ReLU(W1 [x ⊕ e] + b1) + b2`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionNet<'a> {
    pub hidden: Affine<'a>,
    pub out_w: &'a [f64],
    pub out_b: f64,
}

/// Prediction head over `[u ⊕ i]`, same shape as [`AttentionNet`].
#[derive(Clone, Copy, Debug)]
pub struct MlpHead<'a> {
    pub hidden: Affine<'a>,
    pub out_w: &'a [f64],
    pub out_b: f64,
}

/// A message sent along one edge (or from a node to itself).
#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub source: usize,
    pub target: usize,
    pub vector: Vec<f64>,
}

fn same_len(op: &'static str, a: &[f64], b: &[f64]) -> Result<(), NumericError> {
    if a.len() != b.len() {
        return Err(NumericError::Shape {
            op,
            expected: (1, a.len()),
            found: (1, b.len()),
        });
    }
    Ok(())
}

fn check_rows<V: AsRef<[f64]>>(op: &'static str, xs: &[V], dim: usize) -> Result<(), NumericError> {
    match xs.iter().find(|x| x.as_ref().len() != dim) {
        Some(bad) => Err(NumericError::Shape {
            op,
            expected: (1, dim),
            found: (1, bad.as_ref().len()),
        }),
        None => Ok(()),
    }
}

/// Interaction vector of a neighbour embedding and a rating embedding.
pub fn fuse_interaction(
    e_n: &[f64],
    e_r: &[f64],
    net: &FusionNet<'_>,
) -> Result<Vec<f64>, NumericError> {
    same_len("fuse_interaction", e_n, e_r)?;
    let hidden = relu(&net.hidden.apply(&concat(e_n, e_r))?);
    net.output.apply(&hidden)
}

/// Unnormalised attention of a centre node `e` on interaction vector `x`.
pub fn attention_score(x: &[f64], e: &[f64], net: &AttentionNet<'_>) -> Result<f64, NumericError> {
    same_len("attention_score", x, e)?;
    let hidden = relu(&net.hidden.apply(&concat(x, e))?);
    same_len("attention_score output", &hidden, net.out_w)?;
    Ok(dot(net.out_w, &hidden) + net.out_b)
}

pub fn attention_weights(scores: &[f64]) -> Result<Vec<f64>, NumericError> {
    softmax(scores)
}

/// `ReLU(T(Σ β_k x_k))`; an empty list aggregates to the zero vector.
pub fn aggregate_attention<V: AsRef<[f64]>>(
    xs: &[V],
    betas: &[f64],
    transform: &Affine<'_>,
) -> Result<Vec<f64>, NumericError> {
    if xs.len() != betas.len() {
        return Err(NumericError::Shape {
            op: "aggregate_attention",
            expected: (xs.len(), 1),
            found: (betas.len(), 1),
        });
    }
    let dim = transform.w.cols();
    check_rows("aggregate_attention", xs, dim)?;
    Ok(relu(&transform.apply(&weighted_sum(xs, betas, dim))?))
}

/// `ReLU(T(mean x_k))`, computed as attention with weights `1/k`.
pub fn aggregate_mean<V: AsRef<[f64]>>(
    xs: &[V],
    transform: &Affine<'_>,
) -> Result<Vec<f64>, NumericError> {
    aggregate_attention(xs, &uniform_weights(xs.len()), transform)
}

/// Max-pooling aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct Pooled {
    /// Elementwise max of `ReLU(P n)` over neighbours; zero when there are none.
    pub pooled: Vec<f64>,
    /// `ReLU(T(center + pooled))`.
    pub combined: Vec<f64>,
}

pub fn aggregate_pooling<V: AsRef<[f64]>>(
    center: &[f64],
    neighbors: &[V],
    pool: &Affine<'_>,
    transform: &Affine<'_>,
) -> Result<Pooled, NumericError> {
    check_rows("aggregate_pooling", neighbors, pool.w.cols())?;
    let mut pooled = vec![0.0; pool.out_dim()];
    for (k, n) in neighbors.iter().enumerate() {
        let feat = relu(&pool.apply(n.as_ref())?);
        for (p, f) in pooled.iter_mut().zip(feat) {
            if k == 0 || f > *p {
                *p = f;
            }
        }
    }
    same_len("aggregate_pooling", center, &pooled)?;
    let summed: Vec<f64> = center.iter().zip(&pooled).map(|(c, p)| c + p).collect();
    let combined = relu(&transform.apply(&summed)?);
    Ok(Pooled { pooled, combined })
}

/// Folds user–user neighbours into `u`: `ReLU(T(u + Σ softmax(r)_k n_k))`.
/// `relations` are the raw relation strengths; no neighbours leaves `u` as is.
pub fn aggregate_user_neighbors<V: AsRef<[f64]>>(
    u: &[f64],
    neighbors: &[V],
    relations: &[f64],
    transform: &Affine<'_>,
) -> Result<Vec<f64>, NumericError> {
    if neighbors.len() != relations.len() {
        return Err(NumericError::Shape {
            op: "aggregate_user_neighbors",
            expected: (neighbors.len(), 1),
            found: (relations.len(), 1),
        });
    }
    check_rows("aggregate_user_neighbors", neighbors, u.len())?;
    let mut x = u.to_vec();
    if !neighbors.is_empty() {
        let un = weighted_sum(neighbors, &softmax(relations)?, u.len());
        x.iter_mut().zip(un).for_each(|(a, b)| *a += b);
    }
    Ok(relu(&transform.apply(&x)?))
}

/// Probability that `u` interacts with `i`: `σ(u · i)`, or the MLP head.
pub fn predict(u: &[f64], i: &[f64], head: Option<&MlpHead<'_>>) -> Result<f64, NumericError> {
    same_len("predict", u, i)?;
    Ok(sigmoid_scalar(logit(u, i, head)?))
}

pub(crate) fn logit(u: &[f64], i: &[f64], head: Option<&MlpHead<'_>>) -> Result<f64, NumericError> {
    match head {
        None => Ok(dot(u, i)),
        Some(h) => {
            let hidden: Vec<f64> = h
                .hidden
                .apply(&concat(u, i))?
                .into_iter()
                .map(relu_scalar)
                .collect();
            same_len("predict head", &hidden, h.out_w)?;
            Ok(dot(h.out_w, &hidden) + h.out_b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ident(n: usize) -> (Matrix, Vec<f64>) {
        (Matrix::identity(n), vec![0.0; n])
    }

    #[test]
    fn fusion_examples() {
        // W1 = [I | 0], W2 = I
        let w1 = Matrix::from_rows(&[[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]);
        let (w2, b) = ident(2);
        let net = FusionNet {
            hidden: Affine { w: &w1, b: &b },
            output: Affine { w: &w2, b: &b },
        };
        assert_eq!(
            fuse_interaction(&[1.5, -2.0], &[9.0, 9.0], &net).unwrap(),
            vec![1.5, 0.0]
        );

        let z1 = Matrix::zeros(2, 4);
        let z2 = Matrix::zeros(2, 2);
        let c = [0.25, -3.0];
        let net = FusionNet {
            hidden: Affine { w: &z1, b: &b },
            output: Affine { w: &z2, b: &c },
        };
        assert_eq!(
            fuse_interaction(&[7.0, 1.0], &[2.0, 2.0], &net).unwrap(),
            c.to_vec()
        );
        assert!(fuse_interaction(&[1.0], &[1.0, 2.0], &net).is_err());
    }

    #[test]
    #[allow(clippy::neg_multiply)]
    fn fusion_matches_hand_rolled_reference() {
        let w1 = Matrix::from_rows(&[[0.1, -0.2, 0.3, 0.4], [-0.5, 0.6, 0.7, -0.8]]);
        let b1 = [0.05, -0.1];
        let w2 = Matrix::from_rows(&[[1.1, -0.3], [0.2, 0.9]]);
        let b2 = [0.0, 0.5];
        let (e, r) = ([0.4, -1.0], [2.0, 0.5]);
        // hidden pre-activations by hand
        let h0 = 0.1 * 0.4 + -0.2 * -1.0 + 0.3 * 2.0 + 0.4 * 0.5 + 0.05;
        let h1 = -0.5 * 0.4 + 0.6 * -1.0 + 0.7 * 2.0 + -0.8 * 0.5 - 0.1;
        let (h0, h1) = (f64::max(h0, 0.0), f64::max(h1, 0.0));
        let expected = [1.1 * h0 - 0.3 * h1, 0.2 * h0 + 0.9 * h1 + 0.5];
        let net = FusionNet {
            hidden: Affine { w: &w1, b: &b1 },
            output: Affine { w: &w2, b: &b2 },
        };
        let out = fuse_interaction(&e, &r, &net).unwrap();
        for (o, x) in out.iter().zip(expected) {
            assert!((o - x).abs() < 1e-14);
        }
    }

    #[test]
    fn attention_examples() {
        let w1 = Matrix::from_rows(&[[1.0, 1.0]]);
        let net = AttentionNet {
            hidden: Affine { w: &w1, b: &[0.0] },
            out_w: &[1.0],
            out_b: 0.0,
        };
        assert_eq!(attention_score(&[1.0], &[1.0], &net).unwrap(), 2.0);

        let net0 = AttentionNet {
            out_w: &[0.0],
            out_b: -0.7,
            ..net
        };
        assert_eq!(attention_score(&[5.0], &[-3.0], &net0).unwrap(), -0.7);

        let w = attention_weights(&[1.0, 2.0]).unwrap();
        assert!((w[0] - 0.26894).abs() < 1e-5 && (w[1] - 0.73106).abs() < 1e-5);
        assert_eq!(attention_weights(&[0.3]).unwrap(), vec![1.0]);
        assert_eq!(attention_weights(&[4.0; 4]).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn aggregation_examples() {
        let (w, b) = ident(2);
        let t = Affine { w: &w, b: &b };
        assert_eq!(
            aggregate_mean(&[[2.0, 0.0], [0.0, 2.0]], &t).unwrap(),
            vec![1.0, 1.0]
        );
        assert_eq!(aggregate_mean(&[[-1.0, 3.0]], &t).unwrap(), vec![0.0, 3.0]);
        let empty: [[f64; 2]; 0] = [];
        assert_eq!(aggregate_mean(&empty, &t).unwrap(), vec![0.0, 0.0]);

        let xs = [[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(
            aggregate_attention(&xs, &[0.25, 0.75], &t).unwrap(),
            vec![0.25, 0.75]
        );
        assert_eq!(
            aggregate_attention(&xs, &[1.0, 0.0], &t).unwrap(),
            vec![1.0, 0.0]
        );
        assert!(aggregate_attention(&xs, &[1.0], &t).is_err());

        let xs3 = [[0.3, -0.1], [1.7, 0.4], [-0.2, 0.9]];
        assert_eq!(
            aggregate_attention(&xs3, &uniform_weights(3), &t).unwrap(),
            aggregate_mean(&xs3, &t).unwrap()
        );
    }

    #[test]
    fn pooling_examples() {
        let (w, b) = ident(2);
        let t = Affine { w: &w, b: &b };
        let p = aggregate_pooling(&[0.0, 0.0], &[[-1.0, 2.0]], &t, &t).unwrap();
        assert_eq!(p.pooled, vec![0.0, 2.0]);
        let p = aggregate_pooling(&[0.5, 0.0], &[[1.0, 0.0], [0.0, 1.0]], &t, &t).unwrap();
        assert_eq!(p.pooled, vec![1.0, 1.0]);
        assert_eq!(p.combined, vec![1.5, 1.0]);
        let dup =
            aggregate_pooling(&[0.5, 0.0], &[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]], &t, &t).unwrap();
        assert_eq!(dup, p);
        let empty: [[f64; 2]; 0] = [];
        let alone = aggregate_pooling(&[-0.5, 0.25], &empty, &t, &t).unwrap();
        assert_eq!(alone.combined, vec![0.0, 0.25]);
    }

    #[test]
    fn user_neighbor_examples() {
        let (w, b) = ident(2);
        let t = Affine { w: &w, b: &b };
        let empty: [[f64; 2]; 0] = [];
        assert_eq!(
            aggregate_user_neighbors(&[1.0, -1.0], &empty, &[], &t).unwrap(),
            vec![1.0, 0.0]
        );
        let u = [0.0, 0.0];
        let (n1, n2) = ([3.0, 0.0], [0.0, 3.0]);
        assert_eq!(
            aggregate_user_neighbors(&u, &[n1, n2], &[0.7, 0.7], &t).unwrap(),
            vec![1.5, 1.5]
        );
        let out = aggregate_user_neighbors(&u, &[n1, n2], &[2f64.ln(), 0.0], &t).unwrap();
        assert!((out[0] - 2.0).abs() < 1e-12 && (out[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn predict_examples() {
        assert_eq!(predict(&[1.0, 0.0], &[0.0, 1.0], None).unwrap(), 0.5);
        assert!((predict(&[1.0, 1.0], &[1.0, 1.0], None).unwrap() - 0.8808).abs() < 1e-4);
        let (u, i) = ([0.3, -2.0, 0.1], [1.2, 0.4, -0.6]);
        assert_eq!(
            predict(&u, &i, None).unwrap(),
            predict(&i, &u, None).unwrap()
        );
        assert!(predict(&u, &[1.0], None).is_err());

        let w1 = Matrix::from_rows(&[[1.0, 0.0, 0.0, 1.0]]);
        let head = MlpHead {
            hidden: Affine { w: &w1, b: &[0.0] },
            out_w: &[2.0],
            out_b: -1.0,
        };
        // hidden = relu(u0 + i1) = 1, logit = 2 - 1
        let p = predict(&[0.5, 9.0], &[9.0, 0.5], Some(&head)).unwrap();
        assert_eq!(p, sigmoid_scalar(1.0));
    }
}
