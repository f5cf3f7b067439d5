use super::*;
use crate::bpr::BprModel;
use crate::eval::Scorer;
use crate::numeric::ops::{leaky_relu, relu_scalar, sigmoid_scalar, softmax, weighted_sum};
use crate::numeric::{xavier_bound, Tape};

fn fixture() -> InteractionGraph {
    InteractionGraph::from_indexed_edges(
        4,
        5,
        5,
        &[
            (0, 0, 5),
            (0, 1, 3),
            (0, 2, 4),
            (0, 4, 1),
            (1, 0, 2),
            (1, 3, 5),
            (2, 1, 4),
            (2, 2, 2),
            (2, 3, 3),
            (3, 4, 5),
        ],
    )
    .unwrap()
}

fn config(aggregator: Aggregator, layers: usize) -> ModelConfig {
    ModelConfig {
        dim: 4,
        layers,
        aggregator,
        head: Head::Dot,
        leaky_slope: 0.01,
    }
}

fn sampler() -> ImportanceConfig {
    ImportanceConfig {
        sample_size: 2,
        ..Default::default()
    }
}

fn set(m: &mut GnnModel, name: &str, value: Matrix) {
    let id = m.params().find(name).unwrap_or_else(|| panic!("no {name}"));
    *m.params_mut().value_mut(id) = value;
}

/// Single-vector propagation, node by node, straight from the layer definitions.
fn reference(
    m: &GnnModel,
    g: &InteractionGraph,
    s: &SampledAdjacency,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (nu, ni, nl) = m.counts();
    let look = |k, n| {
        (0..n)
            .map(|i| m.embed_lookup(k, i).unwrap())
            .collect::<Vec<_>>()
    };
    let mut users = look(EmbeddingKind::User, nu);
    let mut items = look(EmbeddingKind::Item, ni);
    let ratings = look(EmbeddingKind::Rating, nl);
    for l in 1..=m.config().layers {
        let nu_next: Vec<_> = (0..nu)
            .map(|u| node_update(m, g, s, l, Side::User, u, &users, &items, &ratings))
            .collect();
        let ni_next: Vec<_> = (0..ni)
            .map(|i| node_update(m, g, s, l, Side::Item, i, &items, &users, &ratings))
            .collect();
        users = nu_next;
        items = ni_next;
    }
    (users, items)
}

#[allow(clippy::too_many_arguments)]
fn node_update(
    m: &GnnModel,
    g: &InteractionGraph,
    s: &SampledAdjacency,
    layer: usize,
    side: Side,
    c: usize,
    same: &[Vec<f64>],
    other: &[Vec<f64>],
    ratings: &[Vec<f64>],
) -> Vec<f64> {
    let (agg_t, self_t) = m.layer_transforms(layer, side).unwrap();
    let center = &same[c];
    let mut self_in = center.clone();
    if let (Side::User, Some(rel)) = (side, g.user_relations()) {
        let (nbrs, r) = rel.row(c);
        if !nbrs.is_empty() {
            let vecs: Vec<&Vec<f64>> = nbrs.iter().map(|&n| &same[n as usize]).collect();
            let un = weighted_sum(&vecs, &softmax(r).unwrap(), center.len());
            self_in.iter_mut().zip(un).for_each(|(a, b)| *a += b);
        }
    }
    let self_msg = self_t.apply(&self_in).unwrap();
    let (nbrs, levels) = s.neighbors(side, c);
    if nbrs.is_empty() {
        return leaky_relu(&self_msg, m.config().leaky_slope);
    }
    let fusion = m.fusion(side).unwrap();
    let xs: Vec<Vec<f64>> = nbrs
        .iter()
        .zip(levels)
        .map(|(&n, &r)| {
            fuse_interaction(&other[n as usize], &ratings[usize::from(r) - 1], &fusion).unwrap()
        })
        .collect();
    let h = match m.config().aggregator {
        Aggregator::Mean => aggregate_mean(&xs, &agg_t).unwrap(),
        Aggregator::Attention => {
            let net = m.attention(side).unwrap();
            let scores: Vec<f64> = xs
                .iter()
                .map(|x| attention_score(x, center, &net).unwrap())
                .collect();
            aggregate_attention(&xs, &attention_weights(&scores).unwrap(), &agg_t).unwrap()
        }
        Aggregator::Pooling => {
            aggregate_pooling(center, &xs, &m.pool(side).unwrap(), &agg_t)
                .unwrap()
                .combined
        }
    };
    let sum: Vec<f64> = self_msg.iter().zip(&h).map(|(a, b)| a + b).collect();
    leaky_relu(&sum, m.config().leaky_slope)
}

fn assert_close(batched: &Matrix, reference: &[Vec<f64>], tol: f64) {
    assert_eq!(batched.rows(), reference.len());
    for (r, want) in reference.iter().enumerate() {
        for (a, b) in batched.row(r).iter().zip(want) {
            assert!((a - b).abs() <= tol, "row {r}: {a} vs {b}");
        }
    }
}

#[test]
fn batched_propagation_matches_reference() {
    let g = fixture();
    for aggregator in [Aggregator::Mean, Aggregator::Attention, Aggregator::Pooling] {
        for layers in [1, 2] {
            let m = GnnModel::new(&g, config(aggregator, layers), sampler(), 3).unwrap();
            let s = SampledAdjacency::build(&g, m.sampler(), 0, ExecMode::Sequential).unwrap();
            let (bu, bi) = m.propagate(&g, &s).unwrap();
            let (ru, ri) = reference(&m, &g, &s);
            assert_close(&bu, &ru, 1e-12);
            assert_close(&bi, &ri, 1e-12);
        }
    }
}

#[test]
fn user_relations_feed_the_self_message() {
    let g = fixture()
        .with_user_relations(&[(0, 1, 2f64.ln()), (0, 2, 0.0), (3, 0, 1.0)])
        .unwrap();
    let m = GnnModel::new(&g, config(Aggregator::Attention, 2), sampler(), 8).unwrap();
    let s = SampledAdjacency::full(&g);
    let (bu, bi) = m.propagate(&g, &s).unwrap();
    let (ru, ri) = reference(&m, &g, &s);
    assert_close(&bu, &ru, 1e-12);
    assert_close(&bi, &ri, 1e-12);
    let plain = m.propagate(&fixture(), &s).unwrap().0;
    assert_ne!(plain.row(0), bu.row(0));
    assert_eq!(plain.row(1), bu.row(1));
}

#[test]
fn hand_traced_single_edge() {
    let g = InteractionGraph::from_indexed_edges(1, 1, 1, &[(0, 0, 1)]).unwrap();
    let mut m = GnnModel::new(&g, config(Aggregator::Mean, 1), sampler(), 0).unwrap();
    let mut m2 = ModelConfig {
        dim: 2,
        ..*m.config()
    };
    m2.dim = 2;
    m = GnnModel::new(&g, m2, sampler(), 0).unwrap();
    let i2 = Matrix::identity(2);
    let ii = Matrix::from_rows(&[[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0]]);
    for s in ["user", "item"] {
        set(&mut m, &format!("fuse.{s}.w1"), ii.clone());
        set(&mut m, &format!("fuse.{s}.w2"), i2.clone());
        set(&mut m, &format!("layer1.{s}.agg.w"), i2.clone());
        set(&mut m, &format!("layer1.{s}.self.w"), i2.clone());
    }
    set(&mut m, "emb.user", Matrix::from_rows(&[[1.0, -2.0]]));
    set(&mut m, "emb.item", Matrix::from_rows(&[[0.5, 1.0]]));
    set(&mut m, "emb.rating", Matrix::from_rows(&[[0.25, 0.25]]));
    let (u, i) = m.propagate(&g, &SampledAdjacency::full(&g)).unwrap();
    // user: u + relu(i + r) = [1.75, -0.75]; item: i + relu(u + r) = [1.75, 1.0]
    assert_eq!(u.row(0), &[1.75, 0.01 * -0.75]);
    assert_eq!(i.row(0), &[1.75, 1.0]);
}

#[test]
fn isolated_user_keeps_only_self_message() {
    let g = InteractionGraph::from_indexed_edges(2, 2, 5, &[(0, 0, 4), (0, 1, 2)]).unwrap();
    for aggregator in [Aggregator::Mean, Aggregator::Attention, Aggregator::Pooling] {
        let m = GnnModel::new(&g, config(aggregator, 1), sampler(), 2).unwrap();
        let (u, _) = m.propagate(&g, &SampledAdjacency::full(&g)).unwrap();
        let (_, self_t) = m.layer_transforms(1, Side::User).unwrap();
        let e = m.embed_lookup(EmbeddingKind::User, 1).unwrap();
        assert_eq!(u.row(1), leaky_relu(&self_t.apply(&e).unwrap(), 0.01));
    }
}

#[test]
fn uniform_attention_equals_mean_exactly() {
    let g = fixture();
    let mut att = GnnModel::new(&g, config(Aggregator::Attention, 2), sampler(), 6).unwrap();
    for s in ["user", "item"] {
        set(&mut att, &format!("attn.{s}.w2"), Matrix::zeros(1, 4));
    }
    let mut mean = GnnModel::new(&g, config(Aggregator::Mean, 2), sampler(), 99).unwrap();
    let tensors: Vec<(String, Matrix)> = att
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.value.clone()))
        .collect();
    mean.load_params(&tensors).unwrap();
    let s = SampledAdjacency::build(&g, att.sampler(), 0, ExecMode::Sequential).unwrap();
    assert_eq!(
        att.propagate(&g, &s).unwrap(),
        mean.propagate(&g, &s).unwrap()
    );
}

#[test]
fn exec_modes_agree_bitwise() {
    let edges: Vec<(u32, u32, u8)> = (0..120u32)
        .flat_map(|u| (0..6u32).map(move |k| (u, (u * 11 + k * 17) % 90, (1 + (u + k) % 5) as u8)))
        .collect();
    let g = InteractionGraph::from_indexed_edges(120, 90, 5, &edges).unwrap();
    let cfg = ModelConfig {
        dim: 8,
        ..config(Aggregator::Attention, 2)
    };
    let seq = GnnModel::new(&g, cfg, sampler(), 1)
        .unwrap()
        .with_exec_mode(ExecMode::Sequential);
    let par = seq.clone().with_exec_mode(ExecMode::Parallel);
    assert_eq!(
        seq.final_representations(&g).unwrap(),
        par.final_representations(&g).unwrap()
    );
}

#[test]
fn neighbor_storage_order_does_not_matter() {
    let edges = [(0, 0, 5), (0, 1, 3), (1, 1, 4), (1, 0, 2), (0, 2, 1)];
    let mut reversed = edges;
    reversed.reverse();
    let a = InteractionGraph::from_indexed_edges(2, 3, 5, &edges).unwrap();
    let b = InteractionGraph::from_indexed_edges(2, 3, 5, &reversed).unwrap();
    let m = GnnModel::new(&a, config(Aggregator::Attention, 2), sampler(), 4).unwrap();
    assert_eq!(
        m.final_representations(&a).unwrap(),
        m.final_representations(&b).unwrap()
    );
}

fn all_pairs(g: &InteractionGraph) -> Vec<(usize, usize, bool)> {
    (0..g.n_users())
        .flat_map(|u| (0..g.n_items()).map(move |i| (u, i)))
        .map(|(u, i)| (u, i, g.has_edge(u, i)))
        .collect()
}

#[test]
fn gradients_match_finite_differences() {
    let g = fixture();
    for aggregator in [Aggregator::Mean, Aggregator::Attention, Aggregator::Pooling] {
        for head in [Head::Dot, Head::Mlp] {
            let cfg = ModelConfig {
                head,
                ..config(aggregator, 2)
            };
            let mut m = GnnModel::new(&g, cfg, sampler(), 3).unwrap();
            m.params_mut().randomize(0.5, &mut crate::rng::rng_from(3));
            let s = SampledAdjacency::build(&g, m.sampler(), 0, ExecMode::Sequential).unwrap();
            let report = m
                .check_gradients(&g, &s, &all_pairs(&g), 0.01, 1e-5)
                .unwrap();
            assert!(
                report.max_rel_error < 1e-4,
                "{aggregator} {head}: {report:?}"
            );
        }
    }
}

#[test]
fn objective_matches_reference_scores() {
    let g = fixture();
    let mut m = GnnModel::new(&g, config(Aggregator::Attention, 2), sampler(), 5).unwrap();
    let s = SampledAdjacency::build(&g, m.sampler(), 0, ExecMode::Sequential).unwrap();
    let (ru, ri) = reference(&m, &g, &s);
    let pairs = all_pairs(&g);
    let want: f64 = pairs
        .iter()
        .map(|&(u, i, y)| {
            let p = predict(&ru[u], &ri[i], None).unwrap();
            -(if y { p } else { 1.0 - p }).ln()
        })
        .sum();
    let got = m.batch_objective(&g, &s, &pairs, 0.0, false).unwrap();
    assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    assert_eq!(m.batch_objective(&g, &s, &[], 0.0, false).unwrap(), 0.0);
}

#[test]
fn regularisation_is_monotone_in_lambda() {
    let g = fixture();
    let mut m = GnnModel::new(&g, config(Aggregator::Pooling, 1), sampler(), 5).unwrap();
    let s = m.sampled_neighbors(&g, 0).unwrap();
    let pairs = all_pairs(&g);
    let l0 = m.batch_objective(&g, &s, &pairs, 0.0, false).unwrap();
    let l1 = m.batch_objective(&g, &s, &pairs, 0.1, false).unwrap();
    let l2 = m.batch_objective(&g, &s, &pairs, 0.2, false).unwrap();
    assert!(l0 < l1 && l1 < l2);

    let mut zero = m.clone();
    let ids: Vec<_> = zero.params().ids().collect();
    for id in ids {
        zero.params_mut().value_mut(id).fill(0.0);
    }
    let data = zero.batch_objective(&g, &s, &pairs, 0.0, false).unwrap();
    assert_eq!(
        zero.batch_objective(&g, &s, &pairs, 0.5, false).unwrap(),
        data
    );
    assert_eq!(data, pairs.len() as f64 * 2f64.ln());
}

#[test]
fn lookup_contract() {
    let g = fixture();
    let m = GnnModel::new(&g, config(Aggregator::Mean, 1), sampler(), 1).unwrap();
    let bound = xavier_bound(4, 4);
    let row = m.embed_lookup(EmbeddingKind::User, 3).unwrap();
    assert!(row.iter().all(|v| v.abs() <= bound));
    assert_eq!(row, m.embed_lookup(EmbeddingKind::User, 3).unwrap());
    assert!(m.embed_lookup(EmbeddingKind::Item, 5).is_err());
    assert!(m.embed_lookup(EmbeddingKind::Rating, 4).is_ok());

    // d/de_u of e_u · c is c for row u and zero elsewhere
    let mut store = m.params().clone();
    let id = m.embedding_id(EmbeddingKind::User);
    let mut tape = Tape::new(ExecMode::Sequential);
    let e = tape.gather_param(&store, id, vec![2]).unwrap();
    let c = tape.constant(Matrix::from_rows(&[[0.5, -1.0, 2.0, 3.0]]));
    let y = tape.row_dot(e, c).unwrap();
    let y = tape.sum(y);
    tape.backward(y, &mut store).unwrap();
    for r in 0..4 {
        let want: &[f64] = if r == 2 {
            &[0.5, -1.0, 2.0, 3.0]
        } else {
            &[0.0; 4]
        };
        assert_eq!(store.grad(id).row(r), want);
    }
}

#[test]
fn zero_layers_is_matrix_factorisation() {
    let g = fixture();
    let m = GnnModel::new(&g, config(Aggregator::Attention, 0), sampler(), 12).unwrap();
    assert_eq!(m.params().len(), 3);
    let bpr = BprModel::from_factors(
        m.params()
            .value(m.embedding_id(EmbeddingKind::User))
            .clone(),
        m.params()
            .value(m.embedding_id(EmbeddingKind::Item))
            .clone(),
    )
    .unwrap();
    let scorer = m.scorer(&g).unwrap();
    for u in 0..4 {
        for i in 0..5 {
            let s = bpr.bpr_score(u, i).unwrap();
            assert_eq!(scorer.score(u, i), s);
            let (eu, ei) = (
                m.embed_lookup(EmbeddingKind::User, u).unwrap(),
                m.embed_lookup(EmbeddingKind::Item, i).unwrap(),
            );
            assert_eq!(predict(&eu, &ei, None).unwrap(), sigmoid_scalar(s));
        }
    }
}

#[test]
fn mlp_head_scorer_matches_predict() {
    let g = fixture();
    let cfg = ModelConfig {
        head: Head::Mlp,
        ..config(Aggregator::Mean, 1)
    };
    let m = GnnModel::new(&g, cfg, sampler(), 2).unwrap();
    let (u, i) = m.final_representations(&g).unwrap();
    let scorer = m.scorer(&g).unwrap();
    let head = m.head().unwrap();
    let p = predict(u.row(1), i.row(3), Some(&head)).unwrap();
    assert!((sigmoid_scalar(scorer.score(1, 3)) - p).abs() < 1e-15);
    assert!(relu_scalar(p) > 0.0);
}

#[test]
fn rejects_mismatched_graph() {
    let g = fixture();
    let m = GnnModel::new(&g, config(Aggregator::Mean, 1), sampler(), 2).unwrap();
    let other = InteractionGraph::from_indexed_edges(2, 2, 5, &[(0, 0, 1)]).unwrap();
    assert!(m.final_representations(&other).is_err());
    assert!(GnnModel::new(
        &g,
        ModelConfig {
            dim: 0,
            ..*m.config()
        },
        sampler(),
        0
    )
    .is_err());
}
