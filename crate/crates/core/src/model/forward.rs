//! Batched forward pass on the tape.
//!
//! The first fusion layer is split by input block, `W1 [n ⊕ r] = W1ₙ n + W1ᵣ r`,
//! so the neighbour half is computed once per distinct neighbour, the rating
//! half once per level, and the rest once per distinct `(neighbour, rating)`
//! pair. The attention hidden layer is split the same way between the
//! interaction vector and the centre node. Only `O(d)` work remains per edge.
//! The attention output bias is a constant shift inside a softmax and is left
//! out here.

use super::plan::{BatchPlan, SidePlan};
use super::{side_index, Aggregator, GnnModel, ModelError};
use crate::graph::{InteractionGraph, Side};
use crate::numeric::{Matrix, ParamId, Tape, Var};
use crate::sampler::SampledAdjacency;

pub(crate) struct ForwardOut {
    /// Final representations, rows aligned with the plan's top-level node sets.
    pub users: Var,
    pub items: Var,
    /// Every parameter leaf read by the pass, for regularisation.
    pub leaves: Vec<Var>,
}

struct Leaves {
    slots: Vec<Option<Var>>,
    order: Vec<Var>,
}

impl Leaves {
    fn get(&mut self, tape: &mut Tape, model: &GnnModel, id: ParamId) -> Var {
        *self.slots[id.0].get_or_insert_with(|| {
            let v = tape.param(&model.store, id);
            self.order.push(v);
            v
        })
    }
}

pub(crate) fn forward(
    model: &GnnModel,
    tape: &mut Tape,
    plan: &BatchPlan,
) -> Result<ForwardOut, ModelError> {
    let mut leaves = Leaves {
        slots: vec![None; model.store.len()],
        order: Vec::new(),
    };
    let mut users = tape.gather_param(&model.store, model.ids.user_emb, plan.users[0].clone())?;
    let mut items = tape.gather_param(&model.store, model.ids.item_emb, plan.items[0].clone())?;
    leaves.order.push(users);
    leaves.order.push(items);
    if plan.layers() > 0 {
        let rating = leaves.get(tape, model, model.ids.rating_emb);
        for (l, step) in plan.steps.iter().enumerate() {
            let layer = l + 1;
            let next_users = side_layer(
                model,
                tape,
                &mut leaves,
                &step[0],
                Side::User,
                layer,
                users,
                items,
                rating,
            )?;
            let next_items = side_layer(
                model,
                tape,
                &mut leaves,
                &step[1],
                Side::Item,
                layer,
                items,
                users,
                rating,
            )?;
            users = next_users;
            items = next_items;
        }
    }
    Ok(ForwardOut {
        users,
        items,
        leaves: leaves.order,
    })
}

#[allow(clippy::too_many_arguments)]
fn side_layer(
    model: &GnnModel,
    tape: &mut Tape,
    leaves: &mut Leaves,
    step: &SidePlan,
    side: Side,
    layer: usize,
    same_prev: Var,
    other_prev: Var,
    rating: Var,
) -> Result<Var, ModelError> {
    let d = model.config.dim;
    let sp = model.ids.sides[side_index(side)];
    let lp = model.ids.layers[layer - 1][side_index(side)];
    let slope = model.config.leaky_slope;
    let mut p = |tape: &mut Tape, id| leaves.get(tape, model, id);

    let centers = tape.gather(same_prev, step.self_rows.clone())?;
    let self_in = match &step.relations {
        Some(rel) if !rel.rows.is_empty() => {
            let nb = tape.gather(same_prev, rel.rows.clone())?;
            let w = tape.constant(Matrix::from_vec(rel.weights.len(), 1, rel.weights.clone())?);
            let un = tape.segment_weighted_sum(nb, w, rel.offsets.clone())?;
            tape.add(centers, un)?
        }
        _ => centers,
    };
    let (self_w, self_b) = (p(tape, lp.self_w), p(tape, lp.self_b));
    let self_msg = tape.linear(self_in, self_w, Some(self_b))?;
    if step.edge_pair.is_empty() {
        return Ok(tape.leaky_relu(self_msg, slope));
    }

    let (fw1, fb1, fw2, fb2) = (
        p(tape, sp.fuse_w1),
        p(tape, sp.fuse_b1),
        p(tape, sp.fuse_w2),
        p(tape, sp.fuse_b2),
    );
    let nb = tape.gather(other_prev, step.nbr_rows.clone())?;
    let nb_part = tape.linear_cols(nb, fw1, 0..d, None)?;
    let rating_part = tape.linear_cols(rating, fw1, d..2 * d, Some(fb1))?;
    let nb_pairs = tape.gather(nb_part, step.pair_nbr.clone())?;
    let rating_pairs = tape.gather(rating_part, step.pair_level.clone())?;
    let pre = tape.add(nb_pairs, rating_pairs)?;
    let hidden = tape.relu(pre);
    let x = tape.linear(hidden, fw2, Some(fb2))?;

    let agg_in = match model.config.aggregator {
        Aggregator::Mean => {
            let xe = tape.gather(x, step.edge_pair.clone())?;
            let w = Matrix::from_vec(step.mean_weights.len(), 1, step.mean_weights.clone())?;
            let w = tape.constant(w);
            tape.segment_weighted_sum(xe, w, step.offsets.clone())?
        }
        Aggregator::Attention => {
            let [aw1, ab1, aw2, _] = sp.attn.expect("attention parameters");
            let (aw1, ab1, aw2) = (p(tape, aw1), p(tape, ab1), p(tape, aw2));
            let x_part = tape.linear_cols(x, aw1, 0..d, None)?;
            let c_part = tape.linear_cols(centers, aw1, d..2 * d, Some(ab1))?;
            let xe_part = tape.gather(x_part, step.edge_pair.clone())?;
            let ce_part = tape.gather(c_part, step.edge_center.clone())?;
            let pre = tape.add(xe_part, ce_part)?;
            let h = tape.relu(pre);
            let scores = tape.linear(h, aw2, None)?;
            let betas = tape.segment_softmax(scores, step.offsets.clone())?;
            let xe = tape.gather(x, step.edge_pair.clone())?;
            tape.segment_weighted_sum(xe, betas, step.offsets.clone())?
        }
        Aggregator::Pooling => {
            let [pw, pb] = sp.pool.expect("pooling parameters");
            let (pw, pb) = (p(tape, pw), p(tape, pb));
            let q = tape.linear(x, pw, Some(pb))?;
            let q = tape.relu(q);
            let qe = tape.gather(q, step.edge_pair.clone())?;
            let pooled = tape.segment_max(qe, step.offsets.clone())?;
            tape.add(centers, pooled)?
        }
    };
    let (agg_w, agg_b) = (p(tape, lp.agg_w), p(tape, lp.agg_b));
    let h = tape.linear(agg_in, agg_w, Some(agg_b))?;
    let h = tape.relu(h);
    let h = tape.mask_rows(h, step.has_nbrs.clone())?;
    let out = tape.add(self_msg, h)?;
    Ok(tape.leaky_relu(out, slope))
}

/// Logits for `(user, item)` pairs given final representations.
pub(crate) fn logits(
    model: &GnnModel,
    tape: &mut Tape,
    users: Var,
    items: Var,
    leaves: &mut Vec<Var>,
) -> Result<Var, ModelError> {
    match model.ids.head {
        None => Ok(tape.row_dot(users, items)?),
        Some([w1, b1, w2, b2]) => {
            let ids = [w1, b1, w2, b2];
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(&model.store, id)).collect();
            leaves.extend(&vars);
            let cat = tape.concat_cols(users, items)?;
            let h = tape.linear(cat, vars[0], Some(vars[1]))?;
            let h = tape.relu(h);
            Ok(tape.linear(h, vars[2], Some(vars[3]))?)
        }
    }
}

pub(crate) fn objective(
    model: &GnnModel,
    tape: &mut Tape,
    graph: &InteractionGraph,
    sampled: &SampledAdjacency,
    pairs: &[(usize, usize, bool)],
    lambda: f64,
) -> Result<Var, ModelError> {
    let users: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let items: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let plan = BatchPlan::build(graph, sampled, model.config.layers, &users, &items)?;
    let mut out = forward(model, tape, &plan)?;
    let urows = users
        .iter()
        .map(|&u| plan.position(Side::User, u).expect("target in plan"))
        .collect();
    let irows = items
        .iter()
        .map(|&i| plan.position(Side::Item, i).expect("target in plan"))
        .collect();
    let ug = tape.gather(out.users, urows)?;
    let ig = tape.gather(out.items, irows)?;
    let z = logits(model, tape, ug, ig, &mut out.leaves)?;
    let labels: Vec<bool> = pairs.iter().map(|p| p.2).collect();
    let data = tape.bce_with_logits(z, &labels)?;
    if lambda == 0.0 {
        return Ok(data);
    }
    let mut reg = tape.sum_squares(out.leaves[0]);
    for &leaf in &out.leaves[1..] {
        let s = tape.sum_squares(leaf);
        reg = tape.add(reg, s)?;
    }
    let reg = tape.scale(reg, 0.5 * lambda);
    Ok(tape.add(data, reg)?)
}
