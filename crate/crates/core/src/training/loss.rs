//! The training objective and its exact gradients.
//!
//! Total loss = BPR ranking loss + λ₁ · mutual-learning loss + λ₂ · L2.
//! Backpropagation is analytic throughout: the fusion logistic and the
//! softmaxes are differentiated in closed form, and the graph
//! propagation is linear and self-adjoint (its adjacency views are exact
//! transposes), so pushing gradients back through it is the same
//! propagation applied to the output gradients.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, Axis};

use crate::config::TrainConfig;
use crate::dataset::Modality;
use crate::error::{Error, Result};
use crate::model::{
    modality_score, propagate_bipartite, propagate_social, score, ForwardState, ModelInputs,
    ModelParams, ParamGrads,
};
use crate::numerics::{sigmoid, softmax_in_place, softplus};

use super::Batch;

const KL_EPS: f64 = 1e-12;

/// Mean BPR loss −ln σ(pos − neg), via the stable softplus form.
pub fn bpr_loss(pos_scores: &[f64], neg_scores: &[f64]) -> f64 {
    assert_eq!(pos_scores.len(), neg_scores.len());
    if pos_scores.is_empty() {
        return 0.0;
    }
    let sum: f64 = pos_scores
        .iter()
        .zip(neg_scores)
        .map(|(&p, &n)| softplus(-(p - n)))
        .sum();
    sum / pos_scores.len() as f64
}

/// Temperature-softened softmax over a candidate set's scores.
pub fn softened_distribution(scores: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!(
            "softening temperature must be positive, got {temperature}"
        )));
    }
    if scores.len() < 2 {
        return Err(Error::Config(format!(
            "softened distribution needs ≥2 candidates, got {}",
            scores.len()
        )));
    }
    let mut p: Vec<f64> = scores.iter().map(|&s| s / temperature).collect();
    softmax_in_place(&mut p);
    Ok(p)
}

/// Symmetric KL in the compact form Σ (p−q)·(ln p − ln q), ε-clamped.
fn symmetric_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let a = a.max(KL_EPS);
            let b = b.max(KL_EPS);
            (a - b) * (a.ln() - b.ln())
        })
        .sum()
}

/// Mutual-learning loss: per triple, the sum of symmetric KL over all
/// unordered modality pairs, averaged over triples.
/// `dists[t][m]` is modality m's softened distribution for triple t.
pub fn mutual_loss(dists: &[Vec<Vec<f64>>]) -> f64 {
    if dists.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for triple in dists {
        let c = triple.len();
        for a in 0..c {
            for b in (a + 1)..c {
                sum += symmetric_kl(&triple[a], &triple[b]);
            }
        }
    }
    sum / dists.len() as f64
}

/// The three additive terms of the objective, as they enter the total
/// (mutual already scaled by λ₁, l2 by λ₂), so `total = bpr + mutual + l2`.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: f64,
    pub bpr: f64,
    pub mutual: f64,
    pub l2: f64,
}

/// Evaluate the full objective on a batch and return exact gradients for
/// every learnable array.
pub fn total_loss(
    batch: &Batch,
    state: &ForwardState,
    params: &ModelParams,
    inputs: &ModelInputs,
    config: &TrainConfig,
) -> Result<(LossParts, ParamGrads)> {
    if batch.triples.is_empty() {
        return Err(Error::Config("cannot take a loss over an empty batch".to_string()));
    }
    let d = params.dim;
    let c = params.modalities.len();
    let nt = batch.triples.len() as f64;
    let lambda_emo = params.lambda_emotion;

    let mut g_user_final = Array2::<f64>::zeros((params.n_users, d));
    let mut g_item_final = Array2::<f64>::zeros((params.n_songs, d));
    let mut g_mod_users: BTreeMap<Modality, Array2<f64>> = params
        .modalities
        .iter()
        .map(|&m| (m, Array2::zeros((params.n_users, d))))
        .collect();
    let mut g_mod_items: BTreeMap<Modality, Array2<f64>> = params
        .modalities
        .iter()
        .map(|&m| (m, Array2::zeros((params.n_songs, d))))
        .collect();

    // BPR term. The emotion bonus shifts the margin but holds no
    // learnable parameters, so it only enters through the margin value.
    let mut bpr_sum = 0.0;
    for t in &batch.triples {
        let margin = score(state, t.user, t.pos, lambda_emo) - score(state, t.user, t.neg, lambda_emo);
        bpr_sum += softplus(-margin);
        let coeff = -sigmoid(-margin) / nt;
        let diff = &state.item_final.row(t.pos) - &state.item_final.row(t.neg);
        g_user_final.row_mut(t.user).scaled_add(coeff, &diff);
        let u_row = state.user_final.row(t.user).to_owned();
        g_item_final.row_mut(t.pos).scaled_add(coeff, &u_row);
        g_item_final.row_mut(t.neg).scaled_add(-coeff, &u_row);
    }
    let bpr = bpr_sum / nt;

    // Mutual-learning term over per-modality softened distributions.
    let do_mutual = !config.no_mutual && config.lambda_mutual > 0.0 && c >= 2;
    let mut mutual_raw = 0.0;
    if do_mutual {
        let tau = config.temperature;
        for t in &batch.triples {
            let k = t.candidates.len();
            if k < 2 {
                continue;
            }
            let dists: Vec<Vec<f64>> = params
                .modalities
                .iter()
                .map(|&m| {
                    let scores: Vec<f64> = t
                        .candidates
                        .iter()
                        .map(|&i| modality_score(state, m, t.user, i))
                        .collect();
                    softened_distribution(&scores, tau)
                })
                .collect::<Result<_>>()?;
            for a in 0..c {
                for b in (a + 1)..c {
                    mutual_raw += symmetric_kl(&dists[a], &dists[b]);
                }
            }
            // ∂symKL(p,q)/∂p_k = ln p_k − ln q_k + 1 − q_k/p_k, summed
            // over this modality's pairs, then the softmax/τ chain rule.
            let scale = config.lambda_mutual / nt;
            for (mi, &m) in params.modalities.iter().enumerate() {
                let p = &dists[mi];
                let mut g = vec![0.0; k];
                for (oj, q) in dists.iter().enumerate() {
                    if oj == mi {
                        continue;
                    }
                    for kk in 0..k {
                        let pc = p[kk].max(KL_EPS);
                        let qc = q[kk].max(KL_EPS);
                        g[kk] += pc.ln() + 1.0 - qc.ln() - qc / pc;
                    }
                }
                let dot: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
                let u_emb = state.modality_users[&m].row(t.user).to_owned();
                let gu = g_mod_users.get_mut(&m).expect("modality present");
                let gi = g_mod_items.get_mut(&m).expect("modality present");
                for kk in 0..k {
                    let ds = scale * p[kk] * (g[kk] - dot) / tau;
                    if ds == 0.0 {
                        continue;
                    }
                    let cand = t.candidates[kk];
                    gu.row_mut(t.user).scaled_add(ds, &state.modality_items[&m].row(cand));
                    gi.row_mut(cand).scaled_add(ds, &u_emb);
                }
            }
        }
        mutual_raw /= nt;
    }
    let mutual_term = config.lambda_mutual * mutual_raw;

    // User fusion backward: E = σ(Z·W), σ' = E(1−E).
    let sig_prime = &state.user_final * &state.user_final.mapv(|v| 1.0 - v);
    let g_pre = &g_user_final * &sig_prime;
    let g_fuse_weight = state.concat.t().dot(&g_pre);
    let g_concat = g_pre.dot(&params.fuse_weight.t());
    for (bi, &m) in params.modalities.iter().enumerate() {
        let block = g_concat.slice(s![.., bi * d..(bi + 1) * d]);
        *g_mod_users.get_mut(&m).expect("modality present") += &block;
    }
    let g_social_users = params
        .social_table
        .as_ref()
        .map(|_| g_concat.slice(s![.., c * d..(c + 1) * d]).to_owned());

    // Item fusion backward: E_i = Σ α_m I_m with α = softmax(logits).
    let alpha = &state.item_weights;
    let mut g_alpha = vec![0.0; c];
    for (bi, &m) in params.modalities.iter().enumerate() {
        g_mod_items
            .get_mut(&m)
            .expect("modality present")
            .scaled_add(alpha[bi], &g_item_final);
        g_alpha[bi] = g_item_final
            .iter()
            .zip(state.modality_items[&m].iter())
            .map(|(a, b)| a * b)
            .sum();
    }
    let alpha_dot: f64 = g_alpha.iter().zip(alpha.iter()).map(|(a, b)| a * b).sum();
    let mut g_logits = Array1::<f64>::zeros(c);
    for bi in 0..c {
        g_logits[bi] = alpha[bi] * (g_alpha[bi] - alpha_dot);
    }

    // Push through the (self-adjoint) propagations down to the tables
    // and projections.
    let mut grads = ParamGrads::zeros_like(params);
    for &m in &params.modalities {
        let (g_table, g_item0) = propagate_bipartite(
            inputs.bipartite,
            &g_mod_users[&m],
            &g_mod_items[&m],
            params.layers,
        )?;
        *grads.user_tables.get_mut(&m).expect("modality present") += &g_table;
        let features = inputs.features.get(&m).ok_or_else(|| {
            Error::Shape(format!("features for modality {:?} not available", m.tag()))
        })?;
        *grads.proj_weights.get_mut(&m).expect("modality present") +=
            &features.rows.t().dot(&g_item0);
        *grads.proj_biases.get_mut(&m).expect("modality present") += &g_item0.sum_axis(Axis(0));
    }
    if let (Some(g_soc), Some(g_table)) = (&g_social_users, grads.social_table.as_mut()) {
        *g_table += &propagate_social(inputs.social, g_soc, params.social_layers)?;
    }
    grads.fuse_weight += &g_fuse_weight;
    grads.item_weight_logits += &g_logits;

    // L2 over all (and only) learnable arrays.
    let mut l2_raw = 0.0;
    if config.lambda_reg > 0.0 {
        let two_lambda = 2.0 * config.lambda_reg;
        for (g_slice, (_, p_slice)) in grads.slices_mut().into_iter().zip(params.learnable_slices())
        {
            for (g, &p) in g_slice.iter_mut().zip(p_slice) {
                l2_raw += p * p;
                *g += two_lambda * p;
            }
        }
    }
    let l2_term = config.lambda_reg * l2_raw;

    let total = bpr + mutual_term + l2_term;
    if !total.is_finite() {
        return Err(Error::TrainingDiverged(format!(
            "loss became non-finite (bpr {bpr}, mutual {mutual_term}, l2 {l2_term})"
        )));
    }
    Ok((
        LossParts {
            total,
            bpr,
            mutual: mutual_term,
            l2: l2_term,
        },
        grads,
    ))
}
