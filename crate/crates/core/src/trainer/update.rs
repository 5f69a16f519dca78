//! The regularized clipped objective, its exact gradient, and the inner update loop.

use serde::{Deserialize, Serialize};

use super::{kl_from_logs, ppo_surrogate, surrogate_is_clipped, KlDirection, ReplayBuffer, TrainerConfig};
use crate::error::{Error, Result};
use crate::policy::{log_softmax, PolicyParams};

/// Value and gradient of mean surrogate − β·mean KL at one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub value: f64,
    pub surrogate: f64,
    pub kl: f64,
    pub mean_ratio: f64,
    /// Per sequence, buffer order: whether the clipped branch is active.
    pub clipped: Vec<bool>,
    pub gradient: Vec<f64>,
}

/// Evaluates the objective on a normalized buffer.
pub fn objective(
    theta: &PolicyParams,
    buffer: &ReplayBuffer,
    q: &PolicyParams,
    config: &TrainerConfig,
) -> Result<ObjectiveEval> {
    theta.check_compatible(q)?;
    if buffer.is_empty() {
        return Err(Error::invalid("replay buffer is empty"));
    }
    if !buffer.is_normalized() {
        return Err(Error::invalid("replay buffer has no advantages yet"));
    }
    let fc = *theta.feature_config();
    let v = theta.vocab_size();
    let n_seq = buffer.sequence_count() as f64;
    let n_pos: usize = buffer
        .triplets()
        .iter()
        .flat_map(|t| &t.sequences)
        .map(|s| s.tokens.len())
        .sum();
    let kl_scale = config.kl_beta / n_pos as f64;

    let mut gradient = vec![0.0; theta.weights().len()];
    let mut clipped = Vec::with_capacity(buffer.sequence_count());
    let (mut surrogate, mut kl_total, mut ratio_total) = (0.0, 0.0, 0.0);
    let mut dz = vec![0.0; v];
    for t in buffer.triplets() {
        for (s, &adv) in t.sequences.iter().zip(&t.advantages) {
            let mut positions = Vec::with_capacity(s.tokens.len());
            let mut logprob = 0.0;
            for (fv, y) in fc.positions(&t.cond, &s.tokens) {
                let lp = log_softmax(&theta.logits(&fv))?;
                let lq = log_softmax(&q.logits(&fv))?;
                logprob += lp[y as usize];
                positions.push((fv, y, lp, lq));
            }
            let ratio = (logprob - s.old_logprob).exp();
            if !ratio.is_finite() {
                return Err(Error::NonFinite(format!(
                    "ratio for turn {} of {}: logprob {logprob}, old {}",
                    t.turn_index, t.dialogue_id, s.old_logprob
                )));
            }
            ratio_total += ratio;
            surrogate += ppo_surrogate(ratio, adv, config.clip_epsilon);
            let is_clipped = surrogate_is_clipped(ratio, adv, config.clip_epsilon);
            clipped.push(is_clipped);
            let coef = if is_clipped { 0.0 } else { adv * ratio / n_seq };

            for (fv, y, lp, lq) in positions {
                let kl = match config.kl_direction {
                    KlDirection::ReferenceToPolicy => kl_from_logs(&lq, &lp),
                    KlDirection::PolicyToReference => kl_from_logs(&lp, &lq),
                };
                kl_total += kl;
                for j in 0..v {
                    let p = lp[j].exp();
                    let kl_grad = match config.kl_direction {
                        KlDirection::ReferenceToPolicy => p - lq[j].exp(),
                        KlDirection::PolicyToReference => p * (lp[j] - lq[j] - kl),
                    };
                    dz[j] = -coef * p - kl_scale * kl_grad;
                }
                dz[y as usize] += coef;
                for &f in fv.active() {
                    for (g, d) in gradient[f * v..(f + 1) * v].iter_mut().zip(&dz) {
                        *g += d;
                    }
                }
            }
        }
    }
    let surrogate = surrogate / n_seq;
    let kl = kl_total / n_pos as f64;
    let value = surrogate - config.kl_beta * kl;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!(
            "objective: surrogate {surrogate}, kl {kl}"
        )));
    }
    Ok(ObjectiveEval {
        value,
        surrogate,
        kl,
        mean_ratio: ratio_total / n_seq,
        clipped,
        gradient,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub mean_reward: f64,
    /// Mean ratio at the last inner step.
    pub mean_ratio: f64,
    /// KL to the reference before the first inner step.
    pub kl: f64,
    /// Gradient norm of the first inner step.
    pub grad_norm: f64,
    pub objective_before: f64,
}

/// Runs `inner_epochs` gradient-ascent steps on the buffer, then clears it.
pub fn update_policy(
    theta: &PolicyParams,
    buffer: &mut ReplayBuffer,
    q: &PolicyParams,
    config: &TrainerConfig,
) -> Result<(PolicyParams, UpdateStats)> {
    if buffer.is_empty() {
        return Err(Error::invalid("replay buffer is empty"));
    }
    if !buffer.is_normalized() {
        buffer.normalize();
    }
    let mut params = theta.clone();
    let mut stats = UpdateStats {
        mean_reward: buffer.mean_reward(),
        mean_ratio: 1.0,
        kl: 0.0,
        grad_norm: 0.0,
        objective_before: 0.0,
    };
    for step in 0..config.inner_epochs {
        let eval = objective(&params, buffer, q, config)?;
        if step == 0 {
            stats.kl = eval.kl;
            stats.grad_norm = eval.gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
            stats.objective_before = eval.value;
        }
        stats.mean_ratio = eval.mean_ratio;
        params.add_scaled(&eval.gradient, config.learning_rate);
        if !params.is_finite() {
            return Err(Error::NonFinite(format!(
                "weights after inner step {step} (objective {}, kl {})",
                eval.value, eval.kl
            )));
        }
    }
    buffer.clear();
    Ok((params, stats))
}
