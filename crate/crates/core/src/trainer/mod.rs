//! Simulator-free policy refinement: status rewards, buffer-normalized
//! advantages, the clipped surrogate and a KL anchor to the frozen baseline.

mod buffer;
mod refine;
mod update;

use serde::{Deserialize, Serialize};

pub use buffer::{fill_buffer, ReplayBuffer, ReplaySequence, ReplayTriplet};
pub use refine::{refine, EpochRecord, RefineOutcome};
pub use update::{objective, update_policy, ObjectiveEval, UpdateStats};

use crate::detectors::CandidateStatus;
use crate::error::{Error, Result};
use crate::policy::{log_softmax, FeatureVector, PolicyParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardTable {
    pub human_response: f64,
    pub pass_strategy: f64,
    pub pass_non_strategy: f64,
    pub bad: f64,
    /// Added, not substituted, above the threshold.
    pub length_penalty: f64,
    pub length_threshold: usize,
}

impl Default for RewardTable {
    fn default() -> Self {
        Self {
            human_response: 10.0,
            pass_strategy: 3.0,
            pass_non_strategy: 2.0,
            bad: -2.0,
            length_penalty: -3.0,
            length_threshold: 50,
        }
    }
}

impl RewardTable {
    pub fn validate(&self) -> Result<()> {
        if !(self.human_response > self.pass_strategy
            && self.pass_strategy > self.pass_non_strategy
            && self.pass_non_strategy > self.bad)
        {
            return Err(Error::Config(
                "rewards must satisfy human > strategy > non-strategy > bad".into(),
            ));
        }
        Ok(())
    }
}

/// Status reward plus the length penalty; the human response is never penalized.
pub fn reward_for(status: CandidateStatus, token_length: usize, table: &RewardTable) -> f64 {
    let base = match status {
        CandidateStatus::HumanResponse => return table.human_response,
        CandidateStatus::PassStrategy => table.pass_strategy,
        CandidateStatus::PassNonStrategy => table.pass_non_strategy,
        CandidateStatus::Repetition | CandidateStatus::Inconsistency => table.bad,
    };
    if token_length > table.length_threshold {
        base + table.length_penalty
    } else {
        base
    }
}

/// Z-score with population std; all zeros when std < 1e-12.
pub fn normalize_rewards(rewards: &[f64]) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std < 1e-12 {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

/// min(r·A, clip(r, 1−ε, 1+ε)·A).
pub fn ppo_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// True when the clipped term is the active (strictly smaller) one.
pub fn surrogate_is_clipped(ratio: f64, advantage: f64, epsilon: f64) -> bool {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    clipped * advantage < ratio * advantage
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// KL(q ‖ p_θ), as the objective is written.
    #[default]
    ReferenceToPolicy,
    /// KL(p_θ ‖ q).
    PolicyToReference,
}

/// Σ_v a_v log(a_v / b_v) from log-probabilities.
pub fn kl_from_logs(log_a: &[f64], log_b: &[f64]) -> f64 {
    log_a
        .iter()
        .zip(log_b)
        .map(|(la, lb)| {
            let a = la.exp();
            if a == 0.0 {
                0.0
            } else {
                a * (la - lb)
            }
        })
        .sum()
}

/// Σ_v q_v log(q_v / p_v) over explicit distributions.
pub fn kl_categorical(q: &[f64], p: &[f64]) -> f64 {
    q.iter()
        .zip(p)
        .map(|(&qv, &pv)| if qv == 0.0 { 0.0 } else { qv * (qv / pv).ln() })
        .sum()
}

/// Mean exact KL between the reference and the policy over probe positions.
pub fn kl_to_reference(
    theta: &PolicyParams,
    q: &PolicyParams,
    probes: &[FeatureVector],
    direction: KlDirection,
) -> Result<f64> {
    theta.check_compatible(q)?;
    if probes.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for fv in probes {
        let lp = log_softmax(&theta.logits(fv))?;
        let lq = log_softmax(&q.logits(fv))?;
        total += match direction {
            KlDirection::ReferenceToPolicy => kl_from_logs(&lq, &lp),
            KlDirection::PolicyToReference => kl_from_logs(&lp, &lq),
        };
    }
    Ok(total / probes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub n_candidates: usize,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub kl_direction: KlDirection,
    pub inner_epochs: usize,
    pub learning_rate: f64,
    pub outer_epochs: usize,
    pub dialogues_per_epoch: usize,
    pub seed: u64,
    pub rewards: RewardTable,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            n_candidates: 10,
            clip_epsilon: 0.2,
            kl_beta: 0.1,
            kl_direction: KlDirection::ReferenceToPolicy,
            inner_epochs: 4,
            learning_rate: 0.1,
            outer_epochs: 35,
            dialogues_per_epoch: 1,
            seed: 0,
            rewards: RewardTable::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::Config("clip_epsilon must be in (0, 1)".into()));
        }
        if !(self.kl_beta >= 0.0) {
            return Err(Error::Config("kl_beta must be non-negative".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.n_candidates == 0
            || self.inner_epochs == 0
            || self.outer_epochs == 0
            || self.dialogues_per_epoch == 0
        {
            return Err(Error::Config("trainer counts must be at least 1".into()));
        }
        self.rewards.validate()
    }
}
