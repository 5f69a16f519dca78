//! Replay triplets collected from teacher-forced dialogue prefixes.

use serde::{Deserialize, Serialize};

use super::{normalize_rewards, reward_for, TrainerConfig};
use crate::detectors::{annotate, CandidateStatus, DetectorConfig};
use crate::dialogue::Dialogue;
use crate::error::{Error, Result};
use crate::policy::{
    derive_seed, sequence_logprob, Conditioning, DecodingConfig, FeatureVector, Policy,
    ResponseGenerator,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySequence {
    pub tokens: Vec<u32>,
    pub status: CandidateStatus,
    /// log p under the params at collection time.
    pub old_logprob: f64,
}

/// One system turn: the human response followed by the sampled candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayTriplet {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub cond: Conditioning,
    pub sequences: Vec<ReplaySequence>,
    pub rewards: Vec<f64>,
    /// Empty until the buffer is normalized.
    pub advantages: Vec<f64>,
}

/// Triplets of one collection phase.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayBuffer {
    triplets: Vec<ReplayTriplet>,
}

impl ReplayBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend(&mut self, triplets: Vec<ReplayTriplet>) {
        self.triplets.extend(triplets);
    }

    pub fn triplets(&self) -> &[ReplayTriplet] {
        &self.triplets
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn clear(&mut self) {
        self.triplets.clear();
    }

    pub fn sequence_count(&self) -> usize {
        self.triplets.iter().map(|t| t.sequences.len()).sum()
    }

    pub fn mean_reward(&self) -> f64 {
        let n = self.sequence_count();
        if n == 0 {
            return 0.0;
        }
        self.triplets.iter().flat_map(|t| &t.rewards).sum::<f64>() / n as f64
    }

    /// Fraction of sampled (non-human) sequences that passed.
    pub fn pass_rate(&self) -> f64 {
        let (mut pass, mut total) = (0usize, 0usize);
        for s in self.triplets.iter().flat_map(|t| &t.sequences) {
            if s.status != CandidateStatus::HumanResponse {
                total += 1;
                pass += s.status.is_pass() as usize;
            }
        }
        if total == 0 {
            0.0
        } else {
            pass as f64 / total as f64
        }
    }

    /// Advantages = rewards z-scored across the whole buffer.
    pub fn normalize(&mut self) {
        let flat: Vec<f64> = self.triplets.iter().flat_map(|t| t.rewards.clone()).collect();
        let mut adv = normalize_rewards(&flat).into_iter();
        for t in &mut self.triplets {
            t.advantages = adv.by_ref().take(t.rewards.len()).collect();
        }
    }

    pub fn is_normalized(&self) -> bool {
        self.triplets
            .iter()
            .all(|t| t.advantages.len() == t.sequences.len())
    }

    /// Every (conditioning, prefix) position of every stored sequence.
    pub fn probe_positions(&self, policy_features: &crate::policy::FeatureConfig) -> Vec<FeatureVector> {
        self.triplets
            .iter()
            .flat_map(|t| {
                t.sequences.iter().flat_map(move |s| {
                    (0..s.tokens.len()).map(move |i| policy_features.features(&t.cond, &s.tokens[..i]))
                })
            })
            .collect()
    }
}

/// Teacher-forced collection over every system turn of `dialogue`.
///
/// Profiles advance with the golden turns only; candidates never enter the history.
pub fn fill_buffer(
    policy: &Policy,
    dialogue: &Dialogue,
    config: &TrainerConfig,
    decoding: &DecodingConfig,
    detector: &DetectorConfig,
    seed: u64,
) -> Result<Vec<ReplayTriplet>> {
    let contexts = dialogue.sys_contexts();
    if contexts.is_empty() {
        return Err(Error::invalid(format!("dialogue {} has no system turn", dialogue.id)));
    }
    let mut out = Vec::with_capacity(contexts.len());
    for (turn_index, ctx) in contexts {
        let cond = Conditioning::from_context(&ctx);
        let human = &dialogue.turns[turn_index].utterance;
        let candidates = policy.generate_n(
            &ctx,
            decoding,
            config.n_candidates,
            derive_seed(seed, turn_index as u64),
        )?;
        let statuses = annotate(&ctx, &candidates, Some(human), detector);
        let mut sequences = Vec::with_capacity(candidates.len() + 1);
        sequences.push(ReplaySequence {
            tokens: human.tokens().to_vec(),
            status: statuses[0],
            old_logprob: sequence_logprob(&policy.params, &cond, human.tokens())?,
        });
        for (c, &status) in candidates.iter().zip(&statuses[1..]) {
            sequences.push(ReplaySequence {
                tokens: c.utterance.tokens().to_vec(),
                status,
                old_logprob: c.logprob,
            });
        }
        let rewards = sequences
            .iter()
            .map(|s| reward_for(s.status, s.tokens.len() - 1, &config.rewards))
            .collect();
        out.push(ReplayTriplet {
            dialogue_id: dialogue.id.clone(),
            turn_index,
            cond,
            sequences,
            rewards,
            advantages: Vec::new(),
        });
    }
    Ok(out)
}
