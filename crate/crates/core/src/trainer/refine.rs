//! The outer refinement loop with best-validation-perplexity checkpointing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fill_buffer, update_policy, ReplayBuffer, TrainerConfig};
use crate::detectors::DetectorConfig;
use crate::dialogue::Corpus;
use crate::error::{Error, Result};
use crate::policy::{derive_seed, sys_examples, DecodingConfig, Policy, PolicyParams, PositionTable};

/// One line of the training history file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_reward: f64,
    /// KL to the baseline at the start of the epoch.
    pub kl: f64,
    /// Validation perplexity after the epoch's update.
    pub val_ppl: f64,
    /// Pass rate of the candidates sampled this epoch.
    pub pass_rate: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    /// Parameters after the epoch with the lowest validation perplexity.
    pub best: PolicyParams,
    pub best_epoch: usize,
    pub baseline_val_ppl: f64,
    pub history: Vec<EpochRecord>,
}

/// Refines a copy of `q`; `q` itself is only read.
pub fn refine(
    q: &PolicyParams,
    train: &Corpus,
    val: &Corpus,
    config: &TrainerConfig,
    decoding: &DecodingConfig,
    detector: &DetectorConfig,
) -> Result<RefineOutcome> {
    config.validate()?;
    decoding.validate()?;
    q.check_vocab(&train.vocab)?;
    q.check_vocab(&val.vocab)?;
    let usable: Vec<usize> = (0..train.len())
        .filter(|&i| train.dialogues[i].sys_turns().next().is_some())
        .collect();
    if usable.is_empty() {
        return Err(Error::invalid("training corpus has no dialogue with a system turn"));
    }
    let val_table = PositionTable::build(q, &sys_examples(val))?;
    if val_table.n_tokens() == 0 {
        return Err(Error::invalid("validation corpus has no system turns"));
    }
    let baseline_val_ppl = val_table.perplexity(q)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut policy = Policy::new(q.clone(), train.vocab.clone())?;
    let mut buffer = ReplayBuffer::new();
    let mut history = Vec::with_capacity(config.outer_epochs);
    let mut best: Option<(f64, usize, PolicyParams)> = None;
    for epoch in 0..config.outer_epochs {
        for k in 0..config.dialogues_per_epoch {
            let d = &train.dialogues[usable[rng.random_range(0..usable.len())]];
            let seed = derive_seed(config.seed, (epoch * config.dialogues_per_epoch + k) as u64);
            buffer.extend(fill_buffer(&policy, d, config, decoding, detector, seed)?);
        }
        buffer.normalize();
        let pass_rate = buffer.pass_rate();
        let (next, stats) = update_policy(&policy.params, &mut buffer, q, config)?;
        policy.params = next;
        let val_ppl = val_table.perplexity(&policy.params)?;
        history.push(EpochRecord {
            epoch,
            mean_reward: stats.mean_reward,
            kl: stats.kl,
            val_ppl,
            pass_rate,
            grad_norm: stats.grad_norm,
        });
        if best.as_ref().is_none_or(|(b, _, _)| val_ppl < *b) {
            best = Some((val_ppl, epoch, policy.params.clone()));
        }
    }
    let (_, best_epoch, best) = best.expect("at least one outer epoch");
    Ok(RefineOutcome {
        best,
        best_epoch,
        baseline_val_ppl,
        history,
    })
}
