//! Automatic metrics over golden-prefix contexts.

use serde::{Deserialize, Serialize};

use super::{annotate_candidates, turn_features, ImitatorParams};
use crate::detectors::{CandidateStatus, DetectorConfig};
use crate::dialogue::{is_strategy, Corpus};
use crate::error::{Error, Result};
use crate::policy::{derive_seed, perplexity, DecodingConfig, Policy, ResponseGenerator};

/// Fractions are over generated candidates unless noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub v: u32,
    pub ppl: f64,
    /// Fraction of turns where no candidate passed the filter.
    pub ooc_rate: f64,
    pub pass_rate: f64,
    /// Fraction of passing candidates scored at or above the threshold.
    pub select_rate: f64,
    pub strategy_rate: f64,
    /// Mean candidate length in words.
    pub avg_len: f64,
    pub repetition_rate: f64,
    pub inconsistency_rate: f64,
    pub turns: usize,
    pub candidates: usize,
}

impl MetricsReport {
    pub const VERSION: u32 = 1;
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Turn `k` over the corpus uses `derive_seed(seed, k)`.
pub fn eval_metrics(
    policy: &Policy,
    imitator: &ImitatorParams,
    corpus: &Corpus,
    decoding: &DecodingConfig,
    detector: &DetectorConfig,
    seed: u64,
) -> Result<MetricsReport> {
    if corpus.is_empty() {
        return Err(Error::invalid("corpus is empty"));
    }
    decoding.validate()?;
    imitator.validate()?;
    let ppl = perplexity(&policy.params, corpus)?;
    let (mut turns, mut total, mut ooc) = (0usize, 0usize, 0usize);
    let (mut pass, mut selected, mut strategy, mut rep, mut inc, mut words) = (0, 0, 0, 0, 0, 0usize);
    for d in &corpus.dialogues {
        for (_, ctx) in d.sys_contexts() {
            let mut candidates =
                policy.generate_n(&ctx, decoding, decoding.n_candidates, derive_seed(seed, turns as u64))?;
            turns += 1;
            annotate_candidates(&ctx, &mut candidates, detector);
            let features = turn_features(&ctx, &candidates, detector);
            let mut survivors = 0;
            for (c, x) in candidates.iter().zip(&features) {
                total += 1;
                words += c.word_len();
                strategy += is_strategy(c.acts) as usize;
                match c.status.expect("annotated") {
                    CandidateStatus::Repetition => rep += 1,
                    CandidateStatus::Inconsistency => inc += 1,
                    s if s.is_pass() => {
                        pass += 1;
                        survivors += 1;
                        selected += (imitator.score(x) >= imitator.threshold) as usize;
                    }
                    _ => {}
                }
            }
            ooc += (survivors == 0) as usize;
        }
    }
    Ok(MetricsReport {
        v: MetricsReport::VERSION,
        ppl,
        ooc_rate: ratio(ooc, turns),
        pass_rate: ratio(pass, total),
        select_rate: ratio(selected, pass),
        strategy_rate: ratio(strategy, total),
        avg_len: ratio(words, total),
        repetition_rate: ratio(rep, total),
        inconsistency_rate: ratio(inc, total),
        turns,
        candidates: total,
    })
}
