//! Test-time pipeline: hard filter, demonstration-trained imitator,
//! final selection with the out-of-candidate fallback, and metrics.

mod demo;
mod imitator;
mod metrics;

use serde::{Deserialize, Serialize};

pub use demo::{
    append_demo, context_digest, load_demos, reference_preference, simulate_demonstrations, DemoCandidate,
    DemoRecord,
};
pub use imitator::{
    imitator_features, imitator_loss, sigmoid, train_imitator, turn_features, ImitatorParams,
    ImitatorTrainConfig, IMITATOR_DIM,
};
pub use metrics::{eval_metrics, MetricsReport};

use crate::detectors::{annotate_response, CandidateStatus, DetectorConfig};
use crate::dialogue::Context;
use crate::error::Result;
use crate::policy::{derive_seed, Candidate, DecodingConfig, ResponseGenerator};

/// Candidates with a passing status, order preserved.
pub fn filter_candidates(annotated: &[(Candidate, CandidateStatus)]) -> Vec<Candidate> {
    annotated
        .iter()
        .filter(|(_, s)| s.is_pass())
        .map(|(c, _)| c.clone())
        .collect()
}

/// Annotates candidates in place.
pub fn annotate_candidates(ctx: &Context<'_>, candidates: &mut [Candidate], detector: &DetectorConfig) {
    for c in candidates {
        c.status = Some(annotate_response(ctx, &c.utterance, c.acts, detector).status);
    }
}

/// What happened while choosing a response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    /// All generated candidates with statuses, and scores for survivors.
    pub candidates: Vec<Candidate>,
    /// Every candidate failed the filter; the response is one extra generation.
    pub ooc: bool,
    /// No survivor reached the imitator threshold; the best survivor was used.
    pub below_threshold: bool,
    /// Index into `candidates`, `None` on the out-of-candidate path.
    pub chosen: Option<usize>,
    /// The extra generation on the out-of-candidate path.
    pub fallback: Option<Candidate>,
}

/// Index of the best survivor: highest score, then higher logprob, then lower index.
pub fn best_survivor(candidates: &[Candidate], survivors: &[usize]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for &i in survivors {
        let better = match best {
            None => true,
            Some(b) => {
                let (si, sb) = (score_of(&candidates[i]), score_of(&candidates[b]));
                si > sb || (si == sb && candidates[i].logprob > candidates[b].logprob)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

fn score_of(c: &Candidate) -> f64 {
    c.imitator_score.unwrap_or(0.0)
}

/// Generates, filters and picks one response.
pub fn select_response(
    generator: &dyn ResponseGenerator,
    imitator: &ImitatorParams,
    ctx: &Context<'_>,
    decoding: &DecodingConfig,
    detector: &DetectorConfig,
    seed: u64,
) -> Result<(Candidate, SelectionTrace)> {
    let n = decoding.n_candidates;
    let mut candidates = generator.generate_n(ctx, decoding, n, seed)?;
    annotate_candidates(ctx, &mut candidates, detector);
    let survivors: Vec<usize> = (0..candidates.len())
        .filter(|&i| candidates[i].status.is_some_and(CandidateStatus::is_pass))
        .collect();

    if survivors.is_empty() {
        let mut extra = generator.generate(ctx, decoding, derive_seed(seed, n as u64))?;
        extra.status = Some(annotate_response(ctx, &extra.utterance, extra.acts, detector).status);
        let trace = SelectionTrace {
            candidates,
            ooc: true,
            below_threshold: false,
            chosen: None,
            fallback: Some(extra.clone()),
        };
        return Ok((extra, trace));
    }

    let features = turn_features(ctx, &candidates, detector);
    for &i in &survivors {
        candidates[i].imitator_score = Some(imitator.score(&features[i]));
    }
    let chosen = best_survivor(&candidates, &survivors).expect("survivors is non-empty");
    let below_threshold = score_of(&candidates[chosen]) < imitator.threshold;
    let response = candidates[chosen].clone();
    let trace = SelectionTrace {
        candidates,
        ooc: false,
        below_threshold,
        chosen: Some(chosen),
        fallback: None,
    };
    Ok((response, trace))
}

#[cfg(test)]
mod tests;
