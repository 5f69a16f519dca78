//! Logistic imitator of human candidate selection.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DemoRecord;
use crate::detectors::{contradictions, extract_assertions, max_context_overlap, DetectorConfig};
use crate::dialogue::{is_strategy, Context, DialogueAct};
use crate::error::{Error, Result};
use crate::policy::{turn_bucket, Candidate};

const N_ACTS: usize = DialogueAct::ALL.len();
const ACT_OFFSET: usize = 5;

/// Length, mean logprob, strategy, overlap, contradictions, primary act
/// one-hot, duplicate, turn bucket, bias.
pub const IMITATOR_DIM: usize = ACT_OFFSET + N_ACTS + 3;

/// Fixed-order features for one candidate; `siblings` are the other
/// candidates generated for the same turn.
pub fn imitator_features(
    ctx: &Context<'_>,
    candidate: &Candidate,
    siblings: &[&Candidate],
    detector: &DetectorConfig,
) -> Vec<f64> {
    let mut x = vec![0.0; IMITATOR_DIM];
    x[0] = candidate.word_len() as f64 / 50.0;
    x[1] = candidate.mean_token_logprob();
    x[2] = if is_strategy(candidate.acts) { 1.0 } else { 0.0 };
    x[3] = max_context_overlap(ctx, &candidate.utterance, detector).0;
    let assertions = extract_assertions(ctx, &candidate.utterance, candidate.acts);
    x[4] = contradictions(&ctx.profiles, &assertions) as f64;
    if let Some(act) = candidate.acts.primary() {
        x[ACT_OFFSET + act.index()] = 1.0;
    }
    let duplicate = siblings
        .iter()
        .any(|s| s.utterance.tokens() == candidate.utterance.tokens());
    x[ACT_OFFSET + N_ACTS] = if duplicate { 1.0 } else { 0.0 };
    x[ACT_OFFSET + N_ACTS + 1] = turn_bucket(ctx.turn_index()) as f64 / 2.0;
    x[IMITATOR_DIM - 1] = 1.0;
    x
}

/// Features for every candidate of a turn, each against all the others.
pub fn turn_features(ctx: &Context<'_>, candidates: &[Candidate], detector: &DetectorConfig) -> Vec<Vec<f64>> {
    (0..candidates.len())
        .map(|i| {
            let siblings: Vec<&Candidate> = candidates
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, c)| c)
                .collect();
            imitator_features(ctx, &candidates[i], &siblings, detector)
        })
        .collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Weights over [`imitator_features`]; the last coordinate is the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImitatorParams {
    pub weights: Vec<f64>,
    pub threshold: f64,
}

impl Default for ImitatorParams {
    fn default() -> Self {
        Self::zeros()
    }
}

impl ImitatorParams {
    /// Scores every candidate 0.5.
    pub fn zeros() -> Self {
        Self {
            weights: vec![0.0; IMITATOR_DIM],
            threshold: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != IMITATOR_DIM {
            return Err(Error::Mismatch(format!(
                "imitator has {} weights, expected {IMITATOR_DIM}",
                self.weights.len()
            )));
        }
        if !self.weights.iter().all(|w| w.is_finite()) {
            return Err(Error::NonFinite("imitator weights".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid("imitator threshold must be in (0, 1)"));
        }
        Ok(())
    }

    /// SHA-256 prefix over the threshold and weight bits.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.threshold.to_le_bytes());
        for w in &self.weights {
            h.update(w.to_le_bytes());
        }
        crate::dialogue::hex16(&h.finalize())
    }

    pub fn linear(&self, features: &[f64]) -> f64 {
        self.weights.iter().zip(features).map(|(w, x)| w * x).sum()
    }

    /// In (0, 1).
    pub fn score(&self, features: &[f64]) -> f64 {
        sigmoid(self.linear(features))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let params: Self = serde_json::from_str(&raw)?;
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImitatorTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Ridge penalty on all weights except the bias.
    pub l2: f64,
    /// Fraction of demonstration records held out for accuracy.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for ImitatorTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            learning_rate: 0.5,
            l2: 1e-4,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Mean logistic loss plus ridge, and its gradient.
pub fn imitator_loss(weights: &[f64], xs: &[Vec<f64>], ys: &[f64], l2: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; weights.len()];
    let mut loss = 0.0;
    let n = xs.len().max(1) as f64;
    for (x, &y) in xs.iter().zip(ys) {
        let z: f64 = weights.iter().zip(x).map(|(w, v)| w * v).sum();
        // log(1 + e^z) - y z, computed stably
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
        let d = sigmoid(z) - y;
        for (g, v) in grad.iter_mut().zip(x) {
            *g += d * v;
        }
    }
    loss /= n;
    grad.iter_mut().for_each(|g| *g /= n);
    let last = weights.len().saturating_sub(1);
    for (&w, g) in weights.iter().zip(grad.iter_mut()).take(last) {
        loss += 0.5 * l2 * w * w;
        *g += l2 * w;
    }
    (loss, grad)
}

fn flatten(records: &[&DemoRecord]) -> (Vec<Vec<f64>>, Vec<f64>) {
    records
        .iter()
        .flat_map(|r| r.candidates.iter())
        .map(|c| (c.features.clone(), c.selected as f64))
        .unzip()
}

/// Full-batch gradient descent from zero weights. Records, not
/// candidates, are split so siblings never straddle the split.
/// Returns the params and held-out accuracy.
pub fn train_imitator(demos: &[DemoRecord], config: &ImitatorTrainConfig) -> Result<(ImitatorParams, f64)> {
    if !(config.val_fraction > 0.0 && config.val_fraction < 1.0) {
        return Err(Error::invalid("val_fraction must be in (0, 1)"));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) || config.l2 < 0.0 {
        return Err(Error::invalid("learning_rate must be positive and l2 non-negative"));
    }
    if demos.len() < 2 {
        return Err(Error::invalid("need at least 2 demonstration records"));
    }
    for d in demos {
        d.validate()?;
    }
    let labels = demos.iter().flat_map(|d| d.candidates.iter().map(|c| c.selected));
    let positives = labels.clone().filter(|&s| s == 1).count();
    if positives == 0 || positives == labels.count() {
        return Err(Error::invalid("demonstrations contain a single class"));
    }

    let mut order: Vec<&DemoRecord> = demos.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let n_val = ((demos.len() as f64 * config.val_fraction).round() as usize).clamp(1, demos.len() - 1);
    let (val, train) = order.split_at(n_val);
    let (xs, ys) = flatten(train);
    let (vx, vy) = flatten(val);

    let mut params = ImitatorParams::zeros();
    for _ in 0..config.epochs {
        let (_, grad) = imitator_loss(&params.weights, &xs, &ys, config.l2);
        for (w, g) in params.weights.iter_mut().zip(&grad) {
            *w -= config.learning_rate * g;
        }
    }
    params.validate()?;
    let correct = vx
        .iter()
        .zip(&vy)
        .filter(|(x, &y)| (params.score(x) >= params.threshold) == (y == 1.0))
        .count();
    Ok((params, correct as f64 / vx.len() as f64))
}
