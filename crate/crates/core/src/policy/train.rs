//! Sequence log-probabilities, their gradients, MLE training and perplexity.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::dist::{log_softmax, softmax};
use super::features::{Conditioning, FeatureVector};
use super::params::PolicyParams;
use crate::dialogue::{Corpus, EOS};
use crate::error::{Error, Result};

fn check_tokens(params: &PolicyParams, tokens: &[u32]) -> Result<()> {
    if tokens.last() != Some(&EOS) {
        return Err(Error::MissingEos);
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= params.vocab_size()) {
        return Err(Error::TokenOutOfVocab(bad));
    }
    Ok(())
}

/// log p(tokens | cond) at temperature 1 without filtering.
pub fn sequence_logprob(params: &PolicyParams, cond: &Conditioning, tokens: &[u32]) -> Result<f64> {
    check_tokens(params, tokens)?;
    let fc = params.feature_config();
    let mut total = 0.0;
    for (fv, y) in fc.positions(cond, tokens) {
        total += log_softmax(&params.logits(&fv))?[y as usize];
    }
    Ok(total)
}

/// Adds `scale * ∇_W log p(tokens | cond)` into `grad` and returns the log-probability.
pub fn accumulate_logprob_gradient(
    params: &PolicyParams,
    cond: &Conditioning,
    tokens: &[u32],
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    check_tokens(params, tokens)?;
    let v = params.vocab_size();
    let fc = params.feature_config();
    let mut total = 0.0;
    for (fv, y) in fc.positions(cond, tokens) {
        let p = softmax(&params.logits(&fv), 1.0)?;
        total += p[y as usize].ln();
        for &f in fv.active() {
            let row = &mut grad[f * v..(f + 1) * v];
            for (g, pi) in row.iter_mut().zip(&p) {
                *g -= scale * pi;
            }
            row[y as usize] += scale;
        }
    }
    Ok(total)
}

/// Σ_t φ_t ⊗ (onehot(y_t) − p_t), dense with W's shape.
pub fn logprob_gradient(params: &PolicyParams, cond: &Conditioning, tokens: &[u32]) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; params.weights().len()];
    accumulate_logprob_gradient(params, cond, tokens, 1.0, &mut grad)?;
    Ok(grad)
}

/// One system response with its golden-prefix conditioning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SysExample {
    pub cond: Conditioning,
    pub tokens: Vec<u32>,
}

/// Every system turn of a corpus; user turns only condition.
pub fn sys_examples(corpus: &Corpus) -> Vec<SysExample> {
    corpus
        .dialogues
        .iter()
        .flat_map(|d| {
            d.sys_contexts().into_iter().map(move |(i, ctx)| SysExample {
                cond: Conditioning::from_context(&ctx),
                tokens: d.turns[i].utterance.tokens().to_vec(),
            })
        })
        .collect()
}

/// Positions grouped by identical feature vectors with their target counts.
///
/// Token log-likelihood sums only depend on these counts, so training and
/// scoring visit each distinct context once.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionTable {
    rows: Vec<(FeatureVector, Vec<(u32, f64)>, f64)>,
    n_tokens: usize,
}

impl PositionTable {
    pub fn build(params: &PolicyParams, examples: &[SysExample]) -> Result<Self> {
        let fc = params.feature_config();
        let mut index: HashMap<FeatureVector, usize> = HashMap::new();
        let mut rows: Vec<(FeatureVector, Vec<(u32, f64)>, f64)> = Vec::new();
        let mut n_tokens = 0;
        for ex in examples {
            check_tokens(params, &ex.tokens)?;
            for (fv, y) in fc.positions(&ex.cond, &ex.tokens) {
                let i = *index.entry(fv).or_insert_with(|| {
                    rows.push((fv, Vec::new(), 0.0));
                    rows.len() - 1
                });
                let (_, targets, total) = &mut rows[i];
                match targets.iter_mut().find(|(t, _)| *t == y) {
                    Some((_, c)) => *c += 1.0,
                    None => targets.push((y, 1.0)),
                }
                *total += 1.0;
                n_tokens += 1;
            }
        }
        Ok(Self { rows, n_tokens })
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn distinct(&self) -> usize {
        self.rows.len()
    }

    /// Total log-likelihood; with `grad`, also adds its gradient scaled by `scale`.
    pub fn loglik(&self, params: &PolicyParams, mut grad: Option<(&mut [f64], f64)>) -> Result<f64> {
        let v = params.vocab_size();
        let mut total = 0.0;
        for (fv, targets, count) in &self.rows {
            let lp = log_softmax(&params.logits(fv))?;
            for &(y, c) in targets {
                total += c * lp[y as usize];
            }
            if let Some((g, scale)) = grad.as_mut() {
                for &f in fv.active() {
                    let row = &mut g[f * v..(f + 1) * v];
                    for (gj, lpj) in row.iter_mut().zip(&lp) {
                        *gj -= *scale * count * lpj.exp();
                    }
                    for &(y, c) in targets {
                        row[y as usize] += *scale * c;
                    }
                }
            }
        }
        Ok(total)
    }

    pub fn perplexity(&self, params: &PolicyParams) -> Result<f64> {
        if self.n_tokens == 0 {
            return Err(Error::invalid("no system tokens to score"));
        }
        Ok((-self.loglik(params, None)? / self.n_tokens as f64).exp())
    }
}

/// exp(−mean token log-probability) over `examples`.
pub fn perplexity_of(params: &PolicyParams, examples: &[SysExample]) -> Result<f64> {
    PositionTable::build(params, examples)?.perplexity(params)
}

/// Perplexity over all system-turn tokens of `corpus`.
pub fn perplexity(params: &PolicyParams, corpus: &Corpus) -> Result<f64> {
    params.check_vocab(&corpus.vocab)?;
    perplexity_of(params, &sys_examples(corpus))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MleConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleEpoch {
    pub epoch: usize,
    pub train_ppl: f64,
    pub val_ppl: Option<f64>,
}

/// Full-batch gradient ascent on mean system-token log-likelihood from W = 0.
///
/// Reported train perplexity is measured before each step. The seed is
/// accepted for interface symmetry; full-batch ascent draws no randomness.
pub fn train_mle(
    train: &Corpus,
    val: Option<&Corpus>,
    config: &MleConfig,
) -> Result<(PolicyParams, Vec<MleEpoch>)> {
    if train.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    if !(config.learning_rate > 0.0) {
        return Err(Error::invalid("learning_rate must be positive"));
    }
    let mut params = PolicyParams::zeros(&train.vocab);
    let table = PositionTable::build(&params, &sys_examples(train))?;
    let n_tokens = table.n_tokens();
    if n_tokens == 0 {
        return Err(Error::invalid("training corpus has no system turns"));
    }
    let val_table = match val {
        Some(v) => {
            if v.vocab != train.vocab {
                return Err(Error::Mismatch("validation corpus uses another vocabulary".into()));
            }
            Some(PositionTable::build(&params, &sys_examples(v))?)
        }
        None => None,
    };
    let mut grad = vec![0.0; params.weights().len()];
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let loglik = table.loglik(&params, Some((&mut grad, 1.0)))?;
        params.add_scaled(&grad, config.learning_rate / n_tokens as f64);
        if !params.is_finite() {
            return Err(Error::NonFinite(format!("weights after MLE epoch {epoch}")));
        }
        history.push(MleEpoch {
            epoch,
            train_ppl: (-loglik / n_tokens as f64).exp(),
            val_ppl: match &val_table {
                Some(t) => Some(t.perplexity(&params)?),
                None => None,
            },
        });
    }
    Ok((params, history))
}
