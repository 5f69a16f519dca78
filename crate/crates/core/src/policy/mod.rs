//! Candidate generation: the generator interface and the reference
//! linear-softmax autoregressive policy.

mod dist;
mod features;
mod params;
mod train;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use dist::{log_softmax, next_token_dist, nucleus_filter, softmax};
pub use features::{turn_bucket, Conditioning, FeatureConfig, FeatureVector, ACTIVE_FEATURES};
pub use params::PolicyParams;
pub use train::{
    accumulate_logprob_gradient, logprob_gradient, perplexity, perplexity_of, sequence_logprob,
    sys_examples, train_mle, MleConfig, MleEpoch, PositionTable, SysExample,
};

use crate::dialogue::{classify_acts, vocab_path, ActSet, Context, Role, Utterance, Vocabulary, EOS};
use crate::detectors::CandidateStatus;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodingConfig {
    pub temperature: f64,
    pub top_p: f64,
    /// Word tokens per response; EOS is forced after this many.
    pub max_len: usize,
    pub n_candidates: usize,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 0.9,
            max_len: 60,
            n_candidates: 10,
        }
    }
}

impl DecodingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::invalid("top_p must be in (0, 1]"));
        }
        if self.max_len == 0 || self.n_candidates == 0 {
            return Err(Error::invalid("max_len and n_candidates must be at least 1"));
        }
        Ok(())
    }
}

/// A generated system response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub utterance: Utterance,
    /// Sum of token log-probabilities under the generating params, temperature 1, unfiltered.
    pub logprob: f64,
    pub acts: ActSet,
    pub status: Option<CandidateStatus>,
    pub imitator_score: Option<f64>,
}

impl Candidate {
    pub fn new(utterance: Utterance, logprob: f64) -> Self {
        let acts = classify_acts(&utterance, Role::Sys);
        Self {
            utterance,
            logprob,
            acts,
            status: None,
            imitator_score: None,
        }
    }

    pub fn word_len(&self) -> usize {
        self.utterance.word_len()
    }

    pub fn mean_token_logprob(&self) -> f64 {
        self.logprob / self.utterance.tokens().len() as f64
    }
}

/// Independent per-candidate seed (splitmix64 of the pair).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Samples token ids ending in EOS; returns them with their unfiltered log-probability.
pub fn sample_tokens(
    params: &PolicyParams,
    cond: &Conditioning,
    decoding: &DecodingConfig,
    seed: u64,
) -> Result<(Vec<u32>, f64)> {
    decoding.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fc = params.feature_config();
    let mut tokens = Vec::new();
    let mut logprob = 0.0;
    loop {
        let logits = params.logits(&fc.features(cond, &tokens));
        let next = if tokens.len() >= decoding.max_len {
            EOS
        } else {
            let dist = nucleus_filter(&softmax(&logits, decoding.temperature)?, decoding.top_p);
            draw(&dist, rng.random::<f64>())
        };
        logprob += log_softmax(&logits)?[next as usize];
        tokens.push(next);
        if next == EOS {
            return Ok((tokens, logprob));
        }
    }
}

fn draw(dist: &[f64], u: f64) -> u32 {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i as u32;
            }
        }
    }
    last as u32
}

/// One candidate response for the context; deterministic given `seed`.
pub fn sample_candidate(
    params: &PolicyParams,
    vocab: &Vocabulary,
    ctx: &Context<'_>,
    decoding: &DecodingConfig,
    seed: u64,
) -> Result<Candidate> {
    let (tokens, logprob) = sample_tokens(params, &Conditioning::from_context(ctx), decoding, seed)?;
    Ok(Candidate::new(Utterance::from_tokens(tokens, vocab)?, logprob))
}

/// Source of candidate responses. The reference implementation is [`Policy`].
pub trait ResponseGenerator: Send + Sync {
    fn generate(&self, ctx: &Context<'_>, decoding: &DecodingConfig, seed: u64) -> Result<Candidate>;

    fn vocab(&self) -> &Vocabulary;

    /// `n` candidates with seeds derived from `seed` and the index.
    fn generate_n(
        &self,
        ctx: &Context<'_>,
        decoding: &DecodingConfig,
        n: usize,
        seed: u64,
    ) -> Result<Vec<Candidate>> {
        (0..n)
            .map(|i| self.generate(ctx, decoding, derive_seed(seed, i as u64)))
            .collect()
    }
}

/// Policy parameters bound to their vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub params: PolicyParams,
    pub vocab: Vocabulary,
}

impl Policy {
    pub fn new(params: PolicyParams, vocab: Vocabulary) -> Result<Self> {
        params.check_vocab(&vocab)?;
        Ok(Self { params, vocab })
    }

    /// Writes the checkpoint and its vocabulary beside it (`m.bin` -> `m.vocab`).
    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path)?;
        let vpath = vocab_path(path);
        fs::write(&vpath, self.vocab.to_lines()).map_err(|e| Error::io(&vpath, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let vpath = vocab_path(path);
        let text = fs::read_to_string(&vpath).map_err(|e| Error::io(&vpath, e))?;
        let vocab = Vocabulary::from_lines(&text)?;
        let params = PolicyParams::load(path, &vocab)?;
        Ok(Self { params, vocab })
    }
}

impl ResponseGenerator for Policy {
    fn generate(&self, ctx: &Context<'_>, decoding: &DecodingConfig, seed: u64) -> Result<Candidate> {
        sample_candidate(&self.params, &self.vocab, ctx, decoding, seed)
    }

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }
}
