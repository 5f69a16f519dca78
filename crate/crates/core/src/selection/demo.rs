//! Demonstration records: one expert labeling of a turn's candidates.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{annotate_candidates, turn_features, ImitatorParams, IMITATOR_DIM};
use crate::detectors::DetectorConfig;
use crate::dialogue::{Corpus, Turn};
use crate::error::{Error, Result};
use crate::policy::{derive_seed, DecodingConfig, ResponseGenerator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoCandidate {
    pub text: String,
    pub tokens: Vec<u32>,
    /// 1 when the expert marked it acceptable.
    pub selected: u8,
    /// Imitator features at labeling time.
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub v: u32,
    pub session_id: String,
    pub turn_index: usize,
    pub context_digest: String,
    pub candidates: Vec<DemoCandidate>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl DemoRecord {
    pub const VERSION: u32 = 1;

    pub fn validate(&self) -> Result<()> {
        if self.v != Self::VERSION {
            return Err(Error::invalid(format!("unsupported demo record version {}", self.v)));
        }
        if self.candidates.is_empty() {
            return Err(Error::invalid("demo record has no candidates"));
        }
        for c in &self.candidates {
            if c.selected > 1 {
                return Err(Error::invalid("demo labels must be 0 or 1"));
            }
            if c.features.len() != IMITATOR_DIM {
                return Err(Error::Mismatch(format!(
                    "demo candidate has {} features, expected {IMITATOR_DIM}",
                    c.features.len()
                )));
            }
        }
        Ok(())
    }

    pub fn positives(&self) -> usize {
        self.candidates.iter().filter(|c| c.selected == 1).count()
    }
}

/// SHA-256 prefix of the transcript, one `ROLE<TAB>text` line per turn.
pub fn context_digest(history: &[Turn]) -> String {
    let mut h = Sha256::new();
    for t in history {
        h.update(format!("{}\t{}\n", t.role, t.utterance.text()).as_bytes());
    }
    crate::dialogue::hex16(&h.finalize())
}

/// Appends one record and fsyncs before returning.
pub fn append_demo(path: &Path, record: &DemoRecord) -> Result<()> {
    record.validate()?;
    let mut line = serde_json::to_vec(record)?;
    line.push(b'\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(&line).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}

/// Reads a demo log; a missing file is an empty log.
pub fn load_demos(path: &Path) -> Result<Vec<DemoRecord>> {
    let raw = match fs::read_to_string(path) {
        Ok(s) => s,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: DemoRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        rec.validate().map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// A plausible expert: favors strategies, dislikes overlap with the
/// context, contradictions, duplicates and long turns. The bias puts
/// roughly half of a baseline's candidates on each side.
pub fn reference_preference() -> ImitatorParams {
    let mut p = ImitatorParams::zeros();
    let w = &mut p.weights;
    w[0] = -1.5;
    w[1] = 0.4;
    w[2] = 2.0;
    w[3] = -3.0;
    w[4] = -3.0;
    w[IMITATOR_DIM - 3] = -1.0;
    w[IMITATOR_DIM - 1] = 1.9;
    p
}

/// Labels generated candidates with a hidden linear preference
/// (`linear > 0`), flipping each label with probability `noise`.
/// Stops after `max_records` turns.
#[allow(clippy::too_many_arguments)]
pub fn simulate_demonstrations(
    generator: &dyn ResponseGenerator,
    corpus: &Corpus,
    preference: &ImitatorParams,
    noise: f64,
    max_records: usize,
    decoding: &DecodingConfig,
    detector: &DetectorConfig,
    seed: u64,
) -> Result<Vec<DemoRecord>> {
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::invalid("noise must be in [0, 1]"));
    }
    preference.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for d in &corpus.dialogues {
        for (turn_index, ctx) in d.sys_contexts() {
            if out.len() >= max_records {
                return Ok(out);
            }
            let turn_seed = derive_seed(seed, out.len() as u64);
            let mut candidates = generator.generate_n(&ctx, decoding, decoding.n_candidates, turn_seed)?;
            annotate_candidates(&ctx, &mut candidates, detector);
            let features = turn_features(&ctx, &candidates, detector);
            let candidates = candidates
                .into_iter()
                .zip(features)
                .map(|(c, x)| {
                    let mut selected = preference.linear(&x) > 0.0;
                    if rng.random_bool(noise) {
                        selected = !selected;
                    }
                    DemoCandidate {
                        text: c.utterance.text().to_string(),
                        tokens: c.utterance.tokens().to_vec(),
                        selected: selected as u8,
                        features: x,
                    }
                })
                .collect();
            out.push(DemoRecord {
                v: DemoRecord::VERSION,
                session_id: format!("sim-{}", d.id),
                turn_index,
                context_digest: context_digest(ctx.history),
                candidates,
                timestamp: 0,
            });
        }
    }
    Ok(out)
}
