//! Corpus JSONL and vocabulary files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ActSet, Corpus, Dialogue, Role, Slot, SlotValue, Turn, Utterance, Vocabulary};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct DialogueRecord {
    id: String,
    meta: Meta,
    turns: Vec<TurnRecord>,
}

#[derive(Serialize, Deserialize, Default)]
struct Meta {
    #[serde(default)]
    persona: BTreeMap<Slot, SlotValue>,
}

#[derive(Serialize, Deserialize)]
struct TurnRecord {
    role: Role,
    text: String,
    acts: Vec<String>,
}

/// Vocabulary file stored next to a corpus: `c.jsonl` -> `c.vocab`.
pub fn vocab_path(corpus_path: &Path) -> PathBuf {
    corpus_path.with_extension("vocab")
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for d in &corpus.dialogues {
        let rec = DialogueRecord {
            id: d.id.clone(),
            meta: Meta {
                persona: d.persona.clone(),
            },
            turns: d
                .turns
                .iter()
                .map(|t| TurnRecord {
                    role: t.role,
                    text: t.utterance.text().to_string(),
                    acts: t.acts.iter().map(|a| a.name().to_string()).collect(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.push(b'\n');
    }
    write_file(path, &out)?;
    write_file(&vocab_path(path), corpus.vocab.to_lines().as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Loads a corpus. Uses the sibling `.vocab` file when present, otherwise
/// builds the vocabulary from the texts in order of appearance.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: DialogueRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push((i + 1, rec));
    }

    let vpath = vocab_path(path);
    let vocab = if vpath.exists() {
        let text = fs::read_to_string(&vpath).map_err(|e| Error::io(&vpath, e))?;
        Vocabulary::from_lines(&text)?
    } else {
        Vocabulary::build(
            records
                .iter()
                .flat_map(|(_, r)| r.turns.iter().map(|t| t.text.as_str())),
        )
    };

    let mut dialogues = Vec::with_capacity(records.len());
    for (line, rec) in records {
        let at = |e: Error| Error::Parse {
            line,
            message: e.to_string(),
        };
        let mut turns = Vec::with_capacity(rec.turns.len());
        for t in rec.turns {
            let utterance = Utterance::encode(&t.text, &vocab).map_err(at)?;
            let acts = t
                .acts
                .iter()
                .map(|a| a.parse())
                .collect::<Result<ActSet>>()
                .map_err(at)?;
            turns.push(Turn::new(t.role, utterance, acts));
        }
        for (slot, value) in &rec.meta.persona {
            if !slot.admits(value) {
                return Err(at(Error::InvalidSlotValue {
                    slot: slot.to_string(),
                    value: value.to_string(),
                }));
            }
        }
        dialogues.push(Dialogue {
            id: rec.id,
            turns,
            persona: rec.meta.persona,
        });
    }
    Ok(Corpus { dialogues, vocab })
}

/// Deterministic shuffled partition into (train, rest).
pub fn split_corpus(corpus: &Corpus, train_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid("train_fraction must be in (0, 1)"));
    }
    let n = corpus.len();
    if n < 2 {
        return Err(Error::invalid("need at least 2 dialogues to split"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let pick = |idx: &[usize]| {
        corpus.with_dialogues(idx.iter().map(|&i| corpus.dialogues[i].clone()).collect())
    };
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}
