//! Sparse context features for the linear-softmax policy.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dialogue::{hex16, Context, DialogueAct, Role, Slot, SlotValue, BOS};

/// Active indices per position.
pub const ACTIVE_FEATURES: usize = 8;

const ACT_VALUES: usize = DialogueAct::ALL.len() + 1;
const WANT_VALUES: usize = 3;
const TURN_BUCKETS: usize = 3;

/// Shape of the feature space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub vocab_size: usize,
    pub hash_buckets: usize,
}

impl FeatureConfig {
    pub const DEFAULT_BUCKETS: usize = 1024;

    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hash_buckets: Self::DEFAULT_BUCKETS,
        }
    }

    fn prev_prev_offset(&self) -> usize {
        self.vocab_size
    }

    fn pair_offset(&self) -> usize {
        2 * self.vocab_size
    }

    fn usr_act_offset(&self) -> usize {
        self.pair_offset() + self.hash_buckets
    }

    fn sys_act_offset(&self) -> usize {
        self.usr_act_offset() + ACT_VALUES
    }

    fn want_offset(&self) -> usize {
        self.sys_act_offset() + ACT_VALUES
    }

    fn turn_offset(&self) -> usize {
        self.want_offset() + WANT_VALUES
    }

    fn bias_index(&self) -> usize {
        self.turn_offset() + TURN_BUCKETS
    }

    /// Total feature count F.
    pub fn dim(&self) -> usize {
        self.bias_index() + 1
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"linear-softmax-features/v1");
        h.update((self.vocab_size as u64).to_le_bytes());
        h.update((self.hash_buckets as u64).to_le_bytes());
        hex16(&h.finalize())
    }

    /// Features for predicting the next token after `prefix`.
    pub fn features(&self, cond: &Conditioning, prefix: &[u32]) -> FeatureVector {
        let n = prefix.len();
        let prev = if n >= 1 { prefix[n - 1] } else { BOS } as usize;
        let prev_prev = if n >= 2 { prefix[n - 2] } else { BOS } as usize;
        FeatureVector {
            active: [
                prev,
                self.prev_prev_offset() + prev_prev,
                self.pair_offset() + pair_bucket(prev, prev_prev, self.hash_buckets),
                self.usr_act_offset() + act_slot(cond.usr_act),
                self.sys_act_offset() + act_slot(cond.sys_act),
                self.want_offset() + cond.want_to_donate.map_or(0, |w| if w { 1 } else { 2 }),
                self.turn_offset() + turn_bucket(cond.turn_index),
                self.bias_index(),
            ],
        }
    }

    /// Features at every position of `tokens`, the last predicting the final token.
    pub fn positions<'a>(
        &'a self,
        cond: &'a Conditioning,
        tokens: &'a [u32],
    ) -> impl Iterator<Item = (FeatureVector, u32)> + 'a {
        (0..tokens.len()).map(move |t| (self.features(cond, &tokens[..t]), tokens[t]))
    }

    pub fn bias_feature(&self) -> usize {
        self.bias_index()
    }
}

fn act_slot(act: Option<DialogueAct>) -> usize {
    act.map_or(0, |a| a.index() + 1)
}

/// 0 for turns 0-2, 1 for 3-5, 2 for 6 and later.
pub fn turn_bucket(turn_index: usize) -> usize {
    match turn_index {
        0..=2 => 0,
        3..=5 => 1,
        _ => 2,
    }
}

fn pair_bucket(prev: usize, prev_prev: usize, buckets: usize) -> usize {
    let mut x = (prev as u64) << 32 | prev_prev as u64;
    x = (x ^ (x >> 33)).wrapping_mul(0xff51_afd7_ed55_8ccd);
    x = (x ^ (x >> 33)).wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    x ^= x >> 33;
    (x % buckets as u64) as usize
}

/// Utterance-level conditioning shared by every position of one response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Conditioning {
    pub usr_act: Option<DialogueAct>,
    pub sys_act: Option<DialogueAct>,
    pub want_to_donate: Option<bool>,
    pub turn_index: usize,
}

impl Conditioning {
    pub fn from_context(ctx: &Context<'_>) -> Self {
        let primary = |role| ctx.last(role).and_then(|t| t.acts.primary());
        Self {
            usr_act: primary(Role::Usr),
            sys_act: primary(Role::Sys),
            want_to_donate: match ctx.profiles.usr.get(Slot::WantToDonate) {
                Some(SlotValue::Yes) => Some(true),
                Some(SlotValue::No) => Some(false),
                _ => None,
            },
            turn_index: ctx.turn_index(),
        }
    }
}

/// Exactly [`ACTIVE_FEATURES`] distinct active binary features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureVector {
    active: [usize; ACTIVE_FEATURES],
}

impl FeatureVector {
    pub fn active(&self) -> &[usize; ACTIVE_FEATURES] {
        &self.active
    }
}
