//! Dialogue data model: roles, turns, dialogues and corpora.

mod acts;
mod io;
mod profile;
mod synth;
mod text;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use acts::{amount_phrase, is_strategy, ActClassifier, ActSet, DialogueAct, RuleClassifier};
pub use io::{load_corpus, save_corpus, split_corpus, vocab_path};
pub use profile::{
    answer_polarity, rule_assertions, update_profiles, Profile, Profiles, Slot, SlotAssertion,
    SlotValue,
};
pub use synth::{generate_corpus, SynthConfig, SynthStyle};
pub use text::{contains_phrase, is_special, normalize, Utterance, Vocabulary, BOS, EOS, UNK};
pub(crate) use text::hex16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "SYS")]
    Sys,
    #[serde(rename = "USR")]
    Usr,
}

impl Role {
    pub fn other(self) -> Role {
        match self {
            Role::Sys => Role::Usr,
            Role::Usr => Role::Sys,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Sys => "SYS",
            Role::Usr => "USR",
        })
    }
}

/// Classifies an utterance with the reference rule classifier.
pub fn classify_acts(utterance: &Utterance, role: Role) -> ActSet {
    RuleClassifier.classify(utterance.text(), role)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub role: Role,
    pub utterance: Utterance,
    /// Never empty; unmatched turns carry `{other}`.
    pub acts: ActSet,
}

impl Turn {
    pub fn new(role: Role, utterance: Utterance, acts: ActSet) -> Self {
        Self {
            role,
            utterance,
            acts: acts.or_other(),
        }
    }

    pub fn classified(role: Role, utterance: Utterance, classifier: &dyn ActClassifier) -> Self {
        let acts = classifier.classify(utterance.text(), role);
        Self::new(role, utterance, acts)
    }
}

/// Ground-truth user slot values revealed in a synthetic dialogue.
pub type Persona = BTreeMap<Slot, SlotValue>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
    pub persona: Persona,
}

impl Dialogue {
    /// True when roles strictly alternate.
    pub fn alternates(&self) -> bool {
        self.turns.windows(2).all(|w| w[0].role != w[1].role)
    }

    /// Indices of system turns.
    pub fn sys_turns(&self) -> impl Iterator<Item = usize> + '_ {
        self.turns
            .iter()
            .enumerate()
            .filter(|(_, t)| t.role == Role::Sys)
            .map(|(i, _)| i)
    }

    /// Golden-prefix context before every system turn, with profiles
    /// advanced incrementally.
    pub fn sys_contexts(&self) -> Vec<(usize, Context<'_>)> {
        let mut out = Vec::new();
        let mut profiles = Profiles::default();
        let mut prev_sys = ActSet::empty();
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.role == Role::Sys {
                out.push((i, Context::new(&self.turns[..i], profiles.clone())));
            }
            profiles = update_profiles(&profiles, turn, prev_sys);
            if turn.role == Role::Sys {
                prev_sys = turn.acts;
            }
        }
        out
    }
}

/// A dialogue prefix plus the profiles built from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Context<'a> {
    pub history: &'a [Turn],
    pub profiles: Profiles,
}

impl<'a> Context<'a> {
    pub fn new(history: &'a [Turn], profiles: Profiles) -> Self {
        Self { history, profiles }
    }

    /// Builds profiles by replaying the whole prefix.
    pub fn replay(history: &'a [Turn]) -> Self {
        Self::new(history, Profiles::replay(history))
    }

    pub fn last(&self, role: Role) -> Option<&'a Turn> {
        self.history.iter().rev().find(|t| t.role == role)
    }

    /// Acts of the most recent system turn, empty at dialogue start.
    pub fn prev_sys_acts(&self) -> ActSet {
        self.last(Role::Sys).map(|t| t.acts).unwrap_or_default()
    }

    /// Index the next turn will occupy.
    pub fn turn_index(&self) -> usize {
        self.history.len()
    }

    pub fn utterances_of(&self, role: Role) -> impl Iterator<Item = (usize, &'a Utterance)> {
        self.history
            .iter()
            .enumerate()
            .filter(move |(_, t)| t.role == role)
            .map(|(i, t)| (i, &t.utterance))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub dialogues: Vec<Dialogue>,
    pub vocab: Vocabulary,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }

    /// Keeps the same vocabulary over a subset of dialogues.
    pub fn with_dialogues(&self, dialogues: Vec<Dialogue>) -> Corpus {
        Corpus {
            dialogues,
            vocab: self.vocab.clone(),
        }
    }

    pub fn sys_turn_count(&self) -> usize {
        self.dialogues.iter().map(|d| d.sys_turns().count()).sum()
    }
}
