//! Dialogue-act taxonomy and the rule-based reference classifier.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::text::contains_phrase;
use super::Role;
use crate::error::Error;

macro_rules! acts {
    ($($variant:ident => $name:literal, $strategy:literal;)*) => {
        /// Dialogue acts. Six of them are persuasion strategies.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum DialogueAct {
            $($variant,)*
        }

        impl DialogueAct {
            pub const ALL: [DialogueAct; acts!(@count $($variant)*)] = [$(DialogueAct::$variant,)*];

            pub fn name(self) -> &'static str {
                match self {
                    $(DialogueAct::$variant => $name,)*
                }
            }

            pub fn is_strategy(self) -> bool {
                match self {
                    $(DialogueAct::$variant => $strategy,)*
                }
            }
        }

        impl FromStr for DialogueAct {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self, Error> {
                match s {
                    $($name => Ok(DialogueAct::$variant),)*
                    other => Err(Error::UnknownAct(other.to_string())),
                }
            }
        }
    };
    (@count) => { 0 };
    (@count $head:ident $($tail:ident)*) => { 1 + acts!(@count $($tail)*) };
}

acts! {
    Greeting => "greeting", false;
    AskOrgHeard => "ask-org-heard", false;
    AskHaveKids => "ask-have-kids", false;
    AskDonatedBefore => "ask-donated-before", false;
    CredibilityAppeal => "credibility-appeal", true;
    EmotionAppeal => "emotion-appeal", true;
    LogicalAppeal => "logical-appeal", true;
    FootInTheDoor => "foot-in-the-door", true;
    SelfModeling => "self-modeling", true;
    PersonalStory => "personal-story", true;
    ProposeDonation => "propose-donation", false;
    AskDonationAmount => "ask-donation-amount", false;
    AgreeDonation => "agree-donation", false;
    DisagreeDonation => "disagree-donation", false;
    ProvideInfo => "provide-info", false;
    Thank => "thank", false;
    Closing => "closing", false;
    Other => "other", false;
}

impl DialogueAct {
    pub fn index(self) -> usize {
        self as usize
    }

    /// Inquiry acts: questions whose answer lands in the user profile.
    pub fn is_inquiry(self) -> bool {
        matches!(
            self,
            DialogueAct::AskOrgHeard
                | DialogueAct::AskHaveKids
                | DialogueAct::AskDonatedBefore
                | DialogueAct::AskDonationAmount
                | DialogueAct::ProposeDonation
        )
    }
}

impl fmt::Display for DialogueAct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for DialogueAct {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for DialogueAct {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Small set of acts stored as a bitmask, iterated in taxonomy order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ActSet(u32);

impl fmt::Debug for ActSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(DialogueAct::name)).finish()
    }
}

impl ActSet {
    pub const fn empty() -> Self {
        ActSet(0)
    }

    pub fn single(act: DialogueAct) -> Self {
        ActSet(1 << act.index())
    }

    pub fn insert(&mut self, act: DialogueAct) {
        self.0 |= 1 << act.index();
    }

    pub fn contains(self, act: DialogueAct) -> bool {
        self.0 & (1 << act.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = DialogueAct> {
        DialogueAct::ALL.into_iter().filter(move |a| self.contains(*a))
    }

    /// First act in taxonomy order.
    pub fn primary(self) -> Option<DialogueAct> {
        self.iter().next()
    }

    pub fn any(self, pred: impl Fn(DialogueAct) -> bool) -> bool {
        self.iter().any(pred)
    }

    /// Replaces an empty set by `{other}`.
    pub fn or_other(self) -> Self {
        if self.is_empty() {
            ActSet::single(DialogueAct::Other)
        } else {
            self
        }
    }
}

impl FromIterator<DialogueAct> for ActSet {
    fn from_iter<I: IntoIterator<Item = DialogueAct>>(iter: I) -> Self {
        let mut s = ActSet::empty();
        for a in iter {
            s.insert(a);
        }
        s
    }
}

impl Serialize for ActSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.iter().map(DialogueAct::name))
    }
}

impl<'de> Deserialize<'de> for ActSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        names
            .iter()
            .map(|n| n.parse::<DialogueAct>())
            .collect::<Result<ActSet, _>>()
            .map_err(serde::de::Error::custom)
    }
}

/// True iff any act is a persuasion strategy.
pub fn is_strategy(acts: ActSet) -> bool {
    acts.any(DialogueAct::is_strategy)
}

/// Pluggable act classifier.
pub trait ActClassifier: Send + Sync {
    /// Classifies normalized text. Never returns an empty set.
    fn classify(&self, text: &str, role: Role) -> ActSet;
}

/// Keyword/phrase rules matching the synthetic template table.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleClassifier;

pub(crate) const KID_WORDS: [&str; 6] = ["kids", "children", "daughter", "son", "child", "kid"];
pub(crate) const AMOUNT_PHRASES: [&str; 6] = [
    "five cents",
    "ten cents",
    "twenty cents",
    "fifty cents",
    "one dollar",
    "two dollars",
];

fn any_phrase(text: &str, phrases: &[&str]) -> bool {
    phrases.iter().any(|p| contains_phrase(text, p))
}

fn starts_with_word(text: &str, words: &[&str]) -> bool {
    let first = text.split(' ').next().unwrap_or("");
    words.contains(&first)
}

pub(crate) fn mentions_kids(text: &str) -> bool {
    text.split(' ').any(|w| KID_WORDS.contains(&w))
}

/// First donation-amount phrase in the text, if any.
pub fn amount_phrase(text: &str) -> Option<&'static str> {
    AMOUNT_PHRASES
        .iter()
        .copied()
        .find(|p| contains_phrase(text, p))
}

impl RuleClassifier {
    fn shared(text: &str, acts: &mut ActSet) {
        if starts_with_word(text, &["hello", "hi", "hey"]) || contains_phrase(text, "how are you")
        {
            acts.insert(DialogueAct::Greeting);
        }
        if starts_with_word(text, &["thanks"]) || contains_phrase(text, "thank you") {
            acts.insert(DialogueAct::Thank);
        }
        if any_phrase(
            text,
            &["goodbye", "bye", "have a nice day", "have a great day"],
        ) {
            acts.insert(DialogueAct::Closing);
        }
    }

    fn asks_kids(text: &str) -> bool {
        contains_phrase(text, "do you have") && mentions_kids(text)
    }

    fn asks_donated(text: &str) -> bool {
        any_phrase(text, &["have you ever donated", "have you donated"])
    }

    fn system(text: &str, acts: &mut ActSet) {
        if any_phrase(text, &["heard of", "familiar with"]) {
            acts.insert(DialogueAct::AskOrgHeard);
        }
        if Self::asks_kids(text) {
            acts.insert(DialogueAct::AskHaveKids);
        }
        if Self::asks_donated(text) {
            acts.insert(DialogueAct::AskDonatedBefore);
        }
        if any_phrase(
            text,
            &[
                "international organization",
                "one hundred years",
                "save the children is",
            ],
        ) {
            acts.insert(DialogueAct::CredibilityAppeal);
        }
        if any_phrase(text, &["suffering", "breaks my heart"]) {
            acts.insert(DialogueAct::EmotionAppeal);
        }
        if any_phrase(text, &["even a small amount", "every dollar"]) {
            acts.insert(DialogueAct::LogicalAppeal);
        }
        if any_phrase(text, &["small donation", "tiny donation"]) {
            acts.insert(DialogueAct::FootInTheDoor);
        }
        if any_phrase(
            text,
            &["i am going to donate", "i have donated", "i plan to give"],
        ) {
            acts.insert(DialogueAct::SelfModeling);
        }
        if any_phrase(
            text,
            &[
                "i have a daughter",
                "i have a son",
                "i have two kids",
                "i do not have kids",
                "i dont have kids",
                "my own kids",
            ],
        ) || (contains_phrase(text, "myself") && mentions_kids(text))
        {
            acts.insert(DialogueAct::PersonalStory);
        }
        if any_phrase(
            text,
            &[
                "would you like to donate",
                "would you consider donating",
                "how about",
                "would you be willing",
            ],
        ) && !contains_phrase(text, "how much")
        {
            acts.insert(DialogueAct::ProposeDonation);
        }
        if contains_phrase(text, "how much") {
            acts.insert(DialogueAct::AskDonationAmount);
        }
        if any_phrase(text, &["deducted", "you can choose any amount"]) {
            acts.insert(DialogueAct::ProvideInfo);
        }
    }

    fn user(text: &str, acts: &mut ActSet) {
        let agree = any_phrase(
            text,
            &["i will donate", "i would like to donate", "i can donate"],
        );
        let disagree = any_phrase(
            text,
            &[
                "cant donate",
                "not interested",
                "rather not",
                "do not want to donate",
                "dont want to donate",
            ],
        );
        if agree && !disagree {
            acts.insert(DialogueAct::AgreeDonation);
        }
        if disagree {
            acts.insert(DialogueAct::DisagreeDonation);
        }
        if (starts_with_word(text, &["yes", "no", "yeah", "nope"]) && !agree && !disagree)
            || amount_phrase(text).is_some()
        {
            acts.insert(DialogueAct::ProvideInfo);
        }
        if any_phrase(text, &["tell me more about", "what does"]) {
            acts.insert(DialogueAct::AskOrgHeard);
        }
        if Self::asks_kids(text) {
            acts.insert(DialogueAct::AskHaveKids);
        }
        if Self::asks_donated(text) {
            acts.insert(DialogueAct::AskDonatedBefore);
        }
        if any_phrase(text, &["how can i donate", "how to donate", "how much"]) {
            acts.insert(DialogueAct::AskDonationAmount);
        }
    }
}

impl ActClassifier for RuleClassifier {
    fn classify(&self, text: &str, role: Role) -> ActSet {
        let mut acts = ActSet::empty();
        Self::shared(text, &mut acts);
        match role {
            Role::Sys => Self::system(text, &mut acts),
            Role::Usr => Self::user(text, &mut acts),
        }
        acts.or_other()
    }
}
