//! Per-speaker profiles and the rule table that fills them.
//!
//! Each profile maps one of five slots to a categorical value. Updates are
//! driven by dialogue acts: a user answer is interpreted against the acts of
//! the preceding system turn, and system statements can assert values about
//! either speaker (thanking someone for a donation implies they agreed to
//! donate). The same rule table is used to extract assertions from
//! candidate responses when checking for contradictions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::acts::{amount_phrase, mentions_kids, ActSet, DialogueAct};
use super::text::contains_phrase;
use super::{Role, Turn};
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    HaveKids,
    HeardOfOrg,
    DonatedBefore,
    WantToDonate,
    DonationAmount,
}

impl Slot {
    pub const ALL: [Slot; 5] = [
        Slot::HaveKids,
        Slot::HeardOfOrg,
        Slot::DonatedBefore,
        Slot::WantToDonate,
        Slot::DonationAmount,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Slot::HaveKids => "have_kids",
            Slot::HeardOfOrg => "heard_of_org",
            Slot::DonatedBefore => "donated_before",
            Slot::WantToDonate => "want_to_donate",
            Slot::DonationAmount => "donation_amount",
        }
    }

    pub fn admits(self, value: &SlotValue) -> bool {
        match self {
            Slot::DonationAmount => matches!(value, SlotValue::Amount(_)),
            _ => matches!(value, SlotValue::Yes | SlotValue::No),
        }
    }

    /// The user-profile slot an inquiry act asks about.
    pub fn asked_by(act: DialogueAct) -> Option<Slot> {
        match act {
            DialogueAct::AskOrgHeard => Some(Slot::HeardOfOrg),
            DialogueAct::AskHaveKids => Some(Slot::HaveKids),
            DialogueAct::AskDonatedBefore => Some(Slot::DonatedBefore),
            DialogueAct::ProposeDonation => Some(Slot::WantToDonate),
            DialogueAct::AskDonationAmount => Some(Slot::DonationAmount),
            _ => None,
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Slot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Slot::ALL
            .into_iter()
            .find(|slot| slot.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown slot `{s}`")))
    }
}

/// Slot value. `donation_amount` holds an amount phrase; the others are yes/no.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SlotValue {
    Yes,
    No,
    Amount(String),
}

impl SlotValue {
    pub fn as_str(&self) -> &str {
        match self {
            SlotValue::Yes => "Yes",
            SlotValue::No => "No",
            SlotValue::Amount(a) => a,
        }
    }

    pub fn from_bool(b: bool) -> Self {
        if b {
            SlotValue::Yes
        } else {
            SlotValue::No
        }
    }

    fn parse(s: &str) -> Self {
        match s {
            "Yes" => SlotValue::Yes,
            "No" => SlotValue::No,
            other => SlotValue::Amount(other.to_string()),
        }
    }
}

impl fmt::Display for SlotValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for SlotValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for SlotValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(SlotValue::parse(&String::deserialize(d)?))
    }
}

/// Slot map tracking what one speaker has stated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub role: Role,
    entries: BTreeMap<Slot, SlotValue>,
}

impl Profile {
    pub fn new(role: Role) -> Self {
        Self {
            role,
            entries: BTreeMap::new(),
        }
    }

    pub fn get(&self, slot: Slot) -> Option<&SlotValue> {
        self.entries.get(&slot)
    }

    pub fn is_filled(&self, slot: Slot) -> bool {
        self.entries.contains_key(&slot)
    }

    /// Last write wins. Values outside the slot's domain are rejected.
    pub fn set(&mut self, slot: Slot, value: SlotValue) -> Result<(), Error> {
        if !slot.admits(&value) {
            return Err(Error::InvalidSlotValue {
                slot: slot.name().to_string(),
                value: value.to_string(),
            });
        }
        self.entries.insert(slot, value);
        Ok(())
    }

    pub fn entries(&self) -> &BTreeMap<Slot, SlotValue> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The system and user profiles of one dialogue state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profiles {
    pub sys: Profile,
    pub usr: Profile,
}

impl Default for Profiles {
    fn default() -> Self {
        Self {
            sys: Profile::new(Role::Sys),
            usr: Profile::new(Role::Usr),
        }
    }
}

impl Profiles {
    pub fn of(&self, role: Role) -> &Profile {
        match role {
            Role::Sys => &self.sys,
            Role::Usr => &self.usr,
        }
    }

    fn of_mut(&mut self, role: Role) -> &mut Profile {
        match role {
            Role::Sys => &mut self.sys,
            Role::Usr => &mut self.usr,
        }
    }

    pub fn apply(&mut self, assertions: &[SlotAssertion]) {
        for a in assertions {
            // assertions from the rule table are always within the ontology
            let _ = self.of_mut(a.role).set(a.slot, a.value.clone());
        }
    }

    /// Replays the profile builder over a whole transcript.
    pub fn replay(turns: &[Turn]) -> Self {
        let mut profiles = Profiles::default();
        let mut prev_sys = ActSet::empty();
        for turn in turns {
            profiles = update_profiles(&profiles, turn, prev_sys);
            if turn.role == Role::Sys {
                prev_sys = turn.acts;
            }
        }
        profiles
    }
}

/// A value a turn implies for one speaker's slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotAssertion {
    pub role: Role,
    pub slot: Slot,
    pub value: SlotValue,
}

impl SlotAssertion {
    fn new(role: Role, slot: Slot, value: SlotValue) -> Self {
        Self { role, slot, value }
    }
}

const NEGATIONS: [&str; 7] = ["no", "not", "never", "dont", "havent", "nope", "didnt"];

/// Yes/no reading of an answer: any negation word means no.
pub fn answer_polarity(text: &str) -> bool {
    !text.split(' ').any(|w| NEGATIONS.contains(&w))
}

/// The profile-builder rule table.
///
/// `prev_sys` are the acts of the most recent system turn before `turn`.
pub fn rule_assertions(prev_sys: ActSet, turn: &Turn) -> Vec<SlotAssertion> {
    let text = turn.utterance.text();
    let acts = turn.acts;
    let mut out = Vec::new();
    match turn.role {
        Role::Usr => {
            if acts.contains(DialogueAct::ProvideInfo) {
                let yes = SlotValue::from_bool(answer_polarity(text));
                for (ask, slot) in [
                    (DialogueAct::AskOrgHeard, Slot::HeardOfOrg),
                    (DialogueAct::AskHaveKids, Slot::HaveKids),
                    (DialogueAct::AskDonatedBefore, Slot::DonatedBefore),
                ] {
                    if prev_sys.contains(ask) && amount_phrase(text).is_none() {
                        out.push(SlotAssertion::new(Role::Usr, slot, yes.clone()));
                    }
                }
            }
            let proposed = prev_sys.contains(DialogueAct::ProposeDonation);
            if proposed && acts.contains(DialogueAct::AgreeDonation) {
                out.push(SlotAssertion::new(Role::Usr, Slot::WantToDonate, SlotValue::Yes));
            }
            if proposed && acts.contains(DialogueAct::DisagreeDonation) {
                out.push(SlotAssertion::new(Role::Usr, Slot::WantToDonate, SlotValue::No));
            }
            if let Some(amount) = amount_phrase(text) {
                if proposed || prev_sys.contains(DialogueAct::AskDonationAmount) {
                    out.push(SlotAssertion::new(Role::Usr, Slot::WantToDonate, SlotValue::Yes));
                    out.push(SlotAssertion::new(
                        Role::Usr,
                        Slot::DonationAmount,
                        SlotValue::Amount(amount.to_string()),
                    ));
                }
            }
        }
        Role::Sys => {
            if acts.contains(DialogueAct::PersonalStory) && mentions_kids(text) {
                out.push(SlotAssertion::new(
                    Role::Sys,
                    Slot::HaveKids,
                    SlotValue::from_bool(answer_polarity(text)),
                ));
            }
            if acts.contains(DialogueAct::SelfModeling) {
                if contains_phrase(text, "i have donated") {
                    out.push(SlotAssertion::new(Role::Sys, Slot::DonatedBefore, SlotValue::Yes));
                }
                if contains_phrase(text, "i am going to donate")
                    || contains_phrase(text, "i plan to give")
                {
                    out.push(SlotAssertion::new(Role::Sys, Slot::WantToDonate, SlotValue::Yes));
                }
            }
            if acts.contains(DialogueAct::Thank)
                && ["donation", "generosity"]
                    .iter()
                    .any(|w| text.split(' ').any(|t| t == *w))
            {
                out.push(SlotAssertion::new(Role::Usr, Slot::WantToDonate, SlotValue::Yes));
            }
        }
    }
    out
}

/// Returns updated copies of both profiles after `new_turn`.
pub fn update_profiles(profiles: &Profiles, new_turn: &Turn, prev_sys_acts: ActSet) -> Profiles {
    let mut next = profiles.clone();
    next.apply(&rule_assertions(prev_sys_acts, new_turn));
    next
}
