//! Response detector: lexical repetition with the real/fake decision tree,
//! profile inconsistency, and status assignment.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dialogue::{
    is_special, is_strategy, rule_assertions, ActSet, Context, DialogueAct, Profiles, Role, Slot,
    SlotAssertion, Turn, Utterance,
};
use crate::policy::Candidate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CandidateStatus {
    HumanResponse,
    PassStrategy,
    PassNonStrategy,
    Repetition,
    Inconsistency,
}

impl CandidateStatus {
    pub const ALL: [CandidateStatus; 5] = [
        CandidateStatus::HumanResponse,
        CandidateStatus::PassStrategy,
        CandidateStatus::PassNonStrategy,
        CandidateStatus::Repetition,
        CandidateStatus::Inconsistency,
    ];

    pub fn is_pass(self) -> bool {
        matches!(self, CandidateStatus::PassStrategy | CandidateStatus::PassNonStrategy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Inclusive Jaccard threshold for entering the decision tree.
    pub threshold: f64,
    /// Also compare against user utterances.
    pub include_user_context: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            include_user_context: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeBranch {
    InquiryAnswered,
    InquiryUnanswered,
    StatementAsked,
    StatementUnasked,
    BelowThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepetitionVerdict {
    pub is_repetition: bool,
    pub max_ratio: f64,
    /// History index of the most similar earlier utterance.
    pub matched_context_index: Option<usize>,
    pub tree_branch: TreeBranch,
}

fn unigrams(ids: &[u32]) -> BTreeSet<u32> {
    ids.iter().copied().filter(|&t| !is_special(t)).collect()
}

/// |A ∩ B| / |A ∪ B| over unigram id sets; specials excluded; 0 when both are empty.
pub fn jaccard_ids(a: &[u32], b: &[u32]) -> f64 {
    let (sa, sb) = (unigrams(a), unigrams(b));
    let union = sa.union(&sb).count();
    if union == 0 {
        return 0.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

pub fn jaccard(a: &Utterance, b: &Utterance) -> f64 {
    jaccard_ids(a.tokens(), b.tokens())
}

/// Highest overlap with an earlier utterance and its history index (earliest on ties).
pub fn max_context_overlap(
    ctx: &Context<'_>,
    utterance: &Utterance,
    config: &DetectorConfig,
) -> (f64, Option<usize>) {
    let mut best = (0.0, None);
    for (i, turn) in ctx.history.iter().enumerate() {
        if turn.role == Role::Usr && !config.include_user_context {
            continue;
        }
        let r = jaccard(utterance, &turn.utterance);
        if best.1.is_none() || r > best.0 {
            best = (r, Some(i));
        }
    }
    best
}

/// Statement acts that answer each user request.
const ANSWERS: [(DialogueAct, &[DialogueAct]); 4] = [
    (
        DialogueAct::AskOrgHeard,
        &[DialogueAct::CredibilityAppeal, DialogueAct::ProvideInfo],
    ),
    (DialogueAct::AskHaveKids, &[DialogueAct::PersonalStory]),
    (DialogueAct::AskDonatedBefore, &[DialogueAct::SelfModeling]),
    (DialogueAct::AskDonationAmount, &[DialogueAct::ProvideInfo]),
];

fn requested_by(usr_acts: ActSet, candidate_acts: ActSet) -> bool {
    ANSWERS
        .iter()
        .any(|(ask, topics)| usr_acts.contains(*ask) && topics.iter().any(|t| candidate_acts.contains(*t)))
}

/// Lexical repetition refined by whether the repeat was necessary.
pub fn detect_repetition(
    ctx: &Context<'_>,
    utterance: &Utterance,
    acts: ActSet,
    config: &DetectorConfig,
) -> RepetitionVerdict {
    let (max_ratio, matched) = max_context_overlap(ctx, utterance, config);
    let verdict = |is_repetition, tree_branch| RepetitionVerdict {
        is_repetition,
        max_ratio,
        matched_context_index: matched,
        tree_branch,
    };
    if matched.is_none() || max_ratio < config.threshold {
        return verdict(false, TreeBranch::BelowThreshold);
    }
    if acts.any(DialogueAct::is_inquiry) {
        let answered = acts
            .iter()
            .filter_map(Slot::asked_by)
            .any(|slot| ctx.profiles.usr.is_filled(slot));
        return if answered {
            verdict(true, TreeBranch::InquiryAnswered)
        } else {
            verdict(false, TreeBranch::InquiryUnanswered)
        };
    }
    let usr_acts = match ctx.history.last() {
        Some(t) if t.role == Role::Usr => t.acts,
        _ => ActSet::empty(),
    };
    if requested_by(usr_acts, acts) {
        verdict(false, TreeBranch::StatementAsked)
    } else {
        verdict(true, TreeBranch::StatementUnasked)
    }
}

/// Slot values the candidate would imply as the next system turn.
pub fn extract_assertions(ctx: &Context<'_>, utterance: &Utterance, acts: ActSet) -> Vec<SlotAssertion> {
    let turn = Turn::new(Role::Sys, utterance.clone(), acts);
    rule_assertions(ctx.prev_sys_acts(), &turn)
}

/// Assertions whose slot is present with a different value.
pub fn contradictions(profiles: &Profiles, assertions: &[SlotAssertion]) -> usize {
    assertions
        .iter()
        .filter(|a| matches!(profiles.of(a.role).get(a.slot), Some(v) if *v != a.value))
        .count()
}

pub fn detect_inconsistency(profiles: &Profiles, assertions: &[SlotAssertion]) -> bool {
    contradictions(profiles, assertions) > 0
}

/// Full detector output for one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub status: CandidateStatus,
    pub repetition: RepetitionVerdict,
    pub assertions: Vec<SlotAssertion>,
    pub inconsistent: bool,
}

/// Repetition, then inconsistency, then pass split by strategy.
pub fn annotate_response(
    ctx: &Context<'_>,
    utterance: &Utterance,
    acts: ActSet,
    config: &DetectorConfig,
) -> Annotation {
    let repetition = detect_repetition(ctx, utterance, acts, config);
    let assertions = extract_assertions(ctx, utterance, acts);
    let inconsistent = detect_inconsistency(&ctx.profiles, &assertions);
    let status = if repetition.is_repetition {
        CandidateStatus::Repetition
    } else if inconsistent {
        CandidateStatus::Inconsistency
    } else if is_strategy(acts) {
        CandidateStatus::PassStrategy
    } else {
        CandidateStatus::PassNonStrategy
    };
    Annotation {
        status,
        repetition,
        assertions,
        inconsistent,
    }
}

/// Statuses parallel to the inputs, the human response (if any) first.
pub fn annotate(
    ctx: &Context<'_>,
    candidates: &[Candidate],
    human_response: Option<&Utterance>,
    config: &DetectorConfig,
) -> Vec<CandidateStatus> {
    human_response
        .map(|_| CandidateStatus::HumanResponse)
        .into_iter()
        .chain(
            candidates
                .iter()
                .map(|c| annotate_response(ctx, &c.utterance, c.acts, config).status),
        )
        .collect()
}
