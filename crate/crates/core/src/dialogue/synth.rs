//! Synthetic persuasion corpus.
//!
//! Dialogues follow a persuasion skeleton: greet, inquire, one or more
//! appeals, propose a donation, react to the answer, close. The user
//! persona is sampled per dialogue and the user's willingness to donate
//! grows with the number of strategy turns they have seen.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::acts::DialogueAct as A;
use super::{ActSet, Corpus, Dialogue, Persona, Role, Slot, SlotValue, Turn, Utterance, Vocabulary};

type Template = (&'static str, &'static [A]);

const SYS_GREETING: &[Template] = &[
    ("hello how are you doing today", &[A::Greeting]),
    ("hi there how are you on this fine day", &[A::Greeting]),
];
const SYS_ASK_ORG: &[Template] = &[
    ("have you ever heard of the charity called save the children", &[A::AskOrgHeard]),
    ("are you familiar with the organization save the children", &[A::AskOrgHeard]),
];
const SYS_CREDIBILITY: &[Template] = &[
    (
        "save the children is an international organization that helps kids in developing countries get health care and education",
        &[A::CredibilityAppeal],
    ),
    (
        "they have been working for over one hundred years to protect the rights of kids all around the world",
        &[A::CredibilityAppeal],
    ),
];
const SYS_EMOTION: &[Template] = &[
    (
        "many kids are suffering from hunger and disease and they really need our help right now",
        &[A::EmotionAppeal],
    ),
    (
        "it breaks my heart to think of little ones who do not have enough food or clean water",
        &[A::EmotionAppeal],
    ),
];
const SYS_LOGICAL: &[Template] = &[
    (
        "even a small amount of money can provide a warm meal for a child in need",
        &[A::LogicalAppeal],
    ),
    (
        "every dollar you give goes directly to programs that keep families safe and healthy",
        &[A::LogicalAppeal],
    ),
];
const SYS_STORY_KIDS: Template = (
    "i have a daughter myself so this cause is very close to my heart",
    &[A::PersonalStory],
);
const SYS_STORY_NO_KIDS: Template = (
    "i do not have kids myself but i still care a lot about the ones in need",
    &[A::PersonalStory],
);
const SYS_SELF_MODELING: &[Template] = &[
    (
        "i am going to donate part of my own payment to this charity as well",
        &[A::SelfModeling],
    ),
    (
        "i have donated to them before and i plan to give again today",
        &[A::SelfModeling],
    ),
];
const SYS_ASK_KIDS: &[Template] = &[
    ("do you have kids of your own", &[A::AskHaveKids]),
    ("do you have any children at home", &[A::AskHaveKids]),
];
const SYS_ASK_DONATED: &[Template] = &[
    ("have you ever donated to a charity before", &[A::AskDonatedBefore]),
    ("have you donated to any charity in the past", &[A::AskDonatedBefore]),
];
const SYS_PROPOSE: &[Template] = &[
    (
        "would you like to donate some of your payment to save the children",
        &[A::ProposeDonation],
    ),
    (
        "would you consider donating part of your task payment to help them",
        &[A::ProposeDonation],
    ),
];
const SYS_FOOT_IN_DOOR: &[Template] = &[
    (
        "how about a small donation of just ten cents to start",
        &[A::FootInTheDoor, A::ProposeDonation],
    ),
    (
        "even a tiny donation would make a difference would you be willing to try",
        &[A::FootInTheDoor, A::ProposeDonation],
    ),
];
const SYS_ASK_AMOUNT: &[Template] = &[
    ("how much would you like to donate to the charity", &[A::AskDonationAmount]),
    ("how much of your payment would you like to give", &[A::AskDonationAmount]),
];
const SYS_INFO_DEDUCT: Template = (
    "the donation will be directly deducted from your task payment",
    &[A::ProvideInfo],
);
const SYS_INFO_AMOUNT: Template = (
    "you can choose any amount from zero to all of your payment",
    &[A::ProvideInfo],
);
const SYS_THANK_DONATION: &[Template] = &[
    (
        "thank you so much for your donation the kids will really appreciate it",
        &[A::Thank],
    ),
    (
        "thanks for your generous donation you are making a real difference",
        &[A::Thank],
    ),
];
const SYS_CLOSE_DONATED: Template = ("it was really nice talking to you goodbye", &[A::Closing]);
const SYS_CLOSE_REFUSED: Template = (
    "thank you for your time and have a nice day",
    &[A::Thank, A::Closing],
);

const USR_GREETING: &[Template] = &[
    ("hi i am doing well how about you", &[A::Greeting]),
    ("hello i am good", &[A::Greeting]),
];
const USR_REACTION: &[Template] = &[
    ("that is really sad to hear", &[A::Other]),
    ("i did not know that", &[A::Other]),
    ("that sounds like a good cause", &[A::Other]),
    ("wow that is a lot", &[A::Other]),
];
const USR_ORG_YES: Template = ("yes i have heard of them before", &[A::ProvideInfo]);
const USR_ORG_NO: Template = ("no i have never heard of them", &[A::ProvideInfo]);
const USR_KIDS_YES: &[Template] = &[
    ("yes i have two kids", &[A::ProvideInfo]),
    ("yes i have a son", &[A::ProvideInfo]),
];
const USR_KIDS_NO: Template = ("no i do not have any kids", &[A::ProvideInfo]);
const USR_DONATED_YES: Template = (
    "yes i donate to charities from time to time",
    &[A::ProvideInfo],
);
const USR_DONATED_NO: Template = ("no i have never donated before", &[A::ProvideInfo]);
const USR_AGREE: &[Template] = &[
    ("sure i would like to donate", &[A::AgreeDonation]),
    ("okay i will donate to help them", &[A::AgreeDonation]),
];
const USR_DISAGREE: &[Template] = &[
    ("i cant donate right now sorry", &[A::DisagreeDonation]),
    ("i am not interested in donating today", &[A::DisagreeDonation]),
    ("i would rather not give anything", &[A::DisagreeDonation]),
];
const USR_AMOUNTS: &[&str] = &["ten cents", "twenty cents", "fifty cents", "one dollar", "two dollars"];
const USR_ASK_HOW: Template = ("how can i donate", &[A::AskDonationAmount]);
const USR_ASK_AGAIN: Template = (
    "can you remind me again how to donate",
    &[A::AskDonationAmount],
);
const USR_ASK_ORG: Template = (
    "can you tell me more about the organization",
    &[A::AskOrgHeard],
);
const USR_ASK_KIDS: Template = ("do you have kids yourself", &[A::AskHaveKids]);
const USR_ASK_DONATED: Template = (
    "have you ever donated to them yourself",
    &[A::AskDonatedBefore],
);
const USR_CLOSING: &[Template] = &[
    ("goodbye and good luck", &[A::Closing]),
    ("bye", &[A::Closing]),
];

/// Corpus flavour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthStyle {
    #[default]
    Standard,
    /// Persistent system speakers: after a refusal they often repeat the
    /// proposal or an earlier appeal verbatim, so a model fit to them
    /// over-produces repeats.
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_dialogues: usize,
    pub style: SynthStyle,
}

impl SynthConfig {
    pub fn new(seed: u64, n_dialogues: usize) -> Self {
        Self {
            seed,
            n_dialogues,
            style: SynthStyle::Standard,
        }
    }

    pub fn adversarial(mut self) -> Self {
        self.style = SynthStyle::Adversarial;
        self
    }
}

fn all_templates() -> impl Iterator<Item = &'static str> {
    let groups: [&[Template]; 22] = [
        SYS_GREETING,
        SYS_ASK_ORG,
        SYS_CREDIBILITY,
        SYS_EMOTION,
        SYS_LOGICAL,
        &[SYS_STORY_KIDS, SYS_STORY_NO_KIDS],
        SYS_SELF_MODELING,
        SYS_ASK_KIDS,
        SYS_ASK_DONATED,
        SYS_PROPOSE,
        SYS_FOOT_IN_DOOR,
        SYS_ASK_AMOUNT,
        &[SYS_INFO_DEDUCT, SYS_INFO_AMOUNT, SYS_CLOSE_DONATED, SYS_CLOSE_REFUSED],
        SYS_THANK_DONATION,
        USR_GREETING,
        USR_REACTION,
        &[USR_ORG_YES, USR_ORG_NO, USR_KIDS_NO, USR_DONATED_YES, USR_DONATED_NO],
        USR_KIDS_YES,
        USR_AGREE,
        USR_DISAGREE,
        &[USR_ASK_HOW, USR_ASK_AGAIN, USR_ASK_ORG, USR_ASK_KIDS, USR_ASK_DONATED],
        USR_CLOSING,
    ];
    groups
        .into_iter()
        .flat_map(|g| g.iter().map(|t| t.0))
        .chain(["i will give"])
        .chain(USR_AMOUNTS.iter().copied())
}

/// The closed vocabulary covering every template word.
pub fn synthetic_vocabulary() -> Vocabulary {
    Vocabulary::build(all_templates())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Body {
    Credibility,
    Emotion,
    Logical,
    Story,
    SelfModeling,
    AskKids,
    AskDonated,
}

impl Body {
    fn is_strategy(self) -> bool {
        !matches!(self, Body::AskKids | Body::AskDonated)
    }
}

struct Builder<'a> {
    vocab: &'a Vocabulary,
    rng: ChaCha8Rng,
    turns: Vec<Turn>,
    style: SynthStyle,
}

impl Builder<'_> {
    fn say(&mut self, role: Role, (text, acts): Template) {
        self.say_text(role, text, acts);
    }

    fn say_text(&mut self, role: Role, text: &str, acts: &[A]) {
        let utterance = Utterance::encode(text, self.vocab).expect("templates are non-empty");
        self.turns
            .push(Turn::new(role, utterance, acts.iter().copied().collect::<ActSet>()));
    }

    /// Picks a template; the adversarial style always uses the first variant.
    fn pick(&mut self, group: &[Template]) -> Template {
        match self.style {
            SynthStyle::Adversarial => group[0],
            SynthStyle::Standard => *group.choose(&mut self.rng).expect("non-empty group"),
        }
    }

    fn coin(&mut self, p: f64) -> bool {
        self.rng.random_bool(p)
    }

    /// One small-ask retry after a refusal.
    fn foot_in_the_door(&mut self, strategies: usize) -> Option<&'static str> {
        if !self.coin(0.6) {
            return None;
        }
        let t = self.pick(SYS_FOOT_IN_DOOR);
        self.say(Role::Sys, t);
        self.small_ask_answer((0.3 + 0.1 * strategies as f64).min(0.8))
    }

    fn small_ask_answer(&mut self, p_accept: f64) -> Option<&'static str> {
        if self.coin(p_accept) {
            let amount = *USR_AMOUNTS[..2].choose(&mut self.rng).unwrap();
            self.say_text(Role::Usr, &format!("i will give {amount}"), &[A::ProvideInfo]);
            Some(amount)
        } else {
            let t = self.pick(USR_DISAGREE);
            self.say(Role::Usr, t);
            None
        }
    }

    /// A pushy persuader: after a refusal it often repeats its proposal or
    /// an earlier appeal word for word before trying a smaller ask.
    fn persist(&mut self, strategies: usize, said: &[Template]) -> Option<&'static str> {
        for _ in 0..4 {
            let roll: f64 = self.rng.random();
            if roll < 0.6 {
                let t = self.pick(SYS_PROPOSE);
                self.say(Role::Sys, t);
                if self.coin(0.2) {
                    let t = self.pick(USR_AGREE);
                    self.say(Role::Usr, t);
                    let t = self.pick(SYS_ASK_AMOUNT);
                    self.say(Role::Sys, t);
                    let amount = *USR_AMOUNTS.choose(&mut self.rng).unwrap();
                    self.say_text(Role::Usr, &format!("i will give {amount}"), &[A::ProvideInfo]);
                    return Some(amount);
                }
                let t = self.pick(USR_DISAGREE);
                self.say(Role::Usr, t);
            } else if roll < 0.9 && !said.is_empty() {
                let t = *said.choose(&mut self.rng).unwrap();
                self.say(Role::Sys, t);
                let t = self.pick(USR_DISAGREE);
                self.say(Role::Usr, t);
            } else {
                let t = self.pick(SYS_FOOT_IN_DOOR);
                self.say(Role::Sys, t);
                return self.small_ask_answer((0.3 + 0.1 * strategies as f64).min(0.8));
            }
        }
        None
    }
}

fn build_dialogue(index: usize, seed: u64, style: SynthStyle, vocab: &Vocabulary) -> Dialogue {
    let mut b = Builder {
        vocab,
        rng: ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        turns: Vec::new(),
        style,
    };
    let mut persona = Persona::new();
    let usr_kids = b.coin(0.5);
    let usr_heard = b.coin(0.5);
    let usr_donated = b.coin(0.5);
    let sys_kids = b.coin(0.5);

    let g = b.pick(SYS_GREETING);
    b.say(Role::Sys, g);
    let g = b.pick(USR_GREETING);
    b.say(Role::Usr, g);

    if b.coin(0.5) {
        let t = b.pick(SYS_ASK_ORG);
        b.say(Role::Sys, t);
        b.say(Role::Usr, if usr_heard { USR_ORG_YES } else { USR_ORG_NO });
        persona.insert(Slot::HeardOfOrg, SlotValue::from_bool(usr_heard));
    }

    let mut pool = vec![
        Body::Credibility,
        Body::Emotion,
        Body::Logical,
        Body::Story,
        Body::SelfModeling,
        Body::AskKids,
        Body::AskDonated,
    ];
    pool.shuffle(&mut b.rng);
    // the adversarial style spends its turns on retries instead
    let k = match style {
        SynthStyle::Standard => *[1usize, 1, 2, 2].choose(&mut b.rng).unwrap(),
        SynthStyle::Adversarial => *[1usize, 1, 1, 2].choose(&mut b.rng).unwrap(),
    };
    let mut strategies = 0usize;
    let mut said: Vec<Template> = Vec::new();
    for item in pool.into_iter().take(k) {
        if item.is_strategy() {
            strategies += 1;
        }
        match item {
            Body::AskKids => {
                let t = b.pick(SYS_ASK_KIDS);
                b.say(Role::Sys, t);
                let ans = if usr_kids { b.pick(USR_KIDS_YES) } else { USR_KIDS_NO };
                b.say(Role::Usr, ans);
                persona.insert(Slot::HaveKids, SlotValue::from_bool(usr_kids));
                continue;
            }
            Body::AskDonated => {
                let t = b.pick(SYS_ASK_DONATED);
                b.say(Role::Sys, t);
                b.say(Role::Usr, if usr_donated { USR_DONATED_YES } else { USR_DONATED_NO });
                persona.insert(Slot::DonatedBefore, SlotValue::from_bool(usr_donated));
                continue;
            }
            Body::Credibility => {
                let t = b.pick(SYS_CREDIBILITY);
                b.say(Role::Sys, t);
                said.push(t);
            }
            Body::Emotion => {
                let t = b.pick(SYS_EMOTION);
                b.say(Role::Sys, t);
                said.push(t);
            }
            Body::Logical => {
                let t = b.pick(SYS_LOGICAL);
                b.say(Role::Sys, t);
                said.push(t);
            }
            Body::Story => {
                let t = if sys_kids { SYS_STORY_KIDS } else { SYS_STORY_NO_KIDS };
                b.say(Role::Sys, t);
                said.push(t);
            }
            Body::SelfModeling => {
                let t = b.pick(SYS_SELF_MODELING);
                b.say(Role::Sys, t);
                said.push(t);
            }
        }
        // user reacts, or asks a follow-up that the system answers
        if b.coin(0.2) {
            let kind = *[0u8, 1, 2].choose(&mut b.rng).unwrap();
            match kind {
                0 => {
                    b.say(Role::Usr, USR_ASK_ORG);
                    let t = b.pick(SYS_CREDIBILITY);
                    b.say(Role::Sys, t);
                }
                1 => {
                    b.say(Role::Usr, USR_ASK_KIDS);
                    b.say(Role::Sys, if sys_kids { SYS_STORY_KIDS } else { SYS_STORY_NO_KIDS });
                }
                _ => {
                    b.say(Role::Usr, USR_ASK_DONATED);
                    b.say(Role::Sys, SYS_SELF_MODELING[1]);
                }
            }
            strategies += 1;
        }
        let r = b.pick(USR_REACTION);
        b.say(Role::Usr, r);
    }

    let t = b.pick(SYS_PROPOSE);
    b.say(Role::Sys, t);
    let base_agree = match style {
        SynthStyle::Standard => 0.2,
        SynthStyle::Adversarial => 0.1,
    };
    let p_agree = (base_agree + 0.15 * strategies as f64).min(0.85);
    let donated_amount = if b.coin(p_agree) {
        let t = b.pick(USR_AGREE);
        b.say(Role::Usr, t);
        let t = b.pick(SYS_ASK_AMOUNT);
        b.say(Role::Sys, t);
        let amount = *USR_AMOUNTS.choose(&mut b.rng).unwrap();
        b.say_text(Role::Usr, &format!("i will give {amount}"), &[A::ProvideInfo]);
        Some(amount)
    } else {
        let t = b.pick(USR_DISAGREE);
        b.say(Role::Usr, t);
        match style {
            SynthStyle::Standard => b.foot_in_the_door(strategies),
            SynthStyle::Adversarial => b.persist(strategies, &said),
        }
    };
    match donated_amount {
        Some(amount) => {
            persona.insert(Slot::WantToDonate, SlotValue::Yes);
            persona.insert(Slot::DonationAmount, SlotValue::Amount(amount.to_string()));
            let t = b.pick(SYS_THANK_DONATION);
            b.say(Role::Sys, t);
            if b.coin(0.5) {
                b.say(Role::Usr, USR_ASK_HOW);
                b.say(Role::Sys, SYS_INFO_DEDUCT);
                if b.coin(0.4) {
                    b.say(Role::Usr, USR_ASK_AGAIN);
                    b.say(Role::Sys, SYS_INFO_DEDUCT);
                }
            }
        }
        None => {
            persona.insert(Slot::WantToDonate, SlotValue::No);
            b.say(Role::Sys, SYS_CLOSE_REFUSED);
        }
    }
    if b.coin(0.5) {
        let r = b.pick(USR_CLOSING);
        b.say(Role::Usr, r);
    }

    Dialogue {
        id: format!("synth-{seed}-{index:05}"),
        turns: b.turns,
        persona,
    }
}

/// Generates `n_dialogues` synthetic dialogues; deterministic given the seed.
pub fn generate_corpus(config: &SynthConfig) -> Corpus {
    let vocab = synthetic_vocabulary();
    let dialogues = (0..config.n_dialogues)
        .map(|i| build_dialogue(i, config.seed, config.style, &vocab))
        .collect();
    Corpus { dialogues, vocab }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{classify_acts, Profiles};

    #[test]
    fn deterministic_given_seed() {
        let a = generate_corpus(&SynthConfig::new(7, 2));
        let b = generate_corpus(&SynthConfig::new(7, 2));
        assert_eq!(a, b);
        assert_ne!(a, generate_corpus(&SynthConfig::new(8, 2)));
    }

    #[test]
    fn vocabulary_is_small_and_covers_all_text() {
        let c = generate_corpus(&SynthConfig::new(7, 200).adversarial());
        assert!(c.vocab.len() <= 512, "{}", c.vocab.len());
        for d in &c.dialogues {
            for t in &d.turns {
                assert!(!t.utterance.words().contains(&crate::dialogue::UNK), "{}", t.utterance.text());
            }
        }
    }

    #[test]
    fn mean_turns_in_range() {
        let c = generate_corpus(&SynthConfig::new(7, 200));
        let mean = c.dialogues.iter().map(|d| d.turns.len()).sum::<usize>() as f64 / 200.0;
        assert!((8.0..=13.0).contains(&mean), "{mean}");
    }

    #[test]
    fn every_template_classifies_to_its_acts() {
        let vocab = synthetic_vocabulary();
        let sys: [&[Template]; 13] = [
            SYS_GREETING,
            SYS_ASK_ORG,
            SYS_CREDIBILITY,
            SYS_EMOTION,
            SYS_LOGICAL,
            &[SYS_STORY_KIDS, SYS_STORY_NO_KIDS, SYS_INFO_DEDUCT, SYS_INFO_AMOUNT],
            SYS_SELF_MODELING,
            SYS_ASK_KIDS,
            SYS_ASK_DONATED,
            SYS_PROPOSE,
            SYS_FOOT_IN_DOOR,
            SYS_ASK_AMOUNT,
            &[SYS_CLOSE_DONATED, SYS_CLOSE_REFUSED, SYS_THANK_DONATION[0], SYS_THANK_DONATION[1]],
        ];
        for (text, acts) in sys.iter().flat_map(|g| g.iter()) {
            let u = Utterance::encode(text, &vocab).unwrap();
            let expected: ActSet = acts.iter().copied().collect();
            assert_eq!(classify_acts(&u, Role::Sys), expected, "SYS `{text}`");
        }
        let usr: [&[Template]; 8] = [
            USR_GREETING,
            USR_REACTION,
            &[USR_ORG_YES, USR_ORG_NO, USR_KIDS_NO, USR_DONATED_YES, USR_DONATED_NO],
            USR_KIDS_YES,
            USR_AGREE,
            USR_DISAGREE,
            &[USR_ASK_HOW, USR_ASK_AGAIN, USR_ASK_ORG, USR_ASK_KIDS, USR_ASK_DONATED],
            USR_CLOSING,
        ];
        for (text, acts) in usr.iter().flat_map(|g| g.iter()) {
            let u = Utterance::encode(text, &vocab).unwrap();
            let expected: ActSet = acts.iter().copied().collect();
            assert_eq!(classify_acts(&u, Role::Usr), expected, "USR `{text}`");
        }
    }

    #[test]
    fn classifier_agrees_with_generator_on_corpus() {
        for style in [SynthStyle::Standard, SynthStyle::Adversarial] {
            let c = generate_corpus(&SynthConfig { seed: 11, n_dialogues: 300, style });
            let (mut total, mut agree) = (0usize, 0usize);
            for t in c.dialogues.iter().flat_map(|d| &d.turns) {
                total += 1;
                agree += usize::from(classify_acts(&t.utterance, t.role) == t.acts);
            }
            assert!(agree as f64 >= 0.99 * total as f64, "{agree}/{total}");
        }
    }

    #[test]
    fn turns_alternate_and_profiles_recover_persona() {
        let c = generate_corpus(&SynthConfig::new(5, 300));
        for d in &c.dialogues {
            assert!(d.alternates(), "{}", d.id);
            let profiles = Profiles::replay(&d.turns);
            assert_eq!(profiles.usr.entries(), &d.persona, "{}", d.id);
        }
    }

    #[test]
    fn ids_are_unique() {
        let c = generate_corpus(&SynthConfig::new(5, 100));
        let ids: std::collections::BTreeSet<_> = c.dialogues.iter().map(|d| &d.id).collect();
        assert_eq!(ids.len(), 100);
    }
}
