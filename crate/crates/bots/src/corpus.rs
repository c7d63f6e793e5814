//! Canned chat lines. Bots pick from one of these pools.

use rand::seq::IndexedRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusKind {
    #[default]
    Plain,
    /// Heavy on "you", "your", "yourself".
    SecondPerson,
    /// Heavy on chat abbreviations.
    Netspeak,
}

const PLAIN: &[&str] = &[
    "I think the arts program would reach the most people.",
    "The tourist bureau could bring money back into the town.",
    "Maybe we should weigh the cost against the benefit first.",
    "Parks matter a lot for families here.",
    "I would put the library near the top of the list.",
    "The budget is tight so we need to choose carefully.",
    "Let me think about the ranking for a second.",
    "We agree on the top two, the rest is open.",
];

const SECOND_PERSON: &[&str] = &[
    "What do you think about the arts program?",
    "You made a good point about tourism.",
    "Would you move the library up if you had the choice?",
    "I see your reasoning, you convinced me.",
    "Can you explain your ranking?",
    "You should decide the last one yourself.",
    "Do you want to split the money evenly?",
    "Your idea about the parks sounds right to me.",
];

const NETSPEAK: &[&str] = &[
    "lol ok that works",
    "idk tbh, parks maybe",
    "brb thinking lol",
    "omg yes the library",
    "imo tourism is overrated haha",
    "k sounds good",
    "thx, ur right",
    "np lets go with that",
];

impl CorpusKind {
    pub fn lines(self) -> &'static [&'static str] {
        match self {
            CorpusKind::Plain => PLAIN,
            CorpusKind::SecondPerson => SECOND_PERSON,
            CorpusKind::Netspeak => NETSPEAK,
        }
    }

    pub fn pick(self, rng: &mut ChaCha8Rng) -> &'static str {
        self.lines().choose(rng).expect("non-empty corpus")
    }
}
