//! Templated two-style sentence generator for desk experiments.
//!
//! Each sentence is `<subject> <verb> <name> <place>.` where subject, verb
//! and place come from one of two small lexicons and `<name>` is a fresh
//! pronounceable string, so every sentence carries a few characters that
//! can only be predicted by having seen that exact sentence.

use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    Woods,
    Harbor,
}

struct Lexicon {
    subjects: &'static [&'static str],
    verbs: &'static [&'static str],
    places: &'static [&'static str],
}

const WOODS: Lexicon = Lexicon {
    subjects: &[
        "the fox", "an owl", "the elk", "a hare", "the crow", "a wolf",
    ],
    verbs: &["saw", "fed", "hid", "met", "woke"],
    places: &["in snow", "by moss", "at dusk", "in fern", "on a log"],
};

const HARBOR: Lexicon = Lexicon {
    subjects: &[
        "the crew",
        "a mate",
        "the cook",
        "a pilot",
        "the guard",
        "a clerk",
    ],
    verbs: &["paid", "told", "hired", "fined", "kept"],
    places: &["at port", "on deck", "at sea", "by a pier", "at bay"],
};

const CONSONANTS: &[char] = &[
    'b', 'd', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z',
];
const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];

fn pick<'a>(rng: &mut Rng, xs: &'a [&'a str]) -> &'a str {
    xs[rng.below(xs.len())]
}

/// A consonant-vowel name of `len` letters.
fn name(rng: &mut Rng, len: usize) -> String {
    (0..len)
        .map(|i| {
            let set = if i % 2 == 0 { CONSONANTS } else { VOWELS };
            set[rng.below(set.len())]
        })
        .collect()
}

pub fn sentence(style: Style, rng: &mut Rng) -> String {
    let lex = match style {
        Style::Woods => &WOODS,
        Style::Harbor => &HARBOR,
    };
    let subject = pick(rng, lex.subjects);
    let verb = pick(rng, lex.verbs);
    let place = pick(rng, lex.places);
    let n = name(rng, 5);
    format!("{subject} {verb} {n} {place}.")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    /// Training sentences; even positions favour the woods style.
    pub train_sentences: usize,
    pub validation_sentences: usize,
    pub holdout_sentences: usize,
    /// Probability that an even-position sentence uses the harbor style
    /// instead, i.e. how much unlearn-style content the retain side shares.
    pub overlap: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            train_sentences: 200,
            validation_sentences: 60,
            holdout_sentences: 100,
            overlap: 0.0,
            seed: 2024,
        }
    }
}

/// Training text alternating woods/harbor, validation text in the harbor
/// (retained) style and holdout text in the woods (unlearned) style.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpora {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub holdout: Vec<String>,
}

pub fn generate(spec: &SynthSpec) -> SynthCorpora {
    let root = Rng::new(spec.seed);
    let mut rng = root.split(0);
    let train = (0..spec.train_sentences)
        .map(|i| {
            let style = if i % 2 == 0 && rng.uniform() >= spec.overlap {
                Style::Woods
            } else {
                Style::Harbor
            };
            sentence(style, &mut rng)
        })
        .collect();
    let mut rng = root.split(1);
    let validation = (0..spec.validation_sentences)
        .map(|_| sentence(Style::Harbor, &mut rng))
        .collect();
    let mut rng = root.split(2);
    let holdout = (0..spec.holdout_sentences)
        .map(|_| sentence(Style::Woods, &mut rng))
        .collect();
    SynthCorpora {
        train,
        validation,
        holdout,
    }
}
