//! Seeded generator for a small imbalanced aspect-sentiment corpus.
//!
//! Every sentence mentions one aspect and carries a polarity cue word drawn
//! from a per-class lexicon. Noise comes from a fraction of sentences whose
//! only cue belongs to the wrong class, and optionally from a second cue of
//! another class mixed into the sentence.

use std::io::Write;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AspectInstance, Polarity, Split};

pub const ASPECTS: [&str; 8] = ["food", "service", "staff", "price", "ambience", "menu", "drinks", "location"];
pub const POSITIVE_CUES: [&str; 6] = ["great", "delicious", "friendly", "excellent", "lovely", "superb"];
pub const NEUTRAL_CUES: [&str; 6] = ["average", "ordinary", "standard", "typical", "plain", "usual"];
pub const NEGATIVE_CUES: [&str; 6] = ["awful", "rude", "terrible", "bland", "dirty", "horrible"];
pub const FILLER: [&str; 20] = [
    "we", "it", "our", "there", "very", "quite", "place", "visit", "table", "night", "order", "dinner",
    "lunch", "had", "with", "for", "this", "that", "at", "some",
];

pub fn cues(p: Polarity) -> &'static [&'static str] {
    match p {
        Polarity::Positive => &POSITIVE_CUES,
        Polarity::Neutral => &NEUTRAL_CUES,
        Polarity::Negative => &NEGATIVE_CUES,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    /// Class shares in `Polarity::ALL` order.
    pub class_ratio: [f64; 3],
    /// Probability that a sentence's cue comes from a wrong class.
    pub flip_prob: f64,
    /// Probability of one extra cue word from another class.
    pub distractor_prob: f64,
    pub min_filler: usize,
    pub max_filler: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            train_size: 400,
            test_size: 200,
            class_ratio: [0.24, 0.14, 0.62],
            flip_prob: 0.15,
            distractor_prob: 0.0,
            min_filler: 3,
            max_filler: 7,
        }
    }
}

/// Per-class counts summing to `n`: floors of the shares, remainder handed
/// out by largest fractional part (lowest class index on ties).
pub fn class_sizes(n: usize, ratio: &[f64; 3]) -> [usize; 3] {
    let total: f64 = ratio.iter().sum();
    let exact: Vec<f64> = ratio.iter().map(|r| r / total * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = e.floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut missing = n - sizes.iter().sum::<usize>();
    for &c in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        sizes[c] += 1;
        missing -= 1;
    }
    sizes
}

fn other(rng: &mut impl Rng, p: Polarity) -> Polarity {
    let others: Vec<Polarity> = Polarity::ALL.into_iter().filter(|&q| q != p).collect();
    *others.choose(rng).expect("two other classes")
}

fn sentence(rng: &mut impl Rng, cfg: &SyntheticConfig, polarity: Polarity, aspect: &str) -> String {
    let cue_class = if rng.random_bool(cfg.flip_prob) { other(rng, polarity) } else { polarity };
    let mut words: Vec<&str> = (0..rng.random_range(cfg.min_filler..=cfg.max_filler))
        .map(|_| *FILLER.choose(rng).expect("filler"))
        .collect();
    words.push(cues(cue_class).choose(rng).expect("cue"));
    if rng.random_bool(cfg.distractor_prob) {
        words.push(cues(other(rng, polarity)).choose(rng).expect("cue"));
    }
    words.shuffle(rng);
    format!("the {aspect} was {}", words.join(" "))
}

pub fn generate(cfg: &SyntheticConfig) -> Vec<AspectInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.train_size + cfg.test_size);
    for (split, n) in [(Split::Train, cfg.train_size), (Split::Test, cfg.test_size)] {
        let sizes = class_sizes(n, &cfg.class_ratio);
        let mut labels: Vec<Polarity> = Polarity::ALL
            .iter()
            .zip(sizes)
            .flat_map(|(&p, k)| std::iter::repeat_n(p, k))
            .collect();
        labels.shuffle(&mut rng);
        for (i, polarity) in labels.into_iter().enumerate() {
            let aspect = *ASPECTS.choose(&mut rng).expect("aspect");
            out.push(AspectInstance {
                sentence_id: format!("{split}-{i:04}"),
                text: sentence(&mut rng, cfg, polarity, aspect),
                aspect: aspect.to_string(),
                polarity,
                split,
            });
        }
    }
    out
}

pub fn write_jsonl(records: &[AspectInstance], out: &mut impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        writeln!(out)?;
    }
    Ok(())
}
