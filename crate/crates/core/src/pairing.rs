//! Batch sampling and intra/inter pair construction.
//!
//! A batch holds `N_s` instances from each of `N_p` randomly chosen
//! polarities. Every instance then gets up to two partners from the same
//! batch: an *intra* partner and an *inter* partner. The strategy decides
//! what "intra" and "inter" mean (same/different polarity or aspect, with an
//! optional hard constraint on the other attribute), and the similarity
//! setting decides how a partner is picked from the filtered pool.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AspectInstance, Polarity, NUM_CLASSES};
use crate::tensor::euclidean;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PairingError {
    #[error("polarity {polarity} has {available} training instances, batch needs {needed}")]
    InsufficientInstances {
        polarity: Polarity,
        needed: usize,
        available: usize,
    },
    #[error("no {kind} candidate for batch instance {instance}")]
    EmptyPool { instance: usize, kind: PairKind },
    #[error("invalid sampling configuration: {0}")]
    Config(String),
    #[error("{0} vectors for a batch of {1}")]
    VectorCount(usize, usize),
}

/// Sample-extraction strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Intra: same polarity. Inter: different polarity.
    #[serde(rename = "i_p")]
    InteractPolarity,
    /// Intra: same aspect. Inter: different aspect.
    #[serde(rename = "i_a")]
    InteractAspect,
    /// As `InteractPolarity`, both endpoints restricted to the same aspect.
    #[serde(rename = "i_p_and_l_a")]
    InteractPolarityLimitAspect,
    /// As `InteractAspect`, both endpoints restricted to the same polarity.
    #[serde(rename = "i_a_and_l_p")]
    InteractAspectLimitPolarity,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::InteractPolarity,
        Strategy::InteractAspect,
        Strategy::InteractPolarityLimitAspect,
        Strategy::InteractAspectLimitPolarity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::InteractPolarity => "i_p",
            Strategy::InteractAspect => "i_a",
            Strategy::InteractPolarityLimitAspect => "i_p_and_l_a",
            Strategy::InteractAspectLimitPolarity => "i_a_and_l_p",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    Random,
    SentenceDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    /// Euclidean-nearest candidate.
    Similar,
    /// Euclidean-farthest candidate.
    Dissimilar,
    /// Pair kind not constructed.
    Off,
}

impl PairMode {
    pub fn short(self) -> &'static str {
        match self {
            PairMode::Similar => "S",
            PairMode::Dissimilar => "D",
            PairMode::Off => "-",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairKind {
    Intra,
    Inter,
}

impl std::fmt::Display for PairKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PairKind::Intra => "intra",
            PairKind::Inter => "inter",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub n_polarities: usize,
    pub n_sentences: usize,
    pub strategy: Strategy,
    pub similarity: Similarity,
    pub intra_mode: PairMode,
    pub inter_mode: PairMode,
    /// Error on an empty candidate pool instead of skipping the pair.
    pub strict: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_polarities: 3,
            n_sentences: 4,
            strategy: Strategy::InteractPolarity,
            similarity: Similarity::SentenceDistance,
            intra_mode: PairMode::Similar,
            inter_mode: PairMode::Similar,
            strict: true,
        }
    }
}

impl SamplingConfig {
    pub fn batch_size(&self) -> usize {
        self.n_polarities * self.n_sentences
    }

    pub fn validate(&self) -> Result<(), PairingError> {
        if !(1..=NUM_CLASSES).contains(&self.n_polarities) {
            return Err(PairingError::Config(format!(
                "n_polarities must be in 1..=3, got {}",
                self.n_polarities
            )));
        }
        if self.n_sentences == 0 {
            return Err(PairingError::Config("n_sentences must be at least 1".into()));
        }
        if self.similarity == Similarity::SentenceDistance
            && self.intra_mode == PairMode::Off
            && self.inter_mode == PairMode::Off
        {
            return Err(PairingError::Config("both pair kinds are off".into()));
        }
        Ok(())
    }

    /// Pair kinds built per instance, in build order.
    pub fn active_kinds(&self) -> Vec<PairKind> {
        match self.similarity {
            Similarity::Random => vec![PairKind::Intra, PairKind::Inter],
            Similarity::SentenceDistance => {
                let mut kinds = Vec::new();
                if self.intra_mode != PairMode::Off {
                    kinds.push(PairKind::Intra);
                }
                if self.inter_mode != PairMode::Off {
                    kinds.push(PairKind::Inter);
                }
                kinds
            }
        }
    }

    fn mode(&self, kind: PairKind) -> PairMode {
        match kind {
            PairKind::Intra => self.intra_mode,
            PairKind::Inter => self.inter_mode,
        }
    }
}

/// The attributes pairing looks at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairingKey {
    pub sentence_id: String,
    pub aspect: String,
    pub polarity: Polarity,
}

impl From<&AspectInstance> for PairingKey {
    fn from(r: &AspectInstance) -> Self {
        Self {
            sentence_id: r.sentence_id.clone(),
            aspect: r.aspect.trim().to_lowercase(),
            polarity: r.polarity,
        }
    }
}

/// One pair of batch positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub kind: PairKind,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PairSet {
    pub pairs: Vec<Pair>,
    /// Pairs dropped because their candidate pool was empty (lenient mode).
    pub skipped: usize,
}

/// Draws `N_p` distinct polarities, then `N_s` distinct instances of each.
/// Returns indices into `train`.
pub fn sample_batch(
    train: &[PairingKey],
    cfg: &SamplingConfig,
    rng: &mut impl Rng,
) -> Result<Vec<usize>, PairingError> {
    cfg.validate()?;
    let mut by_class: [Vec<usize>; NUM_CLASSES] = Default::default();
    for (i, k) in train.iter().enumerate() {
        by_class[k.polarity.index()].push(i);
    }
    let mut polarities = Polarity::ALL;
    polarities.shuffle(rng);
    let mut batch = Vec::with_capacity(cfg.batch_size());
    for &polarity in &polarities[..cfg.n_polarities] {
        let pool = &by_class[polarity.index()];
        if pool.len() < cfg.n_sentences {
            return Err(PairingError::InsufficientInstances {
                polarity,
                needed: cfg.n_sentences,
                available: pool.len(),
            });
        }
        batch.extend(index::sample(rng, pool.len(), cfg.n_sentences).into_iter().map(|i| pool[i]));
    }
    Ok(batch)
}

/// Whether `cand` belongs in `anchor`'s pool for `kind` under `strategy`.
pub fn admissible(strategy: Strategy, kind: PairKind, anchor: &PairingKey, cand: &PairingKey) -> bool {
    let same_pol = anchor.polarity == cand.polarity;
    let same_asp = anchor.aspect == cand.aspect;
    match (strategy, kind) {
        (Strategy::InteractPolarity, PairKind::Intra) => same_pol,
        (Strategy::InteractPolarity, PairKind::Inter) => !same_pol,
        (Strategy::InteractAspect, PairKind::Intra) => same_asp,
        (Strategy::InteractAspect, PairKind::Inter) => !same_asp,
        (Strategy::InteractPolarityLimitAspect, PairKind::Intra) => same_pol && same_asp,
        (Strategy::InteractPolarityLimitAspect, PairKind::Inter) => !same_pol && same_asp,
        (Strategy::InteractAspectLimitPolarity, PairKind::Intra) => same_asp && same_pol,
        (Strategy::InteractAspectLimitPolarity, PairKind::Inter) => !same_asp && same_pol,
    }
}

/// Picks intra/inter partners for every batch instance.
///
/// `keys[i]` and `vectors[i]` describe batch position `i`. Distances are
/// Euclidean; ties go to the lowest batch position.
pub fn build_pairs(
    keys: &[PairingKey],
    vectors: &[Vec<f64>],
    cfg: &SamplingConfig,
    rng: &mut impl Rng,
) -> Result<PairSet, PairingError> {
    cfg.validate()?;
    if keys.len() != vectors.len() {
        return Err(PairingError::VectorCount(vectors.len(), keys.len()));
    }
    let kinds = cfg.active_kinds();
    let mut set = PairSet::default();
    for (i, anchor) in keys.iter().enumerate() {
        for &kind in &kinds {
            let pool: Vec<usize> = keys
                .iter()
                .enumerate()
                .filter(|&(j, cand)| {
                    j != i
                        && !(cand.sentence_id == anchor.sentence_id && cand.aspect == anchor.aspect)
                        && admissible(cfg.strategy, kind, anchor, cand)
                })
                .map(|(j, _)| j)
                .collect();
            if pool.is_empty() {
                if cfg.strict {
                    return Err(PairingError::EmptyPool { instance: i, kind });
                }
                set.skipped += 1;
                continue;
            }
            let dist = |j: usize| euclidean(&vectors[i], &vectors[j]);
            let partner = match cfg.similarity {
                Similarity::Random => pool[rng.random_range(0..pool.len())],
                Similarity::SentenceDistance => {
                    let better: fn(f64, f64) -> bool = match cfg.mode(kind) {
                        PairMode::Dissimilar => |d, best| d > best,
                        _ => |d, best| d < best,
                    };
                    let mut best = pool[0];
                    let mut best_d = dist(best);
                    for &j in &pool[1..] {
                        let d = dist(j);
                        if better(d, best_d) {
                            best = j;
                            best_d = d;
                        }
                    }
                    best
                }
            };
            set.pairs.push(Pair {
                a: i,
                b: partner,
                kind,
                distance: dist(partner),
            });
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn key(id: &str, aspect: &str, polarity: Polarity) -> PairingKey {
        PairingKey {
            sentence_id: id.into(),
            aspect: aspect.into(),
            polarity,
        }
    }

    fn corpus() -> Vec<PairingKey> {
        let mut keys = Vec::new();
        for (p, n) in [(Polarity::Positive, 6), (Polarity::Neutral, 4), (Polarity::Negative, 9)] {
            for i in 0..n {
                keys.push(key(&format!("{p}{i}"), "food", p));
            }
        }
        keys
    }

    #[test]
    fn batch_composition() {
        let keys = corpus();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = SamplingConfig::default();
        let batch = sample_batch(&keys, &cfg, &mut rng).unwrap();
        assert_eq!(batch.len(), 12);
        for p in Polarity::ALL {
            assert_eq!(batch.iter().filter(|&&i| keys[i].polarity == p).count(), 4);
        }
        let mut dedup = batch.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 12);

        let single = SamplingConfig {
            n_polarities: 1,
            n_sentences: 2,
            ..cfg
        };
        let batch = sample_batch(&keys, &single, &mut rng).unwrap();
        assert_eq!(batch.len(), 2);
        assert_eq!(keys[batch[0]].polarity, keys[batch[1]].polarity);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let keys = corpus();
        let cfg = SamplingConfig::default();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5)
                .map(|_| sample_batch(&keys, &cfg, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
    }

    #[test]
    fn insufficient_class_is_named() {
        let keys = corpus();
        let cfg = SamplingConfig {
            n_sentences: 5,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            sample_batch(&keys, &cfg, &mut rng),
            Err(PairingError::InsufficientInstances {
                polarity: Polarity::Neutral,
                needed: 5,
                available: 4
            })
        );
    }

    #[test]
    fn config_validation() {
        let bad = SamplingConfig {
            n_polarities: 4,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let off = SamplingConfig {
            intra_mode: PairMode::Off,
            inter_mode: PairMode::Off,
            ..Default::default()
        };
        assert!(off.validate().is_err());
    }

    #[test]
    fn only_cross_candidate_is_forced() {
        let keys = vec![key("a", "food", Polarity::Positive), key("b", "food", Polarity::Negative)];
        let vectors = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let cfg = SamplingConfig {
            intra_mode: PairMode::Off,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let set = build_pairs(&keys, &vectors, &cfg, &mut rng).unwrap();
        assert_eq!(set.pairs.len(), 2);
        assert_eq!((set.pairs[0].a, set.pairs[0].b), (0, 1));
        assert_eq!((set.pairs[1].a, set.pairs[1].b), (1, 0));
        assert!((set.pairs[0].distance - 2f64.sqrt()).abs() < 1e-15);
    }

    /// Hand-placed 5-instance batch; expected partners found by listing all
    /// pairwise distances.
    #[test]
    fn five_instance_hand_placed() {
        let keys = vec![
            key("s0", "food", Polarity::Positive),
            key("s1", "food", Polarity::Positive),
            key("s2", "staff", Polarity::Negative),
            key("s3", "price", Polarity::Negative),
            key("s4", "food", Polarity::Neutral),
        ];
        let vectors = vec![
            vec![0.0, 0.0],
            vec![3.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 2.5],
            vec![3.0, 1.0],
        ];
        // d(0,1)=3 d(0,2)=1 d(0,3)=2.5 d(0,4)=√10
        // d(1,2)=2 d(1,3)=√15.25 d(1,4)=1
        // d(2,3)=√7.25 d(2,4)=√5 d(3,4)=√11.25
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = SamplingConfig {
            strict: false,
            ..Default::default()
        };
        let set = build_pairs(&keys, &vectors, &cfg, &mut rng).unwrap();
        let partners: Vec<(usize, PairKind, usize)> =
            set.pairs.iter().map(|p| (p.a, p.kind, p.b)).collect();
        use PairKind::*;
        assert_eq!(
            partners,
            vec![
                (0, Intra, 1),
                (0, Inter, 2),
                (1, Intra, 0),
                (1, Inter, 4),
                (2, Intra, 3),
                (2, Inter, 0),
                (3, Intra, 2),
                (3, Inter, 0),
                (4, Inter, 1),
            ]
        );
        assert_eq!(set.skipped, 1);

        let far = SamplingConfig {
            inter_mode: PairMode::Dissimilar,
            intra_mode: PairMode::Off,
            ..cfg
        };
        let set = build_pairs(&keys, &vectors, &far, &mut rng).unwrap();
        let partners: Vec<usize> = set.pairs.iter().map(|p| p.b).collect();
        assert_eq!(partners, vec![4, 3, 4, 1, 3]);
    }

    #[test]
    fn strict_mode_reports_empty_pool() {
        let keys = vec![key("a", "food", Polarity::Positive), key("b", "food", Polarity::Positive)];
        let vectors = vec![vec![0.0], vec![1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            build_pairs(&keys, &vectors, &SamplingConfig::default(), &mut rng),
            Err(PairingError::EmptyPool {
                instance: 0,
                kind: PairKind::Inter
            })
        );
    }

    #[test]
    fn distance_ties_go_to_lowest_index() {
        let keys = vec![
            key("a", "x", Polarity::Positive),
            key("b", "x", Polarity::Negative),
            key("c", "x", Polarity::Neutral),
        ];
        let vectors = vec![vec![0.0], vec![1.0], vec![-1.0]];
        let cfg = SamplingConfig {
            intra_mode: PairMode::Off,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let set = build_pairs(&keys, &vectors, &cfg, &mut rng).unwrap();
        assert_eq!(set.pairs[0].b, 1);
    }

    #[test]
    fn same_sentence_other_aspect_is_a_candidate() {
        let keys = vec![
            key("s1", "ambience", Polarity::Neutral),
            key("s1", "food", Polarity::Positive),
            key("s2", "food", Polarity::Positive),
        ];
        let vectors = vec![vec![0.0], vec![0.1], vec![5.0]];
        let cfg = SamplingConfig {
            intra_mode: PairMode::Off,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let set = build_pairs(&keys, &vectors, &cfg, &mut rng).unwrap();
        assert_eq!(set.pairs[0].b, 1);
    }
}
