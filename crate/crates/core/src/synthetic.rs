//! Seeded synthetic corpora with known labels.
//!
//! Each dialect owns a few marker words; a sentence is shared filler with
//! one marker inserted. MSA sentences also carry an MSA marker and are
//! acceptable everywhere. Region markers give multi-dialect sentences.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    Dialect, LabelVector, LabeledSample, Provenance, Sample, HIGH_DIALECT_MIN, MSA_MAX,
};
use crate::pseudo_label::{serialize_llm_response, ReplayFixtures};

const SYLLABLES: [&str; 24] = [
    "ka", "ta", "ma", "na", "la", "ra", "sa", "ba", "da", "fa", "ha", "wa", "ki", "ti", "mi", "ni",
    "li", "ri", "ku", "tu", "mu", "nu", "lu", "ru",
];

/// Multi-dialect regions used for high-cardinality sentences.
pub const REGIONS: [(&str, &[Dialect]); 4] = {
    use Dialect::*;
    [
        ("gulf", &[AE, BH, KW, OM, QA, SA]),
        ("levant", &[JO, LB, PS, SY]),
        ("maghreb", &[DZ, LY, MA, TN]),
        ("nile", &[EG, SD]),
    ]
};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub per_dialect: usize,
    /// Share of sentences that are MSA, with dialectness below 1/9.
    pub msa_fraction: f64,
    /// Share of the remaining sentences with mid-range dialectness; the rest
    /// are highly dialectal.
    pub mid_fraction: f64,
    /// Share of sentences that use a region marker instead of a dialect one.
    pub region_fraction: f64,
    pub filler_words: (usize, usize),
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            per_dialect: 100,
            msa_fraction: 0.1,
            mid_fraction: 0.5,
            region_fraction: 0.0,
            filler_words: (4, 8),
            seed: 7,
        }
    }
}

/// Generated samples with their true label vectors, aligned by index.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub samples: Vec<Sample>,
    pub truth: Vec<LabelVector>,
}

fn word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    (0..syllables)
        .map(|_| *SYLLABLES.choose(rng).expect("non-empty"))
        .collect()
}

/// Marker words per dialect, per region and for MSA; fixed across seeds.
pub struct Markers {
    pub dialect: BTreeMap<Dialect, Vec<String>>,
    pub region: Vec<Vec<String>>,
    pub msa: Vec<String>,
    pub filler: Vec<String>,
}

impl Markers {
    pub fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6d61_726b);
        let mut seen = std::collections::HashSet::new();
        let mut fresh = |rng: &mut ChaCha8Rng, syl: usize| loop {
            let w = word(rng, syl);
            if seen.insert(w.clone()) {
                return w;
            }
        };
        let dialect = Dialect::ALL
            .iter()
            .map(|d| {
                (
                    *d,
                    (0..3)
                        .map(|_| format!("{}{}", fresh(&mut rng, 3), d.code().to_lowercase()))
                        .collect(),
                )
            })
            .collect();
        let region = REGIONS
            .iter()
            .map(|(name, _)| {
                (0..3)
                    .map(|_| format!("{}{name}", fresh(&mut rng, 2)))
                    .collect()
            })
            .collect();
        let msa = (0..3)
            .map(|_| format!("{}fus", fresh(&mut rng, 3)))
            .collect();
        let filler = (0..200).map(|_| fresh(&mut rng, 2)).collect();
        Markers {
            dialect,
            region,
            msa,
            filler,
        }
    }
}

impl Default for Markers {
    fn default() -> Self {
        Self::new()
    }
}

fn sentence(rng: &mut ChaCha8Rng, m: &Markers, cfg: &SyntheticConfig, extra: &[&str]) -> String {
    let n = rng.random_range(cfg.filler_words.0..=cfg.filler_words.1);
    let mut words: Vec<&str> = (0..n)
        .map(|_| m.filler.choose(rng).expect("filler").as_str())
        .collect();
    for e in extra {
        let at = rng.random_range(0..=words.len());
        words.insert(at, e);
    }
    words.join(" ")
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticCorpus {
    let m = Markers::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows: Vec<(Sample, LabelVector)> = Vec::new();
    for d in Dialect::ALL {
        for _ in 0..cfg.per_dialect {
            let marker = m.dialect[&d].choose(&mut rng).expect("markers").clone();
            let (text, truth, aldi) = if rng.random::<f64>() < cfg.msa_fraction {
                let msa = m.msa.choose(&mut rng).expect("msa").clone();
                let aldi = rng.random_range(0.0..MSA_MAX.value());
                (
                    sentence(&mut rng, &m, cfg, &[&marker, &msa]),
                    LabelVector::all(),
                    aldi,
                )
            } else if rng.random::<f64>() < cfg.region_fraction {
                let r = REGIONS
                    .iter()
                    .position(|(_, ds)| ds.contains(&d))
                    .unwrap_or(0);
                let rm = m.region[r].choose(&mut rng).expect("region").clone();
                let aldi = rng.random_range(MSA_MAX.value()..1.0);
                let truth = LabelVector::from_dialects(REGIONS[r].1.iter().copied().chain([d]));
                (sentence(&mut rng, &m, cfg, &[&rm]), truth, aldi)
            } else {
                let aldi = if rng.random::<f64>() < cfg.mid_fraction {
                    rng.random_range(MSA_MAX.value()..=HIGH_DIALECT_MIN.value())
                } else {
                    let a: f64 = rng.random_range(HIGH_DIALECT_MIN.value()..=1.0);
                    if a == HIGH_DIALECT_MIN.value() {
                        1.0
                    } else {
                        a
                    }
                };
                (
                    sentence(&mut rng, &m, cfg, &[&marker]),
                    LabelVector::from_dialects([d]),
                    aldi,
                )
            };
            rows.push((
                Sample::new(String::new(), text).with_geo(d).with_aldi(aldi),
                truth,
            ));
        }
    }
    rows.shuffle(&mut rng);
    let (samples, truth) = rows
        .into_iter()
        .enumerate()
        .map(|(i, (mut s, t))| {
            s.id = format!("syn-{i:05}");
            (s, t)
        })
        .unzip();
    SyntheticCorpus { samples, truth }
}

impl SyntheticCorpus {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn gold(&self) -> Vec<LabeledSample> {
        self.samples
            .iter()
            .zip(&self.truth)
            .map(|(s, t)| LabeledSample::new(s.clone(), *t, Provenance::Gold))
            .collect()
    }

    /// Splits by index lists into two corpora.
    pub fn select(&self, idx: &[usize]) -> SyntheticCorpus {
        SyntheticCorpus {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            truth: idx.iter().map(|&i| self.truth[i]).collect(),
        }
    }

    /// Recorded LLM responses that state the true labels. A share of the
    /// samples get a malformed first response followed by the good one.
    pub fn replay_fixtures(&self, malformed_first: f64, seed: u64) -> ReplayFixtures {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = ReplayFixtures::new();
        for (s, t) in self.samples.iter().zip(&self.truth) {
            let good = format!("```json\n{}\n```", serialize_llm_response(*t));
            let responses = if rng.random::<f64>() < malformed_first {
                vec!["I think this sentence is from Egypt.".to_string(), good]
            } else {
                vec![good]
            };
            f.insert(s.id.clone(), responses);
        }
        f
    }
}

/// Pseudo-labels that under-report cardinality: each multi-label truth is
/// kept whole with probability `keep_full`, and otherwise collapsed to one
/// of its labels.
pub fn cardinality_skewed_labels(
    corpus: &SyntheticCorpus,
    keep_full: f64,
    seed: u64,
) -> Vec<LabeledSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corpus
        .samples
        .iter()
        .zip(&corpus.truth)
        .map(|(s, t)| {
            let labels = if t.cardinality() > 1 && rng.random::<f64>() >= keep_full {
                let ds: Vec<Dialect> = t.dialects().collect();
                LabelVector::from_dialects([*ds.choose(&mut rng).expect("non-empty")])
            } else {
                *t
            };
            LabeledSample::new(s.clone(), labels, Provenance::Hybrid)
        })
        .collect()
}
