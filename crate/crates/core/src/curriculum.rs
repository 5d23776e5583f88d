//! Difficulty buckets, loss-based stage ordering, replay schedules and
//! staged training.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{aldi_bucket, CorpusError, LabeledSample, ALDI_BUCKET_LABELS, NUM_DIALECTS};
use crate::plot::bar_chart;
use crate::trainer::{
    targets, Encoder, EpochLog, Model, StageComposition, TrainConfig, TrainError, TrainManifest,
    TrainedModel, Trainer,
};

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("no loss recorded for sample {0:?}")]
    MissingLoss(String),
    #[error("bucket order {0:?} is not a permutation of the bucket keys")]
    NotPermutation(Vec<usize>),
    #[error("schedule refers to sample {0:?}, which is not in the dataset")]
    UnknownId(String),
    #[error("bad replay rule: {0}")]
    BadReplayRule(String),
    #[error("bad schedule: {0}")]
    BadSchedule(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BucketKind {
    Cardinality,
    Aldi,
}

impl FromStr for BucketKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cardinality" => Ok(BucketKind::Cardinality),
            "aldi" => Ok(BucketKind::Aldi),
            _ => Err(format!(
                "unknown bucket kind {s:?}; use cardinality or aldi"
            )),
        }
    }
}

impl fmt::Display for BucketKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BucketKind::Cardinality => "cardinality",
            BucketKind::Aldi => "aldi",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bucket {
    /// Cardinality value, or 1-based dialectness interval index.
    pub key: usize,
    pub label: String,
    /// Member ids, ascending.
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketSpec {
    pub kind: BucketKind,
    /// Non-empty buckets in ascending key order.
    pub buckets: Vec<Bucket>,
}

impl BucketSpec {
    pub fn get(&self, key: usize) -> Option<&Bucket> {
        self.buckets.iter().find(|b| b.key == key)
    }

    pub fn keys(&self) -> Vec<usize> {
        self.buckets.iter().map(|b| b.key).collect()
    }
}

/// Groups samples by cardinality or by dialectness interval.
pub fn partition(ds: &[LabeledSample], kind: BucketKind) -> Result<BucketSpec, CurriculumError> {
    if ds.is_empty() {
        return Err(CurriculumError::EmptyDataset);
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for s in ds {
        let key = match kind {
            BucketKind::Cardinality => s.cardinality(),
            BucketKind::Aldi => aldi_bucket(s.sample.require_aldi()?) + 1,
        };
        groups.entry(key).or_default().push(s.id().to_string());
    }
    let buckets = groups
        .into_iter()
        .map(|(key, mut members)| {
            members.sort();
            let label = match kind {
                BucketKind::Cardinality => format!("c={key}"),
                BucketKind::Aldi => format!("I{key} {}", ALDI_BUCKET_LABELS[key - 1]),
            };
            Bucket {
                key,
                label,
                members,
            }
        })
        .collect();
    Ok(BucketSpec { kind, buckets })
}

/// Mean member loss per bucket, in bucket-key order.
pub fn bucket_mean_losses(
    spec: &BucketSpec,
    losses: &BTreeMap<String, f64>,
) -> Result<Vec<(usize, f64)>, CurriculumError> {
    spec.buckets
        .iter()
        .map(|b| {
            let mut sum = 0.0;
            for id in &b.members {
                sum += losses
                    .get(id)
                    .ok_or_else(|| CurriculumError::MissingLoss(id.clone()))?;
            }
            Ok((b.key, sum / b.members.len().max(1) as f64))
        })
        .collect()
}

/// Bucket keys from lowest to highest mean loss; equal means keep key order.
pub fn order_buckets(
    spec: &BucketSpec,
    losses: &BTreeMap<String, f64>,
) -> Result<Vec<usize>, CurriculumError> {
    let mut means = bucket_mean_losses(spec, losses)?;
    means.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(means.into_iter().map(|(k, _)| k).collect())
}

/// How many samples each earlier bucket contributes to a stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReplayRule {
    /// The size of the new bucket, capped by the smallest earlier bucket.
    #[default]
    MinPrior,
    Fixed(usize),
    FractionOfCurrent(f64),
}

impl ReplayRule {
    /// Per-prior draw size; never more than the smallest prior bucket.
    pub fn replay_size(self, current: usize, smallest_prior: usize) -> usize {
        let want = match self {
            ReplayRule::MinPrior => current,
            ReplayRule::Fixed(n) => n,
            ReplayRule::FractionOfCurrent(f) => (f * current as f64).round() as usize,
        };
        want.min(smallest_prior)
    }
}

impl fmt::Display for ReplayRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReplayRule::MinPrior => f.write_str("min-prior"),
            ReplayRule::Fixed(n) => write!(f, "fixed:{n}"),
            ReplayRule::FractionOfCurrent(x) => write!(f, "fraction:{x}"),
        }
    }
}

impl FromStr for ReplayRule {
    type Err = CurriculumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || {
            CurriculumError::BadReplayRule(format!("{s:?}; use min-prior, fixed:N or fraction:F"))
        };
        match s.split_once(':') {
            None if s == "min-prior" => Ok(ReplayRule::MinPrior),
            Some(("fixed", n)) => n.parse().map(ReplayRule::Fixed).map_err(|_| bad()),
            Some(("fraction", x)) => match x.parse::<f64>() {
                Ok(v) if v >= 0.0 && v.is_finite() => Ok(ReplayRule::FractionOfCurrent(v)),
                _ => Err(bad()),
            },
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayDraw {
    pub bucket: usize,
    pub ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    /// 1-based.
    pub stage: usize,
    pub bucket: usize,
    pub new: Vec<String>,
    pub replay: Vec<ReplayDraw>,
}

impl Stage {
    pub fn replay_count(&self) -> usize {
        self.replay.iter().map(|r| r.ids.len()).sum()
    }

    pub fn len(&self) -> usize {
        self.new.len() + self.replay_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self) -> impl Iterator<Item = &String> {
        self.new
            .iter()
            .chain(self.replay.iter().flat_map(|r| r.ids.iter()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub kind: BucketKind,
    pub order: Vec<usize>,
    pub seed: u64,
    pub replay_rule: ReplayRule,
    pub stages: Vec<Stage>,
}

/// Stage `e` takes all of bucket `order[e]` plus a seeded draw without
/// replacement of equal size from each earlier bucket.
pub fn build_schedule(
    spec: &BucketSpec,
    order: &[usize],
    seed: u64,
    rule: ReplayRule,
) -> Result<CurriculumSchedule, CurriculumError> {
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != spec.keys() {
        return Err(CurriculumError::NotPermutation(order.to_vec()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stages = Vec::with_capacity(order.len());
    for (e, &key) in order.iter().enumerate() {
        let current = spec.get(key).expect("key checked above");
        let priors: Vec<&Bucket> = order[..e]
            .iter()
            .map(|k| spec.get(*k).expect("key checked"))
            .collect();
        let smallest = priors.iter().map(|b| b.members.len()).min().unwrap_or(0);
        let r = rule.replay_size(current.members.len(), smallest);
        let replay = priors
            .iter()
            .map(|b| {
                let mut picked: Vec<usize> =
                    sample_indices(&mut rng, b.members.len(), r).into_vec();
                picked.sort_unstable();
                ReplayDraw {
                    bucket: b.key,
                    ids: picked.into_iter().map(|i| b.members[i].clone()).collect(),
                }
            })
            .collect();
        stages.push(Stage {
            stage: e + 1,
            bucket: key,
            new: current.members.clone(),
            replay,
        });
    }
    Ok(CurriculumSchedule {
        kind: spec.kind,
        order: order.to_vec(),
        seed,
        replay_rule: rule,
        stages,
    })
}

impl CurriculumSchedule {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("schedule serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CurriculumError> {
        serde_json::from_str(text).map_err(|e| CurriculumError::BadSchedule(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), CurriculumError> {
        crate::io::write_atomic(path, self.to_json().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CurriculumError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Mean loss per bucket, sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct LossProfile {
    pub kind: BucketKind,
    pub rows: Vec<(String, usize, f64)>,
}

pub fn loss_profile(
    spec: &BucketSpec,
    losses: &BTreeMap<String, f64>,
) -> Result<LossProfile, CurriculumError> {
    let mut rows: Vec<(usize, String, usize, f64)> = bucket_mean_losses(spec, losses)?
        .into_iter()
        .map(|(k, m)| {
            let b = spec.get(k).expect("key from spec");
            (k, b.label.clone(), b.members.len(), m)
        })
        .collect();
    rows.sort_by(|a, b| a.3.total_cmp(&b.3).then(a.0.cmp(&b.0)));
    Ok(LossProfile {
        kind: spec.kind,
        rows: rows.into_iter().map(|(_, l, n, m)| (l, n, m)).collect(),
    })
}

impl LossProfile {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("bucket\tsize\tmean_loss\n");
        for (label, n, m) in &self.rows {
            out.push_str(&format!("{label}\t{n}\t{m:.6}\n"));
        }
        out
    }

    pub fn to_svg(&self) -> String {
        let bars: Vec<(String, f64)> = self.rows.iter().map(|(l, _, m)| (l.clone(), *m)).collect();
        bar_chart(
            &format!("mean loss by {} bucket", self.kind),
            "mean BCE",
            &bars,
        )
    }
}

/// Trains through the schedule stage by stage, carrying weights and
/// optimiser state forward.
pub fn run_curriculum<E: Encoder>(
    schedule: &CurriculumSchedule,
    ds: &[LabeledSample],
    encoder: E,
    cfg: &TrainConfig,
    passes_per_stage: usize,
) -> Result<TrainedModel<E>, CurriculumError> {
    if passes_per_stage == 0 {
        return Err(CurriculumError::BadSchedule(
            "passes_per_stage must be positive".into(),
        ));
    }
    let by_id: HashMap<&str, usize> = ds.iter().enumerate().map(|(i, s)| (s.id(), i)).collect();
    for id in schedule.stages.iter().flat_map(Stage::ids) {
        if !by_id.contains_key(id.as_str()) {
            return Err(CurriculumError::UnknownId(id.clone()));
        }
    }
    let model = Model::new(encoder, NUM_DIALECTS, cfg.seed);
    let feats = model.featurize_all(ds.par_iter().map(|s| s.sample.text.as_str()));
    let mut trainer = Trainer::new(model, cfg)?;
    let mut manifest = TrainManifest::new(
        &format!("curriculum-{}", schedule.kind),
        &trainer.model,
        cfg,
        ds.len(),
        0,
    );
    let mut log = Vec::new();
    let mut epoch = 0;
    for stage in &schedule.stages {
        let data: Vec<_> = stage
            .ids()
            .map(|id| {
                let i = by_id[id.as_str()];
                (feats[i].clone(), targets(ds[i].labels))
            })
            .collect();
        let composition = StageComposition {
            bucket: stage.bucket,
            new: stage.new.len(),
            replay: stage.replay_count(),
        };
        for _ in 0..passes_per_stage {
            epoch += 1;
            let loss = trainer.epoch(&data, |_, _| {});
            log::info!(
                "stage {} (bucket {}): {} new + {} replay, loss {loss:.4}",
                stage.stage,
                stage.bucket,
                composition.new,
                composition.replay
            );
            log.push(EpochLog {
                stage: Some(stage.stage),
                composition: Some(composition),
                epoch,
                samples: data.len(),
                train_loss: loss,
                val_micro_f1: None,
                kept: true,
            });
        }
    }
    manifest.best_epoch = Some(epoch);
    Ok(TrainedModel {
        model: trainer.into_model(),
        manifest,
        log,
    })
}
