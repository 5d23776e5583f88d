//! Binary and multi-label training against a pluggable encoder.
//!
//! A model is an [`Encoder`] followed by a linear head with one logit per
//! output. Training minimises the mean per-label binary cross-entropy with
//! Adam. Encoder parameters live in one flat vector split into layer groups,
//! which is what freezing operates on.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acceptability::BinaryDataset;
use crate::cartography::{CartographyError, TraceEntry, TraceHeader, TrainingTrace};
use crate::corpus::{Dialect, LabelVector, LabeledSample, Sample, NUM_DIALECTS};
use crate::evaluation::{micro_f1, MultiLabelPredictor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("binary dataset for {0} has a single class ({1} positives, {2} negatives)")]
    SingleClass(Dialect, usize, usize),
    #[error("cannot freeze {requested} layer groups: encoder has {groups}")]
    FreezeTooDeep { requested: usize, groups: usize },
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("cadence {cadence} yields no checkpoint in an epoch of {steps} steps")]
    NoCheckpoints { cadence: Cadence, steps: usize },
    #[error("model has {found} outputs, expected {expected}")]
    OutputMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Cartography(#[from] CartographyError),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// What a model needs from its encoder.
pub trait Encoder: Clone + Send + Sync + Serialize + DeserializeOwned {
    type Features: Clone + Send + Sync;
    type Cache;

    fn name(&self) -> &'static str;
    fn featurize(&self, text: &str) -> Self::Features;
    fn output_dim(&self) -> usize;

    /// Disjoint ranges into [`Encoder::params`], bottom layer first.
    fn layer_groups(&self) -> Vec<Range<usize>>;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    fn dropout(&self) -> f64;
    fn set_dropout(&mut self, p: f64);

    /// Dropout is applied only when an RNG is given.
    fn forward(&self, x: &Self::Features, rng: Option<&mut ChaCha8Rng>) -> (Vec<f64>, Self::Cache);

    /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output).
    fn backward(&self, x: &Self::Features, cache: &Self::Cache, grad_out: &[f64], grad: &mut [f64]);

    fn frozen_groups(&self) -> usize;
    fn set_frozen_groups(&mut self, k: usize);

    fn freeze_bottom(&mut self, k: usize) -> Result<(), TrainError> {
        let groups = self.layer_groups().len();
        if k > groups {
            return Err(TrainError::FreezeTooDeep {
                requested: k,
                groups,
            });
        }
        self.set_frozen_groups(k);
        Ok(())
    }

    fn frozen_ranges(&self) -> Vec<Range<usize>> {
        self.layer_groups()
            .into_iter()
            .take(self.frozen_groups())
            .collect()
    }
}

/// Hashed character n-gram features, sorted by bucket and L2-normalised.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatures(pub Vec<(u32, f64)>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceConfig {
    pub buckets: usize,
    pub hidden: usize,
    /// Additional `tanh` layers above the projection, each its own group.
    pub extra_layers: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            buckets: 4096,
            hidden: 32,
            extra_layers: 0,
            ngram_min: 2,
            ngram_max: 4,
        }
    }
}

/// Bag of hashed character n-grams through a linear projection, optionally
/// followed by `tanh` layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEncoder {
    config: ReferenceConfig,
    params: Vec<f64>,
    dropout: f64,
    frozen: usize,
}

pub struct ReferenceCache {
    /// Layer outputs before dropout.
    acts: Vec<Vec<f64>>,
    /// Inverted-dropout scale per layer output, when dropout was applied.
    masks: Vec<Option<Vec<f64>>>,
}

fn fnv1a(bytes: &[u8], salt: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ salt;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl ReferenceEncoder {
    pub fn new(config: ReferenceConfig, seed: u64) -> Result<Self, TrainError> {
        if config.buckets == 0 || config.hidden == 0 {
            return Err(TrainError::BadConfig(
                "buckets and hidden must be positive".into(),
            ));
        }
        if config.ngram_min == 0 || config.ngram_min > config.ngram_max {
            return Err(TrainError::BadConfig(format!(
                "bad n-gram range {}..={}",
                config.ngram_min, config.ngram_max
            )));
        }
        let h = config.hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params =
            Vec::with_capacity(config.buckets * h + h + config.extra_layers * (h * h + h));
        let a0 = 1.0 / (h as f64).sqrt();
        params.extend((0..config.buckets * h).map(|_| rng.random_range(-a0..a0)));
        params.extend(std::iter::repeat_n(0.0, h));
        let a = (6.0 / (2 * h) as f64).sqrt();
        for _ in 0..config.extra_layers {
            params.extend((0..h * h).map(|_| rng.random_range(-a..a)));
            params.extend(std::iter::repeat_n(0.0, h));
        }
        Ok(ReferenceEncoder {
            config,
            params,
            dropout: 0.0,
            frozen: 0,
        })
    }

    pub fn config(&self) -> &ReferenceConfig {
        &self.config
    }

    fn layer_offset(&self, layer: usize) -> usize {
        let h = self.config.hidden;
        if layer == 0 {
            0
        } else {
            self.config.buckets * h + h + (layer - 1) * (h * h + h)
        }
    }

    fn dropout_mask(&self, n: usize, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<f64>> {
        let rng = rng?;
        if self.dropout <= 0.0 {
            return None;
        }
        let keep = 1.0 - self.dropout;
        Some(
            (0..n)
                .map(|_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect(),
        )
    }
}

fn apply_mask(v: &[f64], mask: &Option<Vec<f64>>) -> Vec<f64> {
    match mask {
        Some(m) => v.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => v.to_vec(),
    }
}

impl Encoder for ReferenceEncoder {
    type Features = SparseFeatures;
    type Cache = ReferenceCache;

    fn name(&self) -> &'static str {
        "reference-char-ngram"
    }

    fn featurize(&self, text: &str) -> SparseFeatures {
        let mut padded: Vec<char> = Vec::with_capacity(text.chars().count() + 2);
        padded.push(' ');
        padded.extend(text.chars());
        padded.push(' ');
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        let mut buf = String::new();
        for n in self.config.ngram_min..=self.config.ngram_max {
            for w in padded.windows(n) {
                buf.clear();
                buf.extend(w);
                let b = (fnv1a(buf.as_bytes(), n as u64) % self.config.buckets as u64) as u32;
                *counts.entry(b).or_insert(0.0) += 1.0;
            }
        }
        let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
        SparseFeatures(
            counts
                .into_iter()
                .map(|(k, c)| (k, if norm > 0.0 { c / norm } else { 0.0 }))
                .collect(),
        )
    }

    fn output_dim(&self) -> usize {
        self.config.hidden
    }

    fn layer_groups(&self) -> Vec<Range<usize>> {
        (0..=self.config.extra_layers)
            .map(|l| self.layer_offset(l)..self.layer_offset(l + 1))
            .collect()
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn dropout(&self) -> f64 {
        self.dropout
    }

    fn set_dropout(&mut self, p: f64) {
        self.dropout = p;
    }

    fn forward(
        &self,
        x: &SparseFeatures,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Vec<f64>, ReferenceCache) {
        let h = self.config.hidden;
        let b0 = self.config.buckets * h;
        let mut out = self.params[b0..b0 + h].to_vec();
        for &(i, v) in &x.0 {
            let row = &self.params[i as usize * h..(i as usize + 1) * h];
            for (o, w) in out.iter_mut().zip(row) {
                *o += v * w;
            }
        }
        let mut acts = vec![out];
        let mut masks = vec![self.dropout_mask(h, rng.as_deref_mut())];
        for l in 1..=self.config.extra_layers {
            let input = apply_mask(&acts[l - 1], &masks[l - 1]);
            let off = self.layer_offset(l);
            let w = &self.params[off..off + h * h];
            let mut z = self.params[off + h * h..off + h * h + h].to_vec();
            for (i, a) in input.iter().enumerate() {
                if *a != 0.0 {
                    for (zj, wij) in z.iter_mut().zip(&w[i * h..(i + 1) * h]) {
                        *zj += a * wij;
                    }
                }
            }
            acts.push(z.into_iter().map(f64::tanh).collect());
            masks.push(self.dropout_mask(h, rng.as_deref_mut()));
        }
        let top = apply_mask(
            acts.last().expect("at least one layer"),
            masks.last().expect("mask per layer"),
        );
        (top, ReferenceCache { acts, masks })
    }

    fn backward(
        &self,
        x: &SparseFeatures,
        cache: &ReferenceCache,
        grad_out: &[f64],
        grad: &mut [f64],
    ) {
        let h = self.config.hidden;
        let mut g = apply_mask(grad_out, &cache.masks[self.config.extra_layers]);
        for l in (1..=self.config.extra_layers).rev() {
            let off = self.layer_offset(l);
            let input = apply_mask(&cache.acts[l - 1], &cache.masks[l - 1]);
            let dz: Vec<f64> = g
                .iter()
                .zip(&cache.acts[l])
                .map(|(gj, aj)| gj * (1.0 - aj * aj))
                .collect();
            let mut g_prev = vec![0.0; h];
            for i in 0..h {
                let row = off + i * h;
                let mut acc = 0.0;
                for j in 0..h {
                    grad[row + j] += input[i] * dz[j];
                    acc += self.params[row + j] * dz[j];
                }
                g_prev[i] = acc;
            }
            for j in 0..h {
                grad[off + h * h + j] += dz[j];
            }
            g = apply_mask(&g_prev, &cache.masks[l - 1]);
        }
        let b0 = self.config.buckets * h;
        for j in 0..h {
            grad[b0 + j] += g[j];
        }
        for &(i, v) in &x.0 {
            let row = i as usize * h;
            for j in 0..h {
                grad[row + j] += v * g[j];
            }
        }
    }

    fn frozen_groups(&self) -> usize {
        self.frozen
    }

    fn set_frozen_groups(&mut self, k: usize) {
        self.frozen = k;
    }

    /// Freezing more groups than exist is a warning no-op: the reference
    /// encoder stands in for deeper encoders whose default freeze depth it
    /// cannot honour.
    fn freeze_bottom(&mut self, k: usize) -> Result<(), TrainError> {
        let groups = self.layer_groups().len();
        if k > groups {
            static WARNED: std::sync::Once = std::sync::Once::new();
            WARNED.call_once(|| {
                log::warn!(
                    "reference encoder has {groups} layer group(s); ignoring request to freeze {k}"
                )
            });
            return Ok(());
        }
        self.frozen = k;
        Ok(())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy from a logit, stable for any magnitude.
pub fn bce_with_logits(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy of probabilities against 0/1 targets.
pub fn bce(probs: &[f64], targets: &[f64]) -> f64 {
    let n = probs.len().max(1) as f64;
    probs
        .iter()
        .zip(targets)
        .map(|(p, y)| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
        .sum::<f64>()
        / n
}

/// An encoder plus a linear head with `outputs` logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "E: Encoder")]
pub struct Model<E: Encoder> {
    pub encoder: E,
    outputs: usize,
    /// `outputs × hidden` weights, row-major, followed by `outputs` biases.
    head: Vec<f64>,
}

impl<E: Encoder> Model<E> {
    pub fn new(encoder: E, outputs: usize, seed: u64) -> Self {
        let h = encoder.output_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let a = (6.0 / (h + outputs) as f64).sqrt();
        let mut head: Vec<f64> = (0..outputs * h).map(|_| rng.random_range(-a..a)).collect();
        head.extend(std::iter::repeat_n(0.0, outputs));
        Model {
            encoder,
            outputs,
            head,
        }
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn head(&self) -> &[f64] {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut [f64] {
        &mut self.head
    }

    /// Encoder parameters followed by head parameters.
    pub fn param_count(&self) -> usize {
        self.encoder.params().len() + self.head.len()
    }

    pub fn param_mut(&mut self, i: usize) -> &mut f64 {
        let n = self.encoder.params().len();
        if i < n {
            &mut self.encoder.params_mut()[i]
        } else {
            &mut self.head[i - n]
        }
    }

    pub fn featurize(&self, text: &str) -> E::Features {
        self.encoder.featurize(text)
    }

    /// Order-stable parallel featurisation.
    pub fn featurize_all<'a, I>(&self, texts: I) -> Vec<E::Features>
    where
        I: IntoParallelIterator<Item = &'a str>,
        I::Iter: IndexedParallelIterator,
    {
        texts
            .into_par_iter()
            .map(|t| self.encoder.featurize(t))
            .collect()
    }

    fn head_forward(&self, h: &[f64]) -> Vec<f64> {
        let d = h.len();
        (0..self.outputs)
            .map(|k| {
                let w = &self.head[k * d..(k + 1) * d];
                self.head[self.outputs * d + k] + w.iter().zip(h).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn logits(&self, x: &E::Features) -> Vec<f64> {
        let (h, _) = self.encoder.forward(x, None);
        self.head_forward(&h)
    }

    pub fn probs(&self, x: &E::Features) -> Vec<f64> {
        self.logits(x).into_iter().map(sigmoid).collect()
    }

    pub fn probs_text(&self, text: &str) -> Vec<f64> {
        self.probs(&self.featurize(text))
    }

    /// Mean over batch and outputs of BCE-with-logits; no dropout.
    pub fn batch_loss(&self, batch: &[(&E::Features, &[f64])]) -> f64 {
        let n = (batch.len() * self.outputs).max(1) as f64;
        batch
            .iter()
            .map(|(x, y)| {
                self.logits(x)
                    .iter()
                    .zip(y.iter())
                    .map(|(z, t)| bce_with_logits(*z, *t))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n
    }

    /// Loss and flat gradient (encoder then head) over a batch.
    pub fn loss_and_gradient(
        &self,
        batch: &[(&E::Features, &[f64])],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (f64, Vec<f64>) {
        let n_enc = self.encoder.params().len();
        let d = self.encoder.output_dim();
        let mut grad = vec![0.0; n_enc + self.head.len()];
        let scale = 1.0 / (batch.len() * self.outputs).max(1) as f64;
        let mut loss = 0.0;
        for (x, y) in batch {
            let (h, cache) = self.encoder.forward(x, rng.as_deref_mut());
            let z = self.head_forward(&h);
            let mut dh = vec![0.0; d];
            {
                let (_, head_grad) = grad.split_at_mut(n_enc);
                for k in 0..self.outputs {
                    loss += bce_with_logits(z[k], y[k]);
                    let dz = (sigmoid(z[k]) - y[k]) * scale;
                    let w = &self.head[k * d..(k + 1) * d];
                    for j in 0..d {
                        head_grad[k * d + j] += dz * h[j];
                        dh[j] += dz * w[j];
                    }
                    head_grad[self.outputs * d + k] += dz;
                }
            }
            self.encoder.backward(x, &cache, &dh, &mut grad[..n_enc]);
        }
        (loss * scale, grad)
    }

    /// 18-label prediction: bit set iff sigmoid(logit) ≥ threshold.
    pub fn predict(&self, sample: &Sample, threshold: f64) -> LabelVector {
        predict_from_probs(&self.probs_text(&sample.text), threshold)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let json = serde_json::to_vec(self).map_err(std::io::Error::other)?;
        crate::io::write_atomic(path, &json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let bytes = fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| TrainError::Checkpoint {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }
}

/// Bits for probabilities at or above the threshold, in canonical order.
pub fn predict_from_probs(probs: &[f64], threshold: f64) -> LabelVector {
    let mut v = LabelVector::empty();
    for (d, p) in Dialect::ALL.iter().zip(probs) {
        if *p >= threshold {
            v.set(*d, true);
        }
    }
    v
}

pub fn predict_from_logits(logits: &[f64], threshold: f64) -> LabelVector {
    let probs: Vec<f64> = logits.iter().map(|z| sigmoid(*z)).collect();
    predict_from_probs(&probs, threshold)
}

impl<E: Encoder> MultiLabelPredictor for Model<E> {
    fn predict(&self, sample: &Sample, threshold: f64) -> LabelVector {
        Model::predict(self, sample, threshold)
    }
}

/// Mean per-label BCE for every sample, keyed by id.
pub fn per_example_loss<E: Encoder>(
    model: &Model<E>,
    ds: &[LabeledSample],
) -> BTreeMap<String, f64> {
    let feats = model.featurize_all(ds.par_iter().map(|s| s.sample.text.as_str()));
    feats
        .par_iter()
        .zip(ds.par_iter())
        .map(|(x, s)| {
            let y = targets(s.labels);
            (s.id().to_string(), model.batch_loss(&[(x, &y[..])]))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

pub fn targets(v: LabelVector) -> [f64; NUM_DIALECTS] {
    v.to_bools().map(|b| if b { 1.0 } else { 0.0 })
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step<E: Encoder>(&mut self, model: &mut Model<E>, grad: &[f64], frozen: &[Range<usize>]) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        let n_enc = model.encoder.params().len();
        let mut update = |i: usize, p: &mut f64| {
            let g = grad[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            *p -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + ADAM_EPS);
        };
        for (i, p) in model.encoder.params_mut().iter_mut().enumerate() {
            if !frozen.iter().any(|r| r.contains(&i)) {
                update(i, p);
            }
        }
        for (k, p) in model.head.iter_mut().enumerate() {
            update(n_enc + k, p);
        }
    }
}

/// When checkpoints are logged during binary training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cadence {
    /// Every `n` optimisation steps, counted from the start of each epoch.
    Steps(usize),
    /// This many evenly spaced checkpoints per epoch.
    PerEpoch(usize),
}

impl Cadence {
    /// 1-based step indices within an epoch of `steps` steps.
    pub fn checkpoint_steps(self, steps: usize) -> Result<Vec<usize>, TrainError> {
        let out: Vec<usize> = match self {
            Cadence::Steps(0) | Cadence::PerEpoch(0) => Vec::new(),
            Cadence::Steps(c) => (1..=steps / c).map(|k| k * c).collect(),
            Cadence::PerEpoch(m) if m > steps => Vec::new(),
            Cadence::PerEpoch(m) => (1..=m).map(|k| (k * steps).div_ceil(m)).collect(),
        };
        if out.is_empty() {
            return Err(TrainError::NoCheckpoints {
                cadence: self,
                steps,
            });
        }
        Ok(out)
    }

    pub fn nominal_steps(self) -> usize {
        match self {
            Cadence::Steps(c) => c,
            Cadence::PerEpoch(_) => 0,
        }
    }
}

impl fmt::Display for Cadence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cadence::Steps(n) => write!(f, "steps:{n}"),
            Cadence::PerEpoch(n) => write!(f, "per-epoch:{n}"),
        }
    }
}

impl FromStr for Cadence {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, n) = s
            .split_once(':')
            .ok_or_else(|| format!("bad cadence {s:?}"))?;
        let n: usize = n
            .parse()
            .map_err(|_| format!("bad cadence count in {s:?}"))?;
        match kind {
            "steps" => Ok(Cadence::Steps(n)),
            "per-epoch" => Ok(Cadence::PerEpoch(n)),
            _ => Err(format!(
                "bad cadence kind in {s:?}; use steps:N or per-epoch:N"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceConfig {
    pub cadence: Cadence,
    pub epochs: usize,
    pub warmup_epochs_ignored: usize,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            cadence: Cadence::Steps(300),
            epochs: 5,
            warmup_epochs_ignored: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub split_seed: u64,
    /// Seeds initialisation, shuffling and dropout.
    pub seed: u64,
    pub dropout: f64,
    pub frozen_bottom_layers: usize,
    pub inference_threshold: f64,
    pub learning_rate: f64,
    pub encoder: ReferenceConfig,
    pub trace: TraceConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 24,
            val_fraction: 0.1,
            split_seed: 42,
            seed: 1,
            dropout: 0.3,
            frozen_bottom_layers: 8,
            inference_threshold: 0.3,
            learning_rate: 0.03,
            encoder: ReferenceConfig::default(),
            trace: TraceConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::BadConfig(m));
        if self.epochs == 0 || self.batch_size == 0 || self.trace.epochs == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.inference_threshold > 0.0 && self.inference_threshold < 1.0) {
            return bad(format!(
                "threshold {} outside (0,1)",
                self.inference_threshold
            ));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction {} outside [0,1)", self.val_fraction));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0,1)", self.dropout));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate {} must be positive",
                self.learning_rate
            ));
        }
        Ok(())
    }

    pub fn reference_model(&self, outputs: usize) -> Result<Model<ReferenceEncoder>, TrainError> {
        Ok(Model::new(
            ReferenceEncoder::new(self.encoder, self.seed)?,
            outputs,
            self.seed,
        ))
    }
}

/// Optimiser state around a model, for staged or resumed training.
pub struct Trainer<E: Encoder> {
    pub model: Model<E>,
    adam: Adam,
    rng: ChaCha8Rng,
    batch_size: usize,
    frozen: Vec<Range<usize>>,
    steps: u64,
}

impl<E: Encoder> Trainer<E> {
    /// Applies the dropout and freeze settings of `cfg` to the model.
    pub fn new(mut model: Model<E>, cfg: &TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        model.encoder.set_dropout(cfg.dropout);
        model.encoder.freeze_bottom(cfg.frozen_bottom_layers)?;
        let frozen = model.encoder.frozen_ranges();
        Ok(Trainer {
            adam: Adam::new(model.param_count(), cfg.learning_rate),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5bd1_e995)),
            batch_size: cfg.batch_size,
            frozen,
            steps: 0,
            model,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    /// One shuffled pass over `data`; `after_step` sees the 1-based step
    /// index within the epoch. Returns the mean batch loss.
    pub fn epoch<T: AsRef<[f64]>>(
        &mut self,
        data: &[(E::Features, T)],
        mut after_step: impl FnMut(usize, &Model<E>),
    ) -> f64 {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let mut batches = 0;
        for (k, chunk) in order.chunks(self.batch_size).enumerate() {
            let batch: Vec<(&E::Features, &[f64])> = chunk
                .iter()
                .map(|&i| (&data[i].0, data[i].1.as_ref()))
                .collect();
            let (loss, grad) = self.model.loss_and_gradient(&batch, Some(&mut self.rng));
            self.adam.step(&mut self.model, &grad, &self.frozen);
            self.steps += 1;
            total += loss;
            batches += 1;
            after_step(k + 1, &self.model);
        }
        total / batches.max(1) as f64
    }

    pub fn into_model(self) -> Model<E> {
        self.model
    }
}

/// Which bucket a curriculum stage introduced and how many samples it used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageComposition {
    pub bucket: usize,
    pub new: usize,
    pub replay: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composition: Option<StageComposition>,
    pub epoch: usize,
    pub samples: usize,
    pub train_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_micro_f1: Option<f64>,
    pub kept: bool,
}

pub fn save_log(path: &Path, log: &[EpochLog]) -> Result<(), TrainError> {
    let mut buf = String::new();
    for e in log {
        buf.push_str(&serde_json::to_string(e).map_err(std::io::Error::other)?);
        buf.push('\n');
    }
    crate::io::write_atomic(path, buf.as_bytes())?;
    Ok(())
}

pub fn load_log(path: &Path) -> Result<Vec<EpochLog>, TrainError> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| TrainError::Checkpoint {
                path: path.display().to_string(),
                msg: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerInfo {
    pub name: String,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerInfo {
    pub fn adam(lr: f64) -> Self {
        OptimizerInfo {
            name: "adam".into(),
            learning_rate: lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// Written next to every saved model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainManifest {
    pub kind: String,
    pub encoder: String,
    pub layer_groups: usize,
    pub frozen_groups: usize,
    pub optimizer: OptimizerInfo,
    pub config: TrainConfig,
    pub train_samples: usize,
    pub val_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_val_micro_f1: Option<f64>,
}

impl TrainManifest {
    pub fn new<E: Encoder>(
        kind: &str,
        model: &Model<E>,
        cfg: &TrainConfig,
        train: usize,
        val: usize,
    ) -> Self {
        TrainManifest {
            kind: kind.into(),
            encoder: model.encoder.name().into(),
            layer_groups: model.encoder.layer_groups().len(),
            frozen_groups: model.encoder.frozen_groups(),
            optimizer: OptimizerInfo::adam(cfg.learning_rate),
            config: cfg.clone(),
            train_samples: train,
            val_samples: val,
            best_epoch: None,
            best_val_micro_f1: None,
        }
    }
}

pub const MODEL_FILE: &str = "model.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOG_FILE: &str = "training_log.jsonl";

/// A trained model together with its manifest and training log.
#[derive(Debug, Clone)]
pub struct TrainedModel<E: Encoder> {
    pub model: Model<E>,
    pub manifest: TrainManifest,
    pub log: Vec<EpochLog>,
}

impl<E: Encoder> TrainedModel<E> {
    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        fs::create_dir_all(dir)?;
        self.model.save(&dir.join(MODEL_FILE))?;
        let manifest = serde_json::to_vec_pretty(&self.manifest).map_err(std::io::Error::other)?;
        crate::io::write_atomic(&dir.join(MANIFEST_FILE), &manifest)?;
        save_log(&dir.join(LOG_FILE), &self.log)
    }

    pub fn load(dir: &Path) -> Result<Self, TrainError> {
        let model = Model::load(&dir.join(MODEL_FILE))?;
        let path = dir.join(MANIFEST_FILE);
        let manifest =
            serde_json::from_slice(&fs::read(&path)?).map_err(|e| TrainError::Checkpoint {
                path: path.display().to_string(),
                msg: e.to_string(),
            })?;
        let log = load_log(&dir.join(LOG_FILE))?;
        Ok(TrainedModel {
            model,
            manifest,
            log,
        })
    }
}

/// Index of the first epoch with the highest score; later epochs must be
/// strictly better to replace an earlier one.
pub fn select_best(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if best.is_none_or(|b| *s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Deterministic train/validation split of `n` indices.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64) * val_fraction).round() as usize;
    let n_val = n_val.min(n.saturating_sub(1));
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Trains a one-logit scorer on `positives` vs `negatives`, logging the
/// gold-label probability of every sample at each checkpoint.
pub fn train_binary<E: Encoder>(
    ds: &BinaryDataset,
    encoder: E,
    cfg: &TrainConfig,
) -> Result<(Model<E>, TrainingTrace), TrainError> {
    if ds.positives.is_empty() || ds.negatives.is_empty() {
        return Err(TrainError::SingleClass(
            ds.dialect,
            ds.positives.len(),
            ds.negatives.len(),
        ));
    }
    let model = Model::new(encoder, 1, cfg.seed);
    let samples: Vec<(&Sample, bool)> = ds
        .positives
        .iter()
        .map(|s| (s, true))
        .chain(ds.negatives.iter().map(|s| (s, false)))
        .collect();
    let feats = model.featurize_all(samples.par_iter().map(|(s, _)| s.text.as_str()));
    let data: Vec<(E::Features, [f64; 1])> = feats
        .into_iter()
        .zip(&samples)
        .map(|(x, (_, pos))| (x, [if *pos { 1.0 } else { 0.0 }]))
        .collect();

    let mut trainer = Trainer::new(model, cfg)?;
    let steps = trainer.steps_per_epoch(data.len());
    let checkpoints = cfg.trace.cadence.checkpoint_steps(steps)?;
    let mut probs: Vec<Vec<f64>> =
        vec![Vec::with_capacity(checkpoints.len() * cfg.trace.epochs); data.len()];
    for epoch in 1..=cfg.trace.epochs {
        let loss = trainer.epoch(&data, |step, m| {
            if checkpoints.contains(&step) {
                let p: Vec<f64> = data
                    .par_iter()
                    .map(|(x, y)| {
                        let q = m.probs(x)[0];
                        if y[0] == 1.0 {
                            q
                        } else {
                            1.0 - q
                        }
                    })
                    .collect();
                for (row, q) in probs.iter_mut().zip(p) {
                    row.push(q);
                }
            }
        });
        log::info!("binary {}: epoch {epoch} loss {loss:.4}", ds.dialect);
    }
    let header = TraceHeader {
        cadence_steps: cfg.trace.cadence.nominal_steps(),
        epochs: cfg.trace.epochs,
        warmup_epochs_ignored: cfg.trace.warmup_epochs_ignored,
        checkpoints_per_epoch: checkpoints.len(),
    };
    let entries = samples
        .iter()
        .zip(probs)
        .map(|((s, pos), p)| TraceEntry::binary(s.id.clone(), *pos, p))
        .collect();
    Ok((trainer.into_model(), TrainingTrace::new(header, entries)?))
}

/// Trains an 18-logit model, keeping the epoch with the best validation
/// micro F1 at the configured inference threshold.
pub fn train_multilabel<E: Encoder>(
    ds: &[LabeledSample],
    encoder: E,
    cfg: &TrainConfig,
) -> Result<TrainedModel<E>, TrainError> {
    if ds.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let model = Model::new(encoder, NUM_DIALECTS, cfg.seed);
    let feats = model.featurize_all(ds.par_iter().map(|s| s.sample.text.as_str()));
    let (train_idx, val_idx) = split_indices(ds.len(), cfg.val_fraction, cfg.split_seed);
    let train: Vec<(E::Features, [f64; NUM_DIALECTS])> = train_idx
        .iter()
        .map(|&i| (feats[i].clone(), targets(ds[i].labels)))
        .collect();
    let val_x: Vec<&E::Features> = val_idx.iter().map(|&i| &feats[i]).collect();
    let val_y: Vec<LabelVector> = val_idx.iter().map(|&i| ds[i].labels).collect();

    let mut trainer = Trainer::new(model, cfg)?;
    let mut manifest =
        TrainManifest::new("multilabel", &trainer.model, cfg, train.len(), val_x.len());
    let mut log = Vec::new();
    let mut scores = Vec::new();
    let mut best = trainer.model.clone();
    for epoch in 1..=cfg.epochs {
        let loss = trainer.epoch(&train, |_, _| {});
        let f1 = if val_x.is_empty() {
            None
        } else {
            let preds: Vec<LabelVector> = val_x
                .par_iter()
                .map(|x| predict_from_probs(&trainer.model.probs(x), cfg.inference_threshold))
                .collect();
            Some(micro_f1(&preds, &val_y))
        };
        let score = f1.unwrap_or(epoch as f64);
        let kept = select_best(&scores).is_none_or(|b| score > scores[b]);
        scores.push(score);
        if kept {
            best = trainer.model.clone();
        }
        log::info!("multilabel epoch {epoch}: loss {loss:.4} val micro F1 {f1:?} kept {kept}");
        log.push(EpochLog {
            stage: None,
            composition: None,
            epoch,
            samples: train.len(),
            train_loss: loss,
            val_micro_f1: f1,
            kept,
        });
    }
    let b = select_best(&scores).expect("at least one epoch");
    manifest.best_epoch = Some(b + 1);
    manifest.best_val_micro_f1 = log[b].val_micro_f1;
    Ok(TrainedModel {
        model: best,
        manifest,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acceptability::{BuildMode, BuildSnapshot};
    use crate::corpus::Provenance;

    fn tiny(extra: usize) -> ReferenceEncoder {
        ReferenceEncoder::new(
            ReferenceConfig {
                buckets: 64,
                hidden: 4,
                extra_layers: extra,
                ..ReferenceConfig::default()
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn featurize_is_normalised_and_deterministic() {
        let e = tiny(0);
        let a = e.featurize("hello world");
        assert_eq!(a, e.featurize("hello world"));
        let norm: f64 = a.0.iter().map(|(_, v)| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(a.0.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn bce_values() {
        assert!((bce_with_logits(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_with_logits(1000.0, 1.0) < 1e-12);
        assert!(bce_with_logits(-1000.0, 1.0).is_finite());
        let want = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((bce(&[0.9, 0.2], &[1.0, 0.0]) - want).abs() < 1e-15);
    }

    #[test]
    fn predict_uses_at_least() {
        let mut probs = vec![0.1; NUM_DIALECTS];
        probs[0] = 0.31;
        probs[1] = 0.29;
        probs[2] = 0.30;
        let v = predict_from_probs(&probs, 0.3);
        assert!(v.get(Dialect::AE) && !v.get(Dialect::BH) && v.get(Dialect::DZ));
        assert_eq!(v.cardinality(), 2);
    }

    #[test]
    fn select_best_needs_strict_improvement() {
        assert_eq!(select_best(&[0.5, 0.9, 0.8]), Some(1));
        assert_eq!(select_best(&[0.5, 0.5]), Some(0));
        assert_eq!(select_best(&[]), None);
    }

    #[test]
    fn cadence_checkpoints() {
        assert_eq!(
            Cadence::Steps(3).checkpoint_steps(10).unwrap(),
            vec![3, 6, 9]
        );
        assert_eq!(
            Cadence::PerEpoch(5).checkpoint_steps(10).unwrap(),
            vec![2, 4, 6, 8, 10]
        );
        assert_eq!(
            Cadence::PerEpoch(3).checkpoint_steps(10).unwrap(),
            vec![4, 7, 10]
        );
        assert!(Cadence::Steps(300).checkpoint_steps(10).is_err());
        assert_eq!(
            "per-epoch:5".parse::<Cadence>().unwrap(),
            Cadence::PerEpoch(5)
        );
    }

    #[test]
    fn split_is_seeded() {
        let (a, b) = split_indices(100, 0.1, 42);
        assert_eq!((a.len(), b.len()), (90, 10));
        assert_eq!(split_indices(100, 0.1, 42), (a, b));
        assert_eq!(split_indices(1, 0.1, 42).1.len(), 0);
    }

    #[test]
    fn freeze_depth() {
        let mut e = tiny(0);
        e.freeze_bottom(8).unwrap();
        assert_eq!(e.frozen_groups(), 0);
        let mut e = tiny(2);
        e.freeze_bottom(2).unwrap();
        assert_eq!(e.frozen_ranges().len(), 2);
    }

    fn toy_binary() -> BinaryDataset {
        let pos = (0..40)
            .map(|i| Sample::new(format!("p{i:02}"), format!("yes zork {i}")))
            .collect();
        let neg = (0..40)
            .map(|i| Sample::new(format!("n{i:02}"), format!("no quib {i}")))
            .collect();
        BinaryDataset {
            dialect: Dialect::EG,
            positives: pos,
            negatives: neg,
            snapshot: BuildSnapshot {
                mode: BuildMode::Cartography,
                msa_max: "1/9".into(),
                high_dialect_min: "7/9".into(),
                adjacency_sha256: String::new(),
            },
        }
    }

    #[test]
    fn binary_trace_shape_and_determinism() {
        let cfg = TrainConfig {
            batch_size: 8,
            trace: TraceConfig {
                cadence: Cadence::Steps(2),
                epochs: 5,
                warmup_epochs_ignored: 1,
            },
            ..TrainConfig::default()
        };
        let ds = toy_binary();
        let (m1, t1) = train_binary(&ds, tiny(0), &cfg).unwrap();
        let (m2, t2) = train_binary(&ds, tiny(0), &cfg).unwrap();
        assert_eq!(t1.header.checkpoints_per_epoch, 5);
        assert_eq!(t1.entries[0].probs.len(), 25);
        assert_eq!(t1, t2);
        assert_eq!(m1, m2);
        let mut single = ds.clone();
        single.negatives.clear();
        assert!(matches!(
            train_binary(&single, tiny(0), &cfg),
            Err(TrainError::SingleClass(..))
        ));
    }

    #[test]
    fn multilabel_round_trip() {
        let ds: Vec<LabeledSample> = (0..30)
            .map(|i| {
                let d = Dialect::ALL[i % 3];
                LabeledSample::new(
                    Sample::new(format!("s{i}"), format!("tok{} w{i}", d.code())),
                    LabelVector::from_dialects([d]),
                    Provenance::Hybrid,
                )
            })
            .collect();
        let cfg = TrainConfig {
            batch_size: 4,
            ..TrainConfig::default()
        };
        let run = train_multilabel(&ds, tiny(0), &cfg).unwrap();
        assert_eq!(run.log.len(), 3);
        let dir = tempfile::tempdir().unwrap();
        run.save(dir.path()).unwrap();
        let back = TrainedModel::<ReferenceEncoder>::load(dir.path()).unwrap();
        assert_eq!(back.model, run.model);
        assert_eq!(back.manifest, run.manifest);
        let losses = per_example_loss(&run.model, &ds);
        assert_eq!(losses.len(), 30);
    }
}
