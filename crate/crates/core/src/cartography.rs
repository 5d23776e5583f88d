//! Training-dynamics cartography for binary acceptability classifiers.
//!
//! A [`TrainingTrace`] holds, for each training sample, the probability the
//! model assigned to the sample's gold label at every checkpoint. From the
//! checkpoints left after the warmup epochs we derive confidence (mean),
//! variability (population standard deviation) and correctness (fraction of
//! checkpoints where the gold label wins).

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{aldi_is_msa, check_tsv_text, Sample};

#[derive(Debug, Error)]
pub enum CartographyError {
    #[error("sample {0:?}: no checkpoints left after skipping {1} warmup epoch(s)")]
    EmptyWindow(String, usize),
    #[error("sample {id:?}: expected {expected} probabilities, found {found}")]
    LengthMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("sample {0:?}: probability {1} outside [0,1]")]
    ProbabilityRange(String, f64),
    #[error("bad trace header: {0}")]
    Header(String),
    #[error("trace line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("duplicate sample id {0:?} in trace")]
    DuplicateId(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Trace metadata, written as the first line of a trace file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub cadence_steps: usize,
    pub epochs: usize,
    pub warmup_epochs_ignored: usize,
    pub checkpoints_per_epoch: usize,
}

impl TraceHeader {
    pub fn checkpoints(&self) -> usize {
        self.epochs * self.checkpoints_per_epoch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub id: String,
    /// Gold class index; for binary acceptability 1 = positive, 0 = negative.
    pub gold: usize,
    /// Probability of the gold class at every checkpoint.
    pub probs: Vec<f64>,
    /// Full class distributions per checkpoint, for more than two classes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_probs: Option<Vec<Vec<f64>>>,
}

impl TraceEntry {
    pub fn binary(id: impl Into<String>, positive: bool, probs: Vec<f64>) -> Self {
        TraceEntry {
            id: id.into(),
            gold: positive as usize,
            probs,
            class_probs: None,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.gold == 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub header: TraceHeader,
    pub entries: Vec<TraceEntry>,
}

impl TrainingTrace {
    pub fn new(header: TraceHeader, entries: Vec<TraceEntry>) -> Result<Self, CartographyError> {
        let trace = TrainingTrace { header, entries };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<(), CartographyError> {
        if self.header.epochs == 0 || self.header.checkpoints_per_epoch == 0 {
            return Err(CartographyError::Header(
                "epochs and checkpoints_per_epoch must be positive".into(),
            ));
        }
        let expected = self.header.checkpoints();
        for e in &self.entries {
            if e.probs.len() != expected {
                return Err(CartographyError::LengthMismatch {
                    id: e.id.clone(),
                    expected,
                    found: e.probs.len(),
                });
            }
            if let Some(&p) = e.probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(CartographyError::ProbabilityRange(e.id.clone(), p));
            }
            if let Some(dists) = &e.class_probs {
                if dists.len() != expected {
                    return Err(CartographyError::LengthMismatch {
                        id: e.id.clone(),
                        expected,
                        found: dists.len(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CartographyError> {
        let mut buf = Vec::new();
        writeln!(
            buf,
            "{}",
            serde_json::to_string(&self.header).map_err(std::io::Error::other)?
        )?;
        for e in &self.entries {
            writeln!(
                buf,
                "{}",
                serde_json::to_string(e).map_err(std::io::Error::other)?
            )?;
        }
        crate::io::write_atomic(path, &buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CartographyError> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut lines = reader.lines();
        let header_line = lines
            .next()
            .transpose()?
            .ok_or_else(|| CartographyError::Header("empty trace file".into()))?;
        let header: TraceHeader = serde_json::from_str(&header_line)
            .map_err(|e| CartographyError::Header(e.to_string()))?;
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TraceEntry =
                serde_json::from_str(&line).map_err(|e| CartographyError::Line {
                    line: i + 2,
                    msg: e.to_string(),
                })?;
            entries.push(entry);
        }
        TrainingTrace::new(header, entries)
    }
}

/// One of the seven correctness ranges:
/// `0`, `]0,0.2[`, `[0.2,0.4[`, `[0.4,0.6[`, `[0.6,0.8[`, `[0.8,1[`, `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CorrectnessBin(u8);

impl CorrectnessBin {
    pub const COUNT: usize = 7;
    const LABELS: [&'static str; 7] = [
        "0",
        "]0,0.2[",
        "[0.2,0.4[",
        "[0.4,0.6[",
        "[0.6,0.8[",
        "[0.8,1[",
        "1",
    ];

    pub fn of(correctness: f64) -> Self {
        let bin = if correctness <= 0.0 {
            0
        } else if correctness >= 1.0 {
            6
        } else if correctness < 0.2 {
            1
        } else if correctness < 0.4 {
            2
        } else if correctness < 0.6 {
            3
        } else if correctness < 0.8 {
            4
        } else {
            5
        };
        CorrectnessBin(bin)
    }

    pub fn new(index: usize) -> Option<Self> {
        (index < Self::COUNT).then_some(CorrectnessBin(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn label(self) -> &'static str {
        Self::LABELS[self.index()]
    }

    pub fn all() -> impl Iterator<Item = CorrectnessBin> {
        (0..Self::COUNT as u8).map(CorrectnessBin)
    }

    /// Smallest correctness value inside the bin. For the open bin `]0,0.2[`
    /// this is the smallest positive double.
    pub fn lower_bound(self) -> f64 {
        match self.0 {
            0 => 0.0,
            1 => f64::MIN_POSITIVE,
            k => 0.2 * (k - 1) as f64,
        }
    }
}

impl fmt::Display for CorrectnessBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartographyRecord {
    pub id: String,
    pub gold: usize,
    pub confidence: f64,
    pub variability: f64,
    pub correctness: f64,
    pub bin: CorrectnessBin,
}

impl CartographyRecord {
    pub fn is_negative(&self) -> bool {
        self.gold == 0
    }
}

/// A checkpoint counts as correct when the gold label strictly beats every
/// other label; a tie goes against the gold label.
fn checkpoint_correct(gold_prob: f64, dist: Option<&[f64]>, gold: usize) -> bool {
    match dist {
        Some(dist) => dist
            .iter()
            .enumerate()
            .all(|(k, &p)| k == gold || dist.get(gold).is_some_and(|&g| g > p)),
        None => gold_prob > 0.5,
    }
}

fn record_for(
    entry: &TraceEntry,
    header: &TraceHeader,
) -> Result<CartographyRecord, CartographyError> {
    let skip = header.warmup_epochs_ignored * header.checkpoints_per_epoch;
    if entry.probs.len() <= skip {
        return Err(CartographyError::EmptyWindow(
            entry.id.clone(),
            header.warmup_epochs_ignored,
        ));
    }
    let window = &entry.probs[skip..];
    let n = window.len() as f64;
    let confidence = window.iter().sum::<f64>() / n;
    let variability = (window.iter().map(|p| (p - confidence).powi(2)).sum::<f64>() / n).sqrt();
    let correct = window
        .iter()
        .enumerate()
        .filter(|(k, &p)| {
            let dist = entry.class_probs.as_ref().map(|d| d[skip + k].as_slice());
            checkpoint_correct(p, dist, entry.gold)
        })
        .count();
    let correctness = correct as f64 / n;
    Ok(CartographyRecord {
        id: entry.id.clone(),
        gold: entry.gold,
        confidence,
        variability,
        correctness,
        bin: CorrectnessBin::of(correctness),
    })
}

/// Per-sample cartography metrics, sorted by id.
pub fn compute_metrics(trace: &TrainingTrace) -> Result<Vec<CartographyRecord>, CartographyError> {
    trace.validate()?;
    let mut records = trace
        .entries
        .par_iter()
        .map(|e| record_for(e, &trace.header))
        .collect::<Result<Vec<_>, _>>()?;
    records.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = records.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(CartographyError::DuplicateId(w[0].id.clone()));
    }
    Ok(records)
}

/// Groups records into the seven correctness bins, preserving record order.
pub fn bin_by_correctness(records: &[CartographyRecord]) -> [Vec<CartographyRecord>; 7] {
    let mut bins: [Vec<CartographyRecord>; 7] = Default::default();
    for r in records {
        bins[CorrectnessBin::of(r.correctness).index()].push(r.clone());
    }
    bins
}

/// Negatives the classifier did not get right at every checkpoint, least
/// correct first. Ties are ordered by id.
pub fn flag_suspect_negatives(records: &[CartographyRecord]) -> Vec<String> {
    let mut flagged: Vec<&CartographyRecord> = records
        .iter()
        .filter(|r| r.is_negative() && r.correctness < 1.0)
        .collect();
    flagged.sort_by(|a, b| {
        a.correctness
            .total_cmp(&b.correctness)
            .then_with(|| a.id.cmp(&b.id))
    });
    flagged.into_iter().map(|r| r.id.clone()).collect()
}

pub const ANNOTATION_QUESTION: &str =
    "Is it possible that the tweet is authored by someone who speaks one of your country's dialects?";
pub const ANNOTATION_OPTIONS: [&str; 3] = ["Yes", "Not Sure/Maybe", "No"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRow {
    pub id: String,
    pub text: String,
    pub polarity: Polarity,
    pub bin: CorrectnessBin,
    pub correctness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSheet {
    pub rows: Vec<AnnotationRow>,
    /// `(polarity, bin) -> (drawn, available)` for every cell.
    pub cell_counts: Vec<(Polarity, CorrectnessBin, usize, usize)>,
}

/// Draws up to `per_bin` samples from each correctness bin, separately for
/// non-MSA positives and for negatives.
///
/// MSA positives are excluded from the positive pool. Positives whose score
/// is unknown are kept, since nothing marks them as MSA.
pub fn export_annotation_sheet(
    records: &[CartographyRecord],
    corpus: &[Sample],
    per_bin: usize,
    seed: u64,
) -> AnnotationSheet {
    let by_id: HashMap<&str, &Sample> = corpus.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut cell_counts = Vec::new();
    for polarity in [Polarity::Positive, Polarity::Negative] {
        let mut pool: Vec<(&CartographyRecord, &Sample)> = records
            .iter()
            .filter_map(|r| by_id.get(r.id.as_str()).map(|s| (r, *s)))
            .filter(|(r, s)| match polarity {
                Polarity::Negative => r.is_negative(),
                Polarity::Positive => !r.is_negative() && !s.aldi.is_some_and(aldi_is_msa),
            })
            .collect();
        pool.sort_by(|a, b| a.0.id.cmp(&b.0.id));
        for bin in CorrectnessBin::all() {
            let cell: Vec<_> = pool.iter().filter(|(r, _)| r.bin == bin).collect();
            let take = per_bin.min(cell.len());
            let mut picked: Vec<usize> =
                rand::seq::index::sample(&mut rng, cell.len(), take).into_vec();
            picked.sort_unstable();
            for i in picked {
                let (r, s) = cell[i];
                rows.push(AnnotationRow {
                    id: r.id.clone(),
                    text: s.text.clone(),
                    polarity,
                    bin,
                    correctness: r.correctness,
                });
            }
            cell_counts.push((polarity, bin, take, cell.len()));
        }
    }
    AnnotationSheet { rows, cell_counts }
}

impl AnnotationSheet {
    pub fn to_tsv(&self) -> Result<String, crate::corpus::CorpusError> {
        let mut out =
            String::from("id\ttext\tpolarity\tbin\tcorrectness\tquestion\toptions\tanswer\n");
        let options = ANNOTATION_OPTIONS.join(" | ");
        for r in &self.rows {
            check_tsv_text(&r.id, &r.text)?;
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t\n",
                r.id,
                r.text,
                r.polarity.as_str(),
                r.bin,
                r.correctness,
                ANNOTATION_QUESTION,
                options
            ));
        }
        Ok(out)
    }
}

const METRICS_HEADER: &str = "id\tgold\tconfidence\tvariability\tcorrectness\tbin";

pub fn records_to_tsv(records: &[CartographyRecord]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.id,
            r.gold,
            r.confidence,
            r.variability,
            r.correctness,
            r.bin.index()
        ));
    }
    out
}

pub fn records_from_tsv(text: &str) -> Result<Vec<CartographyRecord>, CartographyError> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(CartographyError::Header(
            "expected cartography metrics header".into(),
        ));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let bad = |msg: &str| CartographyError::Line {
                line: i + 2,
                msg: msg.to_string(),
            };
            let c: Vec<&str> = line.split('\t').collect();
            if c.len() != 6 {
                return Err(bad("expected 6 columns"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            let bin = c[5]
                .parse::<usize>()
                .ok()
                .and_then(CorrectnessBin::new)
                .ok_or_else(|| bad("bad bin"))?;
            Ok(CartographyRecord {
                id: c[0].to_string(),
                gold: c[1].parse().map_err(|_| bad("bad gold"))?,
                confidence: num(c[2])?,
                variability: num(c[3])?,
                correctness: num(c[4])?,
                bin,
            })
        })
        .collect()
}
