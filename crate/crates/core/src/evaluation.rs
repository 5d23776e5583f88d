//! Multi-label evaluation: per-label confusion counts, macro P/R/F1,
//! Hamming accuracy, label-set restriction and the top-p conversion used to
//! turn a single-label distribution into a label set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dialect, LabelVector, LabeledSample, Sample, NUM_DIALECTS};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("label set is empty")]
    EmptyLabelSet,
    #[error("unknown label {0:?} in label set")]
    UnknownLabel(String),
    #[error("length mismatch: {0} predictions vs {1} gold rows")]
    LengthMismatch(usize, usize),
    #[error("row {0}: prediction has {1} labels, gold has {2}")]
    WidthMismatch(usize, usize, usize),
    #[error("top-p mass must be in (0,1], got {0}")]
    BadMass(f64),
    #[error("invalid distribution: {0}")]
    BadDistribution(String),
    #[error("bad report: {0}")]
    BadReport(String),
}

/// The labels an evaluation set is annotated for, in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet(Vec<Dialect>);

impl LabelSet {
    pub fn new<I: IntoIterator<Item = Dialect>>(labels: I) -> Result<Self, EvalError> {
        let mut v: Vec<Dialect> = labels.into_iter().collect();
        v.sort();
        v.dedup();
        if v.is_empty() {
            return Err(EvalError::EmptyLabelSet);
        }
        Ok(LabelSet(v))
    }

    pub fn all() -> Self {
        LabelSet(Dialect::ALL.to_vec())
    }

    /// The eight dialects the public multi-label development set covers.
    pub fn dev8() -> Self {
        use Dialect::*;
        LabelSet(vec![DZ, EG, JO, PS, SD, SY, TN, YE])
    }

    pub fn labels(&self) -> &[Dialect] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mask(&self) -> LabelVector {
        LabelVector::from_dialects(self.0.iter().copied())
    }
}

impl FromStr for LabelSet {
    type Err = EvalError;

    /// `all`, `dev8`, or a comma-separated list of codes.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "all" => Ok(LabelSet::all()),
            "dev8" => Ok(LabelSet::dev8()),
            list => LabelSet::new(
                list.split(',')
                    .map(str::trim)
                    .filter(|c| !c.is_empty())
                    .map(|c| Dialect::from_code(c).ok_or_else(|| EvalError::UnknownLabel(c.into())))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        }
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let codes: Vec<&str> = self.0.iter().map(|d| d.code()).collect();
        f.write_str(&codes.join(","))
    }
}

/// Predictions and gold labels projected onto a label set.
#[derive(Debug, Clone, PartialEq)]
pub struct Restricted {
    pub labels: Vec<Dialect>,
    pub preds: Vec<Vec<bool>>,
    pub golds: Vec<Vec<bool>>,
}

pub fn project(v: LabelVector, labelset: &LabelSet) -> Vec<bool> {
    labelset.labels().iter().map(|d| v.get(*d)).collect()
}

pub fn restrict_labels(
    preds: &[LabelVector],
    golds: &[LabelVector],
    labelset: &LabelSet,
) -> Result<Restricted, EvalError> {
    if labelset.is_empty() {
        return Err(EvalError::EmptyLabelSet);
    }
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch(preds.len(), golds.len()));
    }
    Ok(Restricted {
        labels: labelset.labels().to_vec(),
        preds: preds.iter().map(|v| project(*v, labelset)).collect(),
        golds: golds.iter().map(|v| project(*v, labelset)).collect(),
    })
}

/// Binary confusion counts for one label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    pub fn add(&mut self, pred: bool, gold: bool) {
        match (pred, gold) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

impl From<Confusion> for LabelScores {
    fn from(c: Confusion) -> Self {
        LabelScores {
            confusion: c,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            support: c.support(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_label: Vec<LabelScores>,
}

fn check_aligned(preds: &[Vec<bool>], golds: &[Vec<bool>]) -> Result<usize, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch(preds.len(), golds.len()));
    }
    let width = golds.first().map_or(0, Vec::len);
    for (i, (p, g)) in preds.iter().zip(golds).enumerate() {
        if p.len() != g.len() || g.len() != width {
            return Err(EvalError::WidthMismatch(i, p.len(), g.len()));
        }
    }
    Ok(width)
}

pub fn confusions(preds: &[Vec<bool>], golds: &[Vec<bool>]) -> Result<Vec<Confusion>, EvalError> {
    let width = check_aligned(preds, golds)?;
    let mut out = vec![Confusion::default(); width];
    for (p, g) in preds.iter().zip(golds) {
        for (k, c) in out.iter_mut().enumerate() {
            c.add(p[k], g[k]);
        }
    }
    Ok(out)
}

fn macro_from(per_label: Vec<LabelScores>) -> MacroPrf {
    let n = per_label.len().max(1) as f64;
    let mean = |f: fn(&LabelScores) -> f64| per_label.iter().map(f).sum::<f64>() / n;
    MacroPrf {
        precision: mean(|s| s.precision),
        recall: mean(|s| s.recall),
        f1: mean(|s| s.f1),
        per_label,
    }
}

/// Unweighted mean of per-label precision, recall and F1. A zero
/// denominator yields 0 for that label.
pub fn macro_prf(preds: &[Vec<bool>], golds: &[Vec<bool>]) -> Result<MacroPrf, EvalError> {
    Ok(macro_from(
        confusions(preds, golds)?
            .into_iter()
            .map(LabelScores::from)
            .collect(),
    ))
}

/// Fraction of (sample, label) cells where prediction equals gold.
pub fn accuracy(preds: &[Vec<bool>], golds: &[Vec<bool>]) -> Result<f64, EvalError> {
    check_aligned(preds, golds)?;
    let mut same = 0u64;
    let mut total = 0u64;
    for (p, g) in preds.iter().zip(golds) {
        same += p.iter().zip(g).filter(|(a, b)| a == b).count() as u64;
        total += g.len() as u64;
    }
    Ok(ratio(same, total))
}

/// Micro F1 over all 18 labels.
pub fn micro_f1(preds: &[LabelVector], golds: &[LabelVector]) -> f64 {
    let mut c = Confusion::default();
    for (p, g) in preds.iter().zip(golds) {
        c.tp += (p.bits() & g.bits()).count_ones() as u64;
        c.fp += (p.bits() & !g.bits()).count_ones() as u64;
        c.fn_ += (!p.bits() & g.bits()).count_ones() as u64;
    }
    c.f1()
}

/// Macro F1 over all 18 labels.
pub fn macro_f1(preds: &[LabelVector], golds: &[LabelVector]) -> f64 {
    let r = restrict_labels(preds, golds, &LabelSet::all()).expect("aligned by construction");
    macro_prf(&r.preds, &r.golds).map(|m| m.f1).unwrap_or(0.0)
}

const DISTRIBUTION_TOLERANCE: f64 = 1e-9;

/// A softmax distribution over the 18 dialects.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleLabelDistribution([f64; NUM_DIALECTS]);

impl SingleLabelDistribution {
    pub fn new(probs: [f64; NUM_DIALECTS]) -> Result<Self, EvalError> {
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(EvalError::BadDistribution(format!("entry {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(EvalError::BadDistribution(format!("sums to {sum}")));
        }
        Ok(SingleLabelDistribution(probs))
    }

    pub fn from_slice(probs: &[f64]) -> Result<Self, EvalError> {
        let arr: [f64; NUM_DIALECTS] = probs
            .try_into()
            .map_err(|_| EvalError::BadDistribution(format!("{} entries", probs.len())))?;
        Self::new(arr)
    }

    pub fn probs(&self) -> &[f64; NUM_DIALECTS] {
        &self.0
    }

    pub fn argmax(&self) -> Dialect {
        let mut best = 0;
        for k in 1..NUM_DIALECTS {
            if self.0[k] > self.0[best] {
                best = k;
            }
        }
        Dialect::ALL[best]
    }
}

/// Smallest prefix of labels, by descending probability, whose cumulative
/// mass reaches `p`. Equal probabilities keep canonical order. The mass
/// comparison allows the same 1e-9 slack the distribution itself is held to,
/// so that e.g. 0.6 + 0.3 counts as reaching 0.9.
pub fn top_p_labels(dist: &SingleLabelDistribution, p: f64) -> Result<LabelVector, EvalError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(EvalError::BadMass(p));
    }
    let mut order: Vec<usize> = (0..NUM_DIALECTS).collect();
    order.sort_by(|&a, &b| dist.0[b].total_cmp(&dist.0[a]).then(a.cmp(&b)));
    let mut out = LabelVector::empty();
    let mut mass = 0.0;
    for k in order {
        out.set(Dialect::ALL[k], true);
        mass += dist.0[k];
        if mass >= p - DISTRIBUTION_TOLERANCE {
            break;
        }
    }
    Ok(out)
}

/// Anything that maps a sample to a label vector at a decision threshold.
pub trait MultiLabelPredictor {
    fn predict(&self, sample: &Sample, threshold: f64) -> LabelVector;
}

impl<F: Fn(&Sample, f64) -> LabelVector> MultiLabelPredictor for F {
    fn predict(&self, sample: &Sample, threshold: f64) -> LabelVector {
        self(sample, threshold)
    }
}

/// Per-label prediction counts for one named sample group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub name: String,
    pub samples: usize,
    pub counts: [usize; NUM_DIALECTS],
}

impl GroupCounts {
    /// Labels by descending count; ties in canonical order.
    pub fn sorted(&self) -> Vec<(Dialect, usize)> {
        let mut v: Vec<(Dialect, usize)> = Dialect::ALL
            .iter()
            .map(|d| (*d, self.counts[d.index()]))
            .collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionCounts {
    pub groups: Vec<GroupCounts>,
}

pub fn prediction_count_report<P: MultiLabelPredictor + ?Sized>(
    model: &P,
    groups: &[(String, Vec<Sample>)],
    threshold: f64,
) -> PredictionCounts {
    let groups = groups
        .iter()
        .map(|(name, samples)| {
            let mut counts = [0usize; NUM_DIALECTS];
            for s in samples {
                for d in model.predict(s, threshold).dialects() {
                    counts[d.index()] += 1;
                }
            }
            GroupCounts {
                name: name.clone(),
                samples: samples.len(),
                counts,
            }
        })
        .collect();
    PredictionCounts { groups }
}

impl PredictionCounts {
    /// One row per label, one column per group; rows sorted by total count.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("label");
        for g in &self.groups {
            out.push_str(&format!("\t{} (n={})", g.name, g.samples));
        }
        out.push('\n');
        let mut rows: Vec<Dialect> = Dialect::ALL.to_vec();
        let total = |d: &Dialect| {
            self.groups
                .iter()
                .map(|g| g.counts[d.index()])
                .sum::<usize>()
        };
        rows.sort_by(|a, b| total(b).cmp(&total(a)).then(a.cmp(b)));
        for d in rows {
            out.push_str(d.code());
            for g in &self.groups {
                out.push_str(&format!("\t{}", g.counts[d.index()]));
            }
            out.push('\n');
        }
        out
    }
}

pub const ACCURACY_DEFINITION: &str =
    "hamming: fraction of (sample, label) cells predicted correctly";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerLabelEntry {
    pub label: Dialect,
    #[serde(flatten)]
    pub scores: LabelScores,
    pub predicted: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub labelset: LabelSet,
    pub threshold: f64,
    pub samples: usize,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub accuracy_definition: String,
    pub per_label: Vec<PerLabelEntry>,
}

impl EvalReport {
    /// Rebuilds every metric from per-label confusion counts.
    pub fn from_confusions(
        labelset: LabelSet,
        threshold: f64,
        confusions: &[Confusion],
    ) -> Result<Self, EvalError> {
        if confusions.len() != labelset.len() {
            return Err(EvalError::BadReport(format!(
                "{} confusion rows for {} labels",
                confusions.len(),
                labelset.len()
            )));
        }
        let samples = confusions.first().map_or(0, |c| c.total() as usize);
        if confusions.iter().any(|c| c.total() as usize != samples) {
            return Err(EvalError::BadReport(
                "confusion totals differ across labels".into(),
            ));
        }
        let m = macro_from(confusions.iter().copied().map(LabelScores::from).collect());
        let correct: u64 = confusions.iter().map(|c| c.tp + c.tn).sum();
        let cells: u64 = confusions.iter().map(Confusion::total).sum();
        let per_label = labelset
            .labels()
            .iter()
            .zip(m.per_label)
            .map(|(d, s)| PerLabelEntry {
                label: *d,
                predicted: s.confusion.tp + s.confusion.fp,
                scores: s,
            })
            .collect();
        Ok(EvalReport {
            labelset,
            threshold,
            samples,
            macro_precision: m.precision,
            macro_recall: m.recall,
            macro_f1: m.f1,
            accuracy: ratio(correct, cells),
            accuracy_definition: ACCURACY_DEFINITION.to_string(),
            per_label,
        })
    }

    pub fn confusions(&self) -> Vec<Confusion> {
        self.per_label.iter().map(|e| e.scores.confusion).collect()
    }

    pub fn from_predictions(
        preds: &[LabelVector],
        golds: &[LabelVector],
        labelset: &LabelSet,
        threshold: f64,
    ) -> Result<Self, EvalError> {
        let r = restrict_labels(preds, golds, labelset)?;
        let c = confusions(&r.preds, &r.golds)?;
        let c = if c.is_empty() {
            vec![Confusion::default(); labelset.len()]
        } else {
            c
        };
        Self::from_confusions(labelset.clone(), threshold, &c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        serde_json::from_str(text).map_err(|e| EvalError::BadReport(e.to_string()))
    }

    pub fn to_tsv(&self) -> String {
        let mut out =
            String::from("label\tprecision\trecall\tf1\tsupport\tpredicted\ttp\tfp\tfn\ttn\n");
        for e in &self.per_label {
            let c = e.scores.confusion;
            out.push_str(&format!(
                "{}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                e.label,
                e.scores.precision,
                e.scores.recall,
                e.scores.f1,
                e.scores.support,
                e.predicted,
                c.tp,
                c.fp,
                c.fn_,
                c.tn
            ));
        }
        out.push_str(&format!(
            "macro\t{:.4}\t{:.4}\t{:.4}\n",
            self.macro_precision, self.macro_recall, self.macro_f1
        ));
        out.push_str(&format!(
            "accuracy\t{:.4}\t({})\n",
            self.accuracy, self.accuracy_definition
        ));
        out
    }
}

/// Predicts every gold sample at `threshold` and scores it on `labelset`.
pub fn evaluate_run<P: MultiLabelPredictor + ?Sized>(
    model: &P,
    evalset: &[LabeledSample],
    labelset: &LabelSet,
    threshold: f64,
) -> Result<EvalReport, EvalError> {
    let preds: Vec<LabelVector> = evalset
        .iter()
        .map(|s| model.predict(&s.sample, threshold))
        .collect();
    let golds: Vec<LabelVector> = evalset.iter().map(|s| s.labels).collect();
    EvalReport::from_predictions(&preds, &golds, labelset, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Provenance;
    use Dialect::*;

    #[test]
    fn dev8_projection() {
        let ls: LabelSet = "dev8".parse().unwrap();
        assert_eq!(ls.len(), 8);
        let v = LabelVector::from_dialects([EG, SA, YE]);
        let r = restrict_labels(&[v], &[v], &ls).unwrap();
        assert_eq!(
            r.preds[0],
            vec![false, true, false, false, false, false, false, true]
        );
        let all = restrict_labels(&[v], &[v], &LabelSet::all()).unwrap();
        assert_eq!(all.preds[0], v.to_bools().to_vec());
        assert_eq!("".parse::<LabelSet>(), Err(EvalError::EmptyLabelSet));
        assert!(matches!(
            "EG,XX".parse::<LabelSet>(),
            Err(EvalError::UnknownLabel(_))
        ));
    }

    #[test]
    fn worked_two_label_example() {
        let preds = vec![vec![true, false], vec![true, true]];
        let golds = vec![vec![true, true], vec![false, true]];
        let m = macro_prf(&preds, &golds).unwrap();
        assert_eq!(m.per_label[0].precision, 0.5);
        assert_eq!(m.per_label[0].recall, 1.0);
        assert_eq!(m.per_label[1].precision, 1.0);
        assert_eq!(m.per_label[1].recall, 0.5);
        assert_eq!(m.per_label[0].f1, 2.0 / 3.0);
        assert_eq!(m.f1, 2.0 / 3.0);
    }

    #[test]
    fn perfect_and_silent_labels() {
        let rows = vec![vec![true, false], vec![false, false]];
        let m = macro_prf(&rows, &rows).unwrap();
        assert_eq!(m.per_label[0].f1, 1.0);
        // Never predicted, never gold.
        assert_eq!(m.per_label[1].f1, 0.0);
        assert_eq!(m.f1, 0.5);
    }

    #[test]
    fn length_mismatch() {
        assert_eq!(
            macro_prf(&[vec![true]], &[]).unwrap_err(),
            EvalError::LengthMismatch(1, 0)
        );
        assert!(matches!(
            accuracy(&[vec![true]], &[vec![true, false]]),
            Err(EvalError::WidthMismatch(0, 1, 2))
        ));
    }

    #[test]
    fn hamming_accuracy() {
        let gold = vec![vec![true, false, true, false, true, false, true, false]];
        assert_eq!(accuracy(&gold, &gold).unwrap(), 1.0);
        let mut pred = gold.clone();
        pred[0][0] = false;
        pred[0][1] = true;
        assert_eq!(accuracy(&pred, &gold).unwrap(), 0.75);
        let zeros = vec![vec![false; 8]];
        assert_eq!(accuracy(&zeros, &zeros).unwrap(), 1.0);
    }

    fn dist(head: &[f64]) -> SingleLabelDistribution {
        let mut p = [0.0; NUM_DIALECTS];
        p[..head.len()].copy_from_slice(head);
        let rest = (1.0 - head.iter().sum::<f64>()) / (NUM_DIALECTS - head.len()) as f64;
        for v in &mut p[head.len()..] {
            *v = rest;
        }
        SingleLabelDistribution::new(p).unwrap()
    }

    #[test]
    fn top_p() {
        let d = dist(&[0.6, 0.3, 0.05]);
        assert_eq!(
            top_p_labels(&d, 0.9).unwrap(),
            LabelVector::from_dialects([AE, BH])
        );
        let d = dist(&[0.95]);
        assert_eq!(
            top_p_labels(&d, 0.9).unwrap(),
            LabelVector::from_dialects([AE])
        );
        let uniform = SingleLabelDistribution::new([1.0 / 18.0; NUM_DIALECTS]).unwrap();
        let v = top_p_labels(&uniform, 0.9).unwrap();
        assert_eq!(v.cardinality(), 17);
        // Ties resolve in canonical order, so YE is the one left out.
        assert!(!v.get(YE));
        assert_eq!(top_p_labels(&uniform, 0.0), Err(EvalError::BadMass(0.0)));
        assert_eq!(top_p_labels(&uniform, 1.5), Err(EvalError::BadMass(1.5)));
        assert_eq!(top_p_labels(&uniform, 1.0).unwrap(), LabelVector::all());
    }

    #[test]
    fn distribution_validation() {
        assert!(SingleLabelDistribution::new([0.1; NUM_DIALECTS]).is_err());
        assert!(SingleLabelDistribution::from_slice(&[1.0]).is_err());
    }

    #[test]
    fn prediction_counts() {
        let always_eg = |_: &Sample, _: f64| LabelVector::from_dialects([EG]);
        let groups = vec![
            (
                "cai".to_string(),
                vec![Sample::new("a", "x"), Sample::new("b", "y")],
            ),
            ("empty".to_string(), vec![]),
        ];
        let report = prediction_count_report(&always_eg, &groups, 0.3);
        assert_eq!(report.groups[0].counts[EG.index()], 2);
        assert_eq!(report.groups[0].sorted()[0], (EG, 2));
        assert_eq!(report.groups[1].total(), 0);
        let tsv = report.to_tsv();
        assert!(tsv.lines().nth(1).unwrap().starts_with("EG\t2\t0"));
    }

    #[test]
    fn evaluate_copy_gold_and_all_zeros() {
        let mk =
            |id: &str, v: LabelVector| LabeledSample::new(Sample::new(id, id), v, Provenance::Gold);
        let evalset = vec![
            mk("a", LabelVector::from_dialects([EG, JO])),
            mk("b", LabelVector::from_dialects([DZ, TN, YE])),
            mk("c", LabelVector::from_dialects([SY])),
            mk("d", LabelVector::from_dialects([PS, SD])),
        ];
        let gold: std::collections::HashMap<String, LabelVector> = evalset
            .iter()
            .map(|s| (s.id().to_string(), s.labels))
            .collect();
        let copy = |s: &Sample, _: f64| gold[&s.id];
        let r = evaluate_run(&copy, &evalset, &LabelSet::dev8(), 0.3).unwrap();
        assert_eq!(
            (r.macro_precision, r.macro_recall, r.macro_f1, r.accuracy),
            (1.0, 1.0, 1.0, 1.0)
        );

        let zeros = |_: &Sample, _: f64| LabelVector::empty();
        let r = evaluate_run(&zeros, &evalset, &LabelSet::dev8(), 0.3).unwrap();
        assert_eq!(r.macro_recall, 0.0);
        // 8 positive cells out of 4 * 8.
        assert_eq!(r.accuracy, 24.0 / 32.0);

        let again =
            EvalReport::from_confusions(r.labelset.clone(), r.threshold, &r.confusions()).unwrap();
        assert_eq!(again, r);
        assert_eq!(EvalReport::from_json(&r.to_json()).unwrap(), r);
    }
}
