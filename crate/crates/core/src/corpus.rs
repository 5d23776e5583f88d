//! Data model and corpus I/O.
//!
//! Every other module works on [`Sample`]s and [`LabelVector`]s defined here.
//! The two dialectness thresholds are kept as exact rationals so that values
//! sitting on the 1/9 annotation grid compare the way the grid intends.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of country-level dialects in the label space.
pub const NUM_DIALECTS: usize = 18;

macro_rules! dialects {
    ($($variant:ident => $code:literal, $name:literal;)*) => {
        /// A country-level dialect, identified by its ISO 3166-1 alpha-2 code.
        ///
        /// Variants are declared in alphabetical code order, which is the
        /// canonical layout for every vector and every serialized file.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum Dialect {
            $($variant),*
        }

        impl Dialect {
            /// All dialects in canonical order.
            pub const ALL: [Dialect; NUM_DIALECTS] = [$(Dialect::$variant),*];

            pub fn code(self) -> &'static str {
                match self {
                    $(Dialect::$variant => $code),*
                }
            }

            /// English country name, as used in LLM prompts and responses.
            pub fn country_name(self) -> &'static str {
                match self {
                    $(Dialect::$variant => $name),*
                }
            }
        }
    };
}

dialects! {
    AE => "AE", "UAE";
    BH => "BH", "Bahrain";
    DZ => "DZ", "Algeria";
    EG => "EG", "Egypt";
    IQ => "IQ", "Iraq";
    JO => "JO", "Jordan";
    KW => "KW", "Kuwait";
    LB => "LB", "Lebanon";
    LY => "LY", "Libya";
    MA => "MA", "Morocco";
    OM => "OM", "Oman";
    PS => "PS", "Palestine";
    QA => "QA", "Qatar";
    SA => "SA", "Saudi Arabia";
    SD => "SD", "Sudan";
    SY => "SY", "Syria";
    TN => "TN", "Tunisia";
    YE => "YE", "Yemen";
}

impl Dialect {
    /// Position in the canonical ordering.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Dialect> {
        Dialect::ALL.get(index).copied()
    }

    pub fn from_code(code: &str) -> Option<Dialect> {
        Dialect::ALL.iter().copied().find(|d| d.code() == code)
    }

    pub fn from_country_name(name: &str) -> Option<Dialect> {
        Dialect::ALL
            .iter()
            .copied()
            .find(|d| d.country_name() == name)
    }
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Dialect {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dialect::from_code(s.trim()).ok_or_else(|| CorpusError::UnknownDialect(s.to_string()))
    }
}

impl Serialize for Dialect {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for Dialect {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let code = String::deserialize(deserializer)?;
        Dialect::from_code(&code)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown dialect code {code:?}")))
    }
}

/// An exact rational threshold on the dialectness scale.
///
/// Comparisons go through the nearest `f64` of `num/den`, so a score that was
/// produced as the double nearest to 1/9 compares as exactly 1/9.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rational {
    pub num: u32,
    pub den: u32,
}

impl Rational {
    pub const fn new(num: u32, den: u32) -> Self {
        Rational { num, den }
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// Upper (exclusive) bound for MSA: the smallest non-zero annotation value.
pub const MSA_MAX: Rational = Rational::new(1, 9);
/// Lower (exclusive) bound for highly dialectal text.
pub const HIGH_DIALECT_MIN: Rational = Rational::new(7, 9);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    #[default]
    TrainPool,
    Dev,
    Test,
    External,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::TrainPool => "train-pool",
            Source::Dev => "dev",
            Source::Test => "test",
            Source::External => "external",
        }
    }
}

impl FromStr for Source {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train-pool" => Ok(Source::TrainPool),
            "dev" => Ok(Source::Dev),
            "test" => Ok(Source::Test),
            "external" => Ok(Source::External),
            other => Err(CorpusError::UnknownSource(other.to_string())),
        }
    }
}

/// One sentence, with its optional geo-location label and dialectness score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo: Option<Dialect>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aldi: Option<f64>,
    #[serde(default, skip)]
    pub source: Source,
}

impl Sample {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Sample {
            id: id.into(),
            text: text.into(),
            geo: None,
            aldi: None,
            source: Source::TrainPool,
        }
    }

    pub fn with_geo(mut self, geo: Dialect) -> Self {
        self.geo = Some(geo);
        self
    }

    pub fn with_aldi(mut self, aldi: f64) -> Self {
        self.aldi = Some(aldi);
        self
    }

    pub fn with_source(mut self, source: Source) -> Self {
        self.source = source;
        self
    }

    pub fn require_aldi(&self) -> Result<f64, CorpusError> {
        self.aldi
            .ok_or_else(|| CorpusError::MissingAldi(self.id.clone()))
    }
}

/// `true` iff the dialectness score is strictly below 1/9.
pub fn is_msa(sample: &Sample) -> Result<bool, CorpusError> {
    Ok(aldi_is_msa(sample.require_aldi()?))
}

/// `true` iff the dialectness score is strictly above 7/9.
pub fn is_highly_dialectal(sample: &Sample) -> Result<bool, CorpusError> {
    Ok(aldi_is_highly_dialectal(sample.require_aldi()?))
}

pub fn aldi_is_msa(aldi: f64) -> bool {
    aldi < MSA_MAX.value()
}

pub fn aldi_is_highly_dialectal(aldi: f64) -> bool {
    aldi > HIGH_DIALECT_MIN.value()
}

/// Closed mid-range `[1/9, 7/9]`.
pub fn aldi_is_mid_range(aldi: f64) -> bool {
    !aldi_is_msa(aldi) && !aldi_is_highly_dialectal(aldi)
}

/// Left bounds of dialectness buckets 2..=4; bucket 1 starts at 0.
pub const ALDI_BUCKET_BOUNDS: [Rational; 3] = [MSA_MAX, Rational::new(11, 25), HIGH_DIALECT_MIN];
pub const ALDI_BUCKET_LABELS: [&str; 4] = ["[0,1/9)", "[1/9,0.44)", "[0.44,7/9)", "[7/9,1]"];

/// Left-closed dialectness bucket index in `0..4`.
pub fn aldi_bucket(aldi: f64) -> usize {
    ALDI_BUCKET_BOUNDS
        .iter()
        .filter(|b| aldi >= b.value())
        .count()
}

/// Binary acceptability vector over the 18 dialects, bit `i` for
/// `Dialect::ALL[i]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct LabelVector(u32);

impl LabelVector {
    const MASK: u32 = (1 << NUM_DIALECTS) - 1;

    pub fn empty() -> Self {
        LabelVector(0)
    }

    pub fn all() -> Self {
        LabelVector(Self::MASK)
    }

    pub fn from_bits(bits: u32) -> Self {
        LabelVector(bits & Self::MASK)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn from_dialects<I: IntoIterator<Item = Dialect>>(dialects: I) -> Self {
        let mut v = LabelVector::empty();
        for d in dialects {
            v.set(d, true);
        }
        v
    }

    pub fn from_bools(values: &[bool; NUM_DIALECTS]) -> Self {
        let mut v = LabelVector::empty();
        for (d, &b) in Dialect::ALL.iter().zip(values) {
            v.set(*d, b);
        }
        v
    }

    pub fn get(self, dialect: Dialect) -> bool {
        self.0 & (1 << dialect.index()) != 0
    }

    pub fn set(&mut self, dialect: Dialect, on: bool) {
        if on {
            self.0 |= 1 << dialect.index();
        } else {
            self.0 &= !(1 << dialect.index());
        }
    }

    pub fn cardinality(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn dialects(self) -> impl Iterator<Item = Dialect> {
        Dialect::ALL.into_iter().filter(move |d| self.get(*d))
    }

    pub fn to_bools(self) -> [bool; NUM_DIALECTS] {
        Dialect::ALL.map(|d| self.get(d))
    }

    pub fn is_subset_of(self, other: LabelVector) -> bool {
        self.0 & !other.0 == 0
    }

    /// 18-character `0`/`1` string in canonical order.
    pub fn to_bit_string(self) -> String {
        Dialect::ALL
            .iter()
            .map(|d| if self.get(*d) { '1' } else { '0' })
            .collect()
    }

    pub fn from_bit_string(s: &str) -> Result<Self, CorpusError> {
        if s.len() != NUM_DIALECTS {
            return Err(CorpusError::BadLabelVector(s.to_string()));
        }
        let mut v = LabelVector::empty();
        for (d, c) in Dialect::ALL.iter().zip(s.chars()) {
            match c {
                '0' => {}
                '1' => v.set(*d, true),
                _ => return Err(CorpusError::BadLabelVector(s.to_string())),
            }
        }
        Ok(v)
    }
}

pub fn label_cardinality(v: LabelVector) -> usize {
    v.cardinality()
}

impl fmt::Display for LabelVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let codes: Vec<&str> = self.dialects().map(Dialect::code).collect();
        write!(f, "{{{}}}", codes.join(","))
    }
}

impl Serialize for LabelVector {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_bit_string())
    }
}

impl<'de> Deserialize<'de> for LabelVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        LabelVector::from_bit_string(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    BinaryClassifiers,
    Gpt,
    Hybrid,
    Gold,
    /// Output of a trained model or a baseline conversion.
    Predicted,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::BinaryClassifiers => "binary-classifiers",
            Provenance::Gpt => "gpt",
            Provenance::Hybrid => "hybrid",
            Provenance::Gold => "gold",
            Provenance::Predicted => "predicted",
        }
    }
}

impl FromStr for Provenance {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary-classifiers" => Ok(Provenance::BinaryClassifiers),
            "gpt" => Ok(Provenance::Gpt),
            "hybrid" => Ok(Provenance::Hybrid),
            "gold" => Ok(Provenance::Gold),
            "predicted" => Ok(Provenance::Predicted),
            other => Err(CorpusError::UnknownProvenance(other.to_string())),
        }
    }
}

/// Which weak source a hybrid label vector was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    BinaryClassifiers,
    Gpt,
}

impl Route {
    pub fn as_str(self) -> &'static str {
        match self {
            Route::BinaryClassifiers => "binary-classifiers",
            Route::Gpt => "gpt",
        }
    }
}

impl FromStr for Route {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary-classifiers" => Ok(Route::BinaryClassifiers),
            "gpt" => Ok(Route::Gpt),
            other => Err(CorpusError::UnknownProvenance(other.to_string())),
        }
    }
}

/// A sample with its 18-dimensional label vector.
///
/// Provenance is fixed at construction; there is no setter.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub sample: Sample,
    pub labels: LabelVector,
    provenance: Provenance,
    route: Option<Route>,
}

impl LabeledSample {
    pub fn new(sample: Sample, labels: LabelVector, provenance: Provenance) -> Self {
        LabeledSample {
            sample,
            labels,
            provenance,
            route: None,
        }
    }

    pub fn routed(sample: Sample, labels: LabelVector, route: Route) -> Self {
        LabeledSample {
            sample,
            labels,
            provenance: Provenance::Hybrid,
            route: Some(route),
        }
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn route(&self) -> Option<Route> {
        self.route
    }

    pub fn id(&self) -> &str {
        &self.sample.id
    }

    pub fn cardinality(&self) -> usize {
        self.labels.cardinality()
    }
}

/// Keeps samples with at least one active label, in input order.
///
/// Returns the kept samples and the number dropped.
pub fn filter_zero_cardinality(ds: Vec<LabeledSample>) -> (Vec<LabeledSample>, usize) {
    let before = ds.len();
    let kept: Vec<LabeledSample> = ds.into_iter().filter(|s| s.cardinality() >= 1).collect();
    let dropped = before - kept.len();
    if kept.is_empty() && before > 0 {
        log::warn!("all {before} samples have zero cardinality; nothing left to train on");
    } else if dropped > 0 {
        log::info!("dropped {dropped} zero-cardinality samples of {before}");
    }
    (kept, dropped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Tsv,
    Jsonl,
}

impl CorpusFormat {
    /// Guess from the file extension; anything but `.jsonl`/`.json` is TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => CorpusFormat::Jsonl,
            _ => CorpusFormat::Tsv,
        }
    }
}

impl FromStr for CorpusFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv" => Ok(CorpusFormat::Tsv),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RowErrorKind {
    #[error("aldi out of range: {0}")]
    AldiOutOfRange(f64),
    #[error("unparseable aldi {0:?}")]
    BadAldi(String),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("unknown dialect code {0:?}")]
    UnknownDialect(String),
    #[error("missing required field {0:?}")]
    MissingField(&'static str),
    #[error("expected {expected} columns, found {found}")]
    ColumnCount { expected: usize, found: usize },
    #[error("bad label vector {0:?}")]
    BadLabels(String),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {kind}")]
pub struct RowError {
    pub line: usize,
    pub kind: RowErrorKind,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus file not found: {0}")]
    MissingFile(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("{} malformed row(s): {}", .0.len(), join_row_errors(.0))]
    Malformed(Vec<RowError>),
    #[error("sample {0:?} has no aldi score")]
    MissingAldi(String),
    #[error("unknown dialect code {0:?}")]
    UnknownDialect(String),
    #[error("unknown source tag {0:?}")]
    UnknownSource(String),
    #[error("unknown provenance tag {0:?}")]
    UnknownProvenance(String),
    #[error("unknown corpus format {0:?}")]
    UnknownFormat(String),
    #[error("bad label vector {0:?}")]
    BadLabelVector(String),
    #[error("text of sample {0:?} contains a tab or newline and cannot be written as TSV")]
    UnwritableText(String),
}

fn join_row_errors(errors: &[RowError]) -> String {
    let shown: Vec<String> = errors.iter().take(5).map(|e| e.to_string()).collect();
    let mut out = shown.join("; ");
    if errors.len() > 5 {
        out.push_str(&format!("; ... {} more", errors.len() - 5));
    }
    out
}

impl CorpusError {
    /// Row-level errors, if this is a malformed-file error.
    pub fn row_errors(&self) -> &[RowError] {
        match self {
            CorpusError::Malformed(rows) => rows,
            _ => &[],
        }
    }
}

/// Loads a corpus; every sample gets [`Source::TrainPool`].
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<Sample>, CorpusError> {
    load_corpus_as(path, format, Source::TrainPool)
}

pub fn load_corpus_as(
    path: &Path,
    format: CorpusFormat,
    source: Source,
) -> Result<Vec<Sample>, CorpusError> {
    if !path.exists() {
        return Err(CorpusError::MissingFile(path.display().to_string()));
    }
    let reader = BufReader::new(fs::File::open(path)?);
    let mut samples = match format {
        CorpusFormat::Tsv => parse_tsv(reader)?,
        CorpusFormat::Jsonl => parse_jsonl(reader)?,
    };
    for s in &mut samples {
        s.source = source;
    }
    Ok(samples)
}

const TSV_HEADER: [&str; 4] = ["id", "text", "geo", "aldi"];

pub(crate) fn parse_aldi(raw: &str) -> Result<Option<f64>, RowErrorKind> {
    if raw.is_empty() {
        return Ok(None);
    }
    let value: f64 = raw
        .parse()
        .map_err(|_| RowErrorKind::BadAldi(raw.to_string()))?;
    check_aldi(value).map(Some)
}

fn check_aldi(value: f64) -> Result<f64, RowErrorKind> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(RowErrorKind::AldiOutOfRange(value))
    }
}

pub(crate) fn parse_geo(raw: &str) -> Result<Option<Dialect>, RowErrorKind> {
    if raw.is_empty() {
        return Ok(None);
    }
    Dialect::from_code(raw)
        .map(Some)
        .ok_or_else(|| RowErrorKind::UnknownDialect(raw.to_string()))
}

fn parse_tsv<R: BufRead>(reader: R) -> Result<Vec<Sample>, CorpusError> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => return Err(CorpusError::BadHeader("empty file".into())),
    };
    let columns: Vec<&str> = header.split('\t').collect();
    let position = |name: &str| columns.iter().position(|c| *c == name);
    let (id_col, text_col) = match (position("id"), position("text")) {
        (Some(i), Some(t)) => (i, t),
        _ => {
            return Err(CorpusError::BadHeader(format!(
                "expected columns {:?}, got {header:?}",
                TSV_HEADER
            )))
        }
    };
    let geo_col = position("geo");
    let aldi_col = position("aldi");

    let mut samples = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != columns.len() {
            errors.push(RowError {
                line: line_no,
                kind: RowErrorKind::ColumnCount {
                    expected: columns.len(),
                    found: cells.len(),
                },
            });
            continue;
        }
        let id = cells[id_col];
        if id.is_empty() {
            errors.push(RowError {
                line: line_no,
                kind: RowErrorKind::MissingField("id"),
            });
            continue;
        }
        let geo = geo_col.map(|c| parse_geo(cells[c])).transpose();
        let aldi = aldi_col.map(|c| parse_aldi(cells[c])).transpose();
        match (geo, aldi) {
            (Ok(geo), Ok(aldi)) => {
                if !seen.insert(id.to_string()) {
                    errors.push(RowError {
                        line: line_no,
                        kind: RowErrorKind::DuplicateId(id.to_string()),
                    });
                    continue;
                }
                samples.push(Sample {
                    id: id.to_string(),
                    text: cells[text_col].to_string(),
                    geo: geo.flatten(),
                    aldi: aldi.flatten(),
                    source: Source::TrainPool,
                });
            }
            (Err(kind), _) | (_, Err(kind)) => errors.push(RowError {
                line: line_no,
                kind,
            }),
        }
    }
    if errors.is_empty() {
        Ok(samples)
    } else {
        Err(CorpusError::Malformed(errors))
    }
}

#[derive(Deserialize)]
struct JsonRow {
    id: Option<String>,
    text: Option<String>,
    #[serde(default)]
    geo: Option<String>,
    #[serde(default)]
    aldi: Option<f64>,
}

fn parse_jsonl<R: BufRead>(reader: R) -> Result<Vec<Sample>, CorpusError> {
    let mut samples = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonRow = match serde_json::from_str(&line) {
            Ok(row) => row,
            Err(e) => {
                errors.push(RowError {
                    line: line_no,
                    kind: RowErrorKind::Other(e.to_string()),
                });
                continue;
            }
        };
        let result = (|| {
            let id = row.id.ok_or(RowErrorKind::MissingField("id"))?;
            let text = row.text.ok_or(RowErrorKind::MissingField("text"))?;
            let geo = match row.geo.as_deref() {
                None => None,
                Some(code) => parse_geo(code)?,
            };
            let aldi = row.aldi.map(check_aldi).transpose()?;
            if !seen.insert(id.clone()) {
                return Err(RowErrorKind::DuplicateId(id));
            }
            Ok(Sample {
                id,
                text,
                geo,
                aldi,
                source: Source::TrainPool,
            })
        })();
        match result {
            Ok(s) => samples.push(s),
            Err(kind) => errors.push(RowError {
                line: line_no,
                kind,
            }),
        }
    }
    if errors.is_empty() {
        Ok(samples)
    } else {
        Err(CorpusError::Malformed(errors))
    }
}

pub(crate) fn check_tsv_text(id: &str, text: &str) -> Result<(), CorpusError> {
    if text.contains(['\t', '\n', '\r']) || id.contains(['\t', '\n', '\r']) {
        Err(CorpusError::UnwritableText(id.to_string()))
    } else {
        Ok(())
    }
}

pub(crate) fn format_aldi(aldi: Option<f64>) -> String {
    aldi.map(|a| a.to_string()).unwrap_or_default()
}

pub(crate) fn format_geo(geo: Option<Dialect>) -> &'static str {
    geo.map(Dialect::code).unwrap_or("")
}

pub fn write_corpus<W: Write>(
    out: &mut W,
    samples: &[Sample],
    format: CorpusFormat,
) -> Result<(), CorpusError> {
    match format {
        CorpusFormat::Tsv => {
            writeln!(out, "{}", TSV_HEADER.join("\t"))?;
            for s in samples {
                check_tsv_text(&s.id, &s.text)?;
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}",
                    s.id,
                    s.text,
                    format_geo(s.geo),
                    format_aldi(s.aldi)
                )?;
            }
        }
        CorpusFormat::Jsonl => {
            for s in samples {
                let line = serde_json::to_string(s).map_err(std::io::Error::other)?;
                writeln!(out, "{line}")?;
            }
        }
    }
    Ok(())
}

pub fn save_corpus(
    path: &Path,
    samples: &[Sample],
    format: CorpusFormat,
) -> Result<(), CorpusError> {
    let mut buf = Vec::new();
    write_corpus(&mut buf, samples, format)?;
    crate::io::write_atomic(path, &buf)?;
    Ok(())
}

fn labeled_header() -> String {
    let mut cols: Vec<&str> = TSV_HEADER.to_vec();
    cols.extend(Dialect::ALL.iter().map(|d| d.code()));
    cols.push("provenance");
    cols.push("route");
    cols.join("\t")
}

/// Writes labeled samples as TSV: the corpus columns, one 0/1 column per
/// dialect in canonical order, then provenance and route.
pub fn write_labeled<W: Write>(out: &mut W, samples: &[LabeledSample]) -> Result<(), CorpusError> {
    writeln!(out, "{}", labeled_header())?;
    for ls in samples {
        let s = &ls.sample;
        check_tsv_text(&s.id, &s.text)?;
        let bits: Vec<&str> = Dialect::ALL
            .iter()
            .map(|d| if ls.labels.get(*d) { "1" } else { "0" })
            .collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.id,
            s.text,
            format_geo(s.geo),
            format_aldi(s.aldi),
            bits.join("\t"),
            ls.provenance.as_str(),
            ls.route.map(Route::as_str).unwrap_or("")
        )?;
    }
    Ok(())
}

pub fn save_labeled(path: &Path, samples: &[LabeledSample]) -> Result<(), CorpusError> {
    let mut buf = Vec::new();
    write_labeled(&mut buf, samples)?;
    crate::io::write_atomic(path, &buf)?;
    Ok(())
}

pub fn load_labeled(path: &Path) -> Result<Vec<LabeledSample>, CorpusError> {
    if !path.exists() {
        return Err(CorpusError::MissingFile(path.display().to_string()));
    }
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| CorpusError::BadHeader("empty file".into()))?;
    if header != labeled_header() {
        return Err(CorpusError::BadHeader(format!(
            "expected labeled TSV header, got {header:?}"
        )));
    }
    let expected = 4 + NUM_DIALECTS + 2;
    let mut out = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        let parsed = (|| {
            if cells.len() != expected {
                return Err(RowErrorKind::ColumnCount {
                    expected,
                    found: cells.len(),
                });
            }
            let geo = parse_geo(cells[2])?;
            let aldi = parse_aldi(cells[3])?;
            let mut labels = LabelVector::empty();
            for (k, d) in Dialect::ALL.iter().enumerate() {
                match cells[4 + k] {
                    "0" => {}
                    "1" => labels.set(*d, true),
                    other => return Err(RowErrorKind::BadLabels(other.to_string())),
                }
            }
            let provenance: Provenance = cells[4 + NUM_DIALECTS]
                .parse()
                .map_err(|e: CorpusError| RowErrorKind::Other(e.to_string()))?;
            let route = match cells[5 + NUM_DIALECTS] {
                "" => None,
                r => Some(
                    r.parse::<Route>()
                        .map_err(|e| RowErrorKind::Other(e.to_string()))?,
                ),
            };
            if !seen.insert(cells[0].to_string()) {
                return Err(RowErrorKind::DuplicateId(cells[0].to_string()));
            }
            let sample = Sample {
                id: cells[0].to_string(),
                text: cells[1].to_string(),
                geo,
                aldi,
                source: Source::TrainPool,
            };
            Ok(LabeledSample {
                sample,
                labels,
                provenance,
                route,
            })
        })();
        match parsed {
            Ok(ls) => out.push(ls),
            Err(kind) => errors.push(RowError {
                line: line_no,
                kind,
            }),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(CorpusError::Malformed(errors))
    }
}
