//! Per-dialect binary acceptability datasets.
//!
//! Two constructions are supported. [`BuildMode::Cartography`] splits the
//! whole corpus into positives (same geo or MSA) and everything else, which
//! is what the training-dynamics analysis needs. [`BuildMode::PseudoLabel`]
//! keeps the same positives but only takes negatives that are both highly
//! dialectal and from a country with no land border to the target.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    self, is_highly_dialectal, is_msa, CorpusError, CorpusFormat, Dialect, Sample,
    HIGH_DIALECT_MIN, MSA_MAX,
};

/// The adjacency table shipped with the crate.
pub const DEFAULT_ADJACENCY: &str = include_str!("../data/adjacency.txt");

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("adjacency line {line}: {msg}")]
    AdjacencySyntax { line: usize, msg: String },
    #[error("adjacency table is not symmetric: {0} lists {1} but not vice versa")]
    Asymmetric(Dialect, Dialect),
    #[error("adjacency table lists {0} as its own neighbour")]
    Reflexive(Dialect),
    #[error("dialect {0} is not in the adjacency table")]
    UnknownDialect(Dialect),
    #[error("{dialect} dataset ({mode}) has no {side} samples")]
    EmptySide {
        dialect: Dialect,
        mode: BuildMode,
        side: &'static str,
    },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("bad dataset manifest: {0}")]
    Manifest(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Symmetric, irreflexive land-border relation over the label space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyTable {
    neighbours: BTreeMap<Dialect, BTreeSet<Dialect>>,
}

impl AdjacencyTable {
    /// Parses `CODE: CODE,CODE,...` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, BuildError> {
        let mut neighbours = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |msg: String| BuildError::AdjacencySyntax { line: line_no, msg };
            let (head, tail) = line
                .split_once(':')
                .ok_or_else(|| syntax(format!("missing ':' in {line:?}")))?;
            let code = Dialect::from_code(head.trim())
                .ok_or_else(|| syntax(format!("unknown code {:?}", head.trim())))?;
            let mut set = BTreeSet::new();
            for part in tail.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                let n = Dialect::from_code(part)
                    .ok_or_else(|| syntax(format!("unknown code {part:?}")))?;
                set.insert(n);
            }
            if neighbours.insert(code, set).is_some() {
                return Err(syntax(format!("{code} listed twice")));
            }
        }
        Self::from_map(neighbours)
    }

    pub fn from_map(neighbours: BTreeMap<Dialect, BTreeSet<Dialect>>) -> Result<Self, BuildError> {
        for (&a, set) in &neighbours {
            for &b in set {
                if a == b {
                    return Err(BuildError::Reflexive(a));
                }
                if !neighbours.get(&b).is_some_and(|s| s.contains(&a)) {
                    return Err(BuildError::Asymmetric(a, b));
                }
            }
        }
        Ok(AdjacencyTable { neighbours })
    }

    pub fn shipped() -> Self {
        Self::parse(DEFAULT_ADJACENCY).expect("shipped adjacency table is valid")
    }

    pub fn load(path: &Path) -> Result<Self, BuildError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn contains(&self, dia: Dialect) -> bool {
        self.neighbours.contains_key(&dia)
    }

    pub fn neighbours(&self, dia: Dialect) -> Result<&BTreeSet<Dialect>, BuildError> {
        self.neighbours
            .get(&dia)
            .ok_or(BuildError::UnknownDialect(dia))
    }

    /// Canonical text form, independent of comments and ordering in the
    /// source file.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (d, set) in &self.neighbours {
            let codes: Vec<&str> = set.iter().map(|n| n.code()).collect();
            out.push_str(&format!("{d}: {}\n", codes.join(",")));
        }
        out
    }

    pub fn checksum(&self) -> String {
        crate::io::sha256_hex(self.canonical().as_bytes())
    }
}

pub fn neighbours(dia: Dialect, table: &AdjacencyTable) -> Result<BTreeSet<Dialect>, BuildError> {
    table.neighbours(dia).cloned()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuildMode {
    Cartography,
    PseudoLabel,
}

impl fmt::Display for BuildMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BuildMode::Cartography => "cartography",
            BuildMode::PseudoLabel => "pseudo-label",
        })
    }
}

impl FromStr for BuildMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cartography" => Ok(BuildMode::Cartography),
            "pseudo-label" => Ok(BuildMode::PseudoLabel),
            other => Err(format!("unknown build mode {other:?}")),
        }
    }
}

/// Settings the dataset was built with, stored next to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildSnapshot {
    pub mode: BuildMode,
    pub msa_max: String,
    pub high_dialect_min: String,
    pub adjacency_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDataset {
    pub dialect: Dialect,
    pub positives: Vec<Sample>,
    pub negatives: Vec<Sample>,
    pub snapshot: BuildSnapshot,
}

/// Samples geolocated to `dia` plus every MSA sample, deduplicated by id.
pub fn build_positive_set(dia: Dialect, corpus: &[Sample]) -> Result<Vec<Sample>, BuildError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for s in corpus {
        let take = s.geo == Some(dia) || is_msa(s)?;
        if take && seen.insert(s.id.as_str()) {
            out.push(s.clone());
        }
    }
    if out.is_empty() {
        log::warn!("no positives for {dia}: no {dia}-geolocated and no MSA samples");
    }
    Ok(out)
}

/// Highly dialectal samples geolocated outside `dia` and its land neighbours.
///
/// Samples without a geo label are never negatives.
pub fn build_negative_set(
    dia: Dialect,
    corpus: &[Sample],
    table: &AdjacencyTable,
) -> Result<Vec<Sample>, BuildError> {
    let near = table.neighbours(dia)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for s in corpus {
        let Some(geo) = s.geo else { continue };
        if geo == dia || near.contains(&geo) {
            continue;
        }
        if is_highly_dialectal(s)? && seen.insert(s.id.as_str()) {
            out.push(s.clone());
        }
    }
    Ok(out)
}

pub fn build_binary_dataset(
    dia: Dialect,
    corpus: &[Sample],
    table: &AdjacencyTable,
    mode: BuildMode,
) -> Result<BinaryDataset, BuildError> {
    if corpus.is_empty() {
        return Err(BuildError::EmptyCorpus);
    }
    let positives = build_positive_set(dia, corpus)?;
    let negatives = match mode {
        BuildMode::Cartography => {
            let pos: HashSet<&str> = positives.iter().map(|s| s.id.as_str()).collect();
            corpus
                .iter()
                .filter(|s| !pos.contains(s.id.as_str()))
                .cloned()
                .collect()
        }
        BuildMode::PseudoLabel => build_negative_set(dia, corpus, table)?,
    };
    for (side, set) in [("positive", &positives), ("negative", &negatives)] {
        if set.is_empty() {
            return Err(BuildError::EmptySide {
                dialect: dia,
                mode,
                side,
            });
        }
    }
    Ok(BinaryDataset {
        dialect: dia,
        positives,
        negatives,
        snapshot: BuildSnapshot {
            mode,
            msa_max: MSA_MAX.to_string(),
            high_dialect_min: HIGH_DIALECT_MIN.to_string(),
            adjacency_sha256: table.checksum(),
        },
    })
}

/// Builds one dataset per dialect in canonical order. Runs in parallel; the
/// result does not depend on scheduling.
pub fn build_all(
    corpus: &[Sample],
    table: &AdjacencyTable,
    mode: BuildMode,
) -> Result<Vec<BinaryDataset>, BuildError> {
    Dialect::ALL
        .par_iter()
        .map(|&d| build_binary_dataset(d, corpus, table, mode))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    dialect: Dialect,
    #[serde(flatten)]
    snapshot: BuildSnapshot,
    positives: usize,
    negatives: usize,
}

impl BinaryDataset {
    /// `positives.tsv`, `negatives.tsv` and `manifest.json` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), BuildError> {
        fs::create_dir_all(dir)?;
        corpus::save_corpus(
            &dir.join("positives.tsv"),
            &self.positives,
            CorpusFormat::Tsv,
        )?;
        corpus::save_corpus(
            &dir.join("negatives.tsv"),
            &self.negatives,
            CorpusFormat::Tsv,
        )?;
        let manifest = DatasetManifest {
            dialect: self.dialect,
            snapshot: self.snapshot.clone(),
            positives: self.positives.len(),
            negatives: self.negatives.len(),
        };
        let json = serde_json::to_vec_pretty(&manifest).map_err(std::io::Error::other)?;
        crate::io::write_atomic(&dir.join("manifest.json"), &json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, BuildError> {
        let manifest: DatasetManifest =
            serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)
                .map_err(|e| BuildError::Manifest(e.to_string()))?;
        let positives = corpus::load_corpus(&dir.join("positives.tsv"), CorpusFormat::Tsv)?;
        let negatives = corpus::load_corpus(&dir.join("negatives.tsv"), CorpusFormat::Tsv)?;
        if positives.len() != manifest.positives || negatives.len() != manifest.negatives {
            return Err(BuildError::Manifest(
                "sample counts disagree with files".into(),
            ));
        }
        Ok(BinaryDataset {
            dialect: manifest.dialect,
            positives,
            negatives,
            snapshot: manifest.snapshot,
        })
    }
}
