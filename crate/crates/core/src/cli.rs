//! The `dialectid` command line: one subcommand per pipeline stage.
//!
//! Tunable settings resolve as flag, then `--config` file, then built-in
//! default, and the winning source of each is recorded in the run manifest
//! written next to the outputs.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::acceptability::{
    build_binary_dataset, AdjacencyTable, BinaryDataset, BuildError, BuildMode,
};
use crate::cartography::{
    bin_by_correctness, compute_metrics, export_annotation_sheet, flag_suspect_negatives,
    records_from_tsv, records_to_tsv, CartographyError, CartographyRecord, CorrectnessBin,
    TrainingTrace,
};
use crate::corpus::{
    aldi_bucket, filter_zero_cardinality, load_corpus, load_labeled, save_labeled, CorpusError,
    CorpusFormat, Dialect, LabelVector, LabeledSample, Provenance, Route, Sample,
    ALDI_BUCKET_LABELS, HIGH_DIALECT_MIN, MSA_MAX,
};
use crate::curriculum::{
    build_schedule, loss_profile, order_buckets, partition, run_curriculum, BucketKind,
    CurriculumError, CurriculumSchedule, ReplayRule,
};
use crate::evaluation::{
    evaluate_run, prediction_count_report, top_p_labels, EvalError, EvalReport, LabelSet,
    SingleLabelDistribution,
};
use crate::io::{file_sha256, sha256_hex, write_atomic};
use crate::plot::cartography_map;
use crate::pseudo_label::{
    aggregate_lazy, build_single_source_dataset, cardinality_by_aldi_report, route,
    train_bank_models, BinaryClassifierBank, ClientMode, HttpBackend, LabelSource,
    LlmAnnotationClient, PseudoLabelError, ReplayFixtures, ResponseCache, DEFAULT_BANK_THRESHOLD,
    DEFAULT_TEMPLATE,
};
use crate::trainer::{
    per_example_loss, train_multilabel, Cadence, ReferenceConfig, ReferenceEncoder, TraceConfig,
    TrainConfig, TrainError, TrainManifest, TrainedModel,
};

pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const TRACE_FILE: &str = "trace.jsonl";

/// Keys accepted in a `--config` file; anything else is a usage error.
pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "split_seed",
    "epochs",
    "batch_size",
    "val_fraction",
    "dropout",
    "frozen_bottom_layers",
    "threshold",
    "learning_rate",
    "buckets",
    "hidden",
    "extra_layers",
    "ngram_min",
    "ngram_max",
    "cadence",
    "trace_epochs",
    "warmup_epochs",
    "mode",
    "dialects",
    "adjacency",
    "per_bin",
    "source",
    "bank_threshold",
    "retries",
    "max_inflight",
    "endpoint",
    "llm_model",
    "timeout_secs",
    "template",
    "aldi_routing",
    "kind",
    "replay_rule",
    "passes_per_stage",
    "labelset",
    "top_p",
];

const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
const DEFAULT_LLM_MODEL: &str = "gpt-4o";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("external service: {0}")]
    External(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::External(_) => 3,
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        })*
    };
}

data_error!(
    CorpusError,
    BuildError,
    CartographyError,
    CurriculumError,
    EvalError,
    std::io::Error
);

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::BadConfig(m) => CliError::Usage(m),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<PseudoLabelError> for CliError {
    fn from(e: PseudoLabelError) -> Self {
        if e.is_external() {
            CliError::External(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "dialectid",
    version,
    about = "Multi-label dialect identification pipeline"
)]
struct Cli {
    /// Key=value settings file; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Print the resolved plan and exit without writing anything.
    #[arg(long, global = true)]
    dry_run: bool,

    /// More log output (-v, -vv).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build per-dialect binary acceptability datasets from a corpus.
    BuildBinary(BuildBinaryArgs),
    /// Train one binary scorer per dataset and log its training trace.
    TrainBinary(TrainBinaryArgs),
    /// Turn training traces into confidence, variability and correctness.
    Cartography(CartographyArgs),
    /// List negatives whose correctness is zero.
    Flag(FlagArgs),
    /// Sample annotation sheets per correctness bin.
    AnnotateExport(AnnotateExportArgs),
    /// Label a corpus from the binary bank, the LLM, or both.
    PseudoLabel(PseudoLabelArgs),
    /// Combine binary and LLM label files by dialectness routing.
    Aggregate(AggregateArgs),
    /// Train the multi-label classifier.
    Train(TrainArgs),
    /// Per-sample losses of a trained model and mean loss per bucket.
    LossProfile(LossProfileArgs),
    /// Build a curriculum schedule from bucket losses.
    Schedule(ScheduleArgs),
    /// Train the multi-label classifier through a schedule.
    CurriculumTrain(CurriculumTrainArgs),
    /// Score predictions against gold labels.
    Evaluate(EvaluateArgs),
    /// Convert single-label distributions to label sets by cumulative mass.
    BaselineTopp(BaselineToppArgs),
    /// Write plots and summary tables.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct TrainOpts {
    #[arg(long, value_name = "N")]
    epochs: Option<String>,
    #[arg(long, value_name = "N")]
    batch_size: Option<String>,
    #[arg(long, value_name = "F")]
    val_fraction: Option<String>,
    #[arg(long, value_name = "N")]
    split_seed: Option<String>,
    /// Seeds initialisation, shuffling and dropout.
    #[arg(long, value_name = "N")]
    seed: Option<String>,
    #[arg(long, value_name = "F")]
    dropout: Option<String>,
    #[arg(long, value_name = "K")]
    frozen_bottom_layers: Option<String>,
    /// Inference threshold on sigmoid outputs.
    #[arg(long, value_name = "F")]
    threshold: Option<String>,
    #[arg(long, value_name = "F")]
    learning_rate: Option<String>,
    /// Hash buckets of the reference encoder.
    #[arg(long, value_name = "N")]
    buckets: Option<String>,
    #[arg(long, value_name = "N")]
    hidden: Option<String>,
    #[arg(long, value_name = "N")]
    extra_layers: Option<String>,
    #[arg(long, value_name = "N")]
    ngram_min: Option<String>,
    #[arg(long, value_name = "N")]
    ngram_max: Option<String>,
}

#[derive(Args, Debug)]
struct BuildBinaryArgs {
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,
    /// cartography or pseudo-label.
    #[arg(long, value_name = "MODE")]
    mode: Option<String>,
    /// Comma-separated codes, or "all".
    #[arg(long, value_name = "LIST")]
    dialects: Option<String>,
    /// Adjacency file; the shipped table when absent.
    #[arg(long, value_name = "FILE")]
    adjacency: Option<String>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainBinaryArgs {
    /// Output directory of build-binary.
    #[arg(long, value_name = "DIR")]
    datasets: PathBuf,
    #[arg(long, value_name = "LIST")]
    dialects: Option<String>,
    /// steps:N or per-epoch:N.
    #[arg(long, value_name = "SPEC")]
    cadence: Option<String>,
    #[arg(long, value_name = "N")]
    trace_epochs: Option<String>,
    #[arg(long, value_name = "N")]
    warmup_epochs: Option<String>,
    #[command(flatten)]
    train: TrainOpts,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CartographyArgs {
    /// Output directory of train-binary.
    #[arg(long, value_name = "DIR")]
    traces: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FlagArgs {
    /// Output directory of cartography.
    #[arg(long, value_name = "DIR")]
    cartography: PathBuf,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AnnotateExportArgs {
    #[arg(long, value_name = "DIR")]
    cartography: PathBuf,
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,
    #[arg(long, value_name = "N")]
    per_bin: Option<String>,
    #[arg(long, value_name = "N")]
    seed: Option<String>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PseudoLabelArgs {
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,
    /// binary, gpt or hybrid.
    #[arg(long, value_name = "SOURCE")]
    source: Option<String>,
    /// Only label the samples the dialectness rule routes to this source.
    #[arg(long)]
    routed_only: bool,
    /// Output directory of train-binary.
    #[arg(long, value_name = "DIR")]
    bank: Option<PathBuf>,
    #[arg(long, value_name = "F")]
    bank_threshold: Option<String>,
    /// Recorded responses in JSONL; the default mode.
    #[arg(long, value_name = "FILE", conflicts_with = "live")]
    replay: Option<PathBuf>,
    /// Query the chat endpoint; needs the API key in the environment.
    #[arg(long)]
    live: bool,
    #[arg(long, value_name = "URL")]
    endpoint: Option<String>,
    #[arg(long, value_name = "NAME")]
    llm_model: Option<String>,
    #[arg(long, value_name = "SECS")]
    timeout_secs: Option<String>,
    /// Prompt template with a {tweet} placeholder.
    #[arg(long, value_name = "FILE")]
    template: Option<String>,
    /// Response cache directory.
    #[arg(long, value_name = "DIR")]
    cache: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    retries: Option<String>,
    #[arg(long, value_name = "K")]
    max_inflight: Option<String>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AggregateArgs {
    /// Samples to aggregate, with dialectness scores.
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,
    /// Labels from the binary bank.
    #[arg(long, value_name = "FILE")]
    binary: Option<PathBuf>,
    /// Labels from the LLM.
    #[arg(long, value_name = "FILE")]
    gpt: Option<PathBuf>,
    /// default (route by dialectness), binary or gpt.
    #[arg(long, value_name = "RULE")]
    aldi_routing: Option<String>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Labeled TSV.
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    #[command(flatten)]
    train: TrainOpts,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct LossProfileArgs {
    #[arg(long, value_name = "DIR")]
    model: PathBuf,
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ScheduleArgs {
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// losses.tsv from loss-profile.
    #[arg(long, value_name = "FILE")]
    losses: PathBuf,
    /// cardinality or aldi.
    #[arg(long, value_name = "KIND")]
    kind: Option<String>,
    #[arg(long, value_name = "N")]
    seed: Option<String>,
    /// min-prior, fixed:N or fraction:F.
    #[arg(long, value_name = "RULE")]
    replay_rule: Option<String>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CurriculumTrainArgs {
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    #[arg(long, value_name = "FILE")]
    schedule: PathBuf,
    #[arg(long, value_name = "N")]
    passes_per_stage: Option<String>,
    #[command(flatten)]
    train: TrainOpts,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Gold labeled TSV.
    #[arg(long, value_name = "FILE")]
    gold: PathBuf,
    #[arg(
        long,
        value_name = "DIR",
        conflicts_with = "predictions",
        required_unless_present = "predictions"
    )]
    model: Option<PathBuf>,
    /// Labeled TSV of predictions, matched to gold by id.
    #[arg(long, value_name = "FILE")]
    predictions: Option<PathBuf>,
    /// all, dev8, or comma-separated codes.
    #[arg(long, value_name = "SET")]
    labelset: Option<String>,
    #[arg(long, value_name = "F")]
    threshold: Option<String>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BaselineToppArgs {
    /// TSV: id, then one probability column per dialect code.
    #[arg(long, value_name = "FILE")]
    distributions: PathBuf,
    /// Corpus supplying the sample texts.
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,
    #[arg(long, value_name = "P")]
    top_p: Option<String>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Output directory of cartography.
    #[arg(long, value_name = "DIR")]
    cartography: Option<PathBuf>,
    /// Labeled TSV for the cardinality-by-dialectness table.
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Output directory of loss-profile.
    #[arg(long, value_name = "DIR")]
    losses: Option<PathBuf>,
    /// Model for the prediction-count table.
    #[arg(long, value_name = "DIR", requires = "group")]
    model: Option<PathBuf>,
    /// NAME=FILE sample group for the prediction-count table; repeatable.
    #[arg(long, value_name = "NAME=FILE", requires = "model")]
    group: Vec<String>,
    #[arg(long, value_name = "F")]
    threshold: Option<String>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_config(text: &str) -> std::result::Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key = value", i + 1))?;
        let (k, v) = (k.trim(), v.trim());
        if !CONFIG_KEYS.contains(&k) {
            return Err(format!("config line {}: unknown key {k:?}", i + 1));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(format!("config line {}: duplicate key {k:?}", i + 1));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub value: String,
    pub source: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct Checksum {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Thresholds {
    pub msa_max: String,
    pub high_dialect_min: String,
}

/// Everything needed to rerun a subcommand and check its inputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub argv: Vec<String>,
    pub config_file: Option<Checksum>,
    pub resolved: BTreeMap<String, Resolved>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<Checksum>,
    pub outputs: Vec<String>,
    pub thresholds: Thresholds,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn dir_sha256(dir: &Path) -> std::io::Result<String> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(String, String)>) -> std::io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let p = entry?.path();
            if p.is_dir() {
                walk(base, &p, out)?;
            } else if p.file_name().and_then(|n| n.to_str()) != Some(RUN_MANIFEST) {
                let rel = p
                    .strip_prefix(base)
                    .unwrap_or(&p)
                    .to_string_lossy()
                    .replace('\\', "/");
                out.push((rel, file_sha256(&p)?));
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    files.sort();
    let listing: String = files.iter().map(|(p, h)| format!("{p}\0{h}\n")).collect();
    Ok(sha256_hex(listing.as_bytes()))
}

/// Per-invocation state: settings resolution, inputs, outputs, manifest.
struct Run {
    subcommand: &'static str,
    argv: Vec<String>,
    config: BTreeMap<String, String>,
    config_file: Option<Checksum>,
    dry_run: bool,
    resolved: BTreeMap<String, Resolved>,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<Checksum>,
    outputs: Vec<String>,
    started: u128,
}

impl Run {
    fn get<T>(&mut self, key: &'static str, flag: &Option<String>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        debug_assert!(CONFIG_KEYS.contains(&key), "{key} missing from CONFIG_KEYS");
        let (raw, source) = match (flag, self.config.get(key)) {
            (Some(v), _) => (v.clone(), "flag"),
            (None, Some(v)) => (v.clone(), "config"),
            (None, None) => {
                self.resolved.insert(
                    key.into(),
                    Resolved {
                        value: default.to_string(),
                        source: "default",
                    },
                );
                return Ok(default);
            }
        };
        let v = raw
            .parse::<T>()
            .map_err(|e| CliError::Usage(format!("{key} = {raw:?} ({source}): {e}")))?;
        self.resolved
            .insert(key.into(), Resolved { value: raw, source });
        Ok(v)
    }

    fn get_opt(&mut self, key: &'static str, flag: &Option<String>) -> Option<String> {
        let (v, source) = match (flag, self.config.get(key)) {
            (Some(v), _) => (v.clone(), "flag"),
            (None, Some(v)) => (v.clone(), "config"),
            (None, None) => return None,
        };
        self.resolved.insert(
            key.into(),
            Resolved {
                value: v.clone(),
                source,
            },
        );
        Some(v)
    }

    fn seed(&mut self, name: &str, v: u64) {
        self.seeds.insert(name.into(), v);
    }

    /// Records the checksum of an existing input file or directory.
    fn input(&mut self, path: &Path) -> Result<PathBuf> {
        let sha = if path.is_dir() {
            dir_sha256(path)?
        } else if path.is_file() {
            file_sha256(path)?
        } else {
            return Err(CliError::Data(format!("missing input {}", path.display())));
        };
        self.inputs.push(Checksum {
            path: path.display().to_string(),
            sha256: sha,
        });
        Ok(path.to_path_buf())
    }

    fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    fn manifest(&self) -> RunManifest {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: self.subcommand.into(),
            argv: self.argv.clone(),
            config_file: self.config_file.clone(),
            resolved: self.resolved.clone(),
            seeds: self.seeds.clone(),
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            thresholds: Thresholds {
                msa_max: MSA_MAX.to_string(),
                high_dialect_min: HIGH_DIALECT_MIN.to_string(),
            },
            started_unix_ms: self.started,
            finished_unix_ms: now_ms(),
        }
    }

    /// In dry-run mode prints the plan and returns true; the caller stops.
    fn plan(&self) -> bool {
        if self.dry_run {
            let m = self.manifest();
            let plan = serde_json::json!({
                "dry_run": true,
                "subcommand": m.subcommand,
                "config_file": m.config_file,
                "resolved": m.resolved,
                "seeds": m.seeds,
                "inputs": m.inputs,
                "outputs": m.outputs,
                "thresholds": m.thresholds,
            });
            println!(
                "{}",
                serde_json::to_string_pretty(&plan).expect("plan serializes")
            );
        }
        self.dry_run
    }

    /// Writes the run manifest inside `out_dir`.
    fn finish_dir(&self, out_dir: &Path) -> Result<()> {
        self.write_manifest(&out_dir.join(RUN_MANIFEST))
    }

    /// Writes the run manifest beside the single output file `out`.
    fn finish_file(&self, out: &Path) -> Result<()> {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        self.write_manifest(&out.with_file_name(name))
    }

    fn write_manifest(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes");
        write_atomic(path, format!("{json}\n").as_bytes())?;
        Ok(())
    }
}

fn train_config(
    run: &mut Run,
    o: &TrainOpts,
    trace: Option<(&Option<String>, &Option<String>, &Option<String>)>,
) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let e = ReferenceConfig::default();
    let mut cfg = TrainConfig {
        epochs: run.get("epochs", &o.epochs, d.epochs)?,
        batch_size: run.get("batch_size", &o.batch_size, d.batch_size)?,
        val_fraction: run.get("val_fraction", &o.val_fraction, d.val_fraction)?,
        split_seed: run.get("split_seed", &o.split_seed, d.split_seed)?,
        seed: run.get("seed", &o.seed, d.seed)?,
        dropout: run.get("dropout", &o.dropout, d.dropout)?,
        frozen_bottom_layers: run.get(
            "frozen_bottom_layers",
            &o.frozen_bottom_layers,
            d.frozen_bottom_layers,
        )?,
        inference_threshold: run.get("threshold", &o.threshold, d.inference_threshold)?,
        learning_rate: run.get("learning_rate", &o.learning_rate, d.learning_rate)?,
        encoder: ReferenceConfig {
            buckets: run.get("buckets", &o.buckets, e.buckets)?,
            hidden: run.get("hidden", &o.hidden, e.hidden)?,
            extra_layers: run.get("extra_layers", &o.extra_layers, e.extra_layers)?,
            ngram_min: run.get("ngram_min", &o.ngram_min, e.ngram_min)?,
            ngram_max: run.get("ngram_max", &o.ngram_max, e.ngram_max)?,
        },
        trace: d.trace,
    };
    if let Some((cadence, epochs, warmup)) = trace {
        cfg.trace = TraceConfig {
            cadence: run.get::<Cadence>("cadence", cadence, d.trace.cadence)?,
            epochs: run.get("trace_epochs", epochs, d.trace.epochs)?,
            warmup_epochs_ignored: run.get(
                "warmup_epochs",
                warmup,
                d.trace.warmup_epochs_ignored,
            )?,
        };
    }
    cfg.validate()?;
    ReferenceEncoder::new(cfg.encoder, cfg.seed)?;
    run.seed("seed", cfg.seed);
    run.seed("split_seed", cfg.split_seed);
    Ok(cfg)
}

fn parse_dialects(list: &str) -> Result<Vec<Dialect>> {
    if list == "all" {
        return Ok(Dialect::ALL.to_vec());
    }
    list.split(',')
        .map(|c| {
            c.trim()
                .parse::<Dialect>()
                .map_err(|e| CliError::Usage(e.to_string()))
        })
        .collect()
}

fn load_samples(path: &Path) -> Result<Vec<Sample>> {
    Ok(load_corpus(path, CorpusFormat::from_path(path))?)
}

fn dialect_subdirs(dir: &Path, file: &str) -> Result<Vec<(Dialect, PathBuf)>> {
    let out: Vec<(Dialect, PathBuf)> = Dialect::ALL
        .iter()
        .map(|d| (*d, dir.join(d.code()).join(file)))
        .filter(|(_, p)| p.is_file())
        .collect();
    if out.is_empty() {
        return Err(CliError::Data(format!(
            "no <CODE>/{file} under {}",
            dir.display()
        )));
    }
    Ok(out)
}

fn cartography_files(dir: &Path) -> Result<Vec<(Dialect, Vec<CartographyRecord>)>> {
    let mut out = Vec::new();
    for d in Dialect::ALL {
        let p = dir.join(format!("{}.tsv", d.code()));
        if p.is_file() {
            out.push((d, records_from_tsv(&fs::read_to_string(&p)?)?));
        }
    }
    if out.is_empty() {
        return Err(CliError::Data(format!(
            "no <CODE>.tsv cartography files in {}",
            dir.display()
        )));
    }
    Ok(out)
}

fn write_text(run: &mut Run, path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())?;
    run.output(path);
    Ok(())
}

fn build_binary(run: &mut Run, a: &BuildBinaryArgs) -> Result<()> {
    let corpus_path = run.input(&a.corpus)?;
    let mode: BuildMode = run.get("mode", &a.mode, BuildMode::PseudoLabel)?;
    let dialects = parse_dialects(&run.get::<String>("dialects", &a.dialects, "all".into())?)?;
    let table = match run.get_opt("adjacency", &a.adjacency) {
        Some(p) => AdjacencyTable::load(&run.input(Path::new(&p))?)?,
        None => {
            run.resolved.insert(
                "adjacency".into(),
                Resolved {
                    value: "shipped".into(),
                    source: "default",
                },
            );
            AdjacencyTable::shipped()
        }
    };
    for d in &dialects {
        run.output(&a.out.join(d.code()));
    }
    if run.plan() {
        return Ok(());
    }
    let corpus = load_samples(&corpus_path)?;
    for d in dialects {
        let ds = build_binary_dataset(d, &corpus, &table, mode)?;
        println!(
            "{d}: {} positives, {} negatives",
            ds.positives.len(),
            ds.negatives.len()
        );
        ds.save(&a.out.join(d.code()))?;
    }
    run.finish_dir(&a.out)
}

fn train_binary_cmd(run: &mut Run, a: &TrainBinaryArgs) -> Result<()> {
    let dir = run.input(&a.datasets)?;
    let dialects = parse_dialects(&run.get::<String>("dialects", &a.dialects, "all".into())?)?;
    let cfg = train_config(
        run,
        &a.train,
        Some((&a.cadence, &a.trace_epochs, &a.warmup_epochs)),
    )?;
    run.seed("encoder_seed_base", cfg.seed);
    for d in &dialects {
        run.output(&a.out.join(d.code()));
    }
    if run.plan() {
        return Ok(());
    }
    let datasets: Vec<BinaryDataset> = dialects
        .iter()
        .map(|d| BinaryDataset::load(&dir.join(d.code())))
        .collect::<std::result::Result<_, _>>()?;
    let encoder_cfg = cfg.encoder;
    let seed = cfg.seed;
    let trained = train_bank_models(
        &datasets,
        |d| {
            ReferenceEncoder::new(encoder_cfg, seed.wrapping_add(d.index() as u64))
                .expect("validated config")
        },
        &cfg,
    )?;
    for ((d, model, trace), ds) in trained.into_iter().zip(&datasets) {
        let sub = a.out.join(d.code());
        let n = ds.positives.len() + ds.negatives.len();
        let manifest = TrainManifest::new("binary", &model, &cfg, n, 0);
        TrainedModel {
            model,
            manifest,
            log: Vec::new(),
        }
        .save(&sub)?;
        trace.save(&sub.join(TRACE_FILE))?;
        println!(
            "{d}: trained on {n} samples, {} checkpoints",
            trace.header.checkpoints_per_epoch * trace.header.epochs
        );
    }
    run.finish_dir(&a.out)
}

fn cartography_cmd(run: &mut Run, a: &CartographyArgs) -> Result<()> {
    let dir = run.input(&a.traces)?;
    let traces = dialect_subdirs(&dir, TRACE_FILE)?;
    for (d, _) in &traces {
        run.output(&a.out.join(format!("{}.tsv", d.code())));
    }
    if run.plan() {
        return Ok(());
    }
    for (d, path) in traces {
        let records = compute_metrics(&TrainingTrace::load(&path)?)?;
        let counts: Vec<String> = bin_by_correctness(&records)
            .iter()
            .enumerate()
            .map(|(i, b)| {
                format!(
                    "{}:{}",
                    CorrectnessBin::new(i).expect("seven bins").label(),
                    b.len()
                )
            })
            .collect();
        println!("{d}: {} samples, bins {}", records.len(), counts.join(" "));
        write_atomic(
            &a.out.join(format!("{}.tsv", d.code())),
            records_to_tsv(&records).as_bytes(),
        )?;
    }
    run.finish_dir(&a.out)
}

fn flag_cmd(run: &mut Run, a: &FlagArgs) -> Result<()> {
    let dir = run.input(&a.cartography)?;
    run.output(&a.out);
    if run.plan() {
        return Ok(());
    }
    let mut out = String::from("dialect\tid\tcorrectness\tconfidence\n");
    for (d, records) in cartography_files(&dir)? {
        let by_id: HashMap<&str, &CartographyRecord> =
            records.iter().map(|r| (r.id.as_str(), r)).collect();
        let flagged = flag_suspect_negatives(&records);
        println!("{d}: {} suspect negatives", flagged.len());
        for id in flagged {
            let r = by_id[id.as_str()];
            out.push_str(&format!("{d}\t{id}\t{}\t{}\n", r.correctness, r.confidence));
        }
    }
    write_atomic(&a.out, out.as_bytes())?;
    run.finish_file(&a.out)
}

fn annotate_export(run: &mut Run, a: &AnnotateExportArgs) -> Result<()> {
    let dir = run.input(&a.cartography)?;
    let corpus_path = run.input(&a.corpus)?;
    let per_bin: usize = run.get("per_bin", &a.per_bin, 10)?;
    let seed: u64 = run.get("seed", &a.seed, 1)?;
    run.seed("seed", seed);
    if run.plan() {
        return Ok(());
    }
    let corpus = load_samples(&corpus_path)?;
    for (d, records) in cartography_files(&dir)? {
        let sheet = export_annotation_sheet(
            &records,
            &corpus,
            per_bin,
            seed.wrapping_add(d.index() as u64),
        );
        println!("{d}: {} rows", sheet.rows.len());
        write_text(
            run,
            &a.out.join(format!("{}.tsv", d.code())),
            &sheet.to_tsv()?,
        )?;
    }
    run.finish_dir(&a.out)
}

fn pseudo_label_cmd(run: &mut Run, a: &PseudoLabelArgs) -> Result<()> {
    let corpus_path = run.input(&a.corpus)?;
    let source: LabelSource = run
        .get_opt("source", &a.source)
        .map(|s| s.parse().map_err(CliError::Usage))
        .transpose()?
        .unwrap_or(LabelSource::Hybrid);
    run.resolved.entry("source".into()).or_insert(Resolved {
        value: "hybrid".into(),
        source: "default",
    });
    let needs_bank = source != LabelSource::Gpt;
    let needs_llm = source != LabelSource::Binary;
    let bank_threshold: f64 =
        run.get("bank_threshold", &a.bank_threshold, DEFAULT_BANK_THRESHOLD)?;
    let bank_dir = match (&a.bank, needs_bank) {
        (Some(p), true) => Some(run.input(p)?),
        (None, true) => {
            return Err(CliError::Usage(
                "--bank is required for binary and hybrid labels".into(),
            ))
        }
        _ => None,
    };
    let retries: usize = run.get("retries", &a.retries, 2)?;
    let max_inflight: usize = run.get("max_inflight", &a.max_inflight, 4)?;
    let template = match run.get_opt("template", &a.template) {
        Some(p) => fs::read_to_string(run.input(Path::new(&p))?)?,
        None => DEFAULT_TEMPLATE.to_string(),
    };
    let mut replay = None;
    let mut live = None;
    if needs_llm {
        if a.live {
            let endpoint: String =
                run.get("endpoint", &a.endpoint, DEFAULT_ENDPOINT.to_string())?;
            let model: String =
                run.get("llm_model", &a.llm_model, DEFAULT_LLM_MODEL.to_string())?;
            let timeout: u64 = run.get("timeout_secs", &a.timeout_secs, 60)?;
            live = Some((endpoint, model, timeout));
        } else {
            let p = a.replay.as_ref().ok_or_else(|| {
                CliError::Usage("LLM labels need --replay FILE, or --live".into())
            })?;
            replay = Some(run.input(p)?);
        }
    }
    run.resolved.insert(
        "llm_mode".into(),
        Resolved {
            value: if live.is_some() { "live" } else { "replay" }.into(),
            source: if a.live { "flag" } else { "default" },
        },
    );
    run.output(&a.out);
    if run.plan() {
        return Ok(());
    }

    let mut corpus = load_samples(&corpus_path)?;
    if a.routed_only {
        let want = match source {
            LabelSource::Binary => Some(Route::BinaryClassifiers),
            LabelSource::Gpt => Some(Route::Gpt),
            LabelSource::Hybrid => None,
        };
        if let Some(want) = want {
            let mut kept = Vec::with_capacity(corpus.len());
            for s in corpus {
                if route(s.require_aldi()?) == want {
                    kept.push(s);
                }
            }
            corpus = kept;
        }
    }
    let bank = bank_dir
        .map(|d| BinaryClassifierBank::load_models::<ReferenceEncoder>(&d, bank_threshold))
        .transpose()?;
    let client = if needs_llm {
        let mode = match (live, replay) {
            (Some((endpoint, model, timeout)), _) => ClientMode::Live(Box::new(
                HttpBackend::from_env(&endpoint, &model, Duration::from_secs(timeout))?,
            )),
            (None, Some(p)) => ClientMode::Replay(ReplayFixtures::load(&p)?),
            (None, None) => unreachable!("checked above"),
        };
        let mut c = LlmAnnotationClient::new(mode, &template)?
            .with_retries(retries)
            .with_max_inflight(max_inflight);
        if let Some(dir) = &a.cache {
            c = c.with_cache(ResponseCache::open(dir)?);
        }
        Some(c)
    } else {
        None
    };
    let labeled = build_single_source_dataset(&corpus, source, bank.as_ref(), client.as_ref())?;
    if let Some(c) = &client {
        let s = c.stats();
        println!(
            "llm: {} endpoint calls, {} retries, {} cache hits",
            s.endpoint_calls, s.retries, s.cache_hits
        );
    }
    print!(
        "{} labeled, {} dropped with no label",
        labeled.samples.len(),
        labeled.dropped
    );
    if source == LabelSource::Hybrid {
        print!(
            " ({} via bank, {} via llm)",
            labeled.routed_binary, labeled.routed_gpt
        );
    }
    println!();
    save_labeled(&a.out, &labeled.samples)?;
    run.finish_file(&a.out)
}

fn index_labels(samples: Vec<LabeledSample>) -> HashMap<String, LabelVector> {
    samples
        .into_iter()
        .map(|s| (s.sample.id.clone(), s.labels))
        .collect()
}

fn aggregate_cmd(run: &mut Run, a: &AggregateArgs) -> Result<()> {
    let corpus_path = run.input(&a.corpus)?;
    let routing: String = run.get("aldi_routing", &a.aldi_routing, "default".to_string())?;
    let (need_bin, need_gpt) = match routing.as_str() {
        "default" => (true, true),
        "binary" => (true, false),
        "gpt" => (false, true),
        other => {
            return Err(CliError::Usage(format!(
                "unknown aldi routing {other:?}; use default, binary or gpt"
            )))
        }
    };
    let bin_path = match (&a.binary, need_bin) {
        (Some(p), true) => Some(run.input(p)?),
        (None, true) => {
            return Err(CliError::Usage(format!(
                "--binary is required for {routing} routing"
            )))
        }
        _ => None,
    };
    let gpt_path = match (&a.gpt, need_gpt) {
        (Some(p), true) => Some(run.input(p)?),
        (None, true) => {
            return Err(CliError::Usage(format!(
                "--gpt is required for {routing} routing"
            )))
        }
        _ => None,
    };
    run.output(&a.out);
    if run.plan() {
        return Ok(());
    }
    let corpus = load_samples(&corpus_path)?;
    let bin = bin_path
        .map(|p| load_labeled(&p))
        .transpose()?
        .map(index_labels)
        .unwrap_or_default();
    let gpt = gpt_path
        .map(|p| load_labeled(&p))
        .transpose()?
        .map(index_labels)
        .unwrap_or_default();
    let lookup = |m: &HashMap<String, LabelVector>, what: &str, id: &str| {
        m.get(id)
            .copied()
            .ok_or_else(|| CliError::Data(format!("sample {id:?} has no {what} label vector")))
    };
    let mut labeled = Vec::with_capacity(corpus.len());
    for s in &corpus {
        let ls = match routing.as_str() {
            "binary" => LabeledSample::new(
                s.clone(),
                lookup(&bin, "binary", &s.id)?,
                Provenance::BinaryClassifiers,
            ),
            "gpt" => LabeledSample::new(s.clone(), lookup(&gpt, "gpt", &s.id)?, Provenance::Gpt),
            _ => aggregate_lazy(
                s,
                || lookup(&bin, "binary", &s.id),
                || lookup(&gpt, "gpt", &s.id),
            )?,
        };
        labeled.push(ls);
    }
    let (kept, dropped) = filter_zero_cardinality(labeled);
    println!("{} aggregated, {dropped} dropped with no label", kept.len());
    save_labeled(&a.out, &kept)?;
    run.finish_file(&a.out)
}

fn train_cmd(run: &mut Run, a: &TrainArgs) -> Result<()> {
    let data = run.input(&a.data)?;
    let cfg = train_config(run, &a.train, None)?;
    run.output(&a.out);
    if run.plan() {
        return Ok(());
    }
    let ds = load_labeled(&data)?;
    let trained = train_multilabel(&ds, ReferenceEncoder::new(cfg.encoder, cfg.seed)?, &cfg)?;
    println!(
        "best epoch {:?}, validation micro F1 {:?}",
        trained.manifest.best_epoch, trained.manifest.best_val_micro_f1
    );
    trained.save(&a.out)?;
    run.finish_dir(&a.out)
}

fn load_model(path: &Path) -> Result<TrainedModel<ReferenceEncoder>> {
    Ok(TrainedModel::load(path)?)
}

fn loss_profile_cmd(run: &mut Run, a: &LossProfileArgs) -> Result<()> {
    let model_dir = run.input(&a.model)?;
    let data = run.input(&a.data)?;
    run.output(&a.out);
    if run.plan() {
        return Ok(());
    }
    let model = load_model(&model_dir)?.model;
    let ds = load_labeled(&data)?;
    let losses = per_example_loss(&model, &ds);
    let mut tsv = String::from("id\tloss\n");
    for (id, l) in &losses {
        tsv.push_str(&format!("{id}\t{l:?}\n"));
    }
    write_text(run, &a.out.join("losses.tsv"), &tsv)?;
    for kind in [BucketKind::Cardinality, BucketKind::Aldi] {
        let spec = partition(&ds, kind)?;
        let profile = loss_profile(&spec, &losses)?;
        write_text(
            run,
            &a.out.join(format!("profile-{kind}.tsv")),
            &profile.to_tsv(),
        )?;
        write_text(
            run,
            &a.out.join(format!("profile-{kind}.svg")),
            &profile.to_svg(),
        )?;
        print!("{kind}:\n{}", profile.to_tsv());
    }
    run.finish_dir(&a.out)
}

fn read_losses(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("id\tloss") {
        return Err(CliError::Data(format!(
            "{}: expected header id<TAB>loss",
            path.display()
        )));
    }
    let mut out = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let (id, l) = line.split_once('\t').ok_or_else(|| {
            CliError::Data(format!(
                "{} line {}: expected two columns",
                path.display(),
                i + 2
            ))
        })?;
        let l: f64 = l.parse().map_err(|_| {
            CliError::Data(format!("{} line {}: bad loss {l:?}", path.display(), i + 2))
        })?;
        out.insert(id.to_string(), l);
    }
    Ok(out)
}

fn schedule_cmd(run: &mut Run, a: &ScheduleArgs) -> Result<()> {
    let data = run.input(&a.data)?;
    let losses_path = run.input(&a.losses)?;
    let kind: BucketKind = run.get("kind", &a.kind, BucketKind::Cardinality)?;
    let seed: u64 = run.get("seed", &a.seed, 7)?;
    let rule: ReplayRule = run.get("replay_rule", &a.replay_rule, ReplayRule::MinPrior)?;
    run.seed("seed", seed);
    run.output(&a.out);
    if run.plan() {
        return Ok(());
    }
    let ds = load_labeled(&data)?;
    let losses = read_losses(&losses_path)?;
    let spec = partition(&ds, kind)?;
    let order = order_buckets(&spec, &losses)?;
    let schedule = build_schedule(&spec, &order, seed, rule)?;
    for st in &schedule.stages {
        println!(
            "stage {}: bucket {} with {} new + {} replayed",
            st.stage,
            st.bucket,
            st.new.len(),
            st.replay_count()
        );
    }
    schedule.save(&a.out)?;
    run.finish_file(&a.out)
}

fn curriculum_train_cmd(run: &mut Run, a: &CurriculumTrainArgs) -> Result<()> {
    let data = run.input(&a.data)?;
    let schedule_path = run.input(&a.schedule)?;
    let passes: usize = run.get("passes_per_stage", &a.passes_per_stage, 1)?;
    let cfg = train_config(run, &a.train, None)?;
    run.output(&a.out);
    if run.plan() {
        return Ok(());
    }
    let ds = load_labeled(&data)?;
    let schedule = CurriculumSchedule::load(&schedule_path)?;
    run.seed("schedule_seed", schedule.seed);
    let trained = run_curriculum(
        &schedule,
        &ds,
        ReferenceEncoder::new(cfg.encoder, cfg.seed)?,
        &cfg,
        passes,
    )?;
    for l in &trained.log {
        println!(
            "stage {:?} epoch {}: {} samples, loss {:.4}",
            l.stage, l.epoch, l.samples, l.train_loss
        );
    }
    trained.save(&a.out)?;
    run.finish_dir(&a.out)
}

fn evaluate_cmd(run: &mut Run, a: &EvaluateArgs) -> Result<()> {
    let gold_path = run.input(&a.gold)?;
    let labelset: LabelSet = run.get("labelset", &a.labelset, LabelSet::all())?;
    let threshold: f64 = run.get(
        "threshold",
        &a.threshold,
        TrainConfig::default().inference_threshold,
    )?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(CliError::Usage(format!(
            "threshold {threshold} outside (0,1)"
        )));
    }
    let model_dir = a.model.as_ref().map(|p| run.input(p)).transpose()?;
    let pred_path = a.predictions.as_ref().map(|p| run.input(p)).transpose()?;
    run.output(&a.out);
    if run.plan() {
        return Ok(());
    }
    let gold = load_labeled(&gold_path)?;
    let report = match (model_dir, pred_path) {
        (Some(dir), _) => evaluate_run(&load_model(&dir)?.model, &gold, &labelset, threshold)?,
        (None, Some(p)) => {
            let preds = index_labels(load_labeled(&p)?);
            let predicted = gold
                .iter()
                .map(|g| {
                    preds.get(g.id()).copied().ok_or_else(|| {
                        CliError::Data(format!("no prediction for gold sample {:?}", g.id()))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let golds: Vec<LabelVector> = gold.iter().map(|g| g.labels).collect();
            EvalReport::from_predictions(&predicted, &golds, &labelset, threshold)?
        }
        (None, None) => return Err(CliError::Usage("give --model or --predictions".into())),
    };
    println!(
        "{} samples on {}: macro P {:.4} R {:.4} F1 {:.4}, accuracy {:.4} ({})",
        report.samples,
        report.labelset,
        report.macro_precision,
        report.macro_recall,
        report.macro_f1,
        report.accuracy,
        report.accuracy_definition
    );
    write_text(
        run,
        &a.out.join("report.json"),
        &format!("{}\n", report.to_json()),
    )?;
    write_text(run, &a.out.join("report.tsv"), &report.to_tsv())?;
    run.finish_dir(&a.out)
}

fn read_distributions(path: &Path) -> Result<Vec<(String, SingleLabelDistribution)>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split('\t').collect();
    if header.len() != Dialect::ALL.len() + 1 || header[0] != "id" {
        return Err(CliError::Data(format!(
            "{}: header must be id followed by the {} dialect codes",
            path.display(),
            Dialect::ALL.len()
        )));
    }
    let cols: Vec<Dialect> = header[1..]
        .iter()
        .map(|c| {
            c.parse::<Dialect>()
                .map_err(|e| CliError::Data(e.to_string()))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != header.len() {
            return Err(CliError::Data(format!(
                "{} line {}: expected {} columns",
                path.display(),
                i + 2,
                header.len()
            )));
        }
        let mut probs = [0.0; Dialect::ALL.len()];
        for (d, v) in cols.iter().zip(&fields[1..]) {
            probs[d.index()] = v.parse().map_err(|_| {
                CliError::Data(format!(
                    "{} line {}: bad probability {v:?}",
                    path.display(),
                    i + 2
                ))
            })?;
        }
        out.push((fields[0].to_string(), SingleLabelDistribution::new(probs)?));
    }
    Ok(out)
}

fn baseline_topp(run: &mut Run, a: &BaselineToppArgs) -> Result<()> {
    let dist_path = run.input(&a.distributions)?;
    let corpus_path = run.input(&a.corpus)?;
    let p: f64 = run.get("top_p", &a.top_p, 0.9)?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(CliError::Usage(format!("top-p {p} outside (0,1]")));
    }
    run.output(&a.out);
    if run.plan() {
        return Ok(());
    }
    let corpus: HashMap<String, Sample> = load_samples(&corpus_path)?
        .into_iter()
        .map(|s| (s.id.clone(), s))
        .collect();
    let mut out = Vec::new();
    for (id, dist) in read_distributions(&dist_path)? {
        let sample = corpus
            .get(&id)
            .cloned()
            .ok_or_else(|| CliError::Data(format!("distribution for unknown sample {id:?}")))?;
        out.push(LabeledSample::new(
            sample,
            top_p_labels(&dist, p)?,
            Provenance::Predicted,
        ));
    }
    let mean = out.iter().map(|s| s.cardinality() as f64).sum::<f64>() / out.len().max(1) as f64;
    println!("{} samples, mean {mean:.2} labels at top-p {p}", out.len());
    save_labeled(&a.out, &out)?;
    run.finish_file(&a.out)
}

fn report_cmd(run: &mut Run, a: &ReportArgs) -> Result<()> {
    if a.cartography.is_none() && a.data.is_none() && a.losses.is_none() && a.model.is_none() {
        return Err(CliError::Usage(
            "report needs at least one of --cartography, --data, --losses, --model".into(),
        ));
    }
    let carto = a.cartography.as_ref().map(|p| run.input(p)).transpose()?;
    let data = a.data.as_ref().map(|p| run.input(p)).transpose()?;
    let losses = a.losses.as_ref().map(|p| run.input(p)).transpose()?;
    let model = a.model.as_ref().map(|p| run.input(p)).transpose()?;
    let mut groups = Vec::new();
    for g in &a.group {
        let (name, path) = g
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--group {g:?}: expected NAME=FILE")))?;
        groups.push((name.to_string(), run.input(Path::new(path))?));
    }
    let threshold: f64 = run.get(
        "threshold",
        &a.threshold,
        TrainConfig::default().inference_threshold,
    )?;
    run.output(&a.out);
    if run.plan() {
        return Ok(());
    }
    if let Some(dir) = carto {
        let files = cartography_files(&dir)?;
        let panels: Vec<(&str, &[CartographyRecord])> = files
            .iter()
            .map(|(d, r)| (d.code(), r.as_slice()))
            .collect();
        write_text(
            run,
            &a.out.join("cartography_map.svg"),
            &cartography_map(&panels),
        )?;
    }
    if let Some(p) = data {
        let ds = load_labeled(&p)?;
        let rep = cardinality_by_aldi_report(&ds)?;
        write_text(run, &a.out.join("cardinality_by_aldi.tsv"), &rep.to_tsv())?;
        write_text(
            run,
            &a.out.join("cardinality_by_aldi.svg"),
            &rep.to_svg("label cardinality by dialectness"),
        )?;
        let mut counts = [0usize; 4];
        for s in &ds {
            if let Some(x) = s.sample.aldi {
                counts[aldi_bucket(x)] += 1;
            }
        }
        for (label, n) in ALDI_BUCKET_LABELS.iter().zip(counts) {
            println!("{label}: {n} samples");
        }
    }
    if let Some(dir) = losses {
        for kind in [BucketKind::Cardinality, BucketKind::Aldi] {
            let src = dir.join(format!("profile-{kind}.svg"));
            if src.is_file() {
                let dst = a.out.join(format!("loss_profile-{kind}.svg"));
                write_text(run, &dst, &fs::read_to_string(&src)?)?;
            }
        }
    }
    if let Some(dir) = model {
        let m = load_model(&dir)?.model;
        let named: Vec<(String, Vec<Sample>)> = groups
            .iter()
            .map(|(n, p)| Ok((n.clone(), load_samples(p)?)))
            .collect::<Result<_>>()?;
        let counts = prediction_count_report(&m, &named, threshold);
        write_text(run, &a.out.join("prediction_counts.tsv"), &counts.to_tsv())?;
    }
    run.finish_dir(&a.out)
}

fn dispatch(cli: Cli, argv: Vec<String>) -> Result<()> {
    let (config, config_file) = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            let map = parse_config(&text).map_err(CliError::Usage)?;
            let sum = Checksum {
                path: p.display().to_string(),
                sha256: sha256_hex(text.as_bytes()),
            };
            (map, Some(sum))
        }
        None => (BTreeMap::new(), None),
    };
    let name = match &cli.command {
        Command::BuildBinary(_) => "build-binary",
        Command::TrainBinary(_) => "train-binary",
        Command::Cartography(_) => "cartography",
        Command::Flag(_) => "flag",
        Command::AnnotateExport(_) => "annotate-export",
        Command::PseudoLabel(_) => "pseudo-label",
        Command::Aggregate(_) => "aggregate",
        Command::Train(_) => "train",
        Command::LossProfile(_) => "loss-profile",
        Command::Schedule(_) => "schedule",
        Command::CurriculumTrain(_) => "curriculum-train",
        Command::Evaluate(_) => "evaluate",
        Command::BaselineTopp(_) => "baseline-topp",
        Command::Report(_) => "report",
    };
    let mut run = Run {
        subcommand: name,
        argv,
        config,
        config_file,
        dry_run: cli.dry_run,
        resolved: BTreeMap::new(),
        seeds: BTreeMap::new(),
        inputs: Vec::new(),
        outputs: Vec::new(),
        started: now_ms(),
    };
    match &cli.command {
        Command::BuildBinary(a) => build_binary(&mut run, a),
        Command::TrainBinary(a) => train_binary_cmd(&mut run, a),
        Command::Cartography(a) => cartography_cmd(&mut run, a),
        Command::Flag(a) => flag_cmd(&mut run, a),
        Command::AnnotateExport(a) => annotate_export(&mut run, a),
        Command::PseudoLabel(a) => pseudo_label_cmd(&mut run, a),
        Command::Aggregate(a) => aggregate_cmd(&mut run, a),
        Command::Train(a) => train_cmd(&mut run, a),
        Command::LossProfile(a) => loss_profile_cmd(&mut run, a),
        Command::Schedule(a) => schedule_cmd(&mut run, a),
        Command::CurriculumTrain(a) => curriculum_train_cmd(&mut run, a),
        Command::Evaluate(a) => evaluate_cmd(&mut run, a),
        Command::BaselineTopp(a) => baseline_topp(&mut run, a),
        Command::Report(a) => report_cmd(&mut run, a),
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv: Vec<String> = args
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match dispatch(cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
