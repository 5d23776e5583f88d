//! Multi-label pseudo-annotation from two weak sources and their
//! dialectness-routed combination.
//!
//! The binary source is a bank of 18 acceptability scorers. The LLM source
//! prompts a chat-completion endpoint, or replays recorded responses, and
//! parses an 18-key JSON object. [`aggregate`] picks the binary vector at the
//! dialectness extremes and the LLM vector in the closed mid-range.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::acceptability::BinaryDataset;
use crate::cartography::TrainingTrace;
use crate::corpus::{
    aldi_bucket, aldi_is_mid_range, filter_zero_cardinality, CorpusError, Dialect, LabelVector,
    LabeledSample, Provenance, Route, Sample, ALDI_BUCKET_LABELS, NUM_DIALECTS,
};
use crate::io::{id_to_file_stem, sha256_hex, write_atomic};
use crate::plot::{box_plot, BoxStats};
use crate::trainer::{train_binary, Encoder, Model, TrainConfig, TrainError, TrainedModel};

/// Countries in the order the default prompt lists them.
pub const PROMPT_ORDER: [Dialect; NUM_DIALECTS] = {
    use Dialect::*;
    [
        IQ, EG, MA, LY, AE, SA, BH, SY, LB, OM, PS, DZ, JO, TN, KW, YE, SD, QA,
    ]
};

pub const TWEET_PLACEHOLDER: &str = "{tweet}";
pub const DIALECTS_PLACEHOLDER: &str = "{dialects}";

pub const DEFAULT_TEMPLATE: &str = "Instruction: You are a native Arabic speaker and highly qualified linguist with expert-level understanding of regional Arabic dialects.

Given the sentence provided, evaluate its dialectal characteristics independently for each of the following dialects: Iraq, Egypt, Morocco, Libya, UAE, Saudi Arabia, Bahrain, Syria, Lebanon, Oman, Palestine, Algeria, Jordan, Tunisia, Kuwait, Yemen, Sudan, and Qatar.

Return findings in JSON format:
{
  \"Iraq\": 0/1,
  \"Egypt\": 0/1,
  ...
  \"Qatar\": 0/1
}
Input sentence: {tweet}
";

/// Credential for live LLM annotation.
pub const API_KEY_ENV: &str = "DIALECTID_LLM_API_KEY";

pub const DEFAULT_BANK_THRESHOLD: f64 = 0.5;

/// Why an LLM response could not be turned into a label vector.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ResponseError {
    #[error("no JSON object found in response")]
    Unparseable,
    #[error("response is missing keys {0:?}")]
    MissingKeys(Vec<String>),
    #[error("response has unexpected keys {0:?}")]
    ExtraKeys(Vec<String>),
    #[error("value for {key:?} is {value}, expected 0 or 1")]
    NonBinaryValue { key: String, value: String },
}

impl ResponseError {
    pub fn kind(&self) -> &'static str {
        match self {
            ResponseError::Unparseable => "unparseable",
            ResponseError::MissingKeys(_) => "missing-keys",
            ResponseError::ExtraKeys(_) => "extra-keys",
            ResponseError::NonBinaryValue { .. } => "non-binary-value",
        }
    }
}

#[derive(Debug, Error)]
pub enum PseudoLabelError {
    #[error("prompt template lacks the {TWEET_PLACEHOLDER} placeholder")]
    MissingPlaceholder,
    #[error("sample {0:?} has an empty sentence")]
    EmptySentence(String),
    #[error("no trained scorer for {0}")]
    Untrained(Dialect),
    #[error("sample {id:?}: {attempts} attempt(s) failed, last: {last}")]
    RetriesExhausted {
        id: String,
        attempts: usize,
        last: ResponseError,
    },
    #[error("no replay fixture for sample {0:?}")]
    FixtureMissing(String),
    #[error("replay fixture for {id:?} has {available} response(s), attempt {attempt} needs more")]
    FixtureExhausted {
        id: String,
        attempt: usize,
        available: usize,
    },
    #[error("replay fixtures line {line}: {msg}")]
    FixtureFormat { line: usize, msg: String },
    #[error("live mode needs the {API_KEY_ENV} environment variable")]
    MissingCredential,
    #[error("endpoint error: {0}")]
    Network(String),
    #[error("response cache: {0}")]
    Cache(String),
    #[error("loading scorer: {0}")]
    ScorerLoad(String),
    #[error("{0} is required for this label source")]
    SourceUnavailable(&'static str),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl PseudoLabelError {
    /// Failures that come from the external annotation service.
    pub fn is_external(&self) -> bool {
        matches!(
            self,
            PseudoLabelError::RetriesExhausted { .. }
                | PseudoLabelError::MissingCredential
                | PseudoLabelError::Network(_)
        )
    }
}

/// Text to acceptability probability for one dialect.
pub trait AcceptabilityScorer: Send + Sync {
    fn score(&self, text: &str) -> f64;
}

impl<E: Encoder> AcceptabilityScorer for Model<E> {
    fn score(&self, text: &str) -> f64 {
        self.probs_text(text)[0]
    }
}

/// Wraps a closure as a scorer.
pub struct FnScorer<F>(pub F);

impl<F: Fn(&str) -> f64 + Send + Sync> AcceptabilityScorer for FnScorer<F> {
    fn score(&self, text: &str) -> f64 {
        (self.0)(text)
    }
}

/// One acceptability scorer per dialect and a shared decision threshold.
pub struct BinaryClassifierBank {
    scorers: Vec<Option<Box<dyn AcceptabilityScorer>>>,
    pub threshold: f64,
}

impl BinaryClassifierBank {
    pub fn new(threshold: f64) -> Self {
        BinaryClassifierBank {
            scorers: (0..NUM_DIALECTS).map(|_| None).collect(),
            threshold,
        }
    }

    pub fn insert(&mut self, dialect: Dialect, scorer: Box<dyn AcceptabilityScorer>) {
        self.scorers[dialect.index()] = Some(scorer);
    }

    pub fn with(mut self, dialect: Dialect, scorer: impl AcceptabilityScorer + 'static) -> Self {
        self.insert(dialect, Box::new(scorer));
        self
    }

    pub fn missing(&self) -> Vec<Dialect> {
        Dialect::ALL
            .iter()
            .copied()
            .filter(|d| self.scorers[d.index()].is_none())
            .collect()
    }

    pub fn probabilities(&self, text: &str) -> Result<[f64; NUM_DIALECTS], PseudoLabelError> {
        let mut out = [0.0; NUM_DIALECTS];
        for d in Dialect::ALL {
            let s = self.scorers[d.index()]
                .as_ref()
                .ok_or(PseudoLabelError::Untrained(d))?;
            out[d.index()] = s.score(text);
        }
        Ok(out)
    }

    /// Bit per dialect set iff its scorer's probability is at least the
    /// bank threshold.
    pub fn binary_vector(&self, x: &Sample) -> Result<LabelVector, PseudoLabelError> {
        let p = self.probabilities(&x.text)?;
        let mut v = LabelVector::empty();
        for d in Dialect::ALL {
            v.set(d, p[d.index()] >= self.threshold);
        }
        Ok(v)
    }

    /// Loads `dir/<CODE>/` checkpoints saved by the trainer.
    pub fn load_models<E: Encoder + 'static>(
        dir: &Path,
        threshold: f64,
    ) -> Result<Self, PseudoLabelError> {
        let mut bank = BinaryClassifierBank::new(threshold);
        for d in Dialect::ALL {
            let sub = dir.join(d.code());
            if !sub.is_dir() {
                return Err(PseudoLabelError::Untrained(d));
            }
            let trained = TrainedModel::<E>::load(&sub)
                .map_err(|e| PseudoLabelError::ScorerLoad(format!("{}: {e}", sub.display())))?;
            bank.insert(d, Box::new(trained.model));
        }
        Ok(bank)
    }
}

/// Trains one binary scorer per dataset, in parallel; results keep the
/// dataset order.
pub fn train_bank_models<E, F>(
    datasets: &[BinaryDataset],
    make_encoder: F,
    cfg: &TrainConfig,
) -> Result<Vec<(Dialect, Model<E>, TrainingTrace)>, TrainError>
where
    E: Encoder,
    F: Fn(Dialect) -> E + Sync,
{
    datasets
        .par_iter()
        .map(|ds| {
            let (model, trace) = train_binary(ds, make_encoder(ds.dialect), cfg)?;
            Ok((ds.dialect, model, trace))
        })
        .collect()
}

impl BinaryClassifierBank {
    pub fn from_models<E: Encoder + 'static>(
        models: Vec<(Dialect, Model<E>)>,
        threshold: f64,
    ) -> Self {
        let mut bank = BinaryClassifierBank::new(threshold);
        for (d, m) in models {
            bank.insert(d, Box::new(m));
        }
        bank
    }
}

pub fn prompt_dialect_list() -> String {
    PROMPT_ORDER
        .iter()
        .map(|d| d.country_name())
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn validate_template(template: &str) -> Result<(), PseudoLabelError> {
    if template.contains(TWEET_PLACEHOLDER) {
        Ok(())
    } else {
        Err(PseudoLabelError::MissingPlaceholder)
    }
}

/// Substitutes the sentence, and the country list if the template asks
/// for one.
pub fn render_prompt(x: &Sample, template: &str) -> Result<String, PseudoLabelError> {
    validate_template(template)?;
    if x.text.trim().is_empty() {
        return Err(PseudoLabelError::EmptySentence(x.id.clone()));
    }
    Ok(template
        .replace(DIALECTS_PLACEHOLDER, &prompt_dialect_list())
        .replace(TWEET_PLACEHOLDER, &x.text))
}

fn first_json_object(raw: &str) -> Option<serde_json::Map<String, Value>> {
    for (i, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Some(map);
        }
    }
    None
}

/// Reads an 18-key country-name object out of a model response. Prose and
/// code fences around the object are ignored.
pub fn parse_llm_response(raw: &str) -> Result<LabelVector, ResponseError> {
    let map = first_json_object(raw).ok_or(ResponseError::Unparseable)?;
    let missing: Vec<String> = PROMPT_ORDER
        .iter()
        .map(|d| d.country_name())
        .filter(|n| !map.contains_key(*n))
        .map(String::from)
        .collect();
    if !missing.is_empty() {
        return Err(ResponseError::MissingKeys(missing));
    }
    let extra: Vec<String> = map
        .keys()
        .filter(|k| Dialect::from_country_name(k).is_none())
        .cloned()
        .collect();
    if !extra.is_empty() {
        return Err(ResponseError::ExtraKeys(extra));
    }
    let mut v = LabelVector::empty();
    for d in PROMPT_ORDER {
        let value = &map[d.country_name()];
        match value.as_u64() {
            Some(0) => {}
            Some(1) => v.set(d, true),
            _ => {
                return Err(ResponseError::NonBinaryValue {
                    key: d.country_name().to_string(),
                    value: value.to_string(),
                })
            }
        }
    }
    Ok(v)
}

/// The JSON object [`parse_llm_response`] accepts for `v`.
pub fn serialize_llm_response(v: LabelVector) -> String {
    let body: Vec<String> = PROMPT_ORDER
        .iter()
        .map(|d| format!("  \"{}\": {}", d.country_name(), v.get(*d) as u8))
        .collect();
    format!("{{\n{}\n}}", body.join(",\n"))
}

/// A chat-completion endpoint.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, PseudoLabelError>;
}

/// OpenAI-style `chat/completions` over HTTP.
pub struct HttpBackend {
    endpoint: String,
    model: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(
        endpoint: &str,
        model: &str,
        api_key: String,
        timeout: Duration,
    ) -> Result<Self, PseudoLabelError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| PseudoLabelError::Network(e.to_string()))?;
        Ok(HttpBackend {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key,
            client,
        })
    }

    /// Reads the key from [`API_KEY_ENV`].
    pub fn from_env(
        endpoint: &str,
        model: &str,
        timeout: Duration,
    ) -> Result<Self, PseudoLabelError> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or(PseudoLabelError::MissingCredential)?;
        Self::new(endpoint, model, key, timeout)
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, prompt: &str) -> Result<String, PseudoLabelError> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string())
            .send()
            .map_err(|e| PseudoLabelError::Network(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| PseudoLabelError::Network(e.to_string()))?;
        if !status.is_success() {
            return Err(PseudoLabelError::Network(format!("HTTP {status}: {text}")));
        }
        let v: Value =
            serde_json::from_str(&text).map_err(|e| PseudoLabelError::Network(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(String::from)
            .ok_or_else(|| {
                PseudoLabelError::Network("response has no choices[0].message.content".into())
            })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FixtureLine {
    id: String,
    responses: Vec<String>,
}

/// Recorded raw responses per sample id, consumed one per attempt.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayFixtures {
    responses: HashMap<String, Vec<String>>,
}

impl ReplayFixtures {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, responses: Vec<String>) {
        self.responses.insert(id.into(), responses);
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn response(&self, id: &str, attempt: usize) -> Result<&str, PseudoLabelError> {
        let list = self
            .responses
            .get(id)
            .ok_or_else(|| PseudoLabelError::FixtureMissing(id.to_string()))?;
        list.get(attempt)
            .map(String::as_str)
            .ok_or_else(|| PseudoLabelError::FixtureExhausted {
                id: id.to_string(),
                attempt: attempt + 1,
                available: list.len(),
            })
    }

    /// JSONL, one `{"id": ..., "responses": [...]}` per line, sorted by id.
    pub fn to_jsonl(&self) -> String {
        let sorted: BTreeMap<&String, &Vec<String>> = self.responses.iter().collect();
        let mut out = String::new();
        for (id, responses) in sorted {
            let line = FixtureLine {
                id: id.clone(),
                responses: responses.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("fixture serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, PseudoLabelError> {
        let mut out = ReplayFixtures::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: FixtureLine =
                serde_json::from_str(line).map_err(|e| PseudoLabelError::FixtureFormat {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            if out.responses.insert(f.id.clone(), f.responses).is_some() {
                return Err(PseudoLabelError::FixtureFormat {
                    line: i + 1,
                    msg: format!("duplicate id {:?}", f.id),
                });
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self, PseudoLabelError> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), PseudoLabelError> {
        write_atomic(path, self.to_jsonl().as_bytes())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheEntry {
    id: String,
    template_sha256: String,
    labels: LabelVector,
    response: String,
}

/// Parsed responses on disk, one JSON file per sample id.
pub struct ResponseCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn open(dir: &Path) -> Result<Self, PseudoLabelError> {
        fs::create_dir_all(dir)?;
        Ok(ResponseCache {
            dir: dir.to_path_buf(),
            write_lock: Mutex::new(()),
        })
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{}.json", id_to_file_stem(id)))
    }

    /// A hit requires the same id and the same template hash.
    pub fn get(
        &self,
        id: &str,
        template_sha256: &str,
    ) -> Result<Option<LabelVector>, PseudoLabelError> {
        let path = self.path(id);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let entry: CacheEntry = serde_json::from_slice(&bytes)
            .map_err(|e| PseudoLabelError::Cache(format!("{}: {e}", path.display())))?;
        Ok((entry.id == id && entry.template_sha256 == template_sha256).then_some(entry.labels))
    }

    pub fn put(
        &self,
        id: &str,
        template_sha256: &str,
        labels: LabelVector,
        response: &str,
    ) -> Result<(), PseudoLabelError> {
        let entry = CacheEntry {
            id: id.to_string(),
            template_sha256: template_sha256.to_string(),
            labels,
            response: response.to_string(),
        };
        let bytes = serde_json::to_vec_pretty(&entry).expect("cache entry serializes");
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        write_atomic(&self.path(id), &bytes)?;
        Ok(())
    }
}

pub enum ClientMode {
    /// Only constructed on explicit request; the backend does the network I/O.
    Live(Box<dyn ChatBackend>),
    Replay(ReplayFixtures),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClientStats {
    pub endpoint_calls: usize,
    pub retries: usize,
    pub cache_hits: usize,
}

/// Prompts, parses, retries and caches LLM annotations.
pub struct LlmAnnotationClient {
    mode: ClientMode,
    template: String,
    template_sha256: String,
    retries: usize,
    max_inflight: usize,
    cache: Option<ResponseCache>,
    calls: AtomicUsize,
    retried: AtomicUsize,
    hits: AtomicUsize,
}

impl LlmAnnotationClient {
    pub fn new(mode: ClientMode, template: &str) -> Result<Self, PseudoLabelError> {
        validate_template(template)?;
        Ok(LlmAnnotationClient {
            mode,
            template: template.to_string(),
            template_sha256: sha256_hex(template.as_bytes()),
            retries: 2,
            max_inflight: 4,
            cache: None,
            calls: AtomicUsize::new(0),
            retried: AtomicUsize::new(0),
            hits: AtomicUsize::new(0),
        })
    }

    pub fn replay(fixtures: ReplayFixtures) -> Self {
        Self::new(ClientMode::Replay(fixtures), DEFAULT_TEMPLATE)
            .expect("default template is valid")
    }

    /// Number of retries after the first attempt.
    pub fn with_retries(mut self, retries: usize) -> Self {
        self.retries = retries;
        self
    }

    pub fn with_max_inflight(mut self, k: usize) -> Self {
        self.max_inflight = k.max(1);
        self
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn is_live(&self) -> bool {
        matches!(self.mode, ClientMode::Live(_))
    }

    pub fn template_sha256(&self) -> &str {
        &self.template_sha256
    }

    pub fn retries(&self) -> usize {
        self.retries
    }

    pub fn max_inflight(&self) -> usize {
        self.max_inflight
    }

    pub fn stats(&self) -> ClientStats {
        ClientStats {
            endpoint_calls: self.calls.load(Ordering::SeqCst),
            retries: self.retried.load(Ordering::SeqCst),
            cache_hits: self.hits.load(Ordering::SeqCst),
        }
    }

    fn fetch(&self, id: &str, prompt: &str, attempt: usize) -> Result<String, PseudoLabelError> {
        match &self.mode {
            ClientMode::Replay(f) => f.response(id, attempt).map(String::from),
            ClientMode::Live(backend) => {
                self.calls.fetch_add(1, Ordering::SeqCst);
                backend.complete(prompt)
            }
        }
    }

    /// One sample's LLM label vector.
    pub fn gpt_vector(&self, x: &Sample) -> Result<LabelVector, PseudoLabelError> {
        if let Some(cache) = &self.cache {
            if let Some(v) = cache.get(&x.id, &self.template_sha256)? {
                self.hits.fetch_add(1, Ordering::SeqCst);
                return Ok(v);
            }
        }
        let prompt = render_prompt(x, &self.template)?;
        let mut last = ResponseError::Unparseable;
        for attempt in 0..=self.retries {
            if attempt > 0 {
                self.retried.fetch_add(1, Ordering::SeqCst);
            }
            let raw = self.fetch(&x.id, &prompt, attempt)?;
            match parse_llm_response(&raw) {
                Ok(v) => {
                    if let Some(cache) = &self.cache {
                        cache.put(&x.id, &self.template_sha256, v, &raw)?;
                    }
                    return Ok(v);
                }
                Err(e) => {
                    log::debug!("sample {:?} attempt {}: {e}", x.id, attempt + 1);
                    last = e;
                }
            }
        }
        Err(PseudoLabelError::RetriesExhausted {
            id: x.id.clone(),
            attempts: self.retries + 1,
            last,
        })
    }

    /// Annotates every sample with at most `max_inflight` concurrent
    /// requests. Results come back in input order.
    pub fn gpt_vectors(&self, samples: &[&Sample]) -> Vec<Result<LabelVector, PseudoLabelError>> {
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<LabelVector, PseudoLabelError>>>> =
            Mutex::new((0..samples.len()).map(|_| None).collect());
        let workers = self.max_inflight.min(samples.len()).max(1);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= samples.len() {
                        break;
                    }
                    let r = self.gpt_vector(samples[i]);
                    results.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(r);
                });
            }
        });
        results
            .into_inner()
            .unwrap_or_else(|p| p.into_inner())
            .into_iter()
            .map(|r| r.expect("every index is filled"))
            .collect()
    }
}

/// The source the routing rule selects for a dialectness score.
pub fn route(aldi: f64) -> Route {
    if aldi_is_mid_range(aldi) {
        Route::Gpt
    } else {
        Route::BinaryClassifiers
    }
}

pub fn aggregate(aldi: f64, bin: LabelVector, gpt: LabelVector) -> (LabelVector, Route) {
    match route(aldi) {
        Route::BinaryClassifiers => (bin, Route::BinaryClassifiers),
        Route::Gpt => (gpt, Route::Gpt),
    }
}

/// Like [`aggregate`], but only the routed source is evaluated.
pub fn aggregate_lazy<E: From<CorpusError>>(
    x: &Sample,
    bin: impl FnOnce() -> Result<LabelVector, E>,
    gpt: impl FnOnce() -> Result<LabelVector, E>,
) -> Result<LabeledSample, E> {
    let aldi = x.require_aldi()?;
    let r = route(aldi);
    let v = match r {
        Route::BinaryClassifiers => bin()?,
        Route::Gpt => gpt()?,
    };
    Ok(LabeledSample::routed(x.clone(), v, r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    Binary,
    Gpt,
    Hybrid,
}

impl std::str::FromStr for LabelSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(LabelSource::Binary),
            "gpt" => Ok(LabelSource::Gpt),
            "hybrid" => Ok(LabelSource::Hybrid),
            _ => Err(format!(
                "unknown label source {s:?}; use binary, gpt or hybrid"
            )),
        }
    }
}

/// Pseudo-labelled samples with zero-cardinality results removed.
#[derive(Debug, Clone, Default)]
pub struct PseudoLabeled {
    pub samples: Vec<LabeledSample>,
    pub dropped: usize,
    pub routed_binary: usize,
    pub routed_gpt: usize,
}

fn finish(labeled: Vec<LabeledSample>) -> PseudoLabeled {
    let routed_binary = labeled
        .iter()
        .filter(|s| s.route() == Some(Route::BinaryClassifiers))
        .count();
    let routed_gpt = labeled
        .iter()
        .filter(|s| s.route() == Some(Route::Gpt))
        .count();
    let (samples, dropped) = filter_zero_cardinality(labeled);
    PseudoLabeled {
        samples,
        dropped,
        routed_binary,
        routed_gpt,
    }
}

/// Routes every sample, queries only the selected source, and drops
/// zero-cardinality results.
pub fn build_hybrid_dataset(
    corpus: &[Sample],
    bank: &BinaryClassifierBank,
    client: &LlmAnnotationClient,
) -> Result<PseudoLabeled, PseudoLabelError> {
    let routes: Vec<Route> = corpus
        .iter()
        .map(|s| s.require_aldi().map(route))
        .collect::<Result<_, _>>()?;
    let gpt_idx: Vec<usize> = (0..corpus.len())
        .filter(|&i| routes[i] == Route::Gpt)
        .collect();
    let gpt_samples: Vec<&Sample> = gpt_idx.iter().map(|&i| &corpus[i]).collect();
    let mut gpt_out: HashMap<usize, LabelVector> = HashMap::new();
    for (i, r) in gpt_idx.iter().zip(client.gpt_vectors(&gpt_samples)) {
        gpt_out.insert(*i, r?);
    }
    let labeled: Vec<LabeledSample> = corpus
        .par_iter()
        .enumerate()
        .map(|(i, s)| aggregate_lazy(s, || bank.binary_vector(s), || Ok(gpt_out[&i])))
        .collect::<Result<_, PseudoLabelError>>()?;
    Ok(finish(labeled))
}

/// Labels every sample from a single source.
pub fn build_single_source_dataset(
    corpus: &[Sample],
    source: LabelSource,
    bank: Option<&BinaryClassifierBank>,
    client: Option<&LlmAnnotationClient>,
) -> Result<PseudoLabeled, PseudoLabelError> {
    let labeled: Vec<LabeledSample> = match (source, bank, client) {
        (LabelSource::Binary, Some(bank), _) => corpus
            .par_iter()
            .map(|s| {
                Ok(LabeledSample::new(
                    s.clone(),
                    bank.binary_vector(s)?,
                    Provenance::BinaryClassifiers,
                ))
            })
            .collect::<Result<_, PseudoLabelError>>()?,
        (LabelSource::Gpt, _, Some(client)) => {
            let refs: Vec<&Sample> = corpus.iter().collect();
            corpus
                .iter()
                .zip(client.gpt_vectors(&refs))
                .map(|(s, r)| Ok(LabeledSample::new(s.clone(), r?, Provenance::Gpt)))
                .collect::<Result<_, PseudoLabelError>>()?
        }
        (LabelSource::Hybrid, Some(bank), Some(client)) => {
            return build_hybrid_dataset(corpus, bank, client)
        }
        (LabelSource::Gpt, _, None) | (LabelSource::Hybrid, _, None) => {
            return Err(PseudoLabelError::SourceUnavailable("an LLM client"))
        }
        (_, None, _) => {
            return Err(PseudoLabelError::SourceUnavailable(
                "a binary classifier bank",
            ))
        }
    };
    Ok(finish(labeled))
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn five_number_summary(values: &[f64]) -> Option<BoxStats> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(BoxStats {
        min: v[0],
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        max: v[v.len() - 1],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CardinalityBucket {
    pub label: &'static str,
    pub count: usize,
    pub stats: Option<BoxStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CardinalityReport {
    pub buckets: Vec<CardinalityBucket>,
}

/// Label-cardinality distribution per dialectness bucket.
pub fn cardinality_by_aldi_report(
    dataset: &[LabeledSample],
) -> Result<CardinalityReport, PseudoLabelError> {
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); ALDI_BUCKET_LABELS.len()];
    for s in dataset {
        let a = s.sample.require_aldi()?;
        groups[aldi_bucket(a)].push(s.cardinality() as f64);
    }
    Ok(CardinalityReport {
        buckets: ALDI_BUCKET_LABELS
            .iter()
            .zip(groups)
            .map(|(label, g)| CardinalityBucket {
                label,
                count: g.len(),
                stats: five_number_summary(&g),
            })
            .collect(),
    })
}

impl CardinalityReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("aldi_bucket\tcount\tmin\tq1\tmedian\tq3\tmax\n");
        for b in &self.buckets {
            match b.stats {
                Some(s) => out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                    b.label, b.count, s.min, s.q1, s.median, s.q3, s.max
                )),
                None => out.push_str(&format!("{}\t0\t\t\t\t\t\n", b.label)),
            }
        }
        out
    }

    pub fn to_svg(&self, title: &str) -> String {
        let boxes: Vec<(String, Option<BoxStats>)> = self
            .buckets
            .iter()
            .map(|b| (format!("{} n={}", b.label, b.count), b.stats))
            .collect();
        box_plot(title, "label cardinality", &boxes, NUM_DIALECTS as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Dialect::*;

    fn vec_of(ds: &[Dialect]) -> LabelVector {
        LabelVector::from_dialects(ds.iter().copied())
    }

    #[test]
    fn prompt_rendering() {
        let p = render_prompt(&Sample::new("a", "abc"), DEFAULT_TEMPLATE).unwrap();
        assert!(p.contains("Input sentence: abc"));
        assert!(p.contains(&format!(
            "{}, and Qatar.",
            prompt_dialect_list().trim_end_matches(", Qatar")
        )));
        assert!(matches!(
            render_prompt(&Sample::new("a", "  "), DEFAULT_TEMPLATE),
            Err(PseudoLabelError::EmptySentence(_))
        ));
        assert!(matches!(
            render_prompt(&Sample::new("a", "abc"), "no slot"),
            Err(PseudoLabelError::MissingPlaceholder)
        ));
        let custom = render_prompt(&Sample::new("a", "s"), "{dialects} | {tweet}").unwrap();
        assert!(custom.starts_with("Iraq, Egypt, Morocco") && custom.ends_with("Qatar | s"));
    }

    #[test]
    fn response_parsing() {
        let v = vec_of(&[EG, SD]);
        let raw = format!(
            "Sure! Here you go:\n```json\n{}\n```\nHope that helps {{}}",
            serialize_llm_response(v)
        );
        assert_eq!(parse_llm_response(&raw).unwrap(), v);

        let mut map: serde_json::Map<String, Value> =
            serde_json::from_str(&serialize_llm_response(v)).unwrap();
        map.remove("Qatar");
        let e = parse_llm_response(&Value::Object(map.clone()).to_string()).unwrap_err();
        assert_eq!(e, ResponseError::MissingKeys(vec!["Qatar".into()]));
        map.insert("Qatar".into(), Value::from(0));
        map.insert("Egypt".into(), Value::from(2));
        let e = parse_llm_response(&Value::Object(map.clone()).to_string()).unwrap_err();
        assert_eq!(e.kind(), "non-binary-value");
        map.insert("Egypt".into(), Value::from(1));
        map.insert("Mars".into(), Value::from(1));
        assert_eq!(
            parse_llm_response(&Value::Object(map).to_string()).unwrap_err(),
            ResponseError::ExtraKeys(vec!["Mars".into()])
        );
        assert_eq!(
            parse_llm_response("nothing here").unwrap_err(),
            ResponseError::Unparseable
        );
    }

    #[test]
    fn bank_thresholding() {
        let mut bank = BinaryClassifierBank::new(0.5);
        for d in Dialect::ALL {
            let p = match d {
                EG => 0.9,
                SD => 0.6,
                _ => 0.1,
            };
            bank.insert(d, Box::new(FnScorer(move |_: &str| p)));
        }
        assert_eq!(
            bank.binary_vector(&Sample::new("x", "t")).unwrap(),
            vec_of(&[EG, SD])
        );
        let partial = BinaryClassifierBank::new(0.5).with(EG, FnScorer(|_: &str| 1.0));
        assert!(matches!(
            partial.binary_vector(&Sample::new("x", "t")),
            Err(PseudoLabelError::Untrained(AE))
        ));
    }

    #[test]
    fn routing() {
        assert_eq!(route(0.05), Route::BinaryClassifiers);
        assert_eq!(route(0.5), Route::Gpt);
        assert_eq!(route(0.9), Route::BinaryClassifiers);
        assert_eq!(route(1.0 / 9.0), Route::Gpt);
        assert_eq!(route(7.0 / 9.0), Route::Gpt);
        let (b, g) = (vec_of(&[EG]), vec_of(&[MA]));
        assert_eq!(aggregate(0.05, b, g), (b, Route::BinaryClassifiers));
        assert_eq!(aggregate(0.5, b, g), (g, Route::Gpt));
    }

    #[test]
    fn lazy_aggregate_skips_unrouted_source() {
        let s = Sample::new("x", "t").with_aldi(0.05);
        let r: Result<LabeledSample, PseudoLabelError> = aggregate_lazy(
            &s,
            || Ok(vec_of(&[EG])),
            || panic!("gpt must not be called"),
        );
        assert_eq!(r.unwrap().route(), Some(Route::BinaryClassifiers));
        let missing: Result<LabeledSample, PseudoLabelError> = aggregate_lazy(
            &Sample::new("y", "t"),
            || Ok(LabelVector::empty()),
            || Ok(LabelVector::empty()),
        );
        assert!(matches!(
            missing,
            Err(PseudoLabelError::Corpus(CorpusError::MissingAldi(_)))
        ));
    }

    #[test]
    fn replay_retry_and_cache() {
        let mut f = ReplayFixtures::new();
        f.insert(
            "a",
            vec!["garbage".into(), serialize_llm_response(vec_of(&[EG]))],
        );
        f.insert("b", vec!["{}".into()]);
        let dir = tempfile::tempdir().unwrap();
        let client = LlmAnnotationClient::replay(f.clone())
            .with_retries(1)
            .with_cache(ResponseCache::open(dir.path()).unwrap());
        assert_eq!(
            client.gpt_vector(&Sample::new("a", "t")).unwrap(),
            vec_of(&[EG])
        );
        assert_eq!(client.stats().retries, 1);
        assert!(matches!(
            client.gpt_vector(&Sample::new("b", "t")),
            Err(PseudoLabelError::FixtureExhausted { .. })
        ));
        assert!(matches!(
            client.gpt_vector(&Sample::new("c", "t")),
            Err(PseudoLabelError::FixtureMissing(_))
        ));
        client.gpt_vector(&Sample::new("a", "t")).unwrap();
        assert_eq!(client.stats().cache_hits, 1);
        assert_eq!(client.stats().endpoint_calls, 0);
        assert_eq!(ReplayFixtures::from_jsonl(&f.to_jsonl()).unwrap(), f);
    }

    #[test]
    fn cache_is_keyed_on_template() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        cache.put("id/1", "h1", vec_of(&[EG]), "{}").unwrap();
        assert_eq!(cache.get("id/1", "h1").unwrap(), Some(vec_of(&[EG])));
        assert_eq!(cache.get("id/1", "h2").unwrap(), None);
        assert_eq!(cache.get("id/2", "h1").unwrap(), None);
    }

    #[test]
    fn cardinality_report() {
        let mk = |id: &str, aldi: f64, n: usize| {
            LabeledSample::new(
                Sample::new(id, id).with_aldi(aldi),
                LabelVector::from_dialects(Dialect::ALL.iter().copied().take(n)),
                Provenance::Hybrid,
            )
        };
        let ds = vec![
            mk("a", 0.0, 17),
            mk("b", 0.05, 18),
            mk("c", 0.9, 1),
            mk("d", 0.95, 2),
        ];
        let r = cardinality_by_aldi_report(&ds).unwrap();
        assert_eq!(r.buckets[0].stats.unwrap().median, 17.5);
        assert_eq!(r.buckets[1].count, 0);
        assert_eq!(r.buckets[3].stats.unwrap().max, 2.0);
        assert!(r.to_tsv().contains("[1/9,0.44)\t0"));
        assert!(r.to_svg("t").starts_with("<svg"));
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.25), 1.75);
    }
}
