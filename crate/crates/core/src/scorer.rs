//! Entailment scoring of (premise, hypothesis) pairs.
//!
//! A backend turns one scoring unit and one query into the probability that
//! the unit entails the query. Neural backends live outside this crate and
//! implement [`EntailmentBackend`]; this module ships the mock backends, the
//! ordered parallel driver [`score_units`], and the score cache format.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::queries::{Query, QueryType};
use crate::segmenter::{ScoringUnit, TokenCounter, WhitespaceTokenizer, MODEL_TOKEN_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliClass {
    Contradiction,
    Neutral,
    Entailment,
}

impl FromStr for NliClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "contradiction" => Ok(NliClass::Contradiction),
            "neutral" => Ok(NliClass::Neutral),
            "entailment" => Ok(NliClass::Entailment),
            other => Err(Error::BackendConfig(format!("unknown NLI class `{other}`"))),
        }
    }
}

/// Which model output index holds which NLI class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<NliClass>", into = "Vec<NliClass>")]
pub struct LabelOrder([NliClass; 3]);

impl LabelOrder {
    pub fn new(order: [NliClass; 3]) -> Result<Self> {
        let distinct: HashSet<_> = order.iter().collect();
        if distinct.len() != 3 {
            return Err(Error::BackendConfig(format!(
                "label order {order:?} is not a permutation of the three NLI classes"
            )));
        }
        Ok(Self(order))
    }

    pub fn index_of(&self, class: NliClass) -> usize {
        self.0
            .iter()
            .position(|&c| c == class)
            .expect("label order is a permutation")
    }

    pub fn classes(&self) -> [NliClass; 3] {
        self.0
    }
}

impl Default for LabelOrder {
    fn default() -> Self {
        Self([
            NliClass::Contradiction,
            NliClass::Neutral,
            NliClass::Entailment,
        ])
    }
}

impl TryFrom<Vec<NliClass>> for LabelOrder {
    type Error = Error;

    fn try_from(v: Vec<NliClass>) -> Result<Self> {
        let arr: [NliClass; 3] = v.try_into().map_err(|v: Vec<NliClass>| {
            Error::BackendConfig(format!("label order needs 3 classes, got {}", v.len()))
        })?;
        Self::new(arr)
    }
}

impl From<LabelOrder> for Vec<NliClass> {
    fn from(o: LabelOrder) -> Self {
        o.0.to_vec()
    }
}

/// How logits become an entailment probability.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Softmax over all three classes, entailment component.
    #[default]
    ThreeWay,
    /// Softmax over the entailment and contradiction logits only.
    EntailmentVsContradiction,
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "three_way" | "3way" | "softmax" => Ok(Normalization::ThreeWay),
            "entailment_vs_contradiction" | "2way" => Ok(Normalization::EntailmentVsContradiction),
            other => Err(Error::BackendConfig(format!("unknown normalization `{other}`"))),
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Entailment probability from raw 3-class logits.
pub fn entailment_probability(
    logits: &[f64; 3],
    order: &LabelOrder,
    normalization: Normalization,
) -> f64 {
    let e = order.index_of(NliClass::Entailment);
    let p = match normalization {
        Normalization::ThreeWay => softmax(logits)[e],
        Normalization::EntailmentVsContradiction => {
            let c = order.index_of(NliClass::Contradiction);
            softmax(&[logits[e], logits[c]])[0]
        }
    };
    p.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub backend_id: String,
    pub model_path: Option<PathBuf>,
    pub label_order: LabelOrder,
    pub max_tokens: usize,
    pub batch_size: usize,
    pub normalization: Normalization,
}

impl BackendConfig {
    pub fn new(backend_id: impl Into<String>) -> Self {
        Self {
            backend_id: backend_id.into(),
            model_path: None,
            label_order: LabelOrder::default(),
            max_tokens: MODEL_TOKEN_LIMIT,
            batch_size: 16,
            normalization: Normalization::ThreeWay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::BackendConfig("batch size must be positive".into()));
        }
        if matches!(self.backend_id.as_str(), "dlm" | "rlm") && self.max_tokens != MODEL_TOKEN_LIMIT
        {
            return Err(Error::BackendConfig(format!(
                "{} requires max_tokens = {MODEL_TOKEN_LIMIT}",
                self.backend_id
            )));
        }
        Ok(())
    }
}

/// A source of entailment probabilities.
pub trait EntailmentBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Token counter matching what the backend consumes.
    fn tokenizer(&self) -> &dyn TokenCounter;

    fn max_tokens(&self) -> usize {
        MODEL_TOKEN_LIMIT
    }

    /// Upper bound on worker lanes used by [`score_units`].
    fn max_parallelism(&self) -> usize {
        1
    }

    fn score_pair(&self, premise: &str, hypothesis: &str) -> Result<f64>;

    /// Probabilities in (contradiction, neutral, entailment) order, when the
    /// backend exposes them.
    fn class_probabilities(&self, _premise: &str, _hypothesis: &str) -> Result<Option<[f64; 3]>> {
        Ok(None)
    }

    fn score_unit(&self, unit: &ScoringUnit, query: &Query) -> Result<f64> {
        self.score_pair(&unit.text, &query.text)
    }
}

/// Rule used by [`MockBackend`].
#[derive(Debug, Clone)]
pub enum MockRule {
    /// 1.0 when the premise contains the marker, else 0.0.
    Marker(String),
    /// Gold label of the parent document for the query's task.
    GoldOracle(HashMap<(String, String), bool>),
    /// Uniform in [0, 1), a pure function of the seed and the unit identity.
    SeededRandom(u64),
}

impl MockRule {
    pub fn marker() -> Self {
        MockRule::Marker("PROTEST_MARKER".into())
    }

    pub fn gold_oracle(corpus: &Corpus) -> Self {
        let mut labels = HashMap::new();
        for doc in corpus.documents() {
            for (task, &label) in &doc.labels {
                labels.insert((doc.doc_id.clone(), task.clone()), label);
            }
        }
        MockRule::GoldOracle(labels)
    }
}

/// Model-free backend for tests and dry runs.
#[derive(Debug, Clone)]
pub struct MockBackend {
    id: String,
    rule: MockRule,
    tokenizer: WhitespaceTokenizer,
    max_tokens: usize,
    parallelism: usize,
}

impl MockBackend {
    pub fn new(rule: MockRule) -> Self {
        let id = match rule {
            MockRule::Marker(_) => "mock-marker",
            MockRule::GoldOracle(_) => "mock-oracle",
            MockRule::SeededRandom(_) => "mock-random",
        };
        Self {
            id: id.into(),
            rule,
            tokenizer: WhitespaceTokenizer::default(),
            max_tokens: MODEL_TOKEN_LIMIT,
            parallelism: rayon::current_num_threads(),
        }
    }

    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn with_parallelism(mut self, lanes: usize) -> Self {
        self.parallelism = lanes.max(1);
        self
    }

    fn check_length(&self, premise: &str, hypothesis: &str) -> Result<()> {
        let tokens = self.tokenizer.count(premise)?
            + self.tokenizer.count(hypothesis)?
            + self.tokenizer.pair_special_tokens();
        if tokens > self.max_tokens {
            return Err(Error::InputTooLong {
                tokens,
                max: self.max_tokens,
            });
        }
        Ok(())
    }
}

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl EntailmentBackend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn tokenizer(&self) -> &dyn TokenCounter {
        &self.tokenizer
    }

    fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    fn max_parallelism(&self) -> usize {
        self.parallelism
    }

    fn score_pair(&self, premise: &str, hypothesis: &str) -> Result<f64> {
        self.check_length(premise, hypothesis)?;
        match &self.rule {
            MockRule::Marker(marker) => Ok(if premise.contains(marker.as_str()) {
                1.0
            } else {
                0.0
            }),
            MockRule::SeededRandom(seed) => {
                let h = fnv1a(&[premise.as_bytes(), hypothesis.as_bytes()]);
                Ok(ChaCha8Rng::seed_from_u64(seed ^ h).random::<f64>())
            }
            MockRule::GoldOracle(_) => Err(Error::Backend {
                backend: self.id.clone(),
                msg: "gold-oracle scoring needs the parent document".into(),
            }),
        }
    }

    fn score_unit(&self, unit: &ScoringUnit, query: &Query) -> Result<f64> {
        match &self.rule {
            MockRule::GoldOracle(labels) => {
                self.check_length(&unit.text, &query.text)?;
                labels
                    .get(&(unit.doc_id.clone(), query.task.clone()))
                    .map(|&l| if l { 1.0 } else { 0.0 })
                    .ok_or_else(|| Error::UnlabeledDocument(unit.doc_id.clone()))
            }
            MockRule::SeededRandom(seed) => {
                self.check_length(&unit.text, &query.text)?;
                let idx = unit.unit_index.to_le_bytes();
                let h = fnv1a(&[
                    unit.doc_id.as_bytes(),
                    &idx,
                    query.task.as_bytes(),
                    query.qtype.as_str().as_bytes(),
                ]);
                Ok(ChaCha8Rng::seed_from_u64(seed ^ h).random::<f64>())
            }
            MockRule::Marker(_) => self.score_pair(&unit.text, &query.text),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitScore {
    pub doc_id: String,
    pub unit_index: usize,
    pub task: String,
    pub qtype: QueryType,
    pub backend_id: String,
    pub probability: f64,
}

impl UnitScore {
    fn key(&self) -> String {
        format!(
            "({}, {}, {}, {}, {})",
            self.doc_id, self.unit_index, self.task, self.qtype, self.backend_id
        )
    }
}

/// Scores `units` against `query`, preserving input order.
///
/// Units are dispatched in batches of `batch_size` across at most
/// `min(lanes, backend.max_parallelism())` worker threads. Every pair is
/// scored independently, so results do not depend on batching.
pub fn score_units(
    units: &[ScoringUnit],
    query: &Query,
    backend: &dyn EntailmentBackend,
    batch_size: usize,
    lanes: usize,
) -> Result<Vec<UnitScore>> {
    if units.is_empty() {
        return Err(Error::EmptyInput("no scoring units"));
    }
    if batch_size == 0 {
        return Err(Error::BackendConfig("batch size must be positive".into()));
    }
    let score_one = |unit: &ScoringUnit| -> Result<UnitScore> {
        let probability = backend.score_unit(unit, query).map_err(|e| Error::Unit {
            doc_id: unit.doc_id.clone(),
            unit_index: unit.unit_index,
            source: Box::new(e),
        })?;
        if !(0.0..=1.0).contains(&probability) {
            return Err(Error::InvalidProbability {
                value: probability,
                context: format!("{} unit {}", unit.doc_id, unit.unit_index),
            });
        }
        Ok(UnitScore {
            doc_id: unit.doc_id.clone(),
            unit_index: unit.unit_index,
            task: query.task.clone(),
            qtype: query.qtype,
            backend_id: backend.id().to_string(),
            probability,
        })
    };
    let threads = lanes.min(backend.max_parallelism()).max(1);
    if threads == 1 {
        return units.iter().map(score_one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Backend {
            backend: backend.id().to_string(),
            msg: e.to_string(),
        })?;
    let batches: Vec<Vec<UnitScore>> = pool.install(|| {
        units
            .par_chunks(batch_size)
            .map(|batch| batch.iter().map(score_one).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(batches.into_iter().flatten().collect())
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    doc_id: String,
    unit_index: usize,
    task: String,
    qtype: QueryType,
    backend_id: String,
    probability: String,
}

/// Writes scores as line-delimited records; probabilities use the shortest
/// decimal that round-trips exactly.
pub fn save_cached(path: &Path, scores: &[UnitScore]) -> Result<()> {
    let mut out = String::new();
    for s in scores {
        let rec = CacheRecord {
            doc_id: s.doc_id.clone(),
            unit_index: s.unit_index,
            task: s.task.clone(),
            qtype: s.qtype,
            backend_id: s.backend_id.clone(),
            probability: format!("{:?}", s.probability),
        };
        out.push_str(&serde_json::to_string(&rec).expect("cache record serializes"));
        out.push('\n');
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_cached(path: &Path) -> Result<Vec<UnitScore>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let display = path.display().to_string();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |msg: String| Error::MalformedRecord {
            path: display.clone(),
            line: i + 1,
            msg,
        };
        let rec: CacheRecord = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let probability: f64 = rec
            .probability
            .trim()
            .parse()
            .map_err(|_| malformed(format!("probability `{}` is not a number", rec.probability)))?;
        if !(0.0..=1.0).contains(&probability) {
            return Err(Error::InvalidProbability {
                value: probability,
                context: format!("{display}:{}", i + 1),
            });
        }
        let score = UnitScore {
            doc_id: rec.doc_id,
            unit_index: rec.unit_index,
            task: rec.task,
            qtype: rec.qtype,
            backend_id: rec.backend_id,
            probability,
        };
        if !seen.insert(score.key()) {
            return Err(Error::DuplicateScore(score.key()));
        }
        out.push(score);
    }
    Ok(out)
}

impl fmt::Display for UnitScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}", self.key(), self.probability)
    }
}
