//! Labeled document collections.
//!
//! Every dataset is normalized into [`Document`] records and validated by a
//! single path ([`Corpus::from_documents`]). Two adapters read the public
//! release layouts of the India Police Events and ProtestNews datasets; the
//! generic adapter reads line-delimited JSON records:
//!
//! ```text
//! {"doc_id": "a", "text": "...", "sentences": ["...", "..."], "labels": {"protest": true}}
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const INDIA_POLICE: &str = "india_police";
pub const PROTEST_NEWS: &str = "protestnews";

pub const INDIA_TASKS: [&str; 5] = ["kill", "arrest", "fail", "force", "any_action"];
pub const PROTEST_TASKS: [&str; 1] = ["protest"];

pub const INDIA_DOCUMENTS: usize = 1_257;
pub const INDIA_SENTENCES: usize = 21_391;
pub const PROTEST_ENGLISH_DOCUMENTS: usize = 9_327;

/// Published positive counts and fractions for the India Police Events release.
pub const INDIA_EXPECTED: [(&str, usize, f64); 5] = [
    ("kill", 50, 0.0398),
    ("arrest", 128, 0.1017),
    ("fail", 114, 0.0905),
    ("force", 90, 0.0715),
    ("any_action", 457, 0.3624),
];

/// Published positives for the full English ProtestNews document set.
pub const PROTEST_EXPECTED: (usize, f64) = (1_912, 0.2051);

/// Published fractions are given to two percentage-point decimals and do not
/// all agree with `count / 1257`; fraction checks allow this much slack.
pub const FRACTION_TOLERANCE: f64 = 0.002;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentences: Option<Vec<String>>,
    pub labels: BTreeMap<String, bool>,
}

impl Document {
    pub fn label(&self, task: &str) -> Option<bool> {
        self.labels.get(task).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedStat {
    pub positives: usize,
    pub fraction: f64,
}

/// An immutable, validated document collection.
#[derive(Debug, Clone)]
pub struct Corpus {
    name: String,
    tasks: Vec<String>,
    documents: Vec<Document>,
    expected_stats: Option<BTreeMap<String, ExpectedStat>>,
    index: HashMap<String, usize>,
}

impl Corpus {
    /// Validates documents against the task list and builds the corpus.
    pub fn from_documents(
        name: impl Into<String>,
        tasks: Vec<String>,
        documents: Vec<Document>,
    ) -> Result<Self> {
        let name = name.into();
        if tasks.is_empty() {
            return Err(Error::NoTasks(name));
        }
        if documents.is_empty() {
            return Err(Error::EmptyCorpus(name));
        }
        let mut index = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if index.insert(doc.doc_id.clone(), i).is_some() {
                return Err(Error::DuplicateDocId(doc.doc_id.clone()));
            }
            for task in &tasks {
                if !doc.labels.contains_key(task) {
                    return Err(Error::MissingLabel {
                        doc_id: doc.doc_id.clone(),
                        task: task.clone(),
                    });
                }
            }
        }
        Ok(Self {
            name,
            tasks,
            documents,
            expected_stats: None,
            index,
        })
    }

    pub fn with_expected_stats(mut self, stats: BTreeMap<String, ExpectedStat>) -> Self {
        self.expected_stats = Some(stats);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tasks(&self) -> &[String] {
        &self.tasks
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn expected_stats(&self) -> Option<&BTreeMap<String, ExpectedStat>> {
        self.expected_stats.as_ref()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.index.get(doc_id).map(|&i| &self.documents[i])
    }

    pub fn has_task(&self, task: &str) -> bool {
        self.tasks.iter().any(|t| t == task)
    }

    /// Gold labels for one task keyed by doc_id.
    pub fn labels_for(&self, task: &str) -> HashMap<String, bool> {
        self.documents
            .iter()
            .filter_map(|d| d.label(task).map(|l| (d.doc_id.clone(), l)))
            .collect()
    }

    /// Writes the corpus in the generic line-delimited format.
    pub fn write_generic(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for doc in &self.documents {
            out.push_str(&serde_json::to_string(doc).expect("document serializes"));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskLabelSummary {
    pub task: String,
    pub positives: usize,
    pub total: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatMismatch {
    pub task: String,
    pub expected: ExpectedStat,
    pub observed_positives: usize,
    pub observed_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub documents: usize,
    /// Sum of dataset-provided sentence counts.
    pub sentences: usize,
    /// Documents that carry no dataset-provided segmentation.
    pub unsegmented_documents: usize,
    pub tasks: Vec<TaskLabelSummary>,
    pub mismatches: Vec<StatMismatch>,
}

impl CorpusStats {
    pub fn task(&self, task: &str) -> Option<&TaskLabelSummary> {
        self.tasks.iter().find(|s| s.task == task)
    }
}

/// Per-task positive counts, flagged against expected stats when present.
pub fn verify_stats(corpus: &Corpus) -> CorpusStats {
    let total = corpus.len();
    let tasks: Vec<TaskLabelSummary> = corpus
        .tasks()
        .iter()
        .map(|task| {
            let positives = corpus
                .documents()
                .iter()
                .filter(|d| d.label(task) == Some(true))
                .count();
            TaskLabelSummary {
                task: task.clone(),
                positives,
                total,
                fraction: positives as f64 / total as f64,
            }
        })
        .collect();

    let mut mismatches = Vec::new();
    if let Some(expected) = corpus.expected_stats() {
        for summary in &tasks {
            if let Some(exp) = expected.get(&summary.task) {
                if exp.positives != summary.positives
                    || (exp.fraction - summary.fraction).abs() > FRACTION_TOLERANCE
                {
                    mismatches.push(StatMismatch {
                        task: summary.task.clone(),
                        expected: *exp,
                        observed_positives: summary.positives,
                        observed_fraction: summary.fraction,
                    });
                }
            }
        }
    }

    let sentences = corpus
        .documents()
        .iter()
        .filter_map(|d| d.sentences.as_ref().map(Vec::len))
        .sum();
    let unsegmented_documents = corpus
        .documents()
        .iter()
        .filter(|d| d.sentences.is_none())
        .count();

    CorpusStats {
        documents: total,
        sentences,
        unsegmented_documents,
        tasks,
        mismatches,
    }
}

/// Field names of the generic line-delimited format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FormatConfig {
    pub id_field: String,
    pub text_field: String,
    pub sentences_field: String,
    pub labels_field: String,
    /// Task list; when absent, the label keys of the first record are used.
    pub tasks: Option<Vec<String>>,
    pub name: Option<String>,
}

impl Default for FormatConfig {
    fn default() -> Self {
        Self {
            id_field: "doc_id".into(),
            text_field: "text".into(),
            sentences_field: "sentences".into(),
            labels_field: "labels".into(),
            tasks: None,
            name: None,
        }
    }
}

struct JsonLine {
    line: usize,
    value: serde_json::Map<String, Value>,
}

fn read_json_lines(path: &Path) -> Result<Vec<JsonLine>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let display = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            path: display.clone(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        match value {
            Value::Object(map) => out.push(JsonLine {
                line: i + 1,
                value: map,
            }),
            _ => {
                return Err(Error::MalformedRecord {
                    path: display.clone(),
                    line: i + 1,
                    msg: "record is not a JSON object".into(),
                })
            }
        }
    }
    Ok(out)
}

fn string_field(rec: &JsonLine, field: &str, path: &str) -> Result<String> {
    match rec.value.get(field) {
        None | Some(Value::Null) => Err(Error::MissingField {
            path: path.into(),
            line: rec.line,
            field: field.into(),
        }),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(other) => Err(Error::MalformedRecord {
            path: path.into(),
            line: rec.line,
            msg: format!("field `{field}` must be a string, got {other}"),
        }),
    }
}

/// Interprets the label encodings used by the public releases.
fn label_value(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::Number(n) => n.as_f64().map(|x| x != 0.0),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "1" | "true" | "yes" | "y" => Some(true),
            "0" | "false" | "no" | "n" | "" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

/// Reads the generic line-delimited corpus format.
pub fn ingest_generic(path: &Path, config: &FormatConfig) -> Result<Corpus> {
    let display = path.display().to_string();
    let records = read_json_lines(path)?;
    let mut tasks = config.tasks.clone();
    let mut documents = Vec::with_capacity(records.len());
    for rec in &records {
        let doc_id = string_field(rec, &config.id_field, &display)?;
        let text = string_field(rec, &config.text_field, &display)?;
        let sentences = match rec.value.get(&config.sentences_field) {
            None | Some(Value::Null) => None,
            Some(Value::Array(items)) => Some(
                items
                    .iter()
                    .map(|v| match v {
                        Value::String(s) => Ok(s.clone()),
                        other => Err(Error::MalformedRecord {
                            path: display.clone(),
                            line: rec.line,
                            msg: format!("sentence must be a string, got {other}"),
                        }),
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            Some(other) => {
                return Err(Error::MalformedRecord {
                    path: display.clone(),
                    line: rec.line,
                    msg: format!("`{}` must be an array, got {other}", config.sentences_field),
                })
            }
        };
        let labels = match rec.value.get(&config.labels_field) {
            None | Some(Value::Null) => {
                return Err(Error::MissingField {
                    path: display.clone(),
                    line: rec.line,
                    field: config.labels_field.clone(),
                })
            }
            Some(Value::Object(map)) => map
                .iter()
                .map(|(k, v)| {
                    label_value(v).map(|b| (k.clone(), b)).ok_or_else(|| {
                        Error::MalformedRecord {
                            path: display.clone(),
                            line: rec.line,
                            msg: format!("label `{k}` is not boolean: {v}"),
                        }
                    })
                })
                .collect::<Result<BTreeMap<_, _>>>()?,
            Some(other) => {
                return Err(Error::MalformedRecord {
                    path: display.clone(),
                    line: rec.line,
                    msg: format!("`{}` must be an object, got {other}", config.labels_field),
                })
            }
        };
        if tasks.is_none() {
            tasks = Some(labels.keys().cloned().collect());
        }
        documents.push(Document {
            doc_id,
            text,
            sentences,
            labels,
        });
    }
    let name = config.name.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "corpus".into())
    });
    Corpus::from_documents(name, tasks.unwrap_or_default(), documents)
}

/// Field layout of the India Police Events release.
///
/// Sentences are read from a line-delimited sentence file; each record
/// carries its parent document id, a sentence id, the sentence text and the
/// five task labels (either nested under one object or as top-level keys).
/// An optional document file supplies article text and is used to detect
/// sentences pointing at unknown documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndiaLayout {
    pub sentence_file: String,
    pub document_file: String,
    pub doc_id_field: String,
    pub sent_id_field: String,
    pub sentence_text_fields: Vec<String>,
    pub document_text_fields: Vec<String>,
    pub label_object_fields: Vec<String>,
}

impl Default for IndiaLayout {
    fn default() -> Self {
        Self {
            sentence_file: "sents.jsonl".into(),
            document_file: "docs.jsonl".into(),
            doc_id_field: "doc_id".into(),
            sent_id_field: "sent_id".into(),
            sentence_text_fields: vec!["sent_text".into(), "text".into()],
            document_text_fields: vec!["doc_text".into(), "text".into()],
            label_object_fields: vec!["sent_labels".into(), "labels".into()],
        }
    }
}

/// Normalizes "ANY_ACTION", "any action", "Any-Action" to "any_action".
pub fn normalize_task_name(raw: &str) -> String {
    raw.trim()
        .to_ascii_lowercase()
        .chars()
        .map(|c| if c == ' ' || c == '-' { '_' } else { c })
        .collect()
}

fn trailing_number(id: &str) -> Option<u64> {
    let digits: String = id
        .chars()
        .rev()
        .take_while(|c| c.is_ascii_digit())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    digits.parse().ok()
}

fn india_labels(
    rec: &JsonLine,
    layout: &IndiaLayout,
    path: &str,
) -> Result<BTreeMap<String, bool>> {
    let source = layout
        .label_object_fields
        .iter()
        .find_map(|f| match rec.value.get(f) {
            Some(Value::Object(map)) => Some(map),
            _ => None,
        })
        .unwrap_or(&rec.value);
    let mut labels = BTreeMap::new();
    for (key, value) in source {
        let task = normalize_task_name(key);
        if INDIA_TASKS.contains(&task.as_str()) {
            let b = label_value(value).ok_or_else(|| Error::MalformedRecord {
                path: path.into(),
                line: rec.line,
                msg: format!("label `{key}` is not boolean: {value}"),
            })?;
            labels.insert(task, b);
        }
    }
    for task in INDIA_TASKS {
        if !labels.contains_key(task) {
            return Err(Error::MissingField {
                path: path.into(),
                line: rec.line,
                field: task.into(),
            });
        }
    }
    Ok(labels)
}

/// Loads the India Police Events release from `dir`.
///
/// Document labels are the OR of the document's sentence labels.
pub fn ingest_india_police(dir: &Path) -> Result<Corpus> {
    ingest_india_police_with(dir, &IndiaLayout::default())
}

pub fn ingest_india_police_with(dir: &Path, layout: &IndiaLayout) -> Result<Corpus> {
    let sent_path = dir.join(&layout.sentence_file);
    if !sent_path.is_file() {
        return Err(Error::Layout(format!(
            "sentence file {} not found",
            sent_path.display()
        )));
    }
    let sent_display = sent_path.display().to_string();

    // Optional document file: order and article text.
    let doc_path = dir.join(&layout.document_file);
    let mut doc_text: HashMap<String, String> = HashMap::new();
    let mut doc_order: Vec<String> = Vec::new();
    let has_doc_file = doc_path.is_file();
    if has_doc_file {
        let doc_display = doc_path.display().to_string();
        for rec in read_json_lines(&doc_path)? {
            let id = string_field(&rec, &layout.doc_id_field, &doc_display)?;
            let text = layout
                .document_text_fields
                .iter()
                .find_map(|f| rec.value.get(f).and_then(Value::as_str))
                .unwrap_or_default()
                .to_string();
            if doc_text.insert(id.clone(), text).is_some() {
                return Err(Error::DuplicateDocId(id));
            }
            doc_order.push(id);
        }
    }

    struct Sent {
        order: Option<u64>,
        seq: usize,
        text: String,
        labels: BTreeMap<String, bool>,
    }
    let mut by_doc: HashMap<String, Vec<Sent>> = HashMap::new();
    let mut first_seen: Vec<String> = Vec::new();
    let mut seen_sent_ids: HashSet<String> = HashSet::new();
    for (seq, rec) in read_json_lines(&sent_path)?.into_iter().enumerate() {
        let doc_id = string_field(&rec, &layout.doc_id_field, &sent_display)?;
        if has_doc_file && !doc_text.contains_key(&doc_id) {
            return Err(Error::UnknownDocument(doc_id));
        }
        let sent_id = rec
            .value
            .get(&layout.sent_id_field)
            .map(|v| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            });
        if let Some(id) = &sent_id {
            if !seen_sent_ids.insert(format!("{doc_id}\u{0}{id}")) {
                return Err(Error::Layout(format!(
                    "duplicate sentence id `{id}` in document `{doc_id}`"
                )));
            }
        }
        let text = layout
            .sentence_text_fields
            .iter()
            .find_map(|f| rec.value.get(f).and_then(Value::as_str))
            .ok_or_else(|| Error::MissingField {
                path: sent_display.clone(),
                line: rec.line,
                field: layout.sentence_text_fields.join("|"),
            })?
            .to_string();
        let labels = india_labels(&rec, layout, &sent_display)?;
        let entry = by_doc.entry(doc_id.clone()).or_insert_with(|| {
            first_seen.push(doc_id.clone());
            Vec::new()
        });
        entry.push(Sent {
            order: sent_id.as_deref().and_then(trailing_number),
            seq,
            text,
            labels,
        });
    }

    let order = if has_doc_file { doc_order } else { first_seen };
    let mut documents = Vec::with_capacity(order.len());
    for doc_id in order {
        let mut sents = by_doc.remove(&doc_id).unwrap_or_default();
        if sents.iter().all(|s| s.order.is_some()) {
            sents.sort_by_key(|s| (s.order, s.seq));
        }
        let mut labels: BTreeMap<String, bool> =
            INDIA_TASKS.iter().map(|t| (t.to_string(), false)).collect();
        for s in &sents {
            for (task, &value) in &s.labels {
                if value {
                    labels.insert(task.clone(), true);
                }
            }
        }
        let sentences: Vec<String> = sents.into_iter().map(|s| s.text).collect();
        let text = match doc_text.get(&doc_id) {
            Some(t) if !t.trim().is_empty() => t.clone(),
            _ => sentences.join(" "),
        };
        documents.push(Document {
            doc_id,
            text,
            sentences: Some(sentences),
            labels,
        });
    }

    let expected = INDIA_EXPECTED
        .iter()
        .map(|&(task, positives, fraction)| {
            (
                task.to_string(),
                ExpectedStat {
                    positives,
                    fraction,
                },
            )
        })
        .collect();
    Ok(Corpus::from_documents(
        INDIA_POLICE,
        INDIA_TASKS.iter().map(|t| t.to_string()).collect(),
        documents,
    )?
    .with_expected_stats(expected))
}

/// Field names of the ProtestNews English document-level file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtestLayout {
    pub id_field: String,
    pub text_field: String,
    pub label_field: String,
}

impl Default for ProtestLayout {
    fn default() -> Self {
        Self {
            id_field: "id".into(),
            text_field: "text".into(),
            label_field: "label".into(),
        }
    }
}

/// Loads the ProtestNews English documents, optionally drawing a seeded
/// sample of `subset_size` documents (see [`sample_indices`]).
pub fn ingest_protestnews(path: &Path, subset_size: Option<usize>, seed: u64) -> Result<Corpus> {
    ingest_protestnews_with(path, subset_size, seed, &ProtestLayout::default())
}

pub fn ingest_protestnews_with(
    path: &Path,
    subset_size: Option<usize>,
    seed: u64,
    layout: &ProtestLayout,
) -> Result<Corpus> {
    let display = path.display().to_string();
    let records = read_json_lines(path)?;
    let mut documents = Vec::with_capacity(records.len());
    for rec in &records {
        let doc_id = string_field(rec, &layout.id_field, &display)?;
        let text = string_field(rec, &layout.text_field, &display)?;
        let raw = rec
            .value
            .get(&layout.label_field)
            .ok_or_else(|| Error::MissingField {
                path: display.clone(),
                line: rec.line,
                field: layout.label_field.clone(),
            })?;
        let label = label_value(raw).ok_or_else(|| Error::MalformedRecord {
            path: display.clone(),
            line: rec.line,
            msg: format!("label is not binary: {raw}"),
        })?;
        documents.push(Document {
            doc_id,
            text,
            sentences: None,
            labels: BTreeMap::from([(PROTEST_TASKS[0].to_string(), label)]),
        });
    }
    let available = documents.len();
    let full = subset_size.is_none_or(|n| n == available);
    if let Some(n) = subset_size {
        if n > available {
            return Err(Error::SubsetTooLarge {
                requested: n,
                available,
            });
        }
        if n < available {
            let keep = sample_indices(available, n, seed);
            let mut slots: Vec<Option<Document>> = documents.into_iter().map(Some).collect();
            documents = keep
                .into_iter()
                .map(|i| slots[i].take().expect("indices are distinct"))
                .collect();
        }
    }
    let mut corpus = Corpus::from_documents(
        PROTEST_NEWS,
        PROTEST_TASKS.iter().map(|t| t.to_string()).collect(),
        documents,
    )?;
    if full && available == PROTEST_ENGLISH_DOCUMENTS {
        corpus = corpus.with_expected_stats(BTreeMap::from([(
            PROTEST_TASKS[0].to_string(),
            ExpectedStat {
                positives: PROTEST_EXPECTED.0,
                fraction: PROTEST_EXPECTED.1,
            },
        )]));
    }
    Ok(corpus)
}

/// Draws `k` distinct indices from `0..n`, returned in ascending order.
///
/// The stream is ChaCha8 seeded with `seed_from_u64(seed)`; indices are
/// selected by a partial Fisher-Yates shuffle whose bounded draws use
/// rejection sampling on raw 64-bit outputs, so the result depends only on
/// `(n, k, seed)`.
pub fn sample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    assert!(k <= n, "cannot sample {k} of {n}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + uniform_below(&mut rng, (n - i) as u64) as usize;
        pool.swap(i, j);
    }
    let mut out = pool[..k].to_vec();
    out.sort_unstable();
    out
}

fn uniform_below(rng: &mut ChaCha8Rng, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    let zone = u64::MAX - (u64::MAX % bound);
    loop {
        let x = rng.next_u64();
        if x < zone {
            return x % bound;
        }
    }
}
