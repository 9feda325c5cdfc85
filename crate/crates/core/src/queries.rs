//! Query registry: hypothesis strings per (dataset, task, query type).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_REGISTRY: &str = include_str!("../data/queries.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryType {
    Declarative,
    Definitional,
    ManualSocial,
    ManualContentious,
    ExtendedKeyword,
    ExtendedOpposition,
    ExtendedDisapproval,
}

impl QueryType {
    pub const ALL: [QueryType; 7] = [
        QueryType::Declarative,
        QueryType::Definitional,
        QueryType::ManualSocial,
        QueryType::ManualContentious,
        QueryType::ExtendedKeyword,
        QueryType::ExtendedOpposition,
        QueryType::ExtendedDisapproval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QueryType::Declarative => "declarative",
            QueryType::Definitional => "definitional",
            QueryType::ManualSocial => "manual_social",
            QueryType::ManualContentious => "manual_contentious",
            QueryType::ExtendedKeyword => "extended_keyword",
            QueryType::ExtendedOpposition => "extended_opposition",
            QueryType::ExtendedDisapproval => "extended_disapproval",
        }
    }

    /// Row label prefix in metric tables, e.g. "decl" in "decl-sent".
    pub fn short(self) -> &'static str {
        match self {
            QueryType::Declarative => "decl",
            QueryType::Definitional => "def",
            QueryType::ManualSocial => "manual-social",
            QueryType::ManualContentious => "manual-contentious",
            QueryType::ExtendedKeyword => "ext-keyword",
            QueryType::ExtendedOpposition => "ext-opposition",
            QueryType::ExtendedDisapproval => "ext-disapproval",
        }
    }
}

impl fmt::Display for QueryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QueryType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QueryType::ALL
            .into_iter()
            .find(|q| q.as_str() == s || q.short() == s)
            .ok_or_else(|| Error::UnknownQueryType(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub task: String,
    pub qtype: QueryType,
    pub text: String,
}

/// How an extended query grows out of the protest definition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Extension {
    /// Prepend the capitalized keyword and a comma.
    Keyword(String),
    /// Append a second definition after the base.
    Definition(String),
    Empty,
}

/// Builds an extended query from the protest definitional query.
pub fn compose_extended(base: &Query, extension: &Extension, qtype: QueryType) -> Result<Query> {
    if base.qtype != QueryType::Definitional || base.task != "protest" {
        return Err(Error::UnsupportedExtension(format!(
            "base must be the protest definitional query, got {} / {}",
            base.task, base.qtype
        )));
    }
    let text = match extension {
        Extension::Empty => return Ok(base.clone()),
        Extension::Keyword(word) => {
            format!("{}, {}", capitalize(word), lowercase_first(&base.text))
        }
        Extension::Definition(def) if def.trim().is_empty() => return Ok(base.clone()),
        Extension::Definition(def) => format!("{} {}", base.text, def.trim()),
    };
    Ok(Query {
        task: base.task.clone(),
        qtype,
        text,
    })
}

fn capitalize(s: &str) -> String {
    let mut cs = s.chars();
    match cs.next() {
        Some(c) => c.to_uppercase().chain(cs).collect(),
        None => String::new(),
    }
}

fn lowercase_first(s: &str) -> String {
    let mut cs = s.chars();
    match cs.next() {
        Some(c) => c.to_lowercase().chain(cs).collect(),
        None => String::new(),
    }
}

#[derive(Debug, Deserialize)]
struct RegistryFile {
    #[serde(default)]
    query: Vec<QueryRecord>,
    #[serde(default)]
    extension: Vec<ExtensionRecord>,
    #[serde(default)]
    question: Vec<QuestionRecord>,
}

#[derive(Debug, Deserialize)]
struct QueryRecord {
    dataset: String,
    task: String,
    qtype: QueryType,
    text: String,
}

#[derive(Debug, Deserialize)]
struct ExtensionRecord {
    qtype: QueryType,
    keyword: Option<String>,
    definition: Option<String>,
}

#[derive(Debug, Deserialize)]
struct QuestionRecord {
    task: String,
    text: String,
}

/// Read-only registry of query strings.
#[derive(Debug, Clone)]
pub struct QueryRegistry {
    queries: BTreeMap<(String, String, QueryType), Query>,
    extensions: BTreeMap<QueryType, Extension>,
    questions: BTreeMap<String, String>,
}

impl QueryRegistry {
    pub fn parse(source: &str) -> Result<Self> {
        let file: RegistryFile =
            toml::from_str(source).map_err(|e| Error::Registry(e.to_string()))?;
        let mut queries = BTreeMap::new();
        for q in file.query {
            if q.text.trim().is_empty() || q.text.contains('\n') {
                return Err(Error::Registry(format!(
                    "query {}/{}/{} must be a non-empty single paragraph",
                    q.dataset, q.task, q.qtype
                )));
            }
            let key = (q.dataset.clone(), q.task.clone(), q.qtype);
            let task_name = q.task.clone();
            let query = Query {
                task: q.task,
                qtype: q.qtype,
                text: q.text,
            };
            if queries.insert(key, query).is_some() {
                return Err(Error::Registry(format!(
                    "duplicate query {}/{}/{}",
                    q.dataset, task_name, q.qtype
                )));
            }
        }
        let mut extensions = BTreeMap::new();
        for e in file.extension {
            let ext = match (e.keyword, e.definition) {
                (Some(k), None) => Extension::Keyword(k),
                (None, Some(d)) => Extension::Definition(d),
                _ => {
                    return Err(Error::Registry(format!(
                        "extension {} needs exactly one of keyword/definition",
                        e.qtype
                    )))
                }
            };
            extensions.insert(e.qtype, ext);
        }
        let questions = file.question.into_iter().map(|q| (q.task, q.text)).collect();
        Ok(Self {
            queries,
            extensions,
            questions,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&raw)
    }

    pub fn get(&self, dataset: &str, task: &str, qtype: QueryType) -> Result<&Query> {
        self.queries
            .get(&(dataset.to_string(), task.to_string(), qtype))
            .ok_or_else(|| Error::UnknownQuery {
                dataset: dataset.into(),
                task: task.into(),
                qtype: qtype.to_string(),
            })
    }

    /// All queries registered for a dataset, in (task, qtype) order.
    pub fn for_dataset<'a>(&'a self, dataset: &'a str) -> impl Iterator<Item = &'a Query> + 'a {
        self.queries
            .iter()
            .filter(move |((d, _, _), _)| d == dataset)
            .map(|(_, q)| q)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Query)> {
        self.queries.iter().map(|((d, _, _), q)| (d.as_str(), q))
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn extension(&self, qtype: QueryType) -> Option<&Extension> {
        self.extensions.get(&qtype)
    }

    /// Annotation question form for an India Police Events task.
    pub fn question_form(&self, task: &str) -> Option<&str> {
        self.questions.get(task).map(String::as_str)
    }
}

impl Default for QueryRegistry {
    fn default() -> Self {
        Self::parse(DEFAULT_REGISTRY).expect("bundled query registry is valid")
    }
}

/// Convenience lookup in the bundled registry.
pub fn get_query(dataset: &str, task: &str, qtype: QueryType) -> Result<Query> {
    QueryRegistry::default().get(dataset, task, qtype).cloned()
}
