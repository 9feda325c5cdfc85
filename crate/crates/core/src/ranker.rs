//! Max aggregation of unit scores and the document ranking.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::queries::QueryType;
use crate::scorer::UnitScore;
use crate::segmenter::Granularity;

/// Identifies one ranking: dataset, task, query type, granularity, backend.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RankConfig {
    pub dataset: String,
    pub task: String,
    pub qtype: QueryType,
    pub granularity: Granularity,
    pub backend_id: String,
}

impl RankConfig {
    /// File-name-safe key, `dataset__task__qtype__granularity__backend`.
    pub fn key(&self) -> String {
        format!(
            "{}__{}__{}__{}__{}",
            self.dataset, self.task, self.qtype, self.granularity, self.backend_id
        )
    }

    pub fn from_key(key: &str) -> Result<Self> {
        let parts: Vec<&str> = key.split("__").collect();
        let [dataset, task, qtype, granularity, backend_id] = parts[..] else {
            return Err(Error::BackendConfig(format!(
                "`{key}` is not a ranking key (dataset__task__qtype__granularity__backend)"
            )));
        };
        Ok(Self {
            dataset: dataset.into(),
            task: task.into(),
            qtype: qtype.parse()?,
            granularity: granularity.parse()?,
            backend_id: backend_id.into(),
        })
    }
}

impl fmt::Display for RankConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{} {}-{} [{}]",
            self.dataset,
            self.task,
            self.qtype.short(),
            self.granularity.short(),
            self.backend_id
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocScore {
    pub doc_id: String,
    pub score: f64,
    /// Smallest unit index attaining the maximum.
    pub argmax_unit: usize,
    pub n_units: usize,
}

/// Document score = maximum unit probability, one entry per corpus document
/// in corpus order.
pub fn aggregate(unit_scores: &[UnitScore], corpus: &Corpus) -> Result<Vec<DocScore>> {
    if let Some(first) = unit_scores.first() {
        if let Some(other) = unit_scores.iter().find(|s| {
            s.task != first.task || s.qtype != first.qtype || s.backend_id != first.backend_id
        }) {
            return Err(Error::MixedConfig(format!(
                "{}/{}/{} vs {}/{}/{}",
                first.task, first.qtype, first.backend_id, other.task, other.qtype, other.backend_id
            )));
        }
    }
    let mut best: HashMap<&str, DocScore> = HashMap::new();
    let mut units_seen: HashSet<(&str, usize)> = HashSet::new();
    for s in unit_scores {
        if corpus.get(&s.doc_id).is_none() {
            return Err(Error::UnknownDocument(s.doc_id.clone()));
        }
        if !units_seen.insert((s.doc_id.as_str(), s.unit_index)) {
            return Err(Error::DuplicateScore(format!("{} unit {}", s.doc_id, s.unit_index)));
        }
        best.entry(s.doc_id.as_str())
            .and_modify(|d| {
                d.n_units += 1;
                if s.probability > d.score
                    || (s.probability == d.score && s.unit_index < d.argmax_unit)
                {
                    d.score = s.probability;
                    d.argmax_unit = s.unit_index;
                }
            })
            .or_insert_with(|| DocScore {
                doc_id: s.doc_id.clone(),
                score: s.probability,
                argmax_unit: s.unit_index,
                n_units: 1,
            });
    }
    corpus
        .documents()
        .iter()
        .map(|doc| {
            best.remove(doc.doc_id.as_str())
                .ok_or_else(|| Error::NoUnits(doc.doc_id.clone()))
        })
        .collect()
}

/// Descending score, ties by ascending doc_id.
fn rank_order(a: &DocScore, b: &DocScore) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub config: RankConfig,
    pub entries: Vec<DocScore>,
}

pub fn rank(mut doc_scores: Vec<DocScore>, config: RankConfig) -> Result<Ranking> {
    let mut ids = HashSet::with_capacity(doc_scores.len());
    for d in &doc_scores {
        if !ids.insert(d.doc_id.as_str()) {
            return Err(Error::DuplicateDocId(d.doc_id.clone()));
        }
    }
    doc_scores.sort_by(rank_order);
    Ok(Ranking {
        config,
        entries: doc_scores,
    })
}

impl Ranking {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    /// Gold relevance of each ranked document, top first.
    pub fn relevance(&self, labels: &HashMap<String, bool>) -> Result<Vec<bool>> {
        self.entries
            .iter()
            .map(|e| {
                labels
                    .get(&e.doc_id)
                    .copied()
                    .ok_or_else(|| Error::UnlabeledDocument(e.doc_id.clone()))
            })
            .collect()
    }

    /// Checks that the ranking covers exactly the corpus documents.
    pub fn check_coverage(&self, corpus: &Corpus) -> Result<()> {
        if self.len() != corpus.len() {
            return Err(Error::Layout(format!(
                "ranking {} has {} entries for a corpus of {}",
                self.config,
                self.len(),
                corpus.len()
            )));
        }
        for id in self.doc_ids() {
            if corpus.get(id).is_none() {
                return Err(Error::UnknownDocument(id.to_string()));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct RankingRecord {
    rank: usize,
    doc_id: String,
    score: f64,
    argmax_unit: usize,
}

/// Writes one record per line, rank 1 first.
pub fn write_ranking(path: &Path, ranking: &Ranking) -> Result<()> {
    let mut out = String::new();
    for (i, e) in ranking.entries.iter().enumerate() {
        let rec = RankingRecord {
            rank: i + 1,
            doc_id: e.doc_id.clone(),
            score: e.score,
            argmax_unit: e.argmax_unit,
        };
        out.push_str(&serde_json::to_string(&rec).expect("ranking record serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a ranking export; unit counts are not part of the format and come
/// back as zero.
pub fn read_ranking(path: &Path, config: RankConfig) -> Result<Ranking> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let display = path.display().to_string();
    let mut entries: Vec<DocScore> = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: RankingRecord = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            path: display.clone(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if rec.rank != entries.len() + 1 {
            return Err(Error::MalformedRecord {
                path: display.clone(),
                line: i + 1,
                msg: format!("expected rank {}, found {}", entries.len() + 1, rec.rank),
            });
        }
        entries.push(DocScore {
            doc_id: rec.doc_id,
            score: rec.score,
            argmax_unit: rec.argmax_unit,
            n_units: 0,
        });
    }
    let ranking = rank(entries.clone(), config)?;
    if ranking.doc_ids().ne(entries.iter().map(|e| e.doc_id.as_str())) {
        return Err(Error::MalformedRecord {
            path: display,
            line: 0,
            msg: "records are not in descending-score, ascending-id order".into(),
        });
    }
    Ok(ranking)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use std::collections::BTreeMap;

    fn corpus(ids: &[&str]) -> Corpus {
        let docs = ids
            .iter()
            .map(|id| Document {
                doc_id: id.to_string(),
                text: "t".into(),
                sentences: None,
                labels: BTreeMap::from([("kill".into(), false)]),
            })
            .collect();
        Corpus::from_documents("fx", vec!["kill".into()], docs).unwrap()
    }

    fn us(doc: &str, i: usize, p: f64) -> UnitScore {
        UnitScore {
            doc_id: doc.into(),
            unit_index: i,
            task: "kill".into(),
            qtype: QueryType::Declarative,
            backend_id: "mock".into(),
            probability: p,
        }
    }

    fn config() -> RankConfig {
        RankConfig {
            dataset: "fx".into(),
            task: "kill".into(),
            qtype: QueryType::Declarative,
            granularity: Granularity::Sentence,
            backend_id: "mock".into(),
        }
    }

    fn ds(id: &str, score: f64) -> DocScore {
        DocScore {
            doc_id: id.into(),
            score,
            argmax_unit: 0,
            n_units: 1,
        }
    }

    #[test]
    fn max_with_first_attainer() {
        let c = corpus(&["a", "b"]);
        let scores = vec![us("a", 2, 0.9), us("a", 0, 0.2), us("a", 1, 0.9), us("b", 0, 0.4)];
        let out = aggregate(&scores, &c).unwrap();
        assert_eq!(out[0].score, 0.9);
        assert_eq!(out[0].argmax_unit, 1);
        assert_eq!(out[0].n_units, 3);
        assert_eq!(out[1].score, 0.4);
    }

    #[test]
    fn aggregate_errors() {
        let c = corpus(&["a", "b"]);
        assert!(matches!(
            aggregate(&[us("a", 0, 0.1)], &c).unwrap_err(),
            Error::NoUnits(ref d) if d == "b"
        ));
        assert!(matches!(
            aggregate(&[us("zz", 0, 0.1)], &c).unwrap_err(),
            Error::UnknownDocument(_)
        ));
        let mut other = us("b", 0, 0.1);
        other.task = "arrest".into();
        assert!(matches!(
            aggregate(&[us("a", 0, 0.1), other], &c).unwrap_err(),
            Error::MixedConfig(_)
        ));
    }

    #[test]
    fn rank_orders_and_breaks_ties() {
        let r = rank(vec![ds("a", 0.1), ds("b", 0.9), ds("c", 0.5)], config()).unwrap();
        assert_eq!(r.doc_ids().collect::<Vec<_>>(), ["b", "c", "a"]);
        let r = rank(vec![ds("c", 0.5), ds("a", 0.5), ds("b", 0.5)], config()).unwrap();
        assert_eq!(r.doc_ids().collect::<Vec<_>>(), ["a", "b", "c"]);
        assert!(matches!(
            rank(vec![ds("a", 0.1), ds("a", 0.2)], config()).unwrap_err(),
            Error::DuplicateDocId(_)
        ));
    }

    #[test]
    fn key_round_trip() {
        let c = config();
        assert_eq!(RankConfig::from_key(&c.key()).unwrap(), c);
        assert!(RankConfig::from_key("a__b").is_err());
    }

    #[test]
    fn export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.jsonl");
        let r = rank(vec![ds("a", 0.1), ds("b", 1.0 / 3.0), ds("c", 0.5)], config()).unwrap();
        write_ranking(&p, &r).unwrap();
        let back = read_ranking(&p, config()).unwrap();
        assert_eq!(
            back.entries.iter().map(|e| (&e.doc_id, e.score)).collect::<Vec<_>>(),
            r.entries.iter().map(|e| (&e.doc_id, e.score)).collect::<Vec<_>>()
        );
        fs::write(
            &p,
            "{\"rank\":1,\"doc_id\":\"a\",\"score\":0.1,\"argmax_unit\":0}\n{\"rank\":2,\"doc_id\":\"b\",\"score\":0.9,\"argmax_unit\":0}\n",
        )
        .unwrap();
        assert!(read_ranking(&p, config()).is_err());
    }
}
