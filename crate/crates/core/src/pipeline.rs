//! Segment, score and rank a whole corpus for one configuration.

use crate::corpus::Corpus;
use crate::error::Result;
use crate::queries::Query;
use crate::ranker::{aggregate, rank, RankConfig, Ranking};
use crate::scorer::{score_units, EntailmentBackend, UnitScore};
use crate::segmenter::{Granularity, ScoringUnit, Segmenter, TokenBudget};

#[derive(Debug, Clone, Copy)]
pub struct ScoreOptions {
    pub batch_size: usize,
    /// Worker lanes; capped by the backend's own limit.
    pub lanes: usize,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lanes: 1,
        }
    }
}

/// Scoring units of every document, in corpus order.
pub fn corpus_units(
    corpus: &Corpus,
    segmenter: &Segmenter,
    granularity: Granularity,
    query: &Query,
    backend: &dyn EntailmentBackend,
) -> Result<Vec<ScoringUnit>> {
    let budget = TokenBudget::for_hypothesis(&query.text, backend.tokenizer(), backend.max_tokens())?;
    let mut units = Vec::new();
    for doc in corpus.documents() {
        units.extend(segmenter.units(doc, granularity, &budget, backend.tokenizer())?);
    }
    Ok(units)
}

pub struct ScoredRun {
    pub units: Vec<ScoringUnit>,
    pub scores: Vec<UnitScore>,
    pub ranking: Ranking,
}

pub fn score_and_rank(
    corpus: &Corpus,
    segmenter: &Segmenter,
    granularity: Granularity,
    query: &Query,
    backend: &dyn EntailmentBackend,
    options: ScoreOptions,
) -> Result<ScoredRun> {
    let units = corpus_units(corpus, segmenter, granularity, query, backend)?;
    let scores = score_units(&units, query, backend, options.batch_size, options.lanes)?;
    let config = RankConfig {
        dataset: corpus.name().to_string(),
        task: query.task.clone(),
        qtype: query.qtype,
        granularity,
        backend_id: backend.id().to_string(),
    };
    let ranking = rank(aggregate(&scores, corpus)?, config)?;
    Ok(ScoredRun {
        units,
        scores,
        ranking,
    })
}
