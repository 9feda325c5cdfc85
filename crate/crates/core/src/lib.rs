//! Zero-shot document triage by entailment ranking.
//!
//! Each document is split into scoring units (sentences, or sentence-packed
//! chunks under a token budget), every unit is scored by an NLI model for
//! the probability that it entails a class-describing query, and documents
//! are ranked by their best unit. Reading the top of the ranking recovers
//! most positive documents; [`evaluator`] measures how many.
//!
//! ```
//! use entailrank::evaluator::{average_precision_relevance, recall_at_relevance};
//!
//! // positives at ranks 1 and 3 of 4
//! let relevance = [true, false, true, false];
//! assert_eq!(recall_at_relevance(&relevance, 0.5).unwrap(), 0.5);
//! let ap = average_precision_relevance(&relevance).unwrap();
//! assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
//! ```

pub mod corpus;
pub mod error;
pub mod evaluator;
pub mod pipeline;
pub mod queries;
pub mod ranker;
pub mod reporter;
pub mod scorer;
pub mod segmenter;

pub use corpus::{Corpus, Document};
pub use error::{Error, ErrorKind, Result};
pub use queries::{Query, QueryRegistry, QueryType};
pub use ranker::{DocScore, RankConfig, Ranking};
pub use scorer::{BackendConfig, EntailmentBackend, MockBackend, MockRule, UnitScore};
pub use segmenter::{Granularity, ScoringUnit, Segmenter, TokenBudget, TokenCounter};

// The guide's code blocks run as doctests.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/corpora.md")]
    pub mod corpora {}
    #[doc = include_str!("../../../book/src/segmentation.md")]
    pub mod segmentation {}
    #[doc = include_str!("../../../book/src/queries.md")]
    pub mod queries {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    pub mod scoring {}
    #[doc = include_str!("../../../book/src/ranking.md")]
    pub mod ranking {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    pub mod metrics {}
    #[doc = include_str!("../../../book/src/reports.md")]
    pub mod reports {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
