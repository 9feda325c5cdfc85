use std::collections::{BTreeMap, HashMap};

use entailrank::corpus::{Corpus, Document};
use entailrank::evaluator::{
    average_precision_relevance, default_grid, recall_at_relevance, recall_curve_relevance,
};
use entailrank::queries::QueryType;
use entailrank::ranker::{aggregate, rank, RankConfig};
use entailrank::scorer::{load_cached, save_cached, UnitScore};
use entailrank::segmenter::{Granularity, Segmenter, TokenBudget, TokenCounter, WhitespaceTokenizer};
use proptest::prelude::*;

fn config() -> RankConfig {
    RankConfig {
        dataset: "fx".into(),
        task: "t".into(),
        qtype: QueryType::Declarative,
        granularity: Granularity::Sentence,
        backend_id: "mock".into(),
    }
}

fn corpus_of(n: usize) -> Corpus {
    let docs = (0..n)
        .map(|i| Document {
            doc_id: format!("d{i:03}"),
            text: "x".into(),
            sentences: None,
            labels: BTreeMap::from([("t".into(), i % 2 == 0)]),
        })
        .collect();
    Corpus::from_documents("fx", vec!["t".into()], docs).unwrap()
}

fn unit_score(doc: usize, unit: usize, p: f64) -> UnitScore {
    UnitScore {
        doc_id: format!("d{doc:03}"),
        unit_index: unit,
        task: "t".into(),
        qtype: QueryType::Declarative,
        backend_id: "mock".into(),
        probability: p,
    }
}

/// Brute-force AP: for each positive rank, recount the positives above it.
fn brute_ap(rel: &[bool]) -> Option<f64> {
    let p = rel.iter().filter(|&&r| r).count();
    if p == 0 {
        return None;
    }
    let mut total = 0.0;
    for k in 0..rel.len() {
        if rel[k] {
            let mut above = 0;
            for r in &rel[..=k] {
                if *r {
                    above += 1;
                }
            }
            total += above as f64 / (k + 1) as f64;
        }
    }
    Some(total / p as f64)
}

fn doc_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..40, 1..25)
}

proptest! {
    #[test]
    fn chunks_partition_sentences_within_budget(
        lens in doc_strategy(),
        budget in 1usize..60,
    ) {
        let sentences: Vec<String> = lens
            .iter()
            .enumerate()
            .map(|(i, &n)| (0..n).map(|j| format!("s{i}w{j}")).collect::<Vec<_>>().join(" "))
            .collect();
        let doc = Document {
            doc_id: "d".into(),
            text: String::new(),
            sentences: Some(sentences.clone()),
            labels: BTreeMap::new(),
        };
        let tok = WhitespaceTokenizer::default();
        let b = TokenBudget { model_limit: budget + 3, hypothesis_tokens: 0, special_tokens: 3, premise_budget: budget };
        let units = Segmenter::default().chunk_document(&doc, &b, &tok).unwrap();
        let mut next = 0;
        for (i, u) in units.iter().enumerate() {
            prop_assert_eq!(u.unit_index, i);
            prop_assert_eq!(u.first_sentence, next);
            prop_assert!(u.end_sentence > u.first_sentence);
            prop_assert!(u.token_count <= budget);
            prop_assert_eq!(tok.count(&u.text).unwrap(), u.token_count);
            if !u.truncated {
                prop_assert_eq!(&u.text, &sentences[u.first_sentence..u.end_sentence].join(" "));
            }
            next = u.end_sentence;
        }
        prop_assert_eq!(next, sentences.len());
        prop_assert!(units.len() <= sentences.len());

        // unbounded budget: one chunk; budget below every sentence: one per sentence
        let wide = TokenBudget::new(usize::MAX / 2, 0, 3).unwrap();
        prop_assert_eq!(Segmenter::default().chunk_document(&doc, &wide, &tok).unwrap().len(), 1);
        let min_len = *lens.iter().min().unwrap();
        if min_len > 1 {
            let narrow = TokenBudget::new(min_len - 1 + 3, 0, 3).unwrap();
            let units = Segmenter::default().chunk_document(&doc, &narrow, &tok).unwrap();
            prop_assert_eq!(units.len(), sentences.len());
        }
    }

    #[test]
    fn sentence_units_reproduce_sentences(lens in doc_strategy()) {
        let sentences: Vec<String> = lens.iter().map(|&n| vec!["w"; n].join(" ")).collect();
        let doc = Document { doc_id: "d".into(), text: String::new(), sentences: Some(sentences.clone()), labels: BTreeMap::new() };
        let b = TokenBudget::new(512, 5, 3).unwrap();
        let units = Segmenter::default().segment_sentences(&doc, &b, &WhitespaceTokenizer::default()).unwrap();
        let texts: Vec<String> = units.iter().map(|u| u.text.clone()).collect();
        prop_assert_eq!(texts, sentences);
    }

    #[test]
    fn aggregation_is_permutation_invariant(
        probs in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 1..6), 1..12),
        seed in any::<u64>(),
    ) {
        let corpus = corpus_of(probs.len());
        let mut scores: Vec<UnitScore> = probs
            .iter()
            .enumerate()
            .flat_map(|(d, ps)| ps.iter().enumerate().map(move |(u, &p)| unit_score(d, u, p)))
            .collect();
        let base = rank(aggregate(&scores, &corpus).unwrap(), config()).unwrap();

        // brute-force max per document
        for e in &base.entries {
            let d: usize = e.doc_id[1..].parse().unwrap();
            let max = probs[d].iter().cloned().fold(f64::MIN, f64::max);
            prop_assert_eq!(e.score, max);
            prop_assert_eq!(probs[d][e.argmax_unit], max);
            prop_assert!(probs[d][..e.argmax_unit].iter().all(|&p| p < max));
        }

        // Fisher-Yates with a tiny LCG so the shuffle is test-local
        let mut state = seed | 1;
        for i in (1..scores.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let j = (state >> 33) as usize % (i + 1);
            scores.swap(i, j);
        }
        let shuffled = rank(aggregate(&scores, &corpus).unwrap(), config()).unwrap();
        prop_assert_eq!(base, shuffled);
    }

    #[test]
    fn raising_a_unit_never_lowers_its_document(
        probs in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 1..4), 2..10),
        target in any::<prop::sample::Index>(),
        bump in 0.0f64..=1.0,
    ) {
        let corpus = corpus_of(probs.len());
        let d = target.index(probs.len());
        let position = |probs: &Vec<Vec<f64>>| {
            let scores: Vec<UnitScore> = probs.iter().enumerate()
                .flat_map(|(d, ps)| ps.iter().enumerate().map(move |(u, &p)| unit_score(d, u, p)))
                .collect();
            let r = rank(aggregate(&scores, &corpus).unwrap(), config()).unwrap();
            let pos = r.doc_ids().position(|id| id == format!("d{d:03}")).unwrap();
            pos
        };
        let before = position(&probs);
        let mut raised = probs.clone();
        raised[d][0] = raised[d][0].max(bump);
        prop_assert!(position(&raised) <= before);
    }

    #[test]
    fn recall_is_monotone_and_complete(rel in prop::collection::vec(any::<bool>(), 1..80)) {
        prop_assume!(rel.iter().any(|&r| r));
        let curve = recall_curve_relevance(config(), &rel, &default_grid()).unwrap();
        prop_assert!(curve.points.windows(2).all(|w| w[0].1 <= w[1].1));
        prop_assert_eq!(curve.points.last().unwrap().1, 1.0);
        prop_assert_eq!(recall_at_relevance(&rel, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn ap_matches_brute_force_and_extremes(rel in prop::collection::vec(any::<bool>(), 1..60)) {
        prop_assume!(rel.iter().any(|&r| r));
        let ap = average_precision_relevance(&rel).unwrap();
        prop_assert_eq!(ap, brute_ap(&rel).unwrap());
        prop_assert!((0.0..=1.0).contains(&ap));

        let p = rel.iter().filter(|&&r| r).count();
        let mut perfect = vec![true; p];
        perfect.resize(rel.len(), false);
        let mut worst = vec![false; rel.len() - p];
        worst.resize(rel.len(), true);
        prop_assert_eq!(average_precision_relevance(&perfect).unwrap(), 1.0);
        prop_assert!(average_precision_relevance(&worst).unwrap() <= ap);
        prop_assert_eq!(ap == 1.0, rel == perfect);
    }

    #[test]
    fn cache_round_trips_exactly(probs in prop::collection::vec(0.0f64..=1.0, 1..30)) {
        let scores: Vec<UnitScore> = probs.iter().enumerate().map(|(i, &p)| unit_score(i, i % 3, p)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        save_cached(&path, &scores).unwrap();
        prop_assert_eq!(load_cached(&path).unwrap(), scores);
    }
}

#[test]
fn granularities_cover_the_same_documents() {
    use entailrank::pipeline::{score_and_rank, ScoreOptions};
    use entailrank::scorer::{MockBackend, MockRule};
    let docs: Vec<Document> = (0..20)
        .map(|i| Document {
            doc_id: format!("d{i:02}"),
            text: format!("First line {i}. Second line here. Third one."),
            sentences: None,
            labels: BTreeMap::from([("protest".into(), i % 4 == 0)]),
        })
        .collect();
    let corpus = Corpus::from_documents("fx", vec!["protest".into()], docs).unwrap();
    let query = entailrank::queries::get_query("protestnews", "protest", QueryType::Declarative).unwrap();
    let backend = MockBackend::new(MockRule::SeededRandom(3));
    let ids = |g| {
        let run = score_and_rank(&corpus, &Segmenter::default(), g, &query, &backend, ScoreOptions::default()).unwrap();
        run.ranking.check_coverage(&corpus).unwrap();
        let mut ids: Vec<String> = run.ranking.doc_ids().map(String::from).collect();
        ids.sort();
        ids
    };
    assert_eq!(ids(Granularity::Sentence), ids(Granularity::Document));
}

#[test]
fn labels_lookup_matches_corpus() {
    let c = corpus_of(6);
    let labels: HashMap<String, bool> = c.labels_for("t");
    assert_eq!(labels.values().filter(|&&l| l).count(), 3);
}
