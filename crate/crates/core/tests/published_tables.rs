//! Checks against values transcribed from the published tables.

use std::collections::BTreeMap;
use std::path::Path;

use entailrank::evaluator::{mean_ap, APResult, Dimension, MetricsRow};
use entailrank::queries::{QueryRegistry, QueryType};
use entailrank::ranker::RankConfig;
use entailrank::reporter::{ap_table, round_half_even_2};

fn fixture(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name))
        .unwrap()
}

fn rows(name: &str) -> Vec<Vec<String>> {
    fixture(name)
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .skip(1)
        .map(|l| l.split('\t').map(String::from).collect())
        .collect()
}

fn published_results() -> Vec<APResult> {
    rows("published_map.tsv")
        .into_iter()
        .map(|r| APResult {
            config: RankConfig {
                backend_id: r[0].clone(),
                qtype: r[1].parse().unwrap(),
                granularity: r[2].parse().unwrap(),
                dataset: r[3].clone(),
                task: r[4].clone(),
            },
            ap: r[5].parse().unwrap(),
        })
        .collect()
}

#[test]
fn registry_matches_transcribed_queries() {
    let registry = QueryRegistry::default();
    let mut seen = 0;
    for line in fixture("published_queries.tsv").lines().filter(|l| !l.starts_with('#')) {
        let cols: Vec<&str> = line.split('\t').collect();
        let qtype: QueryType = cols[2].parse().unwrap();
        let q = registry.get(cols[0], cols[1], qtype).unwrap();
        assert_eq!(q.text.as_bytes(), cols[3].as_bytes(), "{line}");
        seen += 1;
    }
    assert_eq!(seen, 17);
    assert_eq!(registry.len(), 17);
}

#[test]
fn grouped_means_reproduce_published_averages() {
    let results = published_results();
    assert_eq!(results.len(), 48);
    let means = mean_ap(
        &results,
        &[Dimension::Dataset, Dimension::Backend, Dimension::Granularity],
    )
    .unwrap();
    let by_key: BTreeMap<Vec<String>, f64> = means.iter().map(|g| (g.key.clone(), g.mean)).collect();
    let published = rows("published_average_map.tsv");
    assert_eq!(published.len(), 8);
    for r in published {
        let key = vec![r[0].clone(), r[1].clone(), r[2].clone()];
        let expected: f64 = r[3].parse().unwrap();
        let got = by_key[&key];
        assert!((got - expected).abs() <= 0.02, "{key:?}: {got} vs {expected}");
    }
    let india_dlm_sent = by_key[&vec!["india_police".into(), "dlm".into(), "sentence".into()]];
    assert!((india_dlm_sent - 0.774).abs() < 1e-9);
    assert_eq!(round_half_even_2(india_dlm_sent), "0.77");
    let india_dlm_doc = by_key[&vec!["india_police".into(), "dlm".into(), "document".into()]];
    assert!((india_dlm_doc - 0.546).abs() < 1e-9);
    let india_rlm_sent = by_key[&vec!["india_police".into(), "rlm".into(), "sentence".into()]];
    assert!((india_rlm_sent - 0.429).abs() < 1e-9);
}

#[test]
fn published_orderings_hold_on_the_table() {
    let results = published_results();
    let mean = |dim: Dimension, value: &str| {
        let g = mean_ap(&results, &[dim]).unwrap();
        g.into_iter().find(|g| g.key[0] == value).unwrap().mean
    };
    assert!(mean(Dimension::Backend, "dlm") > mean(Dimension::Backend, "rlm"));
    assert!(mean(Dimension::Qtype, "declarative") > mean(Dimension::Qtype, "definitional"));
}

#[test]
fn display_table_has_published_shape() {
    let rows: Vec<MetricsRow> = published_results()
        .into_iter()
        .map(|r| MetricsRow {
            config: r.config,
            ap: r.ap,
            recalls: vec![],
        })
        .collect();
    let t = ap_table(&rows).unwrap();
    assert_eq!(t.rows.len(), 8);
    assert_eq!(t.columns, ["protest", "kill", "arrest", "fail", "force", "any_action"]);
    let tsv = t.to_tsv();
    let dlm_decl_sent = tsv.lines().find(|l| l.starts_with("DLM\tdecl-sent")).unwrap();
    assert_eq!(dlm_decl_sent, "DLM\tdecl-sent\t0.64\t0.96\t0.94\t0.65\t0.91\t0.89");
    let labels: Vec<String> = t.rows.iter().map(|r| format!("{} {}", r.backend, r.label())).collect();
    assert_eq!(
        labels,
        [
            "dlm decl-sent", "dlm decl-doc", "dlm def-sent", "dlm def-doc",
            "rlm decl-sent", "rlm decl-doc", "rlm def-sent", "rlm def-doc"
        ]
    );
}
