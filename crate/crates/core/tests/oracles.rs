use std::collections::BTreeMap;
use std::io::Write;

use entailrank::corpus::{ingest_protestnews, sample_indices, Corpus, Document};
use entailrank::evaluator::{
    average_precision_relevance, default_grid, expected_random_ap, read_metrics,
    recall_curve_relevance, MetricsRow, RecallCurve,
};
use entailrank::queries::QueryType;
use entailrank::ranker::RankConfig;
use entailrank::reporter::{emit_curve_plot, emit_tables, render_curve_plot};
use entailrank::segmenter::Granularity;
use rand::seq::SliceRandom;
use rand::SeedableRng;

fn config(dataset: &str, task: &str, backend: &str, qtype: QueryType, g: Granularity) -> RankConfig {
    RankConfig {
        dataset: dataset.into(),
        task: task.into(),
        qtype,
        granularity: g,
        backend_id: backend.into(),
    }
}

fn choose(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[test]
fn subset_positive_rate_follows_hypergeometric() {
    let (n_total, k_pos, n_draw) = (9_327usize, 1_912usize, 1_257usize);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("english.jsonl");
    let mut f = std::fs::File::create(&path).unwrap();
    // positives spread deterministically through the file
    for i in 0..n_total {
        let label = (i * k_pos) / n_total != ((i + 1) * k_pos) / n_total;
        writeln!(f, r#"{{"id":"n{i:05}","text":"doc {i}","label":{}}}"#, u8::from(label)).unwrap();
    }
    drop(f);

    let full = ingest_protestnews(&path, None, 0).unwrap();
    assert_eq!(full.len(), n_total);
    assert_eq!(full.labels_for("protest").values().filter(|&&l| l).count(), k_pos);

    let (nf, kf, df) = (n_total as f64, k_pos as f64, n_draw as f64);
    let mean = kf / nf;
    let var = df * mean * (1.0 - mean) * (nf - df) / (nf - 1.0) / (df * df);
    let sd = var.sqrt();
    let mut total = 0.0;
    let seeds = 40;
    for seed in 0..seeds {
        let sub = ingest_protestnews(&path, Some(n_draw), seed).unwrap();
        assert_eq!(sub.len(), n_draw);
        let frac = sub.labels_for("protest").values().filter(|&&l| l).count() as f64 / df;
        assert!((frac - mean).abs() < 4.5 * sd, "seed {seed}: {frac}");
        assert!((0.17..=0.25).contains(&frac), "seed {seed}: {frac}");
        total += frac;
    }
    let avg = total / seeds as f64;
    assert!((avg - mean).abs() < 4.0 * sd / (seeds as f64).sqrt(), "{avg}");
}

#[test]
fn subset_is_seed_stable_and_in_file_order() {
    let a = sample_indices(100, 17, 42);
    assert_eq!(a, sample_indices(100, 17, 42));
    assert_ne!(a, sample_indices(100, 17, 43));
    assert!(a.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(sample_indices(5, 5, 9), vec![0, 1, 2, 3, 4]);
}

#[test]
fn sampler_is_uniform_over_subsets() {
    // 10 choose 3 = 120 subsets; chi-square against uniform
    let trials = 24_000u64;
    let mut counts: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
    for seed in 0..trials {
        *counts.entry(sample_indices(10, 3, seed)).or_default() += 1;
    }
    assert_eq!(counts.len(), 120);
    let expected = trials as f64 / choose(10, 3);
    let chi2: f64 = counts
        .values()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // 119 dof: mean 119, sd ~15.4; 119 + 5 sd
    assert!(chi2 < 196.0, "chi2 = {chi2}");
}

/// Every placement of `p` positives among `n` ranks, by bitmask.
fn all_placements(n: usize, p: usize) -> impl Iterator<Item = Vec<bool>> {
    (0u32..1 << n)
        .filter(move |m| m.count_ones() as usize == p)
        .map(move |m| (0..n).map(|i| m >> i & 1 == 1).collect())
}

#[test]
fn random_ap_formula_matches_enumeration() {
    for n in 1..=10 {
        for p in 1..=n {
            let (sum, count) = all_placements(n, p)
                .map(|rel| average_precision_relevance(&rel).unwrap())
                .fold((0.0, 0usize), |(s, c), ap| (s + ap, c + 1));
            assert_eq!(count as f64, choose(n as u64, p as u64));
            let mean = sum / count as f64;
            assert!((mean - expected_random_ap(n, p)).abs() < 1e-12, "n={n} p={p}");
        }
    }
}

#[test]
fn random_ap_formula_matches_simulation() {
    let (n, p, trials) = (200usize, 40usize, 2_000usize);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let mut rel = vec![false; n];
    rel[..p].iter_mut().for_each(|r| *r = true);
    let aps: Vec<f64> = (0..trials)
        .map(|_| {
            rel.shuffle(&mut rng);
            average_precision_relevance(&rel).unwrap()
        })
        .collect();
    let mean = aps.iter().sum::<f64>() / trials as f64;
    let var = aps.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
    let se = (var / trials as f64).sqrt();
    let expected = expected_random_ap(n, p);
    assert!((mean - expected).abs() < 3.0 * se, "{mean} vs {expected} (se {se})");
}

fn gold_curve(n: usize, p: usize, dataset: &str, task: &str, backend: &str) -> RecallCurve {
    let rel: Vec<bool> = (0..n).map(|i| i < p).collect();
    recall_curve_relevance(
        config(dataset, task, backend, QueryType::Declarative, Granularity::Sentence),
        &rel,
        &default_grid(),
    )
    .unwrap()
}

#[test]
fn gold_curve_reaches_one_at_positive_share() {
    let c = gold_curve(200, 40, "fx", "t", "mock-oracle");
    for &(prop, recall) in &c.points {
        if prop >= 0.2 {
            assert_eq!(recall, 1.0, "{prop}");
        } else {
            assert!(recall < 1.0);
        }
    }
}

#[test]
fn plot_has_one_polyline_per_curve() {
    let curves = vec![
        gold_curve(50, 10, "india_police", "kill", "dlm"),
        gold_curve(50, 5, "india_police", "kill", "rlm"),
        gold_curve(80, 20, "protestnews", "protest", "dlm"),
    ];
    let svg = render_curve_plot(&curves).unwrap();
    // axis ticks and mesh are 1px polylines; series are drawn at 2px
    let series: Vec<&str> = svg
        .split("<polyline")
        .filter(|p| p.contains(r#"stroke-width="2" points=""#))
        .collect();
    assert_eq!(series.len(), curves.len());
    for s in &series {
        let points = s.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        // origin plus one vertex per grid point
        assert_eq!(points.split_whitespace().count(), 101);
    }
    assert!(svg.contains("india_police: kill"));
    assert!(svg.contains("protestnews: protest"));
    assert!(svg.contains("dlm decl-sent"));
    assert!(svg.contains("% of data read"));
    assert_eq!(svg, render_curve_plot(&curves).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plots/curves.svg");
    emit_curve_plot(&curves, &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), svg);
}

#[test]
fn plot_rejects_mismatched_grids() {
    let a = gold_curve(50, 10, "fx", "t", "dlm");
    let rel: Vec<bool> = (0..50).map(|i| i < 10).collect();
    let b = recall_curve_relevance(a.config.clone(), &rel, &[0.5, 1.0]).unwrap();
    assert!(render_curve_plot(&[a, b]).is_err());
    assert!(render_curve_plot(&[]).is_err());
}

#[test]
fn emitted_tables_carry_the_fixture_value() {
    let row = |backend: &str, task: &str, ap: f64| MetricsRow {
        config: config("india_police", task, backend, QueryType::Declarative, Granularity::Sentence),
        ap,
        recalls: vec![0.1, 0.2, 0.4, 0.6, 0.9],
    };
    let rows = vec![row("dlm", "kill", 0.96), row("dlm", "arrest", 0.94), row("rlm", "kill", 0.91)];
    let dir = tempfile::tempdir().unwrap();
    emit_tables(&rows, dir.path()).unwrap();
    let tsv = std::fs::read_to_string(dir.path().join("map_table.tsv")).unwrap();
    let dlm = tsv.lines().find(|l| l.starts_with("DLM\tdecl-sent")).unwrap();
    assert_eq!(dlm, "DLM\tdecl-sent\t0.96\t0.94");
    let text = std::fs::read_to_string(dir.path().join("map_table.txt")).unwrap();
    assert!(text.contains("0.96"));
    assert_eq!(read_metrics(&dir.path().join("metrics.tsv")).unwrap(), rows);
    assert!(dir.path().join("map_average.tsv").exists());
}

#[test]
fn tiny_corpus_round_trip() {
    let docs = vec![Document {
        doc_id: "a".into(),
        text: "t".into(),
        sentences: None,
        labels: BTreeMap::from([("protest".into(), true)]),
    }];
    let c = Corpus::from_documents("fx", vec!["protest".into()], docs).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.jsonl");
    c.write_generic(&p).unwrap();
    let back = entailrank::corpus::ingest_generic(
        &p,
        &entailrank::corpus::FormatConfig {
            tasks: Some(vec!["protest".into()]),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(back.documents(), c.documents());
}
