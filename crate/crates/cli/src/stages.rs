use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use entailrank::corpus::{
    ingest_generic, ingest_india_police, ingest_protestnews, verify_stats, FormatConfig,
    INDIA_DOCUMENTS, INDIA_SENTENCES,
};
use entailrank::evaluator::{
    metrics_row, read_curves, read_metrics, recall_curve, write_curves, write_metrics, MetricsRow,
    RecallCurve,
};
use entailrank::pipeline::corpus_units;
use entailrank::ranker::{self, aggregate, read_ranking, write_ranking};
use entailrank::reporter::{
    average_table_text, emit_curve_plot, emit_tables, reading_list, write_reading_list,
};
use entailrank::scorer::{load_cached, save_cached, score_units, Normalization};
use entailrank::segmenter::{Abbreviations, SentenceSplitter, WhitespaceTokenizer};
use entailrank::{
    Corpus, EntailmentBackend, Error, ErrorKind, Granularity, MockBackend, MockRule, Query,
    QueryRegistry, QueryType, RankConfig, Ranking, Result, ScoringUnit, Segmenter, TokenBudget,
    TokenCounter, UnitScore,
};
use entailrank_onnx::{HfTokenCounter, Manifest, OnnxNliBackend, MANIFEST_FILE};

use crate::{
    Adapter, BackendArgs, CacheMode, DataArgs, EvalArgs, QueryArgs, RankArgs, ReportArgs, RunArgs,
    ScoreArgs,
};

const PLOT_FILE: &str = "recall_curves.svg";

fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn require_seed(seed: Option<u64>, what: &str) -> Result<u64> {
    seed.ok_or_else(|| Error::BackendConfig(format!("{what} requires --seed")))
}

fn parse_list<T: FromStr<Err = Error>>(values: &[String]) -> Result<Vec<T>> {
    values.iter().map(|v| v.trim().parse()).collect()
}

pub fn load_corpus(data: &DataArgs) -> Result<Corpus> {
    let corpus = match data.adapter {
        Adapter::Generic => ingest_generic(
            &data.dataset_path,
            &FormatConfig {
                name: data.dataset_name.clone(),
                ..FormatConfig::default()
            },
        )?,
        Adapter::India => ingest_india_police(&data.dataset_path)?,
        Adapter::Protestnews => {
            let seed = match data.subset_size {
                Some(_) => require_seed(data.seed, "--subset-size")?,
                None => 0,
            };
            ingest_protestnews(&data.dataset_path, data.subset_size, seed)?
        }
    };
    for task in &data.tasks {
        if !corpus.has_task(task) {
            return Err(Error::UnknownTask {
                dataset: corpus.name().to_string(),
                task: task.clone(),
            });
        }
    }
    Ok(corpus)
}

fn selected_tasks(corpus: &Corpus, data: &DataArgs) -> Vec<String> {
    if data.tasks.is_empty() {
        corpus.tasks().to_vec()
    } else {
        data.tasks.clone()
    }
}

fn task_selected(config: &RankConfig, data: &DataArgs) -> bool {
    data.tasks.is_empty() || data.tasks.contains(&config.task)
}

fn load_registry(q: &QueryArgs) -> Result<QueryRegistry> {
    match &q.queries {
        Some(path) => QueryRegistry::from_file(path),
        None => Ok(QueryRegistry::default()),
    }
}

fn load_segmenter(q: &QueryArgs) -> Result<Segmenter> {
    match &q.abbreviations {
        Some(path) => Ok(Segmenter::new(SentenceSplitter::new(Abbreviations::from_file(path)?))),
        None => Ok(Segmenter::default()),
    }
}

/// Everything fixed before scoring starts.
struct Plan {
    corpus: Corpus,
    queries: Vec<Query>,
    granularities: Vec<Granularity>,
    segmenter: Segmenter,
}

fn plan(data: &DataArgs, q: &QueryArgs) -> Result<Plan> {
    let qtypes: Vec<QueryType> = parse_list(&q.query_type)?;
    let granularities: Vec<Granularity> = parse_list(&q.granularity)?;
    let registry = load_registry(q)?;
    let segmenter = load_segmenter(q)?;
    let corpus = load_corpus(data)?;
    let mut queries = Vec::new();
    for task in selected_tasks(&corpus, data) {
        for &qtype in &qtypes {
            queries.push(registry.get(corpus.name(), &task, qtype)?.clone());
        }
    }
    Ok(Plan {
        corpus,
        queries,
        granularities,
        segmenter,
    })
}

fn cache_dir(out_dir: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| out_dir.join("cache"))
}

fn scores_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("{key}.scores.jsonl"))
}

fn units_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("{key}.units.jsonl"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))
}

fn write_units(path: &Path, units: &[ScoringUnit]) -> Result<()> {
    let mut out = String::new();
    for u in units {
        out.push_str(&serde_json::to_string(u).expect("unit serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io(path, e))
}

fn read_units(path: &Path) -> Result<Vec<ScoringUnit>> {
    let raw = fs::read_to_string(path).map_err(|e| io(path, e))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedRecord {
                path: path.display().to_string(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Model directory for a neural backend: the given directory itself when it
/// holds a manifest, otherwise its `<backend>` subdirectory.
fn model_dir(b: &BackendArgs) -> Result<PathBuf> {
    let base = b.model_path.clone().ok_or_else(|| {
        Error::BackendConfig(format!(
            "backend `{}` needs --model-path or ENTAILRANK_MODEL_DIR",
            b.backend
        ))
    })?;
    if base.join(MANIFEST_FILE).exists() || b.backend == "onnx" {
        Ok(base)
    } else {
        Ok(base.join(&b.backend))
    }
}

fn is_neural(backend: &str) -> bool {
    matches!(backend, "dlm" | "rlm" | "onnx")
}

/// Backend id recorded in scores and file names, resolved without loading a model.
fn backend_id(b: &BackendArgs) -> Result<String> {
    match b.backend.as_str() {
        "mock-marker" | "mock-oracle" | "mock-random" | "dlm" | "rlm" => Ok(b.backend.clone()),
        "onnx" => Ok(Manifest::load(&model_dir(b)?)?.backend_id),
        other => Err(Error::BackendConfig(format!("unknown backend `{other}`"))),
    }
}

fn open_backend(b: &BackendArgs, corpus: &Corpus, seed: Option<u64>) -> Result<Box<dyn EntailmentBackend>> {
    if b.batch_size == 0 {
        return Err(Error::BackendConfig("batch size must be positive".into()));
    }
    let normalization: Normalization = b.normalization.parse()?;
    let lanes = b.lanes.max(1);
    Ok(match b.backend.as_str() {
        "mock-marker" => Box::new(MockBackend::new(MockRule::Marker(b.marker.clone())).with_parallelism(lanes)),
        "mock-oracle" => Box::new(MockBackend::new(MockRule::gold_oracle(corpus)).with_parallelism(lanes)),
        "mock-random" => Box::new(
            MockBackend::new(MockRule::SeededRandom(require_seed(seed, "mock-random")?))
                .with_parallelism(lanes),
        ),
        "dlm" | "rlm" => {
            let backend = OnnxNliBackend::open(&model_dir(b)?, normalization)?;
            if backend.manifest().max_tokens != entailrank::segmenter::MODEL_TOKEN_LIMIT {
                return Err(Error::BackendConfig(format!(
                    "{} manifest declares max_tokens = {}, expected {}",
                    b.backend,
                    backend.manifest().max_tokens,
                    entailrank::segmenter::MODEL_TOKEN_LIMIT
                )));
            }
            Box::new(backend.with_id(b.backend.clone()))
        }
        "onnx" => Box::new(OnnxNliBackend::open(&model_dir(b)?, normalization)?),
        other => return Err(Error::BackendConfig(format!("unknown backend `{other}`"))),
    })
}

struct Scored {
    config: RankConfig,
    units: Option<Vec<ScoringUnit>>,
    scores: Vec<UnitScore>,
}

fn check_scores(config: &RankConfig, scores: &[UnitScore]) -> Result<()> {
    match scores.iter().find(|s| {
        s.task != config.task || s.qtype != config.qtype || s.backend_id != config.backend_id
    }) {
        Some(s) => Err(Error::MixedConfig(format!(
            "cached score for `{}` is {}/{}/{}, expected {}",
            s.doc_id, s.task, s.qtype, s.backend_id, config
        ))),
        None => Ok(()),
    }
}

fn score_all(plan: &Plan, b: &BackendArgs, seed: Option<u64>, out_dir: &Path) -> Result<Vec<Scored>> {
    let id = backend_id(b)?;
    let cache = cache_dir(out_dir, &b.cache_dir);
    if b.cache == CacheMode::Out {
        create_dir(&cache)?;
    }
    let mut backend: Option<Box<dyn EntailmentBackend>> = None;
    let mut out = Vec::new();
    for query in &plan.queries {
        for &granularity in &plan.granularities {
            let config = RankConfig {
                dataset: plan.corpus.name().to_string(),
                task: query.task.clone(),
                qtype: query.qtype,
                granularity,
                backend_id: id.clone(),
            };
            let key = config.key();
            if b.cache == CacheMode::In {
                let scores = load_cached(&scores_path(&cache, &key))?;
                check_scores(&config, &scores)?;
                let units_file = units_path(&cache, &key);
                let units = if units_file.exists() {
                    Some(read_units(&units_file)?)
                } else {
                    None
                };
                out.push(Scored { config, units, scores });
                continue;
            }
            if backend.is_none() {
                backend = Some(open_backend(b, &plan.corpus, seed)?);
            }
            let backend = backend.as_deref().expect("backend opened above");
            let units = corpus_units(&plan.corpus, &plan.segmenter, granularity, query, backend)?;
            let scores = score_units(&units, query, backend, b.batch_size, b.lanes.max(1))?;
            if b.cache == CacheMode::Out {
                save_cached(&scores_path(&cache, &key), &scores)?;
                write_units(&units_path(&cache, &key), &units)?;
            }
            eprintln!("scored {config}: {} units", units.len());
            out.push(Scored {
                config,
                units: Some(units),
                scores,
            });
        }
    }
    Ok(out)
}

fn rank_all(corpus: &Corpus, scored: &[Scored], out_dir: &Path) -> Result<Vec<Ranking>> {
    let rankings_dir = out_dir.join("rankings");
    let reading_dir = out_dir.join("reading");
    create_dir(&rankings_dir)?;
    create_dir(&reading_dir)?;
    let mut rankings = Vec::new();
    for s in scored {
        let ranking = ranker::rank(aggregate(&s.scores, corpus)?, s.config.clone())?;
        ranking.check_coverage(corpus)?;
        let key = s.config.key();
        write_ranking(&rankings_dir.join(format!("{key}.jsonl")), &ranking)?;
        let passages: HashMap<(String, usize), String> = s
            .units
            .iter()
            .flatten()
            .map(|u| ((u.doc_id.clone(), u.unit_index), u.text.clone()))
            .collect();
        let labels = corpus.labels_for(&s.config.task);
        let list = reading_list(&ranking, &passages, Some(&labels));
        write_reading_list(&reading_dir.join(format!("{key}.tsv")), &list)?;
        rankings.push(ranking);
    }
    Ok(rankings)
}

fn grid(step: u32) -> Result<Vec<f64>> {
    if step == 0 || step > 100 {
        return Err(Error::InvalidGrid);
    }
    let mut g: Vec<f64> = (1..=100 / step).map(|k| f64::from(k * step) / 100.0).collect();
    if g.last() != Some(&1.0) {
        g.push(1.0);
    }
    Ok(g)
}

fn eval_all(
    corpus: &Corpus,
    rankings: &[Ranking],
    grid_step: u32,
    out_dir: &Path,
) -> Result<(Vec<MetricsRow>, Vec<RecallCurve>)> {
    let grid = grid(grid_step)?;
    // corpus task order, then query type, granularity and backend
    let mut ordered: Vec<&Ranking> = rankings.iter().collect();
    ordered.sort_by_key(|r| {
        let c = &r.config;
        let task = corpus.tasks().iter().position(|t| *t == c.task);
        (task, c.qtype, c.granularity, c.backend_id.clone())
    });
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for ranking in ordered {
        let labels = corpus.labels_for(&ranking.config.task);
        rows.push(metrics_row(ranking, &labels)?);
        curves.push(recall_curve(ranking, &labels, &grid)?);
    }
    create_dir(out_dir)?;
    write_metrics(&out_dir.join("metrics.tsv"), &rows)?;
    write_curves(&out_dir.join("curves.tsv"), &curves)?;
    Ok((rows, curves))
}

fn report_all(rows: &[MetricsRow], curves: &[RecallCurve], out_dir: &Path) -> Result<()> {
    let table = emit_tables(rows, out_dir)?;
    emit_curve_plot(curves, &out_dir.join(PLOT_FILE))?;
    print!("{}", table.to_text());
    println!();
    print!("{}", average_table_text(rows));
    Ok(())
}

pub fn score(a: &ScoreArgs) -> Result<()> {
    let plan = plan(&a.data, &a.query)?;
    if a.backend.cache == CacheMode::In {
        return Err(Error::BackendConfig("`score` cannot read from the cache; use --cache out or off".into()));
    }
    let mut backend = a.backend.clone();
    backend.cache = CacheMode::Out;
    score_all(&plan, &backend, a.data.seed, &a.out_dir)?;
    Ok(())
}

/// Sorted files in `dir` ending in `suffix`, with the key before the suffix.
fn keyed_files(dir: &Path, suffix: &str) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io(dir, e))? {
        let path = entry.map_err(|e| io(dir, e))?.path();
        if let Some(key) = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_suffix(suffix))
        {
            out.push((key.to_string(), path));
        }
    }
    out.sort();
    Ok(out)
}

pub fn rank(a: &RankArgs) -> Result<()> {
    let corpus = load_corpus(&a.data)?;
    let cache = cache_dir(&a.out_dir, &a.cache_dir);
    let mut scored = Vec::new();
    for (key, path) in keyed_files(&cache, ".scores.jsonl")? {
        let config = RankConfig::from_key(&key)?;
        if config.dataset != corpus.name() || !task_selected(&config, &a.data) {
            continue;
        }
        let scores = load_cached(&path)?;
        check_scores(&config, &scores)?;
        let units_file = units_path(&cache, &key);
        let units = if units_file.exists() {
            Some(read_units(&units_file)?)
        } else {
            None
        };
        scored.push(Scored { config, units, scores });
    }
    if scored.is_empty() {
        return Err(Error::EmptyInput("no cached scores for this dataset"));
    }
    rank_all(&corpus, &scored, &a.out_dir)?;
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let corpus = load_corpus(&a.data)?;
    let mut rankings = Vec::new();
    for (key, path) in keyed_files(&a.out_dir.join("rankings"), ".jsonl")? {
        let config = RankConfig::from_key(&key)?;
        if config.dataset != corpus.name() || !task_selected(&config, &a.data) {
            continue;
        }
        let ranking = read_ranking(&path, config)?;
        ranking.check_coverage(&corpus)?;
        rankings.push(ranking);
    }
    if rankings.is_empty() {
        return Err(Error::EmptyInput("no rankings for this dataset"));
    }
    eval_all(&corpus, &rankings, a.grid_step, &a.out_dir)?;
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let rows = read_metrics(&a.out_dir.join("metrics.tsv"))?;
    let curves = read_curves(&a.out_dir.join("curves.tsv"))?;
    report_all(&rows, &curves, &a.out_dir)
}

pub fn run(a: &RunArgs) -> Result<()> {
    let plan = plan(&a.data, &a.query)?;
    let scored = score_all(&plan, &a.backend, a.data.seed, &a.out_dir)?;
    let rankings = rank_all(&plan.corpus, &scored, &a.out_dir)?;
    let (rows, curves) = eval_all(&plan.corpus, &rankings, a.grid_step, &a.out_dir)?;
    report_all(&rows, &curves, &a.out_dir)
}

/// Nearest existing ancestor of `dir` must be a writable directory.
fn check_writable(dir: &Path) -> Result<()> {
    let mut probe_dir = dir;
    while !probe_dir.exists() {
        match probe_dir.parent() {
            Some(p) if !p.as_os_str().is_empty() => probe_dir = p,
            _ => {
                probe_dir = Path::new(".");
                break;
            }
        }
    }
    if !probe_dir.is_dir() {
        return Err(io(
            probe_dir,
            std::io::Error::new(std::io::ErrorKind::NotADirectory, "not a directory, cannot hold output"),
        ));
    }
    let probe = probe_dir.join(format!(".entailrank-write-check-{}", std::process::id()));
    fs::write(&probe, b"").map_err(|e| io(probe_dir, e))?;
    fs::remove_file(&probe).map_err(|e| io(&probe, e))
}

struct Diagnostics {
    first_error: Option<ErrorKind>,
}

impl Diagnostics {
    fn ok(&self, msg: impl AsRef<str>) {
        println!("ok: {}", msg.as_ref());
    }

    fn warn(&self, msg: impl AsRef<str>) {
        println!("warning: {}", msg.as_ref());
    }

    fn error(&mut self, e: &Error) {
        println!("error: {e}");
        self.first_error.get_or_insert(e.kind());
    }

    fn check<T>(&mut self, r: Result<T>) -> Option<T> {
        r.map_err(|e| self.error(&e)).ok()
    }
}

/// Prints one diagnostic per check; returns the kind of the first error.
pub fn validate(a: &RunArgs) -> Option<ErrorKind> {
    let mut d = Diagnostics { first_error: None };

    let qtypes: Vec<QueryType> = a
        .query
        .query_type
        .iter()
        .filter_map(|q| d.check(q.trim().parse()))
        .collect();
    let granularities: Vec<Granularity> = a
        .query
        .granularity
        .iter()
        .filter_map(|g| d.check(g.trim().parse()))
        .collect();
    d.check(a.backend.normalization.parse::<Normalization>());
    if a.backend.batch_size == 0 {
        d.error(&Error::BackendConfig("batch size must be positive".into()));
    }
    if a.backend.backend == "mock-random" && a.backend.cache != CacheMode::In && a.data.seed.is_none() {
        d.error(&Error::BackendConfig("mock-random requires --seed".into()));
    }
    let registry = d.check(load_registry(&a.query));
    d.check(load_segmenter(&a.query));

    if !a.data.dataset_path.exists() {
        d.error(&io(
            &a.data.dataset_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset path does not exist"),
        ));
    }
    let corpus = if a.data.dataset_path.exists() {
        d.check(load_corpus(&a.data))
    } else {
        None
    };
    if let Some(corpus) = &corpus {
        let stats = verify_stats(corpus);
        let mut mismatch = !stats.mismatches.is_empty();
        for m in &stats.mismatches {
            d.error(&Error::Layout(format!(
                "stat mismatch for `{}`: expected {} positives ({:.4}), found {} ({:.4})",
                m.task, m.expected.positives, m.expected.fraction, m.observed_positives, m.observed_fraction
            )));
        }
        if a.data.adapter == Adapter::India {
            for (what, expected, found) in [
                ("documents", INDIA_DOCUMENTS, stats.documents),
                ("sentences", INDIA_SENTENCES, stats.sentences),
            ] {
                if expected != found {
                    mismatch = true;
                    d.error(&Error::Layout(format!(
                        "stat mismatch: expected {expected} {what}, found {found}"
                    )));
                }
            }
        }
        let counts: Vec<String> = stats
            .tasks
            .iter()
            .map(|t| format!("{}={}", t.task, t.positives))
            .collect();
        let verdict = match (corpus.expected_stats().is_some(), mismatch) {
            (_, true) => "stats differ",
            (true, false) => "stats match",
            (false, false) => "no reference stats",
        };
        d.ok(format!(
            "{} documents, {verdict} ({})",
            stats.documents,
            counts.join(", ")
        ));
    }

    let id = d.check(backend_id(&a.backend));
    let cache = cache_dir(&a.out_dir, &a.backend.cache_dir);
    let tokenizer: Option<Box<dyn TokenCounter>> = if a.backend.cache == CacheMode::In {
        None
    } else if is_neural(&a.backend.backend) {
        let verified = d.check(model_dir(&a.backend)).and_then(|dir| {
            let manifest = d.check(Manifest::load(&dir))?;
            let (_, tokenizer) = d.check(manifest.verify(&dir))?;
            d.ok(format!("model manifest `{}` verified", dir.display()));
            Some((manifest, tokenizer))
        });
        verified.and_then(|(_, path)| {
            d.check(HfTokenCounter::from_file(&path))
                .map(|t| Box::new(t) as Box<dyn TokenCounter>)
        })
    } else {
        Some(Box::new(WhitespaceTokenizer::default()))
    };
    let max_tokens = if is_neural(&a.backend.backend) {
        model_dir(&a.backend)
            .and_then(|dir| Manifest::load(&dir))
            .map_or(entailrank::segmenter::MODEL_TOKEN_LIMIT, |m| m.max_tokens)
    } else {
        entailrank::segmenter::MODEL_TOKEN_LIMIT
    };

    if let (Some(registry), Some(corpus)) = (&registry, &corpus) {
        let mut resolved = 0;
        for task in selected_tasks(corpus, &a.data) {
            for &qtype in &qtypes {
                let Some(query) = d.check(registry.get(corpus.name(), &task, qtype)) else {
                    continue;
                };
                resolved += 1;
                if let Some(tok) = &tokenizer {
                    d.check(TokenBudget::for_hypothesis(&query.text, tok.as_ref(), max_tokens));
                }
                if let (CacheMode::In, Some(id)) = (a.backend.cache, &id) {
                    for &granularity in &granularities {
                        let key = RankConfig {
                            dataset: corpus.name().to_string(),
                            task: task.clone(),
                            qtype,
                            granularity,
                            backend_id: id.clone(),
                        }
                        .key();
                        let path = scores_path(&cache, &key);
                        if !path.exists() {
                            d.error(&io(
                                &path,
                                std::io::Error::new(std::io::ErrorKind::NotFound, "missing score cache file"),
                            ));
                        }
                    }
                }
            }
        }
        d.ok(format!("{resolved} queries resolved"));
    }

    match check_writable(&a.out_dir) {
        Ok(()) => d.ok(format!("output directory `{}` is writable", a.out_dir.display())),
        Err(e) => {
            println!("error: output directory `{}` is not writable", a.out_dir.display());
            d.error(&e);
        }
    }
    if a.backend.cache == CacheMode::Out && a.backend.cache_dir.is_some() {
        if let Err(e) = check_writable(&cache) {
            d.error(&e);
        }
    }
    if d.first_error.is_none() && qtypes.is_empty() {
        d.warn("no query types selected");
    }
    d.first_error
}
