//! `haystack`: synthesize, train, retrieve and evaluate bagged SVR retrieval
//! experiments.

mod config;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use haystack_core::corpus::{self, CorpusIndex, EmbeddingMatrix};
use haystack_core::ensemble::{self, RetrieveOptions};
use haystack_core::metrics::{self, Mode};
use haystack_core::{bagging, knn, run, synth, Error, ErrorClass};
use sha2::{Digest, Sha256};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "haystack",
    version,
    about = "Bagged SVR needle-in-a-haystack retrieval"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    subsets: Option<usize>,
    #[arg(long, global = true)]
    overlap: Option<f64>,
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    metric: Option<String>,
    /// passage or document
    #[arg(long, global = true)]
    mode: Option<String>,
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Any config key, as `key=value`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset into the `--output` directory.
    Synth,
    /// Train an ensemble and write the model file.
    Train(Paths),
    /// Score queries with a trained model and write a TREC run.
    Retrieve(Paths),
    /// Score a run against judgments.
    Evaluate(Paths),
    /// Distance from each query to its relevant passage.
    Distances(Paths),
    /// Print the bagging plan as JSON.
    Plan(Paths),
}

#[derive(Args, Default)]
struct Paths {
    #[arg(long)]
    passages: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    qrels: Option<PathBuf>,
    #[arg(long)]
    docmap: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    run: Option<PathBuf>,
}

/// An error tagged with the resource it concerns.
struct Failure {
    resource: Option<&'static str>,
    error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Self {
            resource: None,
            error,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let message = match &self.error {
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                "not found".to_string()
            }
            other => other.to_string(),
        };
        match self.resource {
            Some(r) => write!(f, "{r}: {message}"),
            None => f.write_str(&message),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

trait Tag<T> {
    fn tag(self, resource: &'static str) -> Outcome<T>;
}

impl<T> Tag<T> for haystack_core::Result<T> {
    fn tag(self, resource: &'static str) -> Outcome<T> {
        self.map_err(|error| Failure {
            resource: Some(resource),
            error,
        })
    }
}

fn required(path: &Option<PathBuf>, resource: &'static str) -> Outcome<PathBuf> {
    path.clone().ok_or(Failure {
        resource: Some(resource),
        error: Error::InvalidParams("path not set".into()),
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>, resource: &'static str) -> Outcome<()> {
    fs::write(path, contents)
        .map_err(|e| Error::io(path, e))
        .tag(resource)
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

/// Resolves the layered config; returns it with the keys set explicitly.
fn resolve(common: &Common, paths: &Paths) -> Outcome<(ExperimentConfig, BTreeSet<String>)> {
    let mut cfg = ExperimentConfig::default();
    let mut touched = BTreeSet::new();
    let mut apply = |cfg: &mut ExperimentConfig, key: &str, value: &str| -> Outcome<()> {
        touched.insert(key.to_string());
        cfg.set(key, value).tag("config")
    };
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(path, e))
            .tag("config")?;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Failure {
                resource: Some("config"),
                error: Error::MalformedLine {
                    line: n + 1,
                    reason: "expected key = value".into(),
                },
            })?;
            apply(&mut cfg, key.trim(), value)?;
        }
    }
    for pair in &common.set {
        let (key, value) = pair.split_once('=').ok_or(Failure {
            resource: Some("set"),
            error: Error::InvalidParams(format!("expected key=value, got {pair:?}")),
        })?;
        apply(&mut cfg, key.trim(), value)?;
    }
    let flags: [(&str, Option<String>); 10] = [
        ("threads", common.threads.map(|v| v.to_string())),
        ("seed", common.seed.map(|v| v.to_string())),
        ("k", common.k.map(|v| v.to_string())),
        ("subsets", common.subsets.map(|v| v.to_string())),
        ("overlap", common.overlap.map(|v| v.to_string())),
        ("threshold", common.threshold.map(|v| v.to_string())),
        ("metric", common.metric.clone()),
        ("mode", common.mode.clone()),
        (
            "output",
            common.output.as_ref().map(|p| p.display().to_string()),
        ),
        (
            "passages",
            paths.passages.as_ref().map(|p| p.display().to_string()),
        ),
    ];
    let more: [(&str, Option<String>); 5] = [
        (
            "queries",
            paths.queries.as_ref().map(|p| p.display().to_string()),
        ),
        (
            "qrels",
            paths.qrels.as_ref().map(|p| p.display().to_string()),
        ),
        (
            "docmap",
            paths.docmap.as_ref().map(|p| p.display().to_string()),
        ),
        (
            "model",
            paths.model.as_ref().map(|p| p.display().to_string()),
        ),
        ("run", paths.run.as_ref().map(|p| p.display().to_string())),
    ];
    for (key, value) in flags.into_iter().chain(more) {
        if let Some(value) = value {
            apply(&mut cfg, key, &value)?;
        }
    }
    Ok((cfg, touched))
}

fn load_index(passages: &Path, docmap: Option<&Path>) -> Outcome<CorpusIndex> {
    let ids = corpus::load_ids(corpus::ids_path(passages)).tag("passage ids")?;
    match docmap {
        Some(path) => {
            let map = corpus::load_docmap(path).tag("docmap")?;
            CorpusIndex::with_documents(ids, &map).tag("docmap")
        }
        None => CorpusIndex::new(ids).tag("passage ids"),
    }
}

fn load_passages(cfg: &ExperimentConfig) -> Outcome<(EmbeddingMatrix, CorpusIndex)> {
    let path = required(&cfg.passages, "passages")?;
    let m = corpus::load_embeddings(&path).tag("passages")?;
    let index = load_index(&path, cfg.docmap.as_deref())?;
    index.check_matrix(&m).tag("passage ids")?;
    Ok((m, index))
}

fn run_tag(model_bytes: &[u8]) -> String {
    let digest = hex::encode(Sha256::digest(model_bytes));
    format!("haystack-{}", &digest[..12])
}

fn cmd_synth(cfg: &ExperimentConfig) -> Outcome<()> {
    let dir = required(&cfg.output, "output")?;
    eprintln!(
        "generating {} passages, {} queries",
        cfg.synth.n_passages, cfg.synth.n_queries
    );
    let data = synth::generate(&cfg.synth)?;
    let report = synth::self_check(&cfg.synth, &data)?;
    synth::write_dataset(&data, &dir).tag("output")?;
    let json = serde_json::json!({ "config": cfg.to_json(), "report": report });
    write_file(
        &dir.join(synth::files::REPORT),
        format!("{json:#}\n"),
        "output",
    )?;
    write_file(&dir.join("experiment.conf"), cfg.to_text(), "output")?;
    for (k, frac) in &report.within_top {
        println!("needle within top {k}\t{frac}");
    }
    Ok(())
}

fn cmd_train(cfg: &ExperimentConfig) -> Outcome<()> {
    let model_path = required(&cfg.model, "model")?;
    let (m, index) = load_passages(cfg)?;
    let queries = corpus::load_queries(required(&cfg.queries, "queries")?).tag("queries")?;
    let qrels = corpus::load_qrels(required(&cfg.qrels, "qrels")?).tag("qrels")?;
    eprintln!(
        "training {} members on {} passages, {} queries",
        cfg.train.s,
        m.n_rows(),
        queries.len()
    );
    let (model, report) = ensemble::train_ensemble(&m, &index, &queries, &qrels, &cfg.train)?;
    let bytes = ensemble::to_bytes(&model)?;
    write_file(&model_path, &bytes, "model")?;
    let json = serde_json::json!({
        "config": cfg.to_json(),
        "model_sha256": hex::encode(Sha256::digest(&bytes)),
        "report": report,
    });
    write_file(
        &sidecar(&model_path, ".report.json"),
        format!("{json:#}\n"),
        "model",
    )?;
    if !report.all_converged() {
        eprintln!("warning: some members hit the iteration budget before converging");
    }
    if report.queries_without_embedding > 0 {
        eprintln!(
            "skipped {} judged queries without embeddings",
            report.queries_without_embedding
        );
    }
    match &report.test {
        Some(test) => print!("{}", test.to_table()),
        None => println!("no held-out rows"),
    }
    Ok(())
}

fn cmd_retrieve(cfg: &ExperimentConfig, touched: &BTreeSet<String>) -> Outcome<()> {
    let model_path = required(&cfg.model, "model")?;
    let bytes = fs::read(&model_path)
        .map_err(|e| Error::io(&model_path, e))
        .tag("model")?;
    let model = ensemble::from_bytes(&bytes).tag("model")?;
    let run_path = required(&cfg.run.clone().or_else(|| cfg.output.clone()), "run")?;
    let (m, index) = load_passages(cfg)?;
    let queries = corpus::load_queries(required(&cfg.queries, "queries")?).tag("queries")?;
    let mut opts = RetrieveOptions::from_config(&model.config);
    if touched.contains("threshold") {
        opts.threshold = cfg.train.threshold;
    }
    let run = model.retrieve_all(&m, &index, &queries, &opts)?;
    let tag = run_tag(&bytes);
    write_file(&run_path, run.to_trec(&tag), "run")?;

    let mut resolved = cfg.clone();
    resolved.train = model.config.clone();
    resolved.train.threshold = opts.threshold;
    resolved.train.infer_k = Some(opts.k);
    resolved.run = Some(run_path.clone());
    let header = format!("# tag = {tag}\n");
    write_file(
        &sidecar(&run_path, ".config"),
        header + &resolved.to_text(),
        "run",
    )?;
    let positives: usize = run.queries.iter().map(|q| q.positives().count()).sum();
    eprintln!(
        "{} queries, {} candidates, {positives} positive",
        run.queries.len(),
        run.n_entries()
    );
    Ok(())
}

/// Threshold for reading back a run: explicit setting, else the run's config
/// sidecar, else every listed entry counts as positive.
/// Configuration recorded next to a run by `retrieve`, if present.
fn run_config(run_path: &Path) -> Outcome<Option<ExperimentConfig>> {
    let path = sidecar(run_path, ".config");
    match fs::read_to_string(&path) {
        Ok(text) => {
            let mut side = ExperimentConfig::default();
            side.apply_text(&text).tag("run config")?;
            Ok(Some(side))
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)).tag("run config"),
    }
}

fn cmd_evaluate(cfg: &ExperimentConfig, touched: &BTreeSet<String>) -> Outcome<()> {
    let run_path = required(&cfg.run, "run")?;
    let side = run_config(&run_path)?;
    // an explicit threshold wins over the one the run was made with
    let threshold = if touched.contains("threshold") {
        Some(cfg.train.threshold)
    } else {
        side.as_ref().map(|s| s.train.threshold)
    };
    // header: the settings that produced the run, with this evaluation's own keys on top
    let mut shown = side.unwrap_or_else(|| cfg.clone());
    shown.train.threshold = threshold.unwrap_or(shown.train.threshold);
    shown.mode = cfg.mode;
    shown.cutoffs.clone_from(&cfg.cutoffs);
    shown.qrels.clone_from(&cfg.qrels);
    shown.docmap.clone_from(&cfg.docmap);
    shown.run = Some(run_path.clone());
    shown.output.clone_from(&cfg.output);
    let mut run = run::load_trec(&run_path, threshold).tag("run")?;
    let mut qrels = corpus::load_qrels(required(&cfg.qrels, "qrels")?).tag("qrels")?;
    if cfg.mode == Mode::Document {
        let docmap = required(&cfg.docmap, "docmap")?;
        let map = corpus::load_docmap(&docmap).tag("docmap")?;
        let mut ids: Vec<String> = map.keys().cloned().collect();
        ids.sort_unstable();
        let index = CorpusIndex::with_documents(ids, &map).tag("docmap")?;
        run = corpus::to_document_run(&run, &index).tag("docmap")?;
        qrels = qrels.to_documents(&index).tag("docmap")?;
    }
    let result = metrics::evaluate(&run, &qrels, cfg.mode, &cfg.cutoffs)?;
    let mut out = shown.to_comment_header();
    out.push_str(&format!(
        "# positive_threshold\t{}\n",
        threshold.map(|t| t.to_string()).unwrap_or_default()
    ));
    out.push_str(&result.to_tsv());
    emit(cfg, &out)
}

fn cmd_distances(cfg: &ExperimentConfig) -> Outcome<()> {
    let (m, index) = load_passages(cfg)?;
    let queries = corpus::load_queries(required(&cfg.queries, "queries")?).tag("queries")?;
    let qrels = corpus::load_qrels(required(&cfg.qrels, "qrels")?).tag("qrels")?;
    let metric = knn::metric(&cfg.train.metric)?;
    let report = knn::distance_stats(&queries, &qrels, &m, &index, metric.as_ref())?;
    emit(cfg, &(cfg.to_comment_header() + &report.to_tsv()))
}

fn cmd_plan(cfg: &ExperimentConfig) -> Outcome<()> {
    let n = match &cfg.passages {
        Some(path) => corpus::load_embeddings(path).tag("passages")?.n_rows(),
        None => cfg.synth.n_passages,
    };
    let plan = bagging::make_plan(n, cfg.train.s, cfg.train.overlap, cfg.train.seed)?;
    let json = serde_json::json!({ "config": cfg.to_json(), "plan": plan });
    emit(cfg, &format!("{json}\n"))
}

/// Writes to `--output` when set, else stdout.
fn emit(cfg: &ExperimentConfig, text: &str) -> Outcome<()> {
    match &cfg.output {
        Some(path) => write_file(path, text, "output"),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::InvalidInput => 1,
        ErrorClass::MissingResource => 2,
        ErrorClass::Internal => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: {}", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    let empty = Paths::default();
    let paths = match &cli.command {
        Command::Train(p)
        | Command::Retrieve(p)
        | Command::Evaluate(p)
        | Command::Distances(p)
        | Command::Plan(p) => p,
        Command::Synth => &empty,
    };
    let result = resolve(&cli.common, paths).and_then(|(cfg, touched)| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| Error::InvalidParams(format!("threads: {e}")))?;
        match cli.command {
            Command::Synth => cmd_synth(&cfg),
            Command::Train(_) => cmd_train(&cfg),
            Command::Retrieve(_) => cmd_retrieve(&cfg, &touched),
            Command::Evaluate(_) => cmd_evaluate(&cfg, &touched),
            Command::Distances(_) => cmd_distances(&cfg),
            Command::Plan(_) => cmd_plan(&cfg),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(exit_code(failure.error.class()))
        }
    }
}
