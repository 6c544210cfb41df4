//! Flat `key = value` experiment configuration.
//!
//! Layers, lowest first: built-in defaults, the `--config` file, `--set`
//! pairs, then dedicated flags. Unknown keys are errors. The resolved
//! configuration is written next to every artifact.

use std::fmt::Write as _;
use std::path::PathBuf;

use haystack_core::ensemble::{ScalerFit, TrainConfig};
use haystack_core::metrics::Mode;
use haystack_core::svr::Gamma;
use haystack_core::synth::SynthConfig;
use haystack_core::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub threads: usize,
    pub mode: Mode,
    pub cutoffs: Vec<usize>,
    pub passages: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub docmap: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub run: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            synth: SynthConfig {
                seed: train.seed,
                ..SynthConfig::default()
            },
            train,
            threads: 0,
            mode: Mode::Passage,
            cutoffs: vec![1, 5, 10, 20, 50, 100],
            passages: None,
            queries: None,
            qrels: None,
            docmap: None,
            model: None,
            run: None,
            output: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidParams(format!("{key}: cannot parse {value:?}")))
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

/// Every recognized key, in echo order.
pub const KEYS: &[&str] = &[
    "k",
    "subsets",
    "overlap",
    "c",
    "epsilon",
    "gamma",
    "tol",
    "max_passes",
    "kernel",
    "solver",
    "threshold",
    "split",
    "seed",
    "metric",
    "scaler_fit",
    "missing_positive",
    "infer_k",
    "n_passages",
    "n_queries",
    "dim",
    "n_clusters",
    "noise_sigma",
    "cluster_sigma",
    "passages_per_doc",
    "threads",
    "mode",
    "cutoffs",
    "passages",
    "queries",
    "qrels",
    "docmap",
    "model",
    "run",
    "output",
];

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let path = || (!value.is_empty()).then(|| PathBuf::from(value));
        match key {
            "k" => self.train.k = parse(key, value)?,
            "subsets" => self.train.s = parse(key, value)?,
            "overlap" => self.train.overlap = parse(key, value)?,
            "c" => self.train.svr.c = parse(key, value)?,
            "epsilon" => self.train.svr.epsilon = parse(key, value)?,
            "gamma" => self.train.svr.gamma = parse::<Gamma>(key, value)?,
            "tol" => self.train.svr.tol = parse(key, value)?,
            "max_passes" => {
                self.train.svr.max_passes = if value.is_empty() {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "kernel" => self.train.svr.kernel = value.to_string(),
            "solver" => self.train.svr.solver = value.to_string(),
            "threshold" => self.train.threshold = parse(key, value)?,
            "split" => self.train.split = parse(key, value)?,
            "seed" => {
                let seed = parse(key, value)?;
                self.train.seed = seed;
                self.synth.seed = seed;
            }
            "metric" => self.train.metric = value.to_string(),
            "scaler_fit" => self.train.scaler_fit = parse::<ScalerFit>(key, value)?,
            "missing_positive" => self.train.missing_positive = value.to_string(),
            "infer_k" => {
                self.train.infer_k = if value.is_empty() {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "n_passages" => self.synth.n_passages = parse(key, value)?,
            "n_queries" => self.synth.n_queries = parse(key, value)?,
            "dim" => self.synth.dim = parse(key, value)?,
            "n_clusters" => self.synth.n_clusters = parse(key, value)?,
            "noise_sigma" => self.synth.noise_sigma = parse(key, value)?,
            "cluster_sigma" => self.synth.cluster_sigma = parse(key, value)?,
            "passages_per_doc" => self.synth.passages_per_doc = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "mode" => self.mode = parse::<Mode>(key, value)?,
            "cutoffs" => {
                self.cutoffs = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "passages" => self.passages = path(),
            "queries" => self.queries = path(),
            "qrels" => self.qrels = path(),
            "docmap" => self.docmap = path(),
            "model" => self.model = path(),
            "run" => self.run = path(),
            "output" => self.output = path(),
            _ => return Err(Error::InvalidParams(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> String {
        let t = &self.train;
        let s = &self.synth;
        match key {
            "k" => t.k.to_string(),
            "subsets" => t.s.to_string(),
            "overlap" => t.overlap.to_string(),
            "c" => t.svr.c.to_string(),
            "epsilon" => t.svr.epsilon.to_string(),
            "gamma" => t.svr.gamma.to_string(),
            "tol" => t.svr.tol.to_string(),
            "max_passes" => t.svr.max_passes.map(|v| v.to_string()).unwrap_or_default(),
            "kernel" => t.svr.kernel.clone(),
            "solver" => t.svr.solver.clone(),
            "threshold" => t.threshold.to_string(),
            "split" => t.split.to_string(),
            "seed" => t.seed.to_string(),
            "metric" => t.metric.clone(),
            "scaler_fit" => t.scaler_fit.to_string(),
            "missing_positive" => t.missing_positive.clone(),
            "infer_k" => t.infer_k.map(|v| v.to_string()).unwrap_or_default(),
            "n_passages" => s.n_passages.to_string(),
            "n_queries" => s.n_queries.to_string(),
            "dim" => s.dim.to_string(),
            "n_clusters" => s.n_clusters.to_string(),
            "noise_sigma" => s.noise_sigma.to_string(),
            "cluster_sigma" => s.cluster_sigma.to_string(),
            "passages_per_doc" => s.passages_per_doc.to_string(),
            "threads" => self.threads.to_string(),
            "mode" => self.mode.to_string(),
            "cutoffs" => self
                .cutoffs
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "passages" => opt_path(&self.passages),
            "queries" => opt_path(&self.queries),
            "qrels" => opt_path(&self.qrels),
            "docmap" => opt_path(&self.docmap),
            "model" => opt_path(&self.model),
            "run" => opt_path(&self.run),
            "output" => opt_path(&self.output),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Applies a config file. Blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::MalformedLine {
                    line: n + 1,
                    reason: "expected key = value".into(),
                });
            };
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// `key = value` lines for every key; parses back to the same config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key));
        }
        out
    }

    /// The same pairs as `# key\tvalue` comment lines, for TSV outputs.
    pub fn to_comment_header(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "# {key}\t{}", self.get(key));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Object(
            KEYS.iter()
                .map(|k| (k.to_string(), serde_json::Value::String(self.get(k))))
                .collect(),
        )
    }
}
