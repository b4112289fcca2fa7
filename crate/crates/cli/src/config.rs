//! Flat `key = value` run configuration. Later sources override earlier
//! ones: built-in defaults, then the config file, then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use srnn_core::data::SyntheticSpec;
use srnn_core::eval::{Horizon, DEFAULT_GRAPH_NODES};
use srnn_core::{Mode, TrainConfig, ZPrior};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub data: Option<PathBuf>,
    pub train_data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub album: Option<String>,
    pub concept: String,
    pub n: usize,
    pub mode: Mode,
    pub prior: ZPrior,
    pub samples: usize,
    pub train_ratio: f64,
    pub method: String,
    pub horizon: Horizon,
    pub ns: Vec<usize>,
    pub clusters: usize,
    pub graph_nodes: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub grad_clip: f64,
    pub plateau_patience: usize,
    pub lr_decay_factor: f64,
    pub max_epochs: usize,
    pub validation_samples: usize,
    pub num_states: usize,
    pub prototype_noise: f64,
    pub emission_noise: f64,
    pub repeats_min: usize,
    pub repeats_max: usize,
    pub distractor_prob: f64,
    pub num_albums: usize,
    pub dim: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let s = SyntheticSpec::default();
        Self {
            seed: 0,
            threads: 1,
            data: None,
            train_data: None,
            model: None,
            out: None,
            truth: None,
            album: None,
            concept: "synthetic".into(),
            n: 10,
            mode: Mode::Skip,
            prior: ZPrior::Subset,
            samples: 500,
            train_ratio: 0.9,
            method: "s-rnn".into(),
            horizon: Horizon::Long,
            ns: vec![5, 10, 20],
            clusters: 100,
            graph_nodes: DEFAULT_GRAPH_NODES,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            hidden: t.hidden,
            grad_clip: t.grad_clip,
            plateau_patience: t.plateau_patience,
            lr_decay_factor: t.lr_decay_factor,
            max_epochs: t.max_epochs,
            validation_samples: t.validation_samples,
            num_states: s.num_states,
            prototype_noise: s.prototype_noise,
            emission_noise: s.emission_noise,
            repeats_min: s.repeats_min,
            repeats_max: s.repeats_max,
            distractor_prob: s.distractor_prob,
            num_albums: s.num_albums,
            dim: s.dim,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Validation(format!("config key `{key}`: cannot parse `{value}`: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "data" => self.data = Some(PathBuf::from(v)),
            "train_data" => self.train_data = Some(PathBuf::from(v)),
            "model" => self.model = Some(PathBuf::from(v)),
            "out" => self.out = Some(PathBuf::from(v)),
            "truth" => self.truth = Some(PathBuf::from(v)),
            "album" => self.album = Some(v.to_string()),
            "concept" => self.concept = v.to_string(),
            "n" => self.n = parse(key, v)?,
            "mode" => self.mode = parse(key, v)?,
            "prior" => self.prior = parse(key, v)?,
            "samples" => self.samples = parse(key, v)?,
            "train_ratio" => self.train_ratio = parse(key, v)?,
            "method" => self.method = v.to_string(),
            "horizon" => self.horizon = parse(key, v)?,
            "ns" => self.ns = parse_list(key, v)?,
            "clusters" => self.clusters = parse(key, v)?,
            "graph_nodes" => self.graph_nodes = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "grad_clip" => self.grad_clip = parse(key, v)?,
            "plateau_patience" => self.plateau_patience = parse(key, v)?,
            "lr_decay_factor" => self.lr_decay_factor = parse(key, v)?,
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "validation_samples" => self.validation_samples = parse(key, v)?,
            "num_states" => self.num_states = parse(key, v)?,
            "prototype_noise" => self.prototype_noise = parse(key, v)?,
            "emission_noise" => self.emission_noise = parse(key, v)?,
            "repeats_min" => self.repeats_min = parse(key, v)?,
            "repeats_max" => self.repeats_max = parse(key, v)?,
            "distractor_prob" => self.distractor_prob = parse(key, v)?,
            "num_albums" => self.num_albums = parse(key, v)?,
            "dim" => self.dim = parse(key, v)?,
            other => return Err(CliError::Validation(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Apply a config file: one `key = value` per line, `#` starts a
    /// comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Validation(format!("{}:{}: expected `key = value`", path.display(), lineno + 1))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            hidden: self.hidden,
            grad_clip: self.grad_clip,
            plateau_patience: self.plateau_patience,
            lr_decay_factor: self.lr_decay_factor,
            max_epochs: self.max_epochs,
            validation_samples: self.validation_samples,
            seed: self.seed,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            num_states: self.num_states,
            prototype_noise: self.prototype_noise,
            emission_noise: self.emission_noise,
            repeats_min: self.repeats_min,
            repeats_max: self.repeats_max,
            distractor_prob: self.distractor_prob,
            num_albums: self.num_albums,
            dim: self.dim,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, why: &str| Err(CliError::Validation(format!("invalid `{field}`: {why}")));
        if self.threads == 0 {
            return bad("threads", "must be at least 1");
        }
        if self.n < 2 {
            return bad("n", "story length must be at least 2");
        }
        if self.samples == 0 {
            return bad("samples", "must be at least 1");
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return bad("train_ratio", "must lie in (0, 1)");
        }
        if self.clusters == 0 {
            return bad("clusters", "must be at least 1");
        }
        if self.graph_nodes == 0 {
            return bad("graph_nodes", "must be at least 1");
        }
        if self.ns.is_empty() || self.ns.iter().any(|&n| n < 2) {
            return bad("ns", "needs one or more story lengths, each at least 2");
        }
        if let Err((field, why)) = self.train_config().validate() {
            return bad(field, &why);
        }
        Ok(())
    }

    pub fn require<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
        value
            .as_deref()
            .ok_or_else(|| CliError::Validation(format!("missing required `{key}` (flag --{key} or config key)")))
    }

    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
