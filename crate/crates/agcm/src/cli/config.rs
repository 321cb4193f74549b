//! Experiment configuration: a flat `key = value` file with `#` comments.
//!
//! Every knob has a default, so an empty file (or none at all) describes a
//! complete experiment. The effective configuration echoed into a run
//! directory uses the same grammar and parses back to the same value.

use std::path::{Path, PathBuf};

use crate::diffcore::SimMetric;
use crate::error::{AgcmError, Result};
use crate::synthdata::{ConfusablePair, DatasetSpec};
use crate::trainer::{Stage, StageConfig};
use crate::FusionConfig;

/// Full description of one experiment: data geometry, both training
/// stages, and where results go.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Feature dimension of the head; defaults to the input dimension.
    pub feat_dim: Option<usize>,
    pub base_epochs: usize,
    pub base_batch_size: usize,
    pub base_learning_rate: f64,
    pub adapt_epochs: usize,
    pub adapt_batch_size: usize,
    pub adapt_learning_rate: f64,
    /// Shots per class (and for the background) in the support set.
    pub k: usize,
    pub alpha: f64,
    pub margin: f64,
    pub beta: f64,
    pub metric: SimMetric,
    pub freeze_projection: bool,
    pub stop_attention_grad: bool,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::default(),
            feat_dim: None,
            base_epochs: 200,
            base_batch_size: 64,
            base_learning_rate: 0.001,
            adapt_epochs: 600,
            adapt_batch_size: 16,
            adapt_learning_rate: 0.001,
            k: 10,
            alpha: 0.8,
            margin: 0.2,
            beta: 20.0,
            metric: SimMetric::Cosine,
            freeze_projection: true,
            stop_attention_grad: false,
            output_dir: PathBuf::from("runs/agcm"),
            seeds: vec![1, 2, 3, 4, 5],
            jobs: default_jobs(),
        }
    }
}

/// Worker-pool width when the config does not pin one: every available
/// core. Parallel and serial runs produce identical artifacts, so this
/// only affects wall time.
pub fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

impl ExperimentConfig {
    /// Stage-one settings for one run seed.
    pub fn base_stage(&self, seed: u64) -> StageConfig {
        StageConfig {
            stage: Stage::Base,
            epochs: self.base_epochs,
            batch_size: self.base_batch_size,
            learning_rate: self.base_learning_rate,
            seed,
            fusion: self.fusion(),
            margin: self.margin,
            beta: self.beta,
            freeze_projection: false,
            feat_dim: self.feat_dim,
        }
    }

    /// Stage-two settings for one run seed.
    pub fn adapt_stage(&self, seed: u64) -> StageConfig {
        StageConfig {
            stage: Stage::Adapt,
            epochs: self.adapt_epochs,
            batch_size: self.adapt_batch_size,
            learning_rate: self.adapt_learning_rate,
            seed,
            fusion: self.fusion(),
            margin: self.margin,
            beta: self.beta,
            freeze_projection: self.freeze_projection,
            feat_dim: self.feat_dim,
        }
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            alpha: self.alpha,
            metric: self.metric,
            stop_attention_grad: self.stop_attention_grad,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        let bad = |msg: String| Err(AgcmError::InvalidConfig(msg));
        if self.dataset.n_novel == 0 {
            return bad("dataset.n_novel must be at least 1: adaptation needs novel classes".into());
        }
        if self.feat_dim == Some(0) {
            return bad("model.feat_dim must be positive".into());
        }
        for (what, epochs, batch) in [
            ("base", self.base_epochs, self.base_batch_size),
            ("adapt", self.adapt_epochs, self.adapt_batch_size),
        ] {
            if epochs == 0 || batch == 0 {
                return bad(format!("{what} epochs and batch size must be positive"));
            }
        }
        for (what, lr) in [
            ("base", self.base_learning_rate),
            ("adapt", self.adapt_learning_rate),
        ] {
            if !lr.is_finite() || lr <= 0.0 {
                return bad(format!("{what} learning rate {lr} not positive"));
            }
        }
        if self.k == 0 {
            return bad("adapt.k must be positive".into());
        }
        if self.k > self.dataset.samples_per_class {
            return bad(format!(
                "adapt.k = {} exceeds the {} samples per class in the support pool",
                self.k, self.dataset.samples_per_class
            ));
        }
        self.fusion().validate()?;
        if !self.margin.is_finite() || !(-1.0..=1.0).contains(&self.margin) {
            return bad(format!("adapt.margin {} outside [-1, 1]", self.margin));
        }
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return bad(format!("adapt.beta {} not positive", self.beta));
        }
        if self.seeds.is_empty() {
            return bad("seeds list is empty".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad("seeds list holds duplicates".into());
        }
        if self.jobs == 0 {
            return bad("jobs must be positive".into());
        }
        Ok(())
    }

    /// Canonical text form; parses back to the same value.
    pub fn to_text(&self) -> String {
        let confusable = if self.dataset.confusable.is_empty() {
            "none".to_string()
        } else {
            self.dataset
                .confusable
                .iter()
                .map(|p| format!("{}:{}:{}", p.a, p.b, p.angle_deg))
                .collect::<Vec<_>>()
                .join(",")
        };
        let feat_dim = match self.feat_dim {
            Some(d) => d.to_string(),
            None => "none".to_string(),
        };
        let seeds = self
            .seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "dataset.dim = {}\n\
             dataset.n_base = {}\n\
             dataset.n_novel = {}\n\
             dataset.samples_per_class = {}\n\
             dataset.eval_per_class = {}\n\
             dataset.intra_sigma = {}\n\
             dataset.min_angle_deg = {}\n\
             dataset.confusable = {}\n\
             dataset.background_rate = {}\n\
             model.feat_dim = {}\n\
             base.epochs = {}\n\
             base.batch_size = {}\n\
             base.learning_rate = {}\n\
             adapt.epochs = {}\n\
             adapt.batch_size = {}\n\
             adapt.learning_rate = {}\n\
             adapt.k = {}\n\
             adapt.alpha = {}\n\
             adapt.margin = {}\n\
             adapt.beta = {}\n\
             adapt.metric = {}\n\
             adapt.freeze_projection = {}\n\
             adapt.stop_attention_grad = {}\n\
             output_dir = {}\n\
             seeds = {}\n\
             jobs = {}\n",
            self.dataset.dim,
            self.dataset.n_base,
            self.dataset.n_novel,
            self.dataset.samples_per_class,
            self.dataset.eval_per_class,
            self.dataset.intra_sigma,
            self.dataset.min_angle_deg,
            confusable,
            self.dataset.background_rate,
            feat_dim,
            self.base_epochs,
            self.base_batch_size,
            self.base_learning_rate,
            self.adapt_epochs,
            self.adapt_batch_size,
            self.adapt_learning_rate,
            self.k,
            self.alpha,
            self.margin,
            self.beta,
            self.metric,
            self.freeze_projection,
            self.stop_attention_grad,
            self.output_dir.display(),
            seeds,
            self.jobs,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AgcmError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses config text, starting from defaults; `path` only labels
    /// errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line_no = line_no + 1;
            let line = match raw.split_once('#') {
                Some((before, _)) => before,
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(AgcmError::parse(path, line_no, "expected `key = value`"));
            };
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|k| k == key) {
                return Err(AgcmError::parse(path, line_no, &format!("duplicate key '{key}'")));
            }
            seen.push(key.to_string());
            cfg.apply(key, value)
                .map_err(|msg| AgcmError::parse(path, line_no, &msg))?;
        }
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("bad value '{value}' for {key}"))
        }
        fn flag(key: &str, value: &str) -> std::result::Result<bool, String> {
            match value {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(format!("bad value '{value}' for {key} (expected true or false)")),
            }
        }
        match key {
            "dataset.dim" => self.dataset.dim = num(key, value)?,
            "dataset.n_base" => self.dataset.n_base = num(key, value)?,
            "dataset.n_novel" => self.dataset.n_novel = num(key, value)?,
            "dataset.samples_per_class" => self.dataset.samples_per_class = num(key, value)?,
            "dataset.eval_per_class" => self.dataset.eval_per_class = num(key, value)?,
            "dataset.intra_sigma" => self.dataset.intra_sigma = num(key, value)?,
            "dataset.min_angle_deg" => self.dataset.min_angle_deg = num(key, value)?,
            "dataset.confusable" => {
                self.dataset.confusable = parse_confusable(value)?;
            }
            "dataset.background_rate" => self.dataset.background_rate = num(key, value)?,
            "model.feat_dim" => {
                self.feat_dim = if value == "none" { None } else { Some(num(key, value)?) };
            }
            "base.epochs" => self.base_epochs = num(key, value)?,
            "base.batch_size" => self.base_batch_size = num(key, value)?,
            "base.learning_rate" => self.base_learning_rate = num(key, value)?,
            "adapt.epochs" => self.adapt_epochs = num(key, value)?,
            "adapt.batch_size" => self.adapt_batch_size = num(key, value)?,
            "adapt.learning_rate" => self.adapt_learning_rate = num(key, value)?,
            "adapt.k" => self.k = num(key, value)?,
            "adapt.alpha" => self.alpha = num(key, value)?,
            "adapt.margin" => self.margin = num(key, value)?,
            "adapt.beta" => self.beta = num(key, value)?,
            "adapt.metric" => {
                self.metric = SimMetric::parse(value).map_err(|e| e.to_string())?;
            }
            "adapt.freeze_projection" => self.freeze_projection = flag(key, value)?,
            "adapt.stop_attention_grad" => self.stop_attention_grad = flag(key, value)?,
            "output_dir" => {
                if value.is_empty() {
                    return Err("output_dir is empty".into());
                }
                self.output_dir = PathBuf::from(value);
            }
            "seeds" => {
                let mut seeds = Vec::new();
                for part in value.split(',') {
                    seeds.push(num("seeds", part.trim())?);
                }
                self.seeds = seeds;
            }
            "jobs" => self.jobs = num(key, value)?,
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }
}

fn parse_confusable(value: &str) -> std::result::Result<Vec<ConfusablePair>, String> {
    if value == "none" || value.is_empty() {
        return Ok(Vec::new());
    }
    let mut pairs = Vec::new();
    for part in value.split(',') {
        let fields: Vec<&str> = part.trim().split(':').collect();
        let [a, b, angle] = fields[..] else {
            return Err(format!("confusable entry '{part}' is not a:b:angle"));
        };
        let parse_idx = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| format!("bad class index '{s}' in confusable entry"))
        };
        let angle_deg: f64 = angle
            .trim()
            .parse()
            .map_err(|_| format!("bad angle '{angle}' in confusable entry"))?;
        pairs.push(ConfusablePair { a: parse_idx(a)?, b: parse_idx(b)?, angle_deg });
    }
    Ok(pairs)
}

/// Resolves a run's output directory: absolute paths stand as given;
/// relative paths are rooted under the output-root environment variable
/// when it is set.
pub const OUT_ROOT_ENV: &str = "AGCM_OUT_ROOT";

pub fn resolve_output_dir(dir: &Path) -> PathBuf {
    if dir.is_absolute() {
        return dir.to_path_buf();
    }
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}
