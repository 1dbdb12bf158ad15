//! Run configuration: flat `section.key = value` lines.
//!
//! ```text
//! # comments and blank lines are ignored
//! seed = 7
//! data.n_people = 5
//! train.learning_rate = 0.001
//! train.hard_shifts = 25,-25
//! ```
//!
//! Unknown keys are errors. The global `seed` feeds every stochastic stage.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use egosync_core::data::synthetic::SyntheticConfig;
use egosync_core::net::BackboneKind;
use egosync_core::train::TrainConfig;
use egosync_core::transfer::RegressorConfig;

use crate::error::{AppError, Result};
use crate::formats::read_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowKind {
    Gradient,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferSettings {
    pub regressor: RegressorConfig,
    pub vocab_k: usize,
    pub vocab_k_upper: usize,
    pub vocab_k_lower: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSettings {
    pub tsne: bool,
    pub tsne_perplexity: f64,
    pub tsne_iterations: usize,
    /// Frames per clip kept for the scatter projections.
    pub scatter_stride: usize,
    pub transversal_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub data: SyntheticConfig,
    /// Person held out from every training stage; the last person if unset.
    pub test_person: Option<u32>,
    pub train: TrainConfig,
    pub flow: FlowKind,
    /// Every how many eligible frames input statistics are sampled.
    pub stats_every: usize,
    pub transfer: TransferSettings,
    pub analysis: AnalysisSettings,
    present: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            data: SyntheticConfig::default(),
            test_person: None,
            train: TrainConfig::default(),
            flow: FlowKind::Gradient,
            stats_every: 8,
            transfer: TransferSettings {
                regressor: RegressorConfig::default(),
                vocab_k: 300,
                vocab_k_upper: 700,
                vocab_k_lower: 100,
            },
            analysis: AnalysisSettings {
                tsne: false,
                tsne_perplexity: 30.0,
                tsne_iterations: 500,
                scatter_stride: 8,
                transversal_step: 0.1,
            },
            present: BTreeSet::new(),
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| AppError::Config(format!("invalid value `{raw}` for `{key}`")))
}

fn flag(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(AppError::Config(format!("invalid boolean `{raw}` for `{key}`"))),
    }
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "paths.out",
        "data.n_people",
        "data.n_activities",
        "data.n_frames",
        "data.height",
        "data.width",
        "data.noise",
        "data.test_person",
        "train.margin",
        "train.learning_rate",
        "train.momentum",
        "train.weight_decay",
        "train.epochs",
        "train.batch_size",
        "train.backbone",
        "train.normalize_embeddings",
        "train.frame_stride",
        "train.negatives_per_positive",
        "train.hard_shifts",
        "train.flow",
        "train.stats_every",
        "transfer.hidden_dim",
        "transfer.epochs",
        "transfer.learning_rate",
        "transfer.momentum",
        "transfer.weight_decay",
        "transfer.batch_size",
        "transfer.vocab_k",
        "transfer.vocab_k_upper",
        "transfer.vocab_k_lower",
        "analysis.tsne",
        "analysis.tsne_perplexity",
        "analysis.tsne_iterations",
        "analysis.scatter_stride",
        "analysis.transversal_step",
    ];

    /// Parses config text. Relative `paths.out` is resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut c = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| AppError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let (key, raw) = (key.trim(), raw.trim());
            if !c.present.insert(key.to_string()) {
                return Err(AppError::Config(format!("line {}: `{key}` set twice", i + 1)));
            }
            c.set(key, raw, base)?;
        }
        c.propagate_seed();
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path).map_err(|e| match e {
            AppError::MissingArtifact(p) => AppError::Config(format!("config file {} not found", p.display())),
            other => other,
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn set(&mut self, key: &str, raw: &str, base: &Path) -> Result<()> {
        let t = &mut self.train;
        let r = &mut self.transfer.regressor;
        let a = &mut self.analysis;
        match key {
            "seed" => self.seed = value(key, raw)?,
            "paths.out" => {
                let p = PathBuf::from(raw);
                self.out = Some(if p.is_absolute() { p } else { base.join(p) });
            }
            "data.n_people" => self.data.n_people = value(key, raw)?,
            "data.n_activities" => self.data.n_activities = value(key, raw)?,
            "data.n_frames" => self.data.n_frames = value(key, raw)?,
            "data.height" => self.data.height = value(key, raw)?,
            "data.width" => self.data.width = value(key, raw)?,
            "data.noise" => self.data.noise = value(key, raw)?,
            "data.test_person" => self.test_person = Some(value(key, raw)?),
            "train.margin" => t.margin = value(key, raw)?,
            "train.learning_rate" => t.learning_rate = value(key, raw)?,
            "train.momentum" => t.momentum = value(key, raw)?,
            "train.weight_decay" => t.weight_decay = value(key, raw)?,
            "train.epochs" => t.epochs = value(key, raw)?,
            "train.batch_size" => t.batch_size = value(key, raw)?,
            "train.backbone" => {
                t.backbone = BackboneKind::parse(raw)
                    .ok_or_else(|| AppError::Config(format!("unknown backbone `{raw}` for `{key}`")))?
            }
            "train.normalize_embeddings" => t.normalize_embeddings = flag(key, raw)?,
            "train.frame_stride" => t.frame_stride = value(key, raw)?,
            "train.negatives_per_positive" => t.negatives_per_positive = value(key, raw)?,
            "train.hard_shifts" => {
                t.hard_shifts = raw.split(',').map(|s| value(key, s.trim())).collect::<Result<_>>()?
            }
            "train.flow" => {
                self.flow = match raw {
                    "gradient" => FlowKind::Gradient,
                    "zero" => FlowKind::Zero,
                    _ => return Err(AppError::Config(format!("unknown flow provider `{raw}`"))),
                }
            }
            "train.stats_every" => self.stats_every = value(key, raw)?,
            "transfer.hidden_dim" => r.hidden_dim = value(key, raw)?,
            "transfer.epochs" => r.epochs = value(key, raw)?,
            "transfer.learning_rate" => r.learning_rate = value(key, raw)?,
            "transfer.momentum" => r.momentum = value(key, raw)?,
            "transfer.weight_decay" => r.weight_decay = value(key, raw)?,
            "transfer.batch_size" => r.batch_size = value(key, raw)?,
            "transfer.vocab_k" => self.transfer.vocab_k = value(key, raw)?,
            "transfer.vocab_k_upper" => self.transfer.vocab_k_upper = value(key, raw)?,
            "transfer.vocab_k_lower" => self.transfer.vocab_k_lower = value(key, raw)?,
            "analysis.tsne" => a.tsne = flag(key, raw)?,
            "analysis.tsne_perplexity" => a.tsne_perplexity = value(key, raw)?,
            "analysis.tsne_iterations" => a.tsne_iterations = value(key, raw)?,
            "analysis.scatter_stride" => a.scatter_stride = value(key, raw)?,
            "analysis.transversal_step" => a.transversal_step = value(key, raw)?,
            _ => return Err(AppError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Overrides the global seed and pushes it into every stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.propagate_seed();
        self
    }

    fn propagate_seed(&mut self) {
        self.data.seed = self.seed;
        self.train.seed = self.seed;
        self.transfer.regressor.seed = self.seed;
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.present.contains(key)
    }

    /// Fails with a config error naming the first key absent from the file.
    pub fn require(&self, keys: &[&str]) -> Result<()> {
        match keys.iter().find(|k| !self.is_set(k)) {
            Some(k) => Err(AppError::Config(format!("missing required key `{k}`"))),
            None => Ok(()),
        }
    }

    pub fn test_person(&self) -> u32 {
        self.test_person.unwrap_or(self.data.n_people.saturating_sub(1) as u32)
    }

    /// Canonical `key = value` text of every setting.
    pub fn render(&self) -> String {
        let t = &self.train;
        let r = &self.transfer.regressor;
        let a = &self.analysis;
        let shifts: Vec<String> = t.hard_shifts.iter().map(|s| s.to_string()).collect();
        let mut lines = vec![
            format!("seed = {}", self.seed),
            format!("data.n_people = {}", self.data.n_people),
            format!("data.n_activities = {}", self.data.n_activities),
            format!("data.n_frames = {}", self.data.n_frames),
            format!("data.height = {}", self.data.height),
            format!("data.width = {}", self.data.width),
            format!("data.noise = {}", self.data.noise),
            format!("data.test_person = {}", self.test_person()),
            format!("train.margin = {}", t.margin),
            format!("train.learning_rate = {}", t.learning_rate),
            format!("train.momentum = {}", t.momentum),
            format!("train.weight_decay = {}", t.weight_decay),
            format!("train.epochs = {}", t.epochs),
            format!("train.batch_size = {}", t.batch_size),
            format!("train.backbone = {}", t.backbone.as_str()),
            format!("train.normalize_embeddings = {}", t.normalize_embeddings),
            format!("train.frame_stride = {}", t.frame_stride),
            format!("train.negatives_per_positive = {}", t.negatives_per_positive),
            format!("train.hard_shifts = {}", shifts.join(",")),
            format!("train.flow = {}", if self.flow == FlowKind::Gradient { "gradient" } else { "zero" }),
            format!("train.stats_every = {}", self.stats_every),
            format!("transfer.hidden_dim = {}", r.hidden_dim),
            format!("transfer.epochs = {}", r.epochs),
            format!("transfer.learning_rate = {}", r.learning_rate),
            format!("transfer.momentum = {}", r.momentum),
            format!("transfer.weight_decay = {}", r.weight_decay),
            format!("transfer.batch_size = {}", r.batch_size),
            format!("transfer.vocab_k = {}", self.transfer.vocab_k),
            format!("transfer.vocab_k_upper = {}", self.transfer.vocab_k_upper),
            format!("transfer.vocab_k_lower = {}", self.transfer.vocab_k_lower),
            format!("analysis.tsne = {}", a.tsne),
            format!("analysis.tsne_perplexity = {}", a.tsne_perplexity),
            format!("analysis.tsne_iterations = {}", a.tsne_iterations),
            format!("analysis.scatter_stride = {}", a.scatter_stride),
            format!("analysis.transversal_step = {}", a.transversal_step),
        ];
        lines.push(String::new());
        lines.join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_propagates_seed() {
        let c = RunConfig::parse("seed = 9\ndata.n_people = 2 # two\ntrain.hard_shifts = 10, -10\n", Path::new("/cfg")).unwrap();
        assert_eq!((c.data.seed, c.train.seed, c.transfer.regressor.seed), (9, 9, 9));
        assert_eq!(c.train.hard_shifts, vec![10, -10]);
        assert_eq!(c.test_person(), 1);
        assert_eq!(c.clone().with_seed(3).train.seed, 3);
        let again = RunConfig::parse(&c.render(), Path::new("/cfg")).unwrap();
        assert_eq!(again.render(), c.render());
    }

    #[test]
    fn rejects_unknown_and_missing_keys() {
        let err = RunConfig::parse("train.lr = 1\n", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("train.lr"));
        assert_eq!(err.exit_code(), 2);
        let c = RunConfig::parse("data.n_people = 1\n", Path::new(".")).unwrap();
        let err = c.require(&["data.n_people", "data.n_frames"]).unwrap_err();
        assert!(err.to_string().contains("data.n_frames"));
        assert!(RunConfig::parse("seed = x\n", Path::new(".")).is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2\n", Path::new(".")).is_err());
    }

    #[test]
    fn relative_out_resolves_against_config_dir() {
        let c = RunConfig::parse("paths.out = run\n", Path::new("/tmp/cfg")).unwrap();
        assert_eq!(c.out.unwrap(), PathBuf::from("/tmp/cfg/run"));
    }
}
