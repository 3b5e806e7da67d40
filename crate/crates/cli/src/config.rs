use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use lgp::encoder::{RemoteConfig, TokenState};
use lgp::episodes::{EpisodeShape, SplitPart, EVAL_TASKS, TRAIN_TASKS_PER_EPOCH};
use lgp::eval::EvalProtocol;
use lgp::inference::{Fallback, ThresholdParams};
use lgp::numerics::DEFAULT_STD_EPS;
use lgp::prompts::{TemplateSet, DEFAULT_MASK_COUNT};
use lgp::trainer::{AdamWConfig, TrainConfig, VAL_TASKS};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// Hash-seeded stub encoder, optionally loaded from a checkpoint.
    #[default]
    Stub,
    /// Precomputed embeddings from an export file.
    Store,
}

/// Everything a run needs. Loaded from `--config`, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub encoder: EncoderKind,
    pub store: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub template_preset: String,
    pub template_file: Option<PathBuf>,
    /// Remote description endpoint; offline descriptions when absent.
    pub remote: Option<RemoteConfig>,
    /// Description cache; defaults to `<out>/descriptions.jsonl`.
    pub description_cache: Option<PathBuf>,
    pub m: usize,
    pub d: usize,
    pub token_state: TokenState,
    pub n_way: usize,
    pub k_shot: usize,
    pub queries_per_class: usize,
    pub epochs: usize,
    pub train_tasks: usize,
    pub val_tasks: usize,
    pub eval_tasks: usize,
    pub eval_split: SplitPart,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub fallback: Fallback,
    pub std_eps: f64,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let threshold = ThresholdParams::default();
        let shape = EpisodeShape::default();
        RunConfig {
            corpus: None,
            split: None,
            encoder: EncoderKind::Stub,
            store: None,
            checkpoint: None,
            template_preset: "about-category".into(),
            template_file: None,
            remote: None,
            description_cache: None,
            m: DEFAULT_MASK_COUNT,
            d: TrainConfig::default().d,
            token_state: TokenState::Fixed,
            n_way: shape.n_way,
            k_shot: shape.k_shot,
            queries_per_class: shape.queries_per_class,
            epochs: TrainConfig::default().epochs,
            train_tasks: TRAIN_TASKS_PER_EPOCH,
            val_tasks: VAL_TASKS,
            eval_tasks: EVAL_TASKS,
            eval_split: SplitPart::Test,
            alpha: threshold.alpha,
            beta: threshold.beta,
            gamma: threshold.gamma,
            fallback: Fallback::Argmax,
            std_eps: DEFAULT_STD_EPS,
            optimizer: AdamWConfig::default(),
            seed: 0,
            workers: 1,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn shape(&self) -> EpisodeShape {
        EpisodeShape {
            n_way: self.n_way,
            k_shot: self.k_shot,
            queries_per_class: self.queries_per_class,
        }
    }

    pub fn threshold(&self) -> ThresholdParams {
        ThresholdParams {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    pub fn templates(&self) -> anyhow::Result<TemplateSet> {
        let mut templates = match &self.template_file {
            Some(path) => TemplateSet::load(path)?,
            None => TemplateSet::preset(&self.template_preset, self.m)?,
        };
        if self.template_file.is_some() && templates.mask_count != self.m {
            templates.mask_count = self.m;
            templates.validate()?;
        }
        Ok(templates)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            d: self.d,
            m: self.m,
            token_state: self.token_state,
            shape: self.shape(),
            epochs: self.epochs,
            tasks_per_epoch: self.train_tasks,
            val_tasks: self.val_tasks,
            optimizer: self.optimizer,
            threshold: self.threshold(),
            fallback: self.fallback,
            std_eps: self.std_eps,
        }
    }

    pub fn eval_protocol(&self) -> EvalProtocol {
        EvalProtocol {
            split: self.eval_split,
            shape: self.shape(),
            episodes: self.eval_tasks,
            threshold: self.threshold(),
            fallback: self.fallback,
            std_eps: self.std_eps,
        }
    }

    pub fn description_cache(&self) -> PathBuf {
        self.description_cache
            .clone()
            .unwrap_or_else(|| self.out.join("descriptions.jsonl"))
    }

    /// Checks that hold for every command.
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        if self.m == 0 || self.d == 0 {
            bail!("m and d must be positive, got m={}, d={}", self.m, self.d);
        }
        if self.eval_tasks == 0 {
            bail!("eval_tasks must be at least 1");
        }
        self.shape().validate()?;
        self.train_config().validate()?;
        self.templates()?;
        Ok(())
    }

    /// Corpus and split paths, which every data command needs.
    pub fn data_paths(&self) -> anyhow::Result<(&Path, &Path)> {
        let corpus = self.corpus.as_deref().context("no corpus given (--corpus or \"corpus\" in the config)")?;
        let split = self.split.as_deref().context("no split given (--split or \"split\" in the config)")?;
        for p in [corpus, split] {
            if !p.is_file() {
                bail!("{} does not exist", p.display());
            }
        }
        Ok((corpus, split))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_protocol() {
        let c = RunConfig::default();
        assert_eq!((c.n_way, c.k_shot, c.queries_per_class), (5, 5, 5));
        assert_eq!((c.train_tasks, c.eval_tasks), (800, 600));
        assert_eq!((c.alpha, c.beta, c.gamma), (0.3, 0.7, 0.7));
        assert_eq!(c.optimizer.lr, 5e-5);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"n_wya": 5}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"n_way": 10, "optimizer": {"lr": 0.01}}"#).unwrap();
        assert_eq!(c.n_way, 10);
        assert_eq!(c.k_shot, 5);
        assert_eq!(c.optimizer.lr, 0.01);
        assert_eq!(c.optimizer.weight_decay, 0.01);
    }
}
