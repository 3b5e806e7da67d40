//! Episodic training of the stub encoder.

mod adamw;
mod checkpoint;

pub use adamw::{adamw_update, AdamWConfig, AdamWState, Moments};
pub use checkpoint::{decode_f64s, encode_f64s, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};

use serde::{Deserialize, Serialize};

use crate::encoder::{DescriptionProvider, StubEncoder, TokenState};
use crate::episodes::{episode_at, episode_seed, Corpus, EpisodeShape, SplitPart, SplitSpec, TRAIN_TASKS_PER_EPOCH};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalContext, EvalProtocol, Report};
use crate::inference::{Fallback, ThresholdParams};
use crate::numerics::DEFAULT_STD_EPS;
use crate::pipeline::{stub_loss_and_grads, EpisodePrompts};
use crate::prompts::TemplateSet;

pub const VAL_TASKS: usize = 100;

// stream tags mixed into the run seed
const TRAIN_STREAM: u64 = 0x7472_6169_6e00_0001;
const VAL_STREAM: u64 = 0x7661_6c00_0000_0002;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub d: usize,
    pub m: usize,
    pub token_state: TokenState,
    pub shape: EpisodeShape,
    pub epochs: usize,
    pub tasks_per_epoch: usize,
    pub val_tasks: usize,
    pub optimizer: AdamWConfig,
    pub threshold: ThresholdParams,
    pub fallback: Fallback,
    pub std_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d: 64,
            m: crate::prompts::DEFAULT_MASK_COUNT,
            token_state: TokenState::Fixed,
            shape: EpisodeShape::default(),
            epochs: 5,
            tasks_per_epoch: TRAIN_TASKS_PER_EPOCH,
            val_tasks: VAL_TASKS,
            optimizer: AdamWConfig::default(),
            threshold: ThresholdParams::default(),
            fallback: Fallback::Argmax,
            std_eps: DEFAULT_STD_EPS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.m == 0 {
            return Err(Error::InvalidArgument(format!(
                "d and m must be positive, got d={}, m={}",
                self.d, self.m
            )));
        }
        self.shape.validate()?;
        self.optimizer.validate()?;
        if !self.threshold.is_finite() {
            return Err(Error::InvalidArgument("threshold coefficients must be finite".into()));
        }
        if !(self.std_eps.is_finite() && self.std_eps > 0.0) {
            return Err(Error::InvalidArgument(format!("std_eps must be positive, got {}", self.std_eps)));
        }
        Ok(())
    }

    /// Protocol used for validation during training.
    pub fn val_protocol(&self) -> EvalProtocol {
        EvalProtocol {
            split: SplitPart::Val,
            shape: self.shape,
            episodes: self.val_tasks,
            threshold: self.threshold,
            fallback: self.fallback,
            std_eps: self.std_eps,
        }
    }
}

/// Read-only inputs of a training run.
#[derive(Clone, Copy)]
pub struct TrainInputs<'a> {
    pub corpus: &'a Corpus,
    pub split: &'a SplitSpec,
    pub templates: &'a TemplateSet,
    pub provider: &'a DescriptionProvider,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_f1: Option<f64>,
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot with the highest validation macro-F1 (the last one if no validation ran).
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub history: Vec<EpochLog>,
}

pub struct Trainer<'a> {
    inputs: TrainInputs<'a>,
    state: Checkpoint,
}

impl<'a> Trainer<'a> {
    pub fn new(inputs: TrainInputs<'a>, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let encoder = StubEncoder::new(config.d, config.m, seed, config.token_state)?;
        let optimizer = AdamWState::new(config.optimizer, config.m, config.d);
        Trainer::resume(
            inputs,
            Checkpoint {
                encoder,
                optimizer,
                config,
                seed,
                epoch: 0,
                next_task: 0,
                val_f1: None,
            },
        )
    }

    pub fn resume(inputs: TrainInputs<'a>, checkpoint: Checkpoint) -> Result<Self> {
        checkpoint.config.validate()?;
        inputs.split.check_against(inputs.corpus)?;
        if inputs.templates.mask_count != checkpoint.m() {
            return Err(Error::InvalidArgument(format!(
                "templates expand to {} mask slots, encoder has {}",
                inputs.templates.mask_count,
                checkpoint.m()
            )));
        }
        if inputs.split.train.len() < checkpoint.config.shape.n_way {
            return Err(Error::InvalidArgument(format!(
                "{} training classes cannot fill a {}-way episode",
                inputs.split.train.len(),
                checkpoint.config.shape.n_way
            )));
        }
        Ok(Trainer {
            inputs,
            state: checkpoint,
        })
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.state
    }

    pub fn encoder(&self) -> &StubEncoder {
        &self.state.encoder
    }

    /// Forward, backward and one optimizer step on the next training episode.
    pub fn train_step(&mut self) -> Result<f64> {
        let st = &self.state;
        let epoch_seed = episode_seed(st.seed ^ TRAIN_STREAM, st.epoch as u64);
        let episode = episode_at(
            epoch_seed,
            st.next_task as u64,
            self.inputs.corpus,
            &self.inputs.split.train,
            st.config.shape,
        )?;
        let prompts = EpisodePrompts::build(
            &episode,
            self.inputs.corpus,
            self.inputs.templates,
            self.inputs.provider,
        )?;
        let (loss, grads) = stub_loss_and_grads(&st.encoder, &prompts, st.config.std_eps)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::NonFinite(format!(
                "epoch {} task {}: loss {loss}, classes {:?}",
                st.epoch, st.next_task, episode.classes
            )));
        }
        let st = &mut self.state;
        st.optimizer.step(&mut st.encoder, &grads)?;
        st.next_task += 1;
        Ok(loss)
    }

    /// Macro-F1 and AUC on the validation split with the current parameters.
    pub fn validate(&self, workers: usize) -> Result<Report> {
        let ctx = EvalContext {
            encoder: &self.state.encoder,
            provider: self.inputs.provider,
            templates: self.inputs.templates,
            corpus: self.inputs.corpus,
            pool: &self.inputs.split.val,
        };
        evaluate(&ctx, &self.state.config.val_protocol(), self.state.seed ^ VAL_STREAM, workers)
    }

    /// Runs the remaining epochs. `on_epoch` sees each epoch's log as it completes.
    pub fn run(&mut self, workers: usize, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
        let validating = self.state.config.val_tasks > 0 && !self.inputs.split.val.is_empty();
        let mut best: Option<Checkpoint> = None;
        let mut history = Vec::new();
        while self.state.epoch < self.state.config.epochs {
            let mut total = 0.0;
            let mut count = 0usize;
            while self.state.next_task < self.state.config.tasks_per_epoch {
                total += self.train_step()?;
                count += 1;
            }
            self.state.epoch += 1;
            self.state.next_task = 0;
            let (val_f1, val_auc) = if validating {
                let report = self.validate(workers)?;
                (Some(report.macro_f1), report.auc)
            } else {
                (None, None)
            };
            self.state.val_f1 = val_f1;
            let log = EpochLog {
                epoch: self.state.epoch,
                mean_loss: if count > 0 { total / count as f64 } else { f64::NAN },
                val_f1,
                val_auc,
            };
            on_epoch(&log);
            history.push(log);
            let improved = match (&best, val_f1) {
                (None, _) => true,
                (Some(b), Some(f)) => b.val_f1.is_none_or(|bf| f > bf),
                (Some(_), None) => true,
            };
            if improved {
                best = Some(self.state.clone());
            }
        }
        let last = self.state.clone();
        Ok(TrainOutcome {
            best: best.unwrap_or_else(|| last.clone()),
            last,
            history,
        })
    }
}

/// Trains from scratch.
pub fn train(inputs: TrainInputs<'_>, config: TrainConfig, seed: u64, workers: usize) -> Result<TrainOutcome> {
    Trainer::new(inputs, config, seed)?.run(workers, |_| {})
}
