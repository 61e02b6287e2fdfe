//! Training regimes for diffusion policies and direct baselines.

mod baseline;
mod buffer;
mod constraints;
mod method;
mod noise;
mod unsup;
mod value;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::ScheduleConfig;
use crate::env::{sample_channel, ChannelMatrix, ScenarioConfig};
use crate::error::{Error, Result};
use crate::nn::{OptimizerKind, StateFeatures};

pub use baseline::{policy_powers, train_direct_baseline, BaselineReport};
pub use buffer::{improve_actions, ActionBuffer, BufferEntry};
pub use constraints::{feasible_best_of_n, Constraint, ConstraintSet};
pub use method::{select_method, LearningMethod, TaskDescriptor};
pub use noise::{raw_from_powers, train_supervised, SupervisedReport};
pub use unsup::{
    train_lagrangian, train_model_based_unsup, train_model_free_unsup, EpochTrace, LagrangianReport, ModelFreeReport,
    UnsupReport,
};
pub use value::{Critic, PerfectCritic, ValueNetwork};

/// One training or test state.
#[derive(Debug, Clone)]
pub struct Sample {
    pub channel: ChannelMatrix,
    pub features: StateFeatures,
}

impl Sample {
    pub fn new(channel: ChannelMatrix) -> Self {
        let features = StateFeatures::from_channel(&channel);
        Self { channel, features }
    }
}

/// A set of channel realizations with their network features.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn generate<R: Rng + ?Sized>(scenario: &ScenarioConfig, n: usize, rng: &mut R) -> Self {
        Self { samples: (0..n).map(|_| Sample::new(sample_channel(scenario, rng))).collect() }
    }

    pub fn from_channels(channels: Vec<ChannelMatrix>) -> Self {
        Self { samples: channels.into_iter().map(Sample::new).collect() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.samples.first().map_or(0, |s| s.channel.n_users())
    }

    pub fn features(&self) -> Vec<&StateFeatures> {
        self.samples.iter().map(|s| &s.features).collect()
    }

    pub(crate) fn require_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptyDataset)
        } else {
            Ok(())
        }
    }
}

/// Hyperparameters shared by all training loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Gradient-ascent steps per buffer entry and epoch.
    pub action_improve_steps: usize,
    pub action_step_size: f64,
    /// Raw actions are kept inside `[-raw_limit, raw_limit]`.
    pub raw_limit: f64,
    /// Share of the buffer resampled from the current model each epoch.
    pub refresh_fraction: f64,
    /// Ascent steps a resampled action takes before it is compared with the
    /// stored one.
    pub refresh_improve_steps: usize,
    /// Learning rate at the end of training relative to the start; values
    /// below one apply cosine decay.
    pub final_lr_fraction: f64,
    pub schedule: ScheduleConfig,
    pub seed: u64,
    /// Value-network fitting (model-free training only).
    pub value_fit_steps: usize,
    pub value_samples_per_epoch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            optimizer: OptimizerKind::Adam { learning_rate: 3e-3 },
            action_improve_steps: 3,
            action_step_size: 1.0,
            raw_limit: 5.0,
            refresh_fraction: 0.5,
            refresh_improve_steps: 3,
            final_lr_fraction: 1.0,
            schedule: ScheduleConfig::default(),
            seed: 0,
            value_fit_steps: 200,
            value_samples_per_epoch: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("train config: {what}")));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.action_step_size > 0.0) {
            return bad("action_step_size must be positive");
        }
        if !(self.raw_limit > 0.0) {
            return bad("raw_limit must be positive");
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return bad("final_lr_fraction must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.refresh_fraction) {
            return bad("refresh_fraction must lie in [0, 1]");
        }
        if !(self.base_learning_rate() > 0.0) {
            return bad("learning rate must be positive");
        }
        self.schedule.build().map(|_| ())
    }

    pub fn base_learning_rate(&self) -> f64 {
        match self.optimizer {
            OptimizerKind::Adam { learning_rate } | OptimizerKind::Sgd { learning_rate } => learning_rate,
        }
    }

    /// Learning rate after a fraction `progress` in `[0, 1]` of training.
    pub fn learning_rate_at(&self, progress: f64) -> f64 {
        let f = self.final_lr_fraction;
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress.clamp(0.0, 1.0)).cos());
        self.base_learning_rate() * (f + (1.0 - f) * cosine)
    }

    /// Environment-gradient evaluations consumed by diffusion training on
    /// `n_train` samples; the direct baselines get the same allowance.
    pub fn gradient_budget(&self, n_train: usize) -> u64 {
        let refreshed = ((n_train as f64) * self.refresh_fraction).round() as usize;
        (self.epochs * (self.action_improve_steps * n_train + self.refresh_improve_steps * refreshed)) as u64
    }
}
