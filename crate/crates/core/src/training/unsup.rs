use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::buffer::{improve_entry, improve_with, ActionObjective, SeObjective};
use super::noise::noise_pass;
use super::value::{Critic, ValueTuple};
use super::{ActionBuffer, ConstraintSet, Dataset, Sample, TrainConfig};
use crate::diffusion::{sample_raw, DiffusionSchedule};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::nn::{Adam, Network, StateFeatures};

/// Seed offset of the stream used for value-network data collection.
const VALUE_STREAM: u64 = 0x7661_6c75_6573_0001;
const EXPLORATION_STD: f64 = 1.5;
const REPLAY_CAP: usize = 50_000;

/// One row of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub loss: f64,
    pub buffer_mean_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnsupReport {
    pub trace: Vec<EpochTrace>,
    /// Noise-prediction loss per optimizer step.
    pub losses: Vec<f64>,
    pub buffer: ActionBuffer,
    /// Gradient evaluations spent on action improvement.
    pub gradient_calls: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianReport {
    pub base: UnsupReport,
    pub multipliers: Vec<f64>,
    /// Back-off margins added to each constraint in the penalty.
    pub margins: Vec<f64>,
    /// Multipliers after every epoch.
    pub multiplier_trace: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFreeReport {
    pub base: UnsupReport,
    /// Value-fit loss per epoch.
    pub value_losses: Vec<f64>,
}

struct EpochContext<'a> {
    predictor: &'a Network,
    data: &'a Dataset,
    buffer: &'a ActionBuffer,
    sched: &'a DiffusionSchedule,
    cfg: &'a TrainConfig,
}

trait LoopObjective: ActionObjective {
    fn begin_epoch(&mut self, _ctx: EpochContext<'_>) -> Result<()> {
        Ok(())
    }

    /// Sees the powers of freshly sampled actions; returns true if scores
    /// must be recomputed.
    fn after_refresh(&mut self, _sampled: &[Vec<f64>]) -> bool {
        false
    }

    fn gradient_calls(&self) -> u64;
}

impl LoopObjective for SeObjective<'_> {
    fn gradient_calls(&self) -> u64 {
        self.env.gradient_calls()
    }
}

fn run_loop(
    predictor: &mut Network,
    data: &Dataset,
    env: &Environment,
    objective: &mut dyn LoopObjective,
    sched: &DiffusionSchedule,
    cfg: &TrainConfig,
) -> Result<UnsupReport> {
    data.require_nonempty()?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Adam::new(cfg.optimizer, predictor.param_count());
    let mut buffer = ActionBuffer::equal_power(env, data)?;
    let states = data.features();
    let n_refresh = ((data.len() as f64) * cfg.refresh_fraction).round() as usize;
    let calls_before = objective.gradient_calls();
    let lim = cfg.raw_limit;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut losses = Vec::new();
    for epoch in 0..cfg.epochs {
        optimizer.set_learning_rate(cfg.learning_rate_at(epoch as f64 / cfg.epochs as f64));
        objective.begin_epoch(EpochContext { predictor, data, buffer: &buffer, sched, cfg })?;
        buffer.rescore(objective, data)?;

        if n_refresh > 0 {
            let mut idx = index::sample(&mut rng, data.len(), n_refresh).into_vec();
            idx.sort_unstable();
            let chosen: Vec<&StateFeatures> = idx.iter().map(|&i| states[i]).collect();
            let raw = sample_raw(predictor, &chosen, sched, &mut rng)?;
            let sampled: Vec<Vec<f64>> = raw.rows().into_iter().map(|r| env.powers(&r.to_vec())).collect();
            if objective.after_refresh(&sampled) {
                buffer.rescore(objective, data)?;
            }
            for (r, &i) in idx.iter().enumerate() {
                let row: Vec<f64> = raw.row(r).iter().map(|v| v.clamp(-lim, lim)).collect();
                let sample = &data.samples[i];
                let candidate = objective.evaluate(i, sample, row)?;
                let candidate = improve_entry(
                    objective,
                    i,
                    sample,
                    candidate,
                    cfg.refresh_improve_steps,
                    cfg.action_step_size,
                    lim,
                )?;
                if candidate.score > buffer.get(i).score {
                    buffer.replace(i, candidate);
                }
            }
        }

        improve_with(objective, data, &mut buffer, cfg.action_improve_steps, cfg.action_step_size, lim)?;

        let targets = buffer.raw_matrix();
        let loss =
            noise_pass(predictor, &mut optimizer, &states, &targets, sched, cfg.batch_size, &mut rng, &mut losses)?;
        trace.push(EpochTrace { epoch, loss, buffer_mean_se: buffer.mean_se() });
    }
    Ok(UnsupReport { trace, losses, buffer, gradient_calls: objective.gradient_calls() - calls_before })
}

/// Trains a diffusion policy without labels: buffer actions are refreshed
/// from the model, improved by SE gradient ascent, and then used as the
/// regression targets of one noise-prediction pass per epoch.
pub fn train_model_based_unsup(
    predictor: &mut Network,
    data: &Dataset,
    env: &Environment,
    sched: &DiffusionSchedule,
    cfg: &TrainConfig,
) -> Result<UnsupReport> {
    run_loop(predictor, data, env, &mut SeObjective { env }, sched, cfg)
}

/// Quantile of sampled constraint values that the back-off margin drives to
/// zero.
const BACKOFF_QUANTILE: f64 = 0.9;
const BACKOFF_GAIN: f64 = 0.5;

struct LagrangianObjective<'a> {
    env: &'a Environment,
    constraints: &'a ConstraintSet,
    multipliers: Vec<f64>,
    margins: Vec<f64>,
    lr: f64,
    trace: Vec<Vec<f64>>,
}

impl ActionObjective for LagrangianObjective<'_> {
    fn env(&self) -> &Environment {
        self.env
    }

    fn score(&self, _: usize, _: &Sample, powers: &[f64], se: f64) -> Result<f64> {
        let penalty: f64 = self
            .constraints
            .iter()
            .zip(self.multipliers.iter().zip(&self.margins))
            .map(|(c, (l, m))| l * (c.value(powers) + m).max(0.0))
            .sum();
        Ok(se - penalty)
    }

    fn power_gradient(&self, _: usize, sample: &Sample, powers: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.env.se_gradient(&sample.channel, powers)?;
        for (c, (&l, &m)) in self.constraints.iter().zip(self.multipliers.iter().zip(&self.margins)) {
            if l > 0.0 && c.value(powers) + m > 0.0 {
                for (gi, ci) in g.iter_mut().zip(c.gradient(powers)) {
                    *gi -= l * ci;
                }
            }
        }
        Ok(g)
    }
}

fn quantile(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

impl LoopObjective for LagrangianObjective<'_> {
    fn after_refresh(&mut self, sampled: &[Vec<f64>]) -> bool {
        if sampled.is_empty() {
            return false;
        }
        let n = sampled.len() as f64;
        for (i, c) in self.constraints.iter().enumerate() {
            let values: Vec<f64> = sampled.iter().map(|p| c.value(p)).collect();
            let violation = values.iter().map(|v| v.max(0.0)).sum::<f64>() / n;
            self.multipliers[i] = (self.multipliers[i] + self.lr * violation).max(0.0);
            let q = quantile(values, BACKOFF_QUANTILE);
            self.margins[i] = (self.margins[i] + BACKOFF_GAIN * q).max(0.0);
        }
        self.trace.push(self.multipliers.clone());
        true
    }

    fn gradient_calls(&self) -> u64 {
        self.env.gradient_calls()
    }
}

/// Model-based training under constraints `g_i(p) <= 0` without a feasible
/// action map. Buffer improvement ascends `SE - sum_i l_i max(0, g_i + m_i)`.
/// After each refresh the multipliers `l_i` ascend on the mean violation of
/// the freshly sampled actions, and the back-off margins `m_i` move until
/// nine in ten sampled actions satisfy each constraint. Pair with
/// [`crate::training::feasible_best_of_n`] at sampling time.
pub fn train_lagrangian(
    predictor: &mut Network,
    data: &Dataset,
    env: &Environment,
    constraints: &ConstraintSet,
    sched: &DiffusionSchedule,
    cfg: &TrainConfig,
    multiplier_lr: f64,
) -> Result<LagrangianReport> {
    if !(multiplier_lr > 0.0) {
        return Err(Error::InvalidConfig("multiplier_lr must be positive".into()));
    }
    let mut objective = LagrangianObjective {
        env,
        constraints,
        multipliers: vec![0.0; constraints.len()],
        margins: vec![0.0; constraints.len()],
        lr: multiplier_lr,
        trace: Vec::new(),
    };
    let base = run_loop(predictor, data, env, &mut objective, sched, cfg)?;
    Ok(LagrangianReport {
        base,
        multipliers: objective.multipliers,
        margins: objective.margins,
        multiplier_trace: objective.trace,
    })
}

struct ModelFreeObjective<'a> {
    env: &'a Environment,
    critic: &'a mut dyn Critic,
    replay: Vec<ValueTuple>,
    rng: ChaCha8Rng,
    value_losses: Vec<f64>,
}

impl ActionObjective for ModelFreeObjective<'_> {
    fn env(&self) -> &Environment {
        self.env
    }

    fn score(&self, _: usize, _: &Sample, _: &[f64], se: f64) -> Result<f64> {
        Ok(se)
    }

    fn power_gradient(&self, _: usize, sample: &Sample, powers: &[f64]) -> Result<Vec<f64>> {
        self.critic.power_gradient(sample, powers)
    }
}

impl LoopObjective for ModelFreeObjective<'_> {
    fn begin_epoch(&mut self, ctx: EpochContext<'_>) -> Result<()> {
        if !self.critic.is_learned() {
            return Ok(());
        }
        let n = ctx.data.len();
        let m = ctx.cfg.value_samples_per_epoch.min(n);
        let mut idx = index::sample(&mut self.rng, n, m).into_vec();
        idx.sort_unstable();
        let states: Vec<&StateFeatures> = idx.iter().map(|&i| &ctx.data.samples[i].features).collect();
        let sampled = sample_raw(ctx.predictor, &states, ctx.sched, &mut self.rng)?;
        let k = ctx.data.n_users();
        for (r, &i) in idx.iter().enumerate() {
            let h = &ctx.data.samples[i].channel;
            let explore: Vec<f64> =
                (0..k).map(|_| EXPLORATION_STD * self.rng.sample::<f64, _>(StandardNormal)).collect();
            for raw in [sampled.row(r).to_vec(), explore, ctx.buffer.get(i).raw.clone()] {
                let powers = self.env.powers(&raw);
                let se = self.env.se(h, &powers)?;
                self.replay.push(ValueTuple { index: i, powers, se });
            }
        }
        if self.replay.len() > REPLAY_CAP {
            let excess = self.replay.len() - REPLAY_CAP;
            self.replay.drain(..excess);
        }
        let loss = self.critic.fit(&ctx.data.samples, &self.replay, ctx.cfg.value_fit_steps, &mut self.rng)?;
        self.value_losses.push(loss);
        Ok(())
    }

    fn gradient_calls(&self) -> u64 {
        self.critic.gradient_calls()
    }
}

/// Trains a diffusion policy when only SE values can be observed. A critic
/// supplies the ascent direction for buffer improvement while acceptance
/// still uses observed SE. Data for fitting the critic is drawn from a
/// separate random stream, so the main trajectory depends only on the
/// critic's gradients.
pub fn train_model_free_unsup(
    predictor: &mut Network,
    critic: &mut dyn Critic,
    data: &Dataset,
    env: &Environment,
    sched: &DiffusionSchedule,
    cfg: &TrainConfig,
) -> Result<ModelFreeReport> {
    let mut objective = ModelFreeObjective {
        env,
        critic,
        replay: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ VALUE_STREAM),
        value_losses: Vec::new(),
    };
    let base = run_loop(predictor, data, env, &mut objective, sched, cfg)?;
    Ok(ModelFreeReport { base, value_losses: objective.value_losses })
}
