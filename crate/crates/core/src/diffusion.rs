//! DDPM machinery over K-dimensional raw action vectors.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{ChannelMatrix, Environment, PowerAllocation};
use crate::error::{Error, Result};
use crate::nn::{NetInput, Network, StateFeatures};

/// Largest number of chains pushed through the network at once.
const CHAIN_BATCH: usize = 4096;

/// Per-step variances `beta_t` with `alpha_t = 1 - beta_t` and
/// `alpha_bar_t = prod_{s <= t} alpha_s`. Steps are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// Serializable schedule parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: 50, beta_start: 1e-4, beta_end: 0.15 }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

/// Linearly spaced betas from `beta_start` to `beta_end`.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    if steps < 2 {
        return Err(Error::InvalidConfig(format!("schedule needs at least 2 steps, got {steps}")));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidConfig(format!("need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}")));
    }
    let span = beta_end - beta_start;
    let betas = (0..steps).map(|i| beta_start + span * i as f64 / (steps - 1) as f64).collect();
    DiffusionSchedule::from_betas(betas)
}

impl DiffusionSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::InvalidConfig("every beta must lie in (0, 1)".into()));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self { betas, alphas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `alpha_bar_T < 0.05`: the terminal state is close to pure noise.
    pub fn reaches_pure_noise(&self) -> bool {
        *self.alpha_bars.last().unwrap() < 0.05
    }

    /// Standard deviation of the noise injected when stepping from `t`.
    pub fn reverse_sigma(&self, t: usize) -> f64 {
        if t > 1 {
            self.beta(t).sqrt()
        } else {
            0.0
        }
    }

    fn check_step(&self, t: usize) {
        assert!((1..=self.steps()).contains(&t), "step {t} outside 1..={}", self.steps());
    }
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        ScheduleConfig::default().build().expect("default schedule is valid")
    }
}

/// A noised action `x_t` at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisySample {
    pub x: Vec<f64>,
    pub t: usize,
}

/// Closed-form `q(x_t | x_0)`: `sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn forward_diffuse(x0: &[f64], t: usize, eps: &[f64], sched: &DiffusionSchedule) -> NoisySample {
    sched.check_step(t);
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    NoisySample { x: x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect(), t }
}

/// Deterministic part of the reverse step,
/// `(x_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t)`.
pub fn reverse_mean(x_t: &[f64], t: usize, eps_hat: &[f64], sched: &DiffusionSchedule) -> Vec<f64> {
    sched.check_step(t);
    let coeff = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let scale = 1.0 / sched.alpha(t).sqrt();
    x_t.iter().zip(eps_hat).map(|(x, e)| scale * (x - coeff * e)).collect()
}

/// One ancestral step `x_t -> x_{t-1}` with variance `beta_t` (none at
/// `t = 1`, where no randomness is drawn).
pub fn reverse_step<R: Rng + ?Sized>(
    x_t: &[f64],
    t: usize,
    eps_hat: &[f64],
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> Vec<f64> {
    let mut x = reverse_mean(x_t, t, eps_hat, sched);
    let sigma = sched.reverse_sigma(t);
    if sigma > 0.0 {
        for v in &mut x {
            let z: f64 = rng.sample(StandardNormal);
            *v += sigma * z;
        }
    }
    x
}

/// Runs one full reverse chain per state, conditioning the noise predictor on
/// the state and the step. Returns the terminal raw actions, `batch x K`.
pub fn sample_raw<R: Rng + ?Sized>(
    predictor: &Network,
    states: &[&StateFeatures],
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let Some(first) = states.first() else {
        return Ok(Array2::zeros((0, 0)));
    };
    let k_users = first.n_users();
    let mut out = Array2::zeros((states.len(), k_users));
    for (chunk_idx, chunk) in states.chunks(CHAIN_BATCH).enumerate() {
        let rows = chunk.len();
        let mut x = Array2::from_shape_fn((rows, k_users), |_| rng.sample::<f64, _>(StandardNormal));
        for t in (1..=sched.steps()).rev() {
            let steps = vec![t; rows];
            let eps_hat =
                predictor.forward(&NetInput { states: chunk.to_vec(), extra: Some(x.view()), steps: Some(&steps) })?;
            let coeff = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
            let scale = 1.0 / sched.alpha(t).sqrt();
            let sigma = sched.reverse_sigma(t);
            for (xv, e) in x.iter_mut().zip(eps_hat.iter()) {
                *xv = scale * (*xv - coeff * e);
                if sigma > 0.0 {
                    let z: f64 = rng.sample(StandardNormal);
                    *xv += sigma * z;
                }
            }
        }
        out.slice_mut(ndarray::s![chunk_idx * CHAIN_BATCH..chunk_idx * CHAIN_BATCH + rows, ..]).assign(&x);
    }
    Ok(out)
}

/// A sampled action with its score.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub raw: Vec<f64>,
    pub powers: Vec<f64>,
    pub score: f64,
}

/// Draws `n_candidates` chains per state and keeps the highest-scoring one.
/// `score(i, powers)` scores a candidate for state `i`. Ties keep the
/// earliest draw.
pub fn best_of_n<R, F>(
    predictor: &Network,
    env: &Environment,
    states: &[&StateFeatures],
    sched: &DiffusionSchedule,
    rng: &mut R,
    n_candidates: usize,
    score: F,
) -> Result<Vec<Candidate>>
where
    R: Rng + ?Sized,
    F: Fn(usize, &[f64]) -> Result<f64>,
{
    if n_candidates == 0 {
        return Err(Error::InvalidConfig("n_candidates must be at least 1".into()));
    }
    let repeated: Vec<&StateFeatures> = states.iter().flat_map(|s| std::iter::repeat_n(*s, n_candidates)).collect();
    let raw = sample_raw(predictor, &repeated, sched, rng)?;
    let mut best = Vec::with_capacity(states.len());
    for i in 0..states.len() {
        let mut keep: Option<Candidate> = None;
        for c in 0..n_candidates {
            let row = raw.row(i * n_candidates + c).to_vec();
            let powers = env.powers(&row);
            let s = if n_candidates == 1 { f64::NAN } else { score(i, &powers)? };
            if keep.as_ref().is_none_or(|k| s > k.score) {
                keep = Some(Candidate { raw: row, powers, score: s });
            }
        }
        best.push(keep.expect("at least one candidate"));
    }
    if n_candidates == 1 {
        for (i, c) in best.iter_mut().enumerate() {
            c.score = score(i, &c.powers)?;
        }
    }
    Ok(best)
}

/// Samples a power allocation for one channel; with `n_candidates > 1` the
/// candidate with the highest SE is returned.
pub fn sample_action<R: Rng + ?Sized>(
    predictor: &Network,
    env: &Environment,
    h: &ChannelMatrix,
    sched: &DiffusionSchedule,
    rng: &mut R,
    n_candidates: usize,
) -> Result<PowerAllocation> {
    let feats = StateFeatures::from_channel(h);
    let best = best_of_n(predictor, env, &[&feats], sched, rng, n_candidates, |_, p| env.se(h, p))?;
    let c = best.into_iter().next().expect("one state");
    PowerAllocation::new(c.powers, env.budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_channel, ScenarioConfig};
    use crate::nn::ArchDescriptor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_step_arithmetic() {
        let s = make_schedule(2, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5, 0.25]);
    }

    #[test]
    fn default_schedule_ends_near_pure_noise() {
        let s = DiffusionSchedule::default();
        assert_eq!(s.steps(), 50);
        let product: f64 = (1..=50).map(|t| 1.0 - s.beta(t)).product();
        assert!((product - s.alpha_bar(50)).abs() < 1e-15);
        assert!(product < 0.05, "alpha_bar_T = {product}");
        assert!(s.reaches_pure_noise());
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        assert!(make_schedule(10, 0.2, 0.1).is_err());
        assert!(make_schedule(1, 0.1, 0.1).is_err());
        assert!(make_schedule(10, 0.0, 0.1).is_err());
        assert!(make_schedule(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn forward_diffusion_arithmetic() {
        let s = DiffusionSchedule::from_betas(vec![0.5, 0.5]).unwrap();
        let x0 = [1.0, -2.0, 0.5];
        let eps = [0.3, 0.1, -1.0];
        let xt = forward_diffuse(&x0, 2, &eps, &s);
        for i in 0..3 {
            let expected = 0.5 * x0[i] + 0.75f64.sqrt() * eps[i];
            assert!((xt.x[i] - expected).abs() < 1e-15);
        }
        let quiet = forward_diffuse(&x0, 1, &[0.0; 3], &s);
        for i in 0..3 {
            assert!((quiet.x[i] - 0.5f64.sqrt() * x0[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn reverse_step_reductions() {
        let s = DiffusionSchedule::default();
        let x = [0.4, -1.1];
        let mean = reverse_mean(&x, 10, &[0.0, 0.0], &s);
        for i in 0..2 {
            assert!((mean[i] - x[i] / s.alpha(10).sqrt()).abs() < 1e-15);
        }
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(2);
        let eps = [0.2, -0.3];
        assert_eq!(reverse_step(&x, 1, &eps, &s, &mut a), reverse_step(&x, 1, &eps, &s, &mut b));
        assert_eq!(reverse_step(&x, 1, &eps, &s, &mut a), reverse_mean(&x, 1, &eps, &s));
    }

    #[test]
    fn zero_predictor_sampling_is_reproducible() {
        let cfg = ScenarioConfig::default().with_correlation(0.3).unwrap();
        let h = sample_channel(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let env = Environment::new(&cfg);
        let net = Network::zeros(ArchDescriptor::fnn_noise_predictor(8, 4, &[16])).unwrap();
        let s = DiffusionSchedule::default();
        let a = sample_action(&net, &env, &h, &s, &mut ChaCha8Rng::seed_from_u64(5), 1).unwrap();
        let b = sample_action(&net, &env, &h, &s, &mut ChaCha8Rng::seed_from_u64(5), 1).unwrap();
        assert_eq!(a, b);
        assert!((a.total() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn best_of_n_dominates_discarded_candidates() {
        let cfg = ScenarioConfig::default().with_correlation(0.9).unwrap();
        let h = sample_channel(&cfg, &mut ChaCha8Rng::seed_from_u64(2));
        let env = Environment::new(&cfg);
        let mut init = ChaCha8Rng::seed_from_u64(3);
        let net = Network::new(ArchDescriptor::gnn_noise_predictor(8, 2), &mut init).unwrap();
        let s = DiffusionSchedule::default();
        let feats = StateFeatures::from_channel(&h);
        let seed = 44;
        let best = best_of_n(&net, &env, &[&feats], &s, &mut ChaCha8Rng::seed_from_u64(seed), 8, |_, p| env.se(&h, p))
            .unwrap()
            .remove(0);
        // replay the same draws to recover every candidate
        let replay = sample_raw(&net, &[&feats; 8], &s, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut ses = Vec::new();
        for row in replay.rows() {
            ses.push(env.se_raw(&h, row.as_slice().unwrap()).unwrap());
        }
        assert!(ses.iter().all(|&v| best.score >= v));
        assert!(ses.contains(&best.score));
    }
}
