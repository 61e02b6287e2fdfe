use ndarray::Array2;

use super::{Dataset, Sample};
use crate::env::Environment;
use crate::error::Result;

/// Halvings tried after a rejected ascent step before giving up on it.
const BACKTRACK: usize = 3;

/// Best action found so far for one training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    pub raw: Vec<f64>,
    pub powers: Vec<f64>,
    pub se: f64,
    /// Value the improvement loop ranks actions by; equals `se` unless a
    /// penalty is active.
    pub score: f64,
}

/// Per-sample store of the best raw action found so far, used as the
/// diffusion training target.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionBuffer {
    entries: Vec<BufferEntry>,
}

impl ActionBuffer {
    /// Every sample starts at an equal split of the budget.
    pub fn equal_power(env: &Environment, data: &Dataset) -> Result<Self> {
        data.require_nonempty()?;
        let raw = env.equal_power_raw(data.n_users());
        let entries = data.samples.iter().map(|s| entry(env, s, raw.clone())).collect::<Result<_>>()?;
        Ok(Self { entries })
    }

    pub fn from_raw(env: &Environment, data: &Dataset, raw: &[Vec<f64>]) -> Result<Self> {
        let entries = data.samples.iter().zip(raw).map(|(s, r)| entry(env, s, r.clone())).collect::<Result<_>>()?;
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    pub fn get(&self, i: usize) -> &BufferEntry {
        &self.entries[i]
    }

    pub fn mean_se(&self) -> f64 {
        self.entries.iter().map(|e| e.se).sum::<f64>() / self.entries.len().max(1) as f64
    }

    /// Raw actions stacked as `len x K`.
    pub fn raw_matrix(&self) -> Array2<f64> {
        let k = self.entries.first().map_or(0, |e| e.raw.len());
        Array2::from_shape_fn((self.entries.len(), k), |(i, j)| self.entries[i].raw[j])
    }

    /// Stores `raw` for sample `i`, recomputing SE and powers.
    pub fn write(&mut self, env: &Environment, sample: &Sample, i: usize, raw: Vec<f64>) -> Result<()> {
        self.entries[i] = entry(env, sample, raw)?;
        Ok(())
    }

    pub(crate) fn replace(&mut self, i: usize, e: BufferEntry) {
        self.entries[i] = e;
    }

    pub(crate) fn rescore(&mut self, objective: &dyn ActionObjective, data: &Dataset) -> Result<()> {
        for (i, (e, s)) in self.entries.iter_mut().zip(&data.samples).enumerate() {
            e.score = objective.score(i, s, &e.powers, e.se)?;
        }
        Ok(())
    }
}

fn entry(env: &Environment, sample: &Sample, raw: Vec<f64>) -> Result<BufferEntry> {
    let powers = env.powers(&raw);
    let se = env.se(&sample.channel, &powers)?;
    Ok(BufferEntry { raw, powers, se, score: se })
}

/// What the improvement loop climbs.
pub(crate) trait ActionObjective {
    fn env(&self) -> &Environment;

    /// Ranking value of `powers` for sample `i`; `se` is its true SE.
    fn score(&self, i: usize, sample: &Sample, powers: &[f64], se: f64) -> Result<f64>;

    /// Gradient of the ranking value with respect to the powers.
    fn power_gradient(&self, i: usize, sample: &Sample, powers: &[f64]) -> Result<Vec<f64>>;

    /// Builds a scored buffer entry for `raw`.
    fn evaluate(&self, i: usize, sample: &Sample, raw: Vec<f64>) -> Result<BufferEntry> {
        let mut e = entry(self.env(), sample, raw)?;
        e.score = self.score(i, sample, &e.powers, e.se)?;
        Ok(e)
    }
}

/// Plain SE ascent with the environment's analytic gradient.
pub(crate) struct SeObjective<'a> {
    pub env: &'a Environment,
}

impl ActionObjective for SeObjective<'_> {
    fn env(&self) -> &Environment {
        self.env
    }

    fn score(&self, _: usize, _: &Sample, _: &[f64], se: f64) -> Result<f64> {
        Ok(se)
    }

    fn power_gradient(&self, _: usize, sample: &Sample, powers: &[f64]) -> Result<Vec<f64>> {
        self.env.se_gradient(&sample.channel, powers)
    }
}

/// Gradient ascent on every buffer entry in raw action space. A step is kept
/// only if it raises the entry's score; rejected steps are retried at half
/// length a few times without a new gradient evaluation.
pub fn improve_actions(
    env: &Environment,
    data: &Dataset,
    buffer: &mut ActionBuffer,
    steps: usize,
    step_size: f64,
) -> Result<()> {
    improve_with(&SeObjective { env }, data, buffer, steps, step_size, f64::INFINITY)
}

pub(crate) fn improve_with(
    objective: &dyn ActionObjective,
    data: &Dataset,
    buffer: &mut ActionBuffer,
    steps: usize,
    step_size: f64,
    raw_limit: f64,
) -> Result<()> {
    for (i, sample) in data.samples.iter().enumerate() {
        let start = buffer.entries[i].clone();
        buffer.entries[i] = improve_entry(objective, i, sample, start, steps, step_size, raw_limit)?;
    }
    Ok(())
}

pub(crate) fn improve_entry(
    objective: &dyn ActionObjective,
    i: usize,
    sample: &Sample,
    mut current: BufferEntry,
    steps: usize,
    step_size: f64,
    raw_limit: f64,
) -> Result<BufferEntry> {
    let env = objective.env();
    for _ in 0..steps {
        let g_p = objective.power_gradient(i, sample, &current.powers)?;
        let g = env.powers_vjp(&current.raw, &g_p);
        let mut eta = step_size;
        for _ in 0..=BACKTRACK {
            let raw: Vec<f64> =
                current.raw.iter().zip(&g).map(|(r, d)| (r + eta * d).clamp(-raw_limit, raw_limit)).collect();
            let candidate = objective.evaluate(i, sample, raw)?;
            if candidate.score > current.score {
                current = candidate;
                break;
            }
            eta *= 0.5;
        }
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::env::ScenarioConfig;

    fn setup(k: usize, n: usize, seed: u64) -> (Environment, Dataset) {
        let cfg = ScenarioConfig::new(8, k, 10.0, 1.0, 0.0, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (Environment::new(&cfg), Dataset::generate(&cfg, n, &mut rng))
    }

    #[test]
    fn starts_at_equal_power() {
        let (env, data) = setup(4, 5, 1);
        let buf = ActionBuffer::equal_power(&env, &data).unwrap();
        for (e, s) in buf.entries().iter().zip(&data.samples) {
            assert!(e.powers.iter().all(|p| (p - 2.5).abs() < 1e-12));
            assert_eq!(e.se, env.se(&s.channel, &e.powers).unwrap());
        }
    }

    #[test]
    fn zero_steps_leave_buffer_unchanged() {
        let (env, data) = setup(4, 6, 2);
        let mut buf = ActionBuffer::equal_power(&env, &data).unwrap();
        let before = buf.clone();
        improve_actions(&env, &data, &mut buf, 0, 1.0).unwrap();
        assert_eq!(buf, before);
        assert_eq!(env.gradient_calls(), 0);
    }

    #[test]
    fn stored_se_matches_stored_action() {
        let (env, data) = setup(4, 8, 3);
        let mut buf = ActionBuffer::equal_power(&env, &data).unwrap();
        improve_actions(&env, &data, &mut buf, 5, 1.0).unwrap();
        for (e, s) in buf.entries().iter().zip(&data.samples) {
            assert_eq!(e.se, env.se_raw(&s.channel, &e.raw).unwrap());
        }
    }

    #[test]
    fn improvement_never_lowers_se() {
        let (env, data) = setup(4, 32, 4);
        let mut buf = ActionBuffer::equal_power(&env, &data).unwrap();
        let before: Vec<f64> = buf.entries().iter().map(|e| e.se).collect();
        improve_actions(&env, &data, &mut buf, 10, 1.0).unwrap();
        let mut strict = 0;
        for (e, b) in buf.entries().iter().zip(&before) {
            assert!(e.se >= *b);
            if e.se > *b {
                strict += 1;
            }
        }
        assert!(strict > 0);
        assert_eq!(env.gradient_calls(), 32 * 10);
    }

    #[test]
    fn single_user_climbs_to_full_power() {
        // With one user the normalized map always spends the full budget.
        let (env, data) = setup(1, 3, 5);
        let mut buf = ActionBuffer::equal_power(&env, &data).unwrap();
        let start = buf.mean_se();
        improve_actions(&env, &data, &mut buf, 5, 1.0).unwrap();
        assert!(buf.mean_se() >= start);
        for (e, s) in buf.entries().iter().zip(&data.samples) {
            let full = (1.0 + 10.0 * s.channel.column_norm_sqr(0)).log2();
            assert!((e.se - full).abs() < 1e-9);
        }
    }

    #[test]
    fn raw_limit_is_respected() {
        let (env, data) = setup(4, 8, 6);
        let mut buf = ActionBuffer::equal_power(&env, &data).unwrap();
        improve_with(&SeObjective { env: &env }, &data, &mut buf, 20, 5.0, 0.5).unwrap();
        for e in buf.entries() {
            assert!(e.raw.iter().all(|r| r.abs() <= 0.5));
        }
    }
}
