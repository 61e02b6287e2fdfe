use std::fmt;

use rand::Rng;

use crate::diffusion::{sample_raw, Candidate, DiffusionSchedule};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::nn::{Network, StateFeatures};

type ValueFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradientFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A constraint `g(p) <= 0` on the power vector.
pub struct Constraint {
    name: String,
    value: ValueFn,
    gradient: Option<GradientFn>,
}

impl fmt::Debug for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Constraint")
            .field("name", &self.name)
            .field("differentiable", &self.gradient.is_some())
            .finish()
    }
}

impl Constraint {
    /// A constraint without a gradient; it cannot be registered until one is
    /// attached with [`Constraint::with_gradient`].
    pub fn new(name: impl Into<String>, value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), value: Box::new(value), gradient: None }
    }

    pub fn with_gradient(mut self, gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.gradient = Some(Box::new(gradient));
        self
    }

    /// `sum(p) <= budget`.
    pub fn total_power(budget: f64) -> Self {
        Self::new("total_power", move |p| p.iter().sum::<f64>() - budget).with_gradient(|p| vec![1.0; p.len()])
    }

    /// `p[user] >= min`.
    pub fn min_power(user: usize, min: f64) -> Self {
        Self::new(format!("min_power_{user}"), move |p| min - p[user]).with_gradient(move |p| {
            let mut g = vec![0.0; p.len()];
            g[user] = -1.0;
            g
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self, powers: &[f64]) -> f64 {
        (self.value)(powers)
    }

    pub fn gradient(&self, powers: &[f64]) -> Vec<f64> {
        (self.gradient.as_ref().expect("registered constraints are differentiable"))(powers)
    }
}

/// Registered constraints; all of them are differentiable.
#[derive(Debug, Default)]
pub struct ConstraintSet {
    constraints: Vec<Constraint>,
}

impl ConstraintSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, constraint: Constraint) -> Result<()> {
        if constraint.gradient.is_none() {
            return Err(Error::NonDifferentiableConstraint(constraint.name));
        }
        self.constraints.push(constraint);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Constraint> {
        self.constraints.iter()
    }

    /// Largest positive constraint value, or zero when all hold.
    pub fn max_violation(&self, powers: &[f64]) -> f64 {
        self.constraints.iter().map(|c| c.value(powers)).fold(0.0, f64::max)
    }
}

/// Best-of-N sampling for constrained policies. Candidates whose largest
/// violation is within `tolerance` rank above all others and are ordered by
/// `score(i, powers)`; when no candidate is within tolerance the least
/// violating one is kept. Ties keep the earliest draw.
#[allow(clippy::too_many_arguments)]
pub fn feasible_best_of_n<R, F>(
    predictor: &Network,
    env: &Environment,
    constraints: &ConstraintSet,
    states: &[&StateFeatures],
    sched: &DiffusionSchedule,
    rng: &mut R,
    n_candidates: usize,
    tolerance: f64,
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
    let mut out = Vec::with_capacity(states.len());
    for i in 0..states.len() {
        // (excess violation, -score) ordered lexicographically.
        let mut keep: Option<((f64, f64), Candidate)> = None;
        for c in 0..n_candidates {
            let row = raw.row(i * n_candidates + c).to_vec();
            let powers = env.powers(&row);
            let v = constraints.max_violation(&powers);
            let excess = if v <= tolerance { 0.0 } else { v };
            let s = score(i, &powers)?;
            let key = (excess, -s);
            if keep.as_ref().is_none_or(|(k, _)| key.0 < k.0 || (key.0 == k.0 && key.1 < k.1)) {
                keep = Some((key, Candidate { raw: row, powers, score: s }));
            }
        }
        out.push(keep.expect("at least one candidate").1);
    }
    Ok(out)
}
