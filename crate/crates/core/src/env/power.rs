use crate::error::{Error, Result};

/// Per-user transmit powers together with the budget they were drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    powers: Vec<f64>,
    budget: f64,
}

/// Slack allowed on `sum(p) <= budget`.
pub const BUDGET_SLACK: f64 = 1e-9;

impl PowerAllocation {
    pub fn new(powers: Vec<f64>, budget: f64) -> Result<Self> {
        if let Some((k, &p)) = powers.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidConfig(format!("power of user {k} must be finite and nonnegative, got {p}")));
        }
        let total: f64 = powers.iter().sum();
        if total > budget + BUDGET_SLACK {
            return Err(Error::InvalidConfig(format!("total power {total} exceeds budget {budget}")));
        }
        Ok(Self { powers, budget })
    }

    /// Equal split of the budget over `n_users`.
    pub fn equal(n_users: usize, budget: f64) -> Self {
        Self { powers: vec![budget / n_users as f64; n_users], budget }
    }

    /// Allocations that are not tied to a sum budget (used when the budget is
    /// enforced by a penalty rather than by normalization).
    pub fn unconstrained(powers: Vec<f64>) -> Result<Self> {
        let budget = powers.iter().sum::<f64>();
        Self::new(powers, budget)
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn n_users(&self) -> usize {
        self.powers.len()
    }

    pub fn total(&self) -> f64 {
        self.powers.iter().sum()
    }

    pub fn max_power(&self) -> f64 {
        self.powers.iter().copied().fold(0.0, f64::max)
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self { powers: perm.iter().map(|&i| self.powers[i]).collect(), budget: self.budget }
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// Below this every softplus value is e^x to within 1e-13 relative, and the
// ratio is evaluated as a softmax to avoid a 0/0.
const SOFTMAX_REGIME: f64 = -30.0;

/// Weights `s_k / sum_j s_j` with `s = softplus` and their derivative
/// factors `d s_k / d raw_k` expressed relative to the same denominator.
fn softplus_ratio(raw: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let top = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top < SOFTMAX_REGIME {
        // s(x) ~ e^x and s'(x) ~ e^x, both scaled by e^{-top}.
        let s: Vec<f64> = raw.iter().map(|&r| (r - top).exp()).collect();
        let total: f64 = s.iter().sum();
        (s.clone(), s, total)
    } else {
        let s: Vec<f64> = raw.iter().map(|&r| softplus(r)).collect();
        let ds: Vec<f64> = raw.iter().map(|&r| sigmoid(r)).collect();
        let total: f64 = s.iter().sum();
        (s, ds, total)
    }
}

/// Smooth map from unconstrained scores to the budget simplex,
/// `p_k = P softplus(raw_k) / sum_j softplus(raw_j)`.
pub fn normalize_power(raw: &[f64], budget: f64) -> PowerAllocation {
    let (s, _, total) = softplus_ratio(raw);
    PowerAllocation { powers: s.iter().map(|&v| budget * v / total).collect(), budget }
}

/// Pulls a gradient with respect to the normalized powers back to the raw
/// scores.
pub fn normalize_power_vjp(raw: &[f64], budget: f64, grad_powers: &[f64]) -> Vec<f64> {
    let (s, ds, total) = softplus_ratio(raw);
    // dp_k/draw_i = P ds_i (delta_ki / S - s_k / S^2)
    let weighted: f64 = grad_powers.iter().zip(&s).map(|(g, v)| g * v).sum::<f64>() / total;
    grad_powers.iter().zip(&ds).map(|(g, d)| budget * d * (g - weighted) / total).collect()
}
