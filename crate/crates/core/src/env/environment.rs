use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{normalize_power, normalize_power_vjp, se_gradient, se_of_action, softplus, ChannelMatrix, ScenarioConfig};
use crate::error::Result;

/// How raw policy outputs become transmit powers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMap {
    /// Softplus ratio scaled to the budget; always feasible.
    #[default]
    Normalized,
    /// Elementwise softplus; the budget must be enforced separately.
    Softplus,
}

/// Objective evaluator shared by training and evaluation. Counts gradient
/// evaluations so that training budgets can be compared.
#[derive(Debug)]
pub struct Environment {
    pub budget: f64,
    pub noise_power: f64,
    pub action_map: ActionMap,
    gradient_calls: AtomicU64,
}

impl Clone for Environment {
    fn clone(&self) -> Self {
        Self {
            budget: self.budget,
            noise_power: self.noise_power,
            action_map: self.action_map,
            gradient_calls: AtomicU64::new(self.gradient_calls()),
        }
    }
}

impl Environment {
    pub fn new(scenario: &ScenarioConfig) -> Self {
        Self {
            budget: scenario.power_budget,
            noise_power: scenario.noise_power,
            action_map: ActionMap::Normalized,
            gradient_calls: AtomicU64::new(0),
        }
    }

    pub fn with_action_map(mut self, map: ActionMap) -> Self {
        self.action_map = map;
        self
    }

    pub fn powers(&self, raw: &[f64]) -> Vec<f64> {
        match self.action_map {
            ActionMap::Normalized => normalize_power(raw, self.budget).powers().to_vec(),
            ActionMap::Softplus => raw.iter().map(|&r| softplus(r)).collect(),
        }
    }

    /// Raw scores that map to an equal split of the budget.
    pub fn equal_power_raw(&self, n_users: usize) -> Vec<f64> {
        match self.action_map {
            ActionMap::Normalized => vec![0.0; n_users],
            ActionMap::Softplus => {
                let p = self.budget / n_users as f64;
                vec![p + (-(-p).exp_m1()).ln(); n_users]
            }
        }
    }

    /// Pulls a power-space gradient back to raw scores.
    pub fn powers_vjp(&self, raw: &[f64], grad_powers: &[f64]) -> Vec<f64> {
        match self.action_map {
            ActionMap::Normalized => normalize_power_vjp(raw, self.budget, grad_powers),
            ActionMap::Softplus => raw.iter().zip(grad_powers).map(|(&r, g)| g / (1.0 + (-r).exp())).collect(),
        }
    }

    pub fn se(&self, h: &ChannelMatrix, powers: &[f64]) -> Result<f64> {
        se_of_action(h, powers, self.noise_power)
    }

    pub fn se_raw(&self, h: &ChannelMatrix, raw: &[f64]) -> Result<f64> {
        self.se(h, &self.powers(raw))
    }

    /// SE gradient with respect to the powers; counted.
    pub fn se_gradient(&self, h: &ChannelMatrix, powers: &[f64]) -> Result<Vec<f64>> {
        self.gradient_calls.fetch_add(1, Ordering::Relaxed);
        se_gradient(h, powers, self.noise_power)
    }

    /// SE and its gradient with respect to the raw scores; counted.
    pub fn se_and_raw_gradient(&self, h: &ChannelMatrix, raw: &[f64]) -> Result<(f64, Vec<f64>)> {
        let powers = self.powers(raw);
        let se = self.se(h, &powers)?;
        let g = self.se_gradient(h, &powers)?;
        Ok((se, self.powers_vjp(raw, &g)))
    }

    pub fn gradient_calls(&self) -> u64 {
        self.gradient_calls.load(Ordering::Relaxed)
    }

    pub fn reset_gradient_calls(&self) {
        self.gradient_calls.store(0, Ordering::Relaxed);
    }
}
