use serde::{Deserialize, Serialize};

/// Optimizer descriptor recorded alongside trained parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { learning_rate: f64 },
    Sgd { learning_rate: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::Adam { learning_rate: 1e-3 }
    }
}

/// Adam (or plain gradient descent) over a flat parameter vector.
/// `step` descends; negate the gradient to ascend.
#[derive(Debug, Clone)]
pub struct Adam {
    kind: OptimizerKind,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Adam {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        Self { kind, first: vec![0.0; n_params], second: vec![0.0; n_params], steps: 0 }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        match self.kind {
            OptimizerKind::Adam { learning_rate } | OptimizerKind::Sgd { learning_rate } => learning_rate,
        }
    }

    /// Changes the step size without resetting the moment estimates.
    pub fn set_learning_rate(&mut self, lr: f64) {
        match &mut self.kind {
            OptimizerKind::Adam { learning_rate } | OptimizerKind::Sgd { learning_rate } => *learning_rate = lr,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd { learning_rate } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= learning_rate * g;
                }
            }
            OptimizerKind::Adam { learning_rate } => {
                let c1 = 1.0 - BETA1.powi(self.steps as i32);
                let c2 = 1.0 - BETA2.powi(self.steps as i32);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.first[i] = BETA1 * self.first[i] + (1.0 - BETA1) * g;
                    self.second[i] = BETA2 * self.second[i] + (1.0 - BETA2) * g * g;
                    let m = self.first[i] / c1;
                    let v = self.second[i] / c2;
                    params[i] -= learning_rate * m / (v.sqrt() + EPS);
                }
            }
        }
    }
}
