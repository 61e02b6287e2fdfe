//! Hand-differentiated networks: fully connected and message-passing models
//! used as noise predictors, direct policies and value estimators.

mod adam;
mod dense;
mod features;
mod fnn;
mod gnn;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, OptimizerKind};
pub use features::{timestep_embedding, StateFeatures, EDGE_DIM};

use crate::error::{Error, Result};
use fnn::FnnLayout;
use gnn::GnnLayout;

/// Default width of the sinusoidal step embedding.
pub const TIME_DIM: usize = 32;

/// Shape of a network. Stored in checkpoints; two networks with equal
/// descriptors have interchangeable parameter vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArchDescriptor {
    /// Perceptron over `[flat H, extra (K), step embedding]`.
    Fnn { n_antennas: usize, n_users: usize, hidden: Vec<usize>, extra_input: bool, time_dim: usize, outputs: usize },
    /// Message passing on the complete user graph with one scalar output per
    /// user. Works for any user count.
    Gnn { hidden: usize, rounds: usize, extra_input: bool, time_dim: usize },
}

impl ArchDescriptor {
    pub fn fnn_noise_predictor(n_antennas: usize, n_users: usize, hidden: &[usize]) -> Self {
        Self::Fnn {
            n_antennas,
            n_users,
            hidden: hidden.to_vec(),
            extra_input: true,
            time_dim: TIME_DIM,
            outputs: n_users,
        }
    }

    pub fn gnn_noise_predictor(hidden: usize, rounds: usize) -> Self {
        Self::Gnn { hidden, rounds, extra_input: true, time_dim: TIME_DIM }
    }

    pub fn fnn_policy(n_antennas: usize, n_users: usize, hidden: &[usize]) -> Self {
        Self::Fnn { n_antennas, n_users, hidden: hidden.to_vec(), extra_input: false, time_dim: 0, outputs: n_users }
    }

    pub fn gnn_policy(hidden: usize, rounds: usize) -> Self {
        Self::Gnn { hidden, rounds, extra_input: false, time_dim: 0 }
    }

    /// Scalar estimate from `[flat H, p / P]`.
    pub fn fnn_value(n_antennas: usize, n_users: usize, hidden: &[usize]) -> Self {
        Self::Fnn { n_antennas, n_users, hidden: hidden.to_vec(), extra_input: true, time_dim: 0, outputs: 1 }
    }

    /// Per-user estimates from the channel and `p / P`; a value network sums
    /// them.
    pub fn gnn_value(hidden: usize, rounds: usize) -> Self {
        Self::Gnn { hidden, rounds, extra_input: true, time_dim: 0 }
    }

    pub fn takes_extra(&self) -> bool {
        match self {
            Self::Fnn { extra_input, .. } | Self::Gnn { extra_input, .. } => *extra_input,
        }
    }

    pub fn time_dim(&self) -> usize {
        match self {
            Self::Fnn { time_dim, .. } | Self::Gnn { time_dim, .. } => *time_dim,
        }
    }

    pub fn summary(&self) -> String {
        match self {
            Self::Fnn { hidden, outputs, extra_input, time_dim, .. } => {
                format!("fnn(hidden={hidden:?}, outputs={outputs}, extra={extra_input}, time_dim={time_dim})")
            }
            Self::Gnn { hidden, rounds, extra_input, time_dim } => {
                format!("gnn(hidden={hidden}, rounds={rounds}, extra={extra_input}, time_dim={time_dim})")
            }
        }
    }
}

/// One batch of network inputs.
#[derive(Debug, Clone)]
pub struct NetInput<'a> {
    pub states: Vec<&'a StateFeatures>,
    /// Per-user scalar input (`x_t` or a power vector), `batch x K`.
    pub extra: Option<ArrayView2<'a, f64>>,
    /// Diffusion step per batch row.
    pub steps: Option<&'a [usize]>,
}

impl<'a> NetInput<'a> {
    pub fn states_only(states: Vec<&'a StateFeatures>) -> Self {
        Self { states, extra: None, steps: None }
    }

    pub fn batch_len(&self) -> usize {
        self.states.len()
    }
}

#[derive(Debug, Clone)]
enum Layout {
    Fnn(FnnLayout),
    Gnn(GnnLayout),
}

/// Intermediate values recorded by [`Network::forward_tape`].
#[derive(Debug)]
pub struct Tape(TapeInner);

#[derive(Debug)]
enum TapeInner {
    Fnn(fnn::FnnTape),
    Gnn(gnn::GnnTape),
}

/// Gradients returned by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<f64>,
    /// Gradient with respect to the per-user extra input, when present.
    pub extra: Option<Array2<f64>>,
}

/// Architecture plus its flat parameter vector.
#[derive(Debug, Clone)]
pub struct Network {
    arch: ArchDescriptor,
    layout: Layout,
    params: Vec<f64>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Network {
    /// All-zero parameters.
    pub fn zeros(arch: ArchDescriptor) -> Result<Self> {
        let layout = match &arch {
            ArchDescriptor::Fnn { n_antennas, n_users, hidden, extra_input, time_dim, outputs } => {
                let inputs = 2 * n_antennas * n_users + if *extra_input { *n_users } else { 0 } + time_dim;
                if inputs == 0 || *outputs == 0 || hidden.contains(&0) {
                    return Err(Error::Shape(format!("degenerate FNN {}", arch.summary())));
                }
                Layout::Fnn(FnnLayout::new(inputs, hidden, *outputs))
            }
            ArchDescriptor::Gnn { hidden, rounds, extra_input, time_dim } => {
                if *hidden == 0 {
                    return Err(Error::Shape("GNN hidden width must be positive".into()));
                }
                let node_inputs = 1 + usize::from(*extra_input) + time_dim;
                Layout::Gnn(GnnLayout::new(node_inputs, *hidden, *rounds))
            }
        };
        if arch.time_dim() % 2 != 0 {
            return Err(Error::Shape("step embedding width must be even".into()));
        }
        let len = match &layout {
            Layout::Fnn(l) => l.len(),
            Layout::Gnn(l) => l.len(),
        };
        Ok(Self { arch, layout, params: vec![0.0; len] })
    }

    /// Random initialization (see [`Network::reinitialize`]).
    pub fn new<R: Rng + ?Sized>(arch: ArchDescriptor, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        net.reinitialize(rng);
        Ok(net)
    }

    /// Variance-scaled Gaussian weights, zero biases.
    pub fn reinitialize<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        match &self.layout {
            Layout::Fnn(l) => l.init(&mut self.params, rng),
            Layout::Gnn(l) => l.init(&mut self.params, rng),
        }
    }

    pub fn from_params(arch: ArchDescriptor, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        if params.len() != net.params.len() {
            return Err(Error::Shape(format!(
                "{} expects {} parameters, got {}",
                net.arch.summary(),
                net.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Shape("parameters must be finite".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn arch(&self) -> &ArchDescriptor {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, input: &NetInput) -> Result<usize> {
        let batch = input.batch_len();
        if batch == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        let k_users = input.states[0].n_users();
        if input.states.iter().any(|s| s.n_users() != k_users) {
            return Err(Error::Shape("batch mixes user counts".into()));
        }
        if let ArchDescriptor::Fnn { n_antennas, n_users, .. } = &self.arch {
            if k_users != *n_users || input.states.iter().any(|s| s.flat.len() != 2 * n_antennas * n_users) {
                return Err(Error::Shape(format!("features do not match {}x{} FNN layout", n_antennas, n_users)));
            }
        }
        match (self.arch.takes_extra(), &input.extra) {
            (true, Some(x)) if x.dim() == (batch, k_users) => {}
            (false, None) => {}
            (true, Some(x)) => {
                return Err(Error::Shape(format!("extra input is {:?}, expected ({batch}, {k_users})", x.dim())))
            }
            (true, None) => return Err(Error::Shape("missing per-user input".into())),
            (false, Some(_)) => return Err(Error::Shape("unexpected per-user input".into())),
        }
        match (self.arch.time_dim() > 0, input.steps) {
            (true, Some(s)) if s.len() == batch => {}
            (false, None) => {}
            (true, _) => return Err(Error::Shape("missing or misaligned step indices".into())),
            (false, Some(_)) => return Err(Error::Shape("unexpected step indices".into())),
        }
        Ok(k_users)
    }

    /// Outputs, `batch x K` (or `batch x 1` for value networks).
    pub fn forward(&self, input: &NetInput) -> Result<Array2<f64>> {
        Ok(self.forward_tape(input)?.0)
    }

    pub fn forward_tape(&self, input: &NetInput) -> Result<(Array2<f64>, Tape)> {
        let k_users = self.check_input(input)?;
        let time_dim = self.arch.time_dim();
        Ok(match &self.layout {
            Layout::Fnn(l) => {
                let (out, tape) = l.forward(&self.params, input, time_dim);
                (out, Tape(TapeInner::Fnn(tape)))
            }
            Layout::Gnn(l) => {
                let (out, tape) = l.forward(&self.params, input, k_users, time_dim);
                (out, Tape(TapeInner::Gnn(tape)))
            }
        })
    }

    /// Backpropagates `d_out` (same shape as the forward output).
    pub fn backward(&self, tape: &Tape, d_out: ArrayView2<f64>) -> Gradients {
        let extra = self.arch.takes_extra();
        match (&self.layout, &tape.0) {
            (Layout::Fnn(l), TapeInner::Fnn(t)) => l.backward(&self.params, t, d_out, extra),
            (Layout::Gnn(l), TapeInner::Gnn(t)) => l.backward(&self.params, t, d_out, extra),
            _ => panic!("tape recorded by a different architecture"),
        }
    }
}
