//! Multi-user MISO downlink: channels, the sum-SE objective, the
//! regularized-inverse beamformer structure, WMMSE and a grid oracle.

mod channel;
mod environment;
mod oracle;
mod power;
mod scenario;
mod structure;
mod wmmse;

pub use channel::{sample_channel, BeamformingMatrix, ChannelMatrix};
pub use environment::{ActionMap, Environment};
pub use oracle::brute_force_power;
pub use power::{normalize_power, normalize_power_vjp, softplus, PowerAllocation};
pub use scenario::ScenarioConfig;
pub use structure::{recover_beamformer, se_gradient, se_of_action, spectral_efficiency};
pub use wmmse::{wmmse, WmmseOutcome};

pub use num_complex::Complex64;
