use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Static description of one downlink scenario.
///
/// `power_budget / noise_power` is the SNR. The correlation weight `rho`
/// mixes a channel component shared by all users with a per-user one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_antennas: usize,
    pub n_users: usize,
    pub power_budget: f64,
    pub noise_power: f64,
    pub correlation: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(
        n_antennas: usize,
        n_users: usize,
        power_budget: f64,
        noise_power: f64,
        correlation: f64,
        seed: u64,
    ) -> Result<Self> {
        let cfg = Self { n_antennas, n_users, power_budget, noise_power, correlation, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Unit noise power, budget set from the SNR in dB.
    pub fn from_snr_db(n_antennas: usize, n_users: usize, snr_db: f64, correlation: f64, seed: u64) -> Result<Self> {
        Self::new(n_antennas, n_users, 10f64.powf(snr_db / 10.0), 1.0, correlation, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_antennas == 0 || self.n_users == 0 {
            return Err(Error::InvalidConfig(format!(
                "antenna and user counts must be positive (N={}, K={})",
                self.n_antennas, self.n_users
            )));
        }
        if !(self.power_budget > 0.0 && self.power_budget.is_finite()) {
            return Err(Error::InvalidConfig(format!("power budget must be positive, got {}", self.power_budget)));
        }
        if !(self.noise_power > 0.0 && self.noise_power.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise power must be positive, got {}", self.noise_power)));
        }
        if !(0.0..=1.0).contains(&self.correlation) {
            return Err(Error::InvalidConfig(format!("correlation must lie in [0, 1], got {}", self.correlation)));
        }
        Ok(())
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * (self.power_budget / self.noise_power).log10()
    }

    pub fn with_correlation(mut self, correlation: f64) -> Result<Self> {
        self.correlation = correlation;
        self.validate()?;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

impl Default for ScenarioConfig {
    /// Eight antennas, four users, 10 dB.
    fn default() -> Self {
        Self { n_antennas: 8, n_users: 4, power_budget: 10.0, noise_power: 1.0, correlation: 0.0, seed: 0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_round_trip() {
        let cfg = ScenarioConfig::from_snr_db(8, 4, 10.0, 0.5, 1).unwrap();
        assert!((cfg.power_budget - 10.0).abs() < 1e-12);
        assert!((cfg.snr_db() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_fields() {
        assert!(ScenarioConfig::new(0, 4, 10.0, 1.0, 0.0, 0).is_err());
        assert!(ScenarioConfig::new(8, 0, 10.0, 1.0, 0.0, 0).is_err());
        assert!(ScenarioConfig::new(8, 4, 0.0, 1.0, 0.0, 0).is_err());
        assert!(ScenarioConfig::new(8, 4, 10.0, -1.0, 0.0, 0).is_err());
        assert!(ScenarioConfig::new(8, 4, 10.0, 1.0, 1.2, 0).is_err());
        assert!(ScenarioConfig::new(8, 4, 10.0, 1.0, f64::NAN, 0).is_err());
    }
}
