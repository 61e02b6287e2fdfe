use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{spectral_efficiency, BeamformingMatrix, ChannelMatrix};
use crate::error::{Error, Result};

/// Result of a WMMSE run.
#[derive(Debug, Clone)]
pub struct WmmseOutcome {
    pub beamformer: BeamformingMatrix,
    /// SE of the initial point followed by the SE after every iteration.
    pub se_trace: Vec<f64>,
    pub iterations: usize,
    /// `false` when `max_iter` was reached before the improvement fell
    /// below `tol`.
    pub converged: bool,
}

impl WmmseOutcome {
    pub fn se(&self) -> f64 {
        *self.se_trace.last().expect("trace holds the initial point")
    }
}

const BISECTION_TOL: f64 = 1e-12;
const BISECTION_MAX_ITER: usize = 200;

/// Weighted-MMSE block-coordinate ascent on the sum SE under a total power
/// budget, started from equal-power maximum-ratio transmission.
pub fn wmmse(h: &ChannelMatrix, sigma2: f64, budget: f64, max_iter: usize, tol: f64) -> Result<WmmseOutcome> {
    if max_iter == 0 {
        return Err(Error::InvalidConfig("WMMSE needs max_iter >= 1".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("WMMSE tolerance must be positive, got {tol}")));
    }
    let hm = h.matrix();
    let (n, k_users) = (h.n_antennas(), h.n_users());

    let mut w = DMatrix::<Complex64>::zeros(n, k_users);
    let per_user = (budget / k_users as f64).sqrt();
    for k in 0..k_users {
        let norm = hm.column(k).norm();
        if norm > 0.0 {
            w.set_column(k, &(hm.column(k) * Complex64::from(per_user / norm)));
        }
    }
    let mut trace = vec![spectral_efficiency(h, &BeamformingMatrix::new(w.clone()), sigma2)?];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let c = hm.adjoint() * &w;
        // Receive filters and MSE weights.
        let mut receive = vec![Complex64::new(0.0, 0.0); k_users];
        let mut weight = vec![0.0; k_users];
        for k in 0..k_users {
            let total: f64 = (0..k_users).map(|j| c[(k, j)].norm_sqr()).sum::<f64>() + sigma2;
            receive[k] = c[(k, k)] / total;
            let mse = 1.0 - c[(k, k)].norm_sqr() / total;
            weight[k] = 1.0 / mse.max(f64::MIN_POSITIVE);
        }
        // Transmit step: w_k = omega_k u_k (M + mu I)^-1 h_k with the power
        // multiplier mu found by bisection.
        let mut m = DMatrix::<Complex64>::zeros(n, n);
        let mut rhs = DMatrix::<Complex64>::zeros(n, k_users);
        for k in 0..k_users {
            let hk = hm.column(k);
            let coeff = weight[k] * receive[k].norm_sqr();
            m += (&hk * hk.adjoint()) * Complex64::from(coeff);
            rhs.set_column(k, &(hk * (receive[k] * weight[k])));
        }
        let eig = m.symmetric_eigen();
        let projected = eig.eigenvectors.adjoint() * &rhs;
        let energy: DVector<f64> = DVector::from_fn(n, |i, _| projected.row(i).iter().map(|z| z.norm_sqr()).sum());
        let lambda = &eig.eigenvalues;
        let power_at = |mu: f64| -> f64 {
            (0..n)
                .map(|i| {
                    let d = (lambda[i] + mu).max(0.0);
                    if energy[i] == 0.0 {
                        0.0
                    } else {
                        energy[i] / (d * d)
                    }
                })
                .sum()
        };
        let mu = power_multiplier(&power_at, budget, lambda.min());

        let mut scaled = projected;
        for i in 0..n {
            let inv = 1.0 / (lambda[i] + mu);
            scaled.row_mut(i).scale_mut(inv);
        }
        w = &eig.eigenvectors * scaled;

        let se = spectral_efficiency(h, &BeamformingMatrix::new(w.clone()), sigma2)?;
        let prev = *trace.last().unwrap();
        trace.push(se);
        if se - prev < tol {
            converged = true;
            break;
        }
    }

    Ok(WmmseOutcome { beamformer: BeamformingMatrix::new(w), se_trace: trace, iterations, converged })
}

/// Smallest `mu >= 0` (to bisection accuracy) with `power(mu) <= budget`.
fn power_multiplier(power_at: &impl Fn(f64) -> f64, budget: f64, min_eigenvalue: f64) -> f64 {
    if min_eigenvalue > 1e-12 && power_at(0.0) <= budget {
        return 0.0;
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while power_at(hi) > budget {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..BISECTION_MAX_ITER {
        if budget - power_at(hi) <= BISECTION_TOL * budget {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if power_at(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_channel, ScenarioConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_user_converges_to_mrt_rate() {
        let cfg = ScenarioConfig::new(8, 1, 10.0, 1.0, 0.0, 0).unwrap();
        let h = sample_channel(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let out = wmmse(&h, 1.0, 10.0, 100, 1e-10).unwrap();
        let target = (1.0 + 10.0 * h.column_norm_sqr(0)).log2();
        assert!((out.se() - target).abs() < 1e-6);
    }

    #[test]
    fn trace_is_monotone_and_feasible() {
        for rho in [0.0, 0.5, 0.9] {
            let cfg = ScenarioConfig::default().with_correlation(rho).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            for _ in 0..10 {
                let h = sample_channel(&cfg, &mut rng);
                let out = wmmse(&h, 1.0, 10.0, 200, 1e-9).unwrap();
                for pair in out.se_trace.windows(2) {
                    assert!(pair[1] >= pair[0] - 1e-8, "{pair:?}");
                }
                assert!(out.beamformer.total_power() <= 10.0 + 1e-6);
            }
        }
    }

    #[test]
    fn iteration_cap_is_flagged() {
        let cfg = ScenarioConfig::default().with_correlation(0.5).unwrap();
        let h = sample_channel(&cfg, &mut ChaCha8Rng::seed_from_u64(2));
        let out = wmmse(&h, 1.0, 10.0, 1, 1e-12).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(!out.converged);
    }

    #[test]
    fn rejects_bad_arguments() {
        let cfg = ScenarioConfig::default();
        let h = sample_channel(&cfg, &mut ChaCha8Rng::seed_from_u64(2));
        assert!(wmmse(&h, 1.0, 10.0, 0, 1e-6).is_err());
        assert!(wmmse(&h, 1.0, 10.0, 10, 0.0).is_err());
    }
}
