use std::f64::consts::LN_2;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{BeamformingMatrix, ChannelMatrix, PowerAllocation};
use crate::error::{Error, Result};

/// Unit-norm directions `u_k = v_k / ||v_k||` with
/// `v_k = (I + sigma2^-1 sum_j p_j h_j h_j^H)^-1 h_k`.
struct Directions {
    v: DMatrix<Complex64>,
    u: DMatrix<Complex64>,
    norms: Vec<f64>,
}

fn check_powers(h: &ChannelMatrix, powers: &[f64]) -> Result<()> {
    if powers.len() != h.n_users() {
        return Err(Error::Shape(format!("{} powers for {} users", powers.len(), h.n_users())));
    }
    for (k, &p) in powers.iter().enumerate() {
        if !(p.is_finite() && p >= 0.0) {
            return Err(Error::InvalidConfig(format!("power of user {k} must be finite and nonnegative, got {p}")));
        }
        if p > 0.0 && h.column_norm_sqr(k) == 0.0 {
            return Err(Error::DegenerateChannel { user: k, power: p });
        }
    }
    Ok(())
}

fn directions(h: &ChannelMatrix, powers: &[f64], sigma2: f64) -> Result<Directions> {
    check_powers(h, powers)?;
    let hm = h.matrix();
    let n = h.n_antennas();
    let mut scaled = hm.clone();
    for (k, &p) in powers.iter().enumerate() {
        scaled.column_mut(k).scale_mut((p / sigma2).sqrt());
    }
    let a = DMatrix::<Complex64>::identity(n, n) + &scaled * scaled.adjoint();
    let chol = a.cholesky().expect("identity plus a positive semidefinite matrix is positive definite");
    let v = chol.solve(hm);
    let mut u = v.clone();
    let mut norms = Vec::with_capacity(h.n_users());
    for k in 0..h.n_users() {
        let norm = v.column(k).norm();
        if norm > 0.0 {
            u.column_mut(k).unscale_mut(norm);
        }
        norms.push(norm);
    }
    Ok(Directions { v, u, norms })
}

/// Beamformers along the regularized-inverse directions, scaled so that
/// `||w_k||^2 = p_k`.
pub fn recover_beamformer(h: &ChannelMatrix, p: &PowerAllocation, sigma2: f64) -> Result<BeamformingMatrix> {
    let dirs = directions(h, p.powers(), sigma2)?;
    Ok(beamformer_from(&dirs, p.powers()))
}

fn beamformer_from(dirs: &Directions, powers: &[f64]) -> BeamformingMatrix {
    let mut w = dirs.u.clone();
    for (k, &p) in powers.iter().enumerate() {
        if dirs.norms[k] > 0.0 {
            w.column_mut(k).scale_mut(p.sqrt());
        }
    }
    BeamformingMatrix::new(w)
}

/// Sum spectral efficiency in bits/s/Hz with single-user detection.
pub fn spectral_efficiency(h: &ChannelMatrix, w: &BeamformingMatrix, sigma2: f64) -> Result<f64> {
    let wm = w.matrix();
    if wm.nrows() != h.n_antennas() || wm.ncols() != h.n_users() {
        return Err(Error::Shape(format!(
            "beamformer is {}x{}, channel is {}x{}",
            wm.nrows(),
            wm.ncols(),
            h.n_antennas(),
            h.n_users()
        )));
    }
    let c = h.matrix().adjoint() * wm;
    Ok(sum_rate(&c, sigma2))
}

// c[(k, j)] = h_k^H w_j
fn sum_rate(c: &DMatrix<Complex64>, sigma2: f64) -> f64 {
    let k_users = c.nrows();
    let mut se = 0.0;
    for k in 0..k_users {
        let signal = c[(k, k)].norm_sqr();
        let interference: f64 = (0..k_users).filter(|&j| j != k).map(|j| c[(k, j)].norm_sqr()).sum();
        se += (signal / (interference + sigma2)).ln_1p();
    }
    se / LN_2
}

/// SE of the beamformer recovered from `powers`.
pub fn se_of_action(h: &ChannelMatrix, powers: &[f64], sigma2: f64) -> Result<f64> {
    let dirs = directions(h, powers, sigma2)?;
    let w = beamformer_from(&dirs, powers);
    Ok(sum_rate(&(h.matrix().adjoint() * w.matrix()), sigma2))
}

/// Exact gradient of [`se_of_action`] with respect to the powers, including
/// the dependence of the beam directions on the powers.
pub fn se_gradient(h: &ChannelMatrix, powers: &[f64], sigma2: f64) -> Result<Vec<f64>> {
    let dirs = directions(h, powers, sigma2)?;
    let k_users = h.n_users();
    let hm = h.matrix();
    // q[(a, m)] = h_a^H v_m, c[(k, j)] = h_k^H u_j, r[(j, m)] = u_j^H v_m
    let q = hm.adjoint() * &dirs.v;
    let c = hm.adjoint() * &dirs.u;
    let r = dirs.u.adjoint() * &dirs.v;
    let gain = c.map(|z| z.norm_sqr());

    let total: Vec<f64> =
        (0..k_users).map(|k| (0..k_users).map(|j| powers[j] * gain[(k, j)]).sum::<f64>() + sigma2).collect();
    let interf: Vec<f64> = (0..k_users).map(|k| total[k] - powers[k] * gain[(k, k)]).collect();

    let mut grad = vec![0.0; k_users];
    for (m, g) in grad.iter_mut().enumerate() {
        // explicit dependence with the directions frozen
        let mut acc: f64 = (0..k_users)
            .map(|k| {
                let own = gain[(k, m)] / total[k];
                if k == m {
                    own
                } else {
                    own - gain[(k, m)] / interf[k]
                }
            })
            .sum();
        // dv_j/dp_m = -sigma2^-1 v_m (h_m^H v_j)
        for j in 0..k_users {
            if dirs.norms[j] == 0.0 {
                continue;
            }
            let coupling = -q[(m, j)] / sigma2;
            let radial = (r[(j, m)] * coupling).re;
            for k in 0..k_users {
                let dc = (q[(k, m)] * coupling - c[(k, j)] * radial) / dirs.norms[j];
                let dgain = 2.0 * (c[(k, j)].conj() * dc).re;
                let mut weight = powers[j] / total[k];
                if j != k {
                    weight -= powers[j] / interf[k];
                }
                acc += weight * dgain;
            }
        }
        *g = acc / LN_2;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_channel, ScenarioConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_channel(n: usize, k: usize, rho: f64, seed: u64) -> ChannelMatrix {
        let cfg = ScenarioConfig::new(n, k, 10.0, 1.0, rho, seed).unwrap();
        sample_channel(&cfg, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    // Second, loop-only SINR evaluation.
    fn scalar_loop_se(h: &ChannelMatrix, w: &BeamformingMatrix, sigma2: f64) -> f64 {
        let (n, k_users) = (h.n_antennas(), h.n_users());
        let hm = h.matrix();
        let wm = w.matrix();
        let inner = |k: usize, j: usize| -> Complex64 {
            let mut s = c(0.0, 0.0);
            for i in 0..n {
                s += hm[(i, k)].conj() * wm[(i, j)];
            }
            s
        };
        let mut total = 0.0;
        for k in 0..k_users {
            let mut interference = sigma2;
            for j in 0..k_users {
                if j != k {
                    interference += inner(k, j).norm_sqr();
                }
            }
            total += (1.0 + inner(k, k).norm_sqr() / interference).log2();
        }
        total
    }

    #[test]
    fn single_user_structure_is_mrt() {
        let h = ChannelMatrix::from_columns(&[vec![c(1.0, 2.0), c(-0.5, 0.3), c(0.1, -1.0)]]).unwrap();
        let p = PowerAllocation::new(vec![4.0], 4.0).unwrap();
        let w = recover_beamformer(&h, &p, 1.0).unwrap();
        let norm = h.column_norm_sqr(0).sqrt();
        for i in 0..3 {
            let expected = h.matrix()[(i, 0)] * (2.0 / norm);
            assert!((w.matrix()[(i, 0)] - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_users_keep_their_directions() {
        let h = ChannelMatrix::from_columns(&[
            vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
            vec![c(0.0, 0.0), c(0.0, 2.0), c(0.0, 0.0)],
            vec![c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 1.0)],
        ])
        .unwrap();
        let p = PowerAllocation::new(vec![1.0, 2.0, 3.0], 6.0).unwrap();
        let w = recover_beamformer(&h, &p, 0.5).unwrap();
        for k in 0..3 {
            let hk = h.column(k);
            let wk = w.matrix().column(k).into_owned();
            let overlap = hk.dotc(&wk).norm();
            assert!((overlap - hk.norm() * wk.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn two_by_two_matches_closed_form_inverse() {
        let h = random_channel(2, 2, 0.3, 17);
        let p = [1.3, 0.7];
        let sigma2 = 0.8;
        let hm = h.matrix();
        // A = I + sigma2^-1 sum_j p_j h_j h_j^H, inverted by the adjugate formula.
        let mut a = [[c(0.0, 0.0); 2]; 2];
        for (r, row) in a.iter_mut().enumerate() {
            for (s, entry) in row.iter_mut().enumerate() {
                let mut acc = if r == s { c(1.0, 0.0) } else { c(0.0, 0.0) };
                for j in 0..2 {
                    acc += hm[(r, j)] * hm[(s, j)].conj() * (p[j] / sigma2);
                }
                *entry = acc;
            }
        }
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
        let alloc = PowerAllocation::new(p.to_vec(), 2.0).unwrap();
        let w = recover_beamformer(&h, &alloc, sigma2).unwrap();
        for k in 0..2 {
            let v = [inv[0][0] * hm[(0, k)] + inv[0][1] * hm[(1, k)], inv[1][0] * hm[(0, k)] + inv[1][1] * hm[(1, k)]];
            let norm = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
            for i in 0..2 {
                let expected = v[i] * (p[k].sqrt() / norm);
                assert!((w.matrix()[(i, k)] - expected).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn structure_spends_exactly_the_allocated_power() {
        let h = random_channel(8, 4, 0.6, 2);
        let p = PowerAllocation::new(vec![1.0, 0.0, 6.5, 2.5], 10.0).unwrap();
        let w = recover_beamformer(&h, &p, 1.0).unwrap();
        assert!((w.total_power() - 10.0).abs() < 1e-9);
        assert!(w.user_power(1) < 1e-30);
    }

    #[test]
    fn degenerate_channel_with_power_is_rejected() {
        let h = ChannelMatrix::from_columns(&[vec![c(0.0, 0.0), c(0.0, 0.0)], vec![c(1.0, 0.0), c(0.0, 1.0)]]).unwrap();
        let err = se_of_action(&h, &[1.0, 1.0], 1.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateChannel { user: 0, .. }));
        assert!(se_of_action(&h, &[0.0, 1.0], 1.0).is_ok());
    }

    #[test]
    fn scalar_single_user_rate() {
        let h = ChannelMatrix::from_columns(&[vec![c(1.0, 0.0)]]).unwrap();
        let p = PowerAllocation::new(vec![1.0], 1.0).unwrap();
        let w = recover_beamformer(&h, &p, 1.0).unwrap();
        assert!((spectral_efficiency(&h, &w, 1.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_beamformer_has_zero_rate() {
        let h = random_channel(4, 3, 0.2, 1);
        let w = BeamformingMatrix::zeros(4, 3);
        assert_eq!(spectral_efficiency(&h, &w, 1.0).unwrap(), 0.0);
        assert_eq!(se_of_action(&h, &[0.0; 3], 1.0).unwrap(), 0.0);
    }

    #[test]
    fn rate_matches_scalar_loop() {
        let h = random_channel(2, 2, 0.4, 23);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = BeamformingMatrix::new(DMatrix::from_fn(2, 2, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        }));
        let fast = spectral_efficiency(&h, &w, 0.7).unwrap();
        let slow = scalar_loop_se(&h, &w, 0.7);
        assert!((fast - slow).abs() < 1e-10);
    }

    #[test]
    fn single_user_full_power_rate() {
        let h = random_channel(8, 1, 0.0, 8);
        let g = h.column_norm_sqr(0);
        let se = se_of_action(&h, &[10.0], 1.0).unwrap();
        assert!((se - (1.0 + 10.0 * g).log2()).abs() < 1e-12);
    }

    #[test]
    fn vertex_action_on_identical_users_equals_single_user_rate() {
        let h = random_channel(8, 4, 1.0, 31);
        let g = h.column_norm_sqr(0);
        let se = se_of_action(&h, &[10.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        assert!((se - (1.0 + 10.0 * g).log2()).abs() < 1e-9);
    }

    #[test]
    fn single_user_gradient_is_scalar_derivative() {
        let h = random_channel(8, 1, 0.0, 5);
        let g = h.column_norm_sqr(0);
        let p = 3.0;
        let grad = se_gradient(&h, &[p], 1.0).unwrap();
        let expected = g / (LN_2 * (1.0 + p * g));
        assert!((grad[0] - expected).abs() < 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn symmetric_instance_has_equal_components() {
        let h = random_channel(8, 4, 1.0, 12);
        let grad = se_gradient(&h, &[2.5; 4], 1.0).unwrap();
        for g in &grad[1..] {
            assert!((g - grad[0]).abs() < 1e-10 * grad[0].abs().max(1.0));
        }
    }

    pub(crate) fn finite_difference(h: &ChannelMatrix, p: &[f64], sigma2: f64) -> Vec<f64> {
        let step = 1e-5;
        (0..p.len())
            .map(|i| {
                let mut up = p.to_vec();
                let mut dn = p.to_vec();
                up[i] += step;
                dn[i] -= step;
                (se_of_action(h, &up, sigma2).unwrap() - se_of_action(h, &dn, sigma2).unwrap()) / (2.0 * step)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let h = random_channel(4, 2, 0.5, 77);
        let p = [2.0, 5.0];
        let analytic = se_gradient(&h, &p, 1.0).unwrap();
        let fd = finite_difference(&h, &p, 1.0);
        for (a, f) in analytic.iter().zip(&fd) {
            assert!((a - f).abs() <= 1e-4 * f.abs(), "{a} vs {f}");
        }
    }
}
