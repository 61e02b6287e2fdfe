use super::{se_of_action, ChannelMatrix, PowerAllocation};
use crate::error::{Error, Result};

const MAX_USERS: usize = 4;
const MAX_LEVELS: usize = 200;

/// Exhaustive search over the simplex grid `p_k = m_k * step`,
/// `sum_k p_k = budget`. Returns the best grid point and its SE.
pub fn brute_force_power(h: &ChannelMatrix, sigma2: f64, budget: f64, step: f64) -> Result<(PowerAllocation, f64)> {
    let k_users = h.n_users();
    if k_users > MAX_USERS {
        return Err(Error::TooManyUsers(k_users));
    }
    let ratio = budget / step;
    let levels = ratio.round();
    if !(step > 0.0) || (ratio - levels).abs() > 1e-9 * ratio.max(1.0) || levels < 1.0 {
        return Err(Error::InvalidConfig(format!("grid step {step} must divide the budget {budget} evenly")));
    }
    let levels = levels as usize;
    if levels > MAX_LEVELS {
        return Err(Error::InvalidConfig(format!("grid has {levels} levels per user, at most {MAX_LEVELS} allowed")));
    }
    let delta = budget / levels as f64;

    let mut counts = vec![0usize; k_users];
    let mut powers = vec![0.0; k_users];
    let mut best: Option<(Vec<f64>, f64)> = None;
    loop {
        // the last user takes the remainder
        let used: usize = counts[..k_users - 1].iter().sum();
        if used <= levels {
            counts[k_users - 1] = levels - used;
            for (p, &m) in powers.iter_mut().zip(&counts) {
                *p = m as f64 * delta;
            }
            let se = se_of_action(h, &powers, sigma2)?;
            if best.as_ref().is_none_or(|(_, b)| se > *b) {
                best = Some((powers.clone(), se));
            }
        }
        if !advance(&mut counts[..k_users - 1], levels) {
            break;
        }
    }
    let (p, se) = best.expect("grid has at least one point");
    Ok((PowerAllocation::new(p, budget)?, se))
}

// Odometer over the free coordinates, skipping prefixes that overshoot.
fn advance(counts: &mut [usize], levels: usize) -> bool {
    for i in (0..counts.len()).rev() {
        counts[i] += 1;
        if counts.iter().sum::<usize>() <= levels {
            return true;
        }
        counts[i] = 0;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_channel, ScenarioConfig};
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_user_takes_everything() {
        let cfg = ScenarioConfig::new(4, 1, 10.0, 1.0, 0.0, 0).unwrap();
        let h = sample_channel(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
        let (p, se) = brute_force_power(&h, 1.0, 10.0, 0.5).unwrap();
        assert_eq!(p.powers(), &[10.0]);
        assert!((se - (1.0 + 10.0 * h.column_norm_sqr(0)).log2()).abs() < 1e-12);
    }

    #[test]
    fn grid_size_is_the_simplex_count() {
        let mut counts = vec![0usize; 2];
        let mut n = 1;
        while advance(&mut counts, 5) {
            n += 1;
        }
        // C(5 + 2, 2) compositions of 5 into 3 parts
        assert_eq!(n, 21);
    }

    #[test]
    fn identical_users_pick_a_vertex() {
        let cfg = ScenarioConfig::default().with_correlation(1.0).unwrap();
        let h = sample_channel(&cfg, &mut ChaCha8Rng::seed_from_u64(4));
        let (p, _) = brute_force_power(&h, 1.0, 10.0, 0.5).unwrap();
        let nonzero = p.powers().iter().filter(|&&v| v > 0.0).count();
        assert_eq!(nonzero, 1, "{:?}", p.powers());
    }

    #[test]
    fn orthogonal_equal_gain_users_split_evenly() {
        let z = Complex64::new(0.0, 0.0);
        let h =
            ChannelMatrix::from_columns(&[vec![Complex64::new(1.5, 0.0), z, z], vec![z, Complex64::new(0.0, 1.5), z]])
                .unwrap();
        let step = 10.0 / 200.0;
        let (p, _) = brute_force_power(&h, 1.0, 10.0, step).unwrap();
        assert!((p.powers()[0] - 5.0).abs() <= step + 1e-12);
    }

    #[test]
    fn rejects_large_problems() {
        let cfg = ScenarioConfig::new(8, 5, 10.0, 1.0, 0.0, 0).unwrap();
        let h = sample_channel(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(brute_force_power(&h, 1.0, 10.0, 1.0), Err(Error::TooManyUsers(5))));
        let cfg = ScenarioConfig::new(8, 2, 10.0, 1.0, 0.0, 0).unwrap();
        let h = sample_channel(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(brute_force_power(&h, 1.0, 10.0, 0.01).is_err());
        assert!(brute_force_power(&h, 1.0, 10.0, 0.3).is_err());
    }
}
