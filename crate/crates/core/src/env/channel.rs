use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use super::ScenarioConfig;
use crate::error::{Error, Result};

/// Complex N x K downlink channel; column `k` is user `k`'s channel vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix(DMatrix<Complex64>);

impl ChannelMatrix {
    pub fn new(entries: DMatrix<Complex64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::Shape("channel matrix must be non-empty".into()));
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Shape("channel matrix has non-finite entries".into()));
        }
        Ok(Self(entries))
    }

    /// Builds a channel from per-user column vectors.
    pub fn from_columns(columns: &[Vec<Complex64>]) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::Shape("user channel vectors differ in length".into()));
        }
        Self::new(DMatrix::from_fn(n, columns.len(), |i, k| columns[k][i]))
    }

    pub fn n_antennas(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn column(&self, k: usize) -> DVector<Complex64> {
        self.0.column(k).into_owned()
    }

    pub fn column_norm_sqr(&self, k: usize) -> f64 {
        self.0.column(k).norm_squared()
    }

    /// `gram[(j, k)] = h_j^H h_k`.
    pub fn gram(&self) -> DMatrix<Complex64> {
        self.0.adjoint() * &self.0
    }

    /// Applies a transform on the antenna dimension, `H -> U H`.
    pub fn transformed(&self, antenna_map: &DMatrix<Complex64>) -> Result<Self> {
        if antenna_map.ncols() != self.n_antennas() {
            return Err(Error::Shape(format!(
                "antenna map has {} columns, channel has {} antennas",
                antenna_map.ncols(),
                self.n_antennas()
            )));
        }
        Self::new(antenna_map * &self.0)
    }

    /// Reorders users: column `k` of the result is column `perm[k]` of `self`.
    pub fn permute_users(&self, perm: &[usize]) -> Self {
        Self(DMatrix::from_fn(self.n_antennas(), perm.len(), |i, k| self.0[(i, perm[k])]))
    }

    /// Reorders antennas: row `i` of the result is row `perm[i]` of `self`.
    pub fn permute_antennas(&self, perm: &[usize]) -> Self {
        Self(DMatrix::from_fn(perm.len(), self.n_users(), |i, k| self.0[(perm[i], k)]))
    }
}

/// Complex N x K matrix of per-user transmit beamformers.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingMatrix(DMatrix<Complex64>);

impl BeamformingMatrix {
    pub fn new(w: DMatrix<Complex64>) -> Self {
        Self(w)
    }

    pub fn zeros(n_antennas: usize, n_users: usize) -> Self {
        Self(DMatrix::zeros(n_antennas, n_users))
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.0
    }

    pub fn total_power(&self) -> f64 {
        self.0.norm_squared()
    }

    pub fn user_power(&self, k: usize) -> f64 {
        self.0.column(k).norm_squared()
    }
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Draws `h_k = sqrt(rho) c + sqrt(1 - rho) g_k` with `c` shared by all users
/// and `c`, `g_k` i.i.d. CN(0, 1) entries, so `E ||h_k||^2 = N` for any `rho`.
///
/// A draw containing an all-zero column is discarded and redrawn.
pub fn sample_channel<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> ChannelMatrix {
    let (n, k) = (cfg.n_antennas, cfg.n_users);
    let shared_w = cfg.correlation.sqrt();
    let own_w = (1.0 - cfg.correlation).sqrt();
    loop {
        let common: Vec<Complex64> = (0..n).map(|_| complex_gaussian(rng)).collect();
        let mut h = DMatrix::zeros(n, k);
        for user in 0..k {
            for i in 0..n {
                h[(i, user)] = common[i] * shared_w + complex_gaussian(rng) * own_w;
            }
        }
        if (0..k).all(|user| h.column(user).norm_squared() > 0.0) {
            return ChannelMatrix(h);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_correlation_gives_identical_columns() {
        let cfg = ScenarioConfig::default().with_correlation(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = sample_channel(&cfg, &mut rng);
        for k in 1..cfg.n_users {
            assert_eq!(h.column(k), h.column(0));
        }
    }

    fn mean_cosines(rho: f64, draws: usize, seed: u64) -> (f64, f64) {
        let cfg = ScenarioConfig::default().with_correlation(rho).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut abs_acc, mut sq_acc) = (0.0, 0.0);
        let mut count = 0usize;
        for _ in 0..draws {
            let g = sample_channel(&cfg, &mut rng).gram();
            for j in 0..cfg.n_users {
                for k in 0..cfg.n_users {
                    if j != k {
                        let cos = g[(j, k)].norm() / (g[(j, j)].re * g[(k, k)].re).sqrt();
                        abs_acc += cos;
                        sq_acc += cos * cos;
                        count += 1;
                    }
                }
            }
        }
        (abs_acc / count as f64, sq_acc / count as f64)
    }

    #[test]
    fn independent_columns_are_weakly_correlated() {
        // For independent CN(0, I_8) vectors |cos|^2 ~ Beta(1, 7):
        // E|cos| = 7 B(3/2, 7) = 0.3182 and E|cos|^2 = 1/8.
        let (abs_mean, sq_mean) = mean_cosines(0.0, 10_000, 11);
        assert!((abs_mean - 0.318_21).abs() < 0.01, "mean |cos| {abs_mean}");
        assert!(sq_mean < 0.2, "mean cos^2 {sq_mean}");
        assert!((sq_mean - 0.125).abs() < 0.005);
        let (strong, _) = mean_cosines(0.9, 2_000, 12);
        assert!(strong > 0.85, "rho = 0.9 mean |cos| {strong}");
    }

    #[test]
    fn mean_energy_is_independent_of_correlation() {
        for rho in [0.0, 0.3, 0.8, 1.0] {
            let cfg = ScenarioConfig::default().with_correlation(rho).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let draws = 100_000 / cfg.n_users;
            let mut acc = 0.0;
            for _ in 0..draws {
                let h = sample_channel(&cfg, &mut rng);
                acc += (0..cfg.n_users).map(|k| h.column_norm_sqr(k)).sum::<f64>();
            }
            let mean = acc / (draws * cfg.n_users) as f64;
            let n = cfg.n_antennas as f64;
            assert!((mean - n).abs() < 0.02 * n, "rho={rho}: mean energy {mean}");
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let cfg = ScenarioConfig::default().with_correlation(0.4).unwrap();
        let a = sample_channel(&cfg, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_channel(&cfg, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_eq!((a.n_antennas(), a.n_users()), (8, 4));
    }

    #[test]
    fn rejects_non_finite_entries() {
        let m = DMatrix::from_element(2, 2, Complex64::new(f64::NAN, 0.0));
        assert!(ChannelMatrix::new(m).is_err());
    }
}
