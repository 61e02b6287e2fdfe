use crate::env::ChannelMatrix;

/// Per-edge features: `Re`, `Im` of `h_j^H h_k / N` and the squared cosine
/// `|h_j^H h_k|^2 / (||h_j||^2 ||h_k||^2)`.
pub const EDGE_DIM: usize = 3;

/// Network inputs derived from one channel realization.
///
/// `flat` feeds the fully connected models. `node` and `edge` only use inner
/// products between user channels, so they do not change when antennas
/// are reordered or rotated.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFeatures {
    n_users: usize,
    /// Real parts of `H` (antenna-major) followed by the imaginary parts.
    pub flat: Vec<f64>,
    /// `||h_k||^2 / N`.
    pub node: Vec<f64>,
    /// Edge `j -> k` at `(j * K + k) * EDGE_DIM`; the diagonal is unused.
    pub edge: Vec<f64>,
}

// Summing in sorted order makes the result independent of antenna order.
fn canonical_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

impl StateFeatures {
    pub fn from_channel(h: &ChannelMatrix) -> Self {
        let (n, k_users) = (h.n_antennas(), h.n_users());
        let hm = h.matrix();
        let mut flat = Vec::with_capacity(2 * n * k_users);
        flat.extend(hm.iter().map(|z| z.re));
        flat.extend(hm.iter().map(|z| z.im));

        let inner = |j: usize, k: usize| -> (f64, f64) {
            let products: Vec<_> = (0..n).map(|i| hm[(i, j)].conj() * hm[(i, k)]).collect();
            (
                canonical_sum(products.iter().map(|z| z.re).collect()),
                canonical_sum(products.iter().map(|z| z.im).collect()),
            )
        };
        let energy: Vec<f64> = (0..k_users).map(|k| inner(k, k).0).collect();
        let scale = 1.0 / n as f64;
        let node = energy.iter().map(|e| e * scale).collect();
        let mut edge = vec![0.0; k_users * k_users * EDGE_DIM];
        for j in 0..k_users {
            for k in 0..k_users {
                if j == k {
                    continue;
                }
                let (re, im) = inner(j, k);
                let denom = energy[j] * energy[k];
                let at = (j * k_users + k) * EDGE_DIM;
                edge[at] = re * scale;
                edge[at + 1] = im * scale;
                edge[at + 2] = if denom > 0.0 { (re * re + im * im) / denom } else { 0.0 };
            }
        }
        Self { n_users: k_users, flat, node, edge }
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn edge(&self, from: usize, to: usize) -> &[f64] {
        let at = (from * self.n_users + to) * EDGE_DIM;
        &self.edge[at..at + EDGE_DIM]
    }

    /// Graph features of the user-reordered channel (user `k` of the result
    /// is user `perm[k]` of `self`). The flat layout is left untouched.
    pub fn permute_users(&self, perm: &[usize]) -> Self {
        let k_users = self.n_users;
        let node = perm.iter().map(|&i| self.node[i]).collect();
        let mut edge = vec![0.0; self.edge.len()];
        for j in 0..k_users {
            for k in 0..k_users {
                let at = (j * k_users + k) * EDGE_DIM;
                edge[at..at + EDGE_DIM].copy_from_slice(self.edge(perm[j], perm[k]));
            }
        }
        Self { n_users: k_users, flat: self.flat.clone(), node, edge }
    }
}

/// Sinusoidal step embedding with fixed geometric frequencies
/// `1000^{-i / (dim / 2)}`; `dim` must be even.
pub fn timestep_embedding(step: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(1000f64.ln()) * i as f64 / half as f64).exp();
        let angle = step as f64 * freq;
        out[i] = angle.sin();
        out[half + i] = angle.cos();
    }
    out
}
