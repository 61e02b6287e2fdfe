use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

/// Affine map `x W + b` whose weights live in a flat parameter slice:
/// `W` row-major `inputs x outputs` at `offset`, followed by the bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Dense {
    offset: usize,
    pub inputs: usize,
    pub outputs: usize,
    bias: bool,
}

impl Dense {
    fn weight_len(&self) -> usize {
        self.inputs * self.outputs
    }

    pub fn len(&self) -> usize {
        self.weight_len() + if self.bias { self.outputs } else { 0 }
    }

    pub fn weight<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.inputs, self.outputs), &p[self.offset..self.offset + self.weight_len()])
            .expect("layout matches parameter slice")
    }

    fn weight_mut<'a>(&self, g: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        ArrayViewMut2::from_shape((self.inputs, self.outputs), &mut g[self.offset..self.offset + self.weight_len()])
            .expect("layout matches gradient slice")
    }

    fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.weight_len();
        start..start + self.outputs
    }

    fn bias_view<'a>(&self, p: &'a [f64]) -> Option<ArrayView1<'a, f64>> {
        self.bias.then(|| ArrayView1::from(&p[self.bias_range()]))
    }

    fn bias_mut<'a>(&self, g: &'a mut [f64]) -> Option<ArrayViewMut1<'a, f64>> {
        self.bias.then(|| ArrayViewMut1::from(&mut g[self.bias_range()]))
    }

    pub fn forward(&self, p: &[f64], x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), self.outputs));
        if let Some(b) = self.bias_view(p) {
            out += &b;
        }
        self.accumulate(p, x, &mut out);
        out
    }

    /// `out += x W` (no bias).
    pub fn accumulate(&self, p: &[f64], x: ArrayView2<f64>, out: &mut Array2<f64>) {
        general_mat_mul(1.0, &x, &self.weight(p), 1.0, out);
    }

    /// Adds `x^T dz` and the column sums of `dz` to the gradient slice.
    pub fn backward_params(&self, x: ArrayView2<f64>, dz: ArrayView2<f64>, grad: &mut [f64]) {
        general_mat_mul(1.0, &x.t(), &dz, 1.0, &mut self.weight_mut(grad));
        if let Some(mut b) = self.bias_mut(grad) {
            b += &dz.sum_axis(Axis(0));
        }
    }

    /// `dx += dz W^T`.
    pub fn backward_input(&self, p: &[f64], dz: ArrayView2<f64>, dx: &mut Array2<f64>) {
        general_mat_mul(1.0, &dz, &self.weight(p).t(), 1.0, dx);
    }

    /// Variance-scaled Gaussian weights `N(0, 1 / inputs)`, zero bias.
    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], rng: &mut R) {
        let scale = (1.0 / self.inputs.max(1) as f64).sqrt();
        for w in &mut p[self.offset..self.offset + self.weight_len()] {
            let z: f64 = rng.sample(StandardNormal);
            *w = scale * z;
        }
        if self.bias {
            p[self.bias_range()].fill(0.0);
        }
    }
}

/// Hands out consecutive [`Dense`] blocks of a flat parameter vector.
#[derive(Debug, Default)]
pub(crate) struct LayoutBuilder {
    offset: usize,
}

impl LayoutBuilder {
    pub fn dense(&mut self, inputs: usize, outputs: usize, bias: bool) -> Dense {
        let d = Dense { offset: self.offset, inputs, outputs, bias };
        self.offset += d.len();
        d
    }

    pub fn len(&self) -> usize {
        self.offset
    }
}

pub(crate) fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub(crate) fn silu_deriv(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

pub(crate) fn silu_map(pre: &Array2<f64>) -> Array2<f64> {
    pre.mapv(silu)
}

/// `d_out * silu'(pre)` elementwise.
pub(crate) fn silu_backward(pre: &Array2<f64>, d_out: &Array2<f64>) -> Array2<f64> {
    let mut d = d_out.clone();
    d.zip_mut_with(pre, |g, &z| *g *= silu_deriv(z));
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silu_derivative_matches_difference_quotient() {
        for x in [-4.0, -0.5, 0.0, 0.7, 3.0] {
            let h = 1e-6;
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_deriv(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn layout_is_contiguous() {
        let mut b = LayoutBuilder::default();
        let a = b.dense(3, 4, true);
        let c = b.dense(4, 2, false);
        assert_eq!(a.len(), 16);
        assert_eq!(c.len(), 8);
        assert_eq!(b.len(), 24);
        let p: Vec<f64> = (0..24).map(f64::from).collect();
        assert_eq!(c.weight(&p)[(0, 0)], 16.0);
    }
}
