use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

use super::dense::{silu_backward, silu_map, Dense, LayoutBuilder};
use super::{timestep_embedding, Gradients, NetInput};

#[derive(Debug, Clone)]
pub(crate) struct FnnLayout {
    layers: Vec<Dense>,
    len: usize,
}

#[derive(Debug)]
pub(crate) struct FnnTape {
    /// Input to every layer; `inputs[0]` is the assembled feature matrix.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
    flat_len: usize,
    n_extra: usize,
}

impl FnnLayout {
    pub fn new(inputs: usize, hidden: &[usize], outputs: usize) -> Self {
        let mut b = LayoutBuilder::default();
        let mut width = inputs;
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        for &h in hidden {
            layers.push(b.dense(width, h, true));
            width = h;
        }
        layers.push(b.dense(width, outputs, true));
        Self { layers, len: b.len() }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], rng: &mut R) {
        for layer in &self.layers {
            layer.init(p, rng);
        }
    }

    fn assemble(&self, input: &NetInput, time_dim: usize) -> (Array2<f64>, usize, usize) {
        let batch = input.batch_len();
        let flat_len = input.states[0].flat.len();
        let n_extra = input.extra.map_or(0, |x| x.ncols());
        let width = flat_len + n_extra + time_dim;
        debug_assert_eq!(width, self.layers[0].inputs);
        let mut x = Array2::zeros((batch, width));
        for (b, state) in input.states.iter().enumerate() {
            let mut row = x.row_mut(b);
            for (dst, &src) in row.iter_mut().zip(&state.flat) {
                *dst = src;
            }
            if let Some(extra) = &input.extra {
                row.slice_mut(s![flat_len..flat_len + n_extra]).assign(&extra.row(b));
            }
            if let Some(steps) = input.steps {
                let emb = timestep_embedding(steps[b], time_dim);
                for (dst, v) in row.slice_mut(s![flat_len + n_extra..]).iter_mut().zip(emb) {
                    *dst = v;
                }
            }
        }
        (x, flat_len, n_extra)
    }

    pub fn forward(&self, p: &[f64], input: &NetInput, time_dim: usize) -> (Array2<f64>, FnnTape) {
        let (x, flat_len, n_extra) = self.assemble(input, time_dim);
        let mut inputs = vec![x];
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let last = self.layers.len() - 1;
        let mut out = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(p, inputs[i].view());
            if i == last {
                out = Some(z);
            } else {
                inputs.push(silu_map(&z));
                pre.push(z);
            }
        }
        (out.expect("at least one layer"), FnnTape { inputs, pre, flat_len, n_extra })
    }

    pub fn backward(&self, p: &[f64], tape: &FnnTape, d_out: ArrayView2<f64>, want_extra: bool) -> Gradients {
        let mut grad = vec![0.0; self.len];
        let mut dz = d_out.to_owned();
        let mut d_input = None;
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            layer.backward_params(tape.inputs[i].view(), dz.view(), &mut grad);
            if i > 0 || want_extra {
                let mut dx = Array2::zeros(tape.inputs[i].raw_dim());
                layer.backward_input(p, dz.view(), &mut dx);
                if i == 0 {
                    d_input = Some(dx);
                } else {
                    dz = silu_backward(&tape.pre[i - 1], &dx);
                }
            }
        }
        let extra = d_input.map(|dx| dx.slice(s![.., tape.flat_len..tape.flat_len + tape.n_extra]).to_owned());
        Gradients { params: grad, extra }
    }
}
