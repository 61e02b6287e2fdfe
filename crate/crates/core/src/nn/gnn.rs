use ndarray::{s, Array2, ArrayView2, Zip};
use rand::Rng;

use super::dense::{silu_backward, silu_map, Dense, LayoutBuilder};
use super::{timestep_embedding, Gradients, NetInput, EDGE_DIM};

/// Weights of one message-passing round.
#[derive(Debug, Clone)]
struct Round {
    message: Dense,
    gate: Dense,
    self_map: Dense,
    aggregate: Dense,
    inject: Dense,
}

/// Node rows are ordered `(sample, user)`. Per round:
///
/// ```text
/// a_j   = h_j W_msg
/// g_jk  = e_jk U + c
/// m_k   = sum_{j != k} g_jk * a_j
/// h_k  += silu(h_k W_self + m_k W_agg + z_k W_inj + b)
/// ```
///
/// where `z_k` is the node input (channel energy, optional per-user scalar,
/// optional step embedding). Every weight is shared across users, so the map
/// is equivariant to user reordering.
#[derive(Debug, Clone)]
pub(crate) struct GnnLayout {
    encode: Dense,
    rounds: Vec<Round>,
    readout_hidden: Dense,
    readout: Dense,
    len: usize,
}

#[derive(Debug)]
struct RoundTape {
    h_in: Array2<f64>,
    msg: Array2<f64>,
    gate: Array2<f64>,
    agg: Array2<f64>,
    update_pre: Array2<f64>,
}

#[derive(Debug)]
pub(crate) struct GnnTape {
    batch: usize,
    k_users: usize,
    node_in: Array2<f64>,
    edges: Array2<f64>,
    encode_pre: Array2<f64>,
    rounds: Vec<RoundTape>,
    h_out: Array2<f64>,
    readout_pre: Array2<f64>,
    readout_act: Array2<f64>,
}

impl GnnLayout {
    pub fn new(node_inputs: usize, hidden: usize, rounds: usize) -> Self {
        let mut b = LayoutBuilder::default();
        let encode = b.dense(node_inputs, hidden, true);
        let rounds = (0..rounds)
            .map(|_| Round {
                message: b.dense(hidden, hidden, false),
                gate: b.dense(EDGE_DIM, hidden, true),
                self_map: b.dense(hidden, hidden, true),
                aggregate: b.dense(hidden, hidden, false),
                inject: b.dense(node_inputs, hidden, false),
            })
            .collect();
        let readout_hidden = b.dense(hidden, hidden, true);
        let readout = b.dense(hidden, 1, true);
        Self { encode, rounds, readout_hidden, readout, len: b.len() }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], rng: &mut R) {
        self.encode.init(p, rng);
        for r in &self.rounds {
            r.message.init(p, rng);
            r.gate.init(p, rng);
            r.self_map.init(p, rng);
            r.aggregate.init(p, rng);
            r.inject.init(p, rng);
        }
        self.readout_hidden.init(p, rng);
        self.readout.init(p, rng);
    }

    fn node_inputs(&self, input: &NetInput, k_users: usize, time_dim: usize) -> Array2<f64> {
        let batch = input.batch_len();
        let width = self.encode.inputs;
        let mut z = Array2::zeros((batch * k_users, width));
        for (b, state) in input.states.iter().enumerate() {
            let emb = input.steps.map(|steps| timestep_embedding(steps[b], time_dim));
            for k in 0..k_users {
                let mut row = z.row_mut(b * k_users + k);
                row[0] = state.node[k];
                let mut col = 1;
                if let Some(extra) = &input.extra {
                    row[col] = extra[(b, k)];
                    col += 1;
                }
                if let Some(emb) = &emb {
                    row.slice_mut(s![col..]).assign(&ndarray::ArrayView1::from(emb.as_slice()));
                }
            }
        }
        z
    }

    // Edge rows ordered (sample, receiver k, sender j != k ascending).
    fn edge_inputs(input: &NetInput, k_users: usize) -> Array2<f64> {
        let per_node = k_users.saturating_sub(1);
        let mut e = Array2::zeros((input.batch_len() * k_users * per_node, EDGE_DIM));
        let mut row = 0;
        for state in &input.states {
            for k in 0..k_users {
                for j in (0..k_users).filter(|&j| j != k) {
                    for (dst, &v) in e.row_mut(row).iter_mut().zip(state.edge(j, k)) {
                        *dst = v;
                    }
                    row += 1;
                }
            }
        }
        e
    }

    pub fn forward(&self, p: &[f64], input: &NetInput, k_users: usize, time_dim: usize) -> (Array2<f64>, GnnTape) {
        let batch = input.batch_len();
        let node_in = self.node_inputs(input, k_users, time_dim);
        let edges = Self::edge_inputs(input, k_users);
        let encode_pre = self.encode.forward(p, node_in.view());
        let mut h = silu_map(&encode_pre);
        let mut tapes = Vec::with_capacity(self.rounds.len());
        for round in &self.rounds {
            let msg = round.message.forward(p, h.view());
            let gate = round.gate.forward(p, edges.view());
            let agg = aggregate(&msg, &gate, batch, k_users);
            let mut update_pre = round.self_map.forward(p, h.view());
            round.aggregate.accumulate(p, agg.view(), &mut update_pre);
            round.inject.accumulate(p, node_in.view(), &mut update_pre);
            let h_next = &h + &silu_map(&update_pre);
            tapes.push(RoundTape { h_in: std::mem::replace(&mut h, h_next), msg, gate, agg, update_pre });
        }
        let readout_pre = self.readout_hidden.forward(p, h.view());
        let readout_act = silu_map(&readout_pre);
        let y = self.readout.forward(p, readout_act.view());
        let out = y.into_shape_with_order((batch, k_users)).expect("one output per node");
        (out, GnnTape { batch, k_users, node_in, edges, encode_pre, rounds: tapes, h_out: h, readout_pre, readout_act })
    }

    pub fn backward(&self, p: &[f64], tape: &GnnTape, d_out: ArrayView2<f64>, want_extra: bool) -> Gradients {
        let (batch, k_users) = (tape.batch, tape.k_users);
        let rows = batch * k_users;
        let mut grad = vec![0.0; self.len];
        let dy = d_out.to_owned().into_shape_with_order((rows, 1)).expect("one output per node");

        self.readout.backward_params(tape.readout_act.view(), dy.view(), &mut grad);
        let mut d_act = Array2::zeros(tape.readout_act.raw_dim());
        self.readout.backward_input(p, dy.view(), &mut d_act);
        let d_pre = silu_backward(&tape.readout_pre, &d_act);
        self.readout_hidden.backward_params(tape.h_out.view(), d_pre.view(), &mut grad);
        let mut dh = Array2::zeros(tape.h_out.raw_dim());
        self.readout_hidden.backward_input(p, d_pre.view(), &mut dh);

        let mut d_node_in = Array2::zeros(tape.node_in.raw_dim());
        for (round, rt) in self.rounds.iter().zip(&tape.rounds).rev() {
            let d_update = silu_backward(&rt.update_pre, &dh);
            // residual path
            let mut dh_prev = dh;
            round.self_map.backward_params(rt.h_in.view(), d_update.view(), &mut grad);
            round.self_map.backward_input(p, d_update.view(), &mut dh_prev);
            round.aggregate.backward_params(rt.agg.view(), d_update.view(), &mut grad);
            let mut d_agg = Array2::zeros(rt.agg.raw_dim());
            round.aggregate.backward_input(p, d_update.view(), &mut d_agg);
            round.inject.backward_params(tape.node_in.view(), d_update.view(), &mut grad);
            round.inject.backward_input(p, d_update.view(), &mut d_node_in);

            let (d_msg, d_gate) = aggregate_backward(&d_agg, &rt.msg, &rt.gate, batch, k_users);
            round.message.backward_params(rt.h_in.view(), d_msg.view(), &mut grad);
            round.message.backward_input(p, d_msg.view(), &mut dh_prev);
            round.gate.backward_params(tape.edges.view(), d_gate.view(), &mut grad);
            dh = dh_prev;
        }
        let d_encode = silu_backward(&tape.encode_pre, &dh);
        self.encode.backward_params(tape.node_in.view(), d_encode.view(), &mut grad);
        let extra = want_extra.then(|| {
            self.encode.backward_input(p, d_encode.view(), &mut d_node_in);
            d_node_in.column(1).to_owned().into_shape_with_order((batch, k_users)).expect("one extra input per node")
        });
        Gradients { params: grad, extra }
    }
}

fn edge_row(b: usize, k: usize, j: usize, k_users: usize) -> usize {
    let pos = if j < k { j } else { j - 1 };
    (b * k_users + k) * (k_users - 1) + pos
}

fn aggregate(msg: &Array2<f64>, gate: &Array2<f64>, batch: usize, k_users: usize) -> Array2<f64> {
    let mut agg = Array2::zeros(msg.raw_dim());
    for b in 0..batch {
        for k in 0..k_users {
            let mut target = agg.row_mut(b * k_users + k);
            for j in (0..k_users).filter(|&j| j != k) {
                let e = edge_row(b, k, j, k_users);
                Zip::from(&mut target).and(gate.row(e)).and(msg.row(b * k_users + j)).for_each(|t, &g, &m| *t += g * m);
            }
        }
    }
    agg
}

fn aggregate_backward(
    d_agg: &Array2<f64>,
    msg: &Array2<f64>,
    gate: &Array2<f64>,
    batch: usize,
    k_users: usize,
) -> (Array2<f64>, Array2<f64>) {
    let mut d_msg = Array2::zeros(msg.raw_dim());
    let mut d_gate = Array2::zeros(gate.raw_dim());
    for b in 0..batch {
        for k in 0..k_users {
            let upstream = d_agg.row(b * k_users + k);
            for j in (0..k_users).filter(|&j| j != k) {
                let e = edge_row(b, k, j, k_users);
                Zip::from(d_msg.row_mut(b * k_users + j))
                    .and(&upstream)
                    .and(gate.row(e))
                    .for_each(|d, &u, &g| *d += u * g);
                Zip::from(d_gate.row_mut(e))
                    .and(&upstream)
                    .and(msg.row(b * k_users + j))
                    .for_each(|d, &u, &m| *d = u * m);
            }
        }
    }
    (d_msg, d_gate)
}
