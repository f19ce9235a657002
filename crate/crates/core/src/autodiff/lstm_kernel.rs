//! Fused LSTM layer kernel: one graph node per layer and direction.
//!
//! Gate layout along the `4h` axis is `[input, forget, cell, output]`.
//! The node output has `k + 1` rows: the hidden states in time order
//! followed by the final cell state.

use super::linalg::{gemm, sigmoid, vecmat_acc};

pub(crate) struct LstmCache {
    /// Activated gates, `k x 4h`.
    pub gates: Vec<f64>,
    /// Cell states, `k x h`.
    pub cells: Vec<f64>,
    /// `tanh(c)`, `k x h`.
    pub tanh_c: Vec<f64>,
}

pub(crate) struct LstmDims {
    pub steps: usize,
    pub input: usize,
    pub hidden: usize,
    pub reverse: bool,
}

impl LstmDims {
    /// Time index processed at position `step` of the recurrence.
    #[inline]
    pub fn time_at(&self, step: usize) -> usize {
        if self.reverse {
            self.steps - 1 - step
        } else {
            step
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn forward(
    dims: &LstmDims,
    x: &[f64],
    w_in: &[f64],
    w_rec: &[f64],
    bias: &[f64],
    h0: Option<&[f64]>,
    c0: Option<&[f64]>,
) -> (Vec<f64>, LstmCache) {
    let (k, h) = (dims.steps, dims.hidden);
    let g4 = 4 * h;
    let mut gates = vec![0.0; k * g4];
    gemm(k, dims.input, g4, x, false, w_in, false, 0.0, &mut gates);
    for row in gates.chunks_exact_mut(g4) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }

    let mut out = vec![0.0; (k + 1) * h];
    let mut cells = vec![0.0; k * h];
    let mut tanh_c = vec![0.0; k * h];
    let mut h_prev = h0.map_or_else(|| vec![0.0; h], <[f64]>::to_vec);
    let mut c_prev = c0.map_or_else(|| vec![0.0; h], <[f64]>::to_vec);

    for step in 0..k {
        let t = dims.time_at(step);
        let row = &mut gates[t * g4..(t + 1) * g4];
        vecmat_acc(&h_prev, w_rec, g4, row);
        let (gi, rest) = row.split_at_mut(h);
        let (gf, rest) = rest.split_at_mut(h);
        let (gg, go) = rest.split_at_mut(h);
        for j in 0..h {
            gi[j] = sigmoid(gi[j]);
            gf[j] = sigmoid(gf[j]);
            gg[j] = gg[j].tanh();
            go[j] = sigmoid(go[j]);
            let c = gf[j] * c_prev[j] + gi[j] * gg[j];
            let tc = c.tanh();
            cells[t * h + j] = c;
            tanh_c[t * h + j] = tc;
            out[t * h + j] = go[j] * tc;
            c_prev[j] = c;
        }
        h_prev.copy_from_slice(&out[t * h..(t + 1) * h]);
    }
    out[k * h..].copy_from_slice(&c_prev);
    (
        out,
        LstmCache {
            gates,
            cells,
            tanh_c,
        },
    )
}

/// Gradients produced by [`backward`]; entries are `None` when not requested.
#[derive(Default)]
pub(crate) struct LstmGrads {
    pub x: Option<Vec<f64>>,
    pub w_in: Option<Vec<f64>>,
    pub w_rec: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
    pub h0: Option<Vec<f64>>,
    pub c0: Option<Vec<f64>>,
}

pub(crate) struct LstmWants {
    pub x: bool,
    pub w_in: bool,
    pub w_rec: bool,
    pub bias: bool,
    pub h0: bool,
    pub c0: bool,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    dims: &LstmDims,
    cache: &LstmCache,
    out: &[f64],
    grad_out: &[f64],
    x: &[f64],
    w_in: &[f64],
    w_rec: &[f64],
    h0: Option<&[f64]>,
    c0: Option<&[f64]>,
    wants: &LstmWants,
) -> LstmGrads {
    let (k, h) = (dims.steps, dims.hidden);
    let g4 = 4 * h;
    let mut dpre = vec![0.0; k * g4];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = grad_out[k * h..].to_vec();
    let zeros = vec![0.0; h];
    // `4h x h`, so that `dh = W_rec·dg` runs as a row-blocked accumulation.
    let mut w_rec_t = vec![0.0; g4 * h];
    for i in 0..h {
        for j in 0..g4 {
            w_rec_t[j * h + i] = w_rec[i * g4 + j];
        }
    }

    for step in (0..k).rev() {
        let t = dims.time_at(step);
        let c_prev: &[f64] = if step == 0 {
            c0.unwrap_or(&zeros)
        } else {
            let tp = dims.time_at(step - 1);
            &cache.cells[tp * h..(tp + 1) * h]
        };
        let gates = &cache.gates[t * g4..(t + 1) * g4];
        let tc = &cache.tanh_c[t * h..(t + 1) * h];
        let dg = &mut dpre[t * g4..(t + 1) * g4];
        for j in 0..h {
            let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            let dh = grad_out[t * h + j] + dh_next[j];
            let dc = dc_next[j] + dh * o * (1.0 - tc[j] * tc[j]);
            dg[j] = dc * g * i * (1.0 - i);
            dg[h + j] = dc * c_prev[j] * f * (1.0 - f);
            dg[2 * h + j] = dc * i * (1.0 - g * g);
            dg[3 * h + j] = dh * tc[j] * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        dh_next.fill(0.0);
        vecmat_acc(dg, &w_rec_t, h, &mut dh_next);
    }

    let mut grads = LstmGrads::default();
    if wants.w_in {
        let mut dw = vec![0.0; dims.input * g4];
        gemm(dims.input, k, g4, x, true, &dpre, false, 0.0, &mut dw);
        grads.w_in = Some(dw);
    }
    if wants.w_rec {
        let mut h_prev = vec![0.0; k * h];
        for step in 0..k {
            let t = dims.time_at(step);
            let src: &[f64] = if step == 0 {
                h0.unwrap_or(&zeros)
            } else {
                let tp = dims.time_at(step - 1);
                &out[tp * h..(tp + 1) * h]
            };
            h_prev[t * h..(t + 1) * h].copy_from_slice(src);
        }
        let mut dw = vec![0.0; h * g4];
        gemm(h, k, g4, &h_prev, true, &dpre, false, 0.0, &mut dw);
        grads.w_rec = Some(dw);
    }
    if wants.bias {
        let mut db = vec![0.0; g4];
        for row in dpre.chunks_exact(g4) {
            for (a, b) in db.iter_mut().zip(row) {
                *a += b;
            }
        }
        grads.bias = Some(db);
    }
    if wants.x {
        let mut dx = vec![0.0; k * dims.input];
        gemm(k, g4, dims.input, &dpre, false, w_in, true, 0.0, &mut dx);
        grads.x = Some(dx);
    }
    if wants.h0 {
        grads.h0 = Some(dh_next);
    }
    if wants.c0 {
        grads.c0 = Some(dc_next);
    }
    grads
}
