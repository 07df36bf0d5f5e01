//! LSTM cell and linear projection with hand-derived gradients.
//!
//! Gate rows are stacked in the order (input, forget, candidate, output):
//! rows `0..C` hold the input gate, `C..2C` the forget gate, `2C..3C` the
//! tanh candidate and `3C..4C` the output gate. The cell has no peepholes.
//!
//! ```text
//! z  = W_x x + W_h h + b
//! i  = σ(z_i)   f = σ(z_f)   g = tanh(z_g)   o = σ(z_o)
//! c' = f ⊙ c + i ⊙ g
//! h' = o ⊙ tanh(c')
//! ```

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{dot, gemv_acc, gemv_t_acc, outer_acc, sigmoid, SeqTensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_x: SeqTensor,
    pub w_h: SeqTensor,
    pub b: SeqTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: SeqTensor,
    pub c: SeqTensor,
}

/// Everything the backward pass of one step needs.
#[derive(Debug, Clone)]
pub struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Post-activation gate values, stacked (i, f, g, o).
    pub gates: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub w: SeqTensor,
    pub b: SeqTensor,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_x: SeqTensor::zeros(&[4 * hidden, input]),
            w_h: SeqTensor::zeros(&[4 * hidden, hidden]),
            b: SeqTensor::zeros(&[4 * hidden]),
        }
    }

    /// Weights `scale · N(0,1)`, biases zero.
    pub fn init(input: usize, hidden: usize, scale: f64, rng: &mut RngState) -> Result<Self> {
        Ok(Self {
            w_x: SeqTensor::randn(&[4 * hidden, input], scale, rng)?,
            w_h: SeqTensor::randn(&[4 * hidden, hidden], scale, rng)?,
            b: SeqTensor::zeros(&[4 * hidden]),
        })
    }

    pub fn hidden(&self) -> usize {
        self.w_h.shape()[1]
    }

    pub fn input(&self) -> usize {
        self.w_x.shape()[1]
    }

    pub fn check(&self) -> Result<()> {
        let c = self.hidden();
        let ok = self.w_h.shape() == [4 * c, c]
            && self.w_x.shape().len() == 2
            && self.w_x.shape()[0] == 4 * c
            && self.b.shape() == [4 * c];
        if ok {
            Ok(())
        } else {
            Err(Error::dims("LstmParams", self.w_x.shape(), self.w_h.shape()))
        }
    }

    pub fn tensors(&self) -> [&SeqTensor; 3] {
        [&self.w_x, &self.w_h, &self.b]
    }

    pub fn tensors_mut(&mut self) -> [&mut SeqTensor; 3] {
        [&mut self.w_x, &mut self.w_h, &mut self.b]
    }
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: SeqTensor::zeros(&[hidden]),
            c: SeqTensor::zeros(&[hidden]),
        }
    }
}

impl LinearParams {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: SeqTensor::zeros(&[output, input]),
            b: SeqTensor::zeros(&[output]),
        }
    }

    pub fn init(input: usize, output: usize, scale: f64, rng: &mut RngState) -> Result<Self> {
        Ok(Self {
            w: SeqTensor::randn(&[output, input], scale, rng)?,
            b: SeqTensor::zeros(&[output]),
        })
    }

    pub fn input(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn output(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn tensors(&self) -> [&SeqTensor; 2] {
        [&self.w, &self.b]
    }

    pub fn tensors_mut(&mut self) -> [&mut SeqTensor; 2] {
        [&mut self.w, &mut self.b]
    }
}

pub fn lstm_step(x: &SeqTensor, state: &LstmState, p: &LstmParams) -> Result<(LstmState, StepCache)> {
    let c = p.hidden();
    if x.len() != p.input() {
        return Err(Error::dims("lstm_step input", x.shape(), p.w_x.shape()));
    }
    if state.h.len() != c || state.c.len() != c {
        return Err(Error::dims("lstm_step state", state.h.shape(), p.w_h.shape()));
    }
    let cache = lstm_forward_raw(x.data(), state.h.data(), state.c.data(), p);
    let next = LstmState {
        h: SeqTensor::from_vec(cache.h.clone()),
        c: SeqTensor::from_vec(c_from_cache(&cache)),
    };
    Ok((next, cache))
}

fn c_from_cache(cache: &StepCache) -> Vec<f64> {
    let c = cache.h.len();
    (0..c)
        .map(|j| cache.gates[c + j] * cache.c_prev[j] + cache.gates[j] * cache.gates[2 * c + j])
        .collect()
}

/// Slice-level forward used on the hot path; shapes are the caller's responsibility.
pub(crate) fn lstm_forward_raw(x: &[f64], h: &[f64], cell: &[f64], p: &LstmParams) -> StepCache {
    let c = h.len();
    let mut z = p.b.data().to_vec();
    gemv_acc(p.w_x.data(), x, &mut z);
    gemv_acc(p.w_h.data(), h, &mut z);
    for (k, v) in z.iter_mut().enumerate() {
        *v = if (2 * c..3 * c).contains(&k) {
            v.tanh()
        } else {
            sigmoid(*v)
        };
    }
    let mut tanh_c = vec![0.0; c];
    let mut h_new = vec![0.0; c];
    for j in 0..c {
        let c_new = z[c + j] * cell[j] + z[j] * z[2 * c + j];
        tanh_c[j] = c_new.tanh();
        h_new[j] = z[3 * c + j] * tanh_c[j];
    }
    StepCache {
        x: x.to_vec(),
        h_prev: h.to_vec(),
        c_prev: cell.to_vec(),
        gates: z,
        tanh_c,
        h: h_new,
    }
}

/// Gradients of one step. `grad_h`/`grad_c` are the upstream gradients on
/// the step's outputs `h'` and `c'`. Returns gradients on `x`, on the
/// previous state, and on the parameters.
pub fn lstm_step_backward(
    grad_h: &SeqTensor,
    grad_c: &SeqTensor,
    cache: &StepCache,
    p: &LstmParams,
) -> Result<(SeqTensor, LstmState, LstmParams)> {
    let c = p.hidden();
    if cache.h.len() != c || cache.x.len() != p.input() {
        return Err(Error::Internal(format!(
            "step cache (hidden {}, input {}) does not match parameters (hidden {c}, input {})",
            cache.h.len(),
            cache.x.len(),
            p.input()
        )));
    }
    if grad_h.len() != c || grad_c.len() != c {
        return Err(Error::dims("lstm_step_backward", grad_h.shape(), &[c]));
    }
    let mut grads = LstmParams::zeros(p.input(), c);
    let mut gx = vec![0.0; p.input()];
    let (gh, gc) = lstm_backward_acc(grad_h.data(), grad_c.data(), cache, p, &mut grads, Some(&mut gx));
    Ok((
        SeqTensor::from_vec(gx),
        LstmState {
            h: SeqTensor::from_vec(gh),
            c: SeqTensor::from_vec(gc),
        },
        grads,
    ))
}

/// Accumulates parameter gradients into `grads` and the input gradient into
/// `grad_x`; returns gradients on `(h_prev, c_prev)`.
pub(crate) fn lstm_backward_acc(
    grad_h: &[f64],
    grad_c: &[f64],
    cache: &StepCache,
    p: &LstmParams,
    grads: &mut LstmParams,
    grad_x: Option<&mut [f64]>,
) -> (Vec<f64>, Vec<f64>) {
    let c = cache.h.len();
    let g = &cache.gates;
    let mut dz = vec![0.0; 4 * c];
    let mut dc_prev = vec![0.0; c];
    for j in 0..c {
        let (i_g, f_g, c_g, o_g) = (g[j], g[c + j], g[2 * c + j], g[3 * c + j]);
        let tc = cache.tanh_c[j];
        let d_o = grad_h[j] * tc;
        let dc = grad_c[j] + grad_h[j] * o_g * (1.0 - tc * tc);
        let d_i = dc * c_g;
        let d_g = dc * i_g;
        let d_f = dc * cache.c_prev[j];
        dc_prev[j] = dc * f_g;
        dz[j] = d_i * i_g * (1.0 - i_g);
        dz[c + j] = d_f * f_g * (1.0 - f_g);
        dz[2 * c + j] = d_g * (1.0 - c_g * c_g);
        dz[3 * c + j] = d_o * o_g * (1.0 - o_g);
    }
    outer_acc(&dz, &cache.x, grads.w_x.data_mut());
    outer_acc(&dz, &cache.h_prev, grads.w_h.data_mut());
    for (gb, d) in grads.b.data_mut().iter_mut().zip(&dz) {
        *gb += d;
    }
    if let Some(gx) = grad_x {
        gemv_t_acc(p.w_x.data(), &dz, gx);
    }
    let mut dh_prev = vec![0.0; c];
    gemv_t_acc(p.w_h.data(), &dz, &mut dh_prev);
    (dh_prev, dc_prev)
}

pub fn linear_forward(x: &SeqTensor, p: &LinearParams) -> Result<SeqTensor> {
    if x.len() != p.input() {
        return Err(Error::dims("linear_forward", x.shape(), p.w.shape()));
    }
    Ok(SeqTensor::from_vec(linear_raw(x.data(), p)))
}

pub(crate) fn linear_raw(x: &[f64], p: &LinearParams) -> Vec<f64> {
    let cols = x.len();
    p.b.data()
        .iter()
        .enumerate()
        .map(|(r, b)| b + dot(&p.w.data()[r * cols..(r + 1) * cols], x))
        .collect()
}

/// Gradients of `y = W x + b`; `x` is the forward input (the layer's cache).
pub fn linear_backward(grad_y: &SeqTensor, x: &SeqTensor, p: &LinearParams) -> Result<(SeqTensor, LinearParams)> {
    if grad_y.len() != p.output() || x.len() != p.input() {
        return Err(Error::dims("linear_backward", grad_y.shape(), p.w.shape()));
    }
    let mut grads = LinearParams::zeros(p.input(), p.output());
    let mut gx = vec![0.0; p.input()];
    linear_backward_acc(grad_y.data(), x.data(), p, &mut grads, &mut gx);
    Ok((SeqTensor::from_vec(gx), grads))
}

pub(crate) fn linear_backward_acc(
    grad_y: &[f64],
    x: &[f64],
    p: &LinearParams,
    grads: &mut LinearParams,
    grad_x: &mut [f64],
) {
    outer_acc(grad_y, x, grads.w.data_mut());
    for (gb, d) in grads.b.data_mut().iter_mut().zip(grad_y) {
        *gb += d;
    }
    gemv_t_acc(p.w.data(), grad_y, grad_x);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_lstm(input: usize, hidden: usize, seed: u64) -> LstmParams {
        let mut rng = RngState::new(seed);
        let mut p = LstmParams::init(input, hidden, 0.5, &mut rng).unwrap();
        p.b = SeqTensor::randn(&[4 * hidden], 0.5, &mut rng).unwrap();
        p
    }

    fn rand_vec(n: usize, seed: u64) -> SeqTensor {
        SeqTensor::randn(&[n], 1.0, &mut RngState::new(seed)).unwrap()
    }

    #[test]
    fn zero_params_halve_the_cell() {
        let p = LstmParams::zeros(3, 2);
        let state = LstmState {
            h: SeqTensor::from_vec(vec![0.3, -0.2]),
            c: SeqTensor::from_vec(vec![1.0, -2.0]),
        };
        let (next, _) = lstm_step(&rand_vec(3, 1), &state, &p).unwrap();
        assert_eq!(next.c.data(), &[0.5, -1.0]);
        assert_eq!(next.h.data(), &[0.5 * 0.5f64.tanh(), 0.5 * (-1.0f64).tanh()]);
    }

    #[test]
    fn zero_everything_stays_zero() {
        let p = LstmParams::zeros(2, 3);
        let (next, _) = lstm_step(&SeqTensor::zeros(&[2]), &LstmState::zeros(3), &p).unwrap();
        assert_eq!(next, LstmState::zeros(3));
    }

    #[test]
    fn matches_straight_line_gate_equations() {
        let (n_in, c) = (4, 3);
        let p = rand_lstm(n_in, c, 11);
        let x = rand_vec(n_in, 12);
        let state = LstmState {
            h: rand_vec(c, 13),
            c: rand_vec(c, 14),
        };
        let (next, _) = lstm_step(&x, &state, &p).unwrap();
        // independent recomputation, one gate at a time
        let pre = |gate: usize, j: usize| {
            let row = gate * c + j;
            let mut s = p.b.data()[row];
            for k in 0..n_in {
                s += p.w_x.data()[row * n_in + k] * x.data()[k];
            }
            for k in 0..c {
                s += p.w_h.data()[row * c + k] * state.h.data()[k];
            }
            s
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for j in 0..c {
            let i = sig(pre(0, j));
            let f = sig(pre(1, j));
            let g = pre(2, j).tanh();
            let o = sig(pre(3, j));
            let cn = f * state.c.data()[j] + i * g;
            let hn = o * cn.tanh();
            assert!((next.c.data()[j] - cn).abs() < 1e-12);
            assert!((next.h.data()[j] - hn).abs() < 1e-12);
        }
    }

    #[test]
    fn gate_ranges() {
        let p = rand_lstm(5, 6, 3);
        let (_, cache) = lstm_step(&rand_vec(5, 4), &LstmState::zeros(6), &p).unwrap();
        for (k, g) in cache.gates.iter().enumerate() {
            if (12..18).contains(&k) {
                assert!(*g > -1.0 && *g < 1.0);
            } else {
                assert!(*g > 0.0 && *g < 1.0);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let p = rand_lstm(3, 4, 5);
        let (_, cache) = lstm_step(&rand_vec(3, 6), &LstmState::zeros(4), &p).unwrap();
        let z = SeqTensor::zeros(&[4]);
        let (gx, gs, gp) = lstm_step_backward(&z, &z, &cache, &p).unwrap();
        assert!(gx
            .data()
            .iter()
            .chain(gs.h.data())
            .chain(gs.c.data())
            .all(|v| *v == 0.0));
        assert!(gp.tensors().iter().all(|t| t.data().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn backward_rejects_foreign_cache() {
        let p = rand_lstm(3, 4, 5);
        let (_, cache) = lstm_step(&rand_vec(3, 6), &LstmState::zeros(4), &p).unwrap();
        let other = rand_lstm(3, 5, 5);
        let z = SeqTensor::zeros(&[5]);
        assert!(matches!(
            lstm_step_backward(&z, &z, &cache, &other),
            Err(Error::Internal(_))
        ));
    }

    #[test]
    fn linear_cases() {
        let p = LinearParams {
            w: SeqTensor::identity(3),
            b: SeqTensor::zeros(&[3]),
        };
        let x = SeqTensor::from_vec(vec![1.0, -2.0, 3.0]);
        assert_eq!(linear_forward(&x, &p).unwrap(), x);
        let p = LinearParams {
            w: SeqTensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]),
            b: SeqTensor::from_vec(vec![1.0, 1.0]),
        };
        assert_eq!(linear_forward(&SeqTensor::zeros(&[2]), &p).unwrap(), p.b);
        let y = linear_forward(&SeqTensor::from_vec(vec![1.0, 1.0]), &p).unwrap();
        assert_eq!(y.data(), &[4.0, 8.0]);
        assert!(linear_forward(&SeqTensor::zeros(&[3]), &p).is_err());
    }

    #[test]
    fn linear_bias_grad_is_upstream() {
        let mut rng = RngState::new(9);
        let p = LinearParams::init(3, 2, 1.0, &mut rng).unwrap();
        let gy = SeqTensor::from_vec(vec![0.25, -1.5]);
        let (_, g) = linear_backward(&gy, &rand_vec(3, 1), &p).unwrap();
        assert_eq!(g.b, gy);
        let (gx, g) = linear_backward(&SeqTensor::zeros(&[2]), &rand_vec(3, 1), &p).unwrap();
        assert!(gx.data().iter().chain(g.w.data()).all(|v| *v == 0.0));
    }
}
