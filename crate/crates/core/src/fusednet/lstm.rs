//! Single-layer LSTM over a variable-length frame sequence.
//!
//! Gate pre-activations are stacked in the order input, forget, output,
//! candidate: rows `[0, H)` of `w`, `u` and `b` belong to the input gate,
//! `[H, 2H)` to the forget gate and so on.

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `[4H x input_dim]`
    pub w: Vec<f64>,
    /// `[4H x H]`
    pub u: Vec<f64>,
    /// `[4H]`
    pub b: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let g = 4 * hidden_dim;
        LstmParams {
            input_dim,
            hidden_dim,
            w: vec![0.0; g * input_dim],
            u: vec![0.0; g * hidden_dim],
            b: vec![0.0; g],
        }
    }

    /// Weights uniform in `±1/sqrt(H)`, forget-gate bias 1, other biases 0.
    pub fn init<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        for x in p.w.iter_mut().chain(p.u.iter_mut()) {
            *x = rng.random_range(-bound..=bound);
        }
        p.b[hidden_dim..2 * hidden_dim].fill(1.0);
        p
    }

    pub(crate) fn tensors(&self) -> [&[f64]; 3] {
        [&self.w, &self.u, &self.b]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut [f64]; 3] {
        [&mut self.w, &mut self.u, &mut self.b]
    }

    fn w_row(&self, r: usize) -> &[f64] {
        &self.w[r * self.input_dim..(r + 1) * self.input_dim]
    }

    fn u_row(&self, r: usize) -> &[f64] {
        &self.u[r * self.hidden_dim..(r + 1) * self.hidden_dim]
    }
}

#[derive(Debug, Clone)]
struct Step {
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Activations kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmCache {
    steps: Vec<Step>,
}

impl LstmCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Runs the recurrence from zero state and returns the last hidden state.
pub fn lstm_forward(params: &LstmParams, frames: &Matrix) -> Result<(Vec<f64>, LstmCache)> {
    if frames.rows() == 0 {
        return Err(Error::EmptySequence("LSTM input has no frames".into()));
    }
    if frames.cols() != params.input_dim {
        return Err(Error::dims("LSTM input width", params.input_dim, frames.cols()));
    }
    let h = params.hidden_dim;
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    let mut steps = Vec::with_capacity(frames.rows());
    let mut z = vec![0.0; 4 * h];
    for x in frames.iter_rows() {
        for (r, zr) in z.iter_mut().enumerate() {
            *zr = params.b[r] + dot(params.w_row(r), x) + dot(params.u_row(r), &h_prev);
        }
        let i: Vec<f64> = z[..h].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
        let o: Vec<f64> = z[2 * h..3 * h].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = z[3 * h..].iter().map(|v| v.tanh()).collect();
        let c: Vec<f64> = (0..h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h_new: Vec<f64> = (0..h).map(|k| o[k] * tanh_c[k]).collect();
        steps.push(Step {
            h_prev: std::mem::replace(&mut h_prev, h_new),
            c_prev: std::mem::replace(&mut c_prev, c),
            i,
            f,
            o,
            g,
            tanh_c,
        });
    }
    Ok((h_prev, LstmCache { steps }))
}

/// Accumulates parameter gradients into `grad` given `dL/dh_last`.
pub(crate) fn lstm_backward(params: &LstmParams, frames: &Matrix, cache: &LstmCache, dh_last: &[f64], grad: &mut LstmParams) {
    let h = params.hidden_dim;
    let n_in = params.input_dim;
    let mut dh = dh_last.to_vec();
    let mut dc = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    for (t, s) in cache.steps.iter().enumerate().rev() {
        for k in 0..h {
            let d_o = dh[k] * s.tanh_c[k];
            dc[k] += dh[k] * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
            let d_i = dc[k] * s.g[k];
            let d_g = dc[k] * s.i[k];
            let d_f = dc[k] * s.c_prev[k];
            dz[k] = d_i * s.i[k] * (1.0 - s.i[k]);
            dz[h + k] = d_f * s.f[k] * (1.0 - s.f[k]);
            dz[2 * h + k] = d_o * s.o[k] * (1.0 - s.o[k]);
            dz[3 * h + k] = d_g * (1.0 - s.g[k] * s.g[k]);
            dc[k] *= s.f[k];
        }
        let x = frames.row(t);
        for (r, &dzr) in dz.iter().enumerate() {
            if dzr == 0.0 {
                continue;
            }
            for (gw, xv) in grad.w[r * n_in..(r + 1) * n_in].iter_mut().zip(x) {
                *gw += dzr * xv;
            }
            for (gu, hv) in grad.u[r * h..(r + 1) * h].iter_mut().zip(&s.h_prev) {
                *gu += dzr * hv;
            }
            grad.b[r] += dzr;
        }
        dh.fill(0.0);
        for (r, &dzr) in dz.iter().enumerate() {
            if dzr == 0.0 {
                continue;
            }
            for (d, uv) in dh.iter_mut().zip(params.u_row(r)) {
                *d += uv * dzr;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_give_zero_state() {
        let p = LstmParams::zeros(3, 4);
        let frames = Matrix::new(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.5, 9.0]).unwrap();
        let (h, cache) = lstm_forward(&p, &frames).unwrap();
        assert_eq!(h, vec![0.0; 4]);
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn empty_input_errors() {
        let p = LstmParams::zeros(3, 4);
        assert!(matches!(lstm_forward(&p, &Matrix::zeros(0, 3)), Err(Error::EmptySequence(_))));
        assert!(lstm_forward(&p, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn single_step_matches_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = LstmParams::init(2, 1, &mut rng);
        let x = [0.3, -0.7];
        let frames = Matrix::new(1, 2, x.to_vec()).unwrap();
        let (h, _) = lstm_forward(&p, &frames).unwrap();
        let pre = |r: usize| p.b[r] + p.w[2 * r] * x[0] + p.w[2 * r + 1] * x[1];
        let i = sigmoid(pre(0));
        let o = sigmoid(pre(2));
        let g = pre(3).tanh();
        let expected = o * (i * g).tanh();
        assert!((h[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn forget_bias_initialised_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = LstmParams::init(3, 5, &mut rng);
        assert!(p.b[5..10].iter().all(|&b| b == 1.0));
        assert!(p.b[..5].iter().chain(&p.b[10..]).all(|&b| b == 0.0));
        let bound = 1.0 / 5f64.sqrt();
        assert!(p.w.iter().chain(&p.u).all(|x| x.abs() <= bound));
    }
}
