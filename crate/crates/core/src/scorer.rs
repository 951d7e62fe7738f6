//! LSTM variational autoencoder used as the unsupervised anomaly scorer.
//!
//! Architecture (one recurrent layer on each side):
//!
//! ```text
//! encoder   h_t = LSTM_enc(x_t, h_{t-1}),  t = 1..T,  h_0 = c_0 = 0
//! latent    mu = W_mu h_T + b_mu,  logvar = W_lv h_T + b_lv
//!           z  = mu + exp(logvar / 2) * eps
//! decoder   s_t = LSTM_dec(z, s_{t-1}),    t = 1..T,  s_0 = c_0 = 0
//!           y_t = W_out s_t + b_out
//! loss      recon = sum_t |y_t - x_t|^2
//!           kl    = -1/2 sum_i (1 + logvar_i - mu_i^2 - exp(logvar_i))
//! ```
//!
//! All weights live in one flat buffer so that the optimizer and gradient
//! checks can treat the model as a single vector. Gradients are computed by
//! hand-written backpropagation through time.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("non-finite value in {0}; training diverged")]
    NonFinite(&'static str),
    #[error("no training windows supplied")]
    EmptyTrainingSet,
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

/// A run of `timestep` consecutive feature rows ending at stream position
/// `end_index`. Rows are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceWindow {
    rows: Vec<f64>,
    timestep: usize,
    dim: usize,
    pub end_index: u64,
}

impl SequenceWindow {
    pub fn new(rows: Vec<f64>, timestep: usize, dim: usize, end_index: u64) -> Self {
        assert!(timestep >= 1 && dim >= 1, "window needs T >= 1 and D >= 1");
        assert_eq!(rows.len(), timestep * dim, "window data does not match T x D");
        Self { rows, timestep, dim, end_index }
    }

    pub fn from_rows(rows: &[Vec<f64>], end_index: u64) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(flat, rows.len(), dim, end_index)
    }

    pub fn timestep(&self) -> usize {
        self.timestep
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.rows[t * self.dim..(t + 1) * self.dim]
    }

    pub fn last_row(&self) -> &[f64] {
        self.row(self.timestep - 1)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.rows
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { rows: self.rows.iter().map(|v| v * factor).collect(), ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub timestep: usize,
    pub input_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_latent")]
    pub latent: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_hidden() -> usize {
    64
}
fn default_latent() -> usize {
    32
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_batch_size() -> usize {
    8
}

impl ScorerConfig {
    pub fn new(timestep: usize, input_dim: usize) -> Self {
        Self {
            timestep,
            input_dim,
            hidden: default_hidden(),
            latent: default_latent(),
            learning_rate: default_learning_rate(),
            batch_size: default_batch_size(),
            seed: 0,
        }
    }

    pub fn with_sizes(mut self, hidden: usize, latent: usize) -> Self {
        self.hidden = hidden;
        self.latent = latent;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Named weight tensors, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tensor {
    EncWx,
    EncWh,
    EncB,
    MuW,
    MuB,
    LogvarW,
    LogvarB,
    DecWx,
    DecWh,
    DecB,
    OutW,
    OutB,
}

impl Tensor {
    pub const ALL: [Tensor; 12] = [
        Tensor::EncWx,
        Tensor::EncWh,
        Tensor::EncB,
        Tensor::MuW,
        Tensor::MuB,
        Tensor::LogvarW,
        Tensor::LogvarB,
        Tensor::DecWx,
        Tensor::DecWh,
        Tensor::DecB,
        Tensor::OutW,
        Tensor::OutB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tensor::EncWx => "enc_wx",
            Tensor::EncWh => "enc_wh",
            Tensor::EncB => "enc_b",
            Tensor::MuW => "mu_w",
            Tensor::MuB => "mu_b",
            Tensor::LogvarW => "logvar_w",
            Tensor::LogvarB => "logvar_b",
            Tensor::DecWx => "dec_wx",
            Tensor::DecWh => "dec_wh",
            Tensor::DecB => "dec_b",
            Tensor::OutW => "out_w",
            Tensor::OutB => "out_b",
        }
    }

    /// (rows, cols); vectors have one column.
    pub fn shape(self, cfg: &ScorerConfig) -> (usize, usize) {
        let (d, h, l) = (cfg.input_dim, cfg.hidden, cfg.latent);
        match self {
            Tensor::EncWx => (4 * h, d),
            Tensor::EncWh => (4 * h, h),
            Tensor::EncB => (4 * h, 1),
            Tensor::MuW | Tensor::LogvarW => (l, h),
            Tensor::MuB | Tensor::LogvarB => (l, 1),
            Tensor::DecWx => (4 * h, l),
            Tensor::DecWh => (4 * h, h),
            Tensor::DecB => (4 * h, 1),
            Tensor::OutW => (d, h),
            Tensor::OutB => (d, 1),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    offsets: [usize; 13],
}

impl Layout {
    fn new(cfg: &ScorerConfig) -> Self {
        let mut offsets = [0; 13];
        for (i, t) in Tensor::ALL.iter().enumerate() {
            let (r, c) = t.shape(cfg);
            offsets[i + 1] = offsets[i] + r * c;
        }
        Self { offsets }
    }

    fn range(&self, t: Tensor) -> std::ops::Range<usize> {
        let i = t as usize;
        self.offsets[i]..self.offsets[i + 1]
    }

    fn total(&self) -> usize {
        self.offsets[12]
    }
}

/// 4H(D+H+1) + 2(HL+L) + 4H(L+H+1) + (HD+D).
pub fn parameter_count(input_dim: usize, hidden: usize, latent: usize) -> usize {
    let (d, h, l) = (input_dim, hidden, latent);
    4 * h * (d + h + 1) + 2 * (h * l + l) + 4 * h * (l + h + 1) + (h * d + d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    pub config: ScorerConfig,
    weights: Vec<f64>,
    layout_total: usize,
}

impl ScorerParams {
    pub fn zeros(config: ScorerConfig) -> Self {
        let n = Layout::new(&config).total();
        Self { config, weights: vec![0.0; n], layout_total: n }
    }

    fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    pub fn len(&self) -> usize {
        self.layout_total
    }

    pub fn is_empty(&self) -> bool {
        self.layout_total == 0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn tensor(&self, t: Tensor) -> &[f64] {
        &self.weights[self.layout().range(t)]
    }

    pub fn tensor_mut(&mut self, t: Tensor) -> &mut [f64] {
        let r = self.layout().range(t);
        &mut self.weights[r]
    }

    /// Index range of tensor `t` in the flat weight vector.
    pub fn tensor_range(&self, t: Tensor) -> std::ops::Range<usize> {
        self.layout().range(t)
    }

    fn check_window(&self, w: &SequenceWindow) -> Result<(), ScorerError> {
        if w.dim() != self.config.input_dim || w.timestep() != self.config.timestep {
            return Err(ScorerError::ShapeMismatch {
                expected: format!("{}x{}", self.config.timestep, self.config.input_dim),
                got: format!("{}x{}", w.timestep(), w.dim()),
            });
        }
        if w.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(ScorerError::NonFinite("input window"));
        }
        Ok(())
    }
}

/// Draws every weight uniformly from [-1/sqrt(H), 1/sqrt(H)].
pub fn init_scorer(config: ScorerConfig) -> ScorerParams {
    let mut params = ScorerParams::zeros(config);
    let bound = 1.0 / (params.config.hidden as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(params.config.seed);
    for w in params.weights.iter_mut() {
        *w = rng.random_range(-bound..=bound);
    }
    params
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Borrowed weights of one LSTM layer. Gate order within the 4H rows is
/// input, forget, cell candidate, output.
struct Lstm<'a> {
    wx: &'a [f64],
    wh: &'a [f64],
    b: &'a [f64],
    input: usize,
    hidden: usize,
}

/// Everything the backward pass needs from a forward run.
struct LstmTrace {
    /// post-activation gates per step, 4H each
    gates: Vec<f64>,
    /// c_0..c_T, H each
    cells: Vec<f64>,
    /// h_0..h_T, H each
    hiddens: Vec<f64>,
}

impl LstmTrace {
    fn h(&self, t: usize, hidden: usize) -> &[f64] {
        &self.hiddens[t * hidden..(t + 1) * hidden]
    }
}

impl Lstm<'_> {
    /// Runs `steps` steps; `input_at(t)` yields x_t for t in 0..steps.
    fn forward<'x>(&self, steps: usize, input_at: impl Fn(usize) -> &'x [f64]) -> LstmTrace {
        let h = self.hidden;
        let mut gates = vec![0.0; steps * 4 * h];
        let mut cells = vec![0.0; (steps + 1) * h];
        let mut hiddens = vec![0.0; (steps + 1) * h];
        for t in 0..steps {
            let x = input_at(t);
            let (hprev, hrest) = hiddens.split_at_mut((t + 1) * h);
            let hprev = &hprev[t * h..];
            let hnext = &mut hrest[..h];
            let (cprev, crest) = cells.split_at_mut((t + 1) * h);
            let cprev = &cprev[t * h..];
            let cnext = &mut crest[..h];
            let g = &mut gates[t * 4 * h..(t + 1) * 4 * h];
            for r in 0..4 * h {
                let wx = &self.wx[r * self.input..(r + 1) * self.input];
                let wh = &self.wh[r * h..(r + 1) * h];
                let a = self.b[r] + dot(wx, x) + dot(wh, hprev);
                g[r] = if (2 * h..3 * h).contains(&r) { a.tanh() } else { sigmoid(a) };
            }
            for k in 0..h {
                let (i, f, gg, o) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
                let c = f * cprev[k] + i * gg;
                cnext[k] = c;
                hnext[k] = o * c.tanh();
            }
        }
        LstmTrace { gates, cells, hiddens }
    }

    /// Backpropagates `dh_out[t]` (gradient w.r.t. h_{t+1}, H each) through
    /// the unrolled layer. Accumulates weight gradients into `gwx/gwh/gb` and,
    /// when `dx` is given, input gradients (steps x input) into it.
    #[allow(clippy::too_many_arguments)]
    fn backward<'x>(
        &self,
        trace: &LstmTrace,
        steps: usize,
        input_at: impl Fn(usize) -> &'x [f64],
        dh_out: &[f64],
        gwx: &mut [f64],
        gwh: &mut [f64],
        gb: &mut [f64],
        mut dx: Option<&mut [f64]>,
    ) {
        let h = self.hidden;
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut da = vec![0.0; 4 * h];
        for t in (0..steps).rev() {
            let g = &trace.gates[t * 4 * h..(t + 1) * 4 * h];
            let cprev = &trace.cells[t * h..(t + 1) * h];
            let c = &trace.cells[(t + 1) * h..(t + 2) * h];
            for k in 0..h {
                let (i, f, gg, o) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
                let dh = dh_out[t * h + k] + dh_next[k];
                let tc = c[k].tanh();
                let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                da[k] = dc * gg * i * (1.0 - i);
                da[h + k] = dc * cprev[k] * f * (1.0 - f);
                da[2 * h + k] = dc * i * (1.0 - gg * gg);
                da[3 * h + k] = dh * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            let x = input_at(t);
            let hprev = trace.h(t, h);
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..4 * h {
                let a = da[r];
                if a == 0.0 {
                    continue;
                }
                gb[r] += a;
                let row_x = r * self.input;
                for j in 0..self.input {
                    gwx[row_x + j] += a * x[j];
                }
                let row_h = r * h;
                for j in 0..h {
                    gwh[row_h + j] += a * hprev[j];
                    dh_next[j] += a * self.wh[row_h + j];
                }
                if let Some(dx) = dx.as_deref_mut() {
                    let dxt = &mut dx[t * self.input..(t + 1) * self.input];
                    for j in 0..self.input {
                        dxt[j] += a * self.wx[row_x + j];
                    }
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    b.iter().enumerate().map(|(r, &bias)| bias + dot(&w[r * cols..(r + 1) * cols], x)).collect()
}

impl ScorerParams {
    fn encoder(&self) -> Lstm<'_> {
        Lstm {
            wx: self.tensor(Tensor::EncWx),
            wh: self.tensor(Tensor::EncWh),
            b: self.tensor(Tensor::EncB),
            input: self.config.input_dim,
            hidden: self.config.hidden,
        }
    }

    fn decoder(&self) -> Lstm<'_> {
        Lstm {
            wx: self.tensor(Tensor::DecWx),
            wh: self.tensor(Tensor::DecWh),
            b: self.tensor(Tensor::DecB),
            input: self.config.latent,
            hidden: self.config.hidden,
        }
    }
}

/// Posterior mean and log-variance for `window`.
pub fn encode(
    params: &ScorerParams,
    window: &SequenceWindow,
) -> Result<(Vec<f64>, Vec<f64>), ScorerError> {
    params.check_window(window)?;
    let trace = params.encoder().forward(window.timestep(), |t| window.row(t));
    let h_last = trace.h(window.timestep(), params.config.hidden);
    let mu = affine(params.tensor(Tensor::MuW), params.tensor(Tensor::MuB), h_last);
    let logvar = affine(params.tensor(Tensor::LogvarW), params.tensor(Tensor::LogvarB), h_last);
    Ok((mu, logvar))
}

/// z = mu + exp(logvar / 2) * noise.
pub fn reparameterize(mu: &[f64], logvar: &[f64], noise: &[f64]) -> Vec<f64> {
    assert!(mu.len() == logvar.len() && mu.len() == noise.len(), "latent shapes differ");
    mu.iter().zip(logvar).zip(noise).map(|((m, lv), n)| m + (0.5 * lv).exp() * n).collect()
}

/// Reconstructs `timestep` rows (row-major, T x D) from latent `z`.
pub fn decode(params: &ScorerParams, z: &[f64], timestep: usize) -> Result<Vec<f64>, ScorerError> {
    if z.len() != params.config.latent {
        return Err(ScorerError::ShapeMismatch {
            expected: format!("latent {}", params.config.latent),
            got: format!("latent {}", z.len()),
        });
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(ScorerError::NonFinite("latent"));
    }
    let trace = params.decoder().forward(timestep, |_| z);
    let (w, b) = (params.tensor(Tensor::OutW), params.tensor(Tensor::OutB));
    let h = params.config.hidden;
    Ok((1..=timestep).flat_map(|t| affine(w, b, trace.h(t, h))).collect())
}

/// Negative-ELBO decomposition of a window's loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

/// Gaussian KL divergence of N(mu, exp(logvar)) from N(0, I).
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    let s: f64 = mu.iter().zip(logvar).map(|(m, lv)| 1.0 + lv - m * m - lv.exp()).sum();
    // 1 + x - e^x <= 0 for all x, so clamp rounding noise only
    (-0.5 * s).max(0.0)
}

pub fn loss(
    params: &ScorerParams,
    window: &SequenceWindow,
    noise: &[f64],
) -> Result<LossValue, ScorerError> {
    forward_backward(params, window, noise, None)
}

/// Loss with noise = 0; the anomaly score.
pub fn score(params: &ScorerParams, window: &SequenceWindow) -> Result<f64, ScorerError> {
    let zero = vec![0.0; params.config.latent];
    Ok(loss(params, window, &zero)?.total)
}

/// Loss and, when `grad` is provided, its gradient w.r.t. every weight
/// (accumulated into `grad`, which must have `params.len()` entries).
pub fn loss_and_grad(
    params: &ScorerParams,
    window: &SequenceWindow,
    noise: &[f64],
    grad: &mut [f64],
) -> Result<LossValue, ScorerError> {
    assert_eq!(grad.len(), params.len(), "gradient buffer has wrong length");
    forward_backward(params, window, noise, Some(grad))
}

fn forward_backward(
    params: &ScorerParams,
    window: &SequenceWindow,
    noise: &[f64],
    grad: Option<&mut [f64]>,
) -> Result<LossValue, ScorerError> {
    params.check_window(window)?;
    let cfg = &params.config;
    let (t_len, d, h, l) = (cfg.timestep, cfg.input_dim, cfg.hidden, cfg.latent);
    if noise.len() != l {
        return Err(ScorerError::ShapeMismatch {
            expected: format!("noise {l}"),
            got: format!("noise {}", noise.len()),
        });
    }

    let enc = params.encoder();
    let enc_trace = enc.forward(t_len, |t| window.row(t));
    let h_enc = enc_trace.h(t_len, h);
    let (mu_w, mu_b) = (params.tensor(Tensor::MuW), params.tensor(Tensor::MuB));
    let (lv_w, lv_b) = (params.tensor(Tensor::LogvarW), params.tensor(Tensor::LogvarB));
    let mu = affine(mu_w, mu_b, h_enc);
    let logvar = affine(lv_w, lv_b, h_enc);
    let std: Vec<f64> = logvar.iter().map(|lv| (0.5 * lv).exp()).collect();
    let z: Vec<f64> = (0..l).map(|i| mu[i] + std[i] * noise[i]).collect();
    if z.iter().any(|v| !v.is_finite()) {
        return Err(ScorerError::NonFinite("latent"));
    }

    let dec = params.decoder();
    let dec_trace = dec.forward(t_len, |_| z.as_slice());
    let (out_w, out_b) = (params.tensor(Tensor::OutW), params.tensor(Tensor::OutB));
    let mut resid = vec![0.0; t_len * d];
    let mut recon = 0.0;
    for t in 0..t_len {
        let y = affine(out_w, out_b, dec_trace.h(t + 1, h));
        for (j, (yj, xj)) in y.iter().zip(window.row(t)).enumerate() {
            let r = yj - xj;
            resid[t * d + j] = r;
            recon += r * r;
        }
    }
    let kl = kl_divergence(&mu, &logvar);
    let total = recon + kl;
    if !total.is_finite() {
        return Err(ScorerError::NonFinite("loss"));
    }
    let value = LossValue { total, recon, kl };

    let Some(grad) = grad else {
        return Ok(value);
    };
    let layout = params.layout();

    // Output layer.
    let mut dh_dec = vec![0.0; t_len * h];
    {
        let r = layout.range(Tensor::OutW);
        let rb = layout.range(Tensor::OutB);
        for t in 0..t_len {
            let st = dec_trace.h(t + 1, h);
            for j in 0..d {
                let dy = 2.0 * resid[t * d + j];
                grad[rb.start + j] += dy;
                for k in 0..h {
                    grad[r.start + j * h + k] += dy * st[k];
                    dh_dec[t * h + k] += dy * out_w[j * h + k];
                }
            }
        }
    }

    // Decoder LSTM; its input is z at every step.
    let mut dz_steps = vec![0.0; t_len * l];
    {
        let (gwx, gwh, gb) = lstm_grads(grad, &layout, Tensor::DecWx, Tensor::DecWh, Tensor::DecB);
        dec.backward(&dec_trace, t_len, |_| z.as_slice(), &dh_dec, gwx, gwh, gb, Some(&mut dz_steps));
    }
    let mut dmu = vec![0.0; l];
    let mut dlv = vec![0.0; l];
    for i in 0..l {
        let dz: f64 = (0..t_len).map(|t| dz_steps[t * l + i]).sum();
        let e = logvar[i].exp();
        dmu[i] = dz + mu[i];
        dlv[i] = dz * noise[i] * 0.5 * std[i] + 0.5 * (e - 1.0);
    }

    // Latent projections.
    let mut dh_last = vec![0.0; h];
    for (wt, bt, w, dv) in [
        (Tensor::MuW, Tensor::MuB, mu_w, &dmu),
        (Tensor::LogvarW, Tensor::LogvarB, lv_w, &dlv),
    ] {
        let r = layout.range(wt);
        let rb = layout.range(bt);
        for i in 0..l {
            grad[rb.start + i] += dv[i];
            for k in 0..h {
                grad[r.start + i * h + k] += dv[i] * h_enc[k];
                dh_last[k] += dv[i] * w[i * h + k];
            }
        }
    }

    let mut dh_enc = vec![0.0; t_len * h];
    dh_enc[(t_len - 1) * h..].copy_from_slice(&dh_last);
    {
        let (gwx, gwh, gb) = lstm_grads(grad, &layout, Tensor::EncWx, Tensor::EncWh, Tensor::EncB);
        enc.backward(&enc_trace, t_len, |t| window.row(t), &dh_enc, gwx, gwh, gb, None);
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(ScorerError::NonFinite("gradient"));
    }
    Ok(value)
}

/// Disjoint mutable views of an LSTM's three gradient tensors, which are
/// stored contiguously in (wx, wh, b) order.
fn lstm_grads<'a>(
    grad: &'a mut [f64],
    layout: &Layout,
    wx: Tensor,
    wh: Tensor,
    b: Tensor,
) -> (&'a mut [f64], &'a mut [f64], &'a mut [f64]) {
    let (rx, rh, rb) = (layout.range(wx), layout.range(wh), layout.range(b));
    debug_assert!(rx.end == rh.start && rh.end == rb.start);
    let block = &mut grad[rx.start..rb.end];
    let (gx, rest) = block.split_at_mut(rx.len());
    let (gh, gb) = rest.split_at_mut(rh.len());
    (gx, gh, gb)
}

/// Per-epoch training summary (means over windows of the sampled loss).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_total: Vec<f64>,
    pub epoch_recon: Vec<f64>,
    pub epoch_kl: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, weights: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t);
        let bc2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..weights.len() {
            let g = grad[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            weights[i] -= self.lr * mhat / (vhat.sqrt() + Self::EPS);
        }
    }
}

/// Minibatch Adam on the mean negative ELBO, one latent sample per window.
///
/// Shuffling and latent noise come from `rng`, so a fixed generator state
/// gives bit-identical results. Per-window gradients are computed in
/// parallel and reduced in a fixed order. On error `params` is untouched.
pub fn train(
    params: &mut ScorerParams,
    windows: &[SequenceWindow],
    epochs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TrainReport, ScorerError> {
    if windows.is_empty() {
        return Err(ScorerError::EmptyTrainingSet);
    }
    for w in windows {
        params.check_window(w)?;
    }
    let mut work = params.clone();
    let n_params = work.len();
    let latent = work.config.latent;
    let batch = work.config.batch_size.max(1);
    let mut adam = Adam::new(n_params, work.config.learning_rate);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..windows.len()).collect();

    for _ in 0..epochs {
        order.shuffle(rng);
        let (mut tot, mut rec, mut kl) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(batch) {
            let noises: Vec<Vec<f64>> = chunk
                .iter()
                .map(|_| (0..latent).map(|_| rng.sample(StandardNormal)).collect())
                .collect();
            let snapshot = &work;
            let results: Vec<Result<(LossValue, Vec<f64>), ScorerError>> = chunk
                .par_iter()
                .zip(noises.par_iter())
                .map(|(&idx, noise)| {
                    let mut g = vec![0.0; n_params];
                    let v = loss_and_grad(snapshot, &windows[idx], noise, &mut g)?;
                    Ok((v, g))
                })
                .collect();
            let mut grad = vec![0.0; n_params];
            for r in results {
                let (v, g) = r?;
                tot += v.total;
                rec += v.recon;
                kl += v.kl;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut work.weights, &grad);
            if work.weights.iter().any(|w| !w.is_finite()) {
                return Err(ScorerError::NonFinite("weights"));
            }
        }
        let n = windows.len() as f64;
        report.epoch_total.push(tot / n);
        report.epoch_recon.push(rec / n);
        report.epoch_kl.push(kl / n);
    }
    *params = work;
    Ok(report)
}

/// Substitutable scoring model used by the engine.
pub trait Scorer: Send + Sync {
    fn timestep(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn score(&self, window: &SequenceWindow) -> Result<f64, ScorerError>;
    fn train(
        &mut self,
        windows: &[SequenceWindow],
        epochs: usize,
    ) -> Result<TrainReport, ScorerError>;
}

/// The LSTM-VAE scorer together with the generator that drives its training.
#[derive(Debug, Clone)]
pub struct LstmVae {
    pub params: ScorerParams,
    rng: ChaCha8Rng,
}

impl LstmVae {
    pub fn new(config: ScorerConfig) -> Self {
        let train_seed = config.seed ^ 0x005e_ed7a_110f_da7a;
        Self { params: init_scorer(config), rng: ChaCha8Rng::seed_from_u64(train_seed) }
    }

    pub fn from_params(params: ScorerParams) -> Self {
        let train_seed = params.config.seed ^ 0x005e_ed7a_110f_da7a;
        Self { params, rng: ChaCha8Rng::seed_from_u64(train_seed) }
    }
}

impl Scorer for LstmVae {
    fn timestep(&self) -> usize {
        self.params.config.timestep
    }

    fn input_dim(&self) -> usize {
        self.params.config.input_dim
    }

    fn score(&self, window: &SequenceWindow) -> Result<f64, ScorerError> {
        score(&self.params, window)
    }

    fn train(
        &mut self,
        windows: &[SequenceWindow],
        epochs: usize,
    ) -> Result<TrainReport, ScorerError> {
        train(&mut self.params, windows, epochs, &mut self.rng)
    }
}

// Checkpoint format (JSON, version 1):
//
// {
//   "format": "anomstream-lstm-vae",
//   "version": 1,
//   "config": { timestep, input_dim, hidden, latent, learning_rate, batch_size, seed },
//   "tensors": [ { "name": "enc_wx", "shape": [rows, cols], "data": [...] }, ... ]
// }
//
// Tensors appear in storage order; data is row-major. Floats are written with
// shortest round-trip formatting, so a load reproduces every bit.

const CHECKPOINT_FORMAT: &str = "anomstream-lstm-vae";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorDump {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDump {
    format: String,
    version: u32,
    config: ScorerConfig,
    tensors: Vec<TensorDump>,
}

impl ScorerParams {
    pub fn to_json(&self) -> String {
        let tensors = Tensor::ALL
            .iter()
            .map(|&t| {
                let (r, c) = t.shape(&self.config);
                TensorDump { name: t.name().into(), shape: [r, c], data: self.tensor(t).to_vec() }
            })
            .collect();
        let dump = CheckpointDump {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            tensors,
        };
        serde_json::to_string(&dump).expect("checkpoint serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, ScorerError> {
        let dump: CheckpointDump =
            serde_json::from_str(s).map_err(|e| ScorerError::Format(e.to_string()))?;
        if dump.format != CHECKPOINT_FORMAT || dump.version != CHECKPOINT_VERSION {
            return Err(ScorerError::Format(format!(
                "unsupported checkpoint {} v{}",
                dump.format, dump.version
            )));
        }
        let mut params = ScorerParams::zeros(dump.config);
        if dump.tensors.len() != Tensor::ALL.len() {
            return Err(ScorerError::Format("wrong tensor count".into()));
        }
        for (t, d) in Tensor::ALL.iter().zip(&dump.tensors) {
            let (r, c) = t.shape(&params.config);
            if d.name != t.name() || d.shape != [r, c] || d.data.len() != r * c {
                return Err(ScorerError::Format(format!("tensor {} has wrong name or shape", d.name)));
            }
            params.tensor_mut(*t).copy_from_slice(&d.data);
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<(), ScorerError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ScorerError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
