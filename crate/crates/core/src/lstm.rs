//! Stacked LSTM forecaster for modal coefficients, written from scratch.
//!
//! A window of `sigma` consecutive coefficient vectors runs through a stack
//! of LSTM layers (states reset for every window), and a linear head maps
//! the top layer's last hidden state to the next coefficient vector.
//! Training uses mini-batch Adam on the mean-squared error with exact
//! backpropagation through time.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fom::DIVERGENCE_THRESHOLD;
use crate::gp::{Provenance, RomTrajectory};

pub const DEFAULT_HIDDEN: usize = 40;
pub const DEFAULT_LAYERS: usize = 6;
/// Offset added to the forget-gate bias at initialization.
pub const FORGET_BIAS: f64 = 1.0;

/// Per-mode min/max normalization onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Scaler {
    /// Fits on time-major states (`states[n][k]`).
    pub fn fit(states: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = states.first() else {
            return Err(Error::InsufficientData("cannot fit a scaler on an empty series".into()));
        };
        let r = first.len();
        let mut min = vec![f64::INFINITY; r];
        let mut max = vec![f64::NEG_INFINITY; r];
        for s in states {
            if s.len() != r {
                return Err(Error::Dimension("ragged coefficient series".into()));
            }
            for k in 0..r {
                min[k] = min[k].min(s[k]);
                max[k] = max[k].max(s[k]);
            }
        }
        for k in 0..r {
            if !min[k].is_finite() || !max[k].is_finite() {
                return Err(Error::NonFinite("training series"));
            }
            if max[k] <= min[k] {
                return Err(Error::DegenerateScale { mode: k });
            }
        }
        Ok(Self { min, max })
    }

    pub fn r(&self) -> usize {
        self.min.len()
    }

    pub fn apply(&self, state: &[f64]) -> Vec<f64> {
        state
            .iter()
            .enumerate()
            .map(|(k, v)| 2.0 * (v - self.min[k]) / (self.max[k] - self.min[k]) - 1.0)
            .collect()
    }

    pub fn invert(&self, scaled: &[f64]) -> Vec<f64> {
        scaled
            .iter()
            .enumerate()
            .map(|(k, v)| self.min[k] + 0.5 * (v + 1.0) * (self.max[k] - self.min[k]))
            .collect()
    }
}

/// Sliding windows over a time-major series.
#[derive(Debug, Clone, PartialEq)]
pub struct Windows {
    /// `inputs[m][s]` is the state at time `m + s`.
    pub inputs: Vec<Vec<Vec<f64>>>,
    /// `targets[m]` is the state at time `m + sigma`.
    pub targets: Vec<Vec<f64>>,
}

impl Windows {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

pub fn make_windows(series: &[Vec<f64>], sigma: usize) -> Result<Windows> {
    if sigma == 0 {
        return Err(Error::Config("lookback window must be at least 1".into()));
    }
    if series.len() <= sigma {
        return Err(Error::InsufficientData(format!(
            "{} states cannot form a window of {sigma} plus a target",
            series.len()
        )));
    }
    let n = series.len() - sigma;
    Ok(Windows {
        inputs: (0..n).map(|m| series[m..m + sigma].to_vec()).collect(),
        targets: (0..n).map(|m| series[m + sigma].clone()).collect(),
    })
}

/// Shapes of the network and where each block lives in the flat parameter
/// vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
    pub output: usize,
    /// `(weight offset, bias offset)` per layer; weights are `4H x (in + H)`.
    offsets: Vec<(usize, usize)>,
    head: (usize, usize),
    n_params: usize,
}

impl Architecture {
    pub fn new(input: usize, hidden: usize, layers: usize, output: usize) -> Result<Self> {
        if input == 0 || hidden == 0 || layers == 0 || output == 0 {
            return Err(Error::Config(format!(
                "network sizes must be positive (input {input}, hidden {hidden}, layers {layers}, output {output})"
            )));
        }
        let mut offsets = Vec::with_capacity(layers);
        let mut at = 0;
        for l in 0..layers {
            let width = if l == 0 { input } else { hidden } + hidden;
            let w = at;
            at += 4 * hidden * width;
            offsets.push((w, at));
            at += 4 * hidden;
        }
        let head = (at, at + output * hidden);
        at += output * hidden + output;
        Ok(Self {
            input,
            hidden,
            layers,
            output,
            offsets,
            head,
            n_params: at,
        })
    }

    /// The network used for modal forecasting: 6 layers of 40 units.
    pub fn standard(r: usize) -> Result<Self> {
        Self::new(r, DEFAULT_HIDDEN, DEFAULT_LAYERS, r)
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn layer_input(&self, l: usize) -> usize {
        if l == 0 {
            self.input
        } else {
            self.hidden
        }
    }

    /// Offsets of layer `l`'s weight block and bias vector.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        self.offsets[l]
    }

    /// Offsets of the head's weight block (`output x hidden`) and bias.
    pub fn head_offsets(&self) -> (usize, usize) {
        self.head
    }
}

/// Gate blocks within a layer's pre-activation vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Candidate = 2,
    Output = 3,
}

/// Borrowed view of one layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LstmLayerParams<'a> {
    pub input: usize,
    pub hidden: usize,
    /// `4H x (input + H)`, row-major; columns are `[x ; h_prev]`.
    pub weights: &'a [f64],
    pub bias: &'a [f64],
}

impl LstmLayerParams<'_> {
    fn width(&self) -> usize {
        self.input + self.hidden
    }

    /// Input-to-gate weight from input `col` to unit `unit` of `gate`.
    pub fn w_input(&self, gate: Gate, unit: usize, col: usize) -> f64 {
        self.weights[(gate as usize * self.hidden + unit) * self.width() + col]
    }

    /// Hidden-to-gate weight from hidden unit `col` to unit `unit` of `gate`.
    pub fn w_hidden(&self, gate: Gate, unit: usize, col: usize) -> f64 {
        self.weights[(gate as usize * self.hidden + unit) * self.width() + self.input + col]
    }

    pub fn b(&self, gate: Gate, unit: usize) -> f64 {
        self.bias[gate as usize * self.hidden + unit]
    }
}

#[inline]
fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Computes activated gates `[i, f, g, o]` for the concatenated input `xh`.
fn gates_into(p: &LstmLayerParams, xh: &[f64], gates: &mut [f64]) {
    let width = p.width();
    let h = p.hidden;
    for (r, (row, out)) in p.weights.chunks_exact(width).zip(gates.iter_mut()).enumerate() {
        let z = p.bias[r] + row.iter().zip(xh).map(|(w, x)| w * x).sum::<f64>();
        *out = if r / h == Gate::Candidate as usize {
            z.tanh()
        } else {
            logistic(z)
        };
    }
}

/// One LSTM cell update.
pub fn cell_forward(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    params: &LstmLayerParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = params.hidden;
    if x.len() != params.input || h_prev.len() != h || c_prev.len() != h {
        return Err(Error::Dimension(format!(
            "cell expects input {} and state {h}, got {}, {}, {}",
            params.input,
            x.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    let mut xh = x.to_vec();
    xh.extend_from_slice(h_prev);
    let mut g = vec![0.0; 4 * h];
    gates_into(params, &xh, &mut g);
    let mut h_out = vec![0.0; h];
    let mut c_out = vec![0.0; h];
    for u in 0..h {
        c_out[u] = g[h + u] * c_prev[u] + g[u] * g[2 * h + u];
        h_out[u] = g[3 * h + u] * c_out[u].tanh();
    }
    Ok((h_out, c_out))
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub shuffle: bool,
    pub hidden: usize,
    pub layers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 16,
            validation_fraction: 0.2,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            shuffle: true,
            hidden: DEFAULT_HIDDEN,
            layers: DEFAULT_LAYERS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(self.epsilon > 0.0) {
            return bad("Adam epsilon must be positive".into());
        }
        if self.hidden == 0 || self.layers == 0 {
            return bad("hidden width and layer count must be positive".into());
        }
        Ok(())
    }
}

/// Per-epoch losses in normalized units.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

/// A trained (or freshly initialized) forecaster.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub arch: Architecture,
    pub params: Vec<f64>,
    pub scaler: Scaler,
    pub sigma: usize,
    pub seed: u64,
    pub adam: AdamState,
}

impl LstmModel {
    /// Glorot-uniform weights, zero biases except the forget gate.
    pub fn init(arch: Architecture, scaler: Scaler, sigma: usize, seed: u64) -> Result<Self> {
        if sigma == 0 {
            return Err(Error::Config("lookback window must be at least 1".into()));
        }
        if scaler.r() != arch.input || arch.output != arch.input {
            return Err(Error::Dimension(format!(
                "scaler covers {} modes but the network maps {} to {}",
                scaler.r(),
                arch.input,
                arch.output
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; arch.n_params()];
        let h = arch.hidden;
        for l in 0..arch.layers {
            let input = arch.layer_input(l);
            let (w, b) = arch.layer_offsets(l);
            let width = input + h;
            let lim_x = (6.0 / (input + 4 * h) as f64).sqrt();
            let lim_h = (6.0 / (h + 4 * h) as f64).sqrt();
            for r in 0..4 * h {
                for c in 0..width {
                    let lim = if c < input { lim_x } else { lim_h };
                    params[w + r * width + c] = rng.gen_range(-lim..lim);
                }
            }
            for u in 0..h {
                params[b + Gate::Forget as usize * h + u] = FORGET_BIAS;
            }
        }
        let (hw, _) = arch.head_offsets();
        let lim = (6.0 / (h + arch.output) as f64).sqrt();
        for p in &mut params[hw..hw + arch.output * h] {
            *p = rng.gen_range(-lim..lim);
        }
        let n = arch.n_params();
        Ok(Self {
            arch,
            params,
            scaler,
            sigma,
            seed,
            adam: AdamState::new(n),
        })
    }

    pub fn r(&self) -> usize {
        self.arch.output
    }

    pub fn layer(&self, l: usize) -> LstmLayerParams<'_> {
        let (w, b) = self.arch.layer_offsets(l);
        let h = self.arch.hidden;
        LstmLayerParams {
            input: self.arch.layer_input(l),
            hidden: h,
            weights: &self.params[w..b],
            bias: &self.params[b..b + 4 * h],
        }
    }

    /// Head weight block (`output x hidden`) and bias.
    pub fn head(&self) -> (&[f64], &[f64]) {
        let (w, b) = self.arch.head_offsets();
        (&self.params[w..b], &self.params[b..b + self.arch.output])
    }
}

/// Activations of one window kept for the backward pass.
struct Tape {
    sigma: usize,
    /// Per layer: `sigma x width` concatenated inputs.
    xh: Vec<Vec<f64>>,
    /// Per layer: `sigma x 4H` activated gates.
    gates: Vec<Vec<f64>>,
    /// Per layer: `(sigma + 1) x H` cell states, the first row zero.
    c: Vec<Vec<f64>>,
    /// Per layer: `sigma x H` hidden outputs.
    h: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Tape {
    fn new(arch: &Architecture, sigma: usize) -> Self {
        let hd = arch.hidden;
        let per = |f: &dyn Fn(usize) -> usize| (0..arch.layers).map(|l| vec![0.0; f(l)]).collect();
        Self {
            sigma,
            xh: per(&|l| sigma * (arch.layer_input(l) + hd)),
            gates: per(&|_| sigma * 4 * hd),
            c: per(&|_| (sigma + 1) * hd),
            h: per(&|_| sigma * hd),
            output: vec![0.0; arch.output],
        }
    }
}

fn forward_tape(model: &LstmModel, window: &[Vec<f64>], tape: &mut Tape) {
    let arch = &model.arch;
    let hd = arch.hidden;
    let sigma = tape.sigma;
    for l in 0..arch.layers {
        let p = model.layer(l);
        let width = p.width();
        let input = p.input;
        for t in 0..sigma {
            {
                let (below, here) = tape.h.split_at_mut(l);
                let xh = &mut tape.xh[l][t * width..(t + 1) * width];
                if l == 0 {
                    xh[..input].copy_from_slice(&window[t]);
                } else {
                    xh[..input].copy_from_slice(&below[l - 1][t * hd..(t + 1) * hd]);
                }
                if t == 0 {
                    xh[input..].fill(0.0);
                } else {
                    xh[input..].copy_from_slice(&here[0][(t - 1) * hd..t * hd]);
                }
            }
            let g = &mut tape.gates[l][t * 4 * hd..(t + 1) * 4 * hd];
            gates_into(&p, &tape.xh[l][t * width..(t + 1) * width], g);
            let c = &mut tape.c[l];
            let hs = &mut tape.h[l];
            for u in 0..hd {
                let cn = g[hd + u] * c[t * hd + u] + g[u] * g[2 * hd + u];
                c[(t + 1) * hd + u] = cn;
                hs[t * hd + u] = g[3 * hd + u] * cn.tanh();
            }
        }
    }
    let (hw, hb) = model.head();
    let top = &tape.h[arch.layers - 1][(sigma - 1) * hd..sigma * hd];
    for (k, out) in tape.output.iter_mut().enumerate() {
        *out = hb[k] + hw[k * hd..(k + 1) * hd].iter().zip(top).map(|(w, h)| w * h).sum::<f64>();
    }
}

fn check_window(model: &LstmModel, window: &[Vec<f64>]) -> Result<()> {
    if window.len() != model.sigma {
        return Err(Error::Dimension(format!(
            "window of {} states for lookback {}",
            window.len(),
            model.sigma
        )));
    }
    if window.iter().any(|s| s.len() != model.arch.input) {
        return Err(Error::Dimension(format!(
            "window states must have {} components",
            model.arch.input
        )));
    }
    Ok(())
}

/// Prediction for one normalized window of `sigma` states.
pub fn network_forward(window: &[Vec<f64>], model: &LstmModel) -> Result<Vec<f64>> {
    check_window(model, window)?;
    let mut tape = Tape::new(&model.arch, model.sigma);
    forward_tape(model, window, &mut tape);
    Ok(tape.output)
}

/// Accumulates `d loss / d params` for one sample into `grad` given
/// `d loss / d output`.
fn backward_tape(model: &LstmModel, tape: &Tape, d_out: &[f64], grad: &mut [f64]) {
    let arch = &model.arch;
    let hd = arch.hidden;
    let sigma = tape.sigma;
    let top = arch.layers - 1;

    // Head.
    let (hw_off, hb_off) = arch.head_offsets();
    let (hw, _) = model.head();
    let h_last = &tape.h[top][(sigma - 1) * hd..sigma * hd];
    let mut dh_in = vec![0.0; sigma * hd];
    for k in 0..arch.output {
        let d = d_out[k];
        grad[hb_off + k] += d;
        let row = &mut grad[hw_off + k * hd..hw_off + (k + 1) * hd];
        for (g, h) in row.iter_mut().zip(h_last) {
            *g += d * h;
        }
        for (u, w) in hw[k * hd..(k + 1) * hd].iter().enumerate() {
            dh_in[(sigma - 1) * hd + u] += d * w;
        }
    }

    let mut dz = vec![0.0; 4 * hd];
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];
    for l in (0..arch.layers).rev() {
        let p = model.layer(l);
        let width = p.width();
        let input = p.input;
        let (w_off, b_off) = arch.layer_offsets(l);
        let mut dx_below = if l > 0 { vec![0.0; sigma * input] } else { Vec::new() };
        dh_next.fill(0.0);
        dc_next.fill(0.0);
        let mut dxh = vec![0.0; width];
        for t in (0..sigma).rev() {
            let g = &tape.gates[l][t * 4 * hd..(t + 1) * 4 * hd];
            let c_prev = &tape.c[l][t * hd..(t + 1) * hd];
            let c = &tape.c[l][(t + 1) * hd..(t + 2) * hd];
            for u in 0..hd {
                let (gi, gf, gg, go) = (g[u], g[hd + u], g[2 * hd + u], g[3 * hd + u]);
                let tc = c[u].tanh();
                let dh = dh_in[t * hd + u] + dh_next[u];
                let dc = dh * go * (1.0 - tc * tc) + dc_next[u];
                dz[u] = dc * gg * gi * (1.0 - gi);
                dz[hd + u] = dc * c_prev[u] * gf * (1.0 - gf);
                dz[2 * hd + u] = dc * gi * (1.0 - gg * gg);
                dz[3 * hd + u] = dh * tc * go * (1.0 - go);
                dc_next[u] = dc * gf;
            }
            let xh = &tape.xh[l][t * width..(t + 1) * width];
            let gw = &mut grad[w_off..w_off + 4 * hd * width];
            dxh.fill(0.0);
            for r in 0..4 * hd {
                let d = dz[r];
                grad_row_update(&mut gw[r * width..(r + 1) * width], xh, d);
                let wrow = &p.weights[r * width..(r + 1) * width];
                for (acc, w) in dxh.iter_mut().zip(wrow) {
                    *acc += w * d;
                }
            }
            for (gb, d) in grad[b_off..b_off + 4 * hd].iter_mut().zip(&dz) {
                *gb += d;
            }
            if l > 0 {
                dx_below[t * input..(t + 1) * input].copy_from_slice(&dxh[..input]);
            }
            dh_next.copy_from_slice(&dxh[input..]);
        }
        if l > 0 {
            dh_in = dx_below;
        }
    }
}

#[inline]
fn grad_row_update(row: &mut [f64], xh: &[f64], d: f64) {
    for (g, x) in row.iter_mut().zip(xh) {
        *g += d * x;
    }
}

/// Mean-squared error over the selected samples and all modes, with its
/// exact gradient with respect to every parameter.
pub fn loss_and_gradients(
    model: &LstmModel,
    windows: &Windows,
    batch: &[usize],
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    let r = model.r();
    let scale = 1.0 / (batch.len() * r) as f64;
    let mut tape = Tape::new(&model.arch, model.sigma);
    let mut grad = vec![0.0; model.arch.n_params()];
    let mut loss = 0.0;
    let mut d_out = vec![0.0; r];
    for &m in batch {
        let window = windows
            .inputs
            .get(m)
            .ok_or_else(|| Error::Dimension(format!("sample {m} out of range")))?;
        check_window(model, window)?;
        let target = &windows.targets[m];
        if target.len() != r {
            return Err(Error::Dimension("target width differs from model output".into()));
        }
        forward_tape(model, window, &mut tape);
        for k in 0..r {
            let e = tape.output[k] - target[k];
            loss += e * e;
            d_out[k] = 2.0 * e * scale;
        }
        backward_tape(model, &tape, &d_out, &mut grad);
    }
    Ok((loss * scale, grad))
}

fn mse(model: &LstmModel, windows: &Windows, samples: &[usize]) -> f64 {
    let mut tape = Tape::new(&model.arch, model.sigma);
    let mut acc = 0.0;
    for &m in samples {
        forward_tape(model, &windows.inputs[m], &mut tape);
        acc += tape
            .output
            .iter()
            .zip(&windows.targets[m])
            .map(|(p, t)| (p - t).powi(2))
            .sum::<f64>();
    }
    acc / (samples.len() * model.r()) as f64
}

/// One bias-corrected Adam update.
pub fn adam_step(model: &mut LstmModel, grads: &[f64], cfg: &TrainConfig) -> Result<()> {
    if grads.len() != model.params.len() {
        return Err(Error::Dimension(format!(
            "{} gradients for {} parameters",
            grads.len(),
            model.params.len()
        )));
    }
    let st = &mut model.adam;
    st.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(st.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(st.step as i32);
    for (((p, g), m), v) in model
        .params
        .iter_mut()
        .zip(grads)
        .zip(st.m.iter_mut())
        .zip(st.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// Fits the scaler, windows the normalized series, holds out the tail for
/// validation and runs mini-batch Adam.
///
/// `series` is time-major: `series[n]` is the coefficient vector at sample
/// `n`.
pub fn train(series: &[Vec<f64>], sigma: usize, cfg: &TrainConfig) -> Result<(LstmModel, TrainHistory)> {
    cfg.validate()?;
    let scaler = Scaler::fit(series)?;
    let r = scaler.r();
    let arch = Architecture::new(r, cfg.hidden, cfg.layers, r)?;
    let mut model = LstmModel::init(arch, scaler, sigma, cfg.seed)?;
    let scaled: Vec<Vec<f64>> = series.iter().map(|s| model.scaler.apply(s)).collect();
    let windows = make_windows(&scaled, sigma)?;
    let n = windows.len();
    let n_val = ((n as f64 * cfg.validation_fraction).round() as usize).max(1);
    if n_val >= n {
        return Err(Error::InsufficientData(format!(
            "{n} samples leave nothing to train on after holding out {n_val} for validation"
        )));
    }
    let n_train = n - n_val;
    let val: Vec<usize> = (n_train..n).collect();
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut history = TrainHistory::default();
    for _ in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = loss_and_gradients(&model, &windows, batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            adam_step(&mut model, &grads, cfg)?;
            epoch_loss += loss * batch.len() as f64;
        }
        history.train_loss.push(epoch_loss / n_train as f64);
        history.val_loss.push(mse(&model, &windows, &val));
    }
    Ok((model, history))
}

/// Closed-loop forecast: starting from `sigma` raw seed states, predicts
/// `n_steps` further states, each fed back as input to the next step.
pub fn predict_recursive(model: &LstmModel, seed: &[Vec<f64>], n_steps: usize) -> Result<Vec<Vec<f64>>> {
    if seed.len() != model.sigma {
        return Err(Error::Dimension(format!(
            "{} seed states for lookback {}",
            seed.len(),
            model.sigma
        )));
    }
    let mut window: Vec<Vec<f64>> = seed.iter().map(|s| model.scaler.apply(s)).collect();
    check_window(model, &window)?;
    let mut tape = Tape::new(&model.arch, model.sigma);
    let mut out = Vec::with_capacity(n_steps);
    for step in 0..n_steps {
        forward_tape(model, &window, &mut tape);
        let next = tape.output.clone();
        let raw = model.scaler.invert(&next);
        let max = raw.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if !(max <= DIVERGENCE_THRESHOLD) {
            return Err(Error::Divergence {
                time: (step + 1) as f64,
                max_abs: max,
            });
        }
        out.push(raw);
        window.remove(0);
        window.push(next);
    }
    Ok(out)
}

/// Forecast trajectory on the uniform grid `t0 + n * dt`, `n = 0..=n_after`.
/// The first `sigma` states are the seeds themselves; the rest are
/// predicted.
pub fn rollout(
    model: &LstmModel,
    seed: &[Vec<f64>],
    t0: f64,
    dt: f64,
    n_after: usize,
) -> Result<RomTrajectory> {
    if n_after + 1 < model.sigma {
        return Err(Error::InsufficientData(format!(
            "{} states cannot hold a seed window of {}",
            n_after + 1,
            model.sigma
        )));
    }
    let predicted = predict_recursive(model, seed, n_after + 1 - model.sigma)?;
    let states: Vec<Vec<f64>> = seed.iter().cloned().chain(predicted).collect();
    let times = (0..=n_after).map(|n| t0 + n as f64 * dt).collect();
    RomTrajectory::new(times, states, Provenance::Lstm { sigma: model.sigma })
}
