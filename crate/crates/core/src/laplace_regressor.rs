//! Curvature to angle regression with a per-sample Laplace uncertainty.
//!
//! A 1→16→16→2 fully connected network. Each hidden layer is
//! `Dense → ReLU → BatchNorm`; the head emits `(μ raw, s raw)` and the
//! variance-like scale is `σ² = softplus(s raw)`. Training minimises the mean
//! Laplace negative log-likelihood `ln(2σ²) + |y − μ|/σ²` with Adam.
//!
//! Inputs are shifted by −1 so that a straight spine (κ = 1) maps to 0.
//! Targets are standardised with constants fitted on the training set; the
//! head is read back as `μ = mean + scale·raw` and `σ² = scale·softplus(s)`,
//! which keeps the loss identical up to the constant `ln scale`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpineError};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const HIDDEN_WIDTH: usize = 16;
pub const BATCHNORM_MOMENTUM: f64 = 0.1;
pub const BATCHNORM_EPSILON: f64 = 1e-5;

/// Per-sample Laplace negative log-likelihood with σ² as the scale.
pub fn laplace_nll(mu: f64, sigma2: f64, y: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(SpineError::Domain(format!("sigma2 must be positive, got {sigma2}")));
    }
    Ok((2.0 * sigma2).ln() + (y - mu).abs() / sigma2)
}

fn softplus(s: f64) -> f64 {
    let v = if s > 30.0 { s } else { s.exp().ln_1p() };
    v.max(f64::MIN_POSITIVE)
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Subgradient of |r| with 0 at the kink.
fn sign(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major, `out_dim × in_dim`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
        }
    }

    /// Weights uniform in ±sqrt(6/fan_in), biases zero.
    fn he_uniform(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let w = (6.0 / in_dim as f64).sqrt();
        Dense {
            in_dim,
            out_dim,
            weights: (0..in_dim * out_dim).map(|_| rng.random_range(-w..=w)).collect(),
            biases: vec![0.0; out_dim],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            out.push(self.biases[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNorm {
    fn identity(dim: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: BATCHNORM_MOMENTUM,
            epsilon: BATCHNORM_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub dense: Dense,
    pub norm: BatchNorm,
}

/// Affine map between standardised and physical target units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaling {
    pub mean: f64,
    pub scale: f64,
}

impl TargetScaling {
    pub const IDENTITY: TargetScaling = TargetScaling { mean: 0.0, scale: 1.0 };

    fn fit(ys: &[f64]) -> Self {
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let sd = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
        TargetScaling {
            mean,
            scale: if sd > 1e-12 { sd } else { 1.0 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in every batch-norm layer.
    Train,
    /// Running statistics; deterministic per sample.
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorModel {
    pub format_version: u32,
    /// Layer widths from input to output.
    pub dims: Vec<usize>,
    /// Subtracted from κ before the first layer.
    pub input_shift: f64,
    pub target: TargetScaling,
    pub hidden: Vec<HiddenLayer>,
    pub head: Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub kappa: f64,
    pub angle_deg: f64,
}

impl LabeledSample {
    pub fn new(kappa: f64, angle_deg: f64) -> Self {
        LabeledSample { kappa, angle_deg }
    }
}

/// Gradients laid out like the model, for the mean loss over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden: Vec<HiddenGradients>,
    pub head_weights: Vec<f64>,
    pub head_biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenGradients {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Gradients {
    /// Same order as [`RegressorModel::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for h in &self.hidden {
            out.extend_from_slice(&h.weights);
            out.extend_from_slice(&h.biases);
            out.extend_from_slice(&h.gamma);
            out.extend_from_slice(&h.beta);
        }
        out.extend_from_slice(&self.head_weights);
        out.extend_from_slice(&self.head_biases);
        out
    }
}

/// Everything the backward pass needs from a train-mode forward pass.
struct Trace {
    /// Per hidden layer: the layer input, pre-activations, normalised
    /// activations and inverse std, each indexed by sample.
    inputs: Vec<Vec<Vec<f64>>>,
    pre: Vec<Vec<Vec<f64>>>,
    xhat: Vec<Vec<Vec<f64>>>,
    inv_std: Vec<Vec<f64>>,
    batch_mean: Vec<Vec<f64>>,
    batch_var: Vec<Vec<f64>>,
    head_in: Vec<Vec<f64>>,
    head_out: Vec<[f64; 2]>,
}

impl RegressorModel {
    /// Zero weights, identity batch-norm and identity target scaling.
    pub fn zeros() -> Self {
        let dims = vec![1, HIDDEN_WIDTH, HIDDEN_WIDTH, 2];
        let hidden = dims
            .windows(2)
            .take(2)
            .map(|w| HiddenLayer {
                dense: Dense::zeros(w[0], w[1]),
                norm: BatchNorm::identity(w[1]),
            })
            .collect();
        RegressorModel {
            format_version: MODEL_FORMAT_VERSION,
            input_shift: 1.0,
            target: TargetScaling::IDENTITY,
            hidden,
            head: Dense::zeros(HIDDEN_WIDTH, 2),
            dims,
        }
    }

    /// He-style uniform hidden weights, zero biases and a zero head, so
    /// training starts from `μ = target mean`.
    ///
    /// With random biases some ReLU kinks land near the edge of the data and
    /// their units fire on a handful of samples per batch; batch-norm then
    /// amplifies those units and the fit stalls.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::random_with(&mut rng)
    }

    fn random_with(rng: &mut impl Rng) -> Self {
        let mut m = Self::zeros();
        for layer in &mut m.hidden {
            layer.dense = Dense::he_uniform(layer.dense.in_dim, layer.dense.out_dim, rng);
        }
        m
    }

    /// All trainable parameters, flattened.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for h in &self.hidden {
            out.extend_from_slice(&h.dense.weights);
            out.extend_from_slice(&h.dense.biases);
            out.extend_from_slice(&h.norm.gamma);
            out.extend_from_slice(&h.norm.beta);
        }
        out.extend_from_slice(&self.head.weights);
        out.extend_from_slice(&self.head.biases);
        out
    }

    pub fn set_parameters(&mut self, values: &[f64]) {
        let mut it = values.iter().copied();
        let mut fill = |dst: &mut Vec<f64>| dst.iter_mut().for_each(|d| *d = it.next().expect("parameter count"));
        for h in &mut self.hidden {
            fill(&mut h.dense.weights);
            fill(&mut h.dense.biases);
            fill(&mut h.norm.gamma);
            fill(&mut h.norm.beta);
        }
        fill(&mut self.head.weights);
        fill(&mut self.head.biases);
    }

    fn to_outputs(&self, head: [f64; 2]) -> (f64, f64) {
        let t = self.target;
        (t.mean + t.scale * head[0], t.scale * softplus(head[1]))
    }

    fn eval_one(&self, kappa: f64) -> Result<(f64, f64)> {
        let mut x = vec![kappa - self.input_shift];
        let mut z = Vec::with_capacity(HIDDEN_WIDTH);
        for (li, layer) in self.hidden.iter().enumerate() {
            layer.dense.apply(&x, &mut z);
            let n = &layer.norm;
            x = z
                .iter()
                .enumerate()
                .map(|(j, &v)| {
                    let a = v.max(0.0);
                    n.gamma[j] * (a - n.running_mean[j]) / (n.running_var[j] + n.epsilon).sqrt() + n.beta[j]
                })
                .collect();
            if x.iter().any(|v| !v.is_finite()) {
                return Err(SpineError::Numeric { layer: li });
            }
        }
        self.head.apply(&x, &mut z);
        let out = self.to_outputs([z[0], z[1]]);
        if !out.0.is_finite() || !out.1.is_finite() {
            return Err(SpineError::Numeric {
                layer: self.hidden.len(),
            });
        }
        Ok(out)
    }

    fn trace(&self, kappas: &[f64]) -> Result<Trace> {
        let n = kappas.len();
        let mut t = Trace {
            inputs: Vec::new(),
            pre: Vec::new(),
            xhat: Vec::new(),
            inv_std: Vec::new(),
            batch_mean: Vec::new(),
            batch_var: Vec::new(),
            head_in: Vec::new(),
            head_out: Vec::new(),
        };
        let mut xs: Vec<Vec<f64>> = kappas.iter().map(|k| vec![k - self.input_shift]).collect();
        for (li, layer) in self.hidden.iter().enumerate() {
            let width = layer.dense.out_dim;
            let pre: Vec<Vec<f64>> = xs
                .iter()
                .map(|x| {
                    let mut z = Vec::with_capacity(width);
                    layer.dense.apply(x, &mut z);
                    z
                })
                .collect();
            let mut mean = vec![0.0; width];
            let mut var = vec![0.0; width];
            for z in &pre {
                for j in 0..width {
                    mean[j] += z[j].max(0.0) / n as f64;
                }
            }
            for z in &pre {
                for j in 0..width {
                    var[j] += (z[j].max(0.0) - mean[j]).powi(2) / n as f64;
                }
            }
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + layer.norm.epsilon).sqrt()).collect();
            let xhat: Vec<Vec<f64>> = pre
                .iter()
                .map(|z| (0..width).map(|j| (z[j].max(0.0) - mean[j]) * inv_std[j]).collect())
                .collect();
            let next: Vec<Vec<f64>> = xhat
                .iter()
                .map(|h| {
                    (0..width)
                        .map(|j| layer.norm.gamma[j] * h[j] + layer.norm.beta[j])
                        .collect()
                })
                .collect();
            if next.iter().flatten().any(|v| !v.is_finite()) {
                return Err(SpineError::Numeric { layer: li });
            }
            t.inputs.push(std::mem::replace(&mut xs, next));
            t.pre.push(pre);
            t.xhat.push(xhat);
            t.inv_std.push(inv_std);
            t.batch_mean.push(mean);
            t.batch_var.push(var);
        }
        let mut z = Vec::with_capacity(2);
        for x in &xs {
            self.head.apply(x, &mut z);
            if !z[0].is_finite() || !z[1].is_finite() {
                return Err(SpineError::Numeric {
                    layer: self.hidden.len(),
                });
            }
            t.head_out.push([z[0], z[1]]);
        }
        t.head_in = xs;
        Ok(t)
    }

    /// `(μ, σ²)` per input. Train mode normalises with the statistics of
    /// `kappas` as one batch and leaves the running statistics untouched.
    pub fn forward(&self, kappas: &[f64], mode: Mode) -> Result<Vec<(f64, f64)>> {
        if let Some(k) = kappas.iter().find(|k| !k.is_finite()) {
            return Err(SpineError::Domain(format!("non-finite input {k}")));
        }
        match mode {
            Mode::Eval => kappas.iter().map(|&k| self.eval_one(k)).collect(),
            Mode::Train => {
                if kappas.is_empty() {
                    return Ok(Vec::new());
                }
                let t = self.trace(kappas)?;
                Ok(t.head_out.iter().map(|&h| self.to_outputs(h)).collect())
            }
        }
    }

    /// Mean Laplace NLL of a batch under the given mode.
    pub fn loss(&self, batch: &[LabeledSample], mode: Mode) -> Result<f64> {
        let kappas: Vec<f64> = batch.iter().map(|s| s.kappa).collect();
        let out = self.forward(&kappas, mode)?;
        let mut total = 0.0;
        for ((mu, s2), s) in out.into_iter().zip(batch) {
            total += laplace_nll(mu, s2, s.angle_deg)?;
        }
        Ok(total / batch.len() as f64)
    }

    /// Exact gradients of the train-mode mean loss over `batch`.
    pub fn backward(&self, batch: &[LabeledSample]) -> Result<Gradients> {
        Ok(self.forward_backward(batch)?.1)
    }

    fn forward_backward(&self, batch: &[LabeledSample]) -> Result<(Trace, Gradients)> {
        if batch.is_empty() {
            return Err(SpineError::InvalidParameter("empty batch".into()));
        }
        let kappas: Vec<f64> = batch.iter().map(|s| s.kappa).collect();
        let t = self.trace(&kappas)?;
        let n = batch.len() as f64;
        let scale = self.target.scale;

        // d(mean loss)/d(head outputs)
        let mut d_out: Vec<[f64; 2]> = Vec::with_capacity(batch.len());
        for (h, s) in t.head_out.iter().zip(batch) {
            let (mu, s2) = self.to_outputs(*h);
            let r = s.angle_deg - mu;
            let d_mu = -sign(r) / s2;
            let d_s2 = 1.0 / s2 - r.abs() / (s2 * s2);
            d_out.push([d_mu * scale / n, d_s2 * scale * sigmoid(h[1]) / n]);
        }

        let width = self.head.in_dim;
        let mut head_weights = vec![0.0; 2 * width];
        let mut head_biases = vec![0.0; 2];
        let mut d_x: Vec<Vec<f64>> = vec![vec![0.0; width]; batch.len()];
        for (i, g) in d_out.iter().enumerate() {
            for o in 0..2 {
                head_biases[o] += g[o];
                for j in 0..width {
                    head_weights[o * width + j] += g[o] * t.head_in[i][j];
                    d_x[i][j] += g[o] * self.head.weights[o * width + j];
                }
            }
        }

        let mut hidden = Vec::with_capacity(self.hidden.len());
        for li in (0..self.hidden.len()).rev() {
            let layer = &self.hidden[li];
            let (in_dim, width) = (layer.dense.in_dim, layer.dense.out_dim);
            let xhat = &t.xhat[li];
            let mut gamma = vec![0.0; width];
            let mut beta = vec![0.0; width];
            let mut sum_dxhat = vec![0.0; width];
            let mut sum_dxhat_xhat = vec![0.0; width];
            for i in 0..batch.len() {
                for j in 0..width {
                    gamma[j] += d_x[i][j] * xhat[i][j];
                    beta[j] += d_x[i][j];
                    let dxh = d_x[i][j] * layer.norm.gamma[j];
                    sum_dxhat[j] += dxh;
                    sum_dxhat_xhat[j] += dxh * xhat[i][j];
                }
            }
            let mut weights = vec![0.0; width * in_dim];
            let mut biases = vec![0.0; width];
            let mut d_in = vec![vec![0.0; in_dim]; batch.len()];
            for i in 0..batch.len() {
                for j in 0..width {
                    if t.pre[li][i][j] <= 0.0 {
                        continue;
                    }
                    let dxh = d_x[i][j] * layer.norm.gamma[j];
                    let da = t.inv_std[li][j] / n * (n * dxh - sum_dxhat[j] - xhat[i][j] * sum_dxhat_xhat[j]);
                    biases[j] += da;
                    for k in 0..in_dim {
                        weights[j * in_dim + k] += da * t.inputs[li][i][k];
                        d_in[i][k] += da * layer.dense.weights[j * in_dim + k];
                    }
                }
            }
            d_x = d_in;
            hidden.push(HiddenGradients {
                weights,
                biases,
                gamma,
                beta,
            });
        }
        hidden.reverse();
        Ok((
            t,
            Gradients {
                hidden,
                head_weights,
                head_biases,
            },
        ))
    }

    fn update_running_stats(&mut self, t: &Trace, batch_len: usize) {
        let unbias = if batch_len > 1 {
            batch_len as f64 / (batch_len - 1) as f64
        } else {
            1.0
        };
        for (li, layer) in self.hidden.iter_mut().enumerate() {
            let m = layer.norm.momentum;
            for j in 0..layer.norm.gamma.len() {
                layer.norm.running_mean[j] = (1.0 - m) * layer.norm.running_mean[j] + m * t.batch_mean[li][j];
                layer.norm.running_var[j] = (1.0 - m) * layer.norm.running_var[j] + m * t.batch_var[li][j] * unbias;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SpineError::Structure(format!("regressor model: {m}")));
        if self.format_version != MODEL_FORMAT_VERSION {
            return bad(&format!("unsupported format_version {}", self.format_version));
        }
        if self.dims.len() != self.hidden.len() + 2 || self.dims[0] != 1 || *self.dims.last().unwrap() != 2 {
            return bad("dims must run 1 → hidden… → 2");
        }
        let mut layers: Vec<&Dense> = self.hidden.iter().map(|h| &h.dense).collect();
        layers.push(&self.head);
        for (i, d) in layers.iter().enumerate() {
            if d.in_dim != self.dims[i]
                || d.out_dim != self.dims[i + 1]
                || d.weights.len() != d.in_dim * d.out_dim
                || d.biases.len() != d.out_dim
            {
                return bad(&format!("layer {i} does not match dims"));
            }
        }
        for h in &self.hidden {
            let w = h.dense.out_dim;
            let n = &h.norm;
            if [&n.gamma, &n.beta, &n.running_mean, &n.running_var]
                .iter()
                .any(|v| v.len() != w)
            {
                return bad("batch-norm width mismatch");
            }
            if n.running_var.iter().any(|&v| v < 0.0) || !(n.epsilon > 0.0) {
                return bad("batch-norm variance must be non-negative");
            }
        }
        let finite = self.parameters().iter().all(|v| v.is_finite())
            && self.hidden.iter().all(|h| {
                h.norm
                    .running_mean
                    .iter()
                    .chain(&h.norm.running_var)
                    .all(|v| v.is_finite())
            })
            && self.input_shift.is_finite()
            && self.target.mean.is_finite()
            && self.target.scale > 0.0;
        if !finite {
            return bad("non-finite parameter");
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: RegressorModel = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }
}

/// Eval-mode prediction; negative angles are clamped to 0.
pub fn predict_angle(model: &RegressorModel, kappa: f64) -> Result<(f64, f64)> {
    if !(kappa >= 1.0) {
        return Err(SpineError::Domain(format!("kappa must be >= 1, got {kappa}")));
    }
    let (mu, s2) = model.eval_one(kappa)?;
    Ok((mu.max(0.0), s2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Validation loss must drop by more than this to count as progress.
    pub min_improvement: f64,
    /// Plateaus tolerated before training stops.
    pub max_decays: usize,
    /// Share of the data held out when no validation set is given.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            learning_rate: 1e-4,
            lr_decay: 0.1,
            max_epochs: 3000,
            patience: 20,
            min_improvement: 1e-4,
            max_decays: 2,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size >= 1
            && self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.adam_epsilon > 0.0
            && self.lr_decay > 0.0
            && self.lr_decay < 1.0
            && self.max_epochs >= 1
            && self.min_improvement >= 0.0
            && (0.0..1.0).contains(&self.validation_fraction);
        if ok {
            Ok(())
        } else {
            Err(SpineError::InvalidParameter(format!(
                "invalid training config {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlateauAction {
    Continue,
    /// The learning rate was lowered.
    Decay,
    Stop,
}

/// Lowers the learning rate after `patience` epochs without improvement and
/// stops once `max_decays` decays have been spent.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub learning_rate: f64,
    factor: f64,
    patience: usize,
    min_improvement: f64,
    max_decays: usize,
    best: f64,
    stale: usize,
    decays: usize,
}

impl PlateauScheduler {
    pub fn new(learning_rate: f64, factor: f64, patience: usize, min_improvement: f64, max_decays: usize) -> Self {
        PlateauScheduler {
            learning_rate,
            factor,
            patience,
            min_improvement,
            max_decays,
            best: f64::INFINITY,
            stale: 0,
            decays: 0,
        }
    }

    pub fn decays(&self) -> usize {
        self.decays
    }

    pub fn step(&mut self, loss: f64) -> PlateauAction {
        if loss < self.best - self.min_improvement {
            self.best = loss;
            self.stale = 0;
            return PlateauAction::Continue;
        }
        self.stale += 1;
        if self.stale < self.patience {
            return PlateauAction::Continue;
        }
        self.stale = 0;
        if self.decays == self.max_decays {
            return PlateauAction::Stop;
        }
        self.decays += 1;
        self.learning_rate *= self.factor;
        PlateauAction::Decay
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, c: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * grads[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * grads[i] * grads[i];
            params[i] -= lr * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + c.adam_epsilon);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: RegressorModel,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,learning_rate\n");
        for r in &self.log {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch, r.train_loss, r.val_loss, r.learning_rate
            ));
        }
        out
    }
}

fn check_samples(data: &[LabeledSample]) -> Result<()> {
    for (i, s) in data.iter().enumerate() {
        if !(s.kappa >= 1.0) || !s.kappa.is_finite() || !(s.angle_deg >= 0.0) || !s.angle_deg.is_finite() {
            return Err(SpineError::InvalidSample {
                row: i + 1,
                message: format!(
                    "need finite kappa >= 1 and angle >= 0, got ({}, {})",
                    s.kappa, s.angle_deg
                ),
            });
        }
    }
    Ok(())
}

/// Train with a seeded hold-out split of `data`. Fewer than 4 samples are
/// validated on the training set itself.
pub fn train(data: &[LabeledSample], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if data.len() < 2 {
        return Err(SpineError::InvalidParameter("training needs at least 2 samples".into()));
    }
    if data.len() < 4 {
        return train_with_validation(data, data, config);
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ SPLIT_SALT));
    let n_val = ((data.len() as f64 * config.validation_fraction).ceil() as usize).clamp(1, data.len() - 2);
    let val: Vec<LabeledSample> = idx[..n_val].iter().map(|&i| data[i]).collect();
    let tr: Vec<LabeledSample> = idx[n_val..].iter().map(|&i| data[i]).collect();
    train_with_validation(&tr, &val, config)
}

/// Keeps the hold-out shuffle independent of the epoch shuffles.
const SPLIT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn train_with_validation(
    train_set: &[LabeledSample],
    val_set: &[LabeledSample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.len() < 2 || val_set.is_empty() {
        return Err(SpineError::InvalidParameter(
            "training needs at least 2 samples and a non-empty validation set".into(),
        ));
    }
    check_samples(train_set)?;
    check_samples(val_set)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = RegressorModel::random_with(&mut rng);
    model.target = TargetScaling::fit(&train_set.iter().map(|s| s.angle_deg).collect::<Vec<_>>());

    let mut params = model.parameters();
    let mut adam = Adam::new(params.len());
    let mut sched = PlateauScheduler::new(
        config.learning_rate,
        config.lr_decay,
        config.patience,
        config.min_improvement,
        config.max_decays,
    );
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let (mut best, mut best_epoch, mut best_val) = (model.clone(), 0, f64::INFINITY);

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut chunks: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        // a batch of one has zero variance; fold it into its neighbour
        if chunks.len() > 1 && chunks.last().unwrap().len() == 1 {
            chunks.pop();
        }
        let (mut sum, mut count) = (0.0, 0usize);
        let lr = sched.learning_rate;
        for chunk in chunks {
            let batch: Vec<LabeledSample> = chunk.iter().map(|&i| train_set[i]).collect();
            let (trace, grads) = model
                .forward_backward(&batch)
                .map_err(|_| SpineError::Divergence { epoch })?;
            for (h, s) in trace.head_out.iter().zip(&batch) {
                let (mu, s2) = model.to_outputs(*h);
                sum += (2.0 * s2).ln() + (s.angle_deg - mu).abs() / s2;
            }
            count += batch.len();
            model.update_running_stats(&trace, batch.len());
            adam.step(&mut params, &grads.flatten(), lr, config);
            model.set_parameters(&params);
        }
        let train_loss = sum / count as f64;
        let val_loss = model
            .loss(val_set, Mode::Eval)
            .map_err(|_| SpineError::Divergence { epoch })?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(SpineError::Divergence { epoch });
        }
        log.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            learning_rate: lr,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best = model.clone();
        }
        if sched.step(val_loss) == PlateauAction::Stop {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best,
        log,
        best_epoch,
    })
}

/// Parse `kappa,angle_deg` training data. Errors name the 1-based file row.
pub fn parse_training_csv(text: &str) -> Result<Vec<LabeledSample>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.split(',').map(str::trim).eq(["kappa", "angle_deg"]) => {}
        Some((i, h)) => {
            return Err(SpineError::InvalidSample {
                row: i + 1,
                message: format!("expected header `kappa,angle_deg`, found `{h}`"),
            })
        }
        None => return Err(SpineError::InvalidParameter("training CSV is empty".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let row = i + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let err = |message: String| SpineError::InvalidSample { row, message };
        if fields.len() != 2 {
            return Err(err(format!("expected 2 fields, found {}", fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("`{s}` is not a number")));
        let (kappa, angle) = (num(fields[0])?, num(fields[1])?);
        if !kappa.is_finite() || !angle.is_finite() {
            return Err(err("non-finite value".into()));
        }
        if kappa < 1.0 {
            return Err(err(format!("kappa {kappa} is below 1")));
        }
        if angle < 0.0 {
            return Err(err(format!("angle {angle} is negative")));
        }
        out.push(LabeledSample::new(kappa, angle));
    }
    if out.is_empty() {
        return Err(SpineError::InvalidParameter("training CSV has no samples".into()));
    }
    Ok(out)
}

/// Finite-difference verification of [`RegressorModel::backward`].
pub mod gradcheck {
    use super::*;

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct GradientCheck {
        /// `‖analytic − numeric‖ / ‖numeric‖` over the checked parameters.
        pub vector_rel_err: f64,
        /// Largest `|a − n| / max(|a|, |n|, 1e-4)` over single parameters.
        pub worst_coordinate_rel_err: f64,
        pub checked: usize,
        /// Parameters whose ±h probe straddled a ReLU or |·| kink.
        pub skipped: usize,
    }

    /// He-initialised model with every parameter, including biases, the head
    /// and the batch-norm scale and shift, moved off its initial value.
    pub fn random_probe_model(rng: &mut impl Rng) -> RegressorModel {
        let mut m = RegressorModel::random_with(rng);
        m.target = TargetScaling { mean: 15.0, scale: 8.0 };
        for layer in &mut m.hidden {
            for b in &mut layer.dense.biases {
                *b = rng.random_range(-1.0..1.0);
            }
            for g in layer.norm.gamma.iter_mut().chain(layer.norm.beta.iter_mut()) {
                *g += rng.random_range(-0.5..0.5);
            }
        }
        for w in m.head.weights.iter_mut().chain(m.head.biases.iter_mut()) {
            *w = rng.random_range(-0.5..0.5);
        }
        m
    }

    /// Signs of every ReLU input and residual; a central difference is only
    /// meaningful when these agree at both probes.
    fn kink_pattern(m: &RegressorModel, batch: &[LabeledSample]) -> Vec<bool> {
        let kappas: Vec<f64> = batch.iter().map(|s| s.kappa).collect();
        let t = m.trace(&kappas).expect("finite probe");
        let mut out: Vec<bool> = t.pre.iter().flatten().flatten().map(|&z| z > 0.0).collect();
        for (h, s) in t.head_out.iter().zip(batch) {
            out.push(s.angle_deg > m.to_outputs(*h).0);
        }
        out
    }

    /// Compare analytic gradients of the train-mode mean loss with the
    /// two-point central difference of step `h`.
    pub fn gradient_check(m: &RegressorModel, batch: &[LabeledSample], h: f64) -> GradientCheck {
        compare(m, batch, h, |d| d(h))
    }

    /// As [`gradient_check`] but with the Richardson-extrapolated central
    /// difference `(4·D(h/2) − D(h))/3`, whose error is O(h⁴).
    pub fn gradient_check_richardson(m: &RegressorModel, batch: &[LabeledSample], h: f64) -> GradientCheck {
        compare(m, batch, h, |d| (4.0 * d(h / 2.0) - d(h)) / 3.0)
    }

    fn compare(
        m: &RegressorModel,
        batch: &[LabeledSample],
        h: f64,
        numeric: impl Fn(&dyn Fn(f64) -> f64) -> f64,
    ) -> GradientCheck {
        let analytic = m.backward(batch).expect("finite probe").flatten();
        let base = m.parameters();
        let at = |i: usize, delta: f64| {
            let mut probe = m.clone();
            let mut p = base.clone();
            p[i] += delta;
            probe.set_parameters(&p);
            probe
        };
        let (mut diff2, mut norm2, mut worst) = (0.0, 0.0, 0.0f64);
        let (mut checked, mut skipped) = (0, 0);
        for (i, &a) in analytic.iter().enumerate() {
            if kink_pattern(&at(i, h), batch) != kink_pattern(&at(i, -h), batch) {
                skipped += 1;
                continue;
            }
            let central = |step: f64| {
                let up = at(i, step).loss(batch, Mode::Train).expect("finite probe");
                let down = at(i, -step).loss(batch, Mode::Train).expect("finite probe");
                (up - down) / (2.0 * step)
            };
            let n = numeric(&central);
            diff2 += (a - n).powi(2);
            norm2 += n * n;
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-4));
            checked += 1;
        }
        GradientCheck {
            vector_rel_err: diff2.sqrt() / norm2.sqrt().max(f64::MIN_POSITIVE),
            worst_coordinate_rel_err: worst,
            checked,
            skipped,
        }
    }
}
