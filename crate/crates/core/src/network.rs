//! Convolutional sequence-to-sequence regressor, composite loss and the
//! SGD-with-momentum trainer.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use msk_autograd::{Graph, NormAxis, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{NormStats, Window, WindowSet};
use crate::error::{Error, Result};
use crate::metrics::{mse_angle, mse_force, total_loss, LossBreakdown, LossWeights};
use crate::physics::{physics_loss, DynamicsParams};
use crate::simulator::io::{read_json, write_json};

pub const NORM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    /// conv1d → center crop → ReLU → per-channel norm over time → dropout
    ConvBlock,
    /// per-step dense → ReLU → norm over features → dropout
    FcBlock,
    /// per-step dense to the output count
    Regression,
}

/// Axis a block normalizes over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockNorm {
    /// Each channel over the window's time steps.
    Time,
    /// Each time step over the channels.
    Feature,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Kernels or nodes; ignored by the regression head.
    pub units: usize,
    pub kernel: usize,
    pub padding: usize,
    pub stride: usize,
    pub dropout: f64,
    pub norm: BlockNorm,
}

impl LayerSpec {
    pub fn conv(units: usize, kernel: usize, padding: usize, stride: usize, dropout: f64) -> Self {
        Self {
            kind: LayerKind::ConvBlock,
            units,
            kernel,
            padding,
            stride,
            dropout,
            norm: BlockNorm::Time,
        }
    }

    pub fn fc(units: usize, dropout: f64) -> Self {
        Self {
            kind: LayerKind::FcBlock,
            units,
            kernel: 1,
            padding: 0,
            stride: 1,
            dropout,
            norm: BlockNorm::Feature,
        }
    }

    pub fn regression() -> Self {
        Self {
            kind: LayerKind::Regression,
            units: 0,
            kernel: 1,
            padding: 0,
            stride: 1,
            dropout: 0.0,
            norm: BlockNorm::None,
        }
    }

    pub fn with_norm(self, norm: BlockNorm) -> Self {
        Self { norm, ..self }
    }

    /// One conv block (128 kernels, K 3, padding 3), two 128-node FC
    /// blocks, dropout 0.3 throughout.
    pub fn default_stack() -> Vec<Self> {
        vec![Self::conv(128, 3, 3, 1, 0.3), Self::fc(128, 0.3), Self::fc(128, 0.3), Self::regression()]
    }

    /// Plain-CNN baseline: three conv blocks and three FC blocks.
    pub fn deeper_stack() -> Vec<Self> {
        let mut v = vec![Self::conv(128, 3, 3, 1, 0.3); 3];
        v.extend([Self::fc(128, 0.3); 3]);
        v.push(Self::regression());
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub layers: Vec<LayerSpec>,
    pub input_channels: usize,
    pub window: usize,
    pub outputs: usize,
    pub seed: u64,
    pub params: Vec<Param>,
    pub mode: Mode,
}

fn xavier(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-s..=s)).collect()).expect("shape matches data")
}

fn validate_stack(layers: &[LayerSpec], window: usize) -> Result<()> {
    let bad = |i: usize, reason: String| Error::invalid("layer spec", format!("layer {i}: {reason}"));
    if window < 3 {
        return Err(Error::invalid("network", format!("window length must be >= 3, got {window}")));
    }
    let Some((last, body)) = layers.split_last() else {
        return Err(Error::invalid("layer spec", "empty layer list"));
    };
    if last.kind != LayerKind::Regression {
        return Err(bad(layers.len() - 1, "the last layer must be the regression head".into()));
    }
    for (i, l) in body.iter().enumerate() {
        if l.kind == LayerKind::Regression {
            return Err(bad(i, "regression head must come last".into()));
        }
        if l.units == 0 {
            return Err(bad(i, "unit count must be positive".into()));
        }
        if !(0.0..1.0).contains(&l.dropout) {
            return Err(bad(i, format!("dropout {} outside [0, 1)", l.dropout)));
        }
        if l.kind == LayerKind::ConvBlock {
            if l.kernel == 0 || l.stride == 0 {
                return Err(bad(i, "kernel and stride must be positive".into()));
            }
            let padded = window + 2 * l.padding;
            if padded < l.kernel || (padded - l.kernel) / l.stride + 1 < window {
                return Err(bad(i, "convolution output is shorter than the window; cannot crop back".into()));
            }
        }
    }
    Ok(())
}

/// Closed-form parameter count for a stack, used as a cross-check.
pub fn parameter_count(layers: &[LayerSpec], input_channels: usize, outputs: usize) -> usize {
    let mut width = input_channels;
    let mut total = 0;
    for l in layers {
        total += match l.kind {
            LayerKind::ConvBlock => l.units * width * l.kernel + 3 * l.units,
            LayerKind::FcBlock => l.units * width + 3 * l.units,
            LayerKind::Regression => outputs * width + outputs,
        };
        width = l.units;
    }
    total
}

impl NetworkModel {
    pub fn build(layers: &[LayerSpec], input_channels: usize, window: usize, outputs: usize, seed: u64) -> Result<Self> {
        validate_stack(layers, window)?;
        if input_channels == 0 || outputs == 0 {
            return Err(Error::invalid("network", "input channels and outputs must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut width = input_channels;
        let (mut conv, mut fc) = (0, 0);
        for l in layers {
            let (prefix, units) = match l.kind {
                LayerKind::ConvBlock => {
                    conv += 1;
                    let name = format!("conv{conv}");
                    params.push(Param {
                        name: format!("{name}.kernels"),
                        value: xavier(&mut rng, &[l.units, width, l.kernel], width * l.kernel, l.units * l.kernel),
                    });
                    (name, l.units)
                }
                LayerKind::FcBlock => {
                    fc += 1;
                    let name = format!("fc{fc}");
                    params.push(Param {
                        name: format!("{name}.weights"),
                        value: xavier(&mut rng, &[l.units, width], width, l.units),
                    });
                    (name, l.units)
                }
                LayerKind::Regression => {
                    params.push(Param {
                        name: "head.weights".into(),
                        value: xavier(&mut rng, &[outputs, width], width, outputs),
                    });
                    ("head".to_string(), outputs)
                }
            };
            params.push(Param {
                name: format!("{prefix}.bias"),
                value: Tensor::zeros(&[units]),
            });
            if l.kind != LayerKind::Regression {
                params.push(Param {
                    name: format!("{prefix}.gain"),
                    value: Tensor::full(&[units], 1.0),
                });
                params.push(Param {
                    name: format!("{prefix}.shift"),
                    value: Tensor::zeros(&[units]),
                });
            }
            width = units;
        }
        Ok(Self {
            layers: layers.to_vec(),
            input_channels,
            window,
            outputs,
            seed,
            params,
            mode: Mode::Train,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Registers every parameter as a gradient-tracked leaf.
    pub fn register(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.param(p.value.clone())).collect()
    }

    /// Builds the forward pass on `g` for an input `C × W`; returns the
    /// normalized predictions as `(N+1) × W`.
    pub fn forward_graph<R: Rng + ?Sized>(&self, g: &mut Graph, params: &[Var], input: Var, training: bool, rng: &mut R) -> Result<Var> {
        let shape = g.value(input).shape().to_vec();
        if shape.len() != 2 || shape[0] != self.input_channels {
            return Err(Error::Dimension {
                op: "network input channels",
                expected: self.input_channels,
                found: shape.first().copied().unwrap_or(0),
            });
        }
        let len = shape[1];
        if len < 3 {
            return Err(Error::invalid("network input", format!("window length must be >= 3, got {len}")));
        }
        if params.len() != self.params.len() {
            return Err(Error::Dimension {
                op: "network parameters",
                expected: self.params.len(),
                found: params.len(),
            });
        }
        let mut p = params.iter().copied();
        let mut next = || p.next().expect("parameter count checked above");
        let mut x = input;
        for l in &self.layers {
            match l.kind {
                LayerKind::ConvBlock => {
                    let (w, b, gain, shift) = (next(), next(), next(), next());
                    let y = g.conv1d(x, w, b, l.padding, l.stride)?;
                    let out_len = g.value(y).shape()[1];
                    if out_len < len {
                        return Err(Error::invalid("conv block", format!("output length {out_len} shorter than input {len}")));
                    }
                    let y = g.slice(y, 1, (out_len - len) / 2, len)?;
                    let y = g.relu(y)?;
                    let y = block_norm(g, y, gain, shift, l.norm)?;
                    x = g.dropout(y, l.dropout, training, rng)?;
                }
                LayerKind::FcBlock => {
                    let (w, b, gain, shift) = (next(), next(), next(), next());
                    let y = g.dense(x, w, b)?;
                    let y = g.relu(y)?;
                    let y = block_norm(g, y, gain, shift, l.norm)?;
                    x = g.dropout(y, l.dropout, training, rng)?;
                }
                LayerKind::Regression => {
                    let (w, b) = (next(), next());
                    x = g.dense(x, w, b)?;
                }
            }
        }
        Ok(x)
    }

    /// Normalized predictions `W × (N+1)` in the model's current mode.
    pub fn forward<R: Rng + ?Sized>(&self, window: &Tensor, rng: &mut R) -> Result<Tensor> {
        let mut g = Graph::new();
        let params: Vec<Var> = self.params.iter().map(|p| g.constant(p.value.clone())).collect();
        let input = g.constant(window.clone());
        let out = self.forward_graph(&mut g, &params, input, self.mode == Mode::Train, rng)?;
        Ok(g.value(out).transpose()?)
    }

    /// Eval-mode normalized predictions `W × (N+1)`.
    pub fn predict(&self, window: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let params: Vec<Var> = self.params.iter().map(|p| g.constant(p.value.clone())).collect();
        let input = g.constant(window.clone());
        // eval mode never draws from the generator
        let out = self.forward_graph(&mut g, &params, input, false, &mut ChaCha8Rng::seed_from_u64(0))?;
        Ok(g.value(out).transpose()?)
    }

    /// Eval-mode predictions in physical units.
    pub fn predict_physical(&self, window: &Tensor, stats: &NormStats) -> Result<Tensor> {
        stats.denormalize(&self.predict(window)?)
    }
}

fn block_norm(g: &mut Graph, x: Var, gain: Var, shift: Var, norm: BlockNorm) -> Result<Var> {
    Ok(match norm {
        BlockNorm::Time => g.norm(x, gain, shift, NormAxis::Time, NORM_EPSILON)?,
        BlockNorm::Feature => g.norm(x, gain, shift, NormAxis::Feature, NORM_EPSILON)?,
        BlockNorm::None => x,
    })
}

/// Graph handles of the three loss terms and their weighted total.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub force: Var,
    pub angle: Var,
    pub physics: Var,
    pub total: Var,
}

/// Composite loss of one window: data terms on z-scored targets, the
/// physics residual on denormalized predictions. `pred` is the network
/// output `(N+1) × W`; `targets` the window's physical `W × (N+1)`.
pub fn composite_loss(g: &mut Graph, pred: Var, targets: &Tensor, stats: &NormStats, dynamics: &DynamicsParams, dt: f64, weights: LossWeights) -> Result<LossVars> {
    weights.validate()?;
    let m = stats.outputs();
    let n = m - 1;
    if dynamics.n_muscles() != n {
        return Err(Error::Dimension {
            op: "composite loss muscles",
            expected: dynamics.n_muscles(),
            found: n,
        });
    }
    let shape = g.value(pred).shape().to_vec();
    if shape.len() != 2 || shape[0] != m || targets.shape() != [shape[1], m] {
        return Err(Error::invalid(
            "composite loss",
            format!("prediction {shape:?} and targets {:?} disagree with {m} outputs", targets.shape()),
        ));
    }
    let w = shape[1];
    let target = g.constant(stats.normalize(targets)?);
    let pred_t = g.transpose(pred)?;

    let split = |g: &mut Graph, x: Var| -> Result<(Var, Var)> {
        let f = g.slice(x, 1, 0, n)?;
        let th = g.slice(x, 1, n, 1)?;
        let th = g.reshape(th, vec![w])?;
        Ok((f, th))
    };
    let (f_hat, th_hat) = split(g, pred_t)?;
    let (f_true, th_true) = split(g, target)?;
    let force = mse_force(g, f_true, f_hat)?;
    let angle = mse_angle(g, th_true, th_hat)?;

    let mut diag = vec![0.0; m * m];
    for j in 0..m {
        diag[j * m + j] = stats.std[j];
    }
    let scale = g.constant(Tensor::matrix(m, m, diag)?);
    let offset = g.constant(Tensor::from_vec(stats.mean.clone()));
    let physical = g.dense(pred, scale, offset)?;
    let physical = g.transpose(physical)?;
    let (forces, theta) = split(g, physical)?;
    let physics = physics_loss(g, theta, forces, &dynamics.with_dt(dt))?;

    let wf = g.scale(force, weights.force)?;
    let wa = g.scale(angle, weights.angle)?;
    let mut total = g.add(wf, wa)?;
    if weights.physics != 0.0 {
        let wp = g.scale(physics, weights.physics)?;
        total = g.add(total, wp)?;
    }
    Ok(LossVars {
        force,
        angle,
        physics,
        total,
    })
}

/// Loss terms of `model` on one window, without dropout.
pub fn window_loss(model: &NetworkModel, window: &Window, stats: &NormStats, dynamics: &DynamicsParams, weights: LossWeights) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let params: Vec<Var> = model.params.iter().map(|p| g.constant(p.value.clone())).collect();
    let input = g.constant(window.input.clone());
    let pred = model.forward_graph(&mut g, &params, input, false, &mut ChaCha8Rng::seed_from_u64(0))?;
    let l = composite_loss(&mut g, pred, &window.targets, stats, dynamics, window.dt, weights)?;
    let v = |x: Var| g.value(x).item().unwrap_or(f64::NAN);
    total_loss(v(l.force), v(l.angle), v(l.physics), weights)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdmState {
    pub lr: f64,
    pub momentum: f64,
    pub velocities: Vec<Tensor>,
    pub iteration: usize,
}

impl SgdmState {
    pub fn new(lr: f64, momentum: f64, params: &[Param]) -> Result<Self> {
        if !(lr > 0.0) || !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid("optimizer", format!("need lr > 0 and momentum in [0, 1), got {lr}, {momentum}")));
        }
        Ok(Self {
            lr,
            momentum,
            velocities: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            iteration: 0,
        })
    }
}

/// `v ← μ·v − lr·g; p ← p + v`. A non-finite gradient aborts before any
/// parameter is touched.
pub fn sgdm_step(params: &mut [Param], grads: &[Tensor], state: &mut SgdmState) -> Result<()> {
    if grads.len() != params.len() || state.velocities.len() != params.len() {
        return Err(Error::Dimension {
            op: "sgdm_step",
            expected: params.len(),
            found: grads.len(),
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.value.shape() != g.shape() {
            return Err(Error::invalid("sgdm_step", format!("gradient of `{}` has shape {:?}, expected {:?}", p.name, g.shape(), p.value.shape())));
        }
        if g.first_non_finite().is_some() {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }
    let (lr, mu) = (state.lr, state.momentum);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocities.iter_mut()) {
        for ((pv, vv), gv) in p.value.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vv = mu * *vv - lr * gv;
            *pv += *vv;
        }
    }
    state.iteration += 1;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub max_iter: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub seed: u64,
    /// Rescale the gradient to at most this global L2 norm before the
    /// momentum update; `None` uses the raw gradient.
    pub clip_norm: Option<f64>,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            max_iter: 1200,
            lr: 0.01,
            momentum: 0.9,
            batch: 1,
            seed: 0,
            clip_norm: Some(1.0),
        }
    }
}

/// Trains `model` in place and returns the per-iteration loss history.
/// Each iteration draws `batch` windows uniformly with replacement; the
/// model is left in eval mode.
pub fn train(model: &mut NetworkModel, data: &WindowSet, weights: LossWeights, dynamics: &DynamicsParams, schedule: &Schedule) -> Result<Vec<LossBreakdown>> {
    if data.is_empty() {
        return Err(Error::invalid("training", "no training windows"));
    }
    if schedule.batch == 0 {
        return Err(Error::invalid("training", "batch size must be >= 1"));
    }
    let stats = data.stats()?;
    let mut state = SgdmState::new(schedule.lr, schedule.momentum, &model.params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut history = Vec::with_capacity(schedule.max_iter);
    model.mode = Mode::Train;
    for iteration in 0..schedule.max_iter {
        let mut sums = [0.0; 3];
        let mut grads: Vec<Tensor> = model.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        for _ in 0..schedule.batch {
            let window = &data.windows[rng.random_range(0..data.len())];
            let mut g = Graph::new();
            let params = model.register(&mut g);
            let input = g.constant(window.input.clone());
            let pred = model.forward_graph(&mut g, &params, input, true, &mut rng).map_err(|e| diverged(e, iteration))?;
            let l = composite_loss(&mut g, pred, &window.targets, stats, dynamics, window.dt, weights).map_err(|e| diverged(e, iteration))?;
            for (s, v) in sums.iter_mut().zip([l.force, l.angle, l.physics]) {
                *s += g.value(v).item().unwrap_or(f64::NAN);
            }
            let grad = g.backward(l.total)?;
            for (acc, &p) in grads.iter_mut().zip(&params) {
                let gp = grad.get(p).expect("parameters are tracked leaves");
                acc.data_mut().iter_mut().zip(gp.data()).for_each(|(a, b)| *a += b);
            }
        }
        let k = schedule.batch as f64;
        if schedule.batch > 1 {
            grads.iter_mut().for_each(|gr| gr.data_mut().iter_mut().for_each(|v| *v /= k));
        }
        let row = total_loss(sums[0] / k, sums[1] / k, sums[2] / k, weights).map_err(|_| Error::Diverged {
            what: "loss".into(),
            iteration,
        })?;
        if let Some(limit) = schedule.clip_norm {
            clip_global_norm(&mut grads, limit);
        }
        sgdm_step(&mut model.params, &grads, &mut state)?;
        history.push(row);
    }
    model.mode = Mode::Eval;
    Ok(history)
}

/// Scales all gradients by `limit / ‖g‖₂` when the global norm exceeds
/// `limit`. Non-finite norms are left for [`sgdm_step`] to report.
pub fn clip_global_norm(grads: &mut [Tensor], limit: f64) {
    let norm = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
    if norm.is_finite() && norm > limit {
        let k = limit / norm;
        grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= k));
    }
}

fn diverged(e: Error, iteration: usize) -> Error {
    match e {
        Error::Tensor(msk_autograd::TensorError::NonFinite { op, .. }) => Error::Diverged {
            what: format!("value in {op}"),
            iteration,
        },
        other => other,
    }
}

/// Pooled ground truth and eval-mode predictions (physical units), one
/// vector per output, over every sample of every window.
pub fn collect_predictions(model: &NetworkModel, set: &WindowSet, stats: &NormStats) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let m = stats.outputs();
    let mut truth = vec![Vec::new(); m];
    let mut pred = vec![Vec::new(); m];
    for w in &set.windows {
        let p = model.predict_physical(&w.input, stats)?;
        for (tr, pr) in w.targets.data().chunks(m).zip(p.data().chunks(m)) {
            for j in 0..m {
                truth[j].push(tr[j]);
                pred[j].push(pr[j]);
            }
        }
    }
    Ok((truth, pred))
}

pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_MANIFEST: &str = "checkpoint.json";
pub const CHECKPOINT_PARAMS: &str = "params.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// `checkpoint.json`; the values live in `params.csv` as `name,index,value`
/// rows in inventory order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub version: u32,
    pub layers: Vec<LayerSpec>,
    pub input_channels: usize,
    pub window: usize,
    pub outputs: usize,
    pub seed: u64,
    pub stats: NormStats,
    pub params: Vec<ParamEntry>,
}

pub fn save_checkpoint(model: &NetworkModel, stats: &NormStats, dir: &Path) -> Result<()> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| Error::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        layers: model.layers.clone(),
        input_channels: model.input_channels,
        window: model.window,
        outputs: model.outputs,
        seed: model.seed,
        stats: stats.clone(),
        params: model
            .params
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    write_json(&manifest, &dir.join(CHECKPOINT_MANIFEST))?;
    let path = dir.join(CHECKPOINT_PARAMS);
    let file = File::create(&path).map_err(io(&path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |source| Error::Csv {
        path: path.display().to_string(),
        source,
    };
    w.write_record(["name", "index", "value"]).map_err(csv_err)?;
    for p in &model.params {
        for (i, v) in p.value.data().iter().enumerate() {
            w.serialize((&p.name, i, v)).map_err(csv_err)?;
        }
    }
    w.flush().map_err(io(&path))?;
    Ok(())
}

/// Loads a checkpoint in eval mode together with its normalization stats.
pub fn load_checkpoint(dir: &Path) -> Result<(NetworkModel, NormStats)> {
    let mpath = dir.join(CHECKPOINT_MANIFEST);
    let manifest: CheckpointManifest = read_json(&mpath)?;
    let fmt = |path: &Path, reason: String| Error::Format {
        path: path.display().to_string(),
        reason,
    };
    if manifest.version != CHECKPOINT_VERSION {
        return Err(fmt(&mpath, format!("unsupported checkpoint version {}", manifest.version)));
    }
    let mut model = NetworkModel::build(&manifest.layers, manifest.input_channels, manifest.window, manifest.outputs, manifest.seed)?;
    let inventory: Vec<ParamEntry> = model
        .params
        .iter()
        .map(|p| ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
        })
        .collect();
    if inventory != manifest.params {
        return Err(fmt(&mpath, "parameter inventory does not match the layer specs".into()));
    }
    let ppath = dir.join(CHECKPOINT_PARAMS);
    let mut r = csv::Reader::from_path(&ppath).map_err(|source| Error::Csv {
        path: ppath.display().to_string(),
        source,
    })?;
    let mut rows = r.deserialize::<(String, usize, f64)>();
    for p in &mut model.params {
        let name = p.name.clone();
        for (i, slot) in p.value.data_mut().iter_mut().enumerate() {
            let (n, idx, v) = rows
                .next()
                .ok_or_else(|| fmt(&ppath, format!("missing values for `{name}`")))?
                .map_err(|source| Error::Csv {
                    path: ppath.display().to_string(),
                    source,
                })?;
            if n != name || idx != i {
                return Err(fmt(&ppath, format!("expected `{name}`[{i}], found `{n}`[{idx}]")));
            }
            *slot = v;
        }
    }
    if rows.next().is_some() {
        return Err(fmt(&ppath, "extra rows after the last parameter".into()));
    }
    model.mode = Mode::Eval;
    Ok((model, manifest.stats))
}
