//! Windowing, target normalization and train/test splits.

use std::collections::BTreeSet;

use msk_autograd::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::{Channels, Trial};

/// How trials are cut into network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    /// Window length W in (prepared) samples.
    pub length: usize,
    /// Hop between consecutive training windows.
    pub stride: usize,
    /// Keep every k-th sample before windowing.
    pub decimate: usize,
    /// Time-normalize each trial to this many frames instead of decimating.
    pub resample_frames: Option<usize>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            length: 100,
            stride: 10,
            decimate: 10,
            resample_frames: None,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.length < 3 {
            return Err(Error::invalid("window config", format!("length must be >= 3, got {}", self.length)));
        }
        if self.stride == 0 || self.decimate == 0 {
            return Err(Error::invalid("window config", "stride and decimate must be >= 1"));
        }
        if matches!(self.resample_frames, Some(f) if f < self.length) {
            return Err(Error::invalid("window config", "resample_frames must be at least the window length"));
        }
        Ok(())
    }

    /// Applies decimation or time normalization to a trial.
    pub fn prepare(&self, trial: &Trial) -> Trial {
        match self.resample_frames {
            Some(frames) => resample_frames(trial, frames),
            None => decimate(trial, self.decimate),
        }
    }
}

fn pick(ch: &Channels, idx: &[usize]) -> Channels {
    ch.iter().map(|c| idx.iter().map(|&i| c[i]).collect()).collect()
}

/// Every `k`-th sample; the envelope is already band-limited to 6 Hz, so
/// no extra anti-alias filter is applied.
pub fn decimate(trial: &Trial, k: usize) -> Trial {
    let idx: Vec<usize> = (0..trial.len()).step_by(k.max(1)).collect();
    let one = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
    Trial {
        dt: trial.dt * k as f64,
        time: one(&trial.time),
        excitation: trial.excitation.as_ref().map(|c| pick(c, &idx)),
        activation: trial.activation.as_ref().map(|c| pick(c, &idx)),
        emg_raw: pick(&trial.emg_raw, &idx),
        emg_env: pick(&trial.emg_env, &idx),
        forces: pick(&trial.forces, &idx),
        theta: one(&trial.theta),
        tau: one(&trial.tau),
        ..trial.clone()
    }
}

/// Linear interpolation onto `frames` equally spaced points spanning the
/// trial; the effective step becomes `duration / (frames − 1)`.
pub fn resample_frames(trial: &Trial, frames: usize) -> Trial {
    let t = trial.len();
    let span = (t - 1) as f64;
    let at = |v: &[f64], j: usize| {
        let x = j as f64 * span / (frames - 1) as f64;
        let i = (x.floor() as usize).min(t - 2);
        let w = x - i as f64;
        v[i] * (1.0 - w) + v[i + 1] * w
    };
    let one = |v: &[f64]| (0..frames).map(|j| at(v, j)).collect::<Vec<_>>();
    let many = |c: &Channels| c.iter().map(|v| one(v)).collect::<Channels>();
    Trial {
        dt: trial.dt * span / (frames - 1) as f64,
        time: one(&trial.time),
        excitation: trial.excitation.as_ref().map(many),
        activation: trial.activation.as_ref().map(many),
        emg_raw: many(&trial.emg_raw),
        emg_env: many(&trial.emg_env),
        forces: many(&trial.forces),
        theta: one(&trial.theta),
        tau: one(&trial.tau),
        ..trial.clone()
    }
}

/// Per-target z-score statistics (N forces, then θ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Population mean/std over every target row of every window.
    pub fn fit(windows: &[Window]) -> Result<Self> {
        let first = windows.first().ok_or_else(|| Error::invalid("normalization", "no windows to fit"))?;
        let m = first.targets.shape()[1];
        let mut count = 0usize;
        let mut mean = vec![0.0; m];
        for w in windows {
            for row in w.targets.data().chunks(m) {
                count += 1;
                mean.iter_mut().zip(row).for_each(|(a, v)| *a += v);
            }
        }
        mean.iter_mut().for_each(|a| *a /= count as f64);
        let mut var = vec![0.0; m];
        for w in windows {
            for row in w.targets.data().chunks(m) {
                var.iter_mut().zip(row).zip(&mean).for_each(|((a, v), mu)| *a += (v - mu).powi(2));
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / count as f64).sqrt()).collect();
        // summation round-off leaves ~1e-17 spread on a constant column
        if let Some(j) = std.iter().zip(&mean).position(|(&s, mu)| !(s > 1e-12 * mu.abs().max(1.0))) {
            return Err(Error::ZeroVariance(j));
        }
        Ok(Self { mean, std })
    }

    pub fn outputs(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, targets: &Tensor) -> Result<usize> {
        let shape = targets.shape();
        if shape.len() != 2 || shape[1] != self.outputs() {
            return Err(Error::Dimension {
                op: "normalize",
                expected: self.outputs(),
                found: shape.get(1).copied().unwrap_or(0),
            });
        }
        if let Some(j) = self.std.iter().position(|&s| !(s > 0.0)) {
            return Err(Error::ZeroVariance(j));
        }
        Ok(shape[1])
    }

    /// `(y − μ) / σ` per column of a `T × (N+1)` tensor.
    pub fn normalize(&self, targets: &Tensor) -> Result<Tensor> {
        let m = self.check(targets)?;
        let data = targets.data().iter().enumerate().map(|(i, v)| (v - self.mean[i % m]) / self.std[i % m]).collect();
        Ok(Tensor::new(targets.shape().to_vec(), data)?)
    }

    pub fn denormalize(&self, targets: &Tensor) -> Result<Tensor> {
        let m = self.check(targets)?;
        let data = targets.data().iter().enumerate().map(|(i, v)| v * self.std[i % m] + self.mean[i % m]).collect();
        Ok(Tensor::new(targets.shape().to_vec(), data)?)
    }
}

/// One network sample cut from a prepared trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub trial: usize,
    pub speed: f64,
    pub offset: usize,
    pub dt: f64,
    /// `(1 + N) × W`: position in trial, then the N envelopes.
    pub input: Tensor,
    /// `W × (N + 1)` in physical units: N forces, then θ.
    pub targets: Tensor,
}

impl Window {
    pub fn length(&self) -> usize {
        self.targets.shape()[0]
    }

    pub fn key(&self) -> WindowKey {
        WindowKey {
            trial: self.trial,
            offset: self.offset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WindowKey {
    pub trial: usize,
    pub offset: usize,
}

/// Windows plus the normalization statistics that apply to them.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub windows: Vec<Window>,
    pub n_muscles: usize,
    pub stats: Option<NormStats>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn input_channels(&self) -> usize {
        self.n_muscles + 1
    }

    pub fn outputs(&self) -> usize {
        self.n_muscles + 1
    }

    pub fn stats(&self) -> Result<&NormStats> {
        self.stats.as_ref().ok_or_else(|| Error::invalid("window set", "normalization statistics not fitted"))
    }

    /// Seeded random subset of `fraction` of the windows (at least one),
    /// with statistics refitted on the subset.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<WindowSet> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::invalid("subsample", format!("fraction must be in (0, 1], got {fraction}")));
        }
        let keep = ((fraction * self.len() as f64).round() as usize).clamp(1, self.len());
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(keep);
        idx.sort_unstable();
        let windows: Vec<Window> = idx.iter().map(|&i| self.windows[i].clone()).collect();
        let stats = Some(NormStats::fit(&windows)?);
        Ok(WindowSet {
            windows,
            n_muscles: self.n_muscles,
            stats,
        })
    }
}

/// Sliding windows over each (already prepared) trial. Windows never
/// straddle trials.
pub fn make_windows(trials: &[Trial], length: usize, stride: usize) -> Result<WindowSet> {
    if length < 3 || stride == 0 {
        return Err(Error::invalid("make_windows", format!("need W >= 3 and stride >= 1, got {length}, {stride}")));
    }
    let n = trials.first().map_or(0, Trial::n_muscles);
    let mut windows = Vec::new();
    for trial in trials {
        windows.extend(trial_windows(trial, length, stride)?);
        if trial.n_muscles() != n {
            return Err(Error::Dimension {
                op: "make_windows",
                expected: n,
                found: trial.n_muscles(),
            });
        }
    }
    Ok(WindowSet {
        windows,
        n_muscles: n,
        stats: None,
    })
}

fn trial_windows(trial: &Trial, length: usize, stride: usize) -> Result<Vec<Window>> {
    let t = trial.len();
    if t < length {
        return Err(Error::invalid("make_windows", format!("trial {} has {t} samples, shorter than W = {length}", trial.id)));
    }
    let n = trial.n_muscles();
    let denom = (t - 1).max(1) as f64;
    Ok((0..=(t - length) / stride)
        .map(|k| {
            let off = k * stride;
            let mut input = Vec::with_capacity((n + 1) * length);
            input.extend((off..off + length).map(|i| i as f64 / denom));
            for env in &trial.emg_env {
                input.extend_from_slice(&env[off..off + length]);
            }
            let mut targets = Vec::with_capacity(length * (n + 1));
            for i in off..off + length {
                targets.extend(trial.forces.iter().map(|f| f[i]));
                targets.push(trial.theta[i]);
            }
            Window {
                trial: trial.id,
                speed: trial.speed,
                offset: off,
                dt: trial.dt,
                input: Tensor::matrix(n + 1, length, input).expect("window input is rectangular"),
                targets: Tensor::matrix(length, n + 1, targets).expect("window targets are rectangular"),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    /// Whole trials are held out.
    ByTrial,
    /// Windows from all trials and speeds are pooled, then split.
    Intrasession,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub kind: SplitKind,
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid("split", format!("train fraction must be in (0, 1), got {}", self.train_fraction)));
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        let kind = match self.kind {
            SplitKind::ByTrial => "by-trial",
            SplitKind::Intrasession => "intrasession",
        };
        format!("{kind} {}", self.train_fraction)
    }
}

/// Which trials/windows landed on each side; enough to rebuild the split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub spec: SplitSpec,
    pub window: WindowConfig,
    pub train_trials: Vec<usize>,
    pub test_trials: Vec<usize>,
    pub train_windows: Vec<WindowKey>,
    pub test_windows: Vec<WindowKey>,
    pub stats: NormStats,
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: WindowSet,
    pub test: WindowSet,
    pub manifest: SplitManifest,
}

fn held_out_trials(trials: &[Trial], spec: &SplitSpec) -> Result<BTreeSet<usize>> {
    if trials.len() < 2 {
        return Err(Error::invalid("split", "by-trial split needs at least 2 trials"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut speeds: Vec<f64> = Vec::new();
    for t in trials {
        if !speeds.contains(&t.speed) {
            speeds.push(t.speed);
        }
    }
    // stratify by speed tag when every group can spare a trial
    let stratified = speeds.len() > 1 && speeds.iter().all(|&s| trials.iter().filter(|t| t.speed == s).count() >= 2);
    let groups: Vec<Vec<usize>> = if stratified {
        speeds
            .iter()
            .map(|&s| trials.iter().filter(|t| t.speed == s).map(|t| t.id).collect())
            .collect()
    } else {
        vec![trials.iter().map(|t| t.id).collect()]
    };
    let mut test = BTreeSet::new();
    for mut ids in groups {
        ids.shuffle(&mut rng);
        let n_test = (((1.0 - spec.train_fraction) * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
        test.extend(ids.into_iter().take(n_test));
    }
    Ok(test)
}

/// Splits prepared trials. By-trial test windows tile each held-out trial
/// without overlap; intrasession pools all windows at the training stride
/// and shuffles them. Statistics are fitted on the training side only.
pub fn split(trials: &[Trial], spec: &SplitSpec, window: &WindowConfig) -> Result<Split> {
    spec.validate()?;
    window.validate()?;
    let (train, test, train_trials, test_trials) = match spec.kind {
        SplitKind::ByTrial => {
            let held = held_out_trials(trials, spec)?;
            let (te, tr): (Vec<Trial>, Vec<Trial>) = trials.iter().cloned().partition(|t| held.contains(&t.id));
            let train = make_windows(&tr, window.length, window.stride)?;
            let test = make_windows(&te, window.length, window.length)?;
            let ids = |v: &[Trial]| v.iter().map(|t| t.id).collect::<Vec<_>>();
            (train, test, ids(&tr), ids(&te))
        }
        SplitKind::Intrasession => {
            let pooled = make_windows(trials, window.length, window.stride)?;
            if pooled.len() < 5 {
                return Err(Error::invalid("split", format!("intrasession split needs >= 5 windows, got {}", pooled.len())));
            }
            let mut idx: Vec<usize> = (0..pooled.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
            let n_train = ((spec.train_fraction * pooled.len() as f64).round() as usize).clamp(1, pooled.len() - 1);
            let (a, b) = idx.split_at(n_train);
            let take = |ix: &[usize]| {
                let mut ix = ix.to_vec();
                ix.sort_unstable();
                WindowSet {
                    windows: ix.iter().map(|&i| pooled.windows[i].clone()).collect(),
                    n_muscles: pooled.n_muscles,
                    stats: None,
                }
            };
            let all: Vec<usize> = trials.iter().map(|t| t.id).collect();
            (take(a), take(b), all.clone(), all)
        }
    };
    finish(train, test, *spec, *window, train_trials, test_trials)
}

fn finish(mut train: WindowSet, mut test: WindowSet, spec: SplitSpec, window: WindowConfig, train_trials: Vec<usize>, test_trials: Vec<usize>) -> Result<Split> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid("split", "one side of the split is empty"));
    }
    let stats = NormStats::fit(&train.windows)?;
    train.stats = Some(stats.clone());
    test.stats = Some(stats.clone());
    let manifest = SplitManifest {
        spec,
        window,
        train_trials,
        test_trials,
        train_windows: train.windows.iter().map(Window::key).collect(),
        test_windows: test.windows.iter().map(Window::key).collect(),
        stats,
    };
    Ok(Split { train, test, manifest })
}

/// Rebuilds a split from its manifest and the prepared trials it names.
pub fn apply_manifest(trials: &[Trial], manifest: &SplitManifest) -> Result<Split> {
    let w = &manifest.window;
    let gather = |keys: &[WindowKey], stride: usize| -> Result<WindowSet> {
        let wanted: BTreeSet<usize> = keys.iter().map(|k| k.trial).collect();
        let selected: Vec<Trial> = trials.iter().filter(|t| wanted.contains(&t.id)).cloned().collect();
        if selected.len() != wanted.len() {
            return Err(Error::invalid("split manifest", "references trials missing from the dataset"));
        }
        let all = make_windows(&selected, w.length, stride)?;
        let keyset: BTreeSet<WindowKey> = keys.iter().copied().collect();
        let windows: Vec<Window> = all.windows.into_iter().filter(|x| keyset.contains(&x.key())).collect();
        if windows.len() != keys.len() {
            return Err(Error::invalid("split manifest", "window keys do not match the dataset"));
        }
        Ok(WindowSet {
            windows,
            n_muscles: all.n_muscles,
            stats: None,
        })
    };
    let test_stride = match manifest.spec.kind {
        SplitKind::ByTrial => w.length,
        SplitKind::Intrasession => w.stride,
    };
    let train = gather(&manifest.train_windows, w.stride)?;
    let test = gather(&manifest.test_windows, test_stride)?;
    let rebuilt = finish(train, test, manifest.spec, *w, manifest.train_trials.clone(), manifest.test_trials.clone())?;
    if rebuilt.manifest.stats != manifest.stats {
        return Err(Error::invalid("split manifest", "recorded statistics differ from the recomputed ones"));
    }
    Ok(rebuilt)
}
