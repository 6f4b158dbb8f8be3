//! Ground-truth trial generation.
//!
//! A trial runs the chain excitation → first-order activation → force →
//! joint torque → RK4 integration of the joint, then synthesizes raw
//! surface EMG from the activations and recovers the envelope through the
//! conditioning pipeline. Every trial is checked against the finite-
//! difference equation-of-motion residual before it is accepted.

pub mod filters;
pub mod io;

use std::f64::consts::PI;

use msk_autograd::Tensor;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{eom_residual_values, DynamicsParams, JointState};
use filters::Cascade;

/// Per-muscle time series, indexed `[muscle][sample]`.
pub type Channels = Vec<Vec<f64>>;

/// Relative residual bound a trial must meet: `max|ρ| ≤ 1e-3·max|τ|`.
pub const RESIDUAL_TOLERANCE: f64 = 1e-3;

const BANDPASS_HZ: (f64, f64) = (20.0, 450.0);
const ENVELOPE_HZ: f64 = 6.0;
const MIN_PIPELINE_RATE: f64 = 900.0;
const CALIBRATION_SECONDS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExcitationKind {
    /// Raised-cosine-squared bursts, flexors and extensors in antiphase.
    SinusoidBurst,
    /// Low-pass filtered Gaussian drive split by sign between the groups.
    SmoothedNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationSpec {
    pub kind: ExcitationKind,
    /// Burst frequency (Hz) at speed 1; scaled linearly by the speed tag.
    pub base_frequency: f64,
    /// Peak excitation.
    pub amplitude: f64,
    /// Tonic co-contraction as a fraction of `amplitude`, in `[0, 1)`.
    pub co_contraction: f64,
    /// Depth of slow random amplitude modulation, in `[0, 1)`.
    pub modulation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dynamics: DynamicsParams,
    /// Peak isometric force per muscle (N).
    pub max_force: Vec<f64>,
    /// Excitation-to-activation time constant (s).
    pub activation_tau: f64,
    pub excitation: ExcitationSpec,
    /// Trial length (s).
    pub duration: f64,
    /// EMG sampling rate (Hz); must equal `1 / dynamics.dt`.
    pub emg_rate: f64,
    /// Pass band of the synthetic motor-unit noise (Hz).
    pub noise_band: [f64; 2],
    /// Signal-to-noise power ratio at full activation; `None` is noiseless.
    pub snr: Option<f64>,
}

impl SimConfig {
    pub fn wrist_like() -> Self {
        Self {
            dynamics: DynamicsParams::wrist_like(),
            max_force: vec![200.0; 5],
            activation_tau: 0.05,
            excitation: ExcitationSpec {
                kind: ExcitationKind::SinusoidBurst,
                base_frequency: 0.2,
                amplitude: 0.1,
                co_contraction: 0.15,
                modulation: 0.3,
            },
            duration: 20.0,
            emg_rate: 1000.0,
            noise_band: [30.0, 300.0],
            snr: Some(1000.0),
        }
    }

    pub fn knee_like() -> Self {
        Self {
            dynamics: DynamicsParams::knee_like(),
            max_force: vec![200.0; 2],
            ..Self::wrist_like()
        }
    }

    pub fn n_samples(&self) -> usize {
        (self.duration * self.emg_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.dynamics.validate()?;
        let n = self.dynamics.n_muscles();
        if self.max_force.len() != n {
            return Err(Error::Dimension {
                op: "sim config max_force",
                expected: n,
                found: self.max_force.len(),
            });
        }
        if self.max_force.iter().any(|&f| !(f > 0.0)) {
            return Err(Error::invalid("sim config", "max_force must be positive"));
        }
        if !(self.activation_tau > 0.0) {
            return Err(Error::invalid("sim config", "activation_tau must be positive"));
        }
        if (self.emg_rate * self.dynamics.dt - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "sim config",
                format!("emg_rate {} disagrees with dt {}", self.emg_rate, self.dynamics.dt),
            ));
        }
        if self.n_samples() < 3 {
            return Err(Error::invalid("sim config", "duration·rate must give at least 3 samples"));
        }
        let e = &self.excitation;
        if !(0.0..=1.0).contains(&e.amplitude) || !(0.0..1.0).contains(&e.co_contraction) || !(0.0..1.0).contains(&e.modulation) {
            return Err(Error::invalid("excitation", "amplitude in [0,1], co_contraction and modulation in [0,1)"));
        }
        if !(e.base_frequency > 0.0) {
            return Err(Error::invalid("excitation", "base_frequency must be positive"));
        }
        let [lo, hi] = self.noise_band;
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::invalid("sim config", "noise_band must satisfy 0 < low < high"));
        }
        if let Some(snr) = self.snr {
            if !(snr > 0.0) {
                return Err(Error::invalid("sim config", "snr must be positive"));
            }
        }
        Ok(())
    }
}

/// Independent sub-seed for one stream of a seeded process.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Excitation `u ∈ [0,1]` for each muscle. Muscles with positive moment
/// arms (flexors) fire in antiphase with those with negative arms.
pub fn gen_excitation(spec: &ExcitationSpec, speed: f64, samples: usize, dt: f64, moment_arms: &[f64], seed: u64) -> Result<Channels> {
    let n = moment_arms.len();
    if !(2..=5).contains(&n) {
        return Err(Error::invalid("excitation", format!("2 to 5 muscles are supported, got {n}")));
    }
    if !(moment_arms.iter().any(|&r| r > 0.0) && moment_arms.iter().any(|&r| r < 0.0)) {
        return Err(Error::invalid("excitation", "need at least one agonist/antagonist pair"));
    }
    if !(speed > 0.0) {
        return Err(Error::invalid("excitation", format!("speed must be positive, got {speed}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let freq = spec.base_frequency * speed;
    let tonic = spec.co_contraction;

    // slow amplitude modulation per muscle, defined in continuous time
    let modulators: Vec<Vec<(f64, f64)>> = (0..n)
        .map(|_| (0..3).map(|_| (rng.random_range(0.05..0.25), rng.random_range(0.0..2.0 * PI))).collect())
        .collect();
    let gains: Vec<f64> = (0..n).map(|_| rng.random_range(0.75..1.0)).collect();
    let modulation = |m: usize, t: f64| {
        let s: f64 = modulators[m].iter().map(|(f, p)| (2.0 * PI * f * t + p).sin()).sum();
        1.0 + spec.modulation * s / 3.0
    };

    let drive: Box<dyn Fn(usize, usize) -> f64> = match spec.kind {
        ExcitationKind::SinusoidBurst => {
            let phase0 = rng.random_range(0.0..2.0 * PI);
            let offsets: Vec<f64> = (0..n).map(|_| rng.random_range(-0.25..0.25)).collect();
            let arms = moment_arms.to_vec();
            Box::new(move |m, i| {
                let t = i as f64 * dt;
                let anti = if arms[m] > 0.0 { 0.0 } else { PI };
                let s = (2.0 * PI * freq * t + phase0 + offsets[m] + anti).sin();
                (0.5 * (1.0 + s)).powi(2)
            })
        }
        ExcitationKind::SmoothedNoise => {
            let lp = Cascade::lowpass(freq.min(0.45 / dt), 1.0 / dt);
            let preroll = (10.0 / (freq * dt)).ceil() as usize;
            let white: Vec<f64> = (0..preroll + samples).map(|_| rng.sample(StandardNormal)).collect();
            let scale = 1.0 / lp.noise_gain(preroll.max(4096)).sqrt();
            let smooth: Vec<f64> = lp.apply(&white)[preroll..].iter().map(|v| v * scale).collect();
            let arms = moment_arms.to_vec();
            Box::new(move |m, i| {
                let s = if arms[m] > 0.0 { smooth[i] } else { -smooth[i] };
                (s / 2.0).clamp(0.0, 1.0)
            })
        }
    };

    Ok((0..n)
        .map(|m| {
            (0..samples)
                .map(|i| {
                    let phasic = (1.0 - tonic) * gains[m] * modulation(m, i as f64 * dt) * drive(m, i);
                    (spec.amplitude * (tonic + phasic)).clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect())
}

/// First-order activation lag, integrated exactly for piecewise-constant
/// excitation: `a[t+1] = u[t] + (a[t] − u[t])·exp(−Δt/τ)`, `a[0] = u[0]`.
pub fn activation_dynamics(u: &Channels, tau: f64, dt: f64) -> Result<Channels> {
    if !(tau > dt) {
        return Err(Error::invalid("activation", format!("time constant {tau} must exceed dt {dt}")));
    }
    let decay = (-dt / tau).exp();
    Ok(u.iter()
        .map(|ch| {
            let mut a = Vec::with_capacity(ch.len());
            if let Some(&first) = ch.first() {
                a.push(first);
                for i in 1..ch.len() {
                    let prev = a[i - 1];
                    a.push((ch[i - 1] + (prev - ch[i - 1]) * decay).clamp(0.0, 1.0));
                }
            }
            a
        })
        .collect())
}

/// Forces, joint angle and torque produced by activations `a`.
#[derive(Debug, Clone)]
pub struct Integration {
    pub forces: Channels,
    pub theta: Vec<f64>,
    pub omega: Vec<f64>,
    pub tau: Vec<f64>,
}

/// Activation-proportional forces drive the joint; `θ` is integrated with
/// RK4 from rest, the torque linearly interpolated between samples.
pub fn integrate_trial(activation: &Channels, config: &SimConfig) -> Result<Integration> {
    config.validate()?;
    let p = &config.dynamics;
    if activation.len() != p.n_muscles() {
        return Err(Error::Dimension {
            op: "integrate_trial",
            expected: p.n_muscles(),
            found: activation.len(),
        });
    }
    let samples = activation.first().map_or(0, Vec::len);
    let forces: Channels = activation
        .iter()
        .zip(&config.max_force)
        .map(|(a, &fmax)| a.iter().map(|v| v * fmax).collect())
        .collect();
    let tau: Vec<f64> = (0..samples)
        .map(|t| forces.iter().zip(&p.moment_arms).map(|(f, r)| r * f[t]).sum())
        .collect();

    let dt = p.dt;
    let deriv = |s: JointState, torque: f64| (s.omega, p.acceleration(s, torque));
    let mut theta = Vec::with_capacity(samples);
    let mut omega = Vec::with_capacity(samples);
    let mut state = JointState::default();
    for t in 0..samples {
        theta.push(state.theta);
        omega.push(state.omega);
        if state.theta.abs() > 1e3 || !state.theta.is_finite() {
            return Err(Error::Unstable {
                step: t,
                theta: state.theta,
                config: format!("{config:?}"),
            });
        }
        if t + 1 == samples {
            break;
        }
        let (tau0, tau1) = (tau[t], tau[t + 1]);
        let tau_mid = 0.5 * (tau0 + tau1);
        let step = |s: JointState, k: (f64, f64), h: f64| JointState {
            theta: s.theta + h * k.0,
            omega: s.omega + h * k.1,
        };
        let k1 = deriv(state, tau0);
        let k2 = deriv(step(state, k1, dt / 2.0), tau_mid);
        let k3 = deriv(step(state, k2, dt / 2.0), tau_mid);
        let k4 = deriv(step(state, k3, dt), tau1);
        state = JointState {
            theta: state.theta + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
            omega: state.omega + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        };
    }
    Ok(Integration { forces, theta, omega, tau })
}

/// Raw EMG: activation-modulated band-limited unit-variance noise plus
/// white measurement noise of variance `1/snr`.
pub fn synth_emg(activation: &Channels, rate: f64, band: [f64; 2], snr: Option<f64>, seed: u64) -> Result<Channels> {
    if rate < 2.0 * band[1] {
        return Err(Error::invalid(
            "emg synthesis",
            format!("rate {rate} Hz is below the Nyquist rate of the {} Hz band edge", band[1]),
        ));
    }
    let shaping = Cascade::bandpass(band[0], band[1], rate);
    let scale = 1.0 / shaping.noise_gain(8192).sqrt();
    let sigma = snr.map_or(0.0, |s| (1.0 / s).sqrt());
    let preroll = (20.0 * rate / band[0]).ceil() as usize;
    Ok(activation
        .iter()
        .enumerate()
        .map(|(m, a)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, m as u64));
            let white: Vec<f64> = (0..preroll + a.len()).map(|_| rng.sample(StandardNormal)).collect();
            let carrier = shaping.apply(&white);
            a.iter()
                .zip(&carrier[preroll..])
                .map(|(&act, &c)| {
                    let noise: f64 = if sigma > 0.0 { rng.sample::<f64, _>(StandardNormal) * sigma } else { 0.0 };
                    act * c * scale + noise
                })
                .collect()
        })
        .collect())
}

fn pad_for(corner_hz: f64, rate: f64) -> usize {
    (3.0 * rate / corner_hz).ceil() as usize
}

/// Band-pass (20–450 Hz), full-wave rectification and 6 Hz low-pass, all
/// zero-phase, without amplitude normalization.
pub fn raw_envelope(raw: &Channels, rate: f64) -> Result<Channels> {
    if !(rate > MIN_PIPELINE_RATE) {
        return Err(Error::invalid(
            "emg pipeline",
            format!("rate {rate} Hz cannot support the {} Hz band-pass edge", BANDPASS_HZ.1),
        ));
    }
    let bp = Cascade::bandpass(BANDPASS_HZ.0, BANDPASS_HZ.1, rate);
    let lp = Cascade::lowpass(ENVELOPE_HZ, rate);
    Ok(raw
        .iter()
        .map(|ch| {
            let rectified: Vec<f64> = bp.filtfilt(ch, pad_for(BANDPASS_HZ.0, rate)).iter().map(|v| v.abs()).collect();
            lp.filtfilt(&rectified, pad_for(ENVELOPE_HZ, rate))
        })
        .collect())
}

/// Full conditioning pipeline: [`raw_envelope`], division by the MVC
/// reference and clipping to `[0, 1]`.
pub fn emg_pipeline(raw: &Channels, rate: f64, mvc: &[f64]) -> Result<Channels> {
    if mvc.len() != raw.len() {
        return Err(Error::Dimension {
            op: "emg pipeline mvc",
            expected: raw.len(),
            found: mvc.len(),
        });
    }
    if let Some(bad) = mvc.iter().find(|&&m| !(m > 0.0)) {
        return Err(Error::invalid("emg pipeline", format!("MVC reference must be positive, got {bad}")));
    }
    let env = raw_envelope(raw, rate)?;
    Ok(env
        .into_iter()
        .zip(mvc)
        .map(|(ch, &m)| ch.into_iter().map(|v| (v / m).clamp(0.0, 1.0)).collect())
        .collect())
}

/// Peak envelope per muscle during a sustained full-activation trial,
/// ignoring the first and last tenth where edge effects live.
pub fn calibrate_mvc(config: &SimConfig, seed: u64) -> Result<Vec<f64>> {
    let samples = (CALIBRATION_SECONDS * config.emg_rate).round() as usize;
    let full = vec![vec![1.0; samples]; config.dynamics.n_muscles()];
    let raw = synth_emg(&full, config.emg_rate, config.noise_band, config.snr, seed)?;
    let env = raw_envelope(&raw, config.emg_rate)?;
    let (lo, hi) = (samples / 10, samples - samples / 10);
    Ok(env.iter().map(|ch| ch[lo..hi].iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect())
}

/// One simulated motion episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub id: usize,
    pub speed: f64,
    pub seed: u64,
    pub dt: f64,
    pub time: Vec<f64>,
    /// Not stored in trial CSV files.
    pub excitation: Option<Channels>,
    /// Not stored in trial CSV files.
    pub activation: Option<Channels>,
    pub emg_raw: Channels,
    pub emg_env: Channels,
    pub forces: Channels,
    pub theta: Vec<f64>,
    pub tau: Vec<f64>,
}

/// Outcome of checking a trial against the equation of motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualAudit {
    pub max_residual: f64,
    pub max_torque: f64,
}

impl ResidualAudit {
    pub fn ratio(&self) -> f64 {
        if self.max_torque > 0.0 {
            self.max_residual / self.max_torque
        } else {
            self.max_residual
        }
    }

    pub fn passes(&self) -> bool {
        self.max_residual <= RESIDUAL_TOLERANCE * self.max_torque + 1e-12
    }
}

impl Trial {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn n_muscles(&self) -> usize {
        self.forces.len()
    }

    /// Forces as a `T × N` tensor.
    pub fn forces_tensor(&self) -> Tensor {
        let (t, n) = (self.len(), self.n_muscles());
        let data = (0..t * n).map(|i| self.forces[i % n][i / n]).collect();
        Tensor::matrix(t, n, data).expect("forces are rectangular")
    }

    pub fn audit(&self, params: &DynamicsParams) -> Result<ResidualAudit> {
        let rho = eom_residual_values(&self.theta, &self.forces_tensor(), &params.with_dt(self.dt))?;
        Ok(ResidualAudit {
            max_residual: rho.iter().fold(0.0, |m, v| m.max(v.abs())),
            max_torque: self.tau.iter().fold(0.0, |m, v| m.max(v.abs())),
        })
    }

    /// Checks the trial invariants and returns the residual audit.
    pub fn validate(&self, params: &DynamicsParams) -> Result<ResidualAudit> {
        let fail = |reason: String| Error::TrialInvariant { trial: self.id, reason };
        let n = params.n_muscles();
        let t = self.len();
        for (name, ch) in [("emg_raw", &self.emg_raw), ("emg_env", &self.emg_env), ("forces", &self.forces)] {
            if ch.len() != n || ch.iter().any(|c| c.len() != t) {
                return Err(fail(format!("{name} is not {n} channels of {t} samples")));
            }
        }
        if self.time.len() != t || self.tau.len() != t {
            return Err(fail("time/tau length mismatch".into()));
        }
        if self.forces.iter().flatten().any(|&f| !(f >= 0.0) || !f.is_finite()) {
            return Err(fail("forces must be finite and non-negative".into()));
        }
        if self.theta.iter().chain(&self.tau).any(|v| !v.is_finite()) {
            return Err(fail("theta/tau must be finite".into()));
        }
        if self.emg_env.iter().flatten().any(|&e| !(0.0..=1.0).contains(&e)) {
            return Err(fail("envelope must lie in [0, 1]".into()));
        }
        let audit = self.audit(params)?;
        if !audit.passes() {
            return Err(fail(format!(
                "max |residual| {:.3e} exceeds {:.0e}·max|tau| = {:.3e}",
                audit.max_residual,
                RESIDUAL_TOLERANCE,
                RESIDUAL_TOLERANCE * audit.max_torque
            )));
        }
        Ok(audit)
    }
}

/// Runs the full chain for one trial.
pub fn simulate_trial(config: &SimConfig, id: usize, speed: f64, seed: u64, mvc: &[f64]) -> Result<Trial> {
    config.validate()?;
    let samples = config.n_samples();
    let dt = config.dynamics.dt;
    let u = gen_excitation(&config.excitation, speed, samples, dt, &config.dynamics.moment_arms, derive_seed(seed, 1))?;
    let a = activation_dynamics(&u, config.activation_tau, dt)?;
    let Integration { forces, theta, tau, .. } = integrate_trial(&a, config)?;
    let emg_raw = synth_emg(&a, config.emg_rate, config.noise_band, config.snr, derive_seed(seed, 2))?;
    let emg_env = emg_pipeline(&emg_raw, config.emg_rate, mvc)?;
    Ok(Trial {
        id,
        speed,
        seed,
        dt,
        time: (0..samples).map(|i| i as f64 * dt).collect(),
        excitation: Some(u),
        activation: Some(a),
        emg_raw,
        emg_env,
        forces,
        theta,
        tau,
    })
}

/// Simulated trials together with the MVC reference used for their envelopes.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: SimConfig,
    pub seed: u64,
    pub mvc: Vec<f64>,
    pub trials: Vec<Trial>,
}

impl Dataset {
    pub fn speeds(&self) -> Vec<f64> {
        let mut s: Vec<f64> = Vec::new();
        for t in &self.trials {
            if !s.contains(&t.speed) {
                s.push(t.speed);
            }
        }
        s
    }
}

/// `n_trials` trials per speed tag. Any trial failing its invariants aborts
/// generation.
pub fn generate_dataset(config: &SimConfig, n_trials: usize, speeds: &[f64], seed: u64) -> Result<Dataset> {
    config.validate()?;
    if n_trials == 0 || speeds.is_empty() {
        return Err(Error::invalid("dataset", "need at least one trial and one speed"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mvc = calibrate_mvc(config, rng.next_u64())?;
    let mut trials = Vec::with_capacity(n_trials * speeds.len());
    for &speed in speeds {
        for _ in 0..n_trials {
            let id = trials.len();
            let trial = simulate_trial(config, id, speed, rng.next_u64(), &mvc)?;
            trial.validate(&config.dynamics)?;
            trials.push(trial);
        }
    }
    Ok(Dataset {
        config: config.clone(),
        seed,
        mvc,
        trials,
    })
}
