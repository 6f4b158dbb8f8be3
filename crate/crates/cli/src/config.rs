//! INI experiment configuration. Every key has a default; unknown sections
//! or keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ini::Ini;
use msk_core::baselines::BaselineSpec;
use msk_core::datasets::{SplitKind, SplitSpec, WindowConfig};
use msk_core::metrics::LossWeights;
use msk_core::network::{BlockNorm, LayerKind, LayerSpec, Schedule};
use msk_core::simulator::{ExcitationKind, SimConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Wrist,
    Knee,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Default,
    Deeper,
}

/// A trained or fitted regressor in the comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Default CNN with the configured physics weight.
    Pinn,
    /// Default CNN, physics weight 0.
    Mse,
    /// Three conv + three FC blocks, physics weight 0.
    Deeper,
    Elm,
    Ridge,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Pinn, Method::Mse, Method::Deeper, Method::Elm, Method::Ridge];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pinn => "pinn",
            Method::Mse => "mse",
            Method::Deeper => "deeper",
            Method::Elm => "elm",
            Method::Ridge => "ridge",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn is_network(self) -> bool {
        matches!(self, Method::Pinn | Method::Mse | Method::Deeper)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Overrides every block's dropout rate.
    pub dropout: Option<f64>,
    pub conv_norm: BlockNorm,
    pub fc_norm: BlockNorm,
}

impl ModelConfig {
    pub fn layers(&self, architecture: Architecture) -> Vec<LayerSpec> {
        let mut stack = match architecture {
            Architecture::Default => LayerSpec::default_stack(),
            Architecture::Deeper => LayerSpec::deeper_stack(),
        };
        for l in &mut stack {
            match l.kind {
                LayerKind::ConvBlock => l.norm = self.conv_norm,
                LayerKind::FcBlock => l.norm = self.fc_norm,
                LayerKind::Regression => continue,
            }
            if let Some(p) = self.dropout {
                l.dropout = p;
            }
        }
        stack
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub sim: SimConfig,
    pub trials_per_speed: usize,
    pub speeds: Vec<f64>,
    pub window: WindowConfig,
    pub model: ModelConfig,
    pub elm: BaselineSpec,
    pub ridge: BaselineSpec,
    pub loss: LossWeights,
    pub schedule: Schedule,
    pub split_kind: SplitKind,
    pub train_fraction: f64,
    /// Master seed: dataset generation, split, and the single-run commands.
    pub seed: u64,
    /// Training/initialization seeds for sweeps and ablations.
    pub seeds: Vec<u64>,
    pub fractions: Vec<f64>,
    pub methods: Vec<Method>,
    pub ablate_fraction: f64,
    /// Split kinds the physics ablation is repeated on.
    pub ablate_splits: Vec<SplitKind>,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Wrist,
            sim: SimConfig::wrist_like(),
            trials_per_speed: 3,
            speeds: vec![0.5, 1.0, 1.5, 2.0],
            window: WindowConfig::default(),
            model: ModelConfig {
                architecture: Architecture::Default,
                dropout: None,
                conv_norm: BlockNorm::Time,
                fc_norm: BlockNorm::Feature,
            },
            elm: BaselineSpec::elm_default(),
            ridge: BaselineSpec::ridge_default(),
            loss: LossWeights::default(),
            schedule: Schedule::default(),
            split_kind: SplitKind::ByTrial,
            train_fraction: 0.75,
            seed: 0,
            seeds: vec![0, 1, 2, 3, 4],
            fractions: vec![0.1, 0.25, 0.5, 0.75, 1.0],
            methods: vec![Method::Pinn, Method::Mse, Method::Elm, Method::Ridge],
            ablate_fraction: 1.0,
            ablate_splits: vec![SplitKind::ByTrial, SplitKind::Intrasession],
            output: None,
        }
    }
}

const KEYS: &[(&str, &[&str])] = &[
    (
        "simulator",
        &[
            "preset",
            "trials_per_speed",
            "speeds",
            "duration",
            "emg_rate",
            "activation_tau",
            "max_force",
            "excitation",
            "base_frequency",
            "amplitude",
            "co_contraction",
            "modulation",
            "noise_band",
            "snr",
        ],
    ),
    ("dynamics", &["inertia", "damping", "gravity_coeff", "moment_arms", "dt"]),
    ("window", &["length", "stride", "decimate", "resample_frames"]),
    ("model", &["architecture", "dropout", "conv_norm", "fc_norm"]),
    ("baselines", &["elm_hidden", "elm_lambda", "ridge_lambda"]),
    ("loss", &["force_weight", "angle_weight", "physics_weight"]),
    ("schedule", &["max_iter", "lr", "momentum", "batch", "clip_norm"]),
    ("split", &["kind", "train_fraction"]),
    ("experiment", &["seed", "seeds", "fractions", "methods", "ablate_fraction", "ablate_splits", "output"]),
];

fn bad(section: &str, key: &str, reason: impl Into<String>) -> CliError {
    CliError::Config {
        key: format!("{section}.{key}"),
        reason: reason.into(),
    }
}

struct Reader<'a> {
    ini: &'a Ini,
}

impl Reader<'_> {
    fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.ini.section(Some(section)).and_then(|s| s.get(key)).map(str::trim)
    }

    fn parse<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        self.raw(section, key)
            .map(|v| v.parse::<T>().map_err(|_| bad(section, key, format!("cannot parse `{v}`"))))
            .transpose()
    }

    fn set<T: std::str::FromStr>(&self, section: &str, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.parse(section, key)? {
            *slot = v;
        }
        Ok(())
    }

    fn list<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<Vec<T>>> {
        self.raw(section, key)
            .map(|v| {
                v.split(',')
                    .map(|x| x.trim().parse::<T>().map_err(|_| bad(section, key, format!("cannot parse list item `{}`", x.trim()))))
                    .collect::<Result<Vec<T>>>()
            })
            .transpose()
    }

    /// Number or the literal `none`.
    fn optional(&self, section: &str, key: &str) -> Result<Option<Option<f64>>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some("none") => Ok(Some(None)),
            Some(v) => v.parse().map(|x| Some(Some(x))).map_err(|_| bad(section, key, format!("expected a number or `none`, got `{v}`"))),
        }
    }

    fn choice<T: Copy>(&self, section: &str, key: &str, options: &[(&str, T)]) -> Result<Option<T>> {
        self.raw(section, key)
            .map(|v| {
                options.iter().find(|(name, _)| *name == v).map(|(_, x)| *x).ok_or_else(|| {
                    let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                    bad(section, key, format!("`{v}` is not one of {}", names.join(", ")))
                })
            })
            .transpose()
    }
}

const SPLITS: &[(&str, SplitKind)] = &[("by-trial", SplitKind::ByTrial), ("intrasession", SplitKind::Intrasession)];

fn split_kind(name: &str) -> Option<SplitKind> {
    SPLITS.iter().find(|(n, _)| *n == name).map(|(_, k)| *k)
}

pub fn split_kind_name(kind: SplitKind) -> &'static str {
    SPLITS.iter().find(|(_, k)| *k == kind).map_or("by-trial", |(n, _)| n)
}

const NORMS: &[(&str, BlockNorm)] = &[("time", BlockNorm::Time), ("feature", BlockNorm::Feature), ("none", BlockNorm::None)];

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::Config {
            key: "<file>".into(),
            reason: e.to_string(),
        })?;
        for (section, props) in ini.iter() {
            let Some(name) = section else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(bad("<top>", k, "keys must live inside a [section]"));
                }
                continue;
            };
            let Some((_, known)) = KEYS.iter().find(|(s, _)| *s == name) else {
                return Err(CliError::Config {
                    key: format!("[{name}]"),
                    reason: "unknown section".into(),
                });
            };
            for (k, _) in props.iter() {
                if !known.contains(&k) {
                    return Err(bad(name, k, "unknown key"));
                }
            }
        }
        let r = Reader { ini: &ini };
        let mut c = ExperimentConfig::default();

        let s = "simulator";
        if let Some(p) = r.choice(s, "preset", &[("wrist", Preset::Wrist), ("knee", Preset::Knee)])? {
            c.preset = p;
            c.sim = match p {
                Preset::Wrist => SimConfig::wrist_like(),
                Preset::Knee => SimConfig::knee_like(),
            };
        }
        r.set(s, "trials_per_speed", &mut c.trials_per_speed)?;
        if let Some(v) = r.list(s, "speeds")? {
            c.speeds = v;
        }
        r.set(s, "duration", &mut c.sim.duration)?;
        if let Some(rate) = r.parse::<f64>(s, "emg_rate")? {
            c.sim.emg_rate = rate;
            c.sim.dynamics.dt = 1.0 / rate;
        }
        r.set(s, "activation_tau", &mut c.sim.activation_tau)?;
        if let Some(k) = r.choice(s, "excitation", &[("sinusoid-burst", ExcitationKind::SinusoidBurst), ("smoothed-noise", ExcitationKind::SmoothedNoise)])? {
            c.sim.excitation.kind = k;
        }
        r.set(s, "base_frequency", &mut c.sim.excitation.base_frequency)?;
        r.set(s, "amplitude", &mut c.sim.excitation.amplitude)?;
        r.set(s, "co_contraction", &mut c.sim.excitation.co_contraction)?;
        r.set(s, "modulation", &mut c.sim.excitation.modulation)?;
        if let Some(band) = r.list::<f64>(s, "noise_band")? {
            let [lo, hi] = band[..] else {
                return Err(bad(s, "noise_band", "expected two frequencies `low, high`"));
            };
            c.sim.noise_band = [lo, hi];
        }
        if let Some(v) = r.optional(s, "snr")? {
            c.sim.snr = v;
        }

        let d = "dynamics";
        r.set(d, "inertia", &mut c.sim.dynamics.inertia)?;
        r.set(d, "damping", &mut c.sim.dynamics.damping)?;
        r.set(d, "gravity_coeff", &mut c.sim.dynamics.gravity_coeff)?;
        if let Some(arms) = r.list(d, "moment_arms")? {
            c.sim.dynamics.moment_arms = arms;
        }
        if let Some(dt) = r.parse::<f64>(d, "dt")? {
            if r.raw(s, "emg_rate").is_some() && (dt * c.sim.emg_rate - 1.0).abs() > 1e-9 {
                return Err(bad(d, "dt", format!("disagrees with simulator.emg_rate = {}", c.sim.emg_rate)));
            }
            c.sim.dynamics.dt = dt;
            c.sim.emg_rate = 1.0 / dt;
        }
        let n = c.sim.dynamics.n_muscles();
        match r.list::<f64>(s, "max_force")? {
            Some(v) if v.len() == 1 => c.sim.max_force = vec![v[0]; n],
            Some(v) => c.sim.max_force = v,
            None => c.sim.max_force.resize(n, c.sim.max_force[0]),
        }

        let w = "window";
        r.set(w, "length", &mut c.window.length)?;
        r.set(w, "stride", &mut c.window.stride)?;
        r.set(w, "decimate", &mut c.window.decimate)?;
        match r.raw(w, "resample_frames") {
            None => {}
            Some("none") => c.window.resample_frames = None,
            Some(_) => c.window.resample_frames = r.parse(w, "resample_frames")?,
        }

        let m = "model";
        if let Some(a) = r.choice(m, "architecture", &[("default", Architecture::Default), ("deeper", Architecture::Deeper)])? {
            c.model.architecture = a;
        }
        if let Some(p) = r.parse::<f64>(m, "dropout")? {
            c.model.dropout = Some(p);
        }
        if let Some(v) = r.choice(m, "conv_norm", NORMS)? {
            c.model.conv_norm = v;
        }
        if let Some(v) = r.choice(m, "fc_norm", NORMS)? {
            c.model.fc_norm = v;
        }

        let b = "baselines";
        let (mut hidden, mut elm_lambda) = match c.elm {
            BaselineSpec::Elm { hidden, lambda } => (hidden, lambda),
            _ => unreachable!("default elm spec"),
        };
        r.set(b, "elm_hidden", &mut hidden)?;
        r.set(b, "elm_lambda", &mut elm_lambda)?;
        c.elm = BaselineSpec::Elm { hidden, lambda: elm_lambda };
        if let Some(lambda) = r.parse(b, "ridge_lambda")? {
            c.ridge = BaselineSpec::Ridge { lambda };
        }

        let l = "loss";
        r.set(l, "force_weight", &mut c.loss.force)?;
        r.set(l, "angle_weight", &mut c.loss.angle)?;
        r.set(l, "physics_weight", &mut c.loss.physics)?;

        let sc = "schedule";
        r.set(sc, "max_iter", &mut c.schedule.max_iter)?;
        r.set(sc, "lr", &mut c.schedule.lr)?;
        r.set(sc, "momentum", &mut c.schedule.momentum)?;
        r.set(sc, "batch", &mut c.schedule.batch)?;
        if let Some(v) = r.optional(sc, "clip_norm")? {
            c.schedule.clip_norm = v;
        }

        let sp = "split";
        if let Some(k) = r.choice(sp, "kind", SPLITS)? {
            c.split_kind = k;
            if k == SplitKind::Intrasession {
                c.train_fraction = 0.8;
            }
        }
        r.set(sp, "train_fraction", &mut c.train_fraction)?;

        let e = "experiment";
        r.set(e, "seed", &mut c.seed)?;
        if let Some(v) = r.list(e, "seeds")? {
            c.seeds = v;
        }
        if let Some(v) = r.list(e, "fractions")? {
            c.fractions = v;
        }
        if let Some(v) = r.list::<String>(e, "methods")? {
            c.methods = v
                .iter()
                .map(|name| Method::parse(name).ok_or_else(|| bad(e, "methods", format!("unknown method `{name}`"))))
                .collect::<Result<_>>()?;
        }
        r.set(e, "ablate_fraction", &mut c.ablate_fraction)?;
        if let Some(v) = r.list::<String>(e, "ablate_splits")? {
            c.ablate_splits = v
                .iter()
                .map(|name| split_kind(name).ok_or_else(|| bad(e, "ablate_splits", format!("unknown split kind `{name}`"))))
                .collect::<Result<_>>()?;
        }
        if let Some(p) = r.raw(e, "output") {
            c.output = Some(PathBuf::from(p));
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.window.validate()?;
        self.loss.validate()?;
        self.split_spec().validate()?;
        let check = |ok: bool, key: &str, reason: &str| if ok { Ok(()) } else { Err(bad(key.split('.').next().unwrap_or(key), key.split('.').nth(1).unwrap_or(""), reason)) };
        check(self.trials_per_speed >= 1, "simulator.trials_per_speed", "must be >= 1")?;
        check(!self.speeds.is_empty() && self.speeds.iter().all(|&v| v > 0.0), "simulator.speeds", "need at least one positive speed")?;
        check(self.schedule.lr > 0.0 && (0.0..1.0).contains(&self.schedule.momentum), "schedule.lr", "need lr > 0 and momentum in [0, 1)")?;
        check(self.schedule.batch >= 1, "schedule.batch", "must be >= 1")?;
        check(self.schedule.clip_norm.is_none_or(|v| v > 0.0), "schedule.clip_norm", "must be positive or none")?;
        check(self.model.dropout.is_none_or(|p| (0.0..1.0).contains(&p)), "model.dropout", "must be in [0, 1)")?;
        check(!self.seeds.is_empty(), "experiment.seeds", "need at least one seed")?;
        check(!self.fractions.is_empty() && self.fractions.iter().all(|&f| f > 0.0 && f <= 1.0), "experiment.fractions", "fractions must be in (0, 1]")?;
        check(!self.methods.is_empty(), "experiment.methods", "need at least one method")?;
        check(!self.ablate_splits.is_empty(), "experiment.ablate_splits", "need at least one split kind")?;
        check(self.ablate_fraction > 0.0 && self.ablate_fraction <= 1.0, "experiment.ablate_fraction", "must be in (0, 1]")?;
        if let BaselineSpec::Elm { hidden, lambda } = self.elm {
            check(hidden >= 1 && lambda >= 0.0, "baselines.elm_hidden", "need elm_hidden >= 1 and elm_lambda >= 0")?;
        }
        if let BaselineSpec::Ridge { lambda } = self.ridge {
            check(lambda > 0.0, "baselines.ridge_lambda", "must be > 0")?;
        }
        Ok(())
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            kind: self.split_kind,
            train_fraction: self.train_fraction,
            seed: self.seed,
        }
    }

    /// The fully resolved configuration, parseable back into an equal value.
    pub fn to_ini(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| x.to_string());
        let norm = |n: BlockNorm| NORMS.iter().find(|(_, v)| *v == n).map_or("time", |(s, _)| s);
        let c = &self.sim;
        let mut o = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(o, "{k} = {v}");
        };
        line("[simulator]\npreset", if self.preset == Preset::Wrist { "wrist" } else { "knee" }.into());
        line("trials_per_speed", self.trials_per_speed.to_string());
        line("speeds", list(&self.speeds));
        line("duration", c.duration.to_string());
        line("emg_rate", c.emg_rate.to_string());
        line("activation_tau", c.activation_tau.to_string());
        line("max_force", list(&c.max_force));
        line(
            "excitation",
            match c.excitation.kind {
                ExcitationKind::SinusoidBurst => "sinusoid-burst",
                ExcitationKind::SmoothedNoise => "smoothed-noise",
            }
            .into(),
        );
        line("base_frequency", c.excitation.base_frequency.to_string());
        line("amplitude", c.excitation.amplitude.to_string());
        line("co_contraction", c.excitation.co_contraction.to_string());
        line("modulation", c.excitation.modulation.to_string());
        line("noise_band", list(&c.noise_band));
        line("snr", opt(c.snr));
        line("\n[dynamics]\ninertia", c.dynamics.inertia.to_string());
        line("damping", c.dynamics.damping.to_string());
        line("gravity_coeff", c.dynamics.gravity_coeff.to_string());
        line("moment_arms", list(&c.dynamics.moment_arms));
        line("dt", c.dynamics.dt.to_string());
        line("\n[window]\nlength", self.window.length.to_string());
        line("stride", self.window.stride.to_string());
        line("decimate", self.window.decimate.to_string());
        line("resample_frames", self.window.resample_frames.map_or("none".into(), |f| f.to_string()));
        line("\n[model]\narchitecture", if self.model.architecture == Architecture::Default { "default" } else { "deeper" }.into());
        if let Some(p) = self.model.dropout {
            line("dropout", p.to_string());
        }
        line("conv_norm", norm(self.model.conv_norm).into());
        line("fc_norm", norm(self.model.fc_norm).into());
        if let (BaselineSpec::Elm { hidden, lambda }, BaselineSpec::Ridge { lambda: rl }) = (self.elm, self.ridge) {
            line("\n[baselines]\nelm_hidden", hidden.to_string());
            line("elm_lambda", lambda.to_string());
            line("ridge_lambda", rl.to_string());
        }
        line("\n[loss]\nforce_weight", self.loss.force.to_string());
        line("angle_weight", self.loss.angle.to_string());
        line("physics_weight", self.loss.physics.to_string());
        line("\n[schedule]\nmax_iter", self.schedule.max_iter.to_string());
        line("lr", self.schedule.lr.to_string());
        line("momentum", self.schedule.momentum.to_string());
        line("batch", self.schedule.batch.to_string());
        line("clip_norm", opt(self.schedule.clip_norm));
        line("\n[split]\nkind", split_kind_name(self.split_kind).into());
        line("train_fraction", self.train_fraction.to_string());
        line("\n[experiment]\nseed", self.seed.to_string());
        line("seeds", self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(", "));
        line("fractions", list(&self.fractions));
        line("methods", self.methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(", "));
        line("ablate_fraction", self.ablate_fraction.to_string());
        line("ablate_splits", self.ablate_splits.iter().map(|k| split_kind_name(*k)).collect::<Vec<_>>().join(", "));
        if let Some(p) = &self.output {
            line("output", p.display().to_string());
        }
        o
    }
}
