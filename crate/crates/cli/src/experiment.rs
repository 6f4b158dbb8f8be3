//! One training/evaluation run of any method on a prepared split.

use msk_core::baselines::Baseline;
use msk_core::datasets::{make_windows, split, NormStats, Split, SplitKind, SplitSpec, WindowSet};
use msk_core::metrics::{EvalReport, LossBreakdown};
use msk_core::network::{collect_predictions, train, NetworkModel, Schedule};
use msk_core::physics::DynamicsParams;
use msk_core::simulator::{derive_seed, generate_dataset, Dataset, Trial};

use crate::config::{Architecture, ExperimentConfig, Method};
use crate::error::Result;

/// `force_1 … force_N, theta`.
pub fn output_names(n_muscles: usize) -> Vec<String> {
    (1..=n_muscles).map(|i| format!("force_{i}")).chain(["theta".to_string()]).collect()
}

pub fn generate(cfg: &ExperimentConfig) -> Result<Dataset> {
    Ok(generate_dataset(&cfg.sim, cfg.trials_per_speed, &cfg.speeds, cfg.seed)?)
}

/// A split ready for every method.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dynamics: DynamicsParams,
    pub split: Split,
    /// Per-window baselines predict one sample per window, so on a by-trial
    /// split they are scored on stride-1 windows over the held-out trials,
    /// which covers the same samples the CNN predicts.
    pub baseline_test: WindowSet,
    pub names: Vec<String>,
}

pub fn prepare(cfg: &ExperimentConfig, dataset: &Dataset, spec: &SplitSpec) -> Result<Prepared> {
    let trials: Vec<Trial> = dataset.trials.iter().map(|t| cfg.window.prepare(t)).collect();
    let split = split(&trials, spec, &cfg.window)?;
    prepared_from(dataset, &trials, split)
}

pub fn prepared_from(dataset: &Dataset, trials: &[Trial], split: Split) -> Result<Prepared> {
    let baseline_test = match split.manifest.spec.kind {
        SplitKind::ByTrial => {
            let held: Vec<Trial> = trials.iter().filter(|t| split.manifest.test_trials.contains(&t.id)).cloned().collect();
            let mut set = make_windows(&held, split.manifest.window.length, 1)?;
            set.stats = split.test.stats.clone();
            set
        }
        SplitKind::Intrasession => split.test.clone(),
    };
    Ok(Prepared {
        dynamics: dataset.config.dynamics.clone(),
        names: output_names(dataset.config.dynamics.n_muscles()),
        split,
        baseline_test,
    })
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub method: Method,
    pub fraction: f64,
    pub seed: u64,
    pub train_windows: usize,
    pub report: EvalReport,
    /// Empty for the closed-form baselines.
    pub history: Vec<LossBreakdown>,
    pub model: Option<NetworkModel>,
    pub stats: NormStats,
}

pub fn training_set(prep: &Prepared, fraction: f64, seed: u64) -> Result<WindowSet> {
    Ok(if fraction < 1.0 {
        prep.split.train.subsample(fraction, derive_seed(seed, 0x5b5))?
    } else {
        prep.split.train.clone()
    })
}

/// Trains (or fits) `method` on `fraction` of the training windows and
/// scores it on the test side. Statistics come from the subset actually
/// trained on.
pub fn run(cfg: &ExperimentConfig, prep: &Prepared, method: Method, fraction: f64, seed: u64) -> Result<RunResult> {
    let train_set = training_set(prep, fraction, seed)?;
    let stats = train_set.stats()?.clone();
    let split_name = prep.split.manifest.spec.describe();
    let (truth, pred, history, model) = if method.is_network() {
        let arch = if method == Method::Deeper { Architecture::Deeper } else { cfg.model.architecture };
        let weights = if method == Method::Pinn { cfg.loss } else { cfg.loss.without_physics() };
        let mut model = NetworkModel::build(&cfg.model.layers(arch), train_set.input_channels(), cfg.window.length, train_set.outputs(), seed)?;
        let schedule = Schedule { seed, ..cfg.schedule };
        let history = train(&mut model, &train_set, weights, &prep.dynamics, &schedule)?;
        let (t, p) = collect_predictions(&model, &prep.split.test, &stats)?;
        (t, p, history, Some(model))
    } else {
        let spec = if method == Method::Elm { cfg.elm } else { cfg.ridge };
        let model = Baseline::fit(&spec, &train_set, seed)?;
        let (t, p) = model.collect_predictions(&prep.baseline_test, &stats)?;
        (t, p, Vec::new(), None)
    };
    let report = EvalReport::compute(&prep.names, &truth, &pred, seed, split_name)?;
    Ok(RunResult {
        method,
        fraction,
        seed,
        train_windows: train_set.len(),
        report,
        history,
        model,
        stats,
    })
}
