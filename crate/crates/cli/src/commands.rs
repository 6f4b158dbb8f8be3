//! The five subcommands. Each writes into its own directory under the
//! output root and echoes the resolved configuration there.

use std::fs;
use std::path::{Path, PathBuf};

use msk_core::datasets::{apply_manifest, SplitKind, SplitManifest, SplitSpec};
use msk_core::metrics::{fmt_num, EvalReport, LossBreakdown};
use msk_core::network::{collect_predictions, load_checkpoint, save_checkpoint};
use msk_core::simulator::io::{load_dataset, read_json, save_dataset, write_json};
use msk_core::simulator::{Dataset, Trial};
use rayon::prelude::*;

use crate::config::{split_kind_name, ExperimentConfig, Method};
use crate::error::{io_err, CliError, Result};
use crate::experiment::{self, prepare, prepared_from, RunResult};
use crate::stats::{mean, spearman, std_dev};
use crate::svg::{Chart, Series};

#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
}

impl Context {
    fn dir(&self, name: &str) -> Result<PathBuf> {
        let d = self.out.join(name);
        fs::create_dir_all(&d).map_err(io_err(&d))?;
        let p = d.join("config.ini");
        fs::write(&p, self.cfg.to_ini()).map_err(io_err(&p))?;
        Ok(d)
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.out.join("dataset")
    }

    /// The saved dataset when present, otherwise one generated from the
    /// configuration (identical to what `generate` would write).
    pub fn dataset(&self, dir: Option<&Path>) -> Result<Dataset> {
        let dir = dir.map_or_else(|| self.dataset_dir(), Path::to_path_buf);
        if dir.join(msk_core::simulator::io::MANIFEST_FILE).exists() {
            Ok(load_dataset(&dir)?)
        } else {
            experiment::generate(&self.cfg)
        }
    }
}

struct Table {
    path: PathBuf,
    w: csv::Writer<fs::File>,
}

impl Table {
    fn create(path: PathBuf, header: &[&str]) -> Result<Self> {
        let w = csv::Writer::from_path(&path).map_err(|source| CliError::Csv {
            path: path.display().to_string(),
            source,
        })?;
        let mut t = Self { path, w };
        t.row(header.iter().map(|s| s.to_string()))?;
        Ok(t)
    }

    fn row(&mut self, fields: impl IntoIterator<Item = String>) -> Result<()> {
        let path = &self.path;
        self.w.write_record(fields).map_err(|source| CliError::Csv {
            path: path.display().to_string(),
            source,
        })
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(io_err(&self.path))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    Ok(report.write_csv(f)?)
}

#[derive(Debug, Clone)]
pub struct AuditRow {
    pub trial: usize,
    pub speed: f64,
    pub max_residual: f64,
    pub max_torque: f64,
    pub passes: bool,
}

/// Simulates the dataset, saves it and audits every trial's equation-of-
/// motion residual.
pub fn generate(ctx: &Context) -> Result<Vec<AuditRow>> {
    let ds = experiment::generate(&ctx.cfg)?;
    let dir = ctx.dataset_dir();
    save_dataset(&ds, &dir)?;
    let p = dir.join("config.ini");
    write_text(&p, &ctx.cfg.to_ini())?;
    let mut rows = Vec::new();
    let mut t = Table::create(dir.join("audit.csv"), &["trial", "speed", "max_residual", "max_torque", "ratio", "pass"])?;
    for trial in &ds.trials {
        let a = trial.audit(&ds.config.dynamics)?;
        t.row([
            trial.id.to_string(),
            fmt_num(trial.speed),
            fmt_num(a.max_residual),
            fmt_num(a.max_torque),
            fmt_num(a.ratio()),
            a.passes().to_string(),
        ])?;
        rows.push(AuditRow {
            trial: trial.id,
            speed: trial.speed,
            max_residual: a.max_residual,
            max_torque: a.max_torque,
            passes: a.passes(),
        });
    }
    t.finish()?;
    Ok(rows)
}

fn write_history(history: &[LossBreakdown], dir: &Path, title: &str) -> Result<()> {
    let mut t = Table::create(dir.join("history.csv"), &["iteration", "L_F", "L_theta", "L_P", "L_total"])?;
    for (i, h) in history.iter().enumerate() {
        t.row([i.to_string(), fmt_num(h.force), fmt_num(h.angle), fmt_num(h.physics), fmt_num(h.total)])?;
    }
    t.finish()?;
    let x: Vec<f64> = (0..history.len()).map(|i| i as f64).collect();
    let col = |f: fn(&LossBreakdown) -> f64| history.iter().map(f).collect::<Vec<_>>();
    let mut series = vec![
        Series::line("L_F", x.clone(), col(|h| h.force)),
        Series::line("L_theta", x.clone(), col(|h| h.angle)),
    ];
    if history.iter().any(|h| h.weights.physics > 0.0) {
        series.push(Series::line("L_P", x.clone(), col(|h| h.physics)));
    }
    series.push(Series::line("L_total", x, col(|h| h.total)));
    let chart = Chart {
        title: title.into(),
        x_label: "iteration".into(),
        y_label: "loss".into(),
        series,
        log_y: true,
    };
    write_text(&dir.join("loss.svg"), &chart.render())
}

/// Trains one network on the full training split and saves the checkpoint,
/// split manifest and loss history.
pub fn train(ctx: &Context, method: Method, data: Option<&Path>) -> Result<RunResult> {
    if !method.is_network() {
        return Err(CliError::Usage(format!("`train` fits networks; `{}` is evaluated by sweep-datasize", method.name())));
    }
    let ds = ctx.dataset(data)?;
    let prep = prepare(&ctx.cfg, &ds, &ctx.cfg.split_spec())?;
    let dir = ctx.dir("train")?;
    write_json(&prep.split.manifest, &dir.join("split.json"))?;
    let r = experiment::run(&ctx.cfg, &prep, method, 1.0, ctx.cfg.seed)?;
    write_history(&r.history, &dir, &format!("training loss ({})", method.name()))?;
    let model = r.model.as_ref().expect("network run keeps its model");
    save_checkpoint(model, &r.stats, &dir.join("checkpoint"))?;
    Ok(r)
}

/// Scores a saved checkpoint on the test side of its saved split.
pub fn eval(ctx: &Context, train_dir: Option<&Path>, data: Option<&Path>) -> Result<EvalReport> {
    let train_dir = train_dir.map_or_else(|| ctx.out.join("train"), Path::to_path_buf);
    let (model, stats) = load_checkpoint(&train_dir.join("checkpoint"))?;
    let manifest: SplitManifest = read_json(&train_dir.join("split.json"))?;
    let ds = ctx.dataset(data)?;
    let trials: Vec<Trial> = ds.trials.iter().map(|t| manifest.window.prepare(t)).collect();
    let split = apply_manifest(&trials, &manifest)?;
    let prep = prepared_from(&ds, &trials, split)?;
    let (truth, pred) = collect_predictions(&model, &prep.split.test, &stats)?;
    let report = EvalReport::compute(&prep.names, &truth, &pred, model.seed, manifest.spec.describe())?;
    let dir = ctx.dir("eval")?;
    write_report(&report, &dir.join("report.csv"))?;
    // one held-out trial's worth of samples keeps the figures readable
    let first = prep.split.test.windows.first().map_or(0, |w| w.trial);
    let n = prep.split.test.windows.iter().take_while(|w| w.trial == first).map(|w| w.length()).sum::<usize>();
    let dt = prep.split.test.windows.first().map_or(1.0, |w| w.dt);
    let x: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
    for (j, name) in prep.names.iter().enumerate() {
        let chart = Chart {
            title: format!("{name}: test trial {first}"),
            x_label: "time in window sequence (s)".into(),
            y_label: if name == "theta" { "rad".into() } else { "N".into() },
            series: vec![Series::line("truth", x.clone(), truth[j][..n].to_vec()), Series::line("predicted", x.clone(), pred[j][..n].to_vec())],
            log_y: false,
        };
        write_text(&dir.join(format!("{name}.svg")), &chart.render())?;
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub fraction: f64,
    pub method: Method,
    pub seed: u64,
    pub train_windows: usize,
    pub outcome: std::result::Result<EvalReport, String>,
}

impl SweepRow {
    pub fn nrmse(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(EvalReport::mean_nrmse)
    }
}

#[derive(Debug, Clone)]
pub struct TrendRow {
    pub method: Method,
    pub spearman: Option<f64>,
}

impl TrendRow {
    /// Error should not grow with more data.
    pub fn passes(&self) -> bool {
        self.spearman.is_some_and(|r| r <= 0.0)
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub trends: Vec<TrendRow>,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub fn nrmse_of(&self, method: Method, fraction: f64) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.method == method && r.fraction == fraction)
            .filter_map(SweepRow::nrmse)
            .collect()
    }
}

/// Runs every fraction × method × seed. Failed runs are recorded and the
/// sweep carries on.
pub fn sweep_datasize(ctx: &Context, data: Option<&Path>) -> Result<SweepOutcome> {
    let cfg = &ctx.cfg;
    let ds = ctx.dataset(data)?;
    let prep = prepare(cfg, &ds, &cfg.split_spec())?;
    let dir = ctx.dir("sweep")?;
    let jobs: Vec<(f64, Method, u64)> = cfg
        .fractions
        .iter()
        .flat_map(|&f| cfg.methods.iter().flat_map(move |&m| cfg.seeds.iter().map(move |&s| (f, m, s))))
        .collect();
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(fraction, method, seed)| {
            let train_windows = experiment::training_set(&prep, fraction, seed).map_or(0, |s| s.len());
            let outcome = experiment::run(cfg, &prep, method, fraction, seed).map(|r| r.report).map_err(|e| e.to_string());
            SweepRow {
                fraction,
                method,
                seed,
                train_windows,
                outcome,
            }
        })
        .collect();

    let mut t = Table::create(dir.join("runs.csv"), &["fraction", "method", "seed", "train_windows", "status", "mean_rmse", "mean_cc", "mean_nrmse"])?;
    for r in &rows {
        let (status, vals) = match &r.outcome {
            Ok(rep) => ("ok".to_string(), [rep.mean_rmse(), rep.mean_cc(), rep.mean_nrmse()]),
            Err(e) => (format!("error: {e}"), [f64::NAN; 3]),
        };
        t.row([fmt_num(r.fraction), r.method.name().into(), r.seed.to_string(), r.train_windows.to_string(), status].into_iter().chain(vals.map(fmt_num)))?;
    }
    t.finish()?;

    let mut t = Table::create(dir.join("summary.csv"), &["fraction", "method", "n", "mean_nrmse", "std_nrmse"])?;
    let mut series = Vec::new();
    for &m in &cfg.methods {
        let (mut ys, mut es) = (Vec::new(), Vec::new());
        for &f in &cfg.fractions {
            let v: Vec<f64> = rows.iter().filter(|r| r.method == m && r.fraction == f).filter_map(SweepRow::nrmse).collect();
            let (mu, sd) = (mean(&v), std_dev(&v));
            t.row([fmt_num(f), m.name().into(), v.len().to_string(), fmt_num(mu), fmt_num(sd)])?;
            ys.push(mu);
            es.push(sd);
        }
        series.push(Series {
            name: m.name().into(),
            x: cfg.fractions.clone(),
            y: ys,
            err: Some(es),
            markers: true,
        });
    }
    t.finish()?;

    let mut trends = Vec::new();
    let mut t = Table::create(dir.join("trend.csv"), &["method", "spearman", "non_increasing"])?;
    for &m in &cfg.methods {
        let (x, y): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r.method == m).filter_map(|r| r.nrmse().map(|v| (r.fraction, v))).unzip();
        let row = TrendRow { method: m, spearman: spearman(&x, &y) };
        t.row([m.name().into(), fmt_num(row.spearman.unwrap_or(f64::NAN)), row.passes().to_string()])?;
        trends.push(row);
    }
    t.finish()?;

    let chart = Chart {
        title: format!("test nRMSE vs training fraction ({})", cfg.split_spec().describe()),
        x_label: "fraction of training windows".into(),
        y_label: "mean nRMSE".into(),
        series,
        log_y: false,
    };
    write_text(&dir.join("nrmse_vs_fraction.svg"), &chart.render())?;
    Ok(SweepOutcome { rows, trends })
}

#[derive(Debug, Clone)]
pub struct PairedRow {
    pub split: SplitKind,
    pub seed: u64,
    pub physics: EvalReport,
    pub mse: EvalReport,
}

impl PairedRow {
    /// Negative when the physics term helps.
    pub fn delta(&self) -> f64 {
        self.physics.mean_nrmse() - self.mse.mean_nrmse()
    }
}

/// Same architecture, data and seeds with the configured physics weight and
/// with it set to zero; repeated for each split kind.
pub fn ablate(ctx: &Context, data: Option<&Path>) -> Result<Vec<PairedRow>> {
    let cfg = &ctx.cfg;
    if cfg.loss.physics <= 0.0 {
        return Err(CliError::Config {
            key: "loss.physics_weight".into(),
            reason: "ablation compares against physics_weight = 0, so it must be > 0 here".into(),
        });
    }
    let ds = ctx.dataset(data)?;
    let dir = ctx.dir("ablate")?;
    let mut rows = Vec::new();
    for &kind in &cfg.ablate_splits {
        let spec = SplitSpec {
            kind,
            train_fraction: if kind == cfg.split_kind {
                cfg.train_fraction
            } else if kind == SplitKind::Intrasession {
                0.8
            } else {
                0.75
            },
            seed: cfg.seed,
        };
        let prep = prepare(cfg, &ds, &spec)?;
        let jobs: Vec<(u64, Method)> = cfg.seeds.iter().flat_map(|&s| [(s, Method::Pinn), (s, Method::Mse)]).collect();
        let mut reports = jobs
            .par_iter()
            .map(|&(s, m)| experiment::run(cfg, &prep, m, cfg.ablate_fraction, s).map(|r| r.report))
            .collect::<Result<Vec<_>>>()?
            .into_iter();
        for &seed in &cfg.seeds {
            let (physics, mse) = (reports.next().expect("paired"), reports.next().expect("paired"));
            rows.push(PairedRow { split: kind, seed, physics, mse });
        }
    }

    let mut t = Table::create(dir.join("paired.csv"), &["split", "seed", "nrmse_physics", "nrmse_mse", "delta"])?;
    for r in &rows {
        t.row([
            split_kind_name(r.split).into(),
            r.seed.to_string(),
            fmt_num(r.physics.mean_nrmse()),
            fmt_num(r.mse.mean_nrmse()),
            fmt_num(r.delta()),
        ])?;
    }
    t.finish()?;

    let mut t = Table::create(dir.join("summary.csv"), &["split", "n", "mean_physics", "mean_mse", "mean_delta", "std_delta"])?;
    for &kind in &cfg.ablate_splits {
        let sel: Vec<&PairedRow> = rows.iter().filter(|r| r.split == kind).collect();
        let col = |f: fn(&PairedRow) -> f64| sel.iter().map(|r| f(r)).collect::<Vec<_>>();
        let d = col(PairedRow::delta);
        t.row([
            split_kind_name(kind).into(),
            sel.len().to_string(),
            fmt_num(mean(&col(|r| r.physics.mean_nrmse()))),
            fmt_num(mean(&col(|r| r.mse.mean_nrmse()))),
            fmt_num(mean(&d)),
            fmt_num(std_dev(&d)),
        ])?;
    }
    t.finish()?;

    let mut t = Table::create(dir.join("reports.csv"), &["split", "arm", "seed", "variable", "rmse", "cc", "nrmse"])?;
    for r in &rows {
        for (arm, rep) in [("physics", &r.physics), ("mse", &r.mse)] {
            for v in &rep.variables {
                t.row([
                    split_kind_name(r.split).into(),
                    arm.into(),
                    r.seed.to_string(),
                    v.name.clone(),
                    fmt_num(v.rmse),
                    fmt_num(v.cc.unwrap_or(f64::NAN)),
                    fmt_num(v.nrmse.unwrap_or(f64::NAN)),
                ])?;
            }
        }
    }
    t.finish()?;
    Ok(rows)
}
