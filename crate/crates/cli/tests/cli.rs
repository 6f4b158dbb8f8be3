use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use msk_cli::commands::{self, Context};
use msk_cli::config::{ExperimentConfig, Method};
use msk_cli::stats::{ranks, spearman, std_dev};
use msk_cli::CliError;
use msk_core::datasets::SplitKind;
use msk_core::metrics::EvalReport;

const TINY: &str = "
[simulator]
trials_per_speed = 2
speeds = 1.0, 2.0
duration = 4
[schedule]
max_iter = 20
[experiment]
seeds = 0, 1
fractions = 0.5, 1.0
methods = pinn, ridge
";

fn bin(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msk-pinn"))
        .args(args)
        .current_dir(dir)
        .env_remove("MSK_PINN_OUT")
        .output()
        .expect("binary runs")
}

fn tiny_dir() -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("c.ini"), TINY).unwrap();
    d
}

fn lines(p: &Path) -> Vec<String> {
    fs::read_to_string(p).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn empty_config_is_the_default() {
    let c = ExperimentConfig::parse("").unwrap();
    assert_eq!(c, ExperimentConfig::default());
    assert_eq!(c.schedule.max_iter, 1200);
    assert_eq!(c.seeds.len(), 5);
    assert_eq!(c.sim.max_force.len(), c.sim.dynamics.n_muscles());
}

#[test]
fn readme_defaults_block_is_the_default() {
    let readme = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md")).unwrap();
    let start = readme.find("```ini\n").unwrap() + "```ini\n".len();
    let len = readme[start..].find("```").unwrap();
    let c = ExperimentConfig::parse(&readme[start..start + len]).unwrap();
    assert_eq!(c, ExperimentConfig::default());
}

#[test]
fn resolved_config_round_trips() {
    let c = ExperimentConfig::parse(
        "[simulator]\npreset = knee\nsnr = none\n[model]\ndropout = 0.1\nfc_norm = none\n[schedule]\nclip_norm = none\n[split]\nkind = intrasession\n[experiment]\nmethods = deeper, elm\noutput = runs/x",
    )
    .unwrap();
    assert_eq!(c.train_fraction, 0.8);
    assert_eq!(c.schedule.clip_norm, None);
    assert_eq!(c.sim.snr, None);
    assert_eq!(ExperimentConfig::parse(&c.to_ini()).unwrap(), c);
    let d = ExperimentConfig::default();
    assert_eq!(ExperimentConfig::parse(&d.to_ini()).unwrap(), d);
}

#[test]
fn unknown_or_malformed_keys_are_rejected() {
    let err = |text: &str| ExperimentConfig::parse(text).unwrap_err().to_string();
    assert!(err("[schedule]\nmax_iters = 5").contains("schedule.max_iters"));
    assert!(err("[trainer]\nlr = 1").contains("[trainer]"));
    assert!(err("seed = 3").contains("section"));
    assert!(err("[schedule]\nlr = fast").contains("schedule.lr"));
    assert!(err("[experiment]\nmethods = pinn, svm").contains("svm"));
    assert!(err("[model]\nconv_norm = batch").contains("model.conv_norm"));
    assert!(err("[simulator]\nemg_rate = 1000\n[dynamics]\ndt = 0.002").contains("dynamics.dt"));
    assert!(err("[experiment]\nfractions = 0, 1").contains("fractions"));
    assert!(ExperimentConfig::parse("[dynamics]\nmoment_arms = 0.02, -0.02\n").is_ok());
}

#[test]
fn rank_statistics() {
    assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[9.0, 4.0, 1.0]), Some(-1.0));
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]), None);
    let r = spearman(&[0.1, 0.1, 1.0, 1.0], &[0.5, 0.4, 0.3, 0.35]).unwrap();
    assert!(r < 0.0);
    assert!((std_dev(&[1.0, 3.0]) - 2f64.sqrt()).abs() < 1e-15);
}

#[test]
fn identical_prediction_scores_perfectly() {
    let names = vec!["force_1".to_string(), "theta".to_string()];
    let truth = vec![vec![1.0, 2.0, 4.0], vec![0.5, 0.5, 0.5]];
    let r = EvalReport::compute(&names, &truth, &truth, 0, "self").unwrap();
    assert_eq!(r.variables[0].rmse, 0.0);
    assert_eq!(r.variables[0].nrmse, Some(0.0));
    assert!((r.variables[0].cc.unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(r.variables[1].cc, None);
    let mut buf = Vec::new();
    r.write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().nth(2), Some("theta,0,NaN,NaN"));
}

#[test]
fn generate_train_eval_pipeline() {
    let d = tiny_dir();
    let p = d.path();
    let o = bin(&["--config", "c.ini", "--out", "o", "generate"], p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let n_csv = fs::read_dir(p.join("o/dataset")).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv")).count();
    assert_eq!(n_csv, 4 + 1, "trials plus the audit");
    assert_eq!(lines(&p.join("o/dataset/audit.csv")).len(), 5);
    assert!(p.join("o/dataset/manifest.json").exists());

    let o = bin(&["--config", "c.ini", "--out", "o", "train", "--method", "mse"], p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let hist = lines(&p.join("o/train/history.csv"));
    assert_eq!(hist[0], "iteration,L_F,L_theta,L_P,L_total");
    assert_eq!(hist.len(), 21);
    for f in ["split.json", "loss.svg", "config.ini", "checkpoint/params.csv", "checkpoint/checkpoint.json"] {
        assert!(p.join("o/train").join(f).exists(), "{f}");
    }

    let o = bin(&["--config", "c.ini", "--out", "o", "eval"], p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = lines(&p.join("o/eval/report.csv"));
    assert_eq!(rep[0], "variable,rmse,cc,nrmse");
    assert_eq!(rep.len(), 1 + 6);
    let svgs = fs::read_dir(p.join("o/eval")).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg")).count();
    assert_eq!(svgs, 6);
    let svg = fs::read_to_string(p.join("o/eval/theta.svg")).unwrap();
    assert!(svg.contains("<!-- data\nseries,x,y,err\ntruth,0,"));

    let o = bin(&["--config", "c.ini", "--out", "o", "train", "--method", "ridge"], p);
    assert!(!o.status.success());
    let o = bin(&["--config", "c.ini", "--out", "o", "eval", "--train-dir", "missing"], p);
    assert!(!o.status.success());
}

#[test]
fn unknown_key_fails_the_binary() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("bad.ini"), "[schedule]\nmomentum_typo = 0.9\n").unwrap();
    let o = bin(&["--config", "bad.ini", "--out", "o", "generate"], d.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("schedule.momentum_typo"));
    assert!(!d.path().join("o").exists());
}

#[test]
fn output_root_from_environment() {
    let d = tiny_dir();
    let o = Command::new(env!("CARGO_BIN_EXE_msk-pinn"))
        .args(["--config", "c.ini", "generate"])
        .current_dir(d.path())
        .env("MSK_PINN_OUT", "envroot")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(d.path().join("envroot/dataset/manifest.json").exists());
}

#[test]
fn sweep_covers_every_run_and_is_deterministic() {
    let d = tiny_dir();
    let p = d.path();
    for out in ["a", "b"] {
        let o = bin(&["--config", "c.ini", "--out", out, "sweep-datasize"], p);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let runs = lines(&p.join("a/sweep/runs.csv"));
    assert_eq!(runs[0], "fraction,method,seed,train_windows,status,mean_rmse,mean_cc,mean_nrmse");
    assert_eq!(runs.len(), 1 + 2 * 2 * 2);
    assert!(runs[1..].iter().all(|r| r.split(',').nth(4) == Some("ok")));
    assert_eq!(lines(&p.join("a/sweep/summary.csv")).len(), 1 + 2 * 2);
    assert_eq!(lines(&p.join("a/sweep/trend.csv")).len(), 1 + 2);
    for f in ["runs.csv", "summary.csv", "trend.csv", "nrmse_vs_fraction.svg", "config.ini"] {
        assert_eq!(fs::read(p.join("a/sweep").join(f)).unwrap(), fs::read(p.join("b/sweep").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn failed_runs_are_recorded_and_the_sweep_continues() {
    let d = tiny_dir();
    let text = format!("{TINY}\n[model]\ndropout = 0\n").replace("max_iter = 20", "max_iter = 20\nlr = 1e12\nclip_norm = none");
    fs::write(d.path().join("c.ini"), text).unwrap();
    let o = bin(&["--config", "c.ini", "--out", "o", "sweep-datasize"], d.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("failed"));
    let runs = lines(&d.path().join("o/sweep/runs.csv"));
    assert_eq!(runs.len(), 1 + 8);
    let failed = runs.iter().filter(|r| r.contains(",pinn,") && r.contains("error:")).count();
    assert_eq!(failed, 4, "{runs:#?}");
    assert!(runs.iter().filter(|r| r.contains(",ridge,")).all(|r| r.contains(",ok,")));
}

#[test]
fn ablation_pairs_arms_per_split() {
    let mut cfg = ExperimentConfig::parse(TINY).unwrap();
    cfg.schedule.max_iter = 10;
    let out = tempfile::tempdir().unwrap();
    let ctx = Context {
        cfg: cfg.clone(),
        out: out.path().to_path_buf(),
    };
    let rows = commands::ablate(&ctx, None).unwrap();
    assert_eq!(rows.len(), 2 * 2);
    assert_eq!(rows[0].split, SplitKind::ByTrial);
    assert_eq!(rows[3].split, SplitKind::Intrasession);
    assert!(rows.iter().all(|r| r.delta().is_finite()));
    assert_eq!(lines(&out.path().join("ablate/paired.csv")).len(), 1 + 4);
    assert_eq!(lines(&out.path().join("ablate/summary.csv")).len(), 1 + 2);
    assert_eq!(lines(&out.path().join("ablate/reports.csv")).len(), 1 + 4 * 2 * 6);

    cfg.loss.physics = 0.0;
    let ctx = Context { cfg, out: out.path().to_path_buf() };
    assert!(matches!(commands::ablate(&ctx, None), Err(CliError::Config { .. })));
}

#[test]
fn train_is_byte_reproducible() {
    let cfg = ExperimentConfig::parse(TINY).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let ctx = Context {
            cfg: cfg.clone(),
            out: d.path().to_path_buf(),
        };
        commands::train(&ctx, Method::Pinn, None).unwrap();
    }
    for f in ["history.csv", "split.json", "checkpoint/params.csv"] {
        assert_eq!(fs::read(dirs[0].path().join("train").join(f)).unwrap(), fs::read(dirs[1].path().join("train").join(f)).unwrap(), "{f}");
    }
}
