//! Trial CSV files and the dataset manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, SimConfig, Trial};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialEntry {
    pub id: usize,
    pub file: String,
    pub speed: f64,
    pub seed: u64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub config: SimConfig,
    pub mvc: Vec<f64>,
    pub trials: Vec<TrialEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.display().to_string(),
        source,
    }
}

pub fn trial_header(n: usize) -> Vec<String> {
    let mut h = vec!["time".to_string()];
    for prefix in ["emg_raw", "emg_env", "force"] {
        h.extend((1..=n).map(|i| format!("{prefix}_{i}")));
    }
    h.push("theta".into());
    h.push("tau".into());
    h
}

pub fn write_trial_csv(trial: &Trial, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    writeln!(
        out,
        "# trial {} speed {} seed {} dt {}\n# units: time s, emg_raw a.u., emg_env fraction of MVC, force N, theta rad, tau N*m",
        trial.id, trial.speed, trial.seed, trial.dt
    )
    .map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(out);
    let n = trial.n_muscles();
    w.write_record(trial_header(n)).map_err(csv_err(path))?;
    let mut row = Vec::with_capacity(3 * n + 3);
    for t in 0..trial.len() {
        row.clear();
        row.push(trial.time[t]);
        for ch in [&trial.emg_raw, &trial.emg_env, &trial.forces] {
            row.extend(ch.iter().map(|c| c[t]));
        }
        row.push(trial.theta[t]);
        row.push(trial.tau[t]);
        w.serialize(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a trial file; metadata comes from the manifest entry.
pub fn read_trial_csv(path: &Path, entry: &TrialEntry, n_muscles: usize, dt: f64) -> Result<Trial> {
    let fmt = |reason: String| Error::Format {
        path: path.display().to_string(),
        reason,
    };
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(csv_err(path))?;
    let header: Vec<String> = r.headers().map_err(csv_err(path))?.iter().map(str::to_string).collect();
    let expected = trial_header(n_muscles);
    if header != expected {
        return Err(fmt(format!("header {header:?} does not match expected {expected:?}")));
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(entry.samples); expected.len()];
    for (line, rec) in r.deserialize::<Vec<f64>>().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        if rec.len() != cols.len() {
            return Err(fmt(format!("row {line} has {} fields, expected {}", rec.len(), cols.len())));
        }
        for (c, v) in cols.iter_mut().zip(rec) {
            c.push(v);
        }
    }
    if cols[0].len() != entry.samples {
        return Err(fmt(format!("{} samples, manifest says {}", cols[0].len(), entry.samples)));
    }
    let mut it = cols.into_iter();
    let time = it.next().unwrap();
    let mut take = |k: usize| -> Vec<Vec<f64>> { (0..k).map(|_| it.next().unwrap()).collect() };
    let emg_raw = take(n_muscles);
    let emg_env = take(n_muscles);
    let forces = take(n_muscles);
    let mut rest = take(2);
    let tau = rest.pop().unwrap();
    let theta = rest.pop().unwrap();
    Ok(Trial {
        id: entry.id,
        speed: entry.speed,
        seed: entry.seed,
        dt,
        time,
        excitation: None,
        activation: None,
        emg_raw,
        emg_env,
        forces,
        theta,
        tau,
    })
}

pub fn trial_file_name(id: usize) -> String {
    format!("trial_{id:03}.csv")
}

/// Writes every trial plus `manifest.json` into `dir`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut trials = Vec::with_capacity(ds.trials.len());
    for t in &ds.trials {
        let file = trial_file_name(t.id);
        write_trial_csv(t, &dir.join(&file))?;
        trials.push(TrialEntry {
            id: t.id,
            file,
            speed: t.speed,
            seed: t.seed,
            samples: t.len(),
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        seed: ds.seed,
        config: ds.config.clone(),
        mvc: ds.mvc.clone(),
        trials,
    };
    write_json(&manifest, &dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = read_json(&path)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: format!("unsupported manifest version {}", manifest.version),
        });
    }
    manifest.config.validate()?;
    Ok(manifest)
}

/// Loads a dataset written by [`save_dataset`] and re-validates every trial.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = load_manifest(dir)?;
    let n = manifest.config.dynamics.n_muscles();
    let mut trials = Vec::with_capacity(manifest.trials.len());
    for entry in &manifest.trials {
        let trial = read_trial_csv(&dir.join(&entry.file), entry, n, manifest.config.dynamics.dt)?;
        trial.validate(&manifest.config.dynamics)?;
        trials.push(trial);
    }
    Ok(Dataset {
        config: manifest.config,
        seed: manifest.seed,
        mvc: manifest.mvc,
        trials,
    })
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.display().to_string(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.display().to_string(),
        source,
    })
}
