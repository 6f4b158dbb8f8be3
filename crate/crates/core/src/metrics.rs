//! Data-fit losses, total-loss bookkeeping and evaluation metrics.

use std::fmt;
use std::io::Write;

use msk_autograd::{Graph, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Force MSE: `(1/T)·Σₜ Σₙ (Fⁿₜ − F̂ⁿₜ)²` over `T × N` tensors. The muscle
/// sum is not averaged.
pub fn mse_force(g: &mut Graph, target: Var, pred: Var) -> Result<Var> {
    let (ts, ps) = (g.value(target).shape().to_vec(), g.value(pred).shape().to_vec());
    if ts != ps || ts.len() != 2 {
        return Err(Error::invalid("mse_force", format!("shapes {ts:?} and {ps:?} differ")));
    }
    let d = g.sub(target, pred)?;
    let sq = g.square(d)?;
    let s = g.sum(sq)?;
    Ok(g.scale(s, 1.0 / ts[0] as f64)?)
}

/// Angle MSE: `(1/T)·Σₜ (θₜ − θ̂ₜ)²`.
pub fn mse_angle(g: &mut Graph, target: Var, pred: Var) -> Result<Var> {
    let (ts, ps) = (g.value(target).shape().to_vec(), g.value(pred).shape().to_vec());
    if ts != ps || ts.len() != 1 {
        return Err(Error::invalid("mse_angle", format!("shapes {ts:?} and {ps:?} differ")));
    }
    let d = g.sub(target, pred)?;
    let sq = g.square(d)?;
    Ok(g.mean(sq)?)
}

/// Per-term weights of the composite loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub force: f64,
    pub angle: f64,
    pub physics: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            force: 1.0,
            angle: 1.0,
            physics: 1.0,
        }
    }
}

impl LossWeights {
    /// Same data weights with the physics term switched off.
    pub fn without_physics(self) -> Self {
        Self { physics: 0.0, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("force", self.force), ("angle", self.angle), ("physics", self.physics)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::invalid("loss weights", format!("{name} weight must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub force: f64,
    pub angle: f64,
    pub physics: f64,
    pub weights: LossWeights,
    pub total: f64,
}

/// Weighted sum `λ_F·L_F + λ_θ·L_θ + λ_P·L_P`.
pub fn total_loss(force: f64, angle: f64, physics: f64, weights: LossWeights) -> Result<LossBreakdown> {
    weights.validate()?;
    for (name, v) in [("L_F", force), ("L_theta", angle), ("L_P", physics)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::invalid("loss component", format!("{name} must be finite and >= 0, got {v}")));
        }
    }
    let mut total = weights.force * force + weights.angle * angle;
    // a disabled physics term must not leak into the total, even as 0·L_P
    if weights.physics != 0.0 {
        total += weights.physics * physics;
    }
    Ok(LossBreakdown {
        force,
        angle,
        physics,
        weights,
        total,
    })
}

fn check_pair(op: &'static str, y: &[f64], yhat: &[f64], min: usize) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::Dimension {
            op,
            expected: y.len(),
            found: yhat.len(),
        });
    }
    if y.len() < min {
        return Err(Error::invalid(op, format!("needs at least {min} samples, got {}", y.len())));
    }
    Ok(())
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair("rmse", y, yhat, 1)?;
    let mse = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64;
    Ok(mse.sqrt())
}

/// Pearson correlation. Constant inputs are an error, not a silent zero.
pub fn pearson_cc(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair("pearson_cc", y, yhat, 2)?;
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mh = yhat.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(yhat) {
        let (da, db) = (a - my, b - mh);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 {
        return Err(Error::UndefinedCorrelation("ground-truth"));
    }
    if syy == 0.0 {
        return Err(Error::UndefinedCorrelation("predicted"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Metrics of one output variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableMetrics {
    pub name: String,
    pub rmse: f64,
    /// `None` when either sequence is constant.
    pub cc: Option<f64>,
    /// RMSE divided by the ground-truth range; `None` for a constant truth.
    pub nrmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variables: Vec<VariableMetrics>,
    pub seed: u64,
    pub split: String,
}

impl EvalReport {
    /// Pools every sample of each output; `truth[j]` and `pred[j]` are the
    /// full test-split sequences of variable `names[j]`.
    pub fn compute(names: &[String], truth: &[Vec<f64>], pred: &[Vec<f64>], seed: u64, split: impl Into<String>) -> Result<Self> {
        if names.len() != truth.len() || truth.len() != pred.len() {
            return Err(Error::Dimension {
                op: "eval report",
                expected: names.len(),
                found: pred.len(),
            });
        }
        let variables = names
            .iter()
            .zip(truth.iter().zip(pred))
            .map(|(name, (y, yhat))| {
                let r = rmse(y, yhat)?;
                let cc = match pearson_cc(y, yhat) {
                    Ok(v) => Some(v),
                    Err(Error::UndefinedCorrelation(_)) => None,
                    Err(e) => return Err(e),
                };
                let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                let range = hi - lo;
                Ok(VariableMetrics {
                    name: name.clone(),
                    rmse: r,
                    cc,
                    nrmse: (range > 0.0).then(|| r / range),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            variables,
            seed,
            split: split.into(),
        })
    }

    pub fn mean_rmse(&self) -> f64 {
        self.variables.iter().map(|v| v.rmse).sum::<f64>() / self.variables.len() as f64
    }

    /// Mean normalized RMSE over variables where it is defined.
    pub fn mean_nrmse(&self) -> f64 {
        mean(self.variables.iter().filter_map(|v| v.nrmse))
    }

    pub fn mean_cc(&self) -> f64 {
        mean(self.variables.iter().filter_map(|v| v.cc))
    }

    /// CSV with columns `variable,rmse,cc,nrmse`; undefined values are `NaN`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let path = || "eval report".to_string();
        w.write_record(["variable", "rmse", "cc", "nrmse"])
            .map_err(|source| Error::Csv { path: path(), source })?;
        for v in &self.variables {
            w.write_record([
                v.name.clone(),
                fmt_num(v.rmse),
                v.cc.map_or("NaN".into(), fmt_num),
                v.nrmse.map_or("NaN".into(), fmt_num),
            ])
            .map_err(|source| Error::Csv { path: path(), source })?;
        }
        w.flush().map_err(|source| Error::Io { path: path(), source })?;
        Ok(())
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn fmt_num(v: f64) -> String {
    format!("{v}")
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.variables.iter().map(|v| v.name.len()).max().unwrap_or(8).max(8);
        writeln!(f, "split: {}  seed: {}", self.split, self.seed)?;
        writeln!(f, "{:<width$}  {:>12}  {:>8}  {:>8}", "variable", "rmse", "cc", "nrmse")?;
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        for v in &self.variables {
            writeln!(f, "{:<width$}  {:>12.4}  {:>8}  {:>8}", v.name, v.rmse, opt(v.cc), opt(v.nrmse))?;
        }
        write!(
            f,
            "{:<width$}  {:>12.4}  {:>8.4}  {:>8.4}",
            "mean",
            self.mean_rmse(),
            self.mean_cc(),
            self.mean_nrmse()
        )
    }
}
