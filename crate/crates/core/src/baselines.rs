//! Extreme learning machine and ridge regression on flattened windows.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{NormStats, WindowSet};
use crate::error::{Error, Result};

const RANK_TOL: f64 = 1e-12;

/// Solves `min ‖Gβ − Y‖² + λ‖β‖²` through a QR factorization of the
/// stacked system `[G; √λ·I] β = [Y; 0]`. With `λ = 0` an underdetermined
/// system yields the minimum-norm solution.
pub fn solve_regularized(g: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if g.nrows() != y.nrows() {
        return Err(Error::Dimension {
            op: "least squares rows",
            expected: g.nrows(),
            found: y.nrows(),
        });
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("least squares", format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let (s, h) = (g.nrows(), g.ncols());
    if lambda == 0.0 && s < h {
        // min-norm: Gᵀ = QR, β = Q·R⁻ᵀ·Y
        let qr = g.transpose().qr();
        let r = qr.r();
        check_rank(&r)?;
        let z = r.transpose().solve_lower_triangular(y).ok_or(Error::Singular { hint: SINGULAR_HINT })?;
        return Ok(qr.q() * z);
    }
    let (a, b) = if lambda > 0.0 {
        let mut a = DMatrix::zeros(s + h, h);
        a.view_mut((0, 0), (s, h)).copy_from(g);
        a.view_mut((s, 0), (h, h)).fill_diagonal(lambda.sqrt());
        let mut b = DMatrix::zeros(s + h, y.ncols());
        b.view_mut((0, 0), (s, y.ncols())).copy_from(y);
        (a, b)
    } else {
        (g.clone(), y.clone())
    };
    let qr = a.qr();
    let r = qr.r();
    check_rank(&r)?;
    let qtb = qr.q().transpose() * b;
    r.solve_upper_triangular(&qtb).ok_or(Error::Singular { hint: SINGULAR_HINT })
}

const SINGULAR_HINT: &str = "; use a ridge coefficient lambda > 0";

fn check_rank(r: &DMatrix<f64>) -> Result<()> {
    let diag = r.diagonal();
    let scale = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || diag.iter().any(|v| v.abs() <= RANK_TOL * scale) {
        return Err(Error::Singular { hint: SINGULAR_HINT });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Single-hidden-layer network with frozen random sigmoid features and a
/// least-squares readout.
#[derive(Debug, Clone, PartialEq)]
pub struct ElmModel {
    /// `H × d`, uniform in (−1, 1).
    pub input_weights: DMatrix<f64>,
    /// Length `H`, uniform in (−1, 1).
    pub biases: DVector<f64>,
    /// `H × m`.
    pub output_weights: DMatrix<f64>,
    pub lambda: f64,
    pub seed: u64,
}

impl ElmModel {
    pub fn hidden(&self) -> usize {
        self.biases.len()
    }

    pub fn inputs(&self) -> usize {
        self.input_weights.ncols()
    }

    pub fn features(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.inputs() {
            return Err(Error::Dimension {
                op: "elm input features",
                expected: self.inputs(),
                found: x.ncols(),
            });
        }
        let mut g = x * self.input_weights.transpose();
        for mut row in g.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(self.biases.iter()) {
                *v = sigmoid(*v + b);
            }
        }
        Ok(g)
    }
}

/// Hidden weights are drawn row by row from one seeded stream, so a model
/// with more hidden units extends the feature set of a smaller one.
pub fn elm_train(x: &DMatrix<f64>, y: &DMatrix<f64>, hidden: usize, lambda: f64, seed: u64) -> Result<ElmModel> {
    if x.nrows() == 0 || hidden == 0 {
        return Err(Error::invalid("elm", "need at least one sample and one hidden unit"));
    }
    let d = x.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = DMatrix::zeros(hidden, d);
    let mut b = DVector::zeros(hidden);
    for i in 0..hidden {
        for j in 0..d {
            w[(i, j)] = rng.random_range(-1.0..1.0);
        }
        b[i] = rng.random_range(-1.0..1.0);
    }
    let mut model = ElmModel {
        input_weights: w,
        biases: b,
        output_weights: DMatrix::zeros(hidden, y.ncols()),
        lambda,
        seed,
    };
    let g = model.features(x)?;
    model.output_weights = solve_regularized(&g, y, lambda)?;
    Ok(model)
}

pub fn elm_predict(model: &ElmModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(model.features(x)? * &model.output_weights)
}

/// Linear map with an unpenalized intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    /// `d × m`.
    pub weights: DMatrix<f64>,
    pub intercept: DVector<f64>,
    pub lambda: f64,
}

/// Ridge regression on column-centered data; the intercept restores the
/// means.
pub fn ridge_train(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<RidgeModel> {
    if !(lambda > 0.0) {
        return Err(Error::invalid("ridge", format!("lambda must be > 0, got {lambda}")));
    }
    if x.nrows() == 0 {
        return Err(Error::invalid("ridge", "no samples"));
    }
    let xm = x.row_mean();
    let ym = y.row_mean();
    let xc = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - xm[j]);
    let yc = DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| y[(i, j)] - ym[j]);
    let weights = solve_regularized(&xc, &yc, lambda)?;
    let intercept = (ym - xm * &weights).transpose();
    Ok(RidgeModel {
        weights,
        intercept,
        lambda,
    })
}

pub fn ridge_predict(model: &RidgeModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != model.weights.nrows() {
        return Err(Error::Dimension {
            op: "ridge input features",
            expected: model.weights.nrows(),
            found: x.ncols(),
        });
    }
    let mut out = x * &model.weights;
    for mut row in out.row_iter_mut() {
        row += model.intercept.transpose();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BaselineSpec {
    Elm { hidden: usize, lambda: f64 },
    Ridge { lambda: f64 },
}

impl BaselineSpec {
    pub fn elm_default() -> Self {
        BaselineSpec::Elm { hidden: 512, lambda: 1e-3 }
    }

    pub fn ridge_default() -> Self {
        BaselineSpec::Ridge { lambda: 1e-3 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaselineSpec::Elm { .. } => "elm",
            BaselineSpec::Ridge { .. } => "ridge",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Baseline {
    Elm(ElmModel),
    Ridge(RidgeModel),
}

/// Flattened window inputs (`S × C·W`) and z-scored center-sample targets
/// (`S × (N+1)`).
pub fn window_features(set: &WindowSet, stats: &NormStats) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let first = set.windows.first().ok_or_else(|| Error::invalid("baseline features", "empty window set"))?;
    let d = first.input.len();
    let m = stats.outputs();
    let mut x = DMatrix::zeros(set.len(), d);
    let mut y = DMatrix::zeros(set.len(), m);
    for (i, w) in set.windows.iter().enumerate() {
        if w.input.len() != d {
            return Err(Error::Dimension {
                op: "baseline features",
                expected: d,
                found: w.input.len(),
            });
        }
        x.row_mut(i).copy_from_slice(w.input.data());
        let c = w.length() / 2;
        for j in 0..m {
            y[(i, j)] = (w.targets.at2(c, j) - stats.mean[j]) / stats.std[j];
        }
    }
    Ok((x, y))
}

impl Baseline {
    pub fn fit(spec: &BaselineSpec, train: &WindowSet, seed: u64) -> Result<Self> {
        let (x, y) = window_features(train, train.stats()?)?;
        Ok(match *spec {
            BaselineSpec::Elm { hidden, lambda } => Baseline::Elm(elm_train(&x, &y, hidden, lambda, seed)?),
            BaselineSpec::Ridge { lambda } => Baseline::Ridge(ridge_train(&x, &y, lambda)?),
        })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Baseline::Elm(m) => elm_predict(m, x),
            Baseline::Ridge(m) => ridge_predict(m, x),
        }
    }

    /// Pooled center-sample truth and predictions in physical units, one
    /// vector per output.
    pub fn collect_predictions(&self, set: &WindowSet, stats: &NormStats) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let (x, y) = window_features(set, stats)?;
        let p = self.predict(&x)?;
        let m = stats.outputs();
        let phys = |mat: &DMatrix<f64>, j: usize| mat.column(j).iter().map(|v| v * stats.std[j] + stats.mean[j]).collect::<Vec<f64>>();
        Ok(((0..m).map(|j| phys(&y, j)).collect(), (0..m).map(|j| phys(&p, j)).collect()))
    }
}
