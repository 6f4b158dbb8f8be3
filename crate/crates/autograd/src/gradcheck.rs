//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward values, so it stays
//! independent of the backward pass it audits.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Which coordinates of each parameter tensor to perturb.
#[derive(Debug, Clone, Copy)]
pub enum Coords {
    All,
    /// Up to `per_tensor` distinct random coordinates per tensor.
    Sample { per_tensor: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    pub step: f64,
    /// Denominator floor so that near-zero gradients compare absolutely.
    pub floor: f64,
    pub coords: Coords,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            coords: Coords::All,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mismatch {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub worst: Option<Mismatch>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.worst.map_or(0.0, |w| w.rel_error)
    }
}

pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<F>(params: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.constant(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).data()[0])
}

/// Estimated round-off in a central difference at `step`: the largest change
/// of the value when every parameter is scaled by an independent random
/// factor 1 ± ε, over `samples` draws, divided by `step`. A gradient that is
/// truly zero comes out of the difference quotient at about this size, so
/// `noise / tolerance` is the natural [`CheckOptions::floor`].
pub fn difference_noise<F>(params: &[Tensor], f: &F, step: f64, samples: usize, seed: u64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let base = evaluate(params, f)?;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut worst = f64::EPSILON * base.abs();
    for _ in 0..samples {
        let jittered: Vec<Tensor> = params
            .iter()
            .map(|p| {
                let mut q = p.clone();
                for v in q.data_mut() {
                    *v *= 1.0 + if rng.random_bool(0.5) { f64::EPSILON } else { -f64::EPSILON };
                }
                q
            })
            .collect();
        worst = worst.max((evaluate(&jittered, f)? - base).abs());
    }
    Ok(worst / step)
}

/// Compares the backward-pass gradient of the scalar built by `f` against
/// central differences for every selected coordinate of `params`.
pub fn check_gradients<F>(params: &[Tensor], f: F, opts: CheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut report = GradCheckReport { checked: 0, worst: None };
    let mut work: Vec<Tensor> = params.to_vec();
    for (ti, p) in params.iter().enumerate() {
        let analytic = grads.get(vars[ti]).expect("tracked leaf has a gradient");
        let indices: Vec<usize> = match opts.coords {
            Coords::All => (0..p.len()).collect(),
            Coords::Sample { per_tensor, seed } => {
                let mut rng = StdRng::seed_from_u64(seed ^ (ti as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let mut picked: Vec<usize> = Vec::new();
                let want = per_tensor.min(p.len());
                while picked.len() < want {
                    let i = rng.random_range(0..p.len());
                    if !picked.contains(&i) {
                        picked.push(i);
                    }
                }
                picked
            }
        };
        for i in indices {
            let orig = p.data()[i];
            work[ti].data_mut()[i] = orig + opts.step;
            let plus = evaluate(&work, &f)?;
            work[ti].data_mut()[i] = orig - opts.step;
            let minus = evaluate(&work, &f)?;
            work[ti].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic.data()[i];
            let err = rel_error(a, numeric, opts.floor);
            report.checked += 1;
            if report.worst.is_none_or(|w| err > w.rel_error) {
                report.worst = Some(Mismatch {
                    tensor: ti,
                    index: i,
                    analytic: a,
                    numeric,
                    rel_error: err,
                });
            }
        }
    }
    Ok(report)
}
