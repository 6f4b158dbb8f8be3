//! Single-joint rigid-body dynamics.
//!
//! The joint obeys `M·θ̈ + b·θ̇ + g·sin θ = τ` with `τ = Σ rₙ·Fₙ`. The graph
//! versions below are differentiable with respect to both the angle and the
//! muscle-force trajectories so the residual can serve as a training loss;
//! the `*_values` helpers evaluate the same expressions on plain data.

use msk_autograd::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical constants of the joint model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsParams {
    /// Inertia about the joint axis (kg·m²).
    pub inertia: f64,
    /// Viscous damping (N·m·s/rad).
    pub damping: f64,
    /// Gravity torque amplitude m·g·l (N·m).
    pub gravity_coeff: f64,
    /// Signed moment arm per muscle (m).
    pub moment_arms: Vec<f64>,
    /// Sampling interval (s).
    pub dt: f64,
}

/// Joint angle and angular velocity.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointState {
    pub theta: f64,
    pub omega: f64,
}

impl DynamicsParams {
    /// Five-muscle wrist-like plant: two flexors, three extensors.
    pub fn wrist_like() -> Self {
        Self {
            inertia: 0.05,
            damping: 0.1,
            gravity_coeff: 2.0,
            moment_arms: vec![0.03, 0.025, -0.03, -0.025, -0.02],
            dt: 1e-3,
        }
    }

    /// Two-muscle knee-like plant (one flexor, one extensor).
    pub fn knee_like() -> Self {
        Self {
            moment_arms: vec![0.04, -0.04],
            ..Self::wrist_like()
        }
    }

    pub fn n_muscles(&self) -> usize {
        self.moment_arms.len()
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.inertia, self.damping, self.gravity_coeff, self.dt]
            .iter()
            .chain(&self.moment_arms)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("dynamics", "all parameters must be finite"));
        }
        if self.inertia <= 0.0 {
            return Err(Error::invalid("dynamics", format!("inertia must be positive, got {}", self.inertia)));
        }
        if self.dt <= 0.0 {
            return Err(Error::invalid("dynamics", format!("dt must be positive, got {}", self.dt)));
        }
        if self.moment_arms.is_empty() {
            return Err(Error::invalid("dynamics", "at least one muscle is required"));
        }
        Ok(())
    }

    /// Same plant sampled at a different interval.
    pub fn with_dt(&self, dt: f64) -> Self {
        Self { dt, ..self.clone() }
    }

    /// Angular acceleration from the equation of motion.
    pub fn acceleration(&self, state: JointState, torque: f64) -> f64 {
        (torque - self.damping * state.omega - self.gravity_coeff * state.theta.sin()) / self.inertia
    }
}

/// Joint torque `τₜ = Σₙ rₙ·Fₙₜ` from forces `F: T × N`.
pub fn torque(g: &mut Graph, forces: Var, params: &DynamicsParams) -> Result<Var> {
    let shape = g.value(forces).shape().to_vec();
    if shape.len() != 2 || shape[1] != params.n_muscles() {
        return Err(Error::Dimension {
            op: "torque",
            expected: params.n_muscles(),
            found: shape.get(1).copied().unwrap_or(0),
        });
    }
    let arms = g.constant(Tensor::from_vec(params.moment_arms.clone()));
    Ok(g.matmul(forces, arms)?)
}

/// Central-difference velocity and acceleration on the interior points
/// `1..T-1` of `theta: [T]`.
pub fn fd_derivatives(g: &mut Graph, theta: Var, dt: f64) -> Result<(Var, Var)> {
    let t = g.value(theta).len();
    if t < 3 {
        return Err(Error::invalid("trajectory", format!("finite differences need T >= 3, got {t}")));
    }
    let inner = t - 2;
    let next = g.slice(theta, 0, 2, inner)?;
    let mid = g.slice(theta, 0, 1, inner)?;
    let prev = g.slice(theta, 0, 0, inner)?;
    let span = g.sub(next, prev)?;
    let velocity = g.scale(span, 1.0 / (2.0 * dt))?;
    let outer = g.add(next, prev)?;
    let twice_mid = g.scale(mid, 2.0)?;
    let curvature = g.sub(outer, twice_mid)?;
    let acceleration = g.scale(curvature, 1.0 / (dt * dt))?;
    Ok((velocity, acceleration))
}

/// Equation-of-motion residual on interior points:
/// `ρₜ = M·θ̈ₜ + b·θ̇ₜ + g·sin θₜ − τₜ`, length `T − 2`.
pub fn eom_residual(g: &mut Graph, theta: Var, forces: Var, params: &DynamicsParams) -> Result<Var> {
    let t = g.value(theta).len();
    let ft = g.value(forces).shape().first().copied().unwrap_or(0);
    if ft != t {
        return Err(Error::Dimension {
            op: "eom_residual",
            expected: t,
            found: ft,
        });
    }
    let (velocity, acceleration) = fd_derivatives(g, theta, params.dt)?;
    let tau = torque(g, forces, params)?;
    let inner = t - 2;
    let tau = g.slice(tau, 0, 1, inner)?;
    let theta_mid = g.slice(theta, 0, 1, inner)?;

    let inertial = g.scale(acceleration, params.inertia)?;
    let damping = g.scale(velocity, params.damping)?;
    let sin = g.sin(theta_mid)?;
    let gravity = g.scale(sin, params.gravity_coeff)?;
    let lhs = g.add(inertial, damping)?;
    let lhs = g.add(lhs, gravity)?;
    Ok(g.sub(lhs, tau)?)
}

/// Mean squared residual over the `T − 2` interior points.
pub fn physics_loss(g: &mut Graph, theta: Var, forces: Var, params: &DynamicsParams) -> Result<Var> {
    let residual = eom_residual(g, theta, forces, params)?;
    let sq = g.square(residual)?;
    Ok(g.mean(sq)?)
}

pub fn torque_values(forces: &Tensor, params: &DynamicsParams) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let f = g.constant(forces.clone());
    let tau = torque(&mut g, f, params)?;
    Ok(g.value(tau).data().to_vec())
}

pub fn eom_residual_values(theta: &[f64], forces: &Tensor, params: &DynamicsParams) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let th = g.constant(Tensor::from_vec(theta.to_vec()));
    let f = g.constant(forces.clone());
    let r = eom_residual(&mut g, th, f, params)?;
    Ok(g.value(r).data().to_vec())
}

pub fn physics_loss_value(theta: &[f64], forces: &Tensor, params: &DynamicsParams) -> Result<f64> {
    let mut g = Graph::new();
    let th = g.constant(Tensor::from_vec(theta.to_vec()));
    let f = g.constant(forces.clone());
    let l = physics_loss(&mut g, th, f, params)?;
    Ok(g.value(l).data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn forces(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Tensor::matrix(rows, cols, data).unwrap()
    }

    #[test]
    fn two_muscle_torque() {
        let p = DynamicsParams {
            moment_arms: vec![0.05, -0.03],
            ..DynamicsParams::wrist_like()
        };
        let tau = torque_values(&forces(1, 2, |_, c| [100.0, 50.0][c]), &p).unwrap();
        assert!((tau[0] - 3.5).abs() < 1e-12);
        let zero = torque_values(&Tensor::zeros(&[4, 2]), &p).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        assert!(matches!(
            torque_values(&Tensor::zeros(&[4, 3]), &p),
            Err(Error::Dimension { op: "torque", .. })
        ));
    }

    #[test]
    fn stencil_is_exact_on_ramps_and_constants() {
        let dt = 0.01;
        let c = 1.7;
        let mut g = Graph::new();
        let ramp = g.constant(Tensor::from_vec((0..20).map(|t| c * t as f64 * dt).collect()));
        let (v, a) = fd_derivatives(&mut g, ramp, dt).unwrap();
        assert!(g.value(v).data().iter().all(|x| (x - c).abs() < 1e-12));
        assert!(g.value(a).data().iter().all(|x| x.abs() < 1e-9));

        let flat = g.constant(Tensor::full(&[5], 0.3));
        let (v, a) = fd_derivatives(&mut g, flat, dt).unwrap();
        assert!(g.value(v).data().iter().chain(g.value(a).data()).all(|&x| x == 0.0));

        let short = g.constant(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(fd_derivatives(&mut g, short, dt).is_err());
    }

    #[test]
    fn stencil_truncation_on_sine() {
        // |θ̈_fd − θ̈| ≤ Δt²/12 · max|θ⁗| = Δt²·ω⁴/12 for θ = sin(ωt)
        let (omega, dt) = (10.0_f64, 1e-3);
        let theta: Vec<f64> = (0..2000).map(|t| (omega * t as f64 * dt).sin()).collect();
        let mut g = Graph::new();
        let th = g.constant(Tensor::from_vec(theta.clone()));
        let (_, acc) = fd_derivatives(&mut g, th, dt).unwrap();
        let worst = g
            .value(acc)
            .data()
            .iter()
            .zip(&theta[1..])
            .map(|(a, th)| (a + omega * omega * th).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-2);
        assert!(worst <= dt * dt * omega.powi(4) / 12.0 * 1.01 + 1e-9);
    }

    #[test]
    fn equilibrium_and_static_balance() {
        let p = DynamicsParams::wrist_like();
        let r = eom_residual_values(&[0.0; 10], &Tensor::zeros(&[10, 5]), &p).unwrap();
        assert_eq!(r.len(), 8);
        assert!(r.iter().all(|&v| v == 0.0));

        // hang at θ* with only the first flexor holding the load
        let theta_star: f64 = 0.4;
        let f1 = p.gravity_coeff * theta_star.sin() / p.moment_arms[0];
        let f = forces(10, 5, |_, c| if c == 0 { f1 } else { 0.0 });
        let r = eom_residual_values(&[theta_star; 10], &f, &p).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-12));
        assert!(physics_loss_value(&[theta_star; 10], &f, &p).unwrap() < 1e-24);
    }

    #[test]
    fn constant_residual_of_two_gives_loss_four() {
        // θ ≡ 0 and a torque of −2 everywhere leaves ρ ≡ 2
        let p = DynamicsParams {
            moment_arms: vec![1.0],
            ..DynamicsParams::wrist_like()
        };
        let loss = physics_loss_value(&[0.0; 6], &Tensor::full(&[6, 1], -2.0), &p).unwrap();
        assert!((loss - 4.0).abs() < 1e-12);
    }

    #[test]
    fn force_translation_shifts_torque_by_moment_arm() {
        let p = DynamicsParams::wrist_like();
        let base = forces(7, 5, |t, c| (t * 5 + c) as f64 * 1.3);
        let delta = 4.5;
        let tau0 = torque_values(&base, &p).unwrap();
        for n in 0..5 {
            let shifted = forces(7, 5, |t, c| base.at2(t, c) + if c == n { delta } else { 0.0 });
            let tau1 = torque_values(&shifted, &p).unwrap();
            for (a, b) in tau0.iter().zip(&tau1) {
                assert!((b - a - p.moment_arms[n] * delta).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = DynamicsParams::wrist_like();
        p.inertia = 0.0;
        assert!(p.validate().is_err());
        let mut p = DynamicsParams::wrist_like();
        p.dt = f64::NAN;
        assert!(p.validate().is_err());
        assert!(DynamicsParams::knee_like().validate().is_ok());
    }
}
