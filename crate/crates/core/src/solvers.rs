//! Root finding for discrete critical-point equations.
//!
//! Critical loops are located as zeros of the stacked residual with a
//! Levenberg-Marquardt iteration on a finite-difference Jacobian. One phase
//! anchor row removes the time-translation direction that every autonomous
//! functional leaves free. The solver is fully sequential and allocation
//! order is fixed, so a given input always produces bit-identical output.

use crate::error::{Error, Result};
use crate::functionals::ResidualSystem;
use crate::loop_space::{DelayShift, Loop};
use crate::symplectic::{ham_vector_field, HamiltonianField};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// How the free time-translation phase of an orbit is pinned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseAnchor {
    /// Fix the first coordinate of the first grid point at its guess value.
    FirstPointCoordinateFixed,
    /// Require the update to be orthogonal to the guess derivative.
    MeanPhase,
}

fn default_max_iters() -> usize {
    200
}
fn default_residual_tol() -> f64 {
    1e-10
}
fn default_lambda0() -> f64 {
    1e-3
}
fn default_lm_scale() -> f64 {
    10.0
}
fn default_fd_eps() -> f64 {
    1e-7
}
fn default_anchor() -> PhaseAnchor {
    PhaseAnchor::FirstPointCoordinateFixed
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_residual_tol")]
    pub residual_tol: f64,
    #[serde(default = "default_lambda0")]
    pub lm_lambda0: f64,
    #[serde(default = "default_lm_scale")]
    pub lm_scale: f64,
    #[serde(default = "default_fd_eps")]
    pub fd_jacobian_eps: f64,
    #[serde(default = "default_anchor")]
    pub phase_anchor: PhaseAnchor,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: default_max_iters(),
            residual_tol: default_residual_tol(),
            lm_lambda0: default_lambda0(),
            lm_scale: default_lm_scale(),
            fd_jacobian_eps: default_fd_eps(),
            phase_anchor: default_anchor(),
        }
    }
}

/// A solved (or abandoned) orbit with its certificates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrbitResult {
    pub orbit: Loop,
    /// Sup norm of the critical-point residual, recomputed from scratch on
    /// the returned loop.
    pub residual_sup: f64,
    pub action_value: f64,
    pub iters: usize,
    pub converged: bool,
    /// Normalized standard deviation of the conserved energy along the
    /// orbit, when the functional has one; filled by callers that know it.
    pub energy_std: Option<f64>,
}

const LAMBDA_CEILING: f64 = 1e16;

struct Stacked<'a> {
    system: &'a ResidualSystem,
    anchor: PhaseAnchor,
    anchor_value: f64,
    anchor_direction: Vec<f64>,
    reference: Vec<f64>,
}

impl<'a> Stacked<'a> {
    fn new(system: &'a ResidualSystem, guess: &Loop, anchor: PhaseAnchor) -> Result<Self> {
        let reference = guess.values().to_vec();
        let anchor_direction = match anchor {
            PhaseAnchor::FirstPointCoordinateFixed => Vec::new(),
            PhaseAnchor::MeanPhase => guess.derivative()?.values().to_vec(),
        };
        Ok(Stacked {
            system,
            anchor,
            anchor_value: reference[0],
            anchor_direction,
            reference,
        })
    }

    fn rows(&self) -> usize {
        self.system.unknowns() + 1
    }

    fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.rows());
        let r = self.system.residual_flat(x)?;
        for (i, v) in r.iter().enumerate() {
            out[i] = *v;
        }
        let last = self.rows() - 1;
        out[last] = match self.anchor {
            PhaseAnchor::FirstPointCoordinateFixed => x[0] - self.anchor_value,
            PhaseAnchor::MeanPhase => {
                let n = x.len() as f64;
                self.anchor_direction
                    .iter()
                    .zip(x.iter().zip(self.reference.iter()))
                    .map(|(d, (xi, ri))| d * (xi - ri))
                    .sum::<f64>()
                    / n
            }
        };
        Ok(out)
    }

    fn jacobian(&self, x: &[f64], base: &DVector<f64>, eps: f64) -> Result<DMatrix<f64>> {
        let n = x.len();
        let mut jac = DMatrix::zeros(self.rows(), n);
        let mut pert = x.to_vec();
        for j in 0..n {
            let h = eps * (1.0 + x[j].abs());
            pert[j] = x[j] + h;
            let r = self.eval(&pert)?;
            pert[j] = x[j];
            for i in 0..self.rows() {
                jac[(i, j)] = (r[i] - base[i]) / h;
            }
        }
        Ok(jac)
    }
}

fn residual_sup(stacked: &DVector<f64>, unknowns: usize) -> f64 {
    stacked
        .iter()
        .take(unknowns)
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Find a residual zero of the system starting from `guess`.
///
/// Returns `Ok` with `converged == false` when the iteration stalls or the
/// budget runs out; hard failures (non-finite values, shape errors) are `Err`.
pub fn solve_periodic(
    system: &ResidualSystem,
    guess: &Loop,
    config: &SolverConfig,
) -> Result<OrbitResult> {
    let n = system.unknowns();
    if guess.values().len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: guess.values().len(),
        });
    }
    let stacked = Stacked::new(system, guess, config.phase_anchor)?;
    let mut x = guess.values().to_vec();
    let mut r = stacked.eval(&x)?;
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "initial residual".into(),
        });
    }
    let mut lambda = config.lm_lambda0;
    let mut iters = 0;
    let mut converged = residual_sup(&r, n) <= config.residual_tol;

    while !converged && iters < config.max_iters {
        let jac = stacked.jacobian(&x, &r, config.fd_jacobian_eps)?;
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut stepped = false;
        while lambda <= LAMBDA_CEILING {
            let mut damped = jtj.clone();
            for i in 0..n {
                damped[(i, i)] += lambda;
            }
            let delta = match damped.cholesky() {
                Some(ch) => ch.solve(&(-&jtr)),
                None => {
                    lambda *= config.lm_scale;
                    continue;
                }
            };
            let trial: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, d)| a + d).collect();
            let r_trial = stacked.eval(&trial)?;
            if r_trial.iter().all(|v| v.is_finite()) && r_trial.norm() < r.norm() {
                x = trial;
                r = r_trial;
                lambda = (lambda / config.lm_scale).max(1e-12);
                stepped = true;
                break;
            }
            lambda *= config.lm_scale;
        }
        iters += 1;
        if !stepped {
            break; // damping exhausted: stalled
        }
        converged = residual_sup(&r, n) <= config.residual_tol;
    }

    // certify from scratch: rebuild the loop and re-evaluate the residual
    // through the public path, independent of solver bookkeeping
    let orbit = system.loop_from_flat(&x)?;
    let fresh = system.functional().residual(&orbit)?;
    let residual_sup = fresh.sup_norm();
    let action_value = system.functional().action(&orbit)?;
    Ok(OrbitResult {
        orbit,
        residual_sup,
        action_value,
        iters,
        converged: residual_sup <= config.residual_tol,
        energy_std: None,
    })
}

/// Integrate the classical (delay-free) Hamiltonian flow of `h` with RK4
/// over `time` units in `steps` steps. Returns the final point.
pub fn integrate_classical(
    h: &HamiltonianField,
    start: &[f64],
    time: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::Config("integration needs at least one step".into()));
    }
    let dt = time / steps as f64;
    let mut x = start.to_vec();
    for step in 0..steps {
        let k1 = ham_vector_field(h, &x)?;
        let x2: Vec<f64> = x.iter().zip(&k1).map(|(a, k)| a + 0.5 * dt * k).collect();
        let k2 = ham_vector_field(h, &x2)?;
        let x3: Vec<f64> = x.iter().zip(&k2).map(|(a, k)| a + 0.5 * dt * k).collect();
        let k3 = ham_vector_field(h, &x3)?;
        let x4: Vec<f64> = x.iter().zip(&k3).map(|(a, k)| a + dt * k).collect();
        let k4 = ham_vector_field(h, &x4)?;
        for i in 0..x.len() {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { step });
        }
    }
    Ok(x)
}

/// Natural-parameter continuation in the delay: solve at each shift in turn,
/// seeding every solve with the previous orbit. The returned branch includes
/// the first failing entry, after which continuation stops.
pub fn continue_in_tau<F>(
    mut make_system: F,
    shifts: &[usize],
    guess: &Loop,
    config: &SolverConfig,
) -> Result<Vec<(usize, OrbitResult)>>
where
    F: FnMut(DelayShift) -> Result<ResidualSystem>,
{
    let mut branch = Vec::with_capacity(shifts.len());
    let mut seed = guess.clone();
    for &s in shifts {
        let system = make_system(DelayShift::new(s))?;
        let result = solve_periodic(&system, &seed, config)?;
        let done = !result.converged;
        if result.converged {
            seed = result.orbit.clone();
        }
        branch.push((s, result));
        if done {
            break;
        }
    }
    Ok(branch)
}

/// Spectral diagnostics of the linearized system at a loop.
pub mod diagnostics {
    use super::*;

    /// Unanchored finite-difference Jacobian of the residual map.
    pub fn residual_jacobian(
        system: &ResidualSystem,
        v: &Loop,
        eps: f64,
    ) -> Result<DMatrix<f64>> {
        let n = system.unknowns();
        let x = v.values().to_vec();
        let base = DVector::from_vec(system.residual_flat(&x)?);
        let mut jac = DMatrix::zeros(n, n);
        let mut pert = x.clone();
        for j in 0..n {
            let h = eps * (1.0 + x[j].abs());
            pert[j] = x[j] + h;
            let r = system.residual_flat(&pert)?;
            pert[j] = x[j];
            for i in 0..n {
                jac[(i, j)] = (r[i] - base[i]) / h;
            }
        }
        Ok(jac)
    }

    /// Smallest singular value and the |cosine| of its right singular vector
    /// with the time-translation direction vdot. At a critical loop of an
    /// autonomous functional the smallest value is near zero and the cosine
    /// near one.
    pub fn translation_mode(system: &ResidualSystem, v: &Loop, eps: f64) -> Result<(f64, f64)> {
        let jac = residual_jacobian(system, v, eps)?;
        let svd = jac.svd(false, true);
        let vt = svd
            .v_t
            .as_ref()
            .ok_or_else(|| Error::SolverBreakdown("SVD did not return V^T".into()))?;
        let mut min_idx = 0;
        for (i, s) in svd.singular_values.iter().enumerate() {
            if *s < svd.singular_values[min_idx] {
                min_idx = i;
            }
        }
        let sigma_min = svd.singular_values[min_idx];
        let null = vt.row(min_idx);
        let drift = v.derivative()?;
        let d = drift.values();
        let dot: f64 = null.iter().zip(d.iter()).map(|(a, b)| a * b).sum();
        let nn: f64 = null.iter().map(|a| a * a).sum::<f64>().sqrt();
        let dn: f64 = d.iter().map(|a| a * a).sum::<f64>().sqrt();
        let cosine = if nn == 0.0 || dn == 0.0 {
            0.0
        } else {
            (dot / (nn * dn)).abs()
        };
        Ok((sigma_min, cosine))
    }

    /// Smallest singular value of the anchored system at a loop; the anchor
    /// row should lift the translation degeneracy.
    pub fn anchored_smallest_singular_value(
        system: &ResidualSystem,
        v: &Loop,
        anchor: PhaseAnchor,
        eps: f64,
    ) -> Result<f64> {
        let stacked = Stacked::new(system, v, anchor)?;
        let x = v.values().to_vec();
        let base = stacked.eval(&x)?;
        let jac = stacked.jacobian(&x, &base, eps)?;
        let svd = jac.svd(false, false);
        Ok(svd
            .singular_values
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min))
    }
}
