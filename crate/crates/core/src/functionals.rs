//! The four delay action functional families: action values, loop-space
//! gradients, and the delay critical-point residuals.
//!
//! The residual of each family is the closed-form critical-point equation
//! sampled on the grid, `R_k = vdot(t_k) - RHS(t_k)`. The L2 gradient is
//! assembled from the residual by the symplectic rotation, `grad_k = -J R_k`;
//! the finite-difference audit over random loops and tangents certifies the
//! whole lambda/omega/J sign chain at once.

use crate::error::{Error, Result};
use crate::loop_space::{quadrature, DelayShift, Loop, LoopTangent};
use crate::symplectic::{
    apply_j, apply_minus_j, registry, HamiltonianField, TimeDelayFamily, TwoInputHamiltonian,
};
use serde::{Deserialize, Serialize};

/// Family A: F plus a sum of products H_i(v(t)) K_i(v(t - tau)).
#[derive(Clone)]
pub struct SumProductFunctional {
    pub f: HamiltonianField,
    pub pairs: Vec<(HamiltonianField, HamiltonianField)>,
    pub delay: DelayShift,
}

/// Family B: double time dependence, the pair sum replaced by a tau-integral.
#[derive(Clone)]
pub struct DoubleTimeProductFunctional {
    pub h: TimeDelayFamily,
    pub k: TimeDelayFamily,
}

/// Family C: exponential of a tau-integral; H may depend on tau but not t.
#[derive(Clone)]
pub struct ExponentialFunctional {
    pub h: TimeDelayFamily,
}

/// Family D: a single two-input Hamiltonian coupling v(t) with v(t + tau).
#[derive(Clone)]
pub struct TwoInputFunctional {
    pub h: TwoInputHamiltonian,
    pub delay: DelayShift,
}

/// Tagged union over the four families.
#[derive(Clone)]
pub enum DelayFunctional {
    A(SumProductFunctional),
    B(DoubleTimeProductFunctional),
    C(ExponentialFunctional),
    D(TwoInputFunctional),
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// The discrete symplectic (Liouville) term of the action.
///
/// Sign pinned so that the harmonic circle of radius r has action pi r^2 and
/// the gradient audit closes: the term enters as -(1/N) sum_k <p_k, qdot_k>.
pub fn symplectic_action(v: &Loop) -> Result<f64> {
    let vdot = v.derivative()?;
    let n = v.half_dim();
    let mut s = 0.0;
    for k in 0..v.grid_size() {
        let pt = v.point(k);
        let dt = vdot.point(k);
        for j in 0..n {
            s += pt[n + j] * dt[j];
        }
    }
    Ok(-s / v.grid_size() as f64)
}

/// grad_k = -J R_k, the L2 action gradient from the residual.
pub fn gradient_from_residual(r: &LoopTangent) -> LoopTangent {
    let dim = r.dim();
    let n_grid = r.grid_size();
    let mut out = LoopTangent::zeros(dim, n_grid);
    for k in 0..n_grid {
        let src = r.point(k).to_vec();
        apply_minus_j(&src, &mut out.values_mut()[k * dim..(k + 1) * dim]);
    }
    out
}

impl SumProductFunctional {
    fn validate(&self, v: &Loop) -> Result<()> {
        check_dim(self.f.dim(), v.dim())?;
        for (h, k) in &self.pairs {
            check_dim(self.f.dim(), h.dim())?;
            check_dim(self.f.dim(), k.dim())?;
        }
        self.delay.validate(v.grid_size())
    }

    pub fn action(&self, v: &Loop) -> Result<f64> {
        self.validate(v)?;
        let n_grid = v.grid_size();
        let s = self.delay.steps();
        let mut samples = Vec::with_capacity(n_grid);
        for k in 0..n_grid {
            let x = v.point(k);
            let x_bwd = v.point((k + n_grid - s) % n_grid);
            let mut term = self.f.value(x);
            for (h, kk) in &self.pairs {
                term += h.value(x) * kk.value(x_bwd);
            }
            samples.push(term);
        }
        Ok(symplectic_action(v)? - quadrature(&samples))
    }

    pub fn residual(&self, v: &Loop) -> Result<LoopTangent> {
        self.validate(v)?;
        let dim = v.dim();
        let n_grid = v.grid_size();
        let s = self.delay.steps();
        let vdot = v.derivative()?;
        let mut out = LoopTangent::zeros(dim, n_grid);
        let mut grad = vec![0.0; dim];
        let mut rhs = vec![0.0; dim];
        let mut field = vec![0.0; dim];
        for k in 0..n_grid {
            let x = v.point(k);
            let x_fwd = v.point((k + s) % n_grid);
            let x_bwd = v.point((k + n_grid - s) % n_grid);
            self.f.gradient_into(x, &mut grad);
            apply_j(&grad, &mut rhs);
            for (h, kk) in &self.pairs {
                let h_fwd = h.value(x_fwd);
                kk.gradient_into(x, &mut grad);
                apply_j(&grad, &mut field);
                for j in 0..dim {
                    rhs[j] += h_fwd * field[j];
                }
                let k_bwd = kk.value(x_bwd);
                h.gradient_into(x, &mut grad);
                apply_j(&grad, &mut field);
                for j in 0..dim {
                    rhs[j] += k_bwd * field[j];
                }
            }
            let o = &mut out.values_mut()[k * dim..(k + 1) * dim];
            let d = vdot.point(k);
            for j in 0..dim {
                o[j] = d[j] - rhs[j];
            }
        }
        Ok(out)
    }

    pub fn grad_action(&self, v: &Loop) -> Result<LoopTangent> {
        Ok(gradient_from_residual(&self.residual(v)?))
    }
}

impl DoubleTimeProductFunctional {
    fn validate(&self, v: &Loop) -> Result<()> {
        check_dim(self.h.dim(), v.dim())?;
        check_dim(self.k.dim(), v.dim())
    }

    pub fn action(&self, v: &Loop) -> Result<f64> {
        self.validate(v)?;
        let n_grid = v.grid_size();
        let mut acc = 0.0;
        for s in 0..n_grid {
            let tau = s as f64 / n_grid as f64;
            for k in 0..n_grid {
                let t = k as f64 / n_grid as f64;
                let x = v.point(k);
                let x_bwd = v.point((k + n_grid - s) % n_grid);
                acc += self.h.value(x, t, tau) * self.k.value(x_bwd, t, tau);
            }
        }
        Ok(symplectic_action(v)? - acc / (n_grid * n_grid) as f64)
    }

    pub fn residual(&self, v: &Loop) -> Result<LoopTangent> {
        self.validate(v)?;
        let dim = v.dim();
        let n_grid = v.grid_size();
        let vdot = v.derivative()?;
        let mut out = LoopTangent::zeros(dim, n_grid);
        let mut grad = vec![0.0; dim];
        let mut field = vec![0.0; dim];
        for k in 0..n_grid {
            let t = k as f64 / n_grid as f64;
            let x = v.point(k);
            let mut rhs = vec![0.0; dim];
            for s in 0..n_grid {
                let tau = s as f64 / n_grid as f64;
                let t_fwd = ((k + s) % n_grid) as f64 / n_grid as f64;
                // H_{t+tau,tau}(v(t+tau)) * X_{K_{t+tau,tau}}(v(t))
                let h_fwd = self.h.value(v.point((k + s) % n_grid), t_fwd, tau);
                self.k.gradient_into(x, t_fwd, tau, &mut grad);
                apply_j(&grad, &mut field);
                for j in 0..dim {
                    rhs[j] += h_fwd * field[j];
                }
                // K_{t,tau}(v(t-tau)) * X_{H_{t,tau}}(v(t))
                let k_bwd = self.k.value(v.point((k + n_grid - s) % n_grid), t, tau);
                self.h.gradient_into(x, t, tau, &mut grad);
                apply_j(&grad, &mut field);
                for j in 0..dim {
                    rhs[j] += k_bwd * field[j];
                }
            }
            let o = &mut out.values_mut()[k * dim..(k + 1) * dim];
            let d = vdot.point(k);
            for j in 0..dim {
                o[j] = d[j] - rhs[j] / n_grid as f64;
            }
        }
        Ok(out)
    }

    pub fn grad_action(&self, v: &Loop) -> Result<LoopTangent> {
        Ok(gradient_from_residual(&self.residual(v)?))
    }
}

impl ExponentialFunctional {
    fn validate(&self, v: &Loop) -> Result<()> {
        check_dim(self.h.dim(), v.dim())
    }

    /// W_j = (1/N) sum_tau H_tau(v(t_j - tau)); the inner integral, computed
    /// once per loop and reused across the sigma shift.
    fn inner_sums(&self, v: &Loop) -> Vec<f64> {
        let n_grid = v.grid_size();
        (0..n_grid)
            .map(|j| {
                let mut w = 0.0;
                for s in 0..n_grid {
                    let tau = s as f64 / n_grid as f64;
                    w += self
                        .h
                        .value(v.point((j + n_grid - s) % n_grid), 0.0, tau);
                }
                w / n_grid as f64
            })
            .collect()
    }

    pub fn action(&self, v: &Loop) -> Result<f64> {
        self.validate(v)?;
        let w = self.inner_sums(v);
        let samples: Vec<f64> = w.iter().map(|wi| wi.exp()).collect();
        Ok(symplectic_action(v)? - quadrature(&samples))
    }

    pub fn residual(&self, v: &Loop) -> Result<LoopTangent> {
        self.validate(v)?;
        let dim = v.dim();
        let n_grid = v.grid_size();
        let vdot = v.derivative()?;
        let w = self.inner_sums(v);
        let mut out = LoopTangent::zeros(dim, n_grid);
        let mut grad = vec![0.0; dim];
        let mut field = vec![0.0; dim];
        for k in 0..n_grid {
            let x = v.point(k);
            let mut rhs = vec![0.0; dim];
            for s in 0..n_grid {
                let sigma = s as f64 / n_grid as f64;
                let weight = w[(k + s) % n_grid].exp();
                self.h.gradient_into(x, 0.0, sigma, &mut grad);
                apply_j(&grad, &mut field);
                for j in 0..dim {
                    rhs[j] += weight * field[j];
                }
            }
            let o = &mut out.values_mut()[k * dim..(k + 1) * dim];
            let d = vdot.point(k);
            for j in 0..dim {
                o[j] = d[j] - rhs[j] / n_grid as f64;
            }
        }
        Ok(out)
    }

    pub fn grad_action(&self, v: &Loop) -> Result<LoopTangent> {
        Ok(gradient_from_residual(&self.residual(v)?))
    }
}

impl TwoInputFunctional {
    fn validate(&self, v: &Loop) -> Result<()> {
        check_dim(self.h.dim(), v.dim())?;
        self.delay.validate(v.grid_size())
    }

    pub fn action(&self, v: &Loop) -> Result<f64> {
        self.validate(v)?;
        let n_grid = v.grid_size();
        let s = self.delay.steps();
        let samples: Vec<f64> = (0..n_grid)
            .map(|k| self.h.value(v.point(k), v.point((k + s) % n_grid)))
            .collect();
        Ok(symplectic_action(v)? - quadrature(&samples))
    }

    pub fn residual(&self, v: &Loop) -> Result<LoopTangent> {
        self.validate(v)?;
        let dim = v.dim();
        let n_grid = v.grid_size();
        let s = self.delay.steps();
        let vdot = v.derivative()?;
        let mut out = LoopTangent::zeros(dim, n_grid);
        let mut grad = vec![0.0; dim];
        let mut field = vec![0.0; dim];
        for k in 0..n_grid {
            let x = v.point(k);
            let x_fwd = v.point((k + s) % n_grid);
            let x_bwd = v.point((k + n_grid - s) % n_grid);
            let mut rhs = vec![0.0; dim];
            self.h.grad1_into(x, x_fwd, &mut grad);
            apply_j(&grad, &mut field);
            for j in 0..dim {
                rhs[j] += field[j];
            }
            self.h.grad2_into(x_bwd, x, &mut grad);
            apply_j(&grad, &mut field);
            for j in 0..dim {
                rhs[j] += field[j];
            }
            let o = &mut out.values_mut()[k * dim..(k + 1) * dim];
            let d = vdot.point(k);
            for j in 0..dim {
                o[j] = d[j] - rhs[j];
            }
        }
        Ok(out)
    }

    pub fn grad_action(&self, v: &Loop) -> Result<LoopTangent> {
        Ok(gradient_from_residual(&self.residual(v)?))
    }
}

impl DelayFunctional {
    pub fn action(&self, v: &Loop) -> Result<f64> {
        match self {
            DelayFunctional::A(f) => f.action(v),
            DelayFunctional::B(f) => f.action(v),
            DelayFunctional::C(f) => f.action(v),
            DelayFunctional::D(f) => f.action(v),
        }
    }

    pub fn residual(&self, v: &Loop) -> Result<LoopTangent> {
        match self {
            DelayFunctional::A(f) => f.residual(v),
            DelayFunctional::B(f) => f.residual(v),
            DelayFunctional::C(f) => f.residual(v),
            DelayFunctional::D(f) => f.residual(v),
        }
    }

    pub fn grad_action(&self, v: &Loop) -> Result<LoopTangent> {
        Ok(gradient_from_residual(&self.residual(v)?))
    }

    pub fn dim(&self) -> usize {
        match self {
            DelayFunctional::A(f) => f.f.dim(),
            DelayFunctional::B(f) => f.h.dim(),
            DelayFunctional::C(f) => f.h.dim(),
            DelayFunctional::D(f) => f.h.dim(),
        }
    }

    /// The classical (tau = 0, no delay structure) functional for a single
    /// Hamiltonian, as a family-A instance with no pairs.
    pub fn classical(h: HamiltonianField) -> Self {
        DelayFunctional::A(SumProductFunctional {
            f: h,
            pairs: Vec::new(),
            delay: DelayShift::zero(),
        })
    }
}

/// k -> H(v_k); constancy of this trace along solutions is the discrete
/// energy-conservation statement for the autonomous H = K reduction.
pub fn energy_trace(h: &HamiltonianField, v: &Loop) -> Result<Vec<f64>> {
    check_dim(h.dim(), v.dim())?;
    Ok((0..v.grid_size()).map(|k| h.value(v.point(k))).collect())
}

/// Standard deviation of the energy trace over (1 + |mean|).
pub fn energy_constancy(h: &HamiltonianField, v: &Loop) -> Result<f64> {
    let trace = energy_trace(h, v)?;
    let mean = quadrature(&trace);
    let var = trace.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / trace.len() as f64;
    Ok(var.sqrt() / (1.0 + mean.abs()))
}

/// Central-difference audit of the gradient convention: the largest
/// |FD directional derivative - <grad, w>| over random (loop, tangent)
/// pairs. `flip_gradient` negates the reported gradient so callers can
/// verify the audit catches sign errors.
pub fn convention_audit<R: rand::Rng>(
    functional: &DelayFunctional,
    half_dim: usize,
    grid_size: usize,
    trials: usize,
    eps: f64,
    flip_gradient: bool,
    rng: &mut R,
) -> Result<f64> {
    use crate::loop_space::{l2_inner, random_smooth_loop, random_smooth_tangent};
    check_dim(functional.dim(), 2 * half_dim)?;
    let mut max_error: f64 = 0.0;
    for _ in 0..trials {
        let v = random_smooth_loop(half_dim, grid_size, 4, 0.5, rng);
        let w = random_smooth_tangent(2 * half_dim, grid_size, 4, 0.5, rng);
        let mut plus = v.values().to_vec();
        let mut minus = v.values().to_vec();
        for (i, wi) in w.values().iter().enumerate() {
            plus[i] += eps * wi;
            minus[i] -= eps * wi;
        }
        let a_plus = functional.action(&Loop::phase(half_dim, grid_size, plus)?)?;
        let a_minus = functional.action(&Loop::phase(half_dim, grid_size, minus)?)?;
        let fd = (a_plus - a_minus) / (2.0 * eps);
        let mut grad = functional.grad_action(&v)?;
        if flip_gradient {
            for g in grad.values_mut() {
                *g = -*g;
            }
        }
        max_error = max_error.max((fd - l2_inner(&grad, &w)?).abs());
    }
    Ok(max_error)
}

/// A functional bound to a fixed loop shape: the root-finding target.
pub struct ResidualSystem {
    functional: DelayFunctional,
    half_dim: usize,
    grid_size: usize,
}

impl ResidualSystem {
    pub fn new(functional: DelayFunctional, half_dim: usize, grid_size: usize) -> Result<Self> {
        check_dim(functional.dim(), 2 * half_dim)?;
        match &functional {
            DelayFunctional::A(f) => f.delay.validate(grid_size)?,
            DelayFunctional::D(f) => f.delay.validate(grid_size)?,
            _ => {}
        }
        Ok(ResidualSystem {
            functional,
            half_dim,
            grid_size,
        })
    }

    pub fn functional(&self) -> &DelayFunctional {
        &self.functional
    }

    pub fn half_dim(&self) -> usize {
        self.half_dim
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn unknowns(&self) -> usize {
        2 * self.half_dim * self.grid_size
    }

    pub fn loop_from_flat(&self, flat: &[f64]) -> Result<Loop> {
        Loop::phase(self.half_dim, self.grid_size, flat.to_vec())
    }

    /// Residual of the flat unknown vector, flattened in grid-major order.
    pub fn residual_flat(&self, flat: &[f64]) -> Result<Vec<f64>> {
        let v = self.loop_from_flat(flat)?;
        Ok(self.functional.residual(&v)?.values().to_vec())
    }
}

/// Grid-commensurate delay given either as a step count or as "half".
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum TauSpec {
    Steps(usize),
    Named(String),
}

impl Default for TauSpec {
    fn default() -> Self {
        TauSpec::Steps(0)
    }
}

impl TauSpec {
    pub fn resolve(&self, grid_size: usize) -> Result<DelayShift> {
        let shift = match self {
            TauSpec::Steps(s) => DelayShift::new(*s),
            TauSpec::Named(name) if name == "half" => DelayShift::half_period(grid_size)?,
            TauSpec::Named(name) => {
                return Err(Error::Config(format!("unknown tau spec '{name}'")))
            }
        };
        shift.validate(grid_size)?;
        Ok(shift)
    }
}

/// JSON configuration for a functional, using registry model ids.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalConfig {
    pub family: String,
    pub n: usize,
    #[serde(rename = "N")]
    pub grid_size: usize,
    #[serde(default)]
    pub tau_steps: TauSpec,
    #[serde(rename = "F", default)]
    pub f: Option<String>,
    #[serde(default)]
    pub pairs: Option<Vec<[String; 2]>>,
    #[serde(rename = "H", default)]
    pub h: Option<String>,
    #[serde(rename = "K", default)]
    pub k: Option<String>,
}

impl FunctionalConfig {
    pub fn build(&self) -> Result<DelayFunctional> {
        let n = self.n;
        if n == 0 || self.grid_size == 0 {
            return Err(Error::Config("n and N must be positive".into()));
        }
        match self.family.as_str() {
            "A" => {
                let f = match &self.f {
                    Some(id) => registry::parse_field(id, n)?,
                    None => HamiltonianField::zero(2 * n),
                };
                let mut pairs = Vec::new();
                if let Some(ps) = &self.pairs {
                    for [h, k] in ps {
                        pairs.push((registry::parse_field(h, n)?, registry::parse_field(k, n)?));
                    }
                }
                Ok(DelayFunctional::A(SumProductFunctional {
                    f,
                    pairs,
                    delay: self.tau_steps.resolve(self.grid_size)?,
                }))
            }
            "B" => {
                let h = self
                    .h
                    .as_ref()
                    .ok_or_else(|| Error::Config("family B needs H".into()))?;
                let k = self
                    .k
                    .as_ref()
                    .ok_or_else(|| Error::Config("family B needs K".into()))?;
                Ok(DelayFunctional::B(DoubleTimeProductFunctional {
                    h: TimeDelayFamily::autonomous(registry::parse_field(h, n)?),
                    k: TimeDelayFamily::autonomous(registry::parse_field(k, n)?),
                }))
            }
            "C" => {
                let h = self
                    .h
                    .as_ref()
                    .ok_or_else(|| Error::Config("family C needs H".into()))?;
                Ok(DelayFunctional::C(ExponentialFunctional {
                    h: TimeDelayFamily::autonomous(registry::parse_field(h, n)?),
                }))
            }
            "D" => {
                let h = self
                    .h
                    .as_ref()
                    .ok_or_else(|| Error::Config("family D needs H".into()))?;
                Ok(DelayFunctional::D(TwoInputFunctional {
                    h: registry::parse_two_input(h, n)?,
                    delay: self.tau_steps.resolve(self.grid_size)?,
                }))
            }
            other => Err(Error::Config(format!("unknown family '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loop_space::{l2_inner, random_smooth_loop, random_smooth_tangent};
    use crate::symplectic::ham_vector_field;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn harmonic_a(n_grid: usize, delay: usize) -> SumProductFunctional {
        SumProductFunctional {
            f: HamiltonianField::harmonic(1, PI),
            pairs: vec![],
            delay: DelayShift::new(delay % n_grid),
        }
    }

    #[test]
    fn action_constant_loop_single_pair() {
        let c = Loop::constant(1, 16, &[0.4, -0.3]).unwrap();
        let h = HamiltonianField::harmonic(1, 0.5);
        let k = HamiltonianField::exp_p(1, 0);
        let f = SumProductFunctional {
            f: HamiltonianField::zero(2),
            pairs: vec![(h.clone(), k.clone())],
            delay: DelayShift::new(3),
        };
        let expected = -h.value(&[0.4, -0.3]) * k.value(&[0.4, -0.3]);
        assert!((f.action(&c).unwrap() - expected).abs() <= 1e-15);
    }

    #[test]
    fn action_of_circle_is_pi_r_squared() {
        // pure symplectic term; magnitude and sign pinned by the audit chain
        for r in [0.5, 1.0, 2.0] {
            let v = Loop::circle(1, 64, r, &[0.0, 0.0]).unwrap();
            let f = SumProductFunctional {
                f: HamiltonianField::zero(2),
                pairs: vec![],
                delay: DelayShift::zero(),
            };
            assert!((f.action(&v).unwrap() - PI * r * r).abs() <= 1e-12);
        }
    }

    #[test]
    fn residual_vanishes_at_common_critical_constant() {
        // all gradients vanish at the origin for harmonic fields
        let c = Loop::constant(1, 16, &[0.0, 0.0]).unwrap();
        let f = SumProductFunctional {
            f: HamiltonianField::harmonic(1, 1.0),
            pairs: vec![(
                HamiltonianField::harmonic(1, 0.3),
                HamiltonianField::harmonic(1, 0.7),
            )],
            delay: DelayShift::new(5),
        };
        assert_eq!(f.residual(&c).unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn harmonic_circle_is_a_residual_zero() {
        for r in [0.5, 1.0, 1.7] {
            let v = Loop::circle(1, 64, r, &[0.0, 0.0]).unwrap();
            let f = harmonic_a(64, 0);
            assert!(f.residual(&v).unwrap().sup_norm() <= 1e-12);
        }
    }

    #[test]
    fn tau_zero_collapse_matches_classical_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = HamiltonianField::harmonic(1, 0.4);
        let k = HamiltonianField::exp_p(1, 0);
        let fa = SumProductFunctional {
            f: HamiltonianField::zero(2),
            pairs: vec![(h.clone(), k.clone())],
            delay: DelayShift::zero(),
        };
        let classical = SumProductFunctional {
            f: HamiltonianField::product(h, k),
            pairs: vec![],
            delay: DelayShift::zero(),
        };
        for _ in 0..5 {
            let v = random_smooth_loop(1, 64, 3, 0.6, &mut rng);
            let ra = fa.residual(&v).unwrap();
            let rc = classical.residual(&v).unwrap();
            let diff = ra
                .values()
                .iter()
                .zip(rc.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(diff <= 1e-13);
            assert!((fa.action(&v).unwrap() - classical.action(&v).unwrap()).abs() <= 1e-14);
        }
    }

    fn fd_directional(
        action: &dyn Fn(&Loop) -> f64,
        v: &Loop,
        vhat: &LoopTangent,
        eps: f64,
    ) -> f64 {
        let perturb = |sign: f64| {
            let vals: Vec<f64> = v
                .values()
                .iter()
                .zip(vhat.values())
                .map(|(a, b)| a + sign * eps * b)
                .collect();
            Loop::phase(v.half_dim(), v.grid_size(), vals).unwrap()
        };
        (action(&perturb(1.0)) - action(&perturb(-1.0))) / (2.0 * eps)
    }

    #[test]
    fn gradient_matches_finite_differences_family_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = SumProductFunctional {
            f: HamiltonianField::harmonic(1, 0.8),
            pairs: vec![(
                HamiltonianField::exp_p(1, 0),
                HamiltonianField::harmonic(1, 0.5),
            )],
            delay: DelayShift::new(9),
        };
        for _ in 0..5 {
            let v = random_smooth_loop(1, 64, 3, 0.5, &mut rng);
            let vhat = random_smooth_tangent(2, 64, 3, 0.5, &mut rng);
            let g = f.grad_action(&v).unwrap();
            let fd = fd_directional(&|w| f.action(w).unwrap(), &v, &vhat, 1e-5);
            assert!((fd - l2_inner(&g, &vhat).unwrap()).abs() <= 1e-7);
        }
    }

    #[test]
    fn gradient_zero_at_residual_zero() {
        let v = Loop::circle(1, 64, 1.0, &[0.0, 0.0]).unwrap();
        let f = harmonic_a(64, 0);
        assert!(f.grad_action(&v).unwrap().sup_norm() <= 1e-12);
    }

    #[test]
    fn gradient_equivariant_under_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = SumProductFunctional {
            f: HamiltonianField::harmonic(1, 0.6),
            pairs: vec![(
                HamiltonianField::harmonic(1, 0.2),
                HamiltonianField::exp_p(1, 0),
            )],
            delay: DelayShift::new(4),
        };
        let v = random_smooth_loop(1, 32, 3, 0.5, &mut rng);
        let s = DelayShift::new(11);
        let a = f.grad_action(&v.shift(s).unwrap()).unwrap();
        let b = f.grad_action(&v).unwrap().shift(s).unwrap();
        let diff = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(diff <= 1e-13);
    }

    #[test]
    fn family_b_autonomous_reduces_to_loop_averages() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = HamiltonianField::harmonic(1, 0.7);
        let k = HamiltonianField::exp_p(1, 0);
        let fb = DoubleTimeProductFunctional {
            h: TimeDelayFamily::autonomous(h.clone()),
            k: TimeDelayFamily::autonomous(k.clone()),
        };
        for _ in 0..3 {
            let v = random_smooth_loop(1, 32, 3, 0.5, &mut rng);
            let r = fb.residual(&v).unwrap();
            let h_avg = crate::symplectic::loop_average(&h, &v).unwrap();
            let k_avg = crate::symplectic::loop_average(&k, &v).unwrap();
            let vdot = v.derivative().unwrap();
            for idx in 0..32 {
                let x = v.point(idx);
                let xk = ham_vector_field(&k, x).unwrap();
                let xh = ham_vector_field(&h, x).unwrap();
                for j in 0..2 {
                    let expected = vdot.point(idx)[j] - h_avg * xk[j] - k_avg * xh[j];
                    assert!((r.point(idx)[j] - expected).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn family_b_constant_k_is_classical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = HamiltonianField::harmonic(1, 0.9);
        let fb = DoubleTimeProductFunctional {
            h: TimeDelayFamily::autonomous(h.clone()),
            k: TimeDelayFamily::autonomous(HamiltonianField::constant(2, 1.0)),
        };
        let classical = DelayFunctional::classical(h);
        let v = random_smooth_loop(1, 32, 3, 0.5, &mut rng);
        let a = fb.residual(&v).unwrap();
        let b = classical.residual(&v).unwrap();
        let diff = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(diff <= 1e-13);
    }

    #[test]
    fn family_c_trivial_hamiltonian() {
        let fc = ExponentialFunctional {
            h: TimeDelayFamily::autonomous(HamiltonianField::zero(2)),
        };
        let v = Loop::circle(1, 32, 1.0, &[0.0, 0.0]).unwrap();
        // action reduces to symplectic term minus 1
        let expected = symplectic_action(&v).unwrap() - 1.0;
        assert!((fc.action(&v).unwrap() - expected).abs() <= 1e-15);
        // residual = vdot
        let r = fc.residual(&v).unwrap();
        let d = v.derivative().unwrap();
        assert_eq!(r.values(), d.values());
    }

    #[test]
    fn family_c_autonomous_reduces_to_exp_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let h = HamiltonianField::harmonic(1, 0.4);
        let fc = ExponentialFunctional {
            h: TimeDelayFamily::autonomous(h.clone()),
        };
        let v = random_smooth_loop(1, 32, 3, 0.5, &mut rng);
        let r = fc.residual(&v).unwrap();
        let h_avg = crate::symplectic::loop_average(&h, &v).unwrap();
        let vdot = v.derivative().unwrap();
        for idx in 0..32 {
            let xh = ham_vector_field(&h, v.point(idx)).unwrap();
            for j in 0..2 {
                let expected = vdot.point(idx)[j] - h_avg.exp() * xh[j];
                assert!((r.point(idx)[j] - expected).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn family_c_constant_critical_point() {
        let fc = ExponentialFunctional {
            h: TimeDelayFamily::autonomous(HamiltonianField::harmonic(1, 0.4)),
        };
        let c = Loop::constant(1, 16, &[0.0, 0.0]).unwrap();
        assert_eq!(fc.residual(&c).unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn family_d_separable_collapse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h1 = HamiltonianField::harmonic(1, 0.3);
        let h2 = HamiltonianField::exp_p(1, 0);
        let fd = TwoInputFunctional {
            h: TwoInputHamiltonian::separable(h1.clone(), h2.clone()),
            delay: DelayShift::new(7),
        };
        let classical = DelayFunctional::classical(HamiltonianField::sum(h1, h2));
        let v = random_smooth_loop(1, 32, 3, 0.5, &mut rng);
        let a = fd.residual(&v).unwrap();
        let b = classical.residual(&v).unwrap();
        let diff = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(diff <= 1e-13);
    }

    #[test]
    fn family_d_product_equals_family_a_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = HamiltonianField::harmonic(1, 0.5);
        let l = HamiltonianField::exp_p(1, 0);
        let fd = TwoInputFunctional {
            h: TwoInputHamiltonian::product(g.clone(), l.clone()),
            delay: DelayShift::new(27),
        };
        // family D couples v(t) forward: G(v(t)) L(v(t + tau)). Substituting
        // t -> t - tau on the circle gives L(v(t)) G(v(t - tau)), i.e. the
        // family-A pair (L, G) with the same shift.
        let fa = SumProductFunctional {
            f: HamiltonianField::zero(2),
            pairs: vec![(l, g)],
            delay: DelayShift::new(27),
        };
        let v = random_smooth_loop(1, 64, 3, 0.5, &mut rng);
        let a = fd.residual(&v).unwrap();
        let b = fa.residual(&v).unwrap();
        let diff = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(diff <= 1e-13);
    }

    #[test]
    fn energy_trace_examples() {
        let h = HamiltonianField::harmonic(1, PI);
        let c = Loop::constant(1, 8, &[0.3, 0.1]).unwrap();
        let tr = energy_trace(&h, &c).unwrap();
        assert!(tr.iter().all(|e| *e == tr[0]));

        let v = Loop::circle(1, 32, 1.5, &[0.0, 0.0]).unwrap();
        let tr = energy_trace(&h, &v).unwrap();
        for e in &tr {
            assert!((e - PI * 2.25).abs() <= 1e-12);
        }
        let mean = quadrature(&tr);
        assert!((mean - crate::symplectic::loop_average(&h, &v).unwrap()).abs() <= 1e-15);
    }

    #[test]
    fn residual_and_gradient_sup_norms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let f = harmonic_a(32, 0);
        let v = random_smooth_loop(1, 32, 3, 0.8, &mut rng);
        let r = f.residual(&v).unwrap();
        let g = f.grad_action(&v).unwrap();
        // -J permutes and negates coordinates; sup norms agree exactly
        assert_eq!(r.sup_norm(), g.sup_norm());
    }

    #[test]
    fn config_builds_families() {
        let cfg: FunctionalConfig = serde_json::from_str(
            r#"{"family":"A","n":1,"N":64,"tau_steps":8,"F":"harmonic(3.141592653589793)",
               "pairs":[["harmonic(0.5)","exp_p(1)"]]}"#,
        )
        .unwrap();
        assert!(matches!(cfg.build().unwrap(), DelayFunctional::A(_)));

        let cfg: FunctionalConfig = serde_json::from_str(
            r#"{"family":"B","n":1,"N":32,"H":"harmonic(1)","K":"harmonic(1)"}"#,
        )
        .unwrap();
        assert!(matches!(cfg.build().unwrap(), DelayFunctional::B(_)));

        let cfg: FunctionalConfig =
            serde_json::from_str(r#"{"family":"C","n":1,"N":32,"H":"harmonic(0.3)"}"#).unwrap();
        assert!(matches!(cfg.build().unwrap(), DelayFunctional::C(_)));

        let cfg: FunctionalConfig = serde_json::from_str(
            r#"{"family":"D","n":1,"N":32,"tau_steps":"half","H":"pair_coupling"}"#,
        )
        .unwrap();
        assert!(matches!(cfg.build().unwrap(), DelayFunctional::D(_)));

        let cfg: FunctionalConfig =
            serde_json::from_str(r#"{"family":"D","n":1,"N":31,"tau_steps":"half","H":"pair_coupling"}"#)
                .unwrap();
        assert!(cfg.build().is_err());
    }
}
