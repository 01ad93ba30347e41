//! Hamiltonian functions on R^2n with analytic gradients, the complex
//! structure J, and the induced vector fields.
//!
//! Conventions, pinned once and validated end-to-end by the gradient audit
//! in `functionals`: J(q, p) = (-p, q), omega(a, b) = <J a, b>, and
//! X_H = J grad H.

use crate::error::{Error, Result};
use crate::loop_space::{quadrature, Loop};
use std::sync::Arc;

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
type TimeValueFn = dyn Fn(&[f64], f64, f64) -> f64 + Send + Sync;
type TimeGradFn = dyn Fn(&[f64], f64, f64, &mut [f64]) + Send + Sync;
type TwoValueFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
type TwoGradFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// A scalar function on R^2n with a hand-coded gradient.
#[derive(Clone)]
pub struct HamiltonianField {
    dim: usize,
    value: Arc<ValueFn>,
    gradient: Arc<GradFn>,
}

impl HamiltonianField {
    pub fn new<V, G>(dim: usize, value: V, gradient: G) -> Self
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        HamiltonianField {
            dim,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        (self.gradient)(x, out)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.gradient_into(x, &mut out);
        out
    }

    pub fn zero(dim: usize) -> Self {
        HamiltonianField::new(dim, |_| 0.0, |_, g| g.fill(0.0))
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        HamiltonianField::new(dim, move |_| c, |_, g| g.fill(0.0))
    }

    /// a * (|q|^2 + |p|^2).
    pub fn harmonic(half_dim: usize, a: f64) -> Self {
        HamiltonianField::new(
            2 * half_dim,
            move |x| a * x.iter().map(|v| v * v).sum::<f64>(),
            move |x, g| {
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi = 2.0 * a * xi;
                }
            },
        )
    }

    /// sum_i b_i q_i.
    pub fn linear_q(b: Vec<f64>) -> Self {
        let n = b.len();
        let b2 = b.clone();
        HamiltonianField::new(
            2 * n,
            move |x| b.iter().zip(x).map(|(bi, qi)| bi * qi).sum(),
            move |_, g| {
                g.fill(0.0);
                g[..n].copy_from_slice(&b2);
            },
        )
    }

    /// e^{p_i}, 0-based coordinate index.
    pub fn exp_p(half_dim: usize, i: usize) -> Self {
        HamiltonianField::new(
            2 * half_dim,
            move |x| x[half_dim + i].exp(),
            move |x, g| {
                g.fill(0.0);
                g[half_dim + i] = x[half_dim + i].exp();
            },
        )
    }

    /// e^{(1/2) sum_j c_j q_j} for a coefficient row c.
    pub fn exp_half_q(coeffs: Vec<f64>) -> Self {
        let n = coeffs.len();
        let c2 = coeffs.clone();
        HamiltonianField::new(
            2 * n,
            move |x| {
                (0.5 * coeffs.iter().zip(x).map(|(c, q)| c * q).sum::<f64>()).exp()
            },
            move |x, g| {
                let v = (0.5 * c2.iter().zip(x).map(|(c, q)| c * q).sum::<f64>()).exp();
                g.fill(0.0);
                for j in 0..n {
                    g[j] = 0.5 * c2[j] * v;
                }
            },
        )
    }

    /// Pointwise product with product-rule gradient.
    pub fn product(g: HamiltonianField, l: HamiltonianField) -> Self {
        let dim = g.dim;
        HamiltonianField::new(
            dim,
            {
                let (g, l) = (g.clone(), l.clone());
                move |x| g.value(x) * l.value(x)
            },
            move |x, out| {
                let gv = g.value(x);
                let lv = l.value(x);
                let mut tmp = vec![0.0; dim];
                g.gradient_into(x, out);
                l.gradient_into(x, &mut tmp);
                for j in 0..dim {
                    out[j] = out[j] * lv + gv * tmp[j];
                }
            },
        )
    }

    pub fn sum(a: HamiltonianField, b: HamiltonianField) -> Self {
        let dim = a.dim;
        HamiltonianField::new(
            dim,
            {
                let (a, b) = (a.clone(), b.clone());
                move |x| a.value(x) + b.value(x)
            },
            move |x, out| {
                let mut tmp = vec![0.0; dim];
                a.gradient_into(x, out);
                b.gradient_into(x, &mut tmp);
                for j in 0..dim {
                    out[j] += tmp[j];
                }
            },
        )
    }

    /// H^2 with gradient 2 H grad H.
    pub fn squared(h: HamiltonianField) -> Self {
        HamiltonianField::product(h.clone(), h)
    }
}

/// H(x, t, tau), 1-periodic in both circle variables.
#[derive(Clone)]
pub struct TimeDelayFamily {
    dim: usize,
    value: Arc<TimeValueFn>,
    gradient: Arc<TimeGradFn>,
}

impl TimeDelayFamily {
    pub fn new<V, G>(dim: usize, value: V, gradient: G) -> Self
    where
        V: Fn(&[f64], f64, f64) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], f64, f64, &mut [f64]) + Send + Sync + 'static,
    {
        TimeDelayFamily {
            dim,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        }
    }

    /// Wrap an autonomous field (value ignores both t and tau).
    pub fn autonomous(field: HamiltonianField) -> Self {
        let f2 = field.clone();
        TimeDelayFamily::new(
            field.dim(),
            move |x, _, _| field.value(x),
            move |x, _, _, g| f2.gradient_into(x, g),
        )
    }

    /// A (t, tau)-modulated scalar multiple of a base field.
    pub fn modulated<M>(field: HamiltonianField, weight: M) -> Self
    where
        M: Fn(f64, f64) -> f64 + Send + Sync + Clone + 'static,
    {
        let f2 = field.clone();
        let w2 = weight.clone();
        TimeDelayFamily::new(
            field.dim(),
            move |x, t, tau| weight(t, tau) * field.value(x),
            move |x, t, tau, g| {
                f2.gradient_into(x, g);
                let w = w2(t, tau);
                for gi in g.iter_mut() {
                    *gi *= w;
                }
            },
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, x: &[f64], t: f64, tau: f64) -> f64 {
        (self.value)(x, t, tau)
    }

    pub fn gradient_into(&self, x: &[f64], t: f64, tau: f64, out: &mut [f64]) {
        (self.gradient)(x, t, tau, out)
    }

    /// Max deviation of `value` from t-independence over a sample grid;
    /// used to validate the tau-only restriction of the exponential family.
    pub fn t_dependence(&self, x: &[f64], samples: usize) -> f64 {
        let base = self.value(x, 0.0, 0.3);
        (0..samples)
            .map(|k| {
                let t = k as f64 / samples as f64;
                (self.value(x, t, 0.3) - base).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Max periodicity defect in t and tau at a sample point.
    pub fn periodicity_defect(&self, x: &[f64], samples: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..samples {
            let s = k as f64 / samples as f64;
            worst = worst
                .max((self.value(x, s, 0.3) - self.value(x, s + 1.0, 0.3)).abs())
                .max((self.value(x, 0.3, s) - self.value(x, 0.3, s + 1.0)).abs());
        }
        worst
    }
}

/// H(x, y) on R^2n x R^2n with per-slot gradients d_1 H and d_2 H.
#[derive(Clone)]
pub struct TwoInputHamiltonian {
    dim: usize,
    value: Arc<TwoValueFn>,
    grad1: Arc<TwoGradFn>,
    grad2: Arc<TwoGradFn>,
}

impl TwoInputHamiltonian {
    pub fn new<V, G1, G2>(dim: usize, value: V, grad1: G1, grad2: G2) -> Self
    where
        V: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        G1: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        G2: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        TwoInputHamiltonian {
            dim,
            value: Arc::new(value),
            grad1: Arc::new(grad1),
            grad2: Arc::new(grad2),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        (self.value)(x, y)
    }

    pub fn grad1_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.grad1)(x, y, out)
    }

    pub fn grad2_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.grad2)(x, y, out)
    }

    /// Euclidean pairing <x, y>.
    pub fn pair_coupling(dim: usize) -> Self {
        TwoInputHamiltonian::new(
            dim,
            |x, y| x.iter().zip(y).map(|(a, b)| a * b).sum(),
            |_, y, g| g.copy_from_slice(y),
            |x, _, g| g.copy_from_slice(x),
        )
    }

    /// H(x, y) = H1(x) + H2(y).
    pub fn separable(h1: HamiltonianField, h2: HamiltonianField) -> Self {
        let dim = h1.dim();
        let (h1v, h2v) = (h1.clone(), h2.clone());
        TwoInputHamiltonian::new(
            dim,
            move |x, y| h1v.value(x) + h2v.value(y),
            move |x, _, g| h1.gradient_into(x, g),
            move |_, y, g| h2.gradient_into(y, g),
        )
    }

    /// H(x, y) = G(x) * L(y).
    pub fn product(g: HamiltonianField, l: HamiltonianField) -> Self {
        let dim = g.dim();
        let (gv, lv) = (g.clone(), l.clone());
        TwoInputHamiltonian::new(
            dim,
            move |x, y| gv.value(x) * lv.value(y),
            {
                let (g, l) = (g.clone(), l.clone());
                move |x, y, out| {
                    g.gradient_into(x, out);
                    let s = l.value(y);
                    for o in out.iter_mut() {
                        *o *= s;
                    }
                }
            },
            move |x, y, out| {
                l.gradient_into(y, out);
                let s = g.value(x);
                for o in out.iter_mut() {
                    *o *= s;
                }
            },
        )
    }
}

/// J(q, p) = (-p, q), the complex structure of R^2n = C^n.
pub fn complex_structure(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() % 2 != 0 || x.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: x.len() + 1,
            got: x.len(),
        });
    }
    let mut out = vec![0.0; x.len()];
    apply_j(x, &mut out);
    Ok(out)
}

/// In-place variant of [`complex_structure`]; `x` and `out` must not alias.
pub fn apply_j(x: &[f64], out: &mut [f64]) {
    let n = x.len() / 2;
    for j in 0..n {
        out[j] = -x[n + j];
        out[n + j] = x[j];
    }
}

/// -J applied to x; used to turn residuals into action gradients.
pub fn apply_minus_j(x: &[f64], out: &mut [f64]) {
    let n = x.len() / 2;
    for j in 0..n {
        out[j] = x[n + j];
        out[n + j] = -x[j];
    }
}

/// X_H(x) = J grad H(x).
pub fn ham_vector_field(h: &HamiltonianField, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            got: x.len(),
        });
    }
    let g = h.gradient(x);
    complex_structure(&g)
}

/// (X^1_H(x, y), X^2_H(x, y)); both vectors are read at the tangent space of
/// the slot they differentiate.
pub fn partial_vector_fields(
    h: &TwoInputHamiltonian,
    x: &[f64],
    y: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != h.dim() || y.len() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            got: x.len().max(y.len()),
        });
    }
    let mut g1 = vec![0.0; h.dim()];
    let mut g2 = vec![0.0; h.dim()];
    h.grad1_into(x, y, &mut g1);
    h.grad2_into(x, y, &mut g2);
    Ok((complex_structure(&g1)?, complex_structure(&g2)?))
}

/// Max relative deviation of the analytic gradient from central differences.
pub fn gradient_check(h: &HamiltonianField, x: &[f64], eps: f64) -> f64 {
    let analytic = h.gradient(x);
    let mut worst: f64 = 0.0;
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        xp[j] = x[j] + eps;
        let fp = h.value(&xp);
        xp[j] = x[j] - eps;
        let fm = h.value(&xp);
        xp[j] = x[j];
        let fd = (fp - fm) / (2.0 * eps);
        worst = worst.max((fd - analytic[j]).abs() / (1.0 + analytic[j].abs()));
    }
    worst
}

/// Mean of H along the loop: (1/N) sum_k H(v_k).
pub fn loop_average(h: &HamiltonianField, v: &Loop) -> Result<f64> {
    if h.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            got: v.dim(),
        });
    }
    let samples: Vec<f64> = (0..v.grid_size()).map(|k| h.value(v.point(k))).collect();
    Ok(quadrature(&samples))
}

/// Built-in model registry addressed by string ids, used by CLI configs.
///
/// Single-input ids (n = half dimension from the surrounding config):
/// `zero`, `const(c)`, `harmonic(a)`, `linear(b1,...,bn)`, `exp_p(i)` with
/// 1-based i, `exp_halfAq(i; [[...]])` with 1-based row index.
/// Two-input ids: `pair_coupling`, `separable(id1; id2)`, `product(id1; id2)`.
pub mod registry {
    use super::*;

    fn args_of<'a>(id: &'a str, name: &str) -> Option<&'a str> {
        let rest = id.strip_prefix(name)?;
        let rest = rest.trim();
        let inner = rest.strip_prefix('(')?.strip_suffix(')')?;
        Some(inner)
    }

    /// Split on top-level `;`, respecting brackets and parentheses.
    fn split_top(s: &str) -> Vec<&str> {
        let mut parts = Vec::new();
        let mut depth = 0i32;
        let mut start = 0;
        for (i, c) in s.char_indices() {
            match c {
                '(' | '[' => depth += 1,
                ')' | ']' => depth -= 1,
                ';' if depth == 0 => {
                    parts.push(&s[start..i]);
                    start = i + 1;
                }
                _ => {}
            }
        }
        parts.push(&s[start..]);
        parts
    }

    fn parse_floats(s: &str) -> Result<Vec<f64>> {
        s.split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(e.to_string()))
            })
            .collect()
    }

    pub fn parse_field(id: &str, half_dim: usize) -> Result<HamiltonianField> {
        let id = id.trim();
        if id == "zero" {
            return Ok(HamiltonianField::zero(2 * half_dim));
        }
        if let Some(a) = args_of(id, "const") {
            let c: f64 = a.trim().parse().map_err(|_| Error::Parse(a.into()))?;
            return Ok(HamiltonianField::constant(2 * half_dim, c));
        }
        if let Some(a) = args_of(id, "harmonic") {
            let a: f64 = a.trim().parse().map_err(|_| Error::Parse(a.into()))?;
            return Ok(HamiltonianField::harmonic(half_dim, a));
        }
        if let Some(a) = args_of(id, "linear") {
            let b = parse_floats(a)?;
            if b.len() != half_dim {
                return Err(Error::DimensionMismatch {
                    expected: half_dim,
                    got: b.len(),
                });
            }
            return Ok(HamiltonianField::linear_q(b));
        }
        if let Some(a) = args_of(id, "exp_p") {
            let i: usize = a.trim().parse().map_err(|_| Error::Parse(a.into()))?;
            if i == 0 || i > half_dim {
                return Err(Error::Config(format!(
                    "exp_p index {i} out of range 1..={half_dim}"
                )));
            }
            return Ok(HamiltonianField::exp_p(half_dim, i - 1));
        }
        if let Some(a) = args_of(id, "exp_halfAq") {
            let parts = split_top(a);
            if parts.len() != 2 {
                return Err(Error::Parse("exp_halfAq needs 'i; A'".into()));
            }
            let i: usize = parts[0]
                .trim()
                .parse()
                .map_err(|_| Error::Parse(parts[0].into()))?;
            let matrix: Vec<Vec<f64>> = serde_json::from_str(parts[1].trim())
                .map_err(|e| Error::Parse(e.to_string()))?;
            if i == 0 || i > matrix.len() {
                return Err(Error::Config(format!("exp_halfAq row {i} out of range")));
            }
            let row = matrix[i - 1].clone();
            if row.len() != half_dim {
                return Err(Error::DimensionMismatch {
                    expected: half_dim,
                    got: row.len(),
                });
            }
            return Ok(HamiltonianField::exp_half_q(row));
        }
        Err(Error::UnknownModel(id.into()))
    }

    pub fn parse_two_input(id: &str, half_dim: usize) -> Result<TwoInputHamiltonian> {
        let id = id.trim();
        if id == "pair_coupling" {
            return Ok(TwoInputHamiltonian::pair_coupling(2 * half_dim));
        }
        if let Some(a) = args_of(id, "separable") {
            let parts = split_top(a);
            if parts.len() != 2 {
                return Err(Error::Parse("separable needs two ids".into()));
            }
            return Ok(TwoInputHamiltonian::separable(
                parse_field(parts[0], half_dim)?,
                parse_field(parts[1], half_dim)?,
            ));
        }
        if let Some(a) = args_of(id, "product") {
            let parts = split_top(a);
            if parts.len() != 2 {
                return Err(Error::Parse("product needs two ids".into()));
            }
            return Ok(TwoInputHamiltonian::product(
                parse_field(parts[0], half_dim)?,
                parse_field(parts[1], half_dim)?,
            ));
        }
        Err(Error::UnknownModel(id.into()))
    }
}
