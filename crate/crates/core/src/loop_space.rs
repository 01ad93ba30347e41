//! Discrete 1-periodic loops in R^2n on a uniform grid.
//!
//! A loop is sampled at `t_k = k/N`, `k = 0..N-1`, with cyclic indexing.
//! Differentiation is spectral (circulant Fourier differentiation kernel),
//! quadrature is the trapezoid rule on the circle, which for periodic data
//! is the plain mean.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Minimum grid size accepted by the spectral derivative.
pub const MIN_DERIVATIVE_GRID: usize = 4;

/// Whether a loop lives in phase space (points split as (q, p)) or is a
/// plain positive-orthant population curve (Lotka-Volterra x-loops).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LoopRole {
    Phase,
    Population,
}

/// A grid-commensurate time delay tau = steps/N.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayShift {
    steps: usize,
}

impl DelayShift {
    pub fn new(steps: usize) -> Self {
        DelayShift { steps }
    }

    pub fn zero() -> Self {
        DelayShift { steps: 0 }
    }

    /// tau = 1/2, which requires an even grid.
    pub fn half_period(grid_size: usize) -> Result<Self> {
        if grid_size % 2 != 0 {
            return Err(Error::InvalidDelay {
                steps: grid_size / 2,
                grid_size,
            });
        }
        Ok(DelayShift {
            steps: grid_size / 2,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn tau(&self, grid_size: usize) -> f64 {
        self.steps as f64 / grid_size as f64
    }

    pub fn validate(&self, grid_size: usize) -> Result<()> {
        if self.steps >= grid_size {
            return Err(Error::InvalidDelay {
                steps: self.steps,
                grid_size,
            });
        }
        Ok(())
    }
}

/// A discretized 1-periodic curve: N samples of a point in R^dim.
///
/// Values are stored flat, row-major: `values[k*dim + j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Loop {
    dim: usize,
    grid_size: usize,
    role: LoopRole,
    values: Vec<f64>,
}

/// A variation of a loop: same shape, no (q, p) interpretation enforced.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopTangent {
    dim: usize,
    grid_size: usize,
    values: Vec<f64>,
}

fn check_finite(values: &[f64], context: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: context.to_string(),
        });
    }
    Ok(())
}

impl Loop {
    /// A phase-space loop in R^2n.
    pub fn phase(half_dim: usize, grid_size: usize, values: Vec<f64>) -> Result<Self> {
        let dim = 2 * half_dim;
        if half_dim == 0 || grid_size == 0 || values.len() != dim * grid_size {
            return Err(Error::DimensionMismatch {
                expected: dim * grid_size,
                got: values.len(),
            });
        }
        check_finite(&values, "loop values")?;
        Ok(Loop {
            dim,
            grid_size,
            role: LoopRole::Phase,
            values,
        })
    }

    /// A population loop in R^dim (no symplectic split).
    pub fn population(dim: usize, grid_size: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || grid_size == 0 || values.len() != dim * grid_size {
            return Err(Error::DimensionMismatch {
                expected: dim * grid_size,
                got: values.len(),
            });
        }
        check_finite(&values, "loop values")?;
        Ok(Loop {
            dim,
            grid_size,
            role: LoopRole::Population,
            values,
        })
    }

    /// Sample a phase loop from a closure `t -> point`.
    pub fn phase_from_fn<F>(half_dim: usize, grid_size: usize, f: F) -> Result<Self>
    where
        F: Fn(f64) -> Vec<f64>,
    {
        let dim = 2 * half_dim;
        let mut values = Vec::with_capacity(dim * grid_size);
        for k in 0..grid_size {
            let t = k as f64 / grid_size as f64;
            let pt = f(t);
            if pt.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: pt.len(),
                });
            }
            values.extend_from_slice(&pt);
        }
        Loop::phase(half_dim, grid_size, values)
    }

    pub fn constant(half_dim: usize, grid_size: usize, point: &[f64]) -> Result<Self> {
        if point.len() != 2 * half_dim {
            return Err(Error::DimensionMismatch {
                expected: 2 * half_dim,
                got: point.len(),
            });
        }
        let mut values = Vec::with_capacity(point.len() * grid_size);
        for _ in 0..grid_size {
            values.extend_from_slice(point);
        }
        Loop::phase(half_dim, grid_size, values)
    }

    /// The circle of given radius around `center` in the (q_1, p_1) plane,
    /// traversed once: q_1 = c + r cos(2 pi t), p_1 = c + r sin(2 pi t).
    pub fn circle(half_dim: usize, grid_size: usize, radius: f64, center: &[f64]) -> Result<Self> {
        if center.len() != 2 * half_dim {
            return Err(Error::DimensionMismatch {
                expected: 2 * half_dim,
                got: center.len(),
            });
        }
        let center = center.to_vec();
        Loop::phase_from_fn(half_dim, grid_size, move |t| {
            let mut pt = center.clone();
            pt[0] += radius * (2.0 * PI * t).cos();
            pt[half_dim] += radius * (2.0 * PI * t).sin();
            pt
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// n, with phase space R^2n. Only meaningful for phase loops.
    pub fn half_dim(&self) -> usize {
        debug_assert_eq!(self.role, LoopRole::Phase);
        self.dim / 2
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn role(&self) -> LoopRole {
        self.role
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn point(&self, k: usize) -> &[f64] {
        let k = k % self.grid_size;
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// Point at a possibly negative cyclic index.
    pub fn point_cyclic(&self, k: isize) -> &[f64] {
        let n = self.grid_size as isize;
        let k = ((k % n) + n) % n;
        self.point(k as usize)
    }

    pub fn time(&self, k: usize) -> f64 {
        (k % self.grid_size) as f64 / self.grid_size as f64
    }

    /// Cyclic reindexing `result[k] = self[(k - s) mod N]`, i.e. t -> v(t - tau).
    pub fn shift(&self, s: DelayShift) -> Result<Loop> {
        s.validate(self.grid_size)?;
        let n = self.grid_size;
        let mut values = Vec::with_capacity(self.values.len());
        for k in 0..n {
            let src = (k + n - s.steps()) % n;
            values.extend_from_slice(&self.values[src * self.dim..(src + 1) * self.dim]);
        }
        Ok(Loop {
            dim: self.dim,
            grid_size: n,
            role: self.role,
            values,
        })
    }

    /// Spectral derivative of every coordinate.
    ///
    /// Exact on trigonometric polynomials of degree < N/2; the Nyquist mode
    /// of an even grid differentiates to zero.
    pub fn derivative(&self) -> Result<LoopTangent> {
        let n = self.grid_size;
        if n < MIN_DERIVATIVE_GRID {
            return Err(Error::GridTooCoarse {
                grid_size: n,
                min: MIN_DERIVATIVE_GRID,
            });
        }
        let kernel = diff_kernel(n);
        let mut out = vec![0.0; self.values.len()];
        for k in 0..n {
            for r in 0..n {
                let d = kernel[r];
                if d == 0.0 {
                    continue;
                }
                let src = (k + n - r) % n;
                for j in 0..self.dim {
                    out[k * self.dim + j] += d * self.values[src * self.dim + j];
                }
            }
        }
        Ok(LoopTangent {
            dim: self.dim,
            grid_size: n,
            values: out,
        })
    }

    /// Fraction of spectral energy (mean excluded) in the top half of the
    /// resolved modes; a smoothness diagnostic, not an enforced bound.
    pub fn spectral_tail_fraction(&self) -> f64 {
        let n = self.grid_size;
        let half = n / 2;
        let cut = half.div_ceil(2);
        let mut total = 0.0;
        let mut tail = 0.0;
        for j in 0..self.dim {
            for m in 1..=half {
                let (mut re, mut im) = (0.0, 0.0);
                for k in 0..n {
                    let ang = -2.0 * PI * (m * k) as f64 / n as f64;
                    let v = self.values[k * self.dim + j];
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                let e = re * re + im * im;
                total += e;
                if m > cut {
                    tail += e;
                }
            }
        }
        if total == 0.0 {
            0.0
        } else {
            tail / total
        }
    }

    /// CSV with a role-dependent header and 17-significant-digit values.
    pub fn to_csv(&self) -> String {
        let n = self.grid_size;
        let mut out = String::from("t");
        match self.role {
            LoopRole::Phase => {
                let hd = self.dim / 2;
                for j in 1..=hd {
                    out.push_str(&format!(",q{j}"));
                }
                for j in 1..=hd {
                    out.push_str(&format!(",p{j}"));
                }
            }
            LoopRole::Population => {
                for j in 1..=self.dim {
                    out.push_str(&format!(",x{j}"));
                }
            }
        }
        out.push('\n');
        for k in 0..n {
            out.push_str(&format!("{:.16e}", k as f64 / n as f64));
            for j in 0..self.dim {
                out.push_str(&format!(",{:.16e}", self.values[k * self.dim + j]));
            }
            out.push('\n');
        }
        out
    }

    /// Parse the CSV form written by [`Loop::to_csv`]; the role is inferred
    /// from the header.
    pub fn from_csv(text: &str) -> Result<Loop> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty CSV".into()))?;
        let cols: Vec<&str> = header.split(',').map(|c| c.trim()).collect();
        if cols.is_empty() || cols[0] != "t" {
            return Err(Error::Parse("CSV header must start with 't'".into()));
        }
        let role = if cols.len() > 1 && cols[1].starts_with('q') {
            LoopRole::Phase
        } else if cols.len() > 1 && cols[1].starts_with('x') {
            LoopRole::Population
        } else {
            return Err(Error::Parse("unrecognized CSV header".into()));
        };
        let dim = cols.len() - 1;
        let mut values = Vec::new();
        let mut rows = 0usize;
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 1 {
                return Err(Error::Parse(format!("row with {} fields", fields.len())));
            }
            for f in &fields[1..] {
                values.push(
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(e.to_string()))?,
                );
            }
            rows += 1;
        }
        match role {
            LoopRole::Phase => {
                if dim % 2 != 0 {
                    return Err(Error::Parse("phase CSV with odd dimension".into()));
                }
                Loop::phase(dim / 2, rows, values)
            }
            LoopRole::Population => Loop::population(dim, rows, values),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("loop serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Loop> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
struct LoopRepr {
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    #[serde(rename = "N")]
    grid_size: usize,
    values: Vec<Vec<f64>>,
}

impl Serialize for Loop {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let values = (0..self.grid_size)
            .map(|k| self.point(k).to_vec())
            .collect();
        let repr = match self.role {
            LoopRole::Phase => LoopRepr {
                n: Some(self.dim / 2),
                dim: None,
                grid_size: self.grid_size,
                values,
            },
            LoopRole::Population => LoopRepr {
                n: None,
                dim: Some(self.dim),
                grid_size: self.grid_size,
                values,
            },
        };
        repr.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for Loop {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as DeError;
        let repr = LoopRepr::deserialize(de)?;
        let flat: Vec<f64> = repr.values.into_iter().flatten().collect();
        match (repr.n, repr.dim) {
            (Some(n), None) => {
                Loop::phase(n, repr.grid_size, flat).map_err(|e| D::Error::custom(e.to_string()))
            }
            (None, Some(d)) => Loop::population(d, repr.grid_size, flat)
                .map_err(|e| D::Error::custom(e.to_string())),
            _ => Err(D::Error::custom("loop JSON needs exactly one of n, dim")),
        }
    }
}

impl LoopTangent {
    pub fn new(dim: usize, grid_size: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || grid_size == 0 || values.len() != dim * grid_size {
            return Err(Error::DimensionMismatch {
                expected: dim * grid_size,
                got: values.len(),
            });
        }
        Ok(LoopTangent {
            dim,
            grid_size,
            values,
        })
    }

    pub fn zeros(dim: usize, grid_size: usize) -> Self {
        LoopTangent {
            dim,
            grid_size,
            values: vec![0.0; dim * grid_size],
        }
    }

    pub fn from_fn<F>(dim: usize, grid_size: usize, f: F) -> Result<Self>
    where
        F: Fn(f64) -> Vec<f64>,
    {
        let mut values = Vec::with_capacity(dim * grid_size);
        for k in 0..grid_size {
            let pt = f(k as f64 / grid_size as f64);
            if pt.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: pt.len(),
                });
            }
            values.extend_from_slice(&pt);
        }
        LoopTangent::new(dim, grid_size, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn point(&self, k: usize) -> &[f64] {
        let k = k % self.grid_size;
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn shift(&self, s: DelayShift) -> Result<LoopTangent> {
        s.validate(self.grid_size)?;
        let n = self.grid_size;
        let mut values = Vec::with_capacity(self.values.len());
        for k in 0..n {
            let src = (k + n - s.steps()) % n;
            values.extend_from_slice(&self.values[src * self.dim..(src + 1) * self.dim]);
        }
        Ok(LoopTangent {
            dim: self.dim,
            grid_size: n,
            values,
        })
    }
}

/// Antisymmetric circulant kernel of the periodic spectral differentiation
/// matrix on [0, 1). `derivative[k] = sum_r kernel[r] * v[(k - r) mod N]`.
///
/// Antisymmetry `kernel[N-r] = -kernel[r]` is enforced bitwise so that the
/// discrete transpose is exactly the negation, which in turn makes the
/// discrete action gradient match the residual identity exactly.
pub fn diff_kernel(n: usize) -> Vec<f64> {
    let mut d = vec![0.0; n];
    let even = n % 2 == 0;
    for r in 1..=(n - 1) / 2 {
        let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
        let ang = PI * r as f64 / n as f64;
        d[r] = if even {
            sign * PI * ang.cos() / ang.sin()
        } else {
            sign * PI / ang.sin()
        };
        d[n - r] = -d[r];
    }
    // Nyquist column of an even grid differentiates to zero.
    d
}

/// Mean over the periodic grid: (1/N) * sum. Exact for trigonometric
/// polynomials of degree < N.
pub fn quadrature(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n == 0 {
        return 0.0;
    }
    samples.iter().sum::<f64>() / n as f64
}

/// L2 pairing (1/N) sum_k <a_k, b_k>.
pub fn l2_inner(a: &LoopTangent, b: &LoopTangent) -> Result<f64> {
    if a.dim != b.dim || a.grid_size != b.grid_size {
        return Err(Error::DimensionMismatch {
            expected: a.values.len(),
            got: b.values.len(),
        });
    }
    let s: f64 = a
        .values
        .iter()
        .zip(b.values.iter())
        .map(|(x, y)| x * y)
        .sum();
    Ok(s / a.grid_size as f64)
}

/// A random loop built from a few low Fourier modes; smooth by construction.
pub fn random_smooth_loop<R: Rng>(
    half_dim: usize,
    grid_size: usize,
    modes: usize,
    amplitude: f64,
    rng: &mut R,
) -> Loop {
    let dim = 2 * half_dim;
    let coeffs: Vec<(f64, f64, f64)> = (0..dim * modes)
        .map(|_| {
            (
                rng.gen_range(-amplitude..amplitude),
                rng.gen_range(-amplitude..amplitude),
                rng.gen_range(-amplitude..amplitude),
            )
        })
        .collect();
    let offsets: Vec<f64> = (0..dim).map(|_| rng.gen_range(-amplitude..amplitude)).collect();
    Loop::phase_from_fn(half_dim, grid_size, |t| {
        (0..dim)
            .map(|j| {
                let mut v = offsets[j];
                for m in 1..=modes {
                    let (a, b, _) = coeffs[j * modes + m - 1];
                    let w = 2.0 * PI * m as f64 * t;
                    v += (a * w.cos() + b * w.sin()) / m as f64;
                }
                v
            })
            .collect()
    })
    .expect("random loop construction is shape-correct")
}

/// A random tangent with the same smoothness structure.
pub fn random_smooth_tangent<R: Rng>(
    dim: usize,
    grid_size: usize,
    modes: usize,
    amplitude: f64,
    rng: &mut R,
) -> LoopTangent {
    let lp = random_smooth_loop(dim.div_ceil(2), grid_size, modes, amplitude, rng);
    let mut values = Vec::with_capacity(dim * grid_size);
    for k in 0..grid_size {
        values.extend_from_slice(&lp.point(k)[..dim]);
    }
    LoopTangent::new(dim, grid_size, values).expect("shape-correct")
}
