//! Reference measure π ∝ e^{−U}, relative entropy, relative Fisher
//! information and the proximal Gibbs map `Φ[μ] ∝ exp(−δF/δμ(μ,·)/σ − U)`.
//!
//! KL and Fisher information are extended reals. Absolute-continuity failure
//! is reported as `f64::INFINITY` ([`INFINITE`]); finite inputs never
//! overflow to it because every exponent is max-shifted.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::functionals::Functional;
use crate::measures::{DiscreteMeasure, GridSpec, PointMap};

/// Sentinel for `+∞` divergences.
pub const INFINITE: f64 = f64::INFINITY;

/// Weights below this are treated as zero by the Fisher stencil.
const FISHER_FLOOR: f64 = 1e-300;

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Confining potential U with strong-convexity modulus α_U.
#[derive(Clone)]
pub struct PotentialSpec {
    name: String,
    u: ScalarFn,
    grad: VectorFn,
    alpha_u: f64,
}

impl fmt::Debug for PotentialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialSpec")
            .field("name", &self.name)
            .field("alpha_u", &self.alpha_u)
            .finish()
    }
}

impl PotentialSpec {
    pub fn new(
        name: impl Into<String>,
        u: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        alpha_u: f64,
    ) -> Result<Self> {
        if !(alpha_u > 0.0 && alpha_u.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "alpha_U must be positive, got {alpha_u}"
            )));
        }
        Ok(Self {
            name: name.into(),
            u: Arc::new(u),
            grad: Arc::new(grad),
            alpha_u,
        })
    }

    /// `U(x) = α|x − c|²/2`.
    pub fn quadratic(alpha: f64, center: Vec<f64>) -> Result<Self> {
        let c = center.clone();
        Self::new(
            format!("quadratic({alpha})"),
            move |x| {
                0.5 * alpha
                    * x.iter()
                        .zip(c.iter().chain(std::iter::repeat(&0.0)))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
            },
            move |x| {
                x.iter()
                    .zip(center.iter().chain(std::iter::repeat(&0.0)))
                    .map(|(a, b)| alpha * (a - b))
                    .collect()
            },
            alpha,
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn alpha_u(&self) -> f64 {
        self.alpha_u
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.u)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.grad)(x)
    }

    pub fn values(&self, grid: &GridSpec) -> Vec<f64> {
        (0..grid.len()).map(|i| (self.u)(grid.point(i))).collect()
    }

    /// Checks `(x − y)·(∇U(x) − ∇U(y)) ≥ α_U|x − y|² − 1e−9` on random node
    /// pairs and finiteness of U on every node.
    pub fn validate(&self, grid: &GridSpec, pairs: usize, seed: u64) -> Result<()> {
        if let Some(i) = (0..grid.len()).find(|&i| !(self.u)(grid.point(i)).is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "U is not finite at node {i}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..pairs {
            let i = rng.gen_range(0..grid.len());
            let j = rng.gen_range(0..grid.len());
            let (x, y) = (grid.point(i), grid.point(j));
            let (gx, gy) = ((self.grad)(x), (self.grad)(y));
            let lhs: f64 = (0..x.len()).map(|k| (x[k] - y[k]) * (gx[k] - gy[k])).sum();
            let r2: f64 = (0..x.len()).map(|k| (x[k] - y[k]).powi(2)).sum();
            if lhs < self.alpha_u * r2 - 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "U is not {}-strongly convex between nodes {i} and {j}",
                    self.alpha_u
                )));
            }
        }
        Ok(())
    }
}

/// π with weights ∝ e^{−U(x_i)}.
pub fn reference_measure(u: &PotentialSpec, grid: &Arc<GridSpec>) -> Result<DiscreteMeasure> {
    let logw: Vec<f64> = u.values(grid).into_iter().map(|v| -v).collect();
    DiscreteMeasure::from_log_weights(grid.clone(), &logw)
}

/// Σ μ_i log(μ_i/ρ_i) with 0·log 0 = 0.
pub fn kl(mu: &DiscreteMeasure, rho: &DiscreteMeasure) -> Result<f64> {
    mu.ensure_same_grid(rho)?;
    let mut s = 0.0;
    for (&m, &r) in mu.weights().iter().zip(rho.weights()) {
        if m > 0.0 {
            if r <= 0.0 {
                return Ok(INFINITE);
            }
            s += m * (m / r).ln();
        }
    }
    Ok(s.max(0.0))
}

/// Differential entropy Σ μ_i log(μ_i / cell_volume).
pub fn entropy_h(mu: &DiscreteMeasure) -> f64 {
    let v = mu.grid().cell_volume();
    mu.weights()
        .iter()
        .filter(|&&m| m > 0.0)
        .map(|&m| m * (m / v).ln())
        .sum()
}

/// Finite-difference gradient of `log(μ/ρ)`: central where both neighbours
/// carry mass, one-sided otherwise, zero at massless nodes. `None` signals
/// an absolute-continuity failure.
fn log_ratio_gradient(mu: &DiscreteMeasure, rho: &DiscreteMeasure) -> Result<Option<Vec<f64>>> {
    mu.ensure_same_grid(rho)?;
    let grid = mu.grid();
    let (w, r) = (mu.weights(), rho.weights());
    let mut lr = vec![f64::NAN; w.len()];
    for i in 0..w.len() {
        if w[i] > 0.0 && r[i] <= 0.0 {
            return Ok(None);
        }
        if w[i] > FISHER_FLOOR {
            lr[i] = (w[i] / r[i]).ln();
        }
    }
    let d = grid.dim();
    let mut out = vec![0.0; w.len() * d];
    for i in 0..w.len() {
        if lr[i].is_nan() {
            continue;
        }
        let idx = grid.multi_index(i);
        for k in 0..d {
            let h = grid.spacing(k);
            let st = grid.stride(k);
            let left = (idx[k] > 0 && !lr[i - st].is_nan()).then(|| lr[i - st]);
            let right = (idx[k] + 1 < grid.axis(k).nodes && !lr[i + st].is_nan()).then(|| lr[i + st]);
            out[i * d + k] = match (left, right) {
                (Some(a), Some(b)) => (b - a) / (2.0 * h),
                (None, Some(b)) => (b - lr[i]) / h,
                (Some(a), None) => (lr[i] - a) / h,
                (None, None) => 0.0,
            };
        }
    }
    Ok(Some(out))
}

/// Vector field ∇ log(μ/ρ) at the nodes.
pub fn grad_log_ratio(mu: &DiscreteMeasure, rho: &DiscreteMeasure) -> Result<PointMap> {
    match log_ratio_gradient(mu, rho)? {
        Some(g) => PointMap::new(mu.dim(), g),
        None => Err(Error::InvalidMeasure(
            "μ is not absolutely continuous with respect to ρ".into(),
        )),
    }
}

/// Σ μ_i |∇ log(μ/ρ)|²_i.
pub fn relative_fisher(mu: &DiscreteMeasure, rho: &DiscreteMeasure) -> Result<f64> {
    let Some(g) = log_ratio_gradient(mu, rho)? else {
        return Ok(INFINITE);
    };
    let d = mu.dim();
    Ok(mu
        .weights()
        .iter()
        .enumerate()
        .map(|(i, m)| m * g[i * d..(i + 1) * d].iter().map(|v| v * v).sum::<f64>())
        .sum())
}

/// Φ[μ] from precomputed flat-derivative values at the nodes.
pub fn gibbs_from_derivative(
    flat: &[f64],
    sigma: f64,
    u: &PotentialSpec,
    grid: &Arc<GridSpec>,
) -> Result<DiscreteMeasure> {
    let logw: Vec<f64> = flat
        .iter()
        .enumerate()
        .map(|(i, d)| -d / sigma - u.eval(grid.point(i)))
        .collect();
    DiscreteMeasure::from_log_weights(grid.clone(), &logw)
}

/// Φ[μ] ∝ exp(−δF/δμ(μ, x_i)/σ − U(x_i)).
pub fn proximal_gibbs(
    f: &dyn Functional,
    mu: &DiscreteMeasure,
    sigma: f64,
    u: &PotentialSpec,
) -> Result<DiscreteMeasure> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter("sigma must be positive".into()));
    }
    gibbs_from_derivative(&f.flat_derivative_nodes(mu), sigma, u, mu.grid())
}

/// `F(μ) + σ·KL(μ|π)`.
pub fn free_energy(
    f: &dyn Functional,
    mu: &DiscreteMeasure,
    sigma: f64,
    pi: &DiscreteMeasure,
) -> Result<f64> {
    Ok(f.value(mu) + sigma * kl(mu, pi)?)
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct GibbsConstants {
    pub lsi_constant: f64,
    pub talagrand_factor: f64,
}

/// LSI constant `α_U e^{−4C_F/σ}` of every Φ[μ] and the matching
/// Talagrand factor `2e^{4C_F/σ}/α_U`.
pub fn lsi_constant(alpha_u: f64, c_f: f64, sigma: f64) -> Result<GibbsConstants> {
    if !(alpha_u > 0.0) || !(sigma > 0.0) || !(c_f >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need alpha_U > 0, sigma > 0, C_F >= 0 (got {alpha_u}, {sigma}, {c_f})"
        )));
    }
    let e = (4.0 * c_f / sigma).exp();
    Ok(GibbsConstants {
        lsi_constant: alpha_u / e,
        talagrand_factor: 2.0 * e / alpha_u,
    })
}
