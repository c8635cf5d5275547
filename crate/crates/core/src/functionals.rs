//! Energies `F` on measures with their flat derivative `δF/δμ(μ, x)` and
//! Wasserstein gradient `∇_x δF/δμ(μ, x)`.
//!
//! Flat derivatives are returned without the normalization `∫ δF/δμ dμ = 0`.
//! Every consumer either exponentiates and renormalizes or integrates against
//! a zero-mass difference, so the additive constant never matters.

use std::fmt;
use std::io::BufRead;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, GridSpec};

/// Regularity constants: `C_F` bounds |δF/δμ|, `L_F` bounds |∇_μF|, and
/// `L_F'` is the Lipschitz constant of `(μ, x) ↦ ∇_μF(μ)(x)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FunctionalConstants {
    pub c_f: f64,
    pub l_f: f64,
    pub l_f_prime: f64,
}

pub trait Functional: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    fn value(&self, mu: &DiscreteMeasure) -> f64;

    /// δF/δμ(μ, ·) at each point of a flat coordinate buffer.
    fn flat_derivative_at(&self, mu: &DiscreteMeasure, points: &[f64]) -> Vec<f64>;

    /// ∇_μF(μ)(·) at each point, flattened like `points`.
    fn wasserstein_gradient_at(&self, mu: &DiscreteMeasure, points: &[f64]) -> Vec<f64>;

    fn constants(&self) -> FunctionalConstants;

    /// True when δF/δμ does not depend on μ.
    fn is_linear(&self) -> bool {
        false
    }

    fn flat_derivative(&self, mu: &DiscreteMeasure, x: &[f64]) -> f64 {
        self.flat_derivative_at(mu, x)[0]
    }

    fn wasserstein_gradient(&self, mu: &DiscreteMeasure, x: &[f64]) -> Vec<f64> {
        self.wasserstein_gradient_at(mu, x)
    }

    fn flat_derivative_nodes(&self, mu: &DiscreteMeasure) -> Vec<f64> {
        self.flat_derivative_at(mu, mu.grid().points())
    }

    fn wasserstein_gradient_nodes(&self, mu: &DiscreteMeasure) -> Vec<f64> {
        self.wasserstein_gradient_at(mu, mu.grid().points())
    }
}

/// `F(μ') − F(μ) − Σ δF/δμ(μ, x_i)(μ' − μ)_i`; nonnegative for flat-convex F.
pub fn check_flat_convexity(
    f: &dyn Functional,
    mu: &DiscreteMeasure,
    mu2: &DiscreteMeasure,
) -> Result<f64> {
    mu.ensure_same_grid(mu2)?;
    let d = f.flat_derivative_nodes(mu);
    let lin: f64 = d
        .iter()
        .zip(mu2.weights().iter().zip(mu.weights()))
        .map(|(g, (b, a))| g * (b - a))
        .sum();
    Ok(f.value(mu2) - f.value(mu) - lin)
}

/// Sampled estimates of the regularity constants on a grid: the sup of
/// |δF/δμ| and |∇_μF| over nodes of random measures, and the largest
/// difference quotient of ∇_μF between neighbouring nodes. These are lower
/// estimates of the true constants.
pub fn empirical_constants(
    f: &dyn Functional,
    grid: &Arc<GridSpec>,
    samples: usize,
    seed: u64,
) -> Result<FunctionalConstants> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = grid.dim();
    let mut out = FunctionalConstants::default();
    for _ in 0..samples {
        let w: Vec<f64> = (0..grid.len()).map(|_| rng.gen::<f64>().powi(4)).collect();
        let mu = DiscreteMeasure::from_weights(grid.clone(), w)?;
        let fd = f.flat_derivative_nodes(&mu);
        let gr = f.wasserstein_gradient_nodes(&mu);
        // flat derivative is defined up to a constant; measure its oscillation
        let (lo, hi) = fd
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        out.c_f = out.c_f.max(0.5 * (hi - lo));
        for i in 0..grid.len() {
            let g = &gr[i * d..(i + 1) * d];
            out.l_f = out.l_f.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
            let idx = grid.multi_index(i);
            for k in 0..d {
                if idx[k] + 1 < grid.axis(k).nodes {
                    let j = i + grid.stride(k);
                    let gj = &gr[j * d..(j + 1) * d];
                    let diff: f64 = g.iter().zip(gj).map(|(a, b)| (a - b) * (a - b)).sum();
                    out.l_f_prime = out.l_f_prime.max(diff.sqrt() / grid.spacing(k));
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default)]
pub struct ZeroFunctional;

pub fn zero_functional() -> ZeroFunctional {
    ZeroFunctional
}

impl Functional for ZeroFunctional {
    fn name(&self) -> String {
        "zero".into()
    }

    fn value(&self, _mu: &DiscreteMeasure) -> f64 {
        0.0
    }

    fn flat_derivative_at(&self, mu: &DiscreteMeasure, points: &[f64]) -> Vec<f64> {
        vec![0.0; points.len() / mu.dim()]
    }

    fn wasserstein_gradient_at(&self, _mu: &DiscreteMeasure, points: &[f64]) -> Vec<f64> {
        vec![0.0; points.len()]
    }

    fn constants(&self) -> FunctionalConstants {
        FunctionalConstants::default()
    }

    fn is_linear(&self) -> bool {
        true
    }
}

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// `F(μ) = ∫ f dμ`.
#[derive(Clone)]
pub struct LinearPotential {
    name: String,
    f: ScalarFn,
    grad: VectorFn,
    constants: FunctionalConstants,
}

impl fmt::Debug for LinearPotential {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        fm.debug_struct("LinearPotential")
            .field("name", &self.name)
            .field("constants", &self.constants)
            .finish()
    }
}

pub fn linear_potential(
    name: impl Into<String>,
    f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    grad: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    constants: FunctionalConstants,
) -> LinearPotential {
    LinearPotential {
        name: name.into(),
        f: Arc::new(f),
        grad: Arc::new(grad),
        constants,
    }
}

/// max |tanh''| = 4/(3√3).
pub const TANH_SECOND_DERIVATIVE_MAX: f64 = 0.769_800_358_919_501_4;

impl LinearPotential {
    /// `f(x) = amplitude·tanh(x₁)`, in any grid dimension.
    pub fn tanh(amplitude: f64) -> Self {
        let a = amplitude;
        linear_potential(
            format!("linear_tanh({a})"),
            move |x| a * x[0].tanh(),
            move |x| {
                let mut g = vec![0.0; x.len()];
                let t = x[0].tanh();
                g[0] = a * (1.0 - t * t);
                g
            },
            FunctionalConstants {
                c_f: a.abs(),
                l_f: a.abs(),
                l_f_prime: a.abs() * TANH_SECOND_DERIVATIVE_MAX,
            },
        )
    }

    pub fn constant(c: f64) -> Self {
        linear_potential(
            format!("constant({c})"),
            move |_| c,
            |x| vec![0.0; x.len()],
            FunctionalConstants {
                c_f: c.abs(),
                l_f: 0.0,
                l_f_prime: 0.0,
            },
        )
    }

    /// `f(x) = c·x` (unbounded; only meaningful on a bounded grid).
    pub fn affine(slope: Vec<f64>) -> Self {
        let s = slope.clone();
        let norm = slope.iter().map(|v| v * v).sum::<f64>().sqrt();
        linear_potential(
            "affine",
            move |x| x.iter().zip(&s).map(|(a, b)| a * b).sum(),
            move |_| slope.clone(),
            FunctionalConstants {
                c_f: f64::INFINITY,
                l_f: norm,
                l_f_prime: 0.0,
            },
        )
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

impl Functional for LinearPotential {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn value(&self, mu: &DiscreteMeasure) -> f64 {
        mu.weights()
            .iter()
            .enumerate()
            .map(|(i, w)| w * (self.f)(mu.grid().point(i)))
            .sum()
    }

    fn flat_derivative_at(&self, mu: &DiscreteMeasure, points: &[f64]) -> Vec<f64> {
        points.chunks(mu.dim()).map(|x| (self.f)(x)).collect()
    }

    fn wasserstein_gradient_at(&self, mu: &DiscreteMeasure, points: &[f64]) -> Vec<f64> {
        points.chunks(mu.dim()).flat_map(|x| (self.grad)(x)).collect()
    }

    fn constants(&self) -> FunctionalConstants {
        self.constants
    }

    fn is_linear(&self) -> bool {
        true
    }
}

type KernelFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
type KernelGradFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// `F(μ) = ½ ∬ W(x, x') μ(dx) μ(dx')` for a symmetric kernel W.
#[derive(Clone)]
pub struct InteractionEnergy {
    name: String,
    kernel: KernelFn,
    grad1: KernelGradFn,
    constants: FunctionalConstants,
}

impl fmt::Debug for InteractionEnergy {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        fm.debug_struct("InteractionEnergy")
            .field("name", &self.name)
            .field("constants", &self.constants)
            .finish()
    }
}

/// Builds an interaction energy after checking symmetry of the kernel on
/// seeded random pairs in `[-3, 3]^dim`.
pub fn interaction_energy(
    name: impl Into<String>,
    dim: usize,
    kernel: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    grad1: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    constants: FunctionalConstants,
) -> Result<InteractionEnergy> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..64 {
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (a, b) = (kernel(&x, &y), kernel(&y, &x));
        if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
            return Err(Error::Functional(format!(
                "interaction kernel is not symmetric: W(x,y)={a}, W(y,x)={b}"
            )));
        }
    }
    Ok(InteractionEnergy {
        name: name.into(),
        kernel: Arc::new(kernel),
        grad1: Arc::new(grad1),
        constants,
    })
}

impl InteractionEnergy {
    /// `W(x, y) = a·exp(−|x − y|²/(2s²))`, a positive-definite kernel, so F
    /// is flat-convex.
    pub fn gaussian(dim: usize, amplitude: f64, bandwidth: f64) -> Result<Self> {
        let (a, s2) = (amplitude, bandwidth * bandwidth);
        interaction_energy(
            format!("interaction_gaussian({a},{bandwidth})"),
            dim,
            move |x, y| {
                let r2: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
                a * (-0.5 * r2 / s2).exp()
            },
            move |x, y| {
                let r2: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
                let e = a * (-0.5 * r2 / s2).exp() / s2;
                x.iter().zip(y).map(|(p, q)| -(p - q) * e).collect()
            },
            FunctionalConstants {
                c_f: a.abs(),
                l_f: a.abs() / (bandwidth * std::f64::consts::E.sqrt()),
                l_f_prime: 2.0 * a.abs() / s2,
            },
        )
    }

    /// `W(x, y) = x·y`, rank one and positive semidefinite.
    pub fn bilinear(dim: usize) -> Result<Self> {
        interaction_energy(
            "interaction_bilinear",
            dim,
            |x, y| x.iter().zip(y).map(|(p, q)| p * q).sum(),
            |_, y| y.to_vec(),
            FunctionalConstants {
                c_f: f64::INFINITY,
                l_f: f64::INFINITY,
                l_f_prime: 1.0,
            },
        )
    }
}

impl Functional for InteractionEnergy {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn value(&self, mu: &DiscreteMeasure) -> f64 {
        let g = mu.grid();
        let w = mu.weights();
        let mut s = 0.0;
        for i in 0..w.len() {
            if w[i] == 0.0 {
                continue;
            }
            for j in 0..w.len() {
                s += w[i] * w[j] * (self.kernel)(g.point(i), g.point(j));
            }
        }
        0.5 * s
    }

    fn flat_derivative_at(&self, mu: &DiscreteMeasure, points: &[f64]) -> Vec<f64> {
        let g = mu.grid();
        points
            .chunks(mu.dim())
            .map(|x| {
                mu.weights()
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(j, w)| w * (self.kernel)(x, g.point(j)))
                    .sum()
            })
            .collect()
    }

    fn wasserstein_gradient_at(&self, mu: &DiscreteMeasure, points: &[f64]) -> Vec<f64> {
        let g = mu.grid();
        let d = mu.dim();
        let mut out = vec![0.0; points.len()];
        for (x, o) in points.chunks(d).zip(out.chunks_mut(d)) {
            for (j, &w) in mu.weights().iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (k, v) in (self.grad1)(x, g.point(j)).into_iter().enumerate() {
                    o[k] += w * v;
                }
            }
        }
        out
    }

    fn constants(&self) -> FunctionalConstants {
        self.constants
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Activation::Tanh => u.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-u).exp()),
        }
    }

    pub fn derivative(self, u: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = u.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = self.eval(u);
                s * (1.0 - s)
            }
        }
    }

    /// Bounds on |φ|, |φ'|, |φ''|.
    fn bounds(self) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => (1.0, 1.0, TANH_SECOND_DERIVATIVE_MAX),
            Activation::Sigmoid => (1.0, 0.25, 1.0 / (6.0 * 3f64.sqrt())),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Config(format!(
                "unknown activation '{other}' (expected tanh or sigmoid)"
            ))),
        }
    }
}

/// Training samples `(y, z)` with `z ∈ R^{d−1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NnDataset {
    pub samples: Vec<(f64, Vec<f64>)>,
    pub clip: f64,
    pub activation: Activation,
}

impl NnDataset {
    pub fn new(samples: Vec<(f64, Vec<f64>)>, clip: f64, activation: Activation) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Functional("dataset has no samples".into()));
        }
        if !(clip > 0.0 && clip.is_finite()) {
            return Err(Error::Functional("clipping threshold must be positive".into()));
        }
        let p = samples[0].1.len();
        if p == 0 || p > 8 {
            return Err(Error::Functional(format!(
                "feature dimension {p} outside 1..=8"
            )));
        }
        for (k, (y, z)) in samples.iter().enumerate() {
            if z.len() != p {
                return Err(Error::Functional(format!("sample {k} has {} features, expected {p}", z.len())));
            }
            if !y.is_finite() || z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Functional(format!("sample {k} is not finite")));
            }
        }
        Ok(Self {
            samples,
            clip,
            activation,
        })
    }

    /// Reads rows `y, z_1, ..., z_p`. Lines starting with `#` and a
    /// non-numeric header row are skipped.
    pub fn from_csv<R: BufRead>(input: R, clip: f64, activation: Activation) -> Result<Self> {
        let mut samples = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            match vals {
                Ok(v) if v.len() >= 2 => samples.push((v[0], v[1..].to_vec())),
                Ok(_) => {
                    return Err(Error::Functional(format!(
                        "line {}: need y and at least one feature",
                        lineno + 1
                    )))
                }
                Err(_) if samples.is_empty() && lineno == 0 => continue,
                Err(e) => return Err(Error::Functional(format!("line {}: {e}", lineno + 1))),
            }
        }
        Self::new(samples, clip, activation)
    }

    pub fn features(&self) -> usize {
        self.samples[0].1.len()
    }
}

/// Mean-field two-layer network loss `F(μ) = (1/M) Σ_k (y_k − ∫ φ̂(x, z_k) dμ)²`
/// with `x = (w, b)`, `φ̂(x, z) = ℓ(b)·φ(w·z)` and `ℓ(b) = K·tanh(b/K)`.
/// On a grid of dimension `p` (no room for `b`) the output weight is fixed
/// at 1 and `x = w`.
#[derive(Clone, Debug)]
pub struct NnLoss {
    data: NnDataset,
    dim: usize,
}

pub fn nn_l2_loss(data: NnDataset, dim: usize) -> Result<NnLoss> {
    let p = data.features();
    if dim != p + 1 && dim != p {
        return Err(Error::Dimension {
            expected: p + 1,
            got: dim,
        });
    }
    Ok(NnLoss { data, dim })
}

impl NnLoss {
    fn has_bias(&self) -> bool {
        self.dim == self.data.features() + 1
    }

    pub fn dataset(&self) -> &NnDataset {
        &self.data
    }

    /// φ̂(x, z) and its x-gradient written into `grad` when given.
    fn unit(&self, x: &[f64], z: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let p = z.len();
        let u: f64 = x[..p].iter().zip(z).map(|(a, b)| a * b).sum();
        let act = self.data.activation;
        let (l, dl) = if self.has_bias() {
            let k = self.data.clip;
            let t = (x[p] / k).tanh();
            (k * t, 1.0 - t * t)
        } else {
            (1.0, 0.0)
        };
        let phi = act.eval(u);
        if let Some(g) = grad {
            let dphi = act.derivative(u);
            for (gk, zk) in g[..p].iter_mut().zip(z) {
                *gk = l * dphi * zk;
            }
            if self.has_bias() {
                g[p] = dl * phi;
            }
        }
        l * phi
    }

    /// Residuals `y_k − ∫ φ̂(·, z_k) dμ`.
    pub fn residuals(&self, mu: &DiscreteMeasure) -> Vec<f64> {
        let g = mu.grid();
        self.data
            .samples
            .iter()
            .map(|(y, z)| {
                let pred: f64 = mu
                    .weights()
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(i, w)| w * self.unit(g.point(i), z, None))
                    .sum();
                y - pred
            })
            .collect()
    }
}

impl Functional for NnLoss {
    fn name(&self) -> String {
        "nn_l2_loss".into()
    }

    fn value(&self, mu: &DiscreteMeasure) -> f64 {
        let r = self.residuals(mu);
        r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64
    }

    fn flat_derivative_at(&self, mu: &DiscreteMeasure, points: &[f64]) -> Vec<f64> {
        let r = self.residuals(mu);
        let scale = -2.0 / r.len() as f64;
        points
            .chunks(self.dim)
            .map(|x| {
                scale
                    * self
                        .data
                        .samples
                        .iter()
                        .zip(&r)
                        .map(|((_, z), rk)| rk * self.unit(x, z, None))
                        .sum::<f64>()
            })
            .collect()
    }

    fn wasserstein_gradient_at(&self, mu: &DiscreteMeasure, points: &[f64]) -> Vec<f64> {
        let r = self.residuals(mu);
        let scale = -2.0 / r.len() as f64;
        let d = self.dim;
        let mut out = vec![0.0; points.len()];
        let mut g = vec![0.0; d];
        for (x, o) in points.chunks(d).zip(out.chunks_mut(d)) {
            for ((_, z), rk) in self.data.samples.iter().zip(&r) {
                self.unit(x, z, Some(&mut g));
                for k in 0..d {
                    o[k] += scale * rk * g[k];
                }
            }
        }
        out
    }

    /// Analytic upper bounds from |y_k|, K and the activation's derivative
    /// bounds. The residual is bounded by |y_k| + sup|φ̂|.
    fn constants(&self) -> FunctionalConstants {
        let (p0, p1, p2) = self.data.activation.bounds();
        let (l0, l1, l2) = if self.has_bias() {
            let k = self.data.clip;
            (k, 1.0, TANH_SECOND_DERIVATIVE_MAX * 2.0 / k)
        } else {
            (1.0, 0.0, 0.0)
        };
        let m = self.data.samples.len() as f64;
        let mut c = FunctionalConstants::default();
        for (y, z) in &self.data.samples {
            let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rmax = y.abs() + l0 * p0;
            let grad = ((l0 * p1 * zn).powi(2) + (l1 * p0).powi(2)).sqrt();
            let hess = ((l0 * p2 * zn * zn).powi(2)
                + 2.0 * (l1 * p1 * zn).powi(2)
                + (l2 * p0).powi(2))
            .sqrt();
            c.c_f += 2.0 / m * rmax * l0 * p0;
            c.l_f += 2.0 / m * rmax * grad;
            c.l_f_prime += 2.0 / m * (rmax * hess + grad * grad);
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(lo: f64, hi: f64, n: usize) -> Arc<GridSpec> {
        Arc::new(GridSpec::line(lo, hi, n).unwrap())
    }

    fn random_measure(g: &Arc<GridSpec>, rng: &mut ChaCha8Rng) -> DiscreteMeasure {
        let w = (0..g.len()).map(|_| rng.gen::<f64>() + 0.01).collect();
        DiscreteMeasure::from_weights(g.clone(), w).unwrap()
    }

    fn dataset() -> NnDataset {
        NnDataset::new(
            vec![
                (0.5, vec![1.0]),
                (-0.3, vec![-0.7]),
                (0.8, vec![2.0]),
                (0.1, vec![0.3]),
                (-0.6, vec![-1.5]),
            ],
            2.0,
            Activation::Tanh,
        )
        .unwrap()
    }

    fn all_functionals(dim: usize) -> Vec<Box<dyn Functional>> {
        let ds = dataset();
        vec![
            Box::new(zero_functional()),
            Box::new(LinearPotential::tanh(0.5)),
            Box::new(InteractionEnergy::gaussian(dim, 0.7, 1.2).unwrap()),
            Box::new(nn_l2_loss(ds, dim).unwrap()),
        ]
    }

    #[test]
    fn zero_functional_is_zero() {
        let g = line(-1.0, 1.0, 5);
        let mu = DiscreteMeasure::uniform(g);
        let f = zero_functional();
        assert_eq!(f.value(&mu), 0.0);
        assert_eq!(f.flat_derivative(&mu, &[0.3]), 0.0);
        assert_eq!(f.wasserstein_gradient(&mu, &[0.3]), vec![0.0]);
        assert_eq!(f.constants(), FunctionalConstants::default());
    }

    #[test]
    fn linear_examples() {
        let g = line(-1.0, 1.0, 3);
        let mu = DiscreteMeasure::uniform(g.clone());
        let f = LinearPotential::tanh(1.0);
        assert!(f.value(&mu).abs() < 1e-16);
        let c = LinearPotential::constant(2.5);
        assert_eq!(c.flat_derivative(&mu, &[0.7]), 2.5);
        assert_eq!(c.wasserstein_gradient(&mu, &[0.7]), vec![0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mu2 = random_measure(&g, &mut rng);
        assert!(check_flat_convexity(&f, &mu, &mu2).unwrap().abs() < 1e-15);
        assert_eq!(check_flat_convexity(&f, &mu, &mu).unwrap(), 0.0);
    }

    #[test]
    fn interaction_examples() {
        let g = line(-1.0, 1.0, 3);
        let mu = DiscreteMeasure::uniform(g);
        let zero = interaction_energy("w0", 1, |_, _| 0.0, |x, _| vec![0.0; x.len()], FunctionalConstants::default()).unwrap();
        assert_eq!(zero.value(&mu), 0.0);
        let bil = InteractionEnergy::bilinear(1).unwrap();
        assert!(bil.value(&mu).abs() < 1e-16);
        assert!(bil.flat_derivative(&mu, &[1.7]).abs() < 1e-16);
        let asym = interaction_energy("bad", 1, |x, y| x[0] - y[0], |x, _| vec![0.0; x.len()], FunctionalConstants::default());
        assert!(matches!(asym, Err(Error::Functional(_))));
    }

    #[test]
    fn nn_examples() {
        let g = line(-2.0, 2.0, 5);
        // w = 0 gives φ(0) = 0 for tanh
        let ds = NnDataset::new(vec![(0.0, vec![1.0]), (0.0, vec![-2.0])], 1.0, Activation::Tanh).unwrap();
        let f = nn_l2_loss(ds, 1).unwrap();
        let mu = DiscreteMeasure::point_mass(g.clone(), 2).unwrap();
        assert_eq!(f.value(&mu), 0.0);
        assert!(f.flat_derivative_nodes(&mu).iter().all(|v| *v == 0.0));

        let g2 = Arc::new(GridSpec::square(-2.0, 2.0, 5).unwrap());
        let ds = NnDataset::new(vec![(0.4, vec![0.8])], 1.5, Activation::Tanh).unwrap();
        let f = nn_l2_loss(ds, 2).unwrap();
        let node = 17;
        let x = g2.point(node).to_vec();
        let mu = DiscreteMeasure::point_mass(g2, node).unwrap();
        let phat = 1.5 * (x[1] / 1.5).tanh() * (x[0] * 0.8).tanh();
        assert!((f.value(&mu) - (0.4 - phat).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn nn_dataset_validation_and_csv() {
        assert!(NnDataset::new(vec![], 1.0, Activation::Tanh).is_err());
        assert!(NnDataset::new(vec![(f64::NAN, vec![1.0])], 1.0, Activation::Tanh).is_err());
        let csv = "y,z1\n0.5,1.0\n# comment\n-0.2,0.3\n";
        let ds = NnDataset::from_csv(csv.as_bytes(), 2.0, Activation::Sigmoid).unwrap();
        assert_eq!(ds.samples.len(), 2);
        assert_eq!(ds.samples[1], (-0.2, vec![0.3]));
        assert!(Activation::parse("relu").is_err());
    }

    fn flat_fd_error(f: &dyn Functional, mu: &DiscreteMeasure, mu2: &DiscreteMeasure, eps: f64) -> (f64, f64) {
        let mix = mu.mix(mu2, eps).unwrap();
        let fd = (f.value(&mix) - f.value(mu)) / eps;
        let lin: f64 = f
            .flat_derivative_nodes(mu)
            .iter()
            .zip(mu2.weights().iter().zip(mu.weights()))
            .map(|(g, (b, a))| g * (b - a))
            .sum();
        ((fd - lin).abs(), lin)
    }

    #[test]
    fn flat_derivative_first_order_consistency() {
        for dim in [1usize, 2] {
            let g = if dim == 1 { line(-2.0, 2.0, 9) } else { Arc::new(GridSpec::square(-2.0, 2.0, 5).unwrap()) };
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for f in all_functionals(dim) {
                let mu = random_measure(&g, &mut rng);
                let mu2 = random_measure(&g, &mut rng);
                let errs: Vec<f64> = [1e-2, 1e-3, 1e-4].iter().map(|&e| flat_fd_error(f.as_ref(), &mu, &mu2, e).0).collect();
                for (e, eps) in errs.iter().zip([1e-2, 1e-3, 1e-4]) {
                    assert!(*e <= 10.0 * eps + 1e-12, "{} dim {dim}: {errs:?}", f.name());
                }
                if errs[0] > 1e-10 {
                    assert!(errs[2] < errs[0] / 20.0, "{}: no first-order decay {errs:?}", f.name());
                }
            }
        }
    }

    #[test]
    fn nn_flat_derivative_central_difference() {
        let g = Arc::new(GridSpec::square(-2.0, 2.0, 5).unwrap());
        let f = nn_l2_loss(dataset(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let mu = random_measure(&g, &mut rng);
            let mu2 = random_measure(&g, &mut rng);
            let eps = 1e-4;
            let plus = mu.mix(&mu2, eps).unwrap();
            // μ − ε(μ' − μ) stays a probability vector for small ε here
            let w: Vec<f64> = mu.weights().iter().zip(mu2.weights()).map(|(a, b)| a - eps * (b - a)).collect();
            let minus = DiscreteMeasure::from_weights(g.clone(), w).unwrap();
            let fd = (f.value(&plus) - f.value(&minus)) / (2.0 * eps);
            let (_, lin) = flat_fd_error(&f, &mu, &mu2, eps);
            assert!((fd - lin).abs() <= 1e-5 * lin.abs().max(1e-3), "{fd} vs {lin}");
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        for dim in [1usize, 2] {
            let g = if dim == 1 { line(-2.0, 2.0, 9) } else { Arc::new(GridSpec::square(-2.0, 2.0, 5).unwrap()) };
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for f in all_functionals(dim) {
                let mu = random_measure(&g, &mut rng);
                let h = 1e-4;
                for i in 0..g.len() {
                    let x = g.point(i);
                    let grad = f.wasserstein_gradient(&mu, x);
                    for k in 0..dim {
                        let mut xp = x.to_vec();
                        let mut xm = x.to_vec();
                        xp[k] += h;
                        xm[k] -= h;
                        let fd = (f.flat_derivative(&mu, &xp) - f.flat_derivative(&mu, &xm)) / (2.0 * h);
                        assert!((fd - grad[k]).abs() < 1e-6, "{} node {i}: {fd} vs {}", f.name(), grad[k]);
                    }
                }
            }
        }
    }

    #[test]
    fn flat_convexity_on_random_pairs() {
        for dim in [1usize, 2] {
            let g = if dim == 1 { line(-2.0, 2.0, 9) } else { Arc::new(GridSpec::square(-2.0, 2.0, 5).unwrap()) };
            let mut rng = ChaCha8Rng::seed_from_u64(13);
            for f in all_functionals(dim) {
                for _ in 0..100 {
                    let mu = random_measure(&g, &mut rng);
                    let mu2 = random_measure(&g, &mut rng);
                    let s = check_flat_convexity(f.as_ref(), &mu, &mu2).unwrap();
                    assert!(s >= -1e-9, "{}: slack {s}", f.name());
                }
            }
        }
    }

    #[test]
    fn sampled_constants_below_analytic_bounds() {
        let g = Arc::new(GridSpec::square(-3.0, 3.0, 9).unwrap());
        let f = nn_l2_loss(dataset(), 2).unwrap();
        let est = empirical_constants(&f, &g, 20, 1).unwrap();
        let bound = f.constants();
        assert!(est.c_f <= bound.c_f && est.l_f <= bound.l_f && est.l_f_prime <= bound.l_f_prime);
        let lin = LinearPotential::tanh(0.5);
        let est = empirical_constants(&lin, &Arc::new(GridSpec::line(-6.0, 6.0, 201).unwrap()), 2, 1).unwrap();
        assert!(est.l_f_prime <= lin.constants().l_f_prime && est.l_f_prime > 0.7 * lin.constants().l_f_prime);
    }
}
