//! Probability measures discretized on a fixed tensor grid.
//!
//! A [`DiscreteMeasure`] carries one nonnegative weight per grid node. Where a
//! density is needed (entropy, Fisher information, the cell model of
//! [`crate::transport`]) the weight of node `i` is read as uniform mass on the
//! cell of volume [`GridSpec::cell_volume`] centred at the node.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a normalized measure.
pub const MASS_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub nodes: usize,
}

impl Axis {
    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.nodes - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        if i + 1 == self.nodes {
            self.upper
        } else {
            self.lower + i as f64 * self.spacing()
        }
    }
}

/// Uniform tensor grid in one or two dimensions. Node indices are row-major
/// with the last axis varying fastest.
#[derive(Clone, Debug)]
pub struct GridSpec {
    axes: Vec<Axis>,
    points: Vec<f64>,
}

impl PartialEq for GridSpec {
    fn eq(&self, other: &Self) -> bool {
        self.axes == other.axes
    }
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 1 or 2, got {}",
                axes.len()
            )));
        }
        for (k, a) in axes.iter().enumerate() {
            if a.nodes < 2 {
                return Err(Error::InvalidGrid(format!("axis {k} needs at least 2 nodes")));
            }
            if !(a.lower.is_finite() && a.upper.is_finite() && a.lower < a.upper) {
                return Err(Error::InvalidGrid(format!(
                    "axis {k} bounds [{}, {}] are not an increasing finite interval",
                    a.lower, a.upper
                )));
            }
        }
        let len: usize = axes.iter().map(|a| a.nodes).product();
        let dim = axes.len();
        let mut points = Vec::with_capacity(len * dim);
        for i in 0..len {
            let mut rem = i;
            let mut idx = [0usize; 2];
            for k in (0..dim).rev() {
                idx[k] = rem % axes[k].nodes;
                rem /= axes[k].nodes;
            }
            for k in 0..dim {
                points.push(axes[k].coord(idx[k]));
            }
        }
        Ok(Self { axes, points })
    }

    pub fn line(lower: f64, upper: f64, nodes: usize) -> Result<Self> {
        Self::new(vec![Axis { lower, upper, nodes }])
    }

    pub fn square(lower: f64, upper: f64, nodes: usize) -> Result<Self> {
        let a = Axis { lower, upper, nodes };
        Self::new(vec![a, a])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, k: usize) -> &Axis {
        &self.axes[k]
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.points.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.axes[axis].spacing()
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).product()
    }

    /// Coordinates of node `i`.
    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.points[i * d..(i + 1) * d]
    }

    /// Flat coordinate buffer, `dim` entries per node.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Per-axis index of node `i`.
    pub fn multi_index(&self, i: usize) -> [usize; 2] {
        let mut rem = i;
        let mut idx = [0usize; 2];
        for k in (0..self.dim()).rev() {
            idx[k] = rem % self.axes[k].nodes;
            rem /= self.axes[k].nodes;
        }
        idx
    }

    pub fn flat_index(&self, idx: [usize; 2]) -> usize {
        match self.dim() {
            1 => idx[0],
            _ => idx[0] * self.axes[1].nodes + idx[1],
        }
    }

    /// Stride of the flat index along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        if axis + 1 == self.dim() {
            1
        } else {
            self.axes[1].nodes
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.axes
            .iter()
            .zip(x)
            .all(|(a, &v)| v >= a.lower && v <= a.upper)
    }
}

/// Probability weights on the nodes of a [`GridSpec`].
#[derive(Clone, Debug)]
pub struct DiscreteMeasure {
    grid: Arc<GridSpec>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Normalizes `weights` to unit mass. Rejects negative, non-finite or
    /// all-zero input.
    pub fn from_weights(grid: Arc<GridSpec>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} weights for a grid of {} nodes",
                weights.len(),
                grid.len()
            )));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidMeasure(format!(
                "weight {i} is {} (must be finite and nonnegative)",
                weights[i]
            )));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidMeasure("all weights are zero".into()));
        }
        let weights = if (total - 1.0).abs() <= f64::EPSILON {
            weights
        } else {
            weights.into_iter().map(|w| w / total).collect()
        };
        Ok(Self { grid, weights })
    }

    /// Builds a measure from log-weights with a max shift, so that very
    /// negative exponents do not underflow to an all-zero vector.
    pub fn from_log_weights(grid: Arc<GridSpec>, log_weights: &[f64]) -> Result<Self> {
        let max = log_weights
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::InvalidMeasure(
                "log-weights have no finite maximum".into(),
            ));
        }
        let w = log_weights.iter().map(|l| (l - max).exp()).collect();
        Self::from_weights(grid, w)
    }

    pub fn from_density(grid: Arc<GridSpec>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let w = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        Self::from_weights(grid, w)
    }

    pub fn uniform(grid: Arc<GridSpec>) -> Self {
        let n = grid.len();
        Self {
            grid,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn point_mass(grid: Arc<GridSpec>, node: usize) -> Result<Self> {
        if node >= grid.len() {
            return Err(Error::InvalidMeasure(format!("node {node} outside the grid")));
        }
        let mut w = vec![0.0; grid.len()];
        w[node] = 1.0;
        Ok(Self { grid, weights: w })
    }

    /// Isotropic Gaussian `N(mean, variance·I)` sampled at the nodes.
    pub fn gaussian(grid: Arc<GridSpec>, mean: &[f64], variance: f64) -> Result<Self> {
        if !(variance > 0.0) || mean.len() != grid.dim() {
            return Err(Error::InvalidMeasure(
                "gaussian needs positive variance and a mean of grid dimension".into(),
            ));
        }
        let logw: Vec<f64> = (0..grid.len())
            .map(|i| {
                let r2: f64 = grid
                    .point(i)
                    .iter()
                    .zip(mean)
                    .map(|(x, m)| (x - m) * (x - m))
                    .sum();
                -0.5 * r2 / variance
            })
            .collect();
        Self::from_log_weights(grid, &logw)
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn same_grid(&self, other: &DiscreteMeasure) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn ensure_same_grid(&self, other: &DiscreteMeasure) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.dim();
        let mut m = vec![0.0; d];
        for (i, w) in self.weights.iter().enumerate() {
            for (k, x) in self.grid.point(i).iter().enumerate() {
                m[k] += w * x;
            }
        }
        m
    }

    /// Node-weighted variance (trace of the covariance in 2D).
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.weights
            .iter()
            .enumerate()
            .map(|(i, w)| {
                w * self
                    .grid
                    .point(i)
                    .iter()
                    .zip(&m)
                    .map(|(x, c)| (x - c) * (x - c))
                    .sum::<f64>()
            })
            .sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Convex combination `(1 - t)·self + t·other`.
    pub fn mix(&self, other: &DiscreteMeasure, t: f64) -> Result<DiscreteMeasure> {
        self.ensure_same_grid(other)?;
        let w = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect();
        DiscreteMeasure::from_weights(self.grid.clone(), w)
    }

    pub fn l1_distance(&self, other: &DiscreteMeasure) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let coord_names = ["x", "y"];
        write!(out, "node_index")?;
        for name in coord_names.iter().take(self.dim()) {
            write!(out, ",{name}")?;
        }
        writeln!(out, ",weight")?;
        for (i, w) in self.weights.iter().enumerate() {
            write!(out, "{i}")?;
            for x in self.grid.point(i) {
                write!(out, ",{x:.16e}")?;
            }
            writeln!(out, ",{w:.16e}")?;
        }
        Ok(())
    }

    /// Reads a snapshot written by [`DiscreteMeasure::write_csv`] back onto `grid`.
    pub fn read_csv<R: BufRead>(grid: Arc<GridSpec>, input: R) -> Result<Self> {
        let mut weights = vec![0.0; grid.len()];
        let mut seen = 0usize;
        for (lineno, line) in input.lines().enumerate().skip(1) {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != grid.dim() + 2 {
                return Err(Error::InvalidMeasure(format!(
                    "line {}: expected {} columns",
                    lineno + 1,
                    grid.dim() + 2
                )));
            }
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| {
                    Error::InvalidMeasure(format!("line {}: {e}", lineno + 1))
                })
            };
            let idx: usize = fields[0].trim().parse().map_err(|e| {
                Error::InvalidMeasure(format!("line {}: {e}", lineno + 1))
            })?;
            if idx >= grid.len() {
                return Err(Error::InvalidMeasure(format!(
                    "line {}: node {idx} outside the grid",
                    lineno + 1
                )));
            }
            weights[idx] = parse(fields[grid.dim() + 1])?;
            seen += 1;
        }
        if seen != grid.len() {
            return Err(Error::InvalidMeasure(format!(
                "snapshot has {seen} rows, grid has {} nodes",
                grid.len()
            )));
        }
        Self::from_weights(grid, weights)
    }
}

/// Σ wᵢ·|xᵢ|².
pub fn second_moment(mu: &DiscreteMeasure) -> f64 {
    mu.weights
        .iter()
        .enumerate()
        .map(|(i, w)| w * mu.grid.point(i).iter().map(|x| x * x).sum::<f64>())
        .sum()
}

/// Image point of every grid node under a map `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMap {
    dim: usize,
    values: Vec<f64>,
}

impl PointMap {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(Error::InvalidParameter(
                "point map buffer length is not a multiple of the dimension".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("point map has non-finite values".into()));
        }
        Ok(Self { dim, values })
    }

    pub fn identity(grid: &GridSpec) -> Self {
        Self {
            dim: grid.dim(),
            values: grid.points().to_vec(),
        }
    }

    pub fn from_fn(grid: &GridSpec, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.points().len());
        for i in 0..grid.len() {
            values.extend(f(grid.point(i)));
        }
        Self::new(grid.dim(), values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Result of [`pushforward`]: the re-binned measure and the number of atoms
/// whose image fell outside the grid and was clamped to the boundary.
#[derive(Clone, Debug)]
pub struct Pushforward {
    pub measure: DiscreteMeasure,
    pub clamped: usize,
    pub clamped_mass: f64,
}

/// Splits a target coordinate into (lower node, fraction towards the upper
/// node), clamping to the axis. Targets that sit on a node up to rounding
/// snap to it so the identity map stays exact.
fn split_axis(axis: &Axis, t: f64) -> (usize, f64, bool) {
    let clamped = t < axis.lower || t > axis.upper;
    let t = t.clamp(axis.lower, axis.upper);
    let s = (t - axis.lower) / axis.spacing();
    let nearest = s.round();
    let s = if (s - nearest).abs() <= 64.0 * f64::EPSILON * s.abs().max(1.0) {
        nearest
    } else {
        s
    };
    let last = axis.nodes - 1;
    let mut i0 = s.floor() as usize;
    if i0 >= last {
        i0 = last - 1;
    }
    let frac = (s - i0 as f64).clamp(0.0, 1.0);
    (i0, frac, clamped)
}

/// `T#μ` re-binned onto μ's grid by linear (1D) or bilinear (2D) mass splitting.
pub fn pushforward(mu: &DiscreteMeasure, map: &PointMap) -> Result<Pushforward> {
    let grid = mu.grid();
    if map.dim() != grid.dim() || map.len() != grid.len() {
        return Err(Error::InvalidParameter(
            "point map does not match the measure's grid".into(),
        ));
    }
    let mut out = vec![0.0; grid.len()];
    let mut clamped = 0usize;
    let mut clamped_mass = 0.0;
    for (i, &m) in mu.weights().iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let target = map.get(i);
        match grid.dim() {
            1 => {
                let (i0, f, c) = split_axis(grid.axis(0), target[0]);
                if c {
                    clamped += 1;
                    clamped_mass += m;
                }
                out[i0] += m * (1.0 - f);
                if f > 0.0 {
                    out[i0 + 1] += m * f;
                }
            }
            _ => {
                let (a0, fa, ca) = split_axis(grid.axis(0), target[0]);
                let (b0, fb, cb) = split_axis(grid.axis(1), target[1]);
                if ca || cb {
                    clamped += 1;
                    clamped_mass += m;
                }
                for (da, wa) in [(0usize, 1.0 - fa), (1, fa)] {
                    if wa == 0.0 {
                        continue;
                    }
                    for (db, wb) in [(0usize, 1.0 - fb), (1, fb)] {
                        if wb == 0.0 {
                            continue;
                        }
                        out[grid.flat_index([a0 + da, b0 + db])] += m * wa * wb;
                    }
                }
            }
        }
    }
    let total: f64 = out.iter().sum();
    if (total - 1.0).abs() > MASS_TOL {
        for w in &mut out {
            *w /= total;
        }
    }
    Ok(Pushforward {
        measure: DiscreteMeasure {
            grid: grid.clone(),
            weights: out,
        },
        clamped,
        clamped_mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(lo: f64, hi: f64, n: usize) -> Arc<GridSpec> {
        Arc::new(GridSpec::line(lo, hi, n).unwrap())
    }

    #[test]
    fn grid_rejects_degenerate_axes() {
        assert!(GridSpec::line(0.0, 1.0, 1).is_err());
        assert!(GridSpec::line(1.0, 1.0, 5).is_err());
        assert!(GridSpec::new(vec![]).is_err());
        let g = GridSpec::square(-1.0, 1.0, 3).unwrap();
        assert_eq!(g.len(), 9);
        assert!((g.cell_volume() - 1.0).abs() < 1e-15);
        assert_eq!(g.point(5), &[0.0, 1.0]);
    }

    #[test]
    fn constant_density_is_uniform() {
        let mu = DiscreteMeasure::from_density(line(0.0, 1.0, 3), |_| 1.0).unwrap();
        for w in mu.weights() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn gaussian_density_normalizes() {
        let mu =
            DiscreteMeasure::from_density(line(-6.0, 6.0, 201), |x| (-x[0] * x[0] / 2.0).exp())
                .unwrap();
        assert!((mu.total_mass() - 1.0).abs() < MASS_TOL);
    }

    #[test]
    fn indicator_density_is_point_mass() {
        let g = line(0.0, 4.0, 5);
        let mu = DiscreteMeasure::from_density(g.clone(), |x| if x[0] == 2.0 { 1.0 } else { 0.0 })
            .unwrap();
        assert_eq!(mu.weights(), DiscreteMeasure::point_mass(g, 2).unwrap().weights());
    }

    #[test]
    fn zero_density_is_rejected() {
        assert!(DiscreteMeasure::from_density(line(0.0, 1.0, 3), |_| 0.0).is_err());
        assert!(DiscreteMeasure::from_density(line(0.0, 1.0, 3), |_| -1.0).is_err());
    }

    #[test]
    fn second_moment_examples() {
        let g = line(-2.0, 2.0, 5);
        let mu = DiscreteMeasure::point_mass(g, 4).unwrap();
        assert!((second_moment(&mu) - 4.0).abs() < 1e-15);

        let g = line(-1.0, 1.0, 3);
        let mu = DiscreteMeasure::from_weights(g, vec![0.5, 0.0, 0.5]).unwrap();
        assert!((second_moment(&mu) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn discretized_standard_normal_has_unit_second_moment() {
        let g = line(-8.0, 8.0, 401);
        let mu = DiscreteMeasure::gaussian(g.clone(), &[0.0], 1.0).unwrap();
        // oracle: direct summation of x² e^{-x²/2} over the same nodes
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..401 {
            let x = -8.0 + 0.04 * i as f64;
            let e = (-x * x / 2.0).exp();
            num += x * x * e;
            den += e;
        }
        let oracle = num / den;
        assert!((second_moment(&mu) - oracle).abs() < 1e-12);
        assert!((second_moment(&mu) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn identity_pushforward_is_bitwise() {
        let g = line(-3.0, 3.0, 61);
        let mu = DiscreteMeasure::gaussian(g.clone(), &[0.3], 0.7).unwrap();
        let pf = pushforward(&mu, &PointMap::identity(&g)).unwrap();
        assert_eq!(pf.measure.weights(), mu.weights());
        assert_eq!(pf.clamped, 0);

        let g2 = Arc::new(GridSpec::square(-1.0, 1.0, 7).unwrap());
        let mu2 = DiscreteMeasure::gaussian(g2.clone(), &[0.1, -0.2], 0.5).unwrap();
        let pf2 = pushforward(&mu2, &PointMap::identity(&g2)).unwrap();
        assert_eq!(pf2.measure.weights(), mu2.weights());
    }

    #[test]
    fn half_cell_shift_splits_evenly() {
        let g = line(-1.0, 1.0, 5);
        let h = g.spacing(0);
        let mu = DiscreteMeasure::point_mass(g.clone(), 2).unwrap();
        let map = PointMap::from_fn(&g, |x| vec![x[0] + h / 2.0]).unwrap();
        let pf = pushforward(&mu, &map).unwrap();
        assert!((pf.measure.weights()[2] - 0.5).abs() < 1e-15);
        assert!((pf.measure.weights()[3] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn halving_map_preserves_mean() {
        let g = line(0.0, 1.0, 5);
        let mu = DiscreteMeasure::from_weights(g.clone(), vec![0.5, 0.0, 0.0, 0.0, 0.5]).unwrap();
        let map = PointMap::from_fn(&g, |x| vec![x[0] / 2.0]).unwrap();
        let pf = pushforward(&mu, &map).unwrap();
        assert!((pf.measure.mean()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn clamping_is_counted() {
        let g = line(0.0, 1.0, 5);
        let mu = DiscreteMeasure::uniform(g.clone());
        let map = PointMap::from_fn(&g, |x| vec![x[0] + 0.6]).unwrap();
        let pf = pushforward(&mu, &map).unwrap();
        // nodes 0.5, 0.75 and 1.0 leave the grid; 0.25 lands at 0.85
        assert_eq!(pf.clamped, 3);
        assert!((pf.clamped_mass - 0.6).abs() < 1e-15);
        assert!((pf.measure.total_mass() - 1.0).abs() < MASS_TOL);
        assert!((pf.measure.weights()[4] - 0.68).abs() < 1e-12);
    }

    #[test]
    fn point_map_rejects_nan() {
        assert!(PointMap::new(1, vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn csv_snapshot_roundtrips() {
        let g = Arc::new(GridSpec::square(-1.0, 1.0, 4).unwrap());
        let mu = DiscreteMeasure::gaussian(g.clone(), &[0.2, 0.1], 0.3).unwrap();
        let mut buf = Vec::new();
        mu.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("node_index,x,y,weight\n"));
        let back = DiscreteMeasure::read_csv(g, &buf[..]).unwrap();
        assert_eq!(back.weights(), mu.weights());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn pushforward_preserves_mass_and_interior_mean(
                raw in proptest::collection::vec(0.0f64..1.0, 12),
                shift in -0.5f64..0.5,
                scale in 0.5f64..1.0,
            ) {
                prop_assume!(raw.iter().sum::<f64>() > 1e-3);
                let g = line(-3.0, 3.0, 12);
                let mu = DiscreteMeasure::from_weights(g.clone(), raw).unwrap();
                let map = PointMap::from_fn(&g, |x| vec![scale * x[0] + shift]).unwrap();
                let pf = pushforward(&mu, &map).unwrap();
                prop_assert!((pf.measure.total_mass() - 1.0).abs() < MASS_TOL);
                if pf.clamped == 0 {
                    let expected: f64 = mu.weights().iter().enumerate()
                        .map(|(i, w)| w * map.get(i)[0]).sum();
                    prop_assert!((pf.measure.mean()[0] - expected).abs() < 1e-12);
                }
                prop_assert!(second_moment(&pf.measure) >= 0.0);
            }
        }
    }
}
