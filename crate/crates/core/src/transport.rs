//! Squared 2-Wasserstein distances, optimal plans and barycentric maps.
//!
//! Two readings of a grid measure coexist here. The *atomic* one treats each
//! weight as a Dirac mass at its node; [`w2sq_1d`], [`w2sq_lp`] and
//! [`sinkhorn`] use it. The *cell* one spreads each weight uniformly over the
//! node's cell, so the 1D quantile function is piecewise linear and W² is a
//! smooth function of the weights. [`w2sq_cells`] and [`Quantile1d`] use it,
//! and the 1D proximal steps are built on it.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, GridSpec, PointMap};

/// Default cap on the support size accepted by [`w2sq_lp`].
pub const LP_SUPPORT_CAP: usize = 512;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn support(mu: &DiscreteMeasure) -> Vec<usize> {
    (0..mu.len()).filter(|&i| mu.weights()[i] > 0.0).collect()
}

fn require_1d(mu: &DiscreteMeasure) -> Result<()> {
    if mu.dim() == 1 {
        Ok(())
    } else {
        Err(Error::Dimension {
            expected: 1,
            got: mu.dim(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanEntry {
    pub i: usize,
    pub j: usize,
    pub mass: f64,
}

/// Sparse coupling between two grid measures, indexed by node.
#[derive(Clone, Debug)]
pub struct TransportPlan {
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    entries: Vec<PlanEntry>,
    cost: f64,
    cs_residual: Option<f64>,
}

impl TransportPlan {
    fn new(source: &DiscreteMeasure, target: &DiscreteMeasure, entries: Vec<PlanEntry>) -> Self {
        let cost = entries
            .iter()
            .map(|e| {
                e.mass * sq_dist(source.grid().point(e.i), target.grid().point(e.j))
            })
            .sum();
        Self {
            source: source.clone(),
            target: target.clone(),
            entries,
            cost,
            cs_residual: None,
        }
    }

    pub fn source(&self) -> &DiscreteMeasure {
        &self.source
    }

    pub fn target(&self) -> &DiscreteMeasure {
        &self.target
    }

    pub fn entries(&self) -> &[PlanEntry] {
        &self.entries
    }

    /// Σ γ_ij |x_i − y_j|².
    pub fn cost(&self) -> f64 {
        self.cost
    }

    /// Complementary-slackness residual of the LP duals, when available.
    pub fn cs_residual(&self) -> Option<f64> {
        self.cs_residual
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.source.len()];
        for e in &self.entries {
            r[e.i] += e.mass;
        }
        r
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.target.len()];
        for e in &self.entries {
            c[e.j] += e.mass;
        }
        c
    }

    /// Max-norm deviation of both marginals from the source/target weights.
    pub fn marginal_residual(&self) -> f64 {
        let r = self
            .row_sums()
            .iter()
            .zip(self.source.weights())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let c = self
            .col_sums()
            .iter()
            .zip(self.target.weights())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        r.max(c)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "i,j,mass")?;
        for e in &self.entries {
            writeln!(out, "{},{},{:.16e}", e.i, e.j, e.mass)?;
        }
        Ok(())
    }
}

/// Monotone (quantile) coupling of two 1D atomic measures. Grids may differ.
pub fn monotone_plan_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<TransportPlan> {
    require_1d(mu)?;
    require_1d(nu)?;
    let a = support(mu);
    let b = support(nu);
    let (wa, wb) = (mu.weights(), nu.weights());
    let mut entries = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ra, mut rb) = (wa[a[0]], wb[b[0]]);
    loop {
        let m = ra.min(rb);
        if m > 0.0 {
            entries.push(PlanEntry {
                i: a[i],
                j: b[j],
                mass: m,
            });
        }
        ra -= m;
        rb -= m;
        let last_a = i + 1 == a.len();
        let last_b = j + 1 == b.len();
        if last_a && last_b {
            break;
        }
        // advance whichever side is exhausted; rounding leftovers on the last
        // atom of one side are absorbed by the other side's remaining atoms
        if (ra <= rb && !last_a) || last_b {
            i += 1;
            ra = wa[a[i]];
            if last_b {
                rb = ra;
            }
        } else {
            j += 1;
            rb = wb[b[j]];
            if last_a {
                ra = rb;
            }
        }
    }
    Ok(TransportPlan::new(mu, nu, entries))
}

/// Exact W² between 1D atomic measures through the monotone coupling.
pub fn w2sq_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    Ok(monotone_plan_1d(mu, nu)?.cost())
}

/// Exact W²: quantile coupling in 1D, linear program in 2D.
pub fn w2sq(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    if mu.dim() == 1 && nu.dim() == 1 {
        w2sq_1d(mu, nu)
    } else {
        Ok(w2sq_lp(mu, nu)?.cost())
    }
}

pub fn w2sq_lp(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<TransportPlan> {
    w2sq_lp_capped(mu, nu, LP_SUPPORT_CAP)
}

/// Optimal plan by successive shortest augmenting paths with node potentials.
/// Ties between equal-cost paths are broken by lowest node index.
pub fn w2sq_lp_capped(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cap: usize,
) -> Result<TransportPlan> {
    if mu.dim() != nu.dim() {
        return Err(Error::Dimension {
            expected: mu.dim(),
            got: nu.dim(),
        });
    }
    let sa = support(mu);
    let sb = support(nu);
    let (n, m) = (sa.len(), sb.len());
    if n > cap || m > cap {
        return Err(Error::SupportCap {
            rows: n,
            cols: m,
            cap,
        });
    }
    let mut c = vec![0.0; n * m];
    for (a, &i) in sa.iter().enumerate() {
        for (b, &j) in sb.iter().enumerate() {
            c[a * m + b] = sq_dist(mu.grid().point(i), nu.grid().point(j));
        }
    }
    let mut supply: Vec<f64> = sa.iter().map(|&i| mu.weights()[i]).collect();
    let mut demand: Vec<f64> = sb.iter().map(|&j| nu.weights()[j]).collect();
    let mut flow = vec![0.0; n * m];
    let v = n + m;
    let mut p = vec![0.0; v];
    let tol = 1e-15;

    let mut dist = vec![f64::INFINITY; v];
    let mut prev = vec![usize::MAX; v];
    let mut done = vec![false; v];
    loop {
        if supply.iter().all(|&s| s <= tol) || demand.iter().all(|&d| d <= tol) {
            break;
        }
        dist.fill(f64::INFINITY);
        prev.fill(usize::MAX);
        done.fill(false);
        for a in 0..n {
            if supply[a] > tol {
                dist[a] = 0.0;
            }
        }
        let mut target = None;
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for (k, &d) in dist.iter().enumerate() {
                if !done[k] && d < best {
                    best = d;
                    u = k;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u >= n && demand[u - n] > tol {
                target = Some(u);
                break;
            }
            if u < n {
                let row = &c[u * m..(u + 1) * m];
                for b in 0..m {
                    let w = n + b;
                    if done[w] {
                        continue;
                    }
                    let nd = (best + row[b] + p[u] - p[w]).max(best);
                    if nd < dist[w] {
                        dist[w] = nd;
                        prev[w] = u;
                    }
                }
            } else {
                let b = u - n;
                for a in 0..n {
                    if done[a] || flow[a * m + b] <= 0.0 {
                        continue;
                    }
                    let nd = (best - c[a * m + b] + p[u] - p[a]).max(best);
                    if nd < dist[a] {
                        dist[a] = nd;
                        prev[a] = u;
                    }
                }
            }
        }
        let Some(t) = target else {
            break;
        };
        let dt = dist[t];
        for k in 0..v {
            p[k] += dist[k].min(dt);
        }
        // trace the path back to its source and find the bottleneck
        let mut path = vec![t];
        let mut delta = demand[t - n];
        let mut k = t;
        while prev[k] != usize::MAX {
            let q = prev[k];
            if q >= n {
                // reverse edge: sink q -> source k cancels flow (k, q)
                delta = delta.min(flow[k * m + (q - n)]);
            }
            path.push(q);
            k = q;
        }
        delta = delta.min(supply[k]);
        supply[k] -= delta;
        demand[t - n] -= delta;
        for w in path.windows(2) {
            let (to, from) = (w[0], w[1]);
            if from < n {
                flow[from * m + (to - n)] += delta;
            } else {
                let e = &mut flow[to * m + (from - n)];
                *e -= delta;
                if *e < 1e-18 {
                    *e = 0.0;
                }
            }
        }
    }

    let mut entries = Vec::new();
    let mut cs: f64 = 0.0;
    for a in 0..n {
        for b in 0..m {
            let rc = c[a * m + b] + p[a] - p[n + b];
            let scale = 1.0 + c[a * m + b];
            if rc < 0.0 {
                cs = cs.max(-rc / scale);
            }
            let f = flow[a * m + b];
            if f > 0.0 {
                cs = cs.max(rc.abs() / scale);
                entries.push(PlanEntry {
                    i: sa[a],
                    j: sb[b],
                    mass: f,
                });
            }
        }
    }
    let mut plan = TransportPlan::new(mu, nu, entries);
    plan.cs_residual = Some(cs);
    Ok(plan)
}

/// Scaling vectors and diagnostics of an entropic solve, stored as logs so
/// that small ε does not overflow.
#[derive(Clone, Debug)]
pub struct SinkhornState {
    pub epsilon: f64,
    pub log_a: Vec<f64>,
    pub log_b: Vec<f64>,
    pub iterations: usize,
    pub marginal_residual: f64,
    pub converged: bool,
    pub log_domain: bool,
}

fn log_sum_exp(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + it.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic OT with kernel `exp(−|x−y|²/ε)` restricted to the supports of
/// μ and ν. Switches to log-domain updates for small ε or kernel underflow.
pub fn sinkhorn(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    eps: f64,
    tol: f64,
    max_iters: usize,
) -> Result<(TransportPlan, SinkhornState)> {
    if !(eps > 0.0) || !(tol > 0.0) {
        return Err(Error::InvalidParameter(
            "sinkhorn needs positive epsilon and tolerance".into(),
        ));
    }
    if mu.dim() != nu.dim() {
        return Err(Error::Dimension {
            expected: mu.dim(),
            got: nu.dim(),
        });
    }
    let sa = support(mu);
    let sb = support(nu);
    let (n, m) = (sa.len(), sb.len());
    let mut c = vec![0.0; n * m];
    for (a, &i) in sa.iter().enumerate() {
        for (b, &j) in sb.iter().enumerate() {
            c[a * m + b] = sq_dist(mu.grid().point(i), nu.grid().point(j));
        }
    }
    let pa: Vec<f64> = sa.iter().map(|&i| mu.weights()[i]).collect();
    let pb: Vec<f64> = sb.iter().map(|&j| nu.weights()[j]).collect();
    let max_cost = c.iter().copied().fold(0.0, f64::max);
    let kernel_ok = c.iter().all(|&v| (-v / eps).exp() > 1e-300);
    let log_domain = eps < 0.1 * max_cost || !kernel_ok;

    let mut log_a = vec![0.0; n];
    let mut log_b = vec![0.0; m];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;

    if log_domain {
        let lpa: Vec<f64> = pa.iter().map(|v| v.ln()).collect();
        let lpb: Vec<f64> = pb.iter().map(|v| v.ln()).collect();
        let col_update = |log_a: &[f64], log_b: &mut [f64]| {
            for b in 0..m {
                let l = log_sum_exp((0..n).map(|a| log_a[a] - c[a * m + b] / eps));
                log_b[b] = lpb[b] - l;
            }
        };
        col_update(&log_a, &mut log_b);
        while iterations < max_iters {
            let mut rows = vec![0.0; n];
            for (a, r) in rows.iter_mut().enumerate() {
                *r = log_sum_exp((0..m).map(|b| log_b[b] - c[a * m + b] / eps));
            }
            residual = (0..n)
                .map(|a| ((log_a[a] + rows[a]).exp() - pa[a]).abs())
                .fold(0.0, f64::max);
            if !residual.is_finite() {
                return Err(Error::NonConvergence(format!(
                    "sinkhorn residual became {residual} at iteration {iterations}"
                )));
            }
            if residual <= tol {
                break;
            }
            for a in 0..n {
                log_a[a] = lpa[a] - rows[a];
            }
            col_update(&log_a, &mut log_b);
            iterations += 1;
        }
    } else {
        let k: Vec<f64> = c.iter().map(|v| (-v / eps).exp()).collect();
        let mut av = vec![1.0; n];
        let mut bv = vec![1.0; m];
        let col_update = |av: &[f64], bv: &mut [f64]| {
            for b in 0..m {
                let s: f64 = (0..n).map(|a| k[a * m + b] * av[a]).sum();
                bv[b] = pb[b] / s;
            }
        };
        col_update(&av, &mut bv);
        while iterations < max_iters {
            let kb: Vec<f64> = (0..n)
                .map(|a| (0..m).map(|b| k[a * m + b] * bv[b]).sum())
                .collect();
            residual = (0..n)
                .map(|a| (av[a] * kb[a] - pa[a]).abs())
                .fold(0.0, f64::max);
            if !residual.is_finite() {
                return Err(Error::NonConvergence(format!(
                    "sinkhorn residual became {residual} at iteration {iterations}"
                )));
            }
            if residual <= tol {
                break;
            }
            for a in 0..n {
                av[a] = pa[a] / kb[a];
            }
            col_update(&av, &mut bv);
            iterations += 1;
        }
        log_a = av.iter().map(|v| v.ln()).collect();
        log_b = bv.iter().map(|v| v.ln()).collect();
    }

    let mut entries = Vec::with_capacity(n * m);
    for a in 0..n {
        for b in 0..m {
            let mass = (log_a[a] + log_b[b] - c[a * m + b] / eps).exp();
            if mass > 0.0 {
                entries.push(PlanEntry {
                    i: sa[a],
                    j: sb[b],
                    mass,
                });
            }
        }
    }
    let plan = TransportPlan::new(mu, nu, entries);
    let state = SinkhornState {
        epsilon: eps,
        log_a,
        log_b,
        iterations,
        marginal_residual: residual,
        converged: residual <= tol,
        log_domain,
    };
    Ok((plan, state))
}

/// Discrete transport map estimate `T(x_i) = Σ_j γ_ij y_j / Σ_j γ_ij`.
/// Zero-mass source atoms map to themselves.
pub fn barycentric_map(plan: &TransportPlan) -> Result<PointMap> {
    let src = plan.source();
    let grid = src.grid();
    let d = grid.dim();
    let mut acc = vec![0.0; grid.len() * d];
    let mut rows = vec![0.0; grid.len()];
    for e in plan.entries() {
        rows[e.i] += e.mass;
        for (k, y) in plan.target().grid().point(e.j).iter().enumerate() {
            acc[e.i * d + k] += e.mass * y;
        }
    }
    for i in 0..grid.len() {
        if rows[i] > 0.0 {
            for k in 0..d {
                acc[i * d + k] /= rows[i];
            }
        } else if src.weights()[i] > 0.0 {
            return Err(Error::InconsistentPlan(format!(
                "source atom {i} has mass {} but an empty plan row",
                src.weights()[i]
            )));
        } else {
            acc[i * d..(i + 1) * d].copy_from_slice(grid.point(i));
        }
    }
    PointMap::new(d, acc)
}

/// One linear stretch of a 1D quantile function: on `t ∈ [t0, t1]` the
/// quantile runs linearly from `q0` to `q1`. `cell` is the node the mass
/// came from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Piece {
    pub t0: f64,
    pub t1: f64,
    pub q0: f64,
    pub q1: f64,
    /// `1 − t0` and `1 − t1`, accumulated from the right so that they stay
    /// accurate in the upper tail
    pub u0: f64,
    pub u1: f64,
    pub cell: usize,
}

impl Piece {
    fn at(&self, t: f64) -> f64 {
        if t <= self.t0 {
            self.q0
        } else if t >= self.t1 {
            self.q1
        } else {
            self.q0 + (self.q1 - self.q0) * ((t - self.t0) / (self.t1 - self.t0))
        }
    }
}

/// Piecewise-linear nondecreasing quantile function on `[0, 1]`, possibly
/// with jumps between pieces.
#[derive(Clone, Debug)]
pub struct Quantile1d {
    pieces: Vec<Piece>,
}

impl Quantile1d {
    /// Quantile function of μ under the cell reading.
    pub fn from_cells(mu: &DiscreteMeasure) -> Result<Self> {
        require_1d(mu)?;
        let h = mu.grid().spacing(0);
        let mut pieces = Vec::new();
        let mut c = 0.0;
        let n = mu.len();
        // shared edges, so that consecutive pieces meet exactly
        let edge = |i: usize| {
            if i < n {
                mu.grid().point(i)[0] - 0.5 * h
            } else {
                mu.grid().point(n - 1)[0] + 0.5 * h
            }
        };
        let w = mu.weights();
        let mut tail = vec![0.0; n + 1];
        for i in (0..n).rev() {
            tail[i] = tail[i + 1] + w[i];
        }
        for (i, &wi) in w.iter().enumerate() {
            if wi > 0.0 {
                pieces.push(Piece {
                    t0: c,
                    t1: c + wi,
                    q0: edge(i),
                    q1: edge(i + 1),
                    u0: tail[i],
                    u1: tail[i + 1],
                    cell: i,
                });
                c += wi;
            }
        }
        if let Some(last) = pieces.last_mut() {
            last.t1 = 1.0;
            last.u1 = 0.0;
        }
        if let Some(first) = pieces.first_mut() {
            first.u0 = 1.0;
        }
        Ok(Self { pieces })
    }

    /// Quantile function of the reflection `x ↦ −x`.
    pub fn reflected(&self) -> Self {
        let pieces = self
            .pieces
            .iter()
            .rev()
            .map(|p| Piece {
                t0: p.u1,
                t1: p.u0,
                q0: -p.q1,
                q1: -p.q0,
                u0: p.t1,
                u1: p.t0,
                cell: p.cell,
            })
            .collect();
        Self { pieces }
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// Image under a nondecreasing map applied at piece endpoints. Within a
    /// piece the image is interpolated linearly.
    pub fn map_endpoints(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let pieces: Vec<Piece> = self
            .pieces
            .iter()
            .map(|p| Piece {
                q0: f(p.q0),
                q1: f(p.q1),
                ..*p
            })
            .collect();
        for (k, p) in pieces.iter().enumerate() {
            let back = k > 0 && p.q0 < pieces[k - 1].q1 - 1e-12;
            if !(p.q0.is_finite() && p.q1.is_finite()) || p.q1 < p.q0 || back {
                return Err(Error::InvalidParameter(
                    "map is not nondecreasing on the support".into(),
                ));
            }
        }
        Ok(Self { pieces })
    }

    pub fn mean(&self) -> f64 {
        self.pieces
            .iter()
            .map(|p| (p.t1 - p.t0) * 0.5 * (p.q0 + p.q1))
            .sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.pieces
            .iter()
            .map(|p| (p.t1 - p.t0) * (p.q0 * p.q0 + p.q0 * p.q1 + p.q1 * p.q1) / 3.0)
            .sum()
    }

    fn locate(&self, t: f64) -> usize {
        self.pieces
            .partition_point(|p| p.t1 <= t)
            .min(self.pieces.len() - 1)
    }

    /// Left and right limits of the quantile at `t`.
    pub fn limits(&self, t: f64) -> (f64, f64) {
        let k = self.locate(t);
        let p = &self.pieces[k];
        if t <= p.t0 {
            let left = if k > 0 { self.pieces[k - 1].q1 } else { p.q0 };
            (left, p.q0)
        } else {
            let v = p.at(t);
            (v, v)
        }
    }
}

/// ∫₀¹ (Q_a − Q_b)² dt over the common refinement of both breakpoint sets.
pub fn w2sq_quantiles(a: &Quantile1d, b: &Quantile1d) -> f64 {
    let (pa, pb) = (a.pieces(), b.pieces());
    let (mut i, mut j) = (0usize, 0usize);
    let mut t = 0.0;
    let mut total = 0.0;
    while i < pa.len() && j < pb.len() {
        let end = pa[i].t1.min(pb[j].t1);
        let len = end - t;
        if len > 0.0 {
            let d0 = pa[i].at(t) - pb[j].at(t);
            let d1 = pa[i].at(end) - pb[j].at(end);
            total += len * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
        }
        t = end;
        if pa[i].t1 <= end {
            i += 1;
        }
        if pb[j].t1 <= end {
            j += 1;
        }
    }
    total
}

/// W² between the cell readings of two 1D measures.
pub fn w2sq_cells(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    Ok(w2sq_quantiles(
        &Quantile1d::from_cells(mu)?,
        &Quantile1d::from_cells(nu)?,
    ))
}

/// Cells lighter than this are treated as having a constant transport map;
/// their quantile range is not resolvable next to a cumulative mass near 1.
const TINY_CELL: f64 = 1e-13;

/// Index of the last cell with resolvable mass, or of the last positive one.
fn last_resolved(w: &[f64]) -> usize {
    w.iter()
        .rposition(|&v| v > TINY_CELL)
        .or_else(|| w.iter().rposition(|&v| v > 0.0))
        .unwrap_or(0)
}

/// Cell-reading W²(μ, anchor) and its gradient in the weights of μ: entry
/// `i` is the cell average of the Kantorovich potential φ with
/// `φ'(x) = 2(x − T(x))`, normalized by φ = 0 at the left grid edge.
pub fn w2sq_cells_grad(mu: &DiscreteMeasure, anchor: &Quantile1d) -> Result<(f64, Vec<f64>)> {
    require_1d(mu)?;
    let (total, mut grad) = grad_from_left(mu, anchor);
    // cells past the median are resolved from the right, where their
    // cumulative mass is small; potentials agree up to a constant
    let (rmu, ranchor) = reflect(mu, anchor)?;
    let (_, right) = grad_from_left(&rmu, &ranchor);
    let n = mu.len();
    let m = median_cell(mu.weights());
    let offset = grad[m] - right[n - 1 - m];
    for i in m + 1..n {
        grad[i] = right[n - 1 - i] + offset;
    }
    Ok((total, grad))
}

/// First cell at which the cumulative mass reaches one half.
fn median_cell(w: &[f64]) -> usize {
    let mut c = 0.0;
    for (i, v) in w.iter().enumerate() {
        c += v;
        if c >= 0.5 {
            return i;
        }
    }
    w.len() - 1
}

/// The pair under `x ↦ −x`, cells in reverse order.
fn reflect(mu: &DiscreteMeasure, anchor: &Quantile1d) -> Result<(DiscreteMeasure, Quantile1d)> {
    let ax = mu.grid().axis(0);
    let grid = Arc::new(GridSpec::line(-ax.upper, -ax.lower, ax.nodes)?);
    let w: Vec<f64> = mu.weights().iter().rev().copied().collect();
    Ok((DiscreteMeasure::from_weights(grid, w)?, anchor.reflected()))
}

fn grad_from_left(mu: &DiscreteMeasure, anchor: &Quantile1d) -> (f64, Vec<f64>) {
    let h = mu.grid().spacing(0);
    let w = mu.weights();
    let pb = anchor.pieces();
    let last_pos = last_resolved(w);
    let mut grad = vec![0.0; w.len()];
    let mut total = 0.0;
    let mut phi = 0.0;
    let mut c = 0.0;
    let mut j = 0usize;
    for i in 0..w.len() {
        let edge = mu.grid().point(i)[0] - 0.5 * h;
        if w[i] <= TINY_CELL && i != last_pos || i > last_pos {
            // below quantile resolution: the map is constant across the cell
            let (lo, hi) = anchor.limits(c);
            let y = (edge + 0.5 * h).clamp(lo, hi);
            grad[i] = phi + (edge - y) * h + h * h / 3.0;
            phi += 2.0 * (edge - y) * h + h * h;
            let mid = edge + 0.5 * h - y;
            total += w[i] * (mid * mid + h * h / 12.0);
            c += w[i];
            continue;
        }
        let t_end = if i == last_pos { 1.0 } else { c + w[i] };
        // the last cell absorbs rounding in the cumulative sum
        let a = h / if i == last_pos { (t_end - c).max(w[i]) } else { w[i] };
        let mut integral = 0.0;
        let mut t = c;
        while t < t_end {
            while j + 1 < pb.len() && pb[j].t1 <= t {
                j += 1;
            }
            let end = t_end.min(pb[j].t1);
            let end = if j + 1 == pb.len() { t_end } else { end };
            let len = end - t;
            if len <= 0.0 {
                break;
            }
            let d0 = edge + a * (t - c) - pb[j].at(t);
            let d1 = edge + a * (end - c) - pb[j].at(end);
            total += len * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
            integral += a * len * (phi + a * len * (2.0 * d0 + d1) / 3.0);
            phi += a * len * (d0 + d1);
            t = end;
        }
        grad[i] = integral / h;
        c = t_end;
    }
    (total, grad)
}

/// Moments of the anchor's quantile measure `dQ` over one cell of μ, in the
/// cell's local quantile coordinate `s ∈ [0, 1]`.
#[derive(Clone, Copy, Debug, Default)]
pub struct CellMoments {
    /// ∫ s² dQ
    pub ss: f64,
    /// ∫ (1 − s)² dQ
    pub rr: f64,
    /// ∫ s(1 − s) dQ
    pub sr: f64,
    /// ∫ dQ
    pub total: f64,
}

/// Per-cell moments of `dQ_anchor` over the quantile ranges of μ's cells.
/// These assemble the Hessian of [`w2sq_cells`] in cumulative coordinates:
/// cell `i` couples `C_{i−1}` and `C_i` through
/// `(2h/μ_i)·[[rr, sr], [sr, ss]]`. All weights must be positive.
pub fn cell_moments(mu: &DiscreteMeasure, anchor: &Quantile1d) -> Result<Vec<CellMoments>> {
    require_1d(mu)?;
    if let Some(i) = mu.weights().iter().position(|&v| v <= 0.0) {
        return Err(Error::InvalidMeasure(format!("weight {i} is not positive")));
    }
    let left = moments_from_left(mu, anchor);
    let (rmu, ranchor) = reflect(mu, anchor)?;
    let right = moments_from_left(&rmu, &ranchor);
    let n = mu.len();
    let m = median_cell(mu.weights());
    Ok((0..n)
        .map(|i| {
            if i <= m {
                left[i]
            } else {
                let r = right[n - 1 - i];
                CellMoments { ss: r.rr, rr: r.ss, ..r }
            }
        })
        .collect())
}

fn moments_from_left(mu: &DiscreteMeasure, anchor: &Quantile1d) -> Vec<CellMoments> {
    let w = mu.weights();
    let n = w.len();
    let pb = anchor.pieces();
    let mut out = vec![CellMoments::default(); n];
    let last = last_resolved(w);
    let (mut c, mut j, mut jump) = (0.0, 0usize, 1usize);
    for i in 0..n {
        if w[i] <= TINY_CELL && i != last || i > last {
            let b = (anchor.limits(c + w[i]).1 - anchor.limits(c).0).max(0.0);
            out[i] = CellMoments {
                ss: b / 3.0,
                rr: b / 3.0,
                sr: b / 6.0,
                total: b,
            };
            c += w[i];
            continue;
        }
        let end = if i == last { 1.0 } else { c + w[i] };
        let width = if i == last { (end - c).max(w[i]) } else { w[i] };
        let local = |t: f64| ((t - c) / width).clamp(0.0, 1.0);
        let m = &mut out[i];
        while j + 1 < pb.len() && pb[j].t1 <= c {
            j += 1;
        }
        let mut k = j;
        while k < pb.len() && pb[k].t0 < end {
            let (u, v) = (pb[k].t0.max(c), pb[k].t1.min(end));
            if v > u {
                let dq = pb[k].at(v) - pb[k].at(u);
                let (a, z) = (local(u), local(v));
                let sq = (z * z + z * a + a * a) / 3.0;
                let (ra, rz) = (1.0 - a, 1.0 - z);
                m.ss += dq * sq;
                m.rr += dq * (ra * ra + ra * rz + rz * rz) / 3.0;
                m.sr += dq * ((z + a) / 2.0 - sq);
                m.total += dq;
            }
            k += 1;
        }
        while jump < pb.len() && (pb[jump].t0 < end || i == last) {
            let size = pb[jump].q0 - pb[jump - 1].q1;
            if size > 0.0 {
                let s = local(pb[jump].t0);
                m.ss += size * s * s;
                m.rr += size * (1.0 - s) * (1.0 - s);
                m.sr += size * s * (1.0 - s);
                m.total += size;
            }
            jump += 1;
        }
        c = end;
    }
    out
}

/// Hessian of [`w2sq_cells`] in the cumulative coordinates
/// `C_k = μ_0 + … + μ_k`, `k < n − 1`, returned as (diagonal, off-diagonal)
/// of a symmetric tridiagonal matrix. All weights must be positive.
pub fn w2sq_cells_hessian(mu: &DiscreteMeasure, anchor: &Quantile1d) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = cell_moments(mu, anchor)?;
    let w = mu.weights();
    let h = mu.grid().spacing(0);
    let e = w.len().saturating_sub(1);
    let diag = (0..e)
        .map(|k| 2.0 * h * (m[k].ss / w[k] + m[k + 1].rr / w[k + 1]))
        .collect();
    let off = (0..e.saturating_sub(1))
        .map(|k| 2.0 * h * m[k + 1].sr / w[k + 1])
        .collect();
    Ok((diag, off))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::GridSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn line(lo: f64, hi: f64, n: usize) -> Arc<GridSpec> {
        Arc::new(GridSpec::line(lo, hi, n).unwrap())
    }

    fn random_measure(g: &Arc<GridSpec>, rng: &mut ChaCha8Rng, sparsity: f64) -> DiscreteMeasure {
        loop {
            let w: Vec<f64> = (0..g.len())
                .map(|_| {
                    if rng.gen::<f64>() < sparsity {
                        0.0
                    } else {
                        rng.gen::<f64>()
                    }
                })
                .collect();
            if w.iter().sum::<f64>() > 0.0 {
                return DiscreteMeasure::from_weights(g.clone(), w).unwrap();
            }
        }
    }

    #[test]
    fn w2_1d_examples() {
        let g = line(0.0, 3.0, 4);
        let a = DiscreteMeasure::point_mass(g.clone(), 0).unwrap();
        let b = DiscreteMeasure::point_mass(g.clone(), 3).unwrap();
        assert_eq!(w2sq_1d(&a, &a).unwrap(), 0.0);
        assert!((w2sq_1d(&a, &b).unwrap() - 9.0).abs() < 1e-15);

        let g = line(0.0, 2.0, 3);
        let mu = DiscreteMeasure::from_weights(g.clone(), vec![0.5, 0.5, 0.0]).unwrap();
        let nu = DiscreteMeasure::from_weights(g, vec![0.0, 0.5, 0.5]).unwrap();
        // 2x2 plan polytope: γ = [[p, 0.5-p], [0.5-p, p]] over targets {1, 2}
        let brute = (0..=1000)
            .map(|k| {
                let p = 0.5 * k as f64 / 1000.0;
                p * 1.0 + (0.5 - p) * 4.0 + (0.5 - p) * 0.0 + p * 1.0
            })
            .fold(f64::INFINITY, f64::min);
        assert!((w2sq_1d(&mu, &nu).unwrap() - brute).abs() < 1e-12);
        assert!((brute - 1.0).abs() < 1e-12);
    }

    #[test]
    fn w2_1d_rejects_2d() {
        let g = Arc::new(GridSpec::square(0.0, 1.0, 3).unwrap());
        let mu = DiscreteMeasure::uniform(g);
        assert!(matches!(
            w2sq_1d(&mu, &mu),
            Err(Error::Dimension { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn lp_diagonal_on_identical_measures() {
        let g = line(0.0, 1.0, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mu = random_measure(&g, &mut rng, 0.0);
        let plan = w2sq_lp(&mu, &mu).unwrap();
        assert!(plan.cost().abs() < 1e-15);
        for e in plan.entries() {
            assert_eq!(e.i, e.j);
        }
    }

    #[test]
    fn lp_matches_quantile_in_1d() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            let g1 = line(-2.0, 1.5, 17);
            let g2 = line(-1.0, 3.0, 13);
            let mu = random_measure(&g1, &mut rng, 0.3);
            let nu = random_measure(&g2, &mut rng, 0.3);
            let lp = w2sq_lp(&mu, &nu).unwrap();
            let q = w2sq_1d(&mu, &nu).unwrap();
            assert!((lp.cost() - q).abs() < 1e-9, "{} vs {}", lp.cost(), q);
            assert!(lp.marginal_residual() < 1e-9);
            assert!(lp.cs_residual().unwrap() < 1e-9);
        }
    }

    #[test]
    fn lp_respects_cap() {
        let g = line(0.0, 1.0, 10);
        let mu = DiscreteMeasure::uniform(g);
        assert!(matches!(
            w2sq_lp_capped(&mu, &mu, 5),
            Err(Error::SupportCap { .. })
        ));
    }

    #[test]
    fn lp_is_symmetric_in_2d() {
        let g = Arc::new(GridSpec::square(-1.0, 1.0, 5).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mu = random_measure(&g, &mut rng, 0.4);
        let nu = random_measure(&g, &mut rng, 0.4);
        let ab = w2sq_lp(&mu, &nu).unwrap();
        let ba = w2sq_lp(&nu, &mu).unwrap();
        assert!((ab.cost() - ba.cost()).abs() < 1e-9);
        assert!(ab.marginal_residual() < 1e-9);
    }

    #[test]
    fn sinkhorn_self_and_single_atoms() {
        let g = line(0.0, 1.0, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mu = random_measure(&g, &mut rng, 0.0);
        let (plan, state) = sinkhorn(&mu, &mu, 0.5, 1e-12, 10_000).unwrap();
        assert!(state.converged && plan.marginal_residual() < 1e-10);
        assert!(plan.cost() >= 0.0);

        let a = DiscreteMeasure::point_mass(g.clone(), 1).unwrap();
        let b = DiscreteMeasure::point_mass(g.clone(), 6).unwrap();
        let (plan, _) = sinkhorn(&a, &b, 0.01, 1e-12, 100).unwrap();
        assert_eq!(plan.entries().len(), 1);
        let expected = (g.point(1)[0] - g.point(6)[0]).powi(2);
        assert!((plan.cost() - expected).abs() < 1e-14);
    }

    #[test]
    fn sinkhorn_cost_decreases_toward_lp() {
        let g = line(0.0, 1.0, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mu = random_measure(&g, &mut rng, 0.0);
        let nu = random_measure(&g, &mut rng, 0.0);
        let opt = w2sq_lp(&mu, &nu).unwrap().cost();
        let mut last = f64::INFINITY;
        for eps in [1.0, 0.1, 0.01] {
            let (plan, state) = sinkhorn(&mu, &nu, eps, 1e-13, 200_000).unwrap();
            assert!(state.converged);
            assert!(plan.cost() >= opt - 1e-9);
            assert!(plan.cost() <= last);
            last = plan.cost();
        }
        assert!(last - opt < 1e-2);
    }

    #[test]
    fn barycentric_examples() {
        let g = line(0.0, 3.0, 4);
        let mu = DiscreteMeasure::from_weights(g.clone(), vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let nu = DiscreteMeasure::from_weights(g.clone(), vec![0.0, 0.0, 0.5, 0.5]).unwrap();
        let t = barycentric_map(&monotone_plan_1d(&mu, &nu).unwrap()).unwrap();
        assert_eq!(t.get(0), &[2.0]);
        assert_eq!(t.get(1), &[3.0]);
        assert_eq!(t.get(2), &[2.0]);

        let id = barycentric_map(&w2sq_lp(&mu, &mu).unwrap()).unwrap();
        assert_eq!(id.values(), g.points());

        let a = DiscreteMeasure::point_mass(g.clone(), 0).unwrap();
        let b = DiscreteMeasure::point_mass(g.clone(), 2).unwrap();
        let t = barycentric_map(&w2sq_lp(&a, &b).unwrap()).unwrap();
        assert_eq!(t.get(0), &[2.0]);
    }

    #[test]
    fn cell_w2_translation_is_exact() {
        let g = line(-2.0, 2.0, 9);
        let h = g.spacing(0);
        let mu = DiscreteMeasure::point_mass(g.clone(), 2).unwrap();
        let nu = DiscreteMeasure::point_mass(g.clone(), 5).unwrap();
        assert!((w2sq_cells(&mu, &nu).unwrap() - (3.0 * h).powi(2)).abs() < 1e-14);
        assert_eq!(w2sq_cells(&mu, &mu).unwrap(), 0.0);
    }

    // Oracle: Simpson quadrature on the inverse CDFs evaluated by bisection.
    fn w2_cells_oracle(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
        let q = |m: &DiscreteMeasure, t: f64| {
            let h = m.grid().spacing(0);
            let mut c = 0.0;
            for (i, &w) in m.weights().iter().enumerate() {
                if w > 0.0 && (c + w >= t) {
                    return m.grid().point(i)[0] - h / 2.0 + h * (t - c) / w;
                }
                c += w;
            }
            m.grid().axis(0).upper + h / 2.0
        };
        let n = 200_000;
        let mut s = 0.0;
        for k in 0..n {
            let t = (k as f64 + 0.5) / n as f64;
            let d = q(mu, t) - q(nu, t);
            s += d * d;
        }
        s / n as f64
    }

    #[test]
    fn cell_w2_matches_quadrature() {
        let g = line(-1.0, 1.0, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mu = random_measure(&g, &mut rng, 0.2);
        let nu = random_measure(&g, &mut rng, 0.2);
        let exact = w2sq_cells(&mu, &nu).unwrap();
        assert!((exact - w2_cells_oracle(&mu, &nu)).abs() < 1e-6);
    }

    #[test]
    fn cell_gradient_matches_finite_differences() {
        let g = line(-1.0, 2.0, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for sparsity in [0.0, 0.3] {
            let mu = random_measure(&g, &mut rng, sparsity);
            let nu = random_measure(&g, &mut rng, 0.2);
            let anchor = Quantile1d::from_cells(&nu).unwrap();
            let (w2, grad) = w2sq_cells_grad(&mu, &anchor).unwrap();
            assert!((w2 - w2sq_cells(&mu, &nu).unwrap()).abs() < 1e-13);
            // directional derivative along zero-mass perturbations that keep μ ≥ 0
            for _ in 0..10 {
                let dir: Vec<f64> = mu
                    .weights()
                    .iter()
                    .map(|&w| if w > 0.0 { rng.gen::<f64>() - 0.5 } else { rng.gen::<f64>() })
                    .collect();
                let mean = dir.iter().sum::<f64>() / dir.len() as f64;
                let dir: Vec<f64> = dir.iter().map(|d| d - mean).collect();
                let eps = 1e-6;
                let f = |s: f64| {
                    let w: Vec<f64> = mu.weights().iter().zip(&dir).map(|(a, d)| a + s * d).collect();
                    if w.iter().any(|&v| v < 0.0) {
                        return None;
                    }
                    Some(w2sq_cells(&DiscreteMeasure::from_weights(g.clone(), w).unwrap(), &nu).unwrap())
                };
                let (Some(fp), Some(f0)) = (f(eps), f(0.0)) else { continue };
                let fd = (fp - f0) / eps;
                let an: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
                assert!((fd - an).abs() < 1e-4 * (1.0 + an.abs()), "fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn cell_hessian_matches_gradient_differences() {
        let g = line(-1.0, 2.0, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for sparsity in [0.0, 0.4] {
            let mu = random_measure(&g, &mut rng, 0.0);
            let nu = random_measure(&g, &mut rng, sparsity);
            let anchor = Quantile1d::from_cells(&nu).unwrap();
            let (diag, off) = w2sq_cells_hessian(&mu, &anchor).unwrap();
            let n = mu.len();
            let grad_c = |w: &[f64]| {
                let m = DiscreteMeasure::from_weights(g.clone(), w.to_vec()).unwrap();
                let (_, gw) = w2sq_cells_grad(&m, &anchor).unwrap();
                (0..n - 1).map(|k| gw[k] - gw[k + 1]).collect::<Vec<f64>>()
            };
            for _ in 0..5 {
                let v: Vec<f64> = (0..n - 1).map(|_| rng.gen::<f64>() - 0.5).collect();
                let dmu: Vec<f64> = (0..n)
                    .map(|i| v.get(i).copied().unwrap_or(0.0) - if i > 0 { v[i - 1] } else { 0.0 })
                    .collect();
                let eps = 1e-7;
                let shifted = |s: f64| -> Vec<f64> {
                    mu.weights().iter().zip(&dmu).map(|(a, d)| a + s * d).collect()
                };
                let (gp, gm) = (grad_c(&shifted(eps)), grad_c(&shifted(-eps)));
                for k in 0..n - 1 {
                    let fd = (gp[k] - gm[k]) / (2.0 * eps);
                    let mut hv = diag[k] * v[k];
                    if k > 0 {
                        hv += off[k - 1] * v[k - 1];
                    }
                    if k + 1 < n - 1 {
                        hv += off[k] * v[k + 1];
                    }
                    assert!((fd - hv).abs() < 1e-4 * (1.0 + hv.abs()), "row {k}: fd {fd} vs {hv}");
                }
            }
        }
    }

    #[test]
    fn cell_gradient_is_reflection_equivariant_in_deep_tails() {
        let g = line(-6.0, 6.0, 121);
        let mu = DiscreteMeasure::gaussian(g.clone(), &[-1.0], 0.15).unwrap();
        let nu = DiscreteMeasure::gaussian(g.clone(), &[2.0], 0.05).unwrap();
        let anchor = Quantile1d::from_cells(&nu).unwrap();
        let (w2, grad) = w2sq_cells_grad(&mu, &anchor).unwrap();
        let (rmu, ranchor) = reflect(&mu, &anchor).unwrap();
        let (rw2, rgrad) = w2sq_cells_grad(&rmu, &ranchor).unwrap();
        assert!((w2 - rw2).abs() < 1e-12 * w2);
        let n = mu.len();
        let shift = grad[60] - rgrad[n - 1 - 60];
        for i in 0..n {
            let other = rgrad[n - 1 - i] + shift;
            assert!((grad[i] - other).abs() < 1e-8 * (1.0 + grad[i].abs()), "cell {i}: {} vs {other}", grad[i]);
        }
        // |φ'| ≤ 2·(domain width), so adjacent averages differ by at most 2·12·h
        assert!(grad.windows(2).all(|p| (p[1] - p[0]).abs() <= 2.4 + 1e-9));
    }

    #[test]
    fn quantile_pushforward_shifts_mean() {
        let g = line(-3.0, 3.0, 31);
        let mu = DiscreteMeasure::gaussian(g, &[0.4], 0.5).unwrap();
        let q = Quantile1d::from_cells(&mu).unwrap();
        let shifted = q.map_endpoints(|x| x - 0.25).unwrap();
        assert!((shifted.mean() - (q.mean() - 0.25)).abs() < 1e-14);
        assert!((w2sq_quantiles(&q, &shifted) - 0.0625).abs() < 1e-14);
        assert!(q.map_endpoints(|x| -x).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(prop_oneof![Just(0.0), 0.01f64..1.0], n)
                .prop_filter("nonzero", |w| w.iter().sum::<f64>() > 0.0)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn symmetry_and_triangle(a in weights(9), b in weights(9), c in weights(9)) {
                let g = line(-2.0, 2.0, 9);
                let m = |w: Vec<f64>| DiscreteMeasure::from_weights(g.clone(), w).unwrap();
                let (a, b, c) = (m(a), m(b), m(c));
                let ab = w2sq_1d(&a, &b).unwrap();
                prop_assert!((ab - w2sq_1d(&b, &a).unwrap()).abs() <= 1e-9);
                let lab = w2sq_lp(&a, &b).unwrap().cost();
                prop_assert!((lab - w2sq_lp(&b, &a).unwrap().cost()).abs() <= 1e-9);
                prop_assert!((lab - ab).abs() <= 1e-9);
                let bc = w2sq_1d(&b, &c).unwrap();
                let ac = w2sq_1d(&a, &c).unwrap();
                prop_assert!(ac.sqrt() <= ab.sqrt() + bc.sqrt() + 1e-8);
                let cab = w2sq_cells(&a, &b).unwrap();
                prop_assert!((cab - w2sq_cells(&b, &a).unwrap()).abs() <= 1e-12);
            }

            #[test]
            fn plan_marginals(a in weights(7), b in weights(7)) {
                let g = line(0.0, 1.0, 7);
                let a = DiscreteMeasure::from_weights(g.clone(), a).unwrap();
                let b = DiscreteMeasure::from_weights(g.clone(), b).unwrap();
                let p = monotone_plan_1d(&a, &b).unwrap();
                prop_assert!(p.marginal_residual() <= 1e-9);
                prop_assert!(p.entries().iter().all(|e| e.mass >= 0.0));
            }
        }
    }
}
