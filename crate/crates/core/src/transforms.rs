//! Laplace functionals of clusters and of the alive-population process,
//! via the fixed point of the transform operator `Phi`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::cluster_sim::{
    population_count, simulate_cluster, simulate_process_with, ClusterOptions, Offspring, Realization,
};
use crate::domain::{Point, Region};
use crate::error::{Error, Result};
use crate::model::{LifetimeModel, MarkModel, ModelSpec, Profile};
use crate::operators::spectral_radius;
use crate::prelimit::{average_model, build_partition, PartitionScheme};
use crate::rng::{label, StreamKey};
use crate::stats::mean_se;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 500;

/// Nonnegative bounded test function.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub profile: Profile,
}

impl TestFunction {
    pub fn constant(z: f64) -> Self {
        TestFunction { profile: Profile::Constant(z) }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.profile.eval(x)
    }

    /// `C_f` over the given nodes; `invalid-argument` on a negative value.
    pub fn sup_on(&self, nodes: &[Point]) -> Result<f64> {
        let mut sup: f64 = 0.0;
        for x in nodes {
            let v = self.eval(x);
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "test function is {v} at {x:?}; it must be finite and >= 0"
                )));
            }
            sup = sup.max(v);
        }
        Ok(sup)
    }
}

/// Values `xi_{x_i}(f, u_j)` on the kernel nodes times a uniform grid of `[0, t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformGrid {
    /// Rows are kernel nodes, columns the `n_u + 1` time points.
    pub values: DMatrix<f64>,
    pub horizon: f64,
}

impl TransformGrid {
    pub fn constant(nodes: usize, n_u: usize, horizon: f64, v: f64) -> Self {
        TransformGrid { values: DMatrix::from_element(nodes, n_u + 1, v), horizon }
    }

    pub fn step(&self) -> f64 {
        self.horizon / (self.values.ncols() - 1) as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.values.ncols()).map(|j| j as f64 * self.step()).collect()
    }

    pub fn sup_distance(&self, other: &TransformGrid) -> f64 {
        (&self.values - &other.values).amax()
    }
}

/// `Jbar(u) + J(u) e^{-f(x)}` with `J` the survival function; without
/// lifetimes every event stays alive.
pub fn gamma_eval(lifetimes: Option<&LifetimeModel>, f: &TestFunction, x: &[f64], u: f64) -> Result<f64> {
    if !(u >= 0.0) {
        return Err(Error::NegativeTime(u));
    }
    let alive = lifetimes.map_or(1.0, |j| j.survival(u));
    Ok((1.0 - alive) + alive * (-f.eval(x)).exp())
}

/// `beta_x(g) = L_xi(int b(y, x) g(y) dy)` with `g` given at `nodes` with
/// quadrature `weight`.
pub fn beta_eval(marks: &MarkModel, x: &[f64], nodes: &[Point], g: &[f64], weight: f64) -> Result<f64> {
    if g.len() != nodes.len() {
        return Err(Error::Shape(format!("{} values for {} nodes", g.len(), nodes.len())));
    }
    if let Some(v) = g.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidArgument(format!("beta needs g >= 0, found {v}")));
    }
    let s: f64 = nodes.iter().zip(g).map(|(y, gy)| marks.profile(y, x) * gy).sum::<f64>() * weight;
    Ok(marks.factor().laplace(s))
}

/// Everything `Phi` needs that does not change between iterations.
pub struct PhiContext<'a> {
    pub spec: &'a ModelSpec,
    pub nodes: Vec<Point>,
    pub weight: f64,
    pub horizon: f64,
    pub n_u: usize,
    /// `a[(i, k)] = b(x_k, x_i) W(x_k, x_i) weight`, parent `i`, child `k`.
    a: DMatrix<f64>,
    /// `h(s_k)` on the time grid.
    h: Vec<f64>,
    gamma: DMatrix<f64>,
}

impl<'a> PhiContext<'a> {
    pub fn new(spec: &'a ModelSpec, f: &TestFunction, horizon: f64) -> Result<Self> {
        if !spec.is_linear() {
            return Err(Error::RequiresThinning);
        }
        if !(horizon > 0.0) || horizon.is_infinite() {
            return Err(Error::InvalidArgument(format!("horizon must be finite and positive, got {horizon}")));
        }
        let grid = spec.kernel_grid()?;
        let nodes = grid.midpoints();
        f.sup_on(&nodes)?;
        let weight = grid.cell_volume();
        let n = nodes.len();
        let n_u = spec.resolution.n_u;
        let a = DMatrix::from_fn(n, n, |i, k| spec.offspring_profile(&nodes[k], &nodes[i]) * weight);
        let du = horizon / n_u as f64;
        let h = (0..=n_u).map(|k| spec.excitation.eval(k as f64 * du)).collect();
        let life = spec.lifetimes.as_ref();
        let mut gamma = DMatrix::zeros(n, n_u + 1);
        for i in 0..n {
            for j in 0..=n_u {
                gamma[(i, j)] = gamma_eval(life, f, &nodes[i], j as f64 * du)?;
            }
        }
        Ok(PhiContext { spec, nodes, weight, horizon, n_u, a, h, gamma })
    }

    fn check(&self, xi: &TransformGrid) -> Result<()> {
        if xi.values.nrows() != self.nodes.len() || xi.values.ncols() != self.n_u + 1 || xi.horizon != self.horizon {
            return Err(Error::Shape(format!(
                "transform grid is {}x{} on [0, {}], expected {}x{} on [0, {}]",
                xi.values.nrows(),
                xi.values.ncols(),
                xi.horizon,
                self.nodes.len(),
                self.n_u + 1,
                self.horizon
            )));
        }
        Ok(())
    }

    /// `Phi_x(xi)(u) = gamma_x(u) beta_x(y -> int_0^u (1 - xi_y(u - s)) W(y, x) h(s) ds)`,
    /// the time integral by the trapezoid rule.
    pub fn apply(&self, xi: &TransformGrid) -> Result<TransformGrid> {
        self.check(xi)?;
        let n = self.nodes.len();
        let du = self.horizon / self.n_u as f64;
        let columns: Vec<f64> = (0..=self.n_u)
            .into_par_iter()
            .flat_map_iter(|j| {
                (0..n).map(move |y| {
                    if j == 0 {
                        return 0.0;
                    }
                    let mut s = 0.5 * ((1.0 - xi.values[(y, j)]) * self.h[0] + (1.0 - xi.values[(y, 0)]) * self.h[j]);
                    for k in 1..j {
                        s += (1.0 - xi.values[(y, j - k)]) * self.h[k];
                    }
                    s * du
                })
            })
            .collect();
        let conv = DMatrix::from_vec(n, self.n_u + 1, columns);
        let arg = &self.a * &conv;
        let law = self.spec.marks.factor();
        let mut out = self.gamma.clone();
        for i in 0..n {
            for j in 0..=self.n_u {
                out[(i, j)] *= law.laplace(arg[(i, j)].max(0.0));
            }
        }
        Ok(TransformGrid { values: out, horizon: self.horizon })
    }

    /// `C = 2 ||h||_inf C_B C_W |X|`.
    pub fn lipschitz_constant(&self) -> f64 {
        2.0 * self.spec.excitation.sup_norm() * self.spec.c_b() * self.spec.graphon.c_w * self.spec.domain.volume()
    }
}

pub fn phi_apply(xi: &TransformGrid, spec: &ModelSpec, f: &TestFunction) -> Result<TransformGrid> {
    PhiContext::new(spec, f, xi.horizon)?.apply(xi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `sup |xi^n - xi^(n-1)|` after the `n`-th application of the map.
    pub sup_change: f64,
    /// `C^k t^k / k!` with `k = n - 1`: both `xi^n` and `xi^(n-1)` are
    /// `k`-fold images of two `[0, 1]`-valued grids.
    pub envelope: f64,
}

#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub eta: TransformGrid,
    pub log: Vec<IterationRecord>,
    pub converged: bool,
    pub constant: f64,
}

impl FixedPoint {
    pub fn envelope_ok(&self) -> bool {
        self.log.iter().all(|r| r.sup_change <= r.envelope)
    }

    /// `slow-convergence` when the iteration cap was hit first.
    pub fn require_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::SlowConvergence(format!(
                "no convergence after {} iterations (last change {:e})",
                self.log.len(),
                self.log.last().map_or(f64::NAN, |r| r.sup_change)
            )))
        }
    }
}

/// `C^n t^n / n!` without overflow.
pub fn envelope(c: f64, t: f64, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    if c * t == 0.0 {
        return 0.0;
    }
    let ln = n as f64 * (c * t).ln() - statrs::function::gamma::ln_gamma(n as f64 + 1.0);
    ln.exp()
}

/// Picard iteration from `xi0` (default `xi = 1`) until the sup change drops below `tol`.
pub fn fixed_point(
    spec: &ModelSpec,
    f: &TestFunction,
    horizon: f64,
    tol: f64,
    max_iter: usize,
    xi0: Option<TransformGrid>,
) -> Result<FixedPoint> {
    let ctx = PhiContext::new(spec, f, horizon)?;
    fixed_point_with(&ctx, tol, max_iter, xi0)
}

pub fn fixed_point_with(ctx: &PhiContext, tol: f64, max_iter: usize, xi0: Option<TransformGrid>) -> Result<FixedPoint> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let mut xi = xi0.unwrap_or_else(|| TransformGrid::constant(ctx.nodes.len(), ctx.n_u, ctx.horizon, 1.0));
    ctx.check(&xi)?;
    let c = ctx.lipschitz_constant();
    let mut log = Vec::new();
    let mut converged = false;
    for n in 1..=max_iter {
        let next = ctx.apply(&xi)?;
        let change = next.sup_distance(&xi);
        xi = next;
        log.push(IterationRecord { iteration: n, sup_change: change, envelope: envelope(c, ctx.horizon, n - 1) });
        if change < tol {
            converged = true;
            break;
        }
    }
    Ok(FixedPoint { eta: xi, log, converged, constant: c })
}

/// `L_Q(f, t) = exp(int_X int_0^t (eta_x(f, u) - 1) lambda_inf(x) du dx)`.
pub fn laplace_of_q(eta: &TransformGrid, spec: &ModelSpec) -> Result<f64> {
    let grid = spec.kernel_grid()?;
    if eta.values.nrows() != grid.len() {
        return Err(Error::Shape(format!("eta has {} rows, the kernel grid {} nodes", eta.values.nrows(), grid.len())));
    }
    let du = eta.step();
    let last = eta.values.ncols() - 1;
    let mut total = 0.0;
    for i in 0..grid.len() {
        let lam = spec.baseline.eval(&grid.midpoint(i));
        if lam == 0.0 {
            continue;
        }
        let row = eta.values.row(i);
        let mut s = 0.5 * ((row[0] - 1.0) + (row[last] - 1.0));
        for j in 1..last {
            s += row[j] - 1.0;
        }
        total += s * du * lam;
    }
    Ok((total * grid.cell_volume()).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub se: f64,
    pub nsim: usize,
}

fn alive_sum(real: &Realization, t: f64, f: &TestFunction) -> f64 {
    real.events
        .iter()
        .filter(|e| e.time <= t && e.lifetime.is_none_or(|l| t < e.time + l))
        .map(|e| f.eval(&e.location))
        .sum()
}

fn mc(values: Vec<f64>) -> McEstimate {
    let nsim = values.len();
    let (estimate, se) = mean_se(&values);
    McEstimate { estimate, se: if se.is_nan() { 0.0 } else { se }, nsim }
}

/// Monte Carlo `eta_x(f, u) = E exp(-sum_{alive at u} f)` over clusters rooted at `(0, x)`.
pub fn mc_transform_oracle(
    spec: &ModelSpec,
    x: &[f64],
    f: &TestFunction,
    u: f64,
    nsim: usize,
    key: StreamKey,
) -> Result<McEstimate> {
    spec.domain.require(x)?;
    if nsim == 0 {
        return Err(Error::InvalidArgument("nsim must be positive".into()));
    }
    let ctx = Offspring::new(spec)?;
    let values = (0..nsim)
        .into_par_iter()
        .map(|i| {
            let c = simulate_cluster(&ctx, x, 0.0, u, key.sub(label::ORACLE, i as u64), ClusterOptions::default())?;
            c.check_complete()?;
            Ok((-alive_sum(&c, u, f)).exp())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mc(values))
}

/// Monte Carlo `E exp(-sum_{alive at t} f)` for the whole process started empty at 0.
pub fn mc_laplace_of_q(spec: &ModelSpec, f: &TestFunction, t: f64, nsim: usize, key: StreamKey) -> Result<McEstimate> {
    if nsim == 0 {
        return Err(Error::InvalidArgument("nsim must be positive".into()));
    }
    let ctx = Offspring::new(spec)?;
    let values = (0..nsim)
        .into_par_iter()
        .map(|i| {
            let real = simulate_process_with(&ctx, t, key.sub(label::ORACLE, i as u64), ClusterOptions::default())?;
            real.check_complete()?;
            if f.profile.is_constant() && spec.lifetimes.is_some() {
                let alive = population_count(&real, t, &Region::Whole)? as f64;
                return Ok((-alive * f.eval(&spec.domain.lower)).exp());
            }
            Ok((-alive_sum(&real, t, f)).exp())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mc(values))
}

#[derive(Debug, Clone, Serialize)]
pub struct InterchangeRow {
    pub d: usize,
    pub l_q: Option<f64>,
    pub difference: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InterchangeReport {
    pub t_large: f64,
    pub l_q: f64,
    /// `int_X int |eta - 1| lambda_inf` over the last tenth of the time grid.
    pub tail_mass: f64,
    pub tol: f64,
    pub rows: Vec<InterchangeRow>,
    /// Differences never grow by more than `tol` from one `d` to the next.
    pub nonincreasing: bool,
}

fn tail_mass(eta: &TransformGrid, spec: &ModelSpec) -> Result<f64> {
    let grid = spec.kernel_grid()?;
    let cols = eta.values.ncols();
    let start = (cols - 1) * 9 / 10;
    let du = eta.step();
    let mut total = 0.0;
    for i in 0..grid.len() {
        let lam = spec.baseline.eval(&grid.midpoint(i));
        let row = eta.values.row(i);
        let s: f64 = (start..cols - 1).map(|j| 0.5 * ((row[j] - 1.0).abs() + (row[j + 1] - 1.0).abs())).sum();
        total += s * du * lam;
    }
    Ok(total * grid.cell_volume())
}

pub fn interchange_experiment(
    spec: &ModelSpec,
    d_list: &[usize],
    f: &TestFunction,
    t_large: f64,
    tol: f64,
) -> Result<InterchangeReport> {
    let continuum = fixed_point(spec, f, t_large, tol, DEFAULT_MAX_ITER, None)?;
    continuum.require_converged()?;
    let l_q = laplace_of_q(&continuum.eta, spec)?;
    let tail = tail_mass(&continuum.eta, spec)?;
    let rows: Vec<InterchangeRow> = d_list
        .iter()
        .map(|&d| {
            let attempt = || -> Result<f64> {
                let part = build_partition(&spec.domain, d, &PartitionScheme::UniformDyadic)?;
                let avg = average_model(spec, &part)?;
                let rho = spectral_radius(&avg.cell_kernel()?, crate::operators::DEFAULT_MAX_POWER)?.best();
                if rho >= 1.0 {
                    return Err(Error::PrelimitUnstable(format!("d = {d}: spectral radius {rho}")));
                }
                let fp = fixed_point(&avg.model, f, t_large, tol, DEFAULT_MAX_ITER, None)?;
                fp.require_converged()?;
                laplace_of_q(&fp.eta, &avg.model)
            };
            match attempt() {
                Ok(v) => InterchangeRow { d, l_q: Some(v), difference: Some((v - l_q).abs()), error: None },
                Err(e) => InterchangeRow { d, l_q: None, difference: None, error: Some(e.to_string()) },
            }
        })
        .collect();
    let diffs: Vec<f64> = rows.iter().filter_map(|r| r.difference).collect();
    let nonincreasing = diffs.len() == rows.len() && diffs.windows(2).all(|w| w[1] <= w[0] + tol);
    Ok(InterchangeReport { t_large, l_q, tail_mass: tail, tol, rows, nonincreasing })
}
