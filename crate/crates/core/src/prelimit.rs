//! Finite-dimensional approximations by partition averaging, quenched edge
//! sampling, and coupled simulation against the continuum process.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::cluster_sim::{merge_clusters, Event, Offspring, Realization, DEFAULT_EVENT_CAP};
use crate::domain::{CellGrid, Interpolation, Point, SpatialDomain, UniformGrid};
use crate::error::{Error, Result};
use crate::metrics::{pp_distance, Matching};
use crate::model::{MarkModel, ModelSpec, PairFunction, Profile};
use crate::operators::{discretize_kernel, spectral_radius, KernelGrid, DEFAULT_MAX_POWER};
use crate::rng::{label, SimRng, StreamKey};

/// Relative gap below which two cell masses or densities count as equal.
const SNAP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionScheme {
    /// `n` cells per axis when `d = n^m`, otherwise repeated halving of the
    /// axes in turn (requires `d` to be a power of two).
    UniformDyadic,
    PerAxisCounts(Vec<usize>),
}

/// Uniform box partition of the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub grid: UniformGrid,
}

impl Partition {
    pub fn d(&self) -> usize {
        self.grid.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.grid.counts
    }

    /// Largest cell diameter.
    pub fn mesh(&self) -> f64 {
        (0..self.grid.dim()).map(|a| self.grid.spacing(a).powi(2)).sum::<f64>().sqrt()
    }

    pub fn cells(&self) -> Vec<(Point, Point)> {
        (0..self.d()).map(|i| self.grid.cell_bounds(i)).collect()
    }

    pub fn cell_of(&self, x: &[f64]) -> usize {
        self.grid.cell_of(x)
    }

    pub fn cell_volume(&self) -> f64 {
        self.grid.cell_volume()
    }
}

fn integer_root(d: usize, m: u32) -> Option<usize> {
    let guess = (d as f64).powf(1.0 / m as f64).round() as usize;
    (guess.saturating_sub(1)..=guess + 1).find(|n| *n > 0 && n.checked_pow(m) == Some(d))
}

pub fn build_partition(domain: &SpatialDomain, d: usize, scheme: &PartitionScheme) -> Result<Partition> {
    domain.check()?;
    let m = domain.dim();
    if d == 0 {
        return Err(Error::BadCellCount("a partition needs at least one cell".into()));
    }
    let counts = match scheme {
        PartitionScheme::UniformDyadic => {
            if let Some(n) = integer_root(d, m as u32) {
                vec![n; m]
            } else if d.is_power_of_two() {
                let mut counts = vec![1usize; m];
                for k in 0..d.trailing_zeros() as usize {
                    counts[k % m] *= 2;
                }
                counts
            } else {
                return Err(Error::BadCellCount(format!(
                    "{d} cells is neither a perfect {m}-th power nor a power of two"
                )));
            }
        }
        PartitionScheme::PerAxisCounts(c) => {
            if c.len() != m || c.contains(&0) || c.iter().product::<usize>() != d {
                return Err(Error::BadCellCount(format!(
                    "per-axis counts {c:?} do not multiply to {d} in {m} dimensions"
                )));
            }
            c.clone()
        }
    };
    Ok(Partition { grid: UniformGrid::new(domain.clone(), counts)? })
}

#[derive(Debug, Clone)]
pub struct AveragedModel {
    pub base: ModelSpec,
    pub partition: Partition,
    pub lambda_cell: Vec<f64>,
    /// `d x d`, row = child (x) cell, column = parent (y) cell.
    pub w_cell: DMatrix<f64>,
    pub b_cell: DMatrix<f64>,
    /// The piecewise-constant model itself.
    pub model: ModelSpec,
}

/// Sub-cell midpoints of partition cell `k`, `r` per axis.
fn sub_points(part: &Partition, k: usize, r: usize) -> Vec<Point> {
    let (lo, hi) = part.grid.cell_bounds(k);
    let local = UniformGrid { domain: SpatialDomain { lower: lo, upper: hi }, counts: vec![r; part.grid.dim()] };
    local.midpoints()
}

/// Mean of samples; exact when all samples coincide.
fn snapped_mean(vals: &[f64]) -> f64 {
    let first = vals[0];
    if vals.iter().all(|v| *v == first) {
        first
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

fn cell_grid(domain: &SpatialDomain, counts: Vec<usize>, values: Vec<f64>, pair: bool) -> CellGrid {
    let (mut lower, mut upper) = (domain.lower.clone(), domain.upper.clone());
    if pair {
        lower.extend_from_slice(&domain.lower);
        upper.extend_from_slice(&domain.upper);
    }
    CellGrid { lower, upper, counts, values, interpolation: Interpolation::PiecewiseConstant }
}

/// Cell averages of `lambda_inf`, `W` and `b` by aligned midpoint quadrature
/// at the model's kernel resolution.
pub fn average_model(spec: &ModelSpec, part: &Partition) -> Result<AveragedModel> {
    if part.grid.domain != spec.domain {
        return Err(Error::DomainMismatch("partition and model live on different domains".into()));
    }
    let n = spec.resolution.kernel_n;
    if part.counts().iter().any(|c| *c > n) {
        return Err(Error::ResolutionTooCoarse(format!(
            "kernel resolution {n} per axis is coarser than the partition {:?}",
            part.counts()
        )));
    }
    let r = part.counts().iter().map(|c| n.div_ceil(*c)).max().unwrap_or(1).max(1);
    let d = part.d();
    let pts: Vec<Vec<Point>> = (0..d).map(|k| sub_points(part, k, r)).collect();

    let lambda_cell: Vec<f64> =
        pts.iter().map(|p| snapped_mean(&p.iter().map(|x| spec.baseline.eval(x)).collect::<Vec<_>>())).collect();
    let pair_avg = |f: &dyn Fn(&[f64], &[f64]) -> f64| -> DMatrix<f64> {
        let mut out = DMatrix::zeros(d, d);
        for j in 0..d {
            for k in 0..d {
                let vals: Vec<f64> = pts[j].iter().flat_map(|x| pts[k].iter().map(move |y| f(x, y))).collect();
                out[(j, k)] = snapped_mean(&vals);
            }
        }
        out
    };
    let w_cell = pair_avg(&|x, y| spec.graphon.eval(x, y));
    let b_cell = match &spec.marks {
        MarkModel::Unmarked => DMatrix::from_element(d, d, 1.0),
        MarkModel::ScaledProfile { profile, .. } => pair_avg(&|x, y| profile.eval(x, y)),
    };

    let counts = part.counts().to_vec();
    let pair_counts: Vec<usize> = counts.iter().chain(counts.iter()).copied().collect();
    let row_major = |m: &DMatrix<f64>| -> Vec<f64> { (0..d).flat_map(|j| (0..d).map(move |k| m[(j, k)])).collect() };
    let mut model = spec.clone();
    model = model.with_baseline(Profile::Grid(cell_grid(&spec.domain, counts, lambda_cell.clone(), false)));
    let c_w = spec.graphon.c_w;
    let symmetric = spec.graphon.symmetric;
    model =
        model.with_graphon(PairFunction::Grid(cell_grid(&spec.domain, pair_counts.clone(), row_major(&w_cell), true)));
    model.graphon.c_w = model.graphon.c_w.min(c_w);
    model.graphon.symmetric = symmetric;
    if let MarkModel::ScaledProfile { factor, .. } = &spec.marks {
        model.marks = MarkModel::ScaledProfile {
            profile: PairFunction::Grid(cell_grid(&spec.domain, pair_counts, row_major(&b_cell), true)),
            factor: factor.clone(),
        };
    }
    Ok(AveragedModel { base: spec.clone(), partition: part.clone(), lambda_cell, w_cell, b_cell, model })
}

impl AveragedModel {
    /// Exact operator of the piecewise-constant model on its own cells.
    pub fn cell_kernel(&self) -> Result<KernelGrid> {
        let scale =
            self.model.excitation.l1_norm() * self.model.marks.factor().mean() * self.model.nonlinearity.lipschitz();
        let d = self.partition.d();
        let values = DMatrix::from_fn(d, d, |j, k| scale * self.b_cell[(j, k)] * self.w_cell[(j, k)]);
        KernelGrid::from_matrix(self.partition.grid.clone(), values)
    }

    /// `C_W` of the averaged graphon.
    pub fn c_w(&self) -> f64 {
        self.w_cell.iter().cloned().fold(0.0, f64::max)
    }

    /// Factor applied when edge probabilities are `W / C_W` (1 when `C_W <= 1`).
    pub fn quench_rescale(&self) -> f64 {
        self.c_w().max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuenchedGraph {
    /// `d x d` adjacency, row = child cell, column = parent cell.
    pub z: DMatrix<u8>,
    pub source_w: DMatrix<f64>,
    /// `C_W` divided out of the edge probabilities and multiplied into the marks.
    pub rescale: f64,
    pub seed: u64,
}

pub fn sample_quenched_graph(avg: &AveragedModel, key: StreamKey) -> QuenchedGraph {
    let rescale = avg.quench_rescale();
    let d = avg.partition.d();
    let mut rng = key.child(label::GRAPH).rng();
    let mut z = DMatrix::zeros(d, d);
    for j in 0..d {
        for k in 0..d {
            z[(j, k)] = (rng.random::<f64>() < avg.w_cell[(j, k)] / rescale) as u8;
        }
    }
    QuenchedGraph { z, source_w: avg.w_cell.clone(), rescale, seed: key.raw() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingMode {
    Annealed,
    Quenched,
}

impl std::fmt::Display for CouplingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CouplingMode::Annealed => "annealed",
            CouplingMode::Quenched => "quenched",
        })
    }
}

#[derive(Debug, Clone, Copy)]
enum CountLaw {
    Poisson(f64),
    /// `(1 - w) delta_0 + w Poisson(mu)`
    Mixture {
        w: f64,
        mu: f64,
    },
}

fn poisson_pmf(mu: f64, k: u64) -> f64 {
    if mu == 0.0 {
        return (k == 0) as u8 as f64;
    }
    (k as f64 * mu.ln() - mu - ln_gamma(k as f64 + 1.0)).exp()
}

fn sample_poisson(rng: &mut SimRng, mu: f64) -> u64 {
    if mu <= 0.0 {
        0
    } else {
        Poisson::new(mu).expect("finite positive mean").sample(rng) as u64
    }
}

impl CountLaw {
    fn pmf(&self, k: u64) -> f64 {
        match *self {
            CountLaw::Poisson(mu) => poisson_pmf(mu, k),
            CountLaw::Mixture { w, mu } => w * poisson_pmf(mu, k) + if k == 0 { 1.0 - w } else { 0.0 },
        }
    }

    fn sample(&self, rng: &mut SimRng) -> u64 {
        match *self {
            CountLaw::Poisson(mu) => sample_poisson(rng, mu),
            CountLaw::Mixture { w, mu } => {
                if rng.random::<f64>() < w {
                    sample_poisson(rng, mu)
                } else {
                    0
                }
            }
        }
    }

    fn is_degenerate_zero(&self) -> bool {
        match *self {
            CountLaw::Poisson(mu) => mu == 0.0,
            CountLaw::Mixture { w, mu } => w == 0.0 || mu == 0.0,
        }
    }
}

/// Maximal coupling: `P(X != Y)` equals the total variation distance.
fn maximal_coupling(rng: &mut SimRng, p: CountLaw, q: CountLaw) -> (u64, u64) {
    if p.is_degenerate_zero() && q.is_degenerate_zero() {
        return (0, 0);
    }
    let x = p.sample(rng);
    if rng.random::<f64>() * p.pmf(x) < q.pmf(x) {
        return (x, x);
    }
    loop {
        let y = q.sample(rng);
        if rng.random::<f64>() * q.pmf(y) >= p.pmf(y) {
            return (x, y);
        }
    }
}

fn snap(a: f64, b: f64) -> f64 {
    if (a - b).abs() <= SNAP * a.abs().max(b.abs()) {
        b
    } else {
        a
    }
}

/// Continuum density values restricted to each partition cell, with the
/// location-grid cells that make them up.
struct CellSlices {
    /// For each partition cell, the location-grid cell indices inside it.
    members: Vec<Vec<usize>>,
}

impl CellSlices {
    fn new(loc: &UniformGrid, part: &Partition) -> Result<Self> {
        for (a, (n, c)) in loc.counts.iter().zip(part.counts()).enumerate() {
            if n % c != 0 {
                return Err(Error::ResolutionTooCoarse(format!(
                    "location grid ({n} cells on axis {a}) does not refine the partition ({c} cells)"
                )));
            }
        }
        let mut members = vec![Vec::new(); part.d()];
        for i in 0..loc.len() {
            members[part.cell_of(&loc.midpoint(i))].push(i);
        }
        Ok(CellSlices { members })
    }
}

/// Summary of one partition cell of a continuum density.
struct Restricted<'a> {
    values: &'a [f64],
    members: &'a [usize],
    mass: f64,
    sup: f64,
    flat: bool,
}

impl<'a> Restricted<'a> {
    fn new(values: &'a [f64], members: &'a [usize], vol: f64) -> Self {
        let mut mass = 0.0;
        let (mut sup, mut inf) = (0.0f64, f64::INFINITY);
        for &i in members {
            mass += values[i];
            sup = sup.max(values[i]);
            inf = inf.min(values[i]);
        }
        Restricted { values, members, mass: mass * vol, sup, flat: sup - inf <= SNAP * sup }
    }
}

/// Outcome of one coupled replication.
#[derive(Debug, Clone)]
pub struct CoupledPair {
    pub continuum: Realization,
    pub prelimit: Realization,
    pub shared: usize,
    /// No partition cell received two prelimit events.
    pub one_event_per_cell: bool,
}

impl CoupledPair {
    /// Shared events over all events of both realizations, counting a pair once.
    pub fn shared_fraction(&self) -> f64 {
        let total = self.continuum.len() + self.prelimit.len() - self.shared;
        if total == 0 {
            1.0
        } else {
            self.shared as f64 / total as f64
        }
    }
}

/// Checked once per `(model, partition, mode)`; replications are cheap.
pub struct CoupledSimulator<'a> {
    pub spec: &'a ModelSpec,
    pub averaged: AveragedModel,
    pub mode: CouplingMode,
    pub frozen_graph: Option<QuenchedGraph>,
    pub event_cap: usize,
    pub rho_continuum: f64,
    pub rho_prelimit: f64,
    ctx: Offspring<'a>,
    slices: CellSlices,
    base_values: Vec<f64>,
}

enum Item {
    Shared(usize, usize),
    Continuum(usize),
    Prelimit(usize),
}

struct Run<'s, 'a> {
    sim: &'s CoupledSimulator<'a>,
    rng: SimRng,
    horizon: f64,
    cont: Vec<Event>,
    pre: Vec<Event>,
    queue: std::collections::VecDeque<Item>,
    edges: Vec<Option<bool>>,
    next_shared: u64,
    truncated: bool,
}

impl<'a> CoupledSimulator<'a> {
    pub fn new(spec: &'a ModelSpec, part: &Partition, mode: CouplingMode) -> Result<Self> {
        if !spec.is_linear() {
            return Err(Error::RequiresThinning);
        }
        let averaged = average_model(spec, part)?;
        let k = discretize_kernel(spec, spec.resolution.kernel_n)?;
        let rho_continuum = spectral_radius(&k, DEFAULT_MAX_POWER)?.best();
        if rho_continuum >= 1.0 {
            return Err(Error::UnstableModel(format!("continuum spectral radius {rho_continuum} >= 1")));
        }
        let rho_prelimit = spectral_radius(&averaged.cell_kernel()?, DEFAULT_MAX_POWER)?.best();
        if rho_prelimit >= 1.0 {
            return Err(Error::PrelimitUnstable(format!(
                "averaged model with d = {} has spectral radius {rho_prelimit}",
                part.d()
            )));
        }
        let ctx = Offspring::new(spec)?;
        let slices = CellSlices::new(&ctx.grid, part)?;
        let base_values = (0..ctx.grid.len()).map(|i| spec.baseline.eval(&ctx.grid.midpoint(i))).collect();
        Ok(CoupledSimulator {
            spec,
            averaged,
            mode,
            frozen_graph: None,
            event_cap: DEFAULT_EVENT_CAP,
            rho_continuum,
            rho_prelimit,
            ctx,
            slices,
            base_values,
        })
    }

    /// Uses one fixed graph for every replication instead of resampling.
    pub fn freeze_graph(mut self, key: StreamKey) -> Self {
        self.frozen_graph = Some(sample_quenched_graph(&self.averaged, key));
        self
    }

    /// The prelimit model as seen by the metric (marks carry the quench rescale).
    pub fn prelimit_spec(&self) -> ModelSpec {
        let mut m = self.averaged.model.clone();
        let r = self.averaged.quench_rescale();
        if self.mode == CouplingMode::Quenched && r > 1.0 {
            let d = self.averaged.partition.d();
            let counts: Vec<usize> =
                self.averaged.partition.counts().iter().chain(self.averaged.partition.counts()).copied().collect();
            let vals = (0..d)
                .flat_map(|j| (0..d).map(move |k| (j, k)))
                .map(|(j, k)| r * self.averaged.b_cell[(j, k)])
                .collect();
            m.marks = MarkModel::ScaledProfile {
                profile: PairFunction::Grid(cell_grid(&m.domain, counts, vals, true)),
                factor: m.marks.factor(),
            };
        }
        m
    }

    pub fn simulate(&self, horizon: f64, key: StreamKey) -> Result<CoupledPair> {
        if !(horizon >= 0.0) || horizon.is_infinite() {
            return Err(Error::InvalidArgument(format!("horizon must be finite and nonnegative, got {horizon}")));
        }
        let d = self.averaged.partition.d();
        let edges = match (&self.mode, &self.frozen_graph) {
            (CouplingMode::Quenched, Some(g)) => (0..d * d).map(|i| Some(g.z[(i / d, i % d)] == 1)).collect(),
            _ => vec![None; d * d],
        };
        let mut run = Run {
            sim: self,
            rng: key.child(label::COUPLING).rng(),
            horizon,
            cont: Vec::new(),
            pre: Vec::new(),
            queue: Default::default(),
            edges,
            next_shared: 0,
            truncated: false,
        };
        run.immigrants()?;
        while let Some(item) = run.queue.pop_front() {
            if run.truncated {
                break;
            }
            run.offspring(item)?;
        }
        let shared = run.next_shared as usize;
        let mut cells = vec![0u32; d];
        for e in &run.pre {
            cells[self.averaged.partition.cell_of(&e.location)] += 1;
        }
        let truncated = run.truncated;
        let continuum = merge_clusters(vec![run.cont], horizon, key.raw(), truncated);
        let prelimit = merge_clusters(vec![run.pre], horizon, key.raw(), truncated);
        Ok(CoupledPair { continuum, prelimit, shared, one_event_per_cell: cells.iter().all(|c| *c <= 1) })
    }
}

impl Run<'_, '_> {
    fn life(&mut self) -> Option<f64> {
        let l = self.sim.spec.lifetimes.clone();
        l.map(|l| l.sample(&mut self.rng))
    }

    fn push(&mut self, continuum: bool, mut e: Event) -> usize {
        let target = if continuum { &mut self.cont } else { &mut self.pre };
        e.id = target.len() as u64;
        target.push(e);
        if self.cont.len() + self.pre.len() >= 2 * self.sim.event_cap {
            self.truncated = true;
        }
        if continuum {
            self.cont.len() - 1
        } else {
            self.pre.len() - 1
        }
    }

    fn uniform_in_cell(&mut self, cell: usize, u: Option<&[f64]>) -> Point {
        let (lo, hi) = self.sim.averaged.partition.grid.cell_bounds(cell);
        (0..lo.len())
            .map(|a| {
                let v = u.map_or_else(|| self.rng.random::<f64>(), |u| u[a]);
                lo[a] + v * (hi[a] - lo[a])
            })
            .collect()
    }

    /// Continuum location inside `cell` from the restricted density; with
    /// `common` variates it is coupled to the uniform prelimit location.
    fn continuum_in_cell(&mut self, r: &Restricted, cell: usize, common: &[f64]) -> Point {
        let m = common.len();
        if r.flat {
            return self.uniform_in_cell(cell, Some(common));
        }
        let grid = &self.sim.ctx.grid;
        if m == 1 {
            let target = common[0] * r.mass / grid.cell_volume();
            let mut acc = 0.0;
            let h = grid.spacing(0);
            let mut last_positive = r.members[0];
            for &i in r.members {
                let v = r.values[i];
                if v > 0.0 {
                    last_positive = i;
                }
                if v > 0.0 && acc + v > target {
                    let lo = grid.domain.lower[0] + i as f64 * h;
                    return vec![(lo + (target - acc) / v * h).min(lo + h)];
                }
                acc += v;
            }
            return vec![grid.domain.lower[0] + (last_positive + 1) as f64 * h];
        }
        // shared proposals: the first one is the prelimit location
        let mut u = common.to_vec();
        loop {
            let x = self.uniform_in_cell(cell, Some(&u));
            if self.rng.random::<f64>() * r.sup < r.values[grid.cell_of(&x)] {
                return x;
            }
            for v in u.iter_mut() {
                *v = self.rng.random();
            }
        }
    }

    fn common_uniforms(&mut self) -> Vec<f64> {
        (0..self.sim.spec.dim()).map(|_| self.rng.random()).collect()
    }

    fn immigrants(&mut self) -> Result<()> {
        let sim = self.sim;
        let t = self.horizon;
        let vol = sim.ctx.grid.cell_volume();
        let factor = sim.spec.marks.factor();
        for k in 0..sim.averaged.partition.d() {
            let r = Restricted::new(&sim.base_values, &sim.slices.members[k], vol);
            let mu_p = t * sim.averaged.lambda_cell[k] * sim.averaged.partition.cell_volume();
            let mu_c = snap(t * r.mass, mu_p);
            let (nc, np) = maximal_coupling(&mut self.rng, CountLaw::Poisson(mu_c), CountLaw::Poisson(mu_p));
            let both = nc.min(np);
            for i in 0..nc.max(np) {
                let time = t * (1.0 - self.rng.random::<f64>());
                let xi = factor.sample(&mut self.rng);
                let life = self.life();
                let template = Event {
                    id: 0,
                    time,
                    location: Vec::new(),
                    generation: 0,
                    parent_id: None,
                    mark_scalar: xi,
                    lifetime: life,
                    shared: None,
                };
                if i < both {
                    let u = self.common_uniforms();
                    let yc = self.continuum_in_cell(&r, k, &u);
                    let yp = self.uniform_in_cell(k, Some(&u));
                    let tag = Some(self.next_shared);
                    self.next_shared += 1;
                    let a = self.push(true, Event { location: yc, shared: tag, ..template.clone() });
                    let b = self.push(false, Event { location: yp, shared: tag, ..template });
                    self.queue.push_back(Item::Shared(a, b));
                } else if i < nc {
                    let u = self.common_uniforms();
                    let yc = self.continuum_in_cell(&r, k, &u);
                    let a = self.push(true, Event { location: yc, ..template });
                    self.queue.push_back(Item::Continuum(a));
                } else {
                    let yp = self.uniform_in_cell(k, None);
                    let b = self.push(false, Event { location: yp, ..template });
                    self.queue.push_back(Item::Prelimit(b));
                }
            }
        }
        Ok(())
    }

    /// Prelimit child-count law from parent cell `k` into cell `j`.
    fn prelimit_law(&self, j: usize, k: usize, scale: f64) -> CountLaw {
        let avg = &self.sim.averaged;
        let vol = avg.partition.cell_volume();
        match self.sim.mode {
            CouplingMode::Annealed => CountLaw::Poisson(scale * vol * avg.b_cell[(j, k)] * avg.w_cell[(j, k)]),
            CouplingMode::Quenched => {
                let r = avg.quench_rescale();
                let mu = scale * vol * r * avg.b_cell[(j, k)];
                match self.edges[j * avg.partition.d() + k] {
                    Some(true) => CountLaw::Poisson(mu),
                    Some(false) => CountLaw::Poisson(0.0),
                    None => CountLaw::Mixture { w: avg.w_cell[(j, k)] / r, mu },
                }
            }
        }
    }

    /// Reveals an unrevealed edge from the observed prelimit count.
    fn reveal(&mut self, j: usize, k: usize, law: CountLaw, count: u64) {
        let d = self.sim.averaged.partition.d();
        if let CountLaw::Mixture { w, mu } = law {
            let z = if count > 0 {
                true
            } else {
                let on = w * (-mu).exp();
                self.rng.random::<f64>() * (1.0 - w + on) < on
            };
            self.edges[j * d + k] = Some(z);
        }
    }

    fn child_template(&mut self, parent_time: f64, window: f64, generation: u32, parent: usize) -> Event {
        let h = &self.sim.spec.excitation;
        let u = 1.0 - self.rng.random::<f64>();
        let time = (parent_time + h.delay_quantile(window, u).max(f64::MIN_POSITIVE)).min(self.horizon);
        let xi = self.sim.spec.marks.factor().sample(&mut self.rng);
        let life = self.life();
        Event {
            id: 0,
            time,
            location: Vec::new(),
            generation,
            parent_id: Some(parent as u64),
            mark_scalar: xi,
            lifetime: life,
            shared: None,
        }
    }

    fn offspring(&mut self, item: Item) -> Result<()> {
        let sim = self.sim;
        let (t, xi, generation, cont_parent, pre_parent) = match item {
            Item::Shared(a, b) => {
                (self.cont[a].time, self.cont[a].mark_scalar, self.cont[a].generation, Some(a), Some(b))
            }
            Item::Continuum(a) => (self.cont[a].time, self.cont[a].mark_scalar, self.cont[a].generation, Some(a), None),
            Item::Prelimit(b) => (self.pre[b].time, self.pre[b].mark_scalar, self.pre[b].generation, None, Some(b)),
        };
        let window = self.horizon - t;
        if window <= 0.0 || xi == 0.0 {
            return Ok(());
        }
        let scale = xi * sim.spec.excitation.integrated(window)?;
        let vol = sim.ctx.grid.cell_volume();
        let column = cont_parent.map(|a| sim.ctx.column(&self.cont[a].location));
        let parent_cell = pre_parent.map(|b| sim.averaged.partition.cell_of(&self.pre[b].location));
        let empty: Vec<f64> = Vec::new();
        for j in 0..sim.averaged.partition.d() {
            let restricted = column.as_ref().map(|c| match &c.density {
                Some(dens) => Restricted::new(&dens.values, &sim.slices.members[j], vol),
                None => Restricted::new(&empty, &[], vol),
            });
            let law_p = parent_cell.map(|k| self.prelimit_law(j, k, scale));
            let mu_c = restricted.as_ref().map(|r| scale * r.mass);
            let (nc, np) = match (mu_c, law_p) {
                (Some(mc), Some(lp)) => {
                    let mc = match lp {
                        CountLaw::Poisson(mp) => snap(mc, mp),
                        _ => mc,
                    };
                    maximal_coupling(&mut self.rng, CountLaw::Poisson(mc), lp)
                }
                (Some(mc), None) => (sample_poisson(&mut self.rng, mc), 0),
                (None, Some(lp)) => (0, lp.sample(&mut self.rng)),
                (None, None) => unreachable!(),
            };
            if let (Some(k), Some(lp)) = (parent_cell, law_p) {
                self.reveal(j, k, lp, np);
            }
            let both = nc.min(np);
            for i in 0..nc.max(np) {
                if self.truncated {
                    return Ok(());
                }
                let parent_idx = cont_parent.or(pre_parent).unwrap();
                let template = self.child_template(t, window, generation + 1, parent_idx);
                if i < both {
                    let u = self.common_uniforms();
                    let r = restricted.as_ref().unwrap();
                    let yc = self.continuum_in_cell(r, j, &u);
                    let yp = self.uniform_in_cell(j, Some(&u));
                    let tag = Some(self.next_shared);
                    self.next_shared += 1;
                    let a = self.push(
                        true,
                        Event {
                            location: yc,
                            shared: tag,
                            parent_id: cont_parent.map(|p| p as u64),
                            ..template.clone()
                        },
                    );
                    let b = self.push(
                        false,
                        Event { location: yp, shared: tag, parent_id: pre_parent.map(|p| p as u64), ..template },
                    );
                    self.queue.push_back(Item::Shared(a, b));
                } else if i < nc {
                    let u = self.common_uniforms();
                    let r = restricted.as_ref().unwrap();
                    let yc = self.continuum_in_cell(r, j, &u);
                    let a =
                        self.push(true, Event { location: yc, parent_id: cont_parent.map(|p| p as u64), ..template });
                    self.queue.push_back(Item::Continuum(a));
                } else {
                    let yp = self.uniform_in_cell(j, None);
                    let b =
                        self.push(false, Event { location: yp, parent_id: pre_parent.map(|p| p as u64), ..template });
                    self.queue.push_back(Item::Prelimit(b));
                }
            }
        }
        Ok(())
    }
}

/// One coupled replication; see [`CoupledSimulator`] for repeated use.
pub fn simulate_coupled(
    spec: &ModelSpec,
    part: &Partition,
    horizon: f64,
    mode: CouplingMode,
    key: StreamKey,
) -> Result<CoupledPair> {
    CoupledSimulator::new(spec, part, mode)?.simulate(horizon, key)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergeRow {
    pub d: usize,
    pub mode: CouplingMode,
    pub rep: usize,
    pub distance: f64,
    pub shared_fraction: f64,
    pub one_event_per_cell: bool,
}

/// Coupled distances `d(N, N^d)` for every `d`, with replication `r` using
/// the same stream for every `d`.
pub fn convergence_experiment(
    spec: &ModelSpec,
    d_list: &[usize],
    mode: CouplingMode,
    horizon: f64,
    reps: usize,
    key: StreamKey,
    freeze_graph: bool,
) -> Result<Vec<ConvergeRow>> {
    let mut rows = Vec::with_capacity(d_list.len() * reps);
    for &d in d_list {
        let part = build_partition(&spec.domain, d, &PartitionScheme::UniformDyadic)?;
        let mut sim = CoupledSimulator::new(spec, &part, mode)?;
        if freeze_graph && mode == CouplingMode::Quenched {
            sim = sim.freeze_graph(key.child(label::GRAPH));
        }
        let pre_spec = sim.prelimit_spec();
        let batch = (0..reps)
            .into_par_iter()
            .map(|r| {
                let pair = sim.simulate(horizon, key.sub(label::REPLICATIONS, r as u64))?;
                let dist = pp_distance(spec, &pair.continuum, &pre_spec, &pair.prelimit, Matching::SharedIds)?;
                Ok(ConvergeRow {
                    d,
                    mode,
                    rep: r,
                    distance: dist.total,
                    shared_fraction: pair.shared_fraction(),
                    one_event_per_cell: pair.one_event_per_cell,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.extend(batch);
    }
    Ok(rows)
}
