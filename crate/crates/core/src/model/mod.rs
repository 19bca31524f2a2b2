//! Parameterization of a graphon Hawkes process.

mod config;
mod excitation;
mod functions;
mod marks;

pub use config::{load_model_file, parse_model, read_csv, ModelConfig};
pub use excitation::ExcitationKernel;
pub use functions::{ColumnKey, Graphon, PairFunction, Profile};
pub use marks::{LifetimeModel, MarkModel, Nonlinearity, ScalarLaw};

use crate::domain::{SpatialDomain, UniformGrid};
use crate::error::{Error, Result};

/// Grid sizes used by numerics and samplers.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    /// Kernel quadrature nodes per axis.
    pub kernel_n: usize,
    /// Location-density cells per axis.
    pub location_n: usize,
    /// Cap on kernel matrix entries.
    pub grid_cap: usize,
    /// Points on the elapsed-time grid of transform solvers.
    pub n_u: usize,
}

impl Resolution {
    pub fn for_dim(m: usize) -> Self {
        let (kernel_n, location_n) = match m {
            1 => (256, 1024),
            2 => (32, 128),
            _ => (8, 16),
        };
        Resolution { kernel_n, location_n, grid_cap: 1 << 24, n_u: 256 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub domain: SpatialDomain,
    /// `lambda_inf`
    pub baseline: Profile,
    /// Total baseline mass.
    pub alpha: f64,
    pub baseline_tv: Option<f64>,
    pub graphon: Graphon,
    pub excitation: ExcitationKernel,
    pub marks: MarkModel,
    pub lifetimes: Option<LifetimeModel>,
    pub nonlinearity: Nonlinearity,
    pub resolution: Resolution,
}

impl ModelSpec {
    pub fn new(domain: SpatialDomain, baseline: Profile, graphon: PairFunction, excitation: ExcitationKernel) -> Self {
        let alpha = baseline.integral(&domain);
        let graphon = Graphon::new(graphon, &domain);
        let resolution = Resolution::for_dim(domain.dim());
        ModelSpec {
            domain,
            baseline,
            alpha,
            baseline_tv: None,
            graphon,
            excitation,
            marks: MarkModel::Unmarked,
            lifetimes: None,
            nonlinearity: Nonlinearity::Identity,
            resolution,
        }
    }

    /// Unit interval, constant baseline `mu`, constant graphon `w`, `h(t) = e^{-t}`.
    pub fn constant(mu: f64, w: f64) -> Self {
        ModelSpec::new(
            SpatialDomain::unit(1),
            Profile::Constant(mu),
            PairFunction::Constant(w),
            ExcitationKernel::exponential(1.0),
        )
    }

    pub fn with_marks(mut self, marks: MarkModel) -> Self {
        self.marks = marks;
        self
    }

    pub fn with_lifetimes(mut self, lifetimes: LifetimeModel) -> Self {
        self.lifetimes = Some(lifetimes);
        self
    }

    pub fn with_nonlinearity(mut self, f: Nonlinearity) -> Self {
        self.nonlinearity = f;
        self
    }

    pub fn with_baseline(mut self, baseline: Profile) -> Self {
        self.alpha = baseline.integral(&self.domain);
        self.baseline = baseline;
        self
    }

    pub fn with_graphon(mut self, w: PairFunction) -> Self {
        self.graphon = Graphon::new(w, &self.domain);
        self
    }

    pub fn with_excitation(mut self, h: ExcitationKernel) -> Self {
        self.excitation = h;
        self
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn is_linear(&self) -> bool {
        self.nonlinearity.is_identity()
    }

    pub fn c_b(&self) -> f64 {
        self.marks.c_b(&self.domain)
    }

    /// `b(x, y) W(x, y)`: the offspring density at `x` of a parent at `y`, per unit mark factor.
    pub fn offspring_profile(&self, x: &[f64], y: &[f64]) -> f64 {
        self.marks.profile(x, y) * self.graphon.eval(x, y)
    }

    /// `c_x E[B_xy] W(x, y)` without domain checks.
    pub fn kernel_density(&self, x: &[f64], y: &[f64]) -> f64 {
        self.nonlinearity.lipschitz() * self.marks.mean(x, y) * self.graphon.eval(x, y)
    }

    /// Standard kernel quadrature grid.
    pub fn kernel_grid(&self) -> Result<UniformGrid> {
        UniformGrid::cubic(&self.domain, self.resolution.kernel_n)
    }

    pub fn location_grid(&self) -> Result<UniformGrid> {
        UniformGrid::cubic(&self.domain, self.resolution.location_n)
    }

    /// Short stable fingerprint of the parameterization.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = Sha256::digest(format!("{self:?}").as_bytes());
        bytes.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// `c_x E[B_xy] W(x, y)` with both points checked against the domain.
pub fn eval_kernel_density(spec: &ModelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.domain.require(x)?;
    spec.domain.require(y)?;
    Ok(spec.kernel_density(x, y))
}

pub fn integrated_excitation(h: &ExcitationKernel, u: f64) -> Result<f64> {
    h.integrated(u)
}

fn probe_points(domain: &SpatialDomain) -> Vec<Vec<f64>> {
    let per_axis = match domain.dim() {
        1 => 64,
        2 => 12,
        _ => 4,
    };
    let grid = UniformGrid::cubic(domain, per_axis).expect("domain already checked");
    let mut pts = grid.midpoints();
    pts.extend((0..grid.vertex_count()).map(|i| grid.vertex(i)));
    pts
}

fn profile_dims_ok(p: &Profile, m: usize) -> bool {
    match p {
        Profile::Constant(_) => true,
        Profile::Affine { slopes, .. } => slopes.len() == m,
        Profile::Monomial { powers, .. } => powers.len() == m,
        Profile::Indicator { lower, upper, .. } => lower.len() == m && upper.len() == m,
        Profile::Grid(g) => g.counts.len() == m && g.check().is_ok(),
    }
}

fn pair_dims_ok(p: &PairFunction, m: usize) -> bool {
    match p {
        PairFunction::Constant(_) => true,
        PairFunction::RankOne { profile, .. } => profile_dims_ok(profile, m),
        PairFunction::Grid(g) => g.counts.len() == 2 * m && g.check().is_ok(),
    }
}

fn finite_profile(p: &Profile) -> bool {
    match p {
        Profile::Constant(c) => c.is_finite(),
        Profile::Affine { intercept, slopes } => intercept.is_finite() && slopes.iter().all(|s| s.is_finite()),
        Profile::Monomial { coef, .. } => coef.is_finite(),
        Profile::Indicator { lower, upper, value } => {
            value.is_finite() && lower.iter().chain(upper).all(|v| v.is_finite())
        }
        Profile::Grid(g) => g.values.iter().all(|v| v.is_finite()),
    }
}

fn finite_pair(p: &PairFunction) -> bool {
    match p {
        PairFunction::Constant(c) => c.is_finite(),
        PairFunction::RankOne { scale, profile } => scale.is_finite() && finite_profile(profile),
        PairFunction::Grid(g) => g.values.iter().all(|v| v.is_finite()),
    }
}

fn pair_negative(p: &PairFunction, pts: &[Vec<f64>]) -> bool {
    if let Some(min) = p.min_value() {
        if min < 0.0 {
            return true;
        }
        if matches!(p, PairFunction::Constant(_)) {
            return false;
        }
    }
    pts.iter().any(|x| pts.iter().any(|y| p.eval(x, y) < 0.0))
}

/// Lists every violated model invariant; an empty list means the model is valid.
pub fn validate_model(spec: &ModelSpec) -> Vec<String> {
    let mut report = Vec::new();
    if let Err(e) = spec.domain.check() {
        report.push(e.to_string());
        return report;
    }
    let m = spec.dim();

    if !profile_dims_ok(&spec.baseline, m) || !pair_dims_ok(&spec.graphon.function, m) {
        report.push("invalid-parameter: function dimension does not match the domain".to_string());
    }
    if let MarkModel::ScaledProfile { profile, .. } = &spec.marks {
        if !pair_dims_ok(profile, m) {
            report.push("invalid-parameter: mark profile dimension does not match the domain".to_string());
        }
    }
    if !report.is_empty() {
        return report;
    }

    let pts = probe_points(&spec.domain);

    if !finite_profile(&spec.baseline) || !spec.alpha.is_finite() {
        report.push("invalid-parameter: baseline".to_string());
    } else if pts.iter().any(|x| spec.baseline.eval(x) < 0.0)
        || matches!(&spec.baseline, Profile::Grid(g) if g.min() < 0.0)
    {
        report.push("negativity: baseline".to_string());
    }
    if let Some(tv) = spec.baseline_tv {
        if !tv.is_finite() || tv < 0.0 {
            report.push("invalid-parameter: baseline tv bound".to_string());
        }
    }

    let w = &spec.graphon;
    if !finite_pair(&w.function) || !w.c_w.is_finite() {
        report.push("invalid-parameter: graphon".to_string());
    } else {
        if pair_negative(&w.function, &pts) {
            report.push("negativity: graphon".to_string());
        }
        let exceeds = pts.iter().any(|x| pts.iter().any(|y| w.eval(x, y) > w.c_w * (1.0 + 1e-12)));
        if exceeds {
            report.push("invalid-parameter: graphon exceeds c_w".to_string());
        }
        if w.symmetric {
            let asym = pts.iter().any(|x| pts.iter().any(|y| (w.eval(x, y) - w.eval(y, x)).abs() > 1e-12));
            if asym {
                report.push("invalid-parameter: graphon is not symmetric".to_string());
            }
        }
    }

    report.extend(spec.excitation.problems());
    if spec.excitation.problems().is_empty() && !spec.excitation.l1_norm().is_finite() {
        report.push("invalid-parameter: excitation not L1".to_string());
    }

    if let MarkModel::ScaledProfile { profile, factor } = &spec.marks {
        report.extend(factor.problems());
        if !finite_pair(profile) {
            report.push("invalid-parameter: mark profile".to_string());
        } else if pair_negative(profile, &pts) {
            report.push("negativity: marks".to_string());
        }
    }
    if let Some(l) = &spec.lifetimes {
        report.extend(l.problems());
    }
    report.extend(spec.nonlinearity.problems());

    let r = &spec.resolution;
    if r.kernel_n == 0 || r.location_n == 0 || r.n_u < 2 {
        report.push("invalid-parameter: resolution".to_string());
    }
    report
}

/// Errors out with the first violation of [`validate_model`].
pub fn require_valid(spec: &ModelSpec) -> Result<()> {
    let report = validate_model(spec);
    match report.first() {
        None => Ok(()),
        Some(first) => {
            let msg = report.join("; ");
            if first.starts_with("negativity") {
                Err(Error::Negativity(msg))
            } else {
                Err(Error::InvalidParameter(msg))
            }
        }
    }
}
