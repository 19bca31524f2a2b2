//! Replication harnesses for the law of large numbers, supercritical growth
//! and Gaussian fluctuations of event counts.

use rayon::prelude::*;
use serde::Serialize;

use crate::cluster_sim::{simulate_process_with, ClusterOptions, Offspring, Realization};
use crate::domain::{Interpolation, Region};
use crate::error::{Error, Result};
use crate::model::{MarkModel, ModelSpec, PairFunction, Profile};
use crate::operators::{
    baseline_on_grid, discretize_kernel, fclt_sigma, operator_norm_l1, spectral_radius, stationary_rate, KernelGrid,
    StationaryRate, DEFAULT_MAX_POWER,
};
use crate::rng::{label, StreamKey};
use crate::stats::{ks_one_sample, normal_cdf, summarize, Summary, TestResult};

pub const STATIONARY_TOL: f64 = 1e-10;
pub const DEFAULT_ALPHA: f64 = 1e-3;
/// Default event cap per replication for supercritical runs.
pub const DIVERGENCE_EVENT_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub model_digest: String,
    pub seed: u64,
    pub region: Region,
    pub reps: usize,
    pub horizons: Vec<f64>,
    pub burn_in: Option<f64>,
    /// One sample vector per horizon, ordered by replication.
    pub samples: Vec<Vec<f64>>,
    pub summaries: Vec<Summary>,
    pub rho: f64,
    pub lambda_bar: Option<f64>,
    pub sigma: Option<f64>,
    /// `sigma` comes from the discretized formula for a model that is not
    /// piecewise constant.
    pub sigma_extrapolated: bool,
    pub censored_fraction: Vec<f64>,
    pub test: Option<TestResult>,
    pub test_skipped: bool,
    pub pass: Option<bool>,
}

impl ExperimentReport {
    fn new(
        name: &str,
        spec: &ModelSpec,
        key: StreamKey,
        region: &Region,
        reps: usize,
        horizons: Vec<f64>,
        rho: f64,
    ) -> Self {
        ExperimentReport {
            experiment: name.into(),
            model_digest: spec.digest(),
            seed: key.raw(),
            region: region.clone(),
            reps,
            horizons,
            burn_in: None,
            samples: Vec::new(),
            summaries: Vec::new(),
            rho,
            lambda_bar: None,
            sigma: None,
            sigma_extrapolated: false,
            censored_fraction: Vec::new(),
            test: None,
            test_skipped: false,
            pass: None,
        }
    }

    fn push(&mut self, samples: Vec<f64>) {
        self.summaries.push(summarize(&samples));
        self.samples.push(samples);
    }

    /// Rows `horizon,rep,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("horizon,rep,value\n");
        for (t, s) in self.horizons.iter().zip(&self.samples) {
            for (r, v) in s.iter().enumerate() {
                out.push_str(&format!("{t},{r},{v}\n"));
            }
        }
        out
    }

    pub fn means(&self) -> Vec<f64> {
        self.summaries.iter().map(|s| s.mean).collect()
    }

    pub fn all_censored(&self) -> bool {
        self.censored_fraction.contains(&1.0)
    }
}

struct Stationary {
    kernel: KernelGrid,
    rho: f64,
    rate: StationaryRate,
}

fn stationary(spec: &ModelSpec) -> Result<Stationary> {
    let kernel = discretize_kernel(spec, spec.resolution.kernel_n)?;
    let rho = spectral_radius(&kernel, DEFAULT_MAX_POWER)?.best();
    if rho >= 1.0 {
        return Err(Error::UnstableModel(format!("spectral radius {rho} >= 1")));
    }
    let rate = stationary_rate(&kernel, &baseline_on_grid(spec, &kernel), STATIONARY_TOL)?;
    Ok(Stationary { kernel, rho, rate })
}

fn check_inputs(spec: &ModelSpec, region: &Region, horizons: &[f64], reps: usize) -> Result<()> {
    region.check(&spec.domain)?;
    if reps == 0 {
        return Err(Error::InvalidArgument("at least one replication is required".into()));
    }
    if let Some(t) = horizons.iter().find(|t| !(**t > 0.0) || t.is_infinite()) {
        return Err(Error::InvalidArgument(format!("horizons must be finite and positive, got {t}")));
    }
    Ok(())
}

fn replication_key(key: StreamKey, r: usize) -> StreamKey {
    key.sub(label::REPLICATIONS, r as u64)
}

/// `sup_{v in [0,1]} |N_{Tv}(A)/T - v lambda_bar(A)|`, exact for the step path.
pub fn flln_statistic(real: &Realization, region: &Region, horizon: f64, lambda_bar: f64) -> f64 {
    let mut times: Vec<f64> =
        real.events.iter().filter(|e| e.time <= horizon && region.contains(&e.location)).map(|e| e.time).collect();
    times.sort_by(f64::total_cmp);
    let mut sup: f64 = 0.0;
    for (k, t) in times.iter().enumerate() {
        let drift = t * lambda_bar;
        sup = sup.max((k as f64 - drift).abs()).max((k as f64 + 1.0 - drift).abs());
    }
    sup = sup.max((times.len() as f64 - horizon * lambda_bar).abs());
    sup / horizon
}

pub fn flln_experiment(
    spec: &ModelSpec,
    region: &Region,
    horizon: f64,
    reps: usize,
    key: StreamKey,
) -> Result<ExperimentReport> {
    check_inputs(spec, region, &[horizon], reps)?;
    let st = stationary(spec)?;
    let lam = st.rate.mass(&st.kernel, region);
    let ctx = Offspring::new(spec)?;
    let samples = (0..reps)
        .into_par_iter()
        .map(|r| {
            let real = simulate_process_with(&ctx, horizon, replication_key(key, r), ClusterOptions::default())?;
            real.check_complete()?;
            Ok(flln_statistic(&real, region, horizon, lam))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut report = ExperimentReport::new("flln", spec, key, region, reps, vec![horizon], st.rho);
    report.lambda_bar = Some(lam);
    report.push(samples);
    Ok(report)
}

/// `N_T(A)/T` for each horizon. Replications that hit `event_cap` keep their
/// partial count and are reported as censored.
pub fn divergence_experiment(
    spec: &ModelSpec,
    region: &Region,
    horizons: &[f64],
    reps: usize,
    key: StreamKey,
    event_cap: usize,
) -> Result<ExperimentReport> {
    check_inputs(spec, region, horizons, reps)?;
    let kernel = discretize_kernel(spec, spec.resolution.kernel_n)?;
    let rho = spectral_radius(&kernel, DEFAULT_MAX_POWER)?.best();
    let ctx = Offspring::new(spec)?;
    let opts = ClusterOptions { event_cap, lifetimes: false };
    let mut report = ExperimentReport::new("diverge", spec, key, region, reps, horizons.to_vec(), rho);
    for &t in horizons {
        // sequential over replications: a censored run holds up to `event_cap` events
        let mut samples = Vec::with_capacity(reps);
        let mut censored = 0usize;
        for r in 0..reps {
            let real = simulate_process_with(&ctx, t, replication_key(key, r), opts)?;
            censored += real.truncated as usize;
            samples.push(real.count(t, region) as f64 / t);
        }
        report.censored_fraction.push(censored as f64 / reps as f64);
        report.push(samples);
    }
    Ok(report)
}

fn profile_piecewise_constant(p: &Profile) -> bool {
    match p {
        Profile::Constant(_) | Profile::Indicator { .. } => true,
        Profile::Grid(g) => g.interpolation == Interpolation::PiecewiseConstant,
        _ => false,
    }
}

fn pair_piecewise_constant(p: &PairFunction) -> bool {
    match p {
        PairFunction::Grid(g) => g.interpolation == Interpolation::PiecewiseConstant,
        other => other.is_constant(),
    }
}

/// Whether the model is a multivariate Hawkes process in disguise.
pub fn is_piecewise_constant(spec: &ModelSpec) -> bool {
    profile_piecewise_constant(&spec.baseline)
        && pair_piecewise_constant(&spec.graphon.function)
        && match &spec.marks {
            MarkModel::Unmarked => true,
            MarkModel::ScaledProfile { profile, .. } => pair_piecewise_constant(profile),
        }
}

/// Twenty times a rough mean cluster duration, `mean delay * rho / (1 - rho)`.
pub fn default_burn_in(spec: &ModelSpec, rho: f64) -> Result<f64> {
    let d = spec.excitation.mean_delay() * rho / (1.0 - rho);
    if !d.is_finite() {
        return Err(Error::InvalidArgument("the delay law has no finite mean; pass an explicit burn-in".into()));
    }
    Ok(20.0 * d)
}

/// Samples of `sqrt(T) (N(A)/T - lambda_bar(A))` over `(burn_in, burn_in + T]`,
/// tested against `Normal(0, sigma_A^2)`.
pub fn fclt_experiment(
    spec: &ModelSpec,
    region: &Region,
    horizon: f64,
    burn_in: Option<f64>,
    reps: usize,
    key: StreamKey,
) -> Result<ExperimentReport> {
    check_inputs(spec, region, &[horizon], reps)?;
    let kernel = discretize_kernel(spec, spec.resolution.kernel_n)?;
    let outdegree = if spec.excitation.l1_norm().is_finite() { operator_norm_l1(&kernel) } else { f64::INFINITY };
    if outdegree >= 1.0 {
        return Err(Error::OutdegreeConditionFailed(format!("||h||_1 times the sup outdegree is {outdegree}")));
    }
    let st = stationary(spec)?;
    let lam = st.rate.mass(&st.kernel, region);
    let sigma = fclt_sigma(&st.kernel, &st.rate, &region.cell_fractions(&st.kernel.grid))?;
    let burn = match burn_in {
        Some(b) if b >= 0.0 && b.is_finite() => b,
        Some(b) => return Err(Error::InvalidArgument(format!("burn-in must be finite and nonnegative, got {b}"))),
        None => default_burn_in(spec, st.rho)?,
    };
    let ctx = Offspring::new(spec)?;
    let end = burn + horizon;
    let samples = (0..reps)
        .into_par_iter()
        .map(|r| {
            let real = simulate_process_with(&ctx, end, replication_key(key, r), ClusterOptions::default())?;
            real.check_complete()?;
            let n = real.events.iter().filter(|e| e.time > burn && region.contains(&e.location)).count() as f64;
            Ok(horizon.sqrt() * (n / horizon - lam))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut report = ExperimentReport::new("fclt", spec, key, region, reps, vec![horizon], st.rho);
    report.burn_in = Some(burn);
    report.lambda_bar = Some(lam);
    report.sigma = Some(sigma);
    report.sigma_extrapolated = !is_piecewise_constant(spec);
    if reps >= 2 {
        let test = ks_one_sample(&samples, |x| normal_cdf(x, sigma));
        report.pass = Some(test.p_value > DEFAULT_ALPHA);
        report.test = Some(test);
    } else {
        report.test_skipped = true;
    }
    report.push(samples);
    Ok(report)
}
