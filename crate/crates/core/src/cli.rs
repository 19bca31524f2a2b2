//! The `ghawkes` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::cluster_sim::{simulate_process_with, ClusterOptions, Offspring, Realization, DEFAULT_EVENT_CAP};
use crate::domain::{CellGrid, Interpolation, Region};
use crate::error::{Error, Result};
use crate::limits::{divergence_experiment, fclt_experiment, flln_experiment, ExperimentReport, DIVERGENCE_EVENT_CAP};
use crate::metrics::{pp_distance, Matching};
use crate::model::{load_model_file, read_csv, require_valid, ModelSpec, Profile};
use crate::operators::{
    baseline_on_grid, cluster_size_bound, discretize_kernel, operator_norm_l1, spectral_radius, stationary_rate,
    DEFAULT_MAX_POWER,
};
use crate::prelimit::{convergence_experiment, CouplingMode};
use crate::rng::StreamKey;
use crate::stats::summarize;
use crate::thinning_sim::{simulate_thinning_with, HistorySnapshot, ThinningOptions};
use crate::transforms::{
    fixed_point, interchange_experiment, laplace_of_q, mc_transform_oracle, TestFunction, DEFAULT_MAX_ITER, DEFAULT_TOL,
};

#[derive(Debug, Parser, Serialize)]
#[command(name = "ghawkes", version, about = "Spatiotemporal graphon Hawkes processes")]
pub struct Cli {
    /// Base seed; every random stream is derived from it.
    #[arg(long, global = true, env = "GHAWKES_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory for artifacts and the manifest.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Override the kernel grid size per axis.
    #[arg(long, global = true)]
    pub n_x: Option<usize>,
    /// Override the number of time steps of transform grids.
    #[arg(long, global = true)]
    pub n_u: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArg {
    /// Model configuration (TOML).
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum Method {
    Cluster,
    Thinning,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Simulate one realization to NDJSON.
    Simulate {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        horizon: f64,
        #[arg(long, value_enum)]
        method: Option<Method>,
        #[arg(long, default_value_t = DEFAULT_EVENT_CAP)]
        event_cap: usize,
        /// NDJSON history to condition on (thinning only).
        #[arg(long)]
        history: Option<PathBuf>,
        /// Time the history is observed at.
        #[arg(long)]
        reference: Option<f64>,
    },
    /// Distance between two NDJSON realizations.
    Analyze {
        #[command(flatten)]
        model: ModelArg,
        /// Model for the second realization (defaults to --model).
        #[arg(long)]
        model_b: Option<PathBuf>,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// `shared-ids` or `time:EPS`.
        #[arg(long, default_value = "shared-ids")]
        matching: String,
    },
    /// Operator norm, spectral radius and stationary rate.
    Stability {
        #[command(flatten)]
        model: ModelArg,
    },
    /// Coupled distances between the process and its finite approximations.
    Converge {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, value_delimiter = ',', default_value = "2,8,32")]
        d_list: Vec<usize>,
        #[arg(long, value_enum, default_value = "annealed")]
        mode: ModeArg,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        /// Reuse one sampled graph for every replication.
        #[arg(long)]
        freeze_graph: bool,
    },
    /// Law-of-large-numbers statistic per replication.
    Flln {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, value_delimiter = ',', default_value = "50,200")]
        t_list: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        /// Interval mask `a,b` (pairs per axis in higher dimensions).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        set: Option<Vec<f64>>,
    },
    /// Normalized count fluctuations tested against their Gaussian limit.
    Fclt {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, default_value_t = 500.0)]
        horizon: f64,
        #[arg(long)]
        burn_in: Option<f64>,
        #[arg(long, default_value_t = 500)]
        reps: usize,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        set: Option<Vec<f64>>,
    },
    /// Growth of N_T / T for supercritical models.
    Diverge {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
        t_list: Vec<f64>,
        #[arg(long, default_value_t = 50)]
        reps: usize,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        set: Option<Vec<f64>>,
        #[arg(long, default_value_t = DIVERGENCE_EVENT_CAP)]
        event_cap: usize,
    },
    /// Laplace transform of the alive population.
    Transform {
        #[command(flatten)]
        model: ModelArg,
        /// `const:z` or `grid:FILE` (values on a uniform grid of the domain).
        #[arg(long, default_value = "const:1")]
        f: String,
        #[arg(long, default_value_t = 2.0)]
        t: f64,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        /// Monte Carlo clusters for the oracle.
        #[arg(long)]
        oracle: Option<usize>,
        /// Root location for the oracle (default: domain centre).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Option<Vec<f64>>,
        /// Also compare finite approximations with these cell counts.
        #[arg(long, value_delimiter = ',')]
        interchange: Option<Vec<usize>>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum ModeArg {
    Annealed,
    Quenched,
}

impl From<ModeArg> for CouplingMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Annealed => CouplingMode::Annealed,
            ModeArg::Quenched => CouplingMode::Quenched,
        }
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Analyze { .. } => "analyze",
            Command::Stability { .. } => "stability",
            Command::Converge { .. } => "converge",
            Command::Flln { .. } => "flln",
            Command::Fclt { .. } => "fclt",
            Command::Diverge { .. } => "diverge",
            Command::Transform { .. } => "transform",
        }
    }

    fn model_path(&self) -> &Path {
        match self {
            Command::Simulate { model, .. }
            | Command::Analyze { model, .. }
            | Command::Stability { model }
            | Command::Converge { model, .. }
            | Command::Flln { model, .. }
            | Command::Fclt { model, .. }
            | Command::Diverge { model, .. }
            | Command::Transform { model, .. } => &model.model,
        }
    }
}

/// Exit status for an error: 3 for I/O, 2 for stability failures, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => 3,
        Error::UnstableModel(_) | Error::PrelimitUnstable(_) | Error::OutdegreeConditionFailed(_) => 2,
        _ => 1,
    }
}

struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        std::fs::write(self.dir.join(name), contents)?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<String> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))? + "\n";
        self.write(name, &text)?;
        Ok(text)
    }
}

fn load(cli: &Cli, path: &Path) -> Result<ModelSpec> {
    let mut spec = load_model_file(path)?;
    if let Some(n) = cli.n_x {
        spec.resolution.kernel_n = n;
    }
    if let Some(n) = cli.n_u {
        spec.resolution.n_u = n;
    }
    require_valid(&spec)?;
    Ok(spec)
}

fn region_from(set: &Option<Vec<f64>>, spec: &ModelSpec) -> Result<Region> {
    let Some(v) = set else { return Ok(Region::Whole) };
    if v.len() != 2 * spec.dim() {
        return Err(Error::InvalidArgument(format!(
            "--set needs a lower,upper pair per axis ({} numbers), got {}",
            2 * spec.dim(),
            v.len()
        )));
    }
    let region = Region::Box {
        lower: v.iter().step_by(2).copied().collect(),
        upper: v.iter().skip(1).step_by(2).copied().collect(),
    };
    region.check(&spec.domain)?;
    Ok(region)
}

fn parse_matching(s: &str) -> Result<Matching> {
    if s == "shared-ids" {
        return Ok(Matching::SharedIds);
    }
    match s.strip_prefix("time:").map(str::parse::<f64>) {
        Some(Ok(epsilon)) => Ok(Matching::TimeTolerance { epsilon }),
        _ => Err(Error::InvalidArgument(format!("matching must be `shared-ids` or `time:EPS`, got {s:?}"))),
    }
}

fn parse_test_function(s: &str, spec: &ModelSpec) -> Result<TestFunction> {
    if let Some(z) = s.strip_prefix("const:") {
        let z: f64 = z.parse().map_err(|_| Error::InvalidArgument(format!("bad constant in --f {s:?}")))?;
        return Ok(TestFunction::constant(z));
    }
    if let Some(file) = s.strip_prefix("grid:") {
        let values = read_csv(Path::new(file))?;
        let m = spec.dim();
        let n = (values.len() as f64).powf(1.0 / m as f64).round() as usize;
        if n.pow(m as u32) != values.len() || n == 0 {
            return Err(Error::Shape(format!("{} grid values do not form a cubic {m}-d grid", values.len())));
        }
        let grid = CellGrid {
            lower: spec.domain.lower.clone(),
            upper: spec.domain.upper.clone(),
            counts: vec![n; m],
            values,
            interpolation: Interpolation::PiecewiseConstant,
        };
        grid.check()?;
        return Ok(TestFunction { profile: Profile::Grid(grid) });
    }
    Err(Error::InvalidArgument(format!("--f must be `const:z` or `grid:FILE`, got {s:?}")))
}

fn read_realization(path: &Path) -> Result<Realization> {
    Realization::from_ndjson(&std::fs::read_to_string(path)?, None)
}

fn reports_csv(reports: &[ExperimentReport]) -> String {
    let mut out = String::from("horizon,rep,value\n");
    for r in reports {
        out.push_str(r.to_csv().split_once('\n').map_or("", |(_, rows)| rows));
    }
    out
}

fn dispatch(cli: &Cli, out: &mut Outputs) -> Result<Option<String>> {
    let key = StreamKey::new(cli.seed);
    let spec = load(cli, cli.command.model_path())?;
    match &cli.command {
        Command::Simulate { horizon, method, event_cap, history, reference, .. } => {
            let method = method.unwrap_or(if spec.is_linear() && history.is_none() {
                Method::Cluster
            } else {
                Method::Thinning
            });
            let ctx = Offspring::new(&spec)?;
            let real = match method {
                Method::Cluster => {
                    if history.is_some() {
                        return Err(Error::InvalidArgument("--history requires --method thinning".into()));
                    }
                    simulate_process_with(
                        &ctx,
                        *horizon,
                        key,
                        ClusterOptions { event_cap: *event_cap, lifetimes: true },
                    )?
                }
                Method::Thinning => {
                    let initial = match history {
                        Some(p) => {
                            let past = read_realization(p)?;
                            let t0 =
                                reference.unwrap_or_else(|| past.events.iter().map(|e| e.time).fold(0.0, f64::max));
                            HistorySnapshot::from_realization(&past, t0)
                        }
                        None => HistorySnapshot { events: Vec::new(), reference: reference.unwrap_or(0.0) },
                    };
                    let opts = ThinningOptions { event_cap: *event_cap, ..Default::default() };
                    simulate_thinning_with(&ctx, *horizon, &initial, key, opts)?
                }
            };
            out.write("events.ndjson", &real.to_ndjson())?;
            real.check_complete()?;
            Ok(None)
        }
        Command::Analyze { model_b, a, b, matching, .. } => {
            let spec_b = match model_b {
                Some(p) => load(cli, p)?,
                None => spec.clone(),
            };
            let d =
                pp_distance(&spec, &read_realization(a)?, &spec_b, &read_realization(b)?, parse_matching(matching)?)?;
            let extension = matches!(parse_matching(matching)?, Matching::TimeTolerance { .. });
            Ok(Some(
                out.json("distance.json", &json!({ "distance": d, "matching": matching, "extension": extension }))?,
            ))
        }
        Command::Stability { .. } => {
            let k = discretize_kernel(&spec, spec.resolution.kernel_n)?;
            let est = spectral_radius(&k, DEFAULT_MAX_POWER)?;
            let rho = est.best();
            let stable = rho < 1.0;
            let (lambda_bar, residual, cluster) = if stable {
                let rate = stationary_rate(&k, &baseline_on_grid(&spec, &k), crate::limits::STATIONARY_TOL)?;
                (Some(rate.mass(&k, &Region::Whole)), Some(rate.residual), Some(cluster_size_bound(&k)?))
            } else {
                (None, None, None)
            };
            let report = json!({
                "model_digest": spec.digest(),
                "grid_size": k.len(),
                "operator_norm": operator_norm_l1(&k),
                "rho": rho,
                "rho_power_converged": est.power_converged,
                "rho_gelfand_bound": est.gelfand_bound(),
                "stable": stable,
                "lambda_bar_total": lambda_bar,
                "stationary_residual": residual,
                "cluster_size_bound": cluster,
            });
            Ok(Some(out.json("stability.json", &report)?))
        }
        Command::Converge { d_list, mode, reps, horizon, freeze_graph, .. } => {
            let rows = convergence_experiment(&spec, d_list, (*mode).into(), *horizon, *reps, key, *freeze_graph)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in &rows {
                w.serialize(r).map_err(|e| Error::Internal(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
            out.write("converge.csv", &String::from_utf8_lossy(&bytes))?;
            let summary: Vec<_> = d_list
                .iter()
                .map(|d| {
                    let dist: Vec<f64> = rows.iter().filter(|r| r.d == *d).map(|r| r.distance).collect();
                    let flag = rows.iter().filter(|r| r.d == *d && r.one_event_per_cell).count();
                    json!({ "d": d, "distance": summarize(&dist), "one_event_per_cell": flag })
                })
                .collect();
            Ok(Some(out.json(
                "converge.json",
                &json!({ "mode": CouplingMode::from(*mode), "reps": reps, "horizon": horizon, "per_d": summary }),
            )?))
        }
        Command::Flln { t_list, reps, set, .. } => {
            let region = region_from(set, &spec)?;
            let reports =
                t_list.iter().map(|t| flln_experiment(&spec, &region, *t, *reps, key)).collect::<Result<Vec<_>>>()?;
            out.write("flln.csv", &reports_csv(&reports))?;
            Ok(Some(out.json("flln.json", &reports)?))
        }
        Command::Fclt { horizon, burn_in, reps, set, .. } => {
            let region = region_from(set, &spec)?;
            let report = fclt_experiment(&spec, &region, *horizon, *burn_in, *reps, key)?;
            out.write("fclt.csv", &report.to_csv())?;
            Ok(Some(out.json("fclt.json", &report)?))
        }
        Command::Diverge { t_list, reps, set, event_cap, .. } => {
            let region = region_from(set, &spec)?;
            let report = divergence_experiment(&spec, &region, t_list, *reps, key, *event_cap)?;
            out.write("diverge.csv", &report.to_csv())?;
            let text = out.json("diverge.json", &report)?;
            if report.all_censored() {
                return Err(Error::AllCensored);
            }
            Ok(Some(text))
        }
        Command::Transform { f, t, tol, oracle, x, interchange, .. } => {
            let f = parse_test_function(f, &spec)?;
            let fp = fixed_point(&spec, &f, *t, *tol, DEFAULT_MAX_ITER, None)?;
            let l_q = laplace_of_q(&fp.eta, &spec)?;
            let x0: Vec<f64> = match x {
                Some(x) => x.clone(),
                None => spec.domain.lower.iter().zip(&spec.domain.upper).map(|(a, b)| 0.5 * (a + b)).collect(),
            };
            let grid = spec.kernel_grid()?;
            spec.domain.require(&x0)?;
            let eta_at_x = fp.eta.values[(grid.cell_of(&x0), fp.eta.values.ncols() - 1)];
            let mc = match oracle {
                Some(n) => Some(mc_transform_oracle(&spec, &x0, &f, *t, *n, key)?),
                None => None,
            };
            let inter = match interchange {
                Some(d) => Some(interchange_experiment(&spec, d, &f, *t, *tol)?),
                None => None,
            };
            let report = json!({
                "L_Q": l_q,
                "iterations": fp.log.len(),
                "converged": fp.converged,
                "envelope_ok": fp.envelope_ok(),
                "constant": fp.constant,
                "log": fp.log,
                "x": x0,
                "eta_at_x": eta_at_x,
                "oracle_estimate": mc.map(|m| m.estimate),
                "oracle_se": mc.map(|m| m.se),
                "interchange": inter,
            });
            let text = out.json("transform.json", &report)?;
            fp.require_converged()?;
            Ok(Some(text))
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_manifest(cli: &Cli, argv: &[String], out: &mut Outputs, status: &str, wall: f64) -> Result<()> {
    let model_path = cli.command.model_path();
    let model_text = std::fs::read_to_string(model_path).ok();
    let manifest = json!({
        "tool": "ghawkes",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": cli.command.name(),
        "argv": argv,
        "seed": cli.seed,
        "threads": cli.threads,
        "config": cli,
        "model_path": model_path,
        "model_sha256": model_text.as_deref().map(|t| sha256_hex(t.as_bytes())),
        "model_toml": model_text,
        "status": status,
        "artifacts": out.written,
        "wall_time_s": wall,
    });
    out.json("manifest.json", &manifest)?;
    Ok(())
}

/// Parses `args`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    if let Err(e) = std::fs::create_dir_all(&cli.out) {
        eprintln!("error: io: {}: {e}", cli.out.display());
        return 3;
    }
    let mut out = Outputs { dir: cli.out.clone(), written: Vec::new() };
    let start = Instant::now();
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli, &mut out)),
            Err(e) => Err(Error::InvalidArgument(format!("cannot start {n} threads: {e}"))),
        },
        None => dispatch(&cli, &mut out),
    };
    let wall = start.elapsed().as_secs_f64();
    let (code, status) = match &result {
        Ok(_) => (0, "ok".to_string()),
        Err(e) => (exit_code(e), e.code().as_str().to_string()),
    };
    if let Err(e) = write_manifest(&cli, &argv, &mut out, &status, wall) {
        eprintln!("error: {e}");
        return 3;
    }
    match result {
        Ok(Some(text)) => {
            print!("{text}");
            0
        }
        Ok(None) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            code
        }
    }
}
