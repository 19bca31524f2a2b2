//! TOML model documents.
//!
//! ```toml
//! [domain]
//! lower = [0.0]
//! upper = [1.0]
//!
//! [baseline]
//! family = "constant"
//! value = 1.0
//!
//! [graphon]
//! family = "rank-one"
//! scale = 1.5
//! profile = { family = "monomial", coef = 1.0, powers = [1] }
//!
//! [excitation]
//! family = "exponential"
//! rate = 1.0
//! ```
//!
//! Grid-valued functions take `counts` plus either inline `values` or a CSV
//! `file` (resolved relative to the document), read row-major.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::*;
use crate::domain::{CellGrid, Interpolation};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub domain: SpatialDomain,
    pub baseline: BaselineConfig,
    pub graphon: GraphonConfig,
    pub excitation: ExcitationConfig,
    #[serde(default)]
    pub marks: MarksConfig,
    #[serde(default)]
    pub lifetimes: Option<LifetimeConfig>,
    #[serde(default)]
    pub nonlinearity: NonlinearityConfig,
    #[serde(default)]
    pub resolution: ResolutionConfig,
}

#[derive(Debug, Clone, Deserialize)]
pub struct BaselineConfig {
    #[serde(flatten)]
    pub function: ProfileConfig,
    pub tv_bound: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct GridConfig {
    pub counts: Vec<usize>,
    pub values: Option<Vec<f64>>,
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub interpolation: Interpolation,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ProfileConfig {
    Constant {
        value: f64,
    },
    Affine {
        intercept: f64,
        slopes: Vec<f64>,
    },
    Monomial {
        coef: f64,
        powers: Vec<u32>,
    },
    Indicator {
        lower: Vec<f64>,
        upper: Vec<f64>,
        #[serde(default = "one")]
        value: f64,
    },
    Grid(GridConfig),
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum PairConfig {
    Constant { value: f64 },
    RankOne { scale: f64, profile: ProfileConfig },
    Grid(GridConfig),
}

#[derive(Debug, Clone, Deserialize)]
pub struct GraphonConfig {
    #[serde(flatten)]
    pub function: PairConfig,
    pub c_w: Option<f64>,
    #[serde(default)]
    pub symmetric: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ExcitationConfig {
    Exponential {
        rate: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    PowerLaw {
        exponent: f64,
        cutoff: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Table {
        knots: Vec<f64>,
        values: Vec<f64>,
        #[serde(default)]
        tail: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum FactorConfig {
    Deterministic { value: f64 },
    Exponential { mean: f64 },
    Gamma { shape: f64, scale: f64 },
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MarksConfig {
    #[default]
    Unmarked,
    ScaledProfile {
        profile: PairConfig,
        factor: FactorConfig,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum LifetimeConfig {
    Deterministic { duration: f64 },
    Exponential { rate: f64 },
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum NonlinearityConfig {
    #[default]
    Identity,
    ClippedLinear {
        cap: f64,
    },
    SigmoidScaled {
        scale: f64,
    },
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ResolutionConfig {
    pub kernel_n: Option<usize>,
    pub location_n: Option<usize>,
    pub grid_cap: Option<usize>,
    pub n_u: Option<usize>,
}

/// All numbers of a headerless CSV file in reading order.
pub fn read_csv(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for field in record.iter().filter(|f| !f.is_empty()) {
            let v = field.parse::<f64>().map_err(|_| {
                Error::Config(format!("{}: line {}: not a number: {field:?}", path.display(), line + 1))
            })?;
            out.push(v);
        }
    }
    Ok(out)
}

struct Builder<'a> {
    domain: &'a SpatialDomain,
    base_dir: Option<&'a Path>,
}

impl Builder<'_> {
    fn grid(&self, g: &GridConfig, axes_per_point: usize, field: &str) -> Result<CellGrid> {
        let values = match (&g.values, &g.file) {
            (Some(v), None) => v.clone(),
            (None, Some(f)) => {
                let path = match self.base_dir {
                    Some(dir) if f.is_relative() => dir.join(f),
                    _ => f.clone(),
                };
                read_csv(&path)?
            }
            _ => return Err(Error::Config(format!("{field}: grid needs exactly one of `values` or `file`"))),
        };
        let repeat = |v: &Vec<f64>| -> Vec<f64> { (0..axes_per_point).flat_map(|_| v.iter().copied()).collect() };
        let grid = CellGrid {
            lower: g.lower.clone().unwrap_or_else(|| repeat(&self.domain.lower)),
            upper: g.upper.clone().unwrap_or_else(|| repeat(&self.domain.upper)),
            counts: g.counts.clone(),
            values,
            interpolation: g.interpolation,
        };
        grid.check().map_err(|e| Error::Config(format!("{field}: {e}")))?;
        if grid.counts.len() != axes_per_point * self.domain.dim() {
            return Err(Error::Config(format!(
                "{field}: grid has {} axes, expected {}",
                grid.counts.len(),
                axes_per_point * self.domain.dim()
            )));
        }
        Ok(grid)
    }

    fn profile(&self, p: &ProfileConfig, field: &str) -> Result<Profile> {
        Ok(match p {
            ProfileConfig::Constant { value } => Profile::Constant(*value),
            ProfileConfig::Affine { intercept, slopes } => {
                Profile::Affine { intercept: *intercept, slopes: slopes.clone() }
            }
            ProfileConfig::Monomial { coef, powers } => Profile::Monomial { coef: *coef, powers: powers.clone() },
            ProfileConfig::Indicator { lower, upper, value } => {
                Profile::Indicator { lower: lower.clone(), upper: upper.clone(), value: *value }
            }
            ProfileConfig::Grid(g) => Profile::Grid(self.grid(g, 1, field)?),
        })
    }

    fn pair(&self, p: &PairConfig, field: &str) -> Result<PairFunction> {
        Ok(match p {
            PairConfig::Constant { value } => PairFunction::Constant(*value),
            PairConfig::RankOne { scale, profile } => {
                PairFunction::RankOne { scale: *scale, profile: self.profile(profile, field)? }
            }
            PairConfig::Grid(g) => PairFunction::Grid(self.grid(g, 2, field)?),
        })
    }
}

impl ModelConfig {
    /// Builds the model. Grid files are resolved against `base_dir`.
    pub fn build(&self, base_dir: Option<&Path>) -> Result<ModelSpec> {
        self.domain.check().map_err(|e| Error::Config(format!("domain: {e}")))?;
        let b = Builder { domain: &self.domain, base_dir };
        let baseline = b.profile(&self.baseline.function, "baseline")?;
        let w = b.pair(&self.graphon.function, "graphon")?;
        let excitation = match &self.excitation {
            ExcitationConfig::Exponential { rate, scale } => {
                ExcitationKernel::Exponential { rate: *rate, scale: *scale }
            }
            ExcitationConfig::PowerLaw { exponent, cutoff, scale } => {
                ExcitationKernel::PowerLaw { exponent: *exponent, cutoff: *cutoff, scale: *scale }
            }
            ExcitationConfig::Table { knots, values, tail } => {
                ExcitationKernel::Table { knots: knots.clone(), values: values.clone(), tail: *tail }
            }
        };
        let mut spec = ModelSpec::new(self.domain.clone(), baseline, w, excitation);
        spec.baseline_tv = self.baseline.tv_bound;
        if let Some(c_w) = self.graphon.c_w {
            spec.graphon.c_w = c_w;
        }
        spec.graphon.symmetric = self.graphon.symmetric;
        spec.marks = match &self.marks {
            MarksConfig::Unmarked => MarkModel::Unmarked,
            MarksConfig::ScaledProfile { profile, factor } => MarkModel::ScaledProfile {
                profile: b.pair(profile, "marks.profile")?,
                factor: match factor {
                    FactorConfig::Deterministic { value } => ScalarLaw::Deterministic(*value),
                    FactorConfig::Exponential { mean } => ScalarLaw::Exponential { mean: *mean },
                    FactorConfig::Gamma { shape, scale } => ScalarLaw::Gamma { shape: *shape, scale: *scale },
                },
            },
        };
        spec.lifetimes = self.lifetimes.as_ref().map(|l| match l {
            LifetimeConfig::Deterministic { duration } => LifetimeModel::Deterministic { duration: *duration },
            LifetimeConfig::Exponential { rate } => LifetimeModel::Exponential { rate: *rate },
        });
        spec.nonlinearity = match self.nonlinearity {
            NonlinearityConfig::Identity => Nonlinearity::Identity,
            NonlinearityConfig::ClippedLinear { cap } => Nonlinearity::ClippedLinear { cap },
            NonlinearityConfig::SigmoidScaled { scale } => Nonlinearity::SigmoidScaled { scale },
        };
        let r = &self.resolution;
        if let Some(n) = r.kernel_n {
            spec.resolution.kernel_n = n;
        }
        if let Some(n) = r.location_n {
            spec.resolution.location_n = n;
        }
        if let Some(n) = r.grid_cap {
            spec.resolution.grid_cap = n;
        }
        if let Some(n) = r.n_u {
            spec.resolution.n_u = n;
        }
        Ok(spec)
    }
}

/// Parses a model document. Syntax and field errors carry line/column.
pub fn parse_model(text: &str, base_dir: Option<&Path>) -> Result<ModelSpec> {
    let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.build(base_dir)
}

pub fn load_model_file(path: &Path) -> Result<ModelSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_model(&text, path.parent())
}
