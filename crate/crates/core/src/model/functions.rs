//! Scalar profiles on the domain and pair functions on its square.

use crate::domain::{CellGrid, Interpolation, SpatialDomain};

/// A real function on the spatial domain.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Constant(f64),
    /// `intercept + sum_i slopes[i] * x_i`
    Affine {
        intercept: f64,
        slopes: Vec<f64>,
    },
    /// `coef * prod_i x_i^powers[i]`
    Monomial {
        coef: f64,
        powers: Vec<u32>,
    },
    /// `value` on the closed box, zero elsewhere.
    Indicator {
        lower: Vec<f64>,
        upper: Vec<f64>,
        value: f64,
    },
    Grid(CellGrid),
}

impl Profile {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Profile::Constant(c) => *c,
            Profile::Affine { intercept, slopes } => intercept + slopes.iter().zip(x).map(|(s, v)| s * v).sum::<f64>(),
            Profile::Monomial { coef, powers } => {
                coef * powers.iter().zip(x).map(|(&p, v)| v.powi(p as i32)).product::<f64>()
            }
            Profile::Indicator { lower, upper, value } => {
                if x.iter().zip(lower.iter().zip(upper)).all(|(v, (a, b))| v >= a && v <= b) {
                    *value
                } else {
                    0.0
                }
            }
            Profile::Grid(g) => g.eval(x),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Profile::Constant(_))
    }

    /// Upper bound of `|f|` over the domain.
    pub fn sup_abs(&self, domain: &SpatialDomain) -> f64 {
        match self {
            Profile::Constant(c) => c.abs(),
            Profile::Affine { intercept, slopes } => {
                let (mut hi, mut lo) = (*intercept, *intercept);
                for (a, sl) in slopes.iter().enumerate() {
                    let (l, u) = (domain.lower[a] * sl, domain.upper[a] * sl);
                    hi += l.max(u);
                    lo += l.min(u);
                }
                hi.abs().max(lo.abs())
            }
            Profile::Monomial { coef, powers } => {
                coef.abs()
                    * powers
                        .iter()
                        .enumerate()
                        .map(|(a, &p)| domain.lower[a].abs().max(domain.upper[a].abs()).powi(p as i32))
                        .product::<f64>()
            }
            Profile::Indicator { value, .. } => value.abs(),
            Profile::Grid(g) => g.max().abs().max(g.min().abs()),
        }
    }

    /// Integral over the domain; exact except for multilinear grids, which
    /// use a refined midpoint rule.
    pub fn integral(&self, domain: &SpatialDomain) -> f64 {
        let m = domain.dim();
        let vol = domain.volume();
        match self {
            Profile::Constant(c) => c * vol,
            Profile::Affine { intercept, slopes } => {
                let center: f64 =
                    slopes.iter().enumerate().map(|(a, s)| s * 0.5 * (domain.lower[a] + domain.upper[a])).sum();
                (intercept + center) * vol
            }
            Profile::Monomial { coef, powers } => {
                coef * (0..m)
                    .map(|a| {
                        let p = powers.get(a).copied().unwrap_or(0) as i32;
                        (domain.upper[a].powi(p + 1) - domain.lower[a].powi(p + 1)) / (p + 1) as f64
                    })
                    .product::<f64>()
            }
            Profile::Indicator { lower, upper, value } => {
                value
                    * (0..m)
                        .map(|a| (domain.upper[a].min(upper[a]) - domain.lower[a].max(lower[a])).max(0.0))
                        .product::<f64>()
            }
            Profile::Grid(g) => match g.interpolation {
                crate::domain::Interpolation::PiecewiseConstant => {
                    let cell: f64 = (0..m).map(|a| (g.upper[a] - g.lower[a]) / g.counts[a] as f64).product();
                    g.values.iter().sum::<f64>() * cell
                }
                crate::domain::Interpolation::Multilinear => {
                    let counts: Vec<usize> = g.counts.iter().map(|c| c * 8).collect();
                    let grid = crate::domain::UniformGrid { domain: domain.clone(), counts };
                    (0..grid.len()).map(|i| self.eval(&grid.midpoint(i))).sum::<f64>() * grid.cell_volume()
                }
            },
        }
    }
}

/// Column identity of a [`PairFunction`] up to a positive factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnKey {
    /// Every column has the same shape.
    Shared,
    /// Columns agree within a grid cell of `y`.
    Cell(usize),
    /// No sharing beyond the exact point.
    Point,
}

/// A real function of a pair of domain points `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub enum PairFunction {
    Constant(f64),
    /// `scale * a(x) * a(y)`
    RankOne {
        scale: f64,
        profile: Profile,
    },
    /// Values on a `2m`-axis grid; the first `m` axes are `x`.
    Grid(CellGrid),
}

impl PairFunction {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            PairFunction::Constant(c) => *c,
            PairFunction::RankOne { scale, profile } => scale * profile.eval(x) * profile.eval(y),
            PairFunction::Grid(g) => {
                let mut xy = Vec::with_capacity(x.len() + y.len());
                xy.extend_from_slice(x);
                xy.extend_from_slice(y);
                g.eval(&xy)
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, PairFunction::Constant(_))
    }

    /// True when `x -> f(x, y)` is the same function of `x` up to a factor
    /// for every `y`, so normalised columns do not depend on `y`.
    pub fn column_shape_invariant(&self) -> bool {
        matches!(self, PairFunction::Constant(_) | PairFunction::RankOne { .. })
    }

    /// Identifies which columns `x -> f(x, y)` coincide, for caching.
    pub fn column_key(&self, y: &[f64]) -> ColumnKey {
        match self {
            PairFunction::Constant(_) | PairFunction::RankOne { .. } => ColumnKey::Shared,
            PairFunction::Grid(g) if g.interpolation == Interpolation::PiecewiseConstant => {
                let m = y.len();
                let idx = (0..m).fold(0usize, |acc, a| {
                    let ax = m + a;
                    let n = g.counts[ax];
                    let h = (g.upper[ax] - g.lower[ax]) / n as f64;
                    let r = ((y[a] - g.lower[ax]) / h).floor();
                    acc * n + (r.max(0.0) as usize).min(n - 1)
                });
                ColumnKey::Cell(idx)
            }
            PairFunction::Grid(_) => ColumnKey::Point,
        }
    }

    pub fn sup_abs(&self, domain: &SpatialDomain) -> f64 {
        match self {
            PairFunction::Constant(c) => c.abs(),
            PairFunction::RankOne { scale, profile } => scale.abs() * profile.sup_abs(domain).powi(2),
            PairFunction::Grid(g) => g.max().abs().max(g.min().abs()),
        }
    }

    pub fn min_value(&self) -> Option<f64> {
        match self {
            PairFunction::Constant(c) => Some(*c),
            PairFunction::Grid(g) => Some(g.min()),
            PairFunction::RankOne { .. } => None,
        }
    }
}

/// Connectivity kernel `W` with its uniform bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Graphon {
    pub function: PairFunction,
    pub c_w: f64,
    pub symmetric: bool,
}

impl Graphon {
    pub fn new(function: PairFunction, domain: &SpatialDomain) -> Self {
        let c_w = function.sup_abs(domain);
        Graphon { function, c_w, symmetric: false }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.function.eval(x, y)
    }
}
