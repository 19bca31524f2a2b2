//! Spatial domain, uniform grids on it, and grid-valued functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Vec<f64>;

/// Compact hyperrectangle `[lower, upper]` in `R^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SpatialDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let d = SpatialDomain { lower, upper };
        d.check()?;
        Ok(d)
    }

    pub fn unit(dim: usize) -> Self {
        SpatialDomain { lower: vec![0.0; dim], upper: vec![1.0; dim] }
    }

    pub fn check(&self) -> Result<()> {
        if self.lower.is_empty() || self.lower.len() != self.upper.len() {
            return Err(Error::InvalidParameter(format!(
                "domain bounds must be nonempty and of equal length (got {} and {})",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (a, b) in self.lower.iter().zip(&self.upper) {
            if !a.is_finite() || !b.is_finite() || a >= b {
                return Err(Error::InvalidParameter(format!("degenerate domain axis [{a}, {b}]")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i)).product()
    }

    pub fn diameter(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i).powi(2)).sum::<f64>().sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    pub fn require(&self, x: &[f64]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutOfDomain(x.to_vec()))
        }
    }
}

/// Uniform tensor grid of cells over a domain. Cells are indexed row-major
/// with the first axis slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformGrid {
    pub domain: SpatialDomain,
    pub counts: Vec<usize>,
}

impl UniformGrid {
    pub fn new(domain: SpatialDomain, counts: Vec<usize>) -> Result<Self> {
        if counts.len() != domain.dim() || counts.contains(&0) {
            return Err(Error::Shape(format!(
                "grid counts {counts:?} incompatible with a {}-dimensional domain",
                domain.dim()
            )));
        }
        Ok(UniformGrid { domain, counts })
    }

    /// Same number of cells along every axis.
    pub fn cubic(domain: &SpatialDomain, n: usize) -> Result<Self> {
        Self::new(domain.clone(), vec![n; domain.dim()])
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.domain.width(axis) / self.counts[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = flat % self.counts[a];
            flat /= self.counts[a];
        }
        idx
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.counts).fold(0, |acc, (i, n)| acc * n + i)
    }

    pub fn midpoint(&self, flat: usize) -> Point {
        self.unflatten(flat)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.domain.lower[a] + (i as f64 + 0.5) * self.spacing(a))
            .collect()
    }

    pub fn midpoints(&self) -> Vec<Point> {
        (0..self.len()).map(|i| self.midpoint(i)).collect()
    }

    /// Lower and upper corners of a cell.
    pub fn cell_bounds(&self, flat: usize) -> (Point, Point) {
        let idx = self.unflatten(flat);
        let lo: Point =
            idx.iter().enumerate().map(|(a, &i)| self.domain.lower[a] + i as f64 * self.spacing(a)).collect();
        let hi: Point = idx
            .iter()
            .enumerate()
            .map(|(a, &i)| {
                if i + 1 == self.counts[a] {
                    self.domain.upper[a]
                } else {
                    self.domain.lower[a] + (i + 1) as f64 * self.spacing(a)
                }
            })
            .collect();
        (lo, hi)
    }

    /// Index of the cell containing `x`; points on the upper boundary belong
    /// to the last cell.
    pub fn cell_of(&self, x: &[f64]) -> usize {
        let idx: Vec<usize> = (0..self.dim())
            .map(|a| {
                let r = ((x[a] - self.domain.lower[a]) / self.spacing(a)).floor();
                (r.max(0.0) as usize).min(self.counts[a] - 1)
            })
            .collect();
        self.flatten(&idx)
    }

    pub fn vertex_count(&self) -> usize {
        self.counts.iter().map(|n| n + 1).product()
    }

    pub fn vertex(&self, mut flat: usize) -> Point {
        let mut x = vec![0.0; self.dim()];
        for a in (0..self.dim()).rev() {
            let i = flat % (self.counts[a] + 1);
            flat /= self.counts[a] + 1;
            x[a] = if i == self.counts[a] {
                self.domain.upper[a]
            } else {
                self.domain.lower[a] + i as f64 * self.spacing(a)
            };
        }
        x
    }
}

/// Where the samples of a [`GridFunction`] live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// One value per cell, at its midpoint.
    Midpoint,
    /// One value per grid vertex, boundaries included.
    Vertex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: UniformGrid,
    pub sampling: Sampling,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: UniformGrid, sampling: Sampling, values: Vec<f64>) -> Result<Self> {
        let expected = match sampling {
            Sampling::Midpoint => grid.len(),
            Sampling::Vertex => grid.vertex_count(),
        };
        if values.len() != expected {
            return Err(Error::Shape(format!("expected {expected} grid values, got {}", values.len())));
        }
        Ok(GridFunction { grid, sampling, values })
    }

    pub fn from_fn(grid: UniformGrid, sampling: Sampling, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = match sampling {
            Sampling::Midpoint => (0..grid.len()).map(|i| f(&grid.midpoint(i))).collect(),
            Sampling::Vertex => (0..grid.vertex_count()).map(|i| f(&grid.vertex(i))).collect(),
        };
        GridFunction { grid, sampling, values }
    }

    /// Counts of samples along each axis.
    pub fn shape(&self) -> Vec<usize> {
        match self.sampling {
            Sampling::Midpoint => self.grid.counts.clone(),
            Sampling::Vertex => self.grid.counts.iter().map(|n| n + 1).collect(),
        }
    }

    /// Midpoint rule for cell samples, tensor trapezoid for vertex samples.
    pub fn integral(&self) -> f64 {
        match self.sampling {
            Sampling::Midpoint => self.values.iter().sum::<f64>() * self.grid.cell_volume(),
            Sampling::Vertex => {
                let shape = self.shape();
                let mut total = 0.0;
                for (flat, v) in self.values.iter().enumerate() {
                    let mut rem = flat;
                    let mut w = 1.0;
                    for a in (0..shape.len()).rev() {
                        let i = rem % shape[a];
                        rem /= shape[a];
                        if i == 0 || i + 1 == shape[a] {
                            w *= 0.5;
                        }
                    }
                    total += w * v;
                }
                total * self.grid.cell_volume()
            }
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Measurable set used for counting and integrating: the whole domain, the
/// empty set, or an axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Region {
    Whole,
    Empty,
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl Region {
    pub fn interval(a: f64, b: f64) -> Self {
        Region::Box { lower: vec![a], upper: vec![b] }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::Whole => true,
            Region::Empty => false,
            Region::Box { lower, upper } => {
                x.len() == lower.len() && x.iter().zip(lower.iter().zip(upper)).all(|(v, (a, b))| v >= a && v <= b)
            }
        }
    }

    /// Fraction of each cell of `grid` covered by the region.
    pub fn cell_fractions(&self, grid: &UniformGrid) -> Vec<f64> {
        match self {
            Region::Whole => vec![1.0; grid.len()],
            Region::Empty => vec![0.0; grid.len()],
            Region::Box { lower, upper } => (0..grid.len())
                .map(|i| {
                    let (lo, hi) = grid.cell_bounds(i);
                    let mut frac = 1.0;
                    for a in 0..grid.dim() {
                        let (l, u) = (
                            lower.get(a).copied().unwrap_or(f64::NEG_INFINITY),
                            upper.get(a).copied().unwrap_or(f64::INFINITY),
                        );
                        let overlap = (hi[a].min(u) - lo[a].max(l)).max(0.0);
                        frac *= overlap / (hi[a] - lo[a]);
                    }
                    frac
                })
                .collect(),
        }
    }

    /// Lebesgue measure of the region intersected with the domain.
    pub fn measure(&self, domain: &SpatialDomain) -> f64 {
        match self {
            Region::Whole => domain.volume(),
            Region::Empty => 0.0,
            Region::Box { lower, upper } => (0..domain.dim())
                .map(|a| (domain.upper[a].min(upper[a]) - domain.lower[a].max(lower[a])).max(0.0))
                .product(),
        }
    }

    pub fn check(&self, domain: &SpatialDomain) -> Result<()> {
        if let Region::Box { lower, upper } = self {
            if lower.len() != domain.dim() || upper.len() != domain.dim() {
                return Err(Error::DomainMismatch(format!(
                    "region has dimension {} but the domain has {}",
                    lower.len(),
                    domain.dim()
                )));
            }
            if lower.iter().zip(upper).any(|(a, b)| !(a <= b)) {
                return Err(Error::InvalidArgument("region lower bound exceeds upper bound".into()));
            }
        }
        Ok(())
    }
}

/// Values on a uniform cell grid over an arbitrary box, with either
/// piecewise-constant or multilinear interpolation between cell midpoints.
/// Backs grid-valued model ingredients: a profile uses `m` axes, a pair
/// function `(x, y)` uses `2m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
    pub values: Vec<f64>,
    pub interpolation: Interpolation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    #[default]
    PiecewiseConstant,
    Multilinear,
}

impl CellGrid {
    pub fn check(&self) -> Result<()> {
        let k = self.counts.len();
        if k == 0 || self.lower.len() != k || self.upper.len() != k {
            return Err(Error::Shape("grid bounds and counts must share one dimension".into()));
        }
        let n: usize = self.counts.iter().product();
        if n != self.values.len() || self.counts.contains(&0) {
            return Err(Error::Shape(format!(
                "grid counts {:?} require {n} values, found {}",
                self.counts,
                self.values.len()
            )));
        }
        if self.lower.iter().zip(&self.upper).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidParameter("grid box is degenerate".into()));
        }
        Ok(())
    }

    fn index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.counts).fold(0, |acc, (i, n)| acc * n + i)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let k = self.counts.len();
        match self.interpolation {
            Interpolation::PiecewiseConstant => {
                let idx: Vec<usize> = (0..k)
                    .map(|a| {
                        let h = (self.upper[a] - self.lower[a]) / self.counts[a] as f64;
                        let r = ((x[a] - self.lower[a]) / h).floor();
                        (r.max(0.0) as usize).min(self.counts[a] - 1)
                    })
                    .collect();
                self.values[self.index(&idx)]
            }
            Interpolation::Multilinear => {
                let mut base = vec![0usize; k];
                let mut frac = vec![0.0; k];
                for a in 0..k {
                    let n = self.counts[a];
                    let h = (self.upper[a] - self.lower[a]) / n as f64;
                    let s = ((x[a] - self.lower[a]) / h - 0.5).clamp(0.0, (n - 1) as f64);
                    let i = (s.floor() as usize).min(n.saturating_sub(2));
                    base[a] = i;
                    frac[a] = if n == 1 { 0.0 } else { s - i as f64 };
                }
                let mut total = 0.0;
                let mut idx = vec![0usize; k];
                for corner in 0..(1usize << k) {
                    let mut w = 1.0;
                    for a in 0..k {
                        let up = (corner >> a) & 1 == 1;
                        if self.counts[a] == 1 {
                            if up {
                                w = 0.0;
                            }
                            idx[a] = 0;
                            continue;
                        }
                        idx[a] = base[a] + up as usize;
                        w *= if up { frac[a] } else { 1.0 - frac[a] };
                    }
                    if w != 0.0 {
                        total += w * self.values[self.index(&idx)];
                    }
                }
                total
            }
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}
