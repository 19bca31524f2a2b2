//! Drawing locations from nonnegative densities given by cell values.

use rand::Rng;

use crate::domain::{GridFunction, Point, Sampling, UniformGrid};
use crate::error::{Error, Result};

/// Piecewise-constant density on a uniform grid, not necessarily normalised.
#[derive(Debug, Clone)]
pub struct CellDensity {
    pub grid: UniformGrid,
    pub values: Vec<f64>,
    /// `cumulative[i]` is the mass of cells `< i`; length `len + 1`.
    cumulative: Vec<f64>,
    sup: f64,
}

impl CellDensity {
    pub fn new(grid: UniformGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!("density has {} values, grid has {} cells", values.len(), grid.len())));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Negativity("density must be finite and nonnegative".into()));
        }
        let vol = grid.cell_volume();
        let mut cumulative = Vec::with_capacity(values.len() + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for v in &values {
            acc += v * vol;
            cumulative.push(acc);
        }
        let sup = values.iter().cloned().fold(0.0, f64::max);
        if sup == 0.0 {
            return Err(Error::DegenerateDensity);
        }
        Ok(CellDensity { grid, values, cumulative, sup })
    }

    pub fn from_fn(grid: UniformGrid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(&grid.midpoint(i))).collect();
        CellDensity::new(grid, values)
    }

    pub fn mass(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn sup(&self) -> f64 {
        self.sup
    }

    /// True when all cells carry the same value.
    pub fn is_flat(&self) -> bool {
        let lo = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        self.sup - lo <= 1e-12 * self.sup
    }

    /// Inverse of the normalised cumulative along the only axis (1-d grids).
    pub fn quantile_1d(&self, u: f64) -> f64 {
        let target = u.clamp(0.0, 1.0) * self.mass();
        let mut j = self.cumulative.partition_point(|c| *c <= target);
        if j > self.values.len() {
            j = self.values.len();
            while self.values[j - 1] == 0.0 {
                j -= 1;
            }
        }
        let cell = j - 1;
        let h = self.grid.spacing(0);
        let lower = self.grid.domain.lower[0] + cell as f64 * h;
        let within = ((target - self.cumulative[cell]) / (self.values[cell] * h)).clamp(0.0, 1.0);
        let upper = if cell + 1 == self.values.len() { self.grid.domain.upper[0] } else { lower + h };
        (lower + within * h).min(upper)
    }

    /// Accepts a uniform proposal `x` when `accept * sup < density(x)`.
    pub fn accepts(&self, x: &[f64], accept: f64) -> bool {
        accept * self.sup < self.values[self.grid.cell_of(x)]
    }

    /// Uniform point of the grid's domain from `m` variates.
    pub fn propose(&self, u: &[f64]) -> Point {
        let d = &self.grid.domain;
        (0..d.dim()).map(|a| d.lower[a] + u[a] * d.width(a)).collect()
    }

    /// Inverse CDF in 1-d, accept-reject against the sup otherwise.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let m = self.grid.dim();
        if m == 1 {
            return vec![self.quantile_1d(rng.random())];
        }
        let mut u = vec![0.0; m];
        loop {
            for v in u.iter_mut() {
                *v = rng.random();
            }
            let x = self.propose(&u);
            if self.accepts(&x, rng.random()) {
                return x;
            }
        }
    }
}

/// Draws one location from a midpoint-sampled density using the given
/// uniforms: one in 1-d; in `m` dimensions, consecutive blocks of `m + 1`
/// (proposal then acceptance) until one is accepted.
pub fn sample_location(density: &GridFunction, u: &[f64]) -> Result<Point> {
    if density.sampling != Sampling::Midpoint {
        return Err(Error::Shape("location densities are sampled at cell midpoints".into()));
    }
    let d = CellDensity::new(density.grid.clone(), density.values.clone())?;
    let m = d.grid.dim();
    if m == 1 {
        let v = *u.first().ok_or_else(|| Error::InvalidArgument("no uniform variate supplied".into()))?;
        return Ok(vec![d.quantile_1d(v)]);
    }
    for block in u.chunks_exact(m + 1) {
        let x = d.propose(&block[..m]);
        if d.accepts(&x, block[m]) {
            return Ok(x);
        }
    }
    Err(Error::InvalidArgument("uniform variates exhausted before a proposal was accepted".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SpatialDomain;

    fn line(n: usize) -> UniformGrid {
        UniformGrid::cubic(&SpatialDomain::unit(1), n).unwrap()
    }

    #[test]
    fn inverse_cdf_examples() {
        let g = GridFunction::from_fn(line(1024), Sampling::Midpoint, |x| 2.0 * x[0]);
        assert!((sample_location(&g, &[0.25]).unwrap()[0] - 0.5).abs() < 1e-12);
        let g = GridFunction::from_fn(line(1024), Sampling::Midpoint, |_| 3.0);
        assert!((sample_location(&g, &[0.73]).unwrap()[0] - 0.73).abs() < 1e-12);
        let g = GridFunction::from_fn(line(1024), Sampling::Midpoint, |x| (x[0] >= 0.4 && x[0] <= 0.6) as u8 as f64);
        assert!((sample_location(&g, &[0.5]).unwrap()[0] - 0.5).abs() < 1e-12);
        let g = GridFunction::from_fn(line(8), Sampling::Midpoint, |_| 0.0);
        assert!(matches!(sample_location(&g, &[0.5]), Err(Error::DegenerateDensity)));
    }

    #[test]
    fn quantile_skips_empty_cells_at_the_ends() {
        let d = CellDensity::new(line(4), vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(d.quantile_1d(0.0), 0.25);
        assert_eq!(d.quantile_1d(1.0), 0.75);
    }

    #[test]
    fn accept_reject_uses_blocks() {
        let grid = UniformGrid::cubic(&SpatialDomain::unit(2), 2).unwrap();
        let g = GridFunction::new(grid, Sampling::Midpoint, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        // first proposal lands in an empty cell, second in the supported one
        let x = sample_location(&g, &[0.9, 0.9, 0.0, 0.1, 0.2, 0.5]).unwrap();
        assert_eq!(x, vec![0.1, 0.2]);
    }
}
