//! Quadrature discretization of the offspring operator `T_hom` and the
//! stability diagnostics built on it.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{Region, UniformGrid};
use crate::error::{Error, Result};
use crate::model::ModelSpec;

/// Gelfand estimates at or above this are treated as critical.
pub const NEAR_CRITICAL: f64 = 0.995;
pub const DEFAULT_MAX_POWER: usize = 32;
const POWER_ITER_CAP: usize = 10_000;
const POWER_ITER_TOL: f64 = 1e-13;
const NEUMANN_TERM_CAP: usize = 10_000;

/// `K[i][j] = ||h||_1 c_{x_i} E[B_{x_i x_j}] W(x_i, x_j)` at cell midpoints,
/// each node carrying the cell volume as quadrature weight.
#[derive(Debug, Clone)]
pub struct KernelGrid {
    pub grid: UniformGrid,
    pub weight: f64,
    pub values: DMatrix<f64>,
}

impl KernelGrid {
    /// Wraps an explicit matrix on `grid`.
    pub fn from_matrix(grid: UniformGrid, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != grid.len() || values.ncols() != grid.len() {
            return Err(Error::Shape(format!(
                "kernel matrix is {}x{} but the grid has {} nodes",
                values.nrows(),
                values.ncols(),
                grid.len()
            )));
        }
        let weight = grid.cell_volume();
        Ok(KernelGrid { grid, weight, values })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `K * weight`, the matrix acting on node values.
    pub fn operator(&self) -> DMatrix<f64> {
        &self.values * self.weight
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        self.grid.midpoints()
    }

    fn l1(&self, v: &DVector<f64>) -> f64 {
        v.iter().map(|x| x.abs()).sum::<f64>() * self.weight
    }
}

pub fn discretize_kernel(spec: &ModelSpec, n: usize) -> Result<KernelGrid> {
    if n == 0 {
        return Err(Error::InvalidArgument("kernel grid size must be at least 1".into()));
    }
    let nodes = n.checked_pow(spec.dim() as u32).unwrap_or(usize::MAX);
    let entries = nodes.saturating_mul(nodes);
    if entries > spec.resolution.grid_cap {
        return Err(Error::GridTooLarge { entries, cap: spec.resolution.grid_cap });
    }
    let grid = UniformGrid::cubic(&spec.domain, n)?;
    let pts = grid.midpoints();
    let l1 = spec.excitation.l1_norm();
    let rows: Vec<f64> = (0..nodes)
        .into_par_iter()
        .flat_map_iter(|i| {
            let pts = &pts;
            (0..nodes).map(move |j| l1 * spec.kernel_density(&pts[i], &pts[j]))
        })
        .collect();
    KernelGrid::from_matrix(grid, DMatrix::from_row_slice(nodes, nodes, &rows))
}

/// `(Tf)(x_i) = sum_j K[i][j] f(x_j) weight_j`
pub fn apply_kernel(k: &KernelGrid, f: &[f64]) -> Result<Vec<f64>> {
    if f.len() != k.len() {
        return Err(Error::Shape(format!("function has {} values, kernel has {} nodes", f.len(), k.len())));
    }
    let v = DVector::from_column_slice(f);
    Ok((&k.values * v * k.weight).as_slice().to_vec())
}

/// Largest weighted column sum, i.e. the induced `L^1` norm.
pub fn operator_norm_l1(k: &KernelGrid) -> f64 {
    matrix_l1_norm(&k.values) * k.weight
}

fn matrix_l1_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralEstimate {
    pub rho_power_iteration: f64,
    pub power_converged: bool,
    pub power_iterations: usize,
    /// `||T^n||^{1/n}` for `n = 1..=max_power`.
    pub rho_gelfand_sequence: Vec<f64>,
    pub grid_size: usize,
}

impl SpectralEstimate {
    /// Smallest Gelfand term; an upper bound on the spectral radius.
    pub fn gelfand_bound(&self) -> f64 {
        self.rho_gelfand_sequence.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Power-iteration estimate, or `no-convergence`.
    pub fn rho(&self) -> Result<f64> {
        if self.power_converged {
            Ok(self.rho_power_iteration)
        } else {
            Err(Error::NoConvergence(format!(
                "power iteration did not settle in {} steps (last estimate {})",
                self.power_iterations, self.rho_power_iteration
            )))
        }
    }

    /// Best available estimate: power iteration when it converged, else the Gelfand bound.
    pub fn best(&self) -> f64 {
        if self.power_converged {
            self.rho_power_iteration
        } else {
            self.gelfand_bound()
        }
    }
}

/// Gelfand sequence via explicit matrix powers, power iteration from the constant seed.
pub fn spectral_radius(k: &KernelGrid, max_power: usize) -> Result<SpectralEstimate> {
    if max_power == 0 {
        return Err(Error::InvalidArgument("max_power must be at least 1".into()));
    }
    let m = k.operator();
    let mut gelfand = Vec::with_capacity(max_power);
    let mut power = m.clone();
    for n in 1..=max_power {
        if n > 1 {
            power = &power * &m;
        }
        gelfand.push(matrix_l1_norm(&power).powf(1.0 / n as f64));
    }

    let mut v = DVector::from_element(k.len(), 1.0);
    let mut rho = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=POWER_ITER_CAP {
        iterations = it;
        let norm_v = k.l1(&v);
        let next = &m * &v;
        let norm_next = k.l1(&next);
        if norm_next == 0.0 {
            rho = 0.0;
            converged = true;
            break;
        }
        let est = norm_next / norm_v;
        let settled = it > 1 && (est - rho).abs() <= POWER_ITER_TOL * est.max(1e-300);
        rho = est;
        v = next / norm_next;
        if settled {
            converged = true;
            break;
        }
    }
    Ok(SpectralEstimate {
        rho_power_iteration: rho,
        power_converged: converged,
        power_iterations: iterations,
        rho_gelfand_sequence: gelfand,
        grid_size: k.grid.counts[0],
    })
}

fn require_subcritical(est: &SpectralEstimate) -> Result<f64> {
    let r = est.gelfand_bound();
    if est.power_converged && est.rho_power_iteration >= 1.0 {
        return Err(Error::UnstableModel(format!("spectral radius {} >= 1", est.rho_power_iteration)));
    }
    if r >= NEAR_CRITICAL {
        return Err(Error::UnstableModel(format!("Gelfand estimate {r} is not safely below 1")));
    }
    Ok(r)
}

#[derive(Debug, Clone, Serialize)]
pub struct StationaryRate {
    pub values: Vec<f64>,
    /// `sup_i |lambda_bar - lambda_inf - K lambda_bar|(x_i)`
    pub residual: f64,
    pub terms_used: usize,
}

impl StationaryRate {
    /// `lambda_bar(A)` by midpoint quadrature.
    pub fn mass(&self, k: &KernelGrid, region: &Region) -> f64 {
        region.cell_fractions(&k.grid).iter().zip(&self.values).map(|(f, v)| f * v).sum::<f64>() * k.weight
    }
}

/// Baseline sampled at the kernel nodes.
pub fn baseline_on_grid(spec: &ModelSpec, k: &KernelGrid) -> Vec<f64> {
    k.nodes().iter().map(|x| spec.baseline.eval(x)).collect()
}

/// Neumann series `sum_n T^n lambda_inf`, truncated once the geometric tail
/// bound falls below `tol` in both `L^1` and sup norm.
pub fn stationary_rate(k: &KernelGrid, baseline: &[f64], tol: f64) -> Result<StationaryRate> {
    if baseline.len() != k.len() {
        return Err(Error::Shape(format!("baseline has {} values, kernel has {} nodes", baseline.len(), k.len())));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let est = spectral_radius(k, DEFAULT_MAX_POWER)?;
    let r = require_subcritical(&est)?;
    let tail = 1.0 / (1.0 - r);
    let m = k.operator();
    let b = DVector::from_column_slice(baseline);
    let mut sum = b.clone();
    let mut term = b.clone();
    let mut terms = 1;
    loop {
        term = &m * &term;
        sum += &term;
        terms += 1;
        let sup = term.amax();
        if k.l1(&term) * r * tail < tol && sup * r * tail < tol {
            break;
        }
        if terms >= NEUMANN_TERM_CAP {
            return Err(Error::SlowConvergence(format!("Neumann series needs more than {NEUMANN_TERM_CAP} terms")));
        }
    }
    let residual = (&sum - &b - &m * &sum).amax();
    Ok(StationaryRate { values: sum.as_slice().to_vec(), residual, terms_used: terms })
}

/// Upper bound on `sum_n ||T^n||`, the expected cluster size.
pub fn cluster_size_bound(k: &KernelGrid) -> Result<f64> {
    let est = spectral_radius(k, 1)?;
    let m = k.operator();
    // ||T|| alone settles subcriticality unless it is close to 1
    if matrix_l1_norm(&m) >= NEAR_CRITICAL {
        let full = spectral_radius(k, DEFAULT_MAX_POWER)?;
        require_subcritical(&full)?;
    } else {
        require_subcritical(&est)?;
    }
    // sum_{n>=0} ||T^n|| <= (sum_{n<N} ||T^n||) / (1 - ||T^N||) whenever ||T^N|| < 1
    let mut best = f64::INFINITY;
    let mut partial = 1.0;
    let mut power = DMatrix::identity(k.len(), k.len());
    for _ in 1..=4 * DEFAULT_MAX_POWER {
        power = &power * &m;
        let norm = matrix_l1_norm(&power);
        if norm < 1.0 {
            best = best.min(partial / (1.0 - norm));
        }
        if norm == 0.0 || norm < 1e-16 * partial {
            break;
        }
        partial += norm;
    }
    if best.is_finite() {
        Ok(best.max(1.0))
    } else {
        Err(Error::UnstableModel("operator powers never contract".into()))
    }
}

/// `int_A ((I - T)^{-1} lambda_bar^{1/2})(x) dx` with `A` given as per-node weights in `[0, 1]`.
pub fn fclt_sigma(k: &KernelGrid, lambda_bar: &StationaryRate, mask: &[f64]) -> Result<f64> {
    if mask.len() != k.len() || lambda_bar.values.len() != k.len() {
        return Err(Error::Shape("mask and stationary rate must live on the kernel nodes".into()));
    }
    if mask.iter().all(|w| *w == 0.0) {
        return Ok(0.0);
    }
    let a = DMatrix::identity(k.len(), k.len()) - k.operator();
    let rhs = DVector::from_iterator(k.len(), lambda_bar.values.iter().map(|v| v.max(0.0).sqrt()));
    let v = a
        .lu()
        .solve(&rhs)
        .filter(|v| v.iter().all(|x| x.is_finite()))
        .ok_or_else(|| Error::UnstableModel("I - T is singular on the grid".into()))?;
    Ok(mask.iter().zip(v.iter()).map(|(m, x)| m * x).sum::<f64>() * k.weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PairFunction, Profile};

    fn rank_one() -> ModelSpec {
        ModelSpec::constant(1.0, 0.5).with_graphon(PairFunction::RankOne {
            scale: 1.5,
            profile: Profile::Monomial { coef: 1.0, powers: vec![1] },
        })
    }

    /// Plain Gaussian elimination with partial pivoting.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap()).unwrap();
            a.swap(c, p);
            b.swap(c, p);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    fn resolvent_oracle(k: &KernelGrid, rhs: &[f64]) -> Vec<f64> {
        let n = k.len();
        let a = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64 - k.values[(i, j)] * k.weight).collect()).collect();
        dense_solve(a, rhs.to_vec())
    }

    #[test]
    fn xy_kernel_at_two_nodes() {
        let spec = ModelSpec::constant(1.0, 0.5).with_graphon(PairFunction::RankOne {
            scale: 1.0,
            profile: Profile::Monomial { coef: 1.0, powers: vec![1] },
        });
        let k = discretize_kernel(&spec, 2).unwrap();
        let expect = [[0.0625, 0.1875], [0.1875, 0.5625]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((k.values[(i, j)] - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn constant_and_zero_kernels() {
        let k = discretize_kernel(&ModelSpec::constant(1.0, 0.5), 16).unwrap();
        assert!(k.values.iter().all(|v| *v == 0.5));
        assert!((operator_norm_l1(&k) - 0.5).abs() < 1e-12);
        let est = spectral_radius(&k, 8).unwrap();
        assert!((est.rho().unwrap() - 0.5).abs() < 1e-12);
        assert!(est.rho_gelfand_sequence.iter().all(|g| (g - 0.5).abs() < 1e-12));
        let lb = stationary_rate(&k, &[1.0; 16], 1e-9).unwrap();
        assert!(lb.values.iter().all(|v| (v - 2.0).abs() < 1e-8));
        assert!((cluster_size_bound(&k).unwrap() - 2.0).abs() < 1e-12);
        let sigma = fclt_sigma(&k, &lb, &[1.0; 16]).unwrap();
        assert!((sigma - 2.0 * 2f64.sqrt()).abs() < 1e-6);
        assert_eq!(fclt_sigma(&k, &lb, &[0.0; 16]).unwrap(), 0.0);

        let z = discretize_kernel(&ModelSpec::constant(1.0, 0.0), 8).unwrap();
        assert_eq!(operator_norm_l1(&z), 0.0);
        assert_eq!(spectral_radius(&z, 4).unwrap().rho().unwrap(), 0.0);
        assert_eq!(cluster_size_bound(&z).unwrap(), 1.0);
        let lb = stationary_rate(&z, &[1.0; 8], 1e-9).unwrap();
        assert_eq!(lb.values, vec![1.0; 8]);
        assert!((fclt_sigma(&z, &lb, &[1.0; 8]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(apply_kernel(&z, &[3.0; 8]).unwrap(), vec![0.0; 8]);
    }

    #[test]
    fn rank_one_kernel_against_analytic_and_dense_oracles() {
        let k = discretize_kernel(&rank_one(), 256).unwrap();
        let nodes = k.nodes();
        let tf = apply_kernel(&k, &vec![1.0; 256]).unwrap();
        let err = nodes.iter().zip(&tf).map(|(x, v)| (v - 0.75 * x[0]).abs()).fold(0.0, f64::max);
        assert!(err < 1e-3);
        assert!((operator_norm_l1(&k) - 0.75).abs() < 1e-2);

        let est = spectral_radius(&k, 16).unwrap();
        let rho = est.rho().unwrap();
        assert!((rho - 0.5).abs() < 1e-3);
        // dominant eigenvalue of the symmetric quadrature matrix
        let eig = k.operator().symmetric_eigen().eigenvalues.max();
        assert!((rho - eig).abs() < 1e-10);
        assert!(est.rho_gelfand_sequence.iter().all(|g| *g >= rho - 1e-12 && *g <= operator_norm_l1(&k) + 1e-12));

        let base = vec![1.0; 256];
        let lb = stationary_rate(&k, &base, 1e-10).unwrap();
        assert!(lb.residual <= 1e-10);
        let oracle = resolvent_oracle(&k, &base);
        for ((x, v), o) in nodes.iter().zip(&lb.values).zip(&oracle) {
            assert!((v - o).abs() < 1e-9);
            assert!((v - (1.0 + 1.5 * x[0])).abs() < 1e-3);
        }
        let bound = cluster_size_bound(&k).unwrap();
        assert!((2.0..=4.0).contains(&bound), "{bound}");
    }

    #[test]
    fn grid_cap_and_shapes() {
        let mut spec = ModelSpec::constant(1.0, 0.5);
        spec.resolution.grid_cap = 100;
        assert!(matches!(discretize_kernel(&spec, 11), Err(Error::GridTooLarge { .. })));
        let k = discretize_kernel(&spec, 10).unwrap();
        assert!(matches!(apply_kernel(&k, &[1.0; 3]), Err(Error::Shape(_))));
    }

    #[test]
    fn supercritical_is_refused() {
        let k = discretize_kernel(&ModelSpec::constant(1.0, 1.5), 8).unwrap();
        assert!(matches!(stationary_rate(&k, &[1.0; 8], 1e-6), Err(Error::UnstableModel(_))));
        assert!(matches!(cluster_size_bound(&k), Err(Error::UnstableModel(_))));
        assert!((spectral_radius(&k, 4).unwrap().rho().unwrap() - 1.5).abs() < 1e-12);
    }
}
