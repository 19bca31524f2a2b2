//! Distance between marked spatial realizations, total variation of grid
//! functions, and the partition-averaging inequality check.

use serde::{Deserialize, Serialize};

use crate::cluster_sim::{Event, Realization};
use crate::domain::{GridFunction, Sampling, UniformGrid};
use crate::error::{Error, Result};
use crate::model::{MarkModel, ModelSpec};
use crate::prelimit::Partition;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Matching {
    /// Events pair up through the coupling tag. Untagged realizations pair
    /// by id when the times are equal.
    SharedIds,
    /// Greedy nearest-time pairing within `epsilon`, ties to the lower index.
    /// An extension for uncoupled realizations.
    TimeTolerance { epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DistanceBreakdown {
    pub simultaneous_location_term: f64,
    pub simultaneous_mark_term: f64,
    pub nonsimultaneous_term: f64,
    pub total: f64,
    pub matched: usize,
}

/// Mark functions `B = xi b(., y)` of one realization.
struct MarkSide<'a> {
    marks: &'a MarkModel,
}

impl MarkSide<'_> {
    fn constant(&self) -> Option<f64> {
        match self.marks {
            MarkModel::Unmarked => Some(1.0),
            MarkModel::ScaledProfile { profile, .. } if profile.is_constant() => Some(profile.eval(&[], &[])),
            _ => None,
        }
    }

    fn value(&self, x: &[f64], e: &Event) -> f64 {
        match self.marks {
            MarkModel::Unmarked => 1.0,
            MarkModel::ScaledProfile { profile, .. } => e.mark_scalar * profile.eval(x, &e.location),
        }
    }
}

struct Quadrature {
    points: Vec<Vec<f64>>,
    weight: f64,
    volume: f64,
}

impl Quadrature {
    fn l1(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.points.iter().map(|x| f(x).abs()).sum::<f64>() * self.weight
    }
}

fn norm(y: &[f64]) -> f64 {
    y.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn mark_scale(side: &MarkSide, e: &Event) -> f64 {
    match side.marks {
        MarkModel::Unmarked => 1.0,
        _ => e.mark_scalar,
    }
}

fn mark_diff(q: &Quadrature, a: (&MarkSide, &Event), b: (&MarkSide, &Event)) -> f64 {
    if let (Some(ca), Some(cb)) = (a.0.constant(), b.0.constant()) {
        return (mark_scale(a.0, a.1) * ca - mark_scale(b.0, b.1) * cb).abs() * q.volume;
    }
    q.l1(|x| a.0.value(x, a.1) - b.0.value(x, b.1))
}

fn mark_norm(q: &Quadrature, a: (&MarkSide, &Event)) -> f64 {
    if let Some(c) = a.0.constant() {
        return (mark_scale(a.0, a.1) * c).abs() * q.volume;
    }
    q.l1(|x| a.0.value(x, a.1))
}

fn sorted_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

fn pairs_by_key(n: &Realization, m: &Realization) -> Vec<(usize, usize)> {
    let tagged = n.events.iter().chain(&m.events).any(|e| e.shared.is_some());
    let key = |e: &Event| if tagged { e.shared } else { Some(e.id) };
    let index: std::collections::HashMap<u64, usize> =
        m.events.iter().enumerate().filter_map(|(j, e)| key(e).map(|k| (k, j))).collect();
    n.events
        .iter()
        .enumerate()
        .filter_map(|(i, e)| {
            let j = *index.get(&key(e)?)?;
            (tagged || e.time == m.events[j].time).then_some((i, j))
        })
        .collect()
}

fn pairs_by_time(n: &Realization, m: &Realization, eps: f64) -> Vec<(usize, usize)> {
    let mut mi: Vec<usize> = (0..m.events.len()).collect();
    mi.sort_by(|a, b| m.events[*a].time.total_cmp(&m.events[*b].time));
    let mut cand = Vec::new();
    for (i, e) in n.events.iter().enumerate() {
        let start = mi.partition_point(|j| m.events[*j].time < e.time - eps);
        for &j in &mi[start..] {
            let dt = (m.events[j].time - e.time).abs();
            if m.events[j].time > e.time + eps {
                break;
            }
            cand.push((dt, i, j));
        }
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut used_n, mut used_m) = (vec![false; n.events.len()], vec![false; m.events.len()]);
    let mut out = Vec::new();
    for (_, i, j) in cand {
        if !used_n[i] && !used_m[j] {
            used_n[i] = true;
            used_m[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// `d(N, M) = sum_simultaneous (|y - y'| + ||B - B'||_1) + sum_rest (1 + |y| + ||B||_1)`.
/// Each realization is read with the marks of its own model; the two models
/// must share a domain.
pub fn pp_distance(
    spec_n: &ModelSpec,
    n: &Realization,
    spec_m: &ModelSpec,
    m: &Realization,
    matching: Matching,
) -> Result<DistanceBreakdown> {
    if spec_n.domain != spec_m.domain {
        return Err(Error::DomainMismatch(format!(
            "realizations live on {}-d and {}-d domains",
            spec_n.dim(),
            spec_m.dim()
        )));
    }
    for e in n.events.iter().chain(&m.events) {
        if e.location.len() != spec_n.dim() {
            return Err(Error::DomainMismatch(format!("event {} has a {}-d location", e.id, e.location.len())));
        }
    }
    let grid = UniformGrid::cubic(&spec_n.domain, spec_n.resolution.kernel_n)?;
    let q = Quadrature { points: grid.midpoints(), weight: grid.cell_volume(), volume: spec_n.domain.volume() };
    let (sn, sm) = (MarkSide { marks: &spec_n.marks }, MarkSide { marks: &spec_m.marks });
    let pairs = match matching {
        Matching::SharedIds => pairs_by_key(n, m),
        Matching::TimeTolerance { epsilon } => {
            if !(epsilon >= 0.0) {
                return Err(Error::InvalidArgument(format!("time tolerance must be nonnegative, got {epsilon}")));
            }
            pairs_by_time(n, m, epsilon)
        }
    };
    let mut out = DistanceBreakdown { matched: pairs.len(), ..Default::default() };
    let (mut used_n, mut used_m) = (vec![false; n.len()], vec![false; m.len()]);
    let (mut loc, mut mark) = (Vec::with_capacity(pairs.len()), Vec::with_capacity(pairs.len()));
    for &(i, j) in &pairs {
        used_n[i] = true;
        used_m[j] = true;
        let (a, b) = (&n.events[i], &m.events[j]);
        let dy: Vec<f64> = a.location.iter().zip(&b.location).map(|(u, v)| u - v).collect();
        loc.push(norm(&dy));
        mark.push(mark_diff(&q, (&sn, a), (&sm, b)));
    }
    // sums taken in value order so that swapping the arguments is exact
    out.simultaneous_location_term = sorted_sum(loc);
    out.simultaneous_mark_term = sorted_sum(mark);
    let mut rest = [0.0; 2];
    for (r, (side, real, used)) in rest.iter_mut().zip([(&sn, n, &used_n), (&sm, m, &used_m)]) {
        *r = sorted_sum(
            real.events
                .iter()
                .zip(used)
                .filter(|(_, u)| !**u)
                .map(|(e, _)| 1.0 + norm(&e.location) + mark_norm(&q, (side, e)))
                .collect(),
        );
    }
    out.nonsimultaneous_term = rest[0] + rest[1];
    out.total = out.simultaneous_location_term + out.simultaneous_mark_term + out.nonsimultaneous_term;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TvMode {
    /// Sum of absolute increments; 1-d only.
    Exact1d,
    /// Sum over axes of the line variations integrated over the transverse
    /// directions. A surrogate in more than one dimension.
    DirectionalSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvResult {
    pub value: f64,
    pub surrogate: bool,
}

fn sample_counts(f: &GridFunction) -> Vec<usize> {
    match f.sampling {
        Sampling::Midpoint => f.grid.counts.clone(),
        Sampling::Vertex => f.grid.counts.iter().map(|c| c + 1).collect(),
    }
}

pub fn total_variation(f: &GridFunction, mode: TvMode) -> Result<TvResult> {
    let m = f.grid.dim();
    if mode == TvMode::Exact1d && m != 1 {
        return Err(Error::Shape(format!("exact total variation needs a 1-d grid, got {m}-d")));
    }
    let counts = sample_counts(f);
    let mut strides = vec![1usize; m];
    for a in (0..m.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * counts[a + 1];
    }
    let vertex = f.sampling == Sampling::Vertex;
    let mut value = 0.0;
    for a in 0..m {
        for (idx, v) in f.values.iter().enumerate() {
            if (idx / strides[a]) % counts[a] + 1 >= counts[a] {
                continue;
            }
            // transverse measure carried by this line; vertex samples use trapezoid weights
            let transverse: f64 = (0..m)
                .filter(|b| *b != a)
                .map(|b| {
                    let i = (idx / strides[b]) % counts[b];
                    let edge = vertex && (i == 0 || i + 1 == counts[b]);
                    f.grid.spacing(b) * if edge { 0.5 } else { 1.0 }
                })
                .product();
            value += (f.values[idx + strides[a]] - v).abs() * transverse;
        }
    }
    Ok(TvResult { value, surrogate: m > 1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoincareRecord {
    /// `||f - f^d||_1`
    pub lhs: f64,
    /// `0.5 Var(f) mesh`
    pub rhs: f64,
    pub variation: f64,
    pub mesh: f64,
    pub holds: bool,
    pub surrogate: bool,
}

const POINCARE_SLACK: f64 = 1e-12;

/// `int_a^b |l(x) - c| dx` for the linear `l` with end values `p`, `q`.
fn abs_linear(p: f64, q: f64, c: f64, h: f64) -> f64 {
    let (p, q) = (p - c, q - c);
    if p * q >= 0.0 {
        0.5 * h * (p.abs() + q.abs())
    } else {
        0.5 * h * (p * p + q * q) / (p.abs() + q.abs())
    }
}

/// Checks `||f - f^d||_1 <= Var(f) mesh / 2` for a grid function, exactly for
/// 1-d vertex samples (piecewise-linear) and midpoint samples (piecewise
/// constant). Multi-dimensional vertex samples are reduced to cell averages.
pub fn poincare_check(f: &GridFunction, part: &Partition) -> Result<PoincareRecord> {
    let m = f.grid.dim();
    if f.grid.domain != part.grid.domain {
        return Err(Error::DomainMismatch("function and partition live on different domains".into()));
    }
    for (a, (n, c)) in f.grid.counts.iter().zip(part.counts()).enumerate() {
        if *n < 4 * c || n % c != 0 {
            return Err(Error::ResolutionTooCoarse(format!(
                "axis {a}: {n} grid cells must be a multiple of and at least 4x the {c} partition cells"
            )));
        }
    }
    let h = f.grid.cell_volume();
    let (lhs, variation, surrogate) = if m == 1 && f.sampling == Sampling::Vertex {
        let r = f.grid.counts[0] / part.counts()[0];
        let v = &f.values;
        let mut lhs = 0.0;
        for k in 0..part.counts()[0] {
            let seg = &v[k * r..=(k + 1) * r];
            let mean = seg.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum::<f64>() / r as f64;
            lhs += seg.windows(2).map(|w| abs_linear(w[0], w[1], mean, h)).sum::<f64>();
        }
        (lhs, total_variation(f, TvMode::Exact1d)?.value, false)
    } else {
        let cells = if f.sampling == Sampling::Midpoint { f.clone() } else { corner_average(f) };
        let mut sums = vec![0.0; part.d()];
        let mut counts = vec![0usize; part.d()];
        let owner: Vec<usize> = (0..cells.grid.len()).map(|i| part.cell_of(&cells.grid.midpoint(i))).collect();
        for (i, v) in cells.values.iter().enumerate() {
            sums[owner[i]] += v;
            counts[owner[i]] += 1;
        }
        let lhs: f64 = cells
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| (v - sums[owner[i]] / counts[owner[i]] as f64).abs())
            .sum::<f64>()
            * h;
        let tv = total_variation(&cells, TvMode::DirectionalSum)?;
        (lhs, tv.value, tv.surrogate)
    };
    let mesh = part.mesh();
    let rhs = 0.5 * variation * mesh;
    Ok(PoincareRecord { lhs, rhs, variation, mesh, holds: lhs <= rhs + POINCARE_SLACK * (1.0 + rhs), surrogate })
}

fn corner_average(f: &GridFunction) -> GridFunction {
    let m = f.grid.dim();
    let vcounts: Vec<usize> = f.grid.counts.iter().map(|c| c + 1).collect();
    let values = (0..f.grid.len())
        .map(|i| {
            let idx = f.grid.unflatten(i);
            let mut s = 0.0;
            for corner in 0..(1usize << m) {
                let mut flat = 0;
                for a in 0..m {
                    flat = flat * vcounts[a] + idx[a] + ((corner >> a) & 1);
                }
                s += f.values[flat];
            }
            s / (1usize << m) as f64
        })
        .collect();
    GridFunction { grid: f.grid.clone(), sampling: Sampling::Midpoint, values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SpatialDomain;
    use crate::prelimit::{build_partition, PartitionScheme};

    fn ev(id: u64, t: f64, y: f64, shared: Option<u64>) -> Event {
        Event {
            id,
            time: t,
            location: vec![y],
            generation: 0,
            parent_id: None,
            mark_scalar: 1.0,
            lifetime: None,
            shared,
        }
    }

    fn real(events: Vec<Event>) -> Realization {
        Realization { events, horizon: 10.0, seed: 0, truncated: false }
    }

    #[test]
    fn distance_examples() {
        let spec = ModelSpec::constant(1.0, 0.5);
        let n = real(vec![ev(0, 1.0, 0.2, Some(7))]);
        let m = real(vec![ev(0, 1.0, 0.3, Some(7))]);
        let d = pp_distance(&spec, &n, &spec, &m, Matching::SharedIds).unwrap();
        assert!((d.total - 0.1).abs() < 1e-12);
        let e = real(vec![]);
        let d = pp_distance(&spec, &real(vec![ev(0, 1.0, 0.5, None)]), &spec, &e, Matching::SharedIds).unwrap();
        assert!((d.total - 2.5).abs() < 1e-12);
        assert_eq!(pp_distance(&spec, &n, &spec, &n, Matching::SharedIds).unwrap().total, 0.0);
    }

    #[test]
    fn time_tolerance_pairs_nearest() {
        let spec = ModelSpec::constant(1.0, 0.5);
        let n = real(vec![ev(0, 1.0, 0.2, None), ev(1, 2.0, 0.4, None)]);
        let m = real(vec![ev(0, 1.05, 0.2, None), ev(1, 5.0, 0.4, None)]);
        let d = pp_distance(&spec, &n, &spec, &m, Matching::TimeTolerance { epsilon: 0.1 }).unwrap();
        assert_eq!(d.matched, 1);
        assert!((d.nonsimultaneous_term - 2.0 * 2.4).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let a = ModelSpec::constant(1.0, 0.5);
        let mut b = a.clone();
        b.domain = SpatialDomain::unit(2);
        assert!(matches!(
            pp_distance(&a, &real(vec![]), &b, &real(vec![]), Matching::SharedIds),
            Err(Error::DomainMismatch(_))
        ));
    }

    #[test]
    fn tv_of_sine() {
        let grid = UniformGrid::cubic(&SpatialDomain::unit(1), 1024).unwrap();
        let f = GridFunction::from_fn(grid, Sampling::Vertex, |x| (2.0 * std::f64::consts::PI * x[0]).sin());
        assert!((total_variation(&f, TvMode::Exact1d).unwrap().value - 4.0).abs() < 1e-12);
    }

    #[test]
    fn poincare_linear_example() {
        let grid = UniformGrid::cubic(&SpatialDomain::unit(1), 1000).unwrap();
        let f = GridFunction::from_fn(grid, Sampling::Vertex, |x| x[0]);
        let p = build_partition(&SpatialDomain::unit(1), 10, &PartitionScheme::UniformDyadic).unwrap();
        let r = poincare_check(&f, &p).unwrap();
        assert!((r.lhs - 0.025).abs() < 1e-12, "{}", r.lhs);
        assert!((r.rhs - 0.05).abs() < 1e-12);
        assert!(r.holds);
        let coarse =
            GridFunction::from_fn(UniformGrid::cubic(&SpatialDomain::unit(1), 20).unwrap(), Sampling::Vertex, |x| x[0]);
        assert!(matches!(poincare_check(&coarse, &p), Err(Error::ResolutionTooCoarse(_))));
    }
}
