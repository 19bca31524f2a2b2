//! Exact simulation of linear models through the Poisson cluster
//! (branching) representation.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Point, Region, SpatialDomain, UniformGrid};
use crate::error::{Error, Result};
use crate::model::{ColumnKey, ModelSpec};
use crate::rng::{label, SimRng, StreamKey};
use crate::sampling::CellDensity;

pub const DEFAULT_EVENT_CAP: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub id: u64,
    #[serde(rename = "t")]
    pub time: f64,
    #[serde(rename = "x")]
    pub location: Point,
    #[serde(rename = "gen")]
    pub generation: u32,
    #[serde(rename = "parent")]
    pub parent_id: Option<u64>,
    #[serde(rename = "xi")]
    pub mark_scalar: f64,
    pub lifetime: Option<f64>,
    /// Cross-reference into a coupled realization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub events: Vec<Event>,
    pub horizon: f64,
    /// Raw stream key the realization was drawn from.
    pub seed: u64,
    /// Set when the event cap stopped the simulation early.
    pub truncated: bool,
}

impl Realization {
    pub fn empty(horizon: f64, seed: u64) -> Self {
        Realization { events: Vec::new(), horizon, seed, truncated: false }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// `explosion-guard` if the run was cut short.
    pub fn check_complete(&self) -> Result<()> {
        if self.truncated {
            Err(Error::ExplosionGuard(self.events.len()))
        } else {
            Ok(())
        }
    }

    /// Number of events with time `<= t` inside `region`.
    pub fn count(&self, t: f64, region: &Region) -> usize {
        self.events.iter().filter(|e| e.time <= t && region.contains(&e.location)).count()
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_ndjson(text: &str, horizon: Option<f64>) -> Result<Self> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: Event = serde_json::from_str(line).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
            events.push(e);
        }
        events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.id.cmp(&b.id)));
        let horizon = horizon.unwrap_or_else(|| events.last().map_or(0.0, |e| e.time));
        Ok(Realization { events, horizon, seed: 0, truncated: false })
    }
}

/// Offspring location law of a parent: total mass `||b(., y) W(., y)||_1` on
/// the location grid and the normalisable density (absent when the mass is 0).
#[derive(Debug)]
pub struct Column {
    pub mass: f64,
    pub density: Option<CellDensity>,
}

/// Per-model sampling context: location grid, immigrant density and a cache
/// of offspring columns shared by every cluster.
pub struct Offspring<'a> {
    pub spec: &'a ModelSpec,
    pub grid: UniformGrid,
    pub immigrants: Option<CellDensity>,
    cache: RwLock<HashMap<(ColumnKey, ColumnKey), Arc<Column>>>,
}

const COLUMN_CACHE_CAP: usize = 1 << 14;

impl<'a> Offspring<'a> {
    pub fn new(spec: &'a ModelSpec) -> Result<Self> {
        let grid = spec.location_grid()?;
        let immigrants =
            if spec.alpha > 0.0 { Some(CellDensity::from_fn(grid.clone(), |x| spec.baseline.eval(x))?) } else { None };
        Ok(Offspring { spec, grid, immigrants, cache: RwLock::new(HashMap::new()) })
    }

    fn build_column(&self, y: &[f64]) -> Column {
        let values: Vec<f64> =
            (0..self.grid.len()).map(|i| self.spec.offspring_profile(&self.grid.midpoint(i), y)).collect();
        let mass = values.iter().sum::<f64>() * self.grid.cell_volume();
        let density = if mass > 0.0 { CellDensity::new(self.grid.clone(), values).ok() } else { None };
        Column { mass, density }
    }

    pub fn column(&self, y: &[f64]) -> Arc<Column> {
        let key = (self.spec.graphon.function.column_key(y), self.spec.marks.profile_function().column_key(y));
        let shareable = key.0 != ColumnKey::Point && key.1 != ColumnKey::Point;
        // rank-one columns share a shape but scale with y
        let scaled = matches!(key, (ColumnKey::Shared, ColumnKey::Shared))
            && !(self.spec.graphon.function.is_constant() && self.spec.marks.profile_is_constant());
        if !shareable || scaled {
            return Arc::new(self.build_column(y));
        }
        if let Some(c) = self.cache.read().unwrap().get(&key) {
            return c.clone();
        }
        let col = Arc::new(self.build_column(y));
        let mut cache = self.cache.write().unwrap();
        if cache.len() >= COLUMN_CACHE_CAP {
            cache.clear();
        }
        cache.entry(key).or_insert(col).clone()
    }

    pub fn sample_immigrant_location(&self, rng: &mut SimRng) -> Point {
        self.immigrants.as_ref().expect("positive baseline mass").sample(rng)
    }
}

/// Parameters shared by every cluster of one simulation.
#[derive(Debug, Clone, Copy)]
pub struct ClusterOptions {
    pub event_cap: usize,
    pub lifetimes: bool,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        ClusterOptions { event_cap: DEFAULT_EVENT_CAP, lifetimes: true }
    }
}

fn require_linear(spec: &ModelSpec) -> Result<()> {
    if spec.is_linear() {
        Ok(())
    } else {
        Err(Error::RequiresThinning)
    }
}

/// Breadth-first cascade rooted at `(t0, x0)`. Ids are local (root = 0).
pub fn simulate_cluster(
    ctx: &Offspring,
    x0: &[f64],
    t0: f64,
    horizon: f64,
    key: StreamKey,
    opts: ClusterOptions,
) -> Result<Realization> {
    let spec = ctx.spec;
    require_linear(spec)?;
    spec.domain.require(x0)?;
    let mut rng = key.rng();
    let mut life_rng = key.child(label::LIFETIMES).rng();
    let life = if opts.lifetimes { spec.lifetimes.as_ref() } else { None };
    let factor = spec.marks.factor();
    let h = &spec.excitation;

    let root = Event {
        id: 0,
        time: t0,
        location: x0.to_vec(),
        generation: 0,
        parent_id: None,
        mark_scalar: factor.sample(&mut rng),
        lifetime: life.map(|l| l.sample(&mut life_rng)),
        shared: None,
    };
    let mut events = vec![root];
    let mut frontier = 0..1;
    let mut truncated = false;
    'outer: while !frontier.is_empty() {
        let next_start = events.len();
        for p in frontier.clone() {
            let (pt, px, pxi, pgen) = {
                let e = &events[p];
                (e.time, e.location.clone(), e.mark_scalar, e.generation)
            };
            let window = horizon - pt;
            if window <= 0.0 || pxi == 0.0 {
                continue;
            }
            let col = ctx.column(&px);
            let Some(density) = col.density.as_ref() else { continue };
            let mean = pxi * col.mass * h.integrated(window)?;
            if mean <= 0.0 {
                continue;
            }
            let n = Poisson::new(mean).map_err(|e| Error::Internal(e.to_string()))?.sample(&mut rng) as usize;
            for _ in 0..n {
                if events.len() >= opts.event_cap {
                    truncated = true;
                    break 'outer;
                }
                let u: f64 = 1.0 - rng.random::<f64>();
                let time = pt + h.delay_quantile(window, u).max(f64::MIN_POSITIVE);
                let location = density.sample(&mut rng);
                let id = events.len() as u64;
                events.push(Event {
                    id,
                    time: time.min(horizon),
                    location,
                    generation: pgen + 1,
                    parent_id: Some(p as u64),
                    mark_scalar: factor.sample(&mut rng),
                    lifetime: life.map(|l| l.sample(&mut life_rng)),
                    shared: None,
                });
            }
        }
        frontier = next_start..events.len();
    }
    Ok(Realization { events, horizon, seed: key.raw(), truncated })
}

/// Sorts clusters' events by time (ties by cluster, then local id) and
/// renumbers ids globally, remapping parents.
pub fn merge_clusters(clusters: Vec<Vec<Event>>, horizon: f64, seed: u64, truncated: bool) -> Realization {
    let mut tagged: Vec<(usize, Event)> =
        clusters.into_iter().enumerate().flat_map(|(c, evs)| evs.into_iter().map(move |e| (c, e))).collect();
    tagged.sort_by(|(ca, a), (cb, b)| a.time.total_cmp(&b.time).then(ca.cmp(cb)).then(a.id.cmp(&b.id)));
    let mut remap = HashMap::with_capacity(tagged.len());
    for (new, (c, e)) in tagged.iter().enumerate() {
        remap.insert((*c, e.id), new as u64);
    }
    let events = tagged
        .into_iter()
        .enumerate()
        .map(|(new, (c, mut e))| {
            e.id = new as u64;
            e.parent_id = e.parent_id.map(|p| remap[&(c, p)]);
            e
        })
        .collect();
    Realization { events, horizon, seed, truncated }
}

/// Immigrant arrivals `(time, location)` on `[0, horizon]`.
pub fn sample_immigrants(ctx: &Offspring, horizon: f64, key: StreamKey) -> Result<Vec<(f64, Point)>> {
    let alpha = ctx.spec.alpha;
    if alpha <= 0.0 || horizon <= 0.0 {
        return Ok(Vec::new());
    }
    let mut rng = key.child(label::IMMIGRANTS).rng();
    let n = Poisson::new(alpha * horizon).map_err(|e| Error::Internal(e.to_string()))?.sample(&mut rng) as usize;
    let mut out: Vec<(f64, Point)> = (0..n)
        .map(|_| {
            let t = horizon * (1.0 - rng.random::<f64>());
            (t, ctx.sample_immigrant_location(&mut rng))
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

pub fn simulate_process_with(
    ctx: &Offspring,
    horizon: f64,
    key: StreamKey,
    opts: ClusterOptions,
) -> Result<Realization> {
    require_linear(ctx.spec)?;
    if !(horizon >= 0.0) || horizon.is_infinite() {
        return Err(Error::InvalidArgument(format!("horizon must be finite and nonnegative, got {horizon}")));
    }
    let immigrants = sample_immigrants(ctx, horizon, key)?;
    // an even share of the budget keeps the total bounded and the run deterministic
    let share = ClusterOptions { event_cap: opts.event_cap.div_ceil(immigrants.len().max(1)).max(1), ..opts };
    let clusters: Vec<Realization> = immigrants
        .par_iter()
        .enumerate()
        .map(|(i, (t, x))| simulate_cluster(ctx, x, *t, horizon, key.sub(label::CLUSTERS, i as u64), share))
        .collect::<Result<_>>()?;
    let mut truncated = clusters.iter().any(|c| c.truncated);
    let total: usize = clusters.iter().map(|c| c.len()).sum();
    if total > opts.event_cap {
        truncated = true;
    }
    Ok(merge_clusters(clusters.into_iter().map(|c| c.events).collect(), horizon, key.raw(), truncated))
}

/// Immigrants on `[0, horizon]` plus their cascades.
pub fn simulate_process(spec: &ModelSpec, horizon: f64, key: StreamKey) -> Result<Realization> {
    let ctx = Offspring::new(spec)?;
    simulate_process_with(&ctx, horizon, key, ClusterOptions::default())
}

/// Events alive at `t` inside `region`: `time <= t < time + lifetime`.
pub fn population_count(real: &Realization, t: f64, region: &Region) -> Result<usize> {
    let mut n = 0;
    for e in &real.events {
        let life = e.lifetime.ok_or_else(|| Error::NoLifetimes(format!("event {} has no lifetime", e.id)))?;
        if e.time <= t && t < e.time + life && region.contains(&e.location) {
            n += 1;
        }
    }
    Ok(n)
}

/// Mean number of events per generation of a cluster rooted at `x0`.
pub fn generation_counts(real: &Realization, max_gen: u32) -> Vec<usize> {
    let mut out = vec![0; max_gen as usize + 1];
    for e in &real.events {
        if e.generation <= max_gen {
            out[e.generation as usize] += 1;
        }
    }
    out
}

/// Domain check helper for realizations read from disk.
pub fn check_locations(real: &Realization, domain: &SpatialDomain) -> Result<()> {
    for e in &real.events {
        if e.location.len() != domain.dim() {
            return Err(Error::DomainMismatch(format!(
                "event {} has a {}-dimensional location, domain is {}-dimensional",
                e.id,
                e.location.len(),
                domain.dim()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LifetimeModel, Nonlinearity, PairFunction, Profile};

    fn mean_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    #[test]
    fn poisson_immigrants_only() {
        let spec = ModelSpec::constant(1.0, 0.0);
        let ctx = Offspring::new(&spec).unwrap();
        let counts: Vec<f64> = (0..10_000)
            .map(|r| {
                simulate_process_with(&ctx, 1.0, StreamKey::new(1).child(r), ClusterOptions::default()).unwrap().len()
                    as f64
            })
            .collect();
        let (m, se) = mean_se(&counts);
        assert!((m - 1.0).abs() < 3.0 * se, "{m} ± {se}");
    }

    #[test]
    fn zero_baseline_is_empty() {
        let spec = ModelSpec::constant(0.0, 0.5);
        for r in 0..20 {
            assert!(simulate_process(&spec, 10.0, StreamKey::new(r)).unwrap().is_empty());
        }
    }

    #[test]
    fn subcritical_total_progeny() {
        let spec = ModelSpec::constant(1.0, 0.5);
        let ctx = Offspring::new(&spec).unwrap();
        let sizes: Vec<f64> = (0..10_000)
            .map(|r| {
                simulate_cluster(
                    &ctx,
                    &[0.5],
                    0.0,
                    f64::INFINITY,
                    StreamKey::new(3).child(r),
                    ClusterOptions::default(),
                )
                .unwrap()
                .len() as f64
            })
            .collect();
        let (m, se) = mean_se(&sizes);
        assert!((m - 2.0).abs() < 3.0 * se, "{m} ± {se}");
    }

    #[test]
    fn zero_column_gives_root_only() {
        let spec = ModelSpec::constant(1.0, 0.5).with_graphon(PairFunction::RankOne {
            scale: 1.5,
            profile: Profile::Monomial { coef: 1.0, powers: vec![1] },
        });
        let ctx = Offspring::new(&spec).unwrap();
        for r in 0..50 {
            let c = simulate_cluster(&ctx, &[0.0], 0.0, f64::INFINITY, StreamKey::new(r), ClusterOptions::default())
                .unwrap();
            assert_eq!(c.len(), 1);
        }
    }

    #[test]
    fn nonlinear_models_are_refused() {
        let spec = ModelSpec::constant(1.0, 0.5).with_nonlinearity(Nonlinearity::ClippedLinear { cap: 2.0 });
        assert!(matches!(simulate_process(&spec, 1.0, StreamKey::new(0)), Err(Error::RequiresThinning)));
    }

    #[test]
    fn realization_invariants_and_cap() {
        let spec = ModelSpec::constant(2.0, 0.8);
        let real = simulate_process(&spec, 20.0, StreamKey::new(5)).unwrap();
        for (i, e) in real.events.iter().enumerate() {
            assert_eq!(e.id, i as u64);
            assert!(e.time >= 0.0 && e.time <= 20.0);
            assert_eq!(e.generation == 0, e.parent_id.is_none());
            if let Some(p) = e.parent_id {
                let parent = &real.events[p as usize];
                assert!(parent.time < e.time);
                assert_eq!(parent.generation + 1, e.generation);
            }
        }
        let ctx = Offspring::new(&spec).unwrap();
        let opts = ClusterOptions { event_cap: 5, lifetimes: false };
        let capped = simulate_process_with(&ctx, 20.0, StreamKey::new(5), opts).unwrap();
        assert!(capped.truncated);
        assert!(matches!(capped.check_complete(), Err(Error::ExplosionGuard(_))));
    }

    #[test]
    fn population_examples() {
        let spec = ModelSpec::constant(1.0, 0.0).with_lifetimes(LifetimeModel::Exponential { rate: 1.0 });
        let ctx = Offspring::new(&spec).unwrap();
        let xs: Vec<f64> = (0..10_000)
            .map(|r| {
                let real =
                    simulate_process_with(&ctx, 2.0, StreamKey::new(8).child(r), ClusterOptions::default()).unwrap();
                assert_eq!(population_count(&real, 0.0, &Region::Whole).unwrap(), 0);
                assert_eq!(population_count(&real, 2.0, &Region::Empty).unwrap(), 0);
                population_count(&real, 2.0, &Region::Whole).unwrap() as f64
            })
            .collect();
        let (m, se) = mean_se(&xs);
        let expect = 1.0 - (-2.0f64).exp();
        assert!((m - expect).abs() < 3.0 * se, "{m} ± {se}");
        let plain = simulate_process(&ModelSpec::constant(5.0, 0.0), 1.0, StreamKey::new(0)).unwrap();
        assert!(matches!(population_count(&plain, 0.5, &Region::Whole), Err(Error::NoLifetimes(_))));
    }

    #[test]
    fn ndjson_roundtrip() {
        let spec = ModelSpec::constant(3.0, 0.5).with_lifetimes(LifetimeModel::Deterministic { duration: 1.0 });
        let real = simulate_process(&spec, 3.0, StreamKey::new(9)).unwrap();
        let back = Realization::from_ndjson(&real.to_ndjson(), Some(3.0)).unwrap();
        assert_eq!(back.events, real.events);
    }
}
