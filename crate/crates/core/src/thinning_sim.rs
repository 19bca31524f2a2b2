//! Ogata-style thinning from the conditional intensity. Handles nonlinear
//! rate functions and nonempty initial histories.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::cluster_sim::{Column, Event, Offspring, Realization, DEFAULT_EVENT_CAP};
use crate::domain::{GridFunction, Point, Sampling};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::rng::{label, StreamKey};
use crate::sampling::CellDensity;

/// Refresh the dominating rate once it overshoots the true rate by this factor.
const REFRESH_RATIO: f64 = 4.0;
pub const DEFAULT_RATE_CAP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PastEvent {
    pub time: f64,
    pub location: Point,
    pub mark_scalar: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HistorySnapshot {
    pub events: Vec<PastEvent>,
    /// Time the history is observed at; simulation continues from here.
    pub reference: f64,
}

impl HistorySnapshot {
    pub fn empty() -> Self {
        HistorySnapshot::default()
    }

    pub fn from_realization(real: &Realization, reference: f64) -> Self {
        HistorySnapshot {
            events: real
                .events
                .iter()
                .map(|e| PastEvent { time: e.time, location: e.location.clone(), mark_scalar: e.mark_scalar })
                .collect(),
            reference,
        }
    }

    fn check(&self, t: f64) -> Result<()> {
        match self.events.iter().find(|e| e.time > t) {
            Some(e) => Err(Error::AcausalHistory { event: e.time, reference: t }),
            None => Ok(()),
        }
    }
}

/// `lambda_t(x) = f(lambda_inf(x) + sum xi b(x, y) W(x, y) h(t - s))` at the
/// location-grid midpoints.
pub fn conditional_intensity(spec: &ModelSpec, history: &HistorySnapshot, t: f64) -> Result<GridFunction> {
    history.check(t)?;
    let grid = spec.location_grid()?;
    Ok(GridFunction::from_fn(grid, Sampling::Midpoint, |x| {
        let excitation: f64 = history
            .events
            .iter()
            .map(|e| e.mark_scalar * spec.offspring_profile(x, &e.location) * spec.excitation.eval(t - e.time))
            .sum();
        spec.nonlinearity.apply(spec.baseline.eval(x) + excitation)
    }))
}

#[derive(Debug, Clone, Copy)]
pub struct ThinningOptions {
    pub event_cap: usize,
    pub rate_cap: f64,
    pub lifetimes: bool,
}

impl Default for ThinningOptions {
    fn default() -> Self {
        ThinningOptions { event_cap: DEFAULT_EVENT_CAP, rate_cap: DEFAULT_RATE_CAP, lifetimes: true }
    }
}

struct Source {
    time: f64,
    weight: f64,
    column: Arc<Column>,
}

struct State<'a> {
    ctx: &'a Offspring<'a>,
    base: Vec<f64>,
    /// `sum_i f(lambda_inf(x_i)) vol`
    base_total: f64,
    sources: Vec<Source>,
}

impl State<'_> {
    fn linear_values(&self, t: f64) -> Vec<f64> {
        let mut v = self.base.clone();
        for s in &self.sources {
            let a = s.weight * self.ctx.spec.excitation.eval(t - s.time);
            if a == 0.0 {
                continue;
            }
            if let Some(d) = &s.column.density {
                for (vi, ci) in v.iter_mut().zip(&d.values) {
                    *vi += a * ci;
                }
            }
        }
        v
    }

    /// `Lambda_t = int lambda_t` on the grid, plus the grid values when needed.
    fn total(&self, t: f64) -> (f64, Option<Vec<f64>>) {
        let spec = self.ctx.spec;
        if spec.is_linear() {
            let exc: f64 =
                self.sources.iter().map(|s| s.weight * s.column.mass * spec.excitation.eval(t - s.time)).sum();
            (self.base_total + exc, None)
        } else {
            let vals: Vec<f64> = self.linear_values(t).into_iter().map(|u| spec.nonlinearity.apply(u)).collect();
            (vals.iter().sum::<f64>() * self.ctx.grid.cell_volume(), Some(vals))
        }
    }

    /// Valid for every time `>= t` until the next accepted event.
    fn dominating(&self, t: f64) -> f64 {
        let spec = self.ctx.spec;
        let c = spec.nonlinearity.lipschitz();
        let exc: f64 =
            self.sources.iter().map(|s| s.weight * s.column.mass * spec.excitation.envelope(t - s.time)).sum();
        self.base_total + c * exc
    }
}

/// Simulates on `(initial.reference, horizon]`, conditioning on `initial`.
pub fn simulate_thinning(
    spec: &ModelSpec,
    horizon: f64,
    initial: &HistorySnapshot,
    key: StreamKey,
    opts: ThinningOptions,
) -> Result<Realization> {
    let ctx = Offspring::new(spec)?;
    simulate_thinning_with(&ctx, horizon, initial, key, opts)
}

pub fn simulate_thinning_with(
    ctx: &Offspring,
    horizon: f64,
    initial: &HistorySnapshot,
    key: StreamKey,
    opts: ThinningOptions,
) -> Result<Realization> {
    let spec = ctx.spec;
    initial.check(initial.reference)?;
    if !(horizon >= initial.reference) || horizon.is_infinite() {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} must be finite and not before the history reference {}",
            initial.reference
        )));
    }
    for e in &initial.events {
        spec.domain.require(&e.location)?;
    }
    let mut rng = key.child(label::THINNING).rng();
    let mut life_rng = key.child(label::LIFETIMES).rng();
    let life = if opts.lifetimes { spec.lifetimes.as_ref() } else { None };
    let factor = spec.marks.factor();
    let vol = ctx.grid.cell_volume();

    let base: Vec<f64> = (0..ctx.grid.len()).map(|i| spec.baseline.eval(&ctx.grid.midpoint(i))).collect();
    let base_total = base.iter().map(|u| spec.nonlinearity.apply(*u)).sum::<f64>() * vol;
    let mut state = State {
        ctx,
        base,
        base_total,
        sources: initial
            .events
            .iter()
            .map(|e| Source { time: e.time, weight: e.mark_scalar, column: ctx.column(&e.location) })
            .collect(),
    };

    let mut events: Vec<Event> = Vec::new();
    let mut truncated = false;
    let mut s = initial.reference;
    let mut bound = state.dominating(s);
    loop {
        if bound <= 0.0 {
            break;
        }
        if bound > opts.rate_cap {
            truncated = true;
            break;
        }
        s += Exp::new(bound).unwrap().sample(&mut rng);
        if s > horizon {
            break;
        }
        let (lam, vals) = state.total(s);
        if lam > bound * (1.0 + 1e-9) {
            return Err(Error::Internal(format!("dominating rate {bound} below intensity {lam} at t = {s}")));
        }
        if rng.random::<f64>() * bound < lam {
            if events.len() >= opts.event_cap {
                truncated = true;
                break;
            }
            let vals = match vals {
                Some(v) => v,
                None => state.linear_values(s),
            };
            let location = CellDensity::new(ctx.grid.clone(), vals)?.sample(&mut rng);
            let xi = factor.sample(&mut rng);
            events.push(Event {
                id: events.len() as u64,
                time: s,
                location: location.clone(),
                generation: 0,
                parent_id: None,
                mark_scalar: xi,
                lifetime: life.map(|l| l.sample(&mut life_rng)),
                shared: None,
            });
            state.sources.push(Source { time: s, weight: xi, column: ctx.column(&location) });
            bound = state.dominating(s);
        } else if bound > REFRESH_RATIO * lam {
            bound = state.dominating(s);
        }
    }
    Ok(Realization { events, horizon, seed: key.raw(), truncated })
}
