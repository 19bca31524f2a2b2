mod common;

use proptest::prelude::*;
use rand::Rng;

use graphon_hawkes::cluster_sim::{
    generation_counts, sample_immigrants, simulate_cluster, simulate_process, ClusterOptions, Offspring, Realization,
};
use graphon_hawkes::domain::{SpatialDomain, UniformGrid};
use graphon_hawkes::model::ModelSpec;
use graphon_hawkes::operators::discretize_kernel;
use graphon_hawkes::rng::StreamKey;
use graphon_hawkes::sampling::CellDensity;
use graphon_hawkes::stats::{chi_square_gof, chi_square_two_sample, mean_se};
use graphon_hawkes::thinning_sim::{
    conditional_intensity, simulate_thinning, HistorySnapshot, PastEvent, ThinningOptions,
};

const BINS: usize = 20;

fn bin(x: f64) -> usize {
    ((x * BINS as f64) as usize).min(BINS - 1)
}

fn model(name: &str) -> ModelSpec {
    common::builtin_models().into_iter().find(|(n, _)| n == name).expect("built-in model").1
}

fn check_structure(real: &Realization) {
    let mut seen = std::collections::HashMap::new();
    let mut prev = 0.0;
    for e in &real.events {
        assert!(e.time >= prev && e.time <= real.horizon);
        prev = e.time;
        assert_eq!(e.generation == 0, e.parent_id.is_none(), "event {}", e.id);
        if let Some(p) = e.parent_id {
            let (pt, pg) = seen.get(&p).copied().unwrap_or_else(|| panic!("parent {p} of {} missing", e.id));
            assert!(e.time > pt);
            assert_eq!(e.generation, pg + 1);
        }
        seen.insert(e.id, (e.time, e.generation));
    }
}

#[test]
fn immigrant_locations_follow_baseline() {
    let spec = model("marked");
    assert!((spec.alpha - 1.0).abs() < 1e-12);
    let ctx = Offspring::new(&spec).unwrap();
    let imm = sample_immigrants(&ctx, 1e5, StreamKey::new(5)).unwrap();
    let mut counts = vec![0usize; BINS];
    for (_, x) in &imm {
        counts[bin(x[0])] += 1;
    }
    // density 0.5 + x on [0, 1]
    let n = imm.len() as f64;
    let expected: Vec<f64> = (0..BINS)
        .map(|i| {
            let (a, b) = (i as f64 / BINS as f64, (i + 1) as f64 / BINS as f64);
            n * (0.5 * (b - a) + 0.5 * (b * b - a * a))
        })
        .collect();
    let test = chi_square_gof(&counts, &expected);
    assert!(test.p_value > 1e-3, "{test:?}");
}

#[test]
fn mixture_sampling_matches_direct() {
    let grid = UniformGrid::cubic(&SpatialDomain::unit(1), 512).unwrap();
    let l1 = |x: &[f64]| 2.0 * x[0] * x[0];
    let l2 = |x: &[f64]| if x[0] < 0.3 { 1.5 } else { 0.2 };
    let sum = CellDensity::from_fn(grid.clone(), |x| l1(x) + l2(x)).unwrap();
    let d1 = CellDensity::from_fn(grid.clone(), l1).unwrap();
    let d2 = CellDensity::from_fn(grid, l2).unwrap();
    let p1 = d1.mass() / (d1.mass() + d2.mass());

    let draws = 100_000;
    let mut direct = vec![0usize; BINS];
    let mut mixed = vec![0usize; BINS];
    let mut rng = StreamKey::new(17).rng();
    for _ in 0..draws {
        direct[bin(sum.sample(&mut rng)[0])] += 1;
    }
    let mut rng = StreamKey::new(18).rng();
    for _ in 0..draws {
        let d = if rng.random::<f64>() < p1 { &d1 } else { &d2 };
        mixed[bin(d.sample(&mut rng)[0])] += 1;
    }
    let test = chi_square_two_sample(&direct, &mixed);
    assert!(test.p_value > 1e-3, "{test:?}");
}

#[test]
fn cluster_realizations_are_well_formed() {
    for (name, spec) in common::builtin_models() {
        if !spec.is_linear() || name == "supercritical" {
            continue;
        }
        let real = simulate_process(&spec, 30.0, StreamKey::new(2)).unwrap();
        assert!(!real.truncated, "{name}");
        check_structure(&real);
        for e in &real.events {
            assert!(spec.domain.contains(&e.location), "{name}");
            assert!(e.mark_scalar >= 0.0);
            assert_eq!(e.lifetime.is_some(), spec.lifetimes.is_some());
        }
    }
}

#[test]
fn same_seed_any_thread_count() {
    let spec = common::constant_with_lifetimes(0.7);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| simulate_process(&spec, 200.0, StreamKey::new(99)).unwrap().to_ndjson())
    };
    let one = run(1);
    assert!(!one.is_empty());
    assert_eq!(one, run(1));
    assert_eq!(one, run(8));
}

#[test]
fn generation_means_match_kernel_powers() {
    let spec = common::rank_one(1.5);
    let ctx = Offspring::new(&spec).unwrap();
    let k = discretize_kernel(&spec, 64).unwrap();
    let j = 57;
    let x0 = k.nodes()[j].clone();

    // grid value of K^n applied to the unit mass at x0
    let op = k.operator();
    let w = k.weight;
    let mut v = nalgebra::DVector::zeros(k.len());
    v[j] = 1.0 / w;
    let mut grid_means = Vec::new();
    for _ in 1..=4 {
        v = &op * v;
        grid_means.push(v.sum() * w);
    }

    let reps = 20_000u64;
    let key = StreamKey::new(4);
    let samples: Vec<Vec<usize>> = (0..reps)
        .map(|r| {
            let c = simulate_cluster(&ctx, &x0, 0.0, 1e6, key.child(r), ClusterOptions::default()).unwrap();
            generation_counts(&c, 4)
        })
        .collect();
    for n in 1..=4 {
        let xs: Vec<f64> = samples.iter().map(|s| s[n] as f64).collect();
        let (m, se) = mean_se(&xs);
        let exact = 0.75 * x0[0] * 0.5f64.powi(n as i32 - 1);
        assert!((grid_means[n - 1] - exact).abs() < 1e-3, "grid gen {n}: {} vs {exact}", grid_means[n - 1]);
        assert!((m - grid_means[n - 1]).abs() <= 3.0 * se, "gen {n}: {m} ± {se} vs {}", grid_means[n - 1]);
    }
}

#[test]
fn thinning_realization_is_well_formed() {
    let spec = model("clipped");
    let real = simulate_thinning(&spec, 40.0, &HistorySnapshot::empty(), StreamKey::new(8), ThinningOptions::default())
        .unwrap();
    assert!(!real.is_empty());
    check_structure(&real);
    assert!(real.events.iter().all(|e| e.generation == 0 && e.time > 0.0));
}

#[test]
fn history_after_reference_is_rejected() {
    let spec = model("clipped");
    let history = HistorySnapshot {
        events: vec![PastEvent { time: 2.0, location: vec![0.5], mark_scalar: 1.0 }],
        reference: 1.0,
    };
    assert!(simulate_thinning(&spec, 5.0, &history, StreamKey::new(1), ThinningOptions::default()).is_err());
    assert!(conditional_intensity(&spec, &history, 1.5).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn extra_past_event_never_lowers_intensity(
        past in prop::collection::vec((0.0..5.0f64, 0.0..1.0f64, 0.0..3.0f64), 0..6),
        extra in (0.0..5.0f64, 0.0..1.0f64, 0.0..3.0f64),
        dt in 0.0..2.0f64,
    ) {
        let spec = model("clipped");
        let to_event = |(time, x, mark): (f64, f64, f64)| PastEvent { time, location: vec![x], mark_scalar: mark };
        let t = 5.0 + dt;
        let base = HistorySnapshot { events: past.iter().copied().map(to_event).collect(), reference: t };
        let mut more = base.clone();
        more.events.push(to_event(extra));
        let a = conditional_intensity(&spec, &base, t).unwrap();
        let b = conditional_intensity(&spec, &more, t).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!(y >= x, "{y} < {x}");
            prop_assert!(*y <= 3.0);
        }
    }
}
