mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;

use graphon_hawkes::model::{ExcitationKernel, LifetimeModel, ModelSpec, PairFunction, Profile};
use graphon_hawkes::operators::{discretize_kernel, spectral_radius, DEFAULT_MAX_POWER};
use graphon_hawkes::rng::StreamKey;
use graphon_hawkes::transforms::{
    envelope, fixed_point, laplace_of_q, mc_laplace_of_q, PhiContext, TestFunction, TransformGrid, DEFAULT_MAX_ITER,
    DEFAULT_TOL,
};

const KERNEL_N: usize = 16;
const N_U: usize = 32;

fn small(mut spec: ModelSpec) -> ModelSpec {
    spec.resolution.kernel_n = KERNEL_N;
    spec.resolution.n_u = N_U;
    spec
}

fn model_strategy() -> impl Strategy<Value = ModelSpec> {
    let graphon = prop_oneof![
        (0.0..1.5f64).prop_map(PairFunction::Constant),
        (0.1..2.5f64).prop_map(|scale| PairFunction::RankOne {
            scale,
            profile: Profile::Monomial { coef: 1.0, powers: vec![1] }
        }),
    ];
    let lifetimes = prop_oneof![
        Just(None),
        (0.2..3.0f64).prop_map(|rate| Some(LifetimeModel::Exponential { rate })),
        (0.1..2.0f64).prop_map(|duration| Some(LifetimeModel::Deterministic { duration })),
    ];
    (graphon, lifetimes, 0.5..3.0f64).prop_map(|(w, life, rate)| {
        let mut spec =
            ModelSpec::constant(1.0, 0.0).with_graphon(w).with_excitation(ExcitationKernel::exponential(rate));
        spec.lifetimes = life;
        small(spec)
    })
}

fn test_function() -> impl Strategy<Value = TestFunction> {
    (0.0..2.0f64, 0.0..2.0f64)
        .prop_map(|(a, b)| TestFunction { profile: Profile::Affine { intercept: a, slopes: vec![b] } })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn phi_maps_unit_range_into_itself(
        spec in model_strategy(),
        f in test_function(),
        t in 0.1..4.0f64,
        raw in prop::collection::vec(0.0..=1.0f64, KERNEL_N * (N_U + 1)),
    ) {
        let ctx = PhiContext::new(&spec, &f, t).unwrap();
        let xi = TransformGrid { values: DMatrix::from_vec(KERNEL_N, N_U + 1, raw), horizon: t };
        let out = ctx.apply(&xi).unwrap();
        prop_assert!(out.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn iterates_from_zero_and_one_stay_inside_envelope(spec in model_strategy(), f in test_function(), t in 0.1..3.0f64) {
        let ctx = PhiContext::new(&spec, &f, t).unwrap();
        let c = ctx.lipschitz_constant();
        let mut one = TransformGrid::constant(KERNEL_N, N_U, t, 1.0);
        let mut zero = TransformGrid::constant(KERNEL_N, N_U, t, 0.0);
        for n in 1..=15 {
            one = ctx.apply(&one).unwrap();
            zero = ctx.apply(&zero).unwrap();
            let gap = one.sup_distance(&zero);
            let bound = envelope(c, t, n);
            prop_assert!(gap <= bound + 1e-12, "n = {}: {} > {}", n, gap, bound);
        }
    }

    #[test]
    fn larger_f_gives_smaller_fixed_point(
        spec in model_strategy(),
        f in test_function(),
        extra in (0.0..1.0f64, 0.0..1.0f64),
        t in 0.1..3.0f64,
    ) {
        let Profile::Affine { intercept, slopes } = &f.profile else { unreachable!() };
        let g = TestFunction { profile: Profile::Affine { intercept: intercept + extra.0, slopes: vec![slopes[0] + extra.1] } };
        let a = fixed_point(&spec, &f, t, 1e-12, DEFAULT_MAX_ITER, None).unwrap();
        let b = fixed_point(&spec, &g, t, 1e-12, DEFAULT_MAX_ITER, None).unwrap();
        prop_assert!(a.converged && b.converged);
        for (x, y) in a.eta.values.iter().zip(b.eta.values.iter()) {
            prop_assert!(y <= &(x + 1e-12), "{} > {}", y, x);
        }
    }
}

#[test]
fn poisson_fixed_point_in_closed_form() {
    // W = 0 leaves only the root, alive at u with probability e^{-u}
    let spec = common::constant_with_lifetimes(0.0);
    let (z, t) = (0.8, 3.0);
    let fp = fixed_point(&spec, &TestFunction::constant(z), t, DEFAULT_TOL, DEFAULT_MAX_ITER, None).unwrap();
    assert!(fp.converged);
    assert_eq!(fp.constant, 0.0);
    for (j, u) in fp.eta.times().iter().enumerate() {
        let alive = (-u).exp();
        let exact = (1.0 - alive) + alive * (-z).exp();
        assert!((fp.eta.values[(0, j)] - exact).abs() < 1e-12);
    }
}

#[test]
fn laplace_of_q_matches_monte_carlo() {
    let f = TestFunction::constant(0.5);
    let t = 2.0;
    for (name, spec) in common::builtin_models() {
        if !spec.is_linear() {
            continue;
        }
        let k = discretize_kernel(&spec, spec.resolution.kernel_n).unwrap();
        if spectral_radius(&k, DEFAULT_MAX_POWER).unwrap().best() >= 1.0 {
            continue;
        }
        let fp = fixed_point(&spec, &f, t, DEFAULT_TOL, DEFAULT_MAX_ITER, None).unwrap();
        assert!(fp.converged && fp.envelope_ok(), "{name}");
        let l_q = laplace_of_q(&fp.eta, &spec).unwrap();
        let mc = mc_laplace_of_q(&spec, &f, t, 100_000, StreamKey::new(13)).unwrap();
        let gap = (l_q - mc.estimate).abs();
        assert!(gap <= 3.0 * mc.se, "{name}: L_Q {l_q} vs MC {} ± {}", mc.estimate, mc.se);
    }
}

#[test]
fn nonlinear_models_have_no_transform() {
    let spec = common::builtin_models().into_iter().find(|(n, _)| n == "clipped").unwrap().1;
    assert!(PhiContext::new(&spec, &TestFunction::constant(1.0), 1.0).is_err());
    let spec = ModelSpec::constant(1.0, 0.5);
    assert!(PhiContext::new(&spec, &TestFunction::constant(-1.0), 1.0).is_err());
}
