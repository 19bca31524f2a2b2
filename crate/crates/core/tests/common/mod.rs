#![allow(dead_code)]

use std::path::PathBuf;

use graphon_hawkes::model::{load_model_file, LifetimeModel, ModelSpec, PairFunction, Profile};

pub fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

/// Every sample configuration shipped in `models/`, sorted by name.
pub fn builtin_models() -> Vec<(String, ModelSpec)> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(models_dir())
        .expect("models directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            let spec = load_model_file(&p).unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, spec)
        })
        .collect()
}

/// Constant model with `Exp(1)` lifetimes.
pub fn constant_with_lifetimes(w: f64) -> ModelSpec {
    ModelSpec::constant(1.0, w).with_lifetimes(LifetimeModel::Exponential { rate: 1.0 })
}

/// `W(x, y) = scale * x * y` on the unit interval.
pub fn rank_one(scale: f64) -> ModelSpec {
    ModelSpec::constant(1.0, 0.0)
        .with_graphon(PairFunction::RankOne { scale, profile: Profile::Monomial { coef: 1.0, powers: vec![1] } })
}
