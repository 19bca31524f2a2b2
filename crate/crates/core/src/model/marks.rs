//! Marks, lifetimes and the rate nonlinearity.

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma};

use super::functions::PairFunction;
use crate::domain::SpatialDomain;

/// Law of the nonnegative per-event mark factor `xi`.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarLaw {
    Deterministic(f64),
    Exponential { mean: f64 },
    Gamma { shape: f64, scale: f64 },
}

impl ScalarLaw {
    pub fn mean(&self) -> f64 {
        match self {
            ScalarLaw::Deterministic(v) => *v,
            ScalarLaw::Exponential { mean } => *mean,
            ScalarLaw::Gamma { shape, scale } => shape * scale,
        }
    }

    /// `E[exp(-s xi)]` for `s >= 0`.
    pub fn laplace(&self, s: f64) -> f64 {
        match self {
            ScalarLaw::Deterministic(v) => (-v * s).exp(),
            ScalarLaw::Exponential { mean } => 1.0 / (1.0 + mean * s),
            ScalarLaw::Gamma { shape, scale } => (-shape * (scale * s).ln_1p()).exp(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ScalarLaw::Deterministic(v) => *v,
            ScalarLaw::Exponential { mean } => {
                if *mean == 0.0 {
                    0.0
                } else {
                    mean * Exp::new(1.0).unwrap().sample(rng)
                }
            }
            ScalarLaw::Gamma { shape, scale } => {
                if *scale == 0.0 {
                    0.0
                } else {
                    Gamma::new(*shape, *scale).unwrap().sample(rng)
                }
            }
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, ScalarLaw::Deterministic(_))
    }

    pub fn problems(&self) -> Vec<String> {
        let ok = match self {
            ScalarLaw::Deterministic(v) => v.is_finite() && *v >= 0.0,
            ScalarLaw::Exponential { mean } => mean.is_finite() && *mean >= 0.0,
            ScalarLaw::Gamma { shape, scale } => {
                shape.is_finite() && scale.is_finite() && *shape > 0.0 && *scale >= 0.0
            }
        };
        if ok {
            vec![]
        } else {
            vec!["invalid-parameter: mark factor law".to_string()]
        }
    }
}

/// Separable marks `B_xy = xi * b(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub enum MarkModel {
    /// `B == 1`
    Unmarked,
    ScaledProfile {
        profile: PairFunction,
        factor: ScalarLaw,
    },
}

impl MarkModel {
    pub fn factor(&self) -> ScalarLaw {
        match self {
            MarkModel::Unmarked => ScalarLaw::Deterministic(1.0),
            MarkModel::ScaledProfile { factor, .. } => factor.clone(),
        }
    }

    /// `b(x, y)`, the deterministic profile.
    pub fn profile(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            MarkModel::Unmarked => 1.0,
            MarkModel::ScaledProfile { profile, .. } => profile.eval(x, y),
        }
    }

    /// `E[B_xy]`
    pub fn mean(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            MarkModel::Unmarked => 1.0,
            MarkModel::ScaledProfile { profile, factor } => factor.mean() * profile.eval(x, y),
        }
    }

    /// `C_B = sup E[B]`
    pub fn c_b(&self, domain: &SpatialDomain) -> f64 {
        match self {
            MarkModel::Unmarked => 1.0,
            MarkModel::ScaledProfile { profile, factor } => factor.mean() * profile.sup_abs(domain),
        }
    }

    pub fn profile_is_constant(&self) -> bool {
        match self {
            MarkModel::Unmarked => true,
            MarkModel::ScaledProfile { profile, .. } => profile.is_constant(),
        }
    }

    pub fn profile_function(&self) -> PairFunction {
        match self {
            MarkModel::Unmarked => PairFunction::Constant(1.0),
            MarkModel::ScaledProfile { profile, .. } => profile.clone(),
        }
    }
}

/// Law of the time an event stays alive.
#[derive(Debug, Clone, PartialEq)]
pub enum LifetimeModel {
    Deterministic { duration: f64 },
    Exponential { rate: f64 },
}

impl LifetimeModel {
    /// Survival `P(J > u)`.
    pub fn survival(&self, u: f64) -> f64 {
        if u < 0.0 {
            return 1.0;
        }
        match self {
            LifetimeModel::Deterministic { duration } => {
                if u < *duration {
                    1.0
                } else {
                    0.0
                }
            }
            LifetimeModel::Exponential { rate } => (-rate * u).exp(),
        }
    }

    pub fn cdf(&self, u: f64) -> f64 {
        match self {
            LifetimeModel::Exponential { rate } if u >= 0.0 => -(-rate * u).exp_m1(),
            _ => 1.0 - self.survival(u),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            LifetimeModel::Deterministic { duration } => *duration,
            LifetimeModel::Exponential { rate } => 1.0 / rate,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            LifetimeModel::Deterministic { duration } => *duration,
            LifetimeModel::Exponential { rate } => Exp::new(*rate).unwrap().sample(rng),
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let ok = match self {
            LifetimeModel::Deterministic { duration } => duration.is_finite() && *duration > 0.0,
            LifetimeModel::Exponential { rate } => rate.is_finite() && *rate > 0.0,
        };
        if ok {
            vec![]
        } else {
            vec!["invalid-parameter: lifetime law".to_string()]
        }
    }
}

/// Rate function `f` applied to the linear intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Nonlinearity {
    Identity,
    /// `min(u, cap)`
    ClippedLinear {
        cap: f64,
    },
    /// `scale * tanh(u / scale)`
    SigmoidScaled {
        scale: f64,
    },
}

impl Nonlinearity {
    pub fn apply(&self, u: f64) -> f64 {
        match self {
            Nonlinearity::Identity => u,
            Nonlinearity::ClippedLinear { cap } => u.min(*cap),
            Nonlinearity::SigmoidScaled { scale } => scale * (u / scale).tanh(),
        }
    }

    /// All supported families are 1-Lipschitz.
    pub fn lipschitz(&self) -> f64 {
        1.0
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Nonlinearity::Identity)
    }

    pub fn problems(&self) -> Vec<String> {
        let ok = match self {
            Nonlinearity::Identity => true,
            Nonlinearity::ClippedLinear { cap } => cap.is_finite() && *cap >= 0.0,
            Nonlinearity::SigmoidScaled { scale } => scale.is_finite() && *scale > 0.0,
        };
        if ok {
            vec![]
        } else {
            vec!["invalid-parameter: nonlinearity".to_string()]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    #[test]
    fn laplace_transforms() {
        assert!((ScalarLaw::Deterministic(1.0).laplace(2.0) - (-2.0f64).exp()).abs() < 1e-15);
        assert!((ScalarLaw::Exponential { mean: 1.0 }.laplace(1.0) - 0.5).abs() < 1e-15);
        let g = ScalarLaw::Gamma { shape: 1.0, scale: 2.0 };
        assert!((g.laplace(0.5) - ScalarLaw::Exponential { mean: 2.0 }.laplace(0.5)).abs() < 1e-14);
    }

    #[test]
    fn sampled_means_match() {
        let laws = [
            ScalarLaw::Deterministic(0.7),
            ScalarLaw::Exponential { mean: 2.0 },
            ScalarLaw::Gamma { shape: 3.0, scale: 0.5 },
        ];
        for (k, law) in laws.iter().enumerate() {
            let mut rng = StreamKey::new(11).child(k as u64).rng();
            let n = 10_000;
            let xs: Vec<f64> = (0..n).map(|_| law.sample(&mut rng)).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!((m - law.mean()).abs() <= 3.0 * se + 1e-12, "{law:?}: {m}");
        }
    }

    #[test]
    fn lifetime_survival_and_cdf_sum_to_one() {
        for l in [LifetimeModel::Exponential { rate: 1.3 }, LifetimeModel::Deterministic { duration: 0.5 }] {
            assert_eq!(l.survival(0.0), 1.0);
            for u in [0.0, 0.2, 0.5, 3.0] {
                assert!((l.survival(u) + l.cdf(u) - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn nonlinearities() {
        assert_eq!(Nonlinearity::ClippedLinear { cap: 1.1 }.apply(1.18), 1.1);
        let s = Nonlinearity::SigmoidScaled { scale: 2.0 };
        assert!(s.apply(1e-6) > 0.0 && s.apply(100.0) <= 2.0);
    }
}
