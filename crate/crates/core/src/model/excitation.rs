//! Excitation functions `h` and their integrated form `H(u) = int_0^u h`.

use crate::error::{Error, Result};

/// Bisection tolerance (in time) for inverting tabulated `H`.
const TABLE_INVERSION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum ExcitationKernel {
    /// `scale * exp(-rate * t)`
    Exponential { rate: f64, scale: f64 },
    /// `scale * (p - 1) c^(p-1) / (c + t)^p`; integrates to `scale`.
    PowerLaw { exponent: f64, cutoff: f64, scale: f64 },
    /// Piecewise constant: `values[i]` on `[knots[i], knots[i+1])`, `tail`
    /// after the last knot. `knots[0]` must be `0`.
    Table { knots: Vec<f64>, values: Vec<f64>, tail: f64 },
}

impl ExcitationKernel {
    pub fn exponential(rate: f64) -> Self {
        ExcitationKernel::Exponential { rate, scale: 1.0 }
    }

    /// Structural problems; an empty list means the kernel is usable.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            ExcitationKernel::Exponential { rate, scale } => {
                if !rate.is_finite() || !scale.is_finite() || *rate <= 0.0 {
                    out.push("invalid-parameter: excitation rate must be finite and positive".to_string());
                }
                if *scale < 0.0 {
                    out.push("negativity: excitation".to_string());
                }
            }
            ExcitationKernel::PowerLaw { exponent, cutoff, scale } => {
                if !exponent.is_finite() || !cutoff.is_finite() || !scale.is_finite() || *cutoff <= 0.0 {
                    out.push("invalid-parameter: power-law parameters must be finite with cutoff > 0".to_string());
                } else if *exponent <= 1.0 {
                    out.push("invalid-parameter: excitation not L1".to_string());
                }
                if *scale < 0.0 {
                    out.push("negativity: excitation".to_string());
                }
            }
            ExcitationKernel::Table { knots, values, tail } => {
                if knots.len() != values.len() + 1 || knots.first() != Some(&0.0) {
                    out.push("invalid-parameter: table needs knots = [0, ...] with one more knot than values".into());
                } else if knots.windows(2).any(|w| !(w[1] > w[0])) || knots.iter().any(|k| !k.is_finite()) {
                    out.push("invalid-parameter: table knots must be finite and increasing".into());
                }
                if values.iter().chain(std::iter::once(tail)).any(|v| !v.is_finite()) {
                    out.push("invalid-parameter: table values must be finite".into());
                }
                if values.iter().chain(std::iter::once(tail)).any(|v| *v < 0.0) {
                    out.push("negativity: excitation".into());
                }
                if *tail > 0.0 {
                    out.push("invalid-parameter: excitation not L1".into());
                }
            }
        }
        out
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match self {
            ExcitationKernel::Exponential { rate, scale } => scale * (-rate * t).exp(),
            ExcitationKernel::PowerLaw { exponent, cutoff, scale } => {
                scale * (exponent - 1.0) * cutoff.powf(exponent - 1.0) * (cutoff + t).powf(-exponent)
            }
            ExcitationKernel::Table { knots, values, tail } => match knots.partition_point(|k| *k <= t) {
                0 => values.first().copied().unwrap_or(*tail),
                i if i > values.len() => *tail,
                i => values[i - 1],
            },
        }
    }

    /// `||h||_1`; infinite for a table with a positive tail.
    pub fn l1_norm(&self) -> f64 {
        match self {
            ExcitationKernel::Exponential { rate, scale } => scale / rate,
            ExcitationKernel::PowerLaw { exponent, scale, .. } => {
                if *exponent > 1.0 {
                    *scale
                } else {
                    f64::INFINITY
                }
            }
            ExcitationKernel::Table { knots, values, tail } => {
                if *tail > 0.0 {
                    f64::INFINITY
                } else {
                    knots.windows(2).zip(values).map(|(w, v)| (w[1] - w[0]) * v).sum()
                }
            }
        }
    }

    pub fn sup_norm(&self) -> f64 {
        match self {
            ExcitationKernel::Exponential { scale, .. } => *scale,
            ExcitationKernel::PowerLaw { exponent, cutoff, scale } => scale * (exponent - 1.0) / cutoff,
            ExcitationKernel::Table { values, tail, .. } => values.iter().cloned().fold(*tail, f64::max),
        }
    }

    /// Nonincreasing majorant `sup_{s >= t} h(s)`.
    pub fn envelope(&self, t: f64) -> f64 {
        match self {
            ExcitationKernel::Table { knots, values, tail } => {
                let start = knots.partition_point(|k| *k <= t.max(0.0)).saturating_sub(1);
                values.iter().skip(start).cloned().fold(*tail, f64::max)
            }
            _ => self.eval(t.max(0.0)),
        }
    }

    /// Mean of the delay law `h / ||h||_1`; infinite for heavy power-law tails.
    pub fn mean_delay(&self) -> f64 {
        match self {
            ExcitationKernel::Exponential { rate, .. } => 1.0 / rate,
            ExcitationKernel::PowerLaw { exponent, cutoff, .. } => {
                if *exponent > 2.0 {
                    cutoff / (exponent - 2.0)
                } else {
                    f64::INFINITY
                }
            }
            ExcitationKernel::Table { knots, values, .. } => {
                let first: f64 = knots.windows(2).zip(values).map(|(w, v)| 0.5 * (w[1] * w[1] - w[0] * w[0]) * v).sum();
                first / self.l1_norm()
            }
        }
    }

    /// Integrated excitation `H(u)`. `u = +inf` gives `||h||_1`.
    pub fn integrated(&self, u: f64) -> Result<f64> {
        if u < 0.0 || u.is_nan() {
            return Err(Error::NegativeTime(u));
        }
        Ok(self.integrated_unchecked(u))
    }

    fn integrated_unchecked(&self, u: f64) -> f64 {
        if u.is_infinite() {
            return self.l1_norm();
        }
        match self {
            ExcitationKernel::Exponential { rate, scale } => -(scale / rate) * (-rate * u).exp_m1(),
            ExcitationKernel::PowerLaw { exponent, cutoff, scale } => {
                -scale * ((exponent - 1.0) * (cutoff / (cutoff + u)).ln()).exp_m1()
            }
            ExcitationKernel::Table { knots, values, tail } => {
                let mut total = 0.0;
                for (w, v) in knots.windows(2).zip(values) {
                    if u <= w[0] {
                        return total;
                    }
                    total += (u.min(w[1]) - w[0]) * v;
                }
                let last = *knots.last().unwrap();
                if u > last {
                    total += (u - last) * tail;
                }
                total
            }
        }
    }

    /// Delay `s in [0, window]` with `H(s) = fraction * H(window)`, i.e. the
    /// inverse of the conditional delay law `s -> H(s)/H(window)`.
    pub fn delay_quantile(&self, window: f64, fraction: f64) -> f64 {
        match self {
            ExcitationKernel::Exponential { rate, .. } => {
                let mass = if window.is_infinite() { -1.0 } else { (-rate * window).exp_m1() };
                let s = -(fraction * mass).ln_1p() / rate;
                s.min(window)
            }
            ExcitationKernel::PowerLaw { exponent, cutoff, .. } => {
                // (c/(c+s))^(p-1) = 1 - fraction * (1 - (c/(c+w))^(p-1))
                let tail_w = if window.is_infinite() { 0.0 } else { (cutoff / (cutoff + window)).powf(exponent - 1.0) };
                let keep = 1.0 - fraction * (1.0 - tail_w);
                let s = cutoff * (keep.powf(-1.0 / (exponent - 1.0)) - 1.0);
                s.min(window)
            }
            ExcitationKernel::Table { knots, .. } => {
                let hi_t = if window.is_infinite() { *knots.last().unwrap() } else { window };
                let target = fraction * self.integrated_unchecked(hi_t);
                let (mut lo, mut hi) = (0.0, hi_t);
                while hi - lo > TABLE_INVERSION_TOL {
                    let mid = 0.5 * (lo + hi);
                    if self.integrated_unchecked(mid) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }
}
