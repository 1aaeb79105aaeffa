//! Diminishing step sequences, noise scales, condition certificates and the
//! Laplace sampler.
//!
//! All sequences are indexed from `k = 1`. Summability conditions are decided
//! from the asymptotic decay exponent of each sequence: `a/(1 + b k^p)` and
//! `a/k^p` both decay like `k^-p`, a positive constant has exponent 0, and a
//! geometric sequence (or the zero constant) has exponent `+∞`.

use nalgebra::DVector;
use rand::distributions::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("power schedule needs scale > 0, offset ≥ 0 and exponent in (0, 1]; got scale {scale}, offset {offset}, exponent {exponent}")]
    BadPower { scale: f64, offset: f64, exponent: f64 },
    #[error("constant schedule needs a finite value ≥ 0, got {0}")]
    BadConstant(f64),
    #[error("geometric schedule needs initial > 0 and ratio in (0, 1); got initial {initial}, ratio {ratio}")]
    BadGeometric { initial: f64, ratio: f64 },
    #[error("noise schedule needs base > 0, growth ≥ 0, exponent ≥ 0; got base {base}, growth {growth}, exponent {exponent}")]
    BadNoise { base: f64, growth: f64, exponent: f64 },
}

/// A nonincreasing nonnegative sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// `scale/(1 + offset·k^exponent)` if `offset > 0`, else `scale/k^exponent`.
    Power {
        scale: f64,
        #[serde(default)]
        offset: f64,
        exponent: f64,
    },
    Constant { value: f64 },
    /// `initial · ratio^k`.
    Geometric { initial: f64, ratio: f64 },
}

impl Schedule {
    pub fn power(scale: f64, offset: f64, exponent: f64) -> Result<Self, ScheduleError> {
        let s = Schedule::Power { scale, offset, exponent };
        s.validate()?;
        Ok(s)
    }

    /// `1/k^exponent`.
    pub fn pure_power(exponent: f64) -> Result<Self, ScheduleError> {
        Self::power(1.0, 0.0, exponent)
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        match *self {
            Schedule::Power { scale, offset, exponent } => {
                if !(scale > 0.0 && scale.is_finite() && offset >= 0.0 && offset.is_finite() && exponent > 0.0 && exponent <= 1.0) {
                    return Err(ScheduleError::BadPower { scale, offset, exponent });
                }
            }
            Schedule::Constant { value } => {
                if !(value >= 0.0 && value.is_finite()) {
                    return Err(ScheduleError::BadConstant(value));
                }
            }
            Schedule::Geometric { initial, ratio } => {
                if !(initial > 0.0 && initial.is_finite() && ratio > 0.0 && ratio < 1.0) {
                    return Err(ScheduleError::BadGeometric { initial, ratio });
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, k: usize) -> f64 {
        let kf = k as f64;
        match *self {
            Schedule::Power { scale, offset, exponent } => {
                if offset > 0.0 {
                    scale / (1.0 + offset * kf.powf(exponent))
                } else {
                    scale / kf.powf(exponent)
                }
            }
            Schedule::Constant { value } => value,
            Schedule::Geometric { initial, ratio } => initial * ratio.powf(kf),
        }
    }

    /// Asymptotic decay exponent `p` with `value(k) ~ k^-p`.
    pub fn decay_exponent(&self) -> f64 {
        match *self {
            Schedule::Power { exponent, .. } => exponent,
            Schedule::Constant { value } if value > 0.0 => 0.0,
            Schedule::Constant { .. } | Schedule::Geometric { .. } => f64::INFINITY,
        }
    }
}

/// Laplace scale `ν_k = base·(1 + growth·k^exponent)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    pub base: f64,
    #[serde(default)]
    pub growth: f64,
    #[serde(default)]
    pub exponent: f64,
}

impl NoiseSchedule {
    pub fn new(base: f64, growth: f64, exponent: f64) -> Result<Self, ScheduleError> {
        let n = NoiseSchedule { base, growth, exponent };
        n.validate()?;
        Ok(n)
    }

    pub fn constant(base: f64) -> Result<Self, ScheduleError> {
        Self::new(base, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        let NoiseSchedule { base, growth, exponent } = *self;
        if !(base > 0.0 && base.is_finite() && growth >= 0.0 && growth.is_finite() && exponent >= 0.0 && exponent.is_finite()) {
            return Err(ScheduleError::BadNoise { base, growth, exponent });
        }
        Ok(())
    }

    pub fn value(&self, k: usize) -> f64 {
        self.base * (1.0 + self.growth * (k as f64).powf(self.exponent))
    }

    /// Laplace variance `2ν_k²`.
    pub fn variance(&self, k: usize) -> f64 {
        2.0 * self.value(k).powi(2)
    }

    /// Asymptotic growth exponent `q` with `ν_k ~ k^q`.
    pub fn growth_exponent(&self) -> f64 {
        if self.growth > 0.0 {
            self.exponent
        } else {
            0.0
        }
    }
}

/// One named condition and whether it holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub holds: bool,
}

/// A list of checked conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub kind: String,
    pub conditions: Vec<Condition>,
    pub note: String,
}

impl Certificate {
    fn new(kind: &str, conditions: Vec<(&str, bool)>) -> Self {
        Certificate {
            kind: kind.to_string(),
            conditions: conditions.into_iter().map(|(n, h)| Condition { name: n.to_string(), holds: h }).collect(),
            note: "summability judged on asymptotic decay exponents; offset forms a/(1+b k^p) are treated as k^-p".into(),
        }
    }

    pub fn valid(&self) -> bool {
        self.conditions.iter().all(|c| c.holds)
    }

    pub fn holds(&self, name: &str) -> Option<bool> {
        self.conditions.iter().find(|c| c.name == name).map(|c| c.holds)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.conditions.iter().filter(|c| !c.holds).map(|c| c.name.as_str()).collect()
    }
}

/// Conditions on the weakening factor `χ ~ k^-s` and input step `γ ~ k^-t`.
pub fn validate_consensus_schedules(chi: &Schedule, gamma: &Schedule) -> Certificate {
    let s = chi.decay_exponent();
    let t = gamma.decay_exponent();
    Certificate::new(
        "consensus",
        vec![
            ("sum chi diverges", s <= 1.0),
            ("sum chi^2 converges", 2.0 * s > 1.0),
            ("sum gamma^2/chi converges", 2.0 * t - s > 1.0),
            ("exponent chain 0.5 < s < t <= 1", 0.5 < s && s < t && t <= 1.0),
        ],
    )
}

/// Conditions on `χ ~ k^-s`, `θ ~ k^-u` and `γ ~ k^-t` for the optimizer.
pub fn validate_optimizer_schedules(chi: &Schedule, gamma: &Schedule, theta: &Schedule) -> Certificate {
    let s = chi.decay_exponent();
    let t = gamma.decay_exponent();
    let u = theta.decay_exponent();
    Certificate::new(
        "optimizer",
        vec![
            ("sum chi diverges", s <= 1.0),
            ("sum theta diverges", u <= 1.0),
            ("sum gamma diverges", t <= 1.0),
            ("sum chi^2 converges", 2.0 * s > 1.0),
            ("sum gamma^2/theta converges", 2.0 * t - u > 1.0),
            ("sum theta^2/chi converges", 2.0 * u - s > 1.0),
            ("exponent chain 0.5 < s < u < t <= 1", 0.5 < s && s < u && u < t && t <= 1.0),
        ],
    )
}

/// Summability of `step/ν` and, when `chi` is given, of `(χ ν)²`.
pub fn validate_privacy_finiteness(step: &Schedule, noise: &NoiseSchedule, chi: Option<&Schedule>) -> Certificate {
    let q = noise.growth_exponent();
    let mut conditions = vec![("sum step/nu converges", step.decay_exponent() + q > 1.0)];
    if let Some(chi) = chi {
        conditions.push(("sum (chi nu)^2 converges", 2.0 * chi.decay_exponent() - 2.0 * q > 1.0));
    }
    Certificate::new("privacy", conditions)
}

/// `dim` independent Laplace(ν) draws by inverse CDF.
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, nu: f64, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| laplace_draw(rng, nu))
}

pub(crate) fn laplace_draw<R: Rng + ?Sized>(rng: &mut R, nu: f64) -> f64 {
    let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
    -nu * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Laplace(ν) cumulative distribution function.
pub fn laplace_cdf(x: f64, nu: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / nu).exp()
    } else {
        1.0 - 0.5 * (-x / nu).exp()
    }
}

/// Partial sums at the decade boundaries `10, 100, …, 10^decades`.
pub fn decade_partial_sums(term: impl Fn(usize) -> f64, decades: u32) -> Vec<f64> {
    let mut out = Vec::with_capacity(decades as usize);
    let mut acc = 0.0;
    let mut next = 10usize;
    for k in 1..=10usize.pow(decades) {
        acc += term(k);
        if k == next {
            out.push(acc);
            next *= 10;
        }
    }
    out
}

/// Laplace scales for the three broadcast channels of the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseChannels {
    pub lambda: NoiseSchedule,
    pub y: NoiseSchedule,
    pub z: NoiseSchedule,
}

impl NoiseChannels {
    /// The same scale on every channel.
    pub fn shared(noise: NoiseSchedule) -> Self {
        NoiseChannels { lambda: noise, y: noise, z: noise }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        self.lambda.validate()?;
        self.y.validate()?;
        self.z.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pw(e: f64) -> Schedule {
        Schedule::pure_power(e).unwrap()
    }

    #[test]
    fn experiment_schedule_values() {
        let gamma = Schedule::power(0.1, 0.1, 1.0).unwrap();
        assert!((gamma.value(10) - 0.05).abs() < 1e-15);
        assert_eq!(pw(0.5).value(4), 0.5);
    }

    #[test]
    fn consensus_certificates() {
        assert!(validate_consensus_schedules(&pw(0.7), &pw(0.9)).valid());
        let same = validate_consensus_schedules(&pw(0.9), &pw(0.9));
        assert!(!same.valid());
        assert_eq!(same.holds("exponent chain 0.5 < s < t <= 1"), Some(false));
        let slow = validate_consensus_schedules(&pw(0.4), &pw(0.9));
        assert_eq!(slow.holds("sum chi^2 converges"), Some(false));
    }

    #[test]
    fn optimizer_certificates() {
        let experiment = validate_optimizer_schedules(
            &Schedule::power(1.0, 0.1, 0.9).unwrap(),
            &Schedule::power(0.1, 0.1, 1.0).unwrap(),
            &Schedule::power(0.1, 0.1, 0.96).unwrap(),
        );
        assert!(experiment.valid(), "{:?}", experiment.failed());
        let weak = validate_optimizer_schedules(&pw(0.6), &pw(0.8), &pw(0.7));
        assert_eq!(weak.holds("sum theta^2/chi converges"), Some(false));
        let unordered = validate_optimizer_schedules(&pw(0.9), &pw(1.0), &pw(0.8));
        assert!(!unordered.valid());
        assert_eq!(unordered.holds("exponent chain 0.5 < s < u < t <= 1"), Some(false));
    }

    #[test]
    fn privacy_certificates() {
        let growing = NoiseSchedule::new(1.0, 0.1, 0.2).unwrap();
        let flat = NoiseSchedule::constant(1.0).unwrap();
        assert!(validate_privacy_finiteness(&pw(1.0), &growing, None).valid());
        assert!(!validate_privacy_finiteness(&pw(1.0), &flat, None).valid());
        assert!(validate_privacy_finiteness(&pw(0.96), &growing, None).valid());
    }

    #[test]
    fn geometric_and_zero_decay_instantly() {
        assert_eq!(Schedule::Geometric { initial: 1.0, ratio: 0.5 }.decay_exponent(), f64::INFINITY);
        assert_eq!(Schedule::Constant { value: 0.0 }.decay_exponent(), f64::INFINITY);
        assert_eq!(Schedule::Constant { value: 1.0 }.decay_exponent(), 0.0);
    }

    #[test]
    fn invalid_schedules_rejected() {
        assert!(Schedule::power(1.0, 0.0, 1.5).is_err());
        assert!(Schedule::power(0.0, 0.0, 0.5).is_err());
        assert!(NoiseSchedule::new(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn laplace_is_deterministic_per_seed() {
        let a = sample_laplace(&mut ChaCha8Rng::seed_from_u64(3), 1.0, 16);
        let b = sample_laplace(&mut ChaCha8Rng::seed_from_u64(3), 1.0, 16);
        assert_eq!(a, b);
    }

    #[test]
    fn laplace_cdf_is_symmetric() {
        assert_eq!(laplace_cdf(0.0, 2.0), 0.5);
        assert!((laplace_cdf(1.3, 0.7) + laplace_cdf(-1.3, 0.7) - 1.0).abs() < 1e-15);
    }
}
