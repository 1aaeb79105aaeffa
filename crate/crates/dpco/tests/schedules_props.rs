use dpco::schedules::{
    decade_partial_sums, laplace_cdf, sample_laplace, validate_consensus_schedules, validate_optimizer_schedules, validate_privacy_finiteness,
    NoiseSchedule, Schedule,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn schedule_strategy() -> impl Strategy<Value = Schedule> {
    prop_oneof![
        (0.01f64..10.0, 0.0f64..2.0, 0.05f64..=1.0).prop_map(|(scale, offset, exponent)| Schedule::Power { scale, offset, exponent }),
        (0.0f64..5.0).prop_map(|value| Schedule::Constant { value }),
        (0.01f64..5.0, 0.01f64..0.9999).prop_map(|(initial, ratio)| Schedule::Geometric { initial, ratio }),
    ]
}

proptest! {
    #[test]
    fn schedules_are_nonnegative_and_nonincreasing(s in schedule_strategy(), k in 1usize..1_000_000) {
        s.validate().unwrap();
        let (a, b) = (s.value(k), s.value(k + 1));
        prop_assert!(a >= 0.0 && a.is_finite());
        prop_assert!(b <= a);
    }

    #[test]
    fn noise_scale_is_positive_and_nondecreasing(base in 0.01f64..10.0, growth in 0.0f64..2.0, exponent in 0.0f64..1.0, k in 1usize..1_000_000) {
        let n = NoiseSchedule::new(base, growth, exponent).unwrap();
        prop_assert!(n.value(k) > 0.0);
        prop_assert!(n.value(k + 1) >= n.value(k));
        prop_assert!((n.variance(k) - 2.0 * n.value(k).powi(2)).abs() <= 1e-12 * n.variance(k));
    }

    #[test]
    fn certificates_follow_exponent_chain(s in 0.3f64..1.0, u in 0.3f64..1.0, t in 0.3f64..=1.0) {
        let p = |e| Schedule::pure_power(e).unwrap();
        let c = validate_consensus_schedules(&p(s), &p(t));
        prop_assert_eq!(c.valid(), 0.5 < s && s < t && 2.0 * t - s > 1.0);
        let o = validate_optimizer_schedules(&p(s), &p(t), &p(u));
        prop_assert_eq!(o.valid(), 0.5 < s && s < u && u < t && 2.0 * t - u > 1.0 && 2.0 * u - s > 1.0);
    }
}

/// Kolmogorov–Smirnov test of the sampler against the closed-form CDF.
#[test]
fn laplace_sampler_passes_ks_test() {
    let n = 100_000;
    let critical = 1.949 / (n as f64).sqrt(); // α = 0.001
    for (seed, nu) in [(1u64, 0.3), (2, 1.0), (3, 7.5)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs: Vec<f64> = sample_laplace(&mut rng, nu, n).iter().copied().collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = laplace_cdf(x, nu);
                (f - i as f64 / n as f64).max((i + 1) as f64 / n as f64 - f)
            })
            .fold(0.0, f64::max);
        assert!(d < critical, "ν = {nu}: D = {d:.5} ≥ {critical:.5}");
    }
}

#[test]
fn laplace_cdf_reference_values() {
    assert_eq!(laplace_cdf(0.0, 1.0), 0.5);
    assert!((laplace_cdf(1.0, 1.0) - (1.0 - 0.5 * (-1.0f64).exp())).abs() < 1e-15);
    assert!((laplace_cdf(-2.0, 0.5) - 0.5 * (-4.0f64).exp()).abs() < 1e-15);
}

/// Numeric saturation: the `10^6`-th term is below `1e-6` and the last decade
/// adds less than the one before.
fn probe_saturates(term: impl Fn(usize) -> f64) -> bool {
    let sums = decade_partial_sums(&term, 6);
    let n = sums.len();
    term(1_000_000) < 1e-6 && sums[n - 1] - sums[n - 2] < sums[n - 2] - sums[n - 3]
}

#[test]
fn finiteness_certificate_agrees_with_partial_sums() {
    // Exponent pairs kept clear of the summability boundary.
    for t in [0.5, 0.7, 0.9, 1.0] {
        for q in [0.0, 0.1, 0.2, 0.4, 0.6, 0.8] {
            if ((t + q) - 1.0f64).abs() < 0.15 {
                continue;
            }
            let step = Schedule::pure_power(t).unwrap();
            let noise = NoiseSchedule::new(1.0, 1.0, q).unwrap();
            let cert = validate_privacy_finiteness(&step, &noise, None);
            let probe = probe_saturates(|k| step.value(k) / noise.value(k));
            assert_eq!(cert.valid(), probe, "t = {t}, q = {q}");
        }
    }
}

#[test]
fn constant_noise_fails_finiteness_with_consensus_schedules() {
    let cert = validate_privacy_finiteness(&Schedule::pure_power(0.9).unwrap(), &NoiseSchedule::constant(1.0).unwrap(), Some(&Schedule::pure_power(0.7).unwrap()));
    assert!(!cert.valid());
    assert_eq!(cert.holds("sum step/nu converges"), Some(false));
}

#[test]
fn invalid_parameters_are_rejected() {
    assert!(Schedule::power(1.0, 0.0, 1.5).is_err());
    assert!(Schedule::power(-1.0, 0.0, 0.5).is_err());
    assert!(Schedule::Geometric { initial: 1.0, ratio: 1.0 }.validate().is_err());
    assert!(Schedule::Constant { value: f64::NAN }.validate().is_err());
    assert!(NoiseSchedule::new(0.0, 0.0, 0.0).is_err());
    assert!(NoiseSchedule::new(1.0, -0.1, 0.0).is_err());
}
