use dpco_web::{budget_curves, consensus_curve, optimizer_curve};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn consensus_curve_is_seed_deterministic() {
    let a = consensus_curve(6, 0.5, 500, 4, 0.7, 0.9, true).unwrap();
    assert_eq!(a, consensus_curve(6, 0.5, 500, 4, 0.7, 0.9, true).unwrap());
    assert_ne!(a, consensus_curve(6, 0.5, 500, 5, 0.7, 0.9, true).unwrap());
}

#[test]
fn budgets_grow_and_certificates_track_noise_growth() {
    let b = parse(budget_curves(10_000, 0.4, 0.1, 0.2).unwrap());
    for key in ["consensus", "optimizer"] {
        let e = floats(&b[key]);
        assert!(e.windows(2).all(|p| p[1] >= p[0]), "{key}");
    }
    assert_eq!(b["certificate_optimizer"], true);
    let flat = parse(budget_curves(1000, 0.4, 0.0, 0.2).unwrap());
    assert_eq!(flat["certificate_consensus"], false);
}

#[test]
fn noiseless_optimizer_approaches_the_solution() {
    let o = parse(optimizer_curve("pair_toy", 5000, 1, false).unwrap());
    let err = floats(&o["value"]);
    assert!(err.last().unwrap() < &(0.5 * err[0]));
}
