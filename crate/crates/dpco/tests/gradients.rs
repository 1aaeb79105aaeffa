mod common;

use common::{column, fd_jacobian, instances, relative_error};
use dpco::problem::ProblemInstance;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn random_state(inst: &ProblemInstance, rng: &mut ChaCha8Rng) -> (Vec<DVector<f64>>, DVector<f64>) {
    let x = inst.agents().iter().map(|a| a.set.sample_uniform(rng).unwrap()).collect();
    (x, inst.dual_set().sample_uniform(rng).unwrap())
}

fn worst_errors(points: usize) -> Vec<(&'static str, [f64; 4])> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    instances()
        .into_iter()
        .map(|(name, inst)| {
            let mut worst = [0.0f64; 4];
            for _ in 0..points {
                let (x, lambda) = random_state(&inst, &mut rng);
                for (i, a) in inst.agents().iter().enumerate() {
                    let xi = &x[i];
                    let fd_map = fd_jacobian(|v| a.map.eval(v), xi, H);
                    worst[0] = worst[0].max(relative_error(&a.map.matrix, &fd_map));
                    let fd_con = fd_jacobian(|v| a.constraint.eval(v), xi, H);
                    worst[1] = worst[1].max(relative_error(&a.constraint.jacobian(xi), &fd_con));
                    let lagr = |v: &DVector<f64>| {
                        let mut xs = x.clone();
                        xs[i] = v.clone();
                        DVector::from_element(1, inst.lagrangian(&xs, &lambda))
                    };
                    let fd_lx = fd_jacobian(lagr, xi, H).transpose();
                    let lx = inst.lagrangian_x_grad(i, xi, &inst.aggregate(&x), &lambda).unwrap();
                    worst[3] = worst[3].max(relative_error(&column(lx), &fd_lx));
                }
                let y = inst.aggregate(&x);
                let fd_cost = fd_jacobian(|v| DVector::from_element(1, inst.cost().value(v)), &y, H).transpose();
                worst[2] = worst[2].max(relative_error(&column(inst.cost().gradient(&y)), &fd_cost));
            }
            (name, worst)
        })
        .collect()
}

#[test]
fn analytic_derivatives_match_central_differences() {
    for (name, worst) in worst_errors(100) {
        for (label, err) in ["local map", "local constraint", "cost", "lagrangian"].iter().zip(worst) {
            assert!(err < TOL, "{name} {label}: relative error {err:.3e}");
        }
    }
}

#[test]
fn jacobian_transpose_product_matches_explicit_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (_, inst) in instances() {
        for _ in 0..20 {
            let (x, lambda) = random_state(&inst, &mut rng);
            for (i, a) in inst.agents().iter().enumerate() {
                let explicit: DVector<f64> = a.constraint.jacobian(&x[i]).transpose() * &lambda;
                let fused = a.constraint.jacobian_transpose_mul(&x[i], &lambda);
                assert!((fused - explicit).amax() < 1e-12);
            }
        }
    }
}

#[test]
fn wrong_dimensions_are_rejected() {
    let (_, inst) = instances().remove(2);
    let x0 = DVector::zeros(inst.agent(0).dim() + 1);
    let y = DVector::zeros(inst.map_dim());
    let lambda = DVector::zeros(inst.constraint_dim());
    assert!(inst.lagrangian_x_grad(0, &x0, &y, &lambda).is_err());
}
