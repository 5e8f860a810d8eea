//! Dual-path checks on randomly generated valid couplings: the environment
//! marginal of the full propagation must match the propagation of the
//! autonomous marginal generator, and the conditional weight balance must
//! hold along the trajectory.

mod common;

use bystander::lindblad::propagate;
use bystander::linalg::{max_abs, partial_trace};
use bystander::model::ModelSpec;
use bystander::structure::{conditional_balance_residuals, env_marginal_generator};
use common::*;

#[test]
fn marginal_of_full_propagation_matches_marginal_propagation() {
    let mut r = rng(4242);
    for k in 0..6 {
        let (ds, de) = ([2, 3][k % 2], [2, 3][(k / 2) % 2]);
        let coupling = rand_coupling(ds, de, 1 + k % 2, &mut r);
        let l_s = rand_lindbladian(ds, &mut r);
        let l_e = rand_lindbladian(de, &mut r);
        let model = ModelSpec::new(
            l_s,
            l_e.clone(),
            coupling.clone(),
            rand_density(ds, &mut r),
            rand_density(de, &mut r),
        )
        .unwrap();
        let times: Vec<f64> = (0..10).map(|i| i as f64 * 0.25).collect();
        let (_, full) =
            propagate(&model.total_generator().unwrap(), &model.initial_state(), &times).unwrap();
        let marginal_gen = env_marginal_generator(&coupling, &l_e).unwrap();
        let (_, marg) = propagate(&marginal_gen, &model.rho0_e, &times).unwrap();
        for (f, m) in full.iter().zip(&marg) {
            let traced = partial_trace(f.operator(), 1).unwrap();
            assert!(
                max_abs(&(traced.matrix() - m.matrix())) <= 1e-8,
                "coupling {k}: marginal mismatch"
            );
        }
    }
}

#[test]
fn weight_balance_holds_on_random_couplings() {
    let mut r = rng(911);
    for k in 0..3 {
        let coupling = rand_coupling(2, 2, 1 + k % 2, &mut r);
        let l_s = rand_lindbladian(2, &mut r);
        let l_e = rand_lindbladian(2, &mut r);
        let model = ModelSpec::new(
            l_s.clone(),
            l_e.clone(),
            coupling.clone(),
            rand_density(2, &mut r),
            rand_density(2, &mut r),
        )
        .unwrap();
        let h = 1e-3;
        let times: Vec<f64> = (0..=400).map(|i| i as f64 * h).collect();
        let (_, traj) =
            propagate(&model.total_generator().unwrap(), &model.initial_state(), &times).unwrap();
        let res = conditional_balance_residuals(&times, &traj, &coupling, &l_s, &l_e).unwrap();
        assert!(res.weight_residual <= 1e-5, "coupling {k}: residual {}", res.weight_residual);
    }
}
