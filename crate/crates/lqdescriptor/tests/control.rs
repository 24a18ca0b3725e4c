mod common;

use proptest::prelude::*;

use lqdescriptor::config::Tolerances;
use lqdescriptor::control::{self, feasibility, finite_horizon_oracle, optimal_value, synthesize, zero_dynamics};
use lqdescriptor::error::Error;
use lqdescriptor::linalg::{eye, from_rows, zeros, CVec, C64};
use lqdescriptor::lure;
use lqdescriptor::system::{self, feedback_form, WeightedSystem};

use common::*;

fn s3() -> f64 {
    3f64.sqrt()
}

/// Chain of length two that no input reaches, plus a controlled scalar.
fn not_i_controllable() -> WeightedSystem {
    WeightedSystem::from_parts(
        from_rows(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 0.0], &[0.0, 0.0, 1.0]]),
        eye(3),
        from_rows(&[&[0.0], &[0.0], &[1.0]]),
        eye(3),
        zeros(3, 1),
        eye(1),
    )
    .unwrap()
}

#[test]
fn running_example_trajectory_and_multipliers() {
    let tol = Tolerances::default();
    let w = example();
    let sol = lure::lure_solve(&w, &tol).unwrap();
    let r = synthesize(&w, &sol, &x0_example(), 40, &tol).unwrap();
    assert!((r.optimal_value - s3()).abs() < 1e-12);
    assert!(r.existence && r.uniqueness);
    assert!(r.objective.converged);
    assert!((r.objective.total() - s3()).abs() < 1e-10);
    // x_j = r^j (r, 1) with r = 2 - sqrt3, j >= 1
    let rr = 2.0 - s3();
    for j in 1..10 {
        let x = &r.trajectory.x[j];
        let p = rr.powi(j as i32);
        assert!((x[0].re - p * rr).abs() < 1e-12 && (x[1].re - p).abs() < 1e-12, "j = {j}");
    }
    for res in [r.step_residual, r.bvd_residual, r.palindromic_residual, r.terminal_residual, r.energy_residual] {
        assert!(res < 1e-10, "{res}");
    }
    assert_eq!(r.multipliers_m.len(), 39);
    assert!((r.multipliers_mu[0][1].re + s3()).abs() < 1e-10);
}

#[test]
fn closed_loop_zero_dynamics() {
    let tol = Tolerances::default();
    let w = example();
    let sol = lure::lure_solve(&w, &tol).unwrap();
    let zd = zero_dynamics(&w.sys, &sol.k, &sol.l, &tol).unwrap();
    assert!(zd.strongly_asymptotically_stable, "{zd:?}");
    // x+ = 2x + u: the output x has no zeros, the output u keeps the mode at 2
    let sys = system::DescriptorSystem::new(eye(1), from_rows(&[&[2.0]]), eye(1)).unwrap();
    let zd = zero_dynamics(&sys, &eye(1), &zeros(1, 1), &tol).unwrap();
    assert!(zd.asymptotically_stable);
    let zd = zero_dynamics(&sys, &zeros(1, 1), &eye(1), &tol).unwrap();
    assert!(!zd.stabilizable, "{zd:?}");
}

#[test]
fn inconsistent_initial_state_is_invalid() {
    let tol = Tolerances::default();
    let w = not_i_controllable();
    let fef = feedback_form(&w, &tol).unwrap();
    assert_eq!(fef.n3, 1);
    match lure::lure_solve(&w, &tol) {
        Ok(sol) => {
            let x0 = CVec::from_vec(vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
            assert!(matches!(optimal_value(&w, &sol, &x0, &tol), Err(Error::InvalidInput(_))));
            let ok = CVec::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0)]);
            assert!(optimal_value(&w, &sol, &ok, &tol).is_ok());
        }
        Err(e) => assert!(matches!(e, Error::UnsupportedStructure(_)), "{e}"),
    }
    // wrong length
    let sol = lure::lure_solve(&example(), &tol).unwrap();
    assert!(matches!(optimal_value(&example(), &sol, &CVec::zeros(3), &tol), Err(Error::InvalidInput(_))));
}

#[test]
fn oracle_trajectory_is_feasible() {
    let tol = Tolerances::default();
    let w = example();
    let r = finite_horizon_oracle(&w, &x0_example(), 12, &tol).unwrap();
    assert_eq!(r.trajectory.x.len(), 13);
    assert!(r.trajectory.residual(&w.sys) < 1e-10);
    assert!((w.e() * &r.trajectory.x[12]).norm() < 1e-10);
    assert!((w.e() * (&r.trajectory.x[0] - x0_example())).norm() < 1e-10);
    assert!(r.kkt_residual < 1e-10);
    assert!(r.value >= s3() - 1e-10);
}

#[test]
fn feasibility_reasons() {
    let tol = Tolerances::default();
    assert!(feasibility(&example(), &tol).unwrap().feasible);
    let neg = feasibility(&example().negated(), &tol).unwrap();
    assert!(!neg.feasible && neg.solution.is_none());
    // an uncontrollable mode on the unit circle is out of scope
    let w = WeightedSystem::from_parts(eye(2), from_rows(&[&[0.5, 0.0], &[0.0, -1.0]]), from_rows(&[&[1.0], &[0.0]]), eye(2), zeros(2, 1), eye(1))
        .unwrap();
    assert!(matches!(feasibility(&w, &tol), Err(Error::UnsupportedStructure(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Finite-horizon values decrease with the horizon and bound the
    /// infinite-horizon value from above.
    #[test]
    fn oracle_bounds_the_optimal_value(seed in 0u64..100_000) {
        let tol = Tolerances::default();
        let w = &dare_corpus(1, seed)[0];
        let sol = lure::lure_solve(w, &tol).unwrap();
        let mut g = rng(seed + 3);
        let x0 = random_vec(&mut g, w.n());
        let v = optimal_value(w, &sol, &x0, &tol).unwrap();
        let mut prev = f64::INFINITY;
        for n in 1..12 {
            // short horizons cannot reach the terminal constraint: J_N is infinite
            let j = match finite_horizon_oracle(w, &x0, n, &tol) {
                Ok(r) => r.value,
                Err(Error::Infeasible(_)) => {
                    prop_assert!(n < w.n() && prev.is_infinite(), "infeasible at horizon {}", n);
                    continue;
                }
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            };
            prop_assert!(prev.is_infinite() || j <= prev + 1e-9 * (1.0 + prev.abs()), "J_{} = {} after {}", n, j, prev);
            prop_assert!(j >= v - 1e-9 * (1.0 + v.abs()), "J_{} = {} below {}", n, j, v);
            prev = j;
        }
    }

    /// Synthesized trajectories solve the dynamics, start at `x0`, and their
    /// cost plus the terminal value equals the optimal value.
    #[test]
    fn synthesized_trajectories_balance_energy(seed in 0u64..100_000, descriptor in any::<bool>()) {
        let tol = Tolerances::default();
        let w = if descriptor { popov_corpus(1, seed)[0].clone() } else { dare_corpus(1, seed)[0].clone() };
        let f = match feasibility(&w, &tol) {
            Ok(f) if f.feasible => f,
            _ => return Ok(()),
        };
        let sol = f.solution.unwrap();
        let basis = system::consistent_initials(&feedback_form(&w, &tol).unwrap(), &tol);
        let mut g = rng(seed + 5);
        let x0 = &basis * random_vec(&mut g, basis.ncols());
        let r = match synthesize(&w, &sol, &x0, 30, &tol) {
            Ok(r) => r,
            Err(Error::Infeasible(_)) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        prop_assert!(r.energy_residual <= 1e-8, "energy {}", r.energy_residual);
        prop_assert!(r.trajectory.residual(&w.sys) <= 1e-8 * (1.0 + x0.norm()));
        prop_assert!((w.e() * (&r.trajectory.x[0] - &x0)).norm() <= 1e-9 * (1.0 + x0.norm()));
        prop_assert!((control::energy_balance_residual(&w, &sol, &r.trajectory) - r.energy_residual).abs() < 1e-12);
    }
}
