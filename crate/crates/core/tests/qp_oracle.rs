//! QP solver certification against a brute-force active-set oracle.

mod common;

use common::{active_set_oracle, random_feasible_qp};
use exo_core::qp::{QpSolver, QpStatus};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

#[test]
fn random_qps_match_active_set_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a5e);
    let solver = QpSolver::default();
    let mut solved = 0;
    for case in 0..300 {
        let problem = random_feasible_qp(&mut rng, 6);
        let Some((obj_ref, x_ref)) = active_set_oracle(&problem) else {
            panic!("oracle failed on a feasible problem (case {case})");
        };
        let sol = solver.solve(&problem, None).unwrap();
        assert_eq!(
            sol.status,
            QpStatus::Optimal,
            "case {case}: status {:?}, kkt {:?}, iters {}",
            sol.status,
            sol.kkt,
            sol.iterations
        );
        assert!(
            (sol.objective - obj_ref).abs() <= 1e-6 * (1.0 + obj_ref),
            "case {case}: objective {} vs oracle {} (x {:?} vs {:?})",
            sol.objective,
            obj_ref,
            sol.x,
            x_ref
        );
        assert!(sol.kkt.max() <= 1e-6, "case {case}: kkt {:?}", sol.kkt);
        solved += 1;
    }
    assert_eq!(solved, 300);
}
