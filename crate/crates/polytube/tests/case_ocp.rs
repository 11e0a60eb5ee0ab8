use polytube::case_study;
use polytube::ensemble;
use polytube::ocp::{self, OcpOptions, OcpSolver};
use polytube::qp::Settings;

#[test]
fn invariant_and_first_prediction() {
    let meta = case_study::meta_template().unwrap();
    let sys = case_study::system();
    let cost = case_study::cost(case_study::TAU);
    let steady = ocp::solve_invariant(&sys, &cost, &meta, &Settings::precise()).unwrap();
    assert!(ocp::audit_tube(&sys, &meta, &steady.as_tube(), None, None).passed(1e-8));
    let zp = ensemble::ensemble_step(&meta, &sys, &steady.z, &steady.u, ensemble::IntersectionMode::Exact).unwrap();
    assert!((zp - &steady.z).max() <= 1e-8);

    let yhat = case_study::initial_parameter();
    let terminal = || OcpOptions::literal().with_terminal(steady.z.clone());
    let lit = ocp::build_dual_ocp(&sys, &cost, &meta, 10, &yhat, &terminal()).unwrap();
    assert_eq!(lit.num_vars(), 4368);
    assert_eq!(lit.num_rows() - lit.terminal_rows().len(), 40288);
    let ocp = ocp::build_dual_ocp(&sys, &cost, &meta, 10, &yhat, &OcpOptions::default().with_terminal(steady.z.clone())).unwrap();
    assert!(ocp.num_rows() < lit.num_rows());

    let sol = ocp.solve(&Settings::precise()).unwrap();
    assert!(sol.is_solved());
    assert!(ocp::audit_tube(&sys, &meta, &sol, Some(&yhat), Some(&steady.z)).passed(1e-6));
    // pruning keeps the feasible set: both builds reach the same optimum
    let lsol = lit.solve(&Settings::precise()).unwrap();
    assert!((lsol.objective - sol.objective).abs() <= 1e-6 * sol.objective.abs());

    // repeated receding-horizon solves from the same set agree
    let mut solver = OcpSolver::new(ocp, Settings::mpc());
    let first = solver.solve_from(&yhat).unwrap();
    let again = solver.solve_from(&yhat).unwrap();
    assert!((first.objective - sol.objective).abs() <= 1e-5 * sol.objective.abs());
    assert!((first.objective - again.objective).abs() <= 1e-9 * first.objective.abs());
}
