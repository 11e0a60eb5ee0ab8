use polytube::case_study;
use polytube::ocp;
use polytube::qp::Settings;
use polytube::sim::{self, ClosedLoop, SamplePolicy, SimConfig};

#[test]
fn case_study_closed_loop_is_sound() {
    let meta = case_study::meta_template().unwrap();
    let sys = case_study::system();
    let cost = case_study::cost(case_study::TAU);
    let steady = ocp::solve_invariant(&sys, &cost, &meta, &Settings::precise()).unwrap();
    let lp = ClosedLoop { sys: &sys, cost: &cost, meta: &meta, steady: &steady, settings: Settings::mpc() };
    let yhat = case_study::initial_parameter();
    for (seed, pol) in [(1u64, SamplePolicy::UniformVertex), (2, SamplePolicy::AdversarialVertex), (3, SamplePolicy::UniformBox)] {
        let cfg = SimConfig { seed, steps: 12, disturbance: pol, noise: pol, ..SimConfig::default() };
        let x0 = sim::sample_box(seed, &case_study::X0_LO, &case_study::X0_HI);
        let tr = lp.run(&x0, &yhat, &cfg).unwrap();
        let s = tr.summary();
        assert!(tr.feasible());
        assert_eq!(s.containment_violations, 0);
        assert!(s.min_state_margin >= -1e-9);
        assert!(s.max_cold_gap <= 1e-6);
    }
}
