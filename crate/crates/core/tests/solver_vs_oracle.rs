use pdbrf_core::brf::{run, RunStatus, Seeds, StepPolicy, StopRule};
use pdbrf_core::oracles::{active_set_oracle, kkt_residual, KKT_GAMMA_PROBE};
use pdbrf_core::suite;

#[test]
fn every_instance_converges_to_the_exact_solution() {
    for inst in suite::all() {
        let bundle = inst.bundle().unwrap();
        let policy = StepPolicy::for_bundle(&bundle, None, 0.01, None).unwrap();
        let out = run(&bundle, None, &policy, &Seeds::zeros(&bundle), &StopRule::new(100_000, 1e-10)).unwrap();
        let (exact, _) = active_set_oracle(&inst.spec, 100_000).unwrap();
        let kkt = kkt_residual(&bundle, &out.solution, KKT_GAMMA_PROBE).unwrap();
        let err = out.solution.distance(&exact).unwrap();
        println!("{}: gamma {:.4} iters {} kkt {kkt:.2e} err {err:.2e}", inst.name, policy.gamma, out.history.len());
        assert_eq!(out.status, RunStatus::Converged, "{}", inst.name);
        assert!(kkt <= 1e-8, "{}", inst.name);
        assert!(err <= 1e-5, "{}", inst.name);
    }
}
