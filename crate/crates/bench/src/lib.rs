//! Shared fixtures for the criterion benchmarks.

use pdbrf_core::brf::{init, Seeds, SolverState, StepPolicy};
use pdbrf_core::product::OperatorBundle;
use pdbrf_core::suite::{self, Instance};

/// A reference problem with its default step policy and a state after `init`.
pub struct Fixture {
    pub name: &'static str,
    pub bundle: OperatorBundle,
    pub policy: StepPolicy,
    pub state: SolverState,
}

impl Fixture {
    pub fn new(inst: &Instance) -> Self {
        let bundle = inst.bundle().expect("suite instances build");
        let policy = StepPolicy::for_bundle(&bundle, None, 0.01, None).expect("default policy");
        let state = init(&bundle, None, &policy, &Seeds::zeros(&bundle)).expect("init");
        Fixture { name: inst.name, bundle, policy, state }
    }
}

/// Fixtures for every reference problem.
pub fn fixtures() -> Vec<Fixture> {
    suite::all().iter().map(Fixture::new).collect()
}
