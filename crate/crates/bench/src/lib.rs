//! Shared fixtures for the benchmark targets.

use gkdv_core::grid::GridSpec;
use gkdv_core::pde::{DomainSpec, Field, GkdvSolver};
use gkdv_core::profiles::{q_exact, ProfileSet};

pub fn bench_profiles() -> ProfileSet {
    // Smaller than the reference grid; the solve cost scales linearly in n.
    ProfileSet::build(GridSpec::new(-20.0, 20.0, 2001).unwrap()).unwrap()
}

pub fn bench_solver() -> (GkdvSolver, Field) {
    let d = DomainSpec::new(-64.0, 64.0, 2048).unwrap();
    let u0 = Field::from_fn(0.0, d, q_exact);
    (GkdvSolver::new(d, 1e-3, None).unwrap(), u0)
}
