//! Shared fixtures for the kernel benchmarks.

use ssn_core::{Coherence, GlmProblem, LossKind, SyntheticSpec};

/// Logistic problem on a synthetic instance with one heavy row.
pub fn problem(n: usize, d: usize, seed: u64) -> GlmProblem {
    let data = SyntheticSpec::new(n, d, Coherence::OneHeavyRow { weight: 0.5 }, seed)
        .generate()
        .expect("valid synthetic spec");
    GlmProblem::new(data.x, data.y, 1e-2, LossKind::Logistic).expect("valid problem")
}
