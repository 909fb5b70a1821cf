//! Sub-sampled Newton methods for regularized generalized linear models.
//!
//! The Hessian of `F(w) = sum_i psi(x_i^T w, y_i) + lambda |w|^2` is written as
//! `A(w)^T A(w) + Q` with one block of `A` per datum. Blocks are sampled with
//! uniform, row-norm or leverage-score probabilities to build a cheap Hessian
//! estimate, and the resulting Newton system is solved directly or by CG.
//!
//! ```
//! use ssn_core::{Budget, GlmProblem, LossKind, SamplingScheme, SsnConfig, Vector};
//! use ssn_core::{Coherence, SyntheticSpec};
//!
//! let data = SyntheticSpec::new(500, 5, Coherence::Incoherent, 1).generate().unwrap();
//! let problem = GlmProblem::new(data.x, data.y, 1e-2, LossKind::Logistic).unwrap();
//! let cfg = SsnConfig::new(SamplingScheme::BlockPartialLeverage, Budget::Count(100));
//! let out = ssn_core::ssn_run(&problem, &Vector::zeros(5), &cfg, None).unwrap();
//! assert!(out.trace.last().unwrap().grad_norm < 1e-6);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod glm;
pub mod linalg;
pub mod sampling;
pub mod ssn;
pub mod synthetic;
pub mod trace;

pub use baselines::{
    agd_run, gd_run, lbfgs_run, newton_run, run_baseline, BaselineConfig, BaselineMethod, InnerSolver, StepRule,
};
pub use dataset::{load_dataset, preprocess, DataFormat, Dataset, LabelPosition, LoadOptions, PreprocessOptions};
pub use diagnostics::{
    certify, condition_numbers, condition_numbers_blocked, estimate_lipschitz_l, measure_c1, measure_c2,
    verify_recursion, verify_recursion_measured, C2Certifier, CertifyReport, ConditionNumbers, ConditionReport,
    RecursionReport,
};
pub use error::{Error, Result, RunFailure};
pub use glm::{BlockedMatrix, GlmProblem, HessianFactorization, LossKind};
pub use linalg::{DenseMatrix, PsdMatrix, SparseEmbedding, Vector};
pub use sampling::{BlockSample, LeverageScores, SamplingPlan, SamplingScheme};
pub use ssn::{
    assemble_or_apply, convergence_constants, solve_subproblem, ssn_run, Budget, ConvergenceConstants,
    LeverageMode, Regime, RunOutput, SolverKind, SsnConfig, SubsampledHessian, Termination,
};
pub use synthetic::{Coherence, SyntheticData, SyntheticSpec};
pub use trace::{IterRecord, RunTrace, TRACE_CSV_HEADER};
