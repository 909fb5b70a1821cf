//! Sub-sampled Newton with non-uniform block sampling.
//!
//! Each outer iteration builds a sampling distribution over the blocks of
//! `A(w_t)`, keeps block `i` with probability `q_i = min(s p_i, 1)` scaled by
//! `1 / sqrt(q_i)`, forms `H~ = sum_kept A_i^T A_i / q_i + Q`, and takes the
//! unit step `v` that (inexactly) solves `H~ v = -g(w_t)`.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{measure_c1, C2Certifier};
use crate::error::{Error, Result, RunFailure};
use crate::glm::{BlockedMatrix, GlmProblem};
use crate::linalg::{
    cholesky_solve, conjugate_gradient, symmetric_eig_extremes, DenseMatrix, PsdMatrix, Vector,
};
use crate::sampling::{
    block_norm_squares_distribution, derive_seed, draw_block_sample_with_retry,
    exact_block_partial_leverage_scores, fast_block_partial_leverage_scores_with,
    leverage_distribution, sampling_size_block_norms, sampling_size_leverage,
    sampling_size_uniform, stable_rank, uniform_distribution, BlockSample, LeverageScores,
    SamplingPlan, SamplingScheme, DEFAULT_BETA_SAFETY, DEFAULT_SKETCH_FACTOR,
};
use crate::trace::{IterRecord, RunClock, RunTrace};

/// `H~ = sum_{i kept} A_i^T A_i / q_i + Q`, held as a view on `A(w_t)`.
#[derive(Debug, Clone, Copy)]
pub struct SubsampledHessian<'a> {
    pub a: &'a BlockedMatrix,
    pub q: &'a PsdMatrix,
    pub sample: &'a BlockSample,
}

impl<'a> SubsampledHessian<'a> {
    pub fn new(a: &'a BlockedMatrix, q: &'a PsdMatrix, sample: &'a BlockSample) -> Self {
        Self { a, q, sample }
    }

    pub fn dim(&self) -> usize {
        self.a.cols()
    }

    pub fn kept_rows(&self) -> usize {
        self.sample.len() * self.a.block_rows()
    }

    /// The rescaled kept blocks stacked into one matrix.
    pub fn sketched_rows(&self) -> DenseMatrix {
        self.a.select_scaled(&self.sample.kept, &self.sample.scales)
    }

    pub fn materialize(&self) -> DenseMatrix {
        let rows = self.sketched_rows();
        let mut h = rows.tr_mul(&rows);
        self.q.add_to(&mut h);
        h
    }

    pub fn operator(&self) -> SketchedOperator {
        SketchedOperator {
            rows: self.sketched_rows(),
            q: self.q.clone(),
        }
    }
}

/// Matrix-free `v -> S^T S v + Q v`.
#[derive(Debug, Clone)]
pub struct SketchedOperator {
    rows: DenseMatrix,
    q: PsdMatrix,
}

impl SketchedOperator {
    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn apply(&self, v: &Vector) -> Vector {
        let t = &self.rows * v;
        let mut out = self.rows.tr_mul(&t);
        out += self.q.apply(v);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssembleMode {
    Materialize,
    Operator,
}

#[derive(Debug, Clone)]
pub enum HessianForm {
    Matrix(DenseMatrix),
    Operator(SketchedOperator),
}

impl HessianForm {
    pub fn apply(&self, v: &Vector) -> Vector {
        match self {
            HessianForm::Matrix(m) => m * v,
            HessianForm::Operator(op) => op.apply(v),
        }
    }
}

pub fn assemble_or_apply(h: &SubsampledHessian<'_>, mode: AssembleMode) -> HessianForm {
    match mode {
        AssembleMode::Materialize => HessianForm::Matrix(h.materialize()),
        AssembleMode::Operator => HessianForm::Operator(h.operator()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// CG when the sample has more rows than columns, direct otherwise.
    #[default]
    Auto,
    Direct,
    Cg,
    Gd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub solver: SolverKind,
    pub iters: usize,
    /// `|H~ v + g| / |g|`.
    pub residual: f64,
}

/// Approximately solves `H~ v = -g`.
pub fn solve_subproblem(
    h: &SubsampledHessian<'_>,
    g: &Vector,
    solver: SolverKind,
    tol: f64,
    max_iters: usize,
) -> Result<(Vector, SolveStats)> {
    let d = h.dim();
    if g.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "gradient of length {} for a {d}-dimensional Hessian",
            g.len()
        )));
    }
    let solver = match solver {
        SolverKind::Auto if h.kept_rows() > d => SolverKind::Cg,
        SolverKind::Auto => SolverKind::Direct,
        other => other,
    };
    let rhs = -g;
    let g_norm = g.norm();
    let rel_residual = |hv: &Vector| {
        if g_norm == 0.0 {
            0.0
        } else {
            (hv + g).norm() / g_norm
        }
    };
    match solver {
        SolverKind::Direct => {
            let m = h.materialize();
            let v = cholesky_solve(&m, &rhs)?;
            let residual = rel_residual(&(&m * &v));
            Ok((
                v,
                SolveStats {
                    solver,
                    iters: 1,
                    residual,
                },
            ))
        }
        SolverKind::Cg => {
            let op = h.operator();
            let out = conjugate_gradient(|x| op.apply(x), &rhs, tol, max_iters)?;
            Ok((
                out.x,
                SolveStats {
                    solver,
                    iters: out.iters,
                    residual: out.residual,
                },
            ))
        }
        SolverKind::Gd => {
            let m = h.materialize();
            let (_, top) = symmetric_eig_extremes(&m)?;
            if !(top > 0.0) {
                return Err(Error::Degenerate("sub-sampled Hessian is zero".into()));
            }
            let step = 1.0 / top;
            let mut v = Vector::zeros(d);
            for _ in 0..max_iters {
                let grad = &m * &v + g;
                v.axpy(-step, &grad, 1.0);
            }
            let residual = rel_residual(&(&m * &v));
            Ok((
                v,
                SolveStats {
                    solver,
                    iters: max_iters,
                    residual,
                },
            ))
        }
        SolverKind::Auto => unreachable!("resolved above"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Budget {
    /// Fixed sample size `s`.
    Count(usize),
    /// Size from the scheme's sampling-size bound at `(eps, delta)`.
    Auto { eps: f64, delta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LeverageMode {
    #[default]
    Exact,
    Fast {
        /// Defaults to `20 d`.
        #[serde(default)]
        sketch_rows: Option<usize>,
        #[serde(default = "default_beta")]
        beta_safety: f64,
    },
}

fn default_beta() -> f64 {
    DEFAULT_BETA_SAFETY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsnConfig {
    pub scheme: SamplingScheme,
    pub budget_s: Budget,
    #[serde(default)]
    pub solver: SolverKind,
    #[serde(default = "default_solver_tol")]
    pub solver_tol: f64,
    #[serde(default = "default_max_solver_iters")]
    pub max_solver_iters: usize,
    #[serde(default = "default_max_outer_iters")]
    pub max_outer_iters: usize,
    #[serde(default = "default_recompute_period")]
    pub leverage_recompute_period: usize,
    #[serde(default)]
    pub leverage: LeverageMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stop_rel_error: Option<f64>,
    /// Absolute gradient-norm threshold; defaults to `1e-10 (1 + |F(w0)|)`.
    #[serde(default)]
    pub stop_grad_norm: Option<f64>,
    /// Record C1/C2 epsilons and the true subproblem error each iteration.
    #[serde(default)]
    pub instrument: bool,
}

fn default_solver_tol() -> f64 {
    1e-6
}
fn default_max_solver_iters() -> usize {
    1000
}
fn default_max_outer_iters() -> usize {
    100
}
fn default_recompute_period() -> usize {
    10
}

impl SsnConfig {
    pub fn new(scheme: SamplingScheme, budget_s: Budget) -> Self {
        Self {
            scheme,
            budget_s,
            solver: SolverKind::Auto,
            solver_tol: default_solver_tol(),
            max_solver_iters: default_max_solver_iters(),
            max_outer_iters: default_max_outer_iters(),
            leverage_recompute_period: default_recompute_period(),
            leverage: LeverageMode::Exact,
            seed: 0,
            stop_rel_error: None,
            stop_grad_norm: None,
            instrument: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Budget::Count(0) = self.budget_s {
            return Err(Error::InvalidConfig("budget_s must be >= 1".into()));
        }
        if let Budget::Auto { eps, delta } = self.budget_s {
            if !(eps > 0.0 && eps < 1.0 && delta > 0.0 && delta < 1.0) {
                return Err(Error::InvalidConfig("auto budget needs eps, delta in (0, 1)".into()));
            }
        }
        if self.leverage_recompute_period == 0 {
            return Err(Error::InvalidConfig("leverage_recompute_period must be >= 1".into()));
        }
        if !(self.solver_tol > 0.0) {
            return Err(Error::InvalidConfig("solver_tol must be > 0".into()));
        }
        if self.max_solver_iters == 0 {
            return Err(Error::InvalidConfig("max_solver_iters must be >= 1".into()));
        }
        if let LeverageMode::Fast { beta_safety, .. } = self.leverage {
            if !(beta_safety >= 1.0) {
                return Err(Error::InvalidConfig("beta_safety must be >= 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradNorm,
    RelError,
    MaxIters,
    /// No further decrease was possible (line search exhausted).
    Stalled,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub w: Vector,
    pub trace: RunTrace,
    pub termination: Termination,
}

/// Shared bookkeeping for the iterative methods: stopping rules, divergence
/// detection and trace records.
pub(crate) struct Monitor<'a> {
    pub trace: RunTrace,
    clock: RunClock,
    reference: Option<&'a Vector>,
    reference_norm: f64,
    grad_tol: f64,
    stop_rel: Option<f64>,
    initial_rel: Option<f64>,
    growth_streak: usize,
}

pub(crate) const DIVERGENCE_FACTOR: f64 = 10.0;
pub(crate) const DIVERGENCE_STREAK: usize = 5;

impl<'a> Monitor<'a> {
    pub fn new(method: &str, reference: Option<&'a Vector>, grad_tol: f64, stop_rel: Option<f64>) -> Self {
        let reference_norm = reference.map(|r| r.norm()).unwrap_or(0.0);
        Self {
            trace: RunTrace::new(method),
            clock: RunClock::start(),
            reference,
            reference_norm,
            grad_tol,
            stop_rel,
            initial_rel: None,
            growth_streak: 0,
        }
    }

    pub fn rel_err(&self, w: &Vector) -> Option<f64> {
        self.reference.map(|r| {
            let diff = (w - r).norm();
            if self.reference_norm > 0.0 {
                diff / self.reference_norm
            } else {
                diff
            }
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &mut self,
        iter: usize,
        w: &Vector,
        objective: f64,
        grad_norm: f64,
        kept_blocks: usize,
        solver_iters: usize,
        solver_residual: f64,
    ) -> &mut IterRecord {
        let rel_err = self.rel_err(w);
        let time_s = self.clock.elapsed();
        self.trace.push(IterRecord {
            iter,
            time_s,
            objective,
            grad_norm,
            rel_err,
            kept_blocks,
            solver_iters,
            solver_residual,
            eps_c1: None,
            eps_c2: None,
            eps0: None,
        });
        self.trace.records.last_mut().expect("just pushed")
    }

    /// Stop reason for the most recent record, if any.
    pub fn should_stop(&self) -> Option<Termination> {
        let last = self.trace.last()?;
        if let (Some(tol), Some(e)) = (self.stop_rel, last.rel_err) {
            if e <= tol {
                return Some(Termination::RelError);
            }
        }
        if last.grad_norm <= self.grad_tol {
            return Some(Termination::GradNorm);
        }
        None
    }

    /// Errors once the relative error has exceeded 10x its initial value for
    /// five consecutive iterations, or on a non-finite objective.
    pub fn check_divergence(&mut self) -> Result<()> {
        let Some(last) = self.trace.last() else {
            return Ok(());
        };
        if !last.objective.is_finite() || !last.grad_norm.is_finite() {
            return Err(Error::Diverged(format!("non-finite objective at iteration {}", last.iter)));
        }
        let Some(e) = last.rel_err else {
            return Ok(());
        };
        let initial = *self.initial_rel.get_or_insert(e);
        if last.iter > 0 && e > DIVERGENCE_FACTOR * initial {
            self.growth_streak += 1;
        } else {
            self.growth_streak = 0;
        }
        if self.growth_streak >= DIVERGENCE_STREAK {
            return Err(Error::Diverged(format!(
                "relative error {e:e} exceeded {DIVERGENCE_FACTOR}x its initial value {initial:e} for {DIVERGENCE_STREAK} iterations"
            )));
        }
        Ok(())
    }

    pub fn fail(self, iter: usize, source: Error) -> RunFailure {
        RunFailure {
            iter,
            source,
            trace: self.trace,
        }
    }
}

pub(crate) fn default_grad_tol(f0: f64) -> f64 {
    1e-10 * (1.0 + f0.abs())
}

struct LeverageCache {
    scores: Option<LeverageScores>,
}

impl LeverageCache {
    fn distribution(
        &mut self,
        t: usize,
        cfg: &SsnConfig,
        a: &BlockedMatrix,
        q: &PsdMatrix,
    ) -> Result<Vec<f64>> {
        if self.scores.is_none() || t.is_multiple_of(cfg.leverage_recompute_period) {
            let scores = match cfg.leverage {
                LeverageMode::Exact => exact_block_partial_leverage_scores(a, q)?,
                LeverageMode::Fast {
                    sketch_rows,
                    beta_safety,
                } => fast_block_partial_leverage_scores_with(
                    a,
                    q,
                    sketch_rows.unwrap_or(DEFAULT_SKETCH_FACTOR * a.cols()),
                    derive_seed(cfg.seed ^ 0x5EED_1E7E, t as u64),
                    beta_safety,
                )?,
            };
            self.scores = Some(scores);
        }
        leverage_distribution(self.scores.as_ref().expect("set above"))
    }
}

fn resolve_budget(cfg: &SsnConfig, a: &BlockedMatrix, scores: Option<&LeverageScores>) -> Result<usize> {
    match cfg.budget_s {
        Budget::Count(s) => Ok(s),
        Budget::Auto { eps, delta } => {
            let d = a.cols();
            match cfg.scheme {
                SamplingScheme::BlockPartialLeverage => {
                    let sum = scores.map(|s| s.sum()).unwrap_or(d as f64);
                    sampling_size_leverage(sum, d, eps, delta)
                }
                SamplingScheme::BlockNormSquares => {
                    sampling_size_block_norms(stable_rank(a)?, d, eps, delta)
                }
                SamplingScheme::Uniform => sampling_size_uniform(a, d, eps, delta),
            }
        }
    }
}

/// Runs sub-sampled Newton from `w0`. When `reference` is given, relative
/// errors are recorded and used for the optional `stop_rel_error` rule.
pub fn ssn_run(
    problem: &GlmProblem,
    w0: &Vector,
    cfg: &SsnConfig,
    reference: Option<&Vector>,
) -> std::result::Result<RunOutput, RunFailure> {
    let method = format!("ssn-{}", cfg.scheme.label());
    let mut w = w0.clone();
    let mut monitor = Monitor::new(&method, reference, 0.0, cfg.stop_rel_error);
    if let Err(e) = cfg.validate() {
        return Err(monitor.fail(0, e));
    }
    if w.len() != problem.d() {
        return Err(monitor.fail(
            0,
            Error::DimensionMismatch(format!("w0 has length {} but d = {}", w.len(), problem.d())),
        ));
    }
    let mut f = match problem.objective(&w) {
        Ok(f) => f,
        Err(e) => return Err(monitor.fail(0, e)),
    };
    monitor.grad_tol = cfg.stop_grad_norm.unwrap_or_else(|| default_grad_tol(f));
    let mut g = problem.gradient(&w);
    monitor.record(0, &w, f, g.norm(), 0, 0, 0.0);
    if let Err(e) = monitor.check_divergence() {
        return Err(monitor.fail(0, e));
    }

    let mut cache = LeverageCache { scores: None };
    let mut termination = Termination::MaxIters;
    for t in 0..cfg.max_outer_iters {
        if let Some(reason) = monitor.should_stop() {
            termination = reason;
            break;
        }
        let step = (|| -> Result<(Vector, SolveStats, usize, Instruments)> {
            let fact = problem.hessian_factorization(&w);
            let p = match cfg.scheme {
                SamplingScheme::Uniform => uniform_distribution(fact.a.block_count()),
                SamplingScheme::BlockNormSquares => block_norm_squares_distribution(&fact.a)?,
                SamplingScheme::BlockPartialLeverage => cache.distribution(t, cfg, &fact.a, &fact.q)?,
            };
            let s = resolve_budget(cfg, &fact.a, cache.scores.as_ref())?;
            let plan = SamplingPlan::new(cfg.scheme, p, s, derive_seed(cfg.seed, t as u64))?;
            let (sample, _) = draw_block_sample_with_retry(&plan)?;
            let h = SubsampledHessian::new(&fact.a, &fact.q, &sample);
            let (v, stats) = solve_subproblem(&h, &g, cfg.solver, cfg.solver_tol, cfg.max_solver_iters)?;
            let instruments = if cfg.instrument {
                instrument_step(&fact.a, &fact.q, &h, &g, &v)?
            } else {
                Instruments::default()
            };
            Ok((v, stats, sample.len(), instruments))
        })();
        let (v, stats, kept, inst) = match step {
            Ok(x) => x,
            Err(e) => return Err(monitor.fail(t, e)),
        };
        w += v;
        f = match problem.objective(&w) {
            Ok(f) => f,
            Err(e) => return Err(monitor.fail(t + 1, e)),
        };
        g = problem.gradient(&w);
        let rec = monitor.record(t + 1, &w, f, g.norm(), kept, stats.iters, stats.residual);
        rec.eps_c1 = inst.eps_c1;
        rec.eps_c2 = inst.eps_c2;
        rec.eps0 = inst.eps0;
        if let Err(e) = monitor.check_divergence() {
            return Err(monitor.fail(t + 1, e));
        }
    }
    if termination == Termination::MaxIters {
        if let Some(reason) = monitor.should_stop() {
            termination = reason;
        }
    }
    Ok(RunOutput {
        w,
        trace: monitor.trace,
        termination,
    })
}

#[derive(Debug, Default)]
struct Instruments {
    eps_c1: Option<f64>,
    eps_c2: Option<f64>,
    eps0: Option<f64>,
}

fn instrument_step(
    a: &BlockedMatrix,
    q: &PsdMatrix,
    h: &SubsampledHessian<'_>,
    g: &Vector,
    v: &Vector,
) -> Result<Instruments> {
    let exact = {
        let e = a.entries();
        let mut m = e.tr_mul(e);
        q.add_to(&mut m);
        m
    };
    let approx = h.materialize();
    let eps_c1 = measure_c1(&exact, &approx)?;
    let eps_c2 = C2Certifier::new(a, q)?.measure_matrix(&(&approx - &exact))?;
    let exact_step = cholesky_solve(&approx, &(-g))?;
    let denom = exact_step.norm();
    let eps0 = if denom > 0.0 {
        (v - &exact_step).norm() / denom
    } else {
        0.0
    };
    Ok(Instruments {
        eps_c1: Some(eps_c1),
        eps_c2: Some(eps_c2),
        eps0: Some(eps0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Spectral-norm approximation `|H~ - H| <= eps |H|`.
    C1,
    /// Two-sided PSD-order approximation `-eps H <= H~ - H <= eps H`.
    C2,
}

/// Constants of the linear-quadratic error recursion
/// `|Δ_{t+1}| <= C_q |Δ_t|^2 + C_l |Δ_t|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConstants {
    pub c_q: f64,
    pub c_l: f64,
    pub regime: Regime,
    pub eps: f64,
    pub kappa: f64,
    pub l: f64,
    pub mu: f64,
}

/// C1: `C_q = 2L / ((1 - 2 eps kappa) mu)`, `C_l = 4 eps kappa / (1 - 2 eps kappa)`,
/// valid for `eps kappa < 1/2`.
/// C2: `C_q = 2L / ((1 - eps) mu)`, `C_l = 3 eps sqrt(kappa) / (1 - eps)`,
/// valid for `eps < 1`.
pub fn convergence_constants(eps: f64, kappa: f64, l: f64, mu: f64, regime: Regime) -> Result<ConvergenceConstants> {
    if !(eps >= 0.0) || !(kappa >= 1.0) || !(l >= 0.0) || !(mu > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "need eps >= 0, kappa >= 1, L >= 0, mu > 0 (got eps = {eps}, kappa = {kappa}, L = {l}, mu = {mu})"
        )));
    }
    let (c_q, c_l) = match regime {
        Regime::C1 => {
            let ek = eps * kappa;
            if !(ek < 0.5) {
                return Err(Error::RegimeViolation(format!(
                    "C1 needs eps * kappa < 1/2, got {ek}"
                )));
            }
            let denom = 1.0 - 2.0 * ek;
            (2.0 * l / (denom * mu), 4.0 * ek / denom)
        }
        Regime::C2 => {
            if !(eps < 1.0) {
                return Err(Error::RegimeViolation(format!("C2 needs eps < 1, got {eps}")));
            }
            let denom = 1.0 - eps;
            (2.0 * l / (denom * mu), 3.0 * eps * kappa.sqrt() / denom)
        }
    };
    Ok(ConvergenceConstants {
        c_q,
        c_l,
        regime,
        eps,
        kappa,
        l,
        mu,
    })
}

impl ConvergenceConstants {
    /// `(1 + eps0) C_q`.
    pub fn inexact_quadratic(&self, eps0: f64) -> f64 {
        (1.0 + eps0) * self.c_q
    }

    /// `eps0 + (1 + eps0) C_l`.
    pub fn inexact_linear(&self, eps0: f64) -> f64 {
        eps0 + (1.0 + eps0) * self.c_l
    }

    /// Right-hand side of the inexact recursion at error `err`.
    pub fn next_error_bound(&self, err: f64, eps0: f64) -> f64 {
        self.inexact_quadratic(eps0) * err * err + self.inexact_linear(eps0) * err
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::LossKind;
    use crate::sampling::uniform_distribution;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn one_block_no_q() {
        let a = BlockedMatrix::from_rows(DenseMatrix::from_row_slice(1, 2, &[1.0, 2.0])).unwrap();
        let q = PsdMatrix::zeros(2);
        let s = BlockSample::full(1);
        let h = SubsampledHessian::new(&a, &q, &s).materialize();
        assert_eq!(h, DenseMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]));
    }

    #[test]
    fn operator_matches_materialized() {
        let a = BlockedMatrix::new(gaussian(60, 5, 1), 3).unwrap();
        let q = PsdMatrix::scaled_identity(5, 0.2).unwrap();
        let plan = SamplingPlan::new(SamplingScheme::Uniform, uniform_distribution(20), 8, 4).unwrap();
        let (s, _) = draw_block_sample_with_retry(&plan).unwrap();
        let h = SubsampledHessian::new(&a, &q, &s);
        let HessianForm::Matrix(m) = assemble_or_apply(&h, AssembleMode::Materialize) else {
            panic!()
        };
        let op = assemble_or_apply(&h, AssembleMode::Operator);
        for seed in 0..5 {
            let v = gaussian(5, 1, 100 + seed).column(0).into_owned();
            let a1 = &m * &v;
            let a2 = op.apply(&v);
            assert!((&a1 - &a2).norm() <= 1e-12 * a1.norm());
        }
    }

    #[test]
    fn full_sample_equals_exact_hessian() {
        let x = gaussian(30, 4, 2);
        let y = Vector::from_fn(30, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        let p = GlmProblem::new(x, y, 0.1, LossKind::Logistic).unwrap();
        let w = gaussian(4, 1, 3).column(0).into_owned();
        let fact = p.hessian_factorization(&w);
        let s = BlockSample::full(30);
        let h = SubsampledHessian::new(&fact.a, &fact.q, &s).materialize();
        assert!((h - p.hessian(&w)).amax() < 1e-12);
    }

    #[test]
    fn identity_subproblem() {
        let a = BlockedMatrix::from_rows(DenseMatrix::identity(2, 2)).unwrap();
        let q = PsdMatrix::zeros(2);
        let s = BlockSample::full(2);
        let h = SubsampledHessian::new(&a, &q, &s);
        let g = Vector::from_vec(vec![1.0, 0.0]);
        for solver in [SolverKind::Direct, SolverKind::Cg, SolverKind::Auto] {
            let (v, _) = solve_subproblem(&h, &g, solver, 1e-12, 10).unwrap();
            assert!((v - Vector::from_vec(vec![-1.0, 0.0])).norm() < 1e-14);
        }
    }

    #[test]
    fn cg_and_direct_agree() {
        let a = BlockedMatrix::from_rows(gaussian(40, 6, 5)).unwrap();
        let q = PsdMatrix::scaled_identity(6, 0.5).unwrap();
        let s = BlockSample::full(40);
        let h = SubsampledHessian::new(&a, &q, &s);
        let g = gaussian(6, 1, 6).column(0).into_owned();
        let (vd, _) = solve_subproblem(&h, &g, SolverKind::Direct, 1e-12, 100).unwrap();
        let (vc, stats) = solve_subproblem(&h, &g, SolverKind::Cg, 1e-12, 100).unwrap();
        assert!((&vc - &vd).norm() <= 1e-8 * vd.norm());
        assert_eq!(stats.solver, SolverKind::Cg);
        let (_, loose) = solve_subproblem(&h, &g, SolverKind::Cg, 1e-6, 100).unwrap();
        assert!(loose.residual <= 1e-6);
        let (vg, _) = solve_subproblem(&h, &g, SolverKind::Gd, 1e-6, 5000).unwrap();
        assert!((&vg - &vd).norm() <= 1e-6 * vd.norm());
    }

    #[test]
    fn constants_examples() {
        for regime in [Regime::C1, Regime::C2] {
            let c = convergence_constants(0.0, 3.0, 1.5, 0.5, regime).unwrap();
            assert!((c.c_q - 6.0).abs() < 1e-15);
            assert_eq!(c.c_l, 0.0);
        }
        let c = convergence_constants(0.1, 4.0, 1.0, 1.0, Regime::C2).unwrap();
        assert!((c.c_q - 2.0 / 0.9).abs() < 1e-14);
        assert!((c.c_l - 0.3 / 0.9 * 2.0).abs() < 1e-14);
        assert!((c.inexact_quadratic(0.5) - 1.5 * c.c_q).abs() < 1e-15);
        assert!((c.inexact_linear(0.5) - (0.5 + 1.5 * c.c_l)).abs() < 1e-15);
        let c1 = convergence_constants(0.1, 2.0, 1.0, 1.0, Regime::C1).unwrap();
        assert!((c1.c_q - 2.0 / 0.6).abs() < 1e-14);
        assert!((c1.c_l - 0.8 / 0.6).abs() < 1e-14);
    }

    #[test]
    fn constants_regime_violations() {
        assert!(matches!(
            convergence_constants(0.2, 3.0, 1.0, 1.0, Regime::C1),
            Err(Error::RegimeViolation(_))
        ));
        assert!(matches!(
            convergence_constants(1.0, 3.0, 1.0, 1.0, Regime::C2),
            Err(Error::RegimeViolation(_))
        ));
    }

    #[test]
    fn squared_loss_single_exact_step() {
        let x = gaussian(50, 4, 9);
        let y = gaussian(50, 1, 10).column(0).into_owned();
        let p = GlmProblem::new(x, y, 0.0, LossKind::Squared).unwrap();
        let mut cfg = SsnConfig::new(SamplingScheme::Uniform, Budget::Count(1000));
        cfg.solver = SolverKind::Direct;
        cfg.max_outer_iters = 1;
        let w0 = Vector::zeros(4);
        let out = ssn_run(&p, &w0, &cfg, None).unwrap();
        let g0 = out.trace.records[0].grad_norm;
        let g1 = out.trace.records[1].grad_norm;
        assert!(g1 <= 1e-8 * g0, "{g1} vs {g0}");
    }

    #[test]
    fn trace_is_well_formed() {
        let x = gaussian(200, 3, 11);
        let y = Vector::from_fn(200, |i, _| if (i * 7) % 5 < 2 { 1.0 } else { -1.0 });
        let p = GlmProblem::new(x, y, 0.01, LossKind::Logistic).unwrap();
        let mut cfg = SsnConfig::new(SamplingScheme::BlockPartialLeverage, Budget::Count(60));
        cfg.max_outer_iters = 8;
        cfg.instrument = true;
        cfg.stop_grad_norm = Some(0.0);
        let out = ssn_run(&p, &Vector::zeros(3), &cfg, None).unwrap();
        let recs = &out.trace.records;
        assert_eq!(recs.len(), 9);
        for w in recs.windows(2) {
            assert!(w[1].iter == w[0].iter + 1);
            assert!(w[1].time_s >= w[0].time_s);
            assert!(w[1].eps_c2.unwrap() >= w[1].eps_c1.unwrap() - 1e-12);
        }
    }

    #[test]
    fn invalid_config_is_reported() {
        let p = GlmProblem::new(DenseMatrix::identity(3, 3), Vector::from_vec(vec![1.0, -1.0, 1.0]), 0.1, LossKind::Logistic).unwrap();
        let mut cfg = SsnConfig::new(SamplingScheme::Uniform, Budget::Count(0));
        assert!(ssn_run(&p, &Vector::zeros(3), &cfg, None).is_err());
        cfg.budget_s = Budget::Count(2);
        cfg.leverage_recompute_period = 0;
        assert!(ssn_run(&p, &Vector::zeros(3), &cfg, None).is_err());
    }
}
