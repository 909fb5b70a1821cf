//! Reference optimizers: exact Newton, L-BFGS, gradient descent and
//! accelerated gradient descent.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RunFailure};
use crate::glm::GlmProblem;
use crate::linalg::{symmetric_eig_extremes, Vector};
use crate::sampling::BlockSample;
use crate::ssn::{solve_subproblem, Monitor, RunOutput, SolverKind, SubsampledHessian, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Newton,
    Lbfgs,
    Gd,
    Agd,
}

impl BaselineMethod {
    pub fn label(self) -> &'static str {
        match self {
            BaselineMethod::Newton => "newton",
            BaselineMethod::Lbfgs => "lbfgs",
            BaselineMethod::Gd => "gd",
            BaselineMethod::Agd => "agd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InnerSolver {
    #[default]
    Direct,
    Cg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepRule {
    Fixed {
        eta: f64,
    },
    Backtracking {
        #[serde(default = "default_armijo")]
        armijo: f64,
        #[serde(default = "default_shrink")]
        shrink: f64,
    },
}

fn default_armijo() -> f64 {
    0.3
}
fn default_shrink() -> f64 {
    0.5
}

impl StepRule {
    pub fn backtracking() -> Self {
        StepRule::Backtracking {
            armijo: default_armijo(),
            shrink: default_shrink(),
        }
    }
}

/// Sufficient-decrease constant used by L-BFGS when no step rule is given.
pub const LBFGS_ARMIJO: f64 = 1e-4;
pub const MAX_BACKTRACKS: usize = 60;
/// Consecutive objective increases after which GD gives up.
pub const GD_INCREASE_LIMIT: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    #[serde(default)]
    pub inner_solver: InnerSolver,
    #[serde(default = "default_inner_tol")]
    pub inner_tol: f64,
    #[serde(default = "default_max_inner_iters")]
    pub max_inner_iters: usize,
    #[serde(default = "default_history")]
    pub lbfgs_history: usize,
    /// Newton: unit steps; L-BFGS: Armijo backtracking with `c = 1e-4`;
    /// GD/AGD: constant step `1 / L` from the curvature at `w0`.
    #[serde(default)]
    pub step_rule: Option<StepRule>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stop_grad_norm: Option<f64>,
    #[serde(default)]
    pub stop_rel_error: Option<f64>,
    /// Overrides `lambda_max(H(w0))` for GD/AGD.
    #[serde(default)]
    pub smoothness: Option<f64>,
    /// Overrides `lambda_min(H(w0))` for AGD.
    #[serde(default)]
    pub strong_convexity: Option<f64>,
}

fn default_inner_tol() -> f64 {
    1e-12
}
fn default_max_inner_iters() -> usize {
    1000
}
fn default_history() -> usize {
    50
}
fn default_max_iters() -> usize {
    100
}

impl BaselineConfig {
    pub fn new(method: BaselineMethod) -> Self {
        Self {
            method,
            inner_solver: InnerSolver::Direct,
            inner_tol: default_inner_tol(),
            max_inner_iters: default_max_inner_iters(),
            lbfgs_history: default_history(),
            step_rule: None,
            max_iters: default_max_iters(),
            seed: 0,
            stop_grad_norm: None,
            stop_rel_error: None,
            smoothness: None,
            strong_convexity: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lbfgs_history == 0 {
            return Err(Error::InvalidConfig("lbfgs_history must be >= 1".into()));
        }
        match self.step_rule {
            Some(StepRule::Fixed { eta }) if !(eta > 0.0) => {
                return Err(Error::InvalidConfig(format!("fixed step must be > 0, got {eta}")))
            }
            Some(StepRule::Backtracking { armijo, shrink })
                if !(armijo > 0.0 && armijo < 1.0 && shrink > 0.0 && shrink < 1.0) =>
            {
                return Err(Error::InvalidConfig("backtracking parameters must lie in (0, 1)".into()))
            }
            _ => {}
        }
        for (name, v) in [("smoothness", self.smoothness), ("strong_convexity", self.strong_convexity)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::InvalidConfig(format!("{name} must be > 0")));
                }
            }
        }
        if !(self.inner_tol > 0.0) {
            return Err(Error::InvalidConfig("inner_tol must be > 0".into()));
        }
        Ok(())
    }
}

pub fn run_baseline(
    problem: &GlmProblem,
    w0: &Vector,
    cfg: &BaselineConfig,
    reference: Option<&Vector>,
) -> std::result::Result<RunOutput, RunFailure> {
    match cfg.method {
        BaselineMethod::Newton => newton_run(problem, w0, cfg, reference),
        BaselineMethod::Lbfgs => lbfgs_run(problem, w0, cfg, reference),
        BaselineMethod::Gd => gd_run(problem, w0, cfg, reference),
        BaselineMethod::Agd => agd_run(problem, w0, cfg, reference),
    }
}

/// State shared by the baseline loops.
struct Run<'a> {
    monitor: Monitor<'a>,
    w: Vector,
    f: f64,
    g: Vector,
}

impl<'a> Run<'a> {
    fn start(
        problem: &GlmProblem,
        w0: &Vector,
        cfg: &BaselineConfig,
        reference: Option<&'a Vector>,
    ) -> std::result::Result<Self, RunFailure> {
        let grad_tol = cfg.stop_grad_norm.unwrap_or(0.0);
        let monitor = Monitor::new(cfg.method.label(), reference, grad_tol, cfg.stop_rel_error);
        let setup = || -> Result<(f64, Vector)> {
            cfg.validate()?;
            if w0.len() != problem.d() {
                return Err(Error::DimensionMismatch(format!(
                    "w0 has length {} but d = {}",
                    w0.len(),
                    problem.d()
                )));
            }
            Ok((problem.objective(w0)?, problem.gradient(w0)))
        };
        match setup() {
            Ok((f, g)) => {
                let mut run = Run {
                    monitor,
                    w: w0.clone(),
                    f,
                    g,
                };
                run.monitor.record(0, &run.w, f, run.g.norm(), 0, 0, 0.0);
                Ok(run)
            }
            Err(e) => Err(monitor.fail(0, e)),
        }
    }

    fn stop_reason(&self) -> Option<Termination> {
        if self.g.iter().all(|&v| v == 0.0) {
            return Some(Termination::GradNorm);
        }
        self.monitor.should_stop()
    }

    /// Moves to `w`, records iteration `iter` and checks for divergence.
    fn advance(
        &mut self,
        problem: &GlmProblem,
        iter: usize,
        w: Vector,
        kept: usize,
        solver_iters: usize,
        residual: f64,
    ) -> Result<()> {
        self.f = problem.objective(&w)?;
        self.g = problem.gradient(&w);
        self.w = w;
        self.monitor
            .record(iter, &self.w, self.f, self.g.norm(), kept, solver_iters, residual);
        self.monitor.check_divergence()
    }

    fn finish(self, termination: Option<Termination>) -> RunOutput {
        let termination = termination
            .or_else(|| self.stop_reason())
            .unwrap_or(Termination::MaxIters);
        RunOutput {
            w: self.w,
            trace: self.monitor.trace,
            termination,
        }
    }
}

/// Armijo backtracking from trial step `t0` along descent direction `dir`.
/// Returns the accepted step and point, or `None` if no strict decrease was
/// found.
#[allow(clippy::too_many_arguments)]
fn backtrack(
    problem: &GlmProblem,
    w: &Vector,
    f: f64,
    g: &Vector,
    dir: &Vector,
    t0: f64,
    armijo: f64,
    shrink: f64,
) -> Result<Option<(usize, Vector)>> {
    let slope = g.dot(dir);
    let mut t = t0;
    for k in 0..MAX_BACKTRACKS {
        let trial = w + dir * t;
        let ft = problem.objective(&trial)?;
        if ft.is_finite() && ft < f && ft <= f + armijo * t * slope {
            return Ok(Some((k + 1, trial)));
        }
        t *= shrink;
    }
    Ok(None)
}

/// `w_{t+1} = w_t - H(w_t)^{-1} g(w_t)` with the exact Hessian `A^T A + Q`.
pub fn newton_run(
    problem: &GlmProblem,
    w0: &Vector,
    cfg: &BaselineConfig,
    reference: Option<&Vector>,
) -> std::result::Result<RunOutput, RunFailure> {
    let mut run = Run::start(problem, w0, cfg, reference)?;
    let solver = match cfg.inner_solver {
        InnerSolver::Direct => SolverKind::Direct,
        InnerSolver::Cg => SolverKind::Cg,
    };
    let full = BlockSample::full(problem.n());
    for t in 0..cfg.max_iters {
        if let Some(reason) = run.stop_reason() {
            return Ok(run.finish(Some(reason)));
        }
        let step = (|| -> Result<Option<(Vector, usize, f64)>> {
            let fact = problem.hessian_factorization(&run.w);
            let h = SubsampledHessian::new(&fact.a, &fact.q, &full);
            let (v, stats) = solve_subproblem(&h, &run.g, solver, cfg.inner_tol, cfg.max_inner_iters)
                .map_err(|e| match e {
                    Error::Indefinite => Error::Degenerate(
                        "Hessian is singular; use lambda > 0 or full-rank data".into(),
                    ),
                    other => other,
                })?;
            let next = match cfg.step_rule {
                None => &run.w + &v,
                Some(StepRule::Fixed { eta }) => &run.w + &v * eta,
                Some(StepRule::Backtracking { armijo, shrink }) => {
                    match backtrack(problem, &run.w, run.f, &run.g, &v, 1.0, armijo, shrink)? {
                        Some((_, w)) => w,
                        None => return Ok(None),
                    }
                }
            };
            Ok(Some((next, stats.iters, stats.residual)))
        })();
        match step {
            Ok(Some((w, iters, residual))) => {
                if let Err(e) = run.advance(problem, t + 1, w, problem.n(), iters, residual) {
                    return Err(run.monitor.fail(t + 1, e));
                }
            }
            Ok(None) => return Ok(run.finish(Some(Termination::Stalled))),
            Err(e) => return Err(run.monitor.fail(t, e)),
        }
    }
    Ok(run.finish(None))
}

struct LbfgsMemory {
    s: VecDeque<Vector>,
    y: VecDeque<Vector>,
    rho: VecDeque<f64>,
    capacity: usize,
}

impl LbfgsMemory {
    fn new(capacity: usize) -> Self {
        Self {
            s: VecDeque::with_capacity(capacity),
            y: VecDeque::with_capacity(capacity),
            rho: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    fn clear(&mut self) {
        self.s.clear();
        self.y.clear();
        self.rho.clear();
    }

    /// Stores the pair unless the curvature `s^T y` is not safely positive.
    fn push(&mut self, s: Vector, y: Vector) {
        let sy = s.dot(&y);
        if !(sy > 1e-10 * s.norm() * y.norm()) {
            return;
        }
        if self.s.len() == self.capacity {
            self.s.pop_front();
            self.y.pop_front();
            self.rho.pop_front();
        }
        self.rho.push_back(1.0 / sy);
        self.s.push_back(s);
        self.y.push_back(y);
    }

    /// Two-loop recursion: returns `-H_k g`.
    fn direction(&self, g: &Vector) -> Vector {
        let m = self.s.len();
        let mut q = g.clone();
        let mut alpha = vec![0.0; m];
        for i in (0..m).rev() {
            alpha[i] = self.rho[i] * self.s[i].dot(&q);
            q.axpy(-alpha[i], &self.y[i], 1.0);
        }
        let last = m - 1;
        let gamma = self.s[last].dot(&self.y[last]) / self.y[last].norm_squared();
        let mut r = q * gamma;
        for (i, a) in alpha.iter().enumerate() {
            let beta = self.rho[i] * self.y[i].dot(&r);
            r.axpy(a - beta, &self.s[i], 1.0);
        }
        -r
    }
}

/// L-BFGS with history `k`. With empty memory the direction is the
/// normalized negative gradient.
pub fn lbfgs_run(
    problem: &GlmProblem,
    w0: &Vector,
    cfg: &BaselineConfig,
    reference: Option<&Vector>,
) -> std::result::Result<RunOutput, RunFailure> {
    let mut run = Run::start(problem, w0, cfg, reference)?;
    let mut memory = LbfgsMemory::new(cfg.lbfgs_history);
    let rule = cfg.step_rule.unwrap_or(StepRule::Backtracking {
        armijo: LBFGS_ARMIJO,
        shrink: default_shrink(),
    });
    for t in 0..cfg.max_iters {
        if let Some(reason) = run.stop_reason() {
            return Ok(run.finish(Some(reason)));
        }
        let step = (|| -> Result<Option<(Vector, usize)>> {
            let steepest = || -run.g.clone() / run.g.norm();
            let mut dir = if memory.is_empty() {
                steepest()
            } else {
                memory.direction(&run.g)
            };
            if !(run.g.dot(&dir) < 0.0) {
                memory.clear();
                dir = steepest();
            }
            match rule {
                StepRule::Fixed { eta } => Ok(Some((&run.w + dir * eta, 0))),
                StepRule::Backtracking { armijo, shrink } => {
                    if let Some((evals, w)) = backtrack(problem, &run.w, run.f, &run.g, &dir, 1.0, armijo, shrink)? {
                        return Ok(Some((w, evals)));
                    }
                    if memory.is_empty() {
                        return Ok(None);
                    }
                    memory.clear();
                    let dir = steepest();
                    Ok(backtrack(problem, &run.w, run.f, &run.g, &dir, 1.0, armijo, shrink)?
                        .map(|(evals, w)| (w, evals)))
                }
            }
        })();
        match step {
            Ok(Some((w, evals))) => {
                let s = &w - &run.w;
                let g_old = run.g.clone();
                if let Err(e) = run.advance(problem, t + 1, w, problem.n(), evals, 0.0) {
                    return Err(run.monitor.fail(t + 1, e));
                }
                memory.push(s, &run.g - g_old);
            }
            Ok(None) => return Ok(run.finish(Some(Termination::Stalled))),
            Err(e) => return Err(run.monitor.fail(t, e)),
        }
    }
    Ok(run.finish(None))
}

fn curvature_at(problem: &GlmProblem, w: &Vector) -> Result<(f64, f64)> {
    symmetric_eig_extremes(&problem.hessian(w))
}

fn smoothness(problem: &GlmProblem, w0: &Vector, cfg: &BaselineConfig) -> Result<f64> {
    let l = match cfg.smoothness {
        Some(l) => l,
        None => curvature_at(problem, w0)?.1,
    };
    if !(l > 0.0) {
        return Err(Error::Degenerate("Hessian at w0 is zero; set smoothness explicitly".into()));
    }
    Ok(l)
}

/// `w <- w - eta g` with `eta = 1 / lambda_max(H(w0))` unless overridden.
pub fn gd_run(
    problem: &GlmProblem,
    w0: &Vector,
    cfg: &BaselineConfig,
    reference: Option<&Vector>,
) -> std::result::Result<RunOutput, RunFailure> {
    let mut run = Run::start(problem, w0, cfg, reference)?;
    let eta = match cfg.step_rule {
        Some(StepRule::Fixed { eta }) => eta,
        _ => match smoothness(problem, w0, cfg) {
            Ok(l) => 1.0 / l,
            Err(e) => return Err(run.monitor.fail(0, e)),
        },
    };
    let mut increases = 0usize;
    for t in 0..cfg.max_iters {
        if let Some(reason) = run.stop_reason() {
            return Ok(run.finish(Some(reason)));
        }
        let (w, evals) = match cfg.step_rule {
            Some(StepRule::Backtracking { armijo, shrink }) => {
                let dir = -run.g.clone();
                match backtrack(problem, &run.w, run.f, &run.g, &dir, eta, armijo, shrink) {
                    Ok(Some((evals, w))) => (w, evals),
                    Ok(None) => return Ok(run.finish(Some(Termination::Stalled))),
                    Err(e) => return Err(run.monitor.fail(t, e)),
                }
            }
            _ => (&run.w - &run.g * eta, 0),
        };
        let f_prev = run.f;
        if let Err(e) = run.advance(problem, t + 1, w, 0, evals, 0.0) {
            return Err(run.monitor.fail(t + 1, e));
        }
        increases = if run.f > f_prev { increases + 1 } else { 0 };
        if increases >= GD_INCREASE_LIMIT {
            return Err(run.monitor.fail(
                t + 1,
                Error::Diverged(format!(
                    "objective increased for {GD_INCREASE_LIMIT} consecutive steps; step size {eta:e} is too large"
                )),
            ));
        }
    }
    Ok(run.finish(None))
}

/// Constant-momentum accelerated gradient for strongly convex objectives:
/// `y = w_t + beta (w_t - w_{t-1})`, `w_{t+1} = y - g(y) / L`, with
/// `beta = (sqrt(kappa) - 1) / (sqrt(kappa) + 1)` and `kappa = L / mu` from
/// the curvature at `w0` unless overridden.
pub fn agd_run(
    problem: &GlmProblem,
    w0: &Vector,
    cfg: &BaselineConfig,
    reference: Option<&Vector>,
) -> std::result::Result<RunOutput, RunFailure> {
    let mut run = Run::start(problem, w0, cfg, reference)?;
    let params = (|| -> Result<(f64, f64)> {
        let (lo, hi) = match (cfg.smoothness, cfg.strong_convexity) {
            (Some(l), Some(mu)) => (mu, l),
            _ => {
                let (lo, hi) = curvature_at(problem, w0)?;
                (cfg.strong_convexity.unwrap_or(lo), cfg.smoothness.unwrap_or(hi))
            }
        };
        if !(lo > 0.0) {
            return Err(Error::Degenerate(
                "Hessian at w0 is singular; set strong_convexity or use lambda > 0".into(),
            ));
        }
        let eta = match cfg.step_rule {
            Some(StepRule::Fixed { eta }) => eta,
            _ => 1.0 / hi,
        };
        let root = (hi / lo).max(1.0).sqrt();
        Ok((eta, (root - 1.0) / (root + 1.0)))
    })();
    let (eta, beta) = match params {
        Ok(p) => p,
        Err(e) => return Err(run.monitor.fail(0, e)),
    };
    let mut prev = run.w.clone();
    for t in 0..cfg.max_iters {
        if let Some(reason) = run.stop_reason() {
            return Ok(run.finish(Some(reason)));
        }
        let y = &run.w + (&run.w - &prev) * beta;
        let gy = problem.gradient(&y);
        let w = y - gy * eta;
        prev = run.w.clone();
        if let Err(e) = run.advance(problem, t + 1, w, 0, 0, 0.0) {
            return Err(run.monitor.fail(t + 1, e));
        }
    }
    Ok(run.finish(None))
}
