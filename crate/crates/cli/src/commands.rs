use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use serde_json::json;
use ssn_core::diagnostics::condition_numbers_blocked;
use ssn_core::sampling::{
    block_norm_squares_distribution, exact_block_partial_leverage_scores, fast_block_partial_leverage_scores_with,
    leverage_distribution, sampling_size_block_norms, sampling_size_leverage, sampling_size_uniform, stable_rank,
    uniform_distribution, DEFAULT_SKETCH_FACTOR,
};
use ssn_core::{
    certify, newton_run, run_baseline, ssn_run, BaselineConfig, BaselineMethod, ConditionNumbers, GlmProblem,
    RunOutput, SamplingPlan, SamplingScheme, Vector,
};

use crate::config::{ConfigError, ExperimentConfig, MethodEntry, MethodSpec, OutputFormat, ReferencePolicy};
use crate::{CertifyArgs, CondnumsArgs, GlobalArgs, LevscoresArgs, LevMode, ProblemArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| io_error(path, e))?;
    out.write_all(b"\n").map_err(|e| io_error(path, e))?;
    out.flush().map_err(|e| io_error(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn output_path(global: &GlobalArgs, explicit: &Option<PathBuf>, default_name: &str) -> Result<PathBuf, CliError> {
    if let Some(p) = explicit {
        if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
            ensure_dir(parent)?;
        }
        return Ok(p.clone());
    }
    let dir = global.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&dir)?;
    Ok(dir.join(default_name))
}

fn reference_newton(problem: &GlmProblem, tol: f64, max_iters: usize) -> Result<RunOutput, CliError> {
    let mut cfg = BaselineConfig::new(BaselineMethod::Newton);
    cfg.stop_grad_norm = Some(tol);
    cfg.max_iters = max_iters;
    newton_run(problem, &Vector::zeros(problem.d()), &cfg, None).map_err(runtime)
}

#[derive(Serialize)]
struct ConditionSummary {
    at_zero: Option<ConditionNumbers>,
    at_reference: Option<ConditionNumbers>,
}

fn condition_numbers_at(problem: &GlmProblem, w: &Vector) -> ssn_core::Result<ConditionNumbers> {
    condition_numbers_blocked(&problem.hessian_factorization(w).a, &problem.ridge_hessian())
}

#[derive(Debug, Clone, Serialize)]
struct CellSummary {
    method: String,
    seed: u64,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    iterations: usize,
    files: Vec<PathBuf>,
}

pub fn cmd_run(config_path: &Path, global: &GlobalArgs) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    if let Some(seed) = global.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(dir) = &global.out_dir {
        cfg.outputs.directory = dir.clone();
    }
    let base = config_path.parent().unwrap_or(Path::new("."));
    let problem = cfg.problem.build(cfg.lambda, cfg.loss, base)?;
    log::info!("problem: n = {}, d = {}, lambda = {}", problem.n(), problem.d(), problem.lambda());
    let out_dir = if cfg.outputs.directory.is_relative() && global.out_dir.is_none() {
        base.join(&cfg.outputs.directory)
    } else {
        cfg.outputs.directory.clone()
    };
    ensure_dir(&out_dir)?;

    let (reference, reference_info) = match &cfg.reference_solution {
        None => (None, json!(null)),
        Some(ReferencePolicy::ComputeViaNewton { tol, max_iters }) => {
            let out = reference_newton(&problem, *tol, *max_iters)?;
            let last = out.trace.last().expect("trace has the initial record");
            let info = json!({
                "policy": "compute_via_newton",
                "iterations": out.trace.iterations(),
                "grad_norm": last.grad_norm,
                "termination": out.termination,
            });
            (Some(out.w), info)
        }
        Some(ReferencePolicy::Load { path }) => {
            let path = if path.is_relative() { base.join(path) } else { path.clone() };
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let coeffs: Vec<f64> =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            if coeffs.len() != problem.d() {
                return Err(CliError::Config(format!(
                    "reference solution has {} coefficients but the problem has d = {}",
                    coeffs.len(),
                    problem.d()
                )));
            }
            (Some(Vector::from_vec(coeffs)), json!({ "policy": "load", "path": path }))
        }
    };

    let zero = Vector::zeros(problem.d());
    let conditions = ConditionSummary {
        at_zero: condition_numbers_at(&problem, &zero)
            .map_err(|e| log::warn!("condition numbers at zero: {e}"))
            .ok(),
        at_reference: reference.as_ref().and_then(|w| {
            condition_numbers_at(&problem, w)
                .map_err(|e| log::warn!("condition numbers at reference: {e}"))
                .ok()
        }),
    };

    let cells: Vec<(&MethodEntry, u64)> = cfg
        .methods
        .iter()
        .flat_map(|m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let results: Mutex<Vec<Option<Result<CellSummary, CliError>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = global.threads.max(1).min(cells.len());
    let ctx = CellContext {
        problem: &problem,
        reference: reference.as_ref(),
        out_dir: &out_dir,
        formats: &cfg.outputs.formats,
        conditions: &conditions,
    };
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(entry, seed)) = cells.get(i) else { break };
                let r = run_cell(&ctx, entry, seed);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    let results: Vec<_> = results.into_inner().unwrap().into_iter().map(|r| r.expect("every cell ran")).collect();

    let mut summaries = Vec::with_capacity(results.len());
    for r in results {
        summaries.push(r?);
    }
    let failed: Vec<_> = summaries.iter().filter(|s| s.error.is_some()).collect();
    for s in &failed {
        eprintln!("run {} (seed {}) failed: {}", s.method, s.seed, s.error.as_deref().unwrap_or(""));
    }
    let manifest = json!({
        "config": cfg,
        "problem": { "n": problem.n(), "d": problem.d(), "lambda": problem.lambda(), "loss": problem.loss() },
        "reference": reference_info,
        "condition_numbers": conditions,
        "runs": summaries,
    });
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    println!("wrote {} runs to {}", summaries.len(), out_dir.display());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("{} of {} runs failed", failed.len(), summaries.len())))
    }
}

struct CellContext<'a> {
    problem: &'a GlmProblem,
    reference: Option<&'a Vector>,
    out_dir: &'a Path,
    formats: &'a [OutputFormat],
    conditions: &'a ConditionSummary,
}

fn run_cell(ctx: &CellContext<'_>, entry: &MethodEntry, seed: u64) -> Result<CellSummary, CliError> {
    let mut entry = entry.clone();
    let w0 = Vector::zeros(ctx.problem.d());
    let result = match &mut entry.spec {
        MethodSpec::Ssn(c) => {
            c.seed = seed;
            ssn_run(ctx.problem, &w0, c, ctx.reference)
        }
        MethodSpec::Baseline(c) => {
            c.seed = seed;
            run_baseline(ctx.problem, &w0, c, ctx.reference)
        }
    };
    let (trace, termination, error) = match result {
        Ok(out) => (out.trace, Some(out.termination), None),
        Err(fail) => (fail.trace, None, Some(format!("iteration {}: {}", fail.iter, fail.source))),
    };
    let stem = format!("{}_{seed}", entry.name);
    let mut files = Vec::new();
    for format in ctx.formats {
        match format {
            OutputFormat::Csv => {
                let path = ctx.out_dir.join(format!("{stem}.csv"));
                let file = File::create(&path).map_err(|e| io_error(&path, e))?;
                trace.write_csv(BufWriter::new(file)).map_err(|e| io_error(&path, e))?;
                files.push(path);
            }
            OutputFormat::Json => {
                let path = ctx.out_dir.join(format!("{stem}.trace.json"));
                write_json(&path, &trace)?;
                files.push(path);
            }
        }
    }
    let eps: Vec<_> = trace
        .records
        .iter()
        .filter(|r| r.eps_c1.is_some() || r.eps_c2.is_some() || r.eps0.is_some())
        .map(|r| json!({ "iter": r.iter, "eps_c1": r.eps_c1, "eps_c2": r.eps_c2, "eps0": r.eps0 }))
        .collect();
    let mut notes = serde_json::Map::new();
    if let MethodSpec::Baseline(c) = &entry.spec {
        match c.method {
            BaselineMethod::Agd => {
                notes.insert("agd_variant".into(), json!("strongly_convex_constant_momentum"));
            }
            BaselineMethod::Lbfgs => {
                notes.insert("lbfgs_history".into(), json!(c.lbfgs_history));
            }
            _ => {}
        }
    }
    let metadata = json!({
        "method": entry.name,
        "seed": seed,
        "config": entry,
        "problem": { "n": ctx.problem.n(), "d": ctx.problem.d(), "lambda": ctx.problem.lambda() },
        "condition_numbers": ctx.conditions,
        "termination": termination,
        "iterations": trace.iterations(),
        "error": error,
        "notes": notes,
        "eps_per_iteration": eps,
    });
    let meta_path = ctx.out_dir.join(format!("{stem}.json"));
    write_json(&meta_path, &metadata)?;
    files.push(meta_path);
    log::info!("{stem}: {} iterations", trace.iterations());
    Ok(CellSummary {
        method: entry.name.clone(),
        seed,
        status: if error.is_some() { "failed" } else { "ok" },
        error,
        iterations: trace.iterations(),
        files,
    })
}

fn load_problem(args: &ProblemArgs) -> Result<GlmProblem, CliError> {
    args.source()?
        .build(args.lambda, args.loss.into(), Path::new("."))
        .map_err(CliError::from)
}

pub fn cmd_levscores(args: &LevscoresArgs, global: &GlobalArgs) -> Result<(), CliError> {
    let problem = load_problem(&args.problem)?;
    let fact = problem.hessian_factorization(&Vector::zeros(problem.d()));
    let d = problem.d();
    let scores = match args.mode {
        LevMode::Exact => exact_block_partial_leverage_scores(&fact.a, &fact.q),
        LevMode::Fast => fast_block_partial_leverage_scores_with(
            &fact.a,
            &fact.q,
            args.sketch_rows.unwrap_or(DEFAULT_SKETCH_FACTOR * d),
            global.seed.unwrap_or(0),
            args.beta,
        ),
    }
    .map_err(runtime)?;
    let path = output_path(global, &args.out, "levscores.csv")?;
    let mut wtr = csv::Writer::from_path(&path).map_err(|e| io_error(&path, e))?;
    wtr.write_record(["block", "tau"]).map_err(|e| io_error(&path, e))?;
    for (i, t) in scores.tau.iter().enumerate() {
        wtr.write_record([i.to_string(), format!("{t:?}")])
            .map_err(|e| io_error(&path, e))?;
    }
    wtr.flush().map_err(|e| io_error(&path, e))?;
    let sum = scores.sum();
    let s = sampling_size_leverage(sum, d, args.eps, args.delta).map_err(|e| CliError::Config(e.to_string()))?;
    println!("sum_tau = {sum}");
    println!("sampling_size(eps = {}, delta = {}) = {s}", args.eps, args.delta);
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_certify(args: &CertifyArgs, global: &GlobalArgs) -> Result<(), CliError> {
    let problem = load_problem(&args.problem)?;
    let d = problem.d();
    let fact = problem.hessian_factorization(&Vector::zeros(d));
    let (a, q) = (&fact.a, &fact.q);
    let sized = |r: ssn_core::Result<usize>| r.map_err(|e| CliError::Config(e.to_string()));
    let (p, guarantee_s) = match args.scheme {
        SamplingScheme::Uniform => (
            uniform_distribution(a.block_count()),
            sized(sampling_size_uniform(a, d, args.eps, args.delta))?,
        ),
        SamplingScheme::BlockNormSquares => (
            block_norm_squares_distribution(a).map_err(runtime)?,
            sized(sampling_size_block_norms(stable_rank(a).map_err(runtime)?, d, args.eps, args.delta))?,
        ),
        SamplingScheme::BlockPartialLeverage => {
            let scores = exact_block_partial_leverage_scores(a, q).map_err(runtime)?;
            let s = sized(sampling_size_leverage(scores.sum(), d, args.eps, args.delta))?;
            (leverage_distribution(&scores).map_err(runtime)?, s)
        }
    };
    let s = args.s.unwrap_or(guarantee_s);
    let plan = SamplingPlan::new(args.scheme, p, s, global.seed.unwrap_or(0)).map_err(|e| CliError::Config(e.to_string()))?;
    let report = certify(a, q, &plan, args.trials, args.eps).map_err(runtime)?;
    // Leverage sampling targets the two-sided condition; the others target
    // the spectral-norm condition.
    let (condition, fraction) = match args.scheme {
        SamplingScheme::BlockPartialLeverage => ("c2", report.fraction_c2),
        _ => ("c1", report.fraction_c1),
    };
    let out = json!({
        "scheme": args.scheme,
        "s": s,
        "guarantee_s": guarantee_s,
        "trials": args.trials,
        "eps": args.eps,
        "delta": args.delta,
        "condition": condition,
        "success_fraction": fraction,
        "meets_target": fraction >= 1.0 - args.delta,
        "report": report,
    });
    let path = output_path(global, &args.out, "certify.json")?;
    write_json(&path, &out)?;
    println!(
        "{}: s = {s}, {condition} success fraction {fraction:.3} at eps = {} over {} trials (target >= {:.3})",
        args.scheme.label(),
        args.eps,
        args.trials,
        1.0 - args.delta
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn format_kappa(k: f64) -> String {
    if k.is_finite() {
        format!("{k:.6}")
    } else {
        "inf".into()
    }
}

pub fn cmd_condnums(args: &CondnumsArgs, global: &GlobalArgs) -> Result<(), CliError> {
    let problem = load_problem(&args.problem)?;
    let zero = Vector::zeros(problem.d());
    let f0 = problem.objective(&zero).map_err(runtime)?;
    let tol = args.reference_tol.unwrap_or(1e-10 * (1.0 + f0.abs()));
    let reference = reference_newton(&problem, tol, 100)?;
    let at_star = condition_numbers_at(&problem, &reference.w).map_err(runtime)?;
    let at_zero = condition_numbers_at(&problem, &zero).map_err(runtime)?;
    for (label, c) in [("w*", &at_star), ("w0 = 0", &at_zero)] {
        println!(
            "at {label}: kappa = {} kappa_raw = {} kappa_hat = {} kappa_bar = {}",
            format_kappa(c.kappa),
            format_kappa(c.kappa_raw),
            format_kappa(c.kappa_hat),
            format_kappa(c.kappa_bar)
        );
    }
    let out = json!({
        "n": problem.n(),
        "d": problem.d(),
        "lambda": problem.lambda(),
        "reference_iterations": reference.trace.iterations(),
        "reference_grad_norm": reference.trace.last().map(|r| r.grad_norm),
        "at_reference": at_star,
        "at_zero": at_zero,
    });
    let path = output_path(global, &args.out, "condnums.json")?;
    write_json(&path, &out)?;
    println!("wrote {}", path.display());
    Ok(())
}
