//! Approximation-quality measurements, condition numbers and recursion checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{BlockedMatrix, GlmProblem};
use crate::linalg::{
    qr_r_factor, symmetric_eig_extremes, symmetric_spectral_norm, DenseMatrix, PsdMatrix, Vector,
    PSD_REL_TOL,
};
use crate::sampling::{augmented_matrix, draw_block_sample_with_retry, sampled_gram, BlockSample, SamplingPlan};
use crate::ssn::{convergence_constants, ConvergenceConstants, Regime};
use crate::trace::RunTrace;

/// `|H~ - H|_2 / |H|_2`.
pub fn measure_c1(h_exact: &DenseMatrix, h_tilde: &DenseMatrix) -> Result<f64> {
    if h_exact.shape() != h_tilde.shape() {
        return Err(Error::DimensionMismatch(format!(
            "H is {:?} but H~ is {:?}",
            h_exact.shape(),
            h_tilde.shape()
        )));
    }
    let diff = symmetric_spectral_norm(&(h_tilde - h_exact))?;
    let scale = symmetric_spectral_norm(h_exact)?;
    Ok(if scale > 0.0 {
        diff / scale
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    })
}

/// Whitening by the triangular factor of `[A; Q^{1/2}] = U R`.
///
/// The smallest `eps` with `-eps H <= H~ - H <= eps H` is
/// `|R^{-T} (H~ - H) R^{-1}|_2`. Precomputing `U_A = A R^{-1}` makes repeated
/// measurements for new samples cost only the kept rows.
#[derive(Debug, Clone)]
pub struct C2Certifier {
    r_inv: DenseMatrix,
    whitened: BlockedMatrix,
    whitened_gram: DenseMatrix,
}

impl C2Certifier {
    pub fn new(a: &BlockedMatrix, q: &PsdMatrix) -> Result<Self> {
        let bar = augmented_matrix(a, q)?;
        let r = qr_r_factor(&bar).map_err(|e| match e {
            Error::Singular { .. } => Error::Degenerate(
                "augmented matrix [A; Q^1/2] is rank deficient; use lambda > 0".into(),
            ),
            other => other,
        })?;
        let d = r.ncols();
        let r_inv = r
            .solve_upper_triangular(&DenseMatrix::identity(d, d))
            .ok_or_else(|| Error::Degenerate("triangular factor is singular".into()))?;
        let whitened = BlockedMatrix::new(a.entries() * &r_inv, a.block_rows())?;
        let whitened_gram = whitened.entries().tr_mul(whitened.entries());
        Ok(Self {
            r_inv,
            whitened,
            whitened_gram,
        })
    }

    /// `|R^{-T} E R^{-1}|_2` for a symmetric perturbation `E = H~ - H`.
    pub fn measure_matrix(&self, diff: &DenseMatrix) -> Result<f64> {
        let w = self.r_inv.transpose() * diff * &self.r_inv;
        symmetric_spectral_norm(&w)
    }

    /// C2 epsilon of the sampled Hessian built from `sample`.
    pub fn measure_sample(&self, sample: &BlockSample) -> Result<f64> {
        let w = sampled_gram(&self.whitened, sample) - &self.whitened_gram;
        symmetric_spectral_norm(&w)
    }
}

/// Smallest `eps` for which the sampled Hessian satisfies C2.
pub fn measure_c2(a: &BlockedMatrix, q: &PsdMatrix, sample: &BlockSample) -> Result<f64> {
    C2Certifier::new(a, q)?.measure_sample(sample)
}

/// Largest `|x^T (H~ - H) y| / sqrt(x^T H x * y^T H y)` over `pairs` random
/// Gaussian pairs. A lower bound on the C2 epsilon.
pub fn monte_carlo_c2_quotient(h_exact: &DenseMatrix, h_tilde: &DenseMatrix, pairs: usize, seed: u64) -> f64 {
    let d = h_exact.nrows();
    let diff = h_tilde - h_exact;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0_f64;
    for _ in 0..pairs {
        let x = Vector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let y = Vector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let num = x.dot(&(&diff * &y)).abs();
        let den = (x.dot(&(h_exact * &x)) * y.dot(&(h_exact * &y))).sqrt();
        if den > 0.0 {
            best = best.max(num / den);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub eps_c1: f64,
    pub eps_c2: f64,
    pub thresholds: Vec<f64>,
    pub holds_c1_at: Vec<bool>,
    pub holds_c2_at: Vec<bool>,
}

pub fn condition_report(
    a: &BlockedMatrix,
    q: &PsdMatrix,
    sample: &BlockSample,
    thresholds: &[f64],
) -> Result<ConditionReport> {
    let mut h = a.entries().tr_mul(a.entries());
    q.add_to(&mut h);
    let mut h_tilde = sampled_gram(a, sample);
    q.add_to(&mut h_tilde);
    let eps_c1 = measure_c1(&h, &h_tilde)?;
    let eps_c2 = measure_c2(a, q, sample)?;
    Ok(ConditionReport {
        eps_c1,
        eps_c2,
        thresholds: thresholds.to_vec(),
        holds_c1_at: thresholds.iter().map(|&t| eps_c1 <= t).collect(),
        holds_c2_at: thresholds.iter().map(|&t| eps_c2 <= t).collect(),
    })
}

/// `kappa` and `kappa_raw` are `lambda_max / lambda_min` of `sum H_i + Q` and
/// `sum H_i`; `kappa_hat = n max_i lambda_max(H_i) / lambda_min(sum H_i)`;
/// `kappa_bar = max_i lambda_max(H_i) / min_i lambda_min(H_i)`. Non-positive
/// denominators give `+inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionNumbers {
    #[serde(with = "extended_float")]
    pub kappa: f64,
    #[serde(with = "extended_float")]
    pub kappa_raw: f64,
    #[serde(with = "extended_float")]
    pub kappa_hat: f64,
    #[serde(with = "extended_float")]
    pub kappa_bar: f64,
}

/// JSON has no infinity; encode non-finite values as strings.
mod extended_float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Repr::Num(*v).serialize(s)
        } else if v.is_nan() {
            Repr::Text("nan".into()).serialize(s)
        } else if *v > 0.0 {
            Repr::Text("inf".into()).serialize(s)
        } else {
            Repr::Text("-inf".into()).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        f64::INFINITY
    }
}

/// Eigenvalues below `PSD_REL_TOL` times the scale are treated as zero.
fn clamp_small(lo: f64, hi: f64) -> f64 {
    if lo <= PSD_REL_TOL * hi.abs() {
        0.0
    } else {
        lo
    }
}

fn assemble_numbers(
    n: usize,
    sum: &DenseMatrix,
    q: &PsdMatrix,
    block_max: f64,
    block_min: f64,
) -> Result<ConditionNumbers> {
    let (lo_raw, hi_raw) = symmetric_eig_extremes(sum)?;
    let lo_raw = clamp_small(lo_raw, hi_raw);
    let mut full = sum.clone();
    q.add_to(&mut full);
    let (lo, hi) = symmetric_eig_extremes(&full)?;
    let lo = clamp_small(lo, hi);
    Ok(ConditionNumbers {
        kappa: ratio(hi, lo),
        kappa_raw: ratio(hi_raw, lo_raw),
        kappa_hat: ratio(n as f64 * block_max, lo_raw),
        kappa_bar: ratio(block_max, block_min),
    })
}

/// Condition numbers from explicit per-block Hessians `H_i = A_i^T A_i`.
pub fn condition_numbers(blocks: &[DenseMatrix], q: &PsdMatrix) -> Result<ConditionNumbers> {
    let Some(first) = blocks.first() else {
        return Err(Error::Degenerate("need at least one block".into()));
    };
    let d = first.nrows();
    if q.dim() != d {
        return Err(Error::DimensionMismatch(format!("Q has dim {} but blocks are {d}x{d}", q.dim())));
    }
    let mut sum = DenseMatrix::zeros(d, d);
    let mut block_max = 0.0_f64;
    let mut block_min = f64::INFINITY;
    for h in blocks {
        if h.shape() != (d, d) {
            return Err(Error::DimensionMismatch("blocks differ in shape".into()));
        }
        sum += h;
        let (lo, hi) = symmetric_eig_extremes(h)?;
        block_max = block_max.max(hi);
        block_min = block_min.min(clamp_small(lo, hi));
    }
    assemble_numbers(blocks.len(), &sum, q, block_max, block_min)
}

/// [`condition_numbers`] for `H_i = A_i^T A_i` without forming each `H_i`.
/// Blocks with fewer rows than columns are singular, and the largest
/// eigenvalue comes from the small `A_i A_i^T` Gram matrix.
pub fn condition_numbers_blocked(a: &BlockedMatrix, q: &PsdMatrix) -> Result<ConditionNumbers> {
    let d = a.cols();
    if q.dim() != d {
        return Err(Error::DimensionMismatch(format!("Q has dim {} but A has {d} columns", q.dim())));
    }
    let k = a.block_rows();
    let mut block_max = 0.0_f64;
    let mut block_min = f64::INFINITY;
    for i in 0..a.block_count() {
        let b = a.block(i);
        if k == 1 {
            block_max = block_max.max(b.norm_squared());
            block_min = block_min.min(if d == 1 { b.norm_squared() } else { 0.0 });
            continue;
        }
        let outer = b * b.transpose();
        let (_, hi) = symmetric_eig_extremes(&outer)?;
        block_max = block_max.max(hi);
        if k < d {
            block_min = 0.0;
        } else {
            let (lo, hi) = symmetric_eig_extremes(&a.block_gram(i))?;
            block_min = block_min.min(clamp_small(lo, hi));
        }
    }
    let sum = a.entries().tr_mul(a.entries());
    assemble_numbers(a.block_count(), &sum, q, block_max, block_min)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    /// Largest observed secant `|H(u) - H(v)|_2 / |u - v|`.
    pub estimate: f64,
    /// `2 * estimate`.
    pub inflated: f64,
}

pub const LIPSCHITZ_INFLATION: f64 = 2.0;

/// Probes the Hessian at `probes` points drawn uniformly from the ball of
/// `radius` around `center` and returns the largest pairwise secant. Probe
/// points are generated sequentially, so fewer probes give a subset.
pub fn estimate_lipschitz_l(
    problem: &GlmProblem,
    center: &Vector,
    radius: f64,
    probes: usize,
    seed: u64,
) -> Result<LipschitzEstimate> {
    if probes < 2 {
        return Err(Error::InvalidConfig("need at least two probes".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidConfig("probe radius must be > 0".into()));
    }
    let d = problem.d();
    if center.len() != d {
        return Err(Error::DimensionMismatch(format!("center has length {} but d = {d}", center.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<Vector> = Vec::with_capacity(probes);
    let mut hessians: Vec<DenseMatrix> = Vec::with_capacity(probes);
    let mut best = 0.0_f64;
    for _ in 0..probes {
        let dir = loop {
            let g = Vector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            let n = g.norm();
            if n > 0.0 {
                break g / n;
            }
        };
        let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
        let p = center + dir * r;
        let h = problem.hessian(&p);
        for (u, hu) in points.iter().zip(&hessians) {
            let dist = (&p - u).norm();
            if dist > 0.0 {
                best = best.max(symmetric_spectral_norm(&(&h - hu))? / dist);
            }
        }
        points.push(p);
        hessians.push(h);
    }
    Ok(LipschitzEstimate {
        estimate: best,
        inflated: LIPSCHITZ_INFLATION * best,
    })
}

/// `mu / (4 L)`: the neighbourhood in which the recursion is claimed.
pub fn region_radius(mu: f64, l: f64) -> f64 {
    if l > 0.0 {
        mu / (4.0 * l)
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCheck {
    pub iter: usize,
    pub error: f64,
    pub next_error: f64,
    pub bound: f64,
    pub in_region: bool,
    pub satisfied: bool,
    /// Linear coefficient of the recursion at this step is at least 1.
    pub non_contracting: bool,
    /// Regime precondition failed for the measured epsilon.
    pub regime_violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecursionReport {
    pub steps: Vec<StepCheck>,
    pub in_region: usize,
    pub satisfied_in_region: usize,
    /// `satisfied_in_region / in_region`, or 1 when no step is in the region.
    pub fraction: f64,
    pub non_contracting: bool,
}

fn summarize(steps: Vec<StepCheck>) -> RecursionReport {
    let in_region = steps.iter().filter(|s| s.in_region).count();
    let satisfied_in_region = steps.iter().filter(|s| s.in_region && s.satisfied).count();
    let fraction = if in_region == 0 {
        1.0
    } else {
        satisfied_in_region as f64 / in_region as f64
    };
    let non_contracting = steps.iter().any(|s| s.non_contracting);
    RecursionReport {
        steps,
        in_region,
        satisfied_in_region,
        fraction,
        non_contracting,
    }
}

/// Absolute errors `|w_t - w*|` recovered from the relative errors of a trace.
fn absolute_errors(trace: &RunTrace, w_star: &Vector) -> Result<Vec<(usize, f64)>> {
    let norm = w_star.norm();
    let scale = if norm > 0.0 { norm } else { 1.0 };
    trace
        .records
        .iter()
        .map(|r| {
            r.rel_err
                .map(|e| (r.iter, e * scale))
                .ok_or_else(|| Error::InvalidConfig("trace has no relative errors; rerun with a reference".into()))
        })
        .collect()
}

/// Checks `|D_{t+1}| <= (1 + eps0) C_q |D_t|^2 + (eps0 + (1 + eps0) C_l) |D_t|`
/// with fixed constants for every step of `trace`.
pub fn verify_recursion(
    trace: &RunTrace,
    w_star: &Vector,
    constants: &ConvergenceConstants,
    eps0: f64,
    region: f64,
) -> Result<RecursionReport> {
    let errs = absolute_errors(trace, w_star)?;
    let steps = errs
        .windows(2)
        .map(|pair| {
            let (iter, e) = pair[0];
            let (_, next) = pair[1];
            let bound = constants.next_error_bound(e, eps0);
            StepCheck {
                iter,
                error: e,
                next_error: next,
                bound,
                in_region: e <= region,
                satisfied: next <= bound,
                non_contracting: constants.inexact_linear(eps0) >= 1.0,
                regime_violated: false,
            }
        })
        .collect();
    Ok(summarize(steps))
}

/// [`verify_recursion`] with per-step C2 constants built from the `eps_c2` and
/// `eps0` recorded by an instrumented run. A step whose measured epsilon
/// violates the regime precondition counts as unsatisfied.
pub fn verify_recursion_measured(
    trace: &RunTrace,
    w_star: &Vector,
    kappa: f64,
    l: f64,
    mu: f64,
    region: f64,
) -> Result<RecursionReport> {
    let errs = absolute_errors(trace, w_star)?;
    let mut steps = Vec::with_capacity(errs.len().saturating_sub(1));
    for (pair, rec) in errs.windows(2).zip(trace.records.iter().skip(1)) {
        let (iter, e) = pair[0];
        let (_, next) = pair[1];
        let (Some(eps), Some(eps0)) = (rec.eps_c2, rec.eps0) else {
            return Err(Error::InvalidConfig("trace is not instrumented".into()));
        };
        let check = match convergence_constants(eps, kappa, l, mu, Regime::C2) {
            Ok(c) => {
                let bound = c.next_error_bound(e, eps0);
                StepCheck {
                    iter,
                    error: e,
                    next_error: next,
                    bound,
                    in_region: e <= region,
                    satisfied: next <= bound,
                    non_contracting: c.inexact_linear(eps0) >= 1.0,
                    regime_violated: false,
                }
            }
            Err(Error::RegimeViolation(_)) => StepCheck {
                iter,
                error: e,
                next_error: next,
                bound: f64::NAN,
                in_region: e <= region,
                satisfied: false,
                non_contracting: true,
                regime_violated: true,
            },
            Err(other) => return Err(other),
        };
        steps.push(check);
    }
    Ok(summarize(steps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyReport {
    pub trials: usize,
    pub eps: f64,
    pub successes_c1: usize,
    pub successes_c2: usize,
    pub fraction_c1: f64,
    pub fraction_c2: f64,
    pub mean_kept: f64,
    pub eps_c1: Vec<f64>,
    pub eps_c2: Vec<f64>,
}

/// Draws `trials` independent samples from `plan` (trial `t` uses seed
/// `plan.seed + t`) and measures both conditions for each.
pub fn certify(
    a: &BlockedMatrix,
    q: &PsdMatrix,
    plan: &SamplingPlan,
    trials: usize,
    eps: f64,
) -> Result<CertifyReport> {
    if trials == 0 {
        return Err(Error::InvalidConfig("need at least one trial".into()));
    }
    let certifier = C2Certifier::new(a, q)?;
    let mut h = a.entries().tr_mul(a.entries());
    q.add_to(&mut h);
    let h_norm = symmetric_spectral_norm(&h)?;
    let mut eps_c1 = Vec::with_capacity(trials);
    let mut eps_c2 = Vec::with_capacity(trials);
    let mut kept = 0usize;
    for t in 0..trials {
        let (sample, _) = draw_block_sample_with_retry(&plan.with_seed(plan.seed.wrapping_add(t as u64)))?;
        kept += sample.len();
        let diff = sampled_gram(a, &sample) - a.entries().tr_mul(a.entries());
        eps_c1.push(symmetric_spectral_norm(&diff)? / h_norm);
        eps_c2.push(certifier.measure_sample(&sample)?);
    }
    let successes_c1 = eps_c1.iter().filter(|&&e| e <= eps).count();
    let successes_c2 = eps_c2.iter().filter(|&&e| e <= eps).count();
    Ok(CertifyReport {
        trials,
        eps,
        successes_c1,
        successes_c2,
        fraction_c1: successes_c1 as f64 / trials as f64,
        fraction_c2: successes_c2 as f64 / trials as f64,
        mean_kept: kept as f64 / trials as f64,
        eps_c1,
        eps_c2,
    })
}
