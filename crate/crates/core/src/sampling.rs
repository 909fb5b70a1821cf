//! Block sampling distributions, sample-size bounds and Bernoulli block draws.
//!
//! Three distributions over the blocks of an augmented matrix `A` are
//! supported: uniform, block norm squares (`p_i ∝ |A_i|_F^2`) and block
//! partial leverage scores, the per-block sums of the row leverage scores of
//! `[A; Q^{1/2}]`. A plan turns a distribution and a budget `s` into
//! inclusion probabilities `q_i = min(s p_i, 1)`; each block is then kept
//! independently with probability `q_i` and rescaled by `1 / sqrt(q_i)`.

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::BlockedMatrix;
use crate::linalg::{
    apply_sparse_embedding, qr_r_factor, symmetric_eig_extremes, DenseMatrix, PsdMatrix,
    SparseEmbedding,
};

/// Default overestimation factor applied to sketched leverage scores.
pub const DEFAULT_BETA_SAFETY: f64 = 2.0;
/// Default sketch size is this many times the column count.
pub const DEFAULT_SKETCH_FACTOR: usize = 20;
/// Maximum number of redraws when a Bernoulli sample comes back empty.
pub const MAX_SAMPLE_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    Uniform,
    BlockNormSquares,
    BlockPartialLeverage,
}

impl SamplingScheme {
    pub fn label(self) -> &'static str {
        match self {
            SamplingScheme::Uniform => "uniform",
            SamplingScheme::BlockNormSquares => "block_norm_squares",
            SamplingScheme::BlockPartialLeverage => "block_partial_leverage",
        }
    }
}

impl std::str::FromStr for SamplingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "block_norm_squares" | "rnorm" | "norms" => Ok(Self::BlockNormSquares),
            "block_partial_leverage" | "plev" | "leverage" => Ok(Self::BlockPartialLeverage),
            other => Err(Error::InvalidConfig(format!("unknown sampling scheme '{other}'"))),
        }
    }
}

/// Per-block probabilities together with the inclusion probabilities they
/// induce at a given budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub scheme: SamplingScheme,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub budget_s: usize,
    pub seed: u64,
}

impl SamplingPlan {
    pub fn new(scheme: SamplingScheme, p: Vec<f64>, budget_s: usize, seed: u64) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidConfig("sampling distribution is empty".into()));
        }
        if budget_s == 0 {
            return Err(Error::InvalidConfig("sampling budget must be >= 1".into()));
        }
        if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig("probabilities must be finite and >= 0".into()));
        }
        let total = compensated_sum(p.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        let s = budget_s as f64;
        let q = p.iter().map(|&pi| (s * pi).min(1.0)).collect();
        Ok(Self {
            scheme,
            p,
            q,
            budget_s,
            seed,
        })
    }

    pub fn block_count(&self) -> usize {
        self.p.len()
    }

    /// Expected number of kept blocks, `sum q_i`.
    pub fn expected_kept(&self) -> f64 {
        self.q.iter().sum()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Kept block indices (zero-based) with their `1 / sqrt(q_i)` scale factors.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSample {
    pub kept: Vec<usize>,
    pub scales: Vec<f64>,
}

impl BlockSample {
    /// Every block kept with unit scale.
    pub fn full(block_count: usize) -> Self {
        Self {
            kept: (0..block_count).collect(),
            scales: vec![1.0; block_count],
        }
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeverageScores {
    pub tau: Vec<f64>,
    pub is_approximate: bool,
    /// Claimed ratio between the approximate and exact scores (1 for exact).
    pub beta_bound: f64,
}

impl LeverageScores {
    pub fn sum(&self) -> f64 {
        self.tau.iter().sum()
    }
}

pub fn uniform_distribution(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// `p_i = |A_i|_F^2 / |A|_F^2`.
pub fn block_norm_squares_distribution(a: &BlockedMatrix) -> Result<Vec<f64>> {
    normalize(a.block_frobenius_sq(), "matrix is all zero")
}

/// `p_i = tau_i / sum_j tau_j`.
pub fn leverage_distribution(scores: &LeverageScores) -> Result<Vec<f64>> {
    normalize(scores.tau.clone(), "all leverage scores are zero")
}

/// Neumaier summation; keeps long probability vectors summing to 1 within
/// a few ulps.
pub(crate) fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn normalize(mut weights: Vec<f64>, degenerate: &str) -> Result<Vec<f64>> {
    let total = compensated_sum(weights.iter().copied());
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Degenerate(degenerate.into()));
    }
    for w in &mut weights {
        *w /= total;
    }
    Ok(weights)
}

/// `[A; Q^{1/2}]`.
pub fn augmented_matrix(a: &BlockedMatrix, q: &PsdMatrix) -> Result<DenseMatrix> {
    let d = a.cols();
    if q.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "Q is {}x{} but A has {} columns",
            q.dim(),
            q.dim(),
            d
        )));
    }
    let rows = a.entries().nrows();
    let mut bar = DenseMatrix::zeros(rows + d, d);
    bar.rows_mut(0, rows).copy_from(a.entries());
    bar.rows_mut(rows, d).copy_from(&q.sqrt());
    Ok(bar)
}

fn block_sums(row_scores: impl Iterator<Item = f64>, block_rows: usize, blocks: usize) -> Vec<f64> {
    let mut tau = vec![0.0; blocks];
    for (r, v) in row_scores.enumerate().take(blocks * block_rows) {
        tau[r / block_rows] += v;
    }
    tau
}

/// Squared row norms of `M R^{-1}` for upper-triangular `R`.
fn whitened_row_norms(m: &DenseMatrix, r: &DenseMatrix) -> Result<Vec<f64>> {
    // Y R = M  <=>  R^T Y^T = M^T.
    let rt = r.transpose();
    let yt = rt
        .solve_lower_triangular(&m.transpose())
        .ok_or(Error::Singular {
            index: 0,
            pivot: 0.0,
            tol: 0.0,
        })?;
    Ok(yt.column_iter().map(|c| c.norm_squared()).collect())
}

/// Exact block partial leverage scores of `A` with regularizer `Q`.
///
/// Uses a thin QR of `[A; Q^{1/2}]`; when that matrix is rank deficient the
/// scores fall back to pseudo-inverse semantics through an SVD.
pub fn exact_block_partial_leverage_scores(a: &BlockedMatrix, q: &PsdMatrix) -> Result<LeverageScores> {
    let bar = augmented_matrix(a, q)?;
    let rows_a = a.entries().nrows();
    let row_scores: Vec<f64> = match qr_r_factor(&bar) {
        Ok(r) => whitened_row_norms(a.entries(), &r)?,
        Err(Error::Singular { .. }) => pinv_row_leverage(&bar)?
            .into_iter()
            .take(rows_a)
            .collect(),
        Err(e) => return Err(e),
    };
    Ok(LeverageScores {
        tau: block_sums(row_scores.into_iter(), a.block_rows(), a.block_count()),
        is_approximate: false,
        beta_bound: 1.0,
    })
}

fn pinv_row_leverage(m: &DenseMatrix) -> Result<Vec<f64>> {
    let svd = m.clone().svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| Error::Degenerate("SVD did not produce left vectors".into()))?;
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Err(Error::Degenerate("augmented matrix is all zero".into()));
    }
    let cutoff = smax * m.nrows().max(m.ncols()) as f64 * f64::EPSILON;
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > cutoff)
        .collect();
    Ok((0..m.nrows())
        .map(|r| keep.iter().map(|&c| u[(r, c)] * u[(r, c)]).sum())
        .collect())
}

/// Sketched leverage scores using a caller-supplied embedding of `[A; Q^{1/2}]`.
///
/// Returns `beta_safety * |a_j^T R^{-1}|^2` summed per block, where `R` comes
/// from a QR of the sketch.
pub fn sketched_block_partial_leverage_scores(
    a: &BlockedMatrix,
    q: &PsdMatrix,
    embedding: &SparseEmbedding,
    beta_safety: f64,
) -> Result<LeverageScores> {
    if !(beta_safety >= 1.0) {
        return Err(Error::InvalidConfig(format!("beta_safety must be >= 1, got {beta_safety}")));
    }
    let bar = augmented_matrix(a, q)?;
    let sketch = apply_sparse_embedding(embedding, &bar)?;
    let r = qr_r_factor(&sketch).map_err(|e| Error::SketchFailure(e.to_string()))?;
    let row_scores = whitened_row_norms(a.entries(), &r)?;
    let tau = block_sums(
        row_scores.into_iter().map(|v| v * beta_safety),
        a.block_rows(),
        a.block_count(),
    );
    let eps = sketch_distortion(a.cols(), embedding.target_rows());
    Ok(LeverageScores {
        tau,
        is_approximate: true,
        beta_bound: beta_safety * beta_safety * (1.0 + eps) / (1.0 - eps),
    })
}

/// Nominal subspace distortion `sqrt(d / m)` of a sketch with `m` rows,
/// capped below 1.
pub fn sketch_distortion(d: usize, m: usize) -> f64 {
    (d as f64 / m as f64).sqrt().min(0.99)
}

/// Approximate block partial leverage scores via a sparse subspace embedding.
///
/// Requires `sketch_rows >= 20 d`. If the sketch comes out singular the
/// computation is retried once with a fresh seed.
pub fn fast_block_partial_leverage_scores(
    a: &BlockedMatrix,
    q: &PsdMatrix,
    sketch_rows: usize,
    seed: u64,
) -> Result<LeverageScores> {
    fast_block_partial_leverage_scores_with(a, q, sketch_rows, seed, DEFAULT_BETA_SAFETY)
}

pub fn fast_block_partial_leverage_scores_with(
    a: &BlockedMatrix,
    q: &PsdMatrix,
    sketch_rows: usize,
    seed: u64,
    beta_safety: f64,
) -> Result<LeverageScores> {
    let d = a.cols();
    if sketch_rows < DEFAULT_SKETCH_FACTOR * d {
        return Err(Error::InvalidConfig(format!(
            "sketch needs at least {} rows for d = {d}, got {sketch_rows}",
            DEFAULT_SKETCH_FACTOR * d
        )));
    }
    let input_rows = a.entries().nrows() + d;
    let mut last_err = None;
    for attempt in 0..2u64 {
        let emb = SparseEmbedding::new(input_rows, sketch_rows, derive_seed(seed, attempt))?;
        match sketched_block_partial_leverage_scores(a, q, &emb, beta_safety) {
            Err(Error::SketchFailure(msg)) => last_err = Some(msg),
            other => return other,
        }
    }
    Err(Error::SketchFailure(last_err.unwrap_or_default()))
}

/// Mixes a base seed with a stream index (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_eps_delta(eps: f64, delta: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidConfig(format!("eps must lie in (0, 1), got {eps}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidConfig(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

fn ceil_count(raw: f64) -> usize {
    raw.ceil() as usize
}

/// `4 (sum tau) log(4 d / delta) / eps^2`, before rounding.
pub fn sampling_size_leverage_raw(sum_tau: f64, d: usize, eps: f64, delta: f64) -> Result<f64> {
    check_eps_delta(eps, delta)?;
    if !(sum_tau > 0.0) {
        return Err(Error::InvalidConfig("sum of leverage scores must be > 0".into()));
    }
    Ok(4.0 * sum_tau * (4.0 * d as f64 / delta).ln() / (eps * eps))
}

pub fn sampling_size_leverage(sum_tau: f64, d: usize, eps: f64, delta: f64) -> Result<usize> {
    sampling_size_leverage_raw(sum_tau, d, eps, delta).map(ceil_count)
}

/// `4 sr log(min(4 sr, d) / delta) / eps^2`, before rounding.
pub fn sampling_size_block_norms_raw(stable_rank: f64, d: usize, eps: f64, delta: f64) -> Result<f64> {
    check_eps_delta(eps, delta)?;
    if !(stable_rank >= 1.0 - 1e-9) {
        return Err(Error::InvalidConfig(format!("stable rank must be >= 1, got {stable_rank}")));
    }
    let inner = (4.0 * stable_rank).min(d as f64);
    Ok(4.0 * stable_rank * (inner / delta).ln() / (eps * eps))
}

pub fn sampling_size_block_norms(stable_rank: f64, d: usize, eps: f64, delta: f64) -> Result<usize> {
    sampling_size_block_norms_raw(stable_rank, d, eps, delta).map(ceil_count)
}

/// Largest `|A_i|_2^2` over blocks, divided by `|A|_2^2`.
pub fn max_block_spectral_share(a: &BlockedMatrix) -> Result<f64> {
    let per_block = block_spectral_norms_sq(a);
    let top = spectral_norm_sq(a)?;
    Ok(per_block.into_iter().fold(0.0, f64::max) / top)
}

/// `4 n (max_i |A_i|^2 / |A|^2) log(d / delta) / eps^2`, before rounding.
pub fn sampling_size_uniform_raw(a: &BlockedMatrix, d: usize, eps: f64, delta: f64) -> Result<f64> {
    check_eps_delta(eps, delta)?;
    let share = max_block_spectral_share(a)?;
    Ok(4.0 * a.block_count() as f64 * share * (d as f64 / delta).ln() / (eps * eps))
}

pub fn sampling_size_uniform(a: &BlockedMatrix, d: usize, eps: f64, delta: f64) -> Result<usize> {
    sampling_size_uniform_raw(a, d, eps, delta).map(ceil_count)
}

/// `|A_i|_2^2` for every block.
pub fn block_spectral_norms_sq(a: &BlockedMatrix) -> Vec<f64> {
    if a.block_rows() == 1 {
        return a.block_frobenius_sq();
    }
    (0..a.block_count())
        .map(|i| {
            let b = a.block(i);
            let small = if b.nrows() <= b.ncols() {
                b * b.transpose()
            } else {
                b.transpose() * b
            };
            SymmetricEigen::new(small).eigenvalues.max().max(0.0)
        })
        .collect()
}

fn spectral_norm_sq(a: &BlockedMatrix) -> Result<f64> {
    let e = a.entries();
    let (_, top) = symmetric_eig_extremes(&e.tr_mul(e))?;
    if !(top > 0.0) {
        return Err(Error::Degenerate("matrix is all zero".into()));
    }
    Ok(top)
}

/// `sr(A) = |A|_F^2 / |A|_2^2`.
pub fn stable_rank(a: &BlockedMatrix) -> Result<f64> {
    let top = spectral_norm_sq(a)?;
    Ok(a.entries().norm_squared() / top)
}

/// Keeps each block independently with probability `q_i`.
pub fn draw_block_sample(plan: &SamplingPlan) -> Result<BlockSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut kept = Vec::new();
    let mut scales = Vec::new();
    for (i, &qi) in plan.q.iter().enumerate() {
        let u: f64 = rng.random();
        if qi > 0.0 && (qi >= 1.0 || u < qi) {
            kept.push(i);
            scales.push(1.0 / qi.sqrt());
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptySample { attempts: 1 });
    }
    Ok(BlockSample { kept, scales })
}

/// [`draw_block_sample`], redrawing with derived seeds when the sample is
/// empty. Returns the sample and the number of attempts used.
pub fn draw_block_sample_with_retry(plan: &SamplingPlan) -> Result<(BlockSample, usize)> {
    for attempt in 0..MAX_SAMPLE_ATTEMPTS {
        let seed = if attempt == 0 {
            plan.seed
        } else {
            derive_seed(plan.seed, attempt as u64)
        };
        match draw_block_sample(&plan.with_seed(seed)) {
            Ok(s) => return Ok((s, attempt + 1)),
            Err(Error::EmptySample { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::EmptySample {
        attempts: MAX_SAMPLE_ATTEMPTS,
    })
}

/// `sum_{i kept} A_i^T A_i / q_i`, i.e. the sampled Gram matrix without `Q`.
pub fn sampled_gram(a: &BlockedMatrix, sample: &BlockSample) -> DenseMatrix {
    let rows = a.select_scaled(&sample.kept, &sample.scales);
    rows.tr_mul(&rows)
}
