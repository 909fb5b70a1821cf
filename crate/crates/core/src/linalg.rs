//! Dense linear-algebra kernels and the sparse subspace embedding.
//!
//! Everything here is pure: functions take their inputs by reference and
//! return fresh values, so they can be called from any number of threads.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative tolerance for accepting slightly negative eigenvalues as PSD.
pub const PSD_REL_TOL: f64 = 1e-10;

/// Relative pivot tolerance below which a QR factor is declared singular.
pub const QR_RANK_TOL: f64 = 1e-12;

/// Curvature threshold (relative to `|d|^2`) for CG breakdown.
pub const CG_BREAKDOWN_TOL: f64 = 1e-14;

/// A symmetric positive semi-definite matrix.
///
/// Symmetry holds exactly because the constructor averages `M` with its
/// transpose. Multiples of the identity are tracked so that the square root
/// can be taken analytically.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMatrix {
    entries: DenseMatrix,
    identity_scale: Option<f64>,
}

impl PsdMatrix {
    pub fn new(m: DenseMatrix) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "PSD matrix must be square and nonempty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        ensure_finite(&m, "PSD matrix")?;
        let sym = (&m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym.clone());
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        let tol = PSD_REL_TOL * max.max(0.0);
        if min < -tol {
            return Err(Error::NotPsd { min_eig: min, tol });
        }
        Ok(Self {
            entries: sym,
            identity_scale: None,
        })
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch("PSD matrix dimension is 0".into()));
        }
        if !(scale >= 0.0) || !scale.is_finite() {
            return Err(Error::NotPsd {
                min_eig: scale,
                tol: 0.0,
            });
        }
        Ok(Self {
            entries: DenseMatrix::identity(dim, dim) * scale,
            identity_scale: Some(scale),
        })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            entries: DenseMatrix::zeros(dim, dim),
            identity_scale: Some(0.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn as_matrix(&self) -> &DenseMatrix {
        &self.entries
    }

    /// `Some(c)` when this matrix is known to equal `c * I`.
    pub fn identity_scale(&self) -> Option<f64> {
        self.identity_scale
    }

    pub fn is_zero(&self) -> bool {
        match self.identity_scale {
            Some(c) => c == 0.0,
            None => self.entries.iter().all(|&v| v == 0.0),
        }
    }

    /// Symmetric square root. Negative eigenvalues within tolerance are
    /// clamped to zero.
    pub fn sqrt(&self) -> DenseMatrix {
        if let Some(c) = self.identity_scale {
            let n = self.dim();
            return DenseMatrix::identity(n, n) * c.sqrt();
        }
        let eig = SymmetricEigen::new(self.entries.clone());
        let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let v = &eig.eigenvectors;
        v * DenseMatrix::from_diagonal(&roots) * v.transpose()
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        match self.identity_scale {
            Some(c) => x * c,
            None => &self.entries * x,
        }
    }

    /// Adds this matrix in place to `m`.
    pub fn add_to(&self, m: &mut DenseMatrix) {
        match self.identity_scale {
            Some(c) => {
                for i in 0..self.dim() {
                    m[(i, i)] += c;
                }
            }
            None => *m += &self.entries,
        }
    }
}

pub(crate) fn ensure_finite(m: &DenseMatrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} has non-finite entries")))
    }
}

/// Thin QR factorization `M = Q R` with `Q` having orthonormal columns.
pub fn qr_thin(m: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    if m.nrows() < m.ncols() || m.ncols() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "thin QR needs rows >= cols >= 1, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    ensure_finite(m, "QR input")?;
    let qr = m.clone().qr();
    let r = qr.r();
    check_triangular_rank(&r, m.norm())?;
    Ok((qr.q(), r))
}

/// Upper-triangular factor only; cheaper than [`qr_thin`] when `Q` is not needed.
pub fn qr_r_factor(m: &DenseMatrix) -> Result<DenseMatrix> {
    if m.nrows() < m.ncols() || m.ncols() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "QR needs rows >= cols >= 1, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    ensure_finite(m, "QR input")?;
    let r = m.clone().qr().r();
    check_triangular_rank(&r, m.norm())?;
    Ok(r)
}

fn check_triangular_rank(r: &DenseMatrix, scale: f64) -> Result<()> {
    let tol = QR_RANK_TOL * scale;
    for i in 0..r.nrows().min(r.ncols()) {
        let pivot = r[(i, i)].abs();
        if pivot < tol || scale == 0.0 {
            return Err(Error::Singular {
                index: i,
                pivot,
                tol,
            });
        }
    }
    Ok(())
}

/// Solves `M x = b` for symmetric positive definite `M`.
pub fn cholesky_solve(m: &DenseMatrix, b: &Vector) -> Result<Vector> {
    if !m.is_square() || m.nrows() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "system matrix {}x{} with rhs of length {}",
            m.nrows(),
            m.ncols(),
            b.len()
        )));
    }
    let chol = m.clone().cholesky().ok_or(Error::Indefinite)?;
    Ok(chol.solve(b))
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vector,
    pub iters: usize,
    /// Final relative residual `|M x - b| / |b|`, recomputed from scratch.
    pub residual: f64,
}

/// Conjugate gradient on a symmetric PSD operator, stopping on relative residual.
pub fn conjugate_gradient<F>(apply: F, b: &Vector, tol: f64, max_iters: usize) -> Result<CgOutcome>
where
    F: FnMut(&Vector) -> Vector,
{
    conjugate_gradient_observed(apply, b, tol, max_iters, |_, _| {})
}

/// Like [`conjugate_gradient`], calling `observe(iter, x)` after every update.
pub fn conjugate_gradient_observed<F, O>(
    mut apply: F,
    b: &Vector,
    tol: f64,
    max_iters: usize,
    mut observe: O,
) -> Result<CgOutcome>
where
    F: FnMut(&Vector) -> Vector,
    O: FnMut(usize, &Vector),
{
    let n = b.len();
    let b_norm = b.norm();
    let mut x = Vector::zeros(n);
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            x,
            iters: 0,
            residual: 0.0,
        });
    }
    if !b_norm.is_finite() {
        return Err(Error::NonFinite("CG right-hand side".into()));
    }

    let mut iters = 0;
    let mut r = b.clone();
    loop {
        // One CG sweep from the current x; restarted if the recursive residual
        // drifted away from the true one.
        let mut p = r.clone();
        let mut rr = r.norm_squared();
        let mut stalled = false;
        while iters < max_iters && rr.sqrt() > tol * b_norm {
            let mp = apply(&p);
            let curvature = p.dot(&mp);
            let p_sq = p.norm_squared();
            if curvature < -CG_BREAKDOWN_TOL * p_sq {
                return Err(Error::NonPsdOperator {
                    iter: iters,
                    curvature,
                });
            }
            if curvature <= 0.0 {
                stalled = true;
                break;
            }
            let alpha = rr / curvature;
            x.axpy(alpha, &p, 1.0);
            r.axpy(-alpha, &mp, 1.0);
            iters += 1;
            observe(iters, &x);
            let rr_next = r.norm_squared();
            p = &r + &p * (rr_next / rr);
            rr = rr_next;
        }
        let true_r = b - apply(&x);
        let residual = true_r.norm() / b_norm;
        if residual <= tol || iters >= max_iters || stalled {
            return Ok(CgOutcome { x, iters, residual });
        }
        r = true_r;
    }
}

/// Sparse ±1 embedding with exactly one nonzero per input row
/// (a CountSketch matrix).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseEmbedding {
    target_rows: usize,
    column_map: Vec<usize>,
    sign_map: Vec<f64>,
    seed: u64,
}

impl SparseEmbedding {
    pub fn new(input_rows: usize, target_rows: usize, seed: u64) -> Result<Self> {
        if target_rows == 0 || input_rows == 0 {
            return Err(Error::InvalidConfig(
                "sparse embedding needs at least one input and one target row".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut column_map = Vec::with_capacity(input_rows);
        let mut sign_map = Vec::with_capacity(input_rows);
        for _ in 0..input_rows {
            column_map.push(rng.random_range(0..target_rows));
            sign_map.push(if rng.random::<bool>() { 1.0 } else { -1.0 });
        }
        Ok(Self {
            target_rows,
            column_map,
            sign_map,
            seed,
        })
    }

    pub fn identity(rows: usize) -> Self {
        Self {
            target_rows: rows,
            column_map: (0..rows).collect(),
            sign_map: vec![1.0; rows],
            seed: 0,
        }
    }

    pub fn from_maps(target_rows: usize, column_map: Vec<usize>, sign_map: Vec<f64>) -> Result<Self> {
        if column_map.len() != sign_map.len() {
            return Err(Error::DimensionMismatch(
                "column map and sign map lengths differ".into(),
            ));
        }
        if let Some(&bad) = column_map.iter().find(|&&c| c >= target_rows) {
            return Err(Error::InvalidConfig(format!(
                "target row {bad} out of range for sketch size {target_rows}"
            )));
        }
        if sign_map.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(Error::InvalidConfig("signs must be +1 or -1".into()));
        }
        Ok(Self {
            target_rows,
            column_map,
            sign_map,
            seed: 0,
        })
    }

    pub fn target_rows(&self) -> usize {
        self.target_rows
    }

    pub fn input_rows(&self) -> usize {
        self.column_map.len()
    }

    pub fn column_map(&self) -> &[usize] {
        &self.column_map
    }

    pub fn sign_map(&self) -> &[f64] {
        &self.sign_map
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Computes `Π M` in one pass over the nonzeros of `M`.
pub fn apply_sparse_embedding(s: &SparseEmbedding, m: &DenseMatrix) -> Result<DenseMatrix> {
    if s.input_rows() != m.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "embedding built for {} rows applied to a matrix with {} rows",
            s.input_rows(),
            m.nrows()
        )));
    }
    let mut out = DenseMatrix::zeros(s.target_rows, m.ncols());
    for j in 0..m.ncols() {
        let col = m.column(j);
        let mut out_col = out.column_mut(j);
        for (i, &v) in col.iter().enumerate() {
            if v != 0.0 {
                out_col[s.column_map[i]] += s.sign_map[i] * v;
            }
        }
    }
    Ok(out)
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn symmetric_eig_extremes(m: &DenseMatrix) -> Result<(f64, f64)> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "eigen extremes need a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    ensure_finite(m, "eigenvalue input")?;
    let eig = SymmetricEigen::new(m.clone());
    Ok((eig.eigenvalues.min(), eig.eigenvalues.max()))
}

/// Spectral norm of a symmetric matrix.
pub fn symmetric_spectral_norm(m: &DenseMatrix) -> Result<f64> {
    let (lo, hi) = symmetric_eig_extremes(m)?;
    Ok(lo.abs().max(hi.abs()))
}
