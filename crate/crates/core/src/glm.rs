//! Generalized linear model objectives with ridge penalty.
//!
//! The objective is `F(w) = sum_i psi(x_i^T w, y_i) + lambda |w|^2`. Its Hessian
//! factors as `A(w)^T A(w) + Q` with one block per datum,
//! `A_i(w) = sqrt(psi''(x_i^T w, y_i)) x_i^T`, and `Q = 2 lambda I`.

use nalgebra::DMatrixView;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, PsdMatrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `psi(u, y) = log(1 + exp(-u y))`, labels in {-1, +1}.
    #[default]
    Logistic,
    /// `psi(u, y) = (u - y)^2 / 2`.
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiValues {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

/// Numerically stable `1 / (1 + exp(-t))`.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))` without overflow.
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Value and first two derivatives of the cumulant with respect to `u`.
pub fn psi_derivatives(u: f64, y: f64, loss: LossKind) -> PsiValues {
    match loss {
        LossKind::Logistic => {
            let margin = u * y;
            let s_neg = sigmoid(-margin);
            let s_pos = sigmoid(margin);
            PsiValues {
                value: softplus(-margin),
                first: -y * s_neg,
                second: s_pos * s_neg,
            }
        }
        LossKind::Squared => {
            let r = u - y;
            PsiValues {
                value: 0.5 * r * r,
                first: r,
                second: 1.0,
            }
        }
    }
}

/// Row-blocked matrix: `n` blocks of `k` consecutive rows each.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockedMatrix {
    entries: DenseMatrix,
    block_rows: usize,
}

impl BlockedMatrix {
    pub fn new(entries: DenseMatrix, block_rows: usize) -> Result<Self> {
        if block_rows == 0 {
            return Err(Error::InvalidConfig("block size must be at least 1".into()));
        }
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::DimensionMismatch("blocked matrix is empty".into()));
        }
        if !entries.nrows().is_multiple_of(block_rows) {
            return Err(Error::DimensionMismatch(format!(
                "{} rows do not split into blocks of {}",
                entries.nrows(),
                block_rows
            )));
        }
        Ok(Self {
            entries,
            block_rows,
        })
    }

    /// Each row is its own block.
    pub fn from_rows(entries: DenseMatrix) -> Result<Self> {
        Self::new(entries, 1)
    }

    pub fn block_count(&self) -> usize {
        self.entries.nrows() / self.block_rows
    }

    pub fn block_rows(&self) -> usize {
        self.block_rows
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &DenseMatrix {
        &self.entries
    }

    pub fn into_entries(self) -> DenseMatrix {
        self.entries
    }

    /// Zero-based row range of block `i`.
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        i * self.block_rows..(i + 1) * self.block_rows
    }

    pub fn block(&self, i: usize) -> DMatrixView<'_, f64> {
        self.entries
            .view((i * self.block_rows, 0), (self.block_rows, self.cols()))
    }

    /// `|A_i|_F^2` for every block.
    pub fn block_frobenius_sq(&self) -> Vec<f64> {
        let k = self.block_rows;
        let mut out = vec![0.0; self.block_count()];
        for j in 0..self.cols() {
            for (r, &v) in self.entries.column(j).iter().enumerate() {
                out[r / k] += v * v;
            }
        }
        out
    }

    /// `A_i^T A_i` for block `i`.
    pub fn block_gram(&self, i: usize) -> DenseMatrix {
        let b = self.block(i);
        b.transpose() * b
    }

    /// Stacks the listed blocks, each multiplied by its scale.
    pub fn select_scaled(&self, blocks: &[usize], scales: &[f64]) -> DenseMatrix {
        debug_assert_eq!(blocks.len(), scales.len());
        let k = self.block_rows;
        let d = self.cols();
        let mut out = DenseMatrix::zeros(blocks.len() * k, d);
        for j in 0..d {
            let src = self.entries.column(j);
            let mut dst = out.column_mut(j);
            for (pos, (&b, &s)) in blocks.iter().zip(scales).enumerate() {
                for r in 0..k {
                    dst[pos * k + r] = src[b * k + r] * s;
                }
            }
        }
        out
    }

    /// Applies a permutation of blocks: block `perm[i]` becomes block `i`.
    pub fn permute_blocks(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.block_count() {
            return Err(Error::DimensionMismatch("permutation length".into()));
        }
        let ones = vec![1.0; perm.len()];
        Self::new(self.select_scaled(perm, &ones), self.block_rows)
    }
}

/// Hessian of the objective at a point, as `A^T A + Q`.
#[derive(Debug, Clone)]
pub struct HessianFactorization {
    pub a: BlockedMatrix,
    pub q: PsdMatrix,
}

impl HessianFactorization {
    pub fn hessian(&self) -> DenseMatrix {
        let a = self.a.entries();
        let mut h = a.tr_mul(a);
        self.q.add_to(&mut h);
        h
    }
}

#[derive(Debug, Clone)]
pub struct GlmProblem {
    x: DenseMatrix,
    y: Vector,
    lambda: f64,
    loss: LossKind,
}

impl GlmProblem {
    pub fn new(x: DenseMatrix, y: Vector, lambda: f64, loss: LossKind) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::DimensionMismatch("data matrix is empty".into()));
        }
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} rows",
                y.len(),
                x.nrows()
            )));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidConfig(format!("ridge parameter must be >= 0, got {lambda}")));
        }
        crate::linalg::ensure_finite(&x, "data matrix")?;
        if loss == LossKind::Logistic {
            if let Some(i) = y.iter().position(|&v| v != 1.0 && v != -1.0) {
                return Err(Error::InvalidConfig(format!(
                    "logistic labels must be -1 or +1; label {} at row {} is not",
                    y[i],
                    i + 1
                )));
            }
        }
        Ok(Self { x, y, lambda, loss })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DenseMatrix {
        &self.x
    }

    pub fn y(&self) -> &Vector {
        &self.y
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.x.clone(), self.y.clone(), lambda, self.loss)
    }

    fn check_dim(&self, w: &Vector) {
        assert_eq!(w.len(), self.d(), "iterate has dimension {} but problem has d = {}", w.len(), self.d());
    }

    fn margins(&self, w: &Vector) -> Vector {
        &self.x * w
    }

    pub fn objective(&self, w: &Vector) -> Result<f64> {
        self.check_dim(w);
        let u = self.margins(w);
        let loss: f64 = u
            .iter()
            .zip(self.y.iter())
            .map(|(&ui, &yi)| psi_derivatives(ui, yi, self.loss).value)
            .sum();
        let value = loss + self.lambda * w.norm_squared();
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFinite("objective overflowed".into()))
        }
    }

    pub fn gradient(&self, w: &Vector) -> Vector {
        self.check_dim(w);
        let u = self.margins(w);
        let first = Vector::from_iterator(
            self.n(),
            u.iter()
                .zip(self.y.iter())
                .map(|(&ui, &yi)| psi_derivatives(ui, yi, self.loss).first),
        );
        let mut g = self.x.tr_mul(&first);
        g.axpy(2.0 * self.lambda, w, 1.0);
        g
    }

    /// Hessian contribution of the ridge term, `2 lambda I`.
    pub fn ridge_hessian(&self) -> PsdMatrix {
        PsdMatrix::scaled_identity(self.d(), 2.0 * self.lambda)
            .expect("lambda validated at construction")
    }

    pub fn hessian_factorization(&self, w: &Vector) -> HessianFactorization {
        self.check_dim(w);
        let u = self.margins(w);
        let mut a = self.x.clone();
        for (i, (&ui, &yi)) in u.iter().zip(self.y.iter()).enumerate() {
            let root = psi_derivatives(ui, yi, self.loss).second.sqrt();
            a.row_mut(i).scale_mut(root);
        }
        HessianFactorization {
            a: BlockedMatrix::from_rows(a).expect("data matrix is nonempty"),
            q: self.ridge_hessian(),
        }
    }

    pub fn hessian(&self, w: &Vector) -> DenseMatrix {
        self.hessian_factorization(w).hessian()
    }
}
