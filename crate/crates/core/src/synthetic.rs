//! Synthetic logistic-regression instances with controllable row coherence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::sigmoid;
use crate::linalg::{DenseMatrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coherence {
    /// i.i.d. standard Gaussian rows.
    Incoherent,
    /// Gaussian rows, with row 0 rescaled to carry `weight` of the total
    /// squared Frobenius mass.
    OneHeavyRow { weight: f64 },
    /// Row `i` scaled so its expected squared norm decays like `(i + 1)^-exponent`.
    PowerLaw { exponent: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub coherence: Coherence,
    /// Norm of the planted coefficient vector.
    #[serde(default = "default_signal")]
    pub signal_norm: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_signal() -> f64 {
    1.0
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub x: DenseMatrix,
    pub y: Vector,
    pub w_true: Vector,
}

impl SyntheticSpec {
    pub fn new(n: usize, d: usize, coherence: Coherence, seed: u64) -> Self {
        Self {
            n,
            d,
            coherence,
            signal_norm: default_signal(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n < self.d {
            return Err(Error::InvalidConfig(format!(
                "synthetic problem needs n >= d >= 1, got n = {}, d = {}",
                self.n, self.d
            )));
        }
        match self.coherence {
            Coherence::OneHeavyRow { weight } if !(weight > 0.0 && weight < 1.0) => Err(
                Error::InvalidConfig(format!("heavy-row weight must lie in (0, 1), got {weight}")),
            ),
            Coherence::PowerLaw { exponent } if !(exponent > 0.0) => Err(Error::InvalidConfig(
                format!("power-law exponent must be > 0, got {exponent}"),
            )),
            _ if !(self.signal_norm >= 0.0) => {
                Err(Error::InvalidConfig("signal norm must be >= 0".into()))
            }
            _ => Ok(()),
        }
    }

    /// Draws the design, a planted signal and logistic labels
    /// `P(y = +1) = sigmoid(x^T w_true)`.
    pub fn generate(&self) -> Result<SyntheticData> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (n, d) = (self.n, self.d);
        let mut x = DenseMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
        match self.coherence {
            Coherence::Incoherent => {}
            Coherence::OneHeavyRow { weight } => {
                let rest: f64 = (1..n).map(|i| x.row(i).norm_squared()).sum();
                let target = weight / (1.0 - weight) * rest;
                let current = x.row(0).norm_squared();
                x.row_mut(0).scale_mut((target / current).sqrt());
            }
            Coherence::PowerLaw { exponent } => {
                for i in 0..n {
                    x.row_mut(i).scale_mut(((i + 1) as f64).powf(-exponent / 2.0));
                }
            }
        }
        let mut w_true = Vector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let norm = w_true.norm();
        if norm > 0.0 {
            w_true *= self.signal_norm / norm;
        }
        let margins = &x * &w_true;
        let y = margins.map(|m| if rng.random::<f64>() < sigmoid(m) { 1.0 } else { -1.0 });
        Ok(SyntheticData { x, y, w_true })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heavy_row_carries_requested_mass() {
        let spec = SyntheticSpec::new(400, 5, Coherence::OneHeavyRow { weight: 0.9 }, 3);
        let data = spec.generate().unwrap();
        let total = data.x.norm_squared();
        let share = data.x.row(0).norm_squared() / total;
        assert!((share - 0.9).abs() < 1e-12);
        assert!(data.y.iter().all(|&v| v == 1.0 || v == -1.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SyntheticSpec::new(50, 3, Coherence::Incoherent, 8);
        let a = spec.generate().unwrap();
        let b = spec.generate().unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn validation() {
        assert!(SyntheticSpec::new(3, 5, Coherence::Incoherent, 0).validate().is_err());
        assert!(SyntheticSpec::new(10, 2, Coherence::OneHeavyRow { weight: 1.0 }, 0)
            .validate()
            .is_err());
        assert!(SyntheticSpec::new(10, 2, Coherence::PowerLaw { exponent: 0.0 }, 0)
            .validate()
            .is_err());
    }
}
