//! Covariance functions over input vectors, with hyperparameters stored in
//! log space so model selection can search unconstrained.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    Rbf,
    Linear,
}

/// Covariance function family plus log-space hyperparameters.
///
/// RBF: k(x, x') = amplitude * exp(-||x - x'||^2 / (2 l^2)) with
/// amplitude = exp(log_amplitude), l^2 = exp(2 log_length_scale).
/// Linear: k(x, x') = sigma^2 x^T x' with sigma^2 = exp(log_signal_variance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub log_length_scale: f64,
    pub log_amplitude: f64,
    pub log_signal_variance: f64,
}

impl KernelSpec {
    pub fn rbf(log_length_scale: f64, log_amplitude: f64) -> Self {
        KernelSpec {
            family: KernelFamily::Rbf,
            log_length_scale,
            log_amplitude,
            log_signal_variance: 0.0,
        }
    }

    pub fn linear(log_signal_variance: f64) -> Self {
        KernelSpec {
            family: KernelFamily::Linear,
            log_length_scale: 0.0,
            log_amplitude: 0.0,
            log_signal_variance,
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "kernel arguments have lengths {} and {}",
                x.len(),
                y.len()
            )));
        }
        Ok(self.eval_unchecked(x, y))
    }

    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Rbf => {
                let sq_dist: f64 = x
                    .iter()
                    .zip(y.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                let l2 = (2.0 * self.log_length_scale).exp();
                self.log_amplitude.exp() * (-sq_dist / (2.0 * l2)).exp()
            }
            KernelFamily::Linear => {
                let dot: f64 = x.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
                self.log_signal_variance.exp() * dot
            }
        }
    }

    /// Prior variance at a single point.
    pub fn eval_diag(&self, x: &[f64]) -> f64 {
        self.eval_unchecked(x, x)
    }

    /// Gram matrix over the rows of `x`; symmetry is exact by construction.
    pub fn gram(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = x.nrows();
        assert!(n > 0, "gram of an empty point set");
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            let xi: Vec<f64> = x.row(i).iter().copied().collect();
            for j in i..n {
                let xj: Vec<f64> = x.row(j).iter().copied().collect();
                let v = self.eval(&xi, &xj)?;
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }

    /// Cross-covariance between the rows of `x` and the rows of `z`,
    /// shape |x| x |z|. `z` may be empty.
    pub fn cross(&self, x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut k = DMatrix::zeros(x.nrows(), z.nrows());
        for i in 0..x.nrows() {
            let xi: Vec<f64> = x.row(i).iter().copied().collect();
            for j in 0..z.nrows() {
                let zj: Vec<f64> = z.row(j).iter().copied().collect();
                k[(i, j)] = self.eval(&xi, &zj)?;
            }
        }
        Ok(k)
    }
}
