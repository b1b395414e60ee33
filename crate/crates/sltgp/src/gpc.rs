//! Standard binary GP classification with a probit likelihood via analytic
//! EP. Doubles as the soft-label extractor when fitted on privileged
//! features: the training-point posterior latent means are the soft labels.

use nalgebra::{DMatrix, DVector};

use crate::ep::{self, EpConfig, EpPosterior, SiteLikelihood};
use crate::kernels::KernelSpec;
use crate::{Error, Result};

pub const GRAM_MAX_JITTER: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GpcPosterior {
    pub ep: EpPosterior,
    pub kernel: KernelSpec,
    pub training_inputs: DMatrix<f64>,
}

pub fn validate_labels(y: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Config("need at least one training point".into()));
    }
    if y.iter().any(|v| *v != 1.0 && *v != -1.0) {
        return Err(Error::Config("labels must be exactly +1 or -1".into()));
    }
    Ok(())
}

pub fn fit_gpc(
    x: &DMatrix<f64>,
    y: &[f64],
    kernel: &KernelSpec,
    config: &EpConfig,
) -> Result<GpcPosterior> {
    validate_labels(y)?;
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} inputs but {} labels",
            x.nrows(),
            y.len()
        )));
    }
    let gram = kernel.gram(x)?;
    let likelihoods: Vec<SiteLikelihood> = y
        .iter()
        .map(|&label| SiteLikelihood::Probit { label })
        .collect();
    let prior_mean = DVector::zeros(y.len());
    // A touch of jitter keeps rank-deficient grams (linear kernel with
    // n > d, duplicated points) factorizable downstream.
    let mut prior_cov = gram;
    let jitter = crate::numerics::psd_factorize(&prior_cov, GRAM_MAX_JITTER)?.jitter_used();
    if jitter > 0.0 {
        for i in 0..prior_cov.nrows() {
            prior_cov[(i, i)] += jitter;
        }
    }
    let ep = ep::fit(&prior_mean, &prior_cov, &likelihoods, config)?;
    Ok(GpcPosterior {
        ep,
        kernel: *kernel,
        training_inputs: x.clone(),
    })
}

impl GpcPosterior {
    pub fn predict_latent(&self, x_hat: &[f64]) -> (f64, f64) {
        let z = DMatrix::from_row_slice(1, x_hat.len(), x_hat);
        let k_col = self
            .kernel
            .cross(&self.training_inputs, &z)
            .expect("test point dimension mismatch");
        let k_hat = DVector::from_column_slice(k_col.as_slice());
        self.ep
            .predict_latent(&k_hat, self.kernel.eval_diag(x_hat), 0.0)
    }

    pub fn predict_prob(&self, x_hat: &[f64]) -> f64 {
        let (mu, var) = self.predict_latent(x_hat);
        ep::predictive_probability(mu, var)
    }

    /// Predictive latent moments for every row of `x_hat` at once.
    pub fn predict_latent_batch(&self, x_hat: &DMatrix<f64>) -> Vec<(f64, f64)> {
        let k_hat = self
            .kernel
            .cross(&self.training_inputs, x_hat)
            .expect("test point dimension mismatch");
        let prior_var: Vec<f64> = (0..x_hat.nrows())
            .map(|j| {
                let row: Vec<f64> = x_hat.row(j).iter().copied().collect();
                self.kernel.eval_diag(&row)
            })
            .collect();
        let zeros = vec![0.0; x_hat.nrows()];
        self.ep.predict_latent_batch(&k_hat, &prior_var, &zeros)
    }

    pub fn predict_prob_batch(&self, x_hat: &DMatrix<f64>) -> Vec<f64> {
        self.predict_latent_batch(x_hat)
            .into_iter()
            .map(|(mu, var)| ep::predictive_probability(mu, var))
            .collect()
    }

    pub fn log_marginal(&self) -> f64 {
        self.ep.log_marginal
    }
}

/// Fits a GPC on the privileged features and returns its training-point
/// posterior latent means as soft labels, together with the fitted extractor.
pub fn extract_soft_labels(
    x_star: &DMatrix<f64>,
    y: &[f64],
    kernel_star: &KernelSpec,
    config: &EpConfig,
) -> Result<(DVector<f64>, GpcPosterior)> {
    let post = fit_gpc(x_star, y, kernel_star, config)?;
    let s = post.ep.mean.clone();
    Ok((s, post))
}
