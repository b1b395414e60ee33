//! The joint two-task model: soft-label regression (source) and hard-label
//! classification (target) share one GP prior coupled by the task
//! similarity `rho`, fitted with mixed-likelihood EP. Also provides the
//! equivalent single-task formulation obtained by folding the soft labels
//! into the prior, which is the cheaper n x n path and serves as a
//! cross-check of the joint 2n x 2n fit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ep::{self, EpConfig, EpPosterior, SiteLikelihood, SiteState};
use crate::gpc;
use crate::kernels::KernelSpec;
use crate::numerics;
use crate::{Error, Result};

/// Two-task Kronecker prior [[1, rho], [rho, 1]] (x) K_X with the target
/// block first.
#[derive(Debug, Clone)]
pub struct JointPrior {
    pub rho: f64,
    pub k_x_gram: DMatrix<f64>,
    pub joint_cov: DMatrix<f64>,
}

pub fn build_joint_prior(k_x: &DMatrix<f64>, rho: f64) -> Result<JointPrior> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::RhoOutOfRange(rho));
    }
    let n = k_x.nrows();
    let mut joint = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let v = k_x[(i, j)];
            joint[(i, j)] = v;
            joint[(n + i, n + j)] = v;
            joint[(i, n + j)] = rho * v;
            joint[(n + i, j)] = rho * v;
        }
    }
    Ok(JointPrior {
        rho,
        k_x_gram: k_x.clone(),
        joint_cov: joint,
    })
}

#[derive(Debug, Clone)]
pub struct SltModel {
    pub prior: JointPrior,
    pub soft_labels: DVector<f64>,
    pub ep: EpPosterior,
    pub kernel: KernelSpec,
    pub training_inputs: DMatrix<f64>,
    /// EP approximation of log p(y, s | X).
    pub joint_log_marginal: f64,
    /// log p(y | s, X) = joint marginal minus the exact soft-label marginal.
    pub conditional_log_marginal: f64,
}

pub fn fit_slt(
    x: &DMatrix<f64>,
    y: &[f64],
    s: &DVector<f64>,
    kernel: &KernelSpec,
    rho: f64,
    config: &EpConfig,
) -> Result<SltModel> {
    gpc::validate_labels(y)?;
    let n = y.len();
    if x.nrows() != n || s.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "inputs {}, labels {}, soft labels {}",
            x.nrows(),
            n,
            s.len()
        )));
    }
    let mut gram = kernel.gram(x)?;
    let jitter = numerics::psd_factorize(&gram, gpc::GRAM_MAX_JITTER)?.jitter_used();
    if jitter > 0.0 {
        for i in 0..n {
            gram[(i, i)] += jitter;
        }
    }
    let prior = build_joint_prior(&gram, rho)?;

    let mut likelihoods = Vec::with_capacity(2 * n);
    for &label in y {
        likelihoods.push(SiteLikelihood::Probit { label });
    }
    for i in 0..n {
        likelihoods.push(SiteLikelihood::Gaussian {
            observation: s[i],
            noise_variance: 1.0,
        });
    }
    let prior_mean = DVector::zeros(2 * n);
    let ep = ep::fit(&prior_mean, &prior.joint_cov, &likelihoods, config)?;
    let joint_log_marginal = ep.log_marginal;
    let conditional_log_marginal = joint_log_marginal - soft_label_log_marginal(&gram, s)?;
    Ok(SltModel {
        prior,
        soft_labels: s.clone(),
        ep,
        kernel: *kernel,
        training_inputs: x.clone(),
        joint_log_marginal,
        conditional_log_marginal,
    })
}

impl SltModel {
    fn n(&self) -> usize {
        self.training_inputs.nrows()
    }

    /// Site state restricted to the n target (probit) sites.
    pub fn target_sites(&self) -> SiteState {
        let n = self.n();
        SiteState {
            nu_tilde: self.ep.sites.nu_tilde.rows(0, n).clone_owned(),
            tau_tilde: self.ep.sites.tau_tilde.rows(0, n).clone_owned(),
            log_z_tilde: self.ep.sites.log_z_tilde.rows(0, n).clone_owned(),
        }
    }

    /// Posterior latent mean of the target task at the training points.
    pub fn target_mean(&self) -> DVector<f64> {
        self.ep.mean.rows(0, self.n()).clone_owned()
    }

    pub fn predict_latent(&self, x_hat: &[f64]) -> (f64, f64) {
        let z = DMatrix::from_row_slice(1, x_hat.len(), x_hat);
        let k_col = self
            .kernel
            .cross(&self.training_inputs, &z)
            .expect("test point dimension mismatch");
        let n = self.n();
        let k_hat = DVector::from_fn(2 * n, |i, _| {
            if i < n {
                k_col[(i, 0)]
            } else {
                self.prior.rho * k_col[(i - n, 0)]
            }
        });
        self.ep
            .predict_latent(&k_hat, self.kernel.eval_diag(x_hat), 0.0)
    }

    pub fn predict_prob(&self, x_hat: &[f64]) -> f64 {
        let (mu, var) = self.predict_latent(x_hat);
        ep::predictive_probability(mu, var)
    }

    pub fn predict_latent_batch(&self, x_hat: &DMatrix<f64>) -> Vec<(f64, f64)> {
        let n = self.n();
        let m = x_hat.nrows();
        let k_cross = self
            .kernel
            .cross(&self.training_inputs, x_hat)
            .expect("test point dimension mismatch");
        let mut k_hat = DMatrix::zeros(2 * n, m);
        for j in 0..m {
            for i in 0..n {
                k_hat[(i, j)] = k_cross[(i, j)];
                k_hat[(n + i, j)] = self.prior.rho * k_cross[(i, j)];
            }
        }
        let prior_var: Vec<f64> = (0..m)
            .map(|j| {
                let row: Vec<f64> = x_hat.row(j).iter().copied().collect();
                self.kernel.eval_diag(&row)
            })
            .collect();
        let zeros = vec![0.0; m];
        self.ep.predict_latent_batch(&k_hat, &prior_var, &zeros)
    }

    pub fn predict_prob_batch(&self, x_hat: &DMatrix<f64>) -> Vec<f64> {
        self.predict_latent_batch(x_hat)
            .into_iter()
            .map(|(mu, var)| ep::predictive_probability(mu, var))
            .collect()
    }
}

/// Exact Gaussian marginal of the soft labels: log N(s | 0, K_X + I).
pub fn soft_label_log_marginal(k_x: &DMatrix<f64>, s: &DVector<f64>) -> Result<f64> {
    let n = k_x.nrows();
    let mut c = k_x.clone();
    for i in 0..n {
        c[(i, i)] += 1.0;
    }
    let factor = numerics::psd_factorize(&c, gpc::GRAM_MAX_JITTER)?;
    let solved = factor.solve_vec(s);
    Ok(-0.5
        * (n as f64 * (2.0 * std::f64::consts::PI).ln()
            + factor.log_determinant()
            + s.dot(&solved)))
}

/// Single-task probit EP under the prior conditioned on the soft labels:
/// mean rho K (K + I)^{-1} s and covariance K - rho^2 K (K + I)^{-1} K.
/// Mathematically identical to `fit_slt` restricted to the target task,
/// at n x n instead of 2n x 2n cost.
#[derive(Debug, Clone)]
pub struct ModifiedPriorModel {
    pub ep: EpPosterior,
    pub kernel: KernelSpec,
    pub rho: f64,
    pub training_inputs: DMatrix<f64>,
    /// (K + I)^{-1} s, reused for the test-point prior mean.
    smoother: DVector<f64>,
    gram: DMatrix<f64>,
    /// EP approximation of log p(y | s, X) directly.
    pub conditional_log_marginal: f64,
}

pub fn modified_prior_fit(
    x: &DMatrix<f64>,
    y: &[f64],
    s: &DVector<f64>,
    kernel: &KernelSpec,
    rho: f64,
    config: &EpConfig,
) -> Result<ModifiedPriorModel> {
    gpc::validate_labels(y)?;
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::RhoOutOfRange(rho));
    }
    let n = y.len();
    if x.nrows() != n || s.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "inputs {}, labels {}, soft labels {}",
            x.nrows(),
            n,
            s.len()
        )));
    }
    let mut gram = kernel.gram(x)?;
    let jitter = numerics::psd_factorize(&gram, gpc::GRAM_MAX_JITTER)?.jitter_used();
    if jitter > 0.0 {
        for i in 0..n {
            gram[(i, i)] += jitter;
        }
    }
    let mut k_plus_i = gram.clone();
    for i in 0..n {
        k_plus_i[(i, i)] += 1.0;
    }
    let factor = numerics::psd_factorize(&k_plus_i, gpc::GRAM_MAX_JITTER)?;
    let smoother = factor.solve_vec(s);
    let prior_mean = &gram * &smoother * rho;
    let half = factor.solve_lower_mat(&gram);
    let prior_cov = &gram - half.transpose() * &half * (rho * rho);

    let likelihoods: Vec<SiteLikelihood> = y
        .iter()
        .map(|&label| SiteLikelihood::Probit { label })
        .collect();
    let ep = ep::fit(&prior_mean, &prior_cov, &likelihoods, config)?;
    let conditional_log_marginal = ep.log_marginal;
    Ok(ModifiedPriorModel {
        ep,
        kernel: *kernel,
        rho,
        training_inputs: x.clone(),
        smoother,
        gram,
        conditional_log_marginal,
    })
}

impl ModifiedPriorModel {
    pub fn predict_latent(&self, x_hat: &[f64]) -> (f64, f64) {
        let z = DMatrix::from_row_slice(1, x_hat.len(), x_hat);
        self.predict_latent_batch(&z)[0]
    }

    pub fn predict_prob(&self, x_hat: &[f64]) -> f64 {
        let (mu, var) = self.predict_latent(x_hat);
        ep::predictive_probability(mu, var)
    }

    pub fn predict_latent_batch(&self, x_hat: &DMatrix<f64>) -> Vec<(f64, f64)> {
        let n = self.training_inputs.nrows();
        let m = x_hat.nrows();
        let k_cross = self
            .kernel
            .cross(&self.training_inputs, x_hat)
            .expect("test point dimension mismatch");

        // Conditioning on the soft labels modifies both the cross-covariance
        // column and the prior variance at each test point.
        let mut k_plus_i = self.gram.clone();
        for i in 0..n {
            k_plus_i[(i, i)] += 1.0;
        }
        let factor = numerics::psd_factorize(&k_plus_i, gpc::GRAM_MAX_JITTER)
            .expect("gram factorized at fit time");
        let solved = factor.solve_mat(&k_cross);
        let k_mod = &k_cross - &self.gram * &solved * (self.rho * self.rho);

        let mut prior_var = Vec::with_capacity(m);
        let mut prior_mean = Vec::with_capacity(m);
        for j in 0..m {
            let row: Vec<f64> = x_hat.row(j).iter().copied().collect();
            let deflation: f64 = (0..n).map(|i| k_cross[(i, j)] * solved[(i, j)]).sum();
            prior_var
                .push((self.kernel.eval_diag(&row) - self.rho * self.rho * deflation).max(0.0));
            let mean: f64 = (0..n).map(|i| k_cross[(i, j)] * self.smoother[i]).sum();
            prior_mean.push(self.rho * mean);
        }
        self.ep.predict_latent_batch(&k_mod, &prior_var, &prior_mean)
    }

    pub fn predict_prob_batch(&self, x_hat: &DMatrix<f64>) -> Vec<f64> {
        self.predict_latent_batch(x_hat)
            .into_iter()
            .map(|(mu, var)| ep::predictive_probability(mu, var))
            .collect()
    }

    /// Prior mean at a test point, rho k_X(x)^T (K + I)^{-1} s.
    pub fn prior_mean_at(&self, x_hat: &[f64]) -> f64 {
        let z = DMatrix::from_row_slice(1, x_hat.len(), x_hat);
        let k_col = self
            .kernel
            .cross(&self.training_inputs, &z)
            .expect("test point dimension mismatch");
        let k_vec = DVector::from_column_slice(k_col.as_slice());
        self.rho * k_vec.dot(&self.smoother)
    }
}

/// Serialized form of a fitted model: version, hyperparameters, soft labels,
/// site parameters, and training inputs, all at full f64 precision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SltModelRecord {
    pub format_version: u32,
    pub kernel: KernelSpec,
    pub rho: f64,
    pub soft_labels: Vec<f64>,
    pub nu_tilde: Vec<f64>,
    pub tau_tilde: Vec<f64>,
    pub log_z_tilde: Vec<f64>,
    pub training_inputs: Vec<Vec<f64>>,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

impl SltModel {
    pub fn to_record(&self) -> SltModelRecord {
        SltModelRecord {
            format_version: MODEL_FORMAT_VERSION,
            kernel: self.kernel,
            rho: self.prior.rho,
            soft_labels: self.soft_labels.iter().copied().collect(),
            nu_tilde: self.ep.sites.nu_tilde.iter().copied().collect(),
            tau_tilde: self.ep.sites.tau_tilde.iter().copied().collect(),
            log_z_tilde: self.ep.sites.log_z_tilde.iter().copied().collect(),
            training_inputs: (0..self.training_inputs.nrows())
                .map(|i| self.training_inputs.row(i).iter().copied().collect())
                .collect(),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.to_record())
            .map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<SltModel> {
        let json = std::fs::read_to_string(path)?;
        let record: SltModelRecord = serde_json::from_str(&json)
            .map_err(|e| Error::Config(format!("model file parse failed: {e}")))?;
        if record.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model format version {}",
                record.format_version
            )));
        }
        let n = record.training_inputs.len();
        let d = record.training_inputs.first().map_or(0, |r| r.len());
        let x = DMatrix::from_fn(n, d, |i, j| record.training_inputs[i][j]);
        let s = DVector::from_vec(record.soft_labels.clone());
        let mut gram = record.kernel.gram(&x)?;
        let jitter = numerics::psd_factorize(&gram, gpc::GRAM_MAX_JITTER)?.jitter_used();
        if jitter > 0.0 {
            for i in 0..n {
                gram[(i, i)] += jitter;
            }
        }
        let prior = build_joint_prior(&gram, record.rho)?;
        let sites = SiteState {
            nu_tilde: DVector::from_vec(record.nu_tilde.clone()),
            tau_tilde: DVector::from_vec(record.tau_tilde.clone()),
            log_z_tilde: DVector::from_vec(record.log_z_tilde.clone()),
        };
        let ep = ep::refit_from_sites(&DVector::zeros(2 * n), &prior.joint_cov, sites)?;
        let joint_log_marginal = ep.log_marginal;
        let conditional_log_marginal = joint_log_marginal - soft_label_log_marginal(&gram, &s)?;
        Ok(SltModel {
            prior,
            soft_labels: s,
            ep,
            kernel: record.kernel,
            training_inputs: x,
            joint_log_marginal,
            conditional_log_marginal,
        })
    }
}
