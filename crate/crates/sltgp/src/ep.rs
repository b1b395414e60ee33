//! Expectation propagation over a Gaussian prior with a per-point mixture of
//! probit and exactly-Gaussian likelihood factors.
//!
//! Gaussian factors are representable without approximation, so their sites
//! are installed once and never revisited; probit sites iterate with damped
//! natural-parameter updates until the sweep-to-sweep change falls below
//! tolerance. All updates are analytic (no quadrature anywhere in the loop).

use nalgebra::{DMatrix, DVector};

use crate::numerics::{self, PsdFactor};
use crate::Result;

#[derive(Debug, Clone, Copy)]
pub struct EpConfig {
    /// Sweep convergence threshold on max |change| of site natural parameters.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Fraction of the step toward the moment-matched site taken per update.
    pub damping: f64,
}

impl Default for EpConfig {
    fn default() -> Self {
        EpConfig {
            tol: 1e-6,
            max_sweeps: 100,
            damping: 0.8,
        }
    }
}

/// One likelihood factor attached to one latent coordinate.
#[derive(Debug, Clone, Copy)]
pub enum SiteLikelihood {
    /// Probit factor Phi(y f) with y in {+1, -1}.
    Probit { label: f64 },
    /// Exact Gaussian factor N(observation | f, noise_variance); frozen.
    Gaussian { observation: f64, noise_variance: f64 },
}

/// EP site natural parameters and per-site log normalizers.
#[derive(Debug, Clone)]
pub struct SiteState {
    pub nu_tilde: DVector<f64>,
    pub tau_tilde: DVector<f64>,
    /// Tilted normalizer log Z-hat per site, from the converged cavities.
    pub log_z_tilde: DVector<f64>,
}

/// Approximate Gaussian posterior produced by EP, together with the cached
/// factor of B = I + sqrt(T) K sqrt(T) used for prediction.
#[derive(Debug, Clone)]
pub struct EpPosterior {
    pub sites: SiteState,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub b_factor: PsdFactor,
    pub log_marginal: f64,
    pub converged: bool,
    pub sweeps_used: usize,
    sqrt_tau: DVector<f64>,
    /// Representer weights: mu_hat = m(x) + k_hat^T alpha.
    alpha: DVector<f64>,
}

const B_MAX_JITTER: f64 = 1e-6;

fn refresh(
    prior_cov: &DMatrix<f64>,
    prior_mean: &DVector<f64>,
    nu: &DVector<f64>,
    tau: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>, PsdFactor, DVector<f64>)> {
    let n = prior_cov.nrows();
    let sqrt_tau = tau.map(|t| t.max(0.0).sqrt());
    // B = I + sqrt(T) K sqrt(T)
    let mut b = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] = sqrt_tau[i] * prior_cov[(i, j)] * sqrt_tau[j];
        }
        b[(i, i)] += 1.0;
    }
    let b_factor = numerics::psd_factorize(&b, B_MAX_JITTER)?;
    // Sigma = K - K sqrt(T) B^{-1} sqrt(T) K  via V = L^{-1} sqrt(T) K
    let mut dk = prior_cov.clone();
    for i in 0..n {
        for j in 0..n {
            dk[(i, j)] *= sqrt_tau[i];
        }
    }
    let v = b_factor.solve_lower_mat(&dk);
    let mut cov = prior_cov - v.transpose() * &v;
    // enforce symmetry lost to roundoff
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }
    let w = DVector::from_fn(n, |i, _| nu[i] - tau[i] * prior_mean[i]);
    let mean = prior_mean + &cov * &w;
    Ok((mean, cov, b_factor, sqrt_tau))
}

/// Tilted (cavity x probit) moments. Returns (log Z-hat, mean, variance).
fn probit_tilted_moments(label: f64, cavity_mean: f64, cavity_var: f64) -> (f64, f64, f64) {
    let denom = (1.0 + cavity_var).sqrt();
    let z = label * cavity_mean / denom;
    let log_zhat = numerics::log_norm_cdf(z);
    let ratio = numerics::norm_pdf_cdf_ratio(z);
    let mean = cavity_mean + label * cavity_var * ratio / denom;
    let var = cavity_var - cavity_var * cavity_var * ratio * (z + ratio) / (1.0 + cavity_var);
    (log_zhat, mean, var.max(1e-12))
}

pub fn fit(
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    likelihoods: &[SiteLikelihood],
    config: &EpConfig,
) -> Result<EpPosterior> {
    let n = likelihoods.len();
    assert_eq!(prior_cov.nrows(), n);
    assert_eq!(prior_mean.len(), n);

    let mut nu = DVector::zeros(n);
    let mut tau = DVector::zeros(n);
    for (i, lik) in likelihoods.iter().enumerate() {
        if let SiteLikelihood::Gaussian {
            observation,
            noise_variance,
        } = lik
        {
            tau[i] = 1.0 / noise_variance;
            nu[i] = observation / noise_variance;
        }
    }

    let (mut mean, mut cov, mut b_factor, mut sqrt_tau) =
        refresh(prior_cov, prior_mean, &nu, &tau)?;

    let mut converged = false;
    let mut sweeps_used = 0;
    for sweep in 0..config.max_sweeps {
        sweeps_used = sweep + 1;
        let mut max_delta = 0.0_f64;
        for i in 0..n {
            let label = match likelihoods[i] {
                SiteLikelihood::Probit { label } => label,
                SiteLikelihood::Gaussian { .. } => continue,
            };
            let sigma_ii = cov[(i, i)];
            if sigma_ii <= 0.0 {
                continue;
            }
            let tau_cav = 1.0 / sigma_ii - tau[i];
            if tau_cav <= 1e-12 {
                continue;
            }
            let nu_cav = mean[i] / sigma_ii - nu[i];
            let cav_var = 1.0 / tau_cav;
            let cav_mean = nu_cav * cav_var;

            let (_, t_mean, t_var) = probit_tilted_moments(label, cav_mean, cav_var);
            let tau_target = 1.0 / t_var - tau_cav;
            let nu_target = t_mean / t_var - nu_cav;

            let mut tau_new = tau[i] + config.damping * (tau_target - tau[i]);
            let mut nu_new = nu[i] + config.damping * (nu_target - nu[i]);
            if tau_new < 0.0 {
                tau_new = 0.0;
                nu_new = 0.0;
            }

            let delta_tau = tau_new - tau[i];
            let delta_nu = nu_new - nu[i];
            let denom = 1.0 + delta_tau * sigma_ii;
            if denom <= 1e-12 {
                continue;
            }
            max_delta = max_delta.max(delta_tau.abs()).max(delta_nu.abs());

            // Rank-1 downdate of Sigma and the matching mean correction.
            let c = delta_tau / denom;
            let si = cov.column(i).clone_owned();
            let delta_w = delta_nu - delta_tau * prior_mean[i];
            let coef = delta_w - c * ((mean[i] - prior_mean[i]) + delta_w * sigma_ii);
            for r in 0..n {
                mean[r] += coef * si[r];
            }
            for r in 0..n {
                let sr = si[r];
                for ccol in 0..n {
                    cov[(r, ccol)] -= c * sr * si[ccol];
                }
            }
            tau[i] = tau_new;
            nu[i] = nu_new;
        }

        let refreshed = refresh(prior_cov, prior_mean, &nu, &tau)?;
        mean = refreshed.0;
        cov = refreshed.1;
        b_factor = refreshed.2;
        sqrt_tau = refreshed.3;

        if max_delta < config.tol {
            converged = true;
            break;
        }
    }

    // Per-site tilted normalizers from the final cavities.
    let mut log_zhat = DVector::zeros(n);
    let mut site_terms = 0.0;
    for i in 0..n {
        let sigma_ii = cov[(i, i)];
        let tau_cav = (1.0 / sigma_ii - tau[i]).max(1e-12);
        let nu_cav = mean[i] / sigma_ii - nu[i];
        let cav_var = 1.0 / tau_cav;
        let cav_mean = nu_cav * cav_var;
        let lz = match likelihoods[i] {
            SiteLikelihood::Probit { label } => {
                let z = label * cav_mean / (1.0 + cav_var).sqrt();
                numerics::log_norm_cdf(z)
            }
            SiteLikelihood::Gaussian {
                observation,
                noise_variance,
            } => {
                let v = noise_variance + cav_var;
                -0.5 * ((2.0 * std::f64::consts::PI * v).ln()
                    + (observation - cav_mean) * (observation - cav_mean) / v)
            }
        };
        log_zhat[i] = lz;

        // Site contribution assembled in natural parameters; finite even for
        // sites clamped to tau = 0.
        let scale = 1.0 + tau[i] * cav_var;
        let quad = (tau[i] * cav_mean * cav_mean
            - 2.0 * cav_mean * nu[i]
            - cav_var * nu[i] * nu[i])
            / (2.0 * scale)
            + nu[i] * prior_mean[i]
            - 0.5 * tau[i] * prior_mean[i] * prior_mean[i];
        site_terms += lz + 0.5 * scale.ln() + quad;
    }
    let w = DVector::from_fn(n, |i, _| nu[i] - tau[i] * prior_mean[i]);
    let log_marginal =
        site_terms + 0.5 * w.dot(&(&mean - prior_mean)) - 0.5 * b_factor.log_determinant();

    // Representer weights: alpha = (I + T K)^{-1} w computed through B.
    let kw = prior_cov * &w;
    let dkw = DVector::from_fn(n, |i, _| sqrt_tau[i] * kw[i]);
    let solved = b_factor.solve_vec(&dkw);
    let alpha = DVector::from_fn(n, |i, _| w[i] - sqrt_tau[i] * solved[i]);

    Ok(EpPosterior {
        sites: SiteState {
            nu_tilde: nu,
            tau_tilde: tau,
            log_z_tilde: log_zhat,
        },
        mean,
        cov,
        b_factor,
        log_marginal,
        converged,
        sweeps_used,
        sqrt_tau,
        alpha,
    })
}

/// Rebuilds a posterior from stored site parameters without iterating EP.
/// The marginal-likelihood assembly reuses the stored per-site tilted
/// normalizers together with cavities recomputed from the refreshed
/// posterior, so a save/load round trip reproduces the fitted state.
pub fn refit_from_sites(
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    sites: SiteState,
) -> Result<EpPosterior> {
    let n = prior_cov.nrows();
    let (mean, cov, b_factor, sqrt_tau) =
        refresh(prior_cov, prior_mean, &sites.nu_tilde, &sites.tau_tilde)?;
    let mut site_terms = 0.0;
    for i in 0..n {
        let tau = sites.tau_tilde[i];
        let nu = sites.nu_tilde[i];
        let sigma_ii = cov[(i, i)];
        let tau_cav = (1.0 / sigma_ii - tau).max(1e-12);
        let cav_var = 1.0 / tau_cav;
        let cav_mean = (mean[i] / sigma_ii - nu) * cav_var;
        let scale = 1.0 + tau * cav_var;
        let quad = (tau * cav_mean * cav_mean - 2.0 * cav_mean * nu - cav_var * nu * nu)
            / (2.0 * scale)
            + nu * prior_mean[i]
            - 0.5 * tau * prior_mean[i] * prior_mean[i];
        site_terms += sites.log_z_tilde[i] + 0.5 * scale.ln() + quad;
    }
    let w = DVector::from_fn(n, |i, _| sites.nu_tilde[i] - sites.tau_tilde[i] * prior_mean[i]);
    let log_marginal =
        site_terms + 0.5 * w.dot(&(&mean - prior_mean)) - 0.5 * b_factor.log_determinant();
    let kw = prior_cov * &w;
    let dkw = DVector::from_fn(n, |i, _| sqrt_tau[i] * kw[i]);
    let solved = b_factor.solve_vec(&dkw);
    let alpha = DVector::from_fn(n, |i, _| w[i] - sqrt_tau[i] * solved[i]);
    Ok(EpPosterior {
        sites,
        mean,
        cov,
        b_factor,
        log_marginal,
        converged: true,
        sweeps_used: 0,
        sqrt_tau,
        alpha,
    })
}

impl EpPosterior {
    /// Predictive latent moments given the prior cross-covariance column
    /// `k_hat`, the prior variance at the test point, and the prior mean there.
    pub fn predict_latent(
        &self,
        k_hat: &DVector<f64>,
        prior_var: f64,
        prior_mean_hat: f64,
    ) -> (f64, f64) {
        let mu = prior_mean_hat + k_hat.dot(&self.alpha);
        let u = DVector::from_fn(k_hat.len(), |i, _| self.sqrt_tau[i] * k_hat[i]);
        let v = self.b_factor.solve_lower_vec(&u);
        let var = (prior_var - v.dot(&v)).max(0.0);
        (mu, var)
    }

    /// Batched version of `predict_latent`: one column of `k_hat` per point.
    pub fn predict_latent_batch(
        &self,
        k_hat: &DMatrix<f64>,
        prior_var: &[f64],
        prior_mean_hat: &[f64],
    ) -> Vec<(f64, f64)> {
        let m = k_hat.ncols();
        assert_eq!(prior_var.len(), m);
        assert_eq!(prior_mean_hat.len(), m);
        let mut u = k_hat.clone();
        for i in 0..k_hat.nrows() {
            for j in 0..m {
                u[(i, j)] *= self.sqrt_tau[i];
            }
        }
        let v = self.b_factor.solve_lower_mat(&u);
        (0..m)
            .map(|j| {
                let mu = prior_mean_hat[j] + k_hat.column(j).dot(&self.alpha);
                let var = (prior_var[j] - v.column(j).norm_squared()).max(0.0);
                (mu, var)
            })
            .collect()
    }

    /// Recomputes (mean, cov) from the stored sites; used by tests and by
    /// model deserialization.
    pub fn recompute_from_sites(
        prior_mean: &DVector<f64>,
        prior_cov: &DMatrix<f64>,
        sites: &SiteState,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (mean, cov, _, _) = refresh(prior_cov, prior_mean, &sites.nu_tilde, &sites.tau_tilde)?;
        Ok((mean, cov))
    }
}

/// Class probability Phi(mu / sqrt(1 + var)) for the probit likelihood.
pub fn predictive_probability(latent_mean: f64, latent_var: f64) -> f64 {
    numerics::norm_cdf(latent_mean / (1.0 + latent_var).sqrt())
}
