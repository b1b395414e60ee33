//! Brute-force quadrature reference shared by the oracle and acceptance
//! tests. Everything here is deliberately independent of the library's own
//! linear algebra helpers: plain nalgebra Cholesky, trapezoid rule, nothing
//! reused from the code under test except the scalar normal CDF (which has
//! its own reference tests).

use nalgebra::{Cholesky, DMatrix, DVector};

pub struct QuadReference {
    pub log_z: f64,
    pub means: Vec<f64>,
}

/// Dense trapezoid quadrature of
///   Z = integral of prod_i Phi(y_i f_i) * N(f | mean, cov) df
/// together with the posterior means E[f_j]. Each axis is sampled at
/// `points` nodes across mean_j +/- half_sigmas * sqrt(cov_jj). Intended for
/// n <= 3 only.
pub fn probit_gaussian_quadrature(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    y: &[f64],
    points: usize,
    half_sigmas: f64,
) -> QuadReference {
    let n = y.len();
    assert!(n <= 3, "dense quadrature is exponential in n");
    assert!(points >= 3);

    let chol = Cholesky::new(cov.clone()).expect("reference covariance not PD");
    let log_det = 2.0 * (0..n).map(|i| chol.l()[(i, i)].ln()).sum::<f64>();
    let log_norm = -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);

    let mut lo = vec![0.0; n];
    let mut step = vec![0.0; n];
    for j in 0..n {
        let half = half_sigmas * cov[(j, j)].sqrt();
        lo[j] = mean[j] - half;
        step[j] = 2.0 * half / (points - 1) as f64;
    }

    let mut z = 0.0;
    let mut moments = vec![0.0; n];
    let mut idx = vec![0usize; n];
    let mut f = DVector::zeros(n);
    loop {
        let mut weight = 1.0;
        for j in 0..n {
            f[j] = lo[j] + idx[j] as f64 * step[j];
            if idx[j] == 0 || idx[j] == points - 1 {
                weight *= 0.5;
            }
        }
        let centered = &f - mean;
        let solved = chol.solve(&centered);
        let mut log_integrand = log_norm - 0.5 * centered.dot(&solved);
        for i in 0..n {
            log_integrand += sltgp::numerics::log_norm_cdf(y[i] * f[i]);
        }
        let v = weight * log_integrand.exp();
        z += v;
        for j in 0..n {
            moments[j] += v * f[j];
        }

        // mixed-radix counter over the grid
        let mut carry = 0;
        loop {
            idx[carry] += 1;
            if idx[carry] < points {
                break;
            }
            idx[carry] = 0;
            carry += 1;
            if carry == n {
                let cell: f64 = step.iter().product();
                return QuadReference {
                    log_z: (z * cell).ln(),
                    means: moments.iter().map(|m| m / z).collect(),
                };
            }
        }
    }
}

/// Conditional prior of the target latents given soft labels, computed by
/// textbook Gaussian conditioning on the joint of (f_T, s) where
/// Cov(f_T) = K, Cov(s) = K + I, Cov(f_T, s) = rho K.
pub fn conditional_prior(
    k: &DMatrix<f64>,
    s: &DVector<f64>,
    rho: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = k.nrows();
    let k_plus_i = k + DMatrix::identity(n, n);
    let inv = k_plus_i.try_inverse().expect("K + I not invertible");
    let mean = rho * k * &inv * s;
    let cov = k - rho * rho * k * &inv * k;
    (mean, cov)
}
