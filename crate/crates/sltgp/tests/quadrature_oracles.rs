//! Cross-checks of the EP approximations against brute-force quadrature on
//! problems small enough (n = 2, 3) for dense grids to be exact for all
//! practical purposes. Fixtures are fixed by hand, not seeded.

mod common;

use common::{conditional_prior, probit_gaussian_quadrature};
use nalgebra::{DMatrix, DVector};
use sltgp::ep::EpConfig;
use sltgp::gpc::fit_gpc;
use sltgp::kernels::KernelSpec;
use sltgp::slt::{fit_slt, modified_prior_fit};

const MEAN_TOL: f64 = 0.05;
const LOG_Z_TOL: f64 = 1e-2;

struct GpcCase {
    x: DMatrix<f64>,
    y: Vec<f64>,
    kernel: KernelSpec,
}

fn gpc_cases() -> Vec<GpcCase> {
    vec![
        GpcCase {
            x: DMatrix::from_row_slice(2, 1, &[0.3, -0.4]),
            y: vec![1.0, -1.0],
            kernel: KernelSpec::rbf(0.0, 0.0),
        },
        GpcCase {
            x: DMatrix::from_row_slice(3, 1, &[0.2, 1.1, -0.7]),
            y: vec![1.0, -1.0, 1.0],
            kernel: KernelSpec::rbf(1.3_f64.ln(), 1.5_f64.ln()),
        },
        GpcCase {
            x: DMatrix::from_row_slice(3, 2, &[0.5, -0.2, 1.4, 0.9, -1.1, 0.3]),
            y: vec![-1.0, 1.0, 1.0],
            // RBF keeps the Gram full rank; a linear kernel on 3 points in
            // 2-D would make the reference Gaussian degenerate.
            kernel: KernelSpec::rbf(0.8_f64.ln(), 0.5_f64.ln()),
        },
    ]
}

#[test]
fn gpc_posterior_matches_dense_quadrature() {
    for (case_idx, case) in gpc_cases().iter().enumerate() {
        let n = case.y.len();
        let post = fit_gpc(&case.x, &case.y, &case.kernel, &EpConfig::default()).unwrap();
        let k = case.kernel.gram(&case.x).unwrap();
        let points = if n == 2 { 241 } else { 121 };
        let reference =
            probit_gaussian_quadrature(&DVector::zeros(n), &k, &case.y, points, 7.0);
        for j in 0..n {
            assert!(
                (post.ep.mean[j] - reference.means[j]).abs() < MEAN_TOL,
                "case {case_idx} mean {j}: EP {} vs quadrature {}",
                post.ep.mean[j],
                reference.means[j]
            );
        }
        assert!(
            (post.log_marginal() - reference.log_z).abs() < LOG_Z_TOL,
            "case {case_idx} log Z: EP {} vs quadrature {}",
            post.log_marginal(),
            reference.log_z
        );
    }
}

struct SltCase {
    x: DMatrix<f64>,
    y: Vec<f64>,
    s: DVector<f64>,
    rho: f64,
    kernel: KernelSpec,
}

fn slt_cases() -> Vec<SltCase> {
    vec![
        SltCase {
            x: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            y: vec![1.0, -1.0],
            s: DVector::from_row_slice(&[0.8, -0.3]),
            rho: 0.6,
            kernel: KernelSpec::rbf(0.0, 0.0),
        },
        SltCase {
            x: DMatrix::from_row_slice(3, 1, &[0.2, 1.1, -0.7]),
            y: vec![1.0, -1.0, 1.0],
            s: DVector::from_row_slice(&[1.2, -0.5, 0.4]),
            rho: 0.35,
            kernel: KernelSpec::rbf(0.0, 2.0_f64.ln()),
        },
        SltCase {
            x: DMatrix::from_row_slice(3, 1, &[-0.5, 0.4, 1.6]),
            y: vec![-1.0, 1.0, 1.0],
            s: DVector::from_row_slice(&[-0.9, 1.1, 0.2]),
            rho: 1.0,
            kernel: KernelSpec::rbf(0.5, 0.0),
        },
    ]
}

#[test]
fn slt_target_block_matches_dense_quadrature() {
    for (case_idx, case) in slt_cases().iter().enumerate() {
        let n = case.y.len();
        let model = fit_slt(
            &case.x,
            &case.y,
            &case.s,
            &case.kernel,
            case.rho,
            &EpConfig::default(),
        )
        .unwrap();
        let k = case.kernel.gram(&case.x).unwrap();
        let (prior_mean, prior_cov) = conditional_prior(&k, &case.s, case.rho);
        let points = if n == 2 { 241 } else { 121 };
        let reference =
            probit_gaussian_quadrature(&prior_mean, &prior_cov, &case.y, points, 7.0);

        let target_mean = model.target_mean();
        for j in 0..n {
            assert!(
                (target_mean[j] - reference.means[j]).abs() < MEAN_TOL,
                "case {case_idx} target mean {j}: EP {} vs quadrature {}",
                target_mean[j],
                reference.means[j]
            );
        }
        assert!(
            (model.conditional_log_marginal - reference.log_z).abs() < LOG_Z_TOL,
            "case {case_idx} conditional log Z: EP {} vs quadrature {}",
            model.conditional_log_marginal,
            reference.log_z
        );

        // The single-task modified-prior path must agree with the same
        // reference, not just with the joint fit.
        let modified = modified_prior_fit(
            &case.x,
            &case.y,
            &case.s,
            &case.kernel,
            case.rho,
            &EpConfig::default(),
        )
        .unwrap();
        for j in 0..n {
            assert!(
                (modified.ep.mean[j] - reference.means[j]).abs() < MEAN_TOL,
                "case {case_idx} modified-prior mean {j}"
            );
        }
        assert!(
            (modified.conditional_log_marginal - reference.log_z).abs() < LOG_Z_TOL,
            "case {case_idx} modified-prior conditional log Z"
        );
    }
}
