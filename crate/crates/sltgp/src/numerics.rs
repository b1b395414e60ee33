//! Shared numerical primitives: dense SPD factorization with a jitter
//! ladder, stable standard-normal functions, and a bounded 1-D minimizer.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;

/// Counter incremented by every numerical-quadrature routine in this crate.
///
/// The EP loop is analytic and must never bump it; tests assert the count is
/// unchanged across a fit.
static QUADRATURE_CALLS: AtomicU64 = AtomicU64::new(0);

pub fn quadrature_call_count() -> u64 {
    QUADRATURE_CALLS.load(Ordering::Relaxed)
}

pub fn record_quadrature_call() {
    QUADRATURE_CALLS.fetch_add(1, Ordering::Relaxed);
}

/// Cholesky-style factor of a symmetric positive definite matrix,
/// possibly regularized with a diagonal jitter.
#[derive(Debug, Clone)]
pub struct PsdFactor {
    lower: DMatrix<f64>,
    log_determinant: f64,
    jitter_used: f64,
}

impl PsdFactor {
    pub fn lower_triangular_factor(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn log_determinant(&self) -> f64 {
        self.log_determinant
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// Solves (M + jitter I) x = b.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        assert!(self.lower.solve_lower_triangular_mut(&mut x));
        assert!(self.lower.tr_solve_lower_triangular_mut(&mut x));
        x
    }

    /// Solves (M + jitter I) X = B columnwise.
    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        assert!(self.lower.solve_lower_triangular_mut(&mut x));
        assert!(self.lower.tr_solve_lower_triangular_mut(&mut x));
        x
    }

    /// Solves L X = B with the lower factor only.
    pub fn solve_lower_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        assert!(self.lower.solve_lower_triangular_mut(&mut x));
        x
    }

    /// Solves L x = b with the lower factor only.
    pub fn solve_lower_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        assert!(self.lower.solve_lower_triangular_mut(&mut x));
        x
    }
}

/// Factorizes a symmetric matrix, escalating diagonal jitter through the
/// ladder {0, 1e-10, 1e-8, ...} until the factorization succeeds.
pub fn psd_factorize(m: &DMatrix<f64>, max_jitter: f64) -> Result<PsdFactor> {
    assert_eq!(m.nrows(), m.ncols(), "psd_factorize requires a square matrix");
    let n = m.nrows();
    // Symmetrize roundoff-level asymmetry.
    let mut sym = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            sym[(i, j)] = 0.5 * (m[(i, j)] + m[(j, i)]);
        }
    }

    let mut jitter = 0.0;
    loop {
        let mut candidate = sym.clone();
        if jitter > 0.0 {
            for i in 0..n {
                candidate[(i, i)] += jitter;
            }
        }
        if let Some(chol) = Cholesky::<f64, Dyn>::new(candidate) {
            let lower = chol.unpack();
            let log_determinant = 2.0 * lower.diagonal().iter().map(|d| d.ln()).sum::<f64>();
            return Ok(PsdFactor {
                lower,
                log_determinant,
                jitter_used: jitter,
            });
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 100.0 };
        if jitter > max_jitter {
            return Err(Error::NotPositiveDefinite { max_jitter });
        }
    }
}

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z - 0.5 * LN_2PI).exp()
}

/// Standard normal CDF, clamped strictly inside (0, 1).
pub fn norm_cdf(z: f64) -> f64 {
    let p = 0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2);
    p.max(f64::MIN_POSITIVE).min(1.0 - f64::EPSILON / 2.0)
}

// Mills ratio Phi(-x)/phi(x) for x > 0 via the Laplace continued fraction
// 1/(x + 1/(x + 2/(x + 3/...))). Accurate to machine precision for x >= 5.
fn mills_ratio_cf(x: f64) -> f64 {
    let mut d = x;
    for k in (1..=48u32).rev() {
        d = x + f64::from(k) / d;
    }
    1.0 / d
}

const LOG_CDF_SWITCH: f64 = -6.0;

/// log Phi(z), finite for every representable z. The far left tail goes
/// through the Mills-ratio continued fraction instead of log(norm_cdf(z)).
pub fn log_norm_cdf(z: f64) -> f64 {
    if z >= LOG_CDF_SWITCH {
        norm_cdf(z).ln()
    } else {
        let x = -z;
        -0.5 * z * z - 0.5 * LN_2PI + mills_ratio_cf(x).ln()
    }
}

/// The ratio phi(z)/Phi(z) used in probit moment matching; stable for
/// arbitrarily negative z.
pub fn norm_pdf_cdf_ratio(z: f64) -> f64 {
    if z >= LOG_CDF_SWITCH {
        norm_pdf(z) / norm_cdf(z)
    } else {
        1.0 / mills_ratio_cf(-z)
    }
}

/// Bounded derivative-free 1-D minimization: a 128-point scan over
/// (lower, upper] followed by golden-section refinement of the best cell.
pub fn minimize_1d<F: FnMut(f64) -> f64>(
    mut f: F,
    lower: f64,
    upper: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    if lower >= upper {
        return Err(Error::InvalidBracket { lower, upper });
    }
    const GRID: usize = 128;
    let step = (upper - lower) / GRID as f64;
    let mut best_i = 1usize;
    let mut best_x = lower + step;
    let mut best_f = f64::INFINITY;
    for i in 1..=GRID {
        let x = lower + i as f64 * step;
        let v = f(x);
        if v < best_f {
            best_f = v;
            best_x = x;
            best_i = i;
        }
    }
    let mut a = if best_i > 1 { lower + (best_i - 1) as f64 * step } else { lower };
    let mut b = lower + ((best_i + 1).min(GRID)) as f64 * step;

    let invphi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - invphi * (b - a);
    let mut d = a + invphi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = f(d);
        }
    }
    let (mut xm, mut fm) = if fc <= fd { (c, fc) } else { (d, fd) };
    if best_f < fm {
        xm = best_x;
        fm = best_f;
    }
    Ok((xm, fm))
}
