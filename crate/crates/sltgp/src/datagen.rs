//! Seeded dataset generators for the synthetic benchmarks plus generic CSV
//! ingestion.
//!
//! Reproducibility contract: given the same (generator, seed) the output is
//! bit-identical across runs, platforms, and thread counts. To get that we
//! use ChaCha8 (a portable counter-based stream cipher RNG) with one fixed
//! substream per dataset component, and sample Gaussians by inverse-CDF
//! rather than rejection methods, so the number of raw draws consumed per
//! variate is always exactly one.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics;
use crate::{Error, Result};

pub const DEFAULT_TRAIN: usize = 200;
pub const DEFAULT_TEST: usize = 1000;

// Substream ids. Every random component of a dataset draws from its own
// stream so that, e.g., changing how many noise variates are consumed can
// never shift the input draws.
const STREAM_ALPHA: u64 = 0;
const STREAM_ALPHA_STAR: u64 = 1;
const STREAM_INPUTS: u64 = 2;
const STREAM_PRIVILEGED: u64 = 3;
const STREAM_LATENT: u64 = 4;
const STREAM_NOISE: u64 = 5;
const STREAM_SPLIT: u64 = 6;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform in (0, 1), never exactly 0 or 1: top 53 bits of the draw, offset
/// by half an ulp. Safe to feed straight into the inverse normal CDF.
fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

fn uniform_range(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform01(rng)
}

/// Inverse standard normal CDF: Acklam's rational approximation followed by
/// one Halley refinement step, giving close to full double precision.
pub fn inverse_norm_cdf(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "inverse_norm_cdf domain: {p}");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    let e = numerics::norm_cdf(x) - p;
    let u = e / numerics::norm_pdf(x);
    x - u / (1.0 + x * u / 2.0)
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    inverse_norm_cdf(uniform01(rng))
}

fn normal_matrix_from(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // Row-major fill so that adding columns never reshuffles earlier rows.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = standard_normal(rng);
        }
    }
    m
}

fn normal_vector_from(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| standard_normal(rng))
}

fn uniform_matrix_from(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = uniform_range(rng, lo, hi);
        }
    }
    m
}

fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Uniform draw of a size-k subset of {0, ..., d-1}, returned sorted.
fn random_subset(rng: &mut ChaCha8Rng, d: usize, k: usize) -> Vec<usize> {
    let mut chosen = BTreeSet::new();
    while chosen.len() < k {
        chosen.insert((rng.next_u64() % d as u64) as usize);
    }
    chosen.into_iter().collect()
}

/// Joint GP sample over the rows of `x` with covariance `amplitude *
/// exp(-||x - x'||^2 / 2)`: one draw shared by whoever splits it afterwards.
fn gp_sample(x: &DMatrix<f64>, amplitude: f64, rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
    let n = x.nrows();
    let mut k0 = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut sq = 0.0;
            for c in 0..x.ncols() {
                let diff = x[(i, c)] - x[(j, c)];
                sq += diff * diff;
            }
            let v = amplitude * (-sq / 2.0).exp();
            k0[(i, j)] = v;
            k0[(j, i)] = v;
        }
    }
    // Unit-amplitude jitter scale keeps the ladder meaningful for amp 10.
    let factor = numerics::psd_factorize(&k0, 1e-4 * amplitude.max(1.0))?;
    let z = normal_vector_from(rng, n);
    Ok(factor.lower_triangular_factor() * z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    CleanSoftLabel,
    CleanFeature,
    RelevantFeature,
    IndependentFeature,
    LatentGp,
    NoiseVariance,
}

impl GeneratorKind {
    pub const ALL: [GeneratorKind; 6] = [
        GeneratorKind::CleanSoftLabel,
        GeneratorKind::CleanFeature,
        GeneratorKind::RelevantFeature,
        GeneratorKind::IndependentFeature,
        GeneratorKind::LatentGp,
        GeneratorKind::NoiseVariance,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            GeneratorKind::CleanSoftLabel => "clean_soft_label",
            GeneratorKind::CleanFeature => "clean_feature",
            GeneratorKind::RelevantFeature => "relevant_feature",
            GeneratorKind::IndependentFeature => "independent_feature",
            GeneratorKind::LatentGp => "latent_gp",
            GeneratorKind::NoiseVariance => "noise_variance",
        }
    }
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GeneratorKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownGenerator(s.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct PrivilegedDataset {
    pub train_inputs: DMatrix<f64>,
    pub train_privileged: DMatrix<f64>,
    pub train_labels: Vec<f64>,
    pub test_inputs: DMatrix<f64>,
    pub test_privileged: DMatrix<f64>,
    pub test_labels: Vec<f64>,
    pub generator_name: String,
    pub seed: u64,
}

impl PrivilegedDataset {
    pub fn n_train(&self) -> usize {
        self.train_labels.len()
    }

    pub fn n_test(&self) -> usize {
        self.test_labels.len()
    }

    fn validate(&self) {
        assert_eq!(self.train_inputs.nrows(), self.train_labels.len());
        assert_eq!(self.train_privileged.nrows(), self.train_labels.len());
        assert_eq!(self.test_inputs.nrows(), self.test_labels.len());
        assert_eq!(self.test_privileged.nrows(), self.test_labels.len());
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        assert!(finite(&self.train_inputs) && finite(&self.test_inputs));
        assert!(finite(&self.train_privileged) && finite(&self.test_privileged));
        assert!(self
            .train_labels
            .iter()
            .chain(self.test_labels.iter())
            .all(|&y| y == 1.0 || y == -1.0));
    }
}

/// All generators draw the full train+test pool in one pass (train rows
/// first) so the two splits come from the same process; alpha vectors and GP
/// latents are drawn once per dataset and shared across splits.
struct Pool {
    inputs: DMatrix<f64>,
    privileged: DMatrix<f64>,
    labels: Vec<f64>,
}

fn split_pool(pool: Pool, n_train: usize, kind: &str, seed: u64) -> PrivilegedDataset {
    let n_total = pool.labels.len();
    let ds = PrivilegedDataset {
        train_inputs: pool.inputs.rows(0, n_train).clone_owned(),
        train_privileged: pool.privileged.rows(0, n_train).clone_owned(),
        train_labels: pool.labels[..n_train].to_vec(),
        test_inputs: pool.inputs.rows(n_train, n_total - n_train).clone_owned(),
        test_privileged: pool.privileged.rows(n_train, n_total - n_train).clone_owned(),
        test_labels: pool.labels[n_train..].to_vec(),
        generator_name: kind.to_string(),
        seed,
    };
    ds.validate();
    ds
}

const D_INPUT: usize = 50;
const D_RELEVANT: usize = 3;
const FIXED_SUBSET: [usize; 3] = [0, 1, 2];

fn clean_soft_label_pool(seed: u64, n: usize) -> Pool {
    let alpha = normal_vector_from(&mut stream_rng(seed, STREAM_ALPHA), D_INPUT);
    let inputs = normal_matrix_from(&mut stream_rng(seed, STREAM_INPUTS), n, D_INPUT);
    let mut noise = stream_rng(seed, STREAM_NOISE);
    let mut privileged = DMatrix::zeros(n, 1);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let x_star: f64 = (0..D_INPUT).map(|j| alpha[j] * inputs[(i, j)]).sum();
        privileged[(i, 0)] = x_star;
        labels.push(sign(x_star + standard_normal(&mut noise)));
    }
    Pool {
        inputs,
        privileged,
        labels,
    }
}

fn clean_feature_pool(seed: u64, n: usize) -> Pool {
    let alpha = normal_vector_from(&mut stream_rng(seed, STREAM_ALPHA), D_INPUT);
    let privileged = normal_matrix_from(&mut stream_rng(seed, STREAM_PRIVILEGED), n, D_INPUT);
    let contamination = normal_matrix_from(&mut stream_rng(seed, STREAM_NOISE), n, D_INPUT);
    let inputs = &privileged + &contamination;
    let labels = (0..n)
        .map(|i| {
            let score: f64 = (0..D_INPUT).map(|j| alpha[j] * privileged[(i, j)]).sum();
            sign(score)
        })
        .collect();
    Pool {
        inputs,
        privileged,
        labels,
    }
}

fn relevant_feature_pool(seed: u64, n: usize) -> Pool {
    let alpha_star = normal_vector_from(&mut stream_rng(seed, STREAM_ALPHA_STAR), D_RELEVANT);
    let inputs = normal_matrix_from(&mut stream_rng(seed, STREAM_INPUTS), n, D_INPUT);
    let mut privileged = DMatrix::zeros(n, D_RELEVANT);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut score = 0.0;
        for (j, &col) in FIXED_SUBSET.iter().enumerate() {
            privileged[(i, j)] = inputs[(i, col)];
            score += alpha_star[j] * inputs[(i, col)];
        }
        labels.push(sign(score));
    }
    Pool {
        inputs,
        privileged,
        labels,
    }
}

fn independent_feature_pool(seed: u64, n: usize) -> Pool {
    let alpha_star = normal_vector_from(&mut stream_rng(seed, STREAM_ALPHA_STAR), D_RELEVANT);
    let inputs = normal_matrix_from(&mut stream_rng(seed, STREAM_INPUTS), n, D_INPUT);
    let mut subsets = stream_rng(seed, STREAM_PRIVILEGED);
    let mut privileged = DMatrix::zeros(n, D_RELEVANT);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let cols = random_subset(&mut subsets, D_INPUT, D_RELEVANT);
        let mut score = 0.0;
        for (j, &col) in cols.iter().enumerate() {
            privileged[(i, j)] = inputs[(i, col)];
            score += alpha_star[j] * inputs[(i, col)];
        }
        labels.push(sign(score));
    }
    Pool {
        inputs,
        privileged,
        labels,
    }
}

fn latent_gp_pool(seed: u64, n: usize) -> Result<Pool> {
    let inputs = uniform_matrix_from(&mut stream_rng(seed, STREAM_INPUTS), n, 2, 0.0, 10.0);
    let x_star = gp_sample(&inputs, 10.0, &mut stream_rng(seed, STREAM_LATENT))?;
    let mut noise = stream_rng(seed, STREAM_NOISE);
    let mut privileged = DMatrix::zeros(n, 1);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        privileged[(i, 0)] = x_star[i];
        labels.push(sign(x_star[i] + standard_normal(&mut noise)));
    }
    Ok(Pool {
        inputs,
        privileged,
        labels,
    })
}

/// Internals kept separate so the heteroscedastic-noise property (sign flips
/// concentrate where exp(g) is large) is testable against f and g directly.
fn noise_variance_parts(
    seed: u64,
    n: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>, DVector<f64>, Vec<f64>)> {
    let inputs = uniform_matrix_from(&mut stream_rng(seed, STREAM_INPUTS), n, 2, 0.0, 10.0);
    let privileged =
        uniform_matrix_from(&mut stream_rng(seed, STREAM_PRIVILEGED), n, 2, 0.0, 10.0);
    let mut latent = stream_rng(seed, STREAM_LATENT);
    let f = gp_sample(&inputs, 10.0, &mut latent)?;
    let g = gp_sample(&privileged, 10.0, &mut latent)?;
    let mut noise = stream_rng(seed, STREAM_NOISE);
    let labels = (0..n)
        .map(|i| sign(f[i] + (g[i] / 2.0).exp() * standard_normal(&mut noise)))
        .collect();
    Ok((inputs, privileged, f, g, labels))
}

fn noise_variance_pool(seed: u64, n: usize) -> Result<Pool> {
    let (inputs, privileged, _, _, labels) = noise_variance_parts(seed, n)?;
    Ok(Pool {
        inputs,
        privileged,
        labels,
    })
}

pub fn generate(kind: GeneratorKind, seed: u64) -> Result<PrivilegedDataset> {
    generate_with_sizes(kind, seed, DEFAULT_TRAIN, DEFAULT_TEST)
}

pub fn generate_named(name: &str, seed: u64) -> Result<PrivilegedDataset> {
    generate(name.parse()?, seed)
}

pub fn generate_with_sizes(
    kind: GeneratorKind,
    seed: u64,
    n_train: usize,
    n_test: usize,
) -> Result<PrivilegedDataset> {
    assert!(n_train >= 1);
    let n = n_train + n_test;
    let pool = match kind {
        GeneratorKind::CleanSoftLabel => clean_soft_label_pool(seed, n),
        GeneratorKind::CleanFeature => clean_feature_pool(seed, n),
        GeneratorKind::RelevantFeature => relevant_feature_pool(seed, n),
        GeneratorKind::IndependentFeature => independent_feature_pool(seed, n),
        GeneratorKind::LatentGp => latent_gp_pool(seed, n)?,
        GeneratorKind::NoiseVariance => noise_variance_pool(seed, n)?,
    };
    Ok(split_pool(pool, n_train, kind.name(), seed))
}

/// Internals of the noise-rate sweep generator, exposing the clean latent f*
/// and the pure-noise g* so their mixing can be checked.
fn rho_sweep_parts(
    r: f64,
    seed: u64,
    n: usize,
) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>, DMatrix<f64>, Vec<f64>)> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::ROutOfRange(r));
    }
    let inputs = uniform_matrix_from(&mut stream_rng(seed, STREAM_INPUTS), n, 2, 0.0, 10.0);
    let mut latent = stream_rng(seed, STREAM_LATENT);
    // f* ~ N(0, 10 K0) with unit-amplitude k0; g* ~ N(0, 10) iid.
    let f_star = gp_sample(&inputs, 1.0, &mut latent)?.map(|v| 10.0_f64.sqrt() * v);
    let g_star = normal_vector_from(&mut latent, n).map(|v| 10.0_f64.sqrt() * v);
    let mut noise = stream_rng(seed, STREAM_NOISE);
    let mut privileged = DMatrix::zeros(n, 1);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        privileged[(i, 0)] = (1.0 - r) * f_star[i] + r * g_star[i];
        labels.push(sign(f_star[i] + standard_normal(&mut noise)));
    }
    Ok((inputs, f_star, g_star, privileged, labels))
}

pub fn generate_rho_sweep(
    r: f64,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<PrivilegedDataset> {
    let n = n_train + n_test;
    let (inputs, _, _, privileged, labels) = rho_sweep_parts(r, seed, n)?;
    Ok(split_pool(
        Pool {
            inputs,
            privileged,
            labels,
        },
        n_train,
        "rho_sweep",
        seed,
    ))
}

/// How the two raw label values were mapped onto -1/+1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMapping {
    pub negative: String,
    pub positive: String,
}

#[derive(Debug, Clone)]
pub struct CsvSpec {
    pub path: PathBuf,
    pub input_columns: Vec<String>,
    pub privileged_columns: Vec<String>,
    pub label_column: String,
    pub train_fraction: f64,
    /// Equalize positive/negative counts within each split.
    pub balance_classes: bool,
    pub seed: u64,
}

fn fisher_yates(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..indices.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        indices.swap(i, j);
    }
}

pub fn load_csv(spec: &CsvSpec) -> Result<(PrivilegedDataset, LabelMapping)> {
    if !(0.0..=1.0).contains(&spec.train_fraction) {
        return Err(Error::Config(format!(
            "train_fraction {} outside [0, 1]",
            spec.train_fraction
        )));
    }
    for c in &spec.privileged_columns {
        if spec.input_columns.contains(c) {
            return Err(Error::ColumnOverlap(c.clone()));
        }
    }
    if spec.input_columns.contains(&spec.label_column)
        || spec.privileged_columns.contains(&spec.label_column)
    {
        return Err(Error::ColumnOverlap(spec.label_column.clone()));
    }

    let mut reader = csv::Reader::from_path(&spec.path)?;
    let headers = reader.headers()?.clone();
    let column_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::ParseError {
                row: 0,
                column: name.to_string(),
                message: "column not found in header".to_string(),
            })
    };
    let input_idx: Vec<usize> = spec
        .input_columns
        .iter()
        .map(|c| column_index(c))
        .collect::<Result<_>>()?;
    let priv_idx: Vec<usize> = spec
        .privileged_columns
        .iter()
        .map(|c| column_index(c))
        .collect::<Result<_>>()?;
    let label_idx = column_index(&spec.label_column)?;

    let mut inputs_rows: Vec<Vec<f64>> = Vec::new();
    let mut priv_rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_no + 1; // 1-based data row for error messages
        let parse_cell = |idx: usize| -> Result<f64> {
            let cell = record.get(idx).unwrap_or("");
            cell.trim().parse::<f64>().map_err(|e| Error::ParseError {
                row,
                column: headers[idx].to_string(),
                message: e.to_string(),
            })
        };
        inputs_rows.push(input_idx.iter().map(|&i| parse_cell(i)).collect::<Result<_>>()?);
        priv_rows.push(priv_idx.iter().map(|&i| parse_cell(i)).collect::<Result<_>>()?);
        raw_labels.push(record.get(label_idx).unwrap_or("").trim().to_string());
    }
    if raw_labels.is_empty() {
        return Err(Error::SingleClass("file contains no data rows".to_string()));
    }

    let mut classes: Vec<String> = raw_labels.clone();
    classes.sort();
    classes.dedup();
    if classes.len() != 2 {
        return Err(Error::SingleClass(format!(
            "expected exactly 2 label classes, found {}: {:?}",
            classes.len(),
            classes
        )));
    }
    // Numeric order when both values parse as numbers, lexicographic
    // otherwise; the smaller value maps to -1.
    let numeric: Option<(f64, f64)> = match (classes[0].parse::<f64>(), classes[1].parse::<f64>()) {
        (Ok(a), Ok(b)) => Some((a, b)),
        _ => None,
    };
    if let Some((a, b)) = numeric {
        if a > b {
            classes.swap(0, 1);
        }
    }
    let mapping = LabelMapping {
        negative: classes[0].clone(),
        positive: classes[1].clone(),
    };
    let labels: Vec<f64> = raw_labels
        .iter()
        .map(|l| if *l == mapping.positive { 1.0 } else { -1.0 })
        .collect();

    let n = labels.len();
    let mut rng = stream_rng(spec.seed, STREAM_SPLIT);
    let (train_idx, test_idx) = if spec.balance_classes {
        let mut pos: Vec<usize> = (0..n).filter(|&i| labels[i] > 0.0).collect();
        let mut neg: Vec<usize> = (0..n).filter(|&i| labels[i] < 0.0).collect();
        fisher_yates(&mut pos, &mut rng);
        fisher_yates(&mut neg, &mut rng);
        let per_class = pos.len().min(neg.len());
        let train_per_class = (spec.train_fraction * per_class as f64).round() as usize;
        let mut train = Vec::new();
        let mut test = Vec::new();
        for class in [&pos, &neg] {
            train.extend_from_slice(&class[..train_per_class]);
            test.extend_from_slice(&class[train_per_class..per_class]);
        }
        (train, test)
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        fisher_yates(&mut order, &mut rng);
        let n_train = (spec.train_fraction * n as f64).round() as usize;
        (order[..n_train].to_vec(), order[n_train..].to_vec())
    };

    let gather_matrix = |rows: &[Vec<f64>], idx: &[usize], width: usize| -> DMatrix<f64> {
        let mut m = DMatrix::zeros(idx.len(), width);
        for (out_i, &src) in idx.iter().enumerate() {
            for j in 0..width {
                m[(out_i, j)] = rows[src][j];
            }
        }
        m
    };
    let gather_labels =
        |idx: &[usize]| -> Vec<f64> { idx.iter().map(|&i| labels[i]).collect() };

    let ds = PrivilegedDataset {
        train_inputs: gather_matrix(&inputs_rows, &train_idx, input_idx.len()),
        train_privileged: gather_matrix(&priv_rows, &train_idx, priv_idx.len()),
        train_labels: gather_labels(&train_idx),
        test_inputs: gather_matrix(&inputs_rows, &test_idx, input_idx.len()),
        test_privileged: gather_matrix(&priv_rows, &test_idx, priv_idx.len()),
        test_labels: gather_labels(&test_idx),
        generator_name: format!("csv:{}", spec.path.display()),
        seed: spec.seed,
    };
    ds.validate();
    Ok((ds, mapping))
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMetadata {
    generator: String,
    seed: u64,
    n_train: usize,
    n_test: usize,
    input_dim: usize,
    privileged_dim: usize,
}

/// Dump a dataset as train.csv / test.csv (columns input_*, priv_*, label)
/// plus metadata.json, into `dir`.
pub fn save_csv(ds: &PrivilegedDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let write_split = |name: &str,
                       inputs: &DMatrix<f64>,
                       privileged: &DMatrix<f64>,
                       labels: &[f64]|
     -> Result<()> {
        let mut w = csv::Writer::from_path(dir.join(name))?;
        let mut header = Vec::new();
        for j in 0..inputs.ncols() {
            header.push(format!("input_{j}"));
        }
        for j in 0..privileged.ncols() {
            header.push(format!("priv_{j}"));
        }
        header.push("label".to_string());
        w.write_record(&header)?;
        for i in 0..labels.len() {
            let mut row = Vec::new();
            for j in 0..inputs.ncols() {
                row.push(format!("{}", inputs[(i, j)]));
            }
            for j in 0..privileged.ncols() {
                row.push(format!("{}", privileged[(i, j)]));
            }
            row.push(format!("{}", labels[i] as i64));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    };
    write_split("train.csv", &ds.train_inputs, &ds.train_privileged, &ds.train_labels)?;
    write_split("test.csv", &ds.test_inputs, &ds.test_privileged, &ds.test_labels)?;
    let meta = DatasetMetadata {
        generator: ds.generator_name.clone(),
        seed: ds.seed,
        n_train: ds.n_train(),
        n_test: ds.n_test(),
        input_dim: ds.train_inputs.ncols(),
        privileged_dim: ds.train_privileged.ncols(),
    };
    std::fs::write(dir.join("metadata.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Small seeded helpers shared by tests in other modules.
pub mod testing {
    use super::*;

    /// n x d matrix of standard normals from the portable RNG.
    pub fn normal_matrix(n: usize, d: usize, seed: u64, stream: u64) -> DMatrix<f64> {
        normal_matrix_from(&mut stream_rng(seed, stream), n, d)
    }
}
