//! End-to-end acceptance suite. Each criterion prints exactly one
//! PASS/FAIL line; the test fails if any criterion fails.
//!
//! By default this runs in a reduced CI mode: 20 repeats per experiment and
//! a +/- 4 percentage-point accuracy tolerance. Set SLTGP_ACCEPTANCE_FULL=1
//! for the full protocol (100 repeats, +/- 3 pp), which takes several hours
//! on a single core.

mod common;

use common::{conditional_prior, probit_gaussian_quadrature};
use nalgebra::{DMatrix, DVector};
use sltgp::datagen::{self, GeneratorKind};
use sltgp::ep::EpConfig;
use sltgp::gpc::{extract_soft_labels, fit_gpc};
use sltgp::kernels::KernelSpec;
use sltgp::model_selection::{rho_grid, SearchConfig};
use sltgp::pacbayes;
use sltgp::runner::{
    cmd_rho_sweep, cmd_run, cmd_timing, log_log_slope, write_results_csv, DatasetSpec,
    ExperimentConfig, Method, SweepConfig, TimingConfig,
};
use sltgp::slt::{fit_slt, modified_prior_fit};

struct Mode {
    repeats: usize,
    accuracy_tol: f64,
    timing_repeats: usize,
}

fn mode() -> Mode {
    let full = std::env::var("SLTGP_ACCEPTANCE_FULL").map_or(false, |v| v == "1");
    if full {
        Mode {
            repeats: 100,
            accuracy_tol: 0.03,
            timing_repeats: 5,
        }
    } else {
        Mode {
            repeats: 20,
            accuracy_tol: 0.04,
            timing_repeats: 3,
        }
    }
}

/// Shared reduced search budget; the full derivative-free budget changes
/// the accuracies by well under a percentage point and the runtime by an
/// order of magnitude.
fn search_budget() -> SearchConfig {
    SearchConfig {
        restarts: 2,
        max_evals: 40,
        seed: 0,
        optimize_amplitude: true,
    }
}

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn report(outcome: &Outcome) {
    println!(
        "{} {} :: {}",
        if outcome.passed { "PASS" } else { "FAIL" },
        outcome.name,
        outcome.detail
    );
}

// ---------------------------------------------------------------------------
// Benchmark accuracy reproduction (GPC, SLT-GP, and the privileged-feature
// reference, against the frozen expected values below)
// ---------------------------------------------------------------------------

struct BenchmarkRow {
    kind: GeneratorKind,
    gpc: f64,
    slt: f64,
    reference: Option<f64>,
    slt_must_beat_gpc: bool,
}

fn benchmark_rows() -> Vec<BenchmarkRow> {
    vec![
        BenchmarkRow {
            kind: GeneratorKind::CleanSoftLabel,
            gpc: 0.8789,
            slt: 0.9527,
            reference: Some(0.9541),
            slt_must_beat_gpc: true,
        },
        BenchmarkRow {
            kind: GeneratorKind::CleanFeature,
            gpc: 0.6540,
            slt: 0.6999,
            reference: None,
            slt_must_beat_gpc: true,
        },
        BenchmarkRow {
            kind: GeneratorKind::RelevantFeature,
            gpc: 0.8985,
            slt: 0.9892,
            reference: Some(0.9909),
            slt_must_beat_gpc: true,
        },
        BenchmarkRow {
            kind: GeneratorKind::IndependentFeature,
            gpc: 0.5068,
            slt: 0.5095,
            reference: Some(0.9901),
            slt_must_beat_gpc: false,
        },
        BenchmarkRow {
            kind: GeneratorKind::LatentGp,
            gpc: 0.8220,
            slt: 0.8675,
            reference: None,
            slt_must_beat_gpc: true,
        },
        BenchmarkRow {
            kind: GeneratorKind::NoiseVariance,
            gpc: 0.7736,
            slt: 0.7790,
            reference: Some(0.5534),
            slt_must_beat_gpc: false,
        },
    ]
}

fn criterion_benchmarks(mode: &Mode) -> (Outcome, Outcome) {
    let mut main_ok = true;
    let mut main_detail = Vec::new();
    let mut ref_ok = true;
    let mut ref_detail = Vec::new();

    for row in benchmark_rows() {
        let config = ExperimentConfig {
            repeats: mode.repeats,
            search: search_budget(),
            ..ExperimentConfig::new(DatasetSpec::Generator(row.kind))
        };
        let run = cmd_run(&config).unwrap();
        let mean = |m: Method| {
            run.summary
                .iter()
                .find(|s| s.method == m)
                .unwrap()
                .mean_accuracy
        };
        let (gpc, slt, reference) = (
            mean(Method::Gpc),
            mean(Method::SltGp),
            mean(Method::GpcReference),
        );

        let gpc_ok = (gpc - row.gpc).abs() <= mode.accuracy_tol;
        let slt_ok = (slt - row.slt).abs() <= mode.accuracy_tol;
        let order_ok = !row.slt_must_beat_gpc || slt > gpc;
        main_ok &= gpc_ok && slt_ok && order_ok;
        main_detail.push(format!(
            "{}: gpc {:.4}/{:.4}{} slt {:.4}/{:.4}{}{}",
            row.kind.name(),
            gpc,
            row.gpc,
            if gpc_ok { "" } else { "!" },
            slt,
            row.slt,
            if slt_ok { "" } else { "!" },
            if order_ok { "" } else { " ORDER!" },
        ));

        if let Some(expected) = row.reference {
            let ok = (reference - expected).abs() <= mode.accuracy_tol;
            ref_ok &= ok;
            ref_detail.push(format!(
                "{}: {:.4}/{:.4}{}",
                row.kind.name(),
                reference,
                expected,
                if ok { "" } else { "!" },
            ));
        }
    }

    (
        Outcome {
            name: "benchmark-gpc-and-slt",
            passed: main_ok,
            detail: main_detail.join("; "),
        },
        Outcome {
            name: "benchmark-gpc-reference",
            passed: ref_ok,
            detail: ref_detail.join("; "),
        },
    )
}

// ---------------------------------------------------------------------------
// rho = 0 equivalence and path equivalence
// ---------------------------------------------------------------------------

struct SmallInstance {
    train_x: DMatrix<f64>,
    train_y: Vec<f64>,
    test_x: DMatrix<f64>,
    s: DVector<f64>,
    kernel: KernelSpec,
}

fn small_instance(index: usize) -> SmallInstance {
    let kind = GeneratorKind::ALL[index % GeneratorKind::ALL.len()];
    let n_train = 20 + 5 * (index % 7);
    let ds = datagen::generate_with_sizes(kind, 1000 + index as u64, n_train, 20).unwrap();
    let kernel = match index % 3 {
        0 => KernelSpec::linear(0.2),
        1 => KernelSpec::rbf(0.5, 0.0),
        _ => KernelSpec::rbf(0.0, 0.4),
    };
    let extractor = KernelSpec::rbf(0.0, 0.0);
    let (s, _) = extract_soft_labels(
        &ds.train_privileged,
        &ds.train_labels,
        &extractor,
        &EpConfig::default(),
    )
    .unwrap();
    SmallInstance {
        train_x: ds.train_inputs,
        train_y: ds.train_labels,
        test_x: ds.test_inputs,
        s,
        kernel,
    }
}

fn criterion_rho_zero() -> Outcome {
    let mut worst: f64 = 0.0;
    for index in 0..50 {
        let inst = small_instance(index);
        let gpc = fit_gpc(&inst.train_x, &inst.train_y, &inst.kernel, &EpConfig::default())
            .unwrap();
        let slt = fit_slt(
            &inst.train_x,
            &inst.train_y,
            &inst.s,
            &inst.kernel,
            0.0,
            &EpConfig::default(),
        )
        .unwrap();
        let p_gpc = gpc.predict_prob_batch(&inst.test_x);
        let p_slt = slt.predict_prob_batch(&inst.test_x);
        for (a, b) in p_gpc.iter().zip(&p_slt) {
            worst = worst.max((a - b).abs());
        }
    }
    Outcome {
        name: "rho-zero-equivalence",
        passed: worst < 1e-6,
        detail: format!("max |p_slt(rho=0) - p_gpc| = {worst:.3e} over 50 instances"),
    }
}

fn criterion_path_equivalence() -> Outcome {
    let mut worst_prob: f64 = 0.0;
    let mut worst_log_z: f64 = 0.0;
    let mut instances = 0;
    for index in 0..13 {
        let inst = small_instance(100 + index);
        for rho in [0.0, 0.3, 0.7, 1.0] {
            let joint = fit_slt(
                &inst.train_x,
                &inst.train_y,
                &inst.s,
                &inst.kernel,
                rho,
                &EpConfig::default(),
            )
            .unwrap();
            let modified = modified_prior_fit(
                &inst.train_x,
                &inst.train_y,
                &inst.s,
                &inst.kernel,
                rho,
                &EpConfig::default(),
            )
            .unwrap();
            let p_joint = joint.predict_prob_batch(&inst.test_x);
            let p_mod = modified.predict_prob_batch(&inst.test_x);
            for (a, b) in p_joint.iter().zip(&p_mod) {
                worst_prob = worst_prob.max((a - b).abs());
            }
            worst_log_z = worst_log_z
                .max((joint.conditional_log_marginal - modified.conditional_log_marginal).abs());
            instances += 1;
        }
    }
    Outcome {
        name: "path-equivalence",
        passed: worst_prob < 1e-5 && worst_log_z < 1e-4,
        detail: format!(
            "{instances} fits: max prob diff {worst_prob:.3e}, max log Z diff {worst_log_z:.3e}"
        ),
    }
}

// ---------------------------------------------------------------------------
// Quadrature oracle
// ---------------------------------------------------------------------------

fn criterion_quadrature() -> Outcome {
    let mut worst_mean: f64 = 0.0;
    let mut worst_log_z: f64 = 0.0;

    // GPC, n = 2 and n = 3.
    let gpc_cases: Vec<(DMatrix<f64>, Vec<f64>, KernelSpec)> = vec![
        (
            DMatrix::from_row_slice(2, 1, &[0.3, -0.4]),
            vec![1.0, -1.0],
            KernelSpec::rbf(0.0, 0.0),
        ),
        (
            DMatrix::from_row_slice(3, 1, &[0.2, 1.1, -0.7]),
            vec![1.0, -1.0, 1.0],
            KernelSpec::rbf(1.3_f64.ln(), 1.5_f64.ln()),
        ),
    ];
    for (x, y, kernel) in &gpc_cases {
        let post = fit_gpc(x, y, kernel, &EpConfig::default()).unwrap();
        let k = kernel.gram(x).unwrap();
        let points = if y.len() == 2 { 241 } else { 121 };
        let reference = probit_gaussian_quadrature(&DVector::zeros(y.len()), &k, y, points, 7.0);
        for j in 0..y.len() {
            worst_mean = worst_mean.max((post.ep.mean[j] - reference.means[j]).abs());
        }
        worst_log_z = worst_log_z.max((post.log_marginal() - reference.log_z).abs());
    }

    // SLT target block, n = 2 and n = 3.
    let slt_cases: Vec<(DMatrix<f64>, Vec<f64>, DVector<f64>, f64, KernelSpec)> = vec![
        (
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            vec![1.0, -1.0],
            DVector::from_row_slice(&[0.8, -0.3]),
            0.6,
            KernelSpec::rbf(0.0, 0.0),
        ),
        (
            DMatrix::from_row_slice(3, 1, &[0.2, 1.1, -0.7]),
            vec![1.0, -1.0, 1.0],
            DVector::from_row_slice(&[1.2, -0.5, 0.4]),
            0.35,
            KernelSpec::rbf(0.0, 2.0_f64.ln()),
        ),
    ];
    for (x, y, s, rho, kernel) in &slt_cases {
        let model = fit_slt(x, y, s, kernel, *rho, &EpConfig::default()).unwrap();
        let k = kernel.gram(x).unwrap();
        let (prior_mean, prior_cov) = conditional_prior(&k, s, *rho);
        let points = if y.len() == 2 { 241 } else { 121 };
        let reference = probit_gaussian_quadrature(&prior_mean, &prior_cov, y, points, 7.0);
        let target_mean = model.target_mean();
        for j in 0..y.len() {
            worst_mean = worst_mean.max((target_mean[j] - reference.means[j]).abs());
        }
        worst_log_z =
            worst_log_z.max((model.conditional_log_marginal - reference.log_z).abs());
    }

    Outcome {
        name: "quadrature-oracle",
        passed: worst_mean < 0.05 && worst_log_z < 1e-2,
        detail: format!(
            "max latent-mean diff {worst_mean:.3e} (tol 0.05), max log Z diff {worst_log_z:.3e} (tol 1e-2)"
        ),
    }
}

// ---------------------------------------------------------------------------
// PAC-Bayes constants and argmin invariance
// ---------------------------------------------------------------------------

fn b_grid_reference(sigma0_sq: f64) -> f64 {
    let c = pacbayes::c_threshold(sigma0_sq).unwrap();
    let lo = 1e-9_f64.ln();
    let hi = 1e6_f64.ln();
    let points = 100_000;
    let mut best = f64::INFINITY;
    for i in 0..points {
        let a = c + (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp();
        let w = a + 4.0;
        let quad = (a + 5.0) / w;
        let value = 0.5 * (2.0 * std::f64::consts::PI * w).ln() - a / (2.0 * w)
            + 4.0 * sigma0_sq * sigma0_sq * quad * quad;
        best = best.min(value);
    }
    best
}

fn criterion_pac_bayes() -> Outcome {
    let mut worst_b: f64 = 0.0;
    for sigma0_sq in [0.0, 0.05, 0.1, 0.2, 0.3, 0.45] {
        let b = pacbayes::b_constant(sigma0_sq).unwrap();
        worst_b = worst_b.max((b - b_grid_reference(sigma0_sq)).abs());
    }
    let c_exact = pacbayes::c_threshold(0.0).unwrap() == -4.0;

    // Bound-argmin must coincide with the conditional-marginal grid argmax
    // on every instance (it is also asserted inside optimize_rho_by_bound).
    let mut invariance = true;
    for seed in 0..5u64 {
        let ds = datagen::generate_rho_sweep(0.25 * seed as f64, 30, 5, seed).unwrap();
        let (s, _) = extract_soft_labels(
            &ds.train_privileged,
            &ds.train_labels,
            &KernelSpec::rbf(0.0, 0.25_f64.ln()),
            &EpConfig::default(),
        )
        .unwrap();
        let kernel = KernelSpec::rbf(0.3, 0.25_f64.ln());
        let rho = pacbayes::optimize_rho_by_bound(
            &ds.train_inputs,
            &ds.train_labels,
            &s,
            &kernel,
            0.1,
            0.05,
            &EpConfig::default(),
        )
        .unwrap();
        let mut best = f64::NEG_INFINITY;
        let mut best_rho = -1.0;
        for g in rho_grid() {
            let m = modified_prior_fit(
                &ds.train_inputs,
                &ds.train_labels,
                &s,
                &kernel,
                g,
                &EpConfig::default(),
            )
            .unwrap();
            if m.conditional_log_marginal > best {
                best = m.conditional_log_marginal;
                best_rho = g;
            }
        }
        invariance &= rho == best_rho;
    }

    Outcome {
        name: "pac-bayes-constants",
        passed: worst_b < 1e-4 && c_exact && invariance,
        detail: format!(
            "max |b - grid ref| {worst_b:.3e} (tol 1e-4), c(0) = -4 exact: {c_exact}, argmin invariance on 5 instances: {invariance}"
        ),
    }
}

// ---------------------------------------------------------------------------
// Noise-rate sweep trends
// ---------------------------------------------------------------------------

fn criterion_sweep_trends(mode: &Mode) -> Outcome {
    let config = SweepConfig {
        repeats: mode.repeats,
        search: search_budget(),
        ..SweepConfig::default()
    };
    let cells = cmd_rho_sweep(&config).unwrap();

    let mut medians = Vec::new();
    for &r in &config.r_grid {
        let mut bounds: Vec<f64> = cells
            .iter()
            .filter(|c| c.r == r)
            .map(|c| c.rho_bound)
            .collect();
        bounds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        medians.push(bounds[bounds.len() / 2]);
    }
    let inversions = medians
        .windows(2)
        .filter(|w| w[1] > w[0] + 1e-12)
        .count();

    let mean_gap = cells
        .iter()
        .map(|c| c.rho_bound - c.rho_risk)
        .sum::<f64>()
        / cells.len() as f64;

    Outcome {
        name: "noise-sweep-trends",
        passed: inversions <= 1 && mean_gap > 0.0,
        detail: format!(
            "median rho_bound by r = {medians:?} ({inversions} inversions, tol 1), mean(rho_bound - rho_risk) = {mean_gap:.4}"
        ),
    }
}

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

fn criterion_timing(mode: &Mode) -> Outcome {
    let before = sltgp::numerics::quadrature_call_count();
    let config = TimingConfig {
        repeats: mode.timing_repeats,
        search: search_budget(),
        ..TimingConfig::default()
    };
    // cmd_timing itself asserts the pipeline performs zero quadrature calls.
    let rows = cmd_timing(&config).unwrap();
    let quadrature_calls = sltgp::numerics::quadrature_call_count() - before;

    let mut at_200: Vec<f64> = rows
        .iter()
        .filter(|r| r.n == 200 && r.method == Method::SltGp)
        .map(|r| r.seconds)
        .collect();
    at_200.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_200 = at_200[at_200.len() / 2];
    let slope = log_log_slope(&rows, Method::SltGp);

    Outcome {
        name: "timing",
        passed: median_200 <= 60.0 && (1.5..=3.5).contains(&slope) && quadrature_calls == 0,
        detail: format!(
            "SLT-GP median at n=200: {median_200:.2}s (<=60), log-log slope {slope:.2} (in [1.5, 3.5]), quadrature calls {quadrature_calls}"
        ),
    }
}

// ---------------------------------------------------------------------------
// Determinism
// ---------------------------------------------------------------------------

fn criterion_determinism() -> Outcome {
    let config = ExperimentConfig {
        repeats: 3,
        n_train: 50,
        n_test: 60,
        search: search_budget(),
        ..ExperimentConfig::new(DatasetSpec::Generator(GeneratorKind::CleanSoftLabel))
    };
    let csv_bytes = |threads: usize| -> Vec<u8> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let run = pool.install(|| cmd_run(&config)).unwrap();
        let mut out = Vec::new();
        write_results_csv(&mut out, &run).unwrap();
        out
    };
    let one = csv_bytes(1);
    let four = csv_bytes(4);
    let one_again = csv_bytes(1);
    let passed = one == four && one == one_again;
    Outcome {
        name: "determinism",
        passed,
        detail: format!(
            "results.csv identical across 1 vs 4 threads: {}, across reruns: {}",
            one == four,
            one == one_again
        ),
    }
}

// ---------------------------------------------------------------------------

#[test]
fn acceptance_criteria() {
    let mode = mode();
    println!(
        "acceptance mode: {} repeats, accuracy tolerance +/- {:.0} pp",
        mode.repeats,
        mode.accuracy_tol * 100.0
    );

    let mut outcomes = Vec::new();
    let mut push = |o: Outcome| {
        report(&o);
        outcomes.push(o);
    };

    push(criterion_rho_zero());
    push(criterion_path_equivalence());
    push(criterion_quadrature());
    push(criterion_pac_bayes());
    push(criterion_determinism());
    push(criterion_timing(&mode));
    let (bench, bench_ref) = criterion_benchmarks(&mode);
    push(bench);
    push(bench_ref);
    push(criterion_sweep_trends(&mode));

    let failed: Vec<&str> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| o.name)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
