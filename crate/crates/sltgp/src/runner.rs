//! Experiment orchestration behind the CLI: benchmark runs, the bound
//! report, the noise-rate sweep, and timing measurements.
//!
//! Reproducibility note: per-repeat rows contain only quantities that are
//! deterministic functions of (config, seed), so the results CSV is
//! byte-identical across reruns and thread counts. Wall-clock measurements
//! are inherently non-deterministic and live in a separate timings table.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{self, CsvSpec, GeneratorKind, PrivilegedDataset};
use crate::ep::EpConfig;
use crate::gpc;
use crate::kernels::{KernelFamily, KernelSpec};
use crate::model_selection::{self, SearchConfig};
use crate::pacbayes;
use crate::slt;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub enum DatasetSpec {
    Generator(GeneratorKind),
    Csv(CsvSpec),
}

impl DatasetSpec {
    pub fn name(&self) -> String {
        match self {
            DatasetSpec::Generator(kind) => kind.name().to_string(),
            DatasetSpec::Csv(spec) => format!("csv:{}", spec.path.display()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gpc,
    SltGp,
    GpcReference,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Gpc => "gpc",
            Method::SltGp => "slt_gp",
            Method::GpcReference => "gpc_reference",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gpc" => Ok(Method::Gpc),
            "slt_gp" | "slt-gp" | "sltgp" => Ok(Method::SltGp),
            "gpc_reference" | "gpc-reference" | "reference" => Ok(Method::GpcReference),
            other => Err(Error::Config(format!("unknown method: {other}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub methods: Vec<Method>,
    pub repeats: usize,
    pub base_seed: u64,
    /// Kernel family for the input-space models; `None` picks the
    /// per-dataset default (linear for the four linear-process generators,
    /// RBF otherwise).
    pub kernel: Option<KernelFamily>,
    pub search: SearchConfig,
    pub sigma0_sq: f64,
    pub delta: f64,
    pub n_train: usize,
    pub n_test: usize,
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSpec) -> Self {
        ExperimentConfig {
            dataset,
            methods: vec![Method::Gpc, Method::SltGp, Method::GpcReference],
            repeats: 100,
            base_seed: 0,
            kernel: None,
            search: SearchConfig::default(),
            sigma0_sq: 0.1,
            delta: 0.05,
            n_train: datagen::DEFAULT_TRAIN,
            n_test: datagen::DEFAULT_TEST,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be >= 1".to_string()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods must be nonempty".to_string()));
        }
        if let DatasetSpec::Csv(spec) = &self.dataset {
            let needs_privileged = self
                .methods
                .iter()
                .any(|m| matches!(m, Method::SltGp | Method::GpcReference));
            if needs_privileged && spec.privileged_columns.is_empty() {
                return Err(Error::Config(
                    "slt_gp and gpc_reference require privileged columns".to_string(),
                ));
            }
        }
        Ok(())
    }

    pub fn kernel_family(&self) -> KernelFamily {
        if let Some(family) = self.kernel {
            return family;
        }
        match &self.dataset {
            DatasetSpec::Generator(kind) => match kind {
                GeneratorKind::CleanSoftLabel
                | GeneratorKind::CleanFeature
                | GeneratorKind::RelevantFeature
                | GeneratorKind::IndependentFeature => KernelFamily::Linear,
                GeneratorKind::LatentGp | GeneratorKind::NoiseVariance => KernelFamily::Rbf,
            },
            DatasetSpec::Csv(_) => KernelFamily::Rbf,
        }
    }
}

fn template(family: KernelFamily) -> KernelSpec {
    match family {
        KernelFamily::Rbf => KernelSpec::rbf(0.0, 0.0),
        KernelFamily::Linear => KernelSpec::linear(0.0),
    }
}

pub fn accuracy(probabilities: &[f64], labels: &[f64]) -> f64 {
    assert_eq!(probabilities.len(), labels.len());
    if labels.is_empty() {
        return f64::NAN;
    }
    let correct = probabilities
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| (p >= 0.5) == (y > 0.0))
        .count();
    correct as f64 / labels.len() as f64
}

#[derive(Debug, Clone)]
pub struct MethodResult {
    pub method: Method,
    pub accuracy: f64,
    pub rho: Option<f64>,
    pub log_marginal: f64,
    pub converged: bool,
    pub seconds: f64,
    pub error: Option<String>,
}

impl MethodResult {
    fn failed(method: Method, error: &Error, seconds: f64) -> Self {
        MethodResult {
            method,
            accuracy: f64::NAN,
            rho: None,
            log_marginal: f64::NAN,
            converged: false,
            seconds,
            error: Some(error.to_string()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RepeatResult {
    pub repeat: usize,
    pub seed: u64,
    pub methods: Vec<MethodResult>,
}

fn load_dataset(config: &ExperimentConfig, seed: u64) -> Result<PrivilegedDataset> {
    match &config.dataset {
        DatasetSpec::Generator(kind) => {
            datagen::generate_with_sizes(*kind, seed, config.n_train, config.n_test)
        }
        DatasetSpec::Csv(spec) => {
            let mut spec = spec.clone();
            spec.seed = seed;
            Ok(datagen::load_csv(&spec)?.0)
        }
    }
}

struct ExtractorFit {
    soft_labels: nalgebra::DVector<f64>,
    posterior: gpc::GpcPosterior,
    log_marginal: f64,
    seconds: f64,
}

fn fit_extractor(
    ds: &PrivilegedDataset,
    family: KernelFamily,
    search: &SearchConfig,
) -> Result<ExtractorFit> {
    let start = Instant::now();
    let (kernel, log_marginal) = model_selection::optimize_gpc(
        &ds.train_privileged,
        &ds.train_labels,
        &template(family),
        search,
    )?;
    let (soft_labels, posterior) = gpc::extract_soft_labels(
        &ds.train_privileged,
        &ds.train_labels,
        &kernel,
        &EpConfig::default(),
    )?;
    Ok(ExtractorFit {
        soft_labels,
        posterior,
        log_marginal,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn run_repeat(config: &ExperimentConfig, repeat: usize) -> RepeatResult {
    let seed = config.base_seed + repeat as u64;
    let ds = match load_dataset(config, seed) {
        Ok(ds) => ds,
        Err(e) => {
            return RepeatResult {
                repeat,
                seed,
                methods: config
                    .methods
                    .iter()
                    .map(|&m| MethodResult::failed(m, &e, 0.0))
                    .collect(),
            }
        }
    };
    let family = config.kernel_family();
    let mut search = config.search;
    search.seed = seed;

    // The soft-label extractor (a GPC over the privileged features) is
    // shared: SLT-GP consumes its posterior mean, and gpc_reference is
    // exactly this model evaluated on the test privileged features.
    let needs_extractor = config
        .methods
        .iter()
        .any(|m| matches!(m, Method::SltGp | Method::GpcReference));
    let extractor = if needs_extractor {
        Some(fit_extractor(&ds, family, &search))
    } else {
        None
    };

    let methods = config
        .methods
        .iter()
        .map(|&method| match method {
            Method::Gpc => {
                let start = Instant::now();
                let outcome = model_selection::optimize_gpc(
                    &ds.train_inputs,
                    &ds.train_labels,
                    &template(family),
                    &search,
                )
                .and_then(|(kernel, log_marginal)| {
                    let post =
                        gpc::fit_gpc(&ds.train_inputs, &ds.train_labels, &kernel, &EpConfig::default())?;
                    Ok((post, log_marginal))
                });
                match outcome {
                    Ok((post, log_marginal)) => {
                        let probs = post.predict_prob_batch(&ds.test_inputs);
                        MethodResult {
                            method,
                            accuracy: accuracy(&probs, &ds.test_labels),
                            rho: None,
                            log_marginal,
                            converged: post.ep.converged,
                            seconds: start.elapsed().as_secs_f64(),
                            error: None,
                        }
                    }
                    Err(e) => MethodResult::failed(method, &e, start.elapsed().as_secs_f64()),
                }
            }
            Method::SltGp => {
                let extractor = extractor.as_ref().unwrap();
                match extractor {
                    Ok(ext) => {
                        let start = Instant::now();
                        let outcome = model_selection::optimize_slt(
                            &ds.train_inputs,
                            &ds.train_labels,
                            &ext.soft_labels,
                            &template(family),
                            &search,
                        )
                        .and_then(|(kernel, rho, clm)| {
                            let model = slt::modified_prior_fit(
                                &ds.train_inputs,
                                &ds.train_labels,
                                &ext.soft_labels,
                                &kernel,
                                rho,
                                &EpConfig::default(),
                            )?;
                            Ok((model, rho, clm))
                        });
                        match outcome {
                            Ok((model, rho, clm)) => {
                                let probs = model.predict_prob_batch(&ds.test_inputs);
                                MethodResult {
                                    method,
                                    accuracy: accuracy(&probs, &ds.test_labels),
                                    rho: Some(rho),
                                    log_marginal: clm,
                                    converged: model.ep.converged,
                                    seconds: ext.seconds + start.elapsed().as_secs_f64(),
                                    error: None,
                                }
                            }
                            Err(e) => MethodResult::failed(
                                method,
                                &e,
                                ext.seconds + start.elapsed().as_secs_f64(),
                            ),
                        }
                    }
                    Err(e) => MethodResult::failed(method, e, 0.0),
                }
            }
            Method::GpcReference => {
                let extractor = extractor.as_ref().unwrap();
                match extractor {
                    Ok(ext) => {
                        let start = Instant::now();
                        let probs = ext.posterior.predict_prob_batch(&ds.test_privileged);
                        MethodResult {
                            method,
                            accuracy: accuracy(&probs, &ds.test_labels),
                            rho: None,
                            log_marginal: ext.log_marginal,
                            converged: ext.posterior.ep.converged,
                            seconds: ext.seconds + start.elapsed().as_secs_f64(),
                            error: None,
                        }
                    }
                    Err(e) => MethodResult::failed(method, e, 0.0),
                }
            }
        })
        .collect();

    RepeatResult {
        repeat,
        seed,
        methods,
    }
}

#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub method: Method,
    pub repeats_used: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    /// True when the standard deviation is reported as 0 because only a
    /// single successful repeat was available.
    pub single_sample: bool,
    pub mean_rho: Option<f64>,
    pub failures: usize,
}

pub struct RunOutput {
    pub dataset: String,
    pub repeats: Vec<RepeatResult>,
    pub summary: Vec<SummaryRow>,
}

pub fn summarize(methods: &[Method], repeats: &[RepeatResult]) -> Vec<SummaryRow> {
    methods
        .iter()
        .map(|&method| {
            let mut accs = Vec::new();
            let mut rhos = Vec::new();
            let mut failures = 0usize;
            for rep in repeats {
                for m in &rep.methods {
                    if m.method != method {
                        continue;
                    }
                    if m.error.is_some() || !m.accuracy.is_finite() {
                        failures += 1;
                    } else {
                        accs.push(m.accuracy);
                        if let Some(r) = m.rho {
                            rhos.push(r);
                        }
                    }
                }
            }
            let n = accs.len();
            let mean = if n > 0 {
                accs.iter().sum::<f64>() / n as f64
            } else {
                f64::NAN
            };
            let std = if n > 1 {
                (accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                method,
                repeats_used: n,
                mean_accuracy: mean,
                std_accuracy: std,
                single_sample: n <= 1,
                mean_rho: if rhos.is_empty() {
                    None
                } else {
                    Some(rhos.iter().sum::<f64>() / rhos.len() as f64)
                },
                failures,
            }
        })
        .collect()
}

pub fn cmd_run(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    // Repeats are embarrassingly parallel; the ordered collect keeps the
    // output independent of scheduling.
    let repeats: Vec<RepeatResult> = (0..config.repeats)
        .into_par_iter()
        .map(|r| run_repeat(config, r))
        .collect();
    let summary = summarize(&config.methods, &repeats);
    Ok(RunOutput {
        dataset: config.dataset.name(),
        repeats,
        summary,
    })
}

fn opt_to_string(v: &Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Deterministic per-repeat rows: everything except wall time.
pub fn write_results_csv<W: Write + ?Sized>(out: &mut W, run: &RunOutput) -> Result<()> {
    writeln!(
        out,
        "dataset,repeat,seed,method,accuracy,rho,log_marginal,converged,error"
    )?;
    for rep in &run.repeats {
        for m in &rep.methods {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                run.dataset,
                rep.repeat,
                rep.seed,
                m.method.name(),
                m.accuracy,
                opt_to_string(&m.rho),
                m.log_marginal,
                m.converged,
                m.error.as_deref().unwrap_or("")
            )?;
        }
    }
    Ok(())
}

pub fn write_summary_csv<W: Write + ?Sized>(out: &mut W, run: &RunOutput) -> Result<()> {
    writeln!(
        out,
        "dataset,method,repeats_used,mean_accuracy,std_accuracy,single_sample,mean_rho,failures"
    )?;
    for s in &run.summary {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            run.dataset,
            s.method.name(),
            s.repeats_used,
            s.mean_accuracy,
            s.std_accuracy,
            s.single_sample,
            opt_to_string(&s.mean_rho),
            s.failures
        )?;
    }
    Ok(())
}

pub fn write_timings_csv<W: Write + ?Sized>(out: &mut W, run: &RunOutput) -> Result<()> {
    writeln!(out, "dataset,repeat,method,seconds")?;
    for rep in &run.repeats {
        for m in &rep.methods {
            writeln!(
                out,
                "{},{},{},{}",
                run.dataset,
                rep.repeat,
                m.method.name(),
                m.seconds
            )?;
        }
    }
    Ok(())
}

pub fn write_run_outputs(run: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut results = std::fs::File::create(dir.join("results.csv"))?;
    write_results_csv(&mut results, run)?;
    let mut summary = std::fs::File::create(dir.join("summary.csv"))?;
    write_summary_csv(&mut summary, run)?;
    let mut timings = std::fs::File::create(dir.join("timings.csv"))?;
    write_timings_csv(&mut timings, run)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct BoundReport {
    pub dataset: String,
    pub seed: u64,
    pub rho: f64,
    pub log_conditional_marginal: f64,
    pub c: f64,
    pub b: f64,
    pub bound: f64,
}

pub fn cmd_bound(config: &ExperimentConfig) -> Result<BoundReport> {
    config.validate()?;
    let ds = load_dataset(config, config.base_seed)?;
    let family = config.kernel_family();
    let mut search = config.search;
    search.seed = config.base_seed;
    let ext = fit_extractor(&ds, family, &search)?;
    let (kernel, rho, clm) = model_selection::optimize_slt(
        &ds.train_inputs,
        &ds.train_labels,
        &ext.soft_labels,
        &template(family),
        &search,
    )?;
    let _ = kernel;
    let c = pacbayes::c_threshold(config.sigma0_sq)?;
    let b = pacbayes::b_constant(config.sigma0_sq)?;
    let inputs = pacbayes::BoundInputs {
        sigma0_sq: config.sigma0_sq,
        delta: config.delta,
        n: ds.n_train(),
        log_conditional_marginal: clm,
    };
    inputs.validate()?;
    Ok(BoundReport {
        dataset: config.dataset.name(),
        seed: config.base_seed,
        rho,
        log_conditional_marginal: clm,
        c,
        b,
        bound: pacbayes::risk_bound(&inputs, b),
    })
}

pub fn write_bound_csv<W: Write + ?Sized>(out: &mut W, report: &BoundReport) -> Result<()> {
    writeln!(out, "dataset,seed,rho,log_z,c,b,bound")?;
    writeln!(
        out,
        "{},{},{},{},{},{},{}",
        report.dataset,
        report.seed,
        report.rho,
        report.log_conditional_marginal,
        report.c,
        report.b,
        report.bound
    )?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub r: f64,
    pub repeat: usize,
    pub seed: u64,
    pub rho_bound: f64,
    pub rho_risk: f64,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub r_grid: Vec<f64>,
    pub repeats: usize,
    pub base_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub sigma0_sq: f64,
    pub delta: f64,
    pub search: SearchConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            r_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            repeats: 100,
            base_seed: 0,
            n_train: datagen::DEFAULT_TRAIN,
            n_test: datagen::DEFAULT_TEST,
            sigma0_sq: 0.1,
            delta: 0.05,
            search: SearchConfig::default(),
        }
    }
}

fn run_sweep_cell(config: &SweepConfig, r_index: usize, repeat: usize) -> Result<SweepCell> {
    let r = config.r_grid[r_index];
    let seed = config.base_seed + (r_index as u64) * 10_000 + repeat as u64;
    let ds = datagen::generate_rho_sweep(r, config.n_train, config.n_test, seed)?;

    // Fixed-amplitude-1/4 RBF everywhere, length scales optimized.
    let mut search = config.search;
    search.seed = seed;
    search.optimize_amplitude = false;
    let quarter_amp = KernelSpec::rbf(0.0, 0.25_f64.ln());
    let (extractor_kernel, _) = model_selection::optimize_gpc(
        &ds.train_privileged,
        &ds.train_labels,
        &quarter_amp,
        &search,
    )?;
    let (s, _) = gpc::extract_soft_labels(
        &ds.train_privileged,
        &ds.train_labels,
        &extractor_kernel,
        &EpConfig::default(),
    )?;
    let (kernel, _, _) = model_selection::optimize_slt(
        &ds.train_inputs,
        &ds.train_labels,
        &s,
        &quarter_amp,
        &search,
    )?;
    let rho_bound = pacbayes::optimize_rho_by_bound(
        &ds.train_inputs,
        &ds.train_labels,
        &s,
        &kernel,
        config.sigma0_sq,
        config.delta,
        &EpConfig::default(),
    )?;
    let rho_risk = model_selection::optimize_rho_by_risk(
        &ds.train_inputs,
        &ds.train_labels,
        &s,
        &kernel,
        &ds.test_inputs,
        &ds.test_labels,
    )?;
    Ok(SweepCell {
        r,
        repeat,
        seed,
        rho_bound,
        rho_risk,
    })
}

pub fn cmd_rho_sweep(config: &SweepConfig) -> Result<Vec<SweepCell>> {
    if config.repeats == 0 || config.r_grid.is_empty() {
        return Err(Error::Config("r_grid and repeats must be nonempty".to_string()));
    }
    let cells: Vec<(usize, usize)> = (0..config.r_grid.len())
        .flat_map(|ri| (0..config.repeats).map(move |rep| (ri, rep)))
        .collect();
    cells
        .into_par_iter()
        .map(|(ri, rep)| run_sweep_cell(config, ri, rep))
        .collect()
}

pub fn write_sweep_csv<W: Write + ?Sized>(out: &mut W, cells: &[SweepCell]) -> Result<()> {
    writeln!(out, "r,repeat,seed,rho_bound,rho_risk")?;
    for c in cells {
        writeln!(
            out,
            "{},{},{},{},{}",
            c.r, c.repeat, c.seed, c.rho_bound, c.rho_risk
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TimingRow {
    pub n: usize,
    pub method: Method,
    pub repeat: usize,
    pub seconds: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TimingConfig {
    pub generator: GeneratorKind,
    pub n_grid: Vec<usize>,
    pub repeats: usize,
    pub base_seed: u64,
    pub n_test: usize,
    pub search: SearchConfig,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            generator: GeneratorKind::LatentGp,
            n_grid: (1..=10).map(|k| 20 * k).collect(),
            repeats: 5,
            base_seed: 0,
            n_test: datagen::DEFAULT_TEST,
            search: SearchConfig::default(),
        }
    }
}

pub fn cmd_timing(config: &TimingConfig) -> Result<Vec<TimingRow>> {
    let mut rows = Vec::new();
    let quadrature_before = crate::numerics::quadrature_call_count();
    for (i, &n) in config.n_grid.iter().enumerate() {
        for repeat in 0..config.repeats {
            let seed = config.base_seed + (i * config.repeats + repeat) as u64;
            let exp = ExperimentConfig {
                repeats: 1,
                base_seed: seed,
                n_train: n,
                n_test: config.n_test,
                methods: vec![Method::Gpc, Method::SltGp],
                search: config.search,
                ..ExperimentConfig::new(DatasetSpec::Generator(config.generator))
            };
            let run = cmd_run(&exp)?;
            for m in &run.repeats[0].methods {
                rows.push(TimingRow {
                    n,
                    method: m.method,
                    repeat,
                    seconds: m.seconds,
                    accuracy: m.accuracy,
                });
            }
        }
    }
    // The whole pipeline must stay quadrature-free (the EP updates are
    // analytic); any counted call is a regression.
    assert_eq!(
        crate::numerics::quadrature_call_count(),
        quadrature_before,
        "numerical quadrature was invoked during fitting"
    );
    Ok(rows)
}

pub fn write_timing_csv<W: Write + ?Sized>(out: &mut W, rows: &[TimingRow]) -> Result<()> {
    writeln!(out, "n,method,repeat,seconds,accuracy")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.n,
            r.method.name(),
            r.repeat,
            r.seconds,
            r.accuracy
        )?;
    }
    Ok(())
}

/// Least-squares slope of log(median seconds) against log(n) for one method;
/// used by the scaling checks.
pub fn log_log_slope(rows: &[TimingRow], method: Method) -> f64 {
    let mut by_n: std::collections::BTreeMap<usize, Vec<f64>> = std::collections::BTreeMap::new();
    for r in rows.iter().filter(|r| r.method == method) {
        by_n.entry(r.n).or_default().push(r.seconds);
    }
    let points: Vec<(f64, f64)> = by_n
        .into_iter()
        .map(|(n, mut secs)| {
            secs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            ((n as f64).ln(), secs[secs.len() / 2].ln())
        })
        .collect();
    let m = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / m;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / m;
    let cov: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let var: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    cov / var
}
