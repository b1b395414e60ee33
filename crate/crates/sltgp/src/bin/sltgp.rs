//! Command-line harness for the SLT-GP experiments.
//!
//! Option resolution order: explicit flag, then key=value entries from
//! --config, then the built-in default. Thread count falls back to the
//! SLTGP_THREADS environment variable.

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use sltgp::datagen::{self, CsvSpec, GeneratorKind};
use sltgp::kernels::KernelFamily;
use sltgp::model_selection::SearchConfig;
use sltgp::runner::{
    self, DatasetSpec, ExperimentConfig, Method, SweepConfig, TimingConfig,
};
use sltgp::{Error, Result};

#[derive(Parser)]
#[command(name = "sltgp", about = "GP classification with privileged information")]
struct Cli {
    /// Key=value config file; explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: SLTGP_THREADS env var, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark: repeated generate / fit / evaluate cycles.
    Run(RunArgs),
    /// Fit SLT-GP once and report the PAC-Bayes risk bound.
    Bound(BoundArgs),
    /// Noise-rate sweep comparing bound-optimal and risk-optimal rho.
    RhoSweep(SweepArgs),
    /// Wall-clock fit time and accuracy across training-set sizes.
    Timing(TimingArgs),
    /// Dump a generated dataset as CSV files.
    Gen(GenArgs),
}

#[derive(Args, Clone)]
struct DatasetArgs {
    /// Generator name (clean_soft_label, clean_feature, relevant_feature,
    /// independent_feature, latent_gp, noise_variance).
    #[arg(long)]
    dataset: Option<String>,
    /// CSV file to load instead of a generator.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Comma-separated input column names (CSV datasets).
    #[arg(long, value_delimiter = ',')]
    input_cols: Vec<String>,
    /// Comma-separated privileged column names (CSV datasets).
    #[arg(long, value_delimiter = ',')]
    priv_cols: Vec<String>,
    /// Label column name (CSV datasets).
    #[arg(long)]
    label_col: Option<String>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Equalize class counts within each split (CSV datasets).
    #[arg(long)]
    balance: bool,
}

#[derive(Args, Clone)]
struct CommonArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Kernel family for input-space models: rbf or linear.
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_evals: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// Output directory (run) or file (other subcommands); stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated subset of gpc, slt_gp, gpc_reference.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
}

#[derive(Args)]
struct BoundArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    sigma0_sq: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated noise rates in [0, 1].
    #[arg(long, value_delimiter = ',')]
    r_grid: Vec<f64>,
    #[arg(long)]
    sigma0_sq: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args)]
struct TimingArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated training-set sizes.
    #[arg(long, value_delimiter = ',')]
    n_grid: Vec<usize>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[command(flatten)]
    common: CommonArgs,
    /// Generate the noise-rate sweep dataset with this r instead.
    #[arg(long)]
    sweep_r: Option<f64>,
}

/// Key=value file, one entry per line, '#' comments allowed.
fn read_config_file(path: &PathBuf) -> Result<HashMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("config line {} is not key=value: {line}", i + 1))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

struct Settings {
    file: HashMap<String, String>,
}

impl Settings {
    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("config key {key}: cannot parse {raw:?}"))),
        }
    }

    fn resolve<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }
}

fn parse_kernel(name: &str) -> Result<KernelFamily> {
    match name {
        "rbf" => Ok(KernelFamily::Rbf),
        "linear" => Ok(KernelFamily::Linear),
        other => Err(Error::Config(format!("unknown kernel family: {other}"))),
    }
}

fn dataset_spec(args: &DatasetArgs, settings: &Settings, seed: u64) -> Result<DatasetSpec> {
    let csv = match &args.csv {
        Some(p) => Some(p.clone()),
        None => settings.get::<PathBuf>("csv")?,
    };
    if let Some(path) = csv {
        let label_col = match &args.label_col {
            Some(c) => c.clone(),
            None => settings
                .get::<String>("label_col")?
                .ok_or_else(|| Error::Config("--label-col required with --csv".to_string()))?,
        };
        if args.input_cols.is_empty() {
            return Err(Error::Config("--input-cols required with --csv".to_string()));
        }
        return Ok(DatasetSpec::Csv(CsvSpec {
            path,
            input_columns: args.input_cols.clone(),
            privileged_columns: args.priv_cols.clone(),
            label_column: label_col,
            train_fraction: settings.resolve(args.train_fraction, "train_fraction", 0.167)?,
            balance_classes: args.balance,
            seed,
        }));
    }
    let name = match &args.dataset {
        Some(n) => n.clone(),
        None => settings
            .get::<String>("dataset")?
            .ok_or_else(|| Error::Config("--dataset or --csv is required".to_string()))?,
    };
    Ok(DatasetSpec::Generator(name.parse::<GeneratorKind>()?))
}

fn search_config(common: &CommonArgs, settings: &Settings, seed: u64) -> Result<SearchConfig> {
    let defaults = SearchConfig::default();
    Ok(SearchConfig {
        restarts: settings.resolve(common.restarts, "restarts", defaults.restarts)?,
        max_evals: settings.resolve(common.max_evals, "max_evals", defaults.max_evals)?,
        seed,
        optimize_amplitude: true,
    })
}

fn experiment_config(
    dataset: &DatasetArgs,
    common: &CommonArgs,
    methods: &[String],
    settings: &Settings,
) -> Result<ExperimentConfig> {
    let seed = settings.resolve(common.seed, "seed", 0)?;
    let mut config = ExperimentConfig::new(dataset_spec(dataset, settings, seed)?);
    config.base_seed = seed;
    config.repeats = settings.resolve(common.repeats, "repeats", 100)?;
    config.n_train = settings.resolve(common.n_train, "n_train", datagen::DEFAULT_TRAIN)?;
    config.n_test = settings.resolve(common.n_test, "n_test", datagen::DEFAULT_TEST)?;
    config.search = search_config(common, settings, seed)?;
    let kernel = match &common.kernel {
        Some(k) => Some(k.clone()),
        None => settings.get::<String>("kernel")?,
    };
    if let Some(k) = kernel {
        config.kernel = Some(parse_kernel(&k)?);
    }
    let method_names: Vec<String> = if methods.is_empty() {
        match settings.get::<String>("methods")? {
            Some(m) => m.split(',').map(|s| s.trim().to_string()).collect(),
            None => vec![],
        }
    } else {
        methods.to_vec()
    };
    if !method_names.is_empty() {
        config.methods = method_names
            .iter()
            .map(|m| m.parse::<Method>())
            .collect::<Result<_>>()?;
    }
    Ok(config)
}

fn emit<F>(out: &Option<PathBuf>, write: F) -> Result<()>
where
    F: Fn(&mut dyn Write) -> Result<()>,
{
    match out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            let mut f = std::fs::File::create(path)?;
            write(&mut f)
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let settings = Settings {
        file: match &cli.config {
            Some(p) => read_config_file(p)?,
            None => HashMap::new(),
        },
    };
    let threads = match cli.threads {
        Some(t) => Some(t),
        None => match std::env::var("SLTGP_THREADS") {
            Ok(v) => Some(v.parse::<usize>().map_err(|_| {
                Error::Config(format!("SLTGP_THREADS must be an integer, got {v:?}"))
            })?),
            Err(_) => settings.get::<usize>("threads")?,
        },
    };
    if let Some(t) = threads {
        // Ignore the error if a global pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }

    match cli.command {
        Command::Run(args) => {
            let config = experiment_config(&args.dataset, &args.common, &args.methods, &settings)?;
            let output = runner::cmd_run(&config)?;
            match &args.common.out {
                Some(dir) => {
                    runner::write_run_outputs(&output, dir)?;
                    eprintln!(
                        "wrote results.csv, summary.csv, timings.csv to {}",
                        dir.display()
                    );
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    runner::write_results_csv(&mut lock, &output)?;
                    writeln!(lock)?;
                    runner::write_summary_csv(&mut lock, &output)?;
                }
            }
            Ok(())
        }
        Command::Bound(args) => {
            let mut config =
                experiment_config(&args.dataset, &args.common, &[], &settings)?;
            config.sigma0_sq = settings.resolve(args.sigma0_sq, "sigma0_sq", 0.1)?;
            config.delta = settings.resolve(args.delta, "delta", 0.05)?;
            let report = runner::cmd_bound(&config)?;
            emit(&args.common.out, |w| runner::write_bound_csv(w, &report))
        }
        Command::RhoSweep(args) => {
            let seed = settings.resolve(args.common.seed, "seed", 0)?;
            let defaults = SweepConfig::default();
            let config = SweepConfig {
                r_grid: if args.r_grid.is_empty() {
                    defaults.r_grid.clone()
                } else {
                    args.r_grid.clone()
                },
                repeats: settings.resolve(args.common.repeats, "repeats", defaults.repeats)?,
                base_seed: seed,
                n_train: settings.resolve(args.common.n_train, "n_train", defaults.n_train)?,
                n_test: settings.resolve(args.common.n_test, "n_test", defaults.n_test)?,
                sigma0_sq: settings.resolve(args.sigma0_sq, "sigma0_sq", defaults.sigma0_sq)?,
                delta: settings.resolve(args.delta, "delta", defaults.delta)?,
                search: search_config(&args.common, &settings, seed)?,
            };
            let cells = runner::cmd_rho_sweep(&config)?;
            emit(&args.common.out, |w| runner::write_sweep_csv(w, &cells))
        }
        Command::Timing(args) => {
            let seed = settings.resolve(args.common.seed, "seed", 0)?;
            let defaults = TimingConfig::default();
            let generator = match dataset_spec(&args.dataset, &settings, seed) {
                Ok(DatasetSpec::Generator(kind)) => kind,
                Ok(DatasetSpec::Csv(_)) => {
                    return Err(Error::Config(
                        "timing requires a generator dataset".to_string(),
                    ))
                }
                Err(_) => defaults.generator,
            };
            let config = TimingConfig {
                generator,
                n_grid: if args.n_grid.is_empty() {
                    defaults.n_grid.clone()
                } else {
                    args.n_grid.clone()
                },
                repeats: settings.resolve(args.common.repeats, "repeats", defaults.repeats)?,
                base_seed: seed,
                n_test: settings.resolve(args.common.n_test, "n_test", defaults.n_test)?,
                search: search_config(&args.common, &settings, seed)?,
            };
            let rows = runner::cmd_timing(&config)?;
            emit(&args.common.out, |w| runner::write_timing_csv(w, &rows))
        }
        Command::Gen(args) => {
            let seed = settings.resolve(args.common.seed, "seed", 0)?;
            let n_train =
                settings.resolve(args.common.n_train, "n_train", datagen::DEFAULT_TRAIN)?;
            let n_test = settings.resolve(args.common.n_test, "n_test", datagen::DEFAULT_TEST)?;
            let ds = match args.sweep_r {
                Some(r) => datagen::generate_rho_sweep(r, n_train, n_test, seed)?,
                None => match dataset_spec(&args.dataset, &settings, seed)? {
                    DatasetSpec::Generator(kind) => {
                        datagen::generate_with_sizes(kind, seed, n_train, n_test)?
                    }
                    DatasetSpec::Csv(_) => {
                        return Err(Error::Config(
                            "gen requires a generator dataset or --sweep-r".to_string(),
                        ))
                    }
                },
            };
            let dir = args
                .common
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("."));
            datagen::save_csv(&ds, &dir)?;
            eprintln!(
                "wrote train.csv, test.csv, metadata.json to {}",
                dir.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
