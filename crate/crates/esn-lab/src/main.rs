//! `esnlab`: command-line front end for the reservoir-computing laboratory.
//!
//! Exit codes: 0 success, 1 I/O error, 2 configuration error, 3 numerical
//! error, 4 capability (applicability) error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use esn_core::Error;

use esn_lab::config::{self, ExperimentFile};
use esn_lab::output;
use esn_lab::registry;
use esn_lab::runner;
use esn_lab::tasks::{self, IidSource, StreamConfig};

#[derive(Parser)]
#[command(name = "esnlab", version, about = "Reservoir-computing laboratory")]
struct Cli {
    /// Worker threads (default: available parallelism). Results do not
    /// depend on this value.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Registered experiment name (see `list`) or a TOML config path.
    target: String,
    /// Replace the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Patch a config key, e.g. `--override runs.0.gamma=0.7` (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Print the fully resolved config and exit without running.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a registered experiment or a TOML config file.
    Run(RunArgs),
    /// List registered experiments.
    List,
    /// Print a theory-only accuracy curve (analytic i.i.d. tier, codebook
    /// readout) as CSV on stdout.
    Predict {
        #[arg(long, default_value = "V2")]
        variant: String,
        #[arg(long, default_value = "permutation")]
        matrix: String,
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        d_alphabet: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 25)]
        d_max: usize,
    },
    /// Run a capacity-surface experiment (the target must have task =
    /// "surface").
    Capacity(RunArgs),
    /// Minimal-reservoir search for the 5-bit memory task; CSV on stdout.
    Fivebit {
        /// Distractor periods (repeatable).
        #[arg(long = "t", required = true)]
        t_list: Vec<usize>,
        /// "theory" | "empirical" | "both".
        #[arg(long, default_value = "both")]
        mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        seeds: usize,
        #[arg(long, default_value_t = 400_000)]
        episodes: usize,
        #[arg(long, default_value_t = 0.99)]
        target: f64,
        #[arg(long, default_value_t = 1.0 / 64.0)]
        beta: f64,
        #[arg(long, default_value_t = 0.99)]
        gamma: f64,
        #[arg(long, default_value_t = 1 << 15)]
        n_max: usize,
    },
    /// Run one streaming configuration with geometry diagnostics; geometry
    /// CSV on stdout.
    Geometry {
        #[arg(long, default_value = "V2")]
        variant: String,
        #[arg(long, default_value = "random_orthogonal")]
        matrix: String,
        #[arg(long, default_value = "regression")]
        readout: String,
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        d_alphabet: usize,
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        #[arg(long, default_value_t = 1000)]
        e: usize,
        #[arg(long, default_value_t = 5000)]
        m: usize,
        #[arg(long, default_value_t = 1000)]
        r: usize,
        #[arg(long, default_value_t = 25)]
        d_max: usize,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training-phase measurement noise in dB.
        #[arg(long)]
        snr_train_db: Option<f64>,
    },
}

fn exit_code(err: &Error) -> ExitCode {
    match err {
        Error::Parameter(_) => ExitCode::from(2),
        Error::Numerical(_) | Error::InsufficientData(_) => ExitCode::from(3),
        Error::Capability(_) => ExitCode::from(4),
    }
}

fn load_target(target: &str) -> Result<ExperimentFile, Error> {
    if let Some(file) = registry::build(target) {
        return Ok(file);
    }
    if target.ends_with(".toml") || std::path::Path::new(target).exists() {
        let text = std::fs::read_to_string(target)
            .map_err(|e| Error::Parameter(format!("cannot read {target}: {e}")))?;
        return config::from_toml_str(&text);
    }
    Err(Error::Parameter(format!(
        "{target:?} is neither a registered experiment (see `esnlab list`) nor a config file"
    )))
}

fn resolve_run_args(args: &RunArgs) -> Result<ExperimentFile, Error> {
    let mut file = load_target(&args.target)?;
    if let Some(seed) = args.seed {
        file.seed = seed;
    }
    let file = config::with_overrides(&file, &args.overrides)?;
    file.resolve()?;
    Ok(file)
}

fn echo_config(file: &ExperimentFile) -> Result<(), Error> {
    let text = toml::to_string(file)
        .map_err(|e| Error::Parameter(format!("config serialization error: {e}")))?;
    print!("{text}");
    Ok(())
}

fn do_run(args: &RunArgs, jobs: usize, surface_only: bool) -> Result<(), Error> {
    let file = resolve_run_args(args)?;
    if surface_only && file.task != "surface" {
        return Err(Error::Parameter(format!(
            "`capacity` needs a surface experiment; {:?} has task {:?}",
            file.name, file.task
        )));
    }
    echo_config(&file)?;
    if args.dry_run {
        return Ok(());
    }
    let paths = runner::run_experiment(&file, &args.out, jobs)?;
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn do_predict(
    variant: &str,
    matrix: &str,
    n: usize,
    d_alphabet: usize,
    alpha: f64,
    beta: f64,
    gamma: f64,
    d_max: usize,
) -> Result<(), Error> {
    let mut cfg = StreamConfig::new(
        config::parse_variant(variant)?,
        config::parse_matrix(matrix)?,
        esn_core::readout::ReadoutMethod::Codebook,
        n,
        d_alphabet,
    );
    cfg.alpha = alpha;
    cfg.beta = beta;
    cfg.gamma = gamma;
    cfg.d_max = d_max;
    cfg.theory_iid = IidSource::Analytic;
    let curve = tasks::analytic_iid_curve(&cfg)?;
    println!("d,accuracy_theory_iid");
    for (d, p) in curve.iter().enumerate() {
        println!("{d},{p}");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn do_geometry(
    variant: &str,
    matrix: &str,
    readout: &str,
    n: usize,
    d_alphabet: usize,
    gamma: f64,
    e: usize,
    m: usize,
    r: usize,
    d_max: usize,
    trials: usize,
    seed: u64,
    snr_train_db: Option<f64>,
) -> Result<(), Error> {
    let mut cfg = StreamConfig::new(
        config::parse_variant(variant)?,
        config::parse_matrix(matrix)?,
        config::parse_readout(readout)?,
        n,
        d_alphabet,
    );
    cfg.gamma = gamma;
    cfg.e = e;
    cfg.m = m;
    cfg.r = r;
    cfg.d_max = d_max;
    cfg.trials = trials;
    cfg.seed = seed;
    cfg.snr_train_db = snr_train_db;
    cfg.geometry = true;
    let result = tasks::run_trajectory_association(&cfg)?;
    let meta = output::RunMeta {
        label: "geometry".into(),
        variant: variant.into(),
        matrix: matrix.into(),
        readout: readout.into(),
        n,
        d_alphabet,
        alpha: cfg.alpha,
        beta: cfg.beta,
        gamma,
    };
    print!("{}", output::geometry_csv(&[(meta, result)]));
    Ok(())
}

fn dispatch(cli: &Cli, jobs: usize) -> Result<(), Error> {
    match &cli.command {
        Command::Run(args) => do_run(args, jobs, false),
        Command::List => {
            for (name, desc) in registry::list() {
                println!("{name:8} {desc}");
            }
            Ok(())
        }
        Command::Predict { variant, matrix, n, d_alphabet, alpha, beta, gamma, d_max } => {
            do_predict(variant, matrix, *n, *d_alphabet, *alpha, *beta, *gamma, *d_max)
        }
        Command::Capacity(args) => do_run(args, jobs, true),
        Command::Fivebit {
            t_list,
            mode,
            seed,
            seeds,
            episodes,
            target,
            beta,
            gamma,
            n_max,
        } => {
            let file = ExperimentFile {
                name: "fivebit".into(),
                task: "fivebit".into(),
                seed: *seed,
                runs: Vec::new(),
                surface: None,
                fivebit: Some(config::FiveBitFile {
                    t_list: t_list.clone(),
                    mode: mode.clone(),
                    beta: *beta,
                    gamma: *gamma,
                    target: *target,
                    seeds: *seeds,
                    episodes: *episodes,
                    n_max: *n_max,
                }),
            };
            file.resolve()?;
            let rows = runner::run_fivebit_rows(&file)?;
            print!("{}", output::fivebit_csv(&rows));
            Ok(())
        }
        Command::Geometry {
            variant,
            matrix,
            readout,
            n,
            d_alphabet,
            gamma,
            e,
            m,
            r,
            d_max,
            trials,
            seed,
            snr_train_db,
        } => do_geometry(
            variant,
            matrix,
            readout,
            *n,
            *d_alphabet,
            *gamma,
            *e,
            *m,
            *r,
            *d_max,
            *trials,
            *seed,
            *snr_train_db,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |p| p.get()));
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
        eprintln!("error: cannot configure worker pool: {e}");
        return ExitCode::from(1);
    }
    match dispatch(&cli, jobs) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
