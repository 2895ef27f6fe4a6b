use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use imc_nas::driver::{self, RunConfig, Strategy, TrialLog};
use imc_nas::eval::EvaluatorSpec;
use imc_nas::fitness::CostMetric;
use imc_nas::imc::estimate_network;
use imc_nas::ir::{expand_in, NetworkIR};
use imc_nas::space::{ArchGenome, InputShape};
use imc_nas::{Error, Result};

#[derive(Parser)]
#[command(name = "imc-nas", version, about = "Hardware-aware architecture search for analog IMC accelerators")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Start from a dataset preset (cifar10, asl, ckplus).
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Fitness function: acc, acc_lat or acc_en.
    #[arg(long, global = true)]
    ff: Option<CostMetric>,
    #[arg(long = "acc-exponent", global = true)]
    acc_exponent: Option<f64>,
    /// `surrogate` or `external:<command>`.
    #[arg(long, global = true)]
    evaluator: Option<EvaluatorSpec>,
    /// Output directory holding trials.jsonl.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Input shape as CxHxW.
    #[arg(long = "input-shape", global = true)]
    input_shape: Option<InputShape>,
    /// Hardware configuration JSON, overriding the run config's.
    #[arg(long, global = true)]
    hardware: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Count the configurations in the search space.
    Count,
    /// Draw genomes uniformly from the space.
    Sample {
        #[arg(short, default_value_t = 1)]
        n: usize,
    },
    /// Check a genome against the space and the input shape.
    Validate { genome: String },
    /// Estimate latency and energy of a genome or an IR document.
    Estimate {
        /// Genome text, genome JSON, IR JSON, or a path to a file holding one of them.
        input: String,
    },
    /// Run (or resume) a search.
    Search {
        #[arg(long)]
        parallel: Option<usize>,
        /// Sample uniformly instead of using TPE.
        #[arg(long)]
        random: bool,
        /// Fixed timestamps and zero wall times in the log.
        #[arg(long = "deterministic-clock")]
        deterministic_clock: bool,
        #[arg(short, default_value_t = 5)]
        k: usize,
    },
    /// Print the best trials of a log.
    Report {
        /// Log file; defaults to <out>/trials.jsonl.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(short, default_value_t = 5)]
        k: usize,
    },
    /// Export accuracy/latency/energy per trial as CSV.
    Scatter {
        #[arg(long)]
        log: Option<PathBuf>,
        /// Write here instead of stdout.
        #[arg(short)]
        output: Option<PathBuf>,
    },
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut config = match (&g.config, &g.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)
            .ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?,
        (None, None) => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    if let Some(trials) = g.trials {
        config.trials = trials;
    }
    if let Some(ff) = g.ff {
        config.fitness.cost_metric = ff;
    }
    if let Some(n) = g.acc_exponent {
        config.fitness.accuracy_exponent = n;
    }
    if let Some(e) = &g.evaluator {
        config.evaluator = e.clone();
    }
    if let Some(out) = &g.out {
        config.out_dir = out.clone();
    }
    if let Some(shape) = g.input_shape {
        config.input_shape = shape;
    }
    if let Some(path) = &g.hardware {
        let text = read(path)?;
        config.hardware = serde_json::from_str(&text)?;
    }
    Ok(config)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

/// Argument text, or the contents of the file it names.
fn inline_or_file(arg: &str) -> Result<String> {
    let path = Path::new(arg);
    if !arg.trim_start().starts_with('{') && path.is_file() {
        read(path)
    } else {
        Ok(arg.to_string())
    }
}

fn network_for(config: &RunConfig, input: &str) -> Result<NetworkIR> {
    let text = inline_or_file(input)?;
    if let Ok(value) = serde_json::from_str::<serde_json::Value>(&text) {
        if value.get("layers").is_some() {
            let ir: NetworkIR = serde_json::from_value(value)?;
            ir.check()?;
            return Ok(ir);
        }
    }
    let genome = ArchGenome::parse_any(&text)?;
    expand_in(&config.space, &genome, config.input_shape, &config.head, &config.expand)
}

fn log_path(config: &RunConfig, log: Option<PathBuf>) -> PathBuf {
    log.unwrap_or_else(|| config.log_path())
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli.global)?;
    match cli.command {
        Command::Count => {
            config.space.check()?;
            println!("{}", config.space.count_configurations());
        }
        Command::Sample { n } => {
            config.space.check()?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            for _ in 0..n {
                println!("{}", config.space.sample_valid(config.input_shape, &mut rng)?);
            }
        }
        Command::Validate { genome } => {
            let genome = ArchGenome::parse_any(&inline_or_file(&genome)?)?;
            config.space.validate(&genome, config.input_shape)?;
            println!("valid: {genome} on {}", config.input_shape);
        }
        Command::Estimate { input } => {
            let ir = network_for(&config, &input)?;
            let report = estimate_network(&ir, &config.hardware)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Search {
            parallel,
            random,
            deterministic_clock,
            k,
        } => {
            if let Some(p) = parallel {
                config.parallel = p;
            }
            if random {
                config.strategy = Strategy::Random;
            }
            config.deterministic_clock |= deterministic_clock;
            let log = driver::run_search(&config)?;
            let failed = log.len() - log.successful().count();
            eprintln!(
                "{} trials in {} ({} failed)",
                log.len(),
                config.log_path().display(),
                failed
            );
            match driver::report_best(&log, k) {
                Ok(rows) => print!("{}", driver::render_best_table(&rows)),
                Err(Error::EmptyReport) => eprintln!("no successful trials"),
                Err(e) => return Err(e),
            }
        }
        Command::Report { log, k } => {
            let log = TrialLog::load(&log_path(&config, log))?;
            print!("{}", driver::render_best_table(&driver::report_best(&log, k)?));
        }
        Command::Scatter { log, output } => {
            let log = TrialLog::load(&log_path(&config, log))?;
            let csv = driver::export_scatter(&log)?;
            match output {
                Some(path) => fs::write(&path, csv)
                    .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
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
