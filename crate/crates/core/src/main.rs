use std::path::PathBuf;
use std::process::ExitCode;

use bergman_lab::config::{parse_override, Experiment, RunConfig};
use bergman_lab::error::{LabError, Result};
use bergman_lab::report::{write_report, Report};
use bergman_lab::run::{exit_code, run};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bergman-lab", version, about = "Weighted m-Bergman kernels and positivity experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV and JSON reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs serially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override a configuration key, e.g. `--set kernel.degree=24`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// m-Bergman kernel on a grid.
    Kernel,
    /// Regularizing sequence and sandwich bounds.
    Regularize,
    /// Extension constants and growth classification.
    Extendtest,
    /// Fiberwise L^p extension iteration.
    Extend,
    /// Plurisubharmonic variation of relative m-Bergman kernels.
    Variation,
    /// Minimum principle for fiber-rotation invariant weights.
    Minprinciple,
    /// Griffiths positivity of the truncated Hodge bundle.
    Positivity,
}

impl Command {
    fn experiment(self) -> Experiment {
        match self {
            Command::Kernel => Experiment::Kernel,
            Command::Regularize => Experiment::Regularize,
            Command::Extendtest => Experiment::Extendtest,
            Command::Extend => Experiment::Extend,
            Command::Variation => Experiment::Variation,
            Command::Minprinciple => Experiment::Minprinciple,
            Command::Positivity => Experiment::Positivity,
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| LabError::Config(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let overrides = cli.overrides.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
    let mut cfg = RunConfig::from_toml(&text, &overrides)?;
    let e = cli.command.experiment();
    if let Some(c) = cfg.experiment {
        if c != e {
            return Err(LabError::Config(format!("config is for '{}', subcommand is '{}'", c.key(), e.key())));
        }
    }
    cfg.experiment = Some(e);
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<Report> {
    let cfg = load(cli)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| LabError::Config(format!("threads: {e}")))?;
    }
    let rep = run(&cfg)?;
    write_report(&rep, &cli.out)?;
    Ok(rep)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = execute(&cli);
    match &res {
        Ok(rep) => {
            print!("{}", rep.summary());
            println!("  reports written to {}", cli.out.display());
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&res) as u8)
}
