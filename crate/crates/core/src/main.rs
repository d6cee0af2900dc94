use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use meshless_wave::cli::{cmd_converge, cmd_energy, cmd_solve};
use meshless_wave::config::{RunConfig, Sweep, Variant, ENV_THREADS};
use meshless_wave::error::{Error, Result};

#[derive(Parser)]
#[command(name = "meshless-wave", version, about = "Energy-conserving kernel Galerkin solver for nonlinear wave equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config and MGW_OUTPUT_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (overrides MGW_THREADS).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Single run: trace.csv, solution snapshots, run_meta.json.
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Convergence sweep: convergence.csv.
    Converge {
        #[command(flatten)]
        common: Common,
        /// `n=50,100,150` or `tau=0.04,0.02`; falls back to the [converge] section.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Energy study: energy_{variant}.csv per variant.
    Energy {
        #[command(flatten)]
        common: Common,
        /// Comma-separated from uniform, chebyshev, halton, avf, midpoint;
        /// falls back to the [energy] section.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    cfg.apply_env();
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn init_threads(flag: Option<usize>) -> Result<()> {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var(ENV_THREADS) {
            Ok(v) if !v.is_empty() => Some(
                v.parse::<usize>()
                    .map_err(|_| Error::Config(format!("{ENV_THREADS} must be a positive integer (got {v:?})")))?,
            ),
            _ => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve { common } => {
            init_threads(common.threads)?;
            cmd_solve(&load(&common)?)
        }
        Command::Converge { common, sweep } => {
            init_threads(common.threads)?;
            let cfg = load(&common)?;
            let sweep = match (sweep, &cfg.converge) {
                (Some(s), _) => Sweep::parse(&s)?,
                (None, Some(section)) => section.to_sweep()?,
                (None, None) => return Err(Error::Config("no sweep given (use --sweep or a [converge] section)".into())),
            };
            cmd_converge(&cfg, &sweep)
        }
        Command::Energy { common, variants } => {
            init_threads(common.threads)?;
            let cfg = load(&common)?;
            let names = match (variants, &cfg.energy) {
                (Some(v), _) => v,
                (None, Some(section)) => section.variants.clone(),
                (None, None) => vec!["uniform".into(), "chebyshev".into()],
            };
            let variants = names.iter().map(|s| Variant::parse(s.trim())).collect::<Result<Vec<_>>>()?;
            cmd_energy(&cfg, &variants)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
