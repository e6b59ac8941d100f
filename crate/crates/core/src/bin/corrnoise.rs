use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use corrnoise::experiment::{run_pipeline, ExperimentConfig, Method, Mode};
use corrnoise::Error;

/// Learn time-correlated noise models, estimate SE(2) trajectories and check
/// their consistency.
#[derive(Debug, Parser)]
#[command(name = "corrnoise", version)]
struct Cli {
    /// simulate | learn | estimate | evaluate | full-pipeline | benchmark
    mode: Option<String>,

    /// JSON config; missing keys take their defaults.
    #[arg(short, long)]
    config: Option<PathBuf>,

    /// Same as the positional mode.
    #[arg(long = "mode", value_name = "MODE")]
    mode_flag: Option<String>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    out_dir: Option<PathBuf>,

    /// P2P-CONST, SVD-CONST or SVD-FEAT-<bandwidth>.
    #[arg(long)]
    method: Option<String>,

    /// Bandwidth of the SVD-FEAT method.
    #[arg(long)]
    bandwidth: Option<usize>,

    /// Overrides any config key, e.g. `--set sim.test_length=3000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p, &cli.set)?,
        None => ExperimentConfig::from_json_str("{}", &cli.set)?,
    };
    let mode = match (&cli.mode, &cli.mode_flag) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::Config(format!("conflicting modes '{a}' and '{b}'")));
        }
        (Some(m), _) | (None, Some(m)) => Some(m.parse::<Mode>()?),
        (None, None) => None,
    };
    if let Some(m) = mode {
        cfg.mode = m;
    }
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    if let Some(d) = &cli.out_dir {
        cfg.paths.out_dir = d.clone();
    }
    if let Some(m) = &cli.method {
        cfg.method = m.parse::<Method>()?;
    }
    if let Some(b) = cli.bandwidth {
        cfg.set_bandwidth(b)?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            log::error!("{e}");
            return ExitCode::from(2);
        }
    };
    if cli.print_config {
        println!("{}", cfg.to_canonical_json());
        return ExitCode::SUCCESS;
    }
    match run_pipeline(&cfg) {
        Ok(manifest) => {
            log::info!(
                "{} finished: {} artifacts in {}",
                cfg.mode,
                manifest.artifacts.len(),
                cfg.paths.out_dir.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            if e.manifest.is_some() {
                log::error!("partial artifacts are listed in {}/manifest.json", cfg.paths.out_dir.display());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
