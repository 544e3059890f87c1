use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gridbid_cli::commands;
use gridbid_cli::config::RunConfig;
use gridbid_cli::validate::{self, Suite};
use gridbid_cli::CliError;

#[derive(Debug, Parser)]
#[command(name = "gridbid", version, about = "Day-ahead bidding and real-time balancing for a distribution feeder")]
struct Cli {
    /// Scenario config (`key = value` lines).
    #[arg(long, global = true, default_value = "data/scenario.conf")]
    config: PathBuf,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Forecast error standard deviation as a fraction of PV capacity.
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// Imbalance weight in the real-time incentive.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the robust day-ahead bid.
    DaBid {
        /// Solve every sigma in the config's `sigmas` list.
        #[arg(long)]
        sweep: bool,
    },
    /// Run the real-time market for the configured hour.
    RtRun {
        /// Day-ahead decision file; defaults to `<out>/da_decision.csv`.
        #[arg(long)]
        da: Option<PathBuf>,
    },
    /// Day-ahead then real-time for every configured (sigma, gamma) pair.
    Pipeline,
    /// Run a self-check suite.
    Validate {
        #[arg(value_parser = |s: &str| s.parse::<Suite>())]
        suite: Suite,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(sigma) = cli.sigma {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(CliError::Usage(format!("--sigma must be nonnegative, got {sigma}")));
        }
        cfg.sigma = sigma;
        cfg.sigmas = vec![sigma];
    }
    if let Some(gamma) = cli.gamma {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(CliError::Usage(format!("--gamma must be nonnegative, got {gamma}")));
        }
        cfg.rt.gamma = gamma;
        cfg.gammas = vec![gamma];
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::DaBid { sweep: false } => {
            let cfg = load_config(cli)?;
            let out = commands::cmd_da_bid(&cfg, &cfg.out_dir, cfg.sigma)?;
            println!(
                "sigma {}: offered {:.4} MWh, objective {:.2} EUR -> {}",
                out.sigma,
                out.decision.total_offered(),
                out.decision.objective(),
                cfg.out_dir.display()
            );
            not_optimal(std::slice::from_ref(&out))
        }
        Command::DaBid { sweep: true } => {
            let cfg = load_config(cli)?;
            let outs = commands::cmd_da_sweep(&cfg, &cfg.out_dir)?;
            for o in &outs {
                println!("sigma {}: offered {:.4} MWh, objective {:.2} EUR", o.sigma, o.decision.total_offered(), o.decision.objective());
            }
            not_optimal(&outs)
        }
        Command::RtRun { da } => {
            let cfg = load_config(cli)?;
            let da = da.clone().unwrap_or_else(|| cfg.out_dir.join(commands::DECISION_FILE));
            let out = commands::cmd_rt_run(&cfg, &da, &cfg.out_dir, cfg.rt.gamma)?;
            let s = &out.summary;
            println!(
                "gamma {}: mean |imbalance| {:.3e} MWh, max v {:.4} (uncontrolled {:.4}) -> {}",
                s.gamma,
                s.mean_abs_imbalance_mwh,
                s.max_voltage_after_transient,
                s.uncontrolled_max_voltage,
                cfg.out_dir.display()
            );
            Ok(())
        }
        Command::Pipeline => {
            let cfg = load_config(cli)?;
            let runs = commands::cmd_pipeline(&cfg, &cfg.out_dir)?;
            for r in &runs {
                let s = &r.summary;
                println!(
                    "sigma {} gamma {}: offered {:.4} MWh, mean |imbalance| {:.3e} MWh, max v {:.4}",
                    r.sigma, s.gamma, r.da_total_offered, s.mean_abs_imbalance_mwh, s.max_voltage_after_transient
                );
            }
            println!("comparison -> {}", cfg.out_dir.join(commands::COMPARISON_FILE).display());
            Ok(())
        }
        Command::Validate { suite } => {
            let cfg = if cli.config.exists() { Some(load_config(cli)?) } else { None };
            let seed = cli.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(42);
            let report = validate::run_suite(*suite, cfg.as_ref(), seed)?;
            println!("{report}");
            if report.passed() {
                Ok(())
            } else {
                Err(CliError::ValidationFailed(suite.name().into()))
            }
        }
    }
}

fn not_optimal(outs: &[commands::DaOutcome]) -> Result<(), CliError> {
    let bad: usize = outs.iter().map(|o| o.decision.hours.iter().filter(|h| h.status != gridbid::solver::Status::Optimal).count()).sum();
    if bad > 0 {
        Err(CliError::NotOptimal(bad))
    } else {
        Ok(())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
