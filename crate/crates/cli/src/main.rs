use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sphcov_cli::commands;
use sphcov_cli::config::PriorKind;
use sphcov_cli::{CliError, CliResult, ExperimentConfig, Overrides};

/// Bayesian static and dynamic covariance estimation on spheres.
///
/// Exit status: 0 success, 2 validation failure, 3 input error,
/// 4 chain divergence.
#[derive(Parser, Debug)]
#[command(name = "sphcov", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate periodic data with known mean and covariance.
    GenPeriodic {
        #[command(flatten)]
        common: Common,
    },
    /// Check the inverse-Wishart chain against direct conjugate draws.
    ValidateIw {
        #[command(flatten)]
        common: Common,
    },
    /// Fit a static covariance to single-time-point data.
    FitStatic {
        #[command(flatten)]
        common: Common,
        /// Long-form CSV with one time point.
        #[arg(long)]
        data: PathBuf,
    },
    /// Fit the dynamic correlation model.
    FitDynamic {
        #[command(flatten)]
        common: Common,
        /// Long-form CSV (trial, time_index, time, channel, value).
        #[arg(long)]
        data: PathBuf,
        /// Directory holding truth_mean.csv and truth_cov.csv.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Recompute summaries from an archive without rerunning chains.
    Summarize {
        /// Archive written by fit-static or fit-dynamic.
        archive: PathBuf,
        /// Output directory; defaults to the archive.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// JSON configuration; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    /// Band width w of the Cholesky rows.
    #[arg(long)]
    band: Option<usize>,
    #[arg(long, value_enum)]
    prior: Option<PriorKind>,
    /// Fix the log standard deviations at their plug-in values.
    #[arg(long)]
    fix_variance: bool,
    /// Fix the means at their plug-in values.
    #[arg(long)]
    fix_mean: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn config(&self) -> CliResult<ExperimentConfig> {
        let o = Overrides {
            seed: self.seed,
            iters: self.iters,
            burnin: self.burnin,
            thin: self.thin,
            chains: self.chains,
            band: self.band,
            prior: self.prior,
            fix_variance: self.fix_variance,
            fix_mean: self.fix_mean,
        };
        ExperimentConfig::resolve(self.config.as_deref(), &o)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenPeriodic { common } => {
            let m = commands::gen_periodic(&common.config()?, &common.out)?;
            log::info!("wrote {} data rows", m.files[sphcov_cli::io::DATA_FILE]);
        }
        Command::ValidateIw { common } => {
            let cfg = common.config()?;
            let result = commands::validate_iw(&cfg, &common.out);
            if matches!(result, Ok(_) | Err(CliError::Validation(_))) {
                for r in commands::read_ks_table(&common.out)? {
                    println!(
                        "sigma_{}{}: KS {:.4} (p = {:.3})",
                        r.i, r.j, r.statistic, r.p_value
                    );
                }
            }
            result?;
        }
        Command::FitStatic { common, data } => {
            commands::fit_static(&common.config()?, &data, &common.out)?;
        }
        Command::FitDynamic {
            common,
            data,
            truth,
        } => {
            commands::fit_dynamic(&common.config()?, &data, &common.out, truth.as_deref())?;
        }
        Command::Summarize {
            archive,
            out,
            truth,
        } => {
            commands::summarize(&archive, out.as_deref(), truth.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
