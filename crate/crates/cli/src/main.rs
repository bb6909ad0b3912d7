use std::path::PathBuf;
use std::process::ExitCode;

use adequacy_cli::report::ADVISORY;
use adequacy_cli::{cmd_analyze, cmd_calibrate, cmd_compare, cmd_simulate, CliError, CliResult, LoadedConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adequacy", version, about = "Calibrate model variants, attribute their discrepancy and compare them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> CliResult<LoadedConfig> {
        LoadedConfig::load(&self.config, self.seed, self.out.as_deref())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic thermal-box ensemble, boundary and observation.
    Simulate(Common),
    /// Fit the emulator and run both samplers; writes posterior.adq.
    Calibrate(Common),
    /// Attribute the discrepancy to boundary inputs.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Archive to analyze; defaults to posterior.adq in the output directory.
        #[arg(long)]
        archive: Option<PathBuf>,
    },
    /// Bayes factors between two or more calibrated models.
    Compare {
        /// Config whose output directory receives the comparison.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "archive", required = true, num_args = 1..)]
        archives: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(c) => {
            let o = cmd_simulate(&c.load()?)?;
            for f in &o.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Calibrate(c) => {
            let o = cmd_calibrate(&c.load()?)?;
            print!("{}", o.text);
            println!("wrote {}", o.archive.display());
        }
        Command::Analyze { common, archive } => {
            let o = cmd_analyze(&common.load()?, archive.as_deref())?;
            print!("{}", o.text);
            println!("\n{ADVISORY}");
        }
        Command::Compare { config, seed, out, archives } => {
            let out = match (out, config) {
                (Some(o), _) => o,
                (None, Some(c)) => LoadedConfig::load(&c, seed, None)?.out_dir,
                (None, None) => return Err(CliError::Config("compare needs --out or --config".into())),
            };
            let o = cmd_compare(&archives, &out)?;
            print!("{}", o.text);
            println!("\n{ADVISORY}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
