use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use replaylab_cli::output::DumpOptions;
use replaylab_cli::{cmd_gen_data, cmd_report, cmd_run, cmd_sweep, RunOptions, SweepOptions};

#[derive(Parser)]
#[command(
    name = "replaylab",
    version,
    about = "Replay retrieval experiments for continual learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds; overrides `seeds` in the config
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Also write the final parameters as model.json
    #[arg(long)]
    dump_model: bool,
    /// Also write the final memory contents as buffer.csv
    #[arg(long)]
    dump_buffer: bool,
}

impl Common {
    fn dumps(&self) -> DumpOptions {
        DumpOptions {
            model: self.dump_model,
            buffer: self.dump_buffer,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train once per seed and write results
    Run(Common),
    /// Run every MIR:IMIR ratio for every seed
    Sweep {
        #[command(flatten)]
        common: Common,
        /// e.g. `10:0,5:5,0:10,random`; defaults to 10:0,7:3,5:5,3:7,0:10,random
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<replaylab_cli::Ratio>>,
        /// Parallel runs; defaults to the number of cores
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Write a synthetic stream as CSV
    GenData {
        /// Synthetic stream spec (JSON); defaults are used when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge the metrics of finished run directories into one CSV
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Output CSV; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(c) => {
            let out = cmd_run(
                &c.config,
                &RunOptions {
                    out: c.out.clone(),
                    seeds: c.seeds.clone(),
                    dumps: c.dumps(),
                },
            )?;
            println!("{}", out.display());
        }
        Command::Sweep {
            common,
            ratios,
            jobs,
        } => {
            let outcome = cmd_sweep(
                &common.config,
                &SweepOptions {
                    out: common.out.clone(),
                    seeds: common.seeds.clone(),
                    ratios,
                    jobs,
                    dumps: common.dumps(),
                },
            )?;
            println!(
                "{} ({} cells run, {} reused)",
                outcome.out.display(),
                outcome.ran(),
                outcome.reused()
            );
        }
        Command::GenData { config, out } => cmd_gen_data(config.as_deref(), &out)?,
        Command::Report { dirs, out } => match out {
            Some(path) => cmd_report(&dirs, std::fs::File::create(&path)?)?,
            None => cmd_report(&dirs, io::stdout().lock())?,
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("REPLAYLAB_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
