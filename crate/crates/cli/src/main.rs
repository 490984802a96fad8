use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use cmtrack_cli::commands::{
    cmd_eval, cmd_loss_audit, cmd_simulate, cmd_sweep, cmd_track, loss_csv, sweep_csv, sweep_scenes, LossAudit,
    SweepAxes,
};
use cmtrack_cli::{exit_code, load_config, EXIT_OK, EXIT_USAGE};

/// Paired-frame tracking with a consistency-model sampler and an oracle head.
#[derive(Parser)]
#[command(name = "cmtrack", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key=value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Extra key=value setting, applied after the config file (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Log level: error, warn, info, debug, trace
    #[arg(long, global = true, default_value = "warn")]
    log: String,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes as MOTChallenge ground truth
    Simulate {
        /// Output root; scenes go to <out>/SIM-<seed>/gt/gt.txt
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes, seeded consecutively from --seed
        #[arg(long, default_value_t = 1)]
        sequences: usize,
    },
    /// Track every sequence under a ground-truth file or directory
    Track {
        #[arg(long)]
        gt: PathBuf,
        /// Output directory; results go to <out>/<name>.txt
        #[arg(long)]
        out: PathBuf,
    },
    /// Score result files against ground truth
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        res: PathBuf,
        /// CSV destination; without it the CSV goes to stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Vary sampler parameters one at a time
    Sweep {
        /// Ground truth to track; defaults to simulated scenes
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Simulated scenes when --gt is absent
        #[arg(long, default_value_t = 1)]
        sequences: usize,
        #[arg(long, value_delimiter = ',')]
        np: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        nss: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        nrp: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        bth: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-term consistency training loss over oracle noise and step index
    LossAudit {
        #[arg(long, value_delimiter = ',', default_values_t = LossAudit::default().noise)]
        noise: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = LossAudit::default().t_r)]
        tr: Vec<usize>,
        #[arg(long, default_value_t = LossAudit::default().draws)]
        draws: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => Ok(std::fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.common.config.as_deref(), &cli.common.set, cli.common.seed)?;
    match cli.command {
        Command::Simulate { out, sequences } => {
            for p in cmd_simulate(&cfg, &out, sequences)? {
                println!("{}", p.display());
            }
        }
        Command::Track { gt, out } => {
            for p in cmd_track(&cfg, &gt, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Eval { gt, res, out } => {
            let report = cmd_eval(&cfg, &gt, &res)?;
            if out.is_some() {
                print!("{}", report.to_table());
            }
            emit(out.as_deref(), &report.to_csv())?;
        }
        Command::Sweep {
            gt,
            sequences,
            np,
            nss,
            nrp,
            bth,
            out,
        } => {
            let axes = SweepAxes {
                n_p: np,
                n_ss: nss,
                n_rp: nrp,
                b_th: bth,
            };
            let scenes = sweep_scenes(&cfg, gt.as_deref(), sequences)?;
            emit(out.as_deref(), &sweep_csv(&cmd_sweep(&cfg, &scenes, &axes)?))?;
        }
        Command::LossAudit { noise, tr, draws, out } => {
            let audit = LossAudit { noise, t_r: tr, draws };
            emit(out.as_deref(), &loss_csv(&cmd_loss_audit(&cfg, &audit)?, draws))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { EXIT_OK as u8 });
        }
    };
    env_logger::Builder::new().parse_filters(&cli.common.log).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
