use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use maxstab::Axis;
use maxstab_cli::{load_config, out_dir, run, CliError, Overrides, Result};

#[derive(Parser)]
#[command(name = "maxstab", version, about = "Simulate and diagnose stationary max-stable fields")]
struct Cli {
    /// Worker threads; falls back to MAXSTAB_THREADS, then all cores.
    #[arg(long, global = true, env = "MAXSTAB_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replications (paths for `diagnose`).
    #[arg(long)]
    reps: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides { seed: self.seed, out: self.out.clone(), reps: self.reps }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate fields on the configured window.
    Simulate(Common),
    /// Classify spectral paths drawn from the model or read from CSV files.
    Classify {
        #[command(flatten)]
        common: Common,
        /// Path files with columns x,value (or x1,x2,value).
        #[arg(long, num_args = 1..)]
        input: Vec<PathBuf>,
    },
    /// Split simulated fields by atom labels.
    Decompose {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_axis)]
        axis: Option<Axis>,
    },
    /// Run every diagnostic and write the report.
    Diagnose(Common),
    /// Verify a run directory and summarize it.
    Report { dir: PathBuf },
}

fn parse_axis(s: &str) -> std::result::Result<Axis, String> {
    match s {
        "hopf" => Ok(Axis::Hopf),
        "neveu" => Ok(Axis::Neveu),
        _ => Err(format!("unknown axis {s:?}; expected hopf or neveu")),
    }
}

fn required(c: &Common, diagnose: bool) -> Result<maxstab_cli::RunConfig> {
    let path = c.config.as_ref().ok_or_else(|| CliError::Usage("--config is required".into()))?;
    load_config(path, &c.overrides(), diagnose)
}

fn dispatch(cmd: Cmd) -> Result<()> {
    let rec = match cmd {
        Cmd::Simulate(c) => {
            let cfg = required(&c, false)?;
            run::cmd_simulate(&cfg, &out_dir(Some(&cfg), &c.overrides())?)?
        }
        Cmd::Classify { common, input } => {
            if !input.is_empty() && (common.seed.is_some() || common.reps.is_some()) {
                return Err(CliError::Conflict("--seed and --reps have no effect on paths read with --input".into()));
            }
            let cfg = match &common.config {
                Some(p) => Some(load_config(p, &common.overrides(), false)?),
                None => None,
            };
            run::cmd_classify(cfg.as_ref(), &input, &out_dir(cfg.as_ref(), &common.overrides())?)?
        }
        Cmd::Decompose { common, axis } => {
            let cfg = required(&common, false)?;
            run::cmd_decompose(&cfg, axis, &out_dir(Some(&cfg), &common.overrides())?)?
        }
        Cmd::Diagnose(c) => {
            let cfg = required(&c, true)?;
            run::cmd_diagnose(&cfg, &out_dir(Some(&cfg), &c.overrides())?)?
        }
        Cmd::Report { dir } => {
            let (_, text) = run::cmd_report(&dir)?;
            print!("{text}");
            return Ok(());
        }
    };
    eprintln!("{}: {} files in {:.2}s", rec.stage, rec.files.len(), rec.wall_clock_s);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
