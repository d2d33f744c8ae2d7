use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "sgdl", version, about = "Energy landscapes and long-run occupation of constant step-size SGD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; defaults to the config's output_dir, then ".".
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, env = "SGDL_THREADS")]
    threads: Option<usize>,
    /// Write every recorded iterate of every chain as CSV.
    #[arg(long, global = true)]
    dump_trajectories: bool,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Critical components -> components.json
    Critical,
    /// Cost matrix, energies and Gibbs weights -> landscape.json
    Energies,
    /// SGD chains over the step-size sweep -> occupation.json
    Simulate,
    /// Predicted against observed occupation -> report.json
    Compare,
    /// Next-visit slope fits -> slopes.json
    LdpSlope,
    /// All of the above in order.
    FullReport,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let Some(config) = cli.config.as_deref() else {
        eprintln!("error: --config is required");
        return ExitCode::from(1);
    };
    let run = || -> anyhow::Result<u8> {
        let ctx = commands::Context::load(config, cli.out.as_deref(), cli.dump_trajectories)?;
        Ok(match cli.command {
            Command::Critical => ctx.critical()?,
            Command::Energies => ctx.energies()?,
            Command::Simulate => ctx.simulate()?,
            Command::Compare => ctx.compare()?,
            Command::LdpSlope => ctx.ldp_slope()?,
            Command::FullReport => ctx.full_report()?,
        })
    };
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
