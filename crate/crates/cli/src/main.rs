use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;
use otsm_core::harness::{self, CodingSpec, SimConfig};

#[derive(Parser)]
#[command(name = "otsm", version, about = "OTSM link-level simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Uncoded BER sweep for each configured detector.
    BerSim(Common),
    /// Union bound on the BER of ML detection.
    Bound(Common),
    /// EXIT curves of detectors and decoder plus measured trajectories.
    Exit(Common),
    /// Coded BER sweep with turbo detection.
    TurboSim(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum number of worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> anyhow::Result<SimConfig> {
        let mut sc = harness::parse_config(&self.config)?;
        if let Some(s) = self.seed {
            sc.seed = s;
        }
        Ok(sc)
    }
}

fn pool(threads: Option<usize>) -> anyhow::Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            bail!("--threads must be positive");
        }
        b = b.num_threads(t);
    }
    Ok(b.build()?)
}

fn ensure_parent(out: &Path) -> anyhow::Result<()> {
    match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => {
            std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
        }
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (common, cmd) = match &cli.command {
        Command::BerSim(c) => (c, "ber-sim"),
        Command::Bound(c) => (c, "bound"),
        Command::Exit(c) => (c, "exit"),
        Command::TurboSim(c) => (c, "turbo-sim"),
    };
    let mut sc = common.load()?;
    ensure_parent(&common.out)?;
    info!("{} {cmd} seed {}", harness::version_string(), sc.seed);
    let pool = pool(common.threads)?;
    pool.install(|| -> anyhow::Result<()> {
        match cli.command {
            Command::BerSim(_) => {
                if sc.coding.is_some() {
                    bail!("ber-sim is uncoded; drop [coding] or use turbo-sim");
                }
                harness::run_ber_sweep(&sc)?.save(&common.out)?;
            }
            Command::TurboSim(_) => {
                if sc.coding.is_none() {
                    sc.coding = Some(CodingSpec::default());
                }
                sc.validate()?;
                harness::run_ber_sweep(&sc)?.save(&common.out)?;
            }
            Command::Bound(_) => harness::run_bound(&sc)?.save_csv(&common.out)?,
            Command::Exit(_) => {
                let report = harness::run_exit(&sc)?;
                report.write_csv(std::fs::File::create(&common.out)?)?;
            }
        }
        Ok(())
    })?;
    info!("wrote {}", common.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
