use std::io::{self, BufRead, IsTerminal, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use racemag_core::harness::{default_sweep, summaries_to_csv, CSV_HEADER};
use racemag_core::{sweep_and_emit, ExperimentConfig, ExperimentSummary, Session, StartOptions};

/// Step through contract message queues, reorder them, and diff the outcomes.
#[derive(Parser)]
#[command(name = "racemag", version, args_conflicts_with_subcommands = true)]
struct Cli {
    /// Contract assembly source.
    #[arg(long, required = true)]
    contract: Option<PathBuf>,
    /// Initial state JSON (default: zero balance, empty storage).
    #[arg(long)]
    init_state: Option<PathBuf>,
    /// Message queue JSON.
    #[arg(long)]
    queue: Option<PathBuf>,
    /// Fee schedule JSON.
    #[arg(long)]
    fees: Option<PathBuf>,
    /// Seed for `set queue --order random` and generated message ids.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config and write its CSV row.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the n1 = 1..512, n2 = 32 sweep and write the CSV.
    Sweep {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Override trials per config.
        #[arg(long)]
        trials: Option<u64>,
    },
    /// Serve the JSON session API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7333")]
        bind: SocketAddr,
        /// Directory of static assets served at `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        None => return repl(cli),
        Some(Command::Experiment { config, out }) => experiment(&config, &out),
        Some(Command::Sweep { out, seed, trials }) => sweep(&out, seed, trials),
        Some(Command::Serve { bind, static_dir }) => serve(bind, static_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn repl(cli: Cli) -> ExitCode {
    let opts = StartOptions {
        contract: cli.contract.expect("clap enforces --contract"),
        init_state: cli.init_state,
        queue: cli.queue,
        fees: cli.fees,
        seed: cli.seed,
        tmp_dir: None,
    };
    let (mut session, banner) = match Session::start(&opts) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let interactive = io::stdin().is_terminal();
    let mut stdout = io::stdout().lock();
    let _ = stdout.write_all(banner.as_bytes());
    let mut lines = io::stdin().lock().lines();
    loop {
        if interactive {
            let _ = write!(stdout, "racemag> ");
            let _ = stdout.flush();
        }
        let Some(Ok(line)) = lines.next() else { break };
        let out = session.execute(&line);
        let _ = stdout.write_all(out.text.as_bytes());
        let _ = stdout.flush();
        if out.exit {
            break;
        }
    }
    ExitCode::SUCCESS
}

fn print_summaries(summaries: &[ExperimentSummary]) {
    println!("{CSV_HEADER},censored");
    for (row, s) in summaries_to_csv(summaries).lines().skip(1).zip(summaries) {
        println!("{row},{}", s.censored_count);
    }
}

fn experiment(config: &Path, out: &Path) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(config).with_context(|| format!("{}", config.display()))?;
    let cfg = ExperimentConfig::from_json(&text).with_context(|| format!("{}", config.display()))?;
    let summaries = sweep_and_emit(&[cfg], out)?;
    print_summaries(&summaries);
    Ok(())
}

fn sweep(out: &Path, seed: u64, trials: Option<u64>) -> anyhow::Result<()> {
    let mut configs = default_sweep(seed);
    if let Some(t) = trials {
        if t == 0 {
            bail!("--trials must be at least 1");
        }
        configs.iter_mut().for_each(|c| c.trials = t);
    }
    let summaries = sweep_and_emit(&configs, out)?;
    print_summaries(&summaries);
    Ok(())
}

fn serve(bind: SocketAddr, static_dir: Option<PathBuf>) -> anyhow::Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(bind).await.with_context(|| format!("bind {bind}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        racemag_server::serve_on(listener, static_dir).await?;
        Ok(())
    })
}
