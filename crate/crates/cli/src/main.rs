use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use regimenet_cli::{CliError, Overrides, RunConfig, Stage, Workspace};
use regimenet_core::backtest::BacktestMode;

/// Regime detection, Bayesian-network forecasting and backtesting for monthly macro series.
#[derive(Parser, Debug)]
#[command(name = "regimenet", version)]
struct Cli {
    /// Run configuration (JSON; whole-line `//` comments allowed).
    #[arg(long, global = true, default_value = "regimenet.json")]
    config: PathBuf,
    /// Never touch the network; series must come from the cache or fixtures.
    #[arg(long, global = true)]
    offline: bool,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Keep raw HMM state indices instead of mean-ordered regime labels.
    #[arg(long, global = true)]
    raw_labels: bool,
    /// Train each HMM on this many contiguous sections of its series.
    #[arg(long, global = true)]
    chunk: Option<usize>,
    /// `paper` replays the original loop; `corrected` lets exit signals close the position.
    #[arg(long, global = true)]
    backtest_mode: Option<BacktestMode>,
    /// Override the configured artifact root.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Override the configured download cache.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Download every configured series into the cache.
    Fetch,
    /// Clean, align and split cached series into panels.
    Ingest,
    /// Train per-series HMMs and decode every split into regimes.
    Discretize,
    /// Hill-climb a network structure from the expert seed.
    Learn,
    /// Estimate conditional probability tables.
    Fit,
    /// Predict next-month price regimes on validation and test.
    Predict,
    /// Trade the test predictions and compare with buy-and-hold.
    Backtest,
    /// All stages from fetch to backtest.
    Run,
    /// Print the learned structure in Graphviz DOT.
    ExportDot {
        /// Write here instead of stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Per-series date,value,regime files for plotting.
    PlotData,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(&cli.config)?;
    let overrides = Overrides {
        offline: cli.offline,
        seed: cli.seed,
        raw_labels: cli.raw_labels,
        chunk: cli.chunk,
        backtest_mode: cli.backtest_mode,
        out_dir: cli.out_dir,
        cache_dir: cli.cache_dir,
    };
    overrides.apply(&mut cfg)?;
    let ws = Workspace::new(cfg, overrides.offline);
    match cli.command {
        Command::Fetch => ws.run_stage(Stage::Fetch),
        Command::Ingest => ws.run_stage(Stage::Ingest),
        Command::Discretize => ws.run_stage(Stage::Discretize),
        Command::Learn => ws.run_stage(Stage::Learn),
        Command::Fit => ws.run_stage(Stage::Fit),
        Command::Predict => ws.run_stage(Stage::Predict),
        Command::Backtest => ws.run_stage(Stage::Backtest),
        Command::Run => ws.run_all(),
        Command::ExportDot { output } => {
            let dot = ws.export_dot()?;
            match output {
                Some(p) => fs::write(&p, dot)?,
                None => print!("{dot}"),
            }
            Ok(())
        }
        Command::PlotData => {
            for p in ws.plot_data()? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
