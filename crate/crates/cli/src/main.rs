//! Subcommand front-end for the pipeline. Stages communicate through files
//! in the configured output directory; every command is idempotent given
//! identical inputs and seed.
//!
//! Exit codes: 0 ok, 2 config error, 3 data error, 4 solver failure,
//! 5 audit failure.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use hqfs_core::config::RunConfig;
use hqfs_core::pipeline::{self, PipelineError};

#[derive(Parser)]
#[command(
    name = "hqfs",
    version,
    about = "Market forecasting with a simulated variational circuit, bit-encoded \
             QUBO allocation, costed walk-forward backtests, and signed audit logs"
)]
struct Cli {
    /// Run configuration file (TOML).
    #[arg(long, global = true, default_value = "hqfs.toml")]
    config: PathBuf,

    /// Override the training seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Repeat train + backtest over this many consecutive seeds
    /// (backtest only).
    #[arg(long, global = true)]
    seeds: Option<usize>,

    /// Override the output directory from the config file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// CSV column-mapping overrides as comma-separated pairs, e.g.
    /// `symbol=ticker,date=Date`. Keys: date, open, high, low, close,
    /// volume, symbol, date_format.
    #[arg(long, global = true)]
    schema: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate the OHLCV CSV into the prices artifact.
    Ingest,
    /// Build leakage-safe feature windows and targets from the prices
    /// artifact.
    Preprocess,
    /// Train the forecaster and write a seeded checkpoint.
    Train,
    /// Run the full decision loop over the test period and write the
    /// report, equity curve, and audit log.
    Backtest,
    /// Solve a QUBO text file with a registered solver.
    SolveQubo {
        /// QUBO problem file (documented sparse text format).
        #[arg(long = "in")]
        input: PathBuf,
        /// Registered solver name.
        #[arg(long, default_value = "sa")]
        solver: String,
    },
    /// Re-verify an audit log against a public key.
    VerifyAudit {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        pk: PathBuf,
        /// Directory of checkpoint files for digest recomputation.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HQFS_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    std::process::exit(match execute(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    });
}

fn load_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    if let Some(spec) = &cli.schema {
        apply_schema_overrides(&mut cfg, spec)?;
    }
    Ok(cfg)
}

fn apply_schema_overrides(cfg: &mut RunConfig, spec: &str) -> Result<(), PipelineError> {
    use hqfs_core::config::ConfigError;
    for pair in spec.split(',').filter(|p| !p.trim().is_empty()) {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            PipelineError::Config(ConfigError::Invalid(format!(
                "--schema entry `{pair}` is not key=value"
            )))
        })?;
        let value = value.trim().to_string();
        let schema = &mut cfg.data.schema;
        match key.trim() {
            "date" => schema.date = value,
            "open" => schema.open = value,
            "high" => schema.high = value,
            "low" => schema.low = value,
            "close" => schema.close = value,
            "volume" => schema.volume = value,
            "symbol" => schema.symbol = value,
            "date_format" => schema.date_format = value,
            other => {
                return Err(PipelineError::Config(ConfigError::Invalid(format!(
                    "--schema key `{other}` is not a CSV column"
                ))))
            }
        }
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), PipelineError> {
    match &cli.command {
        Command::Ingest => {
            let cfg = load_config(&cli)?;
            let report = pipeline::run_ingest(&cfg)?;
            println!(
                "ingested {} rows ({} invalid, {} duplicate dropped) into {} symbols x {} days",
                report.rows_kept,
                report.rows_dropped_invalid,
                report.rows_dropped_duplicate,
                report.symbol_count,
                report.day_count
            );
            Ok(())
        }
        Command::Preprocess => {
            let cfg = load_config(&cli)?;
            let summary = pipeline::run_preprocess(&cfg)?;
            println!(
                "built {} samples (train {} / val {} / test {}), {} features x {} lookback",
                summary.samples,
                summary.train,
                summary.val,
                summary.test,
                summary.feature_dim,
                summary.lookback
            );
            Ok(())
        }
        Command::Train => {
            let cfg = load_config(&cli)?;
            let summary = pipeline::run_train(&cfg)?;
            println!(
                "seed {}: best epoch {} of {} (val loss {:.6e})",
                summary.seed, summary.best_epoch, summary.epochs_run, summary.best_val_loss
            );
            Ok(())
        }
        Command::Backtest => {
            let cfg = load_config(&cli)?;
            match cli.seeds {
                Some(count) => {
                    let summary = pipeline::run_seeds(&cfg, count)?;
                    println!(
                        "{:<10} {:>10} {:>10}",
                        "metric", "mean", "std"
                    );
                    let rows = [
                        ("AnnRet", summary.mean.ann_return, summary.std.ann_return),
                        ("AnnVol", summary.mean.ann_vol, summary.std.ann_vol),
                        ("Sharpe", summary.mean.sharpe, summary.std.sharpe),
                        ("MaxDD", summary.mean.max_drawdown, summary.std.max_drawdown),
                        ("Turnover", summary.mean.turnover, summary.std.turnover),
                        (
                            "DirAcc",
                            summary.mean.directional_accuracy,
                            summary.std.directional_accuracy,
                        ),
                        ("CorrVol", summary.mean.corr_vol, summary.std.corr_vol),
                    ];
                    for (name, mean, std) in rows {
                        println!("{name:<10} {mean:>10.4} {std:>10.4}");
                    }
                    println!("seeds: {:?}", summary.seeds);
                }
                None => {
                    let artifacts = pipeline::run_backtest(&cfg)?;
                    let m = &artifacts.report.backtest.metrics;
                    println!(
                        "strategy {} (solver {}, seed {})",
                        artifacts.report.strategy, artifacts.report.solver, artifacts.report.seed
                    );
                    println!("  AnnRet    {:>9.4}", m.ann_return);
                    println!("  AnnVol    {:>9.4}", m.ann_vol);
                    println!("  Sharpe    {:>9.4}", m.sharpe);
                    println!("  MaxDD     {:>9.4}", m.max_drawdown);
                    println!("  Turnover  {:>9.4}", m.mean_turnover);
                    println!("  CostDrag  {:>9.4}", artifacts.report.backtest.cost_drag);
                    println!(
                        "  Rebalances {} ({} degenerate)",
                        artifacts.report.backtest.rebalances.len(),
                        artifacts
                            .report
                            .backtest
                            .rebalances
                            .iter()
                            .filter(|r| r.degenerate)
                            .count()
                    );
                    println!(
                        "  DirAcc    {:>9.4}",
                        artifacts.report.forecast.directional_accuracy
                    );
                }
            }
            Ok(())
        }
        Command::SolveQubo { input, solver } => {
            let mut solver_cfg = match RunConfig::load(&cli.config) {
                Ok(cfg) => cfg.solver.to_solver_config(),
                Err(_) => hqfs_core::annealer::SolverConfig::default(),
            };
            if let Some(seed) = cli.seed {
                solver_cfg.seed = seed;
            }
            let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            std::fs::create_dir_all(&out_dir).ok();
            let record_path = out_dir.join("solve_result.json");
            let record =
                pipeline::run_solve_qubo(input, solver, &solver_cfg, Some(&record_path))?;
            println!(
                "{}: dim {} best energy {:.6} (record {})",
                record.solver,
                record.dim,
                record.best_energy,
                record_path.display()
            );
            Ok(())
        }
        Command::VerifyAudit { log, pk, checkpoints } => {
            let report = pipeline::run_verify_audit(log, pk, checkpoints.as_deref())?;
            for (i, check) in report.records.iter().enumerate() {
                let digest = match check.digest_ok {
                    Some(true) => "digest ok",
                    Some(false) => "DIGEST MISMATCH",
                    None => "digest unchecked",
                };
                println!(
                    "record {i}: t={} signature {} / {digest}",
                    check.timestamp,
                    if check.signature_ok { "ok" } else { "INVALID" }
                );
            }
            if report.all_ok {
                println!("audit log verified: {} records", report.records.len());
                Ok(())
            } else {
                let failed = report
                    .records
                    .iter()
                    .filter(|c| !c.signature_ok || c.digest_ok == Some(false))
                    .count();
                Err(PipelineError::Audit(
                    hqfs_core::audit::AuditError::VerificationFailed {
                        failed,
                        total: report.records.len(),
                    },
                ))
            }
        }
    }
}
