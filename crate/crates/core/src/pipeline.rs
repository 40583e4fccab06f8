//! File-separated pipeline stages behind one [`RunConfig`]: ingest ->
//! preprocess -> train -> backtest, plus standalone QUBO solving and audit
//! verification. Every artifact embeds the digest of the config sections
//! that produced it, so stage mismatches fail loudly instead of silently
//! mixing runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annealer::{SolveError, SolverConfig, SolverRegistry};
use crate::audit::{
    self, AuditError, AuditLogWriter, AuditRecord, LogVerifyReport, PublicKey,
};
use crate::codec;
use crate::config::{ConfigError, RunConfig, Strategy};
use crate::forecaster::{
    self, ForecastMetrics, ModelCheckpoint, TrainError,
};
use crate::market_data::{self, LoadReport, MarketDataError, PriceBar, PriceTable};
use crate::portfolio::{
    self, BacktestReport, PortfolioError, RebalanceTarget, ReturnsPanel, UniverseCandidate,
};
use crate::preprocess::{self, PreprocessError, Sample, SampleSet, Split};
use crate::qubo::{self, QuboError};
use crate::vqc::CircuitSpec;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] MarketDataError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Portfolio(#[from] PortfolioError),
    #[error(transparent)]
    Qubo(#[from] QuboError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("io on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("artifact mismatch: {0}")]
    Artifact(String),
}

impl PipelineError {
    /// Documented process exit codes: 0 ok, 2 config, 3 data, 4 solver,
    /// 5 audit.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_)
            | PipelineError::Preprocess(_)
            | PipelineError::Train(_)
            | PipelineError::Io { .. }
            | PipelineError::Artifact(_) => 3,
            PipelineError::Portfolio(_)
            | PipelineError::Qubo(_)
            | PipelineError::Solve(_) => 4,
            PipelineError::Audit(_) => 5,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<Vec<u8>, PipelineError> {
    std::fs::read(path).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<Vec<u8>, PipelineError> {
    let bytes = serde_json::to_vec_pretty(value).expect("reports serialize");
    write_file(path, &bytes)?;
    Ok(bytes)
}

fn digest_mismatch(what: &str, expected: &[u8; 32], found: &[u8; 32]) -> PipelineError {
    PipelineError::Artifact(format!(
        "{what} was produced under a different config (expected {}, found {})",
        hex::encode(expected),
        hex::encode(found)
    ))
}

// --- prices artifact ------------------------------------------------------

const PRICES_MAGIC: &[u8; 8] = b"HQFSPRC\0";
const PRICES_VERSION: u32 = 1;

pub fn prices_to_bytes(table: &PriceTable, config_digest: &[u8; 32]) -> Vec<u8> {
    let mut buf = Vec::new();
    codec::put_header(&mut buf, PRICES_MAGIC, PRICES_VERSION);
    buf.extend_from_slice(config_digest);
    codec::put_u32(&mut buf, table.symbols().len() as u32);
    for s in table.symbols() {
        codec::put_str(&mut buf, s);
    }
    let mut bars: Vec<(u32, &PriceBar)> = Vec::new();
    for (idx, _) in table.symbols().iter().enumerate() {
        for pos in 0..table.day_count() {
            if let Some(bar) = table.bar(idx, pos) {
                bars.push((idx as u32, bar));
            }
        }
    }
    codec::put_u32(&mut buf, bars.len() as u32);
    for (sym_idx, bar) in bars {
        codec::put_u32(&mut buf, sym_idx);
        use chrono::Datelike;
        codec::put_i64(&mut buf, bar.date.num_days_from_ce() as i64);
        codec::put_f64(&mut buf, bar.open);
        codec::put_f64(&mut buf, bar.high);
        codec::put_f64(&mut buf, bar.low);
        codec::put_f64(&mut buf, bar.close);
        match bar.volume {
            Some(v) => {
                codec::put_u8(&mut buf, 1);
                codec::put_f64(&mut buf, v);
            }
            None => codec::put_u8(&mut buf, 0),
        }
    }
    buf
}

pub fn prices_from_bytes(bytes: &[u8]) -> Result<(PriceTable, [u8; 32]), PipelineError> {
    let mut r = codec::Reader::new(bytes);
    r.header(PRICES_MAGIC, PRICES_VERSION).map_err(PreprocessError::Codec)?;
    let digest = r.array32().map_err(PreprocessError::Codec)?;
    let n_sym = r.u32().map_err(PreprocessError::Codec)? as usize;
    let mut symbols = Vec::with_capacity(n_sym);
    for _ in 0..n_sym {
        symbols.push(r.str().map_err(PreprocessError::Codec)?);
    }
    let n_bars = r.u32().map_err(PreprocessError::Codec)? as usize;
    let mut bars = Vec::with_capacity(n_bars);
    for _ in 0..n_bars {
        let sym_idx = r.u32().map_err(PreprocessError::Codec)? as usize;
        let days = r.i64().map_err(PreprocessError::Codec)?;
        let date = chrono::NaiveDate::from_num_days_from_ce_opt(days as i32)
            .ok_or_else(|| PipelineError::Artifact(format!("bad date value {days}")))?;
        let open = r.f64().map_err(PreprocessError::Codec)?;
        let high = r.f64().map_err(PreprocessError::Codec)?;
        let low = r.f64().map_err(PreprocessError::Codec)?;
        let close = r.f64().map_err(PreprocessError::Codec)?;
        let volume = if r.u8().map_err(PreprocessError::Codec)? == 1 {
            Some(r.f64().map_err(PreprocessError::Codec)?)
        } else {
            None
        };
        let symbol = symbols
            .get(sym_idx)
            .ok_or_else(|| PipelineError::Artifact(format!("symbol index {sym_idx}")))?
            .clone();
        bars.push(PriceBar { date, open, high, low, close, volume, symbol });
    }
    let (table, _) = PriceTable::from_bars(bars);
    Ok((table, digest))
}

// --- stage entry points ----------------------------------------------------

pub fn artifact_paths(cfg: &RunConfig) -> ArtifactPaths {
    let dir = cfg.output.dir.clone();
    ArtifactPaths {
        prices: dir.join("prices.bin"),
        load_report: dir.join("load_report.json"),
        samples: dir.join("samples.bin"),
        checkpoint: dir.join(format!("checkpoint_s{}.bin", cfg.train.seed)),
        train_history: dir.join(format!("train_history_s{}.json", cfg.train.seed)),
        backtest_report: dir.join(format!("backtest_report_s{}.json", cfg.train.seed)),
        equity_csv: dir.join(format!("equity_s{}.csv", cfg.train.seed)),
        audit_log: dir.join(format!("audit_s{}.log", cfg.train.seed)),
        audit_pk: dir.join("audit_pk.bin"),
        seeds_summary: dir.join("seeds_summary.json"),
        dir,
    }
}

pub struct ArtifactPaths {
    pub dir: PathBuf,
    pub prices: PathBuf,
    pub load_report: PathBuf,
    pub samples: PathBuf,
    pub checkpoint: PathBuf,
    pub train_history: PathBuf,
    pub backtest_report: PathBuf,
    pub equity_csv: PathBuf,
    pub audit_log: PathBuf,
    pub audit_pk: PathBuf,
    pub seeds_summary: PathBuf,
}

/// Loads the CSV, validates rows, and writes the prices artifact.
pub fn run_ingest(cfg: &RunConfig) -> Result<LoadReport, PipelineError> {
    let paths = artifact_paths(cfg);
    std::fs::create_dir_all(&paths.dir).map_err(io_err(&paths.dir))?;
    let (table, report) = market_data::load_ohlcv(&cfg.data.path, &cfg.data.schema)?;
    write_file(&paths.prices, &prices_to_bytes(&table, &cfg.data_digest()))?;
    write_json(&paths.load_report, &report)?;
    log::info!(
        "ingested {} rows into {} symbols x {} days",
        report.rows_kept,
        report.symbol_count,
        report.day_count
    );
    Ok(report)
}

fn load_prices_checked(cfg: &RunConfig) -> Result<PriceTable, PipelineError> {
    let paths = artifact_paths(cfg);
    let (table, digest) = prices_from_bytes(&read_file(&paths.prices)?)?;
    let expected = cfg.data_digest();
    if digest != expected {
        return Err(digest_mismatch("prices artifact", &expected, &digest));
    }
    Ok(table)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub samples: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub feature_dim: usize,
    pub lookback: usize,
}

/// Builds the sample set from the prices artifact and writes it out.
pub fn run_preprocess(cfg: &RunConfig) -> Result<PreprocessSummary, PipelineError> {
    let paths = artifact_paths(cfg);
    let table = load_prices_checked(cfg)?;
    let set = preprocess::preprocess(&table, &cfg.preprocess)?;
    write_file(&paths.samples, &set.to_bytes(&cfg.preprocess_digest()))?;
    let summary = PreprocessSummary {
        samples: set.samples.len(),
        train: set.of_split(Split::Train).len(),
        val: set.of_split(Split::Val).len(),
        test: set.of_split(Split::Test).len(),
        feature_dim: set.feature_dim,
        lookback: set.lookback,
    };
    log::info!(
        "preprocessed {} samples (train {} / val {} / test {})",
        summary.samples,
        summary.train,
        summary.val,
        summary.test
    );
    Ok(summary)
}

fn load_samples_checked(cfg: &RunConfig) -> Result<SampleSet, PipelineError> {
    let paths = artifact_paths(cfg);
    let (set, digest) = SampleSet::from_bytes(&read_file(&paths.samples)?)?;
    let expected = cfg.preprocess_digest();
    if digest != expected {
        return Err(digest_mismatch("samples artifact", &expected, &digest));
    }
    Ok(set)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
}

/// Trains the forecaster on the samples artifact and writes the checkpoint.
pub fn run_train(cfg: &RunConfig) -> Result<TrainSummary, PipelineError> {
    let paths = artifact_paths(cfg);
    let samples = load_samples_checked(cfg)?;
    let circuit = CircuitSpec::new(cfg.circuit.qubits, cfg.circuit.depth)
        .map_err(TrainError::Vqc)?;
    let outcome = forecaster::train(&samples, circuit, &cfg.train, cfg.output.run_timestamp)?;
    write_file(&paths.checkpoint, &outcome.checkpoint.canonical_bytes())?;
    write_json(&paths.train_history, &outcome.history)?;
    log::info!(
        "trained: best epoch {} (val loss {:.6e})",
        outcome.best_epoch,
        outcome.best_val_loss
    );
    Ok(TrainSummary {
        seed: cfg.train.seed,
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        epochs_run: outcome.history.len(),
    })
}

fn load_checkpoint_checked(
    cfg: &RunConfig,
    samples: &SampleSet,
) -> Result<(ModelCheckpoint, Vec<u8>), PipelineError> {
    let paths = artifact_paths(cfg);
    let bytes = read_file(&paths.checkpoint)?;
    let checkpoint = ModelCheckpoint::from_bytes(&bytes)?;
    let std_digest = samples.standardizer.digest();
    if checkpoint.standardizer_digest != std_digest {
        return Err(digest_mismatch(
            "checkpoint standardizer",
            &std_digest,
            &checkpoint.standardizer_digest,
        ));
    }
    let train_digest = cfg.train.digest();
    if checkpoint.train_config_digest != train_digest {
        return Err(digest_mismatch(
            "checkpoint train config",
            &train_digest,
            &checkpoint.train_config_digest,
        ));
    }
    Ok((checkpoint, bytes))
}

/// Median dollar volume over the trailing window ending at `day`; requires
/// at least half the window present.
fn median_dollar_volume(
    table: &PriceTable,
    sym_idx: usize,
    day: u32,
    window: usize,
) -> Option<f64> {
    let end = day as usize; // exclusive position bound: positions end-window..end
    let start = end.checked_sub(window)?;
    let mut values: Vec<f64> = (start..end)
        .filter_map(|pos| {
            table.bar(sym_idx, pos).and_then(|b| b.volume.map(|v| v * b.close))
        })
        .collect();
    if values.len() < (window / 2).max(2) {
        return None;
    }
    values.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite volumes"));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Last `window` raw log returns ending at `day`, all present.
fn trailing_returns(values: &[Option<f64>], day: u32, window: usize) -> Option<Vec<f64>> {
    let end = day as usize;
    let start = end.checked_sub(window)?;
    let slice = &values[start..end];
    if slice.iter().any(|v| v.is_none()) {
        return None;
    }
    Some(slice.iter().map(|v| v.unwrap()).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FullReport {
    pub config_digest: String,
    pub seed: u64,
    pub strategy: String,
    pub solver: String,
    pub forecast: ForecastMetrics,
    pub backtest: BacktestReport,
}

pub struct BacktestArtifacts {
    pub report: FullReport,
    pub report_bytes: Vec<u8>,
    pub report_digest: [u8; 32],
}

/// Full decision loop over the test period: per rebalance day select the
/// universe, estimate moments, allocate by the configured strategy, then run
/// the costed walk-forward accounting and (optionally) sign every decision
/// into the audit log.
pub fn run_backtest(cfg: &RunConfig) -> Result<BacktestArtifacts, PipelineError> {
    let paths = artifact_paths(cfg);
    let table = load_prices_checked(cfg)?;
    let samples = load_samples_checked(cfg)?;
    let (checkpoint, ckpt_bytes) = load_checkpoint_checked(cfg, &samples)?;

    let panel = ReturnsPanel::from_table(&table);
    let log_returns: Vec<Option<Vec<Option<f64>>>> = table
        .symbols()
        .iter()
        .map(|sym| {
            let series = table.get_series(sym).expect("symbol from table");
            preprocess::log_returns(&series).ok().map(|r| r.values)
        })
        .collect();

    let mut by_day: BTreeMap<u32, Vec<&Sample>> = BTreeMap::new();
    for sample in &samples.samples {
        if sample.split == Split::Test {
            by_day.entry(sample.day).or_default().push(sample);
        }
    }

    let day_count = table.day_count() as u32;
    let pf = &cfg.portfolio;
    let mut rebalance_days = Vec::new();
    let mut day = cfg.preprocess.val_end + 1;
    while day < day_count {
        rebalance_days.push(day);
        day += pf.rebalance_every as u32;
    }

    let registry = SolverRegistry::default();
    let mut schedule: Vec<RebalanceTarget> = Vec::new();

    for &day in &rebalance_days {
        let day_samples = match by_day.get(&day) {
            Some(s) => s,
            None => {
                log::warn!("no candidates with valid windows on day {day}; skipping");
                continue;
            }
        };

        struct Candidate<'a> {
            ticker: &'a str,
            liquidity: f64,
            r_hat: f64,
            sigma_hat: f64,
            trailing: Vec<f64>,
        }
        let mut candidates: Vec<Candidate> = Vec::new();
        for sample in day_samples {
            let sym_idx = sample.symbol_idx as usize;
            let liquidity =
                match median_dollar_volume(&table, sym_idx, day, pf.liquidity_window) {
                    Some(l) => l,
                    None => continue,
                };
            let trailing = match log_returns[sym_idx]
                .as_ref()
                .and_then(|v| trailing_returns(v, day, pf.corr_window))
            {
                Some(t) => t,
                None => continue,
            };
            let (r_hat, sigma_hat) = checkpoint.model.predict(&sample.window)?;
            candidates.push(Candidate {
                ticker: &samples.symbols[sym_idx],
                liquidity,
                r_hat,
                sigma_hat,
                trailing,
            });
        }
        if candidates.is_empty() {
            log::warn!("no eligible candidates on day {day}; skipping rebalance");
            continue;
        }

        let scored: Vec<UniverseCandidate> = candidates
            .iter()
            .map(|c| UniverseCandidate {
                ticker: c.ticker.to_string(),
                liquidity: c.liquidity,
                signal: c.r_hat.abs() / c.sigma_hat.max(1e-8),
            })
            .collect();
        let selected = portfolio::select_universe(&scored, pf.universe_size);

        let mut r_hats = Vec::with_capacity(selected.len());
        let mut sigma_hats = Vec::with_capacity(selected.len());
        let mut trailing = Vec::with_capacity(selected.len());
        for ticker in &selected {
            let c = candidates
                .iter()
                .find(|c| c.ticker == ticker)
                .expect("selected from candidates");
            r_hats.push(c.r_hat);
            sigma_hats.push(c.sigma_hat);
            trailing.push(c.trailing.clone());
        }
        let moments = portfolio::estimate_moments(
            &selected,
            &r_hats,
            &sigma_hats,
            &trailing,
            pf.rebalance_every,
            pf.shrinkage,
        )?;

        let (weights, degenerate, solver_energy) = match pf.strategy {
            Strategy::Qubo => {
                let penalty = if pf.penalty > 0.0 {
                    pf.penalty
                } else {
                    qubo::auto_penalty(&moments, pf.eta, pf.bits_per_asset)
                };
                let problem =
                    qubo::encode_qubo(&moments, pf.eta, pf.bits_per_asset, penalty)?;
                // Distinct deterministic stream per rebalance day.
                let solver_cfg = SolverConfig {
                    seed: cfg.solver.seed.wrapping_add(day as u64),
                    ..cfg.solver.to_solver_config()
                };
                let result = registry.solve_with(&cfg.solver.name, &problem, &solver_cfg)?;
                let decoded = qubo::decode_weights(
                    &result.solution.bits,
                    moments.dim(),
                    pf.bits_per_asset,
                )?;
                (decoded.weights, decoded.degenerate, Some(result.solution.energy))
            }
            Strategy::MvPg => {
                let out = portfolio::solve_mv_pg(&moments, pf.eta, pf.mv_pg_steps)?;
                (out.weights, false, None)
            }
            Strategy::EqualWeight => (portfolio::equal_weight(moments.dim())?, false, None),
        };

        schedule.push(RebalanceTarget {
            day,
            tickers: selected,
            weights,
            degenerate,
            solver_energy,
        });
    }

    let report = portfolio::backtest(&schedule, &panel, day_count, pf.cost_bps)?;

    if cfg.audit.enabled {
        if schedule.len() > cfg.audit.max_signatures {
            return Err(PipelineError::Audit(AuditError::OutOfSlots));
        }
        let mut chain = audit::keygen(cfg.audit.key_seed, cfg.audit.max_signatures);
        let pk = chain.public_key();
        write_file(&paths.audit_pk, &pk.to_bytes())?;
        let ckpt_digest: [u8; 32] = Sha256::digest(&ckpt_bytes).into();
        let mut writer = AuditLogWriter::create(&paths.audit_log, pk.root)?;
        for target in &schedule {
            let timestamp = table.epoch_seconds(target.day as usize - 1);
            let digest =
                audit::canonical_hash(&ckpt_bytes, target.weights.values(), timestamp);
            let signature = chain.sign_next(&digest)?;
            writer.append(&AuditRecord {
                timestamp,
                checkpoint_digest: ckpt_digest,
                weights: target.weights.values().to_vec(),
                digest,
                signature,
            })?;
        }
    }

    let test_samples = samples.of_split(Split::Test);
    let forecast = forecaster::evaluate(&checkpoint.model, &test_samples)?;

    let full = FullReport {
        config_digest: hex::encode(cfg.result_digest()),
        seed: cfg.train.seed,
        strategy: pf.strategy.name().to_string(),
        solver: cfg.solver.name.clone(),
        forecast,
        backtest: report,
    };
    let report_bytes = write_json(&paths.backtest_report, &full)?;

    let mut equity_csv = String::from("day,equity\n");
    for (day, equity) in full.backtest.days.iter().zip(&full.backtest.equity) {
        equity_csv.push_str(&format!("{day},{equity}\n"));
    }
    write_file(&paths.equity_csv, equity_csv.as_bytes())?;

    let report_digest: [u8; 32] = Sha256::digest(&report_bytes).into();
    log::info!(
        "backtest: {} rebalances, SR {:.3}, MDD {:.3}",
        full.backtest.rebalances.len(),
        full.backtest.metrics.sharpe,
        full.backtest.metrics.max_drawdown
    );
    Ok(BacktestArtifacts { report: full, report_bytes, report_digest })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub ann_return: f64,
    pub ann_vol: f64,
    pub sharpe: f64,
    pub max_drawdown: f64,
    pub turnover: f64,
    pub directional_accuracy: f64,
    pub corr_vol: f64,
}

impl MetricRow {
    fn from_report(report: &FullReport) -> Self {
        let m = report.backtest.metrics;
        Self {
            ann_return: m.ann_return,
            ann_vol: m.ann_vol,
            sharpe: m.sharpe,
            max_drawdown: m.max_drawdown,
            turnover: m.mean_turnover,
            directional_accuracy: report.forecast.directional_accuracy,
            corr_vol: report.forecast.corr_vol,
        }
    }

    fn fields(&self) -> [f64; 7] {
        [
            self.ann_return,
            self.ann_vol,
            self.sharpe,
            self.max_drawdown,
            self.turnover,
            self.directional_accuracy,
            self.corr_vol,
        ]
    }

    fn from_fields(f: [f64; 7]) -> Self {
        Self {
            ann_return: f[0],
            ann_vol: f[1],
            sharpe: f[2],
            max_drawdown: f[3],
            turnover: f[4],
            directional_accuracy: f[5],
            corr_vol: f[6],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedsSummary {
    pub seeds: Vec<u64>,
    pub per_seed: Vec<MetricRow>,
    pub mean: MetricRow,
    pub std: MetricRow,
}

/// Repeats train + backtest across `count` seeds starting at the configured
/// one and reports mean and standard deviation per metric.
pub fn run_seeds(cfg: &RunConfig, count: usize) -> Result<SeedsSummary, PipelineError> {
    if count == 0 {
        return Err(PipelineError::Config(ConfigError::Invalid(
            "seed count must be >= 1".into(),
        )));
    }
    let mut seeds = Vec::with_capacity(count);
    let mut rows = Vec::with_capacity(count);
    for i in 0..count {
        let mut seeded = cfg.clone();
        seeded.train.seed = cfg.train.seed + i as u64;
        run_train(&seeded)?;
        let artifacts = run_backtest(&seeded)?;
        seeds.push(seeded.train.seed);
        rows.push(MetricRow::from_report(&artifacts.report));
        log::info!(
            "seed {}: SR {:.3}",
            seeded.train.seed,
            artifacts.report.backtest.metrics.sharpe
        );
    }

    let n = rows.len() as f64;
    let mut mean = [0.0; 7];
    for row in &rows {
        for (m, v) in mean.iter_mut().zip(row.fields()) {
            *m += v / n;
        }
    }
    let mut var = [0.0; 7];
    for row in &rows {
        for ((s, v), m) in var.iter_mut().zip(row.fields()).zip(mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let summary = SeedsSummary {
        seeds,
        per_seed: rows,
        mean: MetricRow::from_fields(mean),
        std: MetricRow::from_fields(var.map(f64::sqrt)),
    };
    write_json(&artifact_paths(cfg).seeds_summary, &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveRecord {
    pub solver: String,
    pub dim: usize,
    pub best_energy: f64,
    /// Bitstring as '0'/'1' characters, variable 0 first.
    pub bits: String,
    pub restart_energies: Vec<f64>,
    pub seed: u64,
}

/// Solves a QUBO text file with a registered solver and writes the record.
pub fn run_solve_qubo(
    input: &Path,
    solver_name: &str,
    solver_cfg: &SolverConfig,
    out: Option<&Path>,
) -> Result<SolveRecord, PipelineError> {
    let text = std::fs::read_to_string(input).map_err(io_err(input))?;
    let problem = qubo::QuboProblem::from_text(&text)?;
    let registry = SolverRegistry::default();
    let result = registry.solve_with(solver_name, &problem, solver_cfg)?;
    log::info!(
        "{} solved dim {} in {:.3}s: energy {:.6}",
        solver_name,
        problem.dim(),
        result.wall_time.as_secs_f64(),
        result.solution.energy
    );
    let record = SolveRecord {
        solver: result.solver,
        dim: problem.dim(),
        best_energy: result.solution.energy,
        bits: result.solution.bits.iter().map(|b| if *b { '1' } else { '0' }).collect(),
        restart_energies: result.restart_energies,
        seed: solver_cfg.seed,
    };
    if let Some(path) = out {
        write_json(path, &record)?;
    }
    Ok(record)
}

/// Verifies an audit log against a public key; when a checkpoints directory
/// is given, digests are recomputed from the matching checkpoint bytes.
pub fn run_verify_audit(
    log_path: &Path,
    pk_path: &Path,
    checkpoints_dir: Option<&Path>,
) -> Result<LogVerifyReport, PipelineError> {
    let pk = PublicKey::from_bytes(&read_file(pk_path)?)?;
    let (root, records) = audit::read_log(log_path)?;
    if root != pk.root {
        return Err(PipelineError::Audit(AuditError::RootMismatch));
    }

    let mut by_digest: BTreeMap<[u8; 32], Vec<u8>> = BTreeMap::new();
    if let Some(dir) = checkpoints_dir {
        let entries = std::fs::read_dir(dir).map_err(io_err(dir))?;
        for entry in entries {
            let entry = entry.map_err(io_err(dir))?;
            let path = entry.path();
            if path.extension().map_or(false, |e| e == "bin") {
                if let Ok(bytes) = std::fs::read(&path) {
                    by_digest.insert(Sha256::digest(&bytes).into(), bytes);
                }
            }
        }
    }

    let report = audit::verify_log(&records, &pk, |digest| by_digest.get(digest).cloned());
    Ok(report)
}
