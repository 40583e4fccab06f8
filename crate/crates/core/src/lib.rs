//! Forecast-driven discrete portfolio construction.
//!
//! The pipeline runs in file-separated stages:
//!
//! 1. [`market_data`] loads daily OHLCV bars from CSV into an indexed table.
//! 2. [`preprocess`] turns prices into leakage-safe standardized feature
//!    windows with next-step return/volatility targets and chronological
//!    train/validation/test splits.
//! 3. [`vqc`] classically simulates a small parameterized quantum circuit
//!    and exposes exact Pauli-Z expectation features with parameter-shift
//!    gradients; [`forecaster`] trains a joint return + volatility predictor
//!    on top of those features.
//! 4. [`portfolio`] selects a tradable universe, estimates moments, and runs
//!    a costed walk-forward backtest; [`qubo`] encodes the mean-variance
//!    objective over bit-represented weights and [`annealer`] solves it with
//!    simulated annealing (exhaustive search doubles as a correctness
//!    oracle).
//! 5. [`audit`] signs every rebalance decision with a hash-based one-time
//!    signature chain and maintains an append-only, verifiable log.
//!
//! [`pipeline`] wires the stages together behind a single [`config::RunConfig`],
//! and [`synthetic`] provides deterministic market generators for fixtures.

pub mod annealer;
pub mod audit;
pub mod config;
pub mod forecaster;
pub mod market_data;
pub mod pipeline;
pub mod portfolio;
pub mod preprocess;
pub mod qubo;
pub mod synthetic;
pub mod vqc;

mod codec;
