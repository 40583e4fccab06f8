//! Run configuration: one TOML file drives every stage. Unknown keys are
//! rejected; each section carries documented defaults. Stage artifacts embed
//! section-scoped digests so downstream stages detect mismatched inputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::forecaster::TrainConfig;
use crate::market_data::CsvSchema;
use crate::preprocess::PreprocessParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// OHLCV CSV path.
    pub path: PathBuf,
    pub schema: CsvSchema,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { path: PathBuf::from("data/prices.csv"), schema: CsvSchema::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircuitSection {
    pub qubits: usize,
    pub depth: usize,
}

impl Default for CircuitSection {
    fn default() -> Self {
        Self { qubits: 4, depth: 2 }
    }
}

/// Allocation rule applied at each rebalance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Bit-encoded objective solved by the configured QUBO solver.
    Qubo,
    /// Continuous projected-gradient reference.
    MvPg,
    EqualWeight,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Qubo => "qubo",
            Strategy::MvPg => "mv-pg",
            Strategy::EqualWeight => "equal-weight",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortfolioSection {
    /// Top-M universe size.
    pub universe_size: usize,
    /// Bits per asset in the QUBO encoding.
    pub bits_per_asset: usize,
    /// Risk-return tradeoff.
    pub eta: f64,
    /// Budget penalty weight; 0 selects the automatic scale.
    pub penalty: f64,
    /// Days between rebalances (also the moment horizon).
    pub rebalance_every: usize,
    /// Proportional cost in basis points per unit turnover.
    pub cost_bps: f64,
    /// Trailing window for the correlation estimate.
    pub corr_window: usize,
    /// Correlation shrinkage toward identity.
    pub shrinkage: f64,
    /// Trailing window for the liquidity rank.
    pub liquidity_window: usize,
    pub strategy: Strategy,
    /// Iteration cap for the projected-gradient reference.
    pub mv_pg_steps: usize,
}

impl Default for PortfolioSection {
    fn default() -> Self {
        Self {
            universe_size: 30,
            bits_per_asset: 6,
            eta: 1.0,
            penalty: 0.0,
            rebalance_every: 21,
            cost_bps: 10.0,
            corr_window: 63,
            shrinkage: 0.1,
            liquidity_window: 63,
            strategy: Strategy::Qubo,
            mv_pg_steps: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub name: String,
    pub restarts: usize,
    pub sweeps: usize,
    pub t_start: f64,
    pub t_end_ratio: f64,
    pub seed: u64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let base = crate::annealer::SolverConfig::default();
        Self {
            name: "sa".into(),
            restarts: base.restarts,
            sweeps: base.sweeps,
            t_start: base.t_start,
            t_end_ratio: base.t_end_ratio,
            seed: base.seed,
        }
    }
}

impl SolverSection {
    pub fn to_solver_config(&self) -> crate::annealer::SolverConfig {
        crate::annealer::SolverConfig {
            restarts: self.restarts,
            sweeps: self.sweeps,
            t_start: self.t_start,
            t_end_ratio: self.t_end_ratio,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSection {
    pub enabled: bool,
    pub key_seed: u64,
    /// One-time key slots pre-generated in the chain.
    pub max_signatures: usize,
}

impl Default for AuditSection {
    fn default() -> Self {
        Self { enabled: true, key_seed: 42, max_signatures: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Epoch seconds embedded in artifacts; keep 0 for reproducible runs.
    pub run_timestamp: u64,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), run_timestamp: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub preprocess: PreprocessParams,
    pub circuit: CircuitSection,
    pub train: TrainConfig,
    pub portfolio: PortfolioSection,
    pub solver: SolverSection,
    pub audit: AuditSection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: RunConfig = toml::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.data.path.as_os_str().is_empty() {
            return bad("data.path must be set".into());
        }
        let p = &self.preprocess;
        if p.vol_window < 2 {
            return bad(format!("preprocess.vol_window must be >= 2, got {}", p.vol_window));
        }
        if p.lookback < 1 || p.lags < 1 {
            return bad("preprocess.lookback and lags must be >= 1".into());
        }
        if !(0.0..0.5).contains(&p.winsor_alpha) {
            return bad(format!("preprocess.winsor_alpha {} outside [0, 0.5)", p.winsor_alpha));
        }
        if !(p.eps > 0.0) {
            return bad("preprocess.eps must be > 0".into());
        }
        if p.train_end < 1 || p.val_end <= p.train_end {
            return bad(format!(
                "split must satisfy 1 <= train_end < val_end, got {} / {}",
                p.train_end, p.val_end
            ));
        }
        crate::vqc::CircuitSpec::new(self.circuit.qubits, self.circuit.depth)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let pf = &self.portfolio;
        if pf.universe_size < 1 || pf.bits_per_asset < 1 {
            return bad("portfolio.universe_size and bits_per_asset must be >= 1".into());
        }
        if pf.penalty < 0.0 || pf.cost_bps < 0.0 {
            return bad("portfolio.penalty and cost_bps must be >= 0".into());
        }
        if pf.rebalance_every < 1 || pf.mv_pg_steps < 1 {
            return bad("portfolio.rebalance_every and mv_pg_steps must be >= 1".into());
        }
        if pf.corr_window < 2 || pf.liquidity_window < 1 {
            return bad("portfolio.corr_window must be >= 2 and liquidity_window >= 1".into());
        }
        if !(0.0..=1.0).contains(&pf.shrinkage) {
            return bad(format!("portfolio.shrinkage {} outside [0, 1]", pf.shrinkage));
        }
        if self.solver.name.is_empty() {
            return bad("solver.name must be set".into());
        }
        self.solver
            .to_solver_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.audit.max_signatures < 1 {
            return bad("audit.max_signatures must be >= 1".into());
        }
        Ok(())
    }

    fn section_digest<T: Serialize>(section: &T) -> [u8; 32] {
        let text = toml::to_string(section).expect("config sections serialize");
        Sha256::digest(text.as_bytes()).into()
    }

    /// Digest of the full effective config (including any seed overrides).
    pub fn digest(&self) -> [u8; 32] {
        Self::section_digest(self)
    }

    /// Binds the prices artifact to the [data] section.
    pub fn data_digest(&self) -> [u8; 32] {
        Self::section_digest(&self.data)
    }

    /// Binds the samples artifact to [data] + [preprocess].
    pub fn preprocess_digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.data_digest());
        hasher.update(Self::section_digest(&self.preprocess));
        hasher.finalize().into()
    }

    /// Digest of every section that can influence computed results. The
    /// [audit] and [output] sections are excluded: signing and artifact
    /// placement must never change reported numbers.
    pub fn result_digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(Self::section_digest(&self.data));
        hasher.update(Self::section_digest(&self.preprocess));
        hasher.update(Self::section_digest(&self.circuit));
        hasher.update(Self::section_digest(&self.train));
        hasher.update(Self::section_digest(&self.portfolio));
        hasher.update(Self::section_digest(&self.solver));
        hasher.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let mut config = RunConfig::default();
        config.preprocess.train_end = 100;
        config.preprocess.val_end = 150;
        config.validate().unwrap();

        let text = toml::to_string(&config).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(config, back);
        assert_eq!(config.digest(), back.digest());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = "[portfolio]\nuniverse_size = 10\nnot_a_key = 5\n";
        assert!(toml::from_str::<RunConfig>(text).is_err());

        let text = "[nonsense]\nx = 1\n";
        assert!(toml::from_str::<RunConfig>(text).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let mut config = RunConfig::default();
        config.preprocess.train_end = 100;
        config.preprocess.val_end = 100;
        assert!(config.validate().is_err());

        let mut config = RunConfig::default();
        config.preprocess.train_end = 10;
        config.preprocess.val_end = 20;
        config.circuit.qubits = 30;
        assert!(config.validate().is_err());

        let mut config = RunConfig::default();
        config.preprocess.train_end = 10;
        config.preprocess.val_end = 20;
        config.portfolio.shrinkage = 1.5;
        assert!(config.validate().is_err());
    }

    #[test]
    fn seed_override_changes_full_digest_only() {
        let mut a = RunConfig::default();
        a.preprocess.train_end = 10;
        a.preprocess.val_end = 20;
        let mut b = a.clone();
        b.train.seed = 12345;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.preprocess_digest(), b.preprocess_digest());
        assert_eq!(a.data_digest(), b.data_digest());
    }

    #[test]
    fn load_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "[data]\npath = \"prices.csv\"\n\n[preprocess]\ntrain_end = 50\nval_end = 80\n\n[portfolio]\nstrategy = \"mv-pg\"\n",
        )
        .unwrap();
        let config = RunConfig::load(&path).unwrap();
        assert_eq!(config.portfolio.strategy, Strategy::MvPg);
        assert_eq!(config.preprocess.train_end, 50);
        // Defaults fill the rest.
        assert_eq!(config.portfolio.universe_size, 30);
        assert_eq!(config.solver.name, "sa");

        assert!(RunConfig::load(Path::new("/missing.toml")).is_err());
    }
}
