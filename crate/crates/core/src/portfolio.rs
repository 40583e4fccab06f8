//! Per-rebalance universe selection, moment estimation, the continuous
//! mean-variance objective with a projected-gradient reference solver, the
//! equal-weight baseline, and a costed walk-forward backtest.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::PriceTable;

#[derive(Debug, Error)]
pub enum PortfolioError {
    #[error("universe is empty")]
    EmptyUniverse,
    #[error("weight vector invalid: {0}")]
    BadWeights(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("rebalance schedule is empty")]
    EmptySchedule,
    #[error("moment estimation: {0}")]
    Moments(String),
}

/// Long-only fully-invested weights: w >= 0, sum w = 1 within 1e-9.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self, PortfolioError> {
        if weights.is_empty() {
            return Err(PortfolioError::EmptyUniverse);
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(PortfolioError::BadWeights("negative or non-finite entry".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(PortfolioError::BadWeights(format!("sum {sum} != 1")));
        }
        Ok(Self(weights))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// w_i = 1/M.
pub fn equal_weight(universe_size: usize) -> Result<WeightVector, PortfolioError> {
    if universe_size == 0 {
        return Err(PortfolioError::EmptyUniverse);
    }
    WeightVector::new(vec![1.0 / universe_size as f64; universe_size])
}

/// Scored candidate for universe selection.
#[derive(Debug, Clone)]
pub struct UniverseCandidate {
    pub ticker: String,
    /// Median dollar volume over the trailing liquidity window.
    pub liquidity: f64,
    /// Signal strength |r_hat| / max(sigma_hat, eps).
    pub signal: f64,
}

/// Top-M by combined liquidity and signal rank (min-rank for ties, larger is
/// better), tie-broken by lexicographically smaller ticker. The returned
/// universe is sorted by ticker for stable downstream ordering. Shrinks M
/// with a warning when there are fewer candidates.
pub fn select_universe(candidates: &[UniverseCandidate], m: usize) -> Vec<String> {
    if candidates.is_empty() || m == 0 {
        return Vec::new();
    }
    let rank_of = |key: fn(&UniverseCandidate) -> f64| -> Vec<usize> {
        candidates
            .iter()
            .map(|c| candidates.iter().filter(|o| key(o) < key(c)).count())
            .collect()
    };
    let liq_rank = rank_of(|c| c.liquidity);
    let sig_rank = rank_of(|c| c.signal);

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let score_a = liq_rank[a] + sig_rank[a];
        let score_b = liq_rank[b] + sig_rank[b];
        score_b
            .cmp(&score_a)
            .then_with(|| candidates[a].ticker.cmp(&candidates[b].ticker))
    });

    let take = m.min(candidates.len());
    if take < m {
        log::warn!("only {take} candidates available; shrinking universe from {m}");
    }
    let mut selected: Vec<String> =
        order[..take].iter().map(|&i| candidates[i].ticker.clone()).collect();
    selected.sort();
    selected
}

/// Expected returns and covariance over an ordered universe.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub tickers: Vec<String>,
    pub mu: Vec<f64>,
    /// M x M row-major symmetric PSD matrix.
    pub sigma: Vec<f64>,
}

impl Moments {
    pub fn dim(&self) -> usize {
        self.tickers.len()
    }

    pub fn sigma_at(&self, i: usize, j: usize) -> f64 {
        self.sigma[i * self.dim() + j]
    }
}

/// Builds mu = horizon * r_hat and Sigma = D R D with D = diag(sqrt(horizon)
/// * sigma_hat) and R the shrunk sample correlation of the trailing return
/// windows: R <- (1 - gamma) R + gamma I.
pub fn estimate_moments(
    tickers: &[String],
    r_hat: &[f64],
    sigma_hat: &[f64],
    trailing: &[Vec<f64>],
    horizon_days: usize,
    shrinkage: f64,
) -> Result<Moments, PortfolioError> {
    let m = tickers.len();
    if m == 0 {
        return Err(PortfolioError::EmptyUniverse);
    }
    if r_hat.len() != m || sigma_hat.len() != m || trailing.len() != m {
        return Err(PortfolioError::DimensionMismatch(format!(
            "universe {m}, r_hat {}, sigma_hat {}, trailing {}",
            r_hat.len(),
            sigma_hat.len(),
            trailing.len()
        )));
    }
    let window = trailing[0].len();
    if window < 2 || trailing.iter().any(|t| t.len() != window) {
        return Err(PortfolioError::Moments(format!(
            "trailing windows must share a length >= 2, got {window}"
        )));
    }
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(PortfolioError::Moments(format!("shrinkage {shrinkage} outside [0, 1]")));
    }

    let h = horizon_days as f64;
    let mu: Vec<f64> = r_hat.iter().map(|r| h * r).collect();
    let scale: Vec<f64> = sigma_hat.iter().map(|s| h.sqrt() * s).collect();

    let means: Vec<f64> =
        trailing.iter().map(|t| t.iter().sum::<f64>() / window as f64).collect();
    let stds: Vec<f64> = trailing
        .iter()
        .zip(&means)
        .map(|(t, mean)| {
            (t.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (window as f64 - 1.0))
                .sqrt()
        })
        .collect();

    let mut sigma = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            let corr = if i == j {
                1.0
            } else if stds[i] <= 0.0 || stds[j] <= 0.0 {
                0.0
            } else {
                let cov = trailing[i]
                    .iter()
                    .zip(&trailing[j])
                    .map(|(a, b)| (a - means[i]) * (b - means[j]))
                    .sum::<f64>()
                    / (window as f64 - 1.0);
                cov / (stds[i] * stds[j])
            };
            let shrunk = if i == j { 1.0 } else { (1.0 - shrinkage) * corr };
            let value = scale[i] * scale[j] * shrunk;
            sigma[i * m + j] = value;
            sigma[j * m + i] = value;
        }
    }
    Ok(Moments { tickers: tickers.to_vec(), mu, sigma })
}

/// w' Sigma w - eta mu' w.
pub fn mv_objective(w: &[f64], moments: &Moments, eta: f64) -> f64 {
    let m = moments.dim();
    debug_assert_eq!(w.len(), m);
    let mut quad = 0.0;
    for i in 0..m {
        let mut row = 0.0;
        for j in 0..m {
            row += moments.sigma[i * m + j] * w[j];
        }
        quad += w[i] * row;
    }
    let lin: f64 = moments.mu.iter().zip(w).map(|(mu, wi)| mu * wi).sum();
    quad - eta * lin
}

/// Euclidean projection onto the probability simplex (sort-based threshold).
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.partial_cmp(a).expect("finite weights"));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (k as f64 + 1.0);
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

#[derive(Debug, Clone)]
pub struct MvPgOutcome {
    pub weights: WeightVector,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after each accepted step.
    pub trace: Vec<f64>,
}

/// Projected gradient descent on the simplex from the equal-weight start,
/// with a halving line search so the objective never increases.
pub fn solve_mv_pg(
    moments: &Moments,
    eta: f64,
    max_iters: usize,
) -> Result<MvPgOutcome, PortfolioError> {
    let m = moments.dim();
    if m == 0 {
        return Err(PortfolioError::EmptyUniverse);
    }
    let mut w: Vec<f64> = vec![1.0 / m as f64; m];
    let mut obj = mv_objective(&w, moments, eta);
    let mut converged = false;
    let mut iterations = 0usize;
    let mut trace = vec![obj];

    for it in 0..max_iters {
        iterations = it + 1;
        // gradient: 2 Sigma w - eta mu
        let mut grad = vec![0.0; m];
        for i in 0..m {
            let mut g = 0.0;
            for j in 0..m {
                g += moments.sigma[i * m + j] * w[j];
            }
            grad[i] = 2.0 * g - eta * moments.mu[i];
        }

        let mut step = 1.0;
        let mut improved = false;
        while step > 1e-18 {
            let trial: Vec<f64> =
                w.iter().zip(&grad).map(|(wi, gi)| wi - step * gi).collect();
            let projected = project_to_simplex(&trial);
            let trial_obj = mv_objective(&projected, moments, eta);
            if trial_obj <= obj {
                let delta: f64 = projected
                    .iter()
                    .zip(&w)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                w = projected;
                let prev = obj;
                obj = trial_obj;
                trace.push(obj);
                improved = true;
                if delta < 1e-12 || (prev - trial_obj) < 1e-15 {
                    converged = true;
                }
                break;
            }
            step *= 0.5;
        }
        if !improved || converged {
            converged = converged || !improved;
            break;
        }
    }

    if !converged {
        log::warn!("projected gradient hit the iteration cap; returning best iterate");
    }
    Ok(MvPgOutcome { weights: WeightVector::new(w)?, objective: obj, iterations, converged, trace })
}

/// Per-symbol daily simple returns aligned to the table calendar.
#[derive(Debug, Clone)]
pub struct ReturnsPanel {
    pub tickers: Vec<String>,
    /// returns[ticker_index][day_position]
    pub returns: Vec<Vec<Option<f64>>>,
    index: BTreeMap<String, usize>,
}

impl ReturnsPanel {
    pub fn from_table(table: &PriceTable) -> Self {
        let tickers = table.symbols().to_vec();
        let days = table.day_count();
        let mut returns = Vec::with_capacity(tickers.len());
        for s in 0..tickers.len() {
            let mut row = vec![None; days];
            for p in 1..days {
                if let (Some(prev), Some(cur)) = (table.bar(s, p - 1), table.bar(s, p)) {
                    row[p] = Some(cur.close / prev.close - 1.0);
                }
            }
            returns.push(row);
        }
        let index = tickers.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tickers, returns, index }
    }

    pub fn ticker_index(&self, ticker: &str) -> Option<usize> {
        self.index.get(ticker).copied()
    }

    pub fn day_count(&self) -> usize {
        self.returns.first().map_or(0, |r| r.len())
    }
}

/// Target weights to adopt at the close of `day`.
#[derive(Debug, Clone)]
pub struct RebalanceTarget {
    /// 1-based day index.
    pub day: u32,
    pub tickers: Vec<String>,
    pub weights: WeightVector,
    pub degenerate: bool,
    pub solver_energy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebalanceRecord {
    pub day: u32,
    pub tickers: Vec<String>,
    pub weights: Vec<f64>,
    pub turnover: f64,
    pub cost_fraction: f64,
    pub degenerate: bool,
    pub solver_energy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradingMetrics {
    pub ann_return: f64,
    pub ann_vol: f64,
    pub sharpe: f64,
    pub max_drawdown: f64,
    pub mean_turnover: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    /// 1-based day index per equity point; the first point is the close of
    /// the first rebalance day at equity 1.0.
    pub days: Vec<u32>,
    pub equity: Vec<f64>,
    pub rebalances: Vec<RebalanceRecord>,
    pub metrics: TradingMetrics,
    /// Sum of per-rebalance cost fractions.
    pub cost_drag: f64,
    /// Held-asset days with missing returns (marked to last price).
    pub missing_return_days: usize,
}

const TRADING_DAYS_PER_YEAR: f64 = 252.0;

/// Geometric annualization, sample-std volatility, SR with zero risk-free
/// rate (0 when AnnVol = 0), running-peak drawdown, mean turnover.
pub fn trading_metrics(equity: &[f64], turnovers: &[f64]) -> TradingMetrics {
    let mean_turnover = if turnovers.is_empty() {
        0.0
    } else {
        turnovers.iter().sum::<f64>() / turnovers.len() as f64
    };
    if equity.len() < 2 {
        return TradingMetrics {
            ann_return: 0.0,
            ann_vol: 0.0,
            sharpe: 0.0,
            max_drawdown: 0.0,
            mean_turnover,
        };
    }

    let n = equity.len() - 1;
    let total = equity[n] / equity[0];
    let ann_return = total.powf(TRADING_DAYS_PER_YEAR / n as f64) - 1.0;

    let daily: Vec<f64> = equity.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
    let ann_vol = if daily.len() < 2 {
        0.0
    } else {
        let mean = daily.iter().sum::<f64>() / daily.len() as f64;
        let var = daily.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
            / (daily.len() as f64 - 1.0);
        var.sqrt() * TRADING_DAYS_PER_YEAR.sqrt()
    };

    let sharpe = if ann_vol == 0.0 { 0.0 } else { ann_return / ann_vol };

    let mut peak = equity[0];
    let mut mdd: f64 = 0.0;
    for &e in equity {
        peak = peak.max(e);
        mdd = mdd.max((peak - e) / peak);
    }

    TradingMetrics { ann_return, ann_vol, sharpe, max_drawdown: mdd, mean_turnover }
}

/// Walk-forward accounting between rebalances: holdings drift with asset
/// returns, each rebalance pays `cost_bps * 1e-4` per unit of L1 turnover
/// against the drifted weights. The initial position is established at the
/// first rebalance with no turnover charge.
pub fn backtest(
    schedule: &[RebalanceTarget],
    panel: &ReturnsPanel,
    end_day: u32,
    cost_bps: f64,
) -> Result<BacktestReport, PortfolioError> {
    if schedule.is_empty() {
        return Err(PortfolioError::EmptySchedule);
    }
    for pair in schedule.windows(2) {
        if pair[1].day <= pair[0].day {
            return Err(PortfolioError::Moments(format!(
                "rebalance days must increase: {} then {}",
                pair[0].day, pair[1].day
            )));
        }
    }
    let n_assets = panel.tickers.len();
    let to_full = |target: &RebalanceTarget| -> Result<Vec<f64>, PortfolioError> {
        let mut full = vec![0.0; n_assets];
        for (ticker, w) in target.tickers.iter().zip(target.weights.values()) {
            let idx = panel.ticker_index(ticker).ok_or_else(|| {
                PortfolioError::DimensionMismatch(format!("ticker {ticker} not in panel"))
            })?;
            full[idx] = *w;
        }
        Ok(full)
    };

    let cost_rate = cost_bps * 1e-4;
    let first_day = schedule[0].day;
    let mut holdings = to_full(&schedule[0])?;
    let mut equity = vec![1.0];
    let mut days = vec![first_day];
    let mut rebalances = vec![RebalanceRecord {
        day: schedule[0].day,
        tickers: schedule[0].tickers.clone(),
        weights: schedule[0].weights.values().to_vec(),
        turnover: 0.0,
        cost_fraction: 0.0,
        degenerate: schedule[0].degenerate,
        solver_energy: schedule[0].solver_energy,
    }];
    let mut next_reb = 1usize;
    let mut missing_days = 0usize;
    let mut cost_drag = 0.0;

    let last_pos = (end_day as usize).min(panel.day_count());
    for pos in first_day as usize..last_pos {
        // pos is the 0-based position of day pos+1.
        let day = (pos + 1) as u32;
        let mut day_return = 0.0;
        for (i, w) in holdings.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            match panel.returns[i][pos] {
                Some(r) => day_return += w * r,
                None => missing_days += 1, // marked to last price
            }
        }
        let mut e = equity.last().unwrap() * (1.0 + day_return);
        // drift
        if 1.0 + day_return > 0.0 {
            for (i, w) in holdings.iter_mut().enumerate() {
                if *w > 0.0 {
                    let r = panel.returns[i][pos].unwrap_or(0.0);
                    *w = *w * (1.0 + r) / (1.0 + day_return);
                }
            }
        }

        if next_reb < schedule.len() && schedule[next_reb].day == day {
            let target = &schedule[next_reb];
            let target_full = to_full(target)?;
            let turnover: f64 = target_full
                .iter()
                .zip(&holdings)
                .map(|(t, h)| (t - h).abs())
                .sum();
            let cost = cost_rate * turnover;
            e *= 1.0 - cost;
            cost_drag += cost;
            holdings = target_full;
            rebalances.push(RebalanceRecord {
                day: target.day,
                tickers: target.tickers.clone(),
                weights: target.weights.values().to_vec(),
                turnover,
                cost_fraction: cost,
                degenerate: target.degenerate,
                solver_energy: target.solver_energy,
            });
            next_reb += 1;
        }

        equity.push(e);
        days.push(day);
    }

    if missing_days > 0 {
        log::warn!("{missing_days} held-asset days lacked return data; positions marked to last price");
    }

    let turnovers: Vec<f64> = rebalances.iter().map(|r| r.turnover).collect();
    let metrics = trading_metrics(&equity, &turnovers);
    Ok(BacktestReport {
        days,
        equity,
        rebalances,
        metrics,
        cost_drag,
        missing_return_days: missing_days,
    })
}
