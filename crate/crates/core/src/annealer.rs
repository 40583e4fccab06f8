//! Pluggable QUBO solvers: Metropolis single-bit-flip simulated annealing
//! with a geometric temperature schedule, and Gray-code exhaustive search as
//! the correctness oracle. Both are deterministic given the seed.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qubo::{flip_delta, qubo_energy, BitSolution, QuboError, QuboProblem};

/// Full enumeration above this many variables is refused (~16.7M states).
pub const EXHAUSTIVE_CAP: usize = 24;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("unknown solver `{name}`; available: {available}")]
    UnknownSolver { name: String, available: String },
    #[error("problem dimension {dim} exceeds the exhaustive cap {cap}")]
    DimTooLarge { dim: usize, cap: usize },
    #[error("bad solver config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Qubo(#[from] QuboError),
}

/// Annealing schedule and restart budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub restarts: usize,
    /// Sweeps per restart; one sweep proposes `dim` flips.
    pub sweeps: usize,
    /// Starting temperature; 0 = estimate from random flip probes.
    pub t_start: f64,
    /// T_end = t_end_ratio * T_start (geometric cooling).
    pub t_end_ratio: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { restarts: 32, sweeps: 200, t_start: 0.0, t_end_ratio: 1e-3, seed: 0 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        if self.restarts == 0 || self.sweeps == 0 {
            return Err(SolveError::BadConfig("restarts and sweeps must be >= 1".into()));
        }
        if self.t_start < 0.0 || !self.t_start.is_finite() {
            return Err(SolveError::BadConfig("t_start must be finite and >= 0".into()));
        }
        if !(self.t_end_ratio > 0.0 && self.t_end_ratio < 1.0) {
            return Err(SolveError::BadConfig("t_end_ratio must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub solution: BitSolution,
    /// Best energy found by each restart (single entry for exhaustive).
    pub restart_energies: Vec<f64>,
    pub wall_time: Duration,
    pub solver: String,
}

/// Incremental local-field state: fields[p] is the energy change of setting
/// bit p from 0 to 1 given the rest of x.
struct FlipState {
    x: Vec<bool>,
    fields: Vec<f64>,
    energy: f64,
}

impl FlipState {
    fn new(problem: &QuboProblem, x: Vec<bool>) -> Self {
        let dim = problem.dim();
        let mut fields = vec![0.0; dim];
        for p in 0..dim {
            let mut f = problem.q(p, p);
            for (r, set) in x.iter().enumerate() {
                if *set && r != p {
                    f += 2.0 * problem.q(p, r);
                }
            }
            fields[p] = f;
        }
        let energy = qubo_energy(problem, &x).expect("length matches problem");
        Self { x, fields, energy }
    }

    fn delta(&self, p: usize) -> f64 {
        if self.x[p] {
            -self.fields[p]
        } else {
            self.fields[p]
        }
    }

    fn flip(&mut self, problem: &QuboProblem, p: usize) {
        let delta = self.delta(p);
        let sign = if self.x[p] { -1.0 } else { 1.0 };
        self.x[p] = !self.x[p];
        self.energy += delta;
        for r in 0..self.fields.len() {
            if r != p {
                self.fields[r] += 2.0 * problem.q(r, p) * sign;
            }
        }
        // Incremental bookkeeping must agree with a full recompute; the
        // quadratic-cost check runs per flip only on small problems.
        if cfg!(debug_assertions) && problem.dim() <= 64 {
            let full = qubo_energy(problem, &self.x).unwrap();
            debug_assert!(
                (full - self.energy).abs() < 1e-9,
                "incremental energy drift: {} vs {}",
                self.energy,
                full
            );
        }
    }
}

/// Deterministic starting-temperature estimate: the largest |delta E| over
/// random single-bit flips from random states.
fn probe_t_start(problem: &QuboProblem, seed: u64) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let dim = problem.dim();
    let mut largest = 0.0_f64;
    for _ in 0..4 {
        let x: Vec<bool> = (0..dim).map(|_| rng.gen_bool(0.5)).collect();
        for _ in 0..16.min(dim) {
            let p = rng.gen_range(0..dim);
            largest = largest.max(flip_delta(problem, &x, p).abs());
        }
    }
    largest.max(1e-9)
}

/// Metropolis single-bit-flip annealing; best-ever state over all restarts,
/// ties resolved toward the earlier restart. The reported energy is a fresh
/// recomputation on the winning bitstring.
pub fn solve_sa(problem: &QuboProblem, config: &SolverConfig) -> Result<SolveResult, SolveError> {
    config.validate()?;
    let start = Instant::now();
    let dim = problem.dim();
    let t_start = if config.t_start > 0.0 {
        config.t_start
    } else {
        probe_t_start(problem, config.seed)
    };
    let t_end = t_start * config.t_end_ratio;

    let mut master = ChaCha20Rng::seed_from_u64(config.seed);
    let mut best_x: Option<Vec<bool>> = None;
    let mut best_energy = f64::INFINITY;
    let mut restart_energies = Vec::with_capacity(config.restarts);

    for _ in 0..config.restarts {
        let sub_seed: u64 = master.gen();
        let mut rng = ChaCha20Rng::seed_from_u64(sub_seed);
        let init: Vec<bool> = (0..dim).map(|_| rng.gen_bool(0.5)).collect();
        let mut state = FlipState::new(problem, init);
        let mut restart_best = state.energy;
        let mut restart_best_x = state.x.clone();

        for sweep in 0..config.sweeps {
            let frac = if config.sweeps > 1 {
                sweep as f64 / (config.sweeps as f64 - 1.0)
            } else {
                1.0
            };
            let temperature = t_start * (t_end / t_start).powf(frac);
            for _ in 0..dim {
                let p = rng.gen_range(0..dim);
                let delta = state.delta(p);
                let accept = delta <= 0.0 || rng.gen::<f64>() < (-delta / temperature).exp();
                if accept {
                    state.flip(problem, p);
                    if state.energy < restart_best {
                        restart_best = state.energy;
                        restart_best_x.copy_from_slice(&state.x);
                    }
                }
            }
            // Cheap drift check once per sweep on large problems.
            if cfg!(debug_assertions) && dim > 64 {
                let full = qubo_energy(problem, &state.x).unwrap();
                debug_assert!((full - state.energy).abs() < 1e-6 * (1.0 + full.abs()));
            }
        }

        let verified = qubo_energy(problem, &restart_best_x)?;
        restart_energies.push(verified);
        if verified < best_energy {
            best_energy = verified;
            best_x = Some(restart_best_x);
        }
    }

    let bits = best_x.expect("restarts >= 1");
    Ok(SolveResult {
        solution: BitSolution { bits, energy: best_energy },
        restart_energies,
        wall_time: start.elapsed(),
        solver: "sa".into(),
    })
}

/// True global minimum by Gray-code enumeration (each step flips exactly one
/// bit, so the incremental delta applies). Refuses dim > [`EXHAUSTIVE_CAP`].
pub fn solve_exhaustive(problem: &QuboProblem) -> Result<SolveResult, SolveError> {
    let dim = problem.dim();
    if dim > EXHAUSTIVE_CAP {
        return Err(SolveError::DimTooLarge { dim, cap: EXHAUSTIVE_CAP });
    }
    let start = Instant::now();
    let mut state = FlipState::new(problem, vec![false; dim]);
    let mut best_energy = state.energy;
    let mut best_x = state.x.clone();

    let total: u64 = 1 << dim;
    for i in 1..total {
        let bit = i.trailing_zeros() as usize;
        state.flip(problem, bit);
        if state.energy < best_energy {
            best_energy = state.energy;
            best_x.copy_from_slice(&state.x);
        }
    }

    let verified = qubo_energy(problem, &best_x)?;
    Ok(SolveResult {
        solution: BitSolution { bits: best_x, energy: verified },
        restart_energies: vec![verified],
        wall_time: start.elapsed(),
        solver: "exhaustive".into(),
    })
}

/// Uniform solver contract so an external annealer client can slot in.
pub trait QuboSolver: Send + Sync {
    fn solve(
        &self,
        problem: &QuboProblem,
        config: &SolverConfig,
    ) -> Result<SolveResult, SolveError>;
}

struct SaSolver;

impl QuboSolver for SaSolver {
    fn solve(&self, p: &QuboProblem, c: &SolverConfig) -> Result<SolveResult, SolveError> {
        solve_sa(p, c)
    }
}

struct ExhaustiveSolver;

impl QuboSolver for ExhaustiveSolver {
    fn solve(&self, p: &QuboProblem, _c: &SolverConfig) -> Result<SolveResult, SolveError> {
        solve_exhaustive(p)
    }
}

/// Name-keyed solver registry; `sa` and `exhaustive` are always present.
pub struct SolverRegistry {
    solvers: BTreeMap<String, Box<dyn QuboSolver>>,
}

impl Default for SolverRegistry {
    fn default() -> Self {
        let mut registry = Self { solvers: BTreeMap::new() };
        registry.register("sa", Box::new(SaSolver));
        registry.register("exhaustive", Box::new(ExhaustiveSolver));
        registry
    }
}

impl SolverRegistry {
    pub fn register(&mut self, name: &str, solver: Box<dyn QuboSolver>) {
        self.solvers.insert(name.to_string(), solver);
    }

    pub fn names(&self) -> Vec<String> {
        self.solvers.keys().cloned().collect()
    }

    pub fn solve_with(
        &self,
        name: &str,
        problem: &QuboProblem,
        config: &SolverConfig,
    ) -> Result<SolveResult, SolveError> {
        match self.solvers.get(name) {
            Some(solver) => solver.solve(problem, config),
            None => Err(SolveError::UnknownSolver {
                name: name.to_string(),
                available: self.names().join(", "),
            }),
        }
    }
}
