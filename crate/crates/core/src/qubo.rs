//! Binary encoding of the mean-variance objective.
//!
//! Each asset i gets B bits with coefficients 2^-b; the raw bit weight is
//! v_i = sum_b 2^-b x_{i,b}. The stored problem is pure QUBO over the raw
//! weights: quadratic term from Sigma, the linear return term on the
//! diagonal, and the budget penalty rho_c (a'x - 1)^2 expanded into the
//! matrix plus a constant offset. Normalization to the simplex happens only
//! at decode time via Z = sum of raw weights.
//!
//! Export format (`to_text` / `from_text`), whitespace-separated:
//!
//! ```text
//! # <comments>
//! dim <n>  assets <M>  bits <B>  penalty <rho_c>  offset <c>
//! <row> <col> <value>   one entry per line, upper triangle incl. diagonal
//! ```

use std::fmt::Write as _;

use thiserror::Error;

use crate::portfolio::{Moments, WeightVector};

#[derive(Debug, Error)]
pub enum QuboError {
    #[error("problem needs assets >= 1 and bits >= 1, got M={assets}, B={bits}")]
    BadShape { assets: usize, bits: usize },
    #[error("penalty weight must be > 0, got {0}")]
    BadPenalty(f64),
    #[error("bitstring length {got} != problem dimension {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("moments dimension {0} does not match universe")]
    DimensionMismatch(usize),
    #[error("qubo text parse: {0}")]
    Parse(String),
}

/// Symmetric QUBO over M*B binary variables with an explicit constant
/// offset; immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct QuboProblem {
    assets: usize,
    bits: usize,
    /// dim x dim row-major, symmetric.
    q: Vec<f64>,
    offset: f64,
    penalty: f64,
}

/// a_p = 2^-b for flat bit index p = i*B + b.
pub fn bit_coefficient(p: usize, bits: usize) -> f64 {
    0.5_f64.powi((p % bits) as i32)
}

impl QuboProblem {
    pub fn dim(&self) -> usize {
        self.assets * self.bits
    }

    pub fn assets(&self) -> usize {
        self.assets
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn q(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.dim() + j]
    }

    /// Raw (unnormalized) bit weights v_i for a bitstring.
    pub fn raw_weights(&self, x: &[bool]) -> Vec<f64> {
        let mut v = vec![0.0; self.assets];
        for (p, set) in x.iter().enumerate() {
            if *set {
                v[p / self.bits] += bit_coefficient(p, self.bits);
            }
        }
        v
    }
}

/// A bitstring with its (re-checkable) energy.
#[derive(Debug, Clone, PartialEq)]
pub struct BitSolution {
    pub bits: Vec<bool>,
    pub energy: f64,
}

/// Default budget-penalty weight: 10x the largest absolute entry of the
/// unpenalized quadratic/linear terms (1.0 for the all-zero problem).
pub fn auto_penalty(moments: &Moments, eta: f64, bits: usize) -> f64 {
    let m = moments.dim();
    let mut largest = 0.0_f64;
    for i in 0..m {
        for j in 0..m {
            largest = largest.max(moments.sigma_at(i, j).abs());
        }
        largest = largest.max((eta * moments.mu[i]).abs());
    }
    let _ = bits; // coefficients 2^-b only shrink entries
    if largest > 0.0 {
        10.0 * largest
    } else {
        1.0
    }
}

/// Expands `v' Sigma v - eta mu' v + rho_c (sum v - 1)^2` over the bit
/// variables into a symmetric Q plus constant offset.
pub fn encode_qubo(
    moments: &Moments,
    eta: f64,
    bits: usize,
    penalty: f64,
) -> Result<QuboProblem, QuboError> {
    let assets = moments.dim();
    if assets == 0 || bits == 0 {
        return Err(QuboError::BadShape { assets, bits });
    }
    if !(penalty > 0.0) {
        return Err(QuboError::BadPenalty(penalty));
    }
    if moments.mu.len() != assets || moments.sigma.len() != assets * assets {
        return Err(QuboError::DimensionMismatch(moments.mu.len()));
    }

    let dim = assets * bits;
    let mut q = vec![0.0; dim * dim];
    for p in 0..dim {
        let (i, ap) = (p / bits, bit_coefficient(p, bits));
        for r in 0..dim {
            let (j, ar) = (r / bits, bit_coefficient(r, bits));
            q[p * dim + r] = ap * ar * (moments.sigma_at(i, j) + penalty);
        }
        // Linear terms sit on the diagonal since x^2 = x for binaries.
        q[p * dim + p] += -eta * moments.mu[i] * ap - 2.0 * penalty * ap;
    }
    Ok(QuboProblem { assets, bits, q, offset: penalty, penalty })
}

/// x'Qx + offset with the diagonal counted once (x_p^2 = x_p).
pub fn qubo_energy(problem: &QuboProblem, x: &[bool]) -> Result<f64, QuboError> {
    let dim = problem.dim();
    if x.len() != dim {
        return Err(QuboError::LengthMismatch { expected: dim, got: x.len() });
    }
    let set: Vec<usize> = (0..dim).filter(|&p| x[p]).collect();
    let mut energy = problem.offset;
    for &p in &set {
        for &r in &set {
            energy += problem.q[p * dim + r];
        }
    }
    Ok(energy)
}

/// Energy change from flipping bit `p`, given the current bitstring:
/// dE = (1 - 2 x_p) * (Q_pp + 2 * sum_{r != p, x_r = 1} Q_pr).
pub fn flip_delta(problem: &QuboProblem, x: &[bool], p: usize) -> f64 {
    let dim = problem.dim();
    let mut field = problem.q[p * dim + p];
    for (r, set) in x.iter().enumerate() {
        if *set && r != p {
            field += 2.0 * problem.q[p * dim + r];
        }
    }
    if x[p] {
        -field
    } else {
        field
    }
}

/// Decoded weights with the degenerate (all-zero fallback) marker.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedWeights {
    pub weights: WeightVector,
    pub degenerate: bool,
}

/// w_i = v_i / Z with Z = sum_j v_j; the all-zero bitstring falls back to
/// equal weight and is flagged.
pub fn decode_weights(
    x: &[bool],
    assets: usize,
    bits: usize,
) -> Result<DecodedWeights, QuboError> {
    if assets == 0 || bits == 0 {
        return Err(QuboError::BadShape { assets, bits });
    }
    if x.len() != assets * bits {
        return Err(QuboError::LengthMismatch { expected: assets * bits, got: x.len() });
    }
    let mut v = vec![0.0; assets];
    for (p, set) in x.iter().enumerate() {
        if *set {
            v[p / bits] += bit_coefficient(p, bits);
        }
    }
    let z: f64 = v.iter().sum();
    if z == 0.0 {
        log::warn!("all-zero solver output; falling back to equal weight");
        let weights = WeightVector::new(vec![1.0 / assets as f64; assets])
            .expect("equal weight is feasible");
        return Ok(DecodedWeights { weights, degenerate: true });
    }
    let weights = WeightVector::new(v.iter().map(|vi| vi / z).collect())
        .expect("normalized bit weights are feasible");
    Ok(DecodedWeights { weights, degenerate: false })
}

impl QuboProblem {
    /// Documented sparse text export for external solvers.
    pub fn to_text(&self) -> String {
        let dim = self.dim();
        let mut out = String::new();
        out.push_str("# qubo v1: minimize x'Qx + offset over binary x\n");
        out.push_str("# entries: row col value (upper triangle incl. diagonal)\n");
        let _ = writeln!(
            out,
            "dim {dim}\nassets {}\nbits {}\npenalty {}\noffset {}",
            self.assets, self.bits, self.penalty, self.offset
        );
        for p in 0..dim {
            for r in p..dim {
                let v = self.q[p * dim + r];
                if v != 0.0 {
                    let _ = writeln!(out, "{p} {r} {v}");
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, QuboError> {
        let mut dim = None;
        let mut assets = None;
        let mut bits = None;
        let mut penalty = None;
        let mut offset = None;
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();

        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad =
                |what: &str| QuboError::Parse(format!("line {}: {what}", lineno + 1));
            match fields.as_slice() {
                ["dim", v] => dim = Some(v.parse().map_err(|_| bad("bad dim"))?),
                ["assets", v] => assets = Some(v.parse().map_err(|_| bad("bad assets"))?),
                ["bits", v] => bits = Some(v.parse().map_err(|_| bad("bad bits"))?),
                ["penalty", v] => penalty = Some(v.parse().map_err(|_| bad("bad penalty"))?),
                ["offset", v] => offset = Some(v.parse().map_err(|_| bad("bad offset"))?),
                [r, c, v] => entries.push((
                    r.parse().map_err(|_| bad("bad row"))?,
                    c.parse().map_err(|_| bad("bad col"))?,
                    v.parse().map_err(|_| bad("bad value"))?,
                )),
                _ => return Err(bad("unrecognized line")),
            }
        }

        let dim: usize = dim.ok_or_else(|| QuboError::Parse("missing dim".into()))?;
        let assets = assets.ok_or_else(|| QuboError::Parse("missing assets".into()))?;
        let bits = bits.ok_or_else(|| QuboError::Parse("missing bits".into()))?;
        let penalty = penalty.ok_or_else(|| QuboError::Parse("missing penalty".into()))?;
        let offset = offset.ok_or_else(|| QuboError::Parse("missing offset".into()))?;
        if assets * bits != dim {
            return Err(QuboError::Parse(format!(
                "dim {dim} != assets {assets} * bits {bits}"
            )));
        }
        let mut q = vec![0.0; dim * dim];
        for (r, c, v) in entries {
            if r >= dim || c >= dim || r > c {
                return Err(QuboError::Parse(format!("entry ({r}, {c}) out of range")));
            }
            q[r * dim + c] = v;
            q[c * dim + r] = v;
        }
        Ok(Self { assets, bits, q, offset, penalty })
    }
}
