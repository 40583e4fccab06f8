//! Exact statevector simulation of the data-encoding + trainable circuit.
//!
//! Layout: qubit `q` is bit `q` of the basis-state index (little-endian).
//! Each layer applies trainable RY and RZ rotations on every qubit followed
//! by a ring of controlled-Z entanglers; input-encoding RY rotations run
//! once before the first layer. Expectations are exact (no shot noise), so
//! embeddings and parameter-shift gradients are fully deterministic.
//!
//! The parameter-shift rule for rotation gates:
//! dz/dtheta_i = [z(theta_i + pi/2) - z(theta_i - pi/2)] / 2.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Refuse circuits whose 2^n statevector would be unreasonable to simulate.
pub const MAX_QUBITS: usize = 12;

#[derive(Debug, Error)]
pub enum VqcError {
    #[error("qubit count must be in 1..={MAX_QUBITS}, got {0}")]
    BadQubitCount(usize),
    #[error("depth must be >= 1, got {0}")]
    BadDepth(usize),
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input value")]
    NonFinite,
    #[error("qubit index {index} out of range for {qubits} qubits")]
    QubitOutOfRange { index: usize, qubits: usize },
}

/// Circuit shape: `qubits` wires, `depth` layers, 2 trainable angles per
/// qubit per layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub qubits: usize,
    pub depth: usize,
}

impl CircuitSpec {
    pub fn new(qubits: usize, depth: usize) -> Result<Self, VqcError> {
        if qubits < 1 || qubits > MAX_QUBITS {
            return Err(VqcError::BadQubitCount(qubits));
        }
        if depth < 1 {
            return Err(VqcError::BadDepth(depth));
        }
        Ok(Self { qubits, depth })
    }

    pub fn param_count(&self) -> usize {
        2 * self.qubits * self.depth
    }

    /// Flat index of the rotation angle for (layer, qubit, axis) with
    /// axis 0 = RY, axis 1 = RZ.
    pub fn param_index(&self, layer: usize, qubit: usize, axis: usize) -> usize {
        debug_assert!(layer < self.depth && qubit < self.qubits && axis < 2);
        (layer * self.qubits + qubit) * 2 + axis
    }
}

/// Trainable rotation angles, length `2 * qubits * depth`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaParams {
    angles: Vec<f64>,
}

impl ThetaParams {
    pub fn new(angles: Vec<f64>, spec: &CircuitSpec) -> Result<Self, VqcError> {
        if angles.len() != spec.param_count() {
            return Err(VqcError::DimensionMismatch {
                expected: spec.param_count(),
                got: angles.len(),
            });
        }
        if angles.iter().any(|a| !a.is_finite()) {
            return Err(VqcError::NonFinite);
        }
        Ok(Self { angles })
    }

    pub fn zeros(spec: &CircuitSpec) -> Self {
        Self { angles: vec![0.0; spec.param_count()] }
    }

    /// Uniform init in [-pi/2, pi/2]. Near-zero angles leave every <Z_q>
    /// an even function of the encoding (a cosine around the pole), which
    /// erases the sign of the encoded features; a wide init breaks that
    /// parity from the start.
    pub fn random<R: Rng>(spec: &CircuitSpec, rng: &mut R) -> Self {
        let angles =
            (0..spec.param_count()).map(|_| rng.gen_range(-FRAC_PI_2..FRAC_PI_2)).collect();
        Self { angles }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.angles
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.angles
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.angles.iter().map(|a| a * a).sum()
    }
}

/// 2^n complex amplitudes; norm stays 1 within 1e-10 under every gate.
#[derive(Debug, Clone)]
pub struct StateVector {
    qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    pub fn zero_state(qubits: usize) -> Self {
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << qubits];
        amps[0] = Complex64::new(1.0, 0.0);
        Self { qubits, amps }
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// RY(theta) = [[cos(t/2), -sin(t/2)], [sin(t/2), cos(t/2)]] on `qubit`.
    pub fn apply_ry(&mut self, qubit: usize, theta: f64) {
        let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
        let step = 1 << qubit;
        let mut base = 0;
        while base < self.amps.len() {
            for low in base..base + step {
                let i0 = low;
                let i1 = low + step;
                let a0 = self.amps[i0];
                let a1 = self.amps[i1];
                self.amps[i0] = a0 * c - a1 * s;
                self.amps[i1] = a0 * s + a1 * c;
            }
            base += step << 1;
        }
        debug_assert!((self.norm_sqr() - 1.0).abs() < 1e-10);
    }

    /// RZ(theta) = diag(exp(-i t/2), exp(i t/2)) on `qubit`.
    pub fn apply_rz(&mut self, qubit: usize, theta: f64) {
        let phase0 = Complex64::from_polar(1.0, -theta / 2.0);
        let phase1 = Complex64::from_polar(1.0, theta / 2.0);
        let mask = 1usize << qubit;
        for (i, amp) in self.amps.iter_mut().enumerate() {
            *amp *= if i & mask == 0 { phase0 } else { phase1 };
        }
        debug_assert!((self.norm_sqr() - 1.0).abs() < 1e-10);
    }

    /// Controlled-Z between `a` and `b`: flips the sign where both bits are 1.
    pub fn apply_cz(&mut self, a: usize, b: usize) {
        debug_assert_ne!(a, b);
        let mask = (1usize << a) | (1usize << b);
        for (i, amp) in self.amps.iter_mut().enumerate() {
            if i & mask == mask {
                *amp = -*amp;
            }
        }
    }
}

/// Pauli-Z expectation on `qubit`: sum of +/- |amplitude|^2 by the bit value.
pub fn expect_z(state: &StateVector, qubit: usize) -> Result<f64, VqcError> {
    if qubit >= state.qubits {
        return Err(VqcError::QubitOutOfRange { index: qubit, qubits: state.qubits });
    }
    let mask = 1usize << qubit;
    let mut total = 0.0;
    for (i, amp) in state.amps.iter().enumerate() {
        let p = amp.norm_sqr();
        total += if i & mask == 0 { p } else { -p };
    }
    Ok(total)
}

/// Compresses a standardized `lookback x dim` window into one rotation angle
/// per qubit: mean over the window of feature `q mod dim`, scaled by pi/2
/// and clipped into [-pi, pi].
pub fn encode_input(
    window: &[f64],
    lookback: usize,
    dim: usize,
    spec: &CircuitSpec,
) -> Result<Vec<f64>, VqcError> {
    if dim == 0 || lookback == 0 || window.len() != lookback * dim {
        return Err(VqcError::DimensionMismatch {
            expected: lookback * dim,
            got: window.len(),
        });
    }
    if window.iter().any(|v| !v.is_finite()) {
        return Err(VqcError::NonFinite);
    }
    let mut angles = Vec::with_capacity(spec.qubits);
    for q in 0..spec.qubits {
        let j = q % dim;
        let mut pooled = 0.0;
        for row in 0..lookback {
            pooled += window[row * dim + j];
        }
        pooled /= lookback as f64;
        angles.push((FRAC_PI_2 * pooled).clamp(-PI, PI));
    }
    Ok(angles)
}

/// Ring of CZ entanglers: (q, q+1) pairs, closing the loop only for n > 2
/// (a second CZ on the same pair would cancel itself).
fn apply_entangler_ring(state: &mut StateVector, qubits: usize) {
    for q in 0..qubits.saturating_sub(1) {
        state.apply_cz(q, q + 1);
    }
    if qubits > 2 {
        state.apply_cz(qubits - 1, 0);
    }
}

/// Runs the circuit on |0...0>: encoding RY rotations, then per layer the
/// trainable RY/RZ pairs and the entangling ring.
pub fn run_circuit(
    encoding: &[f64],
    theta: &ThetaParams,
    spec: &CircuitSpec,
) -> Result<StateVector, VqcError> {
    if encoding.len() != spec.qubits {
        return Err(VqcError::DimensionMismatch { expected: spec.qubits, got: encoding.len() });
    }
    if theta.len() != spec.param_count() {
        return Err(VqcError::DimensionMismatch {
            expected: spec.param_count(),
            got: theta.len(),
        });
    }
    let mut state = StateVector::zero_state(spec.qubits);
    for layer in 0..spec.depth {
        if layer == 0 {
            for q in 0..spec.qubits {
                state.apply_ry(q, encoding[q]);
            }
        }
        for q in 0..spec.qubits {
            state.apply_ry(q, theta.as_slice()[spec.param_index(layer, q, 0)]);
            state.apply_rz(q, theta.as_slice()[spec.param_index(layer, q, 1)]);
        }
        apply_entangler_ring(&mut state, spec.qubits);
    }
    Ok(state)
}

/// Embedding z_q = <Z_q> after running the circuit on the encoded window.
pub fn vqc_embed(
    window: &[f64],
    lookback: usize,
    dim: usize,
    theta: &ThetaParams,
    spec: &CircuitSpec,
) -> Result<Vec<f64>, VqcError> {
    let encoding = encode_input(window, lookback, dim, spec)?;
    embed_from_encoding(&encoding, theta, spec)
}

/// Embedding from precomputed encoding angles (the encoding does not depend
/// on theta, so gradient loops reuse it).
pub fn embed_from_encoding(
    encoding: &[f64],
    theta: &ThetaParams,
    spec: &CircuitSpec,
) -> Result<Vec<f64>, VqcError> {
    let state = run_circuit(encoding, theta, spec)?;
    (0..spec.qubits).map(|q| expect_z(&state, q)).collect()
}

/// Chain rule through the embedding: given `tail_grad` mapping z to
/// dLoss/dz, returns dLoss/dtheta via two shifted circuit evaluations per
/// parameter.
pub fn param_shift_grad<F>(
    window: &[f64],
    lookback: usize,
    dim: usize,
    theta: &ThetaParams,
    spec: &CircuitSpec,
    tail_grad: F,
) -> Result<Vec<f64>, VqcError>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let encoding = encode_input(window, lookback, dim, spec)?;
    let z = embed_from_encoding(&encoding, theta, spec)?;
    let g = tail_grad(&z);
    param_shift_grad_from_encoding(&encoding, theta, spec, &g)
}

/// Same as [`param_shift_grad`] but with the encoding and z-gradient already
/// in hand.
pub fn param_shift_grad_from_encoding(
    encoding: &[f64],
    theta: &ThetaParams,
    spec: &CircuitSpec,
    z_grad: &[f64],
) -> Result<Vec<f64>, VqcError> {
    if z_grad.len() != spec.qubits {
        return Err(VqcError::DimensionMismatch { expected: spec.qubits, got: z_grad.len() });
    }
    let mut shifted = theta.clone();
    let mut grad = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        let original = shifted.as_slice()[i];
        shifted.as_mut_slice()[i] = original + FRAC_PI_2;
        let z_plus = embed_from_encoding(encoding, &shifted, spec)?;
        shifted.as_mut_slice()[i] = original - FRAC_PI_2;
        let z_minus = embed_from_encoding(encoding, &shifted, spec)?;
        shifted.as_mut_slice()[i] = original;

        let mut total = 0.0;
        for q in 0..spec.qubits {
            total += z_grad[q] * 0.5 * (z_plus[q] - z_minus[q]);
        }
        grad[i] = total;
    }
    Ok(grad)
}
