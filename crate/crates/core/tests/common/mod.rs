//! Independent oracles and generators shared by the acceptance suite.
//! Everything here deliberately avoids the library's fast paths: circuits
//! are simulated with dense Kronecker-product matrices and QUBO problems are
//! built through the public text format.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use hqfs_core::portfolio::Moments;
use hqfs_core::qubo::QuboProblem;
use hqfs_core::vqc::{CircuitSpec, ThetaParams};

pub type Mat = Vec<Vec<Complex64>>;

pub fn identity(n: usize) -> Mat {
    let mut m = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = Complex64::new(1.0, 0.0);
    }
    m
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (ra, ca, rb, cb) = (a.len(), a[0].len(), b.len(), b[0].len());
    let mut out = vec![vec![Complex64::new(0.0, 0.0); ca * cb]; ra * rb];
    for i in 0..ra {
        for j in 0..ca {
            for k in 0..rb {
                for l in 0..cb {
                    out[i * rb + k][j * cb + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

pub fn matvec(m: &Mat, v: &[Complex64]) -> Vec<Complex64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn lift(gate: &Mat, q: usize, n: usize) -> Mat {
    let low = identity(1 << q);
    let mid = kron(gate, &low);
    kron(&identity(1 << (n - q - 1)), &mid)
}

fn ry(theta: f64) -> Mat {
    let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    vec![
        vec![Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
        vec![Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
    ]
}

fn rz(theta: f64) -> Mat {
    vec![
        vec![Complex64::from_polar(1.0, -theta / 2.0), Complex64::new(0.0, 0.0)],
        vec![Complex64::new(0.0, 0.0), Complex64::from_polar(1.0, theta / 2.0)],
    ]
}

fn cz(a: usize, b: usize, n: usize) -> Mat {
    let dim = 1 << n;
    let mut m = identity(dim);
    let mask = (1usize << a) | (1usize << b);
    for i in 0..dim {
        if i & mask == mask {
            m[i][i] = Complex64::new(-1.0, 0.0);
        }
    }
    m
}

/// Dense-matrix simulation of the same layer structure the library uses:
/// encoding RY rotations before layer 0, per layer RY/RZ per qubit then the
/// CZ ring (closed only for n > 2).
pub fn dense_embed(encoding: &[f64], theta: &ThetaParams, spec: &CircuitSpec) -> Vec<f64> {
    let n = spec.qubits;
    let mut state = vec![Complex64::new(0.0, 0.0); 1 << n];
    state[0] = Complex64::new(1.0, 0.0);
    for layer in 0..spec.depth {
        if layer == 0 {
            for q in 0..n {
                state = matvec(&lift(&ry(encoding[q]), q, n), &state);
            }
        }
        for q in 0..n {
            let a = theta.as_slice()[spec.param_index(layer, q, 0)];
            let b = theta.as_slice()[spec.param_index(layer, q, 1)];
            state = matvec(&lift(&ry(a), q, n), &state);
            state = matvec(&lift(&rz(b), q, n), &state);
        }
        for q in 0..n.saturating_sub(1) {
            state = matvec(&cz(q, q + 1, n), &state);
        }
        if n > 2 {
            state = matvec(&cz(n - 1, 0, n), &state);
        }
    }
    (0..n)
        .map(|q| {
            let mask = 1usize << q;
            state
                .iter()
                .enumerate()
                .map(|(i, a)| if i & mask == 0 { a.norm_sqr() } else { -a.norm_sqr() })
                .sum()
        })
        .collect()
}

/// Random symmetric QUBO built through the public text interface.
pub fn random_qubo(dim: usize, seed: u64) -> QuboProblem {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut text = format!("dim {dim}\nassets {dim}\nbits 1\npenalty 1.0\noffset 0.0\n");
    for i in 0..dim {
        for j in i..dim {
            let v: f64 = rng.gen_range(-1.0..1.0);
            text.push_str(&format!("{i} {j} {v}\n"));
        }
    }
    QuboProblem::from_text(&text).unwrap()
}

/// Random moments with a positive semidefinite covariance (corr from random
/// trailing windows, shrunk toward identity).
pub fn random_moments(assets: usize, seed: u64) -> Moments {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let tickers: Vec<String> = (0..assets).map(|i| format!("S{i:02}")).collect();
    let r_hat: Vec<f64> = (0..assets).map(|_| rng.gen_range(-0.02..0.02)).collect();
    let sigma_hat: Vec<f64> = (0..assets).map(|_| rng.gen_range(0.005..0.05)).collect();
    let trailing: Vec<Vec<f64>> = (0..assets)
        .map(|_| (0..63).map(|_| rng.gen_range(-0.03..0.03)).collect())
        .collect();
    hqfs_core::portfolio::estimate_moments(&tickers, &r_hat, &sigma_hat, &trailing, 21, 0.1)
        .unwrap()
}
