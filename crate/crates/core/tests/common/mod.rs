//! Seeded generators and brute-force oracles shared by the integration tests.
//!
//! The oracles here deliberately take different routes from the library:
//! Kronecker products instead of index arithmetic, a Taylor series instead of
//! an eigendecomposition, exhaustive enumeration instead of apportionment.

#![allow(dead_code)]

use born_envariance::tensor_core::{Operator, StateVector, C64};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard complex Gaussian via Box–Muller.
pub fn gaussian(rng: &mut impl Rng) -> C64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let t = std::f64::consts::TAU * u2;
    C64::new(r * t.cos(), r * t.sin()) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn random_vector(rng: &mut impl Rng, dim: usize) -> DVector<C64> {
    DVector::from_fn(dim, |_, _| gaussian(rng))
}

pub fn random_state(rng: &mut impl Rng, factors: &[usize]) -> StateVector {
    let dim = factors.iter().product();
    StateVector::normalize(random_vector(rng, dim), factors.to_vec()).unwrap()
}

/// Haar-ish unitary from the QR decomposition of a Gaussian matrix.
pub fn random_unitary(rng: &mut impl Rng, dim: usize) -> DMatrix<C64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| gaussian(rng));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    let phases = DVector::from_fn(dim, |i, _| {
        let d = r[(i, i)];
        if d.norm() > 0.0 {
            d / d.norm()
        } else {
            C64::new(1.0, 0.0)
        }
    });
    q * DMatrix::from_diagonal(&phases)
}

pub fn random_hermitian(rng: &mut impl Rng, dim: usize) -> DMatrix<C64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| gaussian(rng));
    (&g + g.adjoint()).scale(0.5)
}

/// `Σ_k √p_k (U|k⟩) ⊗ (V|k⟩)` with random local unitaries `U`, `V`.
pub fn state_with_weights(rng: &mut impl Rng, weights: &[f64], d_s: usize, d_e: usize) -> StateVector {
    assert!(weights.len() <= d_s.min(d_e));
    let u = random_unitary(rng, d_s);
    let v = random_unitary(rng, d_e);
    let total: f64 = weights.iter().sum();
    let mut amps = DVector::from_element(d_s * d_e, C64::new(0.0, 0.0));
    for (k, w) in weights.iter().enumerate() {
        let phase = C64::from_polar(1.0, rng.gen_range(-3.0..3.0));
        let s = u.column(k).into_owned();
        let e = v.column(k).into_owned();
        amps += s.kronecker(&e) * (phase * (w / total).sqrt());
    }
    StateVector::normalize(amps, vec![d_s, d_e]).unwrap()
}

/// `A ⊗ B` of dense matrices, written out entry by entry.
pub fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    let (ar, ac, br, bc) = (a.nrows(), a.ncols(), b.nrows(), b.ncols());
    DMatrix::from_fn(ar * br, ac * bc, |r, c| a[(r / br, c / bc)] * b[(r % br, c % bc)])
}

/// `1 ⊗ .. ⊗ u ⊗ .. ⊗ 1` by repeated Kronecker products.
pub fn kron_embed(u: &DMatrix<C64>, target: usize, factors: &[usize]) -> DMatrix<C64> {
    let mut acc = DMatrix::<C64>::identity(1, 1);
    for (f, &d) in factors.iter().enumerate() {
        let piece = if f == target { u.clone() } else { DMatrix::identity(d, d) };
        acc = kron(&acc, &piece);
    }
    acc
}

/// `exp(A)` by scaling and squaring with a truncated Taylor series.
pub fn expm_taylor(a: &DMatrix<C64>) -> DMatrix<C64> {
    let n = a.nrows();
    let norm = a.norm();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scaled = a.scale(1.0 / 2f64.powi(squarings as i32));
    let mut term = DMatrix::<C64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..30 {
        term = &term * &scaled / C64::new(k as f64, 0.0);
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Best `max_k |m_k/M − p_k|` over every composition with `m_k ≥ 1` and
/// `M ≤ bound`, by exhaustive enumeration.
pub fn brute_force_rationalization(p: &[f64], bound: u64) -> f64 {
    fn recurse(p: &[f64], total: u64, prefix: &mut Vec<u64>, best: &mut f64) {
        let n = p.len();
        let used: u64 = prefix.iter().sum();
        if prefix.len() == n - 1 {
            let last = total - used;
            if last == 0 {
                return;
            }
            prefix.push(last);
            let err = prefix
                .iter()
                .zip(p)
                .map(|(&m, &q)| (m as f64 / total as f64 - q).abs())
                .fold(0.0, f64::max);
            if err < *best {
                *best = err;
            }
            prefix.pop();
            return;
        }
        let remaining_slots = (n - 1 - prefix.len()) as u64;
        for m in 1..=(total - used - remaining_slots) {
            prefix.push(m);
            recurse(p, total, prefix, best);
            prefix.pop();
        }
    }
    let mut best = f64::INFINITY;
    for total in p.len() as u64..=bound {
        recurse(p, total, &mut Vec::new(), &mut best);
    }
    best
}

/// Minimum over a grid of counterswap angles of
/// `‖(1 ⊗ X(θ))(swap ⊗ 1)|ψ⟩ − |ψ⟩‖` for a two-qubit state in the
/// computational Schmidt basis.
pub fn min_counterswap_residual(a1: C64, a2: C64, phi12: f64, steps: usize) -> f64 {
    let psi = DVector::from_vec(vec![a1, C64::new(0.0, 0.0), C64::new(0.0, 0.0), a2]);
    let zero = C64::new(0.0, 0.0);
    let swap = DMatrix::from_row_slice(
        2,
        2,
        &[zero, C64::from_polar(1.0, phi12), C64::from_polar(1.0, -phi12), zero],
    );
    let mut best = f64::INFINITY;
    for i in 0..steps {
        let theta = std::f64::consts::TAU * i as f64 / steps as f64;
        let counter = DMatrix::from_row_slice(
            2,
            2,
            &[zero, C64::from_polar(1.0, -theta), C64::from_polar(1.0, theta), zero],
        );
        let total = kron(&DMatrix::identity(2, 2), &counter) * kron(&swap, &DMatrix::identity(2, 2));
        best = best.min((total * &psi - &psi).norm());
    }
    best
}

pub fn operator(m: DMatrix<C64>) -> Operator {
    Operator::new(m).unwrap()
}
