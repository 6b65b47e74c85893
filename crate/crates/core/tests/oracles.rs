//! Library results checked against independent brute-force constructions.

mod common;

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use born_envariance::born_oracle::{
    born_probabilities, factorization_check, sigma_additivity_check, transition_probability, ProjectorFamily,
};
use born_envariance::envariance::{
    check_envariance, counterswap_unitary, phase_counter, phase_unitary, swap_unitary, verify_undo,
    DEFAULT_DECISION_TOLERANCE,
};
use born_envariance::fine_graining::{
    attach_counterweight, commensurate_weights, envariant_probabilities, fine_grain, BranchWeights,
};
use born_envariance::schmidt::{schmidt_decompose, SchmidtDecomposition, DEFAULT_RANK_TOLERANCE};
use born_envariance::tensor_core::{embed_on_factor, propagate, StateVector, C64};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use common::*;

fn dec_of(state: &StateVector) -> SchmidtDecomposition {
    schmidt_decompose(state, DEFAULT_RANK_TOLERANCE).unwrap()
}

/// `‖(1 ⊗ u_E)(u_S ⊗ 1)ψ − ψ‖` with the Kronecker oracle.
fn undo_residual(state: &StateVector, u_s: &DMatrix<C64>, u_e: &DMatrix<C64>) -> f64 {
    let total = kron(&DMatrix::identity(u_s.nrows(), u_s.nrows()), u_e) * kron(u_s, &DMatrix::identity(u_e.nrows(), u_e.nrows()));
    (total * state.amplitudes() - state.amplitudes()).norm()
}

/// `Σ_k a_k s_k ⊗ ε_k` built with Kronecker products.
fn rebuild(dec: &SchmidtDecomposition) -> DVector<C64> {
    let mut acc = dec.left_basis[0].kronecker(&dec.right_basis[0]) * C64::new(0.0, 0.0);
    for k in 0..dec.rank() {
        acc += dec.left_basis[k].kronecker(&dec.right_basis[k]) * dec.coefficient(k);
    }
    acc
}

fn spectral_norm(h: &DMatrix<C64>) -> f64 {
    SymmetricEigen::new(h.clone())
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()))
}

#[test]
fn embedding_matches_kronecker_construction() {
    let mut rng = rng(1);
    for (factors, target) in [(vec![3, 4], 0), (vec![4, 3], 1), (vec![2, 3, 4], 1), (vec![2, 2, 3], 2)] {
        let u = random_unitary(&mut rng, factors[target]);
        let ours = embed_on_factor(&operator(u.clone()), target, &factors).unwrap();
        let oracle = kron_embed(&u, target, &factors);
        let dim: usize = factors.iter().product();
        for i in 0..dim {
            let e = StateVector::basis(i, &factors).unwrap();
            let diff = (ours.matrix() * e.amplitudes() - &oracle * e.amplitudes()).norm();
            assert!(diff < 1e-14, "{factors:?} target {target} basis {i}: {diff:e}");
        }
    }
}

#[test]
fn propagator_matches_taylor_exponential() {
    let mut rng = rng(2);
    for _ in 0..30 {
        let d = rng.gen_range(1..=6);
        let h = random_hermitian(&mut rng, d);
        let t = rng.gen_range(-3.0..3.0);
        let hbar = rng.gen_range(0.5..2.0);
        let u = propagate(&operator(h.clone()), t, hbar).unwrap();
        let oracle = expm_taylor(&(h * C64::new(0.0, -t / hbar)));
        assert!((u.matrix() - oracle).norm() < 1e-10);
        assert!(u.unitarity_defect() <= 1e-10);
    }
}

#[test]
fn schmidt_reconstruction_and_round_trip() {
    let mut rng = rng(3);
    let state = random_state(&mut rng, &[4, 5]);
    let dec = dec_of(&state);
    assert_eq!(dec.rank(), 4);
    assert!((rebuild(&dec) - state.amplitudes()).norm() <= 1e-10);
    for _ in 0..50 {
        let d_s = rng.gen_range(1..=5);
        let d_e = rng.gen_range(1..=5);
        let state = random_state(&mut rng, &[d_s, d_e]);
        let dec = dec_of(&state);
        assert!((rebuild(&dec) - state.amplitudes()).norm() <= 1e-10);
        assert!(dec.moduli.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn phase_unitary_acts_diagonally_on_schmidt_basis() {
    let mut rng = rng(4);
    for _ in 0..30 {
        let dims = [rng.gen_range(2..=5), rng.gen_range(2..=5)];
        let state = random_state(&mut rng, &dims);
        let dec = dec_of(&state);
        let phi: Vec<f64> = (0..dec.rank()).map(|_| rng.gen_range(-6.0..6.0)).collect();
        let u = phase_unitary(&dec, &phi).unwrap();
        for (k, s) in dec.left_basis.iter().enumerate() {
            let expected = s * C64::from_polar(1.0, phi[k]);
            assert!((u.matrix() * s - expected).norm() <= 1e-12);
        }
        assert!(u.unitarity_defect() <= 1e-12);
    }
}

#[test]
fn phase_pair_undoes_itself() {
    let mut rng = rng(5);
    for _ in 0..30 {
        let dims = [rng.gen_range(2..=5), rng.gen_range(2..=5)];
        let state = random_state(&mut rng, &dims);
        let dec = dec_of(&state);
        let phi: Vec<f64> = (0..dec.rank()).map(|_| rng.gen_range(-6.0..6.0)).collect();
        let l: Vec<i64> = (0..dec.rank()).map(|_| rng.gen_range(-2..=2)).collect();
        let u_s = phase_unitary(&dec, &phi).unwrap();
        let u_e = phase_counter(&dec, &phi, &l).unwrap();
        assert!(undo_residual(&state, u_s.matrix(), u_e.matrix()) <= 1e-10);

        let verdict = check_envariance(&state, &u_s, DEFAULT_DECISION_TOLERANCE).unwrap();
        let witness = verdict.witness().expect("phase changes are envariant");
        assert!(undo_residual(&state, u_s.matrix(), witness.matrix()) <= 1e-10);
    }
}

#[test]
fn swap_unitary_is_unitary() {
    let mut rng = rng(6);
    for _ in 0..30 {
        let dims = [rng.gen_range(2..=5), rng.gen_range(2..=5)];
        let state = random_state(&mut rng, &dims);
        let dec = dec_of(&state);
        let u = swap_unitary(&dec, 0, dec.rank() - 1, rng.gen_range(-3.0..3.0)).unwrap();
        assert!(u.unitarity_defect() <= 1e-12);
    }
}

#[test]
fn counterswap_with_distinct_phases() {
    let mut rng = rng(7);
    for _ in 0..20 {
        let (p1, p2) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let u = random_unitary(&mut rng, 3);
        let v = random_unitary(&mut rng, 3);
        let amps = u.column(0).kronecker(&v.column(0)) * C64::from_polar(FRAC_1_SQRT_2, -p1)
            + u.column(1).kronecker(&v.column(1)) * C64::from_polar(FRAC_1_SQRT_2, -p2);
        let state = StateVector::normalize(amps, vec![3, 3]).unwrap();
        let dec = dec_of(&state);
        let phi12 = rng.gen_range(-3.0..3.0);
        let u_s = swap_unitary(&dec, 0, 1, phi12).unwrap();
        let u_e = counterswap_unitary(&dec, 0, 1, phi12, rng.gen_range(-2..=2), 1e-10).unwrap();
        assert!(undo_residual(&state, u_s.matrix(), u_e.matrix()) <= 1e-10);
    }
}

#[test]
fn unequal_swap_cannot_be_undone_by_any_counterswap() {
    for (p1, phase) in [(1.0 / 3.0, 0.0), (0.8, 1.1), (0.55, -2.0)] {
        let (a1, a2) = (C64::from_polar(f64::sqrt(p1), -phase), C64::new((1.0 - p1).sqrt(), 0.0));
        let bound = SQRT_2 * (a1.norm() - a2.norm()).abs();
        for phi12 in [0.0, 0.4, -2.5] {
            let best = min_counterswap_residual(a1, a2, phi12, 2000);
            assert!(best >= bound - 1e-9, "grid minimum {best} below {bound}");
        }

        let state = StateVector::from_slice(&[a1, C64::new(0.0, 0.0), C64::new(0.0, 0.0), a2], &[2, 2]).unwrap();
        let dec = dec_of(&state);
        let swap = swap_unitary(&dec, 0, 1, 0.3).unwrap();
        assert!(counterswap_unitary(&dec, 0, 1, 0.3, 0, 1e-10).is_err());
        // Forcing the equal-modulus precondition off must still leave the bound.
        for l in -2..=2 {
            let forced = counterswap_unitary(&dec, 0, 1, 0.3, l, 1.0).unwrap();
            let r = verify_undo(&state, &swap, &forced, 1e-10).unwrap();
            assert!(!r.passed && r.residual >= bound - 1e-9);
        }
        assert!(!check_envariance(&state, &swap, DEFAULT_DECISION_TOLERANCE).unwrap().envariant());
    }
}

#[test]
fn certificate_equals_reduced_state_distance() {
    let third = C64::new((1.0f64 / 3.0).sqrt(), 0.0);
    let two_thirds = C64::new((2.0f64 / 3.0).sqrt(), 0.0);
    let zero = C64::new(0.0, 0.0);
    let state = StateVector::from_slice(&[third, zero, zero, two_thirds], &[2, 2]).unwrap();
    let mut rng = rng(8);
    let random = random_state(&mut rng, &[3, 4]);
    for state in [state, random] {
        let dec = dec_of(&state);
        let u_s = swap_unitary(&dec, 0, 1, 0.0).unwrap();
        let c = state.coefficient_matrix().unwrap();
        let moved = u_s.matrix() * &c;
        let expected = spectral_norm(&(&c * c.adjoint() - &moved * moved.adjoint()));
        let verdict = check_envariance(&state, &u_s, DEFAULT_DECISION_TOLERANCE).unwrap();
        let cert = verdict.certificate().expect("unequal branches");
        assert!((cert - expected).abs() < 1e-12, "{cert} vs {expected}");
    }
}

#[test]
fn rationalization_matches_exhaustive_scan() {
    let theta = 1.0f64;
    let moduli = [theta.cos(), theta.sin()];
    let p: Vec<f64> = moduli.iter().map(|m| m * m).collect();
    for bound in [5u64, 17, 50, 100] {
        let ours = commensurate_weights(&moduli, bound).unwrap();
        let brute = brute_force_rationalization(&p, bound);
        assert!((ours.error - brute).abs() < 1e-15, "bound {bound}: {} vs {brute}", ours.error);
    }
    let mut rng = rng(9);
    for _ in 0..10 {
        let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let moduli: Vec<f64> = raw.iter().map(|x| (x / total).sqrt()).collect();
        let p: Vec<f64> = moduli.iter().map(|m| m * m).collect();
        let ours = commensurate_weights(&moduli, 40).unwrap();
        let brute = brute_force_rationalization(&p, 40);
        assert!(ours.error >= brute - 1e-15 && ours.error < 3.0 / 40.0);
    }
    let mut previous = f64::INFINITY;
    for bound in [100u64, 1_000, 10_000] {
        let e = commensurate_weights(&moduli, bound).unwrap().error;
        assert!(e <= previous);
        previous = e;
    }
    assert!(previous <= 1e-4);
}

#[test]
fn fine_grained_branches_have_equal_moduli() {
    let mut rng = rng(10);
    for _ in 0..20 {
        let n = rng.gen_range(1..=4);
        let mut m: Vec<u64> = loop {
            let m: Vec<u64> = (0..n).map(|_| rng.gen_range(1..=6)).collect();
            if m.iter().sum::<u64>() <= 12 {
                break m;
            }
        };
        // Schmidt branches come out in descending order.
        m.sort_unstable_by(|a, b| b.cmp(a));
        let total = m.iter().sum::<u64>() as usize;
        let weights: Vec<f64> = m.iter().map(|&x| x as f64).collect();
        let state = state_with_weights(&mut rng, &weights, n + 1, n + 1);
        let dec = dec_of(&state);
        let w = BranchWeights::new(m.clone()).unwrap();
        let fg = fine_grain(&attach_counterweight(&dec, &w).unwrap(), &w).unwrap();
        let dense = fg.to_state_vector().unwrap();
        let [dm, d_s, d_e] = [total, n + 1, fg.factors()[2]];
        assert_eq!(dense.factors(), &[dm, d_s, d_e]);
        for j in 0..dm {
            let block: f64 = (0..d_s * d_e)
                .map(|r| dense.amplitudes()[j * d_s * d_e + r].norm_sqr())
                .sum();
            assert!((block.sqrt() - 1.0 / (dm as f64).sqrt()).abs() <= 1e-10);
        }
    }
}

#[test]
fn pipeline_matches_trace_rule_on_random_state() {
    let mut rng = rng(11);
    let state = random_state(&mut rng, &[5, 7]);
    let d = envariant_probabilities(&state, 10_000).unwrap();
    for (k, p) in d.probabilities.iter().enumerate() {
        let basis: Vec<DVector<C64>> = (0..7)
            .map(|j| {
                let mut e = DVector::from_element(7, C64::new(0.0, 0.0));
                e[j] = C64::new(1.0, 0.0);
                d.schmidt.left_basis[k].kronecker(&e)
            })
            .collect();
        let oracle: f64 = born_probabilities(&state, &basis).unwrap().iter().sum();
        assert!((p - oracle).abs() <= 2e-4);
    }
}

#[test]
fn factorization_on_qubits_by_direct_evaluation() {
    let mut rng = rng(12);
    for _ in 0..200 {
        let s: Vec<StateVector> = (0..4).map(|_| random_state(&mut rng, &[2])).collect();
        let f = factorization_check(&s[0], &s[1], &s[2], &s[3]).unwrap();
        let amp = |x: &StateVector, i| x.amplitudes()[i];
        let ip = |x: &StateVector, y: &StateVector| amp(y, 0).conj() * amp(x, 0) + amp(y, 1).conj() * amp(x, 1);
        let lhs = ip(&s[0], &s[1]).norm_sqr() * ip(&s[2], &s[3]).norm_sqr();
        assert!((f.lhs - lhs).abs() <= 1e-12 && f.residual <= 1e-12);
    }
}

#[test]
fn transition_probabilities_sum_to_one() {
    let mut rng = rng(13);
    for _ in 0..20 {
        let d = rng.gen_range(1..=6);
        let u = propagate(&operator(random_hermitian(&mut rng, d)), rng.gen_range(-5.0..5.0), 1.0).unwrap();
        let psi = random_state(&mut rng, &[d]);
        let total: f64 = (0..d)
            .map(|j| transition_probability(&psi, &StateVector::basis(j, &[d]).unwrap(), &u).unwrap())
            .sum();
        assert!((total - 1.0).abs() <= 1e-10);
    }
}

#[test]
fn rank_one_family_additivity() {
    let mut rng = rng(14);
    let w = random_unitary(&mut rng, 4);
    let basis: Vec<DVector<C64>> = (0..4).map(|k| w.column(k).into_owned()).collect();
    let family = ProjectorFamily::from_basis(&basis).unwrap();
    let psi = random_state(&mut rng, &[4]);
    let add = sigma_additivity_check(&psi, &family).unwrap();
    assert!(add.residual <= 1e-12 && (add.total - 1.0).abs() <= 1e-12);
    let direct: f64 = basis.iter().map(|b| b.dotc(psi.amplitudes()).norm_sqr()).sum();
    assert!((direct - add.total).abs() <= 1e-12);
}
