//! Envariance witnesses and the envariance decision procedure.
//!
//! A bipartite state `|ψ⟩` on `S ⊗ E` is envariant under a unitary `u_S` on
//! `S` when some unitary `u_E` on `E` undoes it:
//!
//! ```text
//! (1 ⊗ u_E)(u_S ⊗ 1)|ψ⟩ = |ψ⟩
//! ```
//!
//! The equality is literal; no global phase is quotiented out.
//!
//! The constructors [`phase_unitary`], [`phase_counter`], [`swap_unitary`]
//! and [`counterswap_unitary`] build the explicit pairs. For an arbitrary
//! `u_S`, [`check_envariance`] decides the question from reduced states: a
//! counter-unitary exists exactly when `u_S` leaves `Tr_E |ψ⟩⟨ψ|`
//! unchanged. That criterion goes through
//! [`partial_trace`](crate::tensor_core::partial_trace), so
//! the decision, unlike the explicit constructions, already relies on the
//! trace rule.
//!
//! This module says nothing about probabilities.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::encoding;
use crate::linalg;
use crate::error::{Error, Result};
use crate::schmidt::{schmidt_decompose, SchmidtDecomposition, DEFAULT_RANK_TOLERANCE};
use crate::tensor_core::{
    apply, embed_on_factor, partial_trace, Operator, StateVector, C64, ONE, UNITARY_TOLERANCE,
};

/// Default decision tolerance on the operator-norm distance of reduced states.
pub const DEFAULT_DECISION_TOLERANCE: f64 = 1e-8;

/// Every witness returned by [`check_envariance`] undoes `u_S` to this accuracy.
pub const WITNESS_TOLERANCE: f64 = 1e-9;

/// Default tolerance for the equal-modulus precondition of the counterswap.
pub const DEFAULT_MODULUS_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UndoCheck {
    pub passed: bool,
    pub residual: f64,
}

/// Outcome of [`check_envariance`]: either a witness `u_E` or a certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvarianceVerdict {
    witness: Option<Operator>,
    undo_residual: Option<f64>,
    certificate: Option<f64>,
    marginal_distance: f64,
}

impl EnvarianceVerdict {
    pub fn envariant(&self) -> bool {
        self.witness.is_some()
    }

    pub fn witness(&self) -> Option<&Operator> {
        self.witness.as_ref()
    }

    /// Operator-norm distance between the reduced states before and after `u_S`,
    /// present only for negative verdicts.
    pub fn certificate(&self) -> Option<f64> {
        self.certificate
    }

    pub fn undo_residual(&self) -> Option<f64> {
        self.undo_residual
    }

    pub fn marginal_distance(&self) -> f64 {
        self.marginal_distance
    }

    /// The undo residual for positive verdicts, the certificate otherwise.
    pub fn residual_or_certificate(&self) -> f64 {
        self.undo_residual.or(self.certificate).unwrap_or_default()
    }

    pub fn to_json(&self, emit_witness: bool) -> serde_json::Value {
        let witness = match (&self.witness, emit_witness) {
            (Some(w), true) => serde_json::to_value(encoding::matrix_rows(w.matrix()))
                .expect("matrix serialization is infallible"),
            _ => serde_json::Value::Null,
        };
        serde_json::json!({
            "envariant": self.envariant(),
            "residual_or_certificate": self.residual_or_certificate(),
            "witness": witness,
        })
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, found })
    }
}

/// `1 + Σ_k (λ_k − 1)|v_k⟩⟨v_k|` for orthonormal `v_k`.
fn diagonal_in_basis(basis: &[DVector<C64>], eigenvalues: impl Iterator<Item = C64>) -> Operator {
    let dim = basis.first().map_or(0, |v| v.len());
    let mut m = DMatrix::<C64>::identity(dim, dim);
    for (v, lambda) in basis.iter().zip(eigenvalues) {
        m += v * v.adjoint() * (lambda - ONE);
    }
    Operator::new(m).expect("square by construction")
}

/// `e^{iθ}|v_1⟩⟨v_2| + e^{−iθ}|v_2⟩⟨v_1|` plus the identity off `span{v_1, v_2}`.
fn exchange(v1: &DVector<C64>, v2: &DVector<C64>, theta: f64) -> Operator {
    let dim = v1.len();
    let p1 = v1 * v1.adjoint();
    let p2 = v2 * v2.adjoint();
    let mut m = DMatrix::<C64>::identity(dim, dim) - p1 - p2;
    m += v1 * v2.adjoint() * C64::from_polar(1.0, theta);
    m += v2 * v1.adjoint() * C64::from_polar(1.0, -theta);
    Operator::new(m).expect("square by construction")
}

fn check_swap_indices(dec: &SchmidtDecomposition, k1: usize, k2: usize) -> Result<()> {
    dec.check_index(k1)?;
    dec.check_index(k2)?;
    if k1 == k2 {
        return Err(Error::IdenticalIndices(k1));
    }
    Ok(())
}

/// `u_S` with `u_S|s_k⟩ = e^{iφ_k}|s_k⟩`, identity off the Schmidt span.
pub fn phase_unitary(dec: &SchmidtDecomposition, phi: &[f64]) -> Result<Operator> {
    check_len(dec.rank(), phi.len())?;
    Ok(diagonal_in_basis(
        &dec.left_basis,
        phi.iter().map(|&p| C64::from_polar(1.0, p)),
    ))
}

/// `u_E` with `u_E|ε_k⟩ = e^{−i(φ_k + 2π l_k)}|ε_k⟩`, identity off the Schmidt span.
pub fn phase_counter(dec: &SchmidtDecomposition, phi: &[f64], l: &[i64]) -> Result<Operator> {
    check_len(dec.rank(), phi.len())?;
    check_len(dec.rank(), l.len())?;
    let tau = std::f64::consts::TAU;
    Ok(diagonal_in_basis(
        &dec.right_basis,
        phi.iter()
            .zip(l)
            .map(|(&p, &lk)| C64::from_polar(1.0, -(p + tau * lk as f64))),
    ))
}

/// `e^{iφ12}|s_{k1}⟩⟨s_{k2}| + e^{−iφ12}|s_{k2}⟩⟨s_{k1}|`, identity elsewhere.
pub fn swap_unitary(dec: &SchmidtDecomposition, k1: usize, k2: usize, phi12: f64) -> Result<Operator> {
    check_swap_indices(dec, k1, k2)?;
    Ok(exchange(&dec.left_basis[k1], &dec.left_basis[k2], phi12))
}

/// The environment-side exchange undoing [`swap_unitary`]:
/// `e^{−iθ}|ε_{k1}⟩⟨ε_{k2}| + e^{iθ}|ε_{k2}⟩⟨ε_{k1}|` with
/// `θ = φ12 + φ_{k1} − φ_{k2} + 2π l12`, using the stored coefficient phases.
///
/// Only defined when the two branches have equal moduli.
pub fn counterswap_unitary(
    dec: &SchmidtDecomposition,
    k1: usize,
    k2: usize,
    phi12: f64,
    l12: i64,
    modulus_tolerance: f64,
) -> Result<Operator> {
    check_swap_indices(dec, k1, k2)?;
    let (m1, m2) = (dec.moduli[k1], dec.moduli[k2]);
    if (m1 - m2).abs() > modulus_tolerance {
        return Err(Error::UnequalModuli { k1, k2, m1, m2 });
    }
    let theta = phi12 + dec.phases[k1] - dec.phases[k2] + std::f64::consts::TAU * l12 as f64;
    Ok(exchange(&dec.right_basis[k1], &dec.right_basis[k2], -theta))
}

/// `‖(1 ⊗ u_E)(u_S ⊗ 1)|ψ⟩ − |ψ⟩‖` compared against `tol`.
pub fn verify_undo(state: &StateVector, u_s: &Operator, u_e: &Operator, tol: f64) -> Result<UndoCheck> {
    let factors = state.bipartite_dims()?;
    let big_s = embed_on_factor(u_s, 0, &factors)?;
    let big_e = embed_on_factor(u_e, 1, &factors)?;
    let moved = apply(&big_e, &apply(&big_s, state)?)?;
    let residual = moved.distance(state)?;
    Ok(UndoCheck {
        passed: residual <= tol,
        residual,
    })
}

/// Nearest unitary in Frobenius norm (unitary polar factor).
fn polar_unitary(m: &DMatrix<C64>) -> DMatrix<C64> {
    let svd = linalg::svd(m);
    svd.u * svd.v.adjoint()
}

/// Decides whether `state` (bipartite `S ⊗ E`) is envariant under `u_s`.
///
/// The verdict is positive exactly when the reduced state on `S` moves by at
/// most `tol` in operator norm. A positive verdict carries an explicit `u_E`
/// that has been checked with [`verify_undo`] at [`WITNESS_TOLERANCE`]; if no
/// such witness can be built the call fails with
/// [`Error::WitnessConstruction`] rather than answering `false`.
pub fn check_envariance(state: &StateVector, u_s: &Operator, tol: f64) -> Result<EnvarianceVerdict> {
    let factors = state.bipartite_dims()?;
    if u_s.dim() != factors[0] {
        return Err(Error::DimensionMismatch {
            expected: factors[0],
            found: u_s.dim(),
        });
    }
    u_s.check_unitary(UNITARY_TOLERANCE)?;
    let moved = apply(&embed_on_factor(u_s, 0, &factors)?, state)?;
    let before = partial_trace(state, &[0])?;
    let after = partial_trace(&moved, &[0])?;
    let distance = before.operator_distance(&after)?;
    if distance > tol {
        return Ok(EnvarianceVerdict {
            witness: None,
            undo_residual: None,
            certificate: Some(distance),
            marginal_distance: distance,
        });
    }

    let dec = schmidt_decompose(state, DEFAULT_RANK_TOLERANCE)?;
    let witness = counter_unitary(&dec, u_s, tol, factors[1]);
    let undo = verify_undo(state, u_s, &witness, WITNESS_TOLERANCE)?;
    if !undo.passed {
        return Err(Error::WitnessConstruction {
            residual: undo.residual,
            tolerance: WITNESS_TOLERANCE,
        });
    }
    Ok(EnvarianceVerdict {
        witness: Some(witness),
        undo_residual: Some(undo.residual),
        certificate: None,
        marginal_distance: distance,
    })
}

/// Builds `u_E` block by block over groups of (nearly) equal Schmidt weights.
///
/// Within a block `b`, `u_S` acts on the left vectors as the block unitary
/// `Q_b = S_b† u_S S_b`. Writing the coefficients as `|a| D_b` with the phase
/// matrix `D_b`, the counter-unitary must satisfy `u_E E_b = E_b (D_b† Q_b† D_b)ᵀ`.
fn counter_unitary(dec: &SchmidtDecomposition, u_s: &Operator, tol: f64, d_e: usize) -> Operator {
    let mut u_e = DMatrix::<C64>::identity(d_e, d_e);
    let weights: Vec<f64> = dec.moduli.iter().map(|m| m * m).collect();
    let mut start = 0;
    while start < dec.rank() {
        let mut end = start + 1;
        while end < dec.rank() && weights[start] - weights[end] <= tol {
            end += 1;
        }
        let s_b = DMatrix::from_columns(&dec.left_basis[start..end]);
        let e_b = DMatrix::from_columns(&dec.right_basis[start..end]);
        let q = polar_unitary(&(s_b.adjoint() * u_s.matrix() * &s_b));
        let d = DMatrix::from_diagonal(&DVector::from_iterator(
            end - start,
            dec.phases[start..end].iter().map(|&p| C64::from_polar(1.0, -p)),
        ));
        let r = d.adjoint() * q.adjoint() * &d;
        u_e += &e_b * r.transpose() * e_b.adjoint() - &e_b * e_b.adjoint();
        start = end;
    }
    Operator::new(u_e).expect("square by construction")
}
