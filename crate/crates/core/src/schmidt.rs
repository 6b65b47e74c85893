//! Biorthonormal (Schmidt) decomposition of bipartite pure states.
//!
//! Coefficients are stored as `a_k = |a_k| · e^{−iφ_k}` so that
//!
//! ```text
//! |ψ⟩ = Σ_k |a_k| e^{−iφ_k} |s_k⟩ ⊗ |ε_k⟩
//! ```
//!
//! with `φ_k ∈ (−π, π]`. The phase is pinned down by gauging every basis
//! vector so that its pivot component (the first entry whose modulus is
//! within a relative `1e−6` of the largest) is real and positive. Whatever
//! phase remains is reported in `phases` and never discarded.
//!
//! Degenerate singular values leave the bases non-unique. Each degenerate
//! block of left vectors is replaced by the canonical basis obtained from
//! pivoted Gram–Schmidt on the columns of the block projector, and the
//! right vectors are transported with the conjugate change of basis. The
//! result is deterministic, but callers should rely only on the
//! reconstruction contract, not on basis identity.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::encoding;
use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor_core::{StateVector, C64, NORM_TOLERANCE, ZERO};

/// Singular values below this fraction of the largest are dropped.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-12;

/// Singular values closer than this are treated as one degenerate block
/// when canonicalizing bases.
const DEGENERACY_TOLERANCE: f64 = 1e-12;

const PIVOT_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchmidtDecomposition {
    /// `|a_k|`, descending.
    pub moduli: Vec<f64>,
    /// `φ_k` with `a_k = |a_k| e^{−iφ_k}`.
    pub phases: Vec<f64>,
    /// `|s_k⟩` over the first factor.
    #[serde(with = "encoding::complex_vecs")]
    pub left_basis: Vec<DVector<C64>>,
    /// `|ε_k⟩` over the second factor.
    #[serde(with = "encoding::complex_vecs")]
    pub right_basis: Vec<DVector<C64>>,
}

impl SchmidtDecomposition {
    pub fn rank(&self) -> usize {
        self.moduli.len()
    }

    /// Complex coefficient `a_k`.
    pub fn coefficient(&self, k: usize) -> C64 {
        C64::from_polar(self.moduli[k], -self.phases[k])
    }

    pub fn dims(&self) -> [usize; 2] {
        [
            self.left_basis.first().map_or(0, |v| v.len()),
            self.right_basis.first().map_or(0, |v| v.len()),
        ]
    }

    /// Largest deviation of either basis from orthonormality.
    pub fn orthonormality_defect(&self) -> f64 {
        gram_defect(&self.left_basis).max(gram_defect(&self.right_basis))
    }

    pub(crate) fn check_index(&self, k: usize) -> Result<()> {
        if k < self.rank() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: k,
                rank: self.rank(),
            })
        }
    }
}

/// `max |⟨v_i|v_j⟩ − δ_ij|`.
pub fn gram_defect(vs: &[DVector<C64>]) -> f64 {
    let mut worst = 0.0f64;
    for (i, a) in vs.iter().enumerate() {
        for (j, b) in vs.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((a.dotc(b) - C64::new(target, 0.0)).norm());
        }
    }
    worst
}

/// Index of the first entry whose modulus is within `PIVOT_SLACK` of the largest.
fn pivot_index<'a>(norms: impl Iterator<Item = f64> + Clone + 'a) -> usize {
    let max = norms.clone().fold(0.0f64, f64::max);
    norms
        .clone()
        .position(|x| x >= max * (1.0 - PIVOT_SLACK))
        .unwrap_or(0)
}

/// Rotates `v` so its pivot entry is real and positive.
fn gauge(v: &mut DVector<C64>) {
    let p = pivot_index(v.iter().map(|z| z.norm()));
    let z = v[p];
    if z.norm() > 0.0 {
        let phase = z.conj() / z.norm();
        v.iter_mut().for_each(|x| *x *= phase);
    }
}

fn canonical_phase(phi: f64) -> f64 {
    // (−π, π]
    if phi <= -PI + 1e-14 {
        PI
    } else {
        phi + 0.0 // no negative zero
    }
}

/// Canonical orthonormal basis of the column space of `block` via pivoted
/// Gram–Schmidt over the columns of its projector.
fn canonical_block_basis(block: &DMatrix<C64>) -> DMatrix<C64> {
    let dim = block.nrows();
    let m = block.ncols();
    let projector = block * block.adjoint();
    let mut chosen: Vec<DVector<C64>> = Vec::with_capacity(m);
    let mut candidates: Vec<DVector<C64>> = (0..dim).map(|i| projector.column(i).into_owned()).collect();
    for _ in 0..m {
        let p = pivot_index(candidates.iter().map(|c| c.norm()));
        let v = candidates[p].normalize();
        for c in candidates.iter_mut() {
            let overlap = v.dotc(c);
            *c -= &v * overlap;
        }
        chosen.push(v);
    }
    DMatrix::from_columns(&chosen)
}

/// Schmidt decomposition of a two-factor state.
///
/// `rank_tolerance` is relative to the largest singular value.
pub fn schmidt_decompose(state: &StateVector, rank_tolerance: f64) -> Result<SchmidtDecomposition> {
    let [d_s, d_e] = state.bipartite_dims()?;
    let c = state.coefficient_matrix()?;
    let svd = linalg::svd(&c);
    let sigma = &svd.sigma;
    let largest = sigma[0];
    let rank = sigma.iter().take_while(|&&s| s > rank_tolerance * largest).count();

    let moduli: Vec<f64> = sigma[..rank].to_vec();
    let mut left: Vec<DVector<C64>> = (0..rank).map(|k| svd.u.column(k).into_owned()).collect();
    // C = Σ σ_k u_k v_k†, so the environment vector is conj(v_k).
    let mut right: Vec<DVector<C64>> = (0..rank).map(|k| svd.v.column(k).map(|z| z.conj())).collect();

    let mut start = 0;
    while start < moduli.len() {
        let mut end = start + 1;
        while end < moduli.len() && moduli[start] - moduli[end] <= DEGENERACY_TOLERANCE {
            end += 1;
        }
        if end - start > 1 {
            let b = DMatrix::from_columns(&left[start..end]);
            let w = DMatrix::from_columns(&right[start..end]);
            let b_new = canonical_block_basis(&b);
            let q = b.adjoint() * &b_new;
            let w_new = w * q.map(|z| z.conj());
            for (offset, k) in (start..end).enumerate() {
                left[k] = b_new.column(offset).into_owned();
                right[k] = w_new.column(offset).into_owned();
            }
        }
        start = end;
    }

    let mut phases = Vec::with_capacity(moduli.len());
    for k in 0..moduli.len() {
        gauge(&mut left[k]);
        gauge(&mut right[k]);
        // a_k = (⟨s_k| ⊗ ⟨ε_k|) |ψ⟩
        let mut a = ZERO;
        for i in 0..d_s {
            for j in 0..d_e {
                a += left[k][i].conj() * right[k][j].conj() * c[(i, j)];
            }
        }
        phases.push(canonical_phase(-a.arg()));
    }

    let dec = SchmidtDecomposition {
        moduli,
        phases,
        left_basis: left,
        right_basis: right,
    };
    let norm2: f64 = dec.moduli.iter().map(|m| m * m).sum();
    if (norm2 - 1.0).abs() > NORM_TOLERANCE {
        return Err(Error::NotNormalized { norm: norm2.sqrt() });
    }
    Ok(dec)
}

/// `Σ_k a_k |s_k⟩ ⊗ |ε_k⟩` as a state on `factors`.
pub fn reconstruct(dec: &SchmidtDecomposition, factors: [usize; 2]) -> Result<StateVector> {
    let [d_s, d_e] = factors;
    let mut amps = DVector::from_element(d_s * d_e, ZERO);
    for k in 0..dec.rank() {
        let (s, e) = (&dec.left_basis[k], &dec.right_basis[k]);
        if s.len() != d_s {
            return Err(Error::DimensionMismatch {
                expected: d_s,
                found: s.len(),
            });
        }
        if e.len() != d_e {
            return Err(Error::DimensionMismatch {
                expected: d_e,
                found: e.len(),
            });
        }
        amps += s.kronecker(e) * dec.coefficient(k);
    }
    StateVector::new(amps, factors.to_vec())
}

/// Groups branch indices into maximal runs of (descending) moduli whose
/// pairwise spread is at most `modulus_tolerance`.
pub fn swappable_classes(dec: &SchmidtDecomposition, modulus_tolerance: f64) -> Vec<Vec<usize>> {
    let mut classes: Vec<Vec<usize>> = Vec::new();
    let mut start = 0;
    while start < dec.rank() {
        let mut class = vec![start];
        let mut next = start + 1;
        while next < dec.rank() && dec.moduli[start] - dec.moduli[next] <= modulus_tolerance {
            class.push(next);
            next += 1;
        }
        classes.push(class);
        start = next;
    }
    classes
}
