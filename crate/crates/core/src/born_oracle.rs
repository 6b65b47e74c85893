//! Direct Born-rule and trace-rule evaluations.
//!
//! Nothing here touches the Schmidt or envariance code: probabilities are
//! computed straight from amplitudes, inner products and projectors, so the
//! pipeline in [`crate::fine_graining`] can be cross-checked against an
//! independent route.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor_core::{
    partial_trace, tensor_product, Operator, StateVector, C64, NORM_TOLERANCE, UNITARY_TOLERANCE, ZERO,
};

const PROJECTOR_TOLERANCE: f64 = 1e-10;
const ORTHONORMAL_TOLERANCE: f64 = 1e-10;

/// Finite family of pairwise orthogonal projectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorFamily {
    projectors: Vec<Operator>,
}

impl ProjectorFamily {
    pub fn new(projectors: Vec<Operator>) -> Result<Self> {
        let dim = projectors
            .first()
            .map(Operator::dim)
            .ok_or_else(|| Error::InvalidProjectorFamily("empty family".into()))?;
        for (i, p) in projectors.iter().enumerate() {
            if p.dim() != dim {
                return Err(Error::InvalidProjectorFamily(format!(
                    "projector {i} has dimension {}, expected {dim}",
                    p.dim()
                )));
            }
            if !p.is_hermitian(PROJECTOR_TOLERANCE) {
                return Err(Error::InvalidProjectorFamily(format!("projector {i} is not Hermitian")));
            }
            let idem = (p.matrix() * p.matrix() - p.matrix()).norm();
            if idem > PROJECTOR_TOLERANCE {
                return Err(Error::InvalidProjectorFamily(format!(
                    "projector {i} is not idempotent (‖P² − P‖ = {idem:e})"
                )));
            }
        }
        for i in 0..projectors.len() {
            for j in i + 1..projectors.len() {
                let overlap = (projectors[i].matrix() * projectors[j].matrix()).norm();
                if overlap > PROJECTOR_TOLERANCE {
                    return Err(Error::InvalidProjectorFamily(format!(
                        "projectors {i} and {j} are not orthogonal (‖P_i P_j‖ = {overlap:e})"
                    )));
                }
            }
        }
        Ok(Self { projectors })
    }

    /// Rank-one projectors `|b_i⟩⟨b_i|` onto an orthonormal list.
    pub fn from_basis(basis: &[DVector<C64>]) -> Result<Self> {
        check_orthonormal(basis)?;
        Self::new(
            basis
                .iter()
                .map(|b| Operator::new(b * b.adjoint()).expect("outer product is square"))
                .collect(),
        )
    }

    /// `P_i ⊗ 1` for every `P_i`, acting on the first factor of `factors`.
    pub fn on_first_factor(&self, factors: [usize; 2]) -> Result<Self> {
        if self.dim() != factors[0] {
            return Err(Error::DimensionMismatch {
                expected: factors[0],
                found: self.dim(),
            });
        }
        let id = DMatrix::<C64>::identity(factors[1], factors[1]);
        Self::new(
            self.projectors
                .iter()
                .map(|p| Operator::new(p.matrix().kronecker(&id)).expect("square"))
                .collect(),
        )
    }

    /// Merges the projectors in each group into their sum.
    pub fn coarse_grain(&self, groups: &[Vec<usize>]) -> Result<Self> {
        let dim = self.dim();
        let mut merged = Vec::with_capacity(groups.len());
        for g in groups {
            let mut m = DMatrix::from_element(dim, dim, ZERO);
            for &i in g {
                let p = self.projectors.get(i).ok_or(Error::IndexOutOfRange {
                    index: i,
                    rank: self.projectors.len(),
                })?;
                m += p.matrix();
            }
            merged.push(Operator::new(m)?);
        }
        Self::new(merged)
    }

    pub fn projectors(&self) -> &[Operator] {
        &self.projectors
    }

    pub fn dim(&self) -> usize {
        self.projectors[0].dim()
    }

    pub fn sum(&self) -> Operator {
        let dim = self.dim();
        let m = self
            .projectors
            .iter()
            .fold(DMatrix::from_element(dim, dim, ZERO), |acc, p| acc + p.matrix());
        Operator::new(m).expect("square")
    }

    /// Whether the projectors resolve the identity.
    pub fn is_complete(&self, tol: f64) -> bool {
        let d = self.dim();
        (self.sum().matrix() - DMatrix::<C64>::identity(d, d)).norm() <= tol
    }
}

fn check_orthonormal(basis: &[DVector<C64>]) -> Result<()> {
    let mut defect = 0.0f64;
    for (i, a) in basis.iter().enumerate() {
        for (j, b) in basis.iter().enumerate() {
            if a.len() != b.len() {
                return Err(Error::DimensionMismatch {
                    expected: a.len(),
                    found: b.len(),
                });
            }
            let target = if i == j { 1.0 } else { 0.0 };
            defect = defect.max((a.dotc(b) - C64::new(target, 0.0)).norm());
        }
    }
    if defect > ORTHONORMAL_TOLERANCE {
        return Err(Error::NonOrthonormalBasis { defect });
    }
    Ok(())
}

/// `⟨ψ|P|ψ⟩`.
fn expectation(state: &StateVector, p: &Operator) -> Result<f64> {
    if p.dim() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            found: p.dim(),
        });
    }
    let a = state.amplitudes();
    Ok(a.dotc(&(p.matrix() * a)).re)
}

/// `p_i = |⟨b_i|ψ⟩|²` over an orthonormal list.
pub fn born_probabilities(state: &StateVector, basis: &[DVector<C64>]) -> Result<Vec<f64>> {
    check_orthonormal(basis)?;
    basis
        .iter()
        .map(|b| {
            if b.len() != state.dim() {
                return Err(Error::DimensionMismatch {
                    expected: state.dim(),
                    found: b.len(),
                });
            }
            Ok(b.dotc(state.amplitudes()).norm_sqr())
        })
        .collect()
}

/// `p_i = ⟨ψ|P_i|ψ⟩` (the trace rule `Tr(ρ P_i)` for a pure `ρ`).
pub fn born_probabilities_family(state: &StateVector, family: &ProjectorFamily) -> Result<Vec<f64>> {
    family.projectors().iter().map(|p| expectation(state, p)).collect()
}

/// Computational-basis distribution `|ψ_j|²`.
pub fn computational_probabilities(state: &StateVector) -> Vec<f64> {
    state.amplitudes().iter().map(|z| z.norm_sqr()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Factorization {
    /// `p(a′|a) · p(b′|b)`.
    pub lhs: f64,
    /// `|(⟨a′| ⊗ ⟨b′|)(|a⟩ ⊗ |b⟩)|²`.
    pub rhs: f64,
    pub residual: f64,
}

/// Both sides of `p(a′|a) p(b′|b) = |(⟨a′| ⊗ ⟨b′|)(|a⟩ ⊗ |b⟩)|²`.
pub fn factorization_check(
    a: &StateVector,
    a_prime: &StateVector,
    b: &StateVector,
    b_prime: &StateVector,
) -> Result<Factorization> {
    let lhs = a_prime.inner(a)?.norm_sqr() * b_prime.inner(b)?.norm_sqr();
    let joint = tensor_product(a, b)?;
    let joint_prime = tensor_product(a_prime, b_prime)?;
    let rhs = joint_prime.inner(&joint)?.norm_sqr();
    Ok(Factorization {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
    })
}

/// `|⟨ψ2|U|ψ1⟩|²`; `U` must be unitary.
pub fn transition_probability(psi1: &StateVector, psi2: &StateVector, u: &Operator) -> Result<f64> {
    u.check_unitary(UNITARY_TOLERANCE)?;
    if u.dim() != psi1.dim() || u.dim() != psi2.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            found: if u.dim() != psi1.dim() { psi1.dim() } else { psi2.dim() },
        });
    }
    Ok(psi2.amplitudes().dotc(&(u.matrix() * psi1.amplitudes())).norm_sqr())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Additivity {
    /// `|p(Σ P_i) − Σ p(P_i)|`.
    pub residual: f64,
    pub min_probability: f64,
    pub total: f64,
}

impl Additivity {
    pub fn holds(&self, residual_tol: f64, negativity_tol: f64) -> bool {
        self.residual <= residual_tol && self.min_probability >= -negativity_tol
    }
}

/// Additivity of the functional `P ↦ ⟨ψ|P|ψ⟩` over an orthogonal family.
pub fn sigma_additivity_check(state: &StateVector, family: &ProjectorFamily) -> Result<Additivity> {
    let parts = born_probabilities_family(state, family)?;
    let whole = expectation(state, &family.sum())?;
    let sum: f64 = parts.iter().sum();
    Ok(Additivity {
        residual: (whole - sum).abs(),
        min_probability: parts.iter().copied().fold(f64::INFINITY, f64::min),
        total: whole,
    })
}

/// Whether the reduced state of the first factor is proportional to the
/// identity on its support, i.e. whether nothing distinguishes the
/// subsystem's outcomes.
pub fn ignorance_check(state: &StateVector, tol: f64) -> Result<bool> {
    state.bipartite_dims()?;
    state.check_normalized(NORM_TOLERANCE)?;
    let rho = partial_trace(state, &[0])?;
    let eig = SymmetricEigen::new(rho.matrix().clone());
    let support: Vec<f64> = eig.eigenvalues.iter().copied().filter(|&l| l > tol).collect();
    let (lo, hi) = support
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &l| (lo.min(l), hi.max(l)));
    Ok(support.is_empty() || hi - lo <= tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_core::{propagate, ONE};
    use std::f64::consts::FRAC_1_SQRT_2;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn computational(d: usize) -> Vec<DVector<C64>> {
        (0..d)
            .map(|i| {
                let mut v = DVector::from_element(d, ZERO);
                v[i] = ONE;
                v
            })
            .collect()
    }

    fn bell() -> StateVector {
        StateVector::from_slice(&[c(FRAC_1_SQRT_2), ZERO, ZERO, c(FRAC_1_SQRT_2)], &[2, 2]).unwrap()
    }

    fn singlet() -> StateVector {
        StateVector::from_slice(&[ZERO, c(FRAC_1_SQRT_2), c(-FRAC_1_SQRT_2), ZERO], &[2, 2]).unwrap()
    }

    #[test]
    fn basis_vector_gives_indicator() {
        let s = StateVector::basis(2, &[4]).unwrap();
        assert_eq!(born_probabilities(&s, &computational(4)).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn bell_first_qubit_marginal() {
        let fam = ProjectorFamily::from_basis(&computational(2))
            .unwrap()
            .on_first_factor([2, 2])
            .unwrap();
        assert!(fam.is_complete(1e-12));
        let p = born_probabilities_family(&bell(), &fam).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn singlet_joint_distribution_is_anticorrelated() {
        let p = born_probabilities(&singlet(), &computational(4)).unwrap();
        let want = [0.0, 0.5, 0.5, 0.0];
        for (x, w) in p.iter().zip(want) {
            assert!((x - w).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_non_orthonormal_basis() {
        let mut b = computational(2);
        b[1] = b[0].clone();
        assert!(born_probabilities(&StateVector::basis(0, &[2]).unwrap(), &b).is_err());
        assert!(matches!(
            ProjectorFamily::from_basis(&b),
            Err(Error::NonOrthonormalBasis { .. })
        ));
    }

    #[test]
    fn invalid_families() {
        let half = Operator::new(DMatrix::identity(2, 2).scale(0.5)).unwrap();
        assert!(matches!(ProjectorFamily::new(vec![half]), Err(Error::InvalidProjectorFamily(_))));
        let p0 = Operator::new(computational(2)[0].clone() * computational(2)[0].adjoint()).unwrap();
        assert!(matches!(
            ProjectorFamily::new(vec![p0.clone(), p0]),
            Err(Error::InvalidProjectorFamily(_))
        ));
        assert!(ProjectorFamily::new(vec![]).is_err());
    }

    #[test]
    fn factorization_edge_cases() {
        let a = StateVector::from_slice(&[c(0.6), C64::new(0.0, 0.8)], &[2]).unwrap();
        let b = StateVector::from_slice(&[c(FRAC_1_SQRT_2), c(FRAC_1_SQRT_2)], &[2]).unwrap();
        let f = factorization_check(&a, &a, &b, &b).unwrap();
        assert!((f.lhs - 1.0).abs() < 1e-15 && (f.rhs - 1.0).abs() < 1e-15);
        let a_perp = StateVector::from_slice(&[c(0.8), C64::new(0.0, -0.6)], &[2]).unwrap();
        assert!(a_perp.inner(&a).unwrap().norm() < 1e-15);
        let f = factorization_check(&a, &a_perp, &b, &b).unwrap();
        assert!(f.lhs < 1e-30 && f.rhs < 1e-30);
    }

    #[test]
    fn transition_identity_cases_and_non_unitary() {
        let s = StateVector::basis(0, &[2]).unwrap();
        let t = StateVector::basis(1, &[2]).unwrap();
        let id = Operator::identity(2);
        assert_eq!(transition_probability(&s, &s, &id).unwrap(), 1.0);
        assert_eq!(transition_probability(&s, &t, &id).unwrap(), 0.0);
        let bad = Operator::new(DMatrix::identity(2, 2).scale(2.0)).unwrap();
        assert!(matches!(transition_probability(&s, &t, &bad), Err(Error::NotUnitary { .. })));
    }

    #[test]
    fn transition_completeness_for_a_propagator() {
        let h = Operator::new(DMatrix::from_row_slice(2, 2, &[c(0.3), C64::new(0.2, -0.5), C64::new(0.2, 0.5), c(-1.0)]))
            .unwrap();
        let u = propagate(&h, 0.9, 1.0).unwrap();
        let psi = StateVector::from_slice(&[c(0.6), C64::new(0.0, 0.8)], &[2]).unwrap();
        let total: f64 = (0..2)
            .map(|i| transition_probability(&psi, &StateVector::basis(i, &[2]).unwrap(), &u).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projector_and_complement() {
        let v = DVector::from_vec(vec![c(0.6), C64::new(0.0, 0.8)]);
        let p = v.clone() * v.adjoint();
        let q = DMatrix::<C64>::identity(2, 2) - &p;
        let fam = ProjectorFamily::new(vec![Operator::new(p).unwrap(), Operator::new(q).unwrap()]).unwrap();
        let s = StateVector::from_slice(&[c(FRAC_1_SQRT_2), c(FRAC_1_SQRT_2)], &[2]).unwrap();
        let add = sigma_additivity_check(&s, &fam).unwrap();
        assert!(add.residual <= 1e-12);
        assert!((add.total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coarse_graining_is_additive() {
        let s = StateVector::normalize(
            DVector::from_vec(vec![c(1.0), C64::new(0.5, 0.5), c(-0.3), C64::new(0.0, 2.0)]),
            vec![4],
        )
        .unwrap();
        let fine = ProjectorFamily::from_basis(&computational(4)).unwrap();
        let coarse = fine.coarse_grain(&[vec![0, 1], vec![2], vec![3]]).unwrap();
        let pf = born_probabilities_family(&s, &fine).unwrap();
        let pc = born_probabilities_family(&s, &coarse).unwrap();
        assert!((pc[0] - (pf[0] + pf[1])).abs() <= 1e-15);
        assert!(sigma_additivity_check(&s, &coarse).unwrap().residual <= 1e-12);
    }

    #[test]
    fn ignorance_cases() {
        assert!(ignorance_check(&bell(), 1e-8).unwrap());
        assert!(ignorance_check(&singlet(), 1e-8).unwrap());
        let unequal =
            StateVector::from_slice(&[c((1.0f64 / 3.0).sqrt()), ZERO, ZERO, c((2.0f64 / 3.0).sqrt())], &[2, 2])
                .unwrap();
        assert!(!ignorance_check(&unequal, 1e-8).unwrap());
        // rank-deficient: equal weights on a 2-dim support of a qutrit
        let amps: Vec<C64> = vec![c(FRAC_1_SQRT_2), ZERO, ZERO, c(FRAC_1_SQRT_2), ZERO, ZERO];
        let s = StateVector::from_slice(&amps, &[3, 2]).unwrap();
        assert!(ignorance_check(&s, 1e-8).unwrap());
    }
}
