//! Dense complex linear algebra over composite systems.
//!
//! A [`StateVector`] carries its amplitudes together with the ordered list of
//! factor dimensions it lives on. Flat indices decompose with the **last factor
//! varying fastest**: for factors `(d_0, .., d_{n-1})` the multi-index
//! `(i_0, .., i_{n-1})` sits at `Σ_f i_f · Π_{g>f} d_g`. Every module in the
//! crate uses this convention.
//!
//! [`partial_trace`] builds reduced density matrices by summing `|ψ⟩⟨ψ|` over
//! the discarded factors. Interpreting the result as the state of the kept
//! subsystem already presupposes the trace rule for probabilities. The
//! envariance decision procedure in [`crate::envariance`] is built on top of
//! this function, and that dependency is deliberate and visible: it is the
//! one place where the symmetry argument leans on the rule it is meant to
//! produce.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::encoding::{self, Pair};
use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const NORM_TOLERANCE: f64 = 1e-10;
pub const UNITARY_TOLERANCE: f64 = 1e-10;
pub const HERMITIAN_TOLERANCE: f64 = 1e-10;
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Hand-authored state files may deviate this much from unit norm before
/// they are rejected; accepted files are renormalized.
pub const INGEST_NORM_TOLERANCE: f64 = 1e-6;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

/// A normalized pure state on a tensor product of factors.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: DVector<C64>,
    factors: Vec<usize>,
}

fn check_factors(factors: &[usize], len: usize) -> Result<()> {
    if factors.is_empty() || factors.contains(&0) {
        return Err(Error::InvalidFactorSet(format!(
            "factor dimensions must be positive, got {factors:?}"
        )));
    }
    let dim: usize = factors.iter().product();
    if dim != len {
        return Err(Error::LengthMismatch {
            expected: dim,
            found: len,
        });
    }
    Ok(())
}

impl StateVector {
    /// Builds a state, requiring unit norm within [`NORM_TOLERANCE`].
    pub fn new(amplitudes: DVector<C64>, factors: Vec<usize>) -> Result<Self> {
        Self::with_tolerance(amplitudes, factors, NORM_TOLERANCE)
    }

    pub fn with_tolerance(amplitudes: DVector<C64>, factors: Vec<usize>, tol: f64) -> Result<Self> {
        let state = Self::unnormalized(amplitudes, factors)?;
        state.check_normalized(tol)?;
        Ok(state)
    }

    /// Builds a vector without checking its norm. Used for intermediate
    /// results such as the output of [`apply`], whose norm is the thing
    /// being tested.
    pub fn unnormalized(amplitudes: DVector<C64>, factors: Vec<usize>) -> Result<Self> {
        check_factors(&factors, amplitudes.len())?;
        Ok(Self { amplitudes, factors })
    }

    /// Rescales the input to unit norm.
    pub fn normalize(amplitudes: DVector<C64>, factors: Vec<usize>) -> Result<Self> {
        check_factors(&factors, amplitudes.len())?;
        let norm = amplitudes.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::NotNormalized { norm });
        }
        Ok(Self {
            amplitudes: amplitudes.unscale(norm),
            factors,
        })
    }

    pub fn from_slice(amplitudes: &[C64], factors: &[usize]) -> Result<Self> {
        Self::new(DVector::from_column_slice(amplitudes), factors.to_vec())
    }

    /// Computational basis vector `|index⟩`.
    pub fn basis(index: usize, factors: &[usize]) -> Result<Self> {
        let dim: usize = factors.iter().product();
        if index >= dim {
            return Err(Error::IndexOutOfRange { index, rank: dim });
        }
        let mut amps = DVector::from_element(dim, ZERO);
        amps[index] = ONE;
        Self::new(amps, factors.to_vec())
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn factors(&self) -> &[usize] {
        &self.factors
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }

    pub fn check_normalized(&self, tol: f64) -> Result<()> {
        if self.is_normalized(tol) {
            Ok(())
        } else {
            Err(Error::NotNormalized { norm: self.norm() })
        }
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    /// Euclidean distance `‖self − other‖`, with no global-phase quotient.
    pub fn distance(&self, other: &StateVector) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok((&self.amplitudes - &other.amplitudes).norm())
    }

    /// Regroups the factors into a two-factor state `(left | rest)`.
    ///
    /// `left` lists factor indices in the order they should appear on the
    /// left side; the remaining factors keep their original order on the
    /// right. Amplitudes are permuted accordingly.
    pub fn bipartition(&self, left: &[usize]) -> Result<StateVector> {
        let n = self.factors.len();
        let mut seen = vec![false; n];
        for &f in left {
            if f >= n || seen[f] {
                return Err(Error::InvalidFactorSet(format!(
                    "left group {left:?} is not a set of distinct factors below {n}"
                )));
            }
            seen[f] = true;
        }
        if left.is_empty() || left.len() == n {
            return Err(Error::InvalidFactorSet(
                "bipartition needs a nonempty proper subset of factors".into(),
            ));
        }
        let right: Vec<usize> = (0..n).filter(|f| !seen[*f]).collect();
        let order: Vec<usize> = left.iter().chain(right.iter()).copied().collect();
        let permuted = self.permute_factors(&order);
        let d_left: usize = left.iter().map(|&f| self.factors[f]).product();
        let d_right: usize = right.iter().map(|&f| self.factors[f]).product();
        Ok(StateVector {
            amplitudes: permuted,
            factors: vec![d_left, d_right],
        })
    }

    /// Amplitudes reordered so that factor `order[0]` comes first, etc.
    fn permute_factors(&self, order: &[usize]) -> DVector<C64> {
        let strides = strides(&self.factors);
        let new_dims: Vec<usize> = order.iter().map(|&f| self.factors[f]).collect();
        let dim = self.dim();
        let mut out = DVector::from_element(dim, ZERO);
        let mut idx = vec![0usize; order.len()];
        for (flat_new, slot) in out.iter_mut().enumerate() {
            // decompose flat_new over new_dims
            let mut rem = flat_new;
            for pos in (0..order.len()).rev() {
                idx[pos] = rem % new_dims[pos];
                rem /= new_dims[pos];
            }
            let src: usize = order
                .iter()
                .zip(&idx)
                .map(|(&f, &i)| i * strides[f])
                .sum();
            *slot = self.amplitudes[src];
        }
        out
    }

    /// Reinterprets a bipartite state as its `d_left × d_right` coefficient matrix.
    pub fn coefficient_matrix(&self) -> Result<DMatrix<C64>> {
        let [dl, dr] = self.bipartite_dims()?;
        Ok(DMatrix::from_fn(dl, dr, |i, j| self.amplitudes[i * dr + j]))
    }

    pub fn bipartite_dims(&self) -> Result<[usize; 2]> {
        match self.factors.as_slice() {
            &[a, b] => Ok([a, b]),
            other => Err(Error::NotBipartite {
                factors: other.len(),
            }),
        }
    }
}

/// Row-major strides for the last-factor-fastest convention.
pub fn strides(factors: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; factors.len()];
    for f in (0..factors.len().saturating_sub(1)).rev() {
        s[f] = s[f + 1] * factors[f + 1];
    }
    s
}

/// A square complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    matrix: DMatrix<C64>,
}

impl Operator {
    pub fn new(matrix: DMatrix<C64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::NotSquare {
                rows: matrix.nrows(),
                cols: matrix.ncols(),
            });
        }
        Ok(Self { matrix })
    }

    /// Builds an operator and requires it to be unitary within `tol`.
    pub fn unitary(matrix: DMatrix<C64>, tol: f64) -> Result<Self> {
        let op = Self::new(matrix)?;
        op.check_unitary(tol)?;
        Ok(op)
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim, dim),
        }
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn adjoint(&self) -> Operator {
        Operator {
            matrix: self.matrix.adjoint(),
        }
    }

    /// `self · other`.
    pub fn compose(&self, other: &Operator) -> Result<Operator> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(Operator {
            matrix: &self.matrix * &other.matrix,
        })
    }

    /// `‖U†U − I‖_F`.
    pub fn unitarity_defect(&self) -> f64 {
        let d = self.dim();
        (self.matrix.adjoint() * &self.matrix - DMatrix::<C64>::identity(d, d)).norm()
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_defect() <= tol
    }

    pub fn check_unitary(&self, tol: f64) -> Result<()> {
        let defect = self.unitarity_defect();
        if defect <= tol {
            Ok(())
        } else {
            Err(Error::NotUnitary { defect })
        }
    }

    /// `‖H − H†‖_F`.
    pub fn hermiticity_defect(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint()).norm()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }
}

/// A reduced (or full) density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: DMatrix<C64>,
}

impl DensityMatrix {
    /// Wraps a matrix after checking Hermiticity, unit trace and positivity
    /// against the default tolerances.
    pub fn new(matrix: DMatrix<C64>) -> Result<Self> {
        let rho = Self { matrix };
        rho.validate(HERMITIAN_TOLERANCE, NORM_TOLERANCE, PSD_TOLERANCE)?;
        Ok(rho)
    }

    /// `|ψ⟩⟨ψ|`.
    pub fn pure(state: &StateVector) -> Self {
        let a = state.amplitudes();
        Self {
            matrix: a * a.adjoint(),
        }
    }

    pub fn validate(&self, herm_tol: f64, trace_tol: f64, psd_tol: f64) -> Result<()> {
        if !self.matrix.is_square() {
            return Err(Error::NotSquare {
                rows: self.matrix.nrows(),
                cols: self.matrix.ncols(),
            });
        }
        let deviation = (&self.matrix - self.matrix.adjoint()).norm();
        if deviation > herm_tol {
            return Err(Error::NotHermitian { deviation });
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > trace_tol {
            return Err(Error::InvariantViolation(format!(
                "density matrix trace {tr} differs from 1"
            )));
        }
        let min = self.eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        if min < -psd_tol {
            return Err(Error::InvariantViolation(format!(
                "density matrix has eigenvalue {min:e} below zero"
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = hermitian_part(&self.matrix)
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Operator-norm distance `‖ρ − σ‖_∞` (largest absolute eigenvalue of the difference).
    pub fn operator_distance(&self, other: &DensityMatrix) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(spectral_norm_hermitian(&(&self.matrix - &other.matrix)))
    }
}

pub(crate) fn hermitian_part(m: &DMatrix<C64>) -> DMatrix<C64> {
    (m + m.adjoint()).scale(0.5)
}

pub(crate) fn spectral_norm_hermitian(m: &DMatrix<C64>) -> f64 {
    hermitian_part(m)
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |acc, &x| acc.max(x.abs()))
}

/// `a ⊗ b`; factors are concatenated.
pub fn tensor_product(a: &StateVector, b: &StateVector) -> Result<StateVector> {
    a.check_normalized(NORM_TOLERANCE)?;
    b.check_normalized(NORM_TOLERANCE)?;
    let amps = a.amplitudes().kronecker(b.amplitudes());
    let factors = a.factors().iter().chain(b.factors()).copied().collect();
    StateVector::new(amps, factors)
}

/// Lifts `u` to the whole space, acting on factor `target` and as the
/// identity on every other factor.
pub fn embed_on_factor(u: &Operator, target: usize, factors: &[usize]) -> Result<Operator> {
    let d_t = *factors.get(target).ok_or_else(|| {
        Error::InvalidFactorSet(format!(
            "target factor {target} out of range for {} factors",
            factors.len()
        ))
    })?;
    if u.dim() != d_t {
        return Err(Error::DimensionMismatch {
            expected: d_t,
            found: u.dim(),
        });
    }
    let outer: usize = factors[..target].iter().product();
    let inner: usize = factors[target + 1..].iter().product();
    let dim = outer * d_t * inner;
    let mut m = DMatrix::from_element(dim, dim, ZERO);
    for o in 0..outer {
        for r in 0..d_t {
            for c in 0..d_t {
                let z = u.matrix()[(r, c)];
                if z == ZERO {
                    continue;
                }
                for i in 0..inner {
                    let row = (o * d_t + r) * inner + i;
                    let col = (o * d_t + c) * inner + i;
                    m[(row, col)] = z;
                }
            }
        }
    }
    Operator::new(m)
}

/// Matrix-vector product. The result is not renormalized.
pub fn apply(op: &Operator, state: &StateVector) -> Result<StateVector> {
    if op.dim() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            found: op.dim(),
        });
    }
    StateVector::unnormalized(op.matrix() * state.amplitudes(), state.factors().to_vec())
}

/// Reduced density matrix on the factors in `keep`, tracing out the rest.
///
/// The kept factors are ordered as in the source state.
pub fn partial_trace(state: &StateVector, keep: &[usize]) -> Result<DensityMatrix> {
    let mut keep = keep.to_vec();
    keep.sort_unstable();
    keep.dedup();
    if keep.is_empty() || keep.len() >= state.factors().len() {
        return Err(Error::InvalidFactorSet(format!(
            "keep set {keep:?} must be a nonempty proper subset of {} factors",
            state.factors().len()
        )));
    }
    let split = state.bipartition(&keep)?;
    let c = split.coefficient_matrix()?;
    let rho = &c * c.adjoint();
    let rho = DensityMatrix { matrix: rho };
    rho.validate(HERMITIAN_TOLERANCE, NORM_TOLERANCE, PSD_TOLERANCE)?;
    Ok(rho)
}

/// `U = exp(−iHt/ħ)` from the spectral decomposition of `H`.
pub fn propagate(h: &Operator, t: f64, hbar: f64) -> Result<Operator> {
    propagate_with_tolerance(h, t, hbar, HERMITIAN_TOLERANCE)
}

pub fn propagate_with_tolerance(h: &Operator, t: f64, hbar: f64, herm_tol: f64) -> Result<Operator> {
    let deviation = h.hermiticity_defect();
    if deviation > herm_tol {
        return Err(Error::NotHermitian { deviation });
    }
    if !(hbar > 0.0 && hbar.is_finite()) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "propagation needs finite t and positive ħ, got t = {t}, ħ = {hbar}"
        )));
    }
    let eig = SymmetricEigen::new(hermitian_part(h.matrix()));
    let v = &eig.eigenvectors;
    let phases = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues
            .iter()
            .map(|&lambda| C64::from_polar(1.0, -lambda * t / hbar)),
    );
    let u = v * DMatrix::from_diagonal(&phases) * v.adjoint();
    Operator::unitary(u, UNITARY_TOLERANCE)
}

/// On-disk representation of a state:
/// `{"factors":[d1,...,dn], "amplitudes":[[re,im],...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFile {
    pub factors: Vec<usize>,
    pub amplitudes: Vec<Pair>,
}

/// What happened while ingesting a state file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ingest {
    pub norm_before: f64,
    pub renormalized: bool,
}

impl StateFile {
    pub fn from_state(state: &StateVector) -> Self {
        Self {
            factors: state.factors().to_vec(),
            amplitudes: encoding::vector_pairs(state.amplitudes()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("state file serialization is infallible")
    }

    /// Validates the file and returns a normalized state. Norm deviations up
    /// to [`INGEST_NORM_TOLERANCE`] are repaired and reported.
    pub fn into_state(self) -> Result<(StateVector, Ingest)> {
        let amps = DVector::from_iterator(
            self.amplitudes.len(),
            self.amplitudes.iter().copied().map(encoding::complex),
        );
        if amps.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Parse("amplitudes must be finite".into()));
        }
        let raw = StateVector::unnormalized(amps, self.factors)?;
        let norm_before = raw.norm();
        if (norm_before - 1.0).abs() > INGEST_NORM_TOLERANCE {
            return Err(Error::NotNormalized { norm: norm_before });
        }
        let renormalized = norm_before != 1.0;
        let state = StateVector::normalize(raw.amplitudes, raw.factors)?;
        Ok((
            state,
            Ingest {
                norm_before,
                renormalized,
            },
        ))
    }
}

pub fn parse_state_json(text: &str) -> Result<(StateVector, Ingest)> {
    let file: StateFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    file.into_state()
}
