//! Counterweight fine-graining: from unequal Schmidt weights to equal branches.
//!
//! The pipeline in [`envariant_probabilities`] runs:
//!
//! 1. [`schmidt_decompose`] the input state;
//! 2. [`commensurate_weights`]: integers `m_k` with `m_k / M ≈ |a_k|²`;
//! 3. [`attach_counterweight`]: the tripartite state
//!    `Σ_k √(m_k/M) |A_k⟩ ⊗ |s_k⟩ ⊗ |ε_k⟩` with `|A_k⟩` spread uniformly over
//!    a block of `m_k` basis states of a fresh ancilla `A` of dimension `M`;
//! 4. [`fine_grain`]: the controlled coupling `|a_j⟩ ⊗ |ε_k⟩ → |a_j⟩ ⊗ |e_j⟩`
//!    into an environment `E′` of dimension at least `M`, leaving `M`
//!    branches of modulus `1/√M`;
//! 5. re-check that fine-grained branches are pairwise swappable with
//!    [`check_envariance`], then count branches per coarse index to get
//!    `p_k = m_k / M`.
//!
//! The phases of the `a_k` are not carried into step 3.
//!
//! A fine-grained state has dimension `M · d_S · M`, which is far too large
//! to hold densely for `M` in the thousands. [`FineGrainedState`] therefore
//! stores, for each ancilla basis state `|a_j⟩`, the `S` vector it is paired
//! with; the environment partner is always `|e_j⟩`. The dense vector is
//! available through [`FineGrainedState::to_state_vector`].

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::envariance::{check_envariance, DEFAULT_DECISION_TOLERANCE};
use crate::error::{Error, Result};
use crate::schmidt::{schmidt_decompose, SchmidtDecomposition, DEFAULT_RANK_TOLERANCE};
use crate::tensor_core::{Operator, StateVector, C64, NORM_TOLERANCE, ONE, ZERO};

/// Tolerance for the equal-modulus invariant of fine-grained branches.
pub const BRANCH_TOLERANCE: f64 = 1e-10;

/// Up to this many fine-grained branches every pair is checked on the dense
/// state; above it the adjacent transpositions are checked on two-branch
/// restrictions.
pub const DENSE_SWAP_AUDIT_BRANCHES: usize = 8;

/// Improvements in the rationalization error smaller than this are ignored,
/// so the smallest denominator wins among equally good ones.
const ERROR_RESOLUTION: f64 = 1e-15;

/// Natural-number branch weights `m_k` and their total `M`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BranchWeights {
    m: Vec<u64>,
    total: u64,
}

impl BranchWeights {
    pub fn new(m: Vec<u64>) -> Result<Self> {
        if m.is_empty() || m.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "branch weights must be a nonempty list of positive integers, got {m:?}"
            )));
        }
        let total = m.iter().sum();
        Ok(Self { m, total })
    }

    pub fn weights(&self) -> &[u64] {
        &self.m
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// `m_k / M`.
    pub fn probabilities(&self) -> Vec<f64> {
        self.m.iter().map(|&m| m as f64 / self.total as f64).collect()
    }

    /// Coarse index of every fine-grained branch, blocks in order.
    pub fn branch_index(&self) -> Vec<usize> {
        self.m
            .iter()
            .enumerate()
            .flat_map(|(k, &m)| std::iter::repeat(k).take(m as usize))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rationalization {
    pub weights: BranchWeights,
    /// `max_k |m_k/M − |a_k|²|`.
    pub error: f64,
}

/// Largest-remainder apportionment of `total` seats to `p`, with every
/// entry forced to at least one. Ties go to the lower index.
fn apportion(p: &[f64], total: u64) -> Vec<u64> {
    let quotas: Vec<f64> = p.iter().map(|&x| x * total as f64).collect();
    let mut m: Vec<u64> = quotas.iter().map(|q| q.floor().max(0.0) as u64).collect();
    let mut assigned: u64 = m.iter().sum();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - m[a] as f64;
        let rb = quotas[b] - m[b] as f64;
        rb.total_cmp(&ra)
    });
    for &k in order.iter().cycle() {
        if assigned >= total {
            break;
        }
        m[k] += 1;
        assigned += 1;
    }
    // rounding can overshoot by an ulp; take back from the smallest remainders
    for &k in order.iter().rev().cycle() {
        if assigned <= total {
            break;
        }
        if m[k] > 0 {
            m[k] -= 1;
            assigned -= 1;
        }
    }
    for k in 0..m.len() {
        if m[k] == 0 {
            let donor = (0..m.len())
                .filter(|&j| m[j] >= 2)
                .max_by(|&a, &b| {
                    let sa = m[a] as f64 - quotas[a];
                    let sb = m[b] as f64 - quotas[b];
                    // prefer the lower index on ties
                    sa.total_cmp(&sb).then(b.cmp(&a))
                })
                .expect("total ≥ number of branches leaves a donor");
            m[donor] -= 1;
            m[k] = 1;
        }
    }
    m
}

fn max_error(m: &[u64], total: u64, p: &[f64]) -> f64 {
    m.iter()
        .zip(p)
        .map(|(&mk, &pk)| (mk as f64 / total as f64 - pk).abs())
        .fold(0.0, f64::max)
}

/// Chooses `M ≤ max_denominator` and integers `m_k ≥ 1` summing to `M` that
/// minimize `max_k |m_k/M − moduli_k²|`.
///
/// Every denominator from `N` to `max_denominator` is apportioned by largest
/// remainders, which is optimal in the max norm for a fixed `M`; the
/// smallest `M` attaining the minimum is kept. Raising `max_denominator`
/// therefore never increases the returned error, and the error is below
/// `N / max_denominator`.
pub fn commensurate_weights(moduli: &[f64], max_denominator: u64) -> Result<Rationalization> {
    let n = moduli.len();
    if (max_denominator as usize) < n || n == 0 {
        return Err(Error::DenominatorTooSmall {
            max_denominator,
            branches: n,
        });
    }
    let norm2: f64 = moduli.iter().map(|m| m * m).sum();
    if (norm2 - 1.0).abs() > NORM_TOLERANCE {
        return Err(Error::NotNormalized { norm: norm2.sqrt() });
    }
    let p: Vec<f64> = moduli.iter().map(|m| m * m / norm2).collect();

    let mut best: Option<(Vec<u64>, u64, f64)> = None;
    for total in n as u64..=max_denominator {
        let m = apportion(&p, total);
        let err = max_error(&m, total, &p);
        let better = best.as_ref().map_or(true, |(_, _, b)| err < b - ERROR_RESOLUTION);
        if better {
            best = Some((m, total, err));
        }
        if best.as_ref().is_some_and(|(_, _, b)| *b <= ERROR_RESOLUTION) {
            break;
        }
    }
    let (m, _, error) = best.expect("scan range is nonempty");
    Ok(Rationalization {
        weights: BranchWeights::new(m)?,
        error,
    })
}

/// The tripartite state `A ⊗ S ⊗ E` after attaching the counterweight.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterweightState {
    pub state: StateVector,
    pub weights: BranchWeights,
    /// The environment vectors `|ε_k⟩` the coupling is keyed on.
    pub env_basis: Vec<DVector<C64>>,
}

/// Attaches an ancilla of dimension `M` whose blocks of `m_k` basis states
/// carry the coarse branch `k`.
pub fn attach_counterweight(dec: &SchmidtDecomposition, w: &BranchWeights) -> Result<CounterweightState> {
    if w.len() != dec.rank() {
        return Err(Error::LengthMismatch {
            expected: dec.rank(),
            found: w.len(),
        });
    }
    let big_m = w.total() as usize;
    let [d_s, d_e] = dec.dims();
    let mut amps = DVector::from_element(big_m * d_s * d_e, ZERO);
    let mut offset = 0usize;
    for (k, &mk) in w.weights().iter().enumerate() {
        let mk = mk as usize;
        // |A_k⟩ = Σ_{j in block k} |a_j⟩ / √m_k
        let mut a_k = DVector::from_element(big_m, ZERO);
        for j in offset..offset + mk {
            a_k[j] = C64::new(1.0 / (mk as f64).sqrt(), 0.0);
        }
        let coeff = (mk as f64 / big_m as f64).sqrt();
        amps += a_k.kronecker(&dec.left_basis[k]).kronecker(&dec.right_basis[k]) * C64::new(coeff, 0.0);
        offset += mk;
    }
    let state = StateVector::new(amps, vec![big_m, d_s, d_e])?;
    Ok(CounterweightState {
        state,
        weights: w.clone(),
        env_basis: dec.right_basis.clone(),
    })
}

/// The coupling `|a_j⟩ ⊗ |ε_{k(j)}⟩ → |a_j⟩ ⊗ |e_j⟩` on `A ⊗ E`.
///
/// It is block diagonal in the ancilla basis: on `|a_j⟩ ⊗ E` it acts as
/// `|e_j⟩⟨ε_{k(j)}|`. Only the domain `{|a_j⟩ ⊗ |ε_{k(j)}⟩}` matters.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterweightCoupling {
    branch_index: Vec<usize>,
    env_basis: Vec<DVector<C64>>,
    env_dim: usize,
}

impl CounterweightCoupling {
    pub fn new(w: &BranchWeights, env_basis: &[DVector<C64>], env_dim: usize) -> Result<Self> {
        let needed = w.total() as usize;
        if env_dim < needed {
            return Err(Error::InsufficientEnvironment {
                needed,
                available: env_dim,
            });
        }
        if env_basis.len() != w.len() {
            return Err(Error::NonMatchingWeights(format!(
                "{} environment vectors for {} weights",
                env_basis.len(),
                w.len()
            )));
        }
        Ok(Self {
            branch_index: w.branch_index(),
            env_basis: env_basis.to_vec(),
            env_dim,
        })
    }

    fn d_e(&self) -> usize {
        self.env_basis.first().map_or(0, |v| v.len())
    }

    /// Image of `|a_j⟩ ⊗ |x⟩ ⊗ |v⟩`, returned as the coefficient of
    /// `|a_j⟩ ⊗ |x⟩ ⊗ |e_j⟩` for each middle index `x`. `slice` is the
    /// `middle × d_E` block of the input at ancilla index `j`.
    fn couple_slice(&self, j: usize, slice: &DMatrix<C64>) -> DVector<C64> {
        let eps = &self.env_basis[self.branch_index[j]];
        slice * eps.map(|z| z.conj())
    }

    /// Dense matrix from `A ⊗ E` to `A ⊗ E′`, zero off the domain.
    pub fn matrix(&self) -> DMatrix<C64> {
        let big_m = self.branch_index.len();
        let d_e = self.d_e();
        let mut v = DMatrix::from_element(big_m * self.env_dim, big_m * d_e, ZERO);
        for j in 0..big_m {
            let eps = &self.env_basis[self.branch_index[j]];
            for e in 0..d_e {
                v[(j * self.env_dim + j, j * d_e + e)] = eps[e].conj();
            }
        }
        v
    }

    /// Domain vectors `|a_j⟩ ⊗ |ε_{k(j)}⟩` as dense vectors over `A ⊗ E`.
    pub fn domain_vectors(&self) -> Vec<DVector<C64>> {
        let big_m = self.branch_index.len();
        (0..big_m)
            .map(|j| {
                let mut a = DVector::from_element(big_m, ZERO);
                a[j] = ONE;
                a.kronecker(&self.env_basis[self.branch_index[j]])
            })
            .collect()
    }

    /// `max_j |‖V(|a_j⟩ ⊗ |ε_{k(j)}⟩)‖² − 1|`. Images of distinct `j` differ
    /// in the ancilla index, so they are orthogonal and the diagonal is the
    /// whole Gram defect.
    pub fn isometry_defect(&self) -> f64 {
        (0..self.branch_index.len())
            .map(|j| {
                let eps = &self.env_basis[self.branch_index[j]];
                let slice = DMatrix::from_row_slice(1, eps.len(), eps.as_slice());
                (self.couple_slice(j, &slice).norm_squared() - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// State on `A ⊗ S ⊗ E′` after the coupling, stored per ancilla index.
#[derive(Debug, Clone, PartialEq)]
pub struct FineGrainedState {
    d_s: usize,
    env_dim: usize,
    branch_index: Vec<usize>,
    /// `S` vector paired with `|a_j⟩ ⊗ |e_j⟩`.
    branches: Vec<DVector<C64>>,
}

impl FineGrainedState {
    /// `(M, d_S, dim E′)`.
    pub fn factors(&self) -> [usize; 3] {
        [self.branches.len(), self.d_s, self.env_dim]
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    pub fn branch_index(&self) -> &[usize] {
        &self.branch_index
    }

    pub fn branch_moduli(&self) -> Vec<f64> {
        self.branches.iter().map(|b| b.norm()).collect()
    }

    /// Dense amplitudes over `A ⊗ S ⊗ E′`.
    pub fn to_state_vector(&self) -> Result<StateVector> {
        let [m, d_s, d_env] = self.factors();
        let mut amps = DVector::from_element(m * d_s * d_env, ZERO);
        for (j, b) in self.branches.iter().enumerate() {
            for s in 0..d_s {
                amps[(j * d_s + s) * d_env + j] = b[s];
            }
        }
        StateVector::new(amps, vec![m, d_s, d_env])
    }

    /// Dense bipartite view `A | (S ⊗ E′)`.
    pub fn ancilla_split(&self) -> Result<StateVector> {
        self.to_state_vector()?.bipartition(&[0])
    }

    /// The state restricted to ancilla states `j1, j2` and the environment
    /// states `e_{j1}, e_{j2}`, as a bipartite `2 | (S ⊗ 2)` state.
    ///
    /// Every other branch is orthogonal to these in both the ancilla and the
    /// environment, and a swap of `|a_{j1}⟩, |a_{j2}⟩` acts trivially on
    /// them, so envariance of that swap on the full state is equivalent to
    /// envariance of the plain swap on this restriction.
    pub fn pair_restriction(&self, j1: usize, j2: usize) -> Result<StateVector> {
        let d_s = self.d_s;
        let mut amps = DVector::from_element(2 * d_s * 2, ZERO);
        for (row, &j) in [j1, j2].iter().enumerate() {
            let b = self.branches.get(j).ok_or(Error::IndexOutOfRange {
                index: j,
                rank: self.branches.len(),
            })?;
            for s in 0..d_s {
                amps[row * (2 * d_s) + s * 2 + row] = b[s];
            }
        }
        StateVector::normalize(amps, vec![2, 2 * d_s])
    }

    fn validate(&self) -> Result<()> {
        let m = self.branches.len();
        let target = 1.0 / (m as f64).sqrt();
        for (j, modulus) in self.branch_moduli().into_iter().enumerate() {
            if (modulus - target).abs() > BRANCH_TOLERANCE {
                return Err(Error::InvariantViolation(format!(
                    "fine-grained branch {j} has modulus {modulus}, expected {target}"
                )));
            }
        }
        Ok(())
    }
}

/// Couples the counterweight to an environment `E′` of dimension `M`.
pub fn fine_grain(state3: &CounterweightState, w: &BranchWeights) -> Result<FineGrainedState> {
    fine_grain_into(state3, w, w.total() as usize)
}

/// As [`fine_grain`], with `|e_j⟩` the first `M` basis states of an
/// environment of dimension `env_dim ≥ M`.
pub fn fine_grain_into(state3: &CounterweightState, w: &BranchWeights, env_dim: usize) -> Result<FineGrainedState> {
    if &state3.weights != w {
        return Err(Error::NonMatchingWeights(format!(
            "state was built with {:?}, got {:?}",
            state3.weights.weights(),
            w.weights()
        )));
    }
    let coupling = CounterweightCoupling::new(w, &state3.env_basis, env_dim)?;
    let defect = coupling.isometry_defect();
    if defect > BRANCH_TOLERANCE {
        return Err(Error::InvariantViolation(format!(
            "counterweight coupling is not isometric on its domain (defect {defect:e})"
        )));
    }
    let big_m = w.total() as usize;
    let factors = state3.state.factors();
    let [d_a, d_s, d_e] = match *factors {
        [a, s, e] => [a, s, e],
        _ => {
            return Err(Error::InvalidFactorSet(format!(
                "expected an A ⊗ S ⊗ E state, got factors {factors:?}"
            )))
        }
    };
    if d_a != big_m || d_e != coupling.d_e() {
        return Err(Error::NonMatchingWeights(format!(
            "factors {factors:?} do not fit M = {big_m} and dim E = {}",
            coupling.d_e()
        )));
    }
    let amps = state3.state.amplitudes();
    let branches: Vec<DVector<C64>> = (0..big_m)
        .map(|j| {
            let block = &amps.as_slice()[j * d_s * d_e..(j + 1) * d_s * d_e];
            coupling.couple_slice(j, &DMatrix::from_row_slice(d_s, d_e, block))
        })
        .collect();
    let kept: f64 = branches.iter().map(|b| b.norm_squared()).sum();
    if (kept - 1.0).abs() > BRANCH_TOLERANCE {
        return Err(Error::NonMatchingWeights(format!(
            "only {kept} of the norm lies in the coupling domain"
        )));
    }
    let out = FineGrainedState {
        d_s,
        env_dim,
        branch_index: coupling.branch_index.clone(),
        branches,
    };
    out.validate()?;
    Ok(out)
}

/// Transposition of two ancilla basis states.
fn ancilla_swap(dim: usize, j1: usize, j2: usize) -> Operator {
    let mut m = DMatrix::<C64>::identity(dim, dim);
    m[(j1, j1)] = ZERO;
    m[(j2, j2)] = ZERO;
    m[(j1, j2)] = ONE;
    m[(j2, j1)] = ONE;
    Operator::new(m).expect("square by construction")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapAuditMode {
    /// Every pair checked on the dense `A | (S ⊗ E′)` state.
    AllPairs,
    /// Adjacent transpositions `(j, j+1)` checked on two-branch
    /// restrictions. They generate every permutation, and envariance is
    /// closed under composition (the witnesses compose), so this covers
    /// all pairs.
    AdjacentTranspositions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwapAudit {
    pub mode: SwapAuditMode,
    pub swaps_checked: usize,
    pub max_undo_residual: f64,
    pub max_marginal_distance: f64,
}

/// Re-checks with [`check_envariance`] that the fine-grained branches are
/// swappable. Any negative verdict is an error.
pub fn audit_swaps(fg: &FineGrainedState, tol: f64) -> Result<SwapAudit> {
    let m = fg.branch_count();
    let mut pairs = Vec::new();
    let mode = if m <= DENSE_SWAP_AUDIT_BRANCHES {
        for j1 in 0..m {
            for j2 in j1 + 1..m {
                pairs.push((j1, j2));
            }
        }
        SwapAuditMode::AllPairs
    } else {
        pairs.extend((1..m).map(|j| (j - 1, j)));
        SwapAuditMode::AdjacentTranspositions
    };
    let dense = match mode {
        SwapAuditMode::AllPairs => Some(fg.ancilla_split()?),
        SwapAuditMode::AdjacentTranspositions => None,
    };
    let mut audit = SwapAudit {
        mode,
        swaps_checked: 0,
        max_undo_residual: 0.0,
        max_marginal_distance: 0.0,
    };
    for (j1, j2) in pairs {
        let verdict = match &dense {
            Some(state) => check_envariance(state, &ancilla_swap(m, j1, j2), tol)?,
            None => check_envariance(&fg.pair_restriction(j1, j2)?, &ancilla_swap(2, 0, 1), tol)?,
        };
        if !verdict.envariant() {
            return Err(Error::InvariantViolation(format!(
                "fine-grained branches {j1} and {j2} are not swappable (certificate {:e})",
                verdict.residual_or_certificate()
            )));
        }
        audit.swaps_checked += 1;
        audit.max_undo_residual = audit.max_undo_residual.max(verdict.residual_or_certificate());
        audit.max_marginal_distance = audit.max_marginal_distance.max(verdict.marginal_distance());
    }
    Ok(audit)
}

/// Every intermediate product of the fine-graining pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivation {
    pub schmidt: SchmidtDecomposition,
    pub rationalization: Rationalization,
    /// Factor dimensions of the counterweight state `(M, d_S, d_E)`.
    pub counterweight_factors: [usize; 3],
    pub fine_grained: FineGrainedState,
    pub swap_audit: SwapAudit,
    /// Fine-grained branch count per coarse index.
    pub branch_counts: Vec<u64>,
    /// `p(s_k) = m_k / M`.
    pub probabilities: Vec<f64>,
    /// Rationalization error; bounds `|p_k − |a_k|²|`.
    pub error_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    pub max_denominator: u64,
    pub decision_tolerance: f64,
    pub rank_tolerance: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            max_denominator: 10_000,
            decision_tolerance: DEFAULT_DECISION_TOLERANCE,
            rank_tolerance: DEFAULT_RANK_TOLERANCE,
        }
    }
}

/// Branch-counting probabilities for a bipartite state.
pub fn envariant_probabilities(state: &StateVector, max_denominator: u64) -> Result<Derivation> {
    derive(
        state,
        &PipelineOptions {
            max_denominator,
            ..PipelineOptions::default()
        },
    )
}

pub fn derive(state: &StateVector, opts: &PipelineOptions) -> Result<Derivation> {
    state.check_normalized(NORM_TOLERANCE)?;
    let dec = schmidt_decompose(state, opts.rank_tolerance)?;
    let rationalization = commensurate_weights(&dec.moduli, opts.max_denominator)?;
    let w = &rationalization.weights;
    let state3 = attach_counterweight(&dec, w)?;
    let counterweight_factors = [w.total() as usize, dec.dims()[0], dec.dims()[1]];
    let fg = fine_grain(&state3, w)?;
    let swap_audit = audit_swaps(&fg, opts.decision_tolerance)?;

    let mut branch_counts = vec![0u64; dec.rank()];
    for &k in fg.branch_index() {
        branch_counts[k] += 1;
    }
    let total: u64 = branch_counts.iter().sum();
    let probabilities = branch_counts.iter().map(|&c| c as f64 / total as f64).collect();
    Ok(Derivation {
        error_bound: rationalization.error,
        schmidt: dec,
        rationalization,
        counterweight_factors,
        fine_grained: fg,
        swap_audit,
        branch_counts,
        probabilities,
    })
}
