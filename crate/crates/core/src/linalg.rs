//! Complex singular value decomposition by one-sided Jacobi rotations.
//!
//! nalgebra's complex SVD can return factors that fail to reproduce the input
//! when singular values repeat (reconstruction errors around 1e-2 were seen
//! on 3×3 inputs with a doubled singular value). Repeated and zero singular
//! values are the normal case here, so every decomposition in the crate goes
//! through [`svd`] instead.

use nalgebra::{DMatrix, DVector};

use crate::tensor_core::{C64, ZERO};

const MAX_SWEEPS: usize = 80;
const ORTHOGONALITY_THRESHOLD: f64 = 1e-15;
/// Singular values below this fraction of the largest get completed
/// left vectors instead of `A v / σ`.
const NEGLIGIBLE: f64 = 1e-14;

/// Thin SVD `A = U Σ V†` with `k = min(rows, cols)` columns in `U` and `V`,
/// singular values descending. Both `U` and `V` have orthonormal columns.
#[derive(Debug, Clone)]
pub(crate) struct Svd {
    pub u: DMatrix<C64>,
    pub sigma: Vec<f64>,
    pub v: DMatrix<C64>,
}

pub(crate) fn svd(a: &DMatrix<C64>) -> Svd {
    if a.nrows() < a.ncols() {
        let t = svd(&a.adjoint());
        return Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        };
    }
    let (w, v) = jacobi(a.clone());
    let n = w.ncols();
    let norms: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let largest = norms.get(order.first().copied().unwrap_or(0)).copied().unwrap_or(0.0);

    let mut u_cols: Vec<DVector<C64>> = Vec::with_capacity(n);
    for &j in &order {
        let candidate = if norms[j] > NEGLIGIBLE * largest && norms[j] > 0.0 {
            Some(w.column(j) / C64::new(norms[j], 0.0))
        } else {
            None
        };
        u_cols.push(orthonormal_next(&u_cols, candidate, a.nrows()));
    }
    Svd {
        u: DMatrix::from_columns(&u_cols),
        sigma: order.iter().map(|&j| norms[j]).collect(),
        v: DMatrix::from_columns(&order.iter().map(|&j| v.column(j).into_owned()).collect::<Vec<_>>()),
    }
}

/// Orthogonalizes `candidate` against `basis`, falling back to the
/// canonical vector with the largest residual.
fn orthonormal_next(basis: &[DVector<C64>], candidate: Option<DVector<C64>>, dim: usize) -> DVector<C64> {
    let project_out = |mut x: DVector<C64>| {
        for b in basis {
            let overlap = b.dotc(&x);
            x -= b * overlap;
        }
        x
    };
    if let Some(c) = candidate {
        let x = project_out(c);
        let norm = x.norm();
        if norm > 0.5 {
            return x.unscale(norm);
        }
    }
    let mut best = DVector::from_element(dim, ZERO);
    let mut best_norm = -1.0;
    for i in 0..dim {
        let mut e = DVector::from_element(dim, ZERO);
        e[i] = C64::new(1.0, 0.0);
        let x = project_out(e);
        let norm = x.norm();
        if norm > best_norm + 1e-12 {
            best_norm = norm;
            best = x;
        }
    }
    best.unscale(best_norm)
}

/// Rotates column pairs of `w` until they are mutually orthogonal; returns
/// `(A V, V)`.
fn jacobi(mut w: DMatrix<C64>) -> (DMatrix<C64>, DMatrix<C64>) {
    let n = w.ncols();
    let mut v = DMatrix::<C64>::identity(n, n);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dotc(&w.column(q));
                let g = gamma.norm();
                if g == 0.0 || g <= ORTHOGONALITY_THRESHOLD * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let phase = (gamma / g).conj();
                let zeta = (alpha - beta) / (2.0 * g);
                let sign = if zeta >= 0.0 { 1.0 } else { -1.0 };
                let t = -sign / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s, phase);
                rotate(&mut v, p, q, c, s, phase);
            }
        }
        if !rotated {
            break;
        }
    }
    (w, v)
}

fn rotate(m: &mut DMatrix<C64>, p: usize, q: usize, c: f64, s: f64, phase: C64) {
    for r in 0..m.nrows() {
        let xp = m[(r, p)];
        let xq = m[(r, q)] * phase;
        m[(r, p)] = xp * c - xq * s;
        m[(r, q)] = xp * s + xq * c;
    }
}
