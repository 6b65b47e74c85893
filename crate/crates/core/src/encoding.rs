//! JSON encodings for complex vectors and matrices.
//!
//! Complex numbers are written as `[re, im]` pairs, vectors as arrays of
//! pairs and matrices as arrays of rows.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub type Pair = [f64; 2];

pub fn pair(z: Complex64) -> Pair {
    [z.re, z.im]
}

pub fn complex(p: Pair) -> Complex64 {
    Complex64::new(p[0], p[1])
}

pub fn vector_pairs(v: &DVector<Complex64>) -> Vec<Pair> {
    v.iter().copied().map(pair).collect()
}

pub fn matrix_rows(m: &DMatrix<Complex64>) -> Vec<Vec<Pair>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| pair(m[(r, c)])).collect())
        .collect()
}

/// Builds a square or rectangular matrix from rows of pairs, rejecting ragged input.
pub fn matrix_from_rows(rows: &[Vec<Pair>]) -> Result<DMatrix<Complex64>, String> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("ragged matrix rows".into());
    }
    Ok(DMatrix::from_fn(nrows, ncols, |r, c| complex(rows[r][c])))
}

pub mod complex_vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &DVector<Complex64>, s: S) -> Result<S::Ok, S::Error> {
        vector_pairs(v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<Complex64>, D::Error> {
        let pairs = Vec::<Pair>::deserialize(d)?;
        Ok(DVector::from_iterator(
            pairs.len(),
            pairs.into_iter().map(complex),
        ))
    }
}

pub mod complex_vecs {
    use super::*;

    pub fn serialize<S: Serializer>(vs: &[DVector<Complex64>], s: S) -> Result<S::Ok, S::Error> {
        vs.iter().map(vector_pairs).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<Vec<DVector<Complex64>>, D::Error> {
        let rows = Vec::<Vec<Pair>>::deserialize(d)?;
        Ok(rows
            .into_iter()
            .map(|r| DVector::from_iterator(r.len(), r.into_iter().map(complex)))
            .collect())
    }
}

pub mod complex_matrix {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<Complex64>, s: S) -> Result<S::Ok, S::Error> {
        matrix_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<Complex64>, D::Error> {
        let rows = Vec::<Vec<Pair>>::deserialize(d)?;
        matrix_from_rows(&rows).map_err(serde::de::Error::custom)
    }
}
