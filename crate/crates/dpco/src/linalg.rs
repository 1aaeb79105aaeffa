//! Small dense-algebra helpers and row-major serde adapters.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    a.clone().svd(false, false).singular_values.max()
}

/// Smallest eigenvalue of the symmetric part.
pub fn min_symmetric_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    let sym = (a + a.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Concatenates per-agent blocks into one vector.
pub fn stack(parts: &[DVector<f64>]) -> DVector<f64> {
    let n: usize = parts.iter().map(|p| p.len()).sum();
    DVector::from_iterator(n, parts.iter().flat_map(|p| p.iter().copied()))
}

/// Splits a stacked vector into blocks of the given sizes.
pub fn unstack(v: &DVector<f64>, sizes: &[usize]) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut at = 0;
    for &s in sizes {
        out.push(v.rows(at, s).into_owned());
        at += s;
    }
    out
}

pub fn mean(vs: &[DVector<f64>]) -> DVector<f64> {
    let mut acc = DVector::zeros(vs[0].len());
    for v in vs {
        acc += v;
    }
    acc / vs.len() as f64
}

/// `max_i ‖v_i − mean‖`.
pub fn max_deviation(vs: &[DVector<f64>]) -> f64 {
    let c = mean(vs);
    vs.iter().map(|v| (v - &c).norm()).fold(0.0, f64::max)
}

pub(crate) mod matrix_rows {
    //! `DMatrix` as `{ rows, cols, data }` with `data` in row-major order.
    use nalgebra::DMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Doc {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let data = (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)])).collect();
        Doc { rows: m.nrows(), cols: m.ncols(), data }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let doc = Doc::deserialize(d)?;
        if doc.data.len() != doc.rows * doc.cols {
            return Err(D::Error::custom(format!(
                "matrix declares {}x{} but carries {} entries",
                doc.rows,
                doc.cols,
                doc.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(doc.rows, doc.cols, &doc.data))
    }
}

pub(crate) mod vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

pub(crate) mod vectors {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(vs: &[DVector<f64>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DVector<f64>>, D::Error> {
        Ok(Vec::<Vec<f64>>::deserialize(d)?.into_iter().map(DVector::from_vec).collect())
    }
}

pub(crate) mod opt_vectors {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(vs: &Option<Vec<DVector<f64>>>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Option<Vec<&[f64]>> = vs.as_ref().map(|vs| vs.iter().map(|v| v.as_slice()).collect());
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<DVector<f64>>>, D::Error> {
        Ok(Option::<Vec<Vec<f64>>>::deserialize(d)?.map(|rows| rows.into_iter().map(DVector::from_vec).collect()))
    }
}
