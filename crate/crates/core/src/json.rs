//! Serialization helpers: complex matrices as nested `[[[re, im], ...], ...]` rows.
//!
//! `serde_json` writes the shortest decimal that round-trips each `f64`, so the
//! encoding is bit-exact.

use crate::linalg::{c, CMat};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const SCHEMA: &str = "opforge-v1";

pub fn mat_to_rows(m: &CMat) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn rows_to_mat(rows: &[Vec<[f64; 2]>]) -> Result<CMat, String> {
    let r = rows.len();
    let cc = rows.first().map(|x| x.len()).unwrap_or(0);
    if rows.iter().any(|x| x.len() != cc) {
        return Err("ragged matrix".into());
    }
    if rows.iter().flatten().any(|z| !z[0].is_finite() || !z[1].is_finite()) {
        return Err("non-finite entry".into());
    }
    Ok(CMat::from_fn(r, cc, |i, j| c(rows[i][j][0], rows[i][j][1])))
}

pub mod cmat {
    use super::*;

    pub fn serialize<S: Serializer>(m: &CMat, s: S) -> Result<S::Ok, S::Error> {
        mat_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CMat, D::Error> {
        let rows = Vec::<Vec<[f64; 2]>>::deserialize(d)?;
        rows_to_mat(&rows).map_err(serde::de::Error::custom)
    }
}

pub mod cmat_vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[CMat], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(mat_to_rows).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<CMat>, D::Error> {
        let v = Vec::<Vec<Vec<[f64; 2]>>>::deserialize(d)?;
        v.iter()
            .map(|r| rows_to_mat(r).map_err(serde::de::Error::custom))
            .collect()
    }
}

pub mod cmat_vec_vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[Vec<CMat>], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|t| t.iter().map(mat_to_rows).collect::<Vec<_>>())
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<CMat>>, D::Error> {
        let v = Vec::<Vec<Vec<Vec<[f64; 2]>>>>::deserialize(d)?;
        v.iter()
            .map(|t| {
                t.iter()
                    .map(|r| rows_to_mat(r).map_err(serde::de::Error::custom))
                    .collect()
            })
            .collect()
    }
}

pub mod opt_cmat {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Option<CMat>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(mat_to_rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<CMat>, D::Error> {
        Option::<Vec<Vec<[f64; 2]>>>::deserialize(d)?
            .map(|rows| rows_to_mat(&rows).map_err(serde::de::Error::custom))
            .transpose()
    }
}
