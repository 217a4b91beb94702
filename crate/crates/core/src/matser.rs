//! Serde adapters that store matrices as nested row arrays.

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows<E: serde::de::Error>(rows: Vec<Vec<f64>>) -> Result<DMatrix<f64>, E> {
    let cols = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(E::custom(format!("matrix row {i} has {} entries, expected {cols}", r.len())));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    to_rows(m).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
    from_rows(Vec::<Vec<f64>>::deserialize(d)?)
}

pub mod opt {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(to_rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        Option::<Vec<Vec<f64>>>::deserialize(d)?.map(from_rows).transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Holder {
        #[serde(with = "super")]
        m: DMatrix<f64>,
        #[serde(with = "super::opt", default)]
        o: Option<DMatrix<f64>>,
    }

    #[test]
    fn rows_roundtrip() {
        let h = Holder { m: DMatrix::from_row_slice(2, 3, &[1., 2., 3., 4., 5., 6.]), o: None };
        let text = toml::to_string(&h).unwrap();
        assert!(text.contains("[1.0, 2.0, 3.0]"), "{text}");
        assert_eq!(toml::from_str::<Holder>(&text).unwrap(), h);
        assert!(toml::from_str::<Holder>("m = [[1.0], [2.0, 3.0]]").is_err());
    }
}
