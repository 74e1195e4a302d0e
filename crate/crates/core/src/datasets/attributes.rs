use ndarray::Array2;

use crate::error::{Error, Result};

/// Scales each row to unit Euclidean norm. Zero rows are rejected.
pub fn normalize_attribute_rows(matrix: &Array2<f64>) -> Result<Array2<f64>> {
    let mut out = matrix.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroAttributeRow { row: i });
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn three_four_five() {
        let n = normalize_attribute_rows(&array![[3.0, 4.0]]).unwrap();
        assert_eq!(n, array![[0.6, 0.8]]);
    }

    #[test]
    fn unit_row_is_unchanged() {
        let m = array![[0.0, 1.0, 0.0]];
        assert_eq!(normalize_attribute_rows(&m).unwrap(), m);
    }

    #[test]
    fn symmetric_row() {
        let n = normalize_attribute_rows(&array![[1.0, 1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(n, array![[0.5, 0.5, 0.5, 0.5]]);
    }

    #[test]
    fn zero_row_reports_index() {
        let err = normalize_attribute_rows(&array![[1.0, 0.0], [0.0, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::ZeroAttributeRow { row: 1 }));
    }

    proptest! {
        #[test]
        fn idempotent_and_direction_preserving(rows in prop::collection::vec(
            prop::collection::vec(0.01f64..10.0, 5), 1..6)) {
            let m = Array2::from_shape_vec((rows.len(), 5), rows.concat()).unwrap();
            let once = normalize_attribute_rows(&m).unwrap();
            let twice = normalize_attribute_rows(&once).unwrap();
            for (a, b) in once.iter().zip(twice.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            for (r, (orig, norm)) in m.rows().into_iter().zip(once.rows()).enumerate() {
                let n = orig.iter().map(|v| v * v).sum::<f64>().sqrt();
                for (o, v) in orig.iter().zip(norm.iter()) {
                    prop_assert!((o / n - v).abs() < 1e-12, "row {}", r);
                }
            }
        }
    }
}
