use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BinaryCode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarizationThresholds {
    pub per_dimension: Vec<f64>,
}

impl BinarizationThresholds {
    pub fn zeros(dim: usize) -> Self {
        Self { per_dimension: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.per_dimension.len()
    }

    /// Per-dimension medians of a calibration sample. Needed for
    /// non-negative embeddings, where a zero threshold sets every bit.
    pub fn calibrate_medians(samples: &[Vec<f64>]) -> Result<Self> {
        let dim = samples
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InsufficientInput("calibration sample is empty".into()))?;
        if samples.iter().any(|s| s.len() != dim) {
            return Err(Error::invalid("calibration samples differ in dimension"));
        }
        let mut column = Vec::with_capacity(samples.len());
        let per_dimension = (0..dim)
            .map(|d| {
                column.clear();
                column.extend(samples.iter().map(|s| s[d]));
                column.sort_by(f64::total_cmp);
                let n = column.len();
                if n % 2 == 1 {
                    column[n / 2]
                } else {
                    (column[n / 2 - 1] + column[n / 2]) / 2.0
                }
            })
            .collect();
        Ok(Self { per_dimension })
    }
}

/// Bit `i` is set iff `embedding[i] > thresholds[i]`.
pub fn binarize(embedding: &[f64], thresholds: &BinarizationThresholds) -> Result<BinaryCode> {
    if embedding.len() != thresholds.dim() {
        return Err(Error::invalid(format!(
            "embedding has {} dims, thresholds have {}",
            embedding.len(),
            thresholds.dim()
        )));
    }
    Ok(BinaryCode::from_bits(
        embedding.iter().zip(&thresholds.per_dimension).map(|(v, t)| v > t),
    ))
}

pub fn hamming(a: &BinaryCode, b: &BinaryCode) -> Result<u32> {
    if a.nbits() != b.nbits() {
        return Err(Error::invalid(format!(
            "cannot compare {}-bit and {}-bit codes",
            a.nbits(),
            b.nbits()
        )));
    }
    Ok(a.words().iter().zip(b.words()).map(|(x, y)| (x ^ y).count_ones()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits(s: &str) -> BinaryCode {
        BinaryCode::from_bits(s.chars().map(|c| c == '1'))
    }

    #[test]
    fn strict_greater_than() {
        let t = BinarizationThresholds::zeros(4);
        let code = binarize(&[0.5, -0.2, 0.0, 3.1], &t).unwrap();
        assert_eq!(code, bits("1001"));
        assert_eq!(binarize(&[0.0; 4], &t).unwrap().count_ones(), 0);

        let e = vec![0.3, -1.0, 7.5, 2.0];
        let same = BinarizationThresholds { per_dimension: e.clone() };
        assert_eq!(binarize(&e, &same).unwrap().count_ones(), 0);
    }

    #[test]
    fn dimension_mismatch() {
        let t = BinarizationThresholds::zeros(3);
        assert!(matches!(binarize(&[1.0; 4], &t), Err(Error::InvalidArgument(_))));
        assert!(hamming(&bits("10"), &bits("100")).is_err());
    }

    #[test]
    fn xor_count_oracle() {
        // 1010 vs 0110: positions 0 and 1 differ
        assert_eq!(hamming(&bits("1010"), &bits("0110")).unwrap(), 2);
        let x = BinaryCode::from_bits((0..256).map(|i| i % 3 == 0));
        assert_eq!(hamming(&x, &x).unwrap(), 0);
        assert_eq!(hamming(&x, &x.complement()).unwrap(), 256);
    }

    #[test]
    fn medians() {
        let samples = vec![vec![1.0, 10.0], vec![3.0, 30.0], vec![2.0, 20.0], vec![4.0, 0.0]];
        let t = BinarizationThresholds::calibrate_medians(&samples).unwrap();
        assert_eq!(t.per_dimension, vec![2.5, 15.0]);
        assert!(BinarizationThresholds::calibrate_medians(&[]).is_err());
    }

    proptest! {
        #[test]
        fn self_distance_zero(e in prop::collection::vec(-5.0f64..5.0, 1..200)) {
            let t = BinarizationThresholds::zeros(e.len());
            let c = binarize(&e, &t).unwrap();
            prop_assert_eq!(hamming(&c, &c).unwrap(), 0);
        }

        #[test]
        fn matches_bitwise_scan(a in prop::collection::vec(any::<bool>(), 1..300), seed in any::<u64>()) {
            let b: Vec<bool> = a.iter().enumerate().map(|(i, &v)| v ^ ((seed >> (i % 64)) & 1 == 1)).collect();
            let expected = a.iter().zip(&b).filter(|(x, y)| x != y).count() as u32;
            let got = hamming(&BinaryCode::from_bits(a.clone()), &BinaryCode::from_bits(b)).unwrap();
            prop_assert_eq!(got, expected);
        }
    }
}
