//! Row-wise softmax normalization of score matrices and Hadamard-product fusion.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ReidError, Result};
use crate::types::ScoreMatrix;

pub const DEFAULT_TEMPERATURE: f64 = 10.0;

/// Softmax temperature; the exponent is `sign * score / T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(t: f64) -> Result<Self> {
        if !(t.is_finite() && t > 0.0) {
            return Err(ReidError::Config(format!(
                "temperature must be positive, got {t}"
            )));
        }
        Ok(Temperature(t))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature(DEFAULT_TEMPERATURE)
    }
}

impl TryFrom<f64> for Temperature {
    type Error = ReidError;
    fn try_from(value: f64) -> Result<Self> {
        Temperature::new(value)
    }
}

impl From<Temperature> for f64 {
    fn from(value: Temperature) -> Self {
        value.0
    }
}

/// Which side of the frame pair indexes the rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    QueryRows,
    GalleryRows,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchProbabilityMatrix {
    values: Array2<f64>,
    orientation: Orientation,
}

impl MatchProbabilityMatrix {
    /// Wraps raw probabilities; entries must lie in `[0, 1]`.
    pub fn new(values: Array2<f64>, orientation: Orientation) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ReidError::Internal(format!(
                "match probability {v} outside [0, 1]"
            )));
        }
        Ok(MatchProbabilityMatrix { values, orientation })
    }

    /// Matrix with every entry `1 / cols`.
    pub fn uniform(rows: usize, cols: usize, orientation: Orientation) -> Self {
        let fill = if cols == 0 { 0.0 } else { 1.0 / cols as f64 };
        MatchProbabilityMatrix {
            values: Array2::from_elem((rows, cols), fill),
            orientation,
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Rescales each row to sum to one; all-zero rows are left as they are.
    pub fn renormalized(&self) -> MatchProbabilityMatrix {
        let mut values = self.values.clone();
        for mut row in values.axis_iter_mut(Axis(0)) {
            let total: f64 = row.sum();
            if total > 0.0 {
                row.mapv_inplace(|v| v / total);
            }
        }
        MatchProbabilityMatrix {
            values,
            orientation: self.orientation,
        }
    }
}

/// Row-wise softmax with sign `+1` for similarities and `-1` for dissimilarities.
pub fn normalize(
    scores: &ScoreMatrix,
    temperature: Temperature,
    orientation: Orientation,
) -> Result<MatchProbabilityMatrix> {
    if scores.values().iter().any(|v| !v.is_finite()) {
        return Err(ReidError::Internal("cannot normalize non-finite scores".into()));
    }
    let sign = scores.polarity().sign();
    let t = temperature.value();
    let mut values = scores.values().mapv(|s| sign * s / t);
    for mut row in values.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - max).exp());
        let total: f64 = row.sum();
        row.mapv_inplace(|x| x / total);
    }
    Ok(MatchProbabilityMatrix { values, orientation })
}

/// Element-wise product of all matrices, without renormalization.
pub fn fuse(mats: &[MatchProbabilityMatrix]) -> Result<MatchProbabilityMatrix> {
    let (first, rest) = mats
        .split_first()
        .ok_or_else(|| ReidError::Fusion("nothing to fuse".into()))?;
    let mut values = first.values.clone();
    for m in rest {
        if m.shape() != first.shape() {
            return Err(ReidError::Fusion(format!(
                "shape mismatch: {:?} vs {:?}",
                first.shape(),
                m.shape()
            )));
        }
        if m.orientation != first.orientation {
            return Err(ReidError::Fusion("orientation mismatch".into()));
        }
        values *= &m.values;
    }
    Ok(MatchProbabilityMatrix {
        values,
        orientation: first.orientation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Feature, Polarity};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn scores(rows: usize, cols: usize, v: Vec<f64>, polarity: Polarity) -> ScoreMatrix {
        let feature = match polarity {
            Polarity::Similarity => Feature::Dl,
            Polarity::Dissimilarity => Feature::Loc,
        };
        ScoreMatrix::new(
            Array2::from_shape_vec((rows, cols), v).unwrap(),
            polarity,
            feature,
        )
        .unwrap()
    }

    fn prob(rows: usize, cols: usize, v: Vec<f64>) -> MatchProbabilityMatrix {
        MatchProbabilityMatrix::new(
            Array2::from_shape_vec((rows, cols), v).unwrap(),
            Orientation::QueryRows,
        )
        .unwrap()
    }

    #[test]
    fn constant_row_is_uniform() {
        for polarity in [Polarity::Similarity, Polarity::Dissimilarity] {
            let p = normalize(
                &scores(1, 4, vec![3.0; 4], polarity),
                Temperature::default(),
                Orientation::QueryRows,
            )
            .unwrap();
            for v in p.values() {
                assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn similarity_worked_example() {
        let p = normalize(
            &scores(1, 2, vec![1.0, 0.0], Polarity::Similarity),
            Temperature::new(10.0).unwrap(),
            Orientation::QueryRows,
        )
        .unwrap();
        let e = 0.1f64.exp();
        assert_abs_diff_eq!(p.values()[[0, 0]], e / (e + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(p.values()[[0, 0]], 0.52498, epsilon = 1e-5);
        assert_abs_diff_eq!(p.values()[[0, 1]], 0.47502, epsilon = 1e-5);
    }

    #[test]
    fn dissimilarity_gap() {
        let p = normalize(
            &scores(1, 2, vec![0.0, 1000.0], Polarity::Dissimilarity),
            Temperature::new(10.0).unwrap(),
            Orientation::QueryRows,
        )
        .unwrap();
        assert_abs_diff_eq!(p.values()[[0, 0]], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p.values()[[0, 1]], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_columns() {
        let p = normalize(
            &scores(3, 0, vec![], Polarity::Similarity),
            Temperature::default(),
            Orientation::QueryRows,
        )
        .unwrap();
        assert_eq!(p.shape(), (3, 0));
    }

    #[test]
    fn bad_temperature() {
        assert!(Temperature::new(0.0).is_err());
        assert!(Temperature::new(-1.0).is_err());
        assert!(Temperature::new(f64::NAN).is_err());
    }

    #[test]
    fn fuse_examples() {
        let m = prob(1, 2, vec![0.6, 0.4]);
        assert_eq!(fuse(std::slice::from_ref(&m)).unwrap(), m);

        let f = fuse(&[m.clone(), prob(1, 2, vec![0.3, 0.7])]).unwrap();
        assert_abs_diff_eq!(f.values()[[0, 0]], 0.18, epsilon = 1e-15);
        assert_abs_diff_eq!(f.values()[[0, 1]], 0.28, epsilon = 1e-15);

        let u = MatchProbabilityMatrix::uniform(1, 2, Orientation::QueryRows);
        let f = fuse(&[m.clone(), u]).unwrap();
        assert_eq!(f.values().as_slice().unwrap(), &[0.3, 0.2]);
    }

    #[test]
    fn fuse_errors() {
        assert!(matches!(fuse(&[]), Err(ReidError::Fusion(_))));
        let a = prob(1, 2, vec![0.5, 0.5]);
        let b = prob(2, 1, vec![0.5, 0.5]);
        assert!(matches!(fuse(&[a.clone(), b]), Err(ReidError::Fusion(_))));
        let c = MatchProbabilityMatrix::uniform(1, 2, Orientation::GalleryRows);
        assert!(matches!(fuse(&[a, c]), Err(ReidError::Fusion(_))));
    }

    #[test]
    fn renormalize_rows() {
        let f = prob(2, 2, vec![0.18, 0.28, 0.0, 0.0]).renormalized();
        assert_abs_diff_eq!(f.values()[[0, 0]] + f.values()[[0, 1]], 1.0, epsilon = 1e-15);
        assert_eq!(f.values()[[1, 0]], 0.0);
    }

    fn matrix(max: usize) -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
        (1..=max, 1..=max)
            .prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-500.0..500.0f64, r * c)))
    }

    proptest! {
        #[test]
        fn softmax_properties((r, c, v) in matrix(6), shift in -100.0..100.0f64, t in 0.1..50.0f64, sim in any::<bool>()) {
            let polarity = if sim { Polarity::Similarity } else { Polarity::Dissimilarity };
            let s = ScoreMatrix::new(Array2::from_shape_vec((r, c), v.clone()).unwrap(), polarity, Feature::Dl).unwrap();
            let t = Temperature::new(t).unwrap();
            let p = normalize(&s, t, Orientation::QueryRows).unwrap();
            for row in p.values().rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-9);
            }
            let shifted = ScoreMatrix::new(
                Array2::from_shape_vec((r, c), v.iter().map(|x| x + shift).collect()).unwrap(),
                polarity,
                Feature::Dl,
            ).unwrap();
            let q = normalize(&shifted, t, Orientation::QueryRows).unwrap();
            for (a, b) in p.values().iter().zip(q.values()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn fuse_commutes(a in prop::collection::vec(0.0..1.0f64, 6), b in prop::collection::vec(0.0..1.0f64, 6)) {
            let ma = prob(2, 3, a);
            let mb = prob(2, 3, b);
            prop_assert_eq!(fuse(&[ma.clone(), mb.clone()]).unwrap(), fuse(&[mb, ma]).unwrap());
        }
    }
}
