//! Appearance scores: cosine similarity over embeddings and Jensen-Shannon
//! divergence over hue histograms.

use std::path::Path;

use ndarray::Array2;

use crate::error::{ReidError, Result};
use crate::types::{Feature, Polarity, ScoreMatrix};

pub const DEFAULT_HISTOGRAM_BINS: usize = 256;

/// Unit-length appearance embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Validates and L2-normalizes `values`. Vectors already at unit length
    /// (to within a few ulps) are stored untouched so that written stores
    /// read back bit-identical.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(ReidError::Ingestion("embedding has zero dimensions".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ReidError::Ingestion("embedding has non-finite entries".into()));
        }
        let norm_sq: f64 = values.iter().map(|v| v * v).sum();
        if norm_sq == 0.0 {
            return Err(ReidError::Ingestion("embedding is the zero vector".into()));
        }
        let tol = 4.0 * f64::EPSILON * values.len() as f64;
        if (norm_sq - 1.0).abs() <= tol {
            return Ok(EmbeddingVector { values });
        }
        let norm = norm_sq.sqrt();
        Ok(EmbeddingVector {
            values: values.into_iter().map(|v| v / norm).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

impl AsRef<EmbeddingVector> for EmbeddingVector {
    fn as_ref(&self) -> &EmbeddingVector {
        self
    }
}

/// `|Q| x |G|` cosine similarities. Entries lie in `[-1, 1]`.
pub fn cosine_similarity_matrix<Q, G>(query: &[Q], gallery: &[G]) -> Result<ScoreMatrix>
where
    Q: AsRef<EmbeddingVector>,
    G: AsRef<EmbeddingVector>,
{
    let dim = query
        .iter()
        .map(|q| q.as_ref().dim())
        .chain(gallery.iter().map(|g| g.as_ref().dim()))
        .next();
    if let Some(dim) = dim {
        let mismatch = query
            .iter()
            .map(|q| q.as_ref().dim())
            .chain(gallery.iter().map(|g| g.as_ref().dim()))
            .find(|d| *d != dim);
        if let Some(other) = mismatch {
            return Err(ReidError::Feature(format!(
                "embedding dimension mismatch: {dim} vs {other}"
            )));
        }
    }
    let values = Array2::from_shape_fn((query.len(), gallery.len()), |(i, j)| {
        query[i].as_ref().dot(gallery[j].as_ref()).clamp(-1.0, 1.0)
    });
    ScoreMatrix::new(values, Polarity::Similarity, Feature::Dl)
}

/// Normalized 1-D distribution over discretized hue.
#[derive(Debug, Clone, PartialEq)]
pub struct HueHistogram {
    bins: Vec<f64>,
    pixel_count: usize,
}

impl HueHistogram {
    /// Wraps an existing probability vector. Entries must be non-negative and
    /// sum to one within 1e-9.
    pub fn from_probabilities(bins: Vec<f64>, pixel_count: usize) -> Result<Self> {
        if bins.len() < 2 {
            return Err(ReidError::Feature(format!(
                "histogram needs at least 2 bins, got {}",
                bins.len()
            )));
        }
        if pixel_count == 0 {
            return Err(ReidError::Feature("histogram pixel count must be >= 1".into()));
        }
        if bins.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(ReidError::Feature(
                "histogram has negative or non-finite bins".into(),
            ));
        }
        let total: f64 = bins.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(ReidError::Feature(format!(
                "histogram sums to {total}, expected 1"
            )));
        }
        Ok(HueHistogram { bins, pixel_count })
    }

    /// Normalizes raw counts. An all-zero count vector yields the uniform histogram.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if counts.len() < 2 {
            return Err(ReidError::Feature(format!(
                "histogram needs at least 2 bins, got {}",
                counts.len()
            )));
        }
        if total == 0 {
            return Ok(Self::uniform(counts.len(), 1));
        }
        let bins = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Ok(HueHistogram {
            bins,
            pixel_count: total as usize,
        })
    }

    pub fn uniform(bins: usize, pixel_count: usize) -> Self {
        HueHistogram {
            bins: vec![1.0 / bins as f64; bins],
            pixel_count: pixel_count.max(1),
        }
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn pixel_count(&self) -> usize {
        self.pixel_count
    }
}

impl AsRef<HueHistogram> for HueHistogram {
    fn as_ref(&self) -> &HueHistogram {
        self
    }
}

/// HSV hue in degrees `[0, 360)`, or `None` when saturation is zero.
pub fn rgb_to_hue(rgb: [u8; 3]) -> Option<f64> {
    let [r, g, b] = rgb.map(f64::from);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta == 0.0 {
        return None;
    }
    let hue = if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    Some(if hue >= 360.0 { hue - 360.0 } else { hue })
}

/// Bin index of a hue angle for a histogram with `bins` equal bins.
pub fn hue_bin(hue_deg: f64, bins: usize) -> usize {
    let idx = (hue_deg / 360.0 * bins as f64).floor();
    (idx.max(0.0) as usize).min(bins - 1)
}

/// Hue histogram of an RGB crop at native resolution.
///
/// Achromatic pixels (S = 0) are skipped. A crop with no chromatic pixel at all
/// gets the uniform histogram.
pub fn extract_hue_histogram(pixels: &[[u8; 3]], bins: usize) -> Result<HueHistogram> {
    if pixels.is_empty() {
        return Err(ReidError::Feature(
            "cannot build a histogram from an empty crop".into(),
        ));
    }
    if bins < 2 {
        return Err(ReidError::Feature(format!(
            "histogram needs at least 2 bins, got {bins}"
        )));
    }
    let mut counts = vec![0u64; bins];
    for &px in pixels {
        if let Some(h) = rgb_to_hue(px) {
            counts[hue_bin(h, bins)] += 1;
        }
    }
    let hist = HueHistogram::from_counts(&counts)?;
    Ok(HueHistogram {
        pixel_count: pixels.len(),
        ..hist
    })
}

/// Loads an image file and returns its pixels as RGB triples.
pub fn load_crop(path: &Path) -> Result<Vec<[u8; 3]>> {
    let img = image::open(path)
        .map_err(|e| ReidError::Feature(format!("cannot read crop {}: {e}", path.display())))?
        .to_rgb8();
    Ok(img.pixels().map(|p| p.0).collect())
}

/// Kullback-Leibler divergence in nats; terms with `a_i = 0` contribute nothing.
fn kl_divergence(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(ai, _)| **ai > 0.0)
        .map(|(ai, bi)| ai * (ai / bi).ln())
        .sum()
}

/// Jensen-Shannon divergence in nats, in `[0, ln 2]`.
pub fn js_divergence(q: &HueHistogram, g: &HueHistogram) -> Result<f64> {
    if q.len() != g.len() {
        return Err(ReidError::Feature(format!(
            "histogram bin count mismatch: {} vs {}",
            q.len(),
            g.len()
        )));
    }
    let mid: Vec<f64> = q.bins.iter().zip(&g.bins).map(|(a, b)| 0.5 * (a + b)).collect();
    let js = 0.5 * kl_divergence(&q.bins, &mid) + 0.5 * kl_divergence(&g.bins, &mid);
    // rounding can push identical or disjoint inputs a hair outside the range
    Ok(js.clamp(0.0, std::f64::consts::LN_2))
}

/// `|Q| x |G|` Jensen-Shannon divergences.
pub fn hue_dissimilarity_matrix<Q, G>(query: &[Q], gallery: &[G]) -> Result<ScoreMatrix>
where
    Q: AsRef<HueHistogram>,
    G: AsRef<HueHistogram>,
{
    let mut values = Array2::zeros((query.len(), gallery.len()));
    for (i, q) in query.iter().enumerate() {
        for (j, g) in gallery.iter().enumerate() {
            values[[i, j]] = js_divergence(q.as_ref(), g.as_ref())?;
        }
    }
    ScoreMatrix::new(values, Polarity::Dissimilarity, Feature::Ch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn emb(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    fn hist(v: &[f64]) -> HueHistogram {
        HueHistogram::from_probabilities(v.to_vec(), 1).unwrap()
    }

    /// Entropy route: JS = H(mid) - (H(q) + H(g)) / 2.
    fn js_by_entropy(q: &[f64], g: &[f64]) -> f64 {
        let h = |p: &[f64]| -> f64 { -p.iter().filter(|x| **x > 0.0).map(|x| x * x.ln()).sum::<f64>() };
        let mid: Vec<f64> = q.iter().zip(g).map(|(a, b)| (a + b) / 2.0).collect();
        h(&mid) - 0.5 * (h(q) + h(g))
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn cosine_examples() {
        let m = cosine_similarity_matrix(&[emb(&[1.0, 2.0, 3.0])], &[emb(&[1.0, 2.0, 3.0])]).unwrap();
        assert_abs_diff_eq!(m.values()[[0, 0]], 1.0, epsilon = 1e-12);
        let m = cosine_similarity_matrix(&[emb(&[1.0, 0.0])], &[emb(&[0.0, 1.0])]).unwrap();
        assert_abs_diff_eq!(m.values()[[0, 0]], 0.0, epsilon = 1e-12);
        let m = cosine_similarity_matrix(&[emb(&[1.0, 0.0])], &[emb(&[1.0, 1.0])]).unwrap();
        assert_abs_diff_eq!(m.values()[[0, 0]], 0.7071068, epsilon = 1e-6);
        assert_eq!(m.polarity(), Polarity::Similarity);
        assert_eq!(m.feature(), Feature::Dl);
    }

    #[test]
    fn cosine_dimension_mismatch() {
        let err = cosine_similarity_matrix(&[emb(&[1.0, 0.0])], &[emb(&[1.0, 0.0, 1.0])]).unwrap_err();
        assert!(matches!(err, ReidError::Feature(_)));
    }

    #[test]
    fn zero_embedding_rejected() {
        assert!(matches!(
            EmbeddingVector::new(vec![0.0, 0.0]),
            Err(ReidError::Ingestion(_))
        ));
        assert!(EmbeddingVector::new(vec![]).is_err());
        assert!(EmbeddingVector::new(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn histogram_of_pure_colors() {
        let red = extract_hue_histogram(&[[255, 0, 0]; 10], 256).unwrap();
        assert_eq!(red.bins()[0], 1.0);
        let green = extract_hue_histogram(&[[0, 255, 0]; 10], 256).unwrap();
        assert_eq!(green.bins()[85], 1.0);
        let mut mixed = vec![[255u8, 0, 0]; 6];
        mixed.extend(vec![[0u8, 255, 0]; 6]);
        let mixed = extract_hue_histogram(&mixed, 256).unwrap();
        assert_eq!(mixed.bins()[0], 0.5);
        assert_eq!(mixed.bins()[85], 0.5);
        assert_eq!(mixed.pixel_count(), 12);
    }

    #[test]
    fn achromatic_pixels_skipped() {
        let hist = extract_hue_histogram(&[[0, 0, 255], [40, 40, 40], [255, 255, 255]], 4).unwrap();
        // blue = 240 deg -> bin 2 of 4
        assert_eq!(hist.bins(), &[0.0, 0.0, 1.0, 0.0]);
        let gray = extract_hue_histogram(&[[10, 10, 10], [0, 0, 0]], 4).unwrap();
        assert_eq!(gray.bins(), &[0.25; 4]);
    }

    #[test]
    fn empty_crop_rejected() {
        assert!(matches!(
            extract_hue_histogram(&[], 256),
            Err(ReidError::Feature(_))
        ));
        assert!(extract_hue_histogram(&[[1, 2, 3]], 1).is_err());
    }

    #[test]
    fn hue_reference_values() {
        assert_eq!(rgb_to_hue([255, 0, 0]), Some(0.0));
        assert_eq!(rgb_to_hue([255, 255, 0]), Some(60.0));
        assert_eq!(rgb_to_hue([0, 255, 0]), Some(120.0));
        assert_eq!(rgb_to_hue([0, 255, 255]), Some(180.0));
        assert_eq!(rgb_to_hue([0, 0, 255]), Some(240.0));
        assert_eq!(rgb_to_hue([255, 0, 255]), Some(300.0));
        assert_eq!(rgb_to_hue([7, 7, 7]), None);
        assert_eq!(hue_bin(359.999, 256), 255);
    }

    #[test]
    fn js_examples() {
        assert_eq!(
            js_divergence(&hist(&[0.5, 0.5]), &hist(&[0.5, 0.5])).unwrap(),
            0.0
        );
        assert_abs_diff_eq!(
            js_divergence(&hist(&[1.0, 0.0]), &hist(&[0.0, 1.0])).unwrap(),
            LN_2,
            epsilon = 1e-12
        );
        let expected = js_by_entropy(&[0.5, 0.5], &[1.0, 0.0]);
        assert_abs_diff_eq!(expected, 0.2157616, epsilon = 1e-6);
        assert_abs_diff_eq!(
            js_divergence(&hist(&[0.5, 0.5]), &hist(&[1.0, 0.0])).unwrap(),
            0.2157616,
            epsilon = 1e-6
        );
    }

    #[test]
    fn js_bin_mismatch() {
        let err = js_divergence(&hist(&[0.5, 0.5]), &hist(&[0.2, 0.3, 0.5])).unwrap_err();
        assert!(matches!(err, ReidError::Feature(_)));
    }

    #[test]
    fn hue_matrix_examples() {
        let a = hist(&[1.0, 0.0]);
        let b = hist(&[0.0, 1.0]);
        let m = hue_dissimilarity_matrix(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap();
        assert_eq!(m.values()[[0, 0]], 0.0);
        let m = hue_dissimilarity_matrix(&[a.clone(), b.clone()], &[a, b]).unwrap();
        assert_eq!(m.values()[[0, 0]], 0.0);
        assert_eq!(m.values()[[1, 1]], 0.0);
        assert_abs_diff_eq!(m.values()[[0, 1]], LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(m.values()[[1, 0]], LN_2, epsilon = 1e-12);
    }

    #[test]
    fn from_probabilities_validates() {
        assert!(HueHistogram::from_probabilities(vec![0.5, 0.6], 1).is_err());
        assert!(HueHistogram::from_probabilities(vec![1.5, -0.5], 1).is_err());
        assert!(HueHistogram::from_probabilities(vec![1.0], 1).is_err());
        assert!(HueHistogram::from_probabilities(vec![1.0, 0.0], 0).is_err());
    }

    fn distribution(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop_oneof![Just(0.0), 0.0..1.0f64], len).prop_filter_map(
            "non-zero mass",
            |w| {
                let total: f64 = w.iter().sum();
                (total > 0.0).then(|| w.iter().map(|x| x / total).collect())
            },
        )
    }

    proptest! {
        #[test]
        fn js_symmetric_bounded_finite(q in distribution(8), g in distribution(8)) {
            let hq = hist(&q);
            let hg = hist(&g);
            let a = js_divergence(&hq, &hg).unwrap();
            let b = js_divergence(&hg, &hq).unwrap();
            prop_assert!(a.is_finite());
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=LN_2).contains(&a));
            prop_assert!((a - js_by_entropy(&q, &g)).abs() < 1e-12);
        }

        #[test]
        fn cosine_scale_invariant(
            v in prop::collection::vec(-5.0..5.0f64, 4),
            w in prop::collection::vec(-5.0..5.0f64, 4),
            s in 0.01..100.0f64,
        ) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3) && w.iter().any(|x| x.abs() > 1e-3));
            let base = cosine_similarity_matrix(&[emb(&v)], &[emb(&w)]).unwrap();
            let scaled: Vec<f64> = v.iter().map(|x| x * s).collect();
            let other = cosine_similarity_matrix(&[emb(&scaled)], &[emb(&w)]).unwrap();
            prop_assert!((base.values()[[0, 0]] - other.values()[[0, 0]]).abs() < 1e-12);
            let swapped = cosine_similarity_matrix(&[emb(&w)], &[emb(&v)]).unwrap();
            prop_assert_eq!(swapped.values()[[0, 0]], base.values()[[0, 0]]);
        }

        #[test]
        fn histogram_brightness_invariant(
            pixels in prop::collection::vec(prop::array::uniform3(0u8..=127), 1..50)
        ) {
            let doubled: Vec<[u8; 3]> = pixels.iter().map(|p| p.map(|c| c * 2)).collect();
            let a = extract_hue_histogram(&pixels, 256).unwrap();
            let b = extract_hue_histogram(&doubled, 256).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
