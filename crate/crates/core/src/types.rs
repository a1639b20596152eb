//! Domain types shared by every stage of the pipeline.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{ReidError, Result};

/// Ground-truth person label. Equality is exact token equality.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Identity(String);

impl Identity {
    pub fn new(label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        if label.is_empty() {
            return Err(ReidError::Ingestion("identity label must be non-empty".into()));
        }
        Ok(Identity(label))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Identity {
    type Error = ReidError;
    fn try_from(value: String) -> Result<Self> {
        Identity::new(value)
    }
}

impl From<Identity> for String {
    fn from(value: Identity) -> Self {
        value.0
    }
}

impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CameraId(pub String);

impl CameraId {
    pub fn new(id: impl Into<String>) -> Self {
        CameraId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CameraId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CameraId {
    fn from(value: &str) -> Self {
        CameraId(value.to_owned())
    }
}

/// Axis-aligned box in pixels, stored by center and size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if !(cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(ReidError::Ingestion("bounding box has non-finite fields".into()));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(ReidError::Ingestion(format!(
                "bounding box size must be positive, got {w}x{h}"
            )));
        }
        Ok(BoundingBox { cx, cy, w, h })
    }

    pub fn center(&self) -> (f64, f64) {
        (self.cx, self.cy)
    }

    /// Clamps the center into `[0, width] x [0, height]`.
    pub fn clamp_center(&mut self, width: f64, height: f64) {
        self.cx = self.cx.clamp(0.0, width);
        self.cy = self.cy.clamp(0.0, height);
    }
}

/// One person observation in one camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub camera_id: CameraId,
    pub frame_index: u64,
    pub bbox: BoundingBox,
    pub identity: Option<Identity>,
    /// Image file holding the person crop, used for hue histogram extraction.
    pub crop_path: Option<PathBuf>,
    /// Key into a precomputed histogram store.
    pub histogram_key: Option<String>,
    pub embedding_key: Option<String>,
}

impl Detection {
    pub fn new(camera_id: impl Into<CameraId>, frame_index: u64, bbox: BoundingBox) -> Self {
        Detection {
            camera_id: camera_id.into(),
            frame_index,
            bbox,
            identity: None,
            crop_path: None,
            histogram_key: None,
            embedding_key: None,
        }
    }

    pub fn with_identity(mut self, identity: Identity) -> Self {
        self.identity = Some(identity);
        self
    }

    pub fn with_embedding_key(mut self, key: impl Into<String>) -> Self {
        self.embedding_key = Some(key.into());
        self
    }

    pub fn with_histogram_key(mut self, key: impl Into<String>) -> Self {
        self.histogram_key = Some(key.into());
        self
    }

    /// Short human-readable reference used in error messages.
    pub fn describe(&self) -> String {
        match &self.identity {
            Some(id) => format!(
                "frame {} camera {} identity {}",
                self.frame_index, self.camera_id, id
            ),
            None => format!(
                "frame {} camera {} bbox center ({}, {})",
                self.frame_index, self.camera_id, self.bbox.cx, self.bbox.cy
            ),
        }
    }
}

/// Detections of two cameras captured at the same time index.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncFramePair {
    pub frame_index: u64,
    pub query_cam: CameraId,
    pub gallery_cam: CameraId,
    pub query_dets: Vec<Detection>,
    pub gallery_dets: Vec<Detection>,
}

impl SyncFramePair {
    /// Same pair with query and gallery roles exchanged.
    pub fn swapped(&self) -> SyncFramePair {
        SyncFramePair {
            frame_index: self.frame_index,
            query_cam: self.gallery_cam.clone(),
            gallery_cam: self.query_cam.clone(),
            query_dets: self.gallery_dets.clone(),
            gallery_dets: self.query_dets.clone(),
        }
    }

    /// Keeps only detections whose identity satisfies `keep`.
    /// Fails if any detection lacks a ground-truth identity.
    pub fn restrict<F>(&self, mut keep: F) -> Result<SyncFramePair>
    where
        F: FnMut(&Identity) -> bool,
    {
        let mut filter = |dets: &[Detection]| -> Result<Vec<Detection>> {
            let mut out = Vec::with_capacity(dets.len());
            for d in dets {
                let id = d.identity.as_ref().ok_or_else(|| {
                    ReidError::Evaluation(format!("missing ground truth for {}", d.describe()))
                })?;
                if keep(id) {
                    out.push(d.clone());
                }
            }
            Ok(out)
        };
        Ok(SyncFramePair {
            frame_index: self.frame_index,
            query_cam: self.query_cam.clone(),
            gallery_cam: self.gallery_cam.clone(),
            query_dets: filter(&self.query_dets)?,
            gallery_dets: filter(&self.gallery_dets)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Similarity,
    Dissimilarity,
}

impl Polarity {
    /// Sign of the softmax exponent.
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Similarity => 1.0,
            Polarity::Dissimilarity => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Feature {
    #[serde(rename = "DL")]
    Dl,
    #[serde(rename = "CH")]
    Ch,
    #[serde(rename = "LOC")]
    Loc,
}

impl Feature {
    pub const ALL: [Feature; 3] = [Feature::Dl, Feature::Ch, Feature::Loc];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Dl => "DL",
            Feature::Ch => "CH",
            Feature::Loc => "LOC",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Feature {
    type Err = ReidError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "DL" => Ok(Feature::Dl),
            "CH" => Ok(Feature::Ch),
            "LOC" => Ok(Feature::Loc),
            other => Err(ReidError::Config(format!("unknown feature `{other}`"))),
        }
    }
}

/// Pairwise `|Q| x |G|` scores for one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    values: Array2<f64>,
    polarity: Polarity,
    feature: Feature,
}

impl ScoreMatrix {
    pub fn new(values: Array2<f64>, polarity: Polarity, feature: Feature) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(ReidError::Internal(format!(
                "{feature} score matrix contains non-finite value {v}"
            )));
        }
        if polarity == Polarity::Dissimilarity && matches!(feature, Feature::Ch | Feature::Loc) {
            if let Some(v) = values.iter().find(|v| **v < 0.0) {
                return Err(ReidError::Internal(format!(
                    "{feature} dissimilarity matrix contains negative value {v}"
                )));
            }
        }
        Ok(ScoreMatrix {
            values,
            polarity,
            feature,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    pub fn feature(&self) -> Feature {
        self.feature
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn transposed(&self) -> ScoreMatrix {
        ScoreMatrix {
            values: self.values.t().to_owned(),
            polarity: self.polarity,
            feature: self.feature,
        }
    }
}

/// Groups detections of `cam_a` (query) and `cam_b` (gallery) by frame index.
///
/// One pair is produced for every frame index at which at least one of the two
/// cameras has a detection, in ascending frame order. Within a pair detections
/// keep their ingestion order. A camera id is known if some detection carries
/// it; asking for an unknown camera in a non-empty list is a configuration error.
pub fn build_sync_pairs(
    detections: &[Detection],
    cam_a: &CameraId,
    cam_b: &CameraId,
) -> Result<Vec<SyncFramePair>> {
    if cam_a == cam_b {
        return Err(ReidError::Config(format!(
            "query and gallery camera must differ (both `{cam_a}`)"
        )));
    }
    if detections.is_empty() {
        return Ok(Vec::new());
    }
    for cam in [cam_a, cam_b] {
        if !detections.iter().any(|d| &d.camera_id == cam) {
            return Err(ReidError::Config(format!("unknown camera id `{cam}`")));
        }
    }

    let mut frames: BTreeMap<u64, (Vec<Detection>, Vec<Detection>)> = BTreeMap::new();
    for d in detections {
        if &d.camera_id == cam_a {
            frames.entry(d.frame_index).or_default().0.push(d.clone());
        } else if &d.camera_id == cam_b {
            frames.entry(d.frame_index).or_default().1.push(d.clone());
        }
    }

    Ok(frames
        .into_iter()
        .map(|(frame_index, (query_dets, gallery_dets))| SyncFramePair {
            frame_index,
            query_cam: cam_a.clone(),
            gallery_cam: cam_b.clone(),
            query_dets,
            gallery_dets,
        })
        .collect())
}
