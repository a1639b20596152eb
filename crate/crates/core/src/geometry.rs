//! Location-based dissimilarity for ceiling-mounted fisheye cameras.
//!
//! Cameras follow the equidistant model `r = focal * theta` with the optical
//! axis pointing straight down. Bounding-box centers are back-projected onto a
//! horizontal plane at an assumed elevation (a fraction `eta` of the assumed
//! person height) and compared either on the floor plane (PPD) or by a
//! nearest-candidate vote over a sweep of heights (CBD).

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{ReidError, Result};
use crate::types::{CameraId, Feature, Polarity, ScoreMatrix, SyncFramePair};

pub const DEFAULT_PPD_HEIGHT_CM: f64 = 168.0;
pub const DEFAULT_ETA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisheyeCamera {
    pub id: CameraId,
    /// World position of the lens on the floor plan, cm.
    pub position: [f64; 2],
    /// Lens height above the floor, cm.
    pub mounting_height: f64,
    /// Pixels per radian of incidence angle.
    pub focal: f64,
    pub principal_point: [f64; 2],
    /// Rotation of the image axes about the vertical, radians.
    pub yaw: f64,
    pub image_size: [u32; 2],
}

impl FisheyeCamera {
    pub fn validate(&self) -> Result<()> {
        let finite = self.position.iter().all(|v| v.is_finite())
            && self.principal_point.iter().all(|v| v.is_finite())
            && self.mounting_height.is_finite()
            && self.focal.is_finite()
            && self.yaw.is_finite();
        if !finite {
            return Err(ReidError::Config(format!(
                "camera {}: non-finite parameter",
                self.id
            )));
        }
        if self.mounting_height <= 0.0 {
            return Err(ReidError::Config(format!(
                "camera {}: mounting height must be positive",
                self.id
            )));
        }
        if self.focal <= 0.0 {
            return Err(ReidError::Config(format!(
                "camera {}: focal must be positive",
                self.id
            )));
        }
        let [u0, v0] = self.principal_point;
        let [w, h] = self.image_size;
        if !(0.0..=w as f64).contains(&u0) || !(0.0..=h as f64).contains(&v0) {
            return Err(ReidError::Config(format!(
                "camera {}: principal point ({u0}, {v0}) outside the {w}x{h} image",
                self.id
            )));
        }
        Ok(())
    }

    pub fn contains_pixel(&self, px: (f64, f64)) -> bool {
        let [w, h] = self.image_size;
        (0.0..=w as f64).contains(&px.0) && (0.0..=h as f64).contains(&px.1)
    }

    fn depth(&self, elevation: f64) -> Result<f64> {
        if !elevation.is_finite() || elevation < 0.0 || elevation >= self.mounting_height {
            return Err(ReidError::Geometry(format!(
                "camera {}: elevation {elevation} cm outside [0, {})",
                self.id, self.mounting_height
            )));
        }
        Ok(self.mounting_height - elevation)
    }

    /// Projects a world point at `elevation` cm into the image.
    pub fn world_to_pixel(&self, world: (f64, f64), elevation: f64) -> Result<(f64, f64)> {
        let depth = self.depth(elevation)?;
        let dx = world.0 - self.position[0];
        let dy = world.1 - self.position[1];
        let (s, c) = self.yaw.sin_cos();
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        let rho = lx.hypot(ly);
        let [u0, v0] = self.principal_point;
        if rho == 0.0 {
            return Ok((u0, v0));
        }
        let radius = self.focal * rho.atan2(depth);
        Ok((u0 + radius * lx / rho, v0 + radius * ly / rho))
    }

    /// Intersects the back-projected ray of `px` with the plane `z = elevation`.
    pub fn pixel_to_world(&self, px: (f64, f64), elevation: f64) -> Result<(f64, f64)> {
        let depth = self.depth(elevation)?;
        let [u0, v0] = self.principal_point;
        let du = px.0 - u0;
        let dv = px.1 - v0;
        let radius = du.hypot(dv);
        if radius == 0.0 {
            return Ok((self.position[0], self.position[1]));
        }
        let theta = radius / self.focal;
        if theta >= FRAC_PI_2 {
            return Err(ReidError::Geometry(format!(
                "camera {}: pixel ({}, {}) lies outside the lower hemisphere",
                self.id, px.0, px.1
            )));
        }
        let rho = depth * theta.tan();
        let lx = rho * du / radius;
        let ly = rho * dv / radius;
        let (s, c) = self.yaw.sin_cos();
        Ok((
            self.position[0] + c * lx - s * ly,
            self.position[1] + s * lx + c * ly,
        ))
    }
}

/// Calibrated cameras keyed by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CameraSet {
    cameras: BTreeMap<CameraId, FisheyeCamera>,
}

impl CameraSet {
    pub fn new(cameras: impl IntoIterator<Item = FisheyeCamera>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for cam in cameras {
            cam.validate()?;
            if map.contains_key(&cam.id) {
                return Err(ReidError::Config(format!("duplicate camera id `{}`", cam.id)));
            }
            map.insert(cam.id.clone(), cam);
        }
        Ok(CameraSet { cameras: map })
    }

    pub fn get(&self, id: &CameraId) -> Result<&FisheyeCamera> {
        self.cameras
            .get(id)
            .ok_or_else(|| ReidError::Config(format!("missing calibration for camera `{id}`")))
    }

    pub fn ids(&self) -> impl Iterator<Item = &CameraId> {
        self.cameras.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = &FisheyeCamera> {
        self.cameras.values()
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }
}

/// Assumed person heights in cm, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct HeightSet(Vec<f64>);

impl HeightSet {
    pub fn new(heights: Vec<f64>) -> Result<Self> {
        if heights.is_empty() {
            return Err(ReidError::Config("height set must be non-empty".into()));
        }
        if heights.iter().any(|h| !h.is_finite() || *h <= 0.0) {
            return Err(ReidError::Config("heights must be finite and positive".into()));
        }
        if heights.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ReidError::Config("heights must be strictly increasing".into()));
        }
        Ok(HeightSet(heights))
    }

    pub fn single(height: f64) -> Result<Self> {
        Self::new(vec![height])
    }

    /// 168 cm.
    pub fn ppd_default() -> Self {
        HeightSet(vec![DEFAULT_PPD_HEIGHT_CM])
    }

    /// 21 heights from 128 cm to 208 cm in 4 cm steps.
    pub fn cbd_default() -> Self {
        HeightSet((0..21).map(|k| 128.0 + 4.0 * k as f64).collect())
    }

    pub fn heights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for HeightSet {
    type Error = ReidError;
    fn try_from(value: Vec<f64>) -> Result<Self> {
        HeightSet::new(value)
    }
}

impl From<HeightSet> for Vec<f64> {
    fn from(value: HeightSet) -> Self {
        value.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum LocationMetric {
    #[default]
    #[serde(rename = "PPD")]
    Ppd,
    #[serde(rename = "CBD")]
    Cbd,
}

impl fmt::Display for LocationMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LocationMetric::Ppd => "PPD",
            LocationMetric::Cbd => "CBD",
        })
    }
}

impl std::str::FromStr for LocationMetric {
    type Err = ReidError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "PPD" => Ok(LocationMetric::Ppd),
            "CBD" => Ok(LocationMetric::Cbd),
            other => Err(ReidError::Config(format!("unknown location metric `{other}`"))),
        }
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(ReidError::Config(format!(
            "eta must be finite and >= 0, got {eta}"
        )));
    }
    Ok(())
}

/// Floor-plane distance (cm) between back-projected bbox centers, all at
/// elevation `eta * height`.
pub fn ppd_matrix(pair: &SyncFramePair, cams: &CameraSet, height: f64, eta: f64) -> Result<ScoreMatrix> {
    check_eta(eta)?;
    let qcam = cams.get(&pair.query_cam)?;
    let gcam = cams.get(&pair.gallery_cam)?;
    let elevation = eta * height;
    let project = |cam: &FisheyeCamera, dets: &[crate::types::Detection]| -> Result<Vec<(f64, f64)>> {
        dets.iter()
            .map(|d| cam.pixel_to_world(d.bbox.center(), elevation))
            .collect()
    };
    let qw = project(qcam, &pair.query_dets)?;
    let gw = project(gcam, &pair.gallery_dets)?;
    let values = Array2::from_shape_fn((qw.len(), gw.len()), |(i, j)| {
        (qw[i].0 - gw[j].0).hypot(qw[i].1 - gw[j].1)
    });
    ScoreMatrix::new(values, Polarity::Dissimilarity, Feature::Loc)
}

/// Vote-count distance over a height sweep.
///
/// For every assumed height, each query center is carried into the gallery
/// image and votes for the nearest gallery center (lowest index on ties).
/// Entry `(i, j)` is `K - votes(i, j)` with `K = heights.len()`.
pub fn cbd_matrix(
    pair: &SyncFramePair,
    cams: &CameraSet,
    heights: &HeightSet,
    eta: f64,
) -> Result<ScoreMatrix> {
    check_eta(eta)?;
    let qcam = cams.get(&pair.query_cam)?;
    let gcam = cams.get(&pair.gallery_cam)?;
    let k = heights.len();
    let rows = pair.query_dets.len();
    let cols = pair.gallery_dets.len();
    let mut votes = Array2::<usize>::zeros((rows, cols));
    if cols > 0 {
        let gallery: Vec<(f64, f64)> = pair.gallery_dets.iter().map(|d| d.bbox.center()).collect();
        for (i, q) in pair.query_dets.iter().enumerate() {
            for &h in heights.heights() {
                let elevation = eta * h;
                let world = qcam.pixel_to_world(q.bbox.center(), elevation)?;
                let (u, v) = gcam.world_to_pixel(world, elevation)?;
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (j, g) in gallery.iter().enumerate() {
                    let d = (u - g.0).powi(2) + (v - g.1).powi(2);
                    if d < best_d {
                        best_d = d;
                        best = j;
                    }
                }
                votes[[i, best]] += 1;
            }
        }
    }
    let values = votes.mapv(|c| (k - c) as f64);
    ScoreMatrix::new(values, Polarity::Dissimilarity, Feature::Loc)
}

/// `d_qg + d_gq^T`.
pub fn symmetrize_location(d_qg: &ScoreMatrix, d_gq: &ScoreMatrix) -> Result<ScoreMatrix> {
    let (r, c) = d_qg.shape();
    if d_gq.shape() != (c, r) {
        return Err(ReidError::Internal(format!(
            "cannot symmetrize {r}x{c} with {}x{}",
            d_gq.rows(),
            d_gq.cols()
        )));
    }
    let values = d_qg.values() + &d_gq.values().t();
    ScoreMatrix::new(values, Polarity::Dissimilarity, Feature::Loc)
}

/// Settings of the location feature.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationParams {
    pub metric: LocationMetric,
    pub ppd_height: f64,
    pub cbd_heights: HeightSet,
    pub eta: f64,
}

impl Default for LocationParams {
    fn default() -> Self {
        LocationParams {
            metric: LocationMetric::Ppd,
            ppd_height: DEFAULT_PPD_HEIGHT_CM,
            cbd_heights: HeightSet::cbd_default(),
            eta: DEFAULT_ETA,
        }
    }
}

/// Symmetrized location dissimilarity for one frame pair.
pub fn location_matrix(
    pair: &SyncFramePair,
    cams: &CameraSet,
    params: &LocationParams,
) -> Result<ScoreMatrix> {
    let directed = |p: &SyncFramePair| match params.metric {
        LocationMetric::Ppd => ppd_matrix(p, cams, params.ppd_height, params.eta),
        LocationMetric::Cbd => cbd_matrix(p, cams, &params.cbd_heights, params.eta),
    };
    let forward = directed(pair)?;
    let backward = directed(&pair.swapped())?;
    symmetrize_location(&forward, &backward)
}
