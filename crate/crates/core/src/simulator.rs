//! Synthetic multi-camera scenes with known ground truth.
//!
//! People walk on the floor plan of a room watched by ceiling-mounted fisheye
//! cameras. Each frame, every visible person becomes a detection in every
//! camera: the bbox center is the projected body center plus Gaussian pixel
//! noise, the embedding is a per-person prototype plus Gaussian noise and the
//! hue histogram is either the exact distribution of the person's hue profile
//! or a finite sample from it. No pixels are rendered.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::appearance::{hue_bin, EmbeddingVector, HueHistogram, DEFAULT_HISTOGRAM_BINS};
use crate::dataset::{Dataset, EmbeddingStore, HistogramStore};
use crate::error::{ReidError, Result};
use crate::evaluation::FoldSpec;
use crate::fusion::Temperature;
use crate::geometry::{CameraSet, FisheyeCamera, DEFAULT_ETA};
use crate::matching::FeatureTemperatures;
use crate::pipeline::PipelineConfig;
use crate::types::{BoundingBox, CameraId, Detection, Identity};

/// Wrapped-normal hue distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HueProfile {
    pub mean_deg: f64,
    pub spread_deg: f64,
}

impl HueProfile {
    /// Probability mass of each of `bins` equal hue bins.
    pub fn exact_histogram(&self, bins: usize) -> Result<HueHistogram> {
        let mean = self.mean_deg.rem_euclid(360.0);
        if self.spread_deg <= 0.0 {
            let mut p = vec![0.0; bins];
            p[hue_bin(mean, bins)] = 1.0;
            return HueHistogram::from_probabilities(p, 1);
        }
        let width = 360.0 / bins as f64;
        let cdf = |x: f64| 0.5 * erfc(-(x - mean) / (self.spread_deg * std::f64::consts::SQRT_2));
        let wraps = (self.spread_deg * 8.0 / 360.0).ceil() as i32 + 1;
        let mut p: Vec<f64> = (0..bins)
            .map(|k| {
                let lo = k as f64 * width;
                (-wraps..=wraps)
                    .map(|w| {
                        let shift = 360.0 * w as f64;
                        cdf(lo + width + shift) - cdf(lo + shift)
                    })
                    .sum::<f64>()
                    .max(0.0)
            })
            .collect();
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
        HueHistogram::from_probabilities(p, 1)
    }

    fn sample_histogram<R: Rng>(&self, bins: usize, samples: usize, rng: &mut R) -> Result<HueHistogram> {
        let mut counts = vec![0u64; bins];
        for _ in 0..samples {
            let z: f64 = rng.sample(StandardNormal);
            let hue = (self.mean_deg + self.spread_deg * z).rem_euclid(360.0);
            counts[hue_bin(hue, bins)] += 1;
        }
        HueHistogram::from_counts(&counts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPerson {
    pub identity: Identity,
    /// Floor position (cm) at every frame.
    pub trajectory: Vec<[f64; 2]>,
    pub height: f64,
    pub hue: HueProfile,
    pub embedding_prototype: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation of the bbox center, pixels.
    pub bbox_center_px: f64,
    /// Standard deviation added to each embedding coordinate.
    pub embedding: f64,
    /// Hue samples per histogram; 0 gives the exact distribution.
    pub histogram_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Width and length of the floor, cm.
    pub room: [f64; 2],
    pub cameras: Vec<FisheyeCamera>,
    pub people: Vec<SyntheticPerson>,
    pub frames: usize,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub seed: u64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
}

fn default_eta() -> f64 {
    DEFAULT_ETA
}

fn default_bins() -> usize {
    DEFAULT_HISTOGRAM_BINS
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ReidError::Config(m));
        if self.cameras.is_empty() {
            return bad("scene has no cameras".into());
        }
        if self.histogram_bins < 2 {
            return bad("histogram_bins must be >= 2".into());
        }
        if !(self.eta >= 0.0 && self.eta < 1.0) {
            return bad(format!("eta must be in [0, 1), got {}", self.eta));
        }
        let n = self.noise;
        if !(n.bbox_center_px >= 0.0 && n.embedding >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        let min_mount = self
            .cameras
            .iter()
            .map(|c| c.mounting_height)
            .fold(f64::INFINITY, f64::min);
        let mut dim = None;
        for p in &self.people {
            if p.trajectory.len() != self.frames {
                return bad(format!(
                    "person {} has {} trajectory points for {} frames",
                    p.identity,
                    p.trajectory.len(),
                    self.frames
                ));
            }
            if !(p.height > 0.0 && self.eta * p.height < min_mount) {
                return bad(format!(
                    "person {} has an impossible height {}",
                    p.identity, p.height
                ));
            }
            if p.embedding_prototype.is_empty() || p.embedding_prototype.iter().all(|v| *v == 0.0) {
                return bad(format!("person {} has a zero embedding prototype", p.identity));
            }
            if *dim.get_or_insert(p.embedding_prototype.len()) != p.embedding_prototype.len() {
                return bad("embedding prototypes differ in dimension".into());
            }
        }
        let mut ids: Vec<&Identity> = self.people.iter().map(|p| &p.identity).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate person identity".into());
        }
        CameraSet::new(self.cameras.iter().cloned())?;
        Ok(())
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| ReidError::parse(path, 0, e.message().to_owned()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene spec always serializes")
    }
}

fn detection_key(cam: &CameraId, frame: usize, id: &Identity) -> String {
    format!("{cam}/{frame}/{id}")
}

/// Renders detections, embeddings, histograms, calibration and an alternating
/// two-fold split. Identical specs give identical datasets.
pub fn render(spec: &SceneSpec) -> Result<Dataset> {
    spec.validate()?;
    let cameras = CameraSet::new(spec.cameras.iter().cloned())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bbox_noise = Normal::new(0.0, spec.noise.bbox_center_px)
        .map_err(|e| ReidError::Config(format!("bbox noise: {e}")))?;
    let emb_noise = Normal::new(0.0, spec.noise.embedding)
        .map_err(|e| ReidError::Config(format!("embedding noise: {e}")))?;

    let exact: Vec<HueHistogram> = spec
        .people
        .iter()
        .map(|p| p.hue.exact_histogram(spec.histogram_bins))
        .collect::<Result<_>>()?;

    let mut detections = Vec::new();
    let mut embeddings = EmbeddingStore::default();
    let mut histograms = HistogramStore::default();

    for frame in 0..spec.frames {
        for cam in &spec.cameras {
            for (person, hist) in spec.people.iter().zip(&exact) {
                let [x, y] = person.trajectory[frame];
                let elevation = spec.eta * person.height;
                let (u, v) = cam.world_to_pixel((x, y), elevation)?;
                if !cam.contains_pixel((u, v)) {
                    continue;
                }
                let (mut cu, mut cv) = (u, v);
                if spec.noise.bbox_center_px > 0.0 {
                    cu += bbox_noise.sample(&mut rng);
                    cv += bbox_noise.sample(&mut rng);
                }
                let [w, h] = cam.image_size;
                cu = cu.clamp(0.0, w as f64);
                cv = cv.clamp(0.0, h as f64);

                // apparent size shrinks with slant range; only cosmetic
                let depth = cam.mounting_height - elevation;
                let slant = (x - cam.position[0]).hypot(y - cam.position[1]).hypot(depth);
                let bbox = BoundingBox::new(
                    cu,
                    cv,
                    (cam.focal * 50.0 / slant).max(1.0),
                    (cam.focal * person.height / slant).max(1.0),
                )?;

                let mut proto = person.embedding_prototype.clone();
                if spec.noise.embedding > 0.0 {
                    for c in &mut proto {
                        *c += emb_noise.sample(&mut rng);
                    }
                }
                let histogram = if spec.noise.histogram_samples > 0 {
                    person.hue.sample_histogram(
                        spec.histogram_bins,
                        spec.noise.histogram_samples,
                        &mut rng,
                    )?
                } else {
                    hist.clone()
                };

                let key = detection_key(&cam.id, frame, &person.identity);
                embeddings.insert(key.clone(), EmbeddingVector::new(proto)?)?;
                histograms.insert(key.clone(), histogram)?;
                detections.push(Detection {
                    camera_id: cam.id.clone(),
                    frame_index: frame as u64,
                    bbox,
                    identity: Some(person.identity.clone()),
                    crop_path: None,
                    histogram_key: Some(key.clone()),
                    embedding_key: Some(key),
                });
            }
        }
    }

    Ok(Dataset {
        cameras,
        detections,
        embeddings,
        histograms,
        folds: Some(FoldSpec::alternating(spec.people.iter().map(|p| &p.identity))),
    })
}

/// Room of 800 x 600 cm seen by three cameras mounted at 300 cm.
pub fn standard_rig() -> ([f64; 2], Vec<FisheyeCamera>) {
    let cam = |id: &str, x: f64, y: f64, yaw: f64| FisheyeCamera {
        id: CameraId::new(id),
        position: [x, y],
        mounting_height: 300.0,
        focal: 250.0,
        principal_point: [400.0, 400.0],
        yaw,
        image_size: [800, 800],
    };
    (
        [800.0, 600.0],
        vec![
            cam("C1", 200.0, 300.0, 0.0),
            cam("C2", 600.0, 300.0, 0.5),
            cam("C3", 400.0, 80.0, -1.2),
        ],
    )
}

/// Parameters of [`random_scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSceneParams {
    pub people: usize,
    pub frames: usize,
    pub seed: u64,
    pub noise: NoiseSpec,
    /// Minimum floor distance between any two people, cm.
    pub min_separation: f64,
    /// Standard deviation of a per-frame step, cm.
    pub step: f64,
    pub height_range: [f64; 2],
    pub embedding_dim: usize,
    pub hue_spread_deg: f64,
}

impl Default for RandomSceneParams {
    fn default() -> Self {
        RandomSceneParams {
            people: 5,
            frames: 100,
            seed: 0,
            noise: NoiseSpec::default(),
            min_separation: 200.0,
            step: 12.0,
            height_range: [155.0, 185.0],
            embedding_dim: 32,
            hue_spread_deg: 12.0,
        }
    }
}

fn random_prototype<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Random walks in the standard rig that keep every pair of people at least
/// `min_separation` apart in every frame.
pub fn random_scene(params: &RandomSceneParams) -> Result<SceneSpec> {
    let (room, cameras) = standard_rig();
    let margin = 40.0;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed_5eed);
    let far_enough = |p: [f64; 2], others: &[[f64; 2]]| {
        others
            .iter()
            .all(|o| (p[0] - o[0]).hypot(p[1] - o[1]) >= params.min_separation)
    };
    let in_room = |p: [f64; 2]| {
        (margin..=room[0] - margin).contains(&p[0]) && (margin..=room[1] - margin).contains(&p[1])
    };

    let mut current: Vec<[f64; 2]> = Vec::with_capacity(params.people);
    for _ in 0..params.people {
        let mut placed = false;
        for _ in 0..10_000 {
            let p = [
                rng.random_range(margin..room[0] - margin),
                rng.random_range(margin..room[1] - margin),
            ];
            if far_enough(p, &current) {
                current.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(ReidError::Config(format!(
                "cannot place {} people {} cm apart in the room",
                params.people, params.min_separation
            )));
        }
    }

    let step = Normal::new(0.0, params.step).map_err(|e| ReidError::Config(format!("step: {e}")))?;
    let mut trajectories: Vec<Vec<[f64; 2]>> = current.iter().map(|p| vec![*p]).collect();
    for _ in 1..params.frames {
        for k in 0..params.people {
            let others: Vec<[f64; 2]> = current
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != k)
                .map(|(_, p)| *p)
                .collect();
            for _ in 0..20 {
                let p = [
                    current[k][0] + step.sample(&mut rng),
                    current[k][1] + step.sample(&mut rng),
                ];
                if in_room(p) && far_enough(p, &others) {
                    current[k] = p;
                    break;
                }
            }
            trajectories[k].push(current[k]);
        }
    }

    let hue_offset = rng.random_range(0.0..360.0);
    let people = trajectories
        .into_iter()
        .enumerate()
        .map(|(k, trajectory)| {
            Ok(SyntheticPerson {
                identity: Identity::new(format!("p{k}"))?,
                trajectory,
                height: rng.random_range(params.height_range[0]..=params.height_range[1]),
                hue: HueProfile {
                    mean_deg: (hue_offset + 360.0 * k as f64 / params.people as f64).rem_euclid(360.0),
                    spread_deg: params.hue_spread_deg,
                },
                embedding_prototype: random_prototype(params.embedding_dim, &mut rng),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SceneSpec {
        room,
        cameras,
        people,
        frames: params.frames,
        noise: params.noise,
        seed: params.seed,
        eta: DEFAULT_ETA,
        histogram_bins: DEFAULT_HISTOGRAM_BINS,
    })
}

/// The three ambiguity situations of cross-view matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Two people walking side by side, dressed differently.
    Location,
    /// Look-alikes walking far apart.
    Appearance,
    /// Both situations in one room.
    Combined,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Location, Scenario::Appearance, Scenario::Combined];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Location => "location",
            Scenario::Appearance => "appearance",
            Scenario::Combined => "combined",
        }
    }

    /// Scene of this scenario with noise drawn from `seed`.
    pub fn spec(self, seed: u64) -> SceneSpec {
        const FRAMES: usize = 24;
        const CLOSE_GAP: f64 = 25.0;
        const TWIN_GAP: f64 = 400.0;
        let (room, cameras) = standard_rig();
        // fixed prototypes, independent of the noise seed
        let mut proto_rng = ChaCha8Rng::seed_from_u64(0xa11ce);
        let dim = 32;
        let distinct_a = random_prototype(dim, &mut proto_rng);
        let distinct_b = random_prototype(dim, &mut proto_rng);
        let twin = random_prototype(dim, &mut proto_rng);

        let lerp = |a: [f64; 2], b: [f64; 2]| -> Vec<[f64; 2]> {
            (0..FRAMES)
                .map(|f| {
                    let t = f as f64 / (FRAMES - 1) as f64;
                    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
                })
                .collect()
        };
        let offset = |path: &[[f64; 2]], d: [f64; 2]| -> Vec<[f64; 2]> {
            path.iter().map(|p| [p[0] + d[0], p[1] + d[1]]).collect()
        };
        let person = |id: &str, trajectory, height, hue, proto: &Vec<f64>| SyntheticPerson {
            identity: Identity::new(id).expect("non-empty"),
            trajectory,
            height,
            hue: HueProfile {
                mean_deg: hue,
                spread_deg: 12.0,
            },
            embedding_prototype: proto.clone(),
        };

        let close_pair = |start: [f64; 2], end: [f64; 2]| {
            let a = lerp(start, end);
            let b = offset(&a, [0.0, CLOSE_GAP]);
            vec![
                person("a", a, 168.0, 10.0, &distinct_a),
                person("b", b, 180.0, 190.0, &distinct_b),
            ]
        };
        let twins = |start: [f64; 2], end: [f64; 2]| {
            let c = lerp(start, end);
            let d = offset(&c, [TWIN_GAP, 0.0]);
            vec![
                person("c", c, 172.0, 100.0, &twin),
                person("d", d, 172.0, 100.0, &twin),
            ]
        };

        let people = match self {
            Scenario::Location => close_pair([120.0, 150.0], [650.0, 420.0]),
            Scenario::Appearance => twins([120.0, 120.0], [260.0, 480.0]),
            Scenario::Combined => {
                let mut p = close_pair([120.0, 120.0], [680.0, 180.0]);
                p.extend(twins([150.0, 360.0], [250.0, 520.0]));
                p
            }
        };
        SceneSpec {
            room,
            cameras,
            people,
            frames: FRAMES,
            noise: NoiseSpec {
                bbox_center_px: 15.0,
                embedding: 0.04,
                histogram_samples: 300,
            },
            seed,
            eta: DEFAULT_ETA,
            histogram_bins: DEFAULT_HISTOGRAM_BINS,
        }
    }

    /// Pipeline settings whose per-feature temperatures put every feature on a
    /// comparable scale for these scenes.
    pub fn pipeline_config() -> PipelineConfig {
        PipelineConfig {
            temperature: FeatureTemperatures {
                dl: Temperature::new(0.05).expect("positive"),
                ch: Temperature::new(0.02).expect("positive"),
                loc: Temperature::new(10.0).expect("positive"),
            },
            ..PipelineConfig::default()
        }
    }
}

/// Location, appearance and combined ambiguity scenes, in that order.
pub fn ambiguity_scenarios() -> Vec<SceneSpec> {
    Scenario::ALL.iter().map(|s| s.spec(0)).collect()
}
