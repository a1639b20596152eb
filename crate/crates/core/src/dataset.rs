//! On-disk dataset formats.
//!
//! A dataset directory holds up to five files:
//!
//! | file               | content                                                    |
//! | ------------------ | ---------------------------------------------------------- |
//! | `detections.jsonl` | one JSON object per line, see [`DetectionRecord`]          |
//! | `cameras.toml`     | `[[camera]]` tables, see [`FisheyeCamera`]                 |
//! | `embeddings.txt`   | `dim <D>` header, then `<key> <v1> ... <vD>` per line      |
//! | `histograms.txt`   | `bins <B>` header, then `<key> <pixels> <p1> ... <pB>`     |
//! | `folds.txt`        | `<identity> <fold>` per line                               |
//!
//! Blank lines and lines starting with `#` are ignored in the text stores.
//! Floats are written in shortest round-trip form, so a dataset written and
//! read back is bit-identical in memory.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::appearance::{EmbeddingVector, HueHistogram};
use crate::error::{ReidError, Result};
use crate::evaluation::FoldSpec;
use crate::geometry::{CameraSet, FisheyeCamera};
use crate::types::{BoundingBox, CameraId, Detection, Identity};

pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const CAMERAS_FILE: &str = "cameras.toml";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const HISTOGRAMS_FILE: &str = "histograms.txt";
pub const FOLDS_FILE: &str = "folds.txt";

/// One line of `detections.jsonl`.
///
/// ```json
/// {"frame":0,"camera":"C1","cx":412.5,"cy":380.0,"w":38.0,"h":91.0,"identity":"p3","embedding_key":"C1/0/p3"}
/// ```
///
/// `identity`, `embedding_key`, `histogram_key` and `crop` are optional.
/// `crop` is an image path, relative paths resolve against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub frame: u64,
    pub camera: String,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histogram_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<PathBuf>,
}

impl DetectionRecord {
    fn into_detection(self, base: &Path) -> Result<Detection> {
        let bbox = BoundingBox::new(self.cx, self.cy, self.w, self.h)?;
        if self.camera.is_empty() {
            return Err(ReidError::Ingestion("empty camera id".into()));
        }
        Ok(Detection {
            camera_id: CameraId::new(self.camera),
            frame_index: self.frame,
            bbox,
            identity: self.identity.map(Identity::new).transpose()?,
            crop_path: self.crop.map(|p| if p.is_relative() { base.join(p) } else { p }),
            histogram_key: self.histogram_key,
            embedding_key: self.embedding_key,
        })
    }

    fn from_detection(d: &Detection) -> Self {
        DetectionRecord {
            frame: d.frame_index,
            camera: d.camera_id.0.clone(),
            cx: d.bbox.cx,
            cy: d.bbox.cy,
            w: d.bbox.w,
            h: d.bbox.h,
            identity: d.identity.as_ref().map(|i| i.as_str().to_owned()),
            embedding_key: d.embedding_key.clone(),
            histogram_key: d.histogram_key.clone(),
            crop: d.crop_path.clone(),
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| ReidError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| ReidError::io(path, e))
}

/// Parses detection records, rejecting duplicate `(frame, camera, identity)` triples.
pub fn parse_annotations(text: &str, path: &Path) -> Result<Vec<Detection>> {
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut seen: HashSet<(u64, CameraId, Identity)> = HashSet::new();
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let record: DetectionRecord =
            serde_json::from_str(line).map_err(|e| ReidError::parse(path, n + 1, e.to_string()))?;
        let det = record
            .into_detection(base)
            .map_err(|e| ReidError::parse(path, n + 1, e.to_string()))?;
        if let Some(id) = &det.identity {
            if !seen.insert((det.frame_index, det.camera_id.clone(), id.clone())) {
                return Err(ReidError::Ingestion(format!(
                    "{}:{}: duplicate identity {id} in frame {} camera {}",
                    path.display(),
                    n + 1,
                    det.frame_index,
                    det.camera_id
                )));
            }
        }
        out.push(det);
    }
    if out.is_empty() {
        log::warn!("{}: no detections", path.display());
    }
    Ok(out)
}

pub fn ingest_annotations(path: &Path) -> Result<Vec<Detection>> {
    parse_annotations(&read_text(path)?, path)
}

pub fn format_annotations(detections: &[Detection]) -> String {
    let mut out = String::new();
    for d in detections {
        let line = serde_json::to_string(&DetectionRecord::from_detection(d))
            .expect("detection records always serialize");
        out.push_str(&line);
        out.push('\n');
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationFile {
    #[serde(default)]
    camera: Vec<FisheyeCamera>,
}

pub fn parse_calibration(text: &str, path: &Path) -> Result<CameraSet> {
    let file: CalibrationFile = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start].lines().count().max(1))
            .unwrap_or(0);
        ReidError::parse(path, line, e.message().to_owned())
    })?;
    CameraSet::new(file.camera)
}

pub fn format_calibration(cams: &CameraSet) -> String {
    let file = CalibrationFile {
        camera: cams.iter().cloned().collect(),
    };
    toml::to_string(&file).expect("calibration always serializes")
}

/// Line number and whitespace-separated fields.
type StoreRow<'a> = (usize, Vec<&'a str>);

/// Splits a store file into its header value and data lines.
fn store_lines<'a>(text: &'a str, path: &Path, header: &str) -> Result<(Option<usize>, Vec<StoreRow<'a>>)> {
    let mut width = None;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if width.is_none() {
            if fields.len() != 2 || fields[0] != header {
                return Err(ReidError::parse(
                    path,
                    n + 1,
                    format!("expected `{header} <n>` header"),
                ));
            }
            let w: usize = fields[1]
                .parse()
                .map_err(|e| ReidError::parse(path, n + 1, format!("bad {header}: {e}")))?;
            if w == 0 {
                return Err(ReidError::parse(
                    path,
                    n + 1,
                    format!("{header} must be positive"),
                ));
            }
            width = Some(w);
            continue;
        }
        rows.push((n + 1, fields));
    }
    Ok((width, rows))
}

fn parse_floats(fields: &[&str], path: &Path, line: usize) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .map_err(|e| ReidError::parse(path, line, format!("bad number `{f}`: {e}")))
        })
        .collect()
}

fn check_key(key: &str) -> Result<()> {
    if key.is_empty() || key.contains(char::is_whitespace) || key.starts_with('#') {
        return Err(ReidError::Ingestion(format!("invalid store key `{key}`")));
    }
    Ok(())
}

/// Embeddings keyed by detection key, all of one dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    dim: Option<usize>,
    entries: BTreeMap<String, EmbeddingVector>,
}

impl EmbeddingStore {
    pub fn insert(&mut self, key: impl Into<String>, v: EmbeddingVector) -> Result<()> {
        let key = key.into();
        check_key(&key)?;
        match self.dim {
            Some(d) if d != v.dim() => {
                return Err(ReidError::Feature(format!(
                    "embedding `{key}` has dimension {} but the store holds {d}",
                    v.dim()
                )))
            }
            _ => self.dim = Some(v.dim()),
        }
        if self.entries.insert(key.clone(), v).is_some() {
            return Err(ReidError::Ingestion(format!("duplicate embedding key `{key}`")));
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&EmbeddingVector> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let (dim, rows) = store_lines(text, path, "dim")?;
        let mut store = EmbeddingStore::default();
        for (line, fields) in rows {
            let dim = dim.expect("header precedes rows");
            if fields.len() != dim + 1 {
                return Err(ReidError::parse(
                    path,
                    line,
                    format!("expected key and {dim} values, got {} fields", fields.len()),
                ));
            }
            let values = parse_floats(&fields[1..], path, line)?;
            let v = EmbeddingVector::new(values).map_err(|e| ReidError::parse(path, line, e.to_string()))?;
            store
                .insert(fields[0], v)
                .map_err(|e| ReidError::parse(path, line, e.to_string()))?;
        }
        Ok(store)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(d) = self.dim {
            writeln!(out, "dim {d}").unwrap();
        }
        for (k, v) in &self.entries {
            out.push_str(k);
            for x in v.values() {
                write!(out, " {x}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Hue histograms keyed by detection key, all with one bin count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HistogramStore {
    bins: Option<usize>,
    entries: BTreeMap<String, HueHistogram>,
}

impl HistogramStore {
    pub fn insert(&mut self, key: impl Into<String>, h: HueHistogram) -> Result<()> {
        let key = key.into();
        check_key(&key)?;
        match self.bins {
            Some(b) if b != h.len() => {
                return Err(ReidError::Feature(format!(
                    "histogram `{key}` has {} bins but the store holds {b}",
                    h.len()
                )))
            }
            _ => self.bins = Some(h.len()),
        }
        if self.entries.insert(key.clone(), h).is_some() {
            return Err(ReidError::Ingestion(format!("duplicate histogram key `{key}`")));
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&HueHistogram> {
        self.entries.get(key)
    }

    pub fn bins(&self) -> Option<usize> {
        self.bins
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let (bins, rows) = store_lines(text, path, "bins")?;
        let mut store = HistogramStore::default();
        for (line, fields) in rows {
            let bins = bins.expect("header precedes rows");
            if fields.len() != bins + 2 {
                return Err(ReidError::parse(
                    path,
                    line,
                    format!(
                        "expected key, pixel count and {bins} bins, got {} fields",
                        fields.len()
                    ),
                ));
            }
            let pixels: usize = fields[1]
                .parse()
                .map_err(|e| ReidError::parse(path, line, format!("bad pixel count: {e}")))?;
            let probs = parse_floats(&fields[2..], path, line)?;
            let h = HueHistogram::from_probabilities(probs, pixels)
                .map_err(|e| ReidError::parse(path, line, e.to_string()))?;
            store
                .insert(fields[0], h)
                .map_err(|e| ReidError::parse(path, line, e.to_string()))?;
        }
        Ok(store)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(b) = self.bins {
            writeln!(out, "bins {b}").unwrap();
        }
        for (k, h) in &self.entries {
            write!(out, "{k} {}", h.pixel_count()).unwrap();
            for x in h.bins() {
                write!(out, " {x}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Everything the pipeline consumes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub cameras: CameraSet,
    pub detections: Vec<Detection>,
    pub embeddings: EmbeddingStore,
    pub histograms: HistogramStore,
    pub folds: Option<FoldSpec>,
}

/// Locations of dataset files. Only `detections` is required.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetPaths {
    pub detections: PathBuf,
    pub cameras: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub histograms: Option<PathBuf>,
    pub folds: Option<PathBuf>,
}

impl DatasetPaths {
    /// Standard file names inside `dir`; optional files are used when present.
    pub fn in_dir(dir: &Path) -> Self {
        let opt = |name: &str| {
            let p = dir.join(name);
            p.exists().then_some(p)
        };
        DatasetPaths {
            detections: dir.join(DETECTIONS_FILE),
            cameras: opt(CAMERAS_FILE),
            embeddings: opt(EMBEDDINGS_FILE),
            histograms: opt(HISTOGRAMS_FILE),
            folds: opt(FOLDS_FILE),
        }
    }
}

impl Dataset {
    pub fn load(paths: &DatasetPaths) -> Result<Self> {
        let mut detections = ingest_annotations(&paths.detections)?;
        let cameras = match &paths.cameras {
            Some(p) => parse_calibration(&read_text(p)?, p)?,
            None => CameraSet::default(),
        };
        let embeddings = match &paths.embeddings {
            Some(p) => EmbeddingStore::parse(&read_text(p)?, p)?,
            None => EmbeddingStore::default(),
        };
        let histograms = match &paths.histograms {
            Some(p) => HistogramStore::parse(&read_text(p)?, p)?,
            None => HistogramStore::default(),
        };
        let folds = match &paths.folds {
            Some(p) => Some(FoldSpec::parse(&read_text(p)?, p)?),
            None => None,
        };
        for d in &mut detections {
            if let Ok(cam) = cameras.get(&d.camera_id) {
                d.bbox
                    .clamp_center(cam.image_size[0] as f64, cam.image_size[1] as f64);
            }
        }
        Ok(Dataset {
            cameras,
            detections,
            embeddings,
            histograms,
            folds,
        })
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        Self::load(&DatasetPaths::in_dir(dir))
    }

    /// Writes every non-empty part under the standard names in `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| ReidError::io(dir, e))?;
        write_text(&dir.join(DETECTIONS_FILE), &format_annotations(&self.detections))?;
        if !self.cameras.is_empty() {
            write_text(&dir.join(CAMERAS_FILE), &format_calibration(&self.cameras))?;
        }
        if !self.embeddings.is_empty() {
            write_text(&dir.join(EMBEDDINGS_FILE), &self.embeddings.to_text())?;
        }
        if !self.histograms.is_empty() {
            write_text(&dir.join(HISTOGRAMS_FILE), &self.histograms.to_text())?;
        }
        if let Some(f) = &self.folds {
            write_text(&dir.join(FOLDS_FILE), &f.to_text())?;
        }
        Ok(())
    }

    /// Camera ids from the calibration, or from the detections when uncalibrated.
    pub fn camera_ids(&self) -> Vec<CameraId> {
        if !self.cameras.is_empty() {
            return self.cameras.ids().cloned().collect();
        }
        let mut ids: Vec<CameraId> = self.detections.iter().map(|d| d.camera_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Distinct identities in first-seen order.
    pub fn identities(&self) -> Vec<Identity> {
        let mut seen = HashSet::new();
        self.detections
            .iter()
            .filter_map(|d| d.identity.clone())
            .filter(|id| seen.insert(id.clone()))
            .collect()
    }
}
