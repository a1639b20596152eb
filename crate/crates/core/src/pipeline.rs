//! End-to-end orchestration: feature lookup, scoring, fusion, matching and
//! evaluation over every camera pair, frame and fold.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::appearance::{
    cosine_similarity_matrix, extract_hue_histogram, hue_dissimilarity_matrix, load_crop, EmbeddingVector,
    HueHistogram, DEFAULT_HISTOGRAM_BINS,
};
use crate::dataset::Dataset;
use crate::error::{ReidError, Result};
use crate::evaluation::{reports_from_records, CameraPair, FoldSpec, FoldedReport, FrameRecord, MatchRecord};
use crate::geometry::{
    location_matrix, HeightSet, LocationMetric, LocationParams, DEFAULT_ETA, DEFAULT_PPD_HEIGHT_CM,
};
use crate::matching::{match_pair, FeatureTemperatures, MatchOptions, Matcher, PairMatch};
use crate::types::{build_sync_pairs, Detection, Feature, ScoreMatrix, SyncFramePair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub features: Vec<Feature>,
    pub loc_metric: LocationMetric,
    pub temperature: FeatureTemperatures,
    pub matcher: Matcher,
    pub fusion_renormalize: bool,
    /// Let greedy pair through zero probabilities instead of stopping.
    pub allow_zero_pairs: bool,
    /// Elevation of the bbox center as a fraction of the assumed height.
    pub eta: f64,
    pub histogram_bins: usize,
    pub ppd_height: f64,
    pub cbd_heights: HeightSet,
    /// Fold file overriding the dataset's own split.
    pub folds: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            features: Feature::ALL.to_vec(),
            loc_metric: LocationMetric::Ppd,
            temperature: FeatureTemperatures::default(),
            matcher: Matcher::Greedy,
            fusion_renormalize: false,
            allow_zero_pairs: false,
            eta: DEFAULT_ETA,
            histogram_bins: DEFAULT_HISTOGRAM_BINS,
            ppd_height: DEFAULT_PPD_HEIGHT_CM,
            cbd_heights: HeightSet::cbd_default(),
            folds: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let config: PipelineConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].lines().count().max(1))
                .unwrap_or(0);
            ReidError::parse(path, line, e.message().to_owned())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ReidError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn with_features(&self, features: &[Feature]) -> Self {
        PipelineConfig {
            features: features.to_vec(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(ReidError::Config("at least one feature must be enabled".into()));
        }
        let mut f = self.features.clone();
        f.sort();
        f.dedup();
        if f.len() != self.features.len() {
            return Err(ReidError::Config("feature listed twice".into()));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0 && self.eta < 1.0) {
            return Err(ReidError::Config(format!(
                "eta must be in [0, 1), got {}",
                self.eta
            )));
        }
        if self.histogram_bins < 2 {
            return Err(ReidError::Config("histogram_bins must be >= 2".into()));
        }
        if !(self.ppd_height.is_finite() && self.ppd_height > 0.0) {
            return Err(ReidError::Config("ppd_height must be positive".into()));
        }
        Ok(())
    }

    fn has(&self, feature: Feature) -> bool {
        self.features.contains(&feature)
    }

    /// Row label such as `DL+CH+LOC/PPD`.
    pub fn combination_label(&self) -> String {
        Feature::ALL
            .iter()
            .filter(|f| self.has(**f))
            .map(|f| match f {
                Feature::Loc => format!("LOC/{}", self.loc_metric),
                other => other.name().to_owned(),
            })
            .collect::<Vec<_>>()
            .join("+")
    }

    pub fn match_options(&self) -> MatchOptions {
        MatchOptions {
            temperatures: self.temperature,
            renormalize: self.fusion_renormalize,
            matcher: self.matcher,
            allow_zero_pairs: self.allow_zero_pairs,
        }
    }

    pub fn location_params(&self) -> LocationParams {
        LocationParams {
            metric: self.loc_metric,
            ppd_height: self.ppd_height,
            cbd_heights: self.cbd_heights.clone(),
            eta: self.eta,
        }
    }
}

/// The seven feature combinations of an ablation table, singles first.
pub fn all_combinations() -> Vec<Vec<Feature>> {
    use Feature::*;
    vec![
        vec![Dl],
        vec![Ch],
        vec![Loc],
        vec![Dl, Ch],
        vec![Ch, Loc],
        vec![Dl, Loc],
        vec![Dl, Ch, Loc],
    ]
}

/// Resolved per-detection features for one configuration.
pub struct FeatureIndex<'a> {
    dataset: &'a Dataset,
    config: &'a PipelineConfig,
    crop_histograms: HashMap<PathBuf, HueHistogram>,
}

impl<'a> FeatureIndex<'a> {
    /// Checks that every detection has what the enabled features need and
    /// extracts histograms from crop images.
    pub fn build(dataset: &'a Dataset, config: &'a PipelineConfig) -> Result<Self> {
        config.validate()?;
        for (n, d) in dataset.detections.iter().enumerate() {
            let whose = || format!("detection #{} ({})", n + 1, d.describe());
            if config.has(Feature::Dl) {
                let key = d
                    .embedding_key
                    .as_deref()
                    .ok_or_else(|| ReidError::Ingestion(format!("{} has no embedding_key", whose())))?;
                if dataset.embeddings.get(key).is_none() {
                    return Err(ReidError::Ingestion(format!(
                        "{}: embedding key `{key}` not found",
                        whose()
                    )));
                }
            }
            if config.has(Feature::Ch) {
                match (&d.histogram_key, &d.crop_path) {
                    (Some(key), _) => {
                        if dataset.histograms.get(key).is_none() {
                            return Err(ReidError::Ingestion(format!(
                                "{}: histogram key `{key}` not found",
                                whose()
                            )));
                        }
                    }
                    (None, Some(_)) => {}
                    (None, None) => {
                        return Err(ReidError::Ingestion(format!(
                            "{} has neither a crop nor a histogram",
                            whose()
                        )))
                    }
                }
            }
            if config.has(Feature::Loc) {
                dataset.cameras.get(&d.camera_id).map_err(|_| {
                    ReidError::Config(format!("{}: camera {} is not calibrated", whose(), d.camera_id))
                })?;
            }
        }

        let mut crop_histograms = HashMap::new();
        if config.has(Feature::Ch) {
            let mut crops: Vec<&PathBuf> = dataset
                .detections
                .iter()
                .filter(|d| d.histogram_key.is_none())
                .filter_map(|d| d.crop_path.as_ref())
                .collect();
            crops.sort();
            crops.dedup();
            let extracted = crops
                .par_iter()
                .map(|p| {
                    let pixels = load_crop(p)?;
                    Ok((
                        (*p).clone(),
                        extract_hue_histogram(&pixels, config.histogram_bins)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            crop_histograms.extend(extracted);
        }
        Ok(FeatureIndex {
            dataset,
            config,
            crop_histograms,
        })
    }

    fn embedding(&self, d: &Detection) -> Result<&'a EmbeddingVector> {
        d.embedding_key
            .as_deref()
            .and_then(|k| self.dataset.embeddings.get(k))
            .ok_or_else(|| ReidError::Ingestion(format!("{} has no embedding", d.describe())))
    }

    fn histogram(&self, d: &Detection) -> Result<&HueHistogram> {
        let found = match (&d.histogram_key, &d.crop_path) {
            (Some(k), _) => self.dataset.histograms.get(k),
            (None, Some(p)) => self.crop_histograms.get(p),
            (None, None) => None,
        };
        found.ok_or_else(|| ReidError::Ingestion(format!("{} has no histogram", d.describe())))
    }

    /// One score matrix per enabled feature, in DL, CH, LOC order.
    pub fn score_matrices(&self, pair: &SyncFramePair) -> Result<Vec<ScoreMatrix>> {
        let mut out = Vec::with_capacity(3);
        for feature in Feature::ALL.into_iter().filter(|f| self.config.has(*f)) {
            let m = match feature {
                Feature::Dl => {
                    let q = pair
                        .query_dets
                        .iter()
                        .map(|d| self.embedding(d))
                        .collect::<Result<Vec<_>>>()?;
                    let g = pair
                        .gallery_dets
                        .iter()
                        .map(|d| self.embedding(d))
                        .collect::<Result<Vec<_>>>()?;
                    cosine_similarity_matrix(&q, &g)?
                }
                Feature::Ch => {
                    let q = pair
                        .query_dets
                        .iter()
                        .map(|d| self.histogram(d))
                        .collect::<Result<Vec<_>>>()?;
                    let g = pair
                        .gallery_dets
                        .iter()
                        .map(|d| self.histogram(d))
                        .collect::<Result<Vec<_>>>()?;
                    hue_dissimilarity_matrix(&q, &g)?
                }
                Feature::Loc => location_matrix(pair, &self.dataset.cameras, &self.config.location_params())?,
            };
            out.push(m);
        }
        Ok(out)
    }

    pub fn match_frame(&self, pair: &SyncFramePair) -> Result<PairMatch> {
        let scores = self.score_matrices(pair)?;
        match_pair(&scores, &self.config.match_options())
    }
}

/// Unordered camera pairs of the dataset, lower id as query.
pub fn camera_pairs(dataset: &Dataset) -> Vec<CameraPair> {
    let ids = dataset.camera_ids();
    let mut out = Vec::new();
    for (i, a) in ids.iter().enumerate() {
        for b in &ids[i + 1..] {
            out.push(CameraPair::new(a.clone(), b.clone()));
        }
    }
    out
}

fn frame_record(
    pair: &SyncFramePair,
    outcome: &PairMatch,
    fold: u32,
    combination: &str,
) -> Result<FrameRecord> {
    let ids = |dets: &[Detection]| {
        dets.iter()
            .map(|d| {
                d.identity.clone().ok_or_else(|| {
                    ReidError::Evaluation(format!("missing ground truth for {}", d.describe()))
                })
            })
            .collect::<Result<Vec<_>>>()
    };
    let probs = outcome.query_major();
    Ok(FrameRecord {
        combination: combination.to_owned(),
        fold,
        frame: pair.frame_index,
        query_cam: pair.query_cam.clone(),
        gallery_cam: pair.gallery_cam.clone(),
        orientation: outcome.matching.orientation,
        log_probability: outcome.matching.log_probability,
        query_ids: ids(&pair.query_dets)?,
        gallery_ids: ids(&pair.gallery_dets)?,
        matches: outcome
            .matching
            .pairs
            .iter()
            .map(|&(q, g)| MatchRecord {
                query: q,
                gallery: g,
                probability: probs[[q, g]],
            })
            .collect(),
        rankings: outcome.rankings(),
    })
}

/// Runs one configuration over every fold, camera pair and frame.
///
/// Without a fold split every identity is evaluated in fold 0.
pub fn evaluate_folds(
    dataset: &Dataset,
    folds: Option<&FoldSpec>,
    config: &PipelineConfig,
) -> Result<(FoldedReport, Vec<FrameRecord>)> {
    let index = FeatureIndex::build(dataset, config)?;
    let label = config.combination_label();

    for d in &dataset.detections {
        let id = d
            .identity
            .as_ref()
            .ok_or_else(|| ReidError::Evaluation(format!("missing ground truth for {}", d.describe())))?;
        if let Some(f) = folds {
            f.fold_of(id)?;
        }
    }
    let fold_ids: Vec<u32> = match folds {
        Some(f) => f.folds().into_iter().collect(),
        None => vec![0],
    };

    let mut sync_pairs = Vec::new();
    for cp in camera_pairs(dataset) {
        sync_pairs.extend(build_sync_pairs(&dataset.detections, &cp.query, &cp.gallery)?);
    }

    let mut records = Vec::new();
    for fold in fold_ids {
        let fold_records = sync_pairs
            .par_iter()
            .map(|pair| {
                let restricted = match folds {
                    Some(f) => pair.restrict(|id| f.fold_of(id).map(|x| x == fold).unwrap_or(false))?,
                    None => pair.clone(),
                };
                let outcome = index.match_frame(&restricted)?;
                frame_record(&restricted, &outcome, fold, &label)
            })
            .collect::<Result<Vec<_>>>()?;
        records.extend(fold_records);
    }

    let mut report = FoldedReport::default();
    for r in &records {
        report.add_frame(r)?;
    }
    Ok((report, records))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOutput {
    pub records: Vec<FrameRecord>,
    pub reports: Vec<(String, FoldedReport)>,
}

/// Evaluates each configuration (one report row each) over the dataset.
pub fn run(dataset: &Dataset, configs: &[PipelineConfig]) -> Result<RunOutput> {
    let mut records = Vec::new();
    for config in configs {
        let fold_file = match &config.folds {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| ReidError::io(p, e))?;
                Some(FoldSpec::parse(&text, p)?)
            }
            None => None,
        };
        let folds = fold_file.as_ref().or(dataset.folds.as_ref());
        let (_, recs) = evaluate_folds(dataset, folds, config)?;
        records.extend(recs);
    }
    let reports = reports_from_records(&records)?;
    Ok(RunOutput { records, reports })
}

pub fn format_records(records: &[FrameRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records always serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_records(text: &str, path: &Path) -> Result<Vec<FrameRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| ReidError::parse(path, n + 1, e.to_string())))
        .collect()
}

fn write_matrix(out: &mut String, title: &str, m: &ndarray::Array2<f64>) {
    writeln!(out, "{title} ({}x{})", m.nrows(), m.ncols()).unwrap();
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>12.6e}")).collect();
        writeln!(out, "  {}", cells.join(" ")).unwrap();
    }
}

/// Human-readable dump of one frame pair: raw scores, fused probabilities and
/// the chosen matching.
pub fn describe_frame(dataset: &Dataset, config: &PipelineConfig, pair: &SyncFramePair) -> Result<String> {
    let index = FeatureIndex::build(dataset, config)?;
    let scores = index.score_matrices(pair)?;
    let outcome = match_pair(&scores, &config.match_options())?;
    let mut out = String::new();
    writeln!(
        out,
        "frame {} query {} ({} detections) gallery {} ({} detections)",
        pair.frame_index,
        pair.query_cam,
        pair.query_dets.len(),
        pair.gallery_cam,
        pair.gallery_dets.len()
    )
    .unwrap();
    let label = |d: &Detection| {
        d.identity
            .as_ref()
            .map(|i| i.to_string())
            .unwrap_or_else(|| "?".into())
    };
    let q: Vec<String> = pair.query_dets.iter().map(label).collect();
    let g: Vec<String> = pair.gallery_dets.iter().map(label).collect();
    writeln!(out, "query identities: {}", q.join(" ")).unwrap();
    writeln!(out, "gallery identities: {}", g.join(" ")).unwrap();
    for s in &scores {
        write_matrix(
            &mut out,
            &format!("{} {:?} scores", s.feature(), s.polarity()),
            s.values(),
        );
    }
    write_matrix(
        &mut out,
        "fused match probabilities (query rows)",
        &outcome.query_major(),
    );
    writeln!(
        out,
        "orientation {:?}, log probability {}",
        outcome.matching.orientation, outcome.matching.log_probability
    )
    .unwrap();
    let probs = outcome.query_major();
    for &(qi, gi) in &outcome.matching.pairs {
        writeln!(out, "  {} -> {}  p = {:.6e}", q[qi], g[gi], probs[[qi, gi]]).unwrap();
    }
    Ok(out)
}
