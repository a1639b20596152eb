//! Scoring predicted matchings against ground truth.
//!
//! QMS counts correctly matched queries over the number of possible correct
//! matches `sum_n |Q_n ∩ G_n|`. mAP is the mean reciprocal rank of the single
//! correct gallery element over queries that have one.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{ReidError, Result};
use crate::fusion::Orientation;
use crate::types::{CameraId, Identity};

/// Ordered camera pair; the first camera plays the query role.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CameraPair {
    pub query: CameraId,
    pub gallery: CameraId,
}

impl CameraPair {
    pub fn new(query: CameraId, gallery: CameraId) -> Self {
        CameraPair { query, gallery }
    }
}

impl fmt::Display for CameraPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}", self.query, self.gallery)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QmsCounts {
    pub correct: usize,
    pub possible: usize,
}

impl QmsCounts {
    /// `correct / possible`, or 0 when nothing was possible.
    pub fn value(&self) -> f64 {
        if self.possible == 0 {
            0.0
        } else {
            self.correct as f64 / self.possible as f64
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.possible == 0
    }
}

fn check_unique<'a>(ids: &'a [Identity], side: &str) -> Result<BTreeSet<&'a Identity>> {
    let mut set = BTreeSet::new();
    for id in ids {
        if !set.insert(id) {
            return Err(ReidError::Evaluation(format!(
                "identity {id} appears twice on the {side} side of one frame"
            )));
        }
    }
    Ok(set)
}

/// QMS counts for one frame. `pairs` are `(query index, gallery index)`.
pub fn frame_qms_counts(
    query_ids: &[Identity],
    gallery_ids: &[Identity],
    pairs: &[(usize, usize)],
) -> Result<QmsCounts> {
    let q = check_unique(query_ids, "query")?;
    let g = check_unique(gallery_ids, "gallery")?;
    let mut correct = 0;
    for &(qi, gi) in pairs {
        let (qid, gid) = match (query_ids.get(qi), gallery_ids.get(gi)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(ReidError::Evaluation(format!(
                    "predicted pair ({qi}, {gi}) out of range"
                )))
            }
        };
        if qid == gid {
            correct += 1;
        }
    }
    Ok(QmsCounts {
        correct,
        possible: q.intersection(&g).count(),
    })
}

/// One frame's ground truth and predicted pairs.
#[derive(Debug, Clone, Copy)]
pub struct FramePrediction<'a> {
    pub query_ids: &'a [Identity],
    pub gallery_ids: &'a [Identity],
    pub pairs: &'a [(usize, usize)],
}

/// Query matching score over a sequence of frames.
pub fn qms(frames: &[FramePrediction<'_>]) -> Result<QmsCounts> {
    let mut total = QmsCounts::default();
    for f in frames {
        let c = frame_qms_counts(f.query_ids, f.gallery_ids, f.pairs)?;
        total.correct += c.correct;
        total.possible += c.possible;
    }
    Ok(total)
}

/// Gallery ranking for one query and the index of its true match, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedQuery {
    pub ranking: Vec<usize>,
    pub correct: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ApSum {
    pub sum: f64,
    pub queries: usize,
}

impl ApSum {
    pub fn value(&self) -> f64 {
        if self.queries == 0 {
            0.0
        } else {
            self.sum / self.queries as f64
        }
    }
}

/// Reciprocal rank of `correct` in `ranking` (1-based rank).
pub fn average_precision(ranking: &[usize], correct: usize) -> Result<f64> {
    ranking
        .iter()
        .position(|&j| j == correct)
        .map(|pos| 1.0 / (pos + 1) as f64)
        .ok_or_else(|| ReidError::Evaluation(format!("correct gallery index {correct} missing from ranking")))
}

/// Mean AP over queries that have a match; the others are skipped.
pub fn mean_average_precision(queries: &[RankedQuery]) -> Result<ApSum> {
    let mut acc = ApSum::default();
    for q in queries {
        if let Some(c) = q.correct {
            acc.sum += average_precision(&q.ranking, c)?;
            acc.queries += 1;
        }
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairStats {
    pub qms: QmsCounts,
    pub ap: ApSum,
}

impl PairStats {
    pub fn merge(&mut self, other: &PairStats) {
        self.qms.correct += other.qms.correct;
        self.qms.possible += other.qms.possible;
        self.ap.sum += other.ap.sum;
        self.ap.queries += other.ap.queries;
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub per_pair: BTreeMap<CameraPair, PairStats>,
}

impl EvalReport {
    /// Totals over camera pairs, accumulated in pair order.
    pub fn cumulative(&self) -> PairStats {
        let mut total = PairStats::default();
        for s in self.per_pair.values() {
            total.merge(s);
        }
        total
    }

    pub fn add_frame(&mut self, rec: &FrameRecord) -> Result<()> {
        let stats = rec.stats()?;
        self.per_pair
            .entry(CameraPair::new(rec.query_cam.clone(), rec.gallery_cam.clone()))
            .or_default()
            .merge(&stats);
        Ok(())
    }

    pub fn merge(&mut self, other: &EvalReport) {
        for (pair, s) in &other.per_pair {
            self.per_pair.entry(pair.clone()).or_default().merge(s);
        }
    }
}

/// Reports of every fold plus their pooled counts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FoldedReport {
    pub folds: BTreeMap<u32, EvalReport>,
}

impl FoldedReport {
    pub fn pooled(&self) -> EvalReport {
        let mut pooled = EvalReport::default();
        for r in self.folds.values() {
            pooled.merge(r);
        }
        pooled
    }

    pub fn add_frame(&mut self, rec: &FrameRecord) -> Result<()> {
        self.folds.entry(rec.fold).or_default().add_frame(rec)
    }
}

/// Folded reports per feature combination, in first-seen order.
pub fn reports_from_records(records: &[FrameRecord]) -> Result<Vec<(String, FoldedReport)>> {
    let mut out: Vec<(String, FoldedReport)> = Vec::new();
    for rec in records {
        let idx = match out.iter().position(|(c, _)| c == &rec.combination) {
            Some(i) => i,
            None => {
                out.push((rec.combination.clone(), FoldedReport::default()));
                out.len() - 1
            }
        };
        out[idx].1.add_frame(rec)?;
    }
    Ok(out)
}

/// Identity to fold assignment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FoldSpec {
    assignments: BTreeMap<Identity, u32>,
}

impl FoldSpec {
    pub fn new(assignments: BTreeMap<Identity, u32>) -> Self {
        FoldSpec { assignments }
    }

    /// Alternating split of `ids` (in the given order) into folds 0 and 1.
    pub fn alternating<'a>(ids: impl IntoIterator<Item = &'a Identity>) -> Self {
        FoldSpec {
            assignments: ids
                .into_iter()
                .enumerate()
                .map(|(i, id)| (id.clone(), (i % 2) as u32))
                .collect(),
        }
    }

    pub fn fold_of(&self, id: &Identity) -> Result<u32> {
        self.assignments
            .get(id)
            .copied()
            .ok_or_else(|| ReidError::Evaluation(format!("identity {id} has no fold assignment")))
    }

    pub fn folds(&self) -> BTreeSet<u32> {
        self.assignments.values().copied().collect()
    }

    pub fn assignments(&self) -> &BTreeMap<Identity, u32> {
        &self.assignments
    }

    /// Parses `identity fold` lines; `#` starts a comment.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut assignments = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(id), Some(fold), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(ReidError::parse(path, n + 1, "expected `identity fold`"));
            };
            let fold: u32 = fold
                .parse()
                .map_err(|e| ReidError::parse(path, n + 1, format!("bad fold index: {e}")))?;
            let id = Identity::new(id).map_err(|e| ReidError::parse(path, n + 1, e.to_string()))?;
            if assignments.insert(id.clone(), fold).is_some() {
                return Err(ReidError::parse(
                    path,
                    n + 1,
                    format!("identity {id} listed twice"),
                ));
            }
        }
        Ok(FoldSpec { assignments })
    }

    pub fn to_text(&self) -> String {
        self.assignments
            .iter()
            .map(|(id, f)| format!("{id} {f}\n"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub query: usize,
    pub gallery: usize,
    pub probability: f64,
}

/// Matching outcome of one frame pair, as written to the records file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub combination: String,
    pub fold: u32,
    pub frame: u64,
    pub query_cam: CameraId,
    pub gallery_cam: CameraId,
    pub orientation: Orientation,
    #[serde(serialize_with = "ser_log_prob", deserialize_with = "de_log_prob")]
    pub log_probability: f64,
    pub query_ids: Vec<Identity>,
    pub gallery_ids: Vec<Identity>,
    pub matches: Vec<MatchRecord>,
    /// Gallery indices per query, best first.
    pub rankings: Vec<Vec<usize>>,
}

// JSON has no infinities; a matching through a zero probability is stored as null.
fn ser_log_prob<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn de_log_prob<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
}

impl FrameRecord {
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.matches.iter().map(|m| (m.query, m.gallery)).collect()
    }

    /// QMS and AP contributions of this frame.
    pub fn stats(&self) -> Result<PairStats> {
        let qms = frame_qms_counts(&self.query_ids, &self.gallery_ids, &self.pairs())?;
        if self.rankings.len() != self.query_ids.len() {
            return Err(ReidError::Evaluation(format!(
                "frame {}: {} rankings for {} queries",
                self.frame,
                self.rankings.len(),
                self.query_ids.len()
            )));
        }
        let queries: Vec<RankedQuery> = self
            .rankings
            .iter()
            .zip(&self.query_ids)
            .map(|(ranking, qid)| RankedQuery {
                ranking: ranking.clone(),
                correct: self.gallery_ids.iter().position(|g| g == qid),
            })
            .collect();
        let ap = mean_average_precision(&queries)?;
        Ok(PairStats { qms, ap })
    }
}
