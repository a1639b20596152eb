//! Identity matching over fused match-probability matrices.

use std::cmp::Ordering;
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{ReidError, Result};
use crate::fusion::{fuse, normalize, MatchProbabilityMatrix, Orientation, Temperature};
use crate::types::{Feature, ScoreMatrix};

/// Injective pairing between rows and columns of a probability matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    /// Sum of `ln p` over the selected pairs.
    pub log_probability: f64,
    pub orientation: Orientation,
}

impl Matching {
    pub fn empty(orientation: Orientation) -> Self {
        Matching {
            pairs: Vec::new(),
            log_probability: 0.0,
            orientation,
        }
    }

    pub fn probability(&self) -> f64 {
        self.log_probability.exp()
    }

    // sorted so that equal matchings give bit-identical sums
    fn from_pairs(m: &MatchProbabilityMatrix, mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.sort_unstable();
        let log_probability = pairs.iter().map(|&(i, j)| m.values()[[i, j]].ln()).sum();
        Matching {
            pairs,
            log_probability,
            orientation: m.orientation(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Matcher {
    #[default]
    Greedy,
    Hungarian,
}

impl fmt::Display for Matcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Matcher::Greedy => "greedy",
            Matcher::Hungarian => "hungarian",
        })
    }
}

impl std::str::FromStr for Matcher {
    type Err = ReidError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "greedy" => Ok(Matcher::Greedy),
            "hungarian" => Ok(Matcher::Hungarian),
            other => Err(ReidError::Config(format!("unknown matcher `{other}`"))),
        }
    }
}

/// Greedy sequential matching with the zero-probability cutoff enabled.
pub fn greedy_match(m: &MatchProbabilityMatrix) -> Matching {
    greedy_match_with(m, true)
}

/// Repeatedly takes the largest remaining entry and removes its row and
/// column. Ties go to the lower row, then the lower column. With
/// `stop_at_zero`, matching ends once only zero entries remain.
///
/// Pairs are `(row, column)` of `m`, sorted by row.
pub fn greedy_match_with(m: &MatchProbabilityMatrix, stop_at_zero: bool) -> Matching {
    let (rows, cols) = m.shape();
    let values = m.values();
    let mut order: Vec<(usize, usize)> = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).collect();
    // stable sort keeps row-major order among equal values
    order.sort_by(|a, b| values[*b].partial_cmp(&values[*a]).unwrap_or(Ordering::Equal));

    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    let mut pairs = Vec::with_capacity(rows.min(cols));
    for (i, j) in order {
        if pairs.len() == rows.min(cols) {
            break;
        }
        if row_used[i] || col_used[j] {
            continue;
        }
        if stop_at_zero && values[[i, j]] <= 0.0 {
            break;
        }
        row_used[i] = true;
        col_used[j] = true;
        pairs.push((i, j));
    }
    Matching::from_pairs(m, pairs)
}

/// Minimum-cost assignment of every row to a distinct column (`rows <= cols`),
/// by the shortest-augmenting-path Hungarian method with potentials.
fn min_cost_assignment(cost: &Array2<f64>) -> Vec<usize> {
    let (n, m) = cost.dim();
    debug_assert!(n <= m);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![usize::MAX; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Assignment of size `min(rows, cols)` maximizing `sum ln p`.
///
/// Zero entries are only used when no all-positive assignment of full size
/// exists, and such pairs are dropped from the result.
pub fn hungarian_match(m: &MatchProbabilityMatrix) -> Matching {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Matching::empty(m.orientation());
    }
    let transpose = rows > cols;
    let values = if transpose {
        m.values().t().to_owned()
    } else {
        m.values().clone()
    };

    let finite: Vec<f64> = values.iter().filter(|p| **p > 0.0).map(|p| -p.ln()).collect();
    let (lo, hi) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
            (lo.min(*c), hi.max(*c))
        });
    // any single zero entry must cost more than the full spread of finite sums
    let zero_cost = if finite.is_empty() {
        1.0
    } else {
        hi + (values.nrows() as f64 + 1.0) * (hi - lo + 1.0)
    };
    let cost = values.mapv(|p| if p > 0.0 { -p.ln() } else { zero_cost });

    let assignment = min_cost_assignment(&cost);
    let pairs: Vec<(usize, usize)> = assignment
        .iter()
        .enumerate()
        .map(|(r, &c)| if transpose { (c, r) } else { (r, c) })
        .filter(|&(i, j)| m.values()[[i, j]] > 0.0)
        .collect();
    Matching::from_pairs(m, pairs)
}

/// Per-feature softmax temperatures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureTemperatures {
    #[serde(rename = "DL", default)]
    pub dl: Temperature,
    #[serde(rename = "CH", default)]
    pub ch: Temperature,
    #[serde(rename = "LOC", default)]
    pub loc: Temperature,
}

impl FeatureTemperatures {
    pub fn shared(t: Temperature) -> Self {
        FeatureTemperatures { dl: t, ch: t, loc: t }
    }

    pub fn get(&self, feature: Feature) -> Temperature {
        match feature {
            Feature::Dl => self.dl,
            Feature::Ch => self.ch,
            Feature::Loc => self.loc,
        }
    }
}

impl Default for FeatureTemperatures {
    fn default() -> Self {
        Self::shared(Temperature::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MatchOptions {
    pub temperatures: FeatureTemperatures,
    pub renormalize: bool,
    pub matcher: Matcher,
    /// Greedy stops instead of pairing through zero probabilities.
    pub allow_zero_pairs: bool,
}

impl MatchOptions {
    fn run(&self, m: &MatchProbabilityMatrix) -> Matching {
        match self.matcher {
            Matcher::Greedy => greedy_match_with(m, !self.allow_zero_pairs),
            Matcher::Hungarian => hungarian_match(m),
        }
    }
}

/// Outcome of matching one frame pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatch {
    /// Pairs expressed as `(query, gallery)`.
    pub matching: Matching,
    /// Fused matrix of the chosen orientation, in its own row layout.
    pub fused: MatchProbabilityMatrix,
}

impl PairMatch {
    /// Fused probabilities of the chosen orientation laid out `|Q| x |G|`.
    pub fn query_major(&self) -> Array2<f64> {
        match self.fused.orientation() {
            Orientation::QueryRows => self.fused.values().clone(),
            Orientation::GalleryRows => self.fused.values().t().to_owned(),
        }
    }

    /// Gallery indices of each query row, by descending probability and
    /// then ascending index.
    pub fn rankings(&self) -> Vec<Vec<usize>> {
        let m = self.query_major();
        m.rows()
            .into_iter()
            .map(|row| {
                let mut idx: Vec<usize> = (0..row.len()).collect();
                idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(Ordering::Equal));
                idx
            })
            .collect()
    }
}

fn fused_orientation(
    scores: &[ScoreMatrix],
    options: &MatchOptions,
    orientation: Orientation,
) -> Result<MatchProbabilityMatrix> {
    let mats = scores
        .iter()
        .map(|s| {
            let s = match orientation {
                Orientation::QueryRows => s.clone(),
                Orientation::GalleryRows => s.transposed(),
            };
            normalize(&s, options.temperatures.get(s.feature()), orientation)
        })
        .collect::<Result<Vec<_>>>()?;
    let fused = fuse(&mats)?;
    Ok(if options.renormalize {
        fused.renormalized()
    } else {
        fused
    })
}

/// Matches one frame pair in both orientations and keeps the one with the
/// higher matching probability (query-rows on ties). Pairs come back as
/// `(query, gallery)` sorted by query index.
pub fn match_pair(scores: &[ScoreMatrix], options: &MatchOptions) -> Result<PairMatch> {
    let first = scores
        .first()
        .ok_or_else(|| ReidError::Fusion("no score matrices to match".into()))?;
    if let Some(bad) = scores.iter().find(|s| s.shape() != first.shape()) {
        return Err(ReidError::Fusion(format!(
            "{} scores are {:?} but {} scores are {:?}",
            first.feature(),
            first.shape(),
            bad.feature(),
            bad.shape()
        )));
    }

    let fused_a = fused_orientation(scores, options, Orientation::QueryRows)?;
    let matching_a = options.run(&fused_a);
    let fused_b = fused_orientation(scores, options, Orientation::GalleryRows)?;
    let matching_b = options.run(&fused_b);

    if matching_b.log_probability > matching_a.log_probability {
        let mut pairs: Vec<(usize, usize)> = matching_b.pairs.iter().map(|&(g, q)| (q, g)).collect();
        pairs.sort_unstable();
        Ok(PairMatch {
            matching: Matching { pairs, ..matching_b },
            fused: fused_b,
        })
    } else {
        let mut matching = matching_a;
        matching.pairs.sort_unstable();
        Ok(PairMatch {
            matching,
            fused: fused_a,
        })
    }
}
