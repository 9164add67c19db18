//! Weighted cross-validation of several segmentation predictions.
//!
//! Every method `k` votes for the label it predicts at a pixel with weight
//! `w_k`; the score of label `l` is the sum of the weights of the methods that
//! predicted `l`. The label with the highest score wins and the pixel is
//! reliable when that score is strictly above `alpha`. Unreliable pixels are
//! handed to annotators, whose run-length edits are merged back by
//! [`merge_manual`].

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{BitMask, ClassCatalog, LabelMap, SENTINEL};

/// Absolute tolerance used for every score comparison (ties, the `alpha`
/// threshold and weight normalization). Scores are sums of at most a few
/// binary fractions, so anything below this is rounding noise.
pub const SCORE_EPS: f64 = 1e-9;

pub const DEFAULT_ALPHA: f64 = 0.7;

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("invalid fusion config: {0}")]
    Config(String),
    #[error("no prediction masks supplied")]
    NoMasks,
    #[error("expected {expected} masks (one per method), got {actual}")]
    MaskCount { expected: usize, actual: usize },
    #[error("mask {index} is {width}x{height}, expected {exp_width}x{exp_height}")]
    Dimension {
        index: usize,
        width: usize,
        height: usize,
        exp_width: usize,
        exp_height: usize,
    },
    #[error("mask {index} contains the unlabeled sentinel at pixel ({row}, {col})")]
    Sentinel { index: usize, row: usize, col: usize },
    #[error("edit {index} is invalid: {reason}")]
    InvalidEdit { index: usize, reason: String },
    #[error("{count} pixels remain unlabeled, first at ({}, {})", first.0, first.1)]
    Unresolved {
        count: usize,
        first: (usize, usize),
        pixels: Vec<(usize, usize)>,
    },
    #[error("weight search: {0}")]
    WeightSearch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TiePolicy {
    /// Among labels tied for the top score, pick the one predicted by the
    /// method with the largest weight (earlier methods win equal weights).
    #[default]
    HighestWeightMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FusionConfigDoc", into = "FusionConfigDoc")]
pub struct FusionConfig {
    methods: Vec<String>,
    weights: Vec<f64>,
    alpha: f64,
    tie_policy: TiePolicy,
    /// Method indices sorted by descending weight, stable on index.
    #[serde(skip)]
    priority: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct FusionConfigDoc {
    methods: Vec<String>,
    weights: Vec<f64>,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default)]
    tie_policy: TiePolicy,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl TryFrom<FusionConfigDoc> for FusionConfig {
    type Error = FusionError;

    fn try_from(d: FusionConfigDoc) -> Result<Self, Self::Error> {
        FusionConfig::new(d.methods, d.weights, d.alpha).map(|c| c.with_tie_policy(d.tie_policy))
    }
}

impl From<FusionConfig> for FusionConfigDoc {
    fn from(c: FusionConfig) -> Self {
        FusionConfigDoc {
            methods: c.methods,
            weights: c.weights,
            alpha: c.alpha,
            tie_policy: c.tie_policy,
        }
    }
}

impl FusionConfig {
    pub fn new(methods: Vec<String>, weights: Vec<f64>, alpha: f64) -> Result<Self, FusionError> {
        if methods.len() < 2 {
            return Err(FusionError::Config(format!(
                "need at least 2 methods, got {}",
                methods.len()
            )));
        }
        if weights.len() != methods.len() {
            return Err(FusionError::Config(format!(
                "{} weights for {} methods",
                weights.len(),
                methods.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(FusionError::Config(format!("weight {w} is not a nonnegative real")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SCORE_EPS {
            return Err(FusionError::Config(format!("weights sum to {sum}, not 1")));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(FusionError::Config(format!("alpha {alpha} is outside (0, 1]")));
        }
        let mut priority: Vec<usize> = (0..weights.len()).collect();
        priority.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
        Ok(Self {
            methods,
            weights,
            alpha,
            tie_policy: TiePolicy::HighestWeightMethod,
            priority,
        })
    }

    /// Config with generated method names `m0, m1, ...`.
    pub fn from_weights(weights: Vec<f64>, alpha: f64) -> Result<Self, FusionError> {
        let methods = (0..weights.len()).map(|k| format!("m{k}")).collect();
        Self::new(methods, weights, alpha)
    }

    pub fn with_tie_policy(mut self, policy: TiePolicy) -> Self {
        self.tie_policy = policy;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self, FusionError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(FusionError::Config(format!("alpha {alpha} is outside (0, 1]")));
        }
        self.alpha = alpha;
        Ok(self)
    }

    pub fn methods(&self) -> &[String] {
        &self.methods
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tie_policy(&self) -> TiePolicy {
        self.tie_policy
    }

    pub fn num_methods(&self) -> usize {
        self.weights.len()
    }
}

/// Winning score per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceGrid {
    width: usize,
    height: usize,
    scores: Vec<f64>,
}

impl ConfidenceGrid {
    pub fn new(width: usize, height: usize, scores: Vec<f64>) -> Option<Self> {
        (scores.len() == width * height).then_some(Self {
            width,
            height,
            scores,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.width + col]
    }

    /// Scores scaled to 16-bit fixed point (`round(s * 65535)`).
    pub fn to_fixed16(&self) -> Vec<u16> {
        self.scores
            .iter()
            .map(|s| (s.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect()
    }

    pub fn from_fixed16(width: usize, height: usize, values: &[u16]) -> Option<Self> {
        Self::new(
            width,
            height,
            values.iter().map(|&v| v as f64 / 65535.0).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionStats {
    pub total_pixels: usize,
    pub reliable_pixels: usize,
    pub reliable_fraction: f64,
    /// For each winning class: reliable pixels / pixels won by that class.
    pub per_class_reliable_fraction: BTreeMap<u8, f64>,
}

impl FusionStats {
    fn from_parts(labels: &LabelMap, reliable: &BitMask) -> Self {
        let mut per_class: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
        for (&l, &r) in labels.data().iter().zip(reliable.bits()) {
            let e = per_class.entry(l).or_default();
            e.0 += 1;
            e.1 += r as usize;
        }
        let total = labels.len();
        let ok = reliable.count_ones();
        FusionStats {
            total_pixels: total,
            reliable_pixels: ok,
            reliable_fraction: if total == 0 { 0.0 } else { ok as f64 / total as f64 },
            per_class_reliable_fraction: per_class
                .into_iter()
                .map(|(c, (n, r))| (c, r as f64 / n as f64))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedResult {
    pub labels: LabelMap,
    pub confidence: ConfidenceGrid,
    pub reliable: BitMask,
    pub stats: FusionStats,
}

impl FusedResult {
    /// Reassembles a result from stored parts, recomputing the statistics.
    pub fn from_parts(
        labels: LabelMap,
        confidence: ConfidenceGrid,
        reliable: BitMask,
    ) -> Result<Self, FusionError> {
        let (w, h) = (labels.width(), labels.height());
        if (confidence.width, confidence.height) != (w, h)
            || (reliable.width(), reliable.height()) != (w, h)
        {
            return Err(FusionError::Config(
                "labels, confidence and reliability rasters differ in size".into(),
            ));
        }
        let stats = FusionStats::from_parts(&labels, &reliable);
        Ok(Self {
            labels,
            confidence,
            reliable,
            stats,
        })
    }

    pub fn width(&self) -> usize {
        self.labels.width()
    }

    pub fn height(&self) -> usize {
        self.labels.height()
    }

    pub fn unreliable_count(&self) -> usize {
        self.stats.total_pixels - self.stats.reliable_pixels
    }
}

/// Strict threshold test shared by fusion and weight search.
#[inline]
pub fn is_reliable(score: f64, alpha: f64) -> bool {
    score > alpha + SCORE_EPS
}

/// Fuses one pixel. `preds[k]` is the label predicted by method `k`.
#[inline]
fn fuse_pixel(preds: &[u8], cfg: &FusionConfig) -> (u8, f64) {
    // (label, score) in order of first prediction; K is small so a linear
    // scan beats hashing.
    let mut scores: [(u8, f64); 16] = [(0, 0.0); 16];
    let mut spill: Vec<(u8, f64)> = Vec::new();
    let mut n = 0usize;
    for (k, &label) in preds.iter().enumerate() {
        let w = cfg.weights[k];
        let slot = scores[..n].iter().position(|e| e.0 == label);
        match slot {
            Some(i) => scores[i].1 += w,
            None if n < 16 => {
                scores[n] = (label, 0.0 + w);
                n += 1;
            }
            None => match spill.iter_mut().find(|e| e.0 == label) {
                Some(e) => e.1 += w,
                None => spill.push((label, 0.0 + w)),
            },
        }
    }
    let all = scores[..n].iter().chain(spill.iter());
    let best = all.clone().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
    let tied = |label: u8| {
        all.clone()
            .any(|e| e.0 == label && e.1 >= best - SCORE_EPS)
    };
    match cfg.tie_policy {
        TiePolicy::HighestWeightMethod => {
            for &k in &cfg.priority {
                let label = preds[k];
                if tied(label) {
                    let score = all.clone().find(|e| e.0 == label).map(|e| e.1).unwrap();
                    return (label, score);
                }
            }
        }
    }
    unreachable!("the top-scoring label is always predicted by some method")
}

fn check_masks(masks: &[LabelMap], expected: Option<usize>) -> Result<(), FusionError> {
    let first = masks.first().ok_or(FusionError::NoMasks)?;
    if let Some(k) = expected {
        if masks.len() != k {
            return Err(FusionError::MaskCount {
                expected: k,
                actual: masks.len(),
            });
        }
    }
    for (index, m) in masks.iter().enumerate() {
        if !m.same_shape(first) {
            return Err(FusionError::Dimension {
                index,
                width: m.width(),
                height: m.height(),
                exp_width: first.width(),
                exp_height: first.height(),
            });
        }
        if let Some(i) = m.data().iter().position(|&v| v == SENTINEL) {
            return Err(FusionError::Sentinel {
                index,
                row: i / m.width(),
                col: i % m.width(),
            });
        }
    }
    Ok(())
}

/// Fuses `masks` (one per configured method, same order) into a label map
/// with per-pixel confidence and reliability.
///
/// Rows are evaluated in parallel; the result does not depend on the
/// thread count.
pub fn fuse(masks: &[LabelMap], cfg: &FusionConfig) -> Result<FusedResult, FusionError> {
    check_masks(masks, Some(cfg.num_methods()))?;
    let (width, height) = (masks[0].width(), masks[0].height());
    let n = width * height;
    let mut labels = vec![0u8; n];
    let mut conf = vec![0f64; n];
    let mut reliable = vec![false; n];

    if n > 0 {
        labels
            .par_chunks_mut(width)
            .zip(conf.par_chunks_mut(width))
            .zip(reliable.par_chunks_mut(width))
            .enumerate()
            .for_each(|(row, ((lab, cf), rel))| {
                let mut preds = vec![0u8; masks.len()];
                for col in 0..width {
                    let i = row * width + col;
                    for (p, m) in preds.iter_mut().zip(masks) {
                        *p = m.data()[i];
                    }
                    let (label, score) = fuse_pixel(&preds, cfg);
                    lab[col] = label;
                    cf[col] = score;
                    rel[col] = is_reliable(score, cfg.alpha);
                }
            });
    }

    let labels = LabelMap::new(width, height, labels).expect("sized above");
    let reliable = BitMask::new(width, height, reliable).expect("sized above");
    let stats = FusionStats::from_parts(&labels, &reliable);
    Ok(FusedResult {
        labels,
        confidence: ConfidenceGrid {
            width,
            height,
            scores: conf,
        },
        reliable,
        stats,
    })
}

/// The fused labels with every unreliable pixel replaced by the sentinel.
pub fn uncertainty_map(r: &FusedResult) -> LabelMap {
    let data = r
        .labels
        .data()
        .iter()
        .zip(r.reliable.bits())
        .map(|(&l, &ok)| if ok { l } else { SENTINEL })
        .collect();
    LabelMap::new(r.width(), r.height(), data).expect("same shape as labels")
}

/// A horizontal run of pixels painted with one label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EditOp {
    pub row: usize,
    pub col_start: usize,
    /// Exclusive.
    pub col_end: usize,
    pub label: u8,
}

impl EditOp {
    pub fn new(row: usize, col_start: usize, col_end: usize, label: u8) -> Self {
        Self {
            row,
            col_start,
            col_end,
            label,
        }
    }

    pub fn check(&self, width: usize, height: usize) -> Result<(), String> {
        if self.label == SENTINEL {
            return Err("label 255 is reserved for unlabeled pixels".into());
        }
        if self.row >= height {
            return Err(format!("row {} outside height {height}", self.row));
        }
        if self.col_start >= self.col_end {
            return Err(format!("empty span {}..{}", self.col_start, self.col_end));
        }
        if self.col_end > width {
            return Err(format!("span end {} outside width {width}", self.col_end));
        }
        Ok(())
    }
}

/// Validates every edit against the raster size and (optionally) a catalog.
pub fn validate_edits(
    edits: &[EditOp],
    width: usize,
    height: usize,
    catalog: Option<&ClassCatalog>,
) -> Result<(), FusionError> {
    for (index, e) in edits.iter().enumerate() {
        e.check(width, height)
            .map_err(|reason| FusionError::InvalidEdit { index, reason })?;
        if let Some(c) = catalog {
            if !c.contains(e.label) {
                return Err(FusionError::InvalidEdit {
                    index,
                    reason: format!("label {} is not in the class catalog", e.label),
                });
            }
        }
    }
    Ok(())
}

/// Paints `edits` onto `map` in order. Nothing is written unless every edit
/// is valid.
pub fn apply_edits(map: &mut LabelMap, edits: &[EditOp]) -> Result<(), FusionError> {
    validate_edits(edits, map.width(), map.height(), None)?;
    let w = map.width();
    let data = map.data_mut();
    for e in edits {
        let start = e.row * w;
        data[start + e.col_start..start + e.col_end].fill(e.label);
    }
    Ok(())
}

/// Starts from the uncertainty map, applies `edits` in order and requires the
/// result to be free of sentinel pixels.
pub fn merge_manual(r: &FusedResult, edits: &[EditOp]) -> Result<LabelMap, FusionError> {
    let mut map = uncertainty_map(r);
    apply_edits(&mut map, edits)?;
    let pixels = map.sentinel_pixels();
    match pixels.first() {
        None => Ok(map),
        Some(&first) => Err(FusionError::Unresolved {
            count: pixels.len(),
            first,
            pixels,
        }),
    }
}

/// All weight vectors of length `k` whose entries are multiples of
/// `grid_step` and sum to one.
pub fn simplex_grid(k: usize, grid_step: f64) -> Result<Vec<Vec<f64>>, FusionError> {
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(FusionError::WeightSearch(format!(
            "grid step {grid_step} is outside (0, 1]"
        )));
    }
    let steps = (1.0 / grid_step).round();
    if (steps * grid_step - 1.0).abs() > SCORE_EPS {
        return Err(FusionError::WeightSearch(format!(
            "grid step {grid_step} does not divide 1"
        )));
    }
    if k == 0 {
        return Err(FusionError::WeightSearch("no methods".into()));
    }
    let steps = steps as usize;
    let mut out = Vec::new();
    let mut parts = vec![0usize; k];
    fn rec(parts: &mut [usize], pos: usize, left: usize, steps: usize, out: &mut Vec<Vec<f64>>) {
        if pos + 1 == parts.len() {
            parts[pos] = left;
            out.push(parts.iter().map(|&p| p as f64 / steps as f64).collect());
            return;
        }
        for p in 0..=left {
            parts[pos] = p;
            rec(parts, pos + 1, left - p, steps, out);
        }
    }
    rec(&mut parts, 0, steps, steps, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightScore {
    pub weights: Vec<f64>,
    pub mean_reliable_fraction: f64,
}

/// Pixel agreement pattern: entry `k` is the first method index predicting
/// the same label as method `k`.
type Pattern = Vec<u8>;

fn pattern_histogram(masks: &[LabelMap]) -> HashMap<Pattern, usize> {
    let mut hist: HashMap<Pattern, usize> = HashMap::new();
    let mut pat = vec![0u8; masks.len()];
    for i in 0..masks[0].len() {
        for k in 0..masks.len() {
            let l = masks[k].data()[i];
            pat[k] = (0..k).find(|&j| masks[j].data()[i] == l).unwrap_or(k) as u8;
        }
        match hist.get_mut(&pat) {
            Some(c) => *c += 1,
            None => {
                hist.insert(pat.clone(), 1);
            }
        }
    }
    hist
}

fn pattern_top_score(pat: &[u8], weights: &[f64]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for g in 0..pat.len() {
        if pat[g] as usize != g {
            continue;
        }
        // accumulate in method order, exactly as fusion does
        let mut s = 0.0;
        for k in g..pat.len() {
            if pat[k] as usize == g {
                s += weights[k];
            }
        }
        best = best.max(s);
    }
    best
}

/// Scores every simplex-grid weight vector by its mean reliable fraction over
/// `prediction_sets` and returns them best first.
///
/// Equal scores are ordered by descending weight vector, so vectors that put
/// more weight on earlier-listed methods come first.
pub fn weight_search(
    prediction_sets: &[Vec<LabelMap>],
    grid_step: f64,
    alpha: f64,
) -> Result<Vec<WeightScore>, FusionError> {
    let first = prediction_sets
        .first()
        .ok_or_else(|| FusionError::WeightSearch("no prediction sets".into()))?;
    let k = first.len();
    if k < 2 {
        return Err(FusionError::WeightSearch(format!(
            "need at least 2 methods, got {k}"
        )));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(FusionError::WeightSearch(format!("alpha {alpha} is outside (0, 1]")));
    }
    for set in prediction_sets {
        check_masks(set, Some(k))?;
    }
    let grid = simplex_grid(k, grid_step)?;
    let hists: Vec<(HashMap<Pattern, usize>, usize)> = prediction_sets
        .par_iter()
        .map(|set| (pattern_histogram(set), set[0].len()))
        .collect();

    let mut scored: Vec<WeightScore> = grid
        .into_par_iter()
        .map(|weights| {
            let total: f64 = hists
                .iter()
                .map(|(hist, n)| {
                    if *n == 0 {
                        return 0.0;
                    }
                    let ok: usize = hist
                        .iter()
                        .filter(|(p, _)| is_reliable(pattern_top_score(p, &weights), alpha))
                        .map(|(_, c)| c)
                        .sum();
                    ok as f64 / *n as f64
                })
                .sum();
            WeightScore {
                mean_reliable_fraction: total / hists.len() as f64,
                weights,
            }
        })
        .collect();
    scored.sort_by(|a, b| {
        b.mean_reliable_fraction
            .total_cmp(&a.mean_reliable_fraction)
            .then_with(|| cmp_weights(&b.weights, &a.weights))
    });
    Ok(scored)
}

fn cmp_weights(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}
