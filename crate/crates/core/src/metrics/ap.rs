//! Instance-level average precision.
//!
//! For every class and IoU threshold `t`, predicted instances are matched
//! greedily to ground-truth instances of the same class in descending mask
//! IoU order; a pair counts when its IoU is at least `t`. The score at `t` is
//! `TP / (TP + FP + FN)` and AP is its mean over thresholds and over the
//! requested classes present in the ground truth.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{same_dims, MetricsError};
use crate::instance::InstanceMap;

pub const DEFAULT_AP_THRESHOLDS: [f64; 10] =
    [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub class: u8,
    pub pred_id: u32,
    pub gt_id: u32,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct APReport {
    /// `(threshold, score)` in the order the thresholds were given.
    pub per_threshold: Vec<(f64, f64)>,
    /// Score of each evaluated class averaged over thresholds.
    pub per_class: BTreeMap<u8, f64>,
    /// 0 when no requested class occurs in the ground truth.
    pub ap: f64,
    /// Greedy matches whose IoU reaches the lowest threshold.
    pub matched_pairs: Vec<MatchedPair>,
}

fn areas(map: &InstanceMap) -> BTreeMap<u32, u64> {
    let mut out = BTreeMap::new();
    for &id in map.ids() {
        if id != 0 {
            *out.entry(id).or_insert(0) += 1;
        }
    }
    out
}

pub fn instance_ap(
    pred: &InstanceMap,
    gt: &InstanceMap,
    classes: &BTreeSet<u8>,
    thresholds: &[f64],
) -> Result<APReport, MetricsError> {
    same_dims((pred.width(), pred.height()), (gt.width(), gt.height()))?;
    if thresholds.is_empty() {
        return Err(MetricsError::NoThresholds);
    }
    if let Some(&t) = thresholds.iter().find(|&&t| !(t > 0.0 && t <= 1.0)) {
        return Err(MetricsError::Threshold(t));
    }
    let min_t = thresholds.iter().copied().fold(f64::INFINITY, f64::min);

    let pred_area = areas(pred);
    let gt_area = areas(gt);
    let mut overlap: HashMap<(u32, u32), u64> = HashMap::new();
    for (&p, &g) in pred.ids().iter().zip(gt.ids()) {
        if p != 0 && g != 0 {
            *overlap.entry((p, g)).or_insert(0) += 1;
        }
    }

    let mut per_class = BTreeMap::new();
    let mut per_threshold = vec![0.0; thresholds.len()];
    let mut matched_pairs = Vec::new();

    for &class in classes {
        let gts: Vec<u32> = gt_area
            .keys()
            .copied()
            .filter(|id| gt.class_of(*id) == Some(class))
            .collect();
        if gts.is_empty() {
            continue;
        }
        let n_pred = pred_area
            .keys()
            .filter(|id| pred.class_of(**id) == Some(class))
            .count();

        let mut pairs: Vec<MatchedPair> = overlap
            .iter()
            .filter(|((p, g), _)| pred.class_of(*p) == Some(class) && gt.class_of(*g) == Some(class))
            .map(|(&(p, g), &inter)| {
                let union = pred_area[&p] + gt_area[&g] - inter;
                MatchedPair {
                    class,
                    pred_id: p,
                    gt_id: g,
                    iou: inter as f64 / union as f64,
                }
            })
            .collect();
        pairs.sort_by(|a, b| {
            b.iou
                .total_cmp(&a.iou)
                .then(a.pred_id.cmp(&b.pred_id))
                .then(a.gt_id.cmp(&b.gt_id))
        });

        // Greedy matching at threshold t only sees the pairs with IoU >= t,
        // which form a prefix of this order, so one pass serves every t.
        let mut used_p = BTreeSet::new();
        let mut used_g = BTreeSet::new();
        let mut matches = Vec::new();
        for pair in pairs {
            if pair.iou < min_t {
                break;
            }
            if used_p.contains(&pair.pred_id) || used_g.contains(&pair.gt_id) {
                continue;
            }
            used_p.insert(pair.pred_id);
            used_g.insert(pair.gt_id);
            matches.push(pair);
        }

        let mut class_sum = 0.0;
        for (slot, &t) in per_threshold.iter_mut().zip(thresholds) {
            let tp = matches.iter().filter(|m| m.iou >= t).count();
            let fp = n_pred - tp;
            let fn_ = gts.len() - tp;
            let score = tp as f64 / (tp + fp + fn_) as f64;
            *slot += score;
            class_sum += score;
        }
        per_class.insert(class, class_sum / thresholds.len() as f64);
        matched_pairs.extend(matches);
    }

    let n_classes = per_class.len();
    let per_threshold: Vec<(f64, f64)> = thresholds
        .iter()
        .zip(per_threshold)
        .map(|(&t, s)| (t, if n_classes == 0 { 0.0 } else { s / n_classes as f64 }))
        .collect();
    let ap = if n_classes == 0 {
        0.0
    } else {
        per_threshold.iter().map(|(_, s)| s).sum::<f64>() / per_threshold.len() as f64
    };
    Ok(APReport {
        per_threshold,
        per_class,
        ap,
        matched_pairs,
    })
}
