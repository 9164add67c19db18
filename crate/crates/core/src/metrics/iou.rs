use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{same_dims, MetricsError};
use crate::raster::{LabelMap, SENTINEL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIoU {
    pub intersection: u64,
    pub union: u64,
    /// `None` when the class appears in neither map.
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoUReport {
    pub per_class: BTreeMap<u8, ClassIoU>,
    /// Mean over classes with a nonzero union; 0 when there are none.
    pub mean_iou: f64,
}

/// Confusion counts summed over any number of map pairs.
#[derive(Debug, Clone)]
pub struct IoUAccumulator {
    ignore: u8,
    intersection: [u64; 256],
    pred: [u64; 256],
    gt: [u64; 256],
}

impl IoUAccumulator {
    pub fn new(ignore: u8) -> Self {
        Self {
            ignore,
            intersection: [0; 256],
            pred: [0; 256],
            gt: [0; 256],
        }
    }

    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<(), MetricsError> {
        same_dims((pred.width(), pred.height()), (gt.width(), gt.height()))?;
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g == self.ignore {
                continue;
            }
            self.gt[g as usize] += 1;
            self.pred[p as usize] += 1;
            if p == g {
                self.intersection[g as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &IoUAccumulator) {
        for c in 0..256 {
            self.intersection[c] += other.intersection[c];
            self.pred[c] += other.pred[c];
            self.gt[c] += other.gt[c];
        }
    }

    /// Report over the classes seen so far, plus any `always_listed` classes
    /// (which show `iou: None` when absent).
    pub fn report_with(&self, always_listed: &BTreeSet<u8>) -> IoUReport {
        let mut per_class = BTreeMap::new();
        let mut sum = 0.0;
        let mut n = 0usize;
        for c in 0..=255u8 {
            // the ignore value and the sentinel are never classes
            if c == self.ignore || c == SENTINEL {
                continue;
            }
            let i = c as usize;
            let union = self.pred[i] + self.gt[i] - self.intersection[i];
            if union == 0 && !always_listed.contains(&c) {
                continue;
            }
            let iou = (union > 0).then(|| self.intersection[i] as f64 / union as f64);
            if let Some(v) = iou {
                sum += v;
                n += 1;
            }
            per_class.insert(
                c,
                ClassIoU {
                    intersection: self.intersection[i],
                    union,
                    iou,
                },
            );
        }
        IoUReport {
            per_class,
            mean_iou: if n == 0 { 0.0 } else { sum / n as f64 },
        }
    }

    pub fn report(&self) -> IoUReport {
        self.report_with(&BTreeSet::new())
    }
}

/// Class-averaged intersection over union. Pixels whose ground truth is
/// `ignore` do not count at all.
pub fn miou(pred: &LabelMap, gt: &LabelMap, ignore: u8) -> Result<IoUReport, MetricsError> {
    let mut acc = IoUAccumulator::new(ignore);
    acc.add(pred, gt)?;
    Ok(acc.report())
}

/// Fraction of pixels labeled differently, counting only pixels where
/// neither map carries an excluded class. Returns 0 when every pixel is
/// excluded.
pub fn disagreement_fraction(
    a: &LabelMap,
    b: &LabelMap,
    exclude: &BTreeSet<u8>,
) -> Result<f64, MetricsError> {
    same_dims((a.width(), a.height()), (b.width(), b.height()))?;
    let mut skip = [false; 256];
    for &c in exclude {
        skip[c as usize] = true;
    }
    let (mut total, mut diff) = (0u64, 0u64);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        if skip[x as usize] || skip[y as usize] {
            continue;
        }
        total += 1;
        diff += (x != y) as u64;
    }
    Ok(if total == 0 { 0.0 } else { diff as f64 / total as f64 })
}
