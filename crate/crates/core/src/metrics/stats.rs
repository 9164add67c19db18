use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::components::label_components;
use crate::instance::InstanceMap;
use crate::raster::{LabelMap, SENTINEL};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassStats {
    pub pixels: u64,
    /// 8-connected regions of the class.
    pub segments: u64,
    /// Instances of the class in the supplied instance maps.
    pub instances: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    pub images: u64,
    pub per_class: BTreeMap<u8, ClassStats>,
}

#[derive(Debug, Clone, Default)]
pub struct StatsAccumulator {
    report: StatsReport,
}

impl StatsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, labels: &LabelMap, instances: Option<&InstanceMap>) {
        self.merge(&image_stats(labels, instances));
    }

    pub fn merge(&mut self, other: &StatsReport) {
        self.report.images += other.images;
        for (c, s) in &other.per_class {
            let e = self.report.per_class.entry(*c).or_default();
            e.pixels += s.pixels;
            e.segments += s.segments;
            e.instances += s.instances;
        }
    }

    pub fn finish(self) -> StatsReport {
        self.report
    }
}

fn image_stats(labels: &LabelMap, instances: Option<&InstanceMap>) -> StatsReport {
    let data = labels.data();
    let mut per_class: BTreeMap<u8, ClassStats> = BTreeMap::new();
    for &v in data {
        if v != SENTINEL {
            per_class.entry(v).or_default().pixels += 1;
        }
    }
    let (ids, count) = label_components(labels.width(), labels.height(), |i| {
        (data[i] != SENTINEL).then_some(data[i])
    });
    let mut seen = vec![false; count as usize + 1];
    for (i, &id) in ids.iter().enumerate() {
        if id != 0 && !seen[id as usize] {
            seen[id as usize] = true;
            per_class.entry(data[i]).or_default().segments += 1;
        }
    }
    if let Some(inst) = instances {
        for info in inst.summary() {
            per_class.entry(info.class).or_default().instances += 1;
        }
    }
    StatsReport {
        images: 1,
        per_class,
    }
}

/// Per-class pixel, segment and instance counts summed over `entries`.
pub fn dataset_stats(entries: &[(LabelMap, Option<InstanceMap>)]) -> StatsReport {
    let parts: Vec<StatsReport> = entries
        .par_iter()
        .map(|(l, i)| image_stats(l, i.as_ref()))
        .collect();
    let mut acc = StatsAccumulator::new();
    for p in &parts {
        acc.merge(p);
    }
    acc.finish()
}
