//! Semantics-aware L1 distance between two images.
//!
//! Pixels are grouped by a coarse taxonomy label `i`; each group contributes
//! `lambda_i / p_i * sum |x - y|` over its `p_i` pixels and all three
//! channels. Small but important regions therefore weigh as much as large
//! ones. Applied to consecutive images of a sequence it gives the smoothness
//! term between them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{same_dims, MetricsError};
use crate::raster::{ClassCatalog, ClassInfo, Image, LabelMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConfigDoc", into = "ConfigDoc")]
pub struct MaskedDistanceConfig {
    taxonomy: ClassCatalog,
    /// Fine class id -> taxonomy id. Unmapped ids (e.g. the sentinel) are
    /// left out of every group.
    projection: [Option<u8>; 256],
}

#[derive(Serialize, Deserialize)]
struct ConfigDoc {
    taxonomy: ClassCatalog,
    projection: BTreeMap<u8, u8>,
}

impl TryFrom<ConfigDoc> for MaskedDistanceConfig {
    type Error = MetricsError;

    fn try_from(d: ConfigDoc) -> Result<Self, Self::Error> {
        MaskedDistanceConfig::new(d.taxonomy, d.projection)
    }
}

impl From<MaskedDistanceConfig> for ConfigDoc {
    fn from(c: MaskedDistanceConfig) -> Self {
        ConfigDoc {
            projection: c.projection_map(),
            taxonomy: c.taxonomy,
        }
    }
}

const TAXONOMY: [(&str, [u8; 3], f64); 7] = [
    ("road", [128, 64, 128], 2.0),
    ("traffic lights", [250, 170, 30], 3.0),
    ("vegetation", [107, 142, 35], 1.0),
    ("sky", [70, 130, 180], 0.2),
    ("people", [220, 20, 60], 1.0),
    ("vehicles", [0, 0, 142], 2.0),
    ("other", [128, 128, 128], 1.0),
];

// Street-scene training ids -> taxonomy ids. Not normative; override it
// through the config document when a different grouping is wanted.
const DEFAULT_PROJECTION: [u8; 19] = [
    0, // road
    6, // sidewalk
    6, // building
    6, // wall
    6, // fence
    6, // pole
    1, // traffic light
    6, // traffic sign
    2, // vegetation
    2, // terrain
    3, // sky
    4, // person
    4, // rider
    5, // car
    5, // truck
    5, // bus
    5, // train
    5, // motorcycle
    5, // bicycle
];

impl MaskedDistanceConfig {
    pub fn new(taxonomy: ClassCatalog, projection: BTreeMap<u8, u8>) -> Result<Self, MetricsError> {
        let mut table = [None; 256];
        for (&from, &to) in &projection {
            if !taxonomy.contains(to) {
                return Err(MetricsError::Config(format!(
                    "class {from} projects to {to}, which is not in the {}-label taxonomy",
                    taxonomy.len()
                )));
            }
            table[from as usize] = Some(to);
        }
        Ok(Self {
            taxonomy,
            projection: table,
        })
    }

    /// Checks that every class of `source` has a projection.
    pub fn check_total(&self, source: &ClassCatalog) -> Result<(), MetricsError> {
        match source
            .classes()
            .iter()
            .find(|c| self.projection[c.id as usize].is_none())
        {
            Some(c) => Err(MetricsError::Config(format!(
                "class {} ('{}') has no projection",
                c.id, c.name
            ))),
            None => Ok(()),
        }
    }

    pub fn taxonomy(&self) -> &ClassCatalog {
        &self.taxonomy
    }

    pub fn project(&self, class: u8) -> Option<u8> {
        self.projection[class as usize]
    }

    pub fn projection_map(&self) -> BTreeMap<u8, u8> {
        self.projection
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|t| (i as u8, t)))
            .collect()
    }
}

impl Default for MaskedDistanceConfig {
    /// Seven-label taxonomy with importance weights 2, 3, 1, 0.2, 1, 2, 1.
    fn default() -> Self {
        let classes = TAXONOMY
            .iter()
            .enumerate()
            .map(|(i, (name, color, lambda))| ClassInfo {
                id: i as u8,
                name: (*name).into(),
                color: *color,
                lambda: *lambda,
            })
            .collect();
        let taxonomy = ClassCatalog::new(classes).expect("static taxonomy is valid");
        let projection = DEFAULT_PROJECTION
            .iter()
            .enumerate()
            .map(|(i, &t)| (i as u8, t))
            .collect();
        Self::new(taxonomy, projection).expect("static projection is valid")
    }
}

pub fn masked_weighted_l1(
    x: &Image,
    y: &Image,
    labels: &LabelMap,
    cfg: &MaskedDistanceConfig,
) -> Result<f64, MetricsError> {
    same_dims((x.width(), x.height()), (y.width(), y.height()))?;
    same_dims((x.width(), x.height()), (labels.width(), labels.height()))?;
    let m = cfg.taxonomy.len();
    let mut count = vec![0u64; m];
    let mut abs = vec![0u64; m];
    for (i, &l) in labels.data().iter().enumerate() {
        let Some(t) = cfg.project(l) else { continue };
        let t = t as usize;
        count[t] += 1;
        let (a, b) = (&x.data()[i * 3..i * 3 + 3], &y.data()[i * 3..i * 3 + 3]);
        abs[t] += a.iter().zip(b).map(|(p, q)| p.abs_diff(*q) as u64).sum::<u64>();
    }
    Ok(cfg
        .taxonomy
        .classes()
        .iter()
        .zip(count.iter().zip(&abs))
        .filter(|(_, (p, _))| **p > 0)
        .map(|(c, (&p, &s))| c.lambda / p as f64 * s as f64)
        .sum())
}
