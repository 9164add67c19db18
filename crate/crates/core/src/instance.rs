//! Instance maps derived from semantic labels, and manual merge/split fixes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::components::label_components;
use crate::raster::LabelMap;

#[derive(Debug, Error, PartialEq)]
pub enum InstanceError {
    #[error("unknown instance id {0}")]
    UnknownId(u32),
    #[error("pixel {0:?} of the separator is not part of instance {1}")]
    SeparatorOutside((usize, usize), u32),
    #[error("cannot merge instances of different classes: {0:?}")]
    ClassMismatch(Vec<(u32, u8)>),
    #[error("instance id {id} has no class in the table")]
    MissingClass { id: u32 },
    #[error("id buffer holds {actual} values, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
}

/// Per-pixel instance ids (0 = none) and the class of every instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMap {
    width: usize,
    height: usize,
    ids: Vec<u32>,
    table: BTreeMap<u32, u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceInfo {
    pub id: u32,
    pub class: u8,
    pub pixels: usize,
    /// `[row_min, col_min, row_max, col_max]`, inclusive.
    pub bbox: [usize; 4],
}

impl InstanceMap {
    pub fn new(
        width: usize,
        height: usize,
        ids: Vec<u32>,
        table: BTreeMap<u32, u8>,
    ) -> Result<Self, InstanceError> {
        if ids.len() != width * height {
            return Err(InstanceError::BufferSize {
                expected: width * height,
                actual: ids.len(),
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id != 0 && !table.contains_key(&id)) {
            return Err(InstanceError::MissingClass { id });
        }
        Ok(Self {
            width,
            height,
            ids,
            table,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ids: vec![0; width * height],
            table: BTreeMap::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.ids[row * self.width + col]
    }

    pub fn table(&self) -> &BTreeMap<u32, u8> {
        &self.table
    }

    pub fn class_of(&self, id: u32) -> Option<u8> {
        self.table.get(&id).copied()
    }

    /// Number of instances that own at least one pixel.
    pub fn instance_count(&self) -> usize {
        self.summary().len()
    }

    /// Pixel count and bounding box of every instance present in the raster.
    pub fn summary(&self) -> Vec<InstanceInfo> {
        let mut acc: BTreeMap<u32, InstanceInfo> = BTreeMap::new();
        for (i, &id) in self.ids.iter().enumerate() {
            if id == 0 {
                continue;
            }
            let (r, c) = (i / self.width, i % self.width);
            let e = acc.entry(id).or_insert(InstanceInfo {
                id,
                class: self.table[&id],
                pixels: 0,
                bbox: [r, c, r, c],
            });
            e.pixels += 1;
            e.bbox[0] = e.bbox[0].min(r);
            e.bbox[1] = e.bbox[1].min(c);
            e.bbox[2] = e.bbox[2].max(r);
            e.bbox[3] = e.bbox[3].max(c);
        }
        acc.into_values().collect()
    }

    pub fn max_id(&self) -> u32 {
        self.table.keys().next_back().copied().unwrap_or(0)
    }
}

/// Splits every 8-connected same-class region of `instance_classes` into its
/// own instance. Ids follow the scanline order of each region's first pixel.
pub fn split_instances(labels: &LabelMap, instance_classes: &BTreeSet<u8>) -> InstanceMap {
    let data = labels.data();
    let (ids, _) = label_components(labels.width(), labels.height(), |i| {
        instance_classes.contains(&data[i]).then_some(data[i])
    });
    let mut table = BTreeMap::new();
    for (i, &id) in ids.iter().enumerate() {
        if id != 0 {
            table.entry(id).or_insert(data[i]);
        }
    }
    InstanceMap {
        width: labels.width(),
        height: labels.height(),
        ids,
        table,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InstanceEdit {
    Merge {
        ids: BTreeSet<u32>,
    },
    Split {
        id: u32,
        /// `(row, col)` pixels cut out of the instance.
        separator: Vec<(usize, usize)>,
    },
}

/// Applies `edits` in order. Edits that leave the map unchanged (a split that
/// does not disconnect anything, a merge of a single id) produce a warning
/// instead of an error.
pub fn apply_instance_edits(
    map: &InstanceMap,
    edits: &[InstanceEdit],
) -> Result<(InstanceMap, Vec<String>), InstanceError> {
    let mut out = map.clone();
    let mut warnings = Vec::new();
    for (n, edit) in edits.iter().enumerate() {
        let warning = match edit {
            InstanceEdit::Merge { ids } => merge(&mut out, ids)?,
            InstanceEdit::Split { id, separator } => split(&mut out, *id, separator)?,
        };
        if let Some(w) = warning {
            warnings.push(format!("edit {n}: {w}"));
        }
    }
    Ok((out, warnings))
}

fn merge(map: &mut InstanceMap, ids: &BTreeSet<u32>) -> Result<Option<String>, InstanceError> {
    for &id in ids {
        if !map.table.contains_key(&id) {
            return Err(InstanceError::UnknownId(id));
        }
    }
    let Some(&keep) = ids.first() else {
        return Ok(Some("merge with no ids".into()));
    };
    if ids.len() == 1 {
        return Ok(Some(format!("merge of single instance {keep}")));
    }
    let class = map.table[&keep];
    if ids.iter().any(|id| map.table[id] != class) {
        return Err(InstanceError::ClassMismatch(
            ids.iter().map(|id| (*id, map.table[id])).collect(),
        ));
    }
    for v in map.ids.iter_mut() {
        if *v != keep && ids.contains(v) {
            *v = keep;
        }
    }
    for id in ids.iter().skip(1) {
        map.table.remove(id);
    }
    Ok(None)
}

fn split(
    map: &mut InstanceMap,
    target: u32,
    separator: &[(usize, usize)],
) -> Result<Option<String>, InstanceError> {
    let class = *map.table.get(&target).ok_or(InstanceError::UnknownId(target))?;
    let w = map.width;
    let mut cut = BTreeSet::new();
    for &(r, c) in separator {
        if r >= map.height || c >= w || map.ids[r * w + c] != target {
            return Err(InstanceError::SeparatorOutside((r, c), target));
        }
        cut.insert(r * w + c);
    }
    if cut.is_empty() {
        return Ok(Some(format!("split of {target} with an empty separator")));
    }

    let ids = &map.ids;
    let (parts, count) = label_components(w, map.height, |i| {
        (ids[i] == target && !cut.contains(&i)).then_some(())
    });
    if count <= 1 {
        return Ok(Some(format!("separator does not disconnect instance {target}")));
    }

    // first scanline pixel of every part
    let mut anchors = vec![(0usize, 0usize); count as usize];
    let mut seen = vec![false; count as usize];
    for (i, &p) in parts.iter().enumerate() {
        if p != 0 && !seen[p as usize - 1] {
            seen[p as usize - 1] = true;
            anchors[p as usize - 1] = (i / w, i % w);
        }
    }

    let base = map.max_id();
    map.table.remove(&target);
    for p in 1..=count {
        map.table.insert(base + p, class);
    }
    for (i, &p) in parts.iter().enumerate() {
        if p != 0 {
            map.ids[i] = base + p;
        }
    }
    for &i in &cut {
        let (r, c) = ((i / w) as i64, (i % w) as i64);
        let nearest = anchors
            .iter()
            .enumerate()
            .min_by_key(|(_, &(ar, ac))| {
                let (dr, dc) = (ar as i64 - r, ac as i64 - c);
                dr * dr + dc * dc
            })
            .map(|(k, _)| k as u32 + 1)
            .expect("at least two parts");
        map.ids[i] = base + nearest;
    }
    Ok(None)
}
