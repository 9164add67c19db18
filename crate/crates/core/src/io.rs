//! On-disk layout for rasters and derived results.
//!
//! A fused result is a directory holding `labels.png` (paletted class ids),
//! `confidence.png` (16-bit, score x 65535), `reliable.png` (0/255) and
//! `stats.json`. An instance map is a 16-bit id raster next to a JSON table
//! of `{id, class, pixels, bbox}` records.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::fusion::{uncertainty_map, ConfidenceGrid, FusedResult, FusionError, FusionStats};
use crate::instance::{InstanceError, InstanceInfo, InstanceMap};
use crate::raster::{self, ClassCatalog, Image, LabelMap, RasterError};

pub const LABELS_FILE: &str = "labels.png";
pub const CONFIDENCE_FILE: &str = "confidence.png";
pub const RELIABLE_FILE: &str = "reliable.png";
pub const UNCERTAINTY_FILE: &str = "uncertainty.png";
pub const STATS_FILE: &str = "stats.json";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Raster { path: PathBuf, source: RasterError },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{}: {message}", path.display())]
    Invalid { path: PathBuf, message: String },
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
}

fn read(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(|source| IoError::Io {
        path: path.into(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| IoError::Io {
            path: parent.into(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| IoError::Io {
        path: path.into(),
        source,
    })
}

fn raster_err(path: &Path) -> impl FnOnce(RasterError) -> IoError + '_ {
    move |source| IoError::Raster {
        path: path.into(),
        source,
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    serde_json::from_slice(&read(path)?).map_err(|source| IoError::Json {
        path: path.into(),
        source,
    })
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_vec_pretty(value).map_err(|source| IoError::Json {
        path: path.into(),
        source,
    })?;
    text.push(b'\n');
    write(path, &text)
}

pub fn read_label_map(path: &Path, catalog: &ClassCatalog) -> Result<LabelMap, IoError> {
    raster::decode_label_map(&read(path)?, catalog).map_err(raster_err(path))
}

pub fn write_label_map(path: &Path, map: &LabelMap, catalog: &ClassCatalog) -> Result<(), IoError> {
    let bytes = raster::encode_label_map(map, catalog).map_err(raster_err(path))?;
    write(path, &bytes)
}

pub fn read_image(path: &Path) -> Result<Image, IoError> {
    raster::decode_image(&read(path)?).map_err(raster_err(path))
}

pub fn write_image(path: &Path, img: &Image) -> Result<(), IoError> {
    let bytes = raster::encode_image(img).map_err(raster_err(path))?;
    write(path, &bytes)
}

pub fn save_fused(dir: &Path, r: &FusedResult, catalog: &ClassCatalog) -> Result<(), IoError> {
    write_label_map(&dir.join(LABELS_FILE), &r.labels, catalog)?;
    let conf = dir.join(CONFIDENCE_FILE);
    let bytes = raster::encode_gray16(r.width(), r.height(), &r.confidence.to_fixed16())
        .map_err(raster_err(&conf))?;
    write(&conf, &bytes)?;
    let rel = dir.join(RELIABLE_FILE);
    let bytes = raster::encode_bitmask(&r.reliable).map_err(raster_err(&rel))?;
    write(&rel, &bytes)?;
    write_json(&dir.join(STATS_FILE), &r.stats)
}

/// Loads a fused result. Confidence comes back quantized to 1/65535; the
/// reliability raster is authoritative.
pub fn load_fused(dir: &Path, catalog: &ClassCatalog) -> Result<FusedResult, IoError> {
    let labels = read_label_map(&dir.join(LABELS_FILE), catalog)?;
    let conf_path = dir.join(CONFIDENCE_FILE);
    let (w, h, values) = raster::decode_gray16(&read(&conf_path)?).map_err(raster_err(&conf_path))?;
    let confidence = ConfidenceGrid::from_fixed16(w, h, &values).expect("decoder sizes the buffer");
    let rel_path = dir.join(RELIABLE_FILE);
    let reliable = raster::decode_bitmask(&read(&rel_path)?).map_err(raster_err(&rel_path))?;
    let result = FusedResult::from_parts(labels, confidence, reliable)?;
    let stats_path = dir.join(STATS_FILE);
    if stats_path.exists() {
        let stored: FusionStats = read_json(&stats_path)?;
        if stored.reliable_pixels != result.stats.reliable_pixels
            || stored.total_pixels != result.stats.total_pixels
        {
            return Err(IoError::Invalid {
                path: stats_path,
                message: "stats record disagrees with the reliability raster".into(),
            });
        }
    }
    Ok(result)
}

pub fn save_uncertainty(dir: &Path, r: &FusedResult, catalog: &ClassCatalog) -> Result<LabelMap, IoError> {
    let map = uncertainty_map(r);
    write_label_map(&dir.join(UNCERTAINTY_FILE), &map, catalog)?;
    Ok(map)
}

/// Writes `<stem>.png` (16-bit ids) and `<stem>.json` (instance table).
pub fn save_instances(dir: &Path, stem: &str, map: &InstanceMap) -> Result<(), IoError> {
    let png = dir.join(format!("{stem}.png"));
    let ids: Vec<u16> = map
        .ids()
        .iter()
        .map(|&id| {
            u16::try_from(id).map_err(|_| IoError::Invalid {
                path: png.clone(),
                message: format!("instance id {id} does not fit a 16-bit raster"),
            })
        })
        .collect::<Result<_, _>>()?;
    let bytes = raster::encode_gray16(map.width(), map.height(), &ids).map_err(raster_err(&png))?;
    write(&png, &bytes)?;
    write_json(&dir.join(format!("{stem}.json")), &map.summary())
}

pub fn load_instances(dir: &Path, stem: &str) -> Result<InstanceMap, IoError> {
    let png = dir.join(format!("{stem}.png"));
    let (w, h, ids) = raster::decode_gray16(&read(&png)?).map_err(raster_err(&png))?;
    let table: Vec<InstanceInfo> = read_json(&dir.join(format!("{stem}.json")))?;
    let table: BTreeMap<u32, u8> = table.into_iter().map(|i| (i.id, i.class)).collect();
    Ok(InstanceMap::new(
        w,
        h,
        ids.into_iter().map(u32::from).collect(),
        table,
    )?)
}

/// `*.png` files of a directory keyed by file stem, sorted.
pub fn list_pngs(dir: &Path) -> Result<BTreeMap<String, PathBuf>, IoError> {
    let rd = fs::read_dir(dir).map_err(|source| IoError::Io {
        path: dir.into(),
        source,
    })?;
    let mut out = BTreeMap::new();
    for entry in rd {
        let path = entry
            .map_err(|source| IoError::Io {
                path: dir.into(),
                source,
            })?
            .path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) && path.is_file() {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Subdirectories of `dir` keyed by name, sorted.
pub fn list_subdirs(dir: &Path) -> Result<BTreeMap<String, PathBuf>, IoError> {
    let rd = fs::read_dir(dir).map_err(|source| IoError::Io {
        path: dir.into(),
        source,
    })?;
    let mut out = BTreeMap::new();
    for entry in rd.flatten() {
        let path = entry.path();
        if path.is_dir() {
            if let Some(name) = path.file_name().and_then(|s| s.to_str()) {
                out.insert(name.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}
