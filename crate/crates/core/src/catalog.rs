//! Dataset manifest: one JSON record per line describing an image, its
//! weather tags, split assignment and annotation status.
//!
//! Records keep fields they do not recognize, and a record that was not
//! modified since it was loaded is written back byte-for-byte.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_WEATHER_TAGS: [&str; 5] = ["rainy", "droplet", "fog", "night", "sunny"];

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("line {line}: duplicate image_id '{id}'")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: unknown weather tag '{tag}'")]
    UnknownWeather { line: usize, tag: String },
    #[error("line {line}: '{id}' is FINALIZED but has no semantic_ref")]
    MissingSemantic { line: usize, id: String },
    #[error("invalid split ratios {0:?}")]
    Ratios([u32; 3]),
    #[error("cannot split an empty manifest")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Split {
    Train,
    Val,
    Test,
    #[default]
    Unassigned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    #[default]
    Raw,
    Fused,
    Annotating,
    Finalized,
}

/// Allowed weather tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeatherVocabulary(BTreeSet<String>);

impl WeatherVocabulary {
    pub fn new<I, S>(tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self(tags.into_iter().map(Into::into).collect())
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.0.contains(tag)
    }
}

impl Default for WeatherVocabulary {
    fn default() -> Self {
        Self::new(DEFAULT_WEATHER_TAGS)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub image_ref: String,
    #[serde(default)]
    pub weather: BTreeSet<String>,
    #[serde(default)]
    pub split: Split,
    #[serde(default)]
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_ref: Option<String>,
    /// Fields this version does not know about.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
    #[serde(skip)]
    source: Option<String>,
}

impl PartialEq for ManifestEntry {
    fn eq(&self, o: &Self) -> bool {
        self.image_id == o.image_id
            && self.image_ref == o.image_ref
            && self.weather == o.weather
            && self.split == o.split
            && self.status == o.status
            && self.semantic_ref == o.semantic_ref
            && self.instance_ref == o.instance_ref
            && self.extra == o.extra
    }
}

impl ManifestEntry {
    pub fn new(image_id: impl Into<String>, image_ref: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            image_ref: image_ref.into(),
            weather: BTreeSet::new(),
            split: Split::Unassigned,
            status: Status::Raw,
            semantic_ref: None,
            instance_ref: None,
            extra: serde_json::Map::new(),
            source: None,
        }
    }

    pub fn with_weather<I: IntoIterator<Item = &'static str>>(mut self, tags: I) -> Self {
        self.weather = tags.into_iter().map(String::from).collect();
        self
    }

    pub fn has_weather(&self, tag: &str) -> bool {
        self.weather.contains(tag)
    }

    /// Canonical single-line encoding.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("manifest entries always serialize")
    }

    fn line_for_save(&self) -> String {
        if let Some(src) = &self.source {
            if serde_json::from_str::<ManifestEntry>(src).is_ok_and(|e| e == *self) {
                return src.clone();
            }
        }
        self.to_line()
    }
}

/// Parses manifest text. Line numbers in errors are 1-based; blank lines are
/// skipped.
pub fn parse_manifest(
    text: &str,
    vocab: &WeatherVocabulary,
) -> Result<Vec<ManifestEntry>, CatalogError> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut e: ManifestEntry = serde_json::from_str(raw).map_err(|err| CatalogError::Record {
            line,
            message: err.to_string(),
        })?;
        if let Some(tag) = e.weather.iter().find(|t| !vocab.contains(t)) {
            return Err(CatalogError::UnknownWeather {
                line,
                tag: tag.clone(),
            });
        }
        if e.status == Status::Finalized && e.semantic_ref.is_none() {
            return Err(CatalogError::MissingSemantic {
                line,
                id: e.image_id,
            });
        }
        if !ids.insert(e.image_id.clone()) {
            return Err(CatalogError::DuplicateId {
                line,
                id: e.image_id,
            });
        }
        e.source = Some(raw.to_string());
        out.push(e);
    }
    Ok(out)
}

pub fn load_manifest(
    path: &Path,
    vocab: &WeatherVocabulary,
) -> Result<Vec<ManifestEntry>, CatalogError> {
    parse_manifest(&fs::read_to_string(path)?, vocab)
}

/// Serializes entries, one per line. Fails on entries that would not load
/// back (duplicate ids, finalized without a semantic map).
pub fn write_manifest(entries: &[ManifestEntry]) -> Result<String, CatalogError> {
    let mut ids = BTreeSet::new();
    let mut out = String::new();
    for (n, e) in entries.iter().enumerate() {
        if !ids.insert(e.image_id.as_str()) {
            return Err(CatalogError::DuplicateId {
                line: n + 1,
                id: e.image_id.clone(),
            });
        }
        if e.status == Status::Finalized && e.semantic_ref.is_none() {
            return Err(CatalogError::MissingSemantic {
                line: n + 1,
                id: e.image_id.clone(),
            });
        }
        out.push_str(&e.line_for_save());
        out.push('\n');
    }
    Ok(out)
}

/// Writes the manifest through a temporary file so readers never observe a
/// partial file.
pub fn save_manifest(entries: &[ManifestEntry], path: &Path) -> Result<(), CatalogError> {
    let text = write_manifest(entries)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Assigns TRAIN/VAL/TEST after a seeded shuffle.
///
/// Each split receives `floor(n * r / sum(r))` entries; what is left over
/// goes to TRAIN first, then VAL. Entry order is preserved in the output.
pub fn split_dataset(
    entries: &[ManifestEntry],
    ratios: [u32; 3],
    seed: u64,
) -> Result<Vec<ManifestEntry>, CatalogError> {
    if entries.is_empty() {
        return Err(CatalogError::Empty);
    }
    if ratios.contains(&0) {
        return Err(CatalogError::Ratios(ratios));
    }
    let n = entries.len() as u64;
    let total: u64 = ratios.iter().map(|&r| r as u64).sum();
    let mut sizes = ratios.map(|r| (n * r as u64 / total) as usize);
    let mut rest = entries.len() - sizes.iter().sum::<usize>();
    let mut i = 0;
    while rest > 0 {
        sizes[i % 2] += 1;
        rest -= 1;
        i += 1;
    }

    let mut order: Vec<usize> = (0..entries.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut out = entries.to_vec();
    for (pos, &idx) in order.iter().enumerate() {
        out[idx].split = if pos < sizes[0] {
            Split::Train
        } else if pos < sizes[0] + sizes[1] {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(out)
}

/// Conjunctive predicate over weather, split and status. The default filter
/// matches everything.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntryFilter {
    pub weather_all: BTreeSet<String>,
    pub weather_none: BTreeSet<String>,
    pub split: Option<Split>,
    pub status: Option<Status>,
}

impl EntryFilter {
    pub fn matches(&self, e: &ManifestEntry) -> bool {
        self.weather_all.iter().all(|t| e.weather.contains(t))
            && !self.weather_none.iter().any(|t| e.weather.contains(t))
            && self.split.is_none_or(|s| s == e.split)
            && self.status.is_none_or(|s| s == e.status)
    }
}

pub fn filter_entries(entries: &[ManifestEntry], filter: &EntryFilter) -> Vec<ManifestEntry> {
    entries.iter().filter(|e| filter.matches(e)).cloned().collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSummary {
    pub images: usize,
    pub weather: BTreeMap<String, usize>,
    pub split: BTreeMap<Split, usize>,
    pub status: BTreeMap<Status, usize>,
}

pub fn summarize(entries: &[ManifestEntry]) -> ManifestSummary {
    let mut s = ManifestSummary {
        images: entries.len(),
        ..Default::default()
    };
    for e in entries {
        for t in &e.weather {
            *s.weather.entry(t.clone()).or_default() += 1;
        }
        *s.split.entry(e.split).or_default() += 1;
        *s.status.entry(e.status).or_default() += 1;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(n: usize) -> Vec<ManifestEntry> {
        (0..n)
            .map(|i| ManifestEntry::new(format!("img{i:04}"), format!("images/img{i:04}.png")))
            .collect()
    }

    fn sizes(v: &[ManifestEntry]) -> (usize, usize, usize) {
        let c = |s| v.iter().filter(|e| e.split == s).count();
        (c(Split::Train), c(Split::Val), c(Split::Test))
    }

    #[test]
    fn split_sizes() {
        assert_eq!(sizes(&split_dataset(&entries(10), [7, 1, 2], 1).unwrap()), (7, 1, 2));
        assert_eq!(sizes(&split_dataset(&entries(11), [7, 1, 2], 1).unwrap()), (8, 1, 2));
        // 9 -> floors (6, 0, 1), two left over: one to TRAIN, one to VAL
        assert_eq!(sizes(&split_dataset(&entries(9), [7, 1, 2], 1).unwrap()), (7, 1, 1));
        assert_eq!(sizes(&split_dataset(&entries(1), [7, 1, 2], 1).unwrap()), (1, 0, 0));
    }

    #[test]
    fn split_is_seeded() {
        let a = split_dataset(&entries(50), [7, 1, 2], 42).unwrap();
        let b = split_dataset(&entries(50), [7, 1, 2], 42).unwrap();
        let c = split_dataset(&entries(50), [7, 1, 2], 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(
            a.iter().map(|e| &e.image_id).collect::<Vec<_>>(),
            entries(50).iter().map(|e| &e.image_id).collect::<Vec<_>>()
        );
    }

    #[test]
    fn split_errors() {
        assert!(matches!(split_dataset(&[], [7, 1, 2], 0), Err(CatalogError::Empty)));
        assert!(matches!(
            split_dataset(&entries(3), [7, 0, 2], 0),
            Err(CatalogError::Ratios(_))
        ));
    }

    #[test]
    fn unknown_fields_survive_byte_for_byte() {
        let text = "{\"image_id\":\"a\",  \"image_ref\":\"a.png\",\"weather\":[\"rainy\"],\"route\":17}\n\
                    {\"image_id\":\"b\",\"image_ref\":\"b.png\",\"weather\":[\"night\",\"rainy\"]}\n";
        let vocab = WeatherVocabulary::default();
        let parsed = parse_manifest(text, &vocab).unwrap();
        assert_eq!(parsed[0].extra["route"], 17);
        assert_eq!(write_manifest(&parsed).unwrap(), text);

        let night = EntryFilter {
            weather_all: ["night".to_string()].into(),
            ..Default::default()
        };
        let kept = filter_entries(&parsed, &night);
        assert_eq!(write_manifest(&kept).unwrap(), text.lines().nth(1).unwrap().to_string() + "\n");

        let mut changed = parsed.clone();
        changed[0].status = Status::Fused;
        let out = write_manifest(&changed).unwrap();
        assert!(out.starts_with("{\"image_id\":\"a\",\"image_ref\":\"a.png\""));
        assert!(out.lines().next().unwrap().contains("\"route\":17"));
        assert_eq!(parse_manifest(&out, &vocab).unwrap(), changed);
    }

    #[test]
    fn load_errors() {
        let vocab = WeatherVocabulary::default();
        let dup = "{\"image_id\":\"a\",\"image_ref\":\"x\"}\n\n{\"image_id\":\"a\",\"image_ref\":\"y\"}\n";
        match parse_manifest(dup, &vocab).unwrap_err() {
            CatalogError::DuplicateId { line, id } => assert_eq!((line, id.as_str()), (3, "a")),
            e => panic!("{e}"),
        }
        let tag = "{\"image_id\":\"a\",\"image_ref\":\"x\",\"weather\":[\"hail\"]}";
        match parse_manifest(tag, &vocab).unwrap_err() {
            CatalogError::UnknownWeather { line, tag } => assert_eq!((line, tag.as_str()), (1, "hail")),
            e => panic!("{e}"),
        }
        assert!(parse_manifest(tag, &WeatherVocabulary::new(["hail"])).is_ok());
        let fin = "{\"image_id\":\"a\",\"image_ref\":\"x\",\"status\":\"FINALIZED\"}";
        assert!(matches!(
            parse_manifest(fin, &vocab).unwrap_err(),
            CatalogError::MissingSemantic { line: 1, .. }
        ));
        assert!(matches!(
            parse_manifest("{\"image_id\":\"a\"}", &vocab).unwrap_err(),
            CatalogError::Record { line: 1, .. }
        ));
    }

    #[test]
    fn filters() {
        let all = vec![
            ManifestEntry::new("a", "a").with_weather(["rainy", "night"]),
            ManifestEntry::new("b", "b").with_weather(["rainy"]),
            ManifestEntry::new("c", "c").with_weather(["sunny"]),
        ];
        let rainy_night = EntryFilter {
            weather_all: ["rainy".to_string(), "night".to_string()].into(),
            ..Default::default()
        };
        let got = filter_entries(&all, &rainy_night);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].image_id, "a");
        assert_eq!(filter_entries(&all, &EntryFilter::default()), all);
        let contradiction = EntryFilter {
            weather_all: ["rainy".to_string()].into(),
            weather_none: ["rainy".to_string()].into(),
            ..Default::default()
        };
        assert!(filter_entries(&all, &contradiction).is_empty());
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let mut v = entries(5);
        v[2].status = Status::Finalized;
        v[2].semantic_ref = Some("gt/img0002.png".into());
        save_manifest(&v, &path).unwrap();
        assert_eq!(load_manifest(&path, &WeatherVocabulary::default()).unwrap(), v);
        let s = summarize(&v);
        assert_eq!(s.status[&Status::Finalized], 1);
        assert_eq!(s.split[&Split::Unassigned], 5);
    }
}
