use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use segfuse_core::io as seg_io;
use segfuse_core::raster::ClassCatalog;

pub fn require_dir(p: &Path) -> Result<()> {
    if !p.is_dir() {
        bail!("directory not found: {}", p.display());
    }
    Ok(())
}

pub fn require_file(p: &Path) -> Result<()> {
    if !p.is_file() {
        bail!("file not found: {}", p.display());
    }
    Ok(())
}

pub fn load_catalog(path: Option<&Path>) -> Result<ClassCatalog> {
    match path {
        None => Ok(ClassCatalog::cityscapes()),
        Some(p) => seg_io::read_json(p).with_context(|| "loading class catalog"),
    }
}

/// `<id>.png` files of `dir`.
pub fn pngs(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    Ok(seg_io::list_pngs(dir)?)
}

/// Ids present in `first`, each required to exist in every other directory.
pub fn common_ids(dirs: &[PathBuf]) -> Result<Vec<String>> {
    let listed: Vec<BTreeMap<String, PathBuf>> =
        dirs.iter().map(|d| pngs(d)).collect::<Result<_>>()?;
    let Some(first) = listed.first() else {
        bail!("no input directories");
    };
    for (d, l) in dirs.iter().zip(&listed).skip(1) {
        if let Some(id) = first.keys().find(|id| !l.contains_key(*id)) {
            bail!("{} has no {id}.png", d.display());
        }
    }
    Ok(first.keys().cloned().collect())
}

/// Maps `f` over `items` in parallel; results keep input order and the
/// first error (in input order) is returned.
pub fn par_map<T, R, F>(items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    items.par_iter().map(f).collect::<Vec<_>>().into_iter().collect()
}

pub fn write_report<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    if let Some(p) = path {
        seg_io::write_json(p, value)?;
    }
    Ok(())
}

pub fn parse_ratios(s: &str) -> Result<[u32; 3], String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("expected three ratios like 7:1:2, got '{s}'"));
    }
    let mut out = [0u32; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p
            .trim()
            .parse()
            .map_err(|_| format!("ratio '{p}' is not a positive integer"))?;
    }
    Ok(out)
}

/// Class names or numeric ids, comma separated.
pub fn parse_classes(list: &[String], catalog: &ClassCatalog) -> Result<BTreeSet<u8>> {
    list.iter()
        .map(|s| {
            let s = s.trim();
            if let Ok(id) = s.parse::<u8>() {
                if catalog.contains(id) {
                    return Ok(id);
                }
                bail!("class id {id} is not in the catalog");
            }
            catalog
                .id_of(s)
                .with_context(|| format!("unknown class '{s}'"))
        })
        .collect()
}

pub fn read_text(p: &Path) -> Result<String> {
    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

/// Plain text table with right-aligned columns after the first.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row<S: Into<String>>(&mut self, cells: impl IntoIterator<Item = S>) {
        self.rows.push(cells.into_iter().map(Into::into).collect());
    }

    pub fn render(&self) -> String {
        let n = self.header.len();
        let mut width = vec![0; n];
        for r in std::iter::once(&self.header).chain(&self.rows) {
            for (w, c) in width.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |cells: &[String], out: &mut String| {
            let mut parts = Vec::with_capacity(n);
            for (i, w) in width.iter().enumerate() {
                let c = cells.get(i).map(String::as_str).unwrap_or("");
                parts.push(if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                });
            }
            out.push_str(parts.join("  ").trim_end());
            out.push('\n');
        };
        line(&self.header, &mut out);
        let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
        out.push_str(&rule.join("  "));
        out.push('\n');
        for r in &self.rows {
            line(r, &mut out);
        }
        out
    }
}

pub fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}
