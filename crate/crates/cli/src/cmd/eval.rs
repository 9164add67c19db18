use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use segfuse_core::catalog::{self, ManifestSummary};
use segfuse_core::io as seg_io;
use segfuse_core::metrics::{
    self, APReport, IoUAccumulator, IoUReport, MaskedDistanceConfig, StatsAccumulator, StatsReport,
    DEFAULT_AP_THRESHOLDS,
};
use segfuse_core::raster::ClassCatalog;

use crate::cmd::data::{instance_classes, vocabulary};
use crate::util::{self, par_map, pct, Table};
use crate::{EvalApArgs, EvalDisagreeArgs, EvalMiouArgs, MaskedL1Args, StatsArgs};

fn class_label(catalog: &ClassCatalog, id: u8) -> String {
    match catalog.get(id) {
        Some(c) => c.name.clone(),
        None => format!("#{id}"),
    }
}

/// Confusion counts of every `<id>.png` in `gt` against the same file in `pred`.
fn accumulate(pred: &Path, gt: &Path, ignore: u8, catalog: &ClassCatalog) -> Result<(IoUAccumulator, BTreeMap<String, f64>)> {
    let ids: Vec<String> = util::common_ids(&[gt.to_path_buf(), pred.to_path_buf()])?;
    let parts = par_map(&ids, |id| {
        let file = format!("{id}.png");
        let p = seg_io::read_label_map(&pred.join(&file), catalog)?;
        let g = seg_io::read_label_map(&gt.join(&file), catalog)?;
        let mut acc = IoUAccumulator::new(ignore);
        acc.add(&p, &g).with_context(|| id.clone())?;
        Ok(acc)
    })?;
    let mut total = IoUAccumulator::new(ignore);
    let mut per_image = BTreeMap::new();
    for (id, acc) in ids.into_iter().zip(&parts) {
        per_image.insert(id, acc.report().mean_iou);
        total.merge(acc);
    }
    Ok((total, per_image))
}

#[derive(Serialize)]
struct MiouReport {
    per_image: BTreeMap<String, f64>,
    overall: IoUReport,
}

pub fn miou(a: EvalMiouArgs, catalog: &ClassCatalog) -> Result<()> {
    util::require_dir(&a.pred)?;
    util::require_dir(&a.gt)?;
    if a.grid {
        return miou_grid(&a, catalog);
    }
    let (acc, per_image) = accumulate(&a.pred, &a.gt, a.ignore, catalog)?;
    let overall = acc.report();
    let mut t = Table::new(["class", "intersection", "union", "IoU %"]);
    for (c, v) in &overall.per_class {
        t.row([
            class_label(catalog, *c),
            v.intersection.to_string(),
            v.union.to_string(),
            v.iou.map(pct).unwrap_or_else(|| "-".into()),
        ]);
    }
    print!("{}", t.render());
    println!("images: {}", per_image.len());
    println!("mIoU: {:.6}", overall.mean_iou);
    util::write_report(a.report.as_deref(), &MiouReport { per_image, overall })
}

fn miou_grid(a: &EvalMiouArgs, catalog: &ClassCatalog) -> Result<()> {
    let tests: Vec<String> = seg_io::list_subdirs(&a.gt)?.into_keys().collect();
    let trains: Vec<(String, PathBuf)> = seg_io::list_subdirs(&a.pred)?.into_iter().collect();
    if tests.is_empty() || trains.is_empty() {
        bail!("--grid needs <train>/<test>/ prediction and <test>/ ground-truth subdirectories");
    }
    let mut matrix: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut t = Table::new(std::iter::once("train \\ test".to_string()).chain(tests.iter().cloned()));
    for (train, dir) in &trains {
        let mut row = vec![train.clone()];
        for test in &tests {
            let pred = dir.join(test);
            if pred.is_dir() {
                let (acc, _) = accumulate(&pred, &a.gt.join(test), a.ignore, catalog)
                    .with_context(|| format!("{train}/{test}"))?;
                let m = acc.report().mean_iou;
                matrix.entry(train.clone()).or_default().insert(test.clone(), m);
                row.push(pct(m));
            } else {
                row.push("-".into());
            }
        }
        t.row(row);
    }
    println!("mIoU %");
    print!("{}", t.render());
    util::write_report(a.report.as_deref(), &matrix)
}

#[derive(Serialize)]
struct ApSummary {
    thresholds: Vec<f64>,
    classes: BTreeSet<u8>,
    per_image: BTreeMap<String, APReport>,
    /// Mean over images whose ground truth holds an evaluated class.
    mean_ap: f64,
}

pub fn ap(a: EvalApArgs, catalog: &ClassCatalog) -> Result<()> {
    util::require_dir(&a.pred)?;
    util::require_dir(&a.gt)?;
    let classes = instance_classes(&a.classes, catalog)?;
    let thresholds = if a.thresholds.is_empty() {
        DEFAULT_AP_THRESHOLDS.to_vec()
    } else {
        a.thresholds.clone()
    };
    let ids = util::common_ids(&[a.gt.clone(), a.pred.clone()])?;
    let reports = par_map(&ids, |id| {
        let p = seg_io::load_instances(&a.pred, id)?;
        let g = seg_io::load_instances(&a.gt, id)?;
        metrics::instance_ap(&p, &g, &classes, &thresholds).with_context(|| id.clone())
    })?;
    let scored: Vec<f64> = reports
        .iter()
        .filter(|r| !r.per_class.is_empty())
        .map(|r| r.ap)
        .collect();
    let mean_ap = if scored.is_empty() {
        0.0
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    };

    let mut t = Table::new(["image", "AP %", "matches"]);
    for (id, r) in ids.iter().zip(&reports) {
        t.row([id.clone(), pct(r.ap), r.matched_pairs.len().to_string()]);
    }
    print!("{}", t.render());
    println!("AP: {mean_ap:.6}");
    let summary = ApSummary {
        thresholds,
        classes,
        per_image: ids.into_iter().zip(reports).collect(),
        mean_ap,
    };
    util::write_report(a.report.as_deref(), &summary)
}

#[derive(Serialize)]
struct DisagreeReport {
    per_image: BTreeMap<String, f64>,
    mean: f64,
}

pub fn disagree(a: EvalDisagreeArgs, catalog: &ClassCatalog) -> Result<()> {
    util::require_dir(&a.a)?;
    util::require_dir(&a.b)?;
    let exclude: BTreeSet<u8> = a.exclude.iter().copied().collect();
    let ids = util::common_ids(&[a.a.clone(), a.b.clone()])?;
    let values = par_map(&ids, |id| {
        let file = format!("{id}.png");
        let x = seg_io::read_label_map(&a.a.join(&file), catalog)?;
        let y = seg_io::read_label_map(&a.b.join(&file), catalog)?;
        metrics::disagreement_fraction(&x, &y, &exclude).with_context(|| id.clone())
    })?;
    let mean = if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    };
    let mut t = Table::new(["image", "disagree %"]);
    for (id, v) in ids.iter().zip(&values) {
        t.row([id.clone(), pct(*v)]);
    }
    print!("{}", t.render());
    println!("mean disagreement: {mean:.6}");
    util::write_report(
        a.report.as_deref(),
        &DisagreeReport {
            per_image: ids.into_iter().zip(values).collect(),
            mean,
        },
    )
}

pub fn masked_l1(a: MaskedL1Args, catalog: &ClassCatalog) -> Result<()> {
    for p in [&a.x, &a.y, &a.labels] {
        util::require_file(p)?;
    }
    let cfg = match &a.config {
        Some(p) => seg_io::read_json::<MaskedDistanceConfig>(p)?,
        None => MaskedDistanceConfig::default(),
    };
    let x = seg_io::read_image(&a.x)?;
    let y = seg_io::read_image(&a.y)?;
    let labels = seg_io::read_label_map(&a.labels, catalog)?;
    let d = metrics::masked_weighted_l1(&x, &y, &labels, &cfg)?;
    println!("masked L1: {d}");
    util::write_report(a.report.as_deref(), &serde_json::json!({ "distance": d }))
}

#[derive(Serialize)]
struct StatsOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    manifest: Option<ManifestSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<StatsReport>,
}

pub fn stats(a: StatsArgs, catalog: &ClassCatalog) -> Result<()> {
    if a.manifest.is_none() && a.labels.is_none() {
        bail!("give --manifest, --labels or both");
    }
    let mut out = StatsOutput {
        manifest: None,
        labels: None,
    };
    if let Some(m) = &a.manifest {
        util::require_file(m)?;
        let entries = catalog::load_manifest(m, &vocabulary(&a.weather))
            .with_context(|| format!("{}", m.display()))?;
        let s = catalog::summarize(&entries);
        println!("images: {}", s.images);
        let mut t = Table::new(["weather", "images"]);
        for (w, n) in &s.weather {
            t.row([w.clone(), n.to_string()]);
        }
        print!("{}", t.render());
        let mut t = Table::new(["split", "images"]);
        for (k, n) in &s.split {
            t.row([format!("{k:?}").to_uppercase(), n.to_string()]);
        }
        print!("{}", t.render());
        let mut t = Table::new(["status", "images"]);
        for (k, n) in &s.status {
            t.row([format!("{k:?}").to_uppercase(), n.to_string()]);
        }
        print!("{}", t.render());
        out.manifest = Some(s);
    }
    if let Some(dir) = &a.labels {
        util::require_dir(dir)?;
        if let Some(i) = &a.instances {
            util::require_dir(i)?;
        }
        let files: Vec<(String, PathBuf)> = util::pngs(dir)?.into_iter().collect();
        let parts = par_map(&files, |(id, path)| {
            let labels = seg_io::read_label_map(path, catalog)?;
            let inst = match &a.instances {
                Some(d) if d.join(format!("{id}.png")).exists() => Some(seg_io::load_instances(d, id)?),
                _ => None,
            };
            let mut acc = StatsAccumulator::new();
            acc.add(&labels, inst.as_ref());
            Ok(acc.finish())
        })?;
        let mut acc = StatsAccumulator::new();
        for p in &parts {
            acc.merge(p);
        }
        let r = acc.finish();
        println!("label maps: {}", r.images);
        let mut t = Table::new(["class", "pixels", "segments", "instances"]);
        for (c, s) in &r.per_class {
            t.row([
                class_label(catalog, *c),
                s.pixels.to_string(),
                s.segments.to_string(),
                s.instances.to_string(),
            ]);
        }
        print!("{}", t.render());
        out.labels = Some(r);
    }
    util::write_report(a.report.as_deref(), &out)
}
