use std::collections::BTreeMap;
use std::fs;

use anyhow::{Context, Result};

use segfuse_core::catalog::{self, Split, WeatherVocabulary, DEFAULT_WEATHER_TAGS};
use segfuse_core::instance::{apply_instance_edits, split_instances, InstanceEdit};
use segfuse_core::io as seg_io;
use segfuse_core::privacy::{self, BBox};
use segfuse_core::raster::ClassCatalog;

use crate::util::{self, par_map, Table};
use crate::{BlurArgs, InstancesArgs, SplitArgs};

pub fn vocabulary(extra: &[String]) -> WeatherVocabulary {
    WeatherVocabulary::new(
        DEFAULT_WEATHER_TAGS
            .iter()
            .map(|s| s.to_string())
            .chain(extra.iter().map(|s| s.trim().to_string())),
    )
}

pub fn instance_classes(names: &[String], catalog: &ClassCatalog) -> Result<std::collections::BTreeSet<u8>> {
    if names.is_empty() {
        Ok(catalog.default_instance_classes())
    } else {
        util::parse_classes(names, catalog)
    }
}

pub fn instances(a: InstancesArgs, catalog: &ClassCatalog) -> Result<()> {
    util::require_dir(&a.labels)?;
    if let Some(e) = &a.edits {
        util::require_dir(e)?;
    }
    let classes = instance_classes(&a.classes, catalog)?;
    let files: Vec<(String, std::path::PathBuf)> = util::pngs(&a.labels)?.into_iter().collect();
    let rows = par_map(&files, |(id, path)| {
        let labels = seg_io::read_label_map(path, catalog)?;
        let mut map = split_instances(&labels, &classes);
        let mut warnings = Vec::new();
        if let Some(dir) = &a.edits {
            let p = dir.join(format!("{id}.json"));
            if p.exists() {
                let edits: Vec<InstanceEdit> = seg_io::read_json(&p)?;
                let (m, w) = apply_instance_edits(&map, &edits)
                    .with_context(|| format!("{}", p.display()))?;
                map = m;
                warnings = w;
            }
        }
        seg_io::save_instances(&a.out, id, &map)?;
        Ok((map.instance_count(), warnings))
    })?;
    let mut t = Table::new(["image", "instances"]);
    for ((id, _), (n, warnings)) in files.iter().zip(&rows) {
        for w in warnings {
            eprintln!("warning: {id}: {w}");
        }
        t.row([id.clone(), n.to_string()]);
    }
    print!("{}", t.render());
    Ok(())
}

pub fn split(a: SplitArgs) -> Result<()> {
    util::require_file(&a.manifest)?;
    let vocab = vocabulary(&a.weather);
    let entries = catalog::load_manifest(&a.manifest, &vocab)
        .with_context(|| format!("{}", a.manifest.display()))?;
    let out = catalog::split_dataset(&entries, a.ratios, a.seed)?;
    catalog::save_manifest(&out, a.out.as_deref().unwrap_or(&a.manifest))?;
    let mut counts: BTreeMap<Split, usize> = BTreeMap::new();
    for e in &out {
        *counts.entry(e.split).or_default() += 1;
    }
    let mut t = Table::new(["split", "images"]);
    for s in [Split::Train, Split::Val, Split::Test] {
        t.row([format!("{s:?}").to_uppercase(), counts.get(&s).copied().unwrap_or(0).to_string()]);
    }
    print!("{}", t.render());
    Ok(())
}

pub fn blur(a: BlurArgs) -> Result<()> {
    util::require_dir(&a.images)?;
    util::require_file(&a.boxes)?;
    let records = privacy::parse_box_records(&util::read_text(&a.boxes)?)
        .with_context(|| format!("{}", a.boxes.display()))?;
    let mut by_image: BTreeMap<&str, Vec<BBox>> = BTreeMap::new();
    for r in &records {
        by_image.entry(&r.image_id).or_default().push(r.bbox());
    }
    let files = util::pngs(&a.images)?;
    if let Some(id) = by_image.keys().find(|id| !files.contains_key(**id)) {
        anyhow::bail!("boxes refer to unknown image '{id}'");
    }
    let files: Vec<(String, std::path::PathBuf)> = files.into_iter().collect();
    fs::create_dir_all(&a.out)?;
    let counts = par_map(&files, |(id, path)| {
        let dst = a.out.join(format!("{id}.png"));
        match by_image.get(id.as_str()) {
            None => {
                fs::copy(path, &dst).with_context(|| format!("copying {}", path.display()))?;
                Ok(0)
            }
            Some(boxes) => {
                let img = seg_io::read_image(path)?;
                let out = privacy::blur_regions(&img, boxes, a.kernel).with_context(|| id.clone())?;
                seg_io::write_image(&dst, &out)?;
                Ok(boxes.len())
            }
        }
    })?;
    let mut t = Table::new(["image", "boxes"]);
    for ((id, _), n) in files.iter().zip(&counts) {
        t.row([id.clone(), n.to_string()]);
    }
    print!("{}", t.render());
    Ok(())
}
