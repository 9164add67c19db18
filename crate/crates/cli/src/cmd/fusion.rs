use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use segfuse_core::fusion::{self, EditOp, FusionConfig, FusionError, FusionStats, WeightScore};
use segfuse_core::io as seg_io;
use segfuse_core::raster::{ClassCatalog, LabelMap};

use crate::util::{self, par_map, pct, Table};
use crate::{FuseArgs, MergeArgs, UncertaintyArgs, WeightsSearchArgs};

#[derive(Serialize)]
struct FuseReport<'a> {
    config: &'a FusionConfig,
    images: BTreeMap<&'a str, &'a FusionStats>,
    mean_reliable_fraction: f64,
}

fn load_predictions(dirs: &[std::path::PathBuf], id: &str, catalog: &ClassCatalog) -> Result<Vec<LabelMap>> {
    dirs.iter()
        .map(|d| Ok(seg_io::read_label_map(&d.join(format!("{id}.png")), catalog)?))
        .collect()
}

pub fn fuse(a: FuseArgs, catalog: &ClassCatalog) -> Result<()> {
    for d in &a.preds {
        util::require_dir(d)?;
    }
    let cfg = match &a.config {
        Some(p) => {
            util::require_file(p)?;
            seg_io::read_json::<FusionConfig>(p)?
        }
        None => FusionConfig::from_weights(a.weights.clone(), a.alpha)?,
    };
    if cfg.num_methods() != a.preds.len() {
        bail!(
            "{} prediction directories for {} weights",
            a.preds.len(),
            cfg.num_methods()
        );
    }
    let ids = util::common_ids(&a.preds)?;
    let results = par_map(&ids, |id| {
        let masks = load_predictions(&a.preds, id, catalog)?;
        let r = fusion::fuse(&masks, &cfg).with_context(|| format!("fusing {id}"))?;
        seg_io::save_fused(&a.out.join(id), &r, catalog)?;
        Ok(r.stats)
    })?;

    let mean = if results.is_empty() {
        0.0
    } else {
        results.iter().map(|s| s.reliable_fraction).sum::<f64>() / results.len() as f64
    };
    let report = FuseReport {
        config: &cfg,
        images: ids.iter().map(String::as_str).zip(&results).collect(),
        mean_reliable_fraction: mean,
    };
    util::write_report(Some(&a.out.join("fusion.json")), &report)?;

    let mut t = Table::new(["image", "pixels", "reliable", "reliable %"]);
    for (id, s) in ids.iter().zip(&results) {
        t.row([
            id.clone(),
            s.total_pixels.to_string(),
            s.reliable_pixels.to_string(),
            pct(s.reliable_fraction),
        ]);
    }
    print!("{}", t.render());
    println!("mean reliable %: {}", pct(mean));
    Ok(())
}

pub fn uncertainty(a: UncertaintyArgs, catalog: &ClassCatalog) -> Result<()> {
    util::require_dir(&a.fused)?;
    let dirs: Vec<(String, std::path::PathBuf)> = seg_io::list_subdirs(&a.fused)?.into_iter().collect();
    let counts = par_map(&dirs, |(id, dir)| {
        let r = seg_io::load_fused(dir, catalog)?;
        let map = fusion::uncertainty_map(&r);
        seg_io::write_label_map(&a.out.join(format!("{id}.png")), &map, catalog)?;
        Ok(r.unreliable_count())
    })?;
    let mut t = Table::new(["image", "uncertain"]);
    for ((id, _), n) in dirs.iter().zip(&counts) {
        t.row([id.clone(), n.to_string()]);
    }
    print!("{}", t.render());
    Ok(())
}

/// Edit files hold either a bare list or `{"edits": [...]}`.
fn read_edits(path: &Path) -> Result<Vec<EditOp>> {
    #[derive(serde::Deserialize)]
    #[serde(untagged)]
    enum Doc {
        List(Vec<EditOp>),
        Wrapped { edits: Vec<EditOp> },
    }
    Ok(match seg_io::read_json::<Doc>(path)? {
        Doc::List(e) | Doc::Wrapped { edits: e } => e,
    })
}

pub fn merge(a: MergeArgs, catalog: &ClassCatalog) -> Result<()> {
    util::require_dir(&a.fused)?;
    util::require_dir(&a.edits)?;
    let dirs: Vec<(String, std::path::PathBuf)> = seg_io::list_subdirs(&a.fused)?.into_iter().collect();
    let applied = par_map(&dirs, |(id, dir)| {
        let r = seg_io::load_fused(dir, catalog)?;
        let path = a.edits.join(format!("{id}.json"));
        let edits = if path.exists() { read_edits(&path)? } else { Vec::new() };
        fusion::validate_edits(&edits, r.width(), r.height(), Some(catalog))
            .with_context(|| format!("{}", path.display()))?;
        let map = fusion::merge_manual(&r, &edits).map_err(|e| match e {
            FusionError::Unresolved { count, first, .. } => anyhow::anyhow!(
                "{id}: {count} uncertain pixels not covered by edits, first at (row {}, col {})",
                first.0,
                first.1
            ),
            other => anyhow::Error::new(other).context(id.clone()),
        })?;
        seg_io::write_label_map(&a.out.join(format!("{id}.png")), &map, catalog)?;
        Ok(edits.len())
    })?;
    let mut t = Table::new(["image", "edits"]);
    for ((id, _), n) in dirs.iter().zip(&applied) {
        t.row([id.clone(), n.to_string()]);
    }
    print!("{}", t.render());
    Ok(())
}

pub fn weights_search(a: WeightsSearchArgs, catalog: &ClassCatalog) -> Result<()> {
    for d in &a.preds {
        util::require_dir(d)?;
    }
    let ids = util::common_ids(&a.preds)?;
    let sets = par_map(&ids, |id| load_predictions(&a.preds, id, catalog))?;
    let ranked: Vec<WeightScore> = fusion::weight_search(&sets, a.step, a.alpha)?;
    util::write_report(a.report.as_deref(), &ranked)?;
    let mut t = Table::new(["rank", "weights", "reliable %"]);
    for (i, s) in ranked.iter().take(a.top).enumerate() {
        let w: Vec<String> = s.weights.iter().map(|w| format!("{w:.2}")).collect();
        t.row([(i + 1).to_string(), w.join(","), pct(s.mean_reliable_fraction)]);
    }
    print!("{}", t.render());
    Ok(())
}
