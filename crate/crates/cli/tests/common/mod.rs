#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segfuse_core::fusion::EditOp;
use segfuse_core::io as seg_io;
use segfuse_core::raster::{ClassCatalog, LabelMap, SENTINEL};

pub fn segfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segfuse"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> String {
    let out = segfuse(args);
    assert!(
        out.status.success(),
        "segfuse {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Street-like 16x16 truth: road bottom half, sky top rows, a car, a person
/// and vegetation.
pub fn truth_16() -> LabelMap {
    let mut m = LabelMap::filled(16, 16, 0);
    for r in 0..4 {
        for c in 0..16 {
            m.set(r, c, 10);
        }
    }
    for r in 4..8 {
        for c in 0..16 {
            m.set(r, c, if c < 6 { 8 } else { 2 });
        }
    }
    for r in 9..13 {
        for c in 2..7 {
            m.set(r, c, 13);
        }
        for c in 10..12 {
            m.set(r, c, 11);
        }
    }
    m
}

/// Four predictors of `truth`. Every pixel is corrupted in at most one of
/// them, predictor `k` at rate `rates[k]` of the pixels.
pub fn predictors(truth: &LabelMap, rates: [f64; 4], seed: u64) -> Vec<LabelMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![truth.clone(); 4];
    for i in 0..truth.len() {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, &r) in rates.iter().enumerate() {
            acc += r;
            if u < acc {
                let wrong = (truth.data()[i] + rng.random_range(1..19)) % 19;
                out[k].data_mut()[i] = wrong;
                break;
            }
        }
    }
    out
}

pub fn write_predictors(root: &Path, image_id: &str, preds: &[LabelMap]) -> Vec<PathBuf> {
    let cat = ClassCatalog::cityscapes();
    (0..preds.len())
        .map(|k| {
            let d = root.join(format!("pred{k}"));
            seg_io::write_label_map(&d.join(format!("{image_id}.png")), &preds[k], &cat).unwrap();
            d
        })
        .collect()
}

/// One edit per horizontal run of sentinel pixels, painted with `truth`.
pub fn edits_from_uncertainty(unc: &LabelMap, truth: &LabelMap) -> Vec<EditOp> {
    let mut edits = Vec::new();
    for r in 0..unc.height() {
        let mut c = 0;
        while c < unc.width() {
            if unc.get(r, c) != SENTINEL {
                c += 1;
                continue;
            }
            let start = c;
            let label = truth.get(r, c);
            while c < unc.width() && unc.get(r, c) == SENTINEL && truth.get(r, c) == label {
                c += 1;
            }
            edits.push(EditOp::new(r, start, c, label));
        }
    }
    edits
}
