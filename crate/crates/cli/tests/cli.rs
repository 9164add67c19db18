mod common;

use std::fs;
use std::path::Path;

use serde_json::Value;

use common::{ok, p, segfuse};
use segfuse_core::catalog::{self, ManifestEntry, Split, WeatherVocabulary};
use segfuse_core::io as seg_io;
use segfuse_core::raster::{ClassCatalog, Image, LabelMap};

const SUBCOMMANDS: [&str; 13] = [
    "fuse",
    "uncertainty",
    "merge",
    "instances",
    "eval-miou",
    "eval-ap",
    "eval-disagree",
    "masked-l1",
    "stats",
    "split",
    "blur",
    "weights-search",
    "serve",
];

fn write_map(path: &Path, data: Vec<u8>, w: usize) {
    let h = data.len() / w;
    let m = LabelMap::new(w, h, data).unwrap();
    seg_io::write_label_map(path, &m, &ClassCatalog::cityscapes()).unwrap();
}

/// Four predictor dirs over a 2x2 image whose pixels replay the single-pixel
/// fusion cases: unanimous 3, (A,A,B,B), (A,B,B,B), (A,A,A,B).
fn hand_predictors(root: &Path) -> Vec<String> {
    let (a, b) = (7, 11);
    let per_method = [[3, a, a, a], [3, a, b, a], [3, b, b, a], [3, b, b, b]];
    (0..4)
        .map(|k| {
            let d = root.join(format!("m{k}"));
            write_map(&d.join("hand.png"), per_method[k].to_vec(), 2);
            write_map(&d.join("flat.png"), vec![5; 6], 3);
            d.to_str().unwrap().to_string()
        })
        .collect()
}

fn fuse_args<'a>(preds: &'a [String], out: &'a str) -> Vec<&'a str> {
    let mut args = vec!["fuse", "--weights", "0.4,0.3,0.2,0.1", "--alpha", "0.7", "--out", out];
    for d in preds {
        args.extend(["--pred", d.as_str()]);
    }
    args
}

fn manifest(path: &Path, n: usize) {
    let entries: Vec<ManifestEntry> = (0..n)
        .map(|i| ManifestEntry::new(format!("img{i:02}"), format!("images/img{i:02}.png")))
        .collect();
    catalog::save_manifest(&entries, path).unwrap();
}

fn read_report(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn help_for_every_subcommand() {
    assert!(segfuse(&["--help"]).status.success());
    for sub in SUBCOMMANDS {
        let out = segfuse(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"), "{sub}");
    }
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        vec!["fuse", "--bogus"],
        vec!["frobnicate"],
        vec!["split", "--manifest", "m.jsonl"],
        vec!["split", "--manifest", "m.jsonl", "--seed", "1", "--ratios", "7:1"],
        vec!["blur", "--images", "a", "--boxes", "b", "--out", "c", "--kernel", "x"],
    ] {
        assert_eq!(segfuse(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn domain_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let preds = hand_predictors(dir.path());
    let out = dir.path().join("out");
    let missing = dir.path().join("missing");
    let cases: Vec<Vec<&str>> = vec![
        vec!["fuse", "--pred", &preds[0], "--pred", p(&missing), "--weights", "0.5,0.5", "--out", p(&out)],
        vec!["fuse", "--pred", &preds[0], "--pred", &preds[1], "--weights", "0.6,0.6", "--out", p(&out)],
        vec!["fuse", "--pred", &preds[0], "--pred", &preds[1], "--weights", "0.5,0.5", "--alpha", "0", "--out", p(&out)],
        vec!["fuse", "--pred", &preds[0], "--pred", &preds[1], "--weights", "0.2,0.3,0.5", "--out", p(&out)],
        vec!["eval-miou", "--pred", p(&missing), "--gt", &preds[0]],
        vec!["stats"],
        vec!["--jobs", "0", "stats", "--labels", &preds[0]],
        vec!["blur", "--images", &preds[0], "--boxes", &preds[0], "--kernel", "4", "--out", p(&out)],
    ];
    for args in cases {
        let o = segfuse(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "), "{args:?}");
    }
}

#[test]
fn fuse_emits_rasters_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let preds = hand_predictors(dir.path());
    let out = dir.path().join("fused");
    let stdout = ok(&fuse_args(&preds, p(&out)));
    assert!(stdout.contains("hand"));

    let cat = ClassCatalog::cityscapes();
    for f in [seg_io::LABELS_FILE, seg_io::CONFIDENCE_FILE, seg_io::RELIABLE_FILE, seg_io::STATS_FILE] {
        assert!(out.join("hand").join(f).is_file(), "{f}");
    }
    let r = seg_io::load_fused(&out.join("hand"), &cat).unwrap();
    assert_eq!(r.labels.data(), &[3, 7, 11, 7]);
    assert_eq!(r.reliable.bits(), &[true, false, false, true]);
    let conf = r.confidence.scores();
    assert!((conf[0] - 1.0).abs() < 1e-4 && (conf[1] - 0.7).abs() < 1e-4);
    assert!((conf[2] - 0.6).abs() < 1e-4 && (conf[3] - 0.9).abs() < 1e-4);

    let report = read_report(&out.join("fusion.json"));
    assert_eq!(report["images"]["hand"]["reliable_pixels"], 2);
    assert_eq!(report["images"]["flat"]["reliable_pixels"], 6);
    assert_eq!(report["mean_reliable_fraction"], 0.75);

    let unc = dir.path().join("unc");
    ok(&["uncertainty", "--fused", p(&out), "--out", p(&unc)]);
    let map = seg_io::read_label_map(&unc.join("hand.png"), &cat).unwrap();
    assert_eq!(map.data(), &[3, 255, 255, 7]);
}

#[test]
fn fuse_accepts_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let preds = hand_predictors(dir.path());
    let cfg = dir.path().join("fusion.json");
    fs::write(&cfg, r#"{"methods":["a","b","c","d"],"weights":[0.4,0.3,0.2,0.1],"alpha":0.5}"#).unwrap();
    let out = dir.path().join("fused");
    let mut args = vec!["fuse", "--config", p(&cfg), "--out", p(&out)];
    for d in &preds {
        args.extend(["--pred", d.as_str()]);
    }
    ok(&args);
    let r = seg_io::load_fused(&out.join("hand"), &ClassCatalog::cityscapes()).unwrap();
    assert_eq!(r.reliable.bits(), &[true, true, true, true]);
}

#[test]
fn merge_requires_full_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let preds = hand_predictors(dir.path());
    let fused = dir.path().join("fused");
    ok(&fuse_args(&preds, p(&fused)));
    let edits = dir.path().join("edits");
    fs::create_dir_all(&edits).unwrap();
    let out = dir.path().join("final");

    fs::write(edits.join("hand.json"), r#"[{"row":0,"col_start":1,"col_end":2,"label":2}]"#).unwrap();
    let o = segfuse(&["merge", "--fused", p(&fused), "--edits", p(&edits), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("1 uncertain pixels") && err.contains("row 1, col 0"), "{err}");

    fs::write(
        edits.join("hand.json"),
        r#"{"edits":[{"row":0,"col_start":1,"col_end":2,"label":2},{"row":1,"col_start":0,"col_end":2,"label":1}]}"#,
    )
    .unwrap();
    ok(&["merge", "--fused", p(&fused), "--edits", p(&edits), "--out", p(&out)]);
    let cat = ClassCatalog::cityscapes();
    // the edit also overwrites the reliable pixel it covers
    assert_eq!(seg_io::read_label_map(&out.join("hand.png"), &cat).unwrap().data(), &[3, 2, 1, 1]);
    assert_eq!(seg_io::read_label_map(&out.join("flat.png"), &cat).unwrap().data(), &[5; 6]);

    fs::write(edits.join("hand.json"), r#"[{"row":2,"col_start":0,"col_end":1,"label":2}]"#).unwrap();
    assert_eq!(segfuse(&["merge", "--fused", p(&fused), "--edits", p(&edits), "--out", p(&out)]).status.code(), Some(1));
}

#[test]
fn eval_miou_identity_and_grid() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt");
    write_map(&gt.join("x.png"), vec![0, 0, 1, 1], 2);
    write_map(&gt.join("y.png"), vec![2, 255, 2, 3], 2);
    let report = dir.path().join("miou.json");
    let stdout = ok(&["eval-miou", "--pred", p(&gt), "--gt", p(&gt), "--report", p(&report)]);
    assert!(stdout.contains("mIoU: 1.000000"), "{stdout}");
    assert_eq!(read_report(&report)["overall"]["mean_iou"], 1.0);

    let pred = dir.path().join("pred");
    write_map(&pred.join("x.png"), vec![0, 0, 0, 0], 2);
    write_map(&pred.join("y.png"), vec![2, 0, 2, 3], 2);
    ok(&["eval-miou", "--pred", p(&pred), "--gt", p(&gt), "--report", p(&report)]);
    // dataset totals: class 0 2/4, class 1 0/2, class 2 2/2, class 3 1/1
    let v = read_report(&report)["overall"]["mean_iou"].as_f64().unwrap();
    assert!((v - 2.5 / 4.0).abs() < 1e-12, "{v}");

    let grid = dir.path().join("grid");
    let gt_grid = dir.path().join("gtgrid");
    for test in ["s1", "s2"] {
        write_map(&gt_grid.join(test).join("x.png"), vec![0, 0, 1, 1], 2);
        for (train, data) in [("tA", vec![0, 0, 1, 1]), ("tB", vec![0, 0, 0, 0])] {
            write_map(&grid.join(train).join(test).join("x.png"), data, 2);
        }
    }
    ok(&["eval-miou", "--grid", "--pred", p(&grid), "--gt", p(&gt_grid), "--report", p(&report)]);
    let m = read_report(&report);
    assert_eq!(m["tA"]["s1"], 1.0);
    assert_eq!(m["tB"]["s2"], 0.25);
}

#[test]
fn split_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.jsonl");
    manifest(&m, 10);
    let (o1, o2) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    for out in [&o1, &o2] {
        let stdout = ok(&["split", "--manifest", p(&m), "--ratios", "7:1:2", "--seed", "42", "--out", p(out)]);
        assert!(stdout.contains("TRAIN"));
    }
    assert_eq!(fs::read(&o1).unwrap(), fs::read(&o2).unwrap());
    let entries = catalog::load_manifest(&o1, &WeatherVocabulary::default()).unwrap();
    let count = |s| entries.iter().filter(|e| e.split == s).count();
    assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (7, 1, 2));

    // in-place rewrite with another seed still gives 7/1/2
    ok(&["split", "--manifest", p(&m), "--seed", "7"]);
    let entries = catalog::load_manifest(&m, &WeatherVocabulary::default()).unwrap();
    assert_eq!(entries.iter().filter(|e| e.split == Split::Train).count(), 7);
}

#[test]
fn jobs_do_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let truth = common::truth_16();
    let root = dir.path();
    let mut preds = Vec::new();
    for img in 0..6 {
        let maps = common::predictors(&truth, [0.05, 0.2, 0.35, 0.3], 100 + img);
        preds = common::write_predictors(root, &format!("im{img}"), &maps);
    }
    let preds: Vec<String> = preds.iter().map(|d| p(d).to_string()).collect();
    let mut outputs = Vec::new();
    for jobs in ["1", "4"] {
        let out = root.join(format!("fused{jobs}"));
        let mut args = vec!["--jobs", jobs];
        args.extend(fuse_args(&preds, p(&out)));
        ok(&args);
        let unc = root.join(format!("unc{jobs}"));
        ok(&["--jobs", jobs, "uncertainty", "--fused", p(&out), "--out", p(&unc)]);
        let mut files = Vec::new();
        for img in 0..6 {
            let id = format!("im{img}");
            for f in [seg_io::LABELS_FILE, seg_io::CONFIDENCE_FILE, seg_io::RELIABLE_FILE, seg_io::STATS_FILE] {
                files.push(fs::read(out.join(&id).join(f)).unwrap());
            }
            files.push(fs::read(unc.join(format!("{id}.png"))).unwrap());
        }
        files.push(fs::read(out.join("fusion.json")).unwrap());
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn instances_stats_and_ap() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("labels");
    // two car blobs touching diagonally plus a separate person
    #[rustfmt::skip]
    let map = vec![
        13, 0, 0, 0,
        0, 13, 0, 11,
        0, 0, 0, 11,
        12, 0, 0, 0,
    ];
    write_map(&labels.join("s.png"), map, 4);
    let inst = dir.path().join("inst");
    ok(&["instances", "--labels", p(&labels), "--out", p(&inst)]);
    let m = seg_io::load_instances(&inst, "s").unwrap();
    assert_eq!(m.instance_count(), 3);
    assert_eq!(m.class_of(1), Some(13));

    let edits = dir.path().join("iedits");
    fs::create_dir_all(&edits).unwrap();
    fs::write(edits.join("s.json"), r#"[{"kind":"MERGE","ids":[2,1]}]"#).unwrap();
    let merged = dir.path().join("merged");
    let o = segfuse(&["instances", "--labels", p(&labels), "--edits", p(&edits), "--out", p(&merged)]);
    // ids 1 and 2 have different classes
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));

    let report = dir.path().join("ap.json");
    let stdout = ok(&["eval-ap", "--pred", p(&inst), "--gt", p(&inst), "--report", p(&report)]);
    assert!(stdout.contains("AP: 1.000000"), "{stdout}");
    let r = read_report(&report);
    assert_eq!(r["mean_ap"], 1.0);
    assert_eq!(r["thresholds"].as_array().unwrap().len(), 10);

    let stats = dir.path().join("stats.json");
    ok(&["stats", "--labels", p(&labels), "--instances", p(&inst), "--report", p(&stats)]);
    let s = read_report(&stats);
    assert_eq!(s["labels"]["per_class"]["13"]["segments"], 1);
    assert_eq!(s["labels"]["per_class"]["13"]["instances"], 1);
    assert_eq!(s["labels"]["per_class"]["0"]["pixels"], 11);

    let m = dir.path().join("m.jsonl");
    fs::write(
        &m,
        "{\"image_id\":\"a\",\"image_ref\":\"a.png\",\"weather\":[\"rainy\",\"night\"]}\n{\"image_id\":\"b\",\"image_ref\":\"b.png\",\"weather\":[\"hail\"]}\n",
    )
    .unwrap();
    assert_eq!(segfuse(&["stats", "--manifest", p(&m)]).status.code(), Some(1));
    let stdout = ok(&["stats", "--manifest", p(&m), "--weather", "hail"]);
    assert!(stdout.contains("images: 2"), "{stdout}");
}

#[test]
fn disagreement_and_masked_l1() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    write_map(&a.join("x.png"), vec![1, 2, 3, 4], 2);
    write_map(&b.join("x.png"), vec![1, 2, 3, 5], 2);
    let stdout = ok(&["eval-disagree", "--a", p(&a), "--b", p(&b)]);
    assert!(stdout.contains("mean disagreement: 0.250000"), "{stdout}");
    let stdout = ok(&["eval-disagree", "--a", p(&a), "--b", p(&b), "--exclude", "4,255"]);
    assert!(stdout.contains("mean disagreement: 0.000000"), "{stdout}");

    let (x, y, l) = (dir.path().join("x.png"), dir.path().join("y.png"), dir.path().join("l.png"));
    seg_io::write_image(&x, &Image::filled(1, 1, [100, 100, 100])).unwrap();
    seg_io::write_image(&y, &Image::filled(1, 1, [110, 90, 100])).unwrap();
    write_map(&l, vec![0], 1);
    let report = dir.path().join("l1.json");
    let stdout = ok(&["masked-l1", "--x", p(&x), "--y", p(&y), "--labels", p(&l), "--report", p(&report)]);
    assert!(stdout.contains("masked L1: 40"), "{stdout}");
    assert_eq!(read_report(&report)["distance"], 40.0);
}

#[test]
fn blur_only_touches_boxes() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    let mut img = Image::filled(5, 3, [50, 60, 70]);
    img.set_pixel(1, 1, [0, 0, 0]);
    img.set_pixel(1, 2, [30, 30, 30]);
    img.set_pixel(1, 3, [0, 0, 0]);
    seg_io::write_image(&images.join("a.png"), &img).unwrap();
    seg_io::write_image(&images.join("b.png"), &img).unwrap();
    let boxes = dir.path().join("boxes.jsonl");
    fs::write(
        &boxes,
        "# one plate\n{\"image_id\":\"a\",\"row\":1,\"col\":1,\"height\":1,\"width\":3,\"kind\":\"plate\"}\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    ok(&["blur", "--images", p(&images), "--boxes", p(&boxes), "--kernel", "3", "--out", p(&out)]);
    let a = seg_io::read_image(&out.join("a.png")).unwrap();
    for c in 1..4 {
        assert_eq!(a.pixel(1, c), [10, 10, 10]);
    }
    for (r, c) in [(0, 0), (1, 0), (1, 4), (2, 2)] {
        assert_eq!(a.pixel(r, c), img.pixel(r, c));
    }
    assert_eq!(fs::read(out.join("b.png")).unwrap(), fs::read(images.join("b.png")).unwrap());

    fs::write(&boxes, "{\"image_id\":\"zz\",\"row\":0,\"col\":0,\"height\":1,\"width\":1,\"kind\":\"face\"}\n").unwrap();
    assert_eq!(segfuse(&["blur", "--images", p(&images), "--boxes", p(&boxes), "--out", p(&out)]).status.code(), Some(1));
    fs::write(&boxes, "{\"image_id\":\"a\",\"row\":2,\"col\":0,\"height\":2,\"width\":1,\"kind\":\"face\"}\n").unwrap();
    assert_eq!(segfuse(&["blur", "--images", p(&images), "--boxes", p(&boxes), "--out", p(&out)]).status.code(), Some(1));
}

#[test]
fn weights_search_prefers_accurate_predictor() {
    let dir = tempfile::tempdir().unwrap();
    let truth = common::truth_16();
    let maps = common::predictors(&truth, [0.02, 0.3, 0.3, 0.3], 5);
    let preds = common::write_predictors(dir.path(), "w", &maps);
    let report = dir.path().join("ranked.json");
    let mut args = vec!["weights-search", "--step", "0.1", "--alpha", "0.7", "--top", "3", "--report", p(&report)];
    for d in &preds {
        args.extend(["--pred", p(d)]);
    }
    let stdout = ok(&args);
    // header, rule and three rows
    assert_eq!(stdout.lines().count(), 5, "{stdout}");
    let ranked = read_report(&report);
    // 286 points on the 4-simplex at step 0.1
    let rows = ranked.as_array().unwrap();
    assert_eq!(rows.len(), 286);
    let scores: Vec<f64> = rows.iter().map(|r| r["mean_reliable_fraction"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    let top: Vec<f64> = ranked[0]["weights"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let best = top.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(top[0], best, "{top:?}");
}
