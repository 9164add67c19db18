//! Straightforward reference implementations used to check the library.
//! They favour obviousness over speed and share no code with it.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use segfuse_core::instance::InstanceMap;
use segfuse_core::raster::{Image, LabelMap};

pub const EPS: f64 = 1e-9;

pub struct FuseOut {
    pub labels: Vec<u8>,
    pub confidence: Vec<f64>,
    pub reliable: Vec<bool>,
}

/// Scores every candidate label at every pixel; ties go to the label voted
/// by the heaviest method, then the lowest method index.
pub fn fuse(masks: &[LabelMap], weights: &[f64], alpha: f64) -> FuseOut {
    let (w, h) = (masks[0].width(), masks[0].height());
    let mut by_priority: Vec<usize> = (0..masks.len()).collect();
    by_priority.sort_by(|&a, &b| weights[b].partial_cmp(&weights[a]).unwrap().then(a.cmp(&b)));
    let mut out = FuseOut {
        labels: Vec::new(),
        confidence: Vec::new(),
        reliable: Vec::new(),
    };
    for r in 0..h {
        for c in 0..w {
            let mut candidates: Vec<u8> = masks.iter().map(|m| m.get(r, c)).collect();
            candidates.sort_unstable();
            candidates.dedup();
            let mut scores = Vec::new();
            for label in candidates {
                let mut s = 0.0;
                for (m, wt) in masks.iter().zip(weights) {
                    if m.get(r, c) == label {
                        s += wt;
                    }
                }
                scores.push((label, s));
            }
            let best = scores.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
            let tied: Vec<u8> = scores
                .iter()
                .filter(|x| x.1 >= best - EPS)
                .map(|x| x.0)
                .collect();
            let winner = by_priority
                .iter()
                .map(|&k| masks[k].get(r, c))
                .find(|l| tied.contains(l))
                .unwrap();
            let s = scores.iter().find(|x| x.0 == winner).unwrap().1;
            out.labels.push(winner);
            out.confidence.push(s);
            out.reliable.push(s > alpha + EPS);
        }
    }
    out
}

/// Breadth-first flood fill over 8-neighbours with equal `key`; ids follow
/// the scanline order of each component's first pixel.
pub fn flood_components(w: usize, h: usize, key: impl Fn(usize) -> Option<u32>) -> (Vec<u32>, u32) {
    let mut ids = vec![0u32; w * h];
    let mut next = 0;
    for start in 0..w * h {
        let Some(k) = key(start) else { continue };
        if ids[start] != 0 {
            continue;
        }
        next += 1;
        ids[start] = next;
        let mut q = VecDeque::from([start]);
        while let Some(p) = q.pop_front() {
            let (r, c) = ((p / w) as i64, (p % w) as i64);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                        continue;
                    }
                    let n = nr as usize * w + nc as usize;
                    if ids[n] == 0 && key(n) == Some(k) {
                        ids[n] = next;
                        q.push_back(n);
                    }
                }
            }
        }
    }
    (ids, next)
}

/// `class -> (intersection, union)` plus the mean over nonzero unions.
/// Pixels whose ground truth is `ignore` are skipped; 255 is never a class.
pub fn miou(pred: &LabelMap, gt: &LabelMap, ignore: u8) -> (BTreeMap<u8, (u64, u64)>, f64) {
    let mut per = BTreeMap::new();
    for class in 0..=254u8 {
        if class == ignore {
            continue;
        }
        let (mut i, mut u) = (0u64, 0u64);
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g == ignore {
                continue;
            }
            let (a, b) = (p == class, g == class);
            i += (a && b) as u64;
            u += (a || b) as u64;
        }
        if u > 0 {
            per.insert(class, (i, u));
        }
    }
    let mean = if per.is_empty() {
        0.0
    } else {
        per.values().map(|&(i, u)| i as f64 / u as f64).sum::<f64>() / per.len() as f64
    };
    (per, mean)
}

pub fn disagreement(a: &LabelMap, b: &LabelMap, exclude: &BTreeSet<u8>) -> f64 {
    let mut n = 0;
    let mut d = 0;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        if exclude.contains(&x) || exclude.contains(&y) {
            continue;
        }
        n += 1;
        if x != y {
            d += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        d as f64 / n as f64
    }
}

fn pixel_iou(pred: &InstanceMap, p: u32, gt: &InstanceMap, g: u32) -> f64 {
    let (mut i, mut u) = (0u64, 0u64);
    for (&a, &b) in pred.ids().iter().zip(gt.ids()) {
        i += (a == p && b == g) as u64;
        u += (a == p || b == g) as u64;
    }
    i as f64 / u as f64
}

/// Runs a separate greedy matching for every threshold.
pub fn instance_ap(pred: &InstanceMap, gt: &InstanceMap, classes: &BTreeSet<u8>, thresholds: &[f64]) -> f64 {
    let mut scores = Vec::new();
    for &class in classes {
        let gts: Vec<u32> = gt.table().iter().filter(|e| *e.1 == class).map(|e| *e.0).filter(|id| gt.ids().contains(id)).collect();
        if gts.is_empty() {
            continue;
        }
        let preds: Vec<u32> = pred.table().iter().filter(|e| *e.1 == class).map(|e| *e.0).filter(|id| pred.ids().contains(id)).collect();
        let mut all = Vec::new();
        for &p in &preds {
            for &g in &gts {
                all.push((pixel_iou(pred, p, gt, g), p, g));
            }
        }
        let mut per_t = 0.0;
        for &t in thresholds {
            let mut pairs: Vec<(f64, u32, u32)> =
                all.iter().copied().filter(|x| x.0 > 0.0 && x.0 >= t).collect();
            pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let (mut up, mut ug) = (BTreeSet::new(), BTreeSet::new());
            let mut tp = 0;
            for (_, p, g) in pairs {
                if !up.contains(&p) && !ug.contains(&g) {
                    up.insert(p);
                    ug.insert(g);
                    tp += 1;
                }
            }
            let fp = preds.len() - tp;
            let fn_ = gts.len() - tp;
            per_t += tp as f64 / (tp + fp + fn_) as f64;
        }
        scores.push(per_t / thresholds.len() as f64);
    }
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

/// `sum_i lambda_i / p_i * sum |x - y|` with `group(label)` giving the
/// taxonomy index of a label, or `None` to skip it.
pub fn masked_l1(x: &Image, y: &Image, labels: &LabelMap, lambda: &[f64], group: impl Fn(u8) -> Option<usize>) -> f64 {
    let mut total = 0.0;
    for (t, &lam) in lambda.iter().enumerate() {
        let mut p = 0.0;
        let mut s = 0.0;
        for r in 0..labels.height() {
            for c in 0..labels.width() {
                if group(labels.get(r, c)) != Some(t) {
                    continue;
                }
                p += 1.0;
                let (a, b) = (x.pixel(r, c), y.pixel(r, c));
                for ch in 0..3 {
                    s += (a[ch] as f64 - b[ch] as f64).abs();
                }
            }
        }
        if p > 0.0 {
            total += lam / p * s;
        }
    }
    total
}

/// Naive `k x k` mean with coordinates clamped to the box, boxes applied in
/// order.
pub fn blur(img: &Image, boxes: &[(usize, usize, usize, usize)], k: impl Fn(usize, usize) -> usize) -> Image {
    let mut out = img.clone();
    for &(row, col, bh, bw) in boxes {
        let src = out.clone();
        let k = k(bh, bw) as i64;
        let r = k / 2;
        for i in 0..bh as i64 {
            for j in 0..bw as i64 {
                let mut px = [0u8; 3];
                for (ch, v) in px.iter_mut().enumerate() {
                    let mut sum = 0.0;
                    for di in -r..=r {
                        for dj in -r..=r {
                            let si = (i + di).clamp(0, bh as i64 - 1) as usize + row;
                            let sj = (j + dj).clamp(0, bw as i64 - 1) as usize + col;
                            sum += src.pixel(si, sj)[ch] as f64;
                        }
                    }
                    *v = (sum / (k * k) as f64).round() as u8;
                }
                out.set_pixel(row + i as usize, col + j as usize, px);
            }
        }
    }
    out
}
