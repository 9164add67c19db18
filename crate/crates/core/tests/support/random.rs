//! Seeded generators for randomized checks.
#![allow(dead_code)]

use rand::{Rng, RngCore};

use segfuse_core::raster::{Image, LabelMap};

pub fn label_map<R: RngCore>(rng: &mut R, w: usize, h: usize, labels: u8) -> LabelMap {
    LabelMap::new(w, h, (0..w * h).map(|_| rng.random_range(0..labels)).collect()).unwrap()
}

/// Label map made of rectangles painted over a background, so that classes
/// form sizeable connected regions.
pub fn blocky_map<R: RngCore>(rng: &mut R, w: usize, h: usize, labels: u8, rects: usize) -> LabelMap {
    let mut m = LabelMap::filled(w, h, rng.random_range(0..labels));
    for _ in 0..rects {
        let (r0, c0) = (rng.random_range(0..h), rng.random_range(0..w));
        let (rh, cw) = (rng.random_range(1..=h - r0), rng.random_range(1..=w - c0));
        let l = rng.random_range(0..labels);
        for r in r0..r0 + rh {
            for c in c0..c0 + cw {
                m.set(r, c, l);
            }
        }
    }
    m
}

pub fn image<R: RngCore>(rng: &mut R, w: usize, h: usize) -> Image {
    let mut data = vec![0u8; w * h * 3];
    rng.fill_bytes(&mut data);
    Image::new(w, h, data).unwrap()
}

/// Positive weights summing to one (up to rounding).
pub fn weights<R: RngCore>(rng: &mut R, k: usize) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x / sum).collect();
        if (w.iter().sum::<f64>() - 1.0).abs() <= 1e-12 {
            return w;
        }
    }
}

pub fn size<R: RngCore>(rng: &mut R, max: usize) -> (usize, usize) {
    (rng.random_range(1..=max), rng.random_range(1..=max))
}
