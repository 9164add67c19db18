//! Normalized box-filter blurring of face and license-plate regions.
//!
//! Inside a box every channel becomes the unweighted mean of its `k x k`
//! neighborhood. Neighborhood coordinates are clamped to the box, so values
//! from outside the box never leak in and the box edge is replicated.
//! Sums are exact integers and the mean is rounded half up.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Image;

#[derive(Debug, Error, PartialEq)]
pub enum PrivacyError {
    #[error("kernel size {0} must be odd and at least 3")]
    Kernel(usize),
    #[error("box {0} does not fit inside the {1}x{2} image")]
    OutOfBounds(BBox, usize, usize),
    #[error("box {0} is empty")]
    EmptyBox(BBox),
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(row {}, col {}, {}x{})",
            self.row, self.col, self.height, self.width
        )
    }
}

impl BBox {
    pub fn new(row: usize, col: usize, height: usize, width: usize) -> Self {
        Self {
            row,
            col,
            height,
            width,
        }
    }

    fn check(&self, img_w: usize, img_h: usize) -> Result<(), PrivacyError> {
        if self.height == 0 || self.width == 0 {
            return Err(PrivacyError::EmptyBox(*self));
        }
        if self.row + self.height > img_h || self.col + self.width > img_w {
            return Err(PrivacyError::OutOfBounds(*self, img_w, img_h));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    Fixed(usize),
    /// Scale with the box: largest odd `k <= max(3, min(h, w) / 4)`.
    Auto,
}

impl FromStr for Kernel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Kernel::Auto);
        }
        s.parse::<usize>()
            .map(Kernel::Fixed)
            .map_err(|_| format!("kernel must be 'auto' or an odd integer, got '{s}'"))
    }
}

pub fn auto_kernel(b: &BBox) -> usize {
    let k = (b.height.min(b.width) / 4).max(3);
    if k.is_multiple_of(2) {
        k - 1
    } else {
        k
    }
}

fn kernel_for(kernel: Kernel, b: &BBox) -> usize {
    match kernel {
        Kernel::Fixed(k) => k,
        Kernel::Auto => auto_kernel(b),
    }
}

/// `round_half_up(sum / area)` in integers.
#[inline]
pub(crate) fn rounded_mean(sum: u64, area: u64) -> u8 {
    ((2 * sum + area) / (2 * area)) as u8
}

/// Blurs each box in list order; overlapping boxes see the output of
/// earlier ones. Pixels outside every box are copied unchanged.
pub fn blur_regions(img: &Image, boxes: &[BBox], kernel: Kernel) -> Result<Image, PrivacyError> {
    if let Kernel::Fixed(k) = kernel {
        if k < 3 || k % 2 == 0 {
            return Err(PrivacyError::Kernel(k));
        }
    }
    for b in boxes {
        b.check(img.width(), img.height())?;
    }
    let mut out = img.clone();
    for b in boxes {
        blur_box(&mut out, b, kernel_for(kernel, b));
    }
    Ok(out)
}

fn blur_box(img: &mut Image, b: &BBox, k: usize) {
    let r = k / 2;
    let (ph, pw) = (b.height + 2 * r, b.width + 2 * r);
    let area = (k * k) as u64;
    let img_w = img.width();
    // summed-area table over the edge-replicated box, one per channel
    let stride = pw + 1;
    let mut sat = vec![[0u64; 3]; (ph + 1) * stride];
    for i in 0..ph {
        let src_r = b.row + i.saturating_sub(r).min(b.height - 1);
        let mut run = [0u64; 3];
        for j in 0..pw {
            let src_c = b.col + j.saturating_sub(r).min(b.width - 1);
            let p = (src_r * img_w + src_c) * 3;
            for ch in 0..3 {
                run[ch] += img.data()[p + ch] as u64;
                sat[(i + 1) * stride + j + 1][ch] = sat[i * stride + j + 1][ch] + run[ch];
            }
        }
    }
    for i in 0..b.height {
        for j in 0..b.width {
            // window rows i..i+k, cols j..j+k in padded coordinates
            let (t, l, bo, ri) = (i, j, i + k, j + k);
            let mut px = [0u8; 3];
            for (ch, v) in px.iter_mut().enumerate() {
                let s = sat[bo * stride + ri][ch] + sat[t * stride + l][ch]
                    - sat[t * stride + ri][ch]
                    - sat[bo * stride + l][ch];
                *v = rounded_mean(s, area);
            }
            img.set_pixel(b.row + i, b.col + j, px);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxKind {
    Face,
    Plate,
}

/// One line of a boxes file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRecord {
    pub image_id: String,
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    pub kind: BoxKind,
}

impl BoxRecord {
    pub fn bbox(&self) -> BBox {
        BBox::new(self.row, self.col, self.height, self.width)
    }
}

/// Parses a line-delimited boxes file. Blank lines and `#` comments are
/// skipped; line numbers in errors are 1-based.
pub fn parse_box_records(text: &str) -> Result<Vec<BoxRecord>, PrivacyError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let rec: BoxRecord = serde_json::from_str(t).map_err(|e| PrivacyError::Record {
            line: n + 1,
            message: e.to_string(),
        })?;
        if rec.height == 0 || rec.width == 0 {
            return Err(PrivacyError::Record {
                line: n + 1,
                message: "box height and width must be at least 1".into(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}
