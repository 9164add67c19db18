//! Pixel grids shared by every stage of the pipeline, plus their PNG codecs.
//!
//! All rasters are row-major with the origin at the top-left corner and are
//! addressed as `(row, col)`.

use std::borrow::Cow;
use std::collections::BTreeSet;
use std::io::Cursor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Label value reserved for "unlabeled / uncertain" pixels.
pub const SENTINEL: u8 = 255;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("buffer holds {actual} values but {width}x{height} needs {expected}")]
    BufferSize {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("malformed raster: {0}")]
    Format(String),
    #[error("label {value} at pixel ({row}, {col}) is not in the class catalog")]
    InvalidLabel { row: usize, col: usize, value: u8 },
    #[error("invalid class catalog: {0}")]
    Catalog(String),
    #[error("png encoding failed: {0}")]
    Encode(#[from] png::EncodingError),
}

impl From<png::DecodingError> for RasterError {
    fn from(e: png::DecodingError) -> Self {
        RasterError::Format(e.to_string())
    }
}

fn check_len(width: usize, height: usize, per_pixel: usize, actual: usize) -> Result<(), RasterError> {
    let expected = width * height * per_pixel;
    if expected != actual {
        return Err(RasterError::BufferSize {
            width,
            height,
            expected,
            actual,
        });
    }
    Ok(())
}

/// One semantic class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub id: u8,
    pub name: String,
    pub color: [u8; 3],
    /// Importance weight used by the masked image distances.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

fn default_lambda() -> f64 {
    1.0
}

/// Ordered set of classes with contiguous ids `0..m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CatalogDoc", into = "CatalogDoc")]
pub struct ClassCatalog {
    classes: Vec<ClassInfo>,
}

#[derive(Serialize, Deserialize)]
struct CatalogDoc {
    classes: Vec<ClassInfo>,
}

impl TryFrom<CatalogDoc> for ClassCatalog {
    type Error = RasterError;

    fn try_from(doc: CatalogDoc) -> Result<Self, Self::Error> {
        ClassCatalog::new(doc.classes)
    }
}

impl From<ClassCatalog> for CatalogDoc {
    fn from(c: ClassCatalog) -> Self {
        CatalogDoc { classes: c.classes }
    }
}

const CITYSCAPES: [(&str, [u8; 3]); 19] = [
    ("road", [128, 64, 128]),
    ("sidewalk", [244, 35, 232]),
    ("building", [70, 70, 70]),
    ("wall", [102, 102, 156]),
    ("fence", [190, 153, 153]),
    ("pole", [153, 153, 153]),
    ("traffic light", [250, 170, 30]),
    ("traffic sign", [220, 220, 0]),
    ("vegetation", [107, 142, 35]),
    ("terrain", [152, 251, 152]),
    ("sky", [70, 130, 180]),
    ("person", [220, 20, 60]),
    ("rider", [255, 0, 0]),
    ("car", [0, 0, 142]),
    ("truck", [0, 0, 70]),
    ("bus", [0, 60, 100]),
    ("train", [0, 80, 100]),
    ("motorcycle", [0, 0, 230]),
    ("bicycle", [119, 11, 32]),
];

impl ClassCatalog {
    pub fn new(classes: Vec<ClassInfo>) -> Result<Self, RasterError> {
        if classes.is_empty() {
            return Err(RasterError::Catalog("catalog has no classes".into()));
        }
        if classes.len() > SENTINEL as usize {
            return Err(RasterError::Catalog(format!(
                "{} classes exceed the 255 usable ids",
                classes.len()
            )));
        }
        for (i, c) in classes.iter().enumerate() {
            if c.id as usize != i {
                return Err(RasterError::Catalog(format!(
                    "class '{}' has id {} but position {}; ids must be contiguous from 0",
                    c.name, c.id, i
                )));
            }
            if !(c.lambda >= 0.0) || !c.lambda.is_finite() {
                return Err(RasterError::Catalog(format!(
                    "class '{}' has invalid lambda {}",
                    c.name, c.lambda
                )));
            }
        }
        Ok(Self { classes })
    }

    /// The 19 street-scene training classes with their conventional colors.
    pub fn cityscapes() -> Self {
        let classes = CITYSCAPES
            .iter()
            .enumerate()
            .map(|(i, (name, color))| ClassInfo {
                id: i as u8,
                name: (*name).to_string(),
                color: *color,
                lambda: 1.0,
            })
            .collect();
        Self { classes }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn get(&self, id: u8) -> Option<&ClassInfo> {
        self.classes.get(id as usize)
    }

    pub fn contains(&self, id: u8) -> bool {
        (id as usize) < self.classes.len()
    }

    pub fn id_of(&self, name: &str) -> Option<u8> {
        self.classes.iter().find(|c| c.name == name).map(|c| c.id)
    }

    pub fn name(&self, id: u8) -> &str {
        match self.get(id) {
            Some(c) => &c.name,
            None if id == SENTINEL => "unlabeled",
            None => "?",
        }
    }

    /// Ids of the vehicle and person families, when the catalog uses the
    /// street-scene names.
    pub fn default_instance_classes(&self) -> BTreeSet<u8> {
        const NAMES: [&str; 8] = [
            "person",
            "rider",
            "car",
            "truck",
            "bus",
            "train",
            "motorcycle",
            "bicycle",
        ];
        NAMES.iter().filter_map(|n| self.id_of(n)).collect()
    }

    /// 256-entry RGB palette; unused entries are black and the sentinel is white.
    pub fn palette(&self) -> Vec<u8> {
        let mut pal = vec![0u8; 256 * 3];
        for c in &self.classes {
            let i = c.id as usize * 3;
            pal[i..i + 3].copy_from_slice(&c.color);
        }
        let s = SENTINEL as usize * 3;
        pal[s..s + 3].copy_from_slice(&[255, 255, 255]);
        pal
    }
}

impl Default for ClassCatalog {
    fn default() -> Self {
        Self::cityscapes()
    }
}

/// Dense per-pixel class ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, RasterError> {
        check_len(width, height, 1, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.data[row * self.width + col] = value;
    }

    pub fn same_shape(&self, other: &LabelMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn ensure_same_shape(&self, other: &LabelMap) -> Result<(), RasterError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(RasterError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ))
        }
    }

    /// Checks that every pixel is a catalog id or the sentinel.
    pub fn validate(&self, catalog: &ClassCatalog) -> Result<(), RasterError> {
        match self
            .data
            .iter()
            .position(|&v| v != SENTINEL && !catalog.contains(v))
        {
            Some(i) => Err(RasterError::InvalidLabel {
                row: i / self.width,
                col: i % self.width,
                value: self.data[i],
            }),
            None => Ok(()),
        }
    }

    pub fn count(&self, value: u8) -> usize {
        self.data.iter().filter(|&&v| v == value).count()
    }

    /// `(row, col)` of every sentinel pixel in scanline order.
    pub fn sentinel_pixels(&self) -> Vec<(usize, usize)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == SENTINEL)
            .map(|(i, _)| (i / self.width, i % self.width))
            .collect()
    }
}

/// 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, RasterError> {
        check_len(width, height, 3, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Boolean grid, e.g. the reliability partition of a fused result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BitMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, RasterError> {
        check_len(width, height, 1, bits.len())?;
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

fn png_dims(width: usize, height: usize) -> Result<(u32, u32), RasterError> {
    let w = u32::try_from(width).map_err(|_| RasterError::Format("width exceeds u32".into()))?;
    let h = u32::try_from(height).map_err(|_| RasterError::Format("height exceeds u32".into()))?;
    if w == 0 || h == 0 {
        return Err(RasterError::Format(format!(
            "png cannot store an empty {width}x{height} raster"
        )));
    }
    Ok((w, h))
}

fn write_png(
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    palette: Option<Vec<u8>>,
    data: &[u8],
) -> Result<Vec<u8>, RasterError> {
    let (w, h) = png_dims(width, height)?;
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w, h);
        enc.set_color(color);
        enc.set_depth(depth);
        if let Some(p) = palette {
            enc.set_palette(Cow::Owned(p));
        }
        let mut writer = enc.write_header()?;
        writer.write_image_data(data)?;
        writer.finish()?;
    }
    Ok(out)
}

struct DecodedPng {
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: Vec<u8>,
}

fn read_png(bytes: &[u8]) -> Result<DecodedPng, RasterError> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| RasterError::Format("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    Ok(DecodedPng {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data: buf,
    })
}

/// Encodes a label map as an 8-bit paletted PNG whose indices are the class ids.
pub fn encode_label_map(map: &LabelMap, catalog: &ClassCatalog) -> Result<Vec<u8>, RasterError> {
    write_png(
        map.width,
        map.height,
        png::ColorType::Indexed,
        png::BitDepth::Eight,
        Some(catalog.palette()),
        &map.data,
    )
}

/// Decodes a label map and validates every pixel against `catalog`.
///
/// Single-channel 8-bit grayscale rasters are accepted as well, since many
/// existing ground-truth trees store raw id images without a palette.
pub fn decode_label_map(bytes: &[u8], catalog: &ClassCatalog) -> Result<LabelMap, RasterError> {
    let png = read_png(bytes)?;
    match (png.color, png.depth) {
        (png::ColorType::Indexed, png::BitDepth::Eight)
        | (png::ColorType::Grayscale, png::BitDepth::Eight) => {}
        (c, d) => {
            return Err(RasterError::Format(format!(
                "label maps must be 8-bit indexed or grayscale, got {c:?}/{d:?}"
            )))
        }
    }
    let map = LabelMap::new(png.width, png.height, png.data)?;
    map.validate(catalog)?;
    Ok(map)
}

pub fn encode_image(img: &Image) -> Result<Vec<u8>, RasterError> {
    write_png(
        img.width,
        img.height,
        png::ColorType::Rgb,
        png::BitDepth::Eight,
        None,
        &img.data,
    )
}

pub fn decode_image(bytes: &[u8]) -> Result<Image, RasterError> {
    let png = read_png(bytes)?;
    if png.color != png::ColorType::Rgb || png.depth != png::BitDepth::Eight {
        return Err(RasterError::Format(format!(
            "images must be 8-bit RGB, got {:?}/{:?}",
            png.color, png.depth
        )));
    }
    Image::new(png.width, png.height, png.data)
}

pub fn encode_bitmask(mask: &BitMask) -> Result<Vec<u8>, RasterError> {
    let data: Vec<u8> = mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_png(
        mask.width,
        mask.height,
        png::ColorType::Grayscale,
        png::BitDepth::Eight,
        None,
        &data,
    )
}

pub fn decode_bitmask(bytes: &[u8]) -> Result<BitMask, RasterError> {
    let png = read_png(bytes)?;
    if png.color != png::ColorType::Grayscale || png.depth != png::BitDepth::Eight {
        return Err(RasterError::Format(format!(
            "masks must be 8-bit grayscale, got {:?}/{:?}",
            png.color, png.depth
        )));
    }
    let mut bits = Vec::with_capacity(png.data.len());
    for (i, &v) in png.data.iter().enumerate() {
        match v {
            0 => bits.push(false),
            255 => bits.push(true),
            other => {
                return Err(RasterError::Format(format!(
                    "mask value {other} at pixel ({}, {}) is neither 0 nor 255",
                    i / png.width,
                    i % png.width
                )))
            }
        }
    }
    BitMask::new(png.width, png.height, bits)
}

/// 16-bit single-channel raster (big-endian on disk, as PNG requires).
pub fn encode_gray16(width: usize, height: usize, values: &[u16]) -> Result<Vec<u8>, RasterError> {
    check_len(width, height, 1, values.len())?;
    let data: Vec<u8> = values.iter().flat_map(|v| v.to_be_bytes()).collect();
    write_png(
        width,
        height,
        png::ColorType::Grayscale,
        png::BitDepth::Sixteen,
        None,
        &data,
    )
}

pub fn decode_gray16(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>), RasterError> {
    let png = read_png(bytes)?;
    if png.color != png::ColorType::Grayscale || png.depth != png::BitDepth::Sixteen {
        return Err(RasterError::Format(format!(
            "expected 16-bit grayscale, got {:?}/{:?}",
            png.color, png.depth
        )));
    }
    let values = png
        .data
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok((png.width, png.height, values))
}
