//! Dense per-pixel maps shared by every stage, and the conversions between
//! probabilities, labels and unary costs.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Label value meaning "no opinion". Excluded from voting and evaluation.
pub const IGNORE_LABEL: u8 = 255;

/// Largest number of classes a [`LabelMap`] can hold (255 is reserved).
pub const MAX_CLASSES: usize = 255;

/// Tolerance on per-pixel probability sums.
pub const ROW_SUM_TOLERANCE: f32 = 1e-4;

/// Default floor applied to probabilities before taking logarithms.
pub const DEFAULT_CLAMP_FLOOR: f32 = 1e-8;

fn check_len(what: &str, got: usize, height: usize, width: usize, depth: usize) -> Result<()> {
    let expected = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(depth))
        .ok_or_else(|| Error::Shape(format!("{what}: {height}x{width}x{depth} overflows")))?;
    if got != expected {
        return Err(Error::Shape(format!(
            "{what}: expected {expected} values for {height}x{width}x{depth}, got {got}"
        )));
    }
    Ok(())
}

/// Per-pixel class probabilities, row-major `(row, col, class)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    num_classes: usize,
    data: Vec<f32>,
}

impl ProbMap {
    /// Validates shape, range and per-pixel normalization.
    pub fn new(height: usize, width: usize, num_classes: usize, data: Vec<f32>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Param("a probability map needs at least one class".into()));
        }
        check_len("probability map", data.len(), height, width, num_classes)?;
        for (pixel, row) in data.chunks_exact(num_classes).enumerate() {
            let (r, c) = (pixel / width, pixel % width);
            let mut sum = 0.0f64;
            for (class, &p) in row.iter().enumerate() {
                if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidValue { row: r, col: c, class });
                }
                sum += f64::from(p);
            }
            if (sum - 1.0).abs() > f64::from(ROW_SUM_TOLERANCE) {
                return Err(Error::RowSum { row: r, col: c, sum: sum as f32 });
            }
        }
        Ok(Self { height, width, num_classes, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// The class distribution at linear pixel index `pixel`.
    pub fn pixel(&self, pixel: usize) -> &[f32] {
        let c = self.num_classes;
        &self.data[pixel * c..(pixel + 1) * c]
    }

    pub fn pixels(&self) -> core::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.num_classes)
    }
}

/// Discrete class indices, row-major, with [`IGNORE_LABEL`] as a sentinel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    num_classes: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, num_classes: usize, data: Vec<u8>) -> Result<Self> {
        if num_classes == 0 || num_classes > MAX_CLASSES {
            return Err(Error::Param(format!("num_classes must be in 1..={MAX_CLASSES}, got {num_classes}")));
        }
        check_len("label map", data.len(), height, width, 1)?;
        if let Some(i) = data.iter().position(|&l| l != IGNORE_LABEL && usize::from(l) >= num_classes) {
            return Err(Error::LabelOutOfRange { row: i / width, col: i % width, label: data[i], num_classes });
        }
        Ok(Self { height, width, num_classes, data })
    }

    /// A map filled with one label.
    pub fn filled(height: usize, width: usize, num_classes: usize, label: u8) -> Result<Self> {
        Self::new(height, width, num_classes, alloc::vec![label; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn same_shape(&self, other: &LabelMap) -> bool {
        self.height == other.height && self.width == other.width && self.num_classes == other.num_classes
    }
}

/// 8-bit RGB image, row-major `(row, col, channel)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        check_len("rgb image", data.len(), height, width, 3)?;
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Per-pixel per-class costs (negative log-probabilities).
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryMap {
    height: usize,
    width: usize,
    num_classes: usize,
    data: Vec<f32>,
}

impl UnaryMap {
    pub fn new(height: usize, width: usize, num_classes: usize, data: Vec<f32>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Param("a unary map needs at least one class".into()));
        }
        check_len("unary map", data.len(), height, width, num_classes)?;
        if let Some(i) = data.iter().position(|u| !u.is_finite() || *u < 0.0) {
            let pixel = i / num_classes;
            return Err(Error::InvalidValue { row: pixel / width, col: pixel % width, class: i % num_classes });
        }
        Ok(Self { height, width, num_classes, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Per-pixel argmax; ties go to the lowest class index.
pub fn argmax_labels(probs: &ProbMap) -> LabelMap {
    let data = probs
        .pixels()
        .map(|row| {
            let mut best = 0;
            for (class, &p) in row.iter().enumerate().skip(1) {
                if p > row[best] {
                    best = class;
                }
            }
            best as u8
        })
        .collect();
    LabelMap { height: probs.height, width: probs.width, num_classes: probs.num_classes, data }
}

/// `u = -ln(max(p, clamp_floor))`, with `0 < clamp_floor < 1/C`.
pub fn unary_from_probs(probs: &ProbMap, clamp_floor: f32) -> Result<UnaryMap> {
    let c = probs.num_classes as f32;
    if !(clamp_floor > 0.0 && clamp_floor < 1.0 / c) {
        return Err(Error::Param(format!("clamp_floor must lie in (0, 1/{}), got {clamp_floor}", probs.num_classes)));
    }
    let data = probs.data.iter().map(|&p| (0.0 - libm::log(f64::from(p.max(clamp_floor)))) as f32).collect();
    Ok(UnaryMap { height: probs.height, width: probs.width, num_classes: probs.num_classes, data })
}

/// Expands labels into smoothed one-hot distributions: `1 - smoothing` on the
/// label and `smoothing / (C - 1)` on every other class.
pub fn probs_from_labels(labels: &LabelMap, smoothing: f32) -> Result<ProbMap> {
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::Param(format!("smoothing must lie in [0, 1), got {smoothing}")));
    }
    let c = labels.num_classes;
    let (on, off) = if c == 1 { (1.0, 0.0) } else { (1.0 - smoothing, smoothing / (c - 1) as f32) };
    let mut data = alloc::vec![off; labels.len() * c];
    for (i, &l) in labels.data.iter().enumerate() {
        if l == IGNORE_LABEL {
            return Err(Error::IgnorePresent { row: i / labels.width, col: i % labels.width });
        }
        data[i * c + usize::from(l)] = on;
    }
    Ok(ProbMap { height: labels.height, width: labels.width, num_classes: c, data })
}
