use alloc::format;
use alloc::vec::Vec;

use super::CrfParams;
use crate::maps::RgbImage;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// `(x/theta_alpha, y/theta_alpha, r/theta_beta, g/theta_beta, b/theta_beta)`
    Appearance,
    /// `(x/theta_gamma, y/theta_gamma)`
    Smoothness,
}

impl FeatureKind {
    pub fn dim(self) -> usize {
        match self {
            FeatureKind::Appearance => 5,
            FeatureKind::Smoothness => 2,
        }
    }
}

/// One `dim`-vector per point, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    data: Vec<f32>,
}

impl FeatureSet {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!("{} feature values do not split into {dim}-vectors", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Param(format!("feature {} of point {} is not finite", i % dim, i / dim)));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Scaled per-pixel features; `x` is the column and `y` the row index.
pub fn build_features(image: &RgbImage, kind: FeatureKind, params: &CrfParams) -> Result<FeatureSet> {
    params.validate()?;
    let n = image.height() * image.width();
    let mut data = Vec::with_capacity(n * kind.dim());
    match kind {
        FeatureKind::Appearance => {
            let (sa, sb) = (1.0 / params.theta_alpha, 1.0 / params.theta_beta);
            for (i, rgb) in image.data().chunks_exact(3).enumerate() {
                let (y, x) = (i / image.width(), i % image.width());
                data.extend_from_slice(&[
                    x as f32 * sa,
                    y as f32 * sa,
                    f32::from(rgb[0]) * sb,
                    f32::from(rgb[1]) * sb,
                    f32::from(rgb[2]) * sb,
                ]);
            }
        }
        FeatureKind::Smoothness => {
            let s = 1.0 / params.theta_gamma;
            for i in 0..n {
                let (y, x) = (i / image.width(), i % image.width());
                data.extend_from_slice(&[x as f32 * s, y as f32 * s]);
            }
        }
    }
    FeatureSet::new(kind.dim(), data)
}
