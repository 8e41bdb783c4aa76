use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::FeatureSet;
use crate::{Error, Result};

/// Brute-force Gaussian filtering: `out_i = sum_j exp(-|f_i - f_j|^2 / 2) v_j`
/// over all `j`, including `j = i`. `values` holds `channels` values per point.
pub fn gaussian_filter_exact(features: &FeatureSet, values: &[f32], channels: usize) -> Result<Vec<f32>> {
    let n = features.len();
    if values.len() != n * channels {
        return Err(Error::Shape(format!("{} values for {n} points with {channels} channels", values.len())));
    }
    let mut acc = vec![0.0f64; n * channels];
    for i in 0..n {
        let fi = features.point(i);
        for c in 0..channels {
            acc[i * channels + c] += f64::from(values[i * channels + c]);
        }
        for j in i + 1..n {
            let d2: f64 = fi
                .iter()
                .zip(features.point(j))
                .map(|(a, b)| {
                    let d = f64::from(*a) - f64::from(*b);
                    d * d
                })
                .sum();
            let k = libm::exp(-0.5 * d2);
            for c in 0..channels {
                acc[i * channels + c] += k * f64::from(values[j * channels + c]);
                acc[j * channels + c] += k * f64::from(values[i * channels + c]);
            }
        }
    }
    Ok(acc.into_iter().map(|v| v as f32).collect())
}
