//! Dense fully-connected CRF refinement with Gaussian pairwise kernels and a
//! Potts compatibility, solved by synchronous mean-field updates.
//!
//! The pairwise energy between pixels `i` and `j` is
//! `[x_i != x_j] * (w_app * k_app(i, j) + w_smooth * k_smooth(i, j))` with
//!
//! ```text
//! k_app    = exp(-|p_i - p_j|^2 / (2 theta_alpha^2) - |I_i - I_j|^2 / (2 theta_beta^2))
//! k_smooth = exp(-|p_i - p_j|^2 / (2 theta_gamma^2))
//! ```
//!
//! where `p` is the pixel position and `I` the raw 0..255 RGB colour. Both
//! kernels are evaluated by Gaussian filtering in a scaled feature space,
//! either exactly or with a permutohedral lattice.

mod exact;
mod features;
mod lattice;
mod meanfield;

pub use exact::gaussian_filter_exact;
pub use features::{build_features, FeatureKind, FeatureSet};
pub use lattice::PermutohedralLattice;
pub use meanfield::{crf_refine, meanfield_step, DenseCrf, FilterBackend};

use alloc::format;

use crate::maps::DEFAULT_CLAMP_FLOOR;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrfParams {
    /// Weight of the appearance (position + colour) kernel.
    pub w_appearance: f32,
    /// Spatial width of the appearance kernel, in pixels.
    pub theta_alpha: f32,
    /// Colour width of the appearance kernel, in 0..255 intensity units.
    pub theta_beta: f32,
    /// Weight of the smoothness (position only) kernel.
    pub w_smooth: f32,
    /// Spatial width of the smoothness kernel, in pixels.
    pub theta_gamma: f32,
    pub iterations: u32,
    pub clamp_floor: f32,
}

impl Default for CrfParams {
    fn default() -> Self {
        Self {
            w_appearance: 10.0,
            theta_alpha: 80.0,
            theta_beta: 13.0,
            w_smooth: 3.0,
            theta_gamma: 3.0,
            iterations: 10,
            clamp_floor: DEFAULT_CLAMP_FLOOR,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w_appearance", self.w_appearance), ("w_smooth", self.w_smooth)] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Param(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        for (name, t) in
            [("theta_alpha", self.theta_alpha), ("theta_beta", self.theta_beta), ("theta_gamma", self.theta_gamma)]
        {
            if !t.is_finite() || t <= 0.0 {
                return Err(Error::Param(format!("{name} must be finite and > 0, got {t}")));
            }
        }
        if !(self.clamp_floor > 0.0 && self.clamp_floor < 1.0) {
            return Err(Error::Param(format!("clamp_floor must lie in (0, 1), got {}", self.clamp_floor)));
        }
        Ok(())
    }
}
