use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{build_features, gaussian_filter_exact, CrfParams, FeatureKind, FeatureSet, PermutohedralLattice};
use crate::maps::{unary_from_probs, ProbMap, RgbImage, UnaryMap};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterBackend {
    /// O(N^2) summation over all pixel pairs.
    Exact,
    /// Permutohedral lattice approximation.
    #[default]
    Lattice,
}

#[derive(Debug, Clone)]
enum Filter {
    Exact(FeatureSet),
    Lattice(PermutohedralLattice),
}

/// One weighted Gaussian kernel with its per-pixel normalizer and self weight.
#[derive(Debug, Clone)]
struct Kernel {
    weight: f64,
    filter: Filter,
    /// The filtered all-ones field.
    norm: Vec<f32>,
    /// What each pixel contributes to its own filtered value.
    self_weight: Vec<f32>,
}

impl Kernel {
    fn new(features: FeatureSet, weight: f32, backend: FilterBackend) -> Result<Self> {
        let n = features.len();
        let ones = vec![1.0f32; n];
        let (filter, norm, self_weight) = match backend {
            FilterBackend::Exact => {
                let norm = gaussian_filter_exact(&features, &ones, 1)?;
                (Filter::Exact(features), norm, ones)
            }
            FilterBackend::Lattice => {
                let lattice = PermutohedralLattice::new(&features);
                let norm = lattice.filter(&ones, 1)?;
                let sw = lattice.self_weights();
                (Filter::Lattice(lattice), norm, sw)
            }
        };
        Ok(Self { weight: f64::from(weight), filter, norm, self_weight })
    }

    fn apply(&self, values: &[f32], channels: usize) -> Result<Vec<f32>> {
        match &self.filter {
            Filter::Exact(f) => gaussian_filter_exact(f, values, channels),
            Filter::Lattice(l) => l.filter(values, channels),
        }
    }
}

/// A CRF instance with its unaries and prepared pairwise kernels, reusable
/// across mean-field iterations.
#[derive(Debug, Clone)]
pub struct DenseCrf {
    height: usize,
    width: usize,
    num_classes: usize,
    unary: Vec<f32>,
    kernels: Vec<Kernel>,
}

impl DenseCrf {
    /// Builds the appearance and smoothness kernels from `image`. Kernels with
    /// zero weight are skipped.
    pub fn new(unary: &UnaryMap, image: &RgbImage, params: &CrfParams, backend: FilterBackend) -> Result<Self> {
        params.validate()?;
        if unary.height() != image.height() || unary.width() != image.width() {
            return Err(Error::Shape(format!(
                "unaries are {}x{} but the image is {}x{}",
                unary.height(),
                unary.width(),
                image.height(),
                image.width()
            )));
        }
        let mut kernels = Vec::new();
        for (kind, weight) in
            [(FeatureKind::Appearance, params.w_appearance), (FeatureKind::Smoothness, params.w_smooth)]
        {
            if weight > 0.0 {
                kernels.push((build_features(image, kind, params)?, weight));
            }
        }
        Self::with_kernels(unary, kernels, backend)
    }

    /// Builds a CRF from explicit `(features, weight)` kernels. Every feature
    /// set must have one point per pixel.
    pub fn with_kernels(unary: &UnaryMap, kernels: Vec<(FeatureSet, f32)>, backend: FilterBackend) -> Result<Self> {
        let n = unary.height() * unary.width();
        let kernels = kernels
            .into_iter()
            .map(|(features, weight)| {
                if features.len() != n {
                    return Err(Error::Shape(format!("{} feature points for {n} pixels", features.len())));
                }
                if !weight.is_finite() || weight < 0.0 {
                    return Err(Error::Param(format!("kernel weight must be finite and >= 0, got {weight}")));
                }
                Kernel::new(features, weight, backend)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            height: unary.height(),
            width: unary.width(),
            num_classes: unary.num_classes(),
            unary: unary.data().to_vec(),
            kernels,
        })
    }

    /// `Q0`: the per-pixel softmax of the negated unaries.
    pub fn initial_q(&self) -> Result<ProbMap> {
        let c = self.num_classes;
        let mut data = vec![0.0f32; self.unary.len()];
        let mut energy = vec![0.0f64; c];
        for (px, out) in data.chunks_exact_mut(c).enumerate() {
            for (e, &u) in energy.iter_mut().zip(&self.unary[px * c..(px + 1) * c]) {
                *e = -f64::from(u);
            }
            normalize_exp(&energy, out).ok_or(Error::NonFinite { pixel: px })?;
        }
        ProbMap::new(self.height, self.width, c, data)
    }

    /// One synchronous mean-field update of every pixel from `q`.
    pub fn step(&self, q: &ProbMap) -> Result<ProbMap> {
        let c = self.num_classes;
        if q.height() != self.height || q.width() != self.width || q.num_classes() != c {
            return Err(Error::Shape(format!(
                "Q is {}x{}x{} but the CRF is {}x{}x{}",
                q.height(),
                q.width(),
                q.num_classes(),
                self.height,
                self.width,
                c
            )));
        }
        let n = self.height * self.width;
        let mut message = vec![0.0f64; n * c];
        for kernel in &self.kernels {
            let filtered = kernel.apply(q.data(), c)?;
            for px in 0..n {
                let scale = kernel.weight / f64::from(kernel.norm[px]);
                let sw = f64::from(kernel.self_weight[px]);
                for l in 0..c {
                    let i = px * c + l;
                    let others = f64::from(filtered[i]) - sw * f64::from(q.data()[i]);
                    message[i] += scale * others;
                }
            }
        }

        let mut data = vec![0.0f32; n * c];
        let mut energy = vec![0.0f64; c];
        for (px, out) in data.chunks_exact_mut(c).enumerate() {
            let m = &message[px * c..(px + 1) * c];
            let total: f64 = m.iter().sum();
            for l in 0..c {
                // Potts: the penalty for label l is the message mass on every other label
                energy[l] = -f64::from(self.unary[px * c + l]) - (total - m[l]);
            }
            normalize_exp(&energy, out).ok_or(Error::NonFinite { pixel: px })?;
        }
        ProbMap::new(self.height, self.width, c, data)
    }

    /// `iterations` mean-field updates starting from [`initial_q`](Self::initial_q).
    pub fn infer(&self, iterations: u32) -> Result<ProbMap> {
        let mut q = self.initial_q()?;
        for _ in 0..iterations {
            q = self.step(&q)?;
        }
        Ok(q)
    }
}

/// Writes `exp(e - max e)` normalized to sum 1 into `out`. `None` when a
/// non-finite value shows up.
fn normalize_exp(energy: &[f64], out: &mut [f32]) -> Option<()> {
    let max = energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut sum = 0.0;
    let mut exps = [0.0f64; 32];
    let mut heap;
    let buf: &mut [f64] = if energy.len() <= exps.len() {
        &mut exps[..energy.len()]
    } else {
        heap = vec![0.0f64; energy.len()];
        &mut heap
    };
    for (b, &e) in buf.iter_mut().zip(energy) {
        *b = libm::exp(e - max);
        sum += *b;
    }
    if !sum.is_finite() || sum <= 0.0 {
        return None;
    }
    for (o, b) in out.iter_mut().zip(buf.iter()) {
        *o = ((b / sum) as f32).min(1.0);
    }
    Some(())
}

/// A single mean-field update of `q` with kernels built from `image`.
pub fn meanfield_step(
    q: &ProbMap,
    unary: &UnaryMap,
    image: &RgbImage,
    params: &CrfParams,
    backend: FilterBackend,
) -> Result<ProbMap> {
    DenseCrf::new(unary, image, params, backend)?.step(q)
}

/// Full refinement: unaries from `probs`, then `params.iterations` updates.
/// The argmax of the result is the refined label map.
pub fn crf_refine(probs: &ProbMap, image: &RgbImage, params: &CrfParams, backend: FilterBackend) -> Result<ProbMap> {
    params.validate()?;
    let unary = unary_from_probs(probs, params.clamp_floor)?;
    DenseCrf::new(&unary, image, params, backend)?.infer(params.iterations)
}
