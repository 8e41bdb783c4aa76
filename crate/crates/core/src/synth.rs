//! Deterministic synthetic scenes and corrupted model outputs.
//!
//! Scenes are Voronoi partitions: seeds are placed uniformly in the image,
//! each gets a class and a distinct base colour, and every pixel takes the
//! seed nearest to its centre `(row + 0.5, col + 0.5)` (ties to the lowest
//! seed index). Pixel colours are the base colour plus uniform integer jitter
//! in `[-10, 10]` per channel.
//!
//! All randomness comes from PCG XSL-RR 128/64 (`Lcg128Xsl64`), one stream per
//! purpose, seeded from `rng_seed`. Bounded integers are drawn as
//! `(next_u64 * n) >> 64` and unit reals as `(next_u64 >> 11) * 2^-53`, so a
//! given spec produces the same bytes on every platform.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::Rng;
use rand_pcg::Lcg128Xsl64;

use crate::maps::{LabelMap, ProbMap, RgbImage, IGNORE_LABEL, MAX_CLASSES};
use crate::{Error, Result};

pub const JITTER: i32 = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub num_seeds: usize,
    /// Fraction of pixels flipped to a wrong class at `flip_confidence`.
    pub noise_flip_rate: f64,
    pub flip_confidence: f64,
    /// Fraction of pixels hit by a confident single-pixel error.
    pub speckle_rate: f64,
    pub rng_seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            num_classes: 9,
            num_seeds: 12,
            noise_flip_rate: 0.1,
            flip_confidence: 0.6,
            speckle_rate: 0.02,
            rng_seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 4 || self.width < 4 {
            return Err(Error::Param(format!("scenes must be at least 4x4, got {}x{}", self.height, self.width)));
        }
        if self.num_classes == 0 || self.num_classes > MAX_CLASSES {
            return Err(Error::Param(format!("num_classes must be in 1..={MAX_CLASSES}")));
        }
        if self.num_seeds == 0 {
            return Err(Error::Param("a scene needs at least one seed".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_flip_rate) {
            return Err(Error::Param(format!("noise_flip_rate {} not in [0, 1]", self.noise_flip_rate)));
        }
        if !(0.0..1.0).contains(&self.speckle_rate) {
            return Err(Error::Param(format!("speckle_rate {} not in [0, 1)", self.speckle_rate)));
        }
        if !(self.flip_confidence > 0.5 && self.flip_confidence <= 1.0) {
            return Err(Error::Param(format!("flip_confidence {} not in (0.5, 1]", self.flip_confidence)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Stream {
    Seeds = 1,
    Classes = 2,
    Colors = 3,
    Jitter = 4,
    Flips = 5,
    Speckle = 6,
}

fn stream(seed: u64, which: Stream) -> Lcg128Xsl64 {
    let state = (u128::from(seed) << 64) | 0xcafe_f00d_d15e_a5e5;
    Lcg128Xsl64::new(state, which as u128)
}

fn below(rng: &mut Lcg128Xsl64, n: u64) -> u64 {
    ((u128::from(rng.next_u64()) * u128::from(n)) >> 64) as u64
}

fn unit(rng: &mut Lcg128Xsl64) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Mixes a base seed with an index into an independent seed (SplitMix64 finalizer).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Seed {
    pub row: f64,
    pub col: f64,
    pub class: u8,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub gt: LabelMap,
    pub image: RgbImage,
    pub seeds: Vec<Seed>,
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut pos = stream(spec.rng_seed, Stream::Seeds);
    let mut cls = stream(spec.rng_seed, Stream::Classes);
    let mut col = stream(spec.rng_seed, Stream::Colors);

    let mut seeds: Vec<Seed> = Vec::with_capacity(spec.num_seeds);
    for _ in 0..spec.num_seeds {
        let row = unit(&mut pos) * h as f64;
        let c = unit(&mut pos) * w as f64;
        let class = below(&mut cls, spec.num_classes as u64) as u8;
        let color = loop {
            let candidate = [0; 3].map(|_: u8| 20 + below(&mut col, 216) as u8);
            if seeds.iter().all(|s| s.color != candidate) {
                break candidate;
            }
        };
        seeds.push(Seed { row, col: c, class, color });
    }

    let mut jitter = stream(spec.rng_seed, Stream::Jitter);
    let mut labels = Vec::with_capacity(h * w);
    let mut pixels = Vec::with_capacity(h * w * 3);
    for r in 0..h {
        for c in 0..w {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, s) in seeds.iter().enumerate() {
                let d = (s.row - y) * (s.row - y) + (s.col - x) * (s.col - x);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            labels.push(seeds[best].class);
            for ch in 0..3 {
                let j = below(&mut jitter, (2 * JITTER + 1) as u64) as i32 - JITTER;
                pixels.push((i32::from(seeds[best].color[ch]) + j).clamp(0, 255) as u8);
            }
        }
    }
    Ok(Scene { gt: LabelMap::new(h, w, spec.num_classes, labels)?, image: RgbImage::new(h, w, pixels)?, seeds })
}

/// What the corruption did to a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelFate {
    Clean,
    /// Wrong class at `flip_confidence`, the rest spread over other classes.
    Flipped,
    /// Wrong class with full confidence.
    Speckled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corruption {
    pub probs: ProbMap,
    pub log: Vec<PixelFate>,
}

impl Corruption {
    pub fn count(&self, fate: PixelFate) -> usize {
        self.log.iter().filter(|&&f| f == fate).count()
    }
}

pub fn corrupt_to_probs(gt: &LabelMap, spec: &SceneSpec) -> Result<ProbMap> {
    corrupt_with_log(gt, spec).map(|c| c.probs)
}

/// Simulated model output for `gt`. Clean pixels are one-hot on the true
/// class; ignore pixels become uniform and are never corrupted. Speckle is
/// drawn after flips and wins where both hit.
pub fn corrupt_with_log(gt: &LabelMap, spec: &SceneSpec) -> Result<Corruption> {
    spec.validate()?;
    let c = gt.num_classes();
    let mut flips = stream(spec.rng_seed, Stream::Flips);
    let mut speckle = stream(spec.rng_seed, Stream::Speckle);
    let mut data = vec![0.0f32; gt.len() * c];
    let mut log = Vec::with_capacity(gt.len());

    let wrong = |rng: &mut Lcg128Xsl64, truth: usize| (truth + 1 + below(rng, (c - 1) as u64) as usize) % c;
    for (px, &label) in gt.data().iter().enumerate() {
        let row = &mut data[px * c..(px + 1) * c];
        // draws happen for every pixel so streams stay aligned across specs
        let flip_draw = unit(&mut flips);
        let flip_class = if c > 1 { wrong(&mut flips, usize::from(label) % c) } else { 0 };
        let speckle_draw = unit(&mut speckle);
        let speckle_class = if c > 1 { wrong(&mut speckle, usize::from(label) % c) } else { 0 };

        if label == IGNORE_LABEL {
            row.iter_mut().for_each(|p| *p = 1.0 / c as f32);
            log.push(PixelFate::Clean);
            continue;
        }
        let truth = usize::from(label);
        let fate = if c > 1 && speckle_draw < spec.speckle_rate {
            row[speckle_class] = 1.0;
            PixelFate::Speckled
        } else if c > 1 && flip_draw < spec.noise_flip_rate {
            let rest = ((1.0 - spec.flip_confidence) / (c - 1) as f64) as f32;
            row.iter_mut().for_each(|p| *p = rest);
            row[flip_class] = spec.flip_confidence as f32;
            PixelFate::Flipped
        } else {
            row[truth] = 1.0;
            PixelFate::Clean
        };
        log.push(fate);
    }
    Ok(Corruption { probs: ProbMap::new(gt.height(), gt.width(), c, data)?, log })
}
