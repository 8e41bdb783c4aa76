//! Per-image stage operations shared by the pipeline and the subcommands.

use std::path::{Path, PathBuf};

use segrefine_core::densecrf::{crf_refine, CrfParams, FilterBackend};
use segrefine_core::ensemble::{vote, EnsembleConfig};
use segrefine_core::morphology::{mode_filter, remove_small_components, Cleanup};
use segrefine_core::{argmax_labels, probs_from_labels, LabelMap, ProbMap, RgbImage, IGNORE_LABEL};

use crate::config::MorphSection;
use crate::io::{self, IoError};

/// One member's prediction for one image.
#[derive(Debug, Clone)]
pub struct MemberPrediction {
    pub labels: LabelMap,
    pub probs: Option<ProbMap>,
}

impl MemberPrediction {
    pub fn from_probs(probs: ProbMap) -> Self {
        Self { labels: argmax_labels(&probs), probs: Some(probs) }
    }

    pub fn from_labels(labels: LabelMap) -> Self {
        Self { labels, probs: None }
    }

    /// Reads `<stem>.spm` or `<stem>.png` from `dir`, preferring the
    /// probability map when both exist.
    pub fn read(dir: &Path, stem: &str, num_classes: usize) -> Result<Self, IoError> {
        let spm = dir.join(format!("{stem}.spm"));
        if spm.exists() {
            let probs = io::read_probmap(&spm)?;
            check_classes(&spm, probs.num_classes(), num_classes)?;
            return Ok(Self::from_probs(probs));
        }
        let png = dir.join(format!("{stem}.png"));
        io::read_labelmap_png(&png, num_classes).map(Self::from_labels)
    }
}

fn check_classes(path: &Path, found: usize, expected: usize) -> Result<(), IoError> {
    if found == expected {
        return Ok(());
    }
    Err(IoError {
        path: path.to_path_buf(),
        kind: segrefine_core::Error::Shape(format!("{found} classes, palette has {expected}")).into(),
    })
}

/// Sorted stems of the `.spm` and `.png` files in `dir`.
pub fn list_stems(dir: &Path) -> std::io::Result<Vec<String>> {
    let mut stems = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str());
        if !matches!(ext, Some("spm" | "png")) || !path.is_file() {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            stems.push(stem.to_owned());
        }
    }
    stems.sort();
    stems.dedup();
    Ok(stems)
}

pub fn vote_labels(members: &[MemberPrediction], config: &EnsembleConfig) -> segrefine_core::Result<LabelMap> {
    let labels: Vec<LabelMap> = members.iter().map(|m| m.labels.clone()).collect();
    vote(&labels, config)
}

/// Expands hard labels for CRF input. Ignore pixels become uniform so the
/// pairwise terms alone decide them.
pub fn labels_to_probs(labels: &LabelMap, smoothing: f32) -> segrefine_core::Result<ProbMap> {
    if !labels.data().contains(&IGNORE_LABEL) {
        return probs_from_labels(labels, smoothing);
    }
    let c = labels.num_classes();
    let off = if c > 1 { smoothing / (c - 1) as f32 } else { 0.0 };
    let mut data = Vec::with_capacity(labels.len() * c);
    for &l in labels.data() {
        if l == IGNORE_LABEL {
            data.extend(std::iter::repeat_n(1.0 / c as f32, c));
        } else {
            data.extend((0..c).map(|k| if k == l as usize { 1.0 - off * (c - 1) as f32 } else { off }));
        }
    }
    ProbMap::new(labels.height(), labels.width(), c, data)
}

pub fn crf_labels(
    probs: &ProbMap,
    image: &RgbImage,
    params: &CrfParams,
    backend: FilterBackend,
) -> segrefine_core::Result<LabelMap> {
    crf_refine(probs, image, params, backend).map(|q| argmax_labels(&q))
}

/// Optional mode filter, then small-component removal.
pub fn morph_labels(labels: &LabelMap, morph: &MorphSection) -> Cleanup {
    let filtered;
    let input = match morph.mode_radius {
        Some(r) => {
            filtered = mode_filter(labels, r);
            &filtered
        }
        None => labels,
    };
    remove_small_components(input, morph.min_area, morph.connectivity.into(), morph.max_passes)
}

pub fn stem_path(dir: &Path, stem: &str, ext: &str) -> PathBuf {
    dir.join(format!("{stem}.{ext}"))
}
