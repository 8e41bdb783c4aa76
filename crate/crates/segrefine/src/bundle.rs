//! Writes a synthetic dataset that the pipeline can consume directly.
//!
//! Layout under the output directory:
//!
//! ```text
//! images/<stem>.png        RGB scene
//! gt/<stem>.png            ground-truth labels
//! members/<name>/<stem>.spm  corrupted probability maps
//! palette.csv
//! manifest.txt             one line per scene: stem, scene seed, corruption counts
//! pipeline.toml            config running vote, crf and morph over the bundle
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use segrefine_core::synth::{corrupt_with_log, derive_seed, generate_scene, PixelFate, SceneSpec};

use crate::config::{MemberSource, PipelineConfig};
use crate::io::{self, Palette};
use crate::pipeline::PipelineError;

/// Member `m` of scene `s` is corrupted with `derive_seed(scene_seed, MEMBER_SEED_OFFSET + m)`.
pub const MEMBER_SEED_OFFSET: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundleSpec {
    pub scenes: usize,
    pub members: usize,
    /// Scene `i` uses `derive_seed(base_seed, i)`.
    pub base_seed: u64,
    /// Template for every scene; its `rng_seed` is replaced per scene.
    pub scene: SceneSpec,
}

impl Default for BundleSpec {
    fn default() -> Self {
        Self { scenes: 20, members: 3, base_seed: 0, scene: SceneSpec::default() }
    }
}

pub fn scene_stem(index: usize) -> String {
    format!("scene_{index:04}")
}

pub fn member_name(index: usize) -> String {
    format!("member_{index}")
}

/// Palette used for a bundle: the built-in one for nine classes, generic otherwise.
pub fn bundle_palette(num_classes: usize) -> Result<Palette, io::FormatError> {
    if num_classes == Palette::builtin().len() {
        Ok(Palette::builtin())
    } else {
        Palette::generic(num_classes)
    }
}

pub fn write_bundle(out: &Path, spec: &BundleSpec) -> Result<PipelineConfig, PipelineError> {
    spec.scene.validate()?;
    if spec.scenes == 0 || spec.members == 0 {
        return Err(segrefine_core::Error::Param("a bundle needs at least one scene and one member".into()).into());
    }
    let mkdir = |p: PathBuf| {
        std::fs::create_dir_all(&p).map_err(|source| PipelineError::Dir { path: p.clone(), source })?;
        Ok::<_, PipelineError>(p)
    };
    let images = mkdir(out.join("images"))?;
    let gt = mkdir(out.join("gt"))?;
    let member_dirs =
        (0..spec.members).map(|m| mkdir(out.join("members").join(member_name(m)))).collect::<Result<Vec<_>, _>>()?;

    let palette =
        bundle_palette(spec.scene.num_classes).map_err(|kind| io::IoError { path: out.join("palette.csv"), kind })?;
    io::write_palette(&palette, out.join("palette.csv"))?;

    let mut manifest = String::from("# stem scene_seed member:flipped/speckled ...\n");
    for i in 0..spec.scenes {
        let stem = scene_stem(i);
        let scene_seed = derive_seed(spec.base_seed, i as u64);
        let scene = generate_scene(&SceneSpec { rng_seed: scene_seed, ..spec.scene })?;
        io::write_rgb_png(&scene.image, images.join(format!("{stem}.png")))?;
        io::write_labelmap_png(&scene.gt, gt.join(format!("{stem}.png")))?;
        write!(manifest, "{stem} {scene_seed}").unwrap();
        for (m, dir) in member_dirs.iter().enumerate() {
            let member_seed = derive_seed(scene_seed, MEMBER_SEED_OFFSET + m as u64);
            let c = corrupt_with_log(&scene.gt, &SceneSpec { rng_seed: member_seed, ..spec.scene })?;
            io::write_probmap(&c.probs, dir.join(format!("{stem}.spm")))?;
            write!(manifest, " {}:{}/{}", member_name(m), c.count(PixelFate::Flipped), c.count(PixelFate::Speckled))
                .unwrap();
        }
        manifest.push('\n');
    }
    io::write_text(out.join("manifest.txt"), &manifest)?;

    let config = PipelineConfig {
        output_dir: "out".into(),
        image_dir: Some("images".into()),
        gt_dir: Some("gt".into()),
        palette: Some("palette.csv".into()),
        members: (0..spec.members)
            .map(|m| MemberSource {
                name: member_name(m),
                probmap_dir: Some(Path::new("members").join(member_name(m))),
                labelmap_dir: None,
            })
            .collect(),
        ..PipelineConfig::default()
    };
    io::write_text(out.join("pipeline.toml"), &config.to_toml())?;
    Ok(config)
}
