//! Pipeline configuration, read from and echoed as TOML.
//!
//! ```toml
//! output_dir = "out"
//! image_dir = "images"
//! gt_dir = "gt"
//! palette = "palette.csv"
//! stages = ["vote", "crf", "morph"]
//! filter_backend = "lattice"
//! crf_input = "hard"
//! label_smoothing = 0.05
//!
//! [[members]]
//! name = "model_a"
//! probmap_dir = "members/model_a"
//!
//! [ensemble]
//! tie_break = "priority"
//!
//! [crf]
//! w_appearance = 10.0
//! theta_alpha = 80.0
//!
//! [morph]
//! min_area = 64
//! connectivity = "four"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use segrefine_core::densecrf::{CrfParams, FilterBackend};
use segrefine_core::ensemble::TieBreak;
use segrefine_core::morphology::{Connectivity, DEFAULT_MAX_PASSES, DEFAULT_MIN_AREA};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Vote,
    Crf,
    Morph,
}

impl Stage {
    /// Suffix this stage adds to a report row tag.
    pub fn tag(self) -> &'static str {
        match self {
            Stage::Vote => "+E",
            Stage::Crf => "+D",
            Stage::Morph => "+M",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Exact,
    #[default]
    Lattice,
}

impl From<Backend> for FilterBackend {
    fn from(b: Backend) -> Self {
        match b {
            Backend::Exact => FilterBackend::Exact,
            Backend::Lattice => FilterBackend::Lattice,
        }
    }
}

/// What the CRF stage refines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CrfInput {
    /// The current labels, expanded with `label_smoothing`.
    #[default]
    Hard,
    /// The average of the members' probability maps.
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    #[default]
    Priority,
    LowestClass,
}

impl From<TiePolicy> for TieBreak {
    fn from(t: TiePolicy) -> Self {
        match t {
            TiePolicy::Priority => TieBreak::Priority,
            TiePolicy::LowestClass => TieBreak::LowestClass,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ConnectivityOpt {
    #[default]
    Four,
    Eight,
}

impl From<ConnectivityOpt> for Connectivity {
    fn from(c: ConnectivityOpt) -> Self {
        match c {
            ConnectivityOpt::Four => Connectivity::Four,
            ConnectivityOpt::Eight => Connectivity::Eight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberSource {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probmap_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labelmap_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrfSection {
    pub w_appearance: f32,
    pub theta_alpha: f32,
    pub theta_beta: f32,
    pub w_smooth: f32,
    pub theta_gamma: f32,
    pub iterations: u32,
    pub clamp_floor: f32,
}

impl Default for CrfSection {
    fn default() -> Self {
        CrfParams::default().into()
    }
}

impl From<CrfParams> for CrfSection {
    fn from(p: CrfParams) -> Self {
        Self {
            w_appearance: p.w_appearance,
            theta_alpha: p.theta_alpha,
            theta_beta: p.theta_beta,
            w_smooth: p.w_smooth,
            theta_gamma: p.theta_gamma,
            iterations: p.iterations,
            clamp_floor: p.clamp_floor,
        }
    }
}

impl From<CrfSection> for CrfParams {
    fn from(s: CrfSection) -> Self {
        Self {
            w_appearance: s.w_appearance,
            theta_alpha: s.theta_alpha,
            theta_beta: s.theta_beta,
            w_smooth: s.w_smooth,
            theta_gamma: s.theta_gamma,
            iterations: s.iterations,
            clamp_floor: s.clamp_floor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MorphSection {
    pub min_area: usize,
    pub connectivity: ConnectivityOpt,
    pub max_passes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode_radius: Option<usize>,
}

impl Default for MorphSection {
    fn default() -> Self {
        Self {
            min_area: DEFAULT_MIN_AREA,
            connectivity: ConnectivityOpt::Four,
            max_passes: DEFAULT_MAX_PASSES,
            mode_radius: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub tie_break: TiePolicy,
}

fn default_stages() -> Vec<Stage> {
    vec![Stage::Vote, Stage::Crf, Stage::Morph]
}

fn default_smoothing() -> f32 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_dir: Option<PathBuf>,
    /// CSV palette; the built-in nine-class palette when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub palette: Option<PathBuf>,
    #[serde(default = "default_stages")]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub filter_backend: Backend,
    #[serde(default)]
    pub crf_input: CrfInput,
    #[serde(default = "default_smoothing")]
    pub label_smoothing: f32,
    #[serde(default)]
    pub absent_as_zero: bool,
    #[serde(default)]
    pub members: Vec<MemberSource>,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub crf: CrfSection,
    #[serde(default)]
    pub morph: MorphSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        toml::from_str("").expect("every field has a default")
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Parses `path` and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut config = Self::from_toml(&text)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new("")));
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in [&mut self.image_dir, &mut self.gt_dir, &mut self.palette].into_iter().flatten() {
            fix(p);
        }
        for m in &mut self.members {
            for p in [&mut m.probmap_dir, &mut m.labelmap_dir].into_iter().flatten() {
                fix(p);
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn crf_params(&self) -> CrfParams {
        self.crf.into()
    }

    pub fn has_stage(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }

    /// Checks that the config describes a runnable pipeline.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.stages.is_empty() {
            return invalid("stages must not be empty".into());
        }
        if self.stages.windows(2).any(|w| w[0] >= w[1]) {
            return invalid(format!(
                "stages {:?} must appear at most once each, in the order vote, crf, morph",
                self.stages
            ));
        }
        if self.members.is_empty() {
            return invalid("at least one member is required".into());
        }
        for (i, m) in self.members.iter().enumerate() {
            if m.name.is_empty() {
                return invalid(format!("member {i} has an empty name"));
            }
            if self.members[..i].iter().any(|o| o.name == m.name) {
                return invalid(format!("duplicate member name {:?}", m.name));
            }
            if m.probmap_dir.is_some() == m.labelmap_dir.is_some() {
                return invalid(format!("member {:?} needs exactly one of probmap_dir or labelmap_dir", m.name));
            }
        }
        if self.members.len() > 1 && !self.has_stage(Stage::Vote) {
            return invalid("several members need the vote stage to be combined".into());
        }
        if self.has_stage(Stage::Crf) {
            if self.image_dir.is_none() {
                return invalid("the crf stage needs image_dir".into());
            }
            if self.crf_input == CrfInput::Soft && self.members.iter().any(|m| m.probmap_dir.is_none()) {
                return invalid("crf_input = \"soft\" needs every member to provide probmap_dir".into());
            }
            self.crf_params().validate().or_else(|e| invalid(format!("crf: {e}")))?;
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return invalid(format!("label_smoothing {} not in [0, 1)", self.label_smoothing));
        }
        if self.morph.min_area == 0 {
            return invalid("morph.min_area must be >= 1".into());
        }
        if self.morph.mode_radius == Some(0) {
            return invalid("morph.mode_radius must be >= 1".into());
        }
        if self.output_dir.as_os_str().is_empty() {
            return invalid("output_dir is required".into());
        }
        Ok(())
    }

    /// Tags for the cumulative stage rows, e.g. `["+E", "+E+D", "+E+D+M"]`.
    pub fn stage_tags(&self) -> Vec<String> {
        let mut tag = String::new();
        self.stages
            .iter()
            .map(|s| {
                tag.push_str(s.tag());
                tag.clone()
            })
            .collect()
    }
}
