//! Config-driven batch run: members, vote, CRF, cleanup and evaluation.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;
use segrefine_core::ensemble::{average_probs, EnsembleConfig};
use segrefine_core::metrics::{AbsentPolicy, ConfusionMatrix, EvalReport, ReportFormat, StageRow};
use segrefine_core::{metrics, LabelMap};

use crate::config::{CrfInput, PipelineConfig, Stage};
use crate::io::{self, Palette};
use crate::stages::{self, MemberPrediction};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Io(#[from] io::IoError),
    #[error("{}: {source}", path.display())]
    Dir { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Core(#[from] segrefine_core::Error),
    #[error("no input files in {}", .0.display())]
    NoInputs(PathBuf),
    #[error("{stem}: {message}")]
    Image { stem: String, message: String },
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// How batch work is scheduled.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
    /// Stop at the first failing image instead of summarizing failures.
    pub fail_fast: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub stem: String,
    pub message: String,
}

/// Results of [`run_batch`], in stem order.
#[derive(Debug)]
pub struct BatchOutcome<T> {
    pub done: Vec<(String, T)>,
    pub failures: Vec<Failure>,
}

/// Runs `work` for every stem on a pool of `options.threads` workers.
/// Results come back in the order of `stems`.
pub fn run_batch<T, F>(stems: &[String], options: RunOptions, work: F) -> Result<BatchOutcome<T>, PipelineError>
where
    T: Send,
    F: Fn(&str) -> Result<T, String> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new().num_threads(options.threads).build()?;
    let abort = AtomicBool::new(false);
    let results: Vec<Option<Result<T, String>>> = pool.install(|| {
        stems
            .par_iter()
            .map(|stem| {
                if abort.load(Ordering::Relaxed) {
                    return None;
                }
                let r = work(stem);
                if r.is_err() && options.fail_fast {
                    abort.store(true, Ordering::Relaxed);
                }
                Some(r)
            })
            .collect()
    });
    let mut outcome = BatchOutcome { done: Vec::new(), failures: Vec::new() };
    for (stem, r) in stems.iter().zip(results) {
        match r {
            Some(Ok(v)) => outcome.done.push((stem.clone(), v)),
            Some(Err(message)) => {
                if options.fail_fast {
                    return Err(PipelineError::Image { stem: stem.clone(), message });
                }
                outcome.failures.push(Failure { stem: stem.clone(), message });
            }
            None => {}
        }
    }
    Ok(outcome)
}

/// Confusion matrices for one image: members first, then one per stage.
type ImageScores = Option<Vec<ConfusionMatrix>>;

#[derive(Debug)]
pub struct PipelineSummary {
    pub processed: Vec<String>,
    pub failures: Vec<Failure>,
    /// Present when `gt_dir` is set and at least one image succeeded.
    pub report: Option<EvalReport>,
}

pub fn load_palette(config_palette: Option<&Path>) -> Result<Palette, io::IoError> {
    match config_palette {
        Some(p) => io::read_palette(p),
        None => Ok(Palette::builtin()),
    }
}

/// Validates `config`, processes every stem found in the first member's
/// directory and writes labels, colour previews, reports and the
/// effective config under `output_dir`.
pub fn run_pipeline(config: &PipelineConfig, options: RunOptions) -> Result<PipelineSummary, PipelineError> {
    config.validate()?;
    let palette = load_palette(config.palette.as_deref())?;
    let num_classes = palette.len();
    let first = &config.members[0];
    let first_dir = first.probmap_dir.as_ref().or(first.labelmap_dir.as_ref()).expect("validated");
    let stems =
        stages::list_stems(first_dir).map_err(|source| PipelineError::Dir { path: first_dir.clone(), source })?;
    if stems.is_empty() {
        return Err(PipelineError::NoInputs(first_dir.clone()));
    }

    let labels_dir = config.output_dir.join("labels");
    let color_dir = config.output_dir.join("color");
    for dir in [&labels_dir, &color_dir] {
        std::fs::create_dir_all(dir).map_err(|source| PipelineError::Dir { path: dir.clone(), source })?;
    }
    io::write_text(config.output_dir.join("effective_config.toml"), &config.to_toml())?;

    let names: Vec<String> = config.members.iter().map(|m| m.name.clone()).collect();
    let ensemble = EnsembleConfig::new(names.clone(), config.ensemble.tie_break.into())?;
    let params = config.crf_params();
    let backend = config.filter_backend.into();

    let outcome = run_batch(&stems, options, |stem| -> Result<ImageScores, String> {
        let members = config
            .members
            .iter()
            .map(|m| {
                let dir = m.probmap_dir.as_ref().or(m.labelmap_dir.as_ref()).expect("validated");
                MemberPrediction::read(dir, stem, num_classes)
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let gt = match &config.gt_dir {
            Some(dir) => Some(
                io::read_labelmap_png(stages::stem_path(dir, stem, "png"), num_classes).map_err(|e| e.to_string())?,
            ),
            None => None,
        };

        let mut outputs: Vec<LabelMap> = Vec::with_capacity(config.stages.len());
        let mut current = members[0].labels.clone();
        for &stage in &config.stages {
            current = match stage {
                Stage::Vote => stages::vote_labels(&members, &ensemble).map_err(|e| e.to_string())?,
                Stage::Crf => {
                    let dir = config.image_dir.as_ref().expect("validated");
                    let image = io::read_rgb_png(stages::stem_path(dir, stem, "png")).map_err(|e| e.to_string())?;
                    let probs = match config.crf_input {
                        CrfInput::Soft => {
                            let maps: Vec<_> = members.iter().map(|m| m.probs.clone().expect("validated")).collect();
                            average_probs(&maps, None)
                        }
                        CrfInput::Hard => stages::labels_to_probs(&current, config.label_smoothing),
                    }
                    .map_err(|e| e.to_string())?;
                    stages::crf_labels(&probs, &image, &params, backend).map_err(|e| e.to_string())?
                }
                Stage::Morph => stages::morph_labels(&current, &config.morph).labels,
            };
            outputs.push(current.clone());
        }

        io::write_labelmap_png(&current, stages::stem_path(&labels_dir, stem, "png")).map_err(|e| e.to_string())?;
        let color = io::colorize(&current, &palette).map_err(|e| e.to_string())?;
        io::write_rgb_png(&color, stages::stem_path(&color_dir, stem, "png")).map_err(|e| e.to_string())?;

        let Some(gt) = gt else { return Ok(None) };
        members
            .iter()
            .map(|m| &m.labels)
            .chain(outputs.iter())
            .map(|pred| metrics::accumulate(pred, &gt, ConfusionMatrix::new(num_classes)))
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
            .map_err(|e| e.to_string())
    })?;

    let processed: Vec<String> = outcome.done.iter().map(|(s, _)| s.clone()).collect();
    let report = match config.gt_dir {
        Some(_) if !outcome.done.is_empty() => {
            let report = build_report(config, &palette, &names, outcome.done.into_iter().filter_map(|(_, s)| s))?;
            io::write_text(
                config.output_dir.join("report.md"),
                &metrics::render_report(&report, ReportFormat::Markdown),
            )?;
            io::write_text(config.output_dir.join("report.csv"), &metrics::render_report(&report, ReportFormat::Csv))?;
            Some(report)
        }
        _ => None,
    };
    Ok(PipelineSummary { processed, failures: outcome.failures, report })
}

fn build_report(
    config: &PipelineConfig,
    palette: &Palette,
    names: &[String],
    scores: impl Iterator<Item = Vec<ConfusionMatrix>>,
) -> Result<EvalReport, PipelineError> {
    let num_classes = palette.len();
    let tags = config.stage_tags();
    let rows: Vec<String> = names.iter().map(|n| format!("baseline:{n}")).chain(tags).collect();
    let mut totals = vec![ConfusionMatrix::new(num_classes); rows.len()];
    let mut images = 0usize;
    for per_image in scores {
        for (total, cm) in totals.iter_mut().zip(&per_image) {
            total.merge(cm)?;
        }
        images += 1;
    }
    let policy = if config.absent_as_zero { AbsentPolicy::AsZero } else { AbsentPolicy::Exclude };
    let mut report = EvalReport::new(palette.names());
    for (stage, cm) in rows.into_iter().zip(&totals) {
        report.push_row(StageRow::from_confusion(stage, cm, policy)?)?;
    }
    push_params(&mut report, config);
    report.push_param("images", images);
    Ok(report)
}

fn push_params(report: &mut EvalReport, config: &PipelineConfig) {
    let stages: Vec<&str> = config
        .stages
        .iter()
        .map(|s| match s {
            Stage::Vote => "vote",
            Stage::Crf => "crf",
            Stage::Morph => "morph",
        })
        .collect();
    report.push_param("stages", stages.join(","));
    report.push_param("tie_break", format!("{:?}", config.ensemble.tie_break));
    if config.has_stage(Stage::Crf) {
        let p = config.crf_params();
        report.push_param("filter_backend", format!("{:?}", config.filter_backend));
        report.push_param("crf_input", format!("{:?}", config.crf_input));
        report.push_param("label_smoothing", config.label_smoothing);
        report.push_param("w_appearance", p.w_appearance);
        report.push_param("theta_alpha", p.theta_alpha);
        report.push_param("theta_beta", p.theta_beta);
        report.push_param("w_smooth", p.w_smooth);
        report.push_param("theta_gamma", p.theta_gamma);
        report.push_param("iterations", p.iterations);
        report.push_param("clamp_floor", p.clamp_floor);
    }
    if config.has_stage(Stage::Morph) {
        let m = &config.morph;
        report.push_param("min_area", m.min_area);
        report.push_param("connectivity", format!("{:?}", m.connectivity));
        report.push_param("max_passes", m.max_passes);
        if let Some(r) = m.mode_radius {
            report.push_param("mode_radius", r);
        }
    }
    report.push_param("absent_classes", if config.absent_as_zero { "zero" } else { "excluded" });
}
