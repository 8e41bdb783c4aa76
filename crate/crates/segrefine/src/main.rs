use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use segrefine_core::ensemble::{average_probs, EnsembleConfig};
use segrefine_core::metrics::{self, AbsentPolicy, ConfusionMatrix, EvalReport, ReportFormat, StageRow};
use segrefine_core::synth::SceneSpec;
use segrefine_core::LabelMap;

use segrefine::bundle::{self, BundleSpec};
use segrefine::config::{Backend, ConnectivityOpt, CrfInput, PipelineConfig, TiePolicy};
use segrefine::io::{self, Palette};
use segrefine::pipeline::{self, BatchOutcome, RunOptions};
use segrefine::stages::{self, MemberPrediction};

#[derive(Parser)]
#[command(name = "segrefine", version, about = "Ensemble, dense CRF and cleanup for semantic label maps")]
struct Cli {
    /// Pipeline config; its sections provide defaults for every subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-image parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Abort on the first failing image.
    #[arg(long, global = true)]
    fail_fast: bool,
    /// Filtering backend for the CRF.
    #[arg(long, global = true, value_enum)]
    backend: Option<Backend>,
    /// Base seed for synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Class palette CSV (index,name,r,g,b); defaults to the built-in nine classes.
    #[arg(long, global = true)]
    palette: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Majority vote across member directories.
    Vote(VoteArgs),
    /// Dense CRF refinement of labels or probabilities.
    Crf(CrfArgs),
    /// Small-component removal and optional mode filter.
    Morph(MorphArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Render label maps with the palette.
    Colorize(ColorizeArgs),
    /// Write a synthetic dataset with corrupted members.
    Synth(SynthArgs),
    /// Run the configured stages end to end.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct VoteArgs {
    /// Member directories of .spm or .png files, in priority order.
    #[arg(long = "member", required = true)]
    members: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    tie_break: Option<TiePolicy>,
    /// Also write the mean of the members' probability maps here.
    #[arg(long)]
    average_out: Option<PathBuf>,
}

#[derive(Args)]
struct CrfArgs {
    /// Directory of label PNGs to refine.
    #[arg(long, conflicts_with = "probs", required_unless_present = "probs")]
    labels: Option<PathBuf>,
    /// Directory of .spm probability maps to refine.
    #[arg(long)]
    probs: Option<PathBuf>,
    /// Directory of RGB images matching the inputs by stem.
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    label_smoothing: Option<f32>,
    #[arg(long)]
    w_appearance: Option<f32>,
    #[arg(long)]
    theta_alpha: Option<f32>,
    #[arg(long)]
    theta_beta: Option<f32>,
    #[arg(long)]
    w_smooth: Option<f32>,
    #[arg(long)]
    theta_gamma: Option<f32>,
    #[arg(long)]
    iterations: Option<u32>,
}

#[derive(Args)]
struct MorphArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    min_area: Option<usize>,
    #[arg(long, value_enum)]
    connectivity: Option<ConnectivityOpt>,
    #[arg(long)]
    max_passes: Option<usize>,
    #[arg(long)]
    mode_radius: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction directories; each becomes a report row named after the directory.
    #[arg(long = "pred", required = true)]
    preds: Vec<PathBuf>,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_enum, default_value = "markdown")]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Count classes absent from both maps as zero instead of skipping them.
    #[arg(long)]
    absent_as_zero: bool,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Format {
    Markdown,
    Csv,
}

#[derive(Args)]
struct ColorizeArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    scenes: usize,
    #[arg(long, default_value_t = 3)]
    members: usize,
    #[arg(long, default_value_t = 128)]
    height: usize,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 9)]
    classes: usize,
    #[arg(long, default_value_t = 12)]
    seeds: usize,
    #[arg(long, default_value_t = 0.1)]
    flip_rate: f64,
    #[arg(long, default_value_t = 0.6)]
    flip_confidence: f64,
    #[arg(long, default_value_t = 0.02)]
    speckle_rate: f64,
}

#[derive(Args)]
struct PipelineArgs {
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    crf_input: Option<CrfInput>,
    #[arg(long)]
    absent_as_zero: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut base = match &cli.config {
        Some(path) => PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(p) = &cli.palette {
        base.palette = Some(p.clone());
    }
    if let Some(b) = cli.backend {
        base.filter_backend = b;
    }
    let options = RunOptions { threads: cli.threads, fail_fast: cli.fail_fast };
    match cli.command {
        Command::Vote(a) => vote(&base, options, a),
        Command::Crf(a) => crf(&base, options, a),
        Command::Morph(a) => morph(&base, options, a),
        Command::Eval(a) => eval(&base, options, a),
        Command::Colorize(a) => colorize(&base, options, a),
        Command::Synth(a) => synth(cli.seed.unwrap_or(0), a),
        Command::Pipeline(a) => run_pipeline(base, cli.config.is_some(), options, a),
    }
}

fn palette(config: &PipelineConfig) -> Result<Palette> {
    Ok(pipeline::load_palette(config.palette.as_deref())?)
}

fn stems_in(dir: &Path) -> Result<Vec<String>> {
    let stems = stages::list_stems(dir).with_context(|| format!("listing {}", dir.display()))?;
    if stems.is_empty() {
        bail!("no .spm or .png files in {}", dir.display());
    }
    Ok(stems)
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn finish<T>(outcome: BatchOutcome<T>, verb: &str) -> ExitCode {
    for f in &outcome.failures {
        eprintln!("failed: {}: {}", f.stem, f.message);
    }
    eprintln!("{verb} {} file(s), {} failure(s)", outcome.done.len(), outcome.failures.len());
    if outcome.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn write_labels(labels: &LabelMap, out: &Path, stem: &str) -> Result<(), String> {
    io::write_labelmap_png(labels, stages::stem_path(out, stem, "png")).map_err(|e| e.to_string())
}

fn dir_name(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn vote(base: &PipelineConfig, options: RunOptions, a: VoteArgs) -> Result<ExitCode> {
    let num_classes = palette(base)?.len();
    let names: Vec<String> = a.members.iter().map(|d| dir_name(d)).collect();
    let tie = a.tie_break.unwrap_or(base.ensemble.tie_break);
    let ensemble = EnsembleConfig::new(names, tie.into()).context("member directory names must be unique")?;
    let stems = stems_in(&a.members[0])?;
    mkdir(&a.out)?;
    if let Some(dir) = &a.average_out {
        mkdir(dir)?;
    }
    let outcome = pipeline::run_batch(&stems, options, |stem| {
        let members = a
            .members
            .iter()
            .map(|d| MemberPrediction::read(d, stem, num_classes))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let voted = stages::vote_labels(&members, &ensemble).map_err(|e| e.to_string())?;
        write_labels(&voted, &a.out, stem)?;
        if let Some(dir) = &a.average_out {
            let maps = members
                .iter()
                .map(|m| m.probs.clone().ok_or_else(|| "--average-out needs .spm members".to_string()))
                .collect::<Result<Vec<_>, _>>()?;
            let mean = average_probs(&maps, None).map_err(|e| e.to_string())?;
            io::write_probmap(&mean, stages::stem_path(dir, stem, "spm")).map_err(|e| e.to_string())?;
        }
        Ok(())
    })?;
    Ok(finish(outcome, "voted"))
}

fn crf(base: &PipelineConfig, options: RunOptions, a: CrfArgs) -> Result<ExitCode> {
    let num_classes = palette(base)?.len();
    let mut section = base.crf;
    let overrides = [
        (&mut section.w_appearance, a.w_appearance),
        (&mut section.theta_alpha, a.theta_alpha),
        (&mut section.theta_beta, a.theta_beta),
        (&mut section.w_smooth, a.w_smooth),
        (&mut section.theta_gamma, a.theta_gamma),
    ];
    for (field, v) in overrides {
        if let Some(v) = v {
            *field = v;
        }
    }
    if let Some(n) = a.iterations {
        section.iterations = n;
    }
    let params = section.into();
    segrefine_core::densecrf::CrfParams::validate(&params)?;
    let smoothing = a.label_smoothing.unwrap_or(base.label_smoothing);
    let images = a.images.clone().or_else(|| base.image_dir.clone()).context("--images is required")?;
    let backend = base.filter_backend.into();
    let input = a.labels.as_ref().or(a.probs.as_ref()).expect("clap enforces one input");
    let stems = stems_in(input)?;
    mkdir(&a.out)?;
    let outcome = pipeline::run_batch(&stems, options, |stem| {
        let probs = match (&a.labels, &a.probs) {
            (Some(dir), _) => {
                let labels = io::read_labelmap_png(stages::stem_path(dir, stem, "png"), num_classes)
                    .map_err(|e| e.to_string())?;
                stages::labels_to_probs(&labels, smoothing).map_err(|e| e.to_string())?
            }
            (None, Some(dir)) => io::read_probmap(stages::stem_path(dir, stem, "spm")).map_err(|e| e.to_string())?,
            (None, None) => unreachable!(),
        };
        let image = io::read_rgb_png(stages::stem_path(&images, stem, "png")).map_err(|e| e.to_string())?;
        let labels = stages::crf_labels(&probs, &image, &params, backend).map_err(|e| e.to_string())?;
        write_labels(&labels, &a.out, stem)
    })?;
    Ok(finish(outcome, "refined"))
}

fn morph(base: &PipelineConfig, options: RunOptions, a: MorphArgs) -> Result<ExitCode> {
    let num_classes = palette(base)?.len();
    let mut m = base.morph;
    m.min_area = a.min_area.unwrap_or(m.min_area);
    m.connectivity = a.connectivity.unwrap_or(m.connectivity);
    m.max_passes = a.max_passes.unwrap_or(m.max_passes);
    m.mode_radius = a.mode_radius.or(m.mode_radius);
    if m.min_area == 0 || m.mode_radius == Some(0) {
        bail!("--min-area and --mode-radius must be at least 1");
    }
    let stems = stems_in(&a.labels)?;
    mkdir(&a.out)?;
    let outcome = pipeline::run_batch(&stems, options, |stem| {
        let labels =
            io::read_labelmap_png(stages::stem_path(&a.labels, stem, "png"), num_classes).map_err(|e| e.to_string())?;
        let cleaned = stages::morph_labels(&labels, &m);
        if !cleaned.converged {
            eprintln!("warning: {stem}: cleanup stopped after {} passes", cleaned.passes);
        }
        write_labels(&cleaned.labels, &a.out, stem)
    })?;
    Ok(finish(outcome, "cleaned"))
}

fn eval(base: &PipelineConfig, options: RunOptions, a: EvalArgs) -> Result<ExitCode> {
    let palette = palette(base)?;
    let num_classes = palette.len();
    let stems = stems_in(&a.gt)?;
    let outcome = pipeline::run_batch(&stems, options, |stem| {
        let gt =
            io::read_labelmap_png(stages::stem_path(&a.gt, stem, "png"), num_classes).map_err(|e| e.to_string())?;
        a.preds
            .iter()
            .map(|dir| {
                let pred = MemberPrediction::read(dir, stem, num_classes).map_err(|e| e.to_string())?;
                metrics::accumulate(&pred.labels, &gt, ConfusionMatrix::new(num_classes)).map_err(|e| e.to_string())
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut totals = vec![ConfusionMatrix::new(num_classes); a.preds.len()];
    for (_, cms) in &outcome.done {
        for (t, cm) in totals.iter_mut().zip(cms) {
            t.merge(cm)?;
        }
    }
    let policy = if a.absent_as_zero || base.absent_as_zero { AbsentPolicy::AsZero } else { AbsentPolicy::Exclude };
    let mut report = EvalReport::new(palette.names());
    if !outcome.done.is_empty() {
        for (dir, cm) in a.preds.iter().zip(&totals) {
            report.push_row(StageRow::from_confusion(dir_name(dir), cm, policy)?)?;
        }
    }
    report.push_param("images", outcome.done.len());
    let format = match a.format {
        Format::Markdown => ReportFormat::Markdown,
        Format::Csv => ReportFormat::Csv,
    };
    let text = metrics::render_report(&report, format);
    match &a.out {
        Some(path) => io::write_text(path, &text)?,
        None => print!("{text}"),
    }
    Ok(finish(outcome, "evaluated"))
}

fn colorize(base: &PipelineConfig, options: RunOptions, a: ColorizeArgs) -> Result<ExitCode> {
    let palette = palette(base)?;
    let stems = stems_in(&a.labels)?;
    mkdir(&a.out)?;
    let outcome = pipeline::run_batch(&stems, options, |stem| {
        let labels = io::read_labelmap_png(stages::stem_path(&a.labels, stem, "png"), palette.len())
            .map_err(|e| e.to_string())?;
        let rgb = io::colorize(&labels, &palette).map_err(|e| e.to_string())?;
        io::write_rgb_png(&rgb, stages::stem_path(&a.out, stem, "png")).map_err(|e| e.to_string())
    })?;
    Ok(finish(outcome, "colorized"))
}

fn synth(seed: u64, a: SynthArgs) -> Result<ExitCode> {
    let spec = BundleSpec {
        scenes: a.scenes,
        members: a.members,
        base_seed: seed,
        scene: SceneSpec {
            height: a.height,
            width: a.width,
            num_classes: a.classes,
            num_seeds: a.seeds,
            noise_flip_rate: a.flip_rate,
            flip_confidence: a.flip_confidence,
            speckle_rate: a.speckle_rate,
            rng_seed: 0,
        },
    };
    bundle::write_bundle(&a.out, &spec)?;
    eprintln!("wrote {} scene(s) with {} member(s) to {}", a.scenes, a.members, a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn run_pipeline(
    mut config: PipelineConfig,
    has_config: bool,
    options: RunOptions,
    a: PipelineArgs,
) -> Result<ExitCode> {
    if !has_config {
        bail!("pipeline needs --config");
    }
    if let Some(out) = a.out {
        config.output_dir = out;
    }
    if let Some(input) = a.crf_input {
        config.crf_input = input;
    }
    config.absent_as_zero |= a.absent_as_zero;
    let summary = pipeline::run_pipeline(&config, options)?;
    for f in &summary.failures {
        eprintln!("failed: {}: {}", f.stem, f.message);
    }
    if let Some(report) = &summary.report {
        print!("{}", metrics::render_report(report, ReportFormat::Markdown));
    }
    eprintln!(
        "processed {} image(s), {} failure(s); outputs in {}",
        summary.processed.len(),
        summary.failures.len(),
        config.output_dir.display()
    );
    Ok(if summary.failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
