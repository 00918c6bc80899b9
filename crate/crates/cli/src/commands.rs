//! Subcommand implementations. Each returns the paths it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use gesture_forge::dataset::{
    add_misc_class, load_manifest, DatasetManifest, Sample, Scenario, TRAINING_CLASSES,
};
use gesture_forge::experiments::{
    compute_metrics, emit_report, evaluate_samples, generate_synthetic, ConfusionCounts, ExperimentConfig, ExperimentSession,
    FrameCache, MetricSet, ReportFormat, SyntheticSpec,
};
use gesture_forge::gradsuite::{run_gradient_suite, SuiteOptions, SUITE_PROBES};
use gesture_forge::model::{
    build_paper_network, fine_tune, load_checkpoint, save_checkpoint, train, Checkpoint, TrainConfig, TrainingLog,
    TrainingMetadata,
};
use gesture_forge::vision::{parse_cascade_xml, preprocess_frames, CascadeModel, DetectParams};

use crate::error::{CliError, FailureKind};

#[derive(Debug, Parser)]
#[command(name = "gesture-forge", version, about = "Tongue-out gesture detection: preprocessing, training, LOSO experiments, annotation service")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect and crop faces from a directory of frames.
    Preprocess(PreprocessArgs),
    /// Train a network on every participant of the given manifests.
    Train(TrainArgs),
    /// Score a checkpoint on a manifest.
    Evaluate(EvaluateArgs),
    /// Run one scenario over all leave-one-subject-out folds.
    Loso(LosoArgs),
    /// Check analytic gradients of every layer against finite differences.
    Gradcheck(GradcheckArgs),
    /// Serve frames and annotation documents over HTTP.
    Serve(ServeArgs),
    /// Write the synthetic face dataset and its manifests.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// Disable online scale/rotation augmentation.
    #[arg(long)]
    pub no_augment: bool,
    /// Weight the loss by inverse class frequency.
    #[arg(long)]
    pub class_weighting: bool,
}

impl TrainFlags {
    pub fn config(&self) -> Result<TrainConfig, CliError> {
        let mut c = TrainConfig::default();
        if let Some(v) = self.epochs {
            c.max_epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.lr {
            c.learning_rate = v;
        }
        if let Some(v) = self.momentum {
            c.momentum = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.validation_fraction {
            c.validation_fraction = v;
        }
        c.augment = !self.no_augment;
        c.class_weighting = self.class_weighting;
        c.validate().map_err(|e| CliError::new(FailureKind::Config, e))?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Directory of PPM/BMP frames.
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub cascade: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.1)]
    pub scale_step: f64,
    #[arg(long, default_value_t = 3)]
    pub min_neighbors: usize,
    /// Smallest face side in pixels.
    #[arg(long)]
    pub min_size: Option<u32>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest_adults: Option<PathBuf>,
    #[arg(long)]
    pub manifest_children: Option<PathBuf>,
    /// Start from this checkpoint and fine-tune every layer.
    #[arg(long)]
    pub init_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Only this participant.
    #[arg(long)]
    pub participant: Option<String>,
    #[arg(long)]
    pub misc_class: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LosoArgs {
    /// 1 adults only, 2 children only, 3 combined, 4 transfer. Several
    /// scenarios (`1,4`) run in one session and share the adult model.
    #[arg(long, value_delimiter = ',', required = true)]
    pub scenario: Vec<u8>,
    #[arg(long)]
    pub manifest_adults: Option<PathBuf>,
    #[arg(long)]
    pub manifest_children: PathBuf,
    #[arg(long)]
    pub misc_class: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = gesture_forge::nn::gradcheck::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
    /// Negate one probe's analytic gradient (fault injection).
    #[arg(long, hide = true)]
    pub sign_flip: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long)]
    pub video_root: PathBuf,
    #[arg(long)]
    pub annotation_root: PathBuf,
    /// Built annotator assets served under `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub children: usize,
    #[arg(long, default_value_t = 17)]
    pub adults: usize,
    #[arg(long, default_value_t = 40)]
    pub neutral: usize,
    #[arg(long, default_value_t = 20)]
    pub tongue_out: usize,
    #[arg(long, default_value_t = 8)]
    pub smiling: usize,
    #[arg(long, default_value_t = 8)]
    pub mouth_opening: usize,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::config(format!("{what} {} does not exist", path.display())))
    }
}

fn require_dir(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::config(format!("{what} {} is not a directory", path.display())))
    }
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::data(e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn load_cascade(path: &Path) -> Result<CascadeModel, CliError> {
    require_file(path, "cascade")?;
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(parse_cascade_xml(&text).map_err(|e| CliError::new(FailureKind::Data, anyhow::Error::new(e).context(path.display().to_string())))?)
}

pub fn cmd_preprocess(args: &PreprocessArgs) -> Result<Vec<PathBuf>, CliError> {
    require_dir(&args.frames, "frame directory")?;
    if !(args.scale_step > 1.0) {
        return Err(CliError::config(format!("scale step must exceed 1, got {}", args.scale_step)));
    }
    let cascade = load_cascade(&args.cascade)?;
    let params = DetectParams {
        scale_step: args.scale_step,
        min_neighbors: args.min_neighbors,
        min_size: args.min_size.map(|s| (s, s)),
        ..DetectParams::default()
    };
    create_out(&args.out)?;
    let report = preprocess_frames(&args.frames, &cascade, &params, &args.out)?;
    let path = args.out.join("preprocess_report.json");
    write_json(&path, &report)?;
    println!(
        "frames_total {} faces_found {} frames_skipped {}",
        report.frames_total, report.faces_found, report.frames_skipped
    );
    Ok(vec![path])
}

fn load_optional(path: Option<&PathBuf>, what: &str) -> Result<Option<DatasetManifest>, CliError> {
    path.map(|p| {
        require_file(p, what)?;
        Ok(load_manifest(p)?)
    })
    .transpose()
}

fn training_samples(manifests: &[&DatasetManifest]) -> Vec<Sample> {
    let mut out = Vec::new();
    for m in manifests {
        for p in &m.participants {
            for class in TRAINING_CLASSES {
                out.extend(p.frames_of(class).iter().map(|path| Sample {
                    participant_id: p.id.clone(),
                    class,
                    path: m.resolve(path),
                }));
            }
        }
    }
    out
}

pub fn cmd_train(args: &TrainArgs) -> Result<Vec<PathBuf>, CliError> {
    let config = args.train.config()?;
    if args.manifest_adults.is_none() && args.manifest_children.is_none() {
        return Err(CliError::config("train needs --manifest-adults and/or --manifest-children"));
    }
    if let Some(p) = &args.init_checkpoint {
        require_file(p, "checkpoint")?;
    }
    let adults = load_optional(args.manifest_adults.as_ref(), "adult manifest")?;
    let children = load_optional(args.manifest_children.as_ref(), "children manifest")?;
    let manifests: Vec<&DatasetManifest> = adults.iter().chain(children.iter()).collect();
    let samples = training_samples(&manifests);
    let data = FrameCache::new().training_samples(&samples)?;
    let (net, log): (_, TrainingLog) = match &args.init_checkpoint {
        Some(p) => fine_tune(&load_checkpoint(p)?.network, &data, &config)?,
        None => train(build_paper_network(config.class_count, config.seed)?, &data, &config)?,
    };
    create_out(&args.out)?;
    let ckpt = args.out.join("model.gfck");
    save_checkpoint(&Checkpoint::new(&net, TrainingMetadata::from_log(&log, &config)), &ckpt)?;
    let log_path = args.out.join("training_log.json");
    write_json(&log_path, &log)?;
    println!("trained on {} samples, best epoch {}", log.train_size, log.best_epoch);
    Ok(vec![ckpt, log_path])
}

#[derive(Serialize)]
struct EvaluationRecord {
    checkpoint: PathBuf,
    participants: Vec<String>,
    misc_class: bool,
    counts: ConfusionCounts,
    metrics: MetricSet<f64>,
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<Vec<PathBuf>, CliError> {
    require_file(&args.checkpoint, "checkpoint")?;
    require_file(&args.manifest, "manifest")?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let manifest = load_manifest(&args.manifest)?;
    let mut samples = training_samples(&[&manifest]);
    if let Some(id) = &args.participant {
        if manifest.participant(id).is_none() {
            return Err(CliError::config(format!("participant {id} is not in the manifest")));
        }
        samples.retain(|s| &s.participant_id == id);
    }
    if args.misc_class {
        samples = add_misc_class(&samples, &manifest);
    }
    let counts = evaluate_samples(&ckpt.network, &samples, &mut FrameCache::new())?;
    let metrics = compute_metrics::<f64>(&counts)?;
    let mut participants: Vec<String> = samples.iter().map(|s| s.participant_id.clone()).collect();
    participants.dedup();
    create_out(&args.out)?;
    let path = args.out.join("metrics.json");
    write_json(
        &path,
        &EvaluationRecord { checkpoint: args.checkpoint.clone(), participants, misc_class: args.misc_class, counts, metrics },
    )?;
    println!("{counts:?}");
    Ok(vec![path])
}

/// Base name of the report files of a run.
pub fn report_stem(scenario: Scenario, misc_class: bool) -> String {
    if misc_class {
        format!("scenario-{}-misc", scenario.id())
    } else {
        format!("scenario-{}", scenario.id())
    }
}

pub fn cmd_loso(args: &LosoArgs) -> Result<Vec<PathBuf>, CliError> {
    let scenarios = args
        .scenario
        .iter()
        .map(|&id| {
            Scenario::from_id(id)
                .ok_or_else(|| CliError::config(format!("unknown scenario {id}; expected 1, 2, 3 or 4")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let config = args.train.config()?;
    require_file(&args.manifest_children, "children manifest")?;
    let adults = match (&args.manifest_adults, scenarios.iter().find(|s| **s != Scenario::ChildrenOnly)) {
        (Some(p), _) => {
            require_file(p, "adult manifest")?;
            load_manifest(p)?
        }
        (None, None) => DatasetManifest { fps: 30.0, participants: Vec::new(), root: PathBuf::new() },
        (None, Some(s)) => return Err(CliError::config(format!("scenario {s} needs --manifest-adults"))),
    };
    let children = load_manifest(&args.manifest_children)?;
    let cfg = ExperimentConfig { train: config, misc_class: args.misc_class };
    create_out(&args.out)?;
    let mut session = ExperimentSession::new();
    let mut written = Vec::new();
    for scenario in scenarios {
        let report = session.run(scenario, &adults, &children, &cfg)?;
        let stem = report_stem(scenario, args.misc_class);
        for format in [ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::Json] {
            let path = args.out.join(format!("{stem}.{}", format.extension()));
            emit_report(&report, format, &path)?;
            written.push(path);
        }
        print!("{}", gesture_forge::experiments::to_markdown(&report));
    }
    Ok(written)
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<Vec<PathBuf>, CliError> {
    if let Some(name) = &args.sign_flip {
        if !SUITE_PROBES.contains(&name.as_str()) {
            return Err(CliError::config(format!("unknown probe {name}")));
        }
    }
    let opts = SuiteOptions { threshold: args.threshold, seed: args.seed, sign_flip: args.sign_flip.clone(), ..SuiteOptions::default() };
    let report = run_gradient_suite(&opts).map_err(|e| CliError::new(FailureKind::Training, e))?;
    println!("{:<26} {:>9} {:>14}  {}", "layer", "checked", "max rel err", "result");
    for e in &report.entries {
        println!(
            "{:<26} {:>9} {:>14.3e}  {}",
            e.name,
            e.checked,
            e.max_relative_error,
            if e.passed { "pass" } else { "FAIL" }
        );
    }
    println!("threshold {:.1e}: {}", report.threshold, if report.passed() { "pass" } else { "FAIL" });
    if report.passed() {
        Ok(Vec::new())
    } else {
        Err(CliError::new(
            FailureKind::Check,
            anyhow::anyhow!("gradient check failed: max relative error {:.3e}", report.max_relative_error()),
        ))
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<Vec<PathBuf>, CliError> {
    let spec = SyntheticSpec {
        children: args.children,
        adults: args.adults,
        neutral: args.neutral,
        tongue_out: args.tongue_out,
        smiling: args.smiling,
        mouth_opening: args.mouth_opening,
        seed: args.seed,
        ..SyntheticSpec::default()
    };
    let ds = generate_synthetic(&args.out, &spec)?;
    println!("{}\n{}", ds.adults.display(), ds.children.display());
    Ok(vec![ds.adults, ds.children])
}

pub fn cmd_serve(args: &ServeArgs) -> Result<Vec<PathBuf>, CliError> {
    require_dir(&args.video_root, "video root")?;
    require_dir(&args.annotation_root, "annotation root")?;
    if let Some(d) = &args.static_dir {
        require_dir(d, "static directory")?;
    }
    let state = crate::serve::AppState::new(args.video_root.clone(), args.annotation_root.clone(), args.static_dir.clone());
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::config(e))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", args.port))
            .await
            .map_err(|e| CliError::config(format!("cannot bind port {}: {e}", args.port)))?;
        log::info!("serving on port {}", args.port);
        axum::serve(listener, crate::serve::router(state)).await.map_err(|e| CliError::data(e))
    })?;
    Ok(Vec::new())
}

pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    match &cli.command {
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Loso(a) => cmd_loso(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Synth(a) => cmd_synth(a),
    }
}
