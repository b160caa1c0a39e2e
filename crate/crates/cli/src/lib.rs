//! `pem` subcommands. Exit codes: 0 success, 1 usage error, 2 data error.

use std::collections::HashSet;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use pem_core::affectd::{Server, SessionManager, DEFAULT_MAX_SESSIONS};
use pem_core::dataset::{self, VideoInput};
use pem_core::ingest::{self, read_wav};
use pem_core::labels::synthesize_labels;
use pem_core::model::{self, load_model, save_model, train_with_progress, AffectTrace};
use pem_core::physio::{read_segments, read_sensor_csv, ParticipantFeatures, SignalKind};
use pem_core::report::{write_report, EvalBundle, SurveyResponses, UserEval};
use pem_core::{AmplitudeSeries, Dataset, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// Invocation problems that are not about the data itself.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "pem", version, about = "Player experience modelling pipeline")]
pub struct Cli {
    /// Rayon worker threads (training results depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Extract per-chunk voice amplitudes from a WAV file.
    Ingest(IngestArgs),
    /// Turn amplitudes into smoothed affect labels.
    Labels(LabelsArgs),
    /// Build the frame-stack dataset for the configured videos.
    Dataset(DatasetArgs),
    /// Train the CNN on a dataset.
    Train(TrainArgs),
    /// Predict an affect trace for a frame directory.
    Predict(PredictArgs),
    /// Compute EDA and HRV features per level segment.
    Physio(PhysioArgs),
    /// Pair a model trace with normalized EDA for reporting.
    Eval(EvalArgs),
    /// Write the summary tables and per-user plots.
    Report(ReportArgs),
    /// Serve streaming predictions over TCP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// Run configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> anyhow::Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p).map_err(|e| usage(format!("config {}: {e}", p.display()))),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Input WAV file.
    #[arg(long, required_unless_present = "demux")]
    wav: Option<PathBuf>,
    /// Output amplitude CSV.
    #[arg(long, required_unless_present = "demux")]
    out: Option<PathBuf>,
    #[arg(long)]
    chunk_ms: Option<u32>,
    /// Noise gate threshold as a fraction of peak.
    #[arg(long)]
    noise_gate: Option<f64>,
    /// Run the configured demux command for every video with a video path.
    #[arg(long)]
    demux: bool,
}

#[derive(Debug, Args)]
struct LabelsArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Amplitude CSV from `pem ingest`.
    #[arg(long)]
    amps: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Moving-average window in chunks.
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Debug, Args)]
struct DatasetArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Output dataset (overrides paths.dataset).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    side: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Input dataset (overrides paths.dataset).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output model (overrides paths.model).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    model: PathBuf,
    /// Directory of PNG frames.
    #[arg(long)]
    frames: PathBuf,
    /// Output trace CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    fps: Option<u32>,
}

#[derive(Debug, Args)]
struct PhysioArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    participant: String,
    /// EDA CSV with `t_ms,value` rows.
    #[arg(long, required_unless_present = "ppg")]
    eda: Option<PathBuf>,
    /// PPG CSV with `t_ms,value` rows.
    #[arg(long)]
    ppg: Option<PathBuf>,
    /// Level boundaries as `label,start_ms,end_ms`.
    #[arg(long)]
    segments: PathBuf,
    /// Output feature JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    user: String,
    /// Model trace CSV from `pem predict`.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    eda: PathBuf,
    #[arg(long)]
    segments: PathBuf,
    /// Output evaluation JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Survey CSV for the experiential table.
    #[arg(long)]
    survey: Option<PathBuf>,
    /// Evaluation JSON files from `pem eval`.
    #[arg(long, num_args = 1..)]
    eval: Vec<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 7878)]
    pub port: u16,
    #[arg(long, default_value_t = DEFAULT_MAX_SESSIONS)]
    pub max_sessions: usize,
    /// Seconds of inactivity before a session is dropped.
    #[arg(long, default_value_t = 300)]
    pub idle_timeout: u64,
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn validated(cfg: RunConfig) -> anyhow::Result<RunConfig> {
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn ingest(a: IngestArgs) -> anyhow::Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(c) = a.chunk_ms {
        cfg.chunk_ms = c;
    }
    if let Some(g) = a.noise_gate {
        cfg.noise_gate = g;
    }
    let cfg = validated(cfg)?;
    if a.demux {
        if cfg.demux.is_empty() {
            return Err(usage("--demux needs a demux command in the config"));
        }
        for v in cfg.paths.videos.iter().filter(|v| v.video.is_some()) {
            let argv = cfg.demux_command(v)?.expect("template present");
            std::fs::create_dir_all(&v.frames)?;
            info!("demux {}: {}", v.id, argv.join(" "));
            let status = Command::new(&argv[0])
                .args(&argv[1..])
                .status()
                .with_context(|| format!("running {}", argv[0]))?;
            if !status.success() {
                bail!("demux of {} failed with {status}", v.id);
            }
        }
    }
    if let (Some(wav), Some(out)) = (a.wav, a.out) {
        let mut track = read_wav(&wav).with_context(|| format!("reading {}", wav.display()))?;
        if cfg.noise_gate > 0.0 {
            track = ingest::noise_gate(&track, cfg.noise_gate)?;
        }
        let amps = AmplitudeSeries::from_track(&track, cfg.chunk_ms)?;
        let mut w = create(&out)?;
        amps.write_csv(&mut w)?;
        w.flush()?;
        info!("{} chunks of {} ms -> {}", amps.len(), cfg.chunk_ms, out.display());
    }
    Ok(())
}

fn labels(a: LabelsArgs) -> anyhow::Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(w) = a.window {
        cfg.window = w;
    }
    let cfg = validated(cfg)?;
    let amps = AmplitudeSeries::read_csv(&a.amps).with_context(|| format!("reading {}", a.amps.display()))?;
    let labels = synthesize_labels(&amps, cfg.window)?;
    let mut w = create(&a.out)?;
    labels.write_csv(&mut w)?;
    w.flush()?;
    info!("{} labels (window {}) -> {}", labels.len(), cfg.window, a.out.display());
    Ok(())
}

fn build_dataset(a: DatasetArgs) -> anyhow::Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(s) = a.side {
        cfg.side = s;
    }
    let cfg = validated(cfg)?;
    if cfg.paths.videos.is_empty() {
        return Err(usage("no videos configured (paths.videos)"));
    }
    let mut inputs = Vec::new();
    for v in &cfg.paths.videos {
        let mut track = read_wav(&v.wav).with_context(|| format!("video {}", v.id))?;
        if cfg.noise_gate > 0.0 {
            track = ingest::noise_gate(&track, cfg.noise_gate)?;
        }
        let amps = AmplitudeSeries::from_track(&track, cfg.chunk_ms)?;
        let labels = synthesize_labels(&amps, cfg.window)?;
        let frames = ingest::load_frames(&v.frames, cfg.fps, cfg.side).with_context(|| format!("video {}", v.id))?;
        let (input, note) = VideoInput::aligned(v.id.clone(), frames, labels);
        if let Some(n) = note {
            warn!("{n}");
        }
        inputs.push(input);
    }
    let ds = dataset::build(&inputs, cfg.alignment)?;
    let out = a.out.unwrap_or(cfg.paths.dataset);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    ds.save(&out)?;
    info!("{} samples from {} videos -> {}", ds.len(), inputs.len(), out.display());
    Ok(())
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.model.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.model.lr = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.model.batch_size = b;
    }
    let dataset_path = a.dataset.unwrap_or_else(|| cfg.paths.dataset.clone());
    let ds = Dataset::load(&dataset_path).with_context(|| format!("loading {}", dataset_path.display()))?;
    if ds.side != cfg.side {
        info!("using dataset side {} (config has {})", ds.side, cfg.side);
        cfg.side = ds.side;
    }
    let cfg = validated(cfg)?;
    let holdout: HashSet<String> = cfg.paths.holdout.iter().cloned().collect();
    let (train_set, held) = ds.split(&holdout)?;
    info!("training on {} samples ({} held out)", train_set.len(), held.len());
    let model_cfg = cfg.model_config();
    let bundle = train_with_progress(&train_set, &model_cfg, |epoch, loss| {
        info!("epoch {}/{}: mse {loss:.6}", epoch + 1, model_cfg.epochs);
    })?;
    let out = a.out.unwrap_or(cfg.paths.model);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_model(&bundle, &out)?;
    info!("model -> {}", out.display());
    Ok(())
}

fn predict(a: PredictArgs) -> anyhow::Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(f) = a.fps {
        cfg.fps = f;
    }
    if cfg.fps == 0 {
        return Err(usage("fps must be positive"));
    }
    let bundle = load_model(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let frames = ingest::load_frames(&a.frames, cfg.fps, bundle.config.side)?;
    let trace = model::predict_video(&bundle, &frames)?;
    let mut w = create(&a.out)?;
    trace.write_csv(&mut w)?;
    w.flush()?;
    info!("{} predictions -> {}", trace.len(), a.out.display());
    Ok(())
}

fn physio(a: PhysioArgs) -> anyhow::Result<()> {
    let cfg = validated(a.config.load()?)?;
    let segments = read_segments(&a.segments).with_context(|| format!("reading {}", a.segments.display()))?;
    let eda = a
        .eda
        .as_ref()
        .map(|p| read_sensor_csv(p)?.into_recording(SignalKind::Eda, &segments))
        .transpose()?;
    let ppg = a
        .ppg
        .as_ref()
        .map(|p| read_sensor_csv(p)?.into_recording(SignalKind::Ppg, &segments))
        .transpose()?;
    let features = ParticipantFeatures::compute(
        a.participant,
        eda.as_ref().map(|r| (r, &cfg.eda)),
        ppg.as_ref().map(|r| (r, &cfg.ppg)),
    )?;
    for s in &features.segments {
        for e in &s.errors {
            warn!("segment {}: {e}", s.label);
        }
    }
    let mut w = create(&a.out)?;
    serde_json::to_writer_pretty(&mut w, &features)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let cfg = validated(a.config.load()?)?;
    let trace = AffectTrace::read_csv(&a.trace).with_context(|| format!("reading {}", a.trace.display()))?;
    let eda = read_sensor_csv(&a.eda).with_context(|| format!("reading {}", a.eda.display()))?;
    let segments = read_segments(&a.segments).with_context(|| format!("reading {}", a.segments.display()))?;
    let user = UserEval::from_recordings(a.user, &trace, eda, &segments, &cfg.eda)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    user.write_json(&a.out)?;
    Ok(())
}

fn report(a: ReportArgs) -> anyhow::Result<()> {
    if a.survey.is_none() && a.eval.is_empty() {
        return Err(usage("report needs --survey and/or --eval"));
    }
    let survey = a.survey.as_ref().map(SurveyResponses::read_csv).transpose()?;
    let bundle = if a.eval.is_empty() {
        None
    } else {
        let users = a
            .eval
            .iter()
            .map(|p| UserEval::read_json(p).with_context(|| format!("reading {}", p.display())))
            .collect::<anyhow::Result<Vec<_>>>()?;
        Some(EvalBundle { users })
    };
    for p in write_report(&a.out, survey.as_ref(), bundle.as_ref())? {
        info!("wrote {}", p.display());
    }
    Ok(())
}

/// Loads the model and blocks serving connections.
pub fn serve(a: ServeArgs) -> anyhow::Result<()> {
    let bundle = load_model(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let manager = SessionManager::new(bundle.predictor()?, a.max_sessions, Duration::from_secs(a.idle_timeout));
    let server = Server::bind((a.host.as_str(), a.port), manager)?;
    info!("listening on {}", server.local_addr()?);
    server.run()?;
    Ok(())
}

/// Maps an error to its exit code and reports it on stderr.
pub fn report_error(e: &anyhow::Error) -> i32 {
    eprintln!("error: {e:#}");
    if e.downcast_ref::<UsageError>().is_some() {
        EXIT_USAGE
    } else {
        EXIT_DATA
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("could not size thread pool: {e}");
        }
    }
    let result = match cli.command {
        Cmd::Ingest(a) => ingest(a),
        Cmd::Labels(a) => labels(a),
        Cmd::Dataset(a) => build_dataset(a),
        Cmd::Train(a) => train(a),
        Cmd::Predict(a) => predict(a),
        Cmd::Physio(a) => physio(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Report(a) => report(a),
        Cmd::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => report_error(&e),
    }
}

pub fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
}
