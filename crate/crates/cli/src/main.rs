//! `keysort`: map encoding, skeleton assembly, tracking and evaluation from
//! the command line.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use keysort_core::assembly::{assemble, gate_for};
use keysort_core::io::{
    self, check_header, FrameDetections, Header, DETECTIONS_FORMAT, TRACKS_FORMAT, TRUTH_FORMAT,
};
use keysort_core::kalman::DEFAULT_SIGN_WINDOW;
use keysort_core::map_codec::{candidates_by_category, decode_candidates, encode};
use keysort_core::metrics::{frame_difference, CoordSet, Evaluator};
use keysort_core::synth::{self, KfDemoConfig, KfMode, ScenarioConfig};
use keysort_core::{DecodeParams, Error, Mitigation, Pose, SkeletonSpec, Tracker, TrackerConfig};

const EXIT_RUNTIME: u8 = 1;
const EXIT_INVALID: u8 = 2;

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn invalid(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: EXIT_INVALID, error: error.into() }
    }

    fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: EXIT_RUNTIME, error: error.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_INVALID,
            Error::Io { .. } | Error::SingularInnovation | Error::InsufficientSamples { .. } => EXIT_RUNTIME,
            _ => EXIT_INVALID,
        };
        Failure { code, error: e.into() }
    }
}

type CmdResult = std::result::Result<(), Failure>;

#[derive(Parser)]
#[command(name = "keysort", version, about = "Multi-animal keypoint decoding and KeySORT tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode annotated poses into probability and association maps.
    Encode(EncodeArgs),
    /// Decode map stacks into candidates and assemble skeletons.
    DecodeAssemble(DecodeArgs),
    /// Track detections over time.
    Track(TrackArgs),
    /// Compare tracks or detections against ground truth.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic scene with its ground truth and noisy detections.
    Simulate(SimulateArgs),
    /// Run the one-dimensional regime-switch filter demo.
    KfDemo(KfDemoArgs),
    /// Print the bundled skeleton configuration.
    Skeleton,
}

#[derive(Args)]
struct SkeletonArg {
    /// Skeleton configuration (TOML). Defaults to the bundled cattle skeleton.
    #[arg(long, short = 's')]
    skeleton: Option<PathBuf>,
}

impl SkeletonArg {
    fn load(&self) -> std::result::Result<SkeletonSpec, Failure> {
        let Some(path) = &self.skeleton else {
            return Ok(SkeletonSpec::cattle());
        };
        let text = read_config(path)?;
        Ok(SkeletonSpec::from_toml(&text)?)
    }
}

#[derive(Args)]
struct EncodeArgs {
    /// Annotated poses: a detections or ground-truth file.
    annotations: PathBuf,
    /// Directory receiving one map file per frame.
    #[arg(long, short = 'o')]
    out_dir: PathBuf,
    #[command(flatten)]
    skeleton: SkeletonArg,
    /// Kernel width as a fraction of the skeleton scale.
    #[arg(long)]
    theta: Option<f64>,
    /// Kernel value below which association weights are zero.
    #[arg(long)]
    gamma: Option<f64>,
    /// Image width; defaults to the file header.
    #[arg(long)]
    width: Option<usize>,
    /// Image height; defaults to the file header.
    #[arg(long)]
    height: Option<usize>,
}

#[derive(Args)]
struct DecodeArgs {
    /// Map files, or directories holding `*.ksmaps` files.
    #[arg(required = true)]
    maps: Vec<PathBuf>,
    #[arg(long, short = 'o')]
    out: PathBuf,
    #[command(flatten)]
    skeleton: SkeletonArg,
    #[arg(long, default_value_t = 0.4)]
    threshold: f64,
    /// Non-maximum suppression radius in pixels.
    #[arg(long, default_value_t = 7.0)]
    nms: f64,
    /// Side of the box filter applied before peak search.
    #[arg(long, default_value_t = 5)]
    smooth: usize,
    /// Association gate as a fraction of the image diagonal.
    #[arg(long, default_value_t = 0.05)]
    gate_frac: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum MitigationArg {
    Signs,
    None,
}

#[derive(Args)]
struct TrackArgs {
    detections: PathBuf,
    #[arg(long, short = 'o')]
    out: PathBuf,
    #[command(flatten)]
    skeleton: SkeletonArg,
    /// Tracker configuration (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Association gate on the mean keypoint distance, in original-image pixels.
    #[arg(long)]
    gate: Option<f64>,
    #[arg(long)]
    max_missed: Option<u32>,
    #[arg(long)]
    maturity_age: Option<u32>,
    #[arg(long)]
    impute_max_consecutive: Option<u32>,
    #[arg(long)]
    impute_freq: Option<f64>,
    #[arg(long)]
    freq_memory: Option<f64>,
    #[arg(long)]
    r_scale: Option<f64>,
    #[arg(long)]
    q_pos: Option<f64>,
    #[arg(long)]
    q_vel: Option<f64>,
    #[arg(long)]
    p0_factor: Option<f64>,
    /// Factor from working coordinates to original-image pixels.
    #[arg(long)]
    coord_scale: Option<f64>,
    /// Innovation-sign history length.
    #[arg(long)]
    sign_window: Option<usize>,
    /// `none` applies the adaptive factor without sign mitigation.
    #[arg(long, value_enum)]
    mitigation: Option<MitigationArg>,
    /// Never emit predicted coordinates for missing keypoints.
    #[arg(long)]
    no_impute: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum CoordArg {
    Observed,
    Posterior,
}

#[derive(Args)]
struct EvaluateArgs {
    /// A tracks, detections or ground-truth file.
    predictions: PathBuf,
    /// Ground-truth file written by `simulate`.
    #[arg(long, short = 't')]
    truth: PathBuf,
    /// JSON report path.
    #[arg(long, short = 'o')]
    out: PathBuf,
    /// Prefix for the summary and sample CSV files.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    skeleton: SkeletonArg,
    /// Maximum mean keypoint distance of a prediction/truth pair.
    #[arg(long, default_value_t = 50.0)]
    pair_gate: f64,
    /// Which track coordinates to score.
    #[arg(long, value_enum, default_value_t = CoordArg::Posterior)]
    coords: CoordArg,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    #[command(flatten)]
    skeleton: SkeletonArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Standard,
    Adaptive,
    AdaptiveUnmitigated,
}

impl From<ModeArg> for KfMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Standard => KfMode::Standard,
            ModeArg::Adaptive => KfMode::Adaptive,
            ModeArg::AdaptiveUnmitigated => KfMode::AdaptiveUnmitigated,
        }
    }
}

#[derive(Args)]
struct KfDemoArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Adaptive)]
    mode: ModeArg,
    /// CSV output; stdout when omitted.
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 250)]
    switch: usize,
    /// Process-noise multiplier applied at the switch.
    #[arg(long, default_value_t = 1e5)]
    jump: f64,
    /// Filter Q relative to the pre-switch truth.
    #[arg(long, default_value_t = 1.0)]
    q_model_factor: f64,
    #[arg(long, default_value_t = DEFAULT_SIGN_WINDOW)]
    sign_window: usize,
}

fn read_config(path: &Path) -> std::result::Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Failure::invalid(anyhow!("config not found: {}", path.display()))
        } else {
            Failure::runtime(anyhow!("{}: {e}", path.display()))
        }
    })
}

fn write_failure(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::runtime(anyhow!("{}: {e}", path.display()))
}

/// Reads the `format` field of a file's header line.
fn peek_format(path: &Path) -> std::result::Result<String, Failure> {
    let mut first = String::new();
    io::open(path)?.read_line(&mut first).map_err(|e| Failure::runtime(anyhow!("{}: {e}", path.display())))?;
    let v: serde_json::Value = serde_json::from_str(&first)
        .map_err(|e| Failure::invalid(anyhow!("{}: header is not JSON: {e}", path.display())))?;
    v.get("format")
        .and_then(|f| f.as_str())
        .map(str::to_string)
        .ok_or_else(|| Failure::invalid(anyhow!("{}: header lacks a format field", path.display())))
}

/// Poses per frame from either a detections or a ground-truth file.
fn read_pose_frames(path: &Path, spec: &SkeletonSpec) -> std::result::Result<(Header, Vec<FrameDetections>), Failure> {
    let format = peek_format(path)?;
    let input = io::open(path)?;
    let (header, frames) = match format.as_str() {
        DETECTIONS_FORMAT => io::read_detections(input)?,
        TRUTH_FORMAT => {
            let (h, truth) = io::read_truth(input)?;
            let frames = truth
                .frames
                .iter()
                .enumerate()
                .map(|(i, f)| FrameDetections { frame_index: f.frame_index, poses: truth.poses(i) })
                .collect();
            (h, frames)
        }
        other => return Err(Failure::invalid(anyhow!("{}: cannot read poses from a `{other}` file", path.display()))),
    };
    check_header(&header, spec)?;
    Ok((header, frames))
}

fn cmd_encode(a: EncodeArgs) -> CmdResult {
    let spec = a.skeleton.load()?;
    let (header, frames) = read_pose_frames(&a.annotations, &spec)?;
    let width = a.width.unwrap_or(header.width);
    let height = a.height.unwrap_or(header.height);
    if width == 0 || height == 0 {
        return Err(Failure::invalid(anyhow!("image size {width}x{height} is empty")));
    }
    let mut params = spec.encoder();
    if let Some(t) = a.theta {
        params.theta = t;
    }
    if let Some(g) = a.gamma {
        params.gamma = g;
    }
    fs::create_dir_all(&a.out_dir).map_err(write_failure(&a.out_dir))?;
    for frame in &frames {
        let maps = encode(&frame.poses, &spec, &params, width, height)?;
        let path = a.out_dir.join(format!("frame_{:06}.ksmaps", frame.frame_index));
        let out = io::create(&path)?;
        io::write_map_stack(out, &maps, &spec).map_err(write_failure(&path))?;
    }
    info!("wrote {} map files to {}", frames.len(), a.out_dir.display());
    Ok(())
}

/// Frame index encoded in a map file name such as `frame_000042.ksmaps`.
fn frame_index_of(path: &Path) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem.chars().rev().take_while(char::is_ascii_digit).collect();
    digits.chars().rev().collect::<String>().parse().ok()
}

fn map_files(inputs: &[PathBuf]) -> std::result::Result<Vec<PathBuf>, Failure> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(write_failure(p))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "ksmaps"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn cmd_decode_assemble(a: DecodeArgs) -> CmdResult {
    let spec = a.skeleton.load()?;
    let params = DecodeParams { threshold: a.threshold, nms_radius: a.nms, smooth: a.smooth };
    let files = map_files(&a.maps)?;
    let mut frames = Vec::with_capacity(files.len());
    let (mut width, mut height) = (0, 0);
    for (k, path) in files.iter().enumerate() {
        let maps = io::read_map_stack(io::open(path)?, &spec)?;
        (width, height) = (maps.width, maps.height);
        let cands = decode_candidates(&maps.prob, &params);
        let skeletons = assemble(&candidates_by_category(&cands, spec.len()), &maps, &spec, gate_for(&maps, a.gate_frac))?;
        let frame_index = frame_index_of(path).unwrap_or(k);
        info!("{}: {} candidates, {} skeletons", path.display(), cands.len(), skeletons.len());
        frames.push(FrameDetections { frame_index, poses: skeletons.iter().map(|s| s.to_pose(frame_index)).collect() });
    }
    frames.sort_by_key(|f| f.frame_index);
    if frames.windows(2).any(|w| w[0].frame_index == w[1].frame_index) {
        return Err(Failure::invalid(anyhow!("two map files share a frame index")));
    }
    let header = Header::new(DETECTIONS_FORMAT, &spec, width, height);
    io::write_detections(io::create(&a.out)?, &header, &frames).map_err(write_failure(&a.out))?;
    Ok(())
}

fn tracker_config(a: &TrackArgs) -> std::result::Result<TrackerConfig, Failure> {
    let mut c = match &a.config {
        Some(path) => toml_config(path)?,
        None => TrackerConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(
            if let Some(v) = a.$flag { c.$field = v; }
        )*};
    }
    set!(gate => gate_px, max_missed => max_missed_frames, maturity_age => maturity_age,
         impute_max_consecutive => impute_max_consecutive, impute_freq => impute_freq_threshold,
         freq_memory => freq_memory, r_scale => r_scale, q_pos => q_pos_factor, q_vel => q_vel_factor,
         p0_factor => p0_factor, coord_scale => coord_scale, sign_window => sign_window);
    match a.mitigation {
        Some(MitigationArg::Signs) => c.mitigation = Mitigation::Signs,
        Some(MitigationArg::None) => c.mitigation = Mitigation::Fixed(1.0),
        None => {}
    }
    if a.no_impute {
        c.impute = false;
    }
    c.validate()?;
    Ok(c)
}

fn toml_config(path: &Path) -> std::result::Result<TrackerConfig, Failure> {
    let text = read_config(path)?;
    TrackerConfig::from_toml(&text).map_err(Failure::from)
}

fn cmd_track(a: TrackArgs) -> CmdResult {
    let spec = a.skeleton.load()?;
    let config = tracker_config(&a)?;
    let (header, frames) = io::read_detections(io::open(&a.detections)?)?;
    check_header(&header, &spec)?;
    let mut tracker = Tracker::new(&spec, config)?;
    let mut out = Vec::with_capacity(frames.len());
    for f in &frames {
        out.push(tracker.step(&spec, &f.poses, f.frame_index)?);
    }
    let ids: std::collections::BTreeSet<u64> = out.iter().flat_map(|f| f.tracks.iter().map(|t| t.id)).collect();
    info!("{} frames, {} tracklets", out.len(), ids.len());
    let header = Header::new(TRACKS_FORMAT, &spec, header.width, header.height);
    io::write_tracks(io::create(&a.out)?, &header, &out).map_err(write_failure(&a.out))?;
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> CmdResult {
    let spec = a.skeleton.load()?;
    let (truth_header, truth) = io::read_truth(io::open(&a.truth)?)?;
    check_header(&truth_header, &spec)?;
    let mut eval = Evaluator::new(&spec, a.pair_gate);

    let predictions: Vec<FrameDetections> = match peek_format(&a.predictions)?.as_str() {
        TRACKS_FORMAT => {
            let (h, tracks) = io::read_tracks(io::open(&a.predictions)?)?;
            check_header(&h, &spec)?;
            let set = match a.coords {
                CoordArg::Observed => CoordSet::Observed,
                CoordArg::Posterior => CoordSet::Posterior,
            };
            for w in tracks.windows(2) {
                eval.add_frame_differences(frame_difference(&w[0], &w[1], set, spec.len()));
            }
            tracks
                .iter()
                .map(|f| FrameDetections {
                    frame_index: f.frame_index,
                    poses: f
                        .tracks
                        .iter()
                        .map(|t| match a.coords {
                            CoordArg::Observed => t.observed_pose(f.frame_index),
                            CoordArg::Posterior => t.posterior_pose(f.frame_index),
                        })
                        .collect(),
                })
                .collect()
        }
        _ => read_pose_frames(&a.predictions, &spec)?.1,
    };

    let mut by_frame: std::collections::BTreeMap<usize, Vec<Pose>> =
        predictions.into_iter().map(|f| (f.frame_index, f.poses)).collect();
    let truth_frames: std::collections::BTreeSet<usize> = truth.frames.iter().map(|f| f.frame_index).collect();
    if let Some(stray) = by_frame.keys().find(|k| !truth_frames.contains(k)) {
        return Err(Failure::invalid(anyhow!("prediction frame {stray} has no ground truth")));
    }
    for (i, f) in truth.frames.iter().enumerate() {
        let pred = by_frame.remove(&f.frame_index).unwrap_or_default();
        eval.add_frame(&spec, &truth.poses(i), &pred);
    }
    let report = eval.finish();

    let mut out = io::create(&a.out)?;
    serde_json::to_writer_pretty(&mut out, &report).map_err(|e| Failure::runtime(anyhow!("{}: {e}", a.out.display())))?;
    writeln!(out).map_err(write_failure(&a.out))?;
    if let Some(prefix) = &a.csv {
        let label = match a.coords {
            CoordArg::Observed => "observed",
            CoordArg::Posterior => "posterior",
        };
        let summary = prefix.with_extension("summary.csv");
        io::write_report_csv(io::create(&summary)?, label, &report).map_err(write_failure(&summary))?;
        let samples = prefix.with_extension("samples.csv");
        io::write_samples_csv(io::create(&samples)?, label, &report).map_err(write_failure(&samples))?;
    }
    match report.recovery_overall {
        Some(eta) => info!("recovery {:.4} over {} frames", eta, report.frames),
        None => warn!("ground truth holds no keypoints"),
    }
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> CmdResult {
    let spec = a.skeleton.load()?;
    let mut config = match &a.scenario {
        Some(p) => ScenarioConfig::from_toml(&read_config(p)?)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    config.validate(&spec)?;
    let truth = synth::generate(&config, &spec)?;
    let detections = synth::corrupt(&truth, &config, &spec)?;
    let (w, h) = (config.arena[0].ceil() as usize, config.arena[1].ceil() as usize);
    io::write_truth(io::create(&a.truth)?, &Header::new(TRUTH_FORMAT, &spec, w, h), &truth)
        .map_err(write_failure(&a.truth))?;
    io::write_detections(io::create(&a.detections)?, &Header::new(DETECTIONS_FORMAT, &spec, w, h), &detections)
        .map_err(write_failure(&a.detections))?;
    Ok(())
}

fn cmd_kf_demo(a: KfDemoArgs) -> CmdResult {
    let config = KfDemoConfig {
        seed: a.seed,
        steps: a.steps,
        switch_step: a.switch,
        jump_factor: a.jump,
        q_model_factor: a.q_model_factor,
        sign_window: a.sign_window,
        ..Default::default()
    };
    if config.steps == 0 || config.sign_window == 0 {
        return Err(Failure::invalid(anyhow!("steps and sign window must be positive")));
    }
    let rows = synth::run_kf_demo(&config, a.mode.into())?;
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(io::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let write = |out: &mut dyn Write| -> std::io::Result<()> {
        writeln!(out, "step,truth,observation,estimate,alpha,gamma")?;
        for r in &rows {
            writeln!(out, "{},{},{},{},{},{}", r.step, r.truth, r.observation, r.estimate, r.alpha, r.gamma)?;
        }
        out.flush()
    };
    write(&mut *out).map_err(|e| Failure::runtime(anyhow!("writing demo output: {e}")))
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Encode(a) => cmd_encode(a),
        Command::DecodeAssemble(a) => cmd_decode_assemble(a),
        Command::Track(a) => cmd_track(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::KfDemo(a) => cmd_kf_demo(a),
        Command::Skeleton => {
            print!("{}", keysort_core::skeleton::CATTLE_SKELETON_TOML);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KEYSORT_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_INVALID) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
