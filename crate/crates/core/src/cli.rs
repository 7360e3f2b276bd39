//! Command-line front end. Exit codes: 0 ok, 2 usage, 3 I/O, 4 validation.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::oracle::{DEFAULT_FACTOR, DEFAULT_TAU};
use crate::pipeline::{
    self, analyze_video, AnalysisReport, AnalyzeOptions, MaskSource, ProfileOptions, SrOptions, TrainOptions,
};
use crate::predictor::{PredictorNet, TrainConfig, DEFAULT_HIDDEN};
use crate::skipdit::{DiTConfig, DiTWeights, Variant};
use crate::vidio::{load_video, save_video, VideoFormat};
use crate::weights::WeightsFile;

#[derive(Debug, Parser)]
#[command(name = "skipsr", version, about = "Skip-aware video super-resolution toolkit")]
pub struct Cli {
    /// Worker threads for every parallel stage.
    #[arg(long, global = true, env = "SKIPSR_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mask videos, swap skippable patches to their upsampled versions and
    /// score the result.
    Analyze(AnalyzeArgs),
    /// Skipped fraction and swap PSNR over a list of thresholds (CSV).
    Sweep(SweepArgs),
    /// Fit a mask predictor on a directory of high-resolution clips.
    TrainPredictor(TrainArgs),
    /// Super-resolve a low-resolution video.
    Sr(SrArgs),
    /// Time transformer variants on random tokens (CSV).
    Profile(ProfileArgs),
    /// Write freshly initialized transformer weights.
    InitDit(InitDitArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MaskSourceArg {
    Oracle,
    Predictor,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Input videos (`.y4m`, or raw RGB with a `<file>.json` sidecar).
    #[arg(required = true)]
    pub videos: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = DEFAULT_FACTOR)]
    pub factor: usize,
    /// Codec coefficients per channel used for the swap (256 is lossless).
    #[arg(long, default_value_t = 256)]
    pub keep: usize,
    #[arg(long, value_enum, default_value_t = MaskSourceArg::Oracle)]
    pub mask_source: MaskSourceArg,
    /// Predictor weights, required with `--mask-source predictor`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Label recorded in the report.
    #[arg(long, default_value = "dataset")]
    pub dataset: String,
    /// Transformer config for the cost estimate.
    #[arg(long)]
    pub dit_config: Option<PathBuf>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Directory receiving one `<stem>.skpm` mask per video.
    #[arg(long)]
    pub masks: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub video: PathBuf,
    /// Ascending thresholds, comma separated.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0,0.00001,0.00003,0.0001,0.0002,0.0005,0.001,0.01"
    )]
    pub taus: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_FACTOR)]
    pub factor: usize,
    #[arg(long, default_value_t = 256)]
    pub keep: usize,
    /// CSV path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the rows as a JSON report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of training clips.
    pub data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = DEFAULT_FACTOR)]
    pub factor: usize,
    #[arg(long, default_value_t = crate::codec::DEFAULT_KEEP)]
    pub keep: usize,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    pub hidden: usize,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1.0)]
    pub pos_weight: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Weights output.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss curve CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SrArgs {
    /// Low-resolution input video.
    pub input: PathBuf,
    #[arg(long)]
    pub weights_predictor: Option<PathBuf>,
    #[arg(long)]
    pub weights_dit: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    /// Overrides the variant stored with the transformer weights.
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Output video; `.y4m` or raw RGB with sidecar.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub mask_out: Option<PathBuf>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// Token grid as `TxHxW`.
    #[arg(long, default_value = "16x32x32", value_parser = parse_grid)]
    pub grid: [usize; 3],
    #[arg(long, value_delimiter = ',', default_value = "0,0.4")]
    pub skip_fractions: Vec<f64>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "full_skip,attention_mask_only,query_mask_only,interleaved_dense,dense"
    )]
    pub variants: Vec<Variant>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(long, default_value_t = crate::codec::DEFAULT_KEEP)]
    pub keep: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub dit_config: Option<PathBuf>,
    /// CSV path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InitDitArgs {
    /// JSON config; defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Coefficients per channel of the latents the model will read.
    #[arg(long, default_value_t = crate::codec::DEFAULT_KEEP)]
    pub keep: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_grid(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    let [t, h, w] = parts.as_slice() else {
        return Err(format!("expected TxHxW, got {s:?}"));
    };
    let num = |p: &str| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}"));
    Ok([num(t)?, num(h)?, num(w)?])
}

/// Parse `args` (program name first), run, and map errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.threads {
        Some(0) => Err(Error::Usage("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start {n} threads: {e}")))?
            .install(|| dispatch(cli.command, true)),
        None => dispatch(cli.command, false),
    }
}

fn dispatch(cmd: Command, pooled: bool) -> Result<()> {
    match cmd {
        Command::Analyze(a) => analyze(a, pooled),
        Command::Sweep(a) => sweep(a),
        Command::TrainPredictor(a) => train(a),
        Command::Sr(a) => sr(a, pooled),
        Command::Profile(a) => profile(a, pooled),
        Command::InitDit(a) => init_dit(a),
    }
}

fn load_dit_config(path: Option<&Path>, pooled: bool) -> Result<DiTConfig> {
    let mut cfg = match path {
        Some(p) => DiTConfig::load(p)?,
        None => DiTConfig::default(),
    };
    if pooled {
        cfg.threads = None;
    }
    Ok(cfg)
}

fn load_predictor(path: &Path) -> Result<PredictorNet> {
    PredictorNet::from_weights(&WeightsFile::load(path)?)
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(text.as_bytes(), path)
}

fn write_text(bytes: &[u8], path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| Error::io(p, e)),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn write_csv_to<T: Serialize>(rows: &[T], path: Option<&Path>) -> Result<()> {
    let mut buf = Vec::new();
    pipeline::write_csv(rows, &mut buf)?;
    write_text(&buf, path)
}

fn video_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "video".into())
}

fn analyze(a: AnalyzeArgs, pooled: bool) -> Result<()> {
    let net = match (a.mask_source, &a.weights) {
        (MaskSourceArg::Predictor, None) => {
            return Err(Error::Usage("--mask-source predictor needs --weights".into()))
        }
        (MaskSourceArg::Predictor, Some(p)) => Some(load_predictor(p)?),
        (MaskSourceArg::Oracle, _) => None,
    };
    let source = match &net {
        Some(net) => MaskSource::Predictor {
            net,
            threshold: a.threshold,
        },
        None => MaskSource::Oracle,
    };
    let opts = AnalyzeOptions {
        tau: a.tau,
        factor: a.factor,
        keep: a.keep,
        dit: load_dit_config(a.dit_config.as_deref(), pooled)?,
    };
    if let Some(dir) = &a.masks {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut videos = Vec::with_capacity(a.videos.len());
    for path in &a.videos {
        let v = load_video(path, VideoFormat::from_path(path))?;
        let name = video_stem(path);
        let (report, mask) = analyze_video(&name, &v, &opts, source)?;
        if let Some(dir) = &a.masks {
            mask.save(&dir.join(format!("{name}.skpm")))?;
        }
        videos.push(report);
    }
    let report = AnalysisReport {
        dataset: a.dataset,
        mask_source: source.name().into(),
        tau: a.tau,
        factor: a.factor,
        keep: a.keep,
        videos,
    };
    write_json(&report, a.report.as_deref())
}

#[derive(Serialize)]
struct SweepReport<'a> {
    video: String,
    factor: usize,
    keep: usize,
    rows: &'a [pipeline::SweepRow],
}

fn sweep(a: SweepArgs) -> Result<()> {
    let v = load_video(&a.video, VideoFormat::from_path(&a.video))?;
    let rows = pipeline::sweep(&v, &a.taus, a.factor, a.keep)?;
    write_csv_to(&rows, a.out.as_deref())?;
    if let Some(p) = &a.report {
        let report = SweepReport {
            video: video_stem(&a.video),
            factor: a.factor,
            keep: a.keep,
            rows: &rows,
        };
        write_json(&report, Some(p))?;
    }
    Ok(())
}

/// Videos in `dir`, sorted by file name. JSON sidecars are not videos.
pub fn list_videos(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_sidecar = path.extension().is_some_and(|e| e == "json");
        if path.is_file() && !is_sidecar {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

fn train(a: TrainArgs) -> Result<()> {
    let paths = list_videos(&a.data)?;
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!("no videos in {}", a.data.display())));
    }
    let clips = paths
        .iter()
        .map(|p| load_video(p, VideoFormat::from_path(p)))
        .collect::<Result<Vec<_>>>()?;
    let opts = TrainOptions {
        tau: a.tau,
        factor: a.factor,
        keep: a.keep,
        hidden: a.hidden,
        threshold: a.threshold,
        train: TrainConfig {
            lr: a.lr,
            steps: a.steps,
            batch: a.batch,
            seed: a.seed,
            pos_weight: a.pos_weight,
        },
    };
    let (net, curve, report) = pipeline::train_predictor(&clips, &opts)?;
    net.to_weights()?.save(&a.out)?;
    let loss_path = a.loss_csv.unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".loss.csv");
        s.into()
    });
    write_csv_to(&pipeline::loss_rows(&curve), Some(&loss_path))?;
    match &a.report {
        Some(p) => write_json(&report, Some(p)),
        None => {
            eprintln!(
                "trained on {} clips: loss {:.4} -> {:.4}, fit accuracy {:.3}",
                report.clips, report.initial_loss, report.final_loss, report.fit.accuracy
            );
            Ok(())
        }
    }
}

fn sr(a: SrArgs, pooled: bool) -> Result<()> {
    let (Some(pw), Some(dw)) = (&a.weights_predictor, &a.weights_dit) else {
        return Err(Error::Usage("sr needs --weights-predictor and --weights-dit".into()));
    };
    let net = load_predictor(pw)?;
    let (mut cfg, weights) = DiTWeights::from_weights(&WeightsFile::load(dw)?)?;
    if pooled {
        cfg.threads = None;
    }
    let lr = load_video(&a.input, VideoFormat::from_path(&a.input))?;
    let opts = SrOptions {
        scale: a.scale,
        threshold: a.threshold,
        variant: a.variant,
    };
    let out = pipeline::super_resolve(&lr, &net, &cfg, &weights, &opts)?;
    save_video(&out.video, &a.out, VideoFormat::from_path(&a.out))?;
    if let Some(p) = &a.mask_out {
        out.mask.save(p)?;
    }
    write_json(&out.report, a.report.as_deref())
}

fn profile(a: ProfileArgs, pooled: bool) -> Result<()> {
    let opts = ProfileOptions {
        grid: a.grid,
        fractions: a.skip_fractions,
        variants: a.variants,
        repeats: a.repeats,
        warmup: a.warmup,
        keep: a.keep,
        seed: a.seed,
        dit: load_dit_config(a.dit_config.as_deref(), pooled)?,
    };
    let report = pipeline::profile(&opts)?;
    write_csv_to(&report.rows, a.out.as_deref())?;
    if let Some(p) = &a.report {
        write_json(&report, Some(p))?;
    }
    Ok(())
}

fn init_dit(a: InitDitArgs) -> Result<()> {
    let mut cfg = load_dit_config(a.config.as_deref(), false)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    if a.keep == 0 || a.keep > 256 {
        return Err(Error::InvalidArgument(format!("keep {} outside 1..=256", a.keep)));
    }
    DiTWeights::init(&cfg, 12 * a.keep).to_weights(&cfg)?.save(&a.out)
}
