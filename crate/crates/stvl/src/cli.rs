//! Command-line driver. Every run writes a manifest next to its output that
//! echoes the argv and the fully resolved configuration; `replay` re-runs a
//! manifest.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use stvl_core::bench::{
    historical_average, persistence, seasonal_naive, synth_traffic, toy_policy_sample, SynthConfig, ToyPolicy,
    DAY_FRAMES,
};
use stvl_core::dataset::{build_sft_record, gen_stage1, gen_stage2, SftMetadata, Stage2Config, DEFAULT_STAGE2_LEN};
use stvl_core::eval::{evaluate_run, HorizonMode, Prediction};
use stvl_core::grid::{
    impute_linear, make_windows, split, GridSpec, Region, SplitSpec, WindowConfig, TEN_MINUTES_MS,
};
use stvl_core::rl::{
    grpo_objective, group_advantages, kl_estimate, reward, GrpoConfig, NormMode, RewardConfig,
};
use stvl_core::rng;
use stvl_core::visual::{fit_tmax, frame_image, mock_encode, patchify, NormConfig, DEFAULT_TMAX_FLOOR};

use crate::{io, records, report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

const MILAN_START_MS: i64 = 1_383_260_400_000;

#[derive(Parser, Debug, Serialize)]
#[command(name = "stvl", version, about = "Spatiotemporal traffic forecasting pipeline with numeric tokens")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Write the numeric-token vocabulary as TSV.
    Vocab(VocabArgs),
    /// Generate a synthetic traffic tensor.
    Simulate(SimulateArgs),
    /// Build a tensor cache from canonical CSV or square-id source files.
    Ingest(IngestArgs),
    /// Fill missing points by linear interpolation.
    Impute(IoArgs),
    /// Split a tensor into train, validation and test spans.
    Split(SplitArgs),
    /// Export a frame as PNG plus its patch embedding.
    Render(RenderArgs),
    /// Generate token-alignment corpora.
    GenAlign(GenAlignArgs),
    /// Generate forecasting records with loss masks.
    GenSft(GenSftArgs),
    /// Run a baseline forecaster over forecasting records.
    Forecast(ForecastArgs),
    /// Score model outputs against ground truth.
    Score(ScoreArgs),
    /// Toy-policy group sampling, advantages and objective.
    GrpoDemo(GrpoDemoArgs),
    /// Score predictions against a test tensor by horizon.
    Evaluate(EvaluateArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct VocabArgs {
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    /// Tensor cache output.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write observed points as canonical CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub height: u64,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub width: u64,
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    pub days: u64,
    #[arg(long, default_value_t = MILAN_START_MS)]
    pub start_ms: i64,
    #[arg(long, default_value_t = 0.8)]
    pub daily_amplitude: f64,
    #[arg(long, default_value_t = 0.3)]
    pub weekly_amplitude: f64,
    #[arg(long, default_value_t = 4)]
    pub hotspots: usize,
    #[arg(long, default_value_t = 3.0)]
    pub hotspot_scale: f64,
    #[arg(long, default_value_t = 0.03)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 100.0)]
    pub base: f64,
    #[arg(long, default_value_t = 0.0)]
    pub missing_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum SourceFormat {
    /// `timestamp_ms,row,col,value` with header.
    Canonical,
    /// `square_id, time_interval_ms, value`.
    Tim,
}

#[derive(Args, Debug, Serialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = SourceFormat::Canonical)]
    pub format: SourceFormat,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub height: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub width: u64,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(i64).range(1..))]
    pub step_min: i64,
    #[arg(long)]
    pub start_ms: Option<i64>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Zero-based value field for square-id sources.
    #[arg(long, default_value_t = 2)]
    pub value_column: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct IoArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Directory receiving train.stvt, val.stvt and test.stvt.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Day counts `train,val,test` from the local midnight at `--start-ms`;
    /// omitted means the Milan calendar split.
    #[arg(long, value_delimiter = ',')]
    pub days: Option<Vec<i64>>,
    #[arg(long)]
    pub start_ms: Option<i64>,
}

#[derive(Args, Debug, Serialize)]
pub struct RenderArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub power: f64,
    /// Normalization ceiling; fitted on `--fit` (default: the input) if absent.
    #[arg(long)]
    pub tmax: Option<f64>,
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[arg(long, default_value_t = 14, value_parser = clap::value_parser!(u64).range(1..))]
    pub patch: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct GenAlignArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stage-2 example count; defaults to the coverage threshold.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n_examples: Option<u64>,
    #[arg(long, default_value_t = *DEFAULT_STAGE2_LEN.start())]
    pub min_len: usize,
    #[arg(long, default_value_t = *DEFAULT_STAGE2_LEN.end())]
    pub max_len: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct GenSftArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 12, value_parser = clap::value_parser!(u64).range(1..))]
    pub history: u64,
    #[arg(long, default_value_t = 36, value_parser = clap::value_parser!(u64).range(1..))]
    pub horizon: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub stride: u64,
    /// `r0-r1,c0-c1` (1-based, inclusive) or `r,c`.
    #[arg(long, default_value = "45-55,45-55", value_parser = parse_region)]
    pub region: String,
    /// Frame-id prefix; defaults to the input file stem.
    #[arg(long)]
    pub source: Option<String>,
    #[arg(long, default_value = "internet")]
    pub channel: String,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    SeasonalNaive,
    Persistence,
    HistoricalAverage,
}

#[derive(Args, Debug, Serialize)]
pub struct ForecastArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    /// Forecasting records; each supplies an anchor, a cell and a horizon.
    #[arg(long)]
    pub records: PathBuf,
    /// Tensor holding the full history before each anchor.
    #[arg(long)]
    pub context: PathBuf,
    #[arg(long, default_value_t = DAY_FRAMES as u64, value_parser = clap::value_parser!(u64).range(1..))]
    pub period: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ScoreArgs {
    /// Lines of `output_text<TAB>gt1,gt2,...`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    pub half_score: f64,
    /// `mean` or a positive constant.
    #[arg(long, default_value = "mean", value_parser = parse_norm)]
    pub norm: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct GrpoDemoArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.5", value_parser = parse_rate)]
    pub rates: Vec<f64>,
    /// Number of sampling seeds per rate.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    pub seeds: u64,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(2..))]
    pub group_size: u64,
    #[arg(long, default_value_t = 0.3)]
    pub half_score: f64,
    #[arg(long, default_value_t = 0.5)]
    pub neighbor_distance: f64,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0.04)]
    pub kl_beta: f64,
    #[arg(long, default_value_t = 0.2)]
    pub clip_epsilon: f64,
    /// Use only the first N records (0 = all).
    #[arg(long, default_value_t = 0)]
    pub max_records: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Cumulative,
    AtStep,
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,10,30,36", value_parser = clap::value_parser!(u64).range(1..))]
    pub horizons: Vec<u64>,
    #[arg(long, value_enum, default_value_t = ModeArg::Cumulative)]
    pub mode: ModeArg,
    #[arg(long)]
    pub per_cell: bool,
    /// Restrict scoring to predictions inside this region.
    #[arg(long, value_parser = parse_region)]
    pub region: Option<String>,
    /// Output prefix; writes `<out>.json` and `<out>.tsv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

#[derive(Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
}

enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn parse_range(s: &str) -> Option<(usize, usize)> {
    match s.split_once('-') {
        Some((a, b)) => Some((a.trim().parse().ok()?, b.trim().parse().ok()?)),
        None => {
            let v = s.trim().parse().ok()?;
            Some((v, v))
        }
    }
}

pub fn region_of(s: &str) -> Option<Region> {
    let (r, c) = s.split_once(',')?;
    let (r0, r1) = parse_range(r)?;
    let (c0, c1) = parse_range(c)?;
    (r0 >= 1 && c0 >= 1 && r0 <= r1 && c0 <= c1).then(|| Region::new(r0..=r1, c0..=c1))
}

fn parse_region(s: &str) -> Result<String, String> {
    region_of(s)
        .map(|_| s.to_string())
        .ok_or_else(|| format!("expected `r0-r1,c0-c1` with 1-based inclusive bounds, got {s:?}"))
}

fn parse_rate(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
        _ => Err(format!("rate must be a number in [0, 1], got {s:?}")),
    }
}

fn norm_of(s: &str) -> Option<NormMode> {
    if s == "mean" {
        return Some(NormMode::MeanOfGroundTruth);
    }
    s.parse::<f64>().ok().filter(|d| *d > 0.0 && d.is_finite()).map(NormMode::Constant)
}

fn parse_norm(s: &str) -> Result<String, String> {
    norm_of(s)
        .map(|_| s.to_string())
        .ok_or_else(|| format!("expected `mean` or a positive number, got {s:?}"))
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_manifest(path: &Path, argv: &[String], cli: &Cli) -> Result<()> {
    let m = Manifest {
        tool: "stvl".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        argv: argv.to_vec(),
        config: serde_json::to_value(&cli.command)?,
    };
    let mut text = serde_json::to_string_pretty(&m)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing manifest {}", path.display()))
}

fn configure_threads() {
    if let Some(n) = std::env::var("STVL_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Fails only if a pool already exists, in which case it stays as is.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Runs one invocation; `args` excludes the program name.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let argv: Vec<String> = args
        .into_iter()
        .map(|a| a.into().to_string_lossy().into_owned())
        .collect();
    match dispatch(&argv, 0) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            EXIT_DATA
        }
    }
}

fn dispatch(argv: &[String], depth: usize) -> Result<(), Failure> {
    let cli = match Cli::try_parse_from(std::iter::once("stvl".to_string()).chain(argv.iter().cloned())) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            // Clap's rendering names the offending flag.
            return Err(usage(e.render().to_string().trim_start_matches("error: ").trim_end()));
        }
    };
    configure_threads();
    let manifest_out = match &cli.command {
        Command::Replay(r) => {
            if depth > 0 {
                return Err(usage("a manifest cannot replay another replay"));
            }
            let text = fs::read_to_string(&r.manifest)
                .with_context(|| format!("reading manifest {}", r.manifest.display()))?;
            let m: Manifest = serde_json::from_str(&text).context("parsing manifest")?;
            return dispatch(&m.argv, depth + 1);
        }
        Command::Split(a) => a.out_dir.join("manifest.json"),
        Command::Render(a) => a.out_dir.join("manifest.json"),
        Command::Vocab(VocabArgs { out })
        | Command::Simulate(SimulateArgs { out, .. })
        | Command::Ingest(IngestArgs { out, .. })
        | Command::Impute(IoArgs { out, .. })
        | Command::GenAlign(GenAlignArgs { out, .. })
        | Command::GenSft(GenSftArgs { out, .. })
        | Command::Forecast(ForecastArgs { out, .. })
        | Command::Score(ScoreArgs { out, .. })
        | Command::GrpoDemo(GrpoDemoArgs { out, .. })
        | Command::Evaluate(EvaluateArgs { out, .. }) => manifest_path(out),
    };
    match &cli.command {
        Command::Vocab(a) => io::write_vocab(&a.out).context("writing vocabulary")?,
        Command::Simulate(a) => simulate(a)?,
        Command::Ingest(a) => ingest(a)?,
        Command::Impute(a) => impute(a)?,
        Command::Split(a) => split_cmd(a)?,
        Command::Render(a) => render(a)?,
        Command::GenAlign(a) => gen_align(a)?,
        Command::GenSft(a) => gen_sft(a)?,
        Command::Forecast(a) => forecast(a)?,
        Command::Score(a) => score(a)?,
        Command::GrpoDemo(a) => grpo_demo(a)?,
        Command::Evaluate(a) => evaluate(a)?,
        Command::Replay(_) => unreachable!("handled above"),
    }
    write_manifest(&manifest_out, argv, &cli)?;
    Ok(())
}

fn read_tensor(path: &Path) -> Result<stvl_core::grid::TrafficTensor> {
    io::read_cache(path).with_context(|| format!("reading tensor {}", path.display()))
}

fn create_out(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let cfg = SynthConfig {
        height: a.height as usize,
        width: a.width as usize,
        frames: a.days as usize * DAY_FRAMES,
        step_ms: TEN_MINUTES_MS,
        start_ms: a.start_ms,
        daily_period: DAY_FRAMES,
        daily_amplitude: a.daily_amplitude,
        weekly_amplitude: a.weekly_amplitude,
        n_hotspots: a.hotspots,
        hotspot_scale: a.hotspot_scale,
        noise_sigma: a.noise_sigma,
        base: a.base,
        missing_rate: a.missing_rate,
        seed: a.seed,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let t = synth_traffic(&cfg).map_err(|e| usage(e.to_string()))?;
    io::write_cache(&a.out, &t).context("writing tensor")?;
    if let Some(csv) = &a.csv {
        io::write_canonical_csv(csv, &t).context("writing canonical CSV")?;
    }
    Ok(())
}

fn ingest(a: &IngestArgs) -> Result<(), Failure> {
    let spec = GridSpec {
        height: a.height as usize,
        width: a.width as usize,
        step_ms: a.step_min * 60_000,
        start_ms: a.start_ms,
        frames: a.frames,
    };
    let t = match a.format {
        SourceFormat::Canonical => io::read_canonical_csv(&a.input, spec),
        SourceFormat::Tim => io::read_tim(&a.input, spec, a.value_column),
    }
    .with_context(|| format!("ingesting {}", a.input.display()))?;
    io::write_cache(&a.out, &t).context("writing tensor")?;
    Ok(())
}

fn impute(a: &IoArgs) -> Result<(), Failure> {
    let t = read_tensor(&a.input)?;
    let filled = impute_linear(&t).context("imputing")?;
    io::write_cache(&a.out, &filled).context("writing tensor")?;
    Ok(())
}

fn split_cmd(a: &SplitArgs) -> Result<(), Failure> {
    let t = read_tensor(&a.input)?;
    let spec = match &a.days {
        Some(d) => {
            if d.len() != 3 || d.iter().any(|&x| x < 1) {
                return Err(usage("--days takes three positive day counts `train,val,test`"));
            }
            SplitSpec::by_days(a.start_ms.unwrap_or(t.start_ms()), d[0], d[1], d[2])
        }
        None => SplitSpec::milan(),
    };
    let s = split(&t, &spec).context("splitting")?;
    for (name, part) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
        io::write_cache(&a.out_dir.join(format!("{name}.stvt")), part).context("writing split")?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PatchDoc {
    frame: usize,
    timestamp_ms: i64,
    height: usize,
    width: usize,
    patch_size: usize,
    grid: [usize; 2],
    n_patches: usize,
    embedding: Vec<Vec<f64>>,
}

fn render(a: &RenderArgs) -> Result<(), Failure> {
    let t = read_tensor(&a.input)?;
    if a.frame >= t.frames() {
        return Err(usage(format!("--frame {} is past the last frame {}", a.frame, t.frames().saturating_sub(1))));
    }
    let tmax = match a.tmax {
        Some(v) => v,
        None => {
            let fit_src = match &a.fit {
                Some(p) => read_tensor(p)?,
                None => t.clone(),
            };
            fit_tmax(&fit_src, Some(DEFAULT_TMAX_FLOOR)).context("fitting t_max")?
        }
    };
    let cfg = NormConfig::new(a.power, tmax).map_err(|e| usage(e.to_string()))?;
    let img = frame_image(&t, a.frame, &cfg).context("rendering frame")?;
    fs::create_dir_all(&a.out_dir).context("creating output directory")?;
    io::write_png(&a.out_dir.join(format!("frame_{}.png", a.frame)), &img).context("writing PNG")?;
    let seq = patchify(&img, a.patch as usize).context("patchifying")?;
    let emb = mock_encode(&seq);
    let doc = PatchDoc {
        frame: a.frame,
        timestamp_ms: t.timestamp(a.frame),
        height: t.height(),
        width: t.width(),
        patch_size: seq.patch_size,
        grid: [seq.grid_dims.0, seq.grid_dims.1],
        n_patches: seq.len(),
        embedding: emb.vectors.iter().map(|v| v.to_vec()).collect(),
    };
    let mut text = serde_json::to_string_pretty(&doc).context("serializing patches")?;
    text.push('\n');
    fs::write(a.out_dir.join(format!("frame_{}.patches.json", a.frame)), text).context("writing patches")?;
    Ok(())
}

fn gen_align(a: &GenAlignArgs) -> Result<(), Failure> {
    let mut w = create_out(&a.out)?;
    if a.stage == 1 {
        for ex in gen_stage1(a.seed) {
            records::write_alignment(&mut w, &ex).context("writing record")?;
        }
    } else {
        if a.min_len == 0 || a.min_len > a.max_len {
            return Err(usage("--min-len must be at least 1 and at most --max-len"));
        }
        let len_range = a.min_len..=a.max_len;
        let n = a
            .n_examples
            .map(|n| n as usize)
            .unwrap_or_else(|| stvl_core::dataset::stage2_coverage_threshold(&len_range));
        let gen = gen_stage2(Stage2Config {
            n_examples: n,
            len_range,
            seed: a.seed,
        })
        .map_err(|e| usage(e.to_string()))?;
        for ex in gen {
            records::write_alignment(&mut w, &ex).context("writing record")?;
        }
    }
    w.flush().context("flushing output")?;
    Ok(())
}

fn gen_sft(a: &GenSftArgs) -> Result<(), Failure> {
    let t = read_tensor(&a.input)?;
    let region = region_of(&a.region).expect("validated by the parser");
    region
        .check_within(t.height(), t.width())
        .map_err(|e| usage(format!("--region: {e}")))?;
    let cfg = WindowConfig {
        history: a.history as usize,
        horizon: a.horizon as usize,
        stride: a.stride as usize,
    };
    let meta = SftMetadata {
        source: a.source.clone().unwrap_or_else(|| {
            a.input.file_stem().map_or("tensor".into(), |s| s.to_string_lossy().into_owned())
        }),
        channel: a.channel.clone(),
    };
    let windows: Vec<_> = make_windows(&t, cfg, &region).context("windowing")?.collect();
    let recs = windows
        .par_iter()
        .map(|w| build_sft_record(w, &meta))
        .collect::<Result<Vec<_>, _>>()
        .context("building records (is the input imputed?)")?;
    let mut out = create_out(&a.out)?;
    for r in &recs {
        records::write_sft(&mut out, r).context("writing record")?;
    }
    out.flush().context("flushing output")?;
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<stvl_core::dataset::SftRecord>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    records::read_sft(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn forecast(a: &ForecastArgs) -> Result<(), Failure> {
    let recs = read_records(&a.records)?;
    let ctx = read_tensor(&a.context)?;
    let period = a.period as usize;
    let preds = recs
        .par_iter()
        .enumerate()
        .map(|(i, r)| -> Result<Prediction> {
            let line = i + 1;
            let anchor_ms = records::record_anchor_ms(r).ok_or_else(|| anyhow!("record {line}: no anchor in frame ids"))?;
            let cell = records::record_cell(r).ok_or_else(|| anyhow!("record {line}: no cell in prompt"))?;
            if cell.row > ctx.height() || cell.col > ctx.width() {
                bail!("record {line}: cell ({}, {}) outside the context grid", cell.row, cell.col);
            }
            let t = ctx
                .frame_at(anchor_ms)
                .ok_or_else(|| anyhow!("record {line}: anchor {anchor_ms} outside the context tensor"))?;
            let series = ctx.cell_series(cell);
            let history = &series[..=t];
            if history.iter().any(|v| v.is_nan()) {
                bail!("record {line}: context history has missing values; impute first");
            }
            let k = r.targets.len();
            let values = match a.method {
                Method::SeasonalNaive => seasonal_naive(history, period, k),
                Method::Persistence => persistence(history, k),
                Method::HistoricalAverage => historical_average(history, period, k),
            }
            .map_err(|e| anyhow!("record {line}: {e}"))?;
            Ok(Prediction {
                anchor_ms,
                cell,
                values,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    io::write_predictions(&a.out, &preds).context("writing predictions")?;
    Ok(())
}

fn score(a: &ScoreArgs) -> Result<(), Failure> {
    let cfg = RewardConfig::new(a.half_score, norm_of(&a.norm).expect("validated by the parser"))
        .map_err(|e| usage(format!("--half-score: {e}")))?;
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let mut out = create_out(&a.out)?;
    writeln!(out, "line\ttotal\taccuracy_term\tlength_penalty\tdecode_penalty\tnrmse\toutput_len")
        .context("writing scores")?;
    for (i, l) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let line = i + 1;
        let (output, gt) = l
            .rsplit_once('\t')
            .ok_or_else(|| anyhow!("line {line}: expected `output<TAB>gt,...`"))?;
        let gt = gt
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| anyhow!("line {line}: ground truth: {e}"))?;
        let b = reward(output, &gt, &cfg).map_err(|e| anyhow!("line {line}: {e}"))?;
        writeln!(
            out,
            "{line}\t{}\t{}\t{}\t{}\t{}\t{}",
            b.total, b.accuracy_term, b.length_penalty, b.decode_penalty, b.nrmse, b.output_len
        )
        .context("writing scores")?;
    }
    out.flush().context("flushing output")?;
    Ok(())
}

pub const GRPO_HEADER: &str = "rate\tseed\tmean_reward\tmean_abs_advantage\tobjective\tmean_kl";

fn grpo_demo(a: &GrpoDemoArgs) -> Result<(), Failure> {
    let grpo = GrpoConfig {
        group_size: a.group_size as usize,
        kl_beta: a.kl_beta,
        clip_epsilon: a.clip_epsilon,
        ..GrpoConfig::default()
    };
    grpo.validate().map_err(|e| usage(e.to_string()))?;
    let rcfg = RewardConfig::new(a.half_score, NormMode::MeanOfGroundTruth)
        .map_err(|e| usage(format!("--half-score: {e}")))?;
    let probe = ToyPolicy {
        corruption_rate: 0.0,
        neighbor_distance: a.neighbor_distance,
        temperature: a.temperature,
        seed: 0,
    };
    probe.validate().map_err(|e| usage(e.to_string()))?;
    let mut recs = read_records(&a.records)?;
    if a.max_records > 0 {
        recs.truncate(a.max_records);
    }
    if recs.is_empty() {
        return Err(Failure::Data(anyhow!("no records in {}", a.records.display())));
    }
    let mut out = create_out(&a.out)?;
    writeln!(out, "{GRPO_HEADER}").context("writing report")?;
    for &rate in &a.rates {
        for s in 0..a.seeds {
            // (reward sum, |advantage| sum, objective, kl sum, token count)
            let per_record = recs
                .par_iter()
                .enumerate()
                .map(|(i, r)| -> Result<(f64, f64, f64, f64, usize)> {
                    let mut seed_rng = rng::derived(a.seed ^ s.rotate_left(32), i as u64);
                    let policy = ToyPolicy {
                        corruption_rate: rate,
                        seed: rand_seed(&mut seed_rng),
                        ..probe
                    };
                    let cands = toy_policy_sample(r, &policy, grpo.group_size)?;
                    let gt = r.target_values();
                    let rewards = cands
                        .iter()
                        .map(|c| reward(&c.text, &gt, &rcfg).map(|b| b.total))
                        .collect::<Result<Vec<_>, _>>()?;
                    let adv = group_advantages(&rewards, &grpo)?;
                    let group: Vec<_> = cands.iter().map(|c| c.logprobs.clone()).collect();
                    let obj = grpo_objective(&group, &adv, &grpo)?;
                    let mut kl = 0.0;
                    let mut n = 0;
                    for g in &group {
                        kl += kl_estimate(&g.new, &g.reference)?.iter().sum::<f64>();
                        n += g.new.len();
                    }
                    Ok((rewards.iter().sum(), adv.iter().map(|v| v.abs()).sum(), obj, kl, n))
                })
                .collect::<Result<Vec<_>>>()?;
            let samples = (recs.len() * grpo.group_size) as f64;
            let tokens: usize = per_record.iter().map(|p| p.4).sum();
            writeln!(
                out,
                "{rate}\t{s}\t{}\t{}\t{}\t{}",
                per_record.iter().map(|p| p.0).sum::<f64>() / samples,
                per_record.iter().map(|p| p.1).sum::<f64>() / samples,
                per_record.iter().map(|p| p.2).sum::<f64>() / recs.len() as f64,
                per_record.iter().map(|p| p.3).sum::<f64>() / tokens as f64,
            )
            .context("writing report")?;
        }
    }
    out.flush().context("flushing output")?;
    Ok(())
}

fn rand_seed(r: &mut rng::Rng) -> u64 {
    rng::below(r, u64::MAX)
}

fn evaluate(a: &EvaluateArgs) -> Result<(), Failure> {
    let mut preds = io::read_predictions(&a.predictions)
        .with_context(|| format!("reading {}", a.predictions.display()))?;
    if let Some(r) = &a.region {
        let region = region_of(r).expect("validated by the parser");
        preds.retain(|p| region.contains(p.cell));
    }
    let test = read_tensor(&a.test)?;
    let horizons: Vec<usize> = a.horizons.iter().map(|&h| h as usize).collect();
    let mode = match a.mode {
        ModeArg::Cumulative => HorizonMode::Cumulative,
        ModeArg::AtStep => HorizonMode::AtStep,
    };
    let reports = evaluate_run(&preds, &test, &horizons, mode, a.per_cell).context("evaluating")?;
    let mut json = a.out.as_os_str().to_owned();
    json.push(".json");
    let mut tsv = a.out.as_os_str().to_owned();
    tsv.push(".tsv");
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).context("creating output directory")?;
    }
    fs::write(&json, report::to_json(&reports)).context("writing JSON report")?;
    fs::write(&tsv, report::to_tsv(&reports)).context("writing TSV report")?;
    print!("{}", report::to_tsv(&reports));
    Ok(())
}
