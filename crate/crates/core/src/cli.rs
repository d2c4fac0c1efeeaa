//! The `pillar-edge` command line: data, calibration, compilation,
//! inference, evaluation and benchmarking as separate subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, GtByFrame};
use crate::frames::{
    frame_id_from_path, gen_synthetic_scene, read_frame, read_labels, write_frame, write_labels, PointCloud,
    SynthParams,
};
use crate::model::{init_random_weights, load_weights, save_weights, ModelConfig};
use crate::pillars::encode;
use crate::pipeline::{
    bench_report, run_pipelined, run_sequential, DetectorStages, PipelineStats, StageDelays, StagePlan,
};
use crate::post::{read_detections, write_detections, Detection, PostConfig};
use crate::quant::{calibrate_with, compile, load_compiled, save_compiled, CalibMode, CalibStats};

pub const CONFIG_ENV: &str = "PILLAR_EDGE_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "pillar-edge", version, about = "Pillar-based LiDAR car detection with a simulated int8 accelerator")]
pub struct Cli {
    /// Config JSON path, or one of the presets `full`, `desk`, `tiny`.
    /// Falls back to $PILLAR_EDGE_CONFIG, then to `full`.
    #[arg(long, global = true)]
    pub config: Option<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic frames (NNNNNN.bin) and labels (NNNNNN.txt).
    Synth(SynthArgs),
    /// Write a randomly initialized weight file.
    InitWeights(InitArgs),
    /// Record activation ranges of the backbone over a calibration set.
    Calibrate(CalibrateArgs),
    /// Quantize the backbone and head into a compiled .ppq model.
    Compile(CompileArgs),
    /// Run detection over a directory of frames.
    Infer(InferArgs),
    /// Score detections against labels.
    Eval(EvalArgs),
    /// Measure sequential and pipelined throughput.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub scenes: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub cars: usize,
    /// Std-dev of Gaussian point noise in meters.
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    #[arg(long, default_value_t = 1.0)]
    pub ground_density: f64,
    #[arg(long, default_value_t = 20.0)]
    pub surface_density: f64,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of calibration frames (taken in frame-id order).
    #[arg(long, default_value_t = 64)]
    pub frames: usize,
    /// Use this per-frame percentile of |x| instead of the maximum.
    #[arg(long)]
    pub percentile: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CompileArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub calib: PathBuf,
    /// Output .ppq; the host-side encoder weights go next to it as STEM.pfn.ppw.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct ModelArgs {
    /// Float weights (.ppw).
    #[arg(long, required_unless_present = "compiled", conflicts_with = "compiled")]
    pub weights: Option<PathBuf>,
    /// Compiled model (.ppq).
    #[arg(long)]
    pub compiled: Option<PathBuf>,
    /// Encoder weights for --compiled; defaults to the .pfn.ppw next to it.
    #[arg(long, requires = "compiled")]
    pub encoder: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct PipelineArgs {
    #[arg(long, default_value_t = 2)]
    pub queue_depth: usize,
    #[arg(long = "in-flight", default_value_t = 4)]
    pub in_flight: usize,
    /// Minimum stage times `pre,accel,post` in ms (testing).
    #[arg(long)]
    pub stage_delays: Option<String>,
}

#[derive(Debug, Args, Clone)]
pub struct PostArgs {
    /// Confidence threshold [default: config, else 0.3 as in the reference evaluation].
    #[arg(long, value_parser = unit_interval)]
    pub conf: Option<f64>,
    /// NMS IoU threshold [default: config, else 0.5].
    #[arg(long, value_parser = unit_interval)]
    pub nms_iou: Option<f64>,
    /// Candidates kept before NMS [default: config, else 1000].
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub data: PathBuf,
    /// Detections JSONL; stats go to OUT.stats.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Run the three stages concurrently.
    #[arg(long)]
    pub pipeline: bool,
    #[command(flatten)]
    pub plan: PipelineArgs,
    #[command(flatten)]
    pub post: PostArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dets: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Match IoU threshold (BEV) [default: 0.3, the reference evaluation setting].
    #[arg(long, value_parser = unit_interval)]
    pub iou: Option<f64>,
    /// Confidence threshold [default: 0.3, the reference evaluation setting].
    #[arg(long, value_parser = unit_interval)]
    pub conf: Option<f64>,
    /// Also write the JSON summary here.
    #[arg(long)]
    pub json_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub data: PathBuf,
    /// Frames to push through each mode; the data set is cycled.
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    /// Throughput target in Hz [default: 5, the rate reported for the reference system].
    #[arg(long, default_value_t = 5.0)]
    pub target_hz: f64,
    #[command(flatten)]
    pub plan: PipelineArgs,
    #[command(flatten)]
    pub post: PostArgs,
    /// Write both reports as JSON here.
    #[arg(long)]
    pub json_out: Option<PathBuf>,
}

fn unit_interval(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

/// Everything a run depends on besides its input files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub post: PostConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn preset(name: &str) -> Option<Self> {
        let model = match name {
            "full" => ModelConfig::default(),
            "desk" => ModelConfig::desk(),
            "tiny" => ModelConfig::tiny(),
            _ => return None,
        };
        Some(RunConfig {
            model,
            ..Default::default()
        })
    }

    /// `--config`, then `$PILLAR_EDGE_CONFIG`, then the full-size default.
    pub fn resolve(flag: Option<&str>) -> Result<Self> {
        let env = std::env::var(CONFIG_ENV).ok();
        let cfg = match flag.or(env.as_deref()) {
            None => RunConfig::default(),
            Some(s) => match RunConfig::preset(s) {
                Some(c) => c,
                None => {
                    let text = fs::read_to_string(s).map_err(|e| Error::io(s, e))?;
                    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{s}: {e}")))?
                }
            },
        };
        cfg.model.validate()?;
        cfg.post.validate()?;
        cfg.eval.validate()?;
        Ok(cfg)
    }
}

/// Provenance record written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    pub seed: Option<u64>,
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: f64,
}

impl RunManifest {
    fn new(subcommand: &str, config: &RunConfig) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            config: config.clone(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            seed: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: now(),
            finished_at: 0.0,
        }
    }

    fn input(mut self, key: &str, p: &Path) -> Self {
        self.inputs.insert(key.into(), p.to_path_buf());
        self
    }

    fn output(mut self, key: &str, p: &Path) -> Self {
        self.outputs.insert(key.into(), p.to_path_buf());
        self
    }

    fn write(mut self, path: &Path) -> Result<()> {
        self.finished_at = now();
        let mut text = serde_json::to_string_pretty(&self).map_err(|e| Error::Format(e.to_string()))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// `foo.ppq` -> `foo.ppq.<suffix>`
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

/// Encoder weights stored next to a compiled model.
pub fn encoder_path(compiled: &Path) -> PathBuf {
    compiled.with_extension("pfn.ppw")
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

/// Paths in `dir` with extension `ext` and a numeric stem, in frame-id order.
pub fn list_frames(dir: &Path, ext: &str) -> Result<Vec<(u64, PathBuf)>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            out.push((frame_id_from_path(&path)?, path));
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_frames(dir: &Path) -> Result<Vec<PointCloud>> {
    list_frames(dir, "bin")?.into_iter().map(|(_, p)| read_frame(p)).collect()
}

pub fn load_labels(dir: &Path) -> Result<GtByFrame> {
    list_frames(dir, "txt")?
        .into_iter()
        .map(|(id, p)| Ok((id, read_labels(p)?)))
        .collect()
}

fn post_config(base: &PostConfig, a: &PostArgs) -> Result<PostConfig> {
    let c = PostConfig {
        conf_thr: a.conf.unwrap_or(base.conf_thr),
        nms_iou: a.nms_iou.unwrap_or(base.nms_iou),
        top_k: a.top_k.unwrap_or(base.top_k),
    };
    c.validate()?;
    Ok(c)
}

fn stage_plan(a: &PipelineArgs) -> Result<StagePlan> {
    let plan = StagePlan {
        queue_depth: a.queue_depth,
        in_flight_max: a.in_flight,
        delays: match &a.stage_delays {
            Some(s) => StageDelays::parse(s)?,
            None => StageDelays::default(),
        },
    };
    plan.validate()?;
    Ok(plan)
}

/// Builds detector stages from `--weights` or `--compiled`.
pub fn build_stages(cfg: &RunConfig, m: &ModelArgs, post: PostConfig) -> Result<DetectorStages> {
    match (&m.weights, &m.compiled) {
        (Some(w), None) => DetectorStages::float(&cfg.model, &load_weights(w)?, post),
        (None, Some(c)) => {
            let model = load_compiled(c)?;
            let enc_path = m.encoder.clone().unwrap_or_else(|| encoder_path(c));
            let encoder = load_weights(&enc_path)?;
            DetectorStages::compiled(&cfg.model, &encoder, model, post)
        }
        _ => Err(Error::InvalidArgument("exactly one of --weights or --compiled is required".into())),
    }
}

fn model_inputs(man: RunManifest, m: &ModelArgs) -> RunManifest {
    match (&m.weights, &m.compiled) {
        (Some(w), _) => man.input("weights", w),
        (_, Some(c)) => {
            let enc = m.encoder.clone().unwrap_or_else(|| encoder_path(c));
            man.input("compiled", c).input("encoder", &enc)
        }
        _ => man,
    }
}

/// Runs a parsed command, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::resolve(cli.config.as_deref())?;
    let w = |out: &mut dyn Write, s: &str| out.write_all(s.as_bytes()).map_err(|e| Error::io("<stdout>", e));
    match cli.command {
        Command::Synth(a) => {
            fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
            let mut seeds = ChaCha8Rng::seed_from_u64(a.seed);
            for i in 0..a.scenes {
                let params = SynthParams {
                    n_cars: a.cars,
                    noise_sigma: a.noise,
                    ground_density: a.ground_density,
                    surface_density: a.surface_density,
                    seed: seeds.random(),
                    ..Default::default()
                };
                let (mut cloud, labels) = gen_synthetic_scene(&params)?;
                cloud.frame_id = i as u64;
                write_frame(a.out.join(format!("{i:06}.bin")), &cloud)?;
                write_labels(a.out.join(format!("{i:06}.txt")), &labels)?;
            }
            let mut man = RunManifest::new("synth", &cfg).output("data", &a.out);
            man.seed = Some(a.seed);
            man.write(&a.out.join("manifest.json"))?;
            w(out, &format!("wrote {} scenes to {}\n", a.scenes, a.out.display()))
        }
        Command::InitWeights(a) => {
            create_parent(&a.out)?;
            save_weights(&init_random_weights(&cfg.model, a.seed)?, &a.out)?;
            let mut man = RunManifest::new("init-weights", &cfg).output("weights", &a.out);
            man.seed = Some(a.seed);
            man.write(&sidecar(&a.out, "manifest.json"))?;
            w(out, &format!("wrote {}\n", a.out.display()))
        }
        Command::Calibrate(a) => {
            if a.frames == 0 {
                return Err(Error::InvalidArgument("--frames must be >= 1".into()));
            }
            let store = load_weights(&a.weights)?;
            store.check_against(&cfg.model)?;
            let paths = list_frames(&a.data, "bin")?;
            let pseudo = paths
                .iter()
                .take(a.frames)
                .map(|(_, p)| encode(&read_frame(p)?, &cfg.model.grid, &store))
                .collect::<Result<Vec<_>>>()?;
            let mode = match a.percentile {
                Some(p) => CalibMode::Percentile(p),
                None => CalibMode::MaxAbs,
            };
            let stats = calibrate_with(&store, &cfg.model, &pseudo, mode)?;
            create_parent(&a.out)?;
            stats.save(&a.out)?;
            RunManifest::new("calibrate", &cfg)
                .input("weights", &a.weights)
                .input("data", &a.data)
                .output("calib", &a.out)
                .write(&sidecar(&a.out, "manifest.json"))?;
            w(out, &format!("calibrated on {} frames -> {}\n", stats.n_frames, a.out.display()))
        }
        Command::Compile(a) => {
            let store = load_weights(&a.weights)?;
            store.check_against(&cfg.model)?;
            let stats = CalibStats::load(&a.calib)?;
            let model = compile(&store, &cfg.model, &stats)?;
            create_parent(&a.out)?;
            save_compiled(&model, &a.out)?;
            let enc = encoder_path(&a.out);
            save_weights(&store.subset("pfn."), &enc)?;
            RunManifest::new("compile", &cfg)
                .input("weights", &a.weights)
                .input("calib", &a.calib)
                .output("compiled", &a.out)
                .output("encoder", &enc)
                .write(&sidecar(&a.out, "manifest.json"))?;
            w(out, &format!("compiled {} layers -> {}\n", model.layers.len(), a.out.display()))
        }
        Command::Infer(a) => {
            let post = post_config(&cfg.post, &a.post)?;
            let plan = stage_plan(&a.plan)?;
            let stages = build_stages(&cfg, &a.model, post)?;
            let frames = load_frames(&a.data)?;
            let (dets, stats) = if a.pipeline {
                run_pipelined(&stages, frames, &plan)?
            } else {
                run_sequential(&stages, frames, plan.delays)?
            };
            let dets: Vec<Detection> = dets.into_iter().flatten().collect();
            create_parent(&a.out)?;
            let file = fs::File::create(&a.out).map_err(|e| Error::io(&a.out, e))?;
            let mut bw = std::io::BufWriter::new(file);
            write_detections(&mut bw, &dets)?;
            bw.flush().map_err(|e| Error::io(&a.out, e))?;
            let stats_path = sidecar(&a.out, "stats.json");
            let text = serde_json::to_string_pretty(&stats).map_err(|e| Error::Format(e.to_string()))?;
            fs::write(&stats_path, text + "\n").map_err(|e| Error::io(&stats_path, e))?;
            let mut run_cfg = cfg.clone();
            run_cfg.post = post;
            model_inputs(RunManifest::new("infer", &run_cfg), &a.model)
                .input("data", &a.data)
                .output("detections", &a.out)
                .output("stats", &stats_path)
                .write(&sidecar(&a.out, "manifest.json"))?;
            w(
                out,
                &format!("{} detections over {} frames ({:.3} Hz)\n", dets.len(), stats.frames, stats.throughput),
            )
        }
        Command::Eval(a) => {
            let ecfg = EvalConfig {
                iou_thr: a.iou.unwrap_or(cfg.eval.iou_thr),
                conf_thr: a.conf.unwrap_or(cfg.eval.conf_thr),
            };
            let f = fs::File::open(&a.dets).map_err(|e| Error::io(&a.dets, e))?;
            let dets = read_detections(BufReader::new(f))?;
            let gts = load_labels(&a.labels)?;
            let report = evaluate(&dets, &gts, &ecfg)?;
            let json = report.to_json();
            if let Some(p) = &a.json_out {
                create_parent(p)?;
                fs::write(p, format!("{json}\n")).map_err(|e| Error::io(p, e))?;
            }
            w(out, &report.to_text())?;
            w(out, &format!("{json}\n"))
        }
        Command::Bench(a) => {
            if a.frames == 0 {
                return Err(Error::InvalidArgument("--frames must be >= 1".into()));
            }
            let post = post_config(&cfg.post, &a.post)?;
            let plan = stage_plan(&a.plan)?;
            let stages = build_stages(&cfg, &a.model, post)?;
            let base = load_frames(&a.data)?;
            if base.is_empty() {
                return Err(Error::InvalidArgument(format!("no frames in {}", a.data.display())));
            }
            let cycled = || {
                (0..a.frames).map(|i| {
                    let mut c = base[i % base.len()].clone();
                    c.frame_id = i as u64;
                    c
                })
            };
            let (seq_dets, seq) = run_sequential(&stages, cycled(), plan.delays)?;
            let (pipe_dets, pipe) = run_pipelined(&stages, cycled(), &plan)?;
            if seq_dets != pipe_dets {
                return Err(Error::Eval("pipelined detections differ from sequential".into()));
            }
            let reports = [
                bench_report("sequential", &seq, a.target_hz),
                bench_report("pipelined", &pipe, a.target_hz),
            ];
            for r in &reports {
                w(out, &r.to_text())?;
            }
            w(out, &format!("speedup={:.6}\n", speedup(&seq, &pipe)))?;
            if let Some(p) = &a.json_out {
                create_parent(p)?;
                let json = serde_json::to_string_pretty(&reports).map_err(|e| Error::Format(e.to_string()))?;
                fs::write(p, json + "\n").map_err(|e| Error::io(p, e))?;
            }
            Ok(())
        }
    }
}

fn speedup(seq: &PipelineStats, pipe: &PipelineStats) -> f64 {
    if seq.throughput > 0.0 {
        pipe.throughput / seq.throughput
    } else {
        0.0
    }
}

/// Entry point for the binary: returns the process exit code.
pub fn main_with_args(args: impl IntoIterator<Item = std::ffi::OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: argument: {first}");
            return 2;
        }
    };
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), e.to_string().replace('\n', " "));
            1
        }
    }
}
