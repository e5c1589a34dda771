//! The `egoflow` command line: `simulate`, `factor`, `refine` and `eval`.
//!
//! Each command resolves its configuration as flags over an optional
//! `--manifest` file over built-in defaults, then writes a `manifest.json`
//! with the resolved configuration next to its outputs. Rerunning with
//! that manifest reproduces the outputs byte for byte.
//!
//! Exit codes: 0 success, 1 computation error, 2 usage error.
//! `EGOFLOW_THREADS` caps the worker thread count.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::eval::{
    ate, kitti_line, kitti_rel_errors, parse_kitti_poses, read_kitti_poses, read_tum_poses,
};
use crate::formats::{encode_flo, encode_pfm, write_atomic};
use crate::geometry::{decompose_motion, CameraIntrinsics, SE3Pose};
use crate::losses::{evaluate, Axis, LossWeights};
use crate::refine::{refine_pose, GradientMode, Objective, RefineConfig};
use crate::sim::{
    add_flow_noise, generate_trajectory, read_pair, write_bundle, BundleInfo, FlowNoise,
    MotionKind, MotionSpec, SceneKind, SceneSpec,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const THREADS_ENV: &str = "EGOFLOW_THREADS";

#[derive(Parser, Debug)]
#[command(name = "egoflow", version, about = "Ego-motion flow factorization toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic scene bundle.
    Simulate(SimulateArgs),
    /// Align a bundle pair with a motion estimate and report the losses.
    Factor(FactorArgs),
    /// Refine an initial motion estimate on a bundle pair.
    Refine(RefineArgs),
    /// Compare an estimated trajectory with a reference.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SceneArg {
    ConstantPlane,
    SlopedPlane,
    SmoothRandom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MotionArg {
    PureRotation,
    PureTangential,
    PureRadial,
    Mixed,
    Driving,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PoseFormat {
    Kitti,
    Tum,
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    /// Previous run manifest supplying defaults.
    #[arg(long)]
    #[serde(skip)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<SceneArg>,
    /// Depth of the constant plane.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_min: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_max: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub motion: Option<MotionArg>,
    /// Fixed rotation-vector component (radians); any fixed component makes
    /// every step the same motion, with unset components 0.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rx: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ry: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rz: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tx: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ty: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tz: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Gaussian flow noise, pixels.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub kind: SceneArg,
    pub depth: f64,
    pub depth_min: f64,
    pub depth_max: f64,
    pub width: usize,
    pub height: usize,
    pub motion: MotionArg,
    pub rx: Option<f64>,
    pub ry: Option<f64>,
    pub rz: Option<f64>,
    pub tx: Option<f64>,
    pub ty: Option<f64>,
    pub tz: Option<f64>,
    pub frames: usize,
    pub seed: u64,
    pub noise: f64,
    pub out: Option<PathBuf>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            kind: SceneArg::SmoothRandom,
            depth: 10.0,
            depth_min: 4.0,
            depth_max: 40.0,
            width: 320,
            height: 96,
            motion: MotionArg::Mixed,
            rx: None,
            ry: None,
            rz: None,
            tx: None,
            ty: None,
            tz: None,
            frames: 2,
            seed: 0,
            noise: 0.0,
            out: None,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct FactorArgs {
    #[arg(long)]
    #[serde(skip)]
    pub manifest: Option<PathBuf>,
    /// Bundle directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair: Option<usize>,
    /// Estimated motion as one KITTI line; defaults to the pair's ground truth.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pose: Option<PathBuf>,
    /// Loss weight preset, 1 to 3.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<u8>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorConfig {
    pub bundle: Option<PathBuf>,
    pub pair: usize,
    pub pose: Option<PathBuf>,
    pub stage: u8,
    pub out: Option<PathBuf>,
}

impl Default for FactorConfig {
    fn default() -> Self {
        FactorConfig {
            bundle: None,
            pair: 0,
            pose: None,
            stage: 3,
            out: None,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct RefineArgs {
    #[arg(long)]
    #[serde(skip)]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair: Option<usize>,
    /// Initial motion as one KITTI line.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_rotation: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_translation: Option<f64>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradient_mode: Option<GradientArg>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence_tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line_search_shrink: Option<f64>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<ObjectiveArg>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GradientArg {
    FiniteDifference,
    AnalyticTranslational,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveArg {
    Both,
    Coplanar,
    Coaxial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineRunConfig {
    pub bundle: Option<PathBuf>,
    pub pair: usize,
    pub init: Option<PathBuf>,
    pub max_iters: u64,
    pub step_rotation: f64,
    /// `None` scales with the initial translation.
    pub step_translation: Option<f64>,
    pub gradient_mode: GradientArg,
    pub convergence_tol: f64,
    pub line_search_shrink: f64,
    pub objective: ObjectiveArg,
    pub out: Option<PathBuf>,
}

impl Default for RefineRunConfig {
    fn default() -> Self {
        let d = RefineConfig::default();
        RefineRunConfig {
            bundle: None,
            pair: 0,
            init: None,
            max_iters: d.max_iters as u64,
            step_rotation: d.step_rotation,
            step_translation: None,
            gradient_mode: GradientArg::FiniteDifference,
            convergence_tol: d.convergence_tol,
            line_search_shrink: d.line_search_shrink,
            objective: ObjectiveArg::Both,
            out: None,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    #[serde(skip)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    /// Format of the reference file; estimates are always KITTI.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_format: Option<PoseFormat>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub estimate: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub reference_format: PoseFormat,
    pub out: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            estimate: None,
            reference: None,
            reference_format: PoseFormat::Kitti,
            out: None,
        }
    }
}

/// Record of one command invocation, written as `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Fully resolved configuration, seeds and paths included.
    pub config: Value,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<RunManifest> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(&dir.join("manifest.json"), &bytes)
    }
}

/// Defaults, overlaid by the manifest's configuration, overlaid by the
/// flags that were given.
fn resolve<C, A>(command: &str, manifest: Option<&Path>, flags: &A) -> Result<C>
where
    C: Serialize + DeserializeOwned + Default,
    A: Serialize,
{
    let mut config = match serde_json::to_value(C::default())? {
        Value::Object(m) => m,
        _ => unreachable!("configs serialize to objects"),
    };
    let mut overlay = |layer: Value| -> Result<()> {
        if let Value::Object(m) = layer {
            for (k, v) in m {
                if !config.contains_key(&k) {
                    return Err(Error::InvalidConfig(format!("unknown configuration key `{k}`")));
                }
                config.insert(k, v);
            }
        }
        Ok(())
    };
    if let Some(path) = manifest {
        let m = RunManifest::read(path)?;
        if m.command != command {
            return Err(Error::InvalidConfig(format!(
                "manifest {} is for `{}`, not `{command}`",
                path.display(),
                m.command
            )));
        }
        overlay(m.config)?;
    }
    overlay(serde_json::to_value(flags)?)?;
    serde_json::from_value(Value::Object(config))
        .map_err(|e| Error::InvalidConfig(format!("configuration: {e}")))
}

fn required(value: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    value
        .clone()
        .ok_or_else(|| Error::InvalidConfig(format!("missing required {flag} (flag or manifest)")))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn read_single_pose(path: &Path) -> Result<SE3Pose> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match parse_kitti_poses(&text, path)?.poses() {
        [pose] => Ok(*pose),
        other => Err(Error::format(path, format!("expected one pose, found {}", other.len()))),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn finish(dir: &Path, command: &str, config: &impl Serialize, mut outputs: Vec<String>) -> Result<()> {
    outputs.sort();
    RunManifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: serde_json::to_value(config)?,
        outputs,
    }
    .write(dir)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let cfg: SimulateConfig = resolve("simulate", args.manifest.as_deref(), args)?;
    let out = required(&cfg.out, "--out")?;
    let k = CameraIntrinsics::kitti_like(cfg.width, cfg.height)?;
    let kind = match cfg.kind {
        SceneArg::ConstantPlane => SceneKind::ConstantPlane { depth: cfg.depth },
        SceneArg::SlopedPlane => SceneKind::SlopedPlane,
        SceneArg::SmoothRandom => SceneKind::SmoothRandom,
    };
    let scene = SceneSpec::new(kind, (cfg.depth_min, cfg.depth_max), k, cfg.seed)?;
    let fixed = [cfg.rx, cfg.ry, cfg.rz, cfg.tx, cfg.ty, cfg.tz];
    let motion_kind = match cfg.motion {
        MotionArg::PureRotation => MotionKind::PureRotation,
        MotionArg::PureTangential => MotionKind::PureTangential,
        MotionArg::PureRadial => MotionKind::PureRadial,
        MotionArg::Mixed | MotionArg::Driving => MotionKind::Mixed,
    };
    let motion = if fixed.iter().any(Option::is_some) {
        let v = fixed.map(|x| x.unwrap_or(0.0));
        MotionSpec::constant(
            motion_kind,
            nalgebra::Vector3::new(v[0], v[1], v[2]),
            nalgebra::Vector3::new(v[3], v[4], v[5]),
        )
    } else if cfg.motion == MotionArg::Driving {
        MotionSpec::driving(cfg.seed)
    } else {
        MotionSpec::random(motion_kind, cfg.seed)
    };
    let mut sim = generate_trajectory(&scene, cfg.frames, &motion)?;
    let noise = (cfg.noise != 0.0).then_some(FlowNoise {
        sigma: cfg.noise,
        seed: cfg.seed,
    });
    if let Some(n) = noise {
        for (i, pair) in sim.pairs.iter_mut().enumerate() {
            pair.corr = add_flow_noise(&pair.corr, n.sigma, n.seed.wrapping_add(i as u64))?;
        }
    }
    let info = BundleInfo {
        scene,
        motion,
        n_frames: cfg.frames,
        noise,
    };
    write_bundle(&out, &sim, &info)?;
    let mut outputs = vec!["bundle.json".to_string(), "poses.txt".to_string()];
    for (i, pair) in sim.pairs.iter().enumerate() {
        let mut files = vec!["depth_t.pfm", "depth_s.pfm", "flow.flo", "flow_st.flo", "mask.pgm", "motion.txt"];
        if pair.corr.aligned_source_depth.is_some() {
            files.push("depth_s_to_t.pfm");
        }
        outputs.extend(files.iter().map(|f| format!("pair_{i:04}/{f}")));
    }
    finish(&out, "simulate", &cfg, outputs)
}

pub fn cmd_factor(args: &FactorArgs) -> Result<()> {
    let cfg: FactorConfig = resolve("factor", args.manifest.as_deref(), args)?;
    let bundle = required(&cfg.bundle, "bundle path")?;
    let out = required(&cfg.out, "--out")?;
    let weights = LossWeights::stage(cfg.stage)
        .ok_or_else(|| Error::InvalidConfig(format!("stage {} is not 1, 2 or 3", cfg.stage)))?;
    let pair = read_pair(&bundle, cfg.pair)?;
    let est = match &cfg.pose {
        Some(p) => read_single_pose(p)?,
        None => pair.motion,
    };
    let ev = evaluate(&pair.corr, &decompose_motion(&est)?, &weights, 0.0)?;
    create_dir(&out)?;
    write_atomic(&out.join("coplanar.flo"), &encode_flo(&ev.flows.coplanar))?;
    write_atomic(&out.join("coaxial.flo"), &encode_flo(&ev.flows.coaxial))?;
    let mut outputs = vec!["coplanar.flo".to_string(), "coaxial.flo".to_string()];
    for axis in Axis::ALL {
        let (rho, valid) = ev.ratios.get(axis);
        // Pixels outside the ratio mask are written as 0.
        let grid = crate::grid::Grid::from_fn(rho.width(), rho.height(), |u, v| {
            if *valid.get(u, v) {
                *rho.get(u, v)
            } else {
                0.0
            }
        });
        let name = format!("rho_{}.pfm", axis.name());
        write_atomic(&out.join(&name), &encode_pfm(&grid))?;
        outputs.push(name);
    }
    write_json(&out.join("loss_report.json"), &ev.report)?;
    outputs.push("loss_report.json".into());
    finish(&out, "factor", &cfg, outputs)
}

pub fn cmd_refine(args: &RefineArgs) -> Result<()> {
    let cfg: RefineRunConfig = resolve("refine", args.manifest.as_deref(), args)?;
    let bundle = required(&cfg.bundle, "bundle path")?;
    let init_path = required(&cfg.init, "--init")?;
    let out = required(&cfg.out, "--out")?;
    let pair = read_pair(&bundle, cfg.pair)?;
    let init = read_single_pose(&init_path)?;
    let defaults = RefineConfig::for_init(&init);
    let rc = RefineConfig {
        max_iters: cfg.max_iters as usize,
        step_rotation: cfg.step_rotation,
        step_translation: cfg.step_translation.unwrap_or(defaults.step_translation),
        gradient_mode: match cfg.gradient_mode {
            GradientArg::FiniteDifference => GradientMode::FiniteDifference,
            GradientArg::AnalyticTranslational => GradientMode::AnalyticTranslational,
        },
        convergence_tol: cfg.convergence_tol,
        line_search_shrink: cfg.line_search_shrink,
        objective: match cfg.objective {
            ObjectiveArg::Both => Objective::Both,
            ObjectiveArg::Coplanar => Objective::Coplanar,
            ObjectiveArg::Coaxial => Objective::Coaxial,
        },
        free: [true; 6],
    };
    rc.validate()?;
    let trace = refine_pose(&pair.corr, &init, &rc)?;
    create_dir(&out)?;
    write_atomic(&out.join("pose.txt"), format!("{}\n", kitti_line(&trace.final_pose)).as_bytes())?;
    write_atomic(&out.join("trace.jsonl"), trace.to_jsonl()?.as_bytes())?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "converged": trace.converged,
            "iterations": trace.iterations,
            "final_objective": trace.final_objective(),
        }),
    )?;
    let outputs = ["pose.txt", "trace.jsonl", "summary.json"].map(String::from).to_vec();
    finish(&out, "refine", &cfg, outputs)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let cfg: EvalConfig = resolve("eval", args.manifest.as_deref(), args)?;
    let est_path = required(&cfg.estimate, "--estimate")?;
    let ref_path = required(&cfg.reference, "--reference")?;
    let out = required(&cfg.out, "--out")?;
    let estimate = read_kitti_poses(&est_path)?;
    let reference = match cfg.reference_format {
        PoseFormat::Kitti => read_kitti_poses(&ref_path)?,
        PoseFormat::Tum => read_tum_poses(&ref_path)?,
    };
    if estimate.len() != reference.len() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has {} poses, reference has {}",
            estimate.len(),
            reference.len()
        )));
    }
    let mut metrics = Map::new();
    match ate(&estimate, &reference) {
        Ok(x) => {
            metrics.insert("ate".into(), json!(x));
        }
        Err(e @ Error::DegenerateAlignment(_)) => {
            metrics.insert("ate".into(), Value::Null);
            metrics.insert("ate_unavailable".into(), json!(e.to_string()));
        }
        Err(e) => return Err(e),
    }
    let mut csv = String::from("first_frame,last_frame,length,t_err,r_err\n");
    match kitti_rel_errors(&estimate, &reference) {
        Ok(rel) => {
            metrics.insert("e_t".into(), json!(rel.e_t));
            metrics.insert("e_r".into(), json!(rel.e_r));
            for s in &rel.segments {
                writeln!(csv, "{},{},{},{},{}", s.first_frame, s.last_frame, s.length, s.t_err, s.r_err)
                    .expect("writing to a String");
            }
        }
        Err(e @ Error::NoSegments(_)) => {
            metrics.insert("e_t".into(), Value::Null);
            metrics.insert("e_r".into(), Value::Null);
            metrics.insert("relative_unavailable".into(), json!(e.to_string()));
        }
        Err(e) => return Err(e),
    }
    metrics.insert("frames".into(), json!(estimate.len()));
    create_dir(&out)?;
    write_json(&out.join("metrics.json"), &Value::Object(metrics))?;
    write_atomic(&out.join("segments.csv"), csv.as_bytes())?;
    let outputs = ["metrics.json", "segments.csv"].map(String::from).to_vec();
    finish(&out, "eval", &cfg, outputs)
}

fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidConfig(format!("{THREADS_ENV}={value} is not a positive integer")))?;
    // A global pool may already exist when called twice in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Exit code for an error: configuration problems are usage errors.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    init_threads()?;
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Factor(a) => cmd_factor(a),
        Command::Refine(a) => cmd_refine(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
