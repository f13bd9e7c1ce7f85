//! `edgeppf`: build models, detect, benchmark, synthesize scenes and
//! simulate servoing.
//!
//! Exit codes: 0 success, 1 I/O or configuration error, 2 no detection
//! (or, for `servo`, no convergence).

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use config::Config;
use edgeppf::cloud::{load_cloud, save_cloud, PlyFormat};
use edgeppf::eval::bench::{format_pose, open_dataset, run_dataset, summarize, write_pose_file, Summary};
use edgeppf::eval::shapes;
use edgeppf::eval::synth::{synth_suite, ClutterKind, SuiteSpec};
use edgeppf::eval::ZETA_LOOSE;
use edgeppf::model::{load_model, save_model};
use edgeppf::pipeline::{prepare_model, DetectError, EarlyExit, SamplingMode};
use edgeppf::robot::{simulate_servo, TRAJECTORY_HEADER};
use edgeppf::verify::VerifyMethod;
use edgeppf::{Detector, PointCloud};

#[derive(Parser, Debug)]
#[command(name = "edgeppf", version, about = "Edge-aware point pair feature pose estimation")]
struct Cli {
    /// TOML configuration file (overrides the PPF_CONFIG variable).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the randomized commands.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for output files.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a model description from a PLY model.
    Build { model: PathBuf, out: PathBuf },
    /// Detect the model in a scene and print the pose.
    Detect { model: PathBuf, scene: PathBuf },
    /// Run a dataset directory (model.ply, scenes/, gt/) and summarize.
    Bench {
        dataset: PathBuf,
        #[arg(long, value_enum)]
        sampling: Option<SamplingFlag>,
        #[arg(long, value_enum)]
        verify: Option<VerifyFlag>,
        #[arg(long = "early-exit", value_enum)]
        early_exit: Option<ExitFlag>,
    },
    /// Generate synthetic scenes with ground truth from a TOML spec.
    Synth { spec: PathBuf, out: PathBuf },
    /// Simulate visual servoing and write the trajectory CSV.
    Servo,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SamplingFlag {
    Edge,
    Uniform,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VerifyFlag {
    Edge,
    SurfaceOverlap,
    None,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExitFlag {
    On,
    Off,
    NoTiers,
}

/// Error type that carries the exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

fn no_detection(error: anyhow::Error) -> Failure {
    Failure { code: 2, error }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = Config::resolve(cli.config.as_deref())?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(anyhow!("--threads must be at least 1").into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring threads")?;
    }
    let output = cli.output.clone();
    match cli.command {
        Command::Build { model, out } => cmd_build(&model, &out, &cfg),
        Command::Detect { model, scene } => cmd_detect(&model, &scene, &cfg, output.as_deref()),
        Command::Bench {
            dataset,
            sampling,
            verify,
            early_exit,
        } => cmd_bench(&dataset, cfg, sampling, verify, early_exit, output.as_deref()),
        Command::Synth { spec, out } => cmd_synth(&spec, &out, cli.seed),
        Command::Servo => cmd_servo(&cfg, cli.seed, output.as_deref()),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_build(model_path: &Path, out: &Path, cfg: &Config) -> Result<(), Failure> {
    let raw: PointCloud = load_cloud(model_path).with_context(|| format!("loading model {}", model_path.display()))?;
    let model = prepare_model(&raw, &cfg.detector()).map_err(anyhow::Error::from)?;
    save_model(&model, out).map_err(anyhow::Error::from)?;
    let s = &model.filter_stats;
    println!(
        "model points: {} (refine cloud {})",
        model.model_cloud.len(),
        model.refine_cloud.len()
    );
    println!("diameter: {:.6}", model.diameter);
    println!(
        "pairs: {} total, {} stored under {} keys, dropped {} below 5 deg, {} above 175 deg, {} coincident",
        s.total_pairs(),
        s.stored,
        model.table.key_count(),
        s.low_angle,
        s.high_angle,
        s.coincident
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_detect(model_path: &Path, scene_path: &Path, cfg: &Config, output: Option<&Path>) -> Result<(), Failure> {
    let model = load_model(model_path).map_err(anyhow::Error::from)?;
    let scene: PointCloud = load_cloud(scene_path).with_context(|| format!("loading scene {}", scene_path.display()))?;
    let det = Detector::new(model, cfg.detector()).map_err(anyhow::Error::from)?;
    let found = match det.detect(&scene) {
        Ok(d) => d,
        Err(e @ (DetectError::EmptyScene | DetectError::NoHypothesis)) => return Err(no_detection(e.into())),
        Err(e) => return Err(anyhow::Error::from(e).into()),
    };
    let pose_text = format_pose(&found.pose);
    let report = json!({
        "convention": "model-to-scene transform, metres, row-major",
        "pose": found.pose.to_row_major(),
        "coarse_pose": found.coarse_pose.to_row_major(),
        "edge_score": found.score,
        "votes": found.votes,
        "cluster_index": found.cluster_index,
        "tier_report": found.report,
        "icp": found.icp,
        "timings": found.timings,
        "scene_points": found.scene_points,
        "sampled_points": found.sampled_points,
        "hypotheses": found.hypotheses,
        "clusters": found.clusters,
    });
    print!("{pose_text}");
    println!(
        "edge score: {:.4} ({} of {} ROI edges)",
        found.score.s, found.score.n_matching, found.score.n_roi
    );
    println!(
        "votes: {}  full scorings: {}  rule: {:?}",
        found.votes, found.report.full_scorings, found.report.rule
    );
    let t = &found.timings;
    println!(
        "time [s]: preprocess {:.4} sampling {:.4} voting {:.4} clustering {:.4} verification {:.4} refinement {:.4} total {:.4}",
        t.preprocess, t.sampling, t.voting, t.clustering, t.verification, t.refinement, t.total
    );
    if let Some(dir) = output {
        ensure_dir(dir)?;
        write_pose_file(dir.join("pose.txt"), &found.pose).map_err(anyhow::Error::from)?;
        let path = dir.join("detection.json");
        fs::write(&path, serde_json::to_string_pretty(&report).context("encoding report")?)
            .with_context(|| format!("writing {}", path.display()))?;
    } else {
        println!("{}", serde_json::to_string(&report).context("encoding report")?);
    }
    Ok(())
}

fn flag_name<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn cmd_bench(
    dataset_dir: &Path,
    mut cfg: Config,
    sampling: Option<SamplingFlag>,
    verify: Option<VerifyFlag>,
    early_exit: Option<ExitFlag>,
    output: Option<&Path>,
) -> Result<(), Failure> {
    if let Some(s) = sampling {
        cfg.sampling.mode = match s {
            SamplingFlag::Edge => SamplingMode::Edge,
            SamplingFlag::Uniform => SamplingMode::Uniform,
        };
    }
    if let Some(v) = verify {
        cfg.verify.method = match v {
            VerifyFlag::Edge => VerifyMethod::Edge,
            VerifyFlag::SurfaceOverlap => VerifyMethod::SurfaceOverlap,
            VerifyFlag::None => VerifyMethod::None,
        };
    }
    if let Some(e) = early_exit {
        cfg.verify.early_exit = match e {
            ExitFlag::On => EarlyExit::On,
            ExitFlag::Off => EarlyExit::Off,
            ExitFlag::NoTiers => EarlyExit::NoTiers,
        };
    }
    let dataset = open_dataset(dataset_dir).map_err(anyhow::Error::from)?;
    let raw: PointCloud = load_cloud(&dataset.model_path).map_err(anyhow::Error::from)?;
    let det =
        Detector::new(prepare_model(&raw, &cfg.detector()).map_err(anyhow::Error::from)?, cfg.detector()).map_err(anyhow::Error::from)?;
    let records = run_dataset(&det, &dataset, &cfg.eval_params(ZETA_LOOSE)).map_err(anyhow::Error::from)?;
    let summary = summarize(&records);

    let dir = output.map(Path::to_path_buf).unwrap_or_else(|| dataset_dir.join("results"));
    ensure_dir(&dir)?;
    let tag = format!(
        "sampling-{}_verify-{}_exit-{}",
        flag_name(&cfg.sampling.mode),
        flag_name(&cfg.verify.method),
        flag_name(&cfg.verify.early_exit)
    );
    let jsonl = dir.join(format!("records_{tag}.jsonl"));
    let mut f = fs::File::create(&jsonl).with_context(|| format!("creating {}", jsonl.display()))?;
    for r in &records {
        writeln!(f, "{}", serde_json::to_string(r).context("encoding record")?).with_context(|| format!("writing {}", jsonl.display()))?;
    }
    let csv_path = dir.join(format!("summary_{tag}.csv"));
    write_summary_csv(&summary, &csv_path)?;
    let txt_path = dir.join(format!("summary_{tag}.txt"));
    fs::write(&txt_path, format!("{summary}\n")).with_context(|| format!("writing {}", txt_path.display()))?;
    println!("{summary}");
    println!("wrote {}, {} and {}", jsonl.display(), csv_path.display(), txt_path.display());
    Ok(())
}

fn write_summary_csv(summary: &Summary, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record([
        "class",
        "scenes",
        "detected",
        "rr_005d",
        "rr_01d",
        "mr_005d",
        "mr_01d",
        "mean_time",
        "mean_verify_time",
        "mean_full_scorings",
    ])?;
    for c in summary.classes.iter().chain(std::iter::once(&summary.overall)) {
        let (mr5, mr10) = if c.class == "all" {
            (summary.mr_005d.to_string(), summary.mr_01d.to_string())
        } else {
            (String::new(), String::new())
        };
        w.write_record([
            c.class.clone(),
            c.scenes.to_string(),
            c.detected.to_string(),
            c.rr_005d.to_string(),
            c.rr_01d.to_string(),
            mr5,
            mr10,
            c.mean_time.to_string(),
            c.mean_verify_time.to_string(),
            c.mean_full_scorings.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Scene recipe read by `synth`.
#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthFile {
    /// PLY model path (relative to the spec file); a built-in shape is
    /// used when absent.
    model: Option<PathBuf>,
    /// `vertebra` or `vertebra-symmetric`.
    shape: String,
    /// Surface sample spacing for built-in shapes (metres).
    spacing: f64,
    count: usize,
    seed: Option<u64>,
    occlusion_min: f64,
    occlusion_max: f64,
    /// `none`, `object` or `uniform-box`.
    clutter: String,
    clutter_points: usize,
    /// Distractor centre distance from the object centre, in diameters.
    clutter_offset: f64,
    noise_sigma: f64,
    distance: f64,
}

impl Default for SynthFile {
    fn default() -> Self {
        let s = SuiteSpec::default();
        Self {
            model: None,
            shape: "vertebra".into(),
            spacing: 0.001,
            count: s.count,
            seed: None,
            occlusion_min: s.occlusion_min,
            occlusion_max: s.occlusion_max,
            clutter: "object".into(),
            clutter_points: s.clutter_point_count,
            clutter_offset: s.clutter_offset,
            noise_sigma: s.noise_sigma,
            distance: s.distance,
        }
    }
}

fn cmd_synth(spec_path: &Path, out: &Path, seed: u64) -> Result<(), Failure> {
    let text = fs::read_to_string(spec_path).with_context(|| format!("reading {}", spec_path.display()))?;
    let spec: SynthFile = toml::from_str(&text).with_context(|| format!("parsing {}", spec_path.display()))?;
    let model: PointCloud = match &spec.model {
        Some(p) => {
            let p = spec_path.parent().map(|d| d.join(p)).unwrap_or_else(|| p.clone());
            load_cloud(&p).with_context(|| format!("loading model {}", p.display()))?
        }
        None => {
            if !(spec.spacing > 0.0) {
                return Err(anyhow!("spacing must be positive").into());
            }
            match spec.shape.as_str() {
                "vertebra" => shapes::vertebra().sample(spec.spacing, 1),
                "vertebra-symmetric" => shapes::vertebra_symmetric().sample(spec.spacing, 1),
                other => return Err(anyhow!("unknown shape {other:?}").into()),
            }
        }
    };
    if !model.has_normals {
        return Err(anyhow!("the synthetic model needs normals for visibility culling").into());
    }
    let clutter = match spec.clutter.as_str() {
        "none" => ClutterKind::None,
        "object" => ClutterKind::Object,
        "uniform-box" => ClutterKind::UniformBox,
        other => return Err(anyhow!("unknown clutter kind {other:?}").into()),
    };
    if spec.count == 0 {
        return Err(anyhow!("count must be at least 1").into());
    }
    let suite = SuiteSpec {
        count: spec.count,
        seed: spec.seed.unwrap_or(seed),
        occlusion_min: spec.occlusion_min,
        occlusion_max: spec.occlusion_max,
        clutter,
        clutter_point_count: spec.clutter_points,
        clutter_offset: spec.clutter_offset,
        noise_sigma: spec.noise_sigma,
        distance: spec.distance,
        ..SuiteSpec::default()
    };
    let scenes = synth_suite(&model, &suite).map_err(anyhow::Error::from)?;
    ensure_dir(&out.join("scenes"))?;
    ensure_dir(&out.join("gt"))?;
    save_cloud(&model, out.join("model.ply"), PlyFormat::BinaryLittleEndian).map_err(anyhow::Error::from)?;
    for (id, s) in &scenes {
        save_cloud(
            &s.cloud,
            out.join("scenes").join(format!("{id}.ply")),
            PlyFormat::BinaryLittleEndian,
        )
        .map_err(anyhow::Error::from)?;
        write_pose_file(out.join("gt").join(format!("{id}.txt")), &s.gt_pose).map_err(anyhow::Error::from)?;
    }
    println!("wrote {} scenes to {}", scenes.len(), out.display());
    Ok(())
}

fn cmd_servo(cfg: &Config, seed: u64, output: Option<&Path>) -> Result<(), Failure> {
    let s = &cfg.servo;
    let run =
        simulate_servo(&s.initial_pose(), &s.target_pose(), &s.calibration(), &s.params(), seed).map_err(|e| anyhow!("servo: {e}"))?;
    let dir = output.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&dir)?;
    let path = dir.join("trajectory.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(TRAJECTORY_HEADER).map_err(anyhow::Error::from)?;
    for sample in &run.samples {
        w.write_record(sample.csv_row().iter().map(|v| v.to_string()))
            .map_err(anyhow::Error::from)?;
    }
    w.flush().map_err(anyhow::Error::from)?;
    println!(
        "converged: {}  steps: {}  final error: {:.4} mm, {:.4} deg",
        run.converged,
        run.samples.len() - 1,
        run.final_trans_error * 1e3,
        run.final_rot_error.to_degrees()
    );
    println!("wrote {}", path.display());
    if !run.converged {
        return Err(no_detection(anyhow!("servo did not converge within max_steps")));
    }
    Ok(())
}
