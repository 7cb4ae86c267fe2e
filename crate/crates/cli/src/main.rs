use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use log::info;

use previz_core::geometry::io::{load_mesh, PART_LABELS_VERSION};
use previz_core::inpaint::synthetic::{FixedSegmenter, OracleDenoiser, UpsampleDecoder};
use previz_core::inpaint::{
    read_latent, read_schedule, run_inpaint_loop, write_latent, InpaintConfig, Latent, MaskUpdate, Plugins, RenoiseIndex, LATENT_VERSION,
};
use previz_core::losses::annotation::CONTACT_VERSION;
use previz_core::metrics::{evaluate_scene, read_pose_vectors, write_report, MetricsSettings, POSE_VECTORS_VERSION, REPORT_VERSION};
use previz_core::pipeline::demo::write_demo;
use previz_core::pipeline::{
    export_stage, keyframe_dir, metrics_stage, parse_stage, place_keyframe, refine_keyframe_pose, run_pipeline, write_parse_outputs,
    write_placement_outputs, write_pose_outputs, PipelineConfig, PipelineError, Stage, CONFIG_VERSION,
};
use previz_core::placement::{PLACEMENT_VERSION, TRACE_HEADER};
use previz_core::posefit::{DEPTH_VERSION, POSE_TRACE_HEADER, POSE_VERSION};
use previz_core::scriptplan::{build_keyframe_plan, parse_script, DEFAULT_TRANSITION, MANIFEST_VERSION, SCRIPT_VERSION};
use previz_core::silhouette::io::{read_soft_mask, write_soft_mask, CAMERA_VERSION};
use rand::SeedableRng;

#[derive(Parser, Debug)]
#[command(name = "previz", version, about = "Keyframe pre-visualization for human-scene interaction scripts")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct GlobalArgs {
    /// Pipeline config (JSON).
    #[arg(long, global = true, env = "PREVIZ_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true, env = "PREVIZ_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "PREVIZ_OUT")]
    out: Option<PathBuf>,
    /// Worker threads for per-keyframe jobs (default: all cores).
    #[arg(long, global = true, env = "PREVIZ_JOBS")]
    jobs: Option<usize>,
    /// Renoise with alpha_bar at t instead of t - 1.
    #[arg(long, global = true, env = "PREVIZ_LITERAL_PAPER_RENOISE")]
    literal_paper_renoise: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse an action script; prints the canonical form, or writes it with the plan under --out.
    Parse {
        /// Script file (defaults to the config's script).
        script: Option<PathBuf>,
    },
    /// Refine object poses for keyframes that have pose inputs.
    RefinePose(KeyframeArg),
    /// Place the human for each keyframe (reads refined poses from --out).
    Place(KeyframeArg),
    /// Run the progressive-mask inpainting loop with stub models.
    InpaintLoop(InpaintArgs),
    /// Write the keyframe manifest from parsed script and keyframe previews in --out.
    ExportPlan,
    /// Evaluate placed humans; uses --config artifacts in --out unless --scene is given.
    Eval(EvalArgs),
    /// Run every stage into a timestamped directory under --out.
    Run,
    /// Write the bundled demo inputs under --out/inputs and run them.
    Demo {
        /// Only write the inputs.
        #[arg(long)]
        no_run: bool,
    },
}

#[derive(Args, Debug)]
struct KeyframeArg {
    /// 1-based keyframe id (default: all).
    #[arg(long)]
    keyframe: Option<usize>,
}

#[derive(Args, Debug)]
struct InpaintArgs {
    /// Known clean latent z0* (f32 file with JSON sidecar).
    #[arg(long)]
    latent: PathBuf,
    /// Initial generation mask (grayscale PNG, image resolution).
    #[arg(long)]
    mask: PathBuf,
    /// JSON array of alpha_bar values for t = 1..L.
    #[arg(long)]
    schedule: PathBuf,
    /// Starting noisy latent; Gaussian noise from --seed when absent.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Text condition passed to the denoiser.
    #[arg(long, default_value = "")]
    condition: String,
    /// Dilation radius for the union mask update; 0 replaces the mask each step.
    #[arg(long)]
    dilation: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Scene mesh for standalone evaluation.
    #[arg(long, requires = "bodies")]
    scene: Option<PathBuf>,
    /// Directory of body meshes (.obj/.ply), read in name order.
    #[arg(long)]
    bodies: Option<PathBuf>,
    /// Pose-vector file (f32 binary with JSON sidecar).
    #[arg(long)]
    poses: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
}

fn schema_versions() -> String {
    let mut s = format!("{}\nschemas:\n", env!("CARGO_PKG_VERSION"));
    for (name, v) in [
        ("config", CONFIG_VERSION),
        ("script", SCRIPT_VERSION),
        ("camera", CAMERA_VERSION),
        ("contact", CONTACT_VERSION),
        ("part-labels", PART_LABELS_VERSION),
        ("placement", PLACEMENT_VERSION),
        ("pose", POSE_VERSION),
        ("depth", DEPTH_VERSION),
        ("latent", LATENT_VERSION),
        ("manifest", MANIFEST_VERSION),
        ("pose-vectors", POSE_VECTORS_VERSION),
        ("metrics-report", REPORT_VERSION),
    ] {
        s.push_str(&format!("  {name} {v}\n"));
    }
    s.push_str(&format!("  placement-trace csv: {TRACE_HEADER}\n"));
    s.push_str(&format!("  pose-trace csv: {POSE_TRACE_HEADER}"));
    s
}

/// Error carrying the process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            error: e.into(),
        }
    }
}

fn at(stage: Stage) -> impl FnOnce(anyhow::Error) -> Failure {
    move |error| Failure {
        code: stage.exit_code() as u8,
        error,
    }
}

fn load_config(global: &GlobalArgs) -> Result<PipelineConfig, Failure> {
    let path = global.config.as_ref().ok_or_else(|| at(Stage::Config)(anyhow!("--config is required for this command")))?;
    let mut config = PipelineConfig::load(path)?;
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if global.literal_paper_renoise {
        config.inpaint.literal_paper_renoise = true;
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(global: &GlobalArgs) -> Result<PathBuf, Failure> {
    global.out.clone().ok_or_else(|| at(Stage::Config)(anyhow!("--out is required for this command")))
}

fn keyframe_indices(config: &PipelineConfig, keyframe: Option<usize>) -> Result<Vec<usize>, Failure> {
    match keyframe {
        None => Ok((0..config.keyframes.len()).collect()),
        Some(id) if id >= 1 && id <= config.keyframes.len() => Ok(vec![id - 1]),
        Some(id) => Err(at(Stage::Config)(anyhow!("keyframe {id} not in 1..={}", config.keyframes.len()))),
    }
}

/// Runs `f` over keyframe indices on a `--jobs`-sized pool; results keep input order.
fn par_map<T: Send>(jobs: Option<usize>, items: &[usize], f: impl Fn(usize) -> T + Sync + Send) -> Result<Vec<T>, Failure> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.unwrap_or(0)).build().map_err(|e| at(Stage::Config)(e.into()))?;
    Ok(pool.install(|| items.par_iter().map(|&i| f(i)).collect()))
}

fn cmd_parse(global: &GlobalArgs, script: Option<PathBuf>) -> Result<(), Failure> {
    let path = match script {
        Some(p) => p,
        None => load_config(global)?.script,
    };
    let text = fs::read_to_string(&path).with_context(|| path.display().to_string()).map_err(at(Stage::Parse))?;
    let script = parse_script(&text).map_err(|e| at(Stage::Parse)(anyhow!("{}: {e}", path.display())))?;
    let plan = build_keyframe_plan(&script, DEFAULT_TRANSITION);
    match &global.out {
        Some(out) => {
            write_parse_outputs(out, &script, &plan)?;
            info!("{} keyframe(s), {} segment(s)", plan.keyframes.len(), plan.segments.len());
        }
        None => print!("{}", script.to_text()),
    }
    Ok(())
}

fn cmd_refine_pose(global: &GlobalArgs, keyframe: Option<usize>) -> Result<(), Failure> {
    let config = load_config(global)?;
    let out = out_dir(global)?;
    let ids = keyframe_indices(&config, keyframe)?;
    let results = par_map(global.jobs, &ids, |i| refine_keyframe_pose(&config, i))?;
    for (&i, r) in ids.iter().zip(results) {
        match r? {
            Some(r) => {
                write_pose_outputs(&out, i + 1, &r)?;
                println!("{}", keyframe_dir(&out, i + 1).join("pose.json").display());
            }
            None => info!("keyframe {} has no pose inputs", i + 1),
        }
    }
    Ok(())
}

fn cmd_place(global: &GlobalArgs, keyframe: Option<usize>) -> Result<(), Failure> {
    let config = load_config(global)?;
    let out = out_dir(global)?;
    let (_, plan) = parse_stage(&config)?;
    let ids = keyframe_indices(&config, keyframe)?;
    let results = par_map(global.jobs, &ids, |i| place_keyframe(&config, &plan, i, &out))?;
    for (&i, r) in ids.iter().zip(results) {
        let outcome = r?;
        write_placement_outputs(&out, i + 1, &outcome)?;
        let p = outcome.result.params;
        println!("keyframe {}: scale {:.6} translation [{:.6}, {:.6}, {:.6}]", i + 1, p.scale, p.translation.x, p.translation.y, p.translation.z);
    }
    Ok(())
}

fn cmd_export(global: &GlobalArgs) -> Result<(), Failure> {
    let config = load_config(global)?;
    let out = out_dir(global)?;
    let (_, plan) = parse_stage(&config)?;
    let manifest = export_stage(&config, &plan, &out)?;
    println!("{} keyframe(s), {} job(s)", manifest.keyframes.len(), manifest.jobs.len());
    Ok(())
}

fn mesh_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| dir.display().to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("obj") || e.eq_ignore_ascii_case("ply")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .obj or .ply meshes in {}", dir.display());
    }
    Ok(files)
}

fn cmd_eval(global: &GlobalArgs, args: &EvalArgs) -> Result<(), Failure> {
    let stage = at(Stage::Metrics);
    let report = match (&args.scene, &args.bodies) {
        (Some(scene), Some(bodies)) => {
            let mut settings = MetricsSettings::default();
            if let Some(seed) = global.seed {
                settings.seed = seed;
            }
            if let Some(k) = args.k {
                settings.diversity_k = k;
            }
            if let Some(t) = args.threshold {
                settings.contact_threshold = t;
            }
            let scene = load_mesh(scene).with_context(|| scene.display().to_string()).map_err(stage)?;
            let mut meshes = Vec::new();
            for f in mesh_files(bodies).map_err(at(Stage::Metrics))? {
                meshes.push(load_mesh(&f).with_context(|| f.display().to_string()).map_err(at(Stage::Metrics))?);
            }
            let poses = match &args.poses {
                Some(p) => Some(read_pose_vectors(p).with_context(|| p.display().to_string()).map_err(at(Stage::Metrics))?),
                None => None,
            };
            if let Some(p) = &poses {
                if p.len() < settings.diversity_k {
                    return Err(at(Stage::Metrics)(anyhow!("{} pose samples cannot form {} clusters", p.len(), settings.diversity_k)));
                }
            }
            let report = evaluate_scene(&scene, &meshes, poses.as_ref(), &settings).map_err(|e| at(Stage::Metrics)(e.into()))?;
            if let Some(out) = &global.out {
                fs::create_dir_all(out).map_err(|e| at(Stage::Metrics)(e.into()))?;
                write_report(&report, &out.join("metrics.json")).map_err(|e| at(Stage::Metrics)(e.into()))?;
            }
            report
        }
        _ => {
            let config = load_config(global)?;
            metrics_stage(&config, &out_dir(global)?)?
        }
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    Ok(())
}

fn cmd_inpaint(global: &GlobalArgs, args: &InpaintArgs) -> Result<(), Failure> {
    let fail = |e: anyhow::Error| Failure { code: 1, error: e };
    let out = out_dir(global)?;
    let z0 = read_latent(&args.latent).with_context(|| args.latent.display().to_string()).map_err(fail)?;
    let mask = read_soft_mask(&args.mask).with_context(|| args.mask.display().to_string()).map_err(fail)?;
    let schedule = read_schedule(&args.schedule).with_context(|| args.schedule.display().to_string()).map_err(fail)?;
    let seed = global.seed.unwrap_or(0);
    let z_init = match &args.init {
        Some(p) => read_latent(p).with_context(|| p.display().to_string()).map_err(fail)?,
        None => {
            let (c, h, w) = z0.dims();
            Latent::gaussian(c, h, w, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed))
        }
    };
    if mask.width() % z0.width() != 0 || mask.width() / z0.width() != mask.height() / z0.height() || mask.height() % z0.height() != 0 {
        return Err(fail(anyhow!(
            "mask {}x{} is not an integer multiple of the latent {}x{}",
            mask.width(),
            mask.height(),
            z0.width(),
            z0.height()
        )));
    }
    let radius = args.dilation.unwrap_or(3);
    let config = InpaintConfig {
        renoise: if global.literal_paper_renoise {
            RenoiseIndex::LiteralPaper
        } else {
            RenoiseIndex::Previous
        },
        mask_update: if radius == 0 {
            MaskUpdate::Replace
        } else {
            MaskUpdate::UnionDilated { radius }
        },
        seed,
        ..InpaintConfig::default()
    };
    let mut denoiser = OracleDenoiser::new(schedule.clone());
    let mut decoder = UpsampleDecoder::new(mask.width() / z0.width());
    let mut segmenter = FixedSegmenter::new(mask.clone());
    let plugins = Plugins {
        denoiser: &mut denoiser,
        decoder: &mut decoder,
        segmenter: &mut segmenter,
    };
    let output = run_inpaint_loop(plugins, &z_init, &z0, &mask, &args.condition, &schedule, &config).map_err(|e| fail(e.into()))?;
    let masks = out.join("masks");
    fs::create_dir_all(&masks).map_err(|e| fail(e.into()))?;
    write_latent(&output.latent, &out.join("latent.bin")).map_err(|e| fail(e.into()))?;
    write_latent(&output.z_final, &out.join("z_final.bin")).map_err(|e| fail(e.into()))?;
    for (i, m) in output.trace.masks.iter().enumerate() {
        write_soft_mask(m, &masks.join(format!("mask_{i:03}.png"))).map_err(|e| fail(e.into()))?;
    }
    println!("{} step(s), {} mask(s) written to {}", schedule.len(), output.trace.masks.len(), out.display());
    Ok(())
}

fn cmd_run(global: &GlobalArgs, config: PipelineConfig) -> Result<(), Failure> {
    let out = out_dir(global)?;
    let outcome = run_pipeline(&config, &out, global.jobs);
    if let Some(dir) = &outcome.dir {
        println!("{}", dir.display());
    }
    let report = outcome.result?;
    info!("non-collision {:.4}, contact {:.4}", report.non_collision, report.contact);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    match cli.command {
        Command::Parse { script } => cmd_parse(g, script),
        Command::RefinePose(k) => cmd_refine_pose(g, k.keyframe),
        Command::Place(k) => cmd_place(g, k.keyframe),
        Command::InpaintLoop(args) => cmd_inpaint(g, &args),
        Command::ExportPlan => cmd_export(g),
        Command::Eval(args) => cmd_eval(g, &args),
        Command::Run => {
            let config = load_config(g)?;
            cmd_run(g, config)
        }
        Command::Demo { no_run } => {
            let out = out_dir(g)?;
            let config_path = write_demo(&out.join("inputs"))?;
            println!("{}", config_path.display());
            if no_run {
                return Ok(());
            }
            let global = GlobalArgs {
                config: Some(config_path),
                ..g.clone()
            };
            let config = load_config(&global)?;
            cmd_run(&global, config)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let matches = Cli::command().long_version(schema_versions()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
