//! `aerovln` command line: plan, annotate, run and eval.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::executor::ExecutorParams;
use crate::geometry::Point2;
use crate::image::Image;
use crate::metrics::{aggregate_groups, evaluate_trajectory, summary_csv, summary_table, EpisodeMetrics, Summary};
use crate::oracle::{build_oracle, OracleConfig, OracleContext, OracleKind};
use crate::perception::{perceive, Candidate};
use crate::planner::{plan, GreedyStep, PlannerParams};
use crate::scene::{load_episode_file, validate_scene, Episode, Pose, Scene};
use crate::simulator::{run_batch, Ablations, EpisodeResult, RunConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "aerovln", version, about = "Landmark-guided aerial navigation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OracleArg {
    Scripted,
    Remote,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Component {
    V,
    R,
    D,
    E,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Plan observation waypoints for an episode.
    Plan {
        #[arg(long)]
        episode: PathBuf,
        /// Output JSON file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect and mark candidates on an image.
    Annotate {
        /// Binary PPM (P6) image.
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        prompt: String,
        /// Episode providing the scene and camera.
        #[arg(long)]
        episode: PathBuf,
        /// Pose `x,y,z,theta` the image was taken from; defaults to the start.
        #[arg(long, value_parser = parse_pose, allow_hyphen_values = true)]
        pose: Option<Pose>,
        #[arg(long, value_enum, default_value = "scripted")]
        oracle: OracleArg,
        #[arg(long)]
        oracle_config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run episodes and write one trace per episode.
    Run {
        /// Episode file or directory of episode files; repeatable.
        #[arg(long, required = true)]
        episode: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "scripted")]
        oracle: OracleArg,
        /// JSON oracle configuration; flags below override it.
        #[arg(long)]
        oracle_config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Disable a component (V, R, D or E); repeatable.
        #[arg(long, value_enum, ignore_case = true)]
        ablate: Vec<Component>,
        #[arg(long)]
        decoy_rate: Option<f64>,
        #[arg(long)]
        recall: Option<f64>,
        #[arg(long)]
        low_level_budget: Option<usize>,
        /// Write each iteration's annotated image as PPM.
        #[arg(long)]
        dump_images: bool,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Summarize a directory of traces.
    Eval {
        #[arg(long)]
        traces: PathBuf,
        /// Output directory for summary files; defaults to the traces dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_pose(s: &str) -> std::result::Result<Pose, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [x, y, z, t] => Ok(Pose::new(x, y, z, t)),
        _ => Err(format!("expected x,y,z,theta, got {} values", v.len())),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanFile {
    version: u32,
    episode_id: String,
    waypoints: Vec<Pose>,
    covered_fraction: f64,
    steps: Vec<GreedyStep>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MappingFile {
    version: u32,
    prompt: String,
    candidates: Vec<Candidate>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TraceFile {
    pub version: u32,
    pub episode_id: String,
    #[serde(default)]
    pub difficulty: Option<String>,
    pub start: Pose,
    pub target: Point2,
    pub epsilon: f64,
    pub seed: u64,
    pub ablations: Ablations,
    pub result: EpisodeResult,
    pub metrics: EpisodeMetrics,
}

#[derive(Debug, Serialize)]
struct SummaryFile {
    version: u32,
    groups: Vec<GroupSummary>,
}

#[derive(Debug, Serialize)]
struct GroupSummary {
    group: String,
    #[serde(flatten)]
    summary: Summary,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn oracle_config(kind: OracleArg, file: Option<&Path>, seed: u64) -> Result<OracleConfig> {
    let mut cfg: OracleConfig = match file {
        Some(p) => serde_json::from_slice(&fs::read(p)?)?,
        None => OracleConfig::default(),
    };
    cfg.kind = match kind {
        OracleArg::Scripted => OracleKind::Scripted,
        OracleArg::Remote => OracleKind::Remote,
    };
    cfg.scripted.seed = seed;
    cfg.remote = cfg.remote.with_env_overrides()?;
    Ok(cfg)
}

fn episode_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn cmd_plan(episode: &Path, out: &Path) -> Result<()> {
    let (e, s) = load_episode_file(episode)?;
    let params = PlannerParams {
        alpha: s.params.alpha,
        r: s.params.r,
        ..Default::default()
    };
    let p = plan(&e.priors, &e.constraints, &e.start, s.camera.z_ground, &params)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_json(
        out,
        &PlanFile {
            version: FORMAT_VERSION,
            episode_id: e.id,
            waypoints: p.waypoints,
            covered_fraction: p.covered_fraction,
            steps: p.steps,
        },
    )
}

#[allow(clippy::too_many_arguments)]
fn cmd_annotate(
    image: &Path,
    prompt: &str,
    episode: &Path,
    pose: Option<Pose>,
    oracle: OracleArg,
    oracle_file: Option<&Path>,
    seed: u64,
    out: &Path,
) -> Result<()> {
    if prompt.trim().is_empty() {
        return Err(Error::param("prompt", "must not be empty"));
    }
    let (e, s) = load_episode_file(episode)?;
    let img = Image::from_ppm(&fs::read(image)?)?;
    if img.width() != s.camera.width || img.height() != s.camera.height {
        return Err(Error::Image(format!(
            "image is {}x{} but the camera is {}x{}",
            img.width(),
            img.height(),
            s.camera.width,
            s.camera.height
        )));
    }
    let pose = pose.unwrap_or(e.start);
    let oracle = build_oracle(&oracle_config(oracle, oracle_file, seed)?)?;
    let ctx = OracleContext {
        episode: &e,
        scene: &s,
        pose,
        annotated: true,
    };
    let som = perceive(&img, prompt, oracle.as_ref(), &ctx)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("annotated.ppm"), som.annotated.to_ppm())?;
    write_json(
        &out.join("mapping.json"),
        &MappingFile {
            version: FORMAT_VERSION,
            prompt: som.prompt_used.clone(),
            candidates: som.mapping.into_values().collect(),
        },
    )
}

fn trace_for(e: &Episode, result: EpisodeResult, config: &RunConfig) -> Result<TraceFile> {
    let metrics = evaluate_trajectory(&result.trajectory, e.start.position(), e.target, e.success_radius)?;
    Ok(TraceFile {
        version: FORMAT_VERSION,
        episode_id: e.id.clone(),
        difficulty: e.difficulty.clone(),
        start: e.start,
        target: e.target,
        epsilon: e.success_radius,
        seed: config.seed,
        ablations: config.ablations,
        result,
        metrics,
    })
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut config = RunConfig {
        seed: args.seed,
        oracle: oracle_config(args.oracle, args.oracle_config.as_deref(), args.seed)?,
        capture_images: args.dump_images,
        executor: ExecutorParams::default(),
        ..Default::default()
    };
    for c in &args.ablate {
        let letter = match c {
            Component::V => 'V',
            Component::R => 'R',
            Component::D => 'D',
            Component::E => 'E',
        };
        config.ablations.disable(letter)?;
    }
    if let Some(d) = args.decoy_rate {
        config.oracle.scripted.decoy_rate = d;
    }
    if let Some(r) = args.recall {
        config.oracle.scripted.detect_recall = r;
    }
    if let Some(b) = args.low_level_budget {
        config.low_level_budget = b;
    }
    config.oracle.validate()?;

    let files = episode_files(&args.episode)?;
    if files.is_empty() {
        return Err(Error::param("episode", "no episode files found"));
    }
    let episodes: Vec<(Episode, Scene)> = files.iter().map(load_episode_file).collect::<Result<_>>()?;
    let mut seen = std::collections::BTreeSet::new();
    for (e, s) in &episodes {
        if !seen.insert(e.id.as_str()) {
            return Err(Error::param("episode", format!("duplicate episode id `{}`", e.id)));
        }
        for w in validate_scene(e, s) {
            eprintln!("warning: {}: {w}", e.id);
        }
    }
    fs::create_dir_all(&args.out)?;
    let results = run_batch(&episodes, &config, args.jobs)?;
    let mut metrics = Vec::new();
    for ((e, _), result) in episodes.iter().zip(results) {
        let mut result = result?;
        if args.dump_images {
            let dir = args.out.join(&e.id);
            fs::create_dir_all(&dir)?;
            for (k, img) in result.images.iter().enumerate() {
                fs::write(dir.join(format!("step_{:03}.ppm", k + 1)), img.to_ppm())?;
            }
        }
        result.images.clear();
        let trace = trace_for(e, result, &config)?;
        println!(
            "{}: ne={:.2} m success={} stop={} steps={}",
            e.id,
            trace.metrics.ne,
            trace.metrics.success,
            trace.result.stop_emitted,
            trace.result.trace.len()
        );
        if let Some(f) = &trace.result.failure {
            eprintln!("{}: oracle failure: {f}", e.id);
        }
        write_json(&args.out.join(format!("{}.trace.json", e.id)), &trace)?;
        metrics.push((
            e.difficulty.clone().unwrap_or_else(|| "unspecified".into()),
            trace.metrics,
        ));
    }
    let rows = aggregate_groups(metrics.iter().map(|(g, m)| (g.as_str(), m)))?;
    print!("{}", summary_table(&rows));
    Ok(())
}

fn cmd_eval(traces: &Path, out: Option<&Path>) -> Result<()> {
    let mut files: Vec<PathBuf> = fs::read_dir(traces)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".trace.json"))
        .collect();
    files.sort();
    let mut rows = Vec::new();
    for f in &files {
        let t: TraceFile =
            serde_json::from_slice(&fs::read(f)?).map_err(|e| Error::parse(f.display().to_string(), e.to_string()))?;
        if t.version != FORMAT_VERSION {
            return Err(Error::parse(
                format!("{}: version", f.display()),
                format!("unsupported version {}", t.version),
            ));
        }
        let m = evaluate_trajectory(&t.result.trajectory, t.start.position(), t.target, t.epsilon)?;
        rows.push((t.difficulty.unwrap_or_else(|| "unspecified".into()), m));
    }
    let summary = aggregate_groups(rows.iter().map(|(g, m)| (g.as_str(), m)))?;
    let out = out.unwrap_or(traces);
    fs::create_dir_all(out)?;
    fs::write(out.join("summary.csv"), summary_csv(&summary))?;
    let table = summary_table(&summary);
    fs::write(out.join("summary.txt"), &table)?;
    write_json(
        &out.join("summary.json"),
        &SummaryFile {
            version: FORMAT_VERSION,
            groups: summary
                .into_iter()
                .map(|(group, summary)| GroupSummary { group, summary })
                .collect(),
        },
    )?;
    print!("{table}");
    Ok(())
}

struct RunArgs {
    episode: Vec<PathBuf>,
    oracle: OracleArg,
    oracle_config: Option<PathBuf>,
    seed: u64,
    out: PathBuf,
    ablate: Vec<Component>,
    decoy_rate: Option<f64>,
    recall: Option<f64>,
    low_level_budget: Option<usize>,
    dump_images: bool,
    jobs: usize,
}

/// Entry point; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Plan { episode, out } => cmd_plan(&episode, &out),
        Command::Annotate {
            image,
            prompt,
            episode,
            pose,
            oracle,
            oracle_config,
            seed,
            out,
        } => cmd_annotate(
            &image,
            &prompt,
            &episode,
            pose,
            oracle,
            oracle_config.as_deref(),
            seed,
            &out,
        ),
        Command::Run {
            episode,
            oracle,
            oracle_config,
            seed,
            out,
            ablate,
            decoy_rate,
            recall,
            low_level_budget,
            dump_images,
            jobs,
        } => cmd_run(RunArgs {
            episode,
            oracle,
            oracle_config,
            seed,
            out,
            ablate,
            decoy_rate,
            recall,
            low_level_budget,
            dump_images,
            jobs,
        }),
        Command::Eval { traces, out } => cmd_eval(&traces, out.as_deref()),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
