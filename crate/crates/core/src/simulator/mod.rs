//! Episode environment and the perceive-verify-execute loop.

mod render;

pub use render::{color_centroid, landmark_color, object_color, render, visible_at, GROUND};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::executor::{execute, ExecutorParams, LowLevelAction, TaskPrimitive};
use crate::image::{Image, PixelPoint};
use crate::oracle::{
    base_prompt, build_oracle, CandidateSource, OracleConfig, OracleContext, ReasoningOracle, Stage, StageOutcome,
};
use crate::perception::{perceive, Candidate, SomRepresentation};
use crate::planner::{plan, PlannerParams, WaypointPlan};
use crate::scene::{Episode, Pose, Scene};
use crate::verification::{verdict_from_fused, verify, verify_unstructured, Outcome, Verdict};

/// Component switches. Each flag, when false, removes one component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// Draw set-of-mark annotations before verification.
    pub visual_prompting: bool,
    /// Run the staged verification pipeline instead of a free pick.
    pub structured_reasoning: bool,
    /// Separate detection and verification calls.
    pub dual_stage: bool,
    /// Follow task primitives; when off, actions are random.
    pub executor_enabled: bool,
}

impl Default for Ablations {
    fn default() -> Self {
        Self {
            visual_prompting: true,
            structured_reasoning: true,
            dual_stage: true,
            executor_enabled: true,
        }
    }
}

impl Ablations {
    /// Disables a component by its letter: V, R, D or E.
    pub fn disable(&mut self, letter: char) -> Result<()> {
        match letter.to_ascii_uppercase() {
            'V' => self.visual_prompting = false,
            'R' => self.structured_reasoning = false,
            'D' => self.dual_stage = false,
            'E' => self.executor_enabled = false,
            other => return Err(Error::param("ablate", format!("unknown component `{other}`"))),
        }
        Ok(())
    }
}

pub const RANDOM_ACTIONS_PER_STEP: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub ablations: Ablations,
    pub low_level_budget: usize,
    pub oracle: OracleConfig,
    pub seed: u64,
    pub executor: ExecutorParams,
    pub planner: PlannerParams,
    /// Keep each iteration's annotated image in the result.
    pub capture_images: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            ablations: Ablations::default(),
            low_level_budget: 500,
            oracle: OracleConfig::default(),
            seed: 0,
            executor: ExecutorParams::default(),
            planner: PlannerParams::default(),
            capture_images: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub pose: Pose,
    pub step_count: u32,
    pub low_level_count: usize,
    pub plan_cursor: usize,
    pub trajectory: Vec<Pose>,
    pub stopped: bool,
}

impl SimState {
    pub fn new(start: Pose) -> Self {
        Self {
            pose: start,
            step_count: 0,
            low_level_count: 0,
            plan_cursor: 0,
            trajectory: vec![start],
            stopped: false,
        }
    }
}

/// Applies one native action with environment clamping: horizontal
/// position to the scene bounds, altitude to `[z_ground + vstep, z_max]`.
pub fn step_action(state: &mut SimState, action: LowLevelAction, params: &ExecutorParams, scene: &Scene) -> Result<()> {
    if state.stopped {
        return Err(Error::ActionAfterStop);
    }
    let mut p = crate::executor::apply_action(&state.pose, action, params);
    let xy = scene.bounds.clamp(p.position());
    p.x = xy.x;
    p.y = xy.y;
    p.z = p.z.clamp(scene.camera.z_ground + params.vstep, scene.params.z_max);
    state.pose = p;
    state.stopped = action == LowLevelAction::Stop;
    state.low_level_count += 1;
    state.trajectory.push(p);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub step: u32,
    pub pose: Pose,
    pub prompt: String,
    pub candidates: Vec<Candidate>,
    pub verdict: Verdict,
    /// `None` when primitives are ignored.
    pub primitive: Option<TaskPrimitive>,
    pub actions: Vec<LowLevelAction>,
    pub pose_after: Pose,
    pub cursor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode_id: String,
    pub final_pose: Pose,
    pub trajectory: Vec<Pose>,
    pub stop_emitted: bool,
    pub confirmed_id: Option<u32>,
    /// Scene object behind the last confirmed mark, when known.
    pub confirmed_object: Option<String>,
    pub plan: WaypointPlan,
    pub trace: Vec<IterationRecord>,
    /// Unrecoverable oracle error that ended the episode.
    pub failure: Option<String>,
    pub low_level_count: usize,
    #[serde(skip)]
    pub images: Vec<Image>,
}

fn random_seed(seed: u64, episode_id: &str) -> u64 {
    episode_id.bytes().fold(seed ^ 0x9e37_79b9_7f4a_7c15, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn has(verdict: &Verdict, stage: Stage, outcome: StageOutcome) -> bool {
    verdict
        .stage(stage)
        .is_some_and(|r| r.verdicts.ids_with(outcome).next().is_some())
}

/// Lowest pending id at the latest stage that has any.
fn deepest_pending(verdict: &Verdict) -> Option<u32> {
    verdict
        .stage_log
        .iter()
        .rev()
        .find_map(|r| r.verdicts.ids_with(StageOutcome::Pending).min())
        .or_else(|| verdict.pending_ids.first().copied())
}

struct Policy<'a> {
    scene: &'a Scene,
    plan: &'a WaypointPlan,
    params: &'a ExecutorParams,
}

impl Policy<'_> {
    /// Confirmed: stop on it. Inconclusive: one altitude adjustment per
    /// waypoint (ascend when a reference is out of view, else descend when
    /// detail is lacking), else move on. Rejected: move on. With the plan
    /// used up, stop on the pending mark that got furthest or in place.
    fn choose(
        &self,
        verdict: &Verdict,
        som: &SomRepresentation,
        pose: &Pose,
        cursor: usize,
        adjusted: bool,
    ) -> TaskPrimitive {
        if let Outcome::Confirmed { id } = verdict.outcome {
            return TaskPrimitive::Stop {
                target: som.mapping[&id].centroid,
            };
        }
        if verdict.outcome == Outcome::Inconclusive && !adjusted {
            let floor = self.scene.camera.z_ground + self.params.vstep;
            if has(verdict, Stage::Topology, StageOutcome::Pending)
                && pose.z + self.params.delta_z <= self.scene.params.z_max
            {
                return TaskPrimitive::Ascend;
            }
            if has(verdict, Stage::Literal, StageOutcome::Pending) && pose.z - self.params.delta_z >= floor {
                return TaskPrimitive::Descend;
            }
        }
        if cursor < self.plan.waypoints.len() {
            return TaskPrimitive::Move;
        }
        let target = deepest_pending(verdict)
            .and_then(|id| som.mapping.get(&id))
            .map(|c| c.centroid)
            .unwrap_or_else(|| {
                let (cx, cy) = self.scene.camera.principal();
                PixelPoint::new(cx, cy)
            });
        TaskPrimitive::Stop { target }
    }
}

/// Runs one episode with a freshly built oracle.
pub fn run_episode(episode: &Episode, scene: &Scene, config: &RunConfig) -> Result<EpisodeResult> {
    let oracle = build_oracle(&config.oracle)?;
    run_episode_with(episode, scene, config, oracle.as_ref())
}

/// Runs one episode against a caller-supplied oracle.
pub fn run_episode_with(
    episode: &Episode,
    scene: &Scene,
    config: &RunConfig,
    oracle: &dyn ReasoningOracle,
) -> Result<EpisodeResult> {
    let params = ExecutorParams {
        delta_z: scene.params.delta_z,
        ..config.executor
    };
    params.validate()?;
    if config.low_level_budget == 0 {
        return Err(Error::param("low_level_budget", "must be at least 1"));
    }
    let planner = PlannerParams {
        alpha: scene.params.alpha,
        r: scene.params.r,
        ..config.planner
    };
    let plan = plan(
        &episode.priors,
        &episode.constraints,
        &episode.start,
        scene.camera.z_ground,
        &planner,
    )?;
    let policy = Policy {
        scene,
        plan: &plan,
        params: &params,
    };
    let ablate = config.ablations;
    let mut rng = ChaCha8Rng::seed_from_u64(random_seed(config.seed, &episode.id));
    let mut state = SimState::new(episode.start);
    let mut prompt = base_prompt(&episode.constraints);
    let mut adjusted_at: Option<usize> = None;
    let mut trace = Vec::new();
    let mut images = Vec::new();
    let mut confirmed: Option<(u32, Option<String>)> = None;
    let mut failure = None;

    while !state.stopped && state.step_count < episode.step_budget && state.low_level_count < config.low_level_budget {
        let pose = state.pose;
        let image = render(scene, &pose)?;
        let ctx = OracleContext {
            episode,
            scene,
            pose,
            annotated: ablate.visual_prompting,
        };
        let observed = if ablate.dual_stage {
            perceive(&image, &prompt, oracle, &ctx).map(|som| {
                let v = if ablate.structured_reasoning {
                    verify(&som, oracle, &ctx)
                } else {
                    verify_unstructured(&som, oracle, &ctx)
                };
                (som, v)
            })
        } else {
            oracle
                .detect_and_verify(&image, &prompt, &ctx)
                .map(|f| verdict_from_fused(&image, &prompt, f, &ctx))
        };
        let (som, verdict) = match observed {
            Ok(x) => x,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        state.step_count += 1;
        if config.capture_images {
            images.push(som.annotated.clone());
        }
        if let Some(id) = verdict.confirmed_id() {
            let object = match &som.mapping[&id].source {
                CandidateSource::Object { id } => Some(id.clone()),
                _ => None,
            };
            confirmed = Some((id, object));
        }

        let cursor = state.plan_cursor;
        let (primitive, planned) = if ablate.executor_enabled {
            let p = policy.choose(&verdict, &som, &pose, cursor, adjusted_at == Some(cursor));
            let exec = execute(&pose, cursor, &p, &plan, &scene.camera, &params)?;
            if matches!(p, TaskPrimitive::Ascend | TaskPrimitive::Descend) {
                adjusted_at = Some(cursor);
            }
            state.plan_cursor = exec.cursor;
            (Some(p), exec.actions)
        } else {
            let actions = (0..RANDOM_ACTIONS_PER_STEP)
                .map(|_| LowLevelAction::ALL[rng.gen_range(0..LowLevelAction::ALL.len())])
                .collect();
            (None, actions)
        };
        let mut actions = Vec::new();
        for a in planned {
            if state.stopped || state.low_level_count >= config.low_level_budget {
                break;
            }
            step_action(&mut state, a, &params, scene)?;
            actions.push(a);
        }

        let next_prompt = verdict.guidance.clone();
        trace.push(IterationRecord {
            step: state.step_count,
            pose,
            prompt: prompt.clone(),
            candidates: som.mapping.into_values().collect(),
            verdict,
            primitive,
            actions,
            pose_after: state.pose,
            cursor: state.plan_cursor,
        });
        if let Some(g) = next_prompt {
            prompt = g;
        }
    }

    let (confirmed_id, confirmed_object) = match confirmed {
        Some((id, o)) => (Some(id), o),
        None => (None, None),
    };
    Ok(EpisodeResult {
        episode_id: episode.id.clone(),
        final_pose: state.pose,
        stop_emitted: state.stopped,
        trajectory: state.trajectory,
        confirmed_id,
        confirmed_object,
        plan,
        trace,
        failure,
        low_level_count: state.low_level_count,
        images,
    })
}

/// Runs independent episodes on up to `jobs` threads. Output order follows
/// input order and each episode is deterministic on its own.
pub fn run_batch(episodes: &[(Episode, Scene)], config: &RunConfig, jobs: usize) -> Result<Vec<Result<EpisodeResult>>> {
    let oracle = build_oracle(&config.oracle)?;
    let oracle: &dyn ReasoningOracle = oracle.as_ref();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::param("jobs", e.to_string()))?;
    Ok(pool.install(|| {
        episodes
            .par_iter()
            .map(|(e, s)| run_episode_with(e, s, config, oracle))
            .collect()
    }))
}
