//! Three-stage verification: literal attributes, then spatial topology, then
//! geographic boundary, each run only on the previous stage's survivors.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::executor::project_world;
use crate::image::{Image, PixelPoint};
use crate::oracle::{
    base_prompt, propose_guidance, FusedResponse, GuidanceEvidence, OracleContext, ReasoningOracle, Stage,
    StageOutcome, StageVerdictMap,
};
use crate::perception::{assign_ids, som_from_candidates, SomRepresentation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Outcome {
    Confirmed { id: u32 },
    Inconclusive,
    RejectedAll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub verdicts: StageVerdictMap,
    /// Oracle failure that forced this stage to all-pending.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub outcome: Outcome,
    /// Present exactly when the outcome is not `Confirmed`.
    pub guidance: Option<String>,
    pub pending_ids: Vec<u32>,
    pub stage_log: Vec<StageRecord>,
}

impl Verdict {
    pub fn confirmed_id(&self) -> Option<u32> {
        match self.outcome {
            Outcome::Confirmed { id } => Some(id),
            _ => None,
        }
    }

    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stage_log.iter().find(|r| r.stage == stage)
    }
}

fn restrict(som: &SomRepresentation, ids: &BTreeSet<u32>) -> SomRepresentation {
    SomRepresentation {
        annotated: som.annotated.clone(),
        mapping: som
            .mapping
            .iter()
            .filter(|(id, _)| ids.contains(id))
            .map(|(id, c)| (*id, c.clone()))
            .collect(),
        prompt_used: som.prompt_used.clone(),
        marked: som.marked,
    }
}

fn run_stage(
    som: &SomRepresentation,
    stage: Stage,
    ids: &BTreeSet<u32>,
    oracle: &dyn ReasoningOracle,
    ctx: &OracleContext<'_>,
) -> StageRecord {
    let sub = restrict(som, ids);
    let result = if stage == Stage::Combined {
        oracle.pick_target(&sub, ctx)
    } else {
        oracle.verify_stage(&sub, stage, ctx)
    };
    match result {
        Ok(map) => StageRecord {
            stage,
            verdicts: map.covering(ids),
            error: None,
        },
        Err(e) => StageRecord {
            stage,
            verdicts: StageVerdictMap::all(ids.iter().copied(), StageOutcome::Pending, "stage error"),
            error: Some(e.to_string()),
        },
    }
}

/// Survivor nearest (in pixels) to the projected boundary-landmark centroid;
/// lowest id on ties or when there is no boundary.
fn break_tie(survivors: &[u32], som: &SomRepresentation, ctx: &OracleContext<'_>) -> u32 {
    let anchor: Option<PixelPoint> = ctx
        .episode
        .constraints
        .boundary_landmark
        .as_deref()
        .and_then(|b| ctx.episode.landmark(b))
        .and_then(|l| project_world(l.centroid, &ctx.pose, &ctx.scene.camera).ok());
    let Some(anchor) = anchor else {
        return survivors[0];
    };
    let mut best = survivors[0];
    let mut best_d = f64::INFINITY;
    for &id in survivors {
        let d = som.mapping[&id].centroid.distance(&anchor);
        if d < best_d {
            best = id;
            best_d = d;
        }
    }
    best
}

fn conclude(
    stage_log: Vec<StageRecord>,
    survivors: Vec<u32>,
    som: &SomRepresentation,
    ctx: &OracleContext<'_>,
    oracle_guidance: Option<String>,
) -> Verdict {
    let pending: BTreeSet<u32> = stage_log
        .iter()
        .flat_map(|r| r.verdicts.ids_with(StageOutcome::Pending))
        .collect();
    let outcome = if !survivors.is_empty() {
        Outcome::Confirmed {
            id: break_tie(&survivors, som, ctx),
        }
    } else if !pending.is_empty() {
        Outcome::Inconclusive
    } else {
        Outcome::RejectedAll
    };
    let guidance = match outcome {
        Outcome::Confirmed { .. } => None,
        _ => {
            let failed_at = |s: Stage| {
                stage_log
                    .iter()
                    .any(|r| r.stage == s && r.verdicts.ids_with(StageOutcome::Fail).next().is_some())
            };
            let evidence = GuidanceEvidence {
                rejected_ids: stage_log
                    .iter()
                    .flat_map(|r| r.verdicts.ids_with(StageOutcome::Fail))
                    .collect(),
                topology_failed: failed_at(Stage::Topology),
                geographic_failed: failed_at(Stage::Geographic),
            };
            Some(oracle_guidance.unwrap_or_else(|| propose_guidance(&evidence, &ctx.episode.constraints)))
        }
    };
    Verdict {
        outcome,
        guidance,
        pending_ids: pending.into_iter().collect(),
        stage_log,
    }
}

fn empty_verdict(ctx: &OracleContext<'_>) -> Verdict {
    Verdict {
        outcome: Outcome::Inconclusive,
        guidance: Some(base_prompt(&ctx.episode.constraints)),
        pending_ids: Vec::new(),
        stage_log: Vec::new(),
    }
}

/// Staged pipeline with short-circuiting. Oracle errors make the affected
/// stage all-pending rather than aborting.
pub fn verify(som: &SomRepresentation, oracle: &dyn ReasoningOracle, ctx: &OracleContext<'_>) -> Verdict {
    if som.mapping.is_empty() {
        return empty_verdict(ctx);
    }
    let mut log = Vec::new();
    let mut ids: BTreeSet<u32> = som.ids().collect();
    for stage in [Stage::Literal, Stage::Topology, Stage::Geographic] {
        if ids.is_empty() {
            break;
        }
        let record = run_stage(som, stage, &ids, oracle, ctx);
        ids = record.verdicts.ids_with(StageOutcome::Pass).collect();
        log.push(record);
    }
    let guidance = log.iter().rev().find_map(|r| r.verdicts.guidance.clone());
    conclude(log, ids.into_iter().collect(), som, ctx, guidance)
}

/// Single free-pick call in place of the staged pipeline.
pub fn verify_unstructured(som: &SomRepresentation, oracle: &dyn ReasoningOracle, ctx: &OracleContext<'_>) -> Verdict {
    if som.mapping.is_empty() {
        return empty_verdict(ctx);
    }
    let ids: BTreeSet<u32> = som.ids().collect();
    let record = run_stage(som, Stage::Combined, &ids, oracle, ctx);
    let survivors: Vec<u32> = record.verdicts.ids_with(StageOutcome::Pass).take(1).collect();
    let guidance = record.verdicts.guidance.clone();
    conclude(vec![record], survivors, som, ctx, guidance)
}

/// Turns a fused detect-and-verify reply into numbered marks and a verdict.
pub fn verdict_from_fused(
    image: &Image,
    prompt: &str,
    fused: FusedResponse,
    ctx: &OracleContext<'_>,
) -> (SomRepresentation, Verdict) {
    let numbered = assign_ids(fused.detections, image.width(), image.height());
    let verdicts = numbered.iter().map(|(c, o)| (c.id, *o)).collect();
    let som = som_from_candidates(
        image,
        numbered.into_iter().map(|(c, _)| c).collect(),
        prompt,
        ctx.annotated,
    );
    if som.mapping.is_empty() {
        return (som, empty_verdict(ctx));
    }
    let record = StageRecord {
        stage: Stage::Combined,
        verdicts: StageVerdictMap {
            verdicts,
            rationale: fused.rationale,
            guidance: fused.guidance.clone(),
        },
        error: None,
    };
    let survivors: Vec<u32> = record.verdicts.ids_with(StageOutcome::Pass).collect();
    let verdict = conclude(vec![record], survivors, &som, ctx, fused.guidance);
    (som, verdict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::PixelRect;
    use crate::oracle::{CandidateSource, Detection, OracleError};
    use crate::perception::build_som;
    use crate::scene::{load_episode, Episode, Pose, Scene};
    use std::collections::BTreeMap;
    use std::sync::Mutex;

    /// Oracle answering from fixed per-stage tables and logging the ids it
    /// was asked about.
    type Table = Result<Vec<(u32, StageOutcome)>, ()>;

    struct TableOracle {
        tables: BTreeMap<&'static str, Table>,
        asked: Mutex<Vec<(Stage, Vec<u32>)>>,
    }

    impl TableOracle {
        fn new(tables: &[(&'static str, Table)]) -> Self {
            Self {
                tables: tables.iter().cloned().collect(),
                asked: Mutex::new(Vec::new()),
            }
        }
    }

    impl ReasoningOracle for TableOracle {
        fn detect(&self, _: &Image, _: &str, _: &OracleContext<'_>) -> Result<Vec<Detection>, OracleError> {
            Ok(Vec::new())
        }

        fn verify_stage(
            &self,
            som: &SomRepresentation,
            stage: Stage,
            _: &OracleContext<'_>,
        ) -> Result<StageVerdictMap, OracleError> {
            self.asked.lock().unwrap().push((stage, som.ids().collect()));
            match &self.tables[stage.to_string().as_str()] {
                Ok(rows) => Ok(StageVerdictMap {
                    verdicts: rows.iter().copied().collect(),
                    rationale: String::new(),
                    guidance: None,
                }),
                Err(()) => Err(OracleError::Parse("garbled".into())),
            }
        }

        fn pick_target(
            &self,
            som: &SomRepresentation,
            ctx: &OracleContext<'_>,
        ) -> Result<StageVerdictMap, OracleError> {
            self.verify_stage(som, Stage::Combined, ctx)
        }

        fn detect_and_verify(&self, _: &Image, _: &str, _: &OracleContext<'_>) -> Result<FusedResponse, OracleError> {
            Err(OracleError::Parse("unused".into()))
        }
    }

    fn episode() -> (Episode, Scene) {
        let mut d = crate::scene::tests::minimal_doc();
        d["constraints"]["relations"] = serde_json::json!([{"kind": "near", "ref": "Lot"}]);
        load_episode(d.to_string().as_bytes()).unwrap()
    }

    fn som(n: usize) -> SomRepresentation {
        let img = Image::new(256, 256, [128; 3]).unwrap();
        let dets = (0..n)
            .map(|i| Detection {
                label: "red car".into(),
                bbox: PixelRect::around(PixelPoint::new(40.0 + 60.0 * i as f64, 128.0), 5.0),
                centroid: None,
                source: CandidateSource::Unknown,
            })
            .collect();
        build_som(&img, dets, "focus on red car", true)
    }

    fn ctx<'a>(e: &'a Episode, s: &'a Scene) -> OracleContext<'a> {
        OracleContext {
            episode: e,
            scene: s,
            pose: Pose::new(0.0, 0.0, 50.0, 0.0),
            annotated: true,
        }
    }

    use StageOutcome::{Fail, Pass, Pending};

    #[test]
    fn single_survivor_confirmed() {
        let (e, s) = episode();
        let o = TableOracle::new(&[
            ("literal", Ok(vec![(1, Pass)])),
            ("topology", Ok(vec![(1, Pass)])),
            ("geographic", Ok(vec![(1, Pass)])),
        ]);
        let v = verify(&som(1), &o, &ctx(&e, &s));
        assert_eq!(v.outcome, Outcome::Confirmed { id: 1 });
        assert_eq!(v.guidance, None);
        assert_eq!(v.stage_log.len(), 3);
    }

    #[test]
    fn short_circuits_failed_candidates() {
        let (e, s) = episode();
        let o = TableOracle::new(&[
            ("literal", Ok(vec![(1, Fail), (2, Pass), (3, Pass)])),
            ("topology", Ok(vec![(2, Fail), (3, Pass)])),
            ("geographic", Ok(vec![(3, Pass)])),
        ]);
        let v = verify(&som(3), &o, &ctx(&e, &s));
        assert_eq!(v.outcome, Outcome::Confirmed { id: 3 });
        let asked = o.asked.lock().unwrap().clone();
        assert_eq!(
            asked,
            vec![
                (Stage::Literal, vec![1, 2, 3]),
                (Stage::Topology, vec![2, 3]),
                (Stage::Geographic, vec![3]),
            ]
        );
    }

    #[test]
    fn rejected_all_carries_topology_guidance() {
        let (e, s) = episode();
        let o = TableOracle::new(&[
            ("literal", Ok(vec![(1, Pass)])),
            ("topology", Ok(vec![(1, Fail)])),
            ("geographic", Ok(vec![])),
        ]);
        let v = verify(&som(1), &o, &ctx(&e, &s));
        assert_eq!(v.outcome, Outcome::RejectedAll);
        assert_eq!(
            v.guidance.as_deref(),
            Some("focus on red car near the Lot; exclude marks 1")
        );
        assert_eq!(v.stage_log.len(), 2);
    }

    #[test]
    fn stage_error_degrades_to_pending() {
        let (e, s) = episode();
        let o = TableOracle::new(&[
            ("literal", Ok(vec![(1, Pass), (2, Fail)])),
            ("topology", Err(())),
            ("geographic", Ok(vec![])),
        ]);
        let v = verify(&som(2), &o, &ctx(&e, &s));
        assert_eq!(v.outcome, Outcome::Inconclusive);
        assert_eq!(v.pending_ids, vec![1]);
        assert!(v.stage(Stage::Topology).unwrap().error.is_some());
        assert!(!v.guidance.unwrap().is_empty());
    }

    #[test]
    fn missing_ids_become_pending() {
        let (e, s) = episode();
        let o = TableOracle::new(&[("literal", Ok(vec![(1, Fail)]))]);
        let v = verify(&som(2), &o, &ctx(&e, &s));
        assert_eq!(v.outcome, Outcome::Inconclusive);
        assert_eq!(v.pending_ids, vec![2]);
    }

    #[test]
    fn empty_som_is_inconclusive_with_base_prompt() {
        let (e, s) = episode();
        let o = TableOracle::new(&[]);
        let v = verify(&som(0), &o, &ctx(&e, &s));
        assert_eq!(v.outcome, Outcome::Inconclusive);
        assert_eq!(v.guidance.as_deref(), Some("focus on red car"));
    }

    #[test]
    fn multi_survivor_tie_break_prefers_boundary_anchor() {
        let (e, s) = episode();
        // The Lot centroid (0, 0) projects to the principal point (128, 128);
        // marks sit at u = 40, 100, 160.
        let all = vec![(1, Pass), (2, Pass), (3, Pass)];
        let o = TableOracle::new(&[
            ("literal", Ok(all.clone())),
            ("topology", Ok(all.clone())),
            ("geographic", Ok(all)),
        ]);
        let v = verify(&som(3), &o, &ctx(&e, &s));
        // |100 - 128| = 28 < |160 - 128| = 32
        assert_eq!(v.outcome, Outcome::Confirmed { id: 2 });
        let mut no_boundary = e.clone();
        no_boundary.constraints.boundary_landmark = None;
        let v = verify(&som(3), &o, &ctx(&no_boundary, &s));
        assert_eq!(v.outcome, Outcome::Confirmed { id: 1 });
    }

    #[test]
    fn confirmed_passed_every_stage() {
        let (e, s) = episode();
        let o = TableOracle::new(&[
            ("literal", Ok(vec![(1, Pass), (2, Pending)])),
            ("topology", Ok(vec![(1, Pass)])),
            ("geographic", Ok(vec![(1, Pass)])),
        ]);
        let v = verify(&som(2), &o, &ctx(&e, &s));
        let id = v.confirmed_id().unwrap();
        for r in &v.stage_log {
            assert_eq!(r.verdicts.verdicts[&id], Pass);
        }
    }

    #[test]
    fn unstructured_and_fused() {
        let (e, s) = episode();
        let o = TableOracle::new(&[("combined", Ok(vec![(1, Fail), (2, Pass)]))]);
        let v = verify_unstructured(&som(2), &o, &ctx(&e, &s));
        assert_eq!(v.outcome, Outcome::Confirmed { id: 2 });

        let img = Image::new(256, 256, [128; 3]).unwrap();
        let det = |u: f64| Detection {
            label: "red car".into(),
            bbox: PixelRect::around(PixelPoint::new(u, 100.0), 4.0),
            centroid: None,
            source: CandidateSource::Unknown,
        };
        let fused = FusedResponse {
            detections: vec![(det(200.0), Fail), (det(20.0), Fail)],
            rationale: String::new(),
            guidance: None,
        };
        let (som, v) = verdict_from_fused(&img, "p", fused, &ctx(&e, &s));
        assert_eq!(som.mapping.len(), 2);
        assert_eq!(v.outcome, Outcome::RejectedAll);
        assert!(v.guidance.unwrap().ends_with("exclude marks 1, 2"));
    }
}
