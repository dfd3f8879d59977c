use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    relation_holds, CandidateSource, Detection, FusedResponse, OracleContext, OracleError, ReasoningOracle,
    RelationKind, RelationSettings, Stage, StageOutcome, StageVerdictMap,
};
use crate::executor::{in_frame, project_world, unproject};
use crate::geometry::Point2;
use crate::image::{Image, PixelPoint, PixelRect};
use crate::perception::{build_som, Candidate, SomRepresentation};
use crate::scene::{LandmarkKind, Pose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptedConfig {
    pub detect_recall: f64,
    pub decoy_rate: f64,
    pub seed: u64,
    /// Above this height (m over ground) unbacked regions are too small to
    /// judge and come back `pending` at the literal stage.
    pub detail_height: f64,
    pub relation: RelationSettings,
    /// Decoy slots per detection call, each filled with `decoy_rate`.
    pub max_decoys: u32,
    pub decoy_extent_m: f64,
}

impl Default for ScriptedConfig {
    fn default() -> Self {
        Self {
            detect_recall: 1.0,
            decoy_rate: 0.0,
            seed: 0,
            detail_height: 40.0,
            relation: RelationSettings::default(),
            max_decoys: 3,
            decoy_extent_m: 2.5,
        }
    }
}

impl ScriptedConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        for (name, v) in [("detect_recall", self.detect_recall), ("decoy_rate", self.decoy_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(OracleError::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.decoy_extent_m.is_nan() || self.decoy_extent_m <= 0.0 || !self.detail_height.is_finite() {
            return Err(OracleError::Config(
                "decoy_extent_m and detail_height must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Answers from scene ground truth. Every call is a pure function of its
/// inputs and the configured seed.
#[derive(Debug, Clone, Default)]
pub struct ScriptedOracle {
    config: ScriptedConfig,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv(mut h: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn focus_text(prompt: &str) -> String {
    prompt.split(';').next().unwrap_or("").to_lowercase()
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric() && c != '-')
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn mentions(tokens: &[String], word: &str) -> bool {
    let w = word.to_lowercase();
    let plural = format!("{w}s");
    tokens.iter().any(|t| *t == w || *t == plural)
}

impl ScriptedOracle {
    pub fn new(config: ScriptedConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &ScriptedConfig {
        &self.config
    }

    fn rng(&self, pose: &Pose, prompt: &str, salt: &str) -> ChaCha8Rng {
        let mut h = fnv(FNV_OFFSET, &self.config.seed.to_le_bytes());
        for v in [pose.x, pose.y, pose.z, pose.theta] {
            h = fnv(h, &v.to_bits().to_le_bytes());
        }
        h = fnv(h, prompt.as_bytes());
        h = fnv(h, salt.as_bytes());
        ChaCha8Rng::seed_from_u64(h)
    }

    fn ground_point(&self, c: &Candidate, ctx: &OracleContext<'_>) -> Option<Point2> {
        unproject(c.centroid, &ctx.pose, &ctx.scene.camera).ok()
    }

    fn extent_of(&self, c: &Candidate, ctx: &OracleContext<'_>) -> f64 {
        match &c.source {
            CandidateSource::Object { id } => ctx.scene.object(id).map_or(0.0, |o| o.extent),
            CandidateSource::Landmark { .. } => 0.0,
            CandidateSource::Unknown => self.config.decoy_extent_m,
        }
    }

    fn literal(&self, c: &Candidate, ctx: &OracleContext<'_>) -> StageOutcome {
        let constraints = &ctx.episode.constraints;
        if !ctx.annotated {
            // Without marks only the region's label is available.
            let t = tokens(&c.label);
            let ok = mentions(&t, &constraints.target_class) && constraints.attributes.iter().all(|a| mentions(&t, a));
            return if ok { StageOutcome::Pass } else { StageOutcome::Fail };
        }
        match &c.source {
            CandidateSource::Object { id } => match ctx.scene.object(id) {
                Some(o) if o.matches(constraints) => StageOutcome::Pass,
                _ => StageOutcome::Fail,
            },
            CandidateSource::Landmark { .. } => StageOutcome::Fail,
            CandidateSource::Unknown => {
                if ctx.pose.z - ctx.scene.camera.z_ground > self.config.detail_height {
                    StageOutcome::Pending
                } else {
                    StageOutcome::Fail
                }
            }
        }
    }

    fn topology(&self, c: &Candidate, ctx: &OracleContext<'_>) -> StageOutcome {
        let camera = &ctx.scene.camera;
        let ppm = camera.pixels_per_meter(ctx.pose.z);
        let margin = self.config.relation.margin_m * ppm;
        let near = self.config.relation.near_radius_m * ppm;
        let mut pending = false;
        for rel in &ctx.episode.constraints.relations {
            let holds = if rel.kind == RelationKind::Inside {
                let Some(p) = self.ground_point(c, ctx) else {
                    pending = true;
                    continue;
                };
                if let Some(l) = ctx.scene.landmark(&rel.reference) {
                    Some(l.contour.contains(p))
                } else {
                    ctx.scene
                        .object(&rel.reference)
                        .map(|o| p.distance(&o.position) <= o.extent)
                }
            } else {
                ctx.scene
                    .reference_point(&rel.reference)
                    .and_then(|r| project_world(r, &ctx.pose, camera).ok())
                    .filter(|px| in_frame(*px, camera))
                    .map(|px| relation_holds(c.centroid, px, rel.kind, margin, near))
            };
            match holds {
                Some(false) => return StageOutcome::Fail,
                Some(true) => {}
                None => pending = true,
            }
        }
        if pending {
            StageOutcome::Pending
        } else {
            StageOutcome::Pass
        }
    }

    fn geographic(&self, c: &Candidate, ctx: &OracleContext<'_>) -> StageOutcome {
        let Some(label) = ctx.episode.constraints.boundary_landmark.as_deref() else {
            return StageOutcome::Pass;
        };
        let (Some(boundary), Some(p)) = (ctx.scene.landmark(label), self.ground_point(c, ctx)) else {
            return StageOutcome::Pending;
        };
        let inside = match boundary.kind {
            LandmarkKind::Street => boundary.contour.bounding_box().distance_to(p) <= 2.0 * self.extent_of(c, ctx),
            LandmarkKind::Area => boundary.contour.contains(p),
        };
        if inside {
            StageOutcome::Pass
        } else {
            StageOutcome::Fail
        }
    }

    fn stage_outcome(&self, c: &Candidate, stage: Stage, ctx: &OracleContext<'_>) -> StageOutcome {
        match stage {
            Stage::Literal => self.literal(c, ctx),
            Stage::Topology => self.topology(c, ctx),
            Stage::Geographic => self.geographic(c, ctx),
            Stage::Combined => combine([self.literal(c, ctx), self.topology(c, ctx), self.geographic(c, ctx)]),
        }
    }
}

fn combine(outcomes: [StageOutcome; 3]) -> StageOutcome {
    if outcomes.contains(&StageOutcome::Fail) {
        StageOutcome::Fail
    } else if outcomes.contains(&StageOutcome::Pending) {
        StageOutcome::Pending
    } else {
        StageOutcome::Pass
    }
}

impl ReasoningOracle for ScriptedOracle {
    fn detect(&self, _image: &Image, prompt: &str, ctx: &OracleContext<'_>) -> Result<Vec<Detection>, OracleError> {
        let scene = ctx.scene;
        let camera = &scene.camera;
        let ppm = camera.pixels_per_meter(ctx.pose.z);
        let focus = focus_text(prompt);
        let words = tokens(&focus);
        let mut rng = self.rng(&ctx.pose, prompt, "detect");
        let mut out = Vec::new();

        for o in &scene.objects {
            if !mentions(&words, &o.class) {
                continue;
            }
            let Ok(center) = project_world(o.position, &ctx.pose, camera) else {
                continue;
            };
            if !in_frame(center, camera) {
                continue;
            }
            // One draw per visible match keeps the stream aligned across recalls.
            let keep = rng.gen::<f64>() < self.config.detect_recall;
            if !keep {
                continue;
            }
            let Some(bbox) = PixelRect::around(center, o.extent * ppm).clip(camera.width, camera.height) else {
                continue;
            };
            out.push(Detection {
                label: o.label(),
                bbox,
                centroid: Some(center),
                source: CandidateSource::Object { id: o.id.clone() },
            });
        }

        for l in &scene.landmarks {
            if !focus.contains(&l.label.to_lowercase()) {
                continue;
            }
            let projected: Option<Vec<PixelPoint>> = l
                .contour
                .vertices()
                .iter()
                .map(|v| project_world(*v, &ctx.pose, camera).ok())
                .collect();
            let Some(projected) = projected else { continue };
            let rect = PixelRect {
                x0: projected.iter().map(|p| p.u).fold(f64::INFINITY, f64::min),
                y0: projected.iter().map(|p| p.v).fold(f64::INFINITY, f64::min),
                x1: projected.iter().map(|p| p.u).fold(f64::NEG_INFINITY, f64::max),
                y1: projected.iter().map(|p| p.v).fold(f64::NEG_INFINITY, f64::max),
            };
            let Some(bbox) = rect.clip(camera.width, camera.height) else {
                continue;
            };
            out.push(Detection {
                label: l.label.clone(),
                bbox,
                centroid: project_world(l.centroid, &ctx.pose, camera).ok(),
                source: CandidateSource::Landmark { label: l.label.clone() },
            });
        }

        let label = ctx.episode.constraints.description();
        for _ in 0..self.config.max_decoys {
            if rng.gen::<f64>() >= self.config.decoy_rate {
                continue;
            }
            let center = PixelPoint::new(
                rng.gen::<f64>() * camera.width as f64,
                rng.gen::<f64>() * camera.height as f64,
            );
            let Some(bbox) =
                PixelRect::around(center, self.config.decoy_extent_m * ppm).clip(camera.width, camera.height)
            else {
                continue;
            };
            out.push(Detection {
                label: label.clone(),
                bbox,
                centroid: Some(center),
                source: CandidateSource::Unknown,
            });
        }
        Ok(out)
    }

    fn verify_stage(
        &self,
        som: &SomRepresentation,
        stage: Stage,
        ctx: &OracleContext<'_>,
    ) -> Result<StageVerdictMap, OracleError> {
        let verdicts: BTreeMap<u32, StageOutcome> = som
            .candidates()
            .map(|c| (c.id, self.stage_outcome(c, stage, ctx)))
            .collect();
        Ok(StageVerdictMap {
            verdicts,
            rationale: format!("scripted {stage} check"),
            guidance: None,
        })
    }

    fn pick_target(&self, som: &SomRepresentation, ctx: &OracleContext<'_>) -> Result<StageVerdictMap, OracleError> {
        let class = &ctx.episode.constraints.target_class;
        let pick = som
            .candidates()
            .find(|c| match (&c.source, ctx.annotated) {
                (CandidateSource::Object { id }, true) => ctx.scene.object(id).is_some_and(|o| &o.class == class),
                _ => mentions(&tokens(&c.label), class),
            })
            .map(|c| c.id);
        let verdicts = som
            .ids()
            .map(|id| {
                let o = if Some(id) == pick {
                    StageOutcome::Pass
                } else {
                    StageOutcome::Fail
                };
                (id, o)
            })
            .collect();
        Ok(StageVerdictMap {
            verdicts,
            rationale: "scripted free pick".into(),
            guidance: None,
        })
    }

    fn detect_and_verify(
        &self,
        image: &Image,
        prompt: &str,
        ctx: &OracleContext<'_>,
    ) -> Result<FusedResponse, OracleError> {
        let detections = self.detect(image, prompt, ctx)?;
        let som = build_som(image, detections, prompt, false);
        let detections = som
            .candidates()
            .map(|c| {
                let stages = [Stage::Literal, Stage::Topology, Stage::Geographic];
                let outcome = combine(stages.map(|s| self.stage_outcome(c, s, ctx)));
                let d = Detection {
                    label: c.label.clone(),
                    bbox: c.bbox,
                    centroid: Some(c.centroid),
                    source: c.source.clone(),
                };
                (d, outcome)
            })
            .collect();
        Ok(FusedResponse {
            detections,
            rationale: "scripted fused check".into(),
            guidance: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{load_episode, Episode, Scene};
    use serde_json::json;

    fn depot_scene() -> (Episode, Scene) {
        let doc = json!({
            "instruction": "Find the red car behind the Tram Depot in the Parking Lot.",
            "constraints": {
                "target_class": "car",
                "attributes": ["red"],
                "relations": [{"kind": "behind", "ref": "Tram Depot"}],
                "boundary_landmark": "Parking Lot",
                "instruction_landmarks": ["Tram Depot"]
            },
            "start": {"x": 0.0, "y": 0.0, "z": 50.0, "theta": 0.0},
            "landmarks": [
                {"label": "Tram Depot", "centroid": {"x": 0.0, "y": 0.0},
                 "contour": [[-15.0, -10.0], [15.0, -10.0], [15.0, 10.0], [-15.0, 10.0]]},
                {"label": "Parking Lot", "centroid": {"x": 0.0, "y": -30.0},
                 "contour": [[-20.0, -45.0], [20.0, -45.0], [20.0, -15.0], [-20.0, -15.0]]}
            ],
            "objects": [
                {"id": "decoy", "class": "car", "attributes": ["red"],
                 "position": {"x": 5.0, "y": 25.0}, "extent": 2.5},
                {"id": "goal", "class": "car", "attributes": ["red"],
                 "position": {"x": -5.0, "y": -30.0}, "extent": 2.5},
                {"id": "blue", "class": "car", "attributes": ["blue"],
                 "position": {"x": 10.0, "y": -25.0}, "extent": 2.5}
            ],
            "target": {"x": -5.0, "y": -30.0},
            "camera": {"width": 200, "height": 200}
        });
        load_episode(doc.to_string().as_bytes()).unwrap()
    }

    fn ctx<'a>(e: &'a Episode, s: &'a Scene, z: f64, annotated: bool) -> OracleContext<'a> {
        OracleContext {
            episode: e,
            scene: s,
            pose: Pose::new(0.0, 0.0, z, 0.0),
            annotated,
        }
    }

    fn blank(s: &Scene) -> Image {
        Image::new(s.camera.width, s.camera.height, [128; 3]).unwrap()
    }

    fn som_for(o: &ScriptedOracle, c: &OracleContext<'_>, prompt: &str) -> SomRepresentation {
        let img = blank(c.scene);
        build_som(&img, o.detect(&img, prompt, c).unwrap(), prompt, c.annotated)
    }

    fn outcome_of(m: &StageVerdictMap, som: &SomRepresentation, obj: &str) -> StageOutcome {
        let id = som
            .candidates()
            .find(|c| c.source == CandidateSource::Object { id: obj.into() })
            .unwrap()
            .id;
        m.verdicts[&id]
    }

    #[test]
    fn full_recall_returns_visible_matches() {
        let (e, s) = depot_scene();
        let o = ScriptedOracle::default();
        let dets = o
            .detect(&blank(&s), "focus on red car", &ctx(&e, &s, 50.0, true))
            .unwrap();
        assert_eq!(dets.len(), 3);
        // at z=20 the footprint is 40 m: only objects within 20 m per axis
        let near = o
            .detect(&blank(&s), "focus on red car", &ctx(&e, &s, 20.0, true))
            .unwrap();
        assert!(near.is_empty());
        let none = o
            .detect(&blank(&s), "focus on trucks", &ctx(&e, &s, 50.0, true))
            .unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn zero_recall_is_empty_and_seeded_is_reproducible() {
        let (e, s) = depot_scene();
        let zero = ScriptedOracle::new(ScriptedConfig {
            detect_recall: 0.0,
            ..Default::default()
        });
        assert!(zero
            .detect(&blank(&s), "focus on car", &ctx(&e, &s, 50.0, true))
            .unwrap()
            .is_empty());
        let half = ScriptedOracle::new(ScriptedConfig {
            detect_recall: 0.5,
            decoy_rate: 0.5,
            seed: 11,
            ..Default::default()
        });
        let c = ctx(&e, &s, 50.0, true);
        let a = half.detect(&blank(&s), "focus on car", &c).unwrap();
        let b = half.detect(&blank(&s), "focus on car", &c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn landmarks_join_when_named() {
        let (e, s) = depot_scene();
        let o = ScriptedOracle::default();
        let dets = o
            .detect(
                &blank(&s),
                "focus on red car behind the Tram Depot",
                &ctx(&e, &s, 50.0, true),
            )
            .unwrap();
        assert_eq!(dets.len(), 4);
        assert!(dets.iter().any(|d| d.source
            == CandidateSource::Landmark {
                label: "Tram Depot".into()
            }));
    }

    #[test]
    fn staged_verdicts_on_depot_scene() {
        let (e, s) = depot_scene();
        let o = ScriptedOracle::default();
        let c = ctx(&e, &s, 50.0, true);
        let som = som_for(&o, &c, "focus on red car");
        let lit = o.verify_stage(&som, Stage::Literal, &c).unwrap();
        assert_eq!(outcome_of(&lit, &som, "decoy"), StageOutcome::Pass);
        assert_eq!(outcome_of(&lit, &som, "goal"), StageOutcome::Pass);
        assert_eq!(outcome_of(&lit, &som, "blue"), StageOutcome::Fail);
        let topo = o.verify_stage(&som, Stage::Topology, &c).unwrap();
        assert_eq!(outcome_of(&topo, &som, "decoy"), StageOutcome::Fail);
        assert_eq!(outcome_of(&topo, &som, "goal"), StageOutcome::Pass);
        let geo = o.verify_stage(&som, Stage::Geographic, &c).unwrap();
        assert_eq!(outcome_of(&geo, &som, "decoy"), StageOutcome::Fail);
        assert_eq!(outcome_of(&geo, &som, "goal"), StageOutcome::Pass);
        assert_eq!(lit.verdicts.len(), som.mapping.len());
    }

    #[test]
    fn geographic_matches_polygon_oracle() {
        let (e, s) = depot_scene();
        let o = ScriptedOracle::default();
        let c = ctx(&e, &s, 50.0, true);
        let lot = s.landmark("Parking Lot").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let centroid = PixelPoint::new(rng.gen_range(0.0..200.0), rng.gen_range(0.0..200.0));
            let cand = Candidate {
                id: 1,
                label: "red car".into(),
                bbox: PixelRect::around(centroid, 1.0),
                centroid,
                source: CandidateSource::Unknown,
            };
            let p = unproject(centroid, &c.pose, &s.camera).unwrap();
            let expected = if crate::geometry::point_in_polygon(p, &lot.contour) {
                StageOutcome::Pass
            } else {
                StageOutcome::Fail
            };
            assert_eq!(o.geographic(&cand, &c), expected);
        }
    }

    #[test]
    fn topology_pending_when_reference_off_frame() {
        let (e, s) = depot_scene();
        let o = ScriptedOracle::default();
        let mut c = ctx(&e, &s, 50.0, true);
        c.pose = Pose::new(0.0, -80.0, 50.0, 0.0);
        let cand = Candidate {
            id: 1,
            label: "red car".into(),
            bbox: PixelRect::around(PixelPoint::new(100.0, 100.0), 2.0),
            centroid: PixelPoint::new(100.0, 100.0),
            source: CandidateSource::Unknown,
        };
        assert_eq!(o.topology(&cand, &c), StageOutcome::Pending);
    }

    #[test]
    fn decoys_pending_high_fail_low_and_pass_unmarked() {
        let (e, s) = depot_scene();
        let o = ScriptedOracle::default();
        let cand = Candidate {
            id: 1,
            label: "red car".into(),
            bbox: PixelRect::around(PixelPoint::new(100.0, 100.0), 2.0),
            centroid: PixelPoint::new(100.0, 100.0),
            source: CandidateSource::Unknown,
        };
        assert_eq!(o.literal(&cand, &ctx(&e, &s, 50.0, true)), StageOutcome::Pending);
        assert_eq!(o.literal(&cand, &ctx(&e, &s, 40.0, true)), StageOutcome::Fail);
        assert_eq!(o.literal(&cand, &ctx(&e, &s, 50.0, false)), StageOutcome::Pass);
    }

    #[test]
    fn fused_and_free_pick() {
        let (e, s) = depot_scene();
        let o = ScriptedOracle::default();
        let c = ctx(&e, &s, 50.0, true);
        let fused = o.detect_and_verify(&blank(&s), "focus on red car", &c).unwrap();
        let passing: Vec<_> = fused
            .detections
            .iter()
            .filter(|(_, v)| *v == StageOutcome::Pass)
            .map(|(d, _)| d.source.clone())
            .collect();
        assert_eq!(passing, vec![CandidateSource::Object { id: "goal".into() }]);
        let som = som_for(&o, &c, "focus on red car");
        let pick = o.pick_target(&som, &c).unwrap();
        assert_eq!(pick.ids_with(StageOutcome::Pass).collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn config_validation() {
        let bad = ScriptedConfig {
            decoy_rate: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(ScriptedConfig::default().validate().is_ok());
    }
}
