//! Episode data model and JSON ingestion.
//!
//! An episode document carries the free-text instruction, a structured
//! constraint set mirroring it, the start pose, landmark priors, the
//! ground-truth scene objects and the camera. [`load_episode`] validates
//! everything and resolves every label reference before returning.

use std::collections::HashSet;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::executor::project_world;
use crate::geometry::{Point2, Polygon, Rect};
use crate::oracle::{relation_holds, RelationKind, RelationSettings};

pub const DEFAULT_SUCCESS_RADIUS: f64 = 20.0;
pub const DEFAULT_STEP_BUDGET: u32 = 60;
pub const DEFAULT_ALPHA: f64 = 2.0;
pub const DEFAULT_OVERLAP: f64 = 0.3;
pub const DEFAULT_DELTA_Z: f64 = 10.0;
/// Margin added around all scene content to form the flyable bounds.
pub const BOUNDS_MARGIN: f64 = 500.0;
pub const DEFAULT_Z_MAX: f64 = 300.0;

/// UAV state. Heading is 0 toward north (+y) and grows clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            z,
            theta: normalize_angle(theta),
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LandmarkKind {
    #[default]
    Area,
    Street,
}

impl LandmarkKind {
    fn is_area(&self) -> bool {
        *self == LandmarkKind::Area
    }
}

/// A landmark prior: name, centroid and contour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkKnowledge {
    pub label: String,
    pub centroid: Point2,
    pub contour: Polygon,
    #[serde(default, skip_serializing_if = "LandmarkKind::is_area")]
    pub kind: LandmarkKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub kind: RelationKind,
    #[serde(rename = "ref")]
    pub reference: String,
}

/// Structured twin of the free-text instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub target_class: String,
    #[serde(default)]
    pub attributes: Vec<String>,
    #[serde(default)]
    pub relations: Vec<Relation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_landmark: Option<String>,
    #[serde(default)]
    pub instruction_landmarks: Vec<String>,
}

impl ConstraintSet {
    /// "red car" style description: attributes then class.
    pub fn description(&self) -> String {
        let mut words: Vec<&str> = self.attributes.iter().map(String::as_str).collect();
        words.push(&self.target_class);
        words.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: String,
    pub class: String,
    #[serde(default)]
    pub attributes: Vec<String>,
    pub position: Point2,
    pub extent: f64,
    #[serde(default, rename = "relations")]
    pub declared_relations: Vec<Relation>,
}

impl SceneObject {
    pub fn label(&self) -> String {
        let mut words: Vec<&str> = self.attributes.iter().map(String::as_str).collect();
        words.push(&self.class);
        words.join(" ")
    }

    pub fn matches(&self, constraints: &ConstraintSet) -> bool {
        self.class == constraints.target_class && constraints.attributes.iter().all(|a| self.attributes.contains(a))
    }
}

/// Nadir pinhole camera. The focal length is tied to the footprint factor
/// `alpha` so that the imaged ground width at height `h` is `h * alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub width: u32,
    pub height: u32,
    pub z_ground: f64,
    pub alpha: f64,
}

impl CameraModel {
    pub fn new(width: u32, height: u32, z_ground: f64, alpha: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("camera", "width and height must be positive"));
        }
        if alpha.is_nan() || alpha <= 0.0 {
            return Err(Error::param("alpha", "must be positive"));
        }
        if !z_ground.is_finite() {
            return Err(Error::param("camera.z_ground", "must be finite"));
        }
        Ok(Self {
            width,
            height,
            z_ground,
            alpha,
        })
    }

    pub fn focal(&self) -> f64 {
        self.width as f64 / self.alpha
    }

    pub fn principal(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    /// Pixels per meter on the ground at altitude `z`.
    pub fn pixels_per_meter(&self, z: f64) -> f64 {
        self.focal() / (z - self.z_ground)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: String,
    pub difficulty: Option<String>,
    pub instruction: String,
    pub constraints: ConstraintSet,
    pub start: Pose,
    pub priors: Vec<LandmarkKnowledge>,
    pub target: Point2,
    pub step_budget: u32,
    pub success_radius: f64,
}

impl Episode {
    pub fn landmark(&self, label: &str) -> Option<&LandmarkKnowledge> {
        self.priors.iter().find(|l| l.label == label)
    }
}

/// Tunables an episode document may override.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub alpha: f64,
    pub r: f64,
    pub delta_z: f64,
    pub z_max: f64,
}

/// Ground truth and environment for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub landmarks: Vec<LandmarkKnowledge>,
    pub objects: Vec<SceneObject>,
    pub camera: CameraModel,
    pub params: SceneParams,
    pub bounds: Rect,
}

impl Scene {
    pub fn landmark(&self, label: &str) -> Option<&LandmarkKnowledge> {
        self.landmarks.iter().find(|l| l.label == label)
    }

    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// World position of a relation reference: landmark centroid or object.
    pub fn reference_point(&self, reference: &str) -> Option<Point2> {
        self.landmark(reference)
            .map(|l| l.centroid)
            .or_else(|| self.object(reference).map(|o| o.position))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraDoc {
    width: u32,
    height: u32,
    #[serde(default)]
    z_ground: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta_z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    step_budget: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    z_max: Option<f64>,
}

/// On-disk episode layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    difficulty: Option<String>,
    instruction: String,
    constraints: ConstraintSet,
    start: Pose,
    target: Point2,
    landmarks: Vec<LandmarkKnowledge>,
    objects: Vec<SceneObject>,
    camera: CameraDoc,
    #[serde(default)]
    params: ParamsDoc,
}

impl<'de> Deserialize<'de> for Polygon {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let coords = Vec::<[f64; 2]>::deserialize(d)?;
        Polygon::from_xy(&coords).map_err(serde::de::Error::custom)
    }
}

/// Parses and validates an episode document.
pub fn load_episode(bytes: &[u8]) -> Result<(Episode, Scene)> {
    parse_document(bytes).and_then(from_document)
}

fn parse_document(bytes: &[u8]) -> Result<EpisodeDocument> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let doc: EpisodeDocument = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        Error::parse(path, e.into_inner().to_string())
    })?;
    Ok(doc)
}

/// Loads an episode file. A document without an `id` takes the file stem.
pub fn load_episode_file(path: impl AsRef<std::path::Path>) -> Result<(Episode, Scene)> {
    let path = path.as_ref();
    let mut doc = parse_document(&std::fs::read(path)?)?;
    if doc.id.is_none() {
        doc.id = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    }
    from_document(doc)
}

fn positive(name: &'static str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::param(name, format!("must be positive, got {v}")))
    }
}

fn from_document(doc: EpisodeDocument) -> Result<(Episode, Scene)> {
    if doc.instruction.trim().is_empty() {
        return Err(Error::parse("instruction", "must not be empty"));
    }
    if doc.landmarks.is_empty() {
        return Err(Error::parse("landmarks", "at least one landmark prior is required"));
    }
    let p = &doc.params;
    let alpha = positive("params.alpha", p.alpha.unwrap_or(DEFAULT_ALPHA))?;
    let r = p.r.unwrap_or(DEFAULT_OVERLAP);
    if !(0.0..1.0).contains(&r) {
        return Err(Error::param("params.r", format!("must lie in [0, 1), got {r}")));
    }
    let delta_z = positive("params.delta_z", p.delta_z.unwrap_or(DEFAULT_DELTA_Z))?;
    let epsilon = positive("params.epsilon", p.epsilon.unwrap_or(DEFAULT_SUCCESS_RADIUS))?;
    let z_max = positive("params.z_max", p.z_max.unwrap_or(DEFAULT_Z_MAX))?;
    let step_budget = p.step_budget.unwrap_or(DEFAULT_STEP_BUDGET);
    if step_budget == 0 {
        return Err(Error::param("params.step_budget", "must be at least 1"));
    }
    let camera = CameraModel::new(doc.camera.width, doc.camera.height, doc.camera.z_ground, alpha)
        .map_err(|e| Error::parse("camera", e.to_string()))?;

    let start = Pose::new(doc.start.x, doc.start.y, doc.start.z, doc.start.theta);
    if !(start.x.is_finite() && start.y.is_finite() && start.z.is_finite() && start.theta.is_finite()) {
        return Err(Error::parse("start", "coordinates must be finite"));
    }
    if start.z <= camera.z_ground {
        return Err(Error::parse("start.z", "must be above camera.z_ground"));
    }
    if start.z > z_max {
        return Err(Error::parse("start.z", "exceeds params.z_max"));
    }
    if !doc.target.is_finite() {
        return Err(Error::parse("target", "coordinates must be finite"));
    }

    let mut labels = HashSet::new();
    for (i, l) in doc.landmarks.iter().enumerate() {
        if l.label.trim().is_empty() {
            return Err(Error::parse(format!("landmarks[{i}].label"), "must not be empty"));
        }
        if !labels.insert(l.label.as_str()) {
            return Err(Error::parse(
                format!("landmarks[{i}].label"),
                format!("duplicate label `{}`", l.label),
            ));
        }
        if !l.contour.bounding_box().contains(l.centroid) {
            return Err(Error::parse(
                format!("landmarks[{i}].centroid"),
                "outside the contour's bounding box",
            ));
        }
    }
    let mut ids = HashSet::new();
    for (i, o) in doc.objects.iter().enumerate() {
        if !ids.insert(o.id.as_str()) || labels.contains(o.id.as_str()) {
            return Err(Error::parse(
                format!("objects[{i}].id"),
                format!("duplicate id `{}`", o.id),
            ));
        }
        if !(o.extent > 0.0 && o.extent.is_finite()) {
            return Err(Error::parse(format!("objects[{i}].extent"), "must be positive"));
        }
        if !o.position.is_finite() {
            return Err(Error::parse(format!("objects[{i}].position"), "must be finite"));
        }
    }

    let resolves = |label: &str| labels.contains(label) || ids.contains(label);
    let unknown = |path: String, label: &str| Error::UnknownReference {
        path,
        label: label.to_string(),
    };
    let c = &doc.constraints;
    if c.target_class.trim().is_empty() {
        return Err(Error::parse("constraints.target_class", "must not be empty"));
    }
    for (i, rel) in c.relations.iter().enumerate() {
        if !resolves(&rel.reference) {
            return Err(unknown(format!("constraints.relations[{i}].ref"), &rel.reference));
        }
    }
    if let Some(b) = &c.boundary_landmark {
        if !labels.contains(b.as_str()) {
            return Err(unknown("constraints.boundary_landmark".into(), b));
        }
    }
    for (i, l) in c.instruction_landmarks.iter().enumerate() {
        if !labels.contains(l.as_str()) {
            return Err(unknown(format!("constraints.instruction_landmarks[{i}]"), l));
        }
    }
    for (i, o) in doc.objects.iter().enumerate() {
        for (j, rel) in o.declared_relations.iter().enumerate() {
            if !resolves(&rel.reference) || rel.reference == o.id {
                return Err(unknown(format!("objects[{i}].relations[{j}].ref"), &rel.reference));
            }
        }
    }

    let content = doc
        .landmarks
        .iter()
        .flat_map(|l| l.contour.vertices().iter().copied())
        .chain(doc.objects.iter().map(|o| o.position))
        .chain([start.position(), doc.target]);
    let bounds = Rect::enclosing(content)
        .expect("at least one landmark")
        .expanded(BOUNDS_MARGIN);

    let episode = Episode {
        id: doc.id.unwrap_or_else(|| "episode".to_string()),
        difficulty: doc.difficulty,
        instruction: doc.instruction,
        constraints: doc.constraints,
        start,
        priors: doc.landmarks.clone(),
        target: doc.target,
        step_budget,
        success_radius: epsilon,
    };
    let scene = Scene {
        landmarks: doc.landmarks,
        objects: doc.objects,
        camera,
        params: SceneParams {
            alpha,
            r,
            delta_z,
            z_max,
        },
        bounds,
    };
    Ok((episode, scene))
}

/// Serializes an episode and its scene back into the document layout.
/// All tunables are written out explicitly.
pub fn serialize_episode(episode: &Episode, scene: &Scene) -> Result<Vec<u8>> {
    let doc = EpisodeDocument {
        id: Some(episode.id.clone()),
        difficulty: episode.difficulty.clone(),
        instruction: episode.instruction.clone(),
        constraints: episode.constraints.clone(),
        start: episode.start,
        target: episode.target,
        landmarks: episode.priors.clone(),
        objects: scene.objects.clone(),
        camera: CameraDoc {
            width: scene.camera.width,
            height: scene.camera.height,
            z_ground: scene.camera.z_ground,
        },
        params: ParamsDoc {
            alpha: Some(scene.params.alpha),
            r: Some(scene.params.r),
            delta_z: Some(scene.params.delta_z),
            step_budget: Some(episode.step_budget),
            epsilon: Some(episode.success_radius),
            z_max: Some(scene.params.z_max),
        },
    };
    Ok(serde_json::to_vec_pretty(&doc)?)
}

/// Evaluates a relation between a world point and a named reference in a
/// north-up view from directly above `point` at altitude `z`.
pub(crate) fn world_relation_holds(
    scene: &Scene,
    point: Point2,
    relation: &Relation,
    z: f64,
    settings: &RelationSettings,
) -> Option<bool> {
    if relation.kind == RelationKind::Inside {
        if let Some(l) = scene.landmark(&relation.reference) {
            return Some(l.contour.contains(point));
        }
        let o = scene.object(&relation.reference)?;
        return Some(point.distance(&o.position) <= o.extent);
    }
    let reference = scene.reference_point(&relation.reference)?;
    let view = Pose::new(point.x, point.y, z, 0.0);
    let a = project_world(point, &view, &scene.camera).ok()?;
    let b = project_world(reference, &view, &scene.camera).ok()?;
    let ppm = scene.camera.pixels_per_meter(z);
    Some(relation_holds(
        a,
        b,
        relation.kind,
        settings.margin_m * ppm,
        settings.near_radius_m * ppm,
    ))
}

/// Consistency warnings for a loaded scene. Never fails.
pub fn validate_scene(episode: &Episode, scene: &Scene) -> Vec<String> {
    let settings = RelationSettings::default();
    let z = episode.start.z;
    let mut warnings = Vec::new();

    let satisfies = |o: &SceneObject| {
        o.matches(&episode.constraints)
            && episode
                .constraints
                .relations
                .iter()
                .all(|rel| world_relation_holds(scene, o.position, rel, z, &settings).unwrap_or(false))
            && episode
                .constraints
                .boundary_landmark
                .as_deref()
                .and_then(|b| scene.landmark(b))
                .is_none_or(|b| b.contour.contains(o.position))
    };
    let matched = scene
        .objects
        .iter()
        .filter(|o| o.position.distance(&episode.target) <= episode.success_radius)
        .any(satisfies);
    if !matched {
        warnings.push(format!(
            "no object within {} m of the target satisfies all constraints",
            episode.success_radius
        ));
    }

    for o in &scene.objects {
        let covered = scene
            .landmarks
            .iter()
            .any(|l| l.contour.bounding_box().contains(o.position));
        if !covered {
            warnings.push(format!("object `{}` lies outside every landmark", o.id));
        }
        for rel in &o.declared_relations {
            if world_relation_holds(scene, o.position, rel, z, &settings) == Some(false) {
                warnings.push(format!(
                    "object `{}` is declared {} `{}` but the geometry disagrees",
                    o.id,
                    rel.kind.phrase(),
                    rel.reference
                ));
            }
        }
    }
    warnings
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use serde_json::json;

    pub(crate) fn minimal_doc() -> serde_json::Value {
        json!({
            "instruction": "the red car in the lot",
            "constraints": {
                "target_class": "car",
                "attributes": ["red"],
                "relations": [],
                "boundary_landmark": "Lot",
                "instruction_landmarks": ["Lot"]
            },
            "start": {"x": 0.0, "y": -100.0, "z": 50.0, "theta": 0.0},
            "target": {"x": 5.0, "y": 5.0},
            "landmarks": [
                {"label": "Lot", "centroid": {"x": 0.0, "y": 0.0},
                 "contour": [[-20.0, -20.0], [20.0, -20.0], [20.0, 20.0], [-20.0, 20.0]]}
            ],
            "objects": [
                {"id": "car1", "class": "car", "attributes": ["red"],
                 "position": {"x": 5.0, "y": 5.0}, "extent": 2.5}
            ],
            "camera": {"width": 256, "height": 256}
        })
    }

    fn load(v: &serde_json::Value) -> Result<(Episode, Scene)> {
        load_episode(&serde_json::to_vec(v).unwrap())
    }

    #[test]
    fn minimal_document_gets_defaults() {
        let (ep, scene) = load(&minimal_doc()).unwrap();
        assert_eq!(ep.success_radius, 20.0);
        assert_eq!(ep.step_budget, 60);
        assert_eq!(scene.params.alpha, 2.0);
        assert_eq!(scene.params.r, 0.3);
        assert_eq!(scene.params.delta_z, 10.0);
        assert_eq!(scene.camera.focal(), 128.0);
        assert_eq!(ep.priors.len(), 1);
        assert!(validate_scene(&ep, &scene).is_empty());
    }

    #[test]
    fn params_override_defaults() {
        let mut d = minimal_doc();
        d["params"] = json!({"epsilon": 10.0, "step_budget": 7, "alpha": 1.5});
        let (ep, scene) = load(&d).unwrap();
        assert_eq!(ep.success_radius, 10.0);
        assert_eq!(ep.step_budget, 7);
        assert_eq!(scene.camera.alpha, 1.5);
    }

    #[test]
    fn unknown_reference_is_rejected() {
        let mut d = minimal_doc();
        d["constraints"]["relations"] = json!([{"kind": "behind", "ref": "Nowhere"}]);
        match load(&d) {
            Err(Error::UnknownReference { path, label }) => {
                assert_eq!(path, "constraints.relations[0].ref");
                assert_eq!(label, "Nowhere");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(load(&d).unwrap_err().to_string().contains("unknown reference"));
    }

    #[test]
    fn schema_errors_name_the_field() {
        let mut d = minimal_doc();
        d["landmarks"][0]["contour"] = json!([[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]);
        let err = load(&d).unwrap_err().to_string();
        assert!(err.contains("landmarks[0].contour"), "{err}");

        let mut d = minimal_doc();
        d["start"]["z"] = json!("high");
        let err = load(&d).unwrap_err().to_string();
        assert!(err.contains("start.z"), "{err}");

        let mut d = minimal_doc();
        d["params"] = json!({"r": 1.0});
        assert!(load(&d).is_err());

        let mut d = minimal_doc();
        d["instruction"] = json!("  ");
        assert!(load(&d).is_err());

        let mut d = minimal_doc();
        d["landmarks"] = json!([]);
        assert!(load(&d).is_err());
    }

    #[test]
    fn heading_is_normalized() {
        let mut d = minimal_doc();
        d["start"]["theta"] = json!(-std::f64::consts::FRAC_PI_2);
        let (ep, _) = load(&d).unwrap();
        assert!((ep.start.theta - 1.5 * std::f64::consts::PI).abs() < 1e-12);
        assert_eq!(normalize_angle(TAU), 0.0);
    }

    #[test]
    fn round_trip_is_structurally_equal() {
        let mut d = minimal_doc();
        d["objects"][0]["relations"] = json!([{"kind": "inside", "ref": "Lot"}]);
        let (ep, scene) = load(&d).unwrap();
        let bytes = serialize_episode(&ep, &scene).unwrap();
        let (ep2, scene2) = load_episode(&bytes).unwrap();
        assert_eq!(ep, ep2);
        assert_eq!(scene, scene2);
        assert_eq!(bytes, serialize_episode(&ep2, &scene2).unwrap());
    }

    #[test]
    fn inconsistent_declared_relation_warns() {
        // car1 sits north of the lot centroid, i.e. in front of it in a
        // north-up view, yet is declared behind it
        let mut d = minimal_doc();
        d["objects"][0]["position"] = json!({"x": 0.0, "y": 15.0});
        d["objects"][0]["relations"] = json!([{"kind": "behind", "ref": "Lot"}]);
        d["target"] = json!({"x": 0.0, "y": 15.0});
        let (ep, scene) = load(&d).unwrap();
        let w = validate_scene(&ep, &scene);
        assert_eq!(w.len(), 1, "{w:?}");
        assert!(w[0].contains("behind"));

        d["objects"][0]["relations"] = json!([{"kind": "in-front-of", "ref": "Lot"}]);
        let (ep, scene) = load(&d).unwrap();
        assert!(validate_scene(&ep, &scene).is_empty());
    }

    #[test]
    fn unmatched_target_warns() {
        let mut d = minimal_doc();
        d["constraints"]["attributes"] = json!(["blue"]);
        let (ep, scene) = load(&d).unwrap();
        let w = validate_scene(&ep, &scene);
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("target"));
    }
}
