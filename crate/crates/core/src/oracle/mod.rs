//! Detection and verification backends.
//!
//! [`ReasoningOracle`] abstracts the vision-language model. Two backends
//! ship: [`ScriptedOracle`], a seeded stand-in answering from scene ground
//! truth and image-plane geometry, and [`RemoteOracle`], a client for
//! chat-completions style endpoints.

mod remote;
mod scripted;

pub use remote::{extract_fenced_json, RemoteConfig, RemoteOracle, API_KEY_ENV};
pub use scripted::{ScriptedConfig, ScriptedOracle};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{Image, PixelPoint, PixelRect};
use crate::perception::SomRepresentation;
use crate::scene::{ConstraintSet, Episode, Pose, Scene};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("endpoint returned HTTP {status} after {attempts} attempt(s)")]
    Status { status: u16, attempts: u32 },
    #[error("unparseable reply: {0}")]
    Parse(String),
    #[error("oracle misconfigured: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelationKind {
    LeftOf,
    RightOf,
    InFrontOf,
    Behind,
    Near,
    Inside,
}

impl RelationKind {
    pub fn phrase(&self) -> &'static str {
        match self {
            RelationKind::LeftOf => "left of",
            RelationKind::RightOf => "right of",
            RelationKind::InFrontOf => "in front of",
            RelationKind::Behind => "behind",
            RelationKind::Near => "near",
            RelationKind::Inside => "inside",
        }
    }
}

/// Metric thresholds for relation tests, converted to pixels per view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelationSettings {
    pub margin_m: f64,
    pub near_radius_m: f64,
}

impl Default for RelationSettings {
    fn default() -> Self {
        Self {
            margin_m: 2.0,
            near_radius_m: 15.0,
        }
    }
}

/// Image-plane relation between `a` and `b` in a heading-aligned view
/// (image-up is "in front"). Directional kinds need more than `margin`
/// pixels of separation. `Inside` needs region data, so here it degrades to
/// the `near` test.
pub fn relation_holds(a: PixelPoint, b: PixelPoint, kind: RelationKind, margin: f64, near_radius: f64) -> bool {
    match kind {
        RelationKind::LeftOf => a.u < b.u - margin,
        RelationKind::RightOf => a.u > b.u + margin,
        RelationKind::InFrontOf => a.v < b.v - margin,
        RelationKind::Behind => a.v > b.v + margin,
        RelationKind::Near | RelationKind::Inside => a.distance(&b) <= near_radius,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Literal,
    Topology,
    Geographic,
    /// Single unstructured call standing in for the whole pipeline.
    Combined,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Literal => "literal",
            Stage::Topology => "topology",
            Stage::Geographic => "geographic",
            Stage::Combined => "combined",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageOutcome {
    Pass,
    Fail,
    Pending,
}

/// Per-candidate verdicts for one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageVerdictMap {
    pub verdicts: BTreeMap<u32, StageOutcome>,
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance: Option<String>,
}

impl StageVerdictMap {
    pub fn all(ids: impl IntoIterator<Item = u32>, outcome: StageOutcome, rationale: &str) -> Self {
        Self {
            verdicts: ids.into_iter().map(|id| (id, outcome)).collect(),
            rationale: rationale.to_string(),
            guidance: None,
        }
    }

    pub fn ids_with(&self, outcome: StageOutcome) -> impl Iterator<Item = u32> + '_ {
        self.verdicts
            .iter()
            .filter(move |(_, o)| **o == outcome)
            .map(|(id, _)| *id)
    }

    /// Restricts the map to `ids`, filling gaps with `Pending`.
    pub fn covering(mut self, ids: &BTreeSet<u32>) -> Self {
        self.verdicts.retain(|id, _| ids.contains(id));
        for id in ids {
            self.verdicts.entry(*id).or_insert(StageOutcome::Pending);
        }
        self
    }
}

/// What produced a candidate region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum CandidateSource {
    Object {
        id: String,
    },
    Landmark {
        label: String,
    },
    /// No ground-truth backing: remote detections and injected decoys.
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub bbox: PixelRect,
    /// Precise centroid when known; defaults to the bbox center.
    pub centroid: Option<PixelPoint>,
    pub source: CandidateSource,
}

/// Detection plus an all-stages verdict from a fused single call.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedResponse {
    pub detections: Vec<(Detection, StageOutcome)>,
    pub rationale: String,
    pub guidance: Option<String>,
}

/// Everything a backend may consult for one observation.
#[derive(Debug, Clone, Copy)]
pub struct OracleContext<'a> {
    pub episode: &'a Episode,
    /// Ground truth; only the scripted backend reads it.
    pub scene: &'a Scene,
    pub pose: Pose,
    /// Whether the image carries set-of-mark annotations.
    pub annotated: bool,
}

pub trait ReasoningOracle: Send + Sync {
    fn detect(&self, image: &Image, prompt: &str, ctx: &OracleContext<'_>) -> Result<Vec<Detection>, OracleError>;

    fn verify_stage(
        &self,
        som: &SomRepresentation,
        stage: Stage,
        ctx: &OracleContext<'_>,
    ) -> Result<StageVerdictMap, OracleError>;

    /// Unstructured selection without the staged pipeline: at most one
    /// `Pass`.
    fn pick_target(&self, som: &SomRepresentation, ctx: &OracleContext<'_>) -> Result<StageVerdictMap, OracleError>;

    /// Detection and verification answered in one call.
    fn detect_and_verify(
        &self,
        image: &Image,
        prompt: &str,
        ctx: &OracleContext<'_>,
    ) -> Result<FusedResponse, OracleError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    #[default]
    Scripted,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub kind: OracleKind,
    pub scripted: ScriptedConfig,
    pub remote: RemoteConfig,
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        self.scripted.validate()?;
        if self.kind == OracleKind::Remote {
            self.remote.validate()?;
        }
        Ok(())
    }
}

pub fn build_oracle(config: &OracleConfig) -> Result<Box<dyn ReasoningOracle>, OracleError> {
    config.validate()?;
    Ok(match config.kind {
        OracleKind::Scripted => Box::new(ScriptedOracle::new(config.scripted.clone())),
        OracleKind::Remote => Box::new(RemoteOracle::new(config.remote.clone())?),
    })
}

/// Rejections gathered from one verification round.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GuidanceEvidence {
    pub rejected_ids: BTreeSet<u32>,
    pub topology_failed: bool,
    pub geographic_failed: bool,
}

fn definite(label: &str) -> String {
    if label.to_lowercase().starts_with("the ") {
        label.to_string()
    } else {
        format!("the {label}")
    }
}

/// The prompt used before any guidance exists.
pub fn base_prompt(constraints: &ConstraintSet) -> String {
    format!("focus on {}", constraints.description())
}

/// Deterministic refinement prompt for the next perception round.
pub fn propose_guidance(evidence: &GuidanceEvidence, constraints: &ConstraintSet) -> String {
    let mut g = base_prompt(constraints);
    if evidence.topology_failed {
        for rel in &constraints.relations {
            g.push(' ');
            g.push_str(rel.kind.phrase());
            g.push(' ');
            g.push_str(&definite(&rel.reference));
        }
    }
    if evidence.geographic_failed {
        if let Some(b) = &constraints.boundary_landmark {
            g.push_str(" within ");
            g.push_str(&definite(b));
        }
    }
    if !evidence.rejected_ids.is_empty() {
        let ids: Vec<String> = evidence.rejected_ids.iter().map(u32::to_string).collect();
        g.push_str("; exclude marks ");
        g.push_str(&ids.join(", "));
    }
    g
}
