//! Landmark-guided aerial vision-language navigation.
//!
//! A UAV receives an instruction plus landmark priors, plans observation
//! waypoints over the relevant landmarks, marks candidate regions in each
//! nadir image, verifies them in three stages (literal attributes, spatial
//! topology, geographic boundary) and flies to the confirmed target with
//! discrete actions. Rendering and the default reasoning backend are
//! synthetic and fully deterministic.

pub mod cli;
pub mod error;
pub mod executor;
pub mod geometry;
pub mod image;
pub mod metrics;
pub mod oracle;
pub mod perception;
pub mod planner;
pub mod scene;
pub mod simulator;
pub mod verification;

pub use error::{Error, Result};
pub use executor::{ExecutorParams, LowLevelAction, TaskPrimitive};
pub use geometry::{Point2, Polygon};
pub use image::Image;
pub use metrics::{aggregate, evaluate, EpisodeMetrics, Summary};
pub use oracle::{OracleConfig, ReasoningOracle, RemoteOracle, ScriptedOracle};
pub use perception::SomRepresentation;
pub use planner::{plan, WaypointPlan};
pub use scene::{load_episode, load_episode_file, Episode, Pose, Scene};
pub use simulator::{run_episode, EpisodeResult, RunConfig};
pub use verification::{verify, Verdict};
