//! Streaming crowd-motion modelling and anomaly detection.
//!
//! The pipeline ingests per-frame position observations, tracks every agent
//! with a collision-avoiding motion model inside a Kalman filter, summarises
//! recent motion into behaviour features, compares each agent against its
//! surrounding group, and emits debounced anomaly events.
//!
//! Modules, in data-flow order:
//!
//! * [`domain`] — core types (vectors, observations, crowd state) and input
//!   validation.
//! * [`orca`] — reciprocal collision avoidance: velocity constraints and the
//!   solver that picks the best admissible velocity.
//! * [`estimation`] — per-agent filtering with the avoidance model as the
//!   motion prior, plus track lifecycle.
//! * [`behavior`] — local/global behaviour features, clustering, running
//!   normalization.
//! * [`anomaly`] — scoring and debounced event emission.
//! * [`simulator`] — synthetic scenarios with scripted deviations and
//!   measurement corruption.
//! * [`evaluation`] — ROC/AUC/EER and latency summaries.
//! * [`pipeline`] — the per-frame wiring of all of the above.

pub mod anomaly;
pub mod behavior;
pub mod domain;
pub mod estimation;
pub mod evaluation;
pub mod orca;
pub mod pipeline;
pub mod simulator;

pub use anomaly::{AnomalyEvent, Detector, DetectorConfig, Scope};
pub use behavior::{BehaviorConfig, BehaviorFeature, FeatureEngine, FeatureVector};
pub use domain::{AgentId, CrowdState, Observation, PedestrianState, Vec2};
pub use estimation::{FilterConfig, NoiseParams, Tracker};
pub use orca::AgentParams;
pub use pipeline::{FrameOutput, Pipeline, PipelineConfig};
pub use simulator::{build_scenario, build_scenario_sized, corrupt, simulate, Scenario, SimulationResult};
