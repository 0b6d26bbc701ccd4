//! End-to-end per-frame wiring: tracking, behaviour features, detection,
//! with the processing latency of each frame measured on the spot.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::anomaly::{AnomalyError, Detector, DetectorConfig, FrameDetections};
use crate::behavior::{BehaviorConfig, FeatureEngine, FeatureVector, FrameFeatures};
use crate::domain::{AgentId, CrowdState, Observation};
use crate::estimation::{FilterConfig, NoiseParams, Tracker};
use crate::orca::AgentParams;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PipelineError {
    #[error(transparent)]
    Anomaly(#[from] AnomalyError),
}

/// Full configuration of the streaming pipeline.
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub fps: f64,
    pub params: AgentParams,
    pub noise: NoiseParams,
    pub filter: FilterConfig,
    pub behavior: BehaviorConfig,
    pub detector: DetectorConfig,
}

impl PipelineConfig {
    pub fn defaults_for_fps(fps: f64) -> Self {
        PipelineConfig {
            fps,
            params: AgentParams::defaults_for_fps(fps),
            noise: NoiseParams::default(),
            filter: FilterConfig::default(),
            behavior: BehaviorConfig::defaults_for_fps(fps),
            detector: DetectorConfig::default(),
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig::defaults_for_fps(25.0)
    }
}

/// Everything one frame produced.
#[derive(Clone, Debug)]
pub struct FrameOutput {
    pub frame: u64,
    pub crowd: CrowdState,
    pub features: FrameFeatures,
    pub detections: FrameDetections,
    /// Wall-clock processing time of this frame, measurement IO excluded.
    pub latency: Duration,
}

/// Streaming detector: feed observations frame by frame, get events out.
pub struct Pipeline {
    tracker: Tracker,
    engine: FeatureEngine,
    detector: Detector,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        Pipeline {
            tracker: Tracker::new(config.params, config.noise, config.filter),
            engine: FeatureEngine::new(config.behavior),
            detector: Detector::new(config.detector),
        }
    }

    /// Processes one frame of observations (possibly empty on dropouts).
    pub fn process_frame(
        &mut self,
        frame: u64,
        observations: &[Observation],
    ) -> Result<FrameOutput, PipelineError> {
        let start = Instant::now();
        let crowd = self.tracker.step(frame, observations);
        let features = self.engine.step(&crowd);

        let mut pairs: BTreeMap<AgentId, (FeatureVector, FeatureVector)> = BTreeMap::new();
        for (id, af) in &features.agents {
            if let (Some(local), Some(global)) = (af.local_normalized, af.global_normalized) {
                pairs.insert(id.clone(), (local, global));
            }
        }
        let detections = self.detector.step(frame, &pairs)?;
        let latency = start.elapsed();

        Ok(FrameOutput {
            frame,
            crowd,
            features,
            detections,
            latency,
        })
    }
}
