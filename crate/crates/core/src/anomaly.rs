//! Turns normalized feature pairs into per-agent scores and debounced
//! anomaly events.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::behavior::FeatureVector;
use crate::domain::AgentId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnomalyError {
    #[error("feature vectors from different normalization epochs ({left} vs {right})")]
    NormalizationMismatch { left: u64, right: u64 },
}

/// Euclidean distance between two feature vectors normalized in the same
/// epoch. Zero means the agent behaves exactly like its group.
pub fn anomaly_score(local: &FeatureVector, global: &FeatureVector) -> Result<f64, AnomalyError> {
    if local.epoch != global.epoch {
        return Err(AnomalyError::NormalizationMismatch {
            left: local.epoch,
            right: global.epoch,
        });
    }
    let mut acc = 0.0;
    for i in 0..local.components.len() {
        let d = local.components[i] - global.components[i];
        acc += d * d;
    }
    Ok(acc.sqrt())
}

/// Whether a frame's anomalies are isolated (local) or crowd-wide (global).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Local,
    Global,
}

/// A debounced detection: this agent exceeded the threshold now, and often
/// enough recently.
#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyEvent {
    pub frame: u64,
    pub agent: AgentId,
    pub score: f64,
    pub threshold: f64,
    pub scope: Scope,
}

#[derive(Clone, Debug)]
pub struct DetectorConfig {
    pub threshold: f64,
    /// Flag when at least `hysteresis_m` of the last `hysteresis_n`
    /// frames exceeded the threshold (and the current frame does).
    pub hysteresis_m: usize,
    pub hysteresis_n: usize,
    /// Fraction of scored agents flagged at once that makes the frame a
    /// crowd-wide event.
    pub global_fraction: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            threshold: 1.0,
            hysteresis_m: 3,
            hysteresis_n: 5,
            global_fraction: 0.5,
        }
    }
}

/// Per-frame detector output.
#[derive(Clone, Debug, Default)]
pub struct FrameDetections {
    pub frame: u64,
    /// Score for every agent that produced a comparable feature pair.
    pub scores: BTreeMap<AgentId, f64>,
    pub events: Vec<AnomalyEvent>,
    pub scope: Option<Scope>,
}

/// Stateful m-of-n debouncer over per-agent scores.
pub struct Detector {
    config: DetectorConfig,
    exceed_history: BTreeMap<AgentId, VecDeque<bool>>,
}

impl Detector {
    pub fn new(config: DetectorConfig) -> Self {
        Detector {
            config,
            exceed_history: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    /// Ingests one frame of (local, global) pairs and emits debounced events.
    /// Agents absent from `pairs` lose their debounce history.
    pub fn step(
        &mut self,
        frame: u64,
        pairs: &BTreeMap<AgentId, (FeatureVector, FeatureVector)>,
    ) -> Result<FrameDetections, AnomalyError> {
        self.exceed_history.retain(|id, _| pairs.contains_key(id));

        let mut scores = BTreeMap::new();
        let mut flagged: Vec<(AgentId, f64)> = Vec::new();
        let n = self.config.hysteresis_n.max(1);
        let m = self.config.hysteresis_m.max(1).min(n);

        for (id, (local, global)) in pairs {
            let score = anomaly_score(local, global)?;
            let exceeds = score > self.config.threshold;

            let hist = self.exceed_history.entry(id.clone()).or_default();
            hist.push_back(exceeds);
            while hist.len() > n {
                hist.pop_front();
            }
            let recent = hist.iter().filter(|&&e| e).count();
            if exceeds && recent >= m {
                flagged.push((id.clone(), score));
            }
            scores.insert(id.clone(), score);
        }

        let scope = if flagged.is_empty() {
            None
        } else {
            Some(classify_scope(
                flagged.len(),
                scores.len(),
                self.config.global_fraction,
            ))
        };
        let events = flagged
            .into_iter()
            .map(|(agent, score)| AnomalyEvent {
                frame,
                agent,
                score,
                threshold: self.config.threshold,
                scope: scope.expect("scope set when any agent is flagged"),
            })
            .collect();

        Ok(FrameDetections {
            frame,
            scores,
            events,
            scope,
        })
    }
}

/// Crowd-wide when the flagged fraction reaches `global_fraction`.
pub fn classify_scope(flagged: usize, scored: usize, global_fraction: f64) -> Scope {
    if scored > 0 && flagged as f64 / scored as f64 >= global_fraction {
        Scope::Global
    } else {
        Scope::Local
    }
}
