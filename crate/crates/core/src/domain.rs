//! Shared geometry and stream types: 2-D vectors, per-frame observations,
//! per-agent belief state, and validation of incoming trajectory streams.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::Matrix6;
use thiserror::Error;

/// 2-D vector in scene units. Plain value type; all the usual arithmetic.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the cross product; twice the signed area of (self, other).
    pub fn det(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn distance_squared(self, other: Vec2) -> f64 {
        (self - other).norm_squared()
    }

    /// Unit vector in the same direction, or zero when the input has no length.
    pub fn normalized_or_zero(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            Vec2::ZERO
        }
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl std::ops::Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl std::ops::Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, rhs: Vec2) -> Vec2 {
        rhs * self
    }
}

impl std::ops::AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl fmt::Display for Vec2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Opaque per-agent identifier as supplied by the upstream tracker or file.
/// Ordered so that agent maps iterate deterministically.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct AgentId(String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        AgentId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        AgentId(s.to_owned())
    }
}

impl From<String> for AgentId {
    fn from(s: String) -> Self {
        AgentId(s)
    }
}

/// One position measurement for one agent at one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub frame: u64,
    pub agent: AgentId,
    pub position: Vec2,
}

impl Observation {
    pub fn new(frame: u64, agent: impl Into<AgentId>, position: Vec2) -> Self {
        Observation {
            frame,
            agent: agent.into(),
            position,
        }
    }
}

/// Filtered belief about one pedestrian: position, velocity, inferred goal,
/// and the joint 6x6 covariance over (position, velocity, goal).
#[derive(Clone, Debug)]
pub struct PedestrianState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub goal: Vec2,
    pub covariance: Matrix6<f64>,
}

impl PedestrianState {
    /// Largest symmetry defect |C[i,j] - C[j,i]| of the covariance.
    pub fn covariance_asymmetry(&self) -> f64 {
        let c = &self.covariance;
        let mut worst: f64 = 0.0;
        for i in 0..6 {
            for j in (i + 1)..6 {
                worst = worst.max((c[(i, j)] - c[(j, i)]).abs());
            }
        }
        worst
    }

    /// Smallest eigenvalue of the symmetrized covariance.
    pub fn covariance_min_eigenvalue(&self) -> f64 {
        let sym = (self.covariance + self.covariance.transpose()) * 0.5;
        sym.symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Track lifecycle. `Coasting` carries the number of consecutive missed frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrackStatus {
    Active,
    Coasting(u32),
    Lost,
}

/// Belief plus lifecycle for one tracked agent.
#[derive(Clone, Debug)]
pub struct TrackedAgent {
    pub state: PedestrianState,
    pub status: TrackStatus,
}

/// All live tracks at one frame. Keyed by agent id so iteration order is
/// stable, which keeps every downstream stage deterministic.
#[derive(Clone, Debug, Default)]
pub struct CrowdState {
    pub frame: u64,
    pub agents: BTreeMap<AgentId, TrackedAgent>,
}

impl CrowdState {
    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }
}

/// Violations raised by [`validate_stream`].
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ValidationError {
    #[error("duplicate observation for agent {agent} at frame {frame}")]
    DuplicateObservation { frame: u64, agent: AgentId },
    #[error("frame index decreases at observation {index}")]
    NonMonotoneFrame { index: usize },
    #[error("non-finite coordinate at observation {index}")]
    NonFiniteCoordinate { index: usize },
}

/// Checks a batch of observations for stream well-formedness and passes it
/// through unchanged: frames must be non-decreasing, coordinates finite, and
/// each (frame, agent) pair unique.
pub fn validate_stream(observations: Vec<Observation>) -> Result<Vec<Observation>, ValidationError> {
    let mut seen: BTreeSet<(u64, &AgentId)> = BTreeSet::new();
    let mut last_frame: Option<u64> = None;
    for (index, obs) in observations.iter().enumerate() {
        if !obs.position.is_finite() {
            return Err(ValidationError::NonFiniteCoordinate { index });
        }
        if let Some(last) = last_frame {
            if obs.frame < last {
                return Err(ValidationError::NonMonotoneFrame { index });
            }
        }
        last_frame = Some(obs.frame);
        if !seen.insert((obs.frame, &obs.agent)) {
            return Err(ValidationError::DuplicateObservation {
                frame: obs.frame,
                agent: obs.agent.clone(),
            });
        }
    }
    Ok(observations)
}

/// Aggregate geometry of an observation window, used to sanity-check scenes
/// and to pick sensible normalization scales.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneStatistics {
    /// Mean over (frame, agent) of the distance to the nearest other agent
    /// present in the same frame.
    pub mean_nn_spacing: f64,
    pub bounds_min: Vec2,
    pub bounds_max: Vec2,
    /// Mean per-frame displacement magnitude across consecutive observations
    /// of the same agent.
    pub mean_speed: f64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("need at least 2 agents and 2 frames, got {agents} agent(s) over {frames} frame(s)")]
    InsufficientData { agents: usize, frames: usize },
}

/// Computes [`SceneStatistics`] over a window of observations.
pub fn scene_statistics(observations: &[Observation]) -> Result<SceneStatistics, StatsError> {
    let mut frames: BTreeMap<u64, Vec<(&AgentId, Vec2)>> = BTreeMap::new();
    let mut per_agent: BTreeMap<&AgentId, Vec<(u64, Vec2)>> = BTreeMap::new();
    for obs in observations {
        frames.entry(obs.frame).or_default().push((&obs.agent, obs.position));
        per_agent.entry(&obs.agent).or_default().push((obs.frame, obs.position));
    }
    let n_agents = per_agent.len();
    let n_frames = frames.len();
    if n_agents < 2 || n_frames < 2 {
        return Err(StatsError::InsufficientData {
            agents: n_agents,
            frames: n_frames,
        });
    }

    let mut nn_sum = 0.0;
    let mut nn_count = 0usize;
    for agents in frames.values() {
        if agents.len() < 2 {
            continue;
        }
        for (i, &(_, p)) in agents.iter().enumerate() {
            let nearest = agents
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &(_, q))| p.distance(q))
                .fold(f64::INFINITY, f64::min);
            nn_sum += nearest;
            nn_count += 1;
        }
    }
    let mean_nn_spacing = if nn_count > 0 { nn_sum / nn_count as f64 } else { 0.0 };

    let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for obs in observations {
        min.x = min.x.min(obs.position.x);
        min.y = min.y.min(obs.position.y);
        max.x = max.x.max(obs.position.x);
        max.y = max.y.max(obs.position.y);
    }

    let mut speed_sum = 0.0;
    let mut speed_count = 0usize;
    for track in per_agent.values() {
        for pair in track.windows(2) {
            let (f0, p0) = pair[0];
            let (f1, p1) = pair[1];
            let dt = (f1 - f0) as f64;
            if dt > 0.0 {
                speed_sum += p0.distance(p1) / dt;
                speed_count += 1;
            }
        }
    }
    let mean_speed = if speed_count > 0 { speed_sum / speed_count as f64 } else { 0.0 };

    Ok(SceneStatistics {
        mean_nn_spacing,
        bounds_min: min,
        bounds_max: max,
        mean_speed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(frame: u64, agent: &str, x: f64, y: f64) -> Observation {
        Observation::new(frame, agent, Vec2::new(x, y))
    }

    #[test]
    fn validate_accepts_well_formed_stream() {
        let stream = vec![obs(0, "a", 0.0, 0.0), obs(0, "b", 1.0, 0.0), obs(1, "a", 0.1, 0.0)];
        let out = validate_stream(stream.clone()).unwrap();
        assert_eq!(out, stream);
    }

    #[test]
    fn validate_rejects_duplicate_frame_agent_pair() {
        let stream = vec![obs(3, "a", 0.0, 0.0), obs(3, "a", 1.0, 0.0)];
        assert_eq!(
            validate_stream(stream),
            Err(ValidationError::DuplicateObservation {
                frame: 3,
                agent: AgentId::new("a"),
            })
        );
    }

    #[test]
    fn validate_rejects_decreasing_frames() {
        let stream = vec![obs(2, "a", 0.0, 0.0), obs(1, "a", 0.0, 0.0)];
        assert_eq!(validate_stream(stream), Err(ValidationError::NonMonotoneFrame { index: 1 }));
    }

    #[test]
    fn validate_rejects_non_finite_coordinates() {
        let stream = vec![obs(0, "a", 0.0, 0.0), obs(1, "a", f64::NAN, 0.0)];
        assert_eq!(
            validate_stream(stream),
            Err(ValidationError::NonFiniteCoordinate { index: 1 })
        );
    }

    #[test]
    fn statistics_of_two_static_agents() {
        let stream = vec![
            obs(0, "a", 0.0, 0.0),
            obs(0, "b", 0.0, 2.0),
            obs(1, "a", 0.0, 0.0),
            obs(1, "b", 0.0, 2.0),
        ];
        let stats = scene_statistics(&stream).unwrap();
        assert_eq!(stats.mean_nn_spacing, 2.0);
        assert_eq!(stats.mean_speed, 0.0);
        assert_eq!(stats.bounds_min, Vec2::new(0.0, 0.0));
        assert_eq!(stats.bounds_max, Vec2::new(0.0, 2.0));
    }

    #[test]
    fn statistics_require_two_agents_and_two_frames() {
        let stream = vec![obs(0, "a", 0.0, 0.0), obs(1, "a", 1.0, 0.0)];
        assert_eq!(
            scene_statistics(&stream),
            Err(StatsError::InsufficientData { agents: 1, frames: 2 })
        );
        let stream = vec![obs(0, "a", 0.0, 0.0), obs(0, "b", 1.0, 0.0)];
        assert_eq!(
            scene_statistics(&stream),
            Err(StatsError::InsufficientData { agents: 2, frames: 1 })
        );
    }

    /// Brute-force all-pairs recomputation of the same statistics, written
    /// independently of the implementation above.
    fn brute_force_stats(observations: &[Observation]) -> (f64, f64) {
        let frames: BTreeSet<u64> = observations.iter().map(|o| o.frame).collect();
        let mut nn = Vec::new();
        for &f in &frames {
            let here: Vec<&Observation> = observations.iter().filter(|o| o.frame == f).collect();
            for a in &here {
                let mut best = f64::INFINITY;
                for b in &here {
                    if a.agent != b.agent {
                        best = best.min(a.position.distance(b.position));
                    }
                }
                if best.is_finite() {
                    nn.push(best);
                }
            }
        }
        let agents: BTreeSet<&AgentId> = observations.iter().map(|o| &o.agent).collect();
        let mut speeds = Vec::new();
        for agent in agents {
            let mut track: Vec<&Observation> = observations.iter().filter(|o| &o.agent == agent).collect();
            track.sort_by_key(|o| o.frame);
            for w in track.windows(2) {
                let dt = (w[1].frame - w[0].frame) as f64;
                speeds.push(w[0].position.distance(w[1].position) / dt);
            }
        }
        (
            nn.iter().sum::<f64>() / nn.len() as f64,
            speeds.iter().sum::<f64>() / speeds.len() as f64,
        )
    }

    #[test]
    fn statistics_match_brute_force_on_random_cloud() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut stream = Vec::new();
        for frame in 0..6u64 {
            for i in 0..10 {
                stream.push(Observation::new(
                    frame,
                    format!("p{i:02}"),
                    Vec2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)),
                ));
            }
        }
        let stats = scene_statistics(&stream).unwrap();
        let (nn, speed) = brute_force_stats(&stream);
        assert!((stats.mean_nn_spacing - nn).abs() < 1e-12);
        assert!((stats.mean_speed - speed).abs() < 1e-12);
    }
}
