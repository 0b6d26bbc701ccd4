//! Behaviour features: what each agent has been doing lately (local), what
//! its surrounding group does (global), plus the clustering and running
//! normalization that make the two comparable.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::domain::{AgentId, CrowdState, PedestrianState, Vec2};

/// Speeds below this leave the heading undefined (zero-flagged).
pub const EPSILON_SPEED: f64 = 1e-3;

/// Std floor applied during normalization so constant components stay finite.
pub const EPSILON_STD: f64 = 1e-6;

/// Summary of one agent's recent motion. `speed` and `heading` are always
/// derived from `mean_velocity`; `heading` and `goal_dir` are unit vectors or
/// zero when undefined.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BehaviorFeature {
    pub mean_velocity: Vec2,
    pub speed: f64,
    pub heading: Vec2,
    pub goal_dir: Vec2,
    pub cluster_flow: Vec2,
}

impl BehaviorFeature {
    /// Builds a consistent feature from its primitive parts: speed and
    /// heading derive from the mean velocity, the goal direction is the
    /// normalized goal vector (zero when degenerate).
    pub fn from_parts(mean_velocity: Vec2, goal_vector: Vec2, cluster_flow: Vec2) -> Self {
        let speed = mean_velocity.norm();
        let heading = if speed > EPSILON_SPEED {
            mean_velocity * (1.0 / speed)
        } else {
            Vec2::ZERO
        };
        let goal_dir = if goal_vector.norm() > EPSILON_SPEED {
            goal_vector.normalized_or_zero()
        } else {
            Vec2::ZERO
        };
        BehaviorFeature {
            mean_velocity,
            speed,
            heading,
            goal_dir,
            cluster_flow,
        }
    }

    pub fn with_cluster_flow(self, cluster_flow: Vec2) -> Self {
        BehaviorFeature { cluster_flow, ..self }
    }

    /// The ordered components fed to normalization and scoring.
    pub fn components(&self) -> [f64; 7] {
        [
            self.mean_velocity.x,
            self.mean_velocity.y,
            self.speed,
            self.heading.x,
            self.heading.y,
            self.goal_dir.x,
            self.goal_dir.y,
        ]
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BehaviorError {
    #[error("feature window contains no samples")]
    EmptyWindow,
    #[error("normalizer has not seen enough frames yet")]
    NotWarmedUp,
}

/// Local behaviour over a window of filtered states (newest last): mean
/// velocity across the window, goal direction from the newest state. The
/// cluster flow is filled in by the caller once clusters are known.
pub fn local_feature(history: &[PedestrianState]) -> Result<BehaviorFeature, BehaviorError> {
    if history.is_empty() {
        return Err(BehaviorError::EmptyWindow);
    }
    let mut mean_velocity = Vec2::ZERO;
    for s in history {
        mean_velocity += s.velocity;
    }
    mean_velocity = mean_velocity * (1.0 / history.len() as f64);
    let latest = &history[history.len() - 1];
    let goal_vector = latest.goal - latest.position;
    Ok(BehaviorFeature::from_parts(mean_velocity, goal_vector, Vec2::ZERO))
}

/// How many clusters to fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClusterCount {
    /// Pick k by the elbow rule over 1..=min(8, n).
    Auto,
    Fixed(usize),
}

/// One behavioural group of agents.
#[derive(Clone, Debug)]
pub struct Cluster {
    pub id: usize,
    /// Member ids, sorted.
    pub members: Vec<AgentId>,
    /// Component-wise mean feature of the members.
    pub centroid: BehaviorFeature,
    /// Mean of the members' mean velocities.
    pub mean_flow: Vec2,
}

const KMEANS_MAX_ITER: usize = 100;
/// A further split must shrink within-cluster scatter by this factor to be
/// accepted; a uniform spread splits at ~4x, genuinely separated groups at
/// far more.
const ELBOW_GAIN: f64 = 8.0;

fn cluster_point(position: Vec2, feature: &BehaviorFeature, position_scale: f64) -> [f64; 4] {
    let s = 1.0 / position_scale.max(1e-9);
    [position.x * s, position.y * s, feature.heading.x, feature.heading.y]
}

fn dist_sq(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let mut acc = 0.0;
    for i in 0..4 {
        let d = a[i] - b[i];
        acc += d * d;
    }
    acc
}

/// Plain Lloyd iteration with farthest-point seeding. The RNG only picks the
/// first seed, so runs are reproducible for a fixed seed.
fn kmeans(points: &[[f64; 4]], k: usize, seed: u64) -> (Vec<usize>, f64) {
    let n = points.len();
    let k = k.min(n).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<[f64; 4]> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..n)]);
    while centers.len() < k {
        // Farthest point from the chosen centers; ties break on index.
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, p) in points.iter().enumerate() {
            let d = centers.iter().map(|c| dist_sq(p, c)).fold(f64::INFINITY, f64::min);
            if d > best.0 {
                best = (d, i);
            }
        }
        centers.push(points[best.1]);
    }

    let mut assignment = vec![0usize; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = (f64::INFINITY, 0usize);
            for (c, center) in centers.iter().enumerate() {
                let d = dist_sq(p, center);
                if d < best.0 {
                    best = (d, c);
                }
            }
            if assignment[i] != best.1 {
                assignment[i] = best.1;
                changed = true;
            }
        }
        let mut sums = vec![[0.0f64; 4]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (i, p) in points.iter().enumerate() {
            let c = assignment[i];
            counts[c] += 1;
            for d in 0..4 {
                sums[c][d] += p[d];
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            if counts[c] == 0 {
                // Re-seed an empty cluster at the point farthest from its center.
                let far = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (dist_sq(p, &centers_snapshot(&sums, &counts, assignment[i])), i))
                    .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
                    .map(|(_, i)| i)
                    .unwrap_or(0);
                *center = points[far];
                changed = true;
            } else {
                for d in 0..4 {
                    center[d] = sums[c][d] / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let sse = points
        .iter()
        .zip(&assignment)
        .map(|(p, &c)| dist_sq(p, &centers[c]))
        .sum();
    (assignment, sse)
}

fn centers_snapshot(sums: &[[f64; 4]], counts: &[usize], c: usize) -> [f64; 4] {
    if counts[c] == 0 {
        [f64::INFINITY; 4]
    } else {
        let mut out = [0.0; 4];
        for d in 0..4 {
            out[d] = sums[c][d] / counts[c] as f64;
        }
        out
    }
}

/// Groups agents by (scaled position, heading). With `Auto`, extra clusters
/// are accepted only while each split shrinks within-cluster scatter by
/// [`ELBOW_GAIN`]. Returns clusters ordered by their smallest member id.
pub fn assign_clusters(
    agents: &[(AgentId, Vec2, BehaviorFeature)],
    position_scale: f64,
    count: ClusterCount,
    seed: u64,
) -> Vec<Cluster> {
    if agents.is_empty() {
        return Vec::new();
    }
    let mut items: Vec<&(AgentId, Vec2, BehaviorFeature)> = agents.iter().collect();
    items.sort_by(|a, b| a.0.cmp(&b.0));
    let points: Vec<[f64; 4]> = items
        .iter()
        .map(|(_, p, f)| cluster_point(*p, f, position_scale))
        .collect();

    let n = points.len();
    let assignment = match count {
        ClusterCount::Fixed(k) => kmeans(&points, k, seed).0,
        ClusterCount::Auto => {
            let kmax = n.min(8);
            let mut runs: Vec<(Vec<usize>, f64)> = Vec::with_capacity(kmax);
            for k in 1..=kmax {
                runs.push(kmeans(&points, k, seed.wrapping_add(k as u64)));
            }
            let mut chosen = 0usize;
            while chosen + 1 < runs.len() {
                let here = runs[chosen].1;
                let next = runs[chosen + 1].1;
                if here <= 1e-12 {
                    break;
                }
                if here / next.max(1e-12) >= ELBOW_GAIN {
                    chosen += 1;
                } else {
                    break;
                }
            }
            runs.swap_remove(chosen).0
        }
    };

    // Collect raw groups, then relabel by smallest member id for stability.
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in assignment.iter().enumerate() {
        groups.entry(c).or_default().push(i);
    }
    let mut ordered: Vec<Vec<usize>> = groups.into_values().collect();
    ordered.sort_by(|a, b| items[a[0]].0.cmp(&items[b[0]].0));

    ordered
        .into_iter()
        .enumerate()
        .map(|(id, indices)| {
            let mut mv = Vec2::ZERO;
            let mut gd = Vec2::ZERO;
            let mut cf = Vec2::ZERO;
            for &i in &indices {
                let f = &items[i].2;
                mv += f.mean_velocity;
                gd += f.goal_dir;
                cf += f.cluster_flow;
            }
            let inv = 1.0 / indices.len() as f64;
            let mean_flow = mv * inv;
            Cluster {
                id,
                members: indices.iter().map(|&i| items[i].0.clone()).collect(),
                centroid: BehaviorFeature::from_parts(mean_flow, gd * inv, cf * inv),
                mean_flow,
            }
        })
        .collect()
}

/// Z-scored feature ready for distance comparison. Two vectors are only
/// comparable when they were normalized in the same epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureVector {
    pub components: [f64; 7],
    pub epoch: u64,
}

#[derive(Default, Clone)]
struct FrameAggregate {
    count: usize,
    sum: [f64; 7],
    sumsq: [f64; 7],
}

/// Sliding-window per-component mean/std over everything the crowd has done
/// recently, used to z-score features.
pub struct Normalizer {
    window: usize,
    warmup_frames: usize,
    frames: VecDeque<FrameAggregate>,
    data_frames_seen: usize,
    total: FrameAggregate,
}

impl Normalizer {
    pub fn new(window: usize, warmup_frames: usize) -> Self {
        Normalizer {
            window: window.max(1),
            warmup_frames,
            frames: VecDeque::new(),
            data_frames_seen: 0,
            total: FrameAggregate::default(),
        }
    }

    /// Feeds one frame's feature population into the running statistics.
    pub fn observe_frame(&mut self, features: &[[f64; 7]]) {
        let mut agg = FrameAggregate::default();
        for f in features {
            agg.count += 1;
            for (i, &value) in f.iter().enumerate() {
                agg.sum[i] += value;
                agg.sumsq[i] += value * value;
            }
        }
        if agg.count > 0 {
            self.data_frames_seen += 1;
        }
        self.total.count += agg.count;
        for i in 0..7 {
            self.total.sum[i] += agg.sum[i];
            self.total.sumsq[i] += agg.sumsq[i];
        }
        self.frames.push_back(agg);
        while self.frames.len() > self.window {
            let old = self.frames.pop_front().unwrap();
            self.total.count -= old.count;
            for i in 0..7 {
                self.total.sum[i] -= old.sum[i];
                self.total.sumsq[i] -= old.sumsq[i];
            }
        }
    }

    pub fn is_warm(&self) -> bool {
        self.data_frames_seen >= self.warmup_frames.max(1) && self.total.count > 0
    }

    /// Current per-component mean and std (floored at [`EPSILON_STD`]).
    pub fn mean_std(&self) -> ([f64; 7], [f64; 7]) {
        let mut mean = [0.0; 7];
        let mut std = [EPSILON_STD; 7];
        if self.total.count == 0 {
            return (mean, std);
        }
        let n = self.total.count as f64;
        for i in 0..7 {
            mean[i] = self.total.sum[i] / n;
            let var = (self.total.sumsq[i] / n - mean[i] * mean[i]).max(0.0);
            std[i] = var.sqrt().max(EPSILON_STD);
        }
        (mean, std)
    }

    /// Z-scores a feature against the current statistics.
    pub fn normalize(&self, feature: &BehaviorFeature, epoch: u64) -> Result<FeatureVector, BehaviorError> {
        if !self.is_warm() {
            return Err(BehaviorError::NotWarmedUp);
        }
        let (mean, std) = self.mean_std();
        let raw = feature.components();
        let mut components = [0.0; 7];
        for i in 0..7 {
            components[i] = (raw[i] - mean[i]) / std[i];
        }
        Ok(FeatureVector { components, epoch })
    }
}

/// Behaviour-stage configuration, in frames.
#[derive(Clone, Debug)]
pub struct BehaviorConfig {
    pub local_window: usize,
    pub global_window: usize,
    pub warmup_frames: usize,
    /// Position scale used when clustering (typically the neighbourhood radius).
    pub position_scale: f64,
    pub clusters: ClusterCount,
    /// Compare each agent against the whole crowd instead of its cluster.
    pub whole_crowd: bool,
    pub seed: u64,
}

impl BehaviorConfig {
    pub fn defaults_for_fps(fps: f64) -> Self {
        BehaviorConfig {
            local_window: (1.0 * fps).round().max(1.0) as usize,
            global_window: (5.0 * fps).round().max(1.0) as usize,
            warmup_frames: (2.0 * fps).round().max(1.0) as usize,
            position_scale: 5.0,
            clusters: ClusterCount::Auto,
            whole_crowd: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Default)]
struct RawParts {
    mean_velocity: Vec2,
    goal_dir: Vec2,
    cluster_flow: Vec2,
}

/// Everything the behaviour stage produced for one agent at one frame.
#[derive(Clone, Debug)]
pub struct AgentFeatures {
    pub local: BehaviorFeature,
    pub global: BehaviorFeature,
    /// Present once the normalizer is warm and the agent's window is full.
    pub local_normalized: Option<FeatureVector>,
    pub global_normalized: Option<FeatureVector>,
}

/// Per-frame output of the behaviour stage.
#[derive(Clone, Debug, Default)]
pub struct FrameFeatures {
    pub frame: u64,
    pub clusters: Vec<Cluster>,
    pub agents: BTreeMap<AgentId, AgentFeatures>,
}

/// Streaming feature extractor: keeps per-agent state windows, clusters each
/// frame, maintains the global-feature windows and the normalizer.
pub struct FeatureEngine {
    config: BehaviorConfig,
    normalizer: Normalizer,
    state_history: BTreeMap<AgentId, VecDeque<PedestrianState>>,
    global_history: BTreeMap<AgentId, VecDeque<RawParts>>,
}

impl FeatureEngine {
    pub fn new(config: BehaviorConfig) -> Self {
        let normalizer = Normalizer::new(config.global_window, config.warmup_frames);
        FeatureEngine {
            config,
            normalizer,
            state_history: BTreeMap::new(),
            global_history: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &BehaviorConfig {
        &self.config
    }

    /// Ingests one frame of tracked states and returns the features.
    pub fn step(&mut self, crowd: &CrowdState) -> FrameFeatures {
        // Forget agents that fell out of the crowd.
        self.state_history.retain(|id, _| crowd.agents.contains_key(id));
        self.global_history.retain(|id, _| crowd.agents.contains_key(id));

        for (id, agent) in &crowd.agents {
            let hist = self.state_history.entry(id.clone()).or_default();
            hist.push_back(agent.state.clone());
            while hist.len() > self.config.local_window {
                hist.pop_front();
            }
        }

        // Raw local features for every tracked agent.
        let mut locals: BTreeMap<AgentId, BehaviorFeature> = BTreeMap::new();
        for (id, hist) in &self.state_history {
            let states: Vec<PedestrianState> = hist.iter().cloned().collect();
            if let Ok(f) = local_feature(&states) {
                locals.insert(id.clone(), f);
            }
        }

        let cluster_input: Vec<(AgentId, Vec2, BehaviorFeature)> = locals
            .iter()
            .map(|(id, f)| (id.clone(), crowd.agents[id].state.position, *f))
            .collect();
        let clusters = assign_clusters(
            &cluster_input,
            self.config.position_scale,
            self.config.clusters,
            self.config.seed,
        );

        // Attach each agent's cluster flow.
        let mut cluster_of: BTreeMap<&AgentId, usize> = BTreeMap::new();
        for cluster in &clusters {
            for member in &cluster.members {
                cluster_of.insert(member, cluster.id);
            }
        }
        for (id, feature) in locals.iter_mut() {
            if let Some(&c) = cluster_of.get(id) {
                *feature = feature.with_cluster_flow(clusters[c].mean_flow);
            }
        }

        // Instantaneous group reference per agent: mean over companions
        // (all cluster members except the agent itself; singletons keep
        // themselves), then averaged over the global window.
        let mut output_agents: BTreeMap<AgentId, AgentFeatures> = BTreeMap::new();
        let mut gated: Vec<(AgentId, BehaviorFeature)> = Vec::new();
        for (id, local) in &locals {
            let companions: Vec<&BehaviorFeature> = if self.config.whole_crowd {
                locals
                    .iter()
                    .filter(|(other, _)| locals.len() < 2 || *other != id)
                    .map(|(_, f)| f)
                    .collect()
            } else {
                let c = cluster_of[&id];
                let members = &clusters[c].members;
                members
                    .iter()
                    .filter(|m| members.len() < 2 || *m != id)
                    .map(|m| &locals[m])
                    .collect()
            };
            let inv = 1.0 / companions.len() as f64;
            let mut parts = RawParts::default();
            for f in companions {
                parts.mean_velocity += f.mean_velocity;
                parts.goal_dir += f.goal_dir;
                parts.cluster_flow += f.cluster_flow;
            }
            parts.mean_velocity = parts.mean_velocity * inv;
            parts.goal_dir = parts.goal_dir * inv;
            parts.cluster_flow = parts.cluster_flow * inv;

            let ghist = self.global_history.entry(id.clone()).or_default();
            ghist.push_back(parts);
            while ghist.len() > self.config.global_window {
                ghist.pop_front();
            }
            let mut acc = RawParts::default();
            for p in ghist.iter() {
                acc.mean_velocity += p.mean_velocity;
                acc.goal_dir += p.goal_dir;
                acc.cluster_flow += p.cluster_flow;
            }
            let ginv = 1.0 / ghist.len() as f64;
            let global = BehaviorFeature::from_parts(
                acc.mean_velocity * ginv,
                acc.goal_dir * ginv,
                acc.cluster_flow * ginv,
            );

            if self.state_history[id].len() >= self.config.local_window {
                gated.push((id.clone(), *local));
            }
            output_agents.insert(
                id.clone(),
                AgentFeatures {
                    local: *local,
                    global,
                    local_normalized: None,
                    global_normalized: None,
                },
            );
        }

        // Statistics learn from agents with full windows, then this frame is
        // scored against the updated statistics.
        let gated_components: Vec<[f64; 7]> = gated.iter().map(|(_, f)| f.components()).collect();
        self.normalizer.observe_frame(&gated_components);

        if self.normalizer.is_warm() {
            for (id, _) in &gated {
                let entry = output_agents.get_mut(id).expect("gated agent has output entry");
                entry.local_normalized = self.normalizer.normalize(&entry.local, crowd.frame).ok();
                entry.global_normalized = self.normalizer.normalize(&entry.global, crowd.frame).ok();
            }
        }

        FrameFeatures {
            frame: crowd.frame,
            clusters,
            agents: output_agents,
        }
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix6;

    fn state(p: Vec2, v: Vec2, g: Vec2) -> PedestrianState {
        PedestrianState {
            position: p,
            velocity: v,
            goal: g,
            covariance: Matrix6::identity() * 1e-4,
        }
    }

    fn feature(vx: f64, vy: f64) -> BehaviorFeature {
        BehaviorFeature::from_parts(Vec2::new(vx, vy), Vec2::new(vx, vy), Vec2::ZERO)
    }

    #[test]
    fn local_feature_averages_velocity_and_derives_heading() {
        let history = vec![
            state(Vec2::new(0.0, 0.0), Vec2::new(0.03, 0.0), Vec2::new(10.0, 0.0)),
            state(Vec2::new(0.03, 0.0), Vec2::new(0.05, 0.0), Vec2::new(10.0, 0.0)),
        ];
        let f = local_feature(&history).unwrap();
        assert!((f.mean_velocity - Vec2::new(0.04, 0.0)).norm() < 1e-12);
        assert!((f.speed - 0.04).abs() < 1e-12);
        assert!((f.heading - Vec2::new(1.0, 0.0)).norm() < 1e-12);
        assert!((f.goal_dir - Vec2::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn stationary_history_zero_flags_heading() {
        let history = vec![state(Vec2::new(1.0, 1.0), Vec2::ZERO, Vec2::new(1.0, 1.0))];
        let f = local_feature(&history).unwrap();
        assert_eq!(f.heading, Vec2::ZERO);
        assert_eq!(f.goal_dir, Vec2::ZERO);
        assert_eq!(f.speed, 0.0);
    }

    #[test]
    fn empty_window_is_an_error() {
        assert_eq!(local_feature(&[]), Err(BehaviorError::EmptyWindow));
    }

    #[test]
    fn speed_heading_consistency_holds_for_random_inputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let v = Vec2::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
            let f = BehaviorFeature::from_parts(v, Vec2::new(1.0, 0.0), Vec2::ZERO);
            assert!((f.speed - f.mean_velocity.norm()).abs() < 1e-9);
            if f.speed > EPSILON_SPEED {
                assert!((f.heading * f.speed - f.mean_velocity).norm() < 1e-9);
                assert!((f.heading.norm() - 1.0).abs() < 1e-9);
            } else {
                assert_eq!(f.heading, Vec2::ZERO);
            }
        }
    }

    #[test]
    fn homogeneous_compact_lane_stays_one_cluster() {
        let agents: Vec<(AgentId, Vec2, BehaviorFeature)> = (0..8)
            .map(|i| {
                (
                    AgentId::new(format!("a{i}")),
                    Vec2::new(i as f64 * 0.4, 0.0),
                    feature(0.04, 0.0),
                )
            })
            .collect();
        let clusters = assign_clusters(&agents, 5.0, ClusterCount::Auto, 1);
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].members.len(), 8);
        assert!((clusters[0].mean_flow - Vec2::new(0.04, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn single_agent_forms_single_cluster() {
        let agents = vec![(AgentId::new("solo"), Vec2::ZERO, feature(0.04, 0.0))];
        let clusters = assign_clusters(&agents, 5.0, ClusterCount::Auto, 9);
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].members, vec![AgentId::new("solo")]);
    }

    /// Exhaustive search over all 2-partitions, written independently of the
    /// clustering code.
    fn best_two_partition(points: &[[f64; 4]]) -> Vec<bool> {
        let n = points.len();
        let mut best_sse = f64::INFINITY;
        let mut best = vec![false; n];
        for mask in 1..(1u32 << (n - 1)) {
            let side: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
            let mut sse = 0.0;
            for group in [false, true] {
                let members: Vec<&[f64; 4]> = points
                    .iter()
                    .zip(&side)
                    .filter(|(_, &s)| s == group)
                    .map(|(p, _)| p)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let mut mean = [0.0f64; 4];
                for p in &members {
                    for d in 0..4 {
                        mean[d] += p[d];
                    }
                }
                for m in mean.iter_mut() {
                    *m /= members.len() as f64;
                }
                for p in &members {
                    sse += dist_sq(p, &mean);
                }
            }
            if sse < best_sse {
                best_sse = sse;
                best = side;
            }
        }
        best
    }

    #[test]
    fn opposing_lanes_split_exactly_by_lane() {
        let mut agents = Vec::new();
        for i in 0..6 {
            agents.push((
                AgentId::new(format!("e{i}")),
                Vec2::new(i as f64 * 1.5, 0.0),
                feature(0.04, 0.0),
            ));
            agents.push((
                AgentId::new(format!("w{i}")),
                Vec2::new(i as f64 * 1.5, 10.0),
                feature(-0.04, 0.0),
            ));
        }
        let clusters = assign_clusters(&agents, 5.0, ClusterCount::Fixed(2), 3);
        assert_eq!(clusters.len(), 2);

        // Optimal partition by exhaustive enumeration.
        let mut sorted = agents.clone();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        let points: Vec<[f64; 4]> = sorted
            .iter()
            .map(|(_, p, f)| cluster_point(*p, f, 5.0))
            .collect();
        let side = best_two_partition(&points);
        let group_a: Vec<AgentId> = sorted
            .iter()
            .zip(&side)
            .filter(|(_, &s)| !s)
            .map(|((id, _, _), _)| id.clone())
            .collect();
        let found: Vec<&Vec<AgentId>> = clusters.iter().map(|c| &c.members).collect();
        assert!(
            found.iter().any(|m| **m == group_a),
            "k-means partition differs from the enumerated optimum"
        );
        // And that optimum is the by-lane split.
        for cluster in &clusters {
            let prefixes: std::collections::BTreeSet<char> =
                cluster.members.iter().map(|id| id.as_str().chars().next().unwrap()).collect();
            assert_eq!(prefixes.len(), 1, "cluster mixes lanes: {:?}", cluster.members);
        }
    }

    #[test]
    fn opposing_lanes_found_automatically() {
        let mut agents = Vec::new();
        for i in 0..6 {
            agents.push((
                AgentId::new(format!("e{i}")),
                Vec2::new(i as f64 * 1.5, 0.0),
                feature(0.04, 0.0),
            ));
            agents.push((
                AgentId::new(format!("w{i}")),
                Vec2::new(i as f64 * 1.5, 10.0),
                feature(-0.04, 0.0),
            ));
        }
        let clusters = assign_clusters(&agents, 5.0, ClusterCount::Auto, 3);
        assert_eq!(clusters.len(), 2);
    }

    #[test]
    fn clustering_is_permutation_invariant_and_deterministic() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut agents = Vec::new();
        for i in 0..10 {
            let side = if i < 5 { 0.0 } else { 8.0 };
            let dir = if i < 5 { 0.04 } else { -0.04 };
            agents.push((
                AgentId::new(format!("p{i}")),
                Vec2::new(i as f64 * 0.9, side),
                feature(dir, 0.0),
            ));
        }
        let a = assign_clusters(&agents, 5.0, ClusterCount::Fixed(2), 17);
        let mut shuffled = agents.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(99));
        let b = assign_clusters(&shuffled, 5.0, ClusterCount::Fixed(2), 17);
        assert_eq!(a.len(), b.len());
        for (ca, cb) in a.iter().zip(&b) {
            assert_eq!(ca.members, cb.members);
        }
    }

    #[test]
    fn normalizer_floors_zero_variance() {
        let mut norm = Normalizer::new(10, 1);
        let f = feature(0.04, 0.0);
        norm.observe_frame(&[f.components(), f.components()]);
        let v = norm.normalize(&f, 0).unwrap();
        for c in v.components {
            assert_eq!(c, 0.0);
            assert!(c.is_finite());
        }
    }

    #[test]
    fn normalizer_zero_scores_the_population_mean() {
        let mut norm = Normalizer::new(100, 1);
        let a = feature(0.02, 0.0);
        let b = feature(0.06, 0.0);
        norm.observe_frame(&[a.components(), b.components()]);
        let mid = BehaviorFeature::from_parts(Vec2::new(0.04, 0.0), Vec2::new(1.0, 0.0), Vec2::ZERO);
        let v = norm.normalize(&mid, 0).unwrap();
        assert!(v.components[0].abs() < 1e-9);
        // Components where mid sits off-mean are pushed away from zero.
        let va = norm.normalize(&a, 0).unwrap();
        assert!(va.components[0] < 0.0);
    }

    #[test]
    fn normalize_before_warmup_errors() {
        let norm = Normalizer::new(10, 3);
        assert_eq!(
            norm.normalize(&feature(0.0, 0.0), 0),
            Err(BehaviorError::NotWarmedUp)
        );
    }

    fn crowd_from(states: Vec<(&str, PedestrianState)>, frame: u64) -> CrowdState {
        let mut crowd = CrowdState {
            frame,
            agents: BTreeMap::new(),
        };
        for (id, s) in states {
            crowd.agents.insert(
                AgentId::new(id),
                crate::domain::TrackedAgent {
                    state: s,
                    status: crate::domain::TrackStatus::Active,
                },
            );
        }
        crowd
    }

    #[test]
    fn homogeneous_crowd_has_equal_local_and_global_features() {
        let mut config = BehaviorConfig::defaults_for_fps(25.0);
        config.local_window = 3;
        config.global_window = 5;
        config.warmup_frames = 2;
        let mut engine = FeatureEngine::new(config);
        let mut last = None;
        for frame in 0..10u64 {
            let states: Vec<(&str, PedestrianState)> = [("a", 0.0), ("b", 1.5), ("c", 3.0)]
                .iter()
                .map(|&(id, y)| {
                    (
                        id,
                        state(
                            Vec2::new(frame as f64 * 0.04, y),
                            Vec2::new(0.04, 0.0),
                            Vec2::new(50.0, y),
                        ),
                    )
                })
                .collect();
            last = Some(engine.step(&crowd_from(states, frame)));
        }
        let features = last.unwrap();
        for af in features.agents.values() {
            let l = af.local.components();
            let g = af.global.components();
            for i in 0..7 {
                assert!((l[i] - g[i]).abs() < 1e-9, "component {i}: {} vs {}", l[i], g[i]);
            }
            // Normalized distance is exactly zero in a uniform crowd.
            let lv = af.local_normalized.unwrap();
            let gv = af.global_normalized.unwrap();
            for i in 0..7 {
                assert_eq!(lv.components[i], gv.components[i]);
            }
        }
    }

    #[test]
    fn singleton_cluster_compares_agent_to_itself() {
        let mut config = BehaviorConfig::defaults_for_fps(25.0);
        config.local_window = 2;
        config.global_window = 1;
        config.warmup_frames = 1;
        let mut engine = FeatureEngine::new(config);
        let mut last = None;
        for frame in 0..4u64 {
            let states = vec![(
                "solo",
                state(Vec2::new(frame as f64 * 0.05, 0.0), Vec2::new(0.05, 0.0), Vec2::new(10.0, 0.0)),
            )];
            last = Some(engine.step(&crowd_from(states, frame)));
        }
        let features = last.unwrap();
        let af = &features.agents[&AgentId::new("solo")];
        let l = af.local.components();
        let g = af.global.components();
        for i in 0..7 {
            assert!((l[i] - g[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn against_flow_agent_sees_companion_consensus() {
        // Three agents, one moving opposite: its global reference is the
        // mean of the other two, which both head along +x.
        let mut config = BehaviorConfig::defaults_for_fps(25.0);
        config.local_window = 1;
        config.global_window = 1;
        config.warmup_frames = 1;
        config.clusters = ClusterCount::Fixed(1);
        let mut engine = FeatureEngine::new(config);
        let states = vec![
            ("a", state(Vec2::new(0.0, 0.0), Vec2::new(0.04, 0.0), Vec2::new(10.0, 0.0))),
            ("b", state(Vec2::new(1.0, 0.0), Vec2::new(0.04, 0.0), Vec2::new(10.0, 0.0))),
            ("r", state(Vec2::new(2.0, 0.0), Vec2::new(-0.04, 0.0), Vec2::new(-10.0, 2.0))),
        ];
        let features = engine.step(&crowd_from(states, 0));
        let af = &features.agents[&AgentId::new("r")];
        assert!((af.global.mean_velocity - Vec2::new(0.04, 0.0)).norm() < 1e-12);
        assert!((af.global.heading - Vec2::new(1.0, 0.0)).norm() < 1e-12);
        // Its own local feature points the other way.
        assert!((af.local.heading - Vec2::new(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn stationary_statistics_normalize_to_zero_mean_unit_std() {
        use rand::{Rng, SeedableRng};
        let mut config = BehaviorConfig::defaults_for_fps(25.0);
        config.local_window = 5;
        config.global_window = 50;
        config.warmup_frames = 10;
        let mut engine = FeatureEngine::new(config);

        // Ten agents with persistent random velocities: a stationary ensemble.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let velocities: Vec<Vec2> = (0..10)
            .map(|_| {
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                let speed = rng.gen_range(0.02..0.08);
                Vec2::new(speed * angle.cos(), speed * angle.sin())
            })
            .collect();

        let mut samples: Vec<[f64; 7]> = Vec::new();
        for frame in 0..1000u64 {
            let states: Vec<(String, PedestrianState)> = velocities
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let p = Vec2::new(i as f64 * 2.0, 0.0) + v * frame as f64;
                    (format!("s{i}"), state(p, v, p + v * 100.0))
                })
                .collect();
            let crowd = {
                let mut c = CrowdState {
                    frame,
                    agents: BTreeMap::new(),
                };
                for (id, s) in states {
                    c.agents.insert(
                        AgentId::new(id),
                        crate::domain::TrackedAgent {
                            state: s,
                            status: crate::domain::TrackStatus::Active,
                        },
                    );
                }
                c
            };
            let out = engine.step(&crowd);
            for af in out.agents.values() {
                if let Some(v) = af.local_normalized {
                    samples.push(v.components);
                }
            }
        }

        assert!(!samples.is_empty());
        for i in 0..7 {
            let n = samples.len() as f64;
            let mean: f64 = samples.iter().map(|s| s[i]).sum::<f64>() / n;
            let var: f64 = samples.iter().map(|s| (s[i] - mean) * (s[i] - mean)).sum::<f64>() / (n - 1.0);
            assert!(mean.abs() < 0.1, "component {i} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 0.2, "component {i} std {}", var.sqrt());
        }
    }
}
