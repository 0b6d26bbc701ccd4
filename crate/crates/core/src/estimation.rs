//! Per-agent extended Kalman filtering over the 6-D state
//! (position, velocity, goal), with the collision-avoidance step as the
//! non-linear motion model and goal inference from recent displacement.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{Matrix2, Matrix2x6, Matrix6, Matrix6x2, Vector2, Vector6};
use thiserror::Error;

use crate::domain::{AgentId, CrowdState, Observation, PedestrianState, TrackStatus, TrackedAgent, Vec2};
use crate::orca::{orca_halfplanes, solve_velocity, AgentKinematics, AgentParams};

/// Standard deviations per frame: additive process noise on position,
/// velocity, and goal, plus the position-measurement noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseParams {
    pub process_sigma_pos: f64,
    pub process_sigma_vel: f64,
    pub process_sigma_goal: f64,
    pub meas_sigma: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            process_sigma_pos: 0.01,
            process_sigma_vel: 0.05,
            process_sigma_goal: 0.1,
            meas_sigma: 0.05,
        }
    }
}

/// Tracker behaviour knobs, all in frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterConfig {
    /// Number of recent positions used when re-inferring the goal.
    pub goal_window: usize,
    /// How far ahead of the latest position the inferred goal is placed.
    pub goal_lookahead: f64,
    /// Consecutive missed frames tolerated before a track is dropped.
    pub coast_limit: u32,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            goal_window: 12,
            goal_lookahead: 50.0,
            coast_limit: 12,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EstimationError {
    #[error("goal inference needs at least 2 position samples")]
    InsufficientHistory,
}

/// Extrapolates a goal ahead of the newest position along the mean per-frame
/// displacement of the most recent `goal_window` samples.
pub fn infer_goal(positions: &[Vec2], config: &FilterConfig) -> Result<Vec2, EstimationError> {
    if positions.len() < 2 {
        return Err(EstimationError::InsufficientHistory);
    }
    let take = positions.len().min(config.goal_window.max(2));
    let recent = &positions[positions.len() - take..];
    let first = recent[0];
    let last = recent[recent.len() - 1];
    let mean_step = (last - first) * (1.0 / (recent.len() - 1) as f64);
    Ok(last + mean_step * config.goal_lookahead)
}

/// Per-axis variance of a goal extrapolated from `samples` noisy positions:
/// the estimate is `last * a - first * b` with `b = lookahead / (samples - 1)`
/// and `a = 1 + b`, so independent per-axis noise of std `sigma` on each
/// endpoint yields `(a^2 + b^2) * sigma^2`.
fn extrapolated_goal_variance(samples: usize, lookahead: f64, sigma: f64) -> f64 {
    let b = lookahead / (samples.max(2) as f64 - 1.0);
    let a = 1.0 + b;
    (a * a + b * b) * sigma * sigma
}

/// Overwrites the goal block of a covariance after the goal mean has been
/// recomputed from position history: the old block described a goal that no
/// longer exists, so carrying it (or its cross terms) forward would let an
/// inflated goal variance leak into the velocity gain. The result stays PSD
/// because the remaining leading block of a PSD matrix is PSD.
fn reset_goal_covariance(covariance: &mut Matrix6<f64>, goal_var: f64) {
    for i in 0..6 {
        covariance[(i, 4)] = 0.0;
        covariance[(i, 5)] = 0.0;
        covariance[(4, i)] = 0.0;
        covariance[(5, i)] = 0.0;
    }
    covariance[(4, 4)] = goal_var;
    covariance[(5, 5)] = goal_var;
}

fn state_to_vector(s: &PedestrianState) -> Vector6<f64> {
    Vector6::new(s.position.x, s.position.y, s.velocity.x, s.velocity.y, s.goal.x, s.goal.y)
}

fn vector_to_parts(x: &Vector6<f64>) -> (Vec2, Vec2, Vec2) {
    (
        Vec2::new(x[0], x[1]),
        Vec2::new(x[2], x[3]),
        Vec2::new(x[4], x[5]),
    )
}

/// The deterministic one-step motion map: keep the current velocity unless
/// the collision constraints against the frozen neighbours bend it, then
/// integrate position. With no neighbours this is exactly the
/// constant-velocity transition, so actual walking speed stays observable
/// through position innovations instead of being forced to a nominal
/// preferred speed. The goal rides along unchanged; it carries intent for
/// feature reporting, not the prediction.
fn motion_map(
    x: &Vector6<f64>,
    others: &[AgentKinematics],
    params: &AgentParams,
    dt: f64,
) -> Vector6<f64> {
    let (position, velocity, goal) = vector_to_parts(x);
    let body = AgentKinematics {
        position,
        velocity,
        radius: params.radius,
    };
    let planes = orca_halfplanes(&body, others, params, dt);
    let v_new = solve_velocity(&planes, velocity, params.max_speed);
    let p_new = position + v_new * dt;
    Vector6::new(p_new.x, p_new.y, v_new.x, v_new.y, goal.x, goal.y)
}

const JACOBIAN_STEP: f64 = 1e-5;

/// Symmetrize and clamp negative eigenvalues so the covariance stays a valid
/// (PSD) matrix despite linearization error.
fn sanitize_covariance(c: Matrix6<f64>) -> Matrix6<f64> {
    let sym = (c + c.transpose()) * 0.5;
    let eigen = nalgebra::SymmetricEigen::new(sym);
    if eigen.eigenvalues.iter().all(|&l| l >= 0.0) {
        return sym;
    }
    let clamped = eigen.eigenvalues.map(|l| l.max(0.0));
    let mut rebuilt = eigen.eigenvectors * Matrix6::from_diagonal(&clamped) * eigen.eigenvectors.transpose();
    rebuilt = (rebuilt + rebuilt.transpose()) * 0.5;
    rebuilt
}

/// EKF prediction: mean through the motion map, covariance through its
/// central-difference Jacobian, plus diagonal process noise.
pub fn predict(
    belief: &PedestrianState,
    others: &[AgentKinematics],
    params: &AgentParams,
    dt: f64,
    noise: &NoiseParams,
) -> PedestrianState {
    let x = state_to_vector(belief);
    let mean = motion_map(&x, others, params, dt);

    let mut jac = Matrix6::<f64>::zeros();
    for i in 0..6 {
        let mut plus = x;
        let mut minus = x;
        plus[i] += JACOBIAN_STEP;
        minus[i] -= JACOBIAN_STEP;
        let diff = (motion_map(&plus, others, params, dt) - motion_map(&minus, others, params, dt))
            * (1.0 / (2.0 * JACOBIAN_STEP));
        jac.set_column(i, &diff);
    }

    let q = Matrix6::from_diagonal(&Vector6::new(
        noise.process_sigma_pos * noise.process_sigma_pos,
        noise.process_sigma_pos * noise.process_sigma_pos,
        noise.process_sigma_vel * noise.process_sigma_vel,
        noise.process_sigma_vel * noise.process_sigma_vel,
        noise.process_sigma_goal * noise.process_sigma_goal,
        noise.process_sigma_goal * noise.process_sigma_goal,
    )) * dt;

    let covariance = sanitize_covariance(jac * belief.covariance * jac.transpose() + q);
    let (position, velocity, goal) = vector_to_parts(&mean);
    PedestrianState {
        position,
        velocity,
        goal,
        covariance,
    }
}

/// Linear position-measurement update in Joseph form, which keeps the
/// covariance symmetric positive semi-definite by construction.
pub fn update(belief: &PedestrianState, z: Vec2, noise: &NoiseParams) -> PedestrianState {
    let mut h = Matrix2x6::<f64>::zeros();
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    let r = Matrix2::from_diagonal(&Vector2::new(
        noise.meas_sigma * noise.meas_sigma,
        noise.meas_sigma * noise.meas_sigma,
    ));

    let x = state_to_vector(belief);
    let c = belief.covariance;
    let s = h * c * h.transpose() + r;
    let s_inv = s.try_inverse().expect("innovation covariance is positive definite");
    let k: Matrix6x2<f64> = c * h.transpose() * s_inv;

    let innovation = Vector2::new(z.x, z.y) - h * x;
    let mean = x + k * innovation;

    let i_kh = Matrix6::identity() - k * h;
    let covariance = sanitize_covariance(i_kh * c * i_kh.transpose() + k * r * k.transpose());

    let (position, velocity, goal) = vector_to_parts(&mean);
    PedestrianState {
        position,
        velocity,
        goal,
        covariance,
    }
}

struct Track {
    state: PedestrianState,
    missed: u32,
    /// Posterior positions, newest last; capped at `goal_window`.
    history: VecDeque<Vec2>,
    /// Frames since this track was created.
    age: u64,
    observed_count: u64,
    last_observation: Option<Vec2>,
}

/// Online multi-agent tracker: one EKF per agent id, stepped frame by frame.
/// The API only accepts the current frame's observations, so estimates can
/// never depend on future input.
pub struct Tracker {
    params: AgentParams,
    noise: NoiseParams,
    config: FilterConfig,
    tracks: BTreeMap<AgentId, Track>,
}

impl Tracker {
    pub fn new(params: AgentParams, noise: NoiseParams, config: FilterConfig) -> Self {
        Tracker {
            params,
            noise,
            config,
            tracks: BTreeMap::new(),
        }
    }

    /// Advances all tracks to `frame` using this frame's observations:
    /// predict every track against the frame-start snapshot, update the
    /// observed ones, coast the missed ones, start tracks for new ids, and
    /// drop tracks that have coasted too long.
    pub fn step(&mut self, frame: u64, observations: &[Observation]) -> CrowdState {
        let by_agent: BTreeMap<&AgentId, Vec2> = observations
            .iter()
            .map(|o| (&o.agent, o.position))
            .collect();

        // Frame-start snapshot of every live track, in id order.
        let snapshot: Vec<(AgentId, AgentKinematics)> = self
            .tracks
            .iter()
            .map(|(id, t)| {
                (
                    id.clone(),
                    AgentKinematics {
                        position: t.state.position,
                        velocity: t.state.velocity,
                        radius: self.params.radius,
                    },
                )
            })
            .collect();

        let mut statuses: BTreeMap<AgentId, TrackStatus> = BTreeMap::new();
        for (id, track) in self.tracks.iter_mut() {
            let others: Vec<AgentKinematics> = snapshot
                .iter()
                .filter(|(other_id, _)| other_id != id)
                .map(|&(_, k)| k)
                .collect();
            track.state = predict(&track.state, &others, &self.params, 1.0, &self.noise);

            if let Some(&z) = by_agent.get(id) {
                track.state = update(&track.state, z, &self.noise);
                track.missed = 0;
                track.observed_count += 1;
                if track.observed_count == 2 {
                    // Second sighting completes two-point initialization:
                    // position at the measurement, velocity from the raw
                    // displacement, goal extrapolated along it, covariance
                    // from two-point differencing of independent position
                    // measurements. Without the position snap the first update
                    // blends the measurement against a zero-velocity prior and
                    // the resulting transient dwarfs steady-state error.
                    if let Some(prev) = track.last_observation {
                        let v = z - prev;
                        let s2 = self.noise.meas_sigma * self.noise.meas_sigma;
                        let mut cov = Matrix6::zeros();
                        for axis in 0..2 {
                            cov[(axis, axis)] = s2;
                            cov[(axis, axis + 2)] = s2;
                            cov[(axis + 2, axis)] = s2;
                            cov[(axis + 2, axis + 2)] = 2.0 * s2;
                        }
                        track.state.position = z;
                        track.state.velocity = v;
                        track.state.goal = z + v * self.config.goal_lookahead;
                        track.state.covariance = cov;
                        let var = extrapolated_goal_variance(
                            2,
                            self.config.goal_lookahead,
                            self.noise.meas_sigma,
                        );
                        reset_goal_covariance(&mut track.state.covariance, var);
                    }
                }
                track.last_observation = Some(z);
                statuses.insert(id.clone(), TrackStatus::Active);
            } else {
                track.missed += 1;
                if track.missed > self.config.coast_limit {
                    statuses.insert(id.clone(), TrackStatus::Lost);
                } else {
                    statuses.insert(id.clone(), TrackStatus::Coasting(track.missed));
                }
            }

            track.age += 1;
            track.history.push_back(track.state.position);
            while track.history.len() > self.config.goal_window.max(2) {
                track.history.pop_front();
            }
            // Periodic goal refresh from observed motion.
            if track.history.len() >= 2 && track.age % self.config.goal_window as u64 == 0 {
                let positions: Vec<Vec2> = track.history.iter().copied().collect();
                if let Ok(goal) = infer_goal(&positions, &self.config) {
                    track.state.goal = goal;
                    let take = positions.len().min(self.config.goal_window.max(2));
                    let var = extrapolated_goal_variance(
                        take,
                        self.config.goal_lookahead,
                        self.noise.meas_sigma,
                    );
                    reset_goal_covariance(&mut track.state.covariance, var);
                }
            }
        }

        // Brand-new ids start a fresh track at the measured position.
        for (id, &z) in &by_agent {
            if !self.tracks.contains_key(*id) {
                let meas_var = self.noise.meas_sigma * self.noise.meas_sigma;
                let vel_sigma = 2.0 * self.noise.meas_sigma;
                let covariance = Matrix6::from_diagonal(&Vector6::new(
                    meas_var,
                    meas_var,
                    vel_sigma * vel_sigma,
                    vel_sigma * vel_sigma,
                    100.0,
                    100.0,
                ));
                let mut history = VecDeque::new();
                history.push_back(z);
                self.tracks.insert(
                    (*id).clone(),
                    Track {
                        state: PedestrianState {
                            position: z,
                            velocity: Vec2::ZERO,
                            goal: z,
                            covariance,
                        },
                        missed: 0,
                        history,
                        age: 1,
                        observed_count: 1,
                        last_observation: Some(z),
                    },
                );
                statuses.insert((*id).clone(), TrackStatus::Active);
            }
        }

        // Lost tracks leave the crowd state entirely.
        let lost: Vec<AgentId> = statuses
            .iter()
            .filter(|(_, s)| **s == TrackStatus::Lost)
            .map(|(id, _)| id.clone())
            .collect();
        for id in &lost {
            self.tracks.remove(id);
        }

        let mut crowd = CrowdState {
            frame,
            agents: BTreeMap::new(),
        };
        for (id, track) in &self.tracks {
            let status = statuses.get(id).copied().unwrap_or(TrackStatus::Active);
            crowd.agents.insert(
                id.clone(),
                TrackedAgent {
                    state: track.state.clone(),
                    status,
                },
            );
        }
        crowd
    }
}
