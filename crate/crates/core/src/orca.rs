//! Reciprocal collision avoidance in velocity space.
//!
//! Each neighbour induces one half-plane of admissible velocities; the new
//! velocity is the feasible point closest to the preferred velocity, found by
//! sequential linear programming over the half-planes intersected with the
//! max-speed disc. When the program is infeasible the fallback picks the
//! velocity minimizing the largest constraint violation.

use crate::domain::Vec2;

/// Motion parameters for one agent. All quantities are in scene units and
/// frames (speeds per frame, horizons in frames); [`AgentParams::defaults_for_fps`]
/// converts the per-second defaults.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentParams {
    pub radius: f64,
    pub max_speed: f64,
    pub pref_speed: f64,
    /// Collision lookahead horizon, in frames.
    pub time_horizon: f64,
    /// Only neighbours closer than this are considered.
    pub neighbor_dist: f64,
    pub max_neighbors: usize,
}

impl AgentParams {
    /// Walking-pedestrian defaults (radius 0.3, 1.0 units/s preferred,
    /// 1.6 units/s cap, 2 s horizon, 5-unit neighbourhood) converted to
    /// per-frame units at the given frame rate.
    pub fn defaults_for_fps(fps: f64) -> Self {
        AgentParams {
            radius: 0.3,
            max_speed: 1.6 / fps,
            pref_speed: 1.0 / fps,
            time_horizon: 2.0 * fps,
            neighbor_dist: 5.0,
            max_neighbors: 10,
        }
    }

    /// Same parameters with preferred and maximum speed scaled, for scripted
    /// agents that walk faster or slower than the crowd.
    pub fn with_speed_factor(self, factor: f64) -> Self {
        AgentParams {
            pref_speed: self.pref_speed * factor,
            max_speed: self.max_speed * factor,
            ..self
        }
    }
}

/// Instantaneous motion state of a disc-shaped agent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentKinematics {
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
}

/// Half-plane of admissible velocities: `v` is allowed when
/// `(v - point) . normal >= 0`. The normal is unit length and points into
/// the permitted side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalfPlane {
    pub point: Vec2,
    pub normal: Vec2,
}

impl HalfPlane {
    pub fn new(point: Vec2, normal: Vec2) -> Self {
        debug_assert!((normal.norm() - 1.0).abs() < 1e-9, "half-plane normal must be unit");
        HalfPlane { point, normal }
    }

    pub fn permits(&self, v: Vec2) -> bool {
        (v - self.point).dot(self.normal) >= 0.0
    }

    /// How far `v` sits inside the forbidden side (0 when admissible).
    pub fn violation(&self, v: Vec2) -> f64 {
        (-(v - self.point).dot(self.normal)).max(0.0)
    }
}

/// Distance below which an agent counts as arrived and stops pulling
/// towards its goal.
pub const GOAL_EPSILON: f64 = 1e-6;

/// Full-speed pull towards the goal, or zero when already there.
pub fn preferred_velocity(position: Vec2, goal: Vec2, pref_speed: f64) -> Vec2 {
    let to_goal = goal - position;
    if to_goal.norm() < GOAL_EPSILON {
        Vec2::ZERO
    } else {
        to_goal.normalized_or_zero() * pref_speed
    }
}

/// Indices of the up-to-`max_neighbors` nearest candidates within
/// `neighbor_dist` of `center`, ties broken by index so that callers who
/// order candidates by agent id get a fully deterministic selection.
pub fn select_neighbors(center: Vec2, candidates: &[AgentKinematics], params: &AgentParams) -> Vec<usize> {
    let range_sq = params.neighbor_dist * params.neighbor_dist;
    let mut order: Vec<(f64, usize)> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| (center.distance_squared(c.position), i))
        .filter(|&(d, _)| d <= range_sq)
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.truncate(params.max_neighbors);
    order.into_iter().map(|(_, i)| i).collect()
}

/// Builds one velocity half-plane per selected neighbour. Both agents are
/// assumed to take half the avoidance responsibility. Overlapping agents get
/// a separation constraint built over the time step `dt` instead of the
/// normal horizon.
pub fn orca_halfplanes(
    agent: &AgentKinematics,
    candidates: &[AgentKinematics],
    params: &AgentParams,
    dt: f64,
) -> Vec<HalfPlane> {
    select_neighbors(agent.position, candidates, params)
        .into_iter()
        .map(|i| halfplane_for_pair(agent, &candidates[i], params.time_horizon, dt))
        .collect()
}

fn halfplane_for_pair(agent: &AgentKinematics, other: &AgentKinematics, tau: f64, dt: f64) -> HalfPlane {
    let relative_position = other.position - agent.position;
    let relative_velocity = agent.velocity - other.velocity;
    let dist_sq = relative_position.norm_squared();
    let combined_radius = agent.radius + other.radius;
    let combined_radius_sq = combined_radius * combined_radius;

    // u is the smallest change to the relative velocity that leaves the
    // velocity obstacle; the admissible normal points along it.
    let (u, normal);
    if dist_sq > combined_radius_sq {
        let inv_tau = 1.0 / tau;
        // Vector from the truncation-disc centre to the relative velocity.
        let w = relative_velocity - relative_position * inv_tau;
        let w_len_sq = w.norm_squared();
        let dot = w.dot(relative_position);
        if dot < 0.0 && dot * dot > combined_radius_sq * w_len_sq {
            // Closest exit is through the truncation disc itself.
            let w_len = w_len_sq.sqrt();
            let unit_w = safe_unit(w, relative_position);
            normal = unit_w;
            u = unit_w * (combined_radius * inv_tau - w_len);
        } else {
            // Closest exit is through one of the cone legs.
            let leg = (dist_sq - combined_radius_sq).sqrt();
            let direction = if relative_position.det(w) > 0.0 {
                Vec2::new(
                    relative_position.x * leg - relative_position.y * combined_radius,
                    relative_position.x * combined_radius + relative_position.y * leg,
                ) * (1.0 / dist_sq)
            } else {
                Vec2::new(
                    relative_position.x * leg + relative_position.y * combined_radius,
                    -relative_position.x * combined_radius + relative_position.y * leg,
                ) * (-1.0 / dist_sq)
            };
            u = direction * relative_velocity.dot(direction) - relative_velocity;
            normal = Vec2::new(-direction.y, direction.x);
        }
    } else {
        // Already overlapping: push apart over a single time step.
        let inv_dt = 1.0 / dt;
        let w = relative_velocity - relative_position * inv_dt;
        let w_len = w.norm();
        let unit_w = safe_unit(w, relative_position);
        normal = unit_w;
        u = unit_w * (combined_radius * inv_dt - w_len);
    }

    HalfPlane::new(agent.velocity + u * 0.5, normal)
}

/// Unit vector of `w`, with a deterministic fallback direction when `w`
/// vanishes (exactly matched velocities): push straight away from the
/// neighbour, or along +x if the agents coincide.
fn safe_unit(w: Vec2, relative_position: Vec2) -> Vec2 {
    let n = w.norm();
    if n > 0.0 {
        w * (1.0 / n)
    } else {
        let away = -relative_position;
        let an = away.norm();
        if an > 0.0 {
            away * (1.0 / an)
        } else {
            Vec2::new(1.0, 0.0)
        }
    }
}

const LP_EPSILON: f64 = 1e-10;

// Internal line form of a half-plane: admissible velocities lie to the left
// of `direction` through `point`, i.e. det(direction, point - v) <= 0.
#[derive(Clone, Copy)]
struct Line {
    point: Vec2,
    direction: Vec2,
}

impl Line {
    fn from_halfplane(hp: &HalfPlane) -> Line {
        Line {
            point: hp.point,
            direction: Vec2::new(hp.normal.y, -hp.normal.x),
        }
    }
}

/// Feasible velocity closest to `v_pref` inside all half-planes and the disc
/// of radius `max_speed`. Falls back to minimizing the worst violation when
/// the half-planes have no common point in the disc.
pub fn solve_velocity(halfplanes: &[HalfPlane], v_pref: Vec2, max_speed: f64) -> Vec2 {
    let lines: Vec<Line> = halfplanes.iter().map(Line::from_halfplane).collect();
    let (fail, mut result) = linear_program2(&lines, max_speed, v_pref, false);
    if fail < lines.len() {
        result = linear_program3(&lines, fail, max_speed, result);
    }
    result
}

/// Optimizes along constraint `line_no` clipped by all earlier lines and the
/// disc. Returns `None` when that segment is empty.
fn linear_program1(
    lines: &[Line],
    line_no: usize,
    radius: f64,
    opt_velocity: Vec2,
    direction_opt: bool,
) -> Option<Vec2> {
    let line = lines[line_no];
    let dot = line.point.dot(line.direction);
    let discriminant = dot * dot + radius * radius - line.point.norm_squared();
    if discriminant < 0.0 {
        return None;
    }
    let sqrt_d = discriminant.sqrt();
    let mut t_left = -dot - sqrt_d;
    let mut t_right = -dot + sqrt_d;

    for prev in lines.iter().take(line_no) {
        let denominator = line.direction.det(prev.direction);
        let numerator = prev.direction.det(line.point - prev.point);
        if denominator.abs() <= LP_EPSILON {
            // Parallel: either redundant or contradictory.
            if numerator < 0.0 {
                return None;
            }
            continue;
        }
        let t = numerator / denominator;
        if denominator >= 0.0 {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return None;
        }
    }

    let t = if direction_opt {
        if opt_velocity.dot(line.direction) > 0.0 {
            t_right
        } else {
            t_left
        }
    } else {
        (line.direction.dot(opt_velocity - line.point)).clamp(t_left, t_right)
    };
    Some(line.point + line.direction * t)
}

/// Sequentially satisfies each line, re-optimizing on the boundary of the
/// first violated one. Returns the index of the line where it failed (or
/// `lines.len()` on success) plus the best point found.
fn linear_program2(lines: &[Line], radius: f64, opt_velocity: Vec2, direction_opt: bool) -> (usize, Vec2) {
    let mut result = if direction_opt {
        // opt_velocity is a unit direction: start on the disc boundary.
        opt_velocity * radius
    } else if opt_velocity.norm_squared() > radius * radius {
        opt_velocity.normalized_or_zero() * radius
    } else {
        opt_velocity
    };

    for (i, line) in lines.iter().enumerate() {
        if line.direction.det(line.point - result) > 0.0 {
            match linear_program1(lines, i, radius, opt_velocity, direction_opt) {
                Some(v) => result = v,
                None => return (i, result),
            }
        }
    }
    (lines.len(), result)
}

/// Infeasible fallback: starting from the line that failed, finds the
/// velocity minimizing the maximum signed distance to the violated
/// constraints (the classic projective 3-D program).
fn linear_program3(lines: &[Line], begin_line: usize, radius: f64, mut result: Vec2) -> Vec2 {
    let mut distance = 0.0;
    for i in begin_line..lines.len() {
        if lines[i].direction.det(lines[i].point - result) > distance {
            let mut proj_lines: Vec<Line> = Vec::with_capacity(i);
            for j in 0..i {
                let denominator = lines[i].direction.det(lines[j].direction);
                let point = if denominator.abs() <= LP_EPSILON {
                    if lines[i].direction.dot(lines[j].direction) > 0.0 {
                        // Same direction: line j is redundant here.
                        continue;
                    }
                    (lines[i].point + lines[j].point) * 0.5
                } else {
                    lines[i].point
                        + lines[i].direction
                            * (lines[j].direction.det(lines[i].point - lines[j].point) / denominator)
                };
                let direction = (lines[j].direction - lines[i].direction).normalized_or_zero();
                proj_lines.push(Line { point, direction });
            }

            let opt_direction = Vec2::new(-lines[i].direction.y, lines[i].direction.x);
            let (fail, candidate) = linear_program2(&proj_lines, radius, opt_direction, true);
            if fail >= proj_lines.len() {
                result = candidate;
            }
            distance = lines[i].direction.det(lines[i].point - result);
        }
    }
    result
}

/// One agent in a crowd step: where it is, where it wants to go, and how it
/// moves.
#[derive(Clone, Copy, Debug)]
pub struct MotionAgent {
    pub kinematics: AgentKinematics,
    pub goal: Vec2,
    pub params: AgentParams,
}

/// Advances every agent by one step of length `dt`: all new velocities are
/// solved against the frame-start snapshot, then positions integrate. The
/// update is therefore order-independent and deterministic.
pub fn step_crowd(agents: &[MotionAgent], dt: f64) -> Vec<AgentKinematics> {
    let mut new_states = Vec::with_capacity(agents.len());
    for (i, agent) in agents.iter().enumerate() {
        let others: Vec<AgentKinematics> = agents
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, a)| a.kinematics)
            .collect();
        let v_pref = preferred_velocity(agent.kinematics.position, agent.goal, agent.params.pref_speed);
        let planes = orca_halfplanes(&agent.kinematics, &others, &agent.params, dt);
        let velocity = solve_velocity(&planes, v_pref, agent.params.max_speed);
        new_states.push(AgentKinematics {
            position: agent.kinematics.position + velocity * dt,
            velocity,
            radius: agent.kinematics.radius,
        });
    }
    new_states
}
