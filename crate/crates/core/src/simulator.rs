//! Synthetic crowd generator: preset scenarios with scripted deviations,
//! ground-truth labels, and measurement corruption for robustness runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::domain::{AgentId, Observation, Vec2};
use crate::orca::{step_crowd, AgentKinematics, AgentParams, MotionAgent};

/// How far past the agent a scripted direction override places the goal.
const OVERRIDE_LOOKAHEAD: f64 = 50.0;
/// Agents this close to their goal stop walking.
const ARRIVAL_RADIUS: f64 = 0.3;
/// Initial position jitter half-width, small enough to keep spawn spacing.
const SPAWN_JITTER: f64 = 0.2;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimulatorError {
    #[error("unknown preset '{name}' (expected one of {known})")]
    UnknownPreset { name: String, known: String },
    #[error("preset '{name}' has a scripted population and cannot be resized")]
    FixedPopulation { name: String },
}

/// What a scripted agent does while its window is active.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScriptKind {
    /// Walk back against the agent's own original direction.
    AgainstFlow,
    /// Turn around mid-walk (same override, scripted alongside a crowd
    /// reversal so only the early part is deviant).
    UTurn,
    /// Move at a multiple of the nominal speed for the whole window.
    SpeedOutlier(f64),
    /// Abruptly break into a run toward the original goal.
    SuddenRun(f64),
}

/// One scripted deviation, active on frames `start..end`.
#[derive(Clone, Copy, Debug)]
pub struct ScriptedAnomaly {
    /// Index into [`Scenario::agents`].
    pub agent: usize,
    pub start: u64,
    pub end: u64,
    /// Ground truth may end earlier than the script when the rest of the
    /// crowd starts doing the same thing.
    pub label_end: Option<u64>,
    pub kind: ScriptKind,
}

impl ScriptedAnomaly {
    fn active(&self, frame: u64) -> bool {
        frame >= self.start && frame < self.end
    }

    fn labeled(&self, frame: u64) -> bool {
        frame >= self.start && frame < self.label_end.unwrap_or(self.end)
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioAgent {
    pub id: AgentId,
    pub position: Vec2,
    pub goal: Vec2,
}

/// A complete simulation setup.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub params: AgentParams,
    pub agents: Vec<ScenarioAgent>,
    pub scripts: Vec<ScriptedAnomaly>,
    /// When set, every agent's goal is mirrored through its own position at
    /// this frame, so the whole crowd turns back at once.
    pub crowd_reversal: Option<u64>,
    pub frames: u64,
}

/// Simulated trajectories plus per-observation ground truth.
#[derive(Clone, Debug)]
pub struct SimulationResult {
    pub observations: Vec<Observation>,
    /// Aligned with `observations`: true where the agent was scripted as
    /// deviant at that frame.
    pub labels: Vec<bool>,
}

pub const PRESET_NAMES: [&str; 8] = [
    "lane_flow",
    "bidirectional",
    "crossing",
    "circle_swap",
    "against_flow_63",
    "biker",
    "sudden_run",
    "uturn",
];

fn agent_id(index: usize) -> AgentId {
    AgentId::new(format!("a{index:03}"))
}

/// Lays out `count` agents on a grid (`cols` wide) walking toward +x.
fn lane_agents(count: usize, cols: usize, dx: f64, dy: f64, rng: &mut ChaCha8Rng) -> Vec<ScenarioAgent> {
    (0..count)
        .map(|i| {
            let base = Vec2::new((i % cols) as f64 * dx, (i / cols) as f64 * dy);
            let jitter = Vec2::new(
                rng.gen_range(-SPAWN_JITTER..SPAWN_JITTER),
                rng.gen_range(-SPAWN_JITTER..SPAWN_JITTER),
            );
            let position = base + jitter;
            ScenarioAgent {
                id: agent_id(i),
                position,
                goal: position + Vec2::new(60.0, 0.0),
            }
        })
        .collect()
}

/// Agents on a circle walking to their antipodes. Everyone crosses the
/// center at once, so the crunch only resolves safely when every agent can
/// see the whole group: the neighbor cap is lifted to `count` and the search
/// radius covers the full closing distance within the avoidance horizon.
/// Ratio of the tangential goal offset to the ring radius. A perfectly
/// antipodal swap funnels every agent through one point and the velocity
/// constraints pinch to an empty set there; biasing all goals the same way
/// around the ring resolves the crossing into a single smooth vortex.
const SWIRL_RATIO: f64 = 0.7;

pub fn circle_swap_scenario(count: usize, radius: f64, frames: u64, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let swirl = SWIRL_RATIO * radius;
    let agents = (0..count)
        .map(|i| {
            let angle = i as f64 / count as f64 * std::f64::consts::TAU;
            let jitter = Vec2::new(
                rng.gen_range(-SPAWN_JITTER..SPAWN_JITTER),
                rng.gen_range(-SPAWN_JITTER..SPAWN_JITTER),
            );
            let position = Vec2::new(radius * angle.cos(), radius * angle.sin()) + jitter;
            let antipode = Vec2::new(-radius * angle.cos(), -radius * angle.sin());
            let tangent = Vec2::new(-antipode.y, antipode.x) * (1.0 / radius);
            ScenarioAgent {
                id: agent_id(i),
                position,
                goal: antipode + tangent * swirl,
            }
        })
        .collect();
    let mut params = AgentParams::defaults_for_fps(25.0);
    // Everyone sees everyone: a long horizon plus full visibility keeps the
    // vortex coordinated instead of reacting pairwise at the last moment.
    params.max_neighbors = count;
    params.time_horizon = 200.0;
    params.neighbor_dist = params.neighbor_dist.max(2.0 * params.max_speed * params.time_horizon);
    Scenario {
        name: "circle_swap".into(),
        params,
        agents,
        scripts: Vec::new(),
        crowd_reversal: None,
        frames,
    }
}

/// Builds one of the named presets. The seed only perturbs spawn positions;
/// the scripted structure is fixed per preset.
pub fn build_scenario(preset: &str, seed: u64) -> Result<Scenario, SimulatorError> {
    build_scenario_sized(preset, seed, None)
}

/// Like [`build_scenario`], with the population size overridden for the
/// unscripted presets. Scripted presets define their own cast and refuse
/// a resize rather than silently ignoring it.
pub fn build_scenario_sized(
    preset: &str,
    seed: u64,
    agent_count: Option<usize>,
) -> Result<Scenario, SimulatorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = AgentParams::defaults_for_fps(25.0);
    if agent_count.is_some()
        && matches!(preset, "against_flow_63" | "biker" | "sudden_run" | "uturn")
    {
        return Err(SimulatorError::FixedPopulation { name: preset.into() });
    }
    let scenario = match preset {
        "lane_flow" => {
            let count = agent_count.unwrap_or(40);
            Scenario {
                name: preset.into(),
                params,
                agents: lane_agents(count, 8, 2.2, 1.4, &mut rng),
                scripts: Vec::new(),
                crowd_reversal: None,
                frames: 800,
            }
        }
        "bidirectional" => {
            let half = agent_count.unwrap_or(40) / 2;
            let mut agents = lane_agents(half, 5, 2.2, 1.4, &mut rng);
            for (i, agent) in lane_agents(half, 5, 2.2, 1.4, &mut rng).into_iter().enumerate() {
                let position = agent.position + Vec2::new(22.0, 7.0);
                agents.push(ScenarioAgent {
                    id: agent_id(half + i),
                    position,
                    goal: position + Vec2::new(-60.0, 0.0),
                });
            }
            Scenario {
                name: preset.into(),
                params,
                agents,
                scripts: Vec::new(),
                crowd_reversal: None,
                frames: 800,
            }
        }
        "crossing" => {
            let half = agent_count.unwrap_or(40) / 2;
            let mut agents = lane_agents(half, 5, 2.2, 1.4, &mut rng);
            for i in 0..half {
                let base = Vec2::new(12.0 + (i % 4) as f64 * 1.4, -14.0 + (i / 4) as f64 * 2.2);
                let jitter = Vec2::new(
                    rng.gen_range(-SPAWN_JITTER..SPAWN_JITTER),
                    rng.gen_range(-SPAWN_JITTER..SPAWN_JITTER),
                );
                let position = base + jitter;
                agents.push(ScenarioAgent {
                    id: agent_id(half + i),
                    position,
                    goal: position + Vec2::new(0.0, 60.0),
                });
            }
            Scenario {
                name: preset.into(),
                params,
                agents,
                scripts: Vec::new(),
                crowd_reversal: None,
                frames: 700,
            }
        }
        "circle_swap" => {
            // Radius grows with the head-count so ring spacing stays fixed,
            // and the frame budget grows with the crossing distance.
            let count = agent_count.unwrap_or(20);
            let radius = 0.4 * count as f64;
            circle_swap_scenario(count, radius, (75.0 * radius) as u64, seed)
        }
        "against_flow_63" => {
            // 62 agents flow toward +x; one mid-crowd agent turns against
            // the stream for a window sized so it never leaves the crowd.
            // Its spawn sits between grid cells.
            let mut agents = lane_agents(62, 13, 2.2, 1.4, &mut rng);
            let position = Vec2::new(14.3, 3.5);
            agents.push(ScenarioAgent {
                id: agent_id(62),
                position,
                goal: position + Vec2::new(60.0, 0.0),
            });
            Scenario {
                name: preset.into(),
                params,
                agents,
                scripts: vec![ScriptedAnomaly {
                    agent: 62,
                    start: 150,
                    end: 290,
                    label_end: None,
                    kind: ScriptKind::AgainstFlow,
                }],
                crowd_reversal: None,
                frames: 600,
            }
        }
        "biker" => {
            // A fast rider enters the pedestrian flow from behind and
            // threads through it at triple speed.
            let mut agents = lane_agents(40, 8, 2.2, 1.4, &mut rng);
            let position = Vec2::new(-6.0, 2.8);
            agents.push(ScenarioAgent {
                id: agent_id(40),
                position,
                goal: position + Vec2::new(80.0, 0.0),
            });
            Scenario {
                name: preset.into(),
                params,
                agents,
                scripts: vec![ScriptedAnomaly {
                    agent: 40,
                    start: 150,
                    end: 350,
                    label_end: None,
                    kind: ScriptKind::SpeedOutlier(3.0),
                }],
                crowd_reversal: None,
                frames: 600,
            }
        }
        "sudden_run" => {
            let agents = lane_agents(40, 8, 2.2, 1.4, &mut rng);
            Scenario {
                name: preset.into(),
                params,
                agents,
                scripts: vec![ScriptedAnomaly {
                    agent: 19,
                    start: 300,
                    end: 440,
                    label_end: None,
                    kind: ScriptKind::SuddenRun(2.5),
                }],
                crowd_reversal: None,
                frames: 700,
            }
        }
        "uturn" => {
            // One agent turns around at 200; the whole crowd follows at 260,
            // at which point the script ends and the former rebel steers by
            // the same flipped goal as everyone else — from then on it is
            // indistinguishable, and the ground truth says so.
            let agents = lane_agents(40, 8, 2.2, 1.4, &mut rng);
            Scenario {
                name: preset.into(),
                params,
                agents,
                scripts: vec![ScriptedAnomaly {
                    agent: 19,
                    start: 200,
                    end: 260,
                    label_end: None,
                    kind: ScriptKind::UTurn,
                }],
                crowd_reversal: Some(260),
                frames: 500,
            }
        }
        other => {
            return Err(SimulatorError::UnknownPreset {
                name: other.into(),
                known: PRESET_NAMES.join(", "),
            })
        }
    };
    Ok(scenario)
}

/// Runs the scenario and returns noiseless trajectories with ground truth.
pub fn simulate(scenario: &Scenario) -> SimulationResult {
    let n = scenario.agents.len();
    let mut positions: Vec<Vec2> = scenario.agents.iter().map(|a| a.position).collect();
    let mut velocities: Vec<Vec2> = vec![Vec2::ZERO; n];
    let mut base_goals: Vec<Vec2> = scenario.agents.iter().map(|a| a.goal).collect();

    let mut observations = Vec::with_capacity(n * scenario.frames as usize);
    let mut labels = Vec::with_capacity(n * scenario.frames as usize);

    for frame in 0..scenario.frames {
        if scenario.crowd_reversal == Some(frame) {
            // Mirror every goal through the holder's current position; an
            // agent already walking back keeps walking back.
            for (goal, &position) in base_goals.iter_mut().zip(&positions) {
                *goal = position * 2.0 - *goal;
            }
        }

        for i in 0..n {
            observations.push(Observation {
                frame,
                agent: scenario.agents[i].id.clone(),
                position: positions[i],
            });
            let labeled = scenario
                .scripts
                .iter()
                .any(|s| s.agent == i && s.labeled(frame));
            labels.push(labeled);
        }

        // Effective goals and params under the active scripts.
        let crowd: Vec<MotionAgent> = (0..n)
            .map(|i| {
                let mut goal = base_goals[i];
                let mut params = scenario.params;
                for script in scenario.scripts.iter().filter(|s| s.agent == i && s.active(frame)) {
                    match script.kind {
                        ScriptKind::AgainstFlow | ScriptKind::UTurn => {
                            let back = (positions[i] - base_goals[i]).normalized_or_zero();
                            goal = positions[i] + back * OVERRIDE_LOOKAHEAD;
                        }
                        ScriptKind::SpeedOutlier(f) | ScriptKind::SuddenRun(f) => {
                            params = params.with_speed_factor(f);
                        }
                    }
                }
                if positions[i].distance(goal) < ARRIVAL_RADIUS {
                    goal = positions[i];
                }
                MotionAgent {
                    kinematics: AgentKinematics {
                        position: positions[i],
                        velocity: velocities[i],
                        radius: params.radius,
                    },
                    goal,
                    params,
                }
            })
            .collect();

        let next = step_crowd(&crowd, 1.0);
        for (i, k) in next.into_iter().enumerate() {
            positions[i] = k.position;
            velocities[i] = k.velocity;
        }
    }

    SimulationResult { observations, labels }
}

/// Adds Gaussian position noise and drops observations at the given rate.
/// The same seed reproduces the same corruption bit for bit.
pub fn corrupt(observations: &[Observation], sigma: f64, dropout: f64, seed: u64) -> Vec<Observation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("sigma is non-negative and finite");
    let mut out = Vec::with_capacity(observations.len());
    for obs in observations {
        if rng.gen::<f64>() < dropout {
            continue;
        }
        let noise = Vec2::new(normal.sample(&mut rng), normal.sample(&mut rng));
        out.push(Observation {
            frame: obs.frame,
            agent: obs.agent.clone(),
            position: obs.position + noise,
        });
    }
    out
}
