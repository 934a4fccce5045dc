//! Fixed-step episode engine.
//!
//! Every step each agent computes its command from the previous step's pose
//! buffer, then all agents integrate at once. Perception runs on a slower
//! cadence and its latest output is held between ticks.

use std::collections::VecDeque;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{nearest_point_on_primitive, Vec3};
use crate::navigation::{command, select_neighbors, Controller, NavGains, NavInput, Neighbor};
use crate::perception::{PerceptionConfig, PerceptionOutput, Perceiver};
use crate::world::{line_of_sight, ObstacleSet, Scenario};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("non-finite state for agent {agent} at step {step}")]
    NonFinite { step: usize, agent: usize },
    #[error("invalid sim config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SimConfig {
    pub dt: f64,
    /// Seconds between perception ticks; rounded to whole steps.
    pub perception_period: f64,
    /// Velocity tracking factor; 1 tracks the command exactly.
    pub alpha: f64,
    pub max_duration: f64,
    /// Arrival when every agent is within this distance of the goal.
    pub goal_radius: f64,
    pub collision_radius: f64,
    pub halt_on_collision: bool,
    /// Agents are kept at least this far from obstacle surfaces, as if
    /// they had a rigid body of this radius. Zero lets them pass through.
    pub contact_radius: f64,
    /// Below this horizontal speed the camera faces the waypoint instead of
    /// the direction of motion.
    pub heading_speed: f64,
    /// Siphon stuck test: displacement under `stuck_distance` over `stuck_window` seconds.
    pub stuck_window: f64,
    pub stuck_distance: f64,
    pub perception: PerceptionConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1.0 / 30.0,
            perception_period: 0.2,
            alpha: 0.3,
            max_duration: 60.0,
            goal_radius: 4.0,
            collision_radius: 0.3,
            halt_on_collision: true,
            contact_radius: 0.2,
            heading_speed: 0.15,
            stuck_window: 2.0,
            stuck_distance: 0.2,
            perception: PerceptionConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.into()));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad("dt must be positive");
        }
        if !(self.perception_period >= self.dt) {
            return bad("perception_period must be at least dt");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(self.max_duration > 0.0)
            || !(self.goal_radius > 0.0)
            || !(self.collision_radius >= 0.0)
            || !(self.contact_radius >= 0.0)
        {
            return bad("durations and radii must be positive");
        }
        if !self.perception.camera.is_valid() || !(self.perception.sense_radius > 0.0) {
            return bad("invalid perception settings");
        }
        Ok(())
    }

    pub fn perception_steps(&self) -> usize {
        ((self.perception_period / self.dt).round() as usize).max(1)
    }

    pub fn max_steps(&self) -> usize {
        (self.max_duration / self.dt + 1e-9).floor() as usize
    }
}

#[derive(Debug, Clone)]
pub struct AgentState {
    pub id: usize,
    pub position: Vec3,
    pub velocity: Vec3,
    pub perceiver: Perceiver,
    pub perception: PerceptionOutput,
    pub controller: Controller,
    /// Recent positions for the siphon stuck test, newest last.
    history: VecDeque<Vec3>,
}

impl AgentState {
    pub fn new(id: usize, position: Vec3, controller: Controller, goal: Vec3, cfg: &SimConfig) -> Self {
        Self {
            id,
            position,
            velocity: Vec3::ZERO,
            perceiver: Perceiver::new(cfg.perception, position),
            perception: PerceptionOutput::toward(goal),
            controller,
            history: VecDeque::new(),
        }
    }

    fn camera_yaw(&self, goal: Vec3, cfg: &SimConfig) -> f64 {
        let h = self.velocity.horizontal();
        let dir = if h.norm() > cfg.heading_speed {
            h
        } else {
            let to = (self.perception.w1 - self.position).horizontal();
            if to.norm() > 1e-9 {
                to
            } else {
                (goal - self.position).horizontal()
            }
        };
        dir.y.atan2(dir.x)
    }

    fn stuck(&self, cfg: &SimConfig, window: usize) -> bool {
        if self.perception.goal_visible || self.history.len() <= window {
            return false;
        }
        let old = self.history[self.history.len() - 1 - window];
        old.distance(self.position) < cfg.stuck_distance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    AgentCollision { step: usize, a: usize, b: usize, distance: f64 },
    ObstacleCollision { step: usize, agent: usize, distance: f64 },
    Arrival { step: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Collision,
    Timeout,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Collision => "collision",
            Outcome::Timeout => "timeout",
        }
    }
}

/// Per-step snapshot of every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub t: f64,
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub perception: Vec<PerceptionOutput>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: u64,
    pub controller: Controller,
    pub goal: Vec3,
    pub dt: f64,
    pub frames: Vec<Frame>,
    pub events: Vec<Event>,
    pub outcome: Outcome,
    /// Smallest center-to-center distance between any two agents.
    pub min_interagent: f64,
    /// Smallest agent-center to obstacle-surface distance.
    pub min_obstacle: f64,
}

impl RunRecord {
    pub fn agent_count(&self) -> usize {
        self.frames.first().map_or(0, |f| f.positions.len())
    }

    pub fn duration(&self) -> f64 {
        self.frames.last().map_or(0.0, |f| f.t)
    }

    pub fn max_speed(&self) -> f64 {
        self.frames.iter().flat_map(|f| f.velocities.iter()).map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Collisions and arrival for one pose buffer.
pub fn detect_events(step: usize, positions: &[Vec3], goal: Vec3, world: &ObstacleSet, cfg: &SimConfig) -> Vec<Event> {
    let mut out = Vec::new();
    for (a, pa) in positions.iter().enumerate() {
        for (b, pb) in positions.iter().enumerate().skip(a + 1) {
            let d = pa.distance(*pb);
            if d <= cfg.collision_radius {
                out.push(Event::AgentCollision { step, a, b, distance: d });
            }
        }
        let d = world.min_distance(*pa);
        if d <= cfg.collision_radius {
            out.push(Event::ObstacleCollision { step, agent: a, distance: d });
        }
    }
    if !positions.is_empty() && positions.iter().all(|p| p.distance(goal) <= cfg.goal_radius) {
        out.push(Event::Arrival { step });
    }
    out
}

fn min_pair_distance(positions: &[Vec3]) -> f64 {
    let mut m = f64::INFINITY;
    for (a, pa) in positions.iter().enumerate() {
        for pb in &positions[a + 1..] {
            m = m.min(pa.distance(*pb));
        }
    }
    m
}

/// Runs perception for every agent.
pub fn perceive_all(agents: &mut [AgentState], goal: Vec3, world: &ObstacleSet, cfg: &SimConfig) {
    for a in agents.iter_mut() {
        let yaw = a.camera_yaw(goal, cfg);
        a.perception = a.perceiver.perceive(a.position, yaw, goal, world, a.controller.uses_waypoint());
    }
}

/// Desired velocities for all agents, read from the current pose buffer.
pub fn commands(agents: &[AgentState], goal: Vec3, world: &ObstacleSet, gains: &NavGains, cfg: &SimConfig) -> Vec<Vec3> {
    let poses: Vec<Neighbor> =
        agents.iter().map(|a| Neighbor { id: a.id, position: a.position, velocity: a.velocity }).collect();
    let window = (cfg.stuck_window / cfg.dt).round() as usize;
    let stuck: Vec<bool> = agents.iter().map(|a| a.controller == Controller::Siphon && a.stuck(cfg, window)).collect();
    agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let neighbors = select_neighbors(a.id, a.position, &poses, gains.k_nbr);
            let siphon_target = if stuck[i] {
                // nearest free agent, preferring ones in plain view
                agents
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| !stuck[*j])
                    .map(|(_, b)| {
                        let hidden = !line_of_sight(a.position, b.position, world);
                        ((hidden, b.position.distance_squared(a.position)), b.position)
                    })
                    .min_by(|x, y| x.0 .0.cmp(&y.0 .0).then(x.0 .1.total_cmp(&y.0 .1)))
                    .map(|(_, p)| p)
            } else {
                None
            };
            let input =
                NavInput { position: a.position, goal, perception: &a.perception, neighbors: &neighbors, siphon_target };
            command(a.controller, &input, gains)
        })
        .collect()
}

/// Advances all agents by one step: perception when due, then command,
/// velocity lag and integration against a shared pose snapshot.
pub fn step(
    step_index: usize,
    agents: &mut [AgentState],
    goal: Vec3,
    world: &ObstacleSet,
    gains: &NavGains,
    cfg: &SimConfig,
) -> Result<(), SimError> {
    if step_index % cfg.perception_steps() == 0 {
        perceive_all(agents, goal, world, cfg);
    }
    let v_des = commands(agents, goal, world, gains, cfg);
    let keep = (cfg.stuck_window / cfg.dt).round() as usize + 1;
    for (a, vd) in agents.iter_mut().zip(v_des) {
        a.velocity = a.velocity * (1.0 - cfg.alpha) + vd * cfg.alpha;
        a.position += a.velocity * cfg.dt;
        if cfg.contact_radius > 0.0 {
            resolve_contact(&mut a.position, &mut a.velocity, world, cfg.contact_radius);
        }
        if !a.position.is_finite() || !a.velocity.is_finite() {
            return Err(SimError::NonFinite { step: step_index, agent: a.id });
        }
        a.history.push_back(a.position);
        if a.history.len() > keep {
            a.history.pop_front();
        }
    }
    Ok(())
}

/// Pushes a point out to `radius` from every primitive it penetrates.
/// Contact is inelastic: an approaching velocity is dropped entirely.
pub fn resolve_contact(position: &mut Vec3, velocity: &mut Vec3, world: &ObstacleSet, radius: f64) {
    for _ in 0..3 {
        let mut moved = false;
        for prim in world.near(*position, radius) {
            let p = *position;
            let q = nearest_point_on_primitive(prim, p);
            let n = if prim.contains(p) { q - p } else { p - q };
            let Ok(n) = n.try_normalize() else { continue };
            let depth = radius - if prim.contains(p) { -p.distance(q) } else { p.distance(q) };
            if depth <= 0.0 {
                continue;
            }
            *position = q + n * radius;
            if velocity.dot(n) < 0.0 {
                *velocity = Vec3::ZERO;
            }
            moved = true;
        }
        if !moved {
            break;
        }
    }
}

fn frame(t: f64, agents: &[AgentState]) -> Frame {
    Frame {
        t,
        positions: agents.iter().map(|a| a.position).collect(),
        velocities: agents.iter().map(|a| a.velocity).collect(),
        perception: agents.iter().map(|a| a.perception).collect(),
    }
}

/// Simulates one episode until arrival, collision (when halting) or timeout.
pub fn run_episode(
    scenario: &Scenario,
    controller: Controller,
    run_id: u64,
    gains: &NavGains,
    cfg: &SimConfig,
) -> Result<RunRecord, SimError> {
    cfg.validate()?;
    gains.validate().map_err(|e| SimError::Config(e.to_string()))?;
    let goal = scenario.goal;
    let world = &scenario.obstacles;
    let mut agents: Vec<AgentState> =
        scenario.starts.iter().enumerate().map(|(i, &p)| AgentState::new(i, p, controller, goal, cfg)).collect();
    for a in agents.iter_mut() {
        a.history.push_back(a.position);
    }

    let mut frames = Vec::new();
    let mut events = Vec::new();
    let positions: Vec<Vec3> = agents.iter().map(|a| a.position).collect();
    let mut min_interagent = min_pair_distance(&positions);
    let mut min_obstacle = positions.iter().map(|p| world.min_distance(*p)).fold(f64::INFINITY, f64::min);
    let mut outcome = Outcome::Timeout;
    let mut collided = false;

    let max_steps = cfg.max_steps();
    for s in 0..max_steps {
        step(s, &mut agents, goal, world, gains, cfg)?;
        if s == 0 {
            // the first frame carries the initial perception
            let mut f0 = frame(0.0, &agents);
            f0.positions = positions.clone();
            f0.velocities = vec![Vec3::ZERO; agents.len()];
            frames.push(f0);
        }
        let t = (s + 1) as f64 * cfg.dt;
        frames.push(frame(t, &agents));
        let pos: Vec<Vec3> = agents.iter().map(|a| a.position).collect();
        min_interagent = min_interagent.min(min_pair_distance(&pos));
        min_obstacle = pos.iter().map(|p| world.min_distance(*p)).fold(min_obstacle, f64::min);
        let evs = detect_events(s + 1, &pos, goal, world, cfg);
        let hit = evs.iter().any(|e| !matches!(e, Event::Arrival { .. }));
        let arrived = evs.iter().any(|e| matches!(e, Event::Arrival { .. }));
        events.extend(evs);
        collided |= hit;
        if hit && cfg.halt_on_collision {
            outcome = Outcome::Collision;
            break;
        }
        if arrived {
            outcome = if collided { Outcome::Collision } else { Outcome::Success };
            break;
        }
    }
    if collided {
        outcome = Outcome::Collision;
    }
    Ok(RunRecord { run_id, controller, goal, dt: cfg.dt, frames, events, outcome, min_interagent, min_obstacle })
}
