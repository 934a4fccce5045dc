//! Velocity command law: neighbor spacing, goal attraction, obstacle
//! repulsion and the obstacle-aligned projection of the neighbor sum.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::perception::{PerceptionOutput, VirtualAgents};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid navigation gains: {0}")]
pub struct GainsError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct NavGains {
    pub phi_n: f64,
    pub phi_g: f64,
    pub phi_o: f64,
    pub tau: f64,
    pub beta: f64,
    pub sigma_s: f64,
    pub k_nbr: usize,
    pub phi_max: f64,
    /// Siphon pull gain.
    pub phi_s: f64,
}

impl Default for NavGains {
    fn default() -> Self {
        Self { phi_n: 6.0, phi_g: 6.0, phi_o: 12.0, tau: 3.0, beta: 0.1, sigma_s: 1.5, k_nbr: 3, phi_max: 2.0, phi_s: 6.0 }
    }
}

impl NavGains {
    pub fn validate(&self) -> Result<(), GainsError> {
        let vals = [self.phi_n, self.phi_g, self.phi_o, self.tau, self.beta, self.sigma_s, self.phi_max, self.phi_s];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(GainsError("non-finite gain".into()));
        }
        if [self.phi_n, self.phi_g, self.phi_o, self.beta, self.phi_s].iter().any(|&v| v < 0.0) {
            return Err(GainsError("gains must be non-negative".into()));
        }
        if self.tau <= 0.0 || self.sigma_s <= 0.0 || self.phi_max <= 0.0 {
            return Err(GainsError("tau, sigma_s and phi_max must be positive".into()));
        }
        if self.k_nbr == 0 {
            return Err(GainsError("k_nbr must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    #[default]
    Goflock,
    Baseline,
    Siphon,
    /// No obstacle repulsion and no projection.
    AblationNoAvoidance,
    /// Repulsion from `w2` only; projection along the agent–`w2` axis.
    AblationW2Only,
    /// Repulsion and projection from `w3`/`w4` only.
    #[serde(rename = "ablation_w3w4_only")]
    AblationW3W4Only,
}

impl Controller {
    pub const ALL: [Controller; 6] = [
        Controller::Goflock,
        Controller::Baseline,
        Controller::Siphon,
        Controller::AblationNoAvoidance,
        Controller::AblationW2Only,
        Controller::AblationW3W4Only,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Controller::Goflock => "goflock",
            Controller::Baseline => "baseline",
            Controller::Siphon => "siphon",
            Controller::AblationNoAvoidance => "ablation_no_avoidance",
            Controller::AblationW2Only => "ablation_w2_only",
            Controller::AblationW3W4Only => "ablation_w3w4_only",
        }
    }

    pub fn parse(s: &str) -> Option<Controller> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    /// Whether the controller steers toward a planned waypoint rather than
    /// straight at the goal.
    pub fn uses_waypoint(self) -> bool {
        !matches!(self, Controller::Baseline | Controller::Siphon)
    }
}

impl std::fmt::Display for Controller {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: usize,
    pub position: Vec3,
    pub velocity: Vec3,
}

/// Nearest neighbors, ascending by distance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborView {
    pub neighbors: Vec<Neighbor>,
}

/// The `k` Euclidean-nearest agents other than `self_id`; ties go to the
/// lower id.
pub fn select_neighbors(self_id: usize, self_pos: Vec3, all: &[Neighbor], k: usize) -> NeighborView {
    let mut others: Vec<(f64, Neighbor)> = all
        .iter()
        .filter(|n| n.id != self_id)
        .map(|n| (n.position.distance_squared(self_pos), *n))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
    others.truncate(k);
    NeighborView { neighbors: others.into_iter().map(|(_, n)| n).collect() }
}

/// Spacing term: pushes apart inside `tau`, pulls together beyond it, zero
/// within the `beta` dead band.
pub fn neighbor_term(self_pos: Vec3, j_pos: Vec3, g: &NavGains) -> Vec3 {
    let p = self_pos - j_pos;
    let d = p.norm();
    if d == 0.0 {
        return Vec3::Z * (g.phi_n * g.tau);
    }
    let err = g.tau - d;
    if err.abs() > g.beta {
        p * (g.phi_n * err / d)
    } else {
        Vec3::ZERO
    }
}

/// Attraction toward `target`, saturating at `phi_g`.
pub fn goal_term(self_pos: Vec3, target: Vec3, g: &NavGains) -> Vec3 {
    let p = target - self_pos;
    let d = p.norm();
    if d == 0.0 {
        return Vec3::ZERO;
    }
    p * ((g.phi_g * d).min(g.phi_g) / d)
}

fn ramp(dist: f64, sigma: f64) -> f64 {
    (sigma - dist).max(0.0) / sigma
}

/// `w2` addend: away from the nearest obstacle point.
pub fn w2_repulsion(self_pos: Vec3, w2: Option<Vec3>, g: &NavGains) -> Vec3 {
    match w2 {
        Some(w2) => {
            let p = self_pos - w2;
            (p.normalize_or_zero()) * (g.phi_o * ramp(p.norm(), g.sigma_s))
        }
        None => Vec3::ZERO,
    }
}

/// `w3`/`w4` addend: pushes the path segment off the obstacle. A zero
/// `w4 − w3` falls back to the agent–`w2` axis.
pub fn w34_repulsion(self_pos: Vec3, w2: Option<Vec3>, w3: Option<Vec3>, w4: Option<Vec3>, g: &NavGains) -> Vec3 {
    let (Some(w3), Some(w4)) = (w3, w4) else {
        return Vec3::ZERO;
    };
    let p = w4 - w3;
    let d = p.norm();
    let dir = if d > 0.0 {
        p / d
    } else {
        w2.map_or(Vec3::ZERO, |w2| (self_pos - w2).normalize_or_zero())
    };
    dir * (g.phi_o * ramp(d, g.sigma_s))
}

pub fn obstacle_term(self_pos: Vec3, va: &VirtualAgents, g: &NavGains) -> Vec3 {
    w34_repulsion(self_pos, va.w2, va.w3, va.w4, g) + w2_repulsion(self_pos, va.w2, g)
}

/// Removes the component of `v` along `axis` when the agent is within
/// `sigma_s` of its nearest obstacle. A zero axis passes `v` through.
pub fn project_along(v: Vec3, axis: Vec3, self_to_w2_dist: f64, g: &NavGains) -> Vec3 {
    if !(self_to_w2_dist < g.sigma_s) {
        return v;
    }
    let n = axis.norm();
    if n == 0.0 {
        return v;
    }
    let u = axis / n;
    v - u * v.dot(u)
}

pub fn project_neighbor_term(v: Vec3, w3: Vec3, w4: Vec3, self_to_w2_dist: f64, g: &NavGains) -> Vec3 {
    project_along(v, w4 - w3, self_to_w2_dist, g)
}

/// Sum of the terms with the norm clamped to `phi_max`.
pub fn compose_command(goal_t: Vec3, neighbor_sum: Vec3, obstacle_t: Vec3, g: &NavGains) -> Vec3 {
    (goal_t + neighbor_sum + obstacle_t).clamp_norm(g.phi_max)
}

/// Everything one agent knows when computing its command.
#[derive(Debug, Clone, Copy)]
pub struct NavInput<'a> {
    pub position: Vec3,
    pub goal: Vec3,
    pub perception: &'a PerceptionOutput,
    pub neighbors: &'a NeighborView,
    /// Position of the nearest free agent when this agent is stuck (siphon only).
    pub siphon_target: Option<Vec3>,
}

/// Target of the goal term: the goal when visible or for goal-direct
/// controllers, else the waypoint.
pub fn goal_target(controller: Controller, perception: &PerceptionOutput, goal: Vec3) -> Vec3 {
    if !controller.uses_waypoint() || perception.goal_visible {
        goal
    } else {
        perception.w1
    }
}

/// Desired velocity for one agent.
pub fn command(controller: Controller, input: &NavInput<'_>, g: &NavGains) -> Vec3 {
    let pos = input.position;
    let pc = input.perception;
    let goal_t = goal_term(pos, goal_target(controller, pc, input.goal), g);
    let w2_dist = pc.w2.map_or(f64::INFINITY, |w2| w2.distance(pos));
    let mut nsum = Vec3::ZERO;
    for n in &input.neighbors.neighbors {
        let v = neighbor_term(pos, n.position, g);
        nsum += match (controller, pc.w3, pc.w4) {
            (Controller::Goflock | Controller::AblationW3W4Only, Some(w3), Some(w4)) => {
                project_neighbor_term(v, w3, w4, w2_dist, g)
            }
            (Controller::AblationW2Only, _, _) => match pc.w2 {
                Some(w2) => project_along(v, pos - w2, w2_dist, g),
                None => v,
            },
            _ => v,
        };
    }
    let obs = match controller {
        Controller::Goflock => obstacle_term(pos, &pc.virtual_agents(), g),
        Controller::Baseline | Controller::Siphon | Controller::AblationW2Only => w2_repulsion(pos, pc.w2, g),
        Controller::AblationW3W4Only => w34_repulsion(pos, pc.w2, pc.w3, pc.w4, g),
        Controller::AblationNoAvoidance => Vec3::ZERO,
    };
    let siphon = match (controller, input.siphon_target) {
        (Controller::Siphon, Some(t)) => siphon_addend(pos, t, g),
        _ => Vec3::ZERO,
    };
    compose_command(goal_t + siphon, nsum, obs, g)
}

/// Baseline law: goal-direct, `w2` repulsion only, no projection.
pub fn baseline_command(input: &NavInput<'_>, g: &NavGains) -> Vec3 {
    command(Controller::Baseline, input, g)
}

/// Baseline law plus a pull toward the nearest free agent when stuck.
pub fn siphon_command(input: &NavInput<'_>, g: &NavGains) -> Vec3 {
    command(Controller::Siphon, input, g)
}

pub fn siphon_addend(self_pos: Vec3, free_pos: Vec3, g: &NavGains) -> Vec3 {
    (free_pos - self_pos).normalize_or_zero() * g.phi_s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g() -> NavGains {
        NavGains::default()
    }

    fn close(a: Vec3, b: Vec3) -> bool {
        a.distance(b) < 1e-12
    }

    #[test]
    fn neighbor_term_cases() {
        let g = g();
        assert!(close(neighbor_term(Vec3::ZERO, Vec3::X, &g), Vec3::new(-12.0, 0.0, 0.0)));
        assert!(close(neighbor_term(Vec3::ZERO, Vec3::new(7.0, 0.0, 0.0), &g), Vec3::new(24.0, 0.0, 0.0)));
        assert_eq!(neighbor_term(Vec3::ZERO, Vec3::new(3.05, 0.0, 0.0), &g), Vec3::ZERO);
        assert_eq!(neighbor_term(Vec3::X, Vec3::X, &g), Vec3::new(0.0, 0.0, 18.0));
    }

    #[test]
    fn goal_term_cases() {
        let g = g();
        let t = goal_term(Vec3::ZERO, Vec3::new(10.0, 0.0, 0.0), &g);
        assert!(close(t, Vec3::new(6.0, 0.0, 0.0)));
        let t = goal_term(Vec3::ZERO, Vec3::new(0.0, 0.5, 0.0), &g);
        assert!(close(t, Vec3::new(0.0, 3.0, 0.0)));
        assert_eq!(goal_term(Vec3::X, Vec3::X, &g), Vec3::ZERO);
    }

    #[test]
    fn obstacle_term_cases() {
        let g = g();
        // w4 − w3 along +y with length 0.5, agent 1.0 from w2 along +x
        let va = VirtualAgents {
            w2: Some(Vec3::new(-1.0, 0.0, 0.0)),
            w3: Some(Vec3::new(5.0, -0.5, 0.0)),
            w4: Some(Vec3::new(5.0, 0.0, 0.0)),
        };
        let t = obstacle_term(Vec3::ZERO, &va, &g);
        assert!(close(t, Vec3::new(4.0, 8.0, 0.0)), "{t:?}");
        let far = VirtualAgents { w2: Some(Vec3::new(-2.0, 0.0, 0.0)), w3: Some(Vec3::new(5.0, -2.0, 0.0)), w4: Some(Vec3::new(5.0, 0.0, 0.0)) };
        assert_eq!(obstacle_term(Vec3::ZERO, &far, &g), Vec3::ZERO);
        assert_eq!(obstacle_term(Vec3::ZERO, &VirtualAgents::default(), &g), Vec3::ZERO);
    }

    #[test]
    fn coincident_w3_w4_falls_back_to_w2_axis() {
        let g = g();
        let w = Vec3::new(1.0, 0.0, 0.0);
        let t = w34_repulsion(Vec3::ZERO, Some(w), Some(w), Some(w), &g);
        assert!(close(t, Vec3::new(-12.0, 0.0, 0.0)));
    }

    #[test]
    fn projection_cases() {
        let g = g();
        let w3 = Vec3::ZERO;
        let w4 = Vec3::new(0.0, 2.0, 0.0);
        assert!(close(project_neighbor_term(Vec3::new(1.0, 1.0, 0.0), w3, w4, 1.0, &g), Vec3::X));
        assert!(close(project_neighbor_term(Vec3::new(0.0, -3.0, 0.0), w3, w4, 1.0, &g), Vec3::ZERO));
        let v = Vec3::new(1.0, 1.0, 0.0);
        assert_eq!(project_neighbor_term(v, w3, w4, 4.0, &g), v);
        assert_eq!(project_neighbor_term(v, w3, w3, 1.0, &g), v);
    }

    #[test]
    fn compose_clamps() {
        let g = g();
        let c = compose_command(Vec3::new(6.0, 0.0, 0.0), Vec3::new(0.0, 8.0, 0.0), Vec3::ZERO, &g);
        assert!((c.norm() - 2.0).abs() < 1e-12);
        assert!(close(c / 2.0, Vec3::new(0.6, 0.8, 0.0)));
        let c = compose_command(Vec3::new(1.5, 0.0, 0.0), Vec3::ZERO, Vec3::ZERO, &g);
        assert_eq!(c, Vec3::new(1.5, 0.0, 0.0));
        assert_eq!(compose_command(Vec3::ZERO, Vec3::ZERO, Vec3::ZERO, &g), Vec3::ZERO);
    }

    #[test]
    fn neighbor_selection_matches_sort() {
        let all: Vec<Neighbor> = (0..9)
            .map(|i| Neighbor { id: i, position: Vec3::new((i * 7 % 5) as f64, (i * 3 % 4) as f64, 0.0), velocity: Vec3::ZERO })
            .collect();
        for me in 0..9 {
            let view = select_neighbors(me, all[me].position, &all, 3);
            let mut oracle: Vec<_> = all.iter().filter(|n| n.id != me).collect();
            oracle.sort_by(|a, b| {
                let da = a.position.distance(all[me].position);
                let db = b.position.distance(all[me].position);
                da.partial_cmp(&db).unwrap().then(a.id.cmp(&b.id))
            });
            let ids: Vec<_> = view.neighbors.iter().map(|n| n.id).collect();
            let want: Vec<_> = oracle.iter().take(3).map(|n| n.id).collect();
            assert_eq!(ids, want);
        }
        let two = &all[..2];
        assert_eq!(select_neighbors(0, two[0].position, two, 3).neighbors.len(), 1);
        let line = [
            Neighbor { id: 0, position: Vec3::ZERO, velocity: Vec3::ZERO },
            Neighbor { id: 1, position: Vec3::X, velocity: Vec3::ZERO },
            Neighbor { id: 2, position: Vec3::new(3.0, 0.0, 0.0), velocity: Vec3::ZERO },
        ];
        assert_eq!(select_neighbors(0, Vec3::ZERO, &line, 1).neighbors[0].id, 1);
    }

    fn open_input<'a>(pc: &'a PerceptionOutput, nv: &'a NeighborView) -> NavInput<'a> {
        NavInput { position: Vec3::ZERO, goal: Vec3::new(20.0, 0.0, 0.0), perception: pc, neighbors: nv, siphon_target: None }
    }

    #[test]
    fn controllers_agree_in_open_space() {
        let g = g();
        let pc = PerceptionOutput::toward(Vec3::new(20.0, 0.0, 0.0));
        let nv = NeighborView {
            neighbors: vec![Neighbor { id: 1, position: Vec3::new(0.5, 1.0, 0.0), velocity: Vec3::ZERO }],
        };
        let input = open_input(&pc, &nv);
        let a = command(Controller::Goflock, &input, &g);
        assert_eq!(a, baseline_command(&input, &g));
        assert_eq!(a, siphon_command(&input, &g));
    }

    #[test]
    fn siphon_pulls_stuck_agent() {
        let g = g();
        assert!(close(siphon_addend(Vec3::ZERO, Vec3::new(0.0, 5.0, 0.0), &g), Vec3::new(0.0, 6.0, 0.0)));
        let pc = PerceptionOutput { goal_visible: false, ..PerceptionOutput::toward(Vec3::new(20.0, 0.0, 0.0)) };
        let nv = NeighborView::default();
        let mut input = open_input(&pc, &nv);
        let free = siphon_command(&input, &g);
        assert_eq!(free, baseline_command(&input, &g));
        input.siphon_target = Some(Vec3::new(0.0, 5.0, 0.0));
        let stuck = siphon_command(&input, &g);
        assert!(stuck.y > 0.0 && stuck.norm() <= g.phi_max + 1e-12);
    }

    #[test]
    fn baseline_has_a_local_minimum_behind_a_slab() {
        // goal straight through a wall at x = 1; only w2 repels
        let g = g();
        let goal = Vec3::new(10.0, 0.0, 0.0);
        let f = |x: f64| {
            let pc = PerceptionOutput {
                w1: goal,
                w2: Some(Vec3::new(1.0, 0.0, 0.0)),
                w3: None,
                w4: None,
                goal_visible: false,
            };
            let nv = NeighborView::default();
            let input = NavInput { position: Vec3::new(x, 0.0, 0.0), goal, perception: &pc, neighbors: &nv, siphon_target: None };
            baseline_command(&input, &g).x
        };
        // bisection for the equilibrium along the wall normal
        let (mut lo, mut hi) = (-0.5, 0.999);
        assert!(f(lo) > 0.0 && f(hi) < 0.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        // 12 (1.5 − d) / 1.5 = 6  ⇒  d = 0.75
        assert!((1.0 - lo - 0.75).abs() < 1e-9);
    }

    #[test]
    fn controller_names_round_trip() {
        for c in Controller::ALL {
            assert_eq!(Controller::parse(c.name()), Some(c));
            let s = serde_json::to_string(&c).unwrap();
            assert_eq!(s, format!("\"{}\"", c.name()));
        }
        assert_eq!(Controller::parse("nope"), None);
    }
}
