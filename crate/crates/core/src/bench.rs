//! Wall-clock timing of the perception tick and the navigation command.
//!
//! A short episode is simulated first; its poses are then replayed through
//! fresh perceivers so the maps see realistic motion.

use std::hint::black_box;
use std::time::Instant;

use serde::Serialize;

use crate::navigation::{command, select_neighbors, Controller, NavGains, NavInput, Neighbor};
use crate::perception::Perceiver;
use crate::sim::{run_episode, SimConfig, SimError};
use crate::world::Scenario;

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub controller: Controller,
    pub agents: usize,
    pub obstacles: usize,
    pub perception_iterations: usize,
    /// Mean wall time of one agent's perception tick.
    pub perception_mean_ms: f64,
    pub perception_max_ms: f64,
    pub navigation_iterations: usize,
    /// Mean wall time of one agent's command evaluation.
    pub navigation_mean_us: f64,
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        format!(
            "controller {} agents {} obstacles {}\nperception: {:.3} ms mean, {:.3} ms max over {} ticks\nnavigation: {:.3} us mean over {} commands\n",
            self.controller,
            self.agents,
            self.obstacles,
            self.perception_mean_ms,
            self.perception_max_ms,
            self.perception_iterations,
            self.navigation_mean_us,
            self.navigation_iterations
        )
    }
}

/// Times at least `iterations` per-agent perception ticks and command
/// evaluations.
pub fn bench(
    scenario: &Scenario,
    controller: Controller,
    gains: &NavGains,
    cfg: &SimConfig,
    iterations: usize,
) -> Result<BenchReport, SimError> {
    let iterations = iterations.max(1);
    let warm = SimConfig { max_duration: cfg.max_duration.min(10.0), halt_on_collision: false, ..*cfg };
    let rec = run_episode(scenario, controller, 0, gains, &warm)?;
    let m = rec.agent_count();
    let ticks: Vec<usize> = (0..rec.frames.len()).step_by(cfg.perception_steps()).collect();

    let mut perceivers: Vec<Perceiver> = scenario.starts.iter().map(|&p| Perceiver::new(cfg.perception, p)).collect();
    let mut total = 0.0;
    let mut worst: f64 = 0.0;
    let mut n = 0;
    'outer: loop {
        for &k in &ticks {
            let f = &rec.frames[k];
            for a in 0..m {
                let v = f.velocities[a];
                let yaw = if v.horizontal().norm() > cfg.heading_speed { v.y.atan2(v.x) } else { 0.0 };
                let t0 = Instant::now();
                black_box(perceivers[a].perceive(f.positions[a], yaw, rec.goal, &scenario.obstacles, controller.uses_waypoint()));
                let dt = t0.elapsed().as_secs_f64() * 1e3;
                total += dt;
                worst = worst.max(dt);
                n += 1;
            }
            if n >= iterations {
                break 'outer;
            }
        }
    }

    let nav_iters = iterations.max(10_000);
    let mut nav_total = 0.0;
    let mut done = 0;
    while done < nav_iters {
        for f in rec.frames.iter().skip(1) {
            let poses: Vec<Neighbor> = (0..m)
                .map(|i| Neighbor { id: i, position: f.positions[i], velocity: f.velocities[i] })
                .collect();
            let t0 = Instant::now();
            for (a, pc) in f.perception.iter().enumerate() {
                let nbrs = select_neighbors(a, f.positions[a], &poses, gains.k_nbr);
                let input =
                    NavInput { position: f.positions[a], goal: rec.goal, perception: pc, neighbors: &nbrs, siphon_target: None };
                black_box(command(controller, &input, gains));
            }
            nav_total += t0.elapsed().as_secs_f64() * 1e6;
            done += m;
            if done >= nav_iters {
                break;
            }
        }
    }

    Ok(BenchReport {
        controller,
        agents: m,
        obstacles: scenario.obstacles.primitives.len(),
        perception_iterations: n,
        perception_mean_ms: total / n as f64,
        perception_max_ms: worst,
        navigation_iterations: done,
        navigation_mean_us: nav_total / done as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_scenario, ScenarioConfig};

    #[test]
    fn reports_requested_iterations() {
        let sc = generate_scenario(&ScenarioConfig::single_slab(3)).unwrap();
        let r = bench(&sc, Controller::Goflock, &NavGains::default(), &SimConfig::default(), 30).unwrap();
        assert!(r.perception_iterations >= 30 && r.navigation_iterations >= 10_000);
        assert!(r.perception_mean_ms > 0.0 && r.perception_max_ms >= r.perception_mean_ms);
        assert!(r.to_text().contains("perception:"));
    }
}
