//! Browser bindings. Every export takes plain numbers or a JSON string and
//! returns a JSON string, so the page needs no generated glue beyond
//! wasm-bindgen's own.

use std::fmt::Write as _;

use flocknav::mapping::{Cell, OccupancyGrid};
use flocknav::metrics::MetricSeries;
use flocknav::navigation::{Controller, NavGains};
use flocknav::perception::{plan_path, select_waypoint};
use flocknav::plot::{metrics_svg, trajectory_svg};
use flocknav::sim::{run_episode, Frame, SimConfig};
use flocknav::world::{generate_scenario, Scenario, ScenarioConfig};
use flocknav::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

#[derive(Debug, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    pub scenario: String,
    pub agents: usize,
    pub controller: String,
    pub seed: u64,
    pub duration: f64,
    pub phi_max: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            scenario: "slab".into(),
            agents: 6,
            controller: "goflock".into(),
            seed: 1,
            duration: 20.0,
            phi_max: 2.0,
        }
    }
}

fn scenario(kind: &str, agents: usize, seed: u64) -> Result<Scenario, String> {
    let cfg = match kind {
        "slab" => ScenarioConfig::single_slab(agents),
        "field" => ScenarioConfig::random_field(agents),
        "forest" => ScenarioConfig::forest(agents, seed),
        "block" => ScenarioConfig::ablation_block(agents, 2.5),
        "empty" => ScenarioConfig::empty(agents),
        other => return Err(format!("unknown scenario {other:?}")),
    };
    generate_scenario(&cfg.for_run(seed)).map_err(|e| e.to_string())
}

/// Layout preview: obstacles, start positions and goal as SVG.
pub fn preview(kind: &str, agents: usize, seed: u64) -> Result<String, String> {
    let sc = scenario(kind, agents, seed)?;
    let still = Frame { t: 0.0, positions: sc.starts.clone(), velocities: vec![Vec3::ZERO; agents], perception: Vec::new() };
    let svg = trajectory_svg(&[still], Some(&sc.obstacles), Some(sc.goal)).map_err(|e| e.to_string())?;
    Ok(json!({ "svg": svg, "obstacles": sc.obstacles.primitives.len() }).to_string())
}

/// One full episode; returns both plots and the run's scalar metrics.
pub fn simulate(config_json: &str) -> Result<String, String> {
    let cfg: DemoConfig = serde_json::from_str(config_json).map_err(|e| e.to_string())?;
    let controller = Controller::parse(&cfg.controller).ok_or_else(|| format!("unknown controller {:?}", cfg.controller))?;
    let sc = scenario(&cfg.scenario, cfg.agents, cfg.seed)?;
    let gains = NavGains { phi_max: cfg.phi_max, ..NavGains::default() };
    gains.validate().map_err(|e| e.to_string())?;
    let sim = SimConfig { max_duration: cfg.duration, ..SimConfig::default() };
    let rec = run_episode(&sc, controller, cfg.seed, &gains, &sim).map_err(|e| e.to_string())?;
    let m = MetricSeries::from_record(&rec);
    let traj = trajectory_svg(&rec.frames, Some(&sc.obstacles), Some(rec.goal)).map_err(|e| e.to_string())?;
    let panels = metrics_svg(&rec.frames).map_err(|e| e.to_string())?;
    Ok(json!({
        "outcome": rec.outcome.name(),
        "duration": rec.duration(),
        "D_mean": m.d_mean(),
        "C_mean": m.c_mean(),
        "AV": m.av,
        "min_interagent": rec.min_interagent,
        "min_obstacle": if rec.min_obstacle.is_finite() { Some(rec.min_obstacle) } else { None },
        "trajectory_svg": traj,
        "metrics_svg": panels,
    })
    .to_string())
}

const PLAN_SIZE: usize = 40;
const PLAN_PX: usize = 12;

/// Plans across a random single-layer grid and draws the path with the
/// waypoint an agent at the start would steer to.
pub fn plan(seed: u64, density: f64) -> Result<String, String> {
    if !(0.0..=0.6).contains(&density) {
        return Err("density must lie in [0, 0.6]".into());
    }
    let mut grid = OccupancyGrid::new(Vec3::ZERO, 1.0, [PLAN_SIZE, PLAN_SIZE, 1]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for x in 0..PLAN_SIZE {
        for y in 0..PLAN_SIZE {
            let corner = (x < 3 && y < 3) || (x + 3 >= PLAN_SIZE && y + 3 >= PLAN_SIZE);
            let c = if !corner && rng.gen_bool(density) { Cell::Occupied } else { Cell::Free };
            grid.set([x, y, 0], c);
        }
    }
    let start = grid.center_of([1, 1, 0]);
    let goal = grid.center_of([PLAN_SIZE - 2, PLAN_SIZE - 2, 0]);
    let path = plan_path(&grid, start, goal).map_err(|e| e.to_string())?;

    let side = PLAN_SIZE * PLAN_PX;
    let px = |v: f64| v * PLAN_PX as f64;
    let py = |v: f64| side as f64 - v * PLAN_PX as f64;
    let mut svg = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{side}" height="{side}" viewBox="0 0 {side} {side}">"#);
    svg.push_str(r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    for idx in grid.occupied().collect::<Vec<_>>() {
        let _ = write!(
            svg,
            r##"<rect x="{}" y="{}" width="{PLAN_PX}" height="{PLAN_PX}" fill="#555555"/>"##,
            idx[0] * PLAN_PX,
            side - (idx[1] + 1) * PLAN_PX
        );
    }
    let mut out = json!({ "reachable": false, "cost": null });
    if let Some(p) = &path {
        let pts: Vec<String> = p.points.iter().map(|q| format!("{:.1},{:.1}", px(q.x), py(q.y))).collect();
        let _ = write!(svg, r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="3"/>"##, pts.join(" "));
        let w = select_waypoint(p, start, goal, &grid);
        let _ = write!(
            svg,
            r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#ff7f0e" stroke-width="2" stroke-dasharray="6 4"/><circle cx="{:.1}" cy="{:.1}" r="6" fill="#ff7f0e"/>"##,
            px(start.x),
            py(start.y),
            px(w.x),
            py(w.y),
            px(w.x),
            py(w.y)
        );
        out = json!({ "reachable": true, "cost": p.cost, "voxels": p.len() });
    }
    for (q, color) in [(start, "#2ca02c"), (goal, "#d62728")] {
        let _ = write!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="7" fill="{color}"/>"#, px(q.x), py(q.y));
    }
    svg.push_str("</svg>");
    out["svg"] = svg.into();
    Ok(out.to_string())
}

#[wasm_bindgen(js_name = preview)]
pub fn preview_js(kind: &str, agents: usize, seed: u32) -> Result<String, JsValue> {
    preview(kind, agents, seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = simulate)]
pub fn simulate_js(config_json: &str) -> Result<String, JsValue> {
    simulate(config_json).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = plan)]
pub fn plan_js(seed: u32, density: f64) -> Result<String, JsValue> {
    plan(seed as u64, density).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> serde_json::Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn preview_draws_every_scenario() {
        for kind in ["slab", "field", "forest", "block", "empty"] {
            let v = parse(&preview(kind, 4, 2).unwrap());
            assert!(v["svg"].as_str().unwrap().starts_with("<svg"), "{kind}");
        }
        assert!(preview("moon", 4, 2).is_err());
    }

    #[test]
    fn short_simulation_reports_metrics() {
        let v = parse(&simulate(r#"{"agents": 3, "duration": 2.0}"#).unwrap());
        assert!(v["D_mean"].as_f64().unwrap() > 0.0);
        assert!(v["trajectory_svg"].as_str().unwrap().contains("polyline"));
        assert!(simulate(r#"{"controller": "boids"}"#).is_err());
        assert!(simulate("not json").is_err());
    }

    #[test]
    fn plan_is_deterministic_and_open_grid_is_reachable() {
        let open = parse(&plan(3, 0.0).unwrap());
        assert_eq!(open["reachable"], true);
        let diag = (PLAN_SIZE - 3) as f64 * 2f64.sqrt();
        assert!((open["cost"].as_f64().unwrap() - diag).abs() < 1e-9);
        assert_eq!(plan(9, 0.3).unwrap(), plan(9, 0.3).unwrap());
        assert!(plan(1, 0.9).is_err());
    }
}
