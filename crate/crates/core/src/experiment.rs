//! Experiment batches: specs, presets, suite execution and artifact output.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{summarize, BatchSummary, MetricSeries};
use crate::navigation::{Controller, NavGains};
use crate::geometry::Vec3;
use crate::perception::PerceptionOutput;
use crate::sim::{run_episode, Frame, Outcome, RunRecord, SimConfig, SimError};
use crate::world::{generate_scenario, Scenario, ScenarioConfig};

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("cannot parse experiment spec: {0}")]
    Parse(String),
    #[error("invalid experiment spec: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("run with seed {seed} ({controller}) failed: {source}")]
    Run { controller: Controller, seed: u64, source: SimError },
    #[error("scenario for seed {seed} is invalid: {message}")]
    Scenario { seed: u64, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// One batch of runs: a scenario, the controllers to compare and the seeds.
/// Runs use seeds `seed_base .. seed_base + runs`; the seed picks the
/// start/goal placement (and the layout, for reseeding scenarios).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub controllers: Vec<Controller>,
    pub runs: u64,
    #[serde(default)]
    pub seed_base: u64,
    /// Where the CLI writes artifacts when `--out` is not given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub gains: NavGains,
    #[serde(default)]
    pub sim: SimConfig,
    pub scenario: ScenarioConfig,
}

impl ExperimentSpec {
    pub fn new(name: &str, scenario: ScenarioConfig, controllers: Vec<Controller>, runs: u64) -> Self {
        Self {
            name: name.to_string(),
            controllers,
            runs,
            seed_base: 0,
            output_dir: None,
            gains: NavGains::default(),
            sim: SimConfig::default(),
            scenario,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, SpecError> {
        let spec: Self = toml::from_str(text).map_err(|e| SpecError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes to toml")
    }

    pub fn load(path: &Path) -> Result<Self, SpecError> {
        let text = fs::read_to_string(path).map_err(|e| SpecError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let bad = |m: String| Err(SpecError::Invalid(m));
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.controllers.is_empty() {
            return bad("at least one controller is required".into());
        }
        if self.seed_base.checked_add(self.runs).is_none() {
            return bad("seed range overflows".into());
        }
        self.gains.validate().or_else(|e| bad(e.to_string()))?;
        self.sim.validate().or_else(|e| bad(e.to_string()))?;
        self.scenario.validate().or_else(|e| bad(e.to_string()))?;
        Ok(())
    }

    pub fn seeds(&self) -> std::ops::Range<u64> {
        self.seed_base..self.seed_base + self.runs
    }

    pub fn scenario_for(&self, seed: u64) -> Result<Scenario, SuiteError> {
        generate_scenario(&self.scenario.for_run(seed))
            .map_err(|e| SuiteError::Scenario { seed, message: e.to_string() })
    }

    pub fn run_one(&self, controller: Controller, seed: u64) -> Result<RunRecord, SuiteError> {
        let scenario = self.scenario_for(seed)?;
        run_episode(&scenario, controller, seed, &self.gains, &self.sim)
            .map_err(|source| SuiteError::Run { controller, seed, source })
    }
}

/// JSON schema of the spec file format.
pub fn spec_schema() -> String {
    serde_json::to_string_pretty(&schemars::schema_for!(ExperimentSpec)).expect("schema serializes")
}

pub const PRESETS: [&str; 4] = ["exp1", "exp2", "ablation", "forest"];

/// Slab crossing, GO-Flock against the siphon variant. Collisions are
/// logged without halting so both controllers are measured over the
/// whole crossing.
pub fn experiment1() -> ExperimentSpec {
    let mut s =
        ExperimentSpec::new("exp1", ScenarioConfig::single_slab(9), vec![Controller::Goflock, Controller::Siphon], 20);
    s.sim.halt_on_collision = false;
    s.sim.max_duration = 40.0;
    s
}

/// Random box field, GO-Flock against the goal-direct baseline.
pub fn experiment2() -> ExperimentSpec {
    let mut s =
        ExperimentSpec::new("exp2", ScenarioConfig::random_field(9), vec![Controller::Goflock, Controller::Baseline], 30);
    s.sim.halt_on_collision = false;
    s
}

/// The three avoidance modes around a single block.
pub fn ablation() -> ExperimentSpec {
    let mut s = ExperimentSpec::new(
        "ablation",
        ScenarioConfig::ablation_block(6, 2.5),
        vec![Controller::AblationNoAvoidance, Controller::AblationW2Only, Controller::AblationW3W4Only],
        20,
    );
    s.gains.tau = 2.0;
    s.sim.max_duration = 40.0;
    s
}

/// GO-Flock in one generated forest at one speed cap.
pub fn forest(layout_seed: u64, phi_max: f64) -> ExperimentSpec {
    let name = format!("forest{layout_seed}_v{phi_max}");
    let mut s = ExperimentSpec::new(&name, ScenarioConfig::forest(9, layout_seed), vec![Controller::Goflock], 30);
    s.gains.phi_max = phi_max;
    s.sim.max_duration = 120.0;
    s
}

/// Two forests, each flown at two speed caps.
pub fn forest_suite() -> Vec<ExperimentSpec> {
    let mut out = Vec::new();
    for layout in [1, 2] {
        for phi_max in [1.0, 2.0] {
            out.push(forest(layout, phi_max));
        }
    }
    out
}

pub fn preset(name: &str) -> Option<Vec<ExperimentSpec>> {
    match name {
        "exp1" => Some(vec![experiment1()]),
        "exp2" => Some(vec![experiment2()]),
        "ablation" => Some(vec![ablation()]),
        "forest" => Some(forest_suite()),
        _ => None,
    }
}

/// Per-controller result of a suite.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerBatch {
    pub controller: Controller,
    /// Sorted by run id.
    pub metrics: Vec<MetricSeries>,
    pub summary: BatchSummary,
}

impl ControllerBatch {
    pub fn count(&self, outcome: Outcome) -> usize {
        self.metrics.iter().filter(|m| m.outcome == outcome).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: String,
    pub batches: Vec<ControllerBatch>,
}

impl SuiteResult {
    pub fn batch(&self, c: Controller) -> Option<&ControllerBatch> {
        self.batches.iter().find(|b| b.controller == c)
    }

    pub fn summaries(&self) -> Vec<&BatchSummary> {
        self.batches.iter().map(|b| &b.summary).collect()
    }
}

/// Runs every (controller, seed) pair on up to `jobs` threads. `sink` sees
/// each finished record on the calling thread, in completion order. The
/// returned batches do not depend on `jobs`.
pub fn run_suite<F>(spec: &ExperimentSpec, jobs: usize, mut sink: F) -> Result<SuiteResult, SuiteError>
where
    F: FnMut(&RunRecord, &MetricSeries) -> Result<(), SuiteError>,
{
    spec.validate()?;
    let tasks: Vec<(usize, Controller, u64)> = spec
        .controllers
        .iter()
        .enumerate()
        .flat_map(|(ci, &c)| spec.seeds().map(move |s| (ci, c, s)))
        .collect();
    let mut per: Vec<Vec<MetricSeries>> = vec![Vec::new(); spec.controllers.len()];
    let next = AtomicUsize::new(0);
    let mut first_err: Option<SuiteError> = None;

    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..jobs.clamp(1, tasks.len()) {
            let tx = tx.clone();
            let (tasks, next) = (&tasks, &next);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(ci, c, seed)) = tasks.get(i) else { break };
                let res = spec.run_one(c, seed);
                let failed = res.is_err();
                if tx.send((ci, res)).is_err() || failed {
                    // stop handing out work after a failure
                    next.store(tasks.len(), Ordering::Relaxed);
                    break;
                }
            });
        }
        drop(tx);
        for (ci, res) in rx {
            if first_err.is_some() {
                continue;
            }
            match res {
                Ok(rec) => {
                    let m = MetricSeries::from_record(&rec);
                    if let Err(e) = sink(&rec, &m) {
                        first_err = Some(e);
                        next.store(tasks.len(), Ordering::Relaxed);
                        continue;
                    }
                    per[ci].push(m);
                }
                Err(e) => first_err = Some(e),
            }
        }
    });
    if let Some(e) = first_err {
        return Err(e);
    }

    let batches = spec
        .controllers
        .iter()
        .zip(per)
        .map(|(&controller, mut metrics)| {
            metrics.sort_by_key(|m| m.run_id);
            let summary = summarize(controller.name(), &metrics);
            ControllerBatch { controller, metrics, summary }
        })
        .collect();
    Ok(SuiteResult { name: spec.name.clone(), batches })
}

pub const TRAJECTORY_HEADER: &str =
    "run_id,t,agent_id,x,y,z,vx,vy,vz,w1x,w1y,w1z,w2x,w2y,w2z,w3x,w3y,w3z,w4x,w4y,w4z,goal_visible";

fn opt3(out: &mut Vec<String>, v: Option<Vec3>) {
    match v {
        Some(p) => out.extend([p.x, p.y, p.z].map(|c| c.to_string())),
        None => out.extend(std::iter::repeat(String::new()).take(3)),
    }
}

/// One row per agent per frame.
pub fn write_trajectory_csv<W: Write>(record: &RunRecord, w: W) -> Result<(), SuiteError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(TRAJECTORY_HEADER.split(',')).map_err(csv_err)?;
    let mut row = Vec::with_capacity(22);
    for f in &record.frames {
        for (i, (p, v)) in f.positions.iter().zip(&f.velocities).enumerate() {
            row.clear();
            row.push(record.run_id.to_string());
            row.push(f.t.to_string());
            row.push(i.to_string());
            opt3(&mut row, Some(*p));
            opt3(&mut row, Some(*v));
            let pc = f.perception.get(i);
            opt3(&mut row, pc.map(|o| o.w1));
            opt3(&mut row, pc.and_then(|o| o.w2));
            opt3(&mut row, pc.and_then(|o| o.w3));
            opt3(&mut row, pc.and_then(|o| o.w4));
            row.push(pc.map_or(String::new(), |o| u8::from(o.goal_visible).to_string()));
            wr.write_record(&row).map_err(csv_err)?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Reads a trajectory CSV back into frames, grouped by run id in file order.
pub fn read_trajectory_csv<R: io::Read>(r: R) -> Result<Vec<(u64, Vec<Frame>)>, SuiteError> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header.join(",") != TRAJECTORY_HEADER {
        return Err(SuiteError::Io(io::Error::new(io::ErrorKind::InvalidData, "not a trajectory csv")));
    }
    let mut runs: Vec<(u64, Vec<Frame>)> = Vec::new();
    for (n, row) in rd.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let bad = || SuiteError::Io(io::Error::new(io::ErrorKind::InvalidData, format!("bad row {}", n + 2)));
        let num = |i: usize| row.get(i).and_then(|s| s.parse::<f64>().ok()).ok_or_else(bad);
        let v3 = |i: usize| -> Result<Vec3, SuiteError> { Ok(Vec3::new(num(i)?, num(i + 1)?, num(i + 2)?)) };
        let ov3 = |i: usize| -> Result<Option<Vec3>, SuiteError> {
            if row.get(i).is_some_and(str::is_empty) { Ok(None) } else { v3(i).map(Some) }
        };
        let run_id: u64 = row.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let t = num(1)?;
        let out = PerceptionOutput {
            w1: v3(9)?,
            w2: ov3(12)?,
            w3: ov3(15)?,
            w4: ov3(18)?,
            goal_visible: row.get(21) == Some("1"),
        };
        if runs.last().map_or(true, |(id, _)| *id != run_id) {
            runs.push((run_id, Vec::new()));
        }
        let frames = &mut runs.last_mut().expect("pushed above").1;
        if frames.last().map_or(true, |f| f.t != t) {
            frames.push(Frame { t, positions: vec![], velocities: vec![], perception: vec![] });
        }
        let f = frames.last_mut().expect("pushed above");
        f.positions.push(v3(3)?);
        f.velocities.push(v3(6)?);
        f.perception.push(out);
    }
    Ok(runs)
}

/// Per-step D(t) and C(t); undefined C is an empty field.
pub fn write_metrics_csv<W: Write>(m: &MetricSeries, w: W) -> Result<(), SuiteError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["run_id", "t", "D", "C"]).map_err(csv_err)?;
    for ((t, d), c) in m.t.iter().zip(&m.d).zip(&m.c) {
        wr.write_record([m.run_id.to_string(), t.to_string(), d.to_string(), c.map_or(String::new(), |c| c.to_string())])
            .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> SuiteError {
    SuiteError::Io(io::Error::other(e))
}

/// Per-run scalar results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: u64,
    pub controller: Controller,
    pub outcome: Outcome,
    pub duration: f64,
    #[serde(rename = "D_mean")]
    pub d_mean: f64,
    #[serde(rename = "C_mean")]
    pub c_mean: Option<f64>,
    #[serde(rename = "C_min")]
    pub c_min: Option<f64>,
    #[serde(rename = "AV")]
    pub av: f64,
    pub av_to_timeout: bool,
    pub min_interagent: f64,
    pub min_obstacle: f64,
}

impl RunSummary {
    pub fn new(record: &RunRecord, m: &MetricSeries) -> Self {
        Self {
            run_id: record.run_id,
            controller: record.controller,
            outcome: record.outcome,
            duration: record.duration(),
            d_mean: m.d_mean(),
            c_mean: m.c_mean(),
            c_min: m.c_min(),
            av: m.av,
            av_to_timeout: m.av_to_timeout,
            min_interagent: m.min_interagent,
            min_obstacle: m.min_obstacle,
        }
    }
}

fn pm(mean: f64, std: f64) -> String {
    format!("{mean:.2} ± {std:.2}")
}

/// Markdown comparison table: one column per controller.
pub fn comparison_table(result: &SuiteResult) -> String {
    let mut s = String::new();
    s.push_str("| Metric |");
    for b in &result.batches {
        s.push_str(&format!(" {} |", b.controller));
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(result.batches.len()));
    s.push('\n');
    type Cell = fn(&ControllerBatch) -> String;
    let rows: [(&str, Cell); 7] = [
        ("D", |b| pm(b.summary.d_mean, b.summary.d_std)),
        ("CS", |b| pm(b.summary.c_mean, b.summary.c_std)),
        ("AV", |b| pm(b.summary.av_mean, b.summary.av_std)),
        ("success rate", |b| format!("{:.2}", b.summary.success_rate)),
        ("collision runs", |b| b.count(Outcome::Collision).to_string()),
        ("timeout runs", |b| b.count(Outcome::Timeout).to_string()),
        ("runs", |b| b.summary.runs.to_string()),
    ];
    for (label, cell) in rows {
        s.push_str(&format!("| {label} |"));
        for b in &result.batches {
            s.push_str(&format!(" {} |", cell(b)));
        }
        s.push('\n');
    }
    s
}

/// Options for [`write_suite`].
#[derive(Debug, Clone, Copy)]
pub struct WriteOptions {
    pub jobs: usize,
    /// Per-run trajectory and metric CSVs; these dominate disk use.
    pub per_run_csv: bool,
}

impl Default for WriteOptions {
    fn default() -> Self {
        Self { jobs: 1, per_run_csv: true }
    }
}

/// Runs a suite and writes its artifacts under `out`:
///
/// ```text
/// spec.toml  summary.json  table.md  manifest.json
/// obstacles/seed_<s>.txt
/// <controller>/summary.json  <controller>/runs.json
/// <controller>/traj_<s>.csv  <controller>/metrics_<s>.csv
/// ```
///
/// Everything except `manifest.json` is a pure function of the spec.
pub fn write_suite(spec: &ExperimentSpec, out: &Path, opts: WriteOptions) -> Result<SuiteResult, SuiteError> {
    spec.validate()?;
    let started = std::time::SystemTime::now();
    fs::create_dir_all(out.join("obstacles"))?;
    for c in &spec.controllers {
        fs::create_dir_all(out.join(c.name()))?;
    }
    fs::write(out.join("spec.toml"), spec.to_toml())?;
    for seed in spec.seeds() {
        let sc = spec.scenario_for(seed)?;
        fs::write(out.join("obstacles").join(format!("seed_{seed}.txt")), sc.obstacles.to_text())?;
    }

    let mut runs: Vec<RunSummary> = Vec::new();
    let result = run_suite(spec, opts.jobs, |rec, m| {
        runs.push(RunSummary::new(rec, m));
        if opts.per_run_csv {
            let dir = out.join(rec.controller.name());
            let f = io::BufWriter::new(fs::File::create(dir.join(format!("traj_{}.csv", rec.run_id)))?);
            write_trajectory_csv(rec, f)?;
            let f = io::BufWriter::new(fs::File::create(dir.join(format!("metrics_{}.csv", rec.run_id)))?);
            write_metrics_csv(m, f)?;
        }
        Ok(())
    })?;
    runs.sort_by_key(|r| (spec.controllers.iter().position(|c| *c == r.controller), r.run_id));

    for b in &result.batches {
        let dir = out.join(b.controller.name());
        fs::write(dir.join("summary.json"), json(&b.summary))?;
        let mine: Vec<&RunSummary> = runs.iter().filter(|r| r.controller == b.controller).collect();
        fs::write(dir.join("runs.json"), json(&mine))?;
    }
    fs::write(out.join("summary.json"), json(&result.summaries()))?;
    fs::write(out.join("table.md"), comparison_table(&result))?;
    write_manifest(out, &spec.name, started, opts.jobs)?;
    Ok(result)
}

fn json<T: Serialize + ?Sized>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Wall-clock facts about an invocation; kept apart from the data files.
pub fn write_manifest(out: &Path, name: &str, started: std::time::SystemTime, jobs: usize) -> io::Result<()> {
    let unix = |t: std::time::SystemTime| t.duration_since(std::time::UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
    let finished = std::time::SystemTime::now();
    let m = serde_json::json!({
        "name": name,
        "version": env!("CARGO_PKG_VERSION"),
        "started_unix": unix(started),
        "finished_unix": unix(finished),
        "wall_seconds": unix(finished) - unix(started),
        "jobs": jobs,
    });
    fs::write(out.join("manifest.json"), json(&m))
}
