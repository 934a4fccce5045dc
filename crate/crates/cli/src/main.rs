use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flocknav::bench::bench;
use flocknav::experiment::{
    self, preset, spec_schema, write_manifest, write_metrics_csv, write_suite, write_trajectory_csv, ExperimentSpec,
    RunSummary, SuiteError, WriteOptions, PRESETS,
};
use flocknav::metrics::MetricSeries;
use flocknav::navigation::{Controller, NavGains};
use flocknav::perception::Perceiver;
use flocknav::plot::{centroid_overlay_svg, metrics_svg, trajectory_svg};
use flocknav::sim::{Frame, RunRecord, SimConfig};
use flocknav::world::{generate_scenario, ObstacleSet, ScenarioConfig};
use flocknav::Vec3;

#[derive(Debug, Parser)]
#[command(name = "flocknav", version, about = "Multi-agent flocking simulator and experiment runner")]
struct Cli {
    /// Seed for `run`/`bench`; first seed of the batch for `suite`/`ablate`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Controller override (goflock, baseline, siphon, or an ablation mode).
    #[arg(long, global = true, value_parser = parse_controller)]
    controller: Option<Controller>,
    /// Worker threads for batch runs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Print the JSON schema of the experiment config and exit.
    #[arg(long)]
    print_schema: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one episode and write its trajectory, metrics and plots.
    Run {
        /// Preset name or path to a TOML experiment config.
        #[arg(default_value = "exp1")]
        config: String,
        /// Also write agent 0's final local map as `x y z state` lines.
        #[arg(long)]
        dump_grid: bool,
    },
    /// Run an experiment batch.
    Suite {
        /// Preset name (exp1, exp2, ablation, forest) or path to a TOML config.
        config: String,
        /// Override the number of runs per controller.
        #[arg(long)]
        runs: Option<u64>,
        /// Skip the per-run trajectory and metric CSVs.
        #[arg(long)]
        no_traj: bool,
    },
    /// Run the three-mode avoidance ablation.
    Ablate {
        #[arg(long)]
        runs: Option<u64>,
        #[arg(long)]
        no_traj: bool,
    },
    /// Time the perception tick and the navigation command.
    Bench {
        /// forest, slab, field or empty.
        #[arg(long, default_value = "forest")]
        scenario: String,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
    },
    /// Render SVG plots from trajectory CSVs.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Obstacle export to draw under the paths.
        #[arg(long)]
        obstacles: Option<PathBuf>,
        /// Goal marker as `x,y,z`.
        #[arg(long, value_parser = parse_vec3)]
        goal: Option<Vec3>,
    },
}

fn parse_controller(s: &str) -> Result<Controller, String> {
    Controller::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Controller::ALL.iter().map(|c| c.name()).collect();
        format!("unknown controller {s:?}; expected one of {}", names.join(", "))
    })
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let parts: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    match parts[..] {
        [x, y, z] => Ok(Vec3::new(x, y, z)),
        _ => Err(format!("expected x,y,z, got {s:?}")),
    }
}

/// Failure classes, mapped onto exit codes.
#[derive(Debug)]
enum Failure {
    Config(String),
    Run(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Run(_) => 3,
        }
    }
}

impl From<SuiteError> for Failure {
    fn from(e: SuiteError) -> Self {
        match e {
            SuiteError::Spec(_) | SuiteError::Scenario { .. } => Failure::Config(e.to_string()),
            SuiteError::Run { .. } | SuiteError::Io(_) => Failure::Run(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Run(format!("i/o error: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Config(m) | Failure::Run(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    if cli.print_schema {
        println!("{}", spec_schema());
        return Ok(());
    }
    if cli.jobs == 0 {
        return Err(Failure::Config("--jobs must be at least 1".into()));
    }
    match &cli.command {
        None => Err(Failure::Config("no command given; see --help".into())),
        Some(Command::Run { config, dump_grid }) => run(cli, config, *dump_grid),
        Some(Command::Suite { config, runs, no_traj }) => suite(cli, load_specs(config)?, *runs, *no_traj),
        Some(Command::Ablate { runs, no_traj }) => suite(cli, vec![experiment::ablation()], *runs, *no_traj),
        Some(Command::Bench { scenario, iterations }) => run_bench(cli, scenario, *iterations),
        Some(Command::Plot { inputs, obstacles, goal }) => plot(cli, inputs, obstacles.as_deref(), *goal),
    }
}

fn load_specs(config: &str) -> Result<Vec<ExperimentSpec>, Failure> {
    if let Some(specs) = preset(config) {
        return Ok(specs);
    }
    let path = Path::new(config);
    if !path.exists() {
        return Err(Failure::Config(format!(
            "{config:?} is neither a preset ({}) nor an existing file",
            PRESETS.join(", ")
        )));
    }
    ExperimentSpec::load(path).map(|s| vec![s]).map_err(|e| Failure::Config(e.to_string()))
}

fn apply_overrides(cli: &Cli, spec: &mut ExperimentSpec, runs: Option<u64>) -> Result<(), Failure> {
    if let Some(s) = cli.seed {
        spec.seed_base = s;
    }
    if let Some(c) = cli.controller {
        spec.controllers = vec![c];
    }
    if let Some(r) = runs {
        spec.runs = r;
    }
    spec.validate().map_err(|e| Failure::Config(e.to_string()))
}

fn out_dir(cli: &Cli, spec: &ExperimentSpec, fallback: &str) -> PathBuf {
    cli.out.clone().or_else(|| spec.output_dir.clone()).unwrap_or_else(|| PathBuf::from(fallback))
}

fn run(cli: &Cli, config: &str, dump_grid: bool) -> Result<(), Failure> {
    let mut spec = load_specs(config)?.remove(0);
    apply_overrides(cli, &mut spec, Some(1))?;
    let seed = spec.seed_base;
    let controller = spec.controllers[0];
    let out = out_dir(cli, &spec, "out/run");
    let started = std::time::SystemTime::now();

    let scenario = spec.scenario_for(seed)?;
    let rec = spec.run_one(controller, seed)?;
    let m = MetricSeries::from_record(&rec);
    fs::create_dir_all(&out)?;
    write_trajectory_csv(&rec, io::BufWriter::new(fs::File::create(out.join("traj.csv"))?))?;
    write_metrics_csv(&m, io::BufWriter::new(fs::File::create(out.join("metrics.csv"))?))?;
    fs::write(out.join("obstacles.txt"), scenario.obstacles.to_text())?;
    let summary = serde_json::json!({
        "run": RunSummary::new(&rec, &m),
        "events": rec.events,
    });
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary).expect("json") + "\n")?;
    let plot_err = |e: flocknav::plot::PlotError| Failure::Run(e.to_string());
    fs::write(out.join("trajectory.svg"), trajectory_svg(&rec.frames, Some(&scenario.obstacles), Some(rec.goal)).map_err(plot_err)?)?;
    fs::write(out.join("metrics.svg"), metrics_svg(&rec.frames).map_err(plot_err)?)?;
    if dump_grid {
        fs::write(out.join("grid_agent0.txt"), replay_grid(&rec, &scenario.obstacles, &spec.sim))?;
    }
    write_manifest(&out, &spec.name, started, 1)?;

    println!(
        "{} seed {seed} {controller}: {} after {:.2} s, D {:.3}, C {}, AV {:.3}",
        spec.name,
        rec.outcome.name(),
        rec.duration(),
        m.d_mean(),
        m.c_mean().map_or("-".into(), |c| format!("{c:.3}")),
        m.av
    );
    println!("wrote {}", out.display());
    Ok(())
}

/// Agent 0's local map rebuilt by replaying its poses at each perception tick.
fn replay_grid(rec: &RunRecord, world: &ObstacleSet, cfg: &SimConfig) -> String {
    let Some(first) = rec.frames.first() else { return String::new() };
    let mut p = Perceiver::new(cfg.perception, first.positions[0]);
    for f in rec.frames.iter().step_by(cfg.perception_steps()) {
        let v = f.velocities[0];
        let yaw = if v.horizontal().norm() > cfg.heading_speed { v.y.atan2(v.x) } else { 0.0 };
        p.sense(f.positions[0], yaw, world);
    }
    p.grid().dump_text()
}

fn suite(cli: &Cli, specs: Vec<ExperimentSpec>, runs: Option<u64>, no_traj: bool) -> Result<(), Failure> {
    let many = specs.len() > 1;
    for mut spec in specs {
        apply_overrides(cli, &mut spec, runs)?;
        let base = out_dir(cli, &spec, "out");
        let out = if many || cli.out.is_none() { base.join(&spec.name) } else { base };
        eprintln!("{}: {} runs x {} controllers -> {}", spec.name, spec.runs, spec.controllers.len(), out.display());
        let result = write_suite(&spec, &out, WriteOptions { jobs: cli.jobs, per_run_csv: !no_traj })?;
        println!("## {}\n\n{}", spec.name, experiment::comparison_table(&result));
    }
    Ok(())
}

fn run_bench(cli: &Cli, scenario: &str, iterations: usize) -> Result<(), Failure> {
    let seed = cli.seed.unwrap_or(1);
    let cfg = match scenario {
        "forest" => ScenarioConfig::forest(9, seed),
        "slab" => ScenarioConfig::single_slab(9),
        "field" => ScenarioConfig::random_field(9),
        "empty" => ScenarioConfig::empty(9),
        other => return Err(Failure::Config(format!("unknown bench scenario {other:?}"))),
    };
    let sc = generate_scenario(&cfg).map_err(|e| Failure::Config(e.to_string()))?;
    let controller = cli.controller.unwrap_or_default();
    let report = bench(&sc, controller, &NavGains::default(), &SimConfig::default(), iterations)
        .map_err(|e| Failure::Run(e.to_string()))?;
    print!("{}", report.to_text());
    if let Some(out) = &cli.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("bench.json"), serde_json::to_string_pretty(&report).expect("json") + "\n")?;
    }
    Ok(())
}

fn plot(cli: &Cli, inputs: &[PathBuf], obstacles: Option<&Path>, goal: Option<Vec3>) -> Result<(), Failure> {
    let obstacles = match obstacles {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            Some(ObstacleSet::from_text(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let mut runs: Vec<(String, u64, Vec<Frame>)> = Vec::new();
    for path in inputs {
        let f = fs::File::open(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let stem = path.file_stem().map_or("traj".into(), |s| s.to_string_lossy().into_owned());
        let parsed = experiment::read_trajectory_csv(f).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        runs.extend(parsed.into_iter().map(|(id, frames)| (stem.clone(), id, frames)));
    }

    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let plot_err = |e: flocknav::plot::PlotError| Failure::Config(e.to_string());
    if runs.iter().all(|(_, _, f)| f.is_empty()) {
        return Err(plot_err(flocknav::plot::PlotError::Empty));
    }
    fs::create_dir_all(&out)?;
    for (stem, id, frames) in &runs {
        if frames.is_empty() {
            continue;
        }
        fs::write(out.join(format!("{stem}_run{id}_trajectory.svg")), trajectory_svg(frames, obstacles.as_ref(), goal).map_err(plot_err)?)?;
        fs::write(out.join(format!("{stem}_run{id}_metrics.svg")), metrics_svg(frames).map_err(plot_err)?)?;
    }
    if runs.len() > 1 {
        let refs: Vec<(u64, &[Frame])> = runs.iter().map(|(_, id, f)| (*id, f.as_slice())).collect();
        fs::write(out.join("overlay.svg"), centroid_overlay_svg(&refs, obstacles.as_ref()).map_err(plot_err)?)?;
    }
    println!("plotted {} run(s) into {}", runs.len(), out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_goal_vectors() {
        assert_eq!(parse_vec3("1, 2,3.5").unwrap(), Vec3::new(1.0, 2.0, 3.5));
        assert!(parse_vec3("1,2").is_err());
        assert!(parse_vec3("a,b,c").is_err());
    }

    #[test]
    fn controller_names_round_trip() {
        for c in Controller::ALL {
            assert_eq!(parse_controller(c.name()).unwrap(), c);
        }
        assert!(parse_controller("boids").is_err());
    }

    #[test]
    fn suite_errors_split_by_class() {
        let cfg = Failure::from(SuiteError::Scenario { seed: 1, message: "x".into() });
        assert_eq!(cfg.code(), 2);
        let io = Failure::from(io::Error::other("disk"));
        assert_eq!(io.code(), 3);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
