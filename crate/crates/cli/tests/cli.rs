use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use flocknav::experiment::{ExperimentSpec, TRAJECTORY_HEADER};
use flocknav::navigation::Controller;
use flocknav::world::ScenarioConfig;

fn flocknav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flocknav")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn small_spec(dir: &Path) -> String {
    let mut spec =
        ExperimentSpec::new("small", ScenarioConfig::single_slab(3), vec![Controller::Goflock, Controller::Baseline], 2);
    spec.sim.max_duration = 3.0;
    let path = dir.join("small.toml");
    fs::write(&path, spec.to_toml()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn print_schema_describes_the_config() {
    let o = flocknav(&["--print-schema"]);
    assert_eq!(code(&o), 0);
    let schema: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let props = &schema["properties"];
    for key in ["name", "controllers", "runs", "seed_base", "gains", "sim", "scenario"] {
        assert!(props.get(key).is_some(), "schema lacks {key}");
    }
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&flocknav(&["suite", "no-such-preset"])), 2);
    assert_eq!(code(&flocknav(&["--controller", "boids", "bench"])), 2);
    assert_eq!(code(&flocknav(&[])), 2);

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "name = \"x\"\nruns = 0\n").unwrap();
    let o = flocknav(&["suite", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);

    let spec = small_spec(dir.path());
    let text = fs::read_to_string(&spec).unwrap().replace("runs = 2", "runs = 0");
    fs::write(&spec, text).unwrap();
    let o = flocknav(&["suite", &spec]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("runs must be at least 1"));
}

#[test]
fn unwritable_output_is_a_run_failure() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(dir.path());
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let o = flocknav(&["--out", blocker.to_str().unwrap(), "run", &spec]);
    assert_eq!(code(&o), 3);
}

#[test]
fn run_writes_trajectory_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(dir.path());
    let out = dir.path().join("run");
    let o = flocknav(&["--seed", "4", "--controller", "baseline", "--out", out.to_str().unwrap(), "run", &spec, "--dump-grid"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let traj = fs::read_to_string(out.join("traj.csv")).unwrap();
    assert_eq!(traj.lines().next().unwrap(), TRAJECTORY_HEADER);
    assert!(traj.lines().nth(1).unwrap().starts_with("4,"));
    for f in ["metrics.csv", "obstacles.txt", "summary.json", "trajectory.svg", "metrics.svg", "manifest.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let grid = fs::read_to_string(out.join("grid_agent0.txt")).unwrap();
    let first = grid.lines().next().unwrap();
    assert_eq!(first.split(' ').count(), 4);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["run"]["controller"], "baseline");
}

#[test]
fn suite_output_ignores_job_count() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&flocknav(&["--out", a.to_str().unwrap(), "suite", &spec])), 0);
    assert_eq!(code(&flocknav(&["--jobs", "2", "--out", b.to_str().unwrap(), "suite", &spec])), 0);
    for f in ["summary.json", "table.md", "goflock/traj_0.csv", "baseline/runs.json", "obstacles/seed_1.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    let keys = [
        "controller", "runs", "success_rate", "D_mean", "D_std", "C_mean", "C_std", "AV_mean", "AV_std",
        "min_interagent_mean", "min_obstacle_mean",
    ];
    for batch in summary.as_array().unwrap() {
        for k in keys {
            assert!(batch.get(k).is_some(), "summary lacks {k}");
        }
    }
}

#[test]
fn plot_renders_runs_and_rejects_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(dir.path());
    let out = dir.path().join("suite");
    assert_eq!(code(&flocknav(&["--out", out.to_str().unwrap(), "suite", &spec])), 0);

    let plots = dir.path().join("plots");
    let o = flocknav(&[
        "--out",
        plots.to_str().unwrap(),
        "plot",
        out.join("goflock/traj_0.csv").to_str().unwrap(),
        out.join("goflock/traj_1.csv").to_str().unwrap(),
        "--obstacles",
        out.join("obstacles/seed_0.txt").to_str().unwrap(),
        "--goal",
        "20,0,5",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["traj_0_run0_trajectory.svg", "traj_1_run1_metrics.svg", "overlay.svg"] {
        assert!(fs::read_to_string(plots.join(f)).unwrap().starts_with("<svg"), "{f}");
    }

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, format!("{TRAJECTORY_HEADER}\n")).unwrap();
    let o = flocknav(&["--out", plots.to_str().unwrap(), "plot", empty.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nothing to plot"));
}

#[test]
fn bench_reports_timings() {
    let o = flocknav(&["bench", "--scenario", "empty", "--iterations", "20"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("perception:") && text.contains("navigation:"));
}
