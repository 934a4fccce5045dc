//! Flock-level metrics: dispersion, velocity alignment, average speed, and
//! their aggregation over batches of runs.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::sim::{Outcome, RunRecord};

/// Velocities (and mean velocities) shorter than this are treated as zero.
pub const SPEED_EPS: f64 = 1e-6;

/// Agents are "arrived" once within this distance of the goal.
pub const ARRIVAL_DISTANCE: f64 = 3.0;

pub fn centroid(points: &[Vec3]) -> Vec3 {
    let mut s = Vec3::ZERO;
    for p in points {
        s += *p;
    }
    s / points.len() as f64
}

/// Mean distance of the agents from their centroid.
pub fn dispersion(positions: &[Vec3]) -> f64 {
    assert!(!positions.is_empty(), "dispersion needs at least one agent");
    let c = centroid(positions);
    positions.iter().map(|p| p.distance(c)).sum::<f64>() / positions.len() as f64
}

/// Mean cosine between each velocity and the mean velocity. `None` when the
/// mean velocity vanishes. Near-zero velocities are skipped but still count
/// in the divisor.
pub fn cosine_similarity(velocities: &[Vec3]) -> Option<f64> {
    assert!(!velocities.is_empty(), "cosine similarity needs at least one agent");
    let mean = centroid(velocities);
    let mn = mean.norm();
    if mn < SPEED_EPS {
        return None;
    }
    let s: f64 = velocities
        .iter()
        .filter(|v| v.norm() >= SPEED_EPS)
        .map(|v| v.dot(mean) / (v.norm() * mn))
        .sum();
    Some(s / velocities.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageSpeed {
    pub value: f64,
    /// The flock never came within the arrival distance; measured to the
    /// end of the record instead.
    pub to_timeout: bool,
}

/// Centroid displacement from the first frame to the last frame in which
/// every agent is still at least [`ARRIVAL_DISTANCE`] from the goal, over
/// the elapsed time.
pub fn average_speed(record: &RunRecord) -> AverageSpeed {
    let Some(first) = record.frames.first() else {
        return AverageSpeed { value: 0.0, to_timeout: true };
    };
    let mut last = None;
    let mut arrived = false;
    for (i, f) in record.frames.iter().enumerate() {
        if f.positions.iter().all(|p| p.distance(record.goal) >= ARRIVAL_DISTANCE) {
            last = Some(i);
        } else {
            arrived = true;
        }
    }
    let end = &record.frames[last.unwrap_or(record.frames.len() - 1)];
    let elapsed = end.t - first.t;
    if elapsed <= 0.0 {
        return AverageSpeed { value: 0.0, to_timeout: !arrived };
    }
    let value = centroid(&first.positions).distance(centroid(&end.positions)) / elapsed;
    AverageSpeed { value, to_timeout: !arrived }
}

/// Per-run metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub run_id: u64,
    pub t: Vec<f64>,
    pub d: Vec<f64>,
    pub c: Vec<Option<f64>>,
    pub av: f64,
    pub av_to_timeout: bool,
    pub min_interagent: f64,
    pub min_obstacle: f64,
    pub outcome: Outcome,
}

impl MetricSeries {
    pub fn from_record(record: &RunRecord) -> Self {
        let av = average_speed(record);
        Self {
            run_id: record.run_id,
            t: record.frames.iter().map(|f| f.t).collect(),
            d: record.frames.iter().map(|f| dispersion(&f.positions)).collect(),
            c: record.frames.iter().map(|f| cosine_similarity(&f.velocities)).collect(),
            av: av.value,
            av_to_timeout: av.to_timeout,
            min_interagent: record.min_interagent,
            min_obstacle: record.min_obstacle,
            outcome: record.outcome,
        }
    }

    pub fn d_mean(&self) -> f64 {
        mean(&self.d)
    }

    /// Mean over the steps where C is defined.
    pub fn c_mean(&self) -> Option<f64> {
        let defined: Vec<f64> = self.c.iter().flatten().copied().collect();
        (!defined.is_empty()).then(|| mean(&defined))
    }

    /// Lowest defined C over the run.
    pub fn c_min(&self) -> Option<f64> {
        self.c.iter().flatten().copied().reduce(f64::min)
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub controller: String,
    pub runs: usize,
    pub success_rate: f64,
    #[serde(rename = "D_mean")]
    pub d_mean: f64,
    #[serde(rename = "D_std")]
    pub d_std: f64,
    #[serde(rename = "C_mean")]
    pub c_mean: f64,
    #[serde(rename = "C_std")]
    pub c_std: f64,
    #[serde(rename = "AV_mean")]
    pub av_mean: f64,
    #[serde(rename = "AV_std")]
    pub av_std: f64,
    pub min_interagent_mean: f64,
    pub min_obstacle_mean: f64,
}

/// Averages each metric within runs first, then across runs. Runs are
/// sorted by id so the result does not depend on batch order.
pub fn summarize(controller: &str, batch: &[MetricSeries]) -> BatchSummary {
    assert!(!batch.is_empty(), "summarize needs at least one run");
    let mut runs: Vec<&MetricSeries> = batch.iter().collect();
    runs.sort_by_key(|m| m.run_id);
    let d: Vec<f64> = runs.iter().map(|m| m.d_mean()).collect();
    let c: Vec<f64> = runs.iter().filter_map(|m| m.c_mean()).collect();
    let av: Vec<f64> = runs.iter().map(|m| m.av).collect();
    let inter: Vec<f64> = runs.iter().map(|m| m.min_interagent).filter(|x| x.is_finite()).collect();
    let obst: Vec<f64> = runs.iter().map(|m| m.min_obstacle).filter(|x| x.is_finite()).collect();
    let ok = runs.iter().filter(|m| m.outcome == Outcome::Success).count();
    BatchSummary {
        controller: controller.to_string(),
        runs: runs.len(),
        success_rate: ok as f64 / runs.len() as f64,
        d_mean: mean(&d),
        d_std: sample_std(&d),
        c_mean: mean(&c),
        c_std: sample_std(&c),
        av_mean: mean(&av),
        av_std: sample_std(&av),
        min_interagent_mean: mean(&inter),
        min_obstacle_mean: mean(&obst),
    }
}
