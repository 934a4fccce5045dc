//! SVG plots: top-down trajectories, D(t)/C(t) panels and batch centroid
//! overlays. Output is plain text with fixed number formatting, so equal
//! inputs give equal bytes.

use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::{Aabb, Primitive, Vec3};
use crate::metrics::{centroid, cosine_similarity, dispersion};
use crate::sim::Frame;
use crate::world::ObstacleSet;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlotError {
    #[error("nothing to plot")]
    Empty,
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

const WIDTH: f64 = 800.0;
const MARGIN: f64 = 40.0;

/// World-to-pixel transform for a top-down view, y pointing up.
struct View {
    min_x: f64,
    max_y: f64,
    scale: f64,
    height: f64,
}

impl View {
    fn fit(points: impl Iterator<Item = Vec3>, pad: f64) -> Option<Self> {
        let mut b: Option<Aabb> = None;
        for p in points {
            b = Some(match b {
                None => Aabb::new(p, p),
                Some(b) => Aabb::new(b.min.min_by_component(p), b.max.max_by_component(p)),
            });
        }
        let b = b?;
        let (w, h) = ((b.max.x - b.min.x + 2.0 * pad).max(1.0), (b.max.y - b.min.y + 2.0 * pad).max(1.0));
        let scale = (WIDTH - 2.0 * MARGIN) / w;
        Some(Self { min_x: b.min.x - pad, max_y: b.max.y + pad, scale, height: h * scale + 2.0 * MARGIN })
    }

    fn x(&self, x: f64) -> f64 {
        MARGIN + (x - self.min_x) * self.scale
    }

    fn y(&self, y: f64) -> f64 {
        MARGIN + (self.max_y - y) * self.scale
    }

    fn header(&self, out: &mut String, title: &str) {
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{h:.0}" viewBox="0 0 {WIDTH:.0} {h:.0}">"#,
            h = self.height
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(out, r#"<text x="{MARGIN}" y="24" font-family="sans-serif" font-size="14">{title}</text>"#);
        let _ = writeln!(
            out,
            r#"<clipPath id="area"><rect x="{MARGIN}" y="{MARGIN}" width="{:.2}" height="{:.2}"/></clipPath>"#,
            WIDTH - 2.0 * MARGIN,
            self.height - 2.0 * MARGIN
        );
    }

    fn obstacles(&self, out: &mut String, obstacles: &ObstacleSet) {
        let _ = writeln!(out, r##"<g clip-path="url(#area)" fill="#bbbbbb" stroke="#555555" stroke-width="1">"##);
        for p in &obstacles.primitives {
            let _ = match *p {
                Primitive::Box(b) => writeln!(
                    out,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}"/>"#,
                    self.x(b.min.x),
                    self.y(b.max.y),
                    (b.max.x - b.min.x) * self.scale,
                    (b.max.y - b.min.y) * self.scale
                ),
                Primitive::Cylinder { center_x, center_y, radius, .. } => self.circle(out, center_x, center_y, radius),
                Primitive::Sphere { center, radius } => self.circle(out, center.x, center.y, radius),
            };
        }
        out.push_str("</g>\n");
    }

    fn circle(&self, out: &mut String, x: f64, y: f64, r: f64) -> std::fmt::Result {
        writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill-opacity="0.6"/>"#, self.x(x), self.y(y), r * self.scale)
    }

    fn polyline(&self, out: &mut String, pts: &[Vec3], color: &str, width: f64) {
        let mut s = String::new();
        for p in pts {
            let _ = write!(s, "{:.2},{:.2} ", self.x(p.x), self.y(p.y));
        }
        let _ = writeln!(
            out,
            r#"<polyline clip-path="url(#area)" points="{}" fill="none" stroke="{color}" stroke-width="{width}"/>"#,
            s.trim_end()
        );
    }

    fn marker(&self, out: &mut String, p: Vec3, color: &str, r: f64) {
        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="{r}" fill="{color}"/>"#, self.x(p.x), self.y(p.y));
    }
}

/// Top-down XY paths of every agent over obstacle footprints.
pub fn trajectory_svg(frames: &[Frame], obstacles: Option<&ObstacleSet>, goal: Option<Vec3>) -> Result<String, PlotError> {
    let agents = frames.first().map_or(0, |f| f.positions.len());
    if agents == 0 {
        return Err(PlotError::Empty);
    }
    let pts = frames.iter().flat_map(|f| f.positions.iter().copied()).chain(goal);
    let view = View::fit(pts, 3.0).ok_or(PlotError::Empty)?;
    let mut out = String::new();
    view.header(&mut out, "trajectories (top view)");
    if let Some(o) = obstacles {
        view.obstacles(&mut out, o);
    }
    for a in 0..agents {
        let path: Vec<Vec3> = frames.iter().filter_map(|f| f.positions.get(a).copied()).collect();
        let color = PALETTE[a % PALETTE.len()];
        view.polyline(&mut out, &path, color, 1.5);
        view.marker(&mut out, path[0], color, 3.0);
        view.marker(&mut out, path[path.len() - 1], "#d62728", 3.0);
    }
    if let Some(g) = goal {
        view.marker(&mut out, g, "#000000", 5.0);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Stacked D(t) and C(t) panels.
pub fn metrics_svg(frames: &[Frame]) -> Result<String, PlotError> {
    if frames.is_empty() || frames[0].positions.is_empty() {
        return Err(PlotError::Empty);
    }
    let t: Vec<f64> = frames.iter().map(|f| f.t).collect();
    let d: Vec<Option<f64>> = frames.iter().map(|f| Some(dispersion(&f.positions))).collect();
    let c: Vec<Option<f64>> = frames.iter().map(|f| cosine_similarity(&f.velocities)).collect();
    let d_max = d.iter().flatten().fold(1.0f64, |a, &b| a.max(b)).ceil();

    let (panel_h, gap) = (180.0, 50.0);
    let height = 2.0 * panel_h + gap + 2.0 * MARGIN;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{height:.0}" viewBox="0 0 {WIDTH:.0} {height:.0}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let t_end = t[t.len() - 1].max(1e-9);
    panel(&mut out, MARGIN, panel_h, "D(t) [m]", &t, &d, (0.0, d_max), t_end, "#1f77b4");
    panel(&mut out, MARGIN + panel_h + gap, panel_h, "C(t)", &t, &c, (-1.0, 1.0), t_end, "#d62728");
    out.push_str("</svg>\n");
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn panel(
    out: &mut String,
    top: f64,
    h: f64,
    label: &str,
    t: &[f64],
    ys: &[Option<f64>],
    (lo, hi): (f64, f64),
    t_end: f64,
    color: &str,
) {
    let w = WIDTH - 2.0 * MARGIN;
    let px = |x: f64| MARGIN + x / t_end * w;
    let py = |y: f64| top + h - (y - lo) / (hi - lo) * h;
    let _ = writeln!(out, r##"<rect x="{MARGIN}" y="{top}" width="{w}" height="{h}" fill="none" stroke="#999999"/>"##);
    let _ = writeln!(out, r#"<text x="{MARGIN}" y="{:.0}" font-family="sans-serif" font-size="13">{label}</text>"#, top - 6.0);
    for v in [lo, (lo + hi) / 2.0, hi] {
        let _ = writeln!(
            out,
            r##"<text x="4" y="{:.2}" font-family="sans-serif" font-size="10" fill="#555555">{v:.1}</text>"##,
            py(v) + 3.0
        );
    }
    let _ = writeln!(
        out,
        r##"<text x="{:.0}" y="{:.0}" font-family="sans-serif" font-size="10" fill="#555555">t = {t_end:.1} s</text>"##,
        WIDTH - MARGIN - 60.0,
        top + h + 14.0
    );
    // undefined samples break the line into segments
    let mut seg = String::new();
    let mut flush = |seg: &mut String| {
        if !seg.is_empty() {
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                seg.trim_end()
            );
            seg.clear();
        }
    };
    for (x, y) in t.iter().zip(ys) {
        match y {
            Some(y) => {
                let _ = write!(seg, "{:.2},{:.2} ", px(*x), py(y.clamp(lo, hi)));
            }
            None => flush(&mut seg),
        }
    }
    flush(&mut seg);
}

/// Centroid path of each run, overlaid.
pub fn centroid_overlay_svg(runs: &[(u64, &[Frame])], obstacles: Option<&ObstacleSet>) -> Result<String, PlotError> {
    let paths: Vec<(u64, Vec<Vec3>)> = runs
        .iter()
        .map(|(id, frames)| {
            (*id, frames.iter().filter(|f| !f.positions.is_empty()).map(|f| centroid(&f.positions)).collect::<Vec<_>>())
        })
        .filter(|(_, p)| !p.is_empty())
        .collect();
    let view = View::fit(paths.iter().flat_map(|(_, p)| p.iter().copied()), 3.0).ok_or(PlotError::Empty)?;
    let mut out = String::new();
    view.header(&mut out, "flock centroid per run");
    if let Some(o) = obstacles {
        view.obstacles(&mut out, o);
    }
    for (i, (id, path)) in paths.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(out, "<!-- run {id} -->");
        view.polyline(&mut out, path, color, 1.2);
        view.marker(&mut out, path[path.len() - 1], color, 2.5);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames() -> Vec<Frame> {
        (0..20)
            .map(|k| {
                let t = k as f64 * 0.1;
                Frame {
                    t,
                    positions: vec![Vec3::new(t, 0.0, 5.0), Vec3::new(t, 2.0, 5.0)],
                    velocities: vec![Vec3::X; 2],
                    perception: vec![],
                }
            })
            .collect()
    }

    fn world() -> ObstacleSet {
        let b = Aabb::new(Vec3::new(-10.0, -10.0, 0.0), Vec3::new(10.0, 10.0, 10.0));
        ObstacleSet::new(
            vec![
                Primitive::Box(Aabb::new(Vec3::new(1.0, 0.5, 0.0), Vec3::new(1.5, 1.5, 10.0))),
                Primitive::cylinder(0.0, -1.0, 0.3, 0.0, 10.0),
            ],
            b,
        )
    }

    #[test]
    fn empty_input_is_an_error() {
        assert_eq!(trajectory_svg(&[], None, None), Err(PlotError::Empty));
        assert_eq!(metrics_svg(&[]), Err(PlotError::Empty));
        assert_eq!(centroid_overlay_svg(&[], None), Err(PlotError::Empty));
        assert_eq!(PlotError::Empty.to_string(), "nothing to plot");
    }

    #[test]
    fn trajectory_plot_contents() {
        let svg = trajectory_svg(&frames(), Some(&world()), Some(Vec3::new(3.0, 1.0, 5.0))).unwrap();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<rect x=").count(), 2); // clip area + box
        assert!(svg.contains("<circle") && svg.contains("fill-opacity"));
        assert_eq!(svg, trajectory_svg(&frames(), Some(&world()), Some(Vec3::new(3.0, 1.0, 5.0))).unwrap());
    }

    #[test]
    fn metrics_plot_splits_on_undefined_c() {
        let mut f = frames();
        f[10].velocities = vec![Vec3::X, -Vec3::X];
        let svg = metrics_svg(&f).unwrap();
        // one D line, C broken in two
        assert_eq!(svg.matches("<polyline").count(), 3);
    }

    #[test]
    fn overlay_has_a_path_per_run() {
        let f = frames();
        let svg = centroid_overlay_svg(&[(0, &f[..]), (1, &f[..10])], Some(&world())).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("<!-- run 1 -->"));
    }
}
