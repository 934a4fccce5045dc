use flocknav::geometry::{nearest_point_on_segment, Aabb, Primitive, Segment, Vec3};
use flocknav::mapping::{Cell, OccupancyGrid};
use flocknav::metrics::{cosine_similarity, dispersion, summarize, MetricSeries};
use flocknav::navigation::{
    command, goal_term, neighbor_term, project_along, select_neighbors, Controller, NavGains, NavInput, Neighbor,
};
use flocknav::perception::PerceptionOutput;
use flocknav::sim::Outcome;
use flocknav::world::ObstacleSet;
use proptest::prelude::*;

fn coord() -> impl Strategy<Value = f64> {
    -50.0..50.0f64
}

fn vec3() -> impl Strategy<Value = Vec3> {
    (coord(), coord(), coord()).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn opt_vec3() -> impl Strategy<Value = Option<Vec3>> {
    prop::option::of(vec3())
}

fn perception() -> impl Strategy<Value = PerceptionOutput> {
    (vec3(), opt_vec3(), opt_vec3(), opt_vec3(), any::<bool>())
        .prop_map(|(w1, w2, w3, w4, goal_visible)| PerceptionOutput { w1, w2, w3, w4, goal_visible })
}

fn controller() -> impl Strategy<Value = Controller> {
    prop::sample::select(Controller::ALL.to_vec())
}

proptest! {
    #[test]
    fn command_never_exceeds_speed_cap(
        c in controller(),
        pos in vec3(),
        goal in vec3(),
        pc in perception(),
        others in prop::collection::vec(vec3(), 0..6),
        siphon in opt_vec3(),
        phi_max in 0.1..5.0f64,
    ) {
        let g = NavGains { phi_max, ..NavGains::default() };
        let all: Vec<Neighbor> =
            others.iter().enumerate().map(|(i, &p)| Neighbor { id: i + 1, position: p, velocity: Vec3::ZERO }).collect();
        let nbrs = select_neighbors(0, pos, &all, g.k_nbr);
        let input = NavInput { position: pos, goal, perception: &pc, neighbors: &nbrs, siphon_target: siphon };
        let v = command(c, &input, &g);
        prop_assert!(v.is_finite());
        prop_assert!(v.norm() <= phi_max * (1.0 + 1e-12));
    }

    #[test]
    fn neighbor_term_is_antisymmetric(a in vec3(), b in vec3()) {
        prop_assume!(a.distance(b) > 1e-9);
        let g = NavGains::default();
        let s = neighbor_term(a, b, &g) + neighbor_term(b, a, &g);
        prop_assert!(s.norm() < 1e-9);
    }

    #[test]
    fn neighbor_term_vanishes_in_dead_band(dir in vec3(), off in -0.999..0.999f64) {
        prop_assume!(dir.norm() > 1e-6);
        let g = NavGains::default();
        let j = Vec3::ZERO;
        let p = dir.normalize_or_zero() * (g.tau + off * g.beta);
        prop_assert_eq!(neighbor_term(p, j, &g), Vec3::ZERO);
    }

    #[test]
    fn goal_term_is_bounded_and_aimed(p in vec3(), t in vec3()) {
        prop_assume!(p.distance(t) > 1e-9);
        let g = NavGains::default();
        let v = goal_term(p, t, &g);
        prop_assert!(v.norm() <= g.phi_g * (1.0 + 1e-12));
        prop_assert!(v.dot(t - p) > 0.0);
    }

    #[test]
    fn projection_removes_the_axis_component(v in vec3(), axis in vec3()) {
        prop_assume!(axis.norm() > 1e-6);
        let g = NavGains::default();
        let out = project_along(v, axis, 0.5 * g.sigma_s, &g);
        prop_assert!(out.dot(axis.normalize_or_zero()).abs() < 1e-9 * (1.0 + v.norm()));
        prop_assert!(out.norm() <= v.norm() + 1e-9);
        prop_assert_eq!(project_along(v, axis, 2.0 * g.sigma_s, &g), v);
    }

    #[test]
    fn segment_nearest_point_beats_samples(a in vec3(), b in vec3(), p in vec3()) {
        let s = Segment::new(a, b);
        let q = nearest_point_on_segment(&s, p);
        let d = q.distance(p);
        for k in 0..=20 {
            prop_assert!(d <= s.point_at(k as f64 / 20.0).distance(p) + 1e-9);
        }
    }

    #[test]
    fn dispersion_ignores_translation(pts in prop::collection::vec(vec3(), 1..10), shift in vec3()) {
        let moved: Vec<Vec3> = pts.iter().map(|&p| p + shift).collect();
        prop_assert!((dispersion(&pts) - dispersion(&moved)).abs() < 1e-9);
    }

    #[test]
    fn cosine_similarity_ignores_scale(vs in prop::collection::vec(vec3(), 1..10), k in 0.1..10.0f64) {
        let scaled: Vec<Vec3> = vs.iter().map(|&v| v * k).collect();
        match (cosine_similarity(&vs), cosine_similarity(&scaled)) {
            (Some(a), Some(b)) => {
                prop_assert!((a - b).abs() < 1e-9);
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&a));
            }
            (None, None) => {}
            // the vanishing-mean threshold is absolute, so scaling can cross it
            _ => prop_assert!(vs.iter().map(|v| v.norm()).sum::<f64>() < 1e-3 / k.min(1.0)),
        }
    }

    #[test]
    fn summary_ignores_batch_order(
        runs in prop::collection::vec((0.0..10.0f64, 0.0..3.0f64, any::<bool>()), 1..8),
        rot in 0usize..8,
    ) {
        let batch: Vec<MetricSeries> = runs
            .iter()
            .enumerate()
            .map(|(i, &(d, av, ok))| MetricSeries {
                run_id: i as u64,
                t: vec![0.0, 1.0],
                d: vec![d, d + 1.0],
                c: vec![None, Some(0.5)],
                av,
                av_to_timeout: false,
                min_interagent: d,
                min_obstacle: f64::INFINITY,
                outcome: if ok { Outcome::Success } else { Outcome::Timeout },
            })
            .collect();
        let mut shuffled = batch.clone();
        shuffled.rotate_left(rot % batch.len());
        shuffled.reverse();
        let a = summarize("x", &batch);
        let b = summarize("x", &shuffled);
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn inflation_marks_exactly_the_delta_ball(
        seeds in prop::collection::vec((0usize..8, 0usize..8, 0usize..8), 1..5),
        delta in 0.0..0.8f64,
    ) {
        let mut grid = OccupancyGrid::new(Vec3::ZERO, 0.25, [8, 8, 8]);
        for &(i, j, k) in &seeds {
            grid.set([i, j, k], Cell::Occupied);
        }
        let centers: Vec<Vec3> = grid.occupied().map(|v| grid.center_of(v)).collect();
        let out = grid.inflate(delta).unwrap();
        for l in 0..out.len() {
            let idx = out.unlinear(l);
            let c = out.center_of(idx);
            let near = centers.iter().any(|q| q.distance(c) <= delta + 1e-9);
            let far = centers.iter().all(|q| q.distance(c) > delta - 1e-9);
            if near && !far {
                prop_assert!(out.is_occupied(idx));
            }
            if far && !near {
                prop_assert_eq!(out.get(idx), grid.get(idx));
            }
        }
    }

    #[test]
    fn obstacle_text_round_trips(
        boxes in prop::collection::vec((vec3(), 0.1..5.0f64), 0..4),
        spheres in prop::collection::vec((vec3(), 0.1..3.0f64), 0..4),
    ) {
        let mut prims: Vec<Primitive> =
            boxes.iter().map(|&(c, h)| Primitive::Box(Aabb::from_center(c, Vec3::new(h, h, h)))).collect();
        prims.extend(spheres.iter().map(|&(c, r)| Primitive::sphere(c, r)));
        prims.push(Primitive::cylinder(1.5, -2.25, 0.3, 0.0, 10.0));
        let set = ObstacleSet::new(prims, Aabb::new(Vec3::new(-60.0, -60.0, -60.0), Vec3::new(60.0, 60.0, 60.0)));
        let back = ObstacleSet::from_text(&set.to_text()).unwrap();
        prop_assert_eq!(back, set);
    }
}
