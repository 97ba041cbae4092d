//! Generator geometry against independent image-space oracles.

use fmnet::auxnet::{flow_channels, segmentation_channels};
use fmnet::data::scene::Pose;
use fmnet::data::{ScenarioParams, Trajectory};

/// Ground point under a normalized image position, in world coordinates.
fn ground_point(p: &ScenarioParams, pose: &Pose, x: f64, y: f64) -> Option<(f64, f64)> {
    if y <= p.horizon + 1e-9 {
        return None;
    }
    let z = p.focal * p.camera_height / (y - p.horizon);
    let lx = (x - 0.5) * z / p.focal;
    let (s, c) = pose.theta.sin_cos();
    Some((pose.x + lx * c + z * s, pose.z - lx * s + z * c))
}

/// Image position in frame `b` whose ground point is nearest `target`,
/// found by exhaustive grid search and then local refinement.
fn search(p: &ScenarioParams, b: &Pose, target: (f64, f64)) -> (f64, f64) {
    let dist = |x: f64, y: f64| match ground_point(p, b, x, y) {
        Some((gx, gz)) => (gx - target.0).powi(2) + (gz - target.1).powi(2),
        None => f64::INFINITY,
    };
    let mut best = (0.0, 0.0, f64::INFINITY);
    let step = 1.0 / 128.0;
    let mut y = p.horizon + step;
    while y < 2.0 {
        let mut x = -0.5;
        while x < 1.5 {
            let d = dist(x, y);
            if d < best.2 {
                best = (x, y, d);
            }
            x += step;
        }
        y += step;
    }
    let mut span = step;
    for _ in 0..12 {
        let (cx, cy, _) = best;
        for i in -4..=4 {
            for j in -4..=4 {
                let (x, y) = (cx + span * j as f64 / 4.0, cy + span * i as f64 / 4.0);
                let d = dist(x, y);
                if d < best.2 {
                    best = (x, y, d);
                }
            }
        }
        span /= 2.0;
    }
    (best.0, best.1)
}

#[test]
fn flow_matches_brute_force_displacement_on_16x16() {
    let params = ScenarioParams {
        kappa_max: 0.008,
        straight_prob: 0.0,
        noise: 0.0,
        ..ScenarioParams::default()
    };
    let traj = Trajectory::new(21, &params, 60).unwrap();
    let n = 16;
    let mut sq = 0.0;
    let mut count = 0;
    for (a, b) in [(10, 12), (30, 32), (50, 52)] {
        let (pa, pb) = (traj.pose(a), traj.pose(b));
        let flow = flow_channels(&traj.view(a), &pb, [n, n, 2]).unwrap();
        for i in 0..n {
            for j in 0..n {
                let (x, y) = ((j as f64 + 0.5) / n as f64, (i as f64 + 0.5) / n as f64);
                let Some(world) = ground_point(&params, &pa, x, y) else {
                    continue;
                };
                let (bx, by) = search(&params, &pb, world);
                let du = (bx - x) * n as f64;
                let dv = (by - y) * n as f64;
                let k = (i * n + j) * 2;
                let (fu, fv) = (flow.data()[k] as f64, flow.data()[k + 1] as f64);
                sq += (fu - du).powi(2) + (fv - dv).powi(2);
                count += 1;
            }
        }
    }
    assert!(count > 100);
    let rms = (sq / count as f64).sqrt();
    assert!(rms <= 0.5, "flow RMS disagreement {rms} px");
}

#[test]
fn straight_road_segmentation_covers_the_road_region_exactly() {
    let params = ScenarioParams {
        kappa_max: 0.0,
        noise: 0.0,
        ..ScenarioParams::default()
    };
    let traj = Trajectory::new(4, &params, 20).unwrap();
    let (h, w) = (40, 48);
    let seg = segmentation_channels(&traj.view(7), [h, w, 3]).unwrap();
    let half = params.lane_width;
    let mut road_cells = 0;
    for i in 0..h {
        for j in 0..w {
            let (x, y) = ((j as f64 + 0.5) / w as f64, (i as f64 + 0.5) / h as f64);
            let expect_road = y > params.horizon && {
                let z = params.focal * params.camera_height / (y - params.horizon);
                let lx = (x - 0.5) * z / params.focal;
                z <= params.view_distance && lx.abs() < half
            };
            let k = (i * w + j) * 3;
            let on_road = seg.data()[k] + seg.data()[k + 1];
            assert_eq!(on_road == 1.0, expect_road, "cell ({i}, {j})");
            assert_eq!(seg.data()[k + 2] == 1.0, !expect_road, "cell ({i}, {j})");
            road_cells += expect_road as usize;
        }
    }
    assert!(road_cells > 50);
}

#[test]
fn mirroring_negates_angles_and_horizontal_flow() {
    let base = ScenarioParams {
        noise: 0.0,
        straight_prob: 0.0,
        ..ScenarioParams::default()
    };
    let mirrored = ScenarioParams {
        mirror: true,
        ..base.clone()
    };
    let a = Trajectory::new(8, &base, 80).unwrap();
    let b = Trajectory::new(8, &mirrored, 80).unwrap();
    let mut nonzero = 0;
    for t in 0..80 {
        let (sa, sb) = (a.state(t), b.state(t));
        assert_eq!(sa.angle, -sb.angle);
        assert_eq!(sa.torque, -sb.torque);
        assert_eq!(sa.speed, sb.speed);
        nonzero += (sa.angle != 0.0) as usize;
    }
    assert!(nonzero > 0);
    let n = 12;
    let fa = flow_channels(&a.view(40), &a.pose(42), [n, n, 2]).unwrap();
    let fb = flow_channels(&b.view(40), &b.pose(42), [n, n, 2]).unwrap();
    for i in 0..n {
        for j in 0..n {
            let ka = (i * n + j) * 2;
            let kb = (i * n + (n - 1 - j)) * 2;
            assert!((fa.data()[ka] + fb.data()[kb]).abs() < 1e-5, "u at ({i}, {j})");
            assert!((fa.data()[ka + 1] - fb.data()[kb + 1]).abs() < 1e-5, "v at ({i}, {j})");
        }
    }
}

#[test]
fn steering_distribution_is_centred() {
    let params = ScenarioParams::default();
    let angles: Vec<f64> = (0..400u64)
        .map(|s| Trajectory::new(1000 + s, &params, 120).unwrap().state(60).angle)
        .collect();
    let n = angles.len() as f64;
    let mean = angles.iter().sum::<f64>() / n;
    let sd = (angles.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(sd > 0.0);
    assert!(mean.abs() < 3.0 * sd / n.sqrt(), "mean {mean}, sd {sd}");
}
