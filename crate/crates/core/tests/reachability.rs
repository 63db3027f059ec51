use std::f64::consts::PI;

use nonlin::*;

fn heading() -> ControlSystem {
    parse("system heading\nstates x1 x2\ninputs v\ndx1 = sin(v)\ndx2 = cos(v)\n").unwrap()
}

fn cascade() -> ControlSystem {
    parse("system ex3\nstates x1 x2 x3\ninputs u\ndx1 = u\ndx2 = x3^3\ndx3 = u^3\n").unwrap()
}

fn plane(horizon: f64, samples: usize, resolution: usize) -> ReachConfig {
    ReachConfig {
        horizon,
        segments: 4,
        input_box: vec![[-10.0, 10.0]],
        samples,
        window: vec![[-2.0, 2.0], [-2.0, 2.0]],
        resolution,
        seed: 17,
        step: 0.01,
    }
}

fn norm(c: &[f64]) -> f64 {
    c.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[test]
fn heading_covers_the_disk_and_nothing_beyond() {
    // unit speed with free heading reaches exactly the closed radius-T ball
    let r = sample_reach(&heading(), &[0.0, 0.0], &plane(1.5, 6000, 20)).unwrap();
    assert!(r.coverage_where(|c| norm(c) < 1.3) > 0.95);
    let half = 4.0 / 20.0 * 2f64.sqrt() / 2.0;
    assert_eq!(r.coverage_where(|c| norm(c) > 1.5 + half), 0.0);
}

#[test]
fn window_away_from_reach_has_zero_coverage() {
    let mut c = plane(1.0, 500, 10);
    c.window = vec![[5.0, 6.0], [5.0, 6.0]];
    let r = sample_reach(&heading(), &[0.0, 0.0], &c).unwrap();
    assert_eq!(r.coverage, 0.0);
    assert_eq!(r.retained, 500);
}

#[test]
fn coverage_grows_with_samples_horizon_and_box() {
    let base = sample_reach(&heading(), &[0.0, 0.0], &plane(1.0, 400, 20)).unwrap();
    let more = sample_reach(&heading(), &[0.0, 0.0], &plane(1.0, 1600, 20)).unwrap();
    assert!(base.bitmap().iter().zip(more.bitmap()).all(|(a, b)| a & !b == 0));
    let longer = sample_reach(&heading(), &[0.0, 0.0], &plane(1.8, 1600, 20)).unwrap();
    assert!(longer.coverage >= more.coverage);
    let mut narrow = plane(1.0, 1600, 20);
    narrow.input_box = vec![[-0.5, 0.5]];
    let narrow = sample_reach(&heading(), &[0.0, 0.0], &narrow).unwrap();
    assert!(more.coverage >= narrow.coverage);
}

#[test]
fn same_seed_same_bytes() {
    let c = plane(1.0, 800, 16);
    let a = sample_reach(&heading(), &[0.0, 0.0], &c).unwrap();
    let b = sample_reach(&heading(), &[0.0, 0.0], &c).unwrap();
    assert_eq!(a.to_csv(heading().state_names()), b.to_csv(heading().state_names()));
    let other = sample_reach(&heading(), &[0.0, 0.0], &ReachConfig { seed: 18, ..c }).unwrap();
    assert_ne!(a.bitmap(), other.bitmap());
}

#[test]
fn reversed_reach_is_dual() {
    let sys = heading();
    let rev = time_reversal(&sys);
    let t = 1.2;
    let cfg = plane(t, 300, 8);
    // start at a cell center so point-to-cell distances are symmetric
    let x0 = [0.25, 0.25];
    let fwd = sample_reach(&sys, &x0, &cfg).unwrap();
    let start_cell = fwd.cell_of(&x0).unwrap();
    let mut checked = 0;
    for cell in 0..fwd.total_cells {
        let z = fwd.cell_center(cell);
        // cells straddling the reach boundary are left out
        if (norm(&[z[0] - x0[0], z[1] - x0[1]]) - t).abs() < 0.45 {
            continue;
        }
        let back = sample_reach(&rev, &z, &cfg).unwrap();
        assert_eq!(fwd.is_marked(cell), back.is_marked(start_cell), "cell {cell} at {z:?}");
        checked += 1;
    }
    assert!(checked > 30);
}

#[test]
fn compare_heading_is_consistent() {
    // the whole window lies inside the radius-3 disk
    let cfg = ReachConfig {
        segments: 6,
        ..plane(3.0, 6000, 20)
    };
    let mut ext = cfg.clone();
    ext.window.push([-30.0, 30.0]);
    let r = coverage_compare(&heading(), &[0.0, 0.0], &cfg, &ext).unwrap();
    assert_eq!(r.verdict, "consistent", "{r:?}");
    assert!(r.coverage_original > 0.9 && r.coverage_extended_projected > 0.9);
    assert!((0.0..=1.0).contains(&r.agreement));
    let json = serde_json::to_value(&r).unwrap();
    assert_eq!(json["threshold"], 0.05);
}

#[test]
fn compare_rejects_bad_inputs() {
    let free = parse("system f\nstates x\ndx = x\n").unwrap();
    let cfg = ReachConfig {
        input_box: vec![],
        window: vec![[-1.0, 1.0]],
        ..plane(1.0, 10, 4)
    };
    assert!(matches!(
        coverage_compare(&free, &[0.0], &cfg, &cfg),
        Err(ReachError::Extend(_))
    ));
    let cfg = plane(1.0, 10, 4);
    let mut ext = cfg.clone();
    ext.window = vec![[-1.0, 1.0], [-2.0, 2.0], [-1.0, 1.0]];
    assert!(matches!(
        coverage_compare(&heading(), &[0.0, 0.0], &cfg, &ext),
        Err(ReachError::Config(_))
    ));
}

#[test]
fn periodic_bound_is_not_restrictive() {
    let cfg = plane(1.5, 3000, 20);
    let r = bounded_reach_check(&heading(), &[0.0, 0.0], &[[-PI, PI]], &cfg).unwrap();
    assert!(r.difference() < 0.02, "{} vs {}", r.bounded.coverage, r.reference.coverage);
    assert!(r.extended_confined.coverage > 0.0);
}

#[test]
fn pinned_input_gives_the_zero_control_orbit() {
    // v ≡ 0: straight up the x2 axis
    let cfg = plane(1.5, 200, 20);
    let r = bounded_reach_check(&heading(), &[0.0, 0.0], &[[0.0, 0.0]], &cfg).unwrap();
    let cells: Vec<Vec<f64>> = r.bounded.marked_cells().map(|c| r.bounded.cell_center(c)).collect();
    assert_eq!(cells.len(), 8);
    assert!(cells.iter().all(|c| (c[0] - 0.1).abs() < 1e-12 && c[1] > 0.0 && c[1] < 1.6));
    assert_eq!(r.extended_confined, r.bounded);
}

#[test]
fn cascade_bound_on_a_small_window() {
    // Inside [-1,1]^3 a tight input box keeps more trajectories in view than
    // a wide one, so the bounded run covers at least as much.
    let cfg = ReachConfig {
        horizon: 4.0,
        segments: 6,
        input_box: vec![[-10.0, 10.0]],
        samples: 3000,
        window: vec![[-1.0, 1.0]; 3],
        resolution: 8,
        seed: 3,
        step: 0.01,
    };
    let r = bounded_reach_check(&cascade(), &[0.0; 3], &[[-2.0, 2.0]], &cfg).unwrap();
    assert!(r.bounded.coverage >= r.reference.coverage);
    assert!(r.reference.coverage > 0.3);
}

#[test]
fn steer_cascade_to_the_unit_corner() {
    let sc = SteerConfig {
        horizon: 4.0,
        segments: 6,
        input_box: vec![[-2.0, 2.0]],
        candidates: 2000,
        sweeps: 400,
        seed: 3,
        step: 0.01,
    };
    let s = two_point_steer(&cascade(), &[0.0; 3], &[1.0; 3], &sc, 1e-2).unwrap();
    let end = integrate(&cascade(), &[0.0; 3], &s.control, 0.01).unwrap();
    let miss = end.final_state().iter().map(|v| (v - 1.0).powi(2)).sum::<f64>().sqrt();
    assert!(miss <= 1e-2);
    assert!(s.control.total_duration() <= 6.0);
}

#[test]
fn compare_cascade_on_the_unit_cube() {
    // y confined to the original input box, v twenty times wider
    let cfg = ReachConfig {
        horizon: 4.0,
        segments: 6,
        input_box: vec![[-3.0, 3.0]],
        samples: 20000,
        window: vec![[-1.0, 1.0]; 3],
        resolution: 10,
        seed: 2,
        step: 0.01,
    };
    let mut ext = cfg.clone();
    ext.window.push([-3.0, 3.0]);
    ext.input_box = vec![[-60.0, 60.0]];
    let r = coverage_compare(&cascade(), &[0.0; 3], &cfg, &ext).unwrap();
    assert!(r.consistent(), "{r:?}");
    assert!(r.coverage_original > 0.95);
}
