mod common;

use rand::Rng;
use splitguard::detector::{train_ocsvm, upper_bound, KKT_TOLERANCE};
use splitguard::rng;

fn instance(seed: u64) -> (Vec<Vec<f64>>, f64, f64) {
    let mut r = rng::seeded(seed);
    let n = r.random_range(10..=20);
    let dim = r.random_range(2..=4);
    let pts = (0..n).map(|_| (0..dim).map(|_| r.random_range(-1.5..1.5)).collect()).collect();
    let nu = [0.1, 0.25, 0.5][r.random_range(0..3)];
    (pts, nu, r.random_range(0.2..2.0))
}

#[test]
fn reference_projection_is_feasible() {
    let p = common::qp::project(&[0.9, -0.2, 0.4, 0.1], 0.5);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(p.iter().all(|&a| (0.0..=0.5).contains(&a)));
}

#[test]
fn smo_matches_reference_on_twelve_points() {
    let mut r = rng::seeded(12);
    let pts: Vec<Vec<f64>> = (0..12).map(|_| vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect();
    let model = train_ocsvm(&pts, 0.25, 1.0).unwrap();
    let reference = common::qp::solve(&pts, 0.25, 1.0);
    for x in pts.iter().chain([vec![0.0, 0.0], vec![2.0, -2.0]].iter()) {
        assert!((model.decision(x) - reference.decision(x)).abs() < 1e-4);
    }
}

#[test]
fn smo_matches_reference_on_random_instances() {
    for seed in 0..20 {
        let (pts, nu, gamma) = instance(seed);
        let model = train_ocsvm(&pts, nu, gamma).unwrap();
        let c = upper_bound(nu, pts.len());
        assert!((model.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(model.alpha.iter().all(|&a| a >= 0.0 && a <= c + 1e-15));
        assert!(model.kkt_residual < KKT_TOLERANCE);
        let reference = common::qp::solve(&pts, nu, gamma);
        let mut r = rng::seeded(100 + seed);
        let probes: Vec<Vec<f64>> = (0..10).map(|_| (0..pts[0].len()).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
        for x in pts.iter().chain(&probes) {
            let (a, b) = (model.decision(x), reference.decision(x));
            assert!((a - b).abs() < 1e-4, "seed {seed}: {a} vs {b}");
        }
    }
}
