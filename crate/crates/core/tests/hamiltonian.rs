use approx::assert_relative_eq;
use sublab::{exp_map, geodesic_shoot, shoot_bvp, verify_local_minimality, BvpOptions, Model};

/// Heisenberg geodesic from the origin with initial covector (a, b, c):
/// the control rotates at angular speed c and z is the swept segment area.
fn heisenberg_oracle(a: f64, b: f64, c: f64, t: f64) -> [f64; 3] {
    let r2 = a * a + b * b;
    if c.abs() < 1e-12 {
        return [a * t, b * t, 0.0];
    }
    let (s, co) = (c * t).sin_cos();
    // (a + ib)(e^{ict} - 1) / (ic)
    let x = (a * s - b * (1.0 - co)) / c;
    let y = (b * s + a * (1.0 - co)) / c;
    [x, y, r2 * (c * t - s) / (2.0 * c * c)]
}

#[test]
fn exponential_map_matches_closed_form() {
    let model = Model::heisenberg3();
    for p in [[1.0, 0.0, 0.0], [0.3, -0.8, 1.7], [1.0, 0.0, 2.0 * std::f64::consts::PI], [-0.5, 0.4, -4.0]] {
        let q = exp_map(&model, &[0.0; 3], &p).unwrap();
        let want = heisenberg_oracle(p[0], p[1], p[2], 1.0);
        for i in 0..3 {
            assert!((q[i] - want[i]).abs() < 1e-9, "{p:?}: {q:?} vs {want:?}");
        }
    }
}

#[test]
fn shot_trajectory_follows_oracle_and_conserves_energy() {
    let model = Model::heisenberg3();
    let traj = geodesic_shoot(&model, &[0.0; 3], &[0.6, 0.2, 3.0], 2.0, 400).unwrap();
    for k in [0, 100, 250, 400] {
        let t = traj.duration() * k as f64 / traj.steps() as f64;
        let want = heisenberg_oracle(0.6, 0.2, 3.0, t);
        for i in 0..3 {
            assert!((traj.q(k)[i] - want[i]).abs() < 1e-8);
        }
    }
    assert!(traj.hamiltonian_drift(&model).unwrap() < 1e-10);
    let engel = geodesic_shoot(&Model::engel(), &[0.1, 0.0, 0.2, 0.0], &[0.4, 0.9, -1.0, 2.0], 1.0, 1000).unwrap();
    assert!(engel.hamiltonian_drift(&Model::engel()).unwrap() < 1e-8);
}

#[test]
fn boundary_value_problem_recovers_covector() {
    let model = Model::engel();
    let q0 = [0.0; 4];
    let p_true = [0.7, 0.3, -0.8, 1.2];
    let q1 = exp_map(&model, &q0, &p_true).unwrap();
    let sol = shoot_bvp(&model, &q0, &q1, &[0.5, 0.5, 0.0, 0.0], &BvpOptions::default()).unwrap();
    assert!(sol.residual <= 1e-9);
    let reached = sol.trajectory.endpoint();
    for i in 0..4 {
        assert!((reached[i] - q1[i]).abs() < 1e-9);
    }
}

#[test]
fn short_geodesics_pass_the_perturbation_test() {
    let model = Model::heisenberg3();
    let traj = geodesic_shoot(&model, &[0.0; 3], &[0.8, 0.1, 2.0], 1.0, 200).unwrap();
    let report = verify_local_minimality(&model, &[0.0; 3], &traj, 16, 0.05, 3).unwrap();
    assert!(report.passed, "{report:?}");
    assert_relative_eq!(report.base_action, 0.5 * (0.8f64 * 0.8 + 0.1 * 0.1), max_relative = 1e-6);
    assert!(report.max_endpoint_error < 1e-6);
}
