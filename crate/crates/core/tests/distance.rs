use sublab::distance::BestOptions;
use sublab::{
    classify_extremal, distance_best, distance_direct, distance_shooting, endpoint, geodesic_shoot, ControlPath,
    DirectOptions, ExtremalClass, Method, Model,
};

#[test]
fn horizontal_unit_step_has_unit_distance() {
    let model = Model::heisenberg3();
    let r = distance_direct(&model, &[0.0; 3], &[1.0, 0.0, 0.0], &DirectOptions::default()).unwrap();
    assert!((r.distance - 1.0).abs() < 1e-6, "{}", r.distance);
    assert_eq!(r.method, Method::Direct);
    assert!(r.endpoint_error <= 1e-6);
    let reached = endpoint(&model, &[0.0; 3], &r.control).unwrap();
    assert!((reached[0] - 1.0).abs() < 1e-6);
}

#[test]
fn vertical_distance_scales_with_square_root_of_height() {
    let model = Model::heisenberg3();
    let ratios: Vec<f64> = [0.04, 1e-4]
        .iter()
        .map(|&z| {
            let r = distance_best(&model, &[0.0; 3], &[0.0, 0.0, z], &BestOptions::default()).unwrap();
            r.distance * r.distance / z
        })
        .collect();
    assert!((ratios[1] / ratios[0] - 1.0).abs() < 1e-3, "{ratios:?}");
}

#[test]
fn engel_distance_is_homogeneous_in_w() {
    let model = Model::engel();
    let opts = BestOptions::default();
    let d1 = distance_best(&model, &[0.0; 4], &[0.0, 0.0, 0.0, 0.004], &opts).unwrap().distance;
    let d8 = distance_best(&model, &[0.0; 4], &[0.0, 0.0, 0.0, 0.032], &opts).unwrap().distance;
    assert!((d8 / d1 - 2.0).abs() < 0.01, "{d1} {d8}");
}

#[test]
fn shooting_agrees_with_direct() {
    let model = Model::heisenberg3();
    let q1 = [0.1, -0.05, 0.02];
    let opts = BestOptions::default();
    let direct = distance_direct(&model, &[0.0; 3], &q1, &opts.direct).unwrap();
    let shooting = distance_shooting(&model, &[0.0; 3], &q1, &opts).unwrap();
    assert_eq!(shooting.method, Method::Shooting);
    assert!((direct.distance - shooting.distance).abs() <= 1e-4 * direct.distance);
}

#[test]
fn distance_is_left_invariant() {
    // left translation by (a, b, c): (x, y, z) -> (a + x, b + y, c + z + (a y - b x) / 2)
    let model = Model::heisenberg3();
    let (a, b, c) = (0.3, -0.2, 0.5);
    let q = [0.05, 0.02, 0.01];
    let tq = [a + q[0], b + q[1], c + q[2] + (a * q[1] - b * q[0]) / 2.0];
    let opts = BestOptions::default();
    let d0 = distance_best(&model, &[0.0; 3], &q, &opts).unwrap().distance;
    let d1 = distance_best(&model, &[a, b, c], &tq, &opts).unwrap().distance;
    assert!((d0 - d1).abs() <= 1e-5 * d0, "{d0} {d1}");
}

#[test]
fn geodesics_classify_normal_and_constants_abnormal() {
    let model = Model::heisenberg3();
    let traj = geodesic_shoot(&model, &[0.0; 3], &[0.5, 0.5, 1.0], 1.0, 400).unwrap();
    let cert = classify_extremal(&model, &[0.0; 3], &traj.to_control_path(), 1e-6).unwrap();
    assert_eq!(cert.class, ExtremalClass::Normal, "{cert:?}");
    assert!(cert.normal_residual <= 1e-6);
    let zero = classify_extremal(&model, &[0.0; 3], &ControlPath::zeros(32, 2), 1e-6).unwrap();
    assert_eq!(zero.class, ExtremalClass::Abnormal);
    assert_eq!(zero.rank, 2);
}

#[test]
fn bad_requests_fail_fast() {
    let model = Model::engel();
    let opts = DirectOptions {
        steps: 1,
        ..DirectOptions::default()
    };
    assert!(distance_direct(&model, &[0.0; 4], &[1.0, 0.0, 0.0, 0.0], &opts).is_err());
    assert!(distance_best(&model, &[0.0; 3], &[0.0; 4], &BestOptions::default()).is_err());
    assert!(distance_best(&model, &[0.0; 4], &[f64::NAN, 0.0, 0.0, 0.0], &BestOptions::default()).is_err());
}
