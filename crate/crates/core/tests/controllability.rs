use sublab::controllability::bracket_motion_prediction;
use sublab::{
    bracket_motion, bracket_span, commutator_flow, endpoint, lie_bracket, steer, steering_cost_certificate,
    Model, SteerOptions, VectorField, Word,
};

#[test]
fn heisenberg_commutator_moves_by_t_squared() {
    let model = Model::heisenberg3();
    for t in [0.1, 0.5, 1.3] {
        let q = commutator_flow(&model, &[1, 2, -1, -2], t, &[0.2, -0.4, 1.0], 8).unwrap();
        assert!((q[0] - 0.2).abs() < 1e-13 && (q[1] + 0.4).abs() < 1e-13);
        assert!((q[2] - 1.0 - t * t).abs() < 1e-12, "{q:?}");
    }
}

#[test]
fn growth_vectors_of_catalog_models() {
    let cases: [(Model, usize, Vec<usize>); 4] = [
        (Model::heisenberg3(), 2, vec![2, 1]),
        (Model::engel(), 3, vec![2, 1, 1]),
        (Model::heisenberg_product(3), 2, vec![6, 3]),
        (Model::infinite_heisenberg_trunc(8), 2, vec![16, 1]),
    ];
    for (model, depth, ranks) in cases {
        let q: Vec<f64> = (0..model.dim()).map(|i| 0.1 * i as f64 - 0.3).collect();
        let span = bracket_span(&model, &q, depth).unwrap();
        assert!(span.growth.satisfied, "{}", model.name());
        assert_eq!(span.growth.ranks, ranks, "{}", model.name());
        let words: usize = span.words.iter().map(Vec::len).sum();
        assert_eq!(words, model.dim());
    }
}

#[test]
fn closure_fields_agree_with_frame_brackets() {
    let model = Model::engel();
    let x = VectorField::from_fn(4, |_| vec![1.0, 0.0, 0.0, 0.0]);
    let y = VectorField::from_fn(4, |q| vec![0.0, 1.0, q[0], q[0] * q[0] / 2.0]);
    let q = [0.3, -0.2, 0.5, 0.1];
    let b = lie_bracket(&x, &y, &q).unwrap();
    let want = model.frame()[0].bracket(&model.frame()[1]).eval(&q);
    for i in 0..4 {
        assert!((b[i] - want[i]).abs() < 1e-8, "{b:?} vs {want:?}");
    }
}

#[test]
fn bracket_motion_tracks_first_order_prediction() {
    let model = Model::engel();
    let q = [0.1, 0.2, -0.1, 0.05];
    for (word, u) in [(vec![], [1e-3, -2e-3]), (vec![1], [1e-4, 3e-4]), (vec![2, 1], [2e-5, -1e-5])] {
        let moved = bracket_motion(&model, &word, &u, &q).unwrap();
        let predicted = bracket_motion_prediction(&model, &word, &u, &q).unwrap();
        let size: f64 = predicted.iter().map(|v| v * v).sum::<f64>().sqrt();
        let err: f64 = moved
            .iter()
            .zip(&q)
            .zip(&predicted)
            .map(|((a, b), c)| (a - b - c).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(size > 0.0 && err <= 0.05 * size, "word {word:?}: error {err:e} against {size:e}");
    }
}

#[test]
fn steering_reaches_engel_target_with_bounded_cost() {
    let model = Model::engel();
    let span = bracket_span(&model, &[0.0; 4], 3).unwrap();
    let mut words: Vec<Word> = vec![vec![]];
    for layer in &span.words[..span.words.len() - 1] {
        words.extend(layer.iter().cloned());
    }
    let target = [0.02, -0.01, 0.003, 0.0005];
    let plan = steer(&model, &[0.0; 4], &target, &words, &SteerOptions::default()).unwrap();
    assert!(plan.endpoint_error <= 1e-8);
    let reached = endpoint(&model, &[0.0; 4], &plan.control).unwrap();
    let miss: f64 = reached.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(miss <= 1e-6, "integrated plan misses by {miss:e}");
    let cert = steering_cost_certificate(&model, &plan).unwrap();
    assert!(cert.ratio.is_finite() && cert.ratio <= 1000.0, "{cert:?}");
}

#[test]
fn steering_cost_ratio_is_scale_free_on_heisenberg() {
    let model = Model::heisenberg3();
    let words: Vec<Word> = vec![vec![], vec![1]];
    let ratios: Vec<f64> = [1e-2, 1e-4, 1e-6]
        .iter()
        .map(|&z| {
            let plan = steer(&model, &[0.0; 3], &[0.0, 0.0, z], &words, &SteerOptions::default()).unwrap();
            steering_cost_certificate(&model, &plan).unwrap().ratio
        })
        .collect();
    for r in &ratios {
        assert!((r / ratios[0] - 1.0).abs() < 1e-6, "{ratios:?}");
    }
}
