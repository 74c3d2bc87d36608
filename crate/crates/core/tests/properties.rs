use proptest::prelude::*;
use sublab::poly::{Poly, PolyField};
use sublab::{
    action, bracket_span, endpoint, endpoint_adjoint, endpoint_diff, exp_map, length, lie_bracket, ControlPath,
    Covector, Model, VectorField,
};

const STEPS: usize = 12;

fn model(k: usize) -> Model {
    match k {
        0 => Model::heisenberg3(),
        1 => Model::engel(),
        2 => Model::heisenberg_product(2),
        3 => Model::engel_product(2),
        _ => Model::infinite_heisenberg_trunc(3),
    }
}

fn control(model: &Model, coeffs: &[f64]) -> ControlPath {
    let h = model.control_dim();
    ControlPath::new(STEPS, h, coeffs[..STEPS * h].to_vec()).unwrap()
}

fn coeffs(len: usize, s: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-s..s, len)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = 1.0 + a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
}

/// Random vector field on R^3 with quadratic polynomial components.
fn random_field(c: &[f64]) -> PolyField {
    let comps = (0..3).map(|i| {
        let k = &c[6 * i..6 * i + 6];
        let p = Poly::from_terms(vec![])
            .add(&Poly::constant(k[0]))
            .add(&Poly::linear(k[1], 0))
            .add(&Poly::linear(k[2], 1))
            .add(&Poly::linear(k[3], 2))
            .add(&Poly::monomial(k[4], vec![(0, 1), (1, 1)]))
            .add(&Poly::monomial(k[5], vec![(2, 2)]));
        (i, p)
    });
    PolyField::new(3, comps)
}

fn poly_vector_field(f: PolyField) -> VectorField {
    VectorField::from_fn(3, move |q| f.eval(q))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adjoint_is_dual_to_differential(k in 0usize..5, q in coeffs(9, 0.5), u in coeffs(72, 1.0), du in coeffs(72, 1.0), p in coeffs(9, 1.0)) {
        let m = model(k);
        let n = m.dim();
        let (u, du) = (control(&m, &u), control(&m, &du));
        let d = endpoint_diff(&m, &q[..n], &u, &du).unwrap();
        let (_, dual) = endpoint_adjoint(&m, &q[..n], &u, &Covector::new(p[..n].to_vec())).unwrap();
        let lhs: f64 = p[..n].iter().zip(&d).map(|(a, b)| a * b).sum();
        let rhs = dual.dot(&du);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn differential_is_linear(k in 0usize..5, q in coeffs(9, 0.5), u in coeffs(72, 1.0), a in coeffs(72, 1.0), b in coeffs(72, 1.0), s in -2.0..2.0f64) {
        let m = model(k);
        let n = m.dim();
        let (u, a, b) = (control(&m, &u), control(&m, &a), control(&m, &b));
        let mut mix = a.scaled(s);
        mix.add_scaled(1.0, &b);
        let lhs = endpoint_diff(&m, &q[..n], &u, &mix).unwrap();
        let da = endpoint_diff(&m, &q[..n], &u, &a).unwrap();
        let db = endpoint_diff(&m, &q[..n], &u, &b).unwrap();
        let rhs: Vec<f64> = da.iter().zip(&db).map(|(x, y)| s * x + y).collect();
        prop_assert!(close(&lhs, &rhs, 1e-11));
    }

    #[test]
    fn anchor_derivative_matches_differences(k in 0usize..5, q in coeffs(9, 1.0), u in coeffs(6, 1.0), dq in coeffs(9, 1.0)) {
        let m = model(k);
        let (n, h) = (m.dim(), m.control_dim());
        let (q, u, dq) = (&q[..n], &u[..h], &dq[..n]);
        let eps = 1e-6;
        let shifted = |s: f64| {
            let p: Vec<f64> = q.iter().zip(dq).map(|(a, b)| a + s * b).collect();
            m.anchor_apply(&p, u).unwrap()
        };
        let (fp, fm) = (shifted(eps), shifted(-eps));
        let fd: Vec<f64> = fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
        prop_assert!(close(&m.anchor_deriv(q, u, dq).unwrap(), &fd, 1e-7));
    }

    #[test]
    fn brackets_are_antisymmetric_and_satisfy_jacobi(c in coeffs(54, 1.0), q in coeffs(3, 1.0)) {
        let (x, y, z) = (random_field(&c[..18]), random_field(&c[18..36]), random_field(&c[36..]));
        let jacobi = x.bracket(&y.bracket(&z)).eval(&q);
        let j2 = y.bracket(&z.bracket(&x)).eval(&q);
        let j3 = z.bracket(&x.bracket(&y)).eval(&q);
        let sum: Vec<f64> = (0..3).map(|i| jacobi[i] + j2[i] + j3[i]).collect();
        prop_assert!(close(&sum, &[0.0; 3], 1e-10), "{sum:?}");
        let xy = x.bracket(&y).eval(&q);
        let yx = y.bracket(&x).eval(&q);
        prop_assert!(close(&xy, &yx.iter().map(|v| -v).collect::<Vec<_>>(), 1e-12));
        let numeric = lie_bracket(&poly_vector_field(x), &poly_vector_field(y), &q).unwrap();
        prop_assert!(close(&numeric, &xy, 1e-6));
    }

    #[test]
    fn growth_vector_is_left_invariant(k in 0usize..5, q in coeffs(9, 2.0)) {
        let m = model(k);
        let n = m.dim();
        let here = bracket_span(&m, &q[..n], 4).unwrap().growth;
        let origin = bracket_span(&m, &vec![0.0; n], 4).unwrap().growth;
        prop_assert_eq!(here, origin);
    }

    #[test]
    fn squared_length_bounded_by_twice_action(k in 0usize..5, q in coeffs(9, 0.5), u in coeffs(72, 2.0)) {
        let m = model(k);
        let u = control(&m, &u);
        let q = &q[..m.dim()];
        let l = length(&m, q, &u).unwrap();
        let a = action(&m, q, &u).unwrap();
        prop_assert!(l * l <= 2.0 * a * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn reparametrisation_keeps_endpoint_and_length(k in 0usize..5, q in coeffs(9, 0.5), u in coeffs(72, 1.0)) {
        // u on [0, 1/2] at double speed followed by rest
        let m = model(k);
        let u = control(&m, &u);
        let q = &q[..m.dim()];
        let fast = ControlPath::concat(&[u.clone(), ControlPath::zeros(STEPS, m.control_dim())]).unwrap();
        prop_assert!(close(&endpoint(&m, q, &fast).unwrap(), &endpoint(&m, q, &u).unwrap(), 1e-12));
        let (l0, l1) = (length(&m, q, &u).unwrap(), length(&m, q, &fast).unwrap());
        prop_assert!((l0 - l1).abs() <= 1e-12 * (1.0 + l0));
        let (a0, a1) = (action(&m, q, &u).unwrap(), action(&m, q, &fast).unwrap());
        prop_assert!((a1 - 2.0 * a0).abs() <= 1e-12 * (1.0 + a0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn exponential_map_commutes_with_dilations(engel in any::<bool>(), p in coeffs(4, 1.5), half in any::<bool>()) {
        // weights (1, 1, 2) and (1, 1, 2, 3); covectors rescale by s^(2 - weight)
        let s: f64 = if half { 0.5 } else { 2.0 };
        let (m, weights): (Model, &[i32]) = if engel {
            (Model::engel(), &[1, 1, 2, 3])
        } else {
            (Model::heisenberg3(), &[1, 1, 2])
        };
        let n = m.dim();
        let origin = vec![0.0; n];
        let q = exp_map(&m, &origin, &p[..n]).unwrap();
        let ps: Vec<f64> = (0..n).map(|i| p[i] * s.powi(2 - weights[i])).collect();
        let qs = exp_map(&m, &origin, &ps).unwrap();
        let want: Vec<f64> = (0..n).map(|i| q[i] * s.powi(weights[i])).collect();
        prop_assert!(close(&qs, &want, 1e-7), "{qs:?} vs {want:?}");
    }
}
