use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sublab::controllability::{bracket_motion_prediction, Word};
use sublab::distance::BestOptions;
use sublab::experiments::Placement;
use sublab::*;

type Outcome = (bool, String);

fn normals(rng: &mut ChaCha8Rng, n: usize, s: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            // Box-Muller keeps this file independent of the library's samplers
            let (a, b): (f64, f64) = (rng.random_range(1e-12..1.0), rng.random());
            s * (-2.0 * a.ln()).sqrt() * (2.0 * PI * b).cos()
        })
        .collect()
}

fn wavy_control(rng: &mut ChaCha8Rng, steps: usize, dim: usize, s: f64) -> ControlPath {
    let c = normals(rng, 4 * dim, s);
    ControlPath::from_fn(steps, dim, |t| {
        (0..dim)
            .map(|k| c[4 * k] + c[4 * k + 1] * (2.0 * PI * t).cos() + c[4 * k + 2] * (2.0 * PI * t).sin() + c[4 * k + 3] * (4.0 * PI * t).sin())
            .collect()
    })
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    d / b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12)
}

fn shot_samples() -> Vec<(Model, Vec<f64>, PhaseTrajectory)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut out = Vec::new();
    for m in [Model::heisenberg3(), Model::engel()] {
        for _ in 0..32 {
            let p0 = normals(&mut rng, m.dim(), 1.0);
            let t = geodesic_shoot(&m, &vec![0.0; m.dim()], &p0, 1.0, 1000).expect("shoot");
            out.push((m.clone(), p0, t));
        }
    }
    out
}

fn conservation(shots: &[(Model, Vec<f64>, PhaseTrajectory)]) -> Outcome {
    let worst = shots
        .iter()
        .map(|(m, p0, t)| {
            let h0 = normal_hamiltonian(m, &vec![0.0; m.dim()], p0).unwrap();
            t.hamiltonian_drift(m).unwrap() / h0
        })
        .fold(0.0, f64::max);
    (worst <= 1e-8, format!("max relative drift {worst:.2e} over {} geodesics (tol 1e-8)", shots.len()))
}

fn extremal(shots: &[(Model, Vec<f64>, PhaseTrajectory)]) -> Outcome {
    let worst = shots
        .iter()
        .map(|(m, _, t)| extremal_residual(m, &vec![0.0; m.dim()], &t.to_control_path(), &t.terminal_covector(), 1).unwrap())
        .fold(0.0, f64::max);
    (worst <= 1e-6, format!("max residual {worst:.2e} (tol 1e-6)"))
}

fn differentials() -> Outcome {
    let models = [
        Model::heisenberg3(),
        Model::heisenberg_product(2),
        Model::engel(),
        Model::engel_product(2),
        Model::infinite_heisenberg_trunc(3),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut e_diff, mut e_adj, mut e_grad) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..100 {
        let m = &models[i % models.len()];
        let n = m.dim();
        let q0 = normals(&mut rng, n, 0.3);
        let u = wavy_control(&mut rng, 50, m.control_dim(), 0.5);
        let du = wavy_control(&mut rng, 50, m.control_dim(), 1.0);
        let d = endpoint_diff(m, &q0, &u, &du).unwrap();
        let h = 1e-5;
        let mut up = u.clone();
        up.add_scaled(h, &du);
        let mut um = u.clone();
        um.add_scaled(-h, &du);
        let (ep, em) = (endpoint(m, &q0, &up).unwrap(), endpoint(m, &q0, &um).unwrap());
        let fd: Vec<f64> = ep.iter().zip(em.iter()).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        e_diff = e_diff.max(rel_err(&d, &fd));

        let p1 = normals(&mut rng, n, 1.0);
        let (_, dual) = endpoint_adjoint(m, &q0, &u, &Covector::new(p1.clone())).unwrap();
        let lhs: f64 = p1.iter().zip(&d).map(|(a, b)| a * b).sum();
        let rhs = dual.dot(&du);
        e_adj = e_adj.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));

        let p = normals(&mut rng, n, 1.0);
        let (qd, pd) = symplectic_gradient(m, &q0, &p).unwrap();
        let ham = |q: &[f64], p: &[f64]| normal_hamiltonian(m, q, p).unwrap();
        let mut want = vec![0.0; 2 * n];
        for j in 0..n {
            let (mut a, mut b) = (p.clone(), p.clone());
            a[j] += h;
            b[j] -= h;
            want[j] = (ham(&q0, &a) - ham(&q0, &b)) / (2.0 * h);
            let (mut a, mut b) = (q0.clone(), q0.clone());
            a[j] += h;
            b[j] -= h;
            want[n + j] = -(ham(&a, &p) - ham(&b, &p)) / (2.0 * h);
        }
        e_grad = e_grad.max(rel_err(&[qd, pd].concat(), &want));
    }
    (
        e_diff <= 1e-5 && e_adj <= 1e-8 && e_grad <= 1e-6,
        format!("endpoint_diff {e_diff:.2e} (1e-5), adjoint {e_adj:.2e} (1e-8), symplectic gradient {e_grad:.2e} (1e-6)"),
    )
}

fn growth() -> Outcome {
    let cases: [(Model, usize, Vec<usize>); 4] = [
        (Model::heisenberg3(), 2, vec![2, 1]),
        (Model::engel(), 3, vec![2, 1, 1]),
        (Model::heisenberg_product(3), 2, vec![6, 3]),
        (Model::infinite_heisenberg_trunc(8), 2, vec![16, 1]),
    ];
    let mut ok = true;
    let mut got = Vec::new();
    for (m, depth, want) in cases {
        let g = bracket_span(&m, &vec![0.0; m.dim()], depth).unwrap().growth;
        ok &= g.ranks == want;
        got.push(format!("{:?}", g.ranks));
    }
    (ok, got.join(" "))
}

fn ballbox() -> Outcome {
    let scales = [0.2, 0.1, 0.05, 0.025, 0.0125];
    let opts = BestOptions::default();
    let h = Model::heisenberg3();
    let e = Model::engel();
    let cases = [
        ("x", &h, vec![1.0, 0.0, 0.0], 1.0, 0.02),
        ("z", &h, vec![0.0, 0.0, 1.0], 0.5, 0.02),
        ("w", &e, vec![0.0, 0.0, 0.0, 1.0], 0.333, 0.03),
    ];
    let mut ok = true;
    let mut msg = Vec::new();
    for (name, m, dir, want, tol) in cases {
        match ballbox_fit(m, &vec![0.0; m.dim()], &dir, &scales, &opts) {
            Ok(f) => {
                ok &= (f.exponent - want).abs() <= tol;
                msg.push(format!("{name} {:.4}", f.exponent));
            }
            Err(err) => {
                ok = false;
                msg.push(format!("{name} failed: {err}"));
            }
        }
    }
    (ok, msg.join(", "))
}

fn steering() -> Outcome {
    let h = Model::heisenberg3();
    let words: Vec<Word> = vec![vec![], vec![1]];
    let mut ok = true;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut worst: f64 = 0.0;
    for s in [1e-1, 1e-2, 1e-3, 1e-4] {
        match steer(&h, &[0.0; 3], &[0.0, 0.0, s], &words, &SteerOptions::default()) {
            Ok(plan) => {
                worst = worst.max(plan.endpoint_error);
                let c = steering_cost_certificate(&h, &plan).unwrap();
                xs.push(s.ln());
                ys.push(c.ratio.ln());
            }
            Err(_) => ok = false,
        }
    }
    let fit = sublab::linalg::linear_fit(&xs, &ys);
    let slope = fit.map_or(f64::NAN, |f| f.slope);
    ok &= worst <= 1e-6 && slope.abs() <= 0.1;
    (ok, format!("max endpoint error {worst:.2e} (1e-6), log-ratio slope {slope:.2e} (0 +- 0.1)"))
}

fn bracket_motions() -> Outcome {
    let words: Vec<Word> = vec![vec![], vec![1], vec![2], vec![1, 1], vec![1, 2], vec![2, 1], vec![2, 2]];
    let s = 1e-3;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (m, q) in [(Model::heisenberg3(), vec![0.2, 0.1, -0.3]), (Model::engel(), vec![-0.1, 0.3, 0.2, 0.1])] {
        for w in &words {
            for dir in [[1.0, 0.0], [0.0, 1.0], [0.8, 0.6]] {
                let u = [s * dir[0], s * dir[1]];
                let pred = bracket_motion_prediction(&m, w, &u, &q).unwrap();
                if pred.iter().all(|v| v.abs() < 1e-15) {
                    continue;
                }
                let got = bracket_motion(&m, w, &u, &q).unwrap();
                let moved: Vec<f64> = got.iter().zip(&q).map(|(a, b)| a - b).collect();
                worst = worst.max(rel_err(&moved, &pred));
                count += 1;
            }
        }
    }
    (worst <= 0.05, format!("max relative first-order error {worst:.2e} over {count} cases (tol 5e-2)"))
}

fn orbits() -> Outcome {
    let n = [8, 16, 32, 64];
    let spec = |p, at| SequenceSpec::new(1.0, p, at).unwrap();
    let z2 = orbit_profile(&spec(2.0, Placement::Z), &n, Quality::Fast, None).unwrap();
    let z1 = orbit_profile(&spec(1.0, Placement::Z), &n, Quality::Fast, None).unwrap();
    let w2 = engel_profile(&spec(2.0, Placement::W), &n, Quality::Fast, None).unwrap();
    let w1 = engel_profile(&spec(1.0, Placement::W), &n, Quality::Fast, None).unwrap();
    let z1_r2 = z1.growth_fit.map_or(0.0, |f| f.r_squared);
    let ok = z2.verdict == Verdict::Convergent
        && z1.verdict == Verdict::DivergentTrend
        && z1_r2 >= 0.99
        && w2.verdict == Verdict::Convergent
        && w1.verdict == Verdict::DivergentTrend;
    (
        ok,
        format!(
            "z p=2 {:?}, z p=1 {:?} (log fit R^2 {z1_r2:.4}), w p=2 {:?}, w p=1 {:?}",
            z2.verdict, z1.verdict, w2.verdict, w1.verdict
        ),
    )
}

fn classification() -> Outcome {
    let h = Model::heisenberg3();
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for q1 in [[0.5, 0.2, 0.1], [-0.3, 0.6, -0.05], [0.8, -0.1, 0.2]] {
        let sol = shoot_bvp(&h, &[0.0; 3], &q1, &[q1[0], q1[1], 0.0], &BvpOptions::default()).unwrap();
        let c = classify_extremal(&h, &[0.0; 3], &sol.trajectory.to_control_path(), 1e-6).unwrap();
        ok &= c.class == ExtremalClass::Normal;
        worst = worst.max(c.normal_residual);
    }
    let mut ranks = Vec::new();
    for n in [1, 2, 4] {
        let m = Model::heisenberg_product(n);
        let c = classify_extremal(&m, &vec![0.0; m.dim()], &ControlPath::zeros(32, 2 * n), 1e-6).unwrap();
        ok &= c.class == ExtremalClass::Abnormal && c.rank == 2 * n;
        ranks.push(c.rank);
    }
    let u = wavy_control(&mut ChaCha8Rng::seed_from_u64(13), 100, 2, 1.0);
    let c = classify_extremal(&h, &[0.0; 3], &u, 1e-6).unwrap();
    ok &= c.class == ExtremalClass::Unclassified;
    (
        ok,
        format!("bvp residual {worst:.2e}, abnormal ranks {ranks:?}, random control {:?}", c.class),
    )
}

fn spectrum() -> Outcome {
    let base = ControlPath::from_fn(128, 2, |t| vec![(2.0 * PI * t).cos(), (2.0 * PI * t).sin()]);
    let rows = elusive_spectrum(&[1, 2, 4, 8, 16], &base, 1.0, 2).unwrap();
    let mins: Vec<f64> = rows.iter().map(|r| r.sigma_min).collect();
    let ok = mins.windows(2).all(|w| w[1] < w[0]);
    let shown: Vec<String> = mins.iter().map(|v| format!("{v:.2e}")).collect();
    (ok, format!("sigma_min {}", shown.join(" > ")))
}

fn metric_axioms() -> Outcome {
    let h = Model::heisenberg3();
    let opts = BestOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (mut sym, mut tri) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let p: Vec<Vec<f64>> = (0..3).map(|_| normals(&mut rng, 3, 0.3)).collect();
        let d = |a: &[f64], b: &[f64]| distance_best(&h, a, b, &opts).unwrap().distance;
        let (ab, ba, bc, ac) = (d(&p[0], &p[1]), d(&p[1], &p[0]), d(&p[1], &p[2]), d(&p[0], &p[2]));
        sym = sym.max((ab - ba).abs() / ab.max(ba));
        tri = tri.max((ac - ab - bc) / ac);
    }
    (sym <= 0.02 && tri <= 0.02, format!("symmetry gap {sym:.2e}, triangle excess {tri:.2e} (tol 2e-2)"))
}

fn minimality() -> Outcome {
    let h = Model::heisenberg3();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut worst = f64::INFINITY;
    let mut ok = true;
    for i in 0..8 {
        let a = rng.random_range(0.0..2.0 * PI);
        let p0 = [a.cos(), a.sin(), rng.random_range(-4.0..4.0)];
        let t = geodesic_shoot(&h, &[0.0; 3], &p0, 1.0, 1000).unwrap();
        let r = verify_local_minimality(&h, &[0.0; 3], &t, 64, 0.05, i).unwrap();
        ok &= r.passed;
        worst = worst.min(r.min_action_change);
    }
    (ok, format!("smallest action change {worst:.2e} over 8 x 64 perturbations"))
}

fn main() -> ExitCode {
    let shots = shot_samples();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("hamiltonian conservation", Box::new(|| conservation(&shots))),
        ("extremal consistency", Box::new(|| extremal(&shots))),
        ("differential oracles", Box::new(differentials)),
        ("growth vectors", Box::new(growth)),
        ("ball-box exponents", Box::new(ballbox)),
        ("steering", Box::new(steering)),
        ("bracket-motion expansion", Box::new(bracket_motions)),
        ("orbit trends", Box::new(orbits)),
        ("classification", Box::new(classification)),
        ("elusive diagnostic", Box::new(spectrum)),
        ("metric axioms", Box::new(metric_axioms)),
        ("local minimality", Box::new(minimality)),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let (ok, detail) = match std::panic::catch_unwind(std::panic::AssertUnwindSafe(run)) {
            Ok(r) => r,
            Err(_) => (false, "panicked".to_string()),
        };
        if !ok {
            failures += 1;
        }
        let status = if ok { "PASS" } else { "FAIL" };
        println!("{status} {:>2} {name}: {detail} [{:.1}s]", i + 1, t0.elapsed().as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
