//! Sub-Riemannian distance by direct minimisation of the action over
//! controls and by shooting on the exponential map, extremal classification
//! and ball-box exponent fits.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controllability::bracket_span;
use crate::dynamics::{gram, ControlPath, Dynamics, FinePath};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::hamiltonian::{geodesic_shoot, shoot_bvp, BvpOptions, BvpSolution, KernelProjector};
use crate::linalg::{dist, linear_fit, pinv_solve, LinearFit};
use crate::model::{Covector, Model};

/// Relative Gram singular value below which a control is declared abnormal.
pub const ABNORMAL_THRESHOLD: f64 = 1e-8;
/// Relative disagreement between methods that gets flagged.
pub const DISCREPANCY_FLAG: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Direct,
    Shooting,
    BestOf,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Direct => "direct",
            Method::Shooting => "shooting",
            Method::BestOf => "best-of",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirectOptions {
    /// Control grid size.
    pub steps: usize,
    pub substeps: usize,
    /// Endpoint tolerance in chart units.
    pub tol_ep: f64,
    /// Penalty multipliers, one gradient-descent stage each.
    pub schedule: Vec<f64>,
    pub stage_steps: usize,
    pub armijo: f64,
    pub backtrack: f64,
    /// Size of the seeded initial perturbation relative to `|q1 - q0|^(1/depth)`.
    pub perturbation: f64,
    pub seed: u64,
    /// Reduced-gradient iterations after the penalty stages.
    pub refine_iters: usize,
    /// Stop refining once the reduced gradient falls below this (relative).
    pub refine_tol: f64,
}

impl Default for DirectOptions {
    fn default() -> Self {
        Self {
            steps: 256,
            substeps: 4,
            tol_ep: 1e-6,
            schedule: vec![1e1, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7],
            stage_steps: 200,
            armijo: 1e-4,
            backtrack: 0.5,
            perturbation: 1.0,
            seed: 0,
            refine_iters: 400,
            refine_tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BestOptions {
    pub direct: DirectOptions,
    pub bvp: BvpOptions,
    /// Number of sphere starts for shooting.
    pub starts: usize,
    /// Sphere radius as a multiple of the chart distance.
    pub start_radius: f64,
}

impl Default for BestOptions {
    fn default() -> Self {
        Self {
            direct: DirectOptions::default(),
            bvp: BvpOptions {
                max_iter: 30,
                ..BvpOptions::default()
            },
            starts: 8,
            start_radius: 2.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PenaltyStage {
    pub mu: f64,
    pub steps: usize,
    pub action: f64,
    pub endpoint_error: f64,
    pub gradient_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub label: String,
    pub length: Option<f64>,
    pub endpoint_error: Option<f64>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DistanceDiagnostics {
    pub iterations: usize,
    pub penalty_history: Vec<PenaltyStage>,
    pub refine_iterations: usize,
    pub reduced_gradient_norm: f64,
    pub candidates: Vec<Candidate>,
    pub winner: Option<Method>,
    /// Relative gap between the direct and best shooting lengths.
    pub discrepancy: Option<f64>,
    pub flagged: bool,
}

impl fmt::Display for DistanceDiagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} iterations, {} penalty stages, {} refinement steps, reduced gradient {:e}",
            self.iterations,
            self.penalty_history.len(),
            self.refine_iterations,
            self.reduced_gradient_norm
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceResult {
    pub distance: f64,
    pub control: ControlPath,
    pub endpoint_error: f64,
    pub method: Method,
    pub diagnostics: DistanceDiagnostics,
}

fn check_pair(model: &Model, q0: &[f64], q1: &[f64]) -> Result<()> {
    check_dim("initial point", model.dim(), q0.len())?;
    check_dim("target point", model.dim(), q1.len())?;
    check_finite("initial point", q0)?;
    check_finite("target point", q1)
}

fn zero_result(model: &Model, steps: usize, method: Method) -> DistanceResult {
    DistanceResult {
        distance: 0.0,
        control: ControlPath::zeros(steps.max(1), model.control_dim()),
        endpoint_error: 0.0,
        method,
        diagnostics: DistanceDiagnostics::default(),
    }
}

/// Least-norm control along the chart segment plus a seeded smooth wiggle.
fn initial_control(model: &Model, q0: &[f64], q1: &[f64], opts: &DirectOptions) -> Result<ControlPath> {
    let m = opts.steps;
    let h = model.control_dim();
    let delta: Vec<f64> = q1.iter().zip(q0).map(|(a, b)| a - b).collect();
    let mut u = ControlPath::zeros(m, h);
    for k in 0..m {
        let s = (k as f64 + 0.5) / m as f64;
        let q: Vec<f64> = q0.iter().zip(&delta).map(|(a, d)| a + s * d).collect();
        let (uk, _) = model.least_norm_control(&q, &delta)?;
        u.row_mut(k).copy_from_slice(&uk);
    }
    if opts.perturbation > 0.0 {
        let depth = bracket_span(model, q0, 8)?.growth.depth.max(1) as f64;
        let amp = opts.perturbation * crate::linalg::norm(&delta).powf(1.0 / depth);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let modes = 3;
        let coeffs: Vec<f64> = (0..2 * modes * h).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut wiggle = ControlPath::zeros(m, h);
        for k in 0..m {
            let t = (k as f64 + 0.5) / m as f64;
            let row = wiggle.row_mut(k);
            for j in 0..modes {
                let f = 2.0 * PI * (j + 1) as f64 * t;
                let w = 1.0 / (j + 1) as f64;
                for c in 0..h {
                    row[c] += w * (coeffs[(2 * j) * h + c] * f.cos() + coeffs[(2 * j + 1) * h + c] * f.sin());
                }
            }
        }
        let nw = wiggle.norm();
        if nw > 0.0 {
            u.add_scaled(amp / nw, &wiggle);
        }
    }
    Ok(u)
}

struct Solver<'a> {
    model: &'a Model,
    dynamics: Dynamics<'a>,
    q0: &'a [f64],
    q1: &'a [f64],
}

impl Solver<'_> {
    fn residual(&self, fine: &FinePath) -> Vec<f64> {
        fine.endpoint().iter().zip(self.q1).map(|(a, b)| a - b).collect()
    }

    fn penalty_value(&self, u: &ControlPath, mu: f64) -> Result<(FinePath, f64, f64)> {
        let fine = self.dynamics.integrate(self.q0, u)?;
        let e = dist(fine.endpoint(), self.q1);
        let j = self.dynamics.action_on(&fine, u) + mu * e * e;
        Ok((fine, j, e))
    }

    fn penalty_stages(&self, u: &mut ControlPath, opts: &DirectOptions, diag: &mut DistanceDiagnostics) -> Result<()> {
        let mut alpha = 1.0;
        for &mu in &opts.schedule {
            let (mut fine, mut j, mut e) = self.penalty_value(u, mu)?;
            let mut gnorm = 0.0;
            let mut taken = 0;
            for _ in 0..opts.stage_steps {
                let p1: Vec<f64> = self.residual(&fine).iter().map(|r| -2.0 * mu * r).collect();
                let grad = self.dynamics.extremal_defect_on(&fine, u, &p1, 1.0)?;
                let g2 = grad.dot(&grad);
                gnorm = g2.sqrt();
                if gnorm <= 1e-12 * u.norm().max(1e-12) {
                    break;
                }
                alpha *= 2.0;
                let j_before = j;
                let mut accepted = false;
                for _ in 0..60 {
                    let mut trial = u.clone();
                    trial.add_scaled(-alpha, &grad);
                    if let Ok((ft, jt, et)) = self.penalty_value(&trial, mu) {
                        if jt <= j - opts.armijo * alpha * g2 {
                            *u = trial;
                            fine = ft;
                            j = jt;
                            e = et;
                            accepted = true;
                            break;
                        }
                    }
                    alpha *= opts.backtrack;
                }
                if !accepted {
                    break;
                }
                taken += 1;
                if j_before - j <= 1e-12 * j_before {
                    break;
                }
            }
            diag.iterations += taken;
            diag.penalty_history.push(PenaltyStage {
                mu,
                steps: taken,
                action: self.dynamics.action_on(&fine, u),
                endpoint_error: e,
                gradient_norm: gnorm,
            });
            if e <= opts.tol_ep {
                break;
            }
        }
        Ok(())
    }

    /// Newton restoration of the endpoint, refreshing the adjoint Gram each step.
    fn restore(&self, u: &mut ControlPath, tol: f64) -> Result<(FinePath, f64)> {
        let mut fine = self.dynamics.integrate(self.q0, u)?;
        let mut err = dist(fine.endpoint(), self.q1);
        for _ in 0..60 {
            if err <= tol {
                break;
            }
            let proj = KernelProjector::new(&self.dynamics, &fine, u)?;
            let mut trial = u.clone();
            let (ft, et) = proj.restore(&self.dynamics, self.q0, &mut trial, self.q1)?;
            if et < err {
                *u = trial;
                fine = ft;
                err = et;
                continue;
            }
            // far from feasible: damped minimum-norm Gauss-Newton step
            let w = self.residual(&fine);
            let step = proj.lift(&w);
            let mut scale = 1.0;
            let mut improved = false;
            for _ in 0..30 {
                scale *= 0.5;
                let mut trial = u.clone();
                trial.add_scaled(-scale, &step);
                if let Ok(ft) = self.dynamics.integrate(self.q0, &trial) {
                    let et = dist(ft.endpoint(), self.q1);
                    if et < err {
                        *u = trial;
                        fine = ft;
                        err = et;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        Ok((fine, err))
    }

    /// Projected gradient on the action over the constraint manifold.
    fn refine(&self, u: &mut ControlPath, opts: &DirectOptions, diag: &mut DistanceDiagnostics) -> Result<f64> {
        let tight = (opts.tol_ep * 1e-3).max(1e-13);
        let (mut fine, mut err) = self.restore(u, tight)?;
        let mut action = self.dynamics.action_on(&fine, u);
        let mut alpha = 1.0;
        let mut gnorm = f64::INFINITY;
        let mut stalled = 0;
        for it in 0..opts.refine_iters {
            diag.refine_iterations = it;
            let proj = KernelProjector::new(&self.dynamics, &fine, u)?;
            let mut g = self.dynamics.action_gradient_on(&fine, u)?;
            proj.project(&mut g);
            let g2 = g.dot(&g);
            gnorm = g2.sqrt();
            if gnorm <= opts.refine_tol * u.norm().max(1e-12) {
                break;
            }
            let mut accepted = false;
            for _ in 0..40 {
                let mut trial = u.clone();
                trial.add_scaled(-alpha, &g);
                let (ft, et) = match proj.restore(&self.dynamics, self.q0, &mut trial, self.q1) {
                    Ok(r) => r,
                    Err(_) => {
                        alpha *= 0.5;
                        continue;
                    }
                };
                let at = self.dynamics.action_on(&ft, &trial);
                if et <= tight.max(err) && at <= action - 1e-4 * alpha * g2 {
                    stalled = if action - at <= 1e-11 * action { stalled + 1 } else { 0 };
                    *u = trial;
                    fine = ft;
                    err = et;
                    action = at;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted || stalled >= 5 {
                break;
            }
            alpha = (alpha * 2.0).min(4.0);
        }
        diag.reduced_gradient_norm = gnorm;
        Ok(err)
    }
}

/// Direct method: quadratic-penalty continuation followed by a
/// reduced-gradient refinement on the endpoint constraint.
pub fn distance_direct(model: &Model, q0: &[f64], q1: &[f64], opts: &DirectOptions) -> Result<DistanceResult> {
    check_pair(model, q0, q1)?;
    if opts.steps < 8 {
        return Err(Error::InvalidArgument(format!("direct method needs at least 8 steps, got {}", opts.steps)));
    }
    if q0 == q1 {
        return Ok(zero_result(model, opts.steps, Method::Direct));
    }
    let start = initial_control(model, q0, q1, opts)?;
    let mut u = start.clone();
    match polish(model, q0, q1, &mut u, opts, true) {
        Ok(r) => Ok(r),
        Err(first) => {
            // the penalty can collapse onto the zero control; refine the start directly
            log::debug!("penalty continuation failed ({first}), refining the seeded start");
            let mut u = start;
            polish(model, q0, q1, &mut u, opts, false).map_err(|_| first)
        }
    }
}

fn polish(model: &Model, q0: &[f64], q1: &[f64], u: &mut ControlPath, opts: &DirectOptions, penalty: bool) -> Result<DistanceResult> {
    let solver = Solver {
        model,
        dynamics: Dynamics::with_substeps(model, opts.substeps),
        q0,
        q1,
    };
    let mut diag = DistanceDiagnostics::default();
    if penalty {
        let e0 = dist(q0, q1);
        solver.penalty_stages(u, opts, &mut diag)?;
        let e = diag.penalty_history.last().map_or(e0, |st| st.endpoint_error);
        if e > 0.5 * e0 && u.norm() < 1e-4 * e0.powf(0.5) {
            return Err(Error::Stagnation {
                reason: "penalty continuation collapsed onto the zero control".into(),
                diagnostics: Box::new(diag),
            });
        }
    }
    let err = solver.refine(u, opts, &mut diag)?;
    if err > opts.tol_ep {
        return Err(Error::Stagnation {
            reason: format!("endpoint error {err:e} above tolerance {:e}", opts.tol_ep),
            diagnostics: Box::new(diag),
        });
    }
    let distance = solver.dynamics.length(q0, u)?;
    let _ = solver.model;
    diag.winner = Some(Method::Direct);
    Ok(DistanceResult {
        distance,
        control: u.clone(),
        endpoint_error: err,
        method: Method::Direct,
        diagnostics: diag,
    })
}

/// Averages consecutive groups of `factor` intervals.
fn coarsen(u: &ControlPath, factor: usize) -> ControlPath {
    let m = u.steps() / factor;
    let h = u.dim();
    let mut out = ControlPath::zeros(m, h);
    for k in 0..m {
        let row = out.row_mut(k);
        for j in 0..factor {
            for c in 0..h {
                row[c] += u.row(k * factor + j)[c] / factor as f64;
            }
        }
    }
    out
}

/// Covector at t = 0 of the normal extremal best matching `u`.
fn seeded_covector(dynamics: &Dynamics<'_>, q0: &[f64], u: &ControlPath) -> Result<Vec<f64>> {
    let fine = dynamics.integrate(q0, u)?;
    let cols = dynamics.adjoint_columns_on(&fine, u)?;
    let g = gram(&cols);
    let da = dynamics.action_gradient_on(&fine, u)?;
    let b = DVector::from_iterator(cols.len(), cols.iter().map(|c| c.dot(&da)));
    let p1: Vec<f64> = pinv_solve(&g, &b, 1e-12).iter().copied().collect();
    let sweep = dynamics.costate_on(&fine, u, &p1, 1.0)?;
    Ok(sweep.path.covector(0).to_vec())
}

/// Deterministic points on spheres with radii log-spaced in `[r_lo, r_hi]`.
fn sphere_starts(n: usize, count: usize, r_lo: f64, r_hi: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..count)
        .map(|i| {
            let s = if count > 1 { i as f64 / (count - 1) as f64 } else { 0.0 };
            let r = r_lo * (r_hi / r_lo).powf(s);
            let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let nv = crate::linalg::norm(&v).max(1e-300);
            v.iter().map(|x| x * r / nv).collect()
        })
        .collect()
}

/// Runs the direct method and multistart shooting and keeps the shortest
/// candidate meeting the endpoint tolerance.
pub fn distance_best(model: &Model, q0: &[f64], q1: &[f64], opts: &BestOptions) -> Result<DistanceResult> {
    check_pair(model, q0, q1)?;
    let dopts = &opts.direct;
    if q0 == q1 {
        return Ok(zero_result(model, dopts.steps, Method::BestOf));
    }
    let dynamics = Dynamics::with_substeps(model, dopts.substeps);
    let mut candidates: Vec<(Method, DistanceResult)> = Vec::new();
    let mut notes: Vec<Candidate> = Vec::new();

    let direct = distance_direct(model, q0, q1, dopts);
    let mut starts: Vec<(String, Vec<f64>)> = Vec::new();
    match &direct {
        Ok(r) => {
            notes.push(Candidate {
                label: "direct".into(),
                length: Some(r.distance),
                endpoint_error: Some(r.endpoint_error),
                note: None,
            });
            if let Ok(p0) = seeded_covector(&dynamics, q0, &r.control) {
                starts.push(("shooting:seeded".into(), p0));
            }
            candidates.push((Method::Direct, r.clone()));
        }
        Err(e) => notes.push(Candidate {
            label: "direct".into(),
            length: None,
            endpoint_error: None,
            note: Some(e.to_string()),
        }),
    }
    starts.extend(sphere_start_list(model, q0, q1, opts)?);
    let shot = run_shooting(model, q0, q1, &starts, opts);
    let mut best_shoot: Option<f64> = None;
    for (label, r) in shot {
        match r {
            Ok(r) => {
                notes.push(Candidate {
                    label,
                    length: Some(r.distance),
                    endpoint_error: Some(r.endpoint_error),
                    note: None,
                });
                best_shoot = Some(best_shoot.map_or(r.distance, |b: f64| b.min(r.distance)));
                candidates.push((Method::Shooting, r));
            }
            Err(e) => notes.push(Candidate {
                label,
                length: None,
                endpoint_error: None,
                note: Some(e.to_string()),
            }),
        }
    }

    let winner = candidates
        .iter()
        .filter(|(_, r)| r.endpoint_error <= dopts.tol_ep)
        .min_by(|a, b| a.1.distance.total_cmp(&b.1.distance))
        .cloned();
    let (method, mut result) = match winner {
        Some(w) => w,
        None => {
            let diag = DistanceDiagnostics {
                candidates: notes,
                ..Default::default()
            };
            return Err(Error::Stagnation {
                reason: "neither direct nor shooting produced a feasible control".into(),
                diagnostics: Box::new(diag),
            });
        }
    };
    let discrepancy = match (&direct, best_shoot) {
        (Ok(d), Some(s)) => Some((d.distance - s).abs() / d.distance.min(s).max(1e-300)),
        _ => None,
    };
    result.diagnostics.candidates = notes;
    result.diagnostics.winner = Some(method);
    result.diagnostics.discrepancy = discrepancy;
    result.diagnostics.flagged = discrepancy.is_some_and(|d| d > DISCREPANCY_FLAG);
    if result.diagnostics.flagged {
        log::warn!("direct and shooting lengths differ by {:.2}%", 100.0 * discrepancy.unwrap());
    }
    result.method = Method::BestOf;
    Ok(result)
}

fn sphere_start_list(model: &Model, q0: &[f64], q1: &[f64], opts: &BestOptions) -> Result<Vec<(String, Vec<f64>)>> {
    // horizontal covector parts scale like the distance, bracket parts like its inverse powers
    let depth = bracket_span(model, q0, 8)?.growth.depth.max(1) as i32;
    let scale = dist(q0, q1).powf(1.0 / depth as f64);
    let r_lo = 0.5 * opts.start_radius * scale;
    let r_hi = (opts.start_radius * 4.0 * PI / scale.powi((depth - 2).max(0))).max(2.0 * r_lo);
    Ok(sphere_starts(model.dim(), opts.starts, r_lo, r_hi, opts.direct.seed)
        .into_iter()
        .enumerate()
        .map(|(i, p)| (format!("shooting:sphere{i}"), p))
        .collect())
}

/// Shooting that also hands back stalled runs already inside the endpoint
/// tolerance; polishing finishes them.
fn shoot_or_near(model: &Model, q0: &[f64], q1: &[f64], p0: &[f64], bvp: &BvpOptions, tol_ep: f64) -> Result<BvpSolution> {
    match shoot_bvp(model, q0, q1, p0, bvp) {
        Err(Error::Bvp(f)) if f.best_residual <= tol_ep => {
            let trajectory = geodesic_shoot(model, q0, &f.best_p0, 1.0, bvp.steps)?;
            Ok(BvpSolution {
                p0: f.best_p0.clone(),
                trajectory,
                residual: f.best_residual,
                iterations: f.iterations,
                residual_history: f.residual_history.clone(),
            })
        }
        r => r,
    }
}

/// Shoots from every start, drops duplicate solutions and polishes the rest
/// on the direct grid.
fn run_shooting(
    model: &Model,
    q0: &[f64],
    q1: &[f64],
    starts: &[(String, Vec<f64>)],
    opts: &BestOptions,
) -> Vec<(String, Result<DistanceResult>)> {
    let dopts = &opts.direct;
    let bvp = BvpOptions {
        steps: dopts.steps * 4,
        ..opts.bvp.clone()
    };
    let solved: Vec<(String, Result<BvpSolution>)> = starts
        .par_iter()
        .map(|(label, p0)| (label.clone(), shoot_or_near(model, q0, q1, p0, &bvp, dopts.tol_ep)))
        .collect();
    let mut unique: Vec<(String, BvpSolution)> = Vec::new();
    let mut shot: Vec<(String, Result<DistanceResult>)> = Vec::new();
    for (label, r) in solved {
        match r {
            Ok(sol) => {
                let dup = unique
                    .iter()
                    .any(|(_, o)| dist(&o.p0, &sol.p0) <= 1e-6 * (1.0 + crate::linalg::norm(&o.p0)));
                if dup {
                    shot.push((label, Err(Error::InvalidArgument("duplicate of an earlier shooting solution".into()))));
                } else {
                    unique.push((label, sol));
                }
            }
            Err(e) => shot.push((label, Err(e))),
        }
    }
    shot.extend(
        unique
            .par_iter()
            .map(|(label, sol)| (label.clone(), shooting_candidate(model, q0, q1, sol, dopts)))
            .collect::<Vec<_>>(),
    );
    shot
}

/// Multistart shooting alone: a chord start plus the sphere starts, keeping
/// the shortest polished solution.
pub fn distance_shooting(model: &Model, q0: &[f64], q1: &[f64], opts: &BestOptions) -> Result<DistanceResult> {
    check_pair(model, q0, q1)?;
    if q0 == q1 {
        return Ok(zero_result(model, opts.direct.steps, Method::Shooting));
    }
    let mut starts = vec![("shooting:chord".to_string(), q1.iter().zip(q0).map(|(a, b)| a - b).collect())];
    starts.extend(sphere_start_list(model, q0, q1, opts)?);
    let mut notes = Vec::new();
    let mut best: Option<DistanceResult> = None;
    for (label, r) in run_shooting(model, q0, q1, &starts, opts) {
        match r {
            Ok(r) => {
                notes.push(Candidate {
                    label,
                    length: Some(r.distance),
                    endpoint_error: Some(r.endpoint_error),
                    note: None,
                });
                if r.endpoint_error <= opts.direct.tol_ep && best.as_ref().is_none_or(|b| r.distance < b.distance) {
                    best = Some(r);
                }
            }
            Err(e) => notes.push(Candidate {
                label,
                length: None,
                endpoint_error: None,
                note: Some(e.to_string()),
            }),
        }
    }
    match best {
        Some(mut r) => {
            r.diagnostics.candidates = notes;
            Ok(r)
        }
        None => Err(Error::Stagnation {
            reason: "no shooting start converged".into(),
            diagnostics: Box::new(DistanceDiagnostics {
                candidates: notes,
                ..Default::default()
            }),
        }),
    }
}

fn shooting_candidate(
    model: &Model,
    q0: &[f64],
    q1: &[f64],
    sol: &BvpSolution,
    dopts: &DirectOptions,
) -> Result<DistanceResult> {
    let fine_u = sol.trajectory.to_control_path();
    let mut u = coarsen(&fine_u, fine_u.steps() / dopts.steps);
    let mut r = polish(model, q0, q1, &mut u, dopts, false)?;
    r.method = Method::Shooting;
    r.diagnostics.winner = Some(Method::Shooting);
    r.diagnostics.iterations += sol.iterations;
    Ok(r)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtremalClass {
    Normal,
    Abnormal,
    Unclassified,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtremalCertificate {
    pub class: ExtremalClass,
    pub covector: Option<Covector>,
    /// `|dA - dE^* p1|` for the least-squares `p1`.
    pub normal_residual: f64,
    /// `|dE^* p|` for the unit covector of the smallest Gram singular value.
    pub abnormal_residual: f64,
    /// Singular values of the adjoint Gram matrix, descending.
    pub spectrum: Vec<f64>,
    pub rank: usize,
}

/// Abnormal test first (rank-deficient adjoint Gram), then the normal
/// least-squares test `dE^* p1 = dA`.
pub fn classify_extremal(model: &Model, q0: &[f64], u: &ControlPath, tol: f64) -> Result<ExtremalCertificate> {
    let dynamics = Dynamics::new(model);
    let fine = dynamics.integrate(q0, u)?;
    let cols = dynamics.adjoint_columns_on(&fine, u)?;
    let g = gram(&cols);
    let svd = g.clone().svd(true, false);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let spectrum: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let smax = spectrum.first().copied().unwrap_or(0.0);
    let smin = spectrum.last().copied().unwrap_or(0.0);
    let rank = spectrum.iter().filter(|&&s| s > ABNORMAL_THRESHOLD * smax).count();
    let abnormal_residual = smin.max(0.0).sqrt();

    if smax == 0.0 || smin <= ABNORMAL_THRESHOLD * smax {
        let uvec = svd.u.as_ref().expect("left singular vectors");
        let k = *order.last().unwrap();
        let p: Vec<f64> = uvec.column(k).iter().copied().collect();
        return Ok(ExtremalCertificate {
            class: ExtremalClass::Abnormal,
            covector: Some(Covector::new(p)),
            normal_residual: f64::NAN,
            abnormal_residual,
            spectrum,
            rank,
        });
    }

    let da = dynamics.action_gradient_on(&fine, u)?;
    let b = DVector::from_iterator(cols.len(), cols.iter().map(|c| c.dot(&da)));
    let p1: Vec<f64> = pinv_solve(&g, &b, 1e-14).iter().copied().collect();
    let mut r = da.clone();
    for (c, pi) in cols.iter().zip(&p1) {
        r.add_scaled(-pi, c);
    }
    let normal_residual = r.norm();
    let class = if normal_residual <= tol * da.norm().max(1.0) {
        ExtremalClass::Normal
    } else {
        ExtremalClass::Unclassified
    };
    Ok(ExtremalCertificate {
        class,
        covector: (class == ExtremalClass::Normal).then(|| Covector::new(p1)),
        normal_residual,
        abnormal_residual,
        spectrum,
        rank,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallBoxRow {
    pub scale: f64,
    pub distance: Option<f64>,
    pub method: Option<Method>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallBoxFit {
    /// Slope of `log d` against `log s`.
    pub exponent: f64,
    pub fit: LinearFit,
    pub table: Vec<BallBoxRow>,
}

/// Distances from `q0` to `q0 + s * direction` over `scales` and the log-log slope.
pub fn ballbox_fit(model: &Model, q0: &[f64], direction: &[f64], scales: &[f64], opts: &BestOptions) -> Result<BallBoxFit> {
    check_dim("direction", model.dim(), direction.len())?;
    if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::InvalidArgument("scales must be positive".into()));
    }
    if scales.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("scales must be strictly decreasing".into()));
    }
    let table: Vec<BallBoxRow> = scales
        .par_iter()
        .map(|&s| {
            let q1: Vec<f64> = q0.iter().zip(direction).map(|(a, d)| a + s * d).collect();
            match distance_best(model, q0, &q1, opts) {
                Ok(r) => BallBoxRow {
                    scale: s,
                    distance: Some(r.distance),
                    method: r.diagnostics.winner,
                    error: None,
                },
                Err(e) => BallBoxRow {
                    scale: s,
                    distance: None,
                    method: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let ok: Vec<(f64, f64)> = table
        .iter()
        .filter_map(|r| r.distance.filter(|d| *d > 0.0).map(|d| (r.scale.ln(), d.ln())))
        .collect();
    if ok.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: ok.len(),
        });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = ok.into_iter().unzip();
    let fit = linear_fit(&xs, &ys).ok_or(Error::InsufficientData { needed: 3, got: xs.len() })?;
    Ok(BallBoxFit {
        exponent: fit.slope,
        fit,
        table,
    })
}

/// Dense matrix whose columns are the adjoint columns `dE(u)^* e_i` on the grid,
/// weighted so that `A^T A` is the Gram matrix.
pub fn adjoint_matrix(model: &Model, q0: &[f64], u: &ControlPath) -> Result<DMatrix<f64>> {
    let dynamics = Dynamics::new(model);
    let fine = dynamics.integrate(q0, u)?;
    let cols = dynamics.adjoint_columns_on(&fine, u)?;
    let len = u.values().len();
    let w = u.dt().sqrt();
    Ok(DMatrix::from_fn(len, cols.len(), |i, j| w * cols[j].values()[i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_point_is_zero() {
        let m = Model::heisenberg3();
        let r = distance_direct(&m, &[0.1; 3], &[0.1; 3], &DirectOptions::default()).unwrap();
        assert_eq!(r.distance, 0.0);
        assert!(r.control.is_zero());
        let b = distance_best(&m, &[0.1; 3], &[0.1; 3], &BestOptions::default()).unwrap();
        assert_eq!(b.distance, 0.0);
    }

    #[test]
    fn too_few_steps_rejected() {
        let m = Model::heisenberg3();
        let opts = DirectOptions {
            steps: 4,
            ..Default::default()
        };
        assert!(distance_direct(&m, &[0.0; 3], &[1.0, 0.0, 0.0], &opts).is_err());
    }

    #[test]
    fn horizontal_target() {
        let m = Model::heisenberg3();
        let r = distance_direct(&m, &[0.0; 3], &[1.0, 0.0, 0.0], &DirectOptions::default()).unwrap();
        assert!((r.distance - 1.0).abs() < 1e-3, "{}", r.distance);
        assert!(r.endpoint_error <= 1e-6);
    }

    #[test]
    fn zero_control_is_abnormal() {
        let m = Model::heisenberg3();
        let c = classify_extremal(&m, &[0.0; 3], &ControlPath::zeros(32, 2), 1e-6).unwrap();
        assert_eq!(c.class, ExtremalClass::Abnormal);
        assert_eq!(c.rank, 2);
        let p = c.covector.unwrap();
        assert!((p[2].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scales_validated() {
        let m = Model::heisenberg3();
        let o = BestOptions::default();
        assert!(ballbox_fit(&m, &[0.0; 3], &[1.0, 0.0, 0.0], &[0.1, 0.2, 0.05], &o).is_err());
        assert!(ballbox_fit(&m, &[0.0; 3], &[1.0, 0.0, 0.0], &[0.1, -0.2], &o).is_err());
    }
}
