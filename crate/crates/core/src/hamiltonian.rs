//! Normal Hamiltonian `h(q, p) = 1/2 g_q(u, u)` with `u = G_q^{-1} xi_q^* p`,
//! its flow, the exponential map and shooting for two-point problems.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{gram, ControlPath, Dynamics, FinePath};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::{axpy, norm, pinv_solve};
use crate::model::{ChartPoint, ControlVector, Covector, Model};

pub const DEFAULT_SHOOT_STEPS: usize = 1000;
/// Sub-intervals per flow step in [`PhaseTrajectory::to_control_path`].
pub const CONTROL_REFINEMENT: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub q: ChartPoint,
    pub p: Covector,
}

/// Solution of the normal Hamiltonian system sampled on a uniform grid of `[0, T]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrajectory {
    pub times: Vec<f64>,
    /// Row-major `(m + 1) x 2n`, each row `(q, p)`.
    pub states: Vec<f64>,
    /// Row-major `(m + 1) x h`, `u(q(t), p(t))` at the grid times.
    pub controls: Vec<f64>,
    /// Row-major `(r m) x h`, averages of `u(q(t), p(t))` over each of the
    /// [`CONTROL_REFINEMENT`] sub-intervals of every step.
    pub interval_controls: Vec<f64>,
    pub dim: usize,
    pub control_dim: usize,
}

impl PhaseTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.len() - 1
    }

    pub fn duration(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn q(&self, k: usize) -> &[f64] {
        &self.states[2 * k * self.dim..(2 * k + 1) * self.dim]
    }

    pub fn p(&self, k: usize) -> &[f64] {
        &self.states[(2 * k + 1) * self.dim..(2 * k + 2) * self.dim]
    }

    pub fn control(&self, k: usize) -> &[f64] {
        &self.controls[k * self.control_dim..(k + 1) * self.control_dim]
    }

    pub fn endpoint(&self) -> ChartPoint {
        ChartPoint::from(self.q(self.steps()))
    }

    pub fn initial(&self) -> PhasePoint {
        PhasePoint {
            q: ChartPoint::from(self.q(0)),
            p: Covector::from(self.p(0)),
        }
    }

    /// Piecewise-constant control on [0, 1] tracing the same curve.
    pub fn to_control_path(&self) -> ControlPath {
        let t = self.duration();
        let values = self.interval_controls.iter().map(|v| v * t).collect();
        ControlPath::new(self.steps() * CONTROL_REFINEMENT, self.control_dim, values).expect("finite flow samples")
    }

    /// Covector `p_1` pairing with [`Self::to_control_path`] in the unit-time
    /// normal extremal condition.
    pub fn terminal_covector(&self) -> Covector {
        let t = self.duration();
        Covector::new(self.p(self.steps()).iter().map(|v| v * t).collect())
    }

    /// `max_t |h(q(t), p(t)) - h(q0, p0)|`.
    pub fn hamiltonian_drift(&self, model: &Model) -> Result<f64> {
        let h0 = normal_hamiltonian(model, self.q(0), self.p(0))?;
        let mut worst: f64 = 0.0;
        for k in 1..self.len() {
            worst = worst.max((normal_hamiltonian(model, self.q(k), self.p(k))? - h0).abs());
        }
        Ok(worst)
    }
}

fn check_phase(model: &Model, q: &[f64], p: &[f64]) -> Result<()> {
    check_dim("chart point", model.dim(), q.len())?;
    check_dim("covector", model.dim(), p.len())?;
    check_finite("chart point", q)?;
    check_finite("covector", p)
}

/// Scratch buffers for evaluating the Hamiltonian vector field.
struct Workspace {
    w: Vec<f64>,
    u: Vec<f64>,
    grad: Vec<f64>,
}

impl Workspace {
    fn new(model: &Model) -> Self {
        Self {
            w: vec![0.0; model.control_dim()],
            u: vec![0.0; model.control_dim()],
            grad: vec![0.0; model.dim()],
        }
    }

    /// Writes `u(q, p)` into `self.u`.
    fn control(&mut self, model: &Model, q: &[f64], p: &[f64]) -> Result<()> {
        model.anchor_adjoint_into(q, p, &mut self.w);
        model.metric_solve_into(q, &self.w, &mut self.u)
    }

    fn gradient(&mut self, model: &Model, q: &[f64], p: &[f64], qdot: &mut [f64], pdot: &mut [f64]) -> Result<()> {
        self.control(model, q, p)?;
        model.anchor_apply_into(q, &self.u, qdot);
        model.anchor_deriv_adjoint_into(q, &self.u, p, pdot);
        pdot.iter_mut().for_each(|v| *v = -*v);
        if !model.has_constant_metric() {
            model.metric_grad_into(q, &self.u, &self.u, &mut self.grad);
            axpy(0.5, &self.grad, pdot);
        }
        Ok(())
    }
}

/// `u(q, p) = G_q^{-1} xi_q^* p`.
pub fn normal_control(model: &Model, q: &[f64], p: &[f64]) -> Result<ControlVector> {
    check_phase(model, q, p)?;
    let mut ws = Workspace::new(model);
    ws.control(model, q, p)?;
    Ok(ControlVector::new(ws.u))
}

pub fn normal_hamiltonian(model: &Model, q: &[f64], p: &[f64]) -> Result<f64> {
    let u = normal_control(model, q, p)?;
    Ok(0.5 * model.metric_inner(q, &u, &u))
}

/// `(xi_q u, 1/2 d_q g(u, u) - (d_q(xi_q u))^* p)` at `u = u(q, p)`.
pub fn symplectic_gradient(model: &Model, q: &[f64], p: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_phase(model, q, p)?;
    let n = model.dim();
    let (mut qd, mut pd) = (vec![0.0; n], vec![0.0; n]);
    Workspace::new(model).gradient(model, q, p, &mut qd, &mut pd)?;
    Ok((qd, pd))
}

fn hermite(ya: &[f64], yb: &[f64], fa: &[f64], fb: &[f64], h: f64, s: f64, out: &mut [f64]) {
    let (s2, s3) = (s * s, s * s * s);
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    for i in 0..out.len() {
        out[i] = h00 * ya[i] + h10 * h * fa[i] + h01 * yb[i] + h11 * h * fb[i];
    }
}

/// RK4 integration of the Hamiltonian system on `[0, duration]`.
pub fn geodesic_shoot(model: &Model, q0: &[f64], p0: &[f64], duration: f64, steps: usize) -> Result<PhaseTrajectory> {
    check_phase(model, q0, p0)?;
    if steps == 0 {
        return Err(Error::InvalidArgument("geodesic_shoot needs at least one step".into()));
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::InvalidArgument(format!("duration must be positive, got {duration}")));
    }
    let n = model.dim();
    let hd = model.control_dim();
    let h = duration / steps as f64;
    let mut ws = Workspace::new(model);
    let mut states = Vec::with_capacity((steps + 1) * 2 * n);
    let mut controls = Vec::with_capacity((steps + 1) * hd);
    let mut interval_controls = Vec::with_capacity(steps * CONTROL_REFINEMENT * hd);

    let mut y = [q0, p0].concat();
    let mut tmp = vec![0.0; 2 * n];
    let mut k = [vec![0.0; 2 * n], vec![0.0; 2 * n], vec![0.0; 2 * n], vec![0.0; 2 * n]];
    let mut f_next = vec![0.0; 2 * n];
    let mut mid = vec![0.0; 2 * n];

    let eval = |ws: &mut Workspace, y: &[f64], out: &mut [f64]| -> Result<()> {
        let (oq, op) = out.split_at_mut(n);
        ws.gradient(model, &y[..n], &y[n..], oq, op)
    };

    states.extend_from_slice(&y);
    eval(&mut ws, &y, &mut k[0])?;
    controls.extend_from_slice(&ws.u);
    let mut u_a = ws.u.clone();
    for step in 0..steps {
        for stage in 1..4 {
            let c = if stage == 3 { h } else { 0.5 * h };
            for i in 0..2 * n {
                tmp[i] = y[i] + c * k[stage - 1][i];
            }
            let (_, rest) = k.split_at_mut(stage);
            eval(&mut ws, &tmp, &mut rest[0])?;
        }
        let y_prev = y.clone();
        for i in 0..2 * n {
            y[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        }
        let yn = norm(&y);
        if !yn.is_finite() || yn > crate::dynamics::BLOWUP_NORM {
            return Err(Error::BlowUp {
                time: (step + 1) as f64 * h,
                norm: yn,
            });
        }
        eval(&mut ws, &y, &mut f_next)?;
        let u_b = ws.u.clone();
        let mut u_left = u_a.clone();
        for j in 0..CONTROL_REFINEMENT {
            let r = CONTROL_REFINEMENT as f64;
            hermite(&y_prev, &y, &k[0], &f_next, h, (j as f64 + 0.5) / r, &mut mid);
            ws.control(model, &mid[..n], &mid[n..])?;
            let u_mid = ws.u.clone();
            let u_right = if j + 1 == CONTROL_REFINEMENT {
                u_b.clone()
            } else {
                hermite(&y_prev, &y, &k[0], &f_next, h, (j + 1) as f64 / r, &mut mid);
                ws.control(model, &mid[..n], &mid[n..])?;
                ws.u.clone()
            };
            for c in 0..hd {
                interval_controls.push((u_left[c] + 4.0 * u_mid[c] + u_right[c]) / 6.0);
            }
            u_left = u_right;
        }
        states.extend_from_slice(&y);
        controls.extend_from_slice(&u_b);
        u_a = u_b;
        std::mem::swap(&mut k[0], &mut f_next);
    }
    Ok(PhaseTrajectory {
        times: (0..=steps).map(|i| i as f64 * h).collect(),
        states,
        controls,
        interval_controls,
        dim: n,
        control_dim: hd,
    })
}

/// Projection to M of the unit-time normal flow.
pub fn exp_map(model: &Model, q0: &[f64], p0: &[f64]) -> Result<ChartPoint> {
    exp_map_with(model, q0, p0, DEFAULT_SHOOT_STEPS)
}

pub fn exp_map_with(model: &Model, q0: &[f64], p0: &[f64], steps: usize) -> Result<ChartPoint> {
    check_phase(model, q0, p0)?;
    if steps == 0 {
        return Err(Error::InvalidArgument("exp_map needs at least one step".into()));
    }
    // endpoint-only RK4 without recording the path
    let n = model.dim();
    let h = 1.0 / steps as f64;
    let mut ws = Workspace::new(model);
    let mut y = [q0, p0].concat();
    let mut tmp = vec![0.0; 2 * n];
    let mut k = [vec![0.0; 2 * n], vec![0.0; 2 * n], vec![0.0; 2 * n], vec![0.0; 2 * n]];
    for step in 0..steps {
        for stage in 0..4 {
            let c = match stage {
                0 => 0.0,
                3 => h,
                _ => 0.5 * h,
            };
            if stage == 0 {
                tmp.copy_from_slice(&y);
            } else {
                for i in 0..2 * n {
                    tmp[i] = y[i] + c * k[stage - 1][i];
                }
            }
            let (oq, op) = k[stage].split_at_mut(n);
            ws.gradient(model, &tmp[..n], &tmp[n..], oq, op)?;
        }
        for i in 0..2 * n {
            y[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        }
        let yn = norm(&y);
        if !yn.is_finite() || yn > crate::dynamics::BLOWUP_NORM {
            return Err(Error::BlowUp {
                time: (step + 1) as f64 * h,
                norm: yn,
            });
        }
    }
    y.truncate(n);
    Ok(ChartPoint::new(y))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BvpOptions {
    /// Target endpoint residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Flow steps per shot.
    pub steps: usize,
    /// Finite-difference step, scaled by `max(1, |p0|)`.
    pub fd_step: f64,
    pub initial_damping: f64,
}

impl Default for BvpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 100,
            steps: DEFAULT_SHOOT_STEPS,
            fd_step: 1e-6,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BvpFailure {
    pub best_p0: Covector,
    pub best_residual: f64,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub reason: String,
}

impl fmt::Display for BvpFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} after {} iterations (best residual {:e})",
            self.reason, self.iterations, self.best_residual
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BvpSolution {
    pub p0: Covector,
    pub trajectory: PhaseTrajectory,
    pub residual: f64,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

/// Levenberg-Marquardt on `p0 -> exp_map(q0, p0) - q1` with a forward-difference Jacobian.
pub fn shoot_bvp(model: &Model, q0: &[f64], q1: &[f64], p0_init: &[f64], options: &BvpOptions) -> Result<BvpSolution> {
    check_phase(model, q0, p0_init)?;
    check_dim("target point", model.dim(), q1.len())?;
    check_finite("target point", q1)?;
    let n = model.dim();
    let residual = |p: &[f64]| -> Result<Vec<f64>> {
        let e = exp_map_with(model, q0, p, options.steps)?;
        Ok(e.iter().zip(q1).map(|(a, b)| a - b).collect())
    };
    let mut p = p0_init.to_vec();
    let mut f = residual(&p)?;
    let mut r = norm(&f);
    let mut history = vec![r];
    let mut damping = options.initial_damping;
    let mut iterations = 0;
    let fail = |p: Vec<f64>, r: f64, it: usize, history: Vec<f64>, reason: &str| {
        Error::Bvp(Box::new(BvpFailure {
            best_p0: Covector::new(p),
            best_residual: r,
            iterations: it,
            residual_history: history,
            reason: reason.into(),
        }))
    };
    while r > options.tol {
        if iterations >= options.max_iter {
            return Err(fail(p, r, iterations, history, "iteration limit reached"));
        }
        iterations += 1;
        let step = options.fd_step * norm(&p).max(1.0);
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut pj = p.clone();
            pj[j] += step;
            let fj = residual(&pj)?;
            for i in 0..n {
                jac[(i, j)] = (fj[i] - f[i]) / step;
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtf = jac.transpose() * DVector::from_column_slice(&f);
        let scale = (0..n).map(|i| jtj[(i, i)]).fold(0.0, f64::max).max(1e-300);
        let mut accepted = false;
        while damping < 1e16 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += damping * scale;
            }
            let delta = pinv_solve(&a, &(-&jtf), 1e-15);
            let trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            match residual(&trial) {
                Ok(ft) if norm(&ft) < r => {
                    p = trial;
                    f = ft;
                    r = norm(&f);
                    damping = (damping / 10.0).max(1e-15);
                    accepted = true;
                    break;
                }
                _ => damping *= 10.0,
            }
        }
        history.push(r);
        if !accepted {
            return Err(fail(p, r, iterations, history, "damping exhausted without progress"));
        }
    }
    let trajectory = geodesic_shoot(model, q0, &p, 1.0, options.steps)?;
    Ok(BvpSolution {
        p0: Covector::new(p),
        trajectory,
        residual: r,
        iterations,
        residual_history: history,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimalityReport {
    pub trials: usize,
    pub magnitude: f64,
    pub base_action: f64,
    /// Smallest `A(u + du) - A(u)` over the endpoint-preserving perturbations.
    pub min_action_change: f64,
    /// PASS threshold `-0.01 * magnitude^2`.
    pub threshold: f64,
    /// Largest endpoint deviation left after restoration.
    pub max_endpoint_error: f64,
    pub passed: bool,
}

/// Perturbation test on a shot geodesic.
pub fn verify_local_minimality(
    model: &Model,
    q0: &[f64],
    traj: &PhaseTrajectory,
    trials: usize,
    magnitude: f64,
    seed: u64,
) -> Result<MinimalityReport> {
    verify_control_minimality(model, q0, &traj.to_control_path(), trials, magnitude, seed)
}

/// Random endpoint-preserving perturbations of size `magnitude` around `u`,
/// plus the steepest endpoint-preserving descent direction of the action;
/// passes iff none lowers the action by more than `0.01 * magnitude^2`.
pub fn verify_control_minimality(
    model: &Model,
    q0: &[f64],
    u: &ControlPath,
    trials: usize,
    magnitude: f64,
    seed: u64,
) -> Result<MinimalityReport> {
    if !(magnitude.is_finite() && magnitude > 0.0) {
        return Err(Error::InvalidArgument("perturbation magnitude must be positive".into()));
    }
    let threshold = -0.01 * magnitude * magnitude;
    let dynamics = Dynamics::new(model);
    let fine = dynamics.integrate(q0, u)?;
    let base_action = dynamics.action_on(&fine, u);
    if u.is_zero() {
        return Ok(MinimalityReport {
            trials,
            magnitude,
            base_action,
            min_action_change: 0.0,
            threshold,
            max_endpoint_error: 0.0,
            passed: true,
        });
    }
    let target = fine.endpoint().to_vec();
    let projector = KernelProjector::new(&dynamics, &fine, u)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut directions = Vec::with_capacity(trials + 1);
    let grad = dynamics.action_gradient_on(&fine, u)?;
    directions.push(grad.scaled(-1.0));
    for _ in 0..trials {
        let mut du = ControlPath::zeros(u.steps(), u.dim());
        du.values_mut()
            .iter_mut()
            .for_each(|v| *v = StandardNormal.sample(&mut rng));
        directions.push(du);
    }

    let mut min_change = f64::INFINITY;
    let mut max_err: f64 = 0.0;
    for mut du in directions {
        projector.project(&mut du);
        let nd = du.norm();
        if nd == 0.0 {
            continue;
        }
        du = du.scaled(magnitude / nd);
        let mut v = u.clone();
        v.add_scaled(1.0, &du);
        let (fine_v, err) = projector.restore(&dynamics, q0, &mut v, &target)?;
        max_err = max_err.max(err);
        min_change = min_change.min(dynamics.action_on(&fine_v, &v) - base_action);
    }
    if !min_change.is_finite() {
        min_change = 0.0;
    }
    Ok(MinimalityReport {
        trials,
        magnitude,
        base_action,
        min_action_change: min_change,
        threshold,
        max_endpoint_error: max_err,
        passed: min_change >= threshold,
    })
}

/// Least-squares projection onto `ker dE(u)` via the adjoint Gram matrix.
pub(crate) struct KernelProjector {
    cols: Vec<ControlPath>,
    gram: DMatrix<f64>,
}

impl KernelProjector {
    pub(crate) fn new(dynamics: &Dynamics<'_>, fine: &FinePath, u: &ControlPath) -> Result<Self> {
        let cols = dynamics.adjoint_columns_on(fine, u)?;
        let gram = gram(&cols);
        Ok(Self { cols, gram })
    }

    /// Minimum-norm control correction `C^T G^+ w`.
    pub(crate) fn lift(&self, w: &[f64]) -> ControlPath {
        let a = pinv_solve(&self.gram, &DVector::from_column_slice(w), 1e-12);
        let mut out = ControlPath::zeros(self.cols[0].steps(), self.cols[0].dim());
        for (c, ai) in self.cols.iter().zip(a.iter()) {
            out.add_scaled(*ai, c);
        }
        out
    }

    pub(crate) fn project(&self, du: &mut ControlPath) {
        let w: Vec<f64> = self.cols.iter().map(|c| c.dot(du)).collect();
        let corr = self.lift(&w);
        du.add_scaled(-1.0, &corr);
    }

    /// Chord-Newton correction of `v` until its endpoint matches `target`.
    pub(crate) fn restore(
        &self,
        dynamics: &Dynamics<'_>,
        q0: &[f64],
        v: &mut ControlPath,
        target: &[f64],
    ) -> Result<(FinePath, f64)> {
        let mut fine = dynamics.integrate(q0, v)?;
        let mut err = crate::linalg::dist(fine.endpoint(), target);
        for _ in 0..30 {
            if err <= 1e-13 * (1.0 + norm(target)) {
                break;
            }
            let w: Vec<f64> = fine.endpoint().iter().zip(target).map(|(a, b)| a - b).collect();
            let corr = self.lift(&w);
            let mut trial = v.clone();
            trial.add_scaled(-1.0, &corr);
            let fine_t = dynamics.integrate(q0, &trial)?;
            let err_t = crate::linalg::dist(fine_t.endpoint(), target);
            if err_t >= err {
                break;
            }
            *v = trial;
            fine = fine_t;
            err = err_t;
        }
        Ok((fine, err))
    }
}
