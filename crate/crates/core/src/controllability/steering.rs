//! Constructive steering by products of commutator flows.
//!
//! For a word `I` of length `i` and amplitude `u`, `Phi_I(u)` is the group
//! commutator of the flow of `X(u / |u|)` and `psi_I`, both run for time
//! `t = |u|^(1/(i+1))`, so that `Phi_I(u)(q) = q + [X(u), X_I](q) + o(|u|)`.
//! The empty word is the single arc `exp X(u)`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{arc, commutator_arcs, group_commutator, word_field, Word};
use crate::dynamics::{ControlPath, Dynamics};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::{dist, norm, pinv_solve};
use crate::model::{ChartPoint, Model};

/// Control intervals per flow arc.
pub const ARC_STEPS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteerOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_segments: usize,
    /// Relative finite-difference step for Jacobian refreshes.
    pub fd_step: f64,
}

impl Default for SteerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50,
            max_segments: 16,
            fd_step: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub word: Word,
    pub amplitude: Vec<f64>,
    /// Number of flow arcs realising this step.
    pub arcs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteeringPlan {
    pub q0: ChartPoint,
    pub target: ChartPoint,
    pub steps: Vec<PlanStep>,
    /// All arcs concatenated on [0, 1], each with an equal time share.
    pub control: ControlPath,
    pub predicted_endpoint: ChartPoint,
    pub endpoint_error: f64,
    /// `sum |u_I|^(2/(i+1))`
    pub cost_bound: f64,
    pub segments: usize,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteerFailure {
    pub reason: String,
    pub best_error: f64,
    pub max_segments: usize,
    pub residual_history: Vec<f64>,
}

impl fmt::Display for SteerFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (best endpoint error {:e} with up to {} segments)",
            self.reason, self.best_error, self.max_segments
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostCertificate {
    pub squared_length: f64,
    pub bound: f64,
    pub ratio: f64,
}

fn motion_arcs(model: &Model, word: &[usize], u: &[f64]) -> Result<Vec<ControlPath>> {
    check_dim("bracket amplitude", model.control_dim(), u.len())?;
    check_finite("bracket amplitude", u)?;
    let r = norm(u);
    if r == 0.0 {
        return Ok(Vec::new());
    }
    if word.is_empty() {
        return Ok(vec![arc(u)]);
    }
    let i = word.len() as f64;
    let t = r.powf(1.0 / (i + 1.0));
    let scale = r.powf(i / (i + 1.0));
    let direction: Vec<f64> = u.iter().map(|v| v / scale).collect();
    let psi = commutator_arcs(model, word, t)?;
    Ok(group_commutator(vec![arc(&direction)], psi))
}

/// Horizontal control realising `Phi_I(u)`, or `None` for `u = 0`.
pub fn bracket_motion_path(model: &Model, word: &[usize], u: &[f64]) -> Result<Option<ControlPath>> {
    let arcs = motion_arcs(model, word, u)?;
    if arcs.is_empty() {
        return Ok(None);
    }
    Ok(Some(ControlPath::concat(&arcs)?))
}

/// `Phi_I(u)(q)`.
pub fn bracket_motion(model: &Model, word: &[usize], u: &[f64], q: &[f64]) -> Result<ChartPoint> {
    check_dim("chart point", model.dim(), q.len())?;
    match bracket_motion_path(model, word, u)? {
        None => Ok(ChartPoint::from(q)),
        Some(path) => Dynamics::new(model).endpoint(q, &path),
    }
}

/// First-order prediction `[X(u), X_I](q)` (or `X(u)(q)` for the empty word).
pub fn bracket_motion_prediction(model: &Model, word: &[usize], u: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    check_dim("bracket amplitude", model.control_dim(), u.len())?;
    if word.is_empty() {
        return model.anchor_apply(q, u);
    }
    let xi = word_field(model, word)?;
    let mut out = vec![0.0; model.dim()];
    for (a, &ua) in u.iter().enumerate() {
        if ua != 0.0 {
            model.frame()[a].bracket(&xi).add_eval_into(q, ua, &mut out);
        }
    }
    Ok(out)
}

struct Problem<'a> {
    model: &'a Model,
    words: &'a [Word],
    dynamics: Dynamics<'a>,
}

impl Problem<'_> {
    fn unknowns(&self) -> usize {
        self.words.len() * self.model.control_dim()
    }

    fn arcs(&self, x: &[f64]) -> Result<(Vec<ControlPath>, Vec<PlanStep>)> {
        let h = self.model.control_dim();
        let mut arcs = Vec::new();
        let mut steps = Vec::new();
        for (k, w) in self.words.iter().enumerate() {
            let amp = &x[k * h..(k + 1) * h];
            let a = motion_arcs(self.model, w, amp)?;
            if a.is_empty() {
                continue;
            }
            steps.push(PlanStep {
                word: w.clone(),
                amplitude: amp.to_vec(),
                arcs: a.len(),
            });
            arcs.extend(a);
        }
        Ok((arcs, steps))
    }

    fn eval(&self, q: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let (arcs, _) = self.arcs(x)?;
        if arcs.is_empty() {
            return Ok(q.to_vec());
        }
        Ok(self.dynamics.endpoint(q, &ControlPath::concat(&arcs)?)?.into_inner())
    }

    /// `dPhi(0)` assembled from brackets at `q`.
    fn linearisation(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.model.dim();
        let h = self.model.control_dim();
        let mut jac = DMatrix::zeros(n, self.unknowns());
        let mut e = vec![0.0; h];
        for (k, w) in self.words.iter().enumerate() {
            for a in 0..h {
                e.fill(0.0);
                e[a] = 1.0;
                let col = bracket_motion_prediction(self.model, w, &e, q)?;
                for i in 0..n {
                    jac[(i, k * h + a)] = col[i];
                }
            }
        }
        Ok(jac)
    }

    fn fd_jacobian(&self, q: &[f64], x: &[f64], f0: &[f64], rel: f64) -> Result<DMatrix<f64>> {
        let n = self.model.dim();
        let step = rel * norm(x).max(1e-8);
        let mut jac = DMatrix::zeros(n, x.len());
        let mut xp = x.to_vec();
        for j in 0..x.len() {
            xp[j] = x[j] + step;
            let f = self.eval(q, &xp)?;
            xp[j] = x[j];
            for i in 0..n {
                jac[(i, j)] = (f[i] - f0[i]) / step;
            }
        }
        Ok(jac)
    }

    /// Gauss-Newton from the bracket linearisation; `Ok(Err(history))` on stall.
    fn solve(&self, q: &[f64], target: &[f64], opts: &SteerOptions) -> Result<std::result::Result<(Vec<f64>, usize), Vec<f64>>> {
        let delta: Vec<f64> = target.iter().zip(q).map(|(a, b)| a - b).collect();
        let j0 = self.linearisation(q)?;
        let mut x: Vec<f64> = pinv_solve(&j0, &DVector::from_vec(delta), 1e-10).iter().copied().collect();
        let mut f = self.eval(q, &x)?;
        let mut err = dist(&f, target);
        let mut history = vec![err];
        for it in 0..opts.max_iter {
            if err <= opts.tol {
                return Ok(Ok((x, it)));
            }
            let jac = self.fd_jacobian(q, &x, &f, opts.fd_step)?;
            let r: Vec<f64> = target.iter().zip(&f).map(|(a, b)| a - b).collect();
            let dx = pinv_solve(&jac, &DVector::from_vec(r), 1e-10);
            let mut alpha = 1.0;
            let mut improved = false;
            for _ in 0..30 {
                let trial: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, b)| a + alpha * b).collect();
                let ft = self.eval(q, &trial)?;
                let et = dist(&ft, target);
                if et < err {
                    x = trial;
                    f = ft;
                    err = et;
                    improved = true;
                    break;
                }
                alpha *= 0.5;
            }
            history.push(err);
            if !improved {
                return Ok(Err(history));
            }
        }
        if err <= opts.tol {
            Ok(Ok((x, opts.max_iter)))
        } else {
            Ok(Err(history))
        }
    }
}

/// Steers `q0` to `q1` with the given bracket words, subdividing the chart
/// segment into 2, 4, ... pieces when Gauss-Newton stalls.
pub fn steer(model: &Model, q0: &[f64], q1: &[f64], words: &[Word], opts: &SteerOptions) -> Result<SteeringPlan> {
    check_dim("initial point", model.dim(), q0.len())?;
    check_dim("target point", model.dim(), q1.len())?;
    check_finite("initial point", q0)?;
    check_finite("target point", q1)?;
    if words.is_empty() {
        return Err(Error::InvalidArgument("steering needs at least one bracket word".into()));
    }
    for w in words {
        if !w.is_empty() {
            word_field(model, w)?;
        }
    }
    let problem = Problem {
        model,
        words,
        dynamics: Dynamics::new(model),
    };
    if q0 == q1 {
        return Ok(SteeringPlan {
            q0: ChartPoint::from(q0),
            target: ChartPoint::from(q1),
            steps: Vec::new(),
            control: ControlPath::zeros(1, model.control_dim()),
            predicted_endpoint: ChartPoint::from(q0),
            endpoint_error: 0.0,
            cost_bound: 0.0,
            segments: 0,
            iterations: 0,
        });
    }
    let mut best_error = f64::INFINITY;
    let mut last_history = Vec::new();
    let mut segments = 1;
    while segments <= opts.max_segments.max(1) {
        match steer_segments(&problem, q0, q1, segments, opts)? {
            Ok(plan) => return Ok(plan),
            Err((e, history)) => {
                log::debug!("steering with {segments} segment(s) stalled at {e:e}");
                best_error = best_error.min(e);
                last_history = history;
            }
        }
        segments *= 2;
    }
    Err(Error::Steering(Box::new(SteerFailure {
        reason: "Gauss-Newton stalled".into(),
        best_error,
        max_segments: opts.max_segments,
        residual_history: last_history,
    })))
}

type SegmentOutcome = std::result::Result<SteeringPlan, (f64, Vec<f64>)>;

fn steer_segments(problem: &Problem<'_>, q0: &[f64], q1: &[f64], segments: usize, opts: &SteerOptions) -> Result<SegmentOutcome> {
    let mut q = q0.to_vec();
    let mut arcs = Vec::new();
    let mut steps = Vec::new();
    let mut iterations = 0;
    for s in 1..=segments {
        let frac = s as f64 / segments as f64;
        let waypoint: Vec<f64> = q0.iter().zip(q1).map(|(a, b)| a + frac * (b - a)).collect();
        match problem.solve(&q, &waypoint, opts)? {
            Ok((x, its)) => {
                iterations += its;
                let (a, st) = problem.arcs(&x)?;
                if !a.is_empty() {
                    q = problem.dynamics.endpoint(&q, &ControlPath::concat(&a)?)?.into_inner();
                }
                arcs.extend(a);
                steps.extend(st);
            }
            Err(history) => {
                let e = history.iter().copied().fold(f64::INFINITY, f64::min);
                return Ok(Err((e, history)));
            }
        }
    }
    let control = if arcs.is_empty() {
        ControlPath::zeros(1, problem.model.control_dim())
    } else {
        ControlPath::concat(&arcs)?
    };
    let predicted = problem.dynamics.endpoint(q0, &control)?;
    let endpoint_error = dist(&predicted, q1);
    let cost_bound = steps
        .iter()
        .map(|s| norm(&s.amplitude).powf(2.0 / (s.word.len() as f64 + 1.0)))
        .sum();
    Ok(Ok(SteeringPlan {
        q0: ChartPoint::from(q0),
        target: ChartPoint::from(q1),
        steps,
        control,
        predicted_endpoint: predicted,
        endpoint_error,
        cost_bound,
        segments,
        iterations,
    }))
}

/// Measured squared length of the plan against its bracket cost bound.
pub fn steering_cost_certificate(model: &Model, plan: &SteeringPlan) -> Result<CostCertificate> {
    let length = Dynamics::new(model).length(&plan.q0, &plan.control)?;
    let squared_length = length * length;
    let ratio = if squared_length == 0.0 && plan.cost_bound == 0.0 {
        1.0
    } else {
        squared_length / plan.cost_bound
    };
    Ok(CostCertificate {
        squared_length,
        bound: plan.cost_bound,
        ratio,
    })
}
