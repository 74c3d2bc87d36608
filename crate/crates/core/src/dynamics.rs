//! Horizontal systems `q' = xi_q u` driven by piecewise-constant controls on a
//! uniform grid over [0, 1]: trajectories, the endpoint map, its differential
//! (variational equation) and its adjoint (backward costate equation).
//!
//! Integration is classical RK4 with `substeps` steps per control interval.
//! The backward sweep evaluates the state at half steps by cubic Hermite
//! interpolation of the stored forward nodes, and interval averages of
//! `xi_q^* p` are taken with Simpson's rule, so the discrete adjoint identity
//! `<dE(u) du, p1> = <du, dE(u)^* p1>` holds to fourth order in the step.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::{axpy, dot, norm};
use crate::model::{ChartPoint, Covector, Model};

pub const DEFAULT_STEPS: usize = 256;
pub const DEFAULT_SUBSTEPS: usize = 4;
/// Any state norm above this aborts integration.
pub const BLOWUP_NORM: f64 = 1e12;

/// Piecewise-constant control on `steps` uniform intervals of [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ControlPathRepr", into = "ControlPathRepr")]
pub struct ControlPath {
    steps: usize,
    dim: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlPathRepr {
    values: Vec<Vec<f64>>,
}

impl TryFrom<ControlPathRepr> for ControlPath {
    type Error = Error;
    fn try_from(r: ControlPathRepr) -> Result<Self> {
        ControlPath::from_rows(r.values)
    }
}

impl From<ControlPath> for ControlPathRepr {
    fn from(c: ControlPath) -> Self {
        ControlPathRepr {
            values: c.rows().map(<[f64]>::to_vec).collect(),
        }
    }
}

impl ControlPath {
    pub fn new(steps: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("a control path needs at least one step".into()));
        }
        check_dim("control path values", steps * dim, values.len())?;
        check_finite("control path", &values)?;
        Ok(Self { steps, dim, values })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let steps = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidArgument("control rows have unequal lengths".into()));
        }
        Self::new(steps, dim, rows.concat())
    }

    pub fn zeros(steps: usize, dim: usize) -> Self {
        assert!(steps > 0);
        Self {
            steps,
            dim,
            values: vec![0.0; steps * dim],
        }
    }

    pub fn constant(steps: usize, u: &[f64]) -> Self {
        assert!(steps > 0);
        Self {
            steps,
            dim: u.len(),
            values: u.repeat(steps),
        }
    }

    /// Samples `f(t)` at the left end `t_k = k / steps` of every interval.
    pub fn from_fn(steps: usize, dim: usize, mut f: impl FnMut(f64) -> Vec<f64>) -> Self {
        let mut values = Vec::with_capacity(steps * dim);
        for k in 0..steps {
            let row = f(k as f64 / steps as f64);
            assert_eq!(row.len(), dim);
            values.extend(row);
        }
        Self { steps, dim, values }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.dim.max(1))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Grid L^2 inner product `sum_k dt <u_k, v_k>`.
    pub fn dot(&self, other: &ControlPath) -> f64 {
        debug_assert_eq!(self.values.len(), other.values.len());
        self.dt() * dot(&self.values, &other.values)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, s: f64) -> ControlPath {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, s: f64, other: &ControlPath) {
        axpy(s, &other.values, &mut self.values);
    }

    pub fn same_grid(&self, other: &ControlPath) -> bool {
        self.steps == other.steps && self.dim == other.dim
    }

    /// Time reversal `t -> 1 - t` with negated control: retraces the curve.
    pub fn reversed(&self) -> ControlPath {
        let mut values = Vec::with_capacity(self.values.len());
        for k in (0..self.steps).rev() {
            values.extend(self.row(k).iter().map(|v| -v));
        }
        ControlPath {
            steps: self.steps,
            dim: self.dim,
            values,
        }
    }

    /// Each interval split into `factor` equal intervals; the same function of t.
    pub fn refined(&self, factor: usize) -> ControlPath {
        assert!(factor > 0);
        let mut values = Vec::with_capacity(self.values.len() * factor);
        for row in self.rows() {
            for _ in 0..factor {
                values.extend_from_slice(row);
            }
        }
        ControlPath {
            steps: self.steps * factor,
            dim: self.dim,
            values,
        }
    }

    /// Concatenation of horizontal curves: part i keeps its own step count and
    /// occupies a share `steps_i / total` of [0, 1], its control rescaled so
    /// the traced curve is unchanged.
    pub fn concat(parts: &[ControlPath]) -> Result<ControlPath> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let dim = first.dim;
        let total: usize = parts.iter().map(|p| p.steps).sum();
        let mut values = Vec::with_capacity(total * dim);
        for p in parts {
            check_dim("concatenated control dimension", dim, p.dim)?;
            let s = total as f64 / p.steps as f64;
            values.extend(p.values.iter().map(|v| v * s));
        }
        Ok(ControlPath {
            steps: total,
            dim,
            values,
        })
    }
}

/// States sampled at the control grid times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Row-major `(steps + 1) x n`.
    pub states: Vec<f64>,
    pub dim: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn initial(&self) -> ChartPoint {
        ChartPoint::from(self.state(0))
    }

    pub fn endpoint(&self) -> ChartPoint {
        ChartPoint::from(self.state(self.len() - 1))
    }
}

/// Costate samples at the control grid times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostatePath {
    pub times: Vec<f64>,
    pub covectors: Vec<f64>,
    pub dim: usize,
}

impl CostatePath {
    pub fn covector(&self, k: usize) -> &[f64] {
        &self.covectors[k * self.dim..(k + 1) * self.dim]
    }
}

/// Forward solution at every RK4 node.
#[derive(Clone, Debug)]
pub struct FinePath {
    dim: usize,
    steps: usize,
    substeps: usize,
    nodes: Vec<f64>,
}

impl FinePath {
    #[inline]
    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn endpoint(&self) -> &[f64] {
        self.node(self.steps * self.substeps)
    }

    pub fn substep(&self) -> f64 {
        1.0 / (self.steps * self.substeps) as f64
    }

    pub fn to_trajectory(&self) -> Trajectory {
        let m = self.steps;
        let mut states = Vec::with_capacity((m + 1) * self.dim);
        for k in 0..=m {
            states.extend_from_slice(self.node(k * self.substeps));
        }
        Trajectory {
            times: (0..=m).map(|k| k as f64 / m as f64).collect(),
            states,
            dim: self.dim,
        }
    }
}

/// Result of one backward costate sweep.
#[derive(Clone, Debug)]
pub struct CostateSweep {
    /// Costate at the grid times.
    pub path: CostatePath,
    /// Interval averages of `xi_{q(t)}^* p(t)`.
    pub dual: ControlPath,
}

/// Integrators for one model at a fixed number of RK4 substeps per interval.
#[derive(Clone, Copy, Debug)]
pub struct Dynamics<'a> {
    model: &'a Model,
    substeps: usize,
}

fn blowup(time: f64, q: &[f64]) -> Option<Error> {
    let nq = norm(q);
    if !nq.is_finite() || nq > BLOWUP_NORM {
        Some(Error::BlowUp { time, norm: nq })
    } else {
        None
    }
}

impl<'a> Dynamics<'a> {
    pub fn new(model: &'a Model) -> Self {
        Self::with_substeps(model, DEFAULT_SUBSTEPS)
    }

    pub fn with_substeps(model: &'a Model, substeps: usize) -> Self {
        Self {
            model,
            substeps: substeps.max(1),
        }
    }

    pub fn model(&self) -> &'a Model {
        self.model
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    fn check(&self, q0: &[f64], u: &ControlPath) -> Result<()> {
        check_dim("initial point", self.model.dim(), q0.len())?;
        check_finite("initial point", q0)?;
        check_dim("control dimension", self.model.control_dim(), u.dim())
    }

    /// RK4 solution at every substep node.
    pub fn integrate(&self, q0: &[f64], u: &ControlPath) -> Result<FinePath> {
        self.check(q0, u)?;
        let model = self.model;
        let n = model.dim();
        let (m, s) = (u.steps(), self.substeps);
        let h = 1.0 / (m * s) as f64;
        let mut nodes = Vec::with_capacity((m * s + 1) * n);
        nodes.extend_from_slice(q0);
        let mut q = q0.to_vec();
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
            (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for k in 0..m {
            let uk = u.row(k);
            if uk.iter().all(|&v| v == 0.0) {
                for _ in 0..s {
                    nodes.extend_from_slice(&q);
                }
                continue;
            }
            for j in 0..s {
                model.anchor_apply_into(&q, uk, &mut k1);
                for i in 0..n {
                    tmp[i] = q[i] + 0.5 * h * k1[i];
                }
                model.anchor_apply_into(&tmp, uk, &mut k2);
                for i in 0..n {
                    tmp[i] = q[i] + 0.5 * h * k2[i];
                }
                model.anchor_apply_into(&tmp, uk, &mut k3);
                for i in 0..n {
                    tmp[i] = q[i] + h * k3[i];
                }
                model.anchor_apply_into(&tmp, uk, &mut k4);
                for i in 0..n {
                    q[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                if let Some(e) = blowup(((k * s + j + 1) as f64) * h, &q) {
                    return Err(e);
                }
                nodes.extend_from_slice(&q);
            }
        }
        Ok(FinePath {
            dim: n,
            steps: m,
            substeps: s,
            nodes,
        })
    }

    pub fn trajectory(&self, q0: &[f64], u: &ControlPath) -> Result<Trajectory> {
        Ok(self.integrate(q0, u)?.to_trajectory())
    }

    pub fn endpoint(&self, q0: &[f64], u: &ControlPath) -> Result<ChartPoint> {
        Ok(ChartPoint::from(self.integrate(q0, u)?.endpoint()))
    }

    /// Hermite midpoint of the state on substep `[a, a + 1]` of interval `k`.
    #[inline]
    fn state_midpoint(&self, fine: &FinePath, a: usize, uk: &[f64], out: &mut [f64], fa: &mut [f64], fb: &mut [f64]) {
        let h = fine.substep();
        let (qa, qb) = (fine.node(a), fine.node(a + 1));
        self.model.anchor_apply_into(qa, uk, fa);
        self.model.anchor_apply_into(qb, uk, fb);
        for i in 0..out.len() {
            out[i] = 0.5 * (qa[i] + qb[i]) + h / 8.0 * (fa[i] - fb[i]);
        }
    }

    /// Simpson integral over each interval of `f(q(t), u_k)`, divided by dt.
    fn interval_average(
        &self,
        fine: &FinePath,
        u: &ControlPath,
        mut f: impl FnMut(&[f64], &[f64]) -> f64,
    ) -> f64 {
        let n = self.model.dim();
        let s = self.substeps;
        let (mut mid, mut fa, mut fb) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut total = 0.0;
        for k in 0..u.steps() {
            let uk = u.row(k);
            for j in 0..s {
                let a = k * s + j;
                self.state_midpoint(fine, a, uk, &mut mid, &mut fa, &mut fb);
                total += (f(fine.node(a), uk) + 4.0 * f(&mid, uk) + f(fine.node(a + 1), uk)) / 6.0;
            }
        }
        total / (u.steps() * s) as f64
    }

    /// `1/2 int g(u, u) dt`.
    pub fn action_on(&self, fine: &FinePath, u: &ControlPath) -> f64 {
        if self.model.has_constant_metric() {
            let dt = u.dt();
            return 0.5 * dt * u.rows().map(|r| self.model.metric_inner(&[], r, r)).sum::<f64>();
        }
        let model = self.model;
        0.5 * self.interval_average(fine, u, |q, uk| model.metric_inner(q, uk, uk))
    }

    /// `int sqrt(g(u, u)) dt`.
    pub fn length_on(&self, fine: &FinePath, u: &ControlPath) -> f64 {
        if self.model.has_constant_metric() {
            let dt = u.dt();
            return dt
                * u.rows()
                    .map(|r| self.model.metric_inner(&[], r, r).max(0.0).sqrt())
                    .sum::<f64>();
        }
        let model = self.model;
        self.interval_average(fine, u, |q, uk| model.metric_inner(q, uk, uk).max(0.0).sqrt())
    }

    pub fn action(&self, q0: &[f64], u: &ControlPath) -> Result<f64> {
        if self.model.has_constant_metric() {
            self.check(q0, u)?;
            let dummy = FinePath { dim: 0, steps: 0, substeps: 0, nodes: vec![] };
            return Ok(self.action_on(&dummy, u));
        }
        let fine = self.integrate(q0, u)?;
        Ok(self.action_on(&fine, u))
    }

    pub fn length(&self, q0: &[f64], u: &ControlPath) -> Result<f64> {
        if self.model.has_constant_metric() {
            self.check(q0, u)?;
            let dummy = FinePath { dim: 0, steps: 0, substeps: 0, nodes: vec![] };
            return Ok(self.length_on(&dummy, u));
        }
        let fine = self.integrate(q0, u)?;
        Ok(self.length_on(&fine, u))
    }

    /// `dE(u) du`: integrates the variational equation alongside the state.
    pub fn endpoint_diff(&self, q0: &[f64], u: &ControlPath, du: &ControlPath) -> Result<Vec<f64>> {
        self.check(q0, u)?;
        if !u.same_grid(du) {
            return Err(Error::InvalidArgument("control and variation grids differ".into()));
        }
        let model = self.model;
        let n = model.dim();
        let (m, s) = (u.steps(), self.substeps);
        let h = 1.0 / (m * s) as f64;
        let mut q = q0.to_vec();
        let mut d = vec![0.0; n];
        let mut kq = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut kd = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let (mut tq, mut td, mut scratch) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let rhs = |q: &[f64], d: &[f64], uk: &[f64], duk: &[f64], oq: &mut [f64], od: &mut [f64], scratch: &mut [f64]| {
            model.anchor_apply_into(q, uk, oq);
            model.anchor_deriv_into(q, uk, d, od);
            model.anchor_apply_into(q, duk, scratch);
            for i in 0..od.len() {
                od[i] += scratch[i];
            }
        };
        for k in 0..m {
            let (uk, duk) = (u.row(k), du.row(k));
            for j in 0..s {
                rhs(&q, &d, uk, duk, &mut kq[0], &mut kd[0], &mut scratch);
                for stage in 1..4 {
                    let c = if stage == 3 { h } else { 0.5 * h };
                    for i in 0..n {
                        tq[i] = q[i] + c * kq[stage - 1][i];
                        td[i] = d[i] + c * kd[stage - 1][i];
                    }
                    let (lo, hi) = kq.split_at_mut(stage);
                    let _ = lo;
                    let (dlo, dhi) = kd.split_at_mut(stage);
                    let _ = dlo;
                    rhs(&tq, &td, uk, duk, &mut hi[0], &mut dhi[0], &mut scratch);
                }
                for i in 0..n {
                    q[i] += h / 6.0 * (kq[0][i] + 2.0 * kq[1][i] + 2.0 * kq[2][i] + kq[3][i]);
                    d[i] += h / 6.0 * (kd[0][i] + 2.0 * kd[1][i] + 2.0 * kd[2][i] + kd[3][i]);
                }
                if let Some(e) = blowup(((k * s + j + 1) as f64) * h, &q) {
                    return Err(e);
                }
            }
        }
        Ok(d)
    }

    /// Backward sweep of `p' = -(d_q(xi_q u))^* p + (lambda/2) d_q g(u, u)` from
    /// `p(1) = p1` along a stored forward solution.
    pub fn costate_on(&self, fine: &FinePath, u: &ControlPath, p1: &[f64], lambda: f64) -> Result<CostateSweep> {
        let model = self.model;
        check_dim("terminal covector", model.dim(), p1.len())?;
        check_finite("terminal covector", p1)?;
        let n = model.dim();
        let hd = model.control_dim();
        let (m, s) = (u.steps(), self.substeps);
        let h = fine.substep();
        let with_metric = lambda != 0.0 && !model.has_constant_metric();

        let mut scratch = vec![0.0; n];
        let mut rhs = |q: &[f64], p: &[f64], uk: &[f64], out: &mut [f64]| {
            model.anchor_deriv_adjoint_into(q, uk, p, out);
            out.iter_mut().for_each(|v| *v = -*v);
            if with_metric {
                model.metric_grad_into(q, uk, uk, &mut scratch);
                axpy(0.5 * lambda, &scratch, out);
            }
        };

        let mut grid = vec![0.0; (m + 1) * n];
        grid[m * n..].copy_from_slice(p1);
        let mut dual = ControlPath::zeros(m, hd);

        let mut p_b = p1.to_vec();
        let mut p_a = vec![0.0; n];
        let mut f_b = vec![0.0; n];
        let mut f_a = vec![0.0; n];
        let (mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let (mut q_mid, mut g_a, mut g_b) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut p_mid = vec![0.0; n];
        let (mut w_a, mut w_mid, mut w_b) = (vec![0.0; hd], vec![0.0; hd], vec![0.0; hd]);

        for k in (0..m).rev() {
            let uk = u.row(k);
            let acc = dual.row_mut(k);
            let top = (k + 1) * s;
            rhs(fine.node(top), &p_b, uk, &mut f_b);
            model.anchor_adjoint_into(fine.node(top), &p_b, &mut w_b);
            for j in (0..s).rev() {
                let a = k * s + j;
                let (q_a, q_b) = (fine.node(a), fine.node(a + 1));
                self.state_midpoint(fine, a, uk, &mut q_mid, &mut g_a, &mut g_b);
                for i in 0..n {
                    tmp[i] = p_b[i] - 0.5 * h * f_b[i];
                }
                rhs(&q_mid, &tmp, uk, &mut k2);
                for i in 0..n {
                    tmp[i] = p_b[i] - 0.5 * h * k2[i];
                }
                rhs(&q_mid, &tmp, uk, &mut k3);
                for i in 0..n {
                    tmp[i] = p_b[i] - h * k3[i];
                }
                rhs(q_a, &tmp, uk, &mut k4);
                for i in 0..n {
                    p_a[i] = p_b[i] - h / 6.0 * (f_b[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                if let Some(e) = blowup(a as f64 * h, &p_a) {
                    return Err(e);
                }
                rhs(q_a, &p_a, uk, &mut f_a);
                for i in 0..n {
                    p_mid[i] = 0.5 * (p_a[i] + p_b[i]) + h / 8.0 * (f_a[i] - f_b[i]);
                }
                model.anchor_adjoint_into(&q_mid, &p_mid, &mut w_mid);
                model.anchor_adjoint_into(q_a, &p_a, &mut w_a);
                for c in 0..hd {
                    acc[c] += (w_a[c] + 4.0 * w_mid[c] + w_b[c]) / (6.0 * s as f64);
                }
                let _ = q_b;
                std::mem::swap(&mut p_a, &mut p_b);
                std::mem::swap(&mut f_a, &mut f_b);
                std::mem::swap(&mut w_a, &mut w_b);
            }
            grid[k * n..(k + 1) * n].copy_from_slice(&p_b);
        }
        Ok(CostateSweep {
            path: CostatePath {
                times: (0..=m).map(|k| k as f64 / m as f64).collect(),
                covectors: grid,
                dim: n,
            },
            dual,
        })
    }

    /// Interval averages of `g_{q(t)}(u_k, .)`.
    pub fn lowered_on(&self, fine: &FinePath, u: &ControlPath) -> ControlPath {
        let model = self.model;
        let hd = model.control_dim();
        let mut out = ControlPath::zeros(u.steps(), hd);
        if model.has_constant_metric() {
            for k in 0..u.steps() {
                let uk = u.row(k).to_vec();
                model.metric_lower_into(&[], &uk, out.row_mut(k));
            }
            return out;
        }
        let n = model.dim();
        let s = self.substeps;
        let (mut mid, mut fa, mut fb) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let (mut la, mut lm, mut lb) = (vec![0.0; hd], vec![0.0; hd], vec![0.0; hd]);
        for k in 0..u.steps() {
            let uk = u.row(k).to_vec();
            let row = out.row_mut(k);
            for j in 0..s {
                let a = k * s + j;
                self.state_midpoint(fine, a, &uk, &mut mid, &mut fa, &mut fb);
                model.metric_lower_into(fine.node(a), &uk, &mut la);
                model.metric_lower_into(&mid, &uk, &mut lm);
                model.metric_lower_into(fine.node(a + 1), &uk, &mut lb);
                for c in 0..hd {
                    row[c] += (la[c] + 4.0 * lm[c] + lb[c]) / (6.0 * s as f64);
                }
            }
        }
        out
    }

    /// L^2 representative of `lambda dA(u) - dE(u)^* p1` on the control grid.
    pub fn extremal_defect_on(&self, fine: &FinePath, u: &ControlPath, p1: &[f64], lambda: f64) -> Result<ControlPath> {
        let sweep = self.costate_on(fine, u, p1, lambda)?;
        let mut r = sweep.dual.scaled(-1.0);
        if lambda != 0.0 {
            r.add_scaled(lambda, &self.lowered_on(fine, u));
        }
        Ok(r)
    }

    /// L^2 representative of `dA(u)`.
    pub fn action_gradient_on(&self, fine: &FinePath, u: &ControlPath) -> Result<ControlPath> {
        if self.model.has_constant_metric() {
            return Ok(self.lowered_on(fine, u));
        }
        self.extremal_defect_on(fine, u, &vec![0.0; self.model.dim()], 1.0)
    }

    pub fn endpoint_adjoint(&self, q0: &[f64], u: &ControlPath, p1: &[f64]) -> Result<(CostatePath, ControlPath)> {
        let fine = self.integrate(q0, u)?;
        let sweep = self.costate_on(&fine, u, p1, 0.0)?;
        Ok((sweep.path, sweep.dual))
    }

    /// Grid L^2 norm of `lambda g(u, .) - xi^* p` with p the lambda-costate.
    pub fn extremal_residual(&self, q0: &[f64], u: &ControlPath, p1: &[f64], lambda: f64) -> Result<f64> {
        if lambda != 0.0 && lambda != 1.0 {
            return Err(Error::InvalidArgument(format!("lambda must be 0 or 1, got {lambda}")));
        }
        let fine = self.integrate(q0, u)?;
        Ok(self.extremal_defect_on(&fine, u, p1, lambda)?.norm())
    }

    /// Columns `dE(u)^* e_i`, i = 0..n, along a stored forward solution.
    pub fn adjoint_columns_on(&self, fine: &FinePath, u: &ControlPath) -> Result<Vec<ControlPath>> {
        let n = self.model.dim();
        let mut e = vec![0.0; n];
        let mut cols = Vec::with_capacity(n);
        for i in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[i] = 1.0;
            cols.push(self.costate_on(fine, u, &e, 0.0)?.dual);
        }
        Ok(cols)
    }
}

/// Gram matrix `<c_i, c_j>` of adjoint columns.
pub fn gram(cols: &[ControlPath]) -> nalgebra::DMatrix<f64> {
    let n = cols.len();
    let mut g = nalgebra::DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = cols[i].dot(&cols[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

// ---- free-function front doors with default discretisation -----------------

pub fn trajectory(model: &Model, q0: &[f64], u: &ControlPath, steps_per_interval: usize) -> Result<Trajectory> {
    if steps_per_interval == 0 {
        return Err(Error::InvalidArgument("steps_per_interval must be at least 1".into()));
    }
    check_finite("control path", u.values())?;
    Dynamics::with_substeps(model, steps_per_interval).trajectory(q0, u)
}

pub fn endpoint(model: &Model, q0: &[f64], u: &ControlPath) -> Result<ChartPoint> {
    Dynamics::new(model).endpoint(q0, u)
}

pub fn action(model: &Model, q0: &[f64], u: &ControlPath) -> Result<f64> {
    Dynamics::new(model).action(q0, u)
}

pub fn length(model: &Model, q0: &[f64], u: &ControlPath) -> Result<f64> {
    Dynamics::new(model).length(q0, u)
}

pub fn endpoint_diff(model: &Model, q0: &[f64], u: &ControlPath, du: &ControlPath) -> Result<Vec<f64>> {
    Dynamics::new(model).endpoint_diff(q0, u, du)
}

pub fn endpoint_adjoint(model: &Model, q0: &[f64], u: &ControlPath, p1: &Covector) -> Result<(CostatePath, ControlPath)> {
    Dynamics::new(model).endpoint_adjoint(q0, u, p1)
}

pub fn extremal_residual(model: &Model, q0: &[f64], u: &ControlPath, p1: &Covector, lambda: u8) -> Result<f64> {
    Dynamics::new(model).extremal_residual(q0, u, p1, lambda as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Model;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn circle(steps: usize) -> ControlPath {
        ControlPath::from_fn(steps, 2, |t| vec![(2.0 * PI * t).cos(), (2.0 * PI * t).sin()])
    }

    #[test]
    fn straight_line_endpoint() {
        let m = Model::heisenberg3();
        let u = ControlPath::constant(DEFAULT_STEPS, &[1.0, 0.0]);
        let q1 = endpoint(&m, &[0.0; 3], &u).unwrap();
        assert_relative_eq!(q1[0], 1.0, epsilon = 1e-14);
        assert_eq!(q1[1], 0.0);
        assert_eq!(q1[2], 0.0);
    }

    #[test]
    fn zero_control_is_constant() {
        let m = Model::engel();
        let q0 = [0.3, -0.1, 2.0, 5.0];
        let traj = trajectory(&m, &q0, &ControlPath::zeros(10, 2), 3).unwrap();
        for k in 0..traj.len() {
            assert_eq!(traj.state(k), &q0);
        }
    }

    #[test]
    fn circle_encloses_polygon_area() {
        // piecewise-constant circle control traces a regular m-gon of side 1/m;
        // z equals its signed area 1 / (4 m tan(pi / m))
        let m = Model::heisenberg3();
        for steps in [16usize, 256] {
            let q1 = endpoint(&m, &[0.0; 3], &circle(steps)).unwrap();
            let area = 1.0 / (4.0 * steps as f64 * (PI / steps as f64).tan());
            assert!(q1[0].abs() < 1e-13 && q1[1].abs() < 1e-13);
            assert_relative_eq!(q1[2], area, max_relative = 1e-12);
        }
    }

    #[test]
    fn reversal_returns_home() {
        let m = Model::engel();
        let u = ControlPath::from_fn(64, 2, |t| vec![(3.0 * t).sin() + 0.2, t * t - 0.4]);
        let there_and_back = ControlPath::concat(&[u.clone(), u.reversed()]).unwrap();
        let q0 = [0.1, 0.2, -0.3, 0.4];
        let q = endpoint(&m, &q0, &there_and_back).unwrap();
        for i in 0..4 {
            assert!((q[i] - q0[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn action_and_length_of_unit_control() {
        let m = Model::heisenberg3();
        let u = ControlPath::constant(32, &[1.0, 0.0]);
        assert_relative_eq!(action(&m, &[0.0; 3], &u).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(length(&m, &[0.0; 3], &u).unwrap(), 1.0, epsilon = 1e-15);
        let z = ControlPath::zeros(8, 2);
        assert_eq!(action(&m, &[0.0; 3], &z).unwrap(), 0.0);
        assert_eq!(length(&m, &[0.0; 3], &z).unwrap(), 0.0);
    }

    #[test]
    fn blow_up_reported() {
        // x' = x^2 u explodes before t = 1 from x = 10 with u = 1
        let f = crate::poly::PolyField::new(1, [(0, crate::poly::Poly::monomial(1.0, vec![(0, 2)]))]);
        let m = Model::from_frame("riccati", 1, vec![f], None).unwrap();
        let err = trajectory(&m, &[10.0], &ControlPath::constant(16, &[1.0]), 4).unwrap_err();
        match err {
            Error::BlowUp { time, .. } => assert!(time > 0.0 && time < 0.2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_substeps_rejected() {
        let m = Model::heisenberg3();
        assert!(trajectory(&m, &[0.0; 3], &ControlPath::zeros(4, 2), 0).is_err());
    }

    #[test]
    fn frozen_anchor_variation_at_zero_control() {
        let m = Model::heisenberg3();
        let q0 = [0.5, -1.0, 0.0];
        let u = ControlPath::zeros(16, 2);
        let du = ControlPath::from_fn(16, 2, |t| vec![t, 1.0 - 2.0 * t]);
        let d = endpoint_diff(&m, &q0, &u, &du).unwrap();
        // int xi_{q0} du dt with int t = 1/2 (left samples: sum k/16^2 = 15/32)
        let a = 15.0 / 32.0;
        let b = 1.0 - 2.0 * a;
        let expected = m.anchor_apply(&q0, &[a, b]).unwrap();
        for i in 0..3 {
            assert_relative_eq!(d[i], expected[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn adjoint_of_zero_covector_is_zero() {
        let m = Model::heisenberg3();
        let u = circle(32);
        let (path, dual) = endpoint_adjoint(&m, &[0.0; 3], &u, &Covector::zeros(3)).unwrap();
        assert!(path.covectors.iter().all(|&v| v == 0.0));
        assert!(dual.is_zero());
    }

    #[test]
    fn costate_z_component_constant_on_straight_line() {
        let m = Model::heisenberg3();
        let u = ControlPath::constant(32, &[1.0, 0.0]);
        let (path, _) = endpoint_adjoint(&m, &[0.0; 3], &u, &Covector::new(vec![0.0, 0.0, 1.0])).unwrap();
        for k in 0..path.times.len() {
            assert_relative_eq!(path.covector(k)[2], 1.0, epsilon = 1e-14);
            // p_y' = -(x/2) p_z u... hand solution: p_x = 0, p_y = (1 - t) / 2 * ... see below
        }
        // p_y(t) = -(1/2) int_t^1 u p_z ds * (-1)? With y' = 0, x' = 1:
        // d/dt p_y = -(d_y(xi u))^* p = -(-1/2 u p_z) = 1/2 -> p_y(t) = (t - 1) / 2
        for k in 0..path.times.len() {
            let t = path.times[k];
            assert_relative_eq!(path.covector(k)[1], 0.5 * (t - 1.0), epsilon = 1e-13);
            assert_relative_eq!(path.covector(k)[0], 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_control_residuals() {
        let m = Model::heisenberg3();
        let u = ControlPath::zeros(16, 2);
        let zero = Covector::zeros(3);
        assert_eq!(extremal_residual(&m, &[0.0; 3], &u, &zero, 0).unwrap(), 0.0);
        let p = Covector::new(vec![0.3, -0.4, 2.0]);
        let r = extremal_residual(&m, &[0.0; 3], &u, &p, 1).unwrap();
        assert_relative_eq!(r, 0.5, epsilon = 1e-14);
        assert!(Dynamics::new(&m).extremal_residual(&[0.0; 3], &u, &p, 0.5).is_err());
    }

    #[test]
    fn control_path_json_shape() {
        let u = ControlPath::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let text = serde_json::to_string(&u).unwrap();
        assert_eq!(text, r#"{"values":[[1.0,2.0],[3.0,4.0]]}"#);
        let back: ControlPath = serde_json::from_str(&text).unwrap();
        assert_eq!(back, u);
        assert!(serde_json::from_str::<ControlPath>(r#"{"values":[]}"#).is_err());
    }
}
