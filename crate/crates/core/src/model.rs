//! Chart-level sub-Riemannian structures: an anchor `xi_q : R^h -> R^n`
//! given by a frame of horizontal fields, and a fibre metric `g_q` on R^h.
//!
//! All operations are pure; a [`Model`] is immutable once built and can be
//! shared between worker threads.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::poly::{Monomial, Poly, PolyField};

macro_rules! coord_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn new(coords: Vec<f64>) -> Self {
                Self(coords)
            }

            pub fn zeros(len: usize) -> Self {
                Self(vec![0.0; len])
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|x| x.is_finite())
            }

            pub fn norm(&self) -> f64 {
                crate::linalg::norm(&self.0)
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }
        }

        impl std::ops::Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }

        impl From<&[f64]> for $name {
            fn from(v: &[f64]) -> Self {
                Self(v.to_vec())
            }
        }
    };
}

coord_newtype!(
    /// Chart coordinates of a point q.
    ChartPoint
);
coord_newtype!(
    /// Element of the control fibre in the model's trivialisation.
    ControlVector
);
coord_newtype!(
    /// Element of T*_q M in chart coordinates.
    Covector
);

/// Relative residual above which a tangent vector is treated as outside the
/// range of the anchor.
pub const RANGE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug)]
pub enum Metric {
    Identity,
    Constant {
        matrix: DMatrix<f64>,
        cholesky: DMatrix<f64>,
    },
    /// Symmetric matrix of polynomials; `grads[a][b]` lists `(j, d g_ab / d q_j)`.
    Polynomial {
        entries: Vec<Vec<Poly>>,
        grads: Vec<Vec<Vec<(usize, Poly)>>>,
    },
}

impl Metric {
    pub fn is_constant(&self) -> bool {
        !matches!(self, Metric::Polynomial { .. })
    }
}

/// A sub-Riemannian structure on one chart of R^n.
#[derive(Clone)]
pub struct Model {
    name: String,
    n: usize,
    fields: Vec<PolyField>,
    jacobians: Vec<Vec<(usize, usize, Poly)>>,
    metric: Metric,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("h", &self.fields.len())
            .finish()
    }
}

impl Model {
    /// Builds a model from a horizontal frame and an optional polynomial metric
    /// (identity when `None`).
    pub fn from_frame(
        name: impl Into<String>,
        n: usize,
        fields: Vec<PolyField>,
        metric: Option<Vec<Vec<Poly>>>,
    ) -> Result<Self> {
        if n == 0 || fields.is_empty() {
            return Err(Error::ModelDefinition(
                "state and control dimensions must be positive".into(),
            ));
        }
        for (k, f) in fields.iter().enumerate() {
            if f.dim() != n {
                return Err(Error::ModelDefinition(format!(
                    "field {k} lives in dimension {}, expected {n}",
                    f.dim()
                )));
            }
        }
        let h = fields.len();
        let metric = match metric {
            None => Metric::Identity,
            Some(entries) => build_metric(n, h, entries)?,
        };
        let jacobians = fields.iter().map(PolyField::jacobian_entries).collect();
        let model = Self {
            name: name.into(),
            n,
            fields,
            jacobians,
            metric,
        };
        model.check_metric_samples(16, 0x5eed)?;
        Ok(model)
    }

    /// Heisenberg group on (x, y, z): X = dx - y/2 dz, Y = dy + x/2 dz.
    pub fn heisenberg3() -> Self {
        Self::heisenberg_product(1).renamed("heisenberg3")
    }

    /// N independent copies of the Heisenberg group on R^{3N}, block-diagonal
    /// anchor with coordinates (x_0, y_0, z_0, x_1, ...).
    pub fn heisenberg_product(copies: usize) -> Self {
        let n = 3 * copies;
        let mut fields = Vec::with_capacity(2 * copies);
        for c in 0..copies {
            let (x, y, z) = (3 * c, 3 * c + 1, 3 * c + 2);
            fields.push(PolyField::new(
                n,
                [(x, Poly::constant(1.0)), (z, Poly::linear(-0.5, y))],
            ));
            fields.push(PolyField::new(
                n,
                [(y, Poly::constant(1.0)), (z, Poly::linear(0.5, x))],
            ));
        }
        Self::from_frame(format!("heisenberg_product({copies})"), n, fields, None)
            .expect("built-in Heisenberg product is well formed")
    }

    /// Engel group on (x, y, z, w): X1 = dx, X2 = dy + x dz + x^2/2 dw.
    pub fn engel() -> Self {
        Self::engel_product(1).renamed("engel")
    }

    pub fn engel_product(copies: usize) -> Self {
        let n = 4 * copies;
        let mut fields = Vec::with_capacity(2 * copies);
        for c in 0..copies {
            let (x, y, z, w) = (4 * c, 4 * c + 1, 4 * c + 2, 4 * c + 3);
            fields.push(PolyField::coordinate(n, x));
            fields.push(PolyField::new(
                n,
                [
                    (y, Poly::constant(1.0)),
                    (z, Poly::linear(1.0, x)),
                    (w, Poly::monomial(0.5, vec![(x, 2)])),
                ],
            ));
        }
        Self::from_frame(format!("engel_product({copies})"), n, fields, None)
            .expect("built-in Engel product is well formed")
    }

    /// Truncated infinite Heisenberg group: coordinates (x_1, y_1, ..., x_N, y_N, z)
    /// with X_k = dx_k - y_k/2 dz and Y_k = dy_k + x_k/2 dz sharing one z.
    pub fn infinite_heisenberg_trunc(pairs: usize) -> Self {
        let n = 2 * pairs + 1;
        let z = n - 1;
        let mut fields = Vec::with_capacity(2 * pairs);
        for k in 0..pairs {
            let (x, y) = (2 * k, 2 * k + 1);
            fields.push(PolyField::new(
                n,
                [(x, Poly::constant(1.0)), (z, Poly::linear(-0.5, y))],
            ));
            fields.push(PolyField::new(
                n,
                [(y, Poly::constant(1.0)), (z, Poly::linear(0.5, x))],
            ));
        }
        Self::from_frame(format!("infinite_heisenberg_trunc({pairs})"), n, fields, None)
            .expect("built-in truncated Heisenberg group is well formed")
    }

    fn renamed(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// State dimension n.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Control dimension h.
    pub fn control_dim(&self) -> usize {
        self.fields.len()
    }

    /// The horizontal frame; field k is `xi_q e_k`.
    pub fn frame(&self) -> &[PolyField] {
        &self.fields
    }

    pub fn metric_kind(&self) -> &Metric {
        &self.metric
    }

    pub fn has_constant_metric(&self) -> bool {
        self.metric.is_constant()
    }

    fn check_point(&self, q: &[f64]) -> Result<()> {
        check_dim("chart point", self.n, q.len())?;
        check_finite("chart point", q)
    }

    fn check_control(&self, u: &[f64]) -> Result<()> {
        check_dim("control vector", self.control_dim(), u.len())?;
        check_finite("control vector", u)
    }

    // ---- anchor -------------------------------------------------------------

    /// Dense n x h matrix of xi_q.
    pub fn anchor(&self, q: &[f64]) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.control_dim());
        for (k, f) in self.fields.iter().enumerate() {
            for (i, p) in f.components() {
                a[(*i, k)] = p.eval(q);
            }
        }
        a
    }

    /// `xi_q u`.
    pub fn anchor_apply(&self, q: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_point(q)?;
        self.check_control(u)?;
        let mut out = vec![0.0; self.n];
        self.anchor_apply_into(q, u, &mut out);
        Ok(out)
    }

    /// Unchecked `out = xi_q u`.
    #[inline]
    pub fn anchor_apply_into(&self, q: &[f64], u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (f, &uk) in self.fields.iter().zip(u) {
            if uk != 0.0 {
                f.add_eval_into(q, uk, out);
            }
        }
    }

    /// `xi_q^* p`, the transpose action on covectors.
    pub fn anchor_adjoint(&self, q: &[f64], p: &[f64]) -> Result<Vec<f64>> {
        self.check_point(q)?;
        check_dim("covector", self.n, p.len())?;
        let mut out = vec![0.0; self.control_dim()];
        self.anchor_adjoint_into(q, p, &mut out);
        Ok(out)
    }

    #[inline]
    pub fn anchor_adjoint_into(&self, q: &[f64], p: &[f64], out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.fields) {
            *o = f.pair(q, p);
        }
    }

    /// Directional derivative `d_q(xi_q u) . dq`.
    pub fn anchor_deriv(&self, q: &[f64], u: &[f64], dq: &[f64]) -> Result<Vec<f64>> {
        self.check_point(q)?;
        self.check_control(u)?;
        check_dim("tangent direction", self.n, dq.len())?;
        let mut out = vec![0.0; self.n];
        self.anchor_deriv_into(q, u, dq, &mut out);
        Ok(out)
    }

    #[inline]
    pub fn anchor_deriv_into(&self, q: &[f64], u: &[f64], dq: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (jac, &uk) in self.jacobians.iter().zip(u) {
            if uk == 0.0 {
                continue;
            }
            for (i, j, d) in jac {
                if dq[*j] != 0.0 {
                    out[*i] += uk * d.eval(q) * dq[*j];
                }
            }
        }
    }

    /// `(d_q(xi_q u))^* p`, an n-covector.
    #[inline]
    pub fn anchor_deriv_adjoint_into(&self, q: &[f64], u: &[f64], p: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (jac, &uk) in self.jacobians.iter().zip(u) {
            if uk == 0.0 {
                continue;
            }
            for (i, j, d) in jac {
                if p[*i] != 0.0 {
                    out[*j] += uk * d.eval(q) * p[*i];
                }
            }
        }
    }

    // ---- metric -------------------------------------------------------------

    pub fn metric(&self, q: &[f64]) -> DMatrix<f64> {
        let h = self.control_dim();
        match &self.metric {
            Metric::Identity => DMatrix::identity(h, h),
            Metric::Constant { matrix, .. } => matrix.clone(),
            Metric::Polynomial { entries, .. } => {
                DMatrix::from_fn(h, h, |a, b| entries[a][b].eval(q))
            }
        }
    }

    /// `g_q(u, v)`.
    #[inline]
    pub fn metric_inner(&self, q: &[f64], u: &[f64], v: &[f64]) -> f64 {
        match &self.metric {
            Metric::Identity => u.iter().zip(v).map(|(a, b)| a * b).sum(),
            Metric::Constant { matrix, .. } => {
                let mut s = 0.0;
                for a in 0..u.len() {
                    for b in 0..v.len() {
                        s += u[a] * matrix[(a, b)] * v[b];
                    }
                }
                s
            }
            Metric::Polynomial { entries, .. } => {
                let mut s = 0.0;
                for a in 0..u.len() {
                    for b in 0..v.len() {
                        s += u[a] * entries[a][b].eval(q) * v[b];
                    }
                }
                s
            }
        }
    }

    /// `out = g_q(u, .)` as a dual control vector.
    #[inline]
    pub fn metric_lower_into(&self, q: &[f64], u: &[f64], out: &mut [f64]) {
        match &self.metric {
            Metric::Identity => out.copy_from_slice(u),
            Metric::Constant { matrix, .. } => {
                for a in 0..out.len() {
                    out[a] = (0..u.len()).map(|b| matrix[(a, b)] * u[b]).sum();
                }
            }
            Metric::Polynomial { entries, .. } => {
                for a in 0..out.len() {
                    out[a] = (0..u.len()).map(|b| entries[a][b].eval(q) * u[b]).sum();
                }
            }
        }
    }

    /// `d_q(g_q(u, v)) . dq`.
    pub fn metric_deriv(&self, q: &[f64], u: &[f64], v: &[f64], dq: &[f64]) -> f64 {
        let mut grad = vec![0.0; self.n];
        self.metric_grad_into(q, u, v, &mut grad);
        grad.iter().zip(dq).map(|(a, b)| a * b).sum()
    }

    /// `out = d_q(g_q(u, v))` as an n-covector (zero for constant metrics).
    #[inline]
    pub fn metric_grad_into(&self, q: &[f64], u: &[f64], v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        if let Metric::Polynomial { grads, .. } = &self.metric {
            for (a, row) in grads.iter().enumerate() {
                for (b, entry) in row.iter().enumerate() {
                    let w = u[a] * v[b];
                    if w == 0.0 {
                        continue;
                    }
                    for (j, d) in entry {
                        out[*j] += w * d.eval(q);
                    }
                }
            }
        }
    }

    /// Solves `g_q(u, .) = w` for u.
    pub fn metric_solve(&self, q: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        self.check_point(q)?;
        check_dim("dual control vector", self.control_dim(), w.len())?;
        let mut out = vec![0.0; w.len()];
        self.metric_solve_into(q, w, &mut out)?;
        Ok(out)
    }

    #[inline]
    pub fn metric_solve_into(&self, q: &[f64], w: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.metric {
            Metric::Identity => {
                out.copy_from_slice(w);
                Ok(())
            }
            Metric::Constant { cholesky, .. } => {
                let x = cholesky_solve(cholesky, w);
                out.copy_from_slice(&x);
                Ok(())
            }
            Metric::Polynomial { .. } => {
                let g = self.metric(q);
                let chol = g.cholesky().ok_or(Error::NotPositiveDefinite)?;
                let x = chol.solve(&DVector::from_column_slice(w));
                out.copy_from_slice(x.as_slice());
                Ok(())
            }
        }
    }

    /// Minimum-g-norm control with `xi_q u = w` together with the relative
    /// residual of the best approximation.
    pub fn least_norm_control(&self, q: &[f64], w: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_point(q)?;
        check_dim("tangent vector", self.n, w.len())?;
        let wn = crate::linalg::norm(w);
        let h = self.control_dim();
        if wn == 0.0 {
            return Ok((vec![0.0; h], 0.0));
        }
        let a = self.anchor(q);
        let g = self.metric(q);
        let l = g.cholesky().ok_or(Error::NotPositiveDefinite)?.l();
        // u = L^{-T} v minimises |v| subject to (A L^{-T}) v = w
        let l_inv_t = l
            .transpose()
            .try_inverse()
            .ok_or(Error::NotPositiveDefinite)?;
        let b = &a * &l_inv_t;
        let wv = DVector::from_column_slice(w);
        let v = crate::linalg::pinv_solve(&b, &wv, 1e-12);
        let resid = (&b * &v - &wv).norm() / wn;
        let u = &l_inv_t * v;
        Ok((u.as_slice().to_vec(), resid))
    }

    /// `n_q(w) = inf { sqrt(g_q(u,u)) : xi_q u = w }`, `+inf` off the range.
    pub fn seminorm(&self, q: &[f64], w: &[f64]) -> Result<f64> {
        let (u, resid) = self.least_norm_control(q, w)?;
        if resid > RANGE_TOLERANCE {
            return Ok(f64::INFINITY);
        }
        Ok(self.metric_inner(q, &u, &u).max(0.0).sqrt())
    }

    /// Samples points in [-1, 1]^n and checks the metric's smallest eigenvalue.
    pub fn check_metric_samples(&self, samples: usize, seed: u64) -> Result<()> {
        if matches!(self.metric, Metric::Identity) {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q = vec![0.0; self.n];
        for s in 0..samples {
            if s > 0 {
                for x in q.iter_mut() {
                    *x = rng.random_range(-1.0..1.0);
                }
            }
            let g = self.metric(&q);
            let asym = (&g - g.transpose()).amax();
            if asym > 1e-12 * g.amax().max(1.0) {
                return Err(Error::ModelDefinition("metric is not symmetric".into()));
            }
            let min_eig = g.symmetric_eigenvalues().min();
            if !(min_eig > 0.0) {
                return Err(Error::NotPositiveDefinite);
            }
        }
        Ok(())
    }
}

fn cholesky_solve(l: &DMatrix<f64>, w: &[f64]) -> Vec<f64> {
    let b = DVector::from_column_slice(w);
    let y = l.solve_lower_triangular(&b).expect("cholesky factor is invertible");
    let x = l
        .transpose()
        .solve_upper_triangular(&y)
        .expect("cholesky factor is invertible");
    x.as_slice().to_vec()
}

fn build_metric(n: usize, h: usize, entries: Vec<Vec<Poly>>) -> Result<Metric> {
    if entries.len() != h || entries.iter().any(|r| r.len() != h) {
        return Err(Error::ModelDefinition(format!("metric must be {h} x {h}")));
    }
    for a in 0..h {
        for b in 0..a {
            if entries[a][b] != entries[b][a] {
                return Err(Error::ModelDefinition("metric is not symmetric".into()));
            }
        }
    }
    if let Some(v) = entries.iter().flatten().filter_map(Poly::max_var).max() {
        if v >= n {
            return Err(Error::ModelDefinition(format!(
                "metric references coordinate {v} >= {n}"
            )));
        }
    }
    let constant = entries.iter().flatten().all(|p| p.degree() == 0);
    if constant {
        let matrix = DMatrix::from_fn(h, h, |a, b| entries[a][b].eval(&vec![0.0; n]));
        if matrix == DMatrix::identity(h, h) {
            return Ok(Metric::Identity);
        }
        let chol = matrix
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite)?;
        return Ok(Metric::Constant {
            matrix,
            cholesky: chol.l(),
        });
    }
    let grads = entries
        .iter()
        .map(|row| {
            row.iter()
                .map(|p| {
                    (0..n)
                        .filter(|&j| p.depends_on(j))
                        .map(|j| (j, p.deriv(j)))
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(Metric::Polynomial { entries, grads })
}

// ---- catalog and custom definitions -----------------------------------------

/// A polynomial term in a custom definition: `coeff * prod q_j^powers[j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermDef {
    pub coeff: f64,
    #[serde(default)]
    pub powers: Vec<u32>,
}

/// JSON definition of a custom polynomial model.
///
/// `frame[k][i]` is the list of terms of component i of field k; an empty
/// list is the zero polynomial. `metric`, when present, is an h x h matrix
/// of term lists and must be symmetric positive definite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomModel {
    pub name: String,
    pub dim: usize,
    pub frame: Vec<Vec<Vec<TermDef>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Vec<Vec<Vec<TermDef>>>>,
}

impl CustomModel {
    fn poly(&self, terms: &[TermDef]) -> Result<Poly> {
        let mut out = Vec::with_capacity(terms.len());
        for t in terms {
            if t.powers.len() > self.dim {
                return Err(Error::ModelDefinition(format!(
                    "term has {} exponents for dimension {}",
                    t.powers.len(),
                    self.dim
                )));
            }
            if !t.coeff.is_finite() {
                return Err(Error::ModelDefinition("non-finite coefficient".into()));
            }
            let powers = t
                .powers
                .iter()
                .enumerate()
                .filter(|(_, &e)| e > 0)
                .map(|(v, &e)| (v, e))
                .collect();
            out.push(Monomial::new(t.coeff, powers));
        }
        Ok(Poly::from_terms(out))
    }

    pub fn build(&self) -> Result<Model> {
        let mut fields = Vec::with_capacity(self.frame.len());
        for (k, comps) in self.frame.iter().enumerate() {
            if comps.len() != self.dim {
                return Err(Error::ModelDefinition(format!(
                    "field {k} has {} components, expected {}",
                    comps.len(),
                    self.dim
                )));
            }
            let mut cs = Vec::new();
            for (i, terms) in comps.iter().enumerate() {
                cs.push((i, self.poly(terms)?));
            }
            fields.push(PolyField::new(self.dim, cs));
        }
        let metric = match &self.metric {
            None => None,
            Some(rows) => Some(
                rows.iter()
                    .map(|r| r.iter().map(|t| self.poly(t)).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        Model::from_frame(self.name.clone(), self.dim, fields, metric)
    }
}

/// Built-in models addressed by name and parameters, or a custom definition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ModelSpec {
    Heisenberg3,
    HeisenbergProduct { n: usize },
    Engel,
    EngelProduct { n: usize },
    InfiniteHeisenbergTrunc { n: usize },
    Custom { definition: CustomModel },
    CustomFile { path: String },
}

impl ModelSpec {
    pub fn build(&self) -> Result<Model> {
        let positive = |n: usize| {
            if n == 0 {
                Err(Error::InvalidArgument("copy count must be positive".into()))
            } else {
                Ok(n)
            }
        };
        match self {
            ModelSpec::Heisenberg3 => Ok(Model::heisenberg3()),
            ModelSpec::HeisenbergProduct { n } => Ok(Model::heisenberg_product(positive(*n)?)),
            ModelSpec::Engel => Ok(Model::engel()),
            ModelSpec::EngelProduct { n } => Ok(Model::engel_product(positive(*n)?)),
            ModelSpec::InfiniteHeisenbergTrunc { n } => {
                Ok(Model::infinite_heisenberg_trunc(positive(*n)?))
            }
            ModelSpec::Custom { definition } => definition.build(),
            ModelSpec::CustomFile { path } => load_custom(path)?.build(),
        }
    }
}

pub fn load_custom(path: impl AsRef<Path>) -> Result<CustomModel> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn conformal_model() -> Model {
        // Heisenberg frame with g = (1 + x^2) I
        let h = Model::heisenberg3();
        let c = Poly::constant(1.0).add(&Poly::monomial(1.0, vec![(0, 2)]));
        let metric = vec![vec![c.clone(), Poly::zero()], vec![Poly::zero(), c]];
        Model::from_frame("conformal", 3, h.frame().to_vec(), Some(metric)).unwrap()
    }

    #[test]
    fn anchor_examples() {
        let m = Model::heisenberg3();
        assert_eq!(m.anchor_apply(&[0.0; 3], &[1.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(m.anchor_apply(&[1.0, 2.0, 0.0], &[0.0, 1.0]).unwrap(), vec![0.0, 1.0, 0.5]);
        assert_eq!(m.anchor_apply(&[0.3, -2.0, 4.0], &[0.0, 0.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn anchor_dimension_errors() {
        let m = Model::heisenberg3();
        assert!(matches!(
            m.anchor_apply(&[0.0; 2], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            m.anchor_adjoint(&[0.0; 3], &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn adjoint_at_origin_is_transpose() {
        let m = Model::heisenberg3();
        assert_eq!(m.anchor_adjoint(&[0.0; 3], &[2.0, -3.0, 7.0]).unwrap(), vec![2.0, -3.0]);
        assert_eq!(m.anchor_adjoint(&[1.0, 1.0, 1.0], &[0.0; 3]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn metric_solve_examples() {
        let m = Model::heisenberg3();
        assert_eq!(m.metric_solve(&[0.0; 3], &[0.3, -1.0]).unwrap(), vec![0.3, -1.0]);

        let two = Poly::constant(2.0);
        let diag = vec![vec![two.clone(), Poly::zero()], vec![Poly::zero(), two]];
        let m2 = Model::from_frame("diag2", 3, m.frame().to_vec(), Some(diag)).unwrap();
        let u = m2.metric_solve(&[0.0; 3], &[1.0, 0.0]).unwrap();
        assert_relative_eq!(u[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(u[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn non_spd_metric_rejected() {
        let m = Model::heisenberg3();
        let bad = vec![
            vec![Poly::constant(1.0), Poly::constant(2.0)],
            vec![Poly::constant(2.0), Poly::constant(1.0)],
        ];
        assert!(Model::from_frame("bad", 3, m.frame().to_vec(), Some(bad)).is_err());
    }

    #[test]
    fn seminorm_examples() {
        let m = Model::heisenberg3();
        assert_relative_eq!(m.seminorm(&[0.0; 3], &[1.0, 0.0, 0.0]).unwrap(), 1.0, epsilon = 1e-14);
        assert!(m.seminorm(&[0.0; 3], &[0.0, 0.0, 1.0]).unwrap().is_infinite());
        assert_eq!(m.seminorm(&[0.0; 3], &[0.0; 3]).unwrap(), 0.0);
    }

    #[test]
    fn conformal_metric_derivative() {
        let m = conformal_model();
        let q = [0.7, -0.2, 0.1];
        let (u, v) = ([0.3, -1.1], [0.8, 0.4]);
        let dq = [1.0, 0.0, 0.0];
        // d/dx (1 + x^2) <u,v> = 2x <u,v>
        let expected = 2.0 * 0.7 * (0.3 * 0.8 - 1.1 * 0.4);
        assert_relative_eq!(m.metric_deriv(&q, &u, &v, &dq), expected, epsilon = 1e-14);
        let w = m.metric_solve(&q, &[1.49, 0.0]).unwrap();
        assert_relative_eq!(w[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn products_are_block_diagonal() {
        let m = Model::heisenberg_product(3);
        let q: Vec<f64> = (0..9).map(|i| 0.1 * i as f64 - 0.3).collect();
        let a = m.anchor(&q);
        let single = Model::heisenberg3();
        for i in 0..9 {
            for k in 0..6 {
                let c = i / 3;
                let expected = if c == k / 2 {
                    single.anchor(&q[3 * c..3 * c + 3])[(i % 3, k % 2)]
                } else {
                    0.0
                };
                assert_eq!(a[(i, k)], expected, "entry ({i}, {k})");
            }
        }
    }

    #[test]
    fn model_spec_json_round_trip() {
        let spec: ModelSpec = serde_json::from_str(r#"{"name":"heisenberg_product","n":3}"#).unwrap();
        assert_eq!(spec, ModelSpec::HeisenbergProduct { n: 3 });
        assert_eq!(spec.build().unwrap().dim(), 9);
        assert!(serde_json::from_str::<ModelSpec>(r#"{"name":"klein_bottle"}"#).is_err());
    }

    #[test]
    fn custom_definition_builds_heisenberg() {
        let text = r#"{
            "name": "custom-heis",
            "dim": 3,
            "frame": [
                [[{"coeff": 1.0}], [], [{"coeff": -0.5, "powers": [0, 1, 0]}]],
                [[], [{"coeff": 1.0}], [{"coeff": 0.5, "powers": [1]}]]
            ]
        }"#;
        let def: CustomModel = serde_json::from_str(text).unwrap();
        let m = def.build().unwrap();
        let q = [0.4, -0.9, 2.0];
        assert_eq!(m.anchor(&q), Model::heisenberg3().anchor(&q));
    }

    #[test]
    fn custom_definition_rejects_bad_shapes() {
        let text = r#"{"name": "bad", "dim": 2, "frame": [[[{"coeff": 1.0}]]]}"#;
        let def: CustomModel = serde_json::from_str(text).unwrap();
        assert!(def.build().is_err());
        let unknown = r#"{"name": "bad", "dim": 1, "frame": [], "extra": 1}"#;
        assert!(serde_json::from_str::<CustomModel>(unknown).is_err());
    }
}
