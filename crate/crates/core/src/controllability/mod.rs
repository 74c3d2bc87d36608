//! Lie brackets of horizontal fields, growth vectors of the iterated bracket
//! flag, and commutator flows.
//!
//! Bracket words are 1-based: the word `(i1, ..., ij)` names the field
//! `X_I = [X_ij, [X_i(j-1), ..., [X_i2, X_i1]]]`, and `[X, Y] = DY.X - DX.Y`.

mod steering;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlPath, Dynamics};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::model::{ChartPoint, Model};
use crate::poly::PolyField;

pub use steering::{
    bracket_motion, bracket_motion_path, bracket_motion_prediction, steer, steering_cost_certificate, CostCertificate, PlanStep, SteerFailure,
    SteerOptions, SteeringPlan, ARC_STEPS,
};

pub type Word = Vec<usize>;

/// Finite-difference step for fields without an analytic Jacobian.
pub const FD_STEP: f64 = 1e-5;
/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOLERANCE: f64 = 1e-9;

type FieldFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub enum VectorField {
    Polynomial(PolyField),
    Closure { dim: usize, eval: FieldFn },
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VectorField::Polynomial(p) => f.debug_tuple("Polynomial").field(p).finish(),
            VectorField::Closure { dim, .. } => f.debug_struct("Closure").field("dim", dim).finish(),
        }
    }
}

impl From<PolyField> for VectorField {
    fn from(p: PolyField) -> Self {
        VectorField::Polynomial(p)
    }
}

impl VectorField {
    pub fn from_fn(dim: usize, f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        VectorField::Closure {
            dim,
            eval: Arc::new(f),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            VectorField::Polynomial(p) => p.dim(),
            VectorField::Closure { dim, .. } => *dim,
        }
    }

    pub fn eval(&self, q: &[f64]) -> Vec<f64> {
        match self {
            VectorField::Polynomial(p) => p.eval(q),
            VectorField::Closure { eval, .. } => eval(q),
        }
    }

    /// `J[i][j] = d X^i / d q_j`; central differences for closures.
    pub fn jacobian(&self, q: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut jac = DMatrix::zeros(n, n);
        match self {
            VectorField::Polynomial(p) => {
                for (i, j, d) in p.jacobian_entries() {
                    jac[(i, j)] = d.eval(q);
                }
            }
            VectorField::Closure { eval, .. } => {
                let mut qp = q.to_vec();
                for j in 0..n {
                    let h = FD_STEP * q[j].abs().max(1.0);
                    qp[j] = q[j] + h;
                    let fp = eval(&qp);
                    qp[j] = q[j] - h;
                    let fm = eval(&qp);
                    qp[j] = q[j];
                    for i in 0..n {
                        jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
                    }
                }
            }
        }
        jac
    }
}

/// `[X, Y](q) = DY(q) X(q) - DX(q) Y(q)`.
pub fn lie_bracket(x: &VectorField, y: &VectorField, q: &[f64]) -> Result<Vec<f64>> {
    check_dim("bracket operand", x.dim(), y.dim())?;
    check_dim("chart point", x.dim(), q.len())?;
    check_finite("chart point", q)?;
    if let (VectorField::Polynomial(a), VectorField::Polynomial(b)) = (x, y) {
        return Ok(a.bracket(b).eval(q));
    }
    let xv = nalgebra::DVector::from_vec(x.eval(q));
    let yv = nalgebra::DVector::from_vec(y.eval(q));
    let out = y.jacobian(q) * xv - x.jacobian(q) * yv;
    Ok(out.as_slice().to_vec())
}

/// Polynomial field `X_I` for a bracket word.
pub fn word_field(model: &Model, word: &[usize]) -> Result<PolyField> {
    let frame = model.frame();
    let pick = |i: usize| -> Result<&PolyField> {
        if i == 0 || i > frame.len() {
            return Err(Error::InvalidArgument(format!(
                "word letter {i} outside 1..={}",
                frame.len()
            )));
        }
        Ok(&frame[i - 1])
    };
    let (first, rest) = word
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("empty bracket word".into()))?;
    let mut field = pick(*first)?.clone();
    for &i in rest {
        field = pick(i)?.bracket(&field);
    }
    Ok(field)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrowthVector {
    pub depth: usize,
    pub ranks: Vec<usize>,
    pub satisfied: bool,
}

#[derive(Clone, Debug)]
pub struct BracketSpan {
    pub growth: GrowthVector,
    /// Orthonormal columns spanning the new directions of each layer.
    pub layers: Vec<DMatrix<f64>>,
    /// A bracket word realising each new direction of each layer.
    pub words: Vec<Vec<Word>>,
}

/// Iterated bracket flag at `q` up to `depth`, stopping early once it spans.
pub fn bracket_span(model: &Model, q: &[f64], depth: usize) -> Result<BracketSpan> {
    check_dim("chart point", model.dim(), q.len())?;
    check_finite("chart point", q)?;
    if depth == 0 {
        return Err(Error::InvalidArgument("bracket depth must be at least 1".into()));
    }
    let n = model.dim();
    let mut layer: Vec<(Word, PolyField)> = model
        .frame()
        .iter()
        .enumerate()
        .map(|(k, f)| (vec![k + 1], f.clone()))
        .collect();
    let mut basis = DMatrix::<f64>::zeros(n, 0);
    let mut ranks = Vec::new();
    let mut layers = Vec::new();
    let mut words = Vec::new();
    let mut total = 0;
    for level in 1..=depth {
        if level > 1 {
            let mut next: Vec<(Word, PolyField)> = Vec::new();
            for (k, x) in model.frame().iter().enumerate() {
                for (w, f) in &layer {
                    let b = x.bracket(f);
                    if b.is_zero() || next.iter().any(|(_, g)| *g == b || g.negated() == b) {
                        continue;
                    }
                    let mut word = w.clone();
                    word.push(k + 1);
                    next.push((word, b));
                }
            }
            layer = next;
        }
        let (new_basis, new_words) = extend_basis(&basis, &layer, q);
        let r = new_basis.ncols();
        total += r;
        ranks.push(r);
        basis = DMatrix::from_fn(n, total, |i, j| {
            if j < basis.ncols() {
                basis[(i, j)]
            } else {
                new_basis[(i, j - basis.ncols())]
            }
        });
        layers.push(new_basis);
        words.push(new_words);
        if total == n || layer.is_empty() {
            break;
        }
    }
    Ok(BracketSpan {
        growth: GrowthVector {
            depth: ranks.len(),
            ranks,
            satisfied: total == n,
        },
        layers,
        words,
    })
}

/// Greedy choice of layer fields adding rank to `basis`, orthonormalised.
fn extend_basis(basis: &DMatrix<f64>, layer: &[(Word, PolyField)], q: &[f64]) -> (DMatrix<f64>, Vec<Word>) {
    let n = basis.nrows();
    let vals: Vec<Vec<f64>> = layer.iter().map(|(_, f)| f.eval(q)).collect();
    let mut scale = 0.0f64;
    for j in 0..basis.ncols() {
        scale = scale.max(basis.column(j).norm());
    }
    for v in &vals {
        scale = scale.max(crate::linalg::norm(v));
    }
    let current = crate::linalg::rank(basis, RANK_TOLERANCE);
    let mut cols: Vec<Vec<f64>> = (0..basis.ncols()).map(|j| basis.column(j).iter().copied().collect()).collect();
    let mut chosen = Vec::new();
    let mut rank = current;
    for (k, v) in vals.iter().enumerate() {
        if rank == n {
            break;
        }
        let mut trial = cols.clone();
        trial.push(v.clone());
        let m = DMatrix::from_fn(n, trial.len(), |i, j| trial[j][i]);
        if absolute_rank(&m, RANK_TOLERANCE * scale) > rank {
            rank += 1;
            cols = trial;
            chosen.push(k);
        }
    }
    // orthonormalise the chosen vectors against the existing basis
    let mut q_cols: Vec<nalgebra::DVector<f64>> =
        (0..basis.ncols()).map(|j| basis.column(j).into_owned()).collect();
    let mut new_cols = Vec::new();
    for &k in &chosen {
        let mut v = nalgebra::DVector::from_column_slice(&vals[k]);
        for _ in 0..2 {
            for b in &q_cols {
                let c = b.dot(&v);
                v -= b * c;
            }
        }
        let nv = v.norm();
        v /= nv;
        q_cols.push(v.clone());
        new_cols.push(v);
    }
    let out = DMatrix::from_fn(n, new_cols.len(), |i, j| new_cols[j][i]);
    (out, chosen.into_iter().map(|k| layer[k].0.clone()).collect())
}

fn absolute_rank(m: &DMatrix<f64>, abs_tol: f64) -> usize {
    if m.ncols() == 0 {
        return 0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .filter(|&&s| s > abs_tol)
        .count()
}

/// Straight-line arc of `model`'s control `u` traversed in unit time.
pub(crate) fn arc(u: &[f64]) -> ControlPath {
    ControlPath::constant(ARC_STEPS, u)
}

/// Flow of frame field `|letter|` for time `t`, reversed for negative letters.
fn letter_arc(model: &Model, letter: isize, t: f64) -> Result<ControlPath> {
    let h = model.control_dim();
    let k = letter.unsigned_abs();
    if k == 0 || k > h {
        return Err(Error::InvalidArgument(format!("flow letter {letter} outside ±1..={h}")));
    }
    let mut u = vec![0.0; h];
    u[k - 1] = if letter > 0 { t } else { -t };
    Ok(arc(&u))
}

/// `phi_{i_j}^t o ... o phi_{i_1}^t (q)`: flows of the indexed frame fields,
/// applied left to right, each for time `t`. A negative letter `-k` runs
/// field `k` backwards.
pub fn commutator_flow(model: &Model, word: &[isize], t: f64, q: &[f64], flow_steps: usize) -> Result<ChartPoint> {
    check_dim("chart point", model.dim(), q.len())?;
    if !t.is_finite() {
        return Err(Error::NonFinite("flow time"));
    }
    let dynamics = Dynamics::with_substeps(model, flow_steps.max(1));
    let mut point = q.to_vec();
    for &letter in word {
        let h = model.control_dim();
        let k = letter.unsigned_abs();
        if k == 0 || k > h {
            return Err(Error::InvalidArgument(format!("flow letter {letter} outside ±1..={h}")));
        }
        let mut u = vec![0.0; h];
        u[k - 1] = if letter > 0 { t } else { -t };
        point = dynamics.endpoint(&point, &ControlPath::constant(1, &u))?.into_inner();
    }
    Ok(ChartPoint::new(point))
}

/// Arcs realising the nested group commutator `psi_I^t` of a bracket word,
/// with `C(A, B) = B^-1 A^-1 B A` (A applied first).
pub fn commutator_arcs(model: &Model, word: &[usize], t: f64) -> Result<Vec<ControlPath>> {
    let (first, rest) = word
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("empty bracket word".into()))?;
    let mut arcs = vec![letter_arc(model, *first as isize, t)?];
    for &k in rest {
        let a = letter_arc(model, k as isize, t)?;
        arcs = group_commutator(vec![a], arcs);
    }
    Ok(arcs)
}

/// Arc list for `C(A, B)`: A, B, A^-1, B^-1.
pub(crate) fn group_commutator(a: Vec<ControlPath>, b: Vec<ControlPath>) -> Vec<ControlPath> {
    let inv = |arcs: &[ControlPath]| arcs.iter().rev().map(ControlPath::reversed).collect::<Vec<_>>();
    let mut out = Vec::with_capacity(2 * (a.len() + b.len()));
    out.extend(a.iter().cloned());
    out.extend(b.iter().cloned());
    out.extend(inv(&a));
    out.extend(inv(&b));
    out
}
