//! Sparse multivariate polynomials and polynomial vector fields.
//!
//! Every built-in frame (Heisenberg, Engel, their products) and every custom
//! model loaded from JSON has polynomial coefficients, so Jacobians and Lie
//! brackets of frame fields are computed exactly in this representation.

use std::collections::BTreeMap;

/// `coeff * prod q[var]^exp`, with `powers` sorted by variable and all exponents > 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<(usize, u32)>,
}

impl Monomial {
    pub fn constant(coeff: f64) -> Self {
        Self {
            coeff,
            powers: Vec::new(),
        }
    }

    pub fn new(coeff: f64, mut powers: Vec<(usize, u32)>) -> Self {
        powers.retain(|&(_, e)| e > 0);
        powers.sort_by_key(|&(v, _)| v);
        // merge repeated variables
        let mut merged: Vec<(usize, u32)> = Vec::with_capacity(powers.len());
        for (v, e) in powers {
            match merged.last_mut() {
                Some((lv, le)) if *lv == v => *le += e,
                _ => merged.push((v, e)),
            }
        }
        Self {
            coeff,
            powers: merged,
        }
    }

    #[inline]
    pub fn eval(&self, q: &[f64]) -> f64 {
        let mut acc = self.coeff;
        for &(v, e) in &self.powers {
            acc *= match e {
                1 => q[v],
                2 => q[v] * q[v],
                _ => q[v].powi(e as i32),
            };
        }
        acc
    }

    pub fn degree(&self) -> u32 {
        self.powers.iter().map(|&(_, e)| e).sum()
    }

    fn deriv(&self, var: usize) -> Option<Monomial> {
        let pos = self.powers.iter().position(|&(v, _)| v == var)?;
        let e = self.powers[pos].1;
        let mut powers = self.powers.clone();
        if e == 1 {
            powers.remove(pos);
        } else {
            powers[pos].1 = e - 1;
        }
        Some(Monomial {
            coeff: self.coeff * e as f64,
            powers,
        })
    }

    fn mul(&self, other: &Monomial) -> Monomial {
        let mut powers = self.powers.clone();
        powers.extend_from_slice(&other.powers);
        Monomial::new(self.coeff * other.coeff, powers)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Poly {
    terms: Vec<Monomial>,
}

impl Poly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self::from_terms(vec![Monomial::constant(c)])
    }

    /// `coeff * q[var]`
    pub fn linear(coeff: f64, var: usize) -> Self {
        Self::from_terms(vec![Monomial::new(coeff, vec![(var, 1)])])
    }

    pub fn monomial(coeff: f64, powers: Vec<(usize, u32)>) -> Self {
        Self::from_terms(vec![Monomial::new(coeff, powers)])
    }

    pub fn from_terms(terms: Vec<Monomial>) -> Self {
        let mut collected: BTreeMap<Vec<(usize, u32)>, f64> = BTreeMap::new();
        for t in terms {
            *collected.entry(t.powers).or_insert(0.0) += t.coeff;
        }
        let terms = collected
            .into_iter()
            .filter(|(_, c)| *c != 0.0)
            .map(|(powers, coeff)| Monomial { coeff, powers })
            .collect();
        Self { terms }
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        self.terms
            .iter()
            .flat_map(|t| t.powers.iter().map(|&(v, _)| v))
            .max()
    }

    #[inline]
    pub fn eval(&self, q: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.eval(q)).sum()
    }

    pub fn deriv(&self, var: usize) -> Poly {
        Self::from_terms(self.terms.iter().filter_map(|t| t.deriv(var)).collect())
    }

    pub fn depends_on(&self, var: usize) -> bool {
        self.terms
            .iter()
            .any(|t| t.powers.iter().any(|&(v, _)| v == var))
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                out.push(a.mul(b));
            }
        }
        Self::from_terms(out)
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Self::from_terms(terms)
    }

    pub fn scale(&self, s: f64) -> Poly {
        Self::from_terms(
            self.terms
                .iter()
                .map(|t| Monomial {
                    coeff: t.coeff * s,
                    powers: t.powers.clone(),
                })
                .collect(),
        )
    }
}

/// Vector field on R^n with polynomial components, stored sparsely.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyField {
    n: usize,
    comps: Vec<(usize, Poly)>,
}

impl PolyField {
    pub fn new(n: usize, comps: impl IntoIterator<Item = (usize, Poly)>) -> Self {
        let mut map: BTreeMap<usize, Poly> = BTreeMap::new();
        for (i, p) in comps {
            assert!(i < n, "component index {i} out of range for dimension {n}");
            let entry = map.entry(i).or_default();
            *entry = entry.add(&p);
        }
        Self {
            n,
            comps: map.into_iter().filter(|(_, p)| !p.is_zero()).collect(),
        }
    }

    /// Constant coordinate field `d/dq_i`.
    pub fn coordinate(n: usize, i: usize) -> Self {
        Self::new(n, [(i, Poly::constant(1.0))])
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn components(&self) -> &[(usize, Poly)] {
        &self.comps
    }

    pub fn is_zero(&self) -> bool {
        self.comps.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.comps.iter().map(|(_, p)| p.degree()).max().unwrap_or(0)
    }

    pub fn eval(&self, q: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.add_eval_into(q, 1.0, &mut out);
        out
    }

    /// `out += s * X(q)`
    #[inline]
    pub fn add_eval_into(&self, q: &[f64], s: f64, out: &mut [f64]) {
        for (i, p) in &self.comps {
            out[*i] += s * p.eval(q);
        }
    }

    /// `<p, X(q)>`
    #[inline]
    pub fn pair(&self, q: &[f64], p: &[f64]) -> f64 {
        self.comps.iter().map(|(i, c)| p[*i] * c.eval(q)).sum()
    }

    /// Nonzero Jacobian entries `(i, j, d X^i / d q_j)`.
    pub fn jacobian_entries(&self) -> Vec<(usize, usize, Poly)> {
        let mut out = Vec::new();
        for (i, p) in &self.comps {
            let mut vars: Vec<usize> = p
                .terms()
                .iter()
                .flat_map(|t| t.powers.iter().map(|&(v, _)| v))
                .collect();
            vars.sort_unstable();
            vars.dedup();
            for j in vars {
                let d = p.deriv(j);
                if !d.is_zero() {
                    out.push((*i, j, d));
                }
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> PolyField {
        PolyField::new(self.n, self.comps.iter().map(|(i, p)| (*i, p.scale(s))))
    }

    pub fn negated(&self) -> PolyField {
        self.scale(-1.0)
    }

    /// Lie bracket `[X, Y]^i = sum_j X^j d_j Y^i - Y^j d_j X^i`.
    pub fn bracket(&self, other: &PolyField) -> PolyField {
        assert_eq!(self.n, other.n);
        let mut comps: Vec<(usize, Poly)> = Vec::new();
        for (i, yi) in &other.comps {
            for (j, xj) in &self.comps {
                if yi.depends_on(*j) {
                    comps.push((*i, xj.mul(&yi.deriv(*j))));
                }
            }
        }
        for (i, xi) in &self.comps {
            for (j, yj) in &other.comps {
                if xi.depends_on(*j) {
                    comps.push((*i, yj.mul(&xi.deriv(*j)).scale(-1.0)));
                }
            }
        }
        PolyField::new(self.n, comps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heis_x() -> PolyField {
        PolyField::new(3, [(0, Poly::constant(1.0)), (2, Poly::linear(-0.5, 1))])
    }

    fn heis_y() -> PolyField {
        PolyField::new(3, [(1, Poly::constant(1.0)), (2, Poly::linear(0.5, 0))])
    }

    #[test]
    fn monomial_merges_repeated_vars() {
        let m = Monomial::new(2.0, vec![(1, 1), (0, 2), (1, 2)]);
        assert_eq!(m.powers, vec![(0, 2), (1, 3)]);
        assert_eq!(m.eval(&[2.0, 3.0]), 2.0 * 4.0 * 27.0);
    }

    #[test]
    fn like_terms_cancel() {
        let p = Poly::linear(1.0, 0).add(&Poly::linear(-1.0, 0));
        assert!(p.is_zero());
    }

    #[test]
    fn derivative_of_cubic() {
        // x^3 y -> d/dx = 3 x^2 y
        let p = Poly::monomial(1.0, vec![(0, 3), (1, 1)]);
        let d = p.deriv(0);
        assert_eq!(d.eval(&[2.0, 5.0]), 3.0 * 4.0 * 5.0);
        assert!(p.deriv(2).is_zero());
    }

    #[test]
    fn heisenberg_bracket_is_dz() {
        let z = heis_x().bracket(&heis_y());
        assert_eq!(z, PolyField::coordinate(3, 2));
        assert!(heis_x().bracket(&heis_x()).is_zero());
        assert_eq!(heis_y().bracket(&heis_x()), PolyField::coordinate(3, 2).negated());
    }

    #[test]
    fn jacobian_entries_of_heisenberg_y() {
        let j = heis_y().jacobian_entries();
        assert_eq!(j.len(), 1);
        assert_eq!((j[0].0, j[0].1), (2, 0));
        assert_eq!(j[0].2.eval(&[0.0; 3]), 0.5);
    }
}
