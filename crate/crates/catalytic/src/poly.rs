//! Sparse multivariate polynomials over a fixed tagged alphabet.
//!
//! The alphabet has six slots: `z`, the catalytic variable `u`, the optional
//! mark `w`, and three substitution slots which hold either the unknowns
//! `a0,a1,a2` of a Q-form equation or `y0,y1,y2` of an R-form. Terms live in
//! a `BTreeMap` keyed by exponent vector, so iteration order is canonical and
//! every operation is deterministic.

use crate::rat::{format_rat, Rat};
use num_traits::{One, Signed, Zero};
use std::collections::BTreeMap;
use std::fmt;

/// Variable tags. `S0..S2` are the substitution slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    Z,
    U,
    W,
    S0,
    S1,
    S2,
}

pub const ALL_VARS: [Var; 6] = [Var::Z, Var::U, Var::W, Var::S0, Var::S1, Var::S2];

impl Var {
    pub fn slot(idx: usize) -> Var {
        match idx {
            0 => Var::S0,
            1 => Var::S1,
            2 => Var::S2,
            _ => panic!("slot index out of range"),
        }
    }

    fn index(self) -> usize {
        match self {
            Var::Z => 0,
            Var::U => 1,
            Var::W => 2,
            Var::S0 => 3,
            Var::S1 => 4,
            Var::S2 => 5,
        }
    }
}

/// Exponent vector in the order (z, u, w, s0, s1, s2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Exponents(pub [u16; 6]);

impl Exponents {
    pub fn get(&self, v: Var) -> u16 {
        self.0[v.index()]
    }

    pub fn with(mut self, v: Var, e: u16) -> Self {
        self.0[v.index()] = e;
        self
    }

    fn checked_add(&self, other: &Exponents) -> Exponents {
        let mut out = [0u16; 6];
        for i in 0..6 {
            out[i] = self.0[i].checked_add(other.0[i]).expect("exponent overflow");
        }
        Exponents(out)
    }
}

/// One term `coef * z^a u^b w^c s0^d s1^e s2^f` with a nonzero coefficient.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Monomial {
    pub coef: Rat,
    pub exps: Exponents,
}

/// A polynomial as a canonical map from exponent vectors to nonzero coefficients.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct Poly {
    terms: BTreeMap<Exponents, Rat>,
}

impl Poly {
    pub fn zero() -> Poly {
        Poly::default()
    }

    pub fn constant(c: Rat) -> Poly {
        let mut p = Poly::zero();
        p.add_term(Exponents::default(), c);
        p
    }

    pub fn one() -> Poly {
        Poly::constant(Rat::one())
    }

    pub fn var(v: Var) -> Poly {
        Poly::monomial(Rat::one(), Exponents::default().with(v, 1))
    }

    pub fn monomial(coef: Rat, exps: Exponents) -> Poly {
        let mut p = Poly::zero();
        p.add_term(exps, coef);
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponents, &Rat)> {
        self.terms.iter()
    }

    pub fn coef(&self, exps: &Exponents) -> Rat {
        self.terms.get(exps).cloned().unwrap_or_else(Rat::zero)
    }

    pub fn add_term(&mut self, exps: Exponents, coef: Rat) {
        if coef.is_zero() {
            return;
        }
        let entry = self.terms.entry(exps).or_insert_with(Rat::zero);
        *entry += coef;
        if entry.is_zero() {
            self.terms.remove(&exps);
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(*e, c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(*e, -c.clone());
        }
        out
    }

    pub fn scale(&self, c: &Rat) -> Poly {
        if c.is_zero() {
            return Poly::zero();
        }
        let mut out = Poly::zero();
        for (e, v) in &self.terms {
            out.terms.insert(*e, v * c);
        }
        out
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                out.add_term(ea.checked_add(eb), ca * cb);
            }
        }
        out
    }

    pub fn mul_var(&self, v: Var, e: u16) -> Poly {
        let shift = Exponents::default().with(v, e);
        let mut out = Poly::zero();
        for (ea, ca) in &self.terms {
            out.terms.insert(ea.checked_add(&shift), ca.clone());
        }
        out
    }

    pub fn pow(&self, n: u16) -> Poly {
        let mut out = Poly::one();
        for _ in 0..n {
            out = out.mul(self);
        }
        out
    }

    /// Formal partial derivative with respect to one variable.
    pub fn diff(&self, v: Var) -> Poly {
        let mut out = Poly::zero();
        for (e, c) in &self.terms {
            let k = e.get(v);
            if k > 0 {
                out.add_term(e.with(v, k - 1), c * Rat::from(num_bigint::BigInt::from(k)));
            }
        }
        out
    }

    pub fn degree(&self, v: Var) -> u16 {
        self.terms.keys().map(|e| e.get(v)).max().unwrap_or(0)
    }

    /// Total degree across the three substitution slots.
    pub fn slot_degree(&self) -> u16 {
        self.terms
            .keys()
            .map(|e| e.get(Var::S0) + e.get(Var::S1) + e.get(Var::S2))
            .max()
            .unwrap_or(0)
    }

    pub fn depends_on(&self, v: Var) -> bool {
        self.terms.keys().any(|e| e.get(v) > 0)
    }

    pub fn min_degree(&self, v: Var) -> Option<u16> {
        self.terms.keys().map(|e| e.get(v)).min()
    }

    pub fn has_negative_coef(&self) -> bool {
        self.terms.values().any(|c| c.is_negative())
    }

    /// Coefficient of `v^k` as a polynomial in the remaining variables.
    pub fn coef_of(&self, v: Var, k: u16) -> Poly {
        let mut out = Poly::zero();
        for (e, c) in &self.terms {
            if e.get(v) == k {
                out.terms.insert(e.with(v, 0), c.clone());
            }
        }
        out
    }

    /// Substitute `v = 0`.
    pub fn at_zero(&self, v: Var) -> Poly {
        self.coef_of(v, 0)
    }

    /// True if every exponent of `v` is even.
    pub fn is_even_in(&self, v: Var) -> bool {
        self.terms.keys().all(|e| e.get(v) % 2 == 0)
    }

    /// Writes p = A(v^2) + v*B(v^2) and returns (A, B) with the exponent of
    /// `v` halved, i.e. A and B as polynomials in t = v^2.
    pub fn split_even_odd(&self, v: Var) -> (Poly, Poly) {
        let mut even = Poly::zero();
        let mut odd = Poly::zero();
        for (e, c) in &self.terms {
            let k = e.get(v);
            if k % 2 == 0 {
                even.add_term(e.with(v, k / 2), c.clone());
            } else {
                odd.add_term(e.with(v, (k - 1) / 2), c.clone());
            }
        }
        (even, odd)
    }

    /// Divided difference (self - self|_{v=0}) / v, exact.
    pub fn divided_difference(&self, v: Var) -> Poly {
        let mut out = Poly::zero();
        for (e, c) in &self.terms {
            let k = e.get(v);
            if k > 0 {
                out.terms.insert(e.with(v, k - 1), c.clone());
            }
        }
        out
    }

    /// Exact division by `v^k`; fails if some term has a smaller exponent.
    pub fn div_var(&self, v: Var, k: u16) -> Option<Poly> {
        let mut out = Poly::zero();
        for (e, c) in &self.terms {
            let d = e.get(v);
            if d < k {
                return None;
            }
            out.terms.insert(e.with(v, d - k), c.clone());
        }
        Some(out)
    }

    /// Substitute each slot `s_i` by a polynomial. Slots absent from `subs`
    /// are left untouched.
    pub fn substitute_slots(&self, subs: &[(Var, Poly)]) -> Poly {
        let mut out = Poly::zero();
        for (e, c) in &self.terms {
            let mut base = e.clone();
            let mut factor = Poly::one();
            for (v, p) in subs {
                let k = e.get(*v);
                if k > 0 {
                    base = base.with(*v, 0);
                    factor = factor.mul(&p.pow(k));
                }
            }
            out = out.add(&factor.mul(&Poly::monomial(c.clone(), base)));
        }
        out
    }

    /// Substitute `w` by an exact rational value.
    pub fn substitute_w(&self, value: &Rat) -> Poly {
        let mut out = Poly::zero();
        for (e, c) in &self.terms {
            let k = e.get(Var::W);
            let mut scaled = c.clone();
            for _ in 0..k {
                scaled *= value;
            }
            out.add_term(e.with(Var::W, 0), scaled);
        }
        out
    }

    /// Exact evaluation. Terms are grouped by the power of `z` and combined
    /// Horner-style in `z`; within a group, monomials are evaluated in
    /// canonical order with powers formed by repeated multiplication.
    pub fn eval_exact(&self, point: &BTreeMap<Var, Rat>) -> Result<Rat, Var> {
        for v in ALL_VARS {
            if self.depends_on(v) && !point.contains_key(&v) {
                return Err(v);
            }
        }
        let zval = point.get(&Var::Z).cloned().unwrap_or_else(Rat::zero);
        let zdeg = self.degree(Var::Z);
        let mut acc = Rat::zero();
        for a in (0..=zdeg).rev() {
            acc *= &zval;
            for (e, c) in &self.terms {
                if e.get(Var::Z) != a {
                    continue;
                }
                let mut term = c.clone();
                for v in [Var::U, Var::W, Var::S0, Var::S1, Var::S2] {
                    let k = e.get(v);
                    if k > 0 {
                        let x = &point[&v];
                        for _ in 0..k {
                            term *= x;
                        }
                    }
                }
                acc += term;
            }
        }
        Ok(acc)
    }

    /// Binary64 evaluation with the same summation order as `eval_exact`.
    pub fn eval_f64(&self, point: &BTreeMap<Var, f64>) -> Result<f64, Var> {
        for v in ALL_VARS {
            if self.depends_on(v) && !point.contains_key(&v) {
                return Err(v);
            }
        }
        let zval = point.get(&Var::Z).copied().unwrap_or(0.0);
        let zdeg = self.degree(Var::Z);
        let mut acc = 0.0f64;
        for a in (0..=zdeg).rev() {
            acc *= zval;
            for (e, c) in &self.terms {
                if e.get(Var::Z) != a {
                    continue;
                }
                let mut term = crate::rat::rat_to_f64(c);
                for v in [Var::U, Var::W, Var::S0, Var::S1, Var::S2] {
                    let k = e.get(v);
                    if k > 0 {
                        let x = point[&v];
                        for _ in 0..k {
                            term *= x;
                        }
                    }
                }
                acc += term;
            }
        }
        Ok(acc)
    }

    /// Renders with the given names for the substitution slots.
    pub fn display_with(&self, slot_names: [&'static str; 3]) -> String {
        if self.is_zero() {
            return "0".to_string();
        }
        let names = ["z", "u", "w", slot_names[0], slot_names[1], slot_names[2]];
        let mut parts = Vec::new();
        for (e, c) in &self.terms {
            let mut factors = Vec::new();
            if !c.is_one() || e.0.iter().all(|&x| x == 0) {
                factors.push(format_rat(c));
            }
            for (i, name) in names.iter().enumerate() {
                match e.0[i] {
                    0 => {}
                    1 => factors.push(name.to_string()),
                    k => factors.push(format!("{name}^{k}")),
                }
            }
            parts.push(factors.join("*"));
        }
        parts.join(" + ")
    }
}

impl fmt::Debug for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.display_with(["s0", "s1", "s2"]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rat::rat_from_i64;

    fn r(n: i64) -> Rat {
        rat_from_i64(n)
    }

    #[test]
    fn arithmetic_and_canonical_form() {
        let z = Poly::var(Var::Z);
        let u = Poly::var(Var::U);
        // (z + u)^2 = z^2 + 2zu + u^2
        let p = z.add(&u).pow(2);
        assert_eq!(p.num_terms(), 3);
        assert_eq!(
            p.coef(&Exponents::default().with(Var::Z, 1).with(Var::U, 1)),
            r(2)
        );
        // subtracting it from itself cancels all terms
        assert!(p.sub(&p).is_zero());
    }

    #[test]
    fn diff_and_divided_difference() {
        // p = z u^3 + 2u
        let mut p = Poly::zero();
        p.add_term(Exponents::default().with(Var::Z, 1).with(Var::U, 3), r(1));
        p.add_term(Exponents::default().with(Var::U, 1), r(2));
        let du = p.diff(Var::U);
        assert_eq!(
            du.coef(&Exponents::default().with(Var::Z, 1).with(Var::U, 2)),
            r(3)
        );
        assert_eq!(du.coef(&Exponents::default()), r(2));
        // divided difference keeps all terms (none are u-free)
        let dd = p.divided_difference(Var::U);
        assert_eq!(
            dd.coef(&Exponents::default().with(Var::Z, 1).with(Var::U, 2)),
            r(1)
        );
        assert_eq!(dd.coef(&Exponents::default()), r(2));
        // and (p - p(u=0))/u * u + p(u=0) == p
        let back = dd.mul_var(Var::U, 1).add(&p.at_zero(Var::U));
        assert_eq!(back, p);
    }

    #[test]
    fn substitution() {
        // s1 -> u*s0 + s1 applied to p = z*s1^2
        let mut p = Poly::zero();
        p.add_term(Exponents::default().with(Var::Z, 1).with(Var::S1, 2), r(1));
        let sub = Poly::var(Var::U)
            .mul(&Poly::var(Var::S0))
            .add(&Poly::var(Var::S1));
        let q = p.substitute_slots(&[(Var::S1, sub)]);
        // z(u s0 + s1)^2 = z u^2 s0^2 + 2 z u s0 s1 + z s1^2
        assert_eq!(q.num_terms(), 3);
        assert_eq!(
            q.coef(
                &Exponents::default()
                    .with(Var::Z, 1)
                    .with(Var::U, 1)
                    .with(Var::S0, 1)
                    .with(Var::S1, 1)
            ),
            r(2)
        );
    }

    #[test]
    fn eval_exact_and_f64_agree() {
        let mut p = Poly::zero();
        p.add_term(Exponents::default().with(Var::Z, 2).with(Var::U, 1), r(3));
        p.add_term(Exponents::default().with(Var::S0, 2), r(1));
        p.add_term(Exponents::default(), r(-7));
        let mut exact = BTreeMap::new();
        exact.insert(Var::Z, Rat::new(1.into(), 2.into()));
        exact.insert(Var::U, Rat::new(2.into(), 3.into()));
        exact.insert(Var::S0, Rat::new((-1).into(), 4.into()));
        let mut fl = BTreeMap::new();
        for (k, v) in &exact {
            fl.insert(*k, crate::rat::rat_to_f64(v));
        }
        let a = crate::rat::rat_to_f64(&p.eval_exact(&exact).unwrap());
        let b = p.eval_f64(&fl).unwrap();
        assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        // missing variable reported by tag
        let empty = BTreeMap::new();
        assert_eq!(p.eval_exact(&empty), Err(Var::Z));
    }
}
