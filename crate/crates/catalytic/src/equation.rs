//! Catalytic equations: the user-facing Q/R forms, validation, the R-form
//! substitution, and cached formal partial derivatives.
//!
//! An equation in Q mode is
//! `M(z,u) = z*Q(z,u,a0,a1,a2) + F0(z,u)` where `a0 = M(z,u)`,
//! `a1 = (M - M0)/u` and (for k=2) `a2 = (M - M0 - u*M1)/u^2`.
//! The R form eliminates the divided differences: with
//! `M = u^2*D + u*M1 + M0` (k=2) the equation becomes
//! `u^2*y0 + u*y1 + y2 = r(z,u,y0,y1,y2)` at `(y0,y1,y2) = (D,M1,M0)`.
//! R mode lets the user supply `r` directly (minus its additive part), which
//! covers equations that mention `M0` itself on the right-hand side.

use crate::poly::{Exponents, Poly, Var};
use crate::rat::{format_rat, parse_rat, Rat};
use num_traits::Signed;
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Q,
    R,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linearity {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EquationError {
    Syntax(String),
    NegativeCoefficient(String),
    UnsupportedK(i64),
    OrderTooHigh(String),
    MissingVariable(&'static str),
}

impl fmt::Display for EquationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EquationError::Syntax(msg) => write!(f, "syntax error: {msg}"),
            EquationError::NegativeCoefficient(m) => {
                write!(f, "negative coefficient in monomial {m}")
            }
            EquationError::UnsupportedK(k) => write!(f, "unsupported k = {k}, expected 1 or 2"),
            EquationError::OrderTooHigh(m) => write!(f, "derivative order too high: {m}"),
            EquationError::MissingVariable(v) => write!(f, "missing variable {v} in point"),
        }
    }
}

impl std::error::Error for EquationError {}

/// A validated catalytic equation with exact rational coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalyticEquation {
    pub k: u8,
    pub mode: Mode,
    /// Q (in Q mode) or r - f0 (in R mode); slots are a_i resp. y_i.
    pub q_or_r: Poly,
    /// Additive term, a polynomial in (z,u) with non-negative coefficients.
    pub f0: Poly,
    /// True when some term carries the mark variable w.
    pub has_mark: bool,
}

fn var_name(v: Var, mode: Mode) -> &'static str {
    match (v, mode) {
        (Var::Z, _) => "z",
        (Var::U, _) => "u",
        (Var::W, _) => "w",
        (Var::S0, Mode::Q) => "a0",
        (Var::S1, Mode::Q) => "a1",
        (Var::S2, Mode::Q) => "a2",
        (Var::S0, Mode::R) => "y0",
        (Var::S1, Mode::R) => "y1",
        (Var::S2, Mode::R) => "y2",
    }
}

fn monomial_name(coef: &Rat, exps: &Exponents, mode: Mode) -> String {
    let mut s = format_rat(coef);
    for (i, v) in crate::poly::ALL_VARS.iter().enumerate() {
        if exps.0[i] > 0 {
            s.push('*');
            s.push_str(var_name(*v, mode));
            if exps.0[i] > 1 {
                s.push_str(&format!("^{}", exps.0[i]));
            }
        }
    }
    s
}

fn parse_term(
    obj: &Value,
    mode: Mode,
    k: u8,
    f0: bool,
) -> Result<(Exponents, Rat), EquationError> {
    let map = obj
        .as_object()
        .ok_or_else(|| EquationError::Syntax("term is not an object".into()))?;
    let mut exps = Exponents::default();
    let mut coef = None;
    for (key, val) in map {
        if key == "coef" {
            let text = val
                .as_str()
                .ok_or_else(|| EquationError::Syntax("coef must be a string".into()))?;
            coef = Some(parse_rat(text).map_err(EquationError::Syntax)?);
            continue;
        }
        let var = match (key.as_str(), mode) {
            ("z", _) => Var::Z,
            ("u", _) => Var::U,
            ("w", _) if !f0 => Var::W,
            ("a0", Mode::Q) if !f0 => Var::S0,
            ("a1", Mode::Q) if !f0 => Var::S1,
            ("a2", Mode::Q) if !f0 => Var::S2,
            ("y0", Mode::R) if !f0 => Var::S0,
            ("y1", Mode::R) if !f0 => Var::S1,
            ("y2", Mode::R) if !f0 => Var::S2,
            _ => {
                return Err(EquationError::Syntax(format!(
                    "unexpected variable {key:?} in {} term",
                    if f0 { "f0" } else { "equation" }
                )))
            }
        };
        let e = val
            .as_u64()
            .ok_or_else(|| EquationError::Syntax(format!("exponent of {key} not a non-negative integer")))?;
        if e > u16::MAX as u64 {
            return Err(EquationError::Syntax(format!("exponent of {key} too large")));
        }
        exps = exps.with(var, e as u16);
    }
    if k == 1 && exps.get(Var::S2) > 0 {
        return Err(EquationError::Syntax(
            "third unknown (a2/y2) not allowed for k = 1".into(),
        ));
    }
    let coef = coef.ok_or_else(|| EquationError::Syntax("term without coef".into()))?;
    if coef.is_negative() {
        return Err(EquationError::NegativeCoefficient(monomial_name(
            &coef, &exps, mode,
        )));
    }
    Ok((exps, coef))
}

/// Parses and validates an equation document (UTF-8 JSON).
pub fn parse_equation(document: &str) -> Result<CatalyticEquation, EquationError> {
    let root: Value = serde_json::from_str(document)
        .map_err(|e| EquationError::Syntax(format!("invalid JSON: {e}")))?;
    let obj = root
        .as_object()
        .ok_or_else(|| EquationError::Syntax("document is not a JSON object".into()))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "k" | "mode" | "terms" | "f0_terms") {
            return Err(EquationError::Syntax(format!("unknown field {key:?}")));
        }
    }
    let k = obj
        .get("k")
        .and_then(Value::as_i64)
        .ok_or_else(|| EquationError::Syntax("missing integer field k".into()))?;
    if k != 1 && k != 2 {
        return Err(EquationError::UnsupportedK(k));
    }
    let k = k as u8;
    let mode = match obj.get("mode").and_then(Value::as_str) {
        Some("Q") => Mode::Q,
        Some("R") => Mode::R,
        _ => return Err(EquationError::Syntax("mode must be \"Q\" or \"R\"".into())),
    };
    let mut q_or_r = Poly::zero();
    if let Some(terms) = obj.get("terms") {
        let arr = terms
            .as_array()
            .ok_or_else(|| EquationError::Syntax("terms must be an array".into()))?;
        for t in arr {
            let (exps, coef) = parse_term(t, mode, k, false)?;
            if mode == Mode::R && exps.get(Var::Z) == 0 {
                return Err(EquationError::Syntax(format!(
                    "R-mode term {} lacks a factor z",
                    monomial_name(&coef, &exps, mode)
                )));
            }
            q_or_r.add_term(exps, coef);
        }
    }
    let mut f0 = Poly::zero();
    if let Some(terms) = obj.get("f0_terms") {
        let arr = terms
            .as_array()
            .ok_or_else(|| EquationError::Syntax("f0_terms must be an array".into()))?;
        for t in arr {
            let (exps, coef) = parse_term(t, mode, k, true)?;
            f0.add_term(exps, coef);
        }
    }
    let has_mark = q_or_r.depends_on(Var::W);
    Ok(CatalyticEquation {
        k,
        mode,
        q_or_r,
        f0,
        has_mark,
    })
}

impl CatalyticEquation {
    /// Linear iff the total degree in the unknowns (a_i resp. y_i) is at most 1.
    pub fn classify(&self) -> Linearity {
        if self.q_or_r.slot_degree() <= 1 {
            Linearity::Linear
        } else {
            Linearity::Nonlinear
        }
    }

    /// Fixes the mark variable to an exact rational value, rescaling the
    /// coefficients. The result carries no mark.
    pub fn substitute_w(&self, value: &Rat) -> CatalyticEquation {
        CatalyticEquation {
            k: self.k,
            mode: self.mode,
            q_or_r: self.q_or_r.substitute_w(value),
            f0: self.f0.clone(),
            has_mark: false,
        }
    }

    /// SHA-256 over a canonical rendering; used for report provenance.
    pub fn canonical_hash(&self) -> String {
        let mut text = format!(
            "k={};mode={};",
            self.k,
            match self.mode {
                Mode::Q => "Q",
                Mode::R => "R",
            }
        );
        for (e, c) in self.q_or_r.terms() {
            text.push_str(&monomial_name(c, e, self.mode));
            text.push(';');
        }
        text.push('|');
        for (e, c) in self.f0.terms() {
            text.push_str(&monomial_name(c, e, self.mode));
            text.push(';');
        }
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Multi-index for partial derivatives of the R form, over (u, y0, y1, y2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct DerivIndex {
    pub u: u8,
    pub y: [u8; 3],
}

impl DerivIndex {
    pub fn u(n: u8) -> Self {
        DerivIndex {
            u: n,
            ..Default::default()
        }
    }

    pub fn y(i: usize, n: u8) -> Self {
        let mut d = DerivIndex::default();
        d.y[i] = n;
        d
    }

    pub fn total(&self) -> u8 {
        self.u + self.y[0] + self.y[1] + self.y[2]
    }

    pub fn plus(&self, other: &DerivIndex) -> DerivIndex {
        DerivIndex {
            u: self.u + other.u,
            y: [
                self.y[0] + other.y[0],
                self.y[1] + other.y[1],
                self.y[2] + other.y[2],
            ],
        }
    }
}

/// Internal cache key: derivative order in z plus a `DerivIndex`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
struct DerivKey {
    z: u8,
    idx: DerivIndex,
}

/// The R form of an equation: `u^k y0 + ... = r(z,u,y0,..)` with a derivative
/// cache. Equations are immutable after parse, so cache entries are never
/// invalidated.
pub struct RForm {
    pub k: u8,
    pub r: Poly,
    /// f0 as embedded in r (derivatives in the y_i kill it).
    pub f0: Poly,
    cache: Mutex<BTreeMap<DerivKey, Poly>>,
}

impl Clone for RForm {
    fn clone(&self) -> Self {
        RForm {
            k: self.k,
            r: self.r.clone(),
            f0: self.f0.clone(),
            cache: Mutex::new(self.cache.lock().unwrap().clone()),
        }
    }
}

impl fmt::Debug for RForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RForm(k={}, r={})", self.k, self.r.display_with(["y0", "y1", "y2"]))
    }
}

/// Performs the Q -> R substitution (Q mode) or re-attaches f0 (R mode).
pub fn build_r_form(eq: &CatalyticEquation) -> RForm {
    let r = match eq.mode {
        Mode::R => eq.q_or_r.add(&eq.f0),
        Mode::Q => {
            let y0 = Poly::var(Var::S0);
            let y1 = Poly::var(Var::S1);
            let y2 = Poly::var(Var::S2);
            let u = Poly::var(Var::U);
            let subs = if eq.k == 2 {
                // a0 -> u^2 y0 + u y1 + y2, a1 -> u y0 + y1, a2 -> y0
                let m = u.mul(&u).mul(&y0).add(&u.mul(&y1)).add(&y2);
                let dm = u.mul(&y0).add(&y1);
                vec![(Var::S0, m), (Var::S1, dm), (Var::S2, y0)]
            } else {
                // a0 -> u y0 + y1, a1 -> y0
                let m = u.mul(&y0).add(&y1);
                vec![(Var::S0, m), (Var::S1, y0)]
            };
            eq.q_or_r
                .substitute_slots(&subs)
                .mul_var(Var::Z, 1)
                .add(&eq.f0)
        }
    };
    debug_assert!(!r.has_negative_coef());
    debug_assert!(r.sub(&eq.f0).min_degree(Var::Z).map_or(true, |d| d >= 1));
    RForm {
        k: eq.k,
        r,
        f0: eq.f0.clone(),
        cache: Mutex::new(BTreeMap::new()),
    }
}

impl RForm {
    /// Exact formal partial derivative over (u, y0, y1, y2), cached.
    /// Total order is capped at 3, which covers every use in the pipelines.
    pub fn partial(&self, idx: &DerivIndex) -> Result<Poly, EquationError> {
        if idx.total() > 3 {
            return Err(EquationError::OrderTooHigh(format!("{idx:?}")));
        }
        Ok(self.deriv(0, idx))
    }

    /// Unchecked derivative, additionally supporting d/dz (needed by the
    /// continuation right-hand sides).
    pub(crate) fn deriv(&self, z_order: u8, idx: &DerivIndex) -> Poly {
        let key = DerivKey {
            z: z_order,
            idx: *idx,
        };
        if let Some(p) = self.cache.lock().unwrap().get(&key) {
            return p.clone();
        }
        let mut p = self.r.clone();
        for _ in 0..z_order {
            p = p.diff(Var::Z);
        }
        for _ in 0..idx.u {
            p = p.diff(Var::U);
        }
        for (i, &n) in idx.y.iter().enumerate() {
            for _ in 0..n {
                p = p.diff(Var::slot(i));
            }
        }
        self.cache.lock().unwrap().insert(key, p.clone());
        p
    }

    /// Exact evaluation; the point must assign every variable r depends on.
    pub fn eval_exact(&self, point: &BTreeMap<Var, Rat>) -> Result<Rat, EquationError> {
        self.r
            .eval_exact(point)
            .map_err(|v| EquationError::MissingVariable(var_name(v, Mode::R)))
    }

    /// Binary64 evaluation with the documented summation order of `Poly::eval_f64`.
    pub fn eval_f64(&self, point: &BTreeMap<Var, f64>) -> Result<f64, EquationError> {
        self.r
            .eval_f64(point)
            .map_err(|v| EquationError::MissingVariable(var_name(v, Mode::R)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rat::rat_from_i64;

    pub(crate) const LP12: &str = r#"{
        "k": 2, "mode": "Q",
        "terms": [
            {"coef": "1", "u": 1, "w": 1, "a0": 1},
            {"coef": "1", "u": 2, "a0": 1},
            {"coef": "1", "a1": 1},
            {"coef": "1", "a2": 1}
        ],
        "f0_terms": [{"coef": "1"}]
    }"#;

    #[test]
    fn parse_lp12() {
        let eq = parse_equation(LP12).unwrap();
        assert_eq!(eq.k, 2);
        assert_eq!(eq.mode, Mode::Q);
        assert_eq!(eq.q_or_r.num_terms(), 4);
        assert!(eq.has_mark);
        assert_eq!(eq.classify(), Linearity::Linear);
    }

    #[test]
    fn parse_rejections() {
        let neg = r#"{"k":2,"mode":"Q","terms":[{"coef":"-1","a0":1}]}"#;
        match parse_equation(neg) {
            Err(EquationError::NegativeCoefficient(m)) => assert!(m.contains("a0")),
            other => panic!("expected NegativeCoefficient, got {other:?}"),
        }
        let badk = r#"{"k":3,"mode":"Q","terms":[]}"#;
        assert!(matches!(
            parse_equation(badk),
            Err(EquationError::UnsupportedK(3))
        ));
        let malformed = "not json";
        assert!(matches!(
            parse_equation(malformed),
            Err(EquationError::Syntax(_))
        ));
        // R-mode terms must carry z
        let rmode = r#"{"k":2,"mode":"R","terms":[{"coef":"1","y0":1}]}"#;
        assert!(matches!(parse_equation(rmode), Err(EquationError::Syntax(_))));
        // a2 forbidden for k=1
        let k1a2 = r#"{"k":1,"mode":"Q","terms":[{"coef":"1","a2":1}]}"#;
        assert!(matches!(parse_equation(k1a2), Err(EquationError::Syntax(_))));
    }

    #[test]
    fn empty_equation_is_valid() {
        let eq = parse_equation(r#"{"k":2,"mode":"Q","terms":[],"f0_terms":[]}"#).unwrap();
        assert!(eq.q_or_r.is_zero());
        assert!(eq.f0.is_zero());
    }

    #[test]
    fn r_form_single_substitution() {
        // Q = a2, F0 = 0, k = 2  =>  R = z*y0
        let eq = parse_equation(r#"{"k":2,"mode":"Q","terms":[{"coef":"1","a2":1}]}"#).unwrap();
        let rf = build_r_form(&eq);
        let expect = Poly::var(Var::Z).mul(&Poly::var(Var::S0));
        assert_eq!(rf.r, expect);
    }

    #[test]
    fn r_form_lp12() {
        // R = z(u w + u^2)(u^2 y0 + u y1 + y2) + z(u y0 + y1) + z y0 + 1
        let eq = parse_equation(LP12).unwrap();
        let rf = build_r_form(&eq);
        let z = Poly::var(Var::Z);
        let u = Poly::var(Var::U);
        let w = Poly::var(Var::W);
        let y0 = Poly::var(Var::S0);
        let y1 = Poly::var(Var::S1);
        let y2 = Poly::var(Var::S2);
        let m = u.pow(2).mul(&y0).add(&u.mul(&y1)).add(&y2);
        let expect = z
            .mul(&u.mul(&w).add(&u.pow(2)))
            .mul(&m)
            .add(&z.mul(&u.mul(&y0).add(&y1)))
            .add(&z.mul(&y0))
            .add(&Poly::one());
        assert_eq!(rf.r, expect);
        assert!(!rf.r.has_negative_coef());
    }

    #[test]
    fn partial_derivatives() {
        let eq = parse_equation(LP12).unwrap();
        let eq = eq.substitute_w(&rat_from_i64(1));
        let rf = build_r_form(&eq);
        // R_{y0} = z(u+u^2)u^2 + zu + z = z u^4 + z u^3 + z u + z
        let ry0 = rf.partial(&DerivIndex::y(0, 1)).unwrap();
        let z = Poly::var(Var::Z);
        let u = Poly::var(Var::U);
        let expect = z.mul(&u.pow(4).add(&u.pow(3)).add(&u).add(&Poly::one()));
        assert_eq!(ry0, expect);
        // linear equation: second derivative in y0 vanishes
        assert!(rf.partial(&DerivIndex::y(0, 2)).unwrap().is_zero());
        // order cap
        let too_high = DerivIndex {
            u: 2,
            y: [2, 0, 0],
        };
        assert!(rf.partial(&too_high).is_err());
    }

    #[test]
    fn partial_commutes() {
        let eq = parse_equation(LP12).unwrap();
        let rf = build_r_form(&eq);
        let a = DerivIndex { u: 1, y: [1, 0, 0] };
        let b = DerivIndex { u: 0, y: [0, 1, 0] };
        let combined = rf.partial(&a.plus(&b)).unwrap();
        let nested = {
            let first = rf.partial(&a).unwrap();
            first.diff(Var::S1)
        };
        assert_eq!(combined, nested);
    }

    #[test]
    fn eval_r_examples() {
        // eval(z*y0, {z:1/2, y0:1/3}) = 1/6
        let eq = parse_equation(r#"{"k":2,"mode":"Q","terms":[{"coef":"1","a2":1}]}"#).unwrap();
        let rf = build_r_form(&eq);
        let mut pt = BTreeMap::new();
        pt.insert(Var::Z, Rat::new(1.into(), 2.into()));
        pt.insert(Var::S0, Rat::new(1.into(), 3.into()));
        assert_eq!(rf.eval_exact(&pt).unwrap(), Rat::new(1.into(), 6.into()));
        // missing variable
        let empty = BTreeMap::new();
        assert!(matches!(
            rf.eval_exact(&empty),
            Err(EquationError::MissingVariable(_))
        ));
        // all-zero point gives the constant term of f0
        let eq = parse_equation(LP12).unwrap().substitute_w(&rat_from_i64(1));
        let rf = build_r_form(&eq);
        let mut zeros = BTreeMap::new();
        for v in crate::poly::ALL_VARS {
            zeros.insert(v, Rat::from(num_bigint::BigInt::from(0)));
        }
        assert_eq!(rf.eval_exact(&zeros).unwrap(), rat_from_i64(1));
    }

    #[test]
    fn classify_nonlinear() {
        let eq = parse_equation(
            r#"{"k":2,"mode":"Q","terms":[{"coef":"1","a0":1,"a2":1}]}"#,
        )
        .unwrap();
        assert_eq!(eq.classify(), Linearity::Nonlinear);
    }

    #[test]
    fn hash_is_stable_and_term_order_independent() {
        let a = parse_equation(LP12).unwrap();
        let b = parse_equation(
            r#"{
            "k": 2, "mode": "Q",
            "terms": [
                {"coef": "1", "a2": 1},
                {"coef": "1", "a1": 1},
                {"coef": "1", "u": 2, "a0": 1},
                {"coef": "1", "u": 1, "w": 1, "a0": 1}
            ],
            "f0_terms": [{"coef": "1"}]
        }"#,
        )
        .unwrap();
        assert_eq!(a.canonical_hash(), b.canonical_hash());
    }
}
