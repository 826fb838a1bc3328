//! Exact truncated series solutions of catalytic equations.
//!
//! Two solvers are provided. `solve_series` iterates the equation as a fixed
//! point in the full bivariate series ring; it is exact in both variables and
//! is the oracle used by every invariant check, but its cost grows quickly
//! with the truncation order. `solve_sections` computes only the sections
//! `M0(z)` and `M1(z)` up to a (possibly large) order: it runs level by level
//! in z and discards u-degrees that provably cannot influence the requested
//! sections. For a k-th order equation the u-degree of a coefficient can
//! decrease by at most k per z-step (only the substitution slot y0 reads
//! coefficients below the current degree; y1 and y2 see the sections alone),
//! so at level m every degree above `k*(N-m) + k + 2` is dead weight and is
//! dropped. The sections coming out of the truncated solver are exact.

use crate::equation::{build_r_form, CatalyticEquation, RForm};
use crate::poly::Var;
use crate::rat::{add_assign_fast, mul_fast, Rat};
use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum SeriesError {
    /// The u-degree needed at some level reached the configured cap.
    UDegreeCapExceeded { cap: usize },
    /// A computed coefficient violated non-negativity; this falsifies the
    /// positivity theory and is treated as an internal bug signal.
    NegativeCoefficientDetected(String),
    /// The equation still carries the mark variable; substitute w first.
    UnsubstitutedMark,
}

impl fmt::Display for SeriesError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeriesError::UDegreeCapExceeded { cap } => {
                write!(f, "u-degree cap {cap} exceeded")
            }
            SeriesError::NegativeCoefficientDetected(m) => {
                write!(f, "negative coefficient detected: {m}")
            }
            SeriesError::UnsubstitutedMark => {
                write!(f, "equation carries a mark variable; substitute w first")
            }
        }
    }
}

impl std::error::Error for SeriesError {}

/// Dense univariate polynomial in u; trailing zeros are trimmed so the
/// representation is canonical.
pub type UPoly = Vec<Rat>;

fn trim(p: &mut UPoly) {
    while p.last().map_or(false, |c| c.is_zero()) {
        p.pop();
    }
}

/// acc += s * u^shift * a, truncating above `cap` u-degree.
fn upoly_axpy(acc: &mut UPoly, a: &[Rat], s: &Rat, shift: usize, cap: usize) {
    if s.is_zero() {
        return;
    }
    for (j, c) in a.iter().enumerate() {
        let deg = j + shift;
        if deg > cap {
            break;
        }
        if c.is_zero() {
            continue;
        }
        if acc.len() <= deg {
            acc.resize(deg + 1, Rat::zero());
        }
        let prod = mul_fast(c, s);
        add_assign_fast(&mut acc[deg], &prod);
    }
}

fn all_integer(p: &[Rat]) -> bool {
    p.iter().all(|c| c.denom().is_one())
}

/// Truncated polynomial product accumulator with a fast integer lane used
/// when every coefficient has denominator one (the common case for
/// combinatorial equations).
struct ConvAcc {
    ints: Option<Vec<BigInt>>,
    rats: Vec<Rat>,
    cap: usize,
}

impl ConvAcc {
    fn new(cap: usize) -> Self {
        ConvAcc {
            ints: Some(vec![BigInt::zero(); cap + 1]),
            rats: Vec::new(),
            cap,
        }
    }

    fn spill(&mut self) {
        if let Some(ints) = self.ints.take() {
            let mut rats = vec![Rat::zero(); self.cap + 1];
            for (i, v) in ints.into_iter().enumerate() {
                if !v.is_zero() {
                    rats[i] = Rat::from(v);
                }
            }
            self.rats = rats;
        }
    }

    fn add_product(&mut self, a: &[Rat], b: &[Rat]) {
        if a.is_empty() || b.is_empty() {
            return;
        }
        if let Some(ints) = &mut self.ints {
            if all_integer(a) && all_integer(b) {
                for (i, ca) in a.iter().enumerate() {
                    if i > self.cap {
                        break;
                    }
                    if ca.is_zero() {
                        continue;
                    }
                    let na = ca.numer();
                    let jmax = (self.cap - i).min(b.len().saturating_sub(1));
                    for (j, cb) in b.iter().take(jmax + 1).enumerate() {
                        if cb.is_zero() {
                            continue;
                        }
                        ints[i + j] += na * cb.numer();
                    }
                }
                return;
            }
            self.spill();
        }
        if self.rats.is_empty() {
            self.rats = vec![Rat::zero(); self.cap + 1];
        }
        for (i, ca) in a.iter().enumerate() {
            if i > self.cap {
                break;
            }
            if ca.is_zero() {
                continue;
            }
            let jmax = (self.cap - i).min(b.len().saturating_sub(1));
            for (j, cb) in b.iter().take(jmax + 1).enumerate() {
                if cb.is_zero() {
                    continue;
                }
                let prod = mul_fast(ca, cb);
                add_assign_fast(&mut self.rats[i + j], &prod);
            }
        }
    }

    fn finish(mut self) -> UPoly {
        self.spill();
        let mut out = self.rats;
        trim(&mut out);
        out
    }
}

/// Kronecker-substitution machinery for the wide self-products of the level
/// solver (the Delta-power updates dominate everything else). Each level's
/// u-polynomial is packed into one big unsigned integer with a byte stride
/// drawn from a power-of-two "epoch", so a level is packed at most a handful
/// of times over the whole run; a pair product is then a single big-integer
/// multiplication that num-bigint performs subquadratically, and the result
/// is unpacked once and accumulated. Only valid for non-negative integer
/// coefficients, which is exactly what solution series provide.
struct PackCache {
    /// packs[level][epoch] lazily built packed form (stride 32 << epoch bytes).
    packs: Vec<Vec<Option<num_bigint::BigUint>>>,
    /// max coefficient bits per level; u64::MAX marks ineligible levels
    /// (negative or non-integer coefficients).
    max_bits: Vec<u64>,
}

const PACK_EPOCHS: usize = 12;

impl PackCache {
    fn new() -> Self {
        PackCache {
            packs: Vec::new(),
            max_bits: Vec::new(),
        }
    }

    /// Registers the next level (must be called in level order).
    fn push_level(&mut self, p: &[Rat]) {
        let mut bits = 0u64;
        let mut ok = true;
        for c in p {
            if !c.denom().is_one() || c.numer().sign() == num_bigint::Sign::Minus {
                ok = false;
                break;
            }
            bits = bits.max(c.numer().bits());
        }
        self.max_bits.push(if ok { bits } else { u64::MAX });
        self.packs.push(vec![None; PACK_EPOCHS]);
    }

    fn packed<'a>(
        &'a mut self,
        level: usize,
        epoch: usize,
        data: &[Rat],
    ) -> &'a num_bigint::BigUint {
        let slot = &mut self.packs[level][epoch];
        if slot.is_none() {
            let stride = 32usize << epoch;
            let mut bytes = vec![0u8; data.len() * stride];
            for (i, c) in data.iter().enumerate() {
                if num_traits::Zero::is_zero(c) {
                    continue;
                }
                let le = c.numer().to_bytes_le().1;
                bytes[i * stride..i * stride + le.len()].copy_from_slice(&le);
            }
            *slot = Some(num_bigint::BigUint::from_bytes_le(&bytes));
        }
        slot.as_ref().unwrap()
    }
}

/// Accumulates `scale * a_levels[i] * b_levels[j]` into `acc` (BigInt lane)
/// via the pack caches when profitable; `b_side = None` means the second
/// factor comes from the same cache and level list (self-products). Returns
/// false when the pair is not eligible so the caller can fall back to
/// schoolbook convolution.
fn kronecker_pair(
    acc: &mut [BigInt],
    cache_a: &mut PackCache,
    a_levels: &[UPoly],
    i: usize,
    b_side: Option<(&mut PackCache, &[UPoly])>,
    j: usize,
    cap: usize,
    scale: u32,
) -> bool {
    let wa = a_levels[i].len();
    let wb = match &b_side {
        Some((_, lv)) => lv[j].len(),
        None => a_levels[j].len(),
    };
    if wa.min(wb) < 16 {
        return false;
    }
    let bits_a = cache_a.max_bits[i];
    let bits_b = match &b_side {
        Some((cb, _)) => cb.max_bits[j],
        None => cache_a.max_bits[j],
    };
    if bits_a == u64::MAX || bits_b == u64::MAX || bits_a == 0 || bits_b == 0 {
        return bits_a == 0 || bits_b == 0; // all-zero factor: nothing to add
    }
    let need_bits = bits_a + bits_b + 64 - (wa.min(wb) as u64).leading_zeros() as u64 + 2;
    let need_bytes = (need_bits + 7) / 8;
    let mut epoch = 0usize;
    while (32u64 << epoch) < need_bytes {
        epoch += 1;
        if epoch >= PACK_EPOCHS {
            return false;
        }
    }
    let stride = 32usize << epoch;
    let pa = cache_a.packed(i, epoch, &a_levels[i]).clone();
    let pb = match b_side {
        Some((cb, lv)) => cb.packed(j, epoch, &lv[j]).clone(),
        None => cache_a.packed(j, epoch, &a_levels[j]).clone(),
    };
    let product = pa * pb;
    let bytes = product.to_bytes_le();
    let out_len = (wa + wb - 1).min(cap + 1).min(acc.len());
    for (idx, slot) in acc.iter_mut().enumerate().take(out_len) {
        let lo = idx * stride;
        if lo >= bytes.len() {
            break;
        }
        let hi = (lo + stride).min(bytes.len());
        let chunk = num_bigint::BigUint::from_bytes_le(&bytes[lo..hi]);
        if !num_traits::Zero::is_zero(&chunk) {
            let mut v = BigInt::from(chunk);
            if scale != 1 {
                v *= scale;
            }
            *slot += v;
        }
    }
    true
}

/// Plain integer convolution into a BigInt accumulator (used when the
/// Kronecker path is not profitable).
fn schoolbook_int(acc: &mut [BigInt], a: &[Rat], b: &[Rat], cap: usize, scale: u32) {
    for (i, ca) in a.iter().enumerate() {
        if i > cap {
            break;
        }
        if ca.is_zero() {
            continue;
        }
        let na = ca.numer();
        let jmax = (cap - i).min(b.len().saturating_sub(1));
        for (j, cb) in b.iter().take(jmax + 1).enumerate() {
            if cb.is_zero() {
                continue;
            }
            let mut prod = na * cb.numer();
            if scale != 1 {
                prod *= scale;
            }
            acc[i + j] += prod;
        }
    }
}

/// Truncated power series in z whose coefficients are polynomials in u.
#[derive(Clone, PartialEq, Eq)]
pub struct BivariateSeries {
    /// coeffs[n] is the u-polynomial at z^n; the length is order + 1.
    pub coeffs: Vec<UPoly>,
}

impl fmt::Debug for BivariateSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BivariateSeries(order={})", self.order())?;
        for (n, p) in self.coeffs.iter().enumerate().take(6) {
            let text: Vec<String> = p.iter().map(crate::rat::format_rat).collect();
            writeln!(f, "  z^{n}: [{}]", text.join(", "))?;
        }
        Ok(())
    }
}

impl BivariateSeries {
    pub fn zero(order: usize) -> Self {
        BivariateSeries {
            coeffs: vec![Vec::new(); order + 1],
        }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coef(&self, n: usize, j: usize) -> Rat {
        self.coeffs
            .get(n)
            .and_then(|p| p.get(j))
            .cloned()
            .unwrap_or_else(Rat::zero)
    }

    /// The u^j section as a univariate series in z.
    pub fn section(&self, j: usize) -> UnivariateSeries {
        UnivariateSeries {
            coeffs: self
                .coeffs
                .iter()
                .map(|p| p.get(j).cloned().unwrap_or_else(Rat::zero))
                .collect(),
        }
    }

    /// Drops the first `k` u-coefficients of every level (exact division by
    /// u^k after the lower sections are removed).
    fn shift_down(&self, k: usize) -> BivariateSeries {
        let coeffs = self
            .coeffs
            .iter()
            .map(|p| {
                if p.len() > k {
                    p[k..].to_vec()
                } else {
                    Vec::new()
                }
            })
            .collect();
        BivariateSeries { coeffs }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|p| p.is_empty())
    }

    pub fn max_u_degree(&self) -> usize {
        self.coeffs
            .iter()
            .map(|p| p.len().saturating_sub(1))
            .max()
            .unwrap_or(0)
    }

    fn sub(&self, other: &BivariateSeries) -> BivariateSeries {
        let order = self.order().max(other.order());
        let mut out = BivariateSeries::zero(order);
        for n in 0..=order {
            let mut p = UPoly::new();
            if let Some(a) = self.coeffs.get(n) {
                upoly_axpy(&mut p, a, &Rat::one(), 0, usize::MAX);
            }
            if let Some(b) = other.coeffs.get(n) {
                upoly_axpy(&mut p, b, &(-Rat::one()), 0, usize::MAX);
            }
            trim(&mut p);
            out.coeffs[n] = p;
        }
        out
    }

    fn mul(&self, other: &BivariateSeries, order: usize, ucap: usize) -> BivariateSeries {
        let mut out = BivariateSeries::zero(order);
        for n in 0..=order {
            let mut acc = ConvAcc::new(ucap);
            for i in 0..=n.min(self.order()) {
                let j = n - i;
                if j > other.order() {
                    continue;
                }
                acc.add_product(&self.coeffs[i], &other.coeffs[j]);
            }
            out.coeffs[n] = acc.finish();
        }
        out
    }

    /// Evaluates the truncation at a numeric z; returns the resulting
    /// polynomial in u as f64 coefficients.
    pub fn eval_at_z_f64(&self, z: f64) -> Vec<f64> {
        let width = self.coeffs.iter().map(Vec::len).max().unwrap_or(0);
        let mut out = vec![0.0; width];
        let mut zp = 1.0;
        for p in &self.coeffs {
            for (j, c) in p.iter().enumerate() {
                out[j] += crate::rat::rat_to_f64(c) * zp;
            }
            zp *= z;
        }
        out
    }

    pub fn has_negative_coef(&self) -> bool {
        self.coeffs
            .iter()
            .any(|p| p.iter().any(|c| c.is_negative()))
    }
}

/// Truncated power series in z with exact rational coefficients.
#[derive(Clone, PartialEq, Eq)]
pub struct UnivariateSeries {
    pub coeffs: Vec<Rat>,
}

impl fmt::Debug for UnivariateSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head: Vec<String> = self
            .coeffs
            .iter()
            .take(8)
            .map(crate::rat::format_rat)
            .collect();
        write!(f, "UnivariateSeries[{}, ...]", head.join(", "))
    }
}

impl UnivariateSeries {
    pub fn zero(order: usize) -> Self {
        UnivariateSeries {
            coeffs: vec![Rat::zero(); order + 1],
        }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn coef(&self, n: usize) -> Rat {
        self.coeffs.get(n).cloned().unwrap_or_else(Rat::zero)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }

    /// Horner evaluation of the truncation at a numeric point.
    pub fn eval_f64(&self, z: f64) -> f64 {
        let mut acc = 0.0;
        for c in self.coeffs.iter().rev() {
            acc = acc * z + crate::rat::rat_to_f64(c);
        }
        acc
    }

    /// Indices of nonzero coefficients.
    pub fn support(&self) -> Vec<usize> {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(n, _)| n)
            .collect()
    }
}

fn univariate_mul(a: &UnivariateSeries, b: &UnivariateSeries, order: usize) -> UnivariateSeries {
    let mut out = UnivariateSeries::zero(order);
    for i in 0..=order.min(a.order()) {
        let ca = a.coef(i);
        if ca.is_zero() {
            continue;
        }
        for j in 0..=(order - i).min(b.order()) {
            let cb = b.coef(j);
            if cb.is_zero() {
                continue;
            }
            let prod = mul_fast(&ca, &cb);
            add_assign_fast(&mut out.coeffs[i + j], &prod);
        }
    }
    out
}

/// Evaluates the R form at bivariate series arguments, truncated to `order`
/// in z and `ucap` in u. `m` supplies (Delta, M1, M0) through its sections.
fn eval_r_at_series(
    rf: &RForm,
    m: &BivariateSeries,
    order: usize,
    ucap: usize,
) -> Result<BivariateSeries, SeriesError> {
    eval_poly_at_series(&rf.r, rf.k, m, order, ucap)
}

/// Evaluates any polynomial over the (z,u,y...) alphabet at the series
/// arguments supplied by a solution M (the y slots become Delta, M1, M0 for
/// k = 2 resp. Delta, M0 for k = 1).
pub fn eval_poly_at_series(
    poly: &crate::poly::Poly,
    k: u8,
    m: &BivariateSeries,
    order: usize,
    ucap: usize,
) -> Result<BivariateSeries, SeriesError> {
    let k = k as usize;
    let m0 = m.section(0);
    // Slot assignment: (y0, y1, y2) = (Delta, M1, M0) for k = 2 and
    // (y0, y1) = (Delta, M0) for k = 1.
    let m1 = if k == 2 { m.section(1) } else { m.section(0) };
    let delta = m.shift_down(k);

    let mut delta_pows: Vec<BivariateSeries> = vec![];
    let mut m0_pows: Vec<UnivariateSeries> = vec![];
    let mut m1_pows: Vec<UnivariateSeries> = vec![];
    let unit_bi = {
        let mut s = BivariateSeries::zero(order);
        s.coeffs[0] = vec![Rat::one()];
        s
    };
    let unit_uni = {
        let mut s = UnivariateSeries::zero(order);
        s.coeffs[0] = Rat::one();
        s
    };

    let mut out = BivariateSeries::zero(order);
    for (exps, coef) in poly.terms() {
        if exps.get(Var::W) > 0 {
            return Err(SeriesError::UnsubstitutedMark);
        }
        let a = exps.get(Var::Z) as usize;
        let b = exps.get(Var::U) as usize;
        if a > order || b > ucap {
            continue;
        }
        let c = exps.get(Var::S0) as usize;
        let d = exps.get(Var::S1) as usize;
        let e = exps.get(Var::S2) as usize;
        while delta_pows.len() < c {
            let prev = delta_pows.last().unwrap_or(&unit_bi);
            delta_pows.push(prev.mul(&delta, order, ucap));
        }
        while m1_pows.len() < d {
            let prev = m1_pows.last().unwrap_or(&unit_uni);
            m1_pows.push(univariate_mul(prev, &m1, order));
        }
        while m0_pows.len() < e {
            let prev = m0_pows.last().unwrap_or(&unit_uni);
            m0_pows.push(univariate_mul(prev, &m0, order));
        }
        let dc = if c == 0 { &unit_bi } else { &delta_pows[c - 1] };
        let vd = if d == 0 { &unit_uni } else { &m1_pows[d - 1] };
        let ve = if e == 0 { &unit_uni } else { &m0_pows[e - 1] };
        // term = coef * z^a u^b * dc * vd * ve
        for n in a..=order {
            let target = n - a;
            let mut acc = ConvAcc::new(ucap.saturating_sub(b));
            for i in 0..=target.min(dc.order()) {
                if dc.coeffs[i].is_empty() {
                    continue;
                }
                let mut s = Rat::zero();
                let rem = target - i;
                for p in 0..=rem {
                    let vp = vd.coef(p);
                    if vp.is_zero() {
                        continue;
                    }
                    let vq = ve.coef(rem - p);
                    if vq.is_zero() {
                        continue;
                    }
                    let prod = mul_fast(&vp, &vq);
                    add_assign_fast(&mut s, &prod);
                }
                if s.is_zero() {
                    continue;
                }
                acc.add_product(&[mul_fast(&s, coef)], &dc.coeffs[i]);
            }
            let piece = acc.finish();
            upoly_axpy(&mut out.coeffs[n], &piece, &Rat::one(), b, ucap);
        }
    }
    for p in &mut out.coeffs {
        trim(p);
    }
    Ok(out)
}

/// Default u-degree cap: generous enough that no admissible input hits it.
pub fn default_u_cap(eq: &CatalyticEquation, order: usize) -> usize {
    let growth = eq.q_or_r.degree(Var::U).max(1) as usize + eq.k as usize + 1;
    growth * (order + 1) + 8
}

/// Computes the unique power-series solution truncated at z-order `order`,
/// exact in both variables. The fixed point M <- r(M) gains at least one
/// z-order per pass since z divides r - f0; the level engine unrolls that
/// iteration so each coefficient is computed once.
pub fn solve_series(eq: &CatalyticEquation, order: usize) -> Result<BivariateSeries, SeriesError> {
    solve_series_capped(eq, order, default_u_cap(eq, order))
}

pub fn solve_series_capped(
    eq: &CatalyticEquation,
    order: usize,
    ucap: usize,
) -> Result<BivariateSeries, SeriesError> {
    let levels = level_solve(eq, order, Some(ucap))?.levels.expect("retained");
    let m = BivariateSeries { coeffs: levels };
    if m.max_u_degree() + 1 >= ucap {
        return Err(SeriesError::UDegreeCapExceeded { cap: ucap });
    }
    if m.has_negative_coef() {
        return Err(SeriesError::NegativeCoefficientDetected(
            "series solution".into(),
        ));
    }
    Ok(m)
}

/// Splits M into (M0, M1, Delta): for k = 2 that is M = u^2 Delta + u M1 + M0;
/// for k = 1, M = u Delta + M0 (M1 is still reported as the u^1 section).
pub fn extract_sections(
    m: &BivariateSeries,
    k: u8,
) -> (UnivariateSeries, UnivariateSeries, BivariateSeries) {
    (m.section(0), m.section(1), m.shift_down(k as usize))
}

/// The z-order of the first nonzero coefficient of lhs - rhs when the series
/// is plugged back into the equation, or None if the residual vanishes
/// through the truncation order.
pub fn residual_valuation(
    eq: &CatalyticEquation,
    m: &BivariateSeries,
) -> Result<Option<usize>, SeriesError> {
    let rf = build_r_form(eq);
    let order = m.order();
    let ucap = m.max_u_degree() + rf.r.degree(Var::U) as usize + 4;
    let rhs = eval_r_at_series(&rf, m, order, ucap)?;
    let diff = m.sub(&rhs);
    Ok(diff.coeffs.iter().position(|p| !p.is_empty()))
}

// ---------------------------------------------------------------------------
// Level-by-level section solver with the influence-cone truncation.
// ---------------------------------------------------------------------------

/// Exact section series of a solution, from the truncated level solver.
pub struct Sections {
    pub m0: UnivariateSeries,
    pub m1: UnivariateSeries,
}

struct TermGroup {
    /// y-powers (c, d, e) = degrees in (y0, y1, y2).
    c: usize,
    d: usize,
    e: usize,
    /// (z-degree, u-degree, coefficient) of the attached monomial factors.
    terms: Vec<(usize, usize, Rat)>,
}

/// Computes M0 and M1 exactly up to z-order `order` with the influence-cone
/// truncation. Linear equations additionally drop levels older than the
/// z-span of r, so their memory stays linear in the order.
pub fn solve_sections(eq: &CatalyticEquation, order: usize) -> Result<Sections, SeriesError> {
    let out = level_solve(eq, order, None)?;
    Ok(Sections {
        m0: out.m0,
        m1: out.m1,
    })
}

struct LevelOutput {
    m0: UnivariateSeries,
    m1: UnivariateSeries,
    /// Full level polynomials, retained only in full (non-cone) mode.
    levels: Option<Vec<UPoly>>,
}

/// The shared level engine: computes the solution level by level in z.
/// With `full_cap = Some(c)` every u-degree up to c is kept and the levels
/// are retained; with `full_cap = None` the influence cone of the sections
/// drives the truncation and old levels of linear equations are dropped.
fn level_solve(
    eq: &CatalyticEquation,
    order: usize,
    full_cap: Option<usize>,
) -> Result<LevelOutput, SeriesError> {
    if eq.q_or_r.depends_on(Var::W) {
        return Err(SeriesError::UnsubstitutedMark);
    }
    let rf = build_r_form(eq);
    let k = rf.k as usize;
    let cap = |m: usize| -> usize {
        match full_cap {
            Some(c) => c,
            None => k * (order - m) + k + 2,
        }
    };

    // Group terms of r by their y-powers; y-free terms contribute directly.
    let mut direct: Vec<(usize, usize, Rat)> = Vec::new();
    let mut grouped: BTreeMap<(usize, usize, usize), TermGroup> = BTreeMap::new();
    for (exps, coef) in rf.r.terms() {
        let key = (
            exps.get(Var::S0) as usize,
            exps.get(Var::S1) as usize,
            exps.get(Var::S2) as usize,
        );
        let entry = (
            exps.get(Var::Z) as usize,
            exps.get(Var::U) as usize,
            coef.clone(),
        );
        if key == (0, 0, 0) {
            direct.push(entry);
        } else {
            grouped
                .entry(key)
                .or_insert_with(|| TermGroup {
                    c: key.0,
                    d: key.1,
                    e: key.2,
                    terms: Vec::new(),
                })
                .terms
                .push(entry);
        }
    }
    let groups: Vec<TermGroup> = grouped.into_values().collect();
    let max_c = groups.iter().map(|g| g.c).max().unwrap_or(0);
    let linear = full_cap.is_none() && groups.iter().all(|g| g.c + g.d + g.e <= 1);
    let max_zdeg = rf.r.degree(Var::Z) as usize;
    let mut retained: Option<Vec<UPoly>> = full_cap.map(|_| Vec::with_capacity(order + 1));

    // Persistent state: levels of Delta^c, sections, and section powers.
    let mut delta_pows: Vec<Vec<UPoly>> = vec![Vec::new(); max_c];
    let mut delta_caches: Vec<PackCache> = (0..max_c).map(|_| PackCache::new()).collect();
    let mut m0 = UnivariateSeries::zero(order);
    let mut m1 = UnivariateSeries::zero(order);
    let max_d = groups.iter().map(|g| g.d).max().unwrap_or(0);
    let max_e = groups.iter().map(|g| g.e).max().unwrap_or(0);
    // pow[p-1][n] = [z^n] S^p for S in {M1, M0}.
    let mut m1_pows: Vec<Vec<Rat>> = vec![Vec::new(); max_d];
    let mut m0_pows: Vec<Vec<Rat>> = vec![Vec::new(); max_e];
    // v_series[(d,e)][n] = [z^n] (M1^d M0^e), for the group keys present.
    let mut v_keys: Vec<(usize, usize)> = groups
        .iter()
        .map(|g| (g.d, g.e))
        .filter(|&(d, e)| d + e > 0)
        .collect();
    v_keys.sort_unstable();
    v_keys.dedup();
    let mut v_series: BTreeMap<(usize, usize), Vec<Rat>> = BTreeMap::new();
    for key in &v_keys {
        v_series.insert(*key, Vec::new());
    }
    let v_at = |v_series: &BTreeMap<(usize, usize), Vec<Rat>>, d: usize, e: usize, n: usize| {
        if d == 0 && e == 0 {
            if n == 0 {
                Rat::one()
            } else {
                Rat::zero()
            }
        } else {
            v_series[&(d, e)].get(n).cloned().unwrap_or_else(Rat::zero)
        }
    };

    for n in 0..=order {
        let ucap_n = cap(n);
        let mut level: UPoly = Vec::new();
        for (a, b, coef) in &direct {
            if *a == n && *b <= ucap_n {
                upoly_axpy(&mut level, &[coef.clone()], &Rat::one(), *b, ucap_n);
            }
        }
        for g in &groups {
            if g.c == 0 {
                for (a, b, coef) in &g.terms {
                    if *a > n || *b > ucap_n {
                        continue;
                    }
                    let v = v_at(&v_series, g.d, g.e, n - *a);
                    if v.is_zero() {
                        continue;
                    }
                    upoly_axpy(&mut level, &[mul_fast(&v, coef)], &Rat::one(), *b, ucap_n);
                }
                continue;
            }
            // sum_i Delta^c_i(u) * narrow_{n-i}(u), narrow collecting the
            // section products and the monomial factor of each term.
            let dc = &delta_pows[g.c - 1];
            let mut acc = ConvAcc::new(ucap_n);
            for (i, dci) in dc.iter().enumerate().take(n) {
                if dci.is_empty() {
                    continue;
                }
                let mut narrow: UPoly = Vec::new();
                for (a, b, coef) in &g.terms {
                    if *a + i > n || *b > ucap_n {
                        continue;
                    }
                    let v = v_at(&v_series, g.d, g.e, n - i - *a);
                    if v.is_zero() {
                        continue;
                    }
                    upoly_axpy(&mut narrow, &[mul_fast(&v, coef)], &Rat::one(), *b, ucap_n);
                }
                trim(&mut narrow);
                if !narrow.is_empty() {
                    acc.add_product(dci, &narrow);
                }
            }
            let piece = acc.finish();
            upoly_axpy(&mut level, &piece, &Rat::one(), 0, ucap_n);
        }
        trim(&mut level);
        if level.iter().any(|c| c.is_negative()) {
            return Err(SeriesError::NegativeCoefficientDetected(format!(
                "section level {n}"
            )));
        }
        m0.coeffs[n] = level.first().cloned().unwrap_or_else(Rat::zero);
        m1.coeffs[n] = level.get(1).cloned().unwrap_or_else(Rat::zero);
        if let Some(keep) = &mut retained {
            keep.push(level.clone());
        }
        // New Delta level and its powers.
        if max_c >= 1 {
            let delta_level: UPoly = if level.len() > k {
                level[k..].to_vec()
            } else {
                Vec::new()
            };
            delta_caches[0].push_level(&delta_level);
            delta_pows[0].push(delta_level);
            for c in 2..=max_c {
                let ucap_pow = cap(n);
                let eligible = delta_caches[0].max_bits[..=n].iter().all(|&b| b != u64::MAX)
                    && delta_caches[c - 2].max_bits[..n.min(delta_caches[c - 2].max_bits.len())]
                        .iter()
                        .all(|&b| b != u64::MAX);
                let new_level: UPoly = if eligible {
                    let mut ints = vec![BigInt::zero(); ucap_pow + 1];
                    if c == 2 {
                        // symmetric self-product: pair (i, n-i) with i < n-i
                        // counts twice, the diagonal once.
                        let (cache, levels) = (&mut delta_caches[0], &delta_pows[0]);
                        for i in 0..=(n / 2) {
                            let j = n - i;
                            if levels[i].is_empty() || levels[j].is_empty() {
                                continue;
                            }
                            let scale = if i == j { 1 } else { 2 };
                            let done = kronecker_pair(
                                &mut ints, cache, levels, i, None, j, ucap_pow, scale,
                            );
                            if !done {
                                schoolbook_int(&mut ints, &levels[i], &levels[j], ucap_pow, scale);
                            }
                        }
                    } else {
                        let (cl, ch) = delta_caches.split_at_mut(c - 2);
                        let cache1 = &mut cl[0];
                        let cache_prev = &mut ch[0];
                        let d1 = &delta_pows[0];
                        let dprev = &delta_pows[c - 2];
                        for (i, a) in dprev.iter().enumerate().take(n + 1) {
                            if a.is_empty() || d1[n - i].is_empty() {
                                continue;
                            }
                            let done = kronecker_pair(
                                &mut ints,
                                cache_prev,
                                dprev,
                                i,
                                Some((cache1, d1)),
                                n - i,
                                ucap_pow,
                                1,
                            );
                            if !done {
                                schoolbook_int(&mut ints, a, &d1[n - i], ucap_pow, 1);
                            }
                        }
                    }
                    let mut out: UPoly = ints.into_iter().map(Rat::from).collect();
                    trim(&mut out);
                    out
                } else {
                    let d1 = &delta_pows[0];
                    let dprev = &delta_pows[c - 2];
                    let mut acc = ConvAcc::new(ucap_pow);
                    for (i, a) in dprev.iter().enumerate().take(n + 1) {
                        if a.is_empty() {
                            continue;
                        }
                        let b = &d1[n - i];
                        if b.is_empty() {
                            continue;
                        }
                        acc.add_product(a, b);
                    }
                    acc.finish()
                };
                delta_caches[c - 1].push_level(&new_level);
                delta_pows[c - 1].push(new_level);
            }
        }
        // Section powers and their products at this level.
        // Slot y1 is M1 for k = 2 but M0 for k = 1.
        let y1_level = if k == 2 { &m1 } else { &m0 };
        for p in 0..max_d {
            let val = if p == 0 {
                y1_level.coeffs[n].clone()
            } else {
                let prev = &m1_pows[p - 1];
                let mut acc = Rat::zero();
                for (i, a) in prev.iter().enumerate() {
                    if a.is_zero() {
                        continue;
                    }
                    let b = &y1_level.coeffs[n - i];
                    if !b.is_zero() {
                        let prod = mul_fast(a, b);
                        add_assign_fast(&mut acc, &prod);
                    }
                }
                acc
            };
            m1_pows[p].push(val);
        }
        for p in 0..max_e {
            let val = if p == 0 {
                m0.coeffs[n].clone()
            } else {
                let prev = &m0_pows[p - 1];
                let mut acc = Rat::zero();
                for (i, a) in prev.iter().enumerate() {
                    if a.is_zero() {
                        continue;
                    }
                    let b = &m0.coeffs[n - i];
                    if !b.is_zero() {
                        let prod = mul_fast(a, b);
                        add_assign_fast(&mut acc, &prod);
                    }
                }
                acc
            };
            m0_pows[p].push(val);
        }
        for key in &v_keys {
            let (d, e) = *key;
            let val = if d == 0 {
                m0_pows[e - 1][n].clone()
            } else if e == 0 {
                m1_pows[d - 1][n].clone()
            } else {
                let pd = &m1_pows[d - 1];
                let pe = &m0_pows[e - 1];
                let mut acc = Rat::zero();
                for (i, a) in pd.iter().enumerate().take(n + 1) {
                    if a.is_zero() {
                        continue;
                    }
                    let b = &pe[n - i];
                    if !b.is_zero() {
                        let prod = mul_fast(a, b);
                        add_assign_fast(&mut acc, &prod);
                    }
                }
                acc
            };
            v_series.get_mut(key).unwrap().push(val);
        }
        // Linear equations never convolve across more than the z-span of r,
        // so old Delta levels can be dropped to keep memory flat.
        if linear && n > max_zdeg {
            let stale = n - max_zdeg;
            for dp in &mut delta_pows {
                if dp.len() >= stale && !dp[stale - 1].is_empty() {
                    dp[stale - 1] = Vec::new();
                }
            }
        }
    }
    Ok(LevelOutput {
        m0,
        m1,
        levels: retained,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equation::parse_equation;
    use crate::rat::rat_from_i64;

    const LP12: &str = r#"{
        "k": 2, "mode": "Q",
        "terms": [
            {"coef": "1", "u": 1, "a0": 1},
            {"coef": "1", "u": 2, "a0": 1},
            {"coef": "1", "a1": 1},
            {"coef": "1", "a2": 1}
        ],
        "f0_terms": [{"coef": "1"}]
    }"#;

    const MAPS: &str = r#"{
        "k": 1, "mode": "Q",
        "terms": [
            {"coef": "1", "a0": 2},
            {"coef": "2", "u": 1, "a0": 2},
            {"coef": "1", "u": 2, "a0": 2},
            {"coef": "1", "a0": 1},
            {"coef": "1", "u": 1, "a0": 1},
            {"coef": "1", "a1": 1},
            {"coef": "1", "u": 1, "a1": 1}
        ],
        "f0_terms": [{"coef": "1"}]
    }"#;

    /// DP oracle: walks on the non-negative integers with the given step set,
    /// counted by length and end height.
    fn walk_dp(steps: &[i64], n: usize) -> Vec<Vec<num_bigint::BigInt>> {
        use num_bigint::BigInt;
        let height_cap = n * steps.iter().map(|s| s.unsigned_abs() as usize).max().unwrap() + 1;
        let mut levels = vec![vec![BigInt::from(0); height_cap + 1]; n + 1];
        levels[0][0] = BigInt::from(1);
        for t in 0..n {
            for h in 0..=height_cap {
                if levels[t][h] == BigInt::from(0) {
                    continue;
                }
                let v = levels[t][h].clone();
                for s in steps {
                    let nh = h as i64 + s;
                    if nh >= 0 && (nh as usize) <= height_cap {
                        levels[t + 1][nh as usize] += &v;
                    }
                }
            }
        }
        levels
    }

    #[test]
    fn lp12_sections_match_dp_oracle() {
        let eq = parse_equation(LP12).unwrap();
        let m = solve_series(&eq, 8).unwrap();
        let (m0, m1, _) = extract_sections(&m, 2);
        let dp = walk_dp(&[1, -1, 2, -2], 8);
        for n in 0..=8 {
            assert_eq!(m0.coef(n), Rat::from(dp[n][0].clone()), "M0 at n={n}");
            assert_eq!(m1.coef(n), Rat::from(dp[n][1].clone()), "M1 at n={n}");
        }
        // Frozen oracle values, computed with the DP above.
        let m0_vals: Vec<Rat> = m0.coeffs.iter().take(5).cloned().collect();
        assert_eq!(m0_vals, [1, 0, 2, 2, 11].map(rat_from_i64).to_vec());
        let m1_vals: Vec<Rat> = m1.coeffs.iter().take(5).cloned().collect();
        assert_eq!(m1_vals, [0, 1, 1, 5, 11].map(rat_from_i64).to_vec());
    }

    #[test]
    fn maps_known_coefficients() {
        // M(z,0) of the shifted planar-maps equation counts all rooted
        // planar maps: 1, 2, 9, 54 (values of 2(2n)! 3^n / ((n+2)! n!)).
        let eq = parse_equation(MAPS).unwrap();
        let m = solve_series(&eq, 3).unwrap();
        let (m0, _, _) = extract_sections(&m, 1);
        for (n, e) in [1, 2, 9, 54].iter().enumerate() {
            assert_eq!(m0.coef(n), rat_from_i64(*e), "maps M_{n}");
        }
    }

    #[test]
    fn zero_equation() {
        let eq = parse_equation(r#"{"k":2,"mode":"Q","terms":[],"f0_terms":[]}"#).unwrap();
        let m = solve_series(&eq, 6).unwrap();
        assert!(m.is_zero());
    }

    #[test]
    fn reconstruction_identity() {
        let eq = parse_equation(LP12).unwrap();
        let m = solve_series(&eq, 6).unwrap();
        let (m0, m1, delta) = extract_sections(&m, 2);
        for n in 0..=6 {
            assert_eq!(m0.coef(n), m.coef(n, 0));
            assert_eq!(m1.coef(n), m.coef(n, 1));
            for j in 0..delta.coeffs[n].len() {
                assert_eq!(delta.coef(n, j), m.coef(n, j + 2));
            }
        }
    }

    #[test]
    fn residual_vanishes_for_solution() {
        for doc in [LP12, MAPS] {
            let eq = parse_equation(doc).unwrap();
            let m = solve_series(&eq, 7).unwrap();
            assert_eq!(residual_valuation(&eq, &m).unwrap(), None);
        }
        let eq = parse_equation(LP12).unwrap();
        let mut m = solve_series(&eq, 7).unwrap();
        m.coeffs[5][0] += rat_from_i64(1);
        assert_eq!(residual_valuation(&eq, &m).unwrap(), Some(5));
    }

    #[test]
    fn tight_u_cap_reports_error() {
        let eq = parse_equation(LP12).unwrap();
        assert!(matches!(
            solve_series_capped(&eq, 10, 4),
            Err(SeriesError::UDegreeCapExceeded { .. })
        ));
    }

    #[test]
    fn section_solver_agrees_with_full_solver() {
        for doc in [LP12, MAPS] {
            let eq = parse_equation(doc).unwrap();
            let m = solve_series(&eq, 20).unwrap();
            let (m0, m1, _) = extract_sections(&m, eq.k);
            let s = solve_sections(&eq, 20).unwrap();
            assert_eq!(s.m0.coeffs, m0.coeffs);
            assert_eq!(s.m1.coeffs, m1.coeffs);
        }
    }

    #[test]
    fn section_solver_large_order_lp12() {
        // The windowed linear path must stay exact at large orders.
        let eq = parse_equation(LP12).unwrap();
        let s = solve_sections(&eq, 300).unwrap();
        let dp = walk_dp(&[1, -1, 2, -2], 300);
        for n in [100usize, 200, 300] {
            assert_eq!(s.m0.coef(n), Rat::from(dp[n][0].clone()));
            assert_eq!(s.m1.coef(n), Rat::from(dp[n][1].clone()));
        }
    }
}
