//! Numeric kernel for the continuation pipelines: a small `Real` abstraction
//! over binary64 and double-double scalars, dense linear solves with partial
//! pivoting, a damped Newton iteration, an Aberth-Ehrlich polynomial root
//! finder, and compiled evaluators for polynomials over the equation
//! alphabet.

use crate::poly::{Poly, Var};
use crate::rat::{rat_from_f64, rat_to_f64, Rat};
use num_complex::Complex64;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar abstraction: enough arithmetic for Newton continuation. The
/// pipelines run in f64 by default and can be re-run in double-double when
/// conditioning demands it.
pub trait Real:
    Copy
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + fmt::Debug
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    /// Conversion from an exact rational, exact to the precision carried.
    fn from_rat(r: &Rat) -> Self;
}

impl Real for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn from_rat(r: &Rat) -> Self {
        rat_to_f64(r)
    }
}

/// Double-double arithmetic (Dekker/Knuth error-free transformations):
/// an unevaluated sum hi + lo with |lo| <= ulp(hi)/2, giving ~31 significant
/// digits.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let err = b - (s - a);
    (s, err)
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let err = a.mul_add(b, -p);
    (p, err)
}

impl Dd {
    pub fn new(hi: f64, lo: f64) -> Self {
        let (s, e) = quick_two_sum(hi, lo);
        Dd { hi: s, lo: e }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, rhs: Dd) -> Dd {
        let (s1, e1) = two_sum(self.hi, rhs.hi);
        let e = e1 + self.lo + rhs.lo;
        Dd::new(s1, e)
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, rhs: Dd) -> Dd {
        self + (-rhs)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, rhs: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, rhs.hi);
        let e = e + self.hi * rhs.lo + self.lo * rhs.hi;
        Dd::new(p, e)
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, rhs: Dd) -> Dd {
        let q1 = self.hi / rhs.hi;
        let r = self - rhs * Dd::new(q1, 0.0);
        let q2 = r.hi / rhs.hi;
        let r2 = r - rhs * Dd::new(q2, 0.0);
        let q3 = r2.hi / rhs.hi;
        Dd::new(q1, q2) + Dd::new(q3, 0.0)
    }
}

impl Real for Dd {
    fn zero() -> Self {
        Dd { hi: 0.0, lo: 0.0 }
    }
    fn one() -> Self {
        Dd { hi: 1.0, lo: 0.0 }
    }
    fn from_f64(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }
    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
    fn abs(self) -> Self {
        if self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0) {
            -self
        } else {
            self
        }
    }
    fn sqrt(self) -> Self {
        if self.hi == 0.0 && self.lo == 0.0 {
            return Dd::zero();
        }
        // One Newton step on 1/sqrt refines the f64 seed to full dd accuracy.
        let approx = self.hi.sqrt();
        let x = Dd::from_f64(approx);
        let half = Dd::from_f64(0.5);
        x + (self - x * x) * half / x
    }
    fn from_rat(r: &Rat) -> Self {
        let hi = rat_to_f64(r);
        if !hi.is_finite() {
            return Dd::from_f64(hi);
        }
        let rem = r - rat_from_f64(hi);
        Dd::new(hi, rat_to_f64(&rem))
    }
}

/// Solves A x = b in place by Gaussian elimination with partial pivoting.
/// Returns None if a pivot is exactly zero. `a` is row-major n x n.
pub fn solve_dense<R: Real>(a: &mut [R], b: &mut [R], n: usize) -> Option<Vec<R>> {
    let mut perm_sign = R::one();
    let _ = &mut perm_sign;
    for col in 0..n {
        let mut pivot = col;
        let mut best = a[col * n + col].abs();
        for row in (col + 1)..n {
            let v = a[row * n + col].abs();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if best.to_f64() == 0.0 {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in (col + 1)..n {
            let factor = a[row * n + col] / diag;
            if factor.to_f64() == 0.0 {
                continue;
            }
            for j in col..n {
                let v = a[col * n + j];
                a[row * n + j] = a[row * n + j] - factor * v;
            }
            b[row] = b[row] - factor * b[col];
        }
    }
    let mut x = vec![R::zero(); n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for j in (row + 1)..n {
            acc = acc - a[row * n + j] * x[j];
        }
        x[row] = acc / a[row * n + row];
    }
    Some(x)
}

/// Determinant of a row-major n x n matrix (destroys the copy it makes).
pub fn det_dense<R: Real>(a: &[R], n: usize) -> R {
    let mut m = a.to_vec();
    let mut det = R::one();
    for col in 0..n {
        let mut pivot = col;
        let mut best = m[col * n + col].abs();
        for row in (col + 1)..n {
            let v = m[row * n + col].abs();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if best.to_f64() == 0.0 {
            return R::zero();
        }
        if pivot != col {
            for j in 0..n {
                m.swap(col * n + j, pivot * n + j);
            }
            det = -det;
        }
        let diag = m[col * n + col];
        det = det * diag;
        for row in (col + 1)..n {
            let factor = m[row * n + col] / diag;
            for j in col..n {
                let v = m[col * n + j];
                m[row * n + j] = m[row * n + j] - factor * v;
            }
        }
    }
    det
}

/// 1-norm condition number estimate via explicit inverse columns.
pub fn condition_estimate(a: &[f64], n: usize) -> f64 {
    let norm = |m: &dyn Fn(usize, usize) -> f64| -> f64 {
        (0..n)
            .map(|j| (0..n).map(|i| m(i, j).abs()).sum::<f64>())
            .fold(0.0f64, f64::max)
    };
    let a_norm = norm(&|i, j| a[i * n + j]);
    let mut inv_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let mut m = a.to_vec();
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        match solve_dense(&mut m, &mut e, n) {
            Some(x) => inv_cols.push(x),
            None => return f64::INFINITY,
        }
    }
    let inv_norm = norm(&|i, j| inv_cols[j][i]);
    a_norm * inv_norm
}

/// Damped Newton iteration on a residual map with user-supplied Jacobian.
/// `f` fills residual and row-major Jacobian. Converges when the max-norm of
/// the residual drops below `tol`; halves the step up to 30 times when the
/// residual does not decrease.
pub fn newton<R: Real>(
    x0: &[R],
    tol: f64,
    max_iter: usize,
    mut f: impl FnMut(&[R], &mut [R], &mut [R]),
) -> Option<Vec<R>> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut res = vec![R::zero(); n];
    let mut jac = vec![R::zero(); n * n];
    let norm = |v: &[R]| v.iter().fold(0.0f64, |m, c| m.max(c.abs().to_f64()));
    for _ in 0..max_iter {
        f(&x, &mut res, &mut jac);
        let r0 = norm(&res);
        if r0 < tol {
            return Some(x);
        }
        let mut a = jac.clone();
        let mut b = res.clone();
        let step = solve_dense(&mut a, &mut b, n)?;
        let mut scale = R::one();
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<R> = x
                .iter()
                .zip(&step)
                .map(|(&xi, &si)| xi - scale * si)
                .collect();
            f(&trial, &mut res, &mut jac);
            if norm(&res) < r0 {
                x = trial;
                accepted = true;
                break;
            }
            scale = scale * R::from_f64(0.5);
        }
        if !accepted {
            return None;
        }
    }
    f(&x, &mut res, &mut jac);
    if norm(&res) < tol {
        Some(x)
    } else {
        None
    }
}

/// All complex roots of a polynomial with f64 coefficients (ascending order,
/// p[0] + p[1] x + ...), by the Aberth-Ehrlich simultaneous iteration.
/// Deterministic start configuration; degrees here are small (< 64).
pub fn poly_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let mut c: Vec<f64> = coeffs.to_vec();
    while c.last().map_or(false, |x| *x == 0.0) {
        c.pop();
    }
    if c.len() <= 1 {
        return Vec::new();
    }
    // Factor out zero roots.
    let mut zeros = 0usize;
    while c.first().map_or(false, |x| *x == 0.0) {
        c.remove(0);
        zeros += 1;
    }
    let deg = c.len() - 1;
    let eval = |x: Complex64, c: &[f64]| -> (Complex64, Complex64) {
        let mut p = Complex64::new(0.0, 0.0);
        let mut dp = Complex64::new(0.0, 0.0);
        for &ck in c.iter().rev() {
            dp = dp * x + p;
            p = p * x + ck;
        }
        (p, dp)
    };
    // Initial guesses on a circle of the root-magnitude scale.
    let scale = {
        let an = c[deg].abs();
        let mut r: f64 = 0.0;
        for (k, &ck) in c.iter().enumerate().take(deg) {
            if ck != 0.0 {
                r = r.max((ck.abs() / an).powf(1.0 / (deg - k) as f64));
            }
        }
        (2.0 * r).max(1e-12)
    };
    let mut roots: Vec<Complex64> = (0..deg)
        .map(|i| {
            let angle = 2.0 * std::f64::consts::PI * (i as f64 + 0.35) / deg as f64 + 0.42;
            Complex64::from_polar(scale * (0.5 + 0.5 * (i as f64 + 1.0) / deg as f64), angle)
        })
        .collect();
    for _ in 0..200 {
        let mut moved: f64 = 0.0;
        for i in 0..deg {
            let (p, dp) = eval(roots[i], &c);
            if p.norm() == 0.0 {
                continue;
            }
            let newton_step = if dp.norm() == 0.0 {
                Complex64::new(1e-12, 1e-12)
            } else {
                p / dp
            };
            let mut rep = Complex64::new(0.0, 0.0);
            for j in 0..deg {
                if j != i {
                    let diff = roots[i] - roots[j];
                    if diff.norm() > 1e-300 {
                        rep += Complex64::new(1.0, 0.0) / diff;
                    }
                }
            }
            let denom = Complex64::new(1.0, 0.0) - newton_step * rep;
            let step = if denom.norm() < 1e-300 {
                newton_step
            } else {
                newton_step / denom
            };
            roots[i] -= step;
            moved = moved.max(step.norm());
        }
        if moved < 1e-14 * scale.max(1.0) {
            break;
        }
    }
    for _ in 0..zeros {
        roots.push(Complex64::new(0.0, 0.0));
    }
    roots
}

/// A polynomial compiled for fast repeated numeric evaluation: coefficients
/// stored as double-double-exact pairs plus the exponent vector over
/// (z, u, s0, s1, s2). The mark variable must be substituted beforehand.
pub struct NumPoly {
    terms: Vec<(f64, f64, [u16; 5])>,
    max_deg: [u16; 5],
}

/// Evaluation point for `NumPoly`, in the order (z, u, y0, y1, y2).
pub type NumPoint<R> = [R; 5];

impl NumPoly {
    pub fn compile(p: &Poly) -> NumPoly {
        let mut terms = Vec::new();
        let mut max_deg = [0u16; 5];
        for (e, c) in p.terms() {
            assert_eq!(e.get(Var::W), 0, "mark must be substituted before compiling");
            let exps = [
                e.get(Var::Z),
                e.get(Var::U),
                e.get(Var::S0),
                e.get(Var::S1),
                e.get(Var::S2),
            ];
            for (m, &x) in max_deg.iter_mut().zip(&exps) {
                *m = (*m).max(x);
            }
            let hi = rat_to_f64(c);
            let lo = rat_to_f64(&(c - rat_from_f64(hi)));
            terms.push((hi, lo, exps));
        }
        NumPoly { terms, max_deg }
    }

    pub fn eval<R: Real>(&self, point: &NumPoint<R>) -> R {
        // Cached powers per variable.
        let mut pows: [Vec<R>; 5] = [vec![], vec![], vec![], vec![], vec![]];
        for v in 0..5 {
            let mut p = Vec::with_capacity(self.max_deg[v] as usize + 1);
            p.push(R::one());
            for d in 1..=self.max_deg[v] as usize {
                let prev = p[d - 1];
                p.push(prev * point[v]);
            }
            pows[v] = p;
        }
        let mut acc = R::zero();
        for (hi, lo, exps) in &self.terms {
            let mut t = R::from_f64(*hi) + R::from_f64(*lo);
            for v in 0..5 {
                if exps[v] > 0 {
                    t = t * pows[v][exps[v] as usize];
                }
            }
            acc = acc + t;
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Exponents;
    use crate::rat::rat_from_i64;

    #[test]
    fn dd_arithmetic_extends_precision() {
        // (1 + 2^-60) - 1 vanishes in f64 but not in dd.
        let tiny = (2.0f64).powi(-60);
        let a = Dd::from_f64(1.0) + Dd::from_f64(tiny);
        let diff = a - Dd::from_f64(1.0);
        assert_eq!(diff.to_f64(), tiny);
        // sqrt(2)^2 = 2 to ~1e-31.
        let two = Dd::from_f64(2.0);
        let r = two.sqrt();
        let back = r * r - two;
        assert!(back.to_f64().abs() < 1e-30);
        // division round trip
        let x = Dd::from_f64(std::f64::consts::PI);
        let y = Dd::from_f64(std::f64::consts::E);
        let q = x / y * y - x;
        assert!(q.to_f64().abs() < 1e-30);
    }

    #[test]
    fn dense_solve_and_det() {
        let a = [2.0, 1.0, -1.0, -3.0, -1.0, 2.0, -2.0, 1.0, 2.0];
        let b = [8.0, -11.0, -3.0];
        let x = solve_dense(&mut a.to_vec(), &mut b.to_vec(), 3).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
        assert!((x[2] - (-1.0)).abs() < 1e-12);
        assert!((det_dense(&a, 3) - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn newton_solves_intersection() {
        // x^2 + y^2 = 2, x = y  =>  (1,1) from a nearby start.
        let sol = newton(&[1.3f64, 0.6], 1e-13, 50, |x, res, jac| {
            res[0] = x[0] * x[0] + x[1] * x[1] - 2.0;
            res[1] = x[0] - x[1];
            jac[0] = 2.0 * x[0];
            jac[1] = 2.0 * x[1];
            jac[2] = 1.0;
            jac[3] = -1.0;
        })
        .unwrap();
        assert!((sol[0] - 1.0).abs() < 1e-10 && (sol[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn aberth_finds_all_roots() {
        // (x-1)(x-2)(x+3) = x^3 - 7x + 6
        let roots = poly_roots(&[6.0, -7.0, 0.0, 1.0]);
        let mut reals: Vec<f64> = roots.iter().map(|r| r.re).collect();
        reals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(roots.iter().all(|r| r.im.abs() < 1e-9));
        assert!((reals[0] + 3.0).abs() < 1e-9);
        assert!((reals[1] - 1.0).abs() < 1e-9);
        assert!((reals[2] - 2.0).abs() < 1e-9);
        // zero roots are preserved
        let roots = poly_roots(&[0.0, 0.0, -1.0, 1.0]); // x^2(x-1)
        assert_eq!(roots.len(), 3);
        assert!(roots.iter().filter(|r| r.norm() < 1e-12).count() == 2);
    }

    #[test]
    fn numpoly_matches_exact_eval() {
        let mut p = Poly::zero();
        p.add_term(Exponents::default().with(Var::Z, 1).with(Var::S0, 2), rat_from_i64(3));
        p.add_term(Exponents::default().with(Var::U, 3), Rat::new(1.into(), 3.into()));
        let np = NumPoly::compile(&p);
        let val = np.eval(&[0.5f64, 2.0, 1.5, 0.0, 0.0]);
        // 3 * 0.5 * 1.5^2 + (1/3) * 8
        let expect = 3.0 * 0.5 * 2.25 + 8.0 / 3.0;
        assert!((val - expect).abs() < 1e-12);
        // dd evaluation agrees with f64 to f64 precision
        let vdd: Dd = np.eval(&[
            Dd::from_f64(0.5),
            Dd::from_f64(2.0),
            Dd::from_f64(1.5),
            Dd::zero(),
            Dd::zero(),
        ]);
        assert!((vdd.to_f64() - expect).abs() < 1e-12);
    }
}
