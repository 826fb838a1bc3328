//! Coefficient-asymptotics fitting: Richardson extrapolation of the scaled
//! sequence `M_n n^{1+alpha} z0^n` along a residue class, and a ratio-test
//! estimate of the radius of convergence.
//!
//! Scaled values are formed in log space, so coefficients far outside f64
//! range (growth like 20^n for n in the thousands) stay finite.

use crate::rat::rat_ln;
use crate::series::UnivariateSeries;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum FitError {
    /// Not enough usable coefficients in the requested residue class.
    InsufficientData { needed: usize, got: usize },
    /// The extrapolation did not stabilize; carries the last estimate and
    /// the spread. Reported, not fatal.
    NonConvergent { estimate: f64, spread: f64 },
}

impl fmt::Display for FitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitError::InsufficientData { needed, got } => {
                write!(f, "insufficient data: needed {needed} coefficients, got {got}")
            }
            FitError::NonConvergent { estimate, spread } => {
                write!(f, "fit did not converge: estimate {estimate}, spread {spread}")
            }
        }
    }
}

impl std::error::Error for FitError {}

/// Result of an asymptotic-constant fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    /// Extrapolated limit of M_n n^{1+alpha} z0^n over the class.
    pub constant: f64,
    /// Error estimate: max pairwise spread of the last three extrapolants.
    pub error: f64,
}

/// One Richardson level for sequences with an expansion c + a/n + b/n^2 + ...
/// in the index n: pairs consecutive entries so the 1/n^level term cancels.
fn richardson_level(xs: &[(f64, f64)], level: i32) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(xs.len().saturating_sub(1));
    for w in xs.windows(2) {
        let (n0, x0) = w[0];
        let (n1, x1) = w[1];
        let p0 = n0.powi(level);
        let p1 = n1.powi(level);
        if (p1 - p0).abs() < f64::EPSILON * p1.abs() {
            continue;
        }
        let val = (p1 * x1 - p0 * x0) / (p1 - p0);
        out.push((n1, val));
    }
    out
}

/// Extrapolates the limit of a sequence of (n, x_n) values assuming a 1/n
/// power expansion; depth is fixed at two levels, deeper levels amplify the
/// rational-rounding noise of the inputs.
fn richardson2(xs: &[(f64, f64)]) -> Option<FitResult> {
    if xs.len() < 5 {
        return None;
    }
    let l1 = richardson_level(xs, 1);
    let l2 = richardson_level(&l1, 2);
    let last: Vec<f64> = l2.iter().rev().take(3).map(|&(_, x)| x).collect();
    if last.len() < 3 {
        return None;
    }
    let mut spread = 0.0f64;
    for i in 0..last.len() {
        for j in (i + 1)..last.len() {
            spread = spread.max((last[i] - last[j]).abs());
        }
    }
    Some(FitResult {
        constant: last[0],
        error: spread,
    })
}

/// Fits the constant c_j in `M_n ~ c_j n^{-1-alpha} z0^{-n}` over the class
/// `n === j (mod d)`, by two-level Richardson extrapolation of
/// `s_n = M_n n^{1+alpha} z0^n`. Requires at least 50 usable coefficients.
pub fn oracle_fit(
    coeffs: &UnivariateSeries,
    z0: f64,
    alpha: f64,
    d: usize,
    j: usize,
) -> Result<FitResult, FitError> {
    let d = d.max(1);
    let ln_z0 = z0.ln();
    let mut seq: Vec<(f64, f64)> = Vec::new();
    for n in (1..=coeffs.order()).filter(|n| n % d == j % d) {
        let c = coeffs.coef(n);
        let (sign, ln_c) = rat_ln(&c);
        if sign == 0.0 || ln_c == f64::NEG_INFINITY {
            continue; // zero coefficient: skip, zeros are judged by the caller
        }
        let nf = n as f64;
        let ln_s = ln_c + (1.0 + alpha) * nf.ln() + nf * ln_z0;
        seq.push((nf, sign * ln_s.exp()));
    }
    if seq.len() < 50 {
        return Err(FitError::InsufficientData {
            needed: 50,
            got: seq.len(),
        });
    }
    // Use the tail: early coefficients are far from the asymptotic regime.
    let tail_start = seq.len() / 3;
    let fit = richardson2(&seq[tail_start..]).ok_or(FitError::InsufficientData {
        needed: 50,
        got: seq.len(),
    })?;
    let scale = fit.constant.abs().max(1e-30);
    if fit.error > 0.05 * scale {
        return Err(FitError::NonConvergent {
            estimate: fit.constant,
            spread: fit.error,
        });
    }
    Ok(fit)
}

/// Ratio-test estimate of z0 from the coefficients of one residue class:
/// Richardson-extrapolates `ln(M_{n+d}/M_n)/d -> -ln z0`.
pub fn ratio_test_z0(coeffs: &UnivariateSeries, d: usize, j: usize) -> Result<f64, FitError> {
    let d = d.max(1);
    let mut lns: Vec<(f64, f64)> = Vec::new();
    for n in (1..=coeffs.order()).filter(|n| n % d == j % d) {
        let c = coeffs.coef(n);
        let (sign, ln_c) = rat_ln(&c);
        if sign <= 0.0 {
            continue;
        }
        lns.push((n as f64, ln_c));
    }
    if lns.len() < 20 {
        return Err(FitError::InsufficientData {
            needed: 20,
            got: lns.len(),
        });
    }
    let mut seq: Vec<(f64, f64)> = Vec::new();
    for w in lns.windows(2) {
        let (n0, l0) = w[0];
        let (n1, l1) = w[1];
        if n1 - n0 != d as f64 {
            continue; // gap in the class support
        }
        seq.push((n1, (l1 - l0) / d as f64));
    }
    let tail_start = seq.len() / 3;
    let fit = richardson2(&seq[tail_start..]).ok_or(FitError::InsufficientData {
        needed: 20,
        got: seq.len(),
    })?;
    Ok((-fit.constant).exp())
}

/// Detects the support period of a series beyond an ignored prefix:
/// d = gcd of pairwise support differences, residues = support classes mod d.
/// Requires at least 10 nonzero coefficients past the prefix.
pub fn support_period(
    s: &UnivariateSeries,
    ignore_prefix: usize,
) -> Result<(usize, Vec<usize>), FitError> {
    let support: Vec<usize> = s
        .support()
        .into_iter()
        .filter(|&n| n > ignore_prefix)
        .collect();
    if support.len() < 10 {
        return Err(FitError::InsufficientData {
            needed: 10,
            got: support.len(),
        });
    }
    let base = support[0];
    let mut d = 0usize;
    for &n in &support[1..] {
        d = gcd(d, n - base);
    }
    if d == 0 {
        d = 1;
    }
    let mut residues: Vec<usize> = support.iter().map(|&n| n % d).collect();
    residues.sort_unstable();
    residues.dedup();
    Ok((d, residues))
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rat::{rat_from_i64, Rat};
    use num_bigint::BigInt;

    fn series_from(f: impl Fn(usize) -> Rat, order: usize) -> UnivariateSeries {
        UnivariateSeries {
            coeffs: (0..=order).map(f).collect(),
        }
    }

    #[test]
    fn geometric_sequence_fits_exactly() {
        // 2 * 3^n with z0 = 1/3, alpha = -1: s_n = 2 identically.
        let s = series_from(|n| Rat::from(BigInt::from(2) * BigInt::from(3).pow(n as u32)), 120);
        let fit = oracle_fit(&s, 1.0 / 3.0, -1.0, 1, 0).unwrap();
        assert!((fit.constant - 2.0).abs() < 1e-9, "{fit:?}");
        assert!(fit.error < 1e-9);
    }

    #[test]
    fn catalan_constant_and_radius() {
        // Catalan numbers: C_m ~ 4^m m^{-3/2} / sqrt(pi).
        let mut c = vec![Rat::from(BigInt::from(1))];
        for m in 0..400usize {
            // C_{m+1} = C_m * 2(2m+1)/(m+2)
            let next = c[m].clone() * Rat::new(BigInt::from(2 * (2 * m + 1)), BigInt::from(m + 2));
            c.push(next);
        }
        let s = UnivariateSeries { coeffs: c };
        let fit = oracle_fit(&s, 0.25, 0.5, 1, 0).unwrap();
        let expect = 1.0 / std::f64::consts::PI.sqrt();
        assert!(
            (fit.constant - expect).abs() < 0.005 * expect,
            "got {} want {}",
            fit.constant,
            expect
        );
        let z0 = ratio_test_z0(&s, 1, 0).unwrap();
        assert!((z0 - 0.25).abs() < 1e-5, "ratio z0 = {z0}");
    }

    #[test]
    fn insufficient_data_is_reported() {
        let s = series_from(|n| rat_from_i64(n as i64), 20);
        assert!(matches!(
            oracle_fit(&s, 0.5, 0.5, 1, 0),
            Err(FitError::InsufficientData { .. })
        ));
    }

    #[test]
    fn support_period_detection() {
        // Catalan at even indices, zero at odd: d = 2, residues {0}.
        let s = series_from(
            |n| {
                if n % 2 == 0 {
                    rat_from_i64(1 + n as i64)
                } else {
                    Rat::from(BigInt::from(0))
                }
            },
            40,
        );
        let (d, residues) = support_period(&s, 0).unwrap();
        assert_eq!(d, 2);
        assert_eq!(residues, vec![0]);
        // All-ones sequence: d = 1, residues {0}.
        let ones = series_from(|_| rat_from_i64(1), 40);
        let (d, residues) = support_period(&ones, 0).unwrap();
        assert_eq!(d, 1);
        assert_eq!(residues, vec![0]);
        // Too little support.
        let sparse = series_from(
            |n| {
                if n == 3 || n == 6 {
                    rat_from_i64(1)
                } else {
                    Rat::from(BigInt::from(0))
                }
            },
            40,
        );
        assert!(matches!(
            support_period(&sparse, 0),
            Err(FitError::InsufficientData { .. })
        ));
    }
}
