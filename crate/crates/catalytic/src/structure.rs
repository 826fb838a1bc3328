//! Structural analysis: which theorem pipeline applies to an equation.
//!
//! For linear k = 2 equations the dependency graph of the section system is
//! strongly connected if and only if three checkable conditions hold; each
//! failure corresponds to a degenerate route with an explicit transformation
//! back into the main pipeline. For non-linear equations only necessary
//! conditions are known, so the best verdict is NecessaryOnly.

use crate::equation::{build_r_form, CatalyticEquation, Linearity, Mode};
use crate::poly::{Poly, Var};
use crate::series::{solve_series, SeriesError};
use serde::Serialize;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum StructureError {
    NotLinear,
    NotNonlinear,
    WrongK(u8),
    /// An R-mode equation whose linear decomposition has negative
    /// coefficients; the structure theory only covers the Q-expressible case.
    NotQExpressible(String),
    Series(SeriesError),
}

impl fmt::Display for StructureError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StructureError::NotLinear => write!(f, "equation is not linear"),
            StructureError::NotNonlinear => write!(f, "equation is not non-linear"),
            StructureError::WrongK(k) => write!(f, "operation needs k = 2, equation has k = {k}"),
            StructureError::NotQExpressible(m) => {
                write!(f, "equation is not expressible in Q form: {m}")
            }
            StructureError::Series(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for StructureError {}

impl From<SeriesError> for StructureError {
    fn from(e: SeriesError) -> Self {
        StructureError::Series(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Certified,
    NecessaryOnly,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub witness: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConnectivityReport {
    pub verdict: Verdict,
    pub checks: Vec<Check>,
}

/// The linear decomposition M = (zQ0 + F0) + zQ1 M + zQ2 DM + zQ3 D2M,
/// recovered uniformly from the R form. For Q-mode inputs the parts are
/// exactly z*Q_i; R-mode linear equations may decompose with negative
/// coefficients, which the structure theory does not cover.
pub struct LinearParts {
    /// zQ0 + F0 (the full additive part).
    pub free: Poly,
    pub zq1: Poly,
    pub zq2: Poly,
    pub zq3: Poly,
}

impl LinearParts {
    pub fn is_nonnegative(&self) -> bool {
        !(self.zq1.has_negative_coef()
            || self.zq2.has_negative_coef()
            || self.zq3.has_negative_coef()
            || self.free.has_negative_coef())
    }

    /// The curve polynomial z(u^2 Q1 + u Q2 + Q3).
    pub fn curve(&self) -> Poly {
        self.zq1
            .mul_var(Var::U, 2)
            .add(&self.zq2.mul_var(Var::U, 1))
            .add(&self.zq3)
    }
}

/// Recovers the linear parts of a linear k = 2 equation.
pub fn linear_parts(eq: &CatalyticEquation) -> Result<LinearParts, StructureError> {
    if eq.classify() != Linearity::Linear {
        return Err(StructureError::NotLinear);
    }
    if eq.k != 2 {
        return Err(StructureError::WrongK(eq.k));
    }
    let rf = build_r_form(eq);
    let c_y0 = rf.r.coef_of(Var::S0, 1).at_zero(Var::S1).at_zero(Var::S2);
    let c_y1 = rf.r.coef_of(Var::S1, 1).at_zero(Var::S0).at_zero(Var::S2);
    let c_y2 = rf.r.coef_of(Var::S2, 1).at_zero(Var::S0).at_zero(Var::S1);
    let free = rf
        .r
        .at_zero(Var::S0)
        .at_zero(Var::S1)
        .at_zero(Var::S2);
    // c_y2 = zQ1, c_y1 = zuQ1 + zQ2, c_y0 = zu^2 Q1 + zu Q2 + zQ3.
    let zq1 = c_y2.clone();
    let zq2 = c_y1.sub(&c_y2.mul_var(Var::U, 1));
    let zq3 = c_y0.sub(&c_y1.mul_var(Var::U, 1));
    Ok(LinearParts {
        free,
        zq1,
        zq2,
        zq3,
    })
}

fn first_monomial(p: &Poly, slot_names: [&'static str; 3]) -> String {
    match p.terms().next() {
        Some((e, c)) => Poly::monomial(c.clone(), *e).display_with(slot_names),
        None => "0".to_string(),
    }
}

/// Strong-connectivity test for linear k = 2 equations: certified iff
/// Q1 depends on u, the curve has an odd u-power, and u does not divide
/// Q2 + Q3.
pub fn linear_connectivity(eq: &CatalyticEquation) -> Result<ConnectivityReport, StructureError> {
    let parts = linear_parts(eq)?;
    if !parts.is_nonnegative() {
        return Err(StructureError::NotQExpressible(
            "a recovered Q_i part has a negative coefficient".into(),
        ));
    }
    let mut checks = Vec::new();

    let q1u = parts.zq1.depends_on(Var::U);
    checks.push(Check {
        name: "q1_depends_on_u",
        passed: q1u,
        witness: if q1u {
            let witness = parts
                .zq1
                .terms()
                .find(|(e, _)| e.get(Var::U) > 0)
                .map(|(e, c)| Poly::monomial(c.clone(), *e).display_with(["a0", "a1", "a2"]))
                .unwrap_or_default();
            format!("Q1 term {witness}")
        } else {
            "Q1 does not depend on u".into()
        },
    });

    let curve = parts.curve();
    let odd = curve.terms().find(|(e, _)| e.get(Var::U) % 2 == 1);
    checks.push(Check {
        name: "curve_has_odd_u_power",
        passed: odd.is_some(),
        witness: match odd {
            Some((e, c)) => format!(
                "curve term {}",
                Poly::monomial(c.clone(), *e).display_with(["a0", "a1", "a2"])
            ),
            None => "curve polynomial is even in u".into(),
        },
    });

    let q23_at0 = parts.zq2.at_zero(Var::U).add(&parts.zq3.at_zero(Var::U));
    checks.push(Check {
        name: "u_not_dividing_q2_plus_q3",
        passed: !q23_at0.is_zero(),
        witness: if q23_at0.is_zero() {
            "u divides Q2 + Q3".into()
        } else {
            format!(
                "(zQ2 + zQ3)(z, 0) has term {}",
                first_monomial(&q23_at0, ["a0", "a1", "a2"])
            )
        },
    });

    let verdict = if checks.iter().all(|c| c.passed) {
        Verdict::Certified
    } else {
        Verdict::Failed
    };
    Ok(ConnectivityReport { verdict, checks })
}

/// Necessary conditions for strong connectivity of a non-linear equation:
/// Q_{a0} depends on u or on Delta^(2)M, and the curve equation is not a
/// power series in u^2. The second is checked empirically on the truncated
/// curve series; support-period evidence from the coefficient oracle is
/// recorded as an extra informational check.
pub fn nonlinear_necessary(
    eq: &CatalyticEquation,
    probe_order: usize,
) -> Result<ConnectivityReport, StructureError> {
    if eq.classify() != Linearity::Nonlinear {
        return Err(StructureError::NotNonlinear);
    }
    let rf = build_r_form(eq);
    let mut checks = Vec::new();

    // R_{y2} = zQ_{a0} for k=2 (R_{y1} for k=1); an outgoing edge from M0
    // needs it to involve u or the Delta slot y0.
    let last_slot = if eq.k == 2 { Var::S2 } else { Var::S1 };
    let q_a0 = rf.r.diff(last_slot);
    let dep = q_a0.depends_on(Var::U) || q_a0.depends_on(Var::S0);
    checks.push(Check {
        name: "q_a0_depends_on_u_or_delta",
        passed: dep,
        witness: if dep {
            "R_{y_last} involves u or y0".into()
        } else {
            "Q_{a0} depends on neither u nor Delta^(2)M".into()
        },
    });

    let m = solve_series(eq, probe_order)?;
    let curve = crate::gh::curve_series(eq, &m)?;
    let mut odd_found = None;
    'outer: for (n, level) in curve.coeffs.iter().enumerate() {
        for (j, c) in level.iter().enumerate() {
            if j % 2 == 1 && !num_traits::Zero::is_zero(c) {
                odd_found = Some((n, j));
                break 'outer;
            }
        }
    }
    checks.push(Check {
        name: "curve_not_series_in_u_squared",
        passed: odd_found.is_some(),
        witness: match odd_found {
            Some((n, j)) => format!("curve coefficient at z^{n} u^{j} is nonzero"),
            None => format!("no odd u-power in the curve series through order {probe_order}"),
        },
    });

    let both = checks.iter().all(|c| c.passed);

    // Informational: support period of the M0 oracle series.
    let m0 = m.section(0);
    let evidence = match crate::fit::support_period(&m0, 0) {
        Ok((d, residues)) => format!("M0 support period d = {d}, residues {residues:?}"),
        Err(e) => format!("support scan inconclusive: {e}"),
    };
    checks.push(Check {
        name: "empirical_support_period",
        passed: true,
        witness: evidence,
    });

    Ok(ConnectivityReport {
        verdict: if both {
            Verdict::NecessaryOnly
        } else {
            Verdict::Failed
        },
        checks,
    })
}

/// Degenerate-case routing for linear k = 2 equations.
#[derive(Debug, Clone)]
pub enum DegenerateCase {
    None,
    /// Q_{1u} = 0: no edge out of M0. The returned k = 2 equation (R mode)
    /// determines F = (M - M0)/u; its solution is Delta M of the original.
    Q1uZero { transformed: CatalyticEquation },
    /// Curve polynomial even in u: the recurrence splits into independent
    /// k = 1 equations for the even and odd sections (catalytic variable
    /// t = u^2). Their M0 sections are M0(z) and M1(z) of the original.
    EvenCurve {
        even: CatalyticEquation,
        odd: CatalyticEquation,
    },
    /// u | Q2 + Q3: no edge into M0, which is the rational function
    /// numerator/denominator recorded here (polynomials in z).
    UDividesQ2PlusQ3 { numerator: Poly, denominator: Poly },
    /// u | Q3 but not Q2 (and Q_{1u} != 0): u2(z) = 0 solves the curve;
    /// the reduced k = 1-style curve for u1 is recorded. The standard
    /// pipeline still applies with the second branch pinned at zero.
    UDividesQ3Only { reduced_curve: Poly },
}

impl DegenerateCase {
    pub fn id(&self) -> &'static str {
        match self {
            DegenerateCase::None => "None",
            DegenerateCase::Q1uZero { .. } => "Q1uZero",
            DegenerateCase::EvenCurve { .. } => "EvenCurve",
            DegenerateCase::UDividesQ2PlusQ3 { .. } => "UDividesQ2PlusQ3",
            DegenerateCase::UDividesQ3Only { .. } => "UDividesQ3Only",
        }
    }
}

/// Decides which degenerate route (if any) applies to a linear k = 2
/// equation, returning the transformed data. Cases are tested in the
/// paper's order (1) through (4).
pub fn degenerate_route(eq: &CatalyticEquation) -> Result<DegenerateCase, StructureError> {
    let parts = linear_parts(eq)?;
    if !parts.is_nonnegative() {
        return Err(StructureError::NotQExpressible(
            "a recovered Q_i part has a negative coefficient".into(),
        ));
    }

    // (1) Q_{1u} = 0: no edge out of M0; transform to F = Delta M via
    //     Delta(Q2 Delta M) = DeltaQ2 * Delta M + Q2(z,0) * Delta^2 M etc.
    if !parts.zq1.depends_on(Var::U) {
        let dd = |p: &Poly| p.divided_difference(Var::U);
        let f0_new = dd(&parts.free);
        let coef_f = parts.zq1.add(&dd(&parts.zq2));
        let coef_df = parts.zq2.at_zero(Var::U).add(&dd(&parts.zq3));
        let coef_d2f = parts.zq3.at_zero(Var::U);
        let y0 = Poly::var(Var::S0);
        let y1 = Poly::var(Var::S1);
        let y2 = Poly::var(Var::S2);
        let u = Poly::var(Var::U);
        let f_sub = u.pow(2).mul(&y0).add(&u.mul(&y1)).add(&y2);
        let df_sub = u.mul(&y0).add(&y1);
        let r_new = coef_f
            .mul(&f_sub)
            .add(&coef_df.mul(&df_sub))
            .add(&coef_d2f.mul(&y0));
        let transformed = CatalyticEquation {
            k: 2,
            mode: Mode::R,
            q_or_r: r_new,
            f0: f0_new,
            has_mark: false,
        };
        return Ok(DegenerateCase::Q1uZero { transformed });
    }

    // (2) Curve polynomial even in u: split into even/odd k = 1 equations.
    let curve = parts.curve();
    if curve.is_even_in(Var::U) && !curve.is_zero() {
        // Non-negative parts force Q1 even, Q2 odd, Q3 even in u.
        let (q1_even, q1_odd) = parts.zq1.split_even_odd(Var::U);
        let (q3_even, q3_odd) = parts.zq3.split_even_odd(Var::U);
        let (q2_even, q2_odd_half) = parts.zq2.split_even_odd(Var::U);
        debug_assert!(q1_odd.is_zero() && q3_odd.is_zero() && q2_even.is_zero());
        let (free_even, free_odd) = parts.free.split_even_odd(Var::U);
        // zq-parts already carry their factor z; build k = 1 R-mode
        // equations directly: F = free_part + zq1 F + coef_dF * Delta_t F.
        let a0 = Poly::var(Var::S0);
        let a1 = Poly::var(Var::S1);
        let u = Poly::var(Var::U); // plays the role of t = u^2
        let m_sub = u.mul(&a0).add(&a1); // F = t y0 + y1
        let even_coef_df = q2_odd_half.mul_var(Var::U, 1).add(&q3_even);
        let even_r = q1_even.mul(&m_sub).add(&even_coef_df.mul(&a0));
        let even = CatalyticEquation {
            k: 1,
            mode: Mode::R,
            q_or_r: even_r,
            f0: free_even,
            has_mark: false,
        };
        let odd_coef_m = q1_even.add(&q2_odd_half);
        let odd_r = odd_coef_m.mul(&m_sub).add(&q3_even.mul(&a0));
        let odd = CatalyticEquation {
            k: 1,
            mode: Mode::R,
            q_or_r: odd_r,
            f0: free_odd,
            has_mark: false,
        };
        return Ok(DegenerateCase::EvenCurve { even, odd });
    }

    // (3) u | Q2 + Q3: M0 is rational.
    let q2_at0 = parts.zq2.at_zero(Var::U);
    let q3_at0 = parts.zq3.at_zero(Var::U);
    if q2_at0.is_zero() && q3_at0.is_zero() {
        let numerator = parts.free.at_zero(Var::U);
        let denominator = Poly::one().sub(&parts.zq1.at_zero(Var::U));
        return Ok(DegenerateCase::UDividesQ2PlusQ3 {
            numerator,
            denominator,
        });
    }

    // (4) u | Q3 only: u2 = 0, reduced curve u = C(z,u)/u for u1.
    if q3_at0.is_zero() && !q2_at0.is_zero() && parts.zq1.depends_on(Var::U) {
        let reduced_curve = curve.div_var(Var::U, 1).expect("u divides the curve");
        return Ok(DegenerateCase::UDividesQ3Only { reduced_curve });
    }

    Ok(DegenerateCase::None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equation::parse_equation;
    use crate::rat::rat_from_i64;
    use crate::series::extract_sections;
    use num_traits::Zero;

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

    const LP2: &str = r#"{
        "k": 2, "mode": "Q",
        "terms": [
            {"coef": "1", "u": 2, "a0": 1},
            {"coef": "1", "a2": 1}
        ],
        "f0_terms": [{"coef": "1"}]
    }"#;

    #[test]
    fn lp12_certified() {
        let eq = parse_equation(LP12).unwrap();
        let report = linear_connectivity(&eq).unwrap();
        assert_eq!(report.verdict, Verdict::Certified);
        assert!(report.checks.iter().all(|c| c.passed));
        assert!(matches!(degenerate_route(&eq).unwrap(), DegenerateCase::None));
    }

    #[test]
    fn connectivity_invariant_under_positive_scaling() {
        // Scaling all of Q by 3 must not change the verdict.
        let scaled = r#"{
            "k": 2, "mode": "Q",
            "terms": [
                {"coef": "3", "u": 1, "a0": 1},
                {"coef": "3", "u": 2, "a0": 1},
                {"coef": "3", "a1": 1},
                {"coef": "3", "a2": 1}
            ],
            "f0_terms": [{"coef": "1"}]
        }"#;
        let eq = parse_equation(scaled).unwrap();
        assert_eq!(linear_connectivity(&eq).unwrap().verdict, Verdict::Certified);
    }

    #[test]
    fn lp2_fails_with_even_curve() {
        let eq = parse_equation(LP2).unwrap();
        let report = linear_connectivity(&eq).unwrap();
        assert_eq!(report.verdict, Verdict::Failed);
        let failing: Vec<_> = report.checks.iter().filter(|c| !c.passed).collect();
        assert!(failing.iter().any(|c| c.name == "curve_has_odd_u_power"));
    }

    #[test]
    fn constant_q1_fails() {
        // Q1 = 1 (no u), Q2 = 1: fails the first condition.
        let eq = parse_equation(
            r#"{"k":2,"mode":"Q","terms":[{"coef":"1","a0":1},{"coef":"1","a1":1}],
                "f0_terms":[{"coef":"1"}]}"#,
        )
        .unwrap();
        let report = linear_connectivity(&eq).unwrap();
        assert_eq!(report.verdict, Verdict::Failed);
        assert!(report
            .checks
            .iter()
            .any(|c| c.name == "q1_depends_on_u" && !c.passed));
    }

    #[test]
    fn lp2_routes_to_even_curve_and_interleaves() {
        let eq = parse_equation(LP2).unwrap();
        let route = degenerate_route(&eq).unwrap();
        let (even, odd) = match route {
            DegenerateCase::EvenCurve { even, odd } => (even, odd),
            other => panic!("expected EvenCurve, got {other:?}"),
        };
        // Solutions of the sub-equations must interleave to the original
        // M0/M1 sections (checked to order 30).
        let original = solve_series(&eq, 30).unwrap();
        let (m0, m1, _) = extract_sections(&original, 2);
        let even_sol = solve_series(&even, 30).unwrap();
        let odd_sol = solve_series(&odd, 30).unwrap();
        let (e0, _, _) = extract_sections(&even_sol, 1);
        let (o0, _, _) = extract_sections(&odd_sol, 1);
        assert_eq!(e0.coeffs, m0.coeffs, "even sub-equation gives M0");
        assert_eq!(o0.coeffs, m1.coeffs, "odd sub-equation gives M1");
        // lp2 odd sections vanish identically.
        assert!(o0.is_zero());
    }

    #[test]
    fn q1u_zero_routes_and_transforms() {
        // Q1 = 1 (constant), Q2 = 1 + u, Q3 = 1: no edge out of M0.
        let eq = parse_equation(
            r#"{"k":2,"mode":"Q","terms":[
                {"coef":"1","a0":1},
                {"coef":"1","a1":1},{"coef":"1","u":1,"a1":1},
                {"coef":"1","a2":1}],
                "f0_terms":[{"coef":"1"}]}"#,
        )
        .unwrap();
        let route = degenerate_route(&eq).unwrap();
        let transformed = match route {
            DegenerateCase::Q1uZero { transformed } => transformed,
            other => panic!("expected Q1uZero, got {other:?}"),
        };
        // The transformed solution must equal Delta M = (M - M0)/u of the
        // original (a shift by one u-degree after zeroing the section).
        let original = solve_series(&eq, 30).unwrap();
        let dm = {
            let mut reduced = original.clone();
            for p in reduced.coeffs.iter_mut() {
                if !p.is_empty() {
                    p[0] = rat_from_i64(0);
                }
            }
            extract_sections(&reduced, 1).2
        };
        let f = solve_series(&transformed, 30).unwrap();
        assert_eq!(f.coeffs, dm.coeffs);
    }

    #[test]
    fn u_divides_q2_plus_q3_gives_rational_m0() {
        // Q2 = u, Q3 = u^2, Q1 = u: M0 = F0(z,0) / (1 - zQ1(z,0)) = 1.
        let eq = parse_equation(
            r#"{"k":2,"mode":"Q","terms":[
                {"coef":"1","u":1,"a0":1},
                {"coef":"1","u":1,"a1":1},
                {"coef":"1","u":2,"a2":1}],
                "f0_terms":[{"coef":"1"}]}"#,
        )
        .unwrap();
        let route = degenerate_route(&eq).unwrap();
        match route {
            DegenerateCase::UDividesQ2PlusQ3 {
                numerator,
                denominator,
            } => {
                assert_eq!(numerator, Poly::one());
                // Q1(z,0) = 0 here, so the denominator is 1.
                assert_eq!(denominator, Poly::one());
            }
            other => panic!("expected UDividesQ2PlusQ3, got {other:?}"),
        }
        // Check against the series: M0 must be the constant series 1.
        let m = solve_series(&eq, 12).unwrap();
        let (m0, _, _) = extract_sections(&m, 2);
        assert_eq!(m0.coef(0), rat_from_i64(1));
        for n in 1..=12 {
            assert!(m0.coef(n).is_zero());
        }
    }

    #[test]
    fn u_divides_q3_only_route() {
        // lp12 variant with Q3 = u: still connected, u2 = 0.
        let eq = parse_equation(
            r#"{"k":2,"mode":"Q","terms":[
                {"coef":"1","u":1,"a0":1},{"coef":"1","u":2,"a0":1},
                {"coef":"1","a1":1},
                {"coef":"1","u":1,"a2":1}],
                "f0_terms":[{"coef":"1"}]}"#,
        )
        .unwrap();
        assert_eq!(linear_connectivity(&eq).unwrap().verdict, Verdict::Certified);
        match degenerate_route(&eq).unwrap() {
            DegenerateCase::UDividesQ3Only { reduced_curve } => {
                // curve = z u^3 + z u^4 + z u + z u^2... / u
                assert!(reduced_curve.min_degree(Var::U).unwrap() == 0);
            }
            other => panic!("expected UDividesQ3Only, got {other:?}"),
        }
    }

    #[test]
    fn nonlinear_checks() {
        // Q = a0 * a2 (nonlinear, Q_{a0} = a2 depends on Delta slot).
        let eq = parse_equation(
            r#"{"k":2,"mode":"Q","terms":[{"coef":"1","a0":1,"a2":1},
                {"coef":"1","u":1,"a1":1},{"coef":"1","a1":1}],
                "f0_terms":[{"coef":"1"}]}"#,
        )
        .unwrap();
        let report = nonlinear_necessary(&eq, 16).unwrap();
        assert_eq!(report.verdict, Verdict::NecessaryOnly);
        // Q = a0^2 only: Q_{a0} = 2 a0... depends on a0 which becomes u,y0.
        // A genuinely failing case: Q = a1^2 (Q_{a0} = 0), curve even.
        let failing = parse_equation(
            r#"{"k":2,"mode":"Q","terms":[{"coef":"1","a1":2}],
                "f0_terms":[{"coef":"1"}]}"#,
        )
        .unwrap();
        let report = nonlinear_necessary(&failing, 16).unwrap();
        assert_eq!(report.verdict, Verdict::Failed);
        // Linear input is rejected.
        let lin = parse_equation(LP12).unwrap();
        assert!(matches!(
            nonlinear_necessary(&lin, 8),
            Err(StructureError::NotNonlinear)
        ));
    }
}
