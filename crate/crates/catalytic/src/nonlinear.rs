//! Continuation pipeline for non-linear equations.
//!
//! For k = 2 the six unknown functions (M0, M1, u1, f1, u2, f2) satisfy the
//! system built from the equation, the curve equation and its u-derivative
//! at both small branches. Its Jacobian has the block structure
//!
//! ```text
//! | A  0  0 |      A  : section rows wrt (M0, M1)
//! | C1 B1 0 |      B1 : branch-1 rows wrt (u1, f1)
//! | C2 0  B2|      B2 : branch-2 rows wrt (u2, f2)
//! ```
//!
//! On (0, z0) all three blocks are invertible with det B1, det B2 > 0, and
//! z0 is the smallest z where det B1 = 0; since 2u1 - C_u = sqrt(det B1),
//! det B1 vanishes linearly, which drives the detector. The state at z0 is
//! polished on the five-equation subsystem (the curve row of branch 1 is
//! dropped, u1 becomes a parameter) and the fold itself is resolved by a 2x2
//! Newton on the curve residual and its total u1-derivative. The type-3/2
//! certificate is the third-derivative combination T evaluated there. The
//! k = 1 pipeline is the same construction on the three-equation positive
//! system with unknowns (M0, u1, f1).

use crate::equation::{build_r_form, CatalyticEquation, DerivIndex, Linearity};
use crate::numeric::{condition_estimate, det_dense, newton, poly_roots, solve_dense, NumPoly, Real};
use crate::poly::Var;
use crate::series::{extract_sections, solve_series, SeriesError};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum NonlinearError {
    NotNonlinear,
    WrongK(u8),
    SeriesOrderTooLow { got: usize },
    NewtonDivergence(String),
    StepUnderflow { z: f64 },
    /// det B1 or det B2 lost positivity strictly before the detected fold.
    PositivityViolated { which: &'static str, z: f64 },
    DetAVanishes { z0: f64, det: f64 },
    DetB2Vanishes { z0: f64, det: f64 },
    NoSingularityFound { zmax: f64 },
    /// T is requested for an equation with R_{y0y0} = 0.
    LinearEquation,
    NotAtSingularity { det_b1: f64 },
    BadTarget { z: f64, target: f64 },
    Series(SeriesError),
}

impl fmt::Display for NonlinearError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use NonlinearError::*;
        match self {
            NotNonlinear => write!(f, "equation is not non-linear"),
            WrongK(k) => write!(f, "wrong k = {k} for this pipeline"),
            SeriesOrderTooLow { got } => {
                write!(f, "series order too low to seed continuation (got {got})")
            }
            NewtonDivergence(m) => write!(f, "Newton divergence: {m}"),
            StepUnderflow { z } => write!(f, "continuation step underflow at z = {z}"),
            PositivityViolated { which, z } => {
                write!(f, "{which} lost positivity at z = {z}")
            }
            DetAVanishes { z0, det } => write!(f, "det A = {det} vanishes at z0 = {z0}"),
            DetB2Vanishes { z0, det } => write!(f, "det B2 = {det} vanishes at z0 = {z0}"),
            NoSingularityFound { zmax } => write!(f, "no singularity found below z = {zmax}"),
            LinearEquation => write!(f, "equation is linear (R_y0y0 = 0)"),
            NotAtSingularity { det_b1 } => {
                write!(f, "state is not at the singularity (det B1 = {det_b1})")
            }
            BadTarget { z, target } => write!(f, "target z = {target} not above current z = {z}"),
            Series(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for NonlinearError {}

impl From<SeriesError> for NonlinearError {
    fn from(e: SeriesError) -> Self {
        NonlinearError::Series(e)
    }
}

/// Numeric snapshot of the six-equation system (k = 2) or its k = 1
/// reduction (u2, f2 unused there).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemState {
    pub z: f64,
    pub u1: f64,
    pub u2: f64,
    pub f1: f64,
    pub f2: f64,
    pub m1: f64,
    pub m0: f64,
}

/// The 2x2 Jacobian blocks with their determinants.
#[derive(Debug, Clone, Copy)]
pub struct JacobianBlocks {
    pub a: [[f64; 2]; 2],
    pub b1: [[f64; 2]; 2],
    pub b2: [[f64; 2]; 2],
    pub c1: [[f64; 2]; 2],
    pub c2: [[f64; 2]; 2],
    pub det_a: f64,
    pub det_b1: f64,
    pub det_b2: f64,
}

/// The type-3/2 certificate T with its ingredients.
#[derive(Debug, Clone, Copy)]
pub struct TReport {
    pub value: f64,
    pub delta_u: f64,
    pub components: [f64; 4],
}

/// Compiled partial derivatives of the R form used by the pipelines.
pub struct NlSystem {
    pub k: u8,
    r: NumPoly,
    r_u: NumPoly,
    r_y0: NumPoly,
    r_y1: NumPoly,
    r_y2: NumPoly,
    r_uu: NumPoly,
    r_uy0: NumPoly,
    r_uy1: NumPoly,
    r_uy2: NumPoly,
    r_y0y0: NumPoly,
    r_y0y1: NumPoly,
    r_y0y2: NumPoly,
    r_z: NumPoly,
    r_zu: NumPoly,
    r_zy0: NumPoly,
    r_uuu: NumPoly,
    r_uuy0: NumPoly,
    r_uy0y0: NumPoly,
    r_y0y0y0: NumPoly,
    linear_in_y0y0: bool,
}

impl NlSystem {
    pub fn new(eq: &CatalyticEquation) -> NlSystem {
        let rf = build_r_form(eq);
        let d = |u: u8, y: [u8; 3]| {
            let p = rf.deriv(0, &DerivIndex { u, y });
            NumPoly::compile(&p)
        };
        let dz = |u: u8, y: [u8; 3]| {
            let p = rf.deriv(1, &DerivIndex { u, y });
            NumPoly::compile(&p)
        };
        let y0y0 = rf.deriv(0, &DerivIndex { u: 0, y: [2, 0, 0] });
        NlSystem {
            k: eq.k,
            r: d(0, [0, 0, 0]),
            r_u: d(1, [0, 0, 0]),
            r_y0: d(0, [1, 0, 0]),
            r_y1: d(0, [0, 1, 0]),
            r_y2: d(0, [0, 0, 1]),
            r_uu: d(2, [0, 0, 0]),
            r_uy0: d(1, [1, 0, 0]),
            r_uy1: d(1, [0, 1, 0]),
            r_uy2: d(1, [0, 0, 1]),
            linear_in_y0y0: y0y0.is_zero(),
            r_y0y0: NumPoly::compile(&y0y0),
            r_y0y1: d(0, [1, 1, 0]),
            r_y0y2: d(0, [1, 0, 1]),
            r_z: dz(0, [0, 0, 0]),
            r_zu: dz(1, [0, 0, 0]),
            r_zy0: dz(0, [1, 0, 0]),
            r_uuu: d(3, [0, 0, 0]),
            r_uuy0: d(2, [1, 0, 0]),
            r_uy0y0: d(1, [2, 0, 0]),
            r_y0y0y0: d(0, [3, 0, 0]),
        }
    }

    /// Point for branch i of a k = 2 state vector [m0, m1, u1, f1, u2, f2].
    fn pt2<R: Real>(&self, z: R, x: &[R], branch: usize) -> [R; 5] {
        if branch == 0 {
            [z, x[2], x[3], x[1], x[0]]
        } else {
            [z, x[4], x[5], x[1], x[0]]
        }
    }

    /// Residuals of the six-equation system, x = [m0, m1, u1, f1, u2, f2].
    pub fn residual6<R: Real>(&self, z: R, x: &[R], out: &mut [R]) {
        for branch in 0..2 {
            let p = self.pt2(z, x, branch);
            let (u, fv) = (p[1], p[2]);
            out[branch] = u * u * fv + u * x[1] + x[0] - self.r.eval(&p);
            out[2 + 2 * branch] = u * u - self.r_y0.eval(&p);
            out[3 + 2 * branch] =
                R::from_f64(2.0) * u * fv + x[1] - self.r_u.eval(&p);
        }
    }

    /// Exact Jacobian of the six-equation system, row-major 6x6, same x.
    pub fn jacobian6<R: Real>(&self, z: R, x: &[R], out: &mut [R]) {
        let two = R::from_f64(2.0);
        for v in out.iter_mut() {
            *v = R::zero();
        }
        for branch in 0..2 {
            let p = self.pt2(z, x, branch);
            let (u, fv) = (p[1], p[2]);
            let (cu, cf) = if branch == 0 { (2, 3) } else { (4, 5) };
            // main row
            let row = branch;
            out[row * 6] = R::one() - self.r_y2.eval(&p);
            out[row * 6 + 1] = u - self.r_y1.eval(&p);
            out[row * 6 + cu] = two * u * fv + x[1] - self.r_u.eval(&p);
            out[row * 6 + cf] = u * u - self.r_y0.eval(&p);
            // curve row
            let row = 2 + 2 * branch;
            out[row * 6] = -self.r_y0y2.eval(&p);
            out[row * 6 + 1] = -self.r_y0y1.eval(&p);
            out[row * 6 + cu] = two * u - self.r_uy0.eval(&p);
            out[row * 6 + cf] = -self.r_y0y0.eval(&p);
            // derivative row
            let row = 3 + 2 * branch;
            out[row * 6] = -self.r_uy2.eval(&p);
            out[row * 6 + 1] = R::one() - self.r_uy1.eval(&p);
            out[row * 6 + cu] = two * fv - self.r_uu.eval(&p);
            out[row * 6 + cf] = two * u - self.r_uy0.eval(&p);
        }
    }

    /// d(residual)/dz of the six equations.
    fn dz6(&self, z: f64, x: &[f64], out: &mut [f64]) {
        for branch in 0..2 {
            let p = self.pt2(z, x, branch);
            out[branch] = -self.r_z.eval(&p);
            out[2 + 2 * branch] = -self.r_zy0.eval(&p);
            out[3 + 2 * branch] = -self.r_zu.eval(&p);
        }
    }

    /// Jacobian blocks per the analytic formulas, evaluated at a state.
    pub fn blocks(&self, s: &SystemState) -> JacobianBlocks {
        let p1 = [s.z, s.u1, s.f1, s.m1, s.m0];
        let p2 = [s.z, s.u2, s.f2, s.m1, s.m0];
        let a = [
            [1.0 - self.r_y2.eval(&p1), s.u1 - self.r_y1.eval(&p1)],
            [1.0 - self.r_y2.eval(&p2), s.u2 - self.r_y1.eval(&p2)],
        ];
        let b1 = [
            [2.0 * s.u1 - self.r_uy0.eval(&p1), -self.r_y0y0.eval(&p1)],
            [2.0 * s.f1 - self.r_uu.eval(&p1), 2.0 * s.u1 - self.r_uy0.eval(&p1)],
        ];
        let b2 = [
            [2.0 * s.u2 - self.r_uy0.eval(&p2), -self.r_y0y0.eval(&p2)],
            [2.0 * s.f2 - self.r_uu.eval(&p2), 2.0 * s.u2 - self.r_uy0.eval(&p2)],
        ];
        let c1 = [
            [-self.r_y0y2.eval(&p1), -self.r_y0y1.eval(&p1)],
            [-self.r_uy2.eval(&p1), 1.0 - self.r_uy1.eval(&p1)],
        ];
        let c2 = [
            [-self.r_y0y2.eval(&p2), -self.r_y0y1.eval(&p2)],
            [-self.r_uy2.eval(&p2), 1.0 - self.r_uy1.eval(&p2)],
        ];
        let det = |m: [[f64; 2]; 2]| m[0][0] * m[1][1] - m[0][1] * m[1][0];
        JacobianBlocks {
            a,
            b1,
            b2,
            c1,
            c2,
            det_a: det(a),
            det_b1: det(b1),
            det_b2: det(b2),
        }
    }

    fn state_to_x(s: &SystemState) -> [f64; 6] {
        [s.m0, s.m1, s.u1, s.f1, s.u2, s.f2]
    }

    fn x_to_state(z: f64, x: &[f64]) -> SystemState {
        SystemState {
            z,
            u1: x[2],
            u2: x[4],
            f1: x[3],
            f2: x[5],
            m1: x[1],
            m0: x[0],
        }
    }
}

/// Options for the non-linear pipelines.
#[derive(Debug, Clone, Copy)]
pub struct ContinuationOptions {
    pub zmax: f64,
    pub tol_residual: f64,
    pub tol_detb1: f64,
    pub seed_order: usize,
    /// Re-polish the fold in double-double when the five-equation condition
    /// number exceeds this bound.
    pub dd_condition_threshold: f64,
    pub force_dd: bool,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions {
            zmax: 4.0,
            tol_residual: 1e-12,
            tol_detb1: 1e-10,
            seed_order: 48,
            dd_condition_threshold: 1e8,
            force_dd: false,
        }
    }
}

fn newton6(
    sys: &NlSystem,
    z: f64,
    x0: &[f64; 6],
    tol: f64,
) -> Result<[f64; 6], NonlinearError> {
    let sol = newton(x0, tol, 60, |x, res, jac| {
        sys.residual6(z, x, res);
        sys.jacobian6(z, x, jac);
    })
    .ok_or_else(|| NonlinearError::NewtonDivergence(format!("six-equation solve at z = {z}")))?;
    Ok([sol[0], sol[1], sol[2], sol[3], sol[4], sol[5]])
}

/// Radius guess from coefficient growth of a section series.
fn radius_guess(m0: &crate::series::UnivariateSeries) -> Option<f64> {
    let support = m0.support();
    if support.len() < 4 {
        return None;
    }
    let n1 = *support.last().unwrap();
    let n0 = support[support.len() - 3];
    let (s1, l1) = crate::rat::rat_ln(&m0.coef(n1));
    let (s0, l0) = crate::rat::rat_ln(&m0.coef(n0));
    if s1 <= 0.0 || s0 <= 0.0 {
        return None;
    }
    let slope = (l1 - l0) / (n1 - n0) as f64;
    Some((-slope).exp())
}

/// Builds C(z0, u) as an f64 u-polynomial from the truncated series solution.
fn curve_upoly_at(
    eq: &CatalyticEquation,
    m: &crate::series::BivariateSeries,
    z: f64,
) -> Vec<f64> {
    let curve = crate::gh::curve_series(eq, m).expect("curve series");
    curve.eval_at_z_f64(z)
}

/// Bootstraps the continuation at a small z from the series solution:
/// branch guesses from the curve polynomial roots, then a Newton polish of
/// the full system. The k = 2 entry point of the pipeline.
pub fn init_state(
    eq: &CatalyticEquation,
    opts: &ContinuationOptions,
) -> Result<(NlSystem, SystemState), NonlinearError> {
    if eq.classify() != Linearity::Nonlinear {
        return Err(NonlinearError::NotNonlinear);
    }
    if eq.k != 2 {
        return Err(NonlinearError::WrongK(eq.k));
    }
    let m = solve_series(eq, opts.seed_order)?;
    let (m0s, m1s, deltas) = extract_sections(&m, 2);
    let radius = radius_guess(&m0s).ok_or(NonlinearError::SeriesOrderTooLow {
        got: opts.seed_order,
    })?;
    let z = 1e-3 * radius;
    // Small roots of u^2 = C(z,u).
    let cpoly = curve_upoly_at(eq, &m, z);
    let mut coeffs = vec![0.0; cpoly.len().max(3)];
    for (j, c) in cpoly.iter().enumerate() {
        coeffs[j] -= c;
    }
    coeffs[2] += 1.0;
    let roots = poly_roots(&coeffs);
    let mut small: Vec<f64> = roots
        .iter()
        .filter(|r| r.im.abs() < 1e-7)
        .map(|r| r.re)
        .collect();
    small.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap());
    if small.len() < 2 {
        return Err(NonlinearError::NewtonDivergence(format!(
            "expected two small real branches at z = {z}, found {small:?}"
        )));
    }
    let (mut u1, mut u2) = (small[0], small[1]);
    if u1 < u2 {
        std::mem::swap(&mut u1, &mut u2);
    }
    let delta_poly = deltas.eval_at_z_f64(z);
    let eval_delta = |u: f64| delta_poly.iter().rev().fold(0.0, |acc, c| acc * u + c);
    let x0 = [
        m0s.eval_f64(z),
        m1s.eval_f64(z),
        u1,
        eval_delta(u1),
        u2,
        eval_delta(u2),
    ];
    let sys = NlSystem::new(eq);
    let x = newton6(&sys, z, &x0, opts.tol_residual)?;
    Ok((sys, NlSystem::x_to_state(z, &x)))
}

/// Predictor-corrector continuation of a valid state to a larger z, with
/// step halving and positivity checks on det B1 and det B2 along the way.
pub fn continue_state(
    sys: &NlSystem,
    state: &SystemState,
    z_target: f64,
    opts: &ContinuationOptions,
) -> Result<SystemState, NonlinearError> {
    if z_target <= state.z {
        return Err(NonlinearError::BadTarget {
            z: state.z,
            target: z_target,
        });
    }
    let mut z = state.z;
    let mut x = NlSystem::state_to_x(state);
    let mut h = ((z_target - z) / 8.0).max(z * 1e-3);
    while z < z_target {
        let dz = h.min(z_target - z);
        // Euler predictor from the implicit-function derivative.
        let mut jac = [0.0; 36];
        let mut rhs = [0.0; 6];
        sys.jacobian6(z, &x, &mut jac);
        sys.dz6(z, &x, &mut rhs);
        let predictor = solve_dense(&mut jac.to_vec(), &mut rhs.to_vec(), 6);
        let mut x_pred = x;
        if let Some(dxdz) = predictor {
            for i in 0..6 {
                x_pred[i] -= dxdz[i] * dz;
            }
        }
        match newton6(sys, z + dz, &x_pred, opts.tol_residual) {
            Ok(next) => {
                let s = NlSystem::x_to_state(z + dz, &next);
                let blocks = sys.blocks(&s);
                if blocks.det_b1 <= 0.0 {
                    return Err(NonlinearError::PositivityViolated {
                        which: "det B1",
                        z: z + dz,
                    });
                }
                if blocks.det_b2 <= 0.0 {
                    return Err(NonlinearError::PositivityViolated {
                        which: "det B2",
                        z: z + dz,
                    });
                }
                z += dz;
                x = next;
                h = (h * 1.5).min(z_target - z + 1e-300);
            }
            Err(_) => {
                h *= 0.5;
                if h < 1e-12 * z.max(1e-12) {
                    return Err(NonlinearError::StepUnderflow { z });
                }
            }
        }
    }
    Ok(NlSystem::x_to_state(z, &x))
}

/// Five-equation subsystem at fixed (z, u1): unknowns y = [m0, m1, f1, u2, f2].
/// Returns the solved vector; `jac_out`, when given, receives the 5x5
/// Jacobian at the solution.
fn solve5<R: Real>(
    sys: &NlSystem,
    z: R,
    u1: R,
    y0: &[R; 5],
    tol: f64,
    jac_out: Option<&mut [R; 25]>,
) -> Option<[R; 5]> {
    let two = R::from_f64(2.0);
    let fill = |y: &[R], res: &mut [R], jac: &mut [R]| {
        let p1 = [z, u1, y[2], y[1], y[0]];
        let p2 = [z, y[3], y[4], y[1], y[0]];
        let (u2, f2) = (y[3], y[4]);
        res[0] = u1 * u1 * y[2] + u1 * y[1] + y[0] - sys.r.eval(&p1);
        res[1] = u2 * u2 * f2 + u2 * y[1] + y[0] - sys.r.eval(&p2);
        res[2] = two * u1 * y[2] + y[1] - sys.r_u.eval(&p1);
        res[3] = u2 * u2 - sys.r_y0.eval(&p2);
        res[4] = two * u2 * f2 + y[1] - sys.r_u.eval(&p2);
        for v in jac.iter_mut() {
            *v = R::zero();
        }
        // row 0: main eq branch 1
        jac[0] = R::one() - sys.r_y2.eval(&p1);
        jac[1] = u1 - sys.r_y1.eval(&p1);
        jac[2] = u1 * u1 - sys.r_y0.eval(&p1);
        // row 1: main eq branch 2
        jac[5] = R::one() - sys.r_y2.eval(&p2);
        jac[6] = u2 - sys.r_y1.eval(&p2);
        jac[8] = two * u2 * f2 + y[1] - sys.r_u.eval(&p2);
        jac[9] = u2 * u2 - sys.r_y0.eval(&p2);
        // row 2: derivative eq branch 1
        jac[10] = -sys.r_uy2.eval(&p1);
        jac[11] = R::one() - sys.r_uy1.eval(&p1);
        jac[12] = two * u1 - sys.r_uy0.eval(&p1);
        // row 3: curve eq branch 2
        jac[15] = -sys.r_y0y2.eval(&p2);
        jac[16] = -sys.r_y0y1.eval(&p2);
        jac[18] = two * u2 - sys.r_uy0.eval(&p2);
        jac[19] = -sys.r_y0y0.eval(&p2);
        // row 4: derivative eq branch 2
        jac[20] = -sys.r_uy2.eval(&p2);
        jac[21] = R::one() - sys.r_uy1.eval(&p2);
        jac[23] = two * f2 - sys.r_uu.eval(&p2);
        jac[24] = two * u2 - sys.r_uy0.eval(&p2);
    };
    let sol = newton(y0, tol, 60, |y, res, jac| fill(y, res, jac))?;
    if let Some(out) = jac_out {
        let mut res = [R::zero(); 5];
        let mut jac = [R::zero(); 25];
        fill(&sol, &mut res, &mut jac);
        out.copy_from_slice(&jac);
    }
    Some([sol[0], sol[1], sol[2], sol[3], sol[4]])
}

/// The fold functions psi(z, u1) = (curve residual, total u1-derivative of
/// the curve residual) along the five-equation solution manifold.
fn psi<R: Real>(
    sys: &NlSystem,
    z: R,
    u1: R,
    warm: &[R; 5],
    tol: f64,
) -> Option<([R; 2], [R; 5])> {
    let two = R::from_f64(2.0);
    let mut jac = [R::zero(); 25];
    let y = solve5(sys, z, u1, warm, tol, Some(&mut jac))?;
    let p1 = [z, u1, y[2], y[1], y[0]];
    let psi1 = u1 * u1 - sys.r_y0.eval(&p1);
    // d(vars)/du1 = -J5^{-1} dE/du1 with dE/du1 supported on rows 0 and 2.
    let mut rhs = [
        two * u1 * y[2] + y[1] - sys.r_u.eval(&p1),
        R::zero(),
        two * y[2] - sys.r_uu.eval(&p1),
        R::zero(),
        R::zero(),
    ];
    let mut jc = jac.to_vec();
    let dvars = solve_dense(&mut jc, &mut rhs, 5)?;
    let total_dy0 = sys.r_uy0.eval(&p1)
        + sys.r_y0y0.eval(&p1) * (-dvars[2])
        + sys.r_y0y1.eval(&p1) * (-dvars[1])
        + sys.r_y0y2.eval(&p1) * (-dvars[0]);
    let psi2 = two * u1 - total_dy0;
    Some(([psi1, psi2], y))
}

/// Outcome of the fold search.
#[derive(Debug, Clone)]
pub struct FoldReport {
    pub z0: f64,
    pub state: SystemState,
    pub blocks: JacobianBlocks,
    /// Condition number of the five-equation subsystem at the fold.
    pub condition5: f64,
    /// True when the fold was re-polished in double-double arithmetic.
    pub used_dd: bool,
}

/// Locates the smallest z > 0 with det B1 = 0 by continuation plus secant
/// iteration on det B1, then polishes the fold with the 2x2 psi-Newton on
/// (z, u1) over the five-equation manifold. Verifies det A != 0 and
/// det B2 != 0 at the limit.
pub fn find_z0_nonlinear(
    eq: &CatalyticEquation,
    opts: &ContinuationOptions,
) -> Result<(NlSystem, FoldReport), NonlinearError> {
    let (sys, state0) = init_state(eq, opts)?;
    let fold = drive_to_fold(
        &sys,
        state0,
        opts,
        |sys, s| sys.blocks(s).det_b1,
        |sys, z, u1, warm, tol| {
            psi(sys, z, u1, warm, tol).map(|(p, y)| {
                (
                    p,
                    SystemState {
                        z,
                        u1,
                        u2: y[3],
                        f1: y[2],
                        f2: y[4],
                        m1: y[1],
                        m0: y[0],
                    },
                )
            })
        },
    )?;
    // Theory checks at the fold.
    let blocks = fold.blocks;
    if blocks.det_a.abs() < 1e-6 {
        return Err(NonlinearError::DetAVanishes {
            z0: fold.z0,
            det: blocks.det_a,
        });
    }
    if blocks.det_b2.abs() < 1e-6 {
        return Err(NonlinearError::DetB2Vanishes {
            z0: fold.z0,
            det: blocks.det_b2,
        });
    }
    if blocks.det_b1.abs() > 1e-8 {
        return Err(NonlinearError::NotAtSingularity {
            det_b1: blocks.det_b1,
        });
    }
    Ok((sys, fold))
}

/// Shared fold driver: marches until det B1 collapses, secants on det B1,
/// then runs the psi-Newton (f64, optionally double-double).
fn drive_to_fold(
    sys: &NlSystem,
    state0: SystemState,
    opts: &ContinuationOptions,
    det_b1_of: impl Fn(&NlSystem, &SystemState) -> f64,
    psi_of: impl Fn(&NlSystem, f64, f64, &[f64; 5], f64) -> Option<([f64; 2], SystemState)>,
) -> Result<FoldReport, NonlinearError> {
    let mut s = state0;
    let mut det_prev = det_b1_of(sys, &s);
    let det_start = det_prev;
    let mut z_prev = s.z;
    // March up until det B1 has dropped by a large factor or a step fails.
    let mut h = s.z;
    let mut stalled = 0;
    while det_prev > det_start * 1e-3 {
        let target = s.z + h;
        if target > opts.zmax {
            return Err(NonlinearError::NoSingularityFound { zmax: opts.zmax });
        }
        match continue_state(sys, &s, target, opts) {
            Ok(next) => {
                let d = det_b1_of(sys, &next);
                if d <= 0.0 {
                    // Overshot: halve and retry.
                    h *= 0.4;
                    stalled += 1;
                } else {
                    // Secant prediction of the root of det B1.
                    let slope = (d - det_prev) / (next.z - z_prev);
                    z_prev = next.z;
                    det_prev = d;
                    s = next;
                    if slope < 0.0 {
                        let z_root = s.z - d / slope;
                        h = (0.7 * (z_root - s.z)).max(s.z * 1e-11);
                    } else {
                        h *= 1.5;
                    }
                }
            }
            Err(NonlinearError::PositivityViolated { .. }) | Err(NonlinearError::StepUnderflow { .. }) => {
                h *= 0.4;
                stalled += 1;
            }
            Err(e) => return Err(e),
        }
        if stalled > 120 {
            return Err(NonlinearError::StepUnderflow { z: s.z });
        }
        if h < s.z * 1e-12 {
            break;
        }
    }
    // Fold extrapolation: u1(z) = u1(z0) - kappa sqrt(z0 - z) from the last
    // secant estimate, then the psi-Newton.
    let blocks = sys.blocks(&s);
    let slope_est = {
        // det B1 vanishes linearly: z0 ~ z + detB1 / |d detB1/dz| via secant.
        let d = det_b1_of(sys, &s);
        let probe = continue_state(sys, &s, s.z + (opts.zmax - s.z).min(s.z * 1e-6), opts)
            .ok()
            .map(|n| (det_b1_of(sys, &n), n.z));
        match probe {
            Some((d2, z2)) if d2 < d => (d - d2) / (z2 - s.z),
            _ => d / (s.z * 1e-3),
        }
    };
    let mut z0_est = s.z + det_b1_of(sys, &s) / slope_est.max(1e-300);
    let mut u1_est = s.u1 + (blocks.det_b1.max(0.0).sqrt() / blocks.b1[0][1].abs().max(1e-12)).min(s.u1 * 0.1);
    // 2x2 Newton on psi(z, u1) with finite-difference Jacobian.
    let mut warm = [s.m0, s.m1, s.f1, s.u2, s.f2];
    let tol5 = opts.tol_residual;
    for _ in 0..60 {
        let (p0, st) = psi_of(sys, z0_est, u1_est, &warm, tol5)
            .ok_or_else(|| NonlinearError::NewtonDivergence("fold psi evaluation".into()))?;
        warm = [st.m0, st.m1, st.f1, st.u2, st.f2];
        let scale = (z0_est.abs() + u1_est.abs()).max(1e-6);
        if p0[0].abs().max(p0[1].abs()) < 1e-13 * scale.max(1.0) {
            break;
        }
        let hz = (z0_est.abs() * 1e-7).max(1e-12);
        let hu = (u1_est.abs() * 1e-7).max(1e-12);
        let (pz, _) = psi_of(sys, z0_est + hz, u1_est, &warm, tol5)
            .ok_or_else(|| NonlinearError::NewtonDivergence("fold psi z-step".into()))?;
        let (pu, _) = psi_of(sys, z0_est, u1_est + hu, &warm, tol5)
            .ok_or_else(|| NonlinearError::NewtonDivergence("fold psi u-step".into()))?;
        let jac = [
            (pz[0] - p0[0]) / hz,
            (pu[0] - p0[0]) / hu,
            (pz[1] - p0[1]) / hz,
            (pu[1] - p0[1]) / hu,
        ];
        let det = jac[0] * jac[3] - jac[1] * jac[2];
        if det.abs() < 1e-300 {
            return Err(NonlinearError::NewtonDivergence("singular fold Jacobian".into()));
        }
        let dz = (p0[0] * jac[3] - p0[1] * jac[1]) / det;
        let du = (jac[0] * p0[1] - jac[2] * p0[0]) / det;
        z0_est -= dz;
        u1_est -= du;
        if dz.abs() < 1e-15 * z0_est.abs() && du.abs() < 1e-15 * u1_est.abs().max(1.0) {
            break;
        }
    }
    let (_, final_state) = psi_of(sys, z0_est, u1_est, &warm, tol5)
        .ok_or_else(|| NonlinearError::NewtonDivergence("fold state assembly".into()))?;
    // Condition of the five-equation subsystem at the fold.
    let mut jac5 = [0.0f64; 25];
    let y = [
        final_state.m0,
        final_state.m1,
        final_state.f1,
        final_state.u2,
        final_state.f2,
    ];
    let _ = solve5(sys, z0_est, u1_est, &y, tol5, Some(&mut jac5));
    let condition5 = condition_estimate(&jac5, 5);
    let mut used_dd = false;
    let mut final_state = final_state;
    let mut z0 = z0_est;
    if opts.force_dd || condition5 > opts.dd_condition_threshold {
        if let Some((zdd, st)) = dd_fold_polish(sys, z0_est, u1_est, &y) {
            final_state = st;
            z0 = zdd;
            used_dd = true;
        }
    }
    let blocks = sys.blocks(&final_state);
    Ok(FoldReport {
        z0,
        state: final_state,
        blocks,
        condition5,
        used_dd,
    })
}

/// Double-double re-run of the psi-Newton from the f64 fold.
fn dd_fold_polish(
    sys: &NlSystem,
    z0: f64,
    u1: f64,
    warm: &[f64; 5],
) -> Option<(f64, SystemState)> {
    use crate::numeric::Dd;
    let mut z = Dd::from_f64(z0);
    let mut u = Dd::from_f64(u1);
    let mut w = [
        Dd::from_f64(warm[0]),
        Dd::from_f64(warm[1]),
        Dd::from_f64(warm[2]),
        Dd::from_f64(warm[3]),
        Dd::from_f64(warm[4]),
    ];
    for _ in 0..8 {
        let (p0, y) = psi(sys, z, u, &w, 1e-26)?;
        w = y;
        let hz = Dd::from_f64((z.to_f64().abs() * 1e-14).max(1e-20));
        let hu = Dd::from_f64((u.to_f64().abs() * 1e-14).max(1e-20));
        let (pz, _) = psi(sys, z + hz, u, &w, 1e-26)?;
        let (pu, _) = psi(sys, z, u + hu, &w, 1e-26)?;
        let jac = [
            (pz[0] - p0[0]) / hz,
            (pu[0] - p0[0]) / hu,
            (pz[1] - p0[1]) / hz,
            (pu[1] - p0[1]) / hu,
        ];
        let det = jac[0] * jac[3] - jac[1] * jac[2];
        if det.to_f64().abs() < 1e-300 {
            return None;
        }
        let dz = (p0[0] * jac[3] - p0[1] * jac[1]) / det;
        let du = (jac[0] * p0[1] - jac[2] * p0[0]) / det;
        z = z - dz;
        u = u - du;
        if dz.to_f64().abs() < 1e-24 && du.to_f64().abs() < 1e-24 {
            break;
        }
    }
    let (_, y) = psi(sys, z, u, &w, 1e-26)?;
    Some((
        z.to_f64(),
        SystemState {
            z: z.to_f64(),
            u1: u.to_f64(),
            u2: y[3].to_f64(),
            f1: y[2].to_f64(),
            f2: y[4].to_f64(),
            m1: y[1].to_f64(),
            m0: y[0].to_f64(),
        },
    ))
}

/// Evaluates the T-condition at a fold state (k = 2): delta_u is the limit
/// slope (2u - R_{uy0})/R_{y0y0}, and
/// T = R_{uuu} + (3R_{uuy0} - 6) delta + 3R_{uy0y0} delta^2 + R_{y0y0y0} delta^3.
pub fn compute_t(
    sys: &NlSystem,
    state: &SystemState,
    tol_detb1: f64,
) -> Result<TReport, NonlinearError> {
    if sys.linear_in_y0y0 {
        return Err(NonlinearError::LinearEquation);
    }
    let blocks = sys.blocks(state);
    let scale = state.u1.abs().max(1.0);
    if blocks.det_b1.abs() > tol_detb1.max(1e-8) * scale {
        return Err(NonlinearError::NotAtSingularity {
            det_b1: blocks.det_b1,
        });
    }
    let p = [state.z, state.u1, state.f1, state.m1, state.m0];
    let ry0y0 = sys.r_y0y0.eval(&p);
    if ry0y0.abs() < 1e-12 {
        return Err(NonlinearError::LinearEquation);
    }
    let delta_u = (2.0 * state.u1 - sys.r_uy0.eval(&p)) / ry0y0;
    let c0 = sys.r_uuu.eval(&p);
    let c1 = (3.0 * sys.r_uuy0.eval(&p) - 6.0) * delta_u;
    let c2 = 3.0 * sys.r_uy0y0.eval(&p) * delta_u * delta_u;
    let c3 = sys.r_y0y0y0.eval(&p) * delta_u.powi(3);
    Ok(TReport {
        value: c0 + c1 + c2 + c3,
        delta_u,
        components: [c0, c1, c2, c3],
    })
}

// ---------------------------------------------------------------------------
// k = 1: three-equation positive system (m0, u1, f1).
// ---------------------------------------------------------------------------

/// Compiled system for k = 1; reuses the fold driver with 3 unknowns.
pub struct K1Fold {
    pub z0: f64,
    pub u1: f64,
    pub f1: f64,
    pub m0: f64,
    /// det of [[1-R_uy0, -R_y0y0], [-R_uu, 1-R_uy0]], the k = 1 analogue of
    /// det B1.
    pub det_b1: f64,
    pub condition: f64,
    /// Finite value of M0'(z0) from the closed form.
    pub m0_prime: f64,
}

pub struct K1System {
    r: NumPoly,
    r_u: NumPoly,
    r_y0: NumPoly,
    r_y1: NumPoly,
    r_uu: NumPoly,
    r_uy0: NumPoly,
    r_uy1: NumPoly,
    r_y0y0: NumPoly,
    r_y0y1: NumPoly,
    r_z: NumPoly,
    r_zu: NumPoly,
    r_zy0: NumPoly,
}

impl K1System {
    pub fn new(eq: &CatalyticEquation) -> K1System {
        let rf = build_r_form(eq);
        let d = |z: u8, u: u8, y: [u8; 3]| NumPoly::compile(&rf.deriv(z, &DerivIndex { u, y }));
        K1System {
            r: d(0, 0, [0, 0, 0]),
            r_u: d(0, 1, [0, 0, 0]),
            r_y0: d(0, 0, [1, 0, 0]),
            r_y1: d(0, 0, [0, 1, 0]),
            r_uu: d(0, 2, [0, 0, 0]),
            r_uy0: d(0, 1, [1, 0, 0]),
            r_uy1: d(0, 1, [0, 1, 0]),
            r_y0y0: d(0, 0, [2, 0, 0]),
            r_y0y1: d(0, 0, [1, 1, 0]),
            r_z: d(1, 0, [0, 0, 0]),
            r_zu: d(1, 1, [0, 0, 0]),
            r_zy0: d(1, 0, [1, 0, 0]),
        }
    }

    fn pt(&self, z: f64, u1: f64, f1: f64, m0: f64) -> [f64; 5] {
        [z, u1, f1, m0, 0.0]
    }

    pub fn det_b1(&self, z: f64, u1: f64, f1: f64, m0: f64) -> f64 {
        let p = self.pt(z, u1, f1, m0);
        let a = 1.0 - self.r_uy0.eval(&p);
        a * a - self.r_y0y0.eval(&p) * self.r_uu.eval(&p)
    }

    /// Newton solve of the full three-equation system at fixed z.
    fn newton3(&self, z: f64, x0: &[f64; 3], tol: f64) -> Option<[f64; 3]> {
        // x = [m0, u1, f1]
        let sol = newton(x0, tol, 60, |x, res, jac| {
            let p = self.pt(z, x[1], x[2], x[0]);
            res[0] = x[1] * x[2] + x[0] - self.r.eval(&p);
            res[1] = x[1] - self.r_y0.eval(&p);
            res[2] = x[2] - self.r_u.eval(&p);
            jac[0] = 1.0 - self.r_y1.eval(&p);
            jac[1] = x[2] - self.r_u.eval(&p);
            jac[2] = x[1] - self.r_y0.eval(&p);
            jac[3] = -self.r_y0y1.eval(&p);
            jac[4] = 1.0 - self.r_uy0.eval(&p);
            jac[5] = -self.r_y0y0.eval(&p);
            jac[6] = -self.r_uy1.eval(&p);
            jac[7] = -self.r_uu.eval(&p);
            jac[8] = 1.0 - self.r_uy0.eval(&p);
        })?;
        Some([sol[0], sol[1], sol[2]])
    }

    /// Two-equation subsystem at fixed (z, u1): unknowns [m0, f1].
    fn solve2(&self, z: f64, u1: f64, y0: &[f64; 2], tol: f64) -> Option<([f64; 2], [f64; 4])> {
        let mut jac_at = [0.0; 4];
        let sol = newton(y0, tol, 60, |y, res, jac| {
            let p = self.pt(z, u1, y[1], y[0]);
            res[0] = u1 * y[1] + y[0] - self.r.eval(&p);
            res[1] = y[1] - self.r_u.eval(&p);
            jac[0] = 1.0 - self.r_y1.eval(&p);
            jac[1] = u1 - self.r_y0.eval(&p);
            jac[2] = -self.r_uy1.eval(&p);
            jac[3] = 1.0 - self.r_uy0.eval(&p);
        })?;
        let p = self.pt(z, u1, sol[1], sol[0]);
        jac_at[0] = 1.0 - self.r_y1.eval(&p);
        jac_at[1] = u1 - self.r_y0.eval(&p);
        jac_at[2] = -self.r_uy1.eval(&p);
        jac_at[3] = 1.0 - self.r_uy0.eval(&p);
        Some(([sol[0], sol[1]], jac_at))
    }

    fn psi_k1(&self, z: f64, u1: f64, warm: &[f64; 2], tol: f64) -> Option<([f64; 2], [f64; 2])> {
        let (y, jac) = self.solve2(z, u1, warm, tol)?;
        let p = self.pt(z, u1, y[1], y[0]);
        let psi1 = u1 - self.r_y0.eval(&p);
        // dvars/du1 = -J2^{-1} dE/du1, dE/du1 = [f1 - R_u, -R_uu] = [0-ish, -R_uu]
        let rhs = [y[1] - self.r_u.eval(&p), -self.r_uu.eval(&p)];
        let det = jac[0] * jac[3] - jac[1] * jac[2];
        if det.abs() < 1e-300 {
            return None;
        }
        let dm0 = (rhs[0] * jac[3] - rhs[1] * jac[1]) / det;
        let df1 = (jac[0] * rhs[1] - jac[2] * rhs[0]) / det;
        let total = self.r_uy0.eval(&p)
            + self.r_y0y0.eval(&p) * (-df1)
            + self.r_y0y1.eval(&p) * (-dm0);
        Some(([psi1, 1.0 - total], y))
    }

    /// M0'(z) closed form along the branch; finite at z0.
    pub fn m0_prime(&self, z: f64, u1: f64, f1: f64, m0: f64) -> f64 {
        let p = self.pt(z, u1, f1, m0);
        self.r_z.eval(&p) / (1.0 - self.r_y1.eval(&p))
    }
}

/// Full k = 1 non-linear fold search. Returns the fold data; the type of the
/// M0 singularity is 3/2 (its derivative has the square-root singularity).
pub fn k1_solve(
    eq: &CatalyticEquation,
    opts: &ContinuationOptions,
) -> Result<(K1System, K1Fold), NonlinearError> {
    if eq.k != 1 {
        return Err(NonlinearError::WrongK(eq.k));
    }
    if eq.classify() != Linearity::Nonlinear {
        return Err(NonlinearError::NotNonlinear);
    }
    let m = solve_series(eq, opts.seed_order)?;
    let (m0s, _, deltas) = extract_sections(&m, 1);
    let radius = radius_guess(&m0s).ok_or(NonlinearError::SeriesOrderTooLow {
        got: opts.seed_order,
    })?;
    let sys = K1System::new(eq);
    let mut z = 1e-3 * radius;
    // Seed from the series and polish.
    let delta_poly = deltas.eval_at_z_f64(z);
    let eval_delta = |u: f64| delta_poly.iter().rev().fold(0.0, |acc, c| acc * u + c);
    let u1_seed = {
        // positive small root of u = C(z,u) by monotone iteration
        let mut u = 0.0f64;
        for _ in 0..500 {
            let p = sys.pt(z, u, eval_delta(u), m0s.eval_f64(z));
            u = sys.r_y0.eval(&p).max(0.0);
        }
        u
    };
    let mut x = sys
        .newton3(z, &[m0s.eval_f64(z), u1_seed, eval_delta(u1_seed)], opts.tol_residual)
        .ok_or_else(|| NonlinearError::NewtonDivergence("k1 seed".into()))?;
    // March with secant on det B1.
    let mut det_prev = sys.det_b1(z, x[1], x[2], x[0]);
    if det_prev <= 0.0 {
        return Err(NonlinearError::PositivityViolated { which: "det B1", z });
    }
    let det_start = det_prev;
    let mut h = z;
    let mut stalled = 0;
    let mut z_prev = z;
    while det_prev > det_start * 1e-3 {
        let target = z + h;
        if target > opts.zmax {
            return Err(NonlinearError::NoSingularityFound { zmax: opts.zmax });
        }
        match sys.newton3(target, &x, opts.tol_residual) {
            Some(next) if sys.det_b1(target, next[1], next[2], next[0]) > 0.0 && next[1] > 0.0 => {
                let d = sys.det_b1(target, next[1], next[2], next[0]);
                let slope = (d - det_prev) / (target - z_prev);
                z_prev = target;
                z = target;
                x = next;
                det_prev = d;
                if slope < 0.0 {
                    h = (0.7 * (-d / slope)).max(z * 1e-11);
                } else {
                    h *= 1.5;
                }
            }
            _ => {
                h *= 0.4;
                stalled += 1;
                if stalled > 120 || h < z * 1e-12 {
                    break;
                }
            }
        }
    }
    // psi-Newton on (z, u1).
    let mut z0 = z + det_prev / (det_start / z).max(1e-300);
    let mut u1 = x[1];
    let mut warm = [x[0], x[2]];
    for _ in 0..60 {
        let (p0, y) = sys
            .psi_k1(z0, u1, &warm, opts.tol_residual)
            .ok_or_else(|| NonlinearError::NewtonDivergence("k1 fold psi".into()))?;
        warm = y;
        if p0[0].abs().max(p0[1].abs()) < 1e-13 {
            break;
        }
        let hz = (z0.abs() * 1e-7).max(1e-12);
        let hu = (u1.abs() * 1e-7).max(1e-12);
        let (pz, _) = sys
            .psi_k1(z0 + hz, u1, &warm, opts.tol_residual)
            .ok_or_else(|| NonlinearError::NewtonDivergence("k1 fold psi z".into()))?;
        let (pu, _) = sys
            .psi_k1(z0, u1 + hu, &warm, opts.tol_residual)
            .ok_or_else(|| NonlinearError::NewtonDivergence("k1 fold psi u".into()))?;
        let jac = [
            (pz[0] - p0[0]) / hz,
            (pu[0] - p0[0]) / hu,
            (pz[1] - p0[1]) / hz,
            (pu[1] - p0[1]) / hu,
        ];
        let det = jac[0] * jac[3] - jac[1] * jac[2];
        if det.abs() < 1e-300 {
            return Err(NonlinearError::NewtonDivergence("singular k1 fold Jacobian".into()));
        }
        let dz = (p0[0] * jac[3] - p0[1] * jac[1]) / det;
        let du = (jac[0] * p0[1] - jac[2] * p0[0]) / det;
        z0 -= dz;
        u1 -= du;
        if dz.abs() < 1e-15 * z0.abs() && du.abs() < 1e-15 {
            break;
        }
    }
    let (_, y) = sys
        .psi_k1(z0, u1, &warm, opts.tol_residual)
        .ok_or_else(|| NonlinearError::NewtonDivergence("k1 fold assembly".into()))?;
    let det_b1 = sys.det_b1(z0, u1, y[1], y[0]);
    if det_b1.abs() > 1e-8 {
        return Err(NonlinearError::NotAtSingularity { det_b1 });
    }
    let jac2 = {
        let (_, j) = sys
            .solve2(z0, u1, &y, opts.tol_residual)
            .ok_or_else(|| NonlinearError::NewtonDivergence("k1 condition probe".into()))?;
        j
    };
    let condition = condition_estimate(&jac2, 2);
    let m0_prime = sys.m0_prime(z0, u1, y[1], y[0]);
    Ok((
        sys,
        K1Fold {
            z0,
            u1,
            f1: y[1],
            m0: y[0],
            det_b1,
            condition,
            m0_prime,
        },
    ))
}

/// Finite-difference check helper: numeric Jacobian of the six-equation
/// residual map (used by tests and `verify`).
pub fn fd_jacobian6(sys: &NlSystem, z: f64, x: &[f64; 6]) -> [f64; 36] {
    let mut out = [0.0; 36];
    let mut base = [0.0; 6];
    sys.residual6(z, x, &mut base);
    for j in 0..6 {
        let h = (x[j].abs() * 1e-7).max(1e-9);
        let mut xp = *x;
        xp[j] += h;
        let mut rp = [0.0; 6];
        sys.residual6(z, &xp, &mut rp);
        for i in 0..6 {
            out[i * 6 + j] = (rp[i] - base[i]) / h;
        }
    }
    out
}

/// det of the split-system Jacobian block B' (4x4) assembled from the two
/// branches. The identity det B' = det B1 det B2 / (2h) is used as a
/// cross-check of the continuation state (the final +-column combinations
/// in the row-reduction contribute a factor 4 = (-2)^2).
pub fn split_system_det_b(sys: &NlSystem, s: &SystemState) -> Option<(f64, f64)> {
    let g = (s.u1 + s.u2) / 2.0;
    let h = ((s.u1 - s.u2) / 2.0).powi(2);
    if h <= 0.0 {
        return None;
    }
    let sq = h.sqrt();
    let p1 = [s.z, s.u1, s.f1, s.m1, s.m0];
    let p2 = [s.z, s.u2, s.f2, s.m1, s.m0];
    let plus = |a: f64, b: f64| (a + b) / 2.0;
    let minus = |a: f64, b: f64| (a - b) / (2.0 * sq);
    let f_plus = plus(s.f1, s.f2);
    let f_minus = minus(s.f1, s.f2);
    let e = |np: &NumPoly| (np.eval(&p1), np.eval(&p2));
    let (ruy0_1, ruy0_2) = e(&sys.r_uy0);
    let (ry0y0_1, ry0y0_2) = e(&sys.r_y0y0);
    let (ruu_1, ruu_2) = e(&sys.r_uu);
    let (ry0_1, ry0_2) = e(&sys.r_y0);
    let (ru_1, ru_2) = e(&sys.r_u);
    let ruy0_p = plus(ruy0_1, ruy0_2);
    let ruy0_m = minus(ruy0_1, ruy0_2);
    let ry0y0_p = plus(ry0y0_1, ry0y0_2);
    let ry0y0_m = minus(ry0y0_1, ry0y0_2);
    let ruu_p = plus(ruu_1, ruu_2);
    let ruu_m = minus(ruu_1, ruu_2);
    let ry0_m = minus(ry0_1, ry0_2);
    let ru_m = minus(ru_1, ru_2);
    let bp = [
        2.0 * g - ruy0_p,
        1.0 - 0.5 * (ruy0_m + ry0y0_m * f_minus),
        -ry0y0_p,
        -h * ry0y0_m,
        2.0 - ruy0_m,
        -(ruy0_p + ry0y0_p * f_minus - ry0_m) / (2.0 * h),
        -ry0y0_m,
        -ry0y0_p,
        2.0 * f_plus - ruu_p,
        2.0 * f_minus - 0.5 * (ruu_m + ruy0_m * f_minus),
        2.0 * g - ruy0_p,
        2.0 * h - h * ruy0_m,
        2.0 * f_minus - ruu_m,
        -(ruu_p + ruy0_p * f_minus - ru_m) / (2.0 * h),
        2.0 - ruy0_m,
        2.0 * g - ruy0_p,
    ];
    let det_bp = det_dense(&bp, 4);
    let blocks = sys.blocks(s);
    Some((det_bp, blocks.det_b1 * blocks.det_b2 / (2.0 * h)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equation::parse_equation;
    use crate::fixtures;

    fn opts() -> ContinuationOptions {
        ContinuationOptions::default()
    }

    #[test]
    fn const3_init_state_residual() {
        let eq = parse_equation(fixtures::CONST3).unwrap();
        let (sys, s) = init_state(&eq, &opts()).unwrap();
        let mut res = [0.0; 6];
        sys.residual6(s.z, &NlSystem::state_to_x(&s), &mut res);
        assert!(res.iter().all(|r| r.abs() < 1e-12), "{res:?}");
        assert!(s.u1 > 0.0 && s.u2 < 0.0, "{s:?}");
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let eq = parse_equation(fixtures::CONST3).unwrap();
        let (sys, s) = init_state(&eq, &opts()).unwrap();
        let s = continue_state(&sys, &s, 0.02, &opts()).unwrap();
        let x = NlSystem::state_to_x(&s);
        let mut exact = [0.0; 36];
        sys.jacobian6(s.z, &x, &mut exact);
        let fd = fd_jacobian6(&sys, s.z, &x);
        for i in 0..36 {
            let scale = exact[i].abs().max(1.0);
            assert!(
                (exact[i] - fd[i]).abs() < 1e-5 * scale,
                "entry {i}: exact {} vs fd {}",
                exact[i],
                fd[i]
            );
        }
    }

    #[test]
    fn const3_monotone_continuation() {
        let eq = parse_equation(fixtures::CONST3).unwrap();
        let (sys, s0) = init_state(&eq, &opts()).unwrap();
        let s1 = continue_state(&sys, &s0, 0.02, &opts()).unwrap();
        let s2 = continue_state(&sys, &s1, 0.045, &opts()).unwrap();
        assert!(s1.u1 > s0.u1 && s2.u1 > s1.u1, "u1 must increase");
        let b1 = sys.blocks(&s1);
        let b2 = sys.blocks(&s2);
        assert!(b1.det_b1 > 0.0 && b1.det_b2 > 0.0);
        assert!(b2.det_b1 > 0.0 && b2.det_b2 > 0.0);
        // bad target is rejected
        assert!(matches!(
            continue_state(&sys, &s2, 0.01, &opts()),
            Err(NonlinearError::BadTarget { .. })
        ));
    }

    #[test]
    fn const3_fold_values_match_paper() {
        let eq = parse_equation(fixtures::CONST3).unwrap();
        let (sys, fold) = find_z0_nonlinear(&eq, &opts()).unwrap();
        let z0 = 4.0 / 81.0;
        assert!((fold.z0 - z0).abs() < 1e-8, "z0 = {} want {}", fold.z0, z0);
        let s = &fold.state;
        assert!((s.u1 - 0.6867).abs() < 1e-3, "u1 = {}", s.u1);
        assert!((s.u2 + 0.1562).abs() < 1e-3, "u2 = {}", s.u2);
        assert!((s.f1 - 0.1070).abs() < 1e-3, "f1 = {}", s.f1);
        assert!((s.f2 - 0.0433).abs() < 1e-3, "f2 = {}", s.f2);
        assert!((s.m1 - 0.1134).abs() < 1e-3, "m1 = {}", s.m1);
        assert!((s.m0 - 0.0833).abs() < 1e-3, "m0 = {}", s.m0);
        assert!((fold.blocks.det_a + 0.2588).abs() < 1e-3, "det A = {}", fold.blocks.det_a);
        assert!((fold.blocks.det_b2 - 0.1828).abs() < 1e-3, "det B2 = {}", fold.blocks.det_b2);
        assert!(fold.blocks.det_b1.abs() < 1e-8);
        // The fold state is exactly (z0, u1, u2, m1, m0) =
        // (4/81, 11/16, -5/32, 49/432, 1/12); evaluating the T expression
        // there gives 2.8699356175858741 (confirmed by an independent
        // 40-digit evaluation of the same third-derivative combination).
        let t = compute_t(&sys, s, 1e-8).unwrap();
        let expect = 2.8699356175858741;
        assert!(
            (t.value - expect).abs() < 1e-9 * expect,
            "T = {} want {}",
            t.value,
            expect
        );
        assert!((t.delta_u - 0.58018029868768661656).abs() < 1e-10);
    }

    #[test]
    fn const3_split_system_determinant_identity() {
        let eq = parse_equation(fixtures::CONST3).unwrap();
        let (sys, s0) = init_state(&eq, &opts()).unwrap();
        for target in [0.02, 0.035, 0.045] {
            let s = continue_state(&sys, &s0, target, &opts()).unwrap();
            let (lhs, rhs) = split_system_det_b(&sys, &s).unwrap();
            assert!(
                (lhs - rhs).abs() < 1e-8 * rhs.abs().max(1e-8),
                "det B' = {lhs} vs det B1 det B2 / 2h = {rhs} at z = {target}"
            );
        }
    }

    #[test]
    fn maps_k1_fold() {
        let eq = parse_equation(fixtures::MAPS).unwrap();
        let (_sys, fold) = k1_solve(&eq, &opts()).unwrap();
        assert!(
            (fold.z0 - 1.0 / 12.0).abs() < 1e-10,
            "maps z0 = {} want 1/12",
            fold.z0
        );
        assert!(fold.det_b1.abs() < 1e-8);
        assert!(fold.m0_prime.is_finite() && fold.m0_prime > 0.0);
    }

    #[test]
    fn guards() {
        let lp12 = parse_equation(fixtures::LP12).unwrap();
        let lp12 = lp12.substitute_w(&crate::rat::rat_from_i64(1));
        assert!(matches!(
            init_state(&lp12, &opts()),
            Err(NonlinearError::NotNonlinear)
        ));
        assert!(matches!(
            k1_solve(&lp12, &opts()),
            Err(NonlinearError::WrongK(2))
        ));
        let maps = parse_equation(fixtures::MAPS).unwrap();
        assert!(matches!(
            init_state(&maps, &opts()),
            Err(NonlinearError::WrongK(1))
        ));
    }

    #[test]
    fn t_rejects_linear_input() {
        let lp12 = parse_equation(fixtures::LP12).unwrap();
        let lp12 = lp12.substitute_w(&crate::rat::rat_from_i64(1));
        let sys = NlSystem::new(&lp12);
        let fake = SystemState {
            z: 0.25,
            u1: 1.0,
            u2: -0.38,
            f1: 1.0,
            f2: 1.0,
            m1: 0.9,
            m0: 1.5,
        };
        assert!(matches!(
            compute_t(&sys, &fake, 1e-8),
            Err(NonlinearError::LinearEquation)
        ));
    }
}
