//! Shipped equation fixtures, embedded so that every consumer resolves them
//! identically regardless of working directory.
//!
//! - `lp12`: non-negative lattice paths with steps +-1, +-2 (k = 2, linear);
//!   the mark w counts +1 steps.
//! - `lp2`: steps +-2 only (k = 2, linear, even curve).
//! - `maps`: rooted planar maps shifted to u = 0 (k = 1, non-linear).
//! - `const3`: 3-constellations shifted by v = u - 1 (k = 2, non-linear,
//!   R mode because the original equation mentions the section itself).

pub const LP12: &str = include_str!("../fixtures/lp12.json");
pub const LP2: &str = include_str!("../fixtures/lp2.json");
pub const MAPS: &str = include_str!("../fixtures/maps.json");
pub const CONST3: &str = include_str!("../fixtures/const3.json");

/// Looks up a built-in fixture document by name.
pub fn by_name(name: &str) -> Option<&'static str> {
    match name {
        "lp12" => Some(LP12),
        "lp2" => Some(LP2),
        "maps" => Some(MAPS),
        "const3" => Some(CONST3),
        _ => None,
    }
}

pub const ALL: [(&str, &str); 4] = [
    ("lp12", LP12),
    ("lp2", LP2),
    ("maps", MAPS),
    ("const3", CONST3),
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equation::{parse_equation, Linearity, Mode};
    use crate::poly::{Poly, Var};

    #[test]
    fn fixtures_parse_and_classify() {
        let lp12 = parse_equation(LP12).unwrap();
        assert_eq!((lp12.k, lp12.mode, lp12.classify()), (2, Mode::Q, Linearity::Linear));
        assert!(lp12.has_mark);
        let lp2 = parse_equation(LP2).unwrap();
        assert_eq!((lp2.k, lp2.classify()), (2, Linearity::Linear));
        let maps = parse_equation(MAPS).unwrap();
        assert_eq!((maps.k, maps.classify()), (1, Linearity::Nonlinear));
        let const3 = parse_equation(CONST3).unwrap();
        assert_eq!(
            (const3.k, const3.mode, const3.classify()),
            (2, Mode::R, Linearity::Nonlinear)
        );
        assert!(by_name("nope").is_none());
    }

    #[test]
    fn const3_fixture_matches_structural_construction() {
        // Rebuild R = z(v+1)[(v^2 y0 + v y1 + y2 + 1)^3
        //              + (2v^2 y0 + 2v y1 + 3 y2 + 3)(v y0 + y1) + y0]
        // from polynomial operations and compare with the shipped expansion.
        let eq = parse_equation(CONST3).unwrap();
        let v = Poly::var(Var::U);
        let y0 = Poly::var(Var::S0);
        let y1 = Poly::var(Var::S1);
        let y2 = Poly::var(Var::S2);
        let one = Poly::one();
        let m = v.pow(2).mul(&y0).add(&v.mul(&y1)).add(&y2);
        let cubic = m.add(&one).pow(3);
        let mid = v
            .pow(2)
            .mul(&y0)
            .scale(&crate::rat::rat_from_i64(2))
            .add(&v.mul(&y1).scale(&crate::rat::rat_from_i64(2)))
            .add(&y2.scale(&crate::rat::rat_from_i64(3)))
            .add(&one.scale(&crate::rat::rat_from_i64(3)));
        let expect = v
            .add(&one)
            .mul(&cubic.add(&mid.mul(&v.mul(&y0).add(&y1))).add(&y0))
            .mul_var(Var::Z, 1);
        assert_eq!(eq.q_or_r, expect);
    }
}
