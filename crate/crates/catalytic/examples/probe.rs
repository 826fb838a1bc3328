use catalytic::equation::parse_equation;
use catalytic::fixtures;
use catalytic::series::solve_sections;
use std::time::Instant;

fn main() {
    let lp12 = parse_equation(fixtures::LP12).unwrap().substitute_w(&catalytic::rat::rat_from_i64(1));
    let t = Instant::now();
    let s = solve_sections(&lp12, 2000).unwrap();
    println!("lp12@2000: {:?} ({} nonzero)", t.elapsed(), s.m0.support().len());
    for (name, doc, order) in [("maps", fixtures::MAPS, 400usize), ("const3", fixtures::CONST3, 400)] {
        let eq = parse_equation(doc).unwrap();
        let t = Instant::now();
        let s = solve_sections(&eq, order).unwrap();
        println!("{name}@{order}: {:?} ({} nonzero)", t.elapsed(), s.m0.support().len());
    }
    let eq = parse_equation(fixtures::CONST3).unwrap();
    let opts = catalytic::nonlinear::ContinuationOptions::default();
    let t = Instant::now();
    let (_, fold) = catalytic::nonlinear::find_z0_nonlinear(&eq, &opts).unwrap();
    println!("const3 fold: {:?} z0={} cond={:.1} dd={}", t.elapsed(), fold.z0, fold.condition5, fold.used_dd);
    let eqm = parse_equation(fixtures::MAPS).unwrap();
    let t = Instant::now();
    let (_, fold) = catalytic::nonlinear::k1_solve(&eqm, &opts).unwrap();
    println!("maps fold: {:?} z0={}", t.elapsed(), fold.z0);
}
