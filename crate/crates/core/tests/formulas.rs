mod common;

use common::*;
use rand::Rng;
use medsens_core::mediation::*;
use medsens_core::oracle::{construct_confounder, ConfounderTarget};

#[test]
fn adjusted_estimators_match_long_regressions() {
    let mut r = rng(42);
    for i in 0..60 {
        let q = 1 + i % 3;
        let d = random_data(&mut r, if i % 2 == 0 { 50 } else { 200 }, q, 1 + (i / 3) % 3);
        let mm = fit_observed(&d).unwrap();
        let r_m = in_ball(&mut r, q, 0.9);
        let s = NaturalSensitivity { r_y: r.random_range(-0.9..0.9), r_m: r_m.clone(), r_a: r.random_range(-0.9..0.9) };
        let u = col(&construct_confounder(&d, &ConfounderTarget::new(s.r_y, s.r_m.clone(), s.r_a)).unwrap());
        let long = long_regressions(&d, &u);
        assert!(rel_err(direct_adjusted(&mm, &s).unwrap(), long.theta1) < 1e-8, "direct {i}");
        let prod = long.theta3.dot(&long.beta1);
        assert!(rel_err(indirect_adjusted_product(&mm, &s).unwrap(), prod) < 1e-8, "product {i}");
        assert!(rel_err(indirect_adjusted_difference(&mm, &s).unwrap(), long.gamma1 - long.theta1) < 1e-8, "difference {i}");
    }
}
