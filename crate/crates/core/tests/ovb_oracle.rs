mod common;

use common::*;
use medsens_core::linalg::{self, r_matrix_mat, Mat};
use medsens_core::oracle::{construct_general, Block, BlockTarget};
use medsens_core::ovb::*;
use rand::Rng;

/// Long regression of every column of `y` on `(a, c, u)`; returns the `a` block
/// as `d_y x d_a`.
fn long_coef(y: &Mat, a: &Mat, c: &Mat, u: &Mat) -> Mat {
    let design = linalg::hcat(&[a, c, u]);
    let fit = linalg::ols_fit_mat(y, &design).unwrap();
    fit.coefficients.rows(0, a.ncols()).transpose()
}

fn random_r(r: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize, norm: f64) -> Mat {
    let m = Mat::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0));
    let s = linalg::spectral_norm(&m);
    m * (norm / s)
}

fn blocks(a: &Mat, y: &Mat, r_a: Mat, r_y: Mat) -> Vec<Block> {
    vec![
        Block { values: a.clone(), target: BlockTarget::R { value: r_a, given: vec![] } },
        Block { values: y.clone(), target: BlockTarget::R { value: r_y, given: vec![0] } },
    ]
}

#[test]
fn scalar_adjuster_matches_long_regression() {
    let mut r = rng(7);
    for i in 0..40 {
        let n = 80 + 10 * i;
        let (dy, da) = (1 + i % 2, 1 + (i / 2) % 2);
        let c = linalg::with_intercept(&Mat::from_fn(n, 2, |_, _| normal(&mut r)));
        let a = Mat::from_fn(n, da, |k, _| 0.5 * c[(k, 1)] + normal(&mut r));
        let y = Mat::from_fn(n, dy, |k, _| a.row(k).sum() + c[(k, 2)] + normal(&mut r));
        let norm = r.random_range(0.0..0.9);
        let r_a = random_r(&mut r, da, 1, norm);
        let norm = r.random_range(0.0..0.9);
        let r_y = random_r(&mut r, dy, 1, norm);
        let u = construct_general(&c, &blocks(&a, &y, r_a.clone(), r_y.clone()), &Mat::identity(1, 1)).unwrap();
        assert!((r_matrix_mat(&a, &u, &c).unwrap() - &r_a).amax() < 1e-8);
        let m = OvbMoments::from_data(&y, &a, &c).unwrap();
        let s = ScalarUSensitivity {
            r_y_u: r_y.column(0).iter().copied().collect(),
            r_a_u: r_a.column(0).iter().copied().collect(),
        };
        let got = adjust_scalar_u(&m, &s).unwrap();
        let want = long_coef(&y, &a, &c, &u);
        assert!((got - &want).amax() < 1e-8 * want.amax().max(1.0), "instance {i}");
    }
}

#[test]
fn vector_adjuster_matches_long_regression() {
    let mut r = rng(8);
    for i in 0..40 {
        let n = 120;
        let (dy, da, du) = (1 + i % 2, 1 + (i / 2) % 2, 2);
        let c = linalg::with_intercept(&Mat::from_fn(n, 1, |_, _| normal(&mut r)));
        let a = Mat::from_fn(n, da, |k, _| 0.5 * c[(k, 1)] + normal(&mut r));
        let y = Mat::from_fn(n, dy, |k, _| a.row(k).sum() + normal(&mut r));
        let norm = r.random_range(0.0..0.8);
        let r_a = random_r(&mut r, da, du, norm);
        let norm = r.random_range(0.0..0.8);
        let r_y = random_r(&mut r, dy, du, norm);
        let g = Mat::from_fn(du, du, |_, _| r.random_range(-1.0..1.0));
        let cov_u = &g * g.transpose() + Mat::identity(du, du) * 0.3;
        let u = construct_general(&c, &blocks(&a, &y, r_a.clone(), r_y.clone()), &cov_u).unwrap();
        let m = OvbMoments::from_data(&y, &a, &c).unwrap();
        let s = VectorUSensitivity { r_y_u: r_y, r_a_u: r_a, cov_u_perp_c: Some(cov_u) };
        let got = adjust_vector_u(&m, &s).unwrap();
        let want = long_coef(&y, &a, &c, &u);
        assert!((got - &want).amax() < 1e-8 * want.amax().max(1.0), "instance {i}");
    }
}
