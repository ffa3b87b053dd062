#![allow(dead_code)]

use medsens_core::linalg::{self, Mat, Vector};
use medsens_core::mediation::MediationData;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn col(v: &Vector) -> Mat {
    Mat::from_column_slice(v.len(), 1, v.as_slice())
}

/// Linear mediation data with random path coefficients; `pc` user covariates.
pub fn random_data(rng: &mut ChaCha8Rng, n: usize, q: usize, pc: usize) -> MediationData {
    let ca: Vec<f64> = (0..pc).map(|_| rng.random_range(-1.0..1.0)).collect();
    let am: Vec<f64> = (0..q).map(|_| rng.random_range(-1.0..1.0)).collect();
    let my: Vec<f64> = (0..q).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ay = rng.random_range(-1.0..1.0);
    let c = Mat::from_fn(n, pc, |_, _| normal(rng));
    let a = Vector::from_fn(n, |i, _| (0..pc).map(|k| ca[k] * c[(i, k)]).sum::<f64>() + normal(rng));
    let m = Mat::from_fn(n, q, |i, j| am[j] * a[i] + 0.3 * c.row(i).sum() + normal(rng));
    let y = Vector::from_fn(n, |i, _| {
        ay * a[i] + (0..q).map(|k| my[k] * m[(i, k)]).sum::<f64>() - 0.2 * c.row(i).sum() + normal(rng)
    });
    MediationData::new(y, a, m, c).unwrap()
}

/// Uniform point in the ball of the given radius.
pub fn in_ball(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> Vector {
    let dir = Vector::from_fn(d, |_, _| normal(rng)).normalize();
    let r: f64 = rng.random_range(0.0..1.0);
    dir * radius * r.powf(1.0 / d as f64)
}

/// Least squares with classical standard errors.
pub struct LongFit {
    pub coef: Mat,
    pub se: Vec<f64>,
}

pub fn long_fit(response: &Mat, design: &Mat) -> LongFit {
    let fit = linalg::ols_fit_mat(response, design).unwrap();
    let n = design.nrows();
    let k = design.ncols();
    let sigma2 = fit.residuals.norm_squared() / (n - k) as f64;
    let xtx_inv = (design.transpose() * design).try_inverse().unwrap();
    let se = (0..k).map(|j| (sigma2 * xtx_inv[(j, j)]).sqrt()).collect();
    LongFit { coef: fit.coefficients, se }
}

/// Coefficients of the regressions that include the confounder.
pub struct LongRegressions {
    pub theta1: f64,
    pub theta1_se: f64,
    pub theta3: Vector,
    pub theta3_se: Vec<f64>,
    pub beta1: Vector,
    pub beta1_se: Vec<f64>,
    pub gamma1: f64,
}

pub fn long_regressions(d: &MediationData, u: &Mat) -> LongRegressions {
    let q = d.q();
    let a = col(&d.a);
    let y = col(&d.y);
    let out = long_fit(&y, &linalg::hcat(&[&a, &d.m, &d.c, u]));
    let med = linalg::hcat(&[&a, &d.c, u]);
    let mut beta1 = Vector::zeros(q);
    let mut beta1_se = vec![0.0; q];
    for k in 0..q {
        let f = long_fit(&d.m.columns(k, 1).into_owned(), &med);
        beta1[k] = f.coef[(0, 0)];
        beta1_se[k] = f.se[0];
    }
    let tot = long_fit(&y, &med);
    LongRegressions {
        theta1: out.coef[(0, 0)],
        theta1_se: out.se[0],
        theta3: out.coef.view((1, 0), (q, 1)).column(0).into_owned(),
        theta3_se: out.se[1..=q].to_vec(),
        beta1,
        beta1_se,
        gamma1: tot.coef[(0, 0)],
    }
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1.0)
}
