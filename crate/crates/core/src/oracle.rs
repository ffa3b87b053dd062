//! Explicit confounder columns that achieve prescribed sample sensitivity
//! parameters, and the simulation designs used to study robustness values.
//!
//! The construction works on the observed blocks residualized on a base set of
//! controls. Blocks are visited in order; each one pins the covariance between
//! the block and `u` either directly or through an R measure relative to a set
//! of earlier blocks. Whatever covariance of `u` remains is filled with columns
//! orthogonal to every observed column, so the targets hold exactly in sample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Residualizer, Vector};
use crate::mediation::{fit_observed, EffectKind, MediationData};
use crate::robustness::{default_rho_grid, rv_estimate_fast, ConfounderMode, SearchOptions};

/// How one observed block relates to the constructed confounder.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockTarget {
    /// `R_{x~u|base, earlier}` where `earlier` indexes previous blocks.
    R { value: Mat, given: Vec<usize> },
    /// Raw `cov(x|base, u|base)`.
    Cov(Mat),
}

/// One observed block and its target.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub values: Mat,
    pub target: BlockTarget,
}

/// Builds `U` (`n x d_u`) such that `cov(U|base) = cov_u` and every block
/// target holds exactly in sample. `U` is orthogonal to `base`.
pub fn construct_general(base: &Mat, blocks: &[Block], cov_u: &Mat) -> Result<Mat> {
    let n = base.nrows();
    let du = cov_u.nrows();
    let res = Residualizer::new(base)?;
    let widths: Vec<usize> = blocks.iter().map(|b| b.values.ncols()).collect();
    let offsets: Vec<usize> = widths
        .iter()
        .scan(0, |acc, w| {
            let o = *acc;
            *acc += w;
            Some(o)
        })
        .collect();
    let total: usize = widths.iter().sum();
    let required = base.ncols() + total + du + 1;
    if n < required {
        return Err(Error::InsufficientSamples { n, required });
    }
    let mut w = Mat::zeros(n, total);
    for (b, &o) in blocks.iter().zip(&offsets) {
        if b.values.nrows() != n {
            return Err(Error::DimensionMismatch("block row count".into()));
        }
        w.columns_mut(o, b.values.ncols()).copy_from(&res.apply(&b.values));
    }
    let sigma = linalg::sample_cov(&w);
    let mut g = Mat::zeros(total, du);

    for (i, b) in blocks.iter().enumerate() {
        let (oi, di) = (offsets[i], widths[i]);
        let gi = match &b.target {
            BlockTarget::Cov(cov) => {
                if cov.nrows() != di || cov.ncols() != du {
                    return Err(Error::DimensionMismatch(format!("covariance target of block {i}")));
                }
                cov.clone()
            }
            BlockTarget::R { value, given } => {
                if value.nrows() != di || value.ncols() != du {
                    return Err(Error::DimensionMismatch(format!("R target of block {i}")));
                }
                if given.iter().any(|&k| k >= i) {
                    return Err(Error::InvalidInput("conditioning blocks must precede the target".into()));
                }
                let idx: Vec<usize> = given.iter().flat_map(|&k| offsets[k]..offsets[k] + widths[k]).collect();
                let s_ii = sigma.view((oi, oi), (di, di)).into_owned();
                if idx.is_empty() {
                    linalg::sym_sqrt(&s_ii)? * value * sqrt_pd(cov_u, i)?
                } else {
                    let s_pp = sigma.select_rows(&idx).select_columns(&idx);
                    let s_ip = sigma.rows(oi, di).into_owned().select_columns(&idx);
                    let g_p = g.select_rows(&idx);
                    let s_pp_inv = linalg::sym_inv(&s_pp)?;
                    let cond_x = sym(&(&s_ii - &s_ip * &s_pp_inv * s_ip.transpose()));
                    let cond_u = sym(&(cov_u - g_p.transpose() * &s_pp_inv * &g_p));
                    &s_ip * &s_pp_inv * &g_p + linalg::sym_sqrt(&cond_x)? * value * sqrt_pd(&cond_u, i)?
                }
            }
        };
        g.rows_mut(oi, di).copy_from(&gi);
    }

    let sigma_inv = linalg::sym_inv(&sigma)?;
    let remaining = sym(&(cov_u - g.transpose() * &sigma_inv * &g));
    let remaining_sqrt = sqrt_pd(&remaining, blocks.len())?;
    let span = linalg::hcat(&[base, &w]);
    let v = orthogonal_completion(&span, du)?;
    Ok(&w * &sigma_inv * &g + v * remaining_sqrt)
}

fn sym(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

fn sqrt_pd(m: &Mat, stage: usize) -> Result<Mat> {
    let scale = m.diagonal().amax().max(1e-300);
    if linalg::min_eigenvalue(m) <= 1e-12 * scale {
        return Err(Error::InfeasibleTarget(format!(
            "confounder covariance left after block {stage} is not positive definite"
        )));
    }
    linalg::sym_sqrt(m)
}

/// `k` columns orthogonal to the span of `x`, mutually orthogonal, with sample
/// covariance equal to the identity. Deterministic: candidate directions are
/// the standard basis vectors in order.
pub fn orthogonal_completion(x: &Mat, k: usize) -> Result<Mat> {
    let n = x.nrows();
    let res = Residualizer::new(x)?;
    let mut out = Mat::zeros(n, k);
    let mut found = 0;
    for e in 0..n {
        if found == k {
            break;
        }
        let mut unit = Mat::zeros(n, 1);
        unit[(e, 0)] = 1.0;
        let mut v = res.apply(&unit);
        for j in 0..found {
            let prev = out.column(j);
            let proj = prev.dot(&v.column(0)) / prev.norm_squared();
            v.column_mut(0).axpy(-proj, &prev, 1.0);
        }
        // re-project once for numerical cleanliness
        v = res.apply(&v);
        let norm = v.norm();
        if norm > 0.1 {
            out.set_column(found, &(v.column(0) * ((n as f64 - 1.0).sqrt() / norm)));
            found += 1;
        }
    }
    if found < k {
        return Err(Error::InsufficientSamples { n, required: x.ncols() + k + 1 });
    }
    Ok(out)
}

/// Target natural sensitivity parameters for a scalar confounder.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfounderTarget {
    pub r_y: f64,
    pub r_m: Vector,
    pub r_a: f64,
    /// `var(u|c)`.
    pub var_u_perp_c: f64,
}

impl ConfounderTarget {
    pub fn new(r_y: f64, r_m: Vector, r_a: f64) -> Self {
        Self { r_y, r_m, r_a, var_u_perp_c: 1.0 }
    }
}

/// Scalar confounder achieving `R_{a~u|c} = r_a`, `R_{m~u|a,c} = r_m` and
/// `R_{y~u|a,m,c} = r_y` on the sample.
pub fn construct_confounder(data: &MediationData, target: &ConfounderTarget) -> Result<Vector> {
    let q = data.q();
    if target.r_m.len() != q {
        return Err(Error::DimensionMismatch("r_m length".into()));
    }
    if !(target.var_u_perp_c > 0.0) {
        return Err(Error::InvalidInput("var_u_perp_c must be positive".into()));
    }
    let blocks = natural_blocks(
        data,
        Mat::from_element(1, 1, target.r_a),
        Mat::from_column_slice(q, 1, target.r_m.as_slice()),
        Mat::from_element(1, 1, target.r_y),
    );
    let u = construct_general(&data.c, &blocks, &Mat::from_element(1, 1, target.var_u_perp_c))?;
    Ok(u.column(0).into_owned())
}

/// Vector confounder with `R_{a~u|c}`, `R_{m~u|a,c}`, `R_{y~u|a,m,c}` given as
/// matrices with `d_u` columns and `cov(u|c) = cov_u`.
pub fn construct_vector_confounder(
    data: &MediationData,
    r_a: Mat,
    r_m: Mat,
    r_y: Mat,
    cov_u: &Mat,
) -> Result<Mat> {
    construct_general(&data.c, &natural_blocks(data, r_a, r_m, r_y), cov_u)
}

fn natural_blocks(data: &MediationData, r_a: Mat, r_m: Mat, r_y: Mat) -> Vec<Block> {
    let n = data.n();
    vec![
        Block { values: Mat::from_column_slice(n, 1, data.a.as_slice()), target: BlockTarget::R { value: r_a, given: vec![] } },
        Block { values: data.m.clone(), target: BlockTarget::R { value: r_m, given: vec![0] } },
        Block {
            values: Mat::from_column_slice(n, 1, data.y.as_slice()),
            target: BlockTarget::R { value: r_y, given: vec![0, 1] },
        },
    ]
}

/// Confounder uncorrelated with every covariate whose leave-one-out parameters
/// `R_{a~u|c_-j}`, `R_{m~u|a,c_-j}` and `R_{y~u|a,m,c_-j}` take the given
/// values. `j` indexes the columns of `data.c` (0 is the intercept).
pub fn construct_benchmark_confounder(
    data: &MediationData,
    j: usize,
    r_a: f64,
    r_m: &Vector,
    r_y: f64,
) -> Result<Vector> {
    if j == 0 || j >= data.p() {
        return Err(Error::InvalidInput(format!("covariate index {j} is not a user covariate")));
    }
    let n = data.n();
    let keep: Vec<usize> = (0..data.p()).filter(|&k| k != j).collect();
    let base = data.c.select_columns(&keep);
    let cj = data.c.columns(j, 1).into_owned();
    let blocks = vec![
        Block { values: cj, target: BlockTarget::Cov(Mat::zeros(1, 1)) },
        Block { values: Mat::from_column_slice(n, 1, data.a.as_slice()), target: BlockTarget::R { value: Mat::from_element(1, 1, r_a), given: vec![] } },
        Block { values: data.m.clone(), target: BlockTarget::R { value: Mat::from_column_slice(r_m.len(), 1, r_m.as_slice()), given: vec![1] } },
        Block {
            values: Mat::from_column_slice(n, 1, data.y.as_slice()),
            target: BlockTarget::R { value: Mat::from_element(1, 1, r_y), given: vec![1, 2] },
        },
    ];
    let u = construct_general(&base, &blocks, &Mat::identity(1, 1))?;
    Ok(u.column(0).into_owned())
}

/// One cell of the mediator-dimension simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioDesign {
    pub dim_m: usize,
    /// Population `R^2_{a~m|c}`.
    pub r2_am: f64,
    /// Population `R^2_{y~m|a,c}`.
    pub r2_ym: f64,
    pub n: usize,
    pub seed: u64,
}

pub const RATIO_DEFAULT_N: usize = 500;

impl RatioDesign {
    pub fn new(dim_m: usize, r2_am: f64, r2_ym: f64) -> Self {
        Self { dim_m, r2_am, r2_ym, n: RATIO_DEFAULT_N, seed: 0 }
    }
}

/// `Sigma_ij = 0.5^|i-j|`.
pub fn mediator_cov(d: usize) -> Mat {
    Mat::from_fn(d, d, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()))
}

/// Unscaled exposure-to-mediator direction `(0, 1/(d-1), ..., 1)`.
pub fn mediator_path_shape(d: usize) -> Vector {
    if d == 1 {
        return Vector::from_element(1, 1.0);
    }
    Vector::from_fn(d, |i, _| i as f64 / (d - 1) as f64)
}

/// Unscaled mediator-to-outcome direction `(1, 1 - 1.5/(d-1), ..., -0.5)`.
pub fn outcome_path_shape(d: usize) -> Vector {
    if d == 1 {
        return Vector::from_element(1, 1.0);
    }
    Vector::from_fn(d, |i, _| 1.0 - 1.5 * i as f64 / (d - 1) as f64)
}

/// Population `R^2_{a~m}` when `a ~ N(0, 1)` and `m | a ~ N(alpha1 a, sigma)`.
pub fn population_r2_am(alpha1: &Vector, sigma: &Mat) -> Result<f64> {
    let cov_m = sigma + alpha1 * alpha1.transpose();
    let inv = linalg::sym_inv(&cov_m)?;
    Ok((alpha1.transpose() * inv * alpha1)[(0, 0)])
}

/// Population `R^2_{y~m|a}` when the outcome noise has unit variance.
pub fn population_r2_ym(alpha2: &Vector, sigma: &Mat) -> f64 {
    let explained = (alpha2.transpose() * sigma * alpha2)[(0, 0)];
    explained / (explained + 1.0)
}

/// Smallest `lambda > 0` with `f(lambda) = target` for increasing `f`, by
/// bisection.
fn solve_scale<F: Fn(f64) -> Result<f64>>(f: F, target: f64, name: &str) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::RootFindFailed(format!("{name} target {target} outside (0, 1)")));
    }
    let mut hi = 1.0;
    let mut doublings = 0;
    while f(hi)? < target {
        hi *= 2.0;
        doublings += 1;
        if doublings > 200 {
            return Err(Error::RootFindFailed(format!("{name} target {target} not bracketed")));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Scales `(lambda1, lambda2)` that hit the design's population targets.
pub fn design_scales(design: &RatioDesign) -> Result<(f64, f64)> {
    if design.dim_m == 0 {
        return Err(Error::InvalidInput("dim_m must be positive".into()));
    }
    let sigma = mediator_cov(design.dim_m);
    let a1 = mediator_path_shape(design.dim_m);
    let a2 = outcome_path_shape(design.dim_m);
    let l1 = solve_scale(|l| population_r2_am(&(&a1 * l), &sigma), design.r2_am, "R2_am")?;
    let l2 = solve_scale(|l| Ok(population_r2_ym(&(&a2 * l), &sigma)), design.r2_ym, "R2_ym")?;
    Ok((l1, l2))
}

/// Draws one data set: `a ~ N(0, 1)`, `m | a ~ N(alpha1 a, Sigma)`,
/// `y | a, m ~ N(a + alpha2' m, 1)`, no covariates beyond the intercept.
pub fn simulate_ratio_design(design: &RatioDesign) -> Result<MediationData> {
    let (l1, l2) = design_scales(design)?;
    let d = design.dim_m;
    let n = design.n;
    let alpha1 = mediator_path_shape(d) * l1;
    let alpha2 = outcome_path_shape(d) * l2;
    let chol = mediator_cov(d).cholesky().ok_or_else(|| Error::SingularCovariance("mediator noise".into()))?;
    let l = chol.l();
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    let a = Vector::from_fn(n, |_, _| rng.sample(StandardNormal));
    let mut m = Mat::zeros(n, d);
    for i in 0..n {
        let z = Vector::from_fn(d, |_, _| rng.sample(StandardNormal));
        let row = &alpha1 * a[i] + &l * z;
        m.set_row(i, &row.transpose());
    }
    let y = Vector::from_fn(n, |i, _| {
        let e: f64 = rng.sample(StandardNormal);
        a[i] + m.row(i).transpose().dot(&alpha2) + e
    });
    MediationData::new(y, a, m, Mat::zeros(n, 0))
}

/// Point-estimate robustness values of the indirect effect for one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RvRatioRow {
    pub dim_m: usize,
    pub r2_am: f64,
    pub r2_ym: f64,
    pub replication: usize,
    pub rv_scalar_u: f64,
    pub rv_vector_u: f64,
    /// `rv_vector_u / rv_scalar_u`; `None` when the scalar value is zero.
    pub ratio: Option<f64>,
}

/// Runs `replications` data sets per design (seeds `design.seed + r`) and
/// reports the indirect-effect robustness values for the point estimate under
/// a scalar and an unrestricted vector confounder.
pub fn rv_ratio_study(designs: &[RatioDesign], replications: usize, opts: &SearchOptions) -> Result<Vec<RvRatioRow>> {
    let grid = default_rho_grid();
    let jobs: Vec<(RatioDesign, usize)> =
        designs.iter().flat_map(|d| (0..replications).map(move |r| (*d, r))).collect();
    let rows: Vec<Result<RvRatioRow>> = jobs
        .par_iter()
        .map(|(d, r)| {
            let data = simulate_ratio_design(&RatioDesign { seed: d.seed.wrapping_add(*r as u64), ..*d })?;
            let mm = fit_observed(&data)?;
            let rv_s = rv_estimate_fast(&mm, EffectKind::Indirect, &grid, ConfounderMode::ScalarU, opts)?;
            let rv_v = rv_estimate_fast(&mm, EffectKind::Indirect, &grid, ConfounderMode::VectorU, opts)?;
            Ok(RvRatioRow {
                dim_m: d.dim_m,
                r2_am: d.r2_am,
                r2_ym: d.r2_ym,
                replication: *r,
                rv_scalar_u: rv_s,
                rv_vector_u: rv_v,
                ratio: (rv_s > 0.0).then(|| rv_v / rv_s),
            })
        })
        .collect();
    rows.into_iter().collect()
}
