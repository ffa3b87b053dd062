//! Omitted-variable bias adjusters for a regression of `y` on `a` and `c` when
//! a confounder `u` is missing from the design.

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Residualizer};

/// Norms at or above this are treated as lying on the unit sphere.
pub const BOUNDARY: f64 = 1.0 - 1e-12;

/// Sensitivity parameters for a scalar confounder.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarUSensitivity {
    /// `R_{y~u|a,c}`, one entry per outcome column.
    pub r_y_u: Vec<f64>,
    /// `R_{a~u|c}`, one entry per exposure column.
    pub r_a_u: Vec<f64>,
}

/// Sensitivity parameters for a vector confounder.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorUSensitivity {
    /// `R_{y~u|a,c}`, `d_y x d_u`.
    pub r_y_u: Mat,
    /// `R_{a~u|c}`, `d_a x d_u`.
    pub r_a_u: Mat,
    /// `cov(u|c)`; the identity when `None`.
    pub cov_u_perp_c: Option<Mat>,
}

/// Observed quantities needed by the adjusters.
#[derive(Debug, Clone, PartialEq)]
pub struct OvbMoments {
    /// Coefficient of `a` in the short regression, `d_y x d_a`.
    pub theta_obs: Mat,
    /// `cov(y|a,c)`.
    pub cov_y_res: Mat,
    /// `cov(a|c)`.
    pub cov_a_res: Mat,
}

impl OvbMoments {
    /// Fits the short regression of `y` on `(a, c)`; an intercept is added to
    /// `c` when missing.
    pub fn from_data(y: &Mat, a: &Mat, c: &Mat) -> Result<Self> {
        let controls = linalg::with_intercept(c);
        let res = Residualizer::new(&controls)?;
        let yr = res.apply(y);
        let ar = res.apply(a);
        let cov_a_res = linalg::sample_cov(&ar);
        let cov_ya = linalg::sample_cross_cov(&yr, &ar);
        let cov_a_inv = linalg::sym_inv(&cov_a_res)?;
        let theta_obs = &cov_ya * &cov_a_inv;
        let cov_y_res = linalg::sample_cov(&yr) - &cov_ya * &cov_a_inv * cov_ya.transpose();
        Ok(Self { theta_obs, cov_y_res, cov_a_res })
    }
}

fn check_ball(name: &'static str, norm: f64) -> Result<()> {
    if !norm.is_finite() || norm >= BOUNDARY {
        return Err(Error::BoundaryR { name, norm });
    }
    Ok(())
}

fn check_shapes(m: &OvbMoments, dy: usize, da: usize) -> Result<()> {
    if m.theta_obs.nrows() != dy || m.theta_obs.ncols() != da {
        return Err(Error::DimensionMismatch(format!(
            "theta_obs is {}x{}, sensitivity implies {dy}x{da}",
            m.theta_obs.nrows(),
            m.theta_obs.ncols()
        )));
    }
    if m.cov_y_res.nrows() != dy || m.cov_a_res.nrows() != da {
        return Err(Error::DimensionMismatch("residual covariance blocks".into()));
    }
    Ok(())
}

/// Long-regression coefficient of `a` for a scalar confounder.
pub fn adjust_scalar_u(m: &OvbMoments, s: &ScalarUSensitivity) -> Result<Mat> {
    let dy = s.r_y_u.len();
    let da = s.r_a_u.len();
    check_shapes(m, dy, da)?;
    let ry = linalg::Vector::from_column_slice(&s.r_y_u);
    let ra = linalg::Vector::from_column_slice(&s.r_a_u);
    check_ball("r_y_u", ry.norm())?;
    check_ball("r_a_u", ra.norm())?;
    if ry.iter().all(|v| *v == 0.0) || ra.iter().all(|v| *v == 0.0) {
        return Ok(m.theta_obs.clone());
    }
    let sy = linalg::sym_sqrt(&m.cov_y_res)?;
    let sa_inv = linalg::sym_inv_sqrt(&m.cov_a_res)?;
    let bias = sy * ry * ra.transpose() * sa_inv / (1.0 - ra.norm_squared()).sqrt();
    Ok(&m.theta_obs - bias)
}

/// `cov(u|a,c)` from `cov(u|c)` and `R_{a~u|c}`.
pub fn cov_u_update(cov_u: &Mat, r: &Mat) -> Result<Mat> {
    if r.ncols() != cov_u.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "R has {} columns, cov(u) is {}x{}",
            r.ncols(),
            cov_u.nrows(),
            cov_u.ncols()
        )));
    }
    check_ball("r_a_u", linalg::spectral_norm(r))?;
    let root = linalg::sym_sqrt(cov_u)?;
    let out = cov_u - &root * r.transpose() * r * &root;
    Ok((&out + out.transpose()) * 0.5)
}

/// Long-regression coefficient of `a` for a vector confounder.
pub fn adjust_vector_u(m: &OvbMoments, s: &VectorUSensitivity) -> Result<Mat> {
    let du = s.r_y_u.ncols();
    if s.r_a_u.ncols() != du {
        return Err(Error::DimensionMismatch("r_y_u and r_a_u disagree on dim(u)".into()));
    }
    check_shapes(m, s.r_y_u.nrows(), s.r_a_u.nrows())?;
    check_ball("r_y_u", linalg::spectral_norm(&s.r_y_u))?;
    check_ball("r_a_u", linalg::spectral_norm(&s.r_a_u))?;
    if s.r_y_u.iter().all(|v| *v == 0.0) || s.r_a_u.iter().all(|v| *v == 0.0) {
        return Ok(m.theta_obs.clone());
    }
    let q = s.cov_u_perp_c.clone().unwrap_or_else(|| Mat::identity(du, du));
    if q.nrows() != du || q.ncols() != du {
        return Err(Error::DimensionMismatch("cov_u_perp_c".into()));
    }
    let updated = cov_u_update(&q, &s.r_a_u)?;
    let upd_inv_sqrt =
        linalg::sym_inv_sqrt(&updated).map_err(|_| Error::ConfounderCovarianceDegenerate)?;
    let q_sqrt = linalg::sym_sqrt(&q)?;
    let sy = linalg::sym_sqrt(&m.cov_y_res)?;
    let sa_inv = linalg::sym_inv_sqrt(&m.cov_a_res)?;
    let bias = sy * &s.r_y_u * upd_inv_sqrt * q_sqrt * s.r_a_u.transpose() * sa_inv;
    Ok(&m.theta_obs - bias)
}
