//! Dense linear algebra used by every estimator: least squares,
//! residualization, sample covariances, symmetric square roots and the
//! matrix-valued partial correlation ("R measure").
//!
//! All covariances use divisor `n - 1`. R measures are scale free, so the
//! divisor only matters for the variance ratios that enter the bias formulas,
//! where it cancels as long as it is applied consistently.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative singular-value threshold for rank checks.
pub const RANK_TOL: f64 = 1e-10;
/// Eigenvalues above `-PSD_TOL * scale` are clamped to zero by [`sym_sqrt`].
pub const PSD_TOL: f64 = 1e-10;

/// An `n x d` block of observations with column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    pub values: Mat,
    pub column_labels: Vec<String>,
}

impl DataMatrix {
    pub fn new(values: Mat, column_labels: Vec<String>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "data matrix must be non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if column_labels.len() != values.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} columns",
                column_labels.len(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("data matrix".into()));
        }
        Ok(Self { values, column_labels })
    }

    /// Wraps a matrix with generated labels `prefix0, prefix1, ...`.
    pub fn unlabeled(values: Mat, prefix: &str) -> Result<Self> {
        let labels = (0..values.ncols()).map(|j| format!("{prefix}{j}")).collect();
        Self::new(values, labels)
    }

    pub fn from_column(values: &[f64], label: &str) -> Result<Self> {
        Self::new(Mat::from_column_slice(values.len(), 1, values), vec![label.to_string()])
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}

/// Result of a (multi-response) least squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LsFit {
    /// `d x k`: one column of coefficients per response column.
    pub coefficients: Mat,
    pub residuals: Mat,
    pub fitted: Mat,
}

/// Matrix partial correlation between two blocks given a conditioning set.
#[derive(Debug, Clone, PartialEq)]
pub struct RMatrix {
    pub value: Mat,
    pub conditioning_set: Vec<String>,
}

impl RMatrix {
    pub fn spectral_norm(&self) -> f64 {
        spectral_norm(&self.value)
    }

    pub fn transpose(&self) -> RMatrix {
        RMatrix { value: self.value.transpose(), conditioning_set: self.conditioning_set.clone() }
    }
}

/// Least squares of every column of `response` on `design`.
pub fn ols_fit(response: &DataMatrix, design: &DataMatrix) -> Result<LsFit> {
    ols_fit_mat(&response.values, &design.values)
}

/// Matrix-level least squares used internally.
pub fn ols_fit_mat(response: &Mat, design: &Mat) -> Result<LsFit> {
    if response.nrows() != design.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "response has {} rows, design has {}",
            response.nrows(),
            design.nrows()
        )));
    }
    if design.ncols() > design.nrows() {
        return Err(Error::RankDeficient(f64::INFINITY));
    }
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= RANK_TOL * smax {
        let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        return Err(Error::RankDeficient(cond));
    }
    let coefficients = svd
        .solve(response, 0.0)
        .map_err(|e| Error::SingularCovariance(e.to_string()))?;
    let fitted = design * &coefficients;
    let residuals = response - &fitted;
    Ok(LsFit { coefficients, residuals, fitted })
}

/// Residuals of `target` after least squares on `controls`.
pub fn residualize(target: &DataMatrix, controls: &DataMatrix) -> Result<DataMatrix> {
    let res = residualize_mat(&target.values, &controls.values)?;
    Ok(DataMatrix { values: res, column_labels: target.column_labels.clone() })
}

pub fn residualize_mat(target: &Mat, controls: &Mat) -> Result<Mat> {
    if controls.ncols() == 0 {
        return Ok(target.clone());
    }
    Ok(ols_fit_mat(target, controls)?.residuals)
}

/// Orthogonal projector onto the complement of the column span of `controls`,
/// applied to many targets at once. Computed from a thin QR factorization so it
/// can be reused across blocks.
#[derive(Debug, Clone)]
pub struct Residualizer {
    q: Mat,
}

impl Residualizer {
    pub fn new(controls: &Mat) -> Result<Self> {
        if controls.ncols() > controls.nrows() {
            return Err(Error::RankDeficient(f64::INFINITY));
        }
        let svd = controls.clone().svd(true, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smax > 0.0) || smin <= RANK_TOL * smax {
            let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
            return Err(Error::RankDeficient(cond));
        }
        let q = svd.u.expect("left singular vectors requested");
        Ok(Self { q })
    }

    pub fn apply(&self, target: &Mat) -> Mat {
        let proj = &self.q * (self.q.transpose() * target);
        target - proj
    }
}

/// Sample covariance (divisor `n - 1`) of the columns of `x`.
pub fn sample_cov(x: &Mat) -> Mat {
    let n = x.nrows();
    let centered = center_columns(x);
    (centered.transpose() * &centered) / (n as f64 - 1.0)
}

/// Sample cross-covariance of the columns of `x` and `y`.
pub fn sample_cross_cov(x: &Mat, y: &Mat) -> Mat {
    let n = x.nrows();
    let cx = center_columns(x);
    let cy = center_columns(y);
    (cx.transpose() * cy) / (n as f64 - 1.0)
}

pub fn center_columns(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

fn max_asymmetry(s: &Mat) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..s.nrows() {
        for j in (i + 1)..s.ncols() {
            worst = worst.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    worst
}

fn check_symmetric(s: &Mat) -> Result<()> {
    if s.nrows() != s.ncols() {
        return Err(Error::DimensionMismatch(format!("{}x{} is not square", s.nrows(), s.ncols())));
    }
    let scale = s.amax().max(1.0);
    let asym = max_asymmetry(s);
    if asym > 1e-10 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

fn symmetrized(s: &Mat) -> Mat {
    (s + s.transpose()) * 0.5
}

/// Symmetric positive semi-definite square root.
pub fn sym_sqrt(s: &Mat) -> Result<Mat> {
    sym_power(s, 0.5, false)
}

/// Inverse symmetric square root; requires a positive definite input.
pub fn sym_inv_sqrt(s: &Mat) -> Result<Mat> {
    sym_power(s, -0.5, true)
}

/// Inverse of a symmetric positive definite matrix.
pub fn sym_inv(s: &Mat) -> Result<Mat> {
    sym_power(s, -1.0, true)
}

fn sym_power(s: &Mat, power: f64, strict: bool) -> Result<Mat> {
    check_symmetric(s)?;
    if s.nrows() == 1 {
        let v = s[(0, 0)];
        return scalar_power(v, power, strict, s.amax().max(1.0)).map(|p| Mat::from_element(1, 1, p));
    }
    let eig = SymmetricEigen::new(symmetrized(s));
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let mut powered = eig.eigenvalues.clone();
    for v in powered.iter_mut() {
        *v = scalar_power(*v, power, strict, scale)?;
    }
    let q = &eig.eigenvectors;
    Ok(q * Mat::from_diagonal(&powered) * q.transpose())
}

fn scalar_power(v: f64, power: f64, strict: bool, scale: f64) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::NonFinite("eigenvalue".into()));
    }
    if strict {
        if v <= RANK_TOL * scale {
            return Err(Error::SingularCovariance(format!("eigenvalue {v:.3e}")));
        }
        return Ok(v.powf(power));
    }
    if v < -PSD_TOL * scale.max(1.0) {
        return Err(Error::NegativeEigenvalue(v));
    }
    Ok(v.max(0.0).powf(power))
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(s: &Mat) -> f64 {
    if s.nrows() == 1 {
        return s[(0, 0)];
    }
    SymmetricEigen::new(symmetrized(s)).eigenvalues.min()
}

fn is_constant_column(col: nalgebra::DVectorView<'_, f64>) -> bool {
    let max = col.max();
    let min = col.min();
    max.abs() > 0.0 && (max - min).abs() <= 1e-12 * max.abs()
}

/// Controls with an intercept column prepended when none is present.
pub fn with_intercept(z: &Mat) -> Mat {
    let n = z.nrows();
    if z.column_iter().any(is_constant_column) {
        return z.clone();
    }
    let mut out = Mat::from_element(n, z.ncols() + 1, 1.0);
    out.columns_mut(1, z.ncols()).copy_from(z);
    out
}

/// Sample R measure `cov(y|z)^{-1/2} cov(y|z, x|z) cov(x|z)^{-1/2}`, where
/// `|z` denotes residuals after least squares on `z` (intercept added when
/// missing).
pub fn r_matrix(y_cols: &DataMatrix, x_cols: &DataMatrix, z_cols: &DataMatrix) -> Result<RMatrix> {
    let value = r_matrix_mat(&y_cols.values, &x_cols.values, &z_cols.values)?;
    Ok(RMatrix { value, conditioning_set: z_cols.column_labels.clone() })
}

pub fn r_matrix_mat(y: &Mat, x: &Mat, z: &Mat) -> Result<Mat> {
    if y.nrows() != x.nrows() || y.nrows() != z.nrows() {
        return Err(Error::DimensionMismatch("r_matrix blocks differ in row count".into()));
    }
    let controls = with_intercept(z);
    let res = Residualizer::new(&controls)?;
    let yr = res.apply(y);
    let xr = res.apply(x);
    r_from_residuals(&yr, &xr)
}

/// R measure of two blocks that are already residualized on the same controls.
pub fn r_from_residuals(yr: &Mat, xr: &Mat) -> Result<Mat> {
    let dy = yr.ncols();
    let dx = xr.ncols();
    let mut joint = Mat::zeros(yr.nrows(), dy + dx);
    joint.columns_mut(0, dy).copy_from(yr);
    joint.columns_mut(dy, dx).copy_from(xr);
    let cov = sample_cov(&joint);
    r_from_joint_cov(&cov, dy)
}

/// R measure from a joint covariance whose first `dy` coordinates form the
/// first block.
pub fn r_from_joint_cov(cov: &Mat, dy: usize) -> Result<Mat> {
    let d = cov.nrows();
    let dx = d - dy;
    let scale = cov.diagonal().amax();
    if !(scale > 0.0) || min_eigenvalue(cov) <= RANK_TOL * scale {
        return Err(Error::SingularCovariance("joint residual covariance".into()));
    }
    let syy = cov.view((0, 0), (dy, dy)).into_owned();
    let sxx = cov.view((dy, dy), (dx, dx)).into_owned();
    let syx = cov.view((0, dy), (dy, dx)).into_owned();
    Ok(sym_inv_sqrt(&syy)? * syx * sym_inv_sqrt(&sxx)?)
}

/// Sample partial R² `1 - var(y|x,z)/var(y|z)` for a scalar response.
pub fn partial_r2(y: &DataMatrix, x_cols: &DataMatrix, z_cols: &DataMatrix) -> Result<f64> {
    partial_r2_mat(&y.values, &x_cols.values, &z_cols.values)
}

pub fn partial_r2_mat(y: &Mat, x: &Mat, z: &Mat) -> Result<f64> {
    if y.ncols() != 1 {
        return Err(Error::DimensionMismatch("partial_r2 needs a scalar response".into()));
    }
    let controls = with_intercept(z);
    let yz = residualize_mat(y, &controls)?;
    let mut full = Mat::zeros(y.nrows(), controls.ncols() + x.ncols());
    full.columns_mut(0, controls.ncols()).copy_from(&controls);
    full.columns_mut(controls.ncols(), x.ncols()).copy_from(x);
    let yxz = residualize_mat(y, &full)?;
    let v_short = yz.norm_squared();
    let v_long = yxz.norm_squared();
    let scale = y.norm_squared().max(f64::MIN_POSITIVE);
    if v_short <= 1e-24 * scale || v_long <= 1e-12 * v_short {
        return Err(Error::DegenerateResponse);
    }
    Ok(1.0 - v_long / v_short)
}

/// `[a | b]` column concatenation.
pub fn hcat(blocks: &[&Mat]) -> Mat {
    let n = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let d: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(n, d);
    let mut offset = 0;
    for b in blocks {
        out.columns_mut(offset, b.ncols()).copy_from(*b);
        offset += b.ncols();
    }
    out
}
