//! Baron-Kenny fits and bias-adjusted direct and indirect effects.
//!
//! Every adjuster works from [`MediationMoments`], which is computed once per
//! dataset (or per bootstrap resample) from the covariance of the residuals of
//! `(a, m, y)` on the covariates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Residualizer, Vector};
use crate::ovb::BOUNDARY;

/// Default normal quantile for confidence intervals.
pub const Z_95: f64 = 1.96;

/// Observed data. The covariate block always carries an intercept column in
/// position 0; [`MediationData::new`] prepends it.
#[derive(Debug, Clone, PartialEq)]
pub struct MediationData {
    pub y: Vector,
    pub a: Vector,
    pub m: Mat,
    pub c: Mat,
}

impl MediationData {
    /// Builds the data set from user covariates (without intercept).
    pub fn new(y: Vector, a: Vector, m: Mat, covariates: Mat) -> Result<Self> {
        let n = y.len();
        if covariates.nrows() != n && covariates.ncols() > 0 {
            return Err(Error::DimensionMismatch(format!(
                "covariates have {} rows, outcome has {n}",
                covariates.nrows()
            )));
        }
        let mut c = Mat::from_element(n, covariates.ncols() + 1, 1.0);
        if covariates.ncols() > 0 {
            c.columns_mut(1, covariates.ncols()).copy_from(&covariates);
        }
        Self::with_controls(y, a, m, c)
    }

    /// Builds the data set from a control block that already contains the
    /// intercept.
    pub fn with_controls(y: Vector, a: Vector, m: Mat, c: Mat) -> Result<Self> {
        let n = y.len();
        if a.len() != n || m.nrows() != n || c.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "row counts differ: y {n}, a {}, m {}, c {}",
                a.len(),
                m.nrows(),
                c.nrows()
            )));
        }
        if m.ncols() == 0 {
            return Err(Error::DimensionMismatch("at least one mediator is required".into()));
        }
        let all = y.iter().chain(a.iter()).chain(m.iter()).chain(c.iter());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mediation data".into()));
        }
        let required = c.ncols() + m.ncols() + 4;
        if n < required {
            return Err(Error::InsufficientSamples { n, required });
        }
        Ok(Self { y, a, m, c })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of mediators.
    pub fn q(&self) -> usize {
        self.m.ncols()
    }

    /// Number of control columns including the intercept.
    pub fn p(&self) -> usize {
        self.c.ncols()
    }

    /// Rows selected by `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> MediationData {
        MediationData {
            y: Vector::from_iterator(idx.len(), idx.iter().map(|&i| self.y[i])),
            a: Vector::from_iterator(idx.len(), idx.iter().map(|&i| self.a[i])),
            m: self.m.select_rows(idx),
            c: self.c.select_rows(idx),
        }
    }

    /// `[a | m | y]` as an `n x (q + 2)` matrix.
    pub fn stacked(&self) -> Mat {
        let q = self.q();
        let mut z = Mat::zeros(self.n(), q + 2);
        z.set_column(0, &self.a);
        z.columns_mut(1, q).copy_from(&self.m);
        z.set_column(q + 1, &self.y);
        z
    }
}

/// The natural sensitivity parameters of a scalar confounder.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalSensitivity {
    /// `R_{y~u|a,m,c}`.
    pub r_y: f64,
    /// `R_{m~u|a,c}`.
    pub r_m: Vector,
    /// `R_{a~u|c}`.
    pub r_a: f64,
}

impl NaturalSensitivity {
    pub fn new(r_y: f64, r_m: Vector, r_a: f64) -> Result<Self> {
        let s = Self { r_y, r_m, r_a };
        s.validate()?;
        Ok(s)
    }

    pub fn zero(q: usize) -> Self {
        Self { r_y: 0.0, r_m: Vector::zeros(q), r_a: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        check_ball("r_y", self.r_y.abs())?;
        check_ball("r_m", self.r_m.norm())?;
        check_ball("r_a", self.r_a.abs())
    }
}

fn check_ball(name: &'static str, norm: f64) -> Result<()> {
    if !norm.is_finite() || norm >= BOUNDARY {
        return Err(Error::BoundaryR { name, norm });
    }
    Ok(())
}

/// Everything the bias formulas need from the observed data.
#[derive(Debug, Clone, PartialEq)]
pub struct MediationMoments {
    pub beta1_obs: Vector,
    pub theta1_obs: f64,
    pub theta3_obs: Vector,
    pub gamma1_obs: f64,
    /// `var(y|a,m,c)`.
    pub var_y_res_amc: f64,
    /// `var(a|m,c)`.
    pub var_a_res_mc: f64,
    /// `var(a|c)`.
    pub var_a_res_c: f64,
    /// `var(y|a,c)`.
    pub var_y_res_ac: f64,
    /// `cov(m|a,c)`.
    pub cov_m_res_ac: Mat,
    /// `cov(m|c)`.
    pub cov_m_res_c: Mat,
    /// `R_{m~a|c}`.
    pub r_m_a_c: Vector,
    /// `R_{y~m|a,c}` as a column.
    pub r_y_m_ac: Vector,
    /// `cov(m|a,c)^{1/2}`.
    pub cov_m_res_ac_sqrt: Mat,
    /// `cov(m|a,c)^{-1/2}`.
    pub cov_m_res_ac_inv_sqrt: Mat,
    /// `cov(m|c)^{-1/2} cov(m|a,c)^{1/2}`.
    pub mediator_factor: Mat,
    pub n: usize,
    /// Control columns including the intercept.
    pub p: usize,
}

impl MediationMoments {
    pub fn q(&self) -> usize {
        self.beta1_obs.len()
    }

    pub fn observed_indirect(&self) -> f64 {
        self.theta3_obs.dot(&self.beta1_obs)
    }
}

/// Which effect a report describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    Direct,
    Indirect,
}

/// How the estimate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Exposure coefficient of the outcome regression.
    Coefficient,
    Product,
    Difference,
    SampleClassical,
}

/// Point estimate with uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub estimate: f64,
    pub std_err: f64,
    /// `estimate / std_err`; `None` when the standard error is zero.
    pub t_stat: Option<f64>,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub effect_kind: EffectKind,
    pub method: Method,
    /// Bias signs used by the sample-classical variant.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signs: Option<[i8; 2]>,
    /// True when `signs` were chosen as the worst case rather than supplied.
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub worst_case_signs: bool,
}

impl EffectReport {
    pub fn new(estimate: f64, std_err: f64, effect_kind: EffectKind, method: Method, z: f64) -> Self {
        let t_stat = (std_err > 0.0).then(|| estimate / std_err);
        Self {
            estimate,
            std_err,
            t_stat,
            ci_lower: estimate - z * std_err,
            ci_upper: estimate + z * std_err,
            effect_kind,
            method,
            signs: None,
            worst_case_signs: false,
        }
    }
}

/// Observed Baron-Kenny fit.
pub fn fit_observed(data: &MediationData) -> Result<MediationMoments> {
    let res = Residualizer::new(&data.c)?;
    let z = res.apply(&data.stacked());
    let s = linalg::sample_cov(&z);
    moments_from_cov(&s, data.n(), data.p())
}

/// Moments from the covariance of `(a, m, y)` residualized on the controls.
pub fn moments_from_cov(s: &Mat, n: usize, p: usize) -> Result<MediationMoments> {
    let q = s.nrows() - 2;
    let scale = s.diagonal().amax();
    if !(scale > 0.0) || linalg::min_eigenvalue(s) <= linalg::RANK_TOL * scale {
        return Err(Error::SingularCovariance("residual covariance of (a, m, y)".into()));
    }
    let s_aa = s[(0, 0)];
    let s_ma: Vector = s.view((1, 0), (q, 1)).column(0).into_owned();
    let s_mm = s.view((1, 1), (q, q)).into_owned();
    let s_my: Vector = s.view((1, q + 1), (q, 1)).column(0).into_owned();
    let s_ay = s[(0, q + 1)];
    let s_yy = s[(q + 1, q + 1)];

    let beta1_obs = &s_ma / s_aa;
    let cov_m_res_ac = sym(&(&s_mm - &s_ma * s_ma.transpose() / s_aa));
    let cov_m_res_c = s_mm.clone();

    let sxx = s.view((0, 0), (q + 1, q + 1)).into_owned();
    let sxy: Vector = s.view((0, q + 1), (q + 1, 1)).column(0).into_owned();
    let sxx_inv = linalg::sym_inv(&sxx)?;
    let coef = &sxx_inv * &sxy;
    let theta1_obs = coef[0];
    let theta3_obs: Vector = coef.rows(1, q).into_owned();
    let var_y_res_amc = s_yy - sxy.dot(&coef);

    let s_mm_inv = linalg::sym_inv(&s_mm)?;
    let var_a_res_mc = s_aa - s_ma.dot(&(&s_mm_inv * &s_ma));
    let gamma1_obs = s_ay / s_aa;
    let var_y_res_ac = s_yy - s_ay * s_ay / s_aa;

    let s_mm_inv_sqrt = linalg::sym_inv_sqrt(&s_mm)?;
    let r_m_a_c = &s_mm_inv_sqrt * &s_ma / s_aa.sqrt();

    let cov_m_res_ac_sqrt = linalg::sym_sqrt(&cov_m_res_ac)?;
    let cov_m_res_ac_inv_sqrt = linalg::sym_inv_sqrt(&cov_m_res_ac)?;
    let cov_ym_ac = &s_my - &s_ma * (s_ay / s_aa);
    let r_y_m_ac = &cov_m_res_ac_inv_sqrt * cov_ym_ac / var_y_res_ac.sqrt();
    let mediator_factor = &s_mm_inv_sqrt * &cov_m_res_ac_sqrt;

    Ok(MediationMoments {
        beta1_obs,
        theta1_obs,
        theta3_obs,
        gamma1_obs,
        var_y_res_amc,
        var_a_res_mc,
        var_a_res_c: s_aa,
        var_y_res_ac,
        cov_m_res_ac,
        cov_m_res_c,
        r_m_a_c,
        r_y_m_ac,
        cov_m_res_ac_sqrt,
        cov_m_res_ac_inv_sqrt,
        mediator_factor,
        n,
        p,
    })
}

fn sym(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

fn check_q(mm: &MediationMoments, r_m: &Vector) -> Result<()> {
    if r_m.len() != mm.q() {
        return Err(Error::DimensionMismatch(format!(
            "r_m has {} entries, data have {} mediators",
            r_m.len(),
            mm.q()
        )));
    }
    Ok(())
}

fn observed_r_norm(mm: &MediationMoments) -> Result<f64> {
    let norm = mm.r_m_a_c.norm();
    if norm >= BOUNDARY {
        return Err(Error::DegenerateObservedR { name: "r_m_a_c", norm });
    }
    Ok(norm)
}

/// `R/sqrt(1 - R^2)` of `R_{a~u|m,c}` in terms of the natural parameters.
pub fn aumc_odds(mm: &MediationMoments, s: &NaturalSensitivity) -> Result<f64> {
    check_q(mm, &s.r_m)?;
    s.validate()?;
    let rma = observed_r_norm(mm)?;
    let keep_ma = (1.0 - rma * rma).sqrt();
    let keep_m = (1.0 - s.r_m.norm_squared()).sqrt();
    let keep_a = (1.0 - s.r_a * s.r_a).sqrt();
    let cross = mm.r_m_a_c.dot(&(&mm.mediator_factor * &s.r_m));
    Ok(s.r_a * keep_ma / (keep_a * keep_m) - cross / (keep_ma * keep_m))
}

/// `R_{a~u|m,c}` implied by the natural parameters.
pub fn r_aumc_from_natural(mm: &MediationMoments, s: &NaturalSensitivity) -> Result<f64> {
    let odds = aumc_odds(mm, s)?;
    Ok(odds / (1.0 + odds * odds).sqrt())
}

/// Bias-adjusted direct effect.
pub fn direct_adjusted(mm: &MediationMoments, s: &NaturalSensitivity) -> Result<f64> {
    let odds = aumc_odds(mm, s)?;
    if s.r_y == 0.0 {
        return Ok(mm.theta1_obs);
    }
    Ok(mm.theta1_obs - s.r_y * odds * (mm.var_y_res_amc / mm.var_a_res_mc).sqrt())
}

/// Adjusted mediator coefficient `beta1`.
pub fn beta1_adjusted(mm: &MediationMoments, r_m: &Vector, r_a: f64) -> Vector {
    if r_a == 0.0 {
        return mm.beta1_obs.clone();
    }
    let scale = r_a / ((1.0 - r_a * r_a).sqrt() * mm.var_a_res_c.sqrt());
    &mm.beta1_obs - (&mm.cov_m_res_ac_sqrt * r_m) * scale
}

/// Adjusted outcome coefficient `theta3` of the mediators.
pub fn theta3_adjusted(mm: &MediationMoments, r_y: f64, r_m: &Vector) -> Vector {
    if r_y == 0.0 {
        return mm.theta3_obs.clone();
    }
    let scale = r_y * mm.var_y_res_amc.sqrt() / (1.0 - r_m.norm_squared()).sqrt();
    &mm.theta3_obs - (&mm.cov_m_res_ac_inv_sqrt * r_m) * scale
}

/// Bias-adjusted indirect effect by the product method.
pub fn indirect_adjusted_product(mm: &MediationMoments, s: &NaturalSensitivity) -> Result<f64> {
    check_q(mm, &s.r_m)?;
    s.validate()?;
    let beta = beta1_adjusted(mm, &s.r_m, s.r_a);
    let theta = theta3_adjusted(mm, s.r_y, &s.r_m);
    Ok(theta.dot(&beta))
}

/// `R_{y~u|a,c}` implied by the natural parameters.
pub fn r_yuac_from_natural(mm: &MediationMoments, s: &NaturalSensitivity) -> Result<f64> {
    check_q(mm, &s.r_m)?;
    s.validate()?;
    let rym = mm.r_y_m_ac.norm_squared();
    Ok((1.0 - s.r_m.norm_squared()).sqrt() * (1.0 - rym).sqrt() * s.r_y + mm.r_y_m_ac.dot(&s.r_m))
}

/// Adjusted total-effect coefficient `gamma1`.
pub fn gamma1_adjusted(mm: &MediationMoments, s: &NaturalSensitivity) -> Result<f64> {
    let r_yuac = r_yuac_from_natural(mm, s)?;
    if r_yuac == 0.0 || s.r_a == 0.0 {
        return Ok(mm.gamma1_obs);
    }
    let odds_a = s.r_a / (1.0 - s.r_a * s.r_a).sqrt();
    Ok(mm.gamma1_obs - r_yuac * odds_a * (mm.var_y_res_ac / mm.var_a_res_c).sqrt())
}

/// Bias-adjusted indirect effect by the difference method.
pub fn indirect_adjusted_difference(mm: &MediationMoments, s: &NaturalSensitivity) -> Result<f64> {
    Ok(gamma1_adjusted(mm, s)? - direct_adjusted(mm, s)?)
}

/// Direct effect when the exposure is randomized, so `R_{a~u|c} = 0`.
pub fn direct_randomized(mm: &MediationMoments, r_y: f64, r_m: &Vector) -> Result<f64> {
    direct_adjusted(mm, &NaturalSensitivity { r_y, r_m: r_m.clone(), r_a: 0.0 })
}

/// Indirect effect when the exposure is randomized.
pub fn indirect_randomized(mm: &MediationMoments, r_y: f64, r_m: &Vector) -> Result<f64> {
    check_q(mm, r_m)?;
    NaturalSensitivity { r_y, r_m: r_m.clone(), r_a: 0.0 }.validate()?;
    Ok(theta3_adjusted(mm, r_y, r_m).dot(&mm.beta1_obs))
}

/// Squared partial correlations for the classical-SE variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleR2 {
    /// `R^2_{y~u|a,m,c}`.
    pub r2_y: f64,
    /// `R^2_{m~u|a,c}`.
    pub r2_m: f64,
    /// `R^2_{a~u|c}`.
    pub r2_a: f64,
}

impl SampleR2 {
    fn validate(&self) -> Result<()> {
        for (name, v) in [("r2_y", self.r2_y), ("r2_m", self.r2_m), ("r2_a", self.r2_a)] {
            if !(v >= 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be in [0, 1), got {v}")));
            }
            if v >= BOUNDARY {
                return Err(Error::BoundaryR { name, norm: v.sqrt() });
            }
        }
        Ok(())
    }
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn classical_preconditions(mm: &MediationMoments, r2: &SampleR2) -> Result<()> {
    r2.validate()?;
    if mm.q() != 1 {
        return Err(Error::InvalidInput("the classical-SE variant needs exactly one mediator".into()));
    }
    let required = mm.p + mm.q() + 4;
    if mm.n < required {
        return Err(Error::InsufficientSamples { n: mm.n, required });
    }
    Ok(())
}

fn parse_sign(v: i8) -> Result<f64> {
    match v {
        -1 | 0 | 1 => Ok(v as f64),
        _ => Err(Error::InvalidInput(format!("sign must be -1, 0 or 1, got {v}"))),
    }
}

/// Picks the sign pair whose t statistic is closest to (or furthest past) zero
/// in the direction of the observed estimate.
fn worst_over_signs(
    observed: f64,
    eval: impl Fn(f64, f64) -> Result<EffectReport>,
) -> Result<EffectReport> {
    let dir = if observed < 0.0 { -1.0 } else { 1.0 };
    let mut best: Option<(f64, EffectReport)> = None;
    for s1 in [-1.0, 1.0] {
        for s2 in [-1.0, 1.0] {
            let rep = eval(s1, s2)?;
            let key = match rep.t_stat {
                Some(t) => dir * t,
                None => dir * rep.estimate * f64::INFINITY,
            };
            if best.as_ref().is_none_or(|(k, _)| key < *k) {
                best = Some((key, rep));
            }
        }
    }
    let mut rep = best.expect("four candidates").1;
    rep.worst_case_signs = true;
    Ok(rep)
}

/// `R^2_{a~u|m,c}` from the natural squared partial correlations.
pub fn r2_aumc_from_natural(r2_m_a_c: f64, r2: &SampleR2, s2: f64) -> f64 {
    let v1 = (r2.r2_a * r2_m_a_c).sqrt();
    if r2.r2_m == 0.0 {
        return 1.0 - (1.0 - r2.r2_a) / (1.0 - v1 * v1);
    }
    let v2 = (r2.r2_m * (1.0 - r2.r2_a) * (1.0 - r2_m_a_c)).sqrt();
    let mix = s2 * v1 + v2;
    1.0 - (1.0 - r2.r2_a) * (1.0 - r2.r2_m) / (1.0 - mix * mix)
}

/// Classical standard error of the observed direct effect.
pub fn classical_se_direct(mm: &MediationMoments) -> f64 {
    let df = (mm.n - mm.p - mm.q() - 1) as f64;
    let nm1 = (mm.n - 1) as f64;
    (mm.var_y_res_amc * nm1 / df / (mm.var_a_res_mc * nm1)).sqrt()
}

/// Classical-SE direct effect for a single mediator. `signs = (S1, S2)` where
/// `S1` is the sign of the bias correction and `S2` orients `R_{m~u|c}`
/// relative to `beta1`; `None` reports the worst case.
pub fn direct_sample_classical(
    data: &MediationData,
    r2: &SampleR2,
    signs: Option<(i8, i8)>,
) -> Result<EffectReport> {
    direct_sample_classical_moments(&fit_observed(data)?, r2, signs, Z_95)
}

pub fn direct_sample_classical_moments(
    mm: &MediationMoments,
    r2: &SampleR2,
    signs: Option<(i8, i8)>,
    z: f64,
) -> Result<EffectReport> {
    classical_preconditions(mm, r2)?;
    let n = mm.n as f64;
    let p = mm.p as f64;
    let r2_ma = mm.r_m_a_c.norm_squared();
    let se_obs = classical_se_direct(mm);
    let eval = |s1: f64, s2: f64| -> Result<EffectReport> {
        let r2_aumc = r2_aumc_from_natural(r2_ma, r2, s2);
        if !(r2_aumc < BOUNDARY) {
            return Err(Error::BoundaryR { name: "r2_aumc", norm: r2_aumc.sqrt() });
        }
        let shift = (r2.r2_y * r2_aumc / (1.0 - r2_aumc)).sqrt() * (mm.var_y_res_amc / mm.var_a_res_mc).sqrt();
        let estimate = mm.theta1_obs + s1 * shift;
        let se = se_obs * ((n - p - 2.0) / (n - p - 3.0) * (1.0 - r2.r2_y) / (1.0 - r2_aumc)).sqrt();
        let mut rep = EffectReport::new(estimate, se, EffectKind::Direct, Method::SampleClassical, z);
        rep.signs = Some([s1 as i8, s2 as i8]);
        Ok(rep)
    };
    match signs {
        Some((s1, s2)) => eval(parse_sign(s1)?, parse_sign(s2)?),
        None => worst_over_signs(mm.theta1_obs, eval),
    }
}

/// Classical-SE indirect effect (product method) for a single mediator.
/// `signs = (S3, S4)` are the signs of the corrections to `beta1` and
/// `theta3`; `None` reports the worst case.
pub fn indirect_sample_classical(
    data: &MediationData,
    r2: &SampleR2,
    signs: Option<(i8, i8)>,
) -> Result<EffectReport> {
    indirect_sample_classical_moments(&fit_observed(data)?, r2, signs, Z_95)
}

/// Adjusted `(beta1, se(beta1), theta3, se(theta3))` for one sign pair.
pub fn indirect_sample_classical_parts(
    mm: &MediationMoments,
    r2: &SampleR2,
    s3: f64,
    s4: f64,
) -> Result<[f64; 4]> {
    classical_preconditions(mm, r2)?;
    let n = mm.n as f64;
    let p = mm.p as f64;
    let nm1 = n - 1.0;
    let vm = mm.cov_m_res_ac[(0, 0)];
    let beta_obs = mm.beta1_obs[0];
    let theta_obs = mm.theta3_obs[0];
    let se_beta_obs = (vm * nm1 / (n - p - 1.0) / (mm.var_a_res_c * nm1)).sqrt();
    // var(m|a,c) is the residual variance of m in the outcome design's
    // partial regression.
    let se_theta_obs = (mm.var_y_res_amc * nm1 / (n - p - 2.0) / (vm * nm1)).sqrt();

    let beta = beta_obs + s3 * (r2.r2_m * r2.r2_a / (1.0 - r2.r2_a)).sqrt() * (vm / mm.var_a_res_c).sqrt();
    let theta = theta_obs + s4 * (r2.r2_y * r2.r2_m / (1.0 - r2.r2_m)).sqrt() * (mm.var_y_res_amc / vm).sqrt();
    let se_beta = se_beta_obs * ((n - p - 1.0) / (n - p - 2.0) * (1.0 - r2.r2_m) / (1.0 - r2.r2_a)).sqrt();
    let se_theta = se_theta_obs * ((n - p - 2.0) / (n - p - 3.0) * (1.0 - r2.r2_y) / (1.0 - r2.r2_m)).sqrt();
    Ok([beta, se_beta, theta, se_theta])
}

/// Delta-method standard error of a product of two independent-looking
/// coefficients.
pub fn product_se(beta: f64, se_beta: f64, theta: f64, se_theta: f64) -> f64 {
    (beta * beta * se_theta * se_theta + theta * theta * se_beta * se_beta).sqrt()
}

pub fn indirect_sample_classical_moments(
    mm: &MediationMoments,
    r2: &SampleR2,
    signs: Option<(i8, i8)>,
    z: f64,
) -> Result<EffectReport> {
    classical_preconditions(mm, r2)?;
    let eval = |s3: f64, s4: f64| -> Result<EffectReport> {
        let [beta, se_beta, theta, se_theta] = indirect_sample_classical_parts(mm, r2, s3, s4)?;
        let mut rep = EffectReport::new(
            beta * theta,
            product_se(beta, se_beta, theta, se_theta),
            EffectKind::Indirect,
            Method::SampleClassical,
            z,
        );
        rep.signs = Some([s3 as i8, s4 as i8]);
        Ok(rep)
    };
    match signs {
        Some((s3, s4)) => eval(parse_sign(s3)?, parse_sign(s4)?),
        None => worst_over_signs(mm.observed_indirect(), eval),
    }
}

/// Signs `(S1, S2)` of the direct-effect classical variant implied by natural
/// parameters, for cross-checks against the correlation-scale formulas.
pub fn direct_signs_from_natural(mm: &MediationMoments, s: &NaturalSensitivity) -> Result<(i8, i8)> {
    let r_aumc = r_aumc_from_natural(mm, s)?;
    let s1 = -sgn(s.r_y) * sgn(r_aumc);
    let s2 = sgn(mm.beta1_obs[0]) * sgn(s.r_a * s.r_m[0]);
    Ok((s1 as i8, s2 as i8))
}

/// Signs `(S3, S4)` of the indirect-effect classical variant implied by
/// natural parameters.
pub fn indirect_signs_from_natural(s: &NaturalSensitivity) -> (i8, i8) {
    let s3 = -sgn(s.r_m[0] * s.r_a);
    let s4 = -sgn(s.r_y * s.r_m[0]);
    (s3 as i8, s4 as i8)
}

/// Squared parameters of a natural sensitivity triple (single mediator).
pub fn sample_r2_from_natural(s: &NaturalSensitivity) -> SampleR2 {
    SampleR2 { r2_y: s.r_y * s.r_y, r2_m: s.r_m.norm_squared(), r2_a: s.r_a * s.r_a }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        rng.sample(StandardNormal)
    }

    fn synthetic(rng: &mut ChaCha8Rng, n: usize, q: usize, pc: usize) -> MediationData {
        let c = Mat::from_fn(n, pc, |_, _| normal(rng));
        let a = Vector::from_fn(n, |i, _| 0.5 * c.row(i).sum() + normal(rng));
        let m = Mat::from_fn(n, q, |i, j| 0.6 * a[i] - 0.2 * (j as f64) * a[i] + normal(rng));
        let y = Vector::from_fn(n, |i, _| 0.8 * a[i] + m.row(i).sum() * 0.5 + 0.3 * c.row(i).sum() + normal(rng));
        MediationData::new(y, a, m, c).unwrap()
    }

    fn random_natural(rng: &mut ChaCha8Rng, q: usize, radius: f64) -> NaturalSensitivity {
        let dir = Vector::from_fn(q, |_, _| normal(rng));
        let r_m = dir.normalize() * radius * rng.random_range(0.0..1.0);
        NaturalSensitivity {
            r_y: rng.random_range(-radius..radius),
            r_m,
            r_a: rng.random_range(-radius..radius),
        }
    }

    #[test]
    fn intercept_prepended_and_sizes_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = synthetic(&mut rng, 30, 2, 1);
        assert_eq!(d.p(), 2);
        assert!(d.c.column(0).iter().all(|v| *v == 1.0));
        let small = MediationData::new(Vector::zeros(6), Vector::zeros(6), Mat::zeros(6, 2), Mat::zeros(6, 1));
        assert!(matches!(small, Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn cochran_identity_and_regression_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for q in 1..4 {
            let d = synthetic(&mut rng, 80, q, 2);
            let mm = fit_observed(&d).unwrap();
            assert!((mm.gamma1_obs - mm.theta1_obs - mm.observed_indirect()).abs() < 1e-10);
            // long regression y on [a m c]
            let design = linalg::hcat(&[&Mat::from_column_slice(80, 1, d.a.as_slice()), &d.m, &d.c]);
            let fit = linalg::ols_fit_mat(&Mat::from_column_slice(80, 1, d.y.as_slice()), &design).unwrap();
            assert_relative_eq!(fit.coefficients[(0, 0)], mm.theta1_obs, epsilon = 1e-10);
            for k in 0..q {
                assert_relative_eq!(fit.coefficients[(1 + k, 0)], mm.theta3_obs[k], epsilon = 1e-10);
            }
            let mfit = linalg::ols_fit_mat(&d.m, &linalg::hcat(&[&Mat::from_column_slice(80, 1, d.a.as_slice()), &d.c])).unwrap();
            for k in 0..q {
                assert_relative_eq!(mfit.coefficients[(0, k)], mm.beta1_obs[k], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn monte_carlo_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let a = Vector::from_fn(n, |_, _| normal(&mut rng));
        let m = Mat::from_fn(n, 1, |i, _| a[i] + normal(&mut rng));
        let y = Vector::from_fn(n, |i, _| a[i] + m[(i, 0)] + normal(&mut rng));
        let d = MediationData::new(y, a, m, Mat::zeros(n, 0)).unwrap();
        let mm = fit_observed(&d).unwrap();
        let se = classical_se_direct(&mm);
        assert!((mm.theta1_obs - 1.0).abs() < 3.0 * se);
        assert!((mm.theta3_obs[0] - 1.0).abs() < 3.0 * se * 1.5);
    }

    #[test]
    fn null_mediation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 20_000;
        let a = Vector::from_fn(n, |_, _| normal(&mut rng));
        let m = Mat::from_fn(n, 1, |_, _| normal(&mut rng));
        let y = Vector::from_fn(n, |i, _| a[i] + m[(i, 0)] + normal(&mut rng));
        let mm = fit_observed(&MediationData::new(y, a, m, Mat::zeros(n, 0)).unwrap()).unwrap();
        assert!(mm.beta1_obs[0].abs() < 0.03);
        assert!(mm.observed_indirect().abs() < 0.03);
    }

    #[test]
    fn zero_sensitivity_returns_observed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = synthetic(&mut rng, 60, 2, 1);
        let mm = fit_observed(&d).unwrap();
        let z = NaturalSensitivity::zero(2);
        assert_eq!(r_aumc_from_natural(&mm, &z).unwrap(), 0.0);
        assert_eq!(direct_adjusted(&mm, &z).unwrap(), mm.theta1_obs);
        assert_eq!(indirect_adjusted_product(&mm, &z).unwrap(), mm.observed_indirect());
        assert_eq!(indirect_adjusted_difference(&mm, &z).unwrap(), mm.gamma1_obs - mm.theta1_obs);
        assert_eq!(direct_randomized(&mm, 0.0, &Vector::from_vec(vec![0.3, 0.1])).unwrap(), mm.theta1_obs);
        assert_eq!(indirect_randomized(&mm, 0.4, &Vector::zeros(2)).unwrap(), mm.observed_indirect());
    }

    #[test]
    fn product_equals_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut worst: f64 = 0.0;
        for i in 0..1000 {
            let q = 1 + i % 3;
            let d = synthetic(&mut rng, 40 + (i % 5) * 10, q, 1 + i % 3);
            let mm = fit_observed(&d).unwrap();
            let s = random_natural(&mut rng, q, 0.9);
            let a = indirect_adjusted_product(&mm, &s).unwrap();
            let b = indirect_adjusted_difference(&mm, &s).unwrap();
            worst = worst.max((a - b).abs());
        }
        assert!(worst < 1e-9, "max |product - difference| = {worst}");
    }

    #[test]
    fn randomized_shortcuts_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for q in 1..4 {
            let d = synthetic(&mut rng, 50, q, 2);
            let mm = fit_observed(&d).unwrap();
            let mut s = random_natural(&mut rng, q, 0.9);
            s.r_a = 0.0;
            let dr = direct_randomized(&mm, s.r_y, &s.r_m).unwrap();
            assert!((dr - direct_adjusted(&mm, &s).unwrap()).abs() < 1e-12);
            let ir = indirect_randomized(&mm, s.r_y, &s.r_m).unwrap();
            assert!((ir - indirect_adjusted_product(&mm, &s).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_mediator_two_step_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let d = synthetic(&mut rng, 40, 1, 1);
            let mm = fit_observed(&d).unwrap();
            let s = random_natural(&mut rng, 1, 0.95);
            let rma = mm.r_m_a_c[0];
            // R_{m~u|c} from R_{m~u|a,c} and R_{a~u|c}, then R_{a~u|m,c}
            let r_muc = (1.0 - s.r_a * s.r_a).sqrt() * (1.0 - rma * rma).sqrt() * s.r_m[0] + s.r_a * rma;
            let two_step = (s.r_a - rma * r_muc) / ((1.0 - rma * rma).sqrt() * (1.0 - r_muc * r_muc).sqrt());
            let got = r_aumc_from_natural(&mm, &s).unwrap();
            assert!((got - two_step).abs() < 1e-12);
            // the mediator factor collapses to sqrt(1 - R^2) for one mediator
            assert!((mm.mediator_factor[(0, 0)] - (1.0 - rma * rma).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn direct_bias_is_odd_in_ry() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = synthetic(&mut rng, 70, 2, 1);
        let mm = fit_observed(&d).unwrap();
        let s = NaturalSensitivity { r_y: 0.37, r_m: Vector::from_vec(vec![0.2, -0.3]), r_a: 0.4 };
        let mut neg = s.clone();
        neg.r_y = -s.r_y;
        let b1 = direct_adjusted(&mm, &s).unwrap() - mm.theta1_obs;
        let b2 = direct_adjusted(&mm, &neg).unwrap() - mm.theta1_obs;
        assert_eq!(b1, -b2);
    }

    #[test]
    fn direct_bias_not_monotone_in_rm() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let d = synthetic(&mut rng, 200, 1, 1);
        let mm = fit_observed(&d).unwrap();
        let biases: Vec<f64> = (0..199)
            .map(|k| {
                let r = -0.99 + 0.01 * k as f64;
                let s = NaturalSensitivity { r_y: 0.5, r_m: Vector::from_vec(vec![r]), r_a: 0.8 };
                direct_adjusted(&mm, &s).unwrap() - mm.theta1_obs
            })
            .collect();
        let witness = (0..biases.len()).any(|i| {
            (i + 1..biases.len()).any(|j| {
                (j + 1..biases.len()).any(|k| {
                    let (lo, hi) = (biases[i].min(biases[k]), biases[i].max(biases[k]));
                    biases[j] < lo || biases[j] > hi
                })
            })
        });
        assert!(witness);
    }

    #[test]
    fn boundary_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mm = fit_observed(&synthetic(&mut rng, 40, 2, 1)).unwrap();
        let s = NaturalSensitivity { r_y: 0.1, r_m: Vector::from_vec(vec![0.8, 0.7]), r_a: 0.1 };
        assert!(matches!(direct_adjusted(&mm, &s), Err(Error::BoundaryR { .. })));
        let s = NaturalSensitivity { r_y: 1.0, r_m: Vector::zeros(2), r_a: 0.1 };
        assert!(matches!(indirect_adjusted_product(&mm, &s), Err(Error::BoundaryR { .. })));
        let s = NaturalSensitivity { r_y: 0.1, r_m: Vector::zeros(3), r_a: 0.1 };
        assert!(matches!(direct_adjusted(&mm, &s), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn sample_classical_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = synthetic(&mut rng, 50, 1, 2);
        let mm = fit_observed(&d).unwrap();
        let zero = SampleR2 { r2_y: 0.0, r2_m: 0.0, r2_a: 0.0 };
        let rep = direct_sample_classical(&d, &zero, None).unwrap();
        let (n, p) = (50.0, 3.0);
        assert_relative_eq!(rep.estimate, mm.theta1_obs, epsilon = 1e-14);
        let scaled = classical_se_direct(&mm) * ((n - p - 2.0) / (n - p - 3.0f64)).sqrt();
        assert_relative_eq!(rep.std_err, scaled, epsilon = 1e-14);
        let ind = indirect_sample_classical(&d, &zero, None).unwrap();
        assert_relative_eq!(ind.estimate, mm.observed_indirect(), epsilon = 1e-14);
    }

    #[test]
    fn sample_classical_sign_symmetry_and_delta_method() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let d = synthetic(&mut rng, 60, 1, 1);
        let mm = fit_observed(&d).unwrap();
        let r2 = SampleR2 { r2_y: 0.1, r2_m: 0.2, r2_a: 0.15 };
        let up = direct_sample_classical(&d, &r2, Some((1, 1))).unwrap();
        let down = direct_sample_classical(&d, &r2, Some((-1, 1))).unwrap();
        assert_relative_eq!(up.estimate - mm.theta1_obs, mm.theta1_obs - down.estimate, epsilon = 1e-12);
        assert_eq!(up.std_err, down.std_err);

        let rep = indirect_sample_classical(&d, &r2, Some((1, -1))).unwrap();
        let [b, sb, t, st] = indirect_sample_classical_parts(&mm, &r2, 1.0, -1.0).unwrap();
        let direct = ((b * st).powi(2) + (t * sb).powi(2)).sqrt();
        assert!((rep.std_err - direct).abs() < 1e-12);

        let worst = direct_sample_classical(&d, &r2, None).unwrap();
        assert!(worst.worst_case_signs);
        for s1 in [-1, 1] {
            for s2 in [-1, 1] {
                let r = direct_sample_classical(&d, &r2, Some((s1, s2))).unwrap();
                assert!(worst.t_stat.unwrap() * mm.theta1_obs.signum() <= r.t_stat.unwrap() * mm.theta1_obs.signum() + 1e-12);
            }
        }
        assert!(matches!(
            direct_sample_classical(&synthetic(&mut rng, 60, 2, 1), &r2, None),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn effect_report_invariants() {
        let r = EffectReport::new(2.0, 0.5, EffectKind::Direct, Method::Product, Z_95);
        assert_eq!(r.t_stat, Some(4.0));
        assert_relative_eq!(r.ci_lower, 2.0 - 0.98);
        assert_relative_eq!(r.ci_upper, 2.0 + 0.98);
        assert_eq!(EffectReport::new(1.0, 0.0, EffectKind::Direct, Method::Product, Z_95).t_stat, None);
    }
}
