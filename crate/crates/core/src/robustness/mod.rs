//! Worst-case t statistics over bounded confounding and the robustness values
//! derived from them.
//!
//! For fixed sensitivity parameters both adjusted effects are affine (direct)
//! or bilinear (indirect) in a small set of data-free coordinates `phi`, with
//! data-dependent coefficients. Each bootstrap resample contributes one
//! coefficient vector, so the bootstrap variance of the adjusted estimate at
//! any `phi` is a quadratic form in the features of `phi` with the sample
//! covariance of those coefficient vectors. The search therefore never refits
//! a resample.

pub mod direct;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::BootstrapPlan;
use crate::linalg::{Mat, Vector};
use crate::mediation::{EffectKind, MediationMoments, NaturalSensitivity};
use crate::ovb::BOUNDARY;

pub use direct::{direct_optimize, DirectResult};

pub const DEFAULT_BUDGET: usize = 4000;
/// Shrinks every ball radius so the search stays in the open feasible set.
pub const CLAMP: f64 = 1.0 - 1e-9;

/// Whether the confounder is a scalar or an unrestricted vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfounderMode {
    ScalarU,
    VectorU,
}

/// Upper bounds on the squared sensitivity parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoBudget {
    pub y: f64,
    pub m: f64,
    pub a: f64,
}

impl RhoBudget {
    pub fn common(rho: f64) -> Self {
        Self { y: rho, m: rho, a: rho }
    }

    /// Common bound with the exposure channel shut, as under randomization.
    pub fn randomized(rho: f64) -> Self {
        Self { y: rho, m: rho, a: 0.0 }
    }

    fn validate(&self) -> Result<()> {
        for v in [self.y, self.m, self.a] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidInput(format!("rho bound {v} outside [0, 1)")));
            }
        }
        Ok(())
    }

    fn clamped(&self) -> Self {
        let c = CLAMP * CLAMP;
        Self { y: self.y * c, m: self.m * c, a: self.a * c }
    }
}

/// Coordinates of the direct-effect bias.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiDirect {
    pub phi1: f64,
    pub phi2: Vector,
}

/// Coordinates of the indirect-effect bias.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiIndirect {
    pub phi3: Vector,
    pub phi4: Vector,
    pub confounder_mode: ConfounderMode,
}

impl PhiDirect {
    pub fn from_natural(s: &NaturalSensitivity) -> Self {
        let keep_m = (1.0 - s.r_m.norm_squared()).sqrt();
        let keep_a = (1.0 - s.r_a * s.r_a).sqrt();
        Self { phi1: s.r_y * s.r_a / (keep_a * keep_m), phi2: &s.r_m * (s.r_y / keep_m) }
    }

    /// `(1, phi1, phi2)`.
    pub fn features(&self) -> Vector {
        let q = self.phi2.len();
        let mut f = Vector::zeros(q + 2);
        f[0] = 1.0;
        f[1] = self.phi1;
        f.rows_mut(2, q).copy_from(&self.phi2);
        f
    }
}

impl PhiIndirect {
    pub fn from_natural(s: &NaturalSensitivity) -> Self {
        let keep_m = (1.0 - s.r_m.norm_squared()).sqrt();
        let keep_a = (1.0 - s.r_a * s.r_a).sqrt();
        Self {
            phi3: &s.r_m * (s.r_a / keep_a),
            phi4: &s.r_m * (s.r_y / keep_m),
            confounder_mode: ConfounderMode::ScalarU,
        }
    }

    /// `(1, phi3, phi4, phi4 (x) phi3)`.
    pub fn features(&self) -> Vector {
        indirect_features(&self.phi3, &self.phi4)
    }
}

fn indirect_features(phi3: &Vector, phi4: &Vector) -> Vector {
    let q = phi3.len();
    let mut f = Vector::zeros(1 + 2 * q + q * q);
    f[0] = 1.0;
    f.rows_mut(1, q).copy_from(phi3);
    f.rows_mut(1 + q, q).copy_from(phi4);
    for i in 0..q {
        for j in 0..q {
            f[1 + 2 * q + i * q + j] = phi4[i] * phi3[j];
        }
    }
    f
}

/// Coefficients `(theta1, T1, T2)` of the direct effect in `(1, phi1, phi2)`.
pub fn direct_coefficients(mm: &MediationMoments) -> Result<Vector> {
    let q = mm.q();
    let rma2 = mm.r_m_a_c.norm_squared();
    if rma2.sqrt() >= BOUNDARY {
        return Err(Error::DegenerateObservedR { name: "r_m_a_c", norm: rma2.sqrt() });
    }
    let ratio = (mm.var_y_res_amc / mm.var_a_res_mc).sqrt();
    let keep = (1.0 - rma2).sqrt();
    let t2 = mm.mediator_factor.transpose() * &mm.r_m_a_c * (ratio / keep);
    let mut c = Vector::zeros(q + 2);
    c[0] = mm.theta1_obs;
    c[1] = -keep * ratio;
    c.rows_mut(2, q).copy_from(&t2);
    Ok(c)
}

/// Coefficients of the indirect effect in the features
/// `(1, phi3, phi4, phi4 (x) phi3)`.
pub fn indirect_coefficients(mm: &MediationMoments) -> Vector {
    let q = mm.q();
    let t3 = &mm.cov_m_res_ac_sqrt * (-1.0 / mm.var_a_res_c.sqrt());
    let t4 = &mm.cov_m_res_ac_inv_sqrt * (-mm.var_y_res_amc.sqrt());
    let mut c = Vector::zeros(1 + 2 * q + q * q);
    c[0] = mm.observed_indirect();
    c.rows_mut(1, q).copy_from(&(t3.transpose() * &mm.theta3_obs));
    c.rows_mut(1 + q, q).copy_from(&(t4.transpose() * &mm.beta1_obs));
    let cross = t4.transpose() * t3;
    for i in 0..q {
        for j in 0..q {
            c[1 + 2 * q + i * q + j] = cross[(i, j)];
        }
    }
    c
}

/// Direct effect at the given coordinates.
pub fn direct_from_phi(mm: &MediationMoments, phi: &PhiDirect) -> Result<f64> {
    Ok(direct_coefficients(mm)?.dot(&phi.features()))
}

/// Indirect effect at the given coordinates.
pub fn indirect_from_phi(mm: &MediationMoments, phi: &PhiIndirect) -> f64 {
    indirect_coefficients(mm).dot(&phi.features())
}

/// Estimate and bootstrap standard error of an effect as functions of its
/// features.
#[derive(Debug, Clone, PartialEq)]
pub struct TSurface {
    pub effect_kind: EffectKind,
    pub q: usize,
    observed: Vector,
    cov: Mat,
    /// +1 when the observed estimate is non-negative, -1 otherwise.
    pub direction: f64,
}

impl TSurface {
    pub fn new(mm: &MediationMoments, plan: &BootstrapPlan, effect_kind: EffectKind) -> Result<Self> {
        let coef = |m: &MediationMoments| -> Result<Vector> {
            match effect_kind {
                EffectKind::Direct => direct_coefficients(m),
                EffectKind::Indirect => Ok(indirect_coefficients(m)),
            }
        };
        let observed = coef(mm)?;
        let k = observed.len();
        let rows: Vec<Result<Vector>> = plan.resample_moments.par_iter().map(coef).collect();
        let mut rows_ok = Vec::with_capacity(rows.len());
        for (index, r) in rows.into_iter().enumerate() {
            let v = r.map_err(|e| Error::EstimatorFailed { index, source: Box::new(e) })?;
            if v.len() != k {
                return Err(Error::DimensionMismatch("resample mediator count".into()));
            }
            rows_ok.push(v);
        }
        let b = rows_ok.len();
        let mut mean = Vector::zeros(k);
        for r in &rows_ok {
            mean += r;
        }
        mean /= b.max(1) as f64;
        let mut cov = Mat::zeros(k, k);
        for r in &rows_ok {
            let d = r - &mean;
            cov.ger(1.0, &d, &d, 1.0);
        }
        if b > 1 {
            cov /= (b - 1) as f64;
        }
        let direction = if observed[0] < 0.0 { -1.0 } else { 1.0 };
        Ok(Self { effect_kind, q: mm.q(), observed, cov, direction })
    }

    pub fn estimate(&self, features: &Vector) -> f64 {
        self.observed.dot(features)
    }

    pub fn std_err(&self, features: &Vector) -> f64 {
        features.dot(&(&self.cov * features)).max(0.0).sqrt()
    }

    /// t statistic in the working direction (positive at the observed fit when
    /// the observed estimate is significant).
    pub fn working_t(&self, features: &Vector) -> f64 {
        let t = self.direction * self.estimate(features) / self.std_err(features);
        if t.is_nan() {
            f64::INFINITY
        } else {
            t
        }
    }

    /// Objective of the worst-case search; NaN maps to `+inf`.
    pub fn value(&self, features: &Vector, criterion: Criterion) -> f64 {
        let v = match criterion {
            Criterion::TStat => self.working_t(features),
            Criterion::Estimate => self.direction * self.estimate(features),
        };
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    pub fn observed_features(&self) -> Vector {
        let mut f = Vector::zeros(self.observed.len());
        f[0] = 1.0;
        f
    }

    pub fn observed_estimate(&self) -> f64 {
        self.observed[0]
    }

    pub fn observed_t(&self) -> f64 {
        self.working_t(&self.observed_features())
    }
}

/// What the search minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    /// Working-direction t statistic.
    TStat,
    /// Working-direction point estimate.
    Estimate,
}

/// Optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    pub budget: usize,
    /// Pins `R_{a~u|c}` to zero.
    pub randomized: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { budget: DEFAULT_BUDGET, randomized: false }
    }
}

/// Result of one worst-case search.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCase {
    /// Minimized value (t statistic or estimate, in the working direction).
    pub value: f64,
    pub estimate: f64,
    pub std_err: f64,
    pub features: Vector,
}

/// Unit vector from `q - 1` spherical angles.
pub fn sphere_point(angles: &[f64]) -> Vector {
    let q = angles.len() + 1;
    let mut v = Vector::zeros(q);
    let mut sin_prod = 1.0;
    for (k, &t) in angles.iter().enumerate() {
        v[k] = sin_prod * t.cos();
        sin_prod *= t.sin();
    }
    v[q - 1] = sin_prod;
    v
}

pub(crate) fn angle_bounds(q: usize) -> (Vec<f64>, Vec<f64>) {
    let k = q.saturating_sub(1);
    let lower = vec![0.0; k];
    let mut upper = vec![std::f64::consts::PI; k];
    if let Some(last) = upper.last_mut() {
        *last = 2.0 * std::f64::consts::PI;
    }
    (lower, upper)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Space {
    Direct,
    IndirectScalar,
    IndirectVector,
}

struct Parameterization {
    space: Space,
    q: usize,
    rho: RhoBudget,
}

impl Parameterization {
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let q = self.q;
        let (al, au) = angle_bounds(q);
        match self.space {
            Space::Direct => {
                let t3 = (self.rho.m / (1.0 - self.rho.m)).sqrt().atan();
                let t3_lo = if q == 1 { -t3 } else { 0.0 };
                let mut lo = vec![-1.0, t3_lo];
                let mut hi = vec![1.0, t3];
                lo.extend(al);
                hi.extend(au);
                (lo, hi)
            }
            Space::IndirectScalar => {
                let mut lo = vec![-1.0, -1.0];
                let mut hi = vec![1.0, 1.0];
                lo.extend(al);
                hi.extend(au);
                (lo, hi)
            }
            Space::IndirectVector => {
                if q == 1 {
                    return (vec![-1.0, -1.0], vec![1.0, 1.0]);
                }
                let mut lo = vec![0.0];
                let mut hi = vec![1.0];
                lo.extend(al.iter());
                hi.extend(au.iter());
                lo.push(0.0);
                hi.push(1.0);
                lo.extend(al);
                hi.extend(au);
                (lo, hi)
            }
        }
    }

    fn radii(&self) -> (f64, f64) {
        let r = self.rho;
        ((r.m * r.a / (1.0 - r.a)).sqrt(), (r.y * r.m / (1.0 - r.m)).sqrt())
    }

    fn features(&self, x: &[f64]) -> Vector {
        let q = self.q;
        match self.space {
            Space::Direct => {
                let (t1, t3) = (x[0], x[1]);
                let dir = if q == 1 { Vector::from_element(1, 1.0) } else { sphere_point(&x[2..]) };
                let phi1 = (self.rho.y * self.rho.a / (1.0 - self.rho.a)).sqrt() * t1 / t3.cos();
                let phi2 = dir * (self.rho.y.sqrt() * t3.tan());
                PhiDirect { phi1, phi2 }.features()
            }
            Space::IndirectScalar => {
                let (ra, rb) = self.radii();
                let dir = if q == 1 { Vector::from_element(1, 1.0) } else { sphere_point(&x[2..]) };
                indirect_features(&(&dir * (ra * x[0])), &(&dir * (rb * x[1])))
            }
            Space::IndirectVector => {
                let (ra, rb) = self.radii();
                if q == 1 {
                    return indirect_features(&Vector::from_element(1, ra * x[0]), &Vector::from_element(1, rb * x[1]));
                }
                let d3 = sphere_point(&x[1..q]);
                let d4 = sphere_point(&x[q + 1..]);
                indirect_features(&(d3 * (ra * x[0])), &(d4 * (rb * x[q])))
            }
        }
    }
}

/// Minimizes `objective` over a box, skipping zero-width coordinates.
pub(crate) fn minimize_box<F>(objective: F, lower: &[f64], upper: &[f64], budget: usize) -> Result<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let free: Vec<usize> = (0..lower.len()).filter(|&i| upper[i] > lower[i]).collect();
    let embed = |z: &[f64]| -> Vec<f64> {
        let mut x = lower.to_vec();
        for (k, &i) in free.iter().enumerate() {
            x[i] = z[k];
        }
        x
    };
    if free.is_empty() {
        let x = lower.to_vec();
        let v = objective(&x);
        return Ok((x, v));
    }
    let lo: Vec<f64> = free.iter().map(|&i| lower[i]).collect();
    let hi: Vec<f64> = free.iter().map(|&i| upper[i]).collect();
    let r = direct_optimize(|z| objective(&embed(z)), &lo, &hi, budget)?;
    Ok((embed(&r.argmin), r.min))
}

fn search(
    surface: &TSurface,
    space: Space,
    rho: RhoBudget,
    criterion: Criterion,
    budget: usize,
) -> Result<WorstCase> {
    rho.validate()?;
    let param = Parameterization { space, q: surface.q, rho: rho.clamped() };
    let value = |f: &Vector| surface.value(f, criterion);
    let (lo, hi) = param.bounds();
    let (x, _) = minimize_box(|x| value(&param.features(x)), &lo, &hi, budget)?;
    let mut features = param.features(&x);
    // The observed point is always feasible.
    let obs = surface.observed_features();
    if value(&obs) < value(&features) {
        features = obs;
    }
    Ok(WorstCase {
        value: value(&features),
        estimate: surface.estimate(&features),
        std_err: surface.std_err(&features),
        features,
    })
}

/// Worst case of the direct effect; both confounder modes share one search.
pub fn worst_direct(surface: &TSurface, rho: RhoBudget, criterion: Criterion, budget: usize) -> Result<WorstCase> {
    if surface.effect_kind != EffectKind::Direct {
        return Err(Error::InvalidInput("surface is not for the direct effect".into()));
    }
    search(surface, Space::Direct, rho, criterion, budget)
}

/// Worst case of the indirect effect. The vector-confounder search also
/// evaluates the scalar optimum, which is feasible for it.
pub fn worst_indirect(
    surface: &TSurface,
    rho: RhoBudget,
    mode: ConfounderMode,
    criterion: Criterion,
    budget: usize,
) -> Result<WorstCase> {
    if surface.effect_kind != EffectKind::Indirect {
        return Err(Error::InvalidInput("surface is not for the indirect effect".into()));
    }
    let scalar = search(surface, Space::IndirectScalar, rho, criterion, budget)?;
    if mode == ConfounderMode::ScalarU {
        return Ok(scalar);
    }
    let vector = search(surface, Space::IndirectVector, rho, criterion, budget)?;
    Ok(if scalar.value < vector.value { scalar } else { vector })
}

/// Worst case for either effect.
pub fn worst_case(
    surface: &TSurface,
    rho: RhoBudget,
    mode: ConfounderMode,
    criterion: Criterion,
    budget: usize,
) -> Result<WorstCase> {
    match surface.effect_kind {
        EffectKind::Direct => worst_direct(surface, rho, criterion, budget),
        EffectKind::Indirect => worst_indirect(surface, rho, mode, criterion, budget),
    }
}

fn budget_for(rho: f64, opts: &SearchOptions) -> RhoBudget {
    if opts.randomized {
        RhoBudget::randomized(rho)
    } else {
        RhoBudget::common(rho)
    }
}

/// Minimum working t statistic of the direct effect over confounders whose
/// squared sensitivity parameters are all at most `rho`.
pub fn min_t_direct(
    mm: &MediationMoments,
    plan: &BootstrapPlan,
    rho: f64,
    _mode: ConfounderMode,
    opts: &SearchOptions,
) -> Result<f64> {
    let surface = TSurface::new(mm, plan, EffectKind::Direct)?;
    Ok(worst_direct(&surface, budget_for(rho, opts), Criterion::TStat, opts.budget)?.value)
}

/// Minimum working t statistic of the indirect effect.
pub fn min_t_indirect(
    mm: &MediationMoments,
    plan: &BootstrapPlan,
    rho: f64,
    mode: ConfounderMode,
    opts: &SearchOptions,
) -> Result<f64> {
    let surface = TSurface::new(mm, plan, EffectKind::Indirect)?;
    Ok(worst_indirect(&surface, budget_for(rho, opts), mode, Criterion::TStat, opts.budget)?.value)
}

/// Robustness values with the curve that backs them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RVReport {
    pub rv_estimate: f64,
    pub rv_ci: f64,
    /// `(rho, min_t)` pairs; min_t is in the working direction.
    pub curve: Vec<(f64, f64)>,
    pub confounder_mode: ConfounderMode,
    pub effect_kind: EffectKind,
    pub observed_t: f64,
    /// True when the observed estimate was negative and the search ran on the
    /// negated effect.
    pub sign_flipped: bool,
}

/// `0.01, 0.02, ..., 0.99`.
pub fn default_rho_grid() -> Vec<f64> {
    (1..=99).map(|k| k as f64 / 100.0).collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("rho grid is empty".into()));
    }
    if grid.iter().any(|r| !(*r > 0.0 && *r < 1.0)) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("rho grid must be strictly increasing in (0, 1)".into()));
    }
    Ok(())
}

/// Smallest grid value whose curve value is at most `threshold`; 0 when the
/// observed t already is, 1 when no grid value qualifies.
pub fn rv_from_curve(curve: &[(f64, f64)], observed_t: f64, threshold: f64) -> f64 {
    if observed_t <= threshold {
        return 0.0;
    }
    curve.iter().find(|(_, t)| *t <= threshold).map(|(r, _)| *r).unwrap_or(1.0)
}

/// Minimum-t curve over `grid` made non-increasing by a running minimum
/// (feasible sets are nested in rho).
pub fn min_t_curve(
    surface: &TSurface,
    grid: &[f64],
    mode: ConfounderMode,
    opts: &SearchOptions,
) -> Result<Vec<(f64, f64)>> {
    check_grid(grid)?;
    let raw: Vec<Result<f64>> = grid
        .par_iter()
        .map(|&rho| Ok(worst_case(surface, budget_for(rho, opts), mode, Criterion::TStat, opts.budget)?.value))
        .collect();
    let mut curve = Vec::with_capacity(grid.len());
    let mut running = surface.observed_t();
    for (&rho, v) in grid.iter().zip(raw) {
        running = running.min(v?);
        curve.push((rho, running));
    }
    Ok(curve)
}

/// Robustness values for the point estimate (threshold 0) and for the
/// confidence interval (threshold `ci_threshold`).
pub fn robustness_value(
    mm: &MediationMoments,
    plan: &BootstrapPlan,
    effect_kind: EffectKind,
    ci_threshold: f64,
    grid: &[f64],
    mode: ConfounderMode,
    opts: &SearchOptions,
) -> Result<RVReport> {
    let surface = TSurface::new(mm, plan, effect_kind)?;
    robustness_value_on(&surface, ci_threshold, grid, mode, opts)
}

pub fn robustness_value_on(
    surface: &TSurface,
    ci_threshold: f64,
    grid: &[f64],
    mode: ConfounderMode,
    opts: &SearchOptions,
) -> Result<RVReport> {
    let curve = min_t_curve(surface, grid, mode, opts)?;
    let observed_t = surface.observed_t();
    Ok(RVReport {
        rv_estimate: rv_from_curve(&curve, observed_t, 0.0),
        rv_ci: rv_from_curve(&curve, observed_t, ci_threshold),
        curve,
        confounder_mode: mode,
        effect_kind: surface.effect_kind,
        observed_t,
        sign_flipped: surface.direction < 0.0,
    })
}

/// Robustness value of the point estimate alone, by bisection over the grid
/// on the sign of the worst-case estimate (no standard errors needed).
pub fn rv_estimate_fast(
    mm: &MediationMoments,
    effect_kind: EffectKind,
    grid: &[f64],
    mode: ConfounderMode,
    opts: &SearchOptions,
) -> Result<f64> {
    check_grid(grid)?;
    let empty = BootstrapPlan { n_resamples: 0, seed: 0, resample_moments: vec![], redraws: 0 };
    let surface = TSurface::new(mm, &empty, effect_kind)?;
    if surface.direction * surface.observed_estimate() <= 0.0 {
        return Ok(0.0);
    }
    let reaches = |rho: f64| -> Result<bool> {
        Ok(worst_case(&surface, budget_for(rho, opts), mode, Criterion::Estimate, opts.budget)?.value <= 0.0)
    };
    let (mut lo, mut hi) = (0usize, grid.len());
    // invariant: grid[..lo] do not reach zero, grid[hi..] do
    while lo < hi {
        let mid = (lo + hi) / 2;
        if reaches(grid[mid])? {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(grid.get(lo).copied().unwrap_or(1.0))
}
