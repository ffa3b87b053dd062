//! Bounds on the confounder expressed relative to one observed covariate.
//!
//! The confounder is taken uncorrelated with every covariate. Its strength is
//! described by the leave-one-out parameters `R_{a~u|c_-j}`, `R_{m~u|a,c_-j}`
//! and `R_{y~u|a,m,c_-j}`, capped by multiples of the matching observed
//! partial correlations of `c_j`. Any leave-one-out triple is attainable, and
//! it maps to the natural parameters in closed form.

use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{Error, Result};
use crate::inference::BootstrapPlan;
use crate::linalg::{hcat, r_from_residuals, sample_cov, sym_inv_sqrt, sym_sqrt, Mat, Residualizer, Vector};
use crate::mediation::{EffectKind, MediationData, MediationMoments, NaturalSensitivity};
use crate::ovb::BOUNDARY;
use crate::robustness::{
    angle_bounds, minimize_box, sphere_point, Criterion, PhiDirect, PhiIndirect, TSurface, CLAMP, DEFAULT_BUDGET,
};

/// Caps on the relative strengths `k_a`, `k_m`, `k_y` for covariate `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    /// Column of the control block (0 is the intercept).
    pub j: usize,
    pub k_a_bound: f64,
    pub k_m_bound: f64,
    pub k_y_bound: f64,
    pub delta_grid: Option<Vec<f64>>,
}

impl BenchmarkSpec {
    pub fn new(j: usize, k_a: f64, k_m: f64, k_y: f64) -> Self {
        Self { j, k_a_bound: k_a, k_m_bound: k_m, k_y_bound: k_y, delta_grid: None }
    }

    fn validate(&self) -> Result<()> {
        if self.j == 0 {
            return Err(Error::InvalidInput("the intercept cannot be a benchmark".into()));
        }
        for k in [self.k_a_bound, self.k_m_bound, self.k_y_bound] {
            if !(k.is_finite() && k >= 0.0) {
                return Err(Error::InvalidInput(format!("benchmark cap {k} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Observed quantities for covariate `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkMoments {
    pub j: usize,
    /// `R_{a~c_j|c_-j}`.
    pub r_a_cj: f64,
    /// `R_{m~c_j|a,c_-j}`.
    pub r_m_cj: Vector,
    /// `R_{y~c_j|a,m,c_-j}`.
    pub r_y_cj: f64,
    /// `cov(m|a,c)^{-1/2} cov(m|a,c_-j)^{1/2}`.
    pub mediator_factor: Mat,
    /// `R^2_{y~c_j|a,m,c_-j}`.
    pub r2_y_cj: f64,
    /// `R^2_{c_j~m|a,c_-j}`.
    pub r2_m_cj: f64,
}

/// Leave-one-out sensitivity parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaveOneOut {
    pub r_a: f64,
    pub r_m: Vector,
    pub r_y: f64,
}

impl LeaveOneOut {
    pub fn zero(q: usize) -> Self {
        Self { r_a: 0.0, r_m: Vector::zeros(q), r_y: 0.0 }
    }
}

fn scalar(m: Mat) -> f64 {
    m[(0, 0)]
}

pub fn benchmark_moments(data: &MediationData, j: usize) -> Result<BenchmarkMoments> {
    if j == 0 || j >= data.p() {
        return Err(Error::InvalidInput(format!("covariate index {j} is not a user covariate")));
    }
    let n = data.n();
    let keep: Vec<usize> = (0..data.p()).filter(|&k| k != j).collect();
    let c_minus = data.c.select_columns(&keep);
    let cj = data.c.columns(j, 1).into_owned();
    let a = Mat::from_column_slice(n, 1, data.a.as_slice());
    let y = Mat::from_column_slice(n, 1, data.y.as_slice());

    let full = Residualizer::new(&hcat(&[&a, &data.c]))?;
    let on_c = Residualizer::new(&c_minus)?;
    let on_ac = Residualizer::new(&hcat(&[&a, &c_minus]))?;
    let on_amc = Residualizer::new(&hcat(&[&a, &data.m, &c_minus]))?;

    let r_a_cj = scalar(r_from_residuals(&on_c.apply(&a), &on_c.apply(&cj))?);
    let m_ac = on_ac.apply(&data.m);
    let r_m_cj = r_from_residuals(&m_ac, &on_ac.apply(&cj))?.column(0).into_owned();
    let r_y_cj = scalar(r_from_residuals(&on_amc.apply(&y), &on_amc.apply(&cj))?);

    let cov_full = sample_cov(&full.apply(&data.m));
    let mediator_factor = sym_inv_sqrt(&cov_full)? * sym_sqrt(&sample_cov(&m_ac))?;

    if r_a_cj.abs() >= BOUNDARY {
        return Err(Error::DegenerateAnchor("r_a_cj"));
    }
    if r_m_cj.norm() >= BOUNDARY {
        return Err(Error::DegenerateAnchor("r_m_cj"));
    }
    if r_y_cj.abs() >= BOUNDARY {
        return Err(Error::DegenerateAnchor("r_y_cj"));
    }
    Ok(BenchmarkMoments {
        j,
        r_a_cj,
        r2_m_cj: r_m_cj.norm_squared(),
        r_m_cj,
        r_y_cj,
        mediator_factor,
        r2_y_cj: r_y_cj * r_y_cj,
    })
}

/// Largest reference R²s over the user covariates:
/// `(max_j R^2_{y~c_j|a,m,c_-j}, max_j R^2_{c_j~m|a,c_-j})`.
pub fn reference_r2(data: &MediationData) -> Result<(f64, f64)> {
    let mut best = (0.0f64, 0.0f64);
    for j in 1..data.p() {
        let bm = benchmark_moments(data, j)?;
        best = (best.0.max(bm.r2_y_cj), best.1.max(bm.r2_m_cj));
    }
    Ok(best)
}

fn open_ball(name: &'static str, norm: f64) -> Result<()> {
    if !norm.is_finite() || norm >= BOUNDARY {
        return Err(Error::BoundaryR { name, norm });
    }
    Ok(())
}

fn keep(x2: f64, name: &'static str) -> Result<f64> {
    if !(x2 < 1.0) {
        return Err(Error::DegenerateAnchor(name));
    }
    Ok((1.0 - x2).sqrt())
}

/// `sqrt(1 - x^2)` for an implied partial correlation; outside the open unit
/// interval the leave-one-out triple cannot be realized.
fn keep_implied(x: f64, name: &str) -> Result<f64> {
    if !(x.abs() < BOUNDARY) {
        return Err(Error::InfeasibleTarget(format!("implied {name} = {x} is not a correlation")));
    }
    Ok((1.0 - x * x).sqrt())
}

/// Natural parameters implied by leave-one-out parameters.
///
/// Not every leave-one-out triple is attainable: keeping `u` uncorrelated
/// with `c_j` forces partial correlations between `c_j` and `u` that may leave
/// the unit interval when the anchors are strong. Such triples give
/// `InfeasibleTarget`.
pub fn natural_from_benchmark(bm: &BenchmarkMoments, lv: &LeaveOneOut) -> Result<NaturalSensitivity> {
    open_ball("r_a", lv.r_a.abs())?;
    open_ball("r_m", lv.r_m.norm())?;
    open_ball("r_y", lv.r_y.abs())?;
    if lv.r_m.len() != bm.r_m_cj.len() {
        return Err(Error::DimensionMismatch("leave-one-out r_m length".into()));
    }
    let keep_a_cj = keep(bm.r_a_cj * bm.r_a_cj, "r_a_cj")?;
    let r_a = lv.r_a / keep_a_cj;
    // R_{c_j~u|a,c_-j}
    let cj_u_a = -bm.r_a_cj * lv.r_a / (keep(lv.r_a * lv.r_a, "r_a")? * keep_a_cj);
    // R_{c_j~u|a,m,c_-j}
    let cj_u_am = (cj_u_a - bm.r_m_cj.dot(&lv.r_m))
        / (keep(bm.r2_m_cj, "r_m_cj")? * keep(lv.r_m.norm_squared(), "r_m")?);
    let r_m = &bm.mediator_factor * (&lv.r_m - &bm.r_m_cj * cj_u_a) / keep_implied(cj_u_a, "R_{c_j~u|a,c_-j}")?;
    let r_y = (lv.r_y - bm.r_y_cj * cj_u_am) / (keep(bm.r2_y_cj, "r_y_cj")? * keep_implied(cj_u_am, "R_{c_j~u|a,m,c_-j}")?);
    let s = NaturalSensitivity { r_y, r_m, r_a };
    s.validate().map_err(|e| Error::InfeasibleTarget(format!("implied natural parameters: {e}")))?;
    Ok(s)
}

/// Worst case under the caps.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkWorst {
    /// Adjusted estimate closest to (or furthest past) zero.
    pub worst_estimate: f64,
    pub argmin_estimate: LeaveOneOut,
    /// Adjusted t statistic closest to (or furthest past) zero.
    pub worst_t: f64,
    pub argmin_t: LeaveOneOut,
    pub sign_flipped: bool,
    /// The capped box contains unattainable triples. Near them the adjusted
    /// effects can grow without bound, so the reported worst case is only the
    /// worst attainable point the search visited.
    pub touches_infeasible: bool,
}

/// Ball radii `sqrt(k * anchor^2)`, kept inside the open unit ball.
fn radii(bm: &BenchmarkMoments, spec: &BenchmarkSpec) -> (f64, f64, f64) {
    let r = |k: f64, anchor2: f64| (k * anchor2).sqrt().min(CLAMP);
    (r(spec.k_a_bound, bm.r_a_cj * bm.r_a_cj), r(spec.k_m_bound, bm.r2_m_cj), r(spec.k_y_bound, bm.r2_y_cj))
}

struct LeaveBox {
    q: usize,
    ra: f64,
    rm: f64,
    ry: f64,
}

impl LeaveBox {
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![-self.ra, -self.ry];
        let mut hi = vec![self.ra, self.ry];
        if self.q == 1 {
            lo.push(-self.rm);
            hi.push(self.rm);
        } else {
            lo.push(0.0);
            hi.push(self.rm);
            let (al, au) = angle_bounds(self.q);
            lo.extend(al);
            // angles are irrelevant on a zero ball
            hi.extend(au.into_iter().map(|u| if self.rm > 0.0 { u } else { 0.0 }));
        }
        (lo, hi)
    }

    fn point(&self, x: &[f64]) -> LeaveOneOut {
        let r_m = if self.q == 1 { Vector::from_element(1, x[2]) } else { sphere_point(&x[3..]) * x[2] };
        LeaveOneOut { r_a: x[0], r_m, r_y: x[1] }
    }
}

fn features(kind: EffectKind, s: &NaturalSensitivity) -> Vector {
    match kind {
        EffectKind::Direct => PhiDirect::from_natural(s).features(),
        EffectKind::Indirect => PhiIndirect::from_natural(s).features(),
    }
}

/// Minimum of one criterion over the capped box.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxMinimum {
    pub argmin: LeaveOneOut,
    pub value: f64,
    /// Some visited point was unattainable.
    pub touches_infeasible: bool,
}

/// Minimizes `criterion` over the capped leave-one-out box. Unattainable
/// points count as `+inf`.
pub fn benchmark_search(
    surface: &TSurface,
    bm: &BenchmarkMoments,
    spec: &BenchmarkSpec,
    criterion: Criterion,
    budget: usize,
) -> Result<BoxMinimum> {
    spec.validate()?;
    if spec.j != bm.j {
        return Err(Error::InvalidInput("spec and moments refer to different covariates".into()));
    }
    let (ra, rm, ry) = radii(bm, spec);
    let bx = LeaveBox { q: surface.q, ra, rm, ry };
    let infeasible = AtomicBool::new(false);
    let value = |lv: &LeaveOneOut| -> f64 {
        match natural_from_benchmark(bm, lv) {
            Ok(s) => surface.value(&features(surface.effect_kind, &s), criterion),
            Err(_) => {
                infeasible.store(true, Ordering::Relaxed);
                f64::INFINITY
            }
        }
    };
    let (lo, hi) = bx.bounds();
    let (x, _) = minimize_box(|x| value(&bx.point(x)), &lo, &hi, budget)?;
    let mut best = bx.point(&x);
    let origin = LeaveOneOut::zero(surface.q);
    if value(&origin) < value(&best) {
        best = origin;
    }
    let value_at_best = value(&best);
    Ok(BoxMinimum { argmin: best, value: value_at_best, touches_infeasible: infeasible.into_inner() })
}

/// Worst adjusted estimate and t statistic under the caps of `spec`.
pub fn benchmark_worst(
    mm: &MediationMoments,
    plan: &BootstrapPlan,
    bm: &BenchmarkMoments,
    spec: &BenchmarkSpec,
    effect_kind: EffectKind,
) -> Result<BenchmarkWorst> {
    let surface = TSurface::new(mm, plan, effect_kind)?;
    benchmark_worst_on(&surface, bm, spec, DEFAULT_BUDGET)
}

pub fn benchmark_worst_on(
    surface: &TSurface,
    bm: &BenchmarkMoments,
    spec: &BenchmarkSpec,
    budget: usize,
) -> Result<BenchmarkWorst> {
    let e = benchmark_search(surface, bm, spec, Criterion::Estimate, budget)?;
    let t = benchmark_search(surface, bm, spec, Criterion::TStat, budget)?;
    Ok(BenchmarkWorst {
        worst_estimate: surface.direction * e.value,
        argmin_estimate: e.argmin,
        worst_t: surface.direction * t.value,
        argmin_t: t.argmin,
        sign_flipped: surface.direction < 0.0,
        touches_infeasible: e.touches_infeasible || t.touches_infeasible,
    })
}

/// `0.1, 0.2, ..., 10.0`.
pub fn default_delta_grid() -> Vec<f64> {
    (1..=100).map(|k| k as f64 / 10.0).collect()
}

/// Smallest grid multiplier `delta` at which the worst t statistic (in the
/// observed direction) reaches `threshold`, with `k_m = k_y = delta` and
/// `k_a = delta` unless the exposure is randomized (then `k_a = 0`).
/// Returns 0 when the observed t is already at or below the threshold and
/// `None` when no grid value reaches it.
pub fn critical_delta(
    surface: &TSurface,
    bm: &BenchmarkMoments,
    threshold: f64,
    randomized: bool,
    delta_grid: &[f64],
    budget: usize,
) -> Result<Option<f64>> {
    if delta_grid.is_empty() || delta_grid.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(Error::InvalidInput("delta grid must be positive and finite".into()));
    }
    if delta_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("delta grid must be increasing".into()));
    }
    if surface.observed_t() <= threshold {
        return Ok(Some(0.0));
    }
    // t and estimate share signs, and the estimate needs no standard errors
    let criterion = if threshold == 0.0 { Criterion::Estimate } else { Criterion::TStat };
    for &delta in delta_grid {
        let spec = BenchmarkSpec::new(bm.j, if randomized { 0.0 } else { delta }, delta, delta);
        if benchmark_search(surface, bm, &spec, criterion, budget)?.value <= threshold {
            return Ok(Some(delta));
        }
    }
    Ok(None)
}
