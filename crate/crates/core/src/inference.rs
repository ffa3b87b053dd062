//! Case-resampling bootstrap over precomputed moments.
//!
//! Resample `i` draws its rows from a ChaCha stream keyed by `(seed, i)`, so
//! the resample set does not depend on scheduling or thread count. Reductions
//! run sequentially in resample order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mediation::{
    direct_adjusted, fit_observed, indirect_adjusted_product, EffectKind, EffectReport, MediationData,
    MediationMoments, Method, NaturalSensitivity, Z_95,
};

pub const DEFAULT_RESAMPLES: usize = 1000;
/// Redraws allowed per resample when its covariance is singular.
pub const MAX_REDRAWS: usize = 10;

/// Bootstrap resamples reduced to their moments.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapPlan {
    pub n_resamples: usize,
    pub seed: u64,
    pub resample_moments: Vec<MediationMoments>,
    /// Singular resamples that were redrawn.
    pub redraws: usize,
}

/// Standard error and percentile interval of an estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapSummary {
    pub std_err: f64,
    pub ci_percentile: (f64, f64),
}

fn stream(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Row indices of resample `index`, including redraws, and the fitted moments.
fn draw_one(data: &MediationData, seed: u64, index: usize) -> Result<(MediationMoments, usize)> {
    let n = data.n();
    let mut rng = stream(seed, index);
    let mut idx = vec![0usize; n];
    for attempt in 0..=MAX_REDRAWS {
        for slot in idx.iter_mut() {
            *slot = rng.random_range(0..n);
        }
        match fit_observed(&data.select_rows(&idx)) {
            Ok(mm) => return Ok((mm, attempt)),
            Err(Error::SingularCovariance(_) | Error::RankDeficient(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::TooManySingularResamples { index })
}

/// Draws `n_resamples` case resamples and fits each.
pub fn bootstrap_moments(data: &MediationData, n_resamples: usize, seed: u64) -> Result<BootstrapPlan> {
    if n_resamples == 0 {
        return Err(Error::InvalidInput("n_resamples must be at least 1".into()));
    }
    let fitted: Vec<Result<(MediationMoments, usize)>> =
        (0..n_resamples).into_par_iter().map(|i| draw_one(data, seed, i)).collect();
    let mut resample_moments = Vec::with_capacity(n_resamples);
    let mut redraws = 0;
    for r in fitted {
        let (mm, extra) = r?;
        redraws += extra;
        resample_moments.push(mm);
    }
    Ok(BootstrapPlan { n_resamples, seed, resample_moments, redraws })
}

/// Builds a plan from explicit row-index sets, bypassing the random draw.
pub fn bootstrap_from_indices(data: &MediationData, index_sets: &[Vec<usize>], seed: u64) -> Result<BootstrapPlan> {
    let resample_moments = index_sets
        .iter()
        .map(|idx| {
            if idx.iter().any(|&i| i >= data.n()) {
                return Err(Error::InvalidInput("resample index out of range".into()));
            }
            fit_observed(&data.select_rows(idx))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BootstrapPlan { n_resamples: index_sets.len(), seed, resample_moments, redraws: 0 })
}

/// Applies `estimator` to every resample.
pub fn bootstrap_values<F>(plan: &BootstrapPlan, estimator: F) -> Result<Vec<f64>>
where
    F: Fn(&MediationMoments) -> Result<f64> + Sync,
{
    let vals: Vec<Result<f64>> = plan.resample_moments.par_iter().map(&estimator).collect();
    vals.into_iter()
        .enumerate()
        .map(|(index, v)| v.map_err(|e| Error::EstimatorFailed { index, source: Box::new(e) }))
        .collect()
}

/// Bootstrap standard error (divisor `B - 1`) and 2.5%/97.5% percentile
/// interval of `estimator`.
pub fn bootstrap_se<F>(plan: &BootstrapPlan, estimator: F) -> Result<BootstrapSummary>
where
    F: Fn(&MediationMoments) -> Result<f64> + Sync,
{
    let vals = bootstrap_values(plan, estimator)?;
    Ok(summarize(&vals))
}

pub fn summarize(vals: &[f64]) -> BootstrapSummary {
    let std_err = sample_sd(vals);
    let mut sorted = vals.to_vec();
    sorted.sort_by(f64::total_cmp);
    BootstrapSummary { std_err, ci_percentile: (quantile(&sorted, 0.025), quantile(&sorted, 0.975)) }
}

/// Adjusted direct and indirect effects at `s` with bootstrap standard errors
/// and normal-approximation intervals.
pub fn effect_reports(
    mm: &MediationMoments,
    plan: &BootstrapPlan,
    s: &NaturalSensitivity,
) -> Result<[EffectReport; 2]> {
    let direct_se = bootstrap_se(plan, |m| direct_adjusted(m, s))?.std_err;
    let indirect_se = bootstrap_se(plan, |m| indirect_adjusted_product(m, s))?.std_err;
    Ok([
        EffectReport::new(direct_adjusted(mm, s)?, direct_se, EffectKind::Direct, Method::Coefficient, Z_95),
        EffectReport::new(indirect_adjusted_product(mm, s)?, indirect_se, EffectKind::Indirect, Method::Product, Z_95),
    ])
}

/// Standard deviation with divisor `len - 1`; zero for fewer than two values.
pub fn sample_sd(vals: &[f64]) -> f64 {
    if vals.len() < 2 {
        return 0.0;
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let ss: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (vals.len() - 1) as f64).sqrt()
}

/// Linear-interpolation quantile of sorted data (type 7).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
