//! DIRECT (dividing rectangles) global minimization on a box.
//!
//! Deterministic: rectangles are selected with the usual lower-convex-hull
//! rule and divided along their longest sides, ordered by the best sampled
//! value. Evaluations requested by one iteration are computed as a batch.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Hull tolerance of the selection rule.
pub const EPSILON: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct DirectResult {
    pub argmin: Vec<f64>,
    pub min: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
struct Rect {
    center: Vec<f64>,
    levels: Vec<u32>,
    f: f64,
}

impl Rect {
    fn size(&self) -> f64 {
        0.5 * self.levels.iter().map(|&l| 3f64.powi(-2 * l as i32)).sum::<f64>().sqrt()
    }
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Minimizes `objective` over `[lower, upper]` with at most `budget`
/// evaluations.
pub fn direct_optimize<F>(objective: F, lower: &[f64], upper: &[f64], budget: usize) -> Result<DirectResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = lower.len();
    if d == 0 || upper.len() != d {
        return Err(Error::DimensionMismatch("box bounds".into()));
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
        return Err(Error::InvalidInput("box must satisfy lower < upper componentwise".into()));
    }
    if budget < 2 * d + 1 {
        return Err(Error::BudgetTooSmall { budget, dim: d });
    }
    let to_box = |unit: &[f64]| -> Vec<f64> {
        unit.iter().enumerate().map(|(i, x)| lower[i] + x * (upper[i] - lower[i])).collect()
    };
    let eval = |unit: &[f64]| sanitize(objective(&to_box(unit)));

    let first = Rect { center: vec![0.5; d], levels: vec![0; d], f: 0.0 };
    let mut rects = vec![Rect { f: eval(&first.center), ..first }];
    let mut evaluations = 1;
    let mut best = 0usize;

    loop {
        let chosen = potentially_optimal(&rects, rects[best].f);
        // Points to evaluate for each chosen rectangle, within the budget.
        let mut plan: Vec<(usize, Vec<usize>, f64)> = Vec::new();
        let mut planned = 0;
        for &r in &chosen {
            let min_level = *rects[r].levels.iter().min().expect("d > 0");
            let long: Vec<usize> = (0..d).filter(|&i| rects[r].levels[i] == min_level).collect();
            if evaluations + planned + 2 * long.len() > budget {
                break;
            }
            planned += 2 * long.len();
            plan.push((r, long, 3f64.powi(-(min_level as i32 + 1))));
        }
        if plan.is_empty() {
            break;
        }
        let points: Vec<Vec<f64>> = plan
            .iter()
            .flat_map(|(r, long, delta)| {
                let c = &rects[*r].center;
                long.iter().flat_map(move |&i| {
                    let mut plus = c.clone();
                    plus[i] += delta;
                    let mut minus = c.clone();
                    minus[i] -= delta;
                    [plus, minus]
                })
            })
            .collect();
        let values: Vec<f64> = points.par_iter().map(|p| eval(p)).collect();
        evaluations += values.len();

        let mut cursor = 0;
        for (r, long, _) in plan {
            let mut samples: Vec<(f64, usize, Vec<f64>, f64, Vec<f64>, f64)> = long
                .iter()
                .map(|&i| {
                    let (pp, fp) = (points[cursor].clone(), values[cursor]);
                    let (pm, fm) = (points[cursor + 1].clone(), values[cursor + 1]);
                    cursor += 2;
                    (fp.min(fm), i, pp, fp, pm, fm)
                })
                .collect();
            samples.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut levels = rects[r].levels.clone();
            for (_, i, pp, fp, pm, fm) in samples {
                levels[i] += 1;
                rects.push(Rect { center: pp, levels: levels.clone(), f: fp });
                rects.push(Rect { center: pm, levels: levels.clone(), f: fm });
            }
            rects[r].levels = levels;
        }
        for (k, rect) in rects.iter().enumerate() {
            if rect.f < rects[best].f {
                best = k;
            }
        }
        if evaluations >= budget {
            break;
        }
    }
    Ok(DirectResult { argmin: to_box(&rects[best].center), min: rects[best].f, evaluations })
}

/// Indices of rectangles on the lower-right convex hull of (size, value).
fn potentially_optimal(rects: &[Rect], fmin: f64) -> Vec<usize> {
    // best rectangle per distinct size
    let mut groups: Vec<(f64, usize)> = Vec::new();
    let mut keyed: Vec<(i64, f64, usize)> =
        rects.iter().enumerate().map(|(k, r)| ((r.size() * 1e12).round() as i64, r.size(), k)).collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then(rects[a.2].f.total_cmp(&rects[b.2].f)).then(a.2.cmp(&b.2)));
    for (key, size, k) in &keyed {
        if groups.last().map(|(s, _)| ((s * 1e12).round() as i64) != *key).unwrap_or(true) {
            groups.push((*size, *k));
        }
    }
    let threshold = fmin - EPSILON * fmin.abs();
    let mut chosen = Vec::new();
    for (j, &(dj, kj)) in groups.iter().enumerate() {
        let fj = rects[kj].f;
        let mut k_low: f64 = 0.0;
        let mut k_high = f64::INFINITY;
        for (i, &(di, ki)) in groups.iter().enumerate() {
            if i == j {
                continue;
            }
            let fi = rects[ki].f;
            if di < dj {
                k_low = k_low.max((fj - fi) / (dj - di));
            } else {
                k_high = k_high.min((fi - fj) / (di - dj));
            }
        }
        if k_low > k_high || !fj.is_finite() {
            continue;
        }
        let ok = if k_high.is_infinite() { true } else { fj - k_high * dj <= threshold };
        if ok {
            chosen.push(kj);
        }
    }
    if chosen.is_empty() {
        // fall back to the largest rectangle so the search always progresses
        if let Some(&(_, k)) = groups.last() {
            chosen.push(k);
        }
    }
    chosen
}
