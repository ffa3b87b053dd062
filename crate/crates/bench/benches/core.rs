use criterion::{criterion_group, criterion_main, Criterion as Bench};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use medsens_core::inference::bootstrap_moments;
use medsens_core::mediation::{fit_observed, EffectKind, MediationData};
use medsens_core::robustness::direct::direct_optimize;
use medsens_core::robustness::{worst_case, ConfounderMode, Criterion, RhoBudget, TSurface};
use medsens_core::{Mat, Vector};

fn data(n: usize, q: usize) -> MediationData {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut z = || -> f64 { rng.sample(StandardNormal) };
    let c = Mat::from_fn(n, 2, |_, _| z());
    let a = Vector::from_fn(n, |i, _| 0.4 * c[(i, 0)] + z());
    let m = Mat::from_fn(n, q, |i, k| (0.3 + 0.1 * k as f64) * a[i] + 0.2 * c[(i, 1)] + z());
    let y = Vector::from_fn(n, |i, _| 0.3 * a[i] + m.row(i).sum() * 0.4 + z());
    MediationData::new(y, a, m, c).unwrap()
}

fn benches(c: &mut Bench) {
    let d = data(1000, 3);
    c.bench_function("fit_observed n=1000 q=3", |b| b.iter(|| fit_observed(&d).unwrap()));
    c.bench_function("bootstrap 200 resamples", |b| b.iter(|| bootstrap_moments(&d, 200, 1).unwrap()));

    let mm = fit_observed(&d).unwrap();
    let plan = bootstrap_moments(&d, 500, 1).unwrap();
    let indirect = TSurface::new(&mm, &plan, EffectKind::Indirect).unwrap();
    c.bench_function("worst_case indirect vector-u", |b| {
        b.iter(|| {
            worst_case(&indirect, RhoBudget::common(0.1), ConfounderMode::VectorU, Criterion::TStat, 4000).unwrap()
        })
    });

    let rosenbrock = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
    c.bench_function("direct_optimize rosenbrock", |b| {
        b.iter(|| direct_optimize(rosenbrock, &[-2.0, -2.0], &[2.0, 2.0], 2000).unwrap())
    });
}

criterion_group! {
    name = core;
    config = Bench::default().sample_size(10);
    targets = benches
}
criterion_main!(core);
