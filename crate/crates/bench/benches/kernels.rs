use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use glss::clt::{glss, CltModel, TestFunction};
use glss::fptest::{fp_test_many, HypothesisSpec, Projection};
use glss::models::{build_ancillary, build_population, sample_covariance, sample_data, spiked_alternative, AncillaryKind, Dist, PopulationKind};
use glss::stieltjes::{mp_fixed_point, Spectrum, TheoryProvider};
use glss::C64;

fn stieltjes(c: &mut Criterion) {
    let pop = build_population(500, PopulationKind::Ar1 { rho: 0.5 }, 1.0).unwrap();
    let h = Spectrum::from_eigenvalues(pop.eigenvalues());
    c.bench_function("mp_fixed_point ar1 n=500", |b| {
        b.iter(|| mp_fixed_point(black_box(C64::new(1.3, 0.2)), 1.0, &h).unwrap())
    });
}

fn statistics(c: &mut Criterion) {
    let n = 200;
    let pop = build_population(n, PopulationKind::Ar1 { rho: 0.5 }, 1.0).unwrap();
    let b = build_ancillary(n, &AncillaryKind::Wigner { seed: 1 }, Some(&pop)).unwrap();
    let x = sample_data(n, n, Dist::Gaussian, 1, 0).unwrap();
    let f = TestFunction::monomial(2);
    c.bench_function("glss eigen n=200", |bn| {
        bn.iter(|| {
            let s = sample_covariance(&x, &pop).unwrap();
            glss(&s, &b, &f).unwrap()
        })
    });
    let prov = TheoryProvider::for_population(&pop, n);
    let mut g = c.benchmark_group("clt");
    g.sample_size(10);
    g.bench_function("moments ar1/wigner n=200", |bn| {
        bn.iter(|| {
            let m = CltModel::for_population(&pop, &b, n, &prov, 2.0, 0.0, None).unwrap();
            m.moments(std::slice::from_ref(&f)).unwrap()
        })
    });
    g.finish();
}

fn projection_test(c: &mut Criterion) {
    let n = 200;
    let pop = spiked_alternative(n, 3, &[9.0, 6.0, 3.0], 0.0, 1.0).unwrap();
    let s = sample_covariance(&sample_data(n, n, Dist::Gaussian, 2, 0).unwrap(), &pop).unwrap();
    let fs = [TestFunction::monomial(2), TestFunction::monomial(3)];
    let spec = HypothesisSpec::new(Projection::axis(n, 3).unwrap(), 0.1, fs[0].clone(), 0.1).unwrap();
    let mut g = c.benchmark_group("fp");
    g.sample_size(10);
    g.bench_function("fp_test x^2,x^3 n=N=200", |bn| bn.iter(|| fp_test_many(&s, &spec, &fs, 3.0).unwrap()));
    g.finish();
}

criterion_group!(benches, stieltjes, statistics, projection_test);
criterion_main!(benches);
