use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fcascade_bench::{beam_fixture, sylvester_fixture};
use fcascade_core::graph::{GraphMap, QuadConfig};
use fcascade_core::model::{scalar_cubic, OutputY, StateX};
use fcascade_core::probe::Prng;
use fcascade_core::sim::{CascadeStepper, Scheme};
use fcascade_core::wlinalg::{solve_sylvester, Vector};
use std::hint::black_box;

fn bench_sylvester(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_sylvester");
    for &(n, m) in &[(10usize, 2usize), (30, 4), (66, 1)] {
        let (a, s, cmat) = sylvester_fixture(n, m, 7);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{n}x{m}")), &(), |b, ()| {
            b.iter(|| solve_sylvester(black_box(&a), black_box(&s), black_box(&cmat)).unwrap())
        });
    }
    group.finish();
}

fn bench_graph_eval(c: &mut Criterion) {
    let model = scalar_cubic();
    let graph = GraphMap::build(&model, QuadConfig::default()).unwrap();
    let x = StateX(Vector::from_element(1, 1.0));
    c.bench_function("eval_m_scalar", |b| b.iter(|| graph.eval_m(black_box(&x)).unwrap()));

    let beam = beam_fixture(32);
    let quad = QuadConfig {
        step: 1e-2,
        tail_tol: 1e-4,
        max_horizon: 120.0,
        decay_floor: 1e-4,
        smoothing_steps: 8,
    };
    let graph = GraphMap::build(&beam.model, quad).unwrap();
    let mut rng = Prng::new(3);
    let x = beam.random_state(&mut rng, 1.0);
    let gx = (beam.model.g)(&x.0);
    c.bench_function("eval_m_and_dmg_beam32", |b| {
        b.iter(|| graph.eval_m_and_dm_dirs(black_box(&x), black_box(&gx)).unwrap())
    });
}

fn bench_beam_step(c: &mut Criterion) {
    let beam = beam_fixture(32);
    let mut rng = Prng::new(5);
    let x = beam.random_state(&mut rng, 1.0);
    let z = Vector::from_element(1, 1.0);
    let u = Vector::from_element(1, 0.1);
    let mut stepper = CascadeStepper::new(&beam.model, 1e-3, Scheme::ImexCn, None).unwrap();
    c.bench_function("beam32_imex_cn_step", |b| {
        b.iter(|| stepper.step(black_box(&x.0), black_box(&z), black_box(&u)).unwrap())
    });

    let graph = GraphMap::build(
        &beam.model,
        QuadConfig { step: 1e-2, tail_tol: 1e-4, max_horizon: 120.0, decay_floor: 1e-4, smoothing_steps: 8 },
    )
    .unwrap();
    let zy = OutputY(z);
    c.bench_function("beam32_full_feedback", |b| {
        b.iter(|| {
            fcascade_core::controller::feedback(&beam.model, &graph, black_box(&x), black_box(&zy))
                .unwrap()
        })
    });
}

criterion_group!(benches, bench_sylvester, bench_graph_eval, bench_beam_step);
criterion_main!(benches);
