use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use tagdiff_core::als::{eval_separable_a, restart_rng, run_als, AlsSettings, SeparableFunction};
use tagdiff_core::fvm::{initial_state, newton_solve, AffineClosure, Mesh, NewtonSettings, SimConfig};
use tagdiff_core::lattice::LatticeSpec;
use tagdiff_core::lsq::{solve_lsq, LsqSettings};
use tagdiff_core::Direction;

fn separable(c: &mut Criterion) {
    let u = Direction::new([1.0, 0.0]).unwrap();
    for m in [1, 2] {
        let spec = LatticeSpec::nearest_neighbour(m, 2).unwrap();
        let r = SeparableFunction::random_uniform(spec.n(), &mut restart_rng(1, 0));
        c.bench_function(&format!("separable_eval_M{m}"), |b| {
            b.iter(|| eval_separable_a(black_box(&spec), black_box(&r), &u))
        });
    }
    let spec = LatticeSpec::square_2d();
    c.bench_function("als_single_start_M1", |b| {
        b.iter(|| {
            let start = SeparableFunction::random_uniform(8, &mut restart_rng(7, 0));
            run_als(&spec, &u, start, &AlsSettings::default()).unwrap()
        })
    });
}

fn lsq(c: &mut Criterion) {
    let spec = LatticeSpec::square_2d();
    let u = Direction::new([1.0, 0.0]).unwrap();
    c.bench_function("lsq_M1", |b| b.iter(|| solve_lsq(&spec, &u, &LsqSettings::default()).unwrap()));
}

fn newton(c: &mut Criterion) {
    let cfg = SimConfig::reference();
    let mesh = Mesh::cartesian(18, 18).unwrap();
    let init = initial_state(&mesh, &cfg.initial).unwrap();
    let closure = AffineClosure::reference();
    c.bench_function("newton_step_18x18", |b| {
        b.iter(|| newton_solve(&mesh, black_box(&init.values), 1e-3, &closure, &NewtonSettings::default()).unwrap())
    });
}

criterion_group!(benches, separable, lsq, newton);
criterion_main!(benches);
