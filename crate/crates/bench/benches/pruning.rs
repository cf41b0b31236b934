use std::hint::black_box;

use cnf_core::fabric::Grid;
use cnf_core::pruning::{apply_event, build_plan, ApplyOptions, PlanOptions, ScoreTable, Strategy};
use cnf_core::{Fabric, FabricDims};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn selection(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dims = FabricDims::for_resolution(8, 8, 32, 10).unwrap();
    let fabric = Fabric::<f32>::new(dims, &mut rng).unwrap();
    let scores = ScoreTable::magnitude(&fabric);
    let mut group = c.benchmark_group("pruning");
    group.bench_function("magnitude scores L8 C8", |b| {
        b.iter(|| ScoreTable::magnitude(black_box(&fabric)))
    });
    for strategy in [Strategy::Early, Strategy::Iterative] {
        let plan = build_plan(strategy, 0.05, &dims, PlanOptions::default()).unwrap();
        let event = plan.events[0];
        group.bench_function(format!("{} first event, s=0.05", strategy.as_str()), |b| {
            b.iter_batched(
                || fabric.clone(),
                |mut f| apply_event(&mut f, &event, &scores, ApplyOptions::default()).unwrap(),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

fn graph(c: &mut Criterion) {
    let grid = Grid::new(16, 8);
    let n = grid.in_links(grid.output()).len();
    let alive = vec![true; cnf_core::fabric::full_link_count(16, 8)];
    let mut group = c.benchmark_group("grid");
    group.bench_function("connected L16 S8", |b| b.iter(|| grid.connected(black_box(&alive))));
    group.bench_function("longest linear path L16 S8", |b| {
        b.iter(|| grid.longest_linear_path(black_box(&alive)))
    });
    group.bench_function("cascade after cutting the output inputs", |b| {
        b.iter_batched(
            || {
                let mut a = alive.clone();
                for l in &grid.in_links(grid.output())[..n - 1] {
                    a[l.0] = false;
                }
                a
            },
            |mut a| grid.cascade(&mut a),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

criterion_group!(benches, selection, graph);
criterion_main!(benches);
