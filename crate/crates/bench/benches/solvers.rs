use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use pmc_core::case1::{analyze_bsccs, approx_case1};
use pmc_core::case2::{project_counter, solve_g_matrix, sqrt_sum_instance, step_matrices, GOptions};
use pmc_core::coverability::{karp_miller_cover_above, to_blocking_vass, CoverOptions, Floor};
use pmc_core::sim::estimate_probability;
use pmc_core::{parse_pmc, NumericPolicy, Pmc, StoppingCriterion};

fn model(text: &str) -> Pmc {
    parse_pmc(text).expect("bundled model parses")
}

fn g_matrix(c: &mut Criterion) {
    let pmc = sqrt_sum_instance(&[1, 2, 4, 9], 5).unwrap();
    let m = step_matrices(&project_counter(&pmc, 2).unwrap());
    c.bench_function("g_matrix/sqrtsum_4", |b| b.iter(|| solve_g_matrix(black_box(&m), &GOptions::default()).unwrap()));
}

fn case1(c: &mut Criterion) {
    let up = model(include_str!("../../cli/models/gambler-up.pmc"));
    let start = up.config("q", vec![1]).unwrap();
    c.bench_function("approx_case1/gambler_up", |b| b.iter(|| approx_case1(&up, black_box(&start), 1e-3, false).unwrap()));
    let fig = model(include_str!("../../cli/models/fig1.pmc"));
    c.bench_function("analyze_bsccs/fig1", |b| b.iter(|| analyze_bsccs(black_box(&fig)).unwrap()));
}

fn coverability(c: &mut Criterion) {
    let fig = model(include_str!("../../cli/models/fig1.pmc"));
    let vass = to_blocking_vass(&fig);
    let start = fig.config("s", vec![1, 1]).unwrap();
    let floor = vec![Floor::AtLeast(3); 2];
    let targets: Vec<usize> = (0..fig.num_states()).collect();
    c.bench_function("karp_miller/fig1", |b| {
        b.iter(|| {
            for &t in &targets {
                black_box(karp_miller_cover_above(&vass, &start, t, &floor, &CoverOptions::default()).unwrap());
            }
        })
    });
}

fn stationary(c: &mut Criterion) {
    let fig = model(include_str!("../../cli/models/fig1.pmc"));
    let (floor, analyses) = analyze_bsccs(&fig).unwrap();
    let comp = analyses[0].component.clone();
    c.bench_function("stationary/fig1_exact", |b| {
        b.iter(|| floor.chain.stationary_distribution(black_box(&comp), NumericPolicy::default()).unwrap())
    });
}

fn simulate(c: &mut Criterion) {
    let down = model(include_str!("../../cli/models/gambler-down.pmc"));
    let start = down.config("q", vec![1]).unwrap();
    let z = StoppingCriterion::all(1);
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    g.bench_function("gambler_down_1000_runs", |b| {
        b.iter(|| estimate_probability(&down, black_box(&start), &z, 10_000, 1000, 0).unwrap())
    });
    g.finish();
}

criterion_group!(benches, g_matrix, case1, coverability, stationary, simulate);
criterion_main!(benches);
