//! Parallel against single-threaded runs of the shortest-path heavy paths.
//!
//! The one-thread case installs a private rayon pool of size 1, so both
//! arms execute identical code. Build with `--no-default-features` to
//! measure the plain sequential fallback instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use transeq::assignment::{dual_value, solve_wardrop, DemandMatrix, SolveConfig};
use transeq::network::{CostFunction, Edge, Network};

/// `side × side` grid with two-way BPR links and od pairs from every node
/// of the left column to every node of the right column, and back.
fn grid(side: usize, seed: u64) -> (Network, DemandMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = |r: usize, c: usize| r * side + c;
    let mut edges = Vec::new();
    let mut link = |a: usize, b: usize, rng: &mut ChaCha8Rng| {
        let cost = CostFunction::Bpr {
            free_flow: rng.random_range(1.0..3.0),
            capacity: rng.random_range(5.0..15.0),
            rho: 0.15,
            power: 4.0,
        };
        edges.push(Edge::new(a, b, cost));
        edges.push(Edge::new(b, a, cost));
    };
    for r in 0..side {
        for c in 0..side {
            if c + 1 < side {
                link(id(r, c), id(r, c + 1), &mut rng);
            }
            if r + 1 < side {
                link(id(r, c), id(r + 1, c), &mut rng);
            }
        }
    }
    let mut od = Vec::new();
    for r in 0..side {
        for c in 0..side {
            od.push((id(r, 0), id(c, side - 1)));
            od.push((id(r, side - 1), id(c, 0)));
        }
    }
    let volumes = (0..od.len()).map(|_| rng.random_range(0.5..2.0)).collect();
    let net = Network::anonymous(side * side, edges, od).unwrap();
    (net, DemandMatrix::scalar(volumes).unwrap())
}

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    vec![("parallel", all), ("one_thread", one)]
}

fn shortest_paths(c: &mut Criterion) {
    let mut group = c.benchmark_group("dual_value");
    for side in [20, 40] {
        let (net, demands) = grid(side, 1);
        let times: Vec<f64> = net.edges().iter().map(|e| e.cost.free_flow_time()).collect();
        for (name, pool) in pools() {
            group.bench_with_input(BenchmarkId::new(name, side), &side, |b, _| {
                b.iter(|| pool.install(|| dual_value(&net, &demands, &times).unwrap()))
            });
        }
    }
    group.finish();
}

fn assignment(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_wardrop");
    group.sample_size(10);
    let (net, demands) = grid(8, 2);
    let cfg = SolveConfig::default().with_tol(1e-4);
    for (name, pool) in pools() {
        group.bench_function(name, |b| b.iter(|| pool.install(|| solve_wardrop(&net, &demands, &cfg).unwrap())));
    }
    group.finish();
}

criterion_group!(benches, shortest_paths, assignment);
criterion_main!(benches);
