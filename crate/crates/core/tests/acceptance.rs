//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use transeq::assignment::{cost_map, lp_limit, smooth_hard_caps, solve_stochastic, solve_wardrop, DemandMatrix, SolveConfig};
use transeq::distribution::{
    gravity_sinkhorn, solve_constrained, ConstrainedProblem, DistributionInstance, Mode, SigmaSite, SinkhornConfig, Transport,
};
use transeq::dynamics::{simulate_path_logit, DynamicsConfig, DynamicsKind};
use transeq::fullmodel::{solve_full, FullInstance};
use transeq::market::{consumer_best_response, producer_best_response, solve_market, Consumer, MarketConfig, MarketInstance, Producer};
use transeq::network::{CostFunction, Edge, Network};
use transeq::saddle::{mirror_prox, order_swap_check, Bilinear, MatrixGame, SaddleConfig, SaddleProblem, SwapConfig};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn affine(a: f64, b: f64) -> CostFunction {
    CostFunction::Affine { a, b }
}

fn parallel(costs: &[CostFunction], demand: f64) -> (Network, DemandMatrix) {
    let edges = costs.iter().map(|c| Edge::new(0, 1, *c)).collect();
    let net = Network::anonymous(2, edges, vec![(0, 1)]).unwrap();
    (net, DemandMatrix::scalar(vec![demand]).unwrap())
}

/// Ten nodes on a spine `0 → 1 → … → 9` plus random shortcuts.
fn random_network(rng: &mut ChaCha8Rng, od_pairs: Vec<(usize, usize)>) -> Network {
    let n = 10;
    let mut edges: Vec<Edge> = (0..n - 1)
        .map(|i| Edge::new(i, i + 1, affine(rng.random_range(0.0..2.0), rng.random_range(0.1..2.0))))
        .collect();
    for _ in 0..15 {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u != v {
            edges.push(Edge::new(u, v, affine(rng.random_range(0.0..2.0), rng.random_range(0.1..2.0))));
        }
    }
    Network::anonymous(n, edges, od_pairs).unwrap()
}

fn pigou() -> Check {
    let (net, d) = parallel(&[affine(0.0, 1.0), affine(1.0, 0.0)], 1.0);
    let start = Instant::now();
    let r = solve_wardrop(&net, &d, &SolveConfig::default().with_tol(1e-9)).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let off = (r.flows[0] - 1.0).abs().max(r.flows[1].abs());
    ensure(
        off <= 1e-4 && r.gap <= 1e-6 && r.wardrop_residual <= 1e-4 && secs < 1.0,
        format!(
            "|f - (1,0)| = {off:.1e}, gap {:.1e}, wardrop {:.1e}, {secs:.3}s",
            r.gap, r.wardrop_residual
        ),
    )
}

fn braess() -> Check {
    let (x, one) = (affine(0.0, 1.0), affine(1.0, 0.0));
    let cfg = SolveConfig::default().with_tol(1e-9);
    let solve = |edges: Vec<Edge>| -> Result<f64, String> {
        let net = Network::anonymous(4, edges, vec![(0, 3)]).map_err(err)?;
        let r = solve_wardrop(&net, &DemandMatrix::scalar(vec![1.0]).unwrap(), &cfg).map_err(err)?;
        Ok(r.od_costs[0])
    };
    let mut edges = vec![Edge::new(0, 1, x), Edge::new(0, 2, one), Edge::new(1, 3, one), Edge::new(2, 3, x)];
    let before = solve(edges.clone())?;
    edges.push(Edge::new(1, 2, affine(0.0, 0.0)));
    let after = solve(edges)?;
    ensure(
        (before - 1.5).abs() <= 1e-3 && (after - 2.0).abs() <= 1e-3,
        format!("path cost {before:.6} -> {after:.6}"),
    )
}

fn duality() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_gap, mut worst_weak) = (0.0f64, f64::NEG_INFINITY);
    for _ in 0..20 {
        let net = random_network(&mut rng, vec![(0, 9)]);
        let d = DemandMatrix::scalar(vec![rng.random_range(1.0..5.0)]).unwrap();
        let r = solve_wardrop(&net, &d, &SolveConfig::default().with_tol(1e-8)).map_err(err)?;
        if !r.converged {
            return Err(format!("no convergence after {} iterations", r.iterations));
        }
        worst_gap = worst_gap.max(r.gap);
        for rec in &r.history {
            worst_weak = worst_weak.max(rec.dual_value - rec.beckmann);
        }
    }
    ensure(
        worst_gap <= 1e-5 && worst_weak <= 1e-10,
        format!("max gap {worst_gap:.1e}, max dual - primal {worst_weak:.1e}"),
    )
}

fn danskin() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = SolveConfig::default().with_tol(1e-9);
    let eps = 1e-4;
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let net = random_network(&mut rng, vec![(0, 9), (1, 7)]);
        let d = vec![rng.random_range(1.0..4.0), rng.random_range(1.0..4.0)];
        let at = |v: Vec<f64>| cost_map(&net, &DemandMatrix::scalar(v).unwrap(), &cfg);
        let base = at(d.clone()).map_err(err)?;
        for w in 0..d.len() {
            let (mut up, mut dn) = (d.clone(), d.clone());
            up[w] += eps;
            dn[w] -= eps;
            let fd = (at(up).map_err(err)?.potential - at(dn).map_err(err)?.potential) / (2.0 * eps);
            worst = worst.max((fd - base.od_costs[w]).abs());
        }
    }
    ensure(worst <= 1e-3, format!("max |dPhi/dd - T| = {worst:.1e}"))
}

fn gravity_instance(t: Vec<Vec<f64>>, l: Vec<f64>, w: Vec<f64>, gamma: f64) -> DistributionInstance {
    let src = (0..l.len()).map(|i| SigmaSite::new(i, 0.0, 0.0)).collect();
    let snk = (0..w.len()).map(|j| SigmaSite::new(l.len() + j, 0.0, 0.0)).collect();
    DistributionInstance::fixed(src, snk, t, Mode::Constrained { l, w, gamma }).unwrap()
}

fn gravity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = SaddleConfig {
        tol: 1e-8,
        max_iter: 1_000_000,
        ..SaddleConfig::default()
    };
    let mut worst = 0.0f64;
    for gamma in [0.1, 1.0] {
        for _ in 0..5 {
            let t: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.random_range(0.0..2.0)).collect()).collect();
            let l: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..2.0)).collect();
            let mut w: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..2.0)).collect();
            let scale = l.iter().sum::<f64>() / w.iter().sum::<f64>();
            w.iter_mut().for_each(|v| *v *= scale);
            let r = solve_constrained(&gravity_instance(t.clone(), l.clone(), w.clone(), gamma), &cfg).map_err(err)?;
            let s = gravity_sinkhorn(&t, &l, &w, gamma, &SinkhornConfig::default()).map_err(err)?;
            for (a, b) in r.d.iter().flatten().zip(s.d.iter().flatten()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    let sym = solve_constrained(&gravity_instance(vec![vec![1.0; 2]; 2], vec![1.0; 2], vec![1.0; 2], 0.5), &cfg).map_err(err)?;
    let uniform = sym.d.iter().flatten().map(|v| (v - 0.5).abs()).fold(0.0, f64::max);
    ensure(
        worst <= 1e-4 && uniform <= 1e-6,
        format!("max |saddle - scaling| = {worst:.1e}, symmetric off-uniform {uniform:.1e}"),
    )
}

fn toy_agents() -> (Producer, Consumer) {
    let p = Producer {
        node: 0,
        u_max: vec![10.0],
        chi: 0.0,
        c: vec![1.0],
        a: Vec::new(),
        r: Vec::new(),
    };
    let c = Consumer {
        node: 1,
        q: vec![vec![1.0]],
        sigma_min: vec![2.0],
        income: 10.0,
    };
    (p, c)
}

/// Prices where the closures of the agents' response sets admit a common
/// traded quantity, found on a grid of step 0.01.
fn grid_oracle(p: &Producer, c: &Consumer, cost: f64) -> Vec<(f64, f64, f64)> {
    let delta = 1e-9;
    let supply = |ll: f64| {
        let lo = producer_best_response(p, &[ll - delta], &[], &[]).l[0];
        let hi = producer_best_response(p, &[ll + delta], &[], &[]).l[0];
        (lo.min(hi), lo.max(hi))
    };
    let demand = |lw: f64| {
        let lo = consumer_best_response(c, &[lw + delta]).unwrap().w[0];
        let hi = consumer_best_response(c, &[lw - delta]).unwrap().w[0];
        (lo.min(hi), lo.max(hi))
    };
    let mut hits = Vec::new();
    for i in 0..=400 {
        for j in 0..=400 {
            let (ll, lw) = (i as f64 / 100.0, j as f64 / 100.0);
            let margin = lw - ll - cost;
            let ship = if margin < -delta {
                (0.0, 0.0)
            } else if margin > delta {
                (f64::INFINITY, f64::INFINITY)
            } else {
                (0.0, f64::INFINITY)
            };
            // positive prices clear their markets exactly
            let (s, d) = (supply(ll), demand(lw));
            let lo = s.0.max(d.0).max(ship.0);
            let hi = s.1.min(d.1).min(ship.1);
            if lo <= hi && (lo > 0.0 || (ll == 0.0 && lw == 0.0)) {
                hits.push((ll, lw, lo));
            }
        }
    }
    hits
}

fn market_toy() -> Check {
    let (p, c) = toy_agents();
    let oracle = grid_oracle(&p, &c, 1.0);
    let &[(ll, lw, q)] = oracle.as_slice() else {
        return Err(format!("grid oracle is not unique: {oracle:?}"));
    };
    let inst = MarketInstance::new(vec![p], vec![c], Vec::new(), Transport::Fixed(vec![vec![1.0]]), 1e-3).map_err(err)?;
    let r = solve_market(&inst, &MarketConfig::default()).map_err(err)?;
    let off = [
        r.l[0][0] - q,
        r.w[0][0] - q,
        r.d[0][0] - q,
        r.lambda_l[0][0] - ll,
        r.lambda_w[0][0] - lw,
    ]
    .iter()
    .map(|v| v.abs())
    .fold(0.0, f64::max);
    let w = &r.walras;
    let groups = [w.sources, w.producer_sites, w.sinks, w.resources].map(|g| g.max());
    let walras = groups.iter().copied().fold(0.0, f64::max);
    ensure(
        r.converged && off <= 1e-2 && walras <= 1e-3,
        format!("oracle L=W=d={q}, lambda=({ll}, {lw}); max deviation {off:.1e}, walras {walras:.1e}"),
    )
}

fn full_consistency() -> Check {
    let names = ["p", "m", "q"].map(String::from).to_vec();
    let edges = vec![
        Edge::new(0, 1, affine(1.0, 0.0)),
        Edge::new(1, 2, affine(1.0, 0.0)),
        Edge::new(0, 2, affine(3.0, 0.0)),
    ];
    let net = Network::new(names, edges, Vec::new()).map_err(err)?;
    let (p, mut c) = toy_agents();
    c.node = 2;
    let cfg = MarketConfig::default();
    let fixed = MarketInstance::new(
        vec![p.clone()],
        vec![c.clone()],
        Vec::new(),
        Transport::Fixed(vec![vec![2.0]]),
        1e-3,
    )
    .map_err(err)?;
    let networked = MarketInstance::new(vec![p], vec![c], Vec::new(), Transport::Network(net), 1e-3).map_err(err)?;
    let m = solve_market(&fixed, &cfg).map_err(err)?;
    let f = solve_full(&FullInstance::new(networked, None, 0.15).map_err(err)?, &cfg).map_err(err)?;
    let off = [
        f.market.d[0][0] - m.d[0][0],
        f.market.lambda_l[0][0] - m.lambda_l[0][0],
        f.market.lambda_w[0][0] - m.lambda_w[0][0],
    ]
    .iter()
    .map(|v| v.abs())
    .fold(0.0, f64::max);
    ensure(
        m.converged && f.market.converged && off <= 1e-3 && f.wardrop_residual <= 1e-4 && f.cost_mismatch <= 1e-3,
        format!(
            "max |full - market| = {off:.1e}, wardrop {:.1e}, cost mismatch {:.1e}",
            f.wardrop_residual, f.cost_mismatch
        ),
    )
}

fn lp_limit_check() -> Check {
    let cap = |free_flow, capacity| CostFunction::HardCap { free_flow, capacity };
    let (net, d) = parallel(&[cap(1.0, 1.0), cap(2.0, 10.0)], 2.0);
    let lp = lp_limit(&net, &d).map_err(err)?;
    let mut errors = Vec::new();
    for mu in [0.1, 0.03, 0.01] {
        let smooth = smooth_hard_caps(&net, mu, 0.15).map_err(err)?;
        let r = solve_wardrop(&smooth, &d, &SolveConfig::default().with_tol(1e-9)).map_err(err)?;
        errors.push(r.flows.iter().zip(&lp.flows).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let shrinking = errors.windows(2).all(|w| w[1] <= w[0]);
    ensure(
        shrinking && errors[2] <= 5e-2,
        format!(
            "lp flows {:?}; max |f_mu - f_lp| at mu = 0.1, 0.03, 0.01: {}",
            lp.flows,
            sci(&errors)
        ),
    )
}

fn dynamics() -> Check {
    let (net, d) = parallel(&[affine(1.0, 0.0), affine(2.0, 0.0)], 1.0);
    let sol = solve_stochastic(
        &net,
        &d,
        &SolveConfig {
            tol: 1e-12,
            ..SolveConfig::default()
        },
    )
    .map_err(err)?;
    let (mut worst, mut ascent) = (0.0f64, 0.0f64);
    for kind in [DynamicsKind::Logit, DynamicsKind::ImitationLogit] {
        for step in [0.1, 0.3, 0.5] {
            let cfg = DynamicsConfig {
                kind,
                temperature: 1.0,
                step,
                horizon: 1000,
                ..DynamicsConfig::default()
            };
            let t = simulate_path_logit(&net, &d, &cfg).map_err(err)?;
            worst = t.last().iter().zip(&sol.flows[0]).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
            ascent = ascent.max(t.max_ascent());
        }
    }
    ensure(
        worst <= 1e-3 && ascent <= 1e-9,
        format!("max distance to fixed point {worst:.1e}, max Lyapunov ascent {ascent:.1e}"),
    )
}

fn saddle() -> Check {
    let g = MatrixGame::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    let (s, _) = mirror_prox(&g, &SaddleConfig::default()).map_err(err)?;
    let value = g.value(&s.z).unwrap_or(f64::NAN);
    let spread = s.z.iter().flatten().map(|v| (v - 0.5).abs()).fold(0.0, f64::max);

    let gap_at = |k: usize| {
        let cfg = SaddleConfig {
            max_iter: k,
            tol: 1e-300,
            check_every: k,
            last_iterate_stop: false,
            ..SaddleConfig::default()
        };
        mirror_prox(&Bilinear::scalar(), &cfg).map(|r| r.0.averaged_gap)
    };
    let gaps = [100, 1000, 10_000].map(gap_at);
    let gaps: Vec<f64> = gaps.into_iter().collect::<Result<_, _>>().map_err(err)?;
    let one_over_k = gaps.windows(2).all(|w| (5.0..=20.0).contains(&(w[0] / w[1])));

    let toy = gravity_instance(vec![vec![1.0, 2.0], vec![2.0, 1.0]], vec![1.0; 2], vec![1.0; 2], 1.0);
    let problem = ConstrainedProblem::new(&toy, 1e-10).map_err(err)?;
    let swap = order_swap_check(&problem, &SwapConfig::default()).map_err(err)?;
    let diff = (swap.minmax - swap.maxmin).abs();
    ensure(
        (value - 0.5).abs() <= 1e-3 && spread <= 1e-3 && one_over_k && swap.inner_converged && swap.outer_converged && diff <= 1e-3,
        format!(
            "game value {value:.6}, strategy spread {spread:.1e}; gaps {}; min-max vs max-min {diff:.1e}",
            sci(&gaps)
        ),
    )
}

fn determinism() -> Check {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let runs: [&[&str]; 10] = [
        &["assign", "pigou.json"],
        &["assign-stochastic", "two_path.json"],
        &["lp-limit", "capacitated.json"],
        &["distribute", "potential.json"],
        &["distribute-constrained", "gravity.json"],
        &["market", "market.json"],
        &["full", "full.json"],
        &["simulate", "two_path.json", "--random-start", "--seed", "11", "--horizon", "100"],
        &["verify", "pigou.json", "--solution", "bad.json"],
        &["swap-check", "gravity.json"],
    ];
    let run = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_transeq"))
            .args(args)
            .current_dir(&data)
            .output()
            .map(|o| (o.status.code(), o.stdout))
            .map_err(err)
    };
    let mut differing = Vec::new();
    for args in runs {
        let (a, b) = (run(args)?, run(args)?);
        if a != b || a.1.is_empty() {
            differing.push(args[0]);
        }
    }
    ensure(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} commands rerun byte-identically", runs.len())
        } else {
            format!("differing or empty output: {differing:?}")
        },
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("pigou assignment", pigou),
        ("braess paradox", braess),
        ("duality certificate", duality),
        ("danskin gradient", danskin),
        ("saddle vs sinkhorn", gravity),
        ("market toy", market_toy),
        ("full model consistency", full_consistency),
        ("lp limit", lp_limit_check),
        ("logit dynamics", dynamics),
        ("saddle engine", saddle),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (tag, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {:>2} {name}: {detail} [{:.2}s]", k + 1, start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
