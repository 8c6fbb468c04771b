use std::collections::BTreeMap;

use super::{
    all_or_nothing, beckmann_unchecked, conjugate_sum, path_flows_from_map, reject_hard_caps, residual_at, smooth_hard_caps,
    AssignmentResult, DemandMatrix, GapRecord, LineSearch, Method, SolveConfig,
};
use crate::network::{dijkstra, Network, Path};
use crate::Result;

const BISECTION_STEPS: usize = 64;

/// Wardrop equilibrium by Frank–Wolfe on the Beckmann potential.
///
/// Each iteration loads the demand all-or-nothing onto current shortest
/// paths and moves toward that vertex. The duality gap
/// `Beckmann(f) − dual_value(τ(f))` is the stopping certificate.
/// Multi-commodity demands are summed per pair.
pub fn solve_wardrop(net: &Network, demands: &DemandMatrix, cfg: &SolveConfig) -> Result<AssignmentResult> {
    cfg.validate()?;
    demands.check_against(net)?;
    if net.has_hard_caps() {
        if let Some(mu) = cfg.mu {
            let smooth = smooth_hard_caps(net, mu, cfg.smoothing_rho)?;
            return solve_wardrop(&smooth, demands, &SolveConfig { mu: None, ..cfg.clone() });
        }
    }
    reject_hard_caps(net)?;

    let totals = demands.totals();
    let aon = all_or_nothing(net, &totals, &net.free_flow_times())?;
    let mut flows = aon.flows;
    let mut paths: Vec<BTreeMap<Path, f64>> = aon
        .paths
        .into_iter()
        .zip(&totals)
        .map(|(p, &d)| {
            let mut m = BTreeMap::new();
            if d > 0.0 {
                m.insert(p.expect("connected"), d);
            }
            m
        })
        .collect();

    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let times = net.times_at(&flows);
        let target = all_or_nothing(net, &totals, &times)?;
        let beckmann = beckmann_unchecked(net, &flows);
        let dual_value = target.value - conjugate_sum(net, &times);
        let gap = beckmann - dual_value;
        history.push(GapRecord { beckmann, dual_value });
        let converged = gap <= cfg.tol;
        if converged || iterations >= cfg.max_iter {
            let path_flows = path_flows_from_map(paths);
            let wardrop_residual = residual_at(&times, &target.od_costs, &path_flows);
            return Ok(AssignmentResult {
                flows,
                times,
                beckmann,
                dual_value,
                gap,
                wardrop_residual,
                od_costs: target.od_costs,
                path_flows,
                iterations,
                converged,
                history,
            });
        }

        if cfg.method == Method::PathEquilibration {
            equilibrate(net, &mut flows, &mut paths);
            iterations += 1;
            continue;
        }
        let direction: Vec<f64> = target.flows.iter().zip(&flows).map(|(y, f)| y - f).collect();
        let step = match cfg.line_search {
            LineSearch::Exact => exact_step(net, &flows, &direction),
            LineSearch::Fixed => 2.0 / (iterations as f64 + 2.0),
        };
        for (f, d) in flows.iter_mut().zip(&direction) {
            *f = (*f + step * d).max(0.0);
        }
        for ((m, p), &d) in paths.iter_mut().zip(target.paths).zip(&totals) {
            if d <= 0.0 {
                continue;
            }
            for x in m.values_mut() {
                *x *= 1.0 - step;
            }
            *m.entry(p.expect("connected")).or_insert(0.0) += step * d;
            m.retain(|_, x| *x > 0.0);
        }
        iterations += 1;
    }
}

/// One Gauss–Seidel sweep over the pairs: every used path hands flow to
/// the pair's current shortest path until their costs meet or it empties.
fn equilibrate(net: &Network, flows: &mut [f64], paths: &mut [BTreeMap<Path, f64>]) {
    for (w, &(o, d)) in net.od_pairs().iter().enumerate() {
        if paths[w].is_empty() {
            continue;
        }
        let times = net.times_at(flows);
        let Some(best) = dijkstra(net, &times, o).path_to(net, d) else {
            continue;
        };
        let used: Vec<Path> = paths[w].keys().filter(|p| **p != best).cloned().collect();
        for p in used {
            let volume = paths[w][&p];
            let gain: Vec<usize> = best.edges.iter().copied().filter(|e| !p.contains(*e)).collect();
            let lose: Vec<usize> = p.edges.iter().copied().filter(|e| !best.contains(*e)).collect();
            // the shift's effect on the cost difference and its derivative
            let slope = |s: f64| -> (f64, f64) {
                let (mut g, mut h) = (0.0, 0.0);
                for &e in &gain {
                    let c = &net.edges()[e].cost;
                    g += c.tau(flows[e] + s);
                    h += c.tau_derivative(flows[e] + s);
                }
                for &e in &lose {
                    let c = &net.edges()[e].cost;
                    let f = flows[e] - s;
                    g -= c.tau(f.max(0.0));
                    if f > 0.0 {
                        h += c.tau_derivative(f);
                    }
                }
                (g, h)
            };
            if slope(0.0).0 >= 0.0 {
                continue;
            }
            let shift = if slope(volume).0 <= 0.0 {
                volume
            } else {
                monotone_root(slope, volume)
            };
            for &e in &gain {
                flows[e] += shift;
            }
            for &e in &lose {
                flows[e] = (flows[e] - shift).max(0.0);
            }
            if shift >= volume {
                paths[w].remove(&p);
            } else {
                *paths[w].get_mut(&p).expect("present") -= shift;
            }
            *paths[w].entry(best.clone()).or_insert(0.0) += shift;
        }
    }
    flows.iter_mut().for_each(|f| *f = 0.0);
    for m in paths.iter() {
        for (p, &x) in m {
            for &e in &p.edges {
                flows[e] += x;
            }
        }
    }
}

/// Minimises the Beckmann potential on `f + s·dir`, `s ∈ [0, 1]`, by
/// bisection on the (monotone) directional derivative.
fn exact_step(net: &Network, flows: &[f64], direction: &[f64]) -> f64 {
    let slope = |s: f64| -> f64 {
        net.edges()
            .iter()
            .zip(flows.iter().zip(direction))
            .filter(|(_, (_, d))| **d != 0.0)
            .map(|(e, (f, d))| e.cost.tau((f + s * d).max(0.0)) * d)
            .sum()
    };
    if slope(1.0) <= 0.0 {
        return 1.0;
    }
    bisect(|s| slope(s) > 0.0, 1.0)
}

fn bisect(above: impl Fn(f64) -> bool, hi: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, hi);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if above(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Root in `(0, hi)` of a nondecreasing `g` with `g(0) < 0 < g(hi)`, given
/// `s ↦ (g(s), g'(s))`. Newton steps that leave the bracket fall back to
/// bisection, so at most `BISECTION_STEPS` evaluations are spent.
fn monotone_root(g: impl Fn(f64) -> (f64, f64), hi: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, hi);
    let mut s = 0.5 * hi;
    for _ in 0..BISECTION_STEPS {
        let (v, d) = g(s);
        if v == 0.0 {
            return s;
        }
        if v > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let newton = s - v / d;
        let next = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - s).abs() <= 1e-15 * (1.0 + s.abs()) || hi - lo <= 1e-15 * (1.0 + hi.abs()) {
            return next;
        }
        s = next;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::{wardrop_residual, FLOW_EPS};
    use crate::network::fixtures::*;
    use crate::network::CostFunction;
    use crate::Error;

    fn unit() -> DemandMatrix {
        DemandMatrix::scalar(vec![1.0]).unwrap()
    }

    #[test]
    fn pigou() {
        let net = crate::network::fixtures::pigou();
        let r = solve_wardrop(&net, &unit(), &SolveConfig::default()).unwrap();
        assert!(r.converged);
        assert!((r.flows[0]).abs() < 1e-4 && (r.flows[1] - 1.0).abs() < 1e-4);
        assert!(r.gap <= 1e-6 && r.gap >= -1e-12);
        assert!((r.od_costs[0] - 1.0).abs() < 1e-6);
        assert!(r.wardrop_residual <= 1e-4);
    }

    #[test]
    fn braess_without_and_with_shortcut() {
        let f = affine(0.0, 1.0);
        let one = affine(1.0, 0.0);
        let cfg = SolveConfig::default().with_tol(1e-9);
        let net = braess(&[f, one, one, f]);
        let r = solve_wardrop(&net, &unit(), &cfg).unwrap();
        assert!((r.flows[0] - 0.5).abs() < 1e-4 && (r.flows[2] - 0.5).abs() < 1e-4);
        assert!((r.od_costs[0] - 1.5).abs() < 1e-4);

        let net = braess(&[f, one, one, f, affine(0.0, 0.0)]);
        let r = solve_wardrop(&net, &unit(), &cfg).unwrap();
        assert!((r.flows[4] - 1.0).abs() < 1e-4);
        assert!((r.od_costs[0] - 2.0).abs() < 1e-4);
    }

    #[test]
    fn gap_equals_path_excess() {
        // Σ_p x_p (G_p − T_w) equals the reported gap for the tracked path flows.
        let f = affine(0.0, 1.0);
        let one = affine(1.0, 0.0);
        let net = braess(&[f, one, one, f, affine(0.2, 0.5)]);
        let cfg = SolveConfig {
            max_iter: 7,
            ..SolveConfig::default()
        };
        let r = solve_wardrop(&net, &unit(), &cfg).unwrap();
        let excess: f64 = r.path_flows.pairs[0]
            .iter()
            .map(|(p, x)| x * (p.cost(&r.times) - r.od_costs[0]))
            .sum();
        assert!((excess - r.gap).abs() < 1e-12);
        let lf = r.path_flows.link_flows(&net);
        assert!(lf.iter().zip(&r.flows).all(|(a, b)| (a - b).abs() < 1e-12));
        let min_used = r.path_flows.pairs[0]
            .iter()
            .map(|(_, x)| *x)
            .filter(|x| *x > FLOW_EPS)
            .fold(f64::INFINITY, f64::min);
        assert!(r.wardrop_residual * min_used <= r.gap + 1e-12);
        assert_eq!(wardrop_residual(&net, &r.path_flows).unwrap(), r.wardrop_residual);
    }

    #[test]
    fn weak_duality_along_iterates() {
        let net = braess(&[
            affine(0.5, 1.0),
            affine(1.0, 0.2),
            affine(1.0, 0.3),
            affine(0.1, 2.0),
            affine(0.3, 0.1),
        ]);
        let d = DemandMatrix::scalar(vec![3.0]).unwrap();
        let r = solve_wardrop(&net, &d, &SolveConfig::default().with_tol(1e-10)).unwrap();
        assert!(r.converged);
        for rec in &r.history {
            assert!(rec.dual_value <= rec.beckmann + 1e-10);
        }
    }

    #[test]
    fn plain_frank_wolfe_agrees_with_equilibration() {
        let net = braess(&[
            affine(0.0, 1.0),
            affine(1.0, 0.0),
            affine(1.0, 0.0),
            affine(0.0, 1.0),
            affine(0.2, 0.5),
        ]);
        let d = DemandMatrix::scalar(vec![1.5]).unwrap();
        let fw = SolveConfig {
            method: Method::FrankWolfe,
            tol: 1e-6,
            ..SolveConfig::default()
        };
        let a = solve_wardrop(&net, &d, &fw).unwrap();
        let b = solve_wardrop(&net, &d, &SolveConfig::default().with_tol(1e-12)).unwrap();
        assert!(a.converged && b.converged);
        for e in 0..5 {
            assert!((a.flows[e] - b.flows[e]).abs() < 1e-2);
        }
        assert!((a.beckmann - b.beckmann).abs() < 1e-6);
    }

    #[test]
    fn fixed_step_also_converges() {
        let net = crate::network::fixtures::two_links(affine(1.0, 1.0), affine(0.5, 2.0));
        let d = DemandMatrix::scalar(vec![2.0]).unwrap();
        let cfg = SolveConfig {
            method: Method::FrankWolfe,
            line_search: LineSearch::Fixed,
            tol: 1e-4,
            ..SolveConfig::default()
        };
        let r = solve_wardrop(&net, &d, &cfg).unwrap();
        assert!(r.converged);
        // τ1 = τ2: 1 + f1 = 0.5 + 2(2 − f1) → f1 = 7/6
        assert!((r.flows[0] - 7.0 / 6.0).abs() < 1e-2);
    }

    #[test]
    fn hard_caps_need_mu() {
        let cap = CostFunction::HardCap {
            free_flow: 1.0,
            capacity: 1.0,
        };
        let net = two_links(cap, affine(2.0, 0.0));
        let d = DemandMatrix::scalar(vec![2.0]).unwrap();
        assert_eq!(solve_wardrop(&net, &d, &SolveConfig::default()).unwrap_err(), Error::HardCapEdge(0));
        let cfg = SolveConfig {
            mu: Some(0.01),
            smoothing_rho: 1.0,
            ..SolveConfig::default()
        };
        let r = solve_wardrop(&net, &d, &cfg).unwrap();
        assert!((r.flows[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn monotone_times_on_parallel_links() {
        let net = two_links(affine(1.0, 1.0), affine(0.5, 3.0));
        let cfg = SolveConfig::default().with_tol(1e-10);
        let mut prev: Option<Vec<f64>> = None;
        for k in 0..6 {
            let d = DemandMatrix::scalar(vec![0.5 * k as f64]).unwrap();
            let r = solve_wardrop(&net, &d, &cfg).unwrap();
            if let Some(p) = prev {
                assert!(r.times.iter().zip(&p).all(|(a, b)| *a >= b - 1e-6));
            }
            prev = Some(r.times);
        }
    }

    #[test]
    fn empty_demand_is_trivial() {
        let net = crate::network::fixtures::pigou();
        let d = DemandMatrix::scalar(vec![0.0]).unwrap();
        let r = solve_wardrop(&net, &d, &SolveConfig::default()).unwrap();
        assert_eq!(r.flows, vec![0.0, 0.0]);
        assert_eq!(r.iterations, 0);
        assert!(r.converged);
    }
}
