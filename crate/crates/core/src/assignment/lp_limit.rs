use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

use super::DemandMatrix;
use crate::network::{dijkstra, CostFunction, EdgeVector, Network};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LpLimitResult {
    pub flows: EdgeVector,
    /// Dual times: `t_e ≥ t̄_e`, strictly above only on saturated edges.
    pub times: EdgeVector,
    /// `Σ_e t̄_e f_e`.
    pub objective: f64,
    /// `Σ_w d_w T_w(t) − Σ_e f̄_e (t_e − t̄_e)`.
    pub dual_objective: f64,
    pub od_costs: Vec<f64>,
}

struct Arc {
    to: usize,
    cap: f64,
    cost: f64,
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Residual {
    arcs: Vec<Arc>,
    out: Vec<Vec<usize>>,
}

impl Residual {
    fn new(n: usize) -> Self {
        Residual {
            arcs: Vec::new(),
            out: vec![Vec::new(); n],
        }
    }

    fn add(&mut self, from: usize, to: usize, cap: f64, cost: f64) {
        self.out[from].push(self.arcs.len());
        self.arcs.push(Arc { to, cap, cost });
        self.out[to].push(self.arcs.len());
        self.arcs.push(Arc {
            to: from,
            cap: 0.0,
            cost: -cost,
        });
    }

    fn dijkstra(&self, source: usize, pot: &[f64]) -> (Vec<f64>, Vec<Option<usize>>) {
        let n = self.out.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![None; n];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Item(0.0, source));
        while let Some(Item(du, u)) = heap.pop() {
            if du > dist[u] {
                continue;
            }
            for &a in &self.out[u] {
                let arc = &self.arcs[a];
                if arc.cap <= CAP_EPS {
                    continue;
                }
                let reduced = (arc.cost + pot[u] - pot[arc.to]).max(0.0);
                let nd = du + reduced;
                if nd < dist[arc.to] {
                    dist[arc.to] = nd;
                    pred[arc.to] = Some(a);
                    heap.push(Item(nd, arc.to));
                }
            }
        }
        (dist, pred)
    }
}

const CAP_EPS: f64 = 1e-12;

fn capacity_of(cf: &CostFunction) -> Result<(f64, f64)> {
    match *cf {
        CostFunction::HardCap { free_flow, capacity } => Ok((free_flow, capacity)),
        CostFunction::Affine { a, b: 0.0 } => Ok((a, f64::INFINITY)),
        _ => Err(Error::InvalidNetwork("lp limit needs hard-cap or constant edges".into())),
    }
}

/// Hard-capacity limit of the Beckmann problem, solved exactly as a
/// min-cost flow by successive shortest paths with node potentials.
///
/// Od pairs must share a common origin or a common destination so the
/// aggregate flow is a single-commodity problem.
pub fn lp_limit(net: &Network, demands: &DemandMatrix) -> Result<LpLimitResult> {
    demands.check_against(net)?;
    let m = net.edge_count();
    let n = net.node_count();
    let caps: Vec<(f64, f64)> = net.edges().iter().map(|e| capacity_of(&e.cost)).collect::<Result<_>>()?;
    let totals = demands.totals();
    let active: Vec<usize> = (0..totals.len()).filter(|&w| totals[w] > 0.0).collect();
    let pairs = net.od_pairs();

    let sup = n;
    let mut g = Residual::new(n + 1);
    for (e, edge) in net.edges().iter().enumerate() {
        g.add(edge.tail, edge.head, caps[e].1, caps[e].0);
    }
    let common_origin = active.iter().all(|&w| pairs[w].0 == pairs[active[0]].0);
    let common_dest = active.iter().all(|&w| pairs[w].1 == pairs[active[0]].1);
    let (source, sink) = if active.is_empty() {
        (sup, sup)
    } else if common_origin {
        for &w in &active {
            g.add(pairs[w].1, sup, totals[w], 0.0);
        }
        (pairs[active[0]].0, sup)
    } else if common_dest {
        for &w in &active {
            g.add(sup, pairs[w].0, totals[w], 0.0);
        }
        (sup, pairs[active[0]].1)
    } else {
        return Err(Error::InvalidInstance(
            "lp limit needs od pairs with a common origin or a common destination".into(),
        ));
    };

    let demand: f64 = active.iter().map(|&w| totals[w]).sum();
    let mut pot = vec![0.0; n + 1];
    let mut sent = 0.0;
    let tol = 1e-12 * demand.max(1.0);
    while demand - sent > tol {
        let (dist, pred) = g.dijkstra(source, &pot);
        if !dist[sink].is_finite() {
            return Err(infeasible_cut(net, &g, &dist, demand));
        }
        for v in 0..=n {
            pot[v] += dist[v].min(dist[sink]);
        }
        let mut push = demand - sent;
        let mut v = sink;
        while let Some(a) = pred[v] {
            push = push.min(g.arcs[a].cap);
            v = g.arcs[a ^ 1].to;
        }
        let mut v = sink;
        while let Some(a) = pred[v] {
            g.arcs[a].cap -= push;
            g.arcs[a ^ 1].cap += push;
            v = g.arcs[a ^ 1].to;
        }
        sent += push;
    }

    let flows: EdgeVector = (0..m).map(|e| g.arcs[2 * e + 1].cap).collect();
    let times: EdgeVector = (0..m)
        .map(|e| {
            let edge = &net.edges()[e];
            let tb = caps[e].0;
            if caps[e].1.is_finite() && caps[e].1 - flows[e] <= 1e-9 * caps[e].1.max(1.0) {
                tb.max(pot[edge.head] - pot[edge.tail])
            } else {
                tb
            }
        })
        .collect();
    let objective: f64 = (0..m).map(|e| caps[e].0 * flows[e]).sum();
    let mut od_costs = vec![0.0; pairs.len()];
    for (w, &(o, d)) in pairs.iter().enumerate() {
        od_costs[w] = dijkstra(net, &times, o).dist[d];
    }
    let penalty: f64 = (0..m)
        .filter(|&e| caps[e].1.is_finite())
        .map(|e| caps[e].1 * (times[e] - caps[e].0))
        .sum();
    let dual_objective = active.iter().map(|&w| totals[w] * od_costs[w]).sum::<f64>() - penalty;
    Ok(LpLimitResult {
        flows,
        times,
        objective,
        dual_objective,
        od_costs,
    })
}

/// Residuals of a claimed hard-capacity solution: primal and dual values,
/// their gap, and the largest violations of capacities, node balances and
/// the dual bounds `t ≥ t̄` (equality on uncapacitated edges).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LpCertificate {
    pub objective: f64,
    pub dual_objective: f64,
    pub gap: f64,
    pub capacity_violation: f64,
    pub conservation_violation: f64,
    pub time_violation: f64,
}

pub fn lp_certificate(net: &Network, demands: &DemandMatrix, flows: &[f64], times: &[f64]) -> Result<LpCertificate> {
    demands.check_against(net)?;
    let m = net.edge_count();
    if flows.len() != m || times.len() != m {
        return Err(Error::InvalidInstance(format!("expected {m} edge flows and times")));
    }
    let caps: Vec<(f64, f64)> = net.edges().iter().map(|e| capacity_of(&e.cost)).collect::<Result<_>>()?;
    let totals = demands.totals();
    let mut balance = vec![0.0; net.node_count()];
    for (&(o, d), &v) in net.od_pairs().iter().zip(&totals) {
        balance[o] += v;
        balance[d] -= v;
    }
    let mut capacity_violation: f64 = 0.0;
    let mut time_violation: f64 = 0.0;
    for (e, edge) in net.edges().iter().enumerate() {
        balance[edge.tail] -= flows[e];
        balance[edge.head] += flows[e];
        let (tb, cap) = caps[e];
        capacity_violation = capacity_violation.max(flows[e] - cap).max(-flows[e]);
        time_violation = time_violation.max(tb - times[e]);
        if !cap.is_finite() {
            time_violation = time_violation.max(times[e] - tb);
        }
    }
    let objective: f64 = (0..m).map(|e| caps[e].0 * flows[e]).sum();
    let mut value = 0.0;
    for (w, &(o, d)) in net.od_pairs().iter().enumerate() {
        if totals[w] > 0.0 {
            value += totals[w] * dijkstra(net, times, o).dist[d];
        }
    }
    let penalty: f64 = (0..m)
        .filter(|&e| caps[e].1.is_finite())
        .map(|e| caps[e].1 * (times[e] - caps[e].0))
        .sum();
    let dual_objective = value - penalty;
    Ok(LpCertificate {
        objective,
        dual_objective,
        gap: objective - dual_objective,
        capacity_violation,
        conservation_violation: balance.iter().fold(0.0, |a, b| a.max(b.abs())),
        time_violation,
    })
}

fn infeasible_cut(net: &Network, g: &Residual, dist: &[f64], demand: f64) -> Error {
    let n = net.node_count();
    let reach: Vec<bool> = dist.iter().map(|d| d.is_finite()).collect();
    let mut capacity = 0.0;
    for u in 0..=n {
        if !reach[u] {
            continue;
        }
        for &a in g.out[u].iter().filter(|&&a| a % 2 == 0) {
            if !reach[g.arcs[a].to] {
                capacity += g.arcs[a].cap + g.arcs[a ^ 1].cap;
            }
        }
    }
    Error::InfeasibleCut {
        demand,
        capacity,
        nodes: (0..n).filter(|&v| reach[v]).map(|v| net.node_name(v).to_string()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Edge;

    fn cap(t: f64, c: f64) -> CostFunction {
        CostFunction::HardCap { free_flow: t, capacity: c }
    }

    fn parallel(a: CostFunction, b: CostFunction) -> Network {
        Network::anonymous(2, vec![Edge::new(0, 1, a), Edge::new(0, 1, b)], vec![(0, 1)]).unwrap()
    }

    fn d(v: f64) -> DemandMatrix {
        DemandMatrix::scalar(vec![v]).unwrap()
    }

    #[test]
    fn single_edge_under_capacity() {
        let net = Network::anonymous(2, vec![Edge::new(0, 1, cap(1.0, 5.0))], vec![(0, 1)]).unwrap();
        let r = lp_limit(&net, &d(3.0)).unwrap();
        assert_eq!(r.flows, vec![3.0]);
        assert!((r.objective - 3.0).abs() < 1e-12);
        assert_eq!(r.times, vec![1.0]);
    }

    #[test]
    fn both_edges_saturate() {
        let r = lp_limit(&parallel(cap(1.0, 1.0), cap(1.0, 1.0)), &d(2.0)).unwrap();
        assert_eq!(r.flows, vec![1.0, 1.0]);
        assert!((r.objective - 2.0).abs() < 1e-12);
    }

    #[test]
    fn overflow_to_the_slow_edge() {
        let r = lp_limit(&parallel(cap(1.0, 1.0), cap(2.0, 10.0)), &d(2.0)).unwrap();
        assert!((r.flows[0] - 1.0).abs() < 1e-12);
        assert!((r.flows[1] - 1.0).abs() < 1e-12);
        assert!((r.objective - 3.0).abs() < 1e-12);
        // the jam on the fast edge prices it up to the slow one
        assert!((r.times[0] - 2.0).abs() < 1e-12);
        assert_eq!(r.times[1], 2.0);
        assert!((r.dual_objective - r.objective).abs() < 1e-9);
    }

    #[test]
    fn strong_duality_on_a_small_grid() {
        // 0 -> {1,2} -> 3 with a cross link, two destinations from one origin
        let edges = vec![
            Edge::new(0, 1, cap(1.0, 2.0)),
            Edge::new(0, 2, cap(2.0, 3.0)),
            Edge::new(1, 2, cap(0.5, 1.0)),
            Edge::new(1, 3, cap(2.0, 1.5)),
            Edge::new(2, 3, cap(1.0, 2.0)),
        ];
        let net = Network::anonymous(4, edges, vec![(0, 3), (0, 2)]).unwrap();
        let r = lp_limit(&net, &DemandMatrix::scalar(vec![2.5, 1.0]).unwrap()).unwrap();
        assert!((r.dual_objective - r.objective).abs() < 1e-9);
        for (e, edge) in net.edges().iter().enumerate() {
            assert!(r.times[e] >= edge.cost.free_flow_time());
            assert!(
                r.flows[e]
                    <= 1e-12
                        + match edge.cost {
                            CostFunction::HardCap { capacity, .. } => capacity,
                            _ => f64::INFINITY,
                        }
            );
        }
    }

    #[test]
    fn common_destination_is_supported() {
        let edges = vec![
            Edge::new(0, 2, cap(1.0, 1.0)),
            Edge::new(1, 2, cap(1.0, 1.0)),
            Edge::new(0, 1, cap(1.0, 5.0)),
        ];
        let net = Network::anonymous(3, edges, vec![(0, 2), (1, 2)]).unwrap();
        let r = lp_limit(&net, &DemandMatrix::scalar(vec![1.5, 0.0]).unwrap()).unwrap();
        assert!((r.objective - 2.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_demand_names_a_cut() {
        let err = lp_limit(&parallel(cap(1.0, 1.0), cap(1.0, 1.0)), &d(3.0)).unwrap_err();
        match err {
            Error::InfeasibleCut { demand, capacity, nodes } => {
                assert_eq!(demand, 3.0);
                assert!((capacity - 2.0).abs() < 1e-12);
                assert_eq!(nodes, vec!["0".to_string()]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn smooth_edges_are_rejected() {
        let net = parallel(CostFunction::Affine { a: 1.0, b: 1.0 }, cap(1.0, 1.0));
        assert!(lp_limit(&net, &d(1.0)).is_err());
    }
}
