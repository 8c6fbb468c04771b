//! Directed networks with per-edge cost functions and shortest paths.

mod cost;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

pub use cost::{edge_sigma, edge_sigma_conjugate, edge_tau, CostFunction};

use crate::{Error, Result};

/// One value per edge: flows, times or capacities.
pub type EdgeVector = Vec<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
    pub cost: CostFunction,
}

impl Edge {
    pub fn new(tail: usize, head: usize, cost: CostFunction) -> Self {
        Edge { tail, head, cost }
    }
}

/// Simple path given as an ordered list of edge indices.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Path {
    pub edges: Vec<usize>,
}

impl Path {
    pub fn cost(&self, times: &[f64]) -> f64 {
        self.edges.iter().map(|&e| times[e]).sum()
    }

    pub fn contains(&self, edge: usize) -> bool {
        self.edges.contains(&edge)
    }
}

/// Graph with edge costs and the list of origin-destination pairs.
///
/// Edges are identified by their position, so parallel edges are allowed.
#[derive(Debug, Clone)]
pub struct Network {
    names: Vec<String>,
    edges: Vec<Edge>,
    od_pairs: Vec<(usize, usize)>,
    out_edges: Vec<Vec<usize>>,
}

impl Network {
    pub fn new(names: Vec<String>, edges: Vec<Edge>, od_pairs: Vec<(usize, usize)>) -> Result<Self> {
        let n = names.len();
        let mut sorted = names.clone();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidNetwork(format!("duplicate node id {:?}", w[0])));
        }
        let mut out_edges = vec![Vec::new(); n];
        for (k, e) in edges.iter().enumerate() {
            if e.tail >= n || e.head >= n {
                return Err(Error::InvalidNetwork(format!("edge {k} references a missing node")));
            }
            if e.tail == e.head {
                return Err(Error::InvalidNetwork(format!("edge {k} is a self-loop")));
            }
            e.cost.validate().map_err(|err| Error::InvalidNetwork(format!("edge {k}: {err}")))?;
            out_edges[e.tail].push(k);
        }
        let net = Network {
            names,
            edges,
            od_pairs,
            out_edges,
        };
        for &(o, d) in &net.od_pairs {
            if o >= n || d >= n {
                return Err(Error::InvalidNetwork("od pair references a missing node".into()));
            }
            if !net.reachable(o)[d] {
                return Err(net.disconnected(o, d));
            }
        }
        Ok(net)
    }

    /// Network whose nodes are named by their index.
    pub fn anonymous(node_count: usize, edges: Vec<Edge>, od_pairs: Vec<(usize, usize)>) -> Result<Self> {
        Self::new((0..node_count).map(|i| i.to_string()).collect(), edges, od_pairs)
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn od_pairs(&self) -> &[(usize, usize)] {
        &self.od_pairs
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn node_name(&self, v: usize) -> &str {
        &self.names[v]
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn out_edges(&self, v: usize) -> &[usize] {
        &self.out_edges[v]
    }

    /// Distinct origins of the od pairs, sorted.
    pub fn sources(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.od_pairs.iter().map(|p| p.0).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Distinct destinations of the od pairs, sorted.
    pub fn sinks(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.od_pairs.iter().map(|p| p.1).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn has_hard_caps(&self) -> bool {
        self.edges.iter().any(|e| e.cost.is_hard_cap())
    }

    pub fn free_flow_times(&self) -> EdgeVector {
        self.edges.iter().map(|e| e.cost.free_flow_time()).collect()
    }

    /// `τ_e(f_e)` for every edge.
    pub fn times_at(&self, flows: &[f64]) -> EdgeVector {
        self.edges.iter().zip(flows).map(|(e, &f)| e.cost.tau(f)).collect()
    }

    /// Same topology and od pairs with new cost functions.
    pub fn with_costs(&self, costs: &[CostFunction]) -> Result<Self> {
        assert_eq!(costs.len(), self.edges.len());
        let edges = self.edges.iter().zip(costs).map(|(e, &c)| Edge::new(e.tail, e.head, c)).collect();
        Network::new(self.names.clone(), edges, self.od_pairs.clone())
    }

    /// Same graph with a different list of od pairs.
    pub fn with_od_pairs(&self, od_pairs: Vec<(usize, usize)>) -> Result<Self> {
        Network::new(self.names.clone(), self.edges.clone(), od_pairs)
    }

    pub(crate) fn disconnected(&self, o: usize, d: usize) -> Error {
        Error::Disconnected {
            origin: self.names[o].clone(),
            destination: self.names[d].clone(),
        }
    }

    /// Nodes reachable from `origin` along directed edges.
    pub fn reachable(&self, origin: usize) -> Vec<bool> {
        let mut seen = vec![false; self.node_count()];
        let mut queue = VecDeque::from([origin]);
        seen[origin] = true;
        while let Some(u) = queue.pop_front() {
            for &e in &self.out_edges[u] {
                let v = self.edges[e].head;
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }
}

/// Distances and predecessor edges from a single origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortestPathTree {
    pub origin: usize,
    /// `f64::INFINITY` marks unreachable nodes.
    pub dist: Vec<f64>,
    pub pred: Vec<Option<usize>>,
}

impl ShortestPathTree {
    pub fn is_reachable(&self, v: usize) -> bool {
        self.dist[v].is_finite()
    }

    pub fn path_to(&self, net: &Network, v: usize) -> Option<Path> {
        if !self.is_reachable(v) {
            return None;
        }
        let mut edges = Vec::new();
        let mut cur = v;
        while let Some(e) = self.pred[cur] {
            edges.push(e);
            cur = net.edges[e].tail;
        }
        edges.reverse();
        Some(Path { edges })
    }
}

#[derive(Copy, Clone, PartialEq)]
struct HeapItem {
    dist: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub(crate) fn check_times(times: &[f64]) -> Result<()> {
    for (index, &value) in times.iter().enumerate() {
        if value.is_nan() || value < 0.0 {
            return Err(Error::Negative {
                what: "edge time",
                index,
                value,
            });
        }
    }
    Ok(())
}

/// Dijkstra from `origin` under edge weights `times`.
///
/// Among equally short predecessors the smallest edge index wins.
pub fn shortest_path(net: &Network, times: &[f64], origin: usize) -> Result<ShortestPathTree> {
    if times.len() != net.edge_count() {
        return Err(Error::InvalidNetwork(format!(
            "expected {} edge times, got {}",
            net.edge_count(),
            times.len()
        )));
    }
    if origin >= net.node_count() {
        return Err(Error::InvalidNetwork(format!("origin {origin} is not a node")));
    }
    check_times(times)?;
    Ok(dijkstra(net, times, origin))
}

pub(crate) fn dijkstra(net: &Network, times: &[f64], origin: usize) -> ShortestPathTree {
    let n = net.node_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred: Vec<Option<usize>> = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[origin] = 0.0;
    heap.push(HeapItem { dist: 0.0, node: origin });
    while let Some(HeapItem { dist: du, node: u }) = heap.pop() {
        if done[u] || du > dist[u] {
            continue;
        }
        done[u] = true;
        for &e in &net.out_edges[u] {
            let v = net.edges[e].head;
            if done[v] {
                continue;
            }
            let nd = du + times[e];
            if nd < dist[v] {
                dist[v] = nd;
                pred[v] = Some(e);
                heap.push(HeapItem { dist: nd, node: v });
            } else if nd == dist[v] && pred[v].is_some_and(|p| e < p) {
                pred[v] = Some(e);
            }
        }
    }
    ShortestPathTree { origin, dist, pred }
}

/// All simple paths from `origin` to `destination`, in depth-first order
/// over edge indices. Fails once more than `budget` paths exist.
pub fn enumerate_paths(net: &Network, origin: usize, destination: usize, budget: usize) -> Result<Vec<Path>> {
    let mut out = Vec::new();
    let mut on_path = vec![false; net.node_count()];
    let mut stack: Vec<usize> = Vec::new();
    on_path[origin] = true;
    let over = dfs(net, origin, destination, budget, &mut on_path, &mut stack, &mut out);
    if over {
        return Err(Error::PathBudget {
            origin: net.names[origin].clone(),
            destination: net.names[destination].clone(),
            budget,
        });
    }
    Ok(out)
}

fn dfs(
    net: &Network,
    u: usize,
    destination: usize,
    budget: usize,
    on_path: &mut [bool],
    stack: &mut Vec<usize>,
    out: &mut Vec<Path>,
) -> bool {
    if u == destination {
        if out.len() == budget {
            return true;
        }
        out.push(Path { edges: stack.clone() });
        return false;
    }
    for &e in &net.out_edges[u] {
        let v = net.edges[e].head;
        if on_path[v] {
            continue;
        }
        on_path[v] = true;
        stack.push(e);
        let over = dfs(net, v, destination, budget, on_path, stack, out);
        stack.pop();
        on_path[v] = false;
        if over {
            return true;
        }
    }
    false
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn affine(a: f64, b: f64) -> CostFunction {
        CostFunction::Affine { a, b }
    }

    /// Two parallel edges s -> v.
    pub fn two_links(c1: CostFunction, c2: CostFunction) -> Network {
        Network::new(
            vec!["s".into(), "v".into()],
            vec![Edge::new(0, 1, c1), Edge::new(0, 1, c2)],
            vec![(0, 1)],
        )
        .unwrap()
    }

    pub fn pigou() -> Network {
        two_links(affine(1.0, 0.0), affine(0.0, 1.0))
    }

    /// s=0, a=1, b=2, t=3; edges s→a, a→t, s→b, b→t and optionally a→b.
    pub fn braess(costs: &[CostFunction]) -> Network {
        let ends = [(0, 1), (1, 3), (0, 2), (2, 3), (1, 2)];
        let edges = costs.iter().zip(ends).map(|(&c, (u, v))| Edge::new(u, v, c)).collect();
        Network::new(vec!["s".into(), "a".into(), "b".into(), "t".into()], edges, vec![(0, 3)]).unwrap()
    }
}
