//! Traffic assignment on a fixed demand matrix.
//!
//! * [`solve_wardrop`]: Frank–Wolfe on the Beckmann potential with the
//!   conjugate dual as a certificate.
//! * [`solve_stochastic`]: entropy-regularised (Logit) equilibrium over
//!   enumerated simple paths.
//! * [`lp_limit`]: the hard-capacity limit solved as a min-cost flow.

mod frank_wolfe;
mod lp_limit;
mod stochastic;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use frank_wolfe::solve_wardrop;
pub use lp_limit::{lp_certificate, lp_limit, LpCertificate, LpLimitResult};
pub use stochastic::{logit_fixed_point_residual, solve_stochastic, stochastic_objective, PathSet};

use crate::network::{check_times, dijkstra, EdgeVector, Network, Path};
use crate::{par, Error, Result};

/// Flow below which a path counts as unused.
pub const FLOW_EPS: f64 = 1e-9;

/// Per-od-pair demand, possibly split by commodity.
///
/// Entries are aligned with [`Network::od_pairs`].
#[derive(Debug, Clone, PartialEq)]
pub struct DemandMatrix {
    volumes: Vec<Vec<f64>>,
}

impl DemandMatrix {
    pub fn new(volumes: Vec<Vec<f64>>) -> Result<Self> {
        for (w, v) in volumes.iter().enumerate() {
            for &x in v {
                if !(x.is_finite() && x >= 0.0) {
                    return Err(Error::Negative {
                        what: "demand",
                        index: w,
                        value: x,
                    });
                }
            }
        }
        Ok(DemandMatrix { volumes })
    }

    /// One commodity per pair.
    pub fn scalar(volumes: Vec<f64>) -> Result<Self> {
        Self::new(volumes.into_iter().map(|v| vec![v]).collect())
    }

    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    pub fn volumes(&self) -> &[Vec<f64>] {
        &self.volumes
    }

    /// Commodity-blind demand per pair.
    pub fn totals(&self) -> Vec<f64> {
        self.volumes.iter().map(|v| v.iter().sum()).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.totals().iter().sum()
    }

    pub(crate) fn check_against(&self, net: &Network) -> Result<()> {
        if self.volumes.len() != net.od_pairs().len() {
            return Err(Error::InvalidInstance(format!(
                "{} demand entries for {} od pairs",
                self.volumes.len(),
                net.od_pairs().len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineSearch {
    /// Bisection on the directional derivative.
    Exact,
    /// The classical `2/(k+2)` schedule.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Link-based Frank–Wolfe.
    FrankWolfe,
    /// Frank–Wolfe start, then exact flow shifts from each used path onto
    /// the current shortest path of its pair, pair by pair.
    PathEquilibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    /// Target duality gap (or fixed-point residual for the stochastic solver).
    pub tol: f64,
    pub max_iter: usize,
    pub method: Method,
    /// Step rule of the Frank–Wolfe method.
    pub line_search: LineSearch,
    /// Smoothing scale: hard-capacity edges become BPR edges with power `1/μ`.
    pub mu: Option<f64>,
    /// `ρ` of the BPR edges that replace hard caps when `mu` is set.
    pub smoothing_rho: f64,
    /// Logit temperature of the stochastic equilibrium.
    pub gamma_tilde: f64,
    /// Maximum number of simple paths enumerated per od pair.
    pub path_budget: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            tol: 1e-6,
            max_iter: 200_000,
            method: Method::PathEquilibration,
            line_search: LineSearch::Exact,
            mu: None,
            smoothing_rho: 0.15,
            gamma_tilde: 1.0,
            path_budget: 64,
        }
    }
}

impl SolveConfig {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be > 0, got {}", self.tol)));
        }
        if !(self.gamma_tilde > 0.0) {
            return Err(Error::Config(format!("gamma_tilde must be > 0, got {}", self.gamma_tilde)));
        }
        if let Some(mu) = self.mu {
            if !(mu > 0.0 && mu <= 1.0) {
                return Err(Error::Config(format!("mu must lie in (0, 1], got {mu}")));
            }
        }
        Ok(())
    }
}

/// Path flows per od pair; each list sums to that pair's demand.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathFlows {
    pub pairs: Vec<Vec<(Path, f64)>>,
}

impl PathFlows {
    pub fn link_flows(&self, net: &Network) -> EdgeVector {
        let mut f = vec![0.0; net.edge_count()];
        for pair in &self.pairs {
            for (p, x) in pair {
                for &e in &p.edges {
                    f[e] += x;
                }
            }
        }
        f
    }

    pub fn demand(&self, w: usize) -> f64 {
        self.pairs[w].iter().map(|(_, x)| x).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    pub beckmann: f64,
    pub dual_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    pub flows: EdgeVector,
    pub times: EdgeVector,
    pub beckmann: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub wardrop_residual: f64,
    /// Shortest-path cost per od pair at the final times.
    pub od_costs: Vec<f64>,
    /// Path flows accumulated from the all-or-nothing directions.
    pub path_flows: PathFlows,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<GapRecord>,
}

fn check_flows(net: &Network, flows: &[f64]) -> Result<()> {
    if flows.len() != net.edge_count() {
        return Err(Error::InvalidInstance(format!(
            "expected {} edge flows, got {}",
            net.edge_count(),
            flows.len()
        )));
    }
    for (index, &value) in flows.iter().enumerate() {
        if value.is_nan() || value < 0.0 {
            return Err(Error::Negative {
                what: "flow",
                index,
                value,
            });
        }
    }
    Ok(())
}

pub(crate) fn reject_hard_caps(net: &Network) -> Result<()> {
    match net.edges().iter().position(|e| e.cost.is_hard_cap()) {
        Some(k) => Err(Error::HardCapEdge(k)),
        None => Ok(()),
    }
}

/// Beckmann potential `Σ_e σ_e(f_e)`.
pub fn beckmann(net: &Network, flows: &[f64]) -> Result<f64> {
    reject_hard_caps(net)?;
    check_flows(net, flows)?;
    Ok(beckmann_unchecked(net, flows))
}

pub(crate) fn beckmann_unchecked(net: &Network, flows: &[f64]) -> f64 {
    net.edges().iter().zip(flows).map(|(e, &f)| e.cost.sigma(f)).sum()
}

pub(crate) fn conjugate_sum(net: &Network, times: &[f64]) -> f64 {
    net.edges().iter().zip(times).map(|(e, &t)| e.cost.sigma_conjugate(t)).sum()
}

/// Dual objective `Σ_w d_w T_w(t) − Σ_e σ_e*(t_e)`; a lower bound on the
/// Beckmann value of every feasible flow.
pub fn dual_value(net: &Network, demands: &DemandMatrix, times: &[f64]) -> Result<f64> {
    demands.check_against(net)?;
    if times.len() != net.edge_count() {
        return Err(Error::InvalidInstance(format!(
            "expected {} edge times, got {}",
            net.edge_count(),
            times.len()
        )));
    }
    check_times(times)?;
    for (edge, (e, &t)) in net.edges().iter().zip(times).enumerate() {
        let free_flow = e.cost.free_flow_time();
        if t < free_flow {
            return Err(Error::BelowFreeFlow { edge, time: t, free_flow });
        }
    }
    let aon = all_or_nothing(net, &demands.totals(), times)?;
    Ok(aon.value - conjugate_sum(net, times))
}

/// All-or-nothing loading of `totals` onto shortest paths under `times`.
#[derive(Debug, Clone)]
pub(crate) struct AllOrNothing {
    pub flows: EdgeVector,
    pub od_costs: Vec<f64>,
    pub paths: Vec<Option<Path>>,
    /// `Σ_w d_w T_w(t)`.
    pub value: f64,
}

pub(crate) fn all_or_nothing(net: &Network, totals: &[f64], times: &[f64]) -> Result<AllOrNothing> {
    let origins = net.sources();
    let trees = par::map_slice(&origins, |&o| dijkstra(net, times, o));
    let mut flows = vec![0.0; net.edge_count()];
    let mut od_costs = Vec::with_capacity(totals.len());
    let mut paths = Vec::with_capacity(totals.len());
    let mut value = 0.0;
    for (w, &(o, d)) in net.od_pairs().iter().enumerate() {
        let tree = &trees[origins.binary_search(&o).expect("origin present")];
        let path = tree.path_to(net, d);
        let Some(p) = path.as_ref() else {
            return Err(net.disconnected(o, d));
        };
        let cost = tree.dist[d];
        od_costs.push(cost);
        if totals[w] > 0.0 {
            value += totals[w] * cost;
            for &e in &p.edges {
                flows[e] += totals[w];
            }
        }
        paths.push(path);
    }
    Ok(AllOrNothing {
        flows,
        od_costs,
        paths,
        value,
    })
}

/// Largest excess cost of a used path over the cheapest path of its pair.
pub fn wardrop_residual(net: &Network, path_flows: &PathFlows) -> Result<f64> {
    reject_hard_caps(net)?;
    if path_flows.pairs.len() != net.od_pairs().len() {
        return Err(Error::InvalidInstance(format!(
            "path flows for {} pairs, network has {}",
            path_flows.pairs.len(),
            net.od_pairs().len()
        )));
    }
    let flows = path_flows.link_flows(net);
    check_flows(net, &flows)?;
    let times = net.times_at(&flows);
    let aon = all_or_nothing(net, &vec![0.0; net.od_pairs().len()], &times)?;
    Ok(residual_at(&times, &aon.od_costs, path_flows))
}

pub(crate) fn residual_at(times: &[f64], od_costs: &[f64], path_flows: &PathFlows) -> f64 {
    let mut worst: f64 = 0.0;
    for (pair, &min_cost) in path_flows.pairs.iter().zip(od_costs) {
        for (p, x) in pair {
            if *x > FLOW_EPS {
                worst = worst.max(p.cost(times) - min_cost);
            }
        }
    }
    worst
}

/// Equilibrium costs `T_w(d)` and the optimal Beckmann value `Φ(d)`.
///
/// By Danskin's theorem `T(d)` is the gradient of `Φ`.
#[derive(Debug, Clone)]
pub struct CostMap {
    pub od_costs: Vec<f64>,
    pub potential: f64,
    pub assignment: AssignmentResult,
}

pub fn cost_map(net: &Network, demands: &DemandMatrix, cfg: &SolveConfig) -> Result<CostMap> {
    let assignment = solve_wardrop(net, demands, cfg)?;
    Ok(CostMap {
        od_costs: assignment.od_costs.clone(),
        potential: assignment.beckmann,
        assignment,
    })
}

pub(crate) fn path_flows_from_map(maps: Vec<BTreeMap<Path, f64>>) -> PathFlows {
    PathFlows {
        pairs: maps
            .into_iter()
            .map(|m| m.into_iter().filter(|(_, x)| *x > 0.0).collect())
            .collect(),
    }
}

/// Replaces hard-capacity edges by BPR edges with power `1/μ` and the given
/// `ρ`, the smooth family whose `μ → 0` limit is the capacity constraint.
pub fn smooth_hard_caps(net: &Network, mu: f64, rho: f64) -> Result<Network> {
    let costs: Vec<_> = net
        .edges()
        .iter()
        .map(|e| match e.cost {
            crate::network::CostFunction::HardCap { free_flow, capacity } => crate::network::CostFunction::Bpr {
                free_flow,
                capacity,
                rho,
                power: 1.0 / mu,
            },
            other => other,
        })
        .collect();
    net.with_costs(&costs)
}
