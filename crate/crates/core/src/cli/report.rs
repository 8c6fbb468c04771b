//! Solution blocks and the residuals recomputed from them.
//!
//! Every solve command builds its residual block by calling the same
//! function `verify` uses, so a report re-verified against its own solution
//! block reproduces its residuals exactly.

use serde::{Deserialize, Serialize};

use super::instance::InputError;
use crate::assignment::{
    beckmann, dual_value, logit_fixed_point_residual, lp_certificate, stochastic_objective, wardrop_residual, DemandMatrix, LpCertificate,
    PathFlows, PathSet,
};
use crate::distribution::{potential_certificate, ConstrainedProblem, DistributionInstance, PotentialCertificate};
use crate::fullmodel::{FullCertificate, FullInstance, FullProblem};
use crate::market::{MarketCandidate, MarketConfig, MarketInstance, MarketProblem, Regrets, WalrasResiduals};
use crate::network::{EdgeVector, Network, Path};
use crate::Error;

type Input<T> = std::result::Result<T, InputError>;

fn input(path: &str) -> impl Fn(Error) -> InputError + '_ {
    move |e| InputError::new(path, e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathFlow {
    /// Edge indices in travel order.
    pub edges: Vec<usize>,
    pub flow: f64,
}

pub fn path_flows_out(pf: &PathFlows) -> Vec<Vec<PathFlow>> {
    pf.pairs
        .iter()
        .map(|pair| {
            pair.iter()
                .map(|(p, x)| PathFlow {
                    edges: p.edges.clone(),
                    flow: *x,
                })
                .collect()
        })
        .collect()
}

/// Checks claimed path flows against the network and its od pairs.
fn path_flows_in(net: &Network, given: &[Vec<PathFlow>], field: &str) -> Input<PathFlows> {
    if given.len() != net.od_pairs().len() {
        return Err(InputError::new(
            field,
            format!("expected {} od pairs, got {}", net.od_pairs().len(), given.len()),
        ));
    }
    let mut pairs = Vec::with_capacity(given.len());
    for (w, (list, &(o, d))) in given.iter().zip(net.od_pairs()).enumerate() {
        let mut out = Vec::with_capacity(list.len());
        for (k, pf) in list.iter().enumerate() {
            let at = format!("{field}[{w}][{k}]");
            if !(pf.flow.is_finite() && pf.flow >= 0.0) {
                return Err(InputError::new(
                    format!("{at}.flow"),
                    format!("must be finite and >= 0, got {}", pf.flow),
                ));
            }
            let mut v = o;
            for &e in &pf.edges {
                let edge = net
                    .edges()
                    .get(e)
                    .ok_or_else(|| InputError::new(format!("{at}.edges"), format!("no edge {e}")))?;
                if edge.tail != v {
                    return Err(InputError::new(
                        format!("{at}.edges"),
                        format!("edge {e} does not continue the path"),
                    ));
                }
                v = edge.head;
            }
            if v != d || pf.edges.is_empty() {
                return Err(InputError::new(format!("{at}.edges"), "path does not join its od pair"));
            }
            out.push((Path { edges: pf.edges.clone() }, pf.flow));
        }
        pairs.push(out);
    }
    Ok(PathFlows { pairs })
}

/// Splits link flows into paths for a single loaded od pair, always
/// following the first edge (in file order) that still carries flow.
fn decompose(net: &Network, demands: &DemandMatrix, flows: &[f64]) -> Input<PathFlows> {
    let totals = demands.totals();
    let active: Vec<usize> = (0..totals.len()).filter(|&w| totals[w] > 0.0).collect();
    let mut pairs = vec![Vec::new(); totals.len()];
    let Some(&w) = active.first() else {
        return Ok(PathFlows { pairs });
    };
    if active.len() > 1 {
        return Err(InputError::new(
            "solution.path_flows",
            "path flows are required when more than one od pair carries demand",
        ));
    }
    let (o, d) = net.od_pairs()[w];
    let mut rest = flows.to_vec();
    let eps = 1e-12 * totals[w].max(1.0);
    let mut sent = 0.0;
    while totals[w] - sent > eps {
        let mut v = o;
        let mut edges = Vec::new();
        let mut seen = vec![false; net.node_count()];
        seen[o] = true;
        while v != d {
            let Some(&e) = net.out_edges(v).iter().find(|&&e| rest[e] > eps && !seen[net.edges()[e].head]) else {
                break;
            };
            edges.push(e);
            v = net.edges()[e].head;
            seen[v] = true;
        }
        if v != d {
            break;
        }
        let push = edges.iter().map(|&e| rest[e]).fold(totals[w] - sent, f64::min);
        for &e in &edges {
            rest[e] -= push;
        }
        sent += push;
        pairs[w].push((Path { edges }, push));
    }
    Ok(PathFlows { pairs })
}

fn demand_residual(pf: &PathFlows, demands: &DemandMatrix) -> f64 {
    demands
        .totals()
        .iter()
        .enumerate()
        .map(|(w, d)| (pf.demand(w) - d).abs())
        .fold(0.0, f64::max)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn edge_vector(v: &[f64], net: &Network, field: &str) -> Input<()> {
    if v.len() != net.edge_count() {
        return Err(InputError::new(
            field,
            format!("expected {} entries, got {}", net.edge_count(), v.len()),
        ));
    }
    if let Some((k, x)) = v.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x >= 0.0)) {
        return Err(InputError::new(
            format!("{field}[{k}]"),
            format!("must be finite and >= 0, got {x}"),
        ));
    }
    Ok(())
}

// --- assignment -----------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignSolution {
    pub flows: EdgeVector,
    #[serde(default)]
    pub path_flows: Option<Vec<Vec<PathFlow>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignResiduals {
    pub beckmann: f64,
    /// Dual value at the times `τ(f)`.
    pub dual_value: f64,
    pub gap: f64,
    pub wardrop: f64,
    /// Largest `|Σ_p x_p − d_w|`.
    pub demand: f64,
    /// Largest gap between the link flows and the loaded path flows.
    pub consistency: f64,
}

impl AssignResiduals {
    pub fn worst(&self) -> f64 {
        self.gap.max(self.demand).max(self.consistency)
    }
}

pub fn verify_assign(net: &Network, demands: &DemandMatrix, sol: &AssignSolution) -> Input<AssignResiduals> {
    edge_vector(&sol.flows, net, "solution.flows")?;
    let pf = match &sol.path_flows {
        Some(p) => path_flows_in(net, p, "solution.path_flows")?,
        None => decompose(net, demands, &sol.flows)?,
    };
    let beckmann = beckmann(net, &sol.flows).map_err(input("network"))?;
    let times = net.times_at(&sol.flows);
    let dual_value = dual_value(net, demands, &times).map_err(input("network"))?;
    Ok(AssignResiduals {
        beckmann,
        dual_value,
        gap: beckmann - dual_value,
        wardrop: wardrop_residual(net, &pf).map_err(input("solution.path_flows"))?,
        demand: demand_residual(&pf, demands),
        consistency: max_diff(&pf.link_flows(net), &sol.flows),
    })
}

// --- stochastic assignment --------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticSolution {
    pub path_flows: Vec<Vec<PathFlow>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticResiduals {
    /// Entropy-regularised Beckmann value.
    pub objective: f64,
    pub fixed_point: f64,
    pub demand: f64,
}

impl StochasticResiduals {
    pub fn worst(&self) -> f64 {
        self.fixed_point.max(self.demand)
    }
}

pub fn verify_stochastic(
    net: &Network,
    demands: &DemandMatrix,
    sol: &StochasticSolution,
    gamma_tilde: f64,
    budget: usize,
) -> Input<StochasticResiduals> {
    let pf = path_flows_in(net, &sol.path_flows, "solution.path_flows")?;
    let set = PathSet::enumerate(net, demands, budget).map_err(input("network"))?;
    let mut x: Vec<Vec<f64>> = set.paths.iter().map(|ps| vec![0.0; ps.len()]).collect();
    for (w, pair) in pf.pairs.iter().enumerate() {
        for (k, (p, v)) in pair.iter().enumerate() {
            let Some(i) = set.paths[w].iter().position(|q| q == p) else {
                if *v > 0.0 {
                    return Err(InputError::new(
                        format!("solution.path_flows[{w}][{k}]"),
                        "flow on a path outside the enumerated simple paths",
                    ));
                }
                continue;
            };
            x[w][i] += v;
        }
    }
    Ok(StochasticResiduals {
        objective: stochastic_objective(net, &set, &x, gamma_tilde),
        fixed_point: logit_fixed_point_residual(net, &set, &x, gamma_tilde),
        demand: demand_residual(&pf, demands),
    })
}

// --- lp limit ----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LpSolution {
    pub flows: EdgeVector,
    pub times: EdgeVector,
}

pub fn lp_worst(c: &LpCertificate) -> f64 {
    c.gap
        .abs()
        .max(c.capacity_violation)
        .max(c.conservation_violation)
        .max(c.time_violation)
}

pub fn verify_lp(net: &Network, demands: &DemandMatrix, sol: &LpSolution) -> Input<LpCertificate> {
    edge_vector(&sol.flows, net, "solution.flows")?;
    if sol.times.len() != net.edge_count() || sol.times.iter().any(|t| !t.is_finite()) {
        return Err(InputError::new(
            "solution.times",
            format!("expected {} finite entries", net.edge_count()),
        ));
    }
    lp_certificate(net, demands, &sol.flows, &sol.times).map_err(input("network"))
}

// --- distribution ------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSolution {
    /// Sources by sinks.
    pub d: Vec<Vec<f64>>,
    pub d0: f64,
}

pub fn potential_worst(c: &PotentialCertificate) -> f64 {
    c.logit_residual.unwrap_or(c.equilibrium_residual).max(c.mass_residual)
}

fn matrix(d: &[Vec<f64>], rows: usize, cols: usize, field: &str) -> Input<Vec<f64>> {
    if d.len() != rows || d.iter().any(|r| r.len() != cols) {
        return Err(InputError::new(field, format!("must be {rows} x {cols}")));
    }
    if let Some(v) = d.iter().flatten().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(InputError::new(field, format!("entries must be finite and >= 0, got {v}")));
    }
    Ok(d.iter().flatten().copied().collect())
}

pub fn verify_potential(inst: &DistributionInstance, sol: &PotentialSolution, gamma: Option<f64>) -> Input<PotentialCertificate> {
    let d = matrix(&sol.d, inst.sources.len(), inst.sinks.len(), "solution.d")?;
    potential_certificate(inst, &d, sol.d0, gamma).map_err(input("solution"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstrainedSolution {
    pub d: Vec<Vec<f64>>,
    pub lambda_l: Vec<f64>,
    pub lambda_w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedResiduals {
    /// `Φ(d) + γ Σ d ln(d/N)`.
    pub objective: f64,
    pub margins: f64,
    /// Margins together with the distance from the entropic response to
    /// the reduced costs.
    pub stationarity: f64,
}

pub fn verify_constrained(inst: &DistributionInstance, sol: &ConstrainedSolution, inner_tol: f64) -> Input<ConstrainedResiduals> {
    let d = matrix(&sol.d, inst.sources.len(), inst.sinks.len(), "solution.d")?;
    if sol.lambda_l.len() != inst.sources.len() || sol.lambda_w.len() != inst.sinks.len() {
        return Err(InputError::new(
            "solution.lambda_l",
            "one price per source and per sink is required",
        ));
    }
    let p = ConstrainedProblem::new(inst, inner_tol).map_err(input("distribution.mode"))?;
    let z = vec![d, sol.lambda_l.clone(), sol.lambda_w.clone()];
    Ok(ConstrainedResiduals {
        objective: p.objective(&z[0]).map_err(input("solution"))?,
        margins: p.margin_residual(&z[0]),
        stationarity: p.residual(&z).map_err(input("solution"))?,
    })
}

// --- market and full model -----------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSolution {
    /// Node pairs behind the rows of `d` (informational).
    #[serde(default)]
    pub pairs: Vec<(String, String)>,
    pub d: Vec<Vec<f64>>,
    pub l: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub w: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda_l: Vec<Vec<f64>>,
    pub lambda_w: Vec<Vec<f64>>,
}

impl MarketSolution {
    fn candidate(&self) -> MarketCandidate {
        MarketCandidate {
            d: self.d.clone(),
            l: self.l.clone(),
            w: self.w.clone(),
            y: self.y.clone(),
            lambda_l: self.lambda_l.clone(),
            lambda_w: self.lambda_w.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketResiduals {
    pub walras: WalrasResiduals,
    pub regrets: Regrets,
}

impl MarketResiduals {
    pub fn worst(&self) -> f64 {
        self.walras.max().max(self.regrets.max())
    }
}

pub fn verify_market(inst: &MarketInstance, sol: &MarketSolution, cfg: &MarketConfig) -> Input<MarketResiduals> {
    let problem = MarketProblem::new(inst, &cfg.assignment).map_err(input("market"))?;
    let (walras, regrets) = problem
        .certificate(&sol.candidate(), &sol.alpha, &sol.beta)
        .map_err(input("solution"))?;
    Ok(MarketResiduals { walras, regrets })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FullSolution {
    pub market: MarketSolution,
    pub t: EdgeVector,
    pub f: EdgeVector,
    pub path_flows: Vec<Vec<PathFlow>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullResiduals {
    pub walras: WalrasResiduals,
    pub regrets: Regrets,
    pub time_regret: f64,
    pub cost_mismatch: f64,
    pub time_violation: f64,
    /// Wardrop residual of the path flows for the pair flows of `d`.
    pub wardrop: f64,
    pub demand: f64,
    pub consistency: f64,
}

impl FullResiduals {
    pub fn worst(&self) -> f64 {
        self.walras
            .max()
            .max(self.regrets.max())
            .max(self.time_regret)
            .max(self.cost_mismatch)
            .max(self.time_violation)
            .max(self.wardrop)
            .max(self.demand)
            .max(self.consistency)
    }
}

pub fn verify_full(inst: &FullInstance, sol: &FullSolution, cfg: &MarketConfig) -> Input<FullResiduals> {
    let problem = FullProblem::new(inst, cfg).map_err(input("market"))?;
    let FullCertificate {
        walras,
        regrets,
        time_regret,
        cost_mismatch,
        time_violation,
    } = problem
        .certificate(&sol.market.candidate(), &sol.market.alpha, &sol.market.beta, &sol.t)
        .map_err(input("solution"))?;
    let net = inst.network();
    edge_vector(&sol.f, net, "solution.f")?;
    let pf = path_flows_in(net, &sol.path_flows, "solution.path_flows")?;
    let totals: Vec<f64> = sol.market.d.iter().map(|r| r.iter().sum()).collect();
    let demands = DemandMatrix::scalar(totals).map_err(input("solution.market.d"))?;
    let wardrop = wardrop_residual(net, &pf).map_err(input("solution.path_flows"))?;
    Ok(FullResiduals {
        walras,
        regrets,
        time_regret,
        cost_mismatch,
        time_violation,
        wardrop,
        demand: demand_residual(&pf, &demands),
        consistency: max_diff(&pf.link_flows(net), &sol.f),
    })
}
