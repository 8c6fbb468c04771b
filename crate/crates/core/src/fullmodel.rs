//! The market with the transporter's costs priced by network dual times.
//!
//! The fixed or equilibrium transport costs of the market are replaced by a
//! max-block of edge times `t ≥ t̄`: for given pair flows `s`, maximizing
//! `Σ_p s_p T_p(t) − Σ_e σ_e*(t_e)` over `t` recovers the Beckmann value
//! `Φ(s)`, so the whole model is one convex-concave saddle problem.

use serde::Serialize;

use crate::assignment::{all_or_nothing, conjugate_sum, smooth_hard_caps, solve_wardrop, DemandMatrix, PathFlows};
use crate::distribution::Transport;
use crate::market::{
    productivity_check, walras_residuals, Economy, MarketCandidate, MarketConfig, MarketEquilibrium, MarketInstance, Regrets,
    WalrasResiduals,
};
use crate::network::{EdgeVector, Network};
use crate::saddle::{mirror_prox, BlockSpec, Domain, Geometry, Oracle, Point, SaddleProblem, Side};
use crate::{Error, Result};

/// Upper bound of each time relative to its free-flow value.
pub const TIME_CAP: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct FullInstance {
    pub market: MarketInstance,
    /// Network with the trading pairs as od pairs; hard caps already
    /// smoothed.
    network: Network,
}

impl FullInstance {
    /// `mu` smooths hard-capacity edges into steep BPR edges with the given
    /// `rho`; without it such edges are rejected.
    pub fn new(market: MarketInstance, mu: Option<f64>, rho: f64) -> Result<Self> {
        let Transport::Network(net) = &market.transport else {
            return Err(Error::InvalidInstance("the full model needs a network transport".into()));
        };
        let mut net = market.pair_network(net)?;
        if let Some(mu) = mu {
            if !(mu > 0.0 && mu <= 1.0) {
                return Err(Error::Config(format!("mu must lie in (0, 1], got {mu}")));
            }
            net = smooth_hard_caps(&net, mu, rho)?;
        }
        if let Some(k) = net.edges().iter().position(|e| e.cost.is_hard_cap()) {
            return Err(Error::HardCapEdge(k));
        }
        Ok(FullInstance { market, network: net })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FullEquilibrium {
    pub market: MarketEquilibrium,
    /// Edge times of the dual block.
    pub t: EdgeVector,
    /// Path flows of the Wardrop assignment of the recovered pair flows.
    #[serde(skip)]
    pub x: PathFlows,
    pub f: EdgeVector,
    pub wardrop_residual: f64,
    /// Largest `|T_p(t) − T_p(f)|`: shortest-path costs under the dual
    /// times against those of the recovered assignment.
    pub cost_mismatch: f64,
    /// `Φ(s) − (Σ s T(t) − Σ σ*(t))`: how far the times are from their
    /// best response to the pair flows.
    pub time_regret: f64,
    /// Some time sits at its artificial upper bound.
    pub cap_active: bool,
}

/// `min_s max_{λ^L, λ^W, y ≥ 0, t̄ ≤ t ≤ t_max}` of the market objective
/// with `Φ(s)` replaced by `Σ_p s_p T_p(t) − Σ_e σ_e*(t_e)`.
#[derive(Debug, Clone)]
pub struct FullProblem {
    economy: Economy,
    network: Network,
    blocks: Vec<BlockSpec>,
    assignment: crate::assignment::SolveConfig,
}

/// Residuals of a claimed full equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FullCertificate {
    pub walras: WalrasResiduals,
    pub regrets: Regrets,
    pub time_regret: f64,
    pub cost_mismatch: f64,
    /// Largest distance of a time from its box.
    pub time_violation: f64,
}

/// Index of the time block.
const T: usize = 4;

impl FullProblem {
    pub fn new(inst: &FullInstance, cfg: &MarketConfig) -> Result<Self> {
        let economy = Economy::new(&inst.market)?;
        let mut blocks = economy.blocks();
        let lower = inst.network.free_flow_times();
        let upper = inst
            .network
            .edges()
            .iter()
            .zip(&lower)
            .map(|(e, &tb)| e.cost.max_time().min(TIME_CAP * tb.max(1.0)))
            .collect();
        blocks.push(BlockSpec::new(
            Side::Max,
            lower.len(),
            Domain::Box { lower, upper },
            Geometry::Euclidean,
        ));
        Ok(FullProblem {
            economy,
            network: inst.network.clone(),
            blocks,
            assignment: cfg.assignment.clone(),
        })
    }

    /// Shortest-path cost per pair under `t`, plus the all-or-nothing
    /// loading of `s` and `Σ s·T(t)`.
    fn load(&self, s: &[f64], t: &[f64]) -> Result<(Vec<f64>, EdgeVector, f64)> {
        let aon = all_or_nothing(&self.network, s, t)?;
        Ok((aon.od_costs, aon.flows, aon.value))
    }

    /// Regret of the time block, `Φ(s) − (Σ s T(t) − Σ σ*(t))`, and the
    /// largest gap between `T(t)` and the equilibrium costs at `s`.
    fn time_residuals(&self, s: &[f64], t: &[f64]) -> Result<(f64, f64)> {
        let (costs, _, value) = self.load(s, t)?;
        let eq = solve_wardrop(&self.network, &DemandMatrix::scalar(s.to_vec())?, &self.assignment)?;
        let regret = (eq.beckmann - (value - conjugate_sum(&self.network, t))).max(0.0);
        let mismatch = costs.iter().zip(&eq.od_costs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        Ok((regret, mismatch))
    }
}

impl FullProblem {
    pub fn certificate(&self, cand: &MarketCandidate, alpha: &[f64], beta: &[f64], t: &[f64]) -> Result<FullCertificate> {
        let (mut z, aux) = self.economy.point(cand, alpha, beta)?;
        let Domain::Box { lower, upper } = &self.blocks[T].domain else {
            unreachable!("time block is a box")
        };
        if t.len() != lower.len() || t.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInstance(format!("expected {} finite edge times", lower.len())));
        }
        let time_violation = t
            .iter()
            .zip(lower.iter().zip(upper))
            .map(|(v, (l, u))| (l - v).max(v - u).max(0.0))
            .fold(0.0, f64::max);
        z.push(t.to_vec());
        let (costs, _, _) = self.load(&z[0], t)?;
        let walras = walras_residuals(&self.economy.inst, cand)?;
        let regrets = self.economy.regrets(&z, &aux, &costs);
        let (time_regret, cost_mismatch) = self.time_residuals(&z[0], t)?;
        Ok(FullCertificate {
            walras,
            regrets,
            time_regret,
            cost_mismatch,
            time_violation,
        })
    }
}

impl SaddleProblem for FullProblem {
    fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    fn operator(&self, z: &Point) -> Result<Oracle> {
        let r = self.economy.respond(z);
        let (costs, loaded, _) = self.load(&z[0], &z[T])?;
        let gs = r.margins.iter().zip(&costs).map(|(a, b)| a + b).collect();
        let (gl, gw, gy) = self.economy.price_operator(&r, &z[0]);
        let gt = self
            .network
            .edges()
            .iter()
            .zip(&z[T])
            .zip(&loaded)
            .map(|((e, &t), &f)| e.cost.flow_at(t).min(f64::MAX) - f)
            .collect();
        Ok(Oracle {
            grad: vec![gs, gl, gw, gy, gt],
            aux: self.economy.aux(&r, &z[0]),
        })
    }

    fn value(&self, z: &Point) -> Option<f64> {
        let r = self.economy.respond(z);
        let (_, _, value) = self.load(&z[0], &z[T]).ok()?;
        Some(self.economy.price_value(z, &r) + value - conjugate_sum(&self.network, &z[T]))
    }

    fn initial_point(&self) -> Point {
        let mut z: Point = self.blocks.iter().map(BlockSpec::default_point).collect();
        z[0] = vec![1.0; self.economy.pairs.len()];
        z[T] = self.network.free_flow_times();
        z
    }

    fn stop_metric(&self, z: &Point, aux: &[f64]) -> Option<f64> {
        let (costs, _, _) = self.load(&z[0], &z[T]).ok()?;
        let market = self.economy.metric(z, aux, &costs)?;
        let (regret, mismatch) = self.time_residuals(&z[0], &z[T]).ok()?;
        Some(market.max(regret).max(mismatch))
    }
}

/// Builds the saddle problem of the full model.
pub fn assemble_full(inst: &FullInstance, cfg: &MarketConfig) -> Result<FullProblem> {
    FullProblem::new(inst, cfg)
}

/// Full equilibrium: mirror-prox on the joint saddle, then a Wardrop
/// assignment of the recovered pair flows.
pub fn solve_full(inst: &FullInstance, cfg: &MarketConfig) -> Result<FullEquilibrium> {
    let prod = productivity_check(&inst.market, cfg.margin_eps)?;
    if !prod.ok && !cfg.force {
        return Err(Error::Unproductive(prod.violated.unwrap_or_default()));
    }
    let problem = assemble_full(inst, cfg)?;
    let (sol, _) = mirror_prox(&problem, &cfg.saddle)?;
    let (costs, _, _) = problem.load(&sol.z[0], &sol.z[T])?;
    let market = problem
        .economy
        .equilibrium(&sol.z, &sol.aux, &costs, sol.gap, sol.iterations, sol.converged, prod.ok)?;
    let eq = solve_wardrop(&problem.network, &DemandMatrix::scalar(market.pair_totals())?, &cfg.assignment)?;
    let cost_mismatch = costs.iter().zip(&eq.od_costs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let (time_regret, _) = problem.time_residuals(&sol.z[0], &sol.z[T])?;
    let cap_active = match &problem.blocks[T].domain {
        Domain::Box { upper, .. } => problem
            .network
            .edges()
            .iter()
            .zip(upper.iter().zip(&sol.z[T]))
            .any(|(e, (u, t))| *u < e.cost.max_time() && *t >= *u),
        _ => false,
    };
    Ok(FullEquilibrium {
        market,
        t: sol.z[T].clone(),
        x: eq.path_flows,
        f: eq.flows,
        wardrop_residual: eq.wardrop_residual,
        cost_mismatch,
        time_regret,
        cap_active,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::solve_market;
    use crate::market::toy::*;
    use crate::network::fixtures::affine;
    use crate::network::Edge;

    fn over(edges: Vec<Edge>, nodes: usize, income: f64) -> FullInstance {
        let net = Network::anonymous(nodes, edges, Vec::new()).unwrap();
        let inst = MarketInstance::new(
            vec![producer(10.0, 1.0)],
            vec![consumer(2.0, income)],
            Vec::new(),
            Transport::Network(net),
            1e-3,
        )
        .unwrap();
        FullInstance::new(inst, None, 0.15).unwrap()
    }

    fn single(a: f64, b: f64, income: f64) -> FullInstance {
        over(vec![Edge::new(0, 1, affine(a, b))], 2, income)
    }

    #[test]
    fn without_demand_times_stay_at_free_flow() {
        let inst = single(1.0, 1.0, 10.0);
        let p = assemble_full(&inst, &MarketConfig::default()).unwrap();
        let mut z = p.initial_point();
        z[0] = vec![0.0];
        let g = p.operator(&z).unwrap();
        assert_eq!(g.grad[T], vec![0.0]);
        z[T] = vec![2.0];
        assert!(p.operator(&z).unwrap().grad[T][0] > 0.0);
    }

    #[test]
    fn constant_edge_matches_fixed_cost_market() {
        let full = solve_full(&single(1.0, 0.0, 10.0), &MarketConfig::default()).unwrap();
        let fixed = solve_market(&market(10.0), &MarketConfig::default()).unwrap();
        assert!(full.market.converged);
        assert!((full.t[0] - 1.0).abs() < 1e-12);
        for (a, b) in [
            (full.market.d[0][0], fixed.d[0][0]),
            (full.market.lambda_l[0][0], fixed.lambda_l[0][0]),
            (full.market.lambda_w[0][0], fixed.lambda_w[0][0]),
        ] {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
        assert!(full.wardrop_residual <= 1e-4);
    }

    #[test]
    fn congestible_edge() {
        // Output is interior so λ^L = c = 1; the consumer buys W = 2,
        // so t = 1 + 2 and λ^W = λ^L + t = 4 (cost 8 within income 10).
        let r = solve_full(&single(1.0, 1.0, 10.0), &MarketConfig::default()).unwrap();
        assert!(r.market.converged);
        assert!((r.market.d[0][0] - 2.0).abs() < 1e-2);
        assert!((r.market.lambda_l[0][0] - 1.0).abs() < 1e-2);
        assert!((r.market.lambda_w[0][0] - 4.0).abs() < 1e-2);
        assert!((r.t[0] - 3.0).abs() < 1e-2);
        assert!(r.cost_mismatch <= 1e-3);
        assert!(r.market.walras.max() <= 1e-3);
    }

    #[test]
    fn budget_bound_consumer_on_a_congestible_edge() {
        // With income 5 the consumer can pay at most λ^W = 2.5, so the
        // edge carries d = λ^W − λ^L − 1 = 0.5 and participation is 1/4.
        let r = solve_full(&single(1.0, 1.0, 5.0), &MarketConfig::default()).unwrap();
        assert!((r.market.lambda_w[0][0] - 2.5).abs() < 1e-2);
        assert!((r.market.d[0][0] - 0.5).abs() < 1e-2);
        assert!((r.market.beta[0] - 0.25).abs() < 1e-2);
    }

    #[test]
    fn symmetric_routes_split_evenly() {
        let edges = vec![
            Edge::new(0, 2, affine(0.5, 1.0)),
            Edge::new(2, 1, affine(0.0, 0.0)),
            Edge::new(0, 3, affine(0.5, 1.0)),
            Edge::new(3, 1, affine(0.0, 0.0)),
        ];
        let r = solve_full(&over(edges, 4, 10.0), &MarketConfig::default()).unwrap();
        assert!(r.market.converged);
        assert!((r.f[0] - r.f[2]).abs() < 1e-6);
        assert!((r.f[0] - 0.5 * r.market.d[0][0]).abs() < 1e-6);
        assert!(r.wardrop_residual <= 1e-4);
    }

    #[test]
    fn poor_consumer_leaves_the_network_empty() {
        let r = solve_full(&single(1.0, 1.0, 0.0), &MarketConfig::default()).unwrap();
        assert!(r.market.d[0][0] < 1e-2 && r.market.l[0][0] < 1e-2);
        assert!((r.t[0] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn rejects_fixed_costs_and_unsmoothed_caps() {
        assert!(FullInstance::new(market(10.0), None, 0.15).is_err());
        let net = Network::anonymous(
            2,
            vec![Edge::new(
                0,
                1,
                crate::network::CostFunction::HardCap {
                    free_flow: 1.0,
                    capacity: 5.0,
                },
            )],
            Vec::new(),
        )
        .unwrap();
        let inst = MarketInstance::new(
            vec![producer(10.0, 1.0)],
            vec![consumer(2.0, 10.0)],
            Vec::new(),
            Transport::Network(net),
            1e-3,
        )
        .unwrap();
        assert!(matches!(FullInstance::new(inst.clone(), None, 0.15), Err(Error::HardCapEdge(0))));
        assert!(FullInstance::new(inst, Some(0.1), 0.15).is_ok());
    }
}
