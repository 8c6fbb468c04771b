//! Competitive equilibrium of producers, consumers and a transporter.
//!
//! Producers choose outputs in a box, consumers buy the cheapest bundle
//! meeting their minimum property levels, the transporter moves goods from
//! producer to consumer sites. Prices at sources (`λ^L`), sinks (`λ^W`) and
//! on resources (`y`) clear the markets; they are found from a saddle
//! problem whose price side is concave through the agents' best responses.

mod agents;
mod solve;

use serde::{Deserialize, Serialize};

pub use agents::{consumer_best_response, producer_best_response, ConsumerLp, ConsumerResponse, ProducerResponse};
pub(crate) use solve::Economy;
pub use solve::{solve_market, MarketConfig, MarketProblem};

use crate::distribution::Transport;
use crate::network::Network;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Producer {
    pub node: usize,
    /// Upper corner of the technology box `U = [0, u_max]`.
    pub u_max: Vec<f64>,
    /// Fixed participation cost.
    #[serde(default)]
    pub chi: f64,
    /// Unit production costs.
    pub c: Vec<f64>,
    /// Input-output matrix, `m × m`; empty means zero.
    #[serde(default)]
    pub a: Vec<Vec<f64>>,
    /// Resource use, `q × m`; empty means zero.
    #[serde(default)]
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Consumer {
    pub node: usize,
    /// Property contents, `s × m`.
    pub q: Vec<Vec<f64>>,
    pub sigma_min: Vec<f64>,
    pub income: f64,
}

fn mat_vec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(p, v)| p * v).sum()).collect()
}

fn mat_t_vec(a: &[Vec<f64>], y: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (row, yv) in a.iter().zip(y) {
        for (o, p) in out.iter_mut().zip(row) {
            *o += p * yv;
        }
    }
    out
}

impl Producer {
    pub fn commodities(&self) -> usize {
        self.u_max.len()
    }

    /// `A L` (zero when `A` is empty).
    pub fn intermediate(&self, l: &[f64]) -> Vec<f64> {
        if self.a.is_empty() {
            vec![0.0; l.len()]
        } else {
            mat_vec(&self.a, l)
        }
    }

    /// `R L`, of length `q`.
    pub fn resource_use(&self, l: &[f64], q: usize) -> Vec<f64> {
        if self.r.is_empty() {
            vec![0.0; q]
        } else {
            mat_vec(&self.r, l)
        }
    }

    /// `λ^L − c − Aᵀλ^W − Rᵀy`.
    pub fn margin(&self, lambda_l: &[f64], lambda_w: &[f64], y: &[f64]) -> Vec<f64> {
        let m = self.commodities();
        let at = if self.a.is_empty() {
            vec![0.0; m]
        } else {
            mat_t_vec(&self.a, lambda_w, m)
        };
        let rt = if self.r.is_empty() {
            vec![0.0; m]
        } else {
            mat_t_vec(&self.r, y, m)
        };
        (0..m).map(|k| lambda_l[k] - self.c[k] - at[k] - rt[k]).collect()
    }

    fn uses_inputs(&self) -> bool {
        self.a.iter().flatten().any(|v| *v != 0.0)
    }

    fn validate(&self, index: usize, q: usize) -> Result<()> {
        let m = self.commodities();
        let bad = |msg: String| Err(Error::InvalidInstance(format!("producer {index}: {msg}")));
        if m == 0 {
            return bad("no commodities".into());
        }
        if self.c.len() != m {
            return bad(format!("c has {} entries, expected {m}", self.c.len()));
        }
        if !self.a.is_empty() && (self.a.len() != m || self.a.iter().any(|r| r.len() != m)) {
            return bad(format!("a must be {m} x {m}"));
        }
        if !self.r.is_empty() && (self.r.len() != q || self.r.iter().any(|r| r.len() != m)) {
            return bad(format!("r must be {q} x {m}"));
        }
        let all = self
            .u_max
            .iter()
            .chain(&self.c)
            .chain(self.a.iter().flatten())
            .chain(self.r.iter().flatten());
        if let Some((k, v)) = all.enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Negative {
                what: "producer parameter",
                index: k,
                value: *v,
            });
        }
        if !(self.chi.is_finite() && self.chi >= 0.0) {
            return bad(format!("chi must be >= 0, got {}", self.chi));
        }
        Ok(())
    }
}

impl Consumer {
    fn validate(&self, index: usize, m: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInstance(format!("consumer {index}: {msg}")));
        if self.q.len() != self.sigma_min.len() || self.q.iter().any(|r| r.len() != m) {
            return bad(format!("q must be {} x {m}", self.sigma_min.len()));
        }
        if self.q.iter().flatten().chain(&self.sigma_min).any(|v| !v.is_finite()) {
            return bad("q and sigma_min must be finite".into());
        }
        if !(self.income.is_finite() && self.income >= 0.0) {
            return bad(format!("income must be >= 0, got {}", self.income));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MarketInstance {
    pub producers: Vec<Producer>,
    pub consumers: Vec<Consumer>,
    /// Resource limits.
    pub b: Vec<f64>,
    /// Fixed costs are producers × consumers; same-node entries are unused.
    pub transport: Transport,
    pub gamma: f64,
}

impl MarketInstance {
    pub fn new(producers: Vec<Producer>, consumers: Vec<Consumer>, b: Vec<f64>, transport: Transport, gamma: f64) -> Result<Self> {
        let inst = MarketInstance {
            producers,
            consumers,
            b,
            transport,
            gamma,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn commodities(&self) -> usize {
        self.producers.first().map_or(0, Producer::commodities)
    }

    pub fn resources(&self) -> usize {
        self.b.len()
    }

    /// Trading pairs `(producer, consumer)` at distinct nodes, producer-major.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, p) in self.producers.iter().enumerate() {
            for (j, c) in self.consumers.iter().enumerate() {
                if p.node != c.node {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// The consumer sharing a producer's node, whose sink prices value the
    /// producer's inputs.
    pub fn site_consumer(&self, producer: usize) -> Option<usize> {
        let node = self.producers[producer].node;
        self.consumers.iter().position(|c| c.node == node)
    }

    fn validate(&self) -> Result<()> {
        if self.producers.is_empty() || self.consumers.is_empty() {
            return Err(Error::InvalidInstance("need at least one producer and one consumer".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be > 0, got {}", self.gamma)));
        }
        let m = self.commodities();
        let q = self.resources();
        if let Some((k, v)) = self.b.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Negative {
                what: "resource limit",
                index: k,
                value: *v,
            });
        }
        for (i, p) in self.producers.iter().enumerate() {
            if p.commodities() != m {
                return Err(Error::InvalidInstance(format!(
                    "producer {i} has {} commodities, expected {m}",
                    p.commodities()
                )));
            }
            p.validate(i, q)?;
        }
        let mut nodes: Vec<usize> = self.consumers.iter().map(|c| c.node).collect();
        nodes.sort_unstable();
        if nodes.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInstance("two consumers share a node".into()));
        }
        let mut nodes: Vec<usize> = self.producers.iter().map(|p| p.node).collect();
        nodes.sort_unstable();
        if nodes.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInstance("two producers share a node".into()));
        }
        for (j, c) in self.consumers.iter().enumerate() {
            c.validate(j, m)?;
            ConsumerLp::new(c).map_err(|e| match e {
                Error::InvalidInstance(msg) => Error::InvalidInstance(format!("consumer {j}: {msg}")),
                other => other,
            })?;
        }
        for (i, p) in self.producers.iter().enumerate() {
            if p.uses_inputs() && self.site_consumer(i).is_none() {
                return Err(Error::InvalidInstance(format!(
                    "producer {i} uses inputs but no consumer sits at node {}; add one with zero income",
                    p.node
                )));
            }
        }
        match &self.transport {
            Transport::Fixed(t) => {
                if t.len() != self.producers.len() || t.iter().any(|r| r.len() != self.consumers.len()) {
                    return Err(Error::InvalidInstance(format!(
                        "fixed costs must be {} x {}",
                        self.producers.len(),
                        self.consumers.len()
                    )));
                }
                if t.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::InvalidInstance("fixed costs must be finite and >= 0".into()));
                }
            }
            Transport::Network(net) => self.pair_network(net).map(|_| ())?,
        }
        if self.pairs().is_empty() {
            return Err(Error::InvalidInstance("no producer-consumer pair at distinct nodes".into()));
        }
        Ok(())
    }

    /// The network with the trading pairs as od pairs.
    pub fn pair_network(&self, net: &Network) -> Result<Network> {
        let pairs = self
            .pairs()
            .into_iter()
            .map(|(i, j)| (self.producers[i].node, self.consumers[j].node))
            .collect();
        net.with_od_pairs(pairs)
    }
}

/// Violation and complementarity of one group of Walras laws.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LawResidual {
    /// Largest positive part of a balance violation.
    pub violation: f64,
    /// Largest `|⟨price, slack⟩|` over the agents in the group.
    pub complementarity: f64,
}

impl LawResidual {
    fn push(&mut self, slack: &[f64], price: &[f64]) {
        for s in slack {
            self.violation = self.violation.max(s.max(0.0));
        }
        let c: f64 = slack.iter().zip(price).map(|(s, p)| s * p).sum();
        self.complementarity = self.complementarity.max(c.abs());
    }

    pub fn max(&self) -> f64 {
        self.violation.max(self.complementarity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WalrasResiduals {
    /// `Σ_j d_ij ≤ L_i`.
    pub sources: LawResidual,
    /// `Σ_k d_ki ≥ W_i + A_i L_i` at producer sites.
    pub producer_sites: LawResidual,
    /// `Σ_i d_ij ≥ W_j` at the other sinks.
    pub sinks: LawResidual,
    /// `Σ R_i L_i ≤ b`.
    pub resources: LawResidual,
}

impl WalrasResiduals {
    pub fn max(&self) -> f64 {
        [self.sources, self.producer_sites, self.sinks, self.resources]
            .iter()
            .map(LawResidual::max)
            .fold(0.0, f64::max)
    }
}

/// Allocation and prices to be checked against the Walras laws. `d` is
/// indexed like [`MarketInstance::pairs`], one vector of commodities per
/// pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketCandidate {
    pub d: Vec<Vec<f64>>,
    pub l: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub lambda_l: Vec<Vec<f64>>,
    pub lambda_w: Vec<Vec<f64>>,
}

pub fn walras_residuals(inst: &MarketInstance, cand: &MarketCandidate) -> Result<WalrasResiduals> {
    let m = inst.commodities();
    let q = inst.resources();
    let pairs = inst.pairs();
    let (np, nc) = (inst.producers.len(), inst.consumers.len());
    let shape_ok = |v: &[Vec<f64>], n: usize| v.len() == n && v.iter().all(|r| r.len() == m);
    if !(shape_ok(&cand.d, pairs.len())
        && shape_ok(&cand.l, np)
        && shape_ok(&cand.w, nc)
        && shape_ok(&cand.lambda_l, np)
        && shape_ok(&cand.lambda_w, nc)
        && cand.y.len() == q)
    {
        return Err(Error::InvalidInstance("candidate shapes do not match the market".into()));
    }
    let mut shipped = vec![vec![0.0; m]; np];
    let mut received = vec![vec![0.0; m]; nc];
    for (p, &(i, j)) in pairs.iter().enumerate() {
        for k in 0..m {
            shipped[i][k] += cand.d[p][k];
            received[j][k] += cand.d[p][k];
        }
    }
    let mut out = WalrasResiduals::default();
    for i in 0..np {
        let slack: Vec<f64> = (0..m).map(|k| shipped[i][k] - cand.l[i][k]).collect();
        out.sources.push(&slack, &cand.lambda_l[i]);
    }
    for j in 0..nc {
        let producer = (0..np).find(|&i| inst.producers[i].node == inst.consumers[j].node);
        let inputs = producer.map_or(vec![0.0; m], |i| inst.producers[i].intermediate(&cand.l[i]));
        let slack: Vec<f64> = (0..m).map(|k| cand.w[j][k] + inputs[k] - received[j][k]).collect();
        match producer {
            Some(_) => out.producer_sites.push(&slack, &cand.lambda_w[j]),
            None => out.sinks.push(&slack, &cand.lambda_w[j]),
        }
    }
    let mut used = vec![0.0; q];
    for (i, p) in inst.producers.iter().enumerate() {
        for (u, v) in used.iter_mut().zip(p.resource_use(&cand.l[i], q)) {
            *u += v;
        }
    }
    let slack: Vec<f64> = used.iter().zip(&inst.b).map(|(u, b)| u - b).collect();
    out.resources.push(&slack, &cand.y);
    Ok(out)
}

/// Outcome of the productivity test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Productivity {
    pub ok: bool,
    /// Smallest entry of `Σ L̄ − Σ A L̄ − Σ W̄`.
    pub goods_slack: f64,
    /// Smallest entry of `b − Σ R L̄` (infinite without resources).
    pub resource_slack: f64,
    pub witness_l: Vec<Vec<f64>>,
    pub witness_w: Vec<Vec<f64>>,
    /// Which inequality failed, if any.
    pub violated: Option<String>,
}

/// Checks the productivity condition at the candidate `L̄ = u_max`,
/// `W̄_j` = the cheapest point of `V_j` at unit prices. A failure does not
/// prove that no other witness exists.
pub fn productivity_check(inst: &MarketInstance, margin_eps: f64) -> Result<Productivity> {
    let m = inst.commodities();
    let q = inst.resources();
    let witness_l: Vec<Vec<f64>> = inst.producers.iter().map(|p| p.u_max.clone()).collect();
    let witness_w = inst
        .consumers
        .iter()
        .map(|c| Ok(ConsumerLp::new(c)?.cheapest(&vec![1.0; m]).1))
        .collect::<Result<Vec<_>>>()?;
    let mut goods = vec![0.0; m];
    let mut used = vec![0.0; q];
    for (p, l) in inst.producers.iter().zip(&witness_l) {
        let a = p.intermediate(l);
        for k in 0..m {
            goods[k] += l[k] - a[k];
        }
        for (u, v) in used.iter_mut().zip(p.resource_use(l, q)) {
            *u += v;
        }
    }
    for w in &witness_w {
        for k in 0..m {
            goods[k] -= w[k];
        }
    }
    let goods_slack = goods.iter().copied().fold(f64::INFINITY, f64::min);
    let resource_slack = inst.b.iter().zip(&used).map(|(b, u)| b - u).fold(f64::INFINITY, f64::min);
    let violated = if goods_slack <= margin_eps {
        Some(format!(
            "goods balance: sum L - sum A L - sum W has entry {goods_slack} <= {margin_eps}"
        ))
    } else if resource_slack <= margin_eps {
        Some(format!("resources: b - sum R L has entry {resource_slack} <= {margin_eps}"))
    } else {
        None
    };
    Ok(Productivity {
        ok: violated.is_none(),
        goods_slack,
        resource_slack,
        witness_l,
        witness_w,
        violated,
    })
}

/// How far the agents' reported choices fall short of their best
/// responses at the reported prices; zero exactly when every agent solves
/// its own problem.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Regrets {
    /// Largest `π_i(λ) − (⟨margin_i, L_i⟩ − α_i χ_i)`.
    pub producers: f64,
    /// Largest `surplus_j(λ) − (β_j τ_j − ⟨λ^W_j, W_j⟩)`.
    pub consumers: f64,
    /// Linearised optimality gap of the transporter's flows.
    pub transporter: f64,
}

impl Regrets {
    pub fn max(&self) -> f64 {
        self.producers.max(self.consumers).max(self.transporter)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarketEquilibrium {
    /// Node pairs `(producer node, consumer node)` behind the rows of `d`.
    pub pairs: Vec<(usize, usize)>,
    pub d: Vec<Vec<f64>>,
    pub l: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub w: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda_l: Vec<Vec<f64>>,
    pub lambda_w: Vec<Vec<f64>>,
    pub walras: WalrasResiduals,
    pub regrets: Regrets,
    pub saddle_gap: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The productivity test passed (otherwise the solve was forced).
    pub productive: bool,
}

impl MarketEquilibrium {
    pub fn candidate(&self) -> MarketCandidate {
        MarketCandidate {
            d: self.d.clone(),
            l: self.l.clone(),
            w: self.w.clone(),
            y: self.y.clone(),
            lambda_l: self.lambda_l.clone(),
            lambda_w: self.lambda_w.clone(),
        }
    }

    /// Aggregate flow per pair.
    pub fn pair_totals(&self) -> Vec<f64> {
        self.d.iter().map(|v| v.iter().sum()).collect()
    }
}

#[cfg(test)]
pub(crate) mod toy {
    use super::*;

    pub fn producer(u: f64, c: f64) -> Producer {
        Producer {
            node: 0,
            u_max: vec![u],
            chi: 0.0,
            c: vec![c],
            a: Vec::new(),
            r: Vec::new(),
        }
    }

    pub fn consumer(sigma: f64, income: f64) -> Consumer {
        Consumer {
            node: 1,
            q: vec![vec![1.0]],
            sigma_min: vec![sigma],
            income,
        }
    }

    pub fn market(income: f64) -> MarketInstance {
        MarketInstance::new(
            vec![producer(10.0, 1.0)],
            vec![consumer(2.0, income)],
            Vec::new(),
            Transport::Fixed(vec![vec![1.0]]),
            1e-3,
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::toy::*;
    use super::*;

    #[test]
    fn complementarity_residual_example() {
        let inst = market(10.0);
        let cand = MarketCandidate {
            d: vec![vec![0.0]],
            l: vec![vec![1.0]],
            w: vec![vec![0.0]],
            y: Vec::new(),
            lambda_l: vec![vec![1.0]],
            lambda_w: vec![vec![0.0]],
        };
        let r = walras_residuals(&inst, &cand).unwrap();
        assert_eq!(r.sources.complementarity, 1.0);
        assert_eq!(r.sources.violation, 0.0);
        let zero = MarketCandidate {
            l: vec![vec![0.0]],
            lambda_l: vec![vec![0.0]],
            ..cand
        };
        assert_eq!(walras_residuals(&inst, &zero).unwrap().max(), 0.0);
    }

    #[test]
    fn hand_equilibrium_has_small_residuals() {
        let inst = market(10.0);
        let cand = MarketCandidate {
            d: vec![vec![2.0]],
            l: vec![vec![2.0]],
            w: vec![vec![2.0]],
            y: Vec::new(),
            lambda_l: vec![vec![1.0]],
            lambda_w: vec![vec![2.0]],
        };
        assert!(walras_residuals(&inst, &cand).unwrap().max() <= 1e-12);
    }

    #[test]
    fn productivity_examples() {
        let inst = market(10.0);
        assert!(productivity_check(&inst, 1e-9).unwrap().ok);
        let mut p = producer(10.0, 1.0);
        p.a = vec![vec![1.0]];
        let mut c0 = consumer(0.0, 0.0);
        c0.node = 0;
        let inst = MarketInstance::new(
            vec![p],
            vec![consumer(2.0, 10.0), c0],
            Vec::new(),
            Transport::Fixed(vec![vec![1.0, 0.0]]),
            1e-3,
        )
        .unwrap();
        let r = productivity_check(&inst, 1e-9).unwrap();
        assert!(!r.ok);
        assert!(r.violated.unwrap().starts_with("goods"));
        let mut p = producer(10.0, 1.0);
        p.r = vec![vec![1.0]];
        let inst = MarketInstance::new(
            vec![p],
            vec![consumer(2.0, 10.0)],
            vec![5.0],
            Transport::Fixed(vec![vec![1.0]]),
            1e-3,
        )
        .unwrap();
        let r = productivity_check(&inst, 1e-9).unwrap();
        assert!(!r.ok);
        assert!(r.violated.unwrap().starts_with("resources"));
    }

    #[test]
    fn inputs_without_a_site_consumer_are_rejected() {
        let mut p = producer(10.0, 1.0);
        p.a = vec![vec![0.1]];
        let e = MarketInstance::new(
            vec![p],
            vec![consumer(2.0, 10.0)],
            Vec::new(),
            Transport::Fixed(vec![vec![1.0]]),
            1e-3,
        )
        .unwrap_err();
        assert!(matches!(e, Error::InvalidInstance(_)));
    }

    #[test]
    fn empty_consumer_set_is_rejected() {
        let mut c = consumer(2.0, 10.0);
        c.q = vec![vec![0.0]];
        let e = MarketInstance::new(
            vec![producer(1.0, 1.0)],
            vec![c],
            Vec::new(),
            Transport::Fixed(vec![vec![1.0]]),
            1e-3,
        )
        .unwrap_err();
        assert!(matches!(e, Error::InvalidInstance(_)));
    }
}
