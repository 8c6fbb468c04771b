use serde::{Deserialize, Serialize};

use super::agents::{producer_best_response, ConsumerLp, ConsumerResponse, ProducerResponse};
use super::{productivity_check, walras_residuals, MarketCandidate, MarketEquilibrium, MarketInstance, Regrets, WalrasResiduals};
use crate::assignment::{cost_map, DemandMatrix, SolveConfig};
use crate::distribution::Transport;
use crate::network::Network;
use crate::par;
use crate::saddle::{mirror_prox, BlockSpec, Domain, Geometry, Oracle, Point, SaddleConfig, SaddleProblem, Side};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketConfig {
    pub saddle: SaddleConfig,
    /// Solve even when the productivity test fails.
    pub force: bool,
    /// Strictness margin of the productivity test.
    pub margin_eps: f64,
    /// Inner assignment settings when transport is a network.
    pub assignment: SolveConfig,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            saddle: SaddleConfig {
                step: Some(5e-2),
                max_iter: 4_000_000,
                tol: 1e-3,
                check_every: 500,
                adaptive: false,
                last_iterate_stop: true,
                restart_every: Some(2000),
            },
            force: false,
            margin_eps: 1e-9,
            assignment: SolveConfig::default().with_tol(1e-9),
        }
    }
}

/// Agents' side of the market saddle, shared with the full model: best
/// responses at given prices and the price-block gradients.
#[derive(Debug, Clone)]
pub(crate) struct Economy {
    pub inst: MarketInstance,
    pub pairs: Vec<(usize, usize)>,
    pub lps: Vec<ConsumerLp>,
    pub site: Vec<Option<usize>>,
    pub m: usize,
}

pub(crate) struct Responses {
    pub producers: Vec<ProducerResponse>,
    pub consumers: Vec<ConsumerResponse>,
    /// `min_k (λ^L_ik − λ^W_jk)` per pair.
    pub margins: Vec<f64>,
    /// Share of each commodity in a pair's flow.
    pub split: Vec<Vec<f64>>,
}

/// Index of the first entry of each price block in a saddle point.
pub(crate) const LAMBDA_L: usize = 1;
pub(crate) const LAMBDA_W: usize = 2;
pub(crate) const Y: usize = 3;

impl Economy {
    pub fn new(inst: &MarketInstance) -> Result<Self> {
        let lps = inst.consumers.iter().map(ConsumerLp::new).collect::<Result<Vec<_>>>()?;
        Ok(Economy {
            pairs: inst.pairs(),
            site: (0..inst.producers.len()).map(|i| inst.site_consumer(i)).collect(),
            m: inst.commodities(),
            lps,
            inst: inst.clone(),
        })
    }

    /// `s` (entropy, `Σ s ln s`), then `λ^L`, `λ^W`, `y`.
    pub fn blocks(&self) -> Vec<BlockSpec> {
        let (np, nc) = (self.inst.producers.len(), self.inst.consumers.len());
        let orthant = |n| BlockSpec::new(Side::Max, n, Domain::Orthant, Geometry::Euclidean);
        vec![
            BlockSpec::new(Side::Min, self.pairs.len(), Domain::Orthant, Geometry::Entropy).with_entropy(self.inst.gamma),
            orthant(np * self.m),
            orthant(nc * self.m),
            orthant(self.inst.resources()),
        ]
    }

    fn lambda_l<'a>(&self, z: &'a Point, i: usize) -> &'a [f64] {
        &z[LAMBDA_L][i * self.m..(i + 1) * self.m]
    }

    fn lambda_w<'a>(&self, z: &'a Point, j: usize) -> &'a [f64] {
        &z[LAMBDA_W][j * self.m..(j + 1) * self.m]
    }

    pub fn respond(&self, z: &Point) -> Responses {
        let zero = vec![0.0; self.m];
        let producers = par::map_range(self.inst.producers.len(), |i| {
            let lw = self.site[i].map_or(zero.as_slice(), |j| self.lambda_w(z, j));
            producer_best_response(&self.inst.producers[i], self.lambda_l(z, i), lw, &z[Y])
        });
        let consumers = par::map_range(self.inst.consumers.len(), |j| {
            self.lps[j].respond(self.inst.consumers[j].income, self.lambda_w(z, j))
        });
        let mut margins = Vec::with_capacity(self.pairs.len());
        let mut split = Vec::with_capacity(self.pairs.len());
        for &(i, j) in &self.pairs {
            let (ll, lw) = (self.lambda_l(z, i), self.lambda_w(z, j));
            let diff: Vec<f64> = (0..self.m).map(|k| ll[k] - lw[k]).collect();
            let best = diff.iter().copied().fold(f64::INFINITY, f64::min);
            let ties = diff.iter().filter(|v| **v == best).count() as f64;
            margins.push(best);
            split.push(diff.iter().map(|v| if *v == best { 1.0 / ties } else { 0.0 }).collect());
        }
        Responses {
            producers,
            consumers,
            margins,
            split,
        }
    }

    /// Commodity flows per pair for aggregate flows `s`.
    pub fn flows(&self, r: &Responses, s: &[f64]) -> Vec<Vec<f64>> {
        r.split.iter().zip(s).map(|(w, sv)| w.iter().map(|x| x * sv).collect()).collect()
    }

    /// Operator entries of the price blocks: minus the gradient of the
    /// concave price objective.
    pub fn price_operator(&self, r: &Responses, s: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let m = self.m;
        let d = self.flows(r, s);
        let mut gl: Vec<f64> = r.producers.iter().flat_map(|p| p.l.iter().copied()).collect();
        let mut gw: Vec<f64> = r.consumers.iter().flat_map(|c| c.w.iter().map(|v| -v)).collect();
        for (i, p) in r.producers.iter().enumerate() {
            if let Some(j) = self.site[i] {
                for (k, v) in self.inst.producers[i].intermediate(&p.l).into_iter().enumerate() {
                    gw[j * m + k] -= v;
                }
            }
        }
        for (pair, &(i, j)) in self.pairs.iter().enumerate() {
            for k in 0..m {
                gl[i * m + k] -= d[pair][k];
                gw[j * m + k] += d[pair][k];
            }
        }
        let q = self.inst.resources();
        let mut gy = self.inst.b.clone();
        for (i, p) in r.producers.iter().enumerate() {
            for (g, u) in gy.iter_mut().zip(self.inst.producers[i].resource_use(&p.l, q)) {
                *g -= u;
            }
        }
        (gl, gw, gy)
    }

    /// `−⟨y, b⟩ − Σ profits − Σ surpluses + Σ s·margin`.
    pub fn price_value(&self, z: &Point, r: &Responses) -> f64 {
        let yb: f64 = z[Y].iter().zip(&self.inst.b).map(|(a, b)| a * b).sum();
        let profits: f64 = r.producers.iter().map(|p| p.profit).sum();
        let surpluses: f64 = r.consumers.iter().map(|c| c.surplus).sum();
        let trade: f64 = z[0].iter().zip(&r.margins).map(|(a, b)| a * b).sum();
        -yb - profits - surpluses + trade
    }

    /// Flattened commodity flows, outputs, purchases and participation.
    pub fn aux(&self, r: &Responses, s: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self.flows(r, s).into_iter().flatten().collect();
        out.extend(r.producers.iter().flat_map(|p| p.l.iter().copied()));
        out.extend(r.consumers.iter().flat_map(|c| c.w.iter().copied()));
        out.extend(r.producers.iter().map(|p| p.alpha));
        out.extend(r.consumers.iter().map(|c| c.beta));
        out
    }

    fn unpack(&self, flat: &[f64], rows: usize, at: &mut usize) -> Vec<Vec<f64>> {
        let out = (0..rows).map(|r| flat[*at + r * self.m..*at + (r + 1) * self.m].to_vec()).collect();
        *at += rows * self.m;
        out
    }

    pub fn candidate(&self, z: &Point, aux: &[f64]) -> (MarketCandidate, Vec<f64>, Vec<f64>) {
        let (np, nc) = (self.inst.producers.len(), self.inst.consumers.len());
        let mut at = 0;
        let d = self.unpack(aux, self.pairs.len(), &mut at);
        let l = self.unpack(aux, np, &mut at);
        let w = self.unpack(aux, nc, &mut at);
        let alpha = aux[at..at + np].to_vec();
        let beta = aux[at + np..at + np + nc].to_vec();
        let cand = MarketCandidate {
            d,
            l,
            w,
            y: z[Y].clone(),
            lambda_l: z[LAMBDA_L].chunks(self.m).map(<[f64]>::to_vec).collect(),
            lambda_w: z[LAMBDA_W].chunks(self.m).map(<[f64]>::to_vec).collect(),
        };
        (cand, alpha, beta)
    }

    /// Agent regrets at prices `z` for the allocation in `aux`, with `t`
    /// the per-pair transport costs at `z[0]`.
    pub fn regrets(&self, z: &Point, aux: &[f64], t: &[f64]) -> Regrets {
        let r = self.respond(z);
        let (cand, alpha, beta) = self.candidate(z, aux);
        let zero = vec![0.0; self.m];
        let mut out = Regrets::default();
        for (i, p) in self.inst.producers.iter().enumerate() {
            let lw = self.site[i].map_or(zero.as_slice(), |j| self.lambda_w(z, j));
            let margin = p.margin(self.lambda_l(z, i), lw, &z[Y]);
            let got: f64 = margin.iter().zip(&cand.l[i]).map(|(a, b)| a * b).sum::<f64>() - alpha[i] * p.chi;
            out.producers = out.producers.max(r.producers[i].profit - got);
        }
        for (j, c) in self.inst.consumers.iter().enumerate() {
            let cost: f64 = self.lambda_w(z, j).iter().zip(&cand.w[j]).map(|(a, b)| a * b).sum();
            out.consumers = out.consumers.max(r.consumers[j].surplus - (beta[j] * c.income - cost));
        }
        let gamma = self.inst.gamma;
        let mut gap = 0.0;
        for (p, &s) in z[0].iter().enumerate() {
            let g = r.margins[p] + t[p];
            let ent = if s > 0.0 { gamma * s * s.ln() } else { 0.0 };
            gap += g * s + ent + gamma * (-g / gamma - 1.0).exp();
        }
        out.transporter = gap.max(0.0);
        out
    }

    /// Saddle point and side outputs of a claimed equilibrium, with the
    /// pair flows `s` taken as the row sums of `d`.
    pub fn point(&self, cand: &MarketCandidate, alpha: &[f64], beta: &[f64]) -> Result<(Point, Vec<f64>)> {
        let (np, nc, m) = (self.inst.producers.len(), self.inst.consumers.len(), self.m);
        let shape = |name: &str, v: &[Vec<f64>], rows: usize| -> Result<()> {
            if v.len() != rows || v.iter().any(|r| r.len() != m) {
                return Err(Error::InvalidInstance(format!("{name} must be {rows} x {m}")));
            }
            if v.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInstance(format!("{name} must be finite")));
            }
            Ok(())
        };
        shape("d", &cand.d, self.pairs.len())?;
        shape("l", &cand.l, np)?;
        shape("w", &cand.w, nc)?;
        shape("lambda_l", &cand.lambda_l, np)?;
        shape("lambda_w", &cand.lambda_w, nc)?;
        if cand.y.len() != self.inst.resources() || alpha.len() != np || beta.len() != nc {
            return Err(Error::InvalidInstance("y, alpha or beta has the wrong length".into()));
        }
        let s: Vec<f64> = cand.d.iter().map(|r| r.iter().sum()).collect();
        if let Some((index, &value)) = s.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(Error::Negative {
                what: "pair flow",
                index,
                value,
            });
        }
        let z = vec![
            s,
            cand.lambda_l.iter().flatten().copied().collect(),
            cand.lambda_w.iter().flatten().copied().collect(),
            cand.y.clone(),
        ];
        let mut aux: Vec<f64> = cand.d.iter().chain(&cand.l).chain(&cand.w).flatten().copied().collect();
        aux.extend(alpha);
        aux.extend(beta);
        Ok((z, aux))
    }

    pub fn walras(&self, z: &Point, aux: &[f64]) -> Option<WalrasResiduals> {
        if aux.is_empty() {
            return None;
        }
        walras_residuals(&self.inst, &self.candidate(z, aux).0).ok()
    }

    /// Largest Walras residual or agent regret.
    pub fn metric(&self, z: &Point, aux: &[f64], t: &[f64]) -> Option<f64> {
        let w = self.walras(z, aux)?;
        Some(w.max().max(self.regrets(z, aux, t).max()))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn equilibrium(
        &self,
        z: &Point,
        aux: &[f64],
        t: &[f64],
        gap: f64,
        iterations: usize,
        converged: bool,
        productive: bool,
    ) -> Result<MarketEquilibrium> {
        let regrets = self.regrets(z, aux, t);
        let (cand, alpha, beta) = self.candidate(z, aux);
        let walras = walras_residuals(&self.inst, &cand)?;
        Ok(MarketEquilibrium {
            pairs: self
                .pairs
                .iter()
                .map(|&(i, j)| (self.inst.producers[i].node, self.inst.consumers[j].node))
                .collect(),
            d: cand.d,
            l: cand.l,
            alpha,
            w: cand.w,
            beta,
            y: cand.y,
            lambda_l: cand.lambda_l,
            lambda_w: cand.lambda_w,
            walras,
            regrets,
            saddle_gap: gap,
            iterations,
            converged,
            productive,
        })
    }
}

#[derive(Debug, Clone)]
enum PairTransport {
    Fixed(Vec<f64>),
    Network(Network, SolveConfig),
}

/// The market saddle problem: `min_s max_{λ^L, λ^W, y ≥ 0}` of
/// `−⟨y, b⟩ − Σ profits − Σ surpluses + Σ s·(λ^L − λ^W) + Φ(s) + γ Σ s ln s`,
/// with `s` the aggregate flow per trading pair.
#[derive(Debug, Clone)]
pub struct MarketProblem {
    economy: Economy,
    transport: PairTransport,
    blocks: Vec<BlockSpec>,
}

impl MarketProblem {
    pub fn new(inst: &MarketInstance, assignment: &SolveConfig) -> Result<Self> {
        let economy = Economy::new(inst)?;
        let transport = match &inst.transport {
            Transport::Fixed(t) => PairTransport::Fixed(economy.pairs.iter().map(|&(i, j)| t[i][j]).collect()),
            Transport::Network(net) => PairTransport::Network(inst.pair_network(net)?, assignment.clone()),
        };
        Ok(MarketProblem {
            blocks: economy.blocks(),
            economy,
            transport,
        })
    }

    /// `(Φ(s), T(s))`.
    fn costs(&self, s: &[f64]) -> Result<(f64, Vec<f64>)> {
        match &self.transport {
            PairTransport::Fixed(t) => Ok((t.iter().zip(s).map(|(a, b)| a * b).sum(), t.clone())),
            PairTransport::Network(net, cfg) => {
                let map = cost_map(net, &DemandMatrix::scalar(s.to_vec())?, cfg)?;
                Ok((map.potential, map.od_costs))
            }
        }
    }

    pub fn walras(&self, z: &Point, aux: &[f64]) -> Option<WalrasResiduals> {
        self.economy.walras(z, aux)
    }

    pub fn regrets(&self, z: &Point, aux: &[f64]) -> Result<Regrets> {
        let (_, t) = self.costs(&z[0])?;
        Ok(self.economy.regrets(z, aux, &t))
    }

    /// Walras residuals and agent regrets of a claimed equilibrium.
    pub fn certificate(&self, cand: &MarketCandidate, alpha: &[f64], beta: &[f64]) -> Result<(WalrasResiduals, Regrets)> {
        let (z, aux) = self.economy.point(cand, alpha, beta)?;
        let walras = walras_residuals(&self.economy.inst, cand)?;
        Ok((walras, self.regrets(&z, &aux)?))
    }
}

impl SaddleProblem for MarketProblem {
    fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    fn operator(&self, z: &Point) -> Result<Oracle> {
        let r = self.economy.respond(z);
        let (_, t) = self.costs(&z[0])?;
        let gs = r.margins.iter().zip(&t).map(|(a, b)| a + b).collect();
        let (gl, gw, gy) = self.economy.price_operator(&r, &z[0]);
        Ok(Oracle {
            grad: vec![gs, gl, gw, gy],
            aux: self.economy.aux(&r, &z[0]),
        })
    }

    fn value(&self, z: &Point) -> Option<f64> {
        let r = self.economy.respond(z);
        let (phi, _) = self.costs(&z[0]).ok()?;
        Some(self.economy.price_value(z, &r) + phi)
    }

    fn initial_point(&self) -> Point {
        let mut z: Point = self.blocks.iter().map(BlockSpec::default_point).collect();
        z[0] = vec![1.0; self.economy.pairs.len()];
        z
    }

    fn stop_metric(&self, z: &Point, aux: &[f64]) -> Option<f64> {
        let (_, t) = self.costs(&z[0]).ok()?;
        self.economy.metric(z, aux, &t)
    }
}

/// Competitive equilibrium by mirror-prox on the market saddle. Outputs
/// and participation are the step-weighted averages of the agents' best
/// responses, so agents at a zero-profit boundary come out fractional.
pub fn solve_market(inst: &MarketInstance, cfg: &MarketConfig) -> Result<MarketEquilibrium> {
    let prod = productivity_check(inst, cfg.margin_eps)?;
    if !prod.ok && !cfg.force {
        return Err(Error::Unproductive(prod.violated.unwrap_or_default()));
    }
    let problem = MarketProblem::new(inst, &cfg.assignment)?;
    let (s, _) = mirror_prox(&problem, &cfg.saddle)?;
    let (_, t) = problem.costs(&s.z[0])?;
    problem
        .economy
        .equilibrium(&s.z, &s.aux, &t, s.gap, s.iterations, s.converged, prod.ok)
}
