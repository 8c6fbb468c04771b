//! Trip distribution: who travels from which source to which sink.
//!
//! * [`solve_potential`]: the potential game where every pair pays its
//!   sites' marginal costs plus the equilibrium travel cost, with a
//!   fictitious zero-cost option absorbing unused mass.
//! * [`solve_constrained`]: margin-constrained entropy model as a saddle
//!   problem over the correspondence matrix and the margin potentials.
//! * [`gravity_sinkhorn`]: alternating scaling, exact when travel costs do
//!   not depend on the flows.

mod constrained;
mod potential;
mod sinkhorn;

use serde::{Deserialize, Serialize};

pub use constrained::{solve_constrained, ConstrainedProblem};
pub use potential::{pair_gradient, potential_certificate, potential_objective, solve_potential, PotentialCertificate, PotentialConfig};
pub use sinkhorn::{gravity_sinkhorn, SinkhornConfig, SinkhornResult};

use crate::assignment::{cost_map, DemandMatrix, SolveConfig};
use crate::network::Network;
use crate::{Error, Result};

/// Convex site function `σ(f) = α·f + β·f²/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaSite {
    pub node: usize,
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
}

impl SigmaSite {
    pub fn new(node: usize, alpha: f64, beta: f64) -> Self {
        SigmaSite { node, alpha, beta }
    }

    pub fn sigma(&self, f: f64) -> f64 {
        self.alpha * f + 0.5 * self.beta * f * f
    }

    pub fn marginal(&self, f: f64) -> f64 {
        self.alpha + self.beta * f
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::InvalidInstance(format!(
                "site at node {} needs finite alpha and beta >= 0",
                self.node
            )));
        }
        Ok(())
    }
}

/// Travel costs between sources and sinks.
#[derive(Debug, Clone)]
pub enum Transport {
    /// Flow-independent costs `T_ij`, sources by sinks.
    Fixed(Vec<Vec<f64>>),
    /// Equilibrium costs of a congested network; its od pairs are replaced
    /// by all source–sink combinations.
    Network(Network),
}

/// `Φ(d)` and `T(d) = ∇Φ(d)` over the source × sink pairs, flattened row
/// major.
#[derive(Debug, Clone)]
pub struct PairCosts {
    transport: Transport,
    rows: usize,
    cols: usize,
    cfg: SolveConfig,
}

impl PairCosts {
    pub fn new(transport: Transport, sources: &[usize], sinks: &[usize], cfg: SolveConfig) -> Result<Self> {
        let (rows, cols) = (sources.len(), sinks.len());
        let transport = match transport {
            Transport::Fixed(t) => {
                if t.len() != rows || t.iter().any(|r| r.len() != cols) {
                    return Err(Error::InvalidInstance(format!("fixed costs must be {rows} x {cols}")));
                }
                if t.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInstance("fixed costs must be finite".into()));
                }
                Transport::Fixed(t)
            }
            Transport::Network(net) => {
                let pairs = sources.iter().flat_map(|&i| sinks.iter().map(move |&j| (i, j))).collect();
                Transport::Network(net.with_od_pairs(pairs)?)
            }
        };
        Ok(PairCosts {
            transport,
            rows,
            cols,
            cfg,
        })
    }

    /// Tightens the inner assignment tolerance to at most `tol`.
    pub(crate) fn tighten(&mut self, tol: f64) {
        self.cfg.tol = self.cfg.tol.min(tol);
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn network(&self) -> Option<&Network> {
        match &self.transport {
            Transport::Network(n) => Some(n),
            Transport::Fixed(_) => None,
        }
    }

    pub fn solve_config(&self) -> &SolveConfig {
        &self.cfg
    }

    /// `(Φ(d), T(d))` for a flattened correspondence `d`.
    pub fn evaluate(&self, d: &[f64]) -> Result<(f64, Vec<f64>)> {
        match &self.transport {
            Transport::Fixed(t) => {
                let flat: Vec<f64> = t.iter().flatten().copied().collect();
                let phi = flat.iter().zip(d).map(|(a, b)| a * b).sum();
                Ok((phi, flat))
            }
            Transport::Network(net) => {
                let demands = DemandMatrix::scalar(d.iter().map(|v| v.max(0.0)).collect())?;
                let m = cost_map(net, &demands, &self.cfg)?;
                Ok((m.potential, m.od_costs))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", deny_unknown_fields)]
pub enum Mode {
    /// Total trade mass capped by `d_bar` (derived from the sites when absent).
    Potential {
        #[serde(default)]
        d_bar: Option<f64>,
    },
    /// Fixed margins with entropy weight `gamma`.
    Constrained { l: Vec<f64>, w: Vec<f64>, gamma: f64 },
}

#[derive(Debug, Clone)]
pub struct DistributionInstance {
    pub sources: Vec<SigmaSite>,
    pub sinks: Vec<SigmaSite>,
    pub costs: PairCosts,
    pub mode: Mode,
}

impl DistributionInstance {
    pub fn new(sources: Vec<SigmaSite>, sinks: Vec<SigmaSite>, transport: Transport, mode: Mode, cfg: SolveConfig) -> Result<Self> {
        for s in sources.iter().chain(&sinks) {
            s.validate()?;
        }
        if sources.is_empty() || sinks.is_empty() {
            return Err(Error::InvalidInstance("need at least one source and one sink".into()));
        }
        let src: Vec<usize> = sources.iter().map(|s| s.node).collect();
        let snk: Vec<usize> = sinks.iter().map(|s| s.node).collect();
        let costs = PairCosts::new(transport, &src, &snk, cfg)?;
        if let Mode::Constrained { l, w, gamma } = &mode {
            check_margins(l, w, sources.len(), sinks.len())?;
            if !(*gamma > 0.0 && gamma.is_finite()) {
                return Err(Error::Config(format!("gamma must be > 0, got {gamma}")));
            }
        }
        if let Mode::Potential { d_bar: Some(b) } = mode {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::Config(format!("d_bar must be > 0, got {b}")));
            }
        }
        Ok(DistributionInstance {
            sources,
            sinks,
            costs,
            mode,
        })
    }

    /// Instance with flow-independent costs.
    pub fn fixed(sources: Vec<SigmaSite>, sinks: Vec<SigmaSite>, costs: Vec<Vec<f64>>, mode: Mode) -> Result<Self> {
        Self::new(sources, sinks, Transport::Fixed(costs), mode, SolveConfig::default())
    }

    pub fn pair_count(&self) -> usize {
        self.sources.len() * self.sinks.len()
    }

    /// `d̄` used by the potential mode: the instance value, or ten times
    /// `Σ_ij max(0, −(α_i + α_j + T⁰_ij)) / (β_i + β_j)`, the sum of the
    /// largest volumes any single pair could want at zero-flow costs.
    pub fn d_bar(&self) -> Result<f64> {
        if let Mode::Potential { d_bar: Some(b) } = self.mode {
            return Ok(b);
        }
        let (_, t0) = self.costs.evaluate(&vec![0.0; self.pair_count()])?;
        let mut bound = 0.0;
        for (i, si) in self.sources.iter().enumerate() {
            for (j, sj) in self.sinks.iter().enumerate() {
                let gain = -(si.alpha + sj.alpha + t0[i * self.sinks.len() + j]);
                if gain <= 0.0 {
                    continue;
                }
                let curvature = si.beta + sj.beta;
                if curvature <= 0.0 {
                    return Err(Error::Config(
                        "d_bar must be given: a profitable pair has linear site functions".into(),
                    ));
                }
                bound += gain / curvature;
            }
        }
        Ok(10.0 * bound.max(1.0))
    }
}

pub(crate) fn check_margins(l: &[f64], w: &[f64], rows: usize, cols: usize) -> Result<f64> {
    if l.len() != rows || w.len() != cols {
        return Err(Error::InvalidInstance(format!("margins must have {rows} and {cols} entries")));
    }
    for (k, &v) in l.iter().chain(w).enumerate() {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Negative {
                what: "margin",
                index: k,
                value: v,
            });
        }
    }
    let (a, b): (f64, f64) = (l.iter().sum(), w.iter().sum());
    if (a - b).abs() > 1e-9 * a.max(b).max(1.0) || a <= 0.0 {
        return Err(Error::UnbalancedMargins { rows: a, cols: b });
    }
    Ok(a)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionResult {
    /// Sources by sinks.
    pub d: Vec<Vec<f64>>,
    /// Unused mass (potential mode).
    pub d0: Option<f64>,
    pub lambda_l: Vec<f64>,
    pub lambda_w: Vec<f64>,
    pub objective: f64,
    /// Largest margin violation (constrained mode).
    pub margin_residual: f64,
    /// Largest excess cost of a used option over the cheapest one
    /// (potential mode).
    pub equilibrium_residual: f64,
    pub saddle_gap: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The cap `d̄` binds: no mass is left on the fictitious option.
    pub cap_binds: bool,
}

pub(crate) fn unflatten(d: &[f64], cols: usize) -> Vec<Vec<f64>> {
    d.chunks(cols.max(1)).map(<[f64]>::to_vec).collect()
}

pub(crate) fn margin_residual(d: &[f64], l: &[f64], w: &[f64]) -> f64 {
    let cols = w.len();
    let mut worst: f64 = 0.0;
    for (i, li) in l.iter().enumerate() {
        let s: f64 = d[i * cols..(i + 1) * cols].iter().sum();
        worst = worst.max((s - li).abs());
    }
    for (j, wj) in w.iter().enumerate() {
        let s: f64 = (0..l.len()).map(|i| d[i * cols + j]).sum();
        worst = worst.max((s - wj).abs());
    }
    worst
}
