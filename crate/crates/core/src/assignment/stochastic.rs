use super::{beckmann_unchecked, reject_hard_caps, DemandMatrix, PathFlows, SolveConfig};
use crate::network::{enumerate_paths, EdgeVector, Network, Path};
use crate::{Error, Result};

const LOG_FLOOR: f64 = 1e-300;

/// Enumerated simple paths per od pair. Pairs without demand keep no paths.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub paths: Vec<Vec<Path>>,
    pub demands: Vec<f64>,
}

impl PathSet {
    pub fn enumerate(net: &Network, demands: &DemandMatrix, budget: usize) -> Result<Self> {
        demands.check_against(net)?;
        reject_hard_caps(net)?;
        let totals = demands.totals();
        let mut paths = Vec::with_capacity(totals.len());
        for (&(o, d), &dw) in net.od_pairs().iter().zip(&totals) {
            if dw > 0.0 {
                let ps = enumerate_paths(net, o, d, budget)?;
                if ps.is_empty() {
                    return Err(net.disconnected(o, d));
                }
                paths.push(ps);
            } else {
                paths.push(Vec::new());
            }
        }
        Ok(PathSet { paths, demands: totals })
    }

    /// Demand split evenly over each pair's paths.
    pub fn uniform(&self) -> Vec<Vec<f64>> {
        self.paths
            .iter()
            .zip(&self.demands)
            .map(|(ps, &d)| vec![d / ps.len().max(1) as f64; ps.len()])
            .collect()
    }

    pub fn link_flows(&self, net: &Network, x: &[Vec<f64>]) -> EdgeVector {
        let mut f = vec![0.0; net.edge_count()];
        for (ps, xs) in self.paths.iter().zip(x) {
            for (p, &v) in ps.iter().zip(xs) {
                for &e in &p.edges {
                    f[e] += v;
                }
            }
        }
        f
    }

    /// Path costs `G_p(x)`.
    pub fn path_costs(&self, net: &Network, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let times = net.times_at(&self.link_flows(net, x));
        self.paths.iter().map(|ps| ps.iter().map(|p| p.cost(&times)).collect()).collect()
    }

    pub fn to_path_flows(&self, x: &[Vec<f64>]) -> PathFlows {
        PathFlows {
            pairs: self
                .paths
                .iter()
                .zip(x)
                .map(|(ps, xs)| ps.iter().cloned().zip(xs.iter().copied()).collect())
                .collect(),
        }
    }

    /// `d_w · softmax(−G/γ)` per pair.
    pub fn logit_response(&self, costs: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
        costs
            .iter()
            .zip(&self.demands)
            .map(|(g, &d)| {
                let logits: Vec<f64> = g.iter().map(|c| -c / gamma).collect();
                scaled_softmax(&logits, d)
            })
            .collect()
    }
}

/// `mass · softmax(logits)`, shifted for stability.
pub(crate) fn scaled_softmax(logits: &[f64], mass: f64) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return vec![mass / logits.len().max(1) as f64; logits.len()];
    }
    let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| mass * v / s).collect()
}

pub(crate) fn xlogx_ratio(x: f64, d: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * (x / d).ln()
    }
}

/// `Ψ(f(x)) + γ Σ_w Σ_p x_p ln(x_p / d_w)`.
pub fn stochastic_objective(net: &Network, set: &PathSet, x: &[Vec<f64>], gamma: f64) -> f64 {
    let f = set.link_flows(net, x);
    let entropy: f64 = x
        .iter()
        .zip(&set.demands)
        .map(|(xs, &d)| xs.iter().map(|&v| xlogx_ratio(v, d)).sum::<f64>())
        .sum();
    beckmann_unchecked(net, &f) + gamma * entropy
}

/// `max_p |x_p − d_w softmax(−G(x)/γ)_p|`.
pub fn logit_fixed_point_residual(net: &Network, set: &PathSet, x: &[Vec<f64>], gamma: f64) -> f64 {
    let g = set.path_costs(net, x);
    max_abs_diff(x, &set.logit_response(&g, gamma))
}

pub(crate) fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(u, v)| u.iter().zip(v).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct StochasticResult {
    pub path_set: PathSet,
    pub flows: Vec<Vec<f64>>,
    pub link_flows: EdgeVector,
    pub objective: f64,
    pub fixed_point_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl StochasticResult {
    pub fn path_flows(&self) -> PathFlows {
        self.path_set.to_path_flows(&self.flows)
    }
}

/// Stochastic (Logit) equilibrium: minimises the entropy-regularised
/// Beckmann potential by entropic mirror descent on each pair's simplex.
///
/// The entropy enters through its exact prox; the step adapts by
/// backtracking on the smooth part. Stops when the Logit fixed-point
/// residual is at most `cfg.tol`.
pub fn solve_stochastic(net: &Network, demands: &DemandMatrix, cfg: &SolveConfig) -> Result<StochasticResult> {
    cfg.validate()?;
    let set = PathSet::enumerate(net, demands, cfg.path_budget)?;
    let gamma = cfg.gamma_tilde;
    let mut x = set.uniform();
    let mut eta = 1.0 / gamma;
    let mut iterations = 0;
    loop {
        let costs = set.path_costs(net, &x);
        let residual = max_abs_diff(&x, &set.logit_response(&costs, gamma));
        if !residual.is_finite() {
            return Err(Error::NonFinite {
                block: 0,
                iteration: iterations,
            });
        }
        if residual <= cfg.tol || iterations >= cfg.max_iter {
            let link_flows = set.link_flows(net, &x);
            let objective = stochastic_objective(net, &set, &x, gamma);
            return Ok(StochasticResult {
                path_set: set,
                flows: x,
                link_flows,
                objective,
                fixed_point_residual: residual,
                iterations,
                converged: residual <= cfg.tol,
            });
        }
        let smooth = beckmann_unchecked(net, &set.link_flows(net, &x));
        loop {
            let next = entropic_prox(&x, &costs, &set.demands, eta, gamma);
            let next_smooth = beckmann_unchecked(net, &set.link_flows(net, &next));
            let lin: f64 = inner(&costs, &next) - inner(&costs, &x);
            let bound = smooth + lin + kl(&next, &x) / eta;
            if next_smooth <= bound + 1e-14 * (1.0 + smooth.abs()) || eta < 1e-12 {
                x = next;
                eta *= 1.25;
                break;
            }
            eta *= 0.5;
        }
        iterations += 1;
    }
}

/// `argmin_u η⟨g, u⟩ + ηγ Σ u ln u + KL(u, x)` on each simplex of mass `d_w`.
pub(crate) fn entropic_prox(x: &[Vec<f64>], g: &[Vec<f64>], mass: &[f64], eta: f64, gamma: f64) -> Vec<Vec<f64>> {
    let shrink = 1.0 / (1.0 + eta * gamma);
    x.iter()
        .zip(g)
        .zip(mass)
        .map(|((xs, gs), &d)| {
            let logits: Vec<f64> = xs
                .iter()
                .zip(gs)
                .map(|(&v, &c)| (v.max(LOG_FLOOR).ln() - eta * c) * shrink)
                .collect();
            scaled_softmax(&logits, d)
        })
        .collect()
}

fn inner(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).flat_map(|(u, v)| u.iter().zip(v).map(|(p, q)| p * q)).sum()
}

fn kl(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(u, v)| {
            u.iter()
                .zip(v)
                .map(|(&p, &q)| if p <= 0.0 { q } else { p * (p / q.max(LOG_FLOOR)).ln() - p + q })
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::solve_wardrop;
    use crate::network::fixtures::*;

    fn unit() -> DemandMatrix {
        DemandMatrix::scalar(vec![1.0]).unwrap()
    }

    #[test]
    fn identical_paths_split_evenly() {
        let net = two_links(affine(1.0, 2.0), affine(1.0, 2.0));
        for &g in &[0.1, 1.0, 10.0] {
            let cfg = SolveConfig {
                gamma_tilde: g,
                tol: 1e-10,
                ..SolveConfig::default()
            };
            let r = solve_stochastic(&net, &unit(), &cfg).unwrap();
            assert!((r.flows[0][0] - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_costs_give_softmax() {
        let net = two_links(affine(0.0, 0.0), affine(3f64.ln(), 0.0));
        let cfg = SolveConfig {
            gamma_tilde: 1.0,
            tol: 1e-12,
            ..SolveConfig::default()
        };
        let r = solve_stochastic(&net, &unit(), &cfg).unwrap();
        assert!(r.converged);
        assert!((r.flows[0][0] - 0.75).abs() < 1e-10);
        assert!((r.flows[0][1] - 0.25).abs() < 1e-10);
    }

    #[test]
    fn hot_temperature_is_uniform() {
        let cfg = SolveConfig {
            gamma_tilde: 1e6,
            tol: 1e-10,
            ..SolveConfig::default()
        };
        let r = solve_stochastic(&pigou(), &unit(), &cfg).unwrap();
        assert!((r.flows[0][0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn cold_temperature_approaches_wardrop() {
        let cfg = SolveConfig {
            gamma_tilde: 1e-4,
            tol: 1e-7,
            ..SolveConfig::default()
        };
        let r = solve_stochastic(&pigou(), &unit(), &cfg).unwrap();
        assert!(r.converged, "residual {}", r.fixed_point_residual);
        let w = solve_wardrop(&pigou(), &unit(), &SolveConfig::default()).unwrap();
        for k in 0..2 {
            assert!((r.link_flows[k] - w.flows[k]).abs() < 1e-2);
        }
    }

    #[test]
    fn fixed_point_on_braess() {
        let net = braess(&[
            affine(0.0, 1.0),
            affine(1.0, 0.0),
            affine(1.0, 0.0),
            affine(0.0, 1.0),
            affine(0.1, 0.0),
        ]);
        let cfg = SolveConfig {
            gamma_tilde: 0.3,
            tol: 1e-9,
            ..SolveConfig::default()
        };
        let d = DemandMatrix::scalar(vec![2.0]).unwrap();
        let r = solve_stochastic(&net, &d, &cfg).unwrap();
        assert!(r.converged);
        assert!(logit_fixed_point_residual(&net, &r.path_set, &r.flows, 0.3) <= 1e-9);
        let mass: f64 = r.flows[0].iter().sum();
        assert!((mass - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_demand_pairs_are_dropped() {
        let net = pigou();
        let d = DemandMatrix::scalar(vec![0.0]).unwrap();
        let r = solve_stochastic(&net, &d, &SolveConfig::default()).unwrap();
        assert!(r.flows[0].is_empty());
        assert!(r.converged);
    }

    #[test]
    fn budget_overflow_is_reported() {
        let net = braess(&[affine(1.0, 0.0); 5]);
        let cfg = SolveConfig {
            path_budget: 2,
            ..SolveConfig::default()
        };
        assert!(matches!(solve_stochastic(&net, &unit(), &cfg), Err(Error::PathBudget { .. })));
    }
}
