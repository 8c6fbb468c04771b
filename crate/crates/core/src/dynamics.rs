//! Mean-field population dynamics whose rest points are the stochastic
//! equilibria.
//!
//! Each state is a set of blocks (one per od pair for path choice, a single
//! simplex of mass `d̄` for trip distribution), each a vector of masses.
//! At every step the population moves toward its Logit response
//! `d·softmax(−G(x)/γ)`:
//!
//! * [`DynamicsKind::Logit`] mixes arithmetically, `x⁺ = (1−h)x + h·BR(x)`;
//! * [`DynamicsKind::ImitationLogit`] mixes geometrically,
//!   `x⁺ ∝ x^{1−h}·BR(x)^h`, which is an entropic mirror step of size
//!   `h/γ` on the entropy-regularised potential. Options with zero mass
//!   are never imitated.
//!
//! Both keep the mass of every block exactly and record the regularised
//! potential, which serves as a Lyapunov function.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::{stochastic_objective, DemandMatrix, PathSet};
use crate::distribution::{pair_gradient, DistributionInstance, Mode};
use crate::network::Network;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsKind {
    Logit,
    ImitationLogit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    /// Mass split evenly within each block.
    Uniform,
    /// Exponential weights drawn from the seeded generator.
    Random,
    /// Explicit state, one vector per block.
    Given(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub kind: DynamicsKind,
    /// Logit temperature (`γ̃` for routes, `γ` for trip distribution).
    pub temperature: f64,
    /// Euler step `h ∈ (0, 1]`.
    pub step: f64,
    /// Number of steps.
    pub horizon: usize,
    pub seed: u64,
    pub start: Start,
    /// Maximum number of simple paths per od pair.
    pub path_budget: usize,
    /// Inner assignment tolerance when distribution costs come from a
    /// network.
    pub inner_tol: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            kind: DynamicsKind::Logit,
            temperature: 1.0,
            step: 0.5,
            horizon: 1000,
            seed: 0,
            start: Start::Uniform,
            path_budget: 64,
            inner_tol: 1e-12,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(Error::Config(format!("step must lie in (0, 1], got {}", self.step)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    /// Column names of the flattened state.
    pub labels: Vec<String>,
    /// Flattened state at steps `0..=horizon`.
    pub states: Vec<Vec<f64>>,
    /// Regularised potential at each state.
    pub lyapunov: Vec<f64>,
    /// `max |x − BR(x)|`, zero exactly at the rest point.
    pub distance: Vec<f64>,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().map_or(&[], Vec::as_slice)
    }

    /// Largest one-step increase of the Lyapunov value (negative when it
    /// strictly decreases throughout).
    pub fn max_ascent(&self) -> f64 {
        self.lyapunov.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
    }

    /// CSV with a header row and one row per step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push_str(",lyapunov,distance\n");
        for (k, s) in self.states.iter().enumerate() {
            let _ = write!(out, "{k}");
            for v in s {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{},{}", self.lyapunov[k], self.distance[k]);
        }
        out
    }
}

/// `mass · softmax(logits)`; entries at `−∞` stay at zero.
fn softmax(logits: &[f64], mass: f64) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return vec![mass / logits.len().max(1) as f64; logits.len()];
    }
    let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| mass * v / s).collect()
}

fn response(g: &[f64], mass: f64, temperature: f64) -> Vec<f64> {
    softmax(&g.iter().map(|c| -c / temperature).collect::<Vec<_>>(), mass)
}

fn step_block(kind: DynamicsKind, x: &[f64], g: &[f64], mass: f64, cfg: &DynamicsConfig) -> Vec<f64> {
    let h = cfg.step;
    match kind {
        DynamicsKind::Logit => {
            let br = response(g, mass, cfg.temperature);
            let mut next: Vec<f64> = x.iter().zip(&br).map(|(a, b)| (1.0 - h) * a + h * b).collect();
            // keep the mass exact against rounding
            let total: f64 = next.iter().sum();
            if total > 0.0 {
                next.iter_mut().for_each(|v| *v *= mass / total);
            }
            next
        }
        DynamicsKind::ImitationLogit => {
            let logits: Vec<f64> = x
                .iter()
                .zip(g)
                .map(|(&a, &c)| {
                    if a > 0.0 {
                        (1.0 - h) * a.ln() - h * c / cfg.temperature
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            softmax(&logits, mass)
        }
    }
}

fn initial(masses: &[f64], sizes: &[usize], cfg: &DynamicsConfig) -> Result<Vec<Vec<f64>>> {
    match &cfg.start {
        Start::Uniform => Ok(masses.iter().zip(sizes).map(|(&m, &n)| vec![m / n.max(1) as f64; n]).collect()),
        Start::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            Ok(masses
                .iter()
                .zip(sizes)
                .map(|(&m, &n)| {
                    let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
                    let s: f64 = w.iter().sum();
                    w.iter().map(|v| m * v / s).collect()
                })
                .collect())
        }
        Start::Given(x) => {
            if x.len() != sizes.len() || x.iter().zip(sizes).any(|(b, &n)| b.len() != n) {
                return Err(Error::InvalidInstance(format!("start state must have blocks of sizes {sizes:?}")));
            }
            for (b, &m) in x.iter().zip(masses) {
                if b.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::InvalidInstance("start state must be finite and >= 0".into()));
                }
                let s: f64 = b.iter().sum();
                if (s - m).abs() > 1e-9 * m.max(1.0) {
                    return Err(Error::InvalidInstance(format!("start block sums to {s}, expected {m}")));
                }
            }
            Ok(x.clone())
        }
    }
}

/// Runs the dynamics given per-block costs and the Lyapunov function.
fn simulate<C, L>(labels: Vec<String>, masses: &[f64], sizes: &[usize], cfg: &DynamicsConfig, costs: C, lyapunov: L) -> Result<Trajectory>
where
    C: Fn(&[Vec<f64>]) -> Result<Vec<Vec<f64>>>,
    L: Fn(&[Vec<f64>]) -> Result<f64>,
{
    cfg.validate()?;
    let mut x = initial(masses, sizes, cfg)?;
    let mut traj = Trajectory {
        labels,
        states: Vec::with_capacity(cfg.horizon + 1),
        lyapunov: Vec::with_capacity(cfg.horizon + 1),
        distance: Vec::with_capacity(cfg.horizon + 1),
    };
    for k in 0..=cfg.horizon {
        let g = costs(&x)?;
        let mut dist: f64 = 0.0;
        for ((b, gb), &m) in x.iter().zip(&g).zip(masses) {
            for (a, r) in b.iter().zip(response(gb, m, cfg.temperature)) {
                dist = dist.max((a - r).abs());
            }
        }
        let value = lyapunov(&x)?;
        if !(value.is_finite() && dist.is_finite()) {
            return Err(Error::NonFinite { block: 0, iteration: k });
        }
        traj.states.push(x.iter().flatten().copied().collect());
        traj.lyapunov.push(value);
        traj.distance.push(dist);
        if k < cfg.horizon {
            x = x
                .iter()
                .zip(&g)
                .zip(masses)
                .map(|((b, gb), &m)| step_block(cfg.kind, b, gb, m, cfg))
                .collect();
        }
    }
    Ok(traj)
}

/// Route choice: one block per od pair over its enumerated paths, costs
/// `G_p(x)` from the link times; the Lyapunov value is the
/// entropy-regularised Beckmann potential.
pub fn simulate_path_logit(net: &Network, demands: &DemandMatrix, cfg: &DynamicsConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let set = PathSet::enumerate(net, demands, cfg.path_budget)?;
    let sizes: Vec<usize> = set.paths.iter().map(Vec::len).collect();
    let labels = sizes
        .iter()
        .enumerate()
        .flat_map(|(w, &n)| (0..n).map(move |p| format!("x_{w}_{p}")))
        .collect();
    simulate(
        labels,
        &set.demands.clone(),
        &sizes,
        cfg,
        |x| Ok(set.path_costs(net, x)),
        |x| Ok(stochastic_objective(net, &set, x, cfg.temperature)),
    )
}

/// Trip distribution in potential mode: a single block `(d, d₀)` of mass
/// `d̄`, costs `G_ij(d)` with the equilibrium transport costs recomputed at
/// every step and `G₀ = 0` for the unused mass.
pub fn simulate_corr_logit(inst: &DistributionInstance, cfg: &DynamicsConfig) -> Result<Trajectory> {
    if !matches!(inst.mode, Mode::Potential { .. }) {
        return Err(Error::Config("instance is not in potential mode".into()));
    }
    let mut inst = inst.clone();
    inst.costs.tighten(cfg.inner_tol);
    let d_bar = inst.d_bar()?;
    let p = inst.pair_count();
    let cols = inst.sinks.len();
    let mut labels: Vec<String> = (0..p).map(|k| format!("d_{}_{}", k / cols, k % cols)).collect();
    labels.push("d0".into());
    let gamma = cfg.temperature;
    simulate(
        labels,
        &[d_bar],
        &[p + 1],
        cfg,
        |x| {
            let (_, mut g) = pair_gradient(&inst, &x[0][..p])?;
            g.push(0.0);
            Ok(vec![g])
        },
        |x| {
            let (v, _) = pair_gradient(&inst, &x[0][..p])?;
            let ent: f64 = x[0].iter().filter(|v| **v > 0.0).map(|v| v * (v / d_bar).ln()).sum();
            Ok(v + gamma * ent)
        },
    )
}
