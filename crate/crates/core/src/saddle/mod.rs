//! Convex-concave saddle problems over products of simple blocks.
//!
//! A problem is `min_x max_y φ(x, y) + Σ_b γ_b h_b(z_b)`, where every block
//! `z_b` lives in a simplex, an orthant, a box or the whole space and `h_b`
//! is an optional entropy term (convex on min blocks, entering with a minus
//! sign on max blocks). Problems expose the monotone operator
//! `F = (∇_x φ, −∇_y φ)`; the entropy terms are handled exactly inside the
//! prox steps.

mod engine;
mod games;
pub(crate) mod geometry;
mod swap;

use serde::{Deserialize, Serialize};

pub use engine::{best_response_gap, mirror_prox, monotonicity_defect};
pub use games::{spectral_norm, Bilinear, MatrixGame};
pub use swap::{order_swap_check, SwapCheck, SwapConfig};

use crate::{Error, Result};

/// One vector per block.
pub type Point = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// `{z ≥ 0, Σz = mass}`.
    Simplex {
        mass: f64,
    },
    Orthant,
    /// `lower ≤ z ≤ upper`, componentwise. Upper bounds may be infinite.
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    Entropy,
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub side: Side,
    pub dim: usize,
    pub domain: Domain,
    pub geometry: Geometry,
    /// Weight `γ_b` of the entropy term `Σ z ln z` (`Σ z ln(z/mass)` on a
    /// simplex). Only entropy blocks may carry one.
    pub entropy_weight: f64,
    /// Multiplies the global step on this block.
    pub step_scale: f64,
}

impl BlockSpec {
    pub fn new(side: Side, dim: usize, domain: Domain, geometry: Geometry) -> Self {
        BlockSpec {
            side,
            dim,
            domain,
            geometry,
            entropy_weight: 0.0,
            step_scale: 1.0,
        }
    }

    pub fn with_entropy(mut self, weight: f64) -> Self {
        self.entropy_weight = weight;
        self
    }

    pub fn with_step_scale(mut self, scale: f64) -> Self {
        self.step_scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match &self.domain {
            Domain::Simplex { mass } if !(mass.is_finite() && *mass >= 0.0) => {
                return bad(format!("simplex mass must be finite and >= 0, got {mass}"));
            }
            Domain::Box { lower, upper } => {
                if lower.len() != self.dim || upper.len() != self.dim {
                    return bad("box bounds do not match the block dimension".into());
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l.is_finite() && l <= u)) {
                    return bad("box bounds must satisfy finite lower <= upper".into());
                }
            }
            _ => {}
        }
        if self.geometry == Geometry::Entropy && !matches!(self.domain, Domain::Simplex { .. } | Domain::Orthant) {
            return bad("entropy geometry needs a simplex or orthant block".into());
        }
        if !(self.entropy_weight >= 0.0 && self.entropy_weight.is_finite()) {
            return bad(format!("entropy weight must be >= 0, got {}", self.entropy_weight));
        }
        if self.entropy_weight > 0.0 && self.geometry != Geometry::Entropy {
            return bad("an entropy term needs entropy geometry".into());
        }
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return bad(format!("step scale must be > 0, got {}", self.step_scale));
        }
        Ok(())
    }

    /// A feasible interior-ish starting point.
    pub fn default_point(&self) -> Vec<f64> {
        match &self.domain {
            Domain::Simplex { mass } => vec![mass / self.dim.max(1) as f64; self.dim],
            Domain::Orthant if self.geometry == Geometry::Entropy => vec![1.0; self.dim],
            Domain::Orthant | Domain::Free => vec![0.0; self.dim],
            Domain::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| if u.is_finite() { 0.5 * (l + u) } else { *l })
                .collect(),
        }
    }

    pub fn contains(&self, z: &[f64], tol: f64) -> bool {
        if z.len() != self.dim || z.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match &self.domain {
            Domain::Simplex { mass } => z.iter().all(|&v| v >= 0.0) && (z.iter().sum::<f64>() - mass).abs() <= tol * mass.max(1.0),
            Domain::Orthant => z.iter().all(|&v| v >= 0.0),
            Domain::Box { lower, upper } => z.iter().zip(lower.iter().zip(upper)).all(|(v, (l, u))| v >= l && v <= u),
            Domain::Free => true,
        }
    }
}

/// Operator value at a point: one gradient vector per block plus optional
/// problem-specific side outputs (averaged alongside the iterates).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Oracle {
    pub grad: Point,
    pub aux: Vec<f64>,
}

pub trait SaddleProblem: Sync {
    fn blocks(&self) -> &[BlockSpec];

    /// `F(z) = (∇_x φ, −∇_y φ)`, without the entropy terms.
    fn operator(&self, z: &Point) -> Result<Oracle>;

    /// `φ(z)` without the entropy terms, if available.
    fn value(&self, _z: &Point) -> Option<f64> {
        None
    }

    fn initial_point(&self) -> Point {
        self.blocks().iter().map(BlockSpec::default_point).collect()
    }

    /// Lipschitz estimate of `F`, used for the default step `1/(2L)`.
    fn lipschitz_hint(&self) -> Option<f64> {
        None
    }

    /// Problem-specific residual that replaces the gap as the stopping test.
    fn stop_metric(&self, _z: &Point, _aux: &[f64]) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaddleConfig {
    /// Global step; `None` means `1/(2L)` from the problem hint, else 0.1.
    pub step: Option<f64>,
    pub max_iter: usize,
    pub tol: f64,
    /// Iterations between gap evaluations.
    pub check_every: usize,
    /// Halve the step until each extragradient pair passes the mirror-prox
    /// acceptance test.
    pub adaptive: bool,
    /// Also stop when the last iterate meets the tolerance.
    pub last_iterate_stop: bool,
    /// Length of the first stage of a restart schedule: at the end of each
    /// stage (rounded up to a checkpoint) the run restarts from the averaged
    /// point with half the step and a stage twice as long. Suited to
    /// nonsmooth operators, where a fixed step leaves the iterates
    /// chattering around kinks and only averages settle.
    pub restart_every: Option<usize>,
}

impl Default for SaddleConfig {
    fn default() -> Self {
        SaddleConfig {
            step: None,
            max_iter: 100_000,
            tol: 1e-6,
            check_every: 10,
            adaptive: true,
            last_iterate_stop: true,
            restart_every: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Certificate gap of the averaged iterate.
    pub gap: f64,
    pub step: f64,
    pub metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverTrace {
    pub records: Vec<TraceRecord>,
    pub averaged: Point,
    pub averaged_aux: Vec<f64>,
    pub last: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleSolution {
    /// The better of the averaged and the last iterate.
    pub z: Point,
    pub aux: Vec<f64>,
    pub gap: f64,
    pub averaged_gap: f64,
    pub last_gap: f64,
    pub used_average: bool,
    pub metric: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub step: f64,
}

pub(crate) fn check_point(blocks: &[BlockSpec], z: &Point) -> Result<()> {
    if z.len() != blocks.len() {
        return Err(Error::Config(format!("point has {} blocks, problem has {}", z.len(), blocks.len())));
    }
    for (b, (spec, zb)) in blocks.iter().zip(z).enumerate() {
        if zb.len() != spec.dim {
            return Err(Error::Config(format!(
                "block {b} has dimension {}, expected {}",
                zb.len(),
                spec.dim
            )));
        }
    }
    Ok(())
}
