use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-edge travel-time function `τ(f)` together with its integral
/// `σ(f) = ∫₀^f τ` and the convex conjugate `σ*(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostFunction {
    /// `τ(f) = a + b·f`.
    Affine { a: f64, b: f64 },
    /// `τ(f) = t̄·(1 + ρ·(f/f̄)^q)`.
    Bpr {
        free_flow: f64,
        capacity: f64,
        rho: f64,
        power: f64,
    },
    /// Constant time `t̄` up to a hard capacity `f̄`.
    HardCap { free_flow: f64, capacity: f64 },
}

/// `x^p`, by repeated multiplication when `p` is a small integer (the
/// usual BPR powers), which is several times faster than `powf`.
fn pow(x: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && (0.0..=32.0).contains(&p) {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

impl CostFunction {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidNetwork(msg));
        match *self {
            CostFunction::Affine { a, b } => {
                if !(a.is_finite() && a >= 0.0) {
                    return bad(format!("affine intercept must be finite and >= 0, got {a}"));
                }
                if !(b.is_finite() && b >= 0.0) {
                    return bad(format!("affine slope must be finite and >= 0, got {b}"));
                }
            }
            CostFunction::Bpr {
                free_flow,
                capacity,
                rho,
                power,
            } => {
                if !(free_flow.is_finite() && free_flow > 0.0) {
                    return bad(format!("BPR free-flow time must be > 0, got {free_flow}"));
                }
                if !(capacity.is_finite() && capacity > 0.0) {
                    return bad(format!("BPR capacity must be > 0, got {capacity}"));
                }
                if !(rho.is_finite() && rho > 0.0) {
                    return bad(format!("BPR rho must be > 0, got {rho}"));
                }
                if !(power.is_finite() && power >= 1.0) {
                    return bad(format!("BPR power must be >= 1, got {power}"));
                }
            }
            CostFunction::HardCap { free_flow, capacity } => {
                if !(free_flow.is_finite() && free_flow > 0.0) {
                    return bad(format!("hard-cap free-flow time must be > 0, got {free_flow}"));
                }
                if !(capacity.is_finite() && capacity > 0.0) {
                    return bad(format!("hard-cap capacity must be > 0, got {capacity}"));
                }
            }
        }
        Ok(())
    }

    pub fn is_hard_cap(&self) -> bool {
        matches!(self, CostFunction::HardCap { .. })
    }

    /// `τ(0)`.
    pub fn free_flow_time(&self) -> f64 {
        match *self {
            CostFunction::Affine { a, .. } => a,
            CostFunction::Bpr { free_flow, .. } | CostFunction::HardCap { free_flow, .. } => free_flow,
        }
    }

    /// Largest time the dual variable of this edge can usefully take:
    /// constant edges are pinned at `a`, everything else is unbounded.
    pub fn max_time(&self) -> f64 {
        match *self {
            CostFunction::Affine { a, b: 0.0 } => a,
            _ => f64::INFINITY,
        }
    }

    /// Travel time at flow `f`. Hard-cap edges return `+∞` above capacity.
    pub fn tau(&self, f: f64) -> f64 {
        match *self {
            CostFunction::Affine { a, b } => a + b * f,
            CostFunction::Bpr {
                free_flow,
                capacity,
                rho,
                power,
            } => free_flow * (1.0 + rho * pow(f / capacity, power)),
            CostFunction::HardCap { free_flow, capacity } => {
                if f <= capacity {
                    free_flow
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn tau_derivative(&self, f: f64) -> f64 {
        match *self {
            CostFunction::Affine { b, .. } => b,
            CostFunction::Bpr {
                free_flow,
                capacity,
                rho,
                power,
            } => free_flow * rho * power * pow(f / capacity, power - 1.0) / capacity,
            CostFunction::HardCap { .. } => 0.0,
        }
    }

    /// `σ(f) = ∫₀^f τ(z) dz`.
    pub fn sigma(&self, f: f64) -> f64 {
        match *self {
            CostFunction::Affine { a, b } => a * f + 0.5 * b * f * f,
            CostFunction::Bpr {
                free_flow,
                capacity,
                rho,
                power,
            } => free_flow * f + free_flow * rho * capacity * pow(f / capacity, power + 1.0) / (power + 1.0),
            CostFunction::HardCap { free_flow, capacity } => {
                if f <= capacity {
                    free_flow * f
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// The flow at which this edge costs `t`, i.e. the derivative of `σ*`.
    /// Below `τ(0)` this is zero; on flat pieces the smallest flow is chosen.
    pub fn flow_at(&self, t: f64) -> f64 {
        match *self {
            CostFunction::Affine { a, b } => {
                if t <= a {
                    0.0
                } else if b == 0.0 {
                    f64::INFINITY
                } else {
                    (t - a) / b
                }
            }
            CostFunction::Bpr {
                free_flow,
                capacity,
                rho,
                power,
            } => {
                if t <= free_flow {
                    0.0
                } else {
                    capacity * ((t / free_flow - 1.0) / rho).powf(1.0 / power)
                }
            }
            CostFunction::HardCap { free_flow, capacity } => {
                if t <= free_flow {
                    0.0
                } else {
                    capacity
                }
            }
        }
    }

    /// `σ*(t) = sup_{f ≥ 0} [f·t − σ(f)]`, in closed form for every family.
    pub fn sigma_conjugate(&self, t: f64) -> f64 {
        match *self {
            CostFunction::Affine { a, b } => {
                if t <= a {
                    0.0
                } else if b == 0.0 {
                    f64::INFINITY
                } else {
                    (t - a) * (t - a) / (2.0 * b)
                }
            }
            CostFunction::Bpr { free_flow, .. } => {
                if t <= free_flow {
                    0.0
                } else {
                    let f = self.flow_at(t);
                    f * t - self.sigma(f)
                }
            }
            CostFunction::HardCap { free_flow, capacity } => capacity * (t - free_flow).max(0.0),
        }
    }
}

fn check_flow(f: f64) -> Result<()> {
    if f.is_nan() || f < 0.0 {
        return Err(Error::Negative {
            what: "flow",
            index: 0,
            value: f,
        });
    }
    Ok(())
}

/// Travel time at flow `f`; rejects negative flows and hard-cap edges.
pub fn edge_tau(cf: &CostFunction, f: f64) -> Result<f64> {
    check_flow(f)?;
    if cf.is_hard_cap() {
        return Err(Error::HardCapEdge(0));
    }
    Ok(cf.tau(f))
}

pub fn edge_sigma(cf: &CostFunction, f: f64) -> Result<f64> {
    check_flow(f)?;
    Ok(cf.sigma(f))
}

pub fn edge_sigma_conjugate(cf: &CostFunction, t: f64) -> Result<f64> {
    if t.is_nan() {
        return Err(Error::Negative {
            what: "time",
            index: 0,
            value: t,
        });
    }
    Ok(cf.sigma_conjugate(t))
}
