use serde::{Deserialize, Serialize};

use super::{unflatten, DistributionInstance, DistributionResult, Mode, PairCosts};
use crate::assignment::FLOW_EPS;
use crate::saddle::geometry::{divergence, entropy, prox, Extra};
use crate::saddle::{BlockSpec, Domain, Geometry, Side};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Entropy weight on all options (pairs and the unused mass); `None`
    /// solves the plain potential game.
    pub gamma: Option<f64>,
}

impl Default for PotentialConfig {
    fn default() -> Self {
        PotentialConfig {
            tol: 1e-8,
            max_iter: 100_000,
            gamma: None,
        }
    }
}

fn site_flows(inst: &DistributionInstance, d: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let cols = inst.sinks.len();
    let rows: Vec<f64> = (0..inst.sources.len()).map(|i| d[i * cols..(i + 1) * cols].iter().sum()).collect();
    let sums: Vec<f64> = (0..cols).map(|j| (0..inst.sources.len()).map(|i| d[i * cols + j]).sum()).collect();
    (rows, sums)
}

fn evaluate(inst: &DistributionInstance, costs: &PairCosts, d: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (fi, fj) = site_flows(inst, d);
    let (phi, t) = costs.evaluate(d)?;
    let cols = inst.sinks.len();
    let value = phi
        + inst.sources.iter().zip(&fi).map(|(s, f)| s.sigma(*f)).sum::<f64>()
        + inst.sinks.iter().zip(&fj).map(|(s, f)| s.sigma(*f)).sum::<f64>();
    let g = (0..d.len())
        .map(|k| {
            let (i, j) = (k / cols, k % cols);
            inst.sources[i].marginal(fi[i]) + t[k] + inst.sinks[j].marginal(fj[j])
        })
        .collect();
    Ok((value, g))
}

/// `Ψ̃(d) = Σ_i σ_i(f_i) + Σ_j σ_j(f_j) + Φ(d)` for a flattened `d`.
pub fn potential_objective(inst: &DistributionInstance, d: &[f64]) -> Result<f64> {
    Ok(evaluate(inst, &inst.costs, d)?.0)
}

/// `Ψ̃(d)` and the pair costs `G_ij = σ_i′(f_i) + T_ij(d) + σ_j′(f_j)`.
pub fn pair_gradient(inst: &DistributionInstance, d: &[f64]) -> Result<(f64, Vec<f64>)> {
    evaluate(inst, &inst.costs, d)
}

/// Potential-game equilibrium on `{d ≥ 0, Σd + d₀ = d̄}` by projected
/// gradient with backtracking (or composite entropic mirror descent when
/// `cfg.gamma` is set). The unused mass `d₀` has cost 0.
pub fn solve_potential(inst: &DistributionInstance, cfg: &PotentialConfig) -> Result<DistributionResult> {
    if !matches!(inst.mode, Mode::Potential { .. }) {
        return Err(Error::Config("instance is not in potential mode".into()));
    }
    if !(cfg.tol > 0.0) {
        return Err(Error::Config(format!("tol must be > 0, got {}", cfg.tol)));
    }
    if let Some(g) = cfg.gamma {
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::Config(format!("gamma must be > 0, got {g}")));
        }
    }
    let mut costs = inst.costs.clone();
    costs.cfg.tol = costs.cfg.tol.min(1e-8).min(cfg.tol / 100.0);
    let d_bar = inst.d_bar()?;
    let p = inst.pair_count();
    let geometry = if cfg.gamma.is_some() {
        Geometry::Entropy
    } else {
        Geometry::Euclidean
    };
    let spec = BlockSpec::new(Side::Min, p + 1, Domain::Simplex { mass: d_bar }, geometry);
    let extra = cfg.gamma.map_or(Extra::None, Extra::Entropy);
    let gamma = cfg.gamma.unwrap_or(0.0);

    let eval = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (v, mut g) = evaluate(inst, &costs, &x[..p])?;
        g.push(0.0);
        Ok((v, g))
    };
    let mut x = spec.default_point();
    let (mut fx, mut gx) = eval(&x)?;
    let mut eta = 1.0;
    let mut iterations = 0;
    let residual = |x: &[f64], g: &[f64]| -> f64 {
        let target = match cfg.gamma {
            Some(_) => prox(&spec, &vec![1.0; p + 1], g, 1.0 / gamma, Extra::None),
            None => prox(&spec, x, g, 1.0, Extra::None),
        };
        x.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let mut r = residual(&x, &gx);
    while r > cfg.tol && iterations < cfg.max_iter {
        loop {
            let u = prox(&spec, &x, &gx, eta, extra);
            let (fu, gu) = eval(&u)?;
            // gradient form of the descent test; immune to rounding in f
            let curv: f64 = gu
                .iter()
                .zip(&gx)
                .zip(u.iter().zip(&x))
                .map(|((a, b), (c, d))| (a - b) * (c - d))
                .sum();
            if curv <= 0.0 || curv <= divergence(&spec, &u, &x) / eta || eta < 1e-14 {
                x = u;
                fx = fu;
                gx = gu;
                eta = (eta * 1.25).min(1e6);
                break;
            }
            eta *= 0.5;
        }
        iterations += 1;
        r = residual(&x, &gx);
    }

    let floor = gx[..p].iter().copied().fold(0.0f64, f64::min);
    let mut eq: f64 = 0.0;
    for k in 0..=p {
        if x[k] > FLOW_EPS {
            eq = eq.max(gx[k] - floor);
        }
    }
    let objective = fx + if gamma > 0.0 { gamma * entropy(&spec, &x) } else { 0.0 };
    Ok(DistributionResult {
        d: unflatten(&x[..p], inst.sinks.len()),
        d0: Some(x[p]),
        lambda_l: Vec::new(),
        lambda_w: Vec::new(),
        objective,
        margin_residual: 0.0,
        equilibrium_residual: eq,
        saddle_gap: 0.0,
        iterations,
        converged: r <= cfg.tol,
        cap_binds: x[p] <= FLOW_EPS * d_bar.max(1.0),
    })
}

/// Residuals of a claimed potential-mode solution `(d, d₀)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PotentialCertificate {
    /// `Ψ̃`, plus `γ Σ x ln(x/d̄)` in entropic mode.
    pub objective: f64,
    /// Largest excess cost of a used option over the cheapest one.
    pub equilibrium_residual: f64,
    /// Entropic mode: `max |x − d̄ softmax(−G/γ)|`.
    pub logit_residual: Option<f64>,
    /// `|Σd + d₀ − d̄|`.
    pub mass_residual: f64,
}

pub fn potential_certificate(inst: &DistributionInstance, d: &[f64], d0: f64, gamma: Option<f64>) -> Result<PotentialCertificate> {
    let p = inst.pair_count();
    if d.len() != p {
        return Err(Error::InvalidInstance(format!("expected {p} pair flows, got {}", d.len())));
    }
    if let Some((index, &value)) = d.iter().chain([&d0]).enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Negative {
            what: "pair flow",
            index,
            value,
        });
    }
    let d_bar = inst.d_bar()?;
    let (value, mut g) = evaluate(inst, &inst.costs, d)?;
    g.push(0.0);
    let mut x = d.to_vec();
    x.push(d0);
    let floor = g[..p].iter().copied().fold(0.0f64, f64::min);
    let equilibrium_residual = x
        .iter()
        .zip(&g)
        .filter(|(v, _)| **v > FLOW_EPS)
        .map(|(_, gk)| gk - floor)
        .fold(0.0, f64::max);
    let spec = BlockSpec::new(Side::Min, p + 1, Domain::Simplex { mass: d_bar }, Geometry::Entropy);
    let (objective, logit_residual) = match gamma {
        Some(gm) => {
            let target = prox(&spec, &vec![1.0; p + 1], &g, 1.0 / gm, Extra::None);
            let r = x.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            (value + gm * entropy(&spec, &x), Some(r))
        }
        None => (value, None),
    };
    Ok(PotentialCertificate {
        objective,
        equilibrium_residual,
        logit_residual,
        mass_residual: (x.iter().sum::<f64>() - d_bar).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::SigmaSite;
    use proptest::prelude::*;

    fn toy(t: f64) -> DistributionInstance {
        DistributionInstance::fixed(
            vec![SigmaSite::new(0, 0.0, 1.0)],
            vec![SigmaSite::new(1, -2.0, 0.0)],
            vec![vec![t]],
            Mode::Potential { d_bar: None },
        )
        .unwrap()
    }

    #[test]
    fn one_pair_stationarity() {
        let r = solve_potential(&toy(1.0), &PotentialConfig::default()).unwrap();
        assert!(r.converged);
        assert!((r.d[0][0] - 1.0).abs() < 1e-7);
        assert!(r.equilibrium_residual < 1e-7);
        assert!(!r.cap_binds);
        assert!((r.d[0][0] + r.d0.unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn unprofitable_pair_stays_empty() {
        let r = solve_potential(&toy(3.0), &PotentialConfig::default()).unwrap();
        assert!(r.converged);
        assert!(r.d[0][0] < 1e-9);
    }

    #[test]
    fn symmetric_sinks_split_evenly() {
        let inst = DistributionInstance::fixed(
            vec![SigmaSite::new(0, 0.0, 1.0)],
            vec![SigmaSite::new(1, -3.0, 0.5), SigmaSite::new(2, -3.0, 0.5)],
            vec![vec![1.0, 1.0]],
            Mode::Potential { d_bar: None },
        )
        .unwrap();
        let r = solve_potential(&inst, &PotentialConfig::default()).unwrap();
        assert!(r.converged);
        assert!((r.d[0][0] - r.d[0][1]).abs() < 1e-8);
        // f + 1 + (−3 + 0.5·f/2) = 0 at f = 1.6
        assert!((r.d[0][0] + r.d[0][1] - 1.6).abs() < 1e-6);
    }

    #[test]
    fn entropic_mode_is_a_logit_fixed_point() {
        let cfg = PotentialConfig {
            gamma: Some(0.05),
            tol: 1e-10,
            ..PotentialConfig::default()
        };
        let inst = toy(1.0);
        let r = solve_potential(&inst, &cfg).unwrap();
        assert!(r.converged, "{r:?}");
        let d = r.d[0][0];
        let (_, g) = pair_gradient(&inst, &[d]).unwrap();
        let d_bar = 10.0;
        let share = (-g[0] / 0.05).exp() / ((-g[0] / 0.05).exp() + 1.0);
        assert!((d - d_bar * share).abs() < 1e-8);
        assert!((d - 1.0).abs() < 0.2);
    }

    #[test]
    fn cap_binding_is_reported() {
        let inst = DistributionInstance::fixed(
            vec![SigmaSite::new(0, 0.0, 1.0)],
            vec![SigmaSite::new(1, -2.0, 0.0)],
            vec![vec![1.0]],
            Mode::Potential { d_bar: Some(0.5) },
        )
        .unwrap();
        let r = solve_potential(&inst, &PotentialConfig::default()).unwrap();
        assert!(r.cap_binds);
        assert!((r.d[0][0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn linear_profitable_sites_need_an_explicit_cap() {
        let inst = DistributionInstance::fixed(
            vec![SigmaSite::new(0, 0.0, 0.0)],
            vec![SigmaSite::new(1, -2.0, 0.0)],
            vec![vec![1.0]],
            Mode::Potential { d_bar: None },
        )
        .unwrap();
        assert!(matches!(inst.d_bar(), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences(
            a in proptest::collection::vec(-3.0f64..1.0, 4),
            b in proptest::collection::vec(0.0f64..2.0, 4),
            t in proptest::collection::vec(0.0f64..2.0, 4),
            d in proptest::collection::vec(0.1f64..2.0, 4),
        ) {
            let inst = DistributionInstance::fixed(
                vec![SigmaSite::new(0, a[0], b[0]), SigmaSite::new(1, a[1], b[1])],
                vec![SigmaSite::new(2, a[2], b[2]), SigmaSite::new(3, a[3], b[3])],
                vec![vec![t[0], t[1]], vec![t[2], t[3]]],
                Mode::Potential { d_bar: Some(100.0) },
            ).unwrap();
            let (_, g) = pair_gradient(&inst, &d).unwrap();
            let eps = 1e-4;
            for k in 0..4 {
                let mut up = d.clone();
                let mut dn = d.clone();
                up[k] += eps;
                dn[k] -= eps;
                let fd = (potential_objective(&inst, &up).unwrap() - potential_objective(&inst, &dn).unwrap()) / (2.0 * eps);
                prop_assert!((fd - g[k]).abs() < 1e-3);
            }
        }
    }
}
