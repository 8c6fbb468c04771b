use super::{margin_residual, unflatten, DistributionInstance, DistributionResult, Mode, PairCosts};
use crate::saddle::geometry::entropy;
use crate::saddle::{mirror_prox, BlockSpec, Domain, Geometry, Oracle, Point, SaddleConfig, SaddleProblem, Side};
use crate::{Error, Result};

/// `min_{d ≥ 0, Σd = N} max_{λ^L, λ^W} Φ(d) + γ Σ d ln(d/N)
///   + Σ_i λ^L_i (L_i − Σ_j d_ij) + Σ_j λ^W_j (W_j − Σ_i d_ij)`.
///
/// Blocks: `d` (entropy geometry on the `N`-simplex), `λ^L`, `λ^W` (free,
/// Euclidean).
#[derive(Debug, Clone)]
pub struct ConstrainedProblem {
    costs: PairCosts,
    l: Vec<f64>,
    w: Vec<f64>,
    gamma: f64,
    mass: f64,
    blocks: Vec<BlockSpec>,
}

impl ConstrainedProblem {
    pub fn new(inst: &DistributionInstance, inner_tol: f64) -> Result<Self> {
        let Mode::Constrained { l, w, gamma } = &inst.mode else {
            return Err(Error::Config("instance is not in constrained mode".into()));
        };
        let mass = super::check_margins(l, w, inst.sources.len(), inst.sinks.len())?;
        let mut costs = inst.costs.clone();
        costs.cfg.tol = costs.cfg.tol.min(inner_tol);
        let blocks = vec![
            BlockSpec::new(Side::Min, inst.pair_count(), Domain::Simplex { mass }, Geometry::Entropy).with_entropy(*gamma),
            BlockSpec::new(Side::Max, l.len(), Domain::Free, Geometry::Euclidean),
            BlockSpec::new(Side::Max, w.len(), Domain::Free, Geometry::Euclidean),
        ];
        Ok(ConstrainedProblem {
            costs,
            l: l.clone(),
            w: w.clone(),
            gamma: *gamma,
            mass,
            blocks,
        })
    }

    fn reduced_costs(&self, z: &Point, t: &[f64]) -> Vec<f64> {
        let cols = self.w.len();
        t.iter().enumerate().map(|(k, tk)| tk - z[1][k / cols] - z[2][k % cols]).collect()
    }

    /// `Φ(d) + γ Σ d ln(d/N)`.
    pub fn objective(&self, d: &[f64]) -> Result<f64> {
        let (phi, _) = self.costs.evaluate(d)?;
        Ok(phi + self.gamma * entropy(&self.blocks[0], d))
    }

    pub fn margin_residual(&self, d: &[f64]) -> f64 {
        margin_residual(d, &self.l, &self.w)
    }

    /// Largest of the margin violation and the distance of `d` from the
    /// entropic response to its reduced costs.
    pub fn residual(&self, z: &Point) -> Result<f64> {
        let (_, t) = self.costs.evaluate(&z[0])?;
        let g = self.reduced_costs(z, &t);
        let m = g.iter().copied().fold(f64::INFINITY, f64::min);
        let e: Vec<f64> = g.iter().map(|x| (-(x - m) / self.gamma).exp()).collect();
        let s: f64 = e.iter().sum();
        let stat = z[0].iter().zip(&e).map(|(d, x)| (d - self.mass * x / s).abs()).fold(0.0, f64::max);
        Ok(stat.max(margin_residual(&z[0], &self.l, &self.w)))
    }
}

impl SaddleProblem for ConstrainedProblem {
    fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    fn operator(&self, z: &Point) -> Result<Oracle> {
        let (_, t) = self.costs.evaluate(&z[0])?;
        let cols = self.w.len();
        let d = &z[0];
        let gl = self
            .l
            .iter()
            .enumerate()
            .map(|(i, li)| d[i * cols..(i + 1) * cols].iter().sum::<f64>() - li)
            .collect();
        let gw = self
            .w
            .iter()
            .enumerate()
            .map(|(j, wj)| (0..self.l.len()).map(|i| d[i * cols + j]).sum::<f64>() - wj)
            .collect();
        Ok(Oracle {
            grad: vec![self.reduced_costs(z, &t), gl, gw],
            aux: Vec::new(),
        })
    }

    fn value(&self, z: &Point) -> Option<f64> {
        let (phi, _) = self.costs.evaluate(&z[0]).ok()?;
        let cols = self.w.len();
        let d = &z[0];
        let rows: f64 = self
            .l
            .iter()
            .enumerate()
            .map(|(i, li)| z[1][i] * (li - d[i * cols..(i + 1) * cols].iter().sum::<f64>()))
            .sum();
        let sinks: f64 = self
            .w
            .iter()
            .enumerate()
            .map(|(j, wj)| z[2][j] * (wj - (0..self.l.len()).map(|i| d[i * cols + j]).sum::<f64>()))
            .sum();
        Some(phi + rows + sinks)
    }

    fn lipschitz_hint(&self) -> Option<f64> {
        Some(1.0)
    }

    fn stop_metric(&self, z: &Point, _aux: &[f64]) -> Option<f64> {
        self.residual(z).ok()
    }
}

/// Margin-constrained entropy model solved by mirror-prox. Convergence is
/// judged on [`ConstrainedProblem::residual`].
pub fn solve_constrained(inst: &DistributionInstance, cfg: &SaddleConfig) -> Result<DistributionResult> {
    let problem = ConstrainedProblem::new(inst, (cfg.tol / 100.0).min(1e-8))?;
    let (s, _) = mirror_prox(&problem, cfg)?;
    let (phi, _) = problem.costs.evaluate(&s.z[0])?;
    Ok(DistributionResult {
        d: unflatten(&s.z[0], problem.w.len()),
        d0: None,
        lambda_l: s.z[1].clone(),
        lambda_w: s.z[2].clone(),
        objective: phi + problem.gamma * entropy(&problem.blocks[0], &s.z[0]),
        margin_residual: margin_residual(&s.z[0], &problem.l, &problem.w),
        equilibrium_residual: s.metric.unwrap_or(f64::INFINITY),
        saddle_gap: s.gap,
        iterations: s.iterations,
        converged: s.converged,
        cap_binds: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::{gravity_sinkhorn, SigmaSite, SinkhornConfig};

    fn inst(t: Vec<Vec<f64>>, l: Vec<f64>, w: Vec<f64>, gamma: f64) -> DistributionInstance {
        let src = (0..l.len()).map(|i| SigmaSite::new(i, 0.0, 0.0)).collect();
        let snk = (0..w.len()).map(|j| SigmaSite::new(100 + j, 0.0, 0.0)).collect();
        DistributionInstance::fixed(src, snk, t, Mode::Constrained { l, w, gamma }).unwrap()
    }

    fn cfg(tol: f64) -> SaddleConfig {
        SaddleConfig {
            tol,
            max_iter: 1_000_000,
            ..SaddleConfig::default()
        }
    }

    #[test]
    fn equal_costs_give_the_uniform_coupling() {
        let r = solve_constrained(&inst(vec![vec![1.0; 2]; 2], vec![1.0, 1.0], vec![1.0, 1.0], 0.5), &cfg(1e-8)).unwrap();
        assert!(r.converged);
        for v in r.d.iter().flatten() {
            assert!((v - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn agrees_with_scaling() {
        for gamma in [0.1, 1.0] {
            let t = vec![vec![0.0, 1.0, 2.0], vec![1.5, 0.2, 0.7], vec![0.3, 0.9, 0.1]];
            let (l, w) = (vec![1.0, 2.0, 0.5], vec![0.7, 1.3, 1.5]);
            let r = solve_constrained(&inst(t.clone(), l.clone(), w.clone(), gamma), &cfg(1e-7)).unwrap();
            assert!(r.converged, "gamma {gamma}: {r:?}");
            assert!(r.margin_residual <= 1e-7);
            let s = gravity_sinkhorn(&t, &l, &w, gamma, &SinkhornConfig::default()).unwrap();
            for (a, b) in r.d.iter().flatten().zip(s.d.iter().flatten()) {
                assert!((a - b).abs() < 1e-4, "gamma {gamma}: {a} vs {b}");
            }
            assert!((r.objective - s.objective).abs() < 1e-3);
        }
    }

    #[test]
    fn hot_limit_is_the_product_coupling() {
        let t = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let r = solve_constrained(&inst(t, vec![1.0, 3.0], vec![2.0, 2.0], 1e3), &cfg(1e-8)).unwrap();
        assert!(r.converged);
        assert!((r.d[0][0] - 0.5).abs() < 1e-3);
        assert!((r.d[1][1] - 1.5).abs() < 1e-3);
    }

    #[test]
    fn unbalanced_margins_are_rejected() {
        let e = DistributionInstance::fixed(
            vec![SigmaSite::new(0, 0.0, 0.0)],
            vec![SigmaSite::new(1, 0.0, 0.0)],
            vec![vec![0.0]],
            Mode::Constrained {
                l: vec![1.0],
                w: vec![2.0],
                gamma: 1.0,
            },
        )
        .unwrap_err();
        assert!(matches!(e, Error::UnbalancedMargins { .. }));
    }
}
