use serde::{Deserialize, Serialize};

use super::geometry::{divergence, entropy, linear_min, project, prox, Extra};
use super::{check_point, BlockSpec, Geometry, Point, SaddleProblem, Side};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwapConfig {
    /// Smoothing added to every block: `ρ·h` on entropy blocks,
    /// `ρ/2‖z − z₀‖²` on Euclidean ones.
    pub rho: f64,
    pub inner_tol: f64,
    pub outer_tol: f64,
    pub max_inner: usize,
    pub max_outer: usize,
}

impl Default for SwapConfig {
    fn default() -> Self {
        SwapConfig {
            rho: 1e-4,
            inner_tol: 1e-11,
            outer_tol: 1e-9,
            max_inner: 100_000,
            max_outer: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwapCheck {
    /// `min_x max_y` of the smoothed objective.
    pub minmax: f64,
    /// `max_y min_x` of the smoothed objective.
    pub maxmin: f64,
    pub minmax_point: Point,
    pub maxmin_point: Point,
    /// Every nested solve met its tolerance.
    pub inner_converged: bool,
    pub outer_converged: bool,
}

struct Blocks<'a> {
    specs: &'a [BlockSpec],
    centers: &'a Point,
    rho: f64,
}

impl Blocks<'_> {
    fn weight(&self, b: usize) -> f64 {
        let s = &self.specs[b];
        match s.geometry {
            Geometry::Entropy => s.entropy_weight + self.rho,
            Geometry::Euclidean => self.rho,
        }
    }

    fn extra(&self, b: usize) -> Extra<'_> {
        match self.specs[b].geometry {
            Geometry::Entropy => Extra::Entropy(self.weight(b)),
            Geometry::Euclidean => Extra::Quadratic(self.rho, &self.centers[b]),
        }
    }

    /// Entropy term plus smoothing of block `b`.
    fn regulariser(&self, b: usize, z: &[f64]) -> f64 {
        let s = &self.specs[b];
        match s.geometry {
            Geometry::Entropy => self.weight(b) * entropy(s, z),
            Geometry::Euclidean => 0.5 * self.rho * z.iter().zip(&self.centers[b]).map(|(a, c)| (a - c) * (a - c)).sum::<f64>(),
        }
    }
}

impl Blocks<'_> {
    /// `⟨g, z⟩ + reg(z) − min_u (⟨g, u⟩ + reg(u))` on block `b`.
    fn gap(&self, b: usize, z: &[f64], g: &[f64]) -> f64 {
        let s = &self.specs[b];
        let lin = |u: &[f64]| -> f64 { g.iter().zip(u).map(|(a, c)| a * c).sum() };
        let best = match s.geometry {
            Geometry::Entropy => linear_min(s, g, self.weight(b), f64::INFINITY),
            Geometry::Euclidean => {
                let target: Vec<f64> = self.centers[b].iter().zip(g).map(|(c, gv)| c - gv / self.rho).collect();
                let u = project(s, &target);
                lin(&u) + self.regulariser(b, &u)
            }
        };
        lin(z) + self.regulariser(b, z) - best
    }
}

struct Outcome {
    total: f64,
    converged: bool,
}

/// Composite prox-gradient with backtracking over the blocks in `idx` of
/// `z` (the others stay fixed). `f` returns the smooth part and its
/// gradient on those blocks; the regularisers go through the prox.
///
/// Stops on the composite Frank–Wolfe gap, or with `mapping` also on the
/// step-normalised move (the smoothed outer problems are too stiff for
/// their gap to reach `tol` quickly, while their values are already exact).
#[allow(clippy::too_many_arguments)]
fn minimise<F>(bl: &Blocks, idx: &[usize], z: &mut Point, tol: f64, max_iter: usize, mapping: bool, slack: f64, mut f: F) -> Result<Outcome>
where
    F: FnMut(&Point) -> Result<(f64, Point)>,
{
    let reg = |z: &Point| -> f64 { idx.iter().map(|&b| bl.regulariser(b, &z[b])).sum() };
    let (mut fz, mut gz) = f(z)?;
    let mut eta = 1.0;
    for _ in 0..max_iter {
        let mut accepted = None;
        while eta > 1e-30 {
            let mut u = z.clone();
            for (k, &b) in idx.iter().enumerate() {
                u[b] = prox(&bl.specs[b], &z[b], &gz[k], eta, bl.extra(b));
            }
            let (fu, gu) = f(&u)?;
            let lin: f64 = idx
                .iter()
                .enumerate()
                .map(|(k, &b)| gz[k].iter().zip(u[b].iter().zip(&z[b])).map(|(g, (a, c))| g * (a - c)).sum::<f64>())
                .sum();
            let div: f64 = idx.iter().map(|&b| divergence(&bl.specs[b], &u[b], &z[b])).sum();
            if fu <= fz + lin + div / eta + slack + 1e-14 * (1.0 + fz.abs()) {
                accepted = Some((u, fu, gu));
                break;
            }
            eta *= 0.5;
        }
        let Some((u, fu, gu)) = accepted else {
            return Ok(Outcome {
                total: fz + reg(z),
                converged: false,
            });
        };
        let moved = idx
            .iter()
            .flat_map(|&b| u[b].iter().zip(&z[b]).map(|(a, c)| (a - c).abs()))
            .fold(0.0, f64::max)
            / eta;
        *z = u;
        fz = fu;
        gz = gu;
        let gap: f64 = idx.iter().enumerate().map(|(k, &b)| bl.gap(b, &z[b], &gz[k])).sum();
        if gap <= tol || (mapping && moved <= tol) {
            return Ok(Outcome {
                total: fz + reg(z),
                converged: true,
            });
        }
        eta *= 1.5;
    }
    Ok(Outcome {
        total: fz + reg(z),
        converged: false,
    })
}

fn restrict(g: &Point, idx: &[usize]) -> Point {
    idx.iter().map(|&b| g[b].clone()).collect()
}

/// Computes `min max` and `max min` of the objective by nested solves on
/// a slightly smoothed copy (see [`SwapConfig::rho`]). For a
/// convex-concave problem the two agree up to the smoothing.
pub fn order_swap_check<P: SaddleProblem + ?Sized>(problem: &P, cfg: &SwapConfig) -> Result<SwapCheck> {
    let specs = problem.blocks();
    for s in specs {
        s.validate()?;
    }
    if !(cfg.rho > 0.0) {
        return Err(Error::Config(format!("rho must be > 0, got {}", cfg.rho)));
    }
    let mut start = problem.initial_point();
    check_point(specs, &start)?;
    for (b, s) in specs.iter().enumerate() {
        start[b] = project(s, &start[b]);
    }
    if problem.value(&start).is_none() {
        return Err(Error::Config("problem exposes no objective value".into()));
    }
    let bl = Blocks {
        specs,
        centers: &start,
        rho: cfg.rho,
    };
    let mins: Vec<usize> = (0..specs.len()).filter(|&b| specs[b].side == Side::Min).collect();
    let maxs: Vec<usize> = (0..specs.len()).filter(|&b| specs[b].side == Side::Max).collect();

    let nested = |outer: &[usize], inner: &[usize]| -> Result<(f64, Point, bool, bool)> {
        let inner_sign = if inner.first().is_some_and(|&b| specs[b].side == Side::Max) {
            -1.0
        } else {
            1.0
        };
        let mut warm = start.clone();
        let mut inner_ok = true;
        let mut z = start.clone();
        let out = minimise(
            &bl,
            outer,
            &mut z,
            cfg.outer_tol,
            cfg.max_outer,
            true,
            2.0 * cfg.inner_tol,
            |x: &Point| {
                for &b in outer {
                    warm[b] = x[b].clone();
                }
                let o = minimise(&bl, inner, &mut warm, cfg.inner_tol, cfg.max_inner, false, 0.0, |w: &Point| {
                    let v = problem.value(w).expect("value checked above");
                    let g = problem.operator(w)?.grad;
                    Ok((inner_sign * v, restrict(&g, inner)))
                })?;
                inner_ok &= o.converged;
                let g = problem.operator(&warm)?.grad;
                Ok((-o.total, restrict(&g, outer)))
            },
        )?;
        for &b in inner {
            z[b] = warm[b].clone();
        }
        Ok((out.total, z, inner_ok, out.converged))
    };

    let (a, pa, ia, oa) = nested(&mins, &maxs)?;
    let (b, pb, ib, ob) = nested(&maxs, &mins)?;
    Ok(SwapCheck {
        minmax: a,
        maxmin: -b,
        minmax_point: pa,
        maxmin_point: pb,
        inner_converged: ia && ib,
        outer_converged: oa && ob,
    })
}
