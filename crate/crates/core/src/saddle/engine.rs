use super::geometry::{divergence, entropy, linear_min, prox, Extra};
use super::{check_point, BlockSpec, Oracle, Point, SaddleConfig, SaddleProblem, SaddleSolution, SolverTrace, TraceRecord};
use crate::{Error, Result};

fn evaluate<P: SaddleProblem + ?Sized>(problem: &P, z: &Point, iteration: usize) -> Result<Oracle> {
    let o = problem.operator(z)?;
    check_point(problem.blocks(), &o.grad)?;
    for (b, g) in o.grad.iter().enumerate() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { block: b, iteration });
        }
    }
    Ok(o)
}

fn prox_step(blocks: &[BlockSpec], z: &Point, g: &Point, eta: f64, iteration: usize) -> Result<Point> {
    let mut out = Vec::with_capacity(blocks.len());
    for (b, spec) in blocks.iter().enumerate() {
        let u = prox(spec, &z[b], &g[b], eta * spec.step_scale, Extra::Entropy(spec.entropy_weight));
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { block: b, iteration });
        }
        out.push(u);
    }
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn composite(spec: &BlockSpec, z: &[f64]) -> f64 {
    if spec.entropy_weight > 0.0 {
        spec.entropy_weight * entropy(spec, z)
    } else {
        0.0
    }
}

fn radius(z: &[f64]) -> f64 {
    2.0 * z.iter().fold(0.5f64, |m, v| m.max(v.abs()))
}

/// `Σ_b ⟨g_b, z_b⟩ + ψ_b(z_b) − min_u (⟨g_b, u⟩ + ψ_b(u))`, the minimum
/// taken over the block domain restricted to a box of twice the size of `z`.
fn linearised_gap(blocks: &[BlockSpec], z: &Point, g: &Point) -> f64 {
    blocks
        .iter()
        .enumerate()
        .map(|(b, spec)| dot(&g[b], &z[b]) + composite(spec, &z[b]) - linear_min(spec, &g[b], spec.entropy_weight, radius(&z[b])))
        .sum()
}

/// Linearised best-response gap at `z`: the sum over blocks of how much a
/// block could improve by moving against the current operator value.
/// Nonnegative, and zero exactly at a saddle point. It bounds the true
/// duality gap from above.
pub fn best_response_gap<P: SaddleProblem + ?Sized>(problem: &P, z: &Point) -> Result<f64> {
    check_point(problem.blocks(), z)?;
    let o = evaluate(problem, z, 0)?;
    Ok(linearised_gap(problem.blocks(), z, &o.grad).max(0.0))
}

/// Smallest `⟨F(z) − F(z′), z − z′⟩` over the given pairs; a monotone
/// operator keeps it nonnegative.
pub fn monotonicity_defect<P: SaddleProblem + ?Sized>(problem: &P, pairs: &[(Point, Point)]) -> Result<f64> {
    let mut worst = f64::INFINITY;
    for (z, w) in pairs {
        let fz = evaluate(problem, z, 0)?;
        let fw = evaluate(problem, w, 0)?;
        let s: f64 = (0..z.len())
            .map(|b| {
                (0..z[b].len())
                    .map(|k| (fz.grad[b][k] - fw.grad[b][k]) * (z[b][k] - w[b][k]))
                    .sum::<f64>()
            })
            .sum();
        worst = worst.min(s);
    }
    Ok(worst)
}

const MIN_STEP: f64 = 1e-12;

/// Mirror-prox acceptance test:
/// `η⟨F(w) − F(z), w − z⁺⟩ ≤ D(w, z) + D(z⁺, w)`, blockwise scaled.
#[allow(clippy::too_many_arguments)]
fn step_ok(blocks: &[BlockSpec], z: &Point, w: &Point, next: &Point, fz: &Point, fw: &Point, eta: f64) -> bool {
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for (b, spec) in blocks.iter().enumerate() {
        let e = eta * spec.step_scale;
        lhs += e * (0..w[b].len()).map(|k| (fw[b][k] - fz[b][k]) * (w[b][k] - next[b][k])).sum::<f64>();
        rhs += divergence(spec, &w[b], &z[b]) + divergence(spec, &next[b], &w[b]);
    }
    lhs <= rhs + 1e-15
}

fn validate(cfg: &SaddleConfig) -> Result<()> {
    if !(cfg.tol > 0.0) {
        return Err(Error::Config(format!("tol must be > 0, got {}", cfg.tol)));
    }
    if cfg.check_every == 0 {
        return Err(Error::Config("check_every must be >= 1".into()));
    }
    if cfg.restart_every == Some(0) {
        return Err(Error::Config("restart_every must be >= 1".into()));
    }
    if let Some(s) = cfg.step {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Config(format!("step must be > 0, got {s}")));
        }
    }
    Ok(())
}

/// Mirror-prox (extragradient) with block Bregman geometries.
///
/// Each iteration takes a prox step from `z` with `F(z)` to get `w`, then
/// from `z` again with `F(w)`. The `w` iterates are averaged with the step
/// as weight; the averaged point carries the certificate
/// `Σλ_k[⟨F(w_k), w_k⟩ + ψ(w_k)] − min_u[⟨F̄, u⟩ + ψ(u)]`, evaluated every
/// `check_every` iterations.
pub fn mirror_prox<P: SaddleProblem + ?Sized>(problem: &P, cfg: &SaddleConfig) -> Result<(SaddleSolution, SolverTrace)> {
    validate(cfg)?;
    let blocks = problem.blocks();
    for spec in blocks {
        spec.validate()?;
    }
    let mut z = problem.initial_point();
    check_point(blocks, &z)?;
    for (b, spec) in blocks.iter().enumerate() {
        if !spec.contains(&z[b], 1e-9) {
            z[b] = super::geometry::project(spec, &z[b]);
        }
    }
    let mut eta = cfg
        .step
        .or_else(|| problem.lipschitz_hint().filter(|l| *l > 0.0).map(|l| 0.5 / l))
        .unwrap_or(0.1);

    let zeros = |p: &Point| -> Point { p.iter().map(|v| vec![0.0; v.len()]).collect() };
    let mut f_sum = zeros(&z);
    let mut w_sum = zeros(&z);
    let mut aux_sum: Vec<f64> = Vec::new();
    let mut lin_sum = 0.0;
    let mut weight = 0.0;
    let mut trace = SolverTrace::default();
    let mut iterations = 0;
    let mut avg = z.clone();
    let mut avg_aux = Vec::new();
    let mut avg_gap = f64::INFINITY;
    let mut avg_metric = None;
    let mut converged = false;
    let mut stage_start = 0;
    let mut stage_len = cfg.restart_every.unwrap_or(usize::MAX);

    while iterations < cfg.max_iter {
        let fz = evaluate(problem, &z, iterations)?;
        let (w, fw, next) = loop {
            let w = prox_step(blocks, &z, &fz.grad, eta, iterations)?;
            let fw = evaluate(problem, &w, iterations)?;
            let next = prox_step(blocks, &z, &fw.grad, eta, iterations)?;
            if !cfg.adaptive || eta < MIN_STEP || step_ok(blocks, &z, &w, &next, &fz.grad, &fw.grad, eta) {
                break (w, fw, next);
            }
            eta *= 0.5;
        };

        weight += eta;
        for b in 0..blocks.len() {
            lin_sum += eta * (dot(&fw.grad[b], &w[b]) + composite(&blocks[b], &w[b]));
            for k in 0..w[b].len() {
                f_sum[b][k] += eta * fw.grad[b][k];
                w_sum[b][k] += eta * w[b][k];
            }
        }
        if aux_sum.len() != fw.aux.len() {
            aux_sum = vec![0.0; fw.aux.len()];
        }
        for (s, a) in aux_sum.iter_mut().zip(&fw.aux) {
            *s += eta * a;
        }
        z = next;
        iterations += 1;

        if iterations % cfg.check_every == 0 || iterations == cfg.max_iter {
            avg = w_sum.iter().map(|v| v.iter().map(|x| x / weight).collect()).collect();
            avg_aux = aux_sum.iter().map(|x| x / weight).collect();
            let f_avg: Point = f_sum.iter().map(|v| v.iter().map(|x| x / weight).collect()).collect();
            let lower: f64 = blocks
                .iter()
                .enumerate()
                .map(|(b, spec)| linear_min(spec, &f_avg[b], spec.entropy_weight, radius(&avg[b])))
                .sum();
            avg_gap = (lin_sum / weight - lower).max(0.0);
            avg_metric = problem.stop_metric(&avg, &avg_aux);
            trace.records.push(TraceRecord {
                iteration: iterations,
                gap: avg_gap,
                step: eta,
                metric: avg_metric,
            });
            converged = match avg_metric {
                Some(m) => m <= cfg.tol,
                None => avg_gap <= cfg.tol,
            };
            if converged {
                break;
            }
            if cfg.last_iterate_stop {
                let fl = evaluate(problem, &z, iterations)?;
                let last_done = match problem.stop_metric(&z, &fl.aux) {
                    Some(m) => m <= cfg.tol,
                    None => linearised_gap(blocks, &z, &fl.grad) <= cfg.tol,
                };
                if last_done {
                    break;
                }
            }
            if iterations - stage_start >= stage_len && iterations < cfg.max_iter {
                z = avg.clone();
                f_sum = zeros(&z);
                w_sum = zeros(&z);
                aux_sum.clear();
                lin_sum = 0.0;
                weight = 0.0;
                eta *= 0.5;
                stage_start = iterations;
                stage_len = stage_len.saturating_mul(2);
            }
        }
    }

    let fl = evaluate(problem, &z, iterations)?;
    let last_gap = linearised_gap(blocks, &z, &fl.grad).max(0.0);
    let last_metric = problem.stop_metric(&z, &fl.aux);
    let last_better = match (avg_metric, last_metric) {
        (Some(a), Some(l)) => l < a,
        _ => last_gap < avg_gap,
    };
    trace.averaged = avg.clone();
    trace.averaged_aux = avg_aux.clone();
    trace.last = z.clone();
    let solution = if last_better {
        let converged = match last_metric {
            Some(m) => m <= cfg.tol,
            None => last_gap <= cfg.tol,
        } || converged;
        SaddleSolution {
            z,
            aux: fl.aux,
            gap: last_gap,
            averaged_gap: avg_gap,
            last_gap,
            used_average: false,
            metric: last_metric,
            iterations,
            converged,
            step: eta,
        }
    } else {
        SaddleSolution {
            z: avg,
            aux: avg_aux,
            gap: avg_gap,
            averaged_gap: avg_gap,
            last_gap,
            used_average: true,
            metric: avg_metric,
            iterations,
            converged,
            step: eta,
        }
    };
    Ok((solution, trace))
}
