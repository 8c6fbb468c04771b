//! Per-block projections, prox steps and linear minimisation.

use super::{BlockSpec, Domain, Geometry};

pub(crate) const LOG_FLOOR: f64 = 1e-300;

fn ln_floor(v: f64) -> f64 {
    v.max(LOG_FLOOR).ln()
}

/// `h_b(z)`: `Σ z ln z`, or `Σ z ln(z/mass)` on a simplex.
pub(crate) fn entropy(spec: &BlockSpec, z: &[f64]) -> f64 {
    let scale = match spec.domain {
        Domain::Simplex { mass } if mass > 0.0 => mass,
        _ => 1.0,
    };
    z.iter().map(|&v| if v > 0.0 { v * (v / scale).ln() } else { 0.0 }).sum()
}

/// Euclidean projection onto the block domain.
pub(crate) fn project(spec: &BlockSpec, v: &[f64]) -> Vec<f64> {
    match &spec.domain {
        Domain::Simplex { mass } => project_simplex(v, *mass),
        Domain::Orthant => v.iter().map(|x| x.max(0.0)).collect(),
        Domain::Box { lower, upper } => v.iter().zip(lower.iter().zip(upper)).map(|(x, (l, u))| x.clamp(*l, *u)).collect(),
        Domain::Free => v.to_vec(),
    }
}

/// Projection onto `{u ≥ 0, Σu = mass}` by the sorting rule.
pub(crate) fn project_simplex(v: &[f64], mass: f64) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (k, &x) in s.iter().enumerate() {
        acc += x;
        let t = (acc - mass) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

fn normalise_logits(logits: &[f64], mass: f64) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return vec![mass / logits.len().max(1) as f64; logits.len()];
    }
    let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| mass * x / s).collect()
}

/// Regulariser added to a block inside a prox step.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Extra<'a> {
    None,
    /// `c · h_b(u)` (entropy blocks).
    Entropy(f64),
    /// `c/2 · ‖u − center‖²` (Euclidean blocks).
    Quadratic(f64, &'a [f64]),
}

/// `argmin_u η⟨g, u⟩ + η·extra(u) + D(u, z)` over the block domain, with
/// `D` the block's Bregman divergence.
pub(crate) fn prox(spec: &BlockSpec, z: &[f64], g: &[f64], eta: f64, extra: Extra) -> Vec<f64> {
    match spec.geometry {
        Geometry::Entropy => {
            let c = match extra {
                Extra::Entropy(c) => c,
                _ => 0.0,
            };
            let shrink = 1.0 / (1.0 + eta * c);
            match spec.domain {
                Domain::Simplex { mass } => {
                    let logits: Vec<f64> = z.iter().zip(g).map(|(&v, &gv)| (ln_floor(v) - eta * gv) * shrink).collect();
                    normalise_logits(&logits, mass)
                }
                _ => z
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| ((ln_floor(v) - eta * gv - eta * c) * shrink).exp())
                    .collect(),
            }
        }
        Geometry::Euclidean => match extra {
            Extra::Quadratic(c, center) => {
                let s = 1.0 / (1.0 + eta * c);
                let v: Vec<f64> = z
                    .iter()
                    .zip(g)
                    .zip(center)
                    .map(|((&x, &gv), &ce)| (x - eta * gv + eta * c * ce) * s)
                    .collect();
                project(spec, &v)
            }
            _ => {
                let v: Vec<f64> = z.iter().zip(g).map(|(x, gv)| x - eta * gv).collect();
                project(spec, &v)
            }
        },
    }
}

/// `a ln(a/b) − a + b` without cancellation when `a ≈ b`.
fn kl_term(a: f64, b: f64) -> f64 {
    let r = a / b - 1.0;
    if r.abs() < 1e-2 {
        // (1+r)ln(1+r) − r = Σ_{k≥2} (−r)^k / (k(k−1))
        let mut term = r * r;
        let mut sum = 0.0;
        for k in 2..12 {
            sum += term / (k * (k - 1)) as f64;
            term *= -r;
        }
        b * sum
    } else {
        a * (a / b).ln() - a + b
    }
}

/// Bregman divergence `D(u, z)` of the block geometry.
pub(crate) fn divergence(spec: &BlockSpec, u: &[f64], z: &[f64]) -> f64 {
    match spec.geometry {
        Geometry::Entropy => u
            .iter()
            .zip(z)
            .map(|(&a, &b)| if a <= 0.0 { b } else { kl_term(a, b.max(LOG_FLOOR)) })
            .sum(),
        Geometry::Euclidean => 0.5 * u.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
    }
}

/// `min_u ⟨g, u⟩ + c·h_b(u)` over the block domain intersected with the
/// box `[−radius, radius]` (only binding on unbounded directions).
pub(crate) fn linear_min(spec: &BlockSpec, g: &[f64], c: f64, radius: f64) -> f64 {
    let u: Vec<f64> = match &spec.domain {
        Domain::Simplex { mass } => {
            if c > 0.0 {
                let logits: Vec<f64> = g.iter().map(|x| -x / c).collect();
                normalise_logits(&logits, *mass)
            } else {
                let mut u = vec![0.0; g.len()];
                if let Some(k) = argmin(g) {
                    u[k] = *mass;
                }
                u
            }
        }
        Domain::Orthant => g
            .iter()
            .map(|&x| {
                if c > 0.0 {
                    (-x / c - 1.0).exp().min(radius)
                } else if x < 0.0 {
                    radius
                } else {
                    0.0
                }
            })
            .collect(),
        Domain::Box { lower, upper } => g
            .iter()
            .zip(lower.iter().zip(upper))
            .map(|(&x, (&l, &u))| if x >= 0.0 { l } else { u.min(radius.max(l)) })
            .collect(),
        Domain::Free => g.iter().map(|&x| if x >= 0.0 { -radius } else { radius }).collect(),
    };
    let lin: f64 = g.iter().zip(&u).map(|(a, b)| a * b).sum();
    if c > 0.0 {
        lin + c * entropy(spec, &u)
    } else {
        lin
    }
}

fn argmin(g: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, &x) in g.iter().enumerate() {
        if best.is_none_or(|b| x < g[b]) {
            best = Some(k);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::saddle::Side;
    use proptest::prelude::*;

    fn simplex(dim: usize, mass: f64, geometry: Geometry) -> BlockSpec {
        BlockSpec::new(Side::Min, dim, Domain::Simplex { mass }, geometry)
    }

    #[test]
    fn simplex_projection_examples() {
        assert_eq!(project_simplex(&[0.5, 0.5], 1.0), vec![0.5, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0], 1.0), vec![1.0, 0.0]);
        let p = project_simplex(&[0.3, 0.3, 0.3], 3.0);
        assert!(p.iter().all(|x| (x - 1.0).abs() < 1e-15));
    }

    #[test]
    fn entropic_prox_is_multiplicative() {
        let spec = simplex(2, 1.0, Geometry::Entropy);
        let u = prox(&spec, &[0.5, 0.5], &[0.0, 3f64.ln()], 1.0, Extra::None);
        assert!((u[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn composite_entropy_prox_hits_softmax_fixed_point() {
        // the fixed point of the composite prox is mass·softmax(−g/c)
        let spec = simplex(3, 2.0, Geometry::Entropy);
        let g = [0.3, -0.2, 1.0];
        let mut z = vec![2.0 / 3.0; 3];
        for _ in 0..200 {
            z = prox(&spec, &z, &g, 1.0, Extra::Entropy(0.5));
        }
        let target = normalise_logits(&g.map(|x| -x / 0.5), 2.0);
        for (a, b) in z.iter().zip(&target) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_min_values() {
        let spec = simplex(2, 1.0, Geometry::Entropy);
        assert_eq!(linear_min(&spec, &[1.0, -1.0], 0.0, 1.0), -1.0);
        // −c·mass·logsumexp(−g/c) for the entropy-regularised simplex
        let v = linear_min(&spec, &[0.0, 0.0], 1.0, 1.0);
        assert!((v + 2f64.ln()).abs() < 1e-15);
        let free = BlockSpec::new(Side::Max, 2, Domain::Free, Geometry::Euclidean);
        assert_eq!(linear_min(&free, &[1.0, -2.0], 0.0, 3.0), -9.0);
        let b = BlockSpec::new(
            Side::Max,
            1,
            Domain::Box {
                lower: vec![-1.0],
                upper: vec![1.0],
            },
            Geometry::Euclidean,
        );
        assert_eq!(linear_min(&b, &[-1.0], 0.0, 5.0), -1.0);
    }

    #[test]
    fn kl_term_is_accurate_near_the_diagonal() {
        let b: f64 = 0.7;
        for r in [1e-9, -1e-6, 3e-3, -9e-3, 2e-2] {
            let a = b * (1.0 + r);
            let exact = a * (a / b).ln() - a + b;
            let approx = kl_term(a, b);
            assert!((approx - b * r * r / 2.0).abs() <= b * r.abs().powi(3) + 1e-6 * b * r * r);
            if r.abs() > 1e-3 {
                assert!((approx - exact).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn simplex_projection_is_feasible_and_nearest(
            v in proptest::collection::vec(-5.0f64..5.0, 1..6),
            mass in 0.1f64..4.0,
        ) {
            let p = project_simplex(&v, mass);
            prop_assert!(p.iter().all(|x| *x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - mass).abs() < 1e-9);
            // optimality: ⟨v − p, q − p⟩ ≤ 0 at the vertices q
            for k in 0..v.len() {
                let mut q = vec![0.0; v.len()];
                q[k] = mass;
                let s: f64 = (0..v.len()).map(|i| (v[i] - p[i]) * (q[i] - p[i])).sum();
                prop_assert!(s <= 1e-9);
            }
        }

        #[test]
        fn entropy_prox_preserves_mass(
            g in proptest::collection::vec(-50.0f64..50.0, 3),
            eta in 0.01f64..10.0,
            c in 0.0f64..2.0,
        ) {
            let spec = simplex(3, 1.5, Geometry::Entropy);
            let u = prox(&spec, &[0.2, 0.3, 1.0], &g, eta, Extra::Entropy(c));
            prop_assert!((u.iter().sum::<f64>() - 1.5).abs() < 1e-12);
            prop_assert!(u.iter().all(|x| *x >= 0.0));
        }
    }
}
