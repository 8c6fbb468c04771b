use super::{BlockSpec, Domain, Geometry, Oracle, Point, SaddleProblem, Side};
use crate::Result;

/// Largest singular value of `a` by power iteration on `aᵀa`.
pub fn spectral_norm(a: &[Vec<f64>]) -> f64 {
    let cols = a.first().map_or(0, Vec::len);
    if cols == 0 {
        return 0.0;
    }
    let mut v = vec![1.0 / (cols as f64).sqrt(); cols];
    let mut sigma = 0.0;
    for _ in 0..200 {
        let av: Vec<f64> = a.iter().map(|row| dot(row, &v)).collect();
        let mut atav = vec![0.0; cols];
        for (row, x) in a.iter().zip(&av) {
            for (t, r) in atav.iter_mut().zip(row) {
                *t += r * x;
            }
        }
        let n = dot(&atav, &atav).sqrt();
        if n == 0.0 {
            return 0.0;
        }
        let next = n.sqrt();
        v = atav.iter().map(|x| x / n).collect();
        if (next - sigma).abs() <= 1e-14 * next {
            return next;
        }
        sigma = next;
    }
    sigma
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn bilinear_operator(a: &[Vec<f64>], z: &Point) -> Oracle {
    let (x, y) = (&z[0], &z[1]);
    let gx: Vec<f64> = a.iter().map(|row| dot(row, y)).collect();
    let mut gy = vec![0.0; y.len()];
    for (row, xi) in a.iter().zip(x) {
        for (g, r) in gy.iter_mut().zip(row) {
            *g -= r * xi;
        }
    }
    Oracle {
        grad: vec![gx, gy],
        aux: Vec::new(),
    }
}

fn bilinear_value(a: &[Vec<f64>], z: &Point) -> f64 {
    a.iter().zip(&z[0]).map(|(row, xi)| xi * dot(row, &z[1])).sum()
}

/// `min_{x ∈ [−1,1]^n} max_{y ∈ [−1,1]^m} xᵀ A y` in Euclidean geometry.
#[derive(Debug, Clone)]
pub struct Bilinear {
    a: Vec<Vec<f64>>,
    blocks: Vec<BlockSpec>,
    start: Option<Point>,
}

impl Bilinear {
    pub fn new(a: Vec<Vec<f64>>) -> Self {
        let n = a.len();
        let m = a.first().map_or(0, Vec::len);
        let cube = |side, d: usize| {
            BlockSpec::new(
                side,
                d,
                Domain::Box {
                    lower: vec![-1.0; d],
                    upper: vec![1.0; d],
                },
                Geometry::Euclidean,
            )
        };
        Bilinear {
            a,
            blocks: vec![cube(Side::Min, n), cube(Side::Max, m)],
            start: None,
        }
    }

    /// The scalar toy `x·y`.
    pub fn scalar() -> Self {
        Self::new(vec![vec![1.0]])
    }

    pub fn starting_at(mut self, z: Point) -> Self {
        self.start = Some(z);
        self
    }
}

impl SaddleProblem for Bilinear {
    fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    fn operator(&self, z: &Point) -> Result<Oracle> {
        Ok(bilinear_operator(&self.a, z))
    }

    fn value(&self, z: &Point) -> Option<f64> {
        Some(bilinear_value(&self.a, z))
    }

    fn initial_point(&self) -> Point {
        self.start.clone().unwrap_or_else(|| {
            let mut z: Point = self.blocks.iter().map(BlockSpec::default_point).collect();
            z.iter_mut().flatten().for_each(|v| *v = 1.0);
            z
        })
    }

    fn lipschitz_hint(&self) -> Option<f64> {
        Some(spectral_norm(&self.a))
    }
}

/// Matrix game `min_x max_y xᵀ A y` over probability simplices, solved in
/// entropy geometry.
#[derive(Debug, Clone)]
pub struct MatrixGame {
    a: Vec<Vec<f64>>,
    blocks: Vec<BlockSpec>,
}

impl MatrixGame {
    pub fn new(a: Vec<Vec<f64>>) -> Self {
        let n = a.len();
        let m = a.first().map_or(0, Vec::len);
        MatrixGame {
            a,
            blocks: vec![
                BlockSpec::new(Side::Min, n, Domain::Simplex { mass: 1.0 }, Geometry::Entropy),
                BlockSpec::new(Side::Max, m, Domain::Simplex { mass: 1.0 }, Geometry::Entropy),
            ],
        }
    }
}

impl SaddleProblem for MatrixGame {
    fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    fn operator(&self, z: &Point) -> Result<Oracle> {
        Ok(bilinear_operator(&self.a, z))
    }

    fn value(&self, z: &Point) -> Option<f64> {
        Some(bilinear_value(&self.a, z))
    }

    fn initial_point(&self) -> Point {
        // a slightly skewed start so symmetric games still exercise the solver
        self.blocks
            .iter()
            .map(|b| {
                let w: Vec<f64> = (0..b.dim).map(|k| 1.0 + k as f64).collect();
                let s: f64 = w.iter().sum();
                w.iter().map(|x| x / s).collect()
            })
            .collect()
    }

    fn lipschitz_hint(&self) -> Option<f64> {
        Some(self.a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::saddle::{best_response_gap, mirror_prox, monotonicity_defect, SaddleConfig};

    #[test]
    fn spectral_norm_of_diagonal() {
        let a = vec![vec![3.0, 0.0], vec![0.0, -5.0]];
        assert!((spectral_norm(&a) - 5.0).abs() < 1e-9);
        assert_eq!(spectral_norm(&[vec![1.0]]), 1.0);
    }

    #[test]
    fn bilinear_converges_to_origin() {
        let cfg = SaddleConfig {
            tol: 1e-6,
            ..SaddleConfig::default()
        };
        let (s, _) = mirror_prox(&Bilinear::scalar(), &cfg).unwrap();
        assert!(s.converged);
        assert!(s.gap <= 1e-6);
        assert!(s.z[0][0].abs() < 1e-6 && s.z[1][0].abs() < 1e-6);
    }

    #[test]
    fn best_response_gap_examples() {
        let p = Bilinear::scalar();
        assert_eq!(best_response_gap(&p, &vec![vec![0.0], vec![0.0]]).unwrap(), 0.0);
        // at x = 1, y = 0 only the max player can gain: max_y y − 0 = 1
        assert_eq!(best_response_gap(&p, &vec![vec![1.0], vec![0.0]]).unwrap(), 1.0);
        let g = MatrixGame::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(best_response_gap(&g, &vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap() < 1e-15);
    }

    #[test]
    fn identity_game_value_one_half() {
        let g = MatrixGame::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let cfg = SaddleConfig {
            tol: 1e-6,
            ..SaddleConfig::default()
        };
        let (s, _) = mirror_prox(&g, &cfg).unwrap();
        assert!(s.converged);
        assert!((g.value(&s.z).unwrap() - 0.5).abs() < 1e-3);
        for b in 0..2 {
            for k in 0..2 {
                assert!((s.z[b][k] - 0.5).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn anti_identity_game() {
        let g = MatrixGame::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let (s, _) = mirror_prox(&g, &SaddleConfig::default()).unwrap();
        assert!((g.value(&s.z).unwrap() - 0.5).abs() < 1e-3);
    }

    #[test]
    fn rock_paper_scissors_is_uniform() {
        let a = vec![vec![0.0, 1.0, -1.0], vec![-1.0, 0.0, 1.0], vec![1.0, -1.0, 0.0]];
        let g = MatrixGame::new(a);
        let (s, _) = mirror_prox(&g, &SaddleConfig::default().clone()).unwrap();
        assert!(s.converged);
        for v in s.z.iter().flatten() {
            assert!((v - 1.0 / 3.0).abs() < 1e-3);
        }
    }

    #[test]
    fn iterates_stay_feasible_and_runs_repeat_bitwise() {
        let g = MatrixGame::new(vec![vec![2.0, -1.0], vec![-1.0, 1.0]]);
        let cfg = SaddleConfig {
            max_iter: 300,
            tol: 1e-12,
            ..SaddleConfig::default()
        };
        let (a, ta) = mirror_prox(&g, &cfg).unwrap();
        let (b, tb) = mirror_prox(&g, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        for (spec, z) in g.blocks().iter().zip(&ta.last) {
            assert!(spec.contains(z, 1e-12));
        }
        assert!(ta.records.iter().all(|r| r.gap >= 0.0));
    }

    #[test]
    fn ergodic_gap_follows_one_over_k() {
        let gap_at = |k: usize| {
            let cfg = SaddleConfig {
                max_iter: k,
                tol: 1e-300,
                check_every: k,
                last_iterate_stop: false,
                ..SaddleConfig::default()
            };
            mirror_prox(&Bilinear::scalar(), &cfg).unwrap().0.averaged_gap
        };
        let g: Vec<f64> = [100, 1000, 10_000].iter().map(|&k| gap_at(k)).collect();
        for w in g.windows(2) {
            let ratio = w[0] / w[1];
            assert!((5.0..=20.0).contains(&ratio), "{g:?}");
        }
    }

    #[test]
    fn bilinear_operator_is_monotone() {
        let p = Bilinear::new(vec![vec![1.0, -2.0], vec![0.5, 3.0]]);
        let pairs = vec![
            (vec![vec![0.1, 0.2], vec![-0.3, 0.9]], vec![vec![-1.0, 0.4], vec![0.2, 0.0]]),
            (vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![vec![-1.0, -1.0], vec![-1.0, -1.0]]),
        ];
        assert!(monotonicity_defect(&p, &pairs).unwrap() >= -1e-12);
    }
}
