use serde::{Deserialize, Serialize};

use super::{check_margins, margin_residual};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkhornConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            tol: 1e-12,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SinkhornResult {
    pub d: Vec<Vec<f64>>,
    /// `γ ln u_i`, the row potentials.
    pub row_potential: Vec<f64>,
    /// `γ ln v_j`.
    pub col_potential: Vec<f64>,
    /// `Σ T d + γ Σ d ln(d/N)`.
    pub objective: f64,
    pub margin_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn log_sum_exp(it: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = it.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Entropic coupling `d_ij = N·exp((a_i + b_j − T_ij)/γ)` whose margins are
/// `L` and `W`, by alternating scaling in the log domain. Zero margins get
/// empty rows or columns.
pub fn gravity_sinkhorn(t: &[Vec<f64>], l: &[f64], w: &[f64], gamma: f64, cfg: &SinkhornConfig) -> Result<SinkhornResult> {
    let (rows, cols) = (l.len(), w.len());
    if t.len() != rows || t.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidInstance(format!("costs must be {rows} x {cols}")));
    }
    if t.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInstance("costs must be finite".into()));
    }
    let n = check_margins(l, w, rows, cols)?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("gamma must be > 0, got {gamma}")));
    }
    if !(cfg.tol > 0.0) {
        return Err(Error::Config(format!("tol must be > 0, got {}", cfg.tol)));
    }
    let ln_l: Vec<f64> = l.iter().map(|x| (x / n).ln()).collect();
    let ln_w: Vec<f64> = w.iter().map(|x| (x / n).ln()).collect();
    let mut a = vec![0.0; rows];
    let mut b = vec![0.0; cols];
    let coupling = |a: &[f64], b: &[f64]| -> Vec<f64> {
        (0..rows * cols)
            .map(|k| {
                let (i, j) = (k / cols, k % cols);
                if l[i] == 0.0 || w[j] == 0.0 {
                    0.0
                } else {
                    n * ((a[i] + b[j] - t[i][j]) / gamma).exp()
                }
            })
            .collect()
    };
    let mut iterations = 0;
    let mut d = coupling(&a, &b);
    let mut residual = margin_residual(&d, l, w);
    while residual > cfg.tol && iterations < cfg.max_iter {
        for i in 0..rows {
            if l[i] > 0.0 {
                let s = log_sum_exp((0..cols).filter(|&j| w[j] > 0.0).map(|j| (b[j] - t[i][j]) / gamma));
                a[i] = gamma * (ln_l[i] - s);
            }
        }
        for j in 0..cols {
            if w[j] > 0.0 {
                let s = log_sum_exp((0..rows).filter(|&i| l[i] > 0.0).map(|i| (a[i] - t[i][j]) / gamma));
                b[j] = gamma * (ln_w[j] - s);
            }
        }
        iterations += 1;
        d = coupling(&a, &b);
        residual = margin_residual(&d, l, w);
    }
    let objective = d
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let c = t[k / cols][k % cols] * v;
            if v > 0.0 {
                c + gamma * v * (v / n).ln()
            } else {
                c
            }
        })
        .sum();
    Ok(SinkhornResult {
        d: super::unflatten(&d, cols),
        row_potential: a,
        col_potential: b,
        objective,
        margin_residual: residual,
        iterations,
        converged: residual <= cfg.tol,
    })
}
