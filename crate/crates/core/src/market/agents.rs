use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{Consumer, Producer};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProducerResponse {
    pub profit: f64,
    pub l: Vec<f64>,
    /// 1 when the producer strictly profits, else 0 (and `l = 0`).
    pub alpha: f64,
}

/// Best output in the box `[0, u_max]`: full capacity on every good with a
/// positive margin, nothing when the gross margin does not cover `χ`.
/// `lambda_w` prices the inputs at the producer's own site.
pub fn producer_best_response(p: &Producer, lambda_l: &[f64], lambda_w: &[f64], y: &[f64]) -> ProducerResponse {
    let margin = p.margin(lambda_l, lambda_w, y);
    let gross: f64 = margin.iter().zip(&p.u_max).map(|(m, u)| u * m.max(0.0)).sum();
    let profit = gross - p.chi;
    if profit > 0.0 {
        ProducerResponse {
            profit,
            l: margin.iter().zip(&p.u_max).map(|(m, u)| if *m > 0.0 { *u } else { 0.0 }).collect(),
            alpha: 1.0,
        }
    } else {
        ProducerResponse {
            profit: 0.0,
            l: vec![0.0; p.commodities()],
            alpha: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsumerResponse {
    pub surplus: f64,
    pub w: Vec<f64>,
    /// 1 when the income strictly exceeds the cheapest bundle, else 0.
    pub beta: f64,
}

/// `min ⟨λ, W⟩` over `V = {W ≥ 0, QW ≥ σ}`. The vertices of `V` are listed
/// once (closed form for a square diagonal `Q`, enumeration of active sets
/// otherwise); prices are nonnegative, so some vertex is optimal.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsumerLp {
    vertices: Vec<Vec<f64>>,
}

/// Size limit of the active-set enumeration.
pub const MAX_ENUMERATED: usize = 6;

const FEAS_TOL: f64 = 1e-9;

impl ConsumerLp {
    pub fn new(c: &Consumer) -> Result<Self> {
        let s = c.q.len();
        let m = c.q.first().map_or(0, Vec::len);
        if m == 0 {
            return Err(Error::InvalidInstance("no commodities".into()));
        }
        let diagonal = s == m && (0..s).all(|r| (0..m).all(|k| if r == k { c.q[r][k] > 0.0 } else { c.q[r][k] == 0.0 }));
        if diagonal {
            let v = (0..m).map(|k| c.sigma_min[k].max(0.0) / c.q[k][k]).collect();
            return Ok(ConsumerLp { vertices: vec![v] });
        }
        if s > MAX_ENUMERATED || m > MAX_ENUMERATED {
            return Err(Error::Config(format!(
                "consumer problem with {m} goods and {s} properties is too large for vertex enumeration (limit {MAX_ENUMERATED})"
            )));
        }
        // rows: Q W ≥ σ, then W ≥ 0
        let rows: Vec<(Vec<f64>, f64)> =
            c.q.iter()
                .cloned()
                .zip(c.sigma_min.iter().copied())
                .chain((0..m).map(|k| {
                    let mut e = vec![0.0; m];
                    e[k] = 1.0;
                    (e, 0.0)
                }))
                .collect();
        let scale = 1.0 + c.sigma_min.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut vertices: Vec<Vec<f64>> = Vec::new();
        let mut subset: Vec<usize> = (0..m).collect();
        loop {
            let a = DMatrix::from_fn(m, m, |r, k| rows[subset[r]].0[k]);
            let rhs = DVector::from_iterator(m, subset.iter().map(|&r| rows[r].1));
            if let Some(x) = a.lu().solve(&rhs) {
                let x: Vec<f64> = x.iter().map(|v| if v.abs() < 1e-14 * scale { 0.0 } else { *v }).collect();
                let feasible = x.iter().all(|v| v.is_finite())
                    && rows
                        .iter()
                        .all(|(row, b)| row.iter().zip(&x).map(|(p, v)| p * v).sum::<f64>() >= b - FEAS_TOL * scale);
                let fresh = vertices
                    .iter()
                    .all(|v| v.iter().zip(&x).any(|(a, b)| (a - b).abs() > 1e-12 * scale));
                if feasible && fresh {
                    vertices.push(x);
                }
            }
            if !next_subset(&mut subset, rows.len()) {
                break;
            }
        }
        if vertices.is_empty() {
            return Err(Error::InvalidInstance(
                "the consumption set {W >= 0, QW >= sigma_min} is empty".into(),
            ));
        }
        Ok(ConsumerLp { vertices })
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    /// Cheapest vertex and its cost; ties go to the first vertex listed.
    pub fn cheapest(&self, prices: &[f64]) -> (f64, Vec<f64>) {
        let mut best = (f64::INFINITY, 0);
        for (k, v) in self.vertices.iter().enumerate() {
            let cost: f64 = v.iter().zip(prices).map(|(a, b)| a * b).sum();
            if cost < best.0 {
                best = (cost, k);
            }
        }
        (best.0, self.vertices[best.1].clone())
    }

    pub fn respond(&self, income: f64, prices: &[f64]) -> ConsumerResponse {
        let (cost, w) = self.cheapest(prices);
        let surplus = income - cost;
        if surplus > 0.0 {
            ConsumerResponse { surplus, w, beta: 1.0 }
        } else {
            ConsumerResponse {
                surplus: 0.0,
                w: vec![0.0; w.len()],
                beta: 0.0,
            }
        }
    }
}

/// Next `k`-subset of `0..n` in lexicographic order.
fn next_subset(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    for i in (0..k).rev() {
        if subset[i] < n - k + i {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Consumer best response; builds the vertex list on every call, so
/// solvers keep a [`ConsumerLp`] instead.
pub fn consumer_best_response(c: &Consumer, lambda_w: &[f64]) -> Result<ConsumerResponse> {
    Ok(ConsumerLp::new(c)?.respond(c.income, lambda_w))
}
