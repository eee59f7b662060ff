//! Elastic-net penalized logistic regression on match vectors.
//!
//! Minimises `-loglik/n + lambda * (alpha * |b|_1 + (1 - alpha) * |b|_2^2 / 2)`
//! with an unpenalized intercept. Each outer iteration forms the IRLS
//! quadratic approximation of the deviance and solves the penalized weighted
//! least-squares problem by cyclic coordinate descent with soft-thresholding.
//! A backtracking step on the true objective keeps the outer loop monotone.

use serde::{Deserialize, Serialize};

use super::logistic::{log_likelihood, logistic};
use super::{InputKind, LinearModel};
use crate::error::{Error, Result};
use crate::pairing::PairwiseDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetParams {
    pub alpha: f64,
    pub lambda: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ElasticNetParams {
    fn default() -> Self {
        ElasticNetParams {
            alpha: 0.5,
            lambda: 0.01,
            max_iter: 500,
            tol: 1e-8,
        }
    }
}

pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Differentiable part of the objective: `-loglik/n + lambda (1 - alpha) |b|^2 / 2`.
pub fn smooth_objective(
    x: &[Vec<f64>],
    y: &[bool],
    intercept: f64,
    beta: &[f64],
    params: &ElasticNetParams,
) -> f64 {
    let n = x.len() as f64;
    let ridge = beta.iter().map(|b| b * b).sum::<f64>();
    -log_likelihood(x, y, intercept, beta) / n + params.lambda * (1.0 - params.alpha) * ridge / 2.0
}

/// Analytic gradient of [`smooth_objective`]: `(d/d intercept, d/d beta)`.
pub fn smooth_gradient(
    x: &[Vec<f64>],
    y: &[bool],
    intercept: f64,
    beta: &[f64],
    params: &ElasticNetParams,
) -> (f64, Vec<f64>) {
    let n = x.len() as f64;
    let mut g0 = 0.0;
    let mut g = vec![0.0; beta.len()];
    for (row, &yi) in x.iter().zip(y) {
        let eta = intercept + row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
        let r = logistic(eta) - if yi { 1.0 } else { 0.0 };
        g0 += r;
        for (gj, xj) in g.iter_mut().zip(row) {
            *gj += r * xj;
        }
    }
    let ridge = params.lambda * (1.0 - params.alpha);
    (
        g0 / n,
        g.iter().zip(beta).map(|(gj, b)| gj / n + ridge * b).collect(),
    )
}

fn objective(x: &[Vec<f64>], y: &[bool], b0: f64, beta: &[f64], params: &ElasticNetParams) -> f64 {
    smooth_objective(x, y, b0, beta, params)
        + params.lambda * params.alpha * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Coordinate descent for `sum_i w_i (z_i - b0 - x_i b)^2 / (2n) + penalty`,
/// warm-started at `(b0, beta)`. Returns the number of sweeps used.
pub(crate) fn penalized_wls(
    x: &[Vec<f64>],
    z: &[f64],
    w: &[f64],
    b0: &mut f64,
    beta: &mut [f64],
    params: &ElasticNetParams,
    max_sweeps: usize,
) -> usize {
    let n = x.len() as f64;
    let d = beta.len();
    let mut residual: Vec<f64> = x
        .iter()
        .zip(z)
        .map(|(row, zi)| zi - *b0 - row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let wsum: f64 = w.iter().sum();
    let curvature: Vec<f64> = (0..d)
        .map(|j| x.iter().zip(w).map(|(row, wi)| wi * row[j] * row[j]).sum::<f64>() / n)
        .collect();
    let l1 = params.lambda * params.alpha;
    let l2 = params.lambda * (1.0 - params.alpha);

    for sweep in 1..=max_sweeps {
        let mut max_change: f64 = 0.0;
        let shift = residual.iter().zip(w).map(|(r, wi)| r * wi).sum::<f64>() / wsum;
        if shift != 0.0 {
            *b0 += shift;
            residual.iter_mut().for_each(|r| *r -= shift);
            max_change = max_change.max(shift.abs());
        }
        for j in 0..d {
            if curvature[j] == 0.0 {
                beta[j] = 0.0;
                continue;
            }
            let rho = x
                .iter()
                .zip(&residual)
                .zip(w)
                .map(|((row, r), wi)| wi * row[j] * r)
                .sum::<f64>()
                / n
                + curvature[j] * beta[j];
            let updated = soft_threshold(rho, l1) / (curvature[j] + l2);
            let delta = updated - beta[j];
            if delta != 0.0 {
                for (r, row) in residual.iter_mut().zip(x) {
                    *r -= delta * row[j];
                }
                beta[j] = updated;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < params.tol * 0.1 {
            return sweep;
        }
    }
    max_sweeps
}

pub(crate) fn fit_elastic_net(
    x: &[Vec<f64>],
    y: &[bool],
    params: &ElasticNetParams,
) -> Result<(f64, Vec<f64>)> {
    let n = x.len();
    let d = x.first().map_or(0, Vec::len);
    let prevalence = y.iter().filter(|&&v| v).count() as f64 / n as f64;
    let clamped = prevalence.clamp(1e-6, 1.0 - 1e-6);
    let mut b0 = (clamped / (1.0 - clamped)).ln();
    let mut beta = vec![0.0; d];
    let mut current = objective(x, y, b0, &beta, params);

    for _ in 0..params.max_iter {
        let mut w = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n);
        for (row, &yi) in x.iter().zip(y) {
            let eta = b0 + row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
            let p = logistic(eta);
            let wi = (p * (1.0 - p)).max(1e-5);
            w.push(wi);
            z.push(eta + ((if yi { 1.0 } else { 0.0 }) - p) / wi);
        }
        let (mut nb0, mut nbeta) = (b0, beta.clone());
        penalized_wls(x, &z, &w, &mut nb0, &mut nbeta, params, 10_000);

        let mut t = 1.0;
        let mut cand0 = nb0;
        let mut cand: Vec<f64> = nbeta.clone();
        let mut value = objective(x, y, cand0, &cand, params);
        while value > current && t > 1e-8 {
            t *= 0.5;
            cand0 = b0 + t * (nb0 - b0);
            cand = beta.iter().zip(&nbeta).map(|(o, nw)| o + t * (nw - o)).collect();
            value = objective(x, y, cand0, &cand, params);
        }
        let change = beta
            .iter()
            .zip(&cand)
            .map(|(o, c)| (o - c).abs())
            .fold((b0 - cand0).abs(), f64::max);
        b0 = cand0;
        beta = cand;
        current = value.min(current);
        if change < params.tol {
            return Ok((b0, beta));
        }
    }
    Err(Error::NonConvergence {
        iterations: params.max_iter,
        last: Box::new(model(b0, beta, params)),
    })
}

fn model(intercept: f64, coefficients: Vec<f64>, params: &ElasticNetParams) -> LinearModel {
    LinearModel {
        intercept,
        coefficients,
        input_kind: InputKind::MatchVector,
        groups: Vec::new(),
        separation_warning: false,
        elastic_net: Some(params.clone()),
    }
}

pub fn train_elastic_net(pairs: &PairwiseDataset, params: &ElasticNetParams) -> Result<LinearModel> {
    if !(0.0..=1.0).contains(&params.alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1], got {}", params.alpha)));
    }
    if !(params.lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be non-negative, got {}", params.lambda)));
    }
    if pairs.is_empty() || !pairs.is_labeled() {
        return Err(Error::insufficient("elastic net needs labeled pairs"));
    }
    let x = pairs.match_matrix();
    let y = pairs.labels();
    let (b0, beta) = fit_elastic_net(&x, &y, params)?;
    Ok(model(b0, beta, params))
}
