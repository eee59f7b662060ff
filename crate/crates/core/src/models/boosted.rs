use serde::{Deserialize, Serialize};

use super::logistic::{logistic, softplus};
use super::tree::{fit_newton_tree, Newton, Tree};
use super::MatchScorer;
use crate::error::{Error, Result};
use crate::pairing::PairwiseDataset;

/// Prevalence is clamped to this distance from 0 and 1 before taking the
/// base log-odds.
const PREVALENCE_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub eta: f64,
    pub n_rounds: usize,
    pub max_depth: usize,
    pub lambda_reg: f64,
    pub min_child_weight: f64,
    pub seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            eta: 0.3,
            n_rounds: 100,
            max_depth: 6,
            lambda_reg: 1.0,
            min_child_weight: 1.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub base_margin: f64,
    pub trees: Vec<Tree>,
    pub params: BoostParams,
    pub n_features: usize,
    /// Mean training log-loss before round 1 and after every round.
    pub loss_trace: Vec<f64>,
}

impl BoostedModel {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_margin + self.params.eta * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

impl MatchScorer for BoostedModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn score(&self, x: &[f64]) -> f64 {
        logistic(self.margin(x))
    }
}

fn mean_log_loss(margins: &[f64], y: &[bool]) -> f64 {
    margins
        .iter()
        .zip(y)
        .map(|(&m, &yi)| softplus(m) - if yi { m } else { 0.0 })
        .sum::<f64>()
        / margins.len() as f64
}

/// Exact greedy second-order boosting on the logistic loss.
///
/// Each round fits a depth-limited regression tree to the gradients
/// `p - y` and Hessians `p (1 - p)` at the current margins.
pub fn train_boosted(pairs: &PairwiseDataset, params: &BoostParams) -> Result<BoostedModel> {
    if !(params.eta >= 0.0) {
        return Err(Error::invalid(format!("learning rate must be non-negative, got {}", params.eta)));
    }
    if params.max_depth == 0 {
        return Err(Error::invalid("boosted trees need max_depth >= 1"));
    }
    if !(params.lambda_reg >= 0.0) || !(params.min_child_weight >= 0.0) {
        return Err(Error::invalid("boosting regularization constants must be non-negative"));
    }
    if pairs.is_empty() || !pairs.is_labeled() {
        return Err(Error::insufficient("boosting needs labeled pairs"));
    }
    let x: Vec<Vec<bool>> = pairs.rows.iter().map(|r| r.matches.clone()).collect();
    let y = pairs.labels();
    let prevalence = (pairs.n_linked() as f64 / pairs.len() as f64).clamp(PREVALENCE_CLAMP, 1.0 - PREVALENCE_CLAMP);
    let base_margin = (prevalence / (1.0 - prevalence)).ln();
    let mut margins = vec![base_margin; x.len()];
    let mut loss_trace = vec![mean_log_loss(&margins, &y)];
    let mut trees = Vec::with_capacity(params.n_rounds);
    let mut grad = vec![0.0; x.len()];
    let mut hess = vec![0.0; x.len()];

    for _ in 0..params.n_rounds {
        for i in 0..x.len() {
            let p = logistic(margins[i]);
            grad[i] = p - f64::from(u8::from(y[i]));
            hess[i] = p * (1.0 - p);
        }
        let tree = fit_newton_tree(
            &x,
            Newton {
                grad: &grad,
                hess: &hess,
                lambda: params.lambda_reg,
                min_child_weight: params.min_child_weight,
            },
            params.max_depth,
        );
        for (m, row) in margins.iter_mut().zip(&pairs.rows) {
            *m += params.eta * tree.predict(&row.match_values());
        }
        loss_trace.push(mean_log_loss(&margins, &y));
        trees.push(tree);
    }
    Ok(BoostedModel {
        base_margin,
        trees,
        params: *params,
        n_features: pairs.n_features(),
        loss_trace,
    })
}
