use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{InputKind, LinearModel};
use crate::error::{Error, Result};
use crate::ingest::Codebook;
use crate::pairing::PairwiseDataset;

/// Largest absolute coefficient kept when the likelihood diverges.
pub const COEFFICIENT_CAP: f64 = 30.0;

const TOL: f64 = 1e-8;
const MAX_ITER: usize = 200;

pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(eta))` without overflow.
pub(crate) fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

pub(crate) fn log_likelihood(x: &[Vec<f64>], y: &[bool], intercept: f64, beta: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(row, &yi)| {
            let eta = intercept + row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
            (if yi { eta } else { 0.0 }) - softplus(eta)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LrKind {
    Lr1,
    Lr6,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub separated: bool,
    pub iterations: usize,
}

/// Maximum-likelihood logistic regression by damped Newton iterations.
///
/// Stops when the largest coefficient update falls below 1e-8. If any
/// coefficient leaves `[-30, 30]` the likelihood is treated as separated: the
/// coefficients are clamped to the cap and the fit is flagged.
pub fn fit_logistic(x: &[Vec<f64>], y: &[bool]) -> Result<LogisticFit> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::insufficient("logistic fit needs a non-empty, aligned design"));
    }
    let d = x[0].len();
    let n = x.len();
    let design = DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
    let target = DVector::from_iterator(n, y.iter().map(|&v| if v { 1.0 } else { 0.0 }));
    let mut theta = DVector::<f64>::zeros(d + 1);
    let ll = |t: &DVector<f64>| log_likelihood(x, y, t[0], &t.as_slice()[1..]);
    let mut current = ll(&theta);

    for iter in 1..=MAX_ITER {
        let eta = &design * &theta;
        let p = eta.map(logistic);
        let w = p.map(|v| v * (1.0 - v));
        let grad = design.transpose() * (&target - &p);
        let mut weighted = design.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let hessian = design.transpose() * weighted;
        let step = match hessian.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                let ridge = &hessian + DMatrix::identity(d + 1, d + 1) * 1e-10;
                match ridge.lu().solve(&grad) {
                    Some(s) => s,
                    // flat likelihood: every fitted probability is 0 or 1
                    None => return Ok(capped(theta, iter)),
                }
            }
        };

        let mut scale = 1.0;
        let mut next = &theta + &step;
        let mut next_ll = ll(&next);
        while next_ll < current - 1e-12 && scale > 1e-10 {
            scale *= 0.5;
            next = &theta + &step * scale;
            next_ll = ll(&next);
        }
        let change = (&next - &theta).amax();
        theta = next;
        current = next_ll;
        if theta.amax() > COEFFICIENT_CAP {
            return Ok(capped(theta, iter));
        }
        if change < TOL {
            return Ok(LogisticFit {
                intercept: theta[0],
                coefficients: theta.as_slice()[1..].to_vec(),
                separated: false,
                iterations: iter,
            });
        }
    }
    // no convergence within the budget means the optimum is at infinity
    Ok(capped(theta, MAX_ITER))
}

fn capped(theta: DVector<f64>, iterations: usize) -> LogisticFit {
    let theta = theta.map(|v| v.clamp(-COEFFICIENT_CAP, COEFFICIENT_CAP));
    LogisticFit {
        intercept: theta[0],
        coefficients: theta.as_slice()[1..].to_vec(),
        separated: true,
        iterations,
    }
}

/// LR1 regresses linkage on the overall Jaccard coefficient; LR6 on the
/// per-group Jaccard coefficients of the codebook's groups, in id order.
pub fn train_lr(pairs: &PairwiseDataset, codebook: &Codebook, kind: LrKind) -> Result<LinearModel> {
    if pairs.is_empty() || !pairs.is_labeled() {
        return Err(Error::insufficient("LR training needs labeled pairs"));
    }
    let groups: Vec<u32> = match kind {
        LrKind::Lr1 => Vec::new(),
        LrKind::Lr6 => {
            let g: Vec<u32> = codebook.groups().into_keys().collect();
            if g.is_empty() {
                return Err(Error::invalid("LR6 needs a codebook with lr_group assignments"));
            }
            g
        }
    };
    let template = LinearModel {
        intercept: 0.0,
        coefficients: vec![0.0; groups.len().max(1)],
        input_kind: match kind {
            LrKind::Lr1 => InputKind::JaccardOverall,
            LrKind::Lr6 => InputKind::JaccardGroups,
        },
        groups,
        separation_warning: false,
        elastic_net: None,
    };
    let x = pairs
        .rows
        .iter()
        .map(|r| template.inputs(r))
        .collect::<Result<Vec<_>>>()?;
    let y = pairs.labels();
    let fit = fit_logistic(&x, &y)?;
    if fit.separated {
        log::warn!(
            "{:?}: likelihood separation detected, coefficients capped at |beta| <= {COEFFICIENT_CAP}",
            kind
        );
    }
    Ok(LinearModel {
        intercept: fit.intercept,
        coefficients: fit.coefficients,
        separation_warning: fit.separated,
        ..template
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Category, CodebookEntry};
    use crate::pairing::{Label, PairRow, SimilaritySummary};
    use std::collections::BTreeMap;

    fn jaccard_pairs(points: &[(f64, bool)]) -> PairwiseDataset {
        let rows = points
            .iter()
            .enumerate()
            .map(|(i, &(j, y))| PairRow {
                a: format!("a{i}"),
                b: format!("b{i}"),
                matches: vec![],
                label: Label::from_linked(y),
                similarity: Some(SimilaritySummary {
                    overall: j,
                    by_group: BTreeMap::from([(1, j), (2, 1.0 - j), (3, (j * 7.0).fract())]),
                }),
            })
            .collect();
        PairwiseDataset::new(rows, vec![]).unwrap()
    }

    fn codebook(groups: &[u32]) -> Codebook {
        Codebook::new(
            groups
                .iter()
                .enumerate()
                .map(|(j, &g)| CodebookEntry {
                    feature_name: format!("f{j}"),
                    category: Category::Victim,
                    lr_group: Some(g),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn all_unlinked_labels_drive_intercept_to_cap() {
        let data = jaccard_pairs(&[(0.1, false), (0.4, false), (0.7, false), (0.9, false)]);
        let m = train_lr(&data, &codebook(&[1]), LrKind::Lr1).unwrap();
        assert!(m.separation_warning);
        assert_eq!(m.intercept, -COEFFICIENT_CAP);
        assert!(m.coefficients[0].abs() < 1e-3, "slope {}", m.coefficients[0]);
        for r in &data.rows {
            assert!(m.score_inputs(&m.inputs(r).unwrap()) < 1e-12);
        }
    }

    #[test]
    fn perfectly_separated_pair_warns() {
        let data = jaccard_pairs(&[(0.0, false), (1.0, true)]);
        let m = train_lr(&data, &codebook(&[1]), LrKind::Lr1).unwrap();
        assert!(m.separation_warning);
        assert!(m.coefficients.iter().chain([&m.intercept]).all(|b| b.abs() <= COEFFICIENT_CAP));
        assert!(m.score_inputs(&[1.0]) > 0.5 && m.score_inputs(&[0.0]) < 0.5);
    }

    #[test]
    fn coefficient_arity_per_kind() {
        let points: Vec<(f64, bool)> = (0..40)
            .map(|i| ((i as f64 * 0.37).fract(), i % 3 == 0 || i % 7 == 0))
            .collect();
        let data = jaccard_pairs(&points);
        let lr1 = train_lr(&data, &codebook(&[1, 2, 3]), LrKind::Lr1).unwrap();
        assert_eq!(1 + lr1.coefficients.len(), 2);
        // six groups, of which the pairs only carry three
        assert!(train_lr(&data, &codebook(&[1, 2, 3, 4, 5, 6]), LrKind::Lr6).is_err());
        let lr3 = train_lr(&data, &codebook(&[1, 2, 3]), LrKind::Lr6).unwrap();
        assert_eq!(lr3.coefficients.len(), 3);
    }

    #[test]
    fn mle_gradient_vanishes() {
        let x: Vec<Vec<f64>> = (0..60).map(|i| vec![(i as f64 * 0.61).fract(), (i as f64 * 0.23).fract()]).collect();
        let y: Vec<bool> = (0..60).map(|i| (i * 7919) % 5 < 2).collect();
        let fit = fit_logistic(&x, &y).unwrap();
        assert!(!fit.separated);
        let mut grad = [0.0; 3];
        for (row, &yi) in x.iter().zip(&y) {
            let p = logistic(fit.intercept + row[0] * fit.coefficients[0] + row[1] * fit.coefficients[1]);
            let r = f64::from(u8::from(yi)) - p;
            grad[0] += r;
            grad[1] += r * row[0];
            grad[2] += r * row[1];
        }
        assert!(grad.iter().all(|g| g.abs() < 1e-8), "{grad:?}");
    }
}
