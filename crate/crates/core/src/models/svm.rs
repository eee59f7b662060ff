//! Linear soft-margin SVM trained by dual coordinate descent.
//!
//! The primal problem is `min ||w||^2 / 2 + c * sum_i cw(y_i) * hinge(y_i, w.x_i + b)`.
//! The bias is learned through a constant augmented feature, so it is
//! regularized together with `w`. The dual box constraint of row `i` is
//! `c * cw(y_i)`; each coordinate step minimises the dual exactly, which makes
//! the dual objective non-increasing across epochs.
//!
//! Scores are Platt pseudo-probabilities fitted on 3-fold cross-validated
//! decision values.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::MatchScorer;
use crate::error::{Error, Result};
use crate::pairing::PairwiseDataset;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub unlinked: f64,
    pub linked: f64,
}

impl ClassWeights {
    /// Inverse class frequencies, `n / (2 n_class)`.
    pub fn balanced(data: &PairwiseDataset) -> ClassWeights {
        let n = data.len() as f64;
        ClassWeights {
            unlinked: n / (2.0 * data.n_unlinked().max(1) as f64),
            linked: n / (2.0 * data.n_linked().max(1) as f64),
        }
    }

    pub fn uniform() -> ClassWeights {
        ClassWeights {
            unlinked: 1.0,
            linked: 1.0,
        }
    }

    fn of(&self, linked: bool) -> f64 {
        if linked {
            self.linked
        } else {
            self.unlinked
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Platt {
    pub a: f64,
    pub b: f64,
}

impl Platt {
    pub fn apply(&self, decision: f64) -> f64 {
        let f = self.a * decision + self.b;
        if f >= 0.0 {
            let e = (-f).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + f.exp())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportSplit {
    pub unlinked: usize,
    pub linked: usize,
}

impl SupportSplit {
    pub fn total(&self) -> usize {
        self.unlinked + self.linked
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub class_weights: ClassWeights,
    pub support_count: usize,
    pub support_by_class: SupportSplit,
    pub platt: Platt,
    pub seed: u64,
}

impl SvmModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

impl MatchScorer for SvmModel {
    fn n_features(&self) -> usize {
        self.weights.len()
    }

    fn score(&self, x: &[f64]) -> f64 {
        self.platt.apply(self.decision(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmSolverOptions {
    pub max_epochs: usize,
    /// Stop once the projected-gradient spread falls below this.
    pub tol: f64,
}

impl Default for SvmSolverOptions {
    fn default() -> Self {
        SvmSolverOptions {
            max_epochs: 1000,
            tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub alpha: Vec<f64>,
    /// Dual objective `||w||^2 / 2 - sum(alpha)` after each epoch.
    pub dual_objective: Vec<f64>,
    pub epochs: usize,
}

impl DualSolution {
    pub fn primal_objective(&self, x: &[Vec<f64>], y: &[bool], upper: &[f64], c: f64) -> f64 {
        let reg = (self.weights.iter().map(|w| w * w).sum::<f64>() + self.bias * self.bias) / 2.0;
        let loss: f64 = x
            .iter()
            .zip(y)
            .zip(upper)
            .map(|((row, &yi), u)| {
                let s = if yi { 1.0 } else { -1.0 };
                let d = self.bias + row.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>();
                (u / c) * (1.0 - s * d).max(0.0)
            })
            .sum();
        reg + c * loss
    }
}

/// Dual coordinate descent with per-row box bounds `upper`.
pub fn solve_linear_svm(
    x: &[Vec<f64>],
    y: &[bool],
    upper: &[f64],
    seed_value: u64,
    options: &SvmSolverOptions,
) -> DualSolution {
    let n = x.len();
    let d = x.first().map_or(0, Vec::len);
    let sign: Vec<f64> = y.iter().map(|&v| if v { 1.0 } else { -1.0 }).collect();
    // augmented with the bias column
    let q_diag: Vec<f64> = x
        .iter()
        .map(|row| row.iter().map(|v| v * v).sum::<f64>() + 1.0)
        .collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::derived_rng(seed_value, "svm-epochs", 0);
    let mut trace = Vec::new();
    let mut epochs = 0;

    for _ in 0..options.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let row = &x[i];
            let margin = b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let g = sign[i] * margin - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] >= upper[i] {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / q_diag[i]).clamp(0.0, upper[i]);
                let delta = (alpha[i] - old) * sign[i];
                if delta != 0.0 {
                    for (wj, xj) in w.iter_mut().zip(row) {
                        *wj += delta * xj;
                    }
                    b += delta;
                }
            }
        }
        let norm = (w.iter().map(|v| v * v).sum::<f64>() + b * b) / 2.0;
        trace.push(norm - alpha.iter().sum::<f64>());
        if pg_max - pg_min < options.tol {
            break;
        }
    }
    DualSolution {
        weights: w,
        bias: b,
        alpha,
        dual_objective: trace,
        epochs,
    }
}

/// Platt scaling by Newton's method with backtracking on the regularized
/// targets `(N+ + 1) / (N+ + 2)` and `1 / (N- + 2)`.
pub fn fit_platt(decisions: &[f64], labels: &[bool]) -> Platt {
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let t: Vec<f64> = labels.iter().map(|&l| if l { hi } else { lo }).collect();
    let mut a = 0.0;
    let mut b = ((n_neg + 1.0) / (n_pos + 1.0)).ln();
    let loss = |a: f64, b: f64| -> f64 {
        decisions
            .iter()
            .zip(&t)
            .map(|(&d, &ti)| {
                let f = a * d + b;
                if f >= 0.0 {
                    ti * f + (-f).exp().ln_1p()
                } else {
                    (ti - 1.0) * f + f.exp().ln_1p()
                }
            })
            .sum()
    };
    let mut fval = loss(a, b);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
        for (&d, &ti) in decisions.iter().zip(&t) {
            let f = a * d + b;
            let (p, q) = if f >= 0.0 {
                let e = (-f).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = f.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let w = p * q;
            h11 += d * d * w;
            h22 += w;
            h21 += d * w;
            let diff = ti - p;
            g1 += d * diff;
            g2 += diff;
        }
        if g1.abs() < 1e-9 && g2.abs() < 1e-9 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        let mut improved = false;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = loss(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                improved = true;
                break;
            }
            step /= 2.0;
        }
        if !improved {
            break;
        }
    }
    Platt { a, b }
}

fn bounds(y: &[bool], c: f64, weights: &ClassWeights) -> Vec<f64> {
    y.iter().map(|&l| c * weights.of(l)).collect()
}

/// Stratified fold assignment (fold index per row).
fn stratified_folds(y: &[bool], folds: usize, seed_value: u64) -> Vec<usize> {
    let mut rng = seed::derived_rng(seed_value, "svm-folds", 0);
    let mut assignment = vec![0; y.len()];
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            assignment[i] = k % folds;
        }
    }
    assignment
}

pub fn train_svm(
    pairs: &PairwiseDataset,
    c: f64,
    class_weights: Option<ClassWeights>,
    seed_value: u64,
) -> Result<SvmModel> {
    if !(c > 0.0) {
        return Err(Error::invalid(format!("SVM cost must be positive, got {c}")));
    }
    pairs.require_two_classes("SVM")?;
    let weights = class_weights.unwrap_or_else(|| ClassWeights::balanced(pairs));
    if !(weights.linked > 0.0 && weights.unlinked > 0.0) {
        return Err(Error::invalid("SVM class weights must be positive"));
    }
    let x = pairs.match_matrix();
    let y = pairs.labels();
    let options = SvmSolverOptions::default();
    let full = solve_linear_svm(&x, &y, &bounds(&y, c, &weights), seed_value, &options);

    let decision = |sol: &DualSolution, row: &[f64]| {
        sol.bias + row.iter().zip(&sol.weights).map(|(a, b)| a * b).sum::<f64>()
    };
    const FOLDS: usize = 3;
    let assignment = stratified_folds(&y, FOLDS, seed_value);
    let mut cv = vec![0.0; x.len()];
    let mut cv_ok = true;
    for fold in 0..FOLDS {
        let train: Vec<usize> = (0..x.len()).filter(|&i| assignment[i] != fold).collect();
        let fx: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
        let fy: Vec<bool> = train.iter().map(|&i| y[i]).collect();
        if !fy.iter().any(|&v| v) || fy.iter().all(|&v| v) {
            cv_ok = false;
            break;
        }
        let sol = solve_linear_svm(
            &fx,
            &fy,
            &bounds(&fy, c, &weights),
            seed::derive_seed(seed_value, "svm-fold", fold as u64),
            &options,
        );
        for i in (0..x.len()).filter(|&i| assignment[i] == fold) {
            cv[i] = decision(&sol, &x[i]);
        }
    }
    if !cv_ok {
        log::warn!("too few rows for cross-validated Platt scaling; using in-sample decisions");
        cv = x.iter().map(|row| decision(&full, row)).collect();
    }
    let platt = fit_platt(&cv, &y);

    let mut split = SupportSplit {
        unlinked: 0,
        linked: 0,
    };
    for (a, &l) in full.alpha.iter().zip(&y) {
        if *a > 0.0 {
            if l {
                split.linked += 1;
            } else {
                split.unlinked += 1;
            }
        }
    }
    Ok(SvmModel {
        weights: full.weights,
        bias: full.bias,
        c,
        class_weights: weights,
        support_count: split.total(),
        support_by_class: split,
        platt,
        seed: seed_value,
    })
}
