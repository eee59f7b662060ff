//! Kernel SHAP attributions for match-vector scores.
//!
//! The value of a coalition `S` is the mean model score over background rows
//! with the features in `S` replaced by the instance's values (marginal
//! imputation). Features whose background values all equal the instance value
//! cannot change any coalition value and get weight 0 without entering the
//! regression. The efficiency constraint `sum(phi) = f(x) - base` is imposed
//! exactly by eliminating the last varying feature.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::MatchScorer;
use crate::pairing::PairwiseDataset;
use crate::seed;

/// Rows drawn for the default background set.
pub const DEFAULT_BACKGROUND: usize = 100;

/// How masked features are filled in when evaluating a coalition.
pub trait Imputation: Sync {
    /// Mean score with features outside `keep` imputed.
    fn coalition_value(&self, model: &dyn MatchScorer, instance: &[f64], keep: &[bool]) -> f64;
    /// Per-feature flag: can imputation move this feature off the instance value?
    fn varies(&self, instance: &[f64]) -> Vec<bool>;
}

/// Interventional imputation from a fixed background sample.
pub struct MarginalImputation {
    pub background: Vec<Vec<f64>>,
}

impl Imputation for MarginalImputation {
    fn coalition_value(&self, model: &dyn MatchScorer, instance: &[f64], keep: &[bool]) -> f64 {
        let mut z = vec![0.0; instance.len()];
        let total: f64 = self
            .background
            .iter()
            .map(|b| {
                for j in 0..z.len() {
                    z[j] = if keep[j] { instance[j] } else { b[j] };
                }
                model.score(&z)
            })
            .sum();
        total / self.background.len() as f64
    }

    fn varies(&self, instance: &[f64]) -> Vec<bool> {
        (0..instance.len())
            .map(|j| self.background.iter().any(|b| b[j] != instance[j]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapReport {
    pub base_value: f64,
    pub score: f64,
    pub weights: Vec<f64>,
    pub instance: Vec<f64>,
    pub exhaustive: bool,
}

impl ShapReport {
    pub fn local_accuracy_gap(&self) -> f64 {
        (self.base_value + self.weights.iter().sum::<f64>() - self.score).abs()
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel weight of a coalition of size `s` among `m` players.
pub fn shapley_kernel(m: usize, s: usize) -> f64 {
    (m - 1) as f64 / (binomial(m, s) * s as f64 * (m - s) as f64)
}

/// Coalitions over `m` players with their regression weights.
fn coalitions(m: usize, budget: usize, rng: &mut seed::Rng) -> (Vec<Vec<bool>>, Vec<f64>, bool) {
    let full = if m < usize::BITS as usize - 1 { (1usize << m) - 2 } else { usize::MAX };
    if budget >= full {
        let masks = (1..=full)
            .map(|mask| (0..m).map(|j| mask >> j & 1 == 1).collect::<Vec<bool>>())
            .collect::<Vec<_>>();
        let weights = masks
            .iter()
            .map(|z| shapley_kernel(m, z.iter().filter(|&&b| b).count()))
            .collect();
        return (masks, weights, true);
    }
    // size s carries total kernel mass (m - 1) / (s (m - s))
    let mass: Vec<f64> = (1..m).map(|s| 1.0 / (s * (m - s)) as f64).collect();
    let total: f64 = mass.iter().sum();
    let mut masks = Vec::with_capacity(budget);
    for _ in 0..budget {
        let mut u = rng.gen::<f64>() * total;
        let mut size = m - 1;
        for (k, w) in mass.iter().enumerate() {
            if u < *w {
                size = k + 1;
                break;
            }
            u -= w;
        }
        let mut z = vec![false; m];
        for j in index::sample(rng, m, size) {
            z[j] = true;
        }
        masks.push(z);
    }
    (masks, vec![1.0; budget], false)
}

pub fn kernel_shap(
    model: &dyn MatchScorer,
    instance: &[f64],
    background: &PairwiseDataset,
    n_coalitions: usize,
    seed_value: u64,
) -> Result<ShapReport> {
    if background.is_empty() {
        return Err(Error::insufficient("kernel SHAP needs a non-empty background set"));
    }
    let imputation = MarginalImputation {
        background: background.match_matrix(),
    };
    kernel_shap_with(model, instance, &imputation, n_coalitions, seed_value)
}

pub fn kernel_shap_with(
    model: &dyn MatchScorer,
    instance: &[f64],
    imputation: &dyn Imputation,
    n_coalitions: usize,
    seed_value: u64,
) -> Result<ShapReport> {
    let p = model.n_features();
    if instance.len() != p {
        return Err(Error::ArityMismatch {
            expected: p,
            found: instance.len(),
        });
    }
    if n_coalitions < p + 2 {
        return Err(Error::invalid(format!(
            "kernel SHAP needs at least P + 2 = {} coalitions, got {n_coalitions}",
            p + 2
        )));
    }
    let score = model.score(instance);
    let base_value = imputation.coalition_value(model, instance, &vec![false; p]);
    let varying: Vec<usize> = imputation
        .varies(instance)
        .iter()
        .enumerate()
        .filter_map(|(j, &v)| v.then_some(j))
        .collect();
    let m = varying.len();
    let delta = score - base_value;
    let mut weights = vec![0.0; p];
    let mut exhaustive = true;
    match m {
        0 => {}
        1 => weights[varying[0]] = delta,
        _ => {
            let mut rng = seed::derived_rng(seed_value, "kernel-shap", 0);
            let (masks, kernel, exact) = coalitions(m, n_coalitions, &mut rng);
            exhaustive = exact;
            let values: Vec<f64> = masks
                .iter()
                .map(|z| {
                    let mut keep = vec![true; p];
                    for (k, &j) in varying.iter().enumerate() {
                        keep[j] = z[k];
                    }
                    imputation.coalition_value(model, instance, &keep)
                })
                .collect();
            // phi_last = delta - sum(phi_rest)
            let x = DMatrix::from_fn(masks.len(), m - 1, |r, c| {
                f64::from(u8::from(masks[r][c])) - f64::from(u8::from(masks[r][m - 1]))
            });
            let y = DVector::from_fn(masks.len(), |r, _| {
                values[r] - base_value - f64::from(u8::from(masks[r][m - 1])) * delta
            });
            let w = DVector::from_vec(kernel);
            let mut xw = x.clone();
            for (r, mut row) in xw.row_iter_mut().enumerate() {
                row *= w[r];
            }
            let normal = x.transpose() * &xw;
            let rhs = xw.transpose() * &y;
            let svd = normal.svd(true, true);
            let max_sv = svd.singular_values.max();
            if !(max_sv > 0.0) || svd.rank(max_sv * 1e-10) < m - 1 {
                return Err(Error::SingularSystem(n_coalitions));
            }
            let phi = svd
                .solve(&rhs, max_sv * 1e-12)
                .map_err(|_| Error::SingularSystem(n_coalitions))?;
            let mut rest = 0.0;
            for k in 0..m - 1 {
                weights[varying[k]] = phi[k];
                rest += phi[k];
            }
            weights[varying[m - 1]] = delta - rest;
        }
    }
    Ok(ShapReport {
        base_value,
        score,
        weights,
        instance: instance.to_vec(),
        exhaustive,
    })
}

/// Seeded subsample of at most `size` rows, in input order.
pub fn background_sample(data: &PairwiseDataset, size: usize, seed_value: u64) -> PairwiseDataset {
    if data.len() <= size {
        return data.clone();
    }
    let mut rng = seed::derived_rng(seed_value, "shap-background", 0);
    let mut idx = index::sample(&mut rng, data.len(), size).into_vec();
    idx.sort_unstable();
    data.subset(&idx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeight {
    pub feature: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalShap {
    pub base_value: f64,
    pub n_instances: usize,
    /// Signed mean attributions, largest magnitude first.
    pub features: Vec<FeatureWeight>,
}

impl GlobalShap {
    pub fn weight_of(&self, feature: &str) -> Option<f64> {
        self.features.iter().find(|f| f.feature == feature).map(|f| f.weight)
    }

    pub fn to_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["feature", "weight"])?;
        for f in &self.features {
            w.write_record([f.feature.as_str(), &f.weight.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Means of per-instance kernel SHAP weights over `dataset`, each instance
/// explained with its own derived seed.
pub fn global_shap(
    model: &dyn MatchScorer,
    dataset: &PairwiseDataset,
    background: &PairwiseDataset,
    n_coalitions: usize,
    seed_value: u64,
) -> Result<GlobalShap> {
    if dataset.is_empty() {
        return Err(Error::insufficient("global SHAP needs at least one instance"));
    }
    let reports = dataset
        .rows
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            kernel_shap(
                model,
                &row.match_values(),
                background,
                n_coalitions,
                seed::derive_seed(seed_value, "shap-instance", i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let n = reports.len() as f64;
    let p = dataset.n_features();
    let mut mean = vec![0.0; p];
    for r in &reports {
        for (m, w) in mean.iter_mut().zip(&r.weights) {
            *m += w / n;
        }
    }
    let mut features: Vec<FeatureWeight> = dataset
        .feature_names
        .iter()
        .zip(mean)
        .map(|(f, weight)| FeatureWeight {
            feature: f.clone(),
            weight,
        })
        .collect();
    features.sort_by(|a, b| b.weight.abs().total_cmp(&a.weight.abs()));
    Ok(GlobalShap {
        base_value: reports[0].base_value,
        n_instances: reports.len(),
        features,
    })
}
