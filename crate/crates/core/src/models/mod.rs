//! The six model families and a common scoring interface.
//!
//! | family        | input                         | score                        |
//! |---------------|-------------------------------|------------------------------|
//! | LR1           | overall Jaccard               | logistic                     |
//! | LR6           | per-group Jaccards            | logistic                     |
//! | elastic net   | match vector                  | logistic                     |
//! | SVM           | match vector                  | Platt-scaled decision value  |
//! | random forest | match vector                  | mean leaf linked fraction    |
//! | boosted trees | match vector                  | logistic of summed margins   |

mod boosted;
mod elastic_net;
mod forest;
mod logistic;
mod svm;
mod tree;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use boosted::{train_boosted, BoostParams, BoostedModel};
pub use elastic_net::{
    smooth_gradient, smooth_objective, soft_threshold, train_elastic_net, ElasticNetParams,
};
pub use forest::{train_random_forest, train_random_forest_with, ForestModel, ForestParams};
pub use logistic::{fit_logistic, logistic, train_lr, LogisticFit, LrKind, COEFFICIENT_CAP};
pub use svm::{
    fit_platt, solve_linear_svm, train_svm, ClassWeights, DualSolution, Platt, SupportSplit,
    SvmModel, SvmSolverOptions,
};
pub use tree::{fit_classification_tree, Node, Tree};

use crate::error::{Error, Result};
use crate::pairing::{PairRow, PairwiseDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Family {
    Lr1,
    Lr6,
    ElasticNet,
    Svm,
    RandomForest,
    Boosted,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Lr1 => "LR1",
            Family::Lr6 => "LR6",
            Family::ElasticNet => "EN",
            Family::Svm => "SVM",
            Family::RandomForest => "RF",
            Family::Boosted => "XGB",
        }
    }

    /// Whether the family consumes match vectors (as opposed to Jaccard
    /// summaries of the raw case vectors).
    pub fn uses_match_vector(self) -> bool {
        !matches!(self, Family::Lr1 | Family::Lr6)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<Family> for String {
    fn from(f: Family) -> String {
        f.as_str().to_string()
    }
}

impl TryFrom<String> for Family {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LR1" => Ok(Family::Lr1),
            "LR6" => Ok(Family::Lr6),
            "EN" | "ELASTICNET" => Ok(Family::ElasticNet),
            "SVM" => Ok(Family::Svm),
            "RF" | "FOREST" => Ok(Family::RandomForest),
            "XGB" | "XGBOOST" | "BOOST" => Ok(Family::Boosted),
            other => Err(Error::invalid(format!("unknown model family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputKind {
    JaccardOverall,
    JaccardGroups,
    MatchVector,
}

/// Logistic-link linear model over one of three input representations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub input_kind: InputKind,
    /// Group ids backing each coefficient for `JaccardGroups`.
    #[serde(default)]
    pub groups: Vec<u32>,
    /// Set when the likelihood had no finite maximiser and coefficients were
    /// capped.
    #[serde(default)]
    pub separation_warning: bool,
    #[serde(default)]
    pub elastic_net: Option<ElasticNetParams>,
}

impl LinearModel {
    pub fn family(&self) -> Family {
        match self.input_kind {
            InputKind::JaccardOverall => Family::Lr1,
            InputKind::JaccardGroups => Family::Lr6,
            InputKind::MatchVector => Family::ElasticNet,
        }
    }

    pub fn inputs(&self, row: &PairRow) -> Result<Vec<f64>> {
        match self.input_kind {
            InputKind::MatchVector => {
                if row.matches.len() != self.coefficients.len() {
                    return Err(Error::ArityMismatch {
                        expected: self.coefficients.len(),
                        found: row.matches.len(),
                    });
                }
                Ok(row.match_values())
            }
            InputKind::JaccardOverall => row
                .similarity
                .as_ref()
                .map(|s| vec![s.overall])
                .ok_or_else(missing_similarity),
            InputKind::JaccardGroups => {
                let s = row.similarity.as_ref().ok_or_else(missing_similarity)?;
                self.groups
                    .iter()
                    .map(|g| {
                        s.by_group.get(g).copied().ok_or_else(|| {
                            Error::invalid(format!("pair has no Jaccard value for group {g}"))
                        })
                    })
                    .collect()
            }
        }
    }

    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>()
    }

    pub fn score_inputs(&self, x: &[f64]) -> f64 {
        logistic(self.linear_predictor(x))
    }
}

fn missing_similarity() -> Error {
    Error::invalid(
        "LR1/LR6 need raw-vector Jaccard summaries; build pairs with a codebook and do not resample",
    )
}

/// A model that scores a (possibly fractional) match vector.
pub trait MatchScorer: Sync {
    fn n_features(&self) -> usize;
    fn score(&self, x: &[f64]) -> f64;
}

impl MatchScorer for LinearModel {
    fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    fn score(&self, x: &[f64]) -> f64 {
        self.score_inputs(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrainedModel {
    Linear(LinearModel),
    Svm(SvmModel),
    Forest(ForestModel),
    Boosted(BoostedModel),
}

impl TrainedModel {
    pub fn family(&self) -> Family {
        match self {
            TrainedModel::Linear(m) => m.family(),
            TrainedModel::Svm(_) => Family::Svm,
            TrainedModel::Forest(_) => Family::RandomForest,
            TrainedModel::Boosted(_) => Family::Boosted,
        }
    }

    /// Match-vector view for explanation; LR1/LR6 have none.
    pub fn as_match_scorer(&self) -> Result<&dyn MatchScorer> {
        match self {
            TrainedModel::Linear(m) if m.input_kind == InputKind::MatchVector => Ok(m),
            TrainedModel::Linear(_) => Err(Error::invalid(format!(
                "{} scores Jaccard summaries, not match vectors",
                self.family()
            ))),
            TrainedModel::Svm(m) => Ok(m),
            TrainedModel::Forest(m) => Ok(m),
            TrainedModel::Boosted(m) => Ok(m),
        }
    }

    pub fn score_row(&self, row: &PairRow) -> Result<f64> {
        match self {
            TrainedModel::Linear(m) => Ok(m.score_inputs(&m.inputs(row)?)),
            other => {
                let scorer = other.as_match_scorer()?;
                if row.matches.len() != scorer.n_features() {
                    return Err(Error::ArityMismatch {
                        expected: scorer.n_features(),
                        found: row.matches.len(),
                    });
                }
                Ok(scorer.score(&row.match_values()))
            }
        }
    }
}

/// One score in [0, 1] per row, in input order.
pub fn predict(model: &TrainedModel, pairs: &PairwiseDataset) -> Result<Vec<f64>> {
    if let Ok(scorer) = model.as_match_scorer() {
        if scorer.n_features() != pairs.n_features() {
            return Err(Error::ArityMismatch {
                expected: scorer.n_features(),
                found: pairs.n_features(),
            });
        }
    }
    pairs.rows.iter().map(|r| model.score_row(r)).collect()
}

/// Serialized model: family, feature names, seed and the learned state
/// (parameters included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub family: Family,
    pub seed: u64,
    pub feature_names: Vec<String>,
    pub model: TrainedModel,
}

impl ModelFile {
    pub fn new(model: TrainedModel, feature_names: Vec<String>, seed: u64) -> Self {
        ModelFile {
            family: model.family(),
            seed,
            feature_names,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.family != file.model.family() {
            return Err(Error::invalid(format!(
                "model file says {} but holds a {} model",
                file.family,
                file.model.family()
            )));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        ModelFile::from_json(&std::fs::read_to_string(path)?)
    }
}
