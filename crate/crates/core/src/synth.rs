//! Synthetic case data with suspect-level MO signatures.
//!
//! Each suspect draws a binary signature with per-feature rate
//! `signature_density`. Each of their victims' cases copies the signature with
//! independent flips at `noise_flip`, then has cells blanked completely at
//! random at `missing_rate`. Case ids are assigned in a seeded random order so
//! a suspect's cases are not contiguous.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{CaseTable, Category, Codebook, CodebookEntry, LinkEntry, LinkageRegister};
use crate::seed;

/// 17 suspects, 61 victims, median 3, 89 linked pairs out of 1830.
pub const DEFAULT_HISTOGRAM: [usize; 17] = [2, 2, 3, 3, 3, 3, 3, 3, 3, 4, 4, 4, 4, 4, 4, 6, 6];

/// 84 suspects sharing 300 victims, 54 of them with a single victim; the
/// default shape of the unknown-status fixture.
pub fn unknown_histogram() -> Vec<usize> {
    [(54, 1), (3, 2), (9, 3), (5, 4), (2, 5), (2, 6), (3, 8), (1, 9), (1, 10), (1, 11), (1, 23), (1, 40), (1, 54)]
        .iter()
        .flat_map(|&(suspects, victims)| std::iter::repeat(victims).take(suspects))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VictimDistribution {
    /// Victim count of each suspect.
    Histogram(Vec<usize>),
    /// `1 + Geometric` counts with the given mean (at least 1).
    Geometric { mean: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_suspects: usize,
    pub victims_per_suspect: VictimDistribution,
    pub n_features: usize,
    pub signature_density: f64,
    pub noise_flip: f64,
    pub missing_rate: f64,
    pub seed: u64,
    /// Prefix for generated case ids.
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_suspects: DEFAULT_HISTOGRAM.len(),
            victims_per_suspect: VictimDistribution::Histogram(DEFAULT_HISTOGRAM.to_vec()),
            n_features: 51,
            signature_density: 0.3,
            noise_flip: 0.1,
            missing_rate: 0.05,
            seed: 1,
            id_prefix: "case".into(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("signature_density", self.signature_density),
            ("noise_flip", self.noise_flip),
            ("missing_rate", self.missing_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.n_features == 0 {
            return Err(Error::invalid("n_features must be at least 1"));
        }
        if self.n_suspects == 0 {
            return Err(Error::invalid("n_suspects must be at least 1"));
        }
        match &self.victims_per_suspect {
            VictimDistribution::Histogram(h) => {
                if h.len() != self.n_suspects {
                    return Err(Error::invalid(format!(
                        "histogram lists {} suspects but n_suspects is {}",
                        h.len(),
                        self.n_suspects
                    )));
                }
                if h.contains(&0) {
                    return Err(Error::invalid("every suspect needs at least one victim"));
                }
            }
            VictimDistribution::Geometric { mean } => {
                if !(*mean >= 1.0) {
                    return Err(Error::invalid(format!("geometric mean must be >= 1, got {mean}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub table: CaseTable,
    pub codebook: Codebook,
    pub register: LinkageRegister,
}

/// Category of feature `j`, dealt round-robin.
pub fn feature_category(j: usize) -> Category {
    Category::ALL[j % Category::ALL.len()]
}

/// LR6 group of a category.
pub fn category_group(c: Category) -> u32 {
    match c {
        Category::Victim => 1,
        Category::Suspect => 2,
        Category::Temporal => 3,
        Category::InitialApproach => 4,
        Category::FollowOnContact | Category::Maintenance => 5,
        Category::Extortion | Category::Closure => 6,
    }
}

pub fn synthetic_codebook(n_features: usize) -> Codebook {
    let mut per_category = [0usize; 8];
    let entries = (0..n_features)
        .map(|j| {
            let c = feature_category(j);
            let k = &mut per_category[j % 8];
            *k += 1;
            CodebookEntry {
                feature_name: format!("{}_{:02}", c.as_str(), *k),
                category: c,
                lr_group: Some(category_group(c)),
            }
        })
        .collect();
    Codebook::new(entries).expect("generated names are unique")
}

fn victim_counts(config: &SynthConfig, rng: &mut seed::Rng) -> Vec<usize> {
    match &config.victims_per_suspect {
        VictimDistribution::Histogram(h) => h.clone(),
        VictimDistribution::Geometric { mean } => {
            let p = 1.0 / mean;
            (0..config.n_suspects)
                .map(|_| {
                    let mut k = 1;
                    while p < 1.0 && !rng.gen_bool(p) {
                        k += 1;
                    }
                    k
                })
                .collect()
        }
    }
}

pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let p = config.n_features;
    let mut rng = seed::derived_rng(config.seed, "synth", 0);
    let counts = victim_counts(config, &mut rng);
    let signatures: Vec<Vec<bool>> = (0..config.n_suspects)
        .map(|_| (0..p).map(|_| rng.gen_bool(config.signature_density)).collect())
        .collect();
    let mut cases: Vec<(usize, Vec<Option<bool>>)> = Vec::new();
    for (s, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let row = signatures[s]
                .iter()
                .map(|&bit| {
                    let v = bit ^ rng.gen_bool(config.noise_flip);
                    (!rng.gen_bool(config.missing_rate)).then_some(v)
                })
                .collect();
            cases.push((s, row));
        }
    }
    cases.shuffle(&mut rng);
    let width = cases.len().to_string().len().max(3);
    let ids: Vec<String> = (0..cases.len())
        .map(|i| format!("{}{:0width$}", config.id_prefix, i + 1))
        .collect();
    let codebook = synthetic_codebook(p);
    let register = LinkageRegister::new(
        ids.iter()
            .zip(&cases)
            .map(|(id, (s, _))| LinkEntry {
                case_id: id.clone(),
                suspect_id: format!("s{:03}", s + 1),
            })
            .collect(),
    )?;
    let table = CaseTable::new(ids, codebook.names(), cases.into_iter().map(|(_, r)| r).collect())?;
    Ok(SynthData {
        table,
        codebook,
        register,
    })
}

/// Linked-pair fraction implied by a victims-per-suspect histogram:
/// `sum_s C(v_s, 2) / C(sum_s v_s, 2)`.
pub fn expected_prevalence(victims_per_suspect: &[usize]) -> Result<f64> {
    if victims_per_suspect.contains(&0) {
        return Err(Error::invalid("victim counts must be at least 1"));
    }
    let total: usize = victims_per_suspect.iter().sum();
    if total < 2 {
        return Err(Error::insufficient("need at least two victims to form a pair"));
    }
    let linked: usize = victims_per_suspect.iter().map(|v| v * (v - 1) / 2).sum();
    Ok(linked as f64 / (total * (total - 1) / 2) as f64)
}
