//! Rebalancing and denoising of labeled pair data.
//!
//! * [`rose_sample`] draws a smoothed bootstrap. On binary match vectors the
//!   smoothing kernel flips each coordinate of the seed row independently with
//!   probability `min(h, 0.5)`.
//! * [`smote_sample`] appends minority rows interpolated between a minority
//!   row and one of its nearest minority neighbours.
//! * [`kf_filter`] relabels minority rows whose k nearest neighbours all
//!   belong to the majority class.
//!
//! Neighbours are ranked by Jaccard similarity of match vectors. Equal
//! similarities are ordered by a seeded random priority per row, and a row is
//! never its own neighbour.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairing::{Label, PairRow, PairwiseDataset};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoseParams {
    /// Target proportion of minority rows in the output.
    pub p: f64,
    /// Output size; `None` keeps the input size.
    pub n_out: Option<usize>,
    /// Kernel bandwidth; each coordinate flips with probability `min(h, 0.5)`.
    pub smoothing: f64,
    pub seed: u64,
}

impl Default for RoseParams {
    fn default() -> Self {
        RoseParams {
            p: 0.5,
            n_out: None,
            smoothing: 0.1,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KfParams {
    pub k: usize,
    pub seed: u64,
}

/// The less frequent of the two labels; `Linked` on a tie.
pub fn minority_label(data: &PairwiseDataset) -> Label {
    if data.n_linked() <= data.n_unlinked() {
        Label::Linked
    } else {
        Label::Unlinked
    }
}

fn other(label: Label) -> Label {
    match label {
        Label::Linked => Label::Unlinked,
        _ => Label::Linked,
    }
}

/// Bitset view of match vectors for fast Jaccard scans.
struct BitRows {
    words: usize,
    bits: Vec<u64>,
}

impl BitRows {
    fn new(rows: &[PairRow], n_features: usize) -> Self {
        let words = n_features.div_ceil(64).max(1);
        let mut bits = vec![0u64; words * rows.len()];
        for (i, r) in rows.iter().enumerate() {
            for (j, &m) in r.matches.iter().enumerate() {
                if m {
                    bits[i * words + j / 64] |= 1 << (j % 64);
                }
            }
        }
        BitRows { words, bits }
    }

    fn row(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words..(i + 1) * self.words]
    }

    fn jaccard(&self, i: usize, j: usize) -> f64 {
        let (mut inter, mut union) = (0u32, 0u32);
        for (a, b) in self.row(i).iter().zip(self.row(j)) {
            inter += (a & b).count_ones();
            union += (a | b).count_ones();
        }
        if union == 0 {
            0.0
        } else {
            f64::from(inter) / f64::from(union)
        }
    }
}

/// Seeded tie-break priority per row (lower wins).
fn tie_priorities(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::derived_rng(seed, "neighbour-ties", 0));
    let mut priority = vec![0; n];
    for (rank, &row) in order.iter().enumerate() {
        priority[row] = rank;
    }
    priority
}

/// The `k` most similar candidates to `query`, most similar first.
fn nearest(
    bits: &BitRows,
    query: usize,
    candidates: &[usize],
    k: usize,
    priority: &[usize],
) -> Vec<usize> {
    let mut scored: Vec<(f64, usize, usize)> = candidates
        .iter()
        .filter(|&&c| c != query)
        .map(|&c| (bits.jaccard(query, c), priority[c], c))
        .collect();
    let cmp = |x: &(f64, usize, usize), y: &(f64, usize, usize)| {
        y.0.total_cmp(&x.0).then(x.1.cmp(&y.1))
    };
    if scored.len() > k {
        scored.select_nth_unstable_by(k, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    scored.into_iter().map(|s| s.2).collect()
}

fn flip_probability(h: f64) -> f64 {
    h.clamp(0.0, 0.5)
}

pub fn rose_sample(data: &PairwiseDataset, params: &RoseParams) -> Result<PairwiseDataset> {
    data.require_two_classes("ROSE")?;
    if !(params.p > 0.0 && params.p < 1.0) {
        return Err(Error::invalid(format!("ROSE p must lie in (0, 1), got {}", params.p)));
    }
    if !(params.smoothing >= 0.0) {
        return Err(Error::invalid("ROSE smoothing must be non-negative"));
    }
    let n_out = params.n_out.unwrap_or(data.len());
    if n_out < 2 {
        return Err(Error::invalid("ROSE output must have at least 2 rows"));
    }
    let minority = minority_label(data);
    let (minor, major): (Vec<usize>, Vec<usize>) =
        (0..data.len()).partition(|&i| data.rows[i].label == minority);
    let q = flip_probability(params.smoothing);
    let mut rng = seed::rng(params.seed);
    let mut rows = Vec::with_capacity(n_out);
    for _ in 0..n_out {
        let pool = if rng.gen_bool(params.p) { &minor } else { &major };
        let mut row = data.rows[pool[rng.gen_range(0..pool.len())]].clone();
        if q > 0.0 {
            let mut flipped = false;
            for m in row.matches.iter_mut() {
                if rng.gen_bool(q) {
                    *m = !*m;
                    flipped = true;
                }
            }
            if flipped {
                row.similarity = None;
            }
        }
        rows.push(row);
    }
    PairwiseDataset::new(rows, data.feature_names.clone())
}

/// Number of synthetic minority rows needed to lift `minority / total` to
/// `target`.
pub fn smote_deficit(minority: usize, total: usize, target: f64) -> usize {
    let needed = (target * total as f64 - minority as f64) / (1.0 - target);
    if needed <= 0.0 {
        0
    } else {
        (needed - 1e-9).ceil() as usize
    }
}

/// Coordinatewise interpolation: each value is taken from `neighbour` with
/// probability `u`, otherwise from `base`.
pub fn interpolate(base: &[bool], neighbour: &[bool], u: f64, rng: &mut seed::Rng) -> Vec<bool> {
    base.iter()
        .zip(neighbour)
        .map(|(&s, &n)| if rng.gen_bool(u) { n } else { s })
        .collect()
}

pub fn smote_sample(
    data: &PairwiseDataset,
    target_minority: f64,
    k: usize,
    seed: u64,
) -> Result<PairwiseDataset> {
    data.require_two_classes("SMOTE")?;
    if !(target_minority > 0.0 && target_minority < 1.0) {
        return Err(Error::invalid(format!(
            "SMOTE target must lie in (0, 1), got {target_minority}"
        )));
    }
    if k == 0 {
        return Err(Error::invalid("SMOTE k must be at least 1"));
    }
    let minority = minority_label(data);
    let minor: Vec<usize> = (0..data.len())
        .filter(|&i| data.rows[i].label == minority)
        .collect();
    if minor.len() <= k {
        return Err(Error::insufficient(format!(
            "SMOTE needs more than k = {k} minority rows, got {}",
            minor.len()
        )));
    }
    let deficit = smote_deficit(minor.len(), data.len(), target_minority);
    let bits = BitRows::new(&data.rows, data.n_features());
    let priority = tie_priorities(data.len(), seed);
    let neighbours: Vec<Vec<usize>> = minor
        .par_iter()
        .map(|&i| nearest(&bits, i, &minor, k, &priority))
        .collect();

    let mut rng = seed::derived_rng(seed, "smote", 0);
    let mut rows = data.rows.clone();
    rows.reserve(deficit);
    for _ in 0..deficit {
        let pick = rng.gen_range(0..minor.len());
        let base = &data.rows[minor[pick]];
        let nb = &data.rows[neighbours[pick][rng.gen_range(0..k)]];
        let u: f64 = rng.gen();
        rows.push(PairRow {
            a: base.a.clone(),
            b: base.b.clone(),
            matches: interpolate(&base.matches, &nb.matches, u, &mut rng),
            label: minority,
            similarity: None,
        });
    }
    PairwiseDataset::new(rows, data.feature_names.clone())
}

/// Indices of minority rows whose `k` nearest neighbours are all majority.
pub fn kf_relabeled(data: &PairwiseDataset, params: &KfParams) -> Result<Vec<usize>> {
    data.require_two_classes("k-NN filter")?;
    if params.k == 0 || params.k >= data.len() {
        return Err(Error::invalid(format!(
            "k-NN filter needs 1 <= k < {} rows, got k = {}",
            data.len(),
            params.k
        )));
    }
    let minority = minority_label(data);
    let bits = BitRows::new(&data.rows, data.n_features());
    let priority = tie_priorities(data.len(), params.seed);
    let all: Vec<usize> = (0..data.len()).collect();
    let relabel = all
        .par_iter()
        .filter(|&&i| data.rows[i].label == minority)
        .filter(|&&i| {
            nearest(&bits, i, &all, params.k, &priority)
                .iter()
                .all(|&j| data.rows[j].label != minority)
        })
        .copied()
        .collect();
    Ok(relabel)
}

pub fn kf_filter(data: &PairwiseDataset, params: &KfParams) -> Result<PairwiseDataset> {
    let relabel = kf_relabeled(data, params)?;
    let majority = other(minority_label(data));
    let mut out = data.clone();
    for i in relabel {
        out.rows[i].label = majority;
    }
    Ok(out)
}
