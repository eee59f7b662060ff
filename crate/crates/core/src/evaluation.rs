//! Splitting, confusion matrices, ROC analysis, cost-weighted thresholds and
//! grid search.
//!
//! A row is predicted linked iff its score is at least the threshold.
//! Undefined ratios (zero denominators) are `None`, never NaN.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{predict, Family, TrainedModel};
use crate::pairing::PairwiseDataset;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.tn + self.fp
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Non-finite thresholds serialize as the strings `"inf"` and `"-inf"`.
pub mod threshold_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    fn encode(t: f64) -> Repr {
        if t.is_finite() {
            Repr::Number(t)
        } else if t.is_nan() {
            Repr::Text("nan".into())
        } else if t > 0.0 {
            Repr::Text("inf".into())
        } else {
            Repr::Text("-inf".into())
        }
    }

    fn decode<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Number(v) => Ok(v),
            Repr::Text(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(E::custom(format!("bad threshold `{other}`"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
        encode(*t).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        decode(Repr::deserialize(d)?)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(t: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            t.map(encode).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Option::<Repr>::deserialize(d)?.map(decode).transpose()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub se: Option<f64>,
    pub sp: Option<f64>,
    pub p: Option<f64>,
    /// Harmonic mean of precision and sensitivity.
    pub hm: Option<f64>,
    pub acc: Option<f64>,
    pub auroc: Option<f64>,
    #[serde(with = "threshold_serde::option", default)]
    pub threshold: Option<f64>,
    pub confusion: ConfusionMatrix,
}

pub fn confusion(labels: &[bool], scores: &[f64], threshold: f64) -> Result<ConfusionMatrix> {
    if labels.len() != scores.len() {
        return Err(Error::invalid(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    let mut c = ConfusionMatrix::default();
    for (&y, &s) in labels.iter().zip(scores) {
        match (y, s >= threshold) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn metrics(c: &ConfusionMatrix) -> MetricsReport {
    let se = ratio(c.tp, c.tp + c.fn_);
    let p = ratio(c.tp, c.tp + c.fp);
    let hm = match (p, se) {
        (Some(p), Some(se)) if p + se > 0.0 => Some(2.0 * p * se / (p + se)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    MetricsReport {
        se,
        sp: ratio(c.tn, c.tn + c.fp),
        p,
        hm,
        acc: ratio(c.tp + c.tn, c.total()),
        auroc: None,
        threshold: None,
        confusion: *c,
    }
}

/// Full report at a fixed threshold, AUROC included when both classes occur.
pub fn evaluate(labels: &[bool], scores: &[f64], threshold: f64) -> Result<MetricsReport> {
    let mut report = metrics(&confusion(labels, scores, threshold)?);
    report.auroc = auroc(labels, scores).ok();
    report.threshold = Some(threshold);
    Ok(report)
}

fn class_counts(labels: &[bool]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::insufficient(format!(
            "need both classes ({pos} linked, {neg} unlinked)"
        )));
    }
    Ok((pos, neg))
}

fn ascending(labels: &[bool], scores: &[f64]) -> Vec<(f64, bool)> {
    let mut v: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v
}

/// Mann-Whitney concordance: the probability that a random linked pair
/// outscores a random unlinked one, ties counting one half.
pub fn auroc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::invalid("labels and scores differ in length"));
    }
    let (pos, neg) = class_counts(labels)?;
    let sorted = ascending(labels, scores);
    let mut neg_below = 0usize;
    let mut concordant = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut p_tie, mut n_tie) = (0usize, 0usize);
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            if sorted[j].1 {
                p_tie += 1;
            } else {
                n_tie += 1;
            }
            j += 1;
        }
        concordant += p_tie as f64 * neg_below as f64 + 0.5 * p_tie as f64 * n_tie as f64;
        neg_below += n_tie;
        i = j;
    }
    Ok(concordant / (pos as f64 * neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    pub se: f64,
    pub sp: f64,
}

/// Empirical ROC polygon from `(SE, SP) = (0, 1)` at `+inf` down through
/// every distinct score to `(1, 0)`.
pub fn roc_curve(labels: &[bool], scores: &[f64]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = class_counts(labels)?;
    let mut sorted = ascending(labels, scores);
    sorted.reverse();
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        se: 0.0,
        sp: 1.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            se: tp as f64 / pos as f64,
            sp: 1.0 - fp as f64 / neg as f64,
        });
    }
    Ok(points)
}

pub fn trapezoid_auc(curve: &[RocPoint]) -> f64 {
    curve
        .windows(2)
        .map(|w| {
            let dx = (1.0 - w[1].sp) - (1.0 - w[0].sp);
            dx * (w[0].se + w[1].se) / 2.0
        })
        .sum()
}

pub fn write_roc_csv<W: Write>(writer: W, curve: &[RocPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["threshold", "se", "sp"])?;
    for p in curve {
        w.write_record([format_threshold(p.threshold), p.se.to_string(), p.sp.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Precision-recall points at each distinct score, descending thresholds.
pub fn pr_curve(labels: &[bool], scores: &[f64]) -> Result<Vec<PrPoint>> {
    Ok(roc_curve(labels, scores)?
        .into_iter()
        .skip(1)
        .map(|pt| {
            let c = confusion(labels, scores, pt.threshold).expect("aligned");
            PrPoint {
                threshold: pt.threshold,
                recall: pt.se,
                precision: c.tp as f64 / (c.tp + c.fp) as f64,
            }
        })
        .collect())
}

pub fn write_pr_csv<W: Write>(writer: W, curve: &[PrPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["threshold", "recall", "precision"])?;
    for p in curve {
        w.write_record([format_threshold(p.threshold), p.recall.to_string(), p.precision.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn format_threshold(t: f64) -> String {
    if t == f64::INFINITY {
        "inf".into()
    } else if t == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        t.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub fn_cost: f64,
    pub fp_cost: f64,
    pub prevalence: f64,
}

/// Relative weight of specificity: `r = (fp_cost / fn_cost) (1 - prev) / prev`.
pub fn cost_weight(spec: &CostSpec) -> Result<f64> {
    if !(spec.fn_cost > 0.0 && spec.fp_cost > 0.0) {
        return Err(Error::invalid("misclassification costs must be positive"));
    }
    if !(spec.prevalence > 0.0 && spec.prevalence < 1.0) {
        return Err(Error::invalid(format!(
            "prevalence must lie in (0, 1), got {}",
            spec.prevalence
        )));
    }
    Ok((spec.fp_cost / spec.fn_cost) * ((1.0 - spec.prevalence) / spec.prevalence))
}

/// `-inf`, the midpoints between consecutive distinct scores, and `+inf`.
pub fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut out = Vec::with_capacity(distinct.len() + 1);
    out.push(f64::NEG_INFINITY);
    for w in distinct.windows(2) {
        let mid = w[0] + (w[1] - w[0]) / 2.0;
        // adjacent floats have no midpoint strictly above the lower score
        out.push(if mid > w[0] { mid } else { w[1] });
    }
    out.push(f64::INFINITY);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    pub se: f64,
    pub sp: f64,
    pub objective: f64,
}

/// Maximizes `SE + r SP` over [`candidate_thresholds`]; ties go to the
/// higher SE, then the lower threshold.
pub fn pick_threshold(labels: &[bool], scores: &[f64], r: f64) -> Result<ThresholdChoice> {
    if labels.len() != scores.len() {
        return Err(Error::invalid("labels and scores differ in length"));
    }
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::invalid(format!("cost weight must be positive, got {r}")));
    }
    let (pos, neg) = class_counts(labels)?;
    let sorted = ascending(labels, scores);
    let mut best: Option<ThresholdChoice> = None;
    // rows strictly below the current candidate
    let mut below = 0;
    let (mut fn_, mut tn) = (0usize, 0usize);
    for t in candidate_thresholds(scores) {
        while below < sorted.len() && sorted[below].0 < t {
            if sorted[below].1 {
                fn_ += 1;
            } else {
                tn += 1;
            }
            below += 1;
        }
        let se = (pos - fn_) as f64 / pos as f64;
        let sp = tn as f64 / neg as f64;
        let objective = se + r * sp;
        let better = match &best {
            None => true,
            Some(b) => objective > b.objective || (objective == b.objective && se > b.se),
        };
        if better {
            best = Some(ThresholdChoice {
                threshold: t,
                se,
                sp,
                objective,
            });
        }
    }
    Ok(best.expect("at least two candidates"))
}

/// Train/test partition. Stratified splits put `round(f n_c)` rows of each
/// class into training; plain splits put `round(f n)` rows. Both sides keep
/// the input row order.
pub fn split(
    pairs: &PairwiseDataset,
    train_fraction: f64,
    seed_value: u64,
    stratified: bool,
) -> Result<(PairwiseDataset, PairwiseDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut rng = seed::derived_rng(seed_value, "split", 0);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    let groups: Vec<Vec<usize>> = if stratified {
        let labels = pairs.labels();
        vec![
            (0..pairs.len()).filter(|&i| pairs.rows[i].label.is_linked()).collect(),
            (0..pairs.len()).filter(|&i| !labels[i]).collect(),
        ]
    } else {
        vec![(0..pairs.len()).collect()]
    };
    for mut g in groups {
        g.shuffle(&mut rng);
        let k = (train_fraction * g.len() as f64).round() as usize;
        train_idx.extend_from_slice(&g[..k]);
        test_idx.extend_from_slice(&g[k..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let train = pairs.subset(&train_idx);
    let test = pairs.subset(&test_idx);
    for (name, side) in [("training", &train), ("test", &test)] {
        if side.n_linked() == 0 || side.n_unlinked() == 0 {
            let msg = format!(
                "{name} set lacks a class ({} linked, {} unlinked)",
                side.n_linked(),
                side.n_unlinked()
            );
            if stratified {
                return Err(Error::insufficient(msg));
            }
            log::warn!("{msg}");
        }
    }
    Ok((train, test))
}

/// Stratified fold index for every row.
pub fn fold_assignment(labels: &[bool], folds: usize, seed_value: u64) -> Vec<usize> {
    let mut rng = seed::derived_rng(seed_value, "folds", 0);
    let mut out = vec![0; labels.len()];
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            out[i] = k % folds;
        }
    }
    out
}

/// Where a cell's threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdSource {
    /// Out-of-fold scores from k-fold cross-validation on the training set.
    HeldOut { folds: usize },
    /// The evaluation set itself.
    EvalSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub family: Family,
    /// Parameter name to ladder of values; cells are the cartesian product.
    pub ladders: BTreeMap<String, Vec<f64>>,
    pub seed: u64,
}

pub type GridCell = BTreeMap<String, f64>;

impl GridSpec {
    /// Cells in canonical order: the last parameter name varies fastest.
    pub fn cells(&self) -> Result<Vec<GridCell>> {
        if self.ladders.is_empty() || self.ladders.values().any(Vec::is_empty) {
            return Err(Error::invalid(format!("{} grid has an empty ladder", self.family)));
        }
        let mut cells = vec![GridCell::new()];
        for (name, values) in &self.ladders {
            cells = cells
                .into_iter()
                .flat_map(|cell| {
                    values.iter().map(move |&v| {
                        let mut c = cell.clone();
                        c.insert(name.clone(), v);
                        c
                    })
                })
                .collect();
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub family: Family,
    pub index: usize,
    pub params: GridCell,
    pub seed: u64,
    pub metrics: MetricsReport,
}

fn desc(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}

fn lexicographic(a: &GridCell, b: &GridCell) -> Ordering {
    for ((ka, va), (kb, vb)) in a.iter().zip(b) {
        let o = ka.cmp(kb).then(va.total_cmp(vb));
        if o != Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

/// SE descending, then SP descending, then parameters ascending.
pub fn rank_results(results: &mut [GridResult]) {
    results.sort_by(|a, b| {
        desc(a.metrics.se, b.metrics.se)
            .then(desc(a.metrics.sp, b.metrics.sp))
            .then(lexicographic(&a.params, &b.params))
    });
}

/// Scores `subject` with a model trained on `train`, choosing the threshold
/// per `source`.
pub fn fit_and_evaluate<F>(
    train: &PairwiseDataset,
    subject: &PairwiseDataset,
    r: f64,
    source: ThresholdSource,
    seed_value: u64,
    trainer: &F,
) -> Result<(TrainedModel, MetricsReport)>
where
    F: Fn(&PairwiseDataset, u64) -> Result<TrainedModel>,
{
    let model = trainer(train, seed_value)?;
    let scores = predict(&model, subject)?;
    let labels = subject.labels();
    let threshold = match source {
        ThresholdSource::EvalSet => pick_threshold(&labels, &scores, r)?.threshold,
        ThresholdSource::HeldOut { folds } => {
            if folds < 2 {
                return Err(Error::invalid("held-out thresholds need at least 2 folds"));
            }
            let train_labels = train.labels();
            let assignment = fold_assignment(&train_labels, folds, seed_value);
            let mut oof = vec![0.0; train.len()];
            for k in 0..folds {
                let fit_idx: Vec<usize> = (0..train.len()).filter(|&i| assignment[i] != k).collect();
                let out_idx: Vec<usize> = (0..train.len()).filter(|&i| assignment[i] == k).collect();
                let fold_model = trainer(&train.subset(&fit_idx), seed::derive_seed(seed_value, "fold", k as u64))?;
                for (i, s) in out_idx.iter().zip(predict(&fold_model, &train.subset(&out_idx))?) {
                    oof[*i] = s;
                }
            }
            pick_threshold(&train_labels, &oof, r)?.threshold
        }
    };
    Ok((model, evaluate(&labels, &scores, threshold)?))
}

/// Evaluates every cell in parallel, each with the seed derived from the
/// master seed and its canonical index, and returns the ranked results.
pub fn grid_search<F>(
    spec: &GridSpec,
    train: &PairwiseDataset,
    eval_set: &PairwiseDataset,
    r: f64,
    source: ThresholdSource,
    trainer: F,
) -> Result<Vec<GridResult>>
where
    F: Fn(&GridCell, &PairwiseDataset, u64) -> Result<TrainedModel> + Sync,
{
    let cells = spec.cells()?;
    let mut results = cells
        .into_par_iter()
        .enumerate()
        .map(|(index, params)| {
            let cell_seed = seed::derive_seed(spec.seed, "grid-cell", index as u64);
            let (_, metrics) = fit_and_evaluate(train, eval_set, r, source, cell_seed, &|d: &PairwiseDataset, s| {
                trainer(&params, d, s)
            })?;
            Ok(GridResult {
                family: spec.family,
                index,
                params,
                seed: cell_seed,
                metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rank_results(&mut results);
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{train_svm, ClassWeights};
    use crate::pairing::{Label, PairRow};
    use proptest::prelude::*;

    fn cm(tp: usize, fn_: usize, tn: usize, fp: usize) -> ConfusionMatrix {
        ConfusionMatrix { tp, fp, tn, fn_ }
    }

    fn pct(v: Option<f64>) -> f64 {
        (v.unwrap() * 10_000.0).round() / 100.0
    }

    #[test]
    fn reported_confusion_matrix_metrics() {
        let c = cm(15, 3, 158, 190);
        assert_eq!(c.positives(), 18);
        assert_eq!(c.negatives(), 348);
        assert_eq!(c.total(), 366);
        let m = metrics(&c);
        assert_eq!(pct(m.se), 83.33);
        assert_eq!(pct(m.sp), 45.40);
        assert_eq!(pct(m.p), 7.32);
        assert_eq!(pct(m.acc), 47.27);
        assert_eq!(pct(m.hm), 13.45);
    }

    #[test]
    fn hm_cross_check_from_counts() {
        // SE 27.78% = 5/18 and P 10.42% = 5/48
        let m = metrics(&cm(5, 13, 300, 43));
        assert_eq!(pct(m.se), 27.78);
        assert_eq!(pct(m.p), 10.42);
        assert_eq!(pct(m.hm), 15.15);
    }

    #[test]
    fn perfect_and_undefined_metrics() {
        let m = metrics(&cm(4, 0, 6, 0));
        for v in [m.se, m.sp, m.p, m.hm, m.acc] {
            assert_eq!(v, Some(1.0));
        }
        let m = metrics(&cm(0, 0, 5, 1));
        assert_eq!(m.se, None);
        assert_eq!(m.hm, None);
        assert_eq!(m.p, Some(0.0));
    }

    #[test]
    fn threshold_extremes() {
        let y = [true, false, true, false];
        let s = [0.9, 0.3, 0.5, 0.1];
        let hi = confusion(&y, &s, 0.95).unwrap();
        assert_eq!((hi.tp, hi.fp), (0, 0));
        let lo = confusion(&y, &s, 0.1).unwrap();
        assert_eq!((lo.tn, lo.fn_), (0, 0));
    }

    fn brute_auc(y: &[bool], s: &[f64]) -> f64 {
        let mut total = 0.0;
        let mut count = 0.0;
        for i in 0..y.len() {
            for j in 0..y.len() {
                if y[i] && !y[j] {
                    count += 1.0;
                    total += match s[i].partial_cmp(&s[j]).unwrap() {
                        Ordering::Greater => 1.0,
                        Ordering::Equal => 0.5,
                        Ordering::Less => 0.0,
                    };
                }
            }
        }
        total / count
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[false, false, true, true], &[0.1, 0.2, 0.3, 0.4]).unwrap(), 1.0);
        assert_eq!(auroc(&[false, true, true, false], &[0.5; 4]).unwrap(), 0.5);
        let y = [true, false, true, false, false, true];
        let s = [0.8, 0.4, 0.4, 0.7, 0.1, 0.3];
        assert!((auroc(&y, &s).unwrap() - brute_auc(&y, &s)).abs() < 1e-15);
        assert!(auroc(&[true, true], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn cost_weight_examples() {
        let r = cost_weight(&CostSpec { fn_cost: 1690.0, fp_cost: 1040.0, prevalence: 0.0486 }).unwrap();
        assert!((r - 12.05).abs() <= 0.01, "{r}");
        let direct = (1.0 / 1.625) * (0.9514 / 0.0486);
        assert!((r - direct).abs() < 1e-3);
        assert_eq!(cost_weight(&CostSpec { fn_cost: 5.0, fp_cost: 5.0, prevalence: 0.5 }).unwrap(), 1.0);
        let tiny = cost_weight(&CostSpec { fn_cost: 1e300, fp_cost: 1.0, prevalence: 0.5 }).unwrap();
        assert!(tiny < 1e-299);
        assert!(cost_weight(&CostSpec { fn_cost: 0.0, fp_cost: 1.0, prevalence: 0.5 }).is_err());
    }

    #[test]
    fn four_point_threshold() {
        let y = [false, false, true, true];
        let s = [0.1, 0.2, 0.6, 0.9];
        let t = pick_threshold(&y, &s, 1.0).unwrap();
        assert!((t.threshold - 0.4).abs() < 1e-15);
        assert_eq!((t.se, t.sp), (1.0, 1.0));
    }

    #[test]
    fn huge_cost_weight_forces_full_specificity() {
        let y = [false, true, false, true, true, false, false];
        let s = [0.9, 0.8, 0.5, 0.4, 0.4, 0.2, 0.1];
        let t = pick_threshold(&y, &s, 1e6).unwrap();
        assert_eq!(t.sp, 1.0);
        assert!(t.threshold > 0.9);
    }

    #[test]
    fn unit_weight_is_youden() {
        let y = [false, true, false, true, true, false, true, false];
        let s = [0.15, 0.8, 0.45, 0.4, 0.7, 0.3, 0.2, 0.5];
        let t = pick_threshold(&y, &s, 1.0).unwrap();
        let best_j = candidate_thresholds(&s)
            .into_iter()
            .map(|c| {
                let m = metrics(&confusion(&y, &s, c).unwrap());
                m.se.unwrap() + m.sp.unwrap() - 1.0
            })
            .fold(f64::MIN, f64::max);
        assert!((t.se + t.sp - 1.0 - best_j).abs() < 1e-12);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let rows: Vec<PairRow> = (0..1830)
            .map(|i| PairRow {
                a: format!("a{i}"),
                b: format!("b{i}"),
                matches: vec![i % 3 == 0],
                label: Label::from_linked(i % 20 == 0 && i < 1780),
                similarity: None,
            })
            .collect();
        let data = PairwiseDataset::new(rows, vec!["f".into()]).unwrap();
        assert_eq!(data.n_linked(), 89);
        let (tr, te) = split(&data, 0.8, 4, true).unwrap();
        assert_eq!((tr.len(), te.len()), (1464, 366));
        assert_eq!(tr.n_linked(), 71);
        let (tr2, _) = split(&data, 0.8, 4, true).unwrap();
        assert_eq!(tr, tr2);
        let (tr3, te3) = split(&data, 0.8, 4, false).unwrap();
        assert_eq!((tr3.len(), te3.len()), (1464, 366));

        let two = data.subset(&[0, 1]);
        let (a, b) = split(&two, 0.5, 1, false).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));
        assert!(split(&two, 0.5, 1, true).is_err());
        assert!(split(&data, 1.0, 1, true).is_err());
    }

    fn toy_svm_data() -> (PairwiseDataset, PairwiseDataset) {
        let data = crate::models::tests::toy(240, 8, 11);
        split(&data, 0.5, 2, true).unwrap()
    }

    fn svm_trainer(cell: &GridCell, d: &PairwiseDataset, s: u64) -> Result<TrainedModel> {
        Ok(TrainedModel::Svm(train_svm(d, cell["c"], Some(ClassWeights::balanced(d)), s)?))
    }

    #[test]
    fn one_cell_grid_is_a_direct_run() {
        let (train, test) = toy_svm_data();
        let spec = GridSpec { family: Family::Svm, ladders: BTreeMap::from([("c".into(), vec![0.1])]), seed: 5 };
        let res = grid_search(&spec, &train, &test, 2.0, ThresholdSource::EvalSet, svm_trainer).unwrap();
        assert_eq!(res.len(), 1);
        let cell_seed = seed::derive_seed(5, "grid-cell", 0);
        let model = train_svm(&train, 0.1, Some(ClassWeights::balanced(&train)), cell_seed).unwrap();
        let scores = predict(&TrainedModel::Svm(model), &test).unwrap();
        let t = pick_threshold(&test.labels(), &scores, 2.0).unwrap().threshold;
        assert_eq!(res[0].metrics, evaluate(&test.labels(), &scores, t).unwrap());
    }

    #[test]
    fn ranking_prefers_specificity_on_equal_sensitivity() {
        let mk = |c: f64, se, sp| GridResult {
            family: Family::Svm,
            index: 0,
            params: BTreeMap::from([("c".to_string(), c)]),
            seed: 0,
            metrics: MetricsReport { se: Some(se), sp: Some(sp), ..metrics(&cm(1, 1, 1, 1)) },
        };
        let mut v = vec![mk(0.01, 0.8, 0.3), mk(0.014, 0.8, 0.45), mk(0.003, 0.9, 0.1), mk(0.002, 0.8, 0.45)];
        rank_results(&mut v);
        let order: Vec<f64> = v.iter().map(|r| r.params["c"]).collect();
        assert_eq!(order, vec![0.003, 0.002, 0.014, 0.01]);
    }

    #[test]
    fn grid_rankings_do_not_depend_on_cell_order() {
        let (train, test) = toy_svm_data();
        let spec = GridSpec {
            family: Family::Svm,
            ladders: BTreeMap::from([("c".into(), vec![0.003, 0.01, 0.014, 0.1])]),
            seed: 5,
        };
        let run = || grid_search(&spec, &train, &test, 2.0, ThresholdSource::HeldOut { folds: 3 }, svm_trainer).unwrap();
        let parallel = run();
        let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
        assert_eq!(parallel, serial);
        let mut shuffled = parallel.clone();
        shuffled.reverse();
        shuffled.swap(0, 2);
        rank_results(&mut shuffled);
        assert_eq!(shuffled, parallel);
    }

    #[test]
    fn empty_grid_is_an_error() {
        let (train, test) = toy_svm_data();
        let spec = GridSpec { family: Family::Svm, ladders: BTreeMap::new(), seed: 5 };
        assert!(grid_search(&spec, &train, &test, 2.0, ThresholdSource::EvalSet, svm_trainer).is_err());
    }

    #[test]
    fn metrics_json_roundtrip_with_infinite_threshold() {
        let mut m = metrics(&cm(1, 2, 3, 4));
        m.threshold = Some(f64::INFINITY);
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"inf\""));
        assert_eq!(serde_json::from_str::<MetricsReport>(&text).unwrap(), m);
    }

    fn labeled_scores() -> impl Strategy<Value = (Vec<bool>, Vec<f64>)> {
        (4usize..200).prop_flat_map(|n| {
            (
                proptest::collection::vec(any::<bool>(), n).prop_filter("two classes", |y| {
                    y.iter().any(|&v| v) && y.iter().any(|&v| !v)
                }),
                proptest::collection::vec((0u32..40).prop_map(|k| k as f64 / 40.0), n),
            )
        })
    }

    proptest! {
        #[test]
        fn se_falls_and_sp_rises_with_threshold((y, s) in labeled_scores()) {
            let mut prev: Option<(f64, f64)> = None;
            for t in candidate_thresholds(&s) {
                let m = metrics(&confusion(&y, &s, t).unwrap());
                let cur = (m.se.unwrap(), m.sp.unwrap());
                if let Some(p) = prev {
                    prop_assert!(cur.0 <= p.0 && cur.1 >= p.1);
                }
                prev = Some(cur);
            }
        }

        #[test]
        fn auroc_two_routes_agree((y, s) in labeled_scores()) {
            let a = auroc(&y, &s).unwrap();
            let b = trapezoid_auc(&roc_curve(&y, &s).unwrap());
            prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
            prop_assert!((a - brute_auc(&y, &s)).abs() < 1e-12);
        }

        #[test]
        fn auroc_ignores_increasing_transforms((y, s) in labeled_scores()) {
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert!((auroc(&y, &s).unwrap() - auroc(&y, &t).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn picked_threshold_is_exhaustive_optimum((y, s) in labeled_scores(), r in 0.05f64..30.0) {
            let got = pick_threshold(&y, &s, r).unwrap();
            let mut sweep: Vec<f64> = s.clone();
            sweep.extend([f64::NEG_INFINITY, f64::INFINITY, -1.0, 2.0]);
            for k in 0..=400 { sweep.push(k as f64 / 400.0 + 1e-4); }
            let best = sweep
                .iter()
                .map(|&t| {
                    let m = metrics(&confusion(&y, &s, t).unwrap());
                    m.se.unwrap() + r * m.sp.unwrap()
                })
                .fold(f64::MIN, f64::max);
            prop_assert!((got.objective - best).abs() < 1e-12);
            let check = metrics(&confusion(&y, &s, got.threshold).unwrap());
            prop_assert!((check.se.unwrap() - got.se).abs() < 1e-15);
        }
    }
}
