//! End-to-end pipeline: configuration, per-method training, the unknown-case
//! prediction stage and the run directory with its manifest.
//!
//! Every stage seed is `derive_seed(master, tag, 0)` for a fixed tag; the tags
//! actually used are recorded in the manifest. A run directory holds only
//! files the run wrote, each listed in `manifest.json` with its SHA-256 and
//! size. The manifest carries no timestamps and no output path, so identical
//! configurations give byte-identical manifests.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result, StageExt};
use crate::evaluation::{
    cost_weight, fit_and_evaluate, grid_search, pr_curve, roc_curve, split, threshold_serde, write_pr_csv,
    write_roc_csv, CostSpec, GridCell, GridResult, GridSpec, MetricsReport, ThresholdSource,
};
use crate::explain::{background_sample, global_shap, GlobalShap, DEFAULT_BACKGROUND};
use crate::ingest::{impute, preprocess, CaseTable, Codebook, LinkageRegister, PreprocessConfig, PreprocessReport};
use crate::models::{
    predict, train_boosted, train_elastic_net, train_lr, train_random_forest, train_svm, BoostParams,
    ElasticNetParams, Family, LrKind, ModelFile, TrainedModel,
};
use crate::network::{build_graph, louvain, prevalence, savings_estimate, suspects_identified, LinkGraph, Partition, PrevalenceTable};
use crate::pairing::{build_pairs_summarized, PairwiseDataset};
use crate::resampling::{kf_filter, rose_sample, smote_sample, KfParams, RoseParams};
use crate::seed::derive_seed;
use crate::synth::{self, SynthConfig, VictimDistribution};

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;
const REPORTED_GRID_CELLS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SynthConfig),
    Files {
        cases: PathBuf,
        codebook: PathBuf,
        #[serde(default)]
        linkage: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub solved: DataSource,
    /// Cases of unknown linkage status, clustered by the network stage.
    pub unknown: Option<DataSource>,
}

impl Default for DataConfig {
    fn default() -> Self {
        let h = synth::unknown_histogram();
        DataConfig {
            solved: DataSource::Synthetic(SynthConfig::default()),
            unknown: Some(DataSource::Synthetic(SynthConfig {
                n_suspects: h.len(),
                victims_per_suspect: VictimDistribution::Histogram(h),
                seed: 2,
                id_prefix: "unk".into(),
                ..SynthConfig::default()
            })),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub missing_threshold: f64,
    pub exempt: BTreeSet<String>,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        let d = PreprocessConfig::default();
        PreprocessSection {
            missing_threshold: d.missing_threshold,
            exempt: d.exempt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub stratified: bool,
    /// Share of the training set held out to rank grid cells outside paper
    /// mode.
    pub validation_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 0.8,
            stratified: true,
            validation_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub fn_cost: f64,
    pub fp_cost: f64,
    /// Linked-pair prevalence; the solved pair set's when unset.
    pub prevalence: Option<f64>,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            fn_cost: 1690.0,
            fp_cost: 1040.0,
            prevalence: None,
        }
    }
}

/// One classification pipeline: optional KF filter, then optional SMOTE or
/// ROSE, then a model family.
///
/// `params` fixes values; `grid` lists ladders searched before the final fit,
/// a grid value overriding a fixed one. Keys are the family's parameter names
/// (`alpha`, `lambda`, `c`, `n_trees`, `m`, `eta`, `n_rounds`, `max_depth`,
/// `lambda_reg`, `min_child_weight`) plus `kf_k`, `rose_p`, `rose_h`,
/// `smote_target` and `smote_k` for enabled resampling steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub name: String,
    pub family: Family,
    #[serde(default)]
    pub kf: bool,
    #[serde(default)]
    pub rose: bool,
    #[serde(default)]
    pub smote: bool,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub grid: BTreeMap<String, Vec<f64>>,
}

impl MethodConfig {
    pub fn new(name: impl Into<String>, family: Family) -> Self {
        MethodConfig {
            name: name.into(),
            family,
            kf: false,
            rose: false,
            smote: false,
            params: BTreeMap::new(),
            grid: BTreeMap::new(),
        }
    }

    pub fn with_kf(mut self, k: usize) -> Self {
        self.kf = true;
        self.params.insert("kf_k".into(), k as f64);
        self
    }

    pub fn with_rose(mut self, p: f64) -> Self {
        self.rose = true;
        self.params.insert("rose_p".into(), p);
        self
    }

    pub fn with_smote(mut self, target: f64) -> Self {
        self.smote = true;
        self.params.insert("smote_target".into(), target);
        self
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.into(), value);
        self
    }

    pub fn allowed_keys(&self) -> Vec<&'static str> {
        let mut keys: Vec<&'static str> = match self.family {
            Family::Lr1 | Family::Lr6 => vec![],
            Family::ElasticNet => vec!["alpha", "lambda"],
            Family::Svm => vec!["c"],
            Family::RandomForest => vec!["n_trees", "m"],
            Family::Boosted => vec!["eta", "n_rounds", "max_depth", "lambda_reg", "min_child_weight"],
        };
        if self.kf {
            keys.push("kf_k");
        }
        if self.rose {
            keys.extend(["rose_p", "rose_h"]);
        }
        if self.smote {
            keys.extend(["smote_target", "smote_k"]);
        }
        keys
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Config("method name is empty".into()));
        }
        if self.rose && self.smote {
            return Err(Error::Config(format!("{}: ROSE and SMOTE are mutually exclusive", self.name)));
        }
        if !self.family.uses_match_vector() && (self.rose || self.smote) {
            return Err(Error::Config(format!(
                "{}: {} scores raw-vector Jaccards, which synthetic rows do not have",
                self.name, self.family
            )));
        }
        let allowed = self.allowed_keys();
        for key in self.params.keys().chain(self.grid.keys()) {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "{}: unknown parameter `{key}` (allowed: {})",
                    self.name,
                    allowed.join(", ")
                )));
            }
        }
        if let Some((key, _)) = self.grid.iter().find(|(_, v)| v.is_empty()) {
            return Err(Error::Config(format!("{}: grid ladder `{key}` is empty", self.name)));
        }
        Ok(())
    }

    /// Fixed parameters overlaid with a grid cell.
    pub fn resolve(&self, cell: &GridCell) -> GridCell {
        let mut out = self.params.clone();
        out.extend(cell.iter().map(|(k, v)| (k.clone(), *v)));
        out
    }
}

/// Ladders bracketing the standard parameter values of a method, used when a
/// grid search is requested without explicit ladders.
pub fn suggested_ladders(method: &MethodConfig) -> BTreeMap<String, Vec<f64>> {
    let mut l: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    match method.family {
        Family::Lr1 | Family::Lr6 => {}
        Family::ElasticNet => {
            l.insert("alpha".into(), (0..=10).map(|i| i as f64 / 10.0).collect());
            l.insert("lambda".into(), vec![0.002, 0.004, 0.006, 0.008, 0.01, 0.012, 0.015, 0.02]);
        }
        Family::Svm => {
            l.insert("c".into(), vec![0.001, 0.003, 0.006, 0.01, 0.014, 0.03, 0.1, 0.3, 1.0]);
        }
        Family::RandomForest => {
            l.insert("n_trees".into(), vec![10.0, 20.0, 50.0, 100.0]);
            l.insert("m".into(), vec![3.0, 5.0, 7.0, 10.0, 15.0]);
        }
        Family::Boosted => {
            l.insert("eta".into(), vec![0.1, 0.3, 0.8]);
            l.insert("n_rounds".into(), vec![50.0, 100.0, 300.0]);
            l.insert("max_depth".into(), vec![2.0, 4.0, 6.0]);
        }
    }
    if method.kf {
        l.insert("kf_k".into(), vec![1.0, 2.0, 3.0]);
    }
    if method.rose {
        l.insert("rose_p".into(), vec![0.25, 0.29, 0.31, 0.34, 0.43, 0.5]);
    }
    if method.smote {
        l.insert("smote_target".into(), vec![0.29, 0.4, 0.5]);
    }
    l
}

/// The twelve standard configurations with their tuned parameter values.
pub fn standard_methods() -> Vec<MethodConfig> {
    vec![
        MethodConfig::new("LR1", Family::Lr1),
        MethodConfig::new("LR6", Family::Lr6),
        MethodConfig::new("EN", Family::ElasticNet)
            .with_param("lambda", 0.0115)
            .with_param("alpha", 0.5),
        MethodConfig::new("KF-EN", Family::ElasticNet)
            .with_kf(3)
            .with_param("lambda", 0.0121)
            .with_param("alpha", 0.1),
        MethodConfig::new("ROSE-EN", Family::ElasticNet)
            .with_rose(0.31)
            .with_param("lambda", 0.00805)
            .with_param("alpha", 0.1),
        MethodConfig::new("KF-ROSE-EN", Family::ElasticNet)
            .with_kf(2)
            .with_rose(0.43)
            .with_param("lambda", 0.006)
            .with_param("alpha", 0.5),
        MethodConfig::new("SVM", Family::Svm).with_param("c", 0.014),
        MethodConfig::new("KF-SVM", Family::Svm).with_kf(1).with_param("c", 0.003),
        MethodConfig::new("ROSE-SVM", Family::Svm).with_rose(0.34).with_param("c", 0.01),
        kf_rose_svm(),
        MethodConfig::new("RF", Family::RandomForest)
            .with_param("n_trees", 20.0)
            .with_param("m", 7.0),
        MethodConfig::new("XGB", Family::Boosted)
            .with_param("eta", 0.8)
            .with_param("n_rounds", 300.0)
            .with_param("max_depth", 6.0),
    ]
}

/// KF filter with k = 1, ROSE at p = 0.29, linear SVM at c = 0.014.
pub fn kf_rose_svm() -> MethodConfig {
    MethodConfig::new("KF-ROSE-SVM", Family::Svm)
        .with_kf(1)
        .with_rose(0.29)
        .with_param("c", 0.014)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub enabled: bool,
    pub method: String,
    pub n_coalitions: usize,
    pub background: usize,
    /// Test pairs explained; a seeded subsample when the test set is larger.
    pub max_instances: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            enabled: true,
            method: "KF-ROSE-SVM".into(),
            n_coalitions: 1024,
            background: DEFAULT_BACKGROUND,
            max_instances: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub enabled: bool,
    /// Methods whose test-set links and unknown-case networks are reported
    /// side by side.
    pub methods: Vec<String>,
    pub resolution: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            enabled: true,
            methods: vec!["LR1".into(), "KF-ROSE-SVM".into()],
            resolution: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SavingsConfig {
    pub method: String,
    pub baseline: String,
    pub median_loss: f64,
}

impl Default for SavingsConfig {
    fn default() -> Self {
        SavingsConfig {
            method: "KF-ROSE-SVM".into(),
            baseline: "LR1".into(),
            median_loss: 1690.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Rank grid cells and choose thresholds on the test set itself instead
    /// of on validation data and out-of-fold scores.
    pub paper_mode: bool,
    /// Folds for out-of-fold threshold selection outside paper mode.
    pub threshold_folds: usize,
    pub data: DataConfig,
    pub preprocess: PreprocessSection,
    pub split: SplitConfig,
    pub cost: CostConfig,
    pub methods: Vec<MethodConfig>,
    pub explain: ExplainConfig,
    pub network: NetworkConfig,
    pub savings: SavingsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 1,
            output_dir: PathBuf::from("run"),
            paper_mode: false,
            threshold_folds: 3,
            data: DataConfig::default(),
            preprocess: PreprocessSection::default(),
            split: SplitConfig::default(),
            cost: CostConfig::default(),
            methods: standard_methods(),
            explain: ExplainConfig::default(),
            network: NetworkConfig::default(),
            savings: SavingsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn method(&self, name: &str) -> Option<&MethodConfig> {
        self.methods.iter().find(|m| m.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for m in &self.methods {
            m.validate()?;
            if !names.insert(m.name.as_str()) {
                return Err(Error::Config(format!("method `{}` is listed twice", m.name)));
            }
        }
        let known = |name: &str, what: &str| {
            if names.contains(name) {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} refers to unlisted method `{name}`")))
            }
        };
        if self.explain.enabled {
            known(&self.explain.method, "explain.method")?;
        }
        if self.network.enabled {
            for m in &self.network.methods {
                known(m, "network.methods")?;
            }
            if !(self.network.resolution > 0.0) {
                return Err(Error::Config("network.resolution must be positive".into()));
            }
        }
        if !self.paper_mode && self.threshold_folds < 2 {
            return Err(Error::Config("threshold_folds must be at least 2".into()));
        }
        let v = self.split.validation_fraction;
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Config(format!("split.validation_fraction must lie in (0, 1), got {v}")));
        }
        for source in std::iter::once(&self.data.solved).chain(self.data.unknown.as_ref()) {
            match source {
                DataSource::Synthetic(s) => s.validate()?,
                DataSource::Files { cases, codebook, linkage } => {
                    for p in std::iter::once(cases).chain(std::iter::once(codebook)).chain(linkage) {
                        if !p.is_file() {
                            return Err(Error::Config(format!("input file {} does not exist", p.display())));
                        }
                    }
                }
            }
        }
        if let DataSource::Files { linkage: None, .. } = self.data.solved {
            return Err(Error::Config("solved data needs a linkage register".into()));
        }
        Ok(())
    }
}

fn count(params: &GridCell, key: &str, default: usize) -> Result<usize> {
    match params.get(key) {
        None => Ok(default),
        Some(&v) if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 => Ok(v as usize),
        Some(&v) => Err(Error::invalid(format!("`{key}` must be a non-negative integer, got {v}"))),
    }
}

/// Applies a method's resampling steps to `data` and fits its model with
/// parameters `method.resolve(cell)`. The codebook is needed by LR1/LR6 only.
pub fn train_method(
    method: &MethodConfig,
    cell: &GridCell,
    codebook: Option<&Codebook>,
    data: &PairwiseDataset,
    seed_value: u64,
) -> Result<TrainedModel> {
    let params = method.resolve(cell);
    let get = |key: &str, default: f64| params.get(key).copied().unwrap_or(default);
    let mut data = Cow::Borrowed(data);
    if method.kf {
        let kf = KfParams {
            k: count(&params, "kf_k", 1)?,
            seed: derive_seed(seed_value, "kf", 0),
        };
        data = Cow::Owned(kf_filter(&data, &kf)?);
    }
    if method.smote {
        let target = get("smote_target", 0.5);
        data = Cow::Owned(smote_sample(&data, target, count(&params, "smote_k", 5)?, derive_seed(seed_value, "smote", 0))?);
    }
    if method.rose {
        let defaults = RoseParams::default();
        let rose = RoseParams {
            p: get("rose_p", defaults.p),
            n_out: None,
            smoothing: get("rose_h", defaults.smoothing),
            seed: derive_seed(seed_value, "rose", 0),
        };
        data = Cow::Owned(rose_sample(&data, &rose)?);
    }
    let model_seed = derive_seed(seed_value, "model", 0);
    Ok(match method.family {
        Family::Lr1 | Family::Lr6 => {
            let codebook = codebook.ok_or_else(|| Error::invalid(format!("{} needs the codebook", method.family)))?;
            let kind = if method.family == Family::Lr1 { LrKind::Lr1 } else { LrKind::Lr6 };
            TrainedModel::Linear(train_lr(&data, codebook, kind)?)
        }
        Family::ElasticNet => {
            let d = ElasticNetParams::default();
            let en = ElasticNetParams {
                alpha: get("alpha", d.alpha),
                lambda: get("lambda", d.lambda),
                ..d
            };
            TrainedModel::Linear(train_elastic_net(&data, &en)?)
        }
        Family::Svm => TrainedModel::Svm(train_svm(&data, get("c", 1.0), None, model_seed)?),
        Family::RandomForest => TrainedModel::Forest(train_random_forest(
            &data,
            count(&params, "n_trees", 20)?,
            count(&params, "m", 7)?,
            model_seed,
        )?),
        Family::Boosted => {
            let d = BoostParams::default();
            let bp = BoostParams {
                eta: get("eta", d.eta),
                n_rounds: count(&params, "n_rounds", d.n_rounds)?,
                max_depth: count(&params, "max_depth", d.max_depth)?,
                lambda_reg: get("lambda_reg", d.lambda_reg),
                min_child_weight: get("min_child_weight", d.min_child_weight),
                seed: model_seed,
            };
            TrainedModel::Boosted(train_boosted(&data, &bp)?)
        }
    })
}

/// Cases, codebook and (for solved data) the linkage register of a source.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData {
    pub table: CaseTable,
    pub codebook: Codebook,
    pub register: Option<LinkageRegister>,
}

pub fn load_source(source: &DataSource) -> Result<LoadedData> {
    match source {
        DataSource::Synthetic(cfg) => {
            let d = synth::generate(cfg)?;
            Ok(LoadedData {
                table: d.table,
                codebook: d.codebook,
                register: Some(d.register),
            })
        }
        DataSource::Files { cases, codebook, linkage } => {
            let (table, codebook) = crate::ingest::load_cases(cases, codebook)?;
            let register = linkage.as_deref().map(crate::ingest::load_linkage).transpose()?;
            Ok(LoadedData {
                table,
                codebook,
                register,
            })
        }
    }
}

/// Restricts an unknown-status table to the retained solved features, by
/// name, and imputes its missing cells from its own column frequencies.
pub fn prepare_unknown(table: &CaseTable, retained: &Codebook, impute_seed: u64) -> Result<CaseTable> {
    if table.n_cases() == 0 {
        return Err(Error::insufficient("unknown-case table is empty"));
    }
    let mut columns = Vec::with_capacity(retained.len());
    let mut missing = Vec::new();
    for name in retained.names() {
        match table.feature_names().iter().position(|f| *f == name) {
            Some(j) => columns.push(j),
            None => missing.push(name),
        }
    }
    if !missing.is_empty() {
        return Err(Error::SchemaMismatch(format!(
            "unknown cases lack {} solved feature(s): {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    impute(&table.select_columns(&columns), impute_seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnknownPrediction {
    pub n_pairs: usize,
    pub graph: LinkGraph,
    pub partition: Partition,
    pub prevalence: PrevalenceTable,
}

/// Scores every pair of unknown cases, keeps pairs at or above `threshold`
/// as edges and clusters the resulting graph.
pub fn predict_unknown(
    unknown: &CaseTable,
    retained: &Codebook,
    model: &TrainedModel,
    threshold: f64,
    resolution: f64,
    impute_seed: u64,
    louvain_seed: u64,
) -> Result<UnknownPrediction> {
    let table = prepare_unknown(unknown, retained, impute_seed)?;
    let pairs = build_pairs_summarized(&table, None, retained)?;
    let scores = predict(model, &pairs)?;
    let graph = build_graph(&pairs, &scores, threshold)?;
    let partition = louvain(&graph, resolution, louvain_seed)?;
    Ok(UnknownPrediction {
        n_pairs: pairs.len(),
        prevalence: prevalence(&partition),
        graph,
        partition,
    })
}

/// DOT rendering of predictions against known links: correctly predicted
/// links solid, missed links dashed grey, false links red. Only cases touched
/// by a true or predicted link appear.
pub fn linkage_dot(pairs: &PairwiseDataset, scores: &[f64], threshold: f64, name: &str) -> String {
    let mut nodes = BTreeSet::new();
    let mut edges = String::new();
    for (r, &s) in pairs.rows.iter().zip(scores) {
        let predicted = s >= threshold;
        let style = match (r.label.is_linked(), predicted) {
            (true, true) => "color=black",
            (true, false) => "color=grey, style=dashed",
            (false, true) => "color=red",
            (false, false) => continue,
        };
        nodes.insert(r.a.as_str());
        nodes.insert(r.b.as_str());
        let _ = writeln!(edges, "  \"{}\" -- \"{}\" [{style}];", r.a, r.b);
    }
    let mut out = format!("graph \"{name}\" {{\n  node [shape=point];\n");
    for n in nodes {
        let _ = writeln!(out, "  \"{n}\";");
    }
    out.push_str(&edges);
    out.push_str("}\n");
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileRecord {
    fn of(path: String, contents: &[u8]) -> FileRecord {
        FileRecord {
            path,
            sha256: hex::encode(Sha256::digest(contents)),
            bytes: contents.len() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    /// False when the run stopped at an error.
    pub complete: bool,
    pub master_seed: u64,
    pub paper_mode: bool,
    /// Derived stage seeds by tag.
    pub seeds: BTreeMap<String, u64>,
    /// External input files as configured.
    pub inputs: Vec<FileRecord>,
    /// Effective configuration with the output directory blanked.
    pub config: PipelineConfig,
    /// Every file in the run directory except the manifest, sorted by path.
    pub files: Vec<FileRecord>,
}

fn relative_files(root: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Io(e.into()))?;
        if entry.file_type().is_file() {
            let rel = entry.path().strip_prefix(root).expect("walk stays under root");
            let parts: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            out.push(parts.join("/"));
        }
    }
    Ok(out)
}

fn safe_relative(path: &str) -> Result<PathBuf> {
    let p = PathBuf::from(path);
    if p.components().all(|c| matches!(c, Component::Normal(_))) {
        Ok(p)
    } else {
        Err(Error::Config(format!("manifest path `{path}` leaves the run directory")))
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?)
}

/// Problems found re-hashing a run directory against its manifest; empty
/// when every listed file matches and nothing unlisted is present.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let manifest = read_manifest(dir)?;
    let mut problems = Vec::new();
    if !manifest.complete {
        problems.push("run stopped before completing".to_string());
    }
    let mut listed = BTreeSet::new();
    for rec in &manifest.files {
        listed.insert(rec.path.as_str());
        let path = dir.join(safe_relative(&rec.path)?);
        match fs::read(&path) {
            Err(_) => problems.push(format!("{}: missing", rec.path)),
            Ok(bytes) => {
                let now = FileRecord::of(rec.path.clone(), &bytes);
                if now != *rec {
                    problems.push(format!("{}: hash or size differs", rec.path));
                }
            }
        }
    }
    for f in relative_files(dir)? {
        if f != MANIFEST_FILE && !listed.contains(f.as_str()) {
            problems.push(format!("{f}: not listed in the manifest"));
        }
    }
    Ok(problems)
}

/// Output directory writer recording every file for the manifest.
struct RunDir {
    root: PathBuf,
    files: BTreeMap<String, FileRecord>,
}

impl RunDir {
    /// Creates `root`, first removing the outputs of a previous run there.
    /// Files no previous manifest accounts for are never removed.
    fn open(root: &Path) -> Result<RunDir> {
        if root.exists() {
            if root.join(MANIFEST_FILE).is_file() {
                for rec in read_manifest(root)?.files {
                    let p = root.join(safe_relative(&rec.path)?);
                    if p.is_file() {
                        fs::remove_file(p)?;
                    }
                }
                fs::remove_file(root.join(MANIFEST_FILE))?;
            }
            if let Some(stray) = relative_files(root)?.first() {
                return Err(Error::Config(format!(
                    "output directory {} holds files from elsewhere (e.g. {stray})",
                    root.display()
                )));
            }
        }
        fs::create_dir_all(root)?;
        Ok(RunDir {
            root: root.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    fn write(&mut self, rel: &str, contents: &[u8]) -> Result<()> {
        let path = self.root.join(safe_relative(rel)?);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents)?;
        self.files.insert(rel.to_string(), FileRecord::of(rel.to_string(), contents));
        Ok(())
    }

    fn write_with(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(rel, &buf)
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }
}

struct Seeds {
    master: u64,
    used: BTreeMap<String, u64>,
}

impl Seeds {
    fn get(&mut self, tag: &str) -> u64 {
        let s = derive_seed(self.master, tag, 0);
        self.used.insert(tag.to_string(), s);
        s
    }
}

fn dir_name(method: &str) -> String {
    method
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub name: String,
    pub family: Family,
    /// Parameters of the final fit.
    pub params: GridCell,
    pub seed: u64,
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    pub metrics: MetricsReport,
    /// Suspects with at least one correctly predicted link on the test set.
    pub suspects_identified: usize,
    pub grid_cells: usize,
    /// Best-ranked grid cells.
    pub grid_top: Vec<GridResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsReport {
    pub method: String,
    pub baseline: String,
    pub method_identified: usize,
    pub baseline_identified: usize,
    pub median_loss: f64,
    pub savings: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkOutcome {
    pub method: String,
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    pub test_true_links: usize,
    pub test_predicted_links: usize,
    pub test_correct_links: usize,
    pub unknown_cases: Option<usize>,
    pub unknown_pairs: Option<usize>,
    pub unknown_edges: Option<usize>,
    pub suspects: Option<usize>,
    pub modularity: Option<f64>,
    pub prevalence: Option<PrevalenceTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub master_seed: u64,
    pub paper_mode: bool,
    pub preprocess: PreprocessReport,
    pub n_pairs: usize,
    pub n_linked: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub prevalence: f64,
    /// Weight of specificity in the threshold objective.
    pub r: f64,
    pub methods: Vec<MethodOutcome>,
    pub savings: Option<SavingsReport>,
    pub shap: Option<GlobalShap>,
    pub networks: Vec<NetworkOutcome>,
}

impl ExperimentReport {
    pub fn method(&self, name: &str) -> Option<&MethodOutcome> {
        self.methods.iter().find(|m| m.name == name)
    }

    /// Fixed-width metric table, percentages to two decimals.
    pub fn summary(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.2}", 100.0 * x));
        let mut out = format!(
            "pairs {} (linked {}), train {}, test {}, prevalence {:.4}, r {:.4}\n\n",
            self.n_pairs, self.n_linked, self.n_train, self.n_test, self.prevalence, self.r
        );
        let _ = writeln!(
            out,
            "{:<14} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>10} {:>8}",
            "method", "SE", "SP", "P", "HM", "ACC", "AUROC", "threshold", "suspects"
        );
        for m in &self.methods {
            let t = &m.metrics;
            let _ = writeln!(
                out,
                "{:<14} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>10} {:>8}",
                m.name,
                pct(t.se),
                pct(t.sp),
                pct(t.p),
                pct(t.hm),
                pct(t.acc),
                pct(t.auroc),
                crate::evaluation::format_threshold(m.threshold),
                m.suspects_identified
            );
        }
        if let Some(s) = &self.savings {
            let _ = writeln!(
                out,
                "\n{} identifies {} suspects, {} identifies {}: estimated savings {:.2}",
                s.method, s.method_identified, s.baseline, s.baseline_identified, s.savings
            );
        }
        for n in &self.networks {
            if let (Some(k), Some(cases)) = (n.suspects, n.unknown_cases) {
                let _ = writeln!(out, "{}: {} unknown cases cluster into {} suspects", n.method, cases, k);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub manifest: Manifest,
    pub models: BTreeMap<String, TrainedModel>,
}

fn input_records(source: &DataSource) -> Result<Vec<FileRecord>> {
    match source {
        DataSource::Synthetic(_) => Ok(Vec::new()),
        DataSource::Files { cases, codebook, linkage } => std::iter::once(cases)
            .chain(std::iter::once(codebook))
            .chain(linkage)
            .map(|p| Ok(FileRecord::of(p.display().to_string(), &fs::read(p)?)))
            .collect(),
    }
}

fn write_source(out: &mut RunDir, prefix: &str, data: &LoadedData) -> Result<()> {
    out.write_with(&format!("data/{prefix}_cases.csv"), |w| data.table.to_writer(w))?;
    out.write_with(&format!("data/{prefix}_codebook.csv"), |w| data.codebook.to_writer(w))?;
    if let Some(reg) = &data.register {
        out.write_with(&format!("data/{prefix}_linkage.csv"), |w| reg.to_writer(w))?;
    }
    Ok(())
}

/// Runs the configured pipeline and writes all outputs under
/// `config.output_dir`, finishing with the manifest.
///
/// A failed run still writes a manifest, marked incomplete, for the files it
/// produced, so the directory can be reused.
pub fn run_experiment(config: &PipelineConfig) -> Result<ExperimentRun> {
    config.validate().stage("config")?;
    let mut seeds = Seeds {
        master: config.seed,
        used: BTreeMap::new(),
    };
    let mut out = RunDir::open(&config.output_dir).stage("output")?;
    let mut recorded = config.clone();
    recorded.output_dir = PathBuf::new();
    let mut inputs = Vec::new();
    let result = out
        .write("config.toml", recorded.to_toml()?.as_bytes())
        .and_then(|()| execute(config, &mut out, &mut seeds, &mut inputs));
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        complete: result.is_ok(),
        master_seed: config.seed,
        paper_mode: config.paper_mode,
        seeds: seeds.used,
        inputs,
        config: recorded,
        files: out.files.values().cloned().collect(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    let written = fs::write(out.root.join(MANIFEST_FILE), text);
    let (report, models) = result?;
    written?;
    Ok(ExperimentRun {
        report,
        manifest,
        models,
    })
}

fn execute(
    config: &PipelineConfig,
    out: &mut RunDir,
    seeds: &mut Seeds,
    inputs: &mut Vec<FileRecord>,
) -> Result<(ExperimentReport, BTreeMap<String, TrainedModel>)> {

    let solved = load_source(&config.data.solved).stage("ingest")?;
    let register = solved
        .register
        .clone()
        .ok_or_else(|| Error::Config("solved data has no linkage register".into()))
        .stage("ingest")?;
    write_source(out, "solved", &solved)?;
    inputs.extend(input_records(&config.data.solved)?);

    let pre = PreprocessConfig {
        missing_threshold: config.preprocess.missing_threshold,
        exempt: config.preprocess.exempt.clone(),
        seed: seeds.get("impute"),
    };
    let (table, codebook, pre_report) = preprocess(&solved.table, &solved.codebook, &pre).stage("preprocess")?;
    out.write_json("preprocess/report.json", &pre_report)?;
    out.write_with("preprocess/cases.csv", |w| table.to_writer(w))?;
    out.write_with("preprocess/codebook.csv", |w| codebook.to_writer(w))?;

    let pairs = build_pairs_summarized(&table, Some(&register), &codebook).stage("pairing")?;
    let prevalence_value = config.cost.prevalence.unwrap_or_else(|| pairs.prevalence());
    let r = cost_weight(&CostSpec {
        fn_cost: config.cost.fn_cost,
        fp_cost: config.cost.fp_cost,
        prevalence: prevalence_value,
    })
    .stage("cost")?;
    let (train, test) = split(&pairs, config.split.train_fraction, seeds.get("split"), config.split.stratified).stage("split")?;
    out.write_with("pairs/train.csv", |w| train.to_writer(w))?;
    out.write_with("pairs/test.csv", |w| test.to_writer(w))?;
    let test_labels = test.labels();

    let mut outcomes = Vec::new();
    let mut models = BTreeMap::new();
    let mut test_scores = BTreeMap::new();
    for method in &config.methods {
        log::info!("training {}", method.name);
        let dir = format!("methods/{}", dir_name(&method.name));
        let trainer = |cell: &GridCell, d: &PairwiseDataset, s: u64| train_method(method, cell, Some(&codebook), d, s);
        let mut best = GridCell::new();
        let mut grid_cells = 0;
        let mut grid_top = Vec::new();
        if !method.grid.is_empty() {
            let spec = GridSpec {
                family: method.family,
                ladders: method.grid.clone(),
                seed: seeds.get(&format!("grid:{}", method.name)),
            };
            let results = if config.paper_mode {
                grid_search(&spec, &train, &test, r, ThresholdSource::EvalSet, trainer)
            } else {
                let (fit, validation) = split(
                    &train,
                    1.0 - config.split.validation_fraction,
                    seeds.get(&format!("validation:{}", method.name)),
                    true,
                )?;
                grid_search(
                    &spec,
                    &fit,
                    &validation,
                    r,
                    ThresholdSource::HeldOut {
                        folds: config.threshold_folds,
                    },
                    trainer,
                )
            }
            .stage("grid")?;
            out.write_json(&format!("{dir}/grid.json"), &results)?;
            best = results[0].params.clone();
            grid_cells = results.len();
            grid_top = results.into_iter().take(REPORTED_GRID_CELLS).collect();
        }
        let source = if config.paper_mode {
            ThresholdSource::EvalSet
        } else {
            ThresholdSource::HeldOut {
                folds: config.threshold_folds,
            }
        };
        let seed_value = seeds.get(&format!("method:{}", method.name));
        let (model, metrics) =
            fit_and_evaluate(&train, &test, r, source, seed_value, &|d: &PairwiseDataset, s| trainer(&best, d, s))
                .stage("train")?;
        let scores = predict(&model, &test).stage("evaluate")?;
        let threshold = metrics.threshold.expect("evaluate records the threshold");
        let identified = suspects_identified(&test, &scores, threshold).stage("evaluate")?;

        out.write(
            &format!("{dir}/model.json"),
            ModelFile::new(model.clone(), codebook.names(), seed_value).to_json()?.as_bytes(),
        )?;
        out.write_json(&format!("{dir}/metrics.json"), &metrics)?;
        out.write_with(&format!("{dir}/roc.csv"), |w| write_roc_csv(w, &roc_curve(&test_labels, &scores)?))?;
        out.write_with(&format!("{dir}/pr.csv"), |w| write_pr_csv(w, &pr_curve(&test_labels, &scores)?))?;
        out.write_with(&format!("{dir}/test_scores.csv"), |w| {
            let mut cw = csv::Writer::from_writer(w);
            cw.write_record(["a", "b", "linked", "score"])?;
            for (row, s) in test.rows.iter().zip(&scores) {
                cw.write_record([
                    row.a.as_str(),
                    row.b.as_str(),
                    if row.label.is_linked() { "1" } else { "0" },
                    &s.to_string(),
                ])?;
            }
            cw.flush()?;
            Ok(())
        })?;

        outcomes.push(MethodOutcome {
            name: method.name.clone(),
            family: method.family,
            params: method.resolve(&best),
            seed: seed_value,
            threshold,
            metrics,
            suspects_identified: identified,
            grid_cells,
            grid_top,
        });
        models.insert(method.name.clone(), model);
        test_scores.insert(method.name.clone(), scores);
    }

    let find = |name: &str| outcomes.iter().find(|o| o.name == name);
    let savings = match (find(&config.savings.method), find(&config.savings.baseline)) {
        (Some(a), Some(b)) => Some(SavingsReport {
            method: a.name.clone(),
            baseline: b.name.clone(),
            method_identified: a.suspects_identified,
            baseline_identified: b.suspects_identified,
            median_loss: config.savings.median_loss,
            savings: savings_estimate(a.suspects_identified, b.suspects_identified, config.savings.median_loss),
        }),
        _ => None,
    };

    let shap = if config.explain.enabled {
        let e = &config.explain;
        let scorer = models[&e.method].as_match_scorer().stage("explain")?;
        let background = background_sample(&train, e.background, seeds.get("shap-background"));
        let instances = background_sample(&test, e.max_instances, seeds.get("shap-instances"));
        let g = global_shap(scorer, &instances, &background, e.n_coalitions, seeds.get("shap")).stage("explain")?;
        let stem = format!("explain/{}_shap", dir_name(&e.method));
        out.write_with(&format!("{stem}.csv"), |w| g.to_csv(w))?;
        out.write_json(&format!("{stem}.json"), &g)?;
        Some(g)
    } else {
        None
    };

    let mut networks = Vec::new();
    if config.network.enabled {
        let unknown = match &config.data.unknown {
            Some(src) => {
                let data = load_source(src).stage("ingest")?;
                write_source(out, "unknown", &LoadedData { register: None, ..data.clone() })?;
                inputs.extend(input_records(src)?);
                Some(data)
            }
            None => None,
        };
        for name in &config.network.methods {
            let o = find(name).expect("validated method name");
            let dir = format!("network/{}", dir_name(name));
            let scores = &test_scores[name];
            out.write(&format!("{dir}/test_links.dot"), linkage_dot(&test, scores, o.threshold, name).as_bytes())?;
            let predicted: Vec<bool> = scores.iter().map(|&s| s >= o.threshold).collect();
            let mut outcome = NetworkOutcome {
                method: name.clone(),
                threshold: o.threshold,
                test_true_links: test.n_linked(),
                test_predicted_links: predicted.iter().filter(|&&p| p).count(),
                test_correct_links: predicted.iter().zip(&test_labels).filter(|(&p, &l)| p && l).count(),
                unknown_cases: None,
                unknown_pairs: None,
                unknown_edges: None,
                suspects: None,
                modularity: None,
                prevalence: None,
            };
            if let Some(u) = &unknown {
                let pred = predict_unknown(
                    &u.table,
                    &codebook,
                    &models[name],
                    o.threshold,
                    config.network.resolution,
                    seeds.get("impute-unknown"),
                    seeds.get(&format!("louvain:{name}")),
                )
                .stage("predict")?;
                out.write_with(&format!("{dir}/edges.csv"), |w| pred.graph.write_edges_csv(w))?;
                out.write(&format!("{dir}/unknown.dot"), pred.graph.to_dot(Some(&pred.partition), name).as_bytes())?;
                out.write_json(&format!("{dir}/partition.json"), &pred.partition)?;
                out.write_with(&format!("{dir}/prevalence.csv"), |w| pred.prevalence.write_csv(w))?;
                outcome.unknown_cases = Some(pred.graph.n_nodes());
                outcome.unknown_pairs = Some(pred.n_pairs);
                outcome.unknown_edges = Some(pred.graph.n_edges());
                outcome.suspects = Some(pred.partition.n_communities());
                outcome.modularity = Some(pred.partition.modularity);
                outcome.prevalence = Some(pred.prevalence);
            }
            networks.push(outcome);
        }
        out.write_json("network/comparison.json", &networks)?;
    }

    let report = ExperimentReport {
        master_seed: config.seed,
        paper_mode: config.paper_mode,
        preprocess: pre_report,
        n_pairs: pairs.len(),
        n_linked: pairs.n_linked(),
        n_train: train.len(),
        n_test: test.len(),
        prevalence: prevalence_value,
        r,
        methods: outcomes,
        savings,
        shap,
        networks,
    };
    out.write_json("report.json", &report)?;
    out.write("summary.txt", report.summary().as_bytes())?;
    Ok((report, models))
}
