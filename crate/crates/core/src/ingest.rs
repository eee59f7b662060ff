//! Case tables, codebooks and the preprocessing policy applied before pairing.
//!
//! Cases are coded as tri-state values: present, absent or missing. The
//! preprocessing chain drops homogeneous columns, drops columns whose
//! missingness exceeds a threshold (unless exempt), and imputes what is left
//! with a seeded per-feature Bernoulli draw at the observed frequency.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Behavioural category of a codebook feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Victim,
    Suspect,
    Temporal,
    InitialApproach,
    FollowOnContact,
    Maintenance,
    Extortion,
    Closure,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Victim,
        Category::Suspect,
        Category::Temporal,
        Category::InitialApproach,
        Category::FollowOnContact,
        Category::Maintenance,
        Category::Extortion,
        Category::Closure,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Victim => "Victim",
            Category::Suspect => "Suspect",
            Category::Temporal => "Temporal",
            Category::InitialApproach => "InitialApproach",
            Category::FollowOnContact => "FollowOnContact",
            Category::Maintenance => "Maintenance",
            Category::Extortion => "Extortion",
            Category::Closure => "Closure",
        }
    }

    /// Parses a category name, ignoring case, spaces, dashes and underscores.
    pub fn parse(s: &str) -> Option<Category> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        Category::ALL
            .into_iter()
            .find(|c| c.as_str().to_ascii_lowercase() == key)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookEntry {
    pub feature_name: String,
    pub category: Category,
    pub lr_group: Option<u32>,
}

/// Ordered feature metadata. Column order of every [`CaseTable`] built from
/// a codebook follows the entry order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    entries: Vec<CodebookEntry>,
}

impl Codebook {
    pub fn new(entries: Vec<CodebookEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.feature_name.as_str()) {
                return Err(Error::DuplicateFeature(e.feature_name.clone()));
            }
        }
        Ok(Codebook { entries })
    }

    pub fn entries(&self) -> &[CodebookEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.feature_name.clone()).collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.feature_name == name)
    }

    /// Column indices per group id. Every id in the map owns at least one
    /// column because ids are only ever collected from entries.
    pub fn groups(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (j, e) in self.entries.iter().enumerate() {
            if let Some(g) = e.lr_group {
                groups.entry(g).or_default().push(j);
            }
        }
        groups
    }

    /// Keeps only the named features, in the order given.
    pub fn restrict(&self, names: &[String]) -> Result<Codebook> {
        let entries = names
            .iter()
            .map(|n| {
                self.entries
                    .iter()
                    .find(|e| &e.feature_name == n)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("feature `{n}` is not in the codebook")))
            })
            .collect::<Result<Vec<_>>>()?;
        Codebook::new(entries)
    }

    pub fn from_reader<R: Read>(reader: R, file: &str) -> Result<Codebook> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["feature_name", "category", "lr_group"];
        if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::Schema {
                file: file.to_string(),
                row: 1,
                column: headers.iter().collect::<Vec<_>>().join(","),
                message: "expected header `feature_name,category,lr_group`".into(),
            });
        }
        let mut entries = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let row = record.position().map_or(0, |p| p.line() as usize);
            let schema = |column: &str, message: String| Error::Schema {
                file: file.to_string(),
                row,
                column: column.to_string(),
                message,
            };
            let name = record.get(0).unwrap_or("").to_string();
            if name.is_empty() {
                return Err(schema("feature_name", "empty feature name".into()));
            }
            let raw_cat = record.get(1).unwrap_or("");
            let category = Category::parse(raw_cat)
                .ok_or_else(|| schema("category", format!("unknown category `{raw_cat}`")))?;
            let raw_group = record.get(2).unwrap_or("");
            let lr_group = if raw_group.is_empty() {
                None
            } else {
                Some(
                    raw_group
                        .parse::<u32>()
                        .map_err(|_| schema("lr_group", format!("`{raw_group}` is not a group id")))?,
                )
            };
            entries.push(CodebookEntry {
                feature_name: name,
                category,
                lr_group,
            });
        }
        Codebook::new(entries)
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["feature_name", "category", "lr_group"])?;
        for e in &self.entries {
            let group = e.lr_group.map(|g| g.to_string()).unwrap_or_default();
            w.write_record([e.feature_name.as_str(), e.category.as_str(), group.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-case tri-state feature matrix. `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseTable {
    case_ids: Vec<String>,
    feature_names: Vec<String>,
    features: Vec<Vec<Option<bool>>>,
}

impl CaseTable {
    pub fn new(
        case_ids: Vec<String>,
        feature_names: Vec<String>,
        features: Vec<Vec<Option<bool>>>,
    ) -> Result<Self> {
        if case_ids.len() != features.len() {
            return Err(Error::invalid(format!(
                "{} case ids for {} feature rows",
                case_ids.len(),
                features.len()
            )));
        }
        let mut seen = HashSet::new();
        for id in &case_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateCase(id.clone()));
            }
        }
        let mut names = HashSet::new();
        for n in &feature_names {
            if !names.insert(n.as_str()) {
                return Err(Error::DuplicateFeature(n.clone()));
            }
        }
        if let Some((i, row)) = features
            .iter()
            .enumerate()
            .find(|(_, r)| r.len() != feature_names.len())
        {
            return Err(Error::invalid(format!(
                "row {i} has {} cells, expected {}",
                row.len(),
                feature_names.len()
            )));
        }
        Ok(CaseTable {
            case_ids,
            feature_names,
            features,
        })
    }

    /// Builds a fully observed table from binary rows.
    pub fn from_binary(
        case_ids: Vec<String>,
        feature_names: Vec<String>,
        rows: Vec<Vec<bool>>,
    ) -> Result<Self> {
        let features = rows
            .into_iter()
            .map(|r| r.into_iter().map(Some).collect())
            .collect();
        CaseTable::new(case_ids, feature_names, features)
    }

    pub fn case_ids(&self) -> &[String] {
        &self.case_ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn rows(&self) -> &[Vec<Option<bool>>] {
        &self.features
    }

    pub fn n_cases(&self) -> usize {
        self.case_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn cell(&self, case: usize, feature: usize) -> Option<bool> {
        self.features[case][feature]
    }

    pub fn missing_count(&self) -> usize {
        self.features.iter().flatten().filter(|c| c.is_none()).count()
    }

    pub fn missing_fraction(&self, feature: usize) -> f64 {
        if self.case_ids.is_empty() {
            return 0.0;
        }
        let missing = self.features.iter().filter(|r| r[feature].is_none()).count();
        missing as f64 / self.case_ids.len() as f64
    }

    /// Observed (zeros, ones) for a column.
    pub fn observed_counts(&self, feature: usize) -> (usize, usize) {
        self.features.iter().fold((0, 0), |(z, o), r| match r[feature] {
            Some(true) => (z, o + 1),
            Some(false) => (z + 1, o),
            None => (z, o),
        })
    }

    pub fn index_of(&self, case_id: &str) -> Option<usize> {
        self.case_ids.iter().position(|c| c == case_id)
    }

    /// New table with the given columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> CaseTable {
        CaseTable {
            case_ids: self.case_ids.clone(),
            feature_names: columns.iter().map(|&j| self.feature_names[j].clone()).collect(),
            features: self
                .features
                .iter()
                .map(|r| columns.iter().map(|&j| r[j]).collect())
                .collect(),
        }
    }

    /// Fully observed rows; fails if any cell is missing.
    pub fn binary_rows(&self) -> Result<Vec<Vec<bool>>> {
        self.features
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.iter()
                    .enumerate()
                    .map(|(j, c)| {
                        c.ok_or_else(|| {
                            Error::invalid(format!(
                                "case `{}` has a missing value for `{}`; impute first",
                                self.case_ids[i], self.feature_names[j]
                            ))
                        })
                    })
                    .collect()
            })
            .collect()
    }

    /// Reads a cases CSV whose columns must match the codebook exactly (in any
    /// order). Columns are reordered to codebook order.
    pub fn from_reader<R: Read>(reader: R, codebook: &Codebook, file: &str) -> Result<CaseTable> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let header_err = |column: &str, message: String| Error::Schema {
            file: file.to_string(),
            row: 1,
            column: column.to_string(),
            message,
        };
        if headers.get(0) != Some("case_id") {
            return Err(header_err(
                headers.get(0).unwrap_or(""),
                "first column must be `case_id`".into(),
            ));
        }
        // position in file -> position in codebook
        let mut column_map = Vec::with_capacity(headers.len() - 1);
        let mut seen = HashSet::new();
        for h in headers.iter().skip(1) {
            let pos = codebook
                .position(h)
                .ok_or_else(|| header_err(h, "feature is not in the codebook".into()))?;
            if !seen.insert(pos) {
                return Err(header_err(h, "duplicate feature column".into()));
            }
            column_map.push(pos);
        }
        if let Some(missing) = codebook
            .entries()
            .iter()
            .enumerate()
            .find(|(j, _)| !seen.contains(j))
        {
            return Err(header_err(
                &missing.1.feature_name,
                "codebook feature has no column".into(),
            ));
        }

        let p = codebook.len();
        let mut case_ids = Vec::new();
        let mut features = Vec::new();
        let mut ids = HashSet::new();
        for record in rdr.records() {
            let record = record?;
            let row = record.position().map_or(0, |p| p.line() as usize);
            let id = record.get(0).unwrap_or("").to_string();
            if id.is_empty() {
                return Err(Error::Schema {
                    file: file.to_string(),
                    row,
                    column: "case_id".into(),
                    message: "empty case id".into(),
                });
            }
            if !ids.insert(id.clone()) {
                return Err(Error::Schema {
                    file: file.to_string(),
                    row,
                    column: "case_id".into(),
                    message: Error::DuplicateCase(id).to_string(),
                });
            }
            if record.len() != headers.len() {
                return Err(Error::Schema {
                    file: file.to_string(),
                    row,
                    column: "*".into(),
                    message: format!("{} cells, expected {}", record.len(), headers.len()),
                });
            }
            let mut cells = vec![None; p];
            for (k, raw) in record.iter().skip(1).enumerate() {
                cells[column_map[k]] = match raw {
                    "" => None,
                    "0" => Some(false),
                    "1" => Some(true),
                    other => {
                        return Err(Error::Schema {
                            file: file.to_string(),
                            row,
                            column: headers[k + 1].to_string(),
                            message: format!("cell `{other}` is not 0, 1 or empty"),
                        })
                    }
                };
            }
            case_ids.push(id);
            features.push(cells);
        }
        CaseTable::new(case_ids, codebook.names(), features)
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["case_id".to_string()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)?;
        for (id, row) in self.case_ids.iter().zip(&self.features) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|c| match c {
                Some(true) => "1".to_string(),
                Some(false) => "0".to_string(),
                None => String::new(),
            }));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Loads a cases CSV and its codebook.
pub fn load_cases(path: &Path, codebook_path: &Path) -> Result<(CaseTable, Codebook)> {
    let codebook = Codebook::from_reader(
        std::fs::File::open(codebook_path)?,
        &codebook_path.display().to_string(),
    )?;
    let table = CaseTable::from_reader(
        std::fs::File::open(path)?,
        &codebook,
        &path.display().to_string(),
    )?;
    Ok((table, codebook))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkEntry {
    pub case_id: String,
    pub suspect_id: String,
}

/// Solved-case register mapping each case to its known suspect.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkageRegister {
    pairs: Vec<LinkEntry>,
    by_case: HashMap<String, usize>,
}

impl LinkageRegister {
    pub fn new(pairs: Vec<LinkEntry>) -> Result<Self> {
        let mut by_case = HashMap::with_capacity(pairs.len());
        for (i, p) in pairs.iter().enumerate() {
            if by_case.insert(p.case_id.clone(), i).is_some() {
                return Err(Error::DuplicateCase(p.case_id.clone()));
            }
        }
        Ok(LinkageRegister { pairs, by_case })
    }

    pub fn pairs(&self) -> &[LinkEntry] {
        &self.pairs
    }

    pub fn suspect_of(&self, case_id: &str) -> Option<&str> {
        self.by_case
            .get(case_id)
            .map(|&i| self.pairs[i].suspect_id.as_str())
    }

    pub fn n_suspects(&self) -> usize {
        self.pairs
            .iter()
            .map(|p| p.suspect_id.as_str())
            .collect::<HashSet<_>>()
            .len()
    }

    /// Every registered case must exist in the table.
    pub fn validate_against(&self, table: &CaseTable) -> Result<()> {
        let ids: HashSet<&str> = table.case_ids().iter().map(String::as_str).collect();
        match self.pairs.iter().find(|p| !ids.contains(p.case_id.as_str())) {
            Some(p) => Err(Error::invalid(format!(
                "linkage register references unknown case `{}`",
                p.case_id
            ))),
            None => Ok(()),
        }
    }

    pub fn from_reader<R: Read>(reader: R, file: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "case_id" || &headers[1] != "suspect_id" {
            return Err(Error::Schema {
                file: file.to_string(),
                row: 1,
                column: headers.iter().collect::<Vec<_>>().join(","),
                message: "expected header `case_id,suspect_id`".into(),
            });
        }
        let mut pairs = Vec::new();
        for record in rdr.records() {
            let record = record?;
            pairs.push(LinkEntry {
                case_id: record[0].to_string(),
                suspect_id: record[1].to_string(),
            });
        }
        LinkageRegister::new(pairs)
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["case_id", "suspect_id"])?;
        for p in &self.pairs {
            w.write_record([&p.case_id, &p.suspect_id])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn load_linkage(path: &Path) -> Result<LinkageRegister> {
    LinkageRegister::from_reader(std::fs::File::open(path)?, &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedFeature {
    pub feature: String,
    pub missing_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub initial_features: usize,
    pub dropped_homogeneous: Vec<String>,
    pub dropped_missing: Vec<DroppedFeature>,
    pub imputed_cells: usize,
    pub retained_features: usize,
}

impl PreprocessReport {
    fn identity(features: usize) -> Self {
        PreprocessReport {
            initial_features: features,
            retained_features: features,
            ..Default::default()
        }
    }

    /// Combines this report with one produced by a later stage.
    pub fn then(mut self, later: PreprocessReport) -> PreprocessReport {
        self.dropped_homogeneous.extend(later.dropped_homogeneous);
        self.dropped_missing.extend(later.dropped_missing);
        self.imputed_cells += later.imputed_cells;
        self.retained_features = later.retained_features;
        self
    }

    pub fn reconciles(&self) -> bool {
        self.retained_features + self.dropped_homogeneous.len() + self.dropped_missing.len()
            == self.initial_features
    }
}

/// Drops columns lacking an observed 0 or an observed 1.
pub fn drop_homogeneous(table: &CaseTable) -> Result<(CaseTable, PreprocessReport)> {
    if table.n_cases() == 0 {
        return Err(Error::insufficient("case table has no rows"));
    }
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..table.n_features() {
        let (zeros, ones) = table.observed_counts(j);
        if zeros > 0 && ones > 0 {
            keep.push(j);
        } else {
            dropped.push(table.feature_names()[j].clone());
        }
    }
    if keep.is_empty() {
        return Err(Error::EmptyFeatureSet(
            "every column is homogeneous".into(),
        ));
    }
    let report = PreprocessReport {
        initial_features: table.n_features(),
        dropped_homogeneous: dropped,
        retained_features: keep.len(),
        ..Default::default()
    };
    Ok((table.select_columns(&keep), report))
}

/// Drops non-exempt columns whose missing fraction exceeds `threshold`.
pub fn apply_missingness_policy(
    table: &CaseTable,
    threshold: f64,
    exempt: &BTreeSet<String>,
) -> Result<(CaseTable, PreprocessReport)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!(
            "missingness threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for (j, name) in table.feature_names().iter().enumerate() {
        let fraction = table.missing_fraction(j);
        if fraction <= threshold || exempt.contains(name) {
            keep.push(j);
        } else {
            dropped.push(DroppedFeature {
                feature: name.clone(),
                missing_fraction: fraction,
            });
        }
    }
    let report = PreprocessReport {
        initial_features: table.n_features(),
        dropped_missing: dropped,
        retained_features: keep.len(),
        ..Default::default()
    };
    Ok((table.select_columns(&keep), report))
}

/// Fills missing cells with Bernoulli draws at each column's observed
/// frequency of ones. Columns are processed left to right and cells top to
/// bottom from a single seeded stream; observed cells are never touched.
pub fn impute(table: &CaseTable, seed: u64) -> Result<CaseTable> {
    let mut rng = seed::rng(seed);
    let mut features = table.features.clone();
    for j in 0..table.n_features() {
        let (zeros, ones) = table.observed_counts(j);
        let observed = zeros + ones;
        if observed == 0 {
            return Err(Error::FullyMissing(table.feature_names()[j].clone()));
        }
        if observed == table.n_cases() {
            continue;
        }
        let rate = ones as f64 / observed as f64;
        for row in features.iter_mut() {
            if row[j].is_none() {
                row[j] = Some(rng.gen_bool(rate));
            }
        }
    }
    Ok(CaseTable {
        case_ids: table.case_ids.clone(),
        feature_names: table.feature_names.clone(),
        features,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub missing_threshold: f64,
    pub exempt: BTreeSet<String>,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            missing_threshold: 0.25,
            exempt: BTreeSet::new(),
            seed: 1,
        }
    }
}

/// Homogeneity filter, missingness policy and imputation, in that order. The
/// returned codebook is restricted to the retained features.
pub fn preprocess(
    table: &CaseTable,
    codebook: &Codebook,
    config: &PreprocessConfig,
) -> Result<(CaseTable, Codebook, PreprocessReport)> {
    let report = PreprocessReport::identity(table.n_features());
    let (table, homogeneous) = drop_homogeneous(table)?;
    let (table, missing) =
        apply_missingness_policy(&table, config.missing_threshold, &config.exempt)?;
    if table.n_features() == 0 {
        return Err(Error::EmptyFeatureSet(
            "every feature exceeded the missingness threshold".into(),
        ));
    }
    let imputed_cells = table.missing_count();
    let table = impute(&table, config.seed)?;
    let report = report.then(homogeneous).then(missing).then(PreprocessReport {
        imputed_cells,
        retained_features: table.n_features(),
        ..Default::default()
    });
    let codebook = codebook.restrict(table.feature_names())?;
    Ok((table, codebook, report))
}
