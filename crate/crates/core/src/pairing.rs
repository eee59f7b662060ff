//! Pairwise match datasets and Jaccard similarity summaries.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{CaseTable, Codebook, LinkageRegister};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Linked,
    Unlinked,
    Unknown,
}

impl Label {
    pub fn is_linked(self) -> bool {
        self == Label::Linked
    }

    pub fn from_linked(linked: bool) -> Label {
        if linked {
            Label::Linked
        } else {
            Label::Unlinked
        }
    }

    fn code(self) -> &'static str {
        match self {
            Label::Linked => "1",
            Label::Unlinked => "0",
            Label::Unknown => "?",
        }
    }

    fn from_code(code: &str) -> Option<Label> {
        match code {
            "1" => Some(Label::Linked),
            "0" => Some(Label::Unlinked),
            "?" => Some(Label::Unknown),
            _ => None,
        }
    }
}

/// Jaccard similarities of a pair's raw case vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySummary {
    pub overall: f64,
    pub by_group: BTreeMap<u32, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRow {
    pub a: String,
    pub b: String,
    /// `matches[j]` is true when both cases carry the same value for feature j.
    pub matches: Vec<bool>,
    pub label: Label,
    /// Raw-vector similarities, present for pairs built from a case table with
    /// a codebook. Synthetic rows produced by resampling have none.
    pub similarity: Option<SimilaritySummary>,
}

impl PairRow {
    pub fn match_values(&self) -> Vec<f64> {
        self.matches.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseDataset {
    pub rows: Vec<PairRow>,
    pub feature_names: Vec<String>,
}

impl PairwiseDataset {
    pub fn new(rows: Vec<PairRow>, feature_names: Vec<String>) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| r.matches.len() != feature_names.len()) {
            return Err(Error::ArityMismatch {
                expected: feature_names.len(),
                found: r.matches.len(),
            });
        }
        Ok(PairwiseDataset { rows, feature_names })
    }

    pub fn empty(feature_names: Vec<String>) -> Self {
        PairwiseDataset {
            rows: Vec::new(),
            feature_names,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.rows.iter().map(|r| r.label.is_linked()).collect()
    }

    pub fn n_linked(&self) -> usize {
        self.rows.iter().filter(|r| r.label == Label::Linked).count()
    }

    pub fn n_unlinked(&self) -> usize {
        self.rows.iter().filter(|r| r.label == Label::Unlinked).count()
    }

    pub fn is_labeled(&self) -> bool {
        self.rows.iter().all(|r| r.label != Label::Unknown)
    }

    pub fn prevalence(&self) -> f64 {
        if self.rows.is_empty() {
            0.0
        } else {
            self.n_linked() as f64 / self.rows.len() as f64
        }
    }

    pub fn subset(&self, indices: &[usize]) -> PairwiseDataset {
        PairwiseDataset {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    pub fn match_matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(PairRow::match_values).collect()
    }

    /// Errors unless every row is labeled and both classes occur.
    pub fn require_two_classes(&self, what: &str) -> Result<()> {
        if !self.is_labeled() {
            return Err(Error::invalid(format!("{what} requires labeled pairs")));
        }
        if self.n_linked() == 0 || self.n_unlinked() == 0 {
            return Err(Error::insufficient(format!(
                "{what} requires both classes ({} linked, {} unlinked)",
                self.n_linked(),
                self.n_unlinked()
            )));
        }
        Ok(())
    }

    /// CSV with header `case_a,case_b,label,<features>`; labels `1`, `0`, `?`.
    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["case_a".to_string(), "case_b".into(), "label".into()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)?;
        let mut rec: Vec<&str> = Vec::with_capacity(header.len());
        for r in &self.rows {
            rec.clear();
            rec.push(&r.a);
            rec.push(&r.b);
            rec.push(r.label.code());
            rec.extend(r.matches.iter().map(|&m| if m { "1" } else { "0" }));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn from_reader<R: Read>(reader: R, file: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 3 || &headers[0] != "case_a" || &headers[1] != "case_b" || &headers[2] != "label" {
            return Err(Error::Schema {
                file: file.into(),
                row: 1,
                column: headers.get(0).unwrap_or("").into(),
                message: "expected header `case_a,case_b,label,...`".into(),
            });
        }
        let feature_names: Vec<String> = headers.iter().skip(3).map(String::from).collect();
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let row = record.position().map_or(0, |p| p.line() as usize);
            let schema = |column: &str, message: String| Error::Schema {
                file: file.into(),
                row,
                column: column.into(),
                message,
            };
            let label = Label::from_code(&record[2])
                .ok_or_else(|| schema("label", format!("`{}` is not 0, 1 or ?", &record[2])))?;
            let matches = record
                .iter()
                .skip(3)
                .enumerate()
                .map(|(j, v)| match v {
                    "1" => Ok(true),
                    "0" => Ok(false),
                    other => Err(schema(&feature_names[j], format!("`{other}` is not 0 or 1"))),
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(PairRow {
                a: record[0].to_string(),
                b: record[1].to_string(),
                matches,
                label,
                similarity: None,
            });
        }
        PairwiseDataset::new(rows, feature_names)
    }
}

/// `|{i: a_i ∧ b_i}| / |{i: a_i ∨ b_i}|`, with two empty vectors scoring 0.
pub fn jaccard(a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len(), "jaccard on vectors of unequal length");
    let (inter, union) = a.iter().zip(b).fold((0usize, 0usize), |(i, u), (&x, &y)| {
        (i + usize::from(x && y), u + usize::from(x || y))
    });
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn summarize_pair(a: &[bool], b: &[bool], codebook: &Codebook) -> Result<SimilaritySummary> {
    if a.len() != codebook.len() || b.len() != codebook.len() {
        return Err(Error::ArityMismatch {
            expected: codebook.len(),
            found: a.len().max(b.len()),
        });
    }
    let by_group = codebook
        .groups()
        .into_iter()
        .map(|(g, cols)| {
            let ga: Vec<bool> = cols.iter().map(|&j| a[j]).collect();
            let gb: Vec<bool> = cols.iter().map(|&j| b[j]).collect();
            (g, jaccard(&ga, &gb))
        })
        .collect();
    Ok(SimilaritySummary {
        overall: jaccard(a, b),
        by_group,
    })
}

/// One row per unordered pair of cases, with match vectors only.
pub fn build_pairs(table: &CaseTable, register: Option<&LinkageRegister>) -> Result<PairwiseDataset> {
    build(table, register, None)
}

/// Like [`build_pairs`], additionally attaching raw-vector Jaccard summaries
/// (overall and per codebook group) to every row.
pub fn build_pairs_summarized(
    table: &CaseTable,
    register: Option<&LinkageRegister>,
    codebook: &Codebook,
) -> Result<PairwiseDataset> {
    if codebook.names() != table.feature_names() {
        return Err(Error::invalid("codebook does not match the case table columns"));
    }
    build(table, register, Some(codebook))
}

fn build(
    table: &CaseTable,
    register: Option<&LinkageRegister>,
    codebook: Option<&Codebook>,
) -> Result<PairwiseDataset> {
    let n = table.n_cases();
    if n < 2 {
        return Err(Error::insufficient(format!("need at least 2 cases to pair, got {n}")));
    }
    let rows = table.binary_rows()?;
    if let Some(reg) = register {
        reg.validate_against(table)?;
    }
    // visit cases in id order so pair order does not depend on file order
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| table.case_ids()[x].cmp(&table.case_ids()[y]));
    let ids = table.case_ids();

    let pairs: Vec<PairRow> = (0..n)
        .into_par_iter()
        .flat_map_iter(|oi| {
            let i = order[oi];
            let rows = &rows;
            let order = &order;
            (oi + 1..n).map(move |oj| {
                let j = order[oj];
                let (ra, rb) = (&rows[i], &rows[j]);
                let matches = ra.iter().zip(rb).map(|(x, y)| x == y).collect();
                let label = match register {
                    None => Label::Unknown,
                    Some(reg) => match (reg.suspect_of(&ids[i]), reg.suspect_of(&ids[j])) {
                        (Some(si), Some(sj)) => Label::from_linked(si == sj),
                        _ => Label::Unknown,
                    },
                };
                let similarity = codebook.map(|cb| {
                    summarize_pair(ra, rb, cb).expect("codebook aligned with table")
                });
                PairRow {
                    a: ids[i].clone(),
                    b: ids[j].clone(),
                    matches,
                    label,
                    similarity,
                }
            })
        })
        .collect();
    PairwiseDataset::new(pairs, table.feature_names().to_vec())
}
