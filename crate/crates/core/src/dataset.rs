//! Sparse crossed triplet data: ingestion, dense indexing and incidence counts.
//!
//! A dataset is a list of `(row, col, value[, label])` records with at most one
//! record per `(row, col)` cell. Row and column keys are opaque strings mapped
//! to dense indices `0..R` and `0..C` in order of first appearance. The
//! occupied cells are kept in an [`IncidencePattern`], which also carries a
//! per-row adjacency list so resampling never touches an `R × C` structure.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::sync::OnceLock;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{at}: {message}")]
    Malformed { at: String, message: String },
    #[error("{at}: non-finite value `{raw}`")]
    NonFinite { at: String, raw: String },
    #[error("{at}: duplicate cell ({row}, {col}), first seen at {first_at} (duplicate policy `{policy}`)")]
    Duplicate {
        at: String,
        first_at: String,
        row: String,
        col: String,
        policy: DuplicatePolicy,
    },
    #[error(
        "{at}: duplicate cell ({row}, {col}) has a label that disagrees with {first_at} (duplicate policy `mean`)"
    )]
    LabelConflict {
        at: String,
        first_at: String,
        row: String,
        col: String,
    },
    #[error("invalid header: {0}")]
    Header(String),
    #[error("empty input: no records")]
    Empty,
    #[error("invalid pattern: {0}")]
    InvalidPattern(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// What to do when a `(row, col)` cell appears more than once.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DuplicatePolicy {
    #[default]
    Error,
    /// Keep the first record, discard later ones.
    First,
    /// Average the values; labels must agree.
    Mean,
}

impl fmt::Display for DuplicatePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DuplicatePolicy::Error => "error",
            DuplicatePolicy::First => "first",
            DuplicatePolicy::Mean => "mean",
        })
    }
}

impl std::str::FromStr for DuplicatePolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "error" => Ok(Self::Error),
            "first" => Ok(Self::First),
            "mean" => Ok(Self::Mean),
            other => Err(format!(
                "unknown duplicate policy `{other}` (expected error, first or mean)"
            )),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    pub duplicates: DuplicatePolicy,
    /// Field delimiter; detected from the header line (tab or comma) when `None`.
    pub delimiter: Option<u8>,
}

/// An owned record.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletRecord {
    pub row_key: String,
    pub col_key: String,
    pub value: f64,
    pub label: Option<String>,
}

impl TripletRecord {
    pub fn new(row_key: impl Into<String>, col_key: impl Into<String>, value: f64) -> Self {
        Self {
            row_key: row_key.into(),
            col_key: col_key.into(),
            value,
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

/// A borrowed view of one record of a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordRef<'a> {
    pub row: u32,
    pub col: u32,
    pub row_key: &'a str,
    pub col_key: &'a str,
    pub value: f64,
    pub label: Option<&'a str>,
}

/// Occupied cells of an `R × C` layout, in record order, plus a per-row
/// adjacency list.
#[derive(Debug)]
pub struct IncidencePattern {
    n_rows: usize,
    n_cols: usize,
    rows: Vec<u32>,
    cols: Vec<u32>,
    row_offsets: Vec<usize>,
    row_cells: Vec<u32>,
    summary: OnceLock<IncidenceSummary>,
}

impl Clone for IncidencePattern {
    fn clone(&self) -> Self {
        Self {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            rows: self.rows.clone(),
            cols: self.cols.clone(),
            row_offsets: self.row_offsets.clone(),
            row_cells: self.row_cells.clone(),
            summary: self.summary.clone(),
        }
    }
}

impl PartialEq for IncidencePattern {
    fn eq(&self, other: &Self) -> bool {
        self.n_rows == other.n_rows && self.n_cols == other.n_cols && self.rows == other.rows && self.cols == other.cols
    }
}

/// Row-grouped view of cells: `offsets` has `n_rows + 1` entries and row `i`
/// owns `cells[offsets[i]..offsets[i + 1]]`, sorted by `(col, cell)`.
struct RowAdjacency {
    offsets: Vec<usize>,
    cells: Vec<u32>,
}

fn row_adjacency(n_rows: usize, rows: &[u32], cols: &[u32]) -> RowAdjacency {
    let mut offsets = vec![0usize; n_rows + 1];
    for &r in rows {
        offsets[r as usize + 1] += 1;
    }
    for i in 0..n_rows {
        offsets[i + 1] += offsets[i];
    }
    let mut fill = offsets.clone();
    let mut cells = vec![0u32; rows.len()];
    for (l, &r) in rows.iter().enumerate() {
        let slot = &mut fill[r as usize];
        cells[*slot] = l as u32;
        *slot += 1;
    }
    for i in 0..n_rows {
        cells[offsets[i]..offsets[i + 1]].sort_unstable_by_key(|&l| (cols[l as usize], l));
    }
    RowAdjacency { offsets, cells }
}

impl IncidencePattern {
    /// Builds a pattern from per-cell dense indices.
    ///
    /// Every row in `0..n_rows` and every column in `0..n_cols` must hold at
    /// least one cell, and no cell may repeat.
    pub fn new(n_rows: usize, n_cols: usize, rows: Vec<u32>, cols: Vec<u32>) -> Result<Self, DatasetError> {
        if rows.len() != cols.len() {
            return Err(DatasetError::InvalidPattern(format!(
                "{} row indices but {} column indices",
                rows.len(),
                cols.len()
            )));
        }
        if rows.is_empty() {
            return Err(DatasetError::Empty);
        }
        if rows.len() > u32::MAX as usize {
            return Err(DatasetError::InvalidPattern("more than 2^32 - 1 cells".into()));
        }
        if let Some(&r) = rows.iter().find(|&&r| r as usize >= n_rows) {
            return Err(DatasetError::InvalidPattern(format!(
                "row index {r} out of range 0..{n_rows}"
            )));
        }
        if let Some(&c) = cols.iter().find(|&&c| c as usize >= n_cols) {
            return Err(DatasetError::InvalidPattern(format!(
                "column index {c} out of range 0..{n_cols}"
            )));
        }
        let adj = row_adjacency(n_rows, &rows, &cols);
        if let Some(i) = (0..n_rows).find(|&i| adj.offsets[i] == adj.offsets[i + 1]) {
            return Err(DatasetError::InvalidPattern(format!("row {i} has no cells")));
        }
        let mut col_seen = vec![false; n_cols];
        for &c in &cols {
            col_seen[c as usize] = true;
        }
        if let Some(j) = col_seen.iter().position(|&s| !s) {
            return Err(DatasetError::InvalidPattern(format!("column {j} has no cells")));
        }
        for seg in adj.offsets.windows(2) {
            for w in adj.cells[seg[0]..seg[1]].windows(2) {
                if cols[w[0] as usize] == cols[w[1] as usize] {
                    return Err(DatasetError::InvalidPattern(format!(
                        "cells {} and {} both occupy ({}, {})",
                        w[0], w[1], rows[w[0] as usize], cols[w[0] as usize]
                    )));
                }
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            rows,
            cols,
            row_offsets: adj.offsets,
            row_cells: adj.cells,
            summary: OnceLock::new(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Number of occupied cells, `N`.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row index of every cell, in cell order.
    pub fn rows(&self) -> &[u32] {
        &self.rows
    }

    pub fn cols(&self) -> &[u32] {
        &self.cols
    }

    /// Cells of row `i`, ordered by column.
    pub fn row_cells(&self, i: usize) -> &[u32] {
        &self.row_cells[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    /// Number of cells in row `i`.
    pub fn row_len(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    /// Record index of cell `(i, j)`, if occupied.
    pub fn cell_index(&self, i: usize, j: usize) -> Option<usize> {
        let cells = self.row_cells(i);
        cells
            .binary_search_by_key(&(j as u32), |&l| self.cols[l as usize])
            .ok()
            .map(|k| cells[k] as usize)
    }

    /// Incidence counts, computed on first use and cached.
    pub fn summary(&self) -> &IncidenceSummary {
        self.summary.get_or_init(|| IncidenceSummary::compute(self))
    }
}

/// Incidence counts and the derived neighbour ratios of a pattern.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncidenceSummary {
    /// `n_i•`, cells per row.
    pub n_row: Vec<u64>,
    /// `n_•j`, cells per column.
    pub n_col: Vec<u64>,
    pub n: u64,
    /// `(1/N) Σ_i n_i•²`, the average number of row neighbours of an observation.
    pub nu_a: f64,
    /// `(1/N) Σ_j n_•j²`.
    pub nu_b: f64,
    /// `(1/N) Σ_j Z_ij n_•j`.
    pub mu_row: Vec<f64>,
    /// `(1/N) Σ_i Z_ij n_i•`.
    pub mu_col: Vec<f64>,
    /// Largest of `1/R, 1/C, ν_A/N, ν_B/N, 1/ν_A, 1/ν_B, max n_i•/N, max n_•j/N`.
    pub epsilon_n: f64,
}

impl IncidenceSummary {
    fn compute(p: &IncidencePattern) -> Self {
        let n = p.len() as u64;
        let n_row: Vec<u64> = (0..p.n_rows).map(|i| p.row_len(i) as u64).collect();
        let mut n_col = vec![0u64; p.n_cols];
        for &c in &p.cols {
            n_col[c as usize] += 1;
        }
        let sq = |v: &[u64]| v.iter().map(|&k| (k as u128) * (k as u128)).sum::<u128>();
        let nf = n as f64;
        let nu_a = sq(&n_row) as f64 / nf;
        let nu_b = sq(&n_col) as f64 / nf;

        // Integer sums, one division each.
        let mut mu_row_num = vec![0u64; p.n_rows];
        let mut mu_col_num = vec![0u64; p.n_cols];
        for (&r, &c) in p.rows.iter().zip(&p.cols) {
            mu_row_num[r as usize] += n_col[c as usize];
            mu_col_num[c as usize] += n_row[r as usize];
        }
        let mu_row = mu_row_num.iter().map(|&s| s as f64 / nf).collect();
        let mu_col = mu_col_num.iter().map(|&s| s as f64 / nf).collect();

        let max_row = n_row.iter().copied().max().unwrap_or(0) as f64;
        let max_col = n_col.iter().copied().max().unwrap_or(0) as f64;
        let epsilon_n = [
            1.0 / p.n_rows as f64,
            1.0 / p.n_cols as f64,
            nu_a / nf,
            nu_b / nf,
            1.0 / nu_a,
            1.0 / nu_b,
            max_row / nf,
            max_col / nf,
        ]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);

        Self {
            n_row,
            n_col,
            n,
            nu_a,
            nu_b,
            mu_row,
            mu_col,
            epsilon_n,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_row.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_col.len()
    }
}

const NO_LABEL: u32 = u32::MAX;

/// Immutable, validated triplet data.
#[derive(Debug, Clone)]
pub struct TripletDataset {
    pattern: IncidencePattern,
    values: Vec<f64>,
    /// Label id per record (`NO_LABEL` when absent); empty when no record has a label.
    labels: Vec<u32>,
    row_keys: Vec<String>,
    col_keys: Vec<String>,
    label_names: Vec<String>,
    row_index: HashMap<String, u32>,
    col_index: HashMap<String, u32>,
    label_index: HashMap<String, u32>,
}

fn key_index(keys: &[String]) -> HashMap<String, u32> {
    keys.iter().enumerate().map(|(i, k)| (k.clone(), i as u32)).collect()
}

impl TripletDataset {
    /// Builds a dataset from owned records under the given duplicate policy.
    pub fn from_records<I>(records: I, duplicates: DuplicatePolicy) -> Result<Self, DatasetError>
    where
        I: IntoIterator<Item = TripletRecord>,
    {
        let mut b = Builder::default();
        for (k, rec) in records.into_iter().enumerate() {
            let at = Location::Record(k as u64 + 1);
            if !rec.value.is_finite() {
                return Err(DatasetError::NonFinite {
                    at: at.to_string(),
                    raw: rec.value.to_string(),
                });
            }
            b.push(&rec.row_key, &rec.col_key, rec.value, rec.label.as_deref(), at);
        }
        b.finish(duplicates)
    }

    /// Attaches values (and optionally labels) to a pattern. Keys are
    /// generated as `r1..rR` and `c1..cC`.
    pub fn from_pattern(
        pattern: IncidencePattern,
        values: Vec<f64>,
        labels: Option<(Vec<u32>, Vec<String>)>,
    ) -> Result<Self, DatasetError> {
        if values.len() != pattern.len() {
            return Err(DatasetError::InvalidPattern(format!(
                "{} values for {} cells",
                values.len(),
                pattern.len()
            )));
        }
        if let Some(l) = values.iter().position(|v| !v.is_finite()) {
            return Err(DatasetError::NonFinite {
                at: Location::Record(l as u64 + 1).to_string(),
                raw: values[l].to_string(),
            });
        }
        let (labels, label_names) = match labels {
            None => (Vec::new(), Vec::new()),
            Some((ids, names)) => {
                if ids.len() != pattern.len() {
                    return Err(DatasetError::InvalidPattern(format!(
                        "{} labels for {} cells",
                        ids.len(),
                        pattern.len()
                    )));
                }
                if ids.iter().any(|&id| id != NO_LABEL && id as usize >= names.len()) {
                    return Err(DatasetError::InvalidPattern("label id out of range".into()));
                }
                (ids, names)
            }
        };
        let row_keys: Vec<String> = (1..=pattern.n_rows()).map(|i| format!("r{i}")).collect();
        let col_keys: Vec<String> = (1..=pattern.n_cols()).map(|j| format!("c{j}")).collect();
        Ok(Self {
            row_index: key_index(&row_keys),
            col_index: key_index(&col_keys),
            label_index: key_index(&label_names),
            pattern,
            values,
            labels,
            row_keys,
            col_keys,
            label_names,
        })
    }

    pub fn pattern(&self) -> &IncidencePattern {
        &self.pattern
    }

    pub fn summary(&self) -> &IncidenceSummary {
        self.pattern.summary()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_rows(&self) -> usize {
        self.pattern.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.pattern.n_cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Per-record label ids, or `None` if the dataset carries no labels.
    /// Records without a label hold `u32::MAX`.
    pub fn label_ids(&self) -> Option<&[u32]> {
        (!self.labels.is_empty()).then_some(self.labels.as_slice())
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn label_id(&self, name: &str) -> Option<u32> {
        self.label_index.get(name).copied()
    }

    pub fn row_id(&self, key: &str) -> Option<u32> {
        self.row_index.get(key).copied()
    }

    pub fn col_id(&self, key: &str) -> Option<u32> {
        self.col_index.get(key).copied()
    }

    pub fn row_key(&self, i: usize) -> &str {
        &self.row_keys[i]
    }

    pub fn col_key(&self, j: usize) -> &str {
        &self.col_keys[j]
    }

    pub fn record(&self, l: usize) -> RecordRef<'_> {
        let row = self.pattern.rows[l];
        let col = self.pattern.cols[l];
        RecordRef {
            row,
            col,
            row_key: &self.row_keys[row as usize],
            col_key: &self.col_keys[col as usize],
            value: self.values[l],
            label: self.label_of(l),
        }
    }

    pub fn label_of(&self, l: usize) -> Option<&str> {
        match self.labels.get(l) {
            Some(&id) if id != NO_LABEL => Some(&self.label_names[id as usize]),
            _ => None,
        }
    }

    pub fn records(&self) -> impl ExactSizeIterator<Item = RecordRef<'_>> + '_ {
        (0..self.len()).map(move |l| self.record(l))
    }

    /// Same keys, pattern and labels with replaced values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, DatasetError> {
        if values.len() != self.len() {
            return Err(DatasetError::InvalidPattern(format!(
                "{} values for {} cells",
                values.len(),
                self.len()
            )));
        }
        if let Some(l) = values.iter().position(|v| !v.is_finite()) {
            return Err(DatasetError::NonFinite {
                at: Location::Record(l as u64 + 1).to_string(),
                raw: values[l].to_string(),
            });
        }
        Ok(Self { values, ..self.clone() })
    }

    /// Keeps the records selected by `keep`, dropping entities left empty and
    /// re-indexing the survivors by first appearance.
    pub fn filter_records(&self, keep: impl Fn(usize) -> bool) -> Result<Self, DatasetError> {
        let mut b = Builder::default();
        for l in (0..self.len()).filter(|&l| keep(l)) {
            let r = self.record(l);
            b.push(r.row_key, r.col_key, r.value, r.label, Location::Record(l as u64 + 1));
        }
        b.finish(DuplicatePolicy::Error)
    }

    /// Writes the canonical text form: a `row,col,value[,label]` header and
    /// one line per record in record order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DatasetError> {
        let mut w = csv::WriterBuilder::new().from_writer(out);
        let has_labels = !self.labels.is_empty();
        let map_csv = |e: csv::Error| DatasetError::Io(std::io::Error::other(e));
        if has_labels {
            w.write_record(["row", "col", "value", "label"]).map_err(map_csv)?;
        } else {
            w.write_record(["row", "col", "value"]).map_err(map_csv)?;
        }
        let mut buf = String::new();
        for r in self.records() {
            buf.clear();
            use std::fmt::Write as _;
            let _ = write!(buf, "{}", r.value);
            if has_labels {
                w.write_record([r.row_key, r.col_key, buf.as_str(), r.label.unwrap_or("")])
                    .map_err(map_csv)?;
            } else {
                w.write_record([r.row_key, r.col_key, buf.as_str()]).map_err(map_csv)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Location {
    Line(u64),
    Record(u64),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(n) => write!(f, "line {n}"),
            Location::Record(n) => write!(f, "record {n}"),
        }
    }
}

/// Accumulates raw records, assigning dense ids by first appearance.
#[derive(Default)]
struct Builder {
    rows: Vec<u32>,
    cols: Vec<u32>,
    values: Vec<f64>,
    labels: Vec<u32>,
    any_label: bool,
    at: Vec<Location>,
    row_keys: Vec<String>,
    col_keys: Vec<String>,
    label_names: Vec<String>,
    row_index: HashMap<String, u32>,
    col_index: HashMap<String, u32>,
    label_index: HashMap<String, u32>,
}

fn intern(index: &mut HashMap<String, u32>, keys: &mut Vec<String>, key: &str) -> u32 {
    if let Some(&id) = index.get(key) {
        return id;
    }
    let id = keys.len() as u32;
    keys.push(key.to_owned());
    index.insert(key.to_owned(), id);
    id
}

impl Builder {
    fn push(&mut self, row: &str, col: &str, value: f64, label: Option<&str>, at: Location) {
        self.rows.push(intern(&mut self.row_index, &mut self.row_keys, row));
        self.cols.push(intern(&mut self.col_index, &mut self.col_keys, col));
        self.values.push(value);
        let label = match label {
            Some(name) => {
                self.any_label = true;
                intern(&mut self.label_index, &mut self.label_names, name)
            }
            None => NO_LABEL,
        };
        self.labels.push(label);
        self.at.push(at);
    }

    fn finish(mut self, policy: DuplicatePolicy) -> Result<TripletDataset, DatasetError> {
        if self.values.is_empty() {
            return Err(DatasetError::Empty);
        }
        self.resolve_duplicates(policy)?;
        if !self.any_label {
            self.labels = Vec::new();
        }
        let pattern = IncidencePattern::new(self.row_keys.len(), self.col_keys.len(), self.rows, self.cols)?;
        Ok(TripletDataset {
            pattern,
            values: self.values,
            labels: self.labels,
            row_keys: self.row_keys,
            col_keys: self.col_keys,
            label_names: self.label_names,
            row_index: self.row_index,
            col_index: self.col_index,
            label_index: self.label_index,
        })
    }

    /// Applies the duplicate policy in place. Surviving records keep the
    /// position of their first occurrence, so first-appearance ids are stable.
    fn resolve_duplicates(&mut self, policy: DuplicatePolicy) -> Result<(), DatasetError> {
        let adj = row_adjacency(self.row_keys.len(), &self.rows, &self.cols);
        // (first, later) pairs; `first` is the earliest record of its cell.
        let mut dups: Vec<(u32, u32)> = Vec::new();
        for seg in adj.offsets.windows(2) {
            let cells = &adj.cells[seg[0]..seg[1]];
            let mut k = 0;
            while k < cells.len() {
                let first = cells[k];
                let mut m = k + 1;
                while m < cells.len() && self.cols[cells[m] as usize] == self.cols[first as usize] {
                    dups.push((first, cells[m]));
                    m += 1;
                }
                k = m;
            }
        }
        if dups.is_empty() {
            return Ok(());
        }
        match policy {
            DuplicatePolicy::Error => {
                let &(first, later) = dups.iter().min_by_key(|&&(_, later)| later).expect("non-empty");
                Err(DatasetError::Duplicate {
                    at: self.at[later as usize].to_string(),
                    first_at: self.at[first as usize].to_string(),
                    row: self.row_keys[self.rows[first as usize] as usize].clone(),
                    col: self.col_keys[self.cols[first as usize] as usize].clone(),
                    policy,
                })
            }
            DuplicatePolicy::First | DuplicatePolicy::Mean => {
                let mut drop = vec![false; self.values.len()];
                if policy == DuplicatePolicy::Mean {
                    let mut groups: HashMap<u32, (f64, u32)> = HashMap::new();
                    for &(first, later) in &dups {
                        if self.labels[first as usize] != self.labels[later as usize] {
                            return Err(DatasetError::LabelConflict {
                                at: self.at[later as usize].to_string(),
                                first_at: self.at[first as usize].to_string(),
                                row: self.row_keys[self.rows[first as usize] as usize].clone(),
                                col: self.col_keys[self.cols[first as usize] as usize].clone(),
                            });
                        }
                        let e = groups.entry(first).or_insert((self.values[first as usize], 1));
                        e.0 += self.values[later as usize];
                        e.1 += 1;
                    }
                    for (first, (total, count)) in groups {
                        self.values[first as usize] = total / count as f64;
                    }
                }
                for &(_, later) in &dups {
                    drop[later as usize] = true;
                }
                retain_unmasked(&mut self.rows, &drop);
                retain_unmasked(&mut self.cols, &drop);
                retain_unmasked(&mut self.values, &drop);
                retain_unmasked(&mut self.labels, &drop);
                retain_unmasked(&mut self.at, &drop);
                Ok(())
            }
        }
    }
}

fn retain_unmasked<T>(v: &mut Vec<T>, drop: &[bool]) {
    let mut k = 0;
    v.retain(|_| {
        k += 1;
        !drop[k - 1]
    });
}

/// Parses header-first delimited text with columns `row,col,value[,label]`.
pub fn ingest<R: Read>(source: R, options: &IngestOptions) -> Result<TripletDataset, DatasetError> {
    let mut source = BufReader::with_capacity(1 << 16, source);
    let delimiter = match options.delimiter {
        Some(d) => d,
        None => {
            let head = source.fill_buf()?;
            let first_line = head.split(|&b| b == b'\n').next().unwrap_or(&[]);
            if first_line.contains(&b'\t') {
                b'\t'
            } else {
                b','
            }
        }
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .from_reader(source);

    let mut record = csv::StringRecord::new();
    let csv_err = |e: csv::Error| {
        let at = e
            .position()
            .map(|p| Location::Line(p.line()).to_string())
            .unwrap_or_else(|| "input".into());
        DatasetError::Malformed {
            at,
            message: e.to_string(),
        }
    };
    if !reader.read_record(&mut record).map_err(csv_err)? {
        return Err(DatasetError::Empty);
    }
    let names: Vec<String> = record.iter().map(|f| f.trim().to_ascii_lowercase()).collect();
    let has_label = match names.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["row", "col", "value"] => false,
        ["row", "col", "value", "label"] => true,
        _ => {
            return Err(DatasetError::Header(format!(
                "expected `row,col,value[,label]`, found `{}`",
                names.join(",")
            )))
        }
    };
    let width = if has_label { 4 } else { 3 };

    let mut b = Builder::default();
    while reader.read_record(&mut record).map_err(csv_err)? {
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let at = Location::Line(line);
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != width {
            return Err(DatasetError::Malformed {
                at: at.to_string(),
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        let raw = record[2].trim();
        let value: f64 = raw.parse().map_err(|_| DatasetError::Malformed {
            at: at.to_string(),
            message: format!("value `{raw}` is not a number"),
        })?;
        if !value.is_finite() {
            return Err(DatasetError::NonFinite {
                at: at.to_string(),
                raw: raw.to_owned(),
            });
        }
        let label = if has_label && !record[3].is_empty() {
            Some(&record[3])
        } else {
            None
        };
        b.push(&record[0], &record[1], value, label, at);
    }
    b.finish(options.duplicates)
}

/// Opens and ingests a file.
pub fn ingest_path(path: impl AsRef<std::path::Path>, options: &IngestOptions) -> Result<TripletDataset, DatasetError> {
    let file = std::fs::File::open(path)?;
    ingest(file, options)
}

/// Convenience for the free-function form used throughout the crate.
pub fn incidence_summary(ds: &TripletDataset) -> &IncidenceSummary {
    ds.summary()
}

#[cfg(test)]
mod tests {
    use super::*;

    const D1: &str = "row,col,value\nr1,c1,1\nr1,c2,2\nr2,c1,3\nr2,c2,4\n";

    fn d1() -> TripletDataset {
        ingest(D1.as_bytes(), &IngestOptions::default()).unwrap()
    }

    #[test]
    fn ingests_d1() {
        let ds = d1();
        assert_eq!((ds.len(), ds.n_rows(), ds.n_cols()), (4, 2, 2));
        assert_eq!(ds.values(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(ds.record(2).row_key, "r2");
        assert_eq!(ds.record(2).col_key, "c1");
        assert!(ds.label_ids().is_none());
    }

    #[test]
    fn d1_summary() {
        let s = d1().summary().clone();
        assert_eq!(s.nu_a, 2.0);
        assert_eq!(s.nu_b, 2.0);
        assert_eq!(s.mu_row, vec![1.0, 1.0]);
        assert_eq!(s.mu_col, vec![1.0, 1.0]);
        assert_eq!(s.epsilon_n, 0.5);
    }

    #[test]
    fn full_three_by_four_table() {
        let recs = (0..3).flat_map(|i| (0..4).map(move |j| TripletRecord::new(format!("r{i}"), format!("c{j}"), 0.0)));
        let ds = TripletDataset::from_records(recs, DuplicatePolicy::Error).unwrap();
        let s = ds.summary();
        assert_eq!(s.nu_a, 4.0);
        assert_eq!(s.nu_b, 3.0);
    }

    #[test]
    fn every_column_seen_once_gives_unit_nu_b() {
        let recs = (0..5).map(|j| TripletRecord::new("r", format!("c{j}"), j as f64));
        let ds = TripletDataset::from_records(recs, DuplicatePolicy::Error).unwrap();
        assert_eq!(ds.summary().nu_b, 1.0);
        assert_eq!(ds.summary().nu_a, 5.0);
    }

    #[test]
    fn single_column_gives_nu_b_equal_n() {
        let recs = (0..7).map(|i| TripletRecord::new(format!("r{i}"), "c", 1.0));
        let ds = TripletDataset::from_records(recs, DuplicatePolicy::Error).unwrap();
        assert_eq!(ds.summary().nu_b, 7.0);
        assert_eq!(ds.summary().nu_a, 1.0);
    }

    #[test]
    fn duplicate_cell_is_an_error_by_default() {
        let src = "row,col,value\nr1,c1,1\nr2,c1,3\nr1,c1,5\n";
        let err = ingest(src.as_bytes(), &IngestOptions::default()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, DatasetError::Duplicate { .. }));
        assert!(msg.contains("line 4"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("`error`"), "{msg}");
    }

    #[test]
    fn duplicate_policies_first_and_mean() {
        let src = "row,col,value\nr1,c1,1\nr2,c1,3\nr1,c1,5\nr1,c1,6\n";
        let first = ingest(
            src.as_bytes(),
            &IngestOptions {
                duplicates: DuplicatePolicy::First,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(first.values(), &[1.0, 3.0]);
        let mean = ingest(
            src.as_bytes(),
            &IngestOptions {
                duplicates: DuplicatePolicy::Mean,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(mean.values(), &[4.0, 3.0]);
    }

    #[test]
    fn mean_policy_rejects_conflicting_labels() {
        let src = "row,col,value,label\nr1,c1,1,Tue\nr1,c1,2,Sun\n";
        let err = ingest(
            src.as_bytes(),
            &IngestOptions {
                duplicates: DuplicatePolicy::Mean,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::LabelConflict { .. }));
    }

    #[test]
    fn labels_are_carried() {
        let src = "row,col,value,label\nr1,c1,1,Tue\nr1,c2,2,Sun\nr2,c1,3,Sun\nr2,c2,4,Tue\n";
        let ds = ingest(src.as_bytes(), &IngestOptions::default()).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.label_of(0), Some("Tue"));
        assert_eq!(ds.label_of(1), Some("Sun"));
        assert_eq!(ds.label_names(), &["Tue".to_string(), "Sun".to_string()]);
    }

    #[test]
    fn tab_delimiter_is_detected() {
        let src = "row\tcol\tvalue\na\tb\t1.5\n";
        let ds = ingest(src.as_bytes(), &IngestOptions::default()).unwrap();
        assert_eq!(ds.values(), &[1.5]);
    }

    #[test]
    fn malformed_and_non_finite_lines_report_position() {
        let bad = "row,col,value\nr1,c1,1\nr1,c2\n";
        let msg = ingest(bad.as_bytes(), &IngestOptions::default())
            .unwrap_err()
            .to_string();
        assert!(msg.contains("line 3"), "{msg}");
        let nan = "row,col,value\nr1,c1,NaN\n";
        let err = ingest(nan.as_bytes(), &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, DatasetError::NonFinite { .. }));
        let word = "row,col,value\nr1,c1,abc\n";
        assert!(matches!(
            ingest(word.as_bytes(), &IngestOptions::default()).unwrap_err(),
            DatasetError::Malformed { .. }
        ));
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(matches!(
            ingest("".as_bytes(), &IngestOptions::default()),
            Err(DatasetError::Empty)
        ));
        assert!(matches!(
            ingest("row,col,value\n".as_bytes(), &IngestOptions::default()),
            Err(DatasetError::Empty)
        ));
        assert!(matches!(
            ingest("a,b,c\n1,2,3\n".as_bytes(), &IngestOptions::default()),
            Err(DatasetError::Header(_))
        ));
    }

    #[test]
    fn numeric_keys_are_not_coerced() {
        let src = "row,col,value\n1,x,1\n01,x,2\n";
        let ds = ingest(src.as_bytes(), &IngestOptions::default()).unwrap();
        assert_eq!(ds.n_rows(), 2);
    }

    #[test]
    fn first_appearance_indexing() {
        let src = "row,col,value\nz,q,1\na,q,2\nz,p,3\n";
        let ds = ingest(src.as_bytes(), &IngestOptions::default()).unwrap();
        assert_eq!(ds.row_id("z"), Some(0));
        assert_eq!(ds.row_id("a"), Some(1));
        assert_eq!(ds.col_id("p"), Some(1));
        assert_eq!(ds.pattern().row_cells(0), &[0, 2]);
    }

    #[test]
    fn pattern_rejects_empty_entities_and_repeats() {
        assert!(IncidencePattern::new(2, 1, vec![0], vec![0]).is_err());
        assert!(IncidencePattern::new(1, 1, vec![0, 0], vec![0, 0]).is_err());
        assert!(IncidencePattern::new(1, 2, vec![0, 0], vec![0, 1]).is_ok());
    }

    #[test]
    fn filter_drops_empty_entities() {
        let ds = d1();
        let kept = ds.filter_records(|l| l == 3).unwrap();
        assert_eq!((kept.len(), kept.n_rows(), kept.n_cols()), (1, 1, 1));
        assert_eq!(kept.record(0).row_key, "r2");
    }
}
