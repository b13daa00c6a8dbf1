//! Linear statistics: totals, grand mean, row/column means and label-group
//! ratio means.
//!
//! The mean and group-mean routines are written against [`Observations`], so
//! the same code computes a statistic on the source data and on a bootstrap
//! resample.

use serde::Serialize;
use thiserror::Error;

use crate::dataset::TripletDataset;
use crate::summation::NeumaierSum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("group `{0}` has no observations")]
    EmptyGroup(String),
    #[error("dataset carries no labels")]
    NoLabels,
}

/// An indexed sequence of observed values with optional label ids.
pub trait Observations {
    fn len(&self) -> usize;
    fn value(&self, k: usize) -> f64;
    /// Label id of observation `k` in the source dataset's label dictionary.
    fn label(&self, k: usize) -> Option<u32>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Observations for TripletDataset {
    fn len(&self) -> usize {
        TripletDataset::len(self)
    }

    fn value(&self, k: usize) -> f64 {
        self.values()[k]
    }

    fn label(&self, k: usize) -> Option<u32> {
        self.label_ids().map(|ids| ids[k]).filter(|&id| id != u32::MAX)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TotalsSummary {
    pub t_x: f64,
    pub t_row: Vec<f64>,
    pub t_col: Vec<f64>,
}

pub fn totals(ds: &TripletDataset) -> TotalsSummary {
    let p = ds.pattern();
    let mut t = NeumaierSum::new();
    let mut rows = vec![NeumaierSum::new(); ds.n_rows()];
    let mut cols = vec![NeumaierSum::new(); ds.n_cols()];
    for ((&x, &r), &c) in ds.values().iter().zip(p.rows()).zip(p.cols()) {
        t += x;
        rows[r as usize] += x;
        cols[c as usize] += x;
    }
    TotalsSummary {
        t_x: t.value(),
        t_row: rows.iter().map(NeumaierSum::value).collect(),
        t_col: cols.iter().map(NeumaierSum::value).collect(),
    }
}

/// `(1/N) Σ X`, or `None` for an empty sample.
pub fn grand_mean<O: Observations + ?Sized>(obs: &O) -> Option<f64> {
    let n = obs.len();
    if n == 0 {
        return None;
    }
    let mut s = NeumaierSum::new();
    for k in 0..n {
        s += obs.value(k);
    }
    Some(s.value() / n as f64)
}

/// Per-row means `X̄_i•` and per-column means `X̄_•j`.
pub fn row_col_means(ds: &TripletDataset) -> (Vec<f64>, Vec<f64>) {
    let t = totals(ds);
    let s = ds.summary();
    let rows = t.t_row.iter().zip(&s.n_row).map(|(&x, &n)| x / n as f64).collect();
    let cols = t.t_col.iter().zip(&s.n_col).map(|(&x, &n)| x / n as f64).collect();
    (rows, cols)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupMean {
    pub label: String,
    pub count: u64,
    pub mean: f64,
}

/// Requested labels resolved against a dataset's label dictionary.
#[derive(Debug, Clone)]
pub struct GroupIndex {
    names: Vec<String>,
    /// Group slot for each label id of the dataset, `usize::MAX` if unrequested.
    slot_of_label: Vec<usize>,
    /// Label id per group slot, `None` if the label never occurs.
    ids: Vec<Option<u32>>,
}

/// Count and total of one group.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroupTotals {
    pub count: u64,
    pub total: NeumaierSum,
}

impl GroupTotals {
    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.total.value() / self.count as f64)
    }
}

impl GroupIndex {
    /// Resolves `labels`. Unknown labels are kept and simply never match; use
    /// [`group_ratio_means`] for the checked form.
    pub fn new<S: AsRef<str>>(ds: &TripletDataset, labels: &[S]) -> Result<Self, StatsError> {
        if ds.label_ids().is_none() {
            return Err(StatsError::NoLabels);
        }
        let mut slot_of_label = vec![usize::MAX; ds.label_names().len()];
        let mut ids = Vec::with_capacity(labels.len());
        for (slot, name) in labels.iter().enumerate() {
            let id = ds.label_id(name.as_ref());
            if let Some(id) = id {
                // Repeated names share the first slot's totals via copy at the end.
                if slot_of_label[id as usize] == usize::MAX {
                    slot_of_label[id as usize] = slot;
                }
            }
            ids.push(id);
        }
        Ok(Self {
            names: labels.iter().map(|s| s.as_ref().to_owned()).collect(),
            slot_of_label,
            ids,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// One pass over `obs`, accumulating every requested group.
    pub fn accumulate<O: Observations + ?Sized>(&self, obs: &O) -> Vec<GroupTotals> {
        let mut acc = vec![GroupTotals::default(); self.names.len()];
        for k in 0..obs.len() {
            if let Some(id) = obs.label(k) {
                let slot = self.slot_of_label[id as usize];
                if slot != usize::MAX {
                    acc[slot].count += 1;
                    acc[slot].total += obs.value(k);
                }
            }
        }
        for (slot, id) in self.ids.iter().enumerate() {
            if let Some(id) = id {
                let first = self.slot_of_label[*id as usize];
                if first != slot {
                    acc[slot] = acc[first];
                }
            }
        }
        acc
    }

    /// Group means on `obs`, `None` for any empty group.
    pub fn means<O: Observations + ?Sized>(&self, obs: &O) -> Option<Vec<f64>> {
        self.accumulate(obs).iter().map(GroupTotals::mean).collect()
    }
}

/// Ratio estimate `Σ Z D X / Σ Z D` for each requested label.
pub fn group_ratio_means<S: AsRef<str>>(ds: &TripletDataset, labels: &[S]) -> Result<Vec<GroupMean>, StatsError> {
    let index = GroupIndex::new(ds, labels)?;
    index
        .accumulate(ds)
        .iter()
        .zip(index.names())
        .map(|(g, name)| match g.mean() {
            Some(mean) => Ok(GroupMean {
                label: name.clone(),
                count: g.count,
                mean,
            }),
            None => Err(StatsError::EmptyGroup(name.clone())),
        })
        .collect()
}
