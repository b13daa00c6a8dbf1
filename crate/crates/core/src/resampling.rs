//! Naive and pigeonhole bootstrap engines, exhaustive enumeration of the
//! pigeonhole scheme on tiny grids, and replicate-level summaries including
//! two-group contrasts.
//!
//! A pigeonhole resample draws `R` rows and `C` columns independently and
//! uniformly with replacement and keeps every original cell at the
//! intersection. Realization walks the per-row adjacency of each sampled row
//! and fans cells out to every resampled column position that drew their
//! column, so the work is `O(R + C + Σ_i n_{r*_i•} + N*)`.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::dataset::TripletDataset;
use crate::rng::{stream, StreamTag};
use crate::statistics::{grand_mean, GroupIndex, Observations, StatsError};
use crate::summation::{mean_and_variance, NeumaierSum};

pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResampleError {
    #[error("statistic is undefined on the original data: {0}")]
    UndefinedStatistic(#[from] StatsError),
    #[error("the number of replicates must be at least {min}")]
    TooFewReplicates { min: u64 },
    #[error("only {kept} of {requested} replicates were defined; at least 2 are needed")]
    TooFewDefined { kept: u64, requested: u64 },
    #[error("enumeration needs {size} assignments, above the cap of {cap}")]
    EnumerationCap { size: u128, cap: u128 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Naive,
    Pigeonhole,
}

impl std::str::FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(Scheme::Naive),
            "pigeonhole" => Ok(Scheme::Pigeonhole),
            other => Err(format!("unknown scheme `{other}` (expected naive or pigeonhole)")),
        }
    }
}

/// A naive bootstrap sample: `N` record indices drawn with replacement.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveDraw {
    pub sources: Vec<u32>,
}

pub fn naive_resample<R: Rng + ?Sized>(ds: &TripletDataset, rng: &mut R) -> NaiveDraw {
    let n = ds.len() as u32;
    NaiveDraw {
        sources: (0..n).map(|_| rng.random_range(0..n)).collect(),
    }
}

/// One resampled cell: new position `(row, col)` holding original record `source`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RealizedTriplet {
    pub row: u32,
    pub col: u32,
    pub source: u32,
}

/// One pigeonhole bootstrap realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampleDraw {
    /// `r*_i`, the original row placed at new row `i`.
    pub row_assign: Vec<u32>,
    /// `c*_j`, the original column placed at new column `j`.
    pub col_assign: Vec<u32>,
    pub triplets: Vec<RealizedTriplet>,
    /// `N*`.
    pub n_star: u64,
    /// `ñ*_r•`, how often original row `r`'s cells appear in the resample.
    pub n_tilde_row: Vec<u64>,
    /// `ñ*_•c`.
    pub n_tilde_col: Vec<u64>,
}

impl ResampleDraw {
    /// Realizes the resample implied by a pair of assignments.
    pub fn from_assignments(ds: &TripletDataset, row_assign: Vec<u32>, col_assign: Vec<u32>) -> Self {
        let p = ds.pattern();
        let n_cols = p.n_cols();
        // Inverse column assignment as CSR: original column c -> new positions.
        let mut offsets = vec![0usize; n_cols + 1];
        for &c in &col_assign {
            offsets[c as usize + 1] += 1;
        }
        for c in 0..n_cols {
            offsets[c + 1] += offsets[c];
        }
        let mut fill = offsets.clone();
        let mut positions = vec![0u32; col_assign.len()];
        for (j, &c) in col_assign.iter().enumerate() {
            positions[fill[c as usize]] = j as u32;
            fill[c as usize] += 1;
        }

        let mut triplets = Vec::new();
        let mut n_tilde_row = vec![0u64; p.n_rows()];
        let mut n_tilde_col = vec![0u64; n_cols];
        let cols = p.cols();
        for (i, &r) in row_assign.iter().enumerate() {
            for &l in p.row_cells(r as usize) {
                let c = cols[l as usize] as usize;
                let js = &positions[offsets[c]..offsets[c + 1]];
                if js.is_empty() {
                    continue;
                }
                n_tilde_row[r as usize] += js.len() as u64;
                n_tilde_col[c] += js.len() as u64;
                triplets.extend(js.iter().map(|&j| RealizedTriplet {
                    row: i as u32,
                    col: j,
                    source: l,
                }));
            }
        }
        Self {
            row_assign,
            col_assign,
            n_star: triplets.len() as u64,
            triplets,
            n_tilde_row,
            n_tilde_col,
        }
    }

    /// The resampled observations, viewed through the source dataset.
    pub fn view<'a>(&'a self, ds: &'a TripletDataset) -> DrawView<'a> {
        DrawView { ds, draw: self }
    }

    /// `T*`, the total of the resampled values.
    pub fn total(&self, ds: &TripletDataset) -> f64 {
        let v = ds.values();
        self.triplets
            .iter()
            .map(|t| v[t.source as usize])
            .sum::<NeumaierSum>()
            .value()
    }
}

/// Samples rows from `row_rng` and columns from `col_rng`.
pub fn pigeonhole_resample<R1, R2>(ds: &TripletDataset, row_rng: &mut R1, col_rng: &mut R2) -> ResampleDraw
where
    R1: Rng + ?Sized,
    R2: Rng + ?Sized,
{
    let r = ds.n_rows() as u32;
    let c = ds.n_cols() as u32;
    let rows = (0..r).map(|_| row_rng.random_range(0..r)).collect();
    let cols = (0..c).map(|_| col_rng.random_range(0..c)).collect();
    ResampleDraw::from_assignments(ds, rows, cols)
}

/// Replicate `index` of a pigeonhole bootstrap seeded with `seed`.
pub fn pigeonhole_replicate(ds: &TripletDataset, seed: u64, index: u64) -> ResampleDraw {
    let mut rows = stream(seed, index, StreamTag::PigeonholeRows);
    let mut cols = stream(seed, index, StreamTag::PigeonholeCols);
    pigeonhole_resample(ds, &mut rows, &mut cols)
}

/// Replicate `index` of a naive bootstrap seeded with `seed`.
pub fn naive_replicate(ds: &TripletDataset, seed: u64, index: u64) -> NaiveDraw {
    naive_resample(ds, &mut stream(seed, index, StreamTag::NaiveRecords))
}

pub struct DrawView<'a> {
    ds: &'a TripletDataset,
    draw: &'a ResampleDraw,
}

impl Observations for DrawView<'_> {
    fn len(&self) -> usize {
        self.draw.triplets.len()
    }

    fn value(&self, k: usize) -> f64 {
        self.ds.values()[self.draw.triplets[k].source as usize]
    }

    fn label(&self, k: usize) -> Option<u32> {
        self.ds.label(self.draw.triplets[k].source as usize)
    }
}

pub struct NaiveView<'a> {
    ds: &'a TripletDataset,
    draw: &'a NaiveDraw,
}

impl NaiveDraw {
    pub fn view<'a>(&'a self, ds: &'a TripletDataset) -> NaiveView<'a> {
        NaiveView { ds, draw: self }
    }
}

impl Observations for NaiveView<'_> {
    fn len(&self) -> usize {
        self.draw.sources.len()
    }

    fn value(&self, k: usize) -> f64 {
        self.ds.values()[self.draw.sources[k] as usize]
    }

    fn label(&self, k: usize) -> Option<u32> {
        self.ds.label(self.draw.sources[k] as usize)
    }
}

/// Every pigeonhole assignment of a small grid, each with probability
/// `1 / (R^R C^C)`.
pub struct PigeonholeEnumeration<'a> {
    ds: &'a TripletDataset,
    rows: Vec<u32>,
    cols: Vec<u32>,
    remaining: u128,
    size: u128,
}

fn assignment_count(n: usize) -> Option<u128> {
    let n = n as u128;
    let exp = u32::try_from(n).ok()?;
    n.checked_pow(exp)
}

pub fn enumerate_pigeonhole(ds: &TripletDataset, cap: u128) -> Result<PigeonholeEnumeration<'_>, ResampleError> {
    let size = assignment_count(ds.n_rows())
        .and_then(|a| assignment_count(ds.n_cols()).and_then(|b| a.checked_mul(b)))
        .unwrap_or(u128::MAX);
    if size > cap {
        return Err(ResampleError::EnumerationCap { size, cap });
    }
    Ok(PigeonholeEnumeration {
        ds,
        rows: vec![0; ds.n_rows()],
        cols: vec![0; ds.n_cols()],
        remaining: size,
        size,
    })
}

impl PigeonholeEnumeration<'_> {
    pub fn size(&self) -> u128 {
        self.size
    }

    pub fn probability(&self) -> f64 {
        1.0 / self.size as f64
    }
}

/// Advances an odometer; returns false when it wraps to all zeros.
fn advance(digits: &mut [u32], base: u32) -> bool {
    for d in digits.iter_mut() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

impl Iterator for PigeonholeEnumeration<'_> {
    type Item = ResampleDraw;

    fn next(&mut self) -> Option<ResampleDraw> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let draw = ResampleDraw::from_assignments(self.ds, self.rows.clone(), self.cols.clone());
        if !advance(&mut self.cols, self.ds.n_cols() as u32) {
            advance(&mut self.rows, self.ds.n_rows() as u32);
        }
        Some(draw)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = usize::try_from(self.remaining).unwrap_or(usize::MAX);
        (n, Some(n))
    }
}

/// Exact pigeonhole moments obtained by enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnumeratedMoments {
    pub assignments: u128,
    pub mean_total: f64,
    pub mean_n_star: f64,
    pub var_total: f64,
    /// `(1/N²) E[(T* − μ̂ N*)²]`.
    pub delta_variance: f64,
    /// `P(N* = 0)`.
    pub p_empty: f64,
    /// `E[T*/N* | N* > 0]`.
    pub ratio_mean: f64,
    /// `Var(T*/N* | N* > 0)`.
    pub ratio_variance: f64,
}

pub fn enumerated_moments(ds: &TripletDataset, cap: u128) -> Result<EnumeratedMoments, ResampleError> {
    let e = enumerate_pigeonhole(ds, cap)?;
    let size = e.size();
    let t_x = ds.values().iter().copied().sum::<NeumaierSum>().value();
    let n = ds.len() as f64;
    let mu = t_x / n;
    let (mut st, mut sn, mut st2, mut sd2) = (
        NeumaierSum::new(),
        NeumaierSum::new(),
        NeumaierSum::new(),
        NeumaierSum::new(),
    );
    let (mut empty, mut sr, mut sr2) = (0u128, NeumaierSum::new(), NeumaierSum::new());
    for draw in e {
        let t = draw.total(ds);
        let k = draw.n_star as f64;
        st += t;
        sn += k;
        st2 += t * t;
        sd2 += (t - mu * k) * (t - mu * k);
        if draw.n_star == 0 {
            empty += 1;
        } else {
            let r = t / k;
            sr += r;
            sr2 += r * r;
        }
    }
    let m = size as f64;
    let mean_total = st.value() / m;
    let kept = (size - empty) as f64;
    let ratio_mean = sr.value() / kept;
    Ok(EnumeratedMoments {
        assignments: size,
        mean_total,
        mean_n_star: sn.value() / m,
        // Around the known mean T_x to avoid E[T²] − E[T]² cancellation noise.
        var_total: st2.value() / m - mean_total * mean_total,
        delta_variance: sd2.value() / m / (n * n),
        p_empty: empty as f64 / m,
        ratio_mean,
        ratio_variance: sr2.value() / kept - ratio_mean * ratio_mean,
    })
}

/// The statistic computed on each replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    GrandMean,
    GroupMeans(Vec<String>),
}

impl Statistic {
    pub fn component_names(&self) -> Vec<String> {
        match self {
            Statistic::GrandMean => vec!["mean".into()],
            Statistic::GroupMeans(labels) => labels.clone(),
        }
    }
}

enum Evaluator {
    Mean,
    Groups(GroupIndex),
}

impl Evaluator {
    fn new(ds: &TripletDataset, stat: &Statistic) -> Result<Self, ResampleError> {
        Ok(match stat {
            Statistic::GrandMean => Evaluator::Mean,
            Statistic::GroupMeans(labels) => Evaluator::Groups(GroupIndex::new(ds, labels)?),
        })
    }

    fn eval<O: Observations + ?Sized>(&self, obs: &O) -> Option<Vec<f64>> {
        match self {
            Evaluator::Mean => grand_mean(obs).map(|m| vec![m]),
            Evaluator::Groups(g) => g.means(obs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replicate {
    pub index: u64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapRun {
    pub scheme: Scheme,
    pub statistic: Statistic,
    pub b_requested: u64,
    pub seed: u64,
    pub original_value: Vec<f64>,
    /// Defined replicates in index order.
    pub replicates: Vec<Replicate>,
    /// Replicates whose statistic was undefined (`N* = 0` or an empty group).
    pub dropped: u64,
}

impl BootstrapRun {
    /// Replicate values of one statistic component.
    pub fn component(&self, k: usize) -> Vec<f64> {
        self.replicates.iter().map(|r| r.values[k]).collect()
    }

    /// Sample variance (divisor `B − 1`) of one component across replicates.
    pub fn empirical_variance(&self, k: usize) -> f64 {
        mean_and_variance(&self.component(k)).1
    }

    pub fn replicate_mean(&self, k: usize) -> f64 {
        mean_and_variance(&self.component(k)).0
    }

    /// `mean(replicates) − original`.
    pub fn bias(&self, k: usize) -> f64 {
        self.replicate_mean(k) - self.original_value[k]
    }
}

/// Runs `b` independent replicates. Replicate `i` uses streams keyed by
/// `(seed, i)`, so the result does not depend on thread count.
pub fn run_bootstrap(
    ds: &TripletDataset,
    scheme: Scheme,
    statistic: &Statistic,
    b: u64,
    seed: u64,
) -> Result<BootstrapRun, ResampleError> {
    if b == 0 {
        return Err(ResampleError::TooFewReplicates { min: 1 });
    }
    let eval = Evaluator::new(ds, statistic)?;
    let original_value = match statistic {
        Statistic::GrandMean => eval.eval(ds).expect("datasets are non-empty"),
        Statistic::GroupMeans(labels) => crate::statistics::group_ratio_means(ds, labels)?
            .into_iter()
            .map(|g| g.mean)
            .collect(),
    };
    let results: Vec<Option<Vec<f64>>> = (0..b)
        .into_par_iter()
        .map(|i| match scheme {
            Scheme::Naive => {
                let draw = naive_replicate(ds, seed, i);
                eval.eval(&draw.view(ds))
            }
            Scheme::Pigeonhole => {
                let draw = pigeonhole_replicate(ds, seed, i);
                eval.eval(&draw.view(ds))
            }
        })
        .collect();
    let mut replicates = Vec::with_capacity(results.len());
    let mut dropped = 0;
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Some(values) => replicates.push(Replicate {
                index: index as u64,
                values,
            }),
            None => dropped += 1,
        }
    }
    Ok(BootstrapRun {
        scheme,
        statistic: statistic.clone(),
        b_requested: b,
        seed,
        original_value,
        replicates,
        dropped,
    })
}

/// Two-sided tail probability `P(|T_df| ≥ |t|)` of Student's t.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// Replicate-level contrast summary: `t = mean / sd` and its two-sided
/// p-value on `kept − 1` degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DifferenceSummary {
    pub mean: f64,
    pub sd: f64,
    pub t_ratio: f64,
    pub degrees_of_freedom: u64,
    pub p_value: f64,
}

pub fn summarize_differences(diffs: &[f64]) -> Option<DifferenceSummary> {
    if diffs.len() < 2 {
        return None;
    }
    let (mean, var) = mean_and_variance(diffs);
    let sd = var.max(0.0).sqrt();
    let t_ratio = if sd > 0.0 {
        mean / sd
    } else if mean == 0.0 {
        0.0
    } else {
        mean.signum() * f64::INFINITY
    };
    let df = diffs.len() as u64 - 1;
    Some(DifferenceSummary {
        mean,
        sd,
        t_ratio,
        degrees_of_freedom: df,
        p_value: t_two_sided_p(t_ratio, df as f64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastReplicate {
    pub index: u64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastResult {
    pub label_a: String,
    pub label_b: String,
    pub original_a: f64,
    pub original_b: f64,
    /// `mean_a − mean_b` on the original data.
    pub original_diff: f64,
    pub replicates: Vec<ContrastReplicate>,
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub t_ratio: f64,
    pub degrees_of_freedom: u64,
    pub p_value: f64,
    pub b_requested: u64,
    pub dropped: u64,
    pub seed: u64,
}

impl ContrastResult {
    pub fn replicate_diffs(&self) -> Vec<f64> {
        self.replicates.iter().map(|r| r.diff).collect()
    }

    /// Mean replicate difference minus the original difference.
    pub fn bias(&self) -> f64 {
        self.mean_diff - self.original_diff
    }
}

/// Pigeonhole bootstrap of the difference of two label-group ratio means.
pub fn contrast(
    ds: &TripletDataset,
    label_a: &str,
    label_b: &str,
    b: u64,
    seed: u64,
) -> Result<ContrastResult, ResampleError> {
    if b < 2 {
        return Err(ResampleError::TooFewReplicates { min: 2 });
    }
    let stat = Statistic::GroupMeans(vec![label_a.to_owned(), label_b.to_owned()]);
    let run = run_bootstrap(ds, Scheme::Pigeonhole, &stat, b, seed)?;
    let replicates: Vec<ContrastReplicate> = run
        .replicates
        .iter()
        .map(|r| ContrastReplicate {
            index: r.index,
            mean_a: r.values[0],
            mean_b: r.values[1],
            diff: r.values[0] - r.values[1],
        })
        .collect();
    let diffs: Vec<f64> = replicates.iter().map(|r| r.diff).collect();
    let summary = summarize_differences(&diffs).ok_or(ResampleError::TooFewDefined {
        kept: diffs.len() as u64,
        requested: b,
    })?;
    Ok(ContrastResult {
        label_a: label_a.to_owned(),
        label_b: label_b.to_owned(),
        original_a: run.original_value[0],
        original_b: run.original_value[1],
        original_diff: run.original_value[0] - run.original_value[1],
        replicates,
        mean_diff: summary.mean,
        sd_diff: summary.sd,
        t_ratio: summary.t_ratio,
        degrees_of_freedom: summary.degrees_of_freedom,
        p_value: summary.p_value,
        b_requested: b,
        dropped: run.dropped,
        seed,
    })
}
