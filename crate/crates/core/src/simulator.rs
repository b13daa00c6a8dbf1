//! Synthetic incidence patterns and responses from crossed random-effects
//! models, plus Monte Carlo checks of the closed forms.
//!
//! Every generator is a pure function of its spec and seed. Monte Carlo
//! repetitions run in parallel on fixed-size blocks whose partial results are
//! combined in block order, so estimates do not depend on thread count.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rand_distr::{Distribution, Geometric, StandardNormal, Zipf};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, IncidencePattern, TripletDataset};
use crate::rng::{child_seed, stream, StreamRng, StreamTag};
use crate::summation::{mean_and_variance, variance_standard_error, NeumaierSum};
use crate::variance::{
    naive_plugin_variance_of, pigeonhole_plugin_variance_of, EntityVariance, VarianceComponents, VarianceError,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error("infeasible pattern: {0}")]
    Infeasible(String),
    #[error("masking removed every record")]
    AllMasked,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Variance(#[from] VarianceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IncidenceKind {
    Full,
    Bernoulli {
        p: f64,
    },
    ZipfMargins {
        alpha_row: f64,
        alpha_col: f64,
        target_n: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidenceSpec {
    #[serde(flatten)]
    pub kind: IncidenceKind,
    pub rows: usize,
    pub cols: usize,
    #[serde(default)]
    pub seed: u64,
}

impl IncidenceSpec {
    pub fn new(kind: IncidenceKind, rows: usize, cols: usize, seed: u64) -> Self {
        Self { kind, rows, cols, seed }
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(SimError::InvalidSpec("rows and cols must be at least 1".into()));
        }
        if self.rows > u32::MAX as usize || self.cols > u32::MAX as usize {
            return Err(SimError::InvalidSpec("rows and cols must fit in 32 bits".into()));
        }
        match self.kind {
            IncidenceKind::Full => Ok(()),
            IncidenceKind::Bernoulli { p } if p > 0.0 && p <= 1.0 => Ok(()),
            IncidenceKind::Bernoulli { p } => Err(SimError::InvalidSpec(format!("p = {p} is outside (0, 1]"))),
            IncidenceKind::ZipfMargins {
                alpha_row,
                alpha_col,
                target_n,
            } => {
                if !(alpha_row > 0.0 && alpha_col > 0.0 && alpha_row.is_finite() && alpha_col.is_finite()) {
                    return Err(SimError::InvalidSpec("Zipf exponents must be positive".into()));
                }
                if target_n == 0 {
                    return Err(SimError::InvalidSpec("target_n must be at least 1".into()));
                }
                let cells = self.rows as u128 * self.cols as u128;
                if target_n as u128 > cells {
                    return Err(SimError::Infeasible(format!(
                        "target_n = {target_n} exceeds R·C = {cells}"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Drops empty rows and columns, keeping the survivors in index order.
fn truncate(
    n_rows: usize,
    n_cols: usize,
    mut rows: Vec<u32>,
    mut cols: Vec<u32>,
) -> Result<IncidencePattern, SimError> {
    let remap = |ids: &mut [u32], n: usize| {
        let mut present = vec![false; n];
        for &i in ids.iter() {
            present[i as usize] = true;
        }
        let mut next = 0u32;
        let map: Vec<u32> = present
            .iter()
            .map(|&p| {
                let id = next;
                next += p as u32;
                id
            })
            .collect();
        for i in ids.iter_mut() {
            *i = map[*i as usize];
        }
        next as usize
    };
    if rows.is_empty() {
        return Err(SimError::Infeasible("the generated pattern has no cells".into()));
    }
    let r = remap(&mut rows, n_rows);
    let c = remap(&mut cols, n_cols);
    Ok(IncidencePattern::new(r, c, rows, cols)?)
}

/// Generates an observation pattern. Entities that receive no cells are
/// removed, so `R` and `C` of the result may be smaller than requested.
pub fn gen_incidence(spec: &IncidenceSpec) -> Result<IncidencePattern, SimError> {
    spec.validate()?;
    let (r, c) = (spec.rows, spec.cols);
    match spec.kind {
        IncidenceKind::Full => {
            let rows = (0..r as u32).flat_map(|i| std::iter::repeat_n(i, c)).collect();
            let cols = (0..r).flat_map(|_| 0..c as u32).collect();
            truncate(r, c, rows, cols)
        }
        IncidenceKind::Bernoulli { p } => {
            let mut rng = stream(spec.seed, 0, StreamTag::Incidence);
            let skip = Geometric::new(p).expect("p validated");
            let total = r as u64 * c as u64;
            let expected = (total as f64 * p) as usize;
            let mut rows = Vec::with_capacity(expected + expected / 64 + 16);
            let mut cols = Vec::with_capacity(expected + expected / 64 + 16);
            let mut pos = 0u64;
            loop {
                pos = pos.saturating_add(skip.sample(&mut rng));
                if pos >= total {
                    break;
                }
                rows.push((pos / c as u64) as u32);
                cols.push((pos % c as u64) as u32);
                pos += 1;
            }
            truncate(r, c, rows, cols)
        }
        IncidenceKind::ZipfMargins {
            alpha_row,
            alpha_col,
            target_n,
        } => {
            let mut rng = stream(spec.seed, 0, StreamTag::Incidence);
            let zr = Zipf::new(r as f64, alpha_row).expect("validated");
            let zc = Zipf::new(c as f64, alpha_col).expect("validated");
            let target = target_n as usize;
            let budget = 200u64.saturating_mul(target_n).saturating_add(1_000_000);
            let mut seen = HashSet::with_capacity(target);
            let mut rows = Vec::with_capacity(target);
            let mut cols = Vec::with_capacity(target);
            let mut proposals = 0u64;
            while rows.len() < target {
                if proposals == budget {
                    return Err(SimError::Infeasible(format!(
                        "only {} distinct cells after {budget} proposals",
                        rows.len()
                    )));
                }
                proposals += 1;
                let i = (zr.sample(&mut rng) as u32).clamp(1, r as u32) - 1;
                let j = (zc.sample(&mut rng) as u32).clamp(1, c as u32) - 1;
                if seen.insert(i as u64 * c as u64 + j as u64) {
                    rows.push(i);
                    cols.push(j);
                }
            }
            truncate(r, c, rows, cols)
        }
    }
}

/// Regenerates with derived seeds until `ε_N < max_epsilon`. Returns the
/// pattern, the seed that produced it and the number of retries.
pub fn gen_incidence_with_epsilon(
    spec: &IncidenceSpec,
    max_epsilon: f64,
    max_attempts: u64,
) -> Result<(IncidencePattern, u64, u64), SimError> {
    let mut best = f64::INFINITY;
    for attempt in 0..max_attempts.max(1) {
        let seed = if attempt == 0 {
            spec.seed
        } else {
            child_seed(spec.seed, attempt)
        };
        let p = gen_incidence(&IncidenceSpec { seed, ..spec.clone() })?;
        let eps = p.summary().epsilon_n;
        if eps < max_epsilon {
            return Ok((p, seed, attempt));
        }
        best = best.min(eps);
    }
    Err(SimError::Infeasible(format!(
        "no pattern with epsilon_N < {max_epsilon} in {max_attempts} attempts (best {best})"
    )))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectDistribution {
    #[default]
    Gaussian,
    /// Symmetric uniform with the requested variance.
    Uniform,
}

impl EffectDistribution {
    fn draw<R: Rng + ?Sized>(self, variance: f64, rng: &mut R) -> f64 {
        if variance == 0.0 {
            return 0.0;
        }
        match self {
            EffectDistribution::Gaussian => variance.sqrt() * rng.sample::<f64, _>(StandardNormal),
            EffectDistribution::Uniform => (3.0 * variance).sqrt() * rng.random_range(-1.0..1.0),
        }
    }

    /// Largest attainable `|x|` for the given variance.
    fn half_width(self, variance: f64) -> f64 {
        match self {
            EffectDistribution::Gaussian if variance > 0.0 => f64::INFINITY,
            EffectDistribution::Gaussian => 0.0,
            EffectDistribution::Uniform => (3.0 * variance).sqrt(),
        }
    }
}

/// One multiplicative term `λ u_i v_j` with `u_i ~ (0, τ²_U)` and
/// `v_j ~ (0, τ²_V)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterFactor {
    pub singular_value: f64,
    pub tau2_u: f64,
    pub tau2_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResponseModel {
    /// `X = μ + a_i + b_j + ε_ij`.
    Additive,
    /// Additive plus `Σ_ℓ λ_ℓ u_iℓ v_jℓ`.
    OuterProduct { factors: Vec<OuterFactor> },
    /// Additive plus `λ a_i b_j`.
    Tukey { lambda: f64 },
    /// Values restricted to `levels`, with `E(ε | a, b) = 0`.
    DiscreteRatings { levels: Vec<f64> },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelUnit {
    #[default]
    Record,
    Row,
    Column,
}

/// Labels assigned uniformly at random to records, rows or columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub names: Vec<String>,
    #[serde(default)]
    pub unit: LabelUnit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerativeSpec {
    pub model: ResponseModel,
    pub components: VarianceComponents,
    pub distribution: EffectDistribution,
    pub labels: Option<LabelSpec>,
    /// Additive shift applied to every record carrying the label.
    pub label_effects: BTreeMap<String, f64>,
}

impl GenerativeSpec {
    pub fn additive(components: VarianceComponents) -> Self {
        Self {
            model: ResponseModel::Additive,
            components,
            distribution: EffectDistribution::Gaussian,
            labels: None,
            label_effects: BTreeMap::new(),
        }
    }

    pub fn with_model(mut self, model: ResponseModel) -> Self {
        self.model = model;
        self
    }

    pub fn with_distribution(mut self, distribution: EffectDistribution) -> Self {
        self.distribution = distribution;
        self
    }

    pub fn with_labels(mut self, labels: LabelSpec, effects: BTreeMap<String, f64>) -> Self {
        self.labels = Some(labels);
        self.label_effects = effects;
        self
    }

    /// Checks shapes and model constraints against `pattern`.
    pub fn validate(&self, pattern: &IncidencePattern) -> Result<(), SimError> {
        self.components.validate(pattern)?;
        if !self.components.mu.is_finite() {
            return Err(SimError::InvalidSpec("mu must be finite".into()));
        }
        if let Some(labels) = &self.labels {
            if labels.names.is_empty() {
                return Err(SimError::InvalidSpec("label names must not be empty".into()));
            }
        }
        for (name, shift) in &self.label_effects {
            let known = self.labels.as_ref().is_some_and(|l| l.names.contains(name));
            if !known {
                return Err(SimError::InvalidSpec(format!(
                    "label effect for unknown label `{name}`"
                )));
            }
            if !shift.is_finite() {
                return Err(SimError::InvalidSpec(format!(
                    "label effect for `{name}` is not finite"
                )));
            }
        }
        match &self.model {
            ResponseModel::Additive => {}
            ResponseModel::OuterProduct { factors } => {
                let ok = factors.iter().all(|f| {
                    f.singular_value.is_finite()
                        && f.tau2_u >= 0.0
                        && f.tau2_v >= 0.0
                        && f.tau2_u.is_finite()
                        && f.tau2_v.is_finite()
                });
                if !ok {
                    return Err(SimError::InvalidSpec(
                        "outer-product factors need finite λ and τ² ≥ 0".into(),
                    ));
                }
            }
            ResponseModel::Tukey { lambda } if lambda.is_finite() => {}
            ResponseModel::Tukey { .. } => return Err(SimError::InvalidSpec("lambda must be finite".into())),
            ResponseModel::DiscreteRatings { levels } => {
                if levels.len() < 2
                    || levels.windows(2).any(|w| !(w[0] < w[1]))
                    || levels.iter().any(|l| !l.is_finite())
                {
                    return Err(SimError::InvalidSpec(
                        "levels must be at least two strictly increasing finite values".into(),
                    ));
                }
                let reach = self.distribution.half_width(self.components.sigma2_a.min_max().1)
                    + self.distribution.half_width(self.components.sigma2_b.min_max().1);
                let up = self.label_effects.values().fold(0.0f64, |m, &s| m.max(s));
                let down = self.label_effects.values().fold(0.0f64, |m, &s| m.min(s));
                let (lo, hi) = (levels[0], levels[levels.len() - 1]);
                let mu = self.components.mu;
                if mu - reach + down < lo || mu + reach + up > hi {
                    return Err(SimError::InvalidSpec(format!(
                        "discrete ratings need μ + a + b + shift inside [{lo}, {hi}] for every draw; \
                         use uniform effects with small enough variances"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Components of the equivalent additive model, with the non-additive
    /// terms folded into `σ²_E`. `None` for discrete ratings, whose error
    /// variance depends on the realized effects.
    pub fn effective_components(&self, pattern: &IncidencePattern) -> Option<VarianceComponents> {
        let c = &self.components;
        let extra: Box<dyn Fn(usize) -> f64> = match &self.model {
            ResponseModel::Additive => return Some(c.clone()),
            ResponseModel::DiscreteRatings { .. } => return None,
            ResponseModel::OuterProduct { factors } => {
                let s: f64 = factors
                    .iter()
                    .map(|f| f.singular_value.powi(2) * f.tau2_u * f.tau2_v)
                    .sum();
                Box::new(move |_| s)
            }
            ResponseModel::Tukey { lambda } => {
                let l2 = lambda * lambda;
                let (rows, cols) = (pattern.rows(), pattern.cols());
                Box::new(move |l| l2 * c.sigma2_a.get(rows[l] as usize) * c.sigma2_b.get(cols[l] as usize))
            }
        };
        let sigma2_e = if c.sigma2_a.is_homogeneous() && c.sigma2_b.is_homogeneous() && c.sigma2_e.is_homogeneous() {
            EntityVariance::Homogeneous(c.sigma2_e.get(0) + extra(0))
        } else {
            EntityVariance::PerEntity((0..pattern.len()).map(|l| c.sigma2_e.get(l) + extra(l)).collect())
        };
        Some(VarianceComponents { sigma2_e, ..c.clone() })
    }
}

/// One realization of the response model on a fixed pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseDraw {
    pub values: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Composite error `X − μ − a_i − b_j − shift` per cell.
    pub eta: Vec<f64>,
    /// Conditional error variance per cell given the effects (differs from
    /// the requested components only for discrete ratings near the support boundary).
    pub sigma2_e: Vec<f64>,
    /// Label id per cell, when labels are generated.
    pub labels: Option<Vec<u32>>,
}

/// Two-point mixture on `levels` with mean `s` and variance as close to
/// `target` as the support allows. Returns the drawn level and the realized
/// conditional variance.
fn discrete_level<R: Rng + ?Sized>(levels: &[f64], s: f64, target: f64, rng: &mut R) -> (f64, f64) {
    let (lo, hi) = (levels[0], levels[levels.len() - 1]);
    let k = levels.partition_point(|&l| l <= s).clamp(1, levels.len() - 1);
    let (l0, l1) = (levels[k - 1], levels[k]);
    let v_adj = (s - l0) * (l1 - s);
    let v_ext = (s - lo) * (hi - s);
    let w = if v_ext > v_adj {
        ((target - v_adj) / (v_ext - v_adj)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let realized = w * v_ext + (1.0 - w) * v_adj;
    let (x0, x1) = if rng.random::<f64>() < w { (lo, hi) } else { (l0, l1) };
    let value = if x1 > x0 && rng.random::<f64>() < (s - x0) / (x1 - x0) {
        x1
    } else {
        x0
    };
    (value, realized.max(0.0))
}

fn draw_labels<R: Rng + ?Sized>(pattern: &IncidencePattern, spec: &LabelSpec, rng: &mut R) -> Vec<u32> {
    let k = spec.names.len() as u32;
    match spec.unit {
        LabelUnit::Record => (0..pattern.len()).map(|_| rng.random_range(0..k)).collect(),
        LabelUnit::Row => {
            let per: Vec<u32> = (0..pattern.n_rows()).map(|_| rng.random_range(0..k)).collect();
            pattern.rows().iter().map(|&i| per[i as usize]).collect()
        }
        LabelUnit::Column => {
            let per: Vec<u32> = (0..pattern.n_cols()).map(|_| rng.random_range(0..k)).collect();
            pattern.cols().iter().map(|&j| per[j as usize]).collect()
        }
    }
}

/// Draws effects and responses. Labels, when configured, are drawn first.
pub fn draw_response_values<R: Rng + ?Sized>(
    pattern: &IncidencePattern,
    spec: &GenerativeSpec,
    rng: &mut R,
) -> ResponseDraw {
    let c = &spec.components;
    let dist = spec.distribution;
    let labels = spec.labels.as_ref().map(|l| draw_labels(pattern, l, rng));
    let shifts: Vec<f64> = match &spec.labels {
        Some(l) => l
            .names
            .iter()
            .map(|n| spec.label_effects.get(n).copied().unwrap_or(0.0))
            .collect(),
        None => Vec::new(),
    };
    let a: Vec<f64> = (0..pattern.n_rows())
        .map(|i| dist.draw(c.sigma2_a.get(i), rng))
        .collect();
    let b: Vec<f64> = (0..pattern.n_cols())
        .map(|j| dist.draw(c.sigma2_b.get(j), rng))
        .collect();
    let (u, v): (Vec<Vec<f64>>, Vec<Vec<f64>>) = match &spec.model {
        ResponseModel::OuterProduct { factors } => factors
            .iter()
            .map(|f| {
                let u = (0..pattern.n_rows()).map(|_| dist.draw(f.tau2_u, rng)).collect();
                let v = (0..pattern.n_cols()).map(|_| dist.draw(f.tau2_v, rng)).collect();
                (u, v)
            })
            .unzip(),
        _ => (Vec::new(), Vec::new()),
    };
    let n = pattern.len();
    let mut values = Vec::with_capacity(n);
    let mut eta = Vec::with_capacity(n);
    let mut sigma2_e = Vec::with_capacity(n);
    for (l, (&i, &j)) in pattern.rows().iter().zip(pattern.cols()).enumerate() {
        let (i, j) = (i as usize, j as usize);
        let shift = labels.as_ref().map_or(0.0, |ids| shifts[ids[l] as usize]);
        let base = c.mu + a[i] + b[j] + shift;
        let target = c.sigma2_e.get(l);
        let (x, e, s2) = match &spec.model {
            ResponseModel::Additive => {
                let e = dist.draw(target, rng);
                (base + e, e, target)
            }
            ResponseModel::OuterProduct { factors } => {
                let mut e = dist.draw(target, rng);
                for (k, f) in factors.iter().enumerate() {
                    e += f.singular_value * u[k][i] * v[k][j];
                }
                (base + e, e, target)
            }
            ResponseModel::Tukey { lambda } => {
                let e = lambda * a[i] * b[j] + dist.draw(target, rng);
                (base + e, e, target)
            }
            ResponseModel::DiscreteRatings { levels } => {
                let (x, s2) = discrete_level(levels, base, target, rng);
                (x, x - base, s2)
            }
        };
        values.push(x);
        eta.push(e);
        sigma2_e.push(s2);
    }
    ResponseDraw {
        values,
        a,
        b,
        eta,
        sigma2_e,
        labels,
    }
}

/// One realization as a dataset with generated keys `r1..`, `c1..`.
pub fn draw_responses<R: Rng + ?Sized>(
    pattern: &IncidencePattern,
    spec: &GenerativeSpec,
    rng: &mut R,
) -> Result<TripletDataset, SimError> {
    spec.validate(pattern)?;
    let draw = draw_response_values(pattern, spec, rng);
    let labels = match (draw.labels, &spec.labels) {
        (Some(ids), Some(l)) => Some((ids, l.names.clone())),
        _ => None,
    };
    Ok(TripletDataset::from_pattern(pattern.clone(), draw.values, labels)?)
}

/// Keeps each record independently with probability `keep_prob`.
pub fn mar_mask<R: Rng + ?Sized>(ds: &TripletDataset, keep_prob: f64, rng: &mut R) -> Result<TripletDataset, SimError> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(SimError::InvalidSpec(format!(
            "keep_prob = {keep_prob} is outside (0, 1]"
        )));
    }
    let keep: Vec<bool> = (0..ds.len())
        .map(|_| keep_prob == 1.0 || rng.random::<f64>() < keep_prob)
        .collect();
    if !keep.iter().any(|&k| k) {
        return Err(SimError::AllMasked);
    }
    Ok(ds.filter_records(|l| keep[l])?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McTarget {
    /// Mean of `s²/N` across draws.
    NaivePluginVariance,
    /// Mean of the delta-method pigeonhole variance across draws.
    PigeonholePluginVariance,
    /// Variance of the grand mean across draws.
    GrandMeanVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McEstimate {
    pub target: McTarget,
    pub draws: u64,
    pub estimate: f64,
    pub standard_error: f64,
    /// Components whose closed forms the estimate should match: the effective
    /// components when known, otherwise the generative components with `σ²_E` replaced by the
    /// per-cell average of the realized conditional error variance.
    pub oracle_components: VarianceComponents,
}

const MC_BLOCK: u64 = 1024;

/// Monte Carlo mean (or variance, for the grand mean) of `target` over `m`
/// independent response draws on a fixed pattern.
pub fn monte_carlo_expectation(
    pattern: &IncidencePattern,
    spec: &GenerativeSpec,
    target: McTarget,
    m: u64,
    seed: u64,
) -> Result<McEstimate, SimError> {
    if m < 2 {
        return Err(SimError::InvalidSpec("at least 2 Monte Carlo draws are needed".into()));
    }
    spec.validate(pattern)?;
    let effective = spec.effective_components(pattern);
    let track_e = effective.is_none();
    let blocks = m.div_ceil(MC_BLOCK);
    let parts: Vec<(Vec<f64>, Vec<NeumaierSum>)> = (0..blocks)
        .into_par_iter()
        .map(|blk| {
            let lo = blk * MC_BLOCK;
            let hi = (lo + MC_BLOCK).min(m);
            let mut out = Vec::with_capacity((hi - lo) as usize);
            let mut e_sum = if track_e {
                vec![NeumaierSum::new(); pattern.len()]
            } else {
                Vec::new()
            };
            for k in lo..hi {
                let mut rng: StreamRng = stream(seed, k, StreamTag::Responses);
                let d = draw_response_values(pattern, spec, &mut rng);
                out.push(match target {
                    McTarget::NaivePluginVariance => naive_plugin_variance_of(&d.values),
                    McTarget::PigeonholePluginVariance => pigeonhole_plugin_variance_of(pattern, &d.values),
                    McTarget::GrandMeanVariance => {
                        d.values.iter().copied().sum::<NeumaierSum>().value() / d.values.len() as f64
                    }
                });
                if track_e {
                    for (acc, &s) in e_sum.iter_mut().zip(&d.sigma2_e) {
                        *acc += s;
                    }
                }
            }
            (out, e_sum)
        })
        .collect();
    let mut samples = Vec::with_capacity(m as usize);
    let mut e_total = if track_e {
        vec![NeumaierSum::new(); pattern.len()]
    } else {
        Vec::new()
    };
    for (out, e_sum) in parts {
        samples.extend(out);
        for (acc, s) in e_total.iter_mut().zip(e_sum) {
            *acc += s.value();
        }
    }
    let (mean, var) = mean_and_variance(&samples);
    let (estimate, standard_error) = match target {
        McTarget::GrandMeanVariance => (var, variance_standard_error(&samples)),
        _ => (mean, (var / m as f64).sqrt()),
    };
    let oracle_components = effective.unwrap_or_else(|| VarianceComponents {
        sigma2_e: EntityVariance::PerEntity(e_total.iter().map(|s| s.value() / m as f64).collect()),
        ..spec.components.clone()
    });
    Ok(McEstimate {
        target,
        draws: m,
        estimate,
        standard_error,
        oracle_components,
    })
}

/// Joint draws of a MAR-masked pattern and responses. Returns the variance
/// of the grand mean across draws, its standard error, and the average of
/// the conditional variance `V_RE` over the realized patterns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnconditionalCheck {
    pub variance: f64,
    pub standard_error: f64,
    pub mean_conditional_variance: f64,
}

/// Requires homogeneous components so they stay meaningful on every masked
/// pattern.
pub fn mar_unconditional_check(
    complete: &IncidencePattern,
    keep_prob: f64,
    spec: &GenerativeSpec,
    m: u64,
    seed: u64,
) -> Result<UnconditionalCheck, SimError> {
    if !spec.components.is_homogeneous() {
        return Err(SimError::InvalidSpec(
            "masked checks need homogeneous components".into(),
        ));
    }
    if m < 4 {
        return Err(SimError::InvalidSpec("at least 4 draws are needed".into()));
    }
    let base = TripletDataset::from_pattern(complete.clone(), vec![0.0; complete.len()], None)?;
    let results: Vec<Result<(f64, f64), SimError>> = (0..m)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, k, StreamTag::Mask);
            let masked = mar_mask(&base, keep_prob, &mut rng)?;
            let p = masked.pattern();
            let mut rng = stream(seed, k, StreamTag::Responses);
            let d = draw_response_values(p, spec, &mut rng);
            let mean = d.values.iter().copied().sum::<NeumaierSum>().value() / d.values.len() as f64;
            Ok((mean, crate::variance::v_re(p, &spec.components)?))
        })
        .collect();
    let mut means = Vec::with_capacity(m as usize);
    let mut cond = NeumaierSum::new();
    for r in results {
        let (mean, v) = r?;
        means.push(mean);
        cond += v;
    }
    Ok(UnconditionalCheck {
        variance: mean_and_variance(&means).1,
        standard_error: variance_standard_error(&means),
        mean_conditional_variance: cond.value() / m as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::variance::{e_re_naive_variance, e_re_pigeonhole_variance, v_re, PigeonholeMode};

    fn full(r: usize, c: usize) -> IncidencePattern {
        gen_incidence(&IncidenceSpec::new(IncidenceKind::Full, r, c, 0)).unwrap()
    }

    #[test]
    fn full_pattern_counts() {
        let p = full(3, 4);
        assert_eq!(p.len(), 12);
        assert_eq!(p.summary().nu_a, 4.0);
        assert_eq!(p.summary().nu_b, 3.0);
    }

    #[test]
    fn bernoulli_one_is_full() {
        let b = gen_incidence(&IncidenceSpec::new(IncidenceKind::Bernoulli { p: 1.0 }, 3, 4, 9)).unwrap();
        assert_eq!(b, full(3, 4));
    }

    #[test]
    fn bernoulli_density_and_truncation() {
        let spec = IncidenceSpec::new(IncidenceKind::Bernoulli { p: 0.01 }, 1000, 1000, 5);
        let p = gen_incidence(&spec).unwrap();
        let n = p.len() as f64;
        // Binomial(10⁶, 0.01): sd ≈ 99.5.
        assert!((n - 10_000.0).abs() < 400.0, "N = {n}");
        assert!(p.summary().n_row.iter().all(|&k| k > 0));
        assert!(p.summary().n_col.iter().all(|&k| k > 0));
        assert_eq!(gen_incidence(&spec).unwrap(), p);
    }

    #[test]
    fn zipf_hits_target_and_rejects_infeasible() {
        let kind = IncidenceKind::ZipfMargins {
            alpha_row: 1.1,
            alpha_col: 1.1,
            target_n: 10_000,
        };
        let p = gen_incidence(&IncidenceSpec::new(kind, 2000, 500, 1)).unwrap();
        assert_eq!(p.len(), 10_000);
        let bad = IncidenceKind::ZipfMargins {
            alpha_row: 1.0,
            alpha_col: 1.0,
            target_n: 13,
        };
        assert!(matches!(
            gen_incidence(&IncidenceSpec::new(bad, 3, 4, 1)),
            Err(SimError::Infeasible(_))
        ));
    }

    #[test]
    fn zero_variances_give_constant_mu() {
        let p = full(3, 4);
        let spec = GenerativeSpec::additive(VarianceComponents::homogeneous(0.0, 0.0, 0.0, 3.5));
        let ds = draw_responses(&p, &spec, &mut stream(1, 0, StreamTag::Responses)).unwrap();
        assert!(ds.values().iter().all(|&x| x == 3.5));
    }

    #[test]
    fn responses_are_deterministic() {
        let p = full(3, 4);
        let spec = GenerativeSpec::additive(VarianceComponents::homogeneous(1.0, 2.0, 0.5, 0.0));
        let a = draw_responses(&p, &spec, &mut stream(7, 3, StreamTag::Responses)).unwrap();
        let b = draw_responses(&p, &spec, &mut stream(7, 3, StreamTag::Responses)).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn discrete_ratings_stay_on_levels() {
        let p = full(5, 6);
        let levels = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let spec = GenerativeSpec::additive(VarianceComponents::homogeneous(0.3, 0.3, 0.8, 3.0))
            .with_model(ResponseModel::DiscreteRatings { levels: levels.clone() })
            .with_distribution(EffectDistribution::Uniform);
        let d = draw_response_values(&p, &spec, &mut stream(2, 0, StreamTag::Responses));
        assert!(d.values.iter().all(|x| levels.contains(x)));
        let gauss = spec.clone().with_distribution(EffectDistribution::Gaussian);
        assert!(matches!(gauss.validate(&p), Err(SimError::InvalidSpec(_))));
    }

    #[test]
    fn discrete_level_mixture_moments() {
        let levels = [1.0, 2.0, 3.0, 4.0, 5.0];
        for (s, target) in [(2.3, 0.5), (2.3, 0.1), (4.9, 2.0), (3.0, 1.0)] {
            let v_adj = {
                let k = levels.partition_point(|&l| l <= s).clamp(1, 4);
                (s - levels[k - 1]) * (levels[k] - s)
            };
            let v_ext = (s - 1.0) * (5.0 - s);
            let mut rng = stream(3, 0, StreamTag::Responses);
            let xs: Vec<f64> = (0..200_000)
                .map(|_| discrete_level(&levels, s, target, &mut rng).0)
                .collect();
            let (_, realized) = discrete_level(&levels, s, target, &mut rng);
            assert!((realized - target.clamp(v_adj, v_ext)).abs() < 1e-12);
            let (m, v) = mean_and_variance(&xs);
            let se = (v / xs.len() as f64).sqrt();
            assert!((m - s).abs() < 4.0 * se, "s = {s}: mean {m}");
            assert!((v - realized).abs() < 4.0 * variance_standard_error(&xs));
        }
    }

    #[test]
    fn effective_components_fold_in_interactions() {
        let p = full(2, 2);
        let comp = VarianceComponents::homogeneous(2.0, 3.0, 1.0, 0.0);
        let outer = GenerativeSpec::additive(comp.clone()).with_model(ResponseModel::OuterProduct {
            factors: vec![
                OuterFactor {
                    singular_value: 2.0,
                    tau2_u: 0.5,
                    tau2_v: 1.0,
                },
                OuterFactor {
                    singular_value: 1.0,
                    tau2_u: 1.0,
                    tau2_v: 1.0,
                },
            ],
        });
        assert_eq!(
            outer.effective_components(&p).unwrap().sigma2_e,
            EntityVariance::Homogeneous(4.0)
        );
        let tukey = GenerativeSpec::additive(comp).with_model(ResponseModel::Tukey { lambda: 0.5 });
        assert_eq!(
            tukey.effective_components(&p).unwrap().sigma2_e,
            EntityVariance::Homogeneous(2.5)
        );
    }

    #[test]
    fn mar_mask_keep_all_is_identity() {
        let p = full(3, 4);
        let spec = GenerativeSpec::additive(VarianceComponents::homogeneous(1.0, 1.0, 1.0, 0.0));
        let ds = draw_responses(&p, &spec, &mut stream(1, 0, StreamTag::Responses)).unwrap();
        let kept = mar_mask(&ds, 1.0, &mut stream(1, 0, StreamTag::Mask)).unwrap();
        assert_eq!(kept.values(), ds.values());
        assert_eq!(kept.pattern(), ds.pattern());
    }

    #[test]
    fn mar_mask_retains_binomial_share() {
        let p = full(40, 50);
        let ds = TripletDataset::from_pattern(p, vec![0.0; 2000], None).unwrap();
        let counts: Vec<f64> = (0..200)
            .map(|k| mar_mask(&ds, 0.3, &mut stream(4, k, StreamTag::Mask)).unwrap().len() as f64)
            .collect();
        let (m, _) = mean_and_variance(&counts);
        let se = (2000.0f64 * 0.3 * 0.7 / 200.0).sqrt();
        assert!((m - 600.0).abs() < 4.0 * se, "mean retained {m}");
    }

    #[test]
    fn monte_carlo_d1_matches_closed_forms() {
        let p = full(2, 2);
        let spec = GenerativeSpec::additive(VarianceComponents::homogeneous(1.0, 1.0, 1.0, 0.0));
        let comp = &spec.components;
        let checks = [
            (McTarget::GrandMeanVariance, v_re(&p, comp).unwrap()),
            (McTarget::NaivePluginVariance, e_re_naive_variance(&p, comp).unwrap()),
            (
                McTarget::PigeonholePluginVariance,
                e_re_pigeonhole_variance(&p, comp, PigeonholeMode::Exact).unwrap(),
            ),
        ];
        for (target, oracle) in checks {
            let mc = monte_carlo_expectation(&p, &spec, target, 20_000, 11).unwrap();
            assert!(
                (mc.estimate - oracle).abs() < 4.0 * mc.standard_error,
                "{target:?}: {} vs {oracle} (se {})",
                mc.estimate,
                mc.standard_error
            );
        }
    }
}
