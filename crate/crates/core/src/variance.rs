//! Closed-form variances of the grand mean.
//!
//! Three families live here:
//!
//! * the random-effects variance `V_RE(μ̂)` of the mean for a fixed pattern
//!   and given variance components;
//! * plug-in bootstrap variances computed from the data alone (naive `s²/N`,
//!   the exact pigeonhole variance of the resampled total, and the
//!   delta-method pigeonhole variance of the resampled mean);
//! * the expectations of those plug-in variances under the random-effects
//!   model, with the approximations and consistency diagnostics built on them.
//!
//! Cell-level quantities (`σ²_E` in per-cell form, `λ^E`) are indexed by cell
//! in record order.

use serde::Serialize;
use thiserror::Error;

use crate::dataset::{IncidencePattern, IncidenceSummary, TripletDataset};
use crate::statistics::totals;
use crate::summation::NeumaierSum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VarianceError {
    #[error("{component}: expected {expected} entries, found {found}")]
    Shape {
        component: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{component}: variances must be finite and non-negative")]
    Negative { component: &'static str },
    #[error("invalid bounds: {0}")]
    Bounds(String),
}

/// One variance component: a single value for every entity, or one per entity.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum EntityVariance {
    Homogeneous(f64),
    PerEntity(Vec<f64>),
}

impl EntityVariance {
    #[inline]
    pub fn get(&self, k: usize) -> f64 {
        match self {
            EntityVariance::Homogeneous(v) => *v,
            EntityVariance::PerEntity(v) => v[k],
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        matches!(self, EntityVariance::Homogeneous(_))
    }

    pub fn min_max(&self) -> (f64, f64) {
        match self {
            EntityVariance::Homogeneous(v) => (*v, *v),
            EntityVariance::PerEntity(v) => v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            }),
        }
    }

    fn check(&self, component: &'static str, expected: usize) -> Result<(), VarianceError> {
        let valid = |x: f64| x.is_finite() && x >= 0.0;
        match self {
            EntityVariance::Homogeneous(v) if !valid(*v) => Err(VarianceError::Negative { component }),
            EntityVariance::Homogeneous(_) => Ok(()),
            EntityVariance::PerEntity(v) if v.len() != expected => Err(VarianceError::Shape {
                component,
                expected,
                found: v.len(),
            }),
            EntityVariance::PerEntity(v) if !v.iter().all(|&x| valid(x)) => Err(VarianceError::Negative { component }),
            EntityVariance::PerEntity(_) => Ok(()),
        }
    }

    fn scaled(&self, c: f64) -> Self {
        match self {
            EntityVariance::Homogeneous(v) => EntityVariance::Homogeneous(v * c),
            EntityVariance::PerEntity(v) => EntityVariance::PerEntity(v.iter().map(|x| x * c).collect()),
        }
    }
}

/// Variance components of the crossed random-effects model
/// `X_ij = μ + a_i + b_j + ε_ij`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceComponents {
    /// `σ²_A(i)` per row.
    pub sigma2_a: EntityVariance,
    /// `σ²_B(j)` per column.
    pub sigma2_b: EntityVariance,
    /// `σ²_E(i,j)` per observed cell, in record order.
    pub sigma2_e: EntityVariance,
    pub mu: f64,
}

impl VarianceComponents {
    pub fn homogeneous(sigma2_a: f64, sigma2_b: f64, sigma2_e: f64, mu: f64) -> Self {
        Self {
            sigma2_a: EntityVariance::Homogeneous(sigma2_a),
            sigma2_b: EntityVariance::Homogeneous(sigma2_b),
            sigma2_e: EntityVariance::Homogeneous(sigma2_e),
            mu,
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        self.sigma2_a.is_homogeneous() && self.sigma2_b.is_homogeneous() && self.sigma2_e.is_homogeneous()
    }

    /// Checks shapes against `R`, `C` and `N`, and that all variances are valid.
    pub fn validate(&self, pattern: &IncidencePattern) -> Result<(), VarianceError> {
        self.sigma2_a.check("sigma2_a", pattern.n_rows())?;
        self.sigma2_b.check("sigma2_b", pattern.n_cols())?;
        self.sigma2_e.check("sigma2_e", pattern.len())?;
        Ok(())
    }

    /// All three components multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            sigma2_a: self.sigma2_a.scaled(c),
            sigma2_b: self.sigma2_b.scaled(c),
            sigma2_e: self.sigma2_e.scaled(c),
            mu: self.mu,
        }
    }
}

/// The three weighted sums every closed form is built from:
/// `Σ_i σ²_A(i) w_a(i)`, `Σ_j σ²_B(j) w_b(j)` and `Σ_cells σ²_E(l) w_e(l)`.
fn weighted_components(
    pattern: &IncidencePattern,
    comp: &VarianceComponents,
    w_a: impl Fn(usize) -> f64,
    w_b: impl Fn(usize) -> f64,
    w_e: impl Fn(usize) -> f64,
) -> Result<[f64; 3], VarianceError> {
    comp.validate(pattern)?;
    let mut a = NeumaierSum::new();
    for i in 0..pattern.n_rows() {
        a += comp.sigma2_a.get(i) * w_a(i);
    }
    let mut b = NeumaierSum::new();
    for j in 0..pattern.n_cols() {
        b += comp.sigma2_b.get(j) * w_b(j);
    }
    let mut e = NeumaierSum::new();
    for l in 0..pattern.len() {
        e += comp.sigma2_e.get(l) * w_e(l);
    }
    Ok([a.value(), b.value(), e.value()])
}

fn n2(s: &IncidenceSummary) -> f64 {
    let n = s.n as f64;
    n * n
}

/// `V_RE(μ̂) = (1/N²)[Σ n_i•² σ²_A(i) + Σ n_•j² σ²_B(j) + Σ Z_ij σ²_E(i,j)]`.
pub fn v_re(pattern: &IncidencePattern, comp: &VarianceComponents) -> Result<f64, VarianceError> {
    let s = pattern.summary();
    let sq = |k: u64| (k as f64) * (k as f64);
    let [a, b, e] = weighted_components(pattern, comp, |i| sq(s.n_row[i]), |j| sq(s.n_col[j]), |_| 1.0)?;
    Ok((a + b + e) / n2(s))
}

/// Naive bootstrap variance of the resampled mean, `s²/N` with `s²` using
/// divisor `N`.
pub fn naive_plugin_variance(ds: &TripletDataset) -> f64 {
    naive_plugin_variance_of(ds.values())
}

/// [`naive_plugin_variance`] on a bare value vector.
pub fn naive_plugin_variance_of(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().copied().sum::<NeumaierSum>().value() / n;
    let mut ss = NeumaierSum::new();
    for &x in values {
        ss += (x - mean) * (x - mean);
    }
    ss.value() / (n * n)
}

/// Expectation of the naive bootstrap variance under the random-effects model:
/// `(1/N²)[Σ σ²_A(i) n_i•(1 − n_i•/N) + Σ σ²_B(j) n_•j(1 − n_•j/N) + (1 − 1/N) Σ σ²_E]`.
///
/// The `1 − 1/N` on the error term comes from the excluded `ℓ = ℓ'` pairs in
/// the pairwise expansion of `s²`; dropping it overstates the error share by
/// a factor `N/(N − 1)`.
pub fn e_re_naive_variance(pattern: &IncidencePattern, comp: &VarianceComponents) -> Result<f64, VarianceError> {
    let s = pattern.summary();
    let n = s.n as f64;
    let w = |k: u64| {
        let k = k as f64;
        k * (1.0 - k / n)
    };
    let [a, b, e] = weighted_components(pattern, comp, |i| w(s.n_row[i]), |j| w(s.n_col[j]), |_| 1.0 - 1.0 / n)?;
    Ok((a + b + e) / n2(s))
}

/// Exact pigeonhole-bootstrap variance of the resampled total `T*`.
pub fn v_pb_total(ds: &TripletDataset) -> f64 {
    let r = ds.n_rows() as f64;
    let c = ds.n_cols() as f64;
    let t = totals(ds);
    let sum_sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<NeumaierSum>().value();
    let mut acc = NeumaierSum::new();
    acc += (1.0 / (r * c) - 1.0 / r - 1.0 / c) * t.t_x * t.t_x;
    acc += (1.0 - 1.0 / c) * sum_sq(&t.t_row);
    acc += (1.0 - 1.0 / r) * sum_sq(&t.t_col);
    acc += sum_sq(ds.values());
    acc.value()
}

/// Delta-method pigeonhole variance of the resampled mean `T*/N*`:
/// `(1/N²) E[(T* − μ̂ N*)²]` in closed form.
pub fn pigeonhole_plugin_variance(ds: &TripletDataset) -> f64 {
    pigeonhole_plugin_variance_of(ds.pattern(), ds.values())
}

/// [`pigeonhole_plugin_variance`] for `values` laid out in the record order of
/// `pattern`.
pub fn pigeonhole_plugin_variance_of(pattern: &IncidencePattern, values: &[f64]) -> f64 {
    assert_eq!(values.len(), pattern.len(), "one value per cell");
    let n = values.len() as f64;
    let mean = values.iter().copied().sum::<NeumaierSum>().value() / n;
    let r = pattern.n_rows() as f64;
    let c = pattern.n_cols() as f64;
    // Per-entity sums of deviations, Σ_j Z_ij (X_ij − μ̂) = n_i• (X̄_i• − μ̂).
    let mut row_dev = vec![NeumaierSum::new(); pattern.n_rows()];
    let mut col_dev = vec![NeumaierSum::new(); pattern.n_cols()];
    let mut cell = NeumaierSum::new();
    for ((&x, &i), &j) in values.iter().zip(pattern.rows()).zip(pattern.cols()) {
        let d = x - mean;
        row_dev[i as usize] += d;
        col_dev[j as usize] += d;
        cell += d * d;
    }
    let sum_sq = |v: &[NeumaierSum]| v.iter().map(|s| s.value() * s.value()).sum::<NeumaierSum>().value();
    ((1.0 - 1.0 / c) * sum_sq(&row_dev) + (1.0 - 1.0 / r) * sum_sq(&col_dev) + cell.value()) / (n * n)
}

/// Coefficients of each variance component in the expected pigeonhole variance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaWeights {
    pub lambda_a: Vec<f64>,
    pub lambda_b: Vec<f64>,
    /// One entry per observed cell, in record order.
    pub lambda_e: Vec<f64>,
}

struct LambdaTerms<'a> {
    s: &'a IncidenceSummary,
    n: f64,
    row_keep: f64,
    col_keep: f64,
}

impl<'a> LambdaTerms<'a> {
    fn new(pattern: &'a IncidencePattern) -> Self {
        let s = pattern.summary();
        Self {
            s,
            n: s.n as f64,
            row_keep: 1.0 - 1.0 / pattern.n_rows() as f64,
            col_keep: 1.0 - 1.0 / pattern.n_cols() as f64,
        }
    }

    /// Weight of an entity with count `k` and neighbour probability `mu`.
    /// `own_*` belong to the entity's own margin, `other_*` to the crossed one.
    fn entity(&self, k: u64, mu: f64, own_keep: f64, own_nu: f64, other_keep: f64, other_nu: f64) -> f64 {
        let n = self.n;
        let k = k as f64;
        own_keep * k * k * (1.0 - 2.0 * k / n + own_nu / n)
            + other_keep * (k - 2.0 * mu * k + other_nu * k * k / n)
            + k * (1.0 - k / n).powi(2)
            + k * k / (n * n) * (n - k)
    }

    fn row(&self, i: usize) -> f64 {
        let s = self.s;
        self.entity(s.n_row[i], s.mu_row[i], self.col_keep, s.nu_a, self.row_keep, s.nu_b)
    }

    fn col(&self, j: usize) -> f64 {
        let s = self.s;
        self.entity(s.n_col[j], s.mu_col[j], self.row_keep, s.nu_b, self.col_keep, s.nu_a)
    }

    fn cell(&self, n_i: u64, n_j: u64) -> f64 {
        let (n, s) = (self.n, self.s);
        self.col_keep * (1.0 - 2.0 * n_i as f64 / n + s.nu_a / n)
            + self.row_keep * (1.0 - 2.0 * n_j as f64 / n + s.nu_b / n)
            + 1.0
            - 1.0 / n
    }
}

pub fn lambda_weights(pattern: &IncidencePattern) -> LambdaWeights {
    let t = LambdaTerms::new(pattern);
    let s = t.s;
    LambdaWeights {
        lambda_a: (0..pattern.n_rows()).map(|i| t.row(i)).collect(),
        lambda_b: (0..pattern.n_cols()).map(|j| t.col(j)).collect(),
        lambda_e: pattern
            .rows()
            .iter()
            .zip(pattern.cols())
            .map(|(&i, &j)| t.cell(s.n_row[i as usize], s.n_col[j as usize]))
            .collect(),
    }
}

/// How to evaluate the expected pigeonhole variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PigeonholeMode {
    /// Exact λ weights.
    Exact,
    /// `λ^A ≈ n² + 2n`, `λ^B ≈ n² + 2n`, `λ^E ≈ 3`.
    Approx,
    /// `λ ≈ n² + 2(1 − μ)n`, `λ^E ≈ 3`.
    ApproxMu,
}

/// Expectation under the random-effects model of the delta-method pigeonhole
/// variance.
pub fn e_re_pigeonhole_variance(
    pattern: &IncidencePattern,
    comp: &VarianceComponents,
    mode: PigeonholeMode,
) -> Result<f64, VarianceError> {
    let s = pattern.summary();
    let approx = |k: u64, mu: f64| {
        let k = k as f64;
        k * k + 2.0 * (1.0 - mu) * k
    };
    let [a, b, e] = match mode {
        PigeonholeMode::Exact => {
            let t = LambdaTerms::new(pattern);
            let (rows, cols) = (pattern.rows(), pattern.cols());
            weighted_components(
                pattern,
                comp,
                |i| t.row(i),
                |j| t.col(j),
                |l| t.cell(s.n_row[rows[l] as usize], s.n_col[cols[l] as usize]),
            )?
        }
        PigeonholeMode::Approx => weighted_components(
            pattern,
            comp,
            |i| approx(s.n_row[i], 0.0),
            |j| approx(s.n_col[j], 0.0),
            |_| 3.0,
        )?,
        PigeonholeMode::ApproxMu => weighted_components(
            pattern,
            comp,
            |i| approx(s.n_row[i], s.mu_row[i]),
            |j| approx(s.n_col[j], s.mu_col[j]),
            |_| 3.0,
        )?,
    };
    Ok((a + b + e) / n2(s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateSign {
    Positive,
    /// Zero to within rounding of the inputs.
    Boundary,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CombinedEstimate {
    pub value: f64,
    pub sign: EstimateSign,
}

impl CombinedEstimate {
    pub fn is_negative(&self) -> bool {
        self.sign == EstimateSign::Negative
    }
}

/// Pigeonhole variance minus twice the naive variance. Negative results are
/// returned unclipped and flagged.
pub fn combined_estimate(v_pigeonhole: f64, v_naive: f64) -> CombinedEstimate {
    let value = v_pigeonhole - 2.0 * v_naive;
    let tol = 64.0 * f64::EPSILON * v_pigeonhole.abs().max(2.0 * v_naive.abs());
    let sign = if value.abs() <= tol {
        EstimateSign::Boundary
    } else if value < 0.0 {
        EstimateSign::Negative
    } else {
        EstimateSign::Positive
    };
    CombinedEstimate { value, sign }
}

/// Lower and upper bounds `(m, M)` on each variance component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComponentBounds {
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub e: (f64, f64),
}

impl ComponentBounds {
    /// The tightest bounds enclosing `comp`.
    pub fn enclosing(comp: &VarianceComponents) -> Self {
        Self {
            a: comp.sigma2_a.min_max(),
            b: comp.sigma2_b.min_max(),
            e: comp.sigma2_e.min_max(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics {
    pub epsilon_n: f64,
    pub rho_n: f64,
    /// `(M_A + M_B + M_E) / (ν_A m_A + ν_B m_B + m_E)`; always `≥ rho_n`.
    pub rho_bound: f64,
    /// `(E_RE V_PB − V_RE) / V_RE` with the exact λ weights.
    pub relative_gap: f64,
}

pub fn consistency_diagnostics(
    pattern: &IncidencePattern,
    comp: &VarianceComponents,
    bounds: &ComponentBounds,
) -> Result<Diagnostics, VarianceError> {
    comp.validate(pattern)?;
    let checks = [
        ("sigma2_a", bounds.a, &comp.sigma2_a),
        ("sigma2_b", bounds.b, &comp.sigma2_b),
        ("sigma2_e", bounds.e, &comp.sigma2_e),
    ];
    for (name, (lo, hi), v) in checks {
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(VarianceError::Bounds(format!(
                "{name}: need 0 < m <= M < inf, got ({lo}, {hi})"
            )));
        }
        let (vmin, vmax) = v.min_max();
        if vmin < lo || vmax > hi {
            return Err(VarianceError::Bounds(format!(
                "{name}: values in [{vmin}, {vmax}] are not enclosed by [{lo}, {hi}]"
            )));
        }
    }
    let s = pattern.summary();
    let near = |k: u64, mu: f64| k as f64 * (1.0 - mu);
    let [na, nb, ne] = weighted_components(
        pattern,
        comp,
        |i| near(s.n_row[i], s.mu_row[i]),
        |j| near(s.n_col[j], s.mu_col[j]),
        |_| 1.0,
    )?;
    let sq = |k: u64| (k as f64) * (k as f64);
    let [da, db, de] = weighted_components(pattern, comp, |i| sq(s.n_row[i]), |j| sq(s.n_col[j]), |_| 1.0)?;
    let rho_n = (na + nb + ne) / (da + db + de);
    let rho_bound = (bounds.a.1 + bounds.b.1 + bounds.e.1) / (s.nu_a * bounds.a.0 + s.nu_b * bounds.b.0 + bounds.e.0);
    let vre = v_re(pattern, comp)?;
    let epb = e_re_pigeonhole_variance(pattern, comp, PigeonholeMode::Exact)?;
    Ok(Diagnostics {
        epsilon_n: s.epsilon_n,
        rho_n,
        rho_bound,
        relative_gap: (epb - vre) / vre,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DuplicatePolicy, TripletRecord};
    use approx::assert_relative_eq;

    fn d1() -> TripletDataset {
        let recs = [
            ("r1", "c1", 1.0),
            ("r1", "c2", 2.0),
            ("r2", "c1", 3.0),
            ("r2", "c2", 4.0),
        ]
        .into_iter()
        .map(|(r, c, v)| TripletRecord::new(r, c, v));
        TripletDataset::from_records(recs, DuplicatePolicy::Error).unwrap()
    }

    fn unit() -> VarianceComponents {
        VarianceComponents::homogeneous(1.0, 1.0, 1.0, 0.0)
    }

    #[test]
    fn v_re_on_d1() {
        let ds = d1();
        assert_relative_eq!(v_re(ds.pattern(), &unit()).unwrap(), 1.25);
        let zero = VarianceComponents::homogeneous(0.0, 0.0, 0.0, 0.0);
        assert_eq!(v_re(ds.pattern(), &zero).unwrap(), 0.0);
        let het = VarianceComponents {
            sigma2_a: EntityVariance::PerEntity(vec![1.0, 0.0]),
            ..zero
        };
        assert_relative_eq!(v_re(ds.pattern(), &het).unwrap(), 0.25);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let ds = d1();
        let bad = VarianceComponents {
            sigma2_b: EntityVariance::PerEntity(vec![1.0; 3]),
            ..unit()
        };
        assert_eq!(
            v_re(ds.pattern(), &bad).unwrap_err(),
            VarianceError::Shape {
                component: "sigma2_b",
                expected: 2,
                found: 3
            }
        );
        let neg = VarianceComponents::homogeneous(-1.0, 0.0, 0.0, 0.0);
        assert!(matches!(
            e_re_naive_variance(ds.pattern(), &neg),
            Err(VarianceError::Negative { .. })
        ));
    }

    #[test]
    fn plugin_variances_on_d1() {
        let ds = d1();
        assert_relative_eq!(naive_plugin_variance(&ds), 0.3125);
        assert_relative_eq!(v_pb_total(&ds), 10.0, max_relative = 1e-14);
        assert_relative_eq!(pigeonhole_plugin_variance(&ds), 0.625, max_relative = 1e-14);
    }

    #[test]
    fn expected_variances_on_d1() {
        let p = d1();
        let p = p.pattern();
        // 0.125 + 0.125 + 0.25·(3/4): the error term loses its ℓ = ℓ' pairs.
        assert_relative_eq!(e_re_naive_variance(p, &unit()).unwrap(), 0.4375);
        assert_relative_eq!(
            e_re_pigeonhole_variance(p, &unit(), PigeonholeMode::Exact).unwrap(),
            0.8125
        );
        assert_relative_eq!(
            e_re_pigeonhole_variance(p, &unit(), PigeonholeMode::Approx).unwrap(),
            2.75
        );
        let zero = VarianceComponents::homogeneous(0.0, 0.0, 0.0, 0.0);
        for mode in [PigeonholeMode::Exact, PigeonholeMode::Approx, PigeonholeMode::ApproxMu] {
            assert_eq!(e_re_pigeonhole_variance(p, &zero, mode).unwrap(), 0.0);
        }
    }

    #[test]
    fn lambda_weights_on_d1() {
        let ds = d1();
        let w = lambda_weights(ds.pattern());
        for &x in w.lambda_a.iter().chain(&w.lambda_b) {
            assert_relative_eq!(x, 2.0, max_relative = 1e-15);
        }
        for &x in &w.lambda_e {
            assert_relative_eq!(x, 1.25, max_relative = 1e-15);
        }
    }

    #[test]
    fn single_cell_has_no_pigeonhole_variance() {
        let ds = TripletDataset::from_records([TripletRecord::new("a", "b", 3.0)], DuplicatePolicy::Error).unwrap();
        assert_eq!(v_pb_total(&ds), 0.0);
        assert_eq!(pigeonhole_plugin_variance(&ds), 0.0);
    }

    #[test]
    fn constant_dataset_scaling() {
        let ones = d1().with_values(vec![1.0; 4]).unwrap();
        let threes = d1().with_values(vec![3.0; 4]).unwrap();
        assert_relative_eq!(v_pb_total(&threes), 9.0 * v_pb_total(&ones), max_relative = 1e-12);
        assert_eq!(pigeonhole_plugin_variance(&threes), 0.0);
        assert_eq!(naive_plugin_variance(&threes), 0.0);
    }

    #[test]
    fn combined_estimate_flags() {
        let c = combined_estimate(0.625, 0.3125);
        assert_eq!(c.value, 0.0);
        assert_eq!(c.sign, EstimateSign::Boundary);
        assert_eq!(combined_estimate(0.4, 0.0).value, 0.4);
        let neg = combined_estimate(0.1, 0.2);
        assert_relative_eq!(neg.value, -0.3, max_relative = 1e-15);
        assert!(neg.is_negative());
    }

    #[test]
    fn diagnostics_on_d1() {
        let ds = d1();
        let b = ComponentBounds {
            a: (1.0, 1.0),
            b: (1.0, 1.0),
            e: (1.0, 1.0),
        };
        let d = consistency_diagnostics(ds.pattern(), &unit(), &b).unwrap();
        assert_relative_eq!(d.rho_n, 0.2, max_relative = 1e-15);
        assert_relative_eq!(d.rho_bound, 0.6, max_relative = 1e-15);
        assert_eq!(d.epsilon_n, 0.5);
    }

    #[test]
    fn diagnostics_reject_non_enclosing_bounds() {
        let ds = d1();
        let b = ComponentBounds {
            a: (2.0, 3.0),
            b: (1.0, 1.0),
            e: (1.0, 1.0),
        };
        assert!(matches!(
            consistency_diagnostics(ds.pattern(), &unit(), &b),
            Err(VarianceError::Bounds(_))
        ));
        let zero_lower = ComponentBounds { a: (0.0, 1.0), ..b };
        assert!(consistency_diagnostics(ds.pattern(), &unit(), &zero_lower).is_err());
    }
}
