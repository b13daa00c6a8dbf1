//! Self-checks run by `verify`: exhaustive enumeration on a family of tiny
//! grids, and Monte Carlo expectations on a configured pattern.

use rand::Rng;
use serde::Serialize;

use crate::dataset::{IncidencePattern, TripletDataset};
use crate::resampling::{enumerated_moments, DEFAULT_ENUMERATION_CAP};
use crate::rng::{child_seed, stream, StreamTag};
use crate::simulator::{
    gen_incidence, monte_carlo_expectation, GenerativeSpec, IncidenceKind, IncidenceSpec, McTarget,
};
use crate::statistics::totals;
use crate::variance::{
    e_re_naive_variance, e_re_pigeonhole_variance, pigeonhole_plugin_variance, v_pb_total, v_re, PigeonholeMode,
};

use super::CliError;

/// Relative tolerance for enumeration identities.
pub const ENUMERATION_TOLERANCE: f64 = 1e-10;
/// Monte Carlo agreement window, in standard errors.
pub const MC_SE_WINDOW: f64 = 4.0;
/// A Monte Carlo check whose window exceeds this fraction of the oracle
/// cannot discriminate and is reported as inconclusive.
pub const MC_MAX_RELATIVE_WINDOW: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub measured: f64,
    pub oracle: f64,
    /// Allowed `|measured − oracle|`.
    pub tolerance: f64,
    pub standard_error: Option<f64>,
    pub status: CheckStatus,
}

impl Check {
    fn exact(name: String, measured: f64, oracle: f64) -> Self {
        let tolerance = ENUMERATION_TOLERANCE * oracle.abs().max(f64::MIN_POSITIVE);
        let status = if (measured - oracle).abs() <= tolerance {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        Self {
            suite: "enumeration",
            name,
            measured,
            oracle,
            tolerance,
            standard_error: None,
            status,
        }
    }

    fn monte_carlo(name: String, measured: f64, se: f64, oracle: f64) -> Self {
        let tolerance = MC_SE_WINDOW * se;
        let status = if !(tolerance <= MC_MAX_RELATIVE_WINDOW * oracle.abs()) {
            CheckStatus::Inconclusive
        } else if (measured - oracle).abs() <= tolerance {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        Self {
            suite: "montecarlo",
            name,
            measured,
            oracle,
            tolerance,
            standard_error: Some(se),
            status,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    pub passed: usize,
    pub failed: usize,
    pub inconclusive: usize,
}

impl VerifyReport {
    pub fn new(checks: Vec<Check>) -> Self {
        let count = |s| checks.iter().filter(|c| c.status == s).count();
        Self {
            passed: count(CheckStatus::Pass),
            failed: count(CheckStatus::Fail),
            inconclusive: count(CheckStatus::Inconclusive),
            checks,
        }
    }
}

/// Named tiny grids with values uniform on `[1, 5]`: the 2×2 grid, a single
/// cell, a single column, a single row, full 3×3 and 2×4 grids, then random
/// sparse patterns with `R, C ≤ 4`.
pub fn grid_family(count: usize, seed: u64) -> Result<Vec<(String, TripletDataset)>, CliError> {
    let mut shapes: Vec<(String, IncidencePattern)> = Vec::new();
    let full = |r, c| gen_incidence(&IncidenceSpec::new(IncidenceKind::Full, r, c, 0));
    for (r, c) in [(2, 2), (1, 1), (3, 1), (1, 3), (3, 3), (2, 4)] {
        shapes.push((
            format!("full {r}x{c}"),
            full(r, c).map_err(|e| CliError::Internal(e.to_string()))?,
        ));
    }
    let mut k = 0;
    while shapes.len() < count {
        let mut rng = stream(seed, k, StreamTag::Incidence);
        let r = rng.random_range(1..=4);
        let c = rng.random_range(1..=4);
        let p = rng.random_range(0.3..0.9);
        let spec = IncidenceSpec::new(IncidenceKind::Bernoulli { p }, r, c, child_seed(seed, k));
        if let Ok(pattern) = gen_incidence(&spec) {
            shapes.push((
                format!(
                    "sparse #{k} ({}x{}, N={})",
                    pattern.n_rows(),
                    pattern.n_cols(),
                    pattern.len()
                ),
                pattern,
            ));
        }
        k += 1;
    }
    shapes
        .into_iter()
        .enumerate()
        .map(|(g, (name, pattern))| {
            let mut rng = stream(seed, g as u64, StreamTag::Responses);
            let values = (0..pattern.len()).map(|_| rng.random_range(1.0..5.0)).collect();
            TripletDataset::from_pattern(pattern, values, None)
                .map(|ds| (name, ds))
                .map_err(|e| CliError::Internal(e.to_string()))
        })
        .collect()
}

pub fn enumeration_suite(count: usize, seed: u64) -> Result<Vec<Check>, CliError> {
    let mut checks = Vec::new();
    for (name, ds) in grid_family(count, seed)? {
        let m = enumerated_moments(&ds, DEFAULT_ENUMERATION_CAP).map_err(|e| CliError::Internal(e.to_string()))?;
        let t_x = totals(&ds).t_x;
        checks.push(Check::exact(format!("{name}: E[T*] = T_x"), m.mean_total, t_x));
        checks.push(Check::exact(
            format!("{name}: E[N*] = N"),
            m.mean_n_star,
            ds.len() as f64,
        ));
        checks.push(Check::exact(format!("{name}: Var(T*)"), m.var_total, v_pb_total(&ds)));
        checks.push(Check::exact(
            format!("{name}: delta-method variance"),
            m.delta_variance,
            pigeonhole_plugin_variance(&ds),
        ));
    }
    Ok(checks)
}

/// Monte Carlo checks of the three random-effects expectations. Label
/// effects are fixed effects, so they are removed from `spec` first.
pub fn montecarlo_suite(
    pattern: &IncidencePattern,
    spec: &GenerativeSpec,
    draws: u64,
    seed: u64,
) -> Result<Vec<Check>, CliError> {
    let spec = GenerativeSpec {
        labels: None,
        label_effects: Default::default(),
        ..spec.clone()
    };
    let err = |e: &dyn std::fmt::Display| CliError::Input(e.to_string());
    let targets = [
        (McTarget::GrandMeanVariance, "variance of the grand mean vs V_RE"),
        (
            McTarget::NaivePluginVariance,
            "naive plug-in variance vs its expectation",
        ),
        (
            McTarget::PigeonholePluginVariance,
            "pigeonhole plug-in variance vs its expectation (exact weights)",
        ),
    ];
    let mut checks = Vec::new();
    for (k, (target, name)) in targets.into_iter().enumerate() {
        let mc =
            monte_carlo_expectation(pattern, &spec, target, draws, child_seed(seed, k as u64)).map_err(|e| err(&e))?;
        let comp = &mc.oracle_components;
        let oracle = match target {
            McTarget::GrandMeanVariance => v_re(pattern, comp),
            McTarget::NaivePluginVariance => e_re_naive_variance(pattern, comp),
            McTarget::PigeonholePluginVariance => e_re_pigeonhole_variance(pattern, comp, PigeonholeMode::Exact),
        }
        .map_err(|e| err(&e))?;
        checks.push(Check::monte_carlo(
            name.to_string(),
            mc.estimate,
            mc.standard_error,
            oracle,
        ));
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_has_requested_size_and_small_grids() {
        let fam = grid_family(24, 3).unwrap();
        assert_eq!(fam.len(), 24);
        assert!(fam.iter().all(|(_, ds)| ds.n_rows() <= 4 && ds.n_cols() <= 4));
        assert_eq!(grid_family(24, 3).unwrap()[10].1.values(), fam[10].1.values());
    }

    #[test]
    fn enumeration_suite_passes() {
        let checks = enumeration_suite(20, 1).unwrap();
        assert_eq!(checks.len(), 80);
        assert!(checks.iter().all(|c| c.status == CheckStatus::Pass), "{checks:#?}");
    }

    #[test]
    fn unresolved_monte_carlo_is_inconclusive() {
        let c = Check::monte_carlo("x".into(), 1.0, 1.0, 1.0);
        assert_eq!(c.status, CheckStatus::Inconclusive);
        assert_eq!(
            Check::monte_carlo("x".into(), 1.0, 0.01, 1.02).status,
            CheckStatus::Pass
        );
        assert_eq!(
            Check::monte_carlo("x".into(), 1.0, 0.001, 1.02).status,
            CheckStatus::Fail
        );
    }
}
