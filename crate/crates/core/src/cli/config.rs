//! TOML inputs: variance-components files and generative simulation configs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::TripletDataset;
use crate::simulator::{EffectDistribution, GenerativeSpec, IncidenceSpec, LabelSpec, ResponseModel};
use crate::variance::{EntityVariance, VarianceComponents};

use super::CliError;

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    toml::from_str(&read(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum EntityInput {
    Scalar(f64),
    Table(BTreeMap<String, f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CellInput {
    row: String,
    col: String,
    value: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum CellsInput {
    Scalar(f64),
    List(Vec<CellInput>),
}

/// `mu`, `sigma2_a`, `sigma2_b`, `sigma2_e`. Each variance is a scalar or a
/// per-entity table keyed by entity key; per-cell `sigma2_e` is a list of
/// `{ row, col, value }` entries covering every cell.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentsFile {
    #[serde(default)]
    mu: f64,
    sigma2_a: EntityInput,
    sigma2_b: EntityInput,
    sigma2_e: CellsInput,
}

fn entity_variance(
    name: &str,
    input: EntityInput,
    n: usize,
    id_of: impl Fn(&str) -> Option<u32>,
) -> Result<EntityVariance, CliError> {
    match input {
        EntityInput::Scalar(v) => Ok(EntityVariance::Homogeneous(v)),
        EntityInput::Table(map) => {
            let mut out = vec![f64::NAN; n];
            for (key, v) in map {
                let id = id_of(&key).ok_or_else(|| CliError::Input(format!("{name}: unknown entity `{key}`")))?;
                out[id as usize] = v;
            }
            if let Some(k) = out.iter().position(|v| v.is_nan()) {
                return Err(CliError::Input(format!("{name}: no entry for entity #{}", k + 1)));
            }
            Ok(EntityVariance::PerEntity(out))
        }
    }
}

pub fn load_components(path: &Path, ds: &TripletDataset) -> Result<VarianceComponents, CliError> {
    let file: ComponentsFile = parse(path)?;
    let sigma2_a = entity_variance("sigma2_a", file.sigma2_a, ds.n_rows(), |k| ds.row_id(k))?;
    let sigma2_b = entity_variance("sigma2_b", file.sigma2_b, ds.n_cols(), |k| ds.col_id(k))?;
    let sigma2_e = match file.sigma2_e {
        CellsInput::Scalar(v) => EntityVariance::Homogeneous(v),
        CellsInput::List(cells) => {
            let mut out = vec![f64::NAN; ds.len()];
            for c in cells {
                let l = ds
                    .row_id(&c.row)
                    .zip(ds.col_id(&c.col))
                    .and_then(|(i, j)| ds.pattern().cell_index(i as usize, j as usize))
                    .ok_or_else(|| CliError::Input(format!("sigma2_e: no observed cell ({}, {})", c.row, c.col)))?;
                out[l] = c.value;
            }
            if let Some(l) = out.iter().position(|v| v.is_nan()) {
                let r = ds.record(l);
                return Err(CliError::Input(format!(
                    "sigma2_e: no entry for cell ({}, {})",
                    r.row_key, r.col_key
                )));
            }
            EntityVariance::PerEntity(out)
        }
    };
    let comp = VarianceComponents {
        sigma2_a,
        sigma2_b,
        sigma2_e,
        mu: file.mu,
    };
    comp.validate(ds.pattern())
        .map_err(|e| CliError::Input(e.to_string()))?;
    Ok(comp)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomogeneousComponents {
    #[serde(default)]
    pub mu: f64,
    pub sigma2_a: f64,
    pub sigma2_b: f64,
    pub sigma2_e: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub model: ResponseModel,
    #[serde(default)]
    pub distribution: EffectDistribution,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IncidenceConfig {
    #[serde(flatten)]
    pub spec: IncidenceSpec,
    /// Regenerate with derived seeds until `ε_N` is below this.
    pub max_epsilon: Option<f64>,
    #[serde(default = "default_attempts")]
    pub max_attempts: u64,
}

fn default_attempts() -> u64 {
    20
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Monte Carlo response draws per check.
    #[serde(default = "default_draws")]
    pub draws: u64,
    /// Number of grids in the enumeration family.
    #[serde(default = "default_grids")]
    pub grids: usize,
}

fn default_draws() -> u64 {
    10_000
}

fn default_grids() -> usize {
    24
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            draws: default_draws(),
            grids: default_grids(),
        }
    }
}

/// A full simulation config, consumed by `simulate` and `verify`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default)]
    pub seed: u64,
    pub incidence: IncidenceConfig,
    pub model: ModelConfig,
    pub components: HomogeneousComponents,
    pub labels: Option<LabelSpec>,
    #[serde(default)]
    pub label_effects: BTreeMap<String, f64>,
    /// Keep each generated cell with this probability.
    pub keep_prob: Option<f64>,
    #[serde(default)]
    pub verify: VerifyConfig,
}

impl SimulationConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        parse(path)
    }

    pub fn generative_spec(&self) -> GenerativeSpec {
        let c = &self.components;
        GenerativeSpec {
            model: self.model.model.clone(),
            components: VarianceComponents::homogeneous(c.sigma2_a, c.sigma2_b, c.sigma2_e, c.mu),
            distribution: self.model.distribution,
            labels: self.labels.clone(),
            label_effects: self.label_effects.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DuplicatePolicy, TripletRecord};
    use std::io::Write;

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

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn scalar_and_table_components() {
        let f = file(
            "sigma2_a = 1.0\n[sigma2_b]\nc2 = 0.5\nc1 = 2\n[[sigma2_e]]\nrow = \"r1\"\ncol = \"c1\"\nvalue = 0.1\n\
             [[sigma2_e]]\nrow = \"r1\"\ncol = \"c2\"\nvalue = 0.2\n[[sigma2_e]]\nrow = \"r2\"\ncol = \"c1\"\nvalue = 0.3\n\
             [[sigma2_e]]\nrow = \"r2\"\ncol = \"c2\"\nvalue = 0.4\n",
        );
        let c = load_components(f.path(), &d1()).unwrap();
        assert_eq!(c.sigma2_a, EntityVariance::Homogeneous(1.0));
        assert_eq!(c.sigma2_b, EntityVariance::PerEntity(vec![2.0, 0.5]));
        assert_eq!(c.sigma2_e, EntityVariance::PerEntity(vec![0.1, 0.2, 0.3, 0.4]));
        assert_eq!(c.mu, 0.0);
    }

    #[test]
    fn incomplete_or_unknown_entities_rejected() {
        let missing = file("sigma2_a = 1\nsigma2_e = 1\n[sigma2_b]\nc1 = 1\n");
        assert!(load_components(missing.path(), &d1()).is_err());
        let unknown = file("sigma2_a = 1\nsigma2_e = 1\n[sigma2_b]\nc1 = 1\nc2 = 1\nc9 = 1\n");
        assert!(load_components(unknown.path(), &d1()).is_err());
        let negative = file("sigma2_a = -1\nsigma2_b = 1\nsigma2_e = 1\n");
        assert!(load_components(negative.path(), &d1()).is_err());
    }

    #[test]
    fn simulation_config_parses() {
        let f = file(
            "seed = 7\n[incidence]\nkind = \"zipf_margins\"\nalpha_row = 1.1\nalpha_col = 1.1\ntarget_n = 1000\n\
             rows = 200\ncols = 50\nmax_epsilon = 0.2\n[model]\nkind = \"outer_product\"\ndistribution = \"uniform\"\n\
             [[model.factors]]\nsingular_value = 1\ntau2_u = 0.5\ntau2_v = 0.5\n[components]\nsigma2_a = 1\n\
             sigma2_b = 1\nsigma2_e = 1\n[labels]\nnames = [\"x\", \"y\"]\nunit = \"column\"\n[label_effects]\nx = 0.5\n",
        );
        let cfg = SimulationConfig::load(f.path()).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.incidence.max_epsilon, Some(0.2));
        assert_eq!(cfg.model.distribution, EffectDistribution::Uniform);
        assert!(matches!(cfg.model.model, ResponseModel::OuterProduct { ref factors } if factors.len() == 1));
        assert_eq!(cfg.verify.draws, 10_000);
        assert_eq!(cfg.generative_spec().label_effects["x"], 0.5);
    }
}
