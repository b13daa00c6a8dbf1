//! Command-line surface. Every command prints one JSON result document on
//! standard output; plot data goes to CSV files.
//!
//! Exit status: 0 success, 2 usage, 3 input or parse error, 4 verification
//! failure, 1 anything else.

pub mod config;
pub mod verify;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::dataset::{ingest_path, DatasetError, DuplicatePolicy, IngestOptions, TripletDataset};
use crate::resampling::{contrast, run_bootstrap, ResampleError, Scheme, Statistic};
use crate::rng::{stream, StreamTag};
use crate::simulator::{draw_responses, gen_incidence, gen_incidence_with_epsilon, mar_mask};
use crate::statistics::grand_mean;
use crate::variance::{
    combined_estimate, consistency_diagnostics, e_re_naive_variance, e_re_pigeonhole_variance, naive_plugin_variance,
    pigeonhole_plugin_variance, v_re, ComponentBounds, PigeonholeMode,
};

use config::{load_components, SimulationConfig};
use verify::{enumeration_suite, montecarlo_suite, VerifyReport};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INPUT: u8 = 3;
pub const EXIT_VERIFY: u8 = 4;

/// `ε_N` above which the approximate expected-variance forms are flagged.
const APPROX_EPSILON_LIMIT: f64 = 0.1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("verification failed: {0} check(s) did not pass")]
    Verification(usize),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Input(_) => EXIT_INPUT,
            CliError::Verification(_) => EXIT_VERIFY,
            CliError::Internal(_) => 1,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ResampleError> for CliError {
    fn from(e: ResampleError) -> Self {
        match e {
            ResampleError::TooFewReplicates { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "pigeonhole",
    version,
    about = "Bootstrap variance estimation for crossed triplet data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct InputArgs {
    /// Triplet file: `row,col,value[,label]` with a header, comma or tab separated
    pub path: PathBuf,
    /// How to treat repeated (row, col) cells
    #[arg(long, default_value = "error")]
    #[serde(serialize_with = "display")]
    pub duplicates: DuplicatePolicy,
}

fn display<T: std::fmt::Display, S: serde::Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeArg {
    Naive,
    Pigeonhole,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StatArg {
    /// Grand mean of all values
    Mean,
    /// Ratio means of the label groups given by --labels
    Group,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum SuiteArg {
    Enumeration,
    Montecarlo,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Incidence counts, plug-in variances and, with components, expected variances
    Summarize {
        #[command(flatten)]
        input: InputArgs,
        /// TOML file with mu, sigma2_a, sigma2_b, sigma2_e
        #[arg(long)]
        variance_components: Option<PathBuf>,
    },
    /// Naive or pigeonhole bootstrap of the mean or of label-group means
    Bootstrap {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum, default_value = "pigeonhole")]
        scheme: SchemeArg,
        #[arg(long, value_enum, default_value = "mean")]
        stat: StatArg,
        /// Comma-separated labels for --stat group
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        /// Number of replicates
        #[arg(short = 'B', long = "replicates")]
        replicates: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for per-replicate CSV
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Pigeonhole bootstrap of the difference of two label-group means
    Contrast {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long = "a")]
        label_a: String,
        #[arg(long = "b")]
        label_b: String,
        #[arg(short = 'B', long = "replicates")]
        replicates: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Enumeration and Monte Carlo self-checks driven by a simulation config
    Verify {
        config: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        suite: SuiteArg,
        /// Overrides the config seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a synthetic dataset from a simulation config
    Simulate {
        config: PathBuf,
        /// Where to write the triplet CSV
        #[arg(long, short)]
        output: PathBuf,
        /// Overrides the config seed for the response draw
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Serialize)]
pub struct ResultDocument {
    pub command: &'static str,
    pub version: &'static str,
    pub inputs: Value,
    pub outputs: Value,
    pub warnings: Vec<String>,
}

impl ResultDocument {
    fn new(command: &'static str, inputs: Value) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            inputs,
            outputs: Value::Null,
            warnings: Vec::new(),
        }
    }
}

fn load(input: &InputArgs) -> Result<TripletDataset, CliError> {
    let opts = IngestOptions {
        duplicates: input.duplicates,
        delimiter: None,
    };
    ingest_path(&input.path, &opts).map_err(|e| CliError::Input(format!("{}: {e}", input.path.display())))
}

fn summary_fields(ds: &TripletDataset) -> Value {
    let s = ds.summary();
    let min_max = |v: &[u64]| json!({ "min": v.iter().min(), "max": v.iter().max() });
    json!({
        "n": s.n,
        "rows": ds.n_rows(),
        "cols": ds.n_cols(),
        "nu_a": s.nu_a,
        "nu_b": s.nu_b,
        "epsilon_n": s.epsilon_n,
        "n_row": min_max(&s.n_row),
        "n_col": min_max(&s.n_col),
        "grand_mean": grand_mean(ds),
    })
}

fn summarize(input: &InputArgs, components: Option<&Path>) -> Result<ResultDocument, CliError> {
    let ds = load(input)?;
    let mut doc = ResultDocument::new(
        "summarize",
        json!({ "input": input, "variance_components": components }),
    );
    let mut out = summary_fields(&ds);
    let v_pb = pigeonhole_plugin_variance(&ds);
    let v_nb = naive_plugin_variance(&ds);
    let combined = combined_estimate(v_pb, v_nb);
    if combined.is_negative() {
        doc.warnings.push(format!(
            "combined estimate V_PB - 2 V_NB = {} is negative",
            combined.value
        ));
    }
    out["plugin"] = json!({ "naive": v_nb, "pigeonhole": v_pb, "combined": combined });
    let eps = ds.summary().epsilon_n;
    if let Some(path) = components {
        let comp = load_components(path, &ds)?;
        let p = ds.pattern();
        let bad = |e: crate::variance::VarianceError| CliError::Input(e.to_string());
        let pb = |mode| e_re_pigeonhole_variance(p, &comp, mode).map_err(bad);
        let mut expected = json!({
            "v_re": v_re(p, &comp).map_err(bad)?,
            "e_re_naive": e_re_naive_variance(p, &comp).map_err(bad)?,
            "e_re_pigeonhole": {
                "exact": pb(PigeonholeMode::Exact)?,
                "approx": pb(PigeonholeMode::Approx)?,
                "approx_mu": pb(PigeonholeMode::ApproxMu)?,
            },
        });
        match consistency_diagnostics(p, &comp, &ComponentBounds::enclosing(&comp)) {
            Ok(d) => expected["diagnostics"] = json!(d),
            Err(e) => doc.warnings.push(format!("consistency diagnostics unavailable: {e}")),
        }
        out["expected"] = expected;
        if eps > APPROX_EPSILON_LIMIT {
            doc.warnings.push(format!(
                "epsilon_N = {eps} exceeds {APPROX_EPSILON_LIMIT}; the approximate expected variances are not reliable here"
            ));
        }
    }
    doc.outputs = out;
    Ok(doc)
}

fn write_plot_csv(
    dir: &Path,
    file: &str,
    header: &[String],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<PathBuf, CliError> {
    let io = |e: &dyn std::fmt::Display| CliError::Input(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(|e| io(&e))?;
    let path = dir.join(file);
    let mut w = csv::Writer::from_path(&path).map_err(|e| io(&e))?;
    w.write_record(header).map_err(|e| io(&e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| io(&e))?;
    }
    w.flush().map_err(|e| io(&e))?;
    Ok(path)
}

#[allow(clippy::too_many_arguments)]
fn bootstrap(
    input: &InputArgs,
    scheme: SchemeArg,
    stat: StatArg,
    labels: &[String],
    b: u64,
    seed: u64,
    plot_data: Option<&Path>,
) -> Result<ResultDocument, CliError> {
    if b == 0 {
        return Err(CliError::Usage("-B must be at least 1".into()));
    }
    let statistic = match stat {
        StatArg::Mean => Statistic::GrandMean,
        StatArg::Group if labels.is_empty() => return Err(CliError::Usage("--stat group needs --labels".into())),
        StatArg::Group => Statistic::GroupMeans(labels.to_vec()),
    };
    let inputs = json!({
        "input": input, "scheme": scheme, "stat": stat, "labels": labels,
        "replicates": b, "seed": seed, "plot_data": plot_data,
    });
    let ds = load(input)?;
    let scheme = match scheme {
        SchemeArg::Naive => Scheme::Naive,
        SchemeArg::Pigeonhole => Scheme::Pigeonhole,
    };
    let run = run_bootstrap(&ds, scheme, &statistic, b, seed)?;
    let mut doc = ResultDocument::new("bootstrap", inputs);
    if run.dropped > 0 {
        doc.warnings.push(format!(
            "{} of {b} replicates had an undefined statistic and were dropped",
            run.dropped
        ));
    }
    let names = statistic.component_names();
    let kept = run.replicates.len();
    let per_component: Vec<Value> = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let plugin = match (&statistic, scheme) {
                (Statistic::GrandMean, Scheme::Pigeonhole) => Some(pigeonhole_plugin_variance(&ds)),
                (Statistic::GrandMean, Scheme::Naive) => Some(naive_plugin_variance(&ds)),
                _ => None,
            };
            json!({
                "name": name,
                "original": run.original_value[k],
                "replicate_mean": (kept > 0).then(|| run.replicate_mean(k)),
                "empirical_variance": (kept > 1).then(|| run.empirical_variance(k)),
                "plugin_variance": plugin,
                "bias": (kept > 0).then(|| run.bias(k)),
            })
        })
        .collect();
    let mut outputs = json!({
        "scheme": scheme,
        "statistic": names,
        "kept": kept,
        "dropped": run.dropped,
        "components": per_component,
        "replicates": run.replicates,
    });
    if let Some(dir) = plot_data {
        let mut header = vec!["replicate".to_string()];
        header.extend(names.iter().cloned());
        let original = std::iter::once(
            std::iter::once("original".to_string())
                .chain(run.original_value.iter().map(f64::to_string))
                .collect(),
        );
        let reps = run.replicates.iter().map(|r| {
            std::iter::once(r.index.to_string())
                .chain(r.values.iter().map(f64::to_string))
                .collect()
        });
        let path = write_plot_csv(dir, "bootstrap_replicates.csv", &header, original.chain(reps))?;
        outputs["plot_data"] = json!(path);
    }
    doc.outputs = outputs;
    Ok(doc)
}

fn contrast_cmd(
    input: &InputArgs,
    a: &str,
    b_label: &str,
    b: u64,
    seed: u64,
    plot_data: Option<&Path>,
) -> Result<ResultDocument, CliError> {
    if b < 2 {
        return Err(CliError::Usage("-B must be at least 2 for a contrast".into()));
    }
    let inputs = json!({
        "input": input, "a": a, "b": b_label, "replicates": b, "seed": seed, "plot_data": plot_data,
    });
    let ds = load(input)?;
    let result = contrast(&ds, a, b_label, b, seed)?;
    let mut doc = ResultDocument::new("contrast", inputs);
    if result.dropped > 0 {
        doc.warnings.push(format!(
            "{} of {b} replicates had an empty group and were dropped",
            result.dropped
        ));
    }
    let mut outputs = json!(result);
    outputs["bias"] = json!(result.bias());
    if let Some(dir) = plot_data {
        let header = ["replicate", "mean_a", "mean_b", "diff"].map(String::from);
        let original = std::iter::once(vec![
            "original".to_string(),
            result.original_a.to_string(),
            result.original_b.to_string(),
            result.original_diff.to_string(),
        ]);
        let reps = result.replicates.iter().map(|r| {
            vec![
                r.index.to_string(),
                r.mean_a.to_string(),
                r.mean_b.to_string(),
                r.diff.to_string(),
            ]
        });
        let path = write_plot_csv(dir, "contrast_replicates.csv", &header, original.chain(reps))?;
        outputs["plot_data"] = json!(path);
    }
    doc.outputs = outputs;
    Ok(doc)
}

fn config_pattern(
    cfg: &SimulationConfig,
    warnings: &mut Vec<String>,
) -> Result<crate::dataset::IncidencePattern, CliError> {
    let inc = &cfg.incidence;
    let err = |e: crate::simulator::SimError| CliError::Input(e.to_string());
    match inc.max_epsilon {
        None => gen_incidence(&inc.spec).map_err(err),
        Some(max) => {
            let (p, seed, retries) = gen_incidence_with_epsilon(&inc.spec, max, inc.max_attempts).map_err(err)?;
            if retries > 0 {
                warnings.push(format!(
                    "pattern regenerated {retries} time(s) to reach epsilon_N < {max}; used incidence seed {seed}"
                ));
            }
            Ok(p)
        }
    }
}

fn verify_cmd(path: &Path, suite: SuiteArg, seed: Option<u64>) -> Result<(ResultDocument, bool), CliError> {
    let cfg = SimulationConfig::load(path)?;
    let seed = seed.unwrap_or(cfg.seed);
    let mut doc = ResultDocument::new(
        "verify",
        json!({ "config": path, "suite": suite, "seed": seed, "settings": cfg }),
    );
    let mut checks = Vec::new();
    if suite != SuiteArg::Montecarlo {
        checks.extend(enumeration_suite(cfg.verify.grids, seed)?);
    }
    if suite != SuiteArg::Enumeration {
        let pattern = config_pattern(&cfg, &mut doc.warnings)?;
        let spec = cfg.generative_spec();
        if !spec.label_effects.is_empty() {
            doc.warnings
                .push("label effects are fixed effects and are ignored by the Monte Carlo suite".into());
        }
        checks.extend(montecarlo_suite(&pattern, &spec, cfg.verify.draws, seed)?);
    }
    let report = VerifyReport::new(checks);
    if report.inconclusive > 0 {
        doc.warnings.push(format!(
            "{} Monte Carlo check(s) were inconclusive; increase verify.draws",
            report.inconclusive
        ));
    }
    let ok = report.failed == 0;
    doc.outputs = json!(report);
    Ok((doc, ok))
}

fn simulate(path: &Path, output: &Path, seed: Option<u64>) -> Result<ResultDocument, CliError> {
    let cfg = SimulationConfig::load(path)?;
    let seed = seed.unwrap_or(cfg.seed);
    let mut doc = ResultDocument::new(
        "simulate",
        json!({ "config": path, "output": output, "seed": seed, "settings": cfg }),
    );
    let pattern = config_pattern(&cfg, &mut doc.warnings)?;
    let spec = cfg.generative_spec();
    let err = |e: crate::simulator::SimError| CliError::Input(e.to_string());
    let mut ds = draw_responses(&pattern, &spec, &mut stream(seed, 0, StreamTag::Responses)).map_err(err)?;
    if let Some(keep) = cfg.keep_prob {
        ds = mar_mask(&ds, keep, &mut stream(seed, 0, StreamTag::Mask)).map_err(err)?;
    }
    let file = std::fs::File::create(output).map_err(|e| CliError::Input(format!("{}: {e}", output.display())))?;
    ds.write_csv(std::io::BufWriter::new(file))?;
    let mut out = summary_fields(&ds);
    if let Some(eff) = spec
        .effective_components(ds.pattern())
        .filter(|_| cfg.keep_prob.is_none())
    {
        out["effective_components"] = json!(eff);
    }
    doc.outputs = out;
    Ok(doc)
}

fn emit(doc: &ResultDocument) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, doc).map_err(|e| CliError::Internal(e.to_string()))?;
    writeln!(stdout).map_err(|e| CliError::Internal(e.to_string()))
}

/// Runs a parsed command, printing its document. Returns the exit status.
pub fn run(cli: Cli) -> ExitCode {
    let result = match &cli.command {
        Command::Summarize {
            input,
            variance_components,
        } => summarize(input, variance_components.as_deref()).map(|d| (d, true)),
        Command::Bootstrap {
            input,
            scheme,
            stat,
            labels,
            replicates,
            seed,
            plot_data,
        } => bootstrap(input, *scheme, *stat, labels, *replicates, *seed, plot_data.as_deref()).map(|d| (d, true)),
        Command::Contrast {
            input,
            label_a,
            label_b,
            replicates,
            seed,
            plot_data,
        } => contrast_cmd(input, label_a, label_b, *replicates, *seed, plot_data.as_deref()).map(|d| (d, true)),
        Command::Verify { config, suite, seed } => verify_cmd(config, *suite, *seed),
        Command::Simulate { config, output, seed } => simulate(config, output, *seed).map(|d| (d, true)),
    };
    let outcome = result.and_then(|(doc, ok)| {
        emit(&doc)?;
        if ok {
            Ok(())
        } else {
            let failed = doc.outputs["failed"].as_u64().unwrap_or(0) as usize;
            Err(CliError::Verification(failed))
        }
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Parses the process arguments and runs. Clap usage errors exit with 2.
pub fn main() -> ExitCode {
    run(Cli::parse())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes_map_to_distinct_codes() {
        let codes = [
            CliError::Usage(String::new()).exit_code(),
            CliError::Input(String::new()).exit_code(),
            CliError::Verification(1).exit_code(),
            CliError::Internal(String::new()).exit_code(),
        ];
        assert_eq!(codes, [2, 3, 4, 1]);
    }
}
