//! Run configuration: a JSON document with strict keys and documented defaults.

use crate::error::{CliError, CliResult};
use crobust::crve::AdjustmentKind;
use crobust::inference::TestMethod;
use crobust::model_frame::ModelSpec;
use crobust::simlab::{ExperimentConfig, PeriodEffects, HYPOTHESES};
use crobust::WorkingModel;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};

/// Name given to the constant column added when no within-cluster factor spans it.
pub const INTERCEPT: &str = "(Intercept)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// CSV file, relative to the configuration file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub working_model: WorkingModelConfig,
    #[serde(default)]
    pub vcov: VcovName,
    #[serde(default)]
    pub method: MethodName,
    #[serde(default)]
    pub tests: Vec<TestSpec>,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub outcome: String,
    pub covariates: Vec<String>,
    #[serde(default)]
    pub absorb_between: Vec<String>,
    #[serde(default)]
    pub absorb_within: Vec<String>,
    pub cluster: String,
    #[serde(default)]
    pub weights: Option<String>,
    /// Adds a constant focal column unless within-cluster factors are absorbed.
    #[serde(default = "yes")]
    pub intercept: bool,
}

fn yes() -> bool {
    true
}

impl ModelConfig {
    pub fn adds_intercept(&self) -> bool {
        self.intercept && self.absorb_within.is_empty()
    }

    /// Focal coefficient names in estimation order.
    pub fn coefficient_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.covariates.len() + 1);
        if self.adds_intercept() {
            names.push(INTERCEPT.to_string());
        }
        names.extend(self.covariates.iter().cloned());
        names
    }

    pub fn to_spec(&self) -> ModelSpec {
        ModelSpec {
            outcome: self.outcome.clone(),
            covariates: self.coefficient_names(),
            absorb_between: self.absorb_between.clone(),
            absorb_within: self.absorb_within.clone(),
            cluster: self.cluster.clone(),
            weights: self.weights.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkingModelConfig {
    #[default]
    Identity,
    /// Equicorrelated blocks. Without `rho` the correlation is estimated from OLS residuals.
    CompoundSymmetric {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rho: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum VcovName {
    #[serde(rename = "CR0")]
    Cr0,
    #[serde(rename = "CR1")]
    Cr1,
    #[serde(rename = "CR1S")]
    Cr1s,
    #[default]
    #[serde(rename = "CR2")]
    Cr2,
    #[serde(rename = "CR3")]
    Cr3,
}

impl VcovName {
    pub fn kind(self) -> AdjustmentKind {
        match self {
            VcovName::Cr0 => AdjustmentKind::Cr0,
            VcovName::Cr1 => AdjustmentKind::Cr1,
            VcovName::Cr1s => AdjustmentKind::cr1s(),
            VcovName::Cr2 => AdjustmentKind::cr2(),
            VcovName::Cr3 => AdjustmentKind::Cr3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MethodName {
    #[default]
    #[serde(rename = "AHT")]
    Aht,
    Standard,
    Chi2,
}

impl MethodName {
    pub fn method(self) -> TestMethod {
        match self {
            MethodName::Aht => TestMethod::Aht,
            MethodName::Standard => TestMethod::Standard,
            MethodName::Chi2 => TestMethod::Chi2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

/// A named linear hypothesis. Either `zero` lists coefficients that are jointly zero,
/// or `rows` gives one weight map per row of `C` with right-hand side `rhs` (default 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zero: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rows: Vec<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rhs: Option<Vec<f64>>,
    /// Overrides the top-level method for this hypothesis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<MethodName>,
}

/// Rows of `(coefficient, weight)` pairs.
pub type NamedRows = Vec<Vec<(String, f64)>>;

impl TestSpec {
    /// Constraint rows and the right-hand side.
    pub fn named_rows(&self) -> (NamedRows, Option<Vec<f64>>) {
        if self.zero.is_empty() {
            let rows = self
                .rows
                .iter()
                .map(|r| r.iter().map(|(k, w)| (k.clone(), *w)).collect())
                .collect();
            (rows, self.rhs.clone())
        } else {
            let rows = self.zero.iter().map(|k| vec![(k.clone(), 1.0)]).collect();
            (rows, None)
        }
    }

    fn referenced(&self) -> impl Iterator<Item = &String> {
        self.zero
            .iter()
            .chain(self.rows.iter().flat_map(|r| r.keys()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodEffectsName {
    #[default]
    Shared,
    ByOutcome,
}

/// Simulation grid. The six grid axes are required unless the full grid is requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub designs: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau2: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_delta2: Option<Vec<f64>>,
    #[serde(default = "all_hypotheses")]
    pub hypotheses: Vec<String>,
    #[serde(default = "all_methods")]
    pub methods: Vec<MethodName>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub period_effects: PeriodEffectsName,
    /// Writes replicate 0 of the first grid cell as a CSV, relative to the configuration file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_out: Option<String>,
}

fn all_hypotheses() -> Vec<String> {
    HYPOTHESES.iter().map(|(h, _)| h.to_string()).collect()
}

fn all_methods() -> Vec<MethodName> {
    vec![MethodName::Aht, MethodName::Standard, MethodName::Chi2]
}

fn default_alphas() -> Vec<f64> {
    vec![0.05]
}

impl SimulateConfig {
    const AXES: [&'static str; 6] = ["designs", "m", "n", "tau2", "rho", "sigma_delta2"];

    fn axes_present(&self) -> [bool; 6] {
        [
            self.designs.is_some(),
            self.m.is_some(),
            self.n.is_some(),
            self.tau2.is_some(),
            self.rho.is_some(),
            self.sigma_delta2.is_some(),
        ]
    }

    /// Experiment with an optional seed override. `full_grid` replaces the six axes
    /// with the complete factorial grid and rejects explicit axes.
    pub fn experiment(&self, full_grid: bool, seed: Option<u64>) -> CliResult<ExperimentConfig> {
        let seed = seed.unwrap_or(self.seed);
        let present = self.axes_present();
        let mut cfg = if full_grid {
            if let Some(i) = present.iter().position(|p| *p) {
                return Err(CliError::config(
                    "explicit grid axes cannot be combined with --full-grid",
                )
                .at_path(format!("simulate.{}", Self::AXES[i])));
            }
            ExperimentConfig::full_grid(self.reps, seed)
        } else {
            if let Some(i) = present.iter().position(|p| !*p) {
                return Err(CliError::config(
                    "missing grid axis (pass --full-grid to run every condition)",
                )
                .at_path(format!("simulate.{}", Self::AXES[i])));
            }
            ExperimentConfig {
                designs: self.designs.clone().unwrap_or_default(),
                m: self.m.clone().unwrap_or_default(),
                n: self.n.clone().unwrap_or_default(),
                tau2: self.tau2.clone().unwrap_or_default(),
                rho: self.rho.clone().unwrap_or_default(),
                sigma_delta2: self.sigma_delta2.clone().unwrap_or_default(),
                hypotheses: Vec::new(),
                methods: Vec::new(),
                alphas: Vec::new(),
                reps: self.reps,
                seed,
                period_effects: PeriodEffects::Shared,
            }
        };
        cfg.hypotheses = self.hypotheses.clone();
        cfg.methods = self.methods.iter().map(|m| m.method()).collect();
        cfg.alphas = self.alphas.clone();
        cfg.period_effects = match self.period_effects {
            PeriodEffectsName::Shared => PeriodEffects::Shared,
            PeriodEffectsName::ByOutcome => PeriodEffects::ByOutcome,
        };
        cfg.validate()
            .map_err(|e| CliError::from(e).at_path("simulate"))?;
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn working_model(&self) -> Option<WorkingModel> {
        match self.working_model {
            WorkingModelConfig::Identity => Some(WorkingModel::identity()),
            WorkingModelConfig::CompoundSymmetric { rho: Some(rho) } => {
                Some(WorkingModel::compound_symmetric(rho))
            }
            WorkingModelConfig::CompoundSymmetric { rho: None } => None,
        }
    }

    /// Checks that do not need the data: constraint names and shapes.
    pub fn validate(&self) -> CliResult<()> {
        if let WorkingModelConfig::CompoundSymmetric { rho: Some(rho) } = self.working_model {
            if !(rho > -1.0 && rho < 1.0) {
                return Err(
                    CliError::config(format!("correlation {rho} outside (-1, 1)"))
                        .at_path("working_model.rho"),
                );
            }
        }
        if let Some(model) = &self.model {
            if model.coefficient_names().is_empty() {
                return Err(
                    CliError::config("model has no focal coefficients").at_path("model.covariates")
                );
            }
            let mut seen = HashSet::new();
            if let Some(dup) = model.covariates.iter().find(|c| !seen.insert(*c)) {
                return Err(CliError::config(format!("covariate `{dup}` listed twice"))
                    .at_path("model.covariates"));
            }
        }
        if !self.tests.is_empty() && self.model.is_none() {
            return Err(CliError::config("tests need a model").at_path("tests"));
        }
        let names = self
            .model
            .as_ref()
            .map(|m| m.coefficient_names())
            .unwrap_or_default();
        let mut seen = HashSet::new();
        for (i, t) in self.tests.iter().enumerate() {
            let path = format!("tests[{i}]");
            let fail = |msg: String, key: &str| {
                Err(CliError::config(msg)
                    .at_path(format!("{path}{key}"))
                    .for_constraint(&t.name))
            };
            if !seen.insert(t.name.as_str()) {
                return fail(format!("duplicate constraint name `{}`", t.name), ".name");
            }
            if t.zero.is_empty() == t.rows.is_empty() {
                return fail("give exactly one of `zero` or `rows`".into(), "");
            }
            if let Some(rhs) = &t.rhs {
                if !t.zero.is_empty() {
                    return fail("`rhs` applies only to `rows`".into(), ".rhs");
                }
                if rhs.len() != t.rows.len() {
                    return fail(
                        format!("{} rows but {} right-hand sides", t.rows.len(), rhs.len()),
                        ".rhs",
                    );
                }
            }
            if let Some(bad) = t.referenced().find(|k| !names.contains(k)) {
                return fail(
                    format!(
                        "constraint `{}` references unknown coefficient `{bad}`",
                        t.name
                    ),
                    "",
                );
            }
        }
        Ok(())
    }
}

/// Parses and validates a JSON configuration document.
pub fn parse_config(document: &str) -> CliResult<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::config(e.into_inner().to_string()).at_path(path)
    })?;
    config.validate()?;
    Ok(config)
}

/// Pretty JSON with every default written out.
pub fn serialize_config(config: &RunConfig) -> String {
    serde_json::to_string_pretty(config).expect("configuration serializes")
}
