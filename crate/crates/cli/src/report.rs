//! Running a configuration and serializing its report.
//!
//! JSON reports print numbers in their shortest round-trip form, which parses back to the
//! identical double. CSV tables round to 10 significant digits. Every p-value sits next to
//! the degrees of freedom it was computed with.

use crate::config::{OutputFormat, RunConfig, SimulateConfig, VcovName, INTERCEPT};
use crate::data::{format_sig, read_table, write_table};
use crate::error::{CliError, CliResult};
use crobust::crve::{self, RobustVariance};
use crobust::estimator::{self, FitResult};
use crobust::inference::{self, TestMethod};
use crobust::model_frame::{build_design, estimate_rho, Column};
use crobust::simlab::{self, RejectionRow, SimParams};
use crobust::{Constraint, SymMatrix, WorkingModel};
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fit,
    Test,
    Simulate,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Directory that relative paths in the configuration resolve against.
    pub base_dir: PathBuf,
    pub seed: Option<u64>,
    pub full_grid: bool,
}

/// Runs `command` and returns the serialized report.
pub fn run(command: Command, config: &RunConfig, opts: &RunOptions) -> CliResult<String> {
    match command {
        Command::Fit => {
            let model = FittedModel::load(config, &opts.base_dir)?;
            let report = model.fit_report(config.vcov)?;
            Ok(match config.format {
                OutputFormat::Json => to_json(&report),
                OutputFormat::Csv => report.to_csv(),
            })
        }
        Command::Test => {
            if config.tests.is_empty() {
                return Err(CliError::config("no tests configured").at_path("tests"));
            }
            let model = FittedModel::load(config, &opts.base_dir)?;
            let report = model.test_report(config)?;
            Ok(match config.format {
                OutputFormat::Json => to_json(&report),
                OutputFormat::Csv => report.to_csv(),
            })
        }
        Command::Simulate => {
            let sim = config
                .simulate
                .as_ref()
                .ok_or_else(|| CliError::config("missing `simulate` section"))?;
            simulate(sim, opts)
        }
    }
}

fn to_json<T: Serialize>(report: &T) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkingModelReport {
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    pub estimated: bool,
}

struct FittedModel {
    fit: FitResult,
    phi: Vec<SymMatrix>,
    working: WorkingModelReport,
}

impl FittedModel {
    fn load(config: &RunConfig, base_dir: &Path) -> CliResult<Self> {
        let model = config
            .model
            .as_ref()
            .ok_or_else(|| CliError::config("missing `model` section"))?;
        let data = config
            .data
            .as_ref()
            .ok_or_else(|| CliError::config("missing `data` path"))?;
        let mut table = read_table(&base_dir.join(data))?;
        if model.adds_intercept() {
            if table.names().any(|n| n == INTERCEPT) {
                return Err(CliError::data(format!(
                    "column name `{INTERCEPT}` is reserved for the intercept"
                )));
            }
            table.push_column(INTERCEPT.into(), Column::Numeric(vec![1.0; table.nrows()]))?;
        }
        let design = build_design(&table, &model.to_spec()).map_err(|e| match e {
            crobust::Error::InvalidInput(msg) => CliError::data(msg),
            other => other.into(),
        })?;
        let fit = estimator::fit(&design)?;
        let (working_model, working) = match config.working_model() {
            Some(w) => {
                let report = match w.kind {
                    crobust::model_frame::WorkingKind::CompoundSymmetric { rho } => {
                        WorkingModelReport {
                            kind: "compound_symmetric",
                            rho: Some(rho),
                            estimated: false,
                        }
                    }
                    _ => WorkingModelReport {
                        kind: "identity",
                        rho: None,
                        estimated: false,
                    },
                };
                (w, report)
            }
            None => {
                let rho = estimate_rho(&fit.residuals)?;
                (
                    WorkingModel::compound_symmetric(rho),
                    WorkingModelReport {
                        kind: "compound_symmetric",
                        rho: Some(rho),
                        estimated: true,
                    },
                )
            }
        };
        let phi = working_model.covariance(fit.design())?;
        Ok(FittedModel { fit, phi, working })
    }

    fn vcov(&self, name: VcovName) -> CliResult<RobustVariance> {
        Ok(crve::vcov(&self.fit, &name.kind(), &self.phi)?)
    }

    fn fit_report(&self, vcov: VcovName) -> CliResult<FitReport> {
        let v = self.vcov(vcov)?;
        let rows = inference::coefficient_table(&self.fit, &v, &self.phi)?;
        let r = self.fit.r();
        Ok(FitReport {
            command: "fit",
            observations: self.fit.design().n_total(),
            clusters: self.fit.m(),
            vcov: v.kind.name(),
            working_model: self.working.clone(),
            coefficients: rows
                .into_iter()
                .map(|c| CoefficientReport {
                    name: c.name,
                    estimate: c.estimate,
                    std_error: c.std_error,
                    t_stat: c.t_stat,
                    df: c.df,
                    p_value: c.p_value,
                })
                .collect(),
            vcov_matrix: (0..r)
                .map(|i| (0..r).map(|j| v.v.as_matrix()[(i, j)]).collect())
                .collect(),
        })
    }

    fn test_report(&self, config: &RunConfig) -> CliResult<TestReport> {
        let names = self.fit.design().r_names().to_vec();
        let configured = self.vcov(config.vcov)?;
        let cr2 = if config.vcov == VcovName::Cr2 {
            None
        } else {
            Some(self.vcov(VcovName::Cr2)?)
        };
        let mut tests = Vec::with_capacity(config.tests.len());
        for (i, spec) in config.tests.iter().enumerate() {
            let tag = |e: CliError| e.for_constraint(&spec.name);
            let (rows, rhs) = spec.named_rows();
            let constraint = Constraint::from_named(&names, &rows, rhs)
                .map_err(|e| tag(CliError::from(e).at_path(format!("tests[{i}]"))))?;
            let method = spec.method.unwrap_or(config.method).method();
            // AHT degrees of freedom are derived for CR2 only
            let v = match method {
                TestMethod::Aht => cr2.as_ref().unwrap_or(&configured),
                _ => &configured,
            };
            let q_stat = inference::wald(&self.fit, v, &constraint).map_err(|e| tag(e.into()))?;
            let q = constraint.q();
            let result = match method {
                TestMethod::Aht => {
                    let (eta, _) = inference::aht_df(&self.fit, v, &self.phi, &constraint)
                        .map_err(|e| tag(e.into()))?;
                    inference::aht_test(q_stat, q, eta)
                }
                TestMethod::Standard => inference::standard_test(q_stat, q, self.fit.m()),
                TestMethod::Chi2 => inference::chi2_test(q_stat, q),
            }
            .map_err(|e| tag(e.into()))?;
            tests.push(TestRow {
                name: spec.name.clone(),
                method: method.name(),
                vcov: v.kind.name(),
                q,
                q_stat: result.q_stat,
                f_stat: result.f_stat,
                df_num: result.df_num,
                df_denom: result.df_denom.is_finite().then_some(result.df_denom),
                eta: result.eta,
                p_value: result.p_value,
            });
        }
        Ok(TestReport {
            command: "test",
            observations: self.fit.design().n_total(),
            clusters: self.fit.m(),
            working_model: self.working.clone(),
            tests,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientReport {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_stat: f64,
    pub df: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub command: &'static str,
    pub observations: usize,
    pub clusters: usize,
    pub vcov: &'static str,
    pub working_model: WorkingModelReport,
    pub coefficients: Vec<CoefficientReport>,
    pub vcov_matrix: Vec<Vec<f64>>,
}

impl FitReport {
    fn to_csv(&self) -> String {
        let mut out = String::from("name,estimate,std_error,t_stat,df,p_value\n");
        for c in &self.coefficients {
            let nums =
                [c.estimate, c.std_error, c.t_stat, c.df, c.p_value].map(|x| format_sig(x, 10));
            out.push_str(&csv_line(&c.name, &nums));
        }
        out
    }
}

/// One tested constraint. `df_denom` is absent for the χ² reference distribution,
/// whose only degrees of freedom are `df_num`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestRow {
    pub name: String,
    pub method: &'static str,
    pub vcov: &'static str,
    pub q: usize,
    pub q_stat: f64,
    pub f_stat: f64,
    pub df_num: f64,
    pub df_denom: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub command: &'static str,
    pub observations: usize,
    pub clusters: usize,
    pub working_model: WorkingModelReport,
    pub tests: Vec<TestRow>,
}

impl TestReport {
    fn to_csv(&self) -> String {
        let mut out =
            String::from("name,method,vcov,q,q_stat,f_stat,df_num,df_denom,eta,p_value\n");
        for t in &self.tests {
            let opt = |x: Option<f64>| x.map(|v| format_sig(v, 10)).unwrap_or_default();
            let fields = [
                t.method.to_string(),
                t.vcov.to_string(),
                t.q.to_string(),
                format_sig(t.q_stat, 10),
                format_sig(t.f_stat, 10),
                format_sig(t.df_num, 10),
                opt(t.df_denom),
                opt(t.eta),
                format_sig(t.p_value, 10),
            ];
            out.push_str(&csv_line(&t.name, &fields));
        }
        out
    }
}

fn csv_line(name: &str, fields: &[String]) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_field(name).expect("in-memory write");
    for f in fields {
        w.write_field(f).expect("in-memory write");
    }
    w.write_record(None::<&[u8]>).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8 fields")
}

pub const SIMULATE_COLUMNS: [&str; 14] = [
    "design",
    "m",
    "n",
    "tau2",
    "rho",
    "sigma_delta2",
    "hypothesis",
    "q",
    "method",
    "alpha",
    "reps",
    "failures",
    "reject_rate",
    "mc_se",
];

pub fn rejection_csv(rows: &[RejectionRow]) -> String {
    let mut out = SIMULATE_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let g = |x: f64| format_sig(x, 10);
        let fields = [
            r.design.to_string(),
            r.m.to_string(),
            r.n.to_string(),
            g(r.tau2),
            g(r.rho),
            g(r.sigma_delta2),
            r.hypothesis.clone(),
            r.q.to_string(),
            r.method.name().to_string(),
            g(r.alpha),
            r.reps.to_string(),
            r.failures.to_string(),
            g(r.reject_rate),
            g(r.mc_se),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn simulate(sim: &SimulateConfig, opts: &RunOptions) -> CliResult<String> {
    let cfg = sim.experiment(opts.full_grid, opts.seed)?;
    if let Some(path) = &sim.dataset_out {
        let design = simlab::make_design(cfg.designs[0], cfg.m[0], cfg.n[0])?;
        let params = SimParams {
            tau2: cfg.tau2[0],
            rho: cfg.rho[0],
            sigma_delta2: cfg.sigma_delta2[0],
        };
        let table = simlab::simulate_outcomes(&design, &params, cfg.seed, 0)?.to_table()?;
        let path = opts.base_dir.join(path);
        let file = std::fs::File::create(&path)
            .map_err(|e| CliError::data(format!("cannot create `{}`: {e}", path.display())))?;
        write_table(&table, std::io::BufWriter::new(file))?;
    }
    let rows = simlab::run_experiment(&cfg)?;
    Ok(rejection_csv(&rows))
}
