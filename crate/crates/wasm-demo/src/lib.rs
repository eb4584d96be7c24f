//! Browser bindings for three interactive views: degrees of freedom of the AHT test
//! across simulation designs, a small rejection-rate simulation, and a CR2 fit of a
//! pasted CSV. Every export returns a JSON string.

use crobust::crve::{self, AdjustmentKind};
use crobust::estimator;
use crobust::inference::{self, TestMethod};
use crobust::model_frame::{build_design, Column, ModelSpec, Table};
use crobust::simlab::{self, ExperimentConfig, PeriodEffects, SimParams, HYPOTHESES};
use crobust::WorkingModel;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Replicate limit that keeps the page responsive on one thread.
pub const MAX_REPS: usize = 5000;

#[derive(Serialize)]
struct Group {
    clusters: usize,
    units: [usize; 3],
}

#[derive(Serialize)]
struct DfRow {
    hypothesis: &'static str,
    q: usize,
    /// `None` when the estimate is not finite or the test cannot be formed.
    eta: Option<f64>,
    aht_denominator_df: Option<f64>,
    standard_df: usize,
    error: Option<String>,
}

#[derive(Serialize)]
struct DfReport {
    design: u8,
    m: usize,
    n: usize,
    groups: Vec<Group>,
    rows: Vec<DfRow>,
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("report serializes")
}

/// AHT degrees of freedom for every simulation hypothesis (identity working model).
pub fn degrees_of_freedom_json(design: u8, m: usize, n: usize) -> Result<String, String> {
    let sd = simlab::make_design(design, m, n).map_err(|e| e.to_string())?;
    let params = SimParams {
        tau2: 0.0,
        rho: 0.0,
        sigma_delta2: 0.0,
    };
    // the degrees of freedom depend on the design only, any outcome draw will do
    let data = simlab::simulate_outcomes(&sd, &params, 0, 0).map_err(|e| e.to_string())?;
    let (model, hyps) = simlab::build_sim_model(&sd, &data).map_err(|e| e.to_string())?;
    let fit = estimator::fit(&model).map_err(|e| e.to_string())?;
    let phi = WorkingModel::identity()
        .covariance(&model)
        .map_err(|e| e.to_string())?;
    let v = crve::vcov(&fit, &AdjustmentKind::cr2(), &phi).map_err(|e| e.to_string())?;
    let rows = hyps
        .iter()
        .map(|h| {
            let q = h.constraint.q();
            let (eta, error) = match inference::aht_df(&fit, &v, &phi, &h.constraint) {
                Ok((eta, _)) if eta.is_finite() => (Some(eta), None),
                Ok(_) => (None, Some("degenerate variance".to_string())),
                Err(e) => (None, Some(e.to_string())),
            };
            DfRow {
                hypothesis: h.name,
                q,
                eta,
                aht_denominator_df: eta.map(|e| e - q as f64 + 1.0),
                standard_df: m - 1,
                error,
            }
        })
        .collect();
    Ok(json(&DfReport {
        design,
        m,
        n,
        groups: sd
            .groups
            .iter()
            .map(|g| Group {
                clusters: g.clusters,
                units: g.units,
            })
            .collect(),
        rows,
    }))
}

#[derive(Serialize)]
struct RateRow {
    hypothesis: String,
    q: usize,
    method: &'static str,
    reject_rate: f64,
    mc_se: f64,
    failures: usize,
}

/// Null rejection rates of the AHT, Standard and χ² tests in one simulation cell.
#[allow(clippy::too_many_arguments)]
pub fn rejection_rates_json(
    design: u8,
    m: usize,
    n: usize,
    tau2: f64,
    rho: f64,
    sigma_delta2: f64,
    reps: usize,
    seed: u64,
    alpha: f64,
) -> Result<String, String> {
    if reps > MAX_REPS {
        return Err(format!("at most {MAX_REPS} replicates in the browser"));
    }
    let cfg = ExperimentConfig {
        designs: vec![design],
        m: vec![m],
        n: vec![n],
        tau2: vec![tau2],
        rho: vec![rho],
        sigma_delta2: vec![sigma_delta2],
        hypotheses: HYPOTHESES.iter().map(|(h, _)| h.to_string()).collect(),
        methods: vec![TestMethod::Aht, TestMethod::Standard, TestMethod::Chi2],
        alphas: vec![alpha],
        reps,
        seed,
        period_effects: PeriodEffects::Shared,
    };
    let rows = simlab::run_experiment(&cfg).map_err(|e| e.to_string())?;
    let rows: Vec<RateRow> = rows
        .into_iter()
        .map(|r| RateRow {
            hypothesis: r.hypothesis,
            q: r.q,
            method: r.method.name(),
            reject_rate: r.reject_rate,
            mc_se: r.mc_se,
            failures: r.failures,
        })
        .collect();
    Ok(json(&rows))
}

/// Comma-separated text with a header row; columns whose fields all parse as numbers are numeric.
pub fn parse_csv(text: &str) -> Result<Table, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| e.to_string())?
        .iter()
        .map(str::to_string)
        .collect();
    let mut fields: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for record in reader.records() {
        let record = record.map_err(|e| e.to_string())?;
        for (col, f) in fields.iter_mut().zip(record.iter()) {
            col.push(f.to_string());
        }
    }
    let columns = header
        .into_iter()
        .zip(fields)
        .map(|(name, col)| {
            let numeric: Option<Vec<f64>> = col
                .iter()
                .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect();
            match numeric {
                Some(v) if !v.is_empty() => (name, Column::Numeric(v)),
                _ => (name, Column::Text(col)),
            }
        })
        .collect();
    Table::new(columns).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct CoefRow {
    name: String,
    estimate: f64,
    std_error: f64,
    t_stat: f64,
    df: f64,
    p_value: f64,
}

#[derive(Serialize)]
struct FitReport {
    clusters: usize,
    observations: usize,
    vcov: &'static str,
    coefficients: Vec<CoefRow>,
}

fn list(s: &str) -> Vec<&str> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .collect()
}

/// Fits `outcome ~ covariates` with cluster-robust standard errors. With no within-cluster
/// factors an intercept is added; `within` absorbs factors nested in clusters.
pub fn fit_csv_json(
    text: &str,
    outcome: &str,
    covariates: &str,
    cluster: &str,
    within: &str,
    vcov: &str,
) -> Result<String, String> {
    let kind = match vcov {
        "CR0" => AdjustmentKind::Cr0,
        "CR1" => AdjustmentKind::Cr1,
        "CR1S" => AdjustmentKind::cr1s(),
        "CR2" => AdjustmentKind::cr2(),
        "CR3" => AdjustmentKind::Cr3,
        other => return Err(format!("unknown variance estimator `{other}`")),
    };
    let mut table = parse_csv(text)?;
    let within = list(within);
    let mut covs = list(covariates);
    if within.is_empty() {
        table
            .push_column(
                "(Intercept)".into(),
                Column::Numeric(vec![1.0; table.nrows()]),
            )
            .map_err(|e| e.to_string())?;
        covs.insert(0, "(Intercept)");
    }
    let spec = ModelSpec::new(outcome, &covs, cluster).with_within(&within);
    let model = build_design(&table, &spec).map_err(|e| e.to_string())?;
    let fit = estimator::fit(&model).map_err(|e| e.to_string())?;
    let phi = WorkingModel::identity()
        .covariance(&model)
        .map_err(|e| e.to_string())?;
    let v = crve::vcov(&fit, &kind, &phi).map_err(|e| e.to_string())?;
    let rows = inference::coefficient_table(&fit, &v, &phi).map_err(|e| e.to_string())?;
    Ok(json(&FitReport {
        clusters: fit.m(),
        observations: model.n_total(),
        vcov: kind.name(),
        coefficients: rows
            .into_iter()
            .map(|c| CoefRow {
                name: c.name,
                estimate: c.estimate,
                std_error: c.std_error,
                t_stat: c.t_stat,
                df: c.df,
                p_value: c.p_value,
            })
            .collect(),
    }))
}

#[wasm_bindgen]
pub fn degrees_of_freedom(design: u8, m: usize, n: usize) -> Result<String, JsError> {
    degrees_of_freedom_json(design, m, n).map_err(|e| JsError::new(&e))
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen]
pub fn rejection_rates(
    design: u8,
    m: usize,
    n: usize,
    tau2: f64,
    rho: f64,
    sigma_delta2: f64,
    reps: usize,
    seed: u64,
    alpha: f64,
) -> Result<String, JsError> {
    rejection_rates_json(design, m, n, tau2, rho, sigma_delta2, reps, seed, alpha)
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn fit_csv(
    text: &str,
    outcome: &str,
    covariates: &str,
    cluster: &str,
    within: &str,
    vcov: &str,
) -> Result<String, JsError> {
    fit_csv_json(text, outcome, covariates, cluster, within, vcov).map_err(|e| JsError::new(&e))
}
