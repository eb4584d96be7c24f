//! Monte Carlo rejection-rate experiments on multi-condition, multi-outcome designs.
//!
//! Six treatment-allocation designs are supported: balanced and unbalanced randomized
//! block (1, 2), cluster-randomized (3, 4) and difference-in-differences (5, 6) designs.
//! Three outcomes are measured on every unit, and the analysis stacks them into one
//! regression with six condition-by-outcome effects.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::crve::{AdjustmentKind, VcovPlan};
use crate::error::{Error, Result};
use crate::estimator::{self, AbsorbedDesign};
use crate::inference::{self, TestMethod};
use crate::matkern::SymMatrix;
use crate::model_frame::{ClusterBlock, ClusteredDesign, Column, Constraint, Table, WorkingModel};

pub const CONDITIONS: usize = 3;
pub const OUTCOMES: usize = 3;

/// Clusters sharing one treatment allocation pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationGroup {
    pub clusters: usize,
    /// Units observed under conditions 1, 2 and 3.
    pub units: [usize; CONDITIONS],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimDesign {
    pub id: u8,
    pub m: usize,
    pub n: usize,
    pub groups: Vec<AllocationGroup>,
}

/// Integer parts of `total · fractions` summing to `total`; leftover units go to the
/// largest remainders, ties to the earlier entry.
pub fn largest_remainder(total: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    // guard against 0.5 * 18 = 8.999... style rounding
    let mut out: Vec<usize> = exact.iter().map(|x| (x + 1e-9).floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - out[a] as f64;
        let rb = exact[b] - out[b] as f64;
        rb.partial_cmp(&ra)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        out[k] += 1;
    }
    out
}

fn split3(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let v = largest_remainder(n, &fractions);
    [v[0], v[1], v[2]]
}

/// Allocation table of design `id` with `m` clusters of `n` units.
pub fn make_design(id: u8, m: usize, n: usize) -> Result<SimDesign> {
    let block = [1.0 / 2.0, 1.0 / 3.0, 1.0 / 6.0];
    let (cluster_shares, patterns): (Vec<f64>, Vec<[usize; 3]>) = match id {
        1 => (vec![1.0], vec![split3(n, block)]),
        2 => (
            vec![0.5, 0.5],
            vec![
                split3(n, block),
                split3(n, [1.0 / 3.0, 5.0 / 9.0, 1.0 / 9.0]),
            ],
        ),
        3 => (vec![1.0 / 3.0; 3], vec![[n, 0, 0], [0, n, 0], [0, 0, n]]),
        4 => (vec![0.5, 0.3, 0.2], vec![[n, 0, 0], [0, n, 0], [0, 0, n]]),
        5 => (vec![0.5, 0.5], vec![[n, 0, 0], split3(n, block)]),
        6 => (
            vec![2.0 / 3.0, 1.0 / 3.0],
            vec![[n, 0, 0], split3(n, block)],
        ),
        _ => {
            return Err(Error::Config(format!(
                "unknown design {id}; expected 1 to 6"
            )))
        }
    };
    if n < 6 {
        return Err(Error::Config(format!(
            "design {id} needs at least 6 units per cluster, got {n}"
        )));
    }
    let sizes = largest_remainder(m, &cluster_shares);
    if sizes.contains(&0) {
        return Err(Error::Config(format!(
            "design {id} cannot place {m} clusters into {} groups",
            sizes.len()
        )));
    }
    let groups = sizes
        .into_iter()
        .zip(patterns)
        .map(|(clusters, units)| AllocationGroup { clusters, units })
        .collect();
    Ok(SimDesign { id, m, n, groups })
}

impl SimDesign {
    /// Cluster fixed effects are used unless clusters are nested in conditions.
    pub fn has_cluster_effects(&self) -> bool {
        !matches!(self.id, 3 | 4)
    }

    /// Period fixed effects are omitted for the randomized block designs.
    pub fn has_period_effects(&self) -> bool {
        !matches!(self.id, 1 | 2)
    }

    /// Condition (1-based) of every unit in every cluster, cluster by cluster.
    pub fn conditions(&self) -> Vec<Vec<u8>> {
        let mut out = Vec::with_capacity(self.m);
        for g in &self.groups {
            let mut units = Vec::with_capacity(self.n);
            for (h, &count) in g.units.iter().enumerate() {
                units.extend(std::iter::repeat_n(h as u8 + 1, count));
            }
            for _ in 0..g.clusters {
                out.push(units.clone());
            }
        }
        out
    }
}

/// Parameters of the data-generating process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    /// Intra-class correlation.
    pub tau2: f64,
    /// Correlation between outcomes at the same unit.
    pub rho: f64,
    /// Variance of cluster-specific treatment-effect differences.
    pub sigma_delta2: f64,
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        let SimParams {
            tau2,
            rho,
            sigma_delta2,
        } = *self;
        if !(0.0..1.0).contains(&tau2) {
            return Err(Error::Config(format!(
                "tau2 must lie in [0, 1), got {tau2}"
            )));
        }
        if !(rho > -0.5 && rho < 1.0) {
            return Err(Error::Config(format!(
                "rho must lie in (-0.5, 1), got {rho}"
            )));
        }
        if !(sigma_delta2 >= 0.0 && sigma_delta2 <= 3.0 * tau2) {
            return Err(Error::Config(format!(
                "sigma_delta2 = {sigma_delta2} makes the random-effect covariance indefinite (needs 0 <= sigma_delta2 <= 3 tau2)"
            )));
        }
        Ok(())
    }

    /// Covariance of the three random effects of one cluster.
    pub fn effect_covariance(&self) -> SymMatrix {
        let off = self.tau2 - self.sigma_delta2 / 2.0;
        SymMatrix::from_row_slice(3, &[self.tau2, off, off, self.tau2, off, self.tau2])
            .expect("3x3")
    }

    /// Covariance of the three idiosyncratic errors of one unit.
    pub fn error_covariance(&self) -> SymMatrix {
        let v = 1.0 - self.tau2;
        let c = v * self.rho;
        SymMatrix::from_row_slice(3, &[v, c, c, v, c, v]).expect("3x3")
    }
}

/// Draws a 3-vector with variance `var` and common covariance `cov` from four normals,
/// using the exchangeable spectral factorization so that `var == cov` gives exactly
/// equal components.
fn exchangeable_draw<R: Rng>(rng: &mut R, var: f64, cov: f64) -> [f64; 3] {
    let common = (var + 2.0 * cov).max(0.0);
    let spread = (var - cov).max(0.0);
    let z0: f64 = rng.sample(StandardNormal);
    let z: [f64; 3] = [
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    ];
    let mean = (z[0] + z[1] + z[2]) / 3.0;
    let a = (common / 3.0).sqrt() * z0;
    let b = spread.sqrt();
    [
        a + b * (z[0] - mean),
        a + b * (z[1] - mean),
        a + b * (z[2] - mean),
    ]
}

/// RNG for replicate `rep`, a function of `(seed, rep)` only.
pub fn replicate_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Outcomes for every cluster, rows ordered by unit then outcome.
pub fn draw_outcomes<R: Rng>(
    design: &SimDesign,
    params: &SimParams,
    rng: &mut R,
) -> Vec<DVector<f64>> {
    let re_cov = params.tau2 - params.sigma_delta2 / 2.0;
    let err_var = 1.0 - params.tau2;
    design
        .conditions()
        .iter()
        .map(|units| {
            let nu = exchangeable_draw(rng, params.tau2, re_cov);
            let mut y = DVector::zeros(units.len() * OUTCOMES);
            for (j, &h) in units.iter().enumerate() {
                let eps = exchangeable_draw(rng, err_var, err_var * params.rho);
                for k in 0..OUTCOMES {
                    y[j * OUTCOMES + k] = nu[h as usize - 1] + eps[k];
                }
            }
            y
        })
        .collect()
}

/// Long-format simulated data: one row per cluster, unit and outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub cluster: Vec<usize>,
    pub period: Vec<usize>,
    pub condition: Vec<u8>,
    pub outcome: Vec<u8>,
    pub y: Vec<f64>,
}

impl SimDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Name of the focal indicator for condition `h` (2 or 3) and outcome `k`.
    pub fn effect_name(h: u8, k: u8) -> String {
        format!("c{h}_o{k}")
    }

    /// Columns `cluster, period, condition, outcome, y` followed by the six effect indicators.
    pub fn to_table(&self) -> Result<Table> {
        let mut cols = vec![
            (
                "cluster".to_string(),
                Column::Numeric(self.cluster.iter().map(|&c| c as f64).collect()),
            ),
            (
                "period".to_string(),
                Column::Numeric(self.period.iter().map(|&p| p as f64).collect()),
            ),
            (
                "condition".to_string(),
                Column::Numeric(self.condition.iter().map(|&c| c as f64).collect()),
            ),
            (
                "outcome".to_string(),
                Column::Numeric(self.outcome.iter().map(|&o| o as f64).collect()),
            ),
            ("y".to_string(), Column::Numeric(self.y.clone())),
        ];
        for h in 2..=CONDITIONS as u8 {
            for k in 1..=OUTCOMES as u8 {
                let ind = self
                    .condition
                    .iter()
                    .zip(&self.outcome)
                    .map(|(&c, &o)| if c == h && o == k { 1.0 } else { 0.0 })
                    .collect();
                cols.push((SimDataset::effect_name(h, k), Column::Numeric(ind)));
            }
        }
        Table::new(cols)
    }
}

fn dataset_from(design: &SimDesign, y: &[DVector<f64>]) -> SimDataset {
    let mut d = SimDataset {
        cluster: vec![],
        period: vec![],
        condition: vec![],
        outcome: vec![],
        y: vec![],
    };
    for (i, (units, yi)) in design.conditions().iter().zip(y).enumerate() {
        for (j, &h) in units.iter().enumerate() {
            for k in 0..OUTCOMES {
                d.cluster.push(i + 1);
                d.period.push(j + 1);
                d.condition.push(h);
                d.outcome.push(k as u8 + 1);
                d.y.push(yi[j * OUTCOMES + k]);
            }
        }
    }
    d
}

/// One simulated dataset for replicate `rep`.
pub fn simulate_outcomes(
    design: &SimDesign,
    params: &SimParams,
    seed: u64,
    rep: u64,
) -> Result<SimDataset> {
    params.validate()?;
    let y = draw_outcomes(design, params, &mut replicate_rng(seed, rep));
    Ok(dataset_from(design, &y))
}

/// A named null hypothesis on the six effects.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub name: &'static str,
    pub constraint: Constraint,
}

/// Hypothesis names with their effect indices (condition-major: `c2_o1, c2_o2, c2_o3, c3_o1, ...`).
pub const HYPOTHESES: [(&str, &[usize]); 6] = [
    ("1a", &[0]),
    ("1b", &[3]),
    ("2", &[0, 3]),
    ("3a", &[0, 1, 2]),
    ("3b", &[3, 4, 5]),
    ("6", &[0, 1, 2, 3, 4, 5]),
];

pub fn hypotheses() -> Vec<Hypothesis> {
    HYPOTHESES
        .iter()
        .map(|(name, idx)| Hypothesis {
            name,
            constraint: Constraint::select(6, idx).expect("valid selection"),
        })
        .collect()
}

/// How period effects enter the stacked model of designs 3 to 6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PeriodEffects {
    /// One effect per period, common to the three outcomes.
    #[default]
    Shared,
    /// A separate period effect for every outcome.
    ByOutcome,
}

/// Stacked analysis model: six condition-by-outcome effects, outcome intercepts and
/// (for designs 3 to 6) shared period effects absorbed between clusters, and cluster
/// effects (except designs 3 and 4) absorbed within clusters.
pub fn build_sim_model(
    design: &SimDesign,
    data: &SimDataset,
) -> Result<(ClusteredDesign, Vec<Hypothesis>)> {
    build_sim_model_with(design, data, PeriodEffects::Shared)
}

pub fn build_sim_model_with(
    design: &SimDesign,
    data: &SimDataset,
    period_effects: PeriodEffects,
) -> Result<(ClusteredDesign, Vec<Hypothesis>)> {
    let expected = design.m * design.n * OUTCOMES;
    if data.len() != expected {
        return Err(Error::Data(format!(
            "dataset has {} rows, design implies {expected}",
            data.len()
        )));
    }
    let periods = if design.has_period_effects() {
        design.n - 1
    } else {
        0
    };
    let per_period = match period_effects {
        PeriodEffects::Shared => 1,
        PeriodEffects::ByOutcome => OUTCOMES,
    };
    let s = OUTCOMES + periods * per_period;
    let mut r_names = Vec::new();
    for h in 2..=CONDITIONS as u8 {
        for k in 1..=OUTCOMES as u8 {
            r_names.push(SimDataset::effect_name(h, k));
        }
    }
    let mut s_names: Vec<String> = (1..=OUTCOMES).map(|k| format!("outcome[{k}]")).collect();
    for p in 2..=periods + 1 {
        match period_effects {
            PeriodEffects::Shared => s_names.push(format!("period[{p}]")),
            PeriodEffects::ByOutcome => {
                s_names.extend((1..=OUTCOMES).map(|k| format!("period[{p}]:outcome[{k}]")))
            }
        }
    }
    let cluster_fe = design.has_cluster_effects();
    let t_names: Vec<String> = if cluster_fe {
        (1..=design.m).map(|i| format!("cluster[{i}]")).collect()
    } else {
        vec![]
    };

    let rows = design.n * OUTCOMES;
    let mut clusters = Vec::with_capacity(design.m);
    for i in 0..design.m {
        let lo = i * rows;
        let mut r = DMatrix::zeros(rows, 6);
        let mut sm = DMatrix::zeros(rows, s);
        for a in 0..rows {
            let row = lo + a;
            if data.cluster[row] != i + 1 {
                return Err(Error::Data(format!(
                    "row {} is out of cluster order",
                    row + 1
                )));
            }
            let (h, k, p) = (
                data.condition[row] as usize,
                data.outcome[row] as usize,
                data.period[row],
            );
            if h >= 2 {
                r[(a, (h - 2) * OUTCOMES + k - 1)] = 1.0;
            }
            sm[(a, k - 1)] = 1.0;
            if periods > 0 && p >= 2 {
                let offset = if per_period == 1 { 0 } else { k - 1 };
                sm[(a, OUTCOMES + (p - 2) * per_period + offset)] = 1.0;
            }
        }
        let (t, t_index) = if cluster_fe {
            (DMatrix::from_element(rows, 1, 1.0), vec![i])
        } else {
            (DMatrix::zeros(rows, 0), vec![])
        };
        clusters.push(ClusterBlock {
            id: (i + 1).to_string(),
            y: DVector::from_column_slice(&data.y[lo..lo + rows]),
            r,
            s: sm,
            t,
            t_index,
            w: SymMatrix::identity(rows),
        });
    }
    Ok((
        ClusteredDesign::new(clusters, r_names, s_names, t_names)?,
        hypotheses(),
    ))
}

/// A grid of simulation conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub designs: Vec<u8>,
    pub m: Vec<usize>,
    pub n: Vec<usize>,
    pub tau2: Vec<f64>,
    pub rho: Vec<f64>,
    pub sigma_delta2: Vec<f64>,
    /// Hypothesis names from [`HYPOTHESES`].
    pub hypotheses: Vec<String>,
    pub methods: Vec<TestMethod>,
    pub alphas: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub period_effects: PeriodEffects,
}

impl ExperimentConfig {
    /// All 648 conditions: six designs, m ∈ {15, 30, 50}, n ∈ {18, 30}, τ², ρ and σ_δ² levels.
    pub fn full_grid(reps: usize, seed: u64) -> Self {
        ExperimentConfig {
            designs: (1..=6).collect(),
            m: vec![15, 30, 50],
            n: vec![18, 30],
            tau2: vec![0.05, 0.15, 0.25],
            rho: vec![0.2, 0.8],
            sigma_delta2: vec![0.0, 0.01, 0.04],
            hypotheses: HYPOTHESES.iter().map(|(h, _)| h.to_string()).collect(),
            methods: vec![TestMethod::Aht, TestMethod::Standard, TestMethod::Chi2],
            alphas: vec![0.01, 0.05, 0.10],
            reps,
            seed,
            period_effects: PeriodEffects::Shared,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be positive".into()));
        }
        for h in &self.hypotheses {
            if !HYPOTHESES.iter().any(|(name, _)| name == h) {
                return Err(Error::Config(format!("unknown hypothesis `{h}`")));
            }
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(Error::Config(format!("alpha must lie in (0, 1], got {a}")));
        }
        let empty = [
            ("designs", self.designs.is_empty()),
            ("m", self.m.is_empty()),
            ("n", self.n.is_empty()),
            ("tau2", self.tau2.is_empty()),
            ("rho", self.rho.is_empty()),
            ("sigma_delta2", self.sigma_delta2.is_empty()),
            ("hypotheses", self.hypotheses.is_empty()),
            ("methods", self.methods.is_empty()),
            ("alphas", self.alphas.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Config(format!("`{name}` must not be empty")));
        }
        Ok(())
    }
}

/// Rejection rate of one test in one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectionRow {
    pub design: u8,
    pub m: usize,
    pub n: usize,
    pub tau2: f64,
    pub rho: f64,
    pub sigma_delta2: f64,
    pub hypothesis: String,
    pub q: usize,
    pub method: TestMethod,
    pub alpha: f64,
    pub reps: usize,
    /// Replicates where the test could not be computed; excluded from the rate.
    pub failures: usize,
    pub reject_rate: f64,
    pub mc_se: f64,
}

/// Everything about a simulation cell that does not depend on the outcome draw.
pub struct CellPlan {
    pub design: SimDesign,
    pub params: SimParams,
    pub absorbed: Arc<AbsorbedDesign>,
    pub hypotheses: Vec<Hypothesis>,
    cr2: Option<VcovPlan>,
    cr1: Option<VcovPlan>,
    /// AHT degrees of freedom per hypothesis, or the error that prevents the test.
    pub eta: Vec<Result<f64>>,
}

impl CellPlan {
    pub fn new(
        design: SimDesign,
        params: SimParams,
        hypotheses: &[String],
        methods: &[TestMethod],
        period_effects: PeriodEffects,
    ) -> Result<Self> {
        params.validate()?;
        let data = simulate_outcomes(&design, &params, 0, 0)?;
        let (model, all) = build_sim_model_with(&design, &data, period_effects)?;
        let chosen: Vec<Hypothesis> = all
            .into_iter()
            .filter(|h| hypotheses.iter().any(|n| n == h.name))
            .collect();
        let fit = estimator::fit(&model)?;
        let phi = WorkingModel::identity().covariance(&model)?;
        let needs_cr2 = methods.contains(&TestMethod::Aht);
        let needs_cr1 = methods.iter().any(|m| *m != TestMethod::Aht);
        let cr2 = if needs_cr2 {
            Some(VcovPlan::new(&fit, &AdjustmentKind::cr2(), &phi)?)
        } else {
            None
        };
        let cr1 = if needs_cr1 {
            Some(VcovPlan::new(&fit, &AdjustmentKind::Cr1, &phi)?)
        } else {
            None
        };
        let eta = match &cr2 {
            Some(plan) => {
                let v = plan.robust_variance(&fit);
                chosen
                    .iter()
                    .map(|h| inference::aht_df(&fit, &v, &phi, &h.constraint).map(|(eta, _)| eta))
                    .collect()
            }
            None => Vec::new(),
        };
        Ok(CellPlan {
            design,
            params,
            absorbed: Arc::clone(&fit.absorbed),
            hypotheses: chosen,
            cr2,
            cr1,
            eta,
        })
    }

    /// p-values for one replicate, indexed `[hypothesis][method]`; `None` marks a failure.
    pub fn replicate(&self, seed: u64, rep: u64, methods: &[TestMethod]) -> Vec<Vec<Option<f64>>> {
        let y = draw_outcomes(&self.design, &self.params, &mut replicate_rng(seed, rep));
        let fit = match estimator::refit(&self.absorbed, &y) {
            Ok(f) => f,
            Err(_) => return vec![vec![None; methods.len()]; self.hypotheses.len()],
        };
        let v2 = self.cr2.as_ref().map(|p| p.variance(&fit));
        let v1 = self.cr1.as_ref().map(|p| p.variance(&fit));
        self.hypotheses
            .iter()
            .enumerate()
            .map(|(hi, h)| {
                methods
                    .iter()
                    .map(|method| {
                        let q = h.constraint.q();
                        let result = match method {
                            TestMethod::Aht => {
                                let eta = self.eta[hi].as_ref().ok()?;
                                let qs =
                                    inference::wald_with(&fit.beta, v2.as_ref()?, &h.constraint)
                                        .ok()?;
                                inference::aht_test(qs, q, *eta)
                            }
                            TestMethod::Standard => {
                                let qs =
                                    inference::wald_with(&fit.beta, v1.as_ref()?, &h.constraint)
                                        .ok()?;
                                inference::standard_test(qs, q, self.design.m)
                            }
                            TestMethod::Chi2 => {
                                let qs =
                                    inference::wald_with(&fit.beta, v1.as_ref()?, &h.constraint)
                                        .ok()?;
                                inference::chi2_test(qs, q)
                            }
                        };
                        result.ok().map(|r| r.p_value)
                    })
                    .collect()
            })
            .collect()
    }
}

/// Runs `reps` replicates of one cell and tallies rejections.
pub fn run_cell(plan: &CellPlan, cfg: &ExperimentConfig) -> Vec<RejectionRow> {
    let run = |k: usize| plan.replicate(cfg.seed, k as u64, &cfg.methods);
    #[cfg(feature = "parallel")]
    let results: Vec<Vec<Vec<Option<f64>>>> = (0..cfg.reps).into_par_iter().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Vec<Vec<Option<f64>>>> = (0..cfg.reps).map(run).collect();

    let mut rows = Vec::new();
    for (hi, h) in plan.hypotheses.iter().enumerate() {
        for (mi, method) in cfg.methods.iter().enumerate() {
            for &alpha in &cfg.alphas {
                let mut failures = 0;
                let mut rejections = 0;
                for rep in &results {
                    match rep[hi][mi] {
                        None => failures += 1,
                        Some(p) if p < alpha => rejections += 1,
                        Some(_) => {}
                    }
                }
                let used = cfg.reps - failures;
                let (rate, se) = if used == 0 {
                    (f64::NAN, f64::NAN)
                } else {
                    let r = rejections as f64 / used as f64;
                    (r, (r * (1.0 - r) / used as f64).sqrt())
                };
                rows.push(RejectionRow {
                    design: plan.design.id,
                    m: plan.design.m,
                    n: plan.design.n,
                    tau2: plan.params.tau2,
                    rho: plan.params.rho,
                    sigma_delta2: plan.params.sigma_delta2,
                    hypothesis: h.name.to_string(),
                    q: h.constraint.q(),
                    method: *method,
                    alpha,
                    reps: cfg.reps,
                    failures,
                    reject_rate: rate,
                    mc_se: se,
                });
            }
        }
    }
    rows
}

/// Every cell of the grid, in the order designs, m, n, τ², ρ, σ_δ².
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RejectionRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &id in &cfg.designs {
        for &m in &cfg.m {
            for &n in &cfg.n {
                let design = make_design(id, m, n)?;
                for &tau2 in &cfg.tau2 {
                    for &rho in &cfg.rho {
                        for &sigma_delta2 in &cfg.sigma_delta2 {
                            let params = SimParams {
                                tau2,
                                rho,
                                sigma_delta2,
                            };
                            let plan = CellPlan::new(
                                design.clone(),
                                params,
                                &cfg.hypotheses,
                                &cfg.methods,
                                cfg.period_effects,
                            )?;
                            rows.extend(run_cell(&plan, cfg));
                        }
                    }
                }
            }
        }
    }
    Ok(rows)
}
