//! Wald statistics with small-sample reference distributions.
//!
//! The Satterthwaite and AHT degrees of freedom need the covariances
//! `pᵢᵀΦpⱼ` between the cluster contributions `pᵢ = (I - H_X)ᵢᵀAᵢWᵢR̈ᵢh`. Rather than
//! forming the `N`-vectors `pᵢ`, [`DofKernel`] assembles the `r × r` matrices
//! `Kᵢⱼ = R̈ᵢᵀWᵢAᵢᵀ[(I - H_X)Φ(I - H_X)ᵀ]ᵢⱼAⱼWⱼR̈ⱼ` from per-cluster pieces.

use nalgebra::{DMatrix, DVector};

use crate::crve::{self, AdjustmentKind, RobustVariance};
use crate::error::{Error, Result};
use crate::estimator::{check_cov_blocks, map_clusters, FitResult, ProjectionScope};
use crate::matkern::{self, SymMatrix};
use crate::model_frame::Constraint;

/// Condition number beyond which `CVCᵀ` is treated as singular.
pub const WALD_COND_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestMethod {
    Aht,
    Standard,
    Chi2,
}

impl TestMethod {
    pub fn name(&self) -> &'static str {
        match self {
            TestMethod::Aht => "AHT",
            TestMethod::Standard => "Standard",
            TestMethod::Chi2 => "Chi2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub method: TestMethod,
    /// Wald statistic `Q`.
    pub q_stat: f64,
    pub q: usize,
    pub df_num: f64,
    /// `η - q + 1` for AHT, `m - 1` for Standard, infinite for Chi2.
    pub df_denom: f64,
    pub eta: Option<f64>,
    pub f_stat: f64,
    pub p_value: f64,
}

/// Options for the degrees-of-freedom approximations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DfOptions {
    /// Replace `Φᵢ` by `eᵢeᵢᵀ` (experimental).
    pub empirical: bool,
    /// `SkipWithin` drops the within-cluster fixed effects from `pᵢ` (experimental).
    pub scope: ProjectionScope,
}

impl Default for DfOptions {
    fn default() -> Self {
        DfOptions {
            empirical: false,
            scope: ProjectionScope::Full,
        }
    }
}

/// Quantities shared by the AHT degrees of freedom and its diagnostics.
#[derive(Debug, Clone)]
pub struct DofContext {
    /// `C Var(β̂) Cᵀ` under the working model.
    pub g: SymMatrix,
    pub g_half_inv: SymMatrix,
    /// `M_R̈ Cᵀ G^{-1/2}`; column `s` maps `AᵢWᵢR̈ᵢ` to the contribution `pₛᵢ`.
    pub h: DMatrix<f64>,
    /// `Σᵢ Fᵢᵢ`, the expected `Ω` (the identity under a CR2 working model).
    pub expected_omega: SymMatrix,
}

/// Cross-cluster covariance kernel `Kᵢⱼ`, stored in factored form.
pub struct DofKernel {
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    c: Vec<DMatrix<f64>>,
    m_u: DMatrix<f64>,
    mqm: DMatrix<f64>,
}

impl DofKernel {
    /// Builds the kernel for adjustment matrices `adjustments` and error covariance `sigma`.
    pub fn new(
        fit: &FitResult,
        adjustments: &[DMatrix<f64>],
        sigma: &[SymMatrix],
        scope: ProjectionScope,
    ) -> Result<Self> {
        check_cov_blocks(fit, sigma)?;
        if adjustments.len() != fit.m() {
            return Err(Error::InvalidInput(
                "one adjustment matrix per cluster required".into(),
            ));
        }
        let abs = &fit.absorbed;
        let g = crve::weighted_adjusted(fit, adjustments);
        let m_u = abs.m_u().as_matrix().clone();
        let mqm = &m_u * abs.u_sandwich(sigma) * &m_u;
        let parts = map_clusters(fit.m(), |i| {
            let p = abs.within_projector(i, scope);
            let u = abs.u_dd(i);
            let gp = g[i].transpose() * &p;
            let gps = &gp * sigma[i].as_matrix();
            let a = &gps * (abs.weights(i).as_matrix() * u);
            let b = g[i].transpose() * u;
            let c = &gps * gp.transpose();
            (a, b, c)
        });
        let mut k = DofKernel {
            a: Vec::new(),
            b: Vec::new(),
            c: Vec::new(),
            m_u,
            mqm,
        };
        for (a, b, c) in parts {
            k.a.push(a);
            k.b.push(b);
            k.c.push(c);
        }
        Ok(k)
    }

    pub fn m(&self) -> usize {
        self.c.len()
    }

    /// `Fᵢⱼ = HᵀKᵢⱼH` for all cluster pairs, row-major in `i`.
    pub fn projected(&self, h: &DMatrix<f64>) -> Vec<Vec<DMatrix<f64>>> {
        let ht = h.transpose();
        let a: Vec<DMatrix<f64>> = self.a.iter().map(|ai| &ht * ai * &self.m_u).collect();
        let b: Vec<DMatrix<f64>> = self.b.iter().map(|bi| &ht * bi).collect();
        let bq: Vec<DMatrix<f64>> = b.iter().map(|bi| bi * &self.mqm).collect();
        let c: Vec<DMatrix<f64>> = self.c.iter().map(|ci| &ht * ci * h).collect();
        map_clusters(self.m(), |i| {
            (0..self.m())
                .map(|j| {
                    let mut f = &bq[i] * b[j].transpose()
                        - &a[i] * b[j].transpose()
                        - &b[i] * a[j].transpose();
                    if i == j {
                        f += &c[i];
                    }
                    f
                })
                .collect()
        })
    }
}

fn error_covariance(
    fit: &FitResult,
    phi: &[SymMatrix],
    opts: &DfOptions,
) -> Result<Vec<SymMatrix>> {
    if !opts.empirical {
        check_cov_blocks(fit, phi)?;
        return Ok(phi.to_vec());
    }
    if fit.residuals.iter().all(|e| e.iter().all(|v| *v == 0.0)) {
        return Err(Error::Underdetermined(
            "empirical degrees of freedom need nonzero residuals".into(),
        ));
    }
    Ok(fit
        .residuals
        .iter()
        .map(|e| SymMatrix::symmetrized(e * e.transpose()))
        .collect())
}

/// Model-assisted Satterthwaite degrees of freedom for the contrast `cᵀβ`.
pub fn satterthwaite_df(
    fit: &FitResult,
    v: &RobustVariance,
    phi: &[SymMatrix],
    c: &[f64],
) -> Result<f64> {
    satterthwaite_df_with(fit, v, phi, c, &DfOptions::default())
}

pub fn satterthwaite_df_with(
    fit: &FitResult,
    v: &RobustVariance,
    phi: &[SymMatrix],
    c: &[f64],
    opts: &DfOptions,
) -> Result<f64> {
    if c.len() != fit.r() {
        return Err(Error::InvalidInput(format!(
            "contrast has {} entries for {} coefficients",
            c.len(),
            fit.r()
        )));
    }
    let sigma = error_covariance(fit, phi, opts)?;
    let kernel = DofKernel::new(fit, &v.adjustments, &sigma, opts.scope)?;
    let h = fit.absorbed.m_r().as_matrix() * DVector::from_column_slice(c);
    let f = kernel.projected(&DMatrix::from_column_slice(h.len(), 1, h.as_slice()));
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, row) in f.iter().enumerate() {
        num += row[i][(0, 0)];
        for fij in row {
            den += fij[(0, 0)] * fij[(0, 0)];
        }
    }
    if !(den > 0.0) {
        return Err(Error::DegenerateVariance(
            "contrast has zero variance".into(),
        ));
    }
    Ok(num * num / den)
}

/// Degrees of freedom `η` of the approximate Hotelling's T² test.
pub fn aht_df(
    fit: &FitResult,
    v: &RobustVariance,
    phi: &[SymMatrix],
    constraint: &Constraint,
) -> Result<(f64, DofContext)> {
    aht_df_with(fit, v, phi, constraint, &DfOptions::default())
}

pub fn aht_df_with(
    fit: &FitResult,
    v: &RobustVariance,
    phi: &[SymMatrix],
    constraint: &Constraint,
    opts: &DfOptions,
) -> Result<(f64, DofContext)> {
    let c = &constraint.c;
    if c.ncols() != fit.r() {
        return Err(Error::InvalidInput(format!(
            "constraint has {} columns for {} coefficients",
            c.ncols(),
            fit.r()
        )));
    }
    let q = constraint.q();
    let sigma = error_covariance(fit, phi, opts)?;
    let var = crate::estimator::true_variance(fit, &sigma)?;
    let g = SymMatrix::symmetrized(c * var.as_matrix() * c.transpose());
    let g_half_inv = matkern::inv_sqrt_pd(&g).map_err(|_| {
        Error::DegenerateVariance("constraint variance under the working model is singular".into())
    })?;
    let h = fit.absorbed.m_r().as_matrix() * c.transpose() * g_half_inv.as_matrix();
    let kernel = DofKernel::new(fit, &v.adjustments, &sigma, opts.scope)?;
    let f = kernel.projected(&h);
    let mut denom = 0.0;
    let mut expected = DMatrix::zeros(q, q);
    for (i, row) in f.iter().enumerate() {
        expected += &row[i];
        for fij in row {
            let tr = fij.trace();
            denom += (fij * fij).trace() + tr * tr;
        }
    }
    if !(denom > 0.0) {
        return Err(Error::DegenerateVariance(
            "Wald statistic has zero variance".into(),
        ));
    }
    let eta = (q * (q + 1)) as f64 / denom;
    Ok((
        eta,
        DofContext {
            g,
            g_half_inv,
            h,
            expected_omega: SymMatrix::symmetrized(expected),
        },
    ))
}

/// `Q = (Cβ̂ - d)ᵀ(CVCᵀ)⁻¹(Cβ̂ - d)`.
pub fn wald(fit: &FitResult, v: &RobustVariance, constraint: &Constraint) -> Result<f64> {
    wald_with(&fit.beta, &v.v, constraint)
}

pub fn wald_with(beta: &DVector<f64>, v: &SymMatrix, constraint: &Constraint) -> Result<f64> {
    let c = &constraint.c;
    if c.ncols() != beta.len() {
        return Err(Error::InvalidInput(format!(
            "constraint has {} columns for {} coefficients",
            c.ncols(),
            beta.len()
        )));
    }
    let cvc = SymMatrix::symmetrized(c * v.as_matrix() * c.transpose());
    let cond = matkern::condition_number(&cvc)?;
    if !(cond < WALD_COND_LIMIT) || !(cvc.as_matrix().trace() > 0.0) {
        return Err(Error::DegenerateVariance(format!(
            "CVCᵀ has condition number {cond:e}"
        )));
    }
    let inv = matkern::inv_pd(&cvc)
        .map_err(|_| Error::DegenerateVariance("CVCᵀ is not positive definite".into()))?;
    let diff = c * beta - &constraint.d;
    Ok((diff.transpose() * inv.as_matrix() * &diff)[(0, 0)].max(0.0))
}

/// `((η - q + 1)/(ηq)) Q ~ F(q, η - q + 1)`.
pub fn aht_test(q_stat: f64, q: usize, eta: f64) -> Result<TestResult> {
    let qf = q as f64;
    let df_denom = eta - qf + 1.0;
    if !(df_denom > 0.0) {
        return Err(Error::DegreesOfFreedomTooSmall { eta, q });
    }
    let f_stat = df_denom / (eta * qf) * q_stat;
    Ok(TestResult {
        method: TestMethod::Aht,
        q_stat,
        q,
        df_num: qf,
        df_denom,
        eta: Some(eta),
        f_stat,
        p_value: matkern::f_sf(f_stat, qf, df_denom)?,
    })
}

/// `Q/q ~ F(q, m - 1)`.
pub fn standard_test(q_stat: f64, q: usize, m: usize) -> Result<TestResult> {
    if m < 2 {
        return Err(Error::Underdetermined(
            "the standard test needs at least two clusters".into(),
        ));
    }
    let qf = q as f64;
    let df_denom = (m - 1) as f64;
    let f_stat = q_stat / qf;
    Ok(TestResult {
        method: TestMethod::Standard,
        q_stat,
        q,
        df_num: qf,
        df_denom,
        eta: None,
        f_stat,
        p_value: matkern::f_sf(f_stat, qf, df_denom)?,
    })
}

/// `Q ~ χ²(q)`.
pub fn chi2_test(q_stat: f64, q: usize) -> Result<TestResult> {
    let qf = q as f64;
    Ok(TestResult {
        method: TestMethod::Chi2,
        q_stat,
        q,
        df_num: qf,
        df_denom: f64::INFINITY,
        eta: None,
        f_stat: q_stat / qf,
        p_value: matkern::chi2_sf(q_stat, qf)?,
    })
}

/// Runs `method` on `constraint`.
///
/// AHT uses CR2 with working model `phi`; the Standard and χ² tests use CR1.
pub fn test_constraint(
    fit: &FitResult,
    phi: &[SymMatrix],
    constraint: &Constraint,
    method: TestMethod,
) -> Result<(TestResult, RobustVariance)> {
    match method {
        TestMethod::Aht => {
            let v = crve::vcov(fit, &AdjustmentKind::cr2(), phi)?;
            let q_stat = wald(fit, &v, constraint)?;
            let (eta, _) = aht_df(fit, &v, phi, constraint)?;
            Ok((aht_test(q_stat, constraint.q(), eta)?, v))
        }
        TestMethod::Standard | TestMethod::Chi2 => {
            let v = crve::vcov(fit, &AdjustmentKind::Cr1, phi)?;
            let q_stat = wald(fit, &v, constraint)?;
            let result = if method == TestMethod::Standard {
                standard_test(q_stat, constraint.q(), fit.m())?
            } else {
                chi2_test(q_stat, constraint.q())?
            };
            Ok((result, v))
        }
    }
}

/// One focal coefficient with its robust standard error and t-test.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_stat: f64,
    pub df: f64,
    pub p_value: f64,
}

/// t-tests for every focal coefficient. CR2 uses Satterthwaite degrees of freedom,
/// other estimators use `m - 1`.
pub fn coefficient_table(
    fit: &FitResult,
    v: &RobustVariance,
    phi: &[SymMatrix],
) -> Result<Vec<CoefficientRow>> {
    let r = fit.r();
    let se = v.std_errors();
    let mut rows = Vec::with_capacity(r);
    for j in 0..r {
        let df = match v.kind {
            AdjustmentKind::Cr2 { .. } => {
                let mut c = vec![0.0; r];
                c[j] = 1.0;
                satterthwaite_df(fit, v, phi, &c)?
            }
            _ => (fit.m().max(2) - 1) as f64,
        };
        let estimate = fit.beta[j];
        let t_stat = if se[j] > 0.0 {
            estimate / se[j]
        } else {
            f64::NAN
        };
        let p_value = if t_stat.is_finite() {
            matkern::t_sf_two_sided(t_stat, df)?
        } else {
            f64::NAN
        };
        rows.push(CoefficientRow {
            name: fit.design().r_names()[j].clone(),
            estimate,
            std_error: se[j],
            t_stat,
            df,
            p_value,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::fit;
    use crate::model_frame::{build_design, Column, ModelSpec, Table, WorkingModel};

    fn toy() -> FitResult {
        let g = ["a", "a", "a", "b", "b", "c", "c", "c", "d", "d", "e", "e"];
        let t = Table::new(vec![
            (
                "y".into(),
                Column::Numeric(vec![
                    1.0, 2.2, 0.1, 1.9, 3.5, -0.8, 0.7, 1.1, 2.4, 0.3, 1.2, 0.9,
                ]),
            ),
            (
                "x".into(),
                Column::Numeric(vec![
                    0.3, 1.2, -0.4, 0.8, 2.1, -1.1, 0.0, 0.6, 1.5, -0.2, 0.4, 0.1,
                ]),
            ),
            (
                "z".into(),
                Column::Numeric(vec![
                    1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0,
                ]),
            ),
            ("one".into(), Column::Numeric(vec![1.0; 12])),
            (
                "g".into(),
                Column::Text(g.iter().map(|s| s.to_string()).collect()),
            ),
        ])
        .unwrap();
        fit(&build_design(&t, &ModelSpec::new("y", &["one", "x", "z"], "g")).unwrap()).unwrap()
    }

    #[test]
    fn scalar_and_euclidean_wald() {
        let beta = DVector::from_vec(vec![3.0, 4.0]);
        let c = Constraint::zero(DMatrix::identity(2, 2)).unwrap();
        assert!((wald_with(&beta, &SymMatrix::identity(2), &c).unwrap() - 25.0).abs() < 1e-12);
        let c1 = Constraint::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::from_vec(vec![1.0]),
        )
        .unwrap();
        let v = SymMatrix::from_diagonal(&[0.5, 2.0]);
        assert!((wald_with(&beta, &v, &c1).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn singular_wald_is_rejected() {
        let beta = DVector::from_vec(vec![1.0, 1.0]);
        let v = SymMatrix::from_diagonal(&[1.0, 0.0]);
        let c = Constraint::zero(DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(
            wald_with(&beta, &v, &c),
            Err(Error::DegenerateVariance(_))
        ));
    }

    #[test]
    fn aht_reduces_to_satterthwaite() {
        let f = toy();
        let phi = WorkingModel::identity().covariance(f.design()).unwrap();
        let v = crve::vcov(&f, &AdjustmentKind::cr2(), &phi).unwrap();
        let c = [0.0, 1.0, -0.5];
        let nu = satterthwaite_df(&f, &v, &phi, &c).unwrap();
        let (eta, ctx) = aht_df(
            &f,
            &v,
            &phi,
            &Constraint::zero(DMatrix::from_row_slice(1, 3, &c)).unwrap(),
        )
        .unwrap();
        assert!((nu - eta).abs() < 1e-10 * nu);
        assert!((ctx.expected_omega[(0, 0)] - 1.0).abs() < 1e-10);
        let nu2 = satterthwaite_df(&f, &v, &phi, &[0.0, 2.0, -1.0]).unwrap();
        assert!((nu - nu2).abs() < 1e-10 * nu);
    }

    #[test]
    fn expected_omega_is_identity() {
        let f = toy();
        let phi = WorkingModel::compound_symmetric(0.25)
            .covariance(f.design())
            .unwrap();
        let v = crve::vcov(&f, &AdjustmentKind::cr2(), &phi).unwrap();
        let c = Constraint::select(3, &[1, 2]).unwrap();
        let (_, ctx) = aht_df(&f, &v, &phi, &c).unwrap();
        assert!((ctx.expected_omega.as_matrix() - DMatrix::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn test_helpers() {
        let r = aht_test(0.0, 2, 8.0).unwrap();
        assert_eq!(r.p_value, 1.0);
        let r = aht_test(5.0, 2, 10.0).unwrap();
        assert!((r.f_stat - 2.25).abs() < 1e-14);
        assert_eq!(r.df_denom, 9.0);
        assert_eq!(
            aht_test(1.0, 3, 2.0).unwrap_err(),
            Error::DegreesOfFreedomTooSmall { eta: 2.0, q: 3 }
        );
        let r = chi2_test(5.991, 2).unwrap();
        assert!((r.p_value - 0.05).abs() < 1e-4);
        let r = standard_test(4.0, 1, 1_000_000).unwrap();
        assert!((r.p_value - 0.0455).abs() < 1e-3);
        let r = standard_test(4.0, 1, 9).unwrap();
        assert!((r.p_value - matkern::t_sf_two_sided(2.0, 8.0).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn empirical_plugin() {
        let mut f = toy();
        let phi = WorkingModel::identity().covariance(f.design()).unwrap();
        let v = crve::vcov(&f, &AdjustmentKind::cr2(), &phi).unwrap();
        let opts = DfOptions {
            empirical: true,
            ..DfOptions::default()
        };
        let nu = satterthwaite_df_with(&f, &v, &phi, &[0.0, 1.0, 0.0], &opts).unwrap();
        assert!(nu > 0.0 && nu.is_finite());
        // the empirical variant equals the model-assisted one when Φᵢ = eᵢeᵢᵀ
        let plug: Vec<SymMatrix> = f
            .residuals
            .iter()
            .map(|e| SymMatrix::symmetrized(e * e.transpose()))
            .collect();
        let direct = satterthwaite_df(&f, &v, &plug, &[0.0, 1.0, 0.0]).unwrap();
        assert!((nu - direct).abs() < 1e-12 * nu);
        for e in f.residuals.iter_mut() {
            e.fill(0.0);
        }
        let err = satterthwaite_df_with(&f, &v, &phi, &[0.0, 1.0, 0.0], &opts).unwrap_err();
        assert!(matches!(err, Error::Underdetermined(_)));
    }
}
