//! Cluster-robust sandwich variance estimators.
//!
//! Every estimator has the form `V = M_R̈ (Σᵢ R̈ᵢᵀWᵢAᵢeᵢeᵢᵀAᵢᵀWᵢR̈ᵢ) M_R̈` and differs only
//! in the adjustment matrices `Aᵢ`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimator::{check_cov_blocks, map_clusters, FitResult, ProjectionScope};
use crate::matkern::{self, SymMatrix};

/// Relative eigenvalue cutoff for the pseudo-inverse square root of `Bᵢ`.
pub const CR2_RANK_TOL: f64 = 1e-12;
/// Relative eigenvalue floor for the leave-one-cluster-out Gram matrices.
pub const IDENTIFICATION_TOL: f64 = 1e-8;
/// Allowed deviation `‖WᵢΦᵢ - I‖` for the absorbed shortcut.
pub const SHORTCUT_TOL: f64 = 1e-8;
const CR3_SINGULAR_TOL: f64 = 1e-12;
const IDENTITY_TOL: f64 = 1e-12;

/// How CR2 adjustment matrices are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cr2Path {
    /// Closed form when `W` and `Φ` are both (multiples of) the identity, general otherwise.
    Auto,
    /// `Bᵢ = Dᵢ[(I - H_X)Φ(I - H_X)ᵀ]ᵢᵢDᵢᵀ`.
    General,
    /// Skips the within-cluster projection; requires `W = Φ⁻¹`.
    AbsorbedShortcut,
    /// `Aᵢ = (I - Üᵢ M_Ü Üᵢᵀ)^{+1/2}`; requires `W = I` and `Φ ∝ I`.
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjustmentKind {
    Cr0,
    Cr1,
    /// Small-sample factor `√(mN / ((m-1)(N-p)))`. `p` counts every retained fixed effect
    /// unless `absorbed_dimension` is set, in which case within-cluster effects are left out.
    Cr1s {
        absorbed_dimension: bool,
    },
    Cr2 {
        path: Cr2Path,
    },
    Cr3,
}

impl AdjustmentKind {
    pub fn cr1s() -> Self {
        AdjustmentKind::Cr1s {
            absorbed_dimension: false,
        }
    }

    pub fn cr2() -> Self {
        AdjustmentKind::Cr2 {
            path: Cr2Path::Auto,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AdjustmentKind::Cr0 => "CR0",
            AdjustmentKind::Cr1 => "CR1",
            AdjustmentKind::Cr1s { .. } => "CR1S",
            AdjustmentKind::Cr2 { .. } => "CR2",
            AdjustmentKind::Cr3 => "CR3",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RobustVariance {
    pub v: SymMatrix,
    pub kind: AdjustmentKind,
    /// Per-cluster contributions `R̈ᵢᵀWᵢAᵢeᵢeᵢᵀAᵢᵀWᵢR̈ᵢ`.
    pub meat: Vec<SymMatrix>,
    /// Per-cluster adjustment matrices `Aᵢ`.
    pub adjustments: Vec<DMatrix<f64>>,
}

impl RobustVariance {
    /// Standard errors of the focal coefficients.
    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.v.dim())
            .map(|j| self.v[(j, j)].max(0.0).sqrt())
            .collect()
    }
}

fn max_abs_deviation(m: &DMatrix<f64>, target: &DMatrix<f64>) -> f64 {
    (m - target).amax()
}

fn is_scaled_identity(m: &SymMatrix, c: f64) -> bool {
    let n = m.dim();
    max_abs_deviation(m.as_matrix(), &(DMatrix::identity(n, n) * c))
        <= IDENTITY_TOL * c.abs().max(1.0)
}

fn closed_form_applies(fit: &FitResult, phi: &[SymMatrix]) -> bool {
    let c = phi[0][(0, 0)];
    fit.design()
        .clusters()
        .iter()
        .zip(phi)
        .all(|(b, p)| is_scaled_identity(&b.w, 1.0) && is_scaled_identity(p, c))
}

fn shortcut_deviation(fit: &FitResult, phi: &[SymMatrix]) -> f64 {
    fit.design()
        .clusters()
        .iter()
        .zip(phi)
        .map(|(b, p)| {
            let n = b.n();
            max_abs_deviation(&(b.w.as_matrix() * p.as_matrix()), &DMatrix::identity(n, n))
        })
        .fold(0.0, f64::max)
}

/// Checks that the focal and between-cluster coefficients stay identified with each cluster
/// removed: `ÜᵀWÜ - ÜᵢᵀWᵢÜᵢ` must be numerically full rank.
///
/// When fixed-effect indicators were moved into the focal block, only the remaining focal
/// columns are checked, through the Schur complement of the indicator block.
pub fn check_identification(fit: &FitResult) -> Result<()> {
    let a = &fit.absorbed;
    let total = matkern::inv_pd(a.m_u())?;
    let nuisance = fit.design().dummy_focal();
    let k = total.dim();
    let keep = fit.r() - nuisance;
    for (i, b) in fit.design().clusters().iter().enumerate() {
        let u = a.u_dd(i);
        let own = u.transpose() * (b.w.as_matrix() * u);
        let full = total.as_matrix() - own;
        let li = if nuisance == 0 {
            SymMatrix::symmetrized(full)
        } else {
            // columns [0, keep) and [r, k) are checked; [keep, r) are indicators
            let idx: Vec<usize> = (0..keep).chain(fit.r()..k).collect();
            let pick = |rows: &[usize], cols: &[usize]| {
                DMatrix::from_fn(rows.len(), cols.len(), |x, y| full[(rows[x], cols[y])])
            };
            let dummies: Vec<usize> = (keep..fit.r()).collect();
            let cross = pick(&idx, &dummies);
            let inner = matkern::pinv_psd(
                &SymMatrix::symmetrized(pick(&dummies, &dummies)),
                Some(CR2_RANK_TOL),
            )?;
            SymMatrix::symmetrized(
                pick(&idx, &idx) - &cross * inner.as_matrix() * cross.transpose(),
            )
        };
        let dim = li.dim();
        if dim == 0 {
            continue;
        }
        let eig = matkern::sym_eigen(&li)?;
        let (hi, lo) = (eig.values[0], eig.values[dim - 1]);
        if !(hi > 0.0) || lo <= IDENTIFICATION_TOL * hi {
            return Err(Error::ClusterIdentification {
                cluster: b.id.clone(),
            });
        }
    }
    Ok(())
}

fn cr2_adjustments(fit: &FitResult, path: Cr2Path, phi: &[SymMatrix]) -> Result<Vec<DMatrix<f64>>> {
    check_identification(fit)?;
    let path = match path {
        Cr2Path::Auto if closed_form_applies(fit, phi) => Cr2Path::ClosedForm,
        Cr2Path::Auto => Cr2Path::General,
        Cr2Path::ClosedForm if !closed_form_applies(fit, phi) => {
            return Err(Error::ShortcutInvalid {
                deviation: shortcut_deviation(fit, phi).max(IDENTITY_TOL),
            });
        }
        Cr2Path::AbsorbedShortcut => {
            let deviation = shortcut_deviation(fit, phi);
            if deviation > SHORTCUT_TOL {
                return Err(Error::ShortcutInvalid { deviation });
            }
            Cr2Path::AbsorbedShortcut
        }
        other => other,
    };
    let a = &fit.absorbed;
    if path == Cr2Path::ClosedForm {
        let m_u = a.m_u().as_matrix();
        return map_clusters(fit.m(), |i| {
            let u = a.u_dd(i);
            let n = u.nrows();
            let b = SymMatrix::symmetrized(DMatrix::identity(n, n) - u * m_u * u.transpose());
            Ok(matkern::pinv_sqrt_psd(&b, Some(CR2_RANK_TOL))?.into_matrix())
        })
        .into_iter()
        .collect();
    }
    let scope = if path == Cr2Path::AbsorbedShortcut {
        ProjectionScope::SkipWithin
    } else {
        ProjectionScope::Full
    };
    let blocks = a.residual_cov_diag(phi, scope);
    map_clusters(fit.m(), |i| {
        let d = matkern::chol_upper(&phi[i])?;
        let b = SymMatrix::symmetrized(&d * &blocks[i] * d.transpose());
        let root = matkern::pinv_sqrt_psd(&b, Some(CR2_RANK_TOL))?;
        Ok(d.transpose() * root.as_matrix() * d)
    })
    .into_iter()
    .collect()
}

fn cr3_adjustments(fit: &FitResult) -> Result<Vec<DMatrix<f64>>> {
    let a = &fit.absorbed;
    let m_r = a.m_r().as_matrix();
    map_clusters(fit.m(), |i| {
        let r = a.r_dd(i);
        let n = r.nrows();
        let h = DMatrix::identity(n, n) - r * m_r * r.transpose() * a.weights(i).as_matrix();
        let sv = h.clone().svd(false, false).singular_values;
        let (hi, lo) = (sv.max(), sv.min());
        if lo < CR3_SINGULAR_TOL * hi.max(1.0) {
            return Err(Error::SingularAdjustment {
                cluster: fit.design().clusters()[i].id.clone(),
            });
        }
        h.try_inverse().ok_or_else(|| Error::SingularAdjustment {
            cluster: fit.design().clusters()[i].id.clone(),
        })
    })
    .into_iter()
    .collect()
}

/// Adjustment matrices `Aᵢ` for `kind`. `phi` is only read by CR2.
pub fn adjustment_matrices(
    fit: &FitResult,
    kind: &AdjustmentKind,
    phi: &[SymMatrix],
) -> Result<Vec<DMatrix<f64>>> {
    let m = fit.m() as f64;
    let scaled_identity = |c: f64| -> Vec<DMatrix<f64>> {
        fit.design()
            .clusters()
            .iter()
            .map(|b| DMatrix::identity(b.n(), b.n()) * c)
            .collect()
    };
    match *kind {
        AdjustmentKind::Cr0 => Ok(scaled_identity(1.0)),
        AdjustmentKind::Cr1 | AdjustmentKind::Cr1s { .. } if fit.m() < 2 => Err(
            Error::Underdetermined("small-sample factor needs at least two clusters".into()),
        ),
        AdjustmentKind::Cr1 => Ok(scaled_identity((m / (m - 1.0)).sqrt())),
        AdjustmentKind::Cr1s { absorbed_dimension } => {
            let n = fit.design().n_total() as f64;
            let a = &fit.absorbed;
            let p = if absorbed_dimension {
                a.r() + a.s_rank()
            } else {
                a.full_rank()
            } as f64;
            if n <= p {
                return Err(Error::Underdetermined(format!(
                    "{n} observations for {p} parameters"
                )));
            }
            Ok(scaled_identity((m * n / ((m - 1.0) * (n - p))).sqrt()))
        }
        AdjustmentKind::Cr2 { path } => {
            check_cov_blocks(fit, phi)?;
            cr2_adjustments(fit, path, phi)
        }
        AdjustmentKind::Cr3 => cr3_adjustments(fit),
    }
}

/// `AᵢWᵢR̈ᵢ` for every cluster.
pub(crate) fn weighted_adjusted(
    fit: &FitResult,
    adjustments: &[DMatrix<f64>],
) -> Vec<DMatrix<f64>> {
    let a = &fit.absorbed;
    map_clusters(fit.m(), |i| {
        &adjustments[i] * (a.weights(i).as_matrix() * a.r_dd(i))
    })
}

/// Adjustment matrices folded into `AᵢWᵢR̈ᵢ`, reusable across outcomes on the same design.
#[derive(Debug, Clone)]
pub struct VcovPlan {
    pub kind: AdjustmentKind,
    pub adjustments: Vec<DMatrix<f64>>,
    g: Vec<DMatrix<f64>>,
}

impl VcovPlan {
    pub fn new(fit: &FitResult, kind: &AdjustmentKind, phi: &[SymMatrix]) -> Result<Self> {
        let adjustments = adjustment_matrices(fit, kind, phi)?;
        let g = weighted_adjusted(fit, &adjustments);
        Ok(VcovPlan {
            kind: *kind,
            adjustments,
            g,
        })
    }

    /// Per-cluster meat terms and `V` for the residuals of `fit`.
    pub fn apply(&self, fit: &FitResult) -> (SymMatrix, Vec<SymMatrix>) {
        let meat: Vec<SymMatrix> = self
            .g
            .iter()
            .zip(&fit.residuals)
            .map(|(gi, ei)| {
                let s = gi.transpose() * ei;
                SymMatrix::symmetrized(&s * s.transpose())
            })
            .collect();
        let r = fit.r();
        let mut total = DMatrix::zeros(r, r);
        for mi in &meat {
            total += mi.as_matrix();
        }
        let m_r = fit.absorbed.m_r().as_matrix();
        (SymMatrix::symmetrized(m_r * total * m_r), meat)
    }

    /// Only `V`, skipping the per-cluster terms.
    pub fn variance(&self, fit: &FitResult) -> SymMatrix {
        let r = fit.r();
        let mut total = DMatrix::zeros(r, r);
        for (gi, ei) in self.g.iter().zip(&fit.residuals) {
            let s = gi.transpose() * ei;
            total += &s * s.transpose();
        }
        let m_r = fit.absorbed.m_r().as_matrix();
        SymMatrix::symmetrized(m_r * total * m_r)
    }

    pub fn robust_variance(&self, fit: &FitResult) -> RobustVariance {
        let (v, meat) = self.apply(fit);
        RobustVariance {
            v,
            kind: self.kind,
            meat,
            adjustments: self.adjustments.clone(),
        }
    }
}

/// Robust variance of `β̂` with adjustment `kind`.
pub fn vcov(fit: &FitResult, kind: &AdjustmentKind, phi: &[SymMatrix]) -> Result<RobustVariance> {
    let plan = VcovPlan::new(fit, kind, phi)?;
    let (v, meat) = plan.apply(fit);
    Ok(RobustVariance {
        v,
        kind: *kind,
        meat,
        adjustments: plan.adjustments,
    })
}

/// Expectation of the robust variance when `Var(εᵢ) = Σᵢ`.
pub fn expected_vcov(
    fit: &FitResult,
    kind: &AdjustmentKind,
    phi: &[SymMatrix],
    sigma: &[SymMatrix],
) -> Result<SymMatrix> {
    check_cov_blocks(fit, sigma)?;
    let adjustments = adjustment_matrices(fit, kind, phi)?;
    Ok(expected_with(fit, &adjustments, sigma))
}

pub(crate) fn expected_with(
    fit: &FitResult,
    adjustments: &[DMatrix<f64>],
    sigma: &[SymMatrix],
) -> SymMatrix {
    let g = weighted_adjusted(fit, adjustments);
    let blocks = fit.absorbed.residual_cov_diag(sigma, ProjectionScope::Full);
    let r = fit.r();
    let mut total = DMatrix::zeros(r, r);
    for (gi, bi) in g.iter().zip(&blocks) {
        total += gi.transpose() * bi * gi;
    }
    let m_r = fit.absorbed.m_r().as_matrix();
    SymMatrix::symmetrized(m_r * total * m_r)
}
