//! Fixed-effect absorption and weighted least squares for the focal coefficients.
//!
//! Within-cluster fixed effects `T` are projected out cluster by cluster, then the
//! between-cluster fixed effects `S̈ = (I - H_T)S` are projected out globally, leaving
//! `R̈` and `ÿ`. All projections are oblique in the `W` inner product:
//! `H_Z = Z (ZᵀWZ)⁻¹ ZᵀW`. The full residual projection is applied in factored form,
//! `(I - H_X) = (I - H_R̈)(I - H_S̈)(I - H_T)`, without ever forming an `N × N` matrix.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matkern::{self, SymMatrix};
use crate::model_frame::ClusteredDesign;

/// Squared-norm ratio below which a column is treated as linearly dependent on earlier ones.
const DEPENDENCE_TOL: f64 = 1e-10;

/// Which fixed-effect steps the residual projection includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionScope {
    /// `(I - H_X)`: within, between and focal steps.
    Full,
    /// `(I - H_R̈)(I - H_S̈)`: the within-cluster step is skipped.
    SkipWithin,
}

/// A block-stacked `N × k` matrix, one block of rows per cluster.
pub type Blocks = Vec<DMatrix<f64>>;

#[derive(Debug, Clone)]
pub struct AbsorbedDesign {
    design: ClusteredDesign,
    /// Retained within-cluster columns per cluster and `(TᵢᵀWᵢTᵢ)⁻¹`.
    t_kept: Vec<DMatrix<f64>>,
    m_t: Vec<DMatrix<f64>>,
    /// Indices into the design's `S` columns that survive absorption.
    s_kept: Vec<usize>,
    s_dd: Blocks,
    m_s: DMatrix<f64>,
    u_dd: Blocks,
    r_dd: Blocks,
    y_dd: Vec<DVector<f64>>,
    m_r: SymMatrix,
    m_u: SymMatrix,
    t_rank: usize,
}

fn weighted_cross(a: &Blocks, w: &[&SymMatrix], b: &Blocks) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a[0].ncols(), b[0].ncols());
    for ((ai, wi), bi) in a.iter().zip(w).zip(b) {
        out += ai.transpose() * (wi.as_matrix() * bi);
    }
    out
}

fn submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

fn select_columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |i, j| m[(i, idx[j])])
}

/// Absorbs the fixed effects of `design`.
///
/// Redundant `S` or `T` columns are dropped in input order; a focal covariate that is
/// collinear with the fixed effects or with earlier focal covariates is an error.
pub fn absorb(design: &ClusteredDesign) -> Result<AbsorbedDesign> {
    let clusters = design.clusters();
    let w: Vec<&SymMatrix> = clusters.iter().map(|c| &c.w).collect();

    // within-cluster step
    let mut t_kept = Vec::with_capacity(clusters.len());
    let mut m_t = Vec::with_capacity(clusters.len());
    let mut t_rank = 0;
    for c in clusters {
        if c.t.ncols() == 0 {
            t_kept.push(DMatrix::zeros(c.n(), 0));
            m_t.push(DMatrix::zeros(0, 0));
            continue;
        }
        let gram = c.t.transpose() * (c.w.as_matrix() * &c.t);
        let reference: Vec<f64> = (0..gram.nrows()).map(|j| gram[(j, j)]).collect();
        let keep = matkern::independent_columns(&gram, &reference, DEPENDENCE_TOL);
        let tk = select_columns(&c.t, &keep);
        let inv = matkern::inv_pd(&SymMatrix::symmetrized(submatrix(&gram, &keep)))?;
        t_rank += keep.len();
        t_kept.push(tk);
        m_t.push(inv.into_matrix());
    }

    let within = |c: usize, v: &DMatrix<f64>| -> DMatrix<f64> {
        let t = &t_kept[c];
        if t.ncols() == 0 {
            return v.clone();
        }
        let coef = &m_t[c] * (t.transpose() * (w[c].as_matrix() * v));
        v - t * coef
    };

    let s_dot: Blocks = clusters
        .iter()
        .enumerate()
        .map(|(i, c)| within(i, &c.s))
        .collect();
    let r_dot: Blocks = clusters
        .iter()
        .enumerate()
        .map(|(i, c)| within(i, &c.r))
        .collect();

    // between-cluster step
    let s = design.s();
    let (s_kept, s_dd, m_s) = if s == 0 {
        (
            Vec::new(),
            s_dot
                .iter()
                .map(|b| DMatrix::zeros(b.nrows(), 0))
                .collect::<Blocks>(),
            DMatrix::zeros(0, 0),
        )
    } else {
        let raw: Blocks = clusters.iter().map(|c| c.s.clone()).collect();
        let reference_gram = weighted_cross(&raw, &w, &raw);
        let reference: Vec<f64> = (0..s).map(|j| reference_gram[(j, j)]).collect();
        let gram = weighted_cross(&s_dot, &w, &s_dot);
        let keep = matkern::independent_columns(&gram, &reference, DEPENDENCE_TOL);
        let inv = matkern::inv_pd(&SymMatrix::symmetrized(submatrix(&gram, &keep)))?.into_matrix();
        let blocks = s_dot.iter().map(|b| select_columns(b, &keep)).collect();
        (keep, blocks, inv)
    };

    let between = |v: &Blocks| -> Blocks {
        if s_kept.is_empty() {
            return v.clone();
        }
        let coef = &m_s * weighted_cross(&s_dd, &w, v);
        v.iter()
            .zip(&s_dd)
            .map(|(vi, si)| vi - si * &coef)
            .collect()
    };
    let r_dd = between(&r_dot);

    // focal identification
    let r = design.r();
    let gram_r = weighted_cross(&r_dd, &w, &r_dd);
    let raw_r: Blocks = clusters.iter().map(|c| c.r.clone()).collect();
    let ref_r = weighted_cross(&raw_r, &w, &raw_r);
    let reference: Vec<f64> = (0..r).map(|j| ref_r[(j, j)]).collect();
    let keep = matkern::independent_columns(&gram_r, &reference, DEPENDENCE_TOL);
    if keep.len() < r {
        let columns = (0..r)
            .filter(|j| !keep.contains(j))
            .map(|j| design.r_names()[j].clone())
            .collect();
        return Err(Error::CollinearFocal { columns });
    }
    let m_r =
        matkern::inv_pd(&SymMatrix::symmetrized(gram_r)).map_err(|_| Error::CollinearFocal {
            columns: design.r_names().to_vec(),
        })?;

    let u_dd: Blocks = r_dot
        .iter()
        .zip(&s_dd)
        .map(|(ri, si)| {
            let mut u = DMatrix::zeros(ri.nrows(), ri.ncols() + si.ncols());
            u.columns_mut(0, ri.ncols()).copy_from(ri);
            u.columns_mut(ri.ncols(), si.ncols()).copy_from(si);
            u
        })
        .collect();
    let m_u = matkern::inv_pd(&SymMatrix::symmetrized(weighted_cross(&u_dd, &w, &u_dd)))?;

    let mut absorbed = AbsorbedDesign {
        design: design.clone(),
        t_kept,
        m_t,
        s_kept,
        s_dd,
        m_s,
        u_dd,
        r_dd,
        y_dd: Vec::new(),
        m_r,
        m_u,
        t_rank,
    };
    let y: Vec<DVector<f64>> = clusters.iter().map(|c| c.y.clone()).collect();
    absorbed.y_dd = absorbed.project_outcome(&y);
    Ok(absorbed)
}

impl AbsorbedDesign {
    pub fn design(&self) -> &ClusteredDesign {
        &self.design
    }

    pub fn m(&self) -> usize {
        self.design.m()
    }

    pub fn r(&self) -> usize {
        self.design.r()
    }

    pub fn weights(&self, i: usize) -> &SymMatrix {
        &self.design.clusters()[i].w
    }

    /// `R̈ᵢ`
    pub fn r_dd(&self, i: usize) -> &DMatrix<f64> {
        &self.r_dd[i]
    }

    /// `ÿᵢ`
    pub fn y_dd(&self, i: usize) -> &DVector<f64> {
        &self.y_dd[i]
    }

    /// `S̈ᵢ` restricted to the retained between-cluster columns.
    pub fn s_dd(&self, i: usize) -> &DMatrix<f64> {
        &self.s_dd[i]
    }

    /// `Üᵢ = [(I - H_T)Rᵢ, S̈ᵢ]`.
    pub fn u_dd(&self, i: usize) -> &DMatrix<f64> {
        &self.u_dd[i]
    }

    /// Retained within-cluster columns of cluster `i`.
    pub fn t_kept(&self, i: usize) -> &DMatrix<f64> {
        &self.t_kept[i]
    }

    /// `(R̈ᵀWR̈)⁻¹`
    pub fn m_r(&self) -> &SymMatrix {
        &self.m_r
    }

    /// `(ÜᵀWÜ)⁻¹`
    pub fn m_u(&self) -> &SymMatrix {
        &self.m_u
    }

    /// Indices of the between-cluster columns that survived absorption.
    pub fn s_kept(&self) -> &[usize] {
        &self.s_kept
    }

    /// Number of retained between-cluster columns.
    pub fn s_rank(&self) -> usize {
        self.s_kept.len()
    }

    /// Number of retained within-cluster columns.
    pub fn t_rank(&self) -> usize {
        self.t_rank
    }

    /// Rank of the full design `[R S T]`.
    pub fn full_rank(&self) -> usize {
        self.r() + self.s_rank() + self.t_rank
    }

    fn within_step(&self, v: &mut Blocks, transpose: bool) {
        for (i, vi) in v.iter_mut().enumerate() {
            let t = &self.t_kept[i];
            if t.ncols() == 0 {
                continue;
            }
            let w = self.weights(i).as_matrix();
            if transpose {
                let coef = &self.m_t[i] * (t.transpose() * &*vi);
                *vi -= w * (t * coef);
            } else {
                let coef = &self.m_t[i] * (t.transpose() * (w * &*vi));
                *vi -= t * coef;
            }
        }
    }

    fn global_step(&self, z: &Blocks, m: &DMatrix<f64>, v: &mut Blocks, transpose: bool) {
        if m.nrows() == 0 {
            return;
        }
        let k = v[0].ncols();
        let mut acc = DMatrix::zeros(m.nrows(), k);
        for (i, (zi, vi)) in z.iter().zip(v.iter()).enumerate() {
            if transpose {
                acc += zi.transpose() * vi;
            } else {
                acc += zi.transpose() * (self.weights(i).as_matrix() * vi);
            }
        }
        let coef = m * acc;
        for (i, (zi, vi)) in z.iter().zip(v.iter_mut()).enumerate() {
            if transpose {
                *vi -= self.weights(i).as_matrix() * (zi * &coef);
            } else {
                *vi -= zi * &coef;
            }
        }
    }

    /// `ÿ = (I - H_S̈)(I - H_T)y` for an outcome with the design's row layout.
    pub fn project_outcome(&self, y: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let mut v: Blocks = y
            .iter()
            .map(|yi| DMatrix::from_column_slice(yi.len(), 1, yi.as_slice()))
            .collect();
        self.within_step(&mut v, false);
        self.global_step(&self.s_dd, &self.m_s, &mut v, false);
        v.into_iter().map(|b| b.column(0).into_owned()).collect()
    }

    /// Applies the residual projection `(I - H_X)` (or its `SkipWithin` part) in place.
    pub fn project_residual(&self, v: &mut Blocks, scope: ProjectionScope) {
        if scope == ProjectionScope::Full {
            self.within_step(v, false);
        }
        self.global_step(&self.s_dd, &self.m_s, v, false);
        self.global_step(&self.r_dd, self.m_r.as_matrix(), v, false);
    }

    /// Applies the transpose of [`project_residual`](Self::project_residual) in place.
    pub fn project_residual_t(&self, v: &mut Blocks, scope: ProjectionScope) {
        self.global_step(&self.r_dd, self.m_r.as_matrix(), v, true);
        self.global_step(&self.s_dd, &self.m_s, v, true);
        if scope == ProjectionScope::Full {
            self.within_step(v, true);
        }
    }

    /// Diagonal block `[(I - H) Σ (I - H)ᵀ]ᵢᵢ` for a block-diagonal `Σ`.
    pub fn residual_cov_block(
        &self,
        sigma: &[SymMatrix],
        i: usize,
        scope: ProjectionScope,
    ) -> DMatrix<f64> {
        let clusters = self.design.clusters();
        let ni = clusters[i].n();
        let mut v: Blocks = clusters
            .iter()
            .enumerate()
            .map(|(k, c)| {
                if k == i {
                    DMatrix::identity(ni, ni)
                } else {
                    DMatrix::zeros(c.n(), ni)
                }
            })
            .collect();
        self.project_residual_t(&mut v, scope);
        for (vk, sk) in v.iter_mut().zip(sigma) {
            *vk = sk.as_matrix() * &*vk;
        }
        self.project_residual(&mut v, scope);
        v.swap_remove(i)
    }

    /// `Pᵢ = I - Tᵢ M_Tᵢ TᵢᵀWᵢ`, the within-cluster factor of `(I - H_X)ᵢᵢ` (identity for `SkipWithin`).
    pub fn within_projector(&self, i: usize, scope: ProjectionScope) -> DMatrix<f64> {
        let n = self.design.clusters()[i].n();
        let mut p = DMatrix::identity(n, n);
        let t = &self.t_kept[i];
        if scope == ProjectionScope::Full && t.ncols() > 0 {
            p -= t * (&self.m_t[i] * (t.transpose() * self.weights(i).as_matrix()));
        }
        p
    }

    /// `Σⱼ ÜⱼᵀWⱼΣⱼWⱼÜⱼ`
    pub fn u_sandwich(&self, sigma: &[SymMatrix]) -> DMatrix<f64> {
        let k = self.m_u.dim();
        let mut q = DMatrix::zeros(k, k);
        for (i, s) in sigma.iter().enumerate() {
            let wu = self.weights(i).as_matrix() * &self.u_dd[i];
            q += wu.transpose() * (s.as_matrix() * wu);
        }
        q
    }

    /// Every diagonal block `[(I - H) Σ (I - H)ᵀ]ᵢᵢ`.
    ///
    /// Uses `(I - H_X)ᵢₖ = δᵢₖPᵢ - Üᵢ M_Ü ÜₖᵀWₖ`, so no `N`-row products are needed.
    pub fn residual_cov_diag(
        &self,
        sigma: &[SymMatrix],
        scope: ProjectionScope,
    ) -> Vec<DMatrix<f64>> {
        let m_u = self.m_u.as_matrix();
        let mqm = m_u * self.u_sandwich(sigma) * m_u;
        map_clusters(self.m(), |i| {
            let p = self.within_projector(i, scope);
            let u = &self.u_dd[i];
            let ps = &p * sigma[i].as_matrix();
            let cross = &ps * (self.weights(i).as_matrix() * u) * m_u * u.transpose();
            let mut out =
                &ps * p.transpose() - &cross - cross.transpose() + u * &mqm * u.transpose();
            out = 0.5 * (&out + out.transpose());
            out
        })
    }

    /// Block-stacked zeros with `k` columns.
    pub fn zero_blocks(&self, k: usize) -> Blocks {
        self.design
            .clusters()
            .iter()
            .map(|c| DMatrix::zeros(c.n(), k))
            .collect()
    }
}

/// Estimated focal coefficients with full-model residuals.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta: DVector<f64>,
    pub residuals: Vec<DVector<f64>>,
    pub absorbed: Arc<AbsorbedDesign>,
}

impl FitResult {
    pub fn design(&self) -> &ClusteredDesign {
        self.absorbed.design()
    }

    pub fn m(&self) -> usize {
        self.absorbed.m()
    }

    pub fn r(&self) -> usize {
        self.absorbed.r()
    }
}

/// `β̂ = M_R̈ Σ R̈ᵢᵀWᵢÿᵢ`; residuals `eᵢ = ÿᵢ - R̈ᵢβ̂` equal the full-model residuals.
pub fn fit_wls(absorbed: AbsorbedDesign) -> FitResult {
    let absorbed = Arc::new(absorbed);
    let y_dd = absorbed.y_dd.clone();
    solve_projected(absorbed, y_dd)
}

fn solve_projected(absorbed: Arc<AbsorbedDesign>, y_dd: Vec<DVector<f64>>) -> FitResult {
    let mut rhs = DVector::zeros(absorbed.r());
    for (i, yi) in y_dd.iter().enumerate() {
        rhs += absorbed.r_dd(i).transpose() * (absorbed.weights(i).as_matrix() * yi);
    }
    let beta = absorbed.m_r().as_matrix() * rhs;
    let residuals = y_dd
        .into_iter()
        .enumerate()
        .map(|(i, yi)| yi - absorbed.r_dd(i) * &beta)
        .collect();
    FitResult {
        beta,
        residuals,
        absorbed,
    }
}

/// Fits a new outcome on an already absorbed design. `y` has one block per cluster in
/// the design's row order; the design's own outcome is ignored.
pub fn refit(absorbed: &Arc<AbsorbedDesign>, y: &[DVector<f64>]) -> Result<FitResult> {
    if y.len() != absorbed.m()
        || y.iter()
            .zip(absorbed.design().clusters())
            .any(|(yi, c)| yi.len() != c.n())
    {
        return Err(Error::InvalidInput(
            "outcome blocks do not match the design".into(),
        ));
    }
    if y.iter().any(|yi| yi.iter().any(|v| !v.is_finite())) {
        return Err(Error::Data("non-finite outcome value".into()));
    }
    Ok(solve_projected(
        Arc::clone(absorbed),
        absorbed.project_outcome(y),
    ))
}

/// Maps `f` over cluster indices, in parallel when the `parallel` feature is on.
/// Output order is always cluster order.
pub(crate) fn map_clusters<T: Send>(m: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        (0..m).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..m).map(f).collect()
    }
}

/// Absorbs and fits in one step.
pub fn fit(design: &ClusteredDesign) -> Result<FitResult> {
    Ok(fit_wls(absorb(design)?))
}

fn check_blocks(fit: &FitResult, sigma: &[SymMatrix]) -> Result<()> {
    if sigma.len() != fit.m() {
        return Err(Error::InvalidInput(format!(
            "{} covariance blocks for {} clusters",
            sigma.len(),
            fit.m()
        )));
    }
    for (s, c) in sigma.iter().zip(fit.design().clusters()) {
        if s.dim() != c.n() {
            return Err(Error::InvalidInput(format!(
                "covariance block for cluster `{}` is {}x{}, cluster has {} rows",
                c.id,
                s.dim(),
                s.dim(),
                c.n()
            )));
        }
    }
    Ok(())
}

pub(crate) fn check_cov_blocks(fit: &FitResult, sigma: &[SymMatrix]) -> Result<()> {
    check_blocks(fit, sigma)
}

/// Sampling variance of `β̂` when `Var(εᵢ) = Σᵢ`:
/// `M_R̈ (Σ R̈ᵢᵀWᵢΣᵢWᵢR̈ᵢ) M_R̈`.
pub fn true_variance(fit: &FitResult, sigma: &[SymMatrix]) -> Result<SymMatrix> {
    check_blocks(fit, sigma)?;
    let a = &fit.absorbed;
    let terms = |i: usize| -> DMatrix<f64> {
        let wr = a.weights(i).as_matrix() * a.r_dd(i);
        wr.transpose() * (sigma[i].as_matrix() * &wr)
    };
    let parts = map_clusters(fit.m(), terms);
    let mut meat = DMatrix::zeros(fit.r(), fit.r());
    for p in parts {
        meat += p;
    }
    let m = a.m_r().as_matrix();
    Ok(SymMatrix::symmetrized(m * meat * m))
}
