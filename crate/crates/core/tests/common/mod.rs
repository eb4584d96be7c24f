//! Dense reference implementations used as test oracles.
//!
//! Everything here works on full `N × p` design matrices and `N × N` projections,
//! independently of the absorbed, cluster-blocked code paths in the library.
#![allow(dead_code)]

use crobust::model_frame::{build_design, ClusteredDesign, Column, ModelSpec, Table};
use crobust::SymMatrix;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub struct Dense {
    /// `[R S T]` with every column of every block.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub w: DMatrix<f64>,
    pub r: usize,
    /// Row range of each cluster.
    pub ranges: Vec<(usize, usize)>,
}

pub fn dense(design: &ClusteredDesign) -> Dense {
    let n = design.n_total();
    let (r, s, t) = (design.r(), design.s(), design.t());
    let mut x = DMatrix::zeros(n, r + s + t);
    let mut y = DVector::zeros(n);
    let mut w = DMatrix::zeros(n, n);
    let mut ranges = Vec::new();
    let mut row = 0;
    for c in design.clusters() {
        let ni = c.n();
        x.view_mut((row, 0), (ni, r)).copy_from(&c.r);
        x.view_mut((row, r), (ni, s)).copy_from(&c.s);
        for (local, &k) in c.t_index.iter().enumerate() {
            x.view_mut((row, r + s + k), (ni, 1))
                .copy_from(&c.t.column(local));
        }
        y.rows_mut(row, ni).copy_from(&c.y);
        w.view_mut((row, row), (ni, ni)).copy_from(c.w.as_matrix());
        ranges.push((row, ni));
        row += ni;
    }
    Dense { x, y, w, r, ranges }
}

pub fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone()
        .pseudo_inverse(1e-10 * a.amax().max(1.0))
        .expect("svd")
}

impl Dense {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// `H_X = X (XᵀWX)⁺ XᵀW`.
    pub fn hat(&self) -> DMatrix<f64> {
        let xtwx = self.x.transpose() * &self.w * &self.x;
        &self.x * pinv(&xtwx) * self.x.transpose() * &self.w
    }

    pub fn residual_maker(&self) -> DMatrix<f64> {
        DMatrix::identity(self.n(), self.n()) - self.hat()
    }

    /// Focal coefficients from the full normal equations.
    pub fn beta(&self) -> DVector<f64> {
        let xtwx = self.x.transpose() * &self.w * &self.x;
        let b = pinv(&xtwx) * self.x.transpose() * &self.w * &self.y;
        b.rows(0, self.r).into_owned()
    }

    /// `R̈` from explicit residualization on `[S T]`.
    pub fn r_dd(&self) -> DMatrix<f64> {
        let p = self.x.ncols();
        let r = self.x.columns(0, self.r).into_owned();
        if p == self.r {
            return r;
        }
        let z = self.x.columns(self.r, p - self.r).into_owned();
        let ztwz = z.transpose() * &self.w * &z;
        let hz = &z * pinv(&ztwz) * z.transpose() * &self.w;
        (DMatrix::identity(self.n(), self.n()) - hz) * r
    }

    pub fn block(&self, m: &DMatrix<f64>, i: usize, j: usize) -> DMatrix<f64> {
        let (ri, ni) = self.ranges[i];
        let (rj, nj) = self.ranges[j];
        m.view((ri, rj), (ni, nj)).into_owned()
    }

    pub fn rows(&self, m: &DMatrix<f64>, i: usize) -> DMatrix<f64> {
        let (ri, ni) = self.ranges[i];
        m.rows(ri, ni).into_owned()
    }
}

pub fn block_diag(blocks: &[SymMatrix]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.dim()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, at), (b.dim(), b.dim()))
            .copy_from(b.as_matrix());
        at += b.dim();
    }
    out
}

pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

fn text(v: Vec<String>) -> Column {
    Column::Text(v)
}

/// Unbalanced clusters with three covariates, a cluster-level covariate and a between factor.
pub fn mixed_table(seed: u64, m: usize) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Vec::new();
    let mut region = Vec::new();
    let (mut x1, mut x2, mut lvl, mut y, mut wt) = (vec![], vec![], vec![], vec![], vec![]);
    for i in 0..m {
        let ni = 2 + (i * 7 + 3) % 5;
        let l: f64 = rng.sample(StandardNormal);
        for _ in 0..ni {
            g.push(format!("c{i}"));
            region.push(format!("r{}", i % 3));
            x1.push(rng.sample::<f64, _>(StandardNormal));
            x2.push(if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 });
            lvl.push(l);
            y.push(rng.sample::<f64, _>(StandardNormal) + 0.5 * l);
            wt.push(0.5 + rng.random::<f64>());
        }
    }
    let n = y.len();
    Table::new(vec![
        ("y".into(), Column::Numeric(y)),
        ("one".into(), Column::Numeric(vec![1.0; n])),
        ("x1".into(), Column::Numeric(x1)),
        ("x2".into(), Column::Numeric(x2)),
        ("lvl".into(), Column::Numeric(lvl)),
        ("wt".into(), Column::Numeric(wt)),
        ("g".into(), text(g)),
        ("region".into(), text(region)),
    ])
    .unwrap()
}

/// Balanced `m × periods` panel with a staggered binary treatment.
pub fn panel_table(seed: u64, m: usize, periods: usize) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut g, mut per, mut d, mut x, mut y) = (vec![], vec![], vec![], vec![], vec![]);
    for i in 0..m {
        let start = 1 + i % periods;
        let a: f64 = rng.sample(StandardNormal);
        for t in 0..periods {
            g.push(format!("u{i}"));
            per.push(format!("t{t}"));
            let treated = if i % 2 == 0 && t >= start { 1.0 } else { 0.0 };
            d.push(treated);
            x.push(rng.sample::<f64, _>(StandardNormal));
            y.push(a + 0.1 * t as f64 + rng.sample::<f64, _>(StandardNormal));
        }
    }
    Table::new(vec![
        ("y".into(), Column::Numeric(y)),
        ("d".into(), Column::Numeric(d)),
        ("x".into(), Column::Numeric(x)),
        ("g".into(), text(g)),
        ("period".into(), text(per)),
    ])
    .unwrap()
}

/// Named test designs covering the code paths of the estimator.
pub fn corpus() -> Vec<(&'static str, ClusteredDesign)> {
    let mixed = mixed_table(11, 9);
    let panel = panel_table(12, 10, 6);
    vec![
        (
            "plain",
            build_design(
                &mixed,
                &ModelSpec::new("y", &["one", "x1", "x2", "lvl"], "g"),
            )
            .unwrap(),
        ),
        (
            "between",
            build_design(
                &mixed,
                &ModelSpec::new("y", &["one", "x1", "x2"], "g").with_between(&["region"]),
            )
            .unwrap(),
        ),
        (
            "cluster_fe",
            build_design(
                &mixed,
                &ModelSpec::new("y", &["x1", "x2"], "g").with_within(&["g"]),
            )
            .unwrap(),
        ),
        (
            "weighted_fe",
            build_design(
                &mixed,
                &ModelSpec::new("y", &["x1", "x2"], "g")
                    .with_within(&["g"])
                    .with_weights("wt"),
            )
            .unwrap(),
        ),
        (
            "two_way",
            build_design(
                &panel,
                &ModelSpec::new("y", &["d", "x"], "g")
                    .with_within(&["g"])
                    .with_between(&["period"]),
            )
            .unwrap(),
        ),
    ]
}

/// Compound-symmetric blocks with correlation `rho`.
pub fn cs_blocks(design: &ClusteredDesign, rho: f64) -> Vec<SymMatrix> {
    crobust::WorkingModel::compound_symmetric(rho)
        .covariance(design)
        .unwrap()
}

/// Standard normal draws shaped like the design's clusters, with covariance `sigma`.
pub fn correlated_errors(rng: &mut ChaCha8Rng, chol: &[DMatrix<f64>]) -> Vec<DVector<f64>> {
    chol.iter()
        .map(|l| {
            let z = DVector::from_iterator(
                l.nrows(),
                (0..l.nrows()).map(|_| rng.sample::<f64, _>(StandardNormal)),
            );
            l * z
        })
        .collect()
}

/// Lower Cholesky factors of `sigma`.
pub fn lower_factors(sigma: &[SymMatrix]) -> Vec<DMatrix<f64>> {
    sigma
        .iter()
        .map(|s| s.as_matrix().clone().cholesky().expect("pd").l())
        .collect()
}

/// Adaptive Simpson integration of `f` on `[a, b]`.
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 60)
}

/// `P(F(d1, d2) > x)` by quadrature of the Beta(d1/2, d2/2) density of
/// `z = d1 x / (d1 x + d2)`, split at `c` with endpoint-regularizing substitutions:
/// `u = z^a` on `[z0, c]` and `s = (1 - z)^b` on `[c, 1]`.
pub fn f_sf_quadrature(x: f64, d1: f64, d2: f64) -> f64 {
    use lgamma::ln_gamma;
    let (a, b) = (d1 / 2.0, d2 / 2.0);
    let ln_beta = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
    let z0 = d1 * x / (d1 * x + d2);
    let c = z0.max(0.5);
    let lower = |u: f64| (1.0 - u.powf(1.0 / a)).powf(b - 1.0) / a;
    let upper = |s: f64| (1.0 - s.powf(1.0 / b)).powf(a - 1.0) / b;
    let mut total = simpson(&upper, 0.0, (1.0 - c).powf(b), 1e-15);
    if z0 < c {
        total += simpson(&lower, z0.powf(a), c.powf(a), 1e-15);
    }
    total * (-ln_beta).exp()
}

/// Small self-contained log-gamma for the quadrature oracle (Stirling series with shift).
pub mod lgamma {
    pub fn ln_gamma(x: f64) -> f64 {
        let mut x = x;
        let mut acc = 0.0;
        while x < 15.0 {
            acc -= x.ln();
            x += 1.0;
        }
        let inv = 1.0 / x;
        let inv2 = inv * inv;
        let series = inv
            * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 * (1.0 / 1680.0))));
        acc + (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series
    }
}
