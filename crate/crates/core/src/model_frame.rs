//! Clustered regression designs, working covariance models and linear constraints.
//!
//! A [`ClusteredDesign`] holds one [`ClusterBlock`] per cluster with the outcome,
//! focal covariates `R`, between-cluster fixed effects `S`, within-cluster fixed
//! effects `T` and the weight matrix `W`. Within-cluster fixed-effect columns are
//! stored only in the cluster where they are nonzero.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matkern::{self, SymMatrix};

/// A single column of a tabular dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    Text(Vec<String>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Level label of row `i`, used when the column acts as a factor.
    pub fn label(&self, i: usize) -> String {
        match self {
            Column::Numeric(v) => format_level(v[i]),
            Column::Text(v) => v[i].clone(),
        }
    }
}

fn format_level(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

/// Column-oriented table with unique column names and equal column lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    columns: Vec<(String, Column)>,
    nrows: usize,
}

impl Table {
    pub fn new(columns: Vec<(String, Column)>) -> Result<Self> {
        let nrows = columns.first().map_or(0, |(_, c)| c.len());
        let mut seen = std::collections::HashSet::new();
        for (name, col) in &columns {
            if !seen.insert(name.as_str()) {
                return Err(Error::Data(format!("duplicate column name `{name}`")));
            }
            if col.len() != nrows {
                return Err(Error::Data(format!(
                    "column `{name}` has {} rows, expected {nrows}",
                    col.len()
                )));
            }
        }
        Ok(Table { columns, nrows })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|(n, _)| n.as_str())
    }

    pub fn columns(&self) -> &[(String, Column)] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c)
            .ok_or_else(|| Error::Config(format!("column `{name}` not found")))
    }

    pub fn numeric(&self, name: &str) -> Result<&[f64]> {
        match self.column(name)? {
            Column::Numeric(v) => {
                if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                    return Err(Error::Data(format!(
                        "column `{name}` has a missing or non-finite value at row {}",
                        i + 1
                    )));
                }
                Ok(v)
            }
            Column::Text(_) => Err(Error::Data(format!("column `{name}` is not numeric"))),
        }
    }

    pub fn push_column(&mut self, name: String, column: Column) -> Result<()> {
        if self.columns.iter().any(|(n, _)| *n == name) {
            return Err(Error::Data(format!("duplicate column name `{name}`")));
        }
        if !self.columns.is_empty() && column.len() != self.nrows {
            return Err(Error::Data(format!(
                "column `{name}` has {} rows, expected {}",
                column.len(),
                self.nrows
            )));
        }
        if self.columns.is_empty() {
            self.nrows = column.len();
        }
        self.columns.push((name, column));
        Ok(())
    }
}

/// Roles assigned to table columns when building a design.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub outcome: String,
    pub covariates: Vec<String>,
    /// Factors expanded into between-cluster indicators (first level dropped).
    pub absorb_between: Vec<String>,
    /// Factors nested in clusters, expanded into within-cluster indicators (all levels).
    pub absorb_within: Vec<String>,
    pub cluster: String,
    pub weights: Option<String>,
}

impl ModelSpec {
    pub fn new(outcome: &str, covariates: &[&str], cluster: &str) -> Self {
        ModelSpec {
            outcome: outcome.to_string(),
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
            absorb_between: Vec::new(),
            absorb_within: Vec::new(),
            cluster: cluster.to_string(),
            weights: None,
        }
    }

    pub fn with_between(mut self, factors: &[&str]) -> Self {
        self.absorb_between = factors.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_within(mut self, factors: &[&str]) -> Self {
        self.absorb_within = factors.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_weights(mut self, column: &str) -> Self {
        self.weights = Some(column.to_string());
        self
    }
}

/// Per-cluster blocks of the regression.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterBlock {
    pub id: String,
    pub y: DVector<f64>,
    pub r: DMatrix<f64>,
    pub s: DMatrix<f64>,
    /// Within-cluster fixed-effect columns that are nonzero in this cluster.
    pub t: DMatrix<f64>,
    /// Global index of each column of `t`.
    pub t_index: Vec<usize>,
    pub w: SymMatrix,
}

impl ClusterBlock {
    pub fn n(&self) -> usize {
        self.y.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredDesign {
    clusters: Vec<ClusterBlock>,
    r_names: Vec<String>,
    s_names: Vec<String>,
    t_names: Vec<String>,
    dummy_focal: usize,
}

impl ClusteredDesign {
    /// Validates dimensions, weights and the single-cluster support of `T` columns.
    pub fn new(
        clusters: Vec<ClusterBlock>,
        r_names: Vec<String>,
        s_names: Vec<String>,
        t_names: Vec<String>,
    ) -> Result<Self> {
        if clusters.is_empty() {
            return Err(Error::Data("design has no clusters".into()));
        }
        let (r, s, t) = (r_names.len(), s_names.len(), t_names.len());
        let mut owner: Vec<Option<usize>> = vec![None; t];
        for (ci, c) in clusters.iter().enumerate() {
            let n = c.n();
            if n == 0 {
                return Err(Error::Data(format!("cluster `{}` is empty", c.id)));
            }
            if c.r.shape() != (n, r)
                || c.s.shape() != (n, s)
                || c.t.nrows() != n
                || c.t.ncols() != c.t_index.len()
            {
                return Err(Error::InvalidInput(format!(
                    "inconsistent block dimensions in cluster `{}`",
                    c.id
                )));
            }
            if c.w.dim() != n {
                return Err(Error::InvalidInput(format!(
                    "weight block of cluster `{}` has wrong size",
                    c.id
                )));
            }
            let finite =
                c.y.iter()
                    .chain(c.r.iter())
                    .chain(c.s.iter())
                    .chain(c.t.iter())
                    .all(|v| v.is_finite());
            if !finite || !c.w.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite value in cluster `{}`",
                    c.id
                )));
            }
            if matkern::chol_upper(&c.w).is_err() {
                return Err(Error::Data(format!(
                    "weight block of cluster `{}` is not positive definite",
                    c.id
                )));
            }
            for &k in &c.t_index {
                if k >= t {
                    return Err(Error::InvalidInput(format!(
                        "within-cluster column index {k} out of range"
                    )));
                }
                if let Some(prev) = owner[k] {
                    return Err(Error::Data(format!(
                        "within-cluster fixed effect `{}` appears in clusters `{}` and `{}`",
                        t_names[k], clusters[prev].id, c.id
                    )));
                }
                owner[k] = Some(ci);
            }
        }
        Ok(ClusteredDesign {
            clusters,
            r_names,
            s_names,
            t_names,
            dummy_focal: 0,
        })
    }

    pub fn clusters(&self) -> &[ClusterBlock] {
        &self.clusters
    }

    pub fn m(&self) -> usize {
        self.clusters.len()
    }

    pub fn n_total(&self) -> usize {
        self.clusters.iter().map(|c| c.n()).sum()
    }

    pub fn r(&self) -> usize {
        self.r_names.len()
    }

    pub fn s(&self) -> usize {
        self.s_names.len()
    }

    pub fn t(&self) -> usize {
        self.t_names.len()
    }

    pub fn r_names(&self) -> &[String] {
        &self.r_names
    }

    pub fn s_names(&self) -> &[String] {
        &self.s_names
    }

    pub fn t_names(&self) -> &[String] {
        &self.t_names
    }

    /// Number of trailing focal columns that are fixed-effect indicators moved in by
    /// [`with_dummies_as_focal`](Self::with_dummies_as_focal).
    pub fn dummy_focal(&self) -> usize {
        self.dummy_focal
    }

    pub fn max_cluster_size(&self) -> usize {
        self.clusters.iter().map(|c| c.n()).max().unwrap_or(0)
    }

    /// Same data with every weight block replaced.
    pub fn with_weights(&self, weights: Vec<SymMatrix>) -> Result<Self> {
        if weights.len() != self.m() {
            return Err(Error::InvalidInput(
                "one weight block per cluster required".into(),
            ));
        }
        let clusters = self
            .clusters
            .iter()
            .zip(weights)
            .map(|(c, w)| ClusterBlock { w, ..c.clone() })
            .collect();
        let mut out = ClusteredDesign::new(
            clusters,
            self.r_names.clone(),
            self.s_names.clone(),
            self.t_names.clone(),
        )?;
        out.dummy_focal = self.dummy_focal;
        Ok(out)
    }

    /// Moves the fixed-effect columns into the focal block, giving the "dummy variable"
    /// version of the same regression. Fixed-effect columns that are linearly dependent
    /// on earlier columns (in `R, S, T` order) are dropped, as absorption would.
    pub fn with_dummies_as_focal(&self) -> Result<Self> {
        let (r, s, t) = (self.r(), self.s(), self.t());
        let full: Vec<DMatrix<f64>> = self
            .clusters
            .iter()
            .map(|c| {
                let mut x = DMatrix::zeros(c.n(), r + s + t);
                x.columns_mut(0, r).copy_from(&c.r);
                x.columns_mut(r, s).copy_from(&c.s);
                for (local, &k) in c.t_index.iter().enumerate() {
                    x.column_mut(r + s + k).copy_from(&c.t.column(local));
                }
                x
            })
            .collect();
        let mut gram = DMatrix::zeros(r + s + t, r + s + t);
        for x in &full {
            gram += x.transpose() * x;
        }
        let reference: Vec<f64> = gram.diagonal().iter().copied().collect();
        let independent = matkern::independent_columns(&gram, &reference, 1e-10);
        let keep: Vec<usize> = (0..r)
            .chain(independent.into_iter().filter(|&j| j >= r))
            .collect();
        let clusters = self
            .clusters
            .iter()
            .zip(&full)
            .map(|(c, x)| {
                let n = c.n();
                ClusterBlock {
                    id: c.id.clone(),
                    y: c.y.clone(),
                    r: DMatrix::from_fn(n, keep.len(), |i, j| x[(i, keep[j])]),
                    s: DMatrix::zeros(n, 0),
                    t: DMatrix::zeros(n, 0),
                    t_index: Vec::new(),
                    w: c.w.clone(),
                }
            })
            .collect();
        let all: Vec<&String> = self
            .r_names
            .iter()
            .chain(&self.s_names)
            .chain(&self.t_names)
            .collect();
        let names = keep.iter().map(|&j| all[j].clone()).collect();
        let mut out = ClusteredDesign::new(clusters, names, Vec::new(), Vec::new())?;
        out.dummy_focal = self.dummy_focal + keep.len() - r;
        Ok(out)
    }
}

/// Distinct labels in order of first appearance, with each row's level index.
fn factor_levels(col: &Column, rows: usize) -> (Vec<String>, Vec<usize>) {
    let mut levels = Vec::new();
    let mut lookup: HashMap<String, usize> = HashMap::new();
    let mut codes = Vec::with_capacity(rows);
    for i in 0..rows {
        let label = col.label(i);
        let next = levels.len();
        let code = *lookup.entry(label.clone()).or_insert_with(|| {
            levels.push(label);
            next
        });
        codes.push(code);
    }
    (levels, codes)
}

/// Builds a clustered design from a table.
///
/// Clusters appear in order of first appearance and keep the input row order.
/// Between-cluster factors drop their first level; within-cluster factors keep
/// every level and must be nested in clusters.
pub fn build_design(table: &Table, spec: &ModelSpec) -> Result<ClusteredDesign> {
    let nrows = table.nrows();
    let y = table.numeric(&spec.outcome)?;
    let covariates: Vec<&[f64]> = spec
        .covariates
        .iter()
        .map(|c| table.numeric(c))
        .collect::<Result<_>>()?;
    let cluster_col = table.column(&spec.cluster)?;
    let weights = spec
        .weights
        .as_deref()
        .map(|w| table.numeric(w))
        .transpose()?;
    if let Some(w) = weights {
        if let Some(i) = w.iter().position(|&v| v <= 0.0) {
            return Err(Error::Data(format!("non-positive weight at row {}", i + 1)));
        }
    }
    if nrows == 0 {
        return Err(Error::Data("table has no rows".into()));
    }

    let (cluster_ids, cluster_of_row) = factor_levels(cluster_col, nrows);
    let mut rows_of: Vec<Vec<usize>> = vec![Vec::new(); cluster_ids.len()];
    for (row, &c) in cluster_of_row.iter().enumerate() {
        rows_of[c].push(row);
    }

    // between-cluster indicators
    let mut s_names = Vec::new();
    let mut s_codes: Vec<(Vec<usize>, usize)> = Vec::new();
    for f in &spec.absorb_between {
        let (levels, codes) = factor_levels(table.column(f)?, nrows);
        for level in levels.iter().skip(1) {
            s_names.push(format!("{f}[{level}]"));
        }
        s_codes.push((codes, levels.len()));
    }

    // within-cluster indicators
    let mut t_names = Vec::new();
    let mut t_codes: Vec<(Vec<usize>, usize)> = Vec::new();
    for f in &spec.absorb_within {
        let (levels, codes) = factor_levels(table.column(f)?, nrows);
        let offset = t_names.len();
        let mut home: Vec<Option<usize>> = vec![None; levels.len()];
        for (row, &lv) in codes.iter().enumerate() {
            let c = cluster_of_row[row];
            match home[lv] {
                None => home[lv] = Some(c),
                Some(h) if h != c => {
                    return Err(Error::Data(format!(
                        "within-cluster factor `{f}` level `{}` spans clusters `{}` and `{}`",
                        levels[lv], cluster_ids[h], cluster_ids[c]
                    )))
                }
                _ => {}
            }
        }
        t_names.extend(levels.iter().map(|l| format!("{f}[{l}]")));
        t_codes.push((codes, offset));
    }

    let r = spec.covariates.len();
    let s = s_names.len();
    let mut clusters = Vec::with_capacity(cluster_ids.len());
    for (ci, rows) in rows_of.iter().enumerate() {
        let n = rows.len();
        let yv = DVector::from_iterator(n, rows.iter().map(|&i| y[i]));
        let rm = DMatrix::from_fn(n, r, |a, b| covariates[b][rows[a]]);
        let mut sm = DMatrix::zeros(n, s);
        let mut col = 0;
        for (codes, nlev) in &s_codes {
            for (a, &row) in rows.iter().enumerate() {
                if codes[row] > 0 {
                    sm[(a, col + codes[row] - 1)] = 1.0;
                }
            }
            col += nlev - 1;
        }
        let mut t_index: Vec<usize> = Vec::new();
        for (codes, offset) in &t_codes {
            for &row in rows {
                let k = offset + codes[row];
                if !t_index.contains(&k) {
                    t_index.push(k);
                }
            }
        }
        let mut tm = DMatrix::zeros(n, t_index.len());
        for (codes, offset) in &t_codes {
            for (a, &row) in rows.iter().enumerate() {
                let k = offset + codes[row];
                let local = t_index.iter().position(|&x| x == k).expect("indexed above");
                tm[(a, local)] = 1.0;
            }
        }
        let w = match weights {
            Some(wc) => SymMatrix::from_diagonal(&rows.iter().map(|&i| wc[i]).collect::<Vec<_>>()),
            None => SymMatrix::identity(n),
        };
        clusters.push(ClusterBlock {
            id: cluster_ids[ci].clone(),
            y: yv,
            r: rm,
            s: sm,
            t: tm,
            t_index,
            w,
        });
    }
    ClusteredDesign::new(clusters, spec.covariates.clone(), s_names, t_names)
}

/// Structure of the working covariance model.
#[derive(Debug, Clone, PartialEq)]
pub enum WorkingKind {
    Identity,
    CompoundSymmetric { rho: f64 },
    UserBlocks(Vec<SymMatrix>),
}

/// Analyst-specified block-diagonal covariance `Φ`, up to a positive scale.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkingModel {
    pub kind: WorkingKind,
    pub scale: f64,
}

impl WorkingModel {
    pub fn identity() -> Self {
        WorkingModel {
            kind: WorkingKind::Identity,
            scale: 1.0,
        }
    }

    pub fn compound_symmetric(rho: f64) -> Self {
        WorkingModel {
            kind: WorkingKind::CompoundSymmetric { rho },
            scale: 1.0,
        }
    }

    pub fn user_blocks(blocks: Vec<SymMatrix>) -> Self {
        WorkingModel {
            kind: WorkingKind::UserBlocks(blocks),
            scale: 1.0,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    /// One `Φ_i` block per cluster.
    pub fn covariance(&self, design: &ClusteredDesign) -> Result<Vec<SymMatrix>> {
        working_covariance(self, design)
    }
}

pub fn working_covariance(
    model: &WorkingModel,
    design: &ClusteredDesign,
) -> Result<Vec<SymMatrix>> {
    if !(model.scale > 0.0 && model.scale.is_finite()) {
        return Err(Error::Config(format!(
            "working model scale must be positive, got {}",
            model.scale
        )));
    }
    let c = model.scale;
    match &model.kind {
        WorkingKind::Identity => Ok(design
            .clusters()
            .iter()
            .map(|b| SymMatrix::identity(b.n()).scaled(c))
            .collect()),
        WorkingKind::CompoundSymmetric { rho } => {
            let rho = *rho;
            let nmax = design.max_cluster_size();
            let lower = if nmax > 1 {
                -1.0 / (nmax as f64 - 1.0)
            } else {
                f64::NEG_INFINITY
            };
            if !(rho > lower && rho < 1.0) {
                return Err(Error::Config(format!(
                    "compound-symmetric correlation {rho} outside ({lower}, 1) for clusters of size up to {nmax}"
                )));
            }
            Ok(design
                .clusters()
                .iter()
                .map(|b| {
                    let n = b.n();
                    SymMatrix::symmetrized(DMatrix::from_fn(
                        n,
                        n,
                        |i, j| if i == j { c } else { c * rho },
                    ))
                })
                .collect())
        }
        WorkingKind::UserBlocks(blocks) => {
            if blocks.len() != design.m() {
                return Err(Error::InvalidInput(format!(
                    "{} working covariance blocks supplied for {} clusters",
                    blocks.len(),
                    design.m()
                )));
            }
            blocks
                .iter()
                .zip(design.clusters())
                .map(|(phi, b)| {
                    if phi.dim() != b.n() {
                        return Err(Error::InvalidInput(format!(
                            "working covariance for cluster `{}` is {}x{}, cluster has {} rows",
                            b.id,
                            phi.dim(),
                            phi.dim(),
                            b.n()
                        )));
                    }
                    let eig = matkern::sym_eigen(phi)?;
                    let lmin = eig.values.iter().copied().fold(f64::INFINITY, f64::min);
                    if lmin <= 0.0 {
                        return Err(Error::NotPsd {
                            eigenvalue: lmin,
                            tolerance: 0.0,
                        });
                    }
                    Ok(phi.scaled(c))
                })
                .collect()
        }
    }
}

/// Moment estimate of the intra-cluster correlation from residuals, clamped so the
/// implied compound-symmetric blocks stay positive definite.
pub fn estimate_rho(residuals: &[DVector<f64>]) -> Result<f64> {
    let nmax = residuals.iter().map(|e| e.len()).max().unwrap_or(0);
    if nmax < 2 {
        return Err(Error::Underdetermined(
            "intra-cluster correlation needs a cluster with at least two rows".into(),
        ));
    }
    let total: usize = residuals.iter().map(|e| e.len()).sum();
    let mut cross = 0.0;
    let mut pairs = 0.0;
    let mut ss = 0.0;
    for e in residuals {
        let n = e.len() as f64;
        let sum: f64 = e.iter().sum();
        let sq: f64 = e.iter().map(|v| v * v).sum();
        cross += sum * sum - sq;
        pairs += n * (n - 1.0);
        ss += sq;
    }
    let sigma2 = ss / total as f64;
    if sigma2 == 0.0 {
        return Err(Error::Underdetermined(
            "residuals are identically zero".into(),
        ));
    }
    let rho = cross / (pairs * sigma2);
    let lower = -1.0 / (nmax as f64 - 1.0) + 1e-6;
    let upper = 1.0 - 1e-6;
    Ok(rho.clamp(lower, upper))
}

/// Cluster-demeaned copies of `vars` (unweighted cluster means), named `<var>_within`.
pub fn within_deviations(
    table: &Table,
    vars: &[&str],
    cluster: &str,
) -> Result<Vec<(String, Vec<f64>)>> {
    let cluster_col = table.column(cluster)?;
    let (ids, codes) = factor_levels(cluster_col, table.nrows());
    let mut out = Vec::with_capacity(vars.len());
    for &var in vars {
        let x = table.numeric(var)?;
        let mut sums = vec![0.0; ids.len()];
        let mut counts = vec![0usize; ids.len()];
        for (i, &c) in codes.iter().enumerate() {
            sums[c] += x[i];
            counts[c] += 1;
        }
        let means: Vec<f64> = sums
            .iter()
            .zip(&counts)
            .map(|(s, &n)| s / n as f64)
            .collect();
        let dev = codes
            .iter()
            .enumerate()
            .map(|(i, &c)| x[i] - means[c])
            .collect();
        out.push((format!("{var}_within"), dev));
    }
    Ok(out)
}

/// Linear null hypothesis `Cβ = d` on the focal coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl Constraint {
    pub fn new(c: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        let q = c.nrows();
        if q == 0 {
            return Err(Error::InvalidInput(
                "constraint needs at least one row".into(),
            ));
        }
        if d.len() != q {
            return Err(Error::InvalidInput(format!(
                "constraint has {q} rows but d has {} entries",
                d.len()
            )));
        }
        let cct = SymMatrix::symmetrized(&c * c.transpose());
        if matkern::condition_number(&cct)? > 1e24 {
            return Err(Error::InvalidInput(
                "constraint matrix does not have full row rank".into(),
            ));
        }
        Ok(Constraint { c, d })
    }

    /// `Cβ = 0`.
    pub fn zero(c: DMatrix<f64>) -> Result<Self> {
        let q = c.nrows();
        Constraint::new(c, DVector::zeros(q))
    }

    /// Tests that the selected coefficients are all zero.
    pub fn select(r: usize, indices: &[usize]) -> Result<Self> {
        let mut c = DMatrix::zeros(indices.len(), r);
        for (row, &k) in indices.iter().enumerate() {
            if k >= r {
                return Err(Error::InvalidInput(format!(
                    "coefficient index {k} out of range"
                )));
            }
            c[(row, k)] = 1.0;
        }
        Constraint::zero(c)
    }

    /// Builds `C` from rows of `(coefficient name, weight)` pairs.
    pub fn from_named(
        names: &[String],
        rows: &[Vec<(String, f64)>],
        d: Option<Vec<f64>>,
    ) -> Result<Self> {
        let mut c = DMatrix::zeros(rows.len(), names.len());
        for (i, row) in rows.iter().enumerate() {
            for (name, w) in row {
                let k = names.iter().position(|n| n == name).ok_or_else(|| {
                    Error::Config(format!(
                        "constraint references unknown coefficient `{name}`"
                    ))
                })?;
                c[(i, k)] += w;
            }
        }
        let d = d
            .map(DVector::from_vec)
            .unwrap_or_else(|| DVector::zeros(rows.len()));
        Constraint::new(c, d)
    }

    pub fn q(&self) -> usize {
        self.c.nrows()
    }

    /// `(MC, Md)` for an invertible `q × q` matrix `M`.
    pub fn reparameterized(&self, m: &DMatrix<f64>) -> Result<Self> {
        Constraint::new(m * &self.c, m * &self.d)
    }
}
