//! Gaussian and Poisson GLMs on a grouping of the leaf classes, with
//! information criteria and out-of-sample RMSE.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::dataset::{Dataset, Family};
use crate::hierarchy::{Hierarchy, NodeId};
use crate::reducer::ReducedHierarchy;

pub const IRLS_MAX_ITER: usize = 50;
pub const IRLS_TOL: f64 = 1e-10;
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GlmError {
    #[error("design matrix is rank deficient; dependent columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },
    #[error("IRLS produced non-finite values at iteration {iteration}")]
    IrlsDiverged { iteration: usize },
    #[error("perfect fit: residual variance is zero")]
    DegenerateFit,
    #[error("{n} observations cannot support {k} parameters")]
    TooFewObservations { n: usize, k: usize },
    #[error("response {0} is not a non-negative integer")]
    InvalidResponse(f64),
    #[error("leaf {0} has no group")]
    UnmappedLeaf(usize),
    #[error("{0} is not in the sibling set")]
    NotASibling(NodeId),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coding {
    Dummy,
    Effect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Log,
}

impl Link {
    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Gaussian => Link::Identity,
            Family::Poisson => Link::Log,
        }
    }

    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
            Link::Log => eta.exp(),
        }
    }
}

/// Effect-coding row of `value` within an ordered sibling set.
pub fn effect_code(siblings: &[NodeId], value: NodeId) -> Result<Vec<f64>, GlmError> {
    let pos = siblings
        .iter()
        .position(|s| *s == value)
        .ok_or(GlmError::NotASibling(value))?;
    let width = siblings.len().saturating_sub(1);
    if pos == width {
        Ok(vec![-1.0; width])
    } else {
        let mut row = vec![0.0; width];
        row[pos] = 1.0;
        Ok(row)
    }
}

/// Labelled design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub names: Vec<String>,
    pub x: DMatrix<f64>,
}

impl DesignMatrix {
    /// Builds a design and rejects it unless it has full column rank.
    pub fn new(names: Vec<String>, x: DMatrix<f64>) -> Result<Self, GlmError> {
        let d = Self::unchecked(names, x)?;
        d.check_rank()?;
        Ok(d)
    }

    pub fn unchecked(names: Vec<String>, x: DMatrix<f64>) -> Result<Self, GlmError> {
        if names.len() != x.ncols() {
            return Err(GlmError::ShapeMismatch(format!(
                "{} names for {} columns",
                names.len(),
                x.ncols()
            )));
        }
        Ok(Self { names, x })
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    /// Columns whose QR diagonal is negligible, i.e. that lie in the span of the columns before them.
    pub fn dependent_columns(&self) -> Vec<usize> {
        let (n, p) = self.x.shape();
        if p == 0 {
            return Vec::new();
        }
        let r = self.x.clone().qr().r();
        let diag: Vec<f64> = (0..n.min(p)).map(|j| r[(j, j)].abs()).collect();
        let scale = diag.iter().cloned().fold(0.0, f64::max);
        let mut out: Vec<usize> = (0..diag.len())
            .filter(|&j| diag[j] <= RANK_TOL * scale.max(f64::MIN_POSITIVE))
            .collect();
        out.extend(n.min(p)..p);
        out
    }

    pub fn check_rank(&self) -> Result<(), GlmError> {
        let bad = self.dependent_columns();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(GlmError::RankDeficient {
                columns: bad.into_iter().map(|j| self.names[j].clone()).collect(),
            })
        }
    }
}

/// Least-squares solution through a thin QR decomposition.
fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>, GlmError> {
    let qr = x.clone().qr();
    let qty = qr.q().transpose() * y;
    qr.r()
        .solve_upper_triangular(&qty)
        .ok_or(GlmError::RankDeficient { columns: Vec::new() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub family: Family,
    pub link: Link,
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub log_likelihood: f64,
    pub k_params: usize,
    pub n: usize,
    pub aic: f64,
    pub bic: f64,
    /// MLE residual variance (Gaussian only).
    pub dispersion: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl GlmFit {
    fn finish(
        family: Family,
        names: Vec<String>,
        beta: DVector<f64>,
        log_likelihood: f64,
        k_params: usize,
        n: usize,
        dispersion: Option<f64>,
        iterations: usize,
        converged: bool,
    ) -> Self {
        Self {
            family,
            link: Link::for_family(family),
            names,
            coefficients: beta.iter().copied().collect(),
            log_likelihood,
            k_params,
            n,
            aic: 2.0 * k_params as f64 - 2.0 * log_likelihood,
            bic: k_params as f64 * (n as f64).ln() - 2.0 * log_likelihood,
            dispersion,
            iterations,
            converged,
        }
    }

    /// Mean response `g^{-1}(Xβ)` for every row of `design`.
    pub fn predict(&self, design: &DesignMatrix) -> Result<Vec<f64>, GlmError> {
        if design.ncols() != self.coefficients.len() {
            return Err(GlmError::ShapeMismatch(format!(
                "design has {} columns, fit has {} coefficients",
                design.ncols(),
                self.coefficients.len()
            )));
        }
        let eta = &design.x * DVector::from_column_slice(&self.coefficients);
        Ok(eta.iter().map(|&e| self.link.inverse(e)).collect())
    }
}

pub fn fit(family: Family, y: &[f64], design: &DesignMatrix) -> Result<GlmFit, GlmError> {
    if y.len() != design.nrows() {
        return Err(GlmError::ShapeMismatch(format!(
            "{} responses for {} design rows",
            y.len(),
            design.nrows()
        )));
    }
    let (n, p) = design.x.shape();
    if n < p {
        return Err(GlmError::TooFewObservations { n, k: p });
    }
    design.check_rank()?;
    match family {
        Family::Gaussian => fit_gaussian(y, design),
        Family::Poisson => fit_poisson(y, design),
    }
}

fn fit_gaussian(y: &[f64], design: &DesignMatrix) -> Result<GlmFit, GlmError> {
    let (n, p) = design.x.shape();
    let yv = DVector::from_column_slice(y);
    let beta = least_squares(&design.x, &yv)?;
    let resid = &yv - &design.x * &beta;
    let rss = resid.norm_squared();
    let sigma2 = rss / n as f64;
    let scale = y.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if sigma2 <= 1e-24 * scale.max(1.0) {
        return Err(GlmError::DegenerateFit);
    }
    let k = p + 1;
    if n <= k {
        return Err(GlmError::TooFewObservations { n, k });
    }
    let nf = n as f64;
    let log_likelihood = -nf / 2.0 * (2.0 * std::f64::consts::PI * sigma2).ln() - nf / 2.0;
    Ok(GlmFit::finish(
        Family::Gaussian,
        design.names.clone(),
        beta,
        log_likelihood,
        k,
        n,
        Some(sigma2),
        1,
        true,
    ))
}

fn fit_poisson(y: &[f64], design: &DesignMatrix) -> Result<GlmFit, GlmError> {
    let (n, p) = design.x.shape();
    if let Some(&bad) = y.iter().find(|v| !(**v >= 0.0 && v.fract() == 0.0)) {
        return Err(GlmError::InvalidResponse(bad));
    }
    if n <= p {
        return Err(GlmError::TooFewObservations { n, k: p });
    }
    let x = &design.x;
    let mut mu: Vec<f64> = y.iter().map(|v| v + 0.1).collect();
    let mut eta: Vec<f64> = mu.iter().map(|m| m.ln()).collect();
    let mut beta: Option<DVector<f64>> = None;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=IRLS_MAX_ITER {
        iterations = it;
        let mut xw = x.clone();
        let mut zw = DVector::zeros(n);
        for i in 0..n {
            let w = mu[i].sqrt();
            xw.row_mut(i).scale_mut(w);
            zw[i] = w * (eta[i] + (y[i] - mu[i]) / mu[i]);
        }
        let next = least_squares(&xw, &zw)?;
        if next.iter().any(|b| !b.is_finite()) {
            return Err(GlmError::IrlsDiverged { iteration: it });
        }
        let e = x * &next;
        eta = e.iter().copied().collect();
        mu = eta.iter().map(|v| v.exp()).collect();
        if mu.iter().any(|m| !m.is_finite() || *m <= 0.0) {
            return Err(GlmError::IrlsDiverged { iteration: it });
        }
        let change = beta.as_ref().map(|b| (b - &next).amax()).unwrap_or(f64::INFINITY);
        beta = Some(next);
        if change < IRLS_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("IRLS stopped after {IRLS_MAX_ITER} iterations without converging");
    }
    let log_likelihood = (0..n).map(|i| y[i] * eta[i] - mu[i] - ln_gamma(y[i] + 1.0)).sum();
    Ok(GlmFit::finish(
        Family::Poisson,
        design.names.clone(),
        beta.expect("at least one iteration"),
        log_likelihood,
        p,
        n,
        None,
        iterations,
        converged,
    ))
}

pub fn rmse(y: &[f64], y_hat: &[f64]) -> f64 {
    let n = y.len() as f64;
    (y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt()
}

/// Assignment of leaf classes to groups, used as the categorical factor of a GLM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grouping {
    pub labels: Vec<String>,
    /// Group of every leaf index, `None` when unmapped.
    pub leaf_to_group: Vec<Option<usize>>,
}

impl Grouping {
    /// Every leaf is its own group.
    pub fn identity(hierarchy: &Hierarchy) -> Self {
        Self {
            labels: hierarchy.leaves().map(|l| hierarchy.label(l).to_string()).collect(),
            leaf_to_group: (0..hierarchy.num_leaves()).map(Some).collect(),
        }
    }

    /// Groups of a reduced hierarchy, ordered by reduced class id.
    pub fn from_reduced(reduced: &ReducedHierarchy) -> Self {
        let (groups, per_leaf) = reduced.leaf_grouping();
        Self {
            labels: groups.iter().map(ToString::to_string).collect(),
            leaf_to_group: per_leaf.into_iter().map(Some).collect(),
        }
    }

    pub fn num_groups(&self) -> usize {
        self.labels.len()
    }

    pub fn group_of(&self, leaf: usize) -> Result<usize, GlmError> {
        self.leaf_to_group
            .get(leaf)
            .copied()
            .flatten()
            .ok_or(GlmError::UnmappedLeaf(leaf))
    }
}

/// Intercept, covariates, then `G − 1` coding columns for the grouping.
/// Dummy coding uses the first group as reference; effect coding gives the
/// last group −1 in every coding column.
pub fn grouped_design_unchecked(data: &Dataset, grouping: &Grouping, coding: Coding) -> Result<DesignMatrix, GlmError> {
    let n = data.len();
    let q = data.num_covariates();
    let g = grouping.num_groups();
    let width = 1 + q + g.saturating_sub(1);
    let mut x = DMatrix::zeros(n, width);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for (j, v) in data.row(i).iter().enumerate() {
            x[(i, 1 + j)] = *v;
        }
        let grp = grouping.group_of(data.leaf[i])?;
        match coding {
            Coding::Dummy => {
                if grp > 0 {
                    x[(i, q + grp)] = 1.0;
                }
            }
            Coding::Effect => {
                if grp + 1 == g {
                    for c in 0..g - 1 {
                        x[(i, 1 + q + c)] = -1.0;
                    }
                } else {
                    x[(i, 1 + q + grp)] = 1.0;
                }
            }
        }
    }
    let mut names = vec!["(intercept)".to_string()];
    names.extend(data.covariate_names.iter().cloned());
    match coding {
        Coding::Dummy => names.extend(grouping.labels[1..].iter().cloned()),
        Coding::Effect => names.extend(grouping.labels[..g.saturating_sub(1)].iter().cloned()),
    }
    DesignMatrix::unchecked(names, x)
}

pub fn grouped_design(data: &Dataset, grouping: &Grouping, coding: Coding) -> Result<DesignMatrix, GlmError> {
    let d = grouped_design_unchecked(data, grouping, coding)?;
    d.check_rank()?;
    Ok(d)
}

/// A fitted GLM together with the grouping and coding needed to predict new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedModel {
    pub grouping: Grouping,
    pub coding: Coding,
    pub fit: GlmFit,
}

impl GroupedModel {
    pub fn fit(data: &Dataset, grouping: Grouping, coding: Coding) -> Result<Self, GlmError> {
        let design = grouped_design(data, &grouping, coding)?;
        let fit = fit(data.family, &data.y, &design)?;
        Ok(Self { grouping, coding, fit })
    }

    pub fn predict(&self, data: &Dataset) -> Result<Vec<f64>, GlmError> {
        let design = grouped_design_unchecked(data, &self.grouping, self.coding)?;
        self.fit.predict(&design)
    }

    pub fn rmse(&self, test: &Dataset) -> Result<f64, GlmError> {
        Ok(rmse(&test.y, &self.predict(test)?))
    }
}
