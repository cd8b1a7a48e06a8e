//! End-to-end steps shared by the CLI and the simulation harness: learn
//! embeddings, reduce the hierarchy and compare GLMs on the original and the
//! reduced grouping.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::embedding::{aggregate_up, EmbeddingError, EmbeddingTable};
use crate::glm::{Coding, GlmError, GroupedModel, Grouping};
use crate::hierarchy::Hierarchy;
use crate::nnet::{train, NetConfig, Network, NnetError, TrainReport};
use crate::reducer::{reduce, ReduceError, ReducedHierarchy, TraceRecord};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Reduce(#[from] ReduceError),
    #[error(transparent)]
    Glm(#[from] GlmError),
}

pub struct Embedded {
    pub network: Network,
    pub report: TrainReport,
    /// Embeddings for every node, upper levels aggregated from the leaves.
    pub table: EmbeddingTable,
}

/// Trains the network and aggregates its leaf embeddings up the hierarchy.
pub fn embed(data: &Dataset, hierarchy: &Hierarchy, net: &NetConfig) -> Result<Embedded, PipelineError> {
    let (network, report) = train(net, data, hierarchy)?;
    let leaves = network.leaf_embeddings(hierarchy)?;
    let table = aggregate_up(&leaves, hierarchy)?;
    Ok(Embedded { network, report, table })
}

/// Information criteria and test error of one GLM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub groups: usize,
    pub aic: f64,
    pub bic: f64,
    pub rmse: Option<f64>,
}

pub fn score(train: &Dataset, test: Option<&Dataset>, grouping: Grouping) -> Result<ModelScore, PipelineError> {
    let groups = grouping.num_groups();
    let model = GroupedModel::fit(train, grouping, Coding::Dummy)?;
    let rmse = test.map(|t| model.rmse(t)).transpose()?;
    Ok(ModelScore {
        groups,
        aic: model.fit.aic,
        bic: model.fit.bic,
        rmse,
    })
}

/// One row of a threshold comparison; `si_star` is `None` for the original hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub si_star: Option<f64>,
    pub level_sizes: Vec<usize>,
    pub score: ModelScore,
}

pub struct GridResult {
    pub rows: Vec<EvalRow>,
    pub reductions: Vec<(f64, ReducedHierarchy, Vec<TraceRecord>)>,
}

/// Reduces the hierarchy at every threshold of `grid` and scores each
/// reduction next to the original hierarchy (first row).
pub fn evaluate_grid(
    train: &Dataset,
    test: Option<&Dataset>,
    hierarchy: &Hierarchy,
    table: &EmbeddingTable,
    grid: &[f64],
    seed: u64,
) -> Result<GridResult, PipelineError> {
    let original = EvalRow {
        si_star: None,
        level_sizes: hierarchy.level_sizes(),
        score: score(train, test, Grouping::identity(hierarchy))?,
    };
    let per_threshold = grid
        .par_iter()
        .map(|&si| -> Result<_, PipelineError> {
            let (reduced, trace) = reduce(hierarchy, table, si, seed)?;
            let s = score(train, test, Grouping::from_reduced(&reduced))?;
            Ok((
                EvalRow {
                    si_star: Some(si),
                    level_sizes: reduced.level_sizes(),
                    score: s,
                },
                (si, reduced, trace),
            ))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = vec![original];
    let mut reductions = Vec::with_capacity(grid.len());
    for (row, red) in per_threshold {
        rows.push(row);
        reductions.push(red);
    }
    Ok(GridResult { rows, reductions })
}
