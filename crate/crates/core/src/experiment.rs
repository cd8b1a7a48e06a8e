//! Simulation study: repeated generate → embed → reduce → compare runs.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::glm::Grouping;
use crate::nnet::NetConfig;
use crate::pipeline::{embed, score, PipelineError};
use crate::reducer::{reduce, ReducedHierarchy, StructureKey};
use crate::seed;
use crate::simgen::{generate, sim_hierarchy, true_structure, SimConfig, SimError};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("report io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub replicates: usize,
    /// Network initialisation seeds; every replicate is run once per seed.
    pub init_seeds: Vec<u64>,
    pub si_star: f64,
    pub net: NetConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub replicate: usize,
    pub init_seed: u64,
    pub retrieved: bool,
    /// Position of this run's structure among the distinct structures, by first appearance.
    pub structure: usize,
    pub level_sizes: Vec<usize>,
    pub groups: usize,
    pub epochs: usize,
    pub final_loss: f64,
    pub aic_h: f64,
    pub aic_reduced: f64,
    pub bic_h: f64,
    pub bic_reduced: f64,
    pub rmse_h: f64,
    pub rmse_reduced: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    /// Percentages over all runs.
    pub retrieval: f64,
    pub distinct_structures: usize,
    pub aic_win: f64,
    pub bic_win: f64,
    pub rmse_win: f64,
    /// Runs with a single reduced level of at most two classes.
    pub single_level_le2: f64,
    pub retrieval_per_seed: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
    pub summary: Summary,
}

struct Partial {
    key: StructureKey,
    record: RunRecord,
}

fn run_one(
    config: &ExperimentConfig,
    replicate: usize,
    init_seed: u64,
    truth: &ReducedHierarchy,
) -> Result<Partial, ExperimentError> {
    let h = sim_hierarchy();
    let train = generate(&config.sim, &h, replicate as u64, 0)?;
    let test = generate(&config.sim, &h, replicate as u64, 1)?;
    let mut net = config.net.clone();
    net.seed = init_seed;
    let emb = embed(&train, &h, &net)?;
    let reduce_seed = seed::derive(config.sim.seed, &[replicate as u64, init_seed, 2]);
    let (reduced, _) = reduce(&h, &emb.table, config.si_star, reduce_seed).map_err(PipelineError::from)?;
    let full = score(&train, Some(&test), Grouping::identity(&h))?;
    let red = score(&train, Some(&test), Grouping::from_reduced(&reduced))?;
    log::info!(
        "replicate {replicate} seed {init_seed}: sizes {:?}, retrieved {}",
        reduced.level_sizes(),
        reduced.isomorphic(truth)
    );
    Ok(Partial {
        key: reduced.structure_key(),
        record: RunRecord {
            replicate,
            init_seed,
            retrieved: reduced.isomorphic(truth),
            structure: 0,
            level_sizes: reduced.level_sizes(),
            groups: reduced.num_groups(),
            epochs: emb.report.epoch_loss.len(),
            final_loss: emb.report.epoch_loss.last().copied().unwrap_or(f64::NAN),
            aic_h: full.aic,
            aic_reduced: red.aic,
            bic_h: full.bic,
            bic_reduced: red.bic,
            rmse_h: full.rmse.expect("test set"),
            rmse_reduced: red.rmse.expect("test set"),
        },
    })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    let h = sim_hierarchy();
    let truth = true_structure(&h, config.sim.scenario);
    let jobs: Vec<(usize, u64)> = (0..config.replicates)
        .flat_map(|r| config.init_seeds.iter().map(move |&s| (r, s)))
        .collect();
    let partials = jobs
        .par_iter()
        .map(|&(r, s)| run_one(config, r, s, &truth))
        .collect::<Result<Vec<_>, _>>()?;

    let mut index: HashMap<StructureKey, usize> = HashMap::new();
    let runs: Vec<RunRecord> = partials
        .into_iter()
        .map(|p| {
            let next = index.len();
            let mut record = p.record;
            record.structure = *index.entry(p.key).or_insert(next);
            record
        })
        .collect();
    let summary = summarize(&runs, &config.init_seeds, index.len());
    Ok(ExperimentReport {
        config: config.clone(),
        runs,
        summary,
    })
}

fn pct(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

fn summarize(runs: &[RunRecord], seeds: &[u64], distinct: usize) -> Summary {
    let n = runs.len();
    let count = |f: &dyn Fn(&RunRecord) -> bool| runs.iter().filter(|r| f(r)).count();
    let retrieval_per_seed = seeds
        .iter()
        .map(|&s| {
            let of_seed: Vec<&RunRecord> = runs.iter().filter(|r| r.init_seed == s).collect();
            (s, pct(of_seed.iter().filter(|r| r.retrieved).count(), of_seed.len()))
        })
        .collect();
    Summary {
        runs: n,
        retrieval: pct(count(&|r| r.retrieved), n),
        distinct_structures: distinct,
        aic_win: pct(count(&|r| r.aic_reduced < r.aic_h), n),
        bic_win: pct(count(&|r| r.bic_reduced < r.bic_h), n),
        rmse_win: pct(count(&|r| r.rmse_reduced < r.rmse_h), n),
        single_level_le2: pct(count(&|r| r.level_sizes.len() == 1 && r.level_sizes[0] <= 2), n),
        retrieval_per_seed,
    }
}

impl ExperimentReport {
    pub fn write_runs_csv<W: Write>(&self, w: W) -> Result<(), ExperimentError> {
        let mut out = csv::Writer::from_writer(w);
        let err = |e: csv::Error| ExperimentError::Io(e.to_string());
        out.write_record([
            "replicate",
            "init_seed",
            "retrieved",
            "structure",
            "level_sizes",
            "groups",
            "epochs",
            "final_loss",
            "aic_h",
            "aic_reduced",
            "bic_h",
            "bic_reduced",
            "rmse_h",
            "rmse_reduced",
        ])
        .map_err(err)?;
        for r in &self.runs {
            let sizes = r
                .level_sizes
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("-");
            out.write_record([
                r.replicate.to_string(),
                r.init_seed.to_string(),
                r.retrieved.to_string(),
                r.structure.to_string(),
                sizes,
                r.groups.to_string(),
                r.epochs.to_string(),
                format!("{:?}", r.final_loss),
                format!("{:?}", r.aic_h),
                format!("{:?}", r.aic_reduced),
                format!("{:?}", r.bic_h),
                format!("{:?}", r.bic_reduced),
                format!("{:?}", r.rmse_h),
                format!("{:?}", r.rmse_reduced),
            ])
            .map_err(err)?;
        }
        out.flush().map_err(|e| ExperimentError::Io(e.to_string()))
    }

    /// Summary rows: retrieval, structure count and win rates.
    pub fn summary_table(&self) -> String {
        let s = &self.summary;
        let mut out = String::new();
        out.push_str(&format!("runs                     {}\n", s.runs));
        out.push_str(&format!("true structure retrieved {:.1}%\n", s.retrieval));
        out.push_str(&format!("different structures     {}\n", s.distinct_structures));
        out.push_str(&format!("AIC(reduced) < AIC(h)    {:.1}%\n", s.aic_win));
        out.push_str(&format!("BIC(reduced) < BIC(h)    {:.1}%\n", s.bic_win));
        out.push_str(&format!("RMSE(reduced) < RMSE(h)  {:.1}%\n", s.rmse_win));
        out.push_str(&format!("one level, <= 2 classes  {:.1}%\n", s.single_level_le2));
        for (seed, r) in &s.retrieval_per_seed {
            out.push_str(&format!("retrieved, seed {seed:<8} {r:.1}%\n"));
        }
        out
    }
}
