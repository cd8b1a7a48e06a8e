//! Command-line front end. Every command writes into one run directory:
//! `config.json` (the fully resolved configuration), `outputs/` and `trace/`.
//! A saved `config.json` can be executed again with `hiercat run`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Family};
use crate::embedding::EmbeddingTable;
use crate::experiment::{run_experiment, ExperimentConfig};
use crate::hierarchy::Hierarchy;
use crate::nnet::{Activation, NetConfig};
use crate::pipeline::{embed, evaluate_grid, EvalRow};
use crate::reducer::{reduce, write_trace};
use crate::simgen::{generate, sim_hierarchy, true_structure, Counts, Scenario, SimConfig};

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "HIERCAT_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "hiercat",
    version,
    about = "Reduce hierarchical categorical variables with entity embeddings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset on the built-in three-level hierarchy.
    Simulate(SimulateArgs),
    /// Train the embedding network and write embeddings for every node.
    TrainEmbed(TrainEmbedArgs),
    /// Reduce a hierarchy from an embedding table at one threshold.
    Reduce(ReduceArgs),
    /// Compare GLMs on the original and reduced hierarchies over a threshold grid.
    Evaluate(EvaluateArgs),
    /// Reduce at many thresholds and tabulate the resulting structures.
    SweepSi(SweepArgs),
    /// Repeated simulation study with retrieval and win-rate summaries.
    Experiment(ExperimentArgs),
    /// Execute a saved `config.json`.
    Run(RunArgs),
}

fn parse_si(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("'{s}' is not a number"))?;
    if (-1.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("silhouette threshold {v} outside [-1, 1]"))
    }
}

/// Comma-separated list of thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid(pub Vec<f64>);

fn parse_grid(s: &str) -> Result<Grid, String> {
    let grid = s.split(',').map(parse_si).collect::<Result<Vec<_>, _>>()?;
    Ok(Grid(grid))
}

fn parse_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(|c| c.trim().to_string())
        .filter(|c| !c.is_empty())
        .collect()
}

/// `SCENARIO` or `SCENARIO-FAMILY`, e.g. `h_and_x-gaussian`.
fn parse_scenario(s: &str) -> Result<(Scenario, Option<Family>), String> {
    if let Ok(sc) = s.parse::<Scenario>() {
        return Ok((sc, None));
    }
    let (sc, fam) = s.rsplit_once('-').ok_or_else(|| format!("unknown scenario '{s}'"))?;
    Ok((sc.parse()?, Some(fam.parse().map_err(|e| format!("{e}"))?)))
}

#[derive(Debug, Clone, Args)]
pub struct NetArgs {
    #[arg(long, default_value_t = 2)]
    pub embedding_dim: usize,
    /// Comma-separated hidden layer widths.
    #[arg(long, default_value = "2")]
    pub hidden: String,
    #[arg(long, value_parser = clap::builder::ValueParser::new(|s: &str| s.parse::<Activation>()))]
    pub activation: Option<Activation>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Early-stopping patience in epochs; 0 (the default) disables early stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub net_seed: u64,
}

impl NetArgs {
    fn resolve(&self, family: Family) -> Result<NetConfig, CliError> {
        let mut c = NetConfig::for_family(family);
        c.embedding_dim = self.embedding_dim;
        c.hidden_sizes = parse_list(&self.hidden)
            .iter()
            .map(|w| {
                w.parse::<usize>()
                    .map_err(|_| CliError::Usage(format!("bad hidden width '{w}'")))
            })
            .collect::<Result<_, _>>()?;
        if let Some(a) = self.activation {
            c.hidden_activation = a;
        }
        if let Some(e) = self.epochs {
            c.epochs = e;
        }
        if let Some(b) = self.batch_size {
            c.batch_size = b;
        }
        if let Some(lr) = self.learning_rate {
            c.learning_rate = lr;
        }
        if let Some(p) = self.patience {
            c.early_stop_patience = p;
        }
        c.seed = self.net_seed;
        Ok(c)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// `none`, `h_only` or `h_and_x`, optionally suffixed with `-gaussian` or `-poisson`.
    #[arg(long)]
    pub scenario: String,
    #[arg(long)]
    pub family: Option<Family>,
    #[arg(long, conflicts_with = "per_leaf_range", required_unless_present = "per_leaf_range")]
    pub per_leaf: Option<usize>,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub per_leaf_range: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub replicate: u64,
    /// Also write an independent test sample.
    #[arg(long)]
    pub with_test: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub hierarchy: PathBuf,
    #[arg(long, default_value = "gaussian")]
    pub family: Family,
    #[arg(long, default_value = "")]
    pub drop_cols: String,
}

#[derive(Debug, Clone, Args)]
pub struct TrainEmbedArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReduceArgs {
    #[arg(long)]
    pub hierarchy: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, value_parser = parse_si, allow_negative_numbers = true)]
    pub si_star: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated thresholds.
    #[arg(long, value_parser = parse_grid, allow_negative_numbers = true)]
    pub grid: Grid,
    /// Separate test file; takes precedence over `--split`.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Training fraction of a stratified split.
    #[arg(long)]
    pub split: Option<f64>,
    /// One-based hierarchy level whose classes are the split strata.
    #[arg(long, default_value_t = 1)]
    pub stratum_level: usize,
    /// Standardize every covariate with training-split statistics.
    #[arg(long)]
    pub standardize: bool,
    /// Precomputed embeddings; otherwise the network is trained on the training split.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub hierarchy: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Comma-separated thresholds; defaults to -1, -0.95, ..., 1.
    #[arg(long, value_parser = parse_grid, allow_negative_numbers = true)]
    pub grid: Option<Grid>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub scenario: String,
    #[arg(long)]
    pub family: Option<Family>,
    #[arg(long, conflicts_with = "per_leaf_range", required_unless_present = "per_leaf_range")]
    pub per_leaf: Option<usize>,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub per_leaf_range: Option<Vec<usize>>,
    #[arg(long, default_value_t = 20)]
    pub replicates: usize,
    /// Comma-separated network initialisation seeds.
    #[arg(long, default_value = "1,2")]
    pub init_seeds: String,
    #[arg(long, value_parser = parse_si, default_value_t = 0.7, allow_negative_numbers = true)]
    pub si_star: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub sim: SimConfig,
    pub replicate: u64,
    pub with_test: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub data: PathBuf,
    pub hierarchy: PathBuf,
    pub family: Family,
    pub drop_cols: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEmbedConfig {
    pub data: DataConfig,
    pub net: NetConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReduceConfig {
    pub hierarchy: PathBuf,
    pub embeddings: PathBuf,
    pub si_star: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub frac_train: f64,
    /// One-based level.
    pub stratum_level: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateConfig {
    pub data: DataConfig,
    pub grid: Vec<f64>,
    pub test: Option<PathBuf>,
    pub split: Option<SplitConfig>,
    pub standardize: bool,
    pub embeddings: Option<PathBuf>,
    pub seed: u64,
    pub net: NetConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub hierarchy: PathBuf,
    pub embeddings: PathBuf,
    pub grid: Vec<f64>,
    pub seed: u64,
}

/// Fully resolved parameters of one command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Simulate(SimulateConfig),
    TrainEmbed(TrainEmbedConfig),
    Reduce(ReduceConfig),
    Evaluate(EvaluateConfig),
    SweepSi(SweepConfig),
    Experiment(ExperimentConfig),
}

fn counts(per_leaf: Option<usize>, range: &Option<Vec<usize>>) -> Result<Counts, CliError> {
    match (per_leaf, range.as_deref()) {
        (Some(n), None) => Ok(Counts::Fixed(n)),
        (None, Some([lo, hi])) => Ok(Counts::Uniform { lo: *lo, hi: *hi }),
        _ => Err(CliError::Usage("give either --per-leaf or --per-leaf-range".into())),
    }
}

fn scenario_family(scenario: &str, family: Option<Family>) -> Result<(Scenario, Family), CliError> {
    let (sc, suffix) = parse_scenario(scenario).map_err(CliError::Usage)?;
    match (suffix, family) {
        (Some(a), Some(b)) if a != b => Err(CliError::Usage(format!(
            "scenario suffix '{a}' contradicts --family {b}"
        ))),
        (Some(f), _) | (None, Some(f)) => Ok((sc, f)),
        (None, None) => Ok((sc, Family::Gaussian)),
    }
}

fn data_config(a: &DataArgs) -> DataConfig {
    DataConfig {
        data: a.data.clone(),
        hierarchy: a.hierarchy.clone(),
        family: a.family,
        drop_cols: parse_list(&a.drop_cols),
    }
}

fn default_sweep_grid() -> Vec<f64> {
    (0..=40)
        .map(|i| ((-1.0 + 0.05 * i as f64) * 1e6).round() / 1e6)
        .collect()
}

impl Command {
    /// Resolves the command-line arguments into a run configuration and output directory.
    pub fn resolve(&self) -> Result<(RunConfig, PathBuf), CliError> {
        Ok(match self {
            Command::Simulate(a) => {
                let (scenario, family) = scenario_family(&a.scenario, a.family)?;
                let sim = SimConfig::new(scenario, family, counts(a.per_leaf, &a.per_leaf_range)?, a.seed);
                sim.validate().map_err(|e| CliError::Usage(e.to_string()))?;
                (
                    RunConfig::Simulate(SimulateConfig {
                        sim,
                        replicate: a.replicate,
                        with_test: a.with_test,
                    }),
                    a.out.clone(),
                )
            }
            Command::TrainEmbed(a) => (
                RunConfig::TrainEmbed(TrainEmbedConfig {
                    data: data_config(&a.data),
                    net: a.net.resolve(a.data.family)?,
                }),
                a.out.clone(),
            ),
            Command::Reduce(a) => (
                RunConfig::Reduce(ReduceConfig {
                    hierarchy: a.hierarchy.clone(),
                    embeddings: a.embeddings.clone(),
                    si_star: a.si_star,
                    seed: a.seed,
                }),
                a.out.clone(),
            ),
            Command::Evaluate(a) => {
                let split = match (a.split, &a.test) {
                    (Some(f), None) => Some(SplitConfig {
                        frac_train: f,
                        stratum_level: a.stratum_level,
                        seed: a.seed,
                    }),
                    _ => None,
                };
                (
                    RunConfig::Evaluate(EvaluateConfig {
                        data: data_config(&a.data),
                        grid: a.grid.0.clone(),
                        test: a.test.clone(),
                        split,
                        standardize: a.standardize,
                        embeddings: a.embeddings.clone(),
                        seed: a.seed,
                        net: a.net.resolve(a.data.family)?,
                    }),
                    a.out.clone(),
                )
            }
            Command::SweepSi(a) => (
                RunConfig::SweepSi(SweepConfig {
                    hierarchy: a.hierarchy.clone(),
                    embeddings: a.embeddings.clone(),
                    grid: a.grid.clone().map(|g| g.0).unwrap_or_else(default_sweep_grid),
                    seed: a.seed,
                }),
                a.out.clone(),
            ),
            Command::Experiment(a) => {
                let (scenario, family) = scenario_family(&a.scenario, a.family)?;
                let sim = SimConfig::new(scenario, family, counts(a.per_leaf, &a.per_leaf_range)?, a.seed);
                sim.validate().map_err(|e| CliError::Usage(e.to_string()))?;
                let init_seeds = parse_list(&a.init_seeds)
                    .iter()
                    .map(|s| s.parse::<u64>().map_err(|_| CliError::Usage(format!("bad seed '{s}'"))))
                    .collect::<Result<Vec<_>, _>>()?;
                if init_seeds.is_empty() || a.replicates == 0 {
                    return Err(CliError::Usage("need at least one replicate and one seed".into()));
                }
                (
                    RunConfig::Experiment(ExperimentConfig {
                        sim,
                        replicates: a.replicates,
                        init_seeds,
                        si_star: a.si_star,
                        net: a.net.resolve(family)?,
                    }),
                    a.out.clone(),
                )
            }
            Command::Run(a) => {
                let text = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
                let config: RunConfig =
                    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad config file: {e}")))?;
                (config, a.out.clone())
            }
        })
    }
}

impl RunConfig {
    /// Rejects parameter values that cannot come from a valid command line.
    pub fn validate(&self) -> Result<(), CliError> {
        let si_ok = |v: f64| (-1.0..=1.0).contains(&v);
        let bad = match self {
            RunConfig::Reduce(c) => !si_ok(c.si_star),
            RunConfig::Evaluate(c) => c.grid.is_empty() || !c.grid.iter().all(|&v| si_ok(v)),
            RunConfig::SweepSi(c) => c.grid.is_empty() || !c.grid.iter().all(|&v| si_ok(v)),
            RunConfig::Experiment(c) => !si_ok(c.si_star),
            _ => false,
        };
        if bad {
            return Err(CliError::Usage("silhouette thresholds must lie in [-1, 1]".into()));
        }
        if let RunConfig::Evaluate(EvaluateConfig { split: Some(s), .. }) = self {
            if !(s.frac_train > 0.0 && s.frac_train < 1.0) || s.stratum_level == 0 {
                return Err(CliError::Usage(
                    "split fraction must lie in (0, 1), stratum level >= 1".into(),
                ));
            }
        }
        Ok(())
    }

    /// Executes the configuration, writing everything under `out`.
    pub fn execute(&self, out: &Path) -> Result<(), CliError> {
        self.validate()?;
        let run = RunDir::create(out)?;
        run.write_json(
            "config.json",
            &serde_json::to_value(self).context("serializing config")?,
        )?;
        match self {
            RunConfig::Simulate(c) => simulate(c, &run),
            RunConfig::TrainEmbed(c) => train_embed(c, &run),
            RunConfig::Reduce(c) => reduce_cmd(c, &run),
            RunConfig::Evaluate(c) => evaluate(c, &run),
            RunConfig::SweepSi(c) => sweep(c, &run),
            RunConfig::Experiment(c) => experiment(c, &run),
        }
        .map_err(CliError::Runtime)
    }
}

struct RunDir {
    root: PathBuf,
}

impl RunDir {
    fn create(root: &Path) -> anyhow::Result<Self> {
        for sub in ["outputs", "trace"] {
            fs::create_dir_all(root.join(sub)).with_context(|| format!("creating {}", root.join(sub).display()))?;
        }
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    fn file(&self, rel: &str) -> anyhow::Result<BufWriter<File>> {
        let path = self.root.join(rel);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(f))
    }

    fn write_json(&self, rel: &str, value: &serde_json::Value) -> anyhow::Result<()> {
        let mut w = self.file(rel)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn write_text(&self, rel: &str, text: &str) -> anyhow::Result<()> {
        let mut w = self.file(rel)?;
        w.write_all(text.as_bytes())?;
        w.flush()?;
        Ok(())
    }
}

fn load_hierarchy(path: &Path) -> anyhow::Result<Hierarchy> {
    Hierarchy::from_csv_path(path).with_context(|| format!("loading hierarchy {}", path.display()))
}

fn load_data(c: &DataConfig, h: &Hierarchy) -> anyhow::Result<Dataset> {
    Dataset::from_csv_path(&c.data, h, c.family, &c.drop_cols)
        .with_context(|| format!("loading data {}", c.data.display()))
}

fn load_embeddings(path: &Path, h: &Hierarchy) -> anyhow::Result<EmbeddingTable> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    EmbeddingTable::read_csv(f, h).with_context(|| format!("reading embeddings {}", path.display()))
}

fn simulate(c: &SimulateConfig, run: &RunDir) -> anyhow::Result<()> {
    let h = sim_hierarchy();
    let train = generate(&c.sim, &h, c.replicate, 0)?;
    train.write_csv(run.file("outputs/data.csv")?, &h)?;
    if c.with_test {
        generate(&c.sim, &h, c.replicate, 1)?.write_csv(run.file("outputs/test.csv")?, &h)?;
    }
    run.write_text("outputs/hierarchy.csv", &h.to_csv_string())?;
    run.write_json("outputs/truth.json", &true_structure(&h, c.sim.scenario).to_json(&h))?;
    log::info!("simulated {} observations", train.len());
    Ok(())
}

fn write_loss(run: &RunDir, loss: &[f64]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(run.file("outputs/loss.csv")?);
    w.write_record(["epoch", "loss"])?;
    for (e, l) in loss.iter().enumerate() {
        w.write_record([(e + 1).to_string(), format!("{l:?}")])?;
    }
    w.flush()?;
    Ok(())
}

fn train_embed(c: &TrainEmbedConfig, run: &RunDir) -> anyhow::Result<()> {
    let h = load_hierarchy(&c.data.hierarchy)?;
    let data = load_data(&c.data, &h)?;
    let emb = embed(&data, &h, &c.net)?;
    emb.table.write_csv(run.file("outputs/embeddings.csv")?, &h)?;
    emb.network
        .to_checkpoint()
        .write_json(run.file("outputs/network.json")?)?;
    write_loss(run, &emb.report.epoch_loss)
}

fn reduce_cmd(c: &ReduceConfig, run: &RunDir) -> anyhow::Result<()> {
    let h = load_hierarchy(&c.hierarchy)?;
    let table = load_embeddings(&c.embeddings, &h)?;
    let (reduced, trace) = reduce(&h, &table, c.si_star, c.seed)?;
    run.write_json("outputs/reduced.json", &reduced.to_json(&h))?;
    write_trace(run.file("trace/reduce.jsonl")?, &trace)?;
    println!(
        "level sizes {:?}, {} leaf groups",
        reduced.level_sizes(),
        reduced.num_groups()
    );
    Ok(())
}

fn si_tag(si: f64) -> String {
    format!("{si}")
}

/// Comparison table with one row per model; `*` marks the minimum of each criterion.
pub fn comparison_csv(rows: &[EvalRow]) -> anyhow::Result<String> {
    let has_rmse = rows.iter().all(|r| r.score.rmse.is_some());
    let min_of = |f: &dyn Fn(&EvalRow) -> f64| rows.iter().map(f).fold(f64::INFINITY, f64::min);
    let min_aic = min_of(&|r| r.score.aic);
    let min_bic = min_of(&|r| r.score.bic);
    let min_rmse = min_of(&|r| r.score.rmse.unwrap_or(f64::INFINITY));
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["model", "si_star", "level_sizes", "groups", "aic", "bic"];
    if has_rmse {
        header.push("rmse");
    }
    header.push("minimum");
    w.write_record(&header)?;
    for r in rows {
        let mut marks = Vec::new();
        if r.score.aic == min_aic {
            marks.push("aic");
        }
        if r.score.bic == min_bic {
            marks.push("bic");
        }
        if has_rmse && r.score.rmse == Some(min_rmse) {
            marks.push("rmse");
        }
        let sizes = r
            .level_sizes
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("-");
        let mut rec = vec![
            if r.si_star.is_some() {
                "reduced".to_string()
            } else {
                "original".to_string()
            },
            r.si_star.map(si_tag).unwrap_or_default(),
            sizes,
            r.score.groups.to_string(),
            format!("{:?}", r.score.aic),
            format!("{:?}", r.score.bic),
        ];
        if has_rmse {
            rec.push(format!("{:?}", r.score.rmse.expect("checked")));
        }
        rec.push(marks.join(";"));
        w.write_record(&rec)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn print_comparison(rows: &[EvalRow]) {
    let mark = |v: f64, best: f64| if v == best { "*" } else { " " };
    let best = |f: &dyn Fn(&EvalRow) -> f64| rows.iter().map(f).fold(f64::INFINITY, f64::min);
    let (ba, bb) = (best(&|r| r.score.aic), best(&|r| r.score.bic));
    let br = best(&|r| r.score.rmse.unwrap_or(f64::INFINITY));
    println!(
        "{:<10} {:<16} {:>14} {:>14} {:>10}",
        "model", "levels", "AIC", "BIC", "RMSE"
    );
    for r in rows {
        let name = r.si_star.map(|s| format!("SI*={s}")).unwrap_or_else(|| "h".into());
        let levels = format!("{:?}", r.level_sizes);
        let rmse = r
            .score
            .rmse
            .map(|v| format!("{v:.4}{}", mark(v, br)))
            .unwrap_or_else(|| "-".into());
        println!(
            "{name:<10} {levels:<16} {:>13.2}{} {:>13.2}{} {rmse:>10}",
            r.score.aic,
            mark(r.score.aic, ba),
            r.score.bic,
            mark(r.score.bic, bb)
        );
    }
}

fn evaluate(c: &EvaluateConfig, run: &RunDir) -> anyhow::Result<()> {
    let h = load_hierarchy(&c.data.hierarchy)?;
    let data = load_data(&c.data, &h)?;
    let (train, test) = match (&c.test, &c.split) {
        (Some(path), _) => {
            let test = Dataset::from_csv_path(path, &h, c.data.family, &c.data.drop_cols)
                .with_context(|| format!("loading test data {}", path.display()))?;
            (data, Some(test))
        }
        (None, Some(s)) => {
            let (tr, te) = data.stratified_split(&h, s.frac_train, s.stratum_level - 1, s.seed)?;
            (tr, Some(te))
        }
        (None, None) => {
            eprintln!("warning: no test set given, RMSE column omitted");
            (data, None)
        }
    };
    let (train, test) = if c.standardize && train.num_covariates() > 0 {
        let cols: Vec<usize> = (0..train.num_covariates()).collect();
        let (tr, stats) = train.standardize(&cols)?;
        let te = test.map(|t| t.apply_standardization(&stats));
        (tr, te)
    } else {
        (train, test)
    };
    let table = match &c.embeddings {
        Some(path) => load_embeddings(path, &h)?,
        None => {
            let emb = embed(&train, &h, &c.net)?;
            emb.network
                .to_checkpoint()
                .write_json(run.file("outputs/network.json")?)?;
            write_loss(run, &emb.report.epoch_loss)?;
            emb.table
        }
    };
    table.write_csv(run.file("outputs/embeddings.csv")?, &h)?;
    let result = evaluate_grid(&train, test.as_ref(), &h, &table, &c.grid, c.seed)?;
    for (si, reduced, trace) in &result.reductions {
        let tag = si_tag(*si);
        run.write_json(&format!("outputs/reduced_{tag}.json"), &reduced.to_json(&h))?;
        write_trace(run.file(&format!("trace/reduce_{tag}.jsonl"))?, trace)?;
    }
    run.write_text("outputs/comparison.csv", &comparison_csv(&result.rows)?)?;
    print_comparison(&result.rows);
    Ok(())
}

fn sweep(c: &SweepConfig, run: &RunDir) -> anyhow::Result<()> {
    use rayon::prelude::*;
    let h = load_hierarchy(&c.hierarchy)?;
    let table = load_embeddings(&c.embeddings, &h)?;
    let results = c
        .grid
        .par_iter()
        .map(|&si| reduce(&h, &table, si, c.seed).map(|r| (si, r)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut structures = Vec::new();
    let mut w = csv::Writer::from_writer(run.file("outputs/sweep.csv")?);
    w.write_record(["si_star", "level_sizes", "groups", "structure"])?;
    for (si, (reduced, trace)) in &results {
        let key = reduced.structure_key();
        let idx = match structures.iter().position(|k| *k == key) {
            Some(i) => i,
            None => {
                structures.push(key);
                structures.len() - 1
            }
        };
        let sizes = reduced
            .level_sizes()
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("-");
        w.write_record([si_tag(*si), sizes, reduced.num_groups().to_string(), idx.to_string()])?;
        write_trace(run.file(&format!("trace/reduce_{}.jsonl", si_tag(*si)))?, trace)?;
    }
    w.flush()?;
    Ok(())
}

fn experiment(c: &ExperimentConfig, run: &RunDir) -> anyhow::Result<()> {
    let report = run_experiment(c)?;
    report.write_runs_csv(run.file("outputs/runs.csv")?)?;
    run.write_json("outputs/summary.json", &serde_json::to_value(&report.summary)?)?;
    let table = report.summary_table();
    run.write_text("outputs/summary.txt", &table)?;
    print!("{table}");
    Ok(())
}

/// Builds the global worker pool, honouring [`THREADS_ENV`].
pub fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.into()))
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = init_threads()
        .and_then(|_| cli.command.resolve())
        .and_then(|(config, out)| config.execute(&out));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Runtime(inner) = &e {
                for cause in inner.chain().skip(1) {
                    eprintln!("  caused by: {cause}");
                }
            }
            e.exit_code()
        }
    }
}
