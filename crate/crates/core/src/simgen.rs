//! Synthetic data on a fixed three-level hierarchy (5, 20 and 86 classes).
//!
//! The conditional mean is `g^{-1}(μ + Σ γ·X + β'x)`, where each `X` is an
//! effect-coded indicator of one class within its sibling set. Only the
//! indicator columns listed in [`TERMS`] carry a coefficient, which makes
//! several classes share the same effect; the induced grouping is the
//! [`true_structure`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Family};
use crate::glm::{effect_code, GlmError};
use crate::hierarchy::{Hierarchy, NodeId};
use crate::reducer::ReducedHierarchy;
use crate::seed;

const SIM_HIERARCHY_CSV: &str = include_str!("../data/sim_hierarchy.csv");

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    None,
    HOnly,
    HAndX,
}

impl std::str::FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "none" => Ok(Scenario::None),
            "h_only" | "h" => Ok(Scenario::HOnly),
            "h_and_x" | "both" => Ok(Scenario::HAndX),
            other => Err(format!("unknown scenario '{other}' (none, h_only, h_and_x)")),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::None => "none",
            Scenario::HOnly => "h_only",
            Scenario::HAndX => "h_and_x",
        })
    }
}

/// Observations per leaf class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Counts {
    Fixed(usize),
    /// Uniform integer in `lo..=hi`, drawn independently per leaf.
    Uniform {
        lo: usize,
        hi: usize,
    },
}

impl std::str::FromStr for Counts {
    type Err = String;
    /// `200` or `50-100`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("bad per-leaf count '{s}' (use N or LO-HI)");
        match s.split_once('-') {
            Some((lo, hi)) => {
                let lo = lo.trim().parse().map_err(|_| bad())?;
                let hi = hi.trim().parse().map_err(|_| bad())?;
                Ok(Counts::Uniform { lo, hi })
            }
            None => Ok(Counts::Fixed(s.trim().parse().map_err(|_| bad())?)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub mu: f64,
    pub gamma: [f64; 5],
    pub beta_x: [f64; 3],
}

impl SimParams {
    /// Reference parameter values per scenario and family.
    pub fn table(scenario: Scenario, family: Family) -> Self {
        let mu = match family {
            Family::Gaussian => 20.0,
            Family::Poisson => 0.0,
        };
        let gamma = match scenario {
            Scenario::None => [0.0; 5],
            _ => [0.6, 0.4, 0.3, 0.3, 0.2],
        };
        let beta_x = match scenario {
            Scenario::HAndX => [6.0, 0.8, 0.5],
            _ => [0.0; 3],
        };
        Self { mu, gamma, beta_x }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub scenario: Scenario,
    pub family: Family,
    pub counts: Counts,
    /// Standard deviation of the Gaussian noise.
    pub sigma: f64,
    pub seed: u64,
    pub params: SimParams,
}

impl SimConfig {
    pub fn new(scenario: Scenario, family: Family, counts: Counts, seed: u64) -> Self {
        Self {
            scenario,
            family,
            counts,
            sigma: 1.5,
            seed,
            params: SimParams::table(scenario, family),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        match self.counts {
            Counts::Fixed(0) => return Err(SimError::InvalidConfig("zero observations per leaf".into())),
            Counts::Uniform { lo, hi } if lo == 0 || lo > hi => {
                return Err(SimError::InvalidConfig(format!("bad count range {lo}-{hi}")))
            }
            _ => {}
        }
        if !(self.sigma > 0.0) {
            return Err(SimError::InvalidConfig("sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Which coefficient multiplies an indicator column.
#[derive(Debug, Clone, Copy)]
pub struct Term {
    /// One-based level and class index of the indicator `X_{level,index}`.
    pub level: usize,
    pub index: usize,
    /// Zero-based position in `gamma`.
    pub gamma: usize,
    pub scale: f64,
}

const fn t(level: usize, index: usize, gamma: usize, scale: f64) -> Term {
    Term {
        level,
        index,
        gamma,
        scale,
    }
}

/// Indicator columns with a nonzero coefficient.
pub const TERMS: &[Term] = &[
    t(1, 1, 0, 1.0),
    t(1, 2, 0, 1.0),
    t(1, 3, 0, -2.0 / 3.0),
    t(1, 4, 0, -2.0 / 3.0),
    t(2, 1, 1, 1.0),
    t(2, 2, 1, 1.0),
    t(2, 3, 1, -1.0),
    t(2, 5, 1, 1.0),
    t(2, 6, 1, 1.0),
    t(2, 7, 1, -1.0),
    t(2, 9, 2, 1.0),
    t(2, 10, 2, 1.0),
    t(2, 11, 2, -1.0),
    t(2, 13, 2, 1.0),
    t(2, 14, 2, 1.0),
    t(2, 15, 2, -1.0),
    t(3, 1, 3, 1.0),
    t(3, 2, 3, 1.0),
    t(3, 3, 3, 1.0),
    t(3, 5, 3, 1.0),
    t(3, 6, 3, 1.0),
    t(3, 7, 3, 1.0),
    t(3, 17, 3, 1.0),
    t(3, 18, 3, 1.0),
    t(3, 19, 3, 1.0),
    t(3, 20, 3, 1.0),
    t(3, 21, 3, 1.0),
    t(3, 22, 3, 1.0),
    t(3, 24, 3, 1.0),
    t(3, 25, 3, 1.0),
    t(3, 26, 3, 1.0),
    t(3, 27, 3, 1.0),
    t(3, 28, 3, 1.0),
    t(3, 29, 3, 1.0),
    t(3, 39, 4, 1.0),
    t(3, 40, 4, 1.0),
    t(3, 41, 4, 1.0),
    t(3, 43, 4, 1.0),
    t(3, 44, 4, 1.0),
    t(3, 45, 4, 1.0),
    t(3, 55, 4, 1.0),
    t(3, 56, 4, 1.0),
    t(3, 57, 4, 1.0),
    t(3, 59, 4, 1.0),
    t(3, 60, 4, 1.0),
    t(3, 61, 4, 1.0),
];

/// The fixed simulation hierarchy.
pub fn sim_hierarchy() -> Hierarchy {
    Hierarchy::from_csv_reader(SIM_HIERARCHY_CSV.as_bytes()).expect("bundled hierarchy is valid")
}

fn node(level: usize, index: usize) -> NodeId {
    NodeId::new(level - 1, index - 1)
}

fn nodes(level: usize, idx: impl IntoIterator<Item = usize>) -> Vec<NodeId> {
    idx.into_iter().map(|i| node(level, i)).collect()
}

/// Reduced structure encoded by the generator for `scenario`.
pub fn true_structure(hierarchy: &Hierarchy, scenario: Scenario) -> ReducedHierarchy {
    let classes: Vec<(usize, Vec<NodeId>, Option<usize>)> = match scenario {
        Scenario::None => vec![(0, nodes(1, 1..=5), None)],
        _ => {
            let a1a: Vec<usize> = [1, 2, 3, 5, 6, 7].into_iter().chain(17..=22).chain(24..=29).collect();
            let b1a = [39, 40, 41, 43, 44, 45, 55, 56, 57, 59, 60, 61];
            vec![
                (0, nodes(1, [1, 2]), None),
                (0, nodes(1, [3, 4, 5]), None),
                (1, nodes(2, [1, 2, 5, 6]), Some(0)),
                (1, nodes(2, [3, 4, 7, 8]), Some(0)),
                (1, nodes(2, [9, 10, 13, 14]), Some(1)),
                (1, nodes(2, [11, 12, 15, 16]), Some(1)),
                (2, nodes(3, a1a), Some(2)),
                (2, nodes(3, [4, 8]), Some(2)),
                (2, nodes(3, [23, 30]), Some(2)),
                (2, nodes(3, b1a), Some(4)),
                (2, nodes(3, [42, 46, 58, 62]), Some(4)),
            ]
        }
    };
    ReducedHierarchy::from_classes(hierarchy, &classes).expect("true structure is valid")
}

/// Sum of the `γ·X` terms for every leaf.
pub fn leaf_effects(hierarchy: &Hierarchy, params: &SimParams) -> Result<Vec<f64>, SimError> {
    let mut effects = vec![0.0; hierarchy.num_leaves()];
    for leaf in hierarchy.leaves() {
        let path = hierarchy.leaf_path(leaf).expect("leaf");
        for term in TERMS {
            let column = node(term.level, term.index);
            let siblings = hierarchy.siblings(column);
            if siblings.last() == Some(&column) {
                return Err(SimError::InvalidConfig(format!("{column} is a last sibling")));
            }
            let value = path[column.level];
            if !siblings.contains(&value) {
                continue;
            }
            let row = effect_code(&siblings, value)?;
            let pos = siblings.iter().position(|s| *s == column).expect("column in siblings");
            effects[leaf.index] += params.gamma[term.gamma] * term.scale * row[pos];
        }
    }
    Ok(effects)
}

/// Covariates `x1 = sin(U(0,5))`, `x2 ~ N(0,1)`, `x3 = U(1,2)^2`, row-major `n × 3`.
pub fn gen_covariates(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let u05 = Uniform::new(0.0f64, 5.0).expect("valid range");
    let u12 = Uniform::new(1.0f64, 2.0).expect("valid range");
    let normal = Normal::new(0.0, 1.0).expect("valid sd");
    let mut x = Vec::with_capacity(n * 3);
    for _ in 0..n {
        x.push(u05.sample(rng).sin());
        x.push(normal.sample(rng));
        x.push(u12.sample(rng).powi(2));
    }
    x
}

pub const COVARIATE_NAMES: [&str; 3] = ["x1", "x2", "x3"];

/// Per-leaf observation counts.
pub fn leaf_counts(counts: Counts, num_leaves: usize, rng: &mut impl Rng) -> Vec<usize> {
    match counts {
        Counts::Fixed(m) => vec![m; num_leaves],
        Counts::Uniform { lo, hi } => (0..num_leaves).map(|_| rng.random_range(lo..=hi)).collect(),
    }
}

/// Conditional means for given leaves and covariates.
pub fn conditional_mean(config: &SimConfig, effects: &[f64], leaves: &[usize], x: &[f64]) -> Vec<f64> {
    leaves
        .iter()
        .enumerate()
        .map(|(i, &leaf)| {
            let xb: f64 = config
                .params
                .beta_x
                .iter()
                .zip(&x[i * 3..i * 3 + 3])
                .map(|(b, v)| b * v)
                .sum();
            let eta = config.params.mu + effects[leaf] + xb;
            match config.family {
                Family::Gaussian => eta,
                Family::Poisson => eta.exp(),
            }
        })
        .collect()
}

/// Draws responses around the conditional means.
pub fn gen_response(config: &SimConfig, mean: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    match config.family {
        Family::Gaussian => {
            let noise = Normal::new(0.0, config.sigma).expect("valid sd");
            mean.iter().map(|m| m + noise.sample(rng)).collect()
        }
        Family::Poisson => mean
            .iter()
            .map(|&m| Poisson::new(m).expect("positive mean").sample(rng))
            .collect(),
    }
}

/// One simulated dataset. `stream` separates independent draws for the same
/// replicate (for example training and test data).
pub fn generate(config: &SimConfig, hierarchy: &Hierarchy, replicate: u64, stream: u64) -> Result<Dataset, SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, &[replicate, stream]));
    let effects = leaf_effects(hierarchy, &config.params)?;
    let counts = leaf_counts(config.counts, hierarchy.num_leaves(), &mut rng);
    let leaves: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(leaf, &c)| std::iter::repeat_n(leaf, c))
        .collect();
    let x = gen_covariates(leaves.len(), &mut rng);
    let mean = conditional_mean(config, &effects, &leaves, &x);
    let y = gen_response(config, &mean, &mut rng);
    Ok(Dataset::new(
        y,
        leaves,
        x,
        COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(),
        config.family,
    )?)
}
