//! k-medoids clustering of embedding vectors, silhouette validation and
//! selection of the number of clusters.
//!
//! Distances are Euclidean. Sets with at most [`EXACT_LIMIT`] candidate medoid
//! subsets are solved by enumeration. Other sets up to [`CLARA_THRESHOLD`] items
//! use PAM (greedy BUILD followed by steepest-descent SWAP); larger sets use
//! CLARA subsampling. Medoids are reported in increasing item order, which
//! also fixes the cluster numbering.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CLARA_THRESHOLD: usize = 200;
pub const CLARA_SAMPLES: usize = 5;
pub const EXACT_LIMIT: u128 = 2000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("vectors have different lengths ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("k = {k} is outside 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("k = {k} exceeds the {distinct} distinct items")]
    TooFewDistinct { k: usize, distinct: usize },
    #[error("silhouette is undefined for a single cluster")]
    SingleCluster,
    #[error("no items to cluster")]
    Empty,
}

pub fn distance(a: &[f64], b: &[f64]) -> Result<f64, ClusterError> {
    if a.len() != b.len() {
        return Err(ClusterError::DimensionMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// Relative size below which a distance counts as rounding noise of the coordinates.
pub const ROUNDING_TOL: f64 = 1e-12;

/// Symmetric matrix of pairwise Euclidean distances. Distances within
/// [`ROUNDING_TOL`] times the summed vector norms are stored as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(items: &[Vec<f64>]) -> Result<Self, ClusterError> {
        let n = items.len();
        if let Some(first) = items.first() {
            if let Some(bad) = items.iter().find(|v| v.len() != first.len()) {
                return Err(ClusterError::DimensionMismatch(first.len(), bad.len()));
            }
        }
        let norms: Vec<f64> = items
            .iter()
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let mut v = distance(&items[i], &items[j])?;
                if v <= ROUNDING_TOL * (norms[i] + norms[j]) {
                    v = 0.0;
                }
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Ok(Self { n, d })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    /// Number of items at distinct locations.
    pub fn distinct(&self) -> usize {
        (0..self.n).filter(|&i| (0..i).all(|j| self.get(i, j) > 0.0)).count()
    }

    fn submatrix(&self, idx: &[usize]) -> Self {
        let m = idx.len();
        let mut d = vec![0.0; m * m];
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                d[a * m + b] = self.get(i, j);
            }
        }
        Self { n: m, d }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Silhouette {
    pub per_item: Vec<f64>,
    /// Mean distance to the other members of the item's own cluster.
    pub a: Vec<f64>,
    /// Smallest mean distance to the members of another cluster.
    pub b: Vec<f64>,
    pub overall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSolution {
    pub k: usize,
    /// Zero-based cluster of every item.
    pub assignment: Vec<usize>,
    /// Item position of each cluster's medoid, increasing.
    pub medoids: Vec<usize>,
    /// Sum of distances from every item to its medoid.
    pub cost: f64,
    /// Present whenever `k >= 2`.
    pub silhouette: Option<Silhouette>,
    /// Overall silhouette of every candidate `k` examined by [`select_k`].
    pub si_curve: Vec<(usize, f64)>,
}

impl ClusterSolution {
    /// Items of cluster `c`, in item order.
    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == c)
            .collect()
    }

    fn single(dist: &DistanceMatrix) -> Self {
        let (medoid, cost) = (0..dist.len())
            .map(|i| (i, (0..dist.len()).map(|j| dist.get(i, j)).sum::<f64>()))
            .fold((0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
        Self {
            k: 1,
            assignment: vec![0; dist.len()],
            medoids: vec![medoid],
            cost,
            silhouette: None,
            si_curve: Vec::new(),
        }
    }
}

/// Nearest medoid per item, ties to the lower cluster index, and the total
/// distance to the assigned medoids.
pub fn assign(dist: &DistanceMatrix, medoids: &[usize]) -> (Vec<usize>, f64) {
    let mut cost = 0.0;
    let assignment = (0..dist.len())
        .map(|j| {
            let mut best = 0;
            for c in 1..medoids.len() {
                if dist.get(j, medoids[c]) < dist.get(j, medoids[best]) {
                    best = c;
                }
            }
            cost += dist.get(j, medoids[best]);
            best
        })
        .collect();
    (assignment, cost)
}

/// Nearest and second-nearest medoid distance per item, and the nearest medoid slot.
fn nearest_two(dist: &DistanceMatrix, medoids: &[usize]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = dist.len();
    let mut near = vec![0; n];
    let mut d1 = vec![f64::INFINITY; n];
    let mut d2 = vec![f64::INFINITY; n];
    for j in 0..n {
        for (slot, &m) in medoids.iter().enumerate() {
            let v = dist.get(j, m);
            if v < d1[j] {
                d2[j] = d1[j];
                d1[j] = v;
                near[j] = slot;
            } else if v < d2[j] {
                d2[j] = v;
            }
        }
    }
    (near, d1, d2)
}

/// PAM on a full distance matrix. Returns the sorted medoids and the total
/// cost after BUILD and after every accepted swap.
pub fn pam(dist: &DistanceMatrix, k: usize) -> Result<(Vec<usize>, Vec<f64>), ClusterError> {
    check_k(dist, k)?;
    let n = dist.len();
    // BUILD
    let mut medoids = Vec::with_capacity(k);
    let mut is_medoid = vec![false; n];
    let mut first = 0;
    let mut first_cost = f64::INFINITY;
    for i in 0..n {
        let c: f64 = (0..n).map(|j| dist.get(i, j)).sum();
        if c < first_cost {
            first_cost = c;
            first = i;
        }
    }
    medoids.push(first);
    is_medoid[first] = true;
    let mut nearest: Vec<f64> = (0..n).map(|j| dist.get(j, first)).collect();
    while medoids.len() < k {
        let mut best = usize::MAX;
        let mut best_gain = f64::NEG_INFINITY;
        for i in (0..n).filter(|&i| !is_medoid[i]) {
            let gain: f64 = (0..n).map(|j| (nearest[j] - dist.get(j, i)).max(0.0)).sum();
            if gain > best_gain {
                best_gain = gain;
                best = i;
            }
        }
        medoids.push(best);
        is_medoid[best] = true;
        for j in 0..n {
            nearest[j] = nearest[j].min(dist.get(j, best));
        }
    }

    // SWAP
    let mut cost: f64 = nearest.iter().sum();
    let mut history = vec![cost];
    let tol = 1e-12 * (1.0 + cost.abs());
    loop {
        let (near, d1, d2) = nearest_two(dist, &medoids);
        let mut best_delta = -tol;
        let mut best_swap = None;
        let mut delta = vec![0.0; k];
        for h in (0..n).filter(|&h| !is_medoid[h]) {
            let mut common = 0.0;
            delta.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..n {
                let dh = dist.get(j, h);
                let stay = dh.min(d1[j]);
                common += stay - d1[j];
                delta[near[j]] += dh.min(d2[j]) - stay;
            }
            for (slot, &dm) in delta.iter().enumerate() {
                if coincides(dist, &medoids, slot, h) {
                    continue;
                }
                let total = common + dm;
                if total < best_delta {
                    best_delta = total;
                    best_swap = Some((slot, h));
                }
            }
        }
        match best_swap {
            Some((slot, h)) => {
                is_medoid[medoids[slot]] = false;
                is_medoid[h] = true;
                medoids[slot] = h;
                let (_, c) = assign(dist, &medoids);
                cost = c;
                history.push(cost);
            }
            None => break,
        }
    }
    medoids.sort_unstable();
    Ok((medoids, history))
}

/// Partitions `items` into `k` clusters.
pub fn kmedoids(items: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterSolution, ClusterError> {
    let dist = DistanceMatrix::new(items)?;
    kmedoids_with(&dist, k, seed)
}

pub fn kmedoids_with(dist: &DistanceMatrix, k: usize, seed: u64) -> Result<ClusterSolution, ClusterError> {
    check_k(dist, k)?;
    let n = dist.len();
    let medoids = if binomial(n, k) <= EXACT_LIMIT {
        exhaustive(dist, k)
    } else if n > CLARA_THRESHOLD {
        clara(dist, k, seed)?
    } else {
        pam(dist, k)?.0
    };
    let (assignment, cost) = assign(dist, &medoids);
    let silhouette = if k >= 2 {
        Some(silhouette(dist, &assignment, k)?)
    } else {
        None
    };
    Ok(ClusterSolution {
        k,
        assignment,
        medoids,
        cost,
        silhouette,
        si_curve: Vec::new(),
    })
}

fn check_k(dist: &DistanceMatrix, k: usize) -> Result<(), ClusterError> {
    let n = dist.len();
    if k == 0 || k > n {
        return Err(ClusterError::KOutOfRange { k, n });
    }
    let distinct = dist.distinct();
    if k > distinct {
        return Err(ClusterError::TooFewDistinct { k, distinct });
    }
    Ok(())
}

/// True when `h` sits on a medoid other than the one in `slot`.
fn coincides(dist: &DistanceMatrix, medoids: &[usize], slot: usize, h: usize) -> bool {
    medoids
        .iter()
        .enumerate()
        .any(|(s, &m)| s != slot && dist.get(h, m) == 0.0)
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc.saturating_mul((n - i) as u128) / (i as u128 + 1))
}

/// Optimal medoids by enumerating all `k`-subsets at distinct locations; ties
/// keep the first subset.
fn exhaustive(dist: &DistanceMatrix, k: usize) -> Vec<usize> {
    let n = dist.len();
    let mut current: Vec<usize> = (0..k).collect();
    let mut best = (f64::INFINITY, current.clone());
    loop {
        let (_, cost) = assign(dist, &current);
        let separated = (0..k).all(|a| (a + 1..k).all(|b| dist.get(current[a], current[b]) > 0.0));
        if separated && cost < best.0 {
            best = (cost, current.clone());
        }
        let Some(i) = (0..k).rev().find(|&i| current[i] < n - k + i) else {
            break;
        };
        current[i] += 1;
        for j in i + 1..k {
            current[j] = current[j - 1] + 1;
        }
    }
    best.1
}

fn clara(dist: &DistanceMatrix, k: usize, seed: u64) -> Result<Vec<usize>, ClusterError> {
    let n = dist.len();
    let size = n.min(40 + 2 * k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..CLARA_SAMPLES {
        let mut idx = rand::seq::index::sample(&mut rng, n, size).into_vec();
        idx.sort_unstable();
        let sub = dist.submatrix(&idx);
        if sub.distinct() < k {
            continue;
        }
        let (local, _) = pam(&sub, k)?;
        let mut medoids: Vec<usize> = local.iter().map(|&m| idx[m]).collect();
        medoids.sort_unstable();
        let (_, cost) = assign(dist, &medoids);
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, medoids));
        }
    }
    match best {
        Some((_, medoids)) => Ok(medoids),
        None => Ok(pam(dist, k)?.0),
    }
}

/// Silhouette of a partition given as zero-based cluster labels `0..k`.
pub fn silhouette(dist: &DistanceMatrix, assignment: &[usize], k: usize) -> Result<Silhouette, ClusterError> {
    if k < 2 {
        return Err(ClusterError::SingleCluster);
    }
    let n = dist.len();
    let mut sizes = vec![0usize; k];
    for &c in assignment {
        sizes[c] += 1;
    }
    let mut per_item = vec![0.0; n];
    let mut a_out = vec![0.0; n];
    let mut b_out = vec![0.0; n];
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            sums[assignment[j]] += dist.get(i, j);
        }
        let own = assignment[i];
        let a = if sizes[own] > 1 {
            sums[own] / (sizes[own] - 1) as f64
        } else {
            0.0
        };
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        a_out[i] = a;
        b_out[i] = b;
        let m = a.max(b);
        per_item[i] = if sizes[own] <= 1 || m == 0.0 || !b.is_finite() {
            0.0
        } else {
            (b - a) / m
        };
    }
    let overall = per_item.iter().sum::<f64>() / n as f64;
    Ok(Silhouette {
        per_item,
        a: a_out,
        b: b_out,
        overall,
    })
}

/// Chooses the number of clusters by maximum overall silhouette over
/// `2..=J-1`, ties to the smaller `k`, and falls back to a single cluster when
/// the best value is below `si_star`.
///
/// With two items the only multi-cluster solution is two singletons with
/// silhouette 0; it is kept exactly when `si_star <= 0`. Candidate `k` never
/// exceeds the number of distinct items, so coinciding items always end up in
/// one cluster.
pub fn select_k(items: &[Vec<f64>], si_star: f64, seed: u64) -> Result<ClusterSolution, ClusterError> {
    let dist = DistanceMatrix::new(items)?;
    select_k_with(&dist, si_star, seed)
}

pub fn select_k_with(dist: &DistanceMatrix, si_star: f64, seed: u64) -> Result<ClusterSolution, ClusterError> {
    let n = dist.len();
    if n == 0 {
        return Err(ClusterError::Empty);
    }
    if n == 1 {
        return Ok(ClusterSolution::single(dist));
    }
    let distinct = dist.distinct();
    if distinct == 1 {
        return Ok(ClusterSolution::single(dist));
    }
    let candidates: Vec<usize> = if n == 2 {
        vec![2]
    } else {
        (2..n.min(distinct + 1)).collect()
    };
    let solutions = candidates
        .par_iter()
        .map(|&k| kmedoids_with(dist, k, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let si_curve: Vec<(usize, f64)> = solutions
        .iter()
        .map(|s| (s.k, s.silhouette.as_ref().map_or(0.0, |v| v.overall)))
        .collect();
    let mut best = 0;
    for (i, &(_, si)) in si_curve.iter().enumerate() {
        if si > si_curve[best].1 {
            best = i;
        }
    }
    let mut chosen = if si_curve[best].1 < si_star {
        ClusterSolution::single(dist)
    } else {
        solutions.into_iter().nth(best).expect("candidate")
    };
    chosen.si_curve = si_curve;
    Ok(chosen)
}

/// [`select_k`] on items identified by sortable keys. The items are put in key
/// order first, so the result does not depend on the input order; the
/// returned keys give the item order the solution refers to.
pub fn select_k_keyed<K: Ord + Clone>(
    items: &[(K, Vec<f64>)],
    si_star: f64,
    seed: u64,
) -> Result<(Vec<K>, ClusterSolution), ClusterError> {
    let mut sorted: Vec<&(K, Vec<f64>)> = items.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let keys = sorted.iter().map(|(k, _)| k.clone()).collect();
    let vectors: Vec<Vec<f64>> = sorted.iter().map(|(_, v)| v.clone()).collect();
    Ok((keys, select_k(&vectors, si_star, seed)?))
}
