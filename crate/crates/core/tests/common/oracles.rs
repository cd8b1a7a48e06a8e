//! Independent reference implementations used by the integration and
//! acceptance tests. Each check returns its worst discrepancy.

#![allow(dead_code)]

use hiercat::clustering::{kmedoids_with, silhouette, DistanceMatrix};
use hiercat::dataset::{Dataset, Family};
use hiercat::embedding::{aggregate_up, EmbeddingTable};
use hiercat::glm::{effect_code, fit, DesignMatrix};
use hiercat::hierarchy::{Hierarchy, NodeId};
use hiercat::nnet::{Activation, Loss, NetConfig, Network};
use hiercat::simgen::sim_hierarchy;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::{random_hierarchy, random_points, rel_err};

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

fn small_config(loss: Loss, output: Activation, hidden: Activation) -> NetConfig {
    let mut c = NetConfig::for_family(Family::Gaussian);
    c.embedding_dim = 2;
    c.hidden_sizes = vec![2];
    c.hidden_activation = hidden;
    c.output_activation = output;
    c.loss = loss;
    c
}

fn small_data(rng: &mut ChaCha8Rng, n: usize, leaves: usize, p: usize, positive: bool) -> Dataset {
    let leaf: Vec<usize> = (0..n).map(|i| i % leaves).collect();
    let x: Vec<f64> = (0..n * p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..n)
        .map(|_| {
            if positive {
                rng.random_range(0..6) as f64
            } else {
                rng.random_range(-2.0..2.0)
            }
        })
        .collect();
    let names = (0..p).map(|j| format!("x{j}")).collect();
    let family = if positive { Family::Poisson } else { Family::Gaussian };
    Dataset::new(y, leaf, x, names, family).unwrap()
}

/// Worst relative error between backpropagated and central-difference
/// gradients over both losses and both output activations (tanh hidden layer).
pub fn gradient_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let combos = [
        (Loss::Mse, Activation::Identity),
        (Loss::Mse, Activation::Exponential),
        (Loss::PoissonDeviance, Activation::Identity),
        (Loss::PoissonDeviance, Activation::Exponential),
    ];
    for (loss, output) in combos {
        let positive = loss == Loss::PoissonDeviance;
        let data = small_data(&mut rng, 10, 4, 2, positive);
        let config = small_config(loss, output, Activation::Tanh);
        let mut net = Network::init(config, 4, 2, &mut rng).unwrap();
        for p in net.params_mut() {
            *p = rng.random_range(-0.8..0.8);
        }
        if positive && output == Activation::Identity {
            // keep identity-output predictions positive
            let last = net.num_params() - 1;
            net.params_mut()[last] = 4.0;
        }
        let (_, grad) = net.loss_and_gradient(&data);
        let h = 1e-5;
        for i in 0..net.num_params() {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let up = net.mean_loss(&data);
            net.params_mut()[i] = orig - h;
            let down = net.mean_loss(&data);
            net.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(grad[i], numeric));
        }
    }
    worst
}

/// Worst absolute difference between `Network::forward` and an explicit
/// matrix product over the flat parameter layout.
pub fn forward_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (leaves, p, q) = (5, 3, 2);
    let mut config = small_config(Loss::Mse, Activation::Identity, Activation::Tanh);
    config.hidden_sizes = vec![3, 2];
    let net = Network::init(config, leaves, p, &mut rng).unwrap();
    let params = net.params();
    let emb = DMatrix::from_fn(q, leaves, |u, j| params[j * q + u]);
    let mut offset = leaves * q;
    let mut layers = Vec::new();
    for (inp, out) in [(p + q, 3), (3, 2), (2, 1)] {
        let w = DMatrix::from_row_slice(out, inp, &params[offset..offset + inp * out]);
        offset += inp * out;
        let b = DVector::from_column_slice(&params[offset..offset + out]);
        offset += out;
        layers.push((w, b));
    }
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
        let leaf = rng.random_range(0..leaves);
        let mut onehot = vec![0.0; leaves];
        onehot[leaf] = 1.0;
        let e = &emb * DVector::from_column_slice(&onehot);
        let mut a = DVector::from_iterator(p + q, x.iter().copied().chain(e.iter().copied()));
        for (i, (w, b)) in layers.iter().enumerate() {
            let z = w * &a + b;
            a = if i < 2 { z.map(f64::tanh) } else { z };
        }
        let got = net.forward(&x, &onehot).unwrap();
        worst = worst.max((got - a[0]).abs());
    }
    worst
}

/// Silhouette by a direct double loop over raw points.
pub fn brute_silhouette(points: &[Vec<f64>], assignment: &[usize], k: usize) -> (Vec<f64>, f64) {
    let d = |i: usize, j: usize| -> f64 {
        points[i]
            .iter()
            .zip(&points[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let n = points.len();
    let mut s = vec![0.0; n];
    for i in 0..n {
        let own = assignment[i];
        let size = assignment.iter().filter(|&&c| c == own).count();
        if size == 1 {
            continue;
        }
        let mut a = 0.0;
        for j in 0..n {
            if j != i && assignment[j] == own {
                a += d(i, j);
            }
        }
        a /= (size - 1) as f64;
        let mut b = f64::INFINITY;
        for c in (0..k).filter(|&c| c != own) {
            let mut sum = 0.0;
            let mut cnt = 0;
            for j in 0..n {
                if assignment[j] == c {
                    sum += d(i, j);
                    cnt += 1;
                }
            }
            if cnt > 0 {
                b = b.min(sum / cnt as f64);
            }
        }
        let m = a.max(b);
        s[i] = if m > 0.0 { (b - a) / m } else { 0.0 };
    }
    let overall = s.iter().sum::<f64>() / n as f64;
    (s, overall)
}

/// Worst per-item or overall silhouette difference over random instances.
pub fn silhouette_check(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.random_range(3..=30);
        let k = rng.random_range(2..=n.min(6));
        let dim = rng.random_range(1..=3);
        let points = random_points(&mut rng, n, dim, 5.0);
        // every cluster nonempty
        let mut assignment: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
        assignment.rotate_left(rng.random_range(0..n));
        let dist = DistanceMatrix::new(&points).unwrap();
        let got = silhouette(&dist, &assignment, k).unwrap();
        let (want, overall) = brute_silhouette(&points, &assignment, k);
        for (g, w) in got.per_item.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
        worst = worst.max((got.overall - overall).abs());
    }
    worst
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for first in 0..n {
        for rest in combinations(n, k - 1) {
            if rest.first().is_none_or(|&r| r > first) {
                let mut c = vec![first];
                c.extend(rest);
                out.push(c);
            }
        }
    }
    out
}

/// Number of instances where k-medoids misses the exhaustive optimum.
pub fn kmedoids_exhaustive_check(instances: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut misses = 0;
    for t in 0..instances {
        let n = rng.random_range(2..=8);
        let k = rng.random_range(1..=n.min(3));
        let points = random_points(&mut rng, n, 2, 3.0);
        let dist = DistanceMatrix::new(&points).unwrap();
        let best = combinations(n, k)
            .iter()
            .map(|m| {
                (0..n)
                    .map(|j| m.iter().map(|&c| dist.get(j, c)).fold(f64::INFINITY, f64::min))
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        let sol = kmedoids_with(&dist, k, t as u64).unwrap();
        let cost: f64 = (0..n).map(|j| dist.get(j, sol.medoids[sol.assignment[j]])).sum();
        if cost > best + 1e-9 * (1.0 + best) {
            misses += 1;
        }
    }
    misses
}

fn random_design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.0..1.0) })
}

fn normal_equations(x: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let (n, p) = x.shape();
    let a: Vec<Vec<f64>> = (0..p)
        .map(|i| (0..p).map(|j| (0..n).map(|r| x[(r, i)] * x[(r, j)]).sum()).collect())
        .collect();
    let b: Vec<f64> = (0..p).map(|i| (0..n).map(|r| x[(r, i)] * y[r]).sum()).collect();
    gauss_solve(a, b)
}

fn names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("c{j}")).collect()
}

/// Worst coefficient or log-likelihood discrepancy of the Gaussian fit
/// against the normal equations and the closed-form normal MLE.
pub fn gaussian_check(designs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..designs {
        let n = rng.random_range(15..60);
        let p = rng.random_range(1..5);
        let x = random_design(&mut rng, n, p);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let got = fit(Family::Gaussian, &y, &DesignMatrix::new(names(p), x.clone()).unwrap()).unwrap();
        let beta = normal_equations(&x, &y);
        for (g, w) in got.coefficients.iter().zip(&beta) {
            worst = worst.max((g - w).abs() / (1.0 + w.abs()));
        }
        let rss: f64 = (0..n)
            .map(|r| {
                let fitted: f64 = (0..p).map(|j| x[(r, j)] * beta[j]).sum();
                (y[r] - fitted).powi(2)
            })
            .sum();
        let s2 = rss / n as f64;
        let ll = -0.5 * n as f64 * ((2.0 * std::f64::consts::PI * s2).ln() + 1.0);
        worst = worst.max((got.log_likelihood - ll).abs() / (1.0 + ll.abs()));
    }
    worst
}

fn poisson_loglik_core(x: &DMatrix<f64>, y: &[f64], beta: &[f64]) -> f64 {
    (0..y.len())
        .map(|r| {
            let eta: f64 = (0..beta.len()).map(|j| x[(r, j)] * beta[j]).sum();
            y[r] * eta - eta.exp()
        })
        .sum()
}

/// Newton's method with step halving on the Poisson log-likelihood.
pub fn poisson_newton(x: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let (n, p) = x.shape();
    let mut beta = vec![0.0; p];
    for _ in 0..200 {
        let mu: Vec<f64> = (0..n)
            .map(|r| (0..p).map(|j| x[(r, j)] * beta[j]).sum::<f64>().exp())
            .collect();
        let grad: Vec<f64> = (0..p)
            .map(|j| (0..n).map(|r| x[(r, j)] * (y[r] - mu[r])).sum())
            .collect();
        let hess: Vec<Vec<f64>> = (0..p)
            .map(|i| {
                (0..p)
                    .map(|j| (0..n).map(|r| x[(r, i)] * x[(r, j)] * mu[r]).sum())
                    .collect()
            })
            .collect();
        let step = gauss_solve(hess, grad);
        let base = poisson_loglik_core(x, y, &beta);
        let mut t = 1.0;
        let mut next: Vec<f64>;
        loop {
            next = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            if poisson_loglik_core(x, y, &next) >= base || t < 1e-10 {
                break;
            }
            t *= 0.5;
        }
        let moved = next.iter().zip(&beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        beta = next;
        if moved < 1e-14 {
            break;
        }
    }
    beta
}

/// Worst coefficient discrepancy of Poisson IRLS against Newton.
pub fn poisson_check(designs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..designs {
        let n = rng.random_range(30..80);
        let p = rng.random_range(1..4);
        let x = random_design(&mut rng, n, p);
        let truth: Vec<f64> = (0..p).map(|_| rng.random_range(-0.7..0.7)).collect();
        let y: Vec<f64> = (0..n)
            .map(|r| {
                let eta: f64 = (0..p).map(|j| x[(r, j)] * truth[j]).sum::<f64>() + 0.5;
                Poisson::new(eta.exp()).unwrap().sample(&mut rng)
            })
            .collect();
        let got = fit(Family::Poisson, &y, &DesignMatrix::new(names(p), x.clone()).unwrap()).unwrap();
        let beta = poisson_newton(&x, &y);
        for (g, w) in got.coefficients.iter().zip(&beta) {
            worst = worst.max((g - w).abs());
        }
    }
    worst
}

/// Largest absolute column sum of the effect-coding rows over every sibling
/// set of the simulation hierarchy.
pub fn effect_coding_check() -> f64 {
    let h = sim_hierarchy();
    let mut sets: Vec<Vec<NodeId>> = vec![h.nodes(0).collect()];
    for r in 0..h.leaf_level() {
        for node in h.nodes(r) {
            sets.push(h.children(node));
        }
    }
    let mut worst: f64 = 0.0;
    for set in &sets {
        let mut sum = vec![0.0; set.len() - 1];
        for &v in set {
            for (s, c) in sum.iter_mut().zip(effect_code(set, v).unwrap()) {
                *s += c;
            }
        }
        worst = sum.iter().fold(worst, |w, s| w.max(s.abs()));
    }
    worst
}

fn recursive_mean(h: &Hierarchy, leaves: &EmbeddingTable, node: NodeId) -> Vec<f64> {
    if node.level == h.leaf_level() {
        return leaves.get(node).unwrap().to_vec();
    }
    let children = h.children(node);
    let mut acc = vec![0.0; leaves.dim()];
    for c in &children {
        for (a, v) in acc.iter_mut().zip(recursive_mean(h, leaves, *c)) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / children.len() as f64).collect()
}

/// Number of nodes, over random trees, whose aggregated vector is not
/// bitwise equal to the recursive mean of its children.
pub fn aggregate_check(trees: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for _ in 0..trees {
        let levels = rng.random_range(1..=4);
        let top = rng.random_range(1..4);
        let h = random_hierarchy(&mut rng, levels, top, 4);
        let dim = rng.random_range(1..4);
        let mut table = EmbeddingTable::new(dim);
        for leaf in h.leaves() {
            table
                .insert(leaf, (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect())
                .unwrap();
        }
        let full = aggregate_up(&table, &h).unwrap();
        for r in 0..h.num_levels() {
            for node in h.nodes(r) {
                if full.get(node).unwrap() != recursive_mean(&h, &table, node).as_slice() {
                    mismatches += 1;
                }
            }
        }
    }
    mismatches
}
