//! Clustering accuracy under the best cluster-to-class matching, the
//! Hungarian assignment solver behind it, and the k-means baseline.

use rayon::prelude::*;

use crate::error::{NcdError, Result};
use crate::numerics::{Rng, Tensor};

pub const KMEANS_RESTARTS: usize = 10;
pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_TOL: f64 = 1e-6;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "NCD_THREADS";

/// Worker count from `NCD_THREADS`, default 1.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Square cost matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentProblem {
    n: usize,
    cost: Vec<f64>,
}

impl AssignmentProblem {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(NcdError::Dimension("assignment problem is empty".into()));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(NcdError::Dimension(format!(
                "cost matrix is not square: {n} rows, a row of {}",
                r.len()
            )));
        }
        let cost: Vec<f64> = rows.concat();
        if cost.iter().any(|c| !c.is_finite()) {
            return Err(NcdError::Numeric(
                "cost matrix has non-finite entries".into(),
            ));
        }
        Ok(AssignmentProblem { n, cost })
    }

    pub fn from_flat(n: usize, cost: Vec<f64>) -> Result<Self> {
        if n == 0 || cost.len() != n * n {
            return Err(NcdError::Dimension(format!(
                "{} entries do not form a {n}x{n} matrix",
                cost.len()
            )));
        }
        if cost.iter().any(|c| !c.is_finite()) {
            return Err(NcdError::Numeric(
                "cost matrix has non-finite entries".into(),
            ));
        }
        Ok(AssignmentProblem { n, cost })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn cost(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.n + j]
    }
}

/// Minimum-cost perfect matching via shortest augmenting paths with
/// row/column potentials, O(n³). `perm[row] = column`.
pub fn hungarian(p: &AssignmentProblem) -> (Vec<usize>, f64) {
    let n = p.n;
    // 1-based with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = p.cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[owner[j] - 1] = j - 1;
    }
    let total = perm.iter().enumerate().map(|(i, &j)| p.cost(i, j)).sum();
    (perm, total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccResult {
    pub acc: f64,
    /// Predicted cluster -> true class.
    pub permutation: Vec<usize>,
    /// `contingency[pred][true]` counts.
    pub contingency: Vec<Vec<u64>>,
}

/// Accuracy under the cluster-to-class permutation that maximises agreement.
pub fn clustering_acc(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<AccResult> {
    if y_true.len() != y_pred.len() {
        return Err(NcdError::Dimension(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() || num_classes == 0 {
        return Err(NcdError::Input(
            "clustering accuracy needs at least one item and one class".into(),
        ));
    }
    let mut contingency = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= num_classes || p >= num_classes {
            return Err(NcdError::Input(format!(
                "label pair ({t}, {p}) outside [0, {num_classes})"
            )));
        }
        contingency[p][t] += 1;
    }
    let max = contingency.iter().flatten().copied().max().unwrap_or(0);
    let cost: Vec<f64> = contingency
        .iter()
        .flatten()
        .map(|&c| (max - c) as f64)
        .collect();
    let problem = AssignmentProblem::from_flat(num_classes, cost)?;
    let (permutation, _) = hungarian(&problem);
    let hits: u64 = permutation
        .iter()
        .enumerate()
        .map(|(c, &k)| contingency[c][k])
        .sum();
    Ok(AccResult {
        acc: hits as f64 / y_true.len() as f64,
        permutation,
        contingency,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            restarts: KMEANS_RESTARTS,
            max_iter: KMEANS_MAX_ITER,
            tol: KMEANS_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub centroids: Vec<Vec<f64>>,
    /// Inertia after each assignment step of the winning restart.
    pub history: Vec<f64>,
    pub restart: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, m) in centroids.iter().enumerate() {
        let d = sq_dist(x, m);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seed(x: &Tensor, k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = x.rows();
    let mut centroids = vec![x.row(rng.below(n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.below(n)
        };
        let c = x.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(x: &Tensor, k: usize, cfg: &KMeansConfig, rng: &mut Rng, restart: usize) -> KMeansResult {
    let (n, d) = (x.rows(), x.cols());
    let mut centroids = plus_plus_seed(x, k, rng);
    let mut labels = vec![0; n];
    let mut history = Vec::new();
    for _ in 0..cfg.max_iter {
        let mut inertia = 0.0;
        for i in 0..n {
            let (c, dist) = nearest(x.row(i), &centroids);
            labels[i] = c;
            inertia += dist;
        }
        history.push(inertia);
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            sums[labels[i]]
                .iter_mut()
                .zip(x.row(i))
                .for_each(|(s, v)| *s += v);
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &c)| {
                if c == 0 {
                    s
                } else {
                    s.into_iter().map(|v| v / c as f64).collect()
                }
            })
            .collect();
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .map(|i| (i, sq_dist(x.row(i), &centroids[labels[i]])))
                .fold((0, -1.0), |b, (i, v)| if v > b.1 { (i, v) } else { b });
            next[c] = x.row(far.0).to_vec();
            labels[far.0] = c;
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b))
            .fold(0.0, f64::max)
            .sqrt();
        centroids = next;
        if shift < cfg.tol {
            break;
        }
    }
    let mut inertia = 0.0;
    for i in 0..n {
        let (c, dist) = nearest(x.row(i), &centroids);
        labels[i] = c;
        inertia += dist;
    }
    history.push(inertia);
    KMeansResult {
        labels,
        inertia,
        centroids,
        history,
        restart,
    }
}

/// Lloyd's algorithm with k-means++ seeding. Restart `r` draws from RNG
/// stream `r` of `seed`; the lowest inertia wins, ties to the lower restart.
pub fn kmeans(x: &Tensor, k: usize, cfg: &KMeansConfig, seed: u64) -> Result<KMeansResult> {
    let n = x.rows();
    if k == 0 || n < k {
        return Err(NcdError::Input(format!(
            "k-means needs at least k={k} points, got {n}"
        )));
    }
    if cfg.restarts == 0 || cfg.max_iter == 0 || !(cfg.tol >= 0.0) {
        return Err(NcdError::Config(format!(
            "invalid k-means configuration {cfg:?}"
        )));
    }
    x.ensure_finite("k-means input")?;
    let run = |r: usize| lloyd(x, k, cfg, &mut Rng::with_stream(seed, r as u64), r);
    let results: Vec<KMeansResult> = match rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
    {
        Ok(pool) if thread_count() > 1 => {
            pool.install(|| (0..cfg.restarts).into_par_iter().map(run).collect())
        }
        _ => (0..cfg.restarts).map(run).collect(),
    };
    let best = results
        .into_iter()
        .min_by(|a, b| {
            a.inertia
                .total_cmp(&b.inertia)
                .then(a.restart.cmp(&b.restart))
        })
        .expect("at least one restart");
    Ok(best)
}
