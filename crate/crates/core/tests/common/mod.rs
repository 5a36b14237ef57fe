//! Naive reference implementations used as oracles. Written from the
//! definitions with plain loops; nothing here calls the code under test.

#![allow(
    dead_code,
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord
)]

use ncd_core::numerics::{Rng, Tensor};

pub fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.normal()).collect())
        .collect()
}

pub fn unit_rows(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter().map(|v| v / n).collect()
        })
        .collect()
}

pub fn tensor(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// Instance and category discrimination by direct evaluation of
/// `-log(exp(s_pos) / sum_{n != i} exp(s_n))`.
pub fn nce_oracle(
    anchor: &[Vec<f64>],
    target: &[Vec<f64>],
    labels: &[Option<usize>],
    tau: f64,
    instance: bool,
    category: bool,
) -> f64 {
    let n2 = anchor.len();
    let mut total = 0.0;
    for i in 0..n2 {
        let mut denom = 0.0;
        for n in 0..n2 {
            if n != i {
                denom += (dot(&anchor[i], &target[n]) / tau).exp();
            }
        }
        if instance {
            let partner = if i % 2 == 0 { i + 1 } else { i - 1 };
            let num = (dot(&anchor[i], &target[partner]) / tau).exp();
            total += -(num / denom).ln();
        }
        if category {
            if let Some(y) = labels[i] {
                let mut q = Vec::new();
                for n in 0..n2 {
                    if n != i && labels[n] == Some(y) {
                        q.push(n);
                    }
                }
                if !q.is_empty() {
                    let mut acc = 0.0;
                    for &p in &q {
                        let num = (dot(&anchor[i], &target[p]) / tau).exp();
                        acc += -(num / denom).ln();
                    }
                    total += acc / q.len() as f64;
                }
            }
        }
    }
    total / n2 as f64
}

pub fn bce_oracle(p: &[Vec<f64>], s: &[Vec<bool>]) -> f64 {
    let m = p.len();
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            let q = dot(&p[i], &p[j]).clamp(1e-7, 1.0 - 1e-7);
            total += if s[i][j] { q.ln() } else { (1.0 - q).ln() };
        }
    }
    -total / (m * m) as f64
}

pub fn mse_oracle(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..a.len() {
        for k in 0..a[i].len() {
            total += (a[i][k] - b[i][k]).powi(2);
            count += 1;
        }
    }
    total / count as f64
}

pub fn ce_oracle(logits: &[Vec<f64>], targets: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &t) in logits.iter().zip(targets) {
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        total += -(row[t].exp() / z).ln();
    }
    total / logits.len() as f64
}

/// WTA code: for each permutation, the window position of the first
/// maximum of the gathered values.
pub fn wta_code_oracle(z: &[f64], perms: &[Vec<usize>], window: usize) -> Vec<usize> {
    let mut code = Vec::new();
    for perm in perms {
        let shuffled: Vec<f64> = perm.iter().map(|&p| z[p]).collect();
        let mut best = 0;
        for j in 0..window {
            if shuffled[j] > shuffled[best] {
                best = j;
            }
        }
        code.push(best);
    }
    code
}

pub fn wta_labels_oracle(
    z: &[Vec<f64>],
    perms: &[Vec<usize>],
    window: usize,
    mu: usize,
) -> Vec<Vec<bool>> {
    let codes: Vec<Vec<usize>> = z
        .iter()
        .map(|r| wta_code_oracle(r, perms, window))
        .collect();
    let m = z.len();
    let mut s = vec![vec![false; m]; m];
    for i in 0..m {
        for j in 0..m {
            let agree = (0..perms.len())
                .filter(|&h| codes[i][h] == codes[j][h])
                .count();
            s[i][j] = i == j || agree >= mu;
        }
    }
    s
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

pub fn cosine_labels_oracle(z: &[Vec<f64>], t: f64) -> Vec<Vec<bool>> {
    let m = z.len();
    let mut s = vec![vec![false; m]; m];
    for i in 0..m {
        for j in 0..m {
            s[i][j] = i == j || cosine(&z[i], &z[j]) >= t;
        }
    }
    s
}

pub fn ranking_labels_oracle(z: &[Vec<f64>], k: usize) -> Vec<Vec<bool>> {
    let top = |r: &Vec<f64>| -> std::collections::BTreeSet<usize> {
        let mut chosen = std::collections::BTreeSet::new();
        while chosen.len() < k {
            let mut best: Option<usize> = None;
            for (i, v) in r.iter().enumerate() {
                if chosen.contains(&i) {
                    continue;
                }
                if best.is_none_or(|b| *v > r[b]) {
                    best = Some(i);
                }
            }
            chosen.insert(best.unwrap());
        }
        chosen
    };
    let sets: Vec<_> = z.iter().map(top).collect();
    let m = z.len();
    let mut s = vec![vec![false; m]; m];
    for i in 0..m {
        for j in 0..m {
            s[i][j] = i == j || sets[i] == sets[j];
        }
    }
    s
}

/// `j` is a neighbour of `i` when fewer than `n` other items are strictly
/// more similar to `i`, or equally similar with a smaller index.
pub fn nn_labels_oracle(z: &[Vec<f64>], n: usize) -> Vec<Vec<bool>> {
    let m = z.len();
    let mut near = vec![vec![false; m]; m];
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let cij = cosine(&z[i], &z[j]);
            let ahead = (0..m)
                .filter(|&o| o != i && o != j)
                .filter(|&o| {
                    let c = cosine(&z[i], &z[o]);
                    c > cij || (c == cij && o < j)
                })
                .count();
            near[i][j] = ahead < n;
        }
    }
    let mut s = vec![vec![false; m]; m];
    for i in 0..m {
        for j in 0..m {
            s[i][j] = i == j || near[i][j] || near[j][i];
        }
    }
    s
}

/// Every permutation of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for first in 0..n {
        for rest in permutations(n - 1) {
            let mut p = vec![first];
            p.extend(rest.into_iter().map(|v| if v >= first { v + 1 } else { v }));
            out.push(p);
        }
    }
    out
}

pub fn assignment_oracle(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    permutations(n)
        .iter()
        .map(|p| (0..n).map(|i| cost[i][p[i]]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

pub fn acc_oracle(y_true: &[usize], y_pred: &[usize], classes: usize) -> f64 {
    let best = permutations(classes)
        .iter()
        .map(|e| {
            y_true
                .iter()
                .zip(y_pred)
                .filter(|(t, p)| e[**p] == **t)
                .count()
        })
        .max()
        .unwrap();
    best as f64 / y_true.len() as f64
}

/// Lowest two-cluster inertia of 1-d points over all non-trivial splits.
pub fn two_means_oracle(x: &[f64]) -> f64 {
    let n = x.len();
    let mut best = f64::INFINITY;
    for mask in 1..(1u32 << n) - 1 {
        let mut inertia = 0.0;
        for side in [true, false] {
            let pts: Vec<f64> = (0..n)
                .filter(|&i| ((mask >> i) & 1 == 1) == side)
                .map(|i| x[i])
                .collect();
            let mean = pts.iter().sum::<f64>() / pts.len() as f64;
            inertia += pts.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        }
        best = best.min(inertia);
    }
    best
}
