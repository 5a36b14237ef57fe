//! Pairwise pseudo-labels for unlabelled items.
//!
//! The default labeller is winner-take-all hashing: each of `H` random
//! permutations looks at the first `k` shuffled coordinates of a feature
//! vector and records which one is largest. Two items are labelled as the
//! same class when at least `mu` of their `H` symbols agree. Cosine
//! similarity, top-k ranking statistics and nearest neighbours are
//! available as alternatives.

use serde::{Deserialize, Serialize};

use crate::error::{NcdError, Result};
use crate::numerics::{dot, Rng, Tensor};

/// Ratio of threshold to code length used when no threshold is given
/// (240 of 512 at full scale).
pub const DEFAULT_THRESHOLD_RATIO: f64 = 0.469;
pub const DEFAULT_WINDOW: usize = 4;
pub const DEFAULT_COSINE_THRESHOLD: f64 = 0.9;
pub const DEFAULT_TOP_K: usize = 5;
pub const DEFAULT_NEIGHBOURS: usize = 5;

pub fn default_threshold(code_len: usize) -> usize {
    (DEFAULT_THRESHOLD_RATIO * code_len as f64).round() as usize
}

/// Bank of permutations plus the window and agreement threshold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WtaHasher {
    permutations: Vec<Vec<usize>>,
    window: usize,
    threshold: usize,
    dim: usize,
}

/// One symbol per permutation, each in `[0, window)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WtaCode(pub Vec<u32>);

impl WtaCode {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl WtaHasher {
    /// Draws `code_len` Fisher-Yates permutations of `0..dim` from `rng`.
    pub fn build(
        dim: usize,
        code_len: usize,
        window: usize,
        threshold: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        validate_wta(dim, code_len, window, threshold)?;
        let permutations = (0..code_len).map(|_| rng.permutation(dim)).collect();
        Ok(WtaHasher {
            permutations,
            window,
            threshold,
            dim,
        })
    }

    pub fn from_permutations(
        permutations: Vec<Vec<usize>>,
        window: usize,
        threshold: usize,
    ) -> Result<Self> {
        let dim = permutations.first().map(Vec::len).unwrap_or(0);
        validate_wta(dim, permutations.len(), window, threshold)?;
        for (h, p) in permutations.iter().enumerate() {
            let mut seen = vec![false; dim];
            if p.len() != dim {
                return Err(NcdError::Config(format!(
                    "permutation {h} has length {}, expected {dim}",
                    p.len()
                )));
            }
            for &j in p {
                if j >= dim || std::mem::replace(&mut seen[j], true) {
                    return Err(NcdError::Config(format!(
                        "permutation {h} is not a permutation of 0..{dim}"
                    )));
                }
            }
        }
        Ok(WtaHasher {
            permutations,
            window,
            threshold,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn code_len(&self) -> usize {
        self.permutations.len()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn permutations(&self) -> &[Vec<usize>] {
        &self.permutations
    }

    /// Symbol `h` is the position in `0..window` holding the largest of
    /// `z[perm_h[0]], .., z[perm_h[window-1]]`; ties go to the earliest
    /// position.
    pub fn hash(&self, z: &[f64]) -> Result<WtaCode> {
        if z.len() != self.dim {
            return Err(NcdError::Dimension(format!(
                "hash input has {} entries, hasher expects {}",
                z.len(),
                self.dim
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(NcdError::Numeric(
                "hash input contains non-finite values".into(),
            ));
        }
        let code = self
            .permutations
            .iter()
            .map(|perm| {
                let mut best = 0;
                let mut best_val = z[perm[0]];
                for (j, &src) in perm[1..self.window].iter().enumerate() {
                    if z[src] > best_val {
                        best_val = z[src];
                        best = j + 1;
                    }
                }
                best as u32
            })
            .collect();
        Ok(WtaCode(code))
    }

    pub fn hash_rows(&self, z: &Tensor) -> Result<Vec<WtaCode>> {
        (0..z.rows()).map(|r| self.hash(z.row(r))).collect()
    }
}

fn validate_wta(dim: usize, code_len: usize, window: usize, threshold: usize) -> Result<()> {
    if dim == 0 || code_len == 0 {
        return Err(NcdError::Config(
            "WTA needs a positive feature dimension and code length".into(),
        ));
    }
    if window < 2 || window > dim {
        return Err(NcdError::Config(format!(
            "WTA window {window} must lie in [2, {dim}]"
        )));
    }
    if threshold > code_len {
        return Err(NcdError::Config(format!(
            "WTA threshold {threshold} exceeds code length {code_len}"
        )));
    }
    Ok(())
}

/// Number of positions where two codes carry the same symbol.
pub fn agreement(a: &WtaCode, b: &WtaCode) -> Result<usize> {
    if a.len() != b.len() {
        return Err(NcdError::Dimension(format!(
            "code lengths {} and {} differ",
            a.len(),
            b.len()
        )));
    }
    Ok(a.0.iter().zip(&b.0).filter(|(x, y)| x == y).count())
}

/// Symmetric binary matrix with a unit diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairLabelMatrix {
    n: usize,
    bits: Vec<bool>,
}

impl PairLabelMatrix {
    /// Builds from an arbitrary predicate; the result is symmetrized by
    /// union and its diagonal set to one.
    pub fn from_fn(n: usize, mut same: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = vec![false; n * n];
        for i in 0..n {
            bits[i * n + i] = true;
            for j in (i + 1)..n {
                let s = same(i, j) || same(j, i);
                bits[i * n + j] = s;
                bits[j * n + i] = s;
            }
        }
        PairLabelMatrix { n, bits }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    /// Row-major `0.0 / 1.0` values.
    pub fn as_f64(&self) -> Vec<f64> {
        self.bits
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn positives(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Which pseudo-label generator to use, as it appears in configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PairStrategy {
    Wta {
        /// Defaults to the feature dimension.
        #[serde(default)]
        code_len: Option<usize>,
        #[serde(default = "default_window")]
        window: usize,
        /// Defaults to `round(0.469 * code_len)`.
        #[serde(default)]
        threshold: Option<usize>,
    },
    Cosine {
        #[serde(default = "default_cosine")]
        threshold: f64,
    },
    RankingStats {
        #[serde(default = "default_top_k")]
        top_k: usize,
    },
    NearestNeighbour {
        #[serde(default = "default_neighbours")]
        neighbours: usize,
    },
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}
fn default_cosine() -> f64 {
    DEFAULT_COSINE_THRESHOLD
}
fn default_top_k() -> usize {
    DEFAULT_TOP_K
}
fn default_neighbours() -> usize {
    DEFAULT_NEIGHBOURS
}

impl Default for PairStrategy {
    fn default() -> Self {
        PairStrategy::Wta {
            code_len: None,
            window: DEFAULT_WINDOW,
            threshold: None,
        }
    }
}

impl PairStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            PairStrategy::Wta { .. } => "wta",
            PairStrategy::Cosine { .. } => "cosine",
            PairStrategy::RankingStats { .. } => "ranking_stats",
            PairStrategy::NearestNeighbour { .. } => "nearest_neighbour",
        }
    }

    /// Checks parameters against the feature dimension they will see.
    pub fn validate(&self, dim: usize) -> Result<()> {
        match *self {
            PairStrategy::Wta {
                code_len,
                window,
                threshold,
            } => {
                let h = code_len.unwrap_or(dim);
                validate_wta(
                    dim,
                    h,
                    window,
                    threshold.unwrap_or_else(|| default_threshold(h)),
                )
            }
            PairStrategy::Cosine { threshold } => {
                if (-1.0..=1.0).contains(&threshold) {
                    Ok(())
                } else {
                    Err(NcdError::Config(format!(
                        "cosine threshold {threshold} outside [-1, 1]"
                    )))
                }
            }
            PairStrategy::RankingStats { top_k } => {
                if top_k == 0 || top_k > dim {
                    Err(NcdError::Config(format!(
                        "ranking top_k {top_k} must lie in [1, {dim}]"
                    )))
                } else {
                    Ok(())
                }
            }
            PairStrategy::NearestNeighbour { neighbours } => {
                if neighbours == 0 {
                    Err(NcdError::Config(
                        "nearest_neighbour needs at least one neighbour".into(),
                    ))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// A strategy with its random state resolved (the WTA bank is drawn once).
#[derive(Debug, Clone)]
pub enum PairLabeler {
    Wta(WtaHasher),
    Cosine { threshold: f64 },
    RankingStats { top_k: usize },
    NearestNeighbour { neighbours: usize },
}

impl PairLabeler {
    pub fn new(strategy: &PairStrategy, dim: usize, rng: &mut Rng) -> Result<Self> {
        strategy.validate(dim)?;
        Ok(match *strategy {
            PairStrategy::Wta {
                code_len,
                window,
                threshold,
            } => {
                let h = code_len.unwrap_or(dim);
                let mu = threshold.unwrap_or_else(|| default_threshold(h));
                PairLabeler::Wta(WtaHasher::build(dim, h, window, mu, rng)?)
            }
            PairStrategy::Cosine { threshold } => PairLabeler::Cosine { threshold },
            PairStrategy::RankingStats { top_k } => PairLabeler::RankingStats { top_k },
            PairStrategy::NearestNeighbour { neighbours } => {
                PairLabeler::NearestNeighbour { neighbours }
            }
        })
    }
}

/// Pseudo-labels for the rows of `z` (`[M, d]`).
pub fn pairwise_labels(labeler: &PairLabeler, z: &Tensor) -> Result<PairLabelMatrix> {
    let (m, d) = z.dims2()?;
    z.ensure_finite("pairwise_labels input")?;
    match labeler {
        PairLabeler::Wta(hasher) => {
            let codes = hasher.hash_rows(z)?;
            let mut agree = vec![0usize; m * m];
            for i in 0..m {
                for j in (i + 1)..m {
                    agree[i * m + j] = agreement(&codes[i], &codes[j])?;
                }
            }
            let mu = hasher.threshold();
            Ok(PairLabelMatrix::from_fn(m, |i, j| {
                i < j && agree[i * m + j] >= mu
            }))
        }
        PairLabeler::Cosine { threshold } => {
            let cos = cosine_matrix(z);
            Ok(PairLabelMatrix::from_fn(m, |i, j| {
                cos[i * m + j] >= *threshold
            }))
        }
        PairLabeler::RankingStats { top_k } => {
            if *top_k == 0 || *top_k > d {
                return Err(NcdError::Config(format!(
                    "ranking top_k {top_k} must lie in [1, {d}]"
                )));
            }
            let sets: Vec<Vec<usize>> = (0..m).map(|r| top_k_set(z.row(r), *top_k)).collect();
            Ok(PairLabelMatrix::from_fn(m, |i, j| sets[i] == sets[j]))
        }
        PairLabeler::NearestNeighbour { neighbours } => {
            let cos = cosine_matrix(z);
            let mut near = vec![false; m * m];
            for i in 0..m {
                let mut others: Vec<usize> = (0..m).filter(|&j| j != i).collect();
                // stable sort keeps smaller indices first among equal similarities
                others
                    .sort_by(|&a, &b| cos[i * m + b].partial_cmp(&cos[i * m + a]).expect("finite"));
                for &j in others.iter().take(*neighbours) {
                    near[i * m + j] = true;
                }
            }
            Ok(PairLabelMatrix::from_fn(m, |i, j| near[i * m + j]))
        }
    }
}

fn cosine_matrix(z: &Tensor) -> Vec<f64> {
    let m = z.rows();
    let norms: Vec<f64> = (0..m).map(|r| dot(z.row(r), z.row(r)).sqrt()).collect();
    let mut cos = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            let denom = norms[i] * norms[j];
            cos[i * m + j] = if denom > 0.0 {
                dot(z.row(i), z.row(j)) / denom
            } else {
                0.0
            };
        }
    }
    cos
}

/// Indices of the `k` largest entries, returned sorted ascending. Ties go
/// to the smaller index.
fn top_k_set(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).expect("finite"));
    let mut top = idx[..k].to_vec();
    top.sort_unstable();
    top
}
