//! Entropies and normalized mutual information over count blocks.
//!
//! For a block `(a, b, q)` with joint counts `n_ij`:
//!
//! ```text
//! H(Sb|q)      = −Σ_j p_j log p_j,                 p_j = c_j / n
//! H(Sb|Sa,q)   = −Σ_ij (n_ij / n) log(n_ij / r_i)
//! I(Sa;Sb|q)   = (H(Sb|q) − H(Sb|Sa,q)) / H(Sb|q)
//! ```
//!
//! Terms are summed in sorted order so the result depends only on the
//! multiset of counts: relabeling states or doubling every count gives a
//! bit-identical value.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{CountStore, JointCounts, PredictiveModel};

/// Tolerance on the total mass of a probability vector.
pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogBase {
    #[default]
    Two,
    Natural,
}

impl LogBase {
    #[inline]
    fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Two => x.log2(),
            LogBase::Natural => x.ln(),
        }
    }
}

/// Shannon entropy in bits, with `0 · log 0 = 0`.
pub fn entropy(dist: &[f64]) -> Result<f64> {
    let sum: f64 = dist.iter().sum();
    if dist.iter().any(|&p| p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::NotNormalized { sum });
    }
    Ok(-dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.log2())
        .sum::<f64>())
}

fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockEntropies {
    /// H(S^b | m_q)
    pub h_post: f64,
    /// H(S^b | S^a, m_q)
    pub h_post_given_pre: f64,
}

impl BlockEntropies {
    /// Normalized mutual information, clamped to [0, 1]; zero when the
    /// post-field has no entropy.
    pub fn normalized_mi(&self) -> f64 {
        if self.h_post <= 0.0 {
            return 0.0;
        }
        ((self.h_post - self.h_post_given_pre) / self.h_post).clamp(0.0, 1.0)
    }
}

pub fn block_entropies(counts: &impl JointCounts, base: LogBase) -> BlockEntropies {
    let (rows, cols) = (counts.rows(), counts.cols());
    let row_sums: Vec<u64> = (0..rows).map(|i| counts.row_sum(i)).collect();
    let n: u64 = row_sums.iter().sum();
    if n == 0 {
        return BlockEntropies { h_post: 0.0, h_post_given_pre: 0.0 };
    }
    let mut col_sums = vec![0u64; cols];
    let mut cond_terms = Vec::new();
    let nf = n as f64;
    for (i, &r) in row_sums.iter().enumerate() {
        if r == 0 {
            continue;
        }
        for (j, col) in col_sums.iter_mut().enumerate() {
            let c = counts.get(i, j);
            if c > 0 {
                *col += c;
                cond_terms.push((c as f64 / nf) * base.log(c as f64 / r as f64));
            }
        }
    }
    let post_terms = col_sums
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / nf;
            p * base.log(p)
        })
        .collect();
    BlockEntropies {
        h_post: -sorted_sum(post_terms),
        h_post_given_pre: -sorted_sum(cond_terms),
    }
}

pub fn normalized_mi(counts: &impl JointCounts) -> f64 {
    block_entropies(counts, LogBase::Two).normalized_mi()
}

pub fn normalized_mi_in(counts: &impl JointCounts, base: LogBase) -> f64 {
    block_entropies(counts, base).normalized_mi()
}

/// Independent route to the same quantity through joint and marginal
/// entropies, `I = (H(Sa) + H(Sb) − H(Sa,Sb)) / H(Sb)`, summed naively.
pub fn mi_oracle(counts: &impl JointCounts) -> f64 {
    let (rows, cols) = (counts.rows(), counts.cols());
    let mut n = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            n += counts.get(i, j) as f64;
        }
    }
    if n == 0.0 {
        return 0.0;
    }
    let h = |p: f64| if p > 0.0 { -p * p.log2() } else { 0.0 };
    let mut h_pre = 0.0;
    for i in 0..rows {
        let mut r = 0.0;
        for j in 0..cols {
            r += counts.get(i, j) as f64;
        }
        h_pre += h(r / n);
    }
    let mut h_post = 0.0;
    for j in 0..cols {
        let mut c = 0.0;
        for i in 0..rows {
            c += counts.get(i, j) as f64;
        }
        h_post += h(c / n);
    }
    let mut h_joint = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            h_joint += h(counts.get(i, j) as f64 / n);
        }
    }
    if h_post <= 0.0 {
        return 0.0;
    }
    ((h_pre + h_post - h_joint) / h_post).clamp(0.0, 1.0)
}

/// Values over every `(a, b, q)` block, stored `[q][a][b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTensor {
    pub n_fields: usize,
    pub n_motors: usize,
    pub values: Vec<f64>,
}

impl BlockTensor {
    pub fn zeros(n_fields: usize, n_motors: usize) -> Self {
        BlockTensor {
            n_fields,
            n_motors,
            values: vec![0.0; n_fields * n_fields * n_motors],
        }
    }

    #[inline]
    fn idx(&self, a: usize, b: usize, q: usize) -> usize {
        (q * self.n_fields + a) * self.n_fields + b
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, q: usize) -> f64 {
        self.values[self.idx(a, b, q)]
    }

    pub fn set(&mut self, a: usize, b: usize, q: usize, v: f64) {
        let i = self.idx(a, b, q);
        self.values[i] = v;
    }
}

/// Normalized mutual information I(S^a; S^b | m_q) for every block.
pub type MiTensor = BlockTensor;

impl MiTensor {
    /// Post-field with the highest MI for `(a, q)`, lowest index on ties.
    pub fn argmax_post(&self, a: usize, q: usize) -> usize {
        let mut best = 0;
        for b in 1..self.n_fields {
            if self.get(a, b, q) > self.get(a, best, q) {
                best = b;
            }
        }
        best
    }
}

/// MI together with the two entropies it is built from.
#[derive(Debug, Clone, PartialEq)]
pub struct MiAnalysis {
    pub mi: MiTensor,
    pub h_post: BlockTensor,
    pub h_post_given_pre: BlockTensor,
}

pub fn analyze(store: &CountStore) -> MiAnalysis {
    let f = store.n_fields();
    let m = store.n_motors();
    let entropies: Vec<BlockEntropies> = (0..f * f * m)
        .into_par_iter()
        .map(|k| {
            let (q, rest) = (k / (f * f), k % (f * f));
            let (a, b) = (rest / f, rest % f);
            block_entropies(&store.block(a, b, q), LogBase::Two)
        })
        .collect();
    let mut out = MiAnalysis {
        mi: BlockTensor::zeros(f, m),
        h_post: BlockTensor::zeros(f, m),
        h_post_given_pre: BlockTensor::zeros(f, m),
    };
    for (k, e) in entropies.iter().enumerate() {
        out.mi.values[k] = e.normalized_mi();
        out.h_post.values[k] = e.h_post;
        out.h_post_given_pre.values[k] = e.h_post_given_pre;
    }
    out
}

pub fn mi_tensor(model: &PredictiveModel) -> MiTensor {
    analyze(&model.counts).mi
}
