//! Block-structured transition counts and the conditional predictions
//! derived from them.
//!
//! Counts for saccade `q` form one square matrix over the concatenated state
//! axis of all fields (Σ N^a states). Block `(a, b, q)` is the `N^a × N^b`
//! sub-matrix whose rows are the pre-states of field `a` and whose columns
//! are the post-states of field `b`. Row `i` of every block `(a, ·, q)`
//! lives in the same contiguous stretch of memory, which keeps the 49×49
//! updates of one saccade cache-friendly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codebook::PrototypeCodebook;
use crate::encoding::EncoderBank;
use crate::error::{Error, Result};
use crate::explorer::{TransitionRecord, TransitionSink};
use crate::geometry::RetinaGeometry;
use crate::io::{self, BinReader, BinWriter};

const MAGIC: &[u8; 8] = b"SMCMODEL";
const VERSION: u32 = 1;

/// Anything that can be read as a 2D table of joint counts.
pub trait JointCounts {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn get(&self, i: usize, j: usize) -> u64;

    fn row_sum(&self, i: usize) -> u64 {
        (0..self.cols()).map(|j| self.get(i, j)).sum()
    }

    fn total(&self) -> u64 {
        (0..self.rows()).map(|i| self.row_sum(i)).sum()
    }
}

/// Owned dense count matrix, mostly for tests and analytic cases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseCounts {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<u64>,
}

impl DenseCounts {
    pub fn from_rows(rows: &[&[u64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged count matrix");
        DenseCounts {
            rows: rows.len(),
            cols,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }
}

impl JointCounts for DenseCounts {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn get(&self, i: usize, j: usize) -> u64 {
        self.data[i * self.cols + j]
    }
}

/// Borrowed view of one `(a, b, q)` block.
#[derive(Debug, Clone, Copy)]
pub struct BlockView<'a> {
    data: &'a [u64],
    stride: usize,
    rows: usize,
    cols: usize,
}

impl<'a> BlockView<'a> {
    pub fn row(&self, i: usize) -> &'a [u64] {
        let start = i * self.stride;
        &self.data[start..start + self.cols]
    }

    pub fn to_dense(&self) -> DenseCounts {
        DenseCounts {
            rows: self.rows,
            cols: self.cols,
            data: (0..self.rows).flat_map(|i| self.row(i).iter().copied()).collect(),
        }
    }
}

impl JointCounts for BlockView<'_> {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    #[inline]
    fn get(&self, i: usize, j: usize) -> u64 {
        self.data[i * self.stride + j]
    }
    fn row_sum(&self, i: usize) -> u64 {
        self.row(i).iter().sum()
    }
}

/// Mergeable store of transition counts for every `(a, b, q)` block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountStore {
    n_states: Vec<usize>,
    offsets: Vec<usize>,
    total_states: usize,
    n_motors: usize,
    counts: Vec<u64>,
}

impl CountStore {
    pub fn new(n_states: Vec<usize>, n_motors: usize) -> Self {
        let mut offsets = Vec::with_capacity(n_states.len());
        let mut total_states = 0;
        for &n in &n_states {
            offsets.push(total_states);
            total_states += n;
        }
        CountStore {
            counts: vec![0; n_motors * total_states * total_states],
            n_states,
            offsets,
            total_states,
            n_motors,
        }
    }

    pub fn for_geometry(geometry: &RetinaGeometry) -> Self {
        let n_states = geometry.fields.iter().map(|f| f.n_states).collect();
        CountStore::new(n_states, geometry.n_motors())
    }

    pub fn n_fields(&self) -> usize {
        self.n_states.len()
    }

    pub fn n_motors(&self) -> usize {
        self.n_motors
    }

    pub fn n_states(&self, a: usize) -> usize {
        self.n_states[a]
    }

    pub fn state_counts(&self) -> &[usize] {
        &self.n_states
    }

    pub fn n_blocks(&self) -> usize {
        self.n_fields() * self.n_fields() * self.n_motors
    }

    #[inline]
    fn row_start(&self, a: usize, i: usize, q: usize) -> usize {
        (q * self.total_states + self.offsets[a] + i) * self.total_states
    }

    #[inline]
    fn bump(cell: &mut u64) {
        *cell = cell.checked_add(1).expect("transition counter overflow");
    }

    pub fn update(&mut self, r: &TransitionRecord) {
        debug_assert!(r.i < self.n_states[r.a] && r.j < self.n_states[r.b]);
        let idx = self.row_start(r.a, r.i, r.q) + self.offsets[r.b] + r.j;
        Self::bump(&mut self.counts[idx]);
    }

    pub fn block(&self, a: usize, b: usize, q: usize) -> BlockView<'_> {
        let start = self.row_start(a, 0, q) + self.offsets[b];
        let rows = self.n_states[a];
        let cols = self.n_states[b];
        let end = start + (rows - 1) * self.total_states + cols;
        BlockView {
            data: &self.counts[start..end],
            stride: self.total_states,
            rows,
            cols,
        }
    }

    /// Sum of every cell of every block.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }

    pub fn raw_counts(&self) -> &[u64] {
        &self.counts
    }

    /// Adds another store's counts into this one.
    pub fn merge(&mut self, other: &CountStore) -> Result<()> {
        if self.n_states != other.n_states || self.n_motors != other.n_motors {
            return Err(Error::InvalidParameter(
                "cannot merge count stores of different shapes".into(),
            ));
        }
        for (x, y) in self.counts.iter_mut().zip(&other.counts) {
            *x = x.checked_add(*y).expect("transition counter overflow");
        }
        Ok(())
    }

    /// Applies a relabeling `perms[a][old] = new` to every field's states.
    pub fn relabeled(&self, perms: &[Vec<usize>]) -> CountStore {
        let mut out = CountStore::new(self.n_states.clone(), self.n_motors);
        for q in 0..self.n_motors {
            for a in 0..self.n_fields() {
                for b in 0..self.n_fields() {
                    let blk = self.block(a, b, q);
                    for i in 0..blk.rows {
                        for (j, &c) in blk.row(i).iter().enumerate() {
                            let idx = out.row_start(a, perms[a][i], q) + out.offsets[b] + perms[b][j];
                            out.counts[idx] = c;
                        }
                    }
                }
            }
        }
        out
    }

    /// Multiplies every count by `k`.
    pub fn scaled(&self, k: u64) -> CountStore {
        let mut out = self.clone();
        for c in &mut out.counts {
            *c = c.checked_mul(k).expect("transition counter overflow");
        }
        out
    }
}

impl TransitionSink for CountStore {
    fn record(&mut self, r: TransitionRecord) {
        self.update(&r);
    }

    fn saccade(&mut self, pre: &[usize], q: usize, post: &[usize]) {
        debug_assert_eq!(pre.len(), self.n_fields());
        debug_assert_eq!(post.len(), self.n_fields());
        let cols: Vec<usize> = post
            .iter()
            .zip(&self.offsets)
            .map(|(&j, &off)| off + j)
            .collect();
        for (a, &i) in pre.iter().enumerate() {
            let start = self.row_start(a, i, q);
            let row = &mut self.counts[start..start + self.total_states];
            for &c in &cols {
                Self::bump(&mut row[c]);
            }
        }
    }
}

/// Provenance recorded alongside the counts.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModelMeta {
    pub total_saccades: u64,
    pub n_environments: u64,
    pub seeds: Vec<u64>,
    pub geometry_hash: String,
    pub encoder_hash: String,
    pub codebook_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictiveModel {
    pub counts: CountStore,
    pub meta: ModelMeta,
}

/// Conditional distribution over post-states, flagged when the pre-state
/// was never observed (the distribution is then uniform).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalRow {
    pub probs: Vec<f64>,
    pub observed: bool,
}

impl PredictiveModel {
    pub fn new(counts: CountStore, meta: ModelMeta) -> Self {
        PredictiveModel { counts, meta }
    }

    /// An empty model bound to the given artifacts.
    pub fn empty(geometry: &RetinaGeometry, bank: &EncoderBank, codebook: &PrototypeCodebook) -> Self {
        PredictiveModel {
            counts: CountStore::for_geometry(geometry),
            meta: ModelMeta {
                geometry_hash: geometry.content_hash(),
                encoder_hash: bank.content_hash(),
                codebook_hash: codebook.content_hash(),
                ..Default::default()
            },
        }
    }

    pub fn update(&mut self, r: &TransitionRecord) {
        self.counts.update(r);
    }

    pub fn block(&self, a: usize, b: usize, q: usize) -> BlockView<'_> {
        self.counts.block(a, b, q)
    }

    pub fn conditional_row(&self, a: usize, b: usize, q: usize, i: usize) -> ConditionalRow {
        conditional_row(&self.block(a, b, q), i)
    }

    /// Probability of post-state `j` alone, without allocating the row.
    pub fn conditional_prob(&self, a: usize, b: usize, q: usize, i: usize, j: usize) -> (f64, bool) {
        let row = self.block(a, b, q).row(i);
        let sum: u64 = row.iter().sum();
        if sum == 0 {
            (1.0 / row.len() as f64, false)
        } else {
            (row[j] as f64 / sum as f64, true)
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.counts;
        let mut w = BinWriter::new(MAGIC, VERSION);
        w.str(&self.meta.geometry_hash);
        w.str(&self.meta.encoder_hash);
        w.str(&self.meta.codebook_hash);
        w.u64(self.meta.total_saccades);
        w.u64(self.meta.n_environments);
        w.u64(self.meta.seeds.len() as u64);
        w.u64_slice(&self.meta.seeds);
        w.u64(c.n_motors as u64);
        w.u64(c.n_fields() as u64);
        for &n in &c.n_states {
            w.u64(n as u64);
        }
        w.u64_slice(&c.counts);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BinReader::open(bytes, MAGIC, VERSION, "model")?;
        let geometry_hash = r.str()?;
        let encoder_hash = r.str()?;
        let codebook_hash = r.str()?;
        let total_saccades = r.u64()?;
        let n_environments = r.u64()?;
        let n_seeds = r.usize(1 << 24)?;
        let seeds = r.u64_vec(n_seeds)?;
        let n_motors = r.usize(1 << 10)?;
        let n_fields = r.usize(1 << 12)?;
        let n_states = (0..n_fields)
            .map(|_| r.usize(1 << 16))
            .collect::<Result<Vec<_>>>()?;
        let mut counts = CountStore::new(n_states, n_motors);
        let len = counts.counts.len();
        counts.counts = r.u64_vec(len)?;
        r.finish()?;
        Ok(PredictiveModel {
            counts,
            meta: ModelMeta {
                total_saccades,
                n_environments,
                seeds,
                geometry_hash,
                encoder_hash,
                codebook_hash,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        PredictiveModel::from_bytes(&io::read_file(path)?)
    }

    /// Loads a model and rejects it unless it was estimated with exactly
    /// these artifacts.
    pub fn load_checked(
        path: &Path,
        geometry: &RetinaGeometry,
        bank: &EncoderBank,
        codebook: &PrototypeCodebook,
    ) -> Result<Self> {
        let model = PredictiveModel::load(path)?;
        model.check_compatible(geometry, bank, codebook)?;
        Ok(model)
    }

    pub fn check_compatible(
        &self,
        geometry: &RetinaGeometry,
        bank: &EncoderBank,
        codebook: &PrototypeCodebook,
    ) -> Result<()> {
        let checks = [
            ("geometry", geometry.content_hash(), &self.meta.geometry_hash),
            ("encoder bank", bank.content_hash(), &self.meta.encoder_hash),
            ("codebook", codebook.content_hash(), &self.meta.codebook_hash),
        ];
        for (artifact, expected, found) in checks {
            if &expected != found {
                return Err(Error::HashMismatch {
                    artifact,
                    expected,
                    found: found.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Normalized counts of row `i`, or uniform with `observed = false` when
/// the row is empty.
pub fn conditional_row(block: &impl JointCounts, i: usize) -> ConditionalRow {
    let cols = block.cols();
    let sum = block.row_sum(i);
    if sum == 0 {
        return ConditionalRow {
            probs: vec![1.0 / cols as f64; cols],
            observed: false,
        };
    }
    ConditionalRow {
        probs: (0..cols).map(|j| block.get(i, j) as f64 / sum as f64).collect(),
        observed: true,
    }
}
