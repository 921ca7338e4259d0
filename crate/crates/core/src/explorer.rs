//! Random saccadic exploration ("motor babbling").
//!
//! Every saccade yields one transition record per (pre-field, post-field)
//! pair, so a run of `n` saccades emits `n × F²` records for `F` fields.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::PrototypeCodebook;
use crate::encoding::EncoderBank;
use crate::environment::{AgentPose, Environment};
use crate::error::{Error, Result};
use crate::geometry::RetinaGeometry;
use crate::model::CountStore;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub a: usize,
    pub i: usize,
    pub q: usize,
    pub b: usize,
    pub j: usize,
}

/// Consumer of exploration output.
pub trait TransitionSink {
    fn record(&mut self, r: TransitionRecord);

    /// All records of one saccade: every pre-field against every post-field.
    fn saccade(&mut self, pre: &[usize], q: usize, post: &[usize]) {
        for (a, &i) in pre.iter().enumerate() {
            for (b, &j) in post.iter().enumerate() {
                self.record(TransitionRecord { a, i, q, b, j });
            }
        }
    }
}

impl TransitionSink for Vec<TransitionRecord> {
    fn record(&mut self, r: TransitionRecord) {
        self.push(r);
    }
}

/// Counts records without storing them.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct CountingSink {
    pub records: u64,
    pub saccades: u64,
}

impl TransitionSink for CountingSink {
    fn record(&mut self, _r: TransitionRecord) {
        self.records += 1;
    }

    fn saccade(&mut self, pre: &[usize], _q: usize, post: &[usize]) {
        self.saccades += 1;
        self.records += (pre.len() * post.len()) as u64;
    }
}

/// Quantizes every field of the retina at `pose`.
pub struct Perceiver<'a> {
    geometry: &'a RetinaGeometry,
    bank: &'a EncoderBank,
    codebook: &'a PrototypeCodebook,
    patch: Vec<f64>,
    encoded: Vec<f64>,
}

impl<'a> Perceiver<'a> {
    pub fn new(geometry: &'a RetinaGeometry, bank: &'a EncoderBank, codebook: &'a PrototypeCodebook) -> Self {
        let w = geometry.rf_window_px;
        Perceiver {
            geometry,
            bank,
            codebook,
            patch: vec![0.0; w * w],
            encoded: vec![0.0; w * w],
        }
    }

    pub fn field_state(&mut self, env: &Environment, pose: AgentPose, a: usize) -> usize {
        env.read_patch_into(self.geometry, pose, a, &mut self.patch);
        let d = self.bank.d_a(a);
        let out = &mut self.encoded[..d];
        self.bank.encode_into(a, &self.patch, out);
        self.codebook.quantize_slice(a, out)
    }

    pub fn states_into(&mut self, env: &Environment, pose: AgentPose, out: &mut [usize]) {
        for (a, s) in out.iter_mut().enumerate() {
            *s = self.field_state(env, pose, a);
        }
    }
}

/// One seeded random walk of `n_saccades` saccades on `env`.
pub fn explore(
    env: &Environment,
    bank: &EncoderBank,
    codebook: &PrototypeCodebook,
    geometry: &RetinaGeometry,
    n_saccades: u64,
    seed: u64,
    sink: &mut impl TransitionSink,
) -> Result<()> {
    if n_saccades == 0 {
        return Err(Error::InvalidParameter("n_saccades must be at least 1".into()));
    }
    walk(env, bank, codebook, geometry, n_saccades, seed, sink);
    Ok(())
}

fn walk(
    env: &Environment,
    bank: &EncoderBank,
    codebook: &PrototypeCodebook,
    geometry: &RetinaGeometry,
    n_saccades: u64,
    seed: u64,
    sink: &mut impl TransitionSink,
) {
    let mut rng = seeds::rng(seed);
    let mut perceiver = Perceiver::new(geometry, bank, codebook);
    let mut pose = env.random_pose(geometry, &mut rng);
    let mut pre = vec![0usize; geometry.n_fields()];
    let mut post = vec![0usize; geometry.n_fields()];
    perceiver.states_into(env, pose, &mut pre);
    for _ in 0..n_saccades {
        let q = rng.gen_range(0..geometry.n_motors());
        pose = env.apply_saccade(geometry, pose, &geometry.motors[q]);
        perceiver.states_into(env, pose, &mut post);
        sink.saccade(&pre, q, &post);
        std::mem::swap(&mut pre, &mut post);
    }
}

/// One independent random walk of an exploration plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shard {
    pub env: usize,
    pub index: usize,
    pub seed: u64,
    pub saccades: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorePlan {
    pub saccades_per_env: u64,
    /// Each environment's budget is split over this many walks, each with
    /// its own derived seed and initial pose.
    pub shards_per_env: usize,
    pub seed: u64,
}

impl ExplorePlan {
    /// Shards in a fixed order; saccades are split as evenly as possible.
    pub fn shards(&self, n_envs: usize) -> Vec<Shard> {
        let k = self.shards_per_env.max(1) as u64;
        let (base, extra) = (self.saccades_per_env / k, self.saccades_per_env % k);
        let mut out = Vec::new();
        for env in 0..n_envs {
            for index in 0..k {
                let saccades = base + u64::from(index < extra);
                if saccades == 0 {
                    continue;
                }
                out.push(Shard {
                    env,
                    index: index as usize,
                    seed: seeds::derive_seed(self.seed, &format!("explore/env{env}/shard{index}")),
                    saccades,
                });
            }
        }
        out
    }
}

/// Runs every shard of `plan` on `workers` threads and merges the counts.
///
/// Shards are dealt round-robin to workers; since merging is integer
/// addition the result does not depend on the worker count.
pub fn explore_many(
    envs: &[Environment],
    bank: &EncoderBank,
    codebook: &PrototypeCodebook,
    geometry: &RetinaGeometry,
    plan: &ExplorePlan,
    workers: usize,
) -> Result<CountStore> {
    if envs.is_empty() {
        return Err(Error::InvalidParameter("explore_many needs at least one environment".into()));
    }
    let shards = plan.shards(envs.len());
    let workers = workers.max(1).min(shards.len().max(1));
    let run = |mine: Vec<Shard>| {
        let mut store = CountStore::for_geometry(geometry);
        for s in mine {
            walk(&envs[s.env], bank, codebook, geometry, s.saccades, s.seed, &mut store);
        }
        store
    };
    let mut groups: Vec<Vec<Shard>> = vec![Vec::new(); workers];
    for (n, s) in shards.into_iter().enumerate() {
        groups[n % workers].push(s);
    }
    let mut partials = if workers == 1 {
        vec![run(groups.pop().unwrap_or_default())]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = groups
                .into_iter()
                .map(|g| scope.spawn(move || run(g)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("explorer worker panicked"))
                .collect::<Vec<_>>()
        })
    };
    let mut merged = partials.swap_remove(0);
    for p in &partials {
        merged.merge(p)?;
    }
    Ok(merged)
}
