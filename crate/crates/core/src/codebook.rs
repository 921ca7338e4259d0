//! Per-field prototype states learned with Lloyd's K-means.

use rand::Rng;
use rayon::prelude::*;

use crate::encoding::EncoderBank;
use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::geometry::RetinaGeometry;
use crate::io::{BinReader, BinWriter};
use crate::seeds;

pub const DEFAULT_SAMPLES_PER_FIELD: usize = 25_000;
pub const MAX_KMEANS_ITERATIONS: usize = 300;

const MAGIC: &[u8; 8] = b"SMCCODEB";
const VERSION: u32 = 1;

/// Row-major sample matrix for one field.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Draws `n_per_field` seeded-uniform poses across all environments and
/// encodes every field at each of them.
pub fn collect_samples(
    envs: &[Environment],
    bank: &EncoderBank,
    geometry: &RetinaGeometry,
    n_per_field: usize,
    seed: u64,
) -> Result<Vec<SampleSet>> {
    for f in &geometry.fields {
        if n_per_field < f.n_states {
            return Err(Error::TooFewSamples {
                field: f.index,
                got: n_per_field,
                needed: f.n_states,
            });
        }
    }
    if envs.is_empty() {
        return Err(Error::InvalidParameter("no environments to sample from".into()));
    }
    let mut rng = seeds::rng(seed);
    let mut sets: Vec<SampleSet> = geometry
        .fields
        .iter()
        .map(|f| SampleSet {
            dim: f.d_a,
            data: Vec::with_capacity(n_per_field * f.d_a),
        })
        .collect();
    let w = geometry.rf_window_px;
    let mut patch = vec![0.0; w * w];
    let mut encoded = vec![0.0; w * w];
    for _ in 0..n_per_field {
        let env = &envs[rng.gen_range(0..envs.len())];
        let pose = env.random_pose(geometry, &mut rng);
        for (a, set) in sets.iter_mut().enumerate() {
            env.read_patch_into(geometry, pose, a, &mut patch);
            let out = &mut encoded[..set.dim];
            bank.encode_into(a, &patch, out);
            set.data.extend_from_slice(out);
        }
    }
    Ok(sets)
}

#[inline]
fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Nearest centroid by squared Euclidean distance, lowest index on ties.
#[inline]
fn nearest(centroids: &[f64], dim: usize, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// k-means++ seeding: the first centroid is a uniform sample, each next
/// one is drawn with probability proportional to its squared distance to
/// the nearest centroid chosen so far. Samples already chosen have zero
/// weight, so the centroids are distinct.
fn seed_centroids(samples: &SampleSet, k: usize, seed: u64) -> Result<Vec<f64>> {
    let dim = samples.dim;
    let n = samples.len();
    if n == 0 {
        return Err(Error::DegenerateSamples { distinct: 0, k });
    }
    let mut rng = seeds::rng(seed);
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(samples.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(samples.row(i), samples.row(first))).collect();
    for chosen in 1..k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateSamples { distinct: chosen, k });
        }
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
        }
        let pick = pick.expect("positive total weight");
        let row = samples.row(pick);
        centroids.extend_from_slice(row);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(samples.row(i), row));
        }
    }
    Ok(centroids)
}

/// Result of a K-means fit, with the objective after every iteration.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centroids: Vec<f64>,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
}

pub fn fit_kmeans(samples: &SampleSet, k: usize, seed: u64) -> Result<Vec<f64>> {
    fit_kmeans_traced(samples, k, seed).map(|f| f.centroids)
}

/// Lloyd's algorithm from k-means++ seeding.
///
/// An emptied cluster takes the sample farthest from its current centroid.
/// Stops once assignments no longer change or after
/// [`MAX_KMEANS_ITERATIONS`] update steps.
pub fn fit_kmeans_traced(samples: &SampleSet, k: usize, seed: u64) -> Result<KMeansFit> {
    let dim = samples.dim;
    let n = samples.len();
    if k == 0 {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    let mut centroids = seed_centroids(samples, k, seed)?;

    let mut assign = vec![usize::MAX; n];
    let mut dist = vec![0.0; n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let fresh: Vec<(usize, f64)> = samples
            .data
            .par_chunks_exact(dim)
            .map(|x| nearest(&centroids, dim, x))
            .collect();
        let mut changed = false;
        for (i, (c, d)) in fresh.into_iter().enumerate() {
            changed |= assign[i] != c;
            assign[i] = c;
            dist[i] = d;
        }
        if !changed || iterations == MAX_KMEANS_ITERATIONS {
            break;
        }
        iterations += 1;

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &c) in assign.iter().enumerate() {
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(samples.row(i)) {
                *s += x;
            }
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            let slot = &mut centroids[c * dim..(c + 1) * dim];
            if counts[c] > 0 {
                let inv = counts[c] as f64;
                for (m, s) in slot.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *m = s / inv;
                }
            } else {
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if dist[b] >= dist[i] => Some(b),
                        _ => Some(i),
                    })
                    .expect("n >= k");
                taken[far] = true;
                dist[far] = 0.0;
                slot.copy_from_slice(samples.row(far));
            }
        }
        trace.push(objective(samples, &centroids, &assign));
    }
    Ok(KMeansFit {
        centroids,
        iterations,
        objective_trace: trace,
    })
}

/// Within-cluster sum of squares under the given assignment.
pub fn objective(samples: &SampleSet, centroids: &[f64], assign: &[usize]) -> f64 {
    let dim = samples.dim;
    assign
        .iter()
        .enumerate()
        .map(|(i, &c)| sq_dist(samples.row(i), &centroids[c * dim..(c + 1) * dim]))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldCodebook {
    pub dim: usize,
    /// `n_states × dim`, row-major.
    pub centroids: Vec<f64>,
}

impl FieldCodebook {
    pub fn n_states(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeCodebook {
    pub kmeans_seed: u64,
    pub sample_count: usize,
    pub encoder_hash: String,
    pub geometry_hash: String,
    pub fields: Vec<FieldCodebook>,
}

impl PrototypeCodebook {
    /// Fits every field independently; field `a` uses the seed derived from
    /// `kmeans_seed` and `"kmeans/field{a}"`.
    pub fn fit(
        samples: &[SampleSet],
        geometry: &RetinaGeometry,
        bank: &EncoderBank,
        kmeans_seed: u64,
    ) -> Result<Self> {
        let fields = samples
            .par_iter()
            .enumerate()
            .map(|(a, set)| {
                let seed = seeds::derive_seed(kmeans_seed, &format!("kmeans/field{a}"));
                let centroids = fit_kmeans(set, geometry.n_states(a), seed)?;
                Ok(FieldCodebook {
                    dim: set.dim,
                    centroids,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PrototypeCodebook {
            kmeans_seed,
            sample_count: samples.first().map_or(0, |s| s.len()),
            encoder_hash: bank.content_hash(),
            geometry_hash: geometry.content_hash(),
            fields,
        })
    }

    pub fn n_states(&self, a: usize) -> usize {
        self.fields[a].n_states()
    }

    #[inline]
    pub fn quantize_slice(&self, a: usize, sv: &[f64]) -> usize {
        let f = &self.fields[a];
        debug_assert_eq!(sv.len(), f.dim);
        nearest(&f.centroids, f.dim, sv).0
    }

    pub fn quantize(&self, a: usize, sv: &crate::encoding::SensoryVector) -> usize {
        self.quantize_slice(a, &sv.values)
    }

    pub fn check_compatible(&self, geometry: &RetinaGeometry, bank: &EncoderBank) -> Result<()> {
        if self.geometry_hash != geometry.content_hash() {
            return Err(Error::HashMismatch {
                artifact: "geometry",
                expected: geometry.content_hash(),
                found: self.geometry_hash.clone(),
            });
        }
        if self.encoder_hash != bank.content_hash() {
            return Err(Error::HashMismatch {
                artifact: "encoder bank",
                expected: bank.content_hash(),
                found: self.encoder_hash.clone(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::new(MAGIC, VERSION);
        w.u64(self.kmeans_seed);
        w.u64(self.sample_count as u64);
        w.str(&self.encoder_hash);
        w.str(&self.geometry_hash);
        w.u64(self.fields.len() as u64);
        for f in &self.fields {
            w.u64(f.n_states() as u64);
            w.u64(f.dim as u64);
            w.f64_slice(&f.centroids);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BinReader::open(bytes, MAGIC, VERSION, "codebook")?;
        let kmeans_seed = r.u64()?;
        let sample_count = r.usize(usize::MAX)?;
        let encoder_hash = r.str()?;
        let geometry_hash = r.str()?;
        let n = r.usize(1 << 16)?;
        let mut fields = Vec::with_capacity(n);
        for _ in 0..n {
            let k = r.usize(1 << 20)?;
            let dim = r.usize(1 << 20)?;
            if dim == 0 {
                return Err(Error::Malformed {
                    artifact: "codebook",
                    reason: "zero-dimensional field".into(),
                });
            }
            fields.push(FieldCodebook {
                dim,
                centroids: r.f64_vec(k * dim)?,
            });
        }
        r.finish()?;
        Ok(PrototypeCodebook {
            kmeans_seed,
            sample_count,
            encoder_hash,
            geometry_hash,
            fields,
        })
    }

    pub fn content_hash(&self) -> String {
        crate::io::sha256_hex(&self.to_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{init_encoders, SensoryVector};
    use crate::environment::{generate_squares, SquaresParams};
    use crate::geometry::build_retina;
    use rand_distr_free::normal;

    /// Box–Muller, to keep the tests free of extra distribution crates.
    mod rand_distr_free {
        use rand::Rng;
        pub fn normal(rng: &mut impl Rng) -> f64 {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        }
    }

    fn set(dim: usize, rows: &[&[f64]]) -> SampleSet {
        SampleSet {
            dim,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    fn codebook_of(dim: usize, centroids: Vec<f64>) -> PrototypeCodebook {
        PrototypeCodebook {
            kmeans_seed: 0,
            sample_count: 0,
            encoder_hash: String::new(),
            geometry_hash: String::new(),
            fields: vec![FieldCodebook { dim, centroids }],
        }
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let s = set(2, &[&[0.0, 0.0], &[2.0, 4.0], &[4.0, 2.0], &[6.0, 6.0]]);
        let c = fit_kmeans(&s, 1, 1).unwrap();
        assert_eq!(c, vec![3.0, 3.0]);
        let row: &[f64] = &[5.0, 5.0, 5.0];
        let same = set(3, &[row; 10]);
        assert_eq!(fit_kmeans(&same, 1, 4).unwrap(), vec![5.0, 5.0, 5.0]);
    }

    #[test]
    fn too_few_distinct_samples() {
        let s = set(1, &[&[1.0], &[1.0], &[2.0], &[2.0]]);
        assert!(matches!(
            fit_kmeans(&s, 3, 0),
            Err(Error::DegenerateSamples { distinct: 2, k: 3 })
        ));
        assert_eq!(fit_kmeans(&s, 2, 0).unwrap().len(), 2);
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let means = [[20.0, 20.0, 20.0], [200.0, 30.0, 100.0], [60.0, 220.0, 140.0], [240.0, 240.0, 10.0]];
        let spread = 3.0;
        let mut rng = seeds::rng(31);
        let mut data = Vec::new();
        for _ in 0..200 {
            for m in &means {
                for v in m {
                    data.push(v + spread * normal(&mut rng));
                }
            }
        }
        let s = SampleSet { dim: 3, data };
        for seed in 0..5 {
            let c = fit_kmeans(&s, 4, seed).unwrap();
            for m in &means {
                let best = c
                    .chunks(3)
                    .map(|x| sq_dist(x, m).sqrt())
                    .fold(f64::INFINITY, f64::min);
                assert!(best < spread, "seed {seed}: mean {m:?} missed by {best}");
            }
        }
    }

    #[test]
    fn objective_never_increases() {
        let mut rng = seeds::rng(5);
        let data: Vec<f64> = (0..3000).map(|_| rng.gen_range(0.0..255.0)).collect();
        let s = SampleSet { dim: 6, data };
        let fit = fit_kmeans_traced(&s, 12, 9).unwrap();
        assert!(fit.iterations > 1);
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        // two far points initialized as centroids leave nothing for a third
        // centroid only when duplicates dominate; check the repair keeps k
        // distinct centroids in a lopsided set.
        let mut rows: Vec<&[f64]> = vec![&[0.0]; 50];
        rows.extend([&[1.0][..], &[100.0], &[101.0], &[102.0]]);
        let s = set(1, &rows);
        for seed in 0..20 {
            let c = fit_kmeans(&s, 4, seed).unwrap();
            let mut sorted = c.clone();
            sorted.sort_by(f64::total_cmp);
            sorted.dedup();
            assert_eq!(sorted.len(), 4, "seed {seed}: {c:?}");
        }
    }

    #[test]
    fn quantize_rules() {
        let cb = codebook_of(2, vec![0.0, 0.0, 10.0, 10.0]);
        assert_eq!(cb.quantize(0, &SensoryVector { values: vec![1.0, 1.0] }), 0);
        assert_eq!(cb.quantize_slice(0, &[10.0, 10.0]), 1);
        let cb = codebook_of(1, vec![50.0, 40.0, 0.0, 9.0, 30.0, 2.0]);
        // 1.0 is equidistant from centroids 2 (0.0) and 5 (2.0)
        assert_eq!(cb.quantize_slice(0, &[1.0]), 2);
        for i in 0..6 {
            assert_eq!(cb.quantize_slice(0, cb.fields[0].centroid(i)), i);
        }
    }

    #[test]
    fn sampling_contract() {
        let g = build_retina();
        let bank = init_encoders(2, &g);
        let black = generate_squares(0, SquaresParams { n_squares: 0, ..Default::default() }).unwrap();
        assert!(matches!(
            collect_samples(std::slice::from_ref(&black), &bank, &g, 59, 1),
            Err(Error::TooFewSamples { .. })
        ));
        let sets = collect_samples(&[black], &bank, &g, 60, 1).unwrap();
        for (a, s) in sets.iter().enumerate() {
            assert_eq!(s.len(), 60);
            let expect = bank.encode(a, &vec![0.0; 144]).values;
            for i in 0..s.len() {
                assert_eq!(s.row(i), &expect[..]);
            }
        }

        let envs = vec![generate_squares(1, SquaresParams::default()).unwrap()];
        assert_eq!(
            collect_samples(&envs, &bank, &g, 200, 4).unwrap(),
            collect_samples(&envs, &bank, &g, 200, 4).unwrap()
        );
    }

    #[test]
    fn fitted_codebook_shape_and_round_trip() {
        let g = build_retina();
        let bank = init_encoders(2, &g);
        let envs: Vec<_> = (0..2)
            .map(|s| generate_squares(s, SquaresParams::default()).unwrap())
            .collect();
        let sets = collect_samples(&envs, &bank, &g, 1500, 4).unwrap();
        let cb = PrototypeCodebook::fit(&sets, &g, &bank, 77).unwrap();
        for (a, f) in cb.fields.iter().enumerate() {
            assert_eq!(f.n_states(), [60, 30, 20, 10][g.field(a).layer]);
            assert!(f.centroids.iter().all(|v| (-1e-9..=255.0 + 1e-9).contains(v)));
            for i in 0..f.n_states() {
                for j in 0..i {
                    assert_ne!(f.centroid(i), f.centroid(j));
                }
                assert_eq!(cb.quantize_slice(a, f.centroid(i)), i);
            }
        }
        assert_eq!(cb, PrototypeCodebook::fit(&sets, &g, &bank, 77).unwrap());
        let bytes = cb.to_bytes();
        assert_eq!(PrototypeCodebook::from_bytes(&bytes).unwrap(), cb);
        cb.check_compatible(&g, &bank).unwrap();
        assert!(cb.check_compatible(&g, &init_encoders(3, &g)).is_err());
    }
}
