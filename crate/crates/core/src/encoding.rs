//! The scrambled sensory interface between raw patches and the agent.
//!
//! Each field subsamples its raw window, passes every retained pixel
//! through its own affine map `g(x) = αx + β`, and shuffles the result with
//! a fixed per-field permutation. The agent never sees α, β or the
//! permutation; [`EncoderBank::decode`] exists for reports and for building
//! search targets.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::RetinaGeometry;
use crate::io::{BinReader, BinWriter};
use crate::seeds;

/// Smallest admissible |α|; smaller slopes are redrawn so every map stays
/// invertible.
pub const ALPHA_MIN: f64 = 1e-3;
/// Slack allowed on decoded values before the input counts as corrupted.
pub const DECODE_EPS: f64 = 1e-6;

const MAGIC: &[u8; 8] = b"SMCENCOD";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SensoryVector {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldEncoder {
    pub stride: usize,
    pub resolution_px: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Output slot `k` carries retained pixel `perm[k]`.
    pub perm: Vec<usize>,
}

impl FieldEncoder {
    pub fn d_a(&self) -> usize {
        self.alpha.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBank {
    pub seed: u64,
    pub window_px: usize,
    pub fields: Vec<FieldEncoder>,
}

/// Draws β on [0, 255], then α on [−β/255, 1 − β/255] until |α| ≥ α_min.
pub fn draw_affine<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    let beta: f64 = rng.gen_range(0.0..=255.0);
    let lo = -beta / 255.0;
    loop {
        let alpha = rng.gen_range(lo..=lo + 1.0);
        if alpha.abs() >= ALPHA_MIN {
            return (alpha, beta);
        }
    }
}

pub fn init_encoders(seed: u64, geometry: &RetinaGeometry) -> EncoderBank {
    let mut rng = seeds::rng(seed);
    let fields = geometry
        .fields
        .iter()
        .map(|f| {
            let (alpha, beta): (Vec<f64>, Vec<f64>) =
                (0..f.d_a).map(|_| draw_affine(&mut rng)).unzip();
            let mut perm: Vec<usize> = (0..f.d_a).collect();
            perm.shuffle(&mut rng);
            FieldEncoder {
                stride: f.stride,
                resolution_px: f.resolution_px,
                alpha,
                beta,
                perm,
            }
        })
        .collect();
    EncoderBank {
        seed,
        window_px: geometry.rf_window_px,
        fields,
    }
}

impl EncoderBank {
    /// α = 1, β = 0 and identity permutations everywhere.
    pub fn identity(geometry: &RetinaGeometry) -> Self {
        let fields = geometry
            .fields
            .iter()
            .map(|f| FieldEncoder {
                stride: f.stride,
                resolution_px: f.resolution_px,
                alpha: vec![1.0; f.d_a],
                beta: vec![0.0; f.d_a],
                perm: (0..f.d_a).collect(),
            })
            .collect();
        EncoderBank {
            seed: 0,
            window_px: geometry.rf_window_px,
            fields,
        }
    }

    pub fn d_a(&self, a: usize) -> usize {
        self.fields[a].d_a()
    }

    /// Encodes a raw `window × window` patch into `out` (length `d_a`).
    #[inline]
    pub fn encode_into(&self, a: usize, raw_patch: &[f64], out: &mut [f64]) {
        let enc = &self.fields[a];
        let w = self.window_px;
        let res = enc.resolution_px;
        debug_assert_eq!(raw_patch.len(), w * w);
        debug_assert_eq!(out.len(), enc.d_a());
        for (slot, &p) in out.iter_mut().zip(&enc.perm) {
            let (r, c) = (p / res, p % res);
            let x = raw_patch[r * enc.stride * w + c * enc.stride];
            *slot = enc.alpha[p] * x + enc.beta[p];
        }
    }

    pub fn encode(&self, a: usize, raw_patch: &[f64]) -> SensoryVector {
        let mut values = vec![0.0; self.d_a(a)];
        self.encode_into(a, raw_patch, &mut values);
        SensoryVector { values }
    }

    /// Inverts the permutation and the affine maps, returning the
    /// subsampled feature as `resolution_px²` row-major values.
    pub fn decode(&self, a: usize, sv: &SensoryVector) -> Result<Vec<f64>> {
        let enc = &self.fields[a];
        if sv.values.len() != enc.d_a() {
            return Err(Error::InvalidParameter(format!(
                "field {a} expects {} values, got {}",
                enc.d_a(),
                sv.values.len()
            )));
        }
        let mut out = vec![0.0; enc.d_a()];
        for (&v, &p) in sv.values.iter().zip(&enc.perm) {
            let x = (v - enc.beta[p]) / enc.alpha[p];
            if !(-DECODE_EPS..=255.0 + DECODE_EPS).contains(&x) {
                return Err(Error::CorruptedSensoryVector { field: a, value: x });
            }
            out[p] = x;
        }
        Ok(out)
    }

    /// The subsampled raw feature a field would decode to.
    pub fn subsample(&self, a: usize, raw_patch: &[f64]) -> Vec<f64> {
        let enc = &self.fields[a];
        let w = self.window_px;
        let mut out = Vec::with_capacity(enc.d_a());
        for r in 0..enc.resolution_px {
            for c in 0..enc.resolution_px {
                out.push(raw_patch[r * enc.stride * w + c * enc.stride]);
            }
        }
        out
    }

    pub fn check_compatible(&self, geometry: &RetinaGeometry) -> Result<()> {
        let ok = self.window_px == geometry.rf_window_px
            && self.fields.len() == geometry.n_fields()
            && self
                .fields
                .iter()
                .zip(&geometry.fields)
                .all(|(e, f)| e.stride == f.stride && e.d_a() == f.d_a);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(
                "encoder bank does not match the retina geometry".into(),
            ))
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::new(MAGIC, VERSION);
        w.u64(self.seed);
        w.u64(self.window_px as u64);
        w.u64(self.fields.len() as u64);
        for f in &self.fields {
            w.u64(f.stride as u64);
            w.u64(f.resolution_px as u64);
            w.f64_slice(&f.alpha);
            w.f64_slice(&f.beta);
            for &p in &f.perm {
                w.u64(p as u64);
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BinReader::open(bytes, MAGIC, VERSION, "encoder bank")?;
        let seed = r.u64()?;
        let window_px = r.usize(1 << 16)?;
        let n = r.usize(1 << 16)?;
        let mut fields = Vec::with_capacity(n);
        for _ in 0..n {
            let stride = r.usize(window_px)?;
            let resolution_px = r.usize(window_px)?;
            let d = resolution_px * resolution_px;
            let alpha = r.f64_vec(d)?;
            let beta = r.f64_vec(d)?;
            let perm = r
                .u64_vec(d)?
                .into_iter()
                .map(|p| p as usize)
                .collect::<Vec<_>>();
            let mut seen = vec![false; d];
            for &p in &perm {
                if p >= d || std::mem::replace(&mut seen[p], true) {
                    return Err(Error::Malformed {
                        artifact: "encoder bank",
                        reason: "pixel order is not a permutation".into(),
                    });
                }
            }
            fields.push(FieldEncoder {
                stride,
                resolution_px,
                alpha,
                beta,
                perm,
            });
        }
        r.finish()?;
        Ok(EncoderBank {
            seed,
            window_px,
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
    use crate::geometry::build_retina;
    use proptest::prelude::{any, prop_assert, proptest};

    fn random_patch(rng: &mut impl Rng) -> Vec<f64> {
        (0..144).map(|_| rng.gen_range(0.0..=255.0)).collect()
    }

    #[test]
    fn drawn_maps_stay_in_range() {
        let g = build_retina();
        let bank = init_encoders(17, &g);
        for f in &bank.fields {
            assert_eq!(f.alpha.len(), f.resolution_px * f.resolution_px);
            for (&a, &b) in f.alpha.iter().zip(&f.beta) {
                assert!((0.0..=255.0).contains(&b));
                assert!(a >= -b / 255.0 - 1e-12 && a <= 1.0 - b / 255.0 + 1e-12);
                assert!(a.abs() >= ALPHA_MIN);
                for x in [0.0, 255.0] {
                    let y = a * x + b;
                    assert!((-1e-9..=255.0 + 1e-9).contains(&y), "g({x}) = {y}");
                }
            }
            let mut sorted = f.perm.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..f.perm.len()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn seeds_decide_banks() {
        let g = build_retina();
        assert_eq!(init_encoders(3, &g), init_encoders(3, &g));
        for s in 0..20u64 {
            assert_ne!(init_encoders(s, &g).fields, init_encoders(s + 1000, &g).fields);
        }
    }

    #[test]
    fn identity_encoder_flattens_fovea() {
        let g = build_retina();
        let bank = EncoderBank::identity(&g);
        let patch: Vec<f64> = (0..144).map(|v| v as f64).collect();
        assert_eq!(bank.encode(g.fovea_index, &patch).values, patch);
        // the corner field keeps pixels (0,0), (0,6), (6,0), (6,6)
        assert_eq!(bank.encode(0, &patch).values, vec![0.0, 6.0, 72.0, 78.0]);
        assert_eq!(bank.decode(0, &bank.encode(0, &patch)).unwrap(), vec![0.0, 6.0, 72.0, 78.0]);
    }

    #[test]
    fn affine_arithmetic() {
        let g = build_retina();
        let mut bank = EncoderBank::identity(&g);
        bank.fields[0].alpha = vec![0.5; 4];
        bank.fields[0].beta = vec![64.0; 4];
        let patch = vec![128.0; 144];
        assert_eq!(bank.encode(0, &patch).values, vec![128.0; 4]);
    }

    #[test]
    fn output_lengths_per_layer() {
        let g = build_retina();
        let bank = init_encoders(1, &g);
        let patch = vec![10.0; 144];
        for f in &g.fields {
            let expect = [144, 36, 16, 4][f.layer];
            assert_eq!(bank.encode(f.index, &patch).values.len(), expect);
        }
    }

    #[test]
    fn corrupted_vectors_are_rejected() {
        let g = build_retina();
        let bank = init_encoders(8, &g);
        let mut sv = bank.encode(0, &vec![100.0; 144]);
        // push the first slot far beyond anything a valid input can produce
        let p = bank.fields[0].perm[0];
        sv.values[0] = bank.fields[0].beta[p] + bank.fields[0].alpha[p] * 1000.0;
        assert!(matches!(bank.decode(0, &sv), Err(Error::CorruptedSensoryVector { .. })));
        assert!(bank.decode(0, &SensoryVector { values: vec![0.0; 3] }).is_err());
    }

    #[test]
    fn round_trip_over_many_patches() {
        let g = build_retina();
        let mut rng = seeds::rng(99);
        let mut worst: f64 = 0.0;
        for trial in 0..1000u64 {
            let bank = init_encoders(trial, &g);
            let patch = random_patch(&mut rng);
            let a = rng.gen_range(0..g.n_fields());
            let sv = bank.encode(a, &patch);
            assert!(sv.values.iter().all(|v| (-1e-9..=255.0 + 1e-9).contains(v)));
            let back = bank.decode(a, &sv).unwrap();
            for (x, y) in back.iter().zip(bank.subsample(a, &patch)) {
                worst = worst.max((x - y).abs());
            }
        }
        assert!(worst < 1e-9, "max round-trip error {worst}");
    }

    #[test]
    fn binary_record_is_bit_exact() {
        let g = build_retina();
        let bank = init_encoders(23, &g);
        let bytes = bank.to_bytes();
        let back = EncoderBank::from_bytes(&bytes).unwrap();
        assert_eq!(back, bank);
        assert_eq!(back.to_bytes(), bytes);
        assert!(EncoderBank::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    proptest! {
        #[test]
        fn encode_stays_in_range(seed in any::<u64>(), a in 0usize..49, v in proptest::collection::vec(0.0f64..=255.0, 144)) {
            let g = build_retina();
            let bank = init_encoders(seed, &g);
            let sv = bank.encode(a, &v);
            prop_assert!(sv.values.iter().all(|x| (-1e-9..=255.0 + 1e-9).contains(x)));
            let back = bank.decode(a, &sv).unwrap();
            for (x, y) in back.iter().zip(bank.subsample(a, &v)) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
