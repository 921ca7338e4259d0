//! 2D grayscale worlds and the agent's pose on them.
//!
//! Worlds are toroidal: reads and pose updates wrap in both axes. Poses are
//! constrained to the receptive-field lattice, so a saccade shifts the
//! visual scene by exactly one field.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{MotorCommand, RetinaGeometry};
use crate::seeds;

/// Smallest world side that fits the default 84 px retina.
pub const MIN_WORLD_PX: usize = 84;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SquaresParams {
    pub width: usize,
    pub height: usize,
    pub n_squares: usize,
    pub min_size: usize,
    pub max_size: usize,
}

impl Default for SquaresParams {
    fn default() -> Self {
        SquaresParams {
            width: 252,
            height: 252,
            n_squares: 20,
            min_size: 8,
            max_size: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvKind {
    Squares(SquaresParams),
    Noise { width: usize, height: usize },
}

impl EnvKind {
    pub fn dims(&self) -> (usize, usize) {
        match *self {
            EnvKind::Squares(p) => (p.width, p.height),
            EnvKind::Noise { width, height } => (width, height),
        }
    }
}

/// Sidecar record written next to every environment image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvMeta {
    pub seed: u64,
    #[serde(flatten)]
    pub kind: EnvKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub width: usize,
    pub height: usize,
    /// Row-major luminance in [0, 255].
    pub pixels: Vec<f64>,
    pub kind: EnvKind,
    pub seed: u64,
}

/// Top-left corner of the retina window in world pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentPose {
    pub row: usize,
    pub col: usize,
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width < MIN_WORLD_PX || height < MIN_WORLD_PX {
        return Err(Error::EnvironmentTooSmall {
            width,
            height,
            min: MIN_WORLD_PX,
        });
    }
    Ok(())
}

pub fn generate_squares(seed: u64, params: SquaresParams) -> Result<Environment> {
    check_dims(params.width, params.height)?;
    if params.min_size == 0
        || params.min_size > params.max_size
        || params.max_size > params.width.min(params.height)
    {
        return Err(Error::InvalidParameter(format!(
            "square sizes [{}, {}] must satisfy 1 <= min <= max <= {}",
            params.min_size,
            params.max_size,
            params.width.min(params.height)
        )));
    }
    let SquaresParams { width, height, .. } = params;
    let mut pixels = vec![0.0; width * height];
    let mut rng = seeds::rng(seed);
    for _ in 0..params.n_squares {
        let side = rng.gen_range(params.min_size..=params.max_size);
        let top = rng.gen_range(0..height);
        let left = rng.gen_range(0..width);
        for dr in 0..side {
            let row = (top + dr) % height;
            for dc in 0..side {
                pixels[row * width + (left + dc) % width] = 255.0;
            }
        }
    }
    Ok(Environment {
        width,
        height,
        pixels,
        kind: EnvKind::Squares(params),
        seed,
    })
}

pub fn generate_noise(seed: u64, width: usize, height: usize) -> Result<Environment> {
    check_dims(width, height)?;
    let mut rng = seeds::rng(seed);
    let pixels = (0..width * height)
        .map(|_| rng.gen_range(0.0..=255.0))
        .collect();
    Ok(Environment {
        width,
        height,
        pixels,
        kind: EnvKind::Noise { width, height },
        seed,
    })
}

pub fn generate(meta: &EnvMeta) -> Result<Environment> {
    match meta.kind {
        EnvKind::Squares(p) => generate_squares(meta.seed, p),
        EnvKind::Noise { width, height } => generate_noise(meta.seed, width, height),
    }
}

impl Environment {
    pub fn meta(&self) -> EnvMeta {
        EnvMeta {
            seed: self.seed,
            kind: self.kind,
        }
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> f64 {
        self.pixels[(row % self.height) * self.width + col % self.width]
    }

    /// Writes the raw `window × window` patch under field `a` into `out`.
    pub fn read_patch_into(
        &self,
        geometry: &RetinaGeometry,
        pose: AgentPose,
        a: usize,
        out: &mut [f64],
    ) {
        let w = geometry.rf_window_px;
        debug_assert_eq!(out.len(), w * w);
        let (gr, gc) = geometry.field(a).grid_pos;
        let top = pose.row + gr * w;
        let left = pose.col + gc * w;
        for r in 0..w {
            let row = ((top + r) % self.height) * self.width;
            for c in 0..w {
                out[r * w + c] = self.pixels[row + (left + c) % self.width];
            }
        }
    }

    pub fn read_patch(&self, geometry: &RetinaGeometry, pose: AgentPose, a: usize) -> Vec<f64> {
        let w = geometry.rf_window_px;
        let mut out = vec![0.0; w * w];
        self.read_patch_into(geometry, pose, a, &mut out);
        out
    }

    /// Shifts the pose by one field width along the motor's displacement.
    pub fn apply_saccade(
        &self,
        geometry: &RetinaGeometry,
        pose: AgentPose,
        motor: &MotorCommand,
    ) -> AgentPose {
        let step = geometry.rf_window_px as i64;
        let (dr, dc) = motor.displacement;
        let wrap = |v: usize, d: i32, n: usize| -> usize {
            (v as i64 + d as i64 * step).rem_euclid(n as i64) as usize
        };
        AgentPose {
            row: wrap(pose.row, dr, self.height),
            col: wrap(pose.col, dc, self.width),
        }
    }

    /// Number of lattice positions along (rows, cols).
    pub fn lattice_dims(&self, geometry: &RetinaGeometry) -> (usize, usize) {
        let w = geometry.rf_window_px;
        (self.height / w, self.width / w)
    }

    pub fn random_pose<R: Rng + ?Sized>(&self, geometry: &RetinaGeometry, rng: &mut R) -> AgentPose {
        let (rows, cols) = self.lattice_dims(geometry);
        let w = geometry.rf_window_px;
        AgentPose {
            row: rng.gen_range(0..rows) * w,
            col: rng.gen_range(0..cols) * w,
        }
    }

    /// Checks that the world is large enough for the retina and that its
    /// sides are whole multiples of the field width, so wrapped poses stay
    /// on the lattice.
    pub fn check_compatible(&self, geometry: &RetinaGeometry) -> Result<()> {
        let w = geometry.rf_window_px;
        if self.width < geometry.retina_px() || self.height < geometry.retina_px() {
            return Err(Error::EnvironmentTooSmall {
                width: self.width,
                height: self.height,
                min: geometry.retina_px(),
            });
        }
        if !self.width.is_multiple_of(w) || !self.height.is_multiple_of(w) {
            return Err(Error::InvalidParameter(format!(
                "world {}x{} is not a multiple of the {w} px field width",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn to_gray8(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let v = self.pixels[y as usize * self.width + x as usize];
            image::Luma([v.round().clamp(0.0, 255.0) as u8])
        })
    }

    /// Writes `<dir>/<stem>.png` and `<dir>/<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let png = dir.join(format!("{stem}.png"));
        self.to_gray8().save(&png)?;
        let meta = serde_json::to_string_pretty(&self.meta())?;
        let json = dir.join(format!("{stem}.json"));
        crate::io::write_file(&json, meta.as_bytes())?;
        Ok(png)
    }

    /// Loads an environment from its sidecar record. Pixel values are
    /// regenerated from (seed, params) at full precision, then checked
    /// against the 8-bit image when one is present.
    pub fn load(json_path: &Path) -> Result<Environment> {
        let text = std::fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
        let meta: EnvMeta = serde_json::from_str(&text)?;
        let env = generate(&meta)?;
        let png = json_path.with_extension("png");
        if png.exists() {
            let stored = image::open(&png)?.to_luma8();
            if stored != env.to_gray8() {
                return Err(Error::Malformed {
                    artifact: "environment",
                    reason: format!("{} does not match its sidecar record", png.display()),
                });
            }
        }
        Ok(env)
    }

    /// Loads every `*.json` environment in a directory, sorted by file name.
    pub fn load_dir(dir: &Path) -> Result<Vec<Environment>> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "no environment records in {}",
                dir.display()
            )));
        }
        paths.iter().map(|p| Environment::load(p)).collect()
    }
}
