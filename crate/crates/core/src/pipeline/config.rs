use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codebook::DEFAULT_SAMPLES_PER_FIELD;
use crate::environment::{EnvKind, EnvMeta, SquaresParams};
use crate::error::{Error, Result};
use crate::geometry::{GeometryConfig, RetinaGeometry};
use crate::seeds;

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "SACCADE_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorldKind {
    Squares,
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// Random affine maps and permutations drawn from the encoder seed.
    Scrambled,
    /// α = 1, β = 0, no permutation.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub kind: WorldKind,
    pub width: usize,
    pub height: usize,
    pub n_squares: usize,
    pub min_size: usize,
    pub max_size: usize,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        let p = SquaresParams::default();
        EnvironmentConfig {
            kind: WorldKind::Squares,
            width: p.width,
            height: p.height,
            n_squares: p.n_squares,
            min_size: p.min_size,
            max_size: p.max_size,
        }
    }
}

impl EnvironmentConfig {
    pub fn env_kind(&self) -> EnvKind {
        match self.kind {
            WorldKind::Squares => EnvKind::Squares(SquaresParams {
                width: self.width,
                height: self.height,
                n_squares: self.n_squares,
                min_size: self.min_size,
                max_size: self.max_size,
            }),
            WorldKind::Noise => EnvKind::Noise {
                width: self.width,
                height: self.height,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GalleryConfig {
    /// Fields whose pre-states are shown.
    pub fields: Vec<usize>,
    pub states_per_field: usize,
    /// Most frequent states skipped per field (usually uniform black/white).
    pub skip_most_frequent: usize,
    pub top_k: usize,
    pub scale: u32,
}

impl Default for GalleryConfig {
    fn default() -> Self {
        GalleryConfig {
            fields: vec![24, 17],
            states_per_field: 2,
            skip_most_frequent: 2,
            top_k: 2,
            scale: 4,
        }
    }
}

/// Every knob of an experiment run. Serialized as TOML.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub geometry: GeometryConfig,
    pub environment: EnvironmentConfig,
    pub encoder: EncoderKind,
    pub n_environments: usize,
    pub samples_per_field: usize,
    pub saccades_per_env: u64,
    pub shards_per_env: usize,
    pub workers: usize,
    pub search_trials: usize,
    pub search_environments: usize,
    pub gallery: GalleryConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::desk()
    }
}

impl ExperimentConfig {
    /// Finishes in minutes on one core.
    pub fn desk() -> Self {
        ExperimentConfig {
            seed: 2016,
            geometry: GeometryConfig::default(),
            environment: EnvironmentConfig::default(),
            encoder: EncoderKind::Scrambled,
            n_environments: 3,
            samples_per_field: DEFAULT_SAMPLES_PER_FIELD,
            saccades_per_env: 20_000,
            shards_per_env: 4,
            workers: 1,
            search_trials: 200,
            search_environments: 3,
            gallery: GalleryConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }

    /// Ten worlds, 10⁵ saccades each, 10³ search trials.
    pub fn full() -> Self {
        ExperimentConfig {
            n_environments: 10,
            saccades_per_env: 100_000,
            search_trials: 1000,
            search_environments: 10,
            ..ExperimentConfig::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(ExperimentConfig::desk()),
            "full" => Ok(ExperimentConfig::full()),
            "noise" => {
                let mut c = ExperimentConfig::desk();
                c.environment.kind = WorldKind::Noise;
                Ok(c)
            }
            other => Err(Error::Config(format!("unknown preset `{other}` (desk, full, noise)"))),
        }
    }

    pub fn validate(&self) -> Result<RetinaGeometry> {
        let geometry = RetinaGeometry::new(&self.geometry)?;
        let e = &self.environment;
        let w = geometry.rf_window_px;
        if e.width < geometry.retina_px() || e.height < geometry.retina_px() {
            return Err(Error::Config(format!(
                "world {}x{} is smaller than the {} px retina",
                e.width,
                e.height,
                geometry.retina_px()
            )));
        }
        if !e.width.is_multiple_of(w) || !e.height.is_multiple_of(w) {
            return Err(Error::Config(format!(
                "world {}x{} must be a multiple of the {w} px field width",
                e.width, e.height
            )));
        }
        if self.n_environments == 0 || self.search_environments == 0 {
            return Err(Error::Config("at least one environment is required".into()));
        }
        if self.samples_per_field < geometry.max_states() {
            return Err(Error::Config(format!(
                "samples_per_field {} is below the largest state count {}",
                self.samples_per_field,
                geometry.max_states()
            )));
        }
        if let Some(&bad) = self.gallery.fields.iter().find(|&&a| a >= geometry.n_fields()) {
            return Err(Error::Config(format!("gallery field {bad} does not exist")));
        }
        Ok(geometry)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::from_toml(&text)
    }

    /// Applies the output-directory environment override, if set.
    pub fn with_env_overrides(mut self) -> Self {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            self.output_dir = PathBuf::from(dir);
        }
        self
    }

    pub fn stage_seed(&self, label: &str) -> u64 {
        seeds::derive_seed(self.seed, label)
    }

    pub fn training_env_metas(&self) -> Vec<EnvMeta> {
        (0..self.n_environments)
            .map(|k| EnvMeta {
                seed: self.stage_seed(&format!("env/train{k}")),
                kind: self.environment.env_kind(),
            })
            .collect()
    }

    /// Fresh worlds for search, drawn with the training parameters but
    /// different seeds. Search always runs in square worlds.
    pub fn search_env_metas(&self) -> Vec<EnvMeta> {
        let mut env = self.environment.clone();
        env.kind = WorldKind::Squares;
        (0..self.search_environments)
            .map(|k| EnvMeta {
                seed: self.stage_seed(&format!("env/search{k}")),
                kind: env.env_kind(),
            })
            .collect()
    }
}
