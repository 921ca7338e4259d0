//! Receptive-field layout of the retina and the discrete saccade set.
//!
//! Fields are indexed row-major over a square grid. Each field belongs to a
//! concentric ring (Chebyshev distance from the center cell); the ring
//! decides how coarsely the field subsamples its square pixel window and
//! how many prototype states it is quantized into.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Subsampling and quantization parameters for one concentric ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub stride: usize,
    pub n_states: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub grid_side: usize,
    pub rf_window_px: usize,
    /// One entry per ring, fovea first.
    pub layers: Vec<LayerSpec>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            grid_side: 7,
            rf_window_px: 12,
            layers: vec![
                LayerSpec { stride: 1, n_states: 60 },
                LayerSpec { stride: 2, n_states: 30 },
                LayerSpec { stride: 3, n_states: 20 },
                LayerSpec { stride: 6, n_states: 10 },
            ],
        }
    }
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_side < 3 || self.grid_side.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "grid_side must be odd and >= 3, got {}",
                self.grid_side
            )));
        }
        if self.rf_window_px == 0 {
            return Err(Error::Config("rf_window_px must be positive".into()));
        }
        let rings = self.grid_side / 2 + 1;
        if self.layers.len() != rings {
            return Err(Error::Config(format!(
                "grid_side {} has {} rings but {} layer specs were given",
                self.grid_side,
                rings,
                self.layers.len()
            )));
        }
        for (ring, layer) in self.layers.iter().enumerate() {
            if layer.stride == 0 || !self.rf_window_px.is_multiple_of(layer.stride) {
                return Err(Error::Config(format!(
                    "layer {ring}: stride {} does not divide the {} px window",
                    layer.stride, self.rf_window_px
                )));
            }
            if layer.n_states == 0 {
                return Err(Error::Config(format!("layer {ring}: n_states must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceptiveField {
    pub index: usize,
    pub grid_pos: (usize, usize),
    /// Ring index, 0 for the fovea.
    pub layer: usize,
    pub stride: usize,
    pub resolution_px: usize,
    /// Number of retained pixels, `resolution_px²`.
    pub d_a: usize,
    pub n_states: usize,
}

/// One of the eight one-field saccades.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MotorCommand {
    pub index: usize,
    /// Pose displacement in field widths, (rows, cols).
    pub displacement: (i32, i32),
}

impl MotorCommand {
    /// Motor dimensionality: a saccade is a 2D translation.
    pub const D_M: usize = 2;
}

pub const N_MOTORS: usize = 8;

/// Row-major over the 3×3 neighbourhood, center excluded, so that the
/// opposite of command `q` is `N_MOTORS - 1 - q`.
const DISPLACEMENTS: [(i32, i32); N_MOTORS] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetinaGeometry {
    pub grid_side: usize,
    pub rf_window_px: usize,
    pub fields: Vec<ReceptiveField>,
    pub fovea_index: usize,
    pub motors: Vec<MotorCommand>,
    config: GeometryConfig,
    /// Start of each field's state range in the concatenated state axis.
    state_offsets: Vec<usize>,
    total_states: usize,
}

/// The default 7×7 retina.
pub fn build_retina() -> RetinaGeometry {
    RetinaGeometry::new(&GeometryConfig::default()).expect("default geometry is valid")
}

impl RetinaGeometry {
    pub fn new(config: &GeometryConfig) -> Result<Self> {
        config.validate()?;
        let side = config.grid_side;
        let center = side / 2;
        let mut fields = Vec::with_capacity(side * side);
        for row in 0..side {
            for col in 0..side {
                let layer = row.abs_diff(center).max(col.abs_diff(center));
                let spec = config.layers[layer];
                let resolution_px = config.rf_window_px / spec.stride;
                fields.push(ReceptiveField {
                    index: row * side + col,
                    grid_pos: (row, col),
                    layer,
                    stride: spec.stride,
                    resolution_px,
                    d_a: resolution_px * resolution_px,
                    n_states: spec.n_states,
                });
            }
        }
        let mut state_offsets = Vec::with_capacity(fields.len());
        let mut total_states = 0;
        for f in &fields {
            state_offsets.push(total_states);
            total_states += f.n_states;
        }
        let motors = DISPLACEMENTS
            .iter()
            .enumerate()
            .map(|(index, &displacement)| MotorCommand { index, displacement })
            .collect();
        Ok(RetinaGeometry {
            grid_side: side,
            rf_window_px: config.rf_window_px,
            fovea_index: center * side + center,
            fields,
            motors,
            config: config.clone(),
            state_offsets,
            total_states,
        })
    }

    pub fn config(&self) -> &GeometryConfig {
        &self.config
    }

    pub fn n_fields(&self) -> usize {
        self.fields.len()
    }

    pub fn n_motors(&self) -> usize {
        self.motors.len()
    }

    /// Side length of the whole retina in pixels.
    pub fn retina_px(&self) -> usize {
        self.grid_side * self.rf_window_px
    }

    pub fn field(&self, a: usize) -> &ReceptiveField {
        &self.fields[a]
    }

    pub fn field_at(&self, row: usize, col: usize) -> usize {
        row * self.grid_side + col
    }

    pub fn n_states(&self, a: usize) -> usize {
        self.fields[a].n_states
    }

    pub fn state_offset(&self, a: usize) -> usize {
        self.state_offsets[a]
    }

    /// Sum of `n_states` over all fields.
    pub fn total_states(&self) -> usize {
        self.total_states
    }

    pub fn max_states(&self) -> usize {
        self.fields.iter().map(|f| f.n_states).max().unwrap_or(0)
    }

    /// Fields of ring `layer`, in index order.
    pub fn layer_fields(&self, layer: usize) -> Vec<usize> {
        self.fields
            .iter()
            .filter(|f| f.layer == layer)
            .map(|f| f.index)
            .collect()
    }

    pub fn opposite_motor(&self, q: usize) -> usize {
        N_MOTORS - 1 - q
    }

    /// The field that reads, after saccade `q`, the world content field `a`
    /// read before it. `None` when that content leaves the retina.
    pub fn coupled_partner(&self, a: usize, q: usize) -> Option<usize> {
        let (row, col) = self.fields[a].grid_pos;
        let (dr, dc) = self.motors[q].displacement;
        let r = row as i64 - dr as i64;
        let c = col as i64 - dc as i64;
        let side = self.grid_side as i64;
        if (0..side).contains(&r) && (0..side).contains(&c) {
            Some(self.field_at(r as usize, c as usize))
        } else {
            None
        }
    }

    /// Canonical byte encoding used for content hashing.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.grid_side as u64).to_le_bytes());
        out.extend_from_slice(&(self.rf_window_px as u64).to_le_bytes());
        for l in &self.config.layers {
            out.extend_from_slice(&(l.stride as u64).to_le_bytes());
            out.extend_from_slice(&(l.n_states as u64).to_le_bytes());
        }
        out
    }

    pub fn content_hash(&self) -> String {
        crate::io::sha256_hex(&self.canonical_bytes())
    }
}
