//! Experiment description: geometry, antenna placement, cell model, frequency
//! plan and receiver calibration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array::{linspace, point_at, ArrayError, ArrayGeometry, Direction, Placement};
use crate::cell::{CellError, CellModelDoc, UnitCellModel};
use crate::control::partition::MAX_BLOCKS;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error(transparent)]
    Array(#[from] ArrayError),
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error("{0} blocks exceed the 16-block chain")]
    TooManyBlocks(usize),
    #[error("{0}")]
    Invalid(String),
    #[error("scenario document: {0}")]
    Parse(String),
    #[error("reading scenario: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub start_hz: f64,
    pub stop_hz: f64,
    pub points: usize,
}

impl FrequencyGrid {
    pub fn values(&self) -> Vec<f64> {
        linspace(self.start_hz, self.stop_hz, self.points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    /// |H| of the all-OFF surface at the probe frequency.
    Baseline,
}

/// Magnitude that maps to `offset_db` on the receiver scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Reference {
    Named(ReferenceKind),
    Gain(f64),
}

impl Default for Reference {
    fn default() -> Self {
        Reference::Named(ReferenceKind::Baseline)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub geometry: ArrayGeometry,
    pub placement: Placement,
    /// Inline cell model; absent means the bundled n78 model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<CellModelDoc>,
    pub f_probe_hz: f64,
    pub f_grid: FrequencyGrid,
    /// Receiver calibration: power reported for a gain equal to `reference`.
    pub offset_db: f64,
    #[serde(default)]
    pub reference: Reference,
    #[serde(default)]
    pub noise_sigma_db: f64,
    #[serde(default)]
    pub seed: u64,
    /// `q` of an optional cos^q element taper; 0 is isotropic.
    #[serde(default)]
    pub element_cos_exponent: f64,
    /// Direct Tx→Rx leakage relative to free space, in dB; absent means none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leakage_db: Option<f64>,
}

impl Scenario {
    /// Two blocks side by side (8×16), Tx 1 m on the normal, Rx 2 m away at
    /// 20° in the y–z plane, probed at 3.75 GHz, swept over 3.3–4.0 GHz.
    pub fn two_block_default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            geometry: ArrayGeometry::tiled(1, 2),
            placement: Placement {
                tx_pos: [0.0, 0.0, 1.0],
                rx_pos: point_at(Direction { theta_deg: 20.0, phi_deg: 90.0 }, 2.0),
            },
            model: None,
            f_probe_hz: 3.75e9,
            f_grid: FrequencyGrid { start_hz: 3.3e9, stop_hz: 4.0e9, points: 141 },
            offset_db: 24.0,
            reference: Reference::default(),
            noise_sigma_db: 0.0,
            seed: 0,
            element_cos_exponent: 0.0,
            leakage_db: None,
        }
    }

    /// Four blocks (16×16) lit by a broadside feed at 0.8 m.
    pub fn four_block_steering() -> Self {
        Self {
            geometry: ArrayGeometry::tiled(2, 2),
            placement: Placement { tx_pos: [0.0, 0.0, 0.8], rx_pos: point_at(Direction { theta_deg: 30.0, phi_deg: 0.0 }, 2.0) },
            ..Self::two_block_default()
        }
    }

    pub fn cell_model(&self) -> Result<UnitCellModel, ScenarioError> {
        match &self.model {
            None => Ok(UnitCellModel::default()),
            Some(doc) => Ok(UnitCellModel::from_doc(doc.clone())?),
        }
    }

    pub fn validate(&self) -> Result<UnitCellModel, ScenarioError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::Schema(self.schema_version));
        }
        self.geometry.validate()?;
        if self.geometry.block_count() > MAX_BLOCKS {
            return Err(ScenarioError::TooManyBlocks(self.geometry.block_count()));
        }
        if self.geometry.block_rows > 8 || self.geometry.block_cols > 8 {
            return Err(ScenarioError::Invalid("blocks are at most 8x8 elements".into()));
        }
        self.placement.validate()?;
        let model = self.cell_model()?;
        let (lo, hi) = model.span_hz();
        let in_span = |f: f64| f >= lo && f <= hi;
        if !in_span(self.f_probe_hz) {
            return Err(ScenarioError::Invalid(format!("f_probe_hz {} outside model span", self.f_probe_hz)));
        }
        let g = &self.f_grid;
        if g.points == 0 || !in_span(g.start_hz) || !in_span(g.stop_hz) || g.start_hz > g.stop_hz {
            return Err(ScenarioError::Invalid(format!(
                "f_grid {}..{} ({} points) must be non-empty, ordered and inside [{lo}, {hi}]",
                g.start_hz, g.stop_hz, g.points
            )));
        }
        if !(self.noise_sigma_db >= 0.0) {
            return Err(ScenarioError::Invalid("noise_sigma_db must be >= 0".into()));
        }
        if !(self.element_cos_exponent >= 0.0) {
            return Err(ScenarioError::Invalid("element_cos_exponent must be >= 0".into()));
        }
        if let Reference::Gain(g) = self.reference {
            if !(g > 0.0) {
                return Err(ScenarioError::Invalid("reference gain must be > 0".into()));
            }
        }
        Ok(model)
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

impl Default for Scenario {
    fn default() -> Self {
        Self::two_block_default()
    }
}
