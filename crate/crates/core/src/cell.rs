//! Two-state reflection response of a single PIN-diode unit cell.
//!
//! Each state is described by an ordered table of `(frequency, |Γ| dB, ∠Γ deg)`
//! anchors. Between anchors the response is interpolated linearly in dB and in
//! unwrapped degrees. Phase unwrapping happens once, when the model is built.

use std::fmt;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULT_MODEL_JSON: &str = include_str!("../data/default_cell.json");

#[derive(Debug, Error, PartialEq)]
pub enum CellError {
    #[error("frequency {freq_hz} Hz outside anchor span [{lo_hz}, {hi_hz}] Hz of state {state}")]
    OutOfRange {
        state: PinState,
        freq_hz: f64,
        lo_hz: f64,
        hi_hz: f64,
    },
    #[error("state {0} needs at least two anchors")]
    TooFewAnchors(PinState),
    #[error("anchors of state {0} are not strictly increasing in frequency")]
    NotIncreasing(PinState),
    #[error("anchor at {freq_hz} Hz of state {state} has magnitude {mag_db} dB > 0 (element is passive)")]
    Active {
        state: PinState,
        freq_hz: f64,
        mag_db: f64,
    },
    #[error("anchor at {freq_hz} Hz of state {state} has phase {phase_deg} outside [-180, 180)")]
    PhaseOutOfRange {
        state: PinState,
        freq_hz: f64,
        phase_deg: f64,
    },
    #[error("anchors of state {0} do not cover the design band")]
    BandNotCovered(PinState),
    #[error("model document must contain exactly one OFF and one ON table")]
    MissingState,
    #[error("invalid band [{0}, {1}] Hz")]
    InvalidBand(f64, f64),
    #[error("grid needs at least 2 points, got {0}")]
    GridTooSmall(usize),
    #[error("model document: {0}")]
    Parse(String),
    #[error("reading model file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PinState {
    /// 0 V bias.
    #[serde(rename = "OFF")]
    Off,
    /// Forward bias.
    #[serde(rename = "ON")]
    On,
}

impl PinState {
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            PinState::On
        } else {
            PinState::Off
        }
    }

    pub fn bit(self) -> bool {
        matches!(self, PinState::On)
    }
}

impl fmt::Display for PinState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PinState::Off => f.write_str("OFF"),
            PinState::On => f.write_str("ON"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectionAnchor {
    pub freq_hz: f64,
    pub mag_db: f64,
    /// Wrapped phase in [-180, 180).
    pub phase_deg: f64,
}

/// One state's anchor table after validation, with its phases unwrapped.
#[derive(Debug, Clone, PartialEq)]
struct AnchorTable {
    state: PinState,
    anchors: Vec<ReflectionAnchor>,
    unwrapped_deg: Vec<f64>,
}

impl AnchorTable {
    fn new(state: PinState, anchors: Vec<ReflectionAnchor>) -> Result<Self, CellError> {
        if anchors.len() < 2 {
            return Err(CellError::TooFewAnchors(state));
        }
        for a in &anchors {
            if !(a.mag_db <= 0.0) {
                return Err(CellError::Active {
                    state,
                    freq_hz: a.freq_hz,
                    mag_db: a.mag_db,
                });
            }
            if !(-180.0..180.0).contains(&a.phase_deg) {
                return Err(CellError::PhaseOutOfRange {
                    state,
                    freq_hz: a.freq_hz,
                    phase_deg: a.phase_deg,
                });
            }
        }
        if anchors.windows(2).any(|w| !(w[1].freq_hz > w[0].freq_hz)) {
            return Err(CellError::NotIncreasing(state));
        }
        let unwrapped_deg = unwrap_deg(anchors.iter().map(|a| a.phase_deg));
        Ok(Self {
            state,
            anchors,
            unwrapped_deg,
        })
    }

    fn span(&self) -> (f64, f64) {
        (
            self.anchors[0].freq_hz,
            self.anchors[self.anchors.len() - 1].freq_hz,
        )
    }

    fn check(&self, freq_hz: f64) -> Result<(), CellError> {
        let (lo_hz, hi_hz) = self.span();
        if freq_hz >= lo_hz && freq_hz <= hi_hz {
            Ok(())
        } else {
            Err(CellError::OutOfRange {
                state: self.state,
                freq_hz,
                lo_hz,
                hi_hz,
            })
        }
    }

    /// (dB, unwrapped degrees) at `freq_hz`.
    fn interpolate(&self, freq_hz: f64) -> Result<(f64, f64), CellError> {
        self.check(freq_hz)?;
        let i = self.anchors.partition_point(|a| a.freq_hz <= freq_hz);
        // i >= 1 because freq_hz >= first anchor
        let lo = i - 1;
        if self.anchors[lo].freq_hz == freq_hz {
            return Ok((self.anchors[lo].mag_db, self.unwrapped_deg[lo]));
        }
        let (a, b) = (&self.anchors[lo], &self.anchors[lo + 1]);
        let t = (freq_hz - a.freq_hz) / (b.freq_hz - a.freq_hz);
        let mag = a.mag_db + t * (b.mag_db - a.mag_db);
        let phase = self.unwrapped_deg[lo] + t * (self.unwrapped_deg[lo + 1] - self.unwrapped_deg[lo]);
        Ok((mag, phase))
    }
}

/// Adds multiples of 360° so consecutive samples differ by less than 180°.
pub fn unwrap_deg(phases: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for p in phases {
        match out.last() {
            None => out.push(p),
            Some(&prev) => {
                let mut q = p;
                while q - prev >= 180.0 {
                    q -= 360.0;
                }
                while q - prev <= -180.0 {
                    q += 360.0;
                }
                out.push(q);
            }
        }
    }
    out
}

/// Wraps an angle in degrees into [-180, 180).
pub fn wrap180(deg: f64) -> f64 {
    (deg + 180.0).rem_euclid(360.0) - 180.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateTable {
    pub state: PinState,
    pub anchors: Vec<ReflectionAnchor>,
}

/// On-disk form of a [`UnitCellModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellModelDoc {
    #[serde(default = "default_band")]
    pub design_band_hz: (f64, f64),
    #[serde(default = "default_center")]
    pub center_frequency_hz: f64,
    pub states: Vec<StateTable>,
    /// Stackup metadata. Carried along, never interpreted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stackup: Option<serde_json::Value>,
}

fn default_band() -> (f64, f64) {
    (3.7e9, 3.8e9)
}

fn default_center() -> f64 {
    3.75e9
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitCellModel {
    off: AnchorTable,
    on: AnchorTable,
    design_band_hz: (f64, f64),
    center_frequency_hz: f64,
    stackup: Option<serde_json::Value>,
}

impl UnitCellModel {
    pub fn new(
        anchors_off: Vec<ReflectionAnchor>,
        anchors_on: Vec<ReflectionAnchor>,
        design_band_hz: (f64, f64),
        center_frequency_hz: f64,
    ) -> Result<Self, CellError> {
        let (lo, hi) = design_band_hz;
        if !(lo < hi) {
            return Err(CellError::InvalidBand(lo, hi));
        }
        let off = AnchorTable::new(PinState::Off, anchors_off)?;
        let on = AnchorTable::new(PinState::On, anchors_on)?;
        for t in [&off, &on] {
            let (a, b) = t.span();
            if a > lo || b < hi {
                return Err(CellError::BandNotCovered(t.state));
            }
        }
        Ok(Self {
            off,
            on,
            design_band_hz,
            center_frequency_hz,
            stackup: None,
        })
    }

    /// The shipped n78 model: resonant near 3.75 GHz, degrading toward 3.3 GHz.
    pub fn default_n78() -> Self {
        Self::from_json(DEFAULT_MODEL_JSON).expect("bundled cell model is valid")
    }

    /// Lossless, frequency-flat model with Γ_OFF = +1 and Γ_ON = −1 over `[lo_hz, hi_hz]`.
    pub fn ideal_binary(lo_hz: f64, hi_hz: f64) -> Self {
        let table = |phase_deg| {
            vec![
                ReflectionAnchor { freq_hz: lo_hz, mag_db: 0.0, phase_deg },
                ReflectionAnchor { freq_hz: hi_hz, mag_db: 0.0, phase_deg },
            ]
        };
        Self::new(table(0.0), table(-180.0), (lo_hz, hi_hz), 0.5 * (lo_hz + hi_hz))
            .expect("ideal model is valid")
    }

    pub fn from_doc(doc: CellModelDoc) -> Result<Self, CellError> {
        let mut off = None;
        let mut on = None;
        for t in doc.states {
            let slot = match t.state {
                PinState::Off => &mut off,
                PinState::On => &mut on,
            };
            if slot.replace(t.anchors).is_some() {
                return Err(CellError::MissingState);
            }
        }
        let (Some(off), Some(on)) = (off, on) else {
            return Err(CellError::MissingState);
        };
        let mut model = Self::new(off, on, doc.design_band_hz, doc.center_frequency_hz)?;
        model.stackup = doc.stackup;
        Ok(model)
    }

    pub fn to_doc(&self) -> CellModelDoc {
        CellModelDoc {
            design_band_hz: self.design_band_hz,
            center_frequency_hz: self.center_frequency_hz,
            states: vec![
                StateTable { state: PinState::Off, anchors: self.off.anchors.clone() },
                StateTable { state: PinState::On, anchors: self.on.anchors.clone() },
            ],
            stackup: self.stackup.clone(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CellError> {
        let doc: CellModelDoc =
            serde_json::from_str(text).map_err(|e| CellError::Parse(e.to_string()))?;
        Self::from_doc(doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CellError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| CellError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn anchors(&self, state: PinState) -> &[ReflectionAnchor] {
        &self.table(state).anchors
    }

    pub fn design_band_hz(&self) -> (f64, f64) {
        self.design_band_hz
    }

    pub fn center_frequency_hz(&self) -> f64 {
        self.center_frequency_hz
    }

    /// Frequency range on which both states are defined.
    pub fn span_hz(&self) -> (f64, f64) {
        let (a0, a1) = self.off.span();
        let (b0, b1) = self.on.span();
        (a0.max(b0), a1.min(b1))
    }

    fn table(&self, state: PinState) -> &AnchorTable {
        match state {
            PinState::Off => &self.off,
            PinState::On => &self.on,
        }
    }

    pub fn magnitude_db(&self, state: PinState, freq_hz: f64) -> Result<f64, CellError> {
        Ok(self.table(state).interpolate(freq_hz)?.0)
    }

    /// Unwrapped phase in degrees, continuous across the anchor table.
    pub fn phase_unwrapped_deg(&self, state: PinState, freq_hz: f64) -> Result<f64, CellError> {
        Ok(self.table(state).interpolate(freq_hz)?.1)
    }

    pub fn reflection(&self, state: PinState, freq_hz: f64) -> Result<Complex64, CellError> {
        let (mag_db, phase_deg) = self.table(state).interpolate(freq_hz)?;
        Ok(Complex64::from_polar(
            10f64.powf(mag_db / 20.0),
            phase_deg.to_radians(),
        ))
    }

    /// `(Γ_OFF, Γ_ON)` at one frequency.
    pub fn reflection_pair(&self, freq_hz: f64) -> Result<[Complex64; 2], CellError> {
        Ok([
            self.reflection(PinState::Off, freq_hz)?,
            self.reflection(PinState::On, freq_hz)?,
        ])
    }

    /// Unwrapped ON minus unwrapped OFF phase, reduced into (−360, 360).
    pub fn phase_difference_deg(&self, freq_hz: f64) -> Result<f64, CellError> {
        let on = self.phase_unwrapped_deg(PinState::On, freq_hz)?;
        let off = self.phase_unwrapped_deg(PinState::Off, freq_hz)?;
        Ok((on - off) % 360.0)
    }

    pub fn validate_band(&self, check: &BandCheck) -> Result<BandReport, CellError> {
        let (lo, hi) = check.band_hz;
        if !(lo < hi) {
            return Err(CellError::InvalidBand(lo, hi));
        }
        if check.n_grid < 2 {
            return Err(CellError::GridTooSmall(check.n_grid));
        }
        let mut min_off = f64::INFINITY;
        let mut min_on = f64::INFINITY;
        let mut diff_min = f64::INFINITY;
        let mut diff_max = f64::NEG_INFINITY;
        let mut worst_err: f64 = 0.0;
        let last = (check.n_grid - 1) as f64;
        for i in 0..check.n_grid {
            let f = if i + 1 == check.n_grid {
                hi
            } else {
                lo + (hi - lo) * i as f64 / last
            };
            min_off = min_off.min(self.magnitude_db(PinState::Off, f)?);
            min_on = min_on.min(self.magnitude_db(PinState::On, f)?);
            let diff = self.phase_difference_deg(f)?;
            // fold onto the window center so ±360° aliases compare equal
            let err = wrap180(diff - check.phase_center_deg);
            let folded = check.phase_center_deg + err;
            diff_min = diff_min.min(folded);
            diff_max = diff_max.max(folded);
            worst_err = worst_err.max(err.abs());
        }
        let pass = min_off >= check.mag_floor_db
            && min_on >= check.mag_floor_db
            && worst_err <= check.phase_tol_deg;
        Ok(BandReport {
            band_hz: check.band_hz,
            min_magnitude_db_off: min_off,
            min_magnitude_db_on: min_on,
            phase_diff_range_deg: (diff_min, diff_max),
            pass,
        })
    }
}

impl Default for UnitCellModel {
    fn default() -> Self {
        Self::default_n78()
    }
}

/// Acceptance window for [`UnitCellModel::validate_band`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandCheck {
    pub band_hz: (f64, f64),
    pub mag_floor_db: f64,
    pub phase_center_deg: f64,
    pub phase_tol_deg: f64,
    pub n_grid: usize,
}

impl Default for BandCheck {
    fn default() -> Self {
        Self {
            band_hz: (3.7e9, 3.8e9),
            mag_floor_db: -3.0,
            phase_center_deg: 180.0,
            phase_tol_deg: 20.0,
            n_grid: 101,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub band_hz: (f64, f64),
    pub min_magnitude_db_off: f64,
    pub min_magnitude_db_on: f64,
    /// Phase difference folded onto the window center, (min, max).
    pub phase_diff_range_deg: (f64, f64),
    pub pass: bool,
}
