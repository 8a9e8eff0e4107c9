//! Element lattice, 1-bit codebook synthesis and the Tx → surface → Rx cascade.
//!
//! The surface lies in the `z = 0` plane with its normal along `+z`. Element
//! `(r, c)` of an `R × C` lattice sits at
//! `((c − (C−1)/2)·pitch, ((R−1)/2 − r)·pitch, 0)`, so row 0 is the top row and
//! the centroid is the origin. All sums over elements run in row-major order.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cell::{CellError, UnitCellModel};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Cartesian point in meters.
pub type Point = [f64; 3];

#[derive(Debug, Error, PartialEq)]
pub enum ArrayError {
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("config is {got_rows}x{got_cols}, geometry needs {rows}x{cols}")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("element {element} coincides with the {endpoint} position")]
    DegenerateGeometry { element: usize, endpoint: &'static str },
    #[error("invalid placement: {0}")]
    InvalidPlacement(String),
    #[error("invalid direction: {0}")]
    InvalidDirection(String),
    #[error("reference gain must be non-zero")]
    ZeroReference,
    #[error("empty grid")]
    EmptyGrid,
    #[error("malformed config hex: {0}")]
    Hex(String),
}

pub fn wavenumber(freq_hz: f64) -> f64 {
    2.0 * PI * freq_hz / SPEED_OF_LIGHT
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn distance(a: Point, b: Point) -> f64 {
    let d = sub(a, b);
    dot(d, d).sqrt()
}

/// Block size, tiling and pitch of a modular surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    /// Elements per block, vertically.
    pub block_rows: usize,
    /// Elements per block, horizontally.
    pub block_cols: usize,
    /// Blocks stacked vertically.
    pub tile_rows: usize,
    /// Blocks side by side.
    pub tile_cols: usize,
    pub pitch_m: f64,
}

impl ArrayGeometry {
    pub const DEFAULT_PITCH_M: f64 = 0.041;
    pub const BLOCK_SIDE: usize = 8;

    pub fn new(
        block_rows: usize,
        block_cols: usize,
        tile_rows: usize,
        tile_cols: usize,
        pitch_m: f64,
    ) -> Result<Self, ArrayError> {
        let g = Self { block_rows, block_cols, tile_rows, tile_cols, pitch_m };
        g.validate()?;
        Ok(g)
    }

    /// 8×8-element blocks at 41 mm pitch, tiled `tile_rows × tile_cols`.
    pub fn tiled(tile_rows: usize, tile_cols: usize) -> Self {
        Self {
            block_rows: Self::BLOCK_SIDE,
            block_cols: Self::BLOCK_SIDE,
            tile_rows,
            tile_cols,
            pitch_m: Self::DEFAULT_PITCH_M,
        }
    }

    pub fn validate(&self) -> Result<(), ArrayError> {
        if self.block_rows == 0 || self.block_cols == 0 || self.tile_rows == 0 || self.tile_cols == 0 {
            return Err(ArrayError::InvalidGeometry("all counts must be positive".into()));
        }
        if !(self.pitch_m > 0.0 && self.pitch_m.is_finite()) {
            return Err(ArrayError::InvalidGeometry(format!("pitch {} m", self.pitch_m)));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.block_rows * self.tile_rows
    }

    pub fn cols(&self) -> usize {
        self.block_cols * self.tile_cols
    }

    pub fn len(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block_count(&self) -> usize {
        self.tile_rows * self.tile_cols
    }

    pub fn position(&self, row: usize, col: usize) -> Point {
        let r = self.rows() as f64;
        let c = self.cols() as f64;
        [
            (col as f64 - (c - 1.0) / 2.0) * self.pitch_m,
            ((r - 1.0) / 2.0 - row as f64) * self.pitch_m,
            0.0,
        ]
    }

    pub fn element_positions(&self) -> Vec<Point> {
        let cols = self.cols();
        (0..self.len()).map(|i| self.position(i / cols, i % cols)).collect()
    }

    pub fn empty_config(&self) -> PhaseConfig {
        PhaseConfig::zeros(self.rows(), self.cols())
    }

    pub fn check_config(&self, config: &PhaseConfig) -> Result<(), ArrayError> {
        if config.rows() != self.rows() || config.cols() != self.cols() {
            return Err(ArrayError::DimensionMismatch {
                rows: self.rows(),
                cols: self.cols(),
                got_rows: config.rows(),
                got_cols: config.cols(),
            });
        }
        Ok(())
    }
}

/// Per-element PIN states, row-major. `true` means ON.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PhaseConfig {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl PhaseConfig {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, bits: vec![false; rows * cols] }
    }

    pub fn from_bits(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self, ArrayError> {
        if bits.len() != rows * cols {
            return Err(ArrayError::InvalidGeometry(format!(
                "{} bits for a {rows}x{cols} config",
                bits.len()
            )));
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.bits[row * self.cols + col] = on;
    }

    pub fn flip(&mut self, index: usize) {
        self.bits[index] = !self.bits[index];
    }

    pub fn complement(&self) -> Self {
        Self { rows: self.rows, cols: self.cols, bits: self.bits.iter().map(|b| !b).collect() }
    }

    pub fn count_on(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Row-major, MSB-first packing; the last byte is zero-padded.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, _) in self.bits.iter().enumerate().filter(|(_, b)| **b) {
            out[i / 8] |= 0x80 >> (i % 8);
        }
        out
    }

    pub fn from_bytes(rows: usize, cols: usize, bytes: &[u8]) -> Result<Self, ArrayError> {
        let n = rows * cols;
        if bytes.len() != n.div_ceil(8) {
            return Err(ArrayError::Hex(format!(
                "{} bytes for a {rows}x{cols} config (need {})",
                bytes.len(),
                n.div_ceil(8)
            )));
        }
        let bit = |i: usize| bytes[i / 8] & (0x80 >> (i % 8)) != 0;
        if (n..bytes.len() * 8).any(bit) {
            return Err(ArrayError::Hex("padding bits must be zero".into()));
        }
        Ok(Self { rows, cols, bits: (0..n).map(bit).collect() })
    }

    /// Lowercase hex of [`Self::to_bytes`].
    pub fn to_hex(&self) -> String {
        self.to_bytes().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Parses hex produced by [`Self::to_hex`]. Whitespace is ignored.
    pub fn from_hex(rows: usize, cols: usize, text: &str) -> Result<Self, ArrayError> {
        let digits: Vec<u8> = text.bytes().filter(|c| !c.is_ascii_whitespace()).collect();
        if !digits.len().is_multiple_of(2) {
            return Err(ArrayError::Hex("odd number of hex digits".into()));
        }
        let nibble = |c: u8| -> Result<u8, ArrayError> {
            (c as char)
                .to_digit(16)
                .map(|d| d as u8)
                .ok_or_else(|| ArrayError::Hex(format!("bad hex digit {:?}", c as char)))
        };
        let bytes = digits
            .chunks(2)
            .map(|p| Ok(nibble(p[0])? << 4 | nibble(p[1])?))
            .collect::<Result<Vec<u8>, ArrayError>>()?;
        Self::from_bytes(rows, cols, &bytes)
    }
}

impl fmt::Display for PhaseConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.rows {
            for c in 0..self.cols {
                f.write_str(if self.get(r, c) { "1" } else { "0" })?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Tx and Rx antenna positions in the surface frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub tx_pos: Point,
    pub rx_pos: Point,
}

impl Placement {
    pub fn new(tx_pos: Point, rx_pos: Point) -> Result<Self, ArrayError> {
        let p = Self { tx_pos, rx_pos };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ArrayError> {
        for (name, p) in [("tx", self.tx_pos), ("rx", self.rx_pos)] {
            if !(p[2] > 0.0) || p.iter().any(|v| !v.is_finite()) {
                return Err(ArrayError::InvalidPlacement(format!(
                    "{name} at {p:?} is not in front of the surface"
                )));
            }
        }
        Ok(())
    }

    pub fn swapped(&self) -> Self {
        Self { tx_pos: self.rx_pos, rx_pos: self.tx_pos }
    }
}

/// Point at `range_m` along `direction` from the surface center.
pub fn point_at(direction: Direction, range_m: f64) -> Point {
    let u = direction.unit();
    [u[0] * range_m, u[1] * range_m, u[2] * range_m]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    /// Polar angle from the surface normal, [0, 90).
    pub theta_deg: f64,
    /// Azimuth, [0, 360).
    pub phi_deg: f64,
}

impl Direction {
    pub fn new(theta_deg: f64, phi_deg: f64) -> Result<Self, ArrayError> {
        if !(0.0..90.0).contains(&theta_deg) {
            return Err(ArrayError::InvalidDirection(format!("theta {theta_deg} not in [0, 90)")));
        }
        if !(0.0..360.0).contains(&phi_deg) {
            return Err(ArrayError::InvalidDirection(format!("phi {phi_deg} not in [0, 360)")));
        }
        Ok(Self { theta_deg, phi_deg })
    }

    pub fn unit(&self) -> Point {
        unit_vector(self.theta_deg, self.phi_deg)
    }
}

/// `(sinθ cosφ, sinθ sinφ, cosθ)`; negative θ is accepted and mirrors through the normal.
pub fn unit_vector(theta_deg: f64, phi_deg: f64) -> Point {
    let (st, ct) = theta_deg.to_radians().sin_cos();
    let (sp, cp) = phi_deg.to_radians().sin_cos();
    [st * cp, st * sp, ct]
}

/// Continuous per-element phases in degrees, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMap {
    pub rows: usize,
    pub cols: usize,
    pub deg: Vec<f64>,
}

impl PhaseMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.deg[row * self.cols + col]
    }
}

/// Reflection phase that makes every element's contribution arrive in phase
/// along `target`, for a spherical feed at `tx_pos`. Wrapped into [0, 360).
pub fn ideal_element_phase_deg(geom: &ArrayGeometry, tx_pos: Point, target: Direction, freq_hz: f64) -> PhaseMap {
    let k = wavenumber(freq_hz);
    let u = target.unit();
    let deg = geom
        .element_positions()
        .into_iter()
        .map(|p| (k * (distance(tx_pos, p) - dot(p, u))).to_degrees().rem_euclid(360.0))
        .collect();
    PhaseMap { rows: geom.rows(), cols: geom.cols(), deg }
}

/// Picks, per element, the state whose reflection projects most strongly onto
/// the ideal phasor. Ties go to OFF.
pub fn quantize_codebook(ideal: &PhaseMap, model: &UnitCellModel, freq_hz: f64) -> Result<PhaseConfig, ArrayError> {
    let [off, on] = model.reflection_pair(freq_hz)?;
    let score = |g: Complex64, target_deg: f64| g.norm() * (g.arg() - target_deg.to_radians()).cos();
    let bits = ideal.deg.iter().map(|&phi| score(on, phi) > score(off, phi)).collect();
    PhaseConfig::from_bits(ideal.rows, ideal.cols, bits)
}

/// Codebook steering the feed at `tx_pos` toward `target`.
pub fn steering_codebook(
    geom: &ArrayGeometry,
    model: &UnitCellModel,
    tx_pos: Point,
    target: Direction,
    freq_hz: f64,
) -> Result<PhaseConfig, ArrayError> {
    quantize_codebook(&ideal_element_phase_deg(geom, tx_pos, target, freq_hz), model, freq_hz)
}

/// Optional `cos^q` element taper applied on both the incident and departing legs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ElementPattern {
    #[default]
    Isotropic,
    Cosine(f64),
}

impl ElementPattern {
    pub fn from_exponent(q: f64) -> Self {
        if q == 0.0 {
            ElementPattern::Isotropic
        } else {
            ElementPattern::Cosine(q)
        }
    }

    fn factor(self, cos_angle: f64) -> f64 {
        match self {
            ElementPattern::Isotropic => 1.0,
            ElementPattern::Cosine(q) => cos_angle.max(0.0).powf(q),
        }
    }
}

/// Spherical wave `e^{-jkd}/d` from `a` to `b`.
fn spherical(k: f64, d: f64) -> Complex64 {
    Complex64::from_polar(1.0 / d, -k * d)
}

/// `Σ_p e^{-jk d_t}/d_t · Γ_b(p) · e^{-jk d_r}/d_r`, no direct path.
pub fn channel_gain(
    geom: &ArrayGeometry,
    config: &PhaseConfig,
    model: &UnitCellModel,
    placement: &Placement,
    freq_hz: f64,
) -> Result<Complex64, ArrayError> {
    channel_gain_with(geom, config, model, placement, freq_hz, ElementPattern::Isotropic)
}

pub fn channel_gain_with(
    geom: &ArrayGeometry,
    config: &PhaseConfig,
    model: &UnitCellModel,
    placement: &Placement,
    freq_hz: f64,
    pattern: ElementPattern,
) -> Result<Complex64, ArrayError> {
    geom.check_config(config)?;
    let gammas = model.reflection_pair(freq_hz)?;
    let k = wavenumber(freq_hz);
    let mut sum = Complex64::new(0.0, 0.0);
    for (i, (p, &bit)) in geom.element_positions().into_iter().zip(config.bits()).enumerate() {
        let dt = distance(placement.tx_pos, p);
        let dr = distance(placement.rx_pos, p);
        if dt < 1e-12 {
            return Err(ArrayError::DegenerateGeometry { element: i, endpoint: "tx" });
        }
        if dr < 1e-12 {
            return Err(ArrayError::DegenerateGeometry { element: i, endpoint: "rx" });
        }
        let taper = pattern.factor(placement.tx_pos[2] / dt) * pattern.factor(placement.rx_pos[2] / dr);
        sum += spherical(k, dt) * gammas[bit as usize] * spherical(k, dr) * taper;
    }
    Ok(sum)
}

/// Direct Tx → Rx free-space term, used only as optional leakage.
pub fn direct_path(placement: &Placement, freq_hz: f64) -> Complex64 {
    spherical(wavenumber(freq_hz), distance(placement.tx_pos, placement.rx_pos))
}

/// `20·log10(|gain| / reference) + offset_db`.
pub fn received_power_db(gain: Complex64, reference: f64, offset_db: f64) -> Result<f64, ArrayError> {
    let reference = reference.abs();
    if !(reference > 0.0) {
        return Err(ArrayError::ZeroReference);
    }
    Ok(20.0 * (gain.norm() / reference).log10() + offset_db)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternPoint {
    pub theta_deg: f64,
    pub power_db: f64,
}

/// Unnormalized far-field amplitude toward each θ in the `phi_deg` cut.
pub fn pattern_amplitudes(
    geom: &ArrayGeometry,
    config: &PhaseConfig,
    model: &UnitCellModel,
    tx_pos: Point,
    freq_hz: f64,
    theta_grid: &[f64],
    phi_deg: f64,
) -> Result<Vec<f64>, ArrayError> {
    geom.check_config(config)?;
    if theta_grid.is_empty() {
        return Err(ArrayError::EmptyGrid);
    }
    let gammas = model.reflection_pair(freq_hz)?;
    let k = wavenumber(freq_hz);
    let positions = geom.element_positions();
    let mut illum = Vec::with_capacity(positions.len());
    for (i, (p, &bit)) in positions.iter().zip(config.bits()).enumerate() {
        let dt = distance(tx_pos, *p);
        if dt < 1e-12 {
            return Err(ArrayError::DegenerateGeometry { element: i, endpoint: "tx" });
        }
        illum.push(spherical(k, dt) * gammas[bit as usize]);
    }
    Ok(theta_grid
        .iter()
        .map(|&theta| {
            let u = unit_vector(theta, phi_deg);
            positions
                .iter()
                .zip(&illum)
                .fold(Complex64::new(0.0, 0.0), |acc, (p, a)| {
                    acc + a * Complex64::from_polar(1.0, k * dot(*p, u))
                })
                .norm()
        })
        .collect())
}

/// Far-field pattern in dB, normalized to a 0 dB peak over the grid.
pub fn radiation_pattern(
    geom: &ArrayGeometry,
    config: &PhaseConfig,
    model: &UnitCellModel,
    tx_pos: Point,
    freq_hz: f64,
    theta_grid: &[f64],
    phi_deg: f64,
) -> Result<Vec<PatternPoint>, ArrayError> {
    let amps = pattern_amplitudes(geom, config, model, tx_pos, freq_hz, theta_grid, phi_deg)?;
    let peak = amps.iter().cloned().fold(0.0, f64::max);
    Ok(theta_grid
        .iter()
        .zip(amps)
        .map(|(&theta_deg, a)| PatternPoint { theta_deg, power_db: 20.0 * (a / peak).log10() })
        .collect())
}

/// θ of the first grid point holding the maximum.
pub fn peak_theta(pattern: &[PatternPoint]) -> Option<f64> {
    pattern
        .iter()
        .fold(None::<&PatternPoint>, |best, p| match best {
            Some(b) if b.power_db >= p.power_db => Some(b),
            _ => Some(p),
        })
        .map(|p| p.theta_deg)
}

/// `n` evenly spaced values from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n)
            .map(|i| if i + 1 == n { stop } else { start + (stop - start) * i as f64 / (n - 1) as f64 })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub freq_hz: f64,
    pub gain_db_config: f64,
    pub gain_db_base: f64,
}

impl SweepRow {
    pub fn delta_db(&self) -> f64 {
        self.gain_db_config - self.gain_db_base
    }
}

/// Received power of two configs over a frequency grid, against one shared reference.
#[allow(clippy::too_many_arguments)]
pub fn frequency_sweep(
    geom: &ArrayGeometry,
    config: &PhaseConfig,
    base: &PhaseConfig,
    model: &UnitCellModel,
    placement: &Placement,
    f_grid: &[f64],
    reference: f64,
    offset_db: f64,
) -> Result<Vec<SweepRow>, ArrayError> {
    f_grid
        .iter()
        .map(|&f| {
            let a = channel_gain(geom, config, model, placement, f)?;
            let b = channel_gain(geom, base, model, placement, f)?;
            Ok(SweepRow {
                freq_hz: f,
                gain_db_config: received_power_db(a, reference, offset_db)?,
                gain_db_base: received_power_db(b, reference, offset_db)?,
            })
        })
        .collect()
}

/// Mean of `delta_db` over rows with `lo <= f <= hi`.
pub fn mean_delta_db(rows: &[SweepRow], lo_hz: f64, hi_hz: f64) -> Option<f64> {
    let d: Vec<f64> = rows
        .iter()
        .filter(|r| r.freq_hz >= lo_hz && r.freq_hz <= hi_hz)
        .map(SweepRow::delta_db)
        .collect();
    (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
}
