//! Direct-summation reference implementations written against the closed-form
//! expressions only, using plain (re, im) arithmetic.

#![allow(dead_code, clippy::too_many_arguments)]

pub const C0: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cx {
    pub re: f64,
    pub im: f64,
}

impl Cx {
    pub fn polar(r: f64, rad: f64) -> Self {
        Self { re: r * rad.cos(), im: r * rad.sin() }
    }

    pub fn from_db_deg(mag_db: f64, phase_deg: f64) -> Self {
        Self::polar(10f64.powf(mag_db / 20.0), phase_deg * std::f64::consts::PI / 180.0)
    }

    pub fn mul(self, o: Cx) -> Cx {
        Cx { re: self.re * o.re - self.im * o.im, im: self.re * o.im + self.im * o.re }
    }

    pub fn add(self, o: Cx) -> Cx {
        Cx { re: self.re + o.re, im: self.im + o.im }
    }

    pub fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }
}

/// Element (r, c) of an R×C grid with pitch p, centered, row 0 on top.
pub fn element_xyz(r: usize, c: usize, rows: usize, cols: usize, p: f64) -> [f64; 3] {
    let x = (c as f64 - (cols as f64 - 1.0) / 2.0) * p;
    let y = ((rows as f64 - 1.0) / 2.0 - r as f64) * p;
    [x, y, 0.0]
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// `e^{-j 2π f d / c} / d`.
fn leg(freq: f64, d: f64) -> Cx {
    Cx::polar(1.0 / d, -2.0 * std::f64::consts::PI * freq * d / C0)
}

/// H = Σ leg(d_t) Γ leg(d_r), row-major over `bits`.
pub fn cascade(
    rows: usize,
    cols: usize,
    pitch: f64,
    bits: &[bool],
    gamma: [Cx; 2],
    tx: [f64; 3],
    rx: [f64; 3],
    freq: f64,
) -> Cx {
    let mut h = Cx { re: 0.0, im: 0.0 };
    for r in 0..rows {
        for c in 0..cols {
            let p = element_xyz(r, c, rows, cols, pitch);
            let g = gamma[bits[r * cols + c] as usize];
            h = h.add(leg(freq, dist(tx, p)).mul(g).mul(leg(freq, dist(rx, p))));
        }
    }
    h
}

/// |Σ leg(|tx−p|) Γ e^{+j k p·u(θ, φ)}| per θ.
pub fn far_field(
    rows: usize,
    cols: usize,
    pitch: f64,
    bits: &[bool],
    gamma: [Cx; 2],
    tx: [f64; 3],
    freq: f64,
    thetas: &[f64],
    phi_deg: f64,
) -> Vec<f64> {
    let k = 2.0 * std::f64::consts::PI * freq / C0;
    thetas
        .iter()
        .map(|&t| {
            let (t, ph) = (t.to_radians(), phi_deg.to_radians());
            let u = [t.sin() * ph.cos(), t.sin() * ph.sin(), t.cos()];
            let mut acc = Cx { re: 0.0, im: 0.0 };
            for r in 0..rows {
                for c in 0..cols {
                    let p = element_xyz(r, c, rows, cols, pitch);
                    let g = gamma[bits[r * cols + c] as usize];
                    let steer = Cx::polar(1.0, k * (p[0] * u[0] + p[1] * u[1] + p[2] * u[2]));
                    acc = acc.add(leg(freq, dist(tx, p)).mul(g).mul(steer));
                }
            }
            acc.abs()
        })
        .collect()
}

/// Uniform linear array factor along x for a plane wave from broadside:
/// |Σ_n Γ_n e^{+j k n p sinθ}|.
pub fn linear_array_factor(bits: &[bool], gamma: [Cx; 2], pitch: f64, freq: f64, theta_deg: f64) -> f64 {
    let k = 2.0 * std::f64::consts::PI * freq / C0;
    let s = theta_deg.to_radians().sin();
    bits.iter()
        .enumerate()
        .fold(Cx { re: 0.0, im: 0.0 }, |acc, (n, &b)| acc.add(gamma[b as usize].mul(Cx::polar(1.0, k * n as f64 * pitch * s))))
        .abs()
}

/// All 2^n bit strings in ascending lexicographic order.
pub fn all_bit_strings(n: usize) -> Vec<Vec<bool>> {
    (0u32..1 << n).map(|code| (0..n).map(|i| code & (1 << (n - 1 - i)) != 0).collect()).collect()
}

pub fn rel_err(a: (f64, f64), b: Cx) -> f64 {
    ((a.0 - b.re).powi(2) + (a.1 - b.im).powi(2)).sqrt() / b.abs()
}

/// CRC-16/CCITT-FALSE, table-free and byte-reflected-free reference.
pub fn crc16_ccitt_false(data: &[u8]) -> u16 {
    let mut crc: u32 = 0xFFFF;
    for &byte in data {
        for i in (0..8).rev() {
            let bit = ((byte >> i) & 1) as u32 ^ (crc >> 15);
            crc = (crc << 1) & 0xFFFF;
            if bit == 1 {
                crc ^= 0x1021;
            }
        }
    }
    crc as u16
}
