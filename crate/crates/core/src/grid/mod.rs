//! OFDM resource grids, Gold-sequence preambles, frame assembly and
//! correlation-based frame detection.

mod frame;
mod gold;
mod ofdm;

pub use frame::{assemble_frame, detect_frame, reference_pilots, Detection, FrameLayout, FrameSpec, PILOT_SEED};
pub use gold::{gold_sequence, gold_threshold, m_sequence};
pub use ofdm::{ofdm_demodulate, ofdm_modulate, OfdmModem};

use crate::error::{dim, Error, Result};
use num_complex::Complex64;

/// Numerology of the uplink resource grid.
///
/// The sample rate is `fft_size * subcarrier_spacing`; with the defaults
/// (256 bins at 15 kHz) that is 3.84 MS/s and one OFDM symbol is
/// `(256 + 16) / 3.84e6` seconds long.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub subcarriers: usize,
    pub symbols_per_slot: usize,
    pub subcarrier_spacing: f64,
    pub fft_size: usize,
    pub cp_len: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            subcarriers: 256,
            symbols_per_slot: 14,
            subcarrier_spacing: 15e3,
            fft_size: 256,
            cp_len: 16,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subcarriers == 0 || self.symbols_per_slot == 0 || self.fft_size == 0 {
            return Err(Error::Config("grid counts must be positive".into()));
        }
        if self.subcarriers > self.fft_size {
            return Err(Error::Config(format!(
                "{} subcarriers do not fit in a {}-point FFT",
                self.subcarriers, self.fft_size
            )));
        }
        if self.cp_len >= self.fft_size {
            return Err(Error::Config("cyclic prefix must be shorter than the FFT".into()));
        }
        if !(self.subcarrier_spacing.is_finite() && self.subcarrier_spacing > 0.0) {
            return Err(Error::Config("subcarrier spacing must be positive".into()));
        }
        Ok(())
    }

    pub fn sample_rate(&self) -> f64 {
        self.fft_size as f64 * self.subcarrier_spacing
    }

    /// Samples per OFDM symbol including the cyclic prefix.
    pub fn symbol_len(&self) -> usize {
        self.fft_size + self.cp_len
    }

    pub fn symbol_duration(&self) -> f64 {
        self.symbol_len() as f64 / self.sample_rate()
    }

    pub fn useful_symbol_duration(&self) -> f64 {
        1.0 / self.subcarrier_spacing
    }

    /// Resource elements in one slot (`T * N_sc`).
    pub fn res_per_slot(&self) -> usize {
        self.symbols_per_slot * self.subcarriers
    }

    /// FFT bin carrying occupied subcarrier `k`. Subcarriers are centred on
    /// DC: index `N_sc / 2` sits on bin 0.
    pub fn bin_of(&self, k: usize) -> usize {
        (k + self.fft_size - self.subcarriers / 2) % self.fft_size
    }

    /// Signed frequency index (in bins) of occupied subcarrier `k`.
    pub fn frequency_index(&self, k: usize) -> i64 {
        k as i64 - (self.subcarriers / 2) as i64
    }
}

/// Complex symbols-by-subcarriers matrix, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceGrid {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ResourceGrid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(dim(rows * cols, data.len()));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Precondition("grid entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    /// One-row grid.
    pub fn from_row(row: Vec<Complex64>) -> Self {
        Self {
            rows: 1,
            cols: row.len(),
            data: row,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [Complex64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn max_power(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * factor).collect(),
        }
    }

    pub fn check_config(&self, cfg: &GridConfig) -> Result<()> {
        if self.rows != cfg.symbols_per_slot || self.cols != cfg.subcarriers {
            return Err(dim(
                format!("{}x{} grid", cfg.symbols_per_slot, cfg.subcarriers),
                format!("{}x{}", self.rows, self.cols),
            ));
        }
        Ok(())
    }
}

/// Complex baseband samples at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
}

impl TimeSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64) -> Self {
        Self { samples, sample_rate }
    }

    pub fn zeros(len: usize, sample_rate: f64) -> Self {
        Self::new(vec![Complex64::new(0.0, 0.0); len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Prepends `n` zero samples.
    pub fn delayed(&self, n: usize) -> Self {
        let mut samples = vec![Complex64::new(0.0, 0.0); n];
        samples.extend_from_slice(&self.samples);
        Self::new(samples, self.sample_rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_numerology() {
        let cfg = GridConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.sample_rate(), 3.84e6);
        assert!((cfg.useful_symbol_duration() - 1.0 / 15e3).abs() < 1e-15);
        assert!((cfg.symbol_duration() - 272.0 / 3.84e6).abs() < 1e-15);
        assert_eq!(cfg.res_per_slot(), 3584);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = GridConfig {
            subcarriers: 300,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.subcarriers = 256;
        cfg.cp_len = 256;
        assert!(cfg.validate().is_err());
        cfg.cp_len = 16;
        cfg.symbols_per_slot = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn subcarrier_mapping_is_a_permutation_when_full() {
        let cfg = GridConfig::default();
        let mut seen = vec![false; cfg.fft_size];
        for k in 0..cfg.subcarriers {
            seen[cfg.bin_of(k)] = true;
        }
        assert!(seen.iter().all(|&s| s));
        assert_eq!(cfg.bin_of(128), 0);
    }

    #[test]
    fn grid_rejects_non_finite() {
        let bad = vec![Complex64::new(f64::NAN, 0.0)];
        assert!(ResourceGrid::from_vec(1, 1, bad).is_err());
        assert!(ResourceGrid::from_vec(2, 2, vec![Complex64::new(0.0, 0.0); 3]).is_err());
    }
}
