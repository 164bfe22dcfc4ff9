use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{GridConfig, ResourceGrid, TimeSignal};
use crate::error::{dim, Error, Result};

/// OFDM modulator/demodulator with cached FFT plans.
///
/// Both directions use the unitary DFT (a `1/sqrt(fft_size)` factor each
/// way), so a grid with energy `E` produces useful samples with energy `E`.
#[derive(Clone)]
pub struct OfdmModem {
    cfg: GridConfig,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    norm: f64,
}

impl std::fmt::Debug for OfdmModem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OfdmModem").field("cfg", &self.cfg).finish()
    }
}

impl OfdmModem {
    pub fn new(cfg: &GridConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            cfg: *cfg,
            forward: planner.plan_fft_forward(cfg.fft_size),
            inverse: planner.plan_fft_inverse(cfg.fft_size),
            norm: 1.0 / (cfg.fft_size as f64).sqrt(),
        })
    }

    pub fn config(&self) -> &GridConfig {
        &self.cfg
    }

    /// Modulates every row of `grid` into one CP-prefixed OFDM symbol.
    /// The grid may have any number of rows.
    pub fn modulate(&self, grid: &ResourceGrid) -> Result<Vec<Complex64>> {
        let cfg = &self.cfg;
        if grid.cols() != cfg.subcarriers {
            return Err(dim(format!("{} subcarriers", cfg.subcarriers), grid.cols()));
        }
        let n = cfg.fft_size;
        let mut out = Vec::with_capacity(grid.rows() * cfg.symbol_len());
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for r in 0..grid.rows() {
            buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            for (k, &x) in grid.row(r).iter().enumerate() {
                buf[cfg.bin_of(k)] = x;
            }
            self.inverse.process(&mut buf);
            buf.iter_mut().for_each(|z| *z *= self.norm);
            out.extend_from_slice(&buf[n - cfg.cp_len..]);
            out.extend_from_slice(&buf);
        }
        Ok(out)
    }

    /// Demodulates `rows` consecutive OFDM symbols, the first starting
    /// (CP included) at `start`.
    pub fn demodulate(&self, samples: &[Complex64], start: usize, rows: usize) -> Result<ResourceGrid> {
        let cfg = &self.cfg;
        let needed = rows * cfg.symbol_len();
        if start.checked_add(needed).is_none_or(|end| end > samples.len()) {
            return Err(Error::Bounds(format!(
                "{rows} symbols from sample {start} need {needed} samples, signal has {}",
                samples.len()
            )));
        }
        let n = cfg.fft_size;
        let mut grid = ResourceGrid::zeros(rows, cfg.subcarriers);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for r in 0..rows {
            let s = start + r * cfg.symbol_len() + cfg.cp_len;
            buf.copy_from_slice(&samples[s..s + n]);
            self.forward.process(&mut buf);
            let row = grid.row_mut(r);
            for (k, out) in row.iter_mut().enumerate() {
                *out = buf[cfg.bin_of(k)] * self.norm;
            }
        }
        Ok(grid)
    }
}

/// Modulates one slot grid (`T x N_sc`) into `T * (fft_size + cp_len)`
/// samples.
pub fn ofdm_modulate(grid: &ResourceGrid, cfg: &GridConfig) -> Result<TimeSignal> {
    grid.check_config(cfg)?;
    let modem = OfdmModem::new(cfg)?;
    Ok(TimeSignal::new(modem.modulate(grid)?, cfg.sample_rate()))
}

/// Recovers one slot grid from `signal`, the first symbol starting at
/// `start`.
pub fn ofdm_demodulate(signal: &TimeSignal, cfg: &GridConfig, start: usize) -> Result<ResourceGrid> {
    let modem = OfdmModem::new(cfg)?;
    modem.demodulate(&signal.samples, start, cfg.symbols_per_slot)
}
