//! Per-UE timing offsets under host-level synchronization, and the spread
//! of per-UE correlation peaks seen by the receiver.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{detect_frame, Detection, TimeSignal};
use crate::rng::{rng_from, standard_normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncMode {
    /// Host clocks disciplined to within `ptp_bound`.
    PtpOn,
    /// Free-running hosts; offsets spread over `off_spread` samples.
    PtpOff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffsetDistribution {
    Uniform,
    /// Gaussian centred on the middle of the support with standard
    /// deviation a quarter of its width, redrawn until it lands inside.
    TruncatedGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncConfig {
    pub mode: SyncMode,
    /// Seconds.
    pub ptp_bound: f64,
    /// Samples.
    pub off_spread: usize,
    pub distribution: OffsetDistribution,
    /// Largest static per-UE carrier phase offset in radians, drawn
    /// uniformly in `[-max, max]`. Zero disables it.
    pub max_phase_offset: f64,
    pub seed: u64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            mode: SyncMode::PtpOn,
            ptp_bound: 1e-6,
            off_spread: 0,
            distribution: OffsetDistribution::Uniform,
            max_phase_offset: 0.0,
            seed: 0,
        }
    }
}

impl SyncConfig {
    pub fn ptp_off(off_spread: usize) -> Self {
        Self {
            mode: SyncMode::PtpOff,
            off_spread,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ptp_bound.is_finite() && self.ptp_bound > 0.0) {
            return Err(Error::Config("ptp bound must be positive".into()));
        }
        if !(self.max_phase_offset.is_finite() && self.max_phase_offset >= 0.0) {
            return Err(Error::Config("phase offset bound must be nonnegative".into()));
        }
        Ok(())
    }

    /// Largest offset in samples this configuration can produce.
    pub fn max_offset(&self, sample_rate: f64) -> usize {
        match self.mode {
            SyncMode::PtpOn => (self.ptp_bound * sample_rate - 1e-9).ceil().max(0.0) as usize,
            SyncMode::PtpOff => self.off_spread,
        }
    }
}

/// One nonnegative sample delay per UE.
pub fn draw_offsets(cfg: &SyncConfig, ues: usize, sample_rate: f64) -> Vec<usize> {
    let hi = cfg.max_offset(sample_rate);
    let mut rng = rng_from(cfg.seed);
    (0..ues)
        .map(|_| match cfg.distribution {
            OffsetDistribution::Uniform => rng.random_range(0..=hi),
            OffsetDistribution::TruncatedGaussian => {
                let mid = hi as f64 / 2.0;
                let sd = (hi as f64 / 4.0).max(f64::MIN_POSITIVE);
                loop {
                    let v = (mid + sd * standard_normal(&mut rng)).round();
                    if (0.0..=hi as f64).contains(&v) {
                        break v as usize;
                    }
                }
            }
        })
        .collect()
}

/// Static per-UE phase offsets in radians.
pub fn draw_phase_offsets(cfg: &SyncConfig, ues: usize) -> Vec<f64> {
    let mut rng = rng_from(cfg.seed ^ 0x5A5A_5A5A);
    (0..ues)
        .map(|_| {
            if cfg.max_phase_offset == 0.0 {
                0.0
            } else {
                rng.random_range(-cfg.max_phase_offset..=cfg.max_phase_offset)
            }
        })
        .collect()
}

/// Correlation peak of each UE's preamble within `signal`, in UE order.
pub fn peak_spread(signal: &TimeSignal, preambles: &[Vec<i8>]) -> Result<Vec<(usize, Detection)>> {
    for (i, a) in preambles.iter().enumerate() {
        if preambles[..i].contains(a) {
            return Err(Error::Precondition("per-UE preambles must be distinct".into()));
        }
    }
    preambles
        .iter()
        .enumerate()
        .map(|(ue, p)| detect_frame(signal, p).map(|d| (ue, d)))
        .collect()
}

/// `max - min` of the detected offsets; zero for fewer than two UEs.
pub fn spread(peaks: &[(usize, Detection)]) -> usize {
    let offs = peaks.iter().map(|(_, d)| d.offset);
    match (offs.clone().min(), offs.max()) {
        (Some(lo), Some(hi)) => hi - lo,
        _ => 0,
    }
}
