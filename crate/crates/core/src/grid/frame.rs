use num_complex::Complex64;
use rand::Rng;
use std::f64::consts::FRAC_1_SQRT_2;

use super::{GridConfig, OfdmModem, ResourceGrid, TimeSignal};
use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Seed of the reference QPSK pilot symbol shared by every UE and the gNB.
pub const PILOT_SEED: u64 = 0x0F0F_2024;

/// Layout of one uplink frame: a time-domain preamble, one pilot OFDM
/// symbol, then `payload_slot_count` slots of payload.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSpec {
    /// BPSK preamble chips, each +1 or -1.
    pub preamble: Vec<i8>,
    /// One QPSK pilot per occupied subcarrier.
    pub pilot_values: Vec<Complex64>,
    pub payload_slot_count: usize,
    /// Amplitude applied to the preamble chips and the pilot symbol.
    pub reference_amplitude: f64,
}

impl FrameSpec {
    pub fn new(preamble: Vec<i8>, pilot_values: Vec<Complex64>, payload_slot_count: usize) -> Result<Self> {
        let spec = Self {
            preamble,
            pilot_values,
            payload_slot_count,
            reference_amplitude: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.preamble.is_empty() {
            return Err(Error::Config("preamble must be nonempty".into()));
        }
        if self.preamble.iter().any(|&c| c != 1 && c != -1) {
            return Err(Error::Config("preamble chips must be +1 or -1".into()));
        }
        if self.pilot_values.iter().any(|p| (p.norm() - 1.0).abs() > 1e-12) {
            return Err(Error::Config("pilot values must have unit modulus".into()));
        }
        if !(self.reference_amplitude.is_finite() && self.reference_amplitude > 0.0) {
            return Err(Error::Config("reference amplitude must be positive".into()));
        }
        Ok(())
    }

    pub fn layout(&self, cfg: &GridConfig) -> FrameLayout {
        FrameLayout {
            preamble_len: self.preamble.len(),
            symbol_len: cfg.symbol_len(),
            ofdm_symbols: 1 + self.payload_slot_count * cfg.symbols_per_slot,
        }
    }
}

/// Deterministic unit-modulus QPSK pilot symbol, one value per subcarrier.
pub fn reference_pilots(subcarriers: usize) -> Vec<Complex64> {
    let mut rng = rng_from(PILOT_SEED);
    (0..subcarriers)
        .map(|_| {
            let b: u8 = rng.random_range(0..4);
            let re = if b & 1 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            let im = if b & 2 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            Complex64::new(re, im)
        })
        .collect()
}

/// Sample positions within a frame made of a preamble followed by
/// CP-prefixed OFDM symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLayout {
    pub preamble_len: usize,
    pub symbol_len: usize,
    pub ofdm_symbols: usize,
}

impl FrameLayout {
    pub fn total_len(&self) -> usize {
        self.preamble_len + self.ofdm_symbols * self.symbol_len
    }

    /// Start (CP included) of OFDM symbol `i`, relative to the frame start.
    pub fn symbol_start(&self, i: usize) -> usize {
        self.preamble_len + i * self.symbol_len
    }

    /// Start of payload slot `slot` for slots of `symbols_per_slot` symbols
    /// following a single pilot symbol.
    pub fn payload_start(&self, slot: usize, symbols_per_slot: usize) -> usize {
        self.symbol_start(1 + slot * symbols_per_slot)
    }
}

/// Builds the transmit frame: preamble chips, the pilot symbol, then each
/// payload slot.
pub fn assemble_frame(spec: &FrameSpec, payload: &[ResourceGrid], cfg: &GridConfig) -> Result<TimeSignal> {
    spec.validate()?;
    if payload.len() != spec.payload_slot_count {
        return Err(Error::Config(format!(
            "frame expects {} payload slots, got {}",
            spec.payload_slot_count,
            payload.len()
        )));
    }
    if spec.pilot_values.len() != cfg.subcarriers {
        return Err(crate::error::dim(cfg.subcarriers, spec.pilot_values.len()));
    }
    let modem = OfdmModem::new(cfg)?;
    let layout = spec.layout(cfg);
    let amp = spec.reference_amplitude;
    let mut samples = Vec::with_capacity(layout.total_len());
    samples.extend(spec.preamble.iter().map(|&c| Complex64::new(c as f64 * amp, 0.0)));
    let pilot = ResourceGrid::from_row(spec.pilot_values.iter().map(|p| p * amp).collect());
    samples.extend(modem.modulate(&pilot)?);
    for grid in payload {
        grid.check_config(cfg)?;
        samples.extend(modem.modulate(grid)?);
    }
    Ok(TimeSignal::new(samples, cfg.sample_rate()))
}

/// Result of a preamble search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    /// Lag of the largest correlation magnitude.
    pub offset: usize,
    /// Correlation at `offset` normalized by the preamble and window
    /// energies; always within [0, 1].
    pub peak_metric: f64,
}

/// Sliding correlation of `signal` against the BPSK `preamble`.
///
/// Returns the first lag maximizing `|sum_k s[l + k] p[k]|` together with
/// the normalized metric `|corr| / sqrt(L * window_energy)` at that lag.
pub fn detect_frame(signal: &TimeSignal, preamble: &[i8]) -> Result<Detection> {
    let s = &signal.samples;
    let l = preamble.len();
    if l == 0 {
        return Err(Error::Precondition("empty preamble".into()));
    }
    if s.len() < l {
        return Err(Error::Precondition(format!(
            "signal of {} samples is shorter than the {l}-chip preamble",
            s.len()
        )));
    }
    let chips: Vec<f64> = preamble.iter().map(|&c| c as f64).collect();
    let mut best = (0usize, -1.0f64, Complex64::new(0.0, 0.0));
    for lag in 0..=s.len() - l {
        let corr: Complex64 = s[lag..lag + l].iter().zip(&chips).map(|(x, &c)| x * c).sum();
        let mag = corr.norm_sqr();
        if mag > best.1 {
            best = (lag, mag, corr);
        }
    }
    let (offset, _, corr) = best;
    let window: f64 = s[offset..offset + l].iter().map(|z| z.norm_sqr()).sum();
    let peak_metric = if window > 0.0 {
        (corr.norm() / (l as f64 * window).sqrt()).min(1.0)
    } else {
        0.0
    };
    Ok(Detection { offset, peak_metric })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::gold_sequence;
    use crate::rng::complex_normal;

    fn spec(slots: usize) -> FrameSpec {
        FrameSpec::new(gold_sequence(7, 0, 127).unwrap(), reference_pilots(256), slots).unwrap()
    }

    #[test]
    fn pilots_are_unit_qpsk_and_fixed() {
        let p = reference_pilots(256);
        assert!(p.iter().all(|z| (z.norm() - 1.0).abs() < 1e-15));
        assert!(p
            .iter()
            .all(|z| z.re.abs() == FRAC_1_SQRT_2 && z.im.abs() == FRAC_1_SQRT_2));
        assert_eq!(p, reference_pilots(256));
    }

    #[test]
    fn empty_payload_is_preamble_plus_pilot() {
        let cfg = GridConfig::default();
        let f = assemble_frame(&spec(0), &[], &cfg).unwrap();
        assert_eq!(f.len(), 127 + 272);
        let sp = spec(0);
        for (z, &c) in f.samples.iter().zip(&sp.preamble) {
            assert_eq!(*z, Complex64::new(c as f64, 0.0));
        }
    }

    #[test]
    fn frame_length_arithmetic() {
        let cfg = GridConfig::default();
        let slots = vec![ResourceGrid::zeros(14, 256); 3];
        let f = assemble_frame(&spec(3), &slots, &cfg).unwrap();
        assert_eq!(f.len(), 127 + (1 + 14 * 3) * 272);
        assert_eq!(spec(3).layout(&cfg).total_len(), f.len());
        assert!(assemble_frame(&spec(2), &slots, &cfg).is_err());
    }

    #[test]
    fn detects_delayed_frame() {
        let cfg = GridConfig::default();
        let s = spec(0);
        let f = assemble_frame(&s, &[], &cfg).unwrap();
        let d0 = detect_frame(&f, &s.preamble).unwrap();
        assert_eq!(d0.offset, 0);
        assert!(d0.peak_metric > 0.99);
        for d in [1usize, 17, 300] {
            let det = detect_frame(&f.delayed(d), &s.preamble).unwrap();
            assert_eq!(det.offset, d);
        }
    }

    #[test]
    fn zero_signal_has_zero_metric() {
        let sig = TimeSignal::zeros(300, 1.0);
        let det = detect_frame(&sig, &[1, -1, 1]).unwrap();
        assert_eq!(det.peak_metric, 0.0);
        assert!(detect_frame(&TimeSignal::zeros(2, 1.0), &[1, -1, 1]).is_err());
    }

    #[test]
    fn noise_only_metric_is_low() {
        let mut rng = rng_from(11);
        let pre = gold_sequence(7, 0, 127).unwrap();
        let sig = TimeSignal::new((0..127 * 2).map(|_| complex_normal(&mut rng, 1.0)).collect(), 1.0);
        assert!(detect_frame(&sig, &pre).unwrap().peak_metric < 0.3);
    }
}
