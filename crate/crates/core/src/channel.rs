//! Per-UE channel realizations, grid-domain application with AWGN, and
//! time-domain multi-UE superposition.

use num_complex::Complex64;

use crate::error::{dim, Error, Result};
use crate::grid::{FrameLayout, OfdmModem, ResourceGrid, TimeSignal};
use crate::rng::{complex_normal, rng_from};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    Ideal,
    FlatBlock,
    RayleighPerSubcarrier,
    PathlossFading,
}

impl ChannelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ChannelKind::Ideal => "ideal",
            ChannelKind::FlatBlock => "flat_block",
            ChannelKind::RayleighPerSubcarrier => "rayleigh",
            ChannelKind::PathlossFading => "pathloss_fading",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ideal" => Some(ChannelKind::Ideal),
            "flat_block" | "flat" => Some(ChannelKind::FlatBlock),
            "rayleigh" | "rayleigh_per_subcarrier" => Some(ChannelKind::RayleighPerSubcarrier),
            "pathloss_fading" | "pathloss" => Some(ChannelKind::PathlossFading),
            _ => None,
        }
    }
}

/// Statistical description of one UE's link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelModel {
    pub kind: ChannelKind,
    /// Log-distance exponent, used by `PathlossFading`.
    pub pathloss_exponent: f64,
    pub reference_distance: f64,
    pub carrier: f64,
    /// Fraction of power drawn fresh between the pilot pass and the payload
    /// pass, in [0, 1]. Zero means the payload sees the sounded channel.
    pub decorrelation: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            kind: ChannelKind::Ideal,
            pathloss_exponent: 3.0,
            reference_distance: 1.0,
            carrier: 3.5e9,
            decorrelation: 0.0,
        }
    }
}

impl ChannelModel {
    pub fn new(kind: ChannelKind) -> Self {
        Self {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == ChannelKind::PathlossFading {
            for (name, v) in [
                ("pathloss exponent", self.pathloss_exponent),
                ("reference distance", self.reference_distance),
                ("carrier", self.carrier),
            ] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Config(format!("{name} must be positive")));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.decorrelation) {
            return Err(Error::Config("decorrelation must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Linear power gain of the log-distance law, free space up to the
    /// reference distance.
    pub fn pathloss_gain(&self, distance: f64) -> f64 {
        let lambda = SPEED_OF_LIGHT / self.carrier;
        let d0 = self.reference_distance;
        let free_space = (lambda / (4.0 * std::f64::consts::PI * d0)).powi(2);
        free_space * (d0 / distance.max(d0)).powf(self.pathloss_exponent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub tx_power_dbm: f64,
    pub distance: f64,
    pub noise_psd_dbm_hz: f64,
    pub bandwidth: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        Self {
            tx_power_dbm: 20.0,
            distance: 20.0,
            noise_psd_dbm_hz: -174.0,
            bandwidth: 3.84e6,
        }
    }
}

impl LinkBudget {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.distance > 0.0) {
            return Err(Error::Config("bandwidth and distance must be positive".into()));
        }
        Ok(())
    }

    /// Thermal noise power over the band, in watts.
    pub fn noise_power_w(&self) -> f64 {
        10f64.powf((self.noise_psd_dbm_hz - 30.0) / 10.0) * self.bandwidth
    }
}

/// Converts dBm to watts.
pub fn dbm_to_w(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Per-subcarrier complex gains for one UE plus the receiver noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub gains: Vec<Complex64>,
    pub noise_variance: f64,
    pub ue_id: usize,
}

impl ChannelRealization {
    pub fn ideal(subcarriers: usize, ue_id: usize) -> Self {
        Self {
            gains: vec![Complex64::new(1.0, 0.0); subcarriers],
            noise_variance: 0.0,
            ue_id,
        }
    }

    /// Gain seen by a wideband time-domain waveform such as the preamble:
    /// RMS magnitude over the band with the phase of the mean gain.
    pub fn wideband_gain(&self) -> Complex64 {
        let n = self.gains.len() as f64;
        let rms = (self.gains.iter().map(|g| g.norm_sqr()).sum::<f64>() / n).sqrt();
        let mean: Complex64 = self.gains.iter().sum::<Complex64>() / n;
        if mean.norm() > 0.0 {
            mean / mean.norm() * rms
        } else {
            Complex64::new(rms, 0.0)
        }
    }

    pub fn mean_power(&self) -> f64 {
        self.gains.iter().map(|g| g.norm_sqr()).sum::<f64>() / self.gains.len() as f64
    }

    /// Mixes in an independent realization: `sqrt(1-k) H + sqrt(k) H'`.
    pub fn decorrelated(&self, fresh: &ChannelRealization, kappa: f64) -> Self {
        let (a, b) = ((1.0 - kappa).sqrt(), kappa.sqrt());
        Self {
            gains: self
                .gains
                .iter()
                .zip(&fresh.gains)
                .map(|(h, f)| h * a + f * b)
                .collect(),
            noise_variance: self.noise_variance,
            ue_id: self.ue_id,
        }
    }

    /// Multiplies every gain by `phase` (a unit phasor).
    pub fn rotated(&self, phase: Complex64) -> Self {
        Self {
            gains: self.gains.iter().map(|g| g * phase).collect(),
            ..self.clone()
        }
    }
}

/// Draws one block-fading realization of `subcarriers` gains.
pub fn realize_channel(
    model: &ChannelModel,
    budget: &LinkBudget,
    subcarriers: usize,
    ue_id: usize,
    seed: u64,
) -> Result<ChannelRealization> {
    model.validate()?;
    budget.validate()?;
    let mut rng = rng_from(seed);
    let noise_variance = budget.noise_power_w();
    let gains = match model.kind {
        ChannelKind::Ideal => return Ok(ChannelRealization::ideal(subcarriers, ue_id)),
        ChannelKind::FlatBlock => vec![complex_normal(&mut rng, 1.0); subcarriers],
        ChannelKind::RayleighPerSubcarrier => (0..subcarriers).map(|_| complex_normal(&mut rng, 1.0)).collect(),
        ChannelKind::PathlossFading => {
            let amp = model.pathloss_gain(budget.distance).sqrt();
            (0..subcarriers).map(|_| complex_normal(&mut rng, 1.0) * amp).collect()
        }
    };
    Ok(ChannelRealization {
        gains,
        noise_variance,
        ue_id,
    })
}

/// `Y = X * H + N`: the gain of subcarrier `n` multiplies column `n` of
/// every row, and CN(0, noise_variance) noise is added per element.
pub fn apply_channel(grid: &ResourceGrid, ch: &ChannelRealization, seed: u64) -> Result<ResourceGrid> {
    if grid.cols() != ch.gains.len() {
        return Err(dim(format!("{} columns", ch.gains.len()), grid.cols()));
    }
    let mut rng = rng_from(seed);
    let mut out = grid.clone();
    for r in 0..grid.rows() {
        for (y, h) in out.row_mut(r).iter_mut().zip(&ch.gains) {
            *y = *y * h + complex_normal(&mut rng, ch.noise_variance);
        }
    }
    Ok(out)
}

/// Sums delayed signals sample by sample and adds CN(0, noise_variance)
/// receiver noise. The output spans `max(len_i + delay_i)` samples.
pub fn superpose(signals: &[(&TimeSignal, usize)], noise_variance: f64, seed: u64) -> Result<TimeSignal> {
    let Some((first, _)) = signals.first() else {
        return Err(Error::Precondition("nothing to superpose".into()));
    };
    let rate = first.sample_rate;
    if signals.iter().any(|(s, _)| s.sample_rate != rate) {
        return Err(Error::Config("superposed signals must share a sample rate".into()));
    }
    let len = signals.iter().map(|(s, d)| s.len() + d).max().unwrap_or(0);
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    for (sig, delay) in signals {
        for (o, x) in out[*delay..].iter_mut().zip(&sig.samples) {
            *o += x;
        }
    }
    if noise_variance > 0.0 {
        let mut rng = rng_from(seed);
        for o in &mut out {
            *o += complex_normal(&mut rng, noise_variance);
        }
    }
    Ok(TimeSignal::new(out, rate))
}

/// Passes a transmitted frame through a block-fading channel without noise.
///
/// The preamble is scaled by the wideband gain; each OFDM symbol has its
/// subcarriers multiplied by the per-subcarrier gains (a circular-channel
/// model, valid while the delay spread fits in the cyclic prefix).
pub fn propagate_frame(
    tx: &TimeSignal,
    layout: &FrameLayout,
    ch: &ChannelRealization,
    modem: &OfdmModem,
) -> Result<TimeSignal> {
    if tx.len() != layout.total_len() {
        return Err(dim(layout.total_len(), tx.len()));
    }
    let h0 = ch.wideband_gain();
    let mut out: Vec<Complex64> = tx.samples[..layout.preamble_len].iter().map(|x| x * h0).collect();
    out.reserve(tx.len() - layout.preamble_len);
    let faded = ChannelRealization {
        noise_variance: 0.0,
        ..ch.clone()
    };
    for i in 0..layout.ofdm_symbols {
        let sym = modem.demodulate(&tx.samples, layout.symbol_start(i), 1)?;
        let rx = apply_channel(&sym, &faded, 0)?;
        out.extend(modem.modulate(&rx)?);
    }
    Ok(TimeSignal::new(out, tx.sample_rate))
}
