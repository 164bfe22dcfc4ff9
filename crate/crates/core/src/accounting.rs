//! Slot, spectrum and energy accounting for analog versus digital uplinks.

use crate::codec::slot_plan;
use crate::error::{Error, Result};
use crate::grid::GridConfig;

/// Spectral efficiency of 256-QAM at code rate 0.92, in bits per RE.
pub const REFERENCE_SPECTRAL_EFFICIENCY: f64 = 7.4063;
/// Calibrated fixed per-round energy overhead, in per-slot-per-UE energies.
/// Solves `(c + 174) / (c + 20) = 4`.
pub const CALIBRATED_OVERHEAD: f64 = 94.0 / 3.0;
/// Spectrum gain quoted for 20 UEs; the uniform-profile formula gives 174.
pub const QUOTED_GAIN_AT_20: f64 = 140.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotFormat {
    pub symbols_per_slot: usize,
    pub subcarriers: usize,
    pub subcarrier_spacing: f64,
    pub slot_duration: f64,
}

impl Default for SlotFormat {
    fn default() -> Self {
        Self {
            symbols_per_slot: 14,
            subcarriers: 256,
            subcarrier_spacing: 15e3,
            slot_duration: 1e-3,
        }
    }
}

impl SlotFormat {
    /// Resource elements per slot, `K`.
    pub fn res_per_slot(&self) -> usize {
        self.symbols_per_slot * self.subcarriers
    }

    pub fn grid_config(&self) -> GridConfig {
        GridConfig {
            subcarriers: self.subcarriers,
            symbols_per_slot: self.symbols_per_slot,
            subcarrier_spacing: self.subcarrier_spacing,
            ..GridConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.symbols_per_slot == 0 || self.subcarriers == 0 {
            return Err(Error::Config("slot format counts must be positive".into()));
        }
        if !(self.slot_duration.is_finite() && self.slot_duration > 0.0) {
            return Err(Error::Config("slot duration must be positive".into()));
        }
        Ok(())
    }
}

/// Per-UE spectral efficiency `m_k` in bits per resource element.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralProfile {
    pub efficiencies: Vec<f64>,
}

impl SpectralProfile {
    pub fn uniform(m: f64, ues: usize) -> Self {
        Self {
            efficiencies: vec![m; ues],
        }
    }

    pub fn ues(&self) -> usize {
        self.efficiencies.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.efficiencies.is_empty() {
            return Err(Error::Config("spectral profile needs at least one UE".into()));
        }
        if self.efficiencies.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::Config("spectral efficiencies must be positive".into()));
        }
        Ok(())
    }
}

/// Unrounded slots one UE needs: `P * b / (m * K)`.
pub fn digital_slots_raw(p: usize, bits: u32, m: f64, fmt: &SlotFormat) -> f64 {
    (p as f64 * bits as f64) / (m * fmt.res_per_slot() as f64)
}

/// Total digital slots, rounded up per UE since slots are not shared.
pub fn digital_slots(p: usize, bits: u32, profile: &SpectralProfile, fmt: &SlotFormat) -> Result<usize> {
    profile.validate()?;
    fmt.validate()?;
    if p == 0 || bits == 0 {
        return Err(Error::Config("parameter count and bit width must be positive".into()));
    }
    Ok(profile
        .efficiencies
        .iter()
        .map(|&m| digital_slots_raw(p, bits, m, fmt).ceil() as usize)
        .sum())
}

/// Analog slots per round. Independent of the number of UEs.
pub fn ota_slots(p: usize, fmt: &SlotFormat) -> Result<usize> {
    fmt.validate()?;
    Ok(slot_plan(p, &fmt.grid_config())?.slots)
}

pub fn spectrum_gain(p: usize, bits: u32, profile: &SpectralProfile, fmt: &SlotFormat) -> Result<f64> {
    Ok(digital_slots(p, bits, profile, fmt)? as f64 / ota_slots(p, fmt)? as f64)
}

/// Transmit energy per round: a fixed overhead plus `M * slots` per-slot
/// energies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyModel {
    pub tx_power_dbm: f64,
    pub slot_duration: f64,
    /// In units of one UE's energy for one slot.
    pub fixed_overhead: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            tx_power_dbm: 20.0,
            slot_duration: 1e-3,
            fixed_overhead: CALIBRATED_OVERHEAD,
        }
    }
}

impl EnergyModel {
    pub fn validate(&self) -> Result<()> {
        if !self.tx_power_dbm.is_finite() {
            return Err(Error::Config("transmit power must be finite".into()));
        }
        if !(self.slot_duration.is_finite() && self.slot_duration > 0.0) {
            return Err(Error::Config("slot duration must be positive".into()));
        }
        if !(self.fixed_overhead.is_finite() && self.fixed_overhead >= 0.0) {
            return Err(Error::Config("fixed overhead must be nonnegative".into()));
        }
        Ok(())
    }

    /// Joules one UE spends in one slot.
    pub fn per_slot_energy(&self) -> f64 {
        crate::channel::dbm_to_w(self.tx_power_dbm) * self.slot_duration
    }

    pub fn energy(&self, ues: usize, slots_per_ue: usize) -> f64 {
        let e = self.per_slot_energy();
        e * self.fixed_overhead + (ues * slots_per_ue) as f64 * e
    }

    pub fn energy_gain(&self, ues: usize, digital_slots_per_ue: usize, ota_slots: usize) -> f64 {
        self.energy(ues, digital_slots_per_ue) / self.energy(ues, ota_slots)
    }
}
