//! One over-the-air aggregation round, and multi-round experiments that
//! compare it with digital federated averaging.
//!
//! Round timeline:
//!
//! 1. Every UE trains locally and forms its delta.
//! 2. Control channel (error free): UEs report I/Q peaks, the gNB
//!    broadcasts the shared scale.
//! 3. Sounding frame: all UEs send their Gold preamble at once, then one
//!    pilot symbol each in turn. The gNB locks its timing to the strongest
//!    preamble and estimates every UE's channel from its pilot symbol.
//! 4. The gNB feeds the estimates back and broadcasts the common `alpha`.
//! 5. Payload frame: every UE sends `alpha * W_i / H_i` at the same time.
//!    The air sums the frames; the gNB divides by `M * alpha`.
//!
//! Timing: UE `i` starts both frames `d_i` samples late. The gNB opens its
//! FFT windows `cp_len / 2` samples ahead of the locked timing, so every UE
//! whose offset lies within half a cyclic prefix of the lock stays free of
//! inter-symbol interference. The resulting per-UE phase ramp is part of
//! the sounded channel and cancels in precoding.
//!
//! Noise: one receiver noise floor serves the whole round. Under
//! `NoiseModel::Snr` it is pinned to the payload the precoder aims for, so
//! full-power pilots see a much higher SNR than the payload does. The
//! sounding noise is added to each UE's received pilot symbol before the
//! timing offset acts, so the estimate is the ramped channel plus ramped
//! noise. The payload noise is drawn per resource
//! element in receiver coordinates, plus a time-domain draw over the
//! preamble search window for detection. Under the unitary DFT both have
//! the per-sample variance of white time-domain noise.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::accounting::{
    digital_slots, ota_slots, EnergyModel, SlotFormat, SpectralProfile, REFERENCE_SPECTRAL_EFFICIENCY,
};
use crate::channel::{
    apply_channel, propagate_frame, realize_channel, superpose, ChannelModel, ChannelRealization, LinkBudget,
};
use crate::codec::{encode, slot_plan, unmap_from_grids, IqScale, WeightVector};
use crate::csi::{estimate_from_pilot_symbol, nmse_real, quantize_feedback, ChannelEstimate};
use crate::error::{dim, Error, Result};
use crate::fl::{
    apply_global, compute_delta, local_train, mean_delta, pooled_loss, update_variance, ModelParams, RoundState, Task,
    TrainConfig,
};
use crate::grid::{
    assemble_frame, detect_frame, gold_sequence, reference_pilots, Detection, FrameLayout, FrameSpec, GridConfig,
    OfdmModem, ResourceGrid, TimeSignal,
};
use crate::precode::{channel_invert, compute_alpha, PrecodeConfig};
use crate::rng::{complex_normal, derive_seed, rng_from, stage};
use crate::sync::{draw_offsets, draw_phase_offsets, spread, SyncConfig};

/// Normalized correlation below which a frame counts as not detected.
pub const DEFAULT_DETECTION_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleMode {
    /// All UEs use the elementwise maximum of the reported peaks.
    Common,
    /// Each UE uses its own peaks; the gNB descales with their mean.
    PerClient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    Off,
    /// Target receive SNR of the aggregate payload, in dB. The noise floor
    /// is set against the mean power of the occupied resource elements of
    /// `alpha * sum W_i`, with `alpha` computed from the true channels, and
    /// the same floor applies to the sounding frame.
    Snr {
        db: f64,
    },
    /// Thermal noise from the link budget, in watts per sample.
    Thermal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Ota,
    DigitalFp32,
    DigitalInt8,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Ota => "ota",
            Mode::DigitalFp32 => "digital_fp32",
            Mode::DigitalInt8 => "digital_int8",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ota" => Some(Mode::Ota),
            "digital_fp32" => Some(Mode::DigitalFp32),
            "digital_int8" => Some(Mode::DigitalInt8),
            _ => None,
        }
    }

    /// Bits per parameter on a digital uplink.
    pub fn bits(&self) -> Option<u32> {
        match self {
            Mode::Ota => None,
            Mode::DigitalFp32 => Some(32),
            Mode::DigitalInt8 => Some(8),
        }
    }
}

/// Physical-layer settings of an aggregation round.
#[derive(Debug, Clone, PartialEq)]
pub struct OtaConfig {
    pub grid: GridConfig,
    pub channel: ChannelModel,
    pub budget: LinkBudget,
    pub noise: NoiseModel,
    /// Sets the sounding noise from this SNR against the mean received
    /// pilot power instead of sharing the payload noise floor.
    pub pilot_snr_db: Option<f64>,
    pub sync: SyncConfig,
    pub precode: PrecodeConfig,
    pub scale_mode: ScaleMode,
    /// Quantize fed-back channel estimates to this many bits per component.
    pub feedback_bits: Option<u32>,
    pub detection_threshold: f64,
    pub gold_degree: u32,
}

impl Default for OtaConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::default(),
            channel: ChannelModel::default(),
            budget: LinkBudget::default(),
            noise: NoiseModel::Off,
            pilot_snr_db: None,
            sync: SyncConfig::default(),
            precode: PrecodeConfig::default(),
            scale_mode: ScaleMode::Common,
            feedback_bits: None,
            detection_threshold: DEFAULT_DETECTION_THRESHOLD,
            gold_degree: 7,
        }
    }
}

impl OtaConfig {
    pub fn validate(&self, ues: usize) -> Result<()> {
        self.grid.validate()?;
        self.channel.validate()?;
        self.budget.validate()?;
        self.sync.validate()?;
        self.precode.validate()?;
        if ues == 0 {
            return Err(Error::Config("at least one UE is required".into()));
        }
        let period = (1usize << self.gold_degree.min(30)) - 1;
        if ues > period + 2 {
            return Err(Error::Config(format!(
                "{ues} UEs exceed the {} Gold sequences of degree {}",
                period + 2,
                self.gold_degree
            )));
        }
        if period < self.grid.cp_len {
            return Err(Error::Config("preamble must be longer than the cyclic prefix".into()));
        }
        if !(0.0..=1.0).contains(&self.detection_threshold) {
            return Err(Error::Config("detection threshold must lie in [0, 1]".into()));
        }
        if let NoiseModel::Snr { db } = self.noise {
            if !db.is_finite() {
                return Err(Error::Config("SNR must be finite".into()));
            }
        }
        Ok(())
    }

    fn preamble_len(&self) -> usize {
        (1usize << self.gold_degree) - 1
    }

    /// Samples the FFT window opens ahead of the locked timing.
    pub fn window_backoff(&self) -> usize {
        self.grid.cp_len / 2
    }

    /// Transmit amplitude of preamble chips and sounding pilots.
    pub fn reference_amplitude(&self) -> f64 {
        self.precode.margin * self.precode.peak_power.sqrt()
    }
}

/// Result of pushing a set of deltas through the air.
#[derive(Debug, Clone, PartialEq)]
pub struct AirOutcome {
    /// `None` when the round was aborted.
    pub avg_delta: Option<WeightVector>,
    /// NMSE of the recovered average against the exact mean, when both
    /// exist and the mean is nonzero.
    pub nmse_db: Option<f64>,
    pub alpha: f64,
    pub offsets: Vec<usize>,
    /// Locked timing, in samples from the nominal frame start.
    pub timing: usize,
    /// Spread of the per-UE preamble peaks in the sounding frame.
    pub peak_spread: usize,
    /// Best normalized preamble correlation of the payload frame.
    pub peak_metric: f64,
    /// Largest power of any transmitted resource element or preamble chip.
    pub max_tx_power: f64,
    pub slots: usize,
    pub abort_reason: Option<String>,
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn receiver_timing(region: &TimeSignal, preambles: &[Vec<i8>]) -> Result<(Vec<Detection>, usize)> {
    let dets: Vec<Detection> = preambles
        .iter()
        .map(|p| detect_frame(region, p))
        .collect::<Result<_>>()?;
    let best = dets
        .iter()
        .enumerate()
        .max_by(|a, b| {
            a.1.peak_metric
                .total_cmp(&b.1.peak_metric)
                .then(b.1.offset.cmp(&a.1.offset))
                .then(b.0.cmp(&a.0))
        })
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok((dets, best))
}

fn search_region(signal: &TimeSignal, len: usize) -> TimeSignal {
    TimeSignal::new(signal.samples[..len.min(signal.len())].to_vec(), signal.sample_rate)
}

/// Mean power over the occupied resource elements of `alpha * sum W_i`,
/// with `alpha` set from the true channels. This is the receive power the
/// precoder aims for and the reference for the noise floor.
fn reference_rx_power(
    payload: &[Vec<ResourceGrid>],
    channels: &[(ChannelRealization, ChannelRealization)],
    cfg: &OtaConfig,
    p: usize,
) -> Result<f64> {
    let g = &cfg.grid;
    let ones = vec![Complex64::new(1.0, 0.0); g.subcarriers];
    let precoded: Vec<Vec<ResourceGrid>> = payload
        .par_iter()
        .zip(channels)
        .enumerate()
        .map(|(i, (w, (h, _)))| {
            let est = estimate_from_pilot_symbol(&h.gains, &ones, g, i)?;
            channel_invert(w, &est, cfg.precode.floor.resolve(&est))
        })
        .collect::<Result<_>>()?;
    if precoded.iter().flatten().all(|gr| gr.max_power() == 0.0) {
        return Ok(0.0);
    }
    let alpha = compute_alpha(&precoded, cfg.precode.peak_power, cfg.precode.margin)?;
    let occupied = p.div_ceil(2);
    let per_slot = g.res_per_slot();
    let total: f64 = (0..occupied)
        .map(|k| {
            let (slot, re) = (k / per_slot, k % per_slot);
            let sum: Complex64 = payload.iter().map(|w| w[slot].as_slice()[re]).sum();
            (sum * alpha).norm_sqr()
        })
        .sum();
    Ok(total / occupied as f64)
}

/// Aggregates `deltas` over the air and returns the recovered average.
///
/// Index `i` of `deltas` is UE `i`; it uses Gold sequence `i` as preamble.
pub fn aggregate_over_air(deltas: &[WeightVector], cfg: &OtaConfig, seed: u64) -> Result<AirOutcome> {
    let m = deltas.len();
    cfg.validate(m)?;
    let p = deltas[0].len();
    if let Some(bad) = deltas.iter().find(|d| d.len() != p) {
        return Err(dim(p, bad.len()));
    }
    let g = cfg.grid;
    let modem = OfdmModem::new(&g)?;
    let plan = slot_plan(p, &g)?;
    let fs = g.sample_rate();
    let l = cfg.preamble_len();
    let backoff = cfg.window_backoff();
    let a = cfg.reference_amplitude();

    let peaks: Vec<IqScale> = deltas.iter().map(|d| IqScale::peaks(&d.0)).collect();
    let (scales, rx_scale) = match cfg.scale_mode {
        ScaleMode::Common => {
            let s = IqScale::common(&peaks);
            (vec![s; m], s)
        }
        ScaleMode::PerClient => {
            let s: Vec<IqScale> = peaks.iter().map(|p| p.guarded()).collect();
            let mean = IqScale {
                i: s.iter().map(|v| v.i).sum::<f64>() / m as f64,
                q: s.iter().map(|v| v.q).sum::<f64>() / m as f64,
            };
            (s, mean)
        }
    };

    let preambles: Vec<Vec<i8>> = (0..m)
        .map(|i| gold_sequence(cfg.gold_degree, i, l))
        .collect::<Result<_>>()?;
    let phases = draw_phase_offsets(
        &SyncConfig {
            seed: derive_seed(seed, &[stage::PHASE]),
            ..cfg.sync
        },
        m,
    );
    let channels: Vec<(ChannelRealization, ChannelRealization)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let h = realize_channel(
                &cfg.channel,
                &cfg.budget,
                g.subcarriers,
                i,
                derive_seed(seed, &[stage::CHANNEL, i as u64]),
            )?;
            let mut pay = h.clone();
            if cfg.channel.decorrelation > 0.0 {
                let fresh = realize_channel(
                    &cfg.channel,
                    &cfg.budget,
                    g.subcarriers,
                    i,
                    derive_seed(seed, &[stage::DECORRELATE, i as u64]),
                )?;
                pay = pay.decorrelated(&fresh, cfg.channel.decorrelation);
            }
            if phases[i] != 0.0 {
                pay = pay.rotated(Complex64::from_polar(1.0, phases[i]));
            }
            Ok((h, pay))
        })
        .collect::<Result<_>>()?;
    let sync = SyncConfig {
        seed: derive_seed(seed, &[stage::OFFSETS]),
        ..cfg.sync
    };
    let offsets = draw_offsets(&sync, m, fs);
    let search_len = l + sync.max_offset(fs) + g.cp_len;

    let payload: Vec<Vec<ResourceGrid>> = (0..m)
        .into_par_iter()
        .map(|i| encode(&deltas[i], scales[i], &g).map(|e| e.0))
        .collect::<Result<_>>()?;
    let noise_var = match cfg.noise {
        NoiseModel::Off => 0.0,
        NoiseModel::Thermal => cfg.budget.noise_power_w(),
        NoiseModel::Snr { db } => reference_rx_power(&payload, &channels, cfg, p)? / db_to_linear(db),
    };

    // Sounding.
    let pilots: Vec<Complex64> = reference_pilots(g.subcarriers).iter().map(|z| z * a).collect();
    let mean_gain = channels.iter().map(|(h, _)| h.mean_power()).sum::<f64>() / m as f64;
    let pilot_var = match (cfg.noise, cfg.pilot_snr_db) {
        (NoiseModel::Off, _) => 0.0,
        (_, Some(db)) => a * a * mean_gain / db_to_linear(db),
        (_, None) => noise_var,
    };
    let sounding: Vec<TimeSignal> = (0..m)
        .into_par_iter()
        .map(|i| {
            let h = &channels[i].0;
            let noisy = ChannelRealization {
                noise_variance: pilot_var,
                ..h.clone()
            };
            let rx = apply_channel(
                &ResourceGrid::from_row(pilots.clone()),
                &noisy,
                derive_seed(seed, &[stage::PILOT_NOISE, i as u64]),
            )?;
            let mut grid = ResourceGrid::zeros(m, g.subcarriers);
            grid.row_mut(i).copy_from_slice(rx.row(0));
            let h0 = h.wideband_gain();
            let mut samples: Vec<Complex64> = preambles[i].iter().map(|&c| h0 * (c as f64 * a)).collect();
            samples.extend(modem.modulate(&grid)?);
            Ok(TimeSignal::new(samples, fs))
        })
        .collect::<Result<_>>()?;
    let parts: Vec<(&TimeSignal, usize)> = sounding.iter().zip(&offsets).map(|(s, &d)| (s, d)).collect();
    let rx_sound = superpose(&parts, 0.0, 0)?;
    let (dets, best) = receiver_timing(&search_region(&rx_sound, search_len), &preambles)?;
    let timing = dets[best].offset;
    let peak_spread = spread(&dets.iter().cloned().enumerate().collect::<Vec<_>>());
    let mut outcome = AirOutcome {
        avg_delta: None,
        nmse_db: None,
        alpha: 0.0,
        offsets: offsets.clone(),
        timing,
        peak_spread,
        peak_metric: 0.0,
        max_tx_power: a * a,
        slots: plan.slots,
        abort_reason: None,
    };
    if dets[best].peak_metric < cfg.detection_threshold {
        outcome.abort_reason = Some(format!(
            "sounding preamble metric {:.3} below threshold {:.3}",
            dets[best].peak_metric, cfg.detection_threshold
        ));
        return Ok(outcome);
    }
    let rx_pilots = modem.demodulate(&rx_sound.samples, timing + l - backoff, m)?;
    let estimates: Vec<ChannelEstimate> = (0..m)
        .map(|i| {
            let est = estimate_from_pilot_symbol(rx_pilots.row(i), &pilots, &g, i)?;
            match cfg.feedback_bits {
                Some(b) => quantize_feedback(&est, b),
                None => Ok(est),
            }
        })
        .collect::<Result<_>>()?;

    // Precoding.
    let precoded: Vec<Vec<ResourceGrid>> = (0..m)
        .into_par_iter()
        .map(|i| channel_invert(&payload[i], &estimates[i], cfg.precode.floor.resolve(&estimates[i])))
        .collect::<Result<_>>()?;
    let all_zero = precoded.iter().flatten().all(|gr| gr.max_power() == 0.0);
    let alpha = if all_zero {
        a
    } else {
        compute_alpha(&precoded, cfg.precode.peak_power, cfg.precode.margin)?
    };
    outcome.alpha = alpha;

    // Payload.
    let spec0 = FrameSpec {
        preamble: preambles[0].clone(),
        pilot_values: reference_pilots(g.subcarriers),
        payload_slot_count: plan.slots,
        reference_amplitude: a,
    };
    let layout: FrameLayout = spec0.layout(&g);
    let frames: Vec<(TimeSignal, f64)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let tx_grids: Vec<ResourceGrid> = precoded[i]
                .iter()
                .map(|gr| gr.scaled(Complex64::new(alpha, 0.0)))
                .collect();
            let peak = tx_grids.iter().map(ResourceGrid::max_power).fold(a * a, f64::max);
            let spec = FrameSpec {
                preamble: preambles[i].clone(),
                ..spec0.clone()
            };
            let tx = assemble_frame(&spec, &tx_grids, &g)?;
            Ok((propagate_frame(&tx, &layout, &channels[i].1, &modem)?, peak))
        })
        .collect::<Result<_>>()?;
    outcome.max_tx_power = frames.iter().map(|f| f.1).fold(outcome.max_tx_power, f64::max);
    let parts: Vec<(&TimeSignal, usize)> = frames.iter().zip(&offsets).map(|(f, &d)| (&f.0, d)).collect();
    let rx_pay = superpose(&parts, 0.0, 0)?;
    let rows = plan.slots * g.symbols_per_slot;
    let start = timing + layout.payload_start(0, g.symbols_per_slot) - backoff;
    let mut y = modem.demodulate(&rx_pay.samples, start, rows)?;
    if noise_var > 0.0 {
        let mut rng = rng_from(derive_seed(seed, &[stage::UPLINK_NOISE, 1]));
        for z in y.as_mut_slice() {
            *z += complex_normal(&mut rng, noise_var);
        }
    }
    let mut region = search_region(&rx_pay, search_len);
    if noise_var > 0.0 {
        let mut rng = rng_from(derive_seed(seed, &[stage::UPLINK_NOISE, 0]));
        for z in &mut region.samples {
            *z += complex_normal(&mut rng, noise_var);
        }
    }
    let (pdets, pbest) = receiver_timing(&region, &preambles)?;
    outcome.peak_metric = pdets[pbest].peak_metric;
    if outcome.peak_metric < cfg.detection_threshold {
        outcome.abort_reason = Some(format!(
            "payload preamble metric {:.3} below threshold {:.3}",
            outcome.peak_metric, cfg.detection_threshold
        ));
        return Ok(outcome);
    }

    let norm = Complex64::new(1.0 / (m as f64 * alpha), 0.0);
    let per_slot = g.res_per_slot();
    let data = y.into_vec();
    let grids: Vec<ResourceGrid> = data
        .chunks(per_slot)
        .map(|c| ResourceGrid::from_vec(g.symbols_per_slot, g.subcarriers, c.iter().map(|z| z * norm).collect()))
        .collect::<Result<_>>()?;
    let avg = unmap_from_grids(&grids, &plan, rx_scale, &g)?;
    let exact = mean_delta(deltas)?;
    outcome.nmse_db = nmse_real(&avg.0, &exact.0).ok();
    outcome.avg_delta = Some(avg);
    Ok(outcome)
}

/// Symmetric per-vector 8-bit quantization with scale `max|x| / 127`.
pub fn quantize_int8(delta: &WeightVector) -> WeightVector {
    let peak = delta.0.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    if peak == 0.0 {
        return delta.clone();
    }
    let step = peak / 127.0;
    WeightVector(
        delta
            .0
            .iter()
            .map(|v| (v / step).round().clamp(-127.0, 127.0) * step)
            .collect(),
    )
}

/// Slot and energy bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccountingConfig {
    /// Parameter count charged for slots and energy; defaults to the
    /// trained model's size.
    pub params_override: Option<usize>,
    pub spectral_efficiency: f64,
    pub energy: EnergyModel,
}

impl Default for AccountingConfig {
    fn default() -> Self {
        Self {
            params_override: None,
            spectral_efficiency: REFERENCE_SPECTRAL_EFFICIENCY,
            energy: EnergyModel::default(),
        }
    }
}

impl AccountingConfig {
    fn slot_format(&self, grid: &GridConfig) -> SlotFormat {
        SlotFormat {
            symbols_per_slot: grid.symbols_per_slot,
            subcarriers: grid.subcarriers,
            subcarrier_spacing: grid.subcarrier_spacing,
            slot_duration: self.energy.slot_duration,
        }
    }

    /// Slots one round occupies and the energy it costs.
    pub fn charge(&self, mode: Mode, params: usize, ues: usize, grid: &GridConfig) -> Result<(usize, f64)> {
        let p = self.params_override.unwrap_or(params);
        let fmt = self.slot_format(grid);
        self.energy.validate()?;
        match mode.bits() {
            None => {
                let s = ota_slots(p, &fmt)?;
                Ok((s, self.energy.energy(ues, s)))
            }
            Some(bits) => {
                let profile = SpectralProfile::uniform(self.spectral_efficiency, ues);
                let total = digital_slots(p, bits, &profile, &fmt)?;
                Ok((total, self.energy.energy(ues, total / ues)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    pub ota: OtaConfig,
    /// Template; the seed is replaced per round and UE.
    pub train: TrainConfig,
    pub accounting: AccountingConfig,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

/// Diagnostics of one communication round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    pub round: usize,
    pub mode: Mode,
    pub agg_nmse_db: Option<f64>,
    /// Each UE's loss at the new global model.
    pub loss_per_ue: Vec<f64>,
    pub global_loss: f64,
    pub alpha: Option<f64>,
    pub slots_used: usize,
    pub energy_j: f64,
    pub peak_spread: Option<usize>,
    pub max_tx_power: Option<f64>,
    pub update_variance: f64,
    pub aborted: bool,
}

fn check_tasks(tasks: &[Task], global: &ModelParams) -> Result<()> {
    if tasks.is_empty() {
        return Err(Error::Config("at least one UE is required".into()));
    }
    for t in tasks {
        if t.param_count() != global.len() {
            return Err(dim(global.len(), t.param_count()));
        }
    }
    Ok(())
}

/// Every UE's update for this round, trained in parallel. UE `i` trains
/// on `tasks[i]`.
pub fn local_deltas(state: &RoundState, tasks: &[Task], exp: &ExperimentConfig) -> Result<Vec<WeightVector>> {
    check_tasks(tasks, &state.global)?;
    let r = state.round as u64;
    tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| {
            let cfg = TrainConfig {
                seed: derive_seed(exp.seed, &[stage::TRAIN, r, i as u64]),
                ..exp.train
            };
            compute_delta(&local_train(&state.global, task, &cfg)?, &state.global)
        })
        .collect()
}

/// One round in any mode. UE `i` trains on `tasks[i]`.
pub fn run_round(
    state: &RoundState,
    tasks: &[Task],
    exp: &ExperimentConfig,
    mode: Mode,
) -> Result<(ModelParams, RoundTrace)> {
    check_tasks(tasks, &state.global)?;
    if state.num_ues != tasks.len() {
        return Err(dim(state.num_ues, tasks.len()));
    }
    let r = state.round as u64;
    let deltas = local_deltas(state, tasks, exp)?;
    let variance = update_variance(&deltas)?;
    let exact = mean_delta(&deltas)?;
    let (avg, alpha, spread, max_tx, aborted) = match mode {
        Mode::Ota => {
            let out = aggregate_over_air(&deltas, &exp.ota, derive_seed(exp.seed, &[stage::DATA, r]))?;
            let aborted = out.avg_delta.is_none();
            (
                out.avg_delta,
                Some(out.alpha),
                Some(out.peak_spread),
                Some(out.max_tx_power),
                aborted,
            )
        }
        Mode::DigitalFp32 => (Some(exact.clone()), None, None, None, false),
        Mode::DigitalInt8 => {
            let q: Vec<WeightVector> = deltas.iter().map(quantize_int8).collect();
            (Some(mean_delta(&q)?), None, None, None, false)
        }
    };
    let agg_nmse_db = avg.as_ref().and_then(|a| nmse_real(&a.0, &exact.0).ok());
    let global = match &avg {
        Some(a) => apply_global(&state.global, a)?,
        None => state.global.clone(),
    };
    let loss_per_ue = tasks.iter().map(|t| t.loss(&global)).collect::<Result<Vec<_>>>()?;
    let (slots_used, energy_j) = exp
        .accounting
        .charge(mode, state.global.len(), tasks.len(), &exp.ota.grid)?;
    let trace = RoundTrace {
        round: state.round,
        mode,
        agg_nmse_db,
        global_loss: pooled_loss(tasks, &global)?,
        loss_per_ue,
        alpha,
        slots_used,
        energy_j,
        peak_spread: spread,
        max_tx_power: max_tx,
        update_variance: variance,
        aborted,
    };
    Ok((global, trace))
}

/// [`run_round`] in over-the-air mode.
pub fn run_ota_round(state: &RoundState, tasks: &[Task], exp: &ExperimentConfig) -> Result<(ModelParams, RoundTrace)> {
    run_round(state, tasks, exp, Mode::Ota)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub traces: Vec<RoundTrace>,
    pub global: ModelParams,
}

/// Runs in the configured thread pool, if any.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// `rounds` rounds starting from `init`; rounds are numbered from 1.
pub fn run_experiment(
    exp: &ExperimentConfig,
    tasks: &[Task],
    init: &ModelParams,
    rounds: usize,
    mode: Mode,
) -> Result<ExperimentResult> {
    if rounds == 0 {
        return Err(Error::Config("rounds must be at least 1".into()));
    }
    check_tasks(tasks, init)?;
    with_threads(exp.threads, || {
        let mut global = init.clone();
        let mut traces = Vec::with_capacity(rounds);
        for round in 1..=rounds {
            let state = RoundState {
                round,
                global,
                num_ues: tasks.len(),
            };
            let (next, trace) = run_round(&state, tasks, exp, mode)?;
            global = next;
            traces.push(trace);
        }
        Ok(ExperimentResult { traces, global })
    })?
}
