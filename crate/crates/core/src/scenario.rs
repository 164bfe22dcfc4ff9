//! Scenario files: a flat `key = value` text format with dotted section
//! keys, the experiment it describes, and the per-round trace table.
//!
//! ```text
//! # five UEs, Rayleigh fading, 20 dB
//! ues = 5
//! rounds = 50
//! modes = ota, digital_fp32
//! channel.kind = rayleigh
//! noise.model = snr
//! noise.snr_db = 20
//! ```
//!
//! Every key is optional except where noted in [`KEYS`]; omitted keys take
//! the library defaults. `#` starts a comment. Keys may appear once.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::accounting::EnergyModel;
use crate::channel::{ChannelKind, ChannelModel, LinkBudget};
use crate::error::{Error, Result};
use crate::fl::{init_params, BlobData, ModelParams, Optimizer, RegressionData, Task, TrainConfig};
use crate::grid::{gold_sequence, GridConfig};
use crate::ota::{
    run_experiment, AccountingConfig, ExperimentConfig, Mode, NoiseModel, OtaConfig, RoundTrace, ScaleMode,
};
use crate::precode::{FloorRule, PrecodeConfig};
use crate::rng::{derive_seed, stage};
use crate::sync::{OffsetDistribution, SyncConfig, SyncMode};

/// Version of the trace CSV layout, written in its first column.
pub const SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: &str = "schema_version,mode,round,agg_nmse_db,global_loss,mean_ue_loss,alpha,slots_used,cumulative_slots,energy_j,peak_spread,aborted";

/// Every recognised key. Task and optimizer keys apply only to the
/// matching `task.kind` and `train.optimizer`.
pub const KEYS: &[&str] = &[
    "ues",
    "rounds",
    "modes",
    "seed",
    "output",
    "task.kind",
    "task.features",
    "task.samples_per_ue",
    "task.heterogeneity",
    "task.noise_std",
    "task.hidden",
    "task.classes",
    "task.separation",
    "train.learning_rate",
    "train.batch_size",
    "train.local_epochs",
    "train.optimizer",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "grid.subcarriers",
    "grid.symbols_per_slot",
    "grid.subcarrier_spacing",
    "grid.fft_size",
    "grid.cp_len",
    "channel.kind",
    "channel.pathloss_exponent",
    "channel.reference_distance",
    "channel.carrier",
    "channel.decorrelation",
    "budget.tx_power_dbm",
    "budget.distance",
    "budget.noise_psd_dbm_hz",
    "budget.bandwidth",
    "noise.model",
    "noise.snr_db",
    "noise.pilot_snr_db",
    "sync.mode",
    "sync.ptp_bound",
    "sync.off_spread",
    "sync.distribution",
    "sync.max_phase_offset",
    "precode.peak_power",
    "precode.floor_rule",
    "precode.floor",
    "precode.margin",
    "ota.scale_mode",
    "ota.feedback_bits",
    "ota.detection_threshold",
    "ota.gold_degree",
    "accounting.params",
    "accounting.spectral_efficiency",
    "accounting.tx_power_dbm",
    "accounting.slot_duration",
    "accounting.fixed_overhead",
];

/// Synthetic data every UE trains on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TaskSpec {
    Regression(RegressionData),
    Blobs(BlobData),
}

impl TaskSpec {
    pub fn samples_per_ue(&self) -> usize {
        match self {
            TaskSpec::Regression(d) => d.samples_per_ue,
            TaskSpec::Blobs(d) => d.samples_per_ue,
        }
    }

    pub fn generate(&self, ues: usize, seed: u64) -> Result<Vec<Task>> {
        match self {
            TaskSpec::Regression(d) => d.generate(ues, seed),
            TaskSpec::Blobs(d) => d.generate(ues, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub ues: usize,
    pub rounds: usize,
    pub modes: Vec<Mode>,
    pub task: TaskSpec,
    pub output: Option<String>,
    /// Its `seed` is the master seed.
    pub experiment: ExperimentConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            ues: 5,
            rounds: 10,
            modes: vec![Mode::Ota, Mode::DigitalFp32],
            task: TaskSpec::Regression(RegressionData::with_params(101, 200)),
            output: None,
            experiment: ExperimentConfig::default(),
        }
    }
}

/// Error tied to a key, before a line number is known.
struct KeyError {
    key: &'static str,
    msg: String,
}

fn key_err(key: &'static str, msg: impl Into<String>) -> KeyError {
    KeyError { key, msg: msg.into() }
}

struct Fields {
    /// key -> (line, raw value)
    map: BTreeMap<String, (usize, String)>,
}

impl Fields {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {n}: expected `key = value`")));
            };
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::Config(format!("line {n}: unknown key `{k}`")));
            }
            if v.is_empty() {
                return Err(Error::Config(format!("line {n}: {k}: missing value")));
            }
            if let Some((first, _)) = map.insert(k.to_string(), (n, v.to_string())) {
                return Err(Error::Config(format!("line {n}: {k}: already set on line {first}")));
            }
        }
        Ok(Self { map })
    }

    fn line_of(&self, key: &str) -> Option<usize> {
        self.map.get(key).map(|(n, _)| *n)
    }

    fn anchor(&self, e: KeyError) -> Error {
        match self.line_of(e.key) {
            Some(n) => Error::Config(format!("line {n}: {}: {}", e.key, e.msg)),
            None => Error::Config(format!("{}: {}", e.key, e.msg)),
        }
    }

    fn raw(&mut self, key: &'static str) -> Option<String> {
        self.map.get(key).map(|(_, v)| v.clone())
    }

    fn get<T: FromStr>(&mut self, key: &'static str, default: T) -> std::result::Result<T, KeyError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| key_err(key, format!("cannot parse `{v}`"))),
        }
    }

    fn opt<T: FromStr>(&mut self, key: &'static str) -> std::result::Result<Option<T>, KeyError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| key_err(key, format!("cannot parse `{v}`"))),
        }
    }

    fn choice<T>(
        &mut self,
        key: &'static str,
        default: T,
        parse: impl Fn(&str) -> Option<T>,
    ) -> std::result::Result<T, KeyError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => parse(&v).ok_or_else(|| key_err(key, format!("unrecognised value `{v}`"))),
        }
    }

    /// Keys present in the file that the chosen variants do not read.
    fn reject(&self, key: &'static str, why: &str) -> std::result::Result<(), KeyError> {
        if self.map.contains_key(key) {
            return Err(key_err(key, format!("not used {why}")));
        }
        Ok(())
    }
}

fn parse_modes(v: &str) -> Option<Vec<Mode>> {
    v.split(',').map(|s| Mode::parse(s.trim())).collect()
}

fn sync_mode_name(m: SyncMode) -> &'static str {
    match m {
        SyncMode::PtpOn => "ptp_on",
        SyncMode::PtpOff => "ptp_off",
    }
}

impl Scenario {
    /// Parses and validates a scenario file.
    pub fn parse(text: &str) -> Result<Self> {
        let mut f = Fields::parse(text)?;
        let s = Self::from_fields(&mut f).map_err(|e| f.anchor(e))?;
        s.check().map_err(|e| f.anchor(e))?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|e| Error::Config(format!("{}: {}", e.key, e.msg)))
    }

    fn from_fields(f: &mut Fields) -> std::result::Result<Self, KeyError> {
        let d = Scenario::default();
        let ues = f.get("ues", d.ues)?;
        let rounds = f.get("rounds", d.rounds)?;
        let modes = f.choice("modes", d.modes.clone(), parse_modes)?;
        let seed = f.get("seed", d.experiment.seed)?;
        let output = f.opt("output")?;

        let kind = f.raw("task.kind").unwrap_or_else(|| "linear_regression".into());
        let task = match kind.as_str() {
            "linear_regression" => {
                let TaskSpec::Regression(r) = d.task else {
                    unreachable!()
                };
                for k in ["task.hidden", "task.classes", "task.separation"] {
                    f.reject(k, "by linear_regression")?;
                }
                TaskSpec::Regression(RegressionData {
                    features: f.get("task.features", r.features)?,
                    samples_per_ue: f.get("task.samples_per_ue", r.samples_per_ue)?,
                    heterogeneity: f.get("task.heterogeneity", r.heterogeneity)?,
                    noise_std: f.get("task.noise_std", r.noise_std)?,
                })
            }
            "mlp" => {
                f.reject("task.noise_std", "by mlp")?;
                TaskSpec::Blobs(BlobData {
                    features: f.get("task.features", 8)?,
                    classes: f.get("task.classes", 3)?,
                    hidden: f.get("task.hidden", 16)?,
                    samples_per_ue: f.get("task.samples_per_ue", 200)?,
                    separation: f.get("task.separation", 4.0)?,
                    heterogeneity: f.get("task.heterogeneity", 0.3)?,
                })
            }
            other => return Err(key_err("task.kind", format!("unrecognised value `{other}`"))),
        };

        let t = TrainConfig::default();
        let optimizer = match f.raw("train.optimizer").as_deref() {
            None | Some("sgd") => {
                for k in ["train.beta1", "train.beta2", "train.eps"] {
                    f.reject(k, "by sgd")?;
                }
                Optimizer::Sgd
            }
            Some("adam") => {
                let Optimizer::Adam { beta1, beta2, eps } = Optimizer::adam() else {
                    unreachable!()
                };
                Optimizer::Adam {
                    beta1: f.get("train.beta1", beta1)?,
                    beta2: f.get("train.beta2", beta2)?,
                    eps: f.get("train.eps", eps)?,
                }
            }
            Some(other) => return Err(key_err("train.optimizer", format!("unrecognised value `{other}`"))),
        };
        let train = TrainConfig {
            learning_rate: f.get("train.learning_rate", t.learning_rate)?,
            batch_size: f.get("train.batch_size", t.batch_size)?,
            local_epochs: f.get("train.local_epochs", t.local_epochs)?,
            optimizer,
            seed: 0,
        };

        let o = OtaConfig::default();
        let grid = GridConfig {
            subcarriers: f.get("grid.subcarriers", o.grid.subcarriers)?,
            symbols_per_slot: f.get("grid.symbols_per_slot", o.grid.symbols_per_slot)?,
            subcarrier_spacing: f.get("grid.subcarrier_spacing", o.grid.subcarrier_spacing)?,
            fft_size: f.get("grid.fft_size", o.grid.fft_size)?,
            cp_len: f.get("grid.cp_len", o.grid.cp_len)?,
        };
        let channel = ChannelModel {
            kind: f.choice("channel.kind", o.channel.kind, ChannelKind::parse)?,
            pathloss_exponent: f.get("channel.pathloss_exponent", o.channel.pathloss_exponent)?,
            reference_distance: f.get("channel.reference_distance", o.channel.reference_distance)?,
            carrier: f.get("channel.carrier", o.channel.carrier)?,
            decorrelation: f.get("channel.decorrelation", o.channel.decorrelation)?,
        };
        let budget = LinkBudget {
            tx_power_dbm: f.get("budget.tx_power_dbm", o.budget.tx_power_dbm)?,
            distance: f.get("budget.distance", o.budget.distance)?,
            noise_psd_dbm_hz: f.get("budget.noise_psd_dbm_hz", o.budget.noise_psd_dbm_hz)?,
            bandwidth: f.get("budget.bandwidth", o.budget.bandwidth)?,
        };
        let noise = match f.raw("noise.model").as_deref() {
            None | Some("off") => {
                f.reject("noise.snr_db", "without noise.model = snr")?;
                NoiseModel::Off
            }
            Some("snr") => match f.opt("noise.snr_db")? {
                Some(db) => NoiseModel::Snr { db },
                None => return Err(key_err("noise.snr_db", "required when noise.model = snr")),
            },
            Some("thermal") => {
                f.reject("noise.snr_db", "without noise.model = snr")?;
                NoiseModel::Thermal
            }
            Some(other) => return Err(key_err("noise.model", format!("unrecognised value `{other}`"))),
        };
        let sync = SyncConfig {
            mode: f.choice("sync.mode", o.sync.mode, |v| match v {
                "ptp_on" => Some(SyncMode::PtpOn),
                "ptp_off" => Some(SyncMode::PtpOff),
                _ => None,
            })?,
            ptp_bound: f.get("sync.ptp_bound", o.sync.ptp_bound)?,
            off_spread: f.get("sync.off_spread", o.sync.off_spread)?,
            distribution: f.choice("sync.distribution", o.sync.distribution, |v| match v {
                "uniform" => Some(OffsetDistribution::Uniform),
                "truncated_gaussian" => Some(OffsetDistribution::TruncatedGaussian),
                _ => None,
            })?,
            max_phase_offset: f.get("sync.max_phase_offset", o.sync.max_phase_offset)?,
            seed: 0,
        };
        let FloorRule::RelativeMedian(default_floor) = o.precode.floor else {
            unreachable!()
        };
        let floor = f.get("precode.floor", default_floor)?;
        let precode = PrecodeConfig {
            peak_power: f.get("precode.peak_power", o.precode.peak_power)?,
            floor: f.choice("precode.floor_rule", FloorRule::RelativeMedian(floor), |v| match v {
                "relative_median" => Some(FloorRule::RelativeMedian(floor)),
                "absolute" => Some(FloorRule::Absolute(floor)),
                _ => None,
            })?,
            margin: f.get("precode.margin", o.precode.margin)?,
        };
        let ota = OtaConfig {
            grid,
            channel,
            budget,
            noise,
            pilot_snr_db: f.opt("noise.pilot_snr_db")?,
            sync,
            precode,
            scale_mode: f.choice("ota.scale_mode", o.scale_mode, |v| match v {
                "common" => Some(ScaleMode::Common),
                "per_client" => Some(ScaleMode::PerClient),
                _ => None,
            })?,
            feedback_bits: f.opt("ota.feedback_bits")?,
            detection_threshold: f.get("ota.detection_threshold", o.detection_threshold)?,
            gold_degree: f.get("ota.gold_degree", o.gold_degree)?,
        };
        let a = AccountingConfig::default();
        let accounting = AccountingConfig {
            params_override: f.opt("accounting.params")?,
            spectral_efficiency: f.get("accounting.spectral_efficiency", a.spectral_efficiency)?,
            energy: EnergyModel {
                tx_power_dbm: f.get("accounting.tx_power_dbm", a.energy.tx_power_dbm)?,
                slot_duration: f.get("accounting.slot_duration", a.energy.slot_duration)?,
                fixed_overhead: f.get("accounting.fixed_overhead", a.energy.fixed_overhead)?,
            },
        };
        Ok(Scenario {
            ues,
            rounds,
            modes,
            task,
            output,
            experiment: ExperimentConfig {
                ota,
                train,
                accounting,
                seed,
                threads: None,
            },
        })
    }

    fn check(&self) -> std::result::Result<(), KeyError> {
        let wrap = |key: &'static str| move |e: Error| key_err(key, strip(e));
        if self.ues == 0 {
            return Err(key_err("ues", "must be at least 1"));
        }
        if self.rounds == 0 {
            return Err(key_err("rounds", "must be at least 1"));
        }
        if self.modes.is_empty() {
            return Err(key_err("modes", "needs at least one mode"));
        }
        for (i, m) in self.modes.iter().enumerate() {
            if self.modes[..i].contains(m) {
                return Err(key_err("modes", format!("{} listed twice", m.name())));
            }
        }
        match &self.task {
            TaskSpec::Regression(r) => {
                if r.features == 0 {
                    return Err(key_err("task.features", "must be at least 1"));
                }
                if !(r.heterogeneity >= 0.0 && r.noise_std >= 0.0) {
                    return Err(key_err(
                        "task.heterogeneity",
                        "heterogeneity and noise must be nonnegative",
                    ));
                }
            }
            TaskSpec::Blobs(b) => {
                if b.features == 0 || b.hidden == 0 {
                    return Err(key_err("task.features", "features and hidden units must be positive"));
                }
                if b.classes < 2 {
                    return Err(key_err("task.classes", "must be at least 2"));
                }
            }
        }
        let t = &self.experiment.train;
        if t.batch_size > self.task.samples_per_ue() {
            return Err(key_err(
                "train.batch_size",
                format!(
                    "{} exceeds task.samples_per_ue = {}",
                    t.batch_size,
                    self.task.samples_per_ue()
                ),
            ));
        }
        t.validate(self.task.samples_per_ue())
            .map_err(wrap("train.learning_rate"))?;
        let o = &self.experiment.ota;
        o.grid.validate().map_err(wrap("grid.subcarriers"))?;
        o.channel.validate().map_err(wrap("channel.kind"))?;
        o.budget.validate().map_err(wrap("budget.distance"))?;
        o.sync.validate().map_err(wrap("sync.mode"))?;
        o.precode.validate().map_err(wrap("precode.floor"))?;
        if gold_sequence(o.gold_degree, 0, 1).is_err() {
            return Err(key_err(
                "ota.gold_degree",
                format!("no Gold family of degree {}", o.gold_degree),
            ));
        }
        if let Some(b) = o.feedback_bits {
            if !(1..=30).contains(&b) {
                return Err(key_err("ota.feedback_bits", "must lie in 1..=30"));
            }
        }
        if self.modes.contains(&Mode::Ota) {
            o.validate(self.ues).map_err(wrap("ues"))?;
        }
        if self.experiment.accounting.params_override == Some(0) {
            return Err(key_err("accounting.params", "must be at least 1"));
        }
        if !(self.experiment.accounting.spectral_efficiency.is_finite()
            && self.experiment.accounting.spectral_efficiency > 0.0)
        {
            return Err(key_err("accounting.spectral_efficiency", "must be positive"));
        }
        self.experiment
            .accounting
            .energy
            .validate()
            .map_err(wrap("accounting.tx_power_dbm"))?;
        Ok(())
    }

    /// Writes the scenario back in file form. Parsing the result gives an
    /// equal scenario.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let e = &self.experiment;
        put("ues", &self.ues);
        put("rounds", &self.rounds);
        let modes: Vec<&str> = self.modes.iter().map(Mode::name).collect();
        put("modes", &modes.join(", "));
        put("seed", &e.seed);
        if let Some(o) = &self.output {
            put("output", o);
        }
        match &self.task {
            TaskSpec::Regression(r) => {
                put("task.kind", &"linear_regression");
                put("task.features", &r.features);
                put("task.samples_per_ue", &r.samples_per_ue);
                put("task.heterogeneity", &r.heterogeneity);
                put("task.noise_std", &r.noise_std);
            }
            TaskSpec::Blobs(b) => {
                put("task.kind", &"mlp");
                put("task.features", &b.features);
                put("task.samples_per_ue", &b.samples_per_ue);
                put("task.heterogeneity", &b.heterogeneity);
                put("task.hidden", &b.hidden);
                put("task.classes", &b.classes);
                put("task.separation", &b.separation);
            }
        }
        let t = &e.train;
        put("train.learning_rate", &t.learning_rate);
        put("train.batch_size", &t.batch_size);
        put("train.local_epochs", &t.local_epochs);
        match t.optimizer {
            Optimizer::Sgd => put("train.optimizer", &"sgd"),
            Optimizer::Adam { beta1, beta2, eps } => {
                put("train.optimizer", &"adam");
                put("train.beta1", &beta1);
                put("train.beta2", &beta2);
                put("train.eps", &eps);
            }
        }
        let o = &e.ota;
        put("grid.subcarriers", &o.grid.subcarriers);
        put("grid.symbols_per_slot", &o.grid.symbols_per_slot);
        put("grid.subcarrier_spacing", &o.grid.subcarrier_spacing);
        put("grid.fft_size", &o.grid.fft_size);
        put("grid.cp_len", &o.grid.cp_len);
        put("channel.kind", &o.channel.kind.name());
        put("channel.pathloss_exponent", &o.channel.pathloss_exponent);
        put("channel.reference_distance", &o.channel.reference_distance);
        put("channel.carrier", &o.channel.carrier);
        put("channel.decorrelation", &o.channel.decorrelation);
        put("budget.tx_power_dbm", &o.budget.tx_power_dbm);
        put("budget.distance", &o.budget.distance);
        put("budget.noise_psd_dbm_hz", &o.budget.noise_psd_dbm_hz);
        put("budget.bandwidth", &o.budget.bandwidth);
        match o.noise {
            NoiseModel::Off => put("noise.model", &"off"),
            NoiseModel::Thermal => put("noise.model", &"thermal"),
            NoiseModel::Snr { db } => {
                put("noise.model", &"snr");
                put("noise.snr_db", &db);
            }
        }
        if let Some(db) = o.pilot_snr_db {
            put("noise.pilot_snr_db", &db);
        }
        put("sync.mode", &sync_mode_name(o.sync.mode));
        put("sync.ptp_bound", &o.sync.ptp_bound);
        put("sync.off_spread", &o.sync.off_spread);
        let dist = match o.sync.distribution {
            OffsetDistribution::Uniform => "uniform",
            OffsetDistribution::TruncatedGaussian => "truncated_gaussian",
        };
        put("sync.distribution", &dist);
        put("sync.max_phase_offset", &o.sync.max_phase_offset);
        put("precode.peak_power", &o.precode.peak_power);
        let (rule, floor) = match o.precode.floor {
            FloorRule::RelativeMedian(v) => ("relative_median", v),
            FloorRule::Absolute(v) => ("absolute", v),
        };
        put("precode.floor_rule", &rule);
        put("precode.floor", &floor);
        put("precode.margin", &o.precode.margin);
        let scale = match o.scale_mode {
            ScaleMode::Common => "common",
            ScaleMode::PerClient => "per_client",
        };
        put("ota.scale_mode", &scale);
        if let Some(b) = o.feedback_bits {
            put("ota.feedback_bits", &b);
        }
        put("ota.detection_threshold", &o.detection_threshold);
        put("ota.gold_degree", &o.gold_degree);
        let a = &e.accounting;
        if let Some(p) = a.params_override {
            put("accounting.params", &p);
        }
        put("accounting.spectral_efficiency", &a.spectral_efficiency);
        put("accounting.tx_power_dbm", &a.energy.tx_power_dbm);
        put("accounting.slot_duration", &a.energy.slot_duration);
        put("accounting.fixed_overhead", &a.energy.fixed_overhead);
        s
    }

    /// Per-UE datasets and the shared initial model, both drawn from the
    /// master seed.
    pub fn build(&self) -> Result<(Vec<Task>, ModelParams)> {
        let seed = self.experiment.seed;
        let tasks = self.task.generate(self.ues, derive_seed(seed, &[stage::DATASET]))?;
        let init = init_params(&tasks[0], derive_seed(seed, &[stage::INIT]));
        Ok((tasks, init))
    }

    /// Runs every mode in order from the same data and initial model.
    pub fn run(&self) -> Result<Vec<(Mode, Vec<RoundTrace>)>> {
        self.validate()?;
        let (tasks, init) = self.build()?;
        self.modes
            .iter()
            .map(|&mode| {
                Ok((
                    mode,
                    run_experiment(&self.experiment, &tasks, &init, self.rounds, mode)?.traces,
                ))
            })
            .collect()
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) | Error::Bounds(m) | Error::Precondition(m) => m,
        other => other.to_string(),
    }
}

fn opt_cell<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Trace table for all modes, header first, LF line endings. Floats use
/// the shortest representation that parses back to the same value.
pub fn traces_to_csv(runs: &[(Mode, Vec<RoundTrace>)]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for (mode, traces) in runs {
        let mut cumulative = 0usize;
        for t in traces {
            cumulative += t.slots_used;
            let mean_ue = t.loss_per_ue.iter().sum::<f64>() / t.loss_per_ue.len().max(1) as f64;
            let _ = writeln!(
                s,
                "{SCHEMA_VERSION},{},{},{},{},{},{},{},{},{},{},{}",
                mode.name(),
                t.round,
                opt_cell(t.agg_nmse_db),
                t.global_loss,
                mean_ue,
                opt_cell(t.alpha),
                t.slots_used,
                cumulative,
                t.energy_j,
                opt_cell(t.peak_spread),
                t.aborted,
            );
        }
    }
    s
}

/// Run totals for one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSummary {
    pub mode: Mode,
    pub rounds: usize,
    pub aborted_rounds: usize,
    pub final_loss: f64,
    pub total_slots: usize,
    pub total_energy_j: f64,
    /// Over rounds that were not aborted; `None` for digital modes.
    pub mean_agg_nmse_db: Option<f64>,
}

pub fn summarize(mode: Mode, traces: &[RoundTrace]) -> ModeSummary {
    let nmse: Vec<f64> = traces.iter().filter_map(|t| t.agg_nmse_db).collect();
    ModeSummary {
        mode,
        rounds: traces.len(),
        aborted_rounds: traces.iter().filter(|t| t.aborted).count(),
        final_loss: traces.last().map_or(f64::NAN, |t| t.global_loss),
        total_slots: traces.iter().map(|t| t.slots_used).sum(),
        total_energy_j: traces.iter().map(|t| t.energy_j).sum(),
        mean_agg_nmse_db: match mode {
            Mode::Ota if !nmse.is_empty() => Some(nmse.iter().sum::<f64>() / nmse.len() as f64),
            _ => None,
        },
    }
}
