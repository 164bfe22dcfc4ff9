//! `otafl`: run scenarios, print accounting tables and sweep timing
//! offsets.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid configuration, 3 every
//! over-the-air round aborted.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use otafl::accounting::{
    digital_slots, ota_slots, EnergyModel, SlotFormat, SpectralProfile, QUOTED_GAIN_AT_20,
    REFERENCE_SPECTRAL_EFFICIENCY,
};
use otafl::channel::ChannelKind;
use otafl::fl::RoundState;
use otafl::ota::{aggregate_over_air, local_deltas, with_threads, Mode, NoiseModel};
use otafl::rng::{derive_seed, stage};
use otafl::scenario::{summarize, traces_to_csv, ModeSummary, Scenario, SCHEMA_VERSION};
use otafl::sync::{SyncConfig, SyncMode};

#[derive(Parser)]
#[command(name = "otafl", version, about = "Over-the-air federated learning simulator")]
struct Cli {
    /// Master seed; overrides the scenario's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file. `run` writes its summary next to it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write the per-round trace CSV.
    Run { scenario: PathBuf },
    /// Slot, spectrum and energy table over a range of UE counts.
    Accounting {
        /// Inclusive range `A..B`.
        #[arg(long, default_value = "1..20")]
        m_range: String,
        #[arg(long, default_value_t = 71666)]
        params: usize,
        #[arg(long, default_value_t = 32)]
        bits: u32,
        /// Bits per resource element.
        #[arg(long, default_value_t = REFERENCE_SPECTRAL_EFFICIENCY)]
        efficiency: f64,
        /// Add the energy-gain column.
        #[arg(long)]
        energy: bool,
    },
    /// Mean aggregation NMSE and peak spread per timing-offset spread.
    SyncSweep {
        /// Comma-separated spreads in samples; `ptp` means PTP on.
        #[arg(long, default_value = "ptp,0,4,16,64,256")]
        spreads: String,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Scenario supplying UEs, task, channel and noise. Without one the
        /// sweep uses five UEs, Rayleigh fading and 20 dB.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
}

enum Failure {
    Io(String),
    Config(String),
    AllAborted,
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::AllAborted => 3,
        }
    }
}

impl From<otafl::Error> for Failure {
    fn from(e: otafl::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn threads_from_env() -> Result<Option<usize>, Failure> {
    match std::env::var("OTAFL_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Failure::Config(format!(
                "OTAFL_THREADS: expected a positive integer, got `{v}`"
            ))),
        },
    }
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<Scenario, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut s = Scenario::parse(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = seed {
        s.experiment.seed = seed;
    }
    s.experiment.threads = threads_from_env()?;
    Ok(s)
}

fn write(path: Option<&Path>, text: &str) -> Outcome {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| io_err(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    schema_version: u32,
    scenario: String,
    seed: u64,
    ues: usize,
    params: usize,
    modes: Vec<ModeJson<'a>>,
}

#[derive(Serialize)]
struct ModeJson<'a> {
    mode: &'a str,
    rounds: usize,
    aborted_rounds: usize,
    final_loss: f64,
    total_slots: usize,
    total_energy_j: f64,
    mean_agg_nmse_db: Option<f64>,
}

impl<'a> From<&'a ModeSummary> for ModeJson<'a> {
    fn from(s: &'a ModeSummary) -> Self {
        Self {
            mode: s.mode.name(),
            rounds: s.rounds,
            aborted_rounds: s.aborted_rounds,
            final_loss: s.final_loss,
            total_slots: s.total_slots,
            total_energy_j: s.total_energy_j,
            mean_agg_nmse_db: s.mean_agg_nmse_db,
        }
    }
}

fn cmd_run(path: &Path, seed: Option<u64>, out: Option<&Path>) -> Outcome {
    let s = load_scenario(path, seed)?;
    let csv_path = out
        .map(Path::to_path_buf)
        .or_else(|| s.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| path.with_extension("csv"));
    let runs = s.run()?;
    let (_, init) = s.build()?;
    for (mode, traces) in &runs {
        for t in traces.iter().filter(|t| t.aborted) {
            eprintln!("{} round {}: aborted, global model unchanged", mode.name(), t.round);
        }
    }
    std::fs::write(&csv_path, traces_to_csv(&runs)).map_err(|e| io_err(&csv_path, e))?;
    let summaries: Vec<ModeSummary> = runs.iter().map(|(m, t)| summarize(*m, t)).collect();
    let doc = Summary {
        schema_version: SCHEMA_VERSION,
        scenario: path.display().to_string(),
        seed: s.experiment.seed,
        ues: s.ues,
        params: init.len(),
        modes: summaries.iter().map(ModeJson::from).collect(),
    };
    let summary_path = csv_path.with_extension("summary.json");
    let json = serde_json::to_string_pretty(&doc).map_err(|e| Failure::Io(e.to_string()))? + "\n";
    std::fs::write(&summary_path, json).map_err(|e| io_err(&summary_path, e))?;
    let ota_rounds: Vec<_> = runs
        .iter()
        .filter(|(m, _)| *m == Mode::Ota)
        .flat_map(|(_, t)| t)
        .collect();
    if !ota_rounds.is_empty() && ota_rounds.iter().all(|t| t.aborted) {
        return Err(Failure::AllAborted);
    }
    Ok(())
}

fn parse_range(v: &str) -> Result<(usize, usize), Failure> {
    let bad = || Failure::Config(format!("--m-range: expected `A..B` with 1 <= A <= B, got `{v}`"));
    let (a, b) = v.split_once("..").ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
    if a == 0 || a > b {
        return Err(bad());
    }
    Ok((a, b))
}

fn cmd_accounting(range: &str, params: usize, bits: u32, efficiency: f64, energy: bool, out: Option<&Path>) -> Outcome {
    let (lo, hi) = parse_range(range)?;
    let fmt = SlotFormat::default();
    let model = EnergyModel::default();
    let o = ota_slots(params, &fmt)?;
    let per_ue = digital_slots(params, bits, &SpectralProfile::uniform(efficiency, 1), &fmt)?;
    let mut text = String::from("ues,digital_slots,ota_slots,spectrum_gain");
    if energy {
        text.push_str(",energy_gain");
    }
    text.push('\n');
    for m in lo..=hi {
        let d = digital_slots(params, bits, &SpectralProfile::uniform(efficiency, m), &fmt)?;
        let gain = d as f64 / o as f64;
        text.push_str(&format!("{m},{d},{o},{gain}"));
        if energy {
            text.push_str(&format!(",{}", model.energy_gain(m, per_ue, o)));
        }
        text.push('\n');
        if m == 20 {
            eprintln!("note: at 20 UEs the formula gives {gain}; the quoted figure is {QUOTED_GAIN_AT_20}");
        }
    }
    write(out, &text)
}

fn sweep_default() -> Scenario {
    let mut s = Scenario::default();
    s.experiment.ota.channel.kind = ChannelKind::RayleighPerSubcarrier;
    s.experiment.ota.noise = NoiseModel::Snr { db: 20.0 };
    s
}

fn cmd_sync_sweep(
    spreads: &str,
    seeds: u64,
    scenario: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Outcome {
    let base = match scenario {
        Some(p) => load_scenario(p, seed)?,
        None => {
            let mut s = sweep_default();
            s.experiment.seed = seed.unwrap_or(0);
            s.experiment.threads = threads_from_env()?;
            s
        }
    };
    if seeds == 0 {
        return Err(Failure::Config("--seeds must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for item in spreads.split(',').map(str::trim) {
        let sync = match item {
            "ptp" | "ptp_on" => SyncConfig {
                mode: SyncMode::PtpOn,
                ..base.experiment.ota.sync
            },
            v => match v.parse::<usize>() {
                Ok(n) => SyncConfig {
                    mode: SyncMode::PtpOff,
                    off_spread: n,
                    ..base.experiment.ota.sync
                },
                Err(_) => return Err(Failure::Config(format!("--spreads: cannot parse `{v}`"))),
            },
        };
        rows.push((item.to_string(), sync));
    }
    let mut text = String::from("off_spread,mean_agg_nmse_db,mean_peak_spread,aborted\n");
    let results = with_threads(base.experiment.threads, || -> Result<Vec<String>, Failure> {
        let mut deltas = Vec::new();
        for k in 0..seeds {
            let mut s = base.clone();
            s.experiment.seed = derive_seed(base.experiment.seed, &[k]);
            let (tasks, init) = s.build()?;
            let state = RoundState {
                round: 1,
                global: init,
                num_ues: s.ues,
            };
            deltas.push((s.experiment.seed, local_deltas(&state, &tasks, &s.experiment)?));
        }
        let mut lines = Vec::new();
        for (label, sync) in &rows {
            let cfg = otafl::ota::OtaConfig {
                sync: *sync,
                ..base.experiment.ota.clone()
            };
            cfg.validate(base.ues)?;
            let (mut nmse, mut kept, mut peak, mut aborted) = (0.0, 0usize, 0.0, 0usize);
            for (seed, d) in &deltas {
                let o = aggregate_over_air(d, &cfg, derive_seed(*seed, &[stage::DATA, 1]))?;
                peak += o.peak_spread as f64;
                match o.nmse_db {
                    Some(v) => {
                        nmse += v;
                        kept += 1;
                    }
                    None => aborted += 1,
                }
            }
            let mean = if kept > 0 {
                format!("{}", nmse / kept as f64)
            } else {
                String::new()
            };
            let label = if sync.mode == SyncMode::PtpOn {
                "ptp_on"
            } else {
                label.as_str()
            };
            lines.push(format!("{label},{mean},{},{aborted}", peak / deltas.len() as f64));
        }
        Ok(lines)
    })??;
    for l in results {
        text.push_str(&l);
        text.push('\n');
    }
    write(out, &text)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = cli.out.as_deref();
    let result = match &cli.cmd {
        Cmd::Run { scenario } => cmd_run(scenario, cli.seed, out),
        Cmd::Accounting {
            m_range,
            params,
            bits,
            efficiency,
            energy,
        } => cmd_accounting(m_range, *params, *bits, *efficiency, *energy, out),
        Cmd::SyncSweep {
            spreads,
            seeds,
            scenario,
        } => cmd_sync_sweep(spreads, *seeds, scenario.as_deref(), cli.seed, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Io(m) => eprintln!("error: {m}"),
                Failure::Config(m) => eprintln!("error: {m}"),
                Failure::AllAborted => eprintln!("error: every over-the-air round aborted"),
            }
            ExitCode::from(f.code())
        }
    }
}
