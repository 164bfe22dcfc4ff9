use otafl::channel::{ChannelKind, ChannelModel};
use otafl::codec::WeightVector;
use otafl::fl::{init_params, RegressionData};
use otafl::grid::GridConfig;
use otafl::ota::*;
use otafl::rng::{rng_from, standard_normal};
use otafl::scenario::Scenario;

fn deltas(m: usize, p: usize, seed: u64) -> Vec<WeightVector> {
    let mut rng = rng_from(seed);
    (0..m)
        .map(|_| WeightVector((0..p).map(|_| 0.01 * standard_normal(&mut rng)).collect()))
        .collect()
}

fn rayleigh(db: f64) -> OtaConfig {
    OtaConfig {
        channel: ChannelModel::new(ChannelKind::RayleighPerSubcarrier),
        noise: NoiseModel::Snr { db },
        ..OtaConfig::default()
    }
}

fn mean_nmse(cfg: &OtaConfig, seeds: u64) -> f64 {
    let v: Vec<f64> = (0..seeds)
        .map(|s| {
            aggregate_over_air(&deltas(5, 1000, s), cfg, s)
                .unwrap()
                .nmse_db
                .expect("aborted")
        })
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn nmse_improves_with_snr() {
    let means: Vec<f64> = [0.0, 10.0, 20.0, 30.0]
        .iter()
        .map(|&db| mean_nmse(&rayleigh(db), 20))
        .collect();
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
}

#[test]
fn rayleigh_20db_regression_bound() {
    // Frozen from a 20-seed run at -19.6 dB.
    let m = mean_nmse(&rayleigh(20.0), 20);
    assert!(m <= -15.0, "{m}");
}

#[test]
fn sounding_snr_override_degrades_gracefully() {
    let at = |db| {
        mean_nmse(
            &OtaConfig {
                pilot_snr_db: Some(db),
                ..rayleigh(30.0)
            },
            10,
        )
    };
    let v = [at(5.0), at(15.0), at(30.0), at(50.0)];
    assert!(v.windows(2).all(|w| w[1] < w[0]), "{v:?}");
}

#[test]
fn coarse_feedback_costs_accuracy() {
    let at = |bits| {
        mean_nmse(
            &OtaConfig {
                feedback_bits: Some(bits),
                ..rayleigh(30.0)
            },
            10,
        )
    };
    let (coarse, fine) = (at(3), at(12));
    assert!(coarse > fine + 3.0, "{coarse} vs {fine}");
}

#[test]
fn ota_slots_do_not_grow_with_ues() {
    let acc = AccountingConfig::default();
    let g = GridConfig::default();
    let ota: Vec<usize> = (1..=10)
        .map(|m| acc.charge(Mode::Ota, 71666, m, &g).unwrap().0)
        .collect();
    assert!(ota.iter().all(|&s| s == 10));
    for m in 1..=10 {
        assert_eq!(acc.charge(Mode::DigitalFp32, 71666, m, &g).unwrap().0, 87 * m);
        assert_eq!(acc.charge(Mode::DigitalInt8, 71666, m, &g).unwrap().0, 22 * m);
    }
}

#[test]
fn cumulative_slots_are_linear_in_rounds() {
    let tasks = RegressionData::with_params(50, 60).generate(3, 1).unwrap();
    let init = init_params(&tasks[0], 0);
    let exp = ExperimentConfig {
        ota: rayleigh(20.0),
        ..ExperimentConfig::default()
    };
    for mode in [Mode::Ota, Mode::DigitalFp32, Mode::DigitalInt8] {
        let r = run_experiment(&exp, &tasks, &init, 6, mode).unwrap();
        let per = r.traces[0].slots_used;
        assert!(r.traces.iter().all(|t| t.slots_used == per));
        assert_eq!(r.traces.iter().map(|t| t.slots_used).sum::<usize>(), 6 * per);
    }
}

#[test]
fn bundled_scenarios_parse_and_round_trip() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        let s = Scenario::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(Scenario::parse(&s.to_text()).unwrap(), s);
        n += 1;
    }
    assert!(n >= 3);
}
