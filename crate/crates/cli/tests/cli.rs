use std::path::Path;
use std::process::{Command, Output};

fn otafl(args: &[&str], dir: &Path, threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_otafl"));
    cmd.args(args).current_dir(dir).env_remove("OTAFL_THREADS");
    if let Some(t) = threads {
        cmd.env("OTAFL_THREADS", t);
    }
    cmd.output().unwrap()
}

const MINIMAL: &str = "ues = 3\nrounds = 3\nmodes = ota\ntask.features = 10\ntask.samples_per_ue = 60\n";

const NOISY: &str = "ues = 4\nrounds = 4\nmodes = ota, digital_fp32, digital_int8\ntask.features = 30\n\
                     task.samples_per_ue = 80\nchannel.kind = rayleigh\nnoise.model = snr\nnoise.snr_db = 15\n";

#[test]
fn run_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.txt"), MINIMAL).unwrap();
    let out = otafl(&["run", "s.txt"], dir.path(), None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(
        lines[0],
        "schema_version,mode,round,agg_nmse_db,global_loss,mean_ue_loss,alpha,slots_used,cumulative_slots,energy_j,peak_spread,aborted"
    );
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["modes"][0]["mode"], "ota");
    assert_eq!(summary["modes"][0]["total_slots"], 3);
    assert_eq!(summary["params"], 11);
}

#[test]
fn run_is_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.txt"), NOISY).unwrap();
    let mut outputs = Vec::new();
    for (i, threads) in [None, Some("1"), Some("3"), Some("8")].into_iter().enumerate() {
        let name = format!("t{i}.csv");
        let out = otafl(&["--out", &name, "--seed", "11", "run", "s.txt"], dir.path(), threads);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(std::fs::read(dir.path().join(&name)).unwrap());
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    let other = otafl(&["--out", "x.csv", "--seed", "12", "run", "s.txt"], dir.path(), None);
    assert!(other.status.success());
    assert_ne!(std::fs::read(dir.path().join("x.csv")).unwrap(), outputs[0]);
}

#[test]
fn config_errors_exit_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.txt"), "rounds = 2\nues = 0\n").unwrap();
    let out = otafl(&["run", "bad.txt"], dir.path(), None);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("ues"), "{err}");
    std::fs::write(dir.path().join("ok.txt"), MINIMAL).unwrap();
    let out = otafl(&["run", "ok.txt"], dir.path(), Some("zero"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("OTAFL_THREADS"));
}

#[test]
fn missing_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = otafl(&["run", "absent.txt"], dir.path(), None);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn all_aborted_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    // A threshold of 1 is never met once noise or other UEs are present.
    let text = format!("{NOISY}ota.detection_threshold = 1\nmodes = ota\n")
        .replace("modes = ota, digital_fp32, digital_int8\n", "");
    std::fs::write(dir.path().join("s.txt"), text).unwrap();
    let out = otafl(&["run", "s.txt"], dir.path(), None);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("aborted"));
    let csv = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
}

fn rows(stdout: &[u8]) -> Vec<Vec<String>> {
    String::from_utf8_lossy(stdout)
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn accounting_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = otafl(
        &[
            "accounting",
            "--m-range",
            "1..20",
            "--params",
            "71666",
            "--bits",
            "32",
            "--energy",
        ],
        dir.path(),
        None,
    );
    assert!(out.status.success());
    let r = rows(&out.stdout);
    assert_eq!(r.len(), 20);
    assert_eq!(r[0][1..4], ["87", "10", "8.7"]);
    assert_eq!(r[4][1..4], ["435", "10", "43.5"]);
    assert_eq!(r[1][4], "4");
    let spectrum: Vec<f64> = r.iter().map(|x| x[3].parse().unwrap()).collect();
    let energy: Vec<f64> = r.iter().map(|x| x[4].parse().unwrap()).collect();
    assert!(spectrum.windows(2).all(|w| w[1] >= w[0]));
    assert!(energy.windows(2).all(|w| w[1] >= w[0]));
    assert!((7.0..=8.0).contains(&energy[19]));
    assert!(String::from_utf8_lossy(&out.stderr).contains("140"));
    let bad = otafl(&["accounting", "--m-range", "5..2"], dir.path(), None);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn sync_sweep_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = otafl(
        &["sync-sweep", "--spreads", "ptp,0,4,16,64,256", "--seeds", "10"],
        dir.path(),
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = rows(&out.stdout);
    assert_eq!(
        r.iter().map(|x| x[0].as_str()).collect::<Vec<_>>(),
        ["ptp_on", "0", "4", "16", "64", "256"]
    );
    assert_eq!(r[1][2], "0");
    assert!(r[0][2].parse::<f64>().unwrap() <= 4.0);
    // Rows 1.. run from best to worst synchronization.
    let nmse: Vec<f64> = r[1..].iter().map(|x| x[1].parse().unwrap()).collect();
    assert!(nmse.windows(2).all(|w| w[0] <= w[1] + 1e-9), "{nmse:?}");
    let bad = otafl(&["sync-sweep", "--spreads", "0,wide"], dir.path(), None);
    assert_eq!(bad.status.code(), Some(2));
}
