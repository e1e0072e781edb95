mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::scenario_path;

fn fas_optim(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fas-optim"));
    cmd.args(args);
    match threads {
        Some(n) => cmd.env("FAS_OPTIM_THREADS", n),
        None => cmd.env_remove("FAS_OPTIM_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn table1() -> String {
    scenario_path("table1.toml").display().to_string()
}

fn read_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap()).collect()
}

#[test]
fn fpa_only_run_writes_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = fas_optim(&["run", "--scenario", &table1(), "--algos", "fpa", "--out", out], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_rows(&dir.path().join("results.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][2], "fpa");
    assert!(rows[0][5].parse::<f64>().unwrap() > 0.0);
    assert!(dir.path().join("none.svg").exists());
}

#[test]
fn results_are_byte_identical_across_runs_and_pool_sizes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        vec![
            "run".to_string(),
            "--scenario".into(),
            table1(),
            "--sweep".into(),
            "k_users=2,3".into(),
            "--repeats".into(),
            "3".into(),
            "--algos".into(),
            "ga,grad,fpa".into(),
            "--seed".into(),
            "42".into(),
            "--out".into(),
            out.into(),
        ]
    };
    let args_a = args(a.path().to_str().unwrap());
    let args_b = args(b.path().to_str().unwrap());
    let ra = fas_optim(&args_a.iter().map(String::as_str).collect::<Vec<_>>(), Some("1"));
    let rb = fas_optim(&args_b.iter().map(String::as_str).collect::<Vec<_>>(), Some("3"));
    assert!(ra.status.success() && rb.status.success());
    for f in ["results.csv", "summary.csv", "k_users.svg"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
    assert_eq!(read_rows(&a.path().join("results.csv")).len(), 2 * 3 * 3);
}

#[test]
fn plotted_points_come_from_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = fas_optim(
        &["run", "--scenario", &table1(), "--sweep", "m_antennas=4,9", "--repeats", "2", "--algos", "grad,fpa", "--seed", "5", "--out", out],
        None,
    );
    assert!(o.status.success());
    let results = read_rows(&dir.path().join("results.csv"));
    let summary = read_rows(&dir.path().join("summary.csv"));
    let svg = std::fs::read_to_string(dir.path().join("m_antennas.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), summary.len());
    for s in &summary {
        let rates: Vec<f64> = results
            .iter()
            .filter(|r| r[1] == s[1] && r[2] == s[2])
            .map(|r| r[5].parse().unwrap())
            .collect();
        let mean = rates.iter().sum::<f64>() / rates.len() as f64;
        let reported: f64 = s[4].parse().unwrap();
        assert!((mean - reported).abs() <= 1e-12 * mean.abs());
    }
}

#[test]
fn more_antennas_help_for_a_fixed_drop() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = fas_optim(
        &["run", "--scenario", &table1(), "--sweep", "m_antennas=4,9", "--algos", "ga,grad", "--seed", "9", "--out", out],
        None,
    );
    assert!(o.status.success());
    let rows = read_rows(&dir.path().join("results.csv"));
    for algo in ["ga", "grad"] {
        let rate = |m: &str| -> f64 {
            rows.iter().find(|r| &r[1] == m && &r[2] == algo).unwrap()[5].parse().unwrap()
        };
        assert!(rate("9.0") > rate("4.0"), "{algo}");
    }
}

#[test]
fn validate_passes_on_reference_scenario() {
    let path = scenario_path("validate_k3.toml");
    let o = fas_optim(&["validate", "--scenario", path.to_str().unwrap(), "--trials", "20000"], None);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("interference"));
    assert_eq!(stdout.lines().filter(|l| l.contains("sinr")).count(), 3);
}

#[test]
fn lemmas_report_and_failure_code() {
    let o = fas_optim(&["lemmas", "--m", "3", "--trials", "200000"], None);
    assert_eq!(o.status.code(), Some(0));
    // far too few samples for the 1% band
    let o = fas_optim(&["lemmas", "--m", "2", "--trials", "50"], None);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_and_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["frobnicate"],
        vec!["run", "--scenario", "/nonexistent.toml", "--out", out],
        vec!["run", "--scenario", "SCN", "--sweep", "colour=1,2", "--out", out],
        vec!["run", "--scenario", "SCN", "--sweep", "k_users=5,3", "--out", out],
        vec!["run", "--scenario", "SCN", "--algos", "ga,annealing", "--out", out],
        vec!["validate", "--scenario", "SCN", "--trials", "10"],
    ];
    let scn = table1();
    for case in cases {
        let args: Vec<&str> = case.iter().map(|a| if *a == "SCN" { scn.as_str() } else { a }).collect();
        let o = fas_optim(&args, None);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
    let o = fas_optim(&["lemmas", "--m", "2", "--trials", "100"], Some("zero"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_scenario_file_names_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        "[system]\nm_antennas = 9\nk_users = 4\npilot_len = 2\nwavelength_m = 0.1\nregion_over_lambda = 6\n\
         tx_power_dbm = 30\nnoise_power_dbm = -104\ncoherence_len = 196\n[users]\n",
    )
    .unwrap();
    let o = fas_optim(&["validate", "--scenario", path.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pilot_len < k_users"));
}
