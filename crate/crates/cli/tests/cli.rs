use std::path::Path;
use std::process::{Command, Output};

fn ptsw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptsw"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn data_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn ep3_report_matches_known_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ep3.json");
    let o = ptsw(&[
        "ep3",
        "--omega-r-ratio",
        "1.07",
        "--theta-frac",
        "40",
        "--format",
        "json",
        "--output",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("g_cr/Omega = 0.137"));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let g = doc["g_cr"].as_f64().unwrap();
    let gamma = doc["gamma_cr"].as_f64().unwrap();
    assert!((g / 0.1375 - 1.0).abs() < 0.01, "{g}");
    assert!((gamma / 7.65e-3 - 1.0).abs() < 0.01, "{gamma}");
    assert_eq!(doc["rank_ok"], serde_json::Value::Bool(true));
    for key in ["triple_energy_re", "triple_energy_im", "residual"] {
        assert!(doc[key].is_number(), "{key}");
    }
    assert_eq!(doc["params"]["n_max"], 7);
}

#[test]
fn hermitian_uncoupled_spectrum_is_closed_form() {
    let o = ptsw(&["spectrum", "--gamma", "0", "--g", "0", "--nmax", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text
        .lines()
        .any(|l| l == "sweep_value,level_index,re_e,im_e,parity_index"));
    let mut got: Vec<f64> = data_rows(&text).iter().map(|r| r[2].parse().unwrap()).collect();
    got.sort_by(f64::total_cmp);
    // ±λ ± λ* with λ = Ω/2 at γ = 0, plus n ω_r
    let mut want: Vec<f64> = (0..3)
        .flat_map(|n| [-1.0, 0.0, 0.0, 1.0].map(|e| e + 1.07 * n as f64))
        .collect();
    want.sort_by(f64::total_cmp);
    assert_eq!(got.len(), want.len());
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    for r in data_rows(&text) {
        assert_eq!(r[3].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn phase_diagram_is_deterministic_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (file, jobs) in [(&a, "1"), (&b, "3")] {
        let o = ptsw(&[
            "phase-diagram",
            "--grid",
            "41x31",
            "--jobs",
            jobs,
            "--output",
            path_str(file),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    let text = String::from_utf8(ta).unwrap();
    assert!(text.contains("g_over_omega,gamma_over_omega,max_im_e,min_level_dist,class"));
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 41 * 31);
    // γ = 0 is Hermitian: three real levels along the whole bottom row
    for r in rows.iter().filter(|r| r[1] == "0.0") {
        assert!(r[4] == "ThreeReal" || r[4] == "EP2" || r[4] == "EP3", "{r:?}");
    }
}

#[test]
fn parameter_echo_reruns_to_identical_output() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.csv");
    let o = ptsw(&[
        "spectrum",
        "--theta-frac",
        "30",
        "--gamma",
        "0.003",
        "--g",
        "0.07",
        "--nmax",
        "3",
        "--output",
        path_str(&first),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&first).unwrap();
    let config: String = text
        .lines()
        .filter_map(|l| l.strip_prefix("# "))
        .filter(|l| l.contains(" = "))
        .map(|l| format!("{l}\n"))
        .collect();
    let cfg = dir.path().join("params.toml");
    std::fs::write(&cfg, config).unwrap();
    let second = dir.path().join("second.csv");
    let o = ptsw(&["spectrum", "--config", path_str(&cfg), "--output", path_str(&second)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(text, std::fs::read_to_string(&second).unwrap());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("p.json");
    std::fs::write(
        &cfg,
        r#"{"omega": 1.0, "theta": 0.1, "omega_r": 1.2, "g": 0.05, "n_max": 2}"#,
    )
    .unwrap();
    let o = ptsw(&[
        "spectrum",
        "--config",
        path_str(&cfg),
        "--g",
        "0.02",
        "--format",
        "json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["params"]["g"].as_f64(), Some(0.02));
    assert_eq!(doc["params"]["omega_r"].as_f64(), Some(1.2));
    assert_eq!(doc["params"]["n_max"], 2);
    assert_eq!(doc["levels"].as_array().unwrap().len(), 12);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(ptsw(&["ep3", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(
        ptsw(&["ep3", "--delta", "0.1", "--epsilon", "1", "--theta-frac", "40"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(ptsw(&["phase-diagram", "--grid", "7"]).status.code(), Some(1));
    assert_eq!(ptsw(&["bogus"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("clash.toml");
    std::fs::write(
        &cfg,
        "delta = 0.1\nepsilon = 0.9\nomega = 2.0\ntheta = 0.5\nomega_r = 1.0\n",
    )
    .unwrap();
    let o = ptsw(&["spectrum", "--config", path_str(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ConfigError"));
}

#[test]
fn domain_errors_exit_with_two_and_name_the_variant() {
    let o = ptsw(&["spectrum", "--gamma", "-0.1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("InvalidParams"), "{}", stderr(&o));
    let o = ptsw(&["ep3", "--omega-r-ratio", "0.9"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("InvalidParams"));
}

#[test]
fn sweep_reports_opposite_parity_ep2s() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("s.csv");
    let ep2 = dir.path().join("e.csv");
    let o = ptsw(&[
        "sweep",
        "--gamma",
        "0.004",
        "--nmax",
        "4",
        "--from",
        "0.1",
        "--to",
        "0.2",
        "--steps",
        "41",
        "--output",
        path_str(&spec),
        "--ep2-output",
        path_str(&ep2),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = data_rows(&std::fs::read_to_string(&spec).unwrap());
    assert_eq!(rows.len(), 41 * 20);
    let text = std::fs::read_to_string(&ep2).unwrap();
    assert!(text.contains("sweep_value_lo,sweep_value_hi,parity_a,parity_b"));
    let eps = data_rows(&text);
    assert!(!eps.is_empty());
    for r in eps {
        let (lo, hi): (f64, f64) = (r[0].parse().unwrap(), r[1].parse().unwrap());
        assert!(lo <= hi && (0.1..=0.2).contains(&lo));
        let (a, b): (i8, i8) = (r[2].parse().unwrap(), r[3].parse().unwrap());
        assert_eq!(a, -b);
    }
}

#[test]
fn compare_stays_close_at_weak_coupling() {
    let o = ptsw(&[
        "compare",
        "--gamma-over-omega",
        "0.005",
        "--g-max",
        "0.2",
        "--steps",
        "21",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("dev_full_re"));
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 21 * 3);
    for r in rows {
        let g: f64 = r[0].parse().unwrap();
        let dev: f64 = r[8].parse().unwrap();
        if g <= 0.12 + 1e-12 {
            assert!(dev < 1e-2, "g = {g}: {dev}");
        }
    }
}
