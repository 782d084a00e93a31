use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use iptm_core::btms::{cooling_rate, BtmsParams};
use serde_json::Value;

fn iptm(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iptm"))
        .args(args)
        .env("IPTM_OUTPUT_ROOT", root)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn metrics(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Data rows of a CSV whose preamble is `#` comments.
fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap();
    let header = rd.headers().unwrap().iter().map(str::to_string).collect();
    let rows = rd.records().map(|r| r.unwrap().iter().map(str::to_string).collect()).collect();
    (header, rows)
}

#[test]
fn run_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let o = iptm(
        &["run", "--cycle", "desk-composite", "--strategy", "aging", "--np1", "3", "--np2", "5", "--dt1", "1", "--dt2", "5", "--duration", "12"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = tmp.path().join("aging");
    for f in ["runlog.csv", "plot.csv", "metrics.json", "config.toml"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let m = metrics(&dir.join("metrics.json"));
    assert_eq!(m["metrics"]["steps"], 12);
    assert_eq!(m["config"]["grid"]["n_long"], 5);
    assert_eq!(m["config"]["strategy"]["kind"], "aging");

    // Every file carries the same config hash.
    let hash = m["config_sha256"].as_str().unwrap();
    for f in ["runlog.csv", "plot.csv", "config.toml"] {
        assert!(fs::read_to_string(dir.join(f)).unwrap().contains(hash), "{f}");
    }
    let log = fs::read_to_string(dir.join("runlog.csv")).unwrap();
    assert!(log.contains(&format!("# runlog sha256: {}", m["runlog_sha256"].as_str().unwrap())));
    let (hdr, rows) = csv_rows(&dir.join("plot.csv"));
    assert!(hdr.iter().any(|h| h == "q_loss1_cum"));
    assert_eq!(rows.len(), 12);
    assert!(stdout(&o).contains("Total energy"));
}

#[test]
fn resolved_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let first = iptm(&["run", "--strategy", "energy_aging", "--duration", "8", "--lambda-q", "5e7"], tmp.path());
    assert!(first.status.success(), "{}", stderr(&first));
    let cfg = tmp.path().join("energy_aging/config.toml");
    let again = iptm(&["run", "--config", cfg.to_str().unwrap(), "--label", "again"], tmp.path());
    assert!(again.status.success(), "{}", stderr(&again));
    let a = metrics(&tmp.path().join("energy_aging/metrics.json"));
    let b = metrics(&tmp.path().join("again/metrics.json"));
    assert_eq!(a["runlog_sha256"], b["runlog_sha256"]);
    assert_eq!(b["config"]["strategy"]["lambda_q"], 5e7);
}

#[test]
fn missing_cycle_file() {
    let tmp = tempfile::tempdir().unwrap();
    let o = iptm(&["run", "--cycle", "/nonexistent/cycle.csv"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cycle not found"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "cycle = \"desk-composite\"\n[grid]\nn_shrot = 3\n").unwrap();
    let o = iptm(&["run", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n_shrot"), "{}", stderr(&o));

    let o = iptm(&["run", "--set", "battery.q_nom=-1", "--duration", "5"], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = iptm(&["run", "--strategy", "fastest"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn baseline_deltas_recompute_from_files() {
    let tmp = tempfile::tempdir().unwrap();
    let r = iptm(&["run", "--strategy", "reference", "--duration", "10"], tmp.path());
    assert!(r.status.success(), "{}", stderr(&r));
    let base = tmp.path().join("reference/metrics.json");
    let o = iptm(&["run", "--strategy", "aging", "--duration", "10", "--baseline", base.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let (b, a) = (metrics(&base), metrics(&tmp.path().join("aging/metrics.json")));
    let text = stdout(&o);
    for (label, key) in [("Total energy", "total_energy_kj"), ("Degradation cell 1", "cell_1_degradation")] {
        let (x, y) = (a["metrics"][key].as_f64().unwrap(), b["metrics"][key].as_f64().unwrap());
        let want = format!("{:+.2}%", 100.0 * (x - y) / y.abs());
        let line = text.lines().find(|l| l.starts_with(label)).unwrap();
        assert!(line.trim_end().ends_with(&want), "{line} vs {want}");
    }
}

#[test]
fn compare_strategy_subset() {
    let tmp = tempfile::tempdir().unwrap();
    let o = iptm(&["compare", "--strategies", "reference,energy_aging,aging", "--duration", "8"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let (hdr, rows) = csv_rows(&tmp.path().join("compare/compare.csv"));
    assert_eq!(hdr, ["metric", "unit", "kind", "reference", "energy_aging", "aging"]);
    let pct = rows.iter().find(|r| r[0] == "total_energy_kj" && r[2] == "percent").unwrap();
    assert_eq!(pct[3], "100");
    let text = fs::read_to_string(tmp.path().join("compare/compare.csv")).unwrap();
    assert_eq!(text.matches("# config ").count(), 3);
    assert!(tmp.path().join("compare/aging/metrics.json").is_file());
}

#[test]
fn compare_identical_configs_and_refusal() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.toml");
    fs::write(&a, "duration = 8.0\n[strategy]\nkind = \"aging\"\n").unwrap();
    let o = iptm(&["compare", "-c", a.to_str().unwrap(), "-c", a.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let (x, y) = (metrics(&tmp.path().join("compare/aging/metrics.json")), metrics(&tmp.path().join("compare/aging-2/metrics.json")));
    assert_eq!(x["runlog_sha256"], y["runlog_sha256"]);
    assert_eq!(x["metrics"]["total_energy_kj"], y["metrics"]["total_energy_kj"]);

    let b = tmp.path().join("b.toml");
    fs::write(&b, "duration = 8.0\n[strategy]\nkind = \"aging\"\n[battery]\nq_nom = 4.5\n").unwrap();
    let o = iptm(&["compare", "-c", a.to_str().unwrap(), "-c", b.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("refusing"), "{}", stderr(&o));
}

#[test]
fn sweep_writes_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let o = iptm(
        &["sweep", "--axis", "dt2", "--values", "2,5,8,10,15", "--strategy", "aging", "--np1", "3", "--np2", "2", "--duration", "6"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let (hdr, rows) = csv_rows(&tmp.path().join("sweep-dt2/sweep.csv"));
    assert_eq!(rows.len(), 5);
    assert_eq!(&hdr[..3], ["axis", "value", "status"]);
    assert!(rows.iter().all(|r| r[2] == "ok"));
    let (_, long) = csv_rows(&tmp.path().join("sweep-dt2/sweep_long.csv"));
    assert_eq!(long.len() % 5, 0);
    assert!(long.len() > 5);

    let bad = iptm(&["sweep", "--axis", "colour", "--values", "1"], tmp.path());
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("axis"), "{}", stderr(&bad));
}

/// Samples from the surrogate with known coefficients, optionally scaled by a
/// deterministic ±`noise` pattern.
fn samples(n: usize, noise: f64) -> String {
    let mut s = String::from("p_cp_w,t_c_out_c,t_a_c,v_mps,mdot_c_kgps,q_co_w\n");
    for k in 0..n {
        let p_cp = 500.0 + 4000.0 * ((k * 7) % 13) as f64 / 12.0;
        let t_out = 25.0 + 15.0 * ((k * 5) % 11) as f64 / 10.0;
        let t_a = 20.0 + 20.0 * ((k * 3) % 7) as f64 / 6.0;
        let v = 30.0 * ((k * 11) % 17) as f64 / 16.0;
        let mdot = 0.1 + 0.4 * ((k * 13) % 19) as f64 / 18.0;
        let params = BtmsParams { coolant_mass_flow: mdot, ..BtmsParams::default() };
        let q = cooling_rate(p_cp, t_out, t_a, v, &params).unwrap();
        let scale = 1.0 + noise * (k as f64 * 2.3).sin();
        s.push_str(&format!("{p_cp},{t_out},{t_a},{v},{mdot},{}\n", q * scale));
    }
    s
}

fn residual_percent(out: &str) -> f64 {
    let line = out.lines().find(|l| l.starts_with("rms residual")).unwrap();
    let start = line.find('(').unwrap() + 1;
    line[start..].split('%').next().unwrap().parse().unwrap()
}

#[test]
fn calibrate_exact_and_noisy_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let exact = tmp.path().join("exact.csv");
    fs::write(&exact, samples(200, 0.0)).unwrap();
    let frag = tmp.path().join("xi.toml");
    let o = iptm(&["calibrate", "--samples", exact.to_str().unwrap(), "--fragment", frag.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(residual_percent(&stdout(&o)) < 1e-6, "{}", stdout(&o));
    let fitted: toml::Table = toml::from_str(&fs::read_to_string(&frag).unwrap()).unwrap();
    let xi = fitted["btms"]["xi"].as_array().unwrap();
    let truth = BtmsParams::default().xi;
    for (got, want) in xi.iter().zip(truth) {
        assert!((got.as_float().unwrap() - want).abs() <= 1e-6 * want.abs().max(1e-9));
    }
    // The fragment is a valid config on its own.
    let run = iptm(&["run", "--config", frag.to_str().unwrap(), "--duration", "3"], tmp.path());
    assert!(run.status.success(), "{}", stderr(&run));

    let noisy = tmp.path().join("noisy.csv");
    fs::write(&noisy, samples(200, 0.01)).unwrap();
    let o = iptm(&["calibrate", "--samples", noisy.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let r = residual_percent(&stdout(&o));
    assert!(r > 0.0 && r <= 2.0, "{r}");
    assert!(tmp.path().join("calibration/btms_xi.toml").is_file());
}

#[test]
fn calibrate_needs_enough_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let few = tmp.path().join("few.csv");
    fs::write(&few, samples(5, 0.0)).unwrap();
    let o = iptm(&["calibrate", "--samples", few.to_str().unwrap()], tmp.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("calibration"), "{}", stderr(&o));
}

#[test]
fn output_root_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let flag = tmp.path().join("flag");
    let o = iptm(&["run", "--duration", "3", "--output", flag.to_str().unwrap()], &tmp.path().join("env"));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(flag.join("reference/metrics.json").is_file());
    assert!(!tmp.path().join("env").exists());
}

#[test]
fn safety_breach_exits_4() {
    // The leader stops dead from 20 m/s; no admissible braking keeps the gap.
    let tmp = tempfile::tempdir().unwrap();
    let cycle = tmp.path().join("stop.csv");
    let mut body = String::from("t_s,v_pv_mps,slope_rad\n");
    for k in 0..20 {
        body.push_str(&format!("{k},{},0\n", if k < 3 { 20.0 } else { 0.0 }));
    }
    fs::write(&cycle, body).unwrap();
    let o = iptm(&["run", "--cycle", cycle.to_str().unwrap(), "--set", "initial.gap_offset=0.0"], tmp.path());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("spacing"), "{}", stderr(&o));
    assert!(tmp.path().join("reference/metrics.json").is_file());
}
