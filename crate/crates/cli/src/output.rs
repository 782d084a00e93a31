use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use iptm_core::sim::{Metrics, RunLog};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

/// A summary-table row: label, unit and accessor.
pub struct MetricRow {
    pub key: &'static str,
    pub label: &'static str,
    pub unit: &'static str,
    pub get: fn(&Metrics) -> f64,
}

pub const SUMMARY: [MetricRow; 11] = [
    MetricRow { key: "cooling_energy_kj", label: "Cooling energy", unit: "kJ", get: |m| m.cooling_energy_kj },
    MetricRow { key: "traction_energy_kj", label: "Traction energy", unit: "kJ", get: |m| m.traction_energy_kj },
    MetricRow { key: "total_energy_kj", label: "Total energy", unit: "kJ", get: |m| m.total_energy_kj },
    MetricRow { key: "cell_1_degradation", label: "Degradation cell 1", unit: "-", get: |m| m.cell_1_degradation },
    MetricRow { key: "cell_nc_degradation", label: "Degradation cell Nc", unit: "-", get: |m| m.cell_nc_degradation },
    MetricRow {
        key: "degradation_inconsistency",
        label: "Degradation inconsistency",
        unit: "-",
        get: |m| m.degradation_inconsistency,
    },
    MetricRow { key: "min_spacing_margin_m", label: "Min spacing margin", unit: "m", get: |m| m.min_spacing_margin_m },
    MetricRow {
        key: "max_temperature_excursion_c",
        label: "Max temperature excursion",
        unit: "°C",
        get: |m| m.max_temperature_excursion_c,
    },
    MetricRow { key: "mean_solve_time_ms", label: "Mean solve time", unit: "ms", get: |m| 1e3 * m.mean_solve_time_s },
    MetricRow { key: "total_solve_time_s", label: "Total solve time", unit: "s", get: |m| m.total_solve_time_s },
    MetricRow { key: "flagged_steps", label: "Flagged steps", unit: "-", get: |m| m.flagged_steps as f64 },
];

/// Contents of `metrics.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsFile {
    pub label: String,
    pub cycle: String,
    pub config_sha256: String,
    pub runlog_sha256: String,
    pub config: RunConfig,
    pub metrics: Metrics,
}

impl MetricsFile {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read metrics {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Signed percentage change from `base`; `None` when the base is zero.
pub fn pct_delta(value: f64, base: f64) -> Option<f64> {
    (base != 0.0).then(|| 100.0 * (value - base) / base.abs())
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// `#`-prefixed preamble carrying the hashes and the full resolved config(s).
pub fn preamble(configs: &[(&str, &RunConfig)], extra: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in extra {
        s.push_str(&format!("# {k}: {v}\n"));
    }
    for (label, cfg) in configs {
        s.push_str(&format!("# config {label} sha256: {}\n", cfg.hash()));
        for line in cfg.to_toml().lines() {
            s.push_str("#   ");
            s.push_str(line);
            s.push('\n');
        }
    }
    s
}

/// Writes `config.toml`, `runlog.csv`, `plot.csv` and `metrics.json` into `dir`.
pub fn write_run(dir: &Path, cfg: &RunConfig, log: &RunLog, metrics: &Metrics) -> Result<PathBuf, CliError> {
    create_dir(dir)?;
    let label = cfg.label();
    let runlog_hash = log.content_hash();
    let head = preamble(&[(&label, cfg)], &[("runlog sha256", runlog_hash.clone())]);

    write_file(&dir.join("config.toml"), format!("# sha256: {}\n{}", cfg.hash(), cfg.to_toml()).as_bytes())?;

    let mut buf = head.clone().into_bytes();
    log.write_csv(&mut buf).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&dir.join("runlog.csv"), &buf)?;

    let mut buf = head.into_bytes();
    write_plot_data(&mut buf, log, metrics).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&dir.join("plot.csv"), &buf)?;

    let file = MetricsFile {
        label,
        cycle: log.cycle.clone(),
        config_sha256: cfg.hash(),
        runlog_sha256: runlog_hash,
        config: cfg.resolved(),
        metrics: metrics.clone(),
    };
    let path = dir.join("metrics.json");
    let json = serde_json::to_string_pretty(&file).expect("metrics serialize");
    write_file(&path, json.as_bytes())?;
    Ok(path)
}

/// Time series for speed, gap, coolant and cell temperatures and
/// cumulative capacity loss.
fn write_plot_data<W: Write>(w: W, log: &RunLog, metrics: &Metrics) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "t", "v", "v_pv", "spacing", "spacing_margin", "a", "p_tra", "p_cp", "p_b", "t_bc1", "t_bcnc", "t_c_in",
        "t_c_out", "q_loss1_cum", "q_lossnc_cum", "flagged",
    ])?;
    let (mut q1, mut qn) = (0.0, 0.0);
    for r in &log.rows {
        q1 += r.dq1;
        qn += r.dqnc;
        wr.write_record([
            r.t, r.v, r.pv_vel, r.spacing, r.spacing_margin, r.a, r.p_tra, r.p_cp, r.p_b, r.t_bc1, r.t_bcnc,
            r.t_c_in, r.t_c_out, q1, qn,
        ]
        .iter()
        .map(|x| x.to_string())
        .chain([u8::from(r.flagged).to_string()]))?;
    }
    debug_assert_eq!(log.rows.len(), metrics.steps);
    wr.flush()?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_file(path, text.as_bytes())
}

fn fmt_value(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else if x.abs() < 1e-2 || x.abs() >= 1e6 {
        format!("{x:.4e}")
    } else {
        format!("{x:.3}")
    }
}

/// Plain-text summary of one run, with deltas against `baseline` if given.
pub fn summary(label: &str, m: &Metrics, baseline: Option<(&str, &Metrics)>) -> String {
    let mut out = format!("{label} ({} steps, {} flagged, {} not converged)\n", m.steps, m.flagged_steps, m.nonconverged_steps);
    let mut header = format!("{:<28}{:>6}{:>14}", "metric", "unit", label);
    if let Some((b, _)) = baseline {
        header.push_str(&format!("{:>14}{:>10}", b, "delta"));
    }
    out.push_str(&header);
    out.push('\n');
    for row in &SUMMARY {
        let v = (row.get)(m);
        let mut line = format!("{:<28}{:>6}{:>14}", row.label, row.unit, fmt_value(v));
        if let Some((_, bm)) = baseline {
            let b = (row.get)(bm);
            let d = pct_delta(v, b).map_or("n/a".to_string(), |d| format!("{d:+.2}%"));
            line.push_str(&format!("{:>14}{:>10}", fmt_value(b), d));
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Metrics of several runs side by side, then each as a percentage of the first.
pub fn comparison_table(runs: &[(String, Metrics)]) -> String {
    let base = &runs[0];
    let mut out = format!("{:<28}{:>6}", "metric", "unit");
    for (l, _) in runs {
        out.push_str(&format!("{:>18}", l));
    }
    out.push('\n');
    for row in &SUMMARY {
        out.push_str(&format!("{:<28}{:>6}", row.label, row.unit));
        for (_, m) in runs {
            out.push_str(&format!("{:>18}", fmt_value((row.get)(m))));
        }
        out.push('\n');
    }
    out.push_str(&format!("\nrelative to {} (= 100%)\n", base.0));
    for row in &SUMMARY {
        out.push_str(&format!("{:<34}", row.label));
        let b = (row.get)(&base.1);
        for (_, m) in runs {
            let cell = if b == 0.0 { "n/a".to_string() } else { format!("{:.2}%", 100.0 * (row.get)(m) / b) };
            out.push_str(&format!("{:>18}", cell));
        }
        out.push('\n');
    }
    out
}

/// CSV form of `comparison_table`: `metric,unit,kind,<run>...` with
/// `kind` = `value` or `percent`.
pub fn comparison_csv(runs: &[(String, Metrics)], head: &str) -> Result<Vec<u8>, CliError> {
    let mut wr = csv::Writer::from_writer(head.as_bytes().to_vec());
    let to_rt = |e: csv::Error| CliError::Runtime(e.to_string());
    let mut hdr = vec!["metric".to_string(), "unit".into(), "kind".into()];
    hdr.extend(runs.iter().map(|(l, _)| l.clone()));
    wr.write_record(&hdr).map_err(to_rt)?;
    for row in &SUMMARY {
        let mut rec = vec![row.key.to_string(), row.unit.into(), "value".into()];
        rec.extend(runs.iter().map(|(_, m)| (row.get)(m).to_string()));
        wr.write_record(&rec).map_err(to_rt)?;
    }
    for row in &SUMMARY {
        let b = (row.get)(&runs[0].1);
        let mut rec = vec![row.key.to_string(), "%".into(), "percent".into()];
        rec.extend(runs.iter().map(|(_, m)| if b == 0.0 { String::new() } else { (100.0 * (row.get)(m) / b).to_string() }));
        wr.write_record(&rec).map_err(to_rt)?;
    }
    wr.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deltas_are_signed_and_relative() {
        assert_eq!(pct_delta(90.0, 100.0), Some(-10.0));
        assert_eq!(pct_delta(-90.0, -100.0), Some(10.0));
        assert_eq!(pct_delta(1.0, 0.0), None);
    }
}
