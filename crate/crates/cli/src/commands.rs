use std::collections::HashSet;
use std::path::{Path, PathBuf};

use iptm_core::btms::{fit_xi, load_calibration_samples};
use iptm_core::mpc::StrategyKind;
use iptm_core::sim::{self, DrivingCycle, Metrics, RunLog, SweepAxis};
use sha2::{Digest, Sha256};

use crate::config::{self, hex, RunConfig, DESK_COMPOSITE};
use crate::output::{self, MetricsFile, SUMMARY};
use crate::{CliError, Common};

const DEFAULT_OUTPUT_ROOT: &str = "iptm-out";

/// Band slack tolerated before a temperature excursion counts as a breach (°C).
const TEMPERATURE_SLACK: f64 = 0.1;

fn config_err(e: iptm_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_err(e: iptm_core::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

fn output_root(common: &Common, cfg: &RunConfig) -> PathBuf {
    common
        .output
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

fn load_cycle(cfg: &RunConfig) -> Result<DrivingCycle, CliError> {
    let cycle = if cfg.cycle == DESK_COMPOSITE {
        sim::cycle::desk_composite_with_seed(cfg.seed)
    } else {
        sim::load_cycle(&cfg.cycle).map_err(config_err)?
    };
    match cfg.duration {
        Some(d) => cycle.truncated(d).map_err(config_err),
        None => Ok(cycle),
    }
}

fn breach(label: &str, m: &Metrics) -> Option<String> {
    if m.spacing_violations > 0 {
        Some(format!("{label}: {} spacing violations (min margin {:.3} m)", m.spacing_violations, m.min_spacing_margin_m))
    } else if m.max_temperature_excursion_c > TEMPERATURE_SLACK {
        Some(format!("{label}: temperature left the band by {:.3} °C", m.max_temperature_excursion_c))
    } else {
        None
    }
}

fn guard<'a>(runs: impl IntoIterator<Item = (&'a str, &'a Metrics)>) -> Result<(), CliError> {
    let msgs: Vec<String> = runs.into_iter().filter_map(|(l, m)| breach(l, m)).collect();
    if msgs.is_empty() { Ok(()) } else { Err(CliError::Guard(format!("safety guard breached: {}", msgs.join("; ")))) }
}

pub fn run(config: Option<&Path>, baseline: Option<&Path>, common: &Common) -> Result<(), CliError> {
    let cfg = config::load(config, &common.overrides())?;
    let cycle = load_cycle(&cfg)?;
    let scen = cfg.scenario();
    scen.validate(&cycle).map_err(config_err)?;
    let baseline = baseline.map(MetricsFile::read).transpose()?;

    let (log, metrics) = sim::run_closed_loop(&cycle, &scen).map_err(runtime_err)?;
    let dir = output_root(common, &cfg).join(cfg.label());
    let path = output::write_run(&dir, &cfg, &log, &metrics)?;

    // Deltas come from the files as written, not from in-memory values.
    let current = MetricsFile::read(&path)?;
    let base = baseline.as_ref().map(|b| (b.label.as_str(), &b.metrics));
    print!("{}", output::summary(&current.label, &current.metrics, base));
    println!("artifacts: {}", dir.display());
    guard([(current.label.as_str(), &current.metrics)])
}

fn unique_labels(cfgs: &mut [RunConfig]) {
    let mut seen = HashSet::new();
    for c in cfgs {
        let base = c.label();
        let mut label = base.clone();
        let mut k = 2;
        while !seen.insert(label.clone()) {
            label = format!("{base}-{k}");
            k += 1;
        }
        c.label = Some(label);
    }
}

/// Runs share the cycle and plant, or the comparison is meaningless.
fn check_comparable(cfgs: &[RunConfig]) -> Result<(), CliError> {
    let first = &cfgs[0];
    for c in &cfgs[1..] {
        if (&c.cycle, c.seed, c.duration) != (&first.cycle, first.seed, first.duration) {
            return Err(CliError::Config(format!(
                "refusing to compare {} and {}: different driving cycles",
                first.label(),
                c.label()
            )));
        }
        if c.plant() != first.plant() || c.initial != first.initial {
            return Err(CliError::Config(format!(
                "refusing to compare {} and {}: plant parameters or initial conditions differ",
                first.label(),
                c.label()
            )));
        }
    }
    Ok(())
}

fn run_all(cycle: &DrivingCycle, cfgs: &[RunConfig], parallel: bool) -> Vec<Result<(RunLog, Metrics), iptm_core::Error>> {
    let one = |c: &RunConfig| sim::run_closed_loop(cycle, &c.scenario());
    if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = cfgs.iter().map(|c| s.spawn(move || one(c))).collect();
            handles.into_iter().map(|h| h.join().expect("run thread panicked")).collect()
        })
    } else {
        cfgs.iter().map(one).collect()
    }
}

pub fn compare(configs: &[PathBuf], strategies: &[StrategyKind], parallel: bool, common: &Common) -> Result<(), CliError> {
    let overrides = common.overrides();
    let mut cfgs = if configs.len() >= 2 {
        if !strategies.is_empty() {
            return Err(CliError::Config("--strategies applies to a single base config".into()));
        }
        configs.iter().map(|p| config::load(Some(p), &overrides)).collect::<Result<Vec<_>, _>>()?
    } else {
        let base = config::load(configs.first().map(PathBuf::as_path), &overrides)?;
        let kinds = if strategies.is_empty() { StrategyKind::ALL.to_vec() } else { strategies.to_vec() };
        kinds
            .into_iter()
            .map(|kind| {
                let mut c = base.clone();
                c.strategy.kind = kind;
                c.label = Some(kind.name().to_string());
                c
            })
            .collect()
    };
    if cfgs.len() < 2 {
        return Err(CliError::Config("compare needs at least two runs".into()));
    }
    unique_labels(&mut cfgs);
    check_comparable(&cfgs)?;
    let cycle = load_cycle(&cfgs[0])?;
    for c in &cfgs {
        c.scenario().validate(&cycle).map_err(|e| CliError::Config(format!("{}: {e}", c.label())))?;
    }

    let root = output_root(common, &cfgs[0]).join("compare");
    let mut runs = Vec::new();
    for (c, res) in cfgs.iter().zip(run_all(&cycle, &cfgs, parallel)) {
        let (log, m) = res.map_err(|e| CliError::Runtime(format!("{}: {e}", c.label())))?;
        let path = output::write_run(&root.join(c.label()), c, &log, &m)?;
        runs.push((c.label(), MetricsFile::read(&path)?.metrics));
    }

    let labelled: Vec<(String, &RunConfig)> = cfgs.iter().map(|c| (c.label(), c)).collect();
    let refs: Vec<(&str, &RunConfig)> = labelled.iter().map(|(l, c)| (l.as_str(), *c)).collect();
    let head = output::preamble(&refs, &[("cycle", cycle.name.clone())]);
    output::write_text(&root.join("compare.csv"), &String::from_utf8_lossy(&output::comparison_csv(&runs, &head)?))?;
    print!("{}", output::comparison_table(&runs));
    println!("artifacts: {}", root.display());
    guard(runs.iter().map(|(l, m)| (l.as_str(), m)))
}

pub fn sweep(
    config: Option<&Path>,
    axis: SweepAxis,
    values: &[f64],
    parallel: bool,
    common: &Common,
) -> Result<(), CliError> {
    let cfg = config::load(config, &common.overrides())?;
    let cycle = load_cycle(&cfg)?;
    let scen = cfg.scenario();
    scen.validate(&cycle).map_err(config_err)?;
    let rows = sim::sweep(&cycle, &scen, axis, values, parallel);

    let dir = output_root(common, &cfg).join(format!("sweep-{axis}"));
    output::create_dir(&dir)?;
    let head = output::preamble(&[(&cfg.label(), &cfg)], &[("cycle", cycle.name.clone()), ("axis", axis.to_string())]);
    let to_rt = |e: csv::Error| CliError::Runtime(e.to_string());

    let mut wide = csv::Writer::from_writer(head.clone().into_bytes());
    let mut long = csv::Writer::from_writer(head.into_bytes());
    let mut hdr = vec!["axis", "value", "status", "error"];
    hdr.extend(SUMMARY.iter().map(|r| r.key));
    wide.write_record(&hdr).map_err(to_rt)?;
    long.write_record(["axis", "value", "metric", "metric_value"]).map_err(to_rt)?;
    for r in &rows {
        let mut rec = vec![axis.to_string(), r.value.to_string()];
        match (&r.metrics, &r.error) {
            (Some(m), _) => {
                rec.extend(["ok".to_string(), String::new()]);
                rec.extend(SUMMARY.iter().map(|row| (row.get)(m).to_string()));
                for row in &SUMMARY {
                    long.write_record([axis.to_string(), r.value.to_string(), row.key.into(), (row.get)(m).to_string()])
                        .map_err(to_rt)?;
                }
            }
            (None, e) => {
                rec.extend(["error".to_string(), e.clone().unwrap_or_default()]);
                rec.extend(SUMMARY.iter().map(|_| String::new()));
            }
        }
        wide.write_record(&rec).map_err(to_rt)?;
    }
    let finish = |w: csv::Writer<Vec<u8>>| w.into_inner().map_err(|e| CliError::Runtime(e.to_string()));
    output::write_text(&dir.join("sweep.csv"), &String::from_utf8_lossy(&finish(wide)?))?;
    output::write_text(&dir.join("sweep_long.csv"), &String::from_utf8_lossy(&finish(long)?))?;

    println!("{:>10}  {:>14}  {:>14}  {:>14}  {:>12}", axis.name(), "total kJ", "deg cell 1", "deg cell Nc", "solve ms");
    for r in &rows {
        match &r.metrics {
            Some(m) => println!(
                "{:>10}  {:>14.1}  {:>14.4e}  {:>14.4e}  {:>12.2}",
                r.value,
                m.total_energy_kj,
                m.cell_1_degradation,
                m.cell_nc_degradation,
                1e3 * m.mean_solve_time_s
            ),
            None => println!("{:>10}  error: {}", r.value, r.error.as_deref().unwrap_or("")),
        }
    }
    println!("artifacts: {}", dir.display());

    let failed: Vec<String> =
        rows.iter().filter_map(|r| r.error.as_ref().map(|e| format!("{}={}: {e}", axis, r.value))).collect();
    if !failed.is_empty() {
        return Err(CliError::Runtime(format!("{} of {} sweep runs failed: {}", failed.len(), rows.len(), failed.join("; "))));
    }
    let labels: Vec<String> = rows.iter().map(|r| format!("{axis}={}", r.value)).collect();
    guard(labels.iter().zip(&rows).filter_map(|(l, r)| r.metrics.as_ref().map(|m| (l.as_str(), m))))
}

pub fn calibrate(samples: &Path, fragment: Option<&Path>, output: Option<&Path>) -> Result<(), CliError> {
    let data = load_calibration_samples(samples).map_err(config_err)?;
    let fit = fit_xi(&data).map_err(runtime_err)?;
    let path = fragment.map(Path::to_path_buf).unwrap_or_else(|| {
        output.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT)).join("calibration/btms_xi.toml")
    });
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        output::create_dir(dir)?;
    }

    let bytes = std::fs::read(samples).map_err(|e| CliError::Config(format!("{}: {e}", samples.display())))?;
    let mut btms = toml::Table::new();
    btms.insert("xi".into(), toml::Value::Array(fit.xi.iter().map(|&x| toml::Value::Float(x)).collect()));
    let mut doc = toml::Table::new();
    doc.insert("btms".into(), toml::Value::Table(btms));
    let text = format!(
        "# xi fitted from {} ({} samples, sha256 {})\n# rms residual {:.6} W ({:.4}% of mean cooling)\n{}",
        samples.display(),
        data.len(),
        hex(&Sha256::digest(&bytes)),
        fit.rms_residual,
        100.0 * fit.relative_residual(),
        toml::to_string(&doc).expect("fragment serializes")
    );
    output::write_text(&path, &text)?;

    println!("samples: {}", data.len());
    for (i, x) in fit.xi.iter().enumerate() {
        println!("xi{} = {x:.6e}", i + 1);
    }
    println!(
        "rms residual: {:.6} W ({:.4}% of mean cooling {:.1} W)",
        fit.rms_residual,
        100.0 * fit.relative_residual(),
        fit.mean_q_co
    );
    println!("fragment: {}", path.display());
    Ok(())
}
