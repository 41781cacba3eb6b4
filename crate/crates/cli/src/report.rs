//! Plot-ready CSV and JSON emission. Headers are fixed; every float is
//! written with six significant digits.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use voltvar::grid::GridNetwork;
use voltvar::powerflow::PowerFlowSolution;
use voltvar::sim::{DeviceSetpoint, TraceRow, ValidationReport};

pub const BASELINE_FILE: &str = "baseline_voltage.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const SETPOINTS_FILE: &str = "setpoints.csv";
pub const VALIDATION_FILE: &str = "validation.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const JACOBIAN_FILE: &str = "jacobian.csv";
pub const JACOBIAN_INVERSE_FILE: &str = "jacobian_inverse.csv";

pub const SETPOINT_HEADER: [&str; 4] = ["Bus", "P kW", "Q kVAr", "z"];
pub const VALIDATION_HEADER: [&str; 5] = ["Bus", "Predicted V", "Validated V", "Signed Error", "Relative Error %"];

/// `%g`-style rendering with six significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = mantissa.trim_end_matches('0').trim_end_matches('.');
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    let fixed = format!("{x:.decimals$}");
    if fixed.contains('.') {
        fixed.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        fixed
    }
}

fn writer(dir: &Path, name: &str) -> Result<(csv::Writer<File>, PathBuf)> {
    let path = dir.join(name);
    let w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok((w, path))
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush().with_context(|| format!("writing {}", path.display()))
}

pub fn write_baseline(dir: &Path, network: &GridNetwork, sol: &PowerFlowSolution) -> Result<PathBuf> {
    let (mut w, path) = writer(dir, BASELINE_FILE)?;
    w.write_record(["Bus", "Name", "V pu", "Angle rad", "P kW", "Q kVAr"])?;
    for (i, bus) in network.buses().iter().enumerate() {
        w.write_record([
            i.to_string(),
            bus.name.clone(),
            sig6(sol.v[i]),
            sig6(sol.theta[i]),
            sig6(network.to_kw(sol.p_inj[i])),
            sig6(network.to_kw(sol.q_inj[i])),
        ])?;
    }
    finish(w, &path)?;
    Ok(path)
}

pub fn write_trace(dir: &Path, network: &GridNetwork, trace: &[TraceRow]) -> Result<PathBuf> {
    let (mut w, path) = writer(dir, TRACE_FILE)?;
    let mut header: Vec<String> = [
        "k",
        "objective",
        "max_residual",
        "iterate_change",
        "stationarity_gap",
        "v_pred_min",
        "v_pred_max",
        "v_est_min",
        "v_est_max",
        "disagreement",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for d in network.devices() {
        header.push(format!("p_kw_{}", d.bus));
        header.push(format!("q_kvar_{}", d.bus));
        header.push(format!("z_{}", d.bus));
    }
    w.write_record(&header)?;
    for row in trace {
        let mut rec = vec![
            row.k.to_string(),
            sig6(row.objective),
            sig6(row.max_residual),
            sig6(row.iterate_change),
            sig6(row.stationarity_gap),
            sig6(row.v_pred_min),
            sig6(row.v_pred_max),
            sig6(row.v_est_min),
            sig6(row.v_est_max),
            sig6(row.disagreement),
        ];
        for sp in &row.setpoints {
            rec.push(sig6(network.to_kw(sp.p)));
            rec.push(sig6(network.to_kw(sp.q)));
            rec.push(sig6(sp.z));
        }
        w.write_record(&rec)?;
    }
    finish(w, &path)?;
    Ok(path)
}

pub fn write_setpoints(dir: &Path, network: &GridNetwork, setpoints: &[DeviceSetpoint]) -> Result<PathBuf> {
    let (mut w, path) = writer(dir, SETPOINTS_FILE)?;
    w.write_record(SETPOINT_HEADER)?;
    for sp in setpoints {
        w.write_record([
            sp.bus.to_string(),
            sig6(network.to_kw(sp.p)),
            sig6(network.to_kw(sp.q)),
            sig6(sp.z),
        ])?;
    }
    finish(w, &path)?;
    Ok(path)
}

#[derive(Debug, Deserialize)]
struct SetpointRecord {
    #[serde(rename = "Bus")]
    bus: usize,
    #[serde(rename = "P kW")]
    p_kw: f64,
    #[serde(rename = "Q kVAr")]
    q_kvar: f64,
    z: f64,
}

pub fn read_setpoints(path: &Path, network: &GridNetwork) -> Result<Vec<DeviceSetpoint>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (line, rec) in r.deserialize::<SetpointRecord>().enumerate() {
        let rec = rec.with_context(|| format!("{}: record {}", path.display(), line + 1))?;
        anyhow::ensure!(
            (0.0..=1.0).contains(&rec.z),
            "{}: record {}: z = {} outside [0, 1]",
            path.display(),
            line + 1,
            rec.z
        );
        out.push(DeviceSetpoint {
            bus: rec.bus,
            p: network.from_kw(rec.p_kw),
            q: network.from_kw(rec.q_kvar),
            z: rec.z,
        });
    }
    Ok(out)
}

pub fn write_validation(dir: &Path, report: &ValidationReport) -> Result<PathBuf> {
    let path = dir.join(VALIDATION_FILE);
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_path(&path)
        .with_context(|| format!("creating {}", path.display()))?;
    w.write_record(VALIDATION_HEADER)?;
    for r in &report.rows {
        w.write_record([
            r.bus.to_string(),
            sig6(r.predicted),
            sig6(r.validated),
            sig6(r.signed_error),
            sig6(r.relative_error_pct),
        ])?;
    }
    w.write_record(["RMSE", &sig6(report.rmse)])?;
    finish(w, &path)?;
    Ok(path)
}

pub fn write_matrix(dir: &Path, name: &str, m: &voltvar::nalgebra::DMatrix<f64>) -> Result<PathBuf> {
    let (mut w, path) = writer(dir, name)?;
    let n = m.nrows() / 2;
    let labels: Vec<String> = (0..n)
        .map(|i| format!("theta_{i}"))
        .chain((0..n).map(|i| format!("v_{i}")))
        .collect();
    let mut header = vec!["row".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for r in 0..m.nrows() {
        let mut rec = vec![labels[r].clone()];
        rec.extend((0..m.ncols()).map(|c| sig6(m[(r, c)])));
        w.write_record(&rec)?;
    }
    finish(w, &path)?;
    Ok(path)
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub network: String,
    pub iterations: usize,
    pub converged: bool,
    pub eps_iterate: f64,
    pub baseline_min_v: f64,
    pub baseline_min_bus: usize,
    pub predicted_min_v: f64,
    pub validated_min_v: f64,
    pub validated_min_bus: usize,
    pub rmse: f64,
    pub final_objective: f64,
    pub setpoints: Vec<SetpointSummary>,
}

#[derive(Debug, Serialize)]
pub struct SetpointSummary {
    pub bus: usize,
    pub p_kw: f64,
    pub q_kvar: f64,
    pub z: f64,
}

pub fn write_summary(dir: &Path, summary: &Summary) -> Result<PathBuf> {
    let path = dir.join(SUMMARY_FILE);
    let mut f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(&mut f, summary)?;
    writeln!(f)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::sig6;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.800032729185748), "0.800033");
        assert_eq!(sig6(1.0), "1");
        assert_eq!(sig6(48.1), "48.1");
        assert_eq!(sig6(-1.2345678e-5), "-1.23457e-05");
        assert_eq!(sig6(999999.7), "1e+06");
        assert_eq!(sig6(123456.4), "123456");
        assert_eq!(sig6(0.0001), "0.0001");
        assert_eq!(sig6(0.0), "0");
    }
}
