//! CSV and summary rendering. Floats are written with 17 significant digits
//! so files are bit-exact records of the computed values.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use brwre::experiments::{ExperimentReport, Table, Value};

pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::Int(i) => i.to_string(),
        Value::Float(x) => format_float(*x),
        Value::Bool(b) => b.to_string(),
        Value::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
        Value::Text(s) => s.clone(),
    }
}

pub fn render_csv(table: &Table) -> String {
    let mut out = table.columns.join(",");
    out.push('\n');
    for row in &table.rows {
        let cells: Vec<String> = row.iter().map(csv_cell).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn toml_value(v: &Value) -> String {
    match v {
        Value::Int(i) => i.to_string(),
        Value::Float(x) => format_float(*x),
        Value::Bool(b) => b.to_string(),
        Value::Text(s) => toml::Value::String(s.clone()).to_string(),
    }
}

fn header(experiment: &str, hash: &str, seed: u64) -> String {
    format!(
        "experiment = {}\nconfig_hash = \"{hash}\"\nseed = \"{seed}\"\n",
        toml::Value::String(experiment.into())
    )
}

pub fn render_summary(report: &ExperimentReport, hash: &str, seed: u64, exit_code: i32) -> String {
    let mut out = header(report.experiment, hash, seed);
    out.push_str(&format!("verdict = \"{}\"\n", report.verdict.as_str()));
    out.push_str(&format!("exit_code = {exit_code}\n"));
    out.push_str("\n[results]\n");
    for (k, v) in &report.summary {
        out.push_str(&format!("{k} = {}\n", toml_value(v)));
    }
    out
}

pub fn render_error_summary(experiment: &str, hash: &str, seed: u64, error: &str, exit_code: i32) -> String {
    let mut out = header(experiment, hash, seed);
    out.push_str("verdict = \"error\"\n");
    out.push_str(&format!("exit_code = {exit_code}\n"));
    out.push_str(&format!("error = {}\n", toml::Value::String(error.into())));
    out
}

pub fn stem(dir: &Path, experiment: &str, hash: &str) -> PathBuf {
    dir.join(format!("{experiment}-{hash}"))
}

/// Writes `<stem>.csv` and `<stem>.summary.toml`; returns both paths.
pub fn write_report(
    dir: &Path,
    report: &ExperimentReport,
    hash: &str,
    seed: u64,
    exit_code: i32,
) -> io::Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let base = stem(dir, report.experiment, hash);
    let csv = base.with_extension("csv");
    let summary = base.with_extension("summary.toml");
    fs::write(&csv, render_csv(&report.table))?;
    fs::write(&summary, render_summary(report, hash, seed, exit_code))?;
    Ok((csv, summary))
}

pub fn write_error(dir: &Path, experiment: &str, hash: &str, seed: u64, error: &str, exit_code: i32) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let summary = stem(dir, experiment, hash).with_extension("summary.toml");
    fs::write(&summary, render_error_summary(experiment, hash, seed, error, exit_code))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use brwre::experiments::Verdict;

    #[test]
    fn floats_carry_seventeen_digits() {
        assert_eq!(format_float(0.1), "1.0000000000000001e-1");
        assert_eq!(format_float(f64::NEG_INFINITY), "-inf");
        let back: f64 = format_float(std::f64::consts::PI).parse().unwrap();
        assert_eq!(back, std::f64::consts::PI);
    }

    #[test]
    fn summary_is_valid_toml() {
        let mut table = Table::new(&["a", "b"]);
        table.push(vec![Value::from(1usize), Value::from("x,y")]);
        let report = ExperimentReport {
            experiment: "rates",
            verdict: Verdict::Pass,
            table,
            summary: vec![("v", Value::from(f64::NAN)), ("w", Value::from(-0.5)), ("s", Value::from("q\"t"))],
        };
        let text = render_summary(&report, "00ff", u64::MAX, 0);
        let parsed: toml::Table = toml::from_str(&text).unwrap();
        assert_eq!(parsed["seed"].as_str(), Some("18446744073709551615"));
        assert_eq!(parsed["results"]["w"].as_float(), Some(-0.5));
        assert_eq!(render_csv(&report.table), "a,b\n1,\"x,y\"\n");
    }
}
