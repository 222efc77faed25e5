//! Run report, output files and the plain-text summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Pass,
    Fail,
    Inconclusive,
}

impl Outcome {
    pub fn label(self) -> &'static str {
        match self {
            Outcome::Pass => "PASS",
            Outcome::Fail => "FAIL",
            Outcome::Inconclusive => "INCONCLUSIVE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub outcome: Outcome,
    pub reason: String,
}

/// Deterministic part of a run: identical for every worker count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<String>,
    pub sections: BTreeMap<String, Value>,
    pub assertions: Vec<Assertion>,
    /// Simulated paths per stage.
    pub paths: BTreeMap<String, u64>,
}

impl RunReport {
    pub fn failed(&self) -> Vec<&Assertion> {
        self.assertions.iter().filter(|a| a.outcome == Outcome::Fail).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    /// Wall-clock seconds per stage; kept out of the report.
    pub timing: Vec<(String, f64)>,
    /// File name and contents of each data file.
    pub files: Vec<(String, String)>,
    pub config: String,
}

pub fn render_summary(report: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "schema {}  config {}  seed {}", report.schema_version, report.config_hash, report.seed);
    let _ = writeln!(s, "stages: {}", report.stages.join(", "));
    let total: u64 = report.paths.values().sum();
    let _ = writeln!(s, "simulated paths: {total}");
    let _ = writeln!(s);
    let width = report.assertions.iter().map(|a| a.name.chars().count()).max().unwrap_or(0);
    for a in &report.assertions {
        let pad = width - a.name.chars().count();
        let _ = writeln!(s, "{:<12} {}{}  {}", a.outcome.label(), a.name, " ".repeat(pad), a.reason);
    }
    let count = |o: Outcome| report.assertions.iter().filter(|a| a.outcome == o).count();
    let _ = writeln!(
        s,
        "\n{} passed, {} failed, {} inconclusive",
        count(Outcome::Pass),
        count(Outcome::Fail),
        count(Outcome::Inconclusive)
    );
    for (name, section) in &report.sections {
        let _ = writeln!(s, "\n[{name}]");
        if let Value::Object(map) = section {
            for (k, v) in map {
                match v {
                    Value::Number(_) | Value::Bool(_) | Value::String(_) => {
                        let _ = writeln!(s, "  {k} = {v}");
                    }
                    Value::Object(inner) => {
                        for (k2, v2) in inner {
                            if matches!(v2, Value::Number(_) | Value::Bool(_)) {
                                let _ = writeln!(s, "  {k}.{k2} = {v2}");
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    s
}

/// Writes `report.json`, `timing.json`, `summary.txt`, `config.toml` and the data files.
/// Every file other than the JSON ones starts with a `# config <hash>` line.
pub fn write_outputs(dir: &Path, out: &RunOutput) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), out.report.to_json())?;
    let hash = &out.report.config_hash;
    let stages: BTreeMap<&str, f64> = out.timing.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let timing = serde_json::json!({ "config_hash": hash, "seconds": stages });
    fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&timing)? + "\n")?;
    fs::write(dir.join("summary.txt"), render_summary(&out.report))?;
    fs::write(dir.join("config.toml"), format!("# config {hash}\n{}", out.config))?;
    for (name, text) in &out.files {
        fs::write(dir.join(name), format!("# config {hash}\n{text}"))?;
    }
    Ok(())
}

/// Re-renders the summary and gnuplot data files from an existing output directory.
pub fn render_report(dir: &Path) -> Result<RunReport, String> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let report: RunReport = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let io = |e: std::io::Error| e.to_string();
    fs::write(dir.join("summary.txt"), render_summary(&report)).map_err(io)?;
    for entry in fs::read_dir(dir).map_err(io)? {
        let p = entry.map_err(io)?.path();
        if p.extension().is_some_and(|e| e == "csv") {
            let csv = fs::read_to_string(&p).map_err(io)?;
            let mut dat = String::new();
            let mut header = true;
            for line in csv.lines() {
                if line.starts_with('#') {
                    dat.push_str(line);
                    dat.push('\n');
                    continue;
                }
                if header {
                    dat.push_str("# ");
                    header = false;
                }
                dat.push_str(&line.replace(',', " "));
                dat.push('\n');
            }
            fs::write(p.with_extension("dat"), dat).map_err(io)?;
        }
    }
    Ok(report)
}
