//! Machine-readable outputs: per-round CSV trajectories, per-experiment
//! summary JSON, and the cross-experiment comparison table.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::ExperimentManifest;
use crate::sim::{self, detection_rate, metric_theta, ExperimentResult, RoundRecord};

pub const CSV_HEADER: &str =
    "round,global_accuracy,delta,err_norm,surface_norm,selected_malicious,selected_total,wallclock_ms";

/// Write the round trajectory. Floats go through `Display`, whose shortest
/// representation parses back to the identical bit pattern.
pub fn write_rounds_csv(path: &Path, records: &[RoundRecord]) -> Result<()> {
    let mut out = String::with_capacity(records.len() * 64 + CSV_HEADER.len());
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.round,
            r.global_accuracy,
            r.delta,
            r.err_norm,
            r.surface_norm,
            r.selected_malicious,
            r.selected_total,
            r.wallclock_ms
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_rounds_csv(path: &Path) -> Result<Vec<RoundRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::config(format!(
                "{}: unexpected CSV header {other:?}",
                path.display()
            )))
        }
    }
    let mut records = Vec::new();
    for (no, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::config(format!(
                "{}: line {} has {} fields",
                path.display(),
                no + 2,
                fields.len()
            )));
        }
        let parse_err = |what: &str| {
            Error::config(format!("{}: line {}: bad {what}", path.display(), no + 2))
        };
        records.push(RoundRecord {
            round: fields[0].parse().map_err(|_| parse_err("round"))?,
            global_accuracy: fields[1].parse().map_err(|_| parse_err("accuracy"))?,
            delta: fields[2].parse().map_err(|_| parse_err("delta"))?,
            err_norm: fields[3].parse().map_err(|_| parse_err("err_norm"))?,
            surface_norm: fields[4].parse().map_err(|_| parse_err("surface_norm"))?,
            selected_malicious: fields[5].parse().map_err(|_| parse_err("selected_malicious"))?,
            selected_total: fields[6].parse().map_err(|_| parse_err("selected_total"))?,
            wallclock_ms: fields[7].parse().map_err(|_| parse_err("wallclock_ms"))?,
        });
    }
    Ok(records)
}

/// Per-experiment summary written next to the rounds CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub id: String,
    pub agr: String,
    pub attack: String,
    pub target_accuracy: f64,
    /// Percent.
    pub final_accuracy: f64,
    pub final_delta: f64,
    pub detection_rate: Option<f64>,
    pub seed: u64,
    pub rounds: u32,
    pub rounds_csv: String,
    pub config: sim::SimConfig,
}

pub fn experiment_summary(id: &str, result: &ExperimentResult, csv_name: &str) -> Summary {
    Summary {
        id: id.to_string(),
        agr: result.config.agr.kind.name().to_string(),
        attack: result.config.attack.kind.name().to_string(),
        target_accuracy: result.config.target_accuracy,
        final_accuracy: result.final_accuracy * 100.0,
        final_delta: result.final_delta,
        detection_rate: detection_rate(&result.records),
        seed: result.seed,
        rounds: result.config.rounds,
        rounds_csv: csv_name.to_string(),
        config: result.config.clone(),
    }
}

/// Serialize and write one summary JSON.
pub fn write_summary_json(path: &Path, summary: &Summary) -> Result<()> {
    let json = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::config(format!("summary serialization: {e}")))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Run every experiment in a manifest, writing `<id>.rounds.csv` and
/// `<id>.summary.json` under the output directory. Failures are isolated:
/// remaining experiments still run, and the error list is returned.
pub fn run_manifest(manifest: &ExperimentManifest) -> Result<Vec<(String, Option<Error>)>> {
    fs::create_dir_all(&manifest.out_dir).map_err(|e| Error::io(&manifest.out_dir, e))?;
    let mut statuses = Vec::with_capacity(manifest.experiments.len());
    for (id, config) in &manifest.experiments {
        let status = run_one(&manifest.out_dir, id, config).err();
        if let Some(e) = &status {
            eprintln!("experiment {id} failed: {e}");
        }
        statuses.push((id.clone(), status));
    }
    Ok(statuses)
}

fn run_one(out_dir: &Path, id: &str, config: &sim::SimConfig) -> Result<()> {
    let result = sim::run_experiment(config)?;
    let csv_name = format!("{id}.rounds.csv");
    write_rounds_csv(&out_dir.join(&csv_name), &result.records)?;
    let summary = experiment_summary(id, &result, &csv_name);
    write_summary_json(&out_dir.join(format!("{id}.summary.json")), &summary)
}

/// One comparison row: an aggregation rule crossed with every attack seen.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub agr: String,
    pub target_accuracy: f64,
    /// attack name -> (final accuracy percent, delta percent)
    pub cells: BTreeMap<String, (f64, f64)>,
    /// baseline attack name -> theta against the controller's delta
    pub theta_vs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

/// Scan a results directory for summary JSONs and build the comparison
/// table. Malformed summaries are skipped with a warning on stderr.
pub fn summarize(dir: &Path) -> Result<ComparisonTable> {
    let mut summaries: Vec<Summary> = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(".summary.json")))
        .collect();
    paths.sort();
    for path in paths {
        match fs::read_to_string(&path)
            .map_err(|e| Error::io(&path, e))
            .and_then(|text| {
                serde_json::from_str::<Summary>(&text)
                    .map_err(|e| Error::config(format!("{}: {e}", path.display())))
            }) {
            Ok(s) => summaries.push(s),
            Err(e) => eprintln!("skipping {}: {e}", path.display()),
        }
    }
    if summaries.is_empty() {
        return Err(Error::config(format!(
            "no readable summaries under {}",
            dir.display()
        )));
    }

    let mut groups: BTreeMap<(String, String), Vec<&Summary>> = BTreeMap::new();
    for s in &summaries {
        groups
            .entry((s.agr.clone(), format!("{}", s.target_accuracy)))
            .or_default()
            .push(s);
    }
    let mut rows = Vec::new();
    for ((agr, _), group) in groups {
        let mut cells = BTreeMap::new();
        for s in &group {
            cells.insert(s.attack.clone(), (s.final_accuracy, s.final_delta));
        }
        let mut theta_vs = BTreeMap::new();
        if let Some((_, fedsa_delta)) = cells.get("fedsa") {
            for (attack, (_, delta)) in &cells {
                if attack != "fedsa" && attack != "none" {
                    theta_vs.insert(attack.clone(), metric_theta(*delta, *fedsa_delta));
                }
            }
        }
        rows.push(ComparisonRow {
            agr,
            target_accuracy: group[0].target_accuracy,
            cells,
            theta_vs,
        });
    }
    Ok(ComparisonTable { rows })
}

pub fn render_table(table: &ComparisonTable, mut out: impl Write) -> std::io::Result<()> {
    let mut attacks: Vec<String> = table
        .rows
        .iter()
        .flat_map(|r| r.cells.keys().cloned())
        .collect();
    attacks.sort();
    attacks.dedup();
    write!(out, "{:<18} {:>8}", "agr", "target")?;
    for a in &attacks {
        write!(out, " {a:>22}")?;
    }
    writeln!(out)?;
    for row in &table.rows {
        write!(out, "{:<18} {:>8.2}", row.agr, row.target_accuracy)?;
        for a in &attacks {
            match row.cells.get(a) {
                Some((acc, delta)) => {
                    let theta = row
                        .theta_vs
                        .get(a)
                        .map(|t| format!(" x{t:.1}"))
                        .unwrap_or_default();
                    write!(out, " {:>22}", format!("{acc:.2} ({delta:+.2}){theta}"))?;
                }
                None => write!(out, " {:>22}", "-")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(round: u32) -> RoundRecord {
        RoundRecord {
            round,
            global_accuracy: 0.123456789012345678,
            delta: -3.0000000001,
            err_norm: 1.5e-7,
            surface_norm: 0.25,
            selected_malicious: 1,
            selected_total: 45,
            wallclock_ms: 12.5,
        }
    }

    #[test]
    fn csv_round_trips_at_full_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let records = vec![record(0), record(1)];
        write_rounds_csv(&path, &records).unwrap();
        let back = read_rounds_csv(&path).unwrap();
        assert_eq!(records, back);
    }

    #[test]
    fn csv_header_is_fixed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_rounds_csv(&path, &[record(0)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "round,global_accuracy,delta,err_norm,surface_norm,selected_malicious,selected_total,wallclock_ms\n"
        ));
    }
}
