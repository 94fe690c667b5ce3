use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use lmdfl_core::engine::{csv_row, MetricsLog, Simulation, CSV_HEADER};
use lmdfl_core::quantizers::QuantizerRegistry;
use serde::Serialize;

use crate::spec::{Arm, ExperimentSpec};
use crate::{CliError, Result};

/// What one arm produced. A failed arm keeps the rounds it completed.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmOutcome {
    pub name: String,
    pub log: MetricsLog,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub arm: String,
    pub status: String,
    pub rounds: usize,
    pub final_loss: Option<f64>,
    pub mean_distortion: Option<f64>,
    pub total_bits: u64,
    pub rounds_to_target: Option<usize>,
    /// Mean cumulative bits per edge when the target was first reached.
    pub bits_to_target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub target_loss: Option<f64>,
    pub rows: Vec<SummaryRow>,
}

fn run_arm(arm: &Arm, registry: &QuantizerRegistry) -> ArmOutcome {
    let mut sim = match Simulation::new(arm.config.clone(), registry) {
        Ok(sim) => sim,
        Err(e) => return ArmOutcome { name: arm.name.clone(), log: MetricsLog::default(), error: Some(e.to_string()) },
    };
    let mut error = None;
    while sim.round() < arm.config.rounds {
        if let Err(e) = sim.step() {
            error = Some(e.to_string());
            break;
        }
    }
    ArmOutcome { name: arm.name.clone(), log: sim.into_log(), error }
}

/// Runs every arm, concurrently, and returns the outcomes in spec order.
pub fn execute(spec: &ExperimentSpec) -> Vec<ArmOutcome> {
    let registry = QuantizerRegistry::default();
    std::thread::scope(|scope| {
        let handles: Vec<_> = spec.arms.iter().map(|arm| scope.spawn(|| run_arm(arm, &registry))).collect();
        handles.into_iter().map(|h| h.join().expect("arm thread panicked")).collect()
    })
}

/// Final losses, bits-to-target and status per arm. The target is
/// `target_factor` times the best final loss among arms that finished.
pub fn summarize(outcomes: &[ArmOutcome], target_factor: f64) -> Summary {
    let best = outcomes
        .iter()
        .filter(|o| o.error.is_none())
        .filter_map(|o| o.log.final_loss())
        .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.min(x))));
    let target_loss = best.map(|b| b * target_factor);
    let rows = outcomes
        .iter()
        .map(|o| {
            let hit = target_loss.and_then(|t| o.log.first_reaching(t));
            SummaryRow {
                arm: o.name.clone(),
                status: o.error.clone().map_or_else(|| "ok".to_owned(), |e| format!("failed: {e}")),
                rounds: o.log.last().map_or(0, |r| r.k),
                final_loss: o.log.final_loss(),
                mean_distortion: o.log.mean_distortion(),
                total_bits: o.log.last().map_or(0, |r| r.total_bits),
                rounds_to_target: hit.map(|r| r.k),
                bits_to_target: hit.map(|r| r.mean_bits_per_edge),
            }
        })
        .collect();
    Summary { target_loss, rows }
}

/// Writes `path` by way of a temporary sibling so readers never see a partial
/// file.
fn write_atomic(path: &Path, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    let tmp = path.with_extension("partial");
    fs::write(&tmp, &buf).map_err(|e| CliError::Io(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn opt(x: Option<impl ToString>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes `<arm>.jsonl` per arm, `metrics.csv` (one row per arm and round)
/// and `summary.csv` into `dir`. Returns the files written.
pub fn write_outputs(dir: &Path, outcomes: &[ArmOutcome], summary: &Summary) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();
    for o in outcomes {
        let path = dir.join(format!("{}.jsonl", o.name));
        write_atomic(&path, |buf| Ok(o.log.write_jsonl(buf)?))?;
        written.push(path);
    }

    let path = dir.join("metrics.csv");
    write_atomic(&path, |buf| {
        writeln!(buf, "arm,{CSV_HEADER}")?;
        for o in outcomes {
            for r in &o.log.records {
                writeln!(buf, "{},{}", o.name, csv_row(r))?;
            }
        }
        Ok(())
    })?;
    written.push(path);

    let path = dir.join("summary.csv");
    write_atomic(&path, |buf| {
        writeln!(buf, "arm,status,rounds,final_loss,mean_distortion,total_bits,target_loss,rounds_to_target,bits_to_target")?;
        for r in &summary.rows {
            writeln!(
                buf,
                "{},{},{},{},{},{},{},{},{}",
                r.arm,
                csv_field(&r.status),
                r.rounds,
                opt(r.final_loss),
                opt(r.mean_distortion),
                r.total_bits,
                opt(summary.target_loss),
                opt(r.rounds_to_target),
                opt(r.bits_to_target)
            )?;
        }
        Ok(())
    })?;
    written.push(path);
    Ok(written)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Runs the spec and writes its outputs into `dir`.
pub fn run_experiment(spec: &ExperimentSpec, dir: &Path) -> Result<(Vec<ArmOutcome>, Summary)> {
    let outcomes = execute(spec);
    let summary = summarize(&outcomes, spec.target_factor);
    write_outputs(dir, &outcomes, &summary)?;
    Ok((outcomes, summary))
}

/// Loads every `*.jsonl` log in `dir`, named after its file stem.
pub fn load_logs(dir: &Path) -> Result<Vec<ArmOutcome>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Io(format!("{}: no .jsonl logs found", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| {
            let file = fs::File::open(&p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            let log = MetricsLog::read_jsonl(BufReader::new(file))
                .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(ArmOutcome { name, log, error: None })
        })
        .collect()
}

/// Fixed-width text rendering of a summary.
pub fn render_summary(summary: &Summary) -> String {
    let mut out = String::new();
    match summary.target_loss {
        Some(t) => out.push_str(&format!("target loss {t:.6}\n")),
        None => out.push_str("target loss: no arm finished\n"),
    }
    let width = summary.rows.iter().map(|r| r.arm.len()).max().unwrap_or(3).max(3);
    out.push_str(&format!(
        "{:<width$}  {:>6}  {:>10}  {:>10}  {:>14}  {:>9}  {:>14}  status\n",
        "arm", "rounds", "final", "distortion", "total bits", "to target", "bits to target"
    ));
    let num = |x: Option<f64>, prec: usize| x.map_or("-".to_owned(), |v| format!("{v:.prec$}"));
    for r in &summary.rows {
        out.push_str(&format!(
            "{:<width$}  {:>6}  {:>10}  {:>10}  {:>14}  {:>9}  {:>14}  {}\n",
            r.arm,
            r.rounds,
            num(r.final_loss, 6),
            r.mean_distortion.map_or("-".to_owned(), |d| format!("{d:.3e}")),
            r.total_bits,
            r.rounds_to_target.map_or("-".to_owned(), |k| k.to_string()),
            num(r.bits_to_target, 0),
            r.status
        ));
    }
    out
}
