use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// State after `k` completed rounds; `k = 0` is the starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub k: usize,
    /// `F(u_{k+1})`: full training loss of the node average.
    pub global_loss: f64,
    /// `F_i` of each node's own parameters on its own shard.
    pub node_losses: Vec<f64>,
    /// Mean normalized distortion `‖Q(v) - v‖² / ‖v‖²` of this round's payloads.
    pub mean_distortion: Option<f64>,
    /// Cumulative payload bits on each outgoing edge, indexed by sender.
    pub bits_per_edge: Vec<u64>,
    /// Cumulative codebook bits per outgoing edge (zero unless charged).
    pub codebook_bits_per_edge: Vec<u64>,
    /// Mean of `bits_per_edge` over senders.
    pub mean_bits_per_edge: f64,
    /// Cumulative bits over all directed edges.
    pub total_bits: u64,
    /// Level count each node used this round.
    pub s: Vec<usize>,
    pub eta: f64,
    /// Mean squared distance of node parameters from their average.
    pub consensus_error: f64,
    /// Held-out accuracy of the node average; set on the last round only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
}

impl RoundRecord {
    pub fn mean_s(&self) -> f64 {
        if self.s.is_empty() {
            0.0
        } else {
            self.s.iter().sum::<usize>() as f64 / self.s.len() as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub records: Vec<RoundRecord>,
}

impl MetricsLog {
    pub fn last(&self) -> Option<&RoundRecord> {
        self.records.last()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.last().map(|r| r.global_loss)
    }

    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.last().and_then(|r| r.test_accuracy)
    }

    /// Mean over rounds of the per-round mean distortion.
    pub fn mean_distortion(&self) -> Option<f64> {
        let v: Vec<f64> = self.records.iter().filter_map(|r| r.mean_distortion).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// First record whose loss is at or below `target`.
    pub fn first_reaching(&self, target: f64) -> Option<&RoundRecord> {
        self.records.iter().find(|r| r.global_loss <= target)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r).map_err(|e| Error::Format(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r = serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
            records.push(r);
        }
        Ok(Self { records })
    }

    /// One row per round with the scalar columns of [`CSV_HEADER`].
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for r in &self.records {
            writeln!(out, "{}", csv_row(r))?;
        }
        Ok(())
    }
}

pub const CSV_HEADER: &str = "round,global_loss,mean_distortion,mean_bits_per_edge,total_bits,mean_s,eta,consensus_error";

pub fn csv_row(r: &RoundRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        r.k,
        r.global_loss,
        r.mean_distortion.map(|x| x.to_string()).unwrap_or_default(),
        r.mean_bits_per_edge,
        r.total_bits,
        r.mean_s(),
        r.eta,
        r.consensus_error
    )
}
