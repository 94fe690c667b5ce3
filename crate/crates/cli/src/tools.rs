//! One-shot utilities: codebook fitting, topology inspection and bound
//! evaluation. Each returns a JSON value for printing.

use std::path::Path;

use lmdfl_core::analysis::{
    alpha, lmdfl_convergence_bound, optimal_s, optimal_s_n_squared, per_round_optimal_s, qdfl_convergence_bound,
    qdfl_lr_cap, budget_bound_constants, variable_lr_bound, BoundInputs,
};
use lmdfl_core::quantizers::fit_lloyd_max;
use lmdfl_core::topology::{build_mixing, read_edge_list, TopologyKind};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::{CliError, Result};

/// Parses whitespace- or comma-separated numbers.
pub fn parse_samples(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            let x: f64 = t.parse().map_err(|_| CliError::Config(format!("not a number: `{t}`")))?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(CliError::Config(format!("non-finite sample `{t}`")))
            }
        })
        .collect()
}

/// Fits a Lloyd-Max codebook. With `normalize`, samples are divided by their
/// largest magnitude first and the fit is on `[0, 1]` magnitudes.
pub fn fit_quantizer(samples: &[f64], s: usize, tol: f64, max_iter: usize, normalize: bool) -> Result<Value> {
    let scaled: Vec<f64> = if normalize {
        let max = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if max == 0.0 {
            return Err(CliError::Config("cannot normalize all-zero samples".into()));
        }
        samples.iter().map(|x| x.abs() / max).collect()
    } else {
        samples.to_vec()
    };
    let fit = fit_lloyd_max(&scaled, None, s, tol, max_iter)?;
    Ok(json!({
        "levels": fit.table.levels(),
        "boundaries": fit.table.boundaries(),
        "distortion": fit.distortion(),
        "iterations": fit.iterations,
        "converged": fit.converged,
    }))
}

pub fn fit_quantizer_file(path: &Path, s: usize, tol: f64, max_iter: usize, normalize: bool) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    fit_quantizer(&parse_samples(&text)?, s, tol, max_iter, normalize)
}

/// Mixing matrix of an edge list with Metropolis-Hastings weights. The node
/// count is one more than the largest index.
pub fn zeta(edges: &[(usize, usize)]) -> Result<Value> {
    let n = edges.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0);
    let mixing = build_mixing(&TopologyKind::Custom { edges: edges.to_vec() }, n)?;
    Ok(json!({
        "nodes": n,
        "edges": edges.len(),
        "zeta": mixing.zeta(),
        "connected": mixing.is_connected(),
    }))
}

pub fn zeta_file(path: &Path) -> Result<Value> {
    zeta(&read_edge_list(path)?)
}

/// Per-round learning rates and level counts for the variable-rate bound.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub etas: Vec<f64>,
    pub levels: Vec<f64>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsRequest {
    #[serde(default)]
    pub inputs: BoundInputs,
    /// Current loss gap for the round-wise level choice.
    #[serde(default)]
    pub f_current: Option<f64>,
    #[serde(default)]
    pub schedule: Option<Schedule>,
}

fn entry<T: Serialize>(r: lmdfl_core::Result<T>) -> Value {
    match r {
        Ok(v) => serde_json::to_value(v).unwrap_or(Value::Null),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

/// Evaluates every calculator that applies. A calculator whose inputs are out
/// of its domain reports `{"error": ...}` in place of a value.
pub fn bounds(req: &BoundsRequest) -> Value {
    let inp = &req.inputs;
    let mut out = serde_json::Map::new();
    out.insert("inputs".into(), entry(Ok::<_, lmdfl_core::Error>(inp)));
    out.insert("alpha".into(), entry(alpha(inp.zeta)));
    out.insert("qdfl_lr_cap".into(), entry(qdfl_lr_cap(inp)));
    out.insert("qdfl_bound".into(), entry(qdfl_convergence_bound(inp)));
    out.insert("lmdfl_bound".into(), entry(lmdfl_convergence_bound(inp)));
    out.insert("budget_constants".into(), entry(budget_bound_constants(inp)));
    out.insert("optimal_s".into(), entry(optimal_s(inp)));
    out.insert("optimal_s_n_squared".into(), entry(optimal_s_n_squared(inp)));
    if let Some(f) = req.f_current {
        out.insert("per_round_optimal_s".into(), entry(per_round_optimal_s(inp, f)));
    }
    if let Some(sched) = &req.schedule {
        out.insert("variable_lr_bound".into(), entry(variable_lr_bound(inp, &sched.etas, &sched.levels)));
    }
    Value::Object(out)
}

pub fn bounds_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let req: BoundsRequest = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| CliError::Config(format!("{}: `{}`: {}", path.display(), e.path(), e.inner())))?;
    Ok(bounds(&req))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_accept_commas_and_newlines() {
        assert_eq!(parse_samples("1, 2\n3.5 -4").unwrap(), vec![1.0, 2.0, 3.5, -4.0]);
        assert!(parse_samples("1 x").is_err());
        assert!(parse_samples("nan").is_err());
    }

    #[test]
    fn two_level_fit_of_two_clusters() {
        let samples: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 0.1 } else { 0.9 }).collect();
        let v = fit_quantizer(&samples, 2, 1e-9, 100, false).unwrap();
        let levels: Vec<f64> = serde_json::from_value(v["levels"].clone()).unwrap();
        assert!((levels[0] - 0.1).abs() < 1e-12 && (levels[1] - 0.9).abs() < 1e-12, "{levels:?}");
        assert!(v["distortion"].as_f64().unwrap() < 1e-20);
    }

    #[test]
    fn zeta_of_complete_and_split_graphs() {
        let complete: Vec<(usize, usize)> = vec![(0, 1), (0, 2), (1, 2)];
        let v = zeta(&complete).unwrap();
        assert!(v["zeta"].as_f64().unwrap() < 1e-12);
        assert_eq!(v["connected"], true);
        let split = zeta(&[(0, 1), (2, 3)]).unwrap();
        assert_eq!(split["nodes"], 4);
        assert_eq!(split["connected"], false);
        assert!((split["zeta"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_domain_calculators_report_errors() {
        let req = BoundsRequest {
            inputs: BoundInputs { zeta: 1.0, ..Default::default() },
            f_current: Some(0.5),
            ..Default::default()
        };
        let v = bounds(&req);
        assert!(v["alpha"]["error"].is_string(), "{v}");
        assert!(v["optimal_s"].is_f64());
        // no per-round budget given
        assert!(v["per_round_optimal_s"]["error"].is_string());
        assert!(v.get("variable_lr_bound").is_none());
    }
}
