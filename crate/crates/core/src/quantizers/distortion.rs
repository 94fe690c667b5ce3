//! Measured and closed-form quantization distortion.

use rand::RngCore;

use super::levels::LevelTable;
use super::vector::{dequantize, quantize_vector, QuantizerKind};
use crate::{Error, Result};

/// Monte Carlo mean of `‖Q(v) - v‖²` over `trials` quantizations.
pub fn empirical_distortion(
    kind: QuantizerKind,
    table: Option<&LevelTable>,
    v: &[f64],
    trials: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let trials = if kind.is_stochastic() { trials } else { 1 };
    let mut acc = 0.0;
    for _ in 0..trials {
        let q = quantize_vector(v, kind, table, rng)?;
        let back = dequantize(&q, table)?;
        acc += squared_error(&back, v);
    }
    Ok(acc / trials as f64)
}

pub fn squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Worst-case normalized distortion `E‖Q(v) - v‖² / ‖v‖²` for dimension `d`
/// and `s` levels.
pub fn distortion_bound(kind: QuantizerKind, d: usize, s: usize) -> Result<f64> {
    if d == 0 || s == 0 {
        return Err(Error::invalid("d and s must be positive"));
    }
    let (d, sf) = (d as f64, s as f64);
    Ok(match kind {
        QuantizerKind::LloydMax => d / (12.0 * sf * sf),
        QuantizerKind::Qsgd => (d / (sf * sf)).min(d.sqrt() / sf),
        QuantizerKind::Natural => {
            let p = (2.0f64).powi(s as i32 - 1);
            0.125 + (d.sqrt() / p).min(d / (p * p))
        }
        QuantizerKind::Lossless => 0.0,
        QuantizerKind::Alq => {
            return Err(Error::invalid("the ALQ bound is expressed on a level table"));
        }
    })
}

/// Largest ratio `ℓ_{j+1}/ℓ_j` over consecutive strictly positive levels.
pub fn max_level_ratio(table: &LevelTable) -> Result<f64> {
    let positive: Vec<f64> = table.levels().iter().copied().filter(|&l| l > 0.0).collect();
    if positive.len() < 2 {
        return Err(Error::Domain("the ratio form needs at least two positive levels".into()));
    }
    Ok(positive.windows(2).map(|w| w[1] / w[0]).fold(f64::MIN, f64::max))
}

/// Ratio form of the Lloyd-Max bound, `((ρ - 1)/(ρ + 1))²`.
pub fn ratio_distortion_bound(table: &LevelTable) -> Result<f64> {
    let rho = max_level_ratio(table)?;
    Ok(((rho - 1.0) / (rho + 1.0)).powi(2))
}

/// ALQ's bound on its own level table, `(ρ - 1)² / (4ρ)`.
pub fn alq_distortion_bound(table: &LevelTable) -> Result<f64> {
    let rho = max_level_ratio(table)?;
    Ok((rho - 1.0).powi(2) / (4.0 * rho))
}
