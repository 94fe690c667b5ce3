//! Unbiased stochastic scalar quantizers on `[0, 1]`.

use rand::Rng;

use super::levels::LevelTable;
use crate::{Error, Result};

fn check_unit(r: f64) -> Result<()> {
    if (0.0..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(Error::invalid(format!("r = {r} is outside [0, 1]")))
    }
}

/// Index into `{0, 1/s, …, 1}` chosen by QSGD's randomized rounding.
pub fn qsgd_index<R: Rng + ?Sized>(r: f64, s: usize, rng: &mut R) -> Result<usize> {
    check_unit(r)?;
    if s == 0 {
        return Err(Error::invalid("s must be at least 1"));
    }
    let scaled = r * s as f64;
    let lower = scaled.floor();
    let j = lower as usize;
    if j >= s {
        return Ok(s);
    }
    // Round up with probability s*r - j, so the expectation is r.
    let p_up = scaled - lower;
    Ok(if p_up > 0.0 && rng.random::<f64>() < p_up { j + 1 } else { j })
}

/// QSGD scalar quantizer: a random value in `{0, 1/s, …, 1}` whose expectation
/// is `r`.
pub fn qsgd_scalar<R: Rng + ?Sized>(r: f64, s: usize, rng: &mut R) -> Result<f64> {
    Ok(qsgd_index(r, s, rng)? as f64 / s as f64)
}

/// Index into `{0, 2^{1-s}, …, 1/2, 1}` (index 0 is zero, index `m ≥ 1` is
/// `2^{m-s}`) chosen by unbiased rounding between the two enclosing levels.
pub fn natural_index<R: Rng + ?Sized>(r: f64, s: usize, rng: &mut R) -> Result<usize> {
    check_unit(r)?;
    if s == 0 {
        return Err(Error::invalid("s must be at least 1"));
    }
    if r == 0.0 {
        return Ok(0);
    }
    let level = |m: usize| if m == 0 { 0.0 } else { (2.0f64).powi(m as i32 - s as i32) };
    // Smallest m with level(m) >= r.
    let mut upper = 1;
    while level(upper) < r {
        upper += 1;
    }
    let (hi, lo) = (level(upper), level(upper - 1));
    if hi == r {
        return Ok(upper);
    }
    let p_up = (r - lo) / (hi - lo);
    Ok(if rng.random::<f64>() < p_up { upper } else { upper - 1 })
}

/// Natural-compression scalar quantizer over the binary geometric grid.
pub fn natural_scalar<R: Rng + ?Sized>(r: f64, s: usize, rng: &mut R) -> Result<f64> {
    let m = natural_index(r, s, rng)?;
    Ok(if m == 0 { 0.0 } else { (2.0f64).powi(m as i32 - s as i32) })
}

/// Unbiased rounding of `r` to one of the two table levels enclosing it.
/// Values below the first level or above the last are clamped to it.
pub fn stochastic_round<R: Rng + ?Sized>(r: f64, table: &LevelTable, rng: &mut R) -> Result<usize> {
    check_unit(r)?;
    let levels = table.levels();
    let upper = levels.partition_point(|&l| l < r);
    if upper == 0 {
        return Ok(0);
    }
    if upper == levels.len() {
        return Ok(levels.len() - 1);
    }
    let (lo, hi) = (levels[upper - 1], levels[upper]);
    if hi == r {
        return Ok(upper);
    }
    let p_up = (r - lo) / (hi - lo);
    Ok(if rng.random::<f64>() < p_up { upper } else { upper - 1 })
}
