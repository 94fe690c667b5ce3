//! Level tables and Lloyd-Max codebook fitting on the unit interval.

use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Identifies the table a payload was encoded against.
pub type CodebookId = u64;

/// Reconstruction levels `ℓ_1 < … < ℓ_s` on `[0, 1]` together with the bin
/// boundaries `0 = b_0 < b_1 < … < b_s = 1`. Level `j` owns the bin
/// `(b_{j-1}, b_j]`; zero belongs to the first bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTable {
    levels: Vec<f64>,
    boundaries: Vec<f64>,
}

impl LevelTable {
    pub fn new(levels: Vec<f64>, boundaries: Vec<f64>) -> Result<Self> {
        let s = levels.len();
        if s == 0 {
            return Err(Error::invalid("a level table needs at least one level"));
        }
        if boundaries.len() != s + 1 {
            return Err(Error::invalid(format!(
                "{} levels need {} boundaries, got {}",
                s,
                s + 1,
                boundaries.len()
            )));
        }
        if levels.iter().chain(&boundaries).any(|x| !x.is_finite()) {
            return Err(Error::invalid("level table entries must be finite"));
        }
        if boundaries[0] != 0.0 || boundaries[s] != 1.0 {
            return Err(Error::invalid("boundaries must start at 0 and end at 1"));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("levels must be strictly increasing"));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("boundaries must be strictly increasing"));
        }
        for (j, &l) in levels.iter().enumerate() {
            let (lo, hi) = (boundaries[j], boundaries[j + 1]);
            let inside = (l > lo || (j == 0 && l == lo)) && l <= hi;
            if !inside {
                return Err(Error::invalid(format!(
                    "level {j} = {l} lies outside its bin ({lo}, {hi}]"
                )));
            }
        }
        Ok(Self { levels, boundaries })
    }

    /// Builds a table whose interior boundaries are the midpoints between
    /// adjacent levels.
    pub fn from_levels(levels: Vec<f64>) -> Result<Self> {
        let boundaries = midpoint_boundaries(&levels);
        Self::new(levels, boundaries)
    }

    /// `{0, 1/s, …, 1}`: the uniform grid used by QSGD.
    pub fn uniform_grid(s: usize) -> Result<Self> {
        if s == 0 {
            return Err(Error::invalid("s must be at least 1"));
        }
        Self::from_levels((0..=s).map(|j| j as f64 / s as f64).collect())
    }

    /// `{0, 2^{1-s}, …, 1/2, 1}`: the binary geometric grid of natural
    /// compression.
    pub fn geometric_grid(s: usize) -> Result<Self> {
        if s == 0 {
            return Err(Error::invalid("s must be at least 1"));
        }
        let mut levels = vec![0.0];
        levels.extend((1..=s).map(|m| (2.0f64).powi(m as i32 - s as i32)));
        Self::from_levels(levels)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, index: usize) -> Option<f64> {
        self.levels.get(index).copied()
    }

    pub fn id(&self) -> CodebookId {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.levels.len().hash(&mut h);
        for x in self.levels.iter().chain(&self.boundaries) {
            x.to_bits().hash(&mut h);
        }
        h.finish()
    }

    /// Index of the bin containing `r`. No range check.
    pub(crate) fn bin_of(&self, r: f64) -> usize {
        let s = self.levels.len();
        let interior = &self.boundaries[1..s];
        interior.partition_point(|&b| b < r).min(s - 1)
    }
}

pub(crate) fn midpoint_boundaries(levels: &[f64]) -> Vec<f64> {
    let mut b = Vec::with_capacity(levels.len() + 1);
    b.push(0.0);
    b.extend(levels.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    b.push(1.0);
    b
}

/// Deterministic Lloyd-Max scalar quantizer: the index of the bin that holds
/// `r`, with `r = 0` mapped to the first level.
pub fn quantize_scalar_lm(r: f64, table: &LevelTable) -> Result<usize> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::invalid(format!("r = {r} is outside [0, 1]")));
    }
    Ok(table.bin_of(r))
}

/// Default relative-decrease tolerance for [`fit_lloyd_max`].
pub const DEFAULT_TOL: f64 = 1e-6;
/// Default iteration cap for [`fit_lloyd_max`].
pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Serialize)]
pub struct LloydMaxFit {
    pub table: LevelTable,
    /// Weighted mean squared error of the accepted table after every
    /// iteration. Non-increasing.
    pub distortion_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LloydMaxFit {
    pub fn distortion(&self) -> f64 {
        *self.distortion_history.last().expect("at least one iteration")
    }
}

/// Fits `s` levels to the empirical distribution of `samples` by alternating
/// the centroid and midpoint conditions, starting from uniform boundaries.
///
/// Bins that capture no sample keep their midpoint as the level. Iteration
/// stops once the relative decrease of the distortion drops below `tol`, or
/// after `max_iter` iterations. An iteration that would increase the
/// distortion (possible only through rounding) is discarded.
pub fn fit_lloyd_max(
    samples: &[f64],
    weights: Option<&[f64]>,
    s: usize,
    tol: f64,
    max_iter: usize,
) -> Result<LloydMaxFit> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot fit a codebook to zero samples"));
    }
    if s == 0 {
        return Err(Error::invalid("s must be at least 1"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tol must be positive"));
    }
    if max_iter == 0 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    if let Some(w) = weights {
        if w.len() != samples.len() {
            return Err(Error::invalid("weights and samples differ in length"));
        }
    }
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(samples.len());
    for (i, &r) in samples.iter().enumerate() {
        if !r.is_finite() {
            return Err(Error::invalid(format!("sample {i} is not finite")));
        }
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::invalid(format!("sample {i} = {r} is outside [0, 1]")));
        }
        let w = weights.map_or(1.0, |w| w[i]);
        if !w.is_finite() || w < 0.0 {
            return Err(Error::invalid(format!("weight {i} must be finite and >= 0")));
        }
        points.push((r, w));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = points.iter().map(|p| p.1).sum();
    if !(total > 0.0) {
        return Err(Error::invalid("sample weights sum to zero"));
    }

    let mut boundaries: Vec<f64> = (0..=s).map(|j| j as f64 / s as f64).collect();
    let mut levels: Vec<f64> = Vec::new();
    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        let next_levels = centroids(&points, &boundaries);
        let next_boundaries = midpoint_boundaries(&next_levels);
        let dist = weighted_distortion(&points, &next_levels, &next_boundaries) / total;

        if let Some(&prev) = history.last() {
            if dist > prev {
                converged = true;
                break;
            }
            levels = next_levels;
            boundaries = next_boundaries;
            history.push(dist);
            if prev == 0.0 || (prev - dist) / prev < tol {
                converged = true;
                break;
            }
        } else {
            levels = next_levels;
            boundaries = next_boundaries;
            history.push(dist);
            if dist == 0.0 {
                converged = true;
                break;
            }
        }
    }

    let table = LevelTable::new(levels, boundaries)?;
    Ok(LloydMaxFit { table, distortion_history: history, iterations, converged })
}

/// Weighted centroid of each bin of `boundaries`; empty bins fall back to the
/// bin midpoint.
fn centroids(points: &[(f64, f64)], boundaries: &[f64]) -> Vec<f64> {
    let s = boundaries.len() - 1;
    let mut out = Vec::with_capacity(s);
    let mut start = 0;
    for j in 0..s {
        let hi = boundaries[j + 1];
        let end = if j + 1 == s {
            points.len()
        } else {
            start + points[start..].partition_point(|p| p.0 <= hi)
        };
        let (mut w, mut wr) = (0.0, 0.0);
        for &(r, pw) in &points[start..end] {
            w += pw;
            wr += pw * r;
        }
        let mid = 0.5 * (boundaries[j] + hi);
        out.push(if w > 0.0 { (wr / w).clamp(boundaries[j], hi) } else { mid });
        start = end;
    }
    // Keep the strict ordering the table invariant needs when a centroid
    // lands on a shared boundary.
    for j in 1..s {
        if out[j] <= out[j - 1] {
            out[j] = f64::from_bits(out[j - 1].to_bits() + 1);
        }
    }
    out
}

fn weighted_distortion(points: &[(f64, f64)], levels: &[f64], boundaries: &[f64]) -> f64 {
    let s = levels.len();
    let mut acc = 0.0;
    let mut start = 0;
    for j in 0..s {
        let end = if j + 1 == s {
            points.len()
        } else {
            start + points[start..].partition_point(|p| p.0 <= boundaries[j + 1])
        };
        for &(r, w) in &points[start..end] {
            let e = levels[j] - r;
            acc += w * e * e;
        }
        start = end;
    }
    acc
}

/// Weighted mean squared error of `table` on `samples`, using the table's own
/// bins.
pub fn table_distortion(samples: &[f64], weights: Option<&[f64]>, table: &LevelTable) -> f64 {
    let mut acc = 0.0;
    let mut total = 0.0;
    for (i, &r) in samples.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let e = table.levels[table.bin_of(r)] - r;
        acc += w * e * e;
        total += w;
    }
    acc / total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_uniform(n: usize) -> Vec<f64> {
        (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect()
    }

    #[test]
    fn two_levels_on_uniform_density() {
        let fit = fit_lloyd_max(&dense_uniform(20_000), None, 2, 1e-9, 200).unwrap();
        let l = fit.table.levels();
        assert!((l[0] - 0.25).abs() < 1e-4, "{l:?}");
        assert!((l[1] - 0.75).abs() < 1e-4, "{l:?}");
        assert!((fit.table.boundaries()[1] - 0.5).abs() < 1e-4);
    }

    #[test]
    fn single_level_is_weighted_mean() {
        let samples = [0.1, 0.4, 0.9];
        let weights = [1.0, 2.0, 1.0];
        let fit = fit_lloyd_max(&samples, Some(&weights), 1, 1e-6, 10).unwrap();
        let mean = (0.1 + 0.8 + 0.9) / 4.0;
        assert!((fit.table.levels()[0] - mean).abs() < 1e-15);
    }

    #[test]
    fn each_sample_its_own_centroid() {
        let fit = fit_lloyd_max(&[0.2, 0.8], None, 2, 1e-6, 10).unwrap();
        assert_eq!(fit.table.levels(), &[0.2, 0.8]);
        assert_eq!(fit.distortion(), 0.0);
    }

    #[test]
    fn more_levels_than_distinct_samples_uses_empty_bin_rule() {
        let fit = fit_lloyd_max(&[0.5, 0.5, 0.5], None, 4, 1e-6, 50).unwrap();
        assert_eq!(fit.table.len(), 4);
        assert_eq!(fit.distortion(), 0.0);
        assert!(fit.table.levels().contains(&0.5));
    }

    #[test]
    fn rejects_bad_samples() {
        assert!(fit_lloyd_max(&[0.1, f64::NAN], None, 2, 1e-6, 10).is_err());
        assert!(fit_lloyd_max(&[1.5], None, 2, 1e-6, 10).is_err());
        assert!(fit_lloyd_max(&[], None, 2, 1e-6, 10).is_err());
        assert!(fit_lloyd_max(&[0.1], None, 0, 1e-6, 10).is_err());
    }

    #[test]
    fn scalar_quantizer_bins() {
        let t = LevelTable::from_levels(vec![0.25, 0.75]).unwrap();
        assert_eq!(quantize_scalar_lm(0.3, &t).unwrap(), 0);
        assert_eq!(quantize_scalar_lm(0.5, &t).unwrap(), 0);
        assert_eq!(quantize_scalar_lm(0.0, &t).unwrap(), 0);
        assert_eq!(quantize_scalar_lm(0.51, &t).unwrap(), 1);
        assert_eq!(quantize_scalar_lm(1.0, &t).unwrap(), 1);
        assert!(quantize_scalar_lm(1.01, &t).is_err());
        assert!(quantize_scalar_lm(-0.01, &t).is_err());
    }

    #[test]
    fn table_validation() {
        assert!(LevelTable::new(vec![0.5, 0.4], vec![0.0, 0.45, 1.0]).is_err());
        assert!(LevelTable::new(vec![0.3, 0.4], vec![0.0, 0.5, 1.0]).is_err());
        assert!(LevelTable::new(vec![0.3], vec![0.1, 1.0]).is_err());
        assert!(LevelTable::uniform_grid(4).is_ok());
        assert_eq!(LevelTable::geometric_grid(2).unwrap().levels(), &[0.0, 0.5, 1.0]);
    }
}
