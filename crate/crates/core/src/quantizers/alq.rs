//! Adaptive level quantization: coordinate descent on the level positions.

use super::levels::LevelTable;
use crate::{Error, Result};

/// A cumulative distribution on `[0, 1]`.
pub trait Cdf {
    fn cdf(&self, r: f64) -> f64;

    /// `∫_a^b (r - a) / (b - a) dΦ(r)`.
    ///
    /// The default integrates by parts, `Φ(b) - mean_{[a,b]} Φ`, with a fixed
    /// composite Simpson rule, which is exact enough for smooth `Φ`.
    fn ramp_integral(&self, a: f64, b: f64) -> f64 {
        const PANELS: usize = 512;
        let h = (b - a) / PANELS as f64;
        let mut acc = self.cdf(a) + self.cdf(b);
        for i in 1..PANELS {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * self.cdf(a + i as f64 * h);
        }
        let mean = acc * h / 3.0 / (b - a);
        self.cdf(b) - mean
    }

    /// Smallest `r` with `Φ(r) ≥ p`, by bisection.
    fn inverse(&self, p: f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while hi - lo > INVERSE_TOL {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) >= p {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }
}

const INVERSE_TOL: f64 = 1e-9;

/// An analytic CDF given as a closure.
pub struct FnCdf<F>(pub F);

impl<F: Fn(f64) -> f64> Cdf for FnCdf<F> {
    fn cdf(&self, r: f64) -> f64 {
        (self.0)(r)
    }
}

/// Weighted empirical CDF of a sample set.
#[derive(Debug, Clone)]
pub struct EmpiricalCdf {
    points: Vec<f64>,
    cumulative: Vec<f64>,
    total: f64,
}

impl EmpiricalCdf {
    pub fn new(samples: &[f64], weights: Option<&[f64]>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("empirical CDF needs samples"));
        }
        let mut pairs: Vec<(f64, f64)> = samples
            .iter()
            .enumerate()
            .map(|(i, &r)| (r, weights.map_or(1.0, |w| w[i])))
            .collect();
        if pairs.iter().any(|p| !p.0.is_finite() || !p.1.is_finite() || p.1 < 0.0) {
            return Err(Error::invalid("samples and weights must be finite, weights >= 0"));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cumulative = Vec::with_capacity(pairs.len());
        let mut acc = 0.0;
        for p in &pairs {
            acc += p.1;
            cumulative.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::invalid("weights sum to zero"));
        }
        Ok(Self { points: pairs.iter().map(|p| p.0).collect(), cumulative, total: acc })
    }

    fn weights_in(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let start = self.points.partition_point(|&r| r <= a);
        let end = self.points.partition_point(|&r| r <= b);
        (start..end).map(move |i| {
            let prev = if i == 0 { 0.0 } else { self.cumulative[i - 1] };
            (self.points[i], self.cumulative[i] - prev)
        })
    }
}

impl Cdf for EmpiricalCdf {
    fn cdf(&self, r: f64) -> f64 {
        let n = self.points.partition_point(|&x| x <= r);
        if n == 0 {
            0.0
        } else {
            self.cumulative[n - 1] / self.total
        }
    }

    /// Exact sum over the samples in `(a, b]`.
    fn ramp_integral(&self, a: f64, b: f64) -> f64 {
        let span = b - a;
        self.weights_in(a, b).map(|(r, w)| w * (r - a) / span).sum::<f64>() / self.total
    }
}

/// One sweep of coordinate descent over the interior levels, in ascending
/// order, each level moved to
/// `Φ⁻¹(Φ(ℓ_{j+1}) - ∫_{ℓ_{j-1}}^{ℓ_{j+1}} (r - ℓ_{j-1})/(ℓ_{j+1} - ℓ_{j-1}) dΦ(r))`.
/// The outermost levels stay fixed.
pub fn alq_coordinate_step(table: &LevelTable, cdf: &dyn Cdf) -> Result<LevelTable> {
    let mut levels = table.levels().to_vec();
    let s = levels.len();
    for j in 1..s.saturating_sub(1) {
        let (lo, hi) = (levels[j - 1], levels[j + 1]);
        levels[j] = alq_level_update(lo, hi, levels[j], cdf);
    }
    LevelTable::from_levels(levels)
}

/// The single-level update used by [`alq_coordinate_step`]. A degenerate
/// interval leaves the level unchanged; the result is kept strictly between
/// its neighbours.
pub fn alq_level_update(lo: f64, hi: f64, current: f64, cdf: &dyn Cdf) -> f64 {
    if !(hi > lo) {
        return current;
    }
    let target = cdf.cdf(hi) - cdf.ramp_integral(lo, hi);
    let next = cdf.inverse(target.clamp(0.0, 1.0));
    if next > lo && next < hi {
        next
    } else {
        current
    }
}
