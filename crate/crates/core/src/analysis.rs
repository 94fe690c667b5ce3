//! Closed-form convergence calculators and estimators for the constants they
//! need.
//!
//! All bounds bound the average squared gradient norm of the averaged model
//! over the run. Calculators never refuse to evaluate outside their
//! preconditions on the learning rate; they attach warnings instead.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::learning::{ModelShape, Shard};
use crate::{Error, Result};

/// Values above this are reported as infinite.
const ALPHA_CEILING: f64 = 1e12;

/// Everything the bounds depend on. Unused fields may stay at their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundInputs {
    /// Smoothness constant `L`.
    pub l: f64,
    /// Minibatch gradient variance `σ²`.
    pub sigma2: f64,
    /// Gradient divergence across nodes `δ²`.
    pub delta2: f64,
    pub n_nodes: usize,
    pub tau: usize,
    pub eta: f64,
    pub zeta: f64,
    /// Quantizer distortion factor `ω`.
    pub omega: f64,
    /// Rounds `K`.
    pub rounds: usize,
    /// Model dimension `d`.
    pub dim: usize,
    /// Quantization levels `s`.
    pub s: f64,
    /// `F(u_1) - F_inf`.
    pub f_gap: f64,
    /// Total bit budget `B`.
    pub budget_bits: f64,
    /// Per-round budget `B_0` for the round-wise level choice.
    pub budget0_bits: Option<f64>,
}

impl Default for BoundInputs {
    fn default() -> Self {
        Self {
            l: 1.0,
            sigma2: 1.0,
            delta2: 0.0,
            n_nodes: 10,
            tau: 4,
            eta: 0.1,
            zeta: 0.0,
            omega: 0.0,
            rounds: 100,
            dim: 100,
            s: 16.0,
            f_gap: 1.0,
            budget_bits: 1e6,
            budget0_bits: None,
        }
    }
}

/// A bound value plus any violated preconditions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluated {
    pub value: f64,
    pub warnings: Vec<String>,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive and finite, got {v}")))
    }
}

fn counts(inp: &BoundInputs) -> Result<(f64, f64)> {
    if inp.n_nodes == 0 || inp.tau == 0 {
        return Err(Error::Domain("n_nodes and tau must be at least 1".into()));
    }
    Ok((inp.n_nodes as f64, inp.tau as f64))
}

/// `ζ²/(1 - ζ²) + ζ/(1 - ζ)²`.
pub fn alpha(zeta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&zeta) {
        return Err(Error::Domain(format!("alpha needs 0 <= zeta < 1, got {zeta}")));
    }
    let a = zeta * zeta / (1.0 - zeta * zeta) + zeta / ((1.0 - zeta) * (1.0 - zeta));
    Ok(if a > ALPHA_CEILING { f64::INFINITY } else { a })
}

/// Largest constant learning rate for which the quantized DFL bound holds.
pub fn qdfl_lr_cap(inp: &BoundInputs) -> Result<f64> {
    positive("L", inp.l)?;
    let (n, tau) = counts(inp)?;
    let a = alpha(inp.zeta)?;
    if a.is_infinite() {
        return Ok(0.0);
    }
    let w = inp.omega;
    let k = 2.0 * a + 1.0;
    let root = ((w + n).powi(2) + 4.0 * n * n * k).sqrt();
    Ok((root - w - n) / (2.0 * n * inp.l * tau * k))
}

fn lr_warning(eta: f64, cap: f64, what: &str) -> Option<String> {
    (eta > cap).then(|| format!("{what} {eta} exceeds the cap {cap}"))
}

/// `2F/(ηKτ) + Lητσ²(ω+N)/N + (2α+2/3)L²η²σ²τ² + δ²`.
pub fn qdfl_convergence_bound(inp: &BoundInputs) -> Result<Evaluated> {
    positive("eta", inp.eta)?;
    if inp.rounds == 0 {
        return Err(Error::Domain("rounds must be at least 1".into()));
    }
    let (n, tau) = counts(inp)?;
    let a = alpha(inp.zeta)?;
    let (l, eta, s2, k) = (inp.l, inp.eta, inp.sigma2, inp.rounds as f64);
    let value = 2.0 * inp.f_gap / (eta * k * tau)
        + l * eta * tau * s2 * (inp.omega + n) / n
        + (2.0 * a + 2.0 / 3.0) * l * l * eta * eta * s2 * tau * tau
        + inp.delta2;
    let warnings = lr_warning(eta, qdfl_lr_cap(inp)?, "eta").into_iter().collect();
    Ok(Evaluated { value, warnings })
}

/// The Lloyd-Max DFL bound at `η = 1/(L√K)`, `δ = 0`, `ω = d/(12s²)`:
/// `2LF/(τ√K) + τσ²d/(12s²N√K) + τσ²/√K + (2α+2/3)σ²τ²/K`.
pub fn lmdfl_convergence_bound(inp: &BoundInputs) -> Result<f64> {
    positive("s", inp.s)?;
    if inp.rounds == 0 {
        return Err(Error::Domain("rounds must be at least 1".into()));
    }
    let (n, tau) = counts(inp)?;
    let a = alpha(inp.zeta)?;
    let (k, s2, d, s) = (inp.rounds as f64, inp.sigma2, inp.dim as f64, inp.s);
    let sk = k.sqrt();
    Ok(2.0 * inp.l * inp.f_gap / (tau * sk)
        + tau * s2 * d / (12.0 * s * s * n * sk)
        + tau * s2 / sk
        + (2.0 * a + 2.0 / 3.0) * s2 * tau * tau / k)
}

/// Constants of the fixed-budget bound `A1 log2(2s) + A2/s² + A3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BudgetBound {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl BudgetBound {
    pub fn at(&self, s: f64) -> f64 {
        self.a1 * (2.0 * s).log2() + self.a2 / (s * s) + self.a3
    }
}

pub fn budget_bound_constants(inp: &BoundInputs) -> Result<BudgetBound> {
    positive("budget_bits", inp.budget_bits)?;
    positive("eta", inp.eta)?;
    if inp.dim == 0 {
        return Err(Error::Domain("dim must be at least 1".into()));
    }
    let (n, tau) = counts(inp)?;
    let a = alpha(inp.zeta)?;
    let (l, eta, s2, d) = (inp.l, inp.eta, inp.sigma2, inp.dim as f64);
    let a1 = 4.0 * inp.f_gap * d / (eta * tau * inp.budget_bits);
    let a2 = l * eta * tau * s2 * d / (12.0 * n);
    let a3 = a1 / d * (d + 32.0)
        + (2.0 * a + 2.0 / 3.0) * l * l * eta * eta * s2 * tau * tau
        + inp.delta2
        + l * eta * tau * s2;
    Ok(BudgetBound { a1, a2, a3 })
}

/// `A4 = Lη²τ²σ²B`.
fn a4(inp: &BoundInputs, budget: f64) -> f64 {
    let tau = inp.tau as f64;
    inp.l * inp.eta * inp.eta * tau * tau * inp.sigma2 * budget
}

/// Level count minimizing [`BudgetBound::at`]: `√(A4 / (24 N log2(e) F))`.
///
/// Setting the derivative `A1/(s ln 2) - 2A2/s³` to zero gives this value. A
/// variant with `N²` in place of `N` is [`optimal_s_n_squared`].
pub fn optimal_s(inp: &BoundInputs) -> Result<f64> {
    let n = counts(inp)?.0;
    positive("f_gap", inp.f_gap)?;
    Ok((a4(inp, inp.budget_bits) / (24.0 * n * std::f64::consts::LOG2_E * inp.f_gap)).sqrt())
}

/// `√(A4 / (A5 F))` with `A5 = 24 N² log2(e)`.
pub fn optimal_s_n_squared(inp: &BoundInputs) -> Result<f64> {
    let n = counts(inp)?.0;
    positive("f_gap", inp.f_gap)?;
    Ok((a4(inp, inp.budget_bits) / (24.0 * n * n * std::f64::consts::LOG2_E * inp.f_gap)).sqrt())
}

/// Round-wise optimum for a per-round budget `B_0` at current loss gap
/// `f_current`, with the same constant as [`optimal_s`].
pub fn per_round_optimal_s(inp: &BoundInputs, f_current: f64) -> Result<f64> {
    let n = counts(inp)?.0;
    let b0 = inp.budget0_bits.ok_or_else(|| Error::Domain("budget0_bits is required".into()))?;
    positive("budget0_bits", b0)?;
    positive("f_current", f_current)?;
    Ok((a4(inp, b0) / (24.0 * n * std::f64::consts::LOG2_E * f_current)).sqrt())
}

/// Bound for per-round learning rates `η_k` and level counts `s_k`:
/// `2F/(τΣη) + Lτσ²Σ(η²d/s²)/(12NΣη) + Lτσ²Ση²/Ση + (2α+2/3)L²τ²σ²Ση³/Ση`.
pub fn variable_lr_bound(inp: &BoundInputs, etas: &[f64], levels: &[f64]) -> Result<Evaluated> {
    if etas.is_empty() || etas.len() != levels.len() {
        return Err(Error::invalid("need equally long, nonempty eta and s sequences"));
    }
    let (n, tau) = counts(inp)?;
    let a = alpha(inp.zeta)?;
    let (l, s2, d) = (inp.l, inp.sigma2, inp.dim as f64);
    let mut warnings = Vec::new();
    let (mut e1, mut e2, mut e2q, mut e3) = (0.0, 0.0, 0.0, 0.0);
    for (k, (&eta, &s)) in etas.iter().zip(levels).enumerate() {
        positive("eta_k", eta)?;
        positive("s_k", s)?;
        e1 += eta;
        e2 += eta * eta;
        e2q += eta * eta * d / (s * s);
        e3 += eta * eta * eta;
        let cap = qdfl_lr_cap(&BoundInputs { omega: d / (12.0 * s * s), ..inp.clone() })?;
        warnings.extend(lr_warning(eta, cap, &format!("eta_{}", k + 1)));
    }
    let value = 2.0 * inp.f_gap / (tau * e1)
        + l * tau * s2 * e2q / (12.0 * n * e1)
        + l * tau * s2 * e2 / e1
        + (2.0 * a + 2.0 / 3.0) * l * l * tau * tau * s2 * e3 / e1;
    Ok(Evaluated { value, warnings })
}

/// Access to local and stochastic gradients at arbitrary points.
pub trait GradientOracle {
    fn nodes(&self) -> usize;
    /// Share `D_i / D` of node `i` in the global objective.
    fn weight(&self, node: usize) -> f64;
    /// Exact local gradient `∇F_i(x)`.
    fn local_gradient(&self, node: usize, x: &[f64]) -> Result<Vec<f64>>;
    /// One minibatch gradient at `x`.
    fn stochastic_gradient(&self, node: usize, x: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>>;
}

/// Gradients of a model over per-node shards.
pub struct ShardOracle<'a> {
    pub shape: ModelShape,
    pub shards: &'a [Shard],
    pub batch_size: usize,
}

impl GradientOracle for ShardOracle<'_> {
    fn nodes(&self) -> usize {
        self.shards.len()
    }

    fn weight(&self, node: usize) -> f64 {
        let total: usize = self.shards.iter().map(|s| s.data.len()).sum();
        self.shards[node].data.len() as f64 / total as f64
    }

    fn local_gradient(&self, node: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.shape.full_gradient(x, &self.shards[node].data)
    }

    fn stochastic_gradient(&self, node: usize, x: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let data = &self.shards[node].data;
        self.shape.minibatch_gradient(x, data, self.batch_size.min(data.len()), rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantEstimates {
    pub l: f64,
    pub sigma2: f64,
    pub delta2: f64,
}

/// Estimates `L`, `σ²` and `δ²` from gradients at the given parameter
/// snapshots. `draws` minibatches per node and snapshot feed `σ²`.
pub fn estimate_constants(
    oracle: &dyn GradientOracle,
    snapshots: &[Vec<f64>],
    draws: usize,
    rng: &mut dyn RngCore,
) -> Result<ConstantEstimates> {
    if snapshots.len() < 2 {
        return Err(Error::invalid("need at least two parameter snapshots"));
    }
    if draws == 0 || oracle.nodes() == 0 {
        return Err(Error::invalid("need at least one node and one draw"));
    }
    let mut global = Vec::with_capacity(snapshots.len());
    let (mut var_sum, mut var_count) = (0.0, 0usize);
    let (mut div_sum, mut div_count) = (0.0, 0usize);
    for x in snapshots {
        let locals: Vec<Vec<f64>> = (0..oracle.nodes()).map(|i| oracle.local_gradient(i, x)).collect::<Result<_>>()?;
        let mut g = vec![0.0; x.len()];
        for (i, gi) in locals.iter().enumerate() {
            crate::learning::axpy(oracle.weight(i), gi, &mut g);
        }
        for (i, gi) in locals.iter().enumerate() {
            for _ in 0..draws {
                let sg = oracle.stochastic_gradient(i, x, rng)?;
                var_sum += dist2(&sg, gi);
                var_count += 1;
            }
            div_sum += dist2(gi, &g);
            div_count += 1;
        }
        global.push(g);
    }
    let mut l: f64 = 0.0;
    for a in 0..snapshots.len() {
        for b in a + 1..snapshots.len() {
            let dx = dist2(&snapshots[a], &snapshots[b]).sqrt();
            if dx > 0.0 {
                l = l.max(dist2(&global[a], &global[b]).sqrt() / dx);
            }
        }
    }
    Ok(ConstantEstimates { l, sigma2: var_sum / var_count as f64, delta2: div_sum / div_count as f64 })
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn worked() -> BoundInputs {
        BoundInputs { l: 1.0, sigma2: 1.0, delta2: 0.0, n_nodes: 10, tau: 4, eta: 0.1, zeta: 0.0, omega: 0.0, rounds: 100, f_gap: 1.0, ..Default::default() }
    }

    #[test]
    fn alpha_values() {
        assert_eq!(alpha(0.0).unwrap(), 0.0);
        assert!((alpha(0.5).unwrap() - (0.25 / 0.75 + 2.0)).abs() < 1e-15);
        assert_eq!(alpha(1.0 - 1e-9).unwrap(), f64::INFINITY);
        assert!(alpha(1.0).is_err());
        assert!(alpha(-0.1).is_err());
    }

    #[test]
    fn lr_cap_without_noise_or_mixing() {
        for n in [1, 3, 10] {
            let cap = qdfl_lr_cap(&BoundInputs { n_nodes: n, l: 2.0, tau: 3, ..worked() }).unwrap();
            assert!((cap - (5f64.sqrt() - 1.0) / (2.0 * 2.0 * 3.0)).abs() < 1e-15);
        }
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let cap = qdfl_lr_cap(&BoundInputs { omega: i as f64 * 0.5, zeta: 0.3, ..worked() }).unwrap();
            assert!(cap < prev && cap > 0.0);
            prev = cap;
        }
        assert_eq!(qdfl_lr_cap(&BoundInputs { zeta: 1.0 - 1e-13, ..worked() }).unwrap(), 0.0);
    }

    #[test]
    fn quantized_bound_worked_example() {
        let b = qdfl_convergence_bound(&worked()).unwrap();
        let want = 0.05 + 0.4 + 2.0 / 3.0 * 0.01 * 16.0;
        assert!((b.value - want).abs() < 1e-12);
        assert!((b.value - 0.5567).abs() < 1e-4);
        // cap is (√5-1)/8 ≈ 0.1545
        assert!(b.warnings.is_empty());
        let fast = qdfl_convergence_bound(&BoundInputs { eta: 1.0, ..worked() }).unwrap();
        assert_eq!(fast.warnings.len(), 1);

        let quiet = qdfl_convergence_bound(&BoundInputs { sigma2: 0.0, ..worked() }).unwrap();
        assert!((quiet.value - 2.0 / (0.1 * 100.0 * 4.0)).abs() < 1e-15);
    }

    #[test]
    fn quantized_bound_is_monotone() {
        let base = BoundInputs { zeta: 0.4, omega: 1.0, delta2: 0.1, ..worked() };
        let at = |f: &dyn Fn(f64) -> BoundInputs| -> Vec<f64> {
            (0..20).map(|i| qdfl_convergence_bound(&f(i as f64 * 0.04)).unwrap().value).collect()
        };
        let scans = [
            at(&|x| BoundInputs { omega: x * 10.0, ..base.clone() }),
            at(&|x| BoundInputs { sigma2: x, ..base.clone() }),
            at(&|x| BoundInputs { delta2: x, ..base.clone() }),
            at(&|x| BoundInputs { zeta: x, ..base.clone() }),
        ];
        for s in scans {
            assert!(s.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn lmdfl_bound_worked_example() {
        let inp = BoundInputs { dim: 100, s: 10.0, ..worked() };
        let want = 0.05 + 400.0 / 120_000.0 + 0.4 + 2.0 / 3.0 * 16.0 / 100.0;
        assert!((lmdfl_convergence_bound(&inp).unwrap() - want).abs() < 1e-12);
        assert!((want - 0.5600).abs() < 1e-4);
    }

    #[test]
    fn budget_constants() {
        let inp = BoundInputs { dim: 100, budget_bits: 1e6, ..worked() };
        let c = budget_bound_constants(&inp).unwrap();
        assert!((c.a1 - 1e-3).abs() < 1e-15);
        assert!((c.a2 - 100.0 / 300.0).abs() < 1e-12);
        let want_a3 = 1e-5 * 132.0 + 2.0 / 3.0 * 0.01 * 16.0 + 0.4;
        assert!((c.a3 - want_a3).abs() < 1e-12);
    }

    #[test]
    fn optimal_levels() {
        let inp = BoundInputs { budget_bits: 1e6, ..worked() };
        let n_squared = optimal_s_n_squared(&inp).unwrap();
        assert!((n_squared - 6.80).abs() < 0.01, "{n_squared}");
        let s = optimal_s(&inp).unwrap();
        let quad = optimal_s(&BoundInputs { f_gap: 4.0, ..inp.clone() }).unwrap();
        assert!((quad - s / 2.0).abs() < 1e-12);
        assert!(optimal_s(&BoundInputs { f_gap: 0.0, ..inp.clone() }).is_err());

        let with_b0 = BoundInputs { budget0_bits: Some(5e4), ..inp };
        let first = per_round_optimal_s(&with_b0, 1.0).unwrap();
        assert!((per_round_optimal_s(&with_b0, 1.0).unwrap() / first - 1.0).abs() < 1e-15);
        assert!((per_round_optimal_s(&with_b0, 0.25).unwrap() / first - 2.0).abs() < 1e-12);
    }

    #[test]
    fn variable_rates_collapse_to_fixed() {
        let inp = BoundInputs { dim: 100, ..worked() };
        let k = inp.rounds;
        let v = variable_lr_bound(&inp, &vec![inp.eta; k], &vec![8.0; k]).unwrap();
        let fixed = qdfl_convergence_bound(&BoundInputs { omega: 100.0 / (12.0 * 64.0), ..inp.clone() }).unwrap();
        assert!((v.value - fixed.value).abs() < 1e-12);

        let eta = 1.0 / (k as f64).sqrt();
        let v = variable_lr_bound(&inp, &vec![eta; k], &vec![10.0; k]).unwrap();
        let fixed = lmdfl_convergence_bound(&BoundInputs { s: 10.0, ..inp.clone() }).unwrap();
        assert!((v.value - fixed).abs() < 1e-12);

        assert!(variable_lr_bound(&inp, &[], &[]).is_err());
    }

    #[test]
    fn variable_rates_two_rounds_by_hand() {
        let inp = BoundInputs { dim: 100, ..worked() };
        let v = variable_lr_bound(&inp, &[0.1, 0.05], &[4.0, 8.0]).unwrap();
        let se = 0.15;
        let want = 2.0 / (4.0 * se)
            + 4.0 * (0.01 * 100.0 / 16.0 + 0.0025 * 100.0 / 64.0) / (12.0 * 10.0 * se)
            + 4.0 * (0.01 + 0.0025) / se
            + 2.0 / 3.0 * 16.0 * (0.001 + 0.000125) / se;
        assert!((v.value - want).abs() < 1e-12);
    }

    #[test]
    fn halving_rates_shrink_cubic_term() {
        let etas: Vec<f64> = (0..40).map(|k| 0.1 * 0.5f64.powi(k / 10)).collect();
        let cubic = |e: &[f64]| e.iter().map(|x| x.powi(3)).sum::<f64>() / e.iter().sum::<f64>();
        assert!(cubic(&etas) < cubic(&[0.1; 40]));
    }

    struct Quadratic {
        diag: Vec<f64>,
        centers: Vec<Vec<f64>>,
        noise: f64,
    }

    impl GradientOracle for Quadratic {
        fn nodes(&self) -> usize {
            self.centers.len()
        }
        fn weight(&self, _: usize) -> f64 {
            1.0 / self.centers.len() as f64
        }
        fn local_gradient(&self, node: usize, x: &[f64]) -> Result<Vec<f64>> {
            Ok(x.iter().zip(&self.diag).zip(&self.centers[node]).map(|((x, h), c)| h * (x - c)).collect())
        }
        fn stochastic_gradient(&self, node: usize, x: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
            let mut g = self.local_gradient(node, x)?;
            for v in &mut g {
                *v += self.noise * (rng.random::<f64>() - 0.5);
            }
            Ok(g)
        }
    }

    #[test]
    fn quadratic_constants() {
        let mut rng = seeded(5);
        let snaps: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let q = Quadratic { diag: vec![0.5, 2.0, 3.0], centers: vec![vec![0.0; 3]; 3], noise: 0.0 };
        let est = estimate_constants(&q, &snaps, 4, &mut rng).unwrap();
        assert!(est.l <= 3.0 + 1e-6 && est.l > 0.5);
        assert_eq!(est.sigma2, 0.0);
        // the weighted mean of equal gradients is exact up to rounding
        assert!(est.delta2 < 1e-24);

        let noisy = Quadratic { noise: 1.0, centers: vec![vec![0.0; 3], vec![1.0; 3]], ..q };
        let est = estimate_constants(&noisy, &snaps, 50, &mut rng).unwrap();
        assert!(est.sigma2 > 0.0);
        assert!(est.delta2 > 0.0);
        assert!(estimate_constants(&noisy, &snaps[..1], 1, &mut rng).is_err());
    }
}
