use serde::{Deserialize, Serialize};

use crate::learning::{DataSource, ModelKind};
use crate::quantizers::{QuantizerRegistry, QuantizerSettings};
use crate::topology::TopologyKind;
use crate::{Error, Result};

/// Learning rate used for IDX (MNIST-style) data when none is given.
pub const DEFAULT_ETA_IDX: f64 = 0.002;
/// Learning rate for every other data source.
pub const DEFAULT_ETA: f64 = 0.001;

/// Bounds for the loss-driven level schedule. The starting level count is the
/// run's `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveLevels {
    #[serde(default = "default_s_min")]
    pub s_min: usize,
    #[serde(default = "default_s_max")]
    pub s_max: usize,
}

fn default_s_min() -> usize {
    2
}

fn default_s_max() -> usize {
    1024
}

impl Default for AdaptiveLevels {
    fn default() -> Self {
        Self { s_min: default_s_min(), s_max: default_s_max() }
    }
}

/// Multiplies the learning rate by `factor` every `every` rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaDecay {
    pub factor: f64,
    pub every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n_nodes: usize,
    /// Local SGD steps per round.
    pub tau: usize,
    /// Learning rate; [`DEFAULT_ETA_IDX`] or [`DEFAULT_ETA`] when absent.
    #[serde(alias = "learning_rate")]
    pub eta: Option<f64>,
    pub eta_decay: Option<EtaDecay>,
    /// Rounds `K`.
    pub rounds: usize,
    /// Registry name of the quantizer.
    pub quantizer: String,
    /// Level count, or the starting level count when `adaptive` is set.
    pub s: usize,
    pub adaptive: Option<AdaptiveLevels>,
    pub topology: TopologyKind,
    pub model: ModelKind,
    pub data: DataSource,
    /// Share of each class pinned to a single node.
    pub label_fraction: f64,
    pub seed: u64,
    pub batch_size: usize,
    /// Charge `32 s` extra bits per message for data-dependent codebooks.
    pub codebook_overhead: bool,
    pub quantizer_settings: QuantizerSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_nodes: 10,
            tau: 4,
            eta: None,
            eta_decay: None,
            rounds: 50,
            quantizer: "lloyd_max".into(),
            s: 16,
            adaptive: None,
            topology: TopologyKind::uniform_ring(),
            model: ModelKind::Logistic,
            data: DataSource::default(),
            label_fraction: 0.5,
            seed: 0,
            batch_size: 32,
            codebook_overhead: false,
            quantizer_settings: QuantizerSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn base_eta(&self) -> f64 {
        self.eta.unwrap_or(if self.data.is_idx() { DEFAULT_ETA_IDX } else { DEFAULT_ETA })
    }

    /// Learning rate of round `k` (1-based).
    pub fn eta_at(&self, k: usize) -> f64 {
        let eta = self.base_eta();
        match self.eta_decay {
            Some(EtaDecay { factor, every }) if every > 0 => eta * factor.powi(((k - 1) / every) as i32),
            _ => eta,
        }
    }

    /// Checks every constraint, naming the offending key. A learning rate of
    /// zero is accepted here as a no-motion baseline.
    pub fn validate(&self, registry: &QuantizerRegistry) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_owned()));
        if self.n_nodes < 2 {
            return fail("n_nodes ≥ 2");
        }
        if self.tau < 1 {
            return fail("tau ≥ 1");
        }
        if self.rounds < 1 {
            return fail("rounds ≥ 1");
        }
        if let Some(eta) = self.eta {
            if !(eta >= 0.0 && eta.is_finite()) {
                return fail("eta ≥ 0 and finite");
            }
        }
        if let Some(d) = self.eta_decay {
            if !(d.factor > 0.0 && d.factor <= 1.0) || d.every < 1 {
                return fail("eta_decay.factor in (0, 1] and eta_decay.every ≥ 1");
            }
        }
        if self.s < 1 {
            return fail("s ≥ 1");
        }
        if self.batch_size < 1 {
            return fail("batch_size ≥ 1");
        }
        if !(0.0..=1.0).contains(&self.label_fraction) {
            return fail("label_fraction in [0, 1]");
        }
        if let TopologyKind::Ring { self_weight } = self.topology {
            if !(self_weight > 0.0 && self_weight < 1.0) {
                return fail("topology.self_weight in (0, 1)");
            }
        }
        if !registry.contains(&self.quantizer) {
            let known: Vec<&str> = registry.names().collect();
            return Err(Error::Config(format!("quantizer `{}` is not one of {}", self.quantizer, known.join(", "))));
        }
        if let Some(a) = self.adaptive {
            if a.s_min < 1 || a.s_min > self.s || self.s > a.s_max {
                return fail("adaptive needs 1 ≤ s_min ≤ s ≤ s_max");
            }
            let q = registry.create(&self.quantizer, &self.quantizer_settings)?;
            if q.fixed_levels().is_some() || q.kind() == crate::quantizers::QuantizerKind::Lossless {
                return Err(Error::Config(format!("quantizer `{}` has no adjustable level count", self.quantizer)));
            }
        }
        if let ModelKind::Mlp { hidden: 0 } = self.model {
            return fail("model.hidden ≥ 1");
        }
        Ok(())
    }
}
