use std::sync::Arc;

use rand::RngCore;
use rayon::prelude::*;

use super::config::RunConfig;
use super::metrics::{MetricsLog, RoundRecord};
use super::node::{communicate_phase, local_update_phase, CommReport, NodeState};
use super::schedule::adaptive_level_schedule;
use crate::learning::{partition_noniid, Dataset, ModelShape, Shard};
use crate::quantizers::{Quantizer, QuantizerRegistry};
use crate::rng::{stream, Purpose, StreamRng};
use crate::topology::{build_mixing, MixingMatrix};
use crate::{Error, Result};

/// A configured run that can be advanced one round at a time.
pub struct Simulation {
    config: RunConfig,
    shape: ModelShape,
    mixing: MixingMatrix,
    nodes: Vec<NodeState>,
    quantizers: Vec<Box<dyn Quantizer>>,
    test: Option<Dataset>,
    /// `D_i / D`.
    weights: Vec<f64>,
    initial_local: Vec<f64>,
    bits: Vec<u64>,
    codebook_bits: Vec<u64>,
    last_report: Option<CommReport>,
    log: MetricsLog,
}

impl Simulation {
    /// Validates the config, loads and partitions the data and records the
    /// starting point as round 0.
    pub fn new(config: RunConfig, registry: &QuantizerRegistry) -> Result<Self> {
        config.validate(registry)?;
        let data_seed = stream(config.seed, 0, 0, Purpose::Data).next_u64();
        let (train, test) = config.data.load(data_seed)?;
        let part_seed = stream(config.seed, 0, 0, Purpose::Partition).next_u64();
        let shards = partition_noniid(&train, config.n_nodes, config.label_fraction, part_seed)?;
        Self::with_shards(config, registry, shards, test)
    }

    /// Like [`Simulation::new`] with caller-supplied shards (one per node).
    pub fn with_shards(config: RunConfig, registry: &QuantizerRegistry, shards: Vec<Shard>, test: Option<Dataset>) -> Result<Self> {
        config.validate(registry)?;
        if shards.len() != config.n_nodes {
            return Err(Error::Config(format!("{} shards for {} nodes", shards.len(), config.n_nodes)));
        }
        let shape = ModelShape::for_data(config.model, &shards[0].data)?;
        if let Some(t) = &test {
            if t.width() != shape.inputs {
                return Err(Error::Consistency("test set width differs from training data".into()));
            }
        }
        let mixing = build_mixing(&config.topology, config.n_nodes)?;
        let init = shape.init_params(&mut stream(config.seed, 0, 0, Purpose::Init));
        let total: usize = shards.iter().map(|s| s.data.len()).sum();
        let weights = shards.iter().map(|s| s.data.len() as f64 / total as f64).collect();
        let nodes: Vec<NodeState> = shards
            .into_iter()
            .enumerate()
            .map(|(i, s)| NodeState::new(i, init.clone(), &mixing.neighbors(i), Arc::new(s.data), config.s))
            .collect();
        let quantizers =
            (0..config.n_nodes).map(|_| registry.create(&config.quantizer, &config.quantizer_settings)).collect::<Result<_>>()?;
        let n = config.n_nodes;
        let mut sim = Self {
            config,
            shape,
            mixing,
            nodes,
            quantizers,
            test,
            weights,
            initial_local: Vec::new(),
            bits: vec![0; n],
            codebook_bits: vec![0; n],
            last_report: None,
            log: MetricsLog::default(),
        };
        let record = sim.evaluate(0, None, sim.config.base_eta())?;
        sim.initial_local = record.node_losses.clone();
        sim.log.records.push(record);
        Ok(sim)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn mixing(&self) -> &MixingMatrix {
        &self.mixing
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn round(&self) -> usize {
        self.log.records.len() - 1
    }

    pub fn log(&self) -> &MetricsLog {
        &self.log
    }

    pub fn into_log(self) -> MetricsLog {
        self.log
    }

    /// Report of the most recent communication phase.
    pub fn last_report(&self) -> Option<&CommReport> {
        self.last_report.as_ref()
    }

    /// `u`: mean of the current node parameters.
    pub fn average_params(&self) -> Vec<f64> {
        mean_of(self.nodes.iter().map(|n| n.params.as_slice()))
    }

    /// `u_k`: mean of the last completed round's starting parameters.
    pub fn average_round_start(&self) -> Vec<f64> {
        mean_of(self.nodes.iter().map(|n| n.round_start.as_slice()))
    }

    /// `û_k`: mean of the estimates after the last completed round.
    pub fn average_estimate(&self) -> Vec<f64> {
        mean_of(self.nodes.iter().map(|n| n.self_estimate.value.as_slice()))
    }

    fn levels_for_round(&self) -> Result<Vec<usize>> {
        let current = &self.log.last().expect("round 0 is always recorded").node_losses;
        match self.config.adaptive {
            None => Ok(vec![self.config.s; self.nodes.len()]),
            Some(a) => (0..self.nodes.len())
                .map(|i| adaptive_level_schedule(self.initial_local[i], current[i], self.config.s, a.s_min, a.s_max))
                .collect(),
        }
    }

    /// Runs one round: local updates, communication, mixing, metrics.
    pub fn step(&mut self) -> Result<&RoundRecord> {
        let k = self.round() + 1;
        let eta = self.config.eta_at(k);
        let levels = self.levels_for_round()?;
        for (node, &s) in self.nodes.iter_mut().zip(&levels) {
            node.s_current = s;
        }
        let (seed, tau, batch) = (self.config.seed, self.config.tau, self.config.batch_size);
        let shape = self.shape;
        self.nodes.par_iter_mut().try_for_each(|node| {
            let mut rng = stream(seed, node.id as u64, k as u64, Purpose::Sampling);
            local_update_phase(node, &shape, tau, eta, batch, k, &mut rng).map(drop)
        })?;
        let mut rngs: Vec<StreamRng> =
            (0..self.nodes.len()).map(|i| stream(seed, i as u64, k as u64, Purpose::Quantization)).collect();
        let report = communicate_phase(
            &mut self.nodes,
            &self.mixing,
            &mut self.quantizers,
            k,
            self.config.codebook_overhead,
            &mut rngs,
        )?;
        for i in 0..self.nodes.len() {
            self.bits[i] += report.payload_bits[i];
            self.codebook_bits[i] += report.codebook_bits[i];
        }
        let distortion = (!report.distortions.is_empty())
            .then(|| report.distortions.iter().sum::<f64>() / report.distortions.len() as f64);
        let mut record = self.evaluate(k, distortion, eta)?;
        record.s = levels;
        if k == self.config.rounds {
            if let Some(test) = &self.test {
                record.test_accuracy = Some(self.shape.accuracy(&self.average_params(), test)?);
            }
        }
        self.last_report = Some(report);
        self.log.records.push(record);
        Ok(self.log.last().expect("just pushed"))
    }

    fn evaluate(&self, k: usize, mean_distortion: Option<f64>, eta: f64) -> Result<RoundRecord> {
        let u = self.average_params();
        let shape = self.shape;
        let per_node: Vec<(f64, f64)> = self
            .nodes
            .par_iter()
            .map(|n| Ok((shape.loss(&n.params, &n.shard)?, shape.loss(&u, &n.shard)?)))
            .collect::<Result<_>>()?;
        let global_loss: f64 = per_node.iter().zip(&self.weights).map(|((_, at_u), w)| w * at_u).sum();
        if !global_loss.is_finite() {
            return Err(Error::Divergence { round: k, detail: "global loss is not finite".into() });
        }
        let consensus_error = self
            .nodes
            .iter()
            .map(|n| n.params.iter().zip(&u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum::<f64>()
            / self.nodes.len() as f64;
        let total_bits = (0..self.nodes.len())
            .map(|i| self.mixing.neighbors(i).len() as u64 * (self.bits[i] + self.codebook_bits[i]))
            .sum();
        Ok(RoundRecord {
            k,
            global_loss,
            node_losses: per_node.iter().map(|p| p.0).collect(),
            mean_distortion,
            bits_per_edge: self.bits.clone(),
            codebook_bits_per_edge: self.codebook_bits.clone(),
            mean_bits_per_edge: self.bits.iter().sum::<u64>() as f64 / self.bits.len() as f64,
            total_bits,
            s: self.nodes.iter().map(|n| n.s_current).collect(),
            eta,
            consensus_error,
            test_accuracy: None,
        })
    }

    /// Runs the remaining rounds.
    pub fn run(mut self) -> Result<MetricsLog> {
        while self.round() < self.config.rounds {
            self.step()?;
        }
        Ok(self.log)
    }
}

fn mean_of<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for r in rows {
        if acc.is_empty() {
            acc = vec![0.0; r.len()];
        }
        for (a, x) in acc.iter_mut().zip(r) {
            *a += x;
        }
        count += 1;
    }
    acc.iter_mut().for_each(|a| *a /= count.max(1) as f64);
    acc
}

/// Runs a config from scratch with the built-in quantizers.
pub fn run_simulation(config: RunConfig) -> Result<MetricsLog> {
    Simulation::new(config, &QuantizerRegistry::default())?.run()
}
