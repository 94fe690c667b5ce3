use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::learning::{axpy, Dataset, ModelShape};
use crate::quantizers::{dequantize, LevelTable, QuantizedVector, Quantizer};
use crate::rng::StreamRng;
use crate::topology::MixingMatrix;
use crate::{Error, Result};

/// A receiver's view of one peer.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    /// `x̂` of the peer as of the last round received.
    pub value: Vec<f64>,
    /// The peer's last quantized local step, folded into `value` next round.
    pub pending: Vec<f64>,
    /// Round of the last payload, 0 before any.
    pub updated_round: usize,
}

impl Estimate {
    fn zeros(d: usize) -> Self {
        Self { value: vec![0.0; d], pending: vec![0.0; d], updated_round: 0 }
    }

    /// What the receiver mixes: `x̂ + Q(x_{k,τ} - x_k)`.
    pub fn mixing_input(&self) -> Vec<f64> {
        self.value.iter().zip(&self.pending).map(|(a, b)| a + b).collect()
    }

    fn absorb(&mut self, step: Vec<f64>, drift: &[f64], round: usize) {
        for ((v, p), d) in self.value.iter_mut().zip(&self.pending).zip(drift) {
            *v += p + d;
        }
        self.pending = step;
        self.updated_round = round;
    }
}

/// Both differentials a node sends in one round, quantized against one table.
#[derive(Debug, Clone)]
pub struct Message {
    pub from: usize,
    pub round: usize,
    pub table: Option<LevelTable>,
    /// `Q(x_{k,τ} - x_k)`.
    pub step: QuantizedVector,
    /// `Q(x_k - x_{k-1,τ})`.
    pub drift: QuantizedVector,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: usize,
    /// Current parameters: `x_k` before local updates, `x_{k,t}` during them
    /// and `x_{k+1}` after mixing.
    pub params: Vec<f64>,
    /// `x_k` of the current (or last completed) round.
    pub round_start: Vec<f64>,
    /// `x_{k-1,τ}`, zero before the first round.
    pub prev_round_end: Vec<f64>,
    /// The node's own estimate, identical to what its neighbours hold.
    pub self_estimate: Estimate,
    pub neighbor_estimates: BTreeMap<usize, Estimate>,
    pub shard: Arc<Dataset>,
    pub s_current: usize,
}

impl NodeState {
    pub fn new(id: usize, params: Vec<f64>, neighbors: &[usize], shard: Arc<Dataset>, s: usize) -> Self {
        let d = params.len();
        Self {
            id,
            round_start: params.clone(),
            params,
            prev_round_end: vec![0.0; d],
            self_estimate: Estimate::zeros(d),
            neighbor_estimates: neighbors.iter().map(|&j| (j, Estimate::zeros(d))).collect(),
            shard,
            s_current: s,
        }
    }

    /// Applies a neighbour's payload to its tracked estimate.
    pub fn receive(&mut self, msg: &Message) -> Result<()> {
        let est = self.neighbor_estimates.get_mut(&msg.from).ok_or_else(|| {
            Error::Protocol(format!("node {} got a payload from non-neighbour {}", self.id, msg.from))
        })?;
        let step = dequantize(&msg.step, msg.table.as_ref())?;
        let drift = dequantize(&msg.drift, msg.table.as_ref())?;
        if step.len() != est.value.len() || drift.len() != est.value.len() {
            return Err(Error::Protocol(format!("payload from {} has the wrong dimension", msg.from)));
        }
        est.absorb(step, &drift, msg.round);
        Ok(())
    }
}

fn diverged(round: usize, node: usize, what: &str) -> Error {
    Error::Divergence { round, detail: format!("node {node}: non-finite parameter after {what}") }
}

/// Runs `tau` SGD steps on the node's shard and returns the gradients used.
/// Batches larger than the shard are clipped to the shard.
pub fn local_update_phase(
    state: &mut NodeState,
    shape: &ModelShape,
    tau: usize,
    eta: f64,
    batch_size: usize,
    round: usize,
    rng: &mut StreamRng,
) -> Result<Vec<Vec<f64>>> {
    if tau == 0 {
        return Err(Error::invalid("tau must be at least 1"));
    }
    state.round_start.clone_from(&state.params);
    let batch = batch_size.min(state.shard.len());
    let mut grads = Vec::with_capacity(tau);
    for t in 0..tau {
        let g = shape.minibatch_gradient(&state.params, &state.shard, batch, rng)?;
        axpy(-eta, &g, &mut state.params);
        if state.params.iter().any(|x| !x.is_finite()) {
            return Err(diverged(round, state.id, &format!("local step {}", t + 1)));
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Per-round communication totals.
#[derive(Debug, Clone, Default)]
pub struct CommReport {
    /// Bits each sender put on every one of its outgoing edges.
    pub payload_bits: Vec<u64>,
    /// Extra codebook bits per outgoing edge, when charged.
    pub codebook_bits: Vec<u64>,
    /// `‖Q(v) - v‖² / ‖v‖²` for every nonzero vector sent.
    pub distortions: Vec<f64>,
    /// Mean of `Q(x_{k,τ} - x_k)` over nodes, for checking the average identity.
    pub mean_step: Vec<f64>,
}

struct Outgoing {
    msg: Message,
    step: Vec<f64>,
    drift: Vec<f64>,
    payload_bits: u64,
    codebook_bits: u64,
    distortions: Vec<f64>,
}

fn normalized_error(q: &[f64], v: &[f64]) -> Option<f64> {
    let norm2: f64 = v.iter().map(|x| x * x).sum();
    (norm2 > 0.0).then(|| q.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / norm2)
}

fn encode_node(
    state: &NodeState,
    quantizer: &mut dyn Quantizer,
    round: usize,
    charge_codebook: bool,
    rng: &mut StreamRng,
) -> Result<Outgoing> {
    let step_raw: Vec<f64> = state.params.iter().zip(&state.round_start).map(|(a, b)| a - b).collect();
    let drift_raw: Vec<f64> = state.round_start.iter().zip(&state.prev_round_end).map(|(a, b)| a - b).collect();
    let s = quantizer.fixed_levels().unwrap_or(state.s_current);
    let mut enc = quantizer.encode(&[&step_raw, &drift_raw], s, rng)?;
    let drift_q = enc.payloads.pop().expect("two payloads");
    let step_q = enc.payloads.pop().expect("two payloads");
    let step = dequantize(&step_q, enc.table.as_ref())?;
    let drift = dequantize(&drift_q, enc.table.as_ref())?;
    let d = state.params.len();
    let codebook_bits = match &enc.table {
        Some(t) if charge_codebook && quantizer.data_dependent_codebook() => 2 * 32 * t.len() as u64,
        _ => 0,
    };
    let distortions = [normalized_error(&step, &step_raw), normalized_error(&drift, &drift_raw)]
        .into_iter()
        .flatten()
        .collect();
    Ok(Outgoing {
        msg: Message { from: state.id, round, table: enc.table, step: step_q, drift: drift_q },
        step,
        drift,
        payload_bits: 2 * quantizer.payload_bits(d, s),
        codebook_bits,
        distortions,
    })
}

/// Quantizes and exchanges both differentials of every node, updates all
/// tracked estimates and mixes.
///
/// Each node `i` ends with `x_{k+1} = Σ_j c_ji (x̂_k^{(j)} + Q(x_{k,τ}^{(j)} - x_k^{(j)}))`
/// where `x̂_k = x̂_{k-1} + Q(x_{k-1,τ} - x_{k-1}) + Q(x_k - x_{k-1,τ})`.
pub fn communicate_phase(
    states: &mut [NodeState],
    mixing: &MixingMatrix,
    quantizers: &mut [Box<dyn Quantizer>],
    round: usize,
    charge_codebook: bool,
    rngs: &mut [StreamRng],
) -> Result<CommReport> {
    let n = states.len();
    if mixing.n() != n || quantizers.len() != n || rngs.len() != n {
        return Err(Error::invalid("states, quantizers, streams and mixing matrix disagree on N"));
    }
    let outgoing: Vec<Outgoing> = states
        .par_iter()
        .zip(quantizers.par_iter_mut())
        .zip(rngs.par_iter_mut())
        .map(|((st, q), rng)| encode_node(st, q.as_mut(), round, charge_codebook, rng))
        .collect::<Result<_>>()?;

    let d = states[0].params.len();
    let mut mean_step = vec![0.0; d];
    for (st, out) in states.iter_mut().zip(&outgoing) {
        st.self_estimate.absorb(out.step.clone(), &out.drift, round);
        axpy(1.0 / n as f64, &out.step, &mut mean_step);
    }
    for st in states.iter_mut() {
        let senders: Vec<usize> = st.neighbor_estimates.keys().copied().collect();
        for j in senders {
            st.receive(&outgoing[j].msg)?;
        }
    }

    let inputs: Vec<Vec<f64>> = states.iter().map(|s| s.self_estimate.mixing_input()).collect();
    states.par_iter_mut().try_for_each(|st| -> Result<()> {
        let i = st.id;
        let mut next = vec![0.0; d];
        for j in 0..n {
            let w = mixing.weight(j, i);
            if w == 0.0 {
                continue;
            }
            if j == i {
                axpy(w, &inputs[i], &mut next);
            } else {
                let est = st.neighbor_estimates.get(&j).ok_or_else(|| {
                    Error::Protocol(format!("node {i} mixes with {j} but tracks no estimate for it"))
                })?;
                if est.updated_round != round {
                    return Err(Error::Protocol(format!("node {i} has no round-{round} payload from {j}")));
                }
                axpy(w, &est.mixing_input(), &mut next);
            }
        }
        if next.iter().any(|x| !x.is_finite()) {
            return Err(diverged(round, i, "mixing"));
        }
        st.prev_round_end = std::mem::replace(&mut st.params, next);
        Ok(())
    })?;

    Ok(CommReport {
        payload_bits: outgoing.iter().map(|o| o.payload_bits).collect(),
        codebook_bits: outgoing.iter().map(|o| o.codebook_bits).collect(),
        distortions: outgoing.into_iter().flat_map(|o| o.distortions).collect(),
        mean_step,
    })
}
