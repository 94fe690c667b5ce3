#![allow(dead_code)]

use lmdfl_core::engine::{RunConfig, Simulation};
use lmdfl_core::learning::{gen_synthetic, partition_noniid, DataSource, ModelShape, Shard};
use lmdfl_core::quantizers::QuantizerRegistry;
use lmdfl_core::rng::{stream, Purpose};
use lmdfl_core::topology::{build_mixing, TopologyKind};

pub fn synthetic(samples: usize) -> DataSource {
    DataSource::Synthetic { samples, features: 10, classes: 10, separation: 3.0, test_samples: 0 }
}

pub fn shards(n_nodes: usize, seed: u64) -> Vec<Shard> {
    let data = gen_synthetic(600, 10, 10, 3.0, seed).unwrap();
    partition_noniid(&data, n_nodes, 0.5, seed + 1).unwrap()
}

/// Largest deviation between the simulator run with the lossless quantizer and
/// the plain recursion `X_{k+1} = X_{k,τ} C`, replayed from the same shards and
/// sampling streams.
pub fn lossless_reduction_error(topology: TopologyKind, n: usize, tau: usize, rounds: usize) -> f64 {
    let config = RunConfig {
        n_nodes: n,
        tau,
        rounds,
        eta: Some(0.05),
        quantizer: "lossless".into(),
        topology: topology.clone(),
        seed: 11,
        ..Default::default()
    };
    let parts = shards(n, 3);
    let data: Vec<_> = parts.iter().map(|s| s.data.clone()).collect();
    let mut sim = Simulation::with_shards(config.clone(), &QuantizerRegistry::default(), parts, None).unwrap();
    let shape = ModelShape::for_data(config.model, &data[0]).unwrap();
    let c = build_mixing(&topology, n).unwrap();
    let c = c.entries();

    let mut x: Vec<Vec<f64>> = vec![shape.init_params(&mut stream(config.seed, 0, 0, Purpose::Init)); n];
    let mut worst = 0.0f64;
    for k in 1..=rounds {
        let ends: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut rng = stream(config.seed, i as u64, k as u64, Purpose::Sampling);
                let mut p = x[i].clone();
                for _ in 0..tau {
                    let g = shape.minibatch_gradient(&p, &data[i], 32.min(data[i].len()), &mut rng).unwrap();
                    for (a, b) in p.iter_mut().zip(&g) {
                        *a -= 0.05 * b;
                    }
                }
                p
            })
            .collect();
        for i in 0..n {
            for (m, xm) in x[i].iter_mut().enumerate() {
                *xm = (0..n).map(|j| c[(j, i)] * ends[j][m]).sum();
            }
        }
        sim.step().unwrap();
        for (node, want) in sim.nodes().iter().zip(&x) {
            for (a, b) in node.params.iter().zip(want) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

/// Runs `seeds` short simulations with a stochastic quantizer and checks, per
/// coordinate and for each requested round, that the seed mean of `û_k - u_k`
/// lies within four standard errors of zero. Returns the worst ratio
/// `|mean| / (4 se)`; coordinates without spread must match exactly.
pub fn estimate_bias_ratio(quantizer: &str, seeds: u64, rounds: &[usize]) -> f64 {
    let last = *rounds.iter().max().unwrap();
    let mut diffs: Vec<Vec<Vec<f64>>> = vec![Vec::new(); rounds.len()];
    for seed in 0..seeds {
        let config = RunConfig {
            rounds: last,
            eta: Some(0.05),
            quantizer: quantizer.into(),
            s: 4,
            seed,
            data: synthetic(400),
            ..Default::default()
        };
        let mut sim = Simulation::new(config, &QuantizerRegistry::default()).unwrap();
        for k in 1..=last {
            sim.step().unwrap();
            if let Some(slot) = rounds.iter().position(|&r| r == k) {
                let u = sim.average_round_start();
                let u_hat = sim.average_estimate();
                diffs[slot].push(u_hat.iter().zip(&u).map(|(a, b)| a - b).collect());
            }
        }
    }
    let mut worst = 0.0f64;
    for per_round in &diffs {
        let n = per_round.len() as f64;
        for m in 0..per_round[0].len() {
            let mean = per_round.iter().map(|d| d[m]).sum::<f64>() / n;
            let var = per_round.iter().map(|d| (d[m] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let se = (var / n).sqrt();
            let ratio = if se > 0.0 {
                mean.abs() / (4.0 * se)
            } else if mean == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(ratio);
        }
    }
    worst
}

/// Bits one sender puts on an edge in a round with `s` levels, counted as two
/// payloads of `d⌈log₂ s⌉ + d + 32` bits.
pub fn round_bits(d: usize, s: usize) -> u64 {
    let width = (s as f64).log2().ceil() as u64;
    2 * (d as u64 * width + d as u64 + 32)
}

/// Checks the cumulative per-edge bit counters of a finished run against the
/// level counts it recorded. Returns the number of mismatches.
pub fn ledger_mismatches(config: RunConfig, d: usize) -> usize {
    let log = Simulation::new(config, &QuantizerRegistry::default()).unwrap().run().unwrap();
    let n = log.records[0].bits_per_edge.len();
    let mut expected = vec![0u64; n];
    let mut bad = 0;
    for r in &log.records[1..] {
        for i in 0..n {
            expected[i] += round_bits(d, r.s[i]);
            if r.bits_per_edge[i] != expected[i] {
                bad += 1;
            }
        }
    }
    bad
}
