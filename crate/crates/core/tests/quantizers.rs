use lmdfl_core::engine::{run_simulation, RunConfig, Simulation};
use lmdfl_core::learning::DataSource;
use lmdfl_core::quantizers::{
    decode_wire, dequantize, encode_wire, encoded_bits, Encoded, LevelTable, Quantizer, QuantizerKind,
    QuantizerRegistry, QuantizerSettings,
};
use lmdfl_core::rng::seeded;
use lmdfl_core::{Error, Result};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

/// One-level sign quantizer: every magnitude is sent as the mean magnitude.
struct MeanSign;

impl Quantizer for MeanSign {
    fn name(&self) -> &'static str {
        "mean_sign"
    }

    fn kind(&self) -> QuantizerKind {
        QuantizerKind::LloydMax
    }

    fn encode(&mut self, vectors: &[&[f64]], _s: usize, rng: &mut dyn RngCore) -> Result<Encoded> {
        let mut lm = QuantizerRegistry::default().create("lloyd_max", &QuantizerSettings::default())?;
        lm.encode(vectors, 1, rng)
    }

    fn fixed_levels(&self) -> Option<usize> {
        Some(1)
    }

    fn data_dependent_codebook(&self) -> bool {
        true
    }
}

fn gaussian(d: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed);
    (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[test]
fn custom_strategy_plugs_into_the_engine() {
    let mut registry = QuantizerRegistry::default();
    assert!(!registry.contains("mean_sign"));
    registry.register("mean_sign", |_| Box::new(MeanSign));
    let config = RunConfig {
        rounds: 3,
        eta: Some(0.05),
        quantizer: "mean_sign".into(),
        s: 64,
        data: DataSource::Synthetic { samples: 200, features: 10, classes: 10, separation: 3.0, test_samples: 0 },
        ..Default::default()
    };
    let log = Simulation::new(config.clone(), &registry).unwrap().run().unwrap();
    // pinned to one level: ⌈log₂ 1⌉ = 0 index bits
    assert_eq!(log.last().unwrap().bits_per_edge[0], 3 * 2 * encoded_bits(110, 1));

    match run_simulation(config) {
        Err(Error::Config(msg)) | Err(Error::UnknownQuantizer(msg)) => assert!(msg.contains("mean_sign"), "{msg}"),
        other => panic!("unknown strategy accepted: {other:?}"),
    }
}

#[test]
fn builtin_names() {
    let registry = QuantizerRegistry::default();
    let names: Vec<&str> = registry.names().collect();
    for want in ["alq", "lloyd_max", "lossless", "natural", "qsgd"] {
        assert!(names.contains(&want), "{names:?}");
    }
}

#[test]
fn lloyd_max_payload_survives_the_wire() {
    let v = gaussian(300, 4);
    let mut q = QuantizerRegistry::default().create("lloyd_max", &Default::default()).unwrap();
    let enc = q.encode(&[&v], 16, &mut seeded(0)).unwrap();
    let table = enc.table.unwrap();
    let bytes = encode_wire(&enc.payloads[0]).unwrap();
    assert_eq!(bytes.len() as u64, encoded_bits(300, 16).div_ceil(8));
    let back = decode_wire(&bytes, 300, &table).unwrap();
    let a = dequantize(&enc.payloads[0], Some(&table)).unwrap();
    let b = dequantize(&back, Some(&table)).unwrap();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for (x, y) in a.iter().zip(&b) {
        // the norm travels as f32
        assert!((x - y).abs() <= norm * 1e-7);
    }
    let truncated = &bytes[..bytes.len() - 1];
    assert!(matches!(decode_wire(truncated, 300, &table), Err(Error::CorruptPayload(_))));
}

#[test]
fn lloyd_max_beats_qsgd_on_gaussian_vectors() {
    let registry = QuantizerRegistry::default();
    for s in [4, 16] {
        let (mut lm_total, mut qsgd_total) = (0.0, 0.0);
        for seed in 0..100 {
            let v = gaussian(1000, seed);
            let norm2: f64 = v.iter().map(|x| x * x).sum();
            for (name, total) in [("lloyd_max", &mut lm_total), ("qsgd", &mut qsgd_total)] {
                let mut q = registry.create(name, &Default::default()).unwrap();
                let enc = q.encode(&[&v], s, &mut seeded(seed + 1000)).unwrap();
                let back = dequantize(&enc.payloads[0], enc.table.as_ref()).unwrap();
                *total += back.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / norm2;
            }
        }
        assert!(lm_total < qsgd_total, "s = {s}: {lm_total} vs {qsgd_total}");
    }
}

#[test]
fn uniform_grid_tables_are_shared_not_fitted() {
    let v = gaussian(50, 1);
    let mut q = QuantizerRegistry::default().create("qsgd", &Default::default()).unwrap();
    let a = q.encode(&[&v], 8, &mut seeded(1)).unwrap().table.unwrap();
    let b = q.encode(&[&gaussian(50, 2)], 8, &mut seeded(2)).unwrap().table.unwrap();
    assert_eq!(a, b);
    assert_eq!(a, LevelTable::uniform_grid(8).unwrap());
}
