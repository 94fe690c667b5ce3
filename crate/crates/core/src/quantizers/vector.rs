//! Norm / sign / level vector quantization and its wire format.
//!
//! A vector `v` is sent as its l2 norm, one sign bit per element and, per
//! element, the index of the level chosen for `r_i = |v_i| / ‖v‖`.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::levels::{quantize_scalar_lm, CodebookId, LevelTable};
use super::scalar::{natural_index, qsgd_index, stochastic_round};
use crate::{Error, Result};

/// The quantizer families compared by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizerKind {
    LloydMax,
    Qsgd,
    Natural,
    Alq,
    Lossless,
}

impl QuantizerKind {
    pub fn is_stochastic(self) -> bool {
        matches!(self, QuantizerKind::Qsgd | QuantizerKind::Natural | QuantizerKind::Alq)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Magnitudes {
    /// Level indices into the table identified by `codebook`.
    Indexed { indices: Vec<u32>, level_count: usize, codebook: CodebookId },
    /// Exact normalized magnitudes (lossless mode).
    Exact(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedVector {
    pub norm: f64,
    /// `true` for a negative element; zero counts as positive.
    pub negative: Vec<bool>,
    pub magnitudes: Magnitudes,
}

impl QuantizedVector {
    pub fn dim(&self) -> usize {
        self.negative.len()
    }
}

/// `⌈log₂ s⌉` for `s ≥ 1`.
pub fn index_width(s: usize) -> u32 {
    debug_assert!(s >= 1);
    usize::BITS - (s.max(1) - 1).leading_zeros()
}

/// Bits needed to send one quantized vector of dimension `d` with `s` levels:
/// a 32-bit norm, `d` sign bits and `d` indices of `⌈log₂ s⌉` bits.
pub fn encoded_bits(d: usize, s: usize) -> u64 {
    let d = d as u64;
    d * u64::from(index_width(s)) + d + 32
}

/// Normalized magnitudes `|v_i| / ‖v‖`; all zeros for the zero vector.
pub fn normalized_magnitudes(v: &[f64]) -> Result<(f64, Vec<f64>)> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("element {i} is not finite")));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let r = if norm > 0.0 {
        v.iter().map(|x| (x.abs() / norm).min(1.0)).collect()
    } else {
        vec![0.0; v.len()]
    };
    Ok((norm, r))
}

/// Quantizes `v` with the scalar quantizer of `kind`.
///
/// Lloyd-Max and ALQ need their fitted `table`; QSGD and natural compression
/// take the uniform or geometric grid table (whose length is `s + 1`).
/// Stochastic kinds draw from `rng`.
pub fn quantize_vector(
    v: &[f64],
    kind: QuantizerKind,
    table: Option<&LevelTable>,
    rng: &mut dyn RngCore,
) -> Result<QuantizedVector> {
    if v.is_empty() {
        return Err(Error::invalid("cannot quantize an empty vector"));
    }
    let (norm, r) = normalized_magnitudes(v)?;
    let negative: Vec<bool> = v.iter().map(|&x| x < 0.0).collect();

    if kind == QuantizerKind::Lossless {
        return Ok(QuantizedVector { norm, negative, magnitudes: Magnitudes::Exact(r) });
    }
    let table = table.ok_or_else(|| Error::invalid(format!("{kind:?} needs a level table")))?;
    let grid_s = table.len().saturating_sub(1);
    let indices = if norm == 0.0 {
        vec![0u32; v.len()]
    } else {
        r.iter()
            .map(|&ri| {
                let j = match kind {
                    QuantizerKind::LloydMax => quantize_scalar_lm(ri, table)?,
                    QuantizerKind::Alq => stochastic_round(ri, table, rng)?,
                    QuantizerKind::Qsgd => qsgd_index(ri, grid_s, rng)?,
                    QuantizerKind::Natural => natural_index(ri, grid_s, rng)?,
                    QuantizerKind::Lossless => unreachable!(),
                };
                Ok(j as u32)
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok(QuantizedVector {
        norm,
        negative,
        magnitudes: Magnitudes::Indexed { indices, level_count: table.len(), codebook: table.id() },
    })
}

/// Reconstructs `‖v‖ · sign_i · ℓ_{index_i}`.
pub fn dequantize(q: &QuantizedVector, table: Option<&LevelTable>) -> Result<Vec<f64>> {
    let sign = |neg: bool| if neg { -1.0 } else { 1.0 };
    match &q.magnitudes {
        Magnitudes::Exact(r) => {
            if r.len() != q.negative.len() {
                return Err(Error::CorruptPayload("sign and magnitude lengths differ".into()));
            }
            Ok(r.iter().zip(&q.negative).map(|(&ri, &n)| q.norm * sign(n) * ri).collect())
        }
        Magnitudes::Indexed { indices, codebook, .. } => {
            let table = table.ok_or_else(|| Error::invalid("indexed payload needs its level table"))?;
            if *codebook != table.id() {
                return Err(Error::CorruptPayload("payload was encoded against another codebook".into()));
            }
            if indices.len() != q.negative.len() {
                return Err(Error::CorruptPayload("sign and index lengths differ".into()));
            }
            if q.norm == 0.0 {
                return Ok(vec![0.0; indices.len()]);
            }
            indices
                .iter()
                .zip(&q.negative)
                .map(|(&j, &n)| {
                    let level = table.level(j as usize).ok_or_else(|| {
                        Error::CorruptPayload(format!("level index {j} >= {}", table.len()))
                    })?;
                    Ok(q.norm * sign(n) * level)
                })
                .collect()
        }
    }
}

struct BitWriter {
    bytes: Vec<u8>,
    used: u32,
}

impl BitWriter {
    fn new() -> Self {
        Self { bytes: Vec::new(), used: 8 }
    }

    fn push(&mut self, value: u64, width: u32) {
        for shift in (0..width).rev() {
            if self.used == 8 {
                self.bytes.push(0);
                self.used = 0;
            }
            let bit = ((value >> shift) & 1) as u8;
            *self.bytes.last_mut().unwrap() |= bit << (7 - self.used);
            self.used += 1;
        }
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BitReader<'_> {
    fn take(&mut self, width: u32) -> u64 {
        let mut v = 0u64;
        for _ in 0..width {
            let bit = (self.bytes[self.pos / 8] >> (7 - self.pos % 8)) & 1;
            v = (v << 1) | u64::from(bit);
            self.pos += 1;
        }
        v
    }
}

/// Serializes an indexed payload: big-endian `f32` norm, `d` sign bits
/// MSB-first, then `d` indices of `⌈log₂ s⌉` bits, zero-padded to a byte.
pub fn encode_wire(q: &QuantizedVector) -> Result<Vec<u8>> {
    let Magnitudes::Indexed { indices, level_count, .. } = &q.magnitudes else {
        return Err(Error::invalid("lossless payloads have no wire encoding"));
    };
    let width = index_width(*level_count);
    let mut w = BitWriter::new();
    w.push(u64::from((q.norm as f32).to_bits()), 32);
    for &n in &q.negative {
        w.push(u64::from(n), 1);
    }
    for &j in indices {
        w.push(u64::from(j), width);
    }
    Ok(w.bytes)
}

/// Inverse of [`encode_wire`] for a payload of dimension `d` encoded against
/// `table`.
pub fn decode_wire(bytes: &[u8], d: usize, table: &LevelTable) -> Result<QuantizedVector> {
    let width = index_width(table.len());
    let bits = encoded_bits(d, table.len());
    let expected = bits.div_ceil(8) as usize;
    if bytes.len() != expected {
        return Err(Error::CorruptPayload(format!(
            "expected {expected} bytes for d = {d}, got {}",
            bytes.len()
        )));
    }
    let mut r = BitReader { bytes, pos: 0 };
    let norm = f64::from(f32::from_bits(r.take(32) as u32));
    if !norm.is_finite() || norm < 0.0 {
        return Err(Error::CorruptPayload(format!("invalid norm {norm}")));
    }
    let negative: Vec<bool> = (0..d).map(|_| r.take(1) == 1).collect();
    let mut indices = Vec::with_capacity(d);
    for _ in 0..d {
        let j = r.take(width);
        if j as usize >= table.len() {
            return Err(Error::CorruptPayload(format!("level index {j} >= {}", table.len())));
        }
        indices.push(j as u32);
    }
    let pad = (expected * 8) as u64 - bits;
    if r.take(pad as u32) != 0 {
        return Err(Error::CorruptPayload("nonzero padding bits".into()));
    }
    Ok(QuantizedVector {
        norm,
        negative,
        magnitudes: Magnitudes::Indexed { indices, level_count: table.len(), codebook: table.id() },
    })
}

/// Codebook sidecar: the levels as big-endian `f32`s.
pub fn encode_codebook(table: &LevelTable) -> Vec<u8> {
    table.levels().iter().flat_map(|&l| (l as f32).to_be_bytes()).collect()
}
