//! Quantizer strategies behind a common trait, looked up by name.

use std::collections::BTreeMap;
use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::alq::{alq_coordinate_step, EmpiricalCdf};
use super::levels::{fit_lloyd_max, LevelTable, DEFAULT_MAX_ITER, DEFAULT_TOL};
use super::vector::{encoded_bits, normalized_magnitudes, quantize_vector, QuantizedVector, QuantizerKind};
use crate::{Error, Result};

/// Levels used by the `full_precision` strategy.
pub const FULL_PRECISION_LEVELS: usize = 16_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizerSettings {
    /// Lloyd-Max relative-decrease tolerance.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QuantizerSettings {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

/// One round's output: the codebook (if any) and one payload per input vector.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub table: Option<LevelTable>,
    pub payloads: Vec<QuantizedVector>,
}

/// A vector quantization strategy. Instances may carry state across rounds
/// (ALQ keeps its levels), so every node owns its own instance.
pub trait Quantizer: Send {
    fn name(&self) -> &'static str;

    fn kind(&self) -> QuantizerKind;

    /// Builds this round's codebook for `s` levels and quantizes every vector
    /// against it.
    fn encode(&mut self, vectors: &[&[f64]], s: usize, rng: &mut dyn RngCore) -> Result<Encoded>;

    /// Level count that overrides the configured one, if the strategy pins it.
    fn fixed_levels(&self) -> Option<usize> {
        None
    }

    /// Whether the codebook depends on the data and must travel with the
    /// payloads.
    fn data_dependent_codebook(&self) -> bool {
        false
    }

    /// Bits charged for one payload of dimension `d`.
    fn payload_bits(&self, d: usize, s: usize) -> u64 {
        encoded_bits(d, s)
    }
}

impl fmt::Debug for dyn Quantizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Quantizer({})", self.name())
    }
}

fn quantize_all(
    vectors: &[&[f64]],
    kind: QuantizerKind,
    table: Option<&LevelTable>,
    rng: &mut dyn RngCore,
) -> Result<Vec<QuantizedVector>> {
    vectors.iter().map(|v| quantize_vector(v, kind, table, rng)).collect()
}

/// Normalized magnitudes of every nonzero vector, concatenated.
fn pooled_magnitudes(vectors: &[&[f64]]) -> Result<Vec<f64>> {
    let mut pooled = Vec::new();
    for v in vectors {
        let (norm, r) = normalized_magnitudes(v)?;
        if norm > 0.0 {
            pooled.extend(r);
        }
    }
    Ok(pooled)
}

fn check_levels(s: usize) -> Result<()> {
    if s == 0 {
        Err(Error::invalid("s must be at least 1"))
    } else {
        Ok(())
    }
}

/// Lloyd-Max levels fitted each round on the pooled magnitudes of the vectors
/// being sent.
#[derive(Debug, Clone)]
pub struct LloydMaxQuantizer {
    settings: QuantizerSettings,
}

impl LloydMaxQuantizer {
    pub fn new(settings: QuantizerSettings) -> Self {
        Self { settings }
    }
}

impl Quantizer for LloydMaxQuantizer {
    fn name(&self) -> &'static str {
        "lloyd_max"
    }

    fn kind(&self) -> QuantizerKind {
        QuantizerKind::LloydMax
    }

    fn encode(&mut self, vectors: &[&[f64]], s: usize, rng: &mut dyn RngCore) -> Result<Encoded> {
        check_levels(s)?;
        let pooled = pooled_magnitudes(vectors)?;
        let table = if pooled.is_empty() {
            LevelTable::from_levels((0..s).map(|j| (2 * j + 1) as f64 / (2 * s) as f64).collect())?
        } else {
            fit_lloyd_max(&pooled, None, s, self.settings.tol, self.settings.max_iter)?.table
        };
        let payloads = quantize_all(vectors, QuantizerKind::LloydMax, Some(&table), rng)?;
        Ok(Encoded { table: Some(table), payloads })
    }

    fn data_dependent_codebook(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Default)]
pub struct QsgdQuantizer {
    grid: Option<LevelTable>,
}

impl Quantizer for QsgdQuantizer {
    fn name(&self) -> &'static str {
        "qsgd"
    }

    fn kind(&self) -> QuantizerKind {
        QuantizerKind::Qsgd
    }

    fn encode(&mut self, vectors: &[&[f64]], s: usize, rng: &mut dyn RngCore) -> Result<Encoded> {
        check_levels(s)?;
        if self.grid.as_ref().map(|g| g.len()) != Some(s + 1) {
            self.grid = Some(LevelTable::uniform_grid(s)?);
        }
        let payloads = quantize_all(vectors, QuantizerKind::Qsgd, self.grid.as_ref(), rng)?;
        Ok(Encoded { table: self.grid.clone(), payloads })
    }
}

/// QSGD with so many levels that transmission is effectively exact.
#[derive(Debug, Clone, Default)]
pub struct FullPrecisionQuantizer {
    inner: QsgdQuantizer,
}

impl Quantizer for FullPrecisionQuantizer {
    fn name(&self) -> &'static str {
        "full_precision"
    }

    fn kind(&self) -> QuantizerKind {
        QuantizerKind::Qsgd
    }

    fn encode(&mut self, vectors: &[&[f64]], _s: usize, rng: &mut dyn RngCore) -> Result<Encoded> {
        self.inner.encode(vectors, FULL_PRECISION_LEVELS, rng)
    }

    fn fixed_levels(&self) -> Option<usize> {
        Some(FULL_PRECISION_LEVELS)
    }
}

#[derive(Debug, Clone, Default)]
pub struct NaturalQuantizer {
    grid: Option<LevelTable>,
}

impl Quantizer for NaturalQuantizer {
    fn name(&self) -> &'static str {
        "natural"
    }

    fn kind(&self) -> QuantizerKind {
        QuantizerKind::Natural
    }

    fn encode(&mut self, vectors: &[&[f64]], s: usize, rng: &mut dyn RngCore) -> Result<Encoded> {
        check_levels(s)?;
        if self.grid.as_ref().map(|g| g.len()) != Some(s + 1) {
            self.grid = Some(LevelTable::geometric_grid(s)?);
        }
        let payloads = quantize_all(vectors, QuantizerKind::Natural, self.grid.as_ref(), rng)?;
        Ok(Encoded { table: self.grid.clone(), payloads })
    }
}

/// ALQ: starts from the uniform grid and moves its interior levels by one
/// coordinate-descent sweep per round on the empirical distribution of the
/// magnitudes being sent. Rounding between adjacent levels is unbiased.
#[derive(Debug, Clone, Default)]
pub struct AlqQuantizer {
    table: Option<LevelTable>,
}

impl Quantizer for AlqQuantizer {
    fn name(&self) -> &'static str {
        "alq"
    }

    fn kind(&self) -> QuantizerKind {
        QuantizerKind::Alq
    }

    fn encode(&mut self, vectors: &[&[f64]], s: usize, rng: &mut dyn RngCore) -> Result<Encoded> {
        check_levels(s)?;
        let mut table = match self.table.take() {
            Some(t) if t.len() == s + 1 => t,
            _ => LevelTable::uniform_grid(s)?,
        };
        let pooled = pooled_magnitudes(vectors)?;
        if !pooled.is_empty() {
            let cdf = EmpiricalCdf::new(&pooled, None)?;
            table = alq_coordinate_step(&table, &cdf)?;
        }
        let payloads = quantize_all(vectors, QuantizerKind::Alq, Some(&table), rng)?;
        self.table = Some(table.clone());
        Ok(Encoded { table: Some(table), payloads })
    }

    fn data_dependent_codebook(&self) -> bool {
        true
    }
}

/// Exact transmission; charged as `d` single-precision floats.
#[derive(Debug, Clone, Default)]
pub struct LosslessQuantizer;

impl Quantizer for LosslessQuantizer {
    fn name(&self) -> &'static str {
        "lossless"
    }

    fn kind(&self) -> QuantizerKind {
        QuantizerKind::Lossless
    }

    fn encode(&mut self, vectors: &[&[f64]], _s: usize, rng: &mut dyn RngCore) -> Result<Encoded> {
        let payloads = quantize_all(vectors, QuantizerKind::Lossless, None, rng)?;
        Ok(Encoded { table: None, payloads })
    }

    fn payload_bits(&self, d: usize, _s: usize) -> u64 {
        32 * d as u64
    }
}

pub type QuantizerFactory = fn(&QuantizerSettings) -> Box<dyn Quantizer>;

/// Name-keyed table of quantizer constructors.
#[derive(Clone)]
pub struct QuantizerRegistry {
    factories: BTreeMap<String, QuantizerFactory>,
}

impl QuantizerRegistry {
    pub fn empty() -> Self {
        Self { factories: BTreeMap::new() }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("lloyd_max", |s| Box::new(LloydMaxQuantizer::new(*s)));
        r.register("lm", |s| Box::new(LloydMaxQuantizer::new(*s)));
        r.register("qsgd", |_| Box::new(QsgdQuantizer::default()));
        r.register("natural", |_| Box::new(NaturalQuantizer::default()));
        r.register("alq", |_| Box::new(AlqQuantizer::default()));
        r.register("lossless", |_| Box::new(LosslessQuantizer));
        r.register("full_precision", |_| Box::new(FullPrecisionQuantizer::default()));
        r
    }

    /// Adds or replaces a strategy.
    pub fn register(&mut self, name: &str, factory: QuantizerFactory) {
        self.factories.insert(name.to_owned(), factory);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn create(&self, name: &str, settings: &QuantizerSettings) -> Result<Box<dyn Quantizer>> {
        self.factories
            .get(name)
            .map(|f| f(settings))
            .ok_or_else(|| Error::UnknownQuantizer(name.to_owned()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }
}

impl Default for QuantizerRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl fmt::Debug for QuantizerRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}
