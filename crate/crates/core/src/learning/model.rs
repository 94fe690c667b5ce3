//! Logistic regression and a one-hidden-layer tanh MLP, both trained on mean
//! cross-entropy.
//!
//! Parameter layouts (flat, row-major):
//!
//! * binary logistic: `[w (p), b]`, with label 1 as the positive class;
//! * multiclass logistic: `[W (C x p), b (C)]`, softmax output;
//! * mlp(h): `[W1 (h x p), b1 (h), W2 (C x h), b2 (C)]`.

use rand::seq::IndexedRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::rng::seeded;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelKind {
    Logistic,
    Mlp { hidden: usize },
}

impl Default for ModelKind {
    fn default() -> Self {
        ModelKind::Logistic
    }
}

/// Architecture without parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub kind: ModelKind,
    pub inputs: usize,
    pub classes: usize,
}

impl ModelShape {
    pub fn new(kind: ModelKind, inputs: usize, classes: usize) -> Result<Self> {
        if inputs == 0 || classes < 2 {
            return Err(Error::invalid("a model needs at least one input and two classes"));
        }
        if let ModelKind::Mlp { hidden: 0 } = kind {
            return Err(Error::invalid("mlp hidden width must be positive"));
        }
        Ok(Self { kind, inputs, classes })
    }

    pub fn for_data(kind: ModelKind, data: &Dataset) -> Result<Self> {
        Self::new(kind, data.width(), data.num_classes())
    }

    pub fn dim(&self) -> usize {
        let (p, c) = (self.inputs, self.classes);
        match self.kind {
            ModelKind::Logistic if c == 2 => p + 1,
            ModelKind::Logistic => c * (p + 1),
            ModelKind::Mlp { hidden: h } => h * (p + 1) + c * (h + 1),
        }
    }

    /// Zeros for logistic; small uniform weights (Glorot range) for the MLP so
    /// hidden units are not symmetric.
    pub fn init_params(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut params = vec![0.0; self.dim()];
        if let ModelKind::Mlp { hidden: h } = self.kind {
            let (p, c) = (self.inputs, self.classes);
            let a1 = (6.0 / (p + h) as f64).sqrt();
            for w in &mut params[..h * p] {
                *w = rng.random_range(-a1..a1);
            }
            let a2 = (6.0 / (h + c) as f64).sqrt();
            let off = h * (p + 1);
            for w in &mut params[off..off + c * h] {
                *w = rng.random_range(-a2..a2);
            }
        }
        params
    }

    fn check(&self, params: &[f64], data: &Dataset) -> Result<()> {
        if params.len() != self.dim() {
            return Err(Error::invalid(format!("expected {} parameters, got {}", self.dim(), params.len())));
        }
        if data.width() != self.inputs {
            return Err(Error::invalid(format!(
                "model takes {} features, data has {}",
                self.inputs,
                data.width()
            )));
        }
        if data.num_classes() > self.classes {
            return Err(Error::invalid("data has more classes than the model"));
        }
        Ok(())
    }

    /// Loss of one sample; adds `scale * ∇loss` into `grad` when given.
    fn sample(&self, params: &[f64], x: &[f64], y: usize, grad: Option<(&mut [f64], f64)>, scratch: &mut Scratch) -> f64 {
        let (p, c) = (self.inputs, self.classes);
        match self.kind {
            ModelKind::Logistic if c == 2 => {
                let z = dot(&params[..p], x) + params[p];
                let sign = if y == 1 { 1.0 } else { -1.0 };
                let m = sign * z;
                if let Some((g, scale)) = grad {
                    // d/dz softplus(-m) = -sign * sigmoid(-m)
                    let dz = -sign * sigmoid(-m) * scale;
                    axpy(dz, x, &mut g[..p]);
                    g[p] += dz;
                }
                softplus(-m)
            }
            ModelKind::Logistic => {
                let logits = &mut scratch.logits;
                logits.clear();
                logits.extend((0..c).map(|k| dot(&params[k * p..(k + 1) * p], x) + params[c * p + k]));
                let loss = softmax_in_place(logits, y);
                if let Some((g, scale)) = grad {
                    for k in 0..c {
                        let dz = (logits[k] - if k == y { 1.0 } else { 0.0 }) * scale;
                        axpy(dz, x, &mut g[k * p..(k + 1) * p]);
                        g[c * p + k] += dz;
                    }
                }
                loss
            }
            ModelKind::Mlp { hidden: h } => {
                let (w1, rest) = params.split_at(h * p);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(c * h);
                let hid = &mut scratch.hidden;
                hid.clear();
                hid.extend((0..h).map(|j| (dot(&w1[j * p..(j + 1) * p], x) + b1[j]).tanh()));
                let logits = &mut scratch.logits;
                logits.clear();
                logits.extend((0..c).map(|k| dot(&w2[k * h..(k + 1) * h], hid) + b2[k]));
                let loss = softmax_in_place(logits, y);
                if let Some((g, scale)) = grad {
                    let (gw1, rest) = g.split_at_mut(h * p);
                    let (gb1, rest) = rest.split_at_mut(h);
                    let (gw2, gb2) = rest.split_at_mut(c * h);
                    let back = &mut scratch.back;
                    back.clear();
                    back.resize(h, 0.0);
                    for k in 0..c {
                        let dz = (logits[k] - if k == y { 1.0 } else { 0.0 }) * scale;
                        axpy(dz, hid, &mut gw2[k * h..(k + 1) * h]);
                        gb2[k] += dz;
                        axpy(dz, &w2[k * h..(k + 1) * h], back);
                    }
                    for j in 0..h {
                        let da = back[j] * (1.0 - hid[j] * hid[j]);
                        axpy(da, x, &mut gw1[j * p..(j + 1) * p]);
                        gb1[j] += da;
                    }
                }
                loss
            }
        }
    }

    /// Mean cross-entropy over `data`.
    pub fn loss(&self, params: &[f64], data: &Dataset) -> Result<f64> {
        self.check(params, data)?;
        let mut scratch = Scratch::default();
        let total: f64 = (0..data.len()).map(|i| self.sample(params, data.row(i), data.label(i), None, &mut scratch)).sum();
        Ok(total / data.len() as f64)
    }

    /// Mean gradient over the listed rows (repeats allowed).
    pub fn gradient_on(&self, params: &[f64], data: &Dataset, rows: &[usize]) -> Result<Vec<f64>> {
        self.check(params, data)?;
        if rows.is_empty() {
            return Err(Error::invalid("gradient over an empty batch"));
        }
        let mut g = vec![0.0; self.dim()];
        let scale = 1.0 / rows.len() as f64;
        let mut scratch = Scratch::default();
        for &i in rows {
            self.sample(params, data.row(i), data.label(i), Some((&mut g, scale)), &mut scratch);
        }
        Ok(g)
    }

    pub fn full_gradient(&self, params: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        let rows: Vec<usize> = (0..data.len()).collect();
        self.gradient_on(params, data, &rows)
    }

    /// Minibatch of `batch_size` rows drawn uniformly with replacement. A batch
    /// as large as the shard is the exact full gradient.
    pub fn minibatch_gradient(&self, params: &[f64], data: &Dataset, batch_size: usize, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        if batch_size == 0 || batch_size > data.len() {
            return Err(Error::invalid(format!("batch size {batch_size} outside [1, {}]", data.len())));
        }
        if batch_size == data.len() {
            return self.full_gradient(params, data);
        }
        let all: Vec<usize> = (0..data.len()).collect();
        let rows: Vec<usize> = (0..batch_size).map(|_| *all.choose(rng).expect("nonempty")).collect();
        self.gradient_on(params, data, &rows)
    }

    pub fn predict(&self, params: &[f64], x: &[f64]) -> usize {
        let (p, c) = (self.inputs, self.classes);
        match self.kind {
            ModelKind::Logistic if c == 2 => usize::from(dot(&params[..p], x) + params[p] > 0.0),
            _ => {
                let mut scratch = Scratch::default();
                self.sample(params, x, 0, None, &mut scratch);
                argmax(&scratch.logits)
            }
        }
    }

    pub fn accuracy(&self, params: &[f64], data: &Dataset) -> Result<f64> {
        self.check(params, data)?;
        let hits = (0..data.len()).filter(|&i| self.predict(params, data.row(i)) == data.label(i)).count();
        Ok(hits as f64 / data.len() as f64)
    }
}

/// A shape with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub shape: ModelShape,
    pub params: Vec<f64>,
}

impl Model {
    pub fn new(shape: ModelShape, params: Vec<f64>) -> Result<Self> {
        if params.len() != shape.dim() {
            return Err(Error::invalid(format!("expected {} parameters, got {}", shape.dim(), params.len())));
        }
        if params.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite parameter"));
        }
        Ok(Self { shape, params })
    }

    pub fn zeros(shape: ModelShape) -> Self {
        Self { shape, params: vec![0.0; shape.dim()] }
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }
}

pub fn loss(model: &Model, data: &Dataset) -> Result<f64> {
    model.shape.loss(&model.params, data)
}

pub fn minibatch_gradient(model: &Model, data: &Dataset, batch_size: usize, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
    model.shape.minibatch_gradient(&model.params, data, batch_size, rng)
}

/// Largest relative error between the analytic full-batch gradient and central
/// differences, over `min(d, 200)` coordinates picked with a fixed seed.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-4)`; the floor keeps
/// near-zero coordinates from amplifying rounding noise.
pub fn finite_diff_check(model: &Model, data: &Dataset, step: f64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::invalid("step must be positive"));
    }
    let shape = model.shape;
    let analytic = shape.full_gradient(&model.params, data)?;
    let d = model.dim();
    let coords: Vec<usize> = if d <= 200 {
        (0..d).collect()
    } else {
        rand::seq::index::sample(&mut seeded(0x0fd), d, 200).into_vec()
    };
    let mut x = model.params.clone();
    let mut worst = 0.0f64;
    for j in coords {
        let orig = x[j];
        x[j] = orig + step;
        let up = shape.loss(&x, data)?;
        x[j] = orig - step;
        let down = shape.loss(&x, data)?;
        x[j] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[j];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Plain minibatch SGD, used for quick baselines and tests.
pub fn train_sgd(model: &mut Model, data: &Dataset, steps: usize, eta: f64, batch_size: usize, rng: &mut dyn RngCore) -> Result<()> {
    let batch = batch_size.min(data.len());
    for _ in 0..steps {
        let g = model.shape.minibatch_gradient(&model.params, data, batch, rng)?;
        axpy(-eta, &g, &mut model.params);
    }
    Ok(())
}

#[derive(Default)]
struct Scratch {
    logits: Vec<f64>,
    hidden: Vec<f64>,
    back: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Turns logits into probabilities and returns `-ln p_y`.
fn softmax_in_place(z: &mut [f64], y: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let loss = sum.ln() - z[y].ln();
    for v in z.iter_mut() {
        *v /= sum;
    }
    loss
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}
