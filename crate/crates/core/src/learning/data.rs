use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::seeded;
use crate::{Error, Result};

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    width: usize,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, width: usize, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("a dataset needs at least one sample"));
        }
        if width == 0 || features.len() != labels.len() * width {
            return Err(Error::invalid(format!(
                "{} feature values do not form {} rows of width {width}",
                features.len(),
                labels.len()
            )));
        }
        if num_classes < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!("label {bad} outside [0, {num_classes})")));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        Ok(Self { features, width, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// The same samples with a (larger) class count, so train and test sets
    /// agree on the output dimension.
    pub fn with_classes(self, num_classes: usize) -> Result<Self> {
        Self::new(self.features, self.width, self.labels, num_classes)
    }

    /// Copies the given rows, in order, into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.width);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!("row {i} out of range")));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(features, self.width, labels, self.num_classes)
    }

    /// Writes a header row `x0,..,x{p-1},label` and one line per sample.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (0..self.width).map(|j| format!("x{j}")).chain(["label".into()]).collect();
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut line: Vec<String> = self.row(i).iter().map(|x| x.to_string()).collect();
            line.push(self.labels[i].to_string());
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// One node's slice of the training data.
#[derive(Debug, Clone)]
pub struct Shard {
    /// Rows of the parent dataset, ascending.
    pub indices: Vec<usize>,
    pub data: Dataset,
}

/// Gaussian class blobs with unit variance.
///
/// Class means sit pairwise `separation` apart: on scaled basis vectors when
/// `num_classes <= p`, otherwise on a regular polygon in the first two
/// coordinates (adjacent classes `separation` apart) or evenly on a line when
/// `p == 1`. Labels cycle through the classes so counts differ by at most one.
pub fn gen_synthetic(n: usize, p: usize, num_classes: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if p == 0 || num_classes < 2 || n < num_classes {
        return Err(Error::invalid("need p >= 1, at least two classes and n >= num_classes"));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::invalid("separation must be finite and nonnegative"));
    }
    let means = class_means(p, num_classes, separation);
    let mut rng = seeded(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(n * p);
    for &y in &labels {
        for j in 0..p {
            let z: f64 = rng.sample(StandardNormal);
            features.push(means[y][j] + z);
        }
    }
    Dataset::new(features, p, labels, num_classes)
}

fn class_means(p: usize, c: usize, sep: f64) -> Vec<Vec<f64>> {
    let mut means = vec![vec![0.0; p]; c];
    if c <= p {
        for (k, m) in means.iter_mut().enumerate() {
            m[k] = sep / std::f64::consts::SQRT_2;
        }
    } else if p >= 2 {
        let radius = sep / (2.0 * (std::f64::consts::PI / c as f64).sin());
        for (k, m) in means.iter_mut().enumerate() {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / c as f64;
            m[0] = radius * angle.cos();
            m[1] = radius * angle.sin();
        }
    } else {
        for (k, m) in means.iter_mut().enumerate() {
            m[0] = sep * k as f64;
        }
    }
    means
}

/// Splits `data` into `n_nodes` disjoint shards.
///
/// For every class, `round(label_fraction * count)` randomly chosen samples go
/// to node `class mod n_nodes`. The leftover samples of all classes are
/// shuffled together and dealt round-robin.
pub fn partition_noniid(data: &Dataset, n_nodes: usize, label_fraction: f64, seed: u64) -> Result<Vec<Shard>> {
    if n_nodes == 0 {
        return Err(Error::invalid("need at least one node"));
    }
    if !(0.0..=1.0).contains(&label_fraction) {
        return Err(Error::invalid("label_fraction must lie in [0, 1]"));
    }
    let mut rng = seeded(seed);
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
    let mut rest = Vec::new();
    for class in 0..data.num_classes() {
        let mut members: Vec<usize> = (0..data.len()).filter(|&i| data.label(i) == class).collect();
        members.shuffle(&mut rng);
        let own = ((label_fraction * members.len() as f64).round() as usize).min(members.len());
        assigned[class % n_nodes].extend_from_slice(&members[..own]);
        rest.extend_from_slice(&members[own..]);
    }
    rest.shuffle(&mut rng);
    for (k, i) in rest.into_iter().enumerate() {
        assigned[k % n_nodes].push(i);
    }
    assigned
        .into_iter()
        .map(|mut indices| {
            indices.sort_unstable();
            if indices.is_empty() {
                return Err(Error::invalid("partition left a node without data; use fewer nodes or more samples"));
            }
            let shard = data.subset(&indices)?;
            Ok(Shard { indices, data: shard })
        })
        .collect()
}

/// Where training (and optional test) data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        #[serde(default = "defaults::samples")]
        samples: usize,
        #[serde(default = "defaults::features")]
        features: usize,
        #[serde(default = "defaults::classes")]
        classes: usize,
        #[serde(default = "defaults::separation")]
        separation: f64,
        /// Held-out samples drawn from the same blobs; 0 disables the test set.
        #[serde(default)]
        test_samples: usize,
    },
    Idx {
        images: std::path::PathBuf,
        labels: std::path::PathBuf,
        #[serde(default)]
        test_images: Option<std::path::PathBuf>,
        #[serde(default)]
        test_labels: Option<std::path::PathBuf>,
    },
}

mod defaults {
    pub fn samples() -> usize {
        1000
    }
    pub fn features() -> usize {
        10
    }
    pub fn classes() -> usize {
        10
    }
    pub fn separation() -> f64 {
        3.0
    }
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            samples: defaults::samples(),
            features: defaults::features(),
            classes: defaults::classes(),
            separation: defaults::separation(),
            test_samples: 0,
        }
    }
}

impl DataSource {
    /// Loads `(train, test)`. Synthetic test data use a seed derived from
    /// `seed` so the two sets are independent draws.
    pub fn load(&self, seed: u64) -> Result<(Dataset, Option<Dataset>)> {
        match self {
            DataSource::Synthetic { samples, features, classes, separation, test_samples } => {
                let train = gen_synthetic(*samples, *features, *classes, *separation, seed)?;
                let test = if *test_samples > 0 {
                    Some(gen_synthetic(*test_samples, *features, *classes, *separation, seed ^ 0x5eed_7e57)?)
                } else {
                    None
                };
                Ok((train, test))
            }
            DataSource::Idx { images, labels, test_images, test_labels } => {
                let train = super::idx::load_idx(images, labels)?;
                let test = match (test_images, test_labels) {
                    (Some(i), Some(l)) => {
                        let test = super::idx::load_idx(i, l)?;
                        let classes = train.num_classes().max(test.num_classes());
                        Some(test.with_classes(classes)?)
                    }
                    (None, None) => None,
                    _ => return Err(Error::Config("test_images and test_labels go together".into())),
                };
                Ok((train, test))
            }
        }
    }

    pub fn is_idx(&self) -> bool {
        matches!(self, DataSource::Idx { .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let a = gen_synthetic(103, 3, 4, 2.0, 9).unwrap();
        let b = gen_synthetic(103, 3, 4, 2.0, 9).unwrap();
        assert_eq!(a, b);
        let counts: Vec<usize> = (0..4).map(|c| a.labels().iter().filter(|&&y| y == c).count()).collect();
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        assert_ne!(a, gen_synthetic(103, 3, 4, 2.0, 10).unwrap());
    }

    #[test]
    fn class_means_are_separated() {
        for (p, c) in [(5, 3), (2, 6), (1, 3)] {
            let m = class_means(p, c, 4.0);
            let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            assert!((dist(&m[0], &m[1]) - 4.0).abs() < 1e-12, "p={p} c={c}");
        }
    }

    #[test]
    fn half_label_split() {
        let features: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let labels: Vec<usize> = (0..100).map(|i| i / 10).collect();
        let data = Dataset::new(features, 1, labels, 10).unwrap();
        let shards = partition_noniid(&data, 10, 0.5, 1).unwrap();
        for (node, s) in shards.iter().enumerate() {
            let own = s.data.labels().iter().filter(|&&y| y == node).count();
            assert!(own >= 5);
            assert!((8..=12).contains(&s.data.len()));
        }
        let mut all: Vec<usize> = shards.iter().flat_map(|s| s.indices.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn extreme_fractions() {
        let data = gen_synthetic(97, 2, 5, 1.0, 3).unwrap();
        let uniform = partition_noniid(&data, 4, 0.0, 3).unwrap();
        let sizes: Vec<usize> = uniform.iter().map(|s| s.data.len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);

        let pure = partition_noniid(&data, 5, 1.0, 3).unwrap();
        for (node, s) in pure.iter().enumerate() {
            assert!(s.data.labels().iter().all(|&y| y == node));
        }
    }

    #[test]
    fn csv_has_label_last() {
        let data = Dataset::new(vec![0.5, 1.0, 2.0, 3.0], 2, vec![1, 0], 2).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x0,x1,label\n0.5,1,1\n2,3,0\n");
    }

    #[test]
    fn rejects_bad_labels() {
        assert!(Dataset::new(vec![0.0], 1, vec![2], 2).is_err());
        assert!(Dataset::new(vec![f64::NAN], 1, vec![0], 2).is_err());
    }
}
