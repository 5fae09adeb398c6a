//! Synthetic classification data: Gaussian blobs around class centroids.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{ensure_len, Error, Result};
use crate::nn::{self, ModelParams};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    n_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("feature dimension must be positive".into()));
        }
        ensure_len("dataset features", labels.len() * dim, features.len())?;
        if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: n_classes,
            });
        }
        Ok(Self {
            features,
            labels,
            dim,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.features.chunks_exact(self.dim).zip(self.labels.iter().copied())
    }

    /// Copies the listed rows into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!(
                    "index {i} out of range for dataset of {}",
                    self.len()
                )));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Ok(Dataset {
            features,
            labels,
            dim: self.dim,
            n_classes: self.n_classes,
        })
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        self.labels.iter().for_each(|&l| counts[l] += 1);
        counts
    }
}

/// Points on the radius-`radius` sphere, pairwise at least roughly
/// evenly spaced and kept away from `avoid`.
fn sphere_points(
    n: usize,
    dim: usize,
    radius: f64,
    avoid: &[Vec<f64>],
    rng: &mut seed::SimRng,
) -> Vec<Vec<f64>> {
    let even_chord = if n > 1 {
        2.0 * radius * (std::f64::consts::PI / n as f64).sin()
    } else {
        radius
    };
    let mut min_sep = 0.7 * even_chord;
    let mut points: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut attempts = 0;
    while points.len() < n {
        let p = random_direction(dim, rng)
            .into_iter()
            .map(|v| v * radius)
            .collect::<Vec<_>>();
        let far_enough = points
            .iter()
            .chain(avoid)
            .all(|q| euclid(&p, q) >= min_sep);
        if far_enough || dim == 1 {
            points.push(p);
            attempts = 0;
        } else {
            attempts += 1;
            if attempts > 2_000 {
                min_sep *= 0.9;
                attempts = 0;
            }
        }
    }
    points
}

fn random_direction(dim: usize, rng: &mut seed::SimRng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Class centroids used by [`gen_blobs`] for a given seed.
pub fn class_centroids(n_classes: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::rng(seed);
    sphere_points(n_classes, dim, 1.0, &[], &mut rng)
}

fn sample_cluster(
    centroid: &[f64],
    count: usize,
    noise: &Normal<f64>,
    rng: &mut seed::SimRng,
    out: &mut Vec<f64>,
) {
    for _ in 0..count {
        out.extend(centroid.iter().map(|c| c + noise.sample(rng)));
    }
}

/// Gaussian clusters, one per class, centred on a seeded unit sphere.
/// Rows are ordered class by class.
pub fn gen_blobs(
    n_classes: usize,
    n_per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_classes < 2 || n_per_class < 1 || dim < 1 {
        return Err(Error::InvalidArgument(format!(
            "blobs need n_classes >= 2, n_per_class >= 1, dim >= 1 (got {n_classes}, {n_per_class}, {dim})"
        )));
    }
    if !(spread.is_finite() && spread > 0.0) {
        return Err(Error::InvalidArgument(format!("spread must be positive, got {spread}")));
    }
    let centroids = class_centroids(n_classes, dim, seed);
    let noise = Normal::new(0.0, spread).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = seed::rng(seed::derive_seed(&[seed, 0xB10B]));
    let mut features = Vec::with_capacity(n_classes * n_per_class * dim);
    let mut labels = Vec::with_capacity(n_classes * n_per_class);
    for (class, c) in centroids.iter().enumerate() {
        sample_cluster(c, n_per_class, &noise, &mut rng, &mut features);
        labels.extend(std::iter::repeat_n(class, n_per_class));
    }
    Dataset::new(features, dim, labels, n_classes)
}

/// Samples from extra clusters placed away from the class centroids, used
/// as foreign data by poisoning clients. Labels are drawn uniformly from
/// the task's classes.
pub fn gen_foreign(
    n_classes: usize,
    n_clusters: usize,
    n_samples: usize,
    dim: usize,
    spread: f64,
    class_seed: u64,
    seed: u64,
) -> Result<Dataset> {
    if n_clusters == 0 || n_samples == 0 {
        return Err(Error::InvalidArgument("foreign pool needs clusters and samples".into()));
    }
    let avoid = class_centroids(n_classes, dim, class_seed);
    let mut rng = seed::rng(seed);
    let centres = sphere_points(n_clusters, dim, 2.0, &avoid, &mut rng);
    let noise = Normal::new(0.0, spread).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut features = Vec::with_capacity(n_samples * dim);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        sample_cluster(&centres[i % n_clusters], 1, &noise, &mut rng, &mut features);
        labels.push(rng.random_range(0..n_classes));
    }
    Dataset::new(features, dim, labels, n_classes)
}

/// Fraction of rows whose argmax prediction equals the label.
pub fn evaluate(params: &ModelParams, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    let mut correct = 0usize;
    for (x, y) in data.rows() {
        if nn::argmax(&nn::logits(params, x)?) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
