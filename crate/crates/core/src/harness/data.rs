//! Synthetic oriented-grating classification data.

use std::f32::consts::PI;

use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::SplitRng;
use crate::tensor::Tensor;

/// How a dataset was generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GratingSpec {
    pub seed: u64,
    pub classes: usize,
    pub count: usize,
    pub size: usize,
    /// Standard deviation of the additive pixel noise.
    pub noise: f32,
    /// Orientation jitter as a fraction of the angular gap between classes.
    pub jitter: f32,
}

impl GratingSpec {
    pub fn new(seed: u64, classes: usize, count: usize, size: usize) -> Self {
        Self {
            seed,
            classes,
            count,
            size,
            noise: 0.5,
            jitter: 0.25,
        }
    }
}

/// Images `[3, s, s]` with one integer label each.
#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub spec: GratingSpec,
}

impl ToyDataset {
    /// Class `c` is a sinusoidal grating at angle `pi c / classes` with random
    /// frequency, phase and per-channel contrast, plus Gaussian noise.
    pub fn gratings(spec: GratingSpec) -> Result<Self> {
        if spec.classes < 2 || spec.count < spec.classes || spec.size == 0 {
            return Err(Error::Config(format!(
                "toy dataset needs >= 2 classes, count >= classes and a positive size, got {spec:?}"
            )));
        }
        let mut rng = SplitRng::stream(spec.seed, 0x6772_6174);
        let mut labels: Vec<usize> = (0..spec.count).map(|i| i % spec.classes).collect();
        labels.shuffle(&mut rng);
        let noise = Normal::new(0.0f32, spec.noise.max(0.0))
            .map_err(|e| Error::Config(format!("noise: {e}")))?;
        let s = spec.size;
        let gap = PI / spec.classes as f32;
        let images = labels
            .iter()
            .map(|&c| {
                let theta = c as f32 * gap + rng.random_range(-1.0..=1.0) * spec.jitter * gap;
                let cycles: f32 = rng.random_range(2.0..4.0);
                let phase: f32 = rng.random_range(0.0..2.0 * PI);
                let contrast: [f32; 3] = [rng.random_range(0.5..1.0), rng.random_range(0.5..1.0), rng.random_range(0.5..1.0)];
                let (dx, dy) = (theta.cos(), theta.sin());
                let k = 2.0 * PI * cycles / s as f32;
                let mut img = Tensor::zeros(&[3, s, s]);
                let data = img.data_mut();
                for (ch, amp) in contrast.iter().enumerate() {
                    for y in 0..s {
                        for x in 0..s {
                            let wave = (k * (x as f32 * dx + y as f32 * dy) + phase).sin();
                            data[(ch * s + y) * s + x] = amp * wave + noise.sample(&mut rng);
                        }
                    }
                }
                img
            })
            .collect();
        Ok(Self { images, labels, spec })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.spec.classes];
        self.labels.iter().for_each(|&l| counts[l] += 1);
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_deterministic() {
        let spec = GratingSpec::new(3, 3, 31, 8);
        let a = ToyDataset::gratings(spec).unwrap();
        let b = ToyDataset::gratings(spec).unwrap();
        let counts = a.class_counts();
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.images, b.images);
        assert_eq!(a.images[0].shape(), &[3, 8, 8]);
        let c = ToyDataset::gratings(GratingSpec::new(4, 3, 31, 8)).unwrap();
        assert_ne!(a.images, c.images);
    }

    #[test]
    fn rejects_degenerate_specs() {
        assert!(ToyDataset::gratings(GratingSpec::new(0, 1, 10, 8)).is_err());
        assert!(ToyDataset::gratings(GratingSpec::new(0, 4, 3, 8)).is_err());
    }
}
