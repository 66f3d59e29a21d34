//! Synthetic labeled image sets for desk-scale experiments: one Gaussian
//! blob prototype per class plus i.i.d. noise. Linearly separable at
//! moderate noise and byte-deterministic per seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub input_shape: Vec<usize>,
    pub noise: f32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 5,
            per_class: 60,
            input_shape: vec![3, 8, 8],
            noise: 0.3,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub samples: Vec<(Tensor, usize)>,
    pub prototypes: Vec<Tensor>,
}

impl SynthDataset {
    /// Samples of one class, in generation order.
    pub fn class_samples(&self, class: usize) -> Vec<Tensor> {
        self.samples
            .iter()
            .filter(|(_, l)| *l == class)
            .map(|(t, _)| t.clone())
            .collect()
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f32 {
    let u1: f32 = rng.gen_range(f32::MIN_POSITIVE..1.0);
    let u2: f32 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f32::consts::PI * u2).cos()
}

/// Generate `classes * per_class` labeled tensors: class prototype plus
/// `noise`-scaled Gaussian perturbation.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    if cfg.classes < 2 {
        return Err(Error::Config("need at least 2 classes".into()));
    }
    let n: usize = cfg.input_shape.iter().product();
    if n == 0 || cfg.input_shape.is_empty() {
        return Err(Error::Config(format!(
            "degenerate input shape {:?}",
            cfg.input_shape
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prototypes: Vec<Tensor> = (0..cfg.classes)
        .map(|_| {
            let data = (0..n).map(|_| normal(&mut rng)).collect();
            Tensor::new(cfg.input_shape.clone(), data).expect("proto dims")
        })
        .collect();
    let mut samples = Vec::with_capacity(cfg.classes * cfg.per_class);
    for (label, proto) in prototypes.iter().enumerate() {
        for _ in 0..cfg.per_class {
            let data = proto
                .data()
                .iter()
                .map(|&p| p + cfg.noise * normal(&mut rng))
                .collect();
            samples.push((
                Tensor::new(cfg.input_shape.clone(), data).expect("sample dims"),
                label,
            ));
        }
    }
    Ok(SynthDataset {
        samples,
        prototypes,
    })
}
