use super::ImageDataset;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Noise variance of the shift family and of the augmentation noise.
pub const SHIFT_VARIANCE: f64 = 1.0 / 9.0;

/// One member `s_mu(x) = clip(x + N(mu 1, sigma2 I), 0, 1)` of the shift
/// family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftSpec {
    pub mu: f64,
    pub sigma2: f64,
    pub seed: u64,
}

impl ShiftSpec {
    pub fn new(mu: f64, seed: u64) -> Self {
        Self {
            mu,
            sigma2: SHIFT_VARIANCE,
            seed,
        }
    }

    fn noise(&self) -> Normal<f64> {
        assert!(self.mu.is_finite(), "shift mean must be finite");
        assert!(self.sigma2 > 0.0, "shift variance must be positive");
        Normal::new(self.mu, self.sigma2.sqrt()).expect("valid normal")
    }
}

/// Applies the shift with noise drawn from `rng`. `spec.seed` is not consulted
/// here; callers seed `rng` from it when they need a standalone stream.
pub fn shift_apply<R: Rng + ?Sized>(x: &[f64], spec: &ShiftSpec, rng: &mut R) -> Vec<f64> {
    let noise = spec.noise();
    x.iter()
        .map(|&v| (v + noise.sample(rng)).clamp(0.0, 1.0))
        .collect()
}

/// Returns the input followed by one noisy copy of every sample
/// (`N(mu, 1/9)` added, clipped to `[0, 1]`), labels duplicated.
pub fn augment_gaussian<R: Rng + ?Sized>(
    dataset: &ImageDataset,
    mu: f64,
    rng: &mut R,
) -> ImageDataset {
    let spec = ShiftSpec::new(mu, 0);
    let mut samples = dataset.samples.clone();
    samples.extend(dataset.samples.iter().map(|x| shift_apply(x, &spec, rng)));
    let mut labels = dataset.labels.clone();
    labels.extend_from_slice(&dataset.labels);
    ImageDataset {
        name: format!("{}+aug{mu}", dataset.name),
        samples,
        labels,
    }
}
