use super::{BnnError, MlpArchitecture};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

/// Standard deviation of the initial posterior means.
pub const INIT_MEAN_SD: f64 = 0.1;
/// Initial pre-softplus scale; `softplus(-3) ≈ 0.0486`.
pub const INIT_RHO: f64 = -3.0;

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weights and biases of one dense layer. `weights` is `rows × cols`
/// row-major with `rows = h_l` and `cols = h_{l-1}`, so entry `(j, i)`
/// connects input neuron `i` to output neuron `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            weights: vec![value; rows * cols],
            bias: vec![value; rows],
        }
    }

    pub fn from_parts(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Self {
        let rows = weights.len();
        let cols = weights.first().map_or(0, Vec::len);
        assert!(weights.iter().all(|r| r.len() == cols), "ragged weight matrix");
        assert_eq!(bias.len(), rows, "bias length must equal row count");
        Self {
            rows,
            cols,
            weights: weights.into_iter().flatten().collect(),
            bias,
        }
    }

    pub fn weight(&self, j: usize, i: usize) -> f64 {
        self.weights[j * self.cols + i]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.cols..(j + 1) * self.cols]
    }
}

/// One concrete parameter draw `θ = {(W_l, b_l)}`. Also used as the container
/// for posterior means, scales, gradients and optimizer moments, which share
/// the same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub layers: Vec<LayerParams>,
}

impl WeightSet {
    pub fn filled(arch: &MlpArchitecture, value: f64) -> Self {
        let layers = (0..arch.num_layers())
            .map(|l| {
                let (r, c) = arch.layer_shape(l);
                LayerParams::filled(r, c, value)
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams::filled(l.rows, l.cols, 0.0))
                .collect(),
        }
    }

    pub fn architecture(&self) -> Result<MlpArchitecture, BnnError> {
        let mut sizes = vec![self.layers.first().map_or(0, |l| l.cols)];
        for (k, l) in self.layers.iter().enumerate() {
            if l.cols != sizes[k] {
                return Err(BnnError::Dimension {
                    expected: sizes[k],
                    actual: l.cols,
                });
            }
            sizes.push(l.rows);
        }
        MlpArchitecture::new(sizes)
    }

    /// All parameters in canonical order: per layer, weights then biases.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Standard-normal noise with this shape, drawn in canonical order.
    pub fn standard_normal<R: Rng + ?Sized>(arch: &MlpArchitecture, rng: &mut R) -> Self {
        let mut eps = Self::filled(arch, 0.0);
        for v in eps.values_mut() {
            *v = StandardNormal.sample(rng);
        }
        eps
    }
}

/// The variational posterior `q(θ|φ)`: independent Gaussians with mean `mean`
/// and scale `softplus(rho)` for every weight and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub arch: MlpArchitecture,
    pub mean: WeightSet,
    pub rho: WeightSet,
}

impl GaussianPosterior {
    /// Means drawn from `N(0, 0.1²)`, every `rho = -3`.
    pub fn init<R: Rng + ?Sized>(arch: &MlpArchitecture, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, INIT_MEAN_SD).expect("valid normal");
        let mut mean = WeightSet::filled(arch, 0.0);
        for v in mean.values_mut() {
            *v = normal.sample(rng);
        }
        Self {
            arch: arch.clone(),
            mean,
            rho: WeightSet::filled(arch, INIT_RHO),
        }
    }

    /// A posterior whose scales are all `softplus(rho)`.
    pub fn from_mean(mean: WeightSet, rho: f64) -> Result<Self, BnnError> {
        let arch = mean.architecture()?;
        let mut rho_set = mean.zeros_like();
        rho_set.values_mut().for_each(|v| *v = rho);
        Ok(Self {
            arch,
            mean,
            rho: rho_set,
        })
    }

    pub fn sigma(&self) -> impl Iterator<Item = f64> + '_ {
        self.rho.values().map(|&r| softplus(r))
    }

    /// `w = mean + softplus(rho) * eps` for a given noise draw.
    pub fn weights_from_noise(&self, eps: &WeightSet) -> WeightSet {
        let mut w = self.mean.clone();
        for ((w, &r), &e) in w.values_mut().zip(self.rho.values()).zip(eps.values()) {
            *w += softplus(r) * e;
        }
        w
    }

    /// One draw `θ ~ q(θ|φ)`.
    pub fn sample_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> WeightSet {
        let mut w = self.mean.clone();
        for (w, &r) in w.values_mut().zip(self.rho.values()) {
            let e: f64 = StandardNormal.sample(rng);
            *w += softplus(r) * e;
        }
        w
    }
}
