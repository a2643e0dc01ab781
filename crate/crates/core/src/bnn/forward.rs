use super::{BnnError, GaussianPosterior, LayerParams, WeightSet};
use rand::Rng;

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `W x + b`. Inputs with many exact zeros (raw images) only touch the
/// nonzero columns.
pub(crate) fn affine(layer: &LayerParams, x: &[f64]) -> Vec<f64> {
    let nonzero: Vec<usize> = (0..x.len()).filter(|&i| x[i] != 0.0).collect();
    let sparse = nonzero.len() * 2 < x.len();
    (0..layer.rows)
        .map(|j| {
            let row = layer.row(j);
            let dot: f64 = if sparse {
                nonzero.iter().map(|&i| row[i] * x[i]).sum()
            } else {
                row.iter().zip(x).map(|(w, v)| w * v).sum()
            };
            dot + layer.bias[j]
        })
        .collect()
}

/// Per-layer vectors: pre-activations and activations.
type LayerTrace = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Forward pass returning `(pre_activations, activations)` where
/// `activations[0] = x` and `activations[l]` is the output of layer `l`.
pub(crate) fn forward_cached(
    w: &WeightSet,
    x: &[f64],
) -> Result<LayerTrace, BnnError> {
    let cols = w.layers.first().map_or(0, |l| l.cols);
    if x.len() != cols {
        return Err(BnnError::Dimension {
            expected: cols,
            actual: x.len(),
        });
    }
    let last = w.layers.len() - 1;
    let mut pre = Vec::with_capacity(w.layers.len());
    let mut acts = Vec::with_capacity(w.layers.len() + 1);
    acts.push(x.to_vec());
    for (l, layer) in w.layers.iter().enumerate() {
        let prev = &acts[l];
        if prev.len() != layer.cols {
            return Err(BnnError::Dimension {
                expected: layer.cols,
                actual: prev.len(),
            });
        }
        let z = affine(layer, prev);
        let a = if l == last {
            softmax(&z)
        } else {
            z.iter().map(|&v| v.max(0.0)).collect()
        };
        pre.push(z);
        acts.push(a);
    }
    Ok((pre, acts))
}

/// `(x_0, x_1, ..., x_L)` with `x_l = relu(W_l x_{l-1} + b_l)` for hidden
/// layers and softmax on the last.
pub fn forward_with_activations(w: &WeightSet, x: &[f64]) -> Result<Vec<Vec<f64>>, BnnError> {
    forward_cached(w, x).map(|(_, acts)| acts)
}

/// Mean of the softmax outputs of `k` independent posterior draws.
pub fn predict_ensemble<R: Rng + ?Sized>(
    post: &GaussianPosterior,
    x: &[f64],
    k: usize,
    rng: &mut R,
) -> Result<Vec<f64>, BnnError> {
    if k == 0 {
        return Err(BnnError::Config("ensemble size must be at least 1".into()));
    }
    let mut mean = vec![0.0; post.arch.output_size()];
    for _ in 0..k {
        let w = post.sample_weights(rng);
        let out = forward_with_activations(&w, x)?;
        for (m, p) in mean.iter_mut().zip(out.last().expect("nonempty")) {
            *m += p;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k as f64);
    Ok(mean)
}
