//! Monte-Carlo estimate of the variational free energy
//! `KL[q(θ|φ) ‖ p(θ)] - E_q[log P(D|θ)]` and its reparameterized gradient.

use super::forward::forward_cached;
use super::{sigmoid, softplus, BnnError, GaussianPosterior, ScaleMixturePrior, WeightSet};
use rand::Rng;
use std::f64::consts::PI;

/// One evaluation of the loss, split into its two parts. `complexity` is the
/// sampled `log q(θ) - log p(θ)` already multiplied by the KL weight.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ElboTerms {
    pub loss: f64,
    pub complexity: f64,
    pub nll: f64,
}

#[derive(Debug, Clone)]
pub struct ElboGradient {
    pub terms: ElboTerms,
    pub mean: WeightSet,
    pub rho: WeightSet,
}

fn check_batch(inputs: &[&[f64]], labels: &[u8], classes: usize) -> Result<(), BnnError> {
    if inputs.is_empty() {
        return Err(BnnError::Config("empty batch".into()));
    }
    if inputs.len() != labels.len() {
        return Err(BnnError::Dimension {
            expected: inputs.len(),
            actual: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y as usize >= classes) {
        return Err(BnnError::Config(format!("label {bad} outside 0..{classes}")));
    }
    Ok(())
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Sum over the batch of `-log P(y|x, w)`, accumulating `d/dw` into `grad`
/// when given.
fn batch_nll(
    w: &WeightSet,
    inputs: &[&[f64]],
    labels: &[u8],
    mut grad: Option<&mut WeightSet>,
) -> Result<f64, BnnError> {
    let mut nll = 0.0;
    for (x, &y) in inputs.iter().zip(labels) {
        let (pre, acts) = forward_cached(w, x)?;
        let logits = pre.last().expect("at least one layer");
        nll += log_sum_exp(logits) - logits[y as usize];

        let Some(grad) = grad.as_deref_mut() else {
            continue;
        };
        // Softmax + cross-entropy: d/dz = p - onehot(y).
        let mut delta = acts.last().expect("output").clone();
        delta[y as usize] -= 1.0;
        for l in (0..w.layers.len()).rev() {
            let layer = &w.layers[l];
            let input = &acts[l];
            let g = &mut grad.layers[l];
            let nonzero: Vec<usize> = (0..input.len()).filter(|&i| input[i] != 0.0).collect();
            for (j, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[j] += d;
                let row = &mut g.weights[j * layer.cols..(j + 1) * layer.cols];
                for &i in &nonzero {
                    row[i] += d * input[i];
                }
            }
            if l == 0 {
                break;
            }
            let mut back = vec![0.0; layer.cols];
            for (j, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (b, &wji) in back.iter_mut().zip(layer.row(j)) {
                    *b += wji * d;
                }
            }
            for (b, &z) in back.iter_mut().zip(&pre[l - 1]) {
                if z <= 0.0 {
                    *b = 0.0;
                }
            }
            delta = back;
        }
    }
    Ok(nll)
}

/// Loss and gradients with respect to `(mean, rho)` for a fixed noise draw
/// `eps`, i.e. at `θ = mean + softplus(rho) * eps`.
pub fn elbo_gradient(
    post: &GaussianPosterior,
    prior: &ScaleMixturePrior,
    inputs: &[&[f64]],
    labels: &[u8],
    kl_weight: f64,
    eps: &WeightSet,
) -> Result<ElboGradient, BnnError> {
    check_batch(inputs, labels, post.arch.output_size())?;
    let w = post.weights_from_noise(eps);
    let mut dw = w.zeros_like();
    let nll = batch_nll(&w, inputs, labels, Some(&mut dw))?;

    let mut grad_mean = w.zeros_like();
    let mut grad_rho = w.zeros_like();
    let mut complexity = 0.0;
    let half_log_2pi = 0.5 * (2.0 * PI).ln();
    let params = w
        .values()
        .zip(post.mean.values())
        .zip(post.rho.values())
        .zip(eps.values())
        .zip(dw.values());
    for (((((&wk, &mu), &rho), &e), &dnll), (gm, gr)) in
        params.zip(grad_mean.values_mut().zip(grad_rho.values_mut()))
    {
        let sigma = softplus(rho);
        let diff = wk - mu;
        let log_q = -sigma.ln() - half_log_2pi - diff * diff / (2.0 * sigma * sigma);
        let (log_p, dlog_p) = prior.log_density_and_grad(wk);
        complexity += log_q - log_p;

        let dlog_q_dw = -diff / (sigma * sigma);
        let df_dw = kl_weight * (dlog_q_dw - dlog_p) + dnll;
        let direct_mu = kl_weight * diff / (sigma * sigma);
        let direct_sigma = kl_weight * (-1.0 / sigma + diff * diff / (sigma * sigma * sigma));
        *gm = df_dw + direct_mu;
        *gr = (df_dw * e + direct_sigma) * sigmoid(rho);
    }
    let complexity = kl_weight * complexity;
    Ok(ElboGradient {
        terms: ElboTerms {
            loss: complexity + nll,
            complexity,
            nll,
        },
        mean: grad_mean,
        rho: grad_rho,
    })
}

/// Loss only, at `θ = mean + softplus(rho) * eps`.
pub(crate) fn elbo_terms_at(
    post: &GaussianPosterior,
    prior: &ScaleMixturePrior,
    inputs: &[&[f64]],
    labels: &[u8],
    kl_weight: f64,
    w: &WeightSet,
) -> Result<ElboTerms, BnnError> {
    check_batch(inputs, labels, post.arch.output_size())?;
    let nll = batch_nll(w, inputs, labels, None)?;
    let half_log_2pi = 0.5 * (2.0 * PI).ln();
    let mut complexity = 0.0;
    for ((&wk, &mu), &rho) in w.values().zip(post.mean.values()).zip(post.rho.values()) {
        let sigma = softplus(rho);
        let diff = wk - mu;
        complexity += -sigma.ln() - half_log_2pi - diff * diff / (2.0 * sigma * sigma)
            - prior.log_density(wk);
    }
    let complexity = kl_weight * complexity;
    Ok(ElboTerms {
        loss: complexity + nll,
        complexity,
        nll,
    })
}

/// Monte-Carlo loss averaged over `mc_samples` posterior draws. The
/// complexity term is scaled by `kl_weight` (one over the number of
/// minibatches per epoch during training).
pub fn elbo_loss<R: Rng + ?Sized>(
    post: &GaussianPosterior,
    prior: &ScaleMixturePrior,
    inputs: &[&[f64]],
    labels: &[u8],
    kl_weight: f64,
    mc_samples: usize,
    rng: &mut R,
) -> Result<ElboTerms, BnnError> {
    if mc_samples == 0 {
        return Err(BnnError::Config("mc_samples must be at least 1".into()));
    }
    let mut acc = ElboTerms::default();
    for _ in 0..mc_samples {
        let w = post.sample_weights(rng);
        let t = elbo_terms_at(post, prior, inputs, labels, kl_weight, &w)?;
        acc.loss += t.loss;
        acc.complexity += t.complexity;
        acc.nll += t.nll;
    }
    let s = mc_samples as f64;
    Ok(ElboTerms {
        loss: acc.loss / s,
        complexity: acc.complexity / s,
        nll: acc.nll / s,
    })
}
