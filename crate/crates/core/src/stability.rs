//! Layer constants behind the Lipschitz bound `|pTU(x) - pTU(y)| <= c ‖x - y‖∞`
//! and an empirical check of that bound.

use crate::bnn::{GaussianPosterior, LayerParams, WeightSet};
use crate::parallel::with_workers;
use crate::ptu::{ptu_from_weights, sample_draws, PtuError};
use crate::rng::substream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Per-layer constants for one weight draw, layers indexed from 0.
/// `cum_a[l]` and `cum_b[l]` are products over the first `l` layers, so
/// `cum_a[0] = cum_b[0] = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerConstants {
    /// ∞→∞ operator norm: largest absolute row sum of `W`.
    pub a: Vec<f64>,
    /// Growth factor of `‖x‖∞` across the layer over the reachable box.
    pub b: Vec<f64>,
    /// Largest absolute entry of `W`.
    pub c: Vec<f64>,
    pub cum_a: Vec<f64>,
    pub cum_b: Vec<f64>,
    /// Bound on `‖x₀‖∞` over the input domain.
    pub b0: f64,
}

fn row_sum_norm(layer: &LayerParams) -> f64 {
    layer
        .weights
        .chunks(layer.cols)
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// `B_l = (A_l R + ‖b_l‖∞) / R` with `R = cum_b[l] b0` the bound on the
/// layer input, so that `‖x_l‖∞ <= cum_b[l + 1] b0` on the domain.
pub fn layer_constants(w: &WeightSet, b0: f64) -> LayerConstants {
    assert!(b0 > 0.0 && b0.is_finite(), "input bound must be positive");
    let n = w.layers.len();
    let mut k = LayerConstants {
        a: Vec::with_capacity(n),
        b: Vec::with_capacity(n),
        c: Vec::with_capacity(n),
        cum_a: vec![1.0],
        cum_b: vec![1.0],
        b0,
    };
    for layer in &w.layers {
        let a = row_sum_norm(layer);
        let bias = max_abs(&layer.bias);
        let reach = k.cum_b.last().unwrap() * b0;
        let b = if reach > 0.0 {
            (a * reach + bias) / reach
        } else if bias == 0.0 {
            a
        } else {
            f64::INFINITY
        };
        k.a.push(a);
        k.b.push(b);
        k.c.push(max_abs(&layer.weights));
        k.cum_a.push(k.cum_a.last().unwrap() * a);
        k.cum_b.push(k.cum_b.last().unwrap() * b);
    }
    k
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LipschitzForm {
    /// `Σ_l 4 C_l 𝒜_l ℬ_{l-1} B₀ / L`.
    #[default]
    Declared,
    /// The same sum with an extra `𝒜_{l-1}` factor in every term.
    WithPrefix,
}

pub fn lipschitz_bound(k: &LayerConstants, form: LipschitzForm) -> f64 {
    let layers = k.a.len();
    let total: f64 = (0..layers)
        .map(|l| {
            let extra = match form {
                LipschitzForm::Declared => 1.0,
                LipschitzForm::WithPrefix => k.cum_a[l],
            };
            4.0 * k.c[l] * k.cum_a[l + 1] * k.cum_b[l] * k.b0 * extra
        })
        .sum();
    total / layers as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub checked: usize,
    /// Pairs with `x == y`, left out of the ratios.
    pub skipped: usize,
    pub max_ratio: f64,
    /// Largest constant over the shared draws.
    pub bound: f64,
    pub violations: usize,
    /// `|ΔpTU| / ‖Δx‖∞` per pair, NaN for skipped pairs.
    pub ratios: Vec<f64>,
}

/// Checks `|pTU(x) - pTU(y)| <= c ‖x - y‖∞` on every pair. All pTU values
/// share the same `m` draws from stream `(seed, 0)`; `c` is the maximum of
/// the per-draw constants.
pub fn empirical_lipschitz_check(
    post: &GaussianPosterior,
    pairs: &[(Vec<f64>, Vec<f64>)],
    m: usize,
    seed: u64,
    b0: f64,
    form: LipschitzForm,
    workers: usize,
) -> Result<LipschitzReport, PtuError> {
    if m == 0 {
        return Err(PtuError::Config("m must be at least 1".into()));
    }
    if !(b0 > 0.0 && b0.is_finite()) {
        return Err(PtuError::Config(format!("input bound must be positive, got {b0}")));
    }
    let outside = pairs
        .iter()
        .flat_map(|(x, y)| [x, y])
        .any(|v| max_abs(v) > b0);
    if outside {
        return Err(PtuError::Config(format!("an input leaves the domain ‖x‖∞ <= {b0}")));
    }
    let draws = sample_draws(post, m, &mut substream(seed, 0));
    let bound = draws
        .iter()
        .map(|w| lipschitz_bound(&layer_constants(w, b0), form))
        .fold(0.0, f64::max);
    let ratios: Vec<f64> = with_workers(workers, || {
        pairs
            .par_iter()
            .map(|(x, y)| {
                let dist = x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
                if dist == 0.0 {
                    return Ok(f64::NAN);
                }
                let px = ptu_from_weights(&draws, x)?.ptu;
                let py = ptu_from_weights(&draws, y)?.ptu;
                Ok((px - py).abs() / dist)
            })
            .collect::<Result<_, PtuError>>()
    })?;
    let skipped = ratios.iter().filter(|r| r.is_nan()).count();
    let valid = ratios.iter().filter(|r| !r.is_nan());
    Ok(LipschitzReport {
        checked: pairs.len() - skipped,
        skipped,
        max_ratio: valid.clone().copied().fold(0.0, f64::max),
        bound,
        violations: valid.filter(|&&r| r > bound).count(),
        ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnn::{forward_with_activations, MlpArchitecture};
    use crate::rng::seeded;
    use crate::topology::layer_diagrams;
    use rand::Rng;

    fn sup_dist(x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
    }

    fn single(w: Vec<Vec<f64>>, b: Vec<f64>) -> WeightSet {
        WeightSet { layers: vec![LayerParams::from_parts(w, b)] }
    }

    #[test]
    fn hand_examples() {
        let id = layer_constants(&single(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]), 1.0);
        assert_eq!((id.a[0], id.b[0], id.c[0]), (1.0, 1.0, 1.0));
        assert_eq!(id.cum_a[0], 1.0);
        assert_eq!(id.cum_b[0], 1.0);

        let k = layer_constants(&single(vec![vec![1.0, -2.0], vec![3.0, 4.0]], vec![0.0, 0.0]), 1.0);
        assert_eq!((k.a[0], k.c[0]), (7.0, 4.0));

        // Bias folds into B over the box of radius 2.
        let kb = layer_constants(&single(vec![vec![1.0, -2.0], vec![3.0, 4.0]], vec![0.0, -3.0]), 2.0);
        assert_eq!(kb.b[0], (7.0 * 2.0 + 3.0) / 2.0);
        // L = 1: c = 4 C A B0.
        assert_eq!(lipschitz_bound(&k, LipschitzForm::Declared), 4.0 * 4.0 * 7.0);

        let unit = WeightSet {
            layers: vec![
                LayerParams::from_parts(vec![vec![1.0]], vec![0.0]),
                LayerParams::from_parts(vec![vec![-1.0]], vec![0.0]),
            ],
        };
        let ku = layer_constants(&unit, 1.0);
        assert_eq!(lipschitz_bound(&ku, LipschitzForm::Declared), 4.0);
        assert_eq!(lipschitz_bound(&ku, LipschitzForm::WithPrefix), 4.0);
    }

    #[test]
    fn prefix_products_are_exact() {
        let arch: MlpArchitecture = "6-5-4-3".parse().unwrap();
        let w = WeightSet::standard_normal(&arch, &mut seeded(3));
        let k = layer_constants(&w, 1.0);
        for l in 0..3 {
            assert_eq!(k.cum_a[l + 1], k.cum_a[l] * k.a[l]);
            assert_eq!(k.cum_b[l + 1], k.cum_b[l] * k.b[l]);
            assert!(k.b[l] >= k.a[l]);
        }
    }

    #[test]
    fn bound_is_homogeneous_in_the_input_radius_without_bias() {
        let arch: MlpArchitecture = "6-5-4-3".parse().unwrap();
        let mut w = WeightSet::standard_normal(&arch, &mut seeded(3));
        w.layers.iter_mut().for_each(|l| l.bias.iter_mut().for_each(|b| *b = 0.0));
        let c1 = lipschitz_bound(&layer_constants(&w, 1.0), LipschitzForm::Declared);
        let c3 = lipschitz_bound(&layer_constants(&w, 3.0), LipschitzForm::Declared);
        assert!((c3 - 3.0 * c1).abs() <= 1e-12 * c3);
    }

    #[test]
    fn row_sum_norm_is_the_operator_norm() {
        let mut rng = seeded(10);
        for _ in 0..100 {
            let (r, c) = (rng.random_range(1..8), rng.random_range(1..8));
            let w: Vec<Vec<f64>> = (0..r).map(|_| (0..c).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
            let a = layer_constants(&single(w.clone(), vec![0.0; r]), 1.0).a[0];
            let apply = |x: &[f64]| -> f64 {
                w.iter().map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum::<f64>().abs()).fold(0.0, f64::max)
            };
            let x: Vec<f64> = (0..c).map(|_| rng.random_range(-2.0..2.0)).collect();
            assert!(apply(&x) <= a * max_abs(&x) * (1.0 + 1e-12));
            let jstar = (0..r)
                .max_by(|&p, &q| {
                    let s = |j: usize| w[j].iter().map(|v: &f64| v.abs()).sum::<f64>();
                    s(p).total_cmp(&s(q))
                })
                .unwrap();
            let witness: Vec<f64> = w[jstar].iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect();
            assert!((apply(&witness) - a).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn activations_and_diagrams_respect_the_layer_bounds() {
        let arch: MlpArchitecture = "12-8-6-4".parse().unwrap();
        let mut rng = seeded(21);
        for _ in 0..100 {
            let w = WeightSet::standard_normal(&arch, &mut rng);
            let k = layer_constants(&w, 1.0);
            let x: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
            let y: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
            let (ax, ay) = (forward_with_activations(&w, &x).unwrap(), forward_with_activations(&w, &y).unwrap());
            let d0 = sup_dist(&x, &y);
            let nx = max_abs(&x);
            for (l, d) in layer_diagrams(&w, &ax).unwrap().iter().enumerate() {
                let cap = k.c[l] * k.cum_b[l] * nx;
                assert!(d.deaths().iter().all(|&v| v <= cap * (1.0 + 1e-12)));
                assert!(max_abs(&ax[l]) <= k.cum_b[l] * (1.0 + 1e-12));
            }
            // Hidden layers only: the softmax output is not part of the chain.
            for l in 1..arch.num_layers() {
                assert!(sup_dist(&ax[l], &ay[l]) <= k.cum_a[l] * d0 * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn empirical_check_on_a_random_posterior() {
        let arch: MlpArchitecture = "10-6-4-3".parse().unwrap();
        let post = GaussianPosterior::init(&arch, &mut seeded(1));
        let mut rng = seeded(2);
        let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..40)
            .map(|_| {
                let x: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
                let y: Vec<f64> = x.iter().map(|v| (v + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0)).collect();
                (x, y)
            })
            .collect();
        pairs.push((vec![0.5; 10], vec![0.5; 10]));
        let r1 = empirical_lipschitz_check(&post, &pairs, 8, 3, 1.0, LipschitzForm::Declared, 1).unwrap();
        let r8 = empirical_lipschitz_check(&post, &pairs, 8, 3, 1.0, LipschitzForm::Declared, 8).unwrap();
        assert_eq!(r1.skipped, 1);
        assert_eq!(r1.checked, 40);
        assert_eq!(r1.violations, 0);
        assert!(r1.max_ratio > 0.0 && r1.max_ratio <= r1.bound);
        assert_eq!(r1.max_ratio, r8.max_ratio);

        let mut point = post.clone();
        point.rho.values_mut().for_each(|v| *v = -40.0);
        let rp = empirical_lipschitz_check(&point, &pairs, 4, 3, 1.0, LipschitzForm::Declared, 1).unwrap();
        assert!(rp.max_ratio < 1e-30);
        assert_eq!(rp.violations, 0);

        let far = vec![(vec![2.0; 10], vec![0.0; 10])];
        assert!(empirical_lipschitz_check(&post, &far, 4, 3, 1.0, LipschitzForm::Declared, 1).is_err());
    }
}
