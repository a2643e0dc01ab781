//! Two-sample permutation test on pTU samples and power curves over the
//! Gaussian shift family.

use crate::bnn::GaussianPosterior;
use crate::data::{shift_apply, ShiftSpec};
use crate::otstats::{wasserstein_1d, OtError};
use crate::parallel::with_workers;
use crate::ptu::{ptu_batch, PtuError, PtuSampleSet};
use crate::rng::{child_seed, substream};
use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

/// Smallest permutation count accepted; coarser tests cannot resolve 0.05.
pub const MIN_PERMUTATIONS: usize = 99;

/// Relative slack when comparing permuted statistics with the observed one,
/// so that combinatorially tied splits count as ties despite rounding.
const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum OodError {
    #[error("samples must have equal sizes, got {x} and {y}")]
    SizeMismatch { x: usize, y: usize },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error(transparent)]
    Ptu(#[from] PtuError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PermutationConfig {
    /// Order of the Wasserstein statistic.
    pub order: f64,
    pub permutations: usize,
    pub alpha: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        Self {
            order: 2.0,
            permutations: 1000,
            alpha: 0.05,
            seed: 0,
            workers: 1,
        }
    }
}

impl PermutationConfig {
    pub fn validate(&self) -> Result<(), OodError> {
        if self.permutations < MIN_PERMUTATIONS {
            return Err(OodError::Config(format!(
                "at least {MIN_PERMUTATIONS} permutations are required, got {}",
                self.permutations
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(OodError::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.order.is_nan() || self.order < 1.0 {
            return Err(OodError::Config(format!("order must be at least 1, got {}", self.order)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationTestResult {
    pub t_obs: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub t_perm: Vec<f64>,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub permutations: usize,
    pub order: f64,
    pub seed: u64,
}

/// Tests whether `x` and `y` come from the same distribution.
///
/// Permutation `i` shuffles the pooled values with stream `(seed, i)` and
/// splits them in half. `p = (1 + #{T* >= T_obs}) / (M + 1)`.
pub fn permutation_test(x: &[f64], y: &[f64], cfg: &PermutationConfig) -> Result<PermutationTestResult, OodError> {
    cfg.validate()?;
    if x.len() != y.len() {
        return Err(OodError::SizeMismatch { x: x.len(), y: y.len() });
    }
    if x.len() < 2 {
        return Err(OodError::Config("each sample needs at least 2 values".into()));
    }
    let n = x.len();
    let t_obs = wasserstein_1d(x, y, cfg.order)?;
    // Sorting the pool makes the permutation draws depend only on the
    // multiset, so swapping the samples leaves every T* unchanged.
    let mut pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let t_perm: Vec<f64> = with_workers(cfg.workers, || {
        (0..cfg.permutations)
            .into_par_iter()
            .map(|i| {
                let mut v = pooled.clone();
                v.shuffle(&mut substream(cfg.seed, i as u64));
                wasserstein_1d(&v[..n], &v[n..], cfg.order)
            })
            .collect::<Result<_, _>>()
    })?;
    let threshold = t_obs * (1.0 - TIE_TOLERANCE);
    let exceed = t_perm.iter().filter(|&&t| t >= threshold).count();
    let p_value = (1 + exceed) as f64 / (cfg.permutations + 1) as f64;
    Ok(PermutationTestResult {
        t_obs,
        t_perm,
        p_value,
        alpha: cfg.alpha,
        reject: p_value < cfg.alpha,
        permutations: cfg.permutations,
        order: cfg.order,
        seed: cfg.seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OodOutcome {
    pub x_ptu: PtuSampleSet,
    pub y_ptu: PtuSampleSet,
    pub test: PermutationTestResult,
}

/// pTU on both preprocessed input sets, then the permutation test. With
/// `x_seed == y_seed` identical inputs give identical pTU values.
pub fn ood_decision(
    post: &GaussianPosterior,
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
    m: usize,
    x_seed: u64,
    y_seed: u64,
    cfg: &PermutationConfig,
) -> Result<OodOutcome, OodError> {
    cfg.validate()?;
    if xs.len() != ys.len() {
        return Err(OodError::SizeMismatch { x: xs.len(), y: ys.len() });
    }
    let x_ptu = ptu_batch(xs, post, m, x_seed, cfg.workers)?;
    let y_ptu = ptu_batch(ys, post, m, y_seed, cfg.workers)?;
    let test = permutation_test(&x_ptu.values, &y_ptu.values, cfg)?;
    Ok(OodOutcome { x_ptu, y_ptu, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerConfig {
    pub mu_grid: Vec<f64>,
    pub reps: usize,
    pub n_per_side: usize,
    /// Posterior draws per pTU.
    pub m: usize,
    pub test: PermutationConfig,
    pub seed: u64,
}

impl PowerConfig {
    pub const MIN_REPS: usize = 20;

    pub fn validate(&self, base_len: usize) -> Result<(), OodError> {
        self.test.validate()?;
        let bad = |m: String| Err(OodError::Config(m));
        if self.mu_grid.is_empty() || self.mu_grid.iter().any(|m| !m.is_finite()) {
            return bad("the shift grid must be nonempty and finite".into());
        }
        if self.reps < Self::MIN_REPS {
            return bad(format!("at least {} repetitions are required", Self::MIN_REPS));
        }
        if self.n_per_side < 2 || self.n_per_side > base_len {
            return bad(format!(
                "n_per_side must lie in 2..={base_len}, got {}",
                self.n_per_side
            ));
        }
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        Ok(())
    }
}

/// Rejection rate of the test per shift mean; `se = sqrt(p (1 - p) / reps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub mu_grid: Vec<f64>,
    pub power: Vec<f64>,
    pub se: Vec<f64>,
    pub reps: usize,
}

impl PowerCurve {
    fn from_rejections(mu_grid: Vec<f64>, rejections: &[usize], reps: usize) -> Self {
        let power: Vec<f64> = rejections.iter().map(|&r| r as f64 / reps as f64).collect();
        let se = power.iter().map(|p| (p * (1.0 - p) / reps as f64).sqrt()).collect();
        Self { mu_grid, power, se, reps }
    }
}

/// For every repetition, draws `n_per_side` base inputs and compares the pTU
/// of `s_0(x)` with that of `s_mu(x)` for each `mu` in the grid.
///
/// Repetition `r` takes its subsample and all noise from seeds derived from
/// `(seed, r)`. Within a repetition the `s_0` side is shared by every grid
/// point, and each grid point gets fresh shift noise and pTU draws.
pub fn power_curve(
    post: &GaussianPosterior,
    base: &[Vec<f64>],
    cfg: &PowerConfig,
) -> Result<PowerCurve, OodError> {
    cfg.validate(base.len())?;
    let mut rejections = vec![0usize; cfg.mu_grid.len()];
    for rep in 0..cfg.reps {
        let rep_seed = child_seed(cfg.seed, rep as u64);
        let mut rng = substream(rep_seed, 0);
        let picks = index::sample(&mut rng, base.len(), cfg.n_per_side).into_vec();
        let shifted = |mu: f64, stream: u64| -> Vec<Vec<f64>> {
            let spec = ShiftSpec::new(mu, stream);
            picks
                .iter()
                .enumerate()
                .map(|(k, &i)| shift_apply(&base[i], &spec, &mut substream(child_seed(rep_seed, stream), k as u64)))
                .collect()
        };
        let reference = shifted(0.0, 1);
        let x_ptu = ptu_batch(&reference, post, cfg.m, child_seed(rep_seed, 2), cfg.test.workers)?;
        for (g, &mu) in cfg.mu_grid.iter().enumerate() {
            let stream = 3 + 3 * g as u64;
            let moved = shifted(mu, stream);
            let y_ptu = ptu_batch(&moved, post, cfg.m, child_seed(rep_seed, stream + 1), cfg.test.workers)?;
            let test_cfg = PermutationConfig {
                seed: child_seed(rep_seed, stream + 2),
                ..cfg.test.clone()
            };
            if permutation_test(&x_ptu.values, &y_ptu.values, &test_cfg)?.reject {
                rejections[g] += 1;
            }
        }
    }
    Ok(PowerCurve::from_rejections(cfg.mu_grid.clone(), &rejections, cfg.reps))
}

/// One power curve per model, all with the same grid and seeds.
pub fn robustness_sweep(
    models: &[(String, GaussianPosterior)],
    base: &[Vec<f64>],
    cfg: &PowerConfig,
) -> Result<Vec<(String, PowerCurve)>, OodError> {
    models
        .iter()
        .map(|(id, post)| Ok((id.clone(), power_curve(post, base, cfg)?)))
        .collect()
}

/// CSV with header `model_id,mu,power,se,reps`.
pub fn write_curves_csv<W: Write>(out: W, curves: &[(String, PowerCurve)]) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["model_id", "mu", "power", "se", "reps"])?;
    for (id, c) in curves {
        for ((mu, p), se) in c.mu_grid.iter().zip(&c.power).zip(&c.se) {
            wtr.serialize((id, mu, p, se, c.reps))?;
        }
    }
    wtr.flush()?;
    Ok(())
}
