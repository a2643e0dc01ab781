//! Predictive topological uncertainty: the layer-averaged Fréchet variance
//! of activation-graph diagrams across posterior weight draws.

use crate::bnn::{forward_with_activations, BnnError, GaussianPosterior, WeightSet};
use crate::otstats::{frechet_variance, OtError};
use crate::parallel::with_workers;
use crate::rng::substream;
use crate::topology::{layer_diagrams, PersistenceDiagram, TopologyError};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

pub const DEFAULT_DRAWS: usize = 30;

#[derive(Debug, Error)]
pub enum PtuError {
    #[error(transparent)]
    Bnn(#[from] BnnError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error("{0}")]
    Config(String),
    #[error("pTU table: {0}")]
    Csv(#[from] csv::Error),
    #[error("pTU table: {0}")]
    Format(String),
}

/// Per-layer Fréchet variances and their mean, the pTU.
#[derive(Debug, Clone, PartialEq)]
pub struct PtuBreakdown {
    pub layer_variances: Vec<f64>,
    pub ptu: f64,
}

impl PtuBreakdown {
    fn from_layers(layer_variances: Vec<f64>) -> Self {
        let ptu = layer_variances.iter().sum::<f64>() / layer_variances.len() as f64;
        Self { layer_variances, ptu }
    }
}

/// pTU of `x` under the given weight draws. Every layer uses the same draws.
pub fn ptu_from_weights(draws: &[WeightSet], x: &[f64]) -> Result<PtuBreakdown, PtuError> {
    if draws.is_empty() {
        return Err(PtuError::Config("at least one weight draw is required".into()));
    }
    let mut per_layer: Vec<Vec<PersistenceDiagram>> = vec![Vec::with_capacity(draws.len()); draws[0].layers.len()];
    for w in draws {
        let acts = forward_with_activations(w, x)?;
        for (slot, d) in per_layer.iter_mut().zip(layer_diagrams(w, &acts)?) {
            slot.push(d);
        }
    }
    let variances = per_layer
        .iter()
        .map(|ds| frechet_variance(ds))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PtuBreakdown::from_layers(variances))
}

/// `m` successive draws, identical to calling `sample_weights` `m` times.
pub fn sample_draws<R: Rng + ?Sized>(post: &GaussianPosterior, m: usize, rng: &mut R) -> Vec<WeightSet> {
    let sigma: Vec<f64> = post.sigma().collect();
    (0..m)
        .map(|_| {
            let mut w = post.mean.clone();
            for (v, s) in w.values_mut().zip(&sigma) {
                let e: f64 = StandardNormal.sample(rng);
                *v += s * e;
            }
            w
        })
        .collect()
}

/// pTU of `x` from `m` fresh posterior draws.
pub fn ptu<R: Rng + ?Sized>(
    x: &[f64],
    post: &GaussianPosterior,
    m: usize,
    rng: &mut R,
) -> Result<PtuBreakdown, PtuError> {
    if m == 0 {
        return Err(PtuError::Config("m must be at least 1".into()));
    }
    ptu_from_weights(&sample_draws(post, m, rng), x)
}

/// How posterior draws are assigned to the inputs of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrawSharing {
    /// Input `i` draws its own weights from stream `(seed, i)`.
    Independent,
    /// All inputs use the same `m` draws, taken from stream `(seed, 0)`.
    Shared,
}

/// Breakdowns for every input, computed on `workers` threads. The output does
/// not depend on `workers`.
pub fn ptu_batch_breakdown(
    xs: &[Vec<f64>],
    post: &GaussianPosterior,
    m: usize,
    seed: u64,
    sharing: DrawSharing,
    workers: usize,
) -> Result<Vec<PtuBreakdown>, PtuError> {
    if xs.is_empty() {
        return Err(PtuError::Config("no inputs".into()));
    }
    if m == 0 {
        return Err(PtuError::Config("m must be at least 1".into()));
    }
    let shared = match sharing {
        DrawSharing::Shared => Some(sample_draws(post, m, &mut substream(seed, 0))),
        DrawSharing::Independent => None,
    };
    with_workers(workers, || {
        xs.par_iter()
            .enumerate()
            .map(|(i, x)| match &shared {
                Some(draws) => ptu_from_weights(draws, x),
                None => ptu(x, post, m, &mut substream(seed, i as u64)),
            })
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtuMeta {
    pub model_id: String,
    pub dataset_id: String,
    pub m: usize,
    pub seed: u64,
}

/// One pTU value per input.
#[derive(Debug, Clone, PartialEq)]
pub struct PtuSampleSet {
    pub values: Vec<f64>,
    pub meta: PtuMeta,
}

impl PtuSampleSet {
    pub fn new(values: Vec<f64>, meta: PtuMeta) -> Self {
        Self { values, meta }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// CSV with header `input_index,ptu`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), PtuError> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["input_index", "ptu"])?;
        for (i, v) in self.values.iter().enumerate() {
            wtr.serialize((i, v))?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads the values of a table written by [`PtuSampleSet::write_csv`].
    pub fn read_values<R: Read>(input: R) -> Result<Vec<f64>, PtuError> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut values = Vec::new();
        for (row, rec) in rdr.deserialize::<(usize, f64)>().enumerate() {
            let (i, v) = rec?;
            if i != row {
                return Err(PtuError::Format(format!("row {row} has input_index {i}")));
            }
            if !(v.is_finite() && v >= 0.0) {
                return Err(PtuError::Format(format!("row {row}: invalid pTU {v}")));
            }
            values.push(v);
        }
        Ok(values)
    }
}

/// pTU for every input with independent per-input draws.
pub fn ptu_batch(
    xs: &[Vec<f64>],
    post: &GaussianPosterior,
    m: usize,
    seed: u64,
    workers: usize,
) -> Result<PtuSampleSet, PtuError> {
    let b = ptu_batch_breakdown(xs, post, m, seed, DrawSharing::Independent, workers)?;
    Ok(PtuSampleSet::new(
        b.into_iter().map(|b| b.ptu).collect(),
        PtuMeta {
            model_id: String::new(),
            dataset_id: String::new(),
            m,
            seed,
        },
    ))
}

/// CSV with header `input_index,layer,variance`; layers start at 1.
pub fn write_breakdown_csv<W: Write>(out: W, breakdowns: &[PtuBreakdown]) -> Result<(), PtuError> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["input_index", "layer", "variance"])?;
    for (i, b) in breakdowns.iter().enumerate() {
        for (l, v) in b.layer_variances.iter().enumerate() {
            wtr.serialize((i, l + 1, v))?;
        }
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Model-level TU: the sample mean of the pTU values.
pub fn tu_estimate(samples: &PtuSampleSet) -> Result<f64, PtuError> {
    if samples.is_empty() {
        return Err(PtuError::Config("empty pTU sample".into()));
    }
    Ok(samples.values.iter().sum::<f64>() / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnn::{LayerParams, MlpArchitecture};
    use crate::rng::seeded;

    fn meta() -> PtuMeta {
        PtuMeta {
            model_id: "m".into(),
            dataset_id: "d".into(),
            m: 1,
            seed: 0,
        }
    }

    fn toy_posterior() -> GaussianPosterior {
        let arch: MlpArchitecture = "2-2-2".parse().unwrap();
        let mut post = GaussianPosterior::init(&arch, &mut seeded(3));
        post.mean.values_mut().enumerate().for_each(|(k, v)| *v = 0.5 + 0.3 * (k as f64).sin());
        post.rho.values_mut().for_each(|r| *r = -1.0);
        post
    }

    /// Straight-line evaluation with explicit loops: forward pass, maximum
    /// spanning tree by enumerating edge subsets, and the variance as the
    /// mean squared deviation from the position-wise mean.
    fn oracle_ptu(draws: &[WeightSet], x: &[f64]) -> f64 {
        let mst = |w: &[Vec<f64>], xin: &[f64]| -> Vec<f64> {
            let (r, c) = (w.len(), xin.len());
            let e: Vec<(usize, usize, f64)> = (0..r)
                .flat_map(|j| (0..c).map(move |i| (i, c + j, 0.0)))
                .enumerate()
                .map(|(k, (a, b, _))| (a, b, (w[k / c][k % c] * xin[k % c]).abs()))
                .collect();
            let n = r + c;
            let mut best = (f64::NEG_INFINITY, vec![]);
            for mask in 0u32..(1 << e.len()) {
                if mask.count_ones() as usize != n - 1 {
                    continue;
                }
                let mut comp: Vec<usize> = (0..n).collect();
                let mut ok = true;
                let mut ws = vec![];
                for (k, &(a, b, wt)) in e.iter().enumerate() {
                    if mask >> k & 1 == 0 {
                        continue;
                    }
                    let (ca, cb) = (comp[a], comp[b]);
                    if ca == cb {
                        ok = false;
                        break;
                    }
                    comp.iter_mut().filter(|q| **q == cb).for_each(|q| *q = ca);
                    ws.push(wt);
                }
                let s: f64 = ws.iter().sum();
                if ok && s > best.0 {
                    ws.sort_by(f64::total_cmp);
                    best = (s, ws);
                }
            }
            best.1
        };
        let mut layer_diags: Vec<Vec<Vec<f64>>> = vec![vec![], vec![]];
        for w in draws {
            let mut a = x.to_vec();
            for (l, layer) in w.layers.iter().enumerate() {
                let rows: Vec<Vec<f64>> = (0..layer.rows).map(|j| layer.row(j).to_vec()).collect();
                layer_diags[l].push(mst(&rows, &a));
                let z: Vec<f64> = rows
                    .iter()
                    .zip(&layer.bias)
                    .map(|(r, b)| r.iter().zip(&a).map(|(p, q)| p * q).sum::<f64>() + b)
                    .collect();
                a = z.iter().map(|v| v.max(0.0)).collect();
            }
        }
        let mut total = 0.0;
        for ds in &layer_diags {
            let n = ds[0].len();
            let m = ds.len() as f64;
            let mean: Vec<f64> = (0..n).map(|k| ds.iter().map(|d| d[k]).sum::<f64>() / m).collect();
            let var: f64 = ds
                .iter()
                .map(|d| d.iter().zip(&mean).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / n as f64)
                .sum::<f64>()
                / m;
            total += var;
        }
        total / layer_diags.len() as f64
    }

    #[test]
    fn matches_straight_line_oracle() {
        let post = toy_posterior();
        for seed in 0..20 {
            let x = [0.9, 0.4];
            let got = ptu(&x, &post, 3, &mut seeded(seed)).unwrap();
            let draws = sample_draws(&post, 3, &mut seeded(seed));
            let want = oracle_ptu(&draws, &x);
            assert!((got.ptu - want).abs() <= 1e-10, "{} vs {want}", got.ptu);
            let mean = got.layer_variances.iter().sum::<f64>() / got.layer_variances.len() as f64;
            assert!((mean - got.ptu).abs() <= 1e-12);
        }
    }

    #[test]
    fn batched_draws_match_single_draws() {
        let post = toy_posterior();
        let mut rng = seeded(17);
        let single: Vec<WeightSet> = (0..4).map(|_| post.sample_weights(&mut rng)).collect();
        assert_eq!(sample_draws(&post, 4, &mut seeded(17)), single);
    }

    #[test]
    fn degenerate_posteriors_and_single_draws_give_zero() {
        let mut post = toy_posterior();
        post.rho.values_mut().for_each(|r| *r = -40.0);
        // softplus(-40) is about 4e-18, so only rounding-level spread remains.
        let b = ptu(&[0.3, 0.8], &post, 10, &mut seeded(1)).unwrap();
        assert!(b.ptu < 1e-30, "{}", b.ptu);
        let b = ptu(&[0.3, 0.8], &toy_posterior(), 1, &mut seeded(1)).unwrap();
        assert_eq!(b.ptu, 0.0);
        assert!(ptu(&[0.3, 0.8], &toy_posterior(), 0, &mut seeded(1)).is_err());
    }

    #[test]
    fn zero_exactly_when_all_diagram_sequences_agree() {
        let mk = |a: f64| WeightSet {
            layers: vec![LayerParams::from_parts(vec![vec![a, 1.0]], vec![0.0])],
        };
        // Distinct weights with identical diagrams: swapping the two edges.
        let same = [mk(2.0), WeightSet { layers: vec![LayerParams::from_parts(vec![vec![1.0, 2.0]], vec![0.0])] }];
        assert_eq!(ptu_from_weights(&same, &[1.0, 1.0]).unwrap().ptu, 0.0);
        let differ = [mk(2.0), mk(2.5)];
        assert!(ptu_from_weights(&differ, &[1.0, 1.0]).unwrap().ptu > 0.0);
    }

    #[test]
    fn larger_posterior_scale_does_not_lower_ptu() {
        let arch: MlpArchitecture = "1-1".parse().unwrap();
        let mut rng = seeded(99);
        let mut holds = 0;
        for trial in 0..100u64 {
            let mu: f64 = StandardNormal.sample(&mut rng);
            let sigma = 0.05 + rng.random::<f64>() * 0.5;
            let mean = WeightSet::filled(&arch, mu);
            let rho = |s: f64| (s.exp() - 1.0).ln();
            let small = GaussianPosterior::from_mean(mean.clone(), rho(sigma)).unwrap();
            let large = GaussianPosterior::from_mean(mean, rho(2.0 * sigma)).unwrap();
            let a = ptu(&[0.7], &small, 30, &mut seeded(trial)).unwrap().ptu;
            let b = ptu(&[0.7], &large, 30, &mut seeded(trial)).unwrap().ptu;
            if b >= a {
                holds += 1;
            }
        }
        assert!(holds >= 95, "{holds}/100");
    }

    #[test]
    fn batch_is_independent_of_worker_count() {
        let arch: MlpArchitecture = "20-6-4-3".parse().unwrap();
        let post = GaussianPosterior::init(&arch, &mut seeded(2));
        let mut rng = seeded(6);
        let xs: Vec<Vec<f64>> = (0..25).map(|_| (0..20).map(|_| rng.random::<f64>()).collect()).collect();
        let one = ptu_batch(&xs, &post, 7, 123, 1).unwrap();
        let many = ptu_batch(&xs, &post, 7, 123, 8).unwrap();
        assert_eq!(one, many);
        assert!(one.values.iter().all(|v| v.is_finite() && *v > 0.0));
        let single = ptu_batch(&xs[3..4], &post, 7, 123, 2).unwrap();
        let direct = ptu(&xs[3], &post, 7, &mut substream(123, 0)).unwrap();
        assert_eq!(single.values, vec![direct.ptu]);
        let shared1 = ptu_batch_breakdown(&xs, &post, 7, 5, DrawSharing::Shared, 1).unwrap();
        let shared8 = ptu_batch_breakdown(&xs, &post, 7, 5, DrawSharing::Shared, 8).unwrap();
        assert_eq!(shared1, shared8);
        assert!(ptu_batch(&[], &post, 7, 0, 1).is_err());
    }

    #[test]
    fn shared_draws_make_equal_inputs_agree() {
        let arch: MlpArchitecture = "5-4-3".parse().unwrap();
        let post = GaussianPosterior::init(&arch, &mut seeded(2));
        let x = vec![0.1, 0.2, 0.3, 0.4, 0.5];
        let b = ptu_batch_breakdown(&[x.clone(), x], &post, 9, 4, DrawSharing::Shared, 1).unwrap();
        assert_eq!(b[0], b[1]);
    }

    #[test]
    fn csv_round_trip_and_tu() {
        let set = PtuSampleSet::new(vec![1.0, 3.0, 0.1 + 0.2], meta());
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("input_index,ptu\n0,1.0\n"));
        assert_eq!(PtuSampleSet::read_values(buf.as_slice()).unwrap(), set.values);
        assert!(PtuSampleSet::read_values("input_index,ptu\n1,2.0\n".as_bytes()).is_err());
        assert!(PtuSampleSet::read_values("input_index,ptu\n0,-2.0\n".as_bytes()).is_err());

        let two = PtuSampleSet::new(vec![1.0, 3.0], meta());
        assert_eq!(tu_estimate(&two).unwrap(), 2.0);
        assert_eq!(tu_estimate(&PtuSampleSet::new(vec![0.25], meta())).unwrap(), 0.25);
        assert_eq!(tu_estimate(&PtuSampleSet::new(vec![3.0, 1.0], meta())).unwrap(), 2.0);
        assert!(tu_estimate(&PtuSampleSet::new(vec![], meta())).is_err());

        let mut buf = Vec::new();
        let b = [PtuBreakdown::from_layers(vec![0.5, 1.5])];
        write_breakdown_csv(&mut buf, &b).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "input_index,layer,variance\n0,1,0.5\n0,2,1.5\n");
    }
}
