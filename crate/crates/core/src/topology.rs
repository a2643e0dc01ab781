//! Activation graphs between consecutive layers and their zero-dimensional
//! persistence diagrams.
//!
//! Under the superlevel filtration every component is born at the top, so a
//! diagram reduces to its death values: the edge weights of a maximum
//! spanning tree.

use crate::bnn::{LayerParams, WeightSet};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("dimension mismatch: expected length {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("activation graph needs at least one neuron on each side")]
    EmptySide,
}

/// Complete bipartite graph between the `left` inputs and `right` outputs of
/// a layer. `weights[j * left + i] = |W(j,i) x(i)|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationGraph {
    pub left: usize,
    pub right: usize,
    pub weights: Vec<f64>,
}

impl ActivationGraph {
    pub fn from_weights(left: usize, right: usize, weights: Vec<f64>) -> Result<Self, TopologyError> {
        if left == 0 || right == 0 {
            return Err(TopologyError::EmptySide);
        }
        if weights.len() != left * right {
            return Err(TopologyError::Dimension {
                expected: left * right,
                actual: weights.len(),
            });
        }
        Ok(Self { left, right, weights })
    }

    pub fn weight(&self, j: usize, i: usize) -> f64 {
        self.weights[j * self.left + i]
    }
}

pub fn build_activation_graph(layer: &LayerParams, x: &[f64]) -> Result<ActivationGraph, TopologyError> {
    if x.len() != layer.cols {
        return Err(TopologyError::Dimension {
            expected: layer.cols,
            actual: x.len(),
        });
    }
    let weights = layer
        .weights
        .chunks(layer.cols)
        .flat_map(|row| row.iter().zip(x).map(|(w, xi)| (w * xi).abs()))
        .collect();
    ActivationGraph::from_weights(layer.cols, layer.rows, weights)
}

/// Death values sorted in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceDiagram {
    deaths: Vec<f64>,
}

impl PersistenceDiagram {
    pub fn from_deaths(mut deaths: Vec<f64>) -> Self {
        deaths.sort_by(|a, b| b.total_cmp(a));
        Self { deaths }
    }

    pub fn deaths(&self) -> &[f64] {
        &self.deaths
    }

    pub fn len(&self) -> usize {
        self.deaths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deaths.is_empty()
    }

    pub fn into_deaths(self) -> Vec<f64> {
        self.deaths
    }
}

struct UnionFind {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut a: u32) -> u32 {
        while self.parent[a as usize] != a {
            let p = self.parent[a as usize];
            self.parent[a as usize] = self.parent[p as usize];
            a = p;
        }
        a
    }

    fn union(&mut self, a: u32, b: u32) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = if self.rank[ra as usize] < self.rank[rb as usize] { (ra, rb) } else { (rb, ra) };
        self.parent[lo as usize] = hi;
        if self.rank[lo as usize] == self.rank[hi as usize] {
            self.rank[hi as usize] += 1;
        }
        true
    }
}

/// Kruskal on edges ordered by weight descending, then `(j, i)` ascending.
///
/// Only positive edges are sorted. Once they are exhausted every remaining
/// merge happens at weight zero, so the diagram is completed with one zero
/// per leftover component.
pub fn persistence_diagram(g: &ActivationGraph) -> PersistenceDiagram {
    let n_nodes = g.left + g.right;
    // Non-negative doubles order like their bit patterns.
    let mut edges: Vec<(u64, u32)> = g
        .weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(k, &w)| (w.to_bits(), k as u32))
        .collect();
    edges.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut uf = UnionFind::new(n_nodes);
    let mut deaths = Vec::with_capacity(n_nodes - 1);
    for (bits, k) in edges {
        let (j, i) = (k as usize / g.left, k as usize % g.left);
        if uf.union(i as u32, (g.left + j) as u32) {
            deaths.push(f64::from_bits(bits));
            if deaths.len() == n_nodes - 1 {
                break;
            }
        }
    }
    deaths.resize(n_nodes - 1, 0.0);
    PersistenceDiagram { deaths }
}

/// One diagram per layer: layer `l` uses `W_l` and its input `x_{l-1}`.
/// `activations` may include the network output, which is ignored.
pub fn layer_diagrams(w: &WeightSet, activations: &[Vec<f64>]) -> Result<Vec<PersistenceDiagram>, TopologyError> {
    if activations.len() < w.layers.len() {
        return Err(TopologyError::Dimension {
            expected: w.layers.len(),
            actual: activations.len(),
        });
    }
    w.layers
        .iter()
        .zip(activations)
        .map(|(layer, x)| build_activation_graph(layer, x).map(|g| persistence_diagram(&g)))
        .collect()
}

/// CSV rows `layer_index,rank,death_value`, both indices starting at 1.
pub fn write_diagrams_csv<W: Write>(out: W, diagrams: &[PersistenceDiagram]) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["layer_index", "rank", "death_value"])?;
    for (l, d) in diagrams.iter().enumerate() {
        for (r, v) in d.deaths().iter().enumerate() {
            wtr.serialize((l + 1, r + 1, v))?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnn::{forward_with_activations, MlpArchitecture};
    use crate::otstats::bottleneck_1d;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    /// Weight multiset of a maximum spanning tree found by enumerating every
    /// `(n - 1)`-edge subset.
    fn brute_force_mst(g: &ActivationGraph) -> Vec<f64> {
        let n = g.left + g.right;
        let e = g.left * g.right;
        let edge = |k: usize| (k % g.left, g.left + k / g.left);
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 0u32..(1 << e) {
            if mask.count_ones() as usize != n - 1 {
                continue;
            }
            let mut comp: Vec<usize> = (0..n).collect();
            let mut acyclic = true;
            let mut ws = Vec::new();
            for k in (0..e).filter(|k| mask >> k & 1 == 1) {
                let (a, b) = edge(k);
                let (ca, cb) = (comp[a], comp[b]);
                if ca == cb {
                    acyclic = false;
                    break;
                }
                comp.iter_mut().filter(|c| **c == cb).for_each(|c| *c = ca);
                ws.push(g.weights[k]);
            }
            if !acyclic {
                continue;
            }
            let total: f64 = ws.iter().sum();
            if best.as_ref().is_none_or(|(t, _)| total > *t) {
                ws.sort_by(|a, b| b.total_cmp(a));
                best = Some((total, ws));
            }
        }
        best.unwrap().1
    }

    fn random_graph(rng: &mut impl Rng, integer: bool) -> ActivationGraph {
        loop {
            let left = rng.random_range(1..=5);
            let right = rng.random_range(1..=5);
            if left + right > 7 {
                continue;
            }
            let weights = (0..left * right)
                .map(|_| {
                    if integer {
                        rng.random_range(0..6) as f64
                    } else {
                        rng.random::<f64>() * 10.0
                    }
                })
                .collect();
            return ActivationGraph::from_weights(left, right, weights).unwrap();
        }
    }

    #[test]
    fn activation_graph_hand_example() {
        let layer = LayerParams::from_parts(vec![vec![1.0, -2.0], vec![3.0, 4.0]], vec![9.0, 9.0]);
        let g = build_activation_graph(&layer, &[1.0, 0.5]).unwrap();
        assert_eq!(g.weights, vec![1.0, 1.0, 3.0, 2.0]);
        let zero = build_activation_graph(&layer, &[0.0, 0.0]).unwrap();
        assert!(zero.weights.iter().all(|&w| w == 0.0));
        let scaled = build_activation_graph(&layer, &[-2.0, -1.0]).unwrap();
        assert_eq!(scaled.weights, vec![2.0, 2.0, 6.0, 4.0]);
        assert_eq!(
            build_activation_graph(&layer, &[1.0]),
            Err(TopologyError::Dimension { expected: 2, actual: 1 })
        );
    }

    #[test]
    fn small_diagrams() {
        let one = ActivationGraph::from_weights(1, 1, vec![2.5]).unwrap();
        assert_eq!(persistence_diagram(&one).deaths(), &[2.5]);
        // Edges (j,i): (0,0)=5, (0,1)=1, (1,0)=4, (1,1)=3.
        let k22 = ActivationGraph::from_weights(2, 2, vec![5.0, 1.0, 4.0, 3.0]).unwrap();
        assert_eq!(persistence_diagram(&k22).deaths(), &[5.0, 4.0, 3.0]);
        let flat = ActivationGraph::from_weights(3, 4, vec![0.7; 12]).unwrap();
        assert_eq!(persistence_diagram(&flat).deaths(), &[0.7; 6]);
        let zeros = ActivationGraph::from_weights(3, 2, vec![0.0; 6]).unwrap();
        assert_eq!(persistence_diagram(&zeros).deaths(), &[0.0; 4]);
        assert!(ActivationGraph::from_weights(0, 2, vec![]).is_err());
    }

    #[test]
    fn kruskal_matches_spanning_tree_enumeration() {
        let mut rng = seeded(2024);
        for trial in 0..200 {
            let g = random_graph(&mut rng, trial % 2 == 0);
            let d = persistence_diagram(&g);
            assert_eq!(d.len(), g.left + g.right - 1);
            assert_eq!(d.deaths(), brute_force_mst(&g).as_slice(), "trial {trial}: {g:?}");
        }
    }

    #[test]
    fn raising_one_edge_never_lowers_an_order_statistic() {
        let mut rng = seeded(77);
        for _ in 0..200 {
            let g = random_graph(&mut rng, true);
            let before = brute_force_mst(&g);
            let mut h = g.clone();
            let k = rng.random_range(0..h.weights.len());
            h.weights[k] += rng.random_range(1..4) as f64;
            let after = persistence_diagram(&h);
            for (a, b) in after.deaths().iter().zip(&before) {
                assert!(a >= b);
            }
        }
    }

    #[test]
    fn zero_input_with_bias_only_silences_the_first_layer() {
        let w = WeightSet {
            layers: vec![
                LayerParams::from_parts(vec![vec![1.0, 2.0], vec![-1.0, 0.5]], vec![1.0, 1.0]),
                LayerParams::from_parts(vec![vec![2.0, -3.0], vec![1.0, 1.0]], vec![0.0, 0.0]),
            ],
        };
        let acts = forward_with_activations(&w, &[0.0, 0.0]).unwrap();
        assert_eq!(acts[1], vec![1.0, 1.0]);
        let d = layer_diagrams(&w, &acts).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].deaths(), &[0.0, 0.0, 0.0]);
        // Second graph weights |W2(j,i)|: (0,0)=2, (0,1)=3, (1,0)=1, (1,1)=1.
        assert_eq!(d[1].deaths(), &[3.0, 2.0, 1.0]);
    }

    #[test]
    fn layer_diagram_lengths_follow_the_architecture() {
        let arch: MlpArchitecture = "30-7-5-3".parse().unwrap();
        let w = WeightSet::standard_normal(&arch, &mut seeded(4));
        let x: Vec<f64> = (0..30).map(|k| (k as f64 * 0.37).sin().abs()).collect();
        let acts = forward_with_activations(&w, &x).unwrap();
        let d = layer_diagrams(&w, &acts).unwrap();
        let lens: Vec<usize> = d.iter().map(|d| d.len()).collect();
        assert_eq!(lens, vec![36, 11, 7]);
        assert!(d.iter().all(|d| d.deaths().windows(2).all(|p| p[0] >= p[1])));
        assert!(layer_diagrams(&w, &acts[..2]).is_err());
    }

    #[test]
    fn csv_dump_layout() {
        let d = vec![
            PersistenceDiagram::from_deaths(vec![1.0, 3.0]),
            PersistenceDiagram::from_deaths(vec![0.5]),
        ];
        let mut buf = Vec::new();
        write_diagrams_csv(&mut buf, &d).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "layer_index,rank,death_value\n1,1,3.0\n1,2,1.0\n2,1,0.5\n"
        );
    }

    proptest! {
        #[test]
        fn diagram_ignores_neuron_order(
            rows in 1usize..6, cols in 1usize..6, seed in any::<u64>(), shift in 0usize..5,
        ) {
            let mut rng = seeded(seed);
            let w: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let x: Vec<f64> = (0..cols).map(|_| rng.random_range(0.0..1.0)).collect();
            let layer = LayerParams::from_parts(w.clone(), vec![0.0; rows]);
            let base = persistence_diagram(&build_activation_graph(&layer, &x).unwrap());

            let rp: Vec<usize> = (0..rows).map(|j| (j + shift) % rows).collect();
            let cp: Vec<usize> = (0..cols).rev().collect();
            let w2: Vec<Vec<f64>> = rp.iter().map(|&j| cp.iter().map(|&i| w[j][i]).collect()).collect();
            let x2: Vec<f64> = cp.iter().map(|&i| x[i]).collect();
            let layer2 = LayerParams::from_parts(w2, vec![0.0; rows]);
            let permuted = persistence_diagram(&build_activation_graph(&layer2, &x2).unwrap());
            prop_assert_eq!(base, permuted);
        }

        #[test]
        fn bottleneck_is_bounded_by_the_operator_norm(
            rows in 1usize..8, cols in 1usize..8, seed in any::<u64>(),
        ) {
            let mut rng = seeded(seed);
            let w: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
            let a = w.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
            let layer = LayerParams::from_parts(w, vec![0.0; rows]);
            let x: Vec<f64> = (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dx = persistence_diagram(&build_activation_graph(&layer, &x).unwrap());
            let dy = persistence_diagram(&build_activation_graph(&layer, &y).unwrap());
            let dist = x.iter().zip(&y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            let b = bottleneck_1d(dx.deaths(), dy.deaths()).unwrap();
            prop_assert!(b <= a * dist * (1.0 + 1e-12));
        }
    }
}
