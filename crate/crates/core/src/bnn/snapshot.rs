//! Versioned JSON snapshot of a trained posterior.

use super::{BnnError, GaussianPosterior, LayerParams, MlpArchitecture, ScaleMixturePrior, TrainConfig, WeightSet};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSnapshot {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `rows * cols` entries.
    pub mu_w: Vec<f64>,
    pub rho_w: Vec<f64>,
    pub mu_b: Vec<f64>,
    pub rho_b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub format_version: u32,
    pub arch: MlpArchitecture,
    pub layers: Vec<LayerSnapshot>,
    pub prior: ScaleMixturePrior,
    pub train_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
}

impl ModelSnapshot {
    pub fn new(
        post: &GaussianPosterior,
        prior: &ScaleMixturePrior,
        train_config: Option<TrainConfig>,
    ) -> Self {
        let layers = post
            .mean
            .layers
            .iter()
            .zip(&post.rho.layers)
            .map(|(m, r)| LayerSnapshot {
                rows: m.rows,
                cols: m.cols,
                mu_w: m.weights.clone(),
                rho_w: r.weights.clone(),
                mu_b: m.bias.clone(),
                rho_b: r.bias.clone(),
            })
            .collect();
        Self {
            format_version: SNAPSHOT_FORMAT_VERSION,
            arch: post.arch.clone(),
            layers,
            prior: *prior,
            train_seed: train_config.as_ref().map_or(0, |c| c.seed),
            train_config,
        }
    }

    pub fn posterior(&self) -> Result<GaussianPosterior, BnnError> {
        if self.format_version != SNAPSHOT_FORMAT_VERSION {
            return Err(BnnError::Snapshot(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        if self.layers.len() != self.arch.num_layers() {
            return Err(BnnError::Snapshot(format!(
                "{} layers stored for architecture {}",
                self.layers.len(),
                self.arch
            )));
        }
        let mut mean = Vec::new();
        let mut rho = Vec::new();
        for (l, s) in self.layers.iter().enumerate() {
            let (rows, cols) = self.arch.layer_shape(l);
            let ok = s.rows == rows
                && s.cols == cols
                && s.mu_w.len() == rows * cols
                && s.rho_w.len() == rows * cols
                && s.mu_b.len() == rows
                && s.rho_b.len() == rows;
            if !ok {
                return Err(BnnError::Snapshot(format!("layer {} has inconsistent shapes", l + 1)));
            }
            mean.push(LayerParams { rows, cols, weights: s.mu_w.clone(), bias: s.mu_b.clone() });
            rho.push(LayerParams { rows, cols, weights: s.rho_w.clone(), bias: s.rho_b.clone() });
        }
        let all_finite = mean.iter().chain(&rho).all(|l| {
            l.weights.iter().chain(&l.bias).all(|v| v.is_finite())
        });
        if !all_finite {
            return Err(BnnError::Snapshot("non-finite parameter".into()));
        }
        Ok(GaussianPosterior {
            arch: self.arch.clone(),
            mean: WeightSet { layers: mean },
            rho: WeightSet { layers: rho },
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, BnnError> {
        serde_json::from_str(text).map_err(|e| BnnError::Snapshot(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), BnnError> {
        fs::write(path, self.to_json())
            .map_err(|e| BnnError::Snapshot(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, BnnError> {
        let text = fs::read_to_string(path)
            .map_err(|e| BnnError::Snapshot(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
