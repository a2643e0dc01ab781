use super::BnnError;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Layer widths `(h_0, h_1, ..., h_L)`: ReLU on hidden layers, softmax on the
/// output layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MlpArchitecture {
    sizes: Vec<usize>,
}

/// The architecture grid of the depth-sensitivity experiment, each with 874
/// neurons counting the input layer.
pub const DEPTH_GRID: [(&str, &str); 7] = [
    ("M3", "784-80-10"),
    ("M4", "784-64-16-10"),
    ("M5", "784-40-20-20-10"),
    ("M6", "784-32-16-16-16-10"),
    ("M7", "784-20-20-16-12-12-10"),
    ("M8", "784-16-16-12-12-12-12-10"),
    ("M9", "784-16-12-12-10-10-10-10-10"),
];

impl MlpArchitecture {
    pub fn new(sizes: Vec<usize>) -> Result<Self, BnnError> {
        if sizes.len() < 2 {
            return Err(BnnError::Architecture(format!(
                "need at least an input and an output layer, got {sizes:?}"
            )));
        }
        if sizes.contains(&0) {
            return Err(BnnError::Architecture(format!(
                "layer sizes must be positive, got {sizes:?}"
            )));
        }
        Ok(Self { sizes })
    }

    /// Looks up a named grid architecture (`"M4"`) or parses `"784-64-16-10"`.
    pub fn from_name_or_spec(s: &str) -> Result<Self, BnnError> {
        match DEPTH_GRID.iter().find(|(name, _)| name.eq_ignore_ascii_case(s)) {
            Some((_, spec)) => spec.parse(),
            None => s.parse(),
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Number of weight layers `L`.
    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    /// `(rows, cols) = (h_l, h_{l-1})` of weight layer `l` (0-based).
    pub fn layer_shape(&self, layer: usize) -> (usize, usize) {
        (self.sizes[layer + 1], self.sizes[layer])
    }

    pub fn param_count(&self) -> usize {
        (0..self.num_layers())
            .map(|l| {
                let (r, c) = self.layer_shape(l);
                r * c + r
            })
            .sum()
    }

    /// Neurons past the input layer.
    pub fn non_input_neurons(&self) -> usize {
        self.sizes[1..].iter().sum()
    }
}

impl FromStr for MlpArchitecture {
    type Err = BnnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let sizes = s
            .split('-')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| BnnError::Architecture(format!("cannot parse {s:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(sizes)
    }
}

impl fmt::Display for MlpArchitecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.sizes.iter().map(usize::to_string).collect();
        f.write_str(&parts.join("-"))
    }
}

impl TryFrom<String> for MlpArchitecture {
    type Error = BnnError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<MlpArchitecture> for String {
    fn from(a: MlpArchitecture) -> String {
        a.to_string()
    }
}
