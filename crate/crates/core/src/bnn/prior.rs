use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Scale-mixture prior `pi N(0, sigma1²) + (1 - pi) N(0, sigma2²)`, applied
/// independently to every weight and bias.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleMixturePrior {
    pub sigma1: f64,
    pub sigma2: f64,
    pub pi_mix: f64,
}

impl Default for ScaleMixturePrior {
    fn default() -> Self {
        Self {
            sigma1: 1.0,
            sigma2: 0.007,
            pi_mix: 0.5,
        }
    }
}

fn log_normal(w: f64, sigma: f64) -> f64 {
    -0.5 * (2.0 * PI).ln() - sigma.ln() - w * w / (2.0 * sigma * sigma)
}

impl ScaleMixturePrior {
    pub fn new(sigma1: f64, sigma2: f64, pi_mix: f64) -> Self {
        let p = Self {
            sigma1,
            sigma2,
            pi_mix,
        };
        assert!(p.is_valid(), "invalid prior {p:?}");
        p
    }

    pub fn is_valid(&self) -> bool {
        self.pi_mix > 0.0 && self.pi_mix <= 1.0 && self.sigma1 > self.sigma2 && self.sigma2 > 0.0
    }

    /// `(log p(w), d/dw log p(w))`, evaluated in log space so the narrow
    /// component never underflows the mixture.
    pub fn log_density_and_grad(&self, w: f64) -> (f64, f64) {
        let a = self.pi_mix.ln() + log_normal(w, self.sigma1);
        if self.pi_mix >= 1.0 {
            return (a, -w / (self.sigma1 * self.sigma1));
        }
        let b = (1.0 - self.pi_mix).ln() + log_normal(w, self.sigma2);
        let m = a.max(b);
        let (ea, eb) = ((a - m).exp(), (b - m).exp());
        let log_p = m + (ea + eb).ln();
        let (ra, rb) = (ea / (ea + eb), eb / (ea + eb));
        let grad = -w * (ra / (self.sigma1 * self.sigma1) + rb / (self.sigma2 * self.sigma2));
        (log_p, grad)
    }

    pub fn log_density(&self, w: f64) -> f64 {
        self.log_density_and_grad(w).0
    }
}
