//! One-dimensional optimal transport between equal-size empirical measures,
//! where the optimal coupling matches order statistics.
//!
//! Two scalings are exposed: [`wasserstein_1d`] is the plain
//! `(Σ|Y(i) - Z(i)|^p)^(1/p)` used as the two-sample test statistic, and
//! [`w2_diagram`] divides by the number of points so that Fréchet statistics
//! are comparable across layers of different widths.

use crate::topology::PersistenceDiagram;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OtError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    Empty,
    #[error("Wasserstein order must be at least 1, got {0}")]
    InvalidOrder(f64),
}

fn check_pair(p: &[f64], q: &[f64]) -> Result<(), OtError> {
    if p.len() != q.len() {
        return Err(OtError::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    if p.is_empty() {
        return Err(OtError::Empty);
    }
    Ok(())
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// `(Σ_i |Y(i) - Z(i)|^p)^(1/p)` over ascending order statistics.
pub fn wasserstein_1d(p: &[f64], q: &[f64], order: f64) -> Result<f64, OtError> {
    check_pair(p, q)?;
    if order.is_nan() || order < 1.0 {
        return Err(OtError::InvalidOrder(order));
    }
    let (a, b) = (sorted(p), sorted(q));
    if order == 2.0 {
        return Ok(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt());
    }
    if order == 1.0 {
        return Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum());
    }
    if order.is_infinite() {
        return Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
    }
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y).abs().powf(order))
        .sum::<f64>()
        .powf(1.0 / order))
}

/// Squared normalized distance between two diagrams, both already sorted.
fn w2_sq_sorted(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// `sqrt((1/N) Σ_i (P(i) - Q(i))²)`, the 2-Wasserstein distance between the
/// uniform measures on the two diagrams' points.
pub fn w2_diagram(p: &PersistenceDiagram, q: &PersistenceDiagram) -> Result<f64, OtError> {
    check_pair(p.deaths(), q.deaths())?;
    Ok(w2_sq_sorted(p.deaths(), q.deaths()).sqrt())
}

fn check_family(diagrams: &[PersistenceDiagram]) -> Result<usize, OtError> {
    let first = diagrams.first().ok_or(OtError::Empty)?;
    let n = first.len();
    if n == 0 {
        return Err(OtError::Empty);
    }
    if let Some(bad) = diagrams.iter().find(|d| d.len() != n) {
        return Err(OtError::LengthMismatch {
            left: n,
            right: bad.len(),
        });
    }
    Ok(n)
}

/// Barycenter under `w2_diagram`: the position-wise average of the sorted
/// diagrams.
pub fn frechet_mean(diagrams: &[PersistenceDiagram]) -> Result<PersistenceDiagram, OtError> {
    let n = check_family(diagrams)?;
    let mut mean = vec![0.0; n];
    for d in diagrams {
        for (m, v) in mean.iter_mut().zip(d.deaths()) {
            *m += v;
        }
    }
    let m = diagrams.len() as f64;
    mean.iter_mut().for_each(|v| *v /= m);
    Ok(PersistenceDiagram::from_deaths(mean))
}

/// `(1/m) Σ_i w2_diagram(D_i, mean)²`.
pub fn frechet_variance(diagrams: &[PersistenceDiagram]) -> Result<f64, OtError> {
    let mean = frechet_mean(diagrams)?;
    let total: f64 = diagrams
        .iter()
        .map(|d| w2_sq_sorted(d.deaths(), mean.deaths()))
        .sum();
    Ok(total / diagrams.len() as f64)
}

/// `max_i |P(i) - Q(i)|` over sorted values.
pub fn bottleneck_1d(p: &[f64], q: &[f64]) -> Result<f64, OtError> {
    check_pair(p, q)?;
    Ok(sorted(p)
        .iter()
        .zip(&sorted(q))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}
