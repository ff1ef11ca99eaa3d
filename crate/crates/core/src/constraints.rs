//! Differentiable penalty that protects one linear thresholding statistic.
//!
//! The hard statistic `thrs(Z) = (1/m) Σ 1[⟨θ, Z_i⟩ − b > 0]` is smoothed with
//! a logistic of slope `σ_s`. The penalty `c₁ / (c₂ + Δ²)`, with `Δ` the gap
//! between the smoothed statistic and its private estimate on the original
//! data, peaks at `Δ = 0`; adding it to a minimized loss therefore pushes the
//! synthetic statistic away from the true one.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data_model::{embed_dataset, DiscreteDataset};
use crate::error::{Error, Result};

fn default_slope() -> f64 {
    5.0
}
fn default_scale() -> f64 {
    0.01
}
fn default_floor() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConstraint {
    pub theta: Vec<f64>,
    pub b: f64,
    #[serde(default = "default_slope")]
    pub slope: f64,
    /// Private estimate of the smoothed statistic on the original data.
    #[serde(default)]
    pub dp_target: f64,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_floor")]
    pub floor: f64,
}

impl ThresholdConstraint {
    pub fn new(theta: Vec<f64>, b: f64) -> Self {
        ThresholdConstraint {
            theta,
            b,
            slope: default_slope(),
            dp_target: 0.0,
            scale: default_scale(),
            floor: default_floor(),
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.theta.len() != d {
            return Err(Error::Shape(format!(
                "constraint direction has {} entries, data has {d} columns",
                self.theta.len()
            )));
        }
        if !(self.slope > 0.0) || !(self.floor > 0.0) {
            return Err(Error::Config("constraint slope and floor must be positive".into()));
        }
        Ok(())
    }

    fn margin(&self, z: ndarray::ArrayView1<'_, f64>) -> f64 {
        z.iter().zip(&self.theta).map(|(a, t)| a * t).sum::<f64>() - self.b
    }

    fn sigmoid(&self, z: ndarray::ArrayView1<'_, f64>) -> f64 {
        1.0 / (1.0 + (-self.slope * self.margin(z)).exp())
    }
}

/// Mean logistic of `slope · (⟨θ, z⟩ − b)` over all particles.
pub fn smooth_threshold(z: ArrayView2<'_, f64>, c: &ThresholdConstraint) -> f64 {
    let m = z.nrows() as f64;
    z.axis_iter(Axis(0)).map(|row| c.sigmoid(row)).sum::<f64>() / m
}

/// Fraction of points with `⟨θ, z⟩ − b > 0`.
pub fn hard_threshold(z: ArrayView2<'_, f64>, c: &ThresholdConstraint) -> f64 {
    let m = z.nrows() as f64;
    z.axis_iter(Axis(0)).filter(|row| c.margin(*row) > 0.0).count() as f64 / m
}

/// `c₁ / (c₂ + Δ²)` with `Δ = smooth_threshold(Z) − dp_target`.
pub fn penalty(z: ArrayView2<'_, f64>, c: &ThresholdConstraint) -> f64 {
    penalty_of_gap(smooth_threshold(z, c) - c.dp_target, c)
}

pub fn penalty_of_gap(gap: f64, c: &ThresholdConstraint) -> f64 {
    c.scale / (c.floor + gap * gap)
}

/// Gradient of [`penalty`] with respect to every particle coordinate.
pub fn penalty_grad(z: ArrayView2<'_, f64>, c: &ThresholdConstraint) -> Array2<f64> {
    let m = z.nrows() as f64;
    let s: Vec<f64> = z.axis_iter(Axis(0)).map(|row| c.sigmoid(row)).collect();
    let gap = s.iter().sum::<f64>() / m - c.dp_target;
    let denom = c.floor + gap * gap;
    let outer = -2.0 * c.scale * gap / (denom * denom) * c.slope / m;
    let mut grad = Array2::<f64>::zeros(z.dim());
    for (mut row, si) in grad.axis_iter_mut(Axis(0)).zip(s) {
        let w = outer * si * (1.0 - si);
        for (g, t) in row.iter_mut().zip(&c.theta) {
            *g = w * t;
        }
    }
    grad
}

/// `|thrs(Emb(D_dp)) − thrs(Emb(D))|` for the hard statistic.
pub fn constraint_error(c: &ThresholdConstraint, original: &DiscreteDataset, synthetic: &DiscreteDataset) -> f64 {
    let a = hard_threshold(embed_dataset(original).view(), c);
    let b = hard_threshold(embed_dataset(synthetic).view(), c);
    (a - b).abs()
}
