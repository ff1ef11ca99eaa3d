//! From noisy signed marginals to equally weighted particle targets.
//!
//! A signed marginal is first replaced by the probability vector on the same
//! grid that is closest to it in sliced `W1` (projected adaptive-moment
//! descent over the simplex, started from the clipped and renormalized
//! input). The result is then quantized into `m` particles by largest
//! remainder rounding.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data_model::{ColumnPair, GridMeasure};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamParams, StepSchedule};
use crate::privacy::SignedMarginal;
use crate::sliced_ot::{argsort, sample_projections, ProjectionSet};

/// Hyperparameters of the signed-to-probability projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionConfig {
    pub iterations: usize,
    pub lr: f64,
    pub lr_step: usize,
    pub lr_factor: f64,
    pub n_mc: usize,
    /// Draw new directions every iteration instead of one fixed set.
    pub resample_projections: bool,
    pub adam: AdamParams,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            iterations: 1750,
            lr: 0.1,
            lr_step: 100,
            lr_factor: 0.8,
            n_mc: 200,
            resample_projections: false,
            adam: AdamParams::default(),
        }
    }
}

/// A probability vector over the embedded grid of one marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityAtoms {
    pub pair: ColumnPair,
    pub grid: GridMeasure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionDiagnostics {
    pub init_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
}

/// Euclidean projection onto the probability simplex, in place.
pub fn project_simplex(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumulative += uj;
        let t = (cumulative - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            tau = t;
        }
    }
    v.iter_mut().for_each(|x| *x = (*x - tau).max(0.0));
}

/// Zero the negative weights and renormalize; uniform if nothing positive remains.
pub fn clip_normalize_init(signed: &GridMeasure) -> GridMeasure {
    let clipped: Vec<f64> = signed.weights.iter().map(|&w| w.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    let weights = if total > 0.0 {
        clipped.iter().map(|w| w / total).collect()
    } else {
        vec![1.0 / clipped.len() as f64; clipped.len()]
    };
    GridMeasure {
        cards: signed.cards.clone(),
        weights,
    }
}

/// Sliced `W1` against a fixed signed target on the same atoms, with
/// directions fixed up front. Sorting happens once per direction.
pub(crate) struct SameSupportSw1 {
    slices: Vec<Slice>,
}

struct Slice {
    order: Vec<usize>,
    /// `gaps[i]` is the distance between sorted atoms `i` and `i + 1`.
    gaps: Vec<f64>,
    /// Target CDF at sorted atom `i`.
    target_cdf: Vec<f64>,
}

impl SameSupportSw1 {
    pub(crate) fn new(centers: &Array2<f64>, target: &[f64], proj: &ProjectionSet) -> Self {
        let slices = proj
            .iter()
            .map(|theta| Self::slice(centers, target, theta))
            .collect();
        SameSupportSw1 { slices }
    }

    fn slice(centers: &Array2<f64>, target: &[f64], theta: ArrayView1<'_, f64>) -> Slice {
        let loc = centers.dot(&theta).to_vec();
        let order = argsort(&loc);
        let gaps = order.windows(2).map(|p| loc[p[1]] - loc[p[0]]).collect();
        let mut acc = 0.0;
        let target_cdf = order
            .iter()
            .map(|&j| {
                acc += target[j];
                acc
            })
            .collect();
        Slice {
            order,
            gaps,
            target_cdf,
        }
    }

    pub(crate) fn loss(&self, w: &[f64]) -> f64 {
        let total: f64 = self
            .slices
            .iter()
            .map(|s| {
                let mut acc = 0.0;
                let mut sum = 0.0;
                for (i, gap) in s.gaps.iter().enumerate() {
                    acc += w[s.order[i]];
                    sum += gap * (acc - s.target_cdf[i]).abs();
                }
                sum
            })
            .sum();
        total / self.slices.len() as f64
    }

    pub(crate) fn loss_and_grad(&self, w: &[f64]) -> (f64, Vec<f64>) {
        let k = w.len();
        let mut grad = vec![0.0; k];
        let mut total = 0.0;
        let mut signed_gap = vec![0.0; k];
        for s in &self.slices {
            let mut acc = 0.0;
            for (i, gap) in s.gaps.iter().enumerate() {
                acc += w[s.order[i]];
                let diff = acc - s.target_cdf[i];
                total += gap * diff.abs();
                signed_gap[i] = if diff > 0.0 {
                    *gap
                } else if diff < 0.0 {
                    -gap
                } else {
                    0.0
                };
            }
            signed_gap[k - 1] = 0.0;
            let mut suffix = 0.0;
            for i in (0..k).rev() {
                suffix += signed_gap[i];
                grad[s.order[i]] += suffix;
            }
        }
        let scale = 1.0 / self.slices.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        (total * scale, grad)
    }
}

/// Approximately minimizes `SW1(w, signed)` over probability vectors `w` on
/// the grid of `signed`. Returns the best iterate seen, so the result is
/// never worse than the clipped initialization on the diagnostic objective.
pub fn project_measure(
    signed: &GridMeasure,
    config: &ProjectionConfig,
    seed: u64,
) -> (GridMeasure, ProjectionDiagnostics) {
    let init = clip_normalize_init(signed);
    let centers = signed.centers();
    let p = signed.dim();
    let fixed = SameSupportSw1::new(
        &centers,
        &signed.weights,
        &sample_projections(p, config.n_mc.max(1), seed),
    );
    let schedule = StepSchedule {
        initial: config.lr,
        step_size: config.lr_step,
        factor: config.lr_factor,
    };

    let mut w = init.weights.clone();
    let init_loss = fixed.loss(&w);
    let mut best_loss = init_loss;
    let mut best = w.clone();
    let mut adam = Adam::new(w.len(), config.adam);
    for it in 0..config.iterations {
        let (loss, grad) = if config.resample_projections {
            let fresh = SameSupportSw1::new(
                &centers,
                &signed.weights,
                &sample_projections(p, config.n_mc.max(1), crate::seed::derive(seed, "projection-iter", it as u64)),
            );
            (fixed.loss(&w), fresh.loss_and_grad(&w).1)
        } else {
            fixed.loss_and_grad(&w)
        };
        if loss < best_loss {
            best_loss = loss;
            best.copy_from_slice(&w);
        }
        adam.step(&mut w, &grad, schedule.lr_at(it));
        project_simplex(&mut w);
    }
    let last = fixed.loss(&w);
    if last < best_loss {
        best_loss = last;
        best.copy_from_slice(&w);
    }
    (
        GridMeasure {
            cards: signed.cards.clone(),
            weights: best,
        },
        ProjectionDiagnostics {
            init_loss,
            final_loss: best_loss,
            iterations: config.iterations,
        },
    )
}

/// The projection step for one privatized marginal.
pub fn project_to_probability(
    signed: &SignedMarginal,
    config: &ProjectionConfig,
    seed: u64,
) -> (ProbabilityAtoms, ProjectionDiagnostics) {
    let (grid, diag) = project_measure(&signed.grid, config, seed);
    (
        ProbabilityAtoms {
            pair: signed.pair,
            grid,
        },
        diag,
    )
}

/// Largest-remainder apportionment of `m` units to `weights`.
///
/// Weights are renormalized first; leftover units go to the largest
/// fractional parts, ties to the lower index.
pub fn largest_remainder(weights: &[f64], m: usize) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::Config("particle count must be at least 1".into()));
    }
    if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Data("weights must be nonnegative and nonempty".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Data("weights sum to zero".into()));
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / total * m as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    let frac = |i: usize| exact[i] - exact[i].floor();
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    if assigned <= m {
        for &i in order.iter().cycle().take(m - assigned) {
            counts[i] += 1;
        }
    } else {
        // only reachable through rounding in the renormalization
        let mut excess = assigned - m;
        for &i in order.iter().rev() {
            if excess == 0 {
                break;
            }
            if counts[i] > 0 {
                counts[i] -= 1;
                excess -= 1;
            }
        }
    }
    Ok(counts)
}

/// `m` equally weighted particles sitting on grid centers of one marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMeasure {
    pub pair: ColumnPair,
    /// One row per grid cell.
    pub centers: Array2<f64>,
    /// Particles per cell; sums to `m`.
    pub counts: Vec<usize>,
    m: usize,
}

impl QuantizedMeasure {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    /// Particle coordinates, centers repeated by count in cell order (`m × |S|`).
    pub fn particle_coords(&self) -> Array2<f64> {
        let p = self.dim();
        let mut out = Array2::<f64>::zeros((self.m, p));
        let mut row = 0;
        for (c, &count) in self.counts.iter().enumerate() {
            for _ in 0..count {
                out.row_mut(row).assign(&self.centers.row(c));
                row += 1;
            }
        }
        out
    }

    /// Ascending projections of the particles onto `theta`, in `O(m + K log K)`.
    pub fn sorted_projection(&self, theta: ArrayView1<'_, f64>) -> Vec<f64> {
        let loc = self.centers.dot(&theta).to_vec();
        let mut out = Vec::with_capacity(self.m);
        for c in argsort(&loc) {
            out.extend(std::iter::repeat_n(loc[c], self.counts[c]));
        }
        out
    }

    /// Empirical weights of the particles per cell.
    pub fn weights(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.m as f64).collect()
    }
}

/// Quantizes a probability vector into `m` particles.
pub fn quantize(atoms: &ProbabilityAtoms, m: usize) -> Result<QuantizedMeasure> {
    let counts = largest_remainder(&atoms.grid.weights, m)?;
    Ok(QuantizedMeasure {
        pair: atoms.pair,
        centers: atoms.grid.centers(),
        counts,
        m,
    })
}
