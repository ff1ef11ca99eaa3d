//! One-dimensional optimal transport in closed form and its sliced
//! Monte-Carlo extensions.
//!
//! * `W2²` between two uniform empirical measures on the line is the mean
//!   squared gap between order statistics, so it and its gradient cost one
//!   sort.
//! * `W1` between finite (possibly signed) atom sets is the `L1` norm of the
//!   difference of their distribution functions, integrated over the span of
//!   the merged breakpoints.
//! * Sliced versions average the 1-d quantities over random unit directions.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seed;

/// Unit directions on `S^{p−1}`, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    directions: Array2<f64>,
    seed: u64,
}

impl ProjectionSet {
    /// Wraps explicit directions, normalizing every row.
    pub fn from_directions(mut directions: Array2<f64>) -> Result<Self> {
        for mut row in directions.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if !(norm > 0.0) {
                return Err(Error::Shape("zero-length projection direction".into()));
            }
            row.mapv_inplace(|v| v / norm);
        }
        Ok(ProjectionSet {
            directions,
            seed: 0,
        })
    }

    pub fn directions(&self) -> ArrayView2<'_, f64> {
        self.directions.view()
    }

    pub fn len(&self) -> usize {
        self.directions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.directions.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn iter(&self) -> impl Iterator<Item = ArrayView1<'_, f64>> + '_ {
        self.directions.rows().into_iter()
    }
}

/// Draws `n_mc` iid uniform directions in dimension `p`.
pub fn sample_projections(p: usize, n_mc: usize, seed: u64) -> ProjectionSet {
    assert!(p >= 1 && n_mc >= 1, "need p >= 1 and n_mc >= 1");
    let mut rng = seed::rng_from(seed);
    let mut directions = Array2::<f64>::zeros((n_mc, p));
    for mut row in directions.rows_mut() {
        loop {
            for v in row.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let norm = row.dot(&row).sqrt();
            if norm > 1e-300 {
                row.mapv_inplace(|v| v / norm);
                break;
            }
        }
    }
    ProjectionSet { directions, seed }
}

/// Indices of `values` in ascending order, ties by original index.
pub fn argsort(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    idx
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("sequence lengths differ: {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::Shape("empty sequences".into()));
    }
    Ok(())
}

/// Squared 2-Wasserstein distance between the uniform measures on `y` and `y_prime`.
pub fn w2_squared_1d(y: &[f64], y_prime: &[f64]) -> Result<f64> {
    check_lengths(y.len(), y_prime.len())?;
    let a = sorted(y);
    let b = sorted(y_prime);
    let m = a.len() as f64;
    Ok(a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / m)
}

/// Gradient of [`w2_squared_1d`] with respect to `y`, holding `y_prime` fixed.
pub fn w2_squared_1d_grad(y: &[f64], y_prime: &[f64]) -> Result<Vec<f64>> {
    check_lengths(y.len(), y_prime.len())?;
    let target = sorted(y_prime);
    Ok(w2_squared_1d_grad_presorted(y, &target).1)
}

/// Loss and gradient of `W2²(y, target)` where `target` is already ascending.
pub fn w2_squared_1d_grad_presorted(y: &[f64], target_sorted: &[f64]) -> (f64, Vec<f64>) {
    debug_assert_eq!(y.len(), target_sorted.len());
    let m = y.len() as f64;
    let order = argsort(y);
    let mut grad = vec![0.0; y.len()];
    let mut loss = 0.0;
    for (rank, &j) in order.iter().enumerate() {
        let gap = y[j] - target_sorted[rank];
        loss += gap * gap;
        grad[j] = 2.0 * gap / m;
    }
    (loss / m, grad)
}

fn check_clouds(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, proj: &ProjectionSet) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "particle clouds have shapes {:?} and {:?}",
            a.dim(),
            b.dim()
        )));
    }
    if a.ncols() != proj.dim() {
        return Err(Error::Shape(format!(
            "clouds live in dimension {} but projections in {}",
            a.ncols(),
            proj.dim()
        )));
    }
    if a.nrows() == 0 {
        return Err(Error::Shape("empty particle cloud".into()));
    }
    Ok(())
}

fn project(cloud: ArrayView2<'_, f64>, theta: ArrayView1<'_, f64>) -> Vec<f64> {
    cloud.dot(&theta).to_vec()
}

/// Monte-Carlo sliced `SW2²` between two equally sized particle clouds.
pub fn sw2_sq(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, proj: &ProjectionSet) -> Result<f64> {
    check_clouds(a, b, proj)?;
    let mut total = 0.0;
    for theta in proj.iter() {
        total += w2_squared_1d(&project(a, theta), &project(b, theta))?;
    }
    Ok(total / proj.len() as f64)
}

/// Gradient of [`sw2_sq`] with respect to the positions in `a`.
pub fn sw2_sq_grad(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    proj: &ProjectionSet,
) -> Result<Array2<f64>> {
    check_clouds(a, b, proj)?;
    Ok(sw2_sq_loss_grad_with(a, proj, |theta| sorted(&project(b, theta))).1)
}

/// Loss and gradient against a target given through its sorted projections.
///
/// `target_sorted(θ)` must return the ascending projections of a cloud with
/// the same number of points as `a`.
pub fn sw2_sq_loss_grad_with<F>(
    a: ArrayView2<'_, f64>,
    proj: &ProjectionSet,
    target_sorted: F,
) -> (f64, Array2<f64>)
where
    F: Fn(ArrayView1<'_, f64>) -> Vec<f64>,
{
    let mut grad = Array2::<f64>::zeros(a.dim());
    let mut loss = 0.0;
    let scale = 1.0 / proj.len() as f64;
    for theta in proj.iter() {
        let y = project(a, theta);
        let target = target_sorted(theta);
        let (l, g) = w2_squared_1d_grad_presorted(&y, &target);
        loss += l;
        for (mut row, gi) in grad.axis_iter_mut(Axis(0)).zip(g) {
            row.scaled_add(gi * scale, &theta);
        }
    }
    (loss * scale, grad)
}

/// Finite atoms on the line; weights may be negative.
#[derive(Debug, Clone, PartialEq)]
pub struct Atoms1D {
    pub locations: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Atoms1D {
    pub fn new(locations: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if locations.len() != weights.len() {
            return Err(Error::Shape(format!(
                "{} locations but {} weights",
                locations.len(),
                weights.len()
            )));
        }
        if locations.iter().any(|l| !l.is_finite()) {
            return Err(Error::Data("atom locations must be finite".into()));
        }
        Ok(Atoms1D { locations, weights })
    }

    pub fn point(location: f64) -> Self {
        Atoms1D {
            locations: vec![location],
            weights: vec![1.0],
        }
    }
}

/// `‖F_a − F_b‖_{L1}` over the span of all atoms, exact for step CDFs.
///
/// Outside the outermost atoms the integrand is the total-mass difference,
/// which is not integrated; for probability measures it is zero there anyway.
pub fn w1_signed_1d(a: &Atoms1D, b: &Atoms1D) -> f64 {
    let mut merged: Vec<(f64, f64)> = a
        .locations
        .iter()
        .zip(&a.weights)
        .map(|(&x, &w)| (x, w))
        .chain(b.locations.iter().zip(&b.weights).map(|(&x, &w)| (x, -w)))
        .collect();
    merged.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut cdf_gap = 0.0;
    let mut total = 0.0;
    for pair in merged.windows(2) {
        cdf_gap += pair[0].1;
        total += (pair[1].0 - pair[0].0) * cdf_gap.abs();
    }
    total
}

/// Atoms in `p` dimensions with signed weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedAtoms {
    /// One atom per row.
    pub locations: Array2<f64>,
    pub weights: Vec<f64>,
}

impl SignedAtoms {
    pub fn new(locations: Array2<f64>, weights: Vec<f64>) -> Result<Self> {
        if locations.nrows() != weights.len() {
            return Err(Error::Shape(format!(
                "{} atoms but {} weights",
                locations.nrows(),
                weights.len()
            )));
        }
        Ok(SignedAtoms { locations, weights })
    }

    pub fn dim(&self) -> usize {
        self.locations.ncols()
    }

    fn project(&self, theta: ArrayView1<'_, f64>) -> Atoms1D {
        Atoms1D {
            locations: self.locations.dot(&theta).to_vec(),
            weights: self.weights.clone(),
        }
    }
}

/// Monte-Carlo sliced `W1` between signed atom sets.
pub fn sw1_signed(a: &SignedAtoms, b: &SignedAtoms, proj: &ProjectionSet) -> Result<f64> {
    if a.dim() != b.dim() || a.dim() != proj.dim() {
        return Err(Error::Shape(format!(
            "atom dimensions {} / {} vs projections {}",
            a.dim(),
            b.dim(),
            proj.dim()
        )));
    }
    let total: f64 = proj
        .iter()
        .map(|theta| w1_signed_1d(&a.project(theta), &b.project(theta)))
        .sum();
    Ok(total / proj.len() as f64)
}

/// Subgradient of `SW1(w, target)` with respect to the weights `w` of atoms
/// at fixed `locations`. Points where the CDFs coincide contribute zero.
pub fn sw1_signed_grad_weights(
    weights: &[f64],
    locations: ArrayView2<'_, f64>,
    target: &SignedAtoms,
    proj: &ProjectionSet,
) -> Result<Vec<f64>> {
    if weights.len() != locations.nrows() {
        return Err(Error::Shape(format!(
            "{} weights for {} atoms",
            weights.len(),
            locations.nrows()
        )));
    }
    if locations.ncols() != target.dim() || target.dim() != proj.dim() {
        return Err(Error::Shape("atom and projection dimensions differ".into()));
    }
    let k = weights.len();
    let mut grad = vec![0.0; k];
    for theta in proj.iter() {
        let own = locations.dot(&theta);
        let tgt = target.locations.dot(&theta);
        // (location, signed weight, Some(own index) | None for target atoms)
        let mut merged: Vec<(f64, f64, Option<usize>)> = own
            .iter()
            .zip(weights)
            .enumerate()
            .map(|(j, (&x, &w))| (x, w, Some(j)))
            .chain(tgt.iter().zip(&target.weights).map(|(&x, &w)| (x, -w, None)))
            .collect();
        merged.sort_by(|p, q| p.0.total_cmp(&q.0));
        // suffix[i] = Σ_{l ≥ i} gap_l · sign(F_w − F_target on interval l)
        let len = merged.len();
        let mut interval = vec![0.0; len];
        let mut cdf_gap = 0.0;
        for i in 0..len.saturating_sub(1) {
            cdf_gap += merged[i].1;
            interval[i] = (merged[i + 1].0 - merged[i].0) * sign(cdf_gap);
        }
        let mut suffix = 0.0;
        for i in (0..len).rev() {
            suffix += interval[i];
            if let Some(j) = merged[i].2 {
                grad[j] += suffix;
            }
        }
    }
    let scale = 1.0 / proj.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(grad)
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
