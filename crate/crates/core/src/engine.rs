//! Particle gradient descent on the sum of sliced `SW2²` losses between the
//! particle marginals and their quantized private targets, plus an optional
//! constraint penalty; and the final snap back to the discrete domain.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{penalty, penalty_grad, ThresholdConstraint};
use crate::data_model::{nearest_index, DiscreteDataset, DiscreteSchema};
use crate::error::{Error, Result};
use crate::optim::{sparse_adam_update, AdamParams, StepSchedule};
use crate::projection::QuantizedMeasure;
use crate::seed;
use crate::sliced_ot::{sample_projections, sw2_sq_loss_grad_with};

/// Optimization hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_step: usize,
    pub lr_factor: f64,
    pub n_mc: usize,
    /// Probability that a gradient entry survives the sparsity mask.
    pub keep_fraction: f64,
    pub lambda: f64,
    pub seed: u64,
    /// Reuse one projection set per marginal for the whole run.
    pub fixed_projections: bool,
    /// Draw one sparsity mask per epoch instead of per step.
    pub mask_per_epoch: bool,
    /// Add the penalty to every batch; otherwise only to the first batch of an epoch.
    pub reg_every_batch: bool,
    /// Projections of the fixed diagnostic objective written to the loss trace.
    pub diagnostic_n_mc: usize,
    pub adam: AdamParams,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            epochs: 1000,
            batch_size: 5,
            lr: 0.1,
            lr_step: 50,
            lr_factor: 0.75,
            n_mc: 10,
            keep_fraction: 0.2,
            lambda: 0.0,
            seed: 0,
            fixed_projections: false,
            mask_per_epoch: false,
            reg_every_batch: true,
            diagnostic_n_mc: 10,
            adam: AdamParams::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.n_mc == 0 || self.diagnostic_n_mc == 0 {
            return Err(Error::Config("batch_size and projection counts must be at least 1".into()));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "keep_fraction must lie in (0, 1], got {}",
                self.keep_fraction
            )));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> StepSchedule {
        StepSchedule {
            initial: self.lr,
            step_size: self.lr_step,
            factor: self.lr_factor,
        }
    }
}

/// Particle positions in `[0, 1]^d` with per-entry optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub positions: Array2<f64>,
    pub step_count: u64,
    first_moment: Array2<f64>,
    second_moment: Array2<f64>,
}

impl ParticleSet {
    pub fn from_positions(positions: Array2<f64>) -> Self {
        let dim = positions.dim();
        ParticleSet {
            positions,
            step_count: 0,
            first_moment: Array2::zeros(dim),
            second_moment: Array2::zeros(dim),
        }
    }

    pub fn m(&self) -> usize {
        self.positions.nrows()
    }

    pub fn dim(&self) -> usize {
        self.positions.ncols()
    }
}

/// iid uniform particles on `[0, 1]^d`.
pub fn init_particles(m: usize, d: usize, seed: u64) -> ParticleSet {
    let mut rng = seed::rng_from(seed);
    let positions = Array2::from_shape_simple_fn((m, d), || rng.random::<f64>());
    ParticleSet::from_positions(positions)
}

/// A seeded permutation of `items` cut into consecutive batches.
pub fn epoch_schedule<T: Clone>(items: &[T], batch_size: usize, epoch: usize, seed: u64) -> Result<Vec<Vec<T>>> {
    if items.is_empty() {
        return Err(Error::Config("empty workload".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order = items.to_vec();
    order.shuffle(&mut seed::rng(seed, "epoch", epoch as u64));
    Ok(order.chunks(batch_size).map(<[T]>::to_vec).collect())
}

/// Gradient and loss of `Σ_{S ∈ batch} SW2²(Z_S, μ̂_S) + λ R̂(Z)` at `positions`.
///
/// Each marginal draws `n_mc` directions seeded from `(seed, its column pair)`.
pub fn batch_gradient(
    positions: &Array2<f64>,
    batch: &[&QuantizedMeasure],
    reg: Option<&ThresholdConstraint>,
    lambda: f64,
    n_mc: usize,
    seed: u64,
) -> Result<(Array2<f64>, f64)> {
    let (m, d) = positions.dim();
    for q in batch {
        if q.m() != m {
            return Err(Error::Shape(format!(
                "target has {} particles, optimizer has {m}",
                q.m()
            )));
        }
        if q.pair.0 >= d || q.pair.1 >= d {
            return Err(Error::Shape(format!("pair {:?} outside {d} columns", q.pair)));
        }
    }
    let parts: Vec<(f64, Array2<f64>)> = batch
        .par_iter()
        .map(|q| {
            let cols = [q.pair.0, q.pair.1];
            let sub = positions.select(Axis(1), &cols);
            let proj = sample_projections(2, n_mc, pair_seed(seed, q, d));
            sw2_sq_loss_grad_with(sub.view(), &proj, |theta| q.sorted_projection(theta))
        })
        .collect();
    let mut grad = Array2::<f64>::zeros((m, d));
    let mut loss = 0.0;
    for (q, (l, g)) in batch.iter().zip(parts) {
        loss += l;
        for (k, &c) in [q.pair.0, q.pair.1].iter().enumerate() {
            let mut col = grad.column_mut(c);
            col += &g.column(k);
        }
    }
    if let Some(c) = reg {
        if lambda != 0.0 {
            loss += lambda * penalty(positions.view(), c);
            grad.scaled_add(lambda, &penalty_grad(positions.view(), c));
        }
    }
    Ok((grad, loss))
}

fn pair_seed(seed: u64, q: &QuantizedMeasure, d: usize) -> u64 {
    seed::derive(seed, "pair", (q.pair.0 * d + q.pair.1) as u64)
}

/// Zeroes each entry independently with probability `1 − keep_fraction`.
pub fn sparse_mask(grad: &Array2<f64>, keep_fraction: f64, seed: u64) -> Array2<f64> {
    if keep_fraction >= 1.0 {
        return grad.clone();
    }
    let mut rng = seed::rng_from(seed);
    let mut out = grad.clone();
    for v in out.iter_mut() {
        if rng.random::<f64>() >= keep_fraction {
            *v = 0.0;
        }
    }
    out
}

/// One sparse adaptive-moment step followed by clamping to `[0, 1]`.
pub fn optimizer_step(z: &mut ParticleSet, masked_grad: &Array2<f64>, lr: f64, params: AdamParams) -> Result<()> {
    if masked_grad.dim() != z.positions.dim() {
        return Err(Error::Shape(format!(
            "gradient shape {:?} vs particles {:?}",
            masked_grad.dim(),
            z.positions.dim()
        )));
    }
    z.step_count += 1;
    let grad = masked_grad.as_standard_layout();
    sparse_adam_update(
        z.positions.as_slice_mut().expect("standard layout"),
        z.first_moment.as_slice_mut().expect("standard layout"),
        z.second_moment.as_slice_mut().expect("standard layout"),
        grad.as_slice().expect("standard layout"),
        z.step_count,
        lr,
        params,
    );
    z.positions.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(())
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub objective_estimate: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub particles: ParticleSet,
    /// Row 0 is the initialization; row `t` is after epoch `t`.
    pub trace: Vec<TraceRow>,
}

/// Full objective with a fixed diagnostic projection set per marginal.
pub fn diagnostic_objective(
    positions: &Array2<f64>,
    measures: &[QuantizedMeasure],
    reg: Option<&ThresholdConstraint>,
    config: &EngineConfig,
) -> Result<f64> {
    let batch: Vec<&QuantizedMeasure> = measures.iter().collect();
    let seed = seed::derive(config.seed, "diagnostic", 0);
    let (_, loss) = batch_gradient(positions, &batch, reg, config.lambda, config.diagnostic_n_mc, seed)?;
    Ok(loss)
}

fn check_inputs(init: &ParticleSet, measures: &[QuantizedMeasure], reg: Option<&ThresholdConstraint>) -> Result<()> {
    if measures.is_empty() {
        return Err(Error::Config("no target measures".into()));
    }
    if let Some(q) = measures.iter().find(|q| q.m() != init.m()) {
        return Err(Error::Shape(format!(
            "target {:?} has {} particles, optimizer has {}",
            q.pair,
            q.m(),
            init.m()
        )));
    }
    if let Some(c) = reg {
        c.validate(init.dim())?;
    }
    Ok(())
}

/// Runs the optimizer from uniform random particles.
pub fn run(
    measures: &[QuantizedMeasure],
    d: usize,
    reg: Option<&ThresholdConstraint>,
    config: &EngineConfig,
) -> Result<RunOutput> {
    let m = measures.first().map_or(0, QuantizedMeasure::m);
    let init = init_particles(m, d, seed::derive(config.seed, "init", 0));
    run_from(init, measures, reg, config, |_, _| Ok(()))
}

/// Runs the optimizer from `init`, calling `on_epoch(epoch, particles)` after every epoch.
pub fn run_from<F>(
    init: ParticleSet,
    measures: &[QuantizedMeasure],
    reg: Option<&ThresholdConstraint>,
    config: &EngineConfig,
    mut on_epoch: F,
) -> Result<RunOutput>
where
    F: FnMut(usize, &ParticleSet) -> Result<()>,
{
    config.validate()?;
    check_inputs(&init, measures, reg)?;
    let schedule = config.schedule();
    let indices: Vec<usize> = (0..measures.len()).collect();
    let mut z = init;
    let mut trace = vec![TraceRow {
        epoch: 0,
        objective_estimate: diagnostic_objective(&z.positions, measures, reg, config)?,
        lr: schedule.lr_at(0),
    }];
    let mut step: u64 = 0;
    for epoch in 0..config.epochs {
        let lr = schedule.lr_at(epoch);
        let batches = epoch_schedule(&indices, config.batch_size, epoch, config.seed)?;
        for (b, batch) in batches.iter().enumerate() {
            let targets: Vec<&QuantizedMeasure> = batch.iter().map(|&i| &measures[i]).collect();
            let proj_seed = if config.fixed_projections {
                seed::derive(config.seed, "projections", 0)
            } else {
                seed::derive(config.seed, "projections-step", step)
            };
            let reg_here = if config.reg_every_batch || b == 0 { reg } else { None };
            let (grad, _) = batch_gradient(&z.positions, &targets, reg_here, config.lambda, config.n_mc, proj_seed)?;
            let mask_seed = if config.mask_per_epoch {
                seed::derive(config.seed, "mask-epoch", epoch as u64)
            } else {
                seed::derive(config.seed, "mask-step", step)
            };
            let masked = sparse_mask(&grad, config.keep_fraction, mask_seed);
            optimizer_step(&mut z, &masked, lr, config.adam)?;
            step += 1;
        }
        debug_assert!(z.positions.iter().all(|v| (0.0..=1.0).contains(v)));
        trace.push(TraceRow {
            epoch: epoch + 1,
            objective_estimate: diagnostic_objective(&z.positions, measures, reg, config)?,
            lr,
        });
        on_epoch(epoch + 1, &z)?;
    }
    Ok(RunOutput { particles: z, trace })
}

/// Snaps every particle to the nearest grid point of `schema`.
pub fn finalize(z: &ParticleSet, schema: &DiscreteSchema) -> Result<DiscreteDataset> {
    if z.dim() != schema.dim() {
        return Err(Error::Shape(format!(
            "particles have {} coordinates, schema has {} columns",
            z.dim(),
            schema.dim()
        )));
    }
    let cards = schema.cardinalities();
    let values = z
        .positions
        .rows()
        .into_iter()
        .flat_map(|row| {
            row.iter()
                .zip(&cards)
                .map(|(&c, &k)| nearest_index(c, k))
                .collect::<Vec<_>>()
        })
        .collect();
    DiscreteDataset::from_flat(schema.clone(), values)
}

/// Writes the loss trace as `epoch,objective_estimate,lr` CSV.
pub fn write_trace<W: Write>(trace: &[TraceRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in trace {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<trace writer>", e))?;
    Ok(())
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"PPGD";
const CHECKPOINT_VERSION: u32 = 1;

/// `"PPGD"`, version, `m`, `d` as little-endian `u32`, then the positions as
/// row-major little-endian `f64`.
pub fn write_checkpoint<W: Write>(positions: &Array2<f64>, mut w: W) -> Result<()> {
    let (m, d) = positions.dim();
    let to_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| Error::Config(format!("checkpoint dimension {v} exceeds u32")))
    };
    let mut buf = Vec::with_capacity(16 + 8 * m * d);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&to_u32(m)?.to_le_bytes());
    buf.extend_from_slice(&to_u32(d)?.to_le_bytes());
    for v in positions.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io("<checkpoint>", e))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Array2<f64>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io("<checkpoint>", e))?;
    if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Data("not a particle checkpoint".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    if word(4) != CHECKPOINT_VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {}", word(4))));
    }
    let (m, d) = (word(8) as usize, word(12) as usize);
    if bytes.len() != 16 + 8 * m * d {
        return Err(Error::Data("checkpoint length does not match header".into()));
    }
    let values = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Array2::from_shape_vec((m, d), values).map_err(|e| Error::Internal(e.to_string()))
}

pub fn save_checkpoint(positions: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(positions, std::io::BufWriter::new(file))
}
