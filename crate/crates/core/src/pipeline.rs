//! End-to-end synthesis and evaluation driven by a JSON run config.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{smooth_threshold, ThresholdConstraint};
use crate::data_model::{
    all_pairs_workload, embed_dataset, ingest_csv, load_schema_spec, marginals, write_csv, ColumnPair,
    DiscreteDataset, SchemaSpec,
};
use crate::engine::{
    finalize, init_particles, run_from, save_checkpoint, write_trace, EngineConfig, TraceRow,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_all, EvalConfig, MetricsReport};
use crate::privacy::{
    compose, maybe_infinite, privatize_scalar, privatize_workload, scalar_sensitivity, workload_sensitivity,
    BudgetLedger, PrivacyBudget,
};
use crate::projection::{project_to_probability, quantize, ProjectionConfig, ProjectionDiagnostics};
use crate::seed::{self, RunSeeds};

fn default_epsilon() -> f64 {
    2.5
}
fn default_delta() -> f64 {
    1e-5
}
fn default_particles() -> usize {
    100_000
}
fn default_budget_fraction() -> f64 {
    0.2
}
fn default_slope() -> f64 {
    5.0
}

/// The optional thresholding-statistic penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintConfig {
    /// Direction in embedded coordinates; seeded standard normal when absent.
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
    /// Offset; defaults to `⟨θ, ½·1⟩`, the value at the cube center.
    #[serde(default)]
    pub b: Option<f64>,
    #[serde(default = "default_slope")]
    pub slope: f64,
    pub lambda: f64,
    /// Share of both ε and δ spent on the private target.
    #[serde(default = "default_budget_fraction")]
    pub budget_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub output: Option<PathBuf>,
    #[serde(with = "maybe_infinite")]
    pub epsilon: f64,
    pub delta: f64,
    pub particles: usize,
    pub seed: u64,
    /// `seed` inside this block is ignored; the engine seed derives from the master seed.
    pub engine: EngineConfig,
    pub projection: ProjectionConfig,
    pub constraint: Option<ConstraintConfig>,
    /// Write particle checkpoints every this many epochs.
    pub checkpoint_every: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            schema: None,
            output: None,
            epsilon: default_epsilon(),
            delta: default_delta(),
            particles: default_particles(),
            seed: 0,
            engine: EngineConfig::default(),
            projection: ProjectionConfig::default(),
            constraint: None,
            checkpoint_every: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive or \"inf\", got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.particles == 0 {
            return Err(Error::Config("particles must be at least 1".into()));
        }
        if let Some(c) = &self.constraint {
            if !(c.budget_fraction > 0.0 && c.budget_fraction < 1.0) {
                return Err(Error::Config("constraint budget_fraction must lie in (0, 1)".into()));
            }
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint_every must be at least 1".into()));
        }
        self.engine.validate()
    }

    fn required(&self, field: Option<&PathBuf>, name: &str) -> Result<PathBuf> {
        field
            .cloned()
            .ok_or_else(|| Error::Config(format!("missing `{name}` path")))
    }
}

/// Everything `synthesize` learned besides the synthetic table itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub config: RunConfig,
    pub n: usize,
    pub d: usize,
    pub particles: usize,
    pub seeds: RunSeeds,
    pub budget: BudgetReport,
    pub projection: Vec<MarginalDiagnostics>,
    pub constraint: Option<ConstraintReport>,
    pub loss_trace: TraceSummary,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    #[serde(with = "maybe_infinite")]
    pub epsilon_total: f64,
    pub delta_total: f64,
    pub marginal_release: PrivacyBudget,
    pub ledger: BudgetLedger,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalDiagnostics {
    pub pair: ColumnPair,
    #[serde(flatten)]
    pub diagnostics: ProjectionDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub constraint: ThresholdConstraint,
    pub lambda: f64,
    pub release: PrivacyBudget,
    /// Smoothed statistic of the particles after optimization.
    pub synthetic_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub epochs: usize,
    pub initial: f64,
    pub last: f64,
    pub min: f64,
}

impl TraceSummary {
    fn of(trace: &[TraceRow]) -> Self {
        TraceSummary {
            epochs: trace.len().saturating_sub(1),
            initial: trace.first().map_or(f64::NAN, |r| r.objective_estimate),
            last: trace.last().map_or(f64::NAN, |r| r.objective_estimate),
            min: trace.iter().map(|r| r.objective_estimate).fold(f64::INFINITY, f64::min),
        }
    }
}

/// Wall-clock seconds per stage; kept apart from the reproducible report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub privatize: f64,
    pub projection: f64,
    pub optimization: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub synthetic: DiscreteDataset,
    pub report: SynthReport,
    pub trace: Vec<TraceRow>,
    pub timing: Timing,
}

/// Runs the whole pipeline on an in-memory dataset; writes nothing.
pub fn synthesize_dataset(data: &DiscreteDataset, config: &RunConfig) -> Result<SynthOutput> {
    synthesize_with(data, config, |_, _| Ok(()))
}

fn synthesize_with<F>(data: &DiscreteDataset, config: &RunConfig, mut on_epoch: F) -> Result<SynthOutput>
where
    F: FnMut(usize, &ndarray::Array2<f64>) -> Result<()>,
{
    config.validate()?;
    let started = Instant::now();
    let (n, d) = (data.n(), data.dim());
    let seeds = RunSeeds::from_master(config.seed);
    let mut warnings = Vec::new();
    let mut ledger = BudgetLedger::new(config.epsilon, config.delta);

    let workload = all_pairs_workload(d)?;
    let tables = marginals(data, &workload)?;
    let share = config.constraint.as_ref().map_or(0.0, |c| c.budget_fraction);
    let (eps_m, delta_m) = (config.epsilon * (1.0 - share), config.delta * (1.0 - share));
    let release = PrivacyBudget::calibrate(eps_m, delta_m, workload_sensitivity(n, workload.len()))?;
    let signed = privatize_workload(&tables, &release, &mut ledger, seeds.noise)?;

    let constraint = match &config.constraint {
        Some(cc) => Some(build_constraint(cc, data, config, &seeds, &mut ledger)?),
        None => None,
    };
    let privatized = Instant::now();

    let projected: Vec<_> = signed
        .par_iter()
        .enumerate()
        .map(|(i, s)| project_to_probability(s, &config.projection, seed::derive(seeds.projection_step, "marginal", i as u64)))
        .collect();
    let m = if config.particles > 10 * n {
        warnings.push(format!(
            "particles capped at 10·n = {} (requested {})",
            10 * n,
            config.particles
        ));
        10 * n
    } else {
        config.particles
    };
    let targets = projected
        .iter()
        .map(|(atoms, _)| quantize(atoms, m))
        .collect::<Result<Vec<_>>>()?;
    let projection = projected
        .iter()
        .map(|(atoms, diag)| MarginalDiagnostics {
            pair: atoms.pair,
            diagnostics: *diag,
        })
        .collect();
    let projected_at = Instant::now();

    let mut engine = config.engine;
    engine.seed = seeds.engine;
    engine.lambda = config.constraint.as_ref().map_or(0.0, |c| c.lambda);
    let reg = constraint.as_ref().map(|(c, _)| c);
    let init = init_particles(m, d, seeds.init);
    let out = run_from(init, &targets, reg, &engine, |epoch, z| on_epoch(epoch, &z.positions))?;
    let synthetic = finalize(&out.particles, data.schema())?;
    let optimized = Instant::now();

    let (epsilon_total, delta_total) = compose(&ledger)?;
    warnings.extend(ledger.warnings.iter().cloned());
    let constraint = constraint.map(|(c, release)| ConstraintReport {
        synthetic_value: smooth_threshold(out.particles.positions.view(), &c),
        lambda: engine.lambda,
        constraint: c,
        release,
    });
    let report = SynthReport {
        config: config.clone(),
        n,
        d,
        particles: m,
        seeds,
        budget: BudgetReport {
            epsilon_total,
            delta_total,
            marginal_release: release,
            ledger,
        },
        projection,
        constraint,
        loss_trace: TraceSummary::of(&out.trace),
        warnings,
    };
    let secs = |a: Instant, b: Instant| (b - a).as_secs_f64();
    Ok(SynthOutput {
        synthetic,
        report,
        trace: out.trace,
        timing: Timing {
            privatize: secs(started, privatized),
            projection: secs(privatized, projected_at),
            optimization: secs(projected_at, optimized),
            total: secs(started, optimized),
        },
    })
}

fn build_constraint(
    cc: &ConstraintConfig,
    data: &DiscreteDataset,
    config: &RunConfig,
    seeds: &RunSeeds,
    ledger: &mut BudgetLedger,
) -> Result<(ThresholdConstraint, PrivacyBudget)> {
    let d = data.dim();
    let theta = match &cc.theta {
        Some(t) => t.clone(),
        None => {
            let mut rng = seed::rng(config.seed, "constraint-theta", 0);
            (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()
        }
    };
    let b = cc.b.unwrap_or_else(|| 0.5 * theta.iter().sum::<f64>());
    let mut c = ThresholdConstraint::new(theta, b);
    c.slope = cc.slope;
    c.validate(d)?;
    let release = PrivacyBudget::calibrate(
        config.epsilon * cc.budget_fraction,
        config.delta * cc.budget_fraction,
        scalar_sensitivity(data.n()),
    )?;
    let truth = smooth_threshold(embed_dataset(data).view(), &c);
    c.dp_target = privatize_scalar(truth, &release, ledger, "threshold-target", seeds.scalar_noise)?;
    Ok((c, release))
}

/// Reads the input named in `config`, synthesizes, and writes
/// `synthetic.csv`, `schema.json`, `report.json`, `loss_trace.csv` and any
/// checkpoints into the output directory.
pub fn synthesize(config: &RunConfig) -> Result<SynthOutput> {
    config.validate()?;
    let input = config.required(config.input.as_ref(), "input")?;
    let schema_path = config.required(config.schema.as_ref(), "schema")?;
    let out_dir = config.required(config.output.as_ref(), "output")?;
    let spec = load_schema_spec(&schema_path)?;
    let data = ingest_csv(&input, &spec)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let every = config.checkpoint_every;
    let ckpt_dir = out_dir.join("checkpoints");
    let output = synthesize_with(&data, config, |epoch, z| {
        if let Some(k) = every {
            if epoch % k == 0 {
                std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
                save_checkpoint(z, ckpt_dir.join(format!("epoch_{epoch:05}.bin")))?;
            }
        }
        Ok(())
    })?;

    write_csv(&output.synthetic, out_dir.join("synthetic.csv"))?;
    write_json(&SchemaSpec::from_schema(output.synthetic.schema()), &out_dir.join("schema.json"))?;
    let report = serde_json::json!({
        "report": output.report,
        "timing": output.timing,
    });
    write_json(&report, &out_dir.join("report.json"))?;
    let trace_path = out_dir.join("loss_trace.csv");
    let file = std::fs::File::create(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
    write_trace(&output.trace, std::io::BufWriter::new(file))?;
    Ok(output)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads an original table (coded per `schema`) and a synthetic table and
/// runs the metric suite.
///
/// The synthetic table may be integer coded, as `synthesize` writes it, or
/// raw in the same format as the original.
pub fn evaluate_files(
    original: &Path,
    synthetic: &Path,
    schema: &Path,
    config: &EvalConfig,
) -> Result<MetricsReport> {
    let spec = load_schema_spec(schema)?;
    let original = ingest_csv(original, &spec)?;
    let coded = SchemaSpec::from_schema(original.schema());
    let synthetic = match ingest_csv(synthetic, &coded) {
        Ok(s) => s,
        Err(Error::Row { .. }) if coded != spec => ingest_csv(synthetic, &spec)?,
        Err(e) => return Err(e),
    };
    if !original.schema().same_domain(synthetic.schema()) {
        return Err(Error::Schema("synthetic table does not match the original's domain".into()));
    }
    evaluate_all(&original, &synthetic, config)
}
