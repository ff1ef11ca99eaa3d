//! Correlated test tables: an equicorrelated Gaussian copula cut into equal
//! probability bins.

use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data_model::{write_csv, Column, ColumnSpec, DiscreteDataset, DiscreteSchema, SchemaSpec};
use crate::error::{Error, Result};
use crate::privacy::normal_cdf;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureSpec {
    pub columns: usize,
    pub bins: u32,
    pub rows: usize,
    /// Pairwise correlation of the latent normals, in `[0, 1)`.
    pub correlation: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            columns: 3,
            bins: 8,
            rows: 10_000,
            correlation: 0.6,
            seed: 0,
        }
    }
}

/// Column `c` of row `i` is bin `⌈k·Φ(√ρ·g₀ + √(1−ρ)·g_c)⌉` of shared and
/// private standard normals.
pub fn generate(spec: &FixtureSpec) -> Result<DiscreteDataset> {
    if spec.columns == 0 || spec.bins == 0 || spec.rows == 0 {
        return Err(Error::Config("fixture needs at least one column, bin and row".into()));
    }
    if !(0.0..1.0).contains(&spec.correlation) {
        return Err(Error::Config(format!(
            "correlation must lie in [0, 1), got {}",
            spec.correlation
        )));
    }
    let columns = (0..spec.columns)
        .map(|c| Column::discrete(format!("x{}", c + 1), spec.bins))
        .collect();
    let schema = DiscreteSchema::new(columns)?;
    let (shared, own) = (spec.correlation.sqrt(), (1.0 - spec.correlation).sqrt());
    let mut rng = seed::rng(spec.seed, "fixture", 0);
    let k = f64::from(spec.bins);
    let mut values = Vec::with_capacity(spec.rows * spec.columns);
    for _ in 0..spec.rows {
        let g0: f64 = StandardNormal.sample(&mut rng);
        for _ in 0..spec.columns {
            let g: f64 = StandardNormal.sample(&mut rng);
            let u = normal_cdf(shared * g0 + own * g);
            values.push(((u * k).ceil() as u32).clamp(1, spec.bins));
        }
    }
    DiscreteDataset::from_flat(schema, values)
}

/// Writes `data.csv` and `schema.json` into `dir`, returning their paths.
pub fn write_fixture(spec: &FixtureSpec, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let data = generate(spec)?;
    let csv_path = dir.join("data.csv");
    let schema_path = dir.join("schema.json");
    write_csv(&data, &csv_path)?;
    let spec_doc = SchemaSpec {
        columns: data
            .schema()
            .columns()
            .iter()
            .map(|c| ColumnSpec::Discrete {
                name: c.name.clone(),
                cardinality: c.cardinality,
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&spec_doc)?;
    std::fs::write(&schema_path, json).map_err(|e| Error::io(&schema_path, e))?;
    Ok((csv_path, schema_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{marginal, ColumnPair};
    use statrs::distribution::{ContinuousCDF, Normal};

    /// `P(bin_i = a, bin_j = b)` by Simpson quadrature over the first bin in `u` space.
    fn copula_cell(a: u32, b: u32, k: u32, rho: f64) -> f64 {
        let n = Normal::standard();
        let cond_sd = (1.0 - rho * rho).sqrt();
        let q = |p: f64| {
            if p <= 0.0 {
                f64::NEG_INFINITY
            } else if p >= 1.0 {
                f64::INFINITY
            } else {
                n.inverse_cdf(p)
            }
        };
        let (lo_b, hi_b) = (q(f64::from(b - 1) / f64::from(k)), q(f64::from(b) / f64::from(k)));
        let f = |u: f64| {
            let x = q(u);
            n.cdf((hi_b - rho * x) / cond_sd) - n.cdf((lo_b - rho * x) / cond_sd)
        };
        let (u0, u1) = (f64::from(a - 1) / f64::from(k), f64::from(a) / f64::from(k));
        let steps = 2000;
        let h = (u1 - u0) / steps as f64;
        // open end points: the integrand is bounded, so nudge inside
        let eps = 1e-12;
        let mut sum = f(u0 + eps) + f(u1 - eps);
        for s in 1..steps {
            sum += f(u0 + s as f64 * h) * if s % 2 == 1 { 4.0 } else { 2.0 };
        }
        sum * h / 3.0
    }

    fn max_pair_tv(rows: usize) -> f64 {
        let spec = FixtureSpec { rows, ..Default::default() };
        let data = generate(&spec).unwrap();
        let k = spec.bins;
        let analytic: Vec<f64> = (1..=k)
            .flat_map(|a| (1..=k).map(move |b| copula_cell(a, b, k, spec.correlation)))
            .collect();
        assert!((analytic.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        [ColumnPair(0, 1), ColumnPair(0, 2), ColumnPair(1, 2)]
            .iter()
            .map(|&pair| {
                let t = marginal(&data, pair).unwrap();
                t.mass.iter().zip(&analytic).map(|(e, a)| (e - a).abs()).sum::<f64>() / 2.0
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn marginals_match_the_copula() {
        // Pure multinomial noise on 64 cells already puts the expected TV at
        // about 0.030 for n = 10⁴ (99th percentile ≈ 0.036); it shrinks like 1/√n.
        let tv = max_pair_tv(10_000);
        assert!(tv < 0.036, "{tv}");
        let tv = max_pair_tv(100_000);
        assert!(tv < 0.03, "{tv}");
    }

    #[test]
    fn zero_correlation_is_a_product() {
        let spec = FixtureSpec {
            correlation: 0.0,
            bins: 4,
            rows: 40_000,
            ..Default::default()
        };
        let data = generate(&spec).unwrap();
        let t = marginal(&data, ColumnPair(0, 2)).unwrap();
        // each cell has mass 1/16; sd ≈ 0.0012
        assert!(t.mass.iter().all(|&p| (p - 1.0 / 16.0).abs() < 0.006), "{}", t.mass);
    }

    #[test]
    fn seeded() {
        let spec = FixtureSpec {
            rows: 100,
            ..Default::default()
        };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = FixtureSpec { seed: 1, ..spec };
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
        assert!(generate(&FixtureSpec { correlation: 1.0, ..spec }).is_err());
    }
}
