//! Statistical utility metrics between an original and a synthetic dataset.

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{all_pairs_workload, embed_dataset, marginal, ColumnPair, DiscreteDataset, GridMeasure};
use crate::error::{Error, Result};
use crate::seed;
use crate::sliced_ot::{sample_projections, sw1_signed};

/// Queries per family and projections for the sliced distance.
pub const DEFAULT_QUERIES: usize = 200;
pub const DEFAULT_SW1_PROJECTIONS: usize = 200;
/// Consecutive rejected candidates after which counting-query sampling gives up.
pub const MAX_REJECTIONS: usize = 10_000;

/// A closed integer interval on one column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub column: usize,
    pub lower: u32,
    pub upper: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum QuerySpec {
    /// Fraction of rows inside a box constrained on three columns.
    Counting { intervals: Vec<Interval> },
    /// Fraction of rows with `⟨x, θ⟩ − b > 0` on raw integer codes; `θ` is
    /// given sparsely as `(column, weight)`.
    Thresholding { theta: Vec<(usize, f64)>, b: f64 },
}

fn margin(theta: &[(usize, f64)], row: &[u32]) -> f64 {
    theta.iter().map(|&(c, w)| w * f64::from(row[c])).sum()
}

fn check_same_domain(a: &DiscreteDataset, b: &DiscreteDataset) -> Result<()> {
    if !a.schema().same_domain(b.schema()) {
        return Err(Error::Schema(
            "datasets have different columns or cardinalities".into(),
        ));
    }
    Ok(())
}

/// Exact fraction of rows of `data` satisfying `q`.
pub fn evaluate_query(q: &QuerySpec, data: &DiscreteDataset) -> f64 {
    let n = data.n() as f64;
    let hits = match q {
        QuerySpec::Counting { intervals } => data
            .rows()
            .filter(|row| {
                intervals
                    .iter()
                    .all(|iv| (iv.lower..=iv.upper).contains(&row[iv.column]))
            })
            .count(),
        QuerySpec::Thresholding { theta, b } => data.rows().filter(|row| margin(theta, row) - b > 0.0).count(),
    };
    hits as f64 / n
}

fn distinct_columns(d: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut cols = sample(rng, d, 3).into_vec();
    cols.sort_unstable();
    cols
}

/// `j` counting queries on three random columns, each accepted only if its
/// mass on `data` lies in `[0.05, 0.95]`.
pub fn sample_counting_queries(data: &DiscreteDataset, j: usize, seed: u64) -> Result<Vec<QuerySpec>> {
    let d = data.dim();
    if d < 3 || j == 0 {
        return Err(Error::Config(format!(
            "counting queries need at least 3 columns and 1 query (d = {d}, J = {j})"
        )));
    }
    let mut rng = seed::rng(seed, "counting", 0);
    let mut out = Vec::with_capacity(j);
    while out.len() < j {
        let mut accepted = None;
        for _ in 0..MAX_REJECTIONS {
            let intervals = distinct_columns(d, &mut rng)
                .into_iter()
                .map(|column| {
                    let k = data.schema().cardinality(column);
                    let lower = rng.random_range(1..=k);
                    let upper = rng.random_range(lower..=k);
                    Interval { column, lower, upper }
                })
                .collect();
            let q = QuerySpec::Counting { intervals };
            let mass = evaluate_query(&q, data);
            if (0.05..=0.95).contains(&mass) {
                accepted = Some(q);
                break;
            }
        }
        match accepted {
            Some(q) => out.push(q),
            None => {
                return Err(Error::QueryGeneration(format!(
                    "{MAX_REJECTIONS} consecutive counting queries fell outside [0.05, 0.95]"
                )))
            }
        }
    }
    Ok(out)
}

/// `j` thresholding queries with a standard normal 3-sparse direction and
/// offset uniform between the smallest and largest margin on `data`.
pub fn sample_thresholding_queries(data: &DiscreteDataset, j: usize, seed: u64) -> Result<Vec<QuerySpec>> {
    let d = data.dim();
    if d < 3 || j == 0 {
        return Err(Error::Config(format!(
            "thresholding queries need at least 3 columns and 1 query (d = {d}, J = {j})"
        )));
    }
    if data.n() == 0 {
        return Err(Error::Dataset("empty dataset".into()));
    }
    let mut rng = seed::rng(seed, "thresholding", 0);
    let mut out = Vec::with_capacity(j);
    for _ in 0..j {
        let theta: Vec<(usize, f64)> = distinct_columns(d, &mut rng)
            .into_iter()
            .map(|c| (c, rng.sample(StandardNormal)))
            .collect();
        let (lo, hi) = data.rows().map(|row| margin(&theta, row)).fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), v| (lo.min(v), hi.max(v)),
        );
        let b = lo + (hi - lo) * rng.random::<f64>();
        out.push(QuerySpec::Thresholding { theta, b });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryError {
    /// `Σ_j |q_j(D_dp) − q_j(D)| / Σ_j q_j(D)`.
    pub relative: f64,
    /// Mean absolute difference over the queries.
    pub absolute: f64,
}

pub fn relative_query_error(
    queries: &[QuerySpec],
    original: &DiscreteDataset,
    synthetic: &DiscreteDataset,
) -> Result<QueryError> {
    if queries.is_empty() {
        return Err(Error::Config("empty query list".into()));
    }
    check_same_domain(original, synthetic)?;
    let pairs: Vec<(f64, f64)> = queries
        .par_iter()
        .map(|q| (evaluate_query(q, original), evaluate_query(q, synthetic)))
        .collect();
    let diff: f64 = pairs.iter().map(|(a, b)| (a - b).abs()).sum();
    let total: f64 = pairs.iter().map(|(a, _)| a).sum();
    if total == 0.0 {
        return Err(Error::Degenerate("queries have zero total answer on the original data".into()));
    }
    Ok(QueryError {
        relative: diff / total,
        absolute: diff / queries.len() as f64,
    })
}

fn covariance(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows() as f64;
    let mean = x.mean_axis(Axis(0)).expect("nonempty");
    let centered = x - &mean;
    centered.t().dot(&centered) / n
}

/// `‖C(D) − C(D_dp)‖_F / ‖C(D_dp)‖_F` on embedded rows, divisor `n`.
pub fn covariance_error(original: &DiscreteDataset, synthetic: &DiscreteDataset) -> Result<f64> {
    check_same_domain(original, synthetic)?;
    if original.n() == 0 || synthetic.n() == 0 {
        return Err(Error::Dataset("empty dataset".into()));
    }
    let c = covariance(&embed_dataset(original));
    let c_dp = covariance(&embed_dataset(synthetic));
    let denom = c_dp.iter().map(|v| v * v).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(Error::Degenerate("synthetic covariance is zero".into()));
    }
    let num = (&c - &c_dp).iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(num / denom)
}

fn paired_marginals(
    original: &DiscreteDataset,
    synthetic: &DiscreteDataset,
) -> Result<Vec<(GridMeasure, GridMeasure)>> {
    check_same_domain(original, synthetic)?;
    all_pairs_workload(original.dim())?
        .into_par_iter()
        .map(|pair: ColumnPair| {
            Ok((
                GridMeasure::from_table(&marginal(original, pair)?),
                GridMeasure::from_table(&marginal(synthetic, pair)?),
            ))
        })
        .collect()
}

/// Mean sliced `W1` over all 2-way marginals, one shared projection set.
pub fn avg_sw1_distance(
    original: &DiscreteDataset,
    synthetic: &DiscreteDataset,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    let proj = sample_projections(2, n_mc, seed);
    let pairs = paired_marginals(original, synthetic)?;
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|(a, b)| sw1_signed(&a.to_atoms(), &b.to_atoms(), &proj))
        .collect::<Result<_>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean total variation (half `L1`) over all 2-way marginals.
pub fn avg_tv_distance(original: &DiscreteDataset, synthetic: &DiscreteDataset) -> Result<f64> {
    let pairs = paired_marginals(original, synthetic)?;
    let total: f64 = pairs.iter().map(|(a, b)| a.tv_distance(b)).sum();
    Ok(total / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub queries: usize,
    pub sw1_projections: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            queries: DEFAULT_QUERIES,
            sw1_projections: DEFAULT_SW1_PROJECTIONS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSeeds {
    pub queries: u64,
    pub projections: u64,
}

/// The full metric suite. Query metrics are `None` when `d < 3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub covariance_error: f64,
    pub counting_error: Option<f64>,
    pub counting_abs_error: Option<f64>,
    pub thresholding_error: Option<f64>,
    pub thresholding_abs_error: Option<f64>,
    pub avg_sw1: f64,
    pub avg_tv: f64,
    pub query_count: usize,
    pub seeds: MetricSeeds,
    pub warnings: Vec<String>,
}

/// Query lists used by [`evaluate_all`], for export.
pub fn sample_queries(original: &DiscreteDataset, config: &EvalConfig) -> Result<(Vec<QuerySpec>, Vec<QuerySpec>)> {
    let s = seed::derive(config.seed, "queries", 0);
    Ok((
        sample_counting_queries(original, config.queries, s)?,
        sample_thresholding_queries(original, config.queries, s)?,
    ))
}

pub fn evaluate_all(
    original: &DiscreteDataset,
    synthetic: &DiscreteDataset,
    config: &EvalConfig,
) -> Result<MetricsReport> {
    check_same_domain(original, synthetic)?;
    let seeds = MetricSeeds {
        queries: seed::derive(config.seed, "queries", 0),
        projections: seed::derive(config.seed, "sw1", 0),
    };
    let mut warnings = Vec::new();
    let (mut counting, mut thresholding) = (None, None);
    if original.dim() >= 3 {
        let (cq, tq) = sample_queries(original, config)?;
        counting = Some(relative_query_error(&cq, original, synthetic)?);
        thresholding = Some(relative_query_error(&tq, original, synthetic)?);
    } else {
        warnings.push(format!(
            "query metrics skipped: {} columns, 3 needed",
            original.dim()
        ));
    }
    Ok(MetricsReport {
        covariance_error: covariance_error(original, synthetic)?,
        counting_error: counting.map(|e| e.relative),
        counting_abs_error: counting.map(|e| e.absolute),
        thresholding_error: thresholding.map(|e| e.relative),
        thresholding_abs_error: thresholding.map(|e| e.absolute),
        avg_sw1: avg_sw1_distance(original, synthetic, config.sw1_projections, seeds.projections)?,
        avg_tv: avg_tv_distance(original, synthetic)?,
        query_count: if counting.is_some() { config.queries } else { 0 },
        seeds,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::DiscreteSchema;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn dataset(cards: &[u32], rows: &[Vec<u32>]) -> DiscreteDataset {
        DiscreteDataset::new(DiscreteSchema::from_cardinalities(cards).unwrap(), rows).unwrap()
    }

    fn random_dataset(cards: &[u32], n: usize, s: u64) -> DiscreteDataset {
        let mut rng = seed::rng_from(s);
        let rows: Vec<Vec<u32>> = (0..n)
            .map(|_| cards.iter().map(|&k| rng.random_range(1..=k)).collect())
            .collect();
        dataset(cards, &rows)
    }

    #[test]
    fn two_row_covariance_by_hand() {
        // embedded rows (0.25, 0.125) and (0.75, 0.625): every centered entry is ±0.25
        let a = dataset(&[2, 4], &[vec![1, 1], vec![2, 3]]);
        let b = dataset(&[2, 4], &[vec![1, 2], vec![2, 2]]);
        // C(a) = 0.0625 · ones(2, 2); C(b) = diag(0.0625, 0)
        let expected = 0.0625 * 3f64.sqrt() / 0.0625;
        assert!((covariance_error(&a, &b).unwrap() - expected).abs() < 1e-12);
        assert_eq!(covariance_error(&a, &a).unwrap(), 0.0);
        let constant = dataset(&[2, 4], &[vec![1, 1], vec![1, 1]]);
        assert!(matches!(covariance_error(&a, &constant), Err(Error::Degenerate(_))));
    }

    #[test]
    fn query_endpoints() {
        let data = random_dataset(&[2, 3, 4], 500, 1);
        let all = QuerySpec::Counting {
            intervals: vec![
                Interval { column: 0, lower: 1, upper: 2 },
                Interval { column: 1, lower: 1, upper: 3 },
                Interval { column: 2, lower: 1, upper: 4 },
            ],
        };
        assert_eq!(evaluate_query(&all, &data), 1.0);
        let theta = vec![(0, 1.0), (1, -0.5), (2, 2.0)];
        let margins: Vec<f64> = data.rows().map(|r| margin(&theta, r)).collect();
        let lo = margins.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let below = QuerySpec::Thresholding { theta: theta.clone(), b: lo - 1e-9 };
        let above = QuerySpec::Thresholding { theta, b: hi };
        assert_eq!(evaluate_query(&below, &data), 1.0);
        assert_eq!(evaluate_query(&above, &data), 0.0);
    }

    #[test]
    fn one_cell_on_a_binary_column() {
        let rows: Vec<Vec<u32>> = (0..1000).map(|i| vec![1 + (i % 2), 1, 1]).collect();
        let data = dataset(&[2, 2, 2], &rows);
        let q = QuerySpec::Counting {
            intervals: vec![
                Interval { column: 0, lower: 2, upper: 2 },
                Interval { column: 1, lower: 1, upper: 2 },
                Interval { column: 2, lower: 1, upper: 2 },
            ],
        };
        assert_eq!(evaluate_query(&q, &data), 0.5);
    }

    #[test]
    fn relative_error_arithmetic() {
        let rows_a: Vec<Vec<u32>> = (0..10).map(|i| vec![if i < 5 { 1 } else { 2 }, 1, 1]).collect();
        let rows_b: Vec<Vec<u32>> = (0..10).map(|i| vec![if i < 4 { 1 } else { 2 }, 1, 1]).collect();
        let (a, b) = (dataset(&[2, 2, 2], &rows_a), dataset(&[2, 2, 2], &rows_b));
        let q = QuerySpec::Counting {
            intervals: vec![
                Interval { column: 0, lower: 1, upper: 1 },
                Interval { column: 1, lower: 1, upper: 2 },
                Interval { column: 2, lower: 1, upper: 2 },
            ],
        };
        let e = relative_query_error(&[q], &a, &b).unwrap();
        assert!((e.relative - 0.2).abs() < 1e-12);
        assert!((e.absolute - 0.1).abs() < 1e-12);
    }

    #[test]
    fn counting_queries_respect_mass_window() {
        let data = random_dataset(&[3, 5, 8, 2], 2000, 4);
        let qs = sample_counting_queries(&data, 200, 9).unwrap();
        assert_eq!(qs.len(), 200);
        for q in &qs {
            let mass = evaluate_query(q, &data);
            assert!((0.05..=0.95).contains(&mass));
            let QuerySpec::Counting { intervals } = q else { unreachable!() };
            assert_eq!(intervals.len(), 3);
        }
        assert_eq!(qs, sample_counting_queries(&data, 200, 9).unwrap());
    }

    #[test]
    fn degenerate_data_stops_query_sampling() {
        let rows = vec![vec![1, 1, 1]; 20];
        let data = dataset(&[1, 1, 1], &rows);
        assert!(matches!(
            sample_counting_queries(&data, 1, 0),
            Err(Error::QueryGeneration(_))
        ));
        let small = random_dataset(&[2, 2], 10, 0);
        assert!(sample_counting_queries(&small, 1, 0).is_err());
    }

    #[test]
    fn tv_examples() {
        let a = dataset(&[2, 2], &[vec![1, 1], vec![1, 2]]);
        let b = dataset(&[2, 2], &[vec![2, 1], vec![2, 2]]);
        assert_eq!(avg_tv_distance(&a, &b).unwrap(), 1.0);
        assert_eq!(avg_tv_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn sw1_of_adjacent_point_masses() {
        let a = dataset(&[2, 1], &[vec![1, 1]]);
        let b = dataset(&[2, 1], &[vec![2, 1]]);
        let n_mc = 20_000;
        let s = 3;
        let value = avg_sw1_distance(&a, &b, n_mc, s).unwrap();
        let proj = sample_projections(2, n_mc, s);
        let direct: f64 = proj.iter().map(|t| (0.5 * t[0]).abs()).sum::<f64>() / n_mc as f64;
        assert!((value - direct).abs() < 1e-12);
        // E|θ₁| over the circle is 2/π
        assert!((value - 1.0 / std::f64::consts::PI).abs() < 5e-3);
        assert!((avg_sw1_distance(&b, &a, n_mc, s).unwrap() - value).abs() < 1e-12);
    }

    #[test]
    fn report_on_identical_data_is_zero() {
        let data = random_dataset(&[3, 4, 5], 400, 2);
        let r = evaluate_all(&data, &data, &EvalConfig::default()).unwrap();
        assert_eq!(r.covariance_error, 0.0);
        assert_eq!(r.counting_error, Some(0.0));
        assert_eq!(r.thresholding_error, Some(0.0));
        assert_eq!(r.avg_tv, 0.0);
        assert!(r.avg_sw1.abs() < 1e-12);
        let two = random_dataset(&[3, 4], 50, 2);
        let r = evaluate_all(&two, &two, &EvalConfig::default()).unwrap();
        assert_eq!(r.counting_error, None);
        assert_eq!(r.warnings.len(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn metrics_ignore_row_order(s in 0u64..1000) {
            let a = random_dataset(&[3, 4, 2], 120, s);
            let b = random_dataset(&[3, 4, 2], 90, s + 1);
            let order: Vec<usize> = (0..90).rev().collect();
            let bp = b.permuted(&order);
            let cfg = EvalConfig { queries: 20, sw1_projections: 20, seed: s };
            let r1 = evaluate_all(&a, &b, &cfg).unwrap();
            let r2 = evaluate_all(&a, &bp, &cfg).unwrap();
            prop_assert!((r1.covariance_error - r2.covariance_error).abs() < 1e-12);
            prop_assert_eq!(r1.counting_error, r2.counting_error);
            prop_assert_eq!(r1.thresholding_error, r2.thresholding_error);
            prop_assert!((r1.avg_sw1 - r2.avg_sw1).abs() < 1e-12);
            prop_assert!((r1.avg_tv - r2.avg_tv).abs() < 1e-12);
            prop_assert!(r1.avg_tv <= 1.0 && r1.avg_sw1 <= 3f64.sqrt() / 2.0);
        }

        #[test]
        fn duplicating_rows_keeps_query_error(s in 0u64..1000) {
            let a = random_dataset(&[3, 4, 2], 80, s);
            let b = random_dataset(&[3, 4, 2], 60, s + 7);
            let double = |d: &DiscreteDataset| {
                let rows: Vec<Vec<u32>> = d.rows().chain(d.rows()).map(<[u32]>::to_vec).collect();
                DiscreteDataset::new(d.schema().clone(), &rows).unwrap()
            };
            let qs = sample_counting_queries(&a, 20, s).unwrap();
            let e1 = relative_query_error(&qs, &a, &b).unwrap();
            let e2 = relative_query_error(&qs, &double(&a), &double(&b)).unwrap();
            prop_assert!((e1.relative - e2.relative).abs() < 1e-12);
        }
    }
}
