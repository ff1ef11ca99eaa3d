//! Gaussian-mechanism calibration, noisy releases and budget bookkeeping.
//!
//! Noise scale follows the analytic Gaussian mechanism: the smallest `σ`
//! such that for sensitivity `Δ`
//!
//! ```text
//! Φ(Δ/(2σ) − εσ/Δ) − e^ε · Φ(−Δ/(2σ) − εσ/Δ) ≤ δ
//! ```
//!
//! The left side only depends on `σ/Δ`, so calibration solves for the ratio
//! and scales by `Δ` afterwards.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data_model::{ColumnPair, GridMeasure, MarginalTable};
use crate::error::{Error, Result};
use crate::seed;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// The δ achieved by noise `sigma` at privacy level `epsilon` and sensitivity `sensitivity`.
pub fn gaussian_delta(sigma: f64, epsilon: f64, sensitivity: f64) -> f64 {
    let a = sensitivity / (2.0 * sigma);
    let b = epsilon * sigma / sensitivity;
    normal_cdf(a - b) - epsilon.exp() * normal_cdf(-a - b)
}

/// `Δ·√(2 ln(1.25/δ))/ε`, the textbook Gaussian-mechanism scale.
pub fn classical_sigma(epsilon: f64, delta: f64, sensitivity: f64) -> f64 {
    sensitivity * (2.0 * (1.25 / delta).ln()).sqrt() / epsilon
}

const RELATIVE_TOLERANCE: f64 = 1e-12;

/// Minimal `σ` meeting the analytic Gaussian condition, by bisection.
///
/// `epsilon = ∞` yields `σ = 0`.
pub fn calibrate_sigma(epsilon: f64, delta: f64, sensitivity: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(sensitivity > 0.0 && sensitivity.is_finite()) {
        return Err(Error::Config(format!(
            "sensitivity must be positive, got {sensitivity}"
        )));
    }
    if epsilon.is_infinite() {
        return Ok(0.0);
    }
    // unit-sensitivity ratio u = σ/Δ; the condition is decreasing in u
    let holds = |u: f64| gaussian_delta(u, epsilon, 1.0) <= delta;
    let mut hi = classical_sigma(epsilon, delta, 1.0).max(1e-12);
    let mut expansions = 0;
    while !holds(hi) {
        hi *= 2.0;
        expansions += 1;
        if expansions > 200 {
            return Err(Error::Internal("noise calibration failed to bracket".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..400 {
        if hi - lo <= RELATIVE_TOLERANCE * hi {
            return Ok(hi * sensitivity);
        }
        let mid = 0.5 * (lo + hi);
        if holds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(Error::Internal("noise calibration bisection did not converge".into()))
}

/// L2 sensitivity of releasing `marginal_count` normalized marginals of a
/// table with `n` rows under replace-one neighbors: one record leaves one
/// cell and enters another in every marginal.
pub fn workload_sensitivity(n: usize, marginal_count: usize) -> f64 {
    (2.0 * marginal_count as f64).sqrt() / n as f64
}

/// Sensitivity of a mean of `n` terms each bounded in `[0, 1]`.
pub fn scalar_sensitivity(n: usize) -> f64 {
    1.0 / n as f64
}

/// A calibrated Gaussian release.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    #[serde(with = "maybe_infinite")]
    pub epsilon: f64,
    pub delta: f64,
    pub sigma: f64,
    pub sensitivity: f64,
}

impl PrivacyBudget {
    pub fn calibrate(epsilon: f64, delta: f64, sensitivity: f64) -> Result<Self> {
        Ok(PrivacyBudget {
            epsilon,
            delta,
            sigma: calibrate_sigma(epsilon, delta, sensitivity)?,
            sensitivity,
        })
    }

    /// A release with explicit noise scale, bypassing calibration (testing and diagnostics).
    pub fn with_sigma(sigma: f64) -> Self {
        PrivacyBudget {
            epsilon: f64::INFINITY,
            delta: 0.0,
            sigma,
            sensitivity: 0.0,
        }
    }
}

/// One charge against the global budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub label: String,
    #[serde(with = "maybe_infinite")]
    pub epsilon: f64,
    pub delta: f64,
}

/// Simple-composition accounting against a global `(ε, δ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    #[serde(with = "maybe_infinite")]
    pub epsilon_limit: f64,
    pub delta_limit: f64,
    pub entries: Vec<LedgerEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Slack for float rounding when comparing sums of budget shares to the limit.
const BUDGET_SLACK: f64 = 1e-12;

impl BudgetLedger {
    pub fn new(epsilon_limit: f64, delta_limit: f64) -> Self {
        BudgetLedger {
            epsilon_limit,
            delta_limit,
            entries: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Records a charge, refusing it if the totals would leave the global budget.
    pub fn charge(&mut self, label: &str, epsilon: f64, delta: f64) -> Result<()> {
        let (e, d) = compose_entries(&self.entries);
        let (e, d) = (e + epsilon, d + delta);
        if exceeds(e, self.epsilon_limit) || exceeds(d, self.delta_limit) {
            return Err(Error::BudgetExceeded {
                spent_epsilon: e,
                spent_delta: d,
                epsilon: self.epsilon_limit,
                delta: self.delta_limit,
            });
        }
        if epsilon.is_infinite() {
            self.warnings
                .push(format!("`{label}` released without noise (epsilon = inf): no privacy"));
        }
        self.entries.push(LedgerEntry {
            label: label.to_string(),
            epsilon,
            delta,
        });
        Ok(())
    }

    pub fn totals(&self) -> (f64, f64) {
        compose_entries(&self.entries)
    }
}

fn exceeds(spent: f64, limit: f64) -> bool {
    if limit.is_infinite() {
        return false;
    }
    spent > limit + BUDGET_SLACK * limit.abs().max(1e-300)
}

fn compose_entries(entries: &[LedgerEntry]) -> (f64, f64) {
    entries
        .iter()
        .fold((0.0, 0.0), |(e, d), x| (e + x.epsilon, d + x.delta))
}

/// Coordinate-wise sum of all charges, checked against the global budget.
pub fn compose(ledger: &BudgetLedger) -> Result<(f64, f64)> {
    let (e, d) = ledger.totals();
    if exceeds(e, ledger.epsilon_limit) || exceeds(d, ledger.delta_limit) {
        return Err(Error::BudgetExceeded {
            spent_epsilon: e,
            spent_delta: d,
            epsilon: ledger.epsilon_limit,
            delta: ledger.delta_limit,
        });
    }
    Ok((e, d))
}

/// A Gaussian-noised marginal; entries may be negative and need not sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedMarginal {
    pub pair: ColumnPair,
    pub grid: GridMeasure,
}

fn noisy_copy(weights: &[f64], sigma: f64, rng: &mut impl rand::Rng) -> Vec<f64> {
    if sigma == 0.0 {
        return weights.to_vec();
    }
    weights
        .iter()
        .map(|&w| {
            let z: f64 = StandardNormal.sample(rng);
            w + sigma * z
        })
        .collect()
}

/// Adds iid `N(0, σ²)` to every cell of every marginal in one release.
///
/// Marginal `i` draws from its own stream derived from `(seed, i)`.
pub fn privatize_workload(
    marginals: &[MarginalTable],
    budget: &PrivacyBudget,
    ledger: &mut BudgetLedger,
    seed: u64,
) -> Result<Vec<SignedMarginal>> {
    if marginals.is_empty() {
        return Err(Error::Config("empty marginal workload".into()));
    }
    ledger.charge("marginals", budget.epsilon, budget.delta)?;
    Ok(marginals
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut rng = seed::rng(seed, "marginal", i as u64);
            let grid = GridMeasure::from_table(m);
            let weights = noisy_copy(&grid.weights, budget.sigma, &mut rng);
            SignedMarginal {
                pair: m.pair,
                grid: GridMeasure { weights, ..grid },
            }
        })
        .collect())
}

/// Releases one scalar statistic with Gaussian noise.
pub fn privatize_scalar(
    value: f64,
    budget: &PrivacyBudget,
    ledger: &mut BudgetLedger,
    label: &str,
    seed: u64,
) -> Result<f64> {
    ledger.charge(label, budget.epsilon, budget.delta)?;
    let mut rng = seed::rng(seed, "scalar", 0);
    Ok(noisy_copy(&[value], budget.sigma, &mut rng)[0])
}

/// Serializes `f64::INFINITY` as the string `"inf"`.
pub(crate) mod maybe_infinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s.eq_ignore_ascii_case("inf") => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got \"{s}\""
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn classical_bound_dominates() {
        let classical = classical_sigma(2.5, 1e-5, 1.0);
        assert!((classical - (2.0 * 1.25e5f64.ln()).sqrt() / 2.5).abs() < 1e-15);
        assert!((classical - 1.93792).abs() < 1e-5, "{classical}");
        let sigma = calibrate_sigma(2.5, 1e-5, 1.0).unwrap();
        assert!(sigma <= classical);
        assert!(gaussian_delta(sigma, 2.5, 1.0) <= 1e-5);
    }

    #[test]
    fn sensitivity_scale_equivariance() {
        let s1 = calibrate_sigma(1.3, 1e-6, 0.7).unwrap();
        let s2 = calibrate_sigma(1.3, 1e-6, 1.4).unwrap();
        assert_eq!(s2, 2.0 * s1);
    }

    #[test]
    fn grid_search_agrees_with_bisection() {
        let sigma = calibrate_sigma(1.0, 1e-5, 1.0).unwrap();
        // dense scan: first grid point (step 1e-6) satisfying the condition
        let mut s = 0.5;
        while gaussian_delta(s, 1.0, 1.0) > 1e-5 {
            s += 1e-6;
        }
        assert!(((s - sigma) / sigma).abs() < 1e-4, "grid {s} vs bisection {sigma}");
    }

    #[test]
    fn monotone_in_parameters() {
        let eps = [0.1, 0.5, 1.0, 2.0, 5.0];
        for w in eps.windows(2) {
            assert!(calibrate_sigma(w[0], 1e-5, 1.0).unwrap() > calibrate_sigma(w[1], 1e-5, 1.0).unwrap());
        }
        let deltas = [1e-9, 1e-7, 1e-5, 1e-3];
        for w in deltas.windows(2) {
            assert!(calibrate_sigma(1.0, w[0], 1.0).unwrap() > calibrate_sigma(1.0, w[1], 1.0).unwrap());
        }
        assert!(calibrate_sigma(1.0, 1e-5, 1.0).unwrap() < calibrate_sigma(1.0, 1e-5, 1.1).unwrap());
    }

    #[test]
    fn invalid_arguments() {
        assert!(calibrate_sigma(0.0, 1e-5, 1.0).is_err());
        assert!(calibrate_sigma(1.0, 1.0, 1.0).is_err());
        assert!(calibrate_sigma(1.0, 1e-5, 0.0).is_err());
        assert_eq!(calibrate_sigma(f64::INFINITY, 1e-5, 1.0).unwrap(), 0.0);
    }

    fn table() -> MarginalTable {
        MarginalTable {
            pair: ColumnPair(0, 1),
            mass: array![[0.1, 0.2], [0.3, 0.4]],
        }
    }

    #[test]
    fn zero_noise_is_identity_and_seeded_noise_is_repeatable() {
        let mut ledger = BudgetLedger::new(f64::INFINITY, 1.0);
        let out = privatize_workload(&[table()], &PrivacyBudget::with_sigma(0.0), &mut ledger, 1).unwrap();
        assert_eq!(out[0].grid.weights, vec![0.1, 0.2, 0.3, 0.4]);
        let b = PrivacyBudget::with_sigma(0.05);
        let x = privatize_workload(&[table(), table()], &b, &mut ledger, 9).unwrap();
        let y = privatize_workload(&[table(), table()], &b, &mut ledger, 9).unwrap();
        assert_eq!(x, y);
        assert_ne!(x[0].grid.weights, x[1].grid.weights);
        assert!(privatize_workload(&[], &b, &mut ledger, 9).is_err());
    }

    #[test]
    fn workload_noise_moments() {
        let b = PrivacyBudget::with_sigma(0.1);
        let mut ledger = BudgetLedger::new(f64::INFINITY, 1.0);
        let reps = 10_000;
        let mut sums = [0.0; 4];
        let mut sq = [0.0; 4];
        let base = [0.1, 0.2, 0.3, 0.4];
        for r in 0..reps {
            let out = privatize_workload(&[table()], &b, &mut ledger, r).unwrap();
            for c in 0..4 {
                let e = out[0].grid.weights[c] - base[c];
                sums[c] += e;
                sq[c] += e * e;
            }
        }
        for c in 0..4 {
            let mean = sums[c] / reps as f64;
            let std = (sq[c] / reps as f64 - mean * mean).sqrt();
            assert!(mean.abs() < 0.003, "cell {c} mean {mean}");
            assert!((std - 0.1).abs() < 0.005, "cell {c} std {std}");
        }
    }

    #[test]
    fn scalar_release() {
        let mut ledger = BudgetLedger::new(f64::INFINITY, 1.0);
        assert_eq!(
            privatize_scalar(0.5, &PrivacyBudget::with_sigma(0.0), &mut ledger, "s", 3).unwrap(),
            0.5
        );
        assert_eq!(scalar_sensitivity(200), 0.5 * scalar_sensitivity(100));
        let b = PrivacyBudget::with_sigma(0.01);
        let reps = 10_000;
        let mean: f64 = (0..reps)
            .map(|r| privatize_scalar(0.5, &b, &mut ledger, "s", r).unwrap())
            .sum::<f64>()
            / reps as f64;
        assert!((mean - 0.5).abs() < 0.0005, "{mean}");
    }

    #[test]
    fn ledger_composition() {
        let mut ledger = BudgetLedger::new(2.5, 1e-5);
        assert_eq!(compose(&ledger).unwrap(), (0.0, 0.0));
        ledger.charge("target", 0.5, 2e-6).unwrap();
        ledger.charge("marginals", 2.0, 8e-6).unwrap();
        let (e, d) = compose(&ledger).unwrap();
        assert_eq!(e, 2.5);
        assert!((d - 1e-5).abs() < 1e-12 * 1e-5 + 1e-20);
        assert!(matches!(
            ledger.charge("more", 0.1, 0.0),
            Err(Error::BudgetExceeded { .. })
        ));
        assert_eq!(ledger.entries.len(), 2);

        let mut three = BudgetLedger::new(10.0, 1.0);
        for i in 0..3 {
            three.charge(&format!("e{i}"), 1.0, 1e-6).unwrap();
        }
        let (e, d) = compose(&three).unwrap();
        assert_eq!(e, 3.0);
        assert!((d - 3e-6).abs() < 1e-18);
    }

    #[test]
    fn infinite_epsilon_serializes_as_string() {
        let b = PrivacyBudget::calibrate(f64::INFINITY, 1e-5, 0.1).unwrap();
        let json = serde_json::to_string(&b).unwrap();
        assert!(json.contains("\"inf\""), "{json}");
        let back: PrivacyBudget = serde_json::from_str(&json).unwrap();
        assert_eq!(back, b);
    }
}
