use crate::error::{Error, Result};

/// Bin count used for continuous columns and wide integer columns.
pub const DEFAULT_BINS: u32 = 32;

/// Codes plus the cardinality and equally spaced edges they were cut with.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretized {
    pub codes: Vec<u32>,
    pub cardinality: u32,
    /// `cardinality + 1` ascending edges; `None` for a constant column.
    pub edges: Option<Vec<f64>>,
}

/// Equal-width binning between the sample minimum and maximum.
///
/// Value `v` goes to bin `⌈(v − min) / width⌉` clamped to `[1, bins]`, so an
/// interior edge belongs to the bin below it, the minimum lands in bin 1 and
/// the maximum in bin `bins`. A constant column collapses to a single bin.
pub fn discretize(values: &[f64], bins: u32) -> Result<Discretized> {
    if values.is_empty() {
        return Err(Error::Data("cannot discretize an empty column".into()));
    }
    if bins == 0 {
        return Err(Error::Config("bin count must be at least 1".into()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "non-finite value {} at position {i}",
            values[i]
        )));
    }
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if min == max {
        return Ok(Discretized {
            codes: vec![1; values.len()],
            cardinality: 1,
            edges: None,
        });
    }
    let span = max - min;
    let mut edges: Vec<f64> = (0..=bins)
        .map(|j| min + span * f64::from(j) / f64::from(bins))
        .collect();
    edges[bins as usize] = max;
    let codes = values
        .iter()
        .map(|&v| bin_index(v, min, span, bins))
        .collect();
    Ok(Discretized {
        codes,
        cardinality: bins,
        edges: Some(edges),
    })
}

fn bin_index(v: f64, min: f64, span: f64, bins: u32) -> u32 {
    let t = (v - min) * f64::from(bins) / span;
    (t.ceil().max(1.0) as u32).min(bins)
}

/// Re-applies previously computed edges (e.g. from a schema echo) to new values.
pub fn discretize_with_edges(values: &[f64], edges: &[f64]) -> Result<Vec<u32>> {
    if edges.len() < 2 {
        return Err(Error::Schema("need at least two bin edges".into()));
    }
    let bins = (edges.len() - 1) as u32;
    let min = edges[0];
    let span = edges[edges.len() - 1] - min;
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if !v.is_finite() {
                Err(Error::Data(format!("non-finite value at position {i}")))
            } else {
                Ok(bin_index(v, min, span, bins))
            }
        })
        .collect()
}
