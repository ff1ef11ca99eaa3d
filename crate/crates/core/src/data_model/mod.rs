//! Discrete tabular data: schemas, datasets, the grid embedding into the
//! unit cube, and 2-way marginals.
//!
//! Every column `i` takes values in `{1, …, k_i}`. The embedding sends value
//! `x` to the cell center `(2x − 1) / (2k)`, so the embedded domain is a
//! regular grid inside `[0, 1]^d` that preserves the column order.

mod discretize;
mod grid;
mod io;

use serde::{Deserialize, Serialize};

pub use discretize::{discretize, discretize_with_edges, Discretized, DEFAULT_BINS};
pub use grid::{
    all_pairs_workload, embed, GridMeasure, embed_dataset, embed_value, marginal, marginals, nearest_grid,
    nearest_index, ColumnPair, MarginalTable,
};
pub use io::{ingest_csv, ingest_reader, load_schema_spec, write_csv, write_csv_to, ColumnSpec, SchemaSpec};

use crate::error::{Error, Result};

/// How a column's integer codes came about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnKind {
    Discrete,
    BinnedContinuous,
}

/// One column of a [`DiscreteSchema`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    pub cardinality: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin_edges: Option<Vec<f64>>,
    /// Category labels in code order, for categorical source columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl Column {
    pub fn discrete(name: impl Into<String>, cardinality: u32) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Discrete,
            cardinality,
            bin_edges: None,
            labels: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.cardinality == 0 {
            return Err(Error::Schema(format!(
                "column `{}` has cardinality 0",
                self.name
            )));
        }
        if let Some(edges) = &self.bin_edges {
            if edges.len() != self.cardinality as usize + 1 {
                return Err(Error::Schema(format!(
                    "column `{}`: {} bin edges for cardinality {}",
                    self.name,
                    edges.len(),
                    self.cardinality
                )));
            }
            if edges.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::Schema(format!(
                    "column `{}`: bin edges not strictly ascending",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Ordered column declarations defining the product domain `X_1 × … × X_d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSchema {
    columns: Vec<Column>,
}

impl DiscreteSchema {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Schema("schema has no columns".into()));
        }
        for c in &columns {
            c.validate()?;
        }
        Ok(DiscreteSchema { columns })
    }

    /// Schema of unnamed discrete columns `c0, c1, …` with the given cardinalities.
    pub fn from_cardinalities(cards: &[u32]) -> Result<Self> {
        Self::new(
            cards
                .iter()
                .enumerate()
                .map(|(i, &k)| Column::discrete(format!("c{i}"), k))
                .collect(),
        )
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn cardinality(&self, column: usize) -> u32 {
        self.columns[column].cardinality
    }

    pub fn cardinalities(&self) -> Vec<u32> {
        self.columns.iter().map(|c| c.cardinality).collect()
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Checks that `row` is a valid point of the domain.
    pub fn check_row(&self, row: &[u32]) -> Result<()> {
        if row.len() != self.dim() {
            return Err(Error::Shape(format!(
                "row has {} entries, schema has {} columns",
                row.len(),
                self.dim()
            )));
        }
        for (column, (&value, c)) in row.iter().zip(&self.columns).enumerate() {
            if value < 1 || value > c.cardinality {
                return Err(Error::Domain {
                    column,
                    value,
                    cardinality: c.cardinality,
                });
            }
        }
        Ok(())
    }

    /// Two schemas describe the same domain (same names and cardinalities).
    pub fn same_domain(&self, other: &DiscreteSchema) -> bool {
        self.dim() == other.dim()
            && self
                .columns
                .iter()
                .zip(&other.columns)
                .all(|(a, b)| a.name == b.name && a.cardinality == b.cardinality)
    }
}

/// An `n × d` table of integer codes valid under its schema.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDataset {
    schema: DiscreteSchema,
    /// Row-major codes.
    values: Vec<u32>,
    n: usize,
}

impl DiscreteDataset {
    pub fn new(schema: DiscreteSchema, rows: &[Vec<u32>]) -> Result<Self> {
        let d = schema.dim();
        let mut values = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            schema.check_row(row).map_err(|e| Error::Row {
                row: i,
                message: e.to_string(),
            })?;
            values.extend_from_slice(row);
        }
        Ok(DiscreteDataset {
            schema,
            values,
            n: rows.len(),
        })
    }

    /// Builds from row-major codes, validating every entry.
    pub fn from_flat(schema: DiscreteSchema, values: Vec<u32>) -> Result<Self> {
        let d = schema.dim();
        if values.len() % d != 0 {
            return Err(Error::Shape(format!(
                "{} values do not divide into rows of {d}",
                values.len()
            )));
        }
        let n = values.len() / d;
        for (i, row) in values.chunks_exact(d).enumerate() {
            schema.check_row(row).map_err(|e| Error::Row {
                row: i,
                message: e.to_string(),
            })?;
        }
        Ok(DiscreteDataset { schema, values, n })
    }

    pub fn schema(&self) -> &DiscreteSchema {
        &self.schema
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.schema.dim()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        let d = self.dim();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[u32]> + '_ {
        self.values.chunks_exact(self.dim())
    }

    pub fn get(&self, row: usize, column: usize) -> u32 {
        self.values[row * self.dim() + column]
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    /// Same rows, reordered by `order` (a permutation of `0..n`).
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for &i in order {
            values.extend_from_slice(self.row(i));
        }
        DiscreteDataset {
            schema: self.schema.clone(),
            values,
            n: order.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_rows() {
        let schema = DiscreteSchema::from_cardinalities(&[2, 3]).unwrap();
        assert!(DiscreteDataset::new(schema.clone(), &[vec![1, 3], vec![2, 1]]).is_ok());
        let err = DiscreteDataset::new(schema.clone(), &[vec![1, 1], vec![3, 1]]).unwrap_err();
        assert!(matches!(err, Error::Row { row: 1, .. }));
        assert!(DiscreteDataset::new(schema, &[vec![0, 1]]).is_err());
    }

    #[test]
    fn schema_validation() {
        assert!(DiscreteSchema::from_cardinalities(&[0]).is_err());
        let mut c = Column::discrete("x", 2);
        c.bin_edges = Some(vec![0.0, 1.0]);
        assert!(DiscreteSchema::new(vec![c.clone()]).is_err());
        c.bin_edges = Some(vec![0.0, 1.0, 1.0]);
        assert!(DiscreteSchema::new(vec![c.clone()]).is_err());
        c.bin_edges = Some(vec![0.0, 0.5, 1.0]);
        assert!(DiscreteSchema::new(vec![c]).is_ok());
    }
}
