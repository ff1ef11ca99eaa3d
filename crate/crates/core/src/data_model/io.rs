use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::discretize::{discretize, DEFAULT_BINS};
use super::{Column, ColumnKind, DiscreteDataset, DiscreteSchema};
use crate::error::{Error, Result};

fn default_bins() -> u32 {
    DEFAULT_BINS
}

/// Declaration of one input column.
///
/// `discrete` and `binned-continuous` describe columns that are already
/// integer coded, which is what [`write_csv`] emits; a [`DiscreteSchema`]
/// echo therefore parses as a valid spec for re-ingesting exported tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ColumnSpec {
    Categorical {
        name: String,
        categories: Vec<String>,
    },
    Continuous {
        name: String,
        #[serde(default = "default_bins")]
        bins: u32,
    },
    Integer {
        name: String,
        #[serde(default = "default_bins")]
        bins: u32,
    },
    Discrete {
        name: String,
        cardinality: u32,
    },
    BinnedContinuous {
        name: String,
        cardinality: u32,
        bin_edges: Vec<f64>,
    },
}

impl ColumnSpec {
    pub fn name(&self) -> &str {
        match self {
            ColumnSpec::Categorical { name, .. }
            | ColumnSpec::Continuous { name, .. }
            | ColumnSpec::Integer { name, .. }
            | ColumnSpec::Discrete { name, .. }
            | ColumnSpec::BinnedContinuous { name, .. } => name,
        }
    }
}

/// The schema document accepted by [`ingest_csv`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaSpec {
    pub columns: Vec<ColumnSpec>,
}

impl SchemaSpec {
    /// Spec that re-reads a table already coded under `schema`.
    pub fn from_schema(schema: &DiscreteSchema) -> Self {
        let columns = schema
            .columns()
            .iter()
            .map(|c| match (&c.kind, &c.bin_edges) {
                (ColumnKind::BinnedContinuous, Some(edges)) => ColumnSpec::BinnedContinuous {
                    name: c.name.clone(),
                    cardinality: c.cardinality,
                    bin_edges: edges.clone(),
                },
                _ => ColumnSpec::Discrete {
                    name: c.name.clone(),
                    cardinality: c.cardinality,
                },
            })
            .collect();
        SchemaSpec { columns }
    }

    /// The discrete schema, when every column is already integer coded.
    pub fn to_discrete_schema(&self) -> Result<DiscreteSchema> {
        let columns = self
            .columns
            .iter()
            .map(|c| match c {
                ColumnSpec::Discrete { name, cardinality } => Ok(Column::discrete(name.clone(), *cardinality)),
                ColumnSpec::BinnedContinuous {
                    name,
                    cardinality,
                    bin_edges,
                } => Ok(Column {
                    name: name.clone(),
                    kind: ColumnKind::BinnedContinuous,
                    cardinality: *cardinality,
                    bin_edges: Some(bin_edges.clone()),
                    labels: None,
                }),
                other => Err(Error::Schema(format!(
                    "column `{}` is not integer coded",
                    other.name()
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        DiscreteSchema::new(columns)
    }
}

/// Reads a schema spec (or a schema echo) from a JSON file.
pub fn load_schema_spec(path: impl AsRef<Path>) -> Result<SchemaSpec> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

/// Reads a CSV file and codes every column according to `spec`.
pub fn ingest_csv(path: impl AsRef<Path>, spec: &SchemaSpec) -> Result<DiscreteDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(std::io::BufReader::new(file), spec)
}

pub fn ingest_reader<R: Read>(reader: R, spec: &SchemaSpec) -> Result<DiscreteDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Dataset("empty file: no header row".into()));
    }
    let mut positions = Vec::with_capacity(spec.columns.len());
    for c in &spec.columns {
        match headers.iter().position(|h| h == c.name()) {
            Some(p) => positions.push(p),
            None => {
                return Err(Error::Schema(format!(
                    "column `{}` declared in schema but missing from CSV",
                    c.name()
                )))
            }
        }
    }
    if let Some(extra) = headers
        .iter()
        .find(|h| !spec.columns.iter().any(|c| c.name() == *h))
    {
        return Err(Error::Schema(format!(
            "CSV column `{extra}` is not declared in the schema"
        )));
    }

    let mut raw: Vec<Vec<String>> = vec![Vec::new(); spec.columns.len()];
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Row {
            row,
            message: e.to_string(),
        })?;
        for (col, &p) in positions.iter().enumerate() {
            raw[col].push(record.get(p).unwrap_or("").to_string());
        }
    }
    let n = raw.first().map_or(0, Vec::len);
    if n == 0 {
        return Err(Error::Dataset("file has no data rows".into()));
    }

    let mut columns = Vec::with_capacity(spec.columns.len());
    let mut coded: Vec<Vec<u32>> = Vec::with_capacity(spec.columns.len());
    for (c, cells) in spec.columns.iter().zip(&raw) {
        let (column, codes) = code_column(c, cells)?;
        columns.push(column);
        coded.push(codes);
    }
    let schema = DiscreteSchema::new(columns)?;
    let d = schema.dim();
    let mut values = vec![0u32; n * d];
    for (j, codes) in coded.iter().enumerate() {
        for (i, &v) in codes.iter().enumerate() {
            values[i * d + j] = v;
        }
    }
    DiscreteDataset::from_flat(schema, values)
}

fn parse_cells<T: std::str::FromStr>(cells: &[String], name: &str, what: &str) -> Result<Vec<T>> {
    cells
        .iter()
        .enumerate()
        .map(|(row, s)| {
            s.parse::<T>().map_err(|_| Error::Row {
                row,
                message: format!("column `{name}`: cannot parse `{s}` as {what}"),
            })
        })
        .collect()
}

fn check_codes(codes: &[u32], name: &str, k: u32) -> Result<()> {
    if let Some(row) = codes.iter().position(|&v| v < 1 || v > k) {
        return Err(Error::Row {
            row,
            message: format!("column `{name}`: code {} outside 1..={k}", codes[row]),
        });
    }
    Ok(())
}

fn code_column(spec: &ColumnSpec, cells: &[String]) -> Result<(Column, Vec<u32>)> {
    match spec {
        ColumnSpec::Categorical { name, categories } => {
            if categories.is_empty() {
                return Err(Error::Schema(format!("column `{name}` has no categories")));
            }
            let codes = cells
                .iter()
                .enumerate()
                .map(|(row, s)| {
                    categories
                        .iter()
                        .position(|c| c == s)
                        .map(|p| p as u32 + 1)
                        .ok_or_else(|| Error::Row {
                            row,
                            message: format!("column `{name}`: undeclared category `{s}`"),
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut column = Column::discrete(name.clone(), categories.len() as u32);
            column.labels = Some(categories.clone());
            Ok((column, codes))
        }
        ColumnSpec::Continuous { name, bins } => {
            let values: Vec<f64> = parse_cells(cells, name, "a number")?;
            binned(name, &values, *bins)
        }
        ColumnSpec::Integer { name, bins } => {
            let values: Vec<i64> = parse_cells(cells, name, "an integer")?;
            let min = *values.iter().min().expect("nonempty");
            let max = *values.iter().max().expect("nonempty");
            let range = (max - min + 1) as u64;
            if range <= u64::from(*bins) {
                let codes = values.iter().map(|v| (v - min + 1) as u32).collect();
                Ok((Column::discrete(name.clone(), range as u32), codes))
            } else {
                let values: Vec<f64> = values.iter().map(|&v| v as f64).collect();
                binned(name, &values, *bins)
            }
        }
        ColumnSpec::Discrete { name, cardinality } => {
            let codes: Vec<u32> = parse_cells(cells, name, "an integer code")?;
            check_codes(&codes, name, *cardinality)?;
            Ok((Column::discrete(name.clone(), *cardinality), codes))
        }
        ColumnSpec::BinnedContinuous {
            name,
            cardinality,
            bin_edges,
        } => {
            let codes: Vec<u32> = parse_cells(cells, name, "an integer code")?;
            check_codes(&codes, name, *cardinality)?;
            let column = Column {
                name: name.clone(),
                kind: ColumnKind::BinnedContinuous,
                cardinality: *cardinality,
                bin_edges: Some(bin_edges.clone()),
                labels: None,
            };
            Ok((column, codes))
        }
    }
}

fn binned(name: &str, values: &[f64], bins: u32) -> Result<(Column, Vec<u32>)> {
    let out = discretize(values, bins).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("column `{name}`: {m}")),
        other => other,
    })?;
    let kind = if out.edges.is_some() {
        ColumnKind::BinnedContinuous
    } else {
        ColumnKind::Discrete
    };
    let column = Column {
        name: name.to_string(),
        kind,
        cardinality: out.cardinality,
        bin_edges: out.edges,
        labels: None,
    };
    Ok((column, out.codes))
}

/// Writes the integer-coded table with the schema's column names as header.
pub fn write_csv_to<W: Write>(data: &DiscreteDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(data.schema().names())?;
    let mut buf: Vec<String> = Vec::with_capacity(data.dim());
    for row in data.rows() {
        buf.clear();
        buf.extend(row.iter().map(u32::to_string));
        w.write_record(&buf)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn write_csv(data: &DiscreteDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(data, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(json: &str) -> SchemaSpec {
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn categorical_mapping() {
        let s = spec(r#"{"columns":[{"name":"x","kind":"categorical","categories":["a","b"]}]}"#);
        let d = ingest_reader("x\na\nb\na\n".as_bytes(), &s).unwrap();
        assert_eq!(d.values(), &[1, 2, 1]);
        assert_eq!(d.schema().cardinality(0), 2);
    }

    #[test]
    fn undeclared_csv_column_is_a_schema_error() {
        let s = spec(r#"{"columns":[{"name":"x","kind":"discrete","cardinality":3}]}"#);
        let err = ingest_reader("x,extra\n1,2\n".as_bytes(), &s).unwrap_err();
        match err {
            Error::Schema(m) => assert!(m.contains("extra"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let s = spec(
            r#"{"columns":[{"name":"x","kind":"discrete","cardinality":3},
                           {"name":"y","kind":"discrete","cardinality":3}]}"#,
        );
        let err = ingest_reader("x\n1\n".as_bytes(), &s).unwrap_err();
        match err {
            Error::Schema(m) => assert!(m.contains("`y`"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unparseable_cell_reports_row() {
        let s = spec(r#"{"columns":[{"name":"v","kind":"continuous"}]}"#);
        let err = ingest_reader("v\n1.0\n2.0\nabc\n".as_bytes(), &s).unwrap_err();
        assert!(matches!(err, Error::Row { row: 2, .. }), "{err:?}");
    }

    #[test]
    fn empty_inputs_are_dataset_errors() {
        let s = spec(r#"{"columns":[{"name":"v","kind":"continuous"}]}"#);
        assert!(matches!(ingest_reader("".as_bytes(), &s), Err(Error::Dataset(_))));
        assert!(matches!(ingest_reader("v\n".as_bytes(), &s), Err(Error::Dataset(_))));
    }

    #[test]
    fn narrow_integer_columns_stay_unbinned() {
        let s = spec(r#"{"columns":[{"name":"age","kind":"integer"}]}"#);
        let d = ingest_reader("age\n20\n25\n51\n".as_bytes(), &s).unwrap();
        assert_eq!(d.schema().cardinality(0), 32);
        assert_eq!(d.values(), &[1, 6, 32]);
        let d = ingest_reader("age\n20\n25\n52\n".as_bytes(), &s).unwrap();
        assert_eq!(d.schema().columns()[0].kind, ColumnKind::BinnedContinuous);
        assert_eq!(d.values(), &[1, 5, 32]);
    }

    #[test]
    fn echo_schema_round_trips() {
        let s = spec(
            r#"{"columns":[{"name":"c","kind":"categorical","categories":["u","v","w"]},
                           {"name":"r","kind":"continuous","bins":4}]}"#,
        );
        let d = ingest_reader("c,r\nu,0.1\nw,3.5\nv,2.0\n".as_bytes(), &s).unwrap();
        let echo = serde_json::to_string(d.schema()).unwrap();
        let respec: SchemaSpec = serde_json::from_str(&echo).unwrap();
        let mut out = Vec::new();
        write_csv_to(&d, &mut out).unwrap();
        let again = ingest_reader(out.as_slice(), &respec).unwrap();
        assert_eq!(again.values(), d.values());
        assert_eq!(respec.to_discrete_schema().unwrap().cardinalities(), vec![3, 4]);
    }
}
