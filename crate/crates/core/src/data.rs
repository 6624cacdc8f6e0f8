//! Typed in-memory datasets: an ordinal response with categories `1..=k`
//! and a pool of metric, ordinal or binary covariates.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariableKind {
    Metric,
    Ordinal,
    Binary,
}

impl FromStr for VariableKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "metric" => Ok(VariableKind::Metric),
            "ordinal" => Ok(VariableKind::Ordinal),
            "binary" => Ok(VariableKind::Binary),
            other => Err(Error::InvalidOptions(format!(
                "unknown variable kind `{other}` (expected metric, ordinal or binary)"
            ))),
        }
    }
}

impl fmt::Display for VariableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VariableKind::Metric => "metric",
            VariableKind::Ordinal => "ordinal",
            VariableKind::Binary => "binary",
        };
        f.write_str(s)
    }
}

/// A covariate declaration. `column_index` is the position of the variable in
/// the dataset's covariate matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VariableKind,
    pub column_index: usize,
}

impl VariableSpec {
    pub fn new(name: impl Into<String>, kind: VariableKind, column_index: usize) -> Self {
        VariableSpec {
            name: name.into(),
            kind,
            column_index,
        }
    }
}

/// Parses a `name:kind[,name:kind...]` list. Column indices follow list order.
pub fn parse_variable_list(list: &str) -> Result<Vec<VariableSpec>> {
    let mut specs = Vec::new();
    for (idx, item) in list.split(',').map(str::trim).filter(|s| !s.is_empty()).enumerate() {
        let (name, kind) = item.split_once(':').ok_or_else(|| {
            Error::InvalidOptions(format!("variable `{item}` must be written as name:kind"))
        })?;
        let name = name.trim();
        if name.is_empty() {
            return Err(Error::InvalidOptions(format!("empty variable name in `{item}`")));
        }
        specs.push(VariableSpec::new(name, kind.parse()?, idx));
    }
    if specs.is_empty() {
        return Err(Error::InvalidOptions("at least one covariate is required".into()));
    }
    Ok(specs)
}

/// Covariate columns without a response, as used for prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    specs: Vec<VariableSpec>,
    columns: Vec<Vec<f64>>,
}

impl Covariates {
    pub fn new(specs: Vec<VariableSpec>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidData("at least one covariate is required".into()));
        }
        if specs.len() != columns.len() {
            return Err(Error::InvalidData(format!(
                "{} variable specs but {} columns",
                specs.len(),
                columns.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for (j, spec) in specs.iter().enumerate() {
            if !seen.insert(spec.name.as_str()) {
                return Err(Error::InvalidData(format!("duplicate variable name `{}`", spec.name)));
            }
            if spec.column_index != j {
                return Err(Error::InvalidData(format!(
                    "variable `{}` has column index {} but is listed at position {j}",
                    spec.name, spec.column_index
                )));
            }
        }
        let n = columns[0].len();
        for (spec, col) in specs.iter().zip(&columns) {
            if col.len() != n {
                return Err(Error::InvalidData(format!(
                    "column `{}` has {} values, expected {n}",
                    spec.name,
                    col.len()
                )));
            }
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::ingest(row + 1, &spec.name, "missing or non-finite value"));
            }
            if spec.kind == VariableKind::Binary {
                let distinct = distinct_sorted(col.iter().copied());
                if distinct.len() != 2 {
                    return Err(Error::ingest(
                        0,
                        &spec.name,
                        format!(
                            "binary variable must take exactly two distinct values, found {}",
                            distinct.len()
                        ),
                    ));
                }
            }
        }
        Ok(Covariates { specs, columns })
    }

    pub fn n(&self) -> usize {
        self.columns[0].len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn specs(&self) -> &[VariableSpec] {
        &self.specs
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn value(&self, row: usize, j: usize) -> f64 {
        self.columns[j][row]
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[row]).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }
}

/// Ordinal response plus covariates. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    k: usize,
    y: Vec<usize>,
    x: Covariates,
}

impl Dataset {
    /// Validates and assembles a dataset. `y` holds labels in `1..=k`; `k` is
    /// the largest label and every category must be observed.
    pub fn new(y: Vec<usize>, x: Covariates) -> Result<Self> {
        if y.len() != x.n() {
            return Err(Error::InvalidData(format!(
                "response has {} values but covariates have {} rows",
                y.len(),
                x.n()
            )));
        }
        let k = y.iter().copied().max().unwrap_or(0);
        if y.iter().any(|&label| label == 0) {
            return Err(Error::InvalidData("response labels must be >= 1".into()));
        }
        if k < 2 {
            return Err(Error::InvalidData("response needs at least two categories".into()));
        }
        let mut counts = vec![0usize; k];
        for &label in &y {
            counts[label - 1] += 1;
        }
        if let Some(r) = counts.iter().position(|&c| c == 0) {
            return Err(Error::ingest(0, "response", format!("category {} unobserved", r + 1)));
        }
        if y.len() < 2 * k {
            return Err(Error::InvalidData(format!(
                "need at least {} observations for {k} categories, got {}",
                2 * k,
                y.len()
            )));
        }
        Ok(Dataset { k, y, x })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn p(&self) -> usize {
        self.x.p()
    }

    pub fn y(&self) -> &[usize] {
        &self.y
    }

    pub fn covariates(&self) -> &Covariates {
        &self.x
    }

    pub fn specs(&self) -> &[VariableSpec] {
        self.x.specs()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        self.x.column(j)
    }

    pub fn category_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.k];
        for &label in &self.y {
            counts[label - 1] += 1;
        }
        counts
    }

    /// Human-readable notes on sparsely observed categories.
    pub fn warnings(&self) -> Vec<String> {
        self.category_counts()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c < SPARSE_CATEGORY_COUNT)
            .map(|(r, c)| format!("category {} has only {c} observation(s)", r + 1))
            .collect()
    }

    /// Returns a copy with column `j` replaced.
    pub fn with_column(&self, j: usize, values: Vec<f64>) -> Result<Self> {
        let mut columns = self.x.columns.clone();
        columns[j] = values;
        let x = Covariates::new(self.x.specs.clone(), columns)?;
        Dataset::new(self.y.clone(), x)
    }

    /// Writes the dataset as CSV with the response in the first column.
    pub fn write_csv<W: Write>(&self, response: &str, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header = vec![response.to_string()];
        header.extend(self.specs().iter().map(|s| s.name.clone()));
        writer.write_record(&header)?;
        for i in 0..self.n() {
            let mut record = vec![self.y[i].to_string()];
            record.extend((0..self.p()).map(|j| self.x.value(i, j).to_string()));
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }
}

const SPARSE_CATEGORY_COUNT: usize = 5;

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "NaN" | "nan" | "null" | "NULL" | ".")
}

fn parse_label(cell: &str) -> Option<usize> {
    if let Ok(v) = cell.parse::<i64>() {
        return usize::try_from(v).ok();
    }
    let v = cell.parse::<f64>().ok()?;
    if v.fract() == 0.0 && v >= 0.0 && v < usize::MAX as f64 {
        Some(v as usize)
    } else {
        None
    }
}

struct Table {
    header: HashMap<String, usize>,
    rows: Vec<csv::StringRecord>,
}

fn read_table<R: Read>(input: R) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = reader
        .headers()?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.to_string(), i))
        .collect();
    let rows = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Table { header, rows })
}

fn read_columns(table: &Table, specs: &[VariableSpec]) -> Result<Covariates> {
    let mut columns = Vec::with_capacity(specs.len());
    for spec in specs {
        let col = *table
            .header
            .get(&spec.name)
            .ok_or_else(|| Error::ingest(0, &spec.name, "column not found in header"))?;
        let mut values = Vec::with_capacity(table.rows.len());
        for (i, record) in table.rows.iter().enumerate() {
            let cell = record.get(col).unwrap_or("");
            if is_missing(cell) {
                return Err(Error::ingest(i + 1, &spec.name, "missing value"));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::ingest(i + 1, &spec.name, format!("non-numeric value `{cell}`")))?;
            if !v.is_finite() {
                return Err(Error::ingest(i + 1, &spec.name, format!("non-finite value `{cell}`")));
            }
            values.push(v);
        }
        columns.push(values);
    }
    if table.rows.is_empty() {
        return Err(Error::ingest(0, "", "no data rows"));
    }
    Covariates::new(specs.to_vec(), columns)
}

fn read_response(table: &Table, response: &str) -> Result<Vec<usize>> {
    let col = *table
        .header
        .get(response)
        .ok_or_else(|| Error::ingest(0, response, "response column not found in header"))?;
    table
        .rows
        .iter()
        .enumerate()
        .map(|(i, record)| {
            let cell = record.get(col).unwrap_or("");
            if is_missing(cell) {
                return Err(Error::ingest(i + 1, response, "missing value"));
            }
            match parse_label(cell) {
                Some(label) if label >= 1 => Ok(label),
                _ => Err(Error::ingest(
                    i + 1,
                    response,
                    format!("response `{cell}` is not a category label >= 1"),
                )),
            }
        })
        .collect()
}

/// Reads a CSV file into a validated [`Dataset`].
pub fn ingest_csv(path: impl AsRef<Path>, response: &str, specs: &[VariableSpec]) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, response, specs)
}

pub fn ingest_reader<R: Read>(input: R, response: &str, specs: &[VariableSpec]) -> Result<Dataset> {
    let table = read_table(input)?;
    let x = read_columns(&table, specs)?;
    let y = read_response(&table, response)?;
    Dataset::new(y, x)
}

/// Reads covariate columns and, when present, the response column.
pub fn read_covariates_csv(
    path: impl AsRef<Path>,
    specs: &[VariableSpec],
    response: Option<&str>,
) -> Result<(Covariates, Option<Vec<usize>>)> {
    let table = read_table(std::fs::File::open(path)?)?;
    let x = read_columns(&table, specs)?;
    let y = match response {
        Some(name) if table.header.contains_key(name) => Some(read_response(&table, name)?),
        _ => None,
    };
    Ok((x, y))
}

pub(crate) fn distinct_sorted(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Split points `c` for variable `j` on the given rows: the sorted distinct
/// values, without the maximum, so that `x_j <= c` and `x_j > c` are both
/// nonempty.
pub fn candidate_thresholds(data: &Dataset, j: usize, rows: &[usize]) -> Vec<f64> {
    let col = data.column(j);
    let mut distinct = distinct_sorted(rows.iter().map(|&i| col[i]));
    distinct.pop();
    distinct
}
