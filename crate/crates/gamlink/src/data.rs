//! Observation loading and rescaling of covariates onto `[-1, 1]^d`.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("empty data: file contains a header but no rows")]
    Empty,
    #[error("non-numeric cell at row {row}, column '{column}': '{value}'")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("missing value at row {row}, column '{column}'")]
    Missing { row: usize, column: String },
    #[error("column '{0}' not found in header")]
    UnknownColumn(String),
    #[error("column '{0}' is constant (max equals min); cannot rescale")]
    ConstantColumn(String),
    #[error("covariate entry {value} at row {row}, column {column} outside [-1, 1]")]
    OutOfCube {
        row: usize,
        column: usize,
        value: f64,
    },
    #[error("need at least 2 covariate columns, got {0}")]
    TooFewCovariates(usize),
}

/// Which columns of a CSV file hold the response and the covariates.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub response: String,
    pub covariates: Vec<String>,
}

/// A parsed numeric table, before rescaling.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub y: Vec<f64>,
    /// Covariates stored by column.
    pub x_columns: Vec<Vec<f64>>,
    pub covariate_names: Vec<String>,
}

/// The monotone affine map that carried one original covariate column onto
/// `[-1, 1]`: empirical min maps to -1, empirical max to +1.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RescaleRecord {
    pub min: f64,
    pub max: f64,
}

impl RescaleRecord {
    /// Original scale -> cube scale.
    pub fn to_cube(&self, v: f64) -> f64 {
        2.0 * (v - self.min) / (self.max - self.min) - 1.0
    }

    /// Cube scale -> original scale.
    pub fn to_original(&self, u: f64) -> f64 {
        self.min + 0.5 * (u + 1.0) * (self.max - self.min)
    }
}

/// The working sample: `n` observations of `(Y, X)` with `X` on the cube.
///
/// Immutable after construction.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: Vec<f64>,
    /// Row-major `n x d`.
    x: Vec<f64>,
    n: usize,
    d: usize,
    rescale: Vec<RescaleRecord>,
}

impl Dataset {
    /// Rescales a raw table onto the cube and records the per-column maps.
    pub fn from_raw(raw: &RawTable) -> Result<Self, DataError> {
        let d = raw.x_columns.len();
        if d < 2 {
            return Err(DataError::TooFewCovariates(d));
        }
        let n = raw.y.len();
        let mut rescale = Vec::with_capacity(d);
        for (j, col) in raw.x_columns.iter().enumerate() {
            let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !(max > min) {
                return Err(DataError::ConstantColumn(
                    raw.covariate_names
                        .get(j)
                        .cloned()
                        .unwrap_or_else(|| format!("x{j}")),
                ));
            }
            rescale.push(RescaleRecord { min, max });
        }
        let mut x = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                // Clamp: the endpoints map exactly, interior stays interior;
                // the clamp only absorbs last-bit rounding.
                x[i * d + j] = rescale[j].to_cube(raw.x_columns[j][i]).clamp(-1.0, 1.0);
            }
        }
        Ok(Self {
            y: raw.y.clone(),
            x,
            n,
            d,
            rescale,
        })
    }

    /// Builds a dataset whose covariates already live on the cube (synthetic
    /// designs). The rescale records become the identity on `[-1, 1]`.
    pub fn from_cube(y: Vec<f64>, x_rows: Vec<Vec<f64>>) -> Result<Self, DataError> {
        let n = y.len();
        assert_eq!(n, x_rows.len(), "response/covariate length mismatch");
        let d = x_rows.first().map_or(0, Vec::len);
        if d < 2 {
            return Err(DataError::TooFewCovariates(d));
        }
        let mut x = vec![0.0; n * d];
        for (i, row) in x_rows.iter().enumerate() {
            assert_eq!(row.len(), d, "ragged covariate row");
            for (j, &v) in row.iter().enumerate() {
                if !(-1.0..=1.0).contains(&v) {
                    return Err(DataError::OutOfCube {
                        row: i,
                        column: j,
                        value: v,
                    });
                }
                x[i * d + j] = v;
            }
        }
        Ok(Self {
            y,
            x,
            n,
            d,
            rescale: vec![RescaleRecord { min: -1.0, max: 1.0 }; d],
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    #[inline]
    pub fn x(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.d + j]
    }

    /// The `i`-th covariate row.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn rescale(&self) -> &[RescaleRecord] {
        &self.rescale
    }
}

/// Parses a CSV file with a header row into a numeric table.
///
/// Every schema column must exist, every cell must parse as a finite number,
/// and missing values are rejected.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<RawTable, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let headers: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let col_index = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))
    };
    let y_idx = col_index(&schema.response)?;
    let x_idx: Vec<usize> = schema
        .covariates
        .iter()
        .map(|c| col_index(c))
        .collect::<Result<_, _>>()?;

    let parse_cell = |row: usize, column: &str, value: &str| -> Result<f64, DataError> {
        if value.is_empty() {
            return Err(DataError::Missing {
                row,
                column: column.to_string(),
            });
        }
        value.parse::<f64>().map_err(|_| DataError::Parse {
            row,
            column: column.to_string(),
            value: value.to_string(),
        })
    };

    let mut y = Vec::new();
    let mut x_columns = vec![Vec::new(); x_idx.len()];
    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        // 1-based data row numbers, header excluded.
        let row = row_no + 1;
        y.push(parse_cell(row, &schema.response, &record[y_idx])?);
        for (slot, (&idx, name)) in x_columns
            .iter_mut()
            .zip(x_idx.iter().zip(&schema.covariates))
        {
            slot.push(parse_cell(row, name, &record[idx])?);
        }
    }
    if y.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(RawTable {
        y,
        x_columns,
        covariate_names: schema.covariates.clone(),
    })
}
