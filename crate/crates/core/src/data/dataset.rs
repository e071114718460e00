use std::fs::File;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Design `theta` (n x d), locations (m x p) and responses (n x m).
///
/// Missing responses are stored as `NaN`. Columns with no available entry
/// are flagged in [`SimulationDataset::empty_columns`] and dropped before
/// modeling.
#[derive(Debug, Clone)]
pub struct SimulationDataset {
    theta: DMatrix<f64>,
    locations: DMatrix<f64>,
    responses: DMatrix<f64>,
    n_available: usize,
}

impl SimulationDataset {
    pub fn new(
        theta: DMatrix<f64>,
        locations: DMatrix<f64>,
        responses: DMatrix<f64>,
    ) -> Result<Self> {
        let (n, m) = responses.shape();
        if n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 runs, got {n}")));
        }
        if m < 1 {
            return Err(Error::InvalidInput("responses have no columns".into()));
        }
        if theta.nrows() != n {
            return Err(Error::Dimension(format!(
                "theta has {} rows but responses have {n}",
                theta.nrows()
            )));
        }
        if locations.nrows() != m {
            return Err(Error::Dimension(format!(
                "{} locations but responses have {m} columns",
                locations.nrows()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("theta contains non-finite values".into()));
        }
        for i in 0..n {
            for k in (i + 1)..n {
                if theta.row(i) == theta.row(k) {
                    return Err(Error::InvalidInput(format!(
                        "theta rows {i} and {k} are identical"
                    )));
                }
            }
        }
        // infinities are treated like any other failed response
        let responses = responses.map(|v| if v.is_finite() { v } else { f64::NAN });
        let n_available = responses.iter().filter(|v| !v.is_nan()).count();
        Ok(SimulationDataset {
            theta,
            locations,
            responses,
            n_available,
        })
    }

    pub fn n_runs(&self) -> usize {
        self.responses.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.responses.ncols()
    }

    pub fn param_dim(&self) -> usize {
        self.theta.ncols()
    }

    /// Total number of available (non-missing) responses, N.
    pub fn n_available(&self) -> usize {
        self.n_available
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn locations(&self) -> &DMatrix<f64> {
        &self.locations
    }

    pub fn responses(&self) -> &DMatrix<f64> {
        &self.responses
    }

    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        self.responses[(i, j)].is_nan()
    }

    /// Observed column indices J(i), ascending (zero-based).
    pub fn observed_indices(&self, i: usize) -> Result<Vec<usize>> {
        if i >= self.n_runs() {
            return Err(Error::InvalidInput(format!(
                "row {i} out of range for {} runs",
                self.n_runs()
            )));
        }
        Ok((0..self.n_outputs())
            .filter(|&j| !self.is_missing(i, j))
            .collect())
    }

    pub fn complete_rows(&self) -> Vec<usize> {
        (0..self.n_runs())
            .filter(|&i| self.responses.row(i).iter().all(|v| !v.is_nan()))
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        self.n_available == self.responses.len()
    }

    /// Columns with no available entry at all.
    pub fn empty_columns(&self) -> Vec<usize> {
        (0..self.n_outputs())
            .filter(|&j| self.responses.column(j).iter().all(|v| v.is_nan()))
            .collect()
    }

    pub fn missing_fraction(&self) -> f64 {
        1.0 - self.n_available as f64 / self.responses.len() as f64
    }

    /// Restrict to a subset of columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<SimulationDataset> {
        let responses = self.responses.select_columns(cols);
        let locations = self.locations.select_rows(cols);
        SimulationDataset::new(self.theta.clone(), locations, responses)
    }

    /// Restrict to a subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<SimulationDataset> {
        SimulationDataset::new(
            self.theta.select_rows(rows),
            self.locations.clone(),
            self.responses.select_rows(rows),
        )
    }

    /// Same design and locations with replaced responses.
    pub fn with_responses(&self, responses: DMatrix<f64>) -> Result<SimulationDataset> {
        SimulationDataset::new(self.theta.clone(), self.locations.clone(), responses)
    }
}

/// Missing-value tokens: empty field, `nan` or `na` in any case.
pub fn is_missing_token(field: &str) -> bool {
    let t = field.trim();
    t.is_empty() || t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("na")
}

/// Read a numeric CSV into a matrix; missing tokens become `NaN`.
///
/// A first line that contains a non-numeric, non-missing field is taken as
/// a header and skipped. Every data row must have the same number of fields.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            path: path.into(),
            line: e.position().map(|p| p.line()).unwrap_or(idx as u64 + 1),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(idx as u64 + 1);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let parsed: Vec<Option<f64>> = record
            .iter()
            .map(|f| {
                if is_missing_token(f) {
                    Some(f64::NAN)
                } else {
                    f.parse::<f64>().ok()
                }
            })
            .collect();
        if parsed.iter().any(Option::is_none) {
            if rows.is_empty() && width.is_none() {
                // header line
                width = Some(record.len());
                continue;
            }
            let bad = record
                .iter()
                .find(|f| !is_missing_token(f) && f.parse::<f64>().is_err())
                .unwrap_or("");
            return Err(Error::Parse {
                path: path.into(),
                line,
                message: format!("non-numeric field {bad:?}"),
            });
        }
        match width {
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    path: path.into(),
                    line,
                    message: format!("row {} has {} fields, expected {w}", rows.len() + 1, record.len()),
                })
            }
            _ => width = Some(record.len()),
        }
        rows.push(parsed.into_iter().map(Option::unwrap).collect());
    }
    let cols = width.unwrap_or(0);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
}

/// Load `theta.csv`, `locations.csv` and `responses.csv`.
///
/// Only the first n rows of the theta file are used, n being the number of
/// response rows.
pub fn load_dataset(theta: &Path, locations: &Path, responses: &Path) -> Result<SimulationDataset> {
    let f = read_matrix_csv(responses)?;
    let t = read_matrix_csv(theta)?;
    let x = read_matrix_csv(locations)?;
    if t.nrows() < f.nrows() {
        return Err(Error::Dimension(format!(
            "{} has {} rows but {} has {}",
            theta.display(),
            t.nrows(),
            responses.display(),
            f.nrows()
        )));
    }
    if t.iter().any(|v| v.is_nan()) || x.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput(
            "theta and locations may not contain missing values".into(),
        ));
    }
    let t = t.rows(0, f.nrows()).into_owned();
    let ds = SimulationDataset::new(t, x, f)?;
    let empty = ds.empty_columns();
    if !empty.is_empty() {
        log::warn!(
            "{}: {} all-missing column(s) {:?} will be excluded from modeling",
            responses.display(),
            empty.len(),
            empty
        );
    }
    Ok(ds)
}
