//! Right-censored regression data: storage, CSV ingestion and covariate
//! standardization.
//!
//! A [`SurvivalDataset`] holds the observed times `y = min(T, C)`, the event
//! indicators `delta = I(T <= C)` and a row-major design matrix whose first
//! column is the intercept.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("non-numeric value in data row {row}, column `{col}`")]
    NonNumericCell { row: usize, col: String },
    #[error("non-finite value in data row {row}, column `{col}`")]
    NonFinite { row: usize, col: String },
    #[error("status in data row {0} is not 0 or 1")]
    InvalidStatus(usize),
    #[error("file has no data rows")]
    EmptyFile,
    #[error("non-intercept column {0} is constant and cannot be standardized")]
    ConstantColumn(usize),
    #[error("column 0 of the design must be the intercept (all ones)")]
    MissingIntercept,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Observations `(Y_i, delta_i, Z_i)`, immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDataset {
    y: Vec<f64>,
    delta: Vec<bool>,
    /// Row-major `n x p`; column 0 is the intercept.
    z: Vec<f64>,
    p: usize,
    names: Vec<String>,
}

impl SurvivalDataset {
    /// Builds a dataset from a full design matrix (intercept included).
    pub fn from_design(
        y: Vec<f64>,
        delta: Vec<bool>,
        z: Vec<f64>,
        p: usize,
    ) -> Result<Self, DataError> {
        let names = std::iter::once("intercept".to_string())
            .chain((1..p).map(|j| format!("z{j}")))
            .collect();
        Self::with_names(y, delta, z, p, names)
    }

    /// Builds a dataset from covariate rows without the intercept; a column
    /// of ones is prepended.
    pub fn from_covariates(
        y: Vec<f64>,
        delta: Vec<bool>,
        covariates: &[Vec<f64>],
    ) -> Result<Self, DataError> {
        let d = covariates.first().map_or(0, Vec::len);
        let mut z = Vec::with_capacity(covariates.len() * (d + 1));
        for row in covariates {
            if row.len() != d {
                return Err(DataError::Dimension("ragged covariate rows".into()));
            }
            z.push(1.0);
            z.extend_from_slice(row);
        }
        Self::from_design(y, delta, z, d + 1)
    }

    pub fn with_names(
        y: Vec<f64>,
        delta: Vec<bool>,
        z: Vec<f64>,
        p: usize,
        names: Vec<String>,
    ) -> Result<Self, DataError> {
        let n = y.len();
        if n == 0 {
            return Err(DataError::EmptyFile);
        }
        if p == 0 || delta.len() != n || z.len() != n * p || names.len() != p {
            return Err(DataError::Dimension(format!(
                "n={n}, delta={}, z={}, p={p}, names={}",
                delta.len(),
                z.len(),
                names.len()
            )));
        }
        if z.chunks_exact(p).any(|row| row[0] != 1.0) {
            return Err(DataError::MissingIntercept);
        }
        for (i, &v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(DataError::NonFinite { row: i + 1, col: "time".into() });
            }
        }
        for (k, &v) in z.iter().enumerate() {
            if !v.is_finite() {
                return Err(DataError::NonFinite { row: k / p + 1, col: names[k % p].clone() });
            }
        }
        Ok(Self { y, delta, z, p, names })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of design columns, intercept included.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn delta(&self) -> &[bool] {
        &self.delta
    }

    /// Row-major design matrix.
    pub fn design(&self) -> &[f64] {
        &self.z
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.p..(i + 1) * self.p]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn event_count(&self) -> usize {
        self.delta.iter().filter(|&&d| d).count()
    }

    pub fn censoring_rate(&self) -> f64 {
        1.0 - self.event_count() as f64 / self.n() as f64
    }

    /// Linear predictor `beta' Z_i`.
    pub fn predict(&self, i: usize, beta: &[f64]) -> f64 {
        dot(self.row(i), beta)
    }

    /// Non-intercept covariates as a row-major `n x (p - 1)` matrix.
    pub fn covariates(&self) -> Vec<f64> {
        self.z.chunks_exact(self.p).flat_map(|r| r[1..].iter().copied()).collect()
    }

    /// Dataset made of the given rows (repeats allowed).
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut y = Vec::with_capacity(rows.len());
        let mut delta = Vec::with_capacity(rows.len());
        let mut z = Vec::with_capacity(rows.len() * self.p);
        for &i in rows {
            y.push(self.y[i]);
            delta.push(self.delta[i]);
            z.extend_from_slice(self.row(i));
        }
        Self { y, delta, z, p: self.p, names: self.names.clone() }
    }

    /// Copy with every observed time shifted by `c`.
    pub fn shift_times(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.y.iter_mut().for_each(|v| *v += c);
        out
    }

    /// Writes `time,status,<covariates>` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time".to_string(), "status".to_string()];
        header.extend(self.names[1..].iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![format!("{:.16e}", self.y[i]), u8::from(self.delta[i]).to_string()];
            rec.extend(self.row(i)[1..].iter().map(|v| format!("{v:.16e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Which CSV columns hold the time, the status and the covariates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub time: String,
    pub status: String,
    /// `None` selects every remaining column in header order.
    pub covariates: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self { time: "time".into(), status: "status".into(), covariates: None }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SurvivalDataset, DataError> {
    parse_csv(File::open(path)?, schema)
}

/// Parses CSV text; rows are numbered from 1 (first data row) in errors.
pub fn parse_csv<R: Read>(input: R, schema: &CsvSchema) -> Result<SurvivalDataset, DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let time_col = find(&schema.time)?;
    let status_col = find(&schema.status)?;
    let cov_cols: Vec<usize> = match &schema.covariates {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_, _>>()?,
        None => (0..header.len()).filter(|&c| c != time_col && c != status_col).collect(),
    };

    let p = cov_cols.len() + 1;
    let mut y = Vec::new();
    let mut delta = Vec::new();
    let mut z = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = idx + 1;
        let cell = |c: usize| -> Result<f64, DataError> {
            let raw = record.get(c).unwrap_or("");
            let v: f64 = raw
                .parse()
                .map_err(|_| DataError::NonNumericCell { row, col: header[c].clone() })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(DataError::NonFinite { row, col: header[c].clone() })
            }
        };
        y.push(cell(time_col)?);
        let status = cell(status_col)?;
        delta.push(match status {
            s if s == 1.0 => true,
            s if s == 0.0 => false,
            _ => return Err(DataError::InvalidStatus(row)),
        });
        z.push(1.0);
        for &c in &cov_cols {
            z.push(cell(c)?);
        }
    }
    if y.is_empty() {
        return Err(DataError::EmptyFile);
    }
    let names = std::iter::once("intercept".to_string())
        .chain(cov_cols.iter().map(|&c| header[c].clone()))
        .collect();
    SurvivalDataset::with_names(y, delta, z, p, names)
}

/// Per-column location and scale used to standardize the non-intercept
/// covariates (population standard deviation, divisor `n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardization {
    pub fn fit(data: &SurvivalDataset) -> Result<Self, DataError> {
        let n = data.n() as f64;
        let d = data.p() - 1;
        let mut means = vec![0.0; d];
        let mut sds = vec![0.0; d];
        for j in 0..d {
            let mean = (0..data.n()).map(|i| data.row(i)[j + 1]).sum::<f64>() / n;
            let var = (0..data.n()).map(|i| (data.row(i)[j + 1] - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if !(sd > 0.0) || sd <= 1e-12 * mean.abs() {
                return Err(DataError::ConstantColumn(j + 1));
            }
            means[j] = mean;
            sds[j] = sd;
        }
        Ok(Self { means, sds })
    }

    pub fn apply(&self, data: &SurvivalDataset) -> SurvivalDataset {
        let mut out = data.clone();
        let p = out.p;
        for row in out.z.chunks_exact_mut(p) {
            for j in 1..p {
                row[j] = (row[j] - self.means[j - 1]) / self.sds[j - 1];
            }
        }
        out
    }

    /// Maps coefficients fitted on the standardized design back to the
    /// original covariate scale.
    pub fn to_original(&self, gamma: &[f64]) -> Vec<f64> {
        let mut beta = gamma.to_vec();
        for j in 1..gamma.len() {
            beta[j] = gamma[j] / self.sds[j - 1];
            beta[0] -= gamma[j] * self.means[j - 1] / self.sds[j - 1];
        }
        beta
    }

    /// Inverse of [`Standardization::to_original`].
    pub fn to_standardized(&self, beta: &[f64]) -> Vec<f64> {
        let mut gamma = beta.to_vec();
        for j in 1..beta.len() {
            gamma[j] = beta[j] * self.sds[j - 1];
            gamma[0] += beta[j] * self.means[j - 1];
        }
        gamma
    }
}

pub fn standardize(data: &SurvivalDataset) -> Result<(SurvivalDataset, Standardization), DataError> {
    let s = Standardization::fit(data)?;
    Ok((s.apply(data), s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> CsvSchema {
        CsvSchema::default()
    }

    #[test]
    fn parses_three_rows_with_intercept() {
        let text = "time,status,z1\n1,1,0.1\n2,0,0.2\n3,1,0.3\n";
        let d = parse_csv(text.as_bytes(), &schema()).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.p(), 2);
        assert!((0..3).all(|i| d.row(i)[0] == 1.0));
        assert_eq!(d.y(), &[1.0, 2.0, 3.0]);
        assert_eq!(d.delta(), &[true, false, true]);
        assert_eq!(d.row(1)[1], 0.2);
        assert_eq!(d.names(), &["intercept", "z1"]);
    }

    #[test]
    fn status_two_is_rejected() {
        let text = "time,status,z1\n1,1,0.1\n2,2,0.2\n";
        assert!(matches!(parse_csv(text.as_bytes(), &schema()), Err(DataError::InvalidStatus(2))));
    }

    #[test]
    fn empty_body_is_rejected() {
        let text = "time,status,z1\n";
        assert!(matches!(parse_csv(text.as_bytes(), &schema()), Err(DataError::EmptyFile)));
        assert!(matches!(parse_csv("".as_bytes(), &schema()), Err(DataError::MissingColumn(_))));
    }

    #[test]
    fn missing_and_non_numeric_columns() {
        let text = "t,status,z1\n1,1,0.1\n";
        assert!(matches!(parse_csv(text.as_bytes(), &schema()), Err(DataError::MissingColumn(c)) if c == "time"));
        let text = "time,status,z1\n1,1,abc\n";
        match parse_csv(text.as_bytes(), &schema()) {
            Err(DataError::NonNumericCell { row, col }) => {
                assert_eq!(row, 1);
                assert_eq!(col, "z1");
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = "time,status,z1\n1,1,inf\n";
        assert!(matches!(parse_csv(text.as_bytes(), &schema()), Err(DataError::NonFinite { .. })));
    }

    #[test]
    fn explicit_covariate_selection() {
        let text = "a,time,b,status\n9,1,0.5,1\n8,2,0.6,0\n";
        let s = CsvSchema { covariates: Some(vec!["b".into()]), ..schema() };
        let d = parse_csv(text.as_bytes(), &s).unwrap();
        assert_eq!(d.p(), 2);
        assert_eq!(d.row(0), &[1.0, 0.5]);
    }

    #[test]
    fn two_point_standardization() {
        let d = SurvivalDataset::from_covariates(vec![1.0, 2.0], vec![true, true], &[vec![0.0], vec![2.0]])
            .unwrap();
        let (s, st) = standardize(&d).unwrap();
        assert_eq!(s.row(0), &[1.0, -1.0]);
        assert_eq!(s.row(1), &[1.0, 1.0]);
        assert_eq!(st.means, vec![1.0]);
        assert_eq!(st.sds, vec![1.0]);
        assert_eq!(s.y(), d.y());
    }

    #[test]
    fn constant_column_is_rejected() {
        let d = SurvivalDataset::from_covariates(
            vec![1.0, 2.0, 3.0],
            vec![true; 3],
            &[vec![5.0], vec![5.0], vec![5.0]],
        )
        .unwrap();
        assert!(matches!(standardize(&d), Err(DataError::ConstantColumn(1))));
    }

    #[test]
    fn standardized_column_is_fixed_point() {
        let d = SurvivalDataset::from_covariates(
            vec![1.0, 2.0, 3.0, 4.0],
            vec![true; 4],
            &[vec![-1.0], vec![-1.0], vec![1.0], vec![1.0]],
        )
        .unwrap();
        let (s, _) = standardize(&d).unwrap();
        for i in 0..4 {
            assert!((s.row(i)[1] - d.row(i)[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn coefficient_maps_are_inverse() {
        let st = Standardization { means: vec![0.3, -2.0], sds: vec![0.5, 4.0] };
        let beta = vec![1.0, 2.0, -3.0];
        let back = st.to_original(&st.to_standardized(&beta));
        for (a, b) in beta.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_design_without_intercept() {
        let r = SurvivalDataset::from_design(vec![1.0], vec![true], vec![2.0, 1.0], 2);
        assert!(matches!(r, Err(DataError::MissingIntercept)));
    }
}
