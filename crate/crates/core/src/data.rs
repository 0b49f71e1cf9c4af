//! Data model shared by every estimator: the validated survival sample, the
//! orthonormal direction matrix and its block-identity form, plus CSV I/O.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdrError};

/// Tolerance on `‖BᵀB − I‖_max` for a matrix to count as orthonormal.
pub const ORTHO_TOL: f64 = 1e-10;

/// A right-censored sample `(X_i, Y_i, δ_i)`, `i = 1..n`.
///
/// Immutable after construction. Covariates are kept both as an `n × p`
/// matrix and as a row-major buffer for the kernel loops.
#[derive(Clone, Debug)]
pub struct SurvivalDataset {
    x: DMatrix<f64>,
    x_rows: Vec<f64>,
    y: Vec<f64>,
    delta: Vec<bool>,
    names: Option<Vec<String>>,
}

impl SurvivalDataset {
    pub fn new(
        x: DMatrix<f64>,
        y: Vec<f64>,
        delta: Vec<bool>,
        names: Option<Vec<String>>,
    ) -> Result<Self> {
        let (n, p) = x.shape();
        if n < 2 {
            return Err(SdrError::Validation(format!("need n >= 2 observations, got {n}")));
        }
        if p < 1 {
            return Err(SdrError::Validation("need at least one covariate".into()));
        }
        if y.len() != n || delta.len() != n {
            return Err(SdrError::Dimension(format!(
                "x has {n} rows but y has {} and delta has {}",
                y.len(),
                delta.len()
            )));
        }
        if let Some(names) = &names {
            if names.len() != p {
                return Err(SdrError::Dimension(format!(
                    "{} covariate names for {p} columns",
                    names.len()
                )));
            }
        }
        for (i, &yi) in y.iter().enumerate() {
            if !yi.is_finite() || yi <= 0.0 {
                return Err(SdrError::Validation(format!(
                    "row {}: observed time must be finite and > 0, got {yi}",
                    i + 1
                )));
            }
        }
        for i in 0..n {
            for k in 0..p {
                if !x[(i, k)].is_finite() {
                    return Err(SdrError::Validation(format!(
                        "row {}: covariate {} is not finite",
                        i + 1,
                        k + 1
                    )));
                }
            }
        }
        if !delta.iter().any(|&d| d) {
            return Err(SdrError::Validation(
                "no observed failures (every delta is 0)".into(),
            ));
        }
        let mut x_rows = Vec::with_capacity(n * p);
        for i in 0..n {
            x_rows.extend(x.row(i).iter());
        }
        Ok(Self { x, x_rows, y, delta, names })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Covariate row `i` as a contiguous slice.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.x_rows[i * p..(i + 1) * p]
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn delta(&self) -> &[bool] {
        &self.delta
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn n_events(&self) -> usize {
        self.delta.iter().filter(|&&d| d).count()
    }

    pub fn censoring_fraction(&self) -> f64 {
        1.0 - self.n_events() as f64 / self.n() as f64
    }

    /// Projected covariates `XB` (`n × d`).
    pub fn project(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        &self.x * b
    }

    /// Rows `indices` (with repetition) as a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let p = self.p();
        let x = DMatrix::from_fn(indices.len(), p, |r, c| self.x[(indices[r], c)]);
        let y = indices.iter().map(|&i| self.y[i]).collect();
        let delta = indices.iter().map(|&i| self.delta[i]).collect();
        Self::new(x, y, delta, self.names.clone())
    }

    /// Label of covariate `k`, defaulting to `X{k+1}`.
    pub fn name(&self, k: usize) -> String {
        match &self.names {
            Some(n) => n[k].clone(),
            None => format!("X{}", k + 1),
        }
    }

    /// Writes the dataset in the same layout [`load_csv`] reads with
    /// `ColumnSpec::new("time", "status")`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string(), "status".to_string()];
        header.extend((0..self.p()).map(|k| self.name(k)));
        w.write_record(&header).map_err(csv_write_err)?;
        for i in 0..self.n() {
            let mut rec = vec![format!("{:?}", self.y[i]), (self.delta[i] as u8).to_string()];
            rec.extend(self.row(i).iter().map(|v| format!("{v:?}")));
            w.write_record(&rec).map_err(csv_write_err)?;
        }
        w.flush().map_err(|e| SdrError::Validation(format!("csv write failed: {e}")))?;
        Ok(())
    }
}

fn csv_write_err(e: csv::Error) -> SdrError {
    SdrError::Validation(format!("csv write failed: {e}"))
}

/// Which columns of a CSV file carry time, status and covariates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub time: String,
    pub status: String,
    /// Covariate columns in order; `None` means every other column.
    pub covariates: Option<Vec<String>>,
}

impl ColumnSpec {
    pub fn new(time: impl Into<String>, status: impl Into<String>) -> Self {
        Self { time: time.into(), status: status.into(), covariates: None }
    }
}

/// Reads a header-first CSV file into a validated dataset.
///
/// Rows with a missing field are rejected. Row numbers in errors count data
/// rows from 1 (the header is not counted).
pub fn load_csv(path: impl AsRef<Path>, spec: &ColumnSpec) -> Result<SurvivalDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|source| SdrError::Io { path: path.to_path_buf(), source })?;
    read_csv(file, spec)
}

pub fn read_csv<R: std::io::Read>(reader: R, spec: &ColumnSpec) -> Result<SurvivalDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| SdrError::Parse { row: 0, column: String::new(), message: e.to_string() })?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let find = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| SdrError::Parse {
            row: 0,
            column: name.to_string(),
            message: "column not found in header".into(),
        })
    };
    let time_col = find(&spec.time)?;
    let status_col = find(&spec.status)?;
    let cov_cols: Vec<usize> = match &spec.covariates {
        Some(names) => names.iter().map(|c| find(c)).collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|&c| c != time_col && c != status_col).collect(),
    };
    if cov_cols.is_empty() {
        return Err(SdrError::Validation("no covariate columns selected".into()));
    }
    let names: Vec<String> = cov_cols.iter().map(|&c| headers[c].clone()).collect();

    let mut y = Vec::new();
    let mut delta = Vec::new();
    let mut values = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let row = idx + 1;
        let rec = rec.map_err(|e| SdrError::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let field = |c: usize| -> Result<&str> {
            match rec.get(c).map(str::trim) {
                Some(s) if !s.is_empty() => Ok(s),
                _ => Err(SdrError::Parse {
                    row,
                    column: headers[c].clone(),
                    message: "missing value".into(),
                }),
            }
        };
        let num = |c: usize| -> Result<f64> {
            let s = field(c)?;
            s.parse::<f64>().map_err(|_| SdrError::Parse {
                row,
                column: headers[c].clone(),
                message: format!("'{s}' is not a number"),
            })
        };
        y.push(num(time_col)?);
        let status = field(status_col)?;
        delta.push(match status {
            "0" => false,
            "1" => true,
            other => {
                return Err(SdrError::Validation(format!(
                    "row {row}: status column '{}' must be 0 or 1, got '{other}'",
                    spec.status
                )))
            }
        });
        for &c in &cov_cols {
            values.push(num(c)?);
        }
    }
    let n = y.len();
    let x = DMatrix::from_row_slice(n, cov_cols.len(), &values);
    SurvivalDataset::new(x, y, delta, Some(names))
}

/// Per-column location/scale removed by [`standardize`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

/// Centers every covariate to mean 0 and scales it to sample sd 1.
pub fn standardize(ds: &SurvivalDataset) -> Result<(SurvivalDataset, Standardization)> {
    let n = ds.n();
    let mut x = ds.x().clone();
    let mut means = Vec::with_capacity(ds.p());
    let mut sds = Vec::with_capacity(ds.p());
    for k in 0..ds.p() {
        let mut col = x.column_mut(k);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        if !(sd > 0.0) || sd <= f64::EPSILON * mean.abs().max(1.0) {
            return Err(SdrError::ConstantColumn(ds.name(k)));
        }
        col.apply(|v| *v = (*v - mean) / sd);
        means.push(mean);
        sds.push(sd);
    }
    let out = SurvivalDataset::new(x, ds.y.clone(), ds.delta.clone(), ds.names.clone())?;
    Ok((out, Standardization { means, sds }))
}

/// Observations sorted by time, with the tie structure needed to evaluate
/// risk-set sums `Σ_j I(Y_j ≥ u) w_j` as suffix sums.
///
/// At equal times events come before censorings, then original index
/// breaks the tie. All indices are 0-based.
#[derive(Clone, Debug)]
pub struct RiskOrder {
    /// `order[pos]` is the original index of the observation at sorted `pos`.
    pub order: Vec<usize>,
    /// Inverse permutation: `position[i]` is the sorted position of `i`.
    pub position: Vec<usize>,
    /// `group_start[pos]` is the first sorted position with the same time,
    /// so that the risk set at `Y_{order[pos]}` is `group_start[pos]..n`.
    pub group_start: Vec<usize>,
    /// Sorted positions of the events, ascending.
    pub events: Vec<usize>,
}

impl RiskOrder {
    pub fn new(ds: &SurvivalDataset) -> Self {
        let n = ds.n();
        let (y, delta) = (ds.y(), ds.delta());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            y[a].total_cmp(&y[b]).then(delta[b].cmp(&delta[a])).then(a.cmp(&b))
        });
        let mut position = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            position[i] = pos;
        }
        let mut group_start = vec![0; n];
        for pos in 1..n {
            group_start[pos] =
                if y[order[pos]] == y[order[pos - 1]] { group_start[pos - 1] } else { pos };
        }
        let events = (0..n).filter(|&pos| delta[order[pos]]).collect();
        Self { order, position, group_start, events }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Original indices of the events in time order.
    pub fn event_subjects(&self) -> impl Iterator<Item = usize> + '_ {
        self.events.iter().map(|&pos| self.order[pos])
    }

    /// First sorted position of the risk set `{j : Y_j ≥ Y_i}`.
    #[inline]
    pub fn risk_start(&self, i: usize) -> usize {
        self.group_start[self.position[i]]
    }
}

/// Convenience wrapper returning the sorted permutation and event positions.
pub fn risk_set_order(ds: &SurvivalDataset) -> (Vec<usize>, Vec<usize>) {
    let r = RiskOrder::new(ds);
    (r.order, r.events)
}

/// `‖BᵀB − I‖_max`.
pub fn orthonormality_error(b: &DMatrix<f64>) -> f64 {
    let g = b.transpose() * b;
    let d = g.nrows();
    let mut worst: f64 = 0.0;
    for r in 0..d {
        for c in 0..d {
            let target = if r == c { 1.0 } else { 0.0 };
            worst = worst.max((g[(r, c)] - target).abs());
        }
    }
    worst
}

/// A `p × d` basis with orthonormal columns, `1 ≤ d < p`.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionMatrix(DMatrix<f64>);

impl DirectionMatrix {
    /// Wraps `b`, rejecting it unless `‖BᵀB − I‖_max ≤ 1e−10`.
    pub fn new(b: DMatrix<f64>) -> Result<Self> {
        Self::check_shape(&b)?;
        let err = orthonormality_error(&b);
        if !(err <= ORTHO_TOL) {
            return Err(SdrError::Validation(format!(
                "direction matrix is not orthonormal (max |BᵀB − I| = {err:e})"
            )));
        }
        Ok(Self(b))
    }

    /// Orthonormalizes an arbitrary full-rank basis (thin QR).
    pub fn from_basis(b: &DMatrix<f64>) -> Result<Self> {
        Self::check_shape(b)?;
        let d = b.ncols();
        let qr = b.clone().qr();
        let r = qr.r();
        let scale = r.diagonal().amax().max(f64::MIN_POSITIVE);
        if (0..d).any(|k| r[(k, k)].abs() <= 1e-12 * scale) {
            return Err(SdrError::Numerical("basis is rank deficient".into()));
        }
        let q = qr.q();
        // Re-orthonormalize once more so the result meets ORTHO_TOL comfortably.
        let q = q.qr().q();
        Self::new(q)
    }

    fn check_shape(b: &DMatrix<f64>) -> Result<()> {
        let (p, d) = b.shape();
        if d < 1 || d >= p {
            return Err(SdrError::Dimension(format!("need 1 <= d < p, got p = {p}, d = {d}")));
        }
        Ok(())
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn p(&self) -> usize {
        self.0.nrows()
    }

    pub fn d(&self) -> usize {
        self.0.ncols()
    }

    /// Flips the sign so the largest-magnitude coordinate is positive (d = 1
    /// only; higher d is returned unchanged).
    pub fn with_sign_convention(mut self) -> Self {
        if self.d() == 1 {
            let k = self.0.column(0).iamax();
            if self.0[(k, 0)] < 0.0 {
                self.0.neg_mut();
            }
        }
        self
    }
}

/// `B` re-based so the rows `anchor_rows` form `I_d`; the remaining entries
/// are the identifiable free parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedDirection {
    pub b_norm: DMatrix<f64>,
    pub anchor_rows: Vec<usize>,
}

impl NormalizedDirection {
    /// `vecl(B)`: non-anchor rows, column by column.
    pub fn free_parameters(&self) -> Vec<f64> {
        let (p, d) = self.b_norm.shape();
        let mut out = Vec::with_capacity((p - d) * d);
        for c in 0..d {
            for r in 0..p {
                if !self.anchor_rows.contains(&r) {
                    out.push(self.b_norm[(r, c)]);
                }
            }
        }
        out
    }

    /// `(row, column)` of each entry of [`Self::free_parameters`].
    pub fn free_parameter_index(&self) -> Vec<(usize, usize)> {
        let (p, d) = self.b_norm.shape();
        (0..d)
            .flat_map(|c| (0..p).map(move |r| (r, c)))
            .filter(|(r, _)| !self.anchor_rows.contains(r))
            .collect()
    }
}

/// The four estimators of the central subspace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Forward,
    CpSir,
    IrCp,
    IrSemi,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] =
        [EstimatorKind::Forward, EstimatorKind::CpSir, EstimatorKind::IrCp, EstimatorKind::IrSemi];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Forward => "forward",
            EstimatorKind::CpSir => "cpsir",
            EstimatorKind::IrCp => "ircp",
            EstimatorKind::IrSemi => "irsemi",
        }
    }

    /// Length of the stacked moment vector for `p` covariates.
    pub fn moment_len(self, p: usize) -> usize {
        match self {
            EstimatorKind::Forward => p,
            _ => p * p,
        }
    }

    /// Rejects structural dimensions the kind cannot handle.
    pub fn check_dimension(self, d: usize) -> Result<()> {
        if self == EstimatorKind::Forward && d != 1 {
            return Err(SdrError::KindMismatch { kind: "forward regression", d });
        }
        Ok(())
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = SdrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "forward" => Ok(EstimatorKind::Forward),
            "cpsir" => Ok(EstimatorKind::CpSir),
            "ircp" => Ok(EstimatorKind::IrCp),
            "irsemi" => Ok(EstimatorKind::IrSemi),
            other => Err(SdrError::Config(format!("unknown method '{other}'"))),
        }
    }
}
