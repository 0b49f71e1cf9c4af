//! Kernel-smoothed nuisance quantities.
//!
//! Everything here is evaluated at observed event times only: the estimating
//! functions integrate against `dN`, which jumps only there. Risk-set sums
//! `Σ_j I(Y_j ≥ u) w_j` are computed as suffix sums over [`RiskOrder`].

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{RiskOrder, SurvivalDataset};
use crate::error::{Result, SdrError};

/// How a scalar width (slice width or time bandwidth) is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthRule {
    /// One-dimensional Silverman rule on the observed event times.
    SilvermanEvents,
    /// One-dimensional Silverman rule on all observed times.
    SilvermanAll,
    Fixed(f64),
}

impl WidthRule {
    pub fn resolve(self, ds: &SurvivalDataset) -> Result<f64> {
        let w = match self {
            WidthRule::SilvermanEvents => {
                let t: Vec<f64> = ds
                    .y()
                    .iter()
                    .zip(ds.delta())
                    .filter(|(_, &d)| d)
                    .map(|(&y, _)| y)
                    .collect();
                silverman_1d(&t)?
            }
            WidthRule::SilvermanAll => silverman_1d(ds.y())?,
            WidthRule::Fixed(w) => w,
        };
        if !(w > 0.0 && w.is_finite()) {
            return Err(SdrError::Config(format!("width must be positive and finite, got {w}")));
        }
        Ok(w)
    }
}

/// Bandwidth choices for one fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonparamConfig {
    /// Width of the slice `[u, u + w)` in the sliced mean difference.
    pub slice_width: WidthRule,
    /// Time bandwidth of the smoothed hazard.
    pub time_bandwidth: WidthRule,
}

impl Default for NonparamConfig {
    fn default() -> Self {
        Self { slice_width: WidthRule::SilvermanEvents, time_bandwidth: WidthRule::SilvermanEvents }
    }
}

fn sample_sd(values: impl Iterator<Item = f64> + Clone) -> (usize, f64) {
    let n = values.clone().count();
    let mean = values.clone().sum::<f64>() / n as f64;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (n, (ss / (n as f64 - 1.0)).sqrt())
}

/// Silverman's normal-reference factor `(4/(d+2))^{1/(d+4)} n^{-1/(d+4)}`.
pub fn silverman_factor(n: usize, d: usize) -> f64 {
    let d = d as f64;
    (4.0 / (d + 2.0)).powf(1.0 / (d + 4.0)) * (n as f64).powf(-1.0 / (d + 4.0))
}

/// Per-column Silverman bandwidths for the `n × d` projected covariates.
pub fn silverman_bandwidth(z: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (n, d) = z.shape();
    if n < 2 {
        return Err(SdrError::Validation("bandwidth needs n >= 2".into()));
    }
    let factor = silverman_factor(n, d);
    (0..d)
        .map(|k| {
            let (_, sd) = sample_sd(z.column(k).iter().copied());
            if sd > 0.0 && sd.is_finite() {
                Ok(factor * sd)
            } else {
                Err(SdrError::ConstantColumn(format!("projection {}", k + 1)))
            }
        })
        .collect()
}

pub fn silverman_1d(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(SdrError::Validation("bandwidth needs at least two values".into()));
    }
    let (n, sd) = sample_sd(values.iter().copied());
    if !(sd > 0.0) {
        return Err(SdrError::ConstantColumn("time".into()));
    }
    Ok(silverman_factor(n, 1) * sd)
}

/// `∏_k (h_k √(2π))⁻¹ exp(−u_k²/(2h_k²))`.
pub fn gaussian_product_kernel(u: &[f64], h: &[f64]) -> f64 {
    u.iter()
        .zip(h)
        .map(|(&uk, &hk)| (-(uk * uk) / (2.0 * hk * hk)).exp() / (hk * (2.0 * PI).sqrt()))
        .product()
}

#[inline]
fn gaussian_1d(u: f64, h: f64) -> f64 {
    (-(u * u) / (2.0 * h * h)).exp() / (h * (2.0 * PI).sqrt())
}

/// Bandwidths and the `n × n` kernel cache `K[i,j] = K_h(BᵀX_i − BᵀX_j)`
/// for one direction matrix.
#[derive(Clone, Debug)]
pub struct KernelPlan {
    pub h: Vec<f64>,
    pub time_bw: f64,
    pub slice_w: f64,
    n: usize,
    kernel: Vec<f64>,
}

impl KernelPlan {
    /// Silverman bandwidths on `XB`; scalar widths from `cfg`.
    pub fn build(ds: &SurvivalDataset, b: &DMatrix<f64>, cfg: &NonparamConfig) -> Result<Self> {
        let z = ds.project(b);
        let h = silverman_bandwidth(&z)?;
        let time_bw = cfg.time_bandwidth.resolve(ds)?;
        let slice_w = cfg.slice_width.resolve(ds)?;
        Self::from_projection(&z, h, time_bw, slice_w)
    }

    /// Explicit bandwidths, e.g. very large `h` for flat-kernel limits.
    pub fn with_bandwidths(
        ds: &SurvivalDataset,
        b: &DMatrix<f64>,
        h: Vec<f64>,
        time_bw: f64,
        slice_w: f64,
    ) -> Result<Self> {
        Self::from_projection(&ds.project(b), h, time_bw, slice_w)
    }

    pub fn from_projection(z: &DMatrix<f64>, h: Vec<f64>, time_bw: f64, slice_w: f64) -> Result<Self> {
        let (n, d) = z.shape();
        if h.len() != d {
            return Err(SdrError::Dimension(format!("{} bandwidths for d = {d}", h.len())));
        }
        if h.iter().chain([&time_bw, &slice_w]).any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(SdrError::Config("bandwidths must be positive and finite".into()));
        }
        // scaled coordinates, row-major
        let mut s = vec![0.0; n * d];
        for i in 0..n {
            for k in 0..d {
                s[i * d + k] = z[(i, k)] / h[k];
            }
        }
        let norm: f64 = h.iter().map(|hk| 1.0 / (hk * (2.0 * PI).sqrt())).product();
        let mut kernel = vec![0.0; n * n];
        for i in 0..n {
            kernel[i * n + i] = norm;
            let si = &s[i * d..(i + 1) * d];
            for j in (i + 1)..n {
                let sj = &s[j * d..(j + 1) * d];
                let mut q = 0.0;
                for k in 0..d {
                    let t = si[k] - sj[k];
                    q += t * t;
                }
                let v = norm * (-0.5 * q).exp();
                kernel[i * n + j] = v;
                kernel[j * n + i] = v;
            }
        }
        Ok(Self { h, time_bw, slice_w, n, kernel })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.h.len()
    }

    #[inline]
    pub fn kernel(&self, i: usize, j: usize) -> f64 {
        self.kernel[i * self.n + j]
    }

    #[inline]
    pub fn kernel_row(&self, i: usize) -> &[f64] {
        &self.kernel[i * self.n..(i + 1) * self.n]
    }
}

/// Scratch buffer of kernel-weighted suffix sums for one subject `i`:
/// `sums[pos] = Σ_{pos' ≥ pos} K[i, order[pos']] · (1, X_{order[pos']})`.
pub(crate) struct RiskSums {
    w: usize,
    /// Sorted covariate rows with a leading 1, `w = p + 1` wide.
    xw: Vec<f64>,
    sums: Vec<f64>,
}

// Branch-free suffix scan; a fixed width keeps the accumulator in registers.
fn scan_fixed<const W: usize>(krow: &[f64], order: &[usize], xw: &[f64], stop: usize, sums: &mut [f64]) {
    let (rows, _) = xw.as_chunks::<W>();
    let (out, _) = sums.as_chunks_mut::<W>();
    let mut acc = [0.0; W];
    for pos in (stop..order.len()).rev() {
        let k = krow[order[pos]];
        let r = &rows[pos];
        for j in 0..W {
            acc[j] += k * r[j];
        }
        out[pos] = acc;
    }
}

fn scan_dyn(w: usize, krow: &[f64], order: &[usize], xw: &[f64], stop: usize, sums: &mut [f64]) {
    let mut acc = vec![0.0; w];
    for pos in (stop..order.len()).rev() {
        let k = krow[order[pos]];
        for (a, &x) in acc.iter_mut().zip(&xw[pos * w..(pos + 1) * w]) {
            *a += k * x;
        }
        sums[pos * w..(pos + 1) * w].copy_from_slice(&acc);
    }
}

impl RiskSums {
    pub(crate) fn new(ds: &SurvivalDataset, order: &RiskOrder) -> Self {
        let (n, p) = (ds.n(), ds.p());
        let w = p + 1;
        let mut xw = Vec::with_capacity(n * w);
        for &j in &order.order {
            xw.push(1.0);
            xw.extend_from_slice(ds.row(j));
        }
        Self { w, xw, sums: vec![0.0; n * w] }
    }

    /// Fills positions `n-1` down to `stop` for subject `i`.
    pub(crate) fn fill(&mut self, order: &RiskOrder, plan: &KernelPlan, i: usize, stop: usize) {
        let krow = plan.kernel_row(i);
        let (o, xw, sums) = (&order.order[..], &self.xw[..], &mut self.sums[..]);
        match self.w {
            2 => scan_fixed::<2>(krow, o, xw, stop, sums),
            3 => scan_fixed::<3>(krow, o, xw, stop, sums),
            4 => scan_fixed::<4>(krow, o, xw, stop, sums),
            5 => scan_fixed::<5>(krow, o, xw, stop, sums),
            6 => scan_fixed::<6>(krow, o, xw, stop, sums),
            7 => scan_fixed::<7>(krow, o, xw, stop, sums),
            8 => scan_fixed::<8>(krow, o, xw, stop, sums),
            9 => scan_fixed::<9>(krow, o, xw, stop, sums),
            w => scan_dyn(w, krow, o, xw, stop, sums),
        }
    }

    /// Writes `X_i − Ê(X | Y ≥ Y_{order[pos]}, BᵀX_i)` into `out`, or the
    /// conditional mean itself when `center` is `None`.
    #[inline]
    pub(crate) fn centered(&self, pos: usize, center: Option<&[f64]>, out: &mut [f64]) {
        let s = &self.sums[pos * self.w..(pos + 1) * self.w];
        let inv = 1.0 / s[0];
        match center {
            Some(x) => {
                for ((o, &sk), &xk) in out.iter_mut().zip(&s[1..]).zip(x) {
                    *o = xk - sk * inv;
                }
            }
            None => {
                for (o, &sk) in out.iter_mut().zip(&s[1..]) {
                    *o = sk * inv;
                }
            }
        }
    }
}

/// Row `i` is `Ê(X | Y ≥ Y_i, BᵀX = BᵀX_i)`, the Nadaraya–Watson average
/// over the risk set at `Y_i`.
pub fn cond_mean_risk(ds: &SurvivalDataset, order: &RiskOrder, plan: &KernelPlan) -> DMatrix<f64> {
    let (n, p) = (ds.n(), ds.p());
    let mut out = DMatrix::zeros(n, p);
    let mut sums = RiskSums::new(ds, order);
    let mut row = vec![0.0; p];
    for i in 0..n {
        let start = order.risk_start(i);
        sums.fill(order, plan, i, start);
        sums.centered(start, None, &mut row);
        for k in 0..p {
            out[(i, k)] = row[k];
        }
    }
    out
}

/// Conditional hazard values on a set of time points, one column per subject.
#[derive(Clone, Debug)]
pub struct HazardEstimate {
    /// `values[(t, i)]` is the estimate at `times[t]` given `BᵀX_i`.
    pub values: DMatrix<f64>,
    pub times: Vec<f64>,
    /// For event-time tables: original index of the event at each row.
    pub event_subjects: Vec<usize>,
}

impl HazardEstimate {
    /// An event-time table with every entry produced by `f(event_row, subject)`.
    pub fn from_fn(
        ds: &SurvivalDataset,
        order: &RiskOrder,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let event_subjects: Vec<usize> = order.event_subjects().collect();
        let times = event_subjects.iter().map(|&j| ds.y()[j]).collect();
        let values = DMatrix::from_fn(event_subjects.len(), ds.n(), &mut f);
        Self { values, times, event_subjects }
    }

    /// Time-smoothed rate at `u` for subject `i`: `Σ_t K_b(u − t) λ̂(t | BᵀX_i)`.
    ///
    /// Turns the jump sizes of [`hazard_exact`] into a hazard rate.
    pub fn smoothed_rate(&self, u: f64, i: usize, b: f64) -> f64 {
        self.times
            .iter()
            .enumerate()
            .map(|(t, &tt)| gaussian_1d(u - tt, b) * self.values[(t, i)])
            .sum()
    }
}

/// Jump-size hazard at every event time:
/// `λ̂(Y_j | BᵀX_i) = K[i,j] / Σ_{j': Y_j' ≥ Y_j} K[i,j']`.
pub fn hazard_exact(
    ds: &SurvivalDataset,
    order: &RiskOrder,
    plan: &KernelPlan,
) -> Result<HazardEstimate> {
    let n = ds.n();
    let event_subjects: Vec<usize> = order.event_subjects().collect();
    let times: Vec<f64> = event_subjects.iter().map(|&j| ds.y()[j]).collect();
    let ne = event_subjects.len();
    let risk_start: Vec<usize> = order.events.iter().map(|&pos| order.group_start[pos]).collect();
    let mut values = DMatrix::zeros(ne, n);
    let mut suffix = vec![0.0; n + 1];
    for i in 0..n {
        let krow = plan.kernel_row(i);
        let mut acc = 0.0;
        for pos in (0..n).rev() {
            acc += krow[order.order[pos]];
            suffix[pos] = acc;
        }
        let col = &mut values.as_mut_slice()[i * ne..(i + 1) * ne];
        for (e, v) in col.iter_mut().enumerate() {
            let den = suffix[risk_start[e]];
            if !(den > 0.0) {
                return Err(SdrError::Numerical(format!(
                    "hazard denominator underflowed at event time {} for subject {}",
                    times[e],
                    i + 1
                )));
            }
            *v = krow[event_subjects[e]] / den;
        }
    }
    Ok(HazardEstimate { values, times, event_subjects })
}

/// Time-smoothed hazard rate on `u_grid`:
/// `Σ_i K_b(Y_i − u) δ_i K_h(BᵀX_i − z) / Σ_j I(Y_j ≥ u) K_h(BᵀX_j − z)`.
pub fn hazard_smoothed(
    ds: &SurvivalDataset,
    plan: &KernelPlan,
    u_grid: &[f64],
) -> Result<HazardEstimate> {
    let n = ds.n();
    let (y, delta) = (ds.y(), ds.delta());
    let mut values = DMatrix::zeros(u_grid.len(), n);
    for (g, &u) in u_grid.iter().enumerate() {
        let tk: Vec<f64> = (0..n)
            .map(|j| if delta[j] { gaussian_1d(y[j] - u, plan.time_bw) } else { 0.0 })
            .collect();
        for i in 0..n {
            let krow = plan.kernel_row(i);
            let mut num = 0.0;
            let mut den = 0.0;
            for j in 0..n {
                num += tk[j] * krow[j];
                if y[j] >= u {
                    den += krow[j];
                }
            }
            if !(den > 0.0) {
                return Err(SdrError::Numerical(format!(
                    "empty risk set at grid point u = {u}"
                )));
            }
            values[(g, i)] = num / den;
        }
    }
    Ok(HazardEstimate { values, times: u_grid.to_vec(), event_subjects: Vec::new() })
}

/// Sliced mean difference `φ̂(u)` at every event time.
#[derive(Clone, Debug)]
pub struct SliceCurve {
    /// Row `e` is `φ̂` at the `e`-th event time (time order).
    pub phi: DMatrix<f64>,
    pub event_times: Vec<f64>,
    pub event_subjects: Vec<usize>,
}

/// `φ̂(u)` = mean X over events in `[u, u + w)` minus mean X over `{Y ≥ u}`,
/// evaluated at each event time `u = Y_j`.
pub fn slice_curve(ds: &SurvivalDataset, order: &RiskOrder, slice_w: f64) -> SliceCurve {
    let (n, p) = (ds.n(), ds.p());
    // suffix sums of X over all sorted observations
    let mut all = vec![0.0; (n + 1) * p];
    for pos in (0..n).rev() {
        let x = ds.row(order.order[pos]);
        for k in 0..p {
            all[pos * p + k] = all[(pos + 1) * p + k] + x[k];
        }
    }
    // prefix sums of X over events in time order
    let ne = order.events.len();
    let mut ev = vec![0.0; (ne + 1) * p];
    let ev_times: Vec<f64> = order.events.iter().map(|&pos| ds.y()[order.order[pos]]).collect();
    for (e, &pos) in order.events.iter().enumerate() {
        let x = ds.row(order.order[pos]);
        for k in 0..p {
            ev[(e + 1) * p + k] = ev[e * p + k] + x[k];
        }
    }
    let mut phi = DMatrix::zeros(ne, p);
    for (e, &pos) in order.events.iter().enumerate() {
        let u = ev_times[e];
        let lo = ev_times.partition_point(|&t| t < u);
        let hi = ev_times.partition_point(|&t| t < u + slice_w);
        let start = order.group_start[pos];
        let at_risk = (n - start) as f64;
        let in_slice = (hi - lo) as f64;
        for k in 0..p {
            let slice_mean = (ev[hi * p + k] - ev[lo * p + k]) / in_slice;
            let risk_mean = all[start * p + k] / at_risk;
            phi[(e, k)] = slice_mean - risk_mean;
        }
    }
    SliceCurve { phi, event_times: ev_times, event_subjects: order.event_subjects().collect() }
}
