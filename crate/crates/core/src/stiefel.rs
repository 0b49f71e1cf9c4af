//! Feasible descent on the Stiefel manifold `{B ∈ ℝ^{p×d} : BᵀB = I_d}`.
//!
//! Each iteration takes a central-difference ambient gradient `G`, forms the
//! skew matrix `A = GBᵀ − BGᵀ` and searches along the Cayley curve
//! `B(τ) = (I + τ/2·A)⁻¹(I − τ/2·A)B`, which stays on the manifold for every
//! `τ`. Step sizes satisfy the strong Wolfe conditions, with Armijo
//! backtracking as a fallback.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{orthonormality_error, DirectionMatrix};
use crate::error::{Result, SdrError};

/// Norm used in the stopping rule `‖B⁽ᵏ⁺¹⁾ − B⁽ᵏ⁾‖ ≤ eps0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopNorm {
    Spectral,
    Frobenius,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub eps0: f64,
    pub max_iter: usize,
    pub fd_step: f64,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    pub tau_init: f64,
    pub tau_min: f64,
    pub stop_norm: StopNorm,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            eps0: 1e-6,
            max_iter: 500,
            fd_step: 1e-5,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            tau_init: 1.0,
            tau_min: 1e-10,
            stop_norm: StopNorm::Spectral,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.wolfe_c1
            && self.wolfe_c1 < self.wolfe_c2
            && self.wolfe_c2 < 1.0
            && self.eps0 > 0.0
            && self.fd_step > 0.0
            && self.tau_min > 0.0
            && self.tau_init > self.tau_min
            && self.max_iter > 0;
        if ok {
            Ok(())
        } else {
            Err(SdrError::Config(format!("invalid optimizer configuration: {self:?}")))
        }
    }

    /// Largest step the line search may return.
    pub fn tau_max(&self) -> f64 {
        self.tau_init * 1024.0
    }
}

/// How the optimizer was started; filled in by the estimators.
#[derive(Clone, Debug)]
pub struct InitInfo {
    pub method: String,
    pub b0: DirectionMatrix,
    pub singular_values: Vec<f64>,
}

/// One accepted curvilinear step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub tau: f64,
    pub f_before: f64,
    pub f_after: f64,
    /// `φ′(0) = ⟨G, −AB⟩`.
    pub slope: f64,
    pub wolfe: bool,
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub b_hat: DirectionMatrix,
    /// Objective at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
    pub steps: Vec<StepRecord>,
    pub iterations: usize,
    pub converged: bool,
    /// The last line search found no decrease above `tau_min`.
    pub stalled: bool,
    pub wall_time: f64,
    /// Largest `‖BᵀB − I‖_max` over all iterates.
    pub max_feasibility_error: f64,
    pub init: Option<InitInfo>,
}

impl FitReport {
    pub fn final_objective(&self) -> Option<f64> {
        self.objective_trace.last().copied()
    }
}

static MAX_FEASIBILITY_BITS: AtomicU64 = AtomicU64::new(0);

fn record_feasibility(err: f64) {
    MAX_FEASIBILITY_BITS.fetch_max(err.to_bits(), Ordering::Relaxed);
}

/// Largest iterate feasibility error seen by any [`optimize`] call in this
/// process.
pub fn max_feasibility_seen() -> f64 {
    f64::from_bits(MAX_FEASIBILITY_BITS.load(Ordering::Relaxed))
}

/// Central-difference ambient gradient, probes evaluated in parallel.
pub fn numeric_gradient<F>(f: &F, b: &DMatrix<f64>, fd_step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DMatrix<f64>) -> Result<f64> + Sync,
{
    let (p, d) = b.shape();
    let entries: Vec<f64> = (0..p * d)
        .into_par_iter()
        .map(|idx| {
            let (row, col) = (idx % p, idx / p);
            let mut probe = b.clone();
            probe[(row, col)] = b[(row, col)] + fd_step;
            let up = f(&probe)?;
            probe[(row, col)] = b[(row, col)] - fd_step;
            let down = f(&probe)?;
            if !(up.is_finite() && down.is_finite()) {
                return Err(SdrError::NonFiniteProbe { row, col });
            }
            Ok((up - down) / (2.0 * fd_step))
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_column_slice(p, d, &entries))
}

/// `A = GBᵀ − BGᵀ`.
pub fn skew_matrix(b: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    g * b.transpose() - b * g.transpose()
}

/// Point `B(τ)` on the Cayley curve through `b` defined by `A = skew_matrix(b, g)`.
pub fn cayley_step(b: &DMatrix<f64>, g: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    cayley_with_skew(b, &skew_matrix(b, g), tau)
}

fn cayley_with_skew(b: &DMatrix<f64>, a: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    if tau == 0.0 {
        return Ok(b.clone());
    }
    let p = b.nrows();
    let half = 0.5 * tau;
    let lhs = DMatrix::identity(p, p) + a * half;
    let rhs = b - (a * b) * half;
    lhs.lu()
        .solve(&rhs)
        .ok_or_else(|| SdrError::Numerical("Cayley system is singular".into()))
}

fn step_norm(diff: &DMatrix<f64>, norm: StopNorm) -> f64 {
    match norm {
        StopNorm::Frobenius => diff.norm(),
        StopNorm::Spectral => diff.clone().svd(false, false).singular_values.max(),
    }
}

#[derive(Clone, Debug)]
pub struct LineSearchResult {
    pub tau: f64,
    pub b_new: DMatrix<f64>,
    pub f_new: f64,
    pub stalled: bool,
    /// Strong Wolfe satisfied (otherwise Armijo-only).
    pub wolfe: bool,
    pub slope: f64,
}

struct Curve<'a, F> {
    f: &'a F,
    b: &'a DMatrix<f64>,
    a: DMatrix<f64>,
    /// Curve parameter increment for derivative probes.
    dtau: f64,
}

impl<F> Curve<'_, F>
where
    F: Fn(&DMatrix<f64>) -> Result<f64> + Sync,
{
    fn point(&self, tau: f64) -> Result<(DMatrix<f64>, f64)> {
        let bt = cayley_with_skew(self.b, &self.a, tau)?;
        let v = (self.f)(&bt)?;
        Ok((bt, v))
    }

    fn slope(&self, tau: f64) -> Result<f64> {
        let h = self.dtau.min(0.5 * tau.max(self.dtau));
        let (up, down) = rayon::join(
            || self.point(tau + h).map(|r| r.1),
            || self.point(tau - h).map(|r| r.1),
        );
        Ok((up? - down?) / (2.0 * h))
    }
}

/// Strong-Wolfe curvilinear search starting from `cfg.tau_init`.
pub fn line_search<F>(
    f: &F,
    b: &DMatrix<f64>,
    g: &DMatrix<f64>,
    f0: f64,
    cfg: &OptimConfig,
) -> Result<LineSearchResult>
where
    F: Fn(&DMatrix<f64>) -> Result<f64> + Sync,
{
    line_search_from(f, b, g, f0, cfg.tau_init, cfg)
}

fn line_search_from<F>(
    f: &F,
    b: &DMatrix<f64>,
    g: &DMatrix<f64>,
    f0: f64,
    tau_trial: f64,
    cfg: &OptimConfig,
) -> Result<LineSearchResult>
where
    F: Fn(&DMatrix<f64>) -> Result<f64> + Sync,
{
    let a = skew_matrix(b, g);
    let direction = -(&a * b);
    let slope0 = g.dot(&direction);
    let stalled = |slope| LineSearchResult {
        tau: 0.0,
        b_new: b.clone(),
        f_new: f0,
        stalled: true,
        wolfe: false,
        slope,
    };
    if !(slope0 < 0.0) {
        return Ok(stalled(slope0));
    }
    let speed = direction.norm();
    let curve = Curve { f, b, a, dtau: cfg.fd_step / speed };
    let tau_max = cfg.tau_max();
    let (c1, c2) = (cfg.wolfe_c1, cfg.wolfe_c2);
    let armijo = |tau: f64, v: f64| v <= f0 + c1 * tau * slope0;
    let accept = |tau, b_new, f_new, wolfe| LineSearchResult {
        tau,
        b_new,
        f_new,
        stalled: false,
        wolfe,
        slope: slope0,
    };

    // bracketing phase
    let mut lo = (0.0, f0, slope0);
    let mut tau = tau_trial.clamp(cfg.tau_min * 2.0, tau_max);
    let mut bracket = None;
    for k in 0..40 {
        let (bt, v) = curve.point(tau)?;
        if !v.is_finite() || !armijo(tau, v) || (k > 0 && v >= lo.1) {
            bracket = Some((lo, (tau, v)));
            break;
        }
        let s = curve.slope(tau)?;
        if s.abs() <= c2 * slope0.abs() {
            return Ok(accept(tau, bt, v, true));
        }
        if s >= 0.0 {
            bracket = Some(((tau, v, s), (lo.0, lo.1)));
            break;
        }
        lo = (tau, v, s);
        if tau >= tau_max {
            // largest admissible step still descends steeply; take it
            return Ok(accept(tau, bt, v, false));
        }
        tau = (2.0 * tau).min(tau_max);
    }

    // zoom phase
    if let Some(((mut t_lo, mut f_lo, mut s_lo), (mut t_hi, mut f_hi))) = bracket {
        for _ in 0..40 {
            if (t_hi - t_lo).abs() < cfg.tau_min {
                break;
            }
            let t = interpolate(t_lo, f_lo, s_lo, t_hi, f_hi);
            let (bt, v) = curve.point(t)?;
            if !v.is_finite() || !armijo(t, v) || v >= f_lo {
                t_hi = t;
                f_hi = v;
                continue;
            }
            let s = curve.slope(t)?;
            if s.abs() <= c2 * slope0.abs() {
                return Ok(accept(t, bt, v, true));
            }
            if s * (t_hi - t_lo) >= 0.0 {
                t_hi = t_lo;
                f_hi = f_lo;
            }
            t_lo = t;
            f_lo = v;
            s_lo = s;
        }
        if t_lo > 0.0 {
            let (bt, v) = curve.point(t_lo)?;
            if v.is_finite() && armijo(t_lo, v) && v < f0 {
                return Ok(accept(t_lo, bt, v, false));
            }
        }
    }

    // Armijo backtracking fallback
    let mut t = cfg.tau_init;
    while t > cfg.tau_min {
        let (bt, v) = curve.point(t)?;
        if v.is_finite() && armijo(t, v) && v < f0 {
            return Ok(accept(t, bt, v, false));
        }
        t *= 0.5;
    }
    Ok(stalled(slope0))
}

/// Minimizer of the quadratic through `(t_lo, f_lo)` with slope `s_lo` and
/// `(t_hi, f_hi)`, safeguarded to the middle of the bracket.
fn interpolate(t_lo: f64, f_lo: f64, s_lo: f64, t_hi: f64, f_hi: f64) -> f64 {
    let dt = t_hi - t_lo;
    let denom = 2.0 * (f_hi - f_lo - s_lo * dt);
    let mut t = if denom.is_finite() && denom > 0.0 {
        t_lo - s_lo * dt * dt / denom
    } else {
        t_lo + 0.5 * dt
    };
    let (a, b) = if t_lo < t_hi { (t_lo, t_hi) } else { (t_hi, t_lo) };
    let margin = 0.1 * (b - a);
    if !t.is_finite() || t < a + margin || t > b - margin {
        t = t_lo + 0.5 * dt;
    }
    t
}

/// Minimizes `f` over the Stiefel manifold starting from `b0`.
pub fn optimize<F>(f: &F, b0: &DirectionMatrix, cfg: &OptimConfig) -> Result<FitReport>
where
    F: Fn(&DMatrix<f64>) -> Result<f64> + Sync,
{
    cfg.validate()?;
    let start = Instant::now();
    let mut b = b0.matrix().clone();
    let mut fb = f(&b)?;
    if !fb.is_finite() {
        return Err(SdrError::Numerical(format!("objective is {fb} at the starting point")));
    }
    let mut trace = vec![fb];
    let mut steps = Vec::new();
    let mut max_feas = orthonormality_error(&b);
    let mut converged = false;
    let mut stalled = false;
    let mut iterations = 0;
    let mut prev: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
    let mut last_tau = cfg.tau_init;

    while iterations < cfg.max_iter {
        iterations += 1;
        let g = numeric_gradient(f, &b, cfg.fd_step)?;
        let a = skew_matrix(&b, &g);
        if a.amax() == 0.0 {
            converged = true;
            break;
        }
        let rgrad = &a * &b;
        let trial = match &prev {
            Some((b_prev, r_prev)) => bb_step(&b, b_prev, &rgrad, r_prev, iterations).unwrap_or(last_tau),
            None => cfg.tau_init,
        };
        let ls = line_search_from(f, &b, &g, fb, trial, cfg)?;
        if ls.stalled {
            stalled = true;
            break;
        }
        let feas = orthonormality_error(&ls.b_new);
        max_feas = max_feas.max(feas);
        let moved = step_norm(&(&ls.b_new - &b), cfg.stop_norm);
        steps.push(StepRecord { tau: ls.tau, f_before: fb, f_after: ls.f_new, slope: ls.slope, wolfe: ls.wolfe });
        prev = Some((b, rgrad));
        b = ls.b_new;
        fb = ls.f_new;
        last_tau = ls.tau;
        trace.push(fb);
        if moved <= cfg.eps0 {
            converged = true;
            break;
        }
    }
    record_feasibility(max_feas);
    Ok(FitReport {
        b_hat: DirectionMatrix::new(b)?,
        objective_trace: trace,
        steps,
        iterations,
        converged,
        stalled,
        wall_time: start.elapsed().as_secs_f64(),
        max_feasibility_error: max_feas,
        init: None,
    })
}

/// Alternating Barzilai–Borwein step from the last two iterates.
fn bb_step(
    b: &DMatrix<f64>,
    b_prev: &DMatrix<f64>,
    r: &DMatrix<f64>,
    r_prev: &DMatrix<f64>,
    k: usize,
) -> Option<f64> {
    let s = b - b_prev;
    let y = r - r_prev;
    let sy = s.dot(&y).abs();
    let tau = if k % 2 == 0 { s.norm_squared() / sy } else { sy / y.norm_squared() };
    (tau.is_finite() && tau > 0.0).then_some(tau)
}
