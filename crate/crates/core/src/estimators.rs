//! Fitting entry points: closed-form CP-SIR and the moment estimators, which
//! start the Stiefel search from the CP-SIR solution.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{DirectionMatrix, EstimatorKind, NormalizedDirection, RiskOrder, SurvivalDataset};
use crate::error::{Result, SdrError};
use crate::nonparam::{slice_curve, NonparamConfig};
use crate::objectives::{cpsir_matrix, GmmObjective};
use crate::stiefel::{optimize, FitReport, InitInfo, OptimConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub optim: OptimConfig,
    pub nonparam: NonparamConfig,
    /// Compute the CP-SIR matrix on whitened covariates and map the singular
    /// vectors back with `Σ̂^{-1/2}`. Without it the left singular space
    /// estimates `span(ΣB)` rather than `span(B)`.
    pub cpsir_whiten: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { optim: OptimConfig::default(), nonparam: NonparamConfig::default(), cpsir_whiten: true }
    }
}

#[derive(Clone, Debug)]
pub struct CpSirFit {
    pub b: DirectionMatrix,
    /// All singular values of `M̂`, descending.
    pub singular_values: Vec<f64>,
    /// Set when the `d`-th and `(d+1)`-th singular values coincide.
    pub warning: Option<String>,
}

fn check_d(ds: &SurvivalDataset, d: usize) -> Result<()> {
    if d < 1 || d >= ds.p() {
        return Err(SdrError::Dimension(format!("need 1 <= d < p = {}, got d = {d}", ds.p())));
    }
    if ds.n_events() < d {
        return Err(SdrError::Validation(format!(
            "{} events cannot identify a {d}-dimensional subspace",
            ds.n_events()
        )));
    }
    Ok(())
}

/// Top-`d` left singular vectors of the CP-SIR matrix, optionally computed
/// in whitened coordinates (see [`FitConfig::cpsir_whiten`]).
pub fn fit_cpsir(ds: &SurvivalDataset, d: usize, cfg: &FitConfig) -> Result<CpSirFit> {
    check_d(ds, d)?;
    let slice_w = cfg.nonparam.slice_width.resolve(ds)?;
    if !cfg.cpsir_whiten {
        let order = RiskOrder::new(ds);
        let phi = slice_curve(ds, &order, slice_w);
        return top_left_singular(&cpsir_matrix(ds, &order, &phi), d);
    }
    let (z, inv_root) = whiten(ds)?;
    let order = RiskOrder::new(&z);
    let phi = slice_curve(&z, &order, slice_w);
    let fit = top_left_singular(&cpsir_matrix(&z, &order, &phi), d)?;
    let b = DirectionMatrix::from_basis(&(inv_root * fit.b.matrix()))?.with_sign_convention();
    Ok(CpSirFit { b, ..fit })
}

/// `Z = (X − X̄) Σ̂^{-1/2}` and `Σ̂^{-1/2}`.
pub fn whiten(ds: &SurvivalDataset) -> Result<(SurvivalDataset, DMatrix<f64>)> {
    let (n, p) = (ds.n(), ds.p());
    let mut xc = ds.x().clone();
    for mut col in xc.column_iter_mut() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
    }
    let cov = xc.transpose() * &xc / (n as f64 - 1.0);
    let eig = cov.symmetric_eigen();
    let top = eig.eigenvalues.amax();
    if eig.eigenvalues.iter().any(|&l| !(l > 1e-12 * top)) {
        return Err(SdrError::Numerical("covariate covariance is singular".into()));
    }
    let scale = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let inv_root = &eig.eigenvectors * scale * eig.eigenvectors.transpose();
    let z = SurvivalDataset::new(&xc * &inv_root, ds.y().to_vec(), ds.delta().to_vec(), None)?;
    debug_assert_eq!(z.p(), p);
    Ok((z, inv_root))
}

/// Leading `d` left singular vectors of `m`, with the sign convention for `d = 1`.
pub fn top_left_singular(m: &DMatrix<f64>, d: usize) -> Result<CpSirFit> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SdrError::Numerical("moment matrix has non-finite entries".into()));
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.ok_or_else(|| SdrError::Numerical("SVD did not return U".into()))?;
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = idx.iter().map(|&k| svd.singular_values[k]).collect();
    let cols: Vec<_> = idx[..d].iter().map(|&k| u.column(k).into_owned()).collect();
    let b = DirectionMatrix::from_basis(&DMatrix::from_columns(&cols))?.with_sign_convention();
    let warning = (d < singular_values.len()
        && (singular_values[d - 1] - singular_values[d]).abs() <= 1e-12)
        .then(|| format!("singular values {d} and {} coincide; subspace not unique", d + 1));
    Ok(CpSirFit { b, singular_values, warning })
}

/// Fits `kind` with structural dimension `d`.
///
/// CP-SIR returns its closed form directly; the other kinds minimize their
/// GMM objective from the CP-SIR start.
pub fn fit(ds: &SurvivalDataset, d: usize, kind: EstimatorKind, cfg: &FitConfig) -> Result<FitReport> {
    check_d(ds, d)?;
    kind.check_dimension(d)?;
    let start = std::time::Instant::now();
    let init = fit_cpsir(ds, d, cfg)?;
    let info = InitInfo {
        method: EstimatorKind::CpSir.as_str().to_string(),
        b0: init.b.clone(),
        singular_values: init.singular_values.clone(),
    };
    if kind == EstimatorKind::CpSir {
        return Ok(FitReport {
            b_hat: init.b,
            objective_trace: Vec::new(),
            steps: Vec::new(),
            iterations: 0,
            converged: true,
            stalled: false,
            wall_time: start.elapsed().as_secs_f64(),
            max_feasibility_error: 0.0,
            init: Some(info),
        });
    }
    let objective = GmmObjective::new(ds, kind, &cfg.nonparam)?;
    let f = |b: &DMatrix<f64>| objective.value(b);
    let mut report = optimize(&f, &init.b, &cfg.optim)?;
    report.b_hat = report.b_hat.with_sign_convention();
    report.wall_time = start.elapsed().as_secs_f64();
    report.init = Some(info);
    Ok(report)
}

/// Smallest singular value of the rows `rows` of `b`.
fn anchor_sigma_min(b: &DMatrix<f64>, rows: &[usize]) -> f64 {
    let block = b.select_rows(rows);
    block.svd(false, false).singular_values.min()
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        for mut rest in combinations(&items[i + 1..], k - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Chooses `d` anchor rows: among the `d + 2` rows with the largest norms,
/// the subset whose block has the largest smallest singular value.
pub fn default_anchor_rows(b: &DMatrix<f64>) -> Result<Vec<usize>> {
    let (p, d) = b.shape();
    let mut rows: Vec<usize> = (0..p).collect();
    rows.sort_by(|&i, &j| b.row(j).norm().total_cmp(&b.row(i).norm()).then(i.cmp(&j)));
    rows.truncate((d + 2).min(p));
    let candidates = combinations(&rows, d);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for c in &candidates {
        let s = anchor_sigma_min(b, c);
        if best.as_ref().is_none_or(|(bs, _)| s > *bs) {
            best = Some((s, c.clone()));
        }
    }
    match best {
        Some((s, mut c)) if s > 1e-10 => {
            c.sort_unstable();
            Ok(c)
        }
        _ => Err(SdrError::SingularAnchor(candidates)),
    }
}

/// Re-bases `b` so that `b_norm[anchor_rows, :] = I_d`.
pub fn normalize_block_identity(b: &DMatrix<f64>, anchor_rows: Option<&[usize]>) -> Result<NormalizedDirection> {
    let (p, d) = b.shape();
    let rows = match anchor_rows {
        Some(r) => {
            let mut seen = r.to_vec();
            seen.sort_unstable();
            seen.dedup();
            if r.len() != d || seen.len() != d || r.iter().any(|&k| k >= p) {
                return Err(SdrError::Config(format!(
                    "need {d} distinct anchor rows below {p}, got {r:?}"
                )));
            }
            r.to_vec()
        }
        None => default_anchor_rows(b)?,
    };
    let block = b.select_rows(&rows);
    let scale = block.amax().max(f64::MIN_POSITIVE);
    let inv = if anchor_sigma_min(b, &rows) > 1e-12 * scale {
        block.try_inverse()
    } else {
        None
    };
    let inv = inv.ok_or_else(|| SdrError::SingularAnchor(vec![rows.clone()]))?;
    let mut b_norm = b * inv;
    for (k, &r) in rows.iter().enumerate() {
        for c in 0..d {
            b_norm[(r, c)] = if k == c { 1.0 } else { 0.0 };
        }
    }
    Ok(NormalizedDirection { b_norm, anchor_rows: rows })
}
