//! Stacked estimating functions `ψₙ(B)` and the GMM objective `ψₙᵀψₙ`.
//!
//! `p × p` moments are stored as `vec(M)` in column-major order.

use nalgebra::DMatrix;

use crate::data::{EstimatorKind, RiskOrder, SurvivalDataset};
use crate::error::{Result, SdrError};
use crate::nonparam::{hazard_exact, slice_curve, HazardEstimate, KernelPlan, NonparamConfig, RiskSums, SliceCurve};

#[derive(Clone, Debug, PartialEq)]
pub struct MomentVector {
    pub values: Vec<f64>,
    pub kind: EstimatorKind,
}

impl MomentVector {
    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.squared_norm().sqrt()
    }

    /// The moments as a `p × p` matrix (inverse-regression kinds).
    pub fn as_matrix(&self, p: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(p, self.values.len() / p, &self.values)
    }
}

/// `ψ̂ = n⁻¹ Σ_i δ_i {X_i − Ê(X | Y ≥ Y_i, BᵀX_i)}`; requires `d = 1`.
pub fn psi_forward(ds: &SurvivalDataset, order: &RiskOrder, plan: &KernelPlan) -> Result<MomentVector> {
    EstimatorKind::Forward.check_dimension(plan.d())?;
    let (n, p) = (ds.n(), ds.p());
    let mut sums = RiskSums::new(ds, order);
    let mut centered = vec![0.0; p];
    let mut psi = vec![0.0; p];
    for i in order.event_subjects() {
        let start = order.risk_start(i);
        sums.fill(order, plan, i, start);
        sums.centered(start, Some(ds.row(i)), &mut centered);
        for k in 0..p {
            psi[k] += centered[k];
        }
    }
    psi.iter_mut().for_each(|v| *v /= n as f64);
    Ok(MomentVector { values: psi, kind: EstimatorKind::Forward })
}

fn accumulate_outer(psi: &mut [f64], p: usize, left: &[f64], right: &[f64]) {
    for c in 0..p {
        let rc = right[c];
        let col = &mut psi[c * p..(c + 1) * p];
        for r in 0..p {
            col[r] += left[r] * rc;
        }
    }
}

/// `ψ̂ = vec[n⁻¹ Σ_i δ_i {X_i − Ê(X | Y ≥ Y_i, BᵀX_i)} φ̂ᵀ(Y_i)]`.
pub fn psi_ircp(
    ds: &SurvivalDataset,
    order: &RiskOrder,
    plan: &KernelPlan,
    phi: &SliceCurve,
) -> Result<MomentVector> {
    let (n, p) = (ds.n(), ds.p());
    check_curve(phi, order, p)?;
    let mut sums = RiskSums::new(ds, order);
    let mut centered = vec![0.0; p];
    let mut psi = vec![0.0; p * p];
    for (e, i) in order.event_subjects().enumerate() {
        let start = order.risk_start(i);
        sums.fill(order, plan, i, start);
        sums.centered(start, Some(ds.row(i)), &mut centered);
        let phi_e: Vec<f64> = phi.phi.row(e).iter().copied().collect();
        accumulate_outer(&mut psi, p, &centered, &phi_e);
    }
    psi.iter_mut().for_each(|v| *v /= n as f64);
    Ok(MomentVector { values: psi, kind: EstimatorKind::IrCp })
}

/// ```text
/// ψ̂ = vec[ n⁻¹ Σ_{events j} Σ_{i : Y_i ≥ Y_j} {X_i − Ê(X | Y ≥ Y_j, BᵀX_i)} φ̂ᵀ(Y_j)
///                                              {δ_i I(i = j) − λ̂(Y_j | BᵀX_i)} ]
/// ```
///
/// Subjects with `Y_i < Y_j` are not at risk at `Y_j` and carry no weight.
/// `hazard` is normally [`hazard_exact`] but any event-time table is accepted.
pub fn psi_irsemi(
    ds: &SurvivalDataset,
    order: &RiskOrder,
    plan: &KernelPlan,
    phi: &SliceCurve,
    hazard: &HazardEstimate,
) -> Result<MomentVector> {
    let (n, p) = (ds.n(), ds.p());
    check_curve(phi, order, p)?;
    let ne = order.events.len();
    if hazard.values.shape() != (ne, n) || hazard.event_subjects.len() != ne {
        return Err(SdrError::Dimension(format!(
            "hazard table is {:?}, expected {ne} event rows by {n} subjects",
            hazard.values.shape()
        )));
    }
    let risk_start: Vec<usize> = order.events.iter().map(|&pos| order.group_start[pos]).collect();
    let mut sums = RiskSums::new(ds, order);
    let mut centered = vec![0.0; p];
    // v[e] = Σ_i {X_i − Ê_ie} w_ie
    let mut v = vec![0.0; ne * p];
    for i in 0..n {
        let pos_i = order.position[i];
        // events with Y_e ≤ Y_i form a prefix of the event list
        let reach = risk_start.partition_point(|&s| s <= pos_i);
        if reach == 0 {
            continue;
        }
        sums.fill(order, plan, i, risk_start[0]);
        let xi = ds.row(i);
        for e in 0..reach {
            let own = if hazard.event_subjects[e] == i { 1.0 } else { 0.0 };
            let w = own - hazard.values[(e, i)];
            if w == 0.0 {
                continue;
            }
            sums.centered(risk_start[e], Some(xi), &mut centered);
            let ve = &mut v[e * p..(e + 1) * p];
            for k in 0..p {
                ve[k] += centered[k] * w;
            }
        }
    }
    let mut psi = vec![0.0; p * p];
    for e in 0..ne {
        let phi_e: Vec<f64> = phi.phi.row(e).iter().copied().collect();
        accumulate_outer(&mut psi, p, &v[e * p..(e + 1) * p], &phi_e);
    }
    psi.iter_mut().for_each(|val| *val /= n as f64);
    Ok(MomentVector { values: psi, kind: EstimatorKind::IrSemi })
}

fn check_curve(phi: &SliceCurve, order: &RiskOrder, p: usize) -> Result<()> {
    if phi.phi.shape() != (order.events.len(), p) {
        return Err(SdrError::Dimension(format!(
            "slice curve is {:?}, expected {} events by {p}",
            phi.phi.shape(),
            order.events.len()
        )));
    }
    Ok(())
}

/// `M̂ = n⁻¹ Σ_{δ_i = 1} {X_i − Ē(X | Y ≥ Y_i)} φ̂ᵀ(Y_i)` with plain
/// (unsmoothed) risk-set means.
pub fn cpsir_matrix(ds: &SurvivalDataset, order: &RiskOrder, phi: &SliceCurve) -> DMatrix<f64> {
    let (n, p) = (ds.n(), ds.p());
    let mut suffix = vec![0.0; (n + 1) * p];
    for pos in (0..n).rev() {
        let x = ds.row(order.order[pos]);
        for k in 0..p {
            suffix[pos * p + k] = suffix[(pos + 1) * p + k] + x[k];
        }
    }
    let mut m = vec![0.0; p * p];
    let mut centered = vec![0.0; p];
    for (e, i) in order.event_subjects().enumerate() {
        let start = order.risk_start(i);
        let at_risk = (n - start) as f64;
        let xi = ds.row(i);
        for k in 0..p {
            centered[k] = xi[k] - suffix[start * p + k] / at_risk;
        }
        let phi_e: Vec<f64> = phi.phi.row(e).iter().copied().collect();
        accumulate_outer(&mut m, p, &centered, &phi_e);
    }
    m.iter_mut().for_each(|v| *v /= n as f64);
    DMatrix::from_column_slice(p, p, &m)
}

/// `ψₙ(B)ᵀψₙ(B)` for one dataset and estimator, with the `B`-independent
/// pieces (risk order, slice curve, scalar widths) computed once.
#[derive(Clone, Debug)]
pub struct GmmObjective<'a> {
    ds: &'a SurvivalDataset,
    order: RiskOrder,
    kind: EstimatorKind,
    phi: SliceCurve,
    time_bw: f64,
    slice_w: f64,
}

impl<'a> GmmObjective<'a> {
    pub fn new(ds: &'a SurvivalDataset, kind: EstimatorKind, cfg: &NonparamConfig) -> Result<Self> {
        if kind == EstimatorKind::CpSir {
            return Err(SdrError::Config("CP-SIR has no optimization objective".into()));
        }
        let order = RiskOrder::new(ds);
        let slice_w = cfg.slice_width.resolve(ds)?;
        let time_bw = cfg.time_bandwidth.resolve(ds)?;
        let phi = slice_curve(ds, &order, slice_w);
        Ok(Self { ds, order, kind, phi, time_bw, slice_w })
    }

    pub fn kind(&self) -> EstimatorKind {
        self.kind
    }

    pub fn dataset(&self) -> &SurvivalDataset {
        self.ds
    }

    pub fn order(&self) -> &RiskOrder {
        &self.order
    }

    pub fn slice(&self) -> &SliceCurve {
        &self.phi
    }

    pub fn plan(&self, b: &DMatrix<f64>) -> Result<KernelPlan> {
        let z = self.ds.project(b);
        let h = crate::nonparam::silverman_bandwidth(&z)?;
        KernelPlan::from_projection(&z, h, self.time_bw, self.slice_w)
    }

    pub fn moments(&self, b: &DMatrix<f64>) -> Result<MomentVector> {
        if b.nrows() != self.ds.p() {
            return Err(SdrError::Dimension(format!(
                "B has {} rows for p = {}",
                b.nrows(),
                self.ds.p()
            )));
        }
        self.kind.check_dimension(b.ncols())?;
        let plan = self.plan(b)?;
        match self.kind {
            EstimatorKind::Forward => psi_forward(self.ds, &self.order, &plan),
            EstimatorKind::IrCp => psi_ircp(self.ds, &self.order, &plan, &self.phi),
            EstimatorKind::IrSemi => {
                let hazard = hazard_exact(self.ds, &self.order, &plan)?;
                psi_irsemi(self.ds, &self.order, &plan, &self.phi, &hazard)
            }
            EstimatorKind::CpSir => unreachable!("rejected in constructor"),
        }
    }

    pub fn value(&self, b: &DMatrix<f64>) -> Result<f64> {
        Ok(self.moments(b)?.squared_norm())
    }
}

/// One-shot objective evaluation with default bandwidth rules.
pub fn gmm_objective(ds: &SurvivalDataset, b: &DMatrix<f64>, kind: EstimatorKind) -> Result<f64> {
    GmmObjective::new(ds, kind, &NonparamConfig::default())?.value(b)
}
