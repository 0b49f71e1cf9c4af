//! Shared helpers for the integration tests: random datasets and naive
//! O(n²)–O(n³) reference implementations written straight from the formulas,
//! with no sorting, suffix sums or caching.

#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use survsdr::{DirectionMatrix, SurvivalDataset};

/// A small random problem: dataset, orthonormal basis and explicit widths.
pub struct Case {
    pub ds: SurvivalDataset,
    pub b: DMatrix<f64>,
    pub h: Vec<f64>,
    pub slice_w: f64,
}

pub fn gaussian_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn random_basis(p: usize, d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DirectionMatrix::from_basis(&gaussian_matrix(p, d, rng)).unwrap().into_inner()
}

/// Random dataset with `n ≤ 30`, `2 ≤ p ≤ 5`; every other case has tied times.
pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(8..=30);
    let p = rng.random_range(2..=5);
    let d = if p >= 3 { rng.random_range(1..=2) } else { 1 };
    let x = gaussian_matrix(n, p, &mut rng);
    let ties = seed % 2 == 1;
    let y: Vec<f64> = (0..n)
        .map(|_| {
            let t = 0.05 + rng.random::<f64>() * 2.0;
            if ties {
                (t * 4.0).round() / 4.0 + 0.25
            } else {
                t
            }
        })
        .collect();
    let mut delta: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.7).collect();
    delta[0] = true;
    delta[1] = true;
    let ds = SurvivalDataset::new(x, y, delta, None).unwrap();
    let b = random_basis(p, d, &mut rng);
    let h = (0..d).map(|_| 0.3 + rng.random::<f64>() * 1.5).collect();
    let slice_w = 0.1 + rng.random::<f64>();
    Case { ds, b, h, slice_w }
}

// --- naive references -------------------------------------------------

pub fn kernel(ds: &SurvivalDataset, b: &DMatrix<f64>, h: &[f64], i: usize, j: usize) -> f64 {
    let mut k = 1.0;
    for (c, &hc) in h.iter().enumerate() {
        let mut u = 0.0;
        for r in 0..ds.p() {
            u += (ds.x()[(i, r)] - ds.x()[(j, r)]) * b[(r, c)];
        }
        k *= (-(u * u) / (2.0 * hc * hc)).exp() / (hc * (2.0 * PI).sqrt());
    }
    k
}

/// `Ê(X | Y ≥ u, BᵀX = BᵀX_i)`.
pub fn cond_mean(ds: &SurvivalDataset, b: &DMatrix<f64>, h: &[f64], u: f64, i: usize) -> Vec<f64> {
    let mut num = vec![0.0; ds.p()];
    let mut den = 0.0;
    for j in 0..ds.n() {
        if ds.y()[j] >= u {
            let k = kernel(ds, b, h, j, i);
            den += k;
            for r in 0..ds.p() {
                num[r] += k * ds.x()[(j, r)];
            }
        }
    }
    num.iter().map(|v| v / den).collect()
}

/// `λ̂(Y_j | BᵀX_i)` for event `j`.
pub fn hazard(ds: &SurvivalDataset, b: &DMatrix<f64>, h: &[f64], j: usize, i: usize) -> f64 {
    let u = ds.y()[j];
    let den: f64 = (0..ds.n()).filter(|&k| ds.y()[k] >= u).map(|k| kernel(ds, b, h, k, i)).sum();
    kernel(ds, b, h, j, i) / den
}

/// `φ̂(u)`: mean X over events in `[u, u + w)` minus mean X over `{Y ≥ u}`.
pub fn phi(ds: &SurvivalDataset, u: f64, w: f64) -> Vec<f64> {
    let p = ds.p();
    let (mut s1, mut c1, mut s2, mut c2) = (vec![0.0; p], 0.0, vec![0.0; p], 0.0);
    for i in 0..ds.n() {
        let yi = ds.y()[i];
        if ds.delta()[i] && yi >= u && yi < u + w {
            c1 += 1.0;
            for r in 0..p {
                s1[r] += ds.x()[(i, r)];
            }
        }
        if yi >= u {
            c2 += 1.0;
            for r in 0..p {
                s2[r] += ds.x()[(i, r)];
            }
        }
    }
    (0..p).map(|r| s1[r] / c1 - s2[r] / c2).collect()
}

pub fn psi_forward(ds: &SurvivalDataset, b: &DMatrix<f64>, h: &[f64]) -> Vec<f64> {
    let n = ds.n();
    let mut psi = vec![0.0; ds.p()];
    for i in 0..n {
        if ds.delta()[i] {
            let m = cond_mean(ds, b, h, ds.y()[i], i);
            for r in 0..ds.p() {
                psi[r] += (ds.x()[(i, r)] - m[r]) / n as f64;
            }
        }
    }
    psi
}

/// `p × p` matrix stored row-major as `out[r][c]`.
pub fn psi_ircp(ds: &SurvivalDataset, b: &DMatrix<f64>, h: &[f64], w: f64) -> Vec<Vec<f64>> {
    let (n, p) = (ds.n(), ds.p());
    let mut out = vec![vec![0.0; p]; p];
    for i in 0..n {
        if !ds.delta()[i] {
            continue;
        }
        let m = cond_mean(ds, b, h, ds.y()[i], i);
        let f = phi(ds, ds.y()[i], w);
        for r in 0..p {
            for c in 0..p {
                out[r][c] += (ds.x()[(i, r)] - m[r]) * f[c] / n as f64;
            }
        }
    }
    out
}

/// The doubly robust moment with an arbitrary hazard `lambda(j, i)`.
pub fn psi_irsemi_with(
    ds: &SurvivalDataset,
    b: &DMatrix<f64>,
    h: &[f64],
    w: f64,
    lambda: impl Fn(usize, usize) -> f64,
) -> Vec<Vec<f64>> {
    let (n, p) = (ds.n(), ds.p());
    let mut out = vec![vec![0.0; p]; p];
    for j in 0..n {
        if !ds.delta()[j] {
            continue;
        }
        let u = ds.y()[j];
        let f = phi(ds, u, w);
        for i in 0..n {
            if ds.y()[i] < u {
                continue;
            }
            let own = if i == j { 1.0 } else { 0.0 };
            let wt = own - lambda(j, i);
            let m = cond_mean(ds, b, h, u, i);
            for r in 0..p {
                for c in 0..p {
                    out[r][c] += (ds.x()[(i, r)] - m[r]) * f[c] * wt / n as f64;
                }
            }
        }
    }
    out
}

pub fn psi_irsemi(ds: &SurvivalDataset, b: &DMatrix<f64>, h: &[f64], w: f64) -> Vec<Vec<f64>> {
    psi_irsemi_with(ds, b, h, w, |j, i| hazard(ds, b, h, j, i))
}

/// CP-SIR matrix with plain risk-set means.
pub fn cpsir(ds: &SurvivalDataset, w: f64) -> Vec<Vec<f64>> {
    let (n, p) = (ds.n(), ds.p());
    let mut out = vec![vec![0.0; p]; p];
    for i in 0..n {
        if !ds.delta()[i] {
            continue;
        }
        let u = ds.y()[i];
        let risk: Vec<usize> = (0..n).filter(|&k| ds.y()[k] >= u).collect();
        let f = phi(ds, u, w);
        for r in 0..p {
            let mean = risk.iter().map(|&k| ds.x()[(k, r)]).sum::<f64>() / risk.len() as f64;
            for c in 0..p {
                out[r][c] += (ds.x()[(i, r)] - mean) * f[c] / n as f64;
            }
        }
    }
    out
}

/// Column-major flattening to compare with moment vectors.
pub fn vec_col_major(m: &[Vec<f64>]) -> Vec<f64> {
    let p = m.len();
    let mut v = Vec::with_capacity(p * p);
    for c in 0..p {
        for row in m {
            v.push(row[c]);
        }
    }
    v
}

/// Largest absolute difference, scaled by `max(1, |reference|)`.
pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
}

/// Worst discrepancy between every library quantity and its naive reference
/// on one case, keyed by quantity name.
pub fn oracle_discrepancies(case: &Case) -> Vec<(&'static str, f64)> {
    use survsdr::nonparam::{cond_mean_risk, hazard_exact, slice_curve, KernelPlan};
    use survsdr::objectives;
    use survsdr::RiskOrder;

    let Case { ds, b, h, slice_w } = case;
    let order = RiskOrder::new(ds);
    let plan = KernelPlan::with_bandwidths(ds, b, h.clone(), 1.0, *slice_w).unwrap();
    let curve = slice_curve(ds, &order, *slice_w);
    let mut out = Vec::new();

    let cm = cond_mean_risk(ds, &order, &plan);
    let mut worst = 0.0f64;
    for i in 0..ds.n() {
        let naive = cond_mean(ds, b, h, ds.y()[i], i);
        let got: Vec<f64> = cm.row(i).iter().copied().collect();
        worst = worst.max(max_rel_diff(&got, &naive));
    }
    out.push(("cond_mean_risk", worst));

    let hz = hazard_exact(ds, &order, &plan).unwrap();
    let mut worst = 0.0f64;
    for (e, &j) in hz.event_subjects.iter().enumerate() {
        for i in 0..ds.n() {
            worst = worst.max(max_rel_diff(&[hz.values[(e, i)]], &[hazard(ds, b, h, j, i)]));
        }
    }
    out.push(("hazard_exact", worst));

    let mut worst = 0.0f64;
    for (e, &j) in curve.event_subjects.iter().enumerate() {
        let got: Vec<f64> = curve.phi.row(e).iter().copied().collect();
        worst = worst.max(max_rel_diff(&got, &phi(ds, ds.y()[j], *slice_w)));
    }
    out.push(("slice_curve", worst));

    if b.ncols() == 1 {
        let got = objectives::psi_forward(ds, &order, &plan).unwrap();
        out.push(("psi_forward", max_rel_diff(&got.values, &psi_forward(ds, b, h))));
    }
    let got = objectives::psi_ircp(ds, &order, &plan, &curve).unwrap();
    out.push(("psi_ircp", max_rel_diff(&got.values, &vec_col_major(&psi_ircp(ds, b, h, *slice_w)))));
    let got = objectives::psi_irsemi(ds, &order, &plan, &curve, &hz).unwrap();
    out.push(("psi_irsemi", max_rel_diff(&got.values, &vec_col_major(&psi_irsemi(ds, b, h, *slice_w)))));
    let m = objectives::cpsir_matrix(ds, &order, &curve);
    let got: Vec<f64> = m.as_slice().to_vec();
    out.push(("cpsir_matrix", max_rel_diff(&got, &vec_col_major(&cpsir(ds, *slice_w)))));
    out
}
