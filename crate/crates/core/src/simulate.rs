//! The four simulation designs and Monte Carlo censoring rates.
//!
//! Randomness comes from ChaCha8 seeded with `seed`; replication `r` uses
//! stream `r` of the same seed, so replications are independent and can be
//! generated in any order.

use nalgebra::DMatrix;
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{DirectionMatrix, SurvivalDataset};
use crate::error::{Result, SdrError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimSetting {
    pub id: u8,
    pub p: usize,
    pub n: usize,
    pub seed: u64,
    /// Replication stream of `seed`.
    #[serde(default)]
    pub stream: u64,
}

#[derive(Clone, Debug)]
pub struct SimTruth {
    pub b_true: DirectionMatrix,
    pub d_true: usize,
    /// The raw coefficient vectors spanning the central subspace.
    pub coefficients: Vec<Vec<f64>>,
}

/// Replaces one of the two latent times by `+∞`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CensoringOverride {
    pub no_censoring: bool,
    pub no_failure: bool,
}

impl SimSetting {
    pub fn new(id: u8, p: usize, n: usize, seed: u64) -> Self {
        Self { id, p, n, seed, stream: 0 }
    }

    pub fn with_stream(self, stream: u64) -> Self {
        Self { stream, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.id) {
            return Err(SdrError::Config(format!("unknown setting {}", self.id)));
        }
        if self.p < 6 {
            return Err(SdrError::Config(format!("setting {} needs p >= 6, got {}", self.id, self.p)));
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    fn pattern(&self, head: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.p];
        v[..head.len()].copy_from_slice(head);
        v
    }

    /// Coefficient vectors spanning the true central subspace.
    pub fn coefficients(&self) -> Vec<Vec<f64>> {
        match self.id {
            1 => vec![self.pattern(&[1.0, 0.5])],
            2 | 3 => vec![self.pattern(&[1.0, 0.0, 1.0]), self.pattern(&[0.0, 1.0, 0.0, 1.0])],
            _ => vec![self.pattern(&[1.0, 1.0]), self.pattern(&[0.0, 0.0, 1.0, -1.0])],
        }
    }

    pub fn truth(&self) -> Result<SimTruth> {
        self.validate()?;
        let coefficients = self.coefficients();
        let cols: Vec<_> = coefficients.iter().map(|c| nalgebra::DVector::from_column_slice(c)).collect();
        let b_true = DirectionMatrix::from_basis(&DMatrix::from_columns(&cols))?.with_sign_convention();
        Ok(SimTruth { d_true: cols.len(), b_true, coefficients })
    }
}

fn exp1(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(Exp1)
}

/// Draws one covariate vector into `out`.
pub fn sample_covariates(id: u8, rng: &mut ChaCha8Rng, out: &mut [f64]) {
    match id {
        3 => out.iter_mut().for_each(|v| *v = rng.sample(Open01)),
        _ => {
            // stationary AR(1) has covariance rho^|i-j|
            let rho: f64 = if id == 4 { 0.25 } else { 0.5 };
            let innov = (1.0 - rho * rho).sqrt();
            let mut prev: f64 = rng.sample(StandardNormal);
            out[0] = prev;
            for v in out.iter_mut().skip(1) {
                let e: f64 = rng.sample(StandardNormal);
                prev = rho * prev + innov * e;
                *v = prev;
            }
        }
    }
}

/// Draws the failure time `T` given covariates `x` (`x.len() ≥ 6`).
pub fn sample_failure_time(id: u8, x: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    match id {
        1 => exp1(rng) / (x[0] + 0.5 * x[1]).exp(),
        2 => {
            let t1 = exp1(rng) / (x[0] + x[2]).exp();
            let t2 = exp1(rng) / (x[1] + x[3]).exp();
            if t1 < 0.4 {
                t1
            } else {
                t2 + 0.4
            }
        }
        3 => {
            let scale = (4.0 * (x[1] + x[3]) * (x[0] + x[2] - 1.0)).exp();
            scale * exp1(rng).powf(0.2)
        }
        _ => {
            let b1 = x[0] + x[1];
            let b2 = x[2] - x[3];
            (-2.5 + b1 + 0.5 * b1 * b2 + 0.25 * exp1(rng).ln()).exp()
        }
    }
}

/// Draws the censoring time `C` given covariates `x`.
pub fn sample_censoring_time(id: u8, x: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    match id {
        1 => exp1(rng) / (x[3] + x[4] - 1.0).exp(),
        2 => exp1(rng) / (x[4] - x[5] - 2.0).exp(),
        3 => {
            let u: f64 = rng.sample(Open01);
            u * 3.0 * (x[4] - x[5] + 0.5).exp()
        }
        _ => {
            let b3 = x[1] + x[3] + x[4] + x[5];
            (-0.5 + b3 + exp1(rng).ln()).exp()
        }
    }
}

fn draw_subject(
    id: u8,
    rng: &mut ChaCha8Rng,
    x: &mut [f64],
    ov: CensoringOverride,
) -> (f64, f64) {
    sample_covariates(id, rng, x);
    let t = sample_failure_time(id, x, rng);
    let c = sample_censoring_time(id, x, rng);
    let t = if ov.no_failure { f64::INFINITY } else { t };
    let c = if ov.no_censoring { f64::INFINITY } else { c };
    (t, c)
}

/// One dataset of size `n` with `Y = min(T, C)` and `δ = I(T ≤ C)`.
pub fn generate(setting: &SimSetting) -> Result<(SurvivalDataset, SimTruth)> {
    let truth = setting.truth()?;
    let (n, p) = (setting.n, setting.p);
    let mut rng = setting.rng();
    let mut rows = vec![0.0; n * p];
    let mut y = Vec::with_capacity(n);
    let mut delta = Vec::with_capacity(n);
    for i in 0..n {
        let x = &mut rows[i * p..(i + 1) * p];
        let (t, c) = draw_subject(setting.id, &mut rng, x, CensoringOverride::default());
        y.push(t.min(c));
        delta.push(t <= c);
    }
    let x = DMatrix::from_row_slice(n, p, &rows);
    let names = (1..=p).map(|k| format!("X{k}")).collect();
    Ok((SurvivalDataset::new(x, y, delta, Some(names))?, truth))
}

/// Monte Carlo estimate of `P(δ = 0)` from `n_mc` draws.
pub fn censoring_rate(setting: &SimSetting, n_mc: usize) -> Result<f64> {
    censoring_rate_with(setting, n_mc, CensoringOverride::default())
}

pub fn censoring_rate_with(setting: &SimSetting, n_mc: usize, ov: CensoringOverride) -> Result<f64> {
    setting.validate()?;
    if n_mc == 0 {
        return Err(SdrError::Config("need at least one Monte Carlo draw".into()));
    }
    let mut rng = setting.rng();
    let mut x = vec![0.0; setting.p];
    let mut censored = 0usize;
    for _ in 0..n_mc {
        let (t, c) = draw_subject(setting.id, &mut rng, &mut x, ov);
        if !(t <= c) {
            censored += 1;
        }
    }
    Ok(censored as f64 / n_mc as f64)
}
