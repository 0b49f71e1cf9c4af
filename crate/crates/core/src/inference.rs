//! Bootstrap standard errors for block-identity parameters, normal-theory
//! intervals, and simulation coverage experiments.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{EstimatorKind, SurvivalDataset};
use crate::error::{Result, SdrError};
use crate::estimators::{fit, normalize_block_identity, FitConfig};
use crate::simulate::{generate, SimSetting};

/// Scale factor making the MAD consistent for a normal standard deviation.
pub const MAD_SCALE: f64 = 1.4826;

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// `1.4826 × median |v − median(v)|`.
pub fn mad_sd(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    let m = median(&mut v);
    let mut dev: Vec<f64> = values.iter().map(|x| (x - m).abs()).collect();
    MAD_SCALE * median(&mut dev)
}

#[derive(Clone, Debug)]
pub struct BootstrapResult {
    /// Robust standard deviation of each free parameter.
    pub sd: Vec<f64>,
    /// `(row, column)` of each free parameter in the normalized basis.
    pub index: Vec<(usize, usize)>,
    /// Free parameters of every successful replicate, in replicate order.
    pub replicates: Vec<Vec<f64>>,
    pub failed: usize,
    pub n_boot: usize,
}

/// Resamples `ds` with replacement `n_boot` times, fits, normalizes each
/// replicate at `anchor_rows` and takes the MAD scale of each free parameter.
///
/// Replicate `b` draws from stream `b` of `seed`. Replicates that fail to
/// fit or normalize are skipped; more than 10% failures is an error.
pub fn bootstrap_sd(
    ds: &SurvivalDataset,
    d: usize,
    kind: EstimatorKind,
    anchor_rows: &[usize],
    n_boot: usize,
    cfg: &FitConfig,
    seed: u64,
) -> Result<BootstrapResult> {
    bootstrap_with(ds, n_boot, seed, |sample| {
        let rep = fit(sample, d, kind, cfg)?;
        normalize_block_identity(rep.b_hat.matrix(), Some(anchor_rows))
    })
}

/// Bootstrap driver with a custom per-replicate estimator.
pub fn bootstrap_with<F>(ds: &SurvivalDataset, n_boot: usize, seed: u64, estimate: F) -> Result<BootstrapResult>
where
    F: Fn(&SurvivalDataset) -> Result<crate::data::NormalizedDirection> + Sync,
{
    if n_boot < 2 {
        return Err(SdrError::Config(format!("need at least 2 bootstrap replicates, got {n_boot}")));
    }
    let n = ds.n();
    let outcomes: Vec<Option<(Vec<f64>, Vec<(usize, usize)>)>> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let sample = ds.subset(&idx).ok()?;
            let nd = estimate(&sample).ok()?;
            let params = nd.free_parameters();
            params.iter().all(|v| v.is_finite()).then(|| (params, nd.free_parameter_index()))
        })
        .collect();
    let failed = outcomes.iter().filter(|o| o.is_none()).count();
    let ok: Vec<_> = outcomes.into_iter().flatten().collect();
    if failed * 10 > n_boot || ok.len() < 2 {
        return Err(SdrError::BootstrapFailures { failed, total: n_boot });
    }
    let index = ok[0].1.clone();
    let replicates: Vec<Vec<f64>> = ok.into_iter().map(|(v, _)| v).collect();
    let sd = (0..index.len())
        .map(|k| mad_sd(&replicates.iter().map(|r| r[k]).collect::<Vec<_>>()))
        .collect();
    Ok(BootstrapResult { sd, index, replicates, failed, n_boot })
}

/// `estimate ± z_{(1+level)/2} · sd`, one interval per entry.
pub fn confidence_intervals(estimate: &[f64], sds: &[f64], level: f64) -> Result<Vec<(f64, f64)>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(SdrError::Config(format!("confidence level must be in (0, 1), got {level}")));
    }
    if estimate.len() != sds.len() {
        return Err(SdrError::Dimension(format!("{} estimates, {} sds", estimate.len(), sds.len())));
    }
    let z = Normal::standard().inverse_cdf(0.5 * (1.0 + level));
    Ok(estimate.iter().zip(sds).map(|(e, s)| (e - z * s, e + z * s)).collect())
}

/// Anchor rows used for each simulation setting's parameter tables.
pub fn default_setting_anchors(id: u8) -> Vec<usize> {
    match id {
        1 => vec![0],
        4 => vec![0, 2],
        _ => vec![0, 1],
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CoverageRow {
    /// `beta_<row>` for `d = 1`, `beta_<row>_<column>` otherwise (1-based).
    pub parameter: String,
    pub row: usize,
    pub column: usize,
    pub truth: f64,
    pub mean: f64,
    pub sd: f64,
    pub sd_hat: f64,
    pub coverage: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CoverageTable {
    pub kind: EstimatorKind,
    pub n_reps: usize,
    pub n_boot: usize,
    pub level: f64,
    pub anchor_rows: Vec<usize>,
    pub rows: Vec<CoverageRow>,
    /// Skipped bootstrap replicates summed over outer replications.
    pub bootstrap_failures: usize,
}

impl CoverageTable {
    pub fn row(&self, parameter: &str) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| r.parameter == parameter)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| SdrError::Config(format!("failed to write table: {e}"));
        for row in &self.rows {
            w.serialize(row).map_err(io)?;
        }
        w.flush().map_err(|e| SdrError::Io { path: "<table>".into(), source: e })?;
        Ok(())
    }
}

fn parameter_name(row: usize, col: usize, d: usize) -> String {
    if d == 1 {
        format!("beta_{}", row + 1)
    } else {
        format!("beta_{}_{}", row + 1, col + 1)
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Per-replication seed for the bootstrap inside outer replication `r`.
fn replicate_seed(seed: u64, r: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB007_5EED);
    rng.set_stream(r);
    rng.random()
}

/// Runs `n_reps` simulated datasets (streams `0..n_reps` of
/// `setting.seed`), each with its own bootstrap, and summarizes the free
/// parameters: mean, empirical sd, mean bootstrap sd and 95% coverage.
pub fn coverage_experiment(
    setting: &SimSetting,
    kind: EstimatorKind,
    n_reps: usize,
    n_boot: usize,
    cfg: &FitConfig,
    anchor_rows: Option<&[usize]>,
) -> Result<CoverageTable> {
    let level = 0.95;
    let truth = setting.truth()?;
    let d = truth.d_true;
    let anchors = anchor_rows.map(<[usize]>::to_vec).unwrap_or_else(|| default_setting_anchors(setting.id));
    let true_norm = normalize_block_identity(truth.b_true.matrix(), Some(&anchors))?;
    let true_params = true_norm.free_parameters();
    let index = true_norm.free_parameter_index();
    let k = true_params.len();

    let mut estimates = Vec::with_capacity(n_reps);
    let mut sds = Vec::with_capacity(n_reps);
    let mut failures = 0;
    for r in 0..n_reps {
        let (ds, _) = generate(&setting.with_stream(r as u64))?;
        let rep = fit(&ds, d, kind, cfg)?;
        let est = normalize_block_identity(rep.b_hat.matrix(), Some(&anchors))?.free_parameters();
        let boot = bootstrap_sd(&ds, d, kind, &anchors, n_boot, cfg, replicate_seed(setting.seed, r as u64))?;
        failures += boot.failed;
        estimates.push(est);
        sds.push(boot.sd);
    }

    let mut rows = Vec::with_capacity(k);
    for j in 0..k {
        let vals: Vec<f64> = estimates.iter().map(|e| e[j]).collect();
        let mut covered = 0;
        for (e, s) in estimates.iter().zip(&sds) {
            let ci = confidence_intervals(&[e[j]], &[s[j]], level)?[0];
            if ci.0 <= true_params[j] && true_params[j] <= ci.1 {
                covered += 1;
            }
        }
        let (row, column) = index[j];
        rows.push(CoverageRow {
            parameter: parameter_name(row, column, d),
            row,
            column,
            truth: true_params[j],
            mean: vals.iter().sum::<f64>() / n_reps as f64,
            sd: sample_sd(&vals),
            sd_hat: sds.iter().map(|s| s[j]).sum::<f64>() / n_reps as f64,
            coverage: covered as f64 / n_reps as f64,
        });
    }
    Ok(CoverageTable { kind, n_reps, n_boot, level, anchor_rows: anchors, rows, bootstrap_failures: failures })
}
