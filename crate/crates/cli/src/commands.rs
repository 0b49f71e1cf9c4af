use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;
use survsdr::data::{load_csv, standardize, ColumnSpec};
use survsdr::estimators::{default_anchor_rows, fit as fit_kind, normalize_block_identity};
use survsdr::inference::{bootstrap_sd, confidence_intervals, coverage_experiment};
use survsdr::metrics;
use survsdr::simulate::{generate, SimSetting};
use survsdr::SurvivalDataset;

use crate::output::{num, write_loadings, write_table, OutDir};
use crate::{BootstrapArgs, CliError, Common, DataArgs, FitArgs, Method, SimulateArgs};

fn init_threads(common: &Common) -> Result<(), CliError> {
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    Ok(())
}

fn check_method(method: Method, d: usize) -> Result<(), CliError> {
    method.kind().check_dimension(d).map_err(|e| CliError::Usage(e.to_string()))
}

/// 1-based flag values to 0-based rows.
fn anchor_rows(anchors: &Option<Vec<usize>>) -> Result<Option<Vec<usize>>, CliError> {
    match anchors {
        None => Ok(None),
        Some(rows) if rows.contains(&0) => Err(CliError::Usage("--anchors are 1-based row numbers".into())),
        Some(rows) => Ok(Some(rows.iter().map(|r| r - 1).collect())),
    }
}

fn load(data: &DataArgs) -> Result<(SurvivalDataset, bool), CliError> {
    let path = data.data.as_ref().ok_or_else(|| CliError::Usage("--data is required".into()))?;
    let spec = ColumnSpec { time: data.time.clone(), status: data.status.clone(), covariates: data.covariates.clone() };
    let ds = load_csv(path, &spec)?;
    if data.standardize {
        Ok((standardize(&ds)?.0, true))
    } else {
        Ok((ds, false))
    }
}

fn covariate_names(ds: &SurvivalDataset) -> Vec<String> {
    (0..ds.p()).map(|k| ds.name(k)).collect()
}

fn parameter_name(row: usize, col: usize, d: usize) -> String {
    if d == 1 {
        format!("beta_{}", row + 1)
    } else {
        format!("beta_{}_{}", row + 1, col + 1)
    }
}

fn one_based(rows: &[usize]) -> Vec<usize> {
    rows.iter().map(|r| r + 1).collect()
}

pub fn fit(a: &FitArgs) -> Result<(), CliError> {
    init_threads(&a.common)?;
    check_method(a.method, a.d)?;
    let anchors = anchor_rows(&a.anchors)?;
    let (ds, standardized) = load(&a.data)?;
    let start = Instant::now();
    let report = fit_kind(&ds, a.d, a.method.kind(), &a.tuning.fit_config())?;
    let b = report.b_hat.matrix();
    let norm = normalize_block_identity(b, anchors.as_deref())?;

    let out = OutDir::create(&a.common.out)?;
    let names = covariate_names(&ds);
    write_loadings(&out, "b_hat.csv", &names, b, None)?;
    write_loadings(&out, "b_normalized.csv", &names, &norm.b_norm, Some(&norm.anchor_rows))?;

    let z = ds.project(b);
    let mut header: Vec<String> = (1..=a.d).map(|c| format!("z{c}")).collect();
    header.push("time".into());
    header.push("status".into());
    let rows: Vec<Vec<String>> = (0..ds.n())
        .map(|i| {
            let mut r: Vec<String> = z.row(i).iter().map(|&v| num(v)).collect();
            r.push(num(ds.y()[i]));
            r.push((ds.delta()[i] as u8).to_string());
            r
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(&out, "projected.csv", &header, &rows)?;

    let init = report.init.as_ref();
    out.manifest(
        "fit",
        a,
        json!({
            "n": ds.n(),
            "p": ds.p(),
            "events": ds.n_events(),
            "standardized": standardized,
            "iterations": report.iterations,
            "converged": report.converged,
            "stalled": report.stalled,
            "final_objective": report.final_objective(),
            "max_feasibility_error": report.max_feasibility_error,
            "init_method": init.map(|i| i.method.clone()),
            "init_singular_values": init.map(|i| i.singular_values.clone()),
            "anchor_rows": one_based(&norm.anchor_rows),
            "wall_time_seconds": start.elapsed().as_secs_f64(),
        }),
    )?;
    println!(
        "{} d={} on {} subjects: {} iterations, converged={}; wrote {}",
        a.method.kind(),
        a.d,
        ds.n(),
        report.iterations,
        report.converged,
        a.common.out.display()
    );
    Ok(())
}

struct RepResult {
    frob: f64,
    trace_corr: f64,
    canon_corr: f64,
    iterations: usize,
    converged: bool,
    seconds: f64,
}

fn mean_sd(v: &[f64]) -> (f64, Option<f64>) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    if v.len() < 2 {
        return (m, None);
    }
    let ss: f64 = v.iter().map(|x| (x - m).powi(2)).sum();
    (m, Some((ss / (v.len() - 1) as f64).sqrt()))
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    init_threads(&a.common)?;
    if a.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let base = SimSetting::new(a.setting, a.p, a.n, a.common.seed);
    base.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let truth = base.truth()?;
    let mut methods: Vec<Method> = Vec::new();
    for &m in &a.methods {
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    // a one-direction method is fitted with d = 1 and scored against the full truth
    let fitted_d = |m: Method| if m == Method::Forward { 1 } else { truth.d_true };
    let cfg = a.tuning.fit_config();
    let out = OutDir::create(&a.common.out)?;
    let start = Instant::now();

    if a.write_data {
        let dir = OutDir::create(&out.path("data"))?;
        for r in 0..a.reps {
            let (ds, _) = generate(&base.with_stream(r as u64))?;
            ds.write_csv(dir.file(&format!("rep_{}.csv", r + 1))?)?;
        }
    }

    let jobs: Vec<(usize, usize)> = (0..methods.len()).flat_map(|m| (0..a.reps).map(move |r| (m, r))).collect();
    let results: Vec<Result<RepResult, String>> = jobs
        .par_iter()
        .map(|&(m, r)| {
            let method = methods[m];
            let run = || -> Result<RepResult, String> {
                let (ds, truth) = generate(&base.with_stream(r as u64)).map_err(|e| e.to_string())?;
                let t = Instant::now();
                let rep = fit_kind(&ds, fitted_d(method), method.kind(), &cfg).map_err(|e| e.to_string())?;
                let seconds = t.elapsed().as_secs_f64();
                let s = metrics::score(&ds, truth.b_true.matrix(), rep.b_hat.matrix()).map_err(|e| e.to_string())?;
                Ok(RepResult {
                    frob: s.frob,
                    trace_corr: s.trace_corr,
                    canon_corr: s.canon_corr,
                    iterations: rep.iterations,
                    converged: rep.converged,
                    seconds,
                })
            };
            catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("replication panicked".into()))
        })
        .collect();

    let mut rep_rows = Vec::new();
    let mut summary_rows = Vec::new();
    let mut timing_rows = Vec::new();
    let mut failures = Vec::new();
    let mut display = Vec::new();
    for (m, &method) in methods.iter().enumerate() {
        let mut ok: Vec<&RepResult> = Vec::new();
        for (&(jm, r), res) in jobs.iter().zip(&results) {
            if jm != m {
                continue;
            }
            match res {
                Ok(x) => {
                    rep_rows.push(vec![
                        method.kind().to_string(),
                        (r + 1).to_string(),
                        num(x.frob),
                        num(x.trace_corr),
                        num(x.canon_corr),
                        x.iterations.to_string(),
                        x.converged.to_string(),
                    ]);
                    ok.push(x);
                }
                Err(e) => failures.push(format!("{} replication {}: {e}", method.kind(), r + 1)),
            }
        }
        if ok.is_empty() {
            continue;
        }
        let col = |f: fn(&RepResult) -> f64| mean_sd(&ok.iter().map(|x| f(x)).collect::<Vec<_>>());
        let (fm, fs) = col(|x| x.frob);
        let (tm, ts) = col(|x| x.trace_corr);
        let (cm, cs) = col(|x| x.canon_corr);
        let (sm, ss) = col(|x| x.seconds);
        summary_rows.push(vec![
            method.kind().to_string(),
            a.setting.to_string(),
            a.p.to_string(),
            a.n.to_string(),
            fitted_d(method).to_string(),
            ok.len().to_string(),
            num(fm),
            opt(fs),
            num(tm),
            opt(ts),
            num(cm),
            opt(cs),
        ]);
        timing_rows.push(vec![method.kind().to_string(), ok.len().to_string(), num(sm), opt(ss)]);
        display.push((method, [(fm, fs), (tm, ts), (cm, cs)]));
    }

    write_table(&out, "replications.csv", &["method", "rep", "frob", "trace_corr", "canon_corr", "iterations", "converged"], &rep_rows)?;
    write_table(
        &out,
        "summary.csv",
        &["method", "setting", "p", "n", "d", "reps", "frob_mean", "frob_sd", "trace_corr_mean", "trace_corr_sd", "canon_corr_mean", "canon_corr_sd"],
        &summary_rows,
    )?;
    write_table(&out, "timing.csv", &["method", "reps", "mean_seconds", "sd_seconds"], &timing_rows)?;
    out.manifest(
        "simulate",
        a,
        json!({
            "true_d": truth.d_true,
            "fitted_d": methods.iter().map(|&m| (m.kind().to_string(), fitted_d(m))).collect::<std::collections::BTreeMap<_, _>>(),
            "failures": failures,
            "wall_time_seconds": start.elapsed().as_secs_f64(),
        }),
    )?;

    let scale = if a.display_scale { 100.0 } else { 1.0 };
    let cell = |(m, s): (f64, Option<f64>)| match s {
        Some(s) if a.display_scale => format!("{:.0} ({:.0})", m * scale, s * scale),
        Some(s) => format!("{m:.3} ({s:.3})"),
        None if a.display_scale => format!("{:.0}", m * scale),
        None => format!("{m:.3}"),
    };
    println!("setting {} p={} n={} reps={}{}", a.setting, a.p, a.n, a.reps, if a.display_scale { "  (x100)" } else { "" });
    println!("{:<8} {:>14} {:>14} {:>14}", "method", "Frob", "Tr", "CCor");
    for (method, cols) in display {
        println!("{:<8} {:>14} {:>14} {:>14}", method.kind().to_string(), cell(cols[0]), cell(cols[1]), cell(cols[2]));
    }

    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("{} replication(s) failed: {}", failures.len(), failures.join("; "))))
    }
}

pub fn bootstrap(a: &BootstrapArgs) -> Result<(), CliError> {
    init_threads(&a.common)?;
    let anchors = anchor_rows(&a.anchors)?;
    let cfg = a.tuning.fit_config();
    let start = Instant::now();
    match (a.setting, &a.data.data) {
        (Some(id), _) => {
            let setting = SimSetting::new(id, a.p, a.n, a.common.seed);
            setting.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let d_true = setting.truth()?.d_true;
            if a.d.is_some_and(|d| d != d_true) {
                return Err(CliError::Usage(format!("setting {id} has d = {d_true}")));
            }
            check_method(a.method, d_true)?;
            if a.level != 0.95 {
                return Err(CliError::Usage("coverage studies use 95% intervals; drop --level".into()));
            }
            let tab = coverage_experiment(&setting, a.method.kind(), a.reps, a.n_boot, &cfg, anchors.as_deref())?;
            let out = OutDir::create(&a.common.out)?;
            tab.write_csv(out.file("coverage.csv")?)?;
            out.manifest(
                "bootstrap",
                a,
                json!({
                    "source": "setting",
                    "anchor_rows": one_based(&tab.anchor_rows),
                    "bootstrap_failures": tab.bootstrap_failures,
                    "wall_time_seconds": start.elapsed().as_secs_f64(),
                }),
            )?;
            println!("{:<10} {:>8} {:>8} {:>8} {:>8} {:>8}", "parameter", "truth", "mean", "sd", "sd_hat", "cover");
            for r in &tab.rows {
                println!(
                    "{:<10} {:>8.3} {:>8.4} {:>8.4} {:>8.4} {:>8.3}",
                    r.parameter, r.truth, r.mean, r.sd, r.sd_hat, r.coverage
                );
            }
            Ok(())
        }
        (None, Some(_)) => {
            let d = a.d.ok_or_else(|| CliError::Usage("--d is required with --data".into()))?;
            check_method(a.method, d)?;
            let (ds, standardized) = load(&a.data)?;
            let report = fit_kind(&ds, d, a.method.kind(), &cfg)?;
            let b = report.b_hat.matrix();
            let rows = match anchors {
                Some(r) => r,
                None => default_anchor_rows(b)?,
            };
            let norm = normalize_block_identity(b, Some(&rows))?;
            let est = norm.free_parameters();
            let index = norm.free_parameter_index();
            let boot = bootstrap_sd(&ds, d, a.method.kind(), &rows, a.n_boot, &cfg, a.common.seed)?;
            let ci = confidence_intervals(&est, &boot.sd, a.level)?;

            let out = OutDir::create(&a.common.out)?;
            let names: Vec<String> = index.iter().map(|&(r, c)| parameter_name(r, c, d)).collect();
            let table: Vec<Vec<String>> = (0..est.len())
                .map(|j| {
                    vec![
                        names[j].clone(),
                        ds.name(index[j].0),
                        (index[j].0 + 1).to_string(),
                        (index[j].1 + 1).to_string(),
                        num(est[j]),
                        num(boot.sd[j]),
                        num(ci[j].0),
                        num(ci[j].1),
                    ]
                })
                .collect();
            write_table(&out, "bootstrap.csv", &["parameter", "variable", "row", "column", "estimate", "sd", "lower", "upper"], &table)?;
            let header: Vec<&str> = names.iter().map(String::as_str).collect();
            let reps: Vec<Vec<String>> = boot.replicates.iter().map(|r| r.iter().map(|&v| num(v)).collect()).collect();
            write_table(&out, "replicates.csv", &header, &reps)?;
            out.manifest(
                "bootstrap",
                a,
                json!({
                    "source": "data",
                    "n": ds.n(),
                    "p": ds.p(),
                    "standardized": standardized,
                    "anchor_rows": one_based(&rows),
                    "bootstrap_failures": boot.failed,
                    "wall_time_seconds": start.elapsed().as_secs_f64(),
                }),
            )?;
            println!("{} bootstrap replicates ({} failed); wrote {}", a.n_boot, boot.failed, a.common.out.display());
            Ok(())
        }
        (None, None) => Err(CliError::Usage("give either --data or --setting".into())),
    }
}
