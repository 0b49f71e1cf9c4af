//! The Cayley-curve optimizer on real GMM objectives: gradient accuracy, a
//! step-by-step replay audit of recorded runs, feasibility and determinism.

mod common;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use survsdr::data::orthonormality_error;
use survsdr::estimators::{fit_cpsir, FitConfig};
use survsdr::objectives::GmmObjective;
use survsdr::simulate::{generate, SimSetting};
use survsdr::stiefel::{cayley_step, numeric_gradient, optimize, skew_matrix, FitReport};
use survsdr::{EstimatorKind, NonparamConfig, OptimConfig, SurvivalDataset};

fn objective<'a>(ds: &'a SurvivalDataset, kind: EstimatorKind) -> GmmObjective<'a> {
    GmmObjective::new(ds, kind, &NonparamConfig::default()).unwrap()
}

#[test]
fn gradient_is_stable_under_step_refinement() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (id, kind, d) in [(1, EstimatorKind::IrCp, 1), (2, EstimatorKind::IrSemi, 2)] {
        let (ds, _) = generate(&SimSetting::new(id, 6, 50, 3)).unwrap();
        let obj = objective(&ds, kind);
        let f = |b: &DMatrix<f64>| obj.value(b);
        let b = common::random_basis(6, d, &mut rng);
        let g1 = numeric_gradient(&f, &b, 1e-5).unwrap();
        let g2 = numeric_gradient(&f, &b, 1e-6).unwrap();
        let big = g1.amax();
        for (x, y) in g1.iter().zip(g2.iter()) {
            if x.abs() >= 0.1 * big {
                assert!((x - y).abs() <= 1e-3 * x.abs(), "{kind:?}: {x} vs {y}");
            }
        }
    }
}

/// Re-derives every recorded step from its starting iterate.
fn replay(report: &FitReport, b0: &DMatrix<f64>, f: &(dyn Fn(&DMatrix<f64>) -> f64 + Sync), cfg: &OptimConfig) {
    let fg = |b: &DMatrix<f64>| Ok(f(b));
    let mut b = b0.clone();
    assert_eq!(report.objective_trace.len(), report.steps.len() + 1);
    for (k, step) in report.steps.iter().enumerate() {
        let f0 = report.objective_trace[k];
        assert_eq!(step.f_before, f0);
        let g = numeric_gradient(&fg, &b, cfg.fd_step).unwrap();
        let a = skew_matrix(&b, &g);
        let slope = g.dot(&-(&a * &b));
        assert!((slope - step.slope).abs() <= 1e-12 * slope.abs(), "step {k}: slope");
        assert!(slope < 0.0);
        assert!(step.tau > cfg.tau_min && step.tau <= cfg.tau_init * 1024.0, "step {k}: tau {}", step.tau);
        let next = cayley_step(&b, &g, step.tau).unwrap();
        assert!(orthonormality_error(&next) <= 1e-10);
        let fv = f(&next);
        assert_eq!(fv, step.f_after, "step {k}: objective replay");
        assert_eq!(fv, report.objective_trace[k + 1]);
        // Armijo sufficient decrease as stated
        assert!(fv <= f0 + cfg.wolfe_c1 * step.tau * slope, "step {k}: Armijo");
        assert!(fv <= f0 + 1e-12, "step {k}: monotone");
        b = next;
    }
    assert_eq!(&b, report.b_hat.matrix());
}

#[test]
fn recorded_runs_pass_the_replay_audit() {
    for (id, kind, d, n, iters) in [
        (1, EstimatorKind::Forward, 1, 200, 60),
        (1, EstimatorKind::IrCp, 1, 200, 60),
        (2, EstimatorKind::IrSemi, 2, 150, 15),
    ] {
        let (ds, _) = generate(&SimSetting::new(id, 6, n, 4)).unwrap();
        let init = fit_cpsir(&ds, d, &FitConfig::default()).unwrap().b;
        let obj = objective(&ds, kind);
        let cfg = OptimConfig { max_iter: iters, ..OptimConfig::default() };
        let report = optimize(&|b: &DMatrix<f64>| obj.value(b), &init, &cfg).unwrap();
        assert!(!report.steps.is_empty());
        assert!(report.max_feasibility_error <= 1e-10);
        replay(&report, init.matrix(), &|b| obj.value(b).unwrap(), &cfg);
    }
}

#[test]
fn optimizer_is_bit_deterministic() {
    let (ds, _) = generate(&SimSetting::new(3, 6, 120, 5)).unwrap();
    let init = fit_cpsir(&ds, 2, &FitConfig::default()).unwrap().b;
    let obj = objective(&ds, EstimatorKind::IrCp);
    let cfg = OptimConfig { max_iter: 20, ..OptimConfig::default() };
    let f = |b: &DMatrix<f64>| obj.value(b);
    let r1 = optimize(&f, &init, &cfg).unwrap();
    let r2 = optimize(&f, &init, &cfg).unwrap();
    assert_eq!(r1.b_hat.matrix(), r2.b_hat.matrix());
    assert_eq!(r1.objective_trace, r2.objective_trace);
    assert_eq!(r1.iterations, r2.iterations);
    let taus = |r: &FitReport| r.steps.iter().map(|s| s.tau).collect::<Vec<_>>();
    assert_eq!(taus(&r1), taus(&r2));
}

#[test]
fn forward_fit_on_setting_one_is_fast() {
    let (ds, _) = generate(&SimSetting::new(1, 6, 400, 6)).unwrap();
    let report = survsdr::estimators::fit(&ds, 1, EstimatorKind::Forward, &FitConfig::default()).unwrap();
    assert!(report.iterations <= 500);
    assert!(report.wall_time < 5.0, "{} s", report.wall_time);
}
