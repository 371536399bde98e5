//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `SCNS_ACCEPTANCE=1,4` restricts the run to the listed criteria.

use std::f64::consts::{PI, TAU};
use std::process::ExitCode;
use std::time::Instant;

use scns_core::field::{make_grid, new_state, ModelParams, State};
use scns_core::functionals::{enbounds_check, evaluate, FunctionalReport};
use scns_core::noise::{build_noise, NoiseBasis, NoiseSpec};
use scns_core::solver::{integrate_path, paired_paths, ObserverConfig, StepSpec, TrajectoryRecord};
use scns_core::stats::{
    dissipation_budget, low_mach_scan, martingale_tail, run_ensemble, stationarity_diagnostic, tightness_report,
    time_averaged_measure, EnsembleConfig, InitialProfile, Observable,
};

const A: f64 = 1.0;
const SIGMA_SUP_SQ: f64 = 0.1;
const N_FORCED: usize = 128;
const DT_FORCED: f64 = 1e-4;
const STRIDE: u64 = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn params(a: f64) -> ModelParams<f64> {
    ModelParams::new(a).unwrap()
}

fn forced_basis(n: usize) -> NoiseBasis<f64> {
    NoiseBasis::with_sup_norm_sq(&make_grid(n).unwrap(), 4, 3.0, SIGMA_SUP_SQ).unwrap()
}

fn observer(stride: u64) -> ObserverConfig {
    ObserverConfig {
        sample_stride: stride,
        snapshot_stride: None,
    }
}

fn forced_ensemble(m: usize, horizon: f64, check_times: Vec<f64>) -> EnsembleConfig {
    let basis = forced_basis(N_FORCED);
    EnsembleConfig {
        n_cells: N_FORCED,
        a: A,
        step: StepSpec::new(DT_FORCED).unwrap(),
        noise: NoiseSpec {
            k: 4,
            sigma0: basis.sigma0(),
            p: 3.0,
        },
        n_trajectories: m,
        horizon,
        burn_in: 0.0,
        sample_stride: STRIDE,
        snapshot_stride: None,
        seed: 2024,
        init: InitialProfile::default(),
        check_times,
        workers: None,
    }
}

fn smooth_state(n: usize) -> State<f64> {
    State::from_profiles(
        &make_grid::<f64>(n).unwrap(),
        |x| 1.0 + 0.2 * (TAU * x).sin(),
        |x| 0.1 * (PI * x).sin(),
    )
    .unwrap()
}

fn deterministic_residual(n: usize, dt: f64, horizon: f64) -> TrajectoryRecord {
    let init = smooth_state(n);
    let basis = build_noise(init.grid(), 4, 0.0, 3.0).unwrap();
    integrate_path(
        &init,
        &params(A),
        &StepSpec::new(dt).unwrap(),
        &basis,
        0,
        0,
        horizon,
        observer(1000),
    )
    .unwrap()
}

fn c1_entropy_balance() -> Outcome {
    let coarse = deterministic_residual(256, 1e-5, 0.1).totals.balance_residual;
    let fine = deterministic_residual(256, 5e-6, 0.1).totals.balance_residual;
    let ratio = coarse / fine;
    Outcome {
        pass: (1.6..=2.4).contains(&ratio),
        detail: format!("residual {coarse:.3e} -> {fine:.3e}, ratio {ratio:.4} in [1.6, 2.4]"),
    }
}

fn c2_conservation() -> Outcome {
    let g = make_grid::<f64>(N_FORCED).unwrap();
    let obs = ObserverConfig {
        sample_stride: STRIDE,
        snapshot_stride: Some(1000),
    };
    let rec = integrate_path(
        &State::equilibrium(&g),
        &params(A),
        &StepSpec::new(DT_FORCED).unwrap(),
        &forced_basis(N_FORCED),
        7,
        0,
        1e5 * DT_FORCED,
        obs,
    )
    .unwrap();
    let t = &rec.totals;
    let snaps_ok = rec
        .snapshots
        .iter()
        .all(|s| enbounds_check(&State::<f64>::from_snapshot(s).unwrap(), &params(A)).holds());
    let pass =
        rec.steps == 100_000 && t.max_mass_error <= 1e-11 && t.min_rho > 0.0 && t.bounds_violated == 0 && snaps_ok;
    Outcome {
        pass,
        detail: format!(
            "steps {}, max|mass-1| {:.2e} <= 1e-11, min rho {:.4}, bound checks {}/{} ok, {} snapshots ok: {snaps_ok}",
            rec.steps,
            t.max_mass_error,
            t.min_rho,
            t.bounds_checked - t.bounds_violated,
            t.bounds_checked,
            rec.snapshots.len()
        ),
    }
}

fn c3_uniqueness() -> Outcome {
    let n = 128;
    let init = smooth_state(n);
    let basis = forced_basis(n);
    let spec = StepSpec::new(1e-5).unwrap();
    let same = paired_paths(&init, &init, &params(A), &spec, &basis, 11, 0.05, observer(100)).unwrap();
    let bitwise = same.first == same.second;

    let dx = init.grid().dx();
    let rho2: Vec<f64> = init
        .rho()
        .iter()
        .enumerate()
        .map(|(j, r)| r + 1e-6 * 2f64.sqrt() * (TAU * (j as f64 + 0.5) * dx).cos())
        .collect();
    let (init2, _) = new_state(init.grid(), &rho2, init.u()).unwrap();
    let run = paired_paths(&init, &init2, &params(A), &spec, &basis, 11, 0.05, observer(100)).unwrap();
    let worst = run
        .series
        .iter()
        .map(|s| s.relative_entropy / (2.0 * s.envelope))
        .fold(0.0, f64::max);
    let last = run.series.last().unwrap();
    let pass = bitwise && worst <= 1.0 && last.relative_entropy <= 1e-9 && (last.t - 0.05).abs() < 1e-12;
    Outcome {
        pass,
        detail: format!(
            "identical runs bitwise equal: {bitwise}; max H_r/(2 envelope) {worst:.3e} <= 1; H_r(0.05) {:.3e} <= 1e-9",
            last.relative_entropy
        ),
    }
}

fn c4_energy_inequality() -> Outcome {
    let cfg = forced_ensemble(50, 20.0, vec![5.0, 10.0, 20.0]);
    let run = run_ensemble(&cfg).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for v in &run.summary.energy {
        let rhs = run.summary.initial_energy + 0.05 * v.t + 3.0 * v.lhs_stderr;
        pass &= v.lhs_mean <= rhs;
        parts.push(format!("t={}: {:.4e} <= {:.4e}", v.t, v.lhs_mean, rhs));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn long_record() -> TrajectoryRecord {
    let g = make_grid::<f64>(N_FORCED).unwrap();
    integrate_path(
        &State::equilibrium(&g),
        &params(A),
        &StepSpec::new(DT_FORCED).unwrap(),
        &forced_basis(N_FORCED),
        2024,
        0,
        200.0,
        observer(STRIDE),
    )
    .unwrap()
}

fn c5_budget(rec: &TrajectoryRecord) -> Outcome {
    let m = time_averaged_measure(rec, 50.0, 200.0).unwrap();
    let v = dissipation_budget(&m, A, forced_basis(N_FORCED).sup_norm_sq(), 0.1);
    Outcome {
        pass: v.holds,
        detail: format!(
            "mean {:.4e} (se {:.1e}) <= {:.4e} over {} samples",
            v.mean,
            v.stderr,
            v.bound(),
            m.len()
        ),
    }
}

fn c6_martingale() -> Outcome {
    let cfg = forced_ensemble(200, 10.0, vec![]);
    let run = run_ensemble(&cfg).unwrap();
    let excess: Vec<f64> = run
        .records
        .iter()
        .map(|r| r.totals.psi_shift_sup - r.totals.initial_energy)
        .collect();
    let rep = martingale_tail(&excess, A, run.summary.sigma_sup_sq, &[1.0, 2.0, 3.0]).unwrap();
    let max_excess = excess.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let parts: Vec<String> = rep
        .rows
        .iter()
        .map(|r| format!("R={}: {:.3} <= {:.3e}+2*{:.3}", r.r, r.frequency, r.bound, r.stderr))
        .collect();
    Outcome {
        pass: rep.holds(2.0),
        detail: format!(
            "gamma0 {:.3}, max excess {max_excess:.3e}; {}",
            rep.gamma0,
            parts.join("; ")
        ),
    }
}

fn c7_tightness(rec: &TrajectoryRecord) -> Outcome {
    let m = time_averaged_measure(rec, 50.0, 200.0).unwrap();
    let rep = tightness_report(&m, A, forced_basis(N_FORCED).sup_norm_sq(), &[1.0, 2.0]);
    let parts: Vec<String> = rep
        .rows
        .iter()
        .map(|r| {
            format!(
                "R={}: mu(C)={:.4} >= {:.4}, mu(K)={:.4}",
                r.r,
                r.mu_c,
                r.bound - 0.05,
                r.mu_k
            )
        })
        .collect();
    Outcome {
        pass: rep.holds(0.05),
        detail: parts.join("; "),
    }
}

fn c8_stationarity() -> Outcome {
    let g = make_grid::<f64>(N_FORCED).unwrap();
    let basis = forced_basis(N_FORCED);
    let mut decreased = 0;
    let mut parts = Vec::new();
    for seed in 1..=5u64 {
        let rec = integrate_path(
            &State::equilibrium(&g),
            &params(A),
            &StepSpec::new(DT_FORCED).unwrap(),
            &basis,
            seed,
            0,
            75.0,
            observer(STRIDE),
        )
        .unwrap();
        let short = stationarity_diagnostic(&rec, Observable::GradUSq, 0.0, 25.0, 12.5).unwrap();
        let long = stationarity_diagnostic(&rec, Observable::GradUSq, 0.0, 50.0, 25.0).unwrap();
        if long < short {
            decreased += 1;
        }
        parts.push(format!("{short:.4}->{long:.4}"));
    }
    Outcome {
        pass: decreased >= 4,
        detail: format!("KS decreased in {decreased}/5 seeds (>= 4): {}", parts.join(", ")),
    }
}

fn c9_low_mach() -> Outcome {
    let mut cfg = forced_ensemble(10, 50.0, vec![]);
    cfg.burn_in = 10.0;
    let table = low_mach_scan(&cfg, &[1.0, 2.0, 4.0, 8.0], 1.0).unwrap();
    let parts: Vec<String> = table
        .rows
        .iter()
        .map(|r| format!("A={}: {:.3e}+-{:.1e}", r.a, r.rho_dev, r.rho_dev_se))
        .collect();
    Outcome {
        pass: table.rho_nonincreasing(2.0),
        detail: format!("||rho-1|| column {}", parts.join(", ")),
    }
}

fn richardson(values: &[f64]) -> Vec<f64> {
    values.windows(3).map(|w| (w[0] - w[1]) / (w[1] - w[2])).collect()
}

fn c10_refinement() -> Outcome {
    let field = |n: usize| -> FunctionalReport<f64> {
        let s = State::from_profiles(
            &make_grid::<f64>(n).unwrap(),
            |x| 1.0 + 0.3 * (TAU * x).cos(),
            |x| 0.2 * (PI * x).sin(),
        )
        .unwrap();
        evaluate(&s, &params(A))
    };
    let reps: Vec<_> = [32, 64, 128, 256].into_iter().map(field).collect();
    let pick: [(&str, fn(&FunctionalReport<f64>) -> f64); 6] = [
        ("H", |r| r.entropy),
        ("E", |r| r.energy),
        ("grad_u_sq", |r| r.grad_u_sq),
        ("grad_logrho_sq", |r| r.grad_logrho_sq),
        ("grad_rho_sq", |r| r.grad_rho_sq),
        ("weighted_h2_u", |r| r.weighted_h2_u),
    ];
    let mut pass = true;
    let mut worst = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, f) in pick {
        for q in richardson(&reps.iter().map(f).collect::<Vec<_>>()) {
            pass &= (3.6..=4.4).contains(&q);
            worst = (worst.0.min(q), worst.1.max(q));
        }
    }

    let dts = [4e-5, 2e-5, 1e-5];
    let recs: Vec<_> = dts.iter().map(|&dt| deterministic_residual(64, dt, 0.05)).collect();
    let resid: Vec<f64> = recs.iter().map(|r| r.totals.balance_residual).collect();
    let resid_ratios: Vec<f64> = resid.windows(2).map(|w| w[0] / w[1]).collect();
    let h_end: Vec<f64> = recs
        .iter()
        .map(|r| evaluate(&State::<f64>::from_snapshot(&r.final_state).unwrap(), &params(A)).entropy)
        .collect();
    let h_ratio = richardson(&h_end)[0];
    for q in resid_ratios.iter().chain([&h_ratio]) {
        pass &= (1.6..=2.4).contains(q);
    }
    Outcome {
        pass,
        detail: format!(
            "functional ratios in [{:.3}, {:.3}] within [3.6, 4.4]; residual ratios {:.3}, {:.3} and H(T) ratio {h_ratio:.3} within [1.6, 2.4]",
            worst.0, worst.1, resid_ratios[0], resid_ratios[1]
        ),
    }
}

fn main() -> ExitCode {
    let selected: Option<Vec<u32>> = std::env::var("SCNS_ACCEPTANCE")
        .ok()
        .map(|s: String| s.split(',').filter_map(|p| p.trim().parse().ok()).collect());
    let wanted = |k: u32| selected.as_ref().is_none_or(|s| s.contains(&k));

    let mut failures = 0;
    let mut report = |k: u32, name: &str, f: &mut dyn FnMut() -> Outcome| {
        if !wanted(k) {
            return;
        }
        let start = Instant::now();
        let o = f();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failures += 1;
        }
        println!(
            "{verdict} criterion {k:>2} {name}: {} [{:.1}s]",
            o.detail,
            start.elapsed().as_secs_f64()
        );
    };

    report(1, "deterministic entropy balance", &mut c1_entropy_balance);
    report(2, "conservation and positivity", &mut c2_conservation);
    report(3, "uniqueness and continuous dependence", &mut c3_uniqueness);
    report(4, "energy inequality in expectation", &mut c4_energy_inequality);
    let long = if wanted(5) || wanted(7) {
        Some(long_record())
    } else {
        None
    };
    if let Some(rec) = &long {
        report(5, "dissipation budget", &mut || c5_budget(rec));
        report(7, "tightness", &mut || c7_tightness(rec));
    }
    report(6, "exponential martingale tail", &mut c6_martingale);
    report(8, "stationarity proxy", &mut c8_stationarity);
    report(9, "low-Mach scan", &mut c9_low_mach);
    report(10, "refinement self-convergence", &mut c10_refinement);

    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criterion failure(s)");
        ExitCode::FAILURE
    }
}
