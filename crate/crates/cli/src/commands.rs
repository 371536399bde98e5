//! The six subcommands. Each writes its artifacts under the output
//! directory and returns its verdict rows.

use std::path::Path;

use rayon::prelude::*;

use scns_core::field::{new_state, State};
use scns_core::functionals::{relative_entropy_sandwich, VERDICT_SLACK};
use scns_core::noise::build_noise;
use scns_core::solver::{paired_paths, Checkpoint, ObserverConfig, Trajectory, TrajectoryRecord};
use scns_core::stats::{
    dissipation_budget, low_mach_scan, martingale_tail, run_ensemble, tightness_report, time_averaged_measure,
    EmpiricalMeasure,
};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{ensure_dir, trajectory_csv, write, write_report, ReportHeader, VerdictRow};

const MASS_TOL: f64 = 1e-11;
const TIGHTNESS_SLACK: f64 = 0.05;
const BUDGET_TOL: f64 = 0.1;
const TAIL_SE: f64 = 2.0;
const LOW_MACH_SE: f64 = 2.0;

fn with_pool<R: Send>(cfg: &RunConfig, f: impl FnOnce() -> R + Send) -> Result<R, CliError> {
    match cfg.workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| CliError::Config(format!("workers: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

fn trajectory_gates(rec: &TrajectoryRecord) -> Vec<VerdictRow> {
    let t = &rec.totals;
    let id = rec.trajectory;
    vec![
        VerdictRow::upper(
            format!("mass drift [traj {id}]"),
            "mass conservation",
            t.max_mass_error,
            MASS_TOL,
            0.0,
        ),
        VerdictRow::upper(format!("min density [traj {id}]"), "positivity", 0.0, t.min_rho, 0.0)
            .with_pass(t.min_rho > 0.0),
        VerdictRow::upper(
            format!("density bound violations [traj {id}]"),
            "density and energy bounds",
            t.bounds_violated as f64,
            0.0,
            0.0,
        ),
    ]
}

fn load_checkpoint(path: &Path, cfg: &RunConfig) -> Result<Checkpoint, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let ck = Checkpoint::from_json(&text)?;
    let hash = cfg.hash();
    if ck.config_hash != hash {
        return Err(CliError::Config(format!(
            "checkpoint {} belongs to config {}, not {hash}",
            path.display(),
            ck.config_hash
        )));
    }
    if ck.trajectory >= cfg.M as u64 {
        return Err(CliError::Config(format!(
            "checkpoint trajectory {} is outside 0..M",
            ck.trajectory
        )));
    }
    Ok(ck)
}

fn drive(cfg: &RunConfig, dir: &Path, mut traj: Trajectory<f64>) -> Result<TrajectoryRecord, CliError> {
    let hash = cfg.hash();
    let id = traj.id();
    let save = |traj: &Trajectory<f64>| -> Result<(), CliError> {
        let name = format!("checkpoint_{id}_{:012}.json", traj.step_index());
        write(dir, &name, &traj.checkpoint(&hash).to_json()?)?;
        Ok(())
    };
    if let Some(every) = cfg.checkpoint_steps() {
        while traj.step_index() < traj.total_steps() {
            let next = (traj.step_index() / every + 1) * every;
            traj.advance_to(next)?;
            save(&traj)?;
        }
    } else {
        traj.advance_to(traj.total_steps())?;
        save(&traj)?;
    }
    let rec = traj.finish();
    write(dir, &format!("trajectory_{id}.csv"), &trajectory_csv(&hash, &rec.rows))?;
    Ok(rec)
}

/// Runs trajectories `0..M` (or resumes one) and writes CSVs and checkpoints.
pub fn simulate(cfg: &RunConfig, resume: Option<&Path>) -> Result<Vec<VerdictRow>, CliError> {
    let dir = cfg.out.as_path();
    ensure_dir(dir)?;
    let params = cfg.params();
    let spec = cfg.step_spec();
    let basis = cfg.basis();
    let records: Vec<TrajectoryRecord> = if let Some(path) = resume {
        let ck = load_checkpoint(path, cfg)?;
        let traj = Trajectory::resume(&ck, params, spec, &basis, cfg.observer())?;
        vec![drive(cfg, dir, traj)?]
    } else {
        let init = cfg.init().build(cfg.n_cells)?;
        with_pool(cfg, || {
            (0..cfg.M as u64)
                .into_par_iter()
                .map(|id| {
                    let traj =
                        Trajectory::new(init.clone(), params, spec, &basis, cfg.seed, id, cfg.T, cfg.observer())?;
                    drive(cfg, dir, traj)
                })
                .collect::<Result<Vec<_>, CliError>>()
        })??
    };
    let verdicts: Vec<VerdictRow> = records.iter().flat_map(trajectory_gates).collect();
    let body: Vec<_> = records.iter().map(|r| (r.trajectory, r.totals)).collect();
    write_report(dir, "simulate", &ReportHeader::new(cfg), &verdicts, &body)?;
    Ok(verdicts)
}

/// Runs the ensemble and checks the expectation inequalities.
pub fn ensemble(cfg: &RunConfig) -> Result<Vec<VerdictRow>, CliError> {
    ensure_dir(&cfg.out)?;
    let run = run_ensemble(&cfg.ensemble())?;
    let s = &run.summary;
    let mut verdicts = Vec::new();
    for v in &s.entropy {
        verdicts.push(
            VerdictRow::upper(
                format!("mean H + int |u_x|^2 at t={}", v.t),
                "entropy inequality in expectation",
                v.lhs_mean,
                v.rhs,
                v.slack_se * v.lhs_stderr,
            )
            .with_pass(v.holds),
        );
    }
    for v in &s.energy {
        verdicts.push(
            VerdictRow::upper(
                format!("mean E + dissipation at t={}", v.t),
                "energy inequality in expectation",
                v.lhs_mean,
                v.rhs,
                v.slack_se * v.lhs_stderr,
            )
            .with_pass(v.holds),
        );
    }
    for m in &s.psi_moments {
        verdicts.push(
            VerdictRow::upper(
                format!("mean (sup Psi)^{}", m.m),
                "moment bounds of sup Psi",
                m.value,
                f64::INFINITY,
                0.0,
            )
            .with_pass(m.finite),
        );
    }
    write_report(&cfg.out, "ensemble", &ReportHeader::new(cfg), &verdicts, s)?;
    Ok(verdicts)
}

fn perturbed(init: &State<f64>, eps: f64) -> Result<State<f64>, CliError> {
    // zero-mean mode with unit L2 norm on the cell centres
    let dx = init.grid().dx();
    let rho: Vec<f64> = init
        .rho()
        .iter()
        .enumerate()
        .map(|(j, r)| r + eps * 2f64.sqrt() * (std::f64::consts::TAU * (j as f64 + 0.5) * dx).cos())
        .collect();
    Ok(new_state(init.grid(), &rho, init.u())?.0)
}

/// Pathwise checks: entropy balance, bounds gate, Poincaré, Gronwall.
pub fn verify(cfg: &RunConfig) -> Result<Vec<VerdictRow>, CliError> {
    ensure_dir(&cfg.out)?;
    let params = cfg.params();
    let spec = cfg.step_spec();
    let basis = cfg.basis();
    let init = cfg.init().build(cfg.n_cells)?;
    let mut verdicts = Vec::new();

    let quiet = build_noise(init.grid(), cfg.K, 0.0, cfg.p)?;
    let observer = ObserverConfig {
        sample_stride: u64::MAX,
        snapshot_stride: None,
    };
    let residual = |dt: f64| -> Result<f64, CliError> {
        let mut s = spec;
        s.dt = dt;
        let rec = Trajectory::new(init.clone(), params, s, &quiet, cfg.seed, 0, cfg.balance_T, observer)?.run()?;
        Ok(rec.totals.balance_residual)
    };
    let (coarse, fine) = (residual(cfg.dt)?, residual(0.5 * cfg.dt)?);
    let ratio = if fine > 0.0 { coarse / fine } else { 2.0 };
    verdicts.push(
        VerdictRow::upper(
            "balance residual ratio under dt halving",
            "entropy balance",
            ratio,
            2.0,
            0.4,
        )
        .with_pass((ratio - 2.0).abs() <= 0.4 || coarse.max(fine) <= 1e-14),
    );

    let rec = Trajectory::new(init.clone(), params, spec, &basis, cfg.seed, 0, cfg.T, cfg.observer())?.run()?;
    verdicts.extend(trajectory_gates(&rec));
    let worst_poincare = rec
        .rows
        .iter()
        .map(|r| r.report.kinetic_weighted - r.report.grad_u_sq * (1.0 + VERDICT_SLACK))
        .fold(f64::NEG_INFINITY, f64::max);
    verdicts.push(VerdictRow::upper(
        "max int rho u^2 - |u_x|^2",
        "weighted Poincare inequality",
        worst_poincare,
        0.0,
        0.0,
    ));

    let same = paired_paths(
        &init,
        &init,
        &params,
        &spec,
        &basis,
        cfg.seed,
        cfg.paired_T,
        cfg.observer(),
    )?;
    let identical = same.first == same.second;
    verdicts.push(
        VerdictRow::upper("identical pair max relative entropy", "uniqueness", 0.0, 0.0, 0.0).with_pass(identical),
    );
    let other = perturbed(&init, cfg.perturbation)?;
    let pair = paired_paths(
        &init,
        &other,
        &params,
        &spec,
        &basis,
        cfg.seed,
        cfg.paired_T,
        cfg.observer(),
    )?;
    let worst = pair
        .series
        .iter()
        .map(|s| {
            if s.envelope > 0.0 {
                s.relative_entropy / s.envelope
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    verdicts.push(VerdictRow::upper(
        "max H_r / envelope",
        "relative entropy Gronwall estimate",
        worst,
        2.0,
        0.0,
    ));
    let (a, b) = (
        State::<f64>::from_snapshot(&pair.first.final_state)?,
        State::<f64>::from_snapshot(&pair.second.final_state)?,
    );
    let sandwich = relative_entropy_sandwich(&a, &b, &params)?;
    verdicts.push(
        VerdictRow::upper(
            "H_r at paired_T within L2 bounds",
            "relative entropy sandwich",
            sandwich.value,
            sandwich.upper,
            VERDICT_SLACK * sandwich.upper,
        )
        .with_pass(sandwich.holds),
    );

    let body = serde_json::json!({
        "balance_residual": [coarse, fine],
        "trajectory": rec.totals,
        "paired_series": pair.series,
        "sandwich": sandwich,
    });
    write_report(&cfg.out, "verify", &ReportHeader::new(cfg), &verdicts, &body)?;
    Ok(verdicts)
}

fn pooled_measure(cfg: &RunConfig) -> Result<EmpiricalMeasure, CliError> {
    let run = run_ensemble(&cfg.ensemble())?;
    let parts = run
        .records
        .iter()
        .map(|r| time_averaged_measure(r, cfg.T0, cfg.T))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EmpiricalMeasure::pooled(&parts)?)
}

/// Masses of the compact sets under the time-averaged measure, and the
/// dissipation budget of the same measure.
pub fn tightness(cfg: &RunConfig) -> Result<Vec<VerdictRow>, CliError> {
    ensure_dir(&cfg.out)?;
    let measure = pooled_measure(cfg)?;
    let sigma_sq = cfg.basis().sup_norm_sq();
    let rep = tightness_report(&measure, cfg.A, sigma_sq, &cfg.R_grid);
    let mut verdicts = Vec::new();
    for row in &rep.rows {
        verdicts.push(
            VerdictRow::upper(
                format!("mu(K_R) vs mu(C_S_R), R={}", row.r),
                "tightness set inclusion",
                row.mu_k,
                row.mu_c,
                0.0,
            )
            .with_pass(row.inclusion_holds),
        );
        verdicts.push(VerdictRow::upper(
            format!("lower bound vs mu(C_S_R), R={}", row.r),
            "tightness lower bound",
            row.bound,
            row.mu_c,
            TIGHTNESS_SLACK,
        ));
    }
    let budget = dissipation_budget(&measure, cfg.A, sigma_sq, BUDGET_TOL);
    verdicts.push(
        VerdictRow::upper(
            "mean A^2 |(log rho)_x|^2 + |u_x|^2",
            "invariant-measure dissipation budget",
            budget.mean,
            sigma_sq,
            BUDGET_TOL * sigma_sq,
        )
        .with_pass(budget.holds),
    );
    let body = serde_json::json!({ "tightness": rep, "budget": budget });
    write_report(&cfg.out, "tightness", &ReportHeader::new(cfg), &verdicts, &body)?;
    Ok(verdicts)
}

/// Exceedance frequencies of the shifted sup of Psi.
pub fn martingale(cfg: &RunConfig) -> Result<Vec<VerdictRow>, CliError> {
    if cfg.sigma0 == 0.0 {
        return Err(CliError::Config(
            "the martingale tail needs nonzero noise (gamma0 is undefined for sigma = 0)".into(),
        ));
    }
    ensure_dir(&cfg.out)?;
    let run = run_ensemble(&cfg.ensemble())?;
    let excess: Vec<f64> = run
        .records
        .iter()
        .map(|r| r.totals.psi_shift_sup - r.totals.initial_energy)
        .collect();
    let rep = martingale_tail(&excess, cfg.A, run.summary.sigma_sup_sq, &cfg.R_grid)?;
    let verdicts: Vec<VerdictRow> = rep
        .rows
        .iter()
        .map(|r| {
            VerdictRow::upper(
                format!("exceedance frequency, R={}", r.r),
                "exponential martingale tail",
                r.frequency,
                r.bound,
                TAIL_SE * r.stderr,
            )
        })
        .collect();
    write_report(&cfg.out, "martingale", &ReportHeader::new(cfg), &verdicts, &rep)?;
    Ok(verdicts)
}

/// Time-averaged distance from rest as `A` grows with scaled noise.
pub fn lowmach(cfg: &RunConfig) -> Result<Vec<VerdictRow>, CliError> {
    ensure_dir(&cfg.out)?;
    let table = low_mach_scan(&cfg.ensemble(), &cfg.A_list, cfg.eta)?;
    let verdicts: Vec<VerdictRow> = table
        .rows
        .windows(2)
        .map(|w| {
            let slack = LOW_MACH_SE * (w[0].rho_dev_se.powi(2) + w[1].rho_dev_se.powi(2)).sqrt();
            VerdictRow::upper(
                format!("|rho-1| at A={} vs A={}", w[1].a, w[0].a),
                "low Mach limit",
                w[1].rho_dev,
                w[0].rho_dev,
                slack,
            )
        })
        .collect();
    let mut csv = format!(
        "# config_hash={}\nA,sigma0,sigma_sup_sq,rho_dev,rho_dev_se,u_norm,u_norm_se\n",
        cfg.hash()
    );
    for r in &table.rows {
        csv.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            r.a, r.sigma0, r.sigma_sup_sq, r.rho_dev, r.rho_dev_se, r.u_norm, r.u_norm_se
        ));
    }
    write(&cfg.out, "lowmach.csv", &csv)?;
    write_report(&cfg.out, "lowmach", &ReportHeader::new(cfg), &verdicts, &table)?;
    Ok(verdicts)
}
