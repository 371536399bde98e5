use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{make_grid, ModelParams, State};
use crate::noise::{NoiseBasis, NoiseSpec};
use crate::solver::{steps_for, ObserverConfig, StepSpec, Trajectory, TrajectoryRecord};
use crate::stats::martingale::gamma0;
use crate::stats::{mean, std_error};

/// Initial data `rho = 1 + rho_amp sin(2 pi x)`, `u = u_amp sin(pi x)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InitialProfile {
    pub rho_amp: f64,
    pub u_amp: f64,
}

impl InitialProfile {
    pub fn build(&self, n_cells: usize) -> Result<State<f64>> {
        if !(self.rho_amp.abs() < 1.0) || !self.u_amp.is_finite() {
            return Err(Error::param(
                "init_rho_amp",
                format!(
                    "needs |rho_amp| < 1 and finite u_amp, got {} and {}",
                    self.rho_amp, self.u_amp
                ),
            ));
        }
        let grid = make_grid(n_cells)?;
        let (ra, ua) = (self.rho_amp, self.u_amp);
        let tau = std::f64::consts::TAU;
        let pi = std::f64::consts::PI;
        State::from_profiles(&grid, |x| 1.0 + ra * (tau * x).sin(), |x| ua * (pi * x).sin())
    }
}

/// Everything needed to run `M` independent trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_cells: usize,
    pub a: f64,
    pub step: StepSpec<f64>,
    pub noise: NoiseSpec,
    pub n_trajectories: usize,
    pub horizon: f64,
    pub burn_in: f64,
    /// Steps between recorded samples.
    pub sample_stride: u64,
    pub snapshot_stride: Option<u64>,
    pub seed: u64,
    pub init: InitialProfile,
    /// Times at which the expectation inequalities are checked.
    pub check_times: Vec<f64>,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trajectories == 0 {
            return Err(Error::param("M", "needs at least one trajectory"));
        }
        if !(self.burn_in >= 0.0 && self.burn_in < self.horizon) {
            return Err(Error::param(
                "T0",
                format!("burn-in {} must lie in [0, T) with T = {}", self.burn_in, self.horizon),
            ));
        }
        if self.sample_stride == 0 {
            return Err(Error::param("stride", "must be at least one step"));
        }
        let dt = self.step.dt;
        steps_for(self.horizon, dt)?;
        for &t in &self.check_times {
            let n = steps_for(t, dt)
                .map_err(|_| Error::param("check_times", format!("{t} is not a whole number of steps")))?;
            if t > self.horizon * (1.0 + 1e-12) || n % self.sample_stride != 0 {
                return Err(Error::param(
                    "check_times",
                    format!("{t} must lie in (0, T] on the sampling grid"),
                ));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::param("workers", "must be positive"));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<ModelParams<f64>> {
        ModelParams::new(self.a)
    }

    pub fn basis(&self) -> Result<NoiseBasis<f64>> {
        NoiseBasis::from_spec(&make_grid(self.n_cells)?, &self.noise)
    }

    pub fn observer(&self) -> ObserverConfig {
        ObserverConfig {
            sample_stride: self.sample_stride,
            snapshot_stride: self.snapshot_stride,
        }
    }

    /// Sample spacing in time.
    pub fn stride_time(&self) -> f64 {
        self.sample_stride as f64 * self.step.dt
    }
}

/// `mean(lhs) <= rhs + slack_se * stderr(lhs)` at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectationVerdict {
    pub t: f64,
    /// Mean of `H(t)` or `E(t)`.
    pub mean_functional: f64,
    pub mean_diss_u: f64,
    pub mean_diss_logrho: f64,
    pub lhs_mean: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
    pub slack_se: f64,
    pub holds: bool,
}

/// `mean(sup Psi ^ m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub m: u32,
    pub value: f64,
    pub finite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub n_trajectories: usize,
    pub sigma_sup_sq: f64,
    pub gamma0: Option<f64>,
    pub initial_entropy: f64,
    pub initial_energy: f64,
    /// `H(t) + int ||u_x||^2 <= H(0) + |sigma|^2 t / 2`
    pub entropy: Vec<ExpectationVerdict>,
    /// `E(t) + 1/2 int ||u_x||^2 + A^2/2 int ||(log rho)_x||^2 <= E(0) + |sigma|^2 t / 2`
    pub energy: Vec<ExpectationVerdict>,
    pub psi_moments: Vec<MomentEstimate>,
}

impl EnsembleSummary {
    pub fn holds(&self) -> bool {
        self.entropy.iter().chain(&self.energy).all(|v| v.holds) && self.psi_moments.iter().all(|m| m.finite)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRun {
    pub records: Vec<TrajectoryRecord>,
    pub summary: EnsembleSummary,
}

/// Statistical slack, in standard errors, of the expectation verdicts.
pub const EXPECTATION_SLACK_SE: f64 = 3.0;

/// Runs trajectories `0..M` on the worker pool and summarises them.
pub fn run_ensemble(config: &EnsembleConfig) -> Result<EnsembleRun> {
    config.validate()?;
    let params = config.params()?;
    let basis = config.basis()?;
    let init = config.init.build(config.n_cells)?;
    let records = run_trajectories(config, &params, &basis, &init)?;
    let summary = summarize(config, &params, &basis, &records)?;
    Ok(EnsembleRun { records, summary })
}

pub(crate) fn run_trajectories(
    config: &EnsembleConfig,
    params: &ModelParams<f64>,
    basis: &NoiseBasis<f64>,
    init: &State<f64>,
) -> Result<Vec<TrajectoryRecord>> {
    let run_one = |id: u64| -> Result<TrajectoryRecord> {
        Trajectory::new(
            init.clone(),
            *params,
            config.step,
            basis,
            config.seed,
            id,
            config.horizon,
            config.observer(),
        )
        .and_then(Trajectory::run)
        .map_err(|e| Error::Trajectory {
            id,
            source: Box::new(e),
        })
    };
    let ids = 0..config.n_trajectories as u64;
    match config.workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::param("workers", e.to_string()))?;
            pool.install(|| ids.into_par_iter().map(run_one).collect())
        }
        None => ids.into_par_iter().map(run_one).collect(),
    }
}

fn summarize(
    config: &EnsembleConfig,
    params: &ModelParams<f64>,
    basis: &NoiseBasis<f64>,
    records: &[TrajectoryRecord],
) -> Result<EnsembleSummary> {
    let sigma_sq = basis.sup_norm_sq();
    let a2 = params.a_sq();
    let first_rows = |r: &TrajectoryRecord| r.rows.first().map(|row| row.report);
    let h0 = mean(
        &records
            .iter()
            .filter_map(first_rows)
            .map(|r| r.entropy)
            .collect::<Vec<_>>(),
    );
    let e0 = mean(
        &records
            .iter()
            .filter_map(first_rows)
            .map(|r| r.energy)
            .collect::<Vec<_>>(),
    );

    let mut entropy = Vec::new();
    let mut energy = Vec::new();
    for &t in &config.check_times {
        let rows = records
            .iter()
            .map(|r| {
                r.row_at(t)
                    .copied()
                    .ok_or_else(|| Error::Span(format!("trajectory {} has no sample at t = {t}", r.trajectory)))
            })
            .collect::<Result<Vec<_>>>()?;
        let col = |f: &dyn Fn(&crate::solver::SampleRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
        let hs = col(&|r| r.report.entropy);
        let es = col(&|r| r.report.energy);
        let du = col(&|r| r.diss_u);
        let dl = col(&|r| r.diss_logrho);
        let rhs_h = h0 + 0.5 * sigma_sq * t;
        let rhs_e = e0 + 0.5 * sigma_sq * t;
        let lhs_h = col(&|r| r.report.entropy + r.diss_u);
        let lhs_e = col(&|r| r.report.energy + 0.5 * r.diss_u + 0.5 * a2 * r.diss_logrho);
        entropy.push(verdict(t, &hs, &du, &dl, &lhs_h, rhs_h));
        energy.push(verdict(t, &es, &du, &dl, &lhs_e, rhs_e));
    }

    let sups: Vec<f64> = records.iter().map(|r| r.totals.psi_sup).collect();
    let psi_moments = [1u32, 2, 4]
        .iter()
        .map(|&m| {
            let value = mean(&sups.iter().map(|s| s.powi(m as i32)).collect::<Vec<_>>());
            MomentEstimate {
                m,
                value,
                finite: value.is_finite(),
            }
        })
        .collect();

    Ok(EnsembleSummary {
        n_trajectories: records.len(),
        sigma_sup_sq: sigma_sq,
        gamma0: gamma0(config.a, sigma_sq).ok(),
        initial_entropy: h0,
        initial_energy: e0,
        entropy,
        energy,
        psi_moments,
    })
}

fn verdict(t: f64, func: &[f64], du: &[f64], dl: &[f64], lhs: &[f64], rhs: f64) -> ExpectationVerdict {
    let lhs_mean = mean(lhs);
    let lhs_stderr = std_error(lhs);
    ExpectationVerdict {
        t,
        mean_functional: mean(func),
        mean_diss_u: mean(du),
        mean_diss_logrho: mean(dl),
        lhs_mean,
        lhs_stderr,
        rhs,
        slack_se: EXPECTATION_SLACK_SE,
        holds: lhs_mean <= rhs + EXPECTATION_SLACK_SE * lhs_stderr,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config() -> EnsembleConfig {
        EnsembleConfig {
            n_cells: 16,
            a: 1.0,
            step: StepSpec::new(1e-3).unwrap(),
            noise: NoiseSpec {
                k: 4,
                sigma0: 0.0,
                p: 3.0,
            },
            n_trajectories: 2,
            horizon: 0.1,
            burn_in: 0.0,
            sample_stride: 10,
            snapshot_stride: None,
            seed: 1,
            init: InitialProfile::default(),
            check_times: vec![0.05, 0.1],
            workers: Some(1),
        }
    }

    #[test]
    fn equilibrium_ensemble_is_degenerate() {
        let run = run_ensemble(&small_config()).unwrap();
        let s = &run.summary;
        assert_eq!(s.gamma0, None);
        for v in s.entropy.iter().chain(&s.energy) {
            assert_eq!((v.lhs_mean, v.rhs, v.lhs_stderr), (0.0, 0.0, 0.0));
            assert!(v.holds);
        }
        assert!(s.psi_moments.iter().all(|m| m.value == 0.0 && m.finite));
        assert!(s.holds());
    }

    #[test]
    fn order_and_worker_count_do_not_matter() {
        let mut cfg = small_config();
        cfg.noise.sigma0 = 0.3;
        cfg.n_trajectories = 4;
        let one = run_ensemble(&cfg).unwrap();
        cfg.workers = Some(3);
        let three = run_ensemble(&cfg).unwrap();
        assert_eq!(one.records, three.records);
        assert_eq!(one.summary, three.summary);
        let ids: Vec<u64> = one.records.iter().map(|r| r.trajectory).collect();
        assert_eq!(ids, vec![0, 1, 2, 3]);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = small_config();
        cfg.n_trajectories = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.burn_in = 0.1;
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.check_times = vec![0.015];
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.init.rho_amp = 1.0;
        assert!(run_ensemble(&cfg).is_err());
    }
}
