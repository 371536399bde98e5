use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mean, run_ensemble, std_error, time_averaged_measure, EnsembleConfig, Observable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowMachRow {
    pub a: f64,
    pub sigma0: f64,
    pub sigma_sup_sq: f64,
    /// Ensemble mean of the time-averaged `||rho - 1||`.
    pub rho_dev: f64,
    pub rho_dev_se: f64,
    /// Ensemble mean of the time-averaged `||u||`.
    pub u_norm: f64,
    pub u_norm_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowMachTable {
    pub eta: f64,
    pub a_base: f64,
    pub rows: Vec<LowMachRow>,
}

impl LowMachTable {
    /// `v[i+1] <= v[i] + k sqrt(se[i]^2 + se[i+1]^2)` along the rows.
    pub fn nonincreasing(&self, column: impl Fn(&LowMachRow) -> (f64, f64), k: f64) -> bool {
        self.rows.windows(2).all(|w| {
            let (v0, s0) = column(&w[0]);
            let (v1, s1) = column(&w[1]);
            v1 <= v0 + k * (s0 * s0 + s1 * s1).sqrt()
        })
    }

    pub fn rho_nonincreasing(&self, k: f64) -> bool {
        self.nonincreasing(|r| (r.rho_dev, r.rho_dev_se), k)
    }
}

/// Runs one ensemble per `A` with `sigma0` scaled by `(A / A_base)^(-eta)`,
/// `A_base` being the base config's `A`, and averages over `[T0, T)`.
pub fn low_mach_scan(base: &EnsembleConfig, a_list: &[f64], eta: f64) -> Result<LowMachTable> {
    if !(eta > 0.0) {
        return Err(Error::param("eta", format!("must be positive, got {eta}")));
    }
    if a_list.is_empty() || a_list.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::param("A_list", "needs at least one positive entry"));
    }
    let mut rows = Vec::with_capacity(a_list.len());
    for &a in a_list {
        let mut cfg = base.clone();
        cfg.a = a;
        cfg.noise.sigma0 = base.noise.sigma0 * (a / base.a).powf(-eta);
        let run = run_ensemble(&cfg)?;
        let mut rho = Vec::with_capacity(run.records.len());
        let mut u = Vec::with_capacity(run.records.len());
        for rec in &run.records {
            let m = time_averaged_measure(rec, cfg.burn_in, cfg.horizon)?;
            rho.push(m.mean(Observable::RhoDevL2));
            u.push(m.mean(Observable::UL2));
        }
        rows.push(LowMachRow {
            a,
            sigma0: cfg.noise.sigma0,
            sigma_sup_sq: run.summary.sigma_sup_sq,
            rho_dev: mean(&rho),
            rho_dev_se: std_error(&rho),
            u_norm: mean(&u),
            u_norm_se: std_error(&u),
        });
    }
    Ok(LowMachTable {
        eta,
        a_base: base.a,
        rows,
    })
}
