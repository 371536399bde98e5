use serde::{Deserialize, Serialize};

use crate::functionals::FunctionalReport;
use crate::stats::EmpiricalMeasure;

/// `S_R = 4 R^2 e^{2R}`.
pub fn s_r(r: f64) -> f64 {
    4.0 * r * r * (2.0 * r).exp()
}

/// `||u_x||^2 + ||(log rho)_x||^2 <= R^2`.
fn in_k(rep: &FunctionalReport<f64>, r: f64) -> bool {
    rep.grad_u_sq + rep.grad_logrho_sq <= r * r
}

/// `||u_x||^2 + ||rho_x||^2 + ||rho||_inf + ||1/rho||_inf <= S`.
fn in_c(rep: &FunctionalReport<f64>, s: f64) -> bool {
    rep.grad_u_sq + rep.grad_rho_sq + rep.max_rho + rep.max_inv_rho() <= s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TightnessRow {
    pub r: f64,
    pub s_r: f64,
    pub mu_k: f64,
    pub mu_c: f64,
    /// `1 - |sigma|^2 / (min{1, A^2} R^2)`
    pub bound: f64,
    /// `mu(C_{S_R}) >= mu(K_R)`; guaranteed for `R >= 1`.
    pub inclusion_holds: bool,
}

impl TightnessRow {
    /// `mu(C_{S_R}) >= bound - slack`.
    pub fn bound_holds(&self, slack: f64) -> bool {
        self.mu_c >= self.bound - slack
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TightnessReport {
    pub sigma_sup_sq: f64,
    pub a: f64,
    pub samples: usize,
    pub rows: Vec<TightnessRow>,
}

impl TightnessReport {
    pub fn holds(&self, slack: f64) -> bool {
        self.rows.iter().all(|r| r.inclusion_holds && r.bound_holds(slack))
    }
}

/// Masses of the sets `K_R` and `C_{S_R}` under `measure`.
pub fn tightness_report(measure: &EmpiricalMeasure, a: f64, sigma_sup_sq: f64, r_grid: &[f64]) -> TightnessReport {
    let rows = r_grid
        .iter()
        .map(|&r| {
            let s = s_r(r);
            let mu_k = measure.probability(|rep| in_k(rep, r));
            let mu_c = measure.probability(|rep| in_c(rep, s));
            TightnessRow {
                r,
                s_r: s,
                mu_k,
                mu_c,
                bound: 1.0 - sigma_sup_sq / ((a * a).min(1.0) * r * r),
                inclusion_holds: mu_c >= mu_k,
            }
        })
        .collect();
    TightnessReport {
        sigma_sup_sq,
        a,
        samples: measure.len(),
        rows,
    }
}
