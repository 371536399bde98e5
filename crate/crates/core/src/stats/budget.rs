use serde::{Deserialize, Serialize};

use crate::stats::EmpiricalMeasure;

/// `mean[A^2 ||(log rho)_x||^2 + ||u_x||^2] <= |sigma|^2 (1 + tol)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetVerdict {
    pub mean: f64,
    /// Batch-means standard error.
    pub stderr: f64,
    pub sigma_sup_sq: f64,
    pub tol: f64,
    pub holds: bool,
}

impl BudgetVerdict {
    pub fn bound(&self) -> f64 {
        self.sigma_sup_sq * (1.0 + self.tol)
    }
}

pub fn dissipation_budget(measure: &EmpiricalMeasure, a: f64, sigma_sup_sq: f64, tol: f64) -> BudgetVerdict {
    let a2 = a * a;
    let f = |r: &crate::functionals::FunctionalReport<f64>| a2 * r.grad_logrho_sq + r.grad_u_sq;
    let mean = measure.mean_of(f);
    BudgetVerdict {
        mean,
        stderr: measure.stderr_of(f),
        sigma_sup_sq,
        tol,
        holds: mean <= sigma_sup_sq * (1.0 + tol),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::FunctionalReport;

    #[test]
    fn equilibrium_budget_is_zero() {
        let m = EmpiricalMeasure {
            t0: 0.0,
            t1: 1.0,
            samples: vec![
                FunctionalReport {
                    min_rho: 1.0,
                    max_rho: 1.0,
                    ..Default::default()
                };
                4
            ],
        };
        let v = dissipation_budget(&m, 1.0, 0.0, 0.1);
        assert_eq!((v.mean, v.stderr), (0.0, 0.0));
        assert!(v.holds);
    }

    #[test]
    fn weights_log_term_by_a_squared() {
        let rep = FunctionalReport {
            grad_u_sq: 0.01,
            grad_logrho_sq: 0.02,
            min_rho: 1.0,
            ..Default::default()
        };
        let m = EmpiricalMeasure {
            t0: 0.0,
            t1: 1.0,
            samples: vec![rep; 3],
        };
        let v = dissipation_budget(&m, 2.0, 0.1, 0.1);
        assert!((v.mean - 0.09).abs() < 1e-15);
        assert!(v.holds);
        assert!(!dissipation_budget(&m, 3.0, 0.1, 0.1).holds);
    }
}
