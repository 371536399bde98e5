use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `gamma0 = min{1, 4A^2} / (2 |sigma|^2)`.
pub fn gamma0(a: f64, sigma_sup_sq: f64) -> Result<f64> {
    if !(sigma_sup_sq > 0.0) {
        return Err(Error::DegenerateNoise);
    }
    Ok((4.0 * a * a).min(1.0) / (2.0 * sigma_sup_sq))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub r: f64,
    pub exceedances: usize,
    pub frequency: f64,
    /// Binomial standard error `sqrt(f (1 - f) / M)`.
    pub stderr: f64,
    /// `exp(-gamma0 R)`
    pub bound: f64,
}

impl TailRow {
    /// `frequency <= bound + k * stderr`.
    pub fn holds(&self, k: f64) -> bool {
        self.frequency <= self.bound + k * self.stderr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub gamma0: f64,
    pub sigma_sup_sq: f64,
    pub trajectories: usize,
    pub rows: Vec<TailRow>,
}

impl MartingaleReport {
    pub fn holds(&self, k: f64) -> bool {
        self.rows.iter().all(|r| r.holds(k))
    }
}

/// Exceedance frequencies of `excess[i] = sup_t [Psi(t) - |sigma|^2 t / 2] - E(0)`
/// over the trajectories, against `exp(-gamma0 R)`.
pub fn martingale_tail(excess: &[f64], a: f64, sigma_sup_sq: f64, r_grid: &[f64]) -> Result<MartingaleReport> {
    let g = gamma0(a, sigma_sup_sq)?;
    let m = excess.len();
    if m == 0 {
        return Err(Error::param("M", "no trajectories to summarise"));
    }
    let rows = r_grid
        .iter()
        .map(|&r| {
            let k = excess.iter().filter(|&&x| x >= r).count();
            let f = k as f64 / m as f64;
            TailRow {
                r,
                exceedances: k,
                frequency: f,
                stderr: (f * (1.0 - f) / m as f64).sqrt(),
                bound: (-g * r).exp(),
            }
        })
        .collect();
    Ok(MartingaleReport {
        gamma0: g,
        sigma_sup_sq,
        trajectories: m,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma0_examples() {
        assert_eq!(gamma0(1.0, 0.5).unwrap(), 1.0);
        assert_eq!(gamma0(1.0, 0.1).unwrap(), 5.0);
        assert_eq!(gamma0(0.25, 0.5).unwrap(), 0.25);
        assert!(matches!(gamma0(1.0, 0.0), Err(Error::DegenerateNoise)));
    }

    #[test]
    fn frequencies_and_errors() {
        let excess = [0.5, 1.5, 2.5, 0.1];
        let rep = martingale_tail(&excess, 1.0, 0.5, &[1.0, 2.0, 3.0]).unwrap();
        let f: Vec<f64> = rep.rows.iter().map(|r| r.frequency).collect();
        assert_eq!(f, vec![0.5, 0.25, 0.0]);
        assert!((rep.rows[0].stderr - 0.25).abs() < 1e-15);
        assert!((rep.rows[1].bound - (-2.0f64).exp()).abs() < 1e-15);
        assert!(martingale_tail(&excess, 1.0, 0.0, &[1.0]).is_err());
    }
}
