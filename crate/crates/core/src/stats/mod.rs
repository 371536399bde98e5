//! Ensembles of trajectories and the statistical verdicts built on them.

mod budget;
mod ensemble;
mod lowmach;
mod martingale;
mod measure;
mod stationarity;
mod tightness;

pub use budget::{dissipation_budget, BudgetVerdict};
pub use ensemble::{
    run_ensemble, EnsembleConfig, EnsembleRun, EnsembleSummary, ExpectationVerdict, InitialProfile, MomentEstimate,
};
pub use lowmach::{low_mach_scan, LowMachRow, LowMachTable};
pub use martingale::{gamma0, martingale_tail, MartingaleReport, TailRow};
pub use measure::{time_averaged_measure, EmpiricalMeasure, Observable};
pub use stationarity::{ks_distance, stationarity_diagnostic};
pub use tightness::{s_r, tightness_report, TightnessReport, TightnessRow};

/// Number of batches used for batch-means standard errors of time series.
pub const BATCHES: usize = 20;

/// Sample mean; `0` for an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean for independent samples.
pub fn std_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Standard error of the mean of a correlated series from `batches`
/// contiguous batch means. Falls back to [`std_error`] for short series.
pub fn batch_means_error(xs: &[f64], batches: usize) -> f64 {
    let len = xs.len() / batches.max(1);
    if batches < 2 || len < 2 {
        return std_error(xs);
    }
    let means: Vec<f64> = xs.chunks_exact(len).take(batches).map(mean).collect();
    std_error(&means)
}
