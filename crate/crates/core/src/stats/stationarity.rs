use crate::error::{Error, Result};
use crate::solver::TrajectoryRecord;
use crate::stats::Observable;

/// Two-sample Kolmogorov–Smirnov distance `sup_x |F_a(x) - F_b(x)|`.
///
/// Returns `0` when either sample is empty.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// KS distance between the samples of `obs` over `[start, start + window)`
/// and over `[start + shift, start + shift + window)`.
pub fn stationarity_diagnostic(
    record: &TrajectoryRecord,
    obs: Observable,
    start: f64,
    window: f64,
    shift: f64,
) -> Result<f64> {
    let end = record.final_time();
    if !(window > 0.0 && shift >= 0.0 && start >= 0.0) {
        return Err(Error::Span(format!(
            "window {window} and shift {shift} must be positive"
        )));
    }
    if start + shift + window > end * (1.0 + 1e-12) {
        return Err(Error::Span(format!(
            "needs samples up to {}, record ends at {end}",
            start + shift + window
        )));
    }
    let half = 0.5 * record.dt;
    let collect = |lo: f64| -> Vec<f64> {
        record
            .rows
            .iter()
            .filter(|r| r.t > lo - half && r.t < lo + window - half)
            .map(|r| obs.of(&r.report))
            .collect()
    };
    Ok(ks_distance(&collect(start), &collect(start + shift)))
}
