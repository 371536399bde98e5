use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::FunctionalReport;
use crate::solver::TrajectoryRecord;
use crate::stats::{batch_means_error, mean, BATCHES};

/// Scalar observables attached to every sample of a time-averaged measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    GradUSq,
    GradLogrhoSq,
    GradRhoSq,
    MaxRho,
    MaxInvRho,
    Entropy,
    Energy,
    RhoDevL2,
    UL2,
}

impl Observable {
    pub const ALL: [Observable; 9] = [
        Observable::GradUSq,
        Observable::GradLogrhoSq,
        Observable::GradRhoSq,
        Observable::MaxRho,
        Observable::MaxInvRho,
        Observable::Entropy,
        Observable::Energy,
        Observable::RhoDevL2,
        Observable::UL2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Observable::GradUSq => "grad_u_sq",
            Observable::GradLogrhoSq => "grad_logrho_sq",
            Observable::GradRhoSq => "grad_rho_sq",
            Observable::MaxRho => "max_rho",
            Observable::MaxInvRho => "max_inv_rho",
            Observable::Entropy => "H",
            Observable::Energy => "E",
            Observable::RhoDevL2 => "rho_dev_l2",
            Observable::UL2 => "u_l2",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.name() == name)
    }

    pub fn of(self, r: &FunctionalReport<f64>) -> f64 {
        match self {
            Observable::GradUSq => r.grad_u_sq,
            Observable::GradLogrhoSq => r.grad_logrho_sq,
            Observable::GradRhoSq => r.grad_rho_sq,
            Observable::MaxRho => r.max_rho,
            Observable::MaxInvRho => r.max_inv_rho(),
            Observable::Entropy => r.entropy,
            Observable::Energy => r.energy,
            Observable::RhoDevL2 => r.rho_dev_l2,
            Observable::UL2 => r.u_l2,
        }
    }
}

/// Uniformly weighted samples of the observable vector taken on the sampling
/// grid of `[t0, t1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub t0: f64,
    pub t1: f64,
    pub samples: Vec<FunctionalReport<f64>>,
}

/// Collects the samples of `record` at times in `[t0, t1)`.
///
/// The expected count is `(t1 - t0) / stride`; a mismatch means the span
/// or the stride does not fit the record.
pub fn time_averaged_measure(record: &TrajectoryRecord, t0: f64, t1: f64) -> Result<EmpiricalMeasure> {
    let end = record.final_time();
    if !(t0 >= 0.0 && t0 < t1) || t1 > end * (1.0 + 1e-12) {
        return Err(Error::Span(format!("[{t0}, {t1}) is not inside [0, {end}]")));
    }
    let stride = match record.rows.as_slice() {
        [a, b, ..] => b.t - a.t,
        _ => return Err(Error::Span("record has fewer than two samples".into())),
    };
    let expected = (t1 - t0) / stride;
    if (expected - expected.round()).abs() > 1e-6 || expected.round() < 1.0 {
        return Err(Error::Span(format!(
            "span {} is not a positive multiple of the sample spacing {stride}",
            t1 - t0
        )));
    }
    let half = 0.5 * record.dt;
    let samples: Vec<_> = record
        .rows
        .iter()
        .filter(|r| r.t > t0 - half && r.t < t1 - half)
        .map(|r| r.report)
        .collect();
    if samples.len() != expected.round() as usize {
        return Err(Error::Span(format!(
            "found {} samples in [{t0}, {t1}), expected {}",
            samples.len(),
            expected.round()
        )));
    }
    Ok(EmpiricalMeasure { t0, t1, samples })
}

impl EmpiricalMeasure {
    /// Combines measures of several trajectories with equal weight per sample.
    pub fn pooled(parts: &[EmpiricalMeasure]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Span("no measures to pool".into()))?;
        Ok(EmpiricalMeasure {
            t0: first.t0,
            t1: first.t1,
            samples: parts.iter().flat_map(|m| m.samples.iter().copied()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.samples.len() as f64
    }

    pub fn values(&self, obs: Observable) -> Vec<f64> {
        self.samples.iter().map(|r| obs.of(r)).collect()
    }

    pub fn mean_of(&self, f: impl Fn(&FunctionalReport<f64>) -> f64) -> f64 {
        mean(&self.samples.iter().map(f).collect::<Vec<_>>())
    }

    pub fn mean(&self, obs: Observable) -> f64 {
        self.mean_of(|r| obs.of(r))
    }

    /// Batch-means standard error of the mean of `f`.
    pub fn stderr_of(&self, f: impl Fn(&FunctionalReport<f64>) -> f64) -> f64 {
        batch_means_error(&self.samples.iter().map(f).collect::<Vec<_>>(), BATCHES)
    }

    /// Measure of the event `pred`.
    pub fn probability(&self, pred: impl Fn(&FunctionalReport<f64>) -> bool) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().filter(|r| pred(r)).count() as f64 * self.weight()
    }
}
