//! Entropy, modified energy, relative entropy and the dissipation norms,
//! together with the pointwise/integral inequalities they satisfy.
//!
//! Discretisation conventions (used everywhere, including the solver):
//!
//! * `int rho u^2` puts the average of the two face values of `u^2` at each
//!   centre. Because `u` vanishes on the walls this equals
//!   `dx * sum_f rho_f u_f^2` over interior faces with `rho_f` the arithmetic
//!   mean of the neighbouring cells.
//! * `rho_x`, `(log rho)_x` and `u_xx` live on interior faces, `u_x` on
//!   centres.
//! * `int rho log rho` is evaluated as `int (rho log rho - rho + 1)`, equal
//!   for unit mass and nonnegative term by term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ModelParams, State};
use crate::scalar::Real;

/// Multiplicative slack applied to every inequality verdict.
pub const VERDICT_SLACK: f64 = 1e-6;

/// Every scalar the harness attaches to a state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FunctionalReport<T> {
    pub entropy: T,
    pub energy: T,
    /// `||u_x||^2`
    pub grad_u_sq: T,
    /// `||(log rho)_x||^2`
    pub grad_logrho_sq: T,
    /// `||rho_x||^2`
    pub grad_rho_sq: T,
    /// `int rho_x^2 / rho^3`
    pub fisher_weighted: T,
    /// `int u_xx^2 / rho`
    pub weighted_h2_u: T,
    /// `int rho u^2`
    pub kinetic_weighted: T,
    pub min_rho: T,
    pub max_rho: T,
    /// `||rho - 1||_{L^2}`
    pub rho_dev_l2: T,
    /// `||u||_{L^2}`
    pub u_l2: T,
}

impl<T: Real> FunctionalReport<T> {
    pub fn widen(&self) -> FunctionalReport<f64> {
        FunctionalReport {
            entropy: self.entropy.to_f64_lossy(),
            energy: self.energy.to_f64_lossy(),
            grad_u_sq: self.grad_u_sq.to_f64_lossy(),
            grad_logrho_sq: self.grad_logrho_sq.to_f64_lossy(),
            grad_rho_sq: self.grad_rho_sq.to_f64_lossy(),
            fisher_weighted: self.fisher_weighted.to_f64_lossy(),
            weighted_h2_u: self.weighted_h2_u.to_f64_lossy(),
            kinetic_weighted: self.kinetic_weighted.to_f64_lossy(),
            min_rho: self.min_rho.to_f64_lossy(),
            max_rho: self.max_rho.to_f64_lossy(),
            rho_dev_l2: self.rho_dev_l2.to_f64_lossy(),
            u_l2: self.u_l2.to_f64_lossy(),
        }
    }

    pub fn max_inv_rho(&self) -> T {
        T::one() / self.min_rho
    }
}

/// `xi log xi - xi + 1`, the convex integrand behind both entropies.
#[inline]
fn entropy_density<T: Real>(r: T, log_r: T) -> T {
    r * log_r - r + T::one()
}

/// Evaluates every functional in one pass over the grid.
pub fn evaluate<T: Real>(state: &State<T>, params: &ModelParams<T>) -> FunctionalReport<T> {
    let log_rho: Vec<T> = state.rho.iter().map(|r| r.ln()).collect();
    evaluate_with_logs(state, params, &log_rho)
}

pub(crate) fn evaluate_with_logs<T: Real>(
    state: &State<T>,
    params: &ModelParams<T>,
    log_rho: &[T],
) -> FunctionalReport<T> {
    let n = state.grid.n_cells();
    let dx = state.grid.dx();
    let inv_dx = T::one() / dx;
    let half = T::lit(0.5);
    let quarter = T::lit(0.25);
    let rho = &state.rho;
    let u = &state.u;

    let mut rho_log = T::zero();
    let mut grad_u = T::zero();
    let mut dev = T::zero();
    let (mut lo, mut hi) = (T::infinity(), T::neg_infinity());
    for j in 0..n {
        let r = rho[j];
        rho_log = rho_log + entropy_density(r, log_rho[j]);
        let du = (u[j + 1] - u[j]) * inv_dx;
        grad_u = grad_u + du * du;
        dev = dev + (r - T::one()) * (r - T::one());
        lo = lo.min(r);
        hi = hi.max(r);
    }

    let mut kinetic = T::zero();
    let mut cross = T::zero();
    let mut fisher = T::zero();
    let mut grad_log = T::zero();
    let mut grad_rho = T::zero();
    let mut h2 = T::zero();
    let mut u_sq = T::zero();
    for f in 1..n {
        let rf = half * (rho[f - 1] + rho[f]);
        let dr = (rho[f] - rho[f - 1]) * inv_dx;
        let dl = (log_rho[f] - log_rho[f - 1]) * inv_dx;
        let uf = u[f];
        kinetic = kinetic + rf * uf * uf;
        cross = cross + dr * uf / rf;
        fisher = fisher + dr * dr / (rf * rf * rf);
        grad_log = grad_log + dl * dl;
        grad_rho = grad_rho + dr * dr;
        let uxx = (u[f + 1] - (u[f] + u[f]) + u[f - 1]) * inv_dx * inv_dx;
        h2 = h2 + uxx * uxx / rf;
        u_sq = u_sq + uf * uf;
    }

    let a2 = params.a_sq();
    let entropy = dx * (half * kinetic + a2 * rho_log);
    let energy = entropy + dx * (half * cross + quarter * fisher);
    FunctionalReport {
        entropy,
        energy,
        grad_u_sq: dx * grad_u,
        grad_logrho_sq: dx * grad_log,
        grad_rho_sq: dx * grad_rho,
        fisher_weighted: dx * fisher,
        weighted_h2_u: dx * h2,
        kinetic_weighted: dx * kinetic,
        min_rho: lo,
        max_rho: hi,
        rho_dev_l2: (dx * dev).sqrt(),
        u_l2: (dx * u_sq).sqrt(),
    }
}

/// `int (1/2 rho u^2 + A^2 rho log rho) dx`.
pub fn entropy_h<T: Real>(state: &State<T>, params: &ModelParams<T>) -> T {
    evaluate(state, params).entropy
}

/// Entropy plus `1/2 int (rho_x u / rho + rho_x^2 / (2 rho^3)) dx`.
pub fn energy_e<T: Real>(state: &State<T>, params: &ModelParams<T>) -> T {
    evaluate(state, params).energy
}

/// `(||u_x||^2, ||(log rho)_x||^2)`.
pub fn dissipation_norms<T: Real>(state: &State<T>) -> (T, T) {
    // A only enters the entropies, so any admissible value will do
    let r = evaluate(state, &ModelParams::new(T::one()).expect("A = 1"));
    (r.grad_u_sq, r.grad_logrho_sq)
}

/// Relative entropy `int (1/2 rho (u - v)^2 + A^2 rho log(rho / r)) dx` of
/// `first = (rho, u)` with respect to `second = (r, v)`.
///
/// The logarithmic part is summed as the Bregman form
/// `rho log(rho/r) - rho + r`, which differs from the plain form only by the
/// mass difference and is nonnegative cell by cell.
pub fn relative_entropy<T: Real>(first: &State<T>, second: &State<T>, params: &ModelParams<T>) -> Result<T> {
    check_same_grid(first, second)?;
    let n = first.grid.n_cells();
    let half = T::lit(0.5);
    let (rho, r) = (&first.rho, &second.rho);
    let mut kin = T::zero();
    let mut pot = T::zero();
    for j in 0..n {
        let w0 = first.u[j] - second.u[j];
        let w1 = first.u[j + 1] - second.u[j + 1];
        kin = kin + rho[j] * half * (w0 * w0 + w1 * w1);
        pot = pot + (rho[j] * (rho[j] / r[j]).ln() - rho[j] + r[j]);
    }
    Ok(first.grid.dx() * (half * kin + params.a_sq() * pot))
}

fn check_same_grid<T: Real>(a: &State<T>, b: &State<T>) -> Result<()> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch(a.grid.n_cells(), b.grid.n_cells()));
    }
    Ok(())
}

/// Outcome of a two-sided inequality `lower <= value <= upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichVerdict {
    pub lower: f64,
    pub value: f64,
    pub upper: f64,
    pub tol: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictStatus {
    /// Holds without slack.
    Strict,
    /// Holds only thanks to the multiplicative slack.
    DiscretizationMarginal,
    Violated,
}

impl SandwichVerdict {
    pub fn new(lower: f64, value: f64, upper: f64) -> Self {
        Self::with_tol(lower, value, upper, VERDICT_SLACK)
    }

    pub fn with_tol(lower: f64, value: f64, upper: f64, tol: f64) -> Self {
        let holds = lower <= value * (1.0 + tol) && value <= upper * (1.0 + tol);
        SandwichVerdict {
            lower,
            value,
            upper,
            tol,
            holds,
        }
    }

    pub fn status(&self) -> VerdictStatus {
        if self.lower <= self.value && self.value <= self.upper {
            VerdictStatus::Strict
        } else if self.holds {
            VerdictStatus::DiscretizationMarginal
        } else {
            VerdictStatus::Violated
        }
    }

    /// Smallest relative distance to either bound; negative when violated.
    pub fn slack(&self) -> f64 {
        let below = if self.lower.is_finite() {
            (self.value - self.lower) / self.lower.abs().max(f64::MIN_POSITIVE)
        } else {
            f64::INFINITY
        };
        let above = if self.upper.is_finite() {
            (self.upper - self.value) / self.upper.abs().max(f64::MIN_POSITIVE)
        } else {
            f64::INFINITY
        };
        below.min(above)
    }
}

/// Density and norm bounds implied by a finite modified energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBoundsVerdict {
    pub energy: f64,
    /// `exp(-sqrt(8E)) <= min rho`
    pub min_rho: SandwichVerdict,
    /// `max rho <= exp(sqrt(8E))`
    pub max_rho: SandwichVerdict,
    /// `||rho_x||^2 <= 8E exp(3 sqrt(8E))`
    pub grad_rho: SandwichVerdict,
    /// `||u||^2 <= 2H exp(sqrt(8E))`
    pub velocity: SandwichVerdict,
    /// `(1/8) int rho_x^2/rho^3 <= E`
    pub energy_floor: SandwichVerdict,
}

impl EnergyBoundsVerdict {
    pub fn checks(&self) -> [SandwichVerdict; 5] {
        [
            self.min_rho,
            self.max_rho,
            self.grad_rho,
            self.velocity,
            self.energy_floor,
        ]
    }

    pub fn holds(&self) -> bool {
        self.checks().iter().all(|c| c.holds)
    }

    pub fn worst_slack(&self) -> f64 {
        self.checks()
            .iter()
            .map(SandwichVerdict::slack)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Checks the density bounds, the `||rho_x||` bound and the velocity bound
/// that follow from the modified energy.
pub fn enbounds_check<T: Real>(state: &State<T>, params: &ModelParams<T>) -> EnergyBoundsVerdict {
    bounds_from_report(&evaluate(state, params).widen())
}

pub(crate) fn bounds_from_report(r: &FunctionalReport<f64>) -> EnergyBoundsVerdict {
    let e = r.energy.max(0.0);
    let root = (8.0 * e).sqrt();
    EnergyBoundsVerdict {
        energy: r.energy,
        min_rho: SandwichVerdict::new((-root).exp(), r.min_rho, f64::INFINITY),
        max_rho: SandwichVerdict::new(f64::NEG_INFINITY, r.max_rho, root.exp()),
        grad_rho: SandwichVerdict::new(f64::NEG_INFINITY, r.grad_rho_sq, 8.0 * e * (3.0 * root).exp()),
        velocity: SandwichVerdict::new(
            f64::NEG_INFINITY,
            r.u_l2 * r.u_l2,
            2.0 * r.entropy.max(0.0) * root.exp(),
        ),
        energy_floor: SandwichVerdict::new(f64::NEG_INFINITY, 0.125 * r.fisher_weighted, r.energy),
    }
}

/// `int rho u^2 <= ||u_x||^2` as a verdict (`value = int rho u^2`).
pub fn weighted_poincare<T: Real>(state: &State<T>) -> SandwichVerdict {
    let r = evaluate(state, &ModelParams::new(T::one()).expect("A = 1"));
    SandwichVerdict::new(
        f64::NEG_INFINITY,
        r.kinetic_weighted.to_f64_lossy(),
        r.grad_u_sq.to_f64_lossy(),
    )
}

/// True iff `int rho u^2 <= ||u_x||^2 (1 + slack)`.
pub fn weighted_poincare_check<T: Real>(state: &State<T>) -> bool {
    weighted_poincare(state).holds
}

/// Upper and lower bounds of the relative entropy by `L^2` distances.
///
/// Lower factor: `min{1, A^2}/2 * min(min rho, 1/max(max rho, max r))`.
/// Upper: `1/2 max rho ||u-v||^2 + A^2/2 max(||1/rho||, ||1/r||) ||rho-r||^2`.
pub fn relative_entropy_sandwich<T: Real>(
    first: &State<T>,
    second: &State<T>,
    params: &ModelParams<T>,
) -> Result<SandwichVerdict> {
    let value = relative_entropy(first, second, params)?.to_f64_lossy();
    let dx = first.grid.dx().to_f64_lossy();
    let n = first.grid.n_cells();
    let w_sq: f64 = (1..n)
        .map(|f| (first.u[f] - second.u[f]).to_f64_lossy().powi(2))
        .sum::<f64>()
        * dx;
    let r_sq: f64 = (0..n)
        .map(|j| (first.rho[j] - second.rho[j]).to_f64_lossy().powi(2))
        .sum::<f64>()
        * dx;
    let a2 = params.a_sq().to_f64_lossy();
    let (min1, max1) = (first.min_rho().to_f64_lossy(), first.max_rho().to_f64_lossy());
    let (min2, max2) = (second.min_rho().to_f64_lossy(), second.max_rho().to_f64_lossy());
    let weight = min1.min(1.0 / max1.max(max2));
    let lower = 0.5 * a2.min(1.0) * weight * (w_sq + r_sq);
    let upper = 0.5 * max1 * w_sq + 0.5 * a2 * (1.0 / min1).max(1.0 / min2) * r_sq;
    Ok(SandwichVerdict::new(lower, value, upper))
}

/// `Psi = E + accumulated (already weighted) dissipation`.
pub fn psi_value<T: Real>(energy_now: T, dissipation_so_far: T) -> T {
    energy_now + dissipation_so_far
}

/// Instantaneous Gronwall rate for the relative entropy with respect to
/// `reference = (r, v)`:
/// `(1 + 2/min{1,A^2} * max{1, ||1/r|| / ||1/rho||}) * int v_xx^2 / r`,
/// where `other_inv_rho_sup = ||1/rho||_inf` belongs to the other solution.
pub fn gronwall_coefficient<T: Real>(reference: &State<T>, params: &ModelParams<T>, other_inv_rho_sup: T) -> T {
    let rep = evaluate(reference, params);
    gronwall_from_parts(params, rep.max_inv_rho(), other_inv_rho_sup, rep.weighted_h2_u)
}

pub(crate) fn gronwall_from_parts<T: Real>(
    params: &ModelParams<T>,
    ref_inv_rho_sup: T,
    other_inv_rho_sup: T,
    weighted_h2: T,
) -> T {
    let two = T::lit(2.0);
    let ratio = (ref_inv_rho_sup / other_inv_rho_sup).max(T::one());
    (T::one() + two / params.a_sq().min(T::one()) * ratio) * weighted_h2
}
