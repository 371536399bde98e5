//! Semi-implicit Euler–Maruyama integrator on the staggered grid, trajectory
//! bookkeeping, paired same-noise runs and checkpoints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{check_density, mass, ModelParams, State, StateSnapshot};
use crate::functionals::{
    bounds_from_report, evaluate_with_logs, gronwall_from_parts, relative_entropy, FunctionalReport,
};
use crate::noise::{NoiseBasis, NoiseIncrement, NormalStream};
use crate::scalar::Real;
use crate::tridiag::solve_in_place;

/// Density flux used by the transport half step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityFlux {
    /// `rho_f u_f` with the face mean density. Conserves the discrete
    /// entropy exactly in the semi-discrete limit. A step that would more
    /// than halve any cell is redone with [`DensityFlux::Upwind`].
    #[default]
    Central,
    /// First order donor cell. Positive whenever `max|u| dt/dx <= 1/2`.
    Upwind,
}

/// Time step and stability controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSpec<T> {
    pub dt: T,
    pub cfl_max: T,
    pub flux: DensityFlux,
}

impl<T: Real> StepSpec<T> {
    pub fn new(dt: T) -> Result<Self> {
        Self::with_options(dt, T::lit(0.5), DensityFlux::Central)
    }

    pub fn with_options(dt: T, cfl_max: T, flux: DensityFlux) -> Result<Self> {
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(Error::param("dt", format!("must be positive, got {dt}")));
        }
        if !(cfl_max > T::zero() && cfl_max <= T::one()) {
            return Err(Error::param("cfl_max", format!("must lie in (0, 1], got {cfl_max}")));
        }
        Ok(StepSpec { dt, cfl_max, flux })
    }
}

/// `max|u| dt / dx`.
pub fn cfl_check<T: Real>(state: &State<T>, spec: &StepSpec<T>) -> T {
    state.max_abs_u() * spec.dt / state.grid.dx()
}

/// What a single step did besides updating the state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome<T> {
    pub cfl: T,
    /// The central flux was replaced by upwinding for this step.
    pub fell_back: bool,
}

/// Reusable buffers for [`step`]; one per trajectory.
#[derive(Debug, Clone)]
pub struct Stepper<T> {
    params: ModelParams<T>,
    spec: StepSpec<T>,
    flux: Vec<T>,
    rho_star: Vec<T>,
    log_rho: Vec<T>,
    sub: Vec<T>,
    diag: Vec<T>,
    sup: Vec<T>,
    rhs: Vec<T>,
    scratch: Vec<T>,
    logs_current: bool,
    fallbacks: u64,
}

impl<T: Real> Stepper<T> {
    pub fn new(n_cells: usize, params: ModelParams<T>, spec: StepSpec<T>) -> Self {
        let m = n_cells - 1;
        Stepper {
            params,
            spec,
            flux: vec![T::zero(); n_cells + 1],
            rho_star: vec![T::zero(); n_cells],
            log_rho: vec![T::zero(); n_cells],
            sub: vec![T::zero(); m],
            diag: vec![T::zero(); m],
            sup: vec![T::zero(); m],
            rhs: vec![T::zero(); m],
            scratch: vec![T::zero(); m],
            logs_current: false,
            fallbacks: 0,
        }
    }

    pub fn spec(&self) -> &StepSpec<T> {
        &self.spec
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    /// Number of steps that fell back to upwinding so far.
    pub fn fallbacks(&self) -> u64 {
        self.fallbacks
    }

    /// `log rho` of the state last passed through [`Stepper::advance`] or
    /// [`Stepper::refresh_logs`].
    pub(crate) fn logs(&self) -> &[T] {
        &self.log_rho
    }

    pub(crate) fn refresh_logs(&mut self, state: &State<T>) {
        for (l, r) in self.log_rho.iter_mut().zip(&state.rho) {
            *l = r.ln();
        }
        self.logs_current = true;
    }

    pub(crate) fn ensure_logs(&mut self, state: &State<T>) {
        if !self.logs_current {
            self.refresh_logs(state);
        }
    }

    fn transport(&mut self, state: &State<T>, flux: DensityFlux) {
        let n = state.rho.len();
        let half = T::lit(0.5);
        let (rho, u) = (&state.rho, &state.u);
        for f in 1..n {
            self.flux[f] = match flux {
                DensityFlux::Central => half * (rho[f - 1] + rho[f]) * u[f],
                DensityFlux::Upwind => {
                    if u[f] >= T::zero() {
                        rho[f - 1] * u[f]
                    } else {
                        rho[f] * u[f]
                    }
                }
            };
        }
        let ratio = self.spec.dt / state.grid.dx();
        for j in 0..n {
            self.rho_star[j] = rho[j] - ratio * (self.flux[j + 1] - self.flux[j]);
        }
    }

    fn central_acceptable(&self, rho: &[T]) -> bool {
        let half = T::lit(0.5);
        self.rho_star
            .iter()
            .zip(rho)
            .all(|(&s, &r)| s.is_finite() && s > half * r)
    }

    /// Advances `state` by one step with the face increment `dw`.
    pub fn advance(&mut self, state: &mut State<T>, dw: &[T]) -> Result<StepOutcome<T>> {
        let n = state.grid.n_cells();
        state.grid.check_faces("dW", dw)?;
        if self.rho_star.len() != n {
            return Err(Error::GridMismatch(self.rho_star.len(), n));
        }
        let dt = self.spec.dt;
        let cfl = cfl_check(state, &self.spec);
        if !(cfl <= self.spec.cfl_max) {
            return Err(Error::Cfl {
                cfl: cfl.to_f64_lossy(),
                limit: self.spec.cfl_max.to_f64_lossy(),
            });
        }

        self.flux[0] = T::zero();
        self.flux[n] = T::zero();
        self.transport(state, self.spec.flux);
        let mut fell_back = false;
        if self.spec.flux == DensityFlux::Central && !self.central_acceptable(&state.rho) {
            self.transport(state, DensityFlux::Upwind);
            self.fallbacks += 1;
            fell_back = true;
        }
        self.logs_current = false;
        check_density(&self.rho_star)?;
        for (l, r) in self.log_rho.iter_mut().zip(&self.rho_star) {
            *l = r.ln();
        }

        let dx = state.grid.dx();
        let inv_dx = T::one() / dx;
        let half = T::lit(0.5);
        let quarter = T::lit(0.25);
        let a2 = self.params.a_sq();
        let visc = dt * inv_dx * inv_dx;
        let (rho, u) = (&state.rho, &state.u);
        for f in 1..n {
            let i = f - 1;
            // cell averaged mass fluxes on either side of the face
            let left = self.flux[f - 1] + self.flux[f];
            let right = self.flux[f] + self.flux[f + 1];
            let adv = quarter * inv_dx * (right * (u[f + 1] - u[f]) + left * (u[f] - u[f - 1]))
                / (half * (rho[f - 1] + rho[f]));
            let grad_p = a2 * (self.log_rho[f] - self.log_rho[f - 1]) * inv_dx;
            self.rhs[i] = u[f] - dt * (adv + grad_p) + dw[f];
            let c = visc / (half * (self.rho_star[f - 1] + self.rho_star[f]));
            self.diag[i] = T::one() + c + c;
            self.sub[i] = -c;
            self.sup[i] = -c;
        }
        solve_in_place(&self.sub, &self.diag, &self.sup, &mut self.rhs, &mut self.scratch)?;
        if self.rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("u"));
        }

        state.rho.copy_from_slice(&self.rho_star);
        state.u[1..n].copy_from_slice(&self.rhs);
        state.time = state.time + dt;
        self.logs_current = true;
        Ok(StepOutcome { cfl, fell_back })
    }
}

/// One step of the scheme, returning the new state.
pub fn step<T: Real>(
    state: &State<T>,
    params: &ModelParams<T>,
    spec: &StepSpec<T>,
    dw: &NoiseIncrement<T>,
) -> Result<State<T>> {
    let mut next = state.clone();
    Stepper::new(state.grid.n_cells(), *params, *spec).advance(&mut next, &dw.dw)?;
    Ok(next)
}

/// What to record along a trajectory. Strides are in steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObserverConfig {
    pub sample_stride: u64,
    pub snapshot_stride: Option<u64>,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        ObserverConfig {
            sample_stride: 100,
            snapshot_stride: None,
        }
    }
}

/// One sampled time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub step: u64,
    pub t: f64,
    pub report: FunctionalReport<f64>,
    /// `int_0^t ||u_x||^2`
    pub diss_u: f64,
    /// `int_0^t ||(log rho)_x||^2`
    pub diss_logrho: f64,
    pub psi: f64,
    pub psi_sup: f64,
    pub mass: f64,
}

/// Running quantities carried from step to step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accumulators {
    pub diss_u: f64,
    pub diss_logrho: f64,
    pub psi_sup: f64,
    /// `sup (Psi(t) - |sigma|^2 t / 2)`
    pub psi_shift_sup: f64,
    pub initial_energy: f64,
    /// `sum |H_{n+1} - H_n + dt ||u_x||^2_n|`
    pub balance_residual: f64,
    pub prev_entropy: f64,
    pub prev_grad_u: f64,
    pub max_mass_error: f64,
    pub min_rho: f64,
    pub bounds_checked: u64,
    pub bounds_violated: u64,
    pub worst_bounds_slack: f64,
    pub flux_fallbacks: u64,
}

impl Default for Accumulators {
    fn default() -> Self {
        Accumulators {
            diss_u: 0.0,
            diss_logrho: 0.0,
            psi_sup: f64::NEG_INFINITY,
            psi_shift_sup: f64::NEG_INFINITY,
            initial_energy: f64::NAN,
            balance_residual: 0.0,
            prev_entropy: f64::NAN,
            prev_grad_u: f64::NAN,
            max_mass_error: 0.0,
            min_rho: f64::INFINITY,
            bounds_checked: 0,
            bounds_violated: 0,
            worst_bounds_slack: f64::INFINITY,
            flux_fallbacks: 0,
        }
    }
}

/// Everything recorded along one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub trajectory: u64,
    pub seed: u64,
    pub dt: f64,
    pub steps: u64,
    pub rows: Vec<SampleRow>,
    pub snapshots: Vec<StateSnapshot>,
    pub totals: Accumulators,
    pub final_state: StateSnapshot,
}

impl TrajectoryRecord {
    pub fn final_time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    /// The sample closest to `t`, if one lies within half a step of it.
    pub fn row_at(&self, t: f64) -> Option<&SampleRow> {
        let i = self.rows.partition_point(|r| r.t < t - 0.5 * self.dt);
        self.rows.get(i).filter(|r| (r.t - t).abs() <= 0.5 * self.dt)
    }

    pub fn bounds_hold(&self) -> bool {
        self.totals.bounds_violated == 0
    }
}

/// Number of steps of size `dt` that make up `t`.
pub fn steps_for(t: f64, dt: f64) -> Result<u64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::param("T", format!("must be positive, got {t}")));
    }
    let n = (t / dt).round();
    if n < 1.0 || ((n * dt - t) / t).abs() > 1e-9 {
        return Err(Error::param("T", format!("{t} is not a whole number of steps of {dt}")));
    }
    Ok(n as u64)
}

/// Format version of [`Checkpoint`].
pub const CHECKPOINT_VERSION: u32 = 1;

/// Resumable state of a trajectory between two steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub trajectory: u64,
    pub seed: u64,
    /// Index of the next step to take; the state at this index has not been
    /// observed yet.
    pub step: u64,
    pub total_steps: u64,
    pub dt: f64,
    pub state: StateSnapshot,
    pub accumulators: Accumulators,
    pub rows: Vec<SampleRow>,
    pub snapshots: Vec<StateSnapshot>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses a checkpoint, refusing any other format version.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Probe {
            version: u32,
        }
        let probe: Probe = serde_json::from_str(text)?;
        if probe.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: probe.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(serde_json::from_str(text)?)
    }
}

/// A trajectory in progress: state, noise stream and recorders.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Real> {
    id: u64,
    seed: u64,
    basis: NoiseBasis<T>,
    observer: ObserverConfig,
    stepper: Stepper<T>,
    stream: NormalStream,
    state: State<T>,
    step: u64,
    total_steps: u64,
    xi: Vec<f64>,
    dw: Vec<T>,
    acc: Accumulators,
    rows: Vec<SampleRow>,
    snapshots: Vec<StateSnapshot>,
    observed: bool,
}

impl<T: Real> Trajectory<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        init: State<T>,
        params: ModelParams<T>,
        spec: StepSpec<T>,
        basis: &NoiseBasis<T>,
        seed: u64,
        id: u64,
        horizon: f64,
        observer: ObserverConfig,
    ) -> Result<Self> {
        if init.grid != *basis.grid() {
            return Err(Error::GridMismatch(init.grid.n_cells(), basis.grid().n_cells()));
        }
        if observer.sample_stride == 0 || observer.snapshot_stride == Some(0) {
            return Err(Error::param("stride", "must be at least one step"));
        }
        let total_steps = steps_for(horizon, spec.dt.to_f64_lossy())?;
        let n = init.grid.n_cells();
        Ok(Trajectory {
            id,
            seed,
            basis: basis.clone(),
            observer,
            stepper: Stepper::new(n, params, spec),
            stream: NormalStream::new(seed, id),
            xi: vec![0.0; basis.n_modes()],
            dw: vec![T::zero(); n + 1],
            state: init,
            step: 0,
            total_steps,
            acc: Accumulators::default(),
            rows: Vec::new(),
            snapshots: Vec::new(),
            observed: false,
        })
    }

    /// Rebuilds a trajectory from a checkpoint taken by [`Trajectory::checkpoint`].
    pub fn resume(
        ckpt: &Checkpoint,
        params: ModelParams<T>,
        spec: StepSpec<T>,
        basis: &NoiseBasis<T>,
        observer: ObserverConfig,
    ) -> Result<Self> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: ckpt.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        if ckpt.dt != spec.dt.to_f64_lossy() {
            return Err(Error::param("dt", "differs from the checkpoint"));
        }
        let state = State::from_snapshot(&ckpt.state)?;
        let horizon = ckpt.total_steps as f64 * ckpt.dt;
        let mut traj = Self::new(
            state,
            params,
            spec,
            basis,
            ckpt.seed,
            ckpt.trajectory,
            horizon,
            observer,
        )?;
        traj.total_steps = ckpt.total_steps;
        traj.step = ckpt.step;
        traj.acc = ckpt.accumulators;
        traj.stepper.fallbacks = ckpt.accumulators.flux_fallbacks;
        traj.rows = ckpt.rows.clone();
        traj.snapshots = ckpt.snapshots.clone();
        // the last state is observed before the final checkpoint is taken
        traj.observed = traj.step >= traj.total_steps;
        Ok(traj)
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn state(&self) -> &State<T> {
        &self.state
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.total_steps && self.observed
    }

    pub fn rows(&self) -> &[SampleRow] {
        &self.rows
    }

    pub fn accumulators(&self) -> &Accumulators {
        &self.acc
    }

    fn dt(&self) -> f64 {
        self.stepper.spec.dt.to_f64_lossy()
    }

    /// Records the current state (at time `step * dt`) and returns its report.
    fn observe(&mut self) -> FunctionalReport<f64> {
        self.stepper.ensure_logs(&self.state);
        let rep = evaluate_with_logs(&self.state, &self.stepper.params, self.stepper.logs()).widen();
        let dt = self.dt();
        let t = self.step as f64 * dt;
        let a2 = self.stepper.params.a_sq().to_f64_lossy();
        let acc = &mut self.acc;
        if self.step == 0 {
            acc.initial_energy = rep.energy;
        } else {
            acc.balance_residual += (rep.entropy - acc.prev_entropy + dt * acc.prev_grad_u).abs();
        }
        acc.prev_entropy = rep.entropy;
        acc.prev_grad_u = rep.grad_u_sq;

        let psi = rep.energy + 0.25 * acc.diss_u + 0.25 * a2 * acc.diss_logrho;
        acc.psi_sup = acc.psi_sup.max(psi);
        let sigma_sq = self.basis.sup_norm_sq().to_f64_lossy();
        acc.psi_shift_sup = acc.psi_shift_sup.max(psi - 0.5 * sigma_sq * t);

        let m = mass(&self.state).to_f64_lossy();
        acc.max_mass_error = acc.max_mass_error.max((m - 1.0).abs());
        acc.min_rho = acc.min_rho.min(rep.min_rho);

        if self.step.is_multiple_of(self.observer.sample_stride) {
            let bounds = bounds_from_report(&rep);
            acc.bounds_checked += 1;
            if !bounds.holds() {
                acc.bounds_violated += 1;
            }
            acc.worst_bounds_slack = acc.worst_bounds_slack.min(bounds.worst_slack());
            self.rows.push(SampleRow {
                step: self.step,
                t,
                report: rep,
                diss_u: acc.diss_u,
                diss_logrho: acc.diss_logrho,
                psi,
                psi_sup: acc.psi_sup,
                mass: m,
            });
        }
        if let Some(s) = self.observer.snapshot_stride {
            if self.step.is_multiple_of(s) {
                self.snapshots.push(self.state.to_snapshot());
            }
        }
        self.observed = true;
        rep
    }

    fn fill_noise(&mut self) {
        if self.basis.is_zero() {
            self.dw.iter_mut().for_each(|v| *v = T::zero());
        } else {
            self.stream.fill(self.step, &mut self.xi);
            self.basis.combine(&self.xi, self.stepper.spec.dt, &mut self.dw);
        }
    }

    /// Observes the current state, then steps it with the given increment.
    fn observe_and_step(&mut self, dw: &[T]) -> Result<FunctionalReport<f64>> {
        let rep = if self.observed {
            self.current_report()
        } else {
            self.observe()
        };
        let dt = self.dt();
        let step = self.step;
        let out = self.stepper.advance(&mut self.state, dw).map_err(|e| Error::Step {
            step,
            source: Box::new(e),
        })?;
        if out.fell_back {
            self.acc.flux_fallbacks += 1;
        }
        self.acc.diss_u += dt * rep.grad_u_sq;
        self.acc.diss_logrho += dt * rep.grad_logrho_sq;
        self.step += 1;
        self.observed = false;
        Ok(rep)
    }

    fn current_report(&mut self) -> FunctionalReport<f64> {
        self.stepper.ensure_logs(&self.state);
        evaluate_with_logs(&self.state, &self.stepper.params, self.stepper.logs()).widen()
    }

    /// Advances up to step index `target` (capped at the horizon).
    pub fn advance_to(&mut self, target: u64) -> Result<()> {
        let target = target.min(self.total_steps);
        while self.step < target {
            self.fill_noise();
            let dw = std::mem::take(&mut self.dw);
            let res = self.observe_and_step(&dw);
            self.dw = dw;
            res?;
        }
        if self.step == self.total_steps && !self.observed {
            self.observe();
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<TrajectoryRecord> {
        self.advance_to(self.total_steps)?;
        Ok(self.finish())
    }

    pub fn checkpoint(&self, config_hash: &str) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            trajectory: self.id,
            seed: self.seed,
            step: self.step,
            total_steps: self.total_steps,
            dt: self.dt(),
            state: self.state.to_snapshot(),
            accumulators: self.acc,
            rows: self.rows.clone(),
            snapshots: self.snapshots.clone(),
        }
    }

    pub fn finish(self) -> TrajectoryRecord {
        TrajectoryRecord {
            trajectory: self.id,
            seed: self.seed,
            dt: self.dt(),
            steps: self.step,
            final_state: self.state.to_snapshot(),
            rows: self.rows,
            snapshots: self.snapshots,
            totals: self.acc,
        }
    }
}

/// Runs one trajectory from `init` over `[0, horizon]`.
#[allow(clippy::too_many_arguments)]
pub fn integrate_path<T: Real>(
    init: &State<T>,
    params: &ModelParams<T>,
    spec: &StepSpec<T>,
    basis: &NoiseBasis<T>,
    seed: u64,
    trajectory: u64,
    horizon: f64,
    observer: ObserverConfig,
) -> Result<TrajectoryRecord> {
    Trajectory::new(init.clone(), *params, *spec, basis, seed, trajectory, horizon, observer)?
        .run()
        .map_err(|e| Error::Trajectory {
            id: trajectory,
            source: Box::new(e),
        })
}

/// Relative entropy of the first path with respect to the second at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeEntropySample {
    pub t: f64,
    pub relative_entropy: f64,
    /// `H_r(0) exp(int_0^t c(s) ds)`
    pub envelope: f64,
}

/// Two paths driven by the same increments together with their relative
/// entropy series, sampled at `observer.sample_stride`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedRun {
    pub first: TrajectoryRecord,
    pub second: TrajectoryRecord,
    pub series: Vec<RelativeEntropySample>,
}

/// Evolves `init1` and `init2` under the identical noise path.
#[allow(clippy::too_many_arguments)]
pub fn paired_paths<T: Real>(
    init1: &State<T>,
    init2: &State<T>,
    params: &ModelParams<T>,
    spec: &StepSpec<T>,
    basis: &NoiseBasis<T>,
    seed: u64,
    horizon: f64,
    observer: ObserverConfig,
) -> Result<PairedRun> {
    if init1.grid != init2.grid {
        return Err(Error::GridMismatch(init1.grid.n_cells(), init2.grid.n_cells()));
    }
    let mut a = Trajectory::new(init1.clone(), *params, *spec, basis, seed, 0, horizon, observer)?;
    let mut b = Trajectory::new(init2.clone(), *params, *spec, basis, seed, 0, horizon, observer)?;
    let dt = spec.dt.to_f64_lossy();
    let h0 = relative_entropy(init1, init2, params)?.to_f64_lossy();
    let mut log_growth = 0.0;
    let mut series = Vec::new();
    let mut record = |step: u64, a: &State<T>, b: &State<T>, log_growth: f64| -> Result<()> {
        if step.is_multiple_of(observer.sample_stride) {
            series.push(RelativeEntropySample {
                t: step as f64 * dt,
                relative_entropy: relative_entropy(a, b, params)?.to_f64_lossy(),
                envelope: h0 * log_growth.exp(),
            });
        }
        Ok(())
    };
    while a.step < a.total_steps {
        let step = a.step;
        record(step, &a.state, &b.state, log_growth)?;
        a.fill_noise();
        let dw = std::mem::take(&mut a.dw);
        let ra = a.observe_and_step(&dw);
        let rb = b.observe_and_step(&dw);
        a.dw = dw;
        let (rep_a, rep_b) = (ra?, rb?);
        // rates use the states at the left end of the step
        let c = gronwall_from_parts(
            params,
            T::lit(rep_b.max_inv_rho()),
            T::lit(rep_a.max_inv_rho()),
            T::lit(rep_b.weighted_h2_u),
        );
        log_growth += dt * c.to_f64_lossy();
    }
    record(a.step, &a.state, &b.state, log_growth)?;
    a.advance_to(a.total_steps)?;
    b.advance_to(b.total_steps)?;
    Ok(PairedRun {
        first: a.finish(),
        second: b.finish(),
        series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::make_grid;
    use crate::functionals::{entropy_h, evaluate};
    use crate::noise::build_noise;
    use std::f64::consts::PI;

    fn params() -> ModelParams<f64> {
        ModelParams::new(1.0).unwrap()
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let g = make_grid::<f64>(32).unwrap();
        let s = State::equilibrium(&g);
        let spec = StepSpec::new(1e-3).unwrap();
        let next = step(&s, &params(), &spec, &NoiseIncrement::zero(&g, 1e-3)).unwrap();
        assert_eq!(next.rho, s.rho);
        assert_eq!(next.u, s.u);
        assert_eq!(next.time, 1e-3);
    }

    #[test]
    fn cfl_examples() {
        let g = make_grid::<f64>(16).unwrap();
        let spec = StepSpec::new(g.dx() / 2.0).unwrap();
        assert_eq!(cfl_check(&State::equilibrium(&g), &spec), 0.0);
        let s = State::from_profiles(&g, |_| 1.0, |x| (PI * x).sin()).unwrap();
        let mut u = s.u.clone();
        u[8] = 1.0;
        let s = State { u, ..s };
        assert!((cfl_check(&s, &spec) - 0.5).abs() < 1e-15);

        let mut u = s.u.clone();
        u[8] = 1.01;
        let s = State { u, ..s };
        let spec = StepSpec::with_options(g.dx(), 1.0, DensityFlux::Central).unwrap();
        let err = step(&s, &params(), &spec, &NoiseIncrement::zero(&g, g.dx())).unwrap_err();
        assert!(matches!(err, Error::Cfl { .. }));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(StepSpec::new(0.0).is_err());
        assert!(StepSpec::with_options(1e-3, 1.5, DensityFlux::Upwind).is_err());
        assert!(steps_for(0.1, 0.03).is_err());
        assert_eq!(steps_for(0.1, 1e-5).unwrap(), 10_000);
    }

    fn one_step_velocity(n: usize, dt: f64) -> Vec<(f64, f64)> {
        let g = make_grid::<f64>(n).unwrap();
        let s = State::from_profiles(&g, |_| 1.0, |x| 1e-3 * (PI * x).sin()).unwrap();
        let spec = StepSpec::new(dt).unwrap();
        let next = step(&s, &params(), &spec, &NoiseIncrement::zero(&g, dt)).unwrap();
        g.faces().into_iter().zip(next.u).collect()
    }

    #[test]
    fn single_step_matches_fine_reference() {
        let (n, dt) = (32, 1e-3);
        let coarse = one_step_velocity(n, dt);
        // reference at dx/4 and dt/10, ten steps
        let g = make_grid::<f64>(4 * n).unwrap();
        let mut s = State::from_profiles(&g, |_| 1.0, |x| 1e-3 * (PI * x).sin()).unwrap();
        let spec = StepSpec::new(dt / 10.0).unwrap();
        let zero = NoiseIncrement::zero(&g, dt / 10.0);
        for _ in 0..10 {
            s = step(&s, &params(), &spec, &zero).unwrap();
        }
        let scale = 1e-3 / (1.0 + dt * PI * PI);
        for (f, (x, v)) in coarse.iter().enumerate() {
            let fine = s.u[4 * f];
            assert!((g.face(4 * f) - x).abs() < 1e-14);
            assert!((v - fine).abs() / scale < 1e-3, "face {f}: {v} vs {fine}");
        }
    }

    #[test]
    fn same_key_same_output() {
        let g = make_grid::<f64>(32).unwrap();
        let basis = build_noise(&g, 4, 0.3, 3.0).unwrap();
        let s = State::from_profiles(&g, |x| 1.0 + 0.2 * (2.0 * PI * x).sin(), |x| 0.1 * (PI * x).sin()).unwrap();
        let spec = StepSpec::new(1e-3).unwrap();
        let key = crate::noise::RngKey {
            seed: 7,
            trajectory: 2,
            step: 11,
        };
        let dw1 = crate::noise::sample_increment(&basis, key, 1e-3).unwrap();
        let dw2 = crate::noise::sample_increment(&basis, key, 1e-3).unwrap();
        let a = step(&s, &params(), &spec, &dw1).unwrap();
        let b = step(&s, &params(), &spec, &dw2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn equilibrium_path_stays_zero() {
        let g = make_grid::<f64>(32).unwrap();
        let basis = build_noise(&g, 4, 0.0, 3.0).unwrap();
        let rec = integrate_path(
            &State::equilibrium(&g),
            &params(),
            &StepSpec::new(1e-2).unwrap(),
            &basis,
            1,
            0,
            1.0,
            ObserverConfig {
                sample_stride: 10,
                snapshot_stride: None,
            },
        )
        .unwrap();
        assert_eq!(rec.rows.len(), 11);
        for r in &rec.rows {
            assert_eq!(r.report.entropy, 0.0);
            assert_eq!(r.report.energy, 0.0);
        }
        assert_eq!(rec.totals.psi_sup, 0.0);
        assert!(rec.bounds_hold());
    }

    #[test]
    fn deterministic_entropy_decays() {
        let g = make_grid::<f64>(64).unwrap();
        let basis = build_noise(&g, 4, 0.0, 3.0).unwrap();
        let init = State::from_profiles(&g, |x| 1.0 + 0.2 * (2.0 * PI * x).sin(), |x| 0.1 * (PI * x).sin()).unwrap();
        let rec = integrate_path(
            &init,
            &params(),
            &StepSpec::new(1e-4).unwrap(),
            &basis,
            1,
            0,
            0.05,
            ObserverConfig {
                sample_stride: 1,
                snapshot_stride: None,
            },
        )
        .unwrap();
        for w in rec.rows.windows(2) {
            assert!(w[1].report.entropy <= w[0].report.entropy);
            assert!(w[1].diss_u >= w[0].diss_u);
        }
        assert!(rec.totals.max_mass_error < 1e-13);
        assert_eq!(rec.totals.flux_fallbacks, 0);
        assert!(rec.bounds_hold());
        let h0 = entropy_h(&init, &params());
        assert!(
            rec.totals.balance_residual < 1e-3 * h0,
            "{}",
            rec.totals.balance_residual
        );
    }

    #[test]
    fn row_lookup() {
        let g = make_grid::<f64>(16).unwrap();
        let basis = build_noise(&g, 2, 0.0, 3.0).unwrap();
        let rec = integrate_path(
            &State::equilibrium(&g),
            &params(),
            &StepSpec::new(0.01).unwrap(),
            &basis,
            0,
            0,
            0.1,
            ObserverConfig {
                sample_stride: 2,
                snapshot_stride: Some(5),
            },
        )
        .unwrap();
        assert_eq!(rec.row_at(0.04).unwrap().step, 4);
        assert!(rec.row_at(0.05).is_none());
        assert_eq!(rec.snapshots.len(), 3);
    }

    fn whole_init(g: &crate::field::GridSpec<f64>) -> State<f64> {
        State::from_profiles(g, |x| 1.0 + 0.1 * (2.0 * PI * x).cos(), |_| 0.0).unwrap()
    }

    #[test]
    fn checkpoint_resume_is_bitwise() {
        let g = make_grid::<f64>(32).unwrap();
        let basis = build_noise(&g, 4, 0.3, 3.0).unwrap();
        let init = whole_init(&g);
        let spec = StepSpec::new(1e-3).unwrap();
        let obs = ObserverConfig {
            sample_stride: 7,
            snapshot_stride: Some(13),
        };
        let whole = Trajectory::new(init.clone(), params(), spec, &basis, 5, 3, 0.2, obs)
            .unwrap()
            .run()
            .unwrap();

        let mut t = Trajectory::new(init, params(), spec, &basis, 5, 3, 0.2, obs).unwrap();
        t.advance_to(77).unwrap();
        let text = t.checkpoint("abc").to_json().unwrap();
        let ck = Checkpoint::from_json(&text).unwrap();
        let resumed = Trajectory::resume(&ck, params(), spec, &basis, obs)
            .unwrap()
            .run()
            .unwrap();
        assert_eq!(whole, resumed);

        let mut t = Trajectory::new(whole_init(&g), params(), spec, &basis, 5, 3, 0.2, obs).unwrap();
        t.advance_to(u64::MAX).unwrap();
        let end = t.checkpoint("abc");
        let again = Trajectory::resume(&end, params(), spec, &basis, obs)
            .unwrap()
            .run()
            .unwrap();
        assert_eq!(whole, again);
    }

    #[test]
    fn checkpoint_version_is_checked() {
        let text = r#"{"version": 99}"#;
        assert!(matches!(
            Checkpoint::from_json(text),
            Err(Error::CheckpointVersion {
                found: 99,
                expected: CHECKPOINT_VERSION
            })
        ));
    }

    #[test]
    fn identical_pairs_are_bitwise_equal() {
        let g = make_grid::<f64>(32).unwrap();
        let basis = build_noise(&g, 4, 0.3, 3.0).unwrap();
        let init = State::from_profiles(&g, |x| 1.0 + 0.1 * (2.0 * PI * x).cos(), |_| 0.0).unwrap();
        let run = paired_paths(
            &init,
            &init,
            &params(),
            &StepSpec::new(1e-3).unwrap(),
            &basis,
            9,
            0.05,
            ObserverConfig {
                sample_stride: 5,
                snapshot_stride: None,
            },
        )
        .unwrap();
        assert_eq!(run.first, run.second);
        assert!(run.series.iter().all(|s| s.relative_entropy == 0.0));
        assert_eq!(run.series.len(), 11);
    }

    #[test]
    fn report_reuses_cached_logs() {
        let g = make_grid::<f64>(16).unwrap();
        let s = State::from_profiles(&g, |x| 1.0 + 0.3 * x, |x| 0.1 * (PI * x).sin()).unwrap();
        let mut st = Stepper::new(16, params(), StepSpec::new(1e-3).unwrap());
        let mut s2 = s.clone();
        st.advance(&mut s2, &[0.0; 17]).unwrap();
        let cached = evaluate_with_logs(&s2, &params(), st.logs());
        assert_eq!(cached, evaluate(&s2, &params()));
    }
}
