//! Simulation and statistical verification of the stochastically forced
//! one-dimensional compressible Navier–Stokes equations with linear pressure
//! `p(rho) = A^2 rho` on `[0, 1]` with no-slip walls.
//!
//! The field, noise, functional and solver layers are generic over the
//! floating point type ([`Real`]); statistics and persisted records use
//! `f64`. Type aliases for both precisions are exported below.

pub mod error;
pub mod field;
pub mod functionals;
pub mod noise;
pub mod scalar;
pub mod solver;
pub mod stats;
pub mod tridiag;

pub use error::{Error, Result};
pub use field::{make_grid, mass, new_state, GridSpec, ModelParams, State, StateSnapshot};
pub use functionals::{
    dissipation_norms, enbounds_check, energy_e, entropy_h, evaluate, gronwall_coefficient, psi_value,
    relative_entropy, relative_entropy_sandwich, weighted_poincare_check, EnergyBoundsVerdict, FunctionalReport,
    SandwichVerdict, VerdictStatus,
};
pub use noise::{build_noise, sample_increment, sigma_sup_norm, NoiseBasis, NoiseIncrement, NoiseSpec, RngKey};
pub use scalar::Real;
pub use solver::{
    cfl_check, integrate_path, paired_paths, step, Checkpoint, DensityFlux, ObserverConfig, PairedRun, StepSpec,
    Trajectory, TrajectoryRecord,
};

pub type GridSpec64 = GridSpec<f64>;
pub type GridSpec32 = GridSpec<f32>;
pub type State64 = State<f64>;
pub type State32 = State<f32>;
pub type ModelParams64 = ModelParams<f64>;
pub type ModelParams32 = ModelParams<f32>;
pub type NoiseBasis64 = NoiseBasis<f64>;
pub type NoiseBasis32 = NoiseBasis<f32>;
pub type StepSpec64 = StepSpec<f64>;
pub type StepSpec32 = StepSpec<f32>;
pub type FunctionalReport64 = FunctionalReport<f64>;
