//! Staggered grid on the unit interval, the discrete `(rho, u)` state and
//! the difference/quadrature stencils shared by every other module.
//!
//! Density lives at the `n` cell centres `x_j = (j + 1/2) dx`, velocity at
//! the `n + 1` faces `x_f = f dx`. The two boundary faces carry the
//! homogeneous Dirichlet condition, so only faces `1..n` are unknowns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Uniform partition of `(0, 1)` into `n_cells` cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec<T> {
    n_cells: usize,
    dx: T,
}

pub const MIN_CELLS: usize = 8;

/// Builds the grid with `dx = 1 / n_cells`.
///
/// Rejects `n_cells < 8` and cell counts for which `dx * n_cells` does not
/// round back to exactly one in `T`.
pub fn make_grid<T: Real>(n_cells: usize) -> Result<GridSpec<T>> {
    if n_cells < MIN_CELLS {
        return Err(Error::GridTooSmall(n_cells));
    }
    let n = T::from_count(n_cells);
    let dx = T::one() / n;
    if dx * n != T::one() {
        return Err(Error::GridSpacingInexact(n_cells));
    }
    Ok(GridSpec { n_cells, dx })
}

impl<T: Real> GridSpec<T> {
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_faces(&self) -> usize {
        self.n_cells + 1
    }

    pub fn dx(&self) -> T {
        self.dx
    }

    /// Centre of cell `j`.
    pub fn center(&self, j: usize) -> T {
        (T::from_count(j) + T::lit(0.5)) * self.dx
    }

    /// Position of face `f`; face `0` is `x = 0`, face `n_cells` is `x = 1`.
    pub fn face(&self, f: usize) -> T {
        T::from_count(f) * self.dx
    }

    pub fn centers(&self) -> Vec<T> {
        (0..self.n_cells).map(|j| self.center(j)).collect()
    }

    pub fn faces(&self) -> Vec<T> {
        (0..self.n_faces()).map(|f| self.face(f)).collect()
    }

    /// Evaluates `f` at every cell centre.
    pub fn sample_centers(&self, f: impl Fn(T) -> T) -> Vec<T> {
        (0..self.n_cells).map(|j| f(self.center(j))).collect()
    }

    /// Evaluates `f` at every face.
    pub fn sample_faces(&self, f: impl Fn(T) -> T) -> Vec<T> {
        (0..self.n_faces()).map(|i| f(self.face(i))).collect()
    }

    /// Evaluates `f` at the interior faces and pins both boundary faces to
    /// zero, giving a field compatible with the no-slip condition.
    pub fn sample_faces_dirichlet(&self, f: impl Fn(T) -> T) -> Vec<T> {
        let mut out = self.sample_faces(f);
        out[0] = T::zero();
        out[self.n_cells] = T::zero();
        out
    }

    pub(crate) fn check_centers(&self, what: &'static str, v: &[T]) -> Result<()> {
        check_len(what, self.n_cells, v.len())
    }

    pub(crate) fn check_faces(&self, what: &'static str, v: &[T]) -> Result<()> {
        check_len(what, self.n_faces(), v.len())
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::SizeMismatch { what, expected, got });
    }
    Ok(())
}

/// Pressure / inverse-Mach parameter of the linear pressure law `A^2 rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    a: T,
}

impl<T: Real> ModelParams<T> {
    pub fn new(a: T) -> Result<Self> {
        if !(a > T::zero()) || !a.is_finite() {
            return Err(Error::param("A", format!("must be positive and finite, got {a}")));
        }
        Ok(Self { a })
    }

    pub fn a(&self) -> T {
        self.a
    }

    pub fn a_sq(&self) -> T {
        self.a * self.a
    }
}

/// Discrete phase-space point: positive unit-mass density at centres and a
/// velocity at faces that vanishes on the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct State<T> {
    pub(crate) grid: GridSpec<T>,
    pub(crate) rho: Vec<T>,
    pub(crate) u: Vec<T>,
    pub(crate) time: T,
}

/// Validates the initial data and rescales the density to unit mass.
///
/// Returns the state together with the multiplicative factor that was
/// applied to `rho_init`.
pub fn new_state<T: Real>(grid: &GridSpec<T>, rho_init: &[T], u_init: &[T]) -> Result<(State<T>, T)> {
    grid.check_centers("rho", rho_init)?;
    grid.check_faces("u", u_init)?;
    check_density(rho_init)?;
    check_velocity(u_init)?;
    let m = integrate_centers(grid, rho_init)?;
    let rescale = T::one() / m;
    let rho = rho_init.iter().map(|&r| r * rescale).collect();
    let state = State {
        grid: *grid,
        rho,
        u: u_init.to_vec(),
        time: T::zero(),
    };
    Ok((state, rescale))
}

pub(crate) fn check_density<T: Real>(rho: &[T]) -> Result<()> {
    for (cell, &r) in rho.iter().enumerate() {
        if !r.is_finite() {
            return Err(Error::NonFinite("rho"));
        }
        if !(r > T::zero()) {
            return Err(Error::NonPositiveDensity {
                cell,
                value: r.to_f64_lossy(),
            });
        }
    }
    Ok(())
}

fn check_velocity<T: Real>(u: &[T]) -> Result<()> {
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("u"));
    }
    let (left, right) = (u[0], u[u.len() - 1]);
    if left != T::zero() || right != T::zero() {
        return Err(Error::BoundaryVelocity {
            left: left.to_f64_lossy(),
            right: right.to_f64_lossy(),
        });
    }
    Ok(())
}

impl<T: Real> State<T> {
    /// The rest state `rho = 1, u = 0`.
    pub fn equilibrium(grid: &GridSpec<T>) -> Self {
        State {
            grid: *grid,
            rho: vec![T::one(); grid.n_cells()],
            u: vec![T::zero(); grid.n_faces()],
            time: T::zero(),
        }
    }

    /// Builds a state from profiles; the density is renormalised and the
    /// boundary faces are pinned to zero.
    pub fn from_profiles(grid: &GridSpec<T>, rho: impl Fn(T) -> T, u: impl Fn(T) -> T) -> Result<Self> {
        let r = grid.sample_centers(rho);
        let v = grid.sample_faces_dirichlet(u);
        new_state(grid, &r, &v).map(|(s, _)| s)
    }

    pub fn grid(&self) -> &GridSpec<T> {
        &self.grid
    }

    pub fn rho(&self) -> &[T] {
        &self.rho
    }

    pub fn u(&self) -> &[T] {
        &self.u
    }

    pub fn time(&self) -> T {
        self.time
    }

    pub fn min_rho(&self) -> T {
        self.rho.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_rho(&self) -> T {
        self.rho.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn max_abs_u(&self) -> T {
        self.u.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Flat serialisable view of the state.
    pub fn to_snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            time: self.time.to_f64_lossy(),
            n_cells: self.grid.n_cells(),
            rho: self.rho.iter().map(|v| v.to_f64_lossy()).collect(),
            u: self.u.iter().map(|v| v.to_f64_lossy()).collect(),
        }
    }

    /// Rebuilds a state from a snapshot without renormalising the density.
    pub fn from_snapshot(snap: &StateSnapshot) -> Result<Self> {
        let grid = make_grid::<T>(snap.n_cells)?;
        let rho: Vec<T> = snap.rho.iter().map(|&v| T::lit(v)).collect();
        let u: Vec<T> = snap.u.iter().map(|&v| T::lit(v)).collect();
        grid.check_centers("rho", &rho)?;
        grid.check_faces("u", &u)?;
        check_density(&rho)?;
        check_velocity(&u)?;
        Ok(State {
            grid,
            rho,
            u,
            time: T::lit(snap.time),
        })
    }
}

/// `{time, n_cells, rho, u}` record used for snapshots and checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub time: f64,
    pub n_cells: usize,
    pub rho: Vec<f64>,
    pub u: Vec<f64>,
}

impl StateSnapshot {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Midpoint mass `dx * sum(rho)`.
pub fn mass<T: Real>(state: &State<T>) -> T {
    sum(&state.rho) * state.grid.dx()
}

/// Midpoint quadrature of a cell-centred field.
pub fn integrate_centers<T: Real>(grid: &GridSpec<T>, values: &[T]) -> Result<T> {
    grid.check_centers("centre field", values)?;
    Ok(sum(values) * grid.dx())
}

/// Forward difference of a face field, landing on cell centres.
pub fn ddx_face_to_center<T: Real>(grid: &GridSpec<T>, f: &[T]) -> Result<Vec<T>> {
    grid.check_faces("face field", f)?;
    let inv = T::one() / grid.dx();
    Ok(f.windows(2).map(|w| (w[1] - w[0]) * inv).collect())
}

/// Difference of a centre field onto the interior faces `1..n_cells`.
///
/// The result has `n_cells - 1` entries; entry `k` belongs to face `k + 1`.
pub fn ddx_center_to_face<T: Real>(grid: &GridSpec<T>, g: &[T]) -> Result<Vec<T>> {
    grid.check_centers("centre field", g)?;
    let inv = T::one() / grid.dx();
    Ok(g.windows(2).map(|w| (w[1] - w[0]) * inv).collect())
}

/// Arithmetic mean of a centre field on the interior faces (same layout as
/// [`ddx_center_to_face`]).
pub fn center_to_face_mean<T: Real>(grid: &GridSpec<T>, g: &[T]) -> Result<Vec<T>> {
    grid.check_centers("centre field", g)?;
    let half = T::lit(0.5);
    Ok(g.windows(2).map(|w| half * (w[0] + w[1])).collect())
}

// Kahan summation: mass is checked against 1e-12 over 1e5-step runs.
pub(crate) fn sum<T: Real>(values: &[T]) -> T {
    let mut s = T::zero();
    let mut c = T::zero();
    for &v in values {
        let y = v - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s
}
