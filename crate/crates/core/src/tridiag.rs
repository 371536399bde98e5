//! Thomas algorithm for the symmetric tridiagonal systems of the implicit
//! viscous step.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Solves `sub[i] x[i-1] + diag[i] x[i] + sup[i] x[i+1] = rhs[i]` in place.
///
/// `sub[0]` and `sup[m-1]` are ignored. `scratch` must have the length of
/// `rhs`. Fails on a nonpositive or non-finite pivot.
pub fn solve_in_place<T: Real>(sub: &[T], diag: &[T], sup: &[T], rhs: &mut [T], scratch: &mut [T]) -> Result<()> {
    let m = rhs.len();
    if diag.len() != m || sub.len() != m || sup.len() != m || scratch.len() != m {
        return Err(Error::SizeMismatch {
            what: "tridiagonal system",
            expected: m,
            got: diag.len(),
        });
    }
    if m == 0 {
        return Ok(());
    }
    let mut pivot = diag[0];
    check_pivot(0, pivot)?;
    scratch[0] = sup[0] / pivot;
    rhs[0] = rhs[0] / pivot;
    for i in 1..m {
        pivot = diag[i] - sub[i] * scratch[i - 1];
        check_pivot(i, pivot)?;
        scratch[i] = sup[i] / pivot;
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / pivot;
    }
    for i in (0..m - 1).rev() {
        rhs[i] = rhs[i] - scratch[i] * rhs[i + 1];
    }
    Ok(())
}

fn check_pivot<T: Real>(row: usize, pivot: T) -> Result<()> {
    if pivot > T::zero() && pivot.is_finite() {
        Ok(())
    } else {
        Err(Error::TridiagonalBreakdown {
            row,
            pivot: pivot.to_f64_lossy(),
        })
    }
}
