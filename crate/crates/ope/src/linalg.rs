//! Tiny dense linear solver for the normal equations and Newton steps.
//!
//! Basis dimensions here are small (one-hot over a handful of discrete
//! contexts, low-degree polynomials), so plain Gaussian elimination with
//! partial pivoting is plenty.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Solve `A x = b` in place for a dense row-major `n x n` matrix.
///
/// `a` and `b` are destroyed; the solution lands in `b`. A pivot that is
/// negligible relative to the largest matrix entry reports the offending
/// column as singular.
pub fn solve_in_place<F: Real>(a: &mut [F], b: &mut [F], n: usize) -> Result<()> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);

    let mut scale = F::zero();
    for v in a.iter() {
        scale = scale.max(v.abs());
    }
    if scale == F::zero() {
        return Err(Error::SingularBasis { column: 0 });
    }
    let tol = scale * F::epsilon() * F::of_usize(16 * n.max(1));

    for col in 0..n {
        // partial pivot
        let mut pivot_row = col;
        let mut pivot_val = a[col * n + col].abs();
        for row in col + 1..n {
            let v = a[row * n + col].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = row;
            }
        }
        if pivot_val <= tol {
            return Err(Error::SingularBasis { column: col });
        }
        if pivot_row != col {
            for k in 0..n {
                a.swap(col * n + k, pivot_row * n + k);
            }
            b.swap(col, pivot_row);
        }

        let pivot = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / pivot;
            if factor == F::zero() {
                continue;
            }
            for k in col..n {
                let upper = a[col * n + k];
                a[row * n + k] -= factor * upper;
            }
            b[row] -= factor * b[col];
        }
    }

    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col * n + k] * b[k];
        }
        b[col] = acc / a[col * n + col];
    }
    Ok(())
}
