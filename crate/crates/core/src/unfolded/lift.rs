//! Real-valued lift of complex linear systems.
//!
//! `z -> [Re z; Im z]`, `A -> [[Re A, -Im A], [Im A, Re A]]`, so that
//! `lift(A) lift(z) = lift(A z)` and `lift(A)^T = lift(A^H)`.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{CMatrix, C64};

pub fn lift_vector(z: &[C64]) -> DVector<f64> {
    let d = z.len();
    DVector::from_fn(2 * d, |k, _| if k < d { z[k].re } else { z[k - d].im })
}

pub fn unlift_vector(v: &[f64]) -> Vec<C64> {
    let d = v.len() / 2;
    (0..d).map(|k| C64::new(v[k], v[d + k])).collect()
}

pub fn lift_matrix(a: &CMatrix) -> DMatrix<f64> {
    let (r, c) = a.shape();
    DMatrix::from_fn(2 * r, 2 * c, |i, j| {
        let z = a[(i % r, j % c)];
        match (i < r, j < c) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CVector;
    use proptest::prelude::*;

    fn cplx() -> impl Strategy<Value = C64> {
        (-5.0f64..5.0, -5.0f64..5.0).prop_map(|(a, b)| C64::new(a, b))
    }

    proptest! {
        #[test]
        fn lift_is_a_homomorphism(
            rows in 1usize..5,
            entries in proptest::collection::vec(cplx(), 16),
            z in proptest::collection::vec(cplx(), 4),
        ) {
            let cols = 4;
            let a = CMatrix::from_fn(rows, cols, |i, j| entries[i * cols + j]);
            let az = &a * CVector::from_column_slice(&z);
            let lhs = lift_matrix(&a) * lift_vector(&z);
            let rhs = lift_vector(az.as_slice());
            prop_assert!((lhs - rhs).norm() < 1e-12 * (1.0 + az.norm()));
            prop_assert_eq!(unlift_vector(lift_vector(&z).as_slice()), z);
            prop_assert!((lift_matrix(&a).transpose() - lift_matrix(&a.adjoint())).norm() == 0.0);
        }
    }
}
