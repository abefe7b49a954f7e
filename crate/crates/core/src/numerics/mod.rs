//! Deterministic numerical kernel: complex linear algebra, special
//! functions, seeded sampling and reverse-mode differentiation.

pub mod autodiff;
pub mod matrix;
pub mod random;
pub mod special;

pub use autodiff::{kth_largest, DiffGraph, Gradients, NodeId};
pub use matrix::{cholesky_psd, hermitian_solve, Cholesky, ComplexMatrix};
pub use random::{sample_standard_complex_gaussian, RngStream};
pub use special::bessel_j0;

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn finite_difference_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = f(&probe);
            probe[k] = x[k] - h;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}
