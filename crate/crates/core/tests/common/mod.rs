#![allow(dead_code)]

use std::path::PathBuf;

use fas_optim::channel::AntennaLayout;
use nalgebra::Matrix2xX;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

/// Central differences of `f` over every coordinate, step `h` in meters.
pub fn finite_difference(layout: &AntennaLayout, h: f64, f: impl Fn(&AntennaLayout) -> f64) -> Matrix2xX<f64> {
    let mut out = Matrix2xX::zeros(layout.len());
    for col in 0..layout.len() {
        for row in 0..2 {
            let mut plus = layout.clone();
            plus.as_matrix_mut()[(row, col)] += h;
            let mut minus = layout.clone();
            minus.as_matrix_mut()[(row, col)] -= h;
            out[(row, col)] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
    }
    out
}

/// Largest entrywise deviation, relative to the largest reference entry.
pub fn relative_error(analytic: &Matrix2xX<f64>, reference: &Matrix2xX<f64>) -> f64 {
    let scale = reference.amax().max(f64::MIN_POSITIVE);
    (analytic - reference).amax() / scale
}
