//! Antenna geometry, LoS steering vectors and Rician channel sampling.
//!
//! Far-field is assumed throughout: arrival angles do not depend on where an
//! antenna sits, only the LoS phase does.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{DMatrix, DVector, Matrix2xX};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use nalgebra::Complex;

use crate::scenario::UserStats;

pub type C64 = Complex<f64>;

/// `M x K` channel matrix; column `k` is the channel of user `k`.
pub type ChannelMatrix = DMatrix<C64>;

/// Antenna coordinates as a `2 x M` matrix; column `m` is `[x_m, y_m]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntennaLayout(Matrix2xX<f64>);

impl AntennaLayout {
    pub fn new(positions: Matrix2xX<f64>) -> Self {
        Self(positions)
    }

    pub fn from_points(points: impl IntoIterator<Item = [f64; 2]>) -> Self {
        let flat: Vec<f64> = points.into_iter().flatten().collect();
        Self(Matrix2xX::from_column_slice(&flat))
    }

    /// Column-major `[x0, y0, x1, y1, ...]`.
    pub fn from_flat(coords: &[f64]) -> Self {
        assert!(coords.len() % 2 == 0, "odd number of coordinates");
        Self(Matrix2xX::from_column_slice(coords))
    }

    pub fn zeros(m: usize) -> Self {
        Self(Matrix2xX::zeros(m))
    }

    pub fn len(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.0.ncols() == 0
    }

    pub fn point(&self, m: usize) -> [f64; 2] {
        [self.0[(0, m)], self.0[(1, m)]]
    }

    pub fn set_point(&mut self, m: usize, p: [f64; 2]) {
        self.0[(0, m)] = p[0];
        self.0[(1, m)] = p[1];
    }

    pub fn points(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.len()).map(|m| self.point(m))
    }

    pub fn as_matrix(&self) -> &Matrix2xX<f64> {
        &self.0
    }

    pub fn as_matrix_mut(&mut self) -> &mut Matrix2xX<f64> {
        &mut self.0
    }

    pub fn into_matrix(self) -> Matrix2xX<f64> {
        self.0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.0.as_slice().to_vec()
    }

    /// Every coordinate within `[-half, half]`.
    pub fn in_box(&self, half: f64) -> bool {
        self.0.iter().all(|v| (-half..=half).contains(v))
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (pa, pb) = (self.point(a), self.point(b));
        (pa[0] - pb[0]).hypot(pa[1] - pb[1])
    }

    /// Smallest pairwise distance; infinite for fewer than two antennas.
    pub fn min_pairwise_distance(&self) -> f64 {
        let m = self.len();
        let mut best = f64::INFINITY;
        for a in 0..m {
            for b in a + 1..m {
                best = best.min(self.distance(a, b));
            }
        }
        best
    }

    /// Inside the square of side `region_size` and no pair closer than `d_min`.
    pub fn is_feasible(&self, region_size: f64, d_min: f64) -> bool {
        self.in_box(region_size / 2.0) && self.min_pairwise_distance() >= d_min
    }

    pub fn translated(&self, delta: [f64; 2]) -> Self {
        let mut out = self.clone();
        for mut col in out.0.column_iter_mut() {
            col[0] += delta[0];
            col[1] += delta[1];
        }
        out
    }
}

/// Path-length difference of the LoS ray at `t` relative to the origin.
pub fn phase_offset(t: [f64; 2], user: &UserStats) -> f64 {
    let dir = user.direction();
    t[0] * dir[0] + t[1] * dir[1]
}

/// LoS steering vector, entry `m = exp(j 2 pi / lambda * rho(t_m))`.
pub fn los_vector(layout: &AntennaLayout, user: &UserStats, wavelength: f64) -> DVector<C64> {
    let k0 = 2.0 * PI / wavelength;
    DVector::from_iterator(
        layout.len(),
        layout
            .points()
            .map(|t| C64::from_polar(1.0, k0 * phase_offset(t, user))),
    )
}

/// Circularly-symmetric `CN(0, 1)` sample: real and imaginary parts are each
/// `N(0, 1/2)`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
}

/// Fills a matrix with i.i.d. `CN(0, variance)` entries.
pub fn complex_gaussian_matrix<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    variance: f64,
    rng: &mut R,
) -> DMatrix<C64> {
    let scale = variance.sqrt();
    DMatrix::from_fn(rows, cols, |_, _| complex_gaussian(rng) * scale)
}

/// LoS steering vectors of all users, stacked as columns.
pub fn los_matrix(layout: &AntennaLayout, users: &[UserStats], wavelength: f64) -> ChannelMatrix {
    let mut out = DMatrix::zeros(layout.len(), users.len());
    for (k, user) in users.iter().enumerate() {
        out.set_column(k, &los_vector(layout, user, wavelength));
    }
    out
}

/// Draws `H` with `h_k = sqrt(c_k eps_k) hbar_k + sqrt(c_k) htilde_k`.
pub fn sample_channel<R: Rng + ?Sized>(
    layout: &AntennaLayout,
    users: &[UserStats],
    wavelength: f64,
    rng: &mut R,
) -> ChannelMatrix {
    sample_channel_with_los(&los_matrix(layout, users, wavelength), users, rng)
}

/// Same as [`sample_channel`] with the steering vectors precomputed.
pub fn sample_channel_with_los<R: Rng + ?Sized>(
    los: &ChannelMatrix,
    users: &[UserStats],
    rng: &mut R,
) -> ChannelMatrix {
    let m = los.nrows();
    let mut h = DMatrix::zeros(m, users.len());
    for (k, user) in users.iter().enumerate() {
        let mean = user.los_amplitude();
        let spread = user.c_factor.sqrt();
        for row in 0..m {
            h[(row, k)] = los[(row, k)] * mean + complex_gaussian(rng) * spread;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::seeded_rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn user(elev: f64, azim: f64) -> UserStats {
        UserStats::new(60.0, 1e-9, 6.0, elev, azim, 1e-14)
    }

    #[test]
    fn phase_offset_examples() {
        let u = user(0.7, 2.1);
        assert_eq!(phase_offset([0.0, 0.0], &u), 0.0);
        let broadside = user(PI / 2.0, 0.0);
        assert_relative_eq!(phase_offset([0.05, 0.0], &broadside), 0.05, epsilon = 1e-17);
        assert!(phase_offset([0.0, 0.3], &broadside).abs() < 1e-16);
    }

    #[test]
    fn los_vector_examples() {
        let u = user(0.4, 1.3);
        let at_origin = AntennaLayout::zeros(4);
        let v = los_vector(&at_origin, &u, 0.1);
        assert!(v.iter().all(|z| (*z - C64::new(1.0, 0.0)).norm() < 1e-15));

        let one = AntennaLayout::from_points([[0.05, 0.0]]);
        let v = los_vector(&one, &user(PI / 2.0, 0.0), 0.1);
        assert!((v[0] - C64::new(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn identical_angles_give_full_overlap() {
        let layout = AntennaLayout::from_points([[0.01, -0.2], [0.13, 0.07], [-0.22, 0.11]]);
        let a = los_vector(&layout, &user(1.1, 0.3), 0.1);
        let b = los_vector(&layout, &user(1.1, 0.3), 0.1);
        assert_relative_eq!(a.dotc(&b).re, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn deterministic_limit() {
        // c_k -> 0 while c_k eps_k -> alpha_k
        let alpha = 1e-9;
        let u = UserStats::new(60.0, alpha, 1e12, 0.8, 0.2, 1e-14);
        let layout = AntennaLayout::from_points([[0.0, 0.0], [0.05, 0.0]]);
        let los = los_vector(&layout, &u, 0.1);
        let h = sample_channel(&layout, &[u], 0.1, &mut seeded_rng(3));
        for m in 0..2 {
            let want = los[m] * alpha.sqrt();
            assert!((h[(m, 0)] - want).norm() < 1e-5 * alpha.sqrt());
        }
    }

    #[test]
    fn complex_gaussian_moments() {
        let mut rng = seeded_rng(9);
        let n = 200_000;
        let (mut sr, mut si, mut srr, mut sii, mut sri) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let z = complex_gaussian(&mut rng);
            sr += z.re;
            si += z.im;
            srr += z.re * z.re;
            sii += z.im * z.im;
            sri += z.re * z.im;
        }
        let n = n as f64;
        // var of each part 1/2, SE of the variance estimate ~ sqrt(2)*0.5/sqrt(n)
        let se_var = (2.0f64).sqrt() * 0.5 / n.sqrt();
        assert!((srr / n - 0.5).abs() < 4.0 * se_var);
        assert!((sii / n - 0.5).abs() < 4.0 * se_var);
        let se_mean = (0.5 / n).sqrt();
        assert!((sr / n).abs() < 4.0 * se_mean);
        assert!((si / n).abs() < 4.0 * se_mean);
        assert!((sri / n).abs() < 4.0 * 0.5 / n.sqrt());
    }

    proptest! {
        #[test]
        fn steering_entries_unit_modulus(
            coords in prop::collection::vec(-0.3f64..0.3, 2..20),
            elev in 0.0..PI, azim in 0.0..PI,
        ) {
            let coords = &coords[..coords.len() / 2 * 2];
            let layout = AntennaLayout::from_flat(coords);
            let v = los_vector(&layout, &user(elev, azim), 0.1);
            for z in v.iter() {
                prop_assert!((z.norm() - 1.0).abs() < 1e-12);
            }
            prop_assert!((v.norm_squared() - layout.len() as f64).abs() < 1e-10);
        }

        #[test]
        fn inner_product_modulus_is_translation_invariant(
            coords in prop::collection::vec(-0.3f64..0.3, 8),
            dx in -0.2f64..0.2, dy in -0.2f64..0.2,
            e1 in 0.0..PI, a1 in 0.0..PI, e2 in 0.0..PI, a2 in 0.0..PI,
        ) {
            let layout = AntennaLayout::from_flat(&coords);
            let moved = layout.translated([dx, dy]);
            let (u1, u2) = (user(e1, a1), user(e2, a2));
            let before = los_vector(&layout, &u1, 0.1).dotc(&los_vector(&layout, &u2, 0.1)).norm();
            let after = los_vector(&moved, &u1, 0.1).dotc(&los_vector(&moved, &u2, 0.1)).norm();
            prop_assert!((before - after).abs() < 1e-9);
        }
    }
}
