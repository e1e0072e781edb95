//! Orthogonal pilot training and the per-user LMMSE channel estimator.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::channel::{complex_gaussian_matrix, ChannelMatrix, C64};
use crate::error::{Error, Result};
use crate::scenario::UserStats;

/// `tau x K` pilot matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotMatrix(DMatrix<C64>);

impl PilotMatrix {
    pub fn as_matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn users(&self) -> usize {
        self.0.ncols()
    }

    /// `max |S^H S - I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let gram = self.0.adjoint() * &self.0;
        let k = gram.nrows();
        let mut worst = 0.0f64;
        for i in 0..k {
            for j in 0..k {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - C64::new(target, 0.0)).norm());
            }
        }
        worst
    }
}

/// First `K` columns of the normalized `tau`-point DFT matrix.
pub fn make_pilots(tau: usize, k: usize) -> Result<PilotMatrix> {
    if tau < k {
        return Err(Error::TooFewPilots { tau, k });
    }
    let norm = 1.0 / (tau as f64).sqrt();
    Ok(PilotMatrix(DMatrix::from_fn(tau, k, |t, col| {
        C64::from_polar(norm, -2.0 * PI * (t * col) as f64 / tau as f64)
    })))
}

/// Despread pilot observations, column `k` is `y_p^k = h_k + N s_k / sqrt(tau p)`.
///
/// The received block `Y_p = sqrt(tau p) H S^H + N` is formed explicitly and
/// then right-multiplied by `S / sqrt(tau p)`.
pub fn observe_pilots<R: Rng + ?Sized>(
    h: &ChannelMatrix,
    pilots: &PilotMatrix,
    tx_power: f64,
    noise_power: f64,
    rng: &mut R,
) -> DMatrix<C64> {
    let s = pilots.as_matrix();
    let gain = (pilots.len() as f64 * tx_power).sqrt();
    let mut received = h * s.adjoint() * C64::new(gain, 0.0);
    if noise_power > 0.0 {
        received += complex_gaussian_matrix(h.nrows(), pilots.len(), noise_power, rng);
    }
    received * s * C64::new(1.0 / gain, 0.0)
}

/// `hhat_k = a_k y_p^k + (1 - a_k) sqrt(c_k eps_k) hbar_k`.
pub fn lmmse_estimate(observation: &DVector<C64>, user: &UserStats, los: &DVector<C64>) -> DVector<C64> {
    let a = user.lmmse_gain;
    let prior = C64::new((1.0 - a) * user.los_amplitude(), 0.0);
    observation * C64::new(a, 0.0) + los * prior
}

/// Applies [`lmmse_estimate`] to every column.
pub fn estimate_all(
    observations: &DMatrix<C64>,
    users: &[UserStats],
    los: &ChannelMatrix,
) -> ChannelMatrix {
    let mut out = DMatrix::zeros(observations.nrows(), users.len());
    for (k, user) in users.iter().enumerate() {
        let est = lmmse_estimate(
            &observations.column(k).into_owned(),
            user,
            &los.column(k).into_owned(),
        );
        out.set_column(k, &est);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{los_matrix, sample_channel_with_los, AntennaLayout};
    use crate::scenario::seeded_rng;
    use approx::assert_relative_eq;

    #[test]
    fn square_pilots_are_unitary() {
        let s = make_pilots(3, 3).unwrap();
        assert!(s.orthogonality_error() < 1e-12);
    }

    #[test]
    fn tall_pilots_are_orthonormal() {
        let s = make_pilots(4, 2).unwrap();
        assert_eq!((s.len(), s.users()), (4, 2));
        assert!(s.orthogonality_error() < 1e-12);
    }

    #[test]
    fn too_few_pilots() {
        let err = make_pilots(1, 2).unwrap_err();
        assert!(matches!(err, Error::TooFewPilots { tau: 1, k: 2 }));
    }

    #[test]
    fn noiseless_observation_recovers_channel() {
        let users: Vec<_> = (0..3)
            .map(|k| UserStats::new(60.0, 1e-9, 6.0, 0.3 + k as f64, 0.5 * k as f64, 1e-14))
            .collect();
        let layout = AntennaLayout::from_points([[0.0, 0.0], [0.05, 0.0], [0.0, 0.05], [0.05, 0.05]]);
        let los = los_matrix(&layout, &users, 0.1);
        let mut rng = seeded_rng(5);
        let h = sample_channel_with_los(&los, &users, &mut rng);
        let pilots = make_pilots(5, 3).unwrap();
        let y = observe_pilots(&h, &pilots, 1.0, 0.0, &mut rng);
        assert!((y - &h).norm() < 1e-12 * h.norm());
    }

    #[test]
    fn perfect_csi_limit() {
        let user = UserStats::new(60.0, 1e-9, 6.0, 0.3, 0.5, 1e-30);
        assert!(user.lmmse_gain > 1.0 - 1e-15);
        let y = DVector::from_vec(vec![C64::new(1e-5, 2e-5), C64::new(-3e-5, 0.0)]);
        let los = DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0)]);
        let est = lmmse_estimate(&y, &user, &los);
        assert!((est - &y).norm() < 1e-12 * y.norm());
    }

    #[test]
    fn balance_point_weights() {
        let user = UserStats::new(60.0, 7e-10, 6.0, 0.3, 0.5, 1e-10);
        assert_relative_eq!(user.lmmse_gain, 0.5, max_relative = 1e-12);
        let y = DVector::from_element(1, C64::new(2.0, 0.0));
        let los = DVector::from_element(1, C64::new(1.0, 0.0));
        let est = lmmse_estimate(&y, &user, &los);
        assert_relative_eq!(est[0].re, 1.0 + 0.5 * user.los_amplitude(), max_relative = 1e-12);
    }
}
