//! Closed-form SINR and rate bound, plus the Monte Carlo oracle that
//! estimates the same expectations from sampled channels.
//!
//! For user `k` with MRC on the LMMSE estimate `hhat_k`, the bound uses
//!
//! ```text
//! E_signal = |E{hhat_k^H h_k}|^2        E_noise = E{||hhat_k||^2}
//! E_leak   = E{|hhat_k^H h_k|^2} - E_signal
//! I_ki     = E{|hhat_k^H h_i|^2}
//! SINR_k   = p E_signal / (p E_leak + p sum_{i != k} I_ki + sigma^2 E_noise)
//! R_k      = (tau_c - tau) / tau_c * log2(1 + SINR_k)
//! ```
//!
//! Only `I_ki` depends on the antenna positions, through `|hbar_k^H hbar_i|^2`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::channel::{
    complex_gaussian, los_matrix, los_vector, phase_offset, sample_channel_with_los, AntennaLayout, C64,
};
use crate::estimation::{estimate_all, make_pilots, observe_pilots};
use crate::scenario::{seeded_rng, Scenario, UserStats};
use crate::stats::{run_chunked, Moments};

/// `hbar_k^H hbar_i = sum_m exp(j 2 pi / lambda (rho_i(t_m) - rho_k(t_m)))`.
pub fn steering_inner(layout: &AntennaLayout, user_k: &UserStats, user_i: &UserStats, wavelength: f64) -> C64 {
    let k0 = 2.0 * PI / wavelength;
    layout
        .points()
        .map(|t| C64::from_polar(1.0, k0 * (phase_offset(t, user_i) - phase_offset(t, user_k))))
        .sum()
}

/// `|hbar_k^H hbar_i|^2`.
pub fn f_sq(layout: &AntennaLayout, user_k: &UserStats, user_i: &UserStats, wavelength: f64) -> f64 {
    steering_inner(layout, user_k, user_i, wavelength).norm_sqr()
}

/// Layout-independent expectation terms of one user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UserTerms {
    pub e_signal: f64,
    pub e_noise: f64,
    pub e_leak: f64,
    /// `sum_{i != k} I_ki`.
    pub interference_sum: f64,
    pub sinr: f64,
    /// bits/s/Hz.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub users: Vec<UserTerms>,
    /// `I_ki` (row `k`, column `i`); the diagonal is left at zero.
    pub interference: DMatrix<f64>,
    /// `|hbar_k^H hbar_i|^2`.
    pub f_sq: DMatrix<f64>,
    pub min_rate: f64,
}

impl RateReport {
    pub fn rates(&self) -> Vec<f64> {
        self.users.iter().map(|u| u.rate).collect()
    }

    pub fn sinrs(&self) -> Vec<f64> {
        self.users.iter().map(|u| u.sinr).collect()
    }
}

/// `E_noise = M c (eps + a)`.
pub fn noise_term(m: usize, user: &UserStats) -> f64 {
    m as f64 * user.c_factor * (user.rician + user.lmmse_gain)
}

/// Signal leakage `E{|hhat^H h|^2} - |E{hhat^H h}|^2`.
///
/// Written in its cancelled form
/// `M c^2 eps (1 + a^2) + M a^2 c^2 + beta M a^2 c (eps + 1)` with
/// `beta = sigma^2 / (tau p)`, which avoids subtracting two `M^2`-sized terms.
pub fn leak_term(m: usize, user: &UserStats, noise_over_pilot: f64) -> f64 {
    let m = m as f64;
    let (c, eps, a) = (user.c_factor, user.rician, user.lmmse_gain);
    m * c * c * eps * (1.0 + a * a) + m * a * a * c * c + noise_over_pilot * m * a * a * c * (eps + 1.0)
}

/// `I_ki = E{|hhat_k^H h_i|^2}` given `|hbar_k^H hbar_i|^2`.
pub fn interference_term(
    m: usize,
    user_k: &UserStats,
    user_i: &UserStats,
    noise_over_pilot: f64,
    f_sq: f64,
) -> f64 {
    let m = m as f64;
    let (ck, ek, ak) = (user_k.c_factor, user_k.rician, user_k.lmmse_gain);
    let (ci, ei) = (user_i.c_factor, user_i.rician);
    ck * ci * ek * ei * f_sq
        + m * ck * ci * ek
        + m * ak * ak * ck * ci * (ei + 1.0)
        + noise_over_pilot * m * ak * ak * ci * (ei + 1.0)
}

/// Fills every term of the report; `sinr`, `rate` and `min_rate` stay zero
/// until [`sinr_and_rate`] runs.
pub fn closed_form_terms(layout: &AntennaLayout, scenario: &Scenario) -> RateReport {
    let m = layout.len();
    let k = scenario.users.len();
    let beta = scenario.noise_over_pilot();
    let los: Vec<DVector<C64>> = scenario
        .users
        .iter()
        .map(|u| los_vector(layout, u, scenario.wavelength))
        .collect();
    let mut fsq = DMatrix::zeros(k, k);
    for a in 0..k {
        fsq[(a, a)] = (m * m) as f64;
        for b in a + 1..k {
            let v = los[a].dotc(&los[b]).norm_sqr();
            fsq[(a, b)] = v;
            fsq[(b, a)] = v;
        }
    }
    let mut interference = DMatrix::zeros(k, k);
    for (a, ua) in scenario.users.iter().enumerate() {
        for (b, ub) in scenario.users.iter().enumerate() {
            if a != b {
                interference[(a, b)] = interference_term(m, ua, ub, beta, fsq[(a, b)]);
            }
        }
    }
    let users = scenario
        .users
        .iter()
        .enumerate()
        .map(|(a, u)| {
            let e_noise = noise_term(m, u);
            UserTerms {
                e_signal: e_noise * e_noise,
                e_noise,
                e_leak: leak_term(m, u, beta),
                interference_sum: interference.row(a).sum(),
                sinr: 0.0,
                rate: 0.0,
            }
        })
        .collect();
    RateReport {
        users,
        interference,
        f_sq: fsq,
        min_rate: 0.0,
    }
}

/// SINR from the four expectation terms.
pub fn sinr_from_terms(scenario: &Scenario, e_signal: f64, e_leak: f64, interference_sum: f64, e_noise: f64) -> f64 {
    let p = scenario.tx_power;
    p * e_signal / (p * e_leak + p * interference_sum + scenario.noise_power * e_noise)
}

/// `(tau_c - tau)/tau_c * log2(1 + SINR)`.
pub fn rate_from_sinr(scenario: &Scenario, sinr: f64) -> f64 {
    scenario.pre_log() * sinr.ln_1p() / std::f64::consts::LN_2
}

pub fn sinr_and_rate(mut report: RateReport, scenario: &Scenario) -> RateReport {
    for u in &mut report.users {
        u.sinr = sinr_from_terms(scenario, u.e_signal, u.e_leak, u.interference_sum, u.e_noise);
        u.rate = rate_from_sinr(scenario, u.sinr);
    }
    report.min_rate = report.users.iter().map(|u| u.rate).fold(f64::INFINITY, f64::min);
    report
}

pub fn rate_report(layout: &AntennaLayout, scenario: &Scenario) -> RateReport {
    sinr_and_rate(closed_form_terms(layout, scenario), scenario)
}

pub fn user_rates(layout: &AntennaLayout, scenario: &Scenario) -> Vec<f64> {
    rate_report(layout, scenario).rates()
}

/// Worst user's rate bound, bits/s/Hz.
pub fn min_rate(layout: &AntennaLayout, scenario: &Scenario) -> f64 {
    rate_report(layout, scenario).min_rate
}

// ---------------------------------------------------------------------------
// Monte Carlo oracle

/// Standard errors of the Monte Carlo terms (delta method where the term is
/// a nonlinear function of sample means).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McStdErr {
    pub desired: f64,
    pub leak: f64,
    pub interf: f64,
    pub noise: f64,
    pub sinr: f64,
}

/// Empirical versions of the four SINR terms for one user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    /// `|E{hhat_k^H h_k}|^2`.
    pub desired: f64,
    /// `E{|hhat_k^H h_k|^2} - desired`.
    pub leak: f64,
    /// `sum_{i != k} E{|hhat_k^H h_i|^2}`.
    pub interf: f64,
    /// `E{||hhat_k||^2}`.
    pub noise: f64,
    pub sinr: f64,
    pub rate: f64,
    pub trials: u64,
    pub se: McStdErr,
}

// per-user sample: [Re X, Im X, |X|^2, interference, ||hhat||^2] with X = hhat_k^H h_k
type UserMoments = Moments<5>;

/// Estimates the SINR terms by drawing the channel and the pilot noise
/// jointly, estimating with LMMSE and averaging. Results are a pure function
/// of `(layout, scenario, trials, seed)`.
pub fn mc_uatf_sinr(layout: &AntennaLayout, scenario: &Scenario, trials: usize, seed: u64) -> Vec<McEstimate> {
    let k = scenario.users.len();
    let los = los_matrix(layout, &scenario.users, scenario.wavelength);
    let pilots = make_pilots(scenario.pilot_len, k).expect("scenario guarantees pilot_len >= K");
    let work = |chunk_seed: u64, n: usize| {
        let mut rng = seeded_rng(chunk_seed);
        let mut acc = vec![UserMoments::new(); k];
        for _ in 0..n {
            let h = sample_channel_with_los(&los, &scenario.users, &mut rng);
            let y = observe_pilots(&h, &pilots, scenario.tx_power, scenario.noise_power, &mut rng);
            let hhat = estimate_all(&y, &scenario.users, &los);
            let gram = hhat.adjoint() * &h;
            for (a, slot) in acc.iter_mut().enumerate() {
                let x = gram[(a, a)];
                let interf: f64 = (0..k).filter(|&b| b != a).map(|b| gram[(a, b)].norm_sqr()).sum();
                let noise = hhat.column(a).norm_squared();
                slot.push([x.re, x.im, x.norm_sqr(), interf, noise]);
            }
        }
        acc
    };
    let merged = run_chunked(trials, seed, work, |acc, part| {
        for (a, b) in acc.iter_mut().zip(&part) {
            a.merge(b);
        }
    })
    .unwrap_or_else(|| vec![UserMoments::new(); k]);
    merged.iter().map(|mom| summarize(mom, scenario)).collect()
}

fn summarize(mom: &UserMoments, scenario: &Scenario) -> McEstimate {
    let [mr, mi, q, interf, noise] = mom.mean();
    let desired = mr * mr + mi * mi;
    let leak = q - desired;
    let p = scenario.tx_power;
    let s2 = scenario.noise_power;
    let denom = p * leak + p * interf + s2 * noise;
    let sinr = p * desired / denom;
    // d SINR / d desired, holding q fixed (leak moves with desired)
    let d_desired = p * (denom + p * desired) / (denom * denom);
    let d_q = -p * p * desired / (denom * denom);
    let d_interf = -p * p * desired / (denom * denom);
    let d_noise = -p * desired * s2 / (denom * denom);
    McEstimate {
        desired,
        leak,
        interf,
        noise,
        sinr,
        rate: rate_from_sinr(scenario, sinr),
        trials: mom.count(),
        se: McStdErr {
            desired: mom.delta_std_err(&[2.0 * mr, 2.0 * mi, 0.0, 0.0, 0.0]),
            leak: mom.delta_std_err(&[-2.0 * mr, -2.0 * mi, 1.0, 0.0, 0.0]),
            interf: mom.std_err(3),
            noise: mom.std_err(4),
            sinr: mom.delta_std_err(&[
                d_desired * 2.0 * mr,
                d_desired * 2.0 * mi,
                d_q,
                d_interf,
                d_noise,
            ]),
        },
    }
}

// ---------------------------------------------------------------------------
// Random-matrix identities used by the closed form

/// An empirical mean next to its expected value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarCheck {
    pub estimate: f64,
    pub std_err: f64,
    pub expected: f64,
}

impl ScalarCheck {
    /// Deviation in standard errors.
    pub fn z(&self) -> f64 {
        let d = (self.estimate - self.expected).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.std_err
        }
    }

    pub fn rel_err(&self) -> f64 {
        (self.estimate - self.expected).abs() / self.expected.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub m: usize,
    pub trials: u64,
    /// `E{||htilde||^4}` against `M^2 + M`.
    pub fourth_moment: ScalarCheck,
    /// Diagonal of `E{X A X^H}` against `Tr{A}` (unit-variance `X`).
    pub xax_diag: Vec<ScalarCheck>,
    /// Real and imaginary parts of the off-diagonal entries, expected zero.
    pub xax_offdiag: Vec<ScalarCheck>,
    /// Real and imaginary parts of `E{u1^H htilde u2^H htilde}`, expected zero.
    pub cross: [ScalarCheck; 2],
}

impl LemmaReport {
    pub fn max_offdiag_z(&self) -> f64 {
        self.xax_offdiag.iter().map(ScalarCheck::z).fold(0.0, f64::max)
    }

    pub fn max_diag_rel_err(&self) -> f64 {
        self.xax_diag.iter().map(ScalarCheck::rel_err).fold(0.0, f64::max)
    }
}

/// Empirically checks `E{X A X^H} = v_x Tr{A} I`, `E{u1^H h u2^H h} = 0` and
/// `E{||h||^4} = M^2 + M` for `h ~ CN(0, I_M)`.
///
/// `A` is a random Hermitian positive-definite `M x M` matrix and `u1`, `u2`
/// random vectors, all drawn once from `seed`.
pub fn lemma_checks(m: usize, trials: usize, seed: u64) -> LemmaReport {
    let mut rng = seeded_rng(seed);
    let b = DMatrix::from_fn(m, m, |_, _| complex_gaussian(&mut rng));
    let a = (&b * b.adjoint()) * C64::new(1.0 / m as f64, 0.0) + DMatrix::identity(m, m);
    let trace = a.trace().re;
    let u1 = DVector::from_fn(m, |_, _| complex_gaussian(&mut rng));
    let u2 = DVector::from_fn(m, |_, _| complex_gaussian(&mut rng));

    struct Acc {
        fourth: Moments<1>,
        cross: Moments<2>,
        entries: Vec<Moments<2>>,
    }
    let fresh = || Acc {
        fourth: Moments::new(),
        cross: Moments::new(),
        entries: vec![Moments::new(); m * m],
    };
    let work = |chunk_seed: u64, n: usize| {
        let mut rng = seeded_rng(chunk_seed);
        let mut acc = fresh();
        for _ in 0..n {
            let h = DVector::from_fn(m, |_, _| complex_gaussian(&mut rng));
            let norm2 = h.norm_squared();
            acc.fourth.push([norm2 * norm2]);
            let z = u1.dotc(&h) * u2.dotc(&h);
            acc.cross.push([z.re, z.im]);
            let x = DMatrix::from_fn(m, m, |_, _| complex_gaussian(&mut rng));
            let xax = &x * &a * x.adjoint();
            for (slot, v) in acc.entries.iter_mut().zip(xax.iter()) {
                slot.push([v.re, v.im]);
            }
        }
        acc
    };
    let acc = run_chunked(trials, derive_lemma_seed(seed), work, |acc, part| {
        acc.fourth.merge(&part.fourth);
        acc.cross.merge(&part.cross);
        for (x, y) in acc.entries.iter_mut().zip(&part.entries) {
            x.merge(y);
        }
    })
    .unwrap_or_else(fresh);

    let check = |mom: &Moments<2>, idx: usize, expected: f64| ScalarCheck {
        estimate: mom.mean()[idx],
        std_err: mom.std_err(idx),
        expected,
    };
    let mut xax_diag = Vec::with_capacity(m);
    let mut xax_offdiag = Vec::with_capacity(2 * m * (m - 1));
    for col in 0..m {
        for row in 0..m {
            let mom = &acc.entries[col * m + row];
            if row == col {
                xax_diag.push(check(mom, 0, trace));
            } else {
                xax_offdiag.push(check(mom, 0, 0.0));
                xax_offdiag.push(check(mom, 1, 0.0));
            }
        }
    }
    LemmaReport {
        m,
        trials: acc.fourth.count(),
        fourth_moment: ScalarCheck {
            estimate: acc.fourth.mean()[0],
            std_err: acc.fourth.std_err(0),
            expected: (m * m + m) as f64,
        },
        xax_diag,
        xax_offdiag,
        cross: [check(&acc.cross, 0, 0.0), check(&acc.cross, 1, 0.0)],
    }
}

fn derive_lemma_seed(seed: u64) -> u64 {
    crate::scenario::derive_seed(seed, 0x4c454d4d41)
}

/// Uniformly random layout inside the scenario box (no spacing guarantee).
pub fn random_layout<R: Rng + ?Sized>(m: usize, region_size: f64, rng: &mut R) -> AntennaLayout {
    let half = region_size / 2.0;
    AntennaLayout::from_points((0..m).map(|_| [rng.gen_range(-half..=half), rng.gen_range(-half..=half)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn user(elev: f64, azim: f64, rician: f64) -> UserStats {
        UserStats::new(60.0, 1.0e-9, rician, elev, azim, 1.3e-14)
    }

    #[test]
    fn f_sq_examples() {
        let layout = AntennaLayout::from_points([[0.0, 0.0], [0.05, 0.02], [-0.1, 0.2]]);
        let u = user(0.9, 0.4, 6.0);
        assert_relative_eq!(f_sq(&layout, &u, &u, 0.1), 9.0, max_relative = 1e-12);
        let same = user(0.9, 0.4, 2.0);
        assert_relative_eq!(f_sq(&layout, &u, &same, 0.1), 9.0, max_relative = 1e-12);

        // phase difference pi across two antennas: broadside vs endfire along x
        let pair = AntennaLayout::from_points([[0.0, 0.0], [0.05, 0.0]]);
        let broadside = user(PI / 2.0, PI / 2.0, 6.0); // direction [0, 0]
        let endfire = user(PI / 2.0, 0.0, 6.0); // direction [1, 0]
        assert!(f_sq(&pair, &broadside, &endfire, 0.1) < 1e-24);
    }

    #[test]
    fn zero_rician_noise_term() {
        let u = user(0.3, 0.3, 0.0);
        assert_relative_eq!(noise_term(4, &u), 4.0 * u.c_factor * u.lmmse_gain, max_relative = 1e-15);
    }

    /// Leak as the uncancelled sum of its seven expectation pieces.
    fn leak_expanded(m: usize, u: &UserStats, beta: f64) -> f64 {
        let m = m as f64;
        let (c, e, a) = (u.c_factor, u.rician, u.lmmse_gain);
        m * m * c * c * e * e
            + m * c * c * e
            + m * a * a * c * c * e
            + a * a * c * c * m * (m + 1.0)
            + beta * m * a * a * c * e
            + beta * m * a * a * c
            + 2.0 * m * m * c * c * a * e
            - m * m * c * c * (e + a) * (e + a)
    }

    #[test]
    fn leak_cancelled_form_matches_expansion() {
        // use O(1) magnitudes so the uncancelled sum stays accurate
        for &(c, e, beta) in &[(1.0, 6.0, 0.2), (0.3, 0.0, 1.5), (2.0, 0.5, 0.01)] {
            let u = UserStats {
                distance: 1.0,
                path_loss: c * (e + 1.0),
                rician: e,
                c_factor: c,
                lmmse_gain: c / (c + beta),
                elev_aoa: 0.0,
                azim_aoa: 0.0,
            };
            for m in [1, 4, 9] {
                assert_relative_eq!(leak_term(m, &u, beta), leak_expanded(m, &u, beta), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn zero_rician_leak() {
        let (c, beta) = (0.7, 0.3);
        let u = UserStats {
            distance: 1.0,
            path_loss: c,
            rician: 0.0,
            c_factor: c,
            lmmse_gain: c / (c + beta),
            elev_aoa: 0.0,
            azim_aoa: 0.0,
        };
        let m = 5.0;
        let a = u.lmmse_gain;
        let want = m * (m + 1.0) * a * a * c * c + beta * m * a * a * c - m * m * c * c * a * a;
        assert_relative_eq!(leak_term(5, &u, beta), want, max_relative = 1e-12);
    }

    #[test]
    fn pilot_overhead_kills_rate() {
        let mut s = Scenario::reference(4, 2, 3).unwrap();
        s.coherence_len = s.pilot_len;
        let s = s.validate().unwrap();
        let layout = s.upa().unwrap();
        let r = rate_report(&layout, &s);
        assert!(r.users.iter().all(|u| u.sinr > 0.0 && u.rate == 0.0));
    }

    #[test]
    fn vanishing_power_kills_sinr() {
        let mut s = Scenario::reference(4, 2, 3).unwrap();
        s.tx_power = 1e-30;
        let s = s.validate().unwrap();
        let r = rate_report(&s.upa().unwrap(), &s);
        assert!(r.users.iter().all(|u| u.sinr < 1e-6 && u.rate < 1e-6));
    }

    #[test]
    fn single_user_has_no_interference() {
        let s = Scenario::reference(4, 1, 3).unwrap();
        let r = rate_report(&s.upa().unwrap(), &s);
        let u = r.users[0];
        assert_eq!(u.interference_sum, 0.0);
        let want = s.tx_power * u.e_signal / (s.tx_power * u.e_leak + s.noise_power * u.e_noise);
        assert_relative_eq!(u.sinr, want, max_relative = 1e-14);
        assert_relative_eq!(r.min_rate, u.rate);
    }

    #[test]
    fn report_invariants() {
        let s = Scenario::reference(9, 4, 8).unwrap();
        let r = rate_report(&s.upa().unwrap(), &s);
        for (k, u) in r.users.iter().enumerate() {
            assert_eq!(u.e_signal, u.e_noise * u.e_noise);
            assert!(u.e_leak >= 0.0 && u.sinr >= 0.0);
            assert_eq!(r.f_sq[(k, k)], 81.0);
            for i in 0..4 {
                assert!(r.f_sq[(k, i)] >= 0.0 && r.f_sq[(k, i)] <= 81.0 + 1e-9);
                assert_eq!(r.f_sq[(k, i)], r.f_sq[(i, k)]);
            }
        }
        assert_eq!(r.min_rate, r.rates().into_iter().fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn sinr_decreases_with_interference() {
        let s = Scenario::reference(9, 3, 8).unwrap();
        let mut r = closed_form_terms(&s.upa().unwrap(), &s);
        let before = sinr_and_rate(r.clone(), &s).users[0].sinr;
        r.users[0].interference_sum *= 1.01;
        let after = sinr_and_rate(r, &s).users[0].sinr;
        assert!(after < before);
    }

    #[test]
    fn lemma_small_m() {
        let rep = lemma_checks(1, 20_000, 3);
        assert!(rep.fourth_moment.z() < 4.0, "{:?}", rep.fourth_moment);
        assert_eq!(rep.fourth_moment.expected, 2.0);
        assert!(rep.xax_offdiag.is_empty());
    }
}
