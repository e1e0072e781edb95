//! Projected accelerated gradient ascent on the log-sum-exp smoothed
//! minimum rate.
//!
//! `g(t) = -(1/mu) ln sum_k exp(-mu R_k(t))` under-estimates `min_k R_k` by
//! at most `ln K / mu`. Steps are chosen by backtracking until both the
//! Armijo condition and the spacing constraint hold at the projected trial
//! point; Nesterov momentum uses the `l <- (1 + sqrt(4 l^2 + 1)) / 2`
//! sequence starting from `l = 1/2`.

use std::f64::consts::{LN_2, PI};

use nalgebra::Matrix2xX;
use rand::Rng;
use serde::Serialize;

use crate::channel::{phase_offset, AntennaLayout, C64};
use crate::error::{Error, Result};
use crate::opt_ga::violation_count;
use crate::rate::{random_layout, rate_report, steering_inner, RateReport};
use crate::scenario::{seeded_rng, Scenario, UserStats};

/// `-(1/mu) ln sum exp(-mu v)`, evaluated with a min-shift.
pub fn smooth_min(values: &[f64], mu: f64) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let s: f64 = values.iter().map(|v| (-mu * (v - lo)).exp()).sum();
    lo - s.ln() / mu
}

/// Gradient of [`smooth_min`] with respect to `values` (a softmin).
pub fn softmin_weights(values: &[f64], mu: f64) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = values.iter().map(|v| (-mu * (v - lo)).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn smoothed_objective(layout: &AntennaLayout, scenario: &Scenario, mu: f64) -> f64 {
    smooth_min(&rate_report(layout, scenario).rates(), mu)
}

/// `d |hbar_k^H hbar_i|^2 / dt` as a `2 x M` matrix.
pub fn f_sq_gradient(layout: &AntennaLayout, user_k: &UserStats, user_i: &UserStats, wavelength: f64) -> Matrix2xX<f64> {
    let k0 = 2.0 * PI / wavelength;
    let f = steering_inner(layout, user_k, user_i, wavelength);
    let (dk, di) = (user_k.direction(), user_i.direction());
    let dx = k0 * (di[0] - dk[0]);
    let dy = k0 * (di[1] - dk[1]);
    let mut out = Matrix2xX::zeros(layout.len());
    for (u, t) in layout.points().enumerate() {
        let phase = C64::from_polar(1.0, k0 * (phase_offset(t, user_i) - phase_offset(t, user_k)));
        // d f / d x_u = j dx e^{j phi_u};  d|f|^2 = 2 Re{df f*}
        let common = C64::new(0.0, 1.0) * phase * f.conj();
        out[(0, u)] = 2.0 * dx * common.re;
        out[(1, u)] = 2.0 * dy * common.re;
    }
    out
}

/// `d I_ki / dt = c_k c_i eps_k eps_i d|f_ki|^2/dt`.
pub fn interference_gradient(layout: &AntennaLayout, user_k: &UserStats, user_i: &UserStats, wavelength: f64) -> Matrix2xX<f64> {
    let scale = user_k.c_factor * user_i.c_factor * user_k.rician * user_i.rician;
    f_sq_gradient(layout, user_k, user_i, wavelength) * scale
}

fn sinr_gradient_from(layout: &AntennaLayout, scenario: &Scenario, report: &RateReport, k: usize) -> Matrix2xX<f64> {
    let m = layout.len();
    let mut sum = Matrix2xX::zeros(m);
    let uk = &scenario.users[k];
    for (i, ui) in scenario.users.iter().enumerate() {
        if i != k {
            sum += interference_gradient(layout, uk, ui, scenario.wavelength);
        }
    }
    let p = scenario.tx_power;
    let t = &report.users[k];
    let denom = p * t.e_leak + p * t.interference_sum + scenario.noise_power * t.e_noise;
    sum * (-p * p * t.e_signal / (denom * denom))
}

/// `d SINR_k / dt`.
pub fn sinr_gradient(layout: &AntennaLayout, scenario: &Scenario, k: usize) -> Matrix2xX<f64> {
    let report = rate_report(layout, scenario);
    sinr_gradient_from(layout, scenario, &report, k)
}

/// `d R_k / dt = (tau_c - tau)/tau_c / ((1 + SINR_k) ln 2) d SINR_k / dt`.
pub fn rate_gradient(layout: &AntennaLayout, scenario: &Scenario, k: usize) -> Matrix2xX<f64> {
    let report = rate_report(layout, scenario);
    let sinr = report.users[k].sinr;
    sinr_gradient_from(layout, scenario, &report, k) * (scenario.pre_log() / ((1.0 + sinr) * LN_2))
}

/// `dg/dt = sum_k softmin_k(R) dR_k/dt`.
pub fn objective_gradient(layout: &AntennaLayout, scenario: &Scenario, mu: f64) -> Matrix2xX<f64> {
    let report = rate_report(layout, scenario);
    let weights = softmin_weights(&report.rates(), mu);
    let mut grad = Matrix2xX::zeros(layout.len());
    for (k, w) in weights.iter().enumerate() {
        let coef = w * scenario.pre_log() / ((1.0 + report.users[k].sinr) * LN_2);
        if coef != 0.0 {
            grad += sinr_gradient_from(layout, scenario, &report, k) * coef;
        }
    }
    grad
}

/// Entrywise clamp into `[-A/2, A/2]`.
pub fn project(layout: &AntennaLayout, region_size: f64) -> AntennaLayout {
    let half = region_size / 2.0;
    AntennaLayout::new(layout.as_matrix().map(|v| v.clamp(-half, half)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradSettings {
    /// `false` freezes the momentum sequence (plain projected ascent).
    pub accelerated: bool,
    /// Initial step of every line search, in wavelengths.
    pub step0_over_lambda: f64,
    /// The line search gives up below this step, in wavelengths.
    pub min_step_over_lambda: f64,
}

impl Default for GradSettings {
    fn default() -> Self {
        Self {
            accelerated: true,
            step0_over_lambda: 1.0,
            min_step_over_lambda: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LineSearch {
    pub step: f64,
    pub trial: AntennaLayout,
    pub g_trial: f64,
    pub shrinks: usize,
}

/// Largest `zeta = zeta_0 kappa^n` whose projected trial point satisfies
/// `g(trial) >= g(t) + varpi zeta ||grad||^2` and has no spacing violation.
pub fn backtrack_step(
    layout: &AntennaLayout,
    g_current: f64,
    grad: &Matrix2xX<f64>,
    scenario: &Scenario,
    settings: &GradSettings,
) -> Result<LineSearch> {
    let hyper = &scenario.hyper;
    let grad_norm2 = grad.norm_squared();
    let min_step = settings.min_step_over_lambda * scenario.wavelength;
    let mut step = settings.step0_over_lambda * scenario.wavelength;
    let mut shrinks = 0;
    loop {
        let moved = AntennaLayout::new(layout.as_matrix() + grad * step);
        let trial = project(&moved, scenario.region_size);
        if violation_count(&trial, scenario.d_min) == 0 {
            let g_trial = smoothed_objective(&trial, scenario, hyper.mu);
            if g_trial >= g_current + hyper.varpi * step * grad_norm2 {
                return Ok(LineSearch {
                    step,
                    trial,
                    g_trial,
                    shrinks,
                });
            }
        }
        step *= hyper.kappa;
        shrinks += 1;
        if step < min_step {
            return Err(Error::LineSearchExhausted { min_step });
        }
    }
}

/// Iteration state of the accelerated ascent.
#[derive(Debug, Clone)]
pub struct GradState {
    pub t_curr: AntennaLayout,
    pub v_prev: AntennaLayout,
    pub v_curr: AntennaLayout,
    /// Momentum scalar `l^(i)`.
    pub l: f64,
    pub step: f64,
    pub iter: usize,
    pub g_history: Vec<f64>,
}

/// `l^(i+1) = (1 + sqrt(4 l^2 + 1)) / 2`.
pub fn next_momentum(l: f64) -> f64 {
    (1.0 + (4.0 * l * l + 1.0).sqrt()) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StopReason {
    /// Objective moved by less than the tolerance.
    Converged,
    LineSearchExhausted,
    MaxIterations,
}

/// Per-iterate diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterRecord {
    pub g: f64,
    pub min_rate: f64,
    pub step: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone)]
pub struct GradOutcome {
    /// Best feasible iterate seen.
    pub layout: AntennaLayout,
    pub min_rate: f64,
    /// Smoothed objective at the initial point and after every iteration.
    pub g_history: Vec<f64>,
    pub trace: Vec<IterRecord>,
    pub iterations: usize,
    pub stop: StopReason,
}

pub fn run_gradient(scenario: &Scenario, init: &AntennaLayout) -> Result<GradOutcome> {
    run_gradient_with(scenario, init, GradSettings::default())
}

pub fn run_gradient_with(scenario: &Scenario, init: &AntennaLayout, settings: GradSettings) -> Result<GradOutcome> {
    if !init.in_box(scenario.half_region()) {
        return Err(Error::InfeasibleInit("outside the region".into()));
    }
    if violation_count(init, scenario.d_min) > 0 {
        return Err(Error::InfeasibleInit("antennas closer than d_min".into()));
    }
    let mu = scenario.hyper.mu;
    let record = |layout: &AntennaLayout, step: f64| {
        let report = rate_report(layout, scenario);
        IterRecord {
            g: smooth_min(&report.rates(), mu),
            min_rate: report.min_rate,
            step,
            feasible: violation_count(layout, scenario.d_min) == 0,
        }
    };

    let first = record(init, 0.0);
    let mut state = GradState {
        t_curr: init.clone(),
        v_prev: init.clone(),
        v_curr: init.clone(),
        l: 0.5,
        step: 0.0,
        iter: 0,
        g_history: vec![first.g],
    };
    let mut trace = vec![first];
    let mut best = (init.clone(), first.g);
    let mut g_curr = first.g;
    let mut stop = StopReason::MaxIterations;

    while state.iter < scenario.hyper.grad_max_iter {
        let grad = objective_gradient(&state.t_curr, scenario, mu);
        let search = match backtrack_step(&state.t_curr, g_curr, &grad, scenario, &settings) {
            Ok(s) => s,
            Err(Error::LineSearchExhausted { .. }) => {
                stop = StopReason::LineSearchExhausted;
                break;
            }
            Err(e) => return Err(e),
        };
        state.step = search.step;
        state.v_curr = search.trial;

        let l_next = if settings.accelerated { next_momentum(state.l) } else { 1.0 };
        let coef = if settings.accelerated { (state.l - 1.0) / l_next } else { 0.0 };
        let extrapolated = AntennaLayout::new(
            state.v_curr.as_matrix() + (state.v_curr.as_matrix() - state.v_prev.as_matrix()) * coef,
        );
        let mut t_next = project(&extrapolated, scenario.region_size);
        // the momentum step is not covered by the line search; fall back to
        // the gradient point when it breaks the spacing constraint
        if violation_count(&t_next, scenario.d_min) > 0 {
            t_next = state.v_curr.clone();
        }

        let rec = record(&t_next, state.step);
        trace.push(rec);
        state.g_history.push(rec.g);
        state.iter += 1;
        if rec.feasible && rec.g > best.1 {
            best = (t_next.clone(), rec.g);
        }
        let gain = rec.g - g_curr;

        state.v_prev = state.v_curr.clone();
        state.l = l_next;
        state.t_curr = t_next;
        g_curr = rec.g;

        if gain.abs() < scenario.hyper.grad_tol {
            stop = StopReason::Converged;
            break;
        }
    }

    let layout = best.0;
    Ok(GradOutcome {
        min_rate: rate_report(&layout, scenario).min_rate,
        layout,
        g_history: state.g_history,
        trace,
        iterations: state.iter,
        stop,
    })
}

/// Uniform random layout satisfying both constraints, by rejection.
pub fn random_feasible_layout(scenario: &Scenario, seed: u64, max_tries: usize) -> Result<AntennaLayout> {
    let mut rng = seeded_rng(seed);
    for _ in 0..max_tries {
        let layout = random_layout(scenario.m_antennas, scenario.region_size, &mut rng);
        if violation_count(&layout, scenario.d_min) == 0 {
            return Ok(layout);
        }
        // keep the stream moving even if the layout is discarded
        let _: u32 = rng.gen();
    }
    Err(Error::InfeasibleInit(format!(
        "no feasible random layout after {max_tries} draws"
    )))
}
