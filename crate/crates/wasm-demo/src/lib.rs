//! Browser bindings: evaluate a layout, run the gradient optimizer, run the GA.
//!
//! Every exported function takes and returns JSON strings so the page needs no
//! generated TypeScript glue beyond the default `wasm-bindgen` shim.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use fas_optim::opt_ga::{run_ga_with, violation_count, GaSettings};
use fas_optim::opt_grad::{run_gradient_with, GradSettings};
use fas_optim::rate::rate_report;
use fas_optim::scenario::{db_to_linear, derive_seed, DEFAULT_RICIAN};
use fas_optim::{AntennaLayout, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error("bad request: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] fas_optim::Error),
    #[error("layout has {got} coordinates, expected {want}")]
    LayoutSize { got: usize, want: usize },
}

/// Scenario knobs exposed on the page.
#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct DemoParams {
    pub m_antennas: usize,
    pub k_users: usize,
    pub seed: u64,
    pub region_over_lambda: f64,
    pub rician_db: f64,
    /// GA population, kept small so a run stays interactive.
    pub ga_pop: usize,
    pub ga_generations: usize,
}

impl Default for DemoParams {
    fn default() -> Self {
        Self {
            m_antennas: 9,
            k_users: 5,
            seed: 1,
            region_over_lambda: 6.0,
            rician_db: 10.0 * DEFAULT_RICIAN.log10(),
            ga_pop: 40,
            ga_generations: 100,
        }
    }
}

impl DemoParams {
    pub fn scenario(&self) -> Result<Scenario, DemoError> {
        let s = Scenario::reference(self.m_antennas, self.k_users, self.seed)?;
        let region = self.region_over_lambda * s.wavelength;
        let mut s = s.with_region_size(region)?.with_rician(db_to_linear(self.rician_db))?;
        s.hyper.ga_pop = self.ga_pop;
        s.hyper.ga_max_iter = self.ga_generations;
        Ok(s)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    /// `[x0, y0, x1, y1, ...]` in meters.
    pub layout: Vec<f64>,
    pub rates: Vec<f64>,
    pub min_rate: f64,
    pub violations: usize,
    pub region_size: f64,
    pub d_min: f64,
    /// Azimuth of arrival per user, radians.
    pub user_azimuth: Vec<f64>,
    pub iterations: usize,
    /// Best min-rate per iteration or generation.
    pub history: Vec<f64>,
}

fn evaluation(layout: &AntennaLayout, s: &Scenario, iterations: usize, history: Vec<f64>) -> Evaluation {
    let report = rate_report(layout, s);
    Evaluation {
        layout: layout.points().flatten().collect(),
        rates: report.rates(),
        min_rate: report.min_rate,
        violations: violation_count(layout, s.d_min),
        region_size: s.region_size,
        d_min: s.d_min,
        user_azimuth: s.users.iter().map(|u| u.azim_aoa).collect(),
        iterations,
        history,
    }
}

/// Rates for `layout`, or for the lambda/2 grid when `layout` is `None`.
pub fn evaluate_layout(params: &DemoParams, layout: Option<&[f64]>) -> Result<Evaluation, DemoError> {
    let s = params.scenario()?;
    let layout = match layout {
        None => s.upa()?,
        Some(flat) if flat.len() != 2 * s.m_antennas => {
            return Err(DemoError::LayoutSize {
                got: flat.len(),
                want: 2 * s.m_antennas,
            })
        }
        Some(flat) => AntennaLayout::from_flat(flat),
    };
    Ok(evaluation(&layout, &s, 0, Vec::new()))
}

pub fn gradient_layout(params: &DemoParams) -> Result<Evaluation, DemoError> {
    let s = params.scenario()?;
    let out = run_gradient_with(&s, &s.spread_upa()?, GradSettings::default())?;
    let history = out.trace.iter().map(|r| r.min_rate).collect();
    Ok(evaluation(&out.layout, &s, out.iterations, history))
}

pub fn ga_layout(params: &DemoParams) -> Result<Evaluation, DemoError> {
    let s = params.scenario()?;
    let out = run_ga_with(&s, derive_seed(params.seed, 0x4741), GaSettings::default())?;
    Ok(evaluation(&out.layout, &s, out.generations, out.history))
}

fn respond(result: Result<Evaluation, DemoError>) -> Result<String, JsValue> {
    result
        .and_then(|e| Ok(serde_json::to_string(&e)?))
        .map_err(|e| JsValue::from_str(&e.to_string()))
}

fn params(json: &str) -> Result<DemoParams, JsValue> {
    serde_json::from_str(json).map_err(|e| JsValue::from_str(&DemoError::from(e).to_string()))
}

/// `layout_json` is a flat coordinate array or `null` for the default grid.
#[wasm_bindgen]
pub fn evaluate(params_json: &str, layout_json: &str) -> Result<String, JsValue> {
    let p = params(params_json)?;
    let layout: Option<Vec<f64>> =
        serde_json::from_str(layout_json).map_err(|e| JsValue::from_str(&DemoError::from(e).to_string()))?;
    respond(evaluate_layout(&p, layout.as_deref()))
}

#[wasm_bindgen]
pub fn optimize_gradient(params_json: &str) -> Result<String, JsValue> {
    respond(gradient_layout(&params(params_json)?))
}

#[wasm_bindgen]
pub fn optimize_ga(params_json: &str) -> Result<String, JsValue> {
    respond(ga_layout(&params(params_json)?))
}
