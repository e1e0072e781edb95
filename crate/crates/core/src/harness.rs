//! Experiment driver behind the `fas-optim` binary: parameter sweeps over
//! random user drops, the closed-form validation table and the random-matrix
//! identity checks.
//!
//! Seeds are split with [`derive_seed`]: repeat `r` of a sweep draws its users
//! from `derive_seed(master, r)`, and every optimizer run of that repeat
//! derives its own stream from the user seed. The same user drop is reused
//! across all sweep values, so neighbouring sweep points are directly
//! comparable.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::AntennaLayout;
use crate::error::{Error, Result};
use crate::opt_ga::{run_ga_with, GaSettings};
use crate::opt_grad::{random_feasible_layout, run_gradient_with, GradSettings};
use crate::rate::{lemma_checks, mc_uatf_sinr, min_rate, rate_report, LemmaReport};
use crate::scenario::{db_to_linear, derive_seed, Scenario, ScenarioConfig};

const GA_STREAM: u64 = 0x4741;
const INIT_STREAM: u64 = 0x494e4954;
const MC_STREAM: u64 = 0x4d43;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    KUsers,
    MAntennas,
    RicianDb,
    RegionOverLambda,
    None,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::KUsers => "k_users",
            SweepAxis::MAntennas => "m_antennas",
            SweepAxis::RicianDb => "rician_db",
            SweepAxis::RegionOverLambda => "region_over_lambda",
            SweepAxis::None => "none",
        }
    }

    fn is_integer(self) -> bool {
        matches!(self, SweepAxis::KUsers | SweepAxis::MAntennas)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "k_users" => SweepAxis::KUsers,
            "m_antennas" => SweepAxis::MAntennas,
            "rician_db" => SweepAxis::RicianDb,
            "region_over_lambda" => SweepAxis::RegionOverLambda,
            "none" => SweepAxis::None,
            other => return Err(Error::invalid("sweep", format!("unknown axis `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ga,
    Grad,
    Fpa,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ga => "ga",
            Algorithm::Grad => "grad",
            Algorithm::Fpa => "fpa",
        }
    }

    /// Parses a comma-separated list such as `ga,grad,fpa`.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let algo: Algorithm = part.parse()?;
            if !out.contains(&algo) {
                out.push(algo);
            }
        }
        if out.is_empty() {
            return Err(Error::invalid("algos", "empty algorithm list"));
        }
        Ok(out)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ga" => Algorithm::Ga,
            "grad" => Algorithm::Grad,
            "fpa" => Algorithm::Fpa,
            other => return Err(Error::invalid("algos", format!("unknown algorithm `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    /// Sorted, non-empty. Ignored for [`SweepAxis::None`].
    pub values: Vec<f64>,
    pub repeats: usize,
    pub algorithms: Vec<Algorithm>,
}

impl SweepSpec {
    /// A single point at the scenario file's own parameters.
    pub fn single(repeats: usize, algorithms: Vec<Algorithm>) -> Self {
        Self {
            axis: SweepAxis::None,
            values: vec![0.0],
            repeats,
            algorithms,
        }
    }

    /// Parses `axis=v1,v2,...` (or `none`).
    pub fn parse_axis(text: &str) -> Result<(SweepAxis, Vec<f64>)> {
        let (axis, values) = match text.split_once('=') {
            Some((a, v)) => (a.trim().parse::<SweepAxis>()?, v),
            None => (text.trim().parse::<SweepAxis>()?, ""),
        };
        if axis == SweepAxis::None {
            return Ok((axis, vec![0.0]));
        }
        let values = values
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::invalid("sweep", format!("`{v}` is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((axis, values))
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::invalid("repeats", "must be at least 1"));
        }
        if self.algorithms.is_empty() {
            return Err(Error::invalid("algos", "empty algorithm list"));
        }
        if self.values.is_empty() {
            return Err(Error::invalid("sweep", "no values given"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sweep", "values must be finite"));
        }
        if self.values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("sweep", "values must be strictly increasing"));
        }
        if self.axis.is_integer() && self.values.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
            return Err(Error::invalid("sweep", format!("{} takes positive integers", self.axis)));
        }
        Ok(())
    }
}

/// Starting layout of the gradient method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradInit {
    /// UPA spread over the whole region.
    #[default]
    Spread,
    /// The lambda/2 UPA.
    Upa,
    /// Uniform random feasible layout.
    Random,
}

impl FromStr for GradInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "spread" => GradInit::Spread,
            "upa" => GradInit::Upa,
            "random" => GradInit::Random,
            other => return Err(Error::invalid("grad_init", format!("unknown init `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    pub ga: GaSettings,
    pub grad: GradSettings,
    pub grad_init: GradInit,
    /// Monte Carlo check of every returned layout.
    pub mc_trials: Option<usize>,
}

/// One optimizer run on one user drop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub axis: SweepAxis,
    pub axis_value: Option<f64>,
    pub algorithm: Algorithm,
    pub repeat: usize,
    pub scenario_seed: u64,
    pub min_rate: f64,
    pub iterations: usize,
    /// Not written to `results.csv`, which has to be reproducible.
    #[serde(skip)]
    pub wall_ms: f64,
    pub mc_min_rate: Option<f64>,
    #[serde(skip)]
    pub layout: AntennaLayout,
}

/// Mean and standard error over the repeats of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub axis: SweepAxis,
    pub axis_value: Option<f64>,
    pub algorithm: Algorithm,
    pub repeats: usize,
    pub mean_min_rate: f64,
    pub se_min_rate: f64,
    pub mean_iterations: f64,
    pub mean_mc_min_rate: Option<f64>,
}

#[derive(Debug, Serialize)]
struct TimingRow {
    axis: SweepAxis,
    axis_value: Option<f64>,
    algorithm: Algorithm,
    repeat: usize,
    wall_ms: f64,
}

/// Applies one sweep value to a scenario file with users drawn from `user_seed`.
pub fn scenario_at(config: &ScenarioConfig, axis: SweepAxis, value: f64, user_seed: u64) -> Result<Scenario> {
    let k = match axis {
        SweepAxis::KUsers => value as usize,
        _ => config.system.k_users,
    };
    let base = config.build_with(user_seed, k)?;
    match axis {
        SweepAxis::KUsers | SweepAxis::None => Ok(base),
        SweepAxis::MAntennas => base.with_antennas(value as usize),
        SweepAxis::RicianDb => base.with_rician(db_to_linear(value)),
        SweepAxis::RegionOverLambda => {
            let size = value * base.wavelength;
            base.with_region_size(size)
        }
    }
}

/// Min-rate of the lambda/2 UPA, no optimization.
pub fn fpa_baseline(scenario: &Scenario) -> Result<ResultRow> {
    let layout = scenario.upa()?;
    Ok(ResultRow {
        axis: SweepAxis::None,
        axis_value: None,
        algorithm: Algorithm::Fpa,
        repeat: 0,
        scenario_seed: scenario.hyper.seed,
        min_rate: min_rate(&layout, scenario),
        iterations: 0,
        wall_ms: 0.0,
        mc_min_rate: None,
        layout,
    })
}

/// Gradient starting layout for `init`; `seed` only matters for random starts.
pub fn gradient_init(scenario: &Scenario, init: GradInit, seed: u64) -> Result<AntennaLayout> {
    match init {
        GradInit::Spread => scenario.spread_upa(),
        GradInit::Upa => scenario.upa(),
        GradInit::Random => random_feasible_layout(scenario, seed, 10_000),
    }
}

/// Runs one algorithm on one scenario. `seed` is the user seed of the drop.
pub fn run_algorithm(scenario: &Scenario, algorithm: Algorithm, seed: u64, options: &RunOptions) -> Result<ResultRow> {
    let start = Instant::now();
    let (layout, iterations) = match algorithm {
        Algorithm::Fpa => (scenario.upa()?, 0),
        Algorithm::Ga => {
            let out = run_ga_with(scenario, derive_seed(seed, GA_STREAM), options.ga)?;
            (out.layout, out.generations)
        }
        Algorithm::Grad => {
            let init = gradient_init(scenario, options.grad_init, derive_seed(seed, INIT_STREAM))?;
            let out = run_gradient_with(scenario, &init, options.grad)?;
            (out.layout, out.iterations)
        }
    };
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let mc_min_rate = options.mc_trials.map(|trials| {
        mc_uatf_sinr(&layout, scenario, trials, derive_seed(seed, MC_STREAM))
            .iter()
            .map(|e| e.rate)
            .fold(f64::INFINITY, f64::min)
    });
    Ok(ResultRow {
        axis: SweepAxis::None,
        axis_value: None,
        algorithm,
        repeat: 0,
        scenario_seed: seed,
        min_rate: min_rate(&layout, scenario),
        iterations,
        wall_ms,
        mc_min_rate,
        layout,
    })
}

/// Every (value, repeat, algorithm) run of a sweep, in that order.
pub fn run_sweep(config: &ScenarioConfig, spec: &SweepSpec, master_seed: u64, options: &RunOptions) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let mut tasks = Vec::new();
    for &value in &spec.values {
        for repeat in 0..spec.repeats {
            for &algo in &spec.algorithms {
                tasks.push((value, repeat, algo));
            }
        }
    }
    // build every scenario up front so configuration errors surface before
    // any optimizer runs
    let scenarios = spec
        .values
        .iter()
        .map(|&v| {
            (0..spec.repeats)
                .map(|r| scenario_at(config, spec.axis, v, derive_seed(master_seed, r as u64)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    tasks
        .par_iter()
        .map(|&(value, repeat, algo)| {
            let vi = spec.values.iter().position(|&v| v == value).expect("value from spec");
            let user_seed = derive_seed(master_seed, repeat as u64);
            let mut row = run_algorithm(&scenarios[vi][repeat], algo, user_seed, options)?;
            row.axis = spec.axis;
            row.axis_value = (spec.axis != SweepAxis::None).then_some(value);
            row.repeat = repeat;
            Ok(row)
        })
        .collect()
}

/// Groups rows by (value, algorithm) in first-seen order.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Option<f64>, Algorithm)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.axis_value, r.algorithm)) {
            keys.push((r.axis_value, r.algorithm));
        }
    }
    keys.into_iter()
        .map(|(value, algo)| {
            let group: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.axis_value == value && r.algorithm == algo)
                .collect();
            let n = group.len() as f64;
            let mean = group.iter().map(|r| r.min_rate).sum::<f64>() / n;
            let var = if group.len() > 1 {
                group.iter().map(|r| (r.min_rate - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            let mc: Option<Vec<f64>> = group.iter().map(|r| r.mc_min_rate).collect();
            SummaryRow {
                axis: group[0].axis,
                axis_value: value,
                algorithm: algo,
                repeats: group.len(),
                mean_min_rate: mean,
                se_min_rate: (var / n).sqrt(),
                mean_iterations: group.iter().map(|r| r.iterations as f64).sum::<f64>() / n,
                mean_mc_min_rate: mc.map(|v| v.iter().sum::<f64>() / n),
            }
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let io_err = |e: std::io::Error| Error::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(e.into()))?;
    for row in rows {
        w.serialize(row).map_err(|e| io_err(e.into()))?;
    }
    w.flush().map_err(io_err)
}

/// Line plot of the summary with +-1 SE error bars.
pub fn render_svg(axis: SweepAxis, summary: &[SummaryRow]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const PAD: f64 = 60.0;
    let colors = |a: Algorithm| match a {
        Algorithm::Ga => "#1f77b4",
        Algorithm::Grad => "#d62728",
        Algorithm::Fpa => "#2ca02c",
    };
    let x_of = |r: &SummaryRow| r.axis_value.unwrap_or(0.0);
    let xs: Vec<f64> = summary.iter().map(x_of).collect();
    let (mut x0, mut x1) = (
        xs.iter().copied().fold(f64::INFINITY, f64::min),
        xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    if x1 - x0 < 1e-12 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    let y1 = summary
        .iter()
        .map(|r| r.mean_min_rate + r.se_min_rate)
        .fold(0.0f64, f64::max)
        .max(1e-3)
        * 1.1;
    let px = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - y / y1 * (H - 2.0 * PAD);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{PAD} {} V{} H{}" fill="none" stroke="black"/>"#,
        PAD,
        H - PAD,
        W - PAD
    );
    for i in 0..=5 {
        let y = y1 * i as f64 / 5.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{y:.2}</text>"#,
            PAD - 6.0,
            py(y) + 4.0
        );
    }
    let mut ticks: Vec<f64> = xs.clone();
    ticks.dedup();
    for x in ticks {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{x}</text>"#,
            px(x),
            H - PAD + 18.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{axis}</text>"#,
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">min user rate (bit/s/Hz)</text>"#,
        H / 2.0,
        H / 2.0
    );

    let mut algos: Vec<Algorithm> = summary.iter().map(|r| r.algorithm).collect();
    algos.sort();
    algos.dedup();
    for (n, algo) in algos.iter().enumerate() {
        let color = colors(*algo);
        let pts: Vec<&SummaryRow> = summary.iter().filter(|r| r.algorithm == *algo).collect();
        let path: Vec<String> = pts
            .iter()
            .map(|r| format!("{:.1},{:.1}", px(x_of(r)), py(r.mean_min_rate)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
        for r in pts {
            let (x, lo, hi) = (
                px(x_of(r)),
                py(r.mean_min_rate - r.se_min_rate),
                py(r.mean_min_rate + r.se_min_rate),
            );
            let _ = writeln!(
                svg,
                r#"<path d="M{x:.1} {lo:.1} V{hi:.1} M{:.1} {lo:.1} H{:.1} M{:.1} {hi:.1} H{:.1}" stroke="{color}"/>"#,
                x - 4.0,
                x + 4.0,
                x - 4.0,
                x + 4.0
            );
            let _ = writeln!(
                svg,
                r#"<circle cx="{x:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                py(r.mean_min_rate)
            );
        }
        let ly = PAD + 16.0 * n as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{}" y="{}" width="12" height="3" fill="{color}"/><text x="{}" y="{}">{algo}</text>"#,
            W - PAD - 50.0,
            ly - 4.0,
            W - PAD - 34.0,
            ly
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    pub files: Vec<PathBuf>,
}

/// Runs a sweep and writes `results.csv`, `summary.csv`, `timings.csv` and
/// `<axis>.svg` into `out_dir`. Only the timings differ between identical
/// invocations.
pub fn run_experiment(
    scenario_path: impl AsRef<Path>,
    spec: &SweepSpec,
    master_seed: Option<u64>,
    out_dir: impl AsRef<Path>,
    options: &RunOptions,
) -> Result<ExperimentOutput> {
    let config = ScenarioConfig::load(scenario_path)?;
    config.build()?;
    let seed = master_seed.unwrap_or(config.hyper.seed);
    let rows = run_sweep(&config, spec, seed, options)?;
    let summary = summarize(&rows);

    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let results = out_dir.join("results.csv");
    let summary_path = out_dir.join("summary.csv");
    let timings = out_dir.join("timings.csv");
    let plot = out_dir.join(format!("{}.svg", spec.axis));
    write_csv(&results, &rows)?;
    write_csv(&summary_path, &summary)?;
    let timing_rows: Vec<TimingRow> = rows
        .iter()
        .map(|r| TimingRow {
            axis: r.axis,
            axis_value: r.axis_value,
            algorithm: r.algorithm,
            repeat: r.repeat,
            wall_ms: r.wall_ms,
        })
        .collect();
    write_csv(&timings, &timing_rows)?;
    fs::write(&plot, render_svg(spec.axis, &summary)).map_err(|source| Error::Io {
        path: plot.display().to_string(),
        source,
    })?;
    Ok(ExperimentOutput {
        rows,
        summary,
        files: vec![results, summary_path, timings, plot],
    })
}

// ---------------------------------------------------------------------------
// Closed form against Monte Carlo

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Signal,
    Leak,
    Interference,
    Noise,
    Sinr,
}

impl Term {
    pub const ALL: [Term; 5] = [Term::Signal, Term::Leak, Term::Interference, Term::Noise, Term::Sinr];

    pub fn name(self) -> &'static str {
        match self {
            Term::Signal => "signal",
            Term::Leak => "leak",
            Term::Interference => "interference",
            Term::Noise => "noise",
            Term::Sinr => "sinr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TermCheck {
    pub user: usize,
    pub term: Term,
    pub closed_form: f64,
    pub monte_carlo: f64,
    pub std_err: f64,
}

impl TermCheck {
    pub fn rel_err(&self) -> f64 {
        (self.monte_carlo - self.closed_form).abs() / self.closed_form.abs()
    }

    pub fn z(&self) -> f64 {
        let d = (self.monte_carlo - self.closed_form).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.std_err
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub trials: usize,
    pub checks: Vec<TermCheck>,
}

impl ValidationReport {
    /// Deviation bound in standard errors.
    pub const MAX_Z: f64 = 4.0;

    pub fn max_z(&self) -> f64 {
        self.checks.iter().map(TermCheck::z).fold(0.0, f64::max)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.checks.iter().map(TermCheck::rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_z() <= Self::MAX_Z
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>4}  {:<12}  {:>13}  {:>13}  {:>10}  {:>9}  {:>6}",
            "user", "term", "closed form", "monte carlo", "std err", "rel err", "z"
        );
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{:>4}  {:<12}  {:>13.6e}  {:>13.6e}  {:>10.3e}  {:>8.4}%  {:>6.2}",
                c.user,
                c.term.name(),
                c.closed_form,
                c.monte_carlo,
                c.std_err,
                100.0 * c.rel_err(),
                c.z()
            );
        }
        out
    }
}

/// Compares the closed-form SINR terms with a Monte Carlo run on `layout`.
pub fn validate_closed_form(scenario: &Scenario, layout: &AntennaLayout, trials: usize, seed: u64) -> Result<ValidationReport> {
    if trials < 10_000 {
        return Err(Error::invalid("trials", "need at least 10000 trials"));
    }
    let closed = rate_report(layout, scenario);
    let mc = mc_uatf_sinr(layout, scenario, trials, seed);
    let mut checks = Vec::with_capacity(5 * mc.len());
    for (k, (cf, est)) in closed.users.iter().zip(&mc).enumerate() {
        for term in Term::ALL {
            let (closed_form, monte_carlo, std_err) = match term {
                Term::Signal => (cf.e_signal, est.desired, est.se.desired),
                Term::Leak => (cf.e_leak, est.leak, est.se.leak),
                Term::Interference => (cf.interference_sum, est.interf, est.se.interf),
                Term::Noise => (cf.e_noise, est.noise, est.se.noise),
                Term::Sinr => (cf.sinr, est.sinr, est.se.sinr),
            };
            checks.push(TermCheck {
                user: k,
                term,
                closed_form,
                monte_carlo,
                std_err,
            });
        }
    }
    Ok(ValidationReport { trials, checks })
}

// ---------------------------------------------------------------------------
// Random-matrix identities

/// Pass/fail thresholds applied to a [`LemmaReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaVerdict {
    pub fourth_moment_ratio: f64,
    pub max_offdiag_z: f64,
    pub max_diag_rel_err: f64,
    pub max_cross_z: f64,
}

impl LemmaVerdict {
    pub fn from_report(r: &LemmaReport) -> Self {
        Self {
            fourth_moment_ratio: r.fourth_moment.estimate / r.fourth_moment.expected,
            max_offdiag_z: r.max_offdiag_z(),
            max_diag_rel_err: r.max_diag_rel_err(),
            max_cross_z: r.cross.iter().map(|c| c.z()).fold(0.0, f64::max),
        }
    }

    pub fn passed(&self) -> bool {
        (0.99..=1.01).contains(&self.fourth_moment_ratio)
            && self.max_offdiag_z < 4.0
            && self.max_diag_rel_err < 0.01
            && self.max_cross_z < 4.0
    }
}

pub fn lemmas(m: usize, trials: usize, seed: u64) -> Result<(LemmaReport, LemmaVerdict)> {
    if m == 0 {
        return Err(Error::invalid("m", "must be at least 1"));
    }
    if trials < 2 {
        return Err(Error::invalid("trials", "need at least 2 trials"));
    }
    let report = lemma_checks(m, trials, seed);
    let verdict = LemmaVerdict::from_report(&report);
    Ok((report, verdict))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE1: &str = r#"
[system]
m_antennas = 9
k_users = 3
wavelength_m = 0.1
region_over_lambda = 6
tx_power_dbm = 30
noise_power_dbm = -104
coherence_len = 196

[users]
seed = 7
"#;

    fn config() -> ScenarioConfig {
        ScenarioConfig::from_toml_str(TABLE1).unwrap()
    }

    #[test]
    fn parse_axis_spec() {
        let (axis, values) = SweepSpec::parse_axis("k_users=3,5,7").unwrap();
        assert_eq!(axis, SweepAxis::KUsers);
        assert_eq!(values, vec![3.0, 5.0, 7.0]);
        assert_eq!(SweepSpec::parse_axis("none").unwrap().0, SweepAxis::None);
        assert!(SweepSpec::parse_axis("bogus=1").is_err());
        assert!(SweepSpec::parse_axis("k_users=a").is_err());
    }

    #[test]
    fn spec_invariants() {
        let ok = SweepSpec {
            axis: SweepAxis::KUsers,
            values: vec![3.0, 5.0],
            repeats: 2,
            algorithms: vec![Algorithm::Fpa],
        };
        assert!(ok.validate().is_ok());
        assert!(SweepSpec { values: vec![5.0, 3.0], ..ok.clone() }.validate().is_err());
        assert!(SweepSpec { values: vec![], ..ok.clone() }.validate().is_err());
        assert!(SweepSpec { repeats: 0, ..ok.clone() }.validate().is_err());
        assert!(SweepSpec { values: vec![2.5], ..ok }.validate().is_err());
    }

    #[test]
    fn algorithm_list() {
        assert_eq!(
            Algorithm::parse_list("ga,grad,fpa,ga").unwrap(),
            vec![Algorithm::Ga, Algorithm::Grad, Algorithm::Fpa]
        );
        assert!(Algorithm::parse_list("").is_err());
        assert!(Algorithm::parse_list("ga,sa").is_err());
    }

    #[test]
    fn fpa_only_single_row() {
        let spec = SweepSpec::single(1, vec![Algorithm::Fpa]);
        let rows = run_sweep(&config(), &spec, 7, &RunOptions::default()).unwrap();
        assert_eq!(rows.len(), 1);
        let s = scenario_at(&config(), SweepAxis::None, 0.0, derive_seed(7, 0)).unwrap();
        assert_eq!(rows[0].min_rate, fpa_baseline(&s).unwrap().min_rate);
        assert_eq!(rows[0].iterations, 0);
    }

    #[test]
    fn sweep_values_reach_the_scenario() {
        let c = config();
        assert_eq!(scenario_at(&c, SweepAxis::KUsers, 5.0, 1).unwrap().k_users, 5);
        assert_eq!(scenario_at(&c, SweepAxis::KUsers, 5.0, 1).unwrap().pilot_len, 5);
        assert_eq!(scenario_at(&c, SweepAxis::MAntennas, 4.0, 1).unwrap().m_antennas, 4);
        let r = scenario_at(&c, SweepAxis::RicianDb, 10.0, 1).unwrap();
        assert!((r.users[0].rician - 10.0).abs() < 1e-12);
        let a = scenario_at(&c, SweepAxis::RegionOverLambda, 2.5, 1).unwrap();
        assert!((a.region_size - 0.25).abs() < 1e-15);
    }

    #[test]
    fn user_drops_shared_across_sweep_values() {
        let c = config();
        let small = scenario_at(&c, SweepAxis::KUsers, 3.0, 11).unwrap();
        let large = scenario_at(&c, SweepAxis::KUsers, 5.0, 11).unwrap();
        for (a, b) in small.users.iter().zip(&large.users) {
            assert_eq!((a.distance, a.elev_aoa, a.azim_aoa), (b.distance, b.elev_aoa, b.azim_aoa));
        }
    }

    #[test]
    fn summary_statistics() {
        let mk = |rate: f64, repeat| ResultRow {
            axis: SweepAxis::KUsers,
            axis_value: Some(3.0),
            algorithm: Algorithm::Ga,
            repeat,
            scenario_seed: 0,
            min_rate: rate,
            iterations: 10,
            wall_ms: 1.0,
            mc_min_rate: None,
            layout: AntennaLayout::zeros(1),
        };
        let s = summarize(&[mk(1.0, 0), mk(2.0, 1), mk(3.0, 2)]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].mean_min_rate, 2.0);
        assert!((s[0].se_min_rate - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(s[0].mean_mc_min_rate, None);
    }

    #[test]
    fn svg_has_one_marker_per_summary_row() {
        let rows: Vec<SummaryRow> = [3.0, 5.0, 7.0]
            .iter()
            .flat_map(|&k| {
                [Algorithm::Ga, Algorithm::Fpa].map(|a| SummaryRow {
                    axis: SweepAxis::KUsers,
                    axis_value: Some(k),
                    algorithm: a,
                    repeats: 2,
                    mean_min_rate: 4.0 / k,
                    se_min_rate: 0.05,
                    mean_iterations: 0.0,
                    mean_mc_min_rate: None,
                })
            })
            .collect();
        let svg = render_svg(SweepAxis::KUsers, &rows);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<circle").count(), rows.len());
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn validation_needs_enough_trials() {
        let s = Scenario::reference(4, 2, 1).unwrap();
        let err = validate_closed_form(&s, &s.upa().unwrap(), 100, 0).unwrap_err();
        assert!(err.to_string().contains("trials"));
    }
}
