//! Scenario configuration, per-user statistics and seeded scenario generation.
//!
//! Powers are stored in watts. The scenario file accepts dBm/dB and converts
//! on load; everything derived from the primitives (`c_k`, `a_k`) is
//! recomputed by [`Scenario::validate`] and never read from disk.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::AntennaLayout;
use crate::error::{Error, Result};

/// Rician factor used for every user unless overridden (linear).
pub const DEFAULT_RICIAN: f64 = 6.0;
/// Reference path loss at 1 m, in dB.
pub const PATH_LOSS_REF_DB: f64 = -40.0;
pub const PATH_LOSS_EXPONENT: f64 = 2.8;
/// Default user distance range in meters.
pub const DEFAULT_DISTANCE_RANGE: (f64, f64) = (50.0, 70.0);

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// SplitMix64 finalizer applied to `seed ^ stream`-style mixing.
///
/// Every seeded sub-task (users of a repeat, an optimizer run, a Monte Carlo
/// chunk) takes its seed from `derive_seed(parent, index)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Log-distance path loss `alpha = alpha_0 * d^-exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossModel {
    pub ref_db: f64,
    pub exponent: f64,
}

impl Default for PathLossModel {
    fn default() -> Self {
        Self {
            ref_db: PATH_LOSS_REF_DB,
            exponent: PATH_LOSS_EXPONENT,
        }
    }
}

impl PathLossModel {
    pub fn gain(&self, distance: f64) -> f64 {
        db_to_linear(self.ref_db) * distance.powf(-self.exponent)
    }
}

/// Statistical CSI of one user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserStats {
    /// Meters.
    pub distance: f64,
    /// Large-scale gain `alpha_k` (linear).
    pub path_loss: f64,
    /// Rician factor `epsilon_k` (linear).
    pub rician: f64,
    /// `c_k = alpha_k / (epsilon_k + 1)`.
    pub c_factor: f64,
    /// LMMSE gain `a_k = c_k / (c_k + sigma^2 / (tau p))`.
    pub lmmse_gain: f64,
    /// Elevation angle of arrival in `[0, pi]`.
    pub elev_aoa: f64,
    /// Azimuth angle of arrival in `[0, pi]`.
    pub azim_aoa: f64,
}

impl UserStats {
    pub fn new(
        distance: f64,
        path_loss: f64,
        rician: f64,
        elev_aoa: f64,
        azim_aoa: f64,
        noise_over_pilot: f64,
    ) -> Self {
        let mut user = Self {
            distance,
            path_loss,
            rician,
            c_factor: 0.0,
            lmmse_gain: 0.0,
            elev_aoa,
            azim_aoa,
        };
        user.refresh(noise_over_pilot);
        user
    }

    /// Recomputes `c_k` and `a_k` from the primitives.
    pub fn refresh(&mut self, noise_over_pilot: f64) {
        self.c_factor = self.path_loss / (self.rician + 1.0);
        self.lmmse_gain = self.c_factor / (self.c_factor + noise_over_pilot);
    }

    /// Unit direction projected on the array plane: `[sin(el) cos(az), cos(el)]`.
    pub fn direction(&self) -> [f64; 2] {
        [
            self.elev_aoa.sin() * self.azim_aoa.cos(),
            self.elev_aoa.cos(),
        ]
    }

    /// `sqrt(c_k eps_k)`, the amplitude of the mean (LoS) channel.
    pub fn los_amplitude(&self) -> f64 {
        (self.c_factor * self.rician).sqrt()
    }
}

/// Optimizer and simulation knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Log-sum-exp smoothing factor.
    pub mu: f64,
    /// GA penalty per violating antenna pair (bits/s/Hz).
    pub omega: f64,
    /// Backtracking shrink factor.
    pub kappa: f64,
    /// Armijo control parameter.
    pub varpi: f64,
    pub ga_pop: usize,
    pub ga_max_iter: usize,
    pub grad_max_iter: usize,
    /// Stopping threshold on the smoothed objective (bits/s/Hz).
    pub grad_tol: f64,
    pub mc_trials: usize,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            mu: 100.0,
            omega: 10.0,
            kappa: 0.8,
            varpi: 0.5,
            ga_pop: 100,
            ga_max_iter: 500,
            grad_max_iter: 1000,
            grad_tol: 1e-4,
            mc_trials: 100_000,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) {
            return Err(Error::invalid("mu", "must be positive"));
        }
        if !(self.omega > 0.0) {
            return Err(Error::invalid("omega", "must be positive"));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::invalid("kappa", "must lie in (0, 1)"));
        }
        if !(self.varpi > 0.0 && self.varpi < 1.0) {
            return Err(Error::invalid("varpi", "must lie in (0, 1)"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::invalid("grad_tol", "must be positive"));
        }
        if self.ga_pop < 2 {
            return Err(Error::invalid("ga_pop", "needs at least 2 individuals"));
        }
        if self.mc_trials == 0 {
            return Err(Error::invalid("mc_trials", "must be at least 1"));
        }
        Ok(())
    }
}

/// Complete experiment configuration.
///
/// Fields are public for reading; after editing any of them call
/// [`Scenario::validate`] so the derived per-user fields follow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub m_antennas: usize,
    pub k_users: usize,
    /// Meters.
    pub wavelength: f64,
    /// Side of the square region, meters.
    pub region_size: f64,
    /// Minimum antenna spacing, meters.
    pub d_min: f64,
    /// Watts.
    pub tx_power: f64,
    /// Watts.
    pub noise_power: f64,
    /// Symbols per coherence interval.
    pub coherence_len: usize,
    /// Pilot symbols.
    pub pilot_len: usize,
    pub users: Vec<UserStats>,
    pub hyper: HyperParams,
}

impl Scenario {
    /// Default parameters: `lambda = 0.1 m`, `A = 6 lambda`, `p = 30 dBm`,
    /// `sigma^2 = -104 dBm`, `tau_c = 196`, `tau = K`, `D_min = lambda / 2`,
    /// `eps = 6`, users uniform in `[50, 70] m` drawn from `seed`.
    pub fn reference(m_antennas: usize, k_users: usize, seed: u64) -> Result<Self> {
        let wavelength = 0.1;
        let tx_power = dbm_to_watts(30.0);
        let noise_power = dbm_to_watts(-104.0);
        let noise_over_pilot = noise_power / (k_users as f64 * tx_power);
        let users = random_users(
            seed,
            k_users,
            DEFAULT_DISTANCE_RANGE,
            &UserModel {
                path_loss: PathLossModel::default(),
                rician: DEFAULT_RICIAN,
                noise_over_pilot,
            },
        );
        Scenario {
            m_antennas,
            k_users,
            wavelength,
            region_size: 6.0 * wavelength,
            d_min: wavelength / 2.0,
            tx_power,
            noise_power,
            coherence_len: 196,
            pilot_len: k_users,
            users,
            hyper: HyperParams {
                seed,
                ..HyperParams::default()
            },
        }
        .validate()
    }

    /// `sigma^2 / (tau p)`, the effective pilot noise after despreading.
    pub fn noise_over_pilot(&self) -> f64 {
        self.noise_power / (self.pilot_len as f64 * self.tx_power)
    }

    /// Pilot-overhead factor `(tau_c - tau) / tau_c`.
    pub fn pre_log(&self) -> f64 {
        (self.coherence_len - self.pilot_len) as f64 / self.coherence_len as f64
    }

    pub fn half_region(&self) -> f64 {
        self.region_size / 2.0
    }

    /// Checks every invariant and recomputes derived user fields.
    pub fn validate(mut self) -> Result<Self> {
        if self.m_antennas == 0 {
            return Err(Error::invalid("m_antennas", "must be at least 1"));
        }
        if self.k_users == 0 {
            return Err(Error::invalid("k_users", "must be at least 1"));
        }
        if self.users.len() != self.k_users {
            return Err(Error::invalid(
                "users",
                format!("{} users given but k_users = {}", self.users.len(), self.k_users),
            ));
        }
        if self.pilot_len < self.k_users {
            return Err(Error::invalid(
                "pilot_len",
                format!("pilot_len < k_users ({} < {})", self.pilot_len, self.k_users),
            ));
        }
        if self.pilot_len > self.coherence_len {
            return Err(Error::invalid(
                "pilot_len",
                format!(
                    "pilot_len > coherence_len ({} > {})",
                    self.pilot_len, self.coherence_len
                ),
            ));
        }
        for (field, value) in [
            ("wavelength", self.wavelength),
            ("region_size", self.region_size),
            ("d_min", self.d_min),
            ("tx_power", self.tx_power),
            ("noise_power", self.noise_power),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::invalid(field, format!("must be positive, got {value}")));
            }
        }
        self.hyper.validate()?;
        if let Err(e) = upa_layout(self.m_antennas, self.d_min, self.region_size) {
            return Err(Error::invalid("region_size", e.to_string()));
        }
        let beta = self.noise_over_pilot();
        for user in &mut self.users {
            if !(user.path_loss > 0.0) {
                return Err(Error::invalid("path_loss", "must be positive"));
            }
            if !(user.rician >= 0.0) {
                return Err(Error::invalid("rician", "must be non-negative"));
            }
            for angle in [user.elev_aoa, user.azim_aoa] {
                if !(0.0..=PI).contains(&angle) {
                    return Err(Error::invalid("aoa", format!("{angle} outside [0, pi]")));
                }
            }
            user.refresh(beta);
        }
        Ok(self)
    }

    pub fn with_rician(mut self, rician: f64) -> Result<Self> {
        for user in &mut self.users {
            user.rician = rician;
        }
        self.validate()
    }

    pub fn with_antennas(mut self, m_antennas: usize) -> Result<Self> {
        self.m_antennas = m_antennas;
        self.validate()
    }

    pub fn with_region_size(mut self, region_size: f64) -> Result<Self> {
        self.region_size = region_size;
        self.validate()
    }

    pub fn with_noise_power(mut self, noise_power: f64) -> Result<Self> {
        self.noise_power = noise_power;
        self.validate()
    }

    /// Replaces the user set; the pilot length follows `K` when it equalled
    /// the old user count.
    pub fn with_users(mut self, users: Vec<UserStats>) -> Result<Self> {
        if self.pilot_len == self.k_users {
            self.pilot_len = users.len();
        }
        self.k_users = users.len();
        self.users = users;
        self.validate()
    }

    /// The lambda/2 UPA used as FPA baseline and GA seed.
    pub fn upa(&self) -> Result<AntennaLayout> {
        upa_layout(self.m_antennas, self.wavelength / 2.0, self.region_size)
    }

    /// UPA stretched over the whole region, the default gradient start.
    ///
    /// The lambda/2 UPA has every neighbour pair exactly at `d_min`, so most
    /// ascent directions are rejected by the spacing check at any step size.
    pub fn spread_upa(&self) -> Result<AntennaLayout> {
        let cols = (self.m_antennas as f64).sqrt().ceil();
        let pitch = (self.region_size / cols).max(self.d_min);
        upa_layout(self.m_antennas, pitch, self.region_size)
    }
}

/// Population-level parameters shared by randomly drawn users.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserModel {
    pub path_loss: PathLossModel,
    pub rician: f64,
    pub noise_over_pilot: f64,
}

/// Draws `k` users with distances uniform on `d_range` and both angles
/// uniform on `[0, pi]`. Users are drawn in order, so the first `k` users of
/// a seed do not depend on how many follow.
pub fn random_users(seed: u64, k: usize, d_range: (f64, f64), model: &UserModel) -> Vec<UserStats> {
    let mut rng = seeded_rng(seed);
    (0..k)
        .map(|_| {
            let distance = if d_range.1 > d_range.0 {
                rng.gen_range(d_range.0..d_range.1)
            } else {
                d_range.0
            };
            let elev = rng.gen_range(0.0..=PI);
            let azim = rng.gen_range(0.0..=PI);
            UserStats::new(
                distance,
                model.path_loss.gain(distance),
                model.rician,
                elev,
                azim,
                model.noise_over_pilot,
            )
        })
        .collect()
}

/// Centered rectangular grid with `ceil(sqrt(M))` columns at the given pitch,
/// filled row-major starting from the bottom-left corner.
pub fn upa_layout(m: usize, pitch: f64, region_size: f64) -> Result<AntennaLayout> {
    if m == 0 {
        return Err(Error::LayoutDoesNotFit("no antennas".into()));
    }
    let cols = (m as f64).sqrt().ceil() as usize;
    let rows = m.div_ceil(cols);
    let width = (cols - 1) as f64 * pitch;
    let height = (rows - 1) as f64 * pitch;
    // small slack so a grid that exactly spans the region is accepted
    let slack = 1e-12 * region_size.max(1.0);
    if width > region_size + slack || height > region_size + slack {
        return Err(Error::LayoutDoesNotFit(format!(
            "{rows}x{cols} grid at pitch {pitch} m needs {:.4} m, region is {region_size} m",
            width.max(height)
        )));
    }
    let points = (0..m).map(|idx| {
        let (row, col) = (idx / cols, idx % cols);
        [
            col as f64 * pitch - width / 2.0,
            row as f64 * pitch - height / 2.0,
        ]
    });
    Ok(AntennaLayout::from_points(points))
}

// ---------------------------------------------------------------------------
// Scenario file

/// Parsed scenario file, before users are materialized.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub system: SystemSection,
    pub users: UsersSection,
    #[serde(default)]
    pub hyper: HyperParams,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub m_antennas: usize,
    pub k_users: usize,
    pub wavelength_m: f64,
    pub region_size_m: Option<f64>,
    pub region_over_lambda: Option<f64>,
    /// Defaults to half a wavelength.
    pub d_min_m: Option<f64>,
    pub tx_power_dbm: f64,
    pub noise_power_dbm: f64,
    pub coherence_len: usize,
    /// Defaults to `k_users`.
    pub pilot_len: Option<usize>,
    #[serde(default = "default_pl_ref")]
    pub path_loss_ref_db: f64,
    #[serde(default = "default_pl_exp")]
    pub path_loss_exponent: f64,
    pub rician: Option<f64>,
    pub rician_db: Option<f64>,
}

fn default_pl_ref() -> f64 {
    PATH_LOSS_REF_DB
}

fn default_pl_exp() -> f64 {
    PATH_LOSS_EXPONENT
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UsersSection {
    pub seed: Option<u64>,
    pub count: Option<usize>,
    pub d_min_m: Option<f64>,
    pub d_max_m: Option<f64>,
    pub list: Option<Vec<UserEntry>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserEntry {
    pub distance_m: f64,
    pub elev_aoa: f64,
    pub azim_aoa: f64,
    pub rician: Option<f64>,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn path_loss(&self) -> PathLossModel {
        PathLossModel {
            ref_db: self.system.path_loss_ref_db,
            exponent: self.system.path_loss_exponent,
        }
    }

    pub fn rician(&self) -> Result<f64> {
        match (self.system.rician, self.system.rician_db) {
            (Some(_), Some(_)) => Err(Error::invalid("rician", "give either rician or rician_db")),
            (Some(lin), None) => Ok(lin),
            (None, Some(db)) => Ok(db_to_linear(db)),
            (None, None) => Ok(DEFAULT_RICIAN),
        }
    }

    pub fn region_size(&self) -> Result<f64> {
        match (self.system.region_size_m, self.system.region_over_lambda) {
            (Some(_), Some(_)) => Err(Error::invalid(
                "region_size_m",
                "give either region_size_m or region_over_lambda",
            )),
            (Some(a), None) => Ok(a),
            (None, Some(r)) => Ok(r * self.system.wavelength_m),
            (None, None) => Err(Error::invalid("region_size_m", "missing")),
        }
    }

    /// Seed of the random user draw, if the file asks for random users.
    pub fn user_seed(&self) -> Option<u64> {
        if self.users.list.is_some() {
            None
        } else {
            Some(self.users.seed.unwrap_or(self.hyper.seed))
        }
    }

    pub fn build(&self) -> Result<Scenario> {
        self.build_with(self.user_seed().unwrap_or(0), self.system.k_users)
    }

    /// Builds the scenario with `k_users` random users drawn from `user_seed`.
    /// Explicit user lists ignore the seed and must match `k_users`.
    pub fn build_with(&self, user_seed: u64, k_users: usize) -> Result<Scenario> {
        let sys = &self.system;
        let tx_power = dbm_to_watts(sys.tx_power_dbm);
        let noise_power = dbm_to_watts(sys.noise_power_dbm);
        let pilot_len = sys.pilot_len.unwrap_or(k_users);
        let rician = self.rician()?;
        let noise_over_pilot = noise_power / (pilot_len as f64 * tx_power);
        let path_loss = self.path_loss();
        let users = match &self.users.list {
            Some(list) => {
                if self.users.count.is_some() || self.users.d_min_m.is_some() {
                    return Err(Error::invalid(
                        "users",
                        "explicit list cannot be combined with count/d_min_m",
                    ));
                }
                list.iter()
                    .map(|u| {
                        if !(u.distance_m > 0.0) {
                            return Err(Error::invalid("distance_m", "must be positive"));
                        }
                        Ok(UserStats::new(
                            u.distance_m,
                            path_loss.gain(u.distance_m),
                            u.rician.unwrap_or(rician),
                            u.elev_aoa,
                            u.azim_aoa,
                            noise_over_pilot,
                        ))
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            None => {
                if let Some(count) = self.users.count {
                    if count != sys.k_users {
                        return Err(Error::invalid(
                            "count",
                            format!("users.count = {count} but k_users = {}", sys.k_users),
                        ));
                    }
                }
                let lo = self.users.d_min_m.unwrap_or(DEFAULT_DISTANCE_RANGE.0);
                let hi = self.users.d_max_m.unwrap_or(DEFAULT_DISTANCE_RANGE.1);
                if !(lo > 0.0 && hi >= lo) {
                    return Err(Error::invalid("d_max_m", "need 0 < d_min_m <= d_max_m"));
                }
                random_users(
                    user_seed,
                    k_users,
                    (lo, hi),
                    &UserModel {
                        path_loss,
                        rician,
                        noise_over_pilot,
                    },
                )
            }
        };
        Scenario {
            m_antennas: sys.m_antennas,
            k_users,
            wavelength: sys.wavelength_m,
            region_size: self.region_size()?,
            d_min: sys.d_min_m.unwrap_or(sys.wavelength_m / 2.0),
            tx_power,
            noise_power,
            coherence_len: sys.coherence_len,
            pilot_len,
            users,
            hyper: self.hyper,
        }
        .validate()
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    ScenarioConfig::load(path)?.build()
}
