//! Synthetic hourly archives with known dynamics.
//!
//! ```text
//! value(t, v, j, k) = base_v(j, (k - floor(s t)) mod n_lon)
//!                   + A_v sin(2 pi (t mod 24) / 24)
//!                   + tau_v t / 8760
//!                   + eta,   eta ~ N(0, noise_std^2)
//! ```
//!
//! Base fields are sums of low-order latitude/longitude Fourier modes with
//! random phases, scaled to unit spatial standard deviation. Every hour
//! draws its noise from its own ChaCha stream, so the archive does not
//! depend on how generation is split across threads.

use std::f64::consts::PI;
use std::path::Path;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::calendar::days_in_year;
use crate::gridstore::{GridArchive, GridError, GridSpec, Variable, VariableCatalog};
use crate::kv::{KvError, KvMap};

/// Variable keys used for synthetic channels, in order.
pub const SYNTH_VARIABLES: [&str; 8] = ["z500", "t2m", "t850", "u500", "v500", "msl", "q700", "z250"];

const HOURS_PER_YEAR: f64 = 8760.0;
const BASE_STREAM: u64 = 0;
const OROGRAPHY_STREAM: u64 = u64::MAX;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_lat: usize,
    pub n_lon: usize,
    pub n_vars: usize,
    pub n_years: usize,
    /// Gregorian year lengths instead of 365-day years.
    pub leap_years: bool,
    pub start_year: i32,
    /// Cells per hour, eastward.
    pub advection_speed: f64,
    /// One value per variable.
    pub diurnal_amplitude: Vec<f64>,
    /// One value per variable, units per 8760 hours.
    pub trend_per_year: Vec<f64>,
    pub noise_std: f64,
    pub seed: u64,
    /// Highest zonal/meridional wavenumber of the base fields.
    pub base_modes: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_lat: 16,
            n_lon: 32,
            n_vars: 3,
            n_years: 2,
            leap_years: false,
            start_year: 2001,
            advection_speed: 0.25,
            diurnal_amplitude: vec![1.0; 3],
            trend_per_year: vec![0.0; 3],
            noise_std: 0.1,
            seed: 1,
            base_modes: 4,
        }
    }
}

const SYNTH_KEYS: &[&str] = &[
    "n_lat",
    "n_lon",
    "n_vars",
    "n_years",
    "leap_years",
    "start_year",
    "advection_speed",
    "diurnal_amplitude",
    "trend_per_year",
    "noise_std",
    "seed",
    "base_modes",
];

fn per_var(values: Vec<f64>, n_vars: usize, key: &str) -> Result<Vec<f64>, SynthError> {
    match values.len() {
        1 => Ok(vec![values[0]; n_vars]),
        n if n == n_vars => Ok(values),
        n => Err(SynthError::Config(format!("{key}: expected 1 or {n_vars} values, got {n}"))),
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.n_years == 0 {
            return bad("n_years must be at least 1".into());
        }
        if self.n_vars == 0 || self.n_vars > SYNTH_VARIABLES.len() {
            return bad(format!("n_vars must be in 1..={}", SYNTH_VARIABLES.len()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be finite and non-negative".into());
        }
        if !self.advection_speed.is_finite() {
            return bad("advection_speed must be finite".into());
        }
        if self.diurnal_amplitude.len() != self.n_vars || self.trend_per_year.len() != self.n_vars {
            return bad("per-variable lists must have n_vars entries".into());
        }
        if self.n_lat < 2 || self.n_lon < 2 {
            return bad("grid must be at least 2x2".into());
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<GridSpec, SynthError> {
        Ok(GridSpec::global(self.n_lat, self.n_lon)?)
    }

    pub fn catalog(&self) -> VariableCatalog {
        let full = VariableCatalog::era5_66();
        let entries = SYNTH_VARIABLES[..self.n_vars]
            .iter()
            .map(|k| full.entries()[full.index_of(k).expect("synthetic key in catalog")].clone())
            .collect();
        VariableCatalog::new(entries).expect("distinct keys")
    }

    pub fn n_days(&self) -> usize {
        (0..self.n_years)
            .map(|i| {
                if self.leap_years {
                    days_in_year(self.start_year + i as i32)
                } else {
                    365
                }
            })
            .sum()
    }

    pub fn n_hours(&self) -> usize {
        24 * self.n_days()
    }

    /// Hours since 1970-01-01T00 of January 1 of `start_year`.
    pub fn start_epoch_hours(&self) -> i64 {
        let start = NaiveDate::from_ymd_opt(self.start_year, 1, 1).expect("valid year");
        let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();
        (start - epoch).num_hours()
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("n_lat", self.n_lat);
        kv.set("n_lon", self.n_lon);
        kv.set("n_vars", self.n_vars);
        kv.set("n_years", self.n_years);
        kv.set("leap_years", self.leap_years);
        kv.set("start_year", self.start_year);
        kv.set("advection_speed", self.advection_speed);
        kv.set("diurnal_amplitude", crate::kv::join_csv(&self.diurnal_amplitude));
        kv.set("trend_per_year", crate::kv::join_csv(&self.trend_per_year));
        kv.set("noise_std", self.noise_std);
        kv.set("seed", self.seed);
        kv.set("base_modes", self.base_modes);
        kv
    }

    /// Missing keys take defaults; per-variable lists may give one value for
    /// all variables.
    pub fn from_kv(kv: &KvMap) -> Result<Self, SynthError> {
        kv.check_keys(SYNTH_KEYS)?;
        let d = Self::default();
        let n_vars = kv.get_or("n_vars", d.n_vars)?;
        let list = |key: &str, default: f64| -> Result<Vec<f64>, SynthError> {
            if kv.raw(key).is_some() {
                per_var(kv.get_list(key)?, n_vars, key)
            } else {
                Ok(vec![default; n_vars])
            }
        };
        let cfg = Self {
            n_lat: kv.get_or("n_lat", d.n_lat)?,
            n_lon: kv.get_or("n_lon", d.n_lon)?,
            n_vars,
            n_years: kv.get_or("n_years", d.n_years)?,
            leap_years: kv.get_or("leap_years", d.leap_years)?,
            start_year: kv.get_or("start_year", d.start_year)?,
            advection_speed: kv.get_or("advection_speed", d.advection_speed)?,
            diurnal_amplitude: list("diurnal_amplitude", d.diurnal_amplitude[0])?,
            trend_per_year: list("trend_per_year", 0.0)?,
            noise_std: kv.get_or("noise_std", d.noise_std)?,
            seed: kv.get_or("seed", d.seed)?,
            base_modes: kv.get_or("base_modes", d.base_modes)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        Self::from_kv(&KvMap::parse(&std::fs::read_to_string(path)?)?)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Smooth random field on the grid, zero spatial mean and unit spatial
/// standard deviation, `[lat][lon]`.
fn smooth_field(spec: &GridSpec, modes: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (nl, nk) = (spec.n_lat(), spec.n_lon());
    let mut f = vec![0.0f64; nl * nk];
    for m in 1..=modes.max(1) {
        for l in 0..=modes {
            let amp: f64 = rng.sample::<f64, _>(StandardNormal) / (1.0 + (m * m + l * l) as f64).sqrt();
            let ph_lon = rng.random::<f64>() * 2.0 * PI;
            let ph_lat = rng.random::<f64>() * 2.0 * PI;
            for (j, lat) in spec.lat_deg().iter().enumerate() {
                let colat = (90.0 - lat).to_radians();
                let meridional = (l as f64 * colat + ph_lat).cos();
                for k in 0..nk {
                    let lon = 2.0 * PI * k as f64 / nk as f64;
                    f[j * nk + k] += amp * meridional * (m as f64 * lon + ph_lon).cos();
                }
            }
        }
    }
    let n = f.len() as f64;
    let mean = f.iter().sum::<f64>() / n;
    let std = (f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    f.iter().map(|v| (v - mean) / std.max(f64::MIN_POSITIVE)).collect()
}

/// Base field of every variable, `[var][lat][lon]`.
pub fn base_fields(cfg: &SynthConfig) -> Result<Vec<f64>, SynthError> {
    let spec = cfg.spec()?;
    let mut rng = stream(cfg.seed, BASE_STREAM);
    Ok((0..cfg.n_vars).flat_map(|_| smooth_field(&spec, cfg.base_modes, &mut rng)).collect())
}

/// Longitude shift in cells at hour `t`.
pub fn shift_at(speed: f64, t: usize) -> i64 {
    (speed * t as f64).floor() as i64
}

pub fn generate(cfg: &SynthConfig) -> Result<GridArchive, SynthError> {
    cfg.validate()?;
    let spec = cfg.spec()?;
    let (nl, nk) = (spec.n_lat(), spec.n_lon());
    let np = nl * nk;
    let frame_len = cfg.n_vars * np;
    let base = base_fields(cfg)?;
    let mut values = vec![0.0f32; cfg.n_hours() * frame_len];
    values.par_chunks_mut(frame_len).enumerate().for_each(|(t, frame)| {
        let mut rng = stream(cfg.seed, t as u64 + 1);
        let shift = shift_at(cfg.advection_speed, t).rem_euclid(nk as i64) as usize;
        let phase = 2.0 * PI * (t % 24) as f64 / 24.0;
        let years = t as f64 / HOURS_PER_YEAR;
        for v in 0..cfg.n_vars {
            let offset = cfg.diurnal_amplitude[v] * phase.sin() + cfg.trend_per_year[v] * years;
            let b = &base[v * np..(v + 1) * np];
            for j in 0..nl {
                for k in 0..nk {
                    let src = (k + nk - shift) % nk;
                    let noise = if cfg.noise_std > 0.0 {
                        cfg.noise_std * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        0.0
                    };
                    frame[v * np + j * nk + k] = (b[j * nk + src] + offset + noise) as f32;
                }
            }
        }
    });
    Ok(GridArchive::new(spec, cfg.catalog(), cfg.start_epoch_hours(), 1, values)?)
}

/// Static orography-like field in metres, non-negative, varying.
pub fn orography(cfg: &SynthConfig) -> Result<GridArchive, SynthError> {
    let spec = cfg.spec()?;
    let mut rng = stream(cfg.seed, OROGRAPHY_STREAM);
    let f = smooth_field(&spec, cfg.base_modes, &mut rng);
    let values = f.iter().map(|v| (1000.0 * (v + 2.0).max(0.0)) as f32).collect();
    Ok(GridArchive::static_field(spec, Variable::new("orog", None, "m"), values)?)
}

/// One-day-ahead RMSE floor per variable: the difference of two daily means
/// of 24 independent noise draws has standard deviation
/// `noise_std * sqrt(2 / 24)`.
pub fn ideal_predictor_error(cfg: &SynthConfig) -> Vec<f64> {
    vec![cfg.noise_std * (2.0f64 / 24.0).sqrt(); cfg.n_vars]
}
