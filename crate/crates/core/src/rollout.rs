//! Autoregressive inference: iterate a one-day model from each scheduled
//! initial condition out to a maximum lead.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::afno::{forward, ModelError, ModelState};
use crate::calendar::DayAxis;
use crate::gridstore::{write_archive, GridArchive, GridError};
use crate::trainer::NormStats;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("max_lead must be at least 1")]
    ZeroLead,
    #[error("non-finite state at lead {lead}")]
    NonFinite { lead: usize },
    #[error("model failed at lead {lead}: {source}")]
    Model { lead: usize, source: ModelError },
    #[error("init day {day} outside analysis of {n_days} days")]
    InitOutOfRange { day: usize, n_days: usize },
    #[error("shape mismatch: expected {expected} values, found {found}")]
    Shape { expected: usize, found: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// A one-day step in normalized space: input `[dynamic + static][lat][lon]`,
/// output `[dynamic][lat][lon]`.
pub trait Forecaster<T>: Sync {
    fn step(&self, input: &[T]) -> Result<Vec<T>, ModelError>;
}

impl<T: Scalar> Forecaster<T> for ModelState<T> {
    fn step(&self, input: &[T]) -> Result<Vec<T>, ModelError> {
        forward(input, self)
    }
}

/// Returns the dynamic part of its input unchanged.
#[derive(Debug, Clone, Copy)]
pub struct IdentityForecaster {
    pub dynamic_len: usize,
}

impl<T: Scalar> Forecaster<T> for IdentityForecaster {
    fn step(&self, input: &[T]) -> Result<Vec<T>, ModelError> {
        Ok(input[..self.dynamic_len].to_vec())
    }
}

/// `x -> A x` on the flattened dynamic state; `A` is row-major `dim x dim`.
#[derive(Debug, Clone)]
pub struct LinearForecaster<T> {
    pub matrix: Vec<T>,
    pub dim: usize,
}

impl<T: Scalar> Forecaster<T> for LinearForecaster<T> {
    fn step(&self, input: &[T]) -> Result<Vec<T>, ModelError> {
        let x = &input[..self.dim];
        Ok(self
            .matrix
            .chunks(self.dim)
            .map(|row| row.iter().zip(x).map(|(&a, &b)| a * b).sum())
            .collect())
    }
}

/// Forecast fields for leads `1..=max_lead` from one initial day, in
/// physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub init_day: usize,
    /// `lead_fields[k - 1]` is the lead-`k` frame `[var][lat][lon]`.
    pub lead_fields: Vec<Vec<f32>>,
    /// Leads with verification data; set by [`run_schedule`].
    pub verified_leads: usize,
}

impl Trajectory {
    pub fn max_lead(&self) -> usize {
        self.lead_fields.len()
    }

    pub fn is_truncated(&self) -> bool {
        self.verified_leads < self.max_lead()
    }

    pub fn flag(&self) -> Option<String> {
        self.is_truncated()
            .then(|| format!("verification truncated at lead {}", self.verified_leads))
    }
}

/// Leads of a forecast from `init_day` that an analysis of `n_days` days
/// can verify.
pub fn verified_leads(init_day: usize, max_lead: usize, n_days: usize) -> usize {
    n_days.saturating_sub(init_day + 1).min(max_lead)
}

/// Rolls `init` (physical `[var][lat][lon]`) forward `max_lead` days. The
/// state stays normalized between steps and the static channels are
/// re-appended before every step.
pub fn autoregress<T: Scalar, F: Forecaster<T> + ?Sized>(
    model: &F,
    stats: &NormStats,
    init_day: usize,
    init: &[f32],
    static_input: &[T],
    max_lead: usize,
) -> Result<Trajectory, RolloutError> {
    if max_lead == 0 {
        return Err(RolloutError::ZeroLead);
    }
    let mut x: Vec<T> = stats.normalize(init);
    let mut lead_fields = Vec::with_capacity(max_lead);
    for lead in 1..=max_lead {
        let mut input = x;
        input.extend_from_slice(static_input);
        let y = model.step(&input).map_err(|e| match e {
            ModelError::NonFinite { .. } => RolloutError::NonFinite { lead },
            other => RolloutError::Model { lead, source: other },
        })?;
        if y.len() != init.len() {
            return Err(RolloutError::Shape {
                expected: init.len(),
                found: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(RolloutError::NonFinite { lead });
        }
        lead_fields.push(stats.denormalize(&y));
        x = y;
    }
    Ok(Trajectory {
        init_day,
        lead_fields,
        verified_leads: 0,
    })
}

/// One trajectory per scheduled day of a daily `analysis` (time index =
/// day), in schedule order. Trajectories run in parallel.
pub fn run_schedule<T: Scalar, F: Forecaster<T> + ?Sized>(
    model: &F,
    stats: &NormStats,
    static_input: &[T],
    analysis: &GridArchive,
    schedule: &[usize],
    max_lead: usize,
) -> Result<Vec<Trajectory>, RolloutError> {
    let n_days = analysis.n_time();
    if let Some(&day) = schedule.iter().find(|&&d| d >= n_days) {
        return Err(RolloutError::InitOutOfRange { day, n_days });
    }
    schedule
        .par_iter()
        .map(|&day| {
            let mut t = autoregress(model, stats, day, analysis.frame(day), static_input, max_lead)?;
            t.verified_leads = verified_leads(day, max_lead, n_days);
            if let Some(flag) = t.flag() {
                log::warn!("init day {day}: {flag}");
            }
            Ok(t)
        })
        .collect()
}

/// Forecasts that tomorrow equals today, for every lead.
pub fn persistence(analysis: &GridArchive, schedule: &[usize], max_lead: usize) -> Result<Vec<Trajectory>, RolloutError> {
    let n_days = analysis.n_time();
    schedule
        .iter()
        .map(|&day| {
            if day >= n_days {
                return Err(RolloutError::InitOutOfRange { day, n_days });
            }
            Ok(Trajectory {
                init_day: day,
                lead_fields: vec![analysis.frame(day).to_vec(); max_lead],
                verified_leads: verified_leads(day, max_lead, n_days),
            })
        })
        .collect()
}

pub fn trajectory_file_name(year: i32, day_of_year: usize) -> String {
    format!("fc_{year}_{:03}.grd", day_of_year + 1)
}

/// Writes a trajectory as a daily GRD1 file whose time axis is the lead
/// days (`start` = init time + 24 h). Returns the path written.
pub fn write_trajectory(
    traj: &Trajectory,
    analysis: &GridArchive,
    axis: &DayAxis,
    dir: &Path,
) -> Result<PathBuf, RolloutError> {
    let (year, doy) = axis.date_of(traj.init_day);
    let values: Vec<f32> = traj.lead_fields.concat();
    let archive = GridArchive::new(
        analysis.spec().clone(),
        analysis.catalog().clone(),
        analysis.start_epoch_hours() + 24 * (traj.init_day as i64 + 1),
        24,
        values,
    )?;
    let path = dir.join(trajectory_file_name(year, doy));
    write_archive(&archive, &path)?;
    Ok(path)
}

/// Inverse of [`write_trajectory`] against the same analysis.
pub fn trajectory_from_archive(archive: &GridArchive, analysis: &GridArchive) -> Result<Trajectory, RolloutError> {
    let offset = archive.start_epoch_hours() - analysis.start_epoch_hours();
    if offset < 24 || offset % 24 != 0 || archive.frame_len() != analysis.frame_len() {
        return Err(RolloutError::Grid(GridError::Metadata(
            "trajectory does not align with the analysis".into(),
        )));
    }
    let init_day = (offset / 24 - 1) as usize;
    let max_lead = archive.n_time();
    Ok(Trajectory {
        init_day,
        lead_fields: (0..max_lead).map(|t| archive.frame(t).to_vec()).collect(),
        verified_leads: verified_leads(init_day, max_lead, analysis.n_time()),
    })
}
