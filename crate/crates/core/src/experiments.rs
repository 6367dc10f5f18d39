//! Desk-scale versions of the lag-augmentation and training-period
//! experiments on synthetic archives.
//!
//! Every run trains for the same number of epochs over its own pair set, so
//! a four-times larger manifest also gets four times the optimizer steps.
//! Skill is summarized as the day-1 RMSE averaged over variables, each
//! divided by the standard deviation of that variable over the test days.

use std::collections::BTreeMap;
use std::ops::Range;

use log::info;
use thiserror::Error;

use crate::afno::{ModelConfig, ModelError, ModelState};
use crate::calendar::{CalendarKind, DayAxis};
use crate::gridstore::GridArchive;
use crate::rollout::{persistence, run_schedule, RolloutError, Trajectory};
use crate::scorecard::{build_climatology, ScoreError, ScoreTable, Verifier};
use crate::slidewin::{augment, build_pairs, daily_shard, LagSet, PairManifest, WindowError};
use crate::synthgen::{generate, orography, SynthConfig, SynthError};
use crate::trainer::{
    compute_norm_stats, static_norm_stats, train, LatWeightedMse, NormStats, TrainConfig, TrainError, TrainOutcome,
    TrainingSet,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Setup(String),
}

/// Generated archive turned into per-lag daily shards and a dt=1 manifest.
pub struct Dataset {
    pub synth: SynthConfig,
    pub axis: DayAxis,
    pub shards: BTreeMap<u32, GridArchive>,
    pub manifest: PairManifest,
    pub static_field: GridArchive,
}

impl Dataset {
    pub fn build(synth: &SynthConfig, lags: &LagSet) -> Result<Self, ExperimentError> {
        let hourly = generate(synth)?;
        let mut all = lags.lags().to_vec();
        if !all.contains(&0) {
            all.insert(0, 0);
        }
        let lags = LagSet::new(all)?;
        let aug = augment(&hourly, &lags)?;
        let manifest = build_pairs(&aug.days_per_lag(), 1)?;
        let shards = lags
            .lags()
            .iter()
            .map(|&l| Ok((l, daily_shard(&hourly, &aug.samples, l)?)))
            .collect::<Result<BTreeMap<_, _>, WindowError>>()?;
        let kind = if synth.leap_years {
            CalendarKind::Gregorian
        } else {
            CalendarKind::NoLeap
        };
        Ok(Self {
            synth: synth.clone(),
            axis: DayAxis::new(synth.start_year, kind),
            shards,
            manifest,
            static_field: orography(synth)?,
        })
    }

    /// The lag0 daily analysis.
    pub fn analysis(&self) -> &GridArchive {
        &self.shards[&0]
    }

    /// Day range of synthetic years `first..=last` counted from 0.
    pub fn years(&self, first: usize, last: usize) -> Range<usize> {
        let y0 = self.synth.start_year;
        self.axis.year_span(y0 + first as i32, y0 + last as i32)
    }

    /// Training pairs of `lags` whose every hour lies inside `days`.
    pub fn train_manifest(&self, lags: &LagSet, days: Range<usize>) -> PairManifest {
        split_manifest(&self.manifest, lags, days)
    }

    fn test_std(&self, days: Range<usize>) -> Result<Vec<f64>, ExperimentError> {
        let a = self.analysis();
        let frames: Vec<&[f32]> = days.map(|d| a.frame(d)).collect();
        Ok(compute_norm_stats(&frames, a.n_var())?.std)
    }
}

/// Pairs of `lags` with both days in `days` whose lagged windows also end
/// before the first hour after `days`.
pub fn split_manifest(manifest: &PairManifest, lags: &LagSet, days: Range<usize>) -> PairManifest {
    let m = manifest.with_lags(lags).restrict(days.clone());
    let end_hour = 24 * days.end;
    let entries = m
        .entries()
        .iter()
        .copied()
        .filter(|e| 24 * (e.target_day + 1) + e.lag_hours as usize <= end_hour)
        .collect();
    PairManifest::new(entries, manifest.dt_days()).expect("subset of a valid manifest")
}

/// Statistics over every distinct `(lag, day)` frame the manifest touches.
pub fn manifest_norm_stats(
    manifest: &PairManifest,
    shards: &BTreeMap<u32, GridArchive>,
) -> Result<NormStats, ExperimentError> {
    let mut keys: Vec<(u32, usize)> = manifest
        .entries()
        .iter()
        .flat_map(|e| [(e.lag_hours, e.input_day), (e.lag_hours, e.target_day)])
        .collect();
    keys.sort_unstable();
    keys.dedup();
    let mut frames = Vec::with_capacity(keys.len());
    let mut n_var = 0;
    for (lag, day) in keys {
        let shard = shards
            .get(&lag)
            .filter(|s| day < s.n_time())
            .ok_or(TrainError::MissingDay { lag, day })?;
        n_var = shard.n_var();
        frames.push(shard.frame(day));
    }
    Ok(compute_norm_stats(&frames, n_var)?)
}

/// Everything a trained run needs at inference time.
pub struct TrainedRun {
    pub state: ModelState<f32>,
    pub stats: NormStats,
    pub static_input: Vec<f32>,
    pub outcome: TrainOutcome<f32>,
    pub n_pairs: usize,
}

#[derive(Debug, Clone)]
pub struct RunPlan {
    pub name: String,
    pub lags: LagSet,
    pub train_days: Range<usize>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Overrides `train.max_steps` with `ceil(epochs * n_pairs / batch_size)`.
    pub epochs: Option<f64>,
}

pub fn train_run(ds: &Dataset, plan: &RunPlan) -> Result<TrainedRun, ExperimentError> {
    let manifest = ds.train_manifest(&plan.lags, plan.train_days.clone());
    if manifest.is_empty() {
        return Err(ExperimentError::Setup(format!("{}: no training pairs", plan.name)));
    }
    let stats = manifest_norm_stats(&manifest, &ds.shards)?;
    let orog = ds.static_field.frame(0);
    let static_input: Vec<f32> = static_norm_stats(orog, 1)?.normalize(orog);
    let set = TrainingSet::<f32>::build(&manifest, &ds.shards, &stats, &static_input)?;
    let mut cfg = plan.train.clone();
    if let Some(e) = plan.epochs {
        cfg.max_steps = ((e * set.len() as f64) / cfg.batch_size as f64).ceil().max(1.0) as usize;
    }
    let spec = ds.analysis().spec();
    let objective = LatWeightedMse::new(&crate::scorecard::lat_weights(spec)?, spec.n_lon());
    let init = ModelState::<f32>::init(&plan.model, cfg.seed)?;
    info!("{}: {} pairs, {} steps", plan.name, set.len(), cfg.max_steps);
    let outcome = train(init, &set, &objective, &cfg, None, |_, _| {})?;
    Ok(TrainedRun {
        state: outcome.state.clone(),
        stats,
        static_input,
        outcome,
        n_pairs: set.len(),
    })
}

/// Init days `days.start, days.start + stride, ...` that leave room for at
/// least one verified lead.
pub fn test_schedule(days: Range<usize>, stride: usize) -> Vec<usize> {
    (days.start..days.end.saturating_sub(1)).step_by(stride.max(1)).collect()
}

fn verifier_scores(
    ds: &Dataset,
    run: &str,
    trajectories: &[Trajectory],
    clim_years: Option<(usize, usize)>,
) -> Result<ScoreTable, ExperimentError> {
    let clim = match clim_years {
        Some((a, b)) => Some(build_climatology(
            ds.analysis(),
            &ds.axis,
            ds.synth.start_year + a as i32,
            ds.synth.start_year + b as i32,
        )?),
        None => None,
    };
    let v = Verifier::new(ds.analysis(), ds.axis, clim.as_ref())?;
    Ok(v.score(run, trajectories)?)
}

pub fn score_run(
    ds: &Dataset,
    run: &TrainedRun,
    name: &str,
    schedule: &[usize],
    max_lead: usize,
    clim_years: Option<(usize, usize)>,
) -> Result<ScoreTable, ExperimentError> {
    let traj = run_schedule(&run.state, &run.stats, &run.static_input, ds.analysis(), schedule, max_lead)?;
    verifier_scores(ds, name, &traj, clim_years)
}

pub fn score_persistence(
    ds: &Dataset,
    schedule: &[usize],
    max_lead: usize,
    clim_years: Option<(usize, usize)>,
) -> Result<ScoreTable, ExperimentError> {
    let traj = persistence(ds.analysis(), schedule, max_lead)?;
    verifier_scores(ds, "persistence", &traj, clim_years)
}

/// Mean over variables of day-1 RMSE divided by the test-day std.
pub fn day1_skill(table: &ScoreTable, test_std: &[f64]) -> f64 {
    let rows: Vec<_> = table.rows.iter().filter(|r| r.lead_day == 1).collect();
    rows.iter().zip(test_std).map(|(r, s)| r.rmse / s).sum::<f64>() / rows.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSettings {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub epochs: f64,
    pub seeds: Vec<u64>,
    pub test_stride: usize,
    pub max_lead: usize,
}

impl ExperimentSettings {
    /// Three years on an 8x16 grid: two to train, one to test.
    pub fn lag4x_desk() -> Self {
        Self::desk(3, 0.0, 5.0)
    }

    /// Seven trending years on an 8x16 grid: two-year early and recent
    /// blocks, six years for the combined run, the last year held out.
    pub fn recency_desk() -> Self {
        Self::desk(7, 0.5, 4.0)
    }

    fn desk(n_years: usize, trend: f64, epochs: f64) -> Self {
        let n_vars = 3;
        let synth = SynthConfig {
            n_lat: 8,
            n_lon: 16,
            n_vars,
            n_years,
            diurnal_amplitude: vec![1.0; n_vars],
            trend_per_year: vec![trend; n_vars],
            ..SynthConfig::default()
        };
        let mut model = ModelConfig::desk(synth.n_lat, synth.n_lon, n_vars, 1);
        model.embed_dim = 16;
        model.n_blocks = 2;
        Self {
            synth,
            model,
            train: TrainConfig::default(),
            epochs,
            seeds: vec![0, 1, 2],
            test_stride: 7,
            max_lead: 7,
        }
    }

    fn for_seed(&self, seed: u64) -> (SynthConfig, TrainConfig) {
        let synth = SynthConfig {
            seed: self.synth.seed.wrapping_add(seed),
            ..self.synth.clone()
        };
        let train = TrainConfig {
            seed,
            ..self.train.clone()
        };
        (synth, train)
    }
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    /// `(run name, day-1 skill)` in run order.
    pub skill: Vec<(String, f64)>,
    pub tables: Vec<ScoreTable>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub runs: Vec<String>,
    pub seeds: Vec<SeedOutcome>,
}

impl ExperimentReport {
    pub fn median_skill(&self, run: &str) -> f64 {
        let v: Vec<f64> = self
            .seeds
            .iter()
            .flat_map(|s| s.skill.iter().filter(|(n, _)| n == run).map(|(_, x)| *x))
            .collect();
        median(&v)
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for s in &self.seeds {
            let cells: Vec<String> = s.skill.iter().map(|(n, x)| format!("{n}={x:.4}")).collect();
            out.push_str(&format!("seed {}: {}\n", s.seed, cells.join(" ")));
        }
        let med: Vec<String> = self.runs.iter().map(|r| format!("{r}={:.4}", self.median_skill(r))).collect();
        out.push_str(&format!("median: {}\n", med.join(" ")));
        out
    }
}

/// lag0 versus lag4x training on the first `n_years - 1` years, scored on
/// the last year together with persistence.
pub fn lag4x_experiment(settings: &ExperimentSettings) -> Result<ExperimentReport, ExperimentError> {
    let n = settings.synth.n_years;
    if n < 2 {
        return Err(ExperimentError::Setup("need at least one training and one test year".into()));
    }
    let runs = vec!["lag0".to_string(), "lag4x".to_string(), "persistence".to_string()];
    let mut seeds = Vec::new();
    for &seed in &settings.seeds {
        let (synth, train) = settings.for_seed(seed);
        let ds = Dataset::build(&synth, &LagSet::lag4x())?;
        let train_days = ds.years(0, n - 2);
        let test_days = ds.years(n - 1, n - 1);
        let schedule = test_schedule(test_days.clone(), settings.test_stride);
        let std = ds.test_std(test_days)?;
        let clim = Some((0, n - 2));
        let mut skill = Vec::new();
        let mut tables = Vec::new();
        for (name, lags) in [("lag0", LagSet::lag0()), ("lag4x", LagSet::lag4x())] {
            let plan = RunPlan {
                name: name.into(),
                lags,
                train_days: train_days.clone(),
                model: settings.model.clone(),
                train: train.clone(),
                epochs: Some(settings.epochs),
            };
            let run = train_run(&ds, &plan)?;
            let table = score_run(&ds, &run, name, &schedule, settings.max_lead, clim)?;
            skill.push((name.to_string(), day1_skill(&table, &std)));
            tables.push(table);
        }
        let p = score_persistence(&ds, &schedule, settings.max_lead, clim)?;
        skill.push(("persistence".into(), day1_skill(&p, &std)));
        tables.push(p);
        info!("seed {seed}: {skill:?}");
        seeds.push(SeedOutcome { seed, skill, tables });
    }
    Ok(ExperimentReport { runs, seeds })
}

/// Training on the earliest `block` years, the latest `block` years before
/// the test year, and all years before the test year; lag4x pairs
/// throughout. The last year is the test year.
pub fn recency_experiment(settings: &ExperimentSettings, block: usize) -> Result<ExperimentReport, ExperimentError> {
    let n = settings.synth.n_years;
    if block == 0 || 2 * block > n - 1 {
        return Err(ExperimentError::Setup(format!(
            "{n} years cannot hold two disjoint {block}-year blocks and a test year"
        )));
    }
    let runs = vec!["early".to_string(), "recent".to_string(), "all".to_string()];
    let mut seeds = Vec::new();
    for &seed in &settings.seeds {
        let (synth, train) = settings.for_seed(seed);
        let ds = Dataset::build(&synth, &LagSet::lag4x())?;
        let test_days = ds.years(n - 1, n - 1);
        let schedule = test_schedule(test_days.clone(), settings.test_stride);
        let std = ds.test_std(test_days)?;
        let mut skill = Vec::new();
        let mut tables = Vec::new();
        let blocks = [
            ("early", 0, block - 1),
            ("recent", n - 1 - block, n - 2),
            ("all", 0, n - 2),
        ];
        for (name, first, last) in blocks {
            let plan = RunPlan {
                name: name.into(),
                lags: LagSet::lag4x(),
                train_days: ds.years(first, last),
                model: settings.model.clone(),
                train: train.clone(),
                epochs: Some(settings.epochs),
            };
            let run = train_run(&ds, &plan)?;
            let table = score_run(&ds, &run, name, &schedule, settings.max_lead, Some((first, last)))?;
            skill.push((name.to_string(), day1_skill(&table, &std)));
            tables.push(table);
        }
        info!("seed {seed}: {skill:?}");
        seeds.push(SeedOutcome { seed, skill, tables });
    }
    Ok(ExperimentReport { runs, seeds })
}
