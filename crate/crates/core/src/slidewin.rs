//! Time-sliding daily means.
//!
//! The lag-`L` sample of day `d` is the mean of the 24 hourly snapshots
//! starting at hour `24 d + L` of the archive. Lag 0 is the ordinary
//! 00–23 daily mean; positive lags straddle the day boundary. Each lag forms
//! its own daily series and training pairs never mix lags.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::info;
use rayon::prelude::*;
use thiserror::Error;

use crate::gridstore::{DailySample, GridArchive, GridError};

pub const ALLOWED_LAGS: [u32; 4] = [0, 6, 12, 18];
const WINDOW: usize = 24;

#[derive(Debug, Error)]
pub enum WindowError {
    #[error("window for day {day}, lag {lag_hours}h needs hours {first}..={last}, archive has {n_time}")]
    WindowOutOfBounds {
        day: usize,
        lag_hours: u32,
        first: usize,
        last: usize,
        n_time: usize,
    },
    #[error("lag {0}h is not one of 0, 6, 12, 18")]
    BadLag(u32),
    #[error("invalid lag set: {0}")]
    BadLagSet(String),
    #[error("archive must be hourly (step_hours = 1), got {0}")]
    NotHourly(u32),
    #[error("forecast step must be at least one day")]
    ZeroStep,
    #[error("bad pair manifest: {0}")]
    BadManifest(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Non-empty ascending subset of {0, 6, 12, 18}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LagSet(Vec<u32>);

impl LagSet {
    pub fn new(lags: Vec<u32>) -> Result<Self, WindowError> {
        if lags.is_empty() {
            return Err(WindowError::BadLagSet("empty".into()));
        }
        if let Some(&bad) = lags.iter().find(|l| !ALLOWED_LAGS.contains(l)) {
            return Err(WindowError::BadLag(bad));
        }
        if lags.windows(2).any(|w| w[1] <= w[0]) {
            return Err(WindowError::BadLagSet("lags must be strictly ascending".into()));
        }
        Ok(Self(lags))
    }

    /// Lag 0 only.
    pub fn lag0() -> Self {
        Self(vec![0])
    }

    /// All four lags.
    pub fn lag4x() -> Self {
        Self(ALLOWED_LAGS.to_vec())
    }

    pub fn lags(&self) -> &[u32] {
        &self.0
    }
}

impl FromStr for LagSet {
    type Err = WindowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lags = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<u32>()
                    .map_err(|_| WindowError::BadLagSet(format!("cannot parse {t:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(lags)
    }
}

impl fmt::Display for LagSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u32::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// Number of days whose lag-`lag_hours` window fits inside `n_time` hours.
pub fn days_with_window(n_time: usize, lag_hours: u32) -> usize {
    let need = WINDOW + lag_hours as usize;
    if n_time < need {
        0
    } else {
        (n_time - need) / WINDOW + 1
    }
}

/// Per-cell mean of the 24 snapshots starting at hour `24 day + lag`,
/// accumulated in f64.
pub fn sliding_daily_mean(
    archive: &GridArchive,
    day_index: usize,
    lag_hours: u32,
) -> Result<DailySample, WindowError> {
    if !ALLOWED_LAGS.contains(&lag_hours) {
        return Err(WindowError::BadLag(lag_hours));
    }
    if archive.step_hours() != 1 {
        return Err(WindowError::NotHourly(archive.step_hours()));
    }
    let first = WINDOW * day_index + lag_hours as usize;
    let last = first + WINDOW - 1;
    if last >= archive.n_time() {
        return Err(WindowError::WindowOutOfBounds {
            day: day_index,
            lag_hours,
            first,
            last,
            n_time: archive.n_time(),
        });
    }
    let mut acc = vec![0.0f64; archive.frame_len()];
    for t in first..=last {
        for (a, &v) in acc.iter_mut().zip(archive.frame(t)) {
            *a += v as f64;
        }
    }
    let values = acc.into_iter().map(|s| (s / WINDOW as f64) as f32).collect();
    Ok(DailySample {
        day_index,
        lag_hours,
        values,
    })
}

#[derive(Debug, Clone)]
pub struct Augmented {
    /// Sorted by lag, then day.
    pub samples: Vec<DailySample>,
    /// Days per lag whose window ran past the archive end.
    pub skipped: BTreeMap<u32, usize>,
}

impl Augmented {
    pub fn count_for(&self, lag: u32) -> usize {
        self.samples.iter().filter(|s| s.lag_hours == lag).count()
    }

    pub fn days_per_lag(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut map: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for s in &self.samples {
            map.entry(s.lag_hours).or_default().push(s.day_index);
        }
        map
    }
}

/// Lagged daily means for every day with a complete window. The candidate
/// days are those that start inside the archive (`ceil(n_time / 24)`); the
/// ones whose window runs past the end are counted in `skipped`.
pub fn augment(archive: &GridArchive, lags: &LagSet) -> Result<Augmented, WindowError> {
    if archive.step_hours() != 1 {
        return Err(WindowError::NotHourly(archive.step_hours()));
    }
    let n_days = archive.n_time().div_ceil(WINDOW);
    let work: Vec<(u32, usize)> = lags
        .lags()
        .iter()
        .flat_map(|&lag| (0..days_with_window(archive.n_time(), lag)).map(move |d| (lag, d)))
        .collect();
    let samples = work
        .par_iter()
        .map(|&(lag, day)| sliding_daily_mean(archive, day, lag))
        .collect::<Result<Vec<_>, _>>()?;
    let skipped = lags
        .lags()
        .iter()
        .map(|&lag| (lag, n_days - days_with_window(archive.n_time(), lag)))
        .collect::<BTreeMap<_, _>>();
    for (lag, n) in &skipped {
        if *n > 0 {
            info!("lag {lag}h: skipped {n} day(s) without a complete window");
        }
    }
    Ok(Augmented { samples, skipped })
}

/// One training pair within a single lag stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairEntry {
    pub lag_hours: u32,
    pub input_day: usize,
    pub target_day: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairManifest {
    entries: Vec<PairEntry>,
    dt_days: usize,
}

impl PairManifest {
    pub fn new(entries: Vec<PairEntry>, dt_days: usize) -> Result<Self, WindowError> {
        if dt_days == 0 {
            return Err(WindowError::ZeroStep);
        }
        if let Some(e) = entries.iter().find(|e| e.target_day != e.input_day + dt_days) {
            return Err(WindowError::BadManifest(format!(
                "entry {e:?} does not match dt={dt_days}"
            )));
        }
        Ok(Self { entries, dt_days })
    }

    pub fn entries(&self) -> &[PairEntry] {
        &self.entries
    }

    pub fn dt_days(&self) -> usize {
        self.dt_days
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keeps pairs whose input and target days both lie in `days`.
    pub fn restrict(&self, days: std::ops::Range<usize>) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .copied()
                .filter(|e| days.contains(&e.input_day) && days.contains(&e.target_day))
                .collect(),
            dt_days: self.dt_days,
        }
    }

    /// Keeps pairs from the given lags.
    pub fn with_lags(&self, lags: &LagSet) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .copied()
                .filter(|e| lags.lags().contains(&e.lag_hours))
                .collect(),
            dt_days: self.dt_days,
        }
    }

    /// Tab-separated text, header `lag_hours\tinput_day\ttarget_day`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("lag_hours\tinput_day\ttarget_day\n");
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", e.lag_hours, e.input_day, e.target_day));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, WindowError> {
        let bad = |line: &str| WindowError::BadManifest(format!("bad line {line:?}"));
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "lag_hours\tinput_day\ttarget_day" => {}
            other => return Err(bad(other.unwrap_or(""))),
        }
        let mut entries = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad(line));
            }
            let lag_hours: u32 = cols[0].parse().map_err(|_| bad(line))?;
            if !ALLOWED_LAGS.contains(&lag_hours) {
                return Err(WindowError::BadLag(lag_hours));
            }
            entries.push(PairEntry {
                lag_hours,
                input_day: cols[1].parse().map_err(|_| bad(line))?,
                target_day: cols[2].parse().map_err(|_| bad(line))?,
            });
        }
        let dt = entries
            .first()
            .map_or(1, |e| e.target_day.saturating_sub(e.input_day));
        Self::new(entries, dt)
    }
}

/// Pairs `(day, day + dt)` within each lag stream wherever both days exist.
pub fn build_pairs(
    sample_days_per_lag: &BTreeMap<u32, Vec<usize>>,
    dt_days: usize,
) -> Result<PairManifest, WindowError> {
    if dt_days == 0 {
        return Err(WindowError::ZeroStep);
    }
    let mut entries = Vec::new();
    for (&lag, days) in sample_days_per_lag {
        let present: std::collections::BTreeSet<usize> = days.iter().copied().collect();
        for &d in &present {
            if present.contains(&(d + dt_days)) {
                entries.push(PairEntry {
                    lag_hours: lag,
                    input_day: d,
                    target_day: d + dt_days,
                });
            }
        }
    }
    PairManifest::new(entries, dt_days)
}

/// Packs the samples of one lag into a daily GRD1 shard (`step_hours = 24`).
/// Time index `i` of the shard holds day `i`.
pub fn daily_shard(
    archive: &GridArchive,
    samples: &[DailySample],
    lag_hours: u32,
) -> Result<GridArchive, WindowError> {
    let mut values = Vec::new();
    for (i, s) in samples.iter().filter(|s| s.lag_hours == lag_hours).enumerate() {
        assert_eq!(s.day_index, i, "daily samples must be contiguous from day 0");
        values.extend_from_slice(&s.values);
    }
    Ok(GridArchive::new(
        archive.spec().clone(),
        archive.catalog().clone(),
        archive.start_epoch_hours() + lag_hours as i64,
        24,
        values,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridstore::{GridSpec, Variable, VariableCatalog};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn archive_from(values: Vec<f32>, n_var: usize) -> GridArchive {
        let spec = GridSpec::global(2, 3).unwrap();
        let cat = VariableCatalog::new(
            (0..n_var).map(|i| Variable::new(&format!("v{i}"), None, "1")).collect(),
        )
        .unwrap();
        GridArchive::new(spec, cat, 0, 1, values).unwrap()
    }

    fn random_archive(n_hours: usize, seed: u64) -> GridArchive {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..n_hours * 2 * 6)
            .map(|_| rng.random_range(-5.0e4f32..5.0e4))
            .collect();
        archive_from(values, 2)
    }

    fn brute_mean(a: &GridArchive, first_hour: usize) -> Vec<f64> {
        (0..a.frame_len())
            .map(|i| (first_hour..first_hour + 24).map(|t| a.frame(t)[i] as f64).sum::<f64>() / 24.0)
            .collect()
    }

    #[test]
    fn constant_archive_gives_constant_means() {
        let a = archive_from(vec![3.5; 72 * 6], 1);
        for lag in ALLOWED_LAGS {
            let s = sliding_daily_mean(&a, 1, lag).unwrap();
            assert!(s.values.iter().all(|&v| v == 3.5));
        }
    }

    #[test]
    fn ramp_mean_is_11_5() {
        let mut values = vec![0.0f32; 48 * 6];
        for t in 0..24 {
            values[t * 6] = t as f32;
        }
        let a = archive_from(values, 1);
        assert_eq!(sliding_daily_mean(&a, 0, 0).unwrap().values[0], 11.5);
    }

    #[test]
    fn lag12_day2_matches_brute_force() {
        let a = random_archive(24 * 5, 1);
        let s = sliding_daily_mean(&a, 2, 12).unwrap();
        for (got, want) in s.values.iter().zip(brute_mean(&a, 60)) {
            assert!(((*got as f64) - want).abs() <= 1e-6 * want.abs().max(1.0));
        }
    }

    #[test]
    fn window_out_of_bounds() {
        let a = random_archive(48, 2);
        assert!(sliding_daily_mean(&a, 1, 0).is_ok());
        assert!(matches!(
            sliding_daily_mean(&a, 1, 6),
            Err(WindowError::WindowOutOfBounds { last: 53, .. })
        ));
        assert!(matches!(sliding_daily_mean(&a, 0, 5), Err(WindowError::BadLag(5))));
    }

    #[test]
    fn augment_counts() {
        let a = random_archive(48, 3);
        let out = augment(&a, &LagSet::lag4x()).unwrap();
        assert_eq!(out.samples.len(), 2 + 1 + 1 + 1);
        assert_eq!(out.skipped[&6], 1);
        let order: Vec<(u32, usize)> = out.samples.iter().map(|s| (s.lag_hours, s.day_index)).collect();
        assert_eq!(order, vec![(0, 0), (0, 1), (6, 0), (12, 0), (18, 0)]);

        let one_day = random_archive(24, 4);
        assert!(augment(&one_day, &LagSet::new(vec![6]).unwrap()).unwrap().samples.is_empty());
    }

    #[test]
    fn pair_examples() {
        let mut days = BTreeMap::new();
        days.insert(0, vec![0, 1, 2]);
        let m = build_pairs(&days, 1).unwrap();
        let pairs: Vec<(usize, usize)> = m.entries().iter().map(|e| (e.input_day, e.target_day)).collect();
        assert_eq!(pairs, vec![(0, 1), (1, 2)]);

        let mut days = BTreeMap::new();
        days.insert(0, vec![0, 1]);
        days.insert(6, vec![0, 1]);
        let m = build_pairs(&days, 1).unwrap();
        assert_eq!(m.len(), 2);
        assert_ne!(m.entries()[0].lag_hours, m.entries()[1].lag_hours);
        assert!(build_pairs(&days, 0).is_err());
    }

    #[test]
    fn manifest_tsv_roundtrip() {
        let mut days = BTreeMap::new();
        days.insert(0, vec![0, 1, 2, 3]);
        days.insert(12, vec![0, 1, 2]);
        let m = build_pairs(&days, 2).unwrap();
        let back = PairManifest::from_tsv(&m.to_tsv()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.restrict(0..3).len(), 2);
        assert_eq!(back.with_lags(&LagSet::lag0()).len(), 2);
    }

    #[test]
    fn lag_set_parsing() {
        assert_eq!("0,6,12,18".parse::<LagSet>().unwrap(), LagSet::lag4x());
        assert!(matches!("5".parse::<LagSet>(), Err(WindowError::BadLag(5))));
        assert!("6,0".parse::<LagSet>().is_err());
        assert!("".parse::<LagSet>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn every_sample_matches_brute_force(seed in any::<u64>(), days in 2usize..5) {
            let a = random_archive(24 * days, seed);
            let out = augment(&a, &LagSet::lag4x()).unwrap();
            for s in &out.samples {
                let want = brute_mean(&a, 24 * s.day_index + s.lag_hours as usize);
                for (g, w) in s.values.iter().zip(want) {
                    prop_assert!(((*g as f64) - w).abs() <= 1e-6 * w.abs().max(1.0));
                }
            }
        }

        #[test]
        fn count_law(days in 1usize..12, extra in 0usize..24) {
            let a = random_archive(24 * days + extra, 9);
            let out = augment(&a, &LagSet::lag4x()).unwrap();
            for lag in ALLOWED_LAGS {
                let n = (0..days + 1).filter(|d| 24 * d + lag as usize + 23 < 24 * days + extra).count();
                prop_assert_eq!(out.count_for(lag), n);
            }
            if extra == 0 {
                prop_assert_eq!(out.samples.len(), 4 * days - 3);
            }
        }

        #[test]
        fn lagged_mean_is_plain_mean_of_shifted_record(seed in any::<u64>(), lag_idx in 1usize..4) {
            let lag = ALLOWED_LAGS[lag_idx];
            let a = random_archive(24 * 4, seed);
            let shifted = a.drop_leading(lag as usize).unwrap();
            for d in 0..3 {
                let lagged = sliding_daily_mean(&a, d, lag).unwrap();
                let plain = sliding_daily_mean(&shifted, d, 0).unwrap();
                prop_assert_eq!(lagged.values, plain.values);
            }
        }
    }
}
