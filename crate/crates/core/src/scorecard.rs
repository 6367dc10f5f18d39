//! Forecast verification: latitude-weighted RMSE and anomaly correlation,
//! day-of-year climatology, score tables and run comparison.
//!
//! Conventions:
//! - latitude weights `w(j) = cos(phi_j) / mean_j cos(phi_j)`;
//! - `rmse = sqrt(mean w (f - o)^2)` per case, aggregated over cases as the
//!   root of the mean squared case error;
//! - `acc = sum w f'o' / sqrt(sum w f'^2 * sum w o'^2)` with anomalies taken
//!   against an unsmoothed day-of-year climatology, averaged over cases.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::calendar::DayAxis;
use crate::gridstore::{GridArchive, GridSpec};
use crate::rollout::Trajectory;
use crate::Scalar;

/// Label attached to every published number shipped with the crate.
pub const REFERENCE_LABEL: &str = "published reference, not reproduced";

const REFERENCE_CSV: &str = include_str!("../data/published_reference.csv");

/// Day-of-year slots; slot 365 is the leap day.
pub const DOY_SLOTS: usize = 366;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("shape mismatch: expected {expected} values, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("anomaly field has zero weighted norm")]
    ZeroAnomalyNorm,
    #[error("degenerate latitude weights: cosine sum is zero")]
    DegenerateWeights,
    #[error("empty year range {first}..={last}")]
    EmptyRange { first: i32, last: i32 },
    #[error("shard covers {have} days, climatology needs {need}")]
    Coverage { have: usize, need: usize },
    #[error("no overlapping (variable, lead) keys")]
    NoOverlap,
    #[error("no verifiable cases")]
    NoCases,
    #[error("parse error: {0}")]
    Parse(String),
}

/// Normalized cosine weights for arbitrary latitudes in degrees.
pub fn cos_weights(lat_deg: &[f64]) -> Result<Vec<f64>, ScoreError> {
    let cos: Vec<f64> = lat_deg
        .iter()
        .map(|p| {
            let c = p.to_radians().cos();
            if c < 1e-12 {
                0.0
            } else {
                c
            }
        })
        .collect();
    let mean = cos.iter().sum::<f64>() / cos.len().max(1) as f64;
    if mean <= 0.0 {
        return Err(ScoreError::DegenerateWeights);
    }
    Ok(cos.into_iter().map(|c| c / mean).collect())
}

/// Per-row weights of `spec`, mean 1.
pub fn lat_weights(spec: &GridSpec) -> Result<Vec<f64>, ScoreError> {
    cos_weights(spec.lat_deg())
}

fn check_field(len: usize, weights: &[f64], n_lon: usize) -> Result<(), ScoreError> {
    let expected = weights.len() * n_lon;
    if len != expected {
        return Err(ScoreError::Shape { expected, found: len });
    }
    Ok(())
}

/// Weighted RMSE of one `[lat][lon]` field.
pub fn rmse<T: Scalar>(forecast: &[T], verification: &[T], weights: &[f64], n_lon: usize) -> Result<f64, ScoreError> {
    check_field(forecast.len(), weights, n_lon)?;
    check_field(verification.len(), weights, n_lon)?;
    let mut acc = 0.0;
    for (j, w) in weights.iter().enumerate() {
        let row = j * n_lon..(j + 1) * n_lon;
        let s: f64 = forecast[row.clone()]
            .iter()
            .zip(&verification[row])
            .map(|(f, o)| (f.as_f64() - o.as_f64()).powi(2))
            .sum();
        acc += w * s;
    }
    Ok((acc / forecast.len() as f64).sqrt())
}

/// Root of the mean of squared per-case errors.
pub fn aggregate_rmse(case_rmse: &[f64]) -> f64 {
    if case_rmse.is_empty() {
        return 0.0;
    }
    (case_rmse.iter().map(|e| e * e).sum::<f64>() / case_rmse.len() as f64).sqrt()
}

/// Weighted anomaly correlation of one field against `climatology`.
pub fn acc<T: Scalar>(
    forecast: &[T],
    verification: &[T],
    climatology: &[T],
    weights: &[f64],
    n_lon: usize,
) -> Result<f64, ScoreError> {
    for f in [forecast, verification, climatology] {
        check_field(f.len(), weights, n_lon)?;
    }
    let (mut fo, mut ff, mut oo) = (0.0, 0.0, 0.0);
    for (j, w) in weights.iter().enumerate() {
        for i in j * n_lon..(j + 1) * n_lon {
            let c = climatology[i].as_f64();
            let fa = forecast[i].as_f64() - c;
            let oa = verification[i].as_f64() - c;
            fo += w * fa * oa;
            ff += w * fa * fa;
            oo += w * oa * oa;
        }
    }
    if ff == 0.0 || oo == 0.0 {
        return Err(ScoreError::ZeroAnomalyNorm);
    }
    Ok((fo / (ff * oo).sqrt()).clamp(-1.0, 1.0))
}

/// Mean state per day-of-year slot over a range of training years,
/// `[slot][var][lat][lon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Climatology {
    pub first_year: i32,
    pub last_year: i32,
    frame_len: usize,
    n_points: usize,
    values: Vec<f32>,
}

impl Climatology {
    pub fn frame(&self, slot: usize) -> &[f32] {
        &self.values[slot * self.frame_len..(slot + 1) * self.frame_len]
    }

    pub fn field(&self, slot: usize, var: usize) -> &[f32] {
        let f = self.frame(slot);
        &f[var * self.n_points..(var + 1) * self.n_points]
    }

    /// Climatology frame for a day index on `axis`.
    pub fn for_day(&self, day: usize, axis: &DayAxis) -> &[f32] {
        self.frame(axis.date_of(day).1)
    }
}

/// Per-slot mean over `first..=last` of a daily shard whose time index is
/// the day index on `axis`. Slots no training year reaches (the leap day in
/// an all-common-year range) copy the preceding slot.
pub fn build_climatology(
    shard: &GridArchive,
    axis: &DayAxis,
    first_year: i32,
    last_year: i32,
) -> Result<Climatology, ScoreError> {
    if first_year > last_year || first_year < axis.first_year {
        return Err(ScoreError::EmptyRange {
            first: first_year,
            last: last_year,
        });
    }
    let span = axis.year_span(first_year, last_year);
    if span.end > shard.n_time() {
        return Err(ScoreError::Coverage {
            have: shard.n_time(),
            need: span.end,
        });
    }
    let frame_len = shard.frame_len();
    let mut sums = vec![0.0f64; DOY_SLOTS * frame_len];
    let mut counts = [0usize; DOY_SLOTS];
    for day in span {
        let slot = axis.date_of(day).1;
        counts[slot] += 1;
        for (s, &v) in sums[slot * frame_len..(slot + 1) * frame_len].iter_mut().zip(shard.frame(day)) {
            *s += v as f64;
        }
    }
    let mut values = vec![0.0f32; DOY_SLOTS * frame_len];
    for slot in 0..DOY_SLOTS {
        let dst = slot * frame_len..(slot + 1) * frame_len;
        if counts[slot] == 0 {
            let (head, tail) = values.split_at_mut(slot * frame_len);
            tail[..frame_len].copy_from_slice(&head[(slot - 1) * frame_len..]);
            continue;
        }
        let n = counts[slot] as f64;
        for (v, s) in values[dst.clone()].iter_mut().zip(&sums[dst]) {
            *v = (s / n) as f32;
        }
    }
    Ok(Climatology {
        first_year,
        last_year,
        frame_len,
        n_points: shard.spec().n_points(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub variable: String,
    pub lead_day: usize,
    pub rmse: f64,
    /// Absent when no climatology was supplied.
    pub acc: Option<f64>,
    pub n_cases: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub run: String,
    pub rows: Vec<ScoreRow>,
}

pub const SCORES_HEADER: &str = "run,variable,lead_day,rmse,acc,n_cases";

impl ScoreTable {
    pub fn get(&self, variable: &str, lead_day: usize) -> Option<&ScoreRow> {
        self.rows.iter().find(|r| r.variable == variable && r.lead_day == lead_day)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{SCORES_HEADER}\n");
        for r in &self.rows {
            let acc = r.acc.map(|a| format!("{a:.6}")).unwrap_or_default();
            writeln!(out, "{},{},{},{:.6},{},{}", self.run, r.variable, r.lead_day, r.rmse, acc, r.n_cases).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, ScoreError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == SCORES_HEADER => {}
            other => return Err(ScoreError::Parse(format!("bad header {other:?}"))),
        }
        let mut run = None;
        let mut rows = Vec::new();
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(ScoreError::Parse(format!("expected 6 fields: {line:?}")));
            }
            let bad = |what: &str| ScoreError::Parse(format!("bad {what} in {line:?}"));
            run.get_or_insert_with(|| f[0].to_string());
            rows.push(ScoreRow {
                variable: f[1].to_string(),
                lead_day: f[2].parse().map_err(|_| bad("lead_day"))?,
                rmse: f[3].parse().map_err(|_| bad("rmse"))?,
                acc: if f[4].is_empty() {
                    None
                } else {
                    Some(f[4].parse().map_err(|_| bad("acc"))?)
                },
                n_cases: f[5].parse().map_err(|_| bad("n_cases"))?,
            });
        }
        Ok(Self {
            run: run.unwrap_or_default(),
            rows,
        })
    }

    /// Gnuplot-friendly series: one block per variable, columns
    /// `lead_day rmse acc`.
    pub fn to_dat(&self) -> String {
        let mut by_var: BTreeMap<&str, Vec<&ScoreRow>> = BTreeMap::new();
        for r in &self.rows {
            by_var.entry(&r.variable).or_default().push(r);
        }
        let mut out = format!("# run {}\n", self.run);
        for (var, rows) in by_var {
            writeln!(out, "# {var}\n# lead_day rmse acc").unwrap();
            for r in rows {
                let acc = r.acc.map_or("nan".to_string(), |a| format!("{a:.6}"));
                writeln!(out, "{} {:.6} {}", r.lead_day, r.rmse, acc).unwrap();
            }
            out.push_str("\n\n");
        }
        out
    }
}

/// Verification inputs shared by every scored run.
pub struct Verifier<'a> {
    /// Daily lag0 analysis; time index is the day index on `axis`.
    pub analysis: &'a GridArchive,
    pub axis: DayAxis,
    pub climatology: Option<&'a Climatology>,
    pub weights: Vec<f64>,
}

impl<'a> Verifier<'a> {
    pub fn new(analysis: &'a GridArchive, axis: DayAxis, climatology: Option<&'a Climatology>) -> Result<Self, ScoreError> {
        Ok(Self {
            analysis,
            axis,
            climatology,
            weights: lat_weights(analysis.spec())?,
        })
    }

    /// Scores every `(variable, lead)` over the trajectories whose
    /// verification reaches that lead. Variables are those of the analysis
    /// catalog; the trajectory frames must use the same order.
    pub fn score(&self, run: &str, trajectories: &[Trajectory]) -> Result<ScoreTable, ScoreError> {
        let max_lead = trajectories.iter().map(|t| t.max_lead()).max().unwrap_or(0);
        let n_var = self.analysis.n_var();
        let np = self.analysis.spec().n_points();
        let n_lon = self.analysis.spec().n_lon();
        for t in trajectories {
            for f in &t.lead_fields {
                if f.len() != n_var * np {
                    return Err(ScoreError::Shape {
                        expected: n_var * np,
                        found: f.len(),
                    });
                }
            }
        }
        let keys: Vec<(usize, usize)> = (0..n_var).flat_map(|v| (1..=max_lead).map(move |k| (v, k))).collect();
        let rows = keys
            .par_iter()
            .map(|&(v, lead)| -> Result<Option<ScoreRow>, ScoreError> {
                let mut errs = Vec::new();
                let mut accs = Vec::new();
                for t in trajectories.iter().filter(|t| t.verified_leads >= lead) {
                    let day = t.init_day + lead;
                    let fc = &t.lead_fields[lead - 1][v * np..(v + 1) * np];
                    let ob = self.analysis.field(day, v);
                    errs.push(rmse(fc, ob, &self.weights, n_lon)?);
                    if let Some(clim) = self.climatology {
                        let c = &clim.for_day(day, &self.axis)[v * np..(v + 1) * np];
                        match acc(fc, ob, c, &self.weights, n_lon) {
                            Ok(a) => accs.push(a),
                            Err(ScoreError::ZeroAnomalyNorm) => {
                                log::warn!("acc undefined for init day {} lead {lead}", t.init_day)
                            }
                            Err(e) => return Err(e),
                        }
                    }
                }
                if errs.is_empty() {
                    return Ok(None);
                }
                Ok(Some(ScoreRow {
                    variable: self.analysis.catalog().entries()[v].key(),
                    lead_day: lead,
                    rmse: aggregate_rmse(&errs),
                    acc: (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64),
                    n_cases: errs.len(),
                }))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let rows: Vec<ScoreRow> = rows.into_iter().flatten().collect();
        if rows.is_empty() {
            return Err(ScoreError::NoCases);
        }
        Ok(ScoreTable {
            run: run.to_string(),
            rows,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub source: String,
    pub variable: String,
    pub lead_day: usize,
    pub metric: &'static str,
    pub a: f64,
    pub b: f64,
}

impl CompareRow {
    pub fn delta(&self) -> f64 {
        self.b - self.a
    }

    /// `100 (b - a) / a`; zero when both are zero.
    pub fn pct_change(&self) -> f64 {
        if self.a == 0.0 {
            if self.b == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            100.0 * (self.b - self.a) / self.a
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub run_a: String,
    pub run_b: String,
    pub rows: Vec<CompareRow>,
}

pub const COMPARE_HEADER: &str = "source,variable,lead_day,metric,value_a,value_b,delta,pct_change";

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{COMPARE_HEADER}\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{:.6},{:.3}",
                r.source,
                r.variable,
                r.lead_day,
                r.metric,
                r.a,
                r.b,
                r.delta(),
                r.pct_change()
            )
            .unwrap();
        }
        out
    }

    /// Appends the published pairwise comparisons (lag0 vs lag4x,
    /// early vs recent training decade, full-resolution FourCastNet vs lag4x).
    pub fn with_reference(mut self) -> Self {
        self.rows.extend(reference_pairs());
        self
    }
}

/// Per-key differences `b - a` over the `(variable, lead)` keys both runs share.
pub fn compare(a: &ScoreTable, b: &ScoreTable) -> Result<Comparison, ScoreError> {
    let source = format!("{} vs {}", a.run, b.run);
    let mut rows = Vec::new();
    for ra in &a.rows {
        let Some(rb) = b.get(&ra.variable, ra.lead_day) else {
            continue;
        };
        rows.push(CompareRow {
            source: source.clone(),
            variable: ra.variable.clone(),
            lead_day: ra.lead_day,
            metric: "rmse",
            a: ra.rmse,
            b: rb.rmse,
        });
        if let (Some(x), Some(y)) = (ra.acc, rb.acc) {
            rows.push(CompareRow {
                source: source.clone(),
                variable: ra.variable.clone(),
                lead_day: ra.lead_day,
                metric: "acc",
                a: x,
                b: y,
            });
        }
    }
    if rows.is_empty() {
        return Err(ScoreError::NoOverlap);
    }
    Ok(Comparison {
        run_a: a.run.clone(),
        run_b: b.run.clone(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRow {
    pub table: String,
    pub model: String,
    pub variable: String,
    pub lead_day: usize,
    pub rmse: f64,
    pub acc: Option<f64>,
}

/// Published scores shipped as static context.
pub fn reference_rows() -> Vec<ReferenceRow> {
    let mut rows = Vec::new();
    for line in REFERENCE_CSV.lines().skip_while(|l| l.starts_with('#')).skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        rows.push(ReferenceRow {
            table: f[0].to_string(),
            model: f[1].to_string(),
            variable: f[2].to_string(),
            lead_day: f[3].parse().expect("reference lead"),
            rmse: f[4].parse().expect("reference rmse"),
            acc: (!f[5].is_empty()).then(|| f[5].parse().expect("reference acc")),
        });
    }
    rows
}

pub fn reference_lookup(table: &str, model: &str, variable: &str, lead_day: usize) -> Option<ReferenceRow> {
    reference_rows()
        .into_iter()
        .find(|r| r.table == table && r.model == model && r.variable == variable && r.lead_day == lead_day)
}

fn reference_pairs() -> Vec<CompareRow> {
    let all = reference_rows();
    let find = |t: &str, m: &str, v: &str, l: usize| {
        all.iter()
            .find(|r| r.table == t && r.model == m && r.variable == v && r.lead_day == l)
            .cloned()
    };
    let mut rows = Vec::new();
    let pairs = [
        ("lag", "lag0", "lag4x"),
        ("decade", "1980-1989", "2006-2015"),
        ("comparison", "FCN(0.25)", "FCN_lag4x"),
    ];
    for (table, ma, mb) in pairs {
        for var in ["t2m", "z500"] {
            for lead in 1..=7 {
                let (Some(a), Some(b)) = (find(table, ma, var, lead), find(table, mb, var, lead)) else {
                    continue;
                };
                let source = format!("{REFERENCE_LABEL}: {table} {ma} vs {mb}");
                rows.push(CompareRow {
                    source: source.clone(),
                    variable: var.into(),
                    lead_day: lead,
                    metric: "rmse",
                    a: a.rmse,
                    b: b.rmse,
                });
                if let (Some(x), Some(y)) = (a.acc, b.acc) {
                    rows.push(CompareRow {
                        source,
                        variable: var.into(),
                        lead_day: lead,
                        metric: "acc",
                        a: x,
                        b: y,
                    });
                }
            }
        }
    }
    rows
}

/// Human-readable rendering of the published tables.
pub fn render_reference() -> String {
    let mut out = format!("# {REFERENCE_LABEL}\n");
    let rows = reference_rows();
    let mut seen: Vec<(String, String)> = Vec::new();
    for r in &rows {
        let key = (r.table.clone(), r.variable.clone());
        if !seen.contains(&key) {
            seen.push(key);
        }
    }
    for (table, var) in seen {
        writeln!(out, "[{table} {var}]").unwrap();
        let mut models: Vec<&str> = Vec::new();
        for r in rows.iter().filter(|r| r.table == table && r.variable == var) {
            if !models.contains(&r.model.as_str()) {
                models.push(&r.model);
            }
        }
        for m in models {
            let mut line = format!("  {m:<14}");
            for r in rows.iter().filter(|r| r.table == table && r.variable == var && r.model == m) {
                write!(line, " day{} {}", r.lead_day, r.rmse).unwrap();
                if let Some(a) = r.acc {
                    write!(line, " (acc {a})").unwrap();
                }
            }
            writeln!(out, "{line}").unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::CalendarKind;
    use crate::gridstore::{Variable, VariableCatalog};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_field(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect()
    }

    #[test]
    fn weight_examples() {
        assert_eq!(cos_weights(&[0.0, 0.0, 0.0]).unwrap(), vec![1.0; 3]);
        let w = cos_weights(&[60.0, -60.0]).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-15 && (w[1] - 1.0).abs() < 1e-15);
        assert!(matches!(cos_weights(&[90.0, -90.0]), Err(ScoreError::DegenerateWeights)));

        let spec = GridSpec::era5_2p5deg();
        let w = lat_weights(&spec).unwrap();
        let mut cos = Vec::new();
        for j in 0..72 {
            let phi = (90.0 - 1.25 - 2.5 * j as f64) * std::f64::consts::PI / 180.0;
            cos.push(phi.cos());
        }
        let mean: f64 = cos.iter().sum::<f64>() / 72.0;
        for (a, c) in w.iter().zip(&cos) {
            assert!((a - c / mean).abs() <= 1e-12 * (c / mean));
        }
        assert!((w.iter().sum::<f64>() / 72.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rmse_examples_and_brute_force() {
        let lat = [45.0, 15.0, -15.0, -45.0];
        let w = cos_weights(&lat).unwrap();
        let f = vec![1.5f64; 12];
        assert_eq!(rmse(&f, &f, &w, 3).unwrap(), 0.0);
        let o: Vec<f64> = f.iter().map(|v| v - 0.7).collect();
        assert!((rmse(&f, &o, &w, 3).unwrap() - 0.7).abs() < 1e-12);
        assert!(matches!(rmse(&f, &o[..11], &w, 3), Err(ScoreError::Shape { .. })));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = rand_field(12, &mut rng);
        let o = rand_field(12, &mut rng);
        let mut s = 0.0;
        for j in 0..4 {
            for k in 0..3 {
                s += w[j] * (f[j * 3 + k] - o[j * 3 + k]).powi(2);
            }
        }
        let want = (s / 12.0).sqrt();
        assert!((rmse(&f, &o, &w, 3).unwrap() - want).abs() <= 1e-6 * want);
    }

    #[test]
    fn acc_examples() {
        let w = cos_weights(&[30.0, 0.0, -30.0]).unwrap();
        let c = vec![1.0f64; 6];
        let f = vec![1.0, 2.0, 0.5, 3.0, -1.0, 1.5];
        assert!((acc(&f, &f, &c, &w, 2).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = f.iter().map(|v| 2.0 - v).collect();
        assert!((acc(&f, &neg, &c, &w, 2).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(acc(&c, &f, &c, &w, 2), Err(ScoreError::ZeroAnomalyNorm)));
    }

    #[test]
    fn aggregation_of_identical_cases() {
        assert!((aggregate_rmse(&[0.8; 17]) - 0.8).abs() < 1e-15);
        assert!((aggregate_rmse(&[3.0, 4.0]) - (12.5f64).sqrt()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn rmse_symmetry_and_offset(seed in 0u64..1000, c in -5.0f64..5.0) {
            let w = cos_weights(&[50.0, 10.0, -20.0]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = rand_field(12, &mut rng);
            let o = rand_field(12, &mut rng);
            let a = rmse(&f, &o, &w, 4).unwrap();
            prop_assert!((a - rmse(&o, &f, &w, 4).unwrap()).abs() <= 1e-12 * a.max(1.0));
            let fc: Vec<f64> = f.iter().map(|v| v + c).collect();
            let oc: Vec<f64> = o.iter().map(|v| v + c).collect();
            prop_assert!((a - rmse(&fc, &oc, &w, 4).unwrap()).abs() <= 1e-9 * a.max(1.0));
        }

        #[test]
        fn acc_bounded_and_scale_invariant(seed in 0u64..1000, alpha in 0.01f64..100.0) {
            let w = cos_weights(&[50.0, 10.0, -20.0]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = rand_field(12, &mut rng);
            let o = rand_field(12, &mut rng);
            let c = rand_field(12, &mut rng);
            let a = acc(&f, &o, &c, &w, 4).unwrap();
            prop_assert!((-1.0..=1.0).contains(&a));
            let fs: Vec<f64> = f.iter().zip(&c).map(|(f, c)| c + alpha * (f - c)).collect();
            let os: Vec<f64> = o.iter().zip(&c).map(|(o, c)| c + alpha * (o - c)).collect();
            prop_assert!((a - acc(&fs, &os, &c, &w, 4).unwrap()).abs() <= 1e-10);
        }
    }

    fn daily_shard(days: usize, values: impl Fn(usize, usize) -> f32) -> GridArchive {
        let spec = GridSpec::global(2, 3).unwrap();
        let cat = VariableCatalog::new(vec![Variable::new("a", None, "1"), Variable::new("b", None, "1")]).unwrap();
        let v = (0..days * 12).map(|i| values(i / 12, i % 12)).collect();
        GridArchive::new(spec, cat, 0, 24, v).unwrap()
    }

    #[test]
    fn climatology_examples() {
        let axis = DayAxis::new(2001, CalendarKind::Gregorian);
        let one = daily_shard(365, |d, i| (d * 100 + i) as f32);
        let clim = build_climatology(&one, &axis, 2001, 2001).unwrap();
        for d in 0..365 {
            assert_eq!(clim.frame(d), one.frame(d));
        }
        assert_eq!(clim.frame(365), clim.frame(364));

        let two = daily_shard(730, |d, i| if d < 365 { 1.0 + i as f32 } else { 3.0 });
        let clim = build_climatology(&two, &axis, 2001, 2002).unwrap();
        for d in 0..365 {
            for i in 0..12 {
                assert_eq!(clim.frame(d)[i], (1.0 + i as f32 + 3.0) / 2.0);
            }
        }
        assert!(matches!(build_climatology(&two, &axis, 2002, 2001), Err(ScoreError::EmptyRange { .. })));
        assert!(matches!(build_climatology(&two, &axis, 2001, 2003), Err(ScoreError::Coverage { .. })));
    }

    #[test]
    fn climatology_matches_brute_force_with_leap_years() {
        let axis = DayAxis::new(2003, CalendarKind::Gregorian);
        let n_days = axis.year_start(2007);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vals: Vec<f32> = (0..n_days * 12).map(|_| rng.random::<f32>()).collect();
        let shard = daily_shard(n_days, |d, i| vals[d * 12 + i]);
        let clim = build_climatology(&shard, &axis, 2003, 2006).unwrap();
        for slot in [0usize, 58, 59, 200, 364, 365] {
            let mut sum = [0.0f64; 12];
            let mut n = 0;
            for year in 2003..=2006 {
                let len = if year == 2004 { 366 } else { 365 };
                if slot < len {
                    n += 1;
                    let day = axis.year_start(year) + slot;
                    for i in 0..12 {
                        sum[i] += vals[day * 12 + i] as f64;
                    }
                }
            }
            for i in 0..12 {
                let want = (sum[i] / n as f64) as f32;
                assert!((clim.frame(slot)[i] - want).abs() <= 1e-6 * want.abs().max(1.0));
            }
        }
    }

    fn table(run: &str, rmse: &[f64]) -> ScoreTable {
        ScoreTable {
            run: run.into(),
            rows: rmse
                .iter()
                .enumerate()
                .map(|(i, &e)| ScoreRow {
                    variable: "z500".into(),
                    lead_day: i + 1,
                    rmse: e,
                    acc: Some(0.9),
                    n_cases: 3,
                })
                .collect(),
        }
    }

    #[test]
    fn compare_self_is_zero_and_csv_roundtrips() {
        let t = table("a", &[1.0, 2.5, 4.0]);
        let c = compare(&t, &t).unwrap();
        assert!(c.rows.iter().all(|r| r.delta() == 0.0 && r.pct_change() == 0.0));
        assert_eq!(ScoreTable::from_csv(&t.to_csv()).unwrap(), t);
        let other = ScoreTable {
            run: "b".into(),
            rows: vec![],
        };
        assert!(matches!(compare(&t, &other), Err(ScoreError::NoOverlap)));
    }

    #[test]
    fn reference_rows_match_published_values() {
        let t2m = reference_lookup("comparison", "FCN_lag4x", "t2m", 1).unwrap();
        assert_eq!(t2m.rmse, 0.48);
        let z7 = reference_lookup("comparison", "FCN_lag4x", "z500", 7).unwrap();
        assert_eq!(z7.rmse, 465.39);
        let recent = reference_lookup("decade", "2006-2015", "z500", 1).unwrap();
        let early = reference_lookup("decade", "1980-1989", "z500", 1).unwrap();
        assert_eq!((recent.rmse, early.rmse), (60.67, 80.92));
        let reduction = (early.rmse - recent.rmse) / early.rmse;
        assert_eq!((reduction * 100.0).round(), 25.0);
        assert_eq!(reference_rows().len(), 58);

        let c = compare(&table("x", &[1.0]), &table("x", &[1.0])).unwrap().with_reference();
        let row = c
            .rows
            .iter()
            .find(|r| r.source.contains("decade") && r.variable == "z500" && r.lead_day == 1)
            .unwrap();
        assert!(row.source.starts_with(REFERENCE_LABEL));
        assert_eq!((row.a, row.b), (80.92, 60.67));
        assert_eq!(row.pct_change().round(), -25.0);
        assert!(render_reference().contains("465.39"));
    }
}
