//! Acceptance suite: every criterion runs in turn and reports one line.
//! The process fails if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use common::{check_groups, direct_spectral_mix, perturbed_state, random_vec, rel_err};
use lagcast_core::afno::{spectral_mix, Activation, Fft2, ModelConfig, ModelState};
use lagcast_core::calendar::{is_leap_year, locate, valid_pair_count, CalendarError, YearRange};
use lagcast_core::experiments::{lag4x_experiment, recency_experiment, ExperimentSettings};
use lagcast_core::gridstore::{GridArchive, GridSpec, Variable, VariableCatalog};
use lagcast_core::rollout::{autoregress, IdentityForecaster, LinearForecaster};
use lagcast_core::scorecard::{acc, rmse, ScoreError};
use lagcast_core::slidewin::{augment, build_pairs, LagSet};
use lagcast_core::synthgen::{generate, SynthConfig};
use lagcast_core::trainer::NormStats;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(elapsed.as_secs() < limit_s, || {
        format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64())
    })
}

fn sliding_window_oracle() -> Result<String, String> {
    let t0 = Instant::now();
    let cfg = SynthConfig {
        n_lat: 4,
        n_lon: 8,
        n_vars: 2,
        n_years: 3,
        diurnal_amplitude: vec![1.5, 0.5],
        trend_per_year: vec![0.3, -0.2],
        noise_std: 1.0,
        seed: 4242,
        ..SynthConfig::default()
    };
    let hourly = generate(&cfg).map_err(|e| e.to_string())?;
    let aug = augment(&hourly, &LagSet::lag4x()).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for s in &aug.samples {
        let start = 24 * s.day_index + s.lag_hours as usize;
        for (i, &got) in s.values.iter().enumerate() {
            let want = (start..start + 24).map(|h| hourly.frame(h)[i] as f64).sum::<f64>() / 24.0;
            let err = (got as f64 - want).abs() / want.abs().max(1e-6);
            worst = worst.max(err);
        }
    }
    ensure(worst <= 1e-6, || format!("worst relative error {worst:.3e}"))?;
    within(t0.elapsed(), 60)?;
    Ok(format!("{} samples, worst rel err {worst:.2e}", aug.samples.len()))
}

fn augmentation_counts() -> Result<String, String> {
    let cfg = SynthConfig {
        n_lat: 2,
        n_lon: 4,
        n_vars: 1,
        n_years: 2,
        diurnal_amplitude: vec![1.0],
        trend_per_year: vec![0.0],
        ..SynthConfig::default()
    };
    let hourly = generate(&cfg).map_err(|e| e.to_string())?;
    let aug = augment(&hourly, &LagSet::lag4x()).map_err(|e| e.to_string())?;
    let pairs = build_pairs(&aug.days_per_lag(), 1).map_err(|e| e.to_string())?;
    ensure(aug.samples.len() == 2917, || format!("{} samples", aug.samples.len()))?;
    ensure(pairs.len() == 2913, || format!("{} pairs", pairs.len()))?;
    let range = YearRange::new(1979, 2015).map_err(|e| e.to_string())?;
    let days = range.total_days();
    let valid = valid_pair_count(range, 1);
    ensure(days == 13514, || format!("{days} days 1979-2015"))?;
    ensure(valid == 13513, || format!("{valid} pairs 1979-2015"))?;
    let lag0: std::collections::BTreeMap<u32, Vec<usize>> = [(0, (0..days).collect())].into();
    let built = build_pairs(&lag0, 1).map_err(|e| e.to_string())?.len();
    ensure(built == 13513, || format!("{built} built pairs 1979-2015"))?;
    Ok("2917/2913 synthetic, 13514/13513 for 1979-2015".into())
}

fn calendar_conformance() -> Result<String, String> {
    for y in 1583..=2400 {
        let brute = NaiveDate::from_ymd_opt(y, 2, 29).is_some();
        ensure(is_leap_year(y) == brute, || format!("is_leap_year({y})"))?;
    }
    let range = YearRange::new(2014, 2018).map_err(|e| e.to_string())?;
    let total = range.total_days();
    let final_start = total - 365;
    for dt in 1..=3 {
        let mut seen = vec![false; total];
        let mut skips = 0;
        for g in 0..total {
            match locate(g, range, dt) {
                Ok(loc) => {
                    let back = range.linearize(loc.year_idx, loc.local_idx);
                    ensure(back == g && !seen[back], || format!("dt {dt}: index {g} not bijective"))?;
                    seen[back] = true;
                }
                Err(CalendarError::SkipLastSample { .. }) => {
                    ensure(g >= final_start && g >= total - dt, || format!("dt {dt}: skip at {g}"))?;
                    skips += 1;
                }
                Err(e) => return Err(format!("dt {dt}: index {g}: {e}")),
            }
        }
        ensure(skips == dt, || format!("dt {dt}: {skips} skips"))?;
    }
    Ok("leap rule 1583-2400, 5-year sweep for dt 1..=3".into())
}

fn gradient_check() -> Result<String, String> {
    let t0 = Instant::now();
    let checks = check_groups(Activation::Relu, 1e-5);
    let worst = checks.iter().map(|c| c.rel_err).fold(0.0, f64::max);
    let skipped: usize = checks.iter().map(|c| c.skipped).sum();
    for c in &checks {
        ensure(c.rel_err <= 1e-4, || format!("{}: rel err {:.3e}", c.name, c.rel_err))?;
    }
    within(t0.elapsed(), 300)?;
    Ok(format!(
        "{} groups, worst rel err {worst:.2e}, {skipped} kink-straddling coordinates excluded",
        checks.len()
    ))
}

fn fourier_correctness() -> Result<String, String> {
    let mut cfg = ModelConfig::tiny();
    cfg.n_lat = 4;
    cfg.n_lon = 4;
    cfg.embed_dim = 8;
    cfg.n_freq_blocks = 2;
    cfg.softshrink_lambda = 0.02;
    let mut worst = 0.0f64;
    for seed in 0..4 {
        let state = perturbed_state(&cfg, seed, 0.5);
        let tokens = random_vec(16 * cfg.embed_dim, 1.0, 50 + seed);
        let fast = spectral_mix(&tokens, &state.blocks[0], &cfg).map_err(|e| e.to_string())?;
        let slow = direct_spectral_mix(&tokens, &state.blocks[0], &cfg);
        worst = worst.max(rel_err(&fast, &slow));
    }
    ensure(worst <= 1e-5, || format!("spectral mix rel err {worst:.3e}"))?;
    let x = random_vec(16 * 3, 1.0, 9);
    let fft = Fft2::<f64>::new(4, 4);
    let spec = fft.forward_real(&x);
    let oracle: Vec<_> = x
        .chunks(16)
        .flat_map(|ch| {
            let c: Vec<_> = ch.iter().map(|&v| rustfft::num_complex::Complex::new(v, 0.0)).collect();
            common::dft2(&c, 4, 4, -1.0)
        })
        .collect();
    let spec_err = spec.iter().zip(&oracle).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    ensure(spec_err <= 1e-10, || format!("fft vs dft {spec_err:.3e}"))?;
    let back = fft.inverse_real(spec);
    let inv = rel_err(&back, &x);
    ensure(inv <= 1e-5, || format!("inverse round trip {inv:.3e}"))?;
    Ok(format!("mix rel err {worst:.2e}, round trip {inv:.2e}"))
}

fn metric_identities() -> Result<String, String> {
    let spec = GridSpec::global(6, 8).map_err(|e| e.to_string())?;
    let w = lagcast_core::scorecard::lat_weights(&spec).map_err(|e| e.to_string())?;
    let n = spec.n_points();
    let f = random_vec(n, 3.0, 1);
    let o = random_vec(n, 3.0, 2);
    let c = random_vec(n, 3.0, 3);
    let r0 = rmse(&f, &f, &w, 8).map_err(|e| e.to_string())?;
    ensure(r0 == 0.0, || format!("rmse(f,f) = {r0}"))?;
    let shifted: Vec<f64> = o.iter().map(|v| v - 2.5).collect();
    let r = rmse(&shifted, &o, &w, 8).map_err(|e| e.to_string())?;
    ensure((r - 2.5).abs() <= 1e-12, || format!("offset rmse {r}"))?;
    let a = acc(&f, &f, &c, &w, 8).map_err(|e| e.to_string())?;
    ensure((a - 1.0).abs() <= 1e-12, || format!("acc(f,f) = {a}"))?;
    match acc(&c, &o, &c, &w, 8) {
        Err(ScoreError::ZeroAnomalyNorm) => {}
        other => return Err(format!("climatology forecast gave {other:?}")),
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for i in 0..1000 {
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let f = random_vec(n, scale, 1000 + 3 * i);
        let o = random_vec(n, 1.0, 1001 + 3 * i);
        let c = random_vec(n, 1.0, 1002 + 3 * i);
        let a = acc(&f, &o, &c, &w, 8).map_err(|e| e.to_string())?;
        ensure((-1.0..=1.0).contains(&a), || format!("acc {a} out of range"))?;
    }
    Ok("rmse/acc identities and 1000 bounded acc triples".into())
}

fn small_archive(n_lat: usize, n_lon: usize, n_var: usize, seed: u64) -> GridArchive {
    let spec = GridSpec::global(n_lat, n_lon).unwrap();
    let vars = (0..n_var).map(|i| Variable::new(&format!("v{i}"), None, "1")).collect();
    let values = random_vec(n_var * n_lat * n_lon, 2.0, seed).into_iter().map(|v| v as f32).collect();
    GridArchive::new(spec, VariableCatalog::new(vars).unwrap(), 0, 24, values).unwrap()
}

fn rollout_contracts() -> Result<String, String> {
    let a = small_archive(4, 8, 2, 5);
    let stats = NormStats {
        mean: vec![0.5, -1.0],
        std: vec![2.0, 0.25],
    };
    let id = autoregress::<f64, _>(&IdentityForecaster { dynamic_len: 64 }, &stats, 0, a.frame(0), &[], 7)
        .map_err(|e| e.to_string())?;
    for (k, f) in id.lead_fields.iter().enumerate() {
        let ok = f.iter().zip(a.frame(0)).all(|(x, y)| (x - y).abs() <= 1e-6 * y.abs().max(1.0));
        ensure(ok, || format!("identity stub drifts at lead {}", k + 1))?;
    }

    let dim = 64;
    let m = random_vec(dim * dim, 1.0 / (dim as f64).sqrt(), 6);
    let mut x: Vec<f64> = a.frame(0).iter().map(|&v| v as f64).collect();
    for _ in 0..7 {
        x = m.chunks(dim).map(|row| row.iter().zip(&x).map(|(p, q)| p * q).sum()).collect();
    }
    let lin = autoregress(&LinearForecaster { matrix: m, dim }, &NormStats::identity(2), 0, a.frame(0), &[], 7)
        .map_err(|e| e.to_string())?;
    let got: Vec<f64> = lin.lead_fields[6].iter().map(|&v| v as f64).collect();
    let lin_err = rel_err(&got, &x);
    ensure(lin_err <= 1e-5, || format!("linear stub rel err {lin_err:.3e}"))?;

    let cfg = ModelConfig::tiny();
    let b = small_archive(8, 16, 3, 8);
    let orog: Vec<f32> = random_vec(128, 1.0, 9).into_iter().map(|v| v as f32).collect();
    for seed in 0..3 {
        let state = ModelState::<f32>::init(&cfg, seed).map_err(|e| e.to_string())?;
        let full = autoregress(&state, &NormStats::identity(3), 0, b.frame(0), &orog, 7).map_err(|e| e.to_string())?;
        for k in 1..=7 {
            let short = autoregress(&state, &NormStats::identity(3), 0, b.frame(0), &orog, k).map_err(|e| e.to_string())?;
            ensure(full.lead_fields[..k] == short.lead_fields[..], || format!("prefix differs at k={k}"))?;
        }
    }
    Ok(format!("identity fixed point, A^7 rel err {lin_err:.2e}, prefix bit-exact"))
}

fn lag4x_direction() -> Result<String, String> {
    let t0 = Instant::now();
    let r = lag4x_experiment(&ExperimentSettings::lag4x_desk()).map_err(|e| e.to_string())?;
    let (l0, l4, p) = (r.median_skill("lag0"), r.median_skill("lag4x"), r.median_skill("persistence"));
    let detail = format!("median day-1 skill lag0 {l0:.4}, lag4x {l4:.4}, persistence {p:.4}");
    ensure(l4 <= l0, || format!("lag4x worse than lag0: {detail}"))?;
    ensure(l0 < p && l4 < p, || format!("persistence not beaten: {detail}"))?;
    within(t0.elapsed(), 1800)?;
    Ok(detail)
}

fn recency_direction() -> Result<String, String> {
    let t0 = Instant::now();
    let r = recency_experiment(&ExperimentSettings::recency_desk(), 2).map_err(|e| e.to_string())?;
    let (e, rc, a) = (r.median_skill("early"), r.median_skill("recent"), r.median_skill("all"));
    let detail = format!("median day-1 skill early {e:.4}, recent {rc:.4}, all {a:.4}");
    ensure(rc < e, || format!("recent not better than early: {detail}"))?;
    ensure(a < rc, || format!("all not better than recent: {detail}"))?;
    within(t0.elapsed(), 2700)?;
    Ok(detail)
}

fn lagcast(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lagcast"))
        .args(["--threads", "1"])
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("lagcast {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

fn pipeline(root: &Path) -> Result<Vec<u8>, String> {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    std::fs::write(root.join("synth.cfg"), "n_lat=8\nn_lon=16\nn_vars=3\nn_years=2\nseed=3\n").map_err(|e| e.to_string())?;
    lagcast(&["synth", "--config", &p("synth.cfg"), "--out", &p("data")])?;
    lagcast(&["augment", "--input", &p("data/archive.grd"), "--lags", "0,6,12,18", "--out", &p("aug")])?;
    lagcast(&[
        "train", "--shards", &p("aug"), "--static", &p("data/static.grd"), "--train-years", "2001",
        "--steps", "30", "--seed", "5", "--out", &p("train"),
    ])?;
    lagcast(&[
        "infer", "--checkpoint", &p("train/checkpoint.afn"), "--analysis", &p("aug/lag_00.grd"),
        "--static", &p("data/static.grd"), "--year", "2002", "--out", &p("fc"),
    ])?;
    lagcast(&[
        "eval", "--forecasts", &p("fc"), "--analysis", &p("aug/lag_00.grd"), "--clim-years", "2001",
        "--run", "e2e", "--out", &p("eval"),
    ])?;
    std::fs::read(root.join("eval/scores.csv")).map_err(|e| e.to_string())
}

fn end_to_end_determinism() -> Result<String, String> {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = pipeline(a.path())?;
    let second = pipeline(b.path())?;
    ensure(first == second, || "scores.csv differs between runs".into())?;
    let rows = first.iter().filter(|&&c| c == b'\n').count().saturating_sub(1);
    ensure(rows == 21, || format!("expected 21 score rows, found {rows}"))?;
    Ok(format!("scores.csv identical across two runs ({} bytes, {rows} rows)", first.len()))
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("sliding-window oracle", sliding_window_oracle),
        ("augmentation counts", augmentation_counts),
        ("calendar conformance", calendar_conformance),
        ("gradient check", gradient_check),
        ("Fourier correctness", fourier_correctness),
        ("metric identities", metric_identities),
        ("rollout contracts", rollout_contracts),
        ("directional lag4x", lag4x_direction),
        ("directional recency", recency_direction),
        ("end-to-end determinism", end_to_end_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
