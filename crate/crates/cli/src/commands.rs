use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use lagcast_core::afno::{read_checkpoint, write_checkpoint, ModelConfig, ModelState};
use lagcast_core::calendar::{init_schedule, monday_thursday, DayAxis, WeekdaySet};
use lagcast_core::experiments::{
    lag4x_experiment, manifest_norm_stats, recency_experiment, split_manifest, ExperimentSettings,
};
use lagcast_core::gridstore::{read_archive, write_archive, GridArchive};
use lagcast_core::kv::KvMap;
use lagcast_core::rollout::{
    persistence, run_schedule, trajectory_from_archive, write_trajectory, Trajectory,
};
use lagcast_core::scorecard::{
    build_climatology, compare as compare_tables, lat_weights, render_reference, ScoreTable, Verifier,
};
use lagcast_core::slidewin::{augment as augment_archive, build_pairs, daily_shard, days_with_window, LagSet, PairManifest};
use lagcast_core::synthgen::{generate, ideal_predictor_error, orography, SynthConfig};
use lagcast_core::trainer::{
    static_norm_stats, train as train_model, LatWeightedMse, NormStats, TrainConfig, TrainingSet,
};
use log::info;

use crate::exit::ConfigProblem;
use crate::manifest::RunManifest;
use crate::{
    AugmentArgs, CalendarArgs, CompareArgs, EvalArgs, ExperimentArgs, ExperimentKind, InferArgs, SynthArgs,
    TrainArgs, YearSpan,
};

pub const ARCHIVE_FILE: &str = "archive.grd";
pub const STATIC_FILE: &str = "static.grd";
pub const PAIRS_FILE: &str = "pairs.tsv";
pub const CHECKPOINT_FILE: &str = "checkpoint.afn";
pub const LOSS_FILE: &str = "loss.txt";
pub const SCORES_FILE: &str = "scores.csv";
pub const COMPARE_FILE: &str = "compare.csv";

pub fn shard_name(lag: u32) -> String {
    format!("lag_{lag:02}.grd")
}

fn config_problem(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(ConfigProblem(msg.into()))
}

fn read_grid(path: &Path) -> Result<GridArchive> {
    read_archive(path).with_context(|| format!("reading {}", path.display()))
}

fn write_grid(archive: &GridArchive, path: &Path) -> Result<()> {
    write_archive(archive, path).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn axis_for(analysis: &GridArchive, cal: &CalendarArgs) -> DayAxis {
    DayAxis::from_epoch_hours(analysis.start_epoch_hours(), cal.calendar.into())
}

fn span_days(axis: &DayAxis, span: YearSpan, n_days: usize) -> Result<Range<usize>> {
    if span.first < axis.first_year {
        return Err(config_problem(format!(
            "year {} precedes the data, which starts in {}",
            span.first, axis.first_year
        )));
    }
    let days = axis.year_span(span.first, span.last);
    if days.end > n_days {
        return Err(config_problem(format!(
            "years {}-{} need {} days, the shard holds {n_days}",
            span.first, span.last, days.end
        )));
    }
    Ok(days)
}

fn parse_day_range(text: &str) -> Result<Range<usize>> {
    let (a, b) = text
        .split_once("..")
        .ok_or_else(|| config_problem(format!("expected a..b, got {text:?}")))?;
    let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| config_problem(format!("bad day {s:?}")));
    Ok(parse(a)?..parse(b)?)
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut cfg =
        SynthConfig::load(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    RunManifest::new("synth", "synth", &args.out)
        .config(&args.config)
        .seed(cfg.seed)
        .persist()?;
    let archive = generate(&cfg)?;
    let orog = orography(&cfg)?;
    write_grid(&archive, &args.out.join(ARCHIVE_FILE))?;
    write_grid(&orog, &args.out.join(STATIC_FILE))?;
    write_text(&args.out.join("synth.cfg"), &cfg.to_kv().to_text())?;
    let floor: Vec<String> = ideal_predictor_error(&cfg).iter().map(|f| format!("{f:.4}")).collect();
    println!(
        "wrote {}: {} hours x {} vars x {}x{} grid, seed {}; noise floor per var {}",
        args.out.join(ARCHIVE_FILE).display(),
        archive.n_time(),
        archive.n_var(),
        cfg.n_lat,
        cfg.n_lon,
        cfg.seed,
        floor.join(",")
    );
    Ok(())
}

pub fn augment(args: &AugmentArgs) -> Result<()> {
    if args.dt == 0 {
        return Err(config_problem("--dt must be at least 1"));
    }
    let lag_text = args.lags.lags().iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",");
    RunManifest::new("augment", "augment", &args.out)
        .input(&args.input)
        .param("lags", &lag_text)
        .param("dt", args.dt)
        .persist()?;
    let hourly = read_grid(&args.input)?;
    let aug = augment_archive(&hourly, &args.lags)?;
    let days = aug.days_per_lag();
    let mut expected_pairs = 0;
    for &lag in args.lags.lags() {
        let n = aug.count_for(lag);
        if n != days_with_window(hourly.n_time(), lag) {
            bail!(lagcast_core::slidewin::WindowError::BadManifest(format!(
                "lag {lag}h produced {n} samples, expected {}",
                days_with_window(hourly.n_time(), lag)
            )));
        }
        expected_pairs += n.saturating_sub(args.dt);
        let shard = daily_shard(&hourly, &aug.samples, lag)?;
        write_grid(&shard, &args.out.join(shard_name(lag)))?;
        println!("lag {lag:>2}h: {n} samples");
    }
    let manifest = build_pairs(&days, args.dt)?;
    if manifest.len() != expected_pairs {
        bail!(lagcast_core::slidewin::WindowError::BadManifest(format!(
            "{} pairs built, {expected_pairs} expected",
            manifest.len()
        )));
    }
    write_text(&args.out.join(PAIRS_FILE), &manifest.to_tsv())?;
    println!(
        "total: {} samples, {} pairs (dt={})",
        aug.samples.len(),
        manifest.len(),
        args.dt
    );
    Ok(())
}

struct ShardDir {
    manifest: PairManifest,
    shards: BTreeMap<u32, GridArchive>,
}

fn load_shard_dir(dir: &Path, lags: Option<&LagSet>) -> Result<ShardDir> {
    let path = dir.join(PAIRS_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut manifest = PairManifest::from_tsv(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(l) = lags {
        manifest = manifest.with_lags(l);
    }
    let mut needed: Vec<u32> = manifest.entries().iter().map(|e| e.lag_hours).collect();
    needed.push(0);
    needed.sort_unstable();
    needed.dedup();
    let mut shards = BTreeMap::new();
    for lag in needed {
        shards.insert(lag, read_grid(&dir.join(shard_name(lag)))?);
    }
    Ok(ShardDir { manifest, shards })
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
                .map_err(|e| e.context(ConfigProblem(format!("cannot load {}", p.display()))))?;
            TrainConfig::from_kv(&KvMap::parse(&text)?)?
        }
        None => TrainConfig::default(),
    };
    cfg.seed = args.seed;
    if let Some(v) = args.steps {
        cfg.max_steps = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut cfg = train_config(args)?;
    let mut manifest_rec = RunManifest::new("train", "train", &args.out)
        .input(&args.shards)
        .input(&args.static_field)
        .seed(cfg.seed);
    if let Some(c) = &args.config {
        manifest_rec = manifest_rec.config(c);
    }
    manifest_rec.persist()?;

    let dir = load_shard_dir(&args.shards, args.lags.as_ref())?;
    let analysis = &dir.shards[&0];
    let axis = axis_for(analysis, &args.calendar);
    let n_days = analysis.n_time();
    let train_days = match args.train_years {
        Some(s) => span_days(&axis, s, n_days)?,
        None => 0..n_days,
    };
    let lags = LagSet::new(dir.shards.keys().copied().collect())?;
    let train_pairs = split_manifest(&dir.manifest, &lags, train_days.clone());
    if train_pairs.is_empty() {
        return Err(config_problem("no training pairs in the selected years"));
    }
    let stats = manifest_norm_stats(&train_pairs, &dir.shards)?;

    let orog_archive = read_grid(&args.static_field)?;
    if orog_archive.spec() != analysis.spec() {
        bail!(lagcast_core::gridstore::GridError::Invalid("static field grid differs from the shards".into()));
    }
    let orog: Vec<f32> = (0..orog_archive.n_var()).flat_map(|v| orog_archive.field(0, v).to_vec()).collect();
    let static_stats = static_norm_stats(&orog, orog_archive.n_var())?;
    let static_input: Vec<f32> = static_stats.normalize(&orog);

    let set = TrainingSet::<f32>::build(&train_pairs, &dir.shards, &stats, &static_input)?;
    let validation = match args.val_years {
        Some(s) => {
            let days = span_days(&axis, s, n_days)?;
            let val_pairs = split_manifest(&dir.manifest, &LagSet::lag0(), days);
            Some(TrainingSet::<f32>::build(&val_pairs, &dir.shards, &stats, &static_input)?)
        }
        None => None,
    };
    if let Some(e) = args.epochs {
        if !(e > 0.0) {
            return Err(config_problem("--epochs must be positive"));
        }
        cfg.max_steps = ((e * set.len() as f64) / cfg.batch_size as f64).ceil() as usize;
    }

    let mut model_cfg = ModelConfig::desk(
        analysis.spec().n_lat(),
        analysis.spec().n_lon(),
        analysis.n_var(),
        orog_archive.n_var(),
    );
    model_cfg.embed_dim = args.embed_dim;
    model_cfg.n_blocks = args.blocks;
    model_cfg.n_freq_blocks = args.freq_blocks;
    model_cfg.softshrink_lambda = args.softshrink;
    model_cfg.validate().map_err(|e| anyhow!(e).context(ConfigProblem("invalid model".into())))?;

    let mut extra = cfg.to_kv();
    stats.write_kv("norm", &mut extra);
    static_stats.write_kv("static_norm", &mut extra);
    extra.set("variables", analysis.catalog().keys().join(","));
    extra.set("train_pairs", set.len());

    let ckpt_dir = args.out.join("checkpoints");
    if cfg.checkpoint_every > 0 {
        fs::create_dir_all(&ckpt_dir)?;
    }
    let objective = LatWeightedMse::new(&lat_weights(analysis.spec())?, analysis.spec().n_lon());
    let init = ModelState::<f32>::init(&model_cfg, cfg.seed)?;
    info!("training on {} pairs for {} steps", set.len(), cfg.max_steps);
    let mut ckpt_err = None;
    let outcome = train_model(init, &set, &objective, &cfg, validation.as_ref(), |step, state| {
        if cfg.checkpoint_every > 0 && ckpt_err.is_none() {
            let path = ckpt_dir.join(format!("step_{step:06}.afn"));
            if let Err(e) = write_checkpoint(state, &extra, &path) {
                ckpt_err = Some(e);
            }
        }
    })?;
    if let Some(e) = ckpt_err {
        return Err(e.into());
    }
    extra.set("selected_step", outcome.selected_step);
    write_checkpoint(&outcome.state, &extra, args.out.join(CHECKPOINT_FILE))?;
    write_text(&args.out.join(LOSS_FILE), &outcome.trace.to_text())?;
    let l = &outcome.trace.losses;
    println!(
        "trained {} steps on {} pairs: loss {:.5} -> {:.5}",
        l.len(),
        set.len(),
        l[0],
        l[l.len() - 1]
    );
    for (step, v) in &outcome.validation {
        println!("validation step {step}: {v:.5}");
    }
    Ok(())
}

fn schedule_for(args: &InferArgs, axis: &DayAxis, n_days: usize) -> Result<Vec<usize>> {
    if let Some(text) = &args.init_days {
        let r = parse_day_range(text)?;
        return Ok(r.step_by(args.stride.max(1)).collect());
    }
    let year = args.year.ok_or_else(|| config_problem("give --year or --init-days"))?;
    let weekdays = if args.weekdays == "mon,thu" {
        monday_thursday()
    } else {
        WeekdaySet::parse_list(&args.weekdays)
            .ok_or_else(|| config_problem(format!("bad weekday list {:?}", args.weekdays)))?
    };
    let days = span_days(axis, YearSpan { first: year, last: year }, n_days)?;
    Ok(init_schedule(year, &weekdays)?
        .into_iter()
        .filter(|&d| d < axis.days_in(year))
        .map(|d| days.start + d)
        .step_by(args.stride.max(1))
        .collect())
}

pub fn infer(args: &InferArgs) -> Result<()> {
    RunManifest::new("infer", "infer", &args.out)
        .input(&args.checkpoint)
        .input(&args.analysis)
        .input(&args.static_field)
        .param("max_lead", args.max_lead)
        .persist()?;
    let ckpt = read_checkpoint(&args.checkpoint).with_context(|| format!("reading {}", args.checkpoint.display()))?;
    let stats = NormStats::read_kv("norm", &ckpt.records)?;
    let static_stats = NormStats::read_kv("static_norm", &ckpt.records)?;
    let analysis = read_grid(&args.analysis)?;
    let orog_archive = read_grid(&args.static_field)?;
    let orog: Vec<f32> = (0..orog_archive.n_var()).flat_map(|v| orog_archive.field(0, v).to_vec()).collect();
    let static_input: Vec<f32> = static_stats.normalize(&orog);
    let axis = axis_for(&analysis, &args.calendar);
    let schedule = schedule_for(args, &axis, analysis.n_time())?;
    let trajectories = run_schedule(&ckpt.state, &stats, &static_input, &analysis, &schedule, args.max_lead)?;
    for t in &trajectories {
        let path = write_trajectory(t, &analysis, &axis, &args.out)?;
        if let Some(flag) = t.flag() {
            println!("{}: {flag}", path.display());
        }
    }
    println!("wrote {} trajectories to {}", trajectories.len(), args.out.display());
    Ok(())
}

fn forecast_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("fc_") && n.ends_with(".grd"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn print_table(t: &ScoreTable) {
    println!("{:<10} {:<8} {:>4} {:>12} {:>8} {:>6}", "run", "variable", "day", "rmse", "acc", "cases");
    for r in &t.rows {
        let acc = r.acc.map_or("-".to_string(), |a| format!("{a:.4}"));
        println!(
            "{:<10} {:<8} {:>4} {:>12.5} {:>8} {:>6}",
            t.run, r.variable, r.lead_day, r.rmse, acc, r.n_cases
        );
    }
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    RunManifest::new("eval", &args.run, &args.out)
        .input(&args.forecasts)
        .input(&args.analysis)
        .persist()?;
    let analysis = read_grid(&args.analysis)?;
    let axis = axis_for(&analysis, &args.calendar);
    let trajectories = forecast_files(&args.forecasts)?
        .iter()
        .map(|p| {
            let a = read_grid(p)?;
            trajectory_from_archive(&a, &analysis).with_context(|| format!("aligning {}", p.display()))
        })
        .collect::<Result<Vec<Trajectory>>>()?;
    if trajectories.is_empty() {
        bail!(lagcast_core::scorecard::ScoreError::NoCases);
    }
    let clim = match args.clim_years {
        Some(s) => {
            span_days(&axis, s, analysis.n_time())?;
            Some(build_climatology(&analysis, &axis, s.first, s.last)?)
        }
        None => None,
    };
    let verifier = Verifier::new(&analysis, axis, clim.as_ref())?;
    let table = verifier.score(&args.run, &trajectories)?;
    write_text(&args.out.join(SCORES_FILE), &table.to_csv())?;
    write_text(&args.out.join("scores.dat"), &table.to_dat())?;
    print_table(&table);
    if args.persistence {
        let days: Vec<usize> = trajectories.iter().map(|t| t.init_day).collect();
        let max_lead = trajectories.iter().map(|t| t.max_lead()).max().unwrap_or(1);
        let p = verifier.score("persistence", &persistence(&analysis, &days, max_lead)?)?;
        write_text(&args.out.join("persistence.csv"), &p.to_csv())?;
        print_table(&p);
    }
    if args.reference.is_some() {
        print!("{}", render_reference());
    }
    Ok(())
}

fn read_scores(path: &Path) -> Result<ScoreTable> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ScoreTable::from_csv(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn compare(args: &CompareArgs) -> Result<()> {
    RunManifest::new("compare", "compare", &args.out)
        .input(&args.a)
        .input(&args.b)
        .persist()?;
    let a = read_scores(&args.a)?;
    let b = read_scores(&args.b)?;
    let mut cmp = compare_tables(&a, &b)?;
    if args.reference.is_some() {
        cmp = cmp.with_reference();
    }
    let csv = cmp.to_csv();
    write_text(&args.out.join(COMPARE_FILE), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn experiment(args: &ExperimentArgs) -> Result<()> {
    let (name, mut settings) = match args.kind {
        ExperimentKind::Lag4x => ("lag4x", ExperimentSettings::lag4x_desk()),
        ExperimentKind::Recency => ("recency", ExperimentSettings::recency_desk()),
    };
    if let Some(s) = &args.seeds {
        if s.is_empty() {
            return Err(config_problem("--seeds needs at least one seed"));
        }
        settings.seeds = s.clone();
    }
    if let Some(e) = args.epochs {
        settings.epochs = e;
    }
    RunManifest::new("experiment", name, &args.out)
        .param("seeds", settings.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","))
        .param("epochs", settings.epochs)
        .persist()?;
    let report = match args.kind {
        ExperimentKind::Lag4x => lag4x_experiment(&settings)?,
        ExperimentKind::Recency => recency_experiment(&settings, 2)?,
    };
    for s in &report.seeds {
        for t in &s.tables {
            write_text(&args.out.join(format!("scores_seed{}_{}.csv", s.seed, t.run)), &t.to_csv())?;
        }
    }
    let mut text = report.summary();
    let m = |r: &str| report.median_skill(r);
    match args.kind {
        ExperimentKind::Lag4x => {
            text.push_str(&format!("lag4x <= lag0: {}\n", m("lag4x") <= m("lag0")));
            text.push_str(&format!(
                "both beat persistence: {}\n",
                m("lag4x") < m("persistence") && m("lag0") < m("persistence")
            ));
        }
        ExperimentKind::Recency => {
            text.push_str(&format!("recent < early: {}\n", m("recent") < m("early")));
            text.push_str(&format!("all < recent: {}\n", m("all") < m("recent")));
        }
    }
    write_text(&args.out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}
