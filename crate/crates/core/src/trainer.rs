//! Normalization statistics, the latitude-weighted training loss, Adam and
//! the training loop for next-day prediction over a pair manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::afno::{batch_loss, gradients, ModelError, ModelState, Objective};
use crate::gridstore::GridArchive;
use crate::kv::{join_csv, KvError, KvMap};
use crate::rollout::Forecaster;
use crate::slidewin::{PairEntry, PairManifest};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("need at least 2 samples for statistics, got {0}")]
    TooFewSamples(usize),
    #[error("channel {0} has zero variance")]
    ZeroVariance(usize),
    #[error("shape mismatch: expected {expected} values, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("no shard holds lag {lag}h day {day}")]
    MissingDay { lag: u32, day: usize },
    #[error("empty training set")]
    Empty,
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kv(#[from] KvError),
}

/// Per-channel mean and standard deviation of physical fields.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(n_channels: usize) -> Self {
        Self {
            mean: vec![0.0; n_channels],
            std: vec![1.0; n_channels],
        }
    }

    pub fn n_channels(&self) -> usize {
        self.mean.len()
    }

    /// `(x - mean_c) / std_c` over a `[channel][points]` frame.
    pub fn normalize<T: Scalar>(&self, frame: &[f32]) -> Vec<T> {
        let np = frame.len() / self.n_channels();
        frame
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = i / np;
                T::of((v as f64 - self.mean[c]) / self.std[c])
            })
            .collect()
    }

    pub fn denormalize<T: Scalar>(&self, x: &[T]) -> Vec<f32> {
        let np = x.len() / self.n_channels();
        x.iter()
            .enumerate()
            .map(|(i, v)| {
                let c = i / np;
                (v.as_f64() * self.std[c] + self.mean[c]) as f32
            })
            .collect()
    }

    pub fn write_kv(&self, prefix: &str, kv: &mut KvMap) {
        kv.set(&format!("{prefix}_mean"), join_csv(&self.mean));
        kv.set(&format!("{prefix}_std"), join_csv(&self.std));
    }

    pub fn read_kv(prefix: &str, kv: &KvMap) -> Result<Self, KvError> {
        Ok(Self {
            mean: kv.get_list(&format!("{prefix}_mean"))?,
            std: kv.get_list(&format!("{prefix}_std"))?,
        })
    }
}

fn finish_stats(count: f64, mean: Vec<f64>, m2: Vec<f64>) -> Result<NormStats, TrainError> {
    let mut std = Vec::with_capacity(m2.len());
    for (c, m) in m2.into_iter().enumerate() {
        let s = (m / (count - 1.0)).sqrt();
        if !(s > 0.0) {
            return Err(TrainError::ZeroVariance(c));
        }
        std.push(s);
    }
    Ok(NormStats { mean, std })
}

/// Unbiased per-channel statistics over every grid point of every sample
/// (`[channel][points]` frames). Single pass with Welford updates in f64.
pub fn compute_norm_stats(samples: &[&[f32]], n_channels: usize) -> Result<NormStats, TrainError> {
    if samples.len() < 2 {
        return Err(TrainError::TooFewSamples(samples.len()));
    }
    let len = samples[0].len();
    if n_channels == 0 || len % n_channels != 0 {
        return Err(TrainError::Shape {
            expected: n_channels,
            found: len,
        });
    }
    let np = len / n_channels;
    let mut mean = vec![0.0f64; n_channels];
    let mut m2 = vec![0.0f64; n_channels];
    let mut seen = 0.0f64;
    for s in samples {
        if s.len() != len {
            return Err(TrainError::Shape {
                expected: len,
                found: s.len(),
            });
        }
        for c in 0..n_channels {
            let mut n = seen;
            for &v in &s[c * np..(c + 1) * np] {
                n += 1.0;
                let v = v as f64;
                let d = v - mean[c];
                mean[c] += d / n;
                m2[c] += d * (v - mean[c]);
            }
        }
        seen += np as f64;
    }
    finish_stats(seen, mean, m2)
}

/// Statistics of a single static field, taken over its grid points.
pub fn static_norm_stats(field: &[f32], n_channels: usize) -> Result<NormStats, TrainError> {
    let np = field.len() / n_channels.max(1);
    let mut mean = vec![0.0; n_channels];
    let mut m2 = vec![0.0; n_channels];
    for c in 0..n_channels {
        let xs = &field[c * np..(c + 1) * np];
        mean[c] = xs.iter().map(|&v| v as f64).sum::<f64>() / np as f64;
        m2[c] = xs.iter().map(|&v| (v as f64 - mean[c]).powi(2)).sum::<f64>();
    }
    finish_stats(np as f64, mean, m2)
}

/// Latitude-weighted mean squared error over `[channel][lat][lon]` fields.
/// Row weights have mean 1.
#[derive(Debug, Clone)]
pub struct LatWeightedMse<T> {
    weights: Vec<T>,
    n_lon: usize,
}

impl<T: Scalar> LatWeightedMse<T> {
    pub fn new(row_weights: &[f64], n_lon: usize) -> Self {
        Self {
            weights: row_weights.iter().map(|&w| T::of(w)).collect(),
            n_lon,
        }
    }

    fn weight_at(&self, i: usize) -> T {
        self.weights[(i / self.n_lon) % self.weights.len()]
    }
}

impl<T: Scalar> Objective<T> for LatWeightedMse<T> {
    fn value_and_grad(&self, pred: &[T], target: &[T]) -> (T, Vec<T>) {
        let inv_n = T::one() / T::of_usize(pred.len());
        let two = T::of(2.0);
        let mut loss = T::zero();
        let mut grad = Vec::with_capacity(pred.len());
        for (i, (&p, &t)) in pred.iter().zip(target).enumerate() {
            let w = self.weight_at(i);
            let d = p - t;
            loss += w * d * d;
            grad.push(two * w * d * inv_n);
        }
        (loss * inv_n, grad)
    }
}

/// Checked form of the training loss.
pub fn weighted_loss<T: Scalar>(pred: &[T], target: &[T], row_weights: &[f64], n_lon: usize) -> Result<T, TrainError> {
    if pred.len() != target.len() || pred.len() % (row_weights.len() * n_lon) != 0 {
        return Err(TrainError::Shape {
            expected: pred.len(),
            found: target.len(),
        });
    }
    Ok(LatWeightedMse::<T>::new(row_weights, n_lon).value_and_grad(pred, target).0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LrSchedule {
    Constant,
    #[default]
    Cosine,
}

impl FromStr for LrSchedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant" => Ok(Self::Constant),
            "cosine" => Ok(Self::Cosine),
            other => Err(format!("unknown schedule {other:?}")),
        }
    }
}

impl std::fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Constant => "constant",
            Self::Cosine => "cosine",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    /// Steps between validation checks and checkpoint callbacks; 0 means
    /// only at the end.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 16,
            max_steps: 500,
            lr_schedule: LrSchedule::Cosine,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

const TRAIN_KEYS: &[&str] = &[
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_epsilon",
    "batch_size",
    "max_steps",
    "lr_schedule",
    "seed",
    "checkpoint_every",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be positive");
        }
        Ok(())
    }

    /// Learning rate used for the update at zero-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let frac = step as f64 / self.max_steps as f64;
                0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("learning_rate", self.learning_rate);
        kv.set("adam_beta1", self.adam_beta1);
        kv.set("adam_beta2", self.adam_beta2);
        kv.set("adam_epsilon", self.adam_epsilon);
        kv.set("batch_size", self.batch_size);
        kv.set("max_steps", self.max_steps);
        kv.set("lr_schedule", self.lr_schedule);
        kv.set("seed", self.seed);
        kv.set("checkpoint_every", self.checkpoint_every);
        kv
    }

    /// Missing keys take their defaults; unknown keys are rejected.
    pub fn from_kv(kv: &KvMap) -> Result<Self, TrainError> {
        kv.check_keys(TRAIN_KEYS)?;
        let d = Self::default();
        let cfg = Self {
            learning_rate: kv.get_or("learning_rate", d.learning_rate)?,
            adam_beta1: kv.get_or("adam_beta1", d.adam_beta1)?,
            adam_beta2: kv.get_or("adam_beta2", d.adam_beta2)?,
            adam_epsilon: kv.get_or("adam_epsilon", d.adam_epsilon)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            max_steps: kv.get_or("max_steps", d.max_steps)?,
            lr_schedule: kv.get_or("lr_schedule", d.lr_schedule)?,
            seed: kv.get_or("seed", d.seed)?,
            checkpoint_every: kv.get_or("checkpoint_every", d.checkpoint_every)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    m: ModelState<T>,
    v: ModelState<T>,
    t: i32,
    beta1: T,
    beta2: T,
    eps: T,
}

impl<T: Scalar> Adam<T> {
    pub fn new(like: &ModelState<T>, cfg: &TrainConfig) -> Self {
        Self {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
            beta1: T::of(cfg.adam_beta1),
            beta2: T::of(cfg.adam_beta2),
            eps: T::of(cfg.adam_epsilon),
        }
    }

    pub fn step(&mut self, state: &mut ModelState<T>, grads: &ModelState<T>, lr: T) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let m = self.m.groups_mut();
        let v = self.v.groups_mut();
        let p = state.groups_mut();
        let g = grads.groups();
        for (((( _, p), (_, m)), (_, v)), (_, g)) in p.into_iter().zip(m).zip(v).zip(g) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Normalized `(input, target)` pairs in canonical `(lag, input_day)` order.
/// Inputs carry the static channels after the dynamic ones.
#[derive(Debug, Clone)]
pub struct TrainingSet<T> {
    pub entries: Vec<PairEntry>,
    pub inputs: Vec<Vec<T>>,
    pub targets: Vec<Vec<T>>,
}

impl<T: Scalar> TrainingSet<T> {
    /// `shards` maps each lag to its daily shard (time index = day).
    pub fn build(
        manifest: &PairManifest,
        shards: &BTreeMap<u32, GridArchive>,
        stats: &NormStats,
        static_input: &[T],
    ) -> Result<Self, TrainError> {
        let mut entries = manifest.entries().to_vec();
        entries.sort();
        let frame = |lag: u32, day: usize| -> Result<&[f32], TrainError> {
            shards
                .get(&lag)
                .filter(|s| day < s.n_time())
                .map(|s| s.frame(day))
                .ok_or(TrainError::MissingDay { lag, day })
        };
        let mut inputs = Vec::with_capacity(entries.len());
        let mut targets = Vec::with_capacity(entries.len());
        for e in &entries {
            let mut x: Vec<T> = stats.normalize(frame(e.lag_hours, e.input_day)?);
            x.extend_from_slice(static_input);
            inputs.push(x);
            targets.push(stats.normalize(frame(e.lag_hours, e.target_day)?));
        }
        Ok(Self {
            entries,
            inputs,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn batch(&self, idx: &[usize]) -> Vec<(&[T], &[T])> {
        idx.iter().map(|&i| (&self.inputs[i][..], &self.targets[i][..])).collect()
    }

    /// Mean objective over the whole set.
    pub fn mean_loss(&self, state: &ModelState<T>, objective: &LatWeightedMse<T>) -> Result<T, TrainError> {
        let all: Vec<usize> = (0..self.len()).collect();
        let mut total = T::zero();
        for chunk in all.chunks(256) {
            total += batch_loss(state, &self.batch(chunk), objective)? * T::of_usize(chunk.len());
        }
        Ok(total / T::of_usize(self.len()))
    }
}

/// Mean objective of any forecaster over a set.
pub fn evaluate_loss<T: Scalar, F: Forecaster<T> + ?Sized>(
    model: &F,
    set: &TrainingSet<T>,
    objective: &LatWeightedMse<T>,
) -> Result<T, TrainError> {
    if set.is_empty() {
        return Err(TrainError::Empty);
    }
    let mut total = T::zero();
    for (x, y) in set.inputs.iter().zip(&set.targets) {
        let pred = model.step(x)?;
        total += objective.value_and_grad(&pred, y).0;
    }
    Ok(total / T::of_usize(set.len()))
}

/// One loss value per optimizer step, 1-based.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossTrace {
    pub losses: Vec<f64>,
}

impl LossTrace {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, l) in self.losses.iter().enumerate() {
            writeln!(out, "{}\t{l:.9e}", i + 1).unwrap();
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Best validation state when a validation set was given, else the last.
    pub state: ModelState<T>,
    pub trace: LossTrace,
    /// `(step, validation loss)` at every check.
    pub validation: Vec<(usize, f64)>,
    pub selected_step: usize,
}

/// Minibatch Adam over `set`. Each epoch visits the pairs in a seeded
/// permutation; the members of a batch are reduced in canonical order, so a
/// full-dataset batch does not depend on manifest order at all.
pub fn train<T: Scalar>(
    init: ModelState<T>,
    set: &TrainingSet<T>,
    objective: &LatWeightedMse<T>,
    cfg: &TrainConfig,
    validation: Option<&TrainingSet<T>>,
    mut on_checkpoint: impl FnMut(usize, &ModelState<T>),
) -> Result<TrainOutcome<T>, TrainError> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(TrainError::Empty);
    }
    let mut state = init;
    let mut adam = Adam::new(&state, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut cursor = set.len();
    let bs = cfg.batch_size.min(set.len());
    let mut trace = LossTrace::default();
    let mut checks = Vec::new();
    let mut best: Option<(f64, usize, ModelState<T>)> = None;
    for step in 0..cfg.max_steps {
        if cursor + bs > set.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let mut idx = order[cursor..cursor + bs].to_vec();
        cursor += bs;
        idx.sort_unstable();
        let (loss, grads) = match gradients(&state, &set.batch(&idx), objective) {
            Ok(v) => v,
            Err(ModelError::NonFinite { .. } | ModelError::NonFiniteGradient(_)) => {
                return Err(TrainError::NonFiniteLoss { step: step + 1 })
            }
            Err(e) => return Err(e.into()),
        };
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { step: step + 1 });
        }
        trace.losses.push(loss.as_f64());
        adam.step(&mut state, &grads, T::of(cfg.lr_at(step)));
        let done = step + 1;
        let at_check = done == cfg.max_steps || (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0);
        if at_check {
            if let Some(val) = validation {
                let v = val.mean_loss(&state, objective)?.as_f64();
                debug!("step {done}: validation loss {v:.6}");
                checks.push((done, v));
                if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                    best = Some((v, done, state.clone()));
                }
            }
            on_checkpoint(done, &state);
        }
    }
    info!(
        "trained {} steps: loss {:.5} -> {:.5}",
        cfg.max_steps,
        trace.losses[0],
        trace.losses[trace.losses.len() - 1]
    );
    let (state, selected_step) = match best {
        Some((_, s, st)) => (st, s),
        None => (state, cfg.max_steps),
    };
    Ok(TrainOutcome {
        state,
        trace,
        validation: checks,
        selected_step,
    })
}

/// Parses a loss trace written by [`LossTrace::to_text`].
pub fn parse_trace(text: &str) -> Result<LossTrace, KvError> {
    let mut losses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let bad = || KvError::Syntax {
            line: i + 1,
            text: line.to_string(),
        };
        let (_, l) = line.split_once('\t').ok_or_else(bad)?;
        losses.push(l.trim().parse::<f64>().map_err(|_| bad())?);
    }
    Ok(LossTrace { losses })
}
