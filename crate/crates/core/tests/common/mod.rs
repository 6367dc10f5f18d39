#![allow(dead_code)]

use lagcast_core::afno::{
    batch_loss, gradients, kink_pattern, Activation, BlockParams, ModelConfig, ModelState, Objective,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

pub fn random_vec(n: usize, scale: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| scale * (rng.random::<f64>() * 2.0 - 1.0)).collect()
}

/// Seeded initialization with every parameter group jittered, so no group
/// sits at a symmetric point (zero biases, unit scales, zero encoding).
pub fn perturbed_state(cfg: &ModelConfig, seed: u64, jitter: f64) -> ModelState<f64> {
    let mut s = ModelState::<f64>::init(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (name, g) in s.groups_mut() {
        let amp = if name.contains("spec_") { 3.0 * jitter } else { jitter };
        for x in g.iter_mut() {
            *x += amp * (rng.random::<f64>() * 2.0 - 1.0);
        }
    }
    s
}

/// `||a - b|| / max(||a||, ||b||)`, or the plain distance when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Plain mean squared error.
pub struct SquaredError;

impl Objective<f64> for SquaredError {
    fn value_and_grad(&self, pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
        let n = pred.len() as f64;
        let loss = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
        let grad = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
        (loss, grad)
    }
}

/// Direct O(N^2) 2-D DFT; `sign` -1 forward, +1 unnormalized inverse.
pub fn dft2(x: &[Complex<f64>], rows: usize, cols: usize, sign: f64) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::new(0.0, 0.0); rows * cols];
    for k1 in 0..rows {
        for k2 in 0..cols {
            let mut acc = Complex::new(0.0, 0.0);
            for n1 in 0..rows {
                for n2 in 0..cols {
                    let th = sign
                        * 2.0
                        * std::f64::consts::PI
                        * (k1 as f64 * n1 as f64 / rows as f64 + k2 as f64 * n2 as f64 / cols as f64);
                    acc += Complex::new(th.cos(), th.sin()) * x[n1 * cols + n2];
                }
            }
            out[k1 * cols + k2] = acc;
        }
    }
    out
}

fn shrink(x: f64, l: f64) -> f64 {
    x.signum() * (x.abs() - l).max(0.0)
}

/// Spectral mixing computed with direct DFT sums and explicit per-channel
/// complex arithmetic, independent of the FFT path.
pub fn direct_spectral_mix(tokens: &[f64], p: &BlockParams<f64>, cfg: &ModelConfig) -> Vec<f64> {
    let (rows, cols) = (cfg.token_rows(), cfg.token_cols());
    let n = rows * cols;
    let d = cfg.embed_dim;
    let bs = cfg.block_size();
    let spectra: Vec<Vec<Complex<f64>>> = (0..d)
        .map(|c| {
            let ch: Vec<Complex<f64>> = (0..n).map(|t| Complex::new(tokens[t * d + c], 0.0)).collect();
            dft2(&ch, rows, cols, -1.0)
        })
        .collect();
    let act = |v: f64| match cfg.activation {
        Activation::Relu => v.max(0.0),
        Activation::Identity => v,
    };
    let w = |re: &[f64], im: &[f64], m: usize, i: usize, o: usize| {
        Complex::new(re[(m * bs + i) * bs + o], im[(m * bs + i) * bs + o])
    };
    let mut mixed = vec![vec![Complex::new(0.0, 0.0); n]; d];
    for k in 0..n {
        for m in 0..cfg.n_freq_blocks {
            let mut hidden = vec![Complex::new(0.0, 0.0); bs];
            for (o, h) in hidden.iter_mut().enumerate() {
                let mut a = Complex::new(p.spec_b1_re[m * bs + o], p.spec_b1_im[m * bs + o]);
                for i in 0..bs {
                    a += w(&p.spec_w1_re, &p.spec_w1_im, m, i, o) * spectra[m * bs + i][k];
                }
                *h = Complex::new(act(a.re), act(a.im));
            }
            for o in 0..bs {
                let mut a = Complex::new(p.spec_b2_re[m * bs + o], p.spec_b2_im[m * bs + o]);
                for (i, h) in hidden.iter().enumerate() {
                    a += w(&p.spec_w2_re, &p.spec_w2_im, m, i, o) * h;
                }
                let l = cfg.softshrink_lambda;
                mixed[m * bs + o][k] = Complex::new(shrink(a.re, l), shrink(a.im, l));
            }
        }
    }
    let mut out = vec![0.0; n * d];
    for (c, spec) in mixed.iter().enumerate() {
        let back = dft2(spec, rows, cols, 1.0);
        for t in 0..n {
            out[t * d + c] = back[t].re / n as f64;
        }
    }
    out
}

pub struct GroupCheck {
    pub name: String,
    pub rel_err: f64,
    pub skipped: usize,
}

pub fn patterns(state: &ModelState<f64>, inputs: &[Vec<f64>]) -> Vec<Vec<bool>> {
    inputs.iter().map(|x| kink_pattern(x, state).unwrap()).collect()
}

/// Central differences against reverse mode for every parameter group.
/// Coordinates whose `±h` probe moves any sample across a ReLU or shrinkage
/// kink are left out, since the difference quotient is biased there.
pub fn check_groups(activation: Activation, h: f64) -> Vec<GroupCheck> {
    let mut cfg = ModelConfig::tiny();
    cfg.activation = activation;
    let state = perturbed_state(&cfg, 21, 0.2);
    let inputs: Vec<Vec<f64>> = (0..2).map(|i| random_vec(cfg.input_len(), 1.0, 100 + i)).collect();
    let targets: Vec<Vec<f64>> = (0..2).map(|i| random_vec(cfg.output_len(), 1.0, 200 + i)).collect();
    let batch: Vec<(&[f64], &[f64])> = inputs.iter().zip(&targets).map(|(x, y)| (&x[..], &y[..])).collect();

    let (_, grads) = gradients(&state, &batch, &SquaredError).unwrap();
    let base = patterns(&state, &inputs);
    let mut probe = state.clone();
    let names: Vec<String> = state.groups().into_iter().map(|(n, _)| n).collect();
    let mut out = Vec::new();
    for (gi, name) in names.iter().enumerate() {
        let ad = grads.groups()[gi].1.clone();
        let (mut diff2, mut ad2, mut fd2, mut skipped) = (0.0, 0.0, 0.0, 0);
        for (i, &a) in ad.iter().enumerate() {
            let orig = state.groups()[gi].1[i];
            probe.groups_mut()[gi].1[i] = orig + h;
            let up = batch_loss(&probe, &batch, &SquaredError).unwrap();
            let crossed_up = patterns(&probe, &inputs) != base;
            probe.groups_mut()[gi].1[i] = orig - h;
            let down = batch_loss(&probe, &batch, &SquaredError).unwrap();
            let crossed_down = patterns(&probe, &inputs) != base;
            probe.groups_mut()[gi].1[i] = orig;
            if crossed_up || crossed_down {
                skipped += 1;
                continue;
            }
            let fd = (up - down) / (2.0 * h);
            diff2 += (a - fd).powi(2);
            ad2 += a * a;
            fd2 += fd * fd;
        }
        // The imaginary output bias has an exactly zero gradient (a constant
        // imaginary spectrum inverts to a purely imaginary delta), so the
        // scale gets an absolute floor.
        let scale = ad2.sqrt().max(fd2.sqrt()).max(1e-4);
        let rel_err = diff2.sqrt() / scale;
        out.push(GroupCheck { name: name.clone(), rel_err, skipped });
    }
    out
}
