//! Forward pass and reverse-mode gradients.
//!
//! Token grids are stored token-major, `[token][embed]`. Spectral mixing
//! moves to channel-major `[embed][token]` for the FFTs and back.

use rayon::prelude::*;
use rustfft::num_complex::Complex;

use super::layers::{
    gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, softshrink,
    softshrink_grad, LnCache,
};
use super::spectral::Fft2;
use super::{Activation, BlockParams, ModelConfig, ModelError, ModelState, Objective};
use crate::Scalar;

/// Samples processed concurrently before their gradients are folded into
/// the running sum, in order.
const GRAD_CHUNK: usize = 16;

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), ModelError> {
    if expected == found {
        Ok(())
    } else {
        Err(ModelError::ShapeMismatch {
            what,
            expected,
            found,
        })
    }
}

fn plan<T: Scalar>(cfg: &ModelConfig) -> Fft2<T> {
    Fft2::new(cfg.token_rows(), cfg.token_cols())
}

/// `[channels][n_lat][n_lon]` field to `[token][channels * p * p]` patches.
fn patchify<T: Scalar>(field: &[T], channels: usize, cfg: &ModelConfig) -> Vec<T> {
    let p = cfg.patch_size;
    let (th, tw) = (cfg.token_rows(), cfg.token_cols());
    let per = channels * p * p;
    let mut out = vec![T::zero(); th * tw * per];
    for c in 0..channels {
        for i in 0..cfg.n_lat {
            for j in 0..cfg.n_lon {
                let n = (i / p) * tw + j / p;
                let k = c * p * p + (i % p) * p + j % p;
                out[n * per + k] = field[(c * cfg.n_lat + i) * cfg.n_lon + j];
            }
        }
    }
    out
}

fn unpatchify<T: Scalar>(tokens: &[T], channels: usize, cfg: &ModelConfig) -> Vec<T> {
    let p = cfg.patch_size;
    let tw = cfg.token_cols();
    let per = channels * p * p;
    let mut out = vec![T::zero(); channels * cfg.n_lat * cfg.n_lon];
    for c in 0..channels {
        for i in 0..cfg.n_lat {
            for j in 0..cfg.n_lon {
                let n = (i / p) * tw + j / p;
                let k = c * p * p + (i % p) * p + j % p;
                out[(c * cfg.n_lat + i) * cfg.n_lon + j] = tokens[n * per + k];
            }
        }
    }
    out
}

fn to_channel_major<T: Copy>(x: &[T], n: usize, d: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for c in 0..d {
        out.extend((0..n).map(|t| x[t * d + c]));
    }
    out
}

fn to_token_major<T: Copy>(x: &[T], n: usize, d: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for t in 0..n {
        out.extend((0..d).map(|c| x[c * n + t]));
    }
    out
}

fn activate<T: Scalar>(act: Activation, x: T) -> T {
    match act {
        Activation::Relu => x.max(T::zero()),
        Activation::Identity => x,
    }
}

fn activate_grad<T: Scalar>(act: Activation, x: T) -> T {
    match act {
        Activation::Relu if x <= T::zero() => T::zero(),
        _ => T::one(),
    }
}

/// Complex block-diagonal product `out[o] = b[o] + sum_i W[i][o] x[i]` for
/// every diagonal block, at one frequency.
fn block_diag<T: Scalar>(
    x: impl Fn(usize) -> Complex<T>,
    w_re: &[T],
    w_im: &[T],
    b_re: &[T],
    b_im: &[T],
    cfg: &ModelConfig,
    out: &mut [Complex<T>],
) {
    let bs = cfg.block_size();
    for m in 0..cfg.n_freq_blocks {
        for o in 0..bs {
            let d = m * bs + o;
            let mut acc = Complex::new(b_re[d], b_im[d]);
            for i in 0..bs {
                let wi = (m * bs + i) * bs + o;
                acc += Complex::new(w_re[wi], w_im[wi]) * x(m * bs + i);
            }
            out[d] = acc;
        }
    }
}

struct SpectralCache<T> {
    /// `[embed][token]`
    u_hat: Vec<Complex<T>>,
    /// `[token][embed]` pre-activation, activation, second pre-shrink.
    a1: Vec<Complex<T>>,
    h1: Vec<Complex<T>>,
    a2: Vec<Complex<T>>,
}

fn spectral_forward<T: Scalar>(
    u: &[T],
    p: &BlockParams<T>,
    cfg: &ModelConfig,
    fft: &Fft2<T>,
) -> (Vec<T>, SpectralCache<T>) {
    let n = cfg.n_tokens();
    let d = cfg.embed_dim;
    let lambda = T::of(cfg.softshrink_lambda);
    let u_hat = fft.forward_real(&to_channel_major(u, n, d));
    let mut a1 = vec![Complex::default(); n * d];
    let mut h1 = vec![Complex::default(); n * d];
    let mut a2 = vec![Complex::default(); n * d];
    let mut s = vec![Complex::default(); n * d];
    for k in 0..n {
        let row = k * d..(k + 1) * d;
        block_diag(
            |c| u_hat[c * n + k],
            &p.spec_w1_re,
            &p.spec_w1_im,
            &p.spec_b1_re,
            &p.spec_b1_im,
            cfg,
            &mut a1[row.clone()],
        );
        for c in row.clone() {
            h1[c] = Complex::new(activate(cfg.activation, a1[c].re), activate(cfg.activation, a1[c].im));
        }
        let h1k = &h1[row.clone()];
        block_diag(
            |c| h1k[c],
            &p.spec_w2_re,
            &p.spec_w2_im,
            &p.spec_b2_re,
            &p.spec_b2_im,
            cfg,
            &mut a2[row.clone()],
        );
        for c in 0..d {
            let z = a2[k * d + c];
            s[c * n + k] = Complex::new(softshrink(z.re, lambda), softshrink(z.im, lambda));
        }
    }
    let y = to_token_major(&fft.inverse_real(s), n, d);
    (y, SpectralCache { u_hat, a1, h1, a2 })
}

fn spectral_backward<T: Scalar>(
    gy: &[T],
    cache: &SpectralCache<T>,
    p: &BlockParams<T>,
    g: &mut BlockParams<T>,
    cfg: &ModelConfig,
    fft: &Fft2<T>,
) -> Vec<T> {
    let n = cfg.n_tokens();
    let d = cfg.embed_dim;
    let bs = cfg.block_size();
    let lambda = T::of(cfg.softshrink_lambda);
    let inv_n = T::one() / T::of_usize(n);
    let g_s = fft.forward_real(&to_channel_major(gy, n, d));
    let mut g_u = vec![Complex::default(); n * d];
    let mut g_a2 = vec![Complex::default(); d];
    let mut g_a1 = vec![Complex::default(); d];
    for k in 0..n {
        for c in 0..d {
            let z = cache.a2[k * d + c];
            let gs = g_s[c * n + k] * inv_n;
            g_a2[c] = Complex::new(gs.re * softshrink_grad(z.re, lambda), gs.im * softshrink_grad(z.im, lambda));
        }
        let h1 = &cache.h1[k * d..(k + 1) * d];
        let a1 = &cache.a1[k * d..(k + 1) * d];
        for m in 0..cfg.n_freq_blocks {
            for i in 0..bs {
                let ci = m * bs + i;
                let mut g_h = Complex::<T>::default();
                for o in 0..bs {
                    let co = m * bs + o;
                    let wi = (m * bs + i) * bs + o;
                    let go = g_a2[co];
                    // gW += conj(h) * g, gh += conj(W) * g
                    g.spec_w2_re[wi] += h1[ci].re * go.re + h1[ci].im * go.im;
                    g.spec_w2_im[wi] += h1[ci].re * go.im - h1[ci].im * go.re;
                    g_h += Complex::new(p.spec_w2_re[wi], p.spec_w2_im[wi]).conj() * go;
                }
                g_a1[ci] = Complex::new(
                    g_h.re * activate_grad(cfg.activation, a1[ci].re),
                    g_h.im * activate_grad(cfg.activation, a1[ci].im),
                );
            }
        }
        for c in 0..d {
            g.spec_b2_re[c] += g_a2[c].re;
            g.spec_b2_im[c] += g_a2[c].im;
            g.spec_b1_re[c] += g_a1[c].re;
            g.spec_b1_im[c] += g_a1[c].im;
        }
        for m in 0..cfg.n_freq_blocks {
            for i in 0..bs {
                let ci = m * bs + i;
                let uk = cache.u_hat[ci * n + k];
                let mut g_in = Complex::<T>::default();
                for o in 0..bs {
                    let go = g_a1[m * bs + o];
                    let wi = (m * bs + i) * bs + o;
                    g.spec_w1_re[wi] += uk.re * go.re + uk.im * go.im;
                    g.spec_w1_im[wi] += uk.re * go.im - uk.im * go.re;
                    g_in += Complex::new(p.spec_w1_re[wi], p.spec_w1_im[wi]).conj() * go;
                }
                g_u[ci * n + k] = g_in;
            }
        }
    }
    fft.transform(&mut g_u, true);
    let g_u_re: Vec<T> = g_u.into_iter().map(|c| c.re).collect();
    to_token_major(&g_u_re, n, d)
}

struct BlockCache<T> {
    ln1: LnCache<T>,
    spectral: SpectralCache<T>,
    ln2: LnCache<T>,
    v: Vec<T>,
    m1: Vec<T>,
    act: Vec<T>,
}

fn block_forward<T: Scalar>(
    x: &[T],
    p: &BlockParams<T>,
    cfg: &ModelConfig,
    fft: &Fft2<T>,
) -> (Vec<T>, BlockCache<T>) {
    let n = cfg.n_tokens();
    let d = cfg.embed_dim;
    let hid = cfg.mlp_hidden();
    let (u, ln1) = layer_norm(x, n, d, &p.norm1_scale, &p.norm1_shift);
    let (y, spectral) = spectral_forward(&u, p, cfg, fft);
    let z: Vec<T> = x.iter().zip(&y).map(|(&a, &b)| a + b).collect();
    let (v, ln2) = layer_norm(&z, n, d, &p.norm2_scale, &p.norm2_shift);
    let m1 = linear(&v, n, d, &p.mlp_w1, &p.mlp_b1, hid);
    let act: Vec<T> = m1.iter().map(|&a| gelu(a)).collect();
    let m2 = linear(&act, n, hid, &p.mlp_w2, &p.mlp_b2, d);
    let out = z.iter().zip(&m2).map(|(&a, &b)| a + b).collect();
    (
        out,
        BlockCache {
            ln1,
            spectral,
            ln2,
            v,
            m1,
            act,
        },
    )
}

fn block_backward<T: Scalar>(
    g_out: &[T],
    cache: &BlockCache<T>,
    p: &BlockParams<T>,
    g: &mut BlockParams<T>,
    cfg: &ModelConfig,
    fft: &Fft2<T>,
) -> Vec<T> {
    let n = cfg.n_tokens();
    let d = cfg.embed_dim;
    let hid = cfg.mlp_hidden();
    let g_act = linear_backward(&cache.act, g_out, n, hid, d, &p.mlp_w2, &mut g.mlp_w2, &mut g.mlp_b2, true);
    let g_m1: Vec<T> = g_act.iter().zip(&cache.m1).map(|(&ga, &m)| ga * gelu_grad(m)).collect();
    let g_v = linear_backward(&cache.v, &g_m1, n, d, hid, &p.mlp_w1, &mut g.mlp_w1, &mut g.mlp_b1, true);
    let g_z_ln = layer_norm_backward(&g_v, &cache.ln2, d, &p.norm2_scale, &mut g.norm2_scale, &mut g.norm2_shift);
    let g_z: Vec<T> = g_out.iter().zip(&g_z_ln).map(|(&a, &b)| a + b).collect();
    let g_u = spectral_backward(&g_z, &cache.spectral, p, g, cfg, fft);
    let g_x_ln = layer_norm_backward(&g_u, &cache.ln1, d, &p.norm1_scale, &mut g.norm1_scale, &mut g.norm1_shift);
    g_z.iter().zip(&g_x_ln).map(|(&a, &b)| a + b).collect()
}

/// Patch embedding plus positional encoding: `[token][embed]`.
pub fn patch_embed<T: Scalar>(input: &[T], state: &ModelState<T>) -> Result<Vec<T>, ModelError> {
    let cfg = &state.config;
    check_len("input field", cfg.input_len(), input.len())?;
    Ok(embed_patches(&patchify(input, cfg.in_channels, cfg), state))
}

fn embed_patches<T: Scalar>(patches: &[T], state: &ModelState<T>) -> Vec<T> {
    let cfg = &state.config;
    let mut tok = linear(
        patches,
        cfg.n_tokens(),
        cfg.patch_dim(),
        &state.embed_w,
        &state.embed_b,
        cfg.embed_dim,
    );
    for (t, &p) in tok.iter_mut().zip(&state.pos) {
        *t += p;
    }
    tok
}

/// Token-mixing branch of a block: inverse FFT of the shrunk two-layer
/// complex MLP applied to the FFT of `tokens`, real part.
pub fn spectral_mix<T: Scalar>(
    tokens: &[T],
    block: &BlockParams<T>,
    cfg: &ModelConfig,
) -> Result<Vec<T>, ModelError> {
    check_len("token grid", cfg.n_tokens() * cfg.embed_dim, tokens.len())?;
    Ok(spectral_forward(tokens, block, cfg, &plan(cfg)).0)
}

/// One full block: `z = x + mix(norm1(x))`, `y = z + mlp(norm2(z))`.
pub fn afno_block<T: Scalar>(
    tokens: &[T],
    block: &BlockParams<T>,
    cfg: &ModelConfig,
) -> Result<Vec<T>, ModelError> {
    check_len("token grid", cfg.n_tokens() * cfg.embed_dim, tokens.len())?;
    Ok(block_forward(tokens, block, cfg, &plan(cfg)).0)
}

/// Final normalization, linear head and un-patching.
pub fn decode<T: Scalar>(tokens: &[T], state: &ModelState<T>) -> Result<Vec<T>, ModelError> {
    let cfg = &state.config;
    check_len("token grid", cfg.n_tokens() * cfg.embed_dim, tokens.len())?;
    let (feat, _) = layer_norm(tokens, cfg.n_tokens(), cfg.embed_dim, &state.norm_scale, &state.norm_shift);
    let out = linear(&feat, cfg.n_tokens(), cfg.embed_dim, &state.head_w, &state.head_b, cfg.head_dim());
    Ok(unpatchify(&out, cfg.out_channels, cfg))
}

struct ForwardCache<T> {
    patches: Vec<T>,
    blocks: Vec<BlockCache<T>>,
    final_ln: LnCache<T>,
    feat: Vec<T>,
}

fn forward_cached<T: Scalar>(
    input: &[T],
    state: &ModelState<T>,
    fft: &Fft2<T>,
) -> Result<(Vec<T>, ForwardCache<T>), ModelError> {
    let cfg = &state.config;
    check_len("input field", cfg.input_len(), input.len())?;
    let n = cfg.n_tokens();
    let d = cfg.embed_dim;
    let patches = patchify(input, cfg.in_channels, cfg);
    let mut x = embed_patches(&patches, state);
    let mut blocks = Vec::with_capacity(cfg.n_blocks);
    for (b, p) in state.blocks.iter().enumerate() {
        let (y, cache) = block_forward(&x, p, cfg, fft);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { block: Some(b) });
        }
        blocks.push(cache);
        x = y;
    }
    let (feat, final_ln) = layer_norm(&x, n, d, &state.norm_scale, &state.norm_shift);
    let out = linear(&feat, n, d, &state.head_w, &state.head_b, cfg.head_dim());
    let pred = unpatchify(&out, cfg.out_channels, cfg);
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite { block: None });
    }
    Ok((
        pred,
        ForwardCache {
            patches,
            blocks,
            final_ln,
            feat,
        },
    ))
}

/// Predicted field `[out_channels][n_lat][n_lon]` for a normalized input
/// `[in_channels][n_lat][n_lon]`.
pub fn forward<T: Scalar>(input: &[T], state: &ModelState<T>) -> Result<Vec<T>, ModelError> {
    Ok(forward_cached(input, state, &plan(&state.config))?.0)
}

fn sample_gradients<T: Scalar>(
    state: &ModelState<T>,
    input: &[T],
    target: &[T],
    objective: &(impl Objective<T> + ?Sized),
    fft: &Fft2<T>,
) -> Result<(T, ModelState<T>), ModelError> {
    let cfg = &state.config;
    check_len("target field", cfg.output_len(), target.len())?;
    let (pred, cache) = forward_cached(input, state, fft)?;
    let (loss, g_pred) = objective.value_and_grad(&pred, target);
    let n = cfg.n_tokens();
    let d = cfg.embed_dim;
    let mut g = state.zeros_like();
    let g_out = patchify(&g_pred, cfg.out_channels, cfg);
    let g_feat = linear_backward(&cache.feat, &g_out, n, d, cfg.head_dim(), &state.head_w, &mut g.head_w, &mut g.head_b, true);
    let mut g_x = layer_norm_backward(&g_feat, &cache.final_ln, d, &state.norm_scale, &mut g.norm_scale, &mut g.norm_shift);
    for b in (0..cfg.n_blocks).rev() {
        g_x = block_backward(&g_x, &cache.blocks[b], &state.blocks[b], &mut g.blocks[b], cfg, fft);
    }
    for (gp, &gx) in g.pos.iter_mut().zip(&g_x) {
        *gp += gx;
    }
    linear_backward(&cache.patches, &g_x, n, cfg.patch_dim(), d, &state.embed_w, &mut g.embed_w, &mut g.embed_b, false);
    Ok((loss, g))
}

/// Mean loss over the batch and its exact gradient with respect to every
/// parameter. Per-sample work runs in parallel; the reduction follows batch
/// order, so the result does not depend on the thread count.
pub fn gradients<T: Scalar>(
    state: &ModelState<T>,
    batch: &[(&[T], &[T])],
    objective: &(impl Objective<T> + ?Sized + Sync),
) -> Result<(T, ModelState<T>), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let fft = plan(&state.config);
    let mut total = state.zeros_like();
    let mut loss = T::zero();
    for chunk in batch.chunks(GRAD_CHUNK) {
        let parts: Vec<_> = chunk
            .par_iter()
            .map(|(x, y)| sample_gradients(state, x, y, objective, &fft))
            .collect();
        for part in parts {
            let (l, g) = part?;
            loss += l;
            total.add_scaled(&g, T::one());
        }
    }
    let inv_b = T::one() / T::of_usize(batch.len());
    total.scale(inv_b);
    if let Some(group) = total.first_non_finite() {
        return Err(ModelError::NonFiniteGradient(group));
    }
    Ok((loss * inv_b, total))
}

/// Which side of every non-smooth point the network sits on for `input`:
/// ReLU sign of each spectral pre-activation component and, when `lambda > 0`,
/// whether each shrinkage input clears the threshold. Two parameter settings
/// with equal patterns lie in the same smooth piece.
pub fn kink_pattern<T: Scalar>(input: &[T], state: &ModelState<T>) -> Result<Vec<bool>, ModelError> {
    let cfg = &state.config;
    let (_, cache) = forward_cached(input, state, &plan(cfg))?;
    let lambda = T::of(cfg.softshrink_lambda);
    let mut bits = Vec::new();
    for b in &cache.blocks {
        if cfg.activation == Activation::Relu {
            bits.extend(b.spectral.a1.iter().flat_map(|z| [z.re > T::zero(), z.im > T::zero()]));
        }
        if lambda > T::zero() {
            bits.extend(b.spectral.a2.iter().flat_map(|z| [z.re.abs() > lambda, z.im.abs() > lambda]));
        }
    }
    Ok(bits)
}

/// Mean loss without gradients.
pub fn batch_loss<T: Scalar>(
    state: &ModelState<T>,
    batch: &[(&[T], &[T])],
    objective: &(impl Objective<T> + ?Sized + Sync),
) -> Result<T, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let fft = plan(&state.config);
    let losses = batch
        .par_iter()
        .map(|(x, y)| {
            let (pred, _) = forward_cached(x, state, &fft)?;
            Ok(objective.value_and_grad(&pred, y).0)
        })
        .collect::<Result<Vec<T>, ModelError>>()?;
    Ok(losses.into_iter().sum::<T>() / T::of_usize(batch.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patchify_roundtrip_with_patch_two() {
        let mut cfg = ModelConfig::tiny();
        cfg.patch_size = 2;
        let field: Vec<f64> = (0..cfg.input_len()).map(|i| i as f64).collect();
        let tokens = patchify(&field, cfg.in_channels, &cfg);
        assert_eq!(tokens.len(), cfg.n_tokens() * cfg.patch_dim());
        assert_eq!(unpatchify(&tokens, cfg.in_channels, &cfg), field);
    }

    #[test]
    fn layout_conversions_are_inverse() {
        let x: Vec<u32> = (0..12).collect();
        assert_eq!(to_token_major(&to_channel_major(&x, 4, 3), 4, 3), x);
    }
}
