//! Dense building blocks with hand-written backward passes. Matrices are
//! row-major; `x` is `[rows][n_in]`, weights `[n_in][n_out]`.

use crate::Scalar;

pub const LN_EPS: f64 = 1e-6;

/// `y = x W + b`.
pub fn linear<T: Scalar>(x: &[T], rows: usize, n_in: usize, w: &[T], b: &[T], n_out: usize) -> Vec<T> {
    let mut y = vec![T::zero(); rows * n_out];
    for r in 0..rows {
        let xr = &x[r * n_in..(r + 1) * n_in];
        let yr = &mut y[r * n_out..(r + 1) * n_out];
        yr.copy_from_slice(b);
        for (i, &xi) in xr.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            let wi = &w[i * n_out..(i + 1) * n_out];
            for (yo, &wio) in yr.iter_mut().zip(wi) {
                *yo += xi * wio;
            }
        }
    }
    y
}

/// Accumulates `gW += x^T gy`, `gb += sum_r gy` and returns `gx = gy W^T`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Scalar>(
    x: &[T],
    gy: &[T],
    rows: usize,
    n_in: usize,
    n_out: usize,
    w: &[T],
    gw: &mut [T],
    gb: &mut [T],
    want_gx: bool,
) -> Vec<T> {
    let mut gx = if want_gx { vec![T::zero(); rows * n_in] } else { Vec::new() };
    for r in 0..rows {
        let xr = &x[r * n_in..(r + 1) * n_in];
        let gyr = &gy[r * n_out..(r + 1) * n_out];
        for (gbo, &g) in gb.iter_mut().zip(gyr) {
            *gbo += g;
        }
        for i in 0..n_in {
            let wi = &w[i * n_out..(i + 1) * n_out];
            let gwi = &mut gw[i * n_out..(i + 1) * n_out];
            let xi = xr[i];
            let mut acc = T::zero();
            for o in 0..n_out {
                gwi[o] += xi * gyr[o];
                acc += gyr[o] * wi[o];
            }
            if want_gx {
                gx[r * n_in + i] = acc;
            }
        }
    }
    gx
}

pub struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

/// Per-row layer normalization with learned scale and shift.
pub fn layer_norm<T: Scalar>(x: &[T], rows: usize, d: usize, scale: &[T], shift: &[T]) -> (Vec<T>, LnCache<T>) {
    let eps = T::of(LN_EPS);
    let inv_d = T::one() / T::of_usize(d);
    let mut y = vec![T::zero(); rows * d];
    let mut xhat = vec![T::zero(); rows * d];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().copied().sum::<T>() * inv_d;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for i in 0..d {
            let h = (xr[i] - mean) * rs;
            xhat[r * d + i] = h;
            y[r * d + i] = h * scale[i] + shift[i];
        }
    }
    (y, LnCache { xhat, rstd })
}

pub fn layer_norm_backward<T: Scalar>(
    gy: &[T],
    cache: &LnCache<T>,
    d: usize,
    scale: &[T],
    gscale: &mut [T],
    gshift: &mut [T],
) -> Vec<T> {
    let rows = cache.rstd.len();
    let inv_d = T::one() / T::of_usize(d);
    let mut gx = vec![T::zero(); rows * d];
    let mut gh = vec![T::zero(); d];
    for r in 0..rows {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let g = &gy[r * d..(r + 1) * d];
        let mut sum_gh = T::zero();
        let mut sum_ghx = T::zero();
        for i in 0..d {
            gscale[i] += g[i] * xh[i];
            gshift[i] += g[i];
            gh[i] = g[i] * scale[i];
            sum_gh += gh[i];
            sum_ghx += gh[i] * xh[i];
        }
        let mean_gh = sum_gh * inv_d;
        let mean_ghx = sum_ghx * inv_d;
        for i in 0..d {
            gx[r * d + i] = cache.rstd[r] * (gh[i] - mean_gh - xh[i] * mean_ghx);
        }
    }
    gx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let inner = T::of(GELU_C) * (x + T::of(GELU_K) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let c = T::of(GELU_C);
    let k = T::of(GELU_K);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * k * x * x)
}

/// `sign(x) * max(|x| - lambda, 0)`; the identity when `lambda == 0`.
pub fn softshrink<T: Scalar>(x: T, lambda: T) -> T {
    if lambda == T::zero() {
        x
    } else if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        T::zero()
    }
}

pub fn softshrink_grad<T: Scalar>(x: T, lambda: T) -> T {
    if lambda == T::zero() || x.abs() > lambda {
        T::one()
    } else {
        T::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let fd = numeric(gelu::<f64>, x);
            assert!((gelu_grad(x) - fd).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn softshrink_cases() {
        assert_eq!(softshrink(0.3, 0.0), 0.3);
        assert_eq!(softshrink(-0.3, 0.0), -0.3);
        assert_eq!(softshrink(0.3, 0.1), 0.3 - 0.1);
        assert_eq!(softshrink(-0.3, 0.1), -0.3 + 0.1);
        assert_eq!(softshrink(0.05, 0.1), 0.0);
        assert_eq!(softshrink_grad(0.05, 0.1), 0.0);
    }

    #[test]
    fn layer_norm_backward_matches_finite_difference() {
        let d = 5;
        let x: Vec<f64> = vec![0.3, -1.2, 2.0, 0.7, -0.1, 1.0, 1.1, -0.4, 0.0, 0.9];
        let scale = vec![1.0, 0.5, -0.3, 2.0, 1.5];
        let shift = vec![0.1; 5];
        let gy: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin()).collect();
        let loss = |x: &[f64]| -> f64 {
            let (y, _) = layer_norm(x, 2, d, &scale, &shift);
            y.iter().zip(&gy).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = layer_norm(&x, 2, d, &scale, &shift);
        let mut gs = vec![0.0; d];
        let mut gb = vec![0.0; d];
        let gx = layer_norm_backward(&gy, &cache, d, &scale, &mut gs, &mut gb);
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += 1e-6;
            let mut xm = x.clone();
            xm[i] -= 1e-6;
            let fd = (loss(&xp) - loss(&xm)) / 2e-6;
            assert!((gx[i] - fd).abs() < 1e-6, "{i}: {} vs {fd}", gx[i]);
        }
    }
}
