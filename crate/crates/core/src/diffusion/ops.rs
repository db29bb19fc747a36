//! Layer primitives with explicit backward passes. Activations are single
//! items laid out channel-planar (`C × H × W`).

use super::real::Real;

/// `cin·k·k × H·W` patch matrix for a stride-1 convolution with `k/2` zero padding.
pub fn im2col<T: Real>(x: &[T], cin: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let hw = h * w;
    let pad = (k / 2) as isize;
    let mut col = vec![T::zero(); cin * k * k * hw];
    for ci in 0..cin {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = sy as usize * w;
                    let dst = y * w;
                    let sx0 = (x_lo as isize + dx) as usize;
                    row[dst + x_lo..dst + x_hi]
                        .copy_from_slice(&plane[src + sx0..src + sx0 + (x_hi - x_lo)]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-add the patch matrix back onto the input grid.
pub fn col2im<T: Real>(col: &[T], cin: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let hw = h * w;
    let pad = (k / 2) as isize;
    let mut x = vec![T::zero(); cin * hw];
    for ci in 0..cin {
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                let plane = &mut x[ci * hw..(ci + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = sy as usize * w;
                    let dst = y * w;
                    let sx0 = (x_lo as isize + dx) as usize;
                    for (p, q) in plane[src + sx0..src + sx0 + (x_hi - x_lo)]
                        .iter_mut()
                        .zip(&row[dst + x_lo..dst + x_hi])
                    {
                        *p = *p + *q;
                    }
                }
            }
        }
    }
    x
}

/// Saved input of a convolution: the patch matrix (k > 1) or the raw input (k = 1).
pub struct ConvCache<T> {
    pub col: Vec<T>,
}

/// `y = W·col(x) + b`, `W` is `cout × cin·k·k`.
#[allow(clippy::too_many_arguments)]
pub fn conv_forward<T: Real>(
    weight: &[T],
    bias: &[T],
    x: &[T],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
) -> (Vec<T>, ConvCache<T>) {
    let hw = h * w;
    let col = if k == 1 {
        x.to_vec()
    } else {
        im2col(x, cin, h, w, k)
    };
    let mut y = vec![T::zero(); cout * hw];
    for (o, b) in bias.iter().enumerate() {
        y[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v = *b);
    }
    super::real::matmul(cout, cin * k * k, hw, weight, &col, T::one(), &mut y);
    (y, ConvCache { col })
}

/// Accumulates `dW += dY·colᵀ`, `db += Σ dY`; returns `dX` when `need_dx`.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Real>(
    weight: &[T],
    cache: &ConvCache<T>,
    dy: &[T],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
    dweight: Option<&mut [T]>,
    dbias: Option<&mut [T]>,
    need_dx: bool,
) -> Option<Vec<T>> {
    let hw = h * w;
    let kk = cin * k * k;
    if let Some(dw) = dweight {
        // (cout × hw) · (hw × kk), colᵀ read with swapped strides
        T::gemm(
            cout,
            hw,
            kk,
            T::one(),
            dy,
            hw as isize,
            1,
            &cache.col,
            1,
            hw as isize,
            T::one(),
            dw,
            kk as isize,
            1,
        );
    }
    if let Some(db) = dbias {
        for o in 0..cout {
            db[o] = db[o] + dy[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
        }
    }
    if !need_dx {
        return None;
    }
    let mut dcol = vec![T::zero(); kk * hw];
    // (kk × cout) · (cout × hw), Wᵀ read with swapped strides
    T::gemm(
        kk,
        cout,
        hw,
        T::one(),
        weight,
        1,
        kk as isize,
        dy,
        hw as isize,
        1,
        T::zero(),
        &mut dcol,
        hw as isize,
        1,
    );
    Some(if k == 1 {
        dcol
    } else {
        col2im(&dcol, cin, h, w, k)
    })
}

pub const GN_EPS: f64 = 1e-5;

pub struct GroupNormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

pub fn group_norm_forward<T: Real>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    channels: usize,
    groups: usize,
    hw: usize,
) -> (Vec<T>, GroupNormCache<T>) {
    let cpg = channels / groups;
    let n = cpg * hw;
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(groups);
    let mut y = vec![T::zero(); x.len()];
    for g in 0..groups {
        let span = g * n..(g + 1) * n;
        let xs = &x[span.clone()];
        let mean = xs.iter().map(|v| v.f64()).sum::<f64>() / n as f64;
        let var = xs.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / n as f64;
        let is = 1.0 / (var + GN_EPS).sqrt();
        inv_std.push(T::lit(is));
        let (m, is) = (T::lit(mean), T::lit(is));
        for (dst, &v) in xhat[span.clone()].iter_mut().zip(xs) {
            *dst = (v - m) * is;
        }
        for c in 0..cpg {
            let ch = g * cpg + c;
            let (ga, be) = (gamma[ch], beta[ch]);
            for i in ch * hw..(ch + 1) * hw {
                y[i] = xhat[i] * ga + be;
            }
        }
    }
    (y, GroupNormCache { xhat, inv_std })
}

#[allow(clippy::too_many_arguments)]
pub fn group_norm_backward<T: Real>(
    cache: &GroupNormCache<T>,
    gamma: &[T],
    dy: &[T],
    channels: usize,
    groups: usize,
    hw: usize,
    dgamma: Option<&mut [T]>,
    dbeta: Option<&mut [T]>,
) -> Vec<T> {
    if let Some(dg) = dgamma {
        for c in 0..channels {
            let s: T = (c * hw..(c + 1) * hw).map(|i| dy[i] * cache.xhat[i]).sum();
            dg[c] = dg[c] + s;
        }
    }
    if let Some(db) = dbeta {
        for c in 0..channels {
            db[c] = db[c] + dy[c * hw..(c + 1) * hw].iter().copied().sum::<T>();
        }
    }
    let cpg = channels / groups;
    let n = cpg * hw;
    let nt = T::lit(n as f64);
    let mut dx = vec![T::zero(); dy.len()];
    for g in 0..groups {
        let mut sum_d = T::zero();
        let mut sum_dx = T::zero();
        for c in 0..cpg {
            let ch = g * cpg + c;
            for i in ch * hw..(ch + 1) * hw {
                let d = dy[i] * gamma[ch];
                dx[i] = d;
                sum_d = sum_d + d;
                sum_dx = sum_dx + d * cache.xhat[i];
            }
        }
        let scale = cache.inv_std[g] / nt;
        for i in g * n..(g + 1) * n {
            dx[i] = scale * (nt * dx[i] - sum_d - cache.xhat[i] * sum_dx);
        }
    }
    dx
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn silu<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

/// `dy · d/dx[x·σ(x)]`, evaluated at the pre-activation `x`.
pub fn silu_backward<T: Real>(x: &[T], dy: &[T]) -> Vec<T> {
    x.iter()
        .zip(dy)
        .map(|(&v, &d)| {
            let s = sigmoid(v);
            d * s * (T::one() + v * (T::one() - s))
        })
        .collect()
}

/// 2×2 average pooling; `h` and `w` must be even.
pub fn avg_pool2<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let q = T::lit(0.25);
    let mut y = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = ch * h * w + 2 * oy * w + 2 * ox;
                y[(ch * oh + oy) * ow + ox] =
                    (x[base] + x[base + 1] + x[base + w] + x[base + w + 1]) * q;
            }
        }
    }
    y
}

pub fn avg_pool2_backward<T: Real>(dy: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let q = T::lit(0.25);
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = dy[(ch * oh + oy) * ow + ox] * q;
                let base = ch * h * w + 2 * oy * w + 2 * ox;
                dx[base] = g;
                dx[base + 1] = g;
                dx[base + w] = g;
                dx[base + w + 1] = g;
            }
        }
    }
    dx
}

/// Nearest-neighbor 2× upsampling of a `c × h × w` input.
pub fn upsample2<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut y = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                y[(ch * oh + oy) * ow + ox] = x[(ch * h + oy / 2) * w + ox / 2];
            }
        }
    }
    y
}

pub fn upsample2_backward<T: Real>(dy: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let i = (ch * h + oy / 2) * w + ox / 2;
                dx[i] = dx[i] + dy[(ch * oh + oy) * ow + ox];
            }
        }
    }
    dx
}

/// `y = W·x + b` with `W` of shape `fout × fin`.
pub fn linear_forward<T: Real>(weight: &[T], bias: &[T], x: &[T]) -> Vec<T> {
    let fout = bias.len();
    let mut y = bias.to_vec();
    super::real::matmul(fout, x.len(), 1, weight, x, T::one(), &mut y);
    y
}

pub fn linear_backward<T: Real>(
    weight: &[T],
    x: &[T],
    dy: &[T],
    dweight: Option<&mut [T]>,
    dbias: Option<&mut [T]>,
) -> Vec<T> {
    let (fout, fin) = (dy.len(), x.len());
    if let Some(dw) = dweight {
        for o in 0..fout {
            for i in 0..fin {
                dw[o * fin + i] = dw[o * fin + i] + dy[o] * x[i];
            }
        }
    }
    if let Some(db) = dbias {
        for o in 0..fout {
            db[o] = db[o] + dy[o];
        }
    }
    (0..fin)
        .map(|i| (0..fout).map(|o| weight[o * fin + i] * dy[o]).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution with zero padding.
    fn conv_naive(
        wt: &[f64],
        b: &[f64],
        x: &[f64],
        cin: usize,
        cout: usize,
        h: usize,
        w: usize,
        k: usize,
    ) -> Vec<f64> {
        let pad = (k / 2) as isize;
        let mut y = vec![0.0; cout * h * w];
        for o in 0..cout {
            for yy in 0..h {
                for xx in 0..w {
                    let mut acc = b[o];
                    for i in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = yy as isize + ky as isize - pad;
                                let sx = xx as isize + kx as isize - pad;
                                if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                    acc += wt[((o * cin + i) * k + ky) * k + kx]
                                        * x[(i * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                    }
                    y[(o * h + yy) * w + xx] = acc;
                }
            }
        }
        y
    }

    fn seq(n: usize, a: f64) -> Vec<f64> {
        (0..n)
            .map(|i| ((i as f64 * a).sin() * 1.3).fract())
            .collect()
    }

    #[test]
    fn conv_matches_naive() {
        let (cin, cout, h, w) = (3, 4, 5, 6);
        for k in [1, 3] {
            let wt = seq(cout * cin * k * k, 0.7);
            let b = seq(cout, 1.9);
            let x = seq(cin * h * w, 0.37);
            let (y, _) = conv_forward(&wt, &b, &x, cin, cout, h, w, k);
            let z = conv_naive(&wt, &b, &x, cin, cout, h, w, k);
            for (p, q) in y.iter().zip(&z) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let (c, h, w) = (2, 4, 5);
        let x = seq(c * h * w, 0.3);
        let r = seq(c * 9 * h * w, 0.11);
        let lhs: f64 = im2col(&x, c, h, w, 3)
            .iter()
            .zip(&r)
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = x
            .iter()
            .zip(&col2im(&r, c, h, w, 3))
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn pool_upsample_adjoint() {
        let (c, h, w) = (2, 4, 6);
        let x = seq(c * h * w, 0.21);
        let r = seq(c * h * w / 4, 0.5);
        let lhs: f64 = avg_pool2(&x, c, h, w)
            .iter()
            .zip(&r)
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = x
            .iter()
            .zip(&avg_pool2_backward(&r, c, h, w))
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let s = seq(c * h * w * 4, 0.9);
        let lhs: f64 = upsample2(&x, c, h, w)
            .iter()
            .zip(&s)
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = x
            .iter()
            .zip(&upsample2_backward(&s, c, h, w))
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn group_norm_output_is_normalized() {
        let (c, g, hw) = (4, 2, 9);
        let x = seq(c * hw, 0.77);
        let (y, _) = group_norm_forward(&x, &[1.0; 4], &[0.0; 4], c, g, hw);
        for gi in 0..g {
            let s = &y[gi * 2 * hw..(gi + 1) * 2 * hw];
            let m: f64 = s.iter().sum::<f64>() / s.len() as f64;
            let v: f64 = s.iter().map(|a| (a - m).powi(2)).sum::<f64>() / s.len() as f64;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }
}
