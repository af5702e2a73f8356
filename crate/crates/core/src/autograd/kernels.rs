//! Forward and backward kernels on raw tensors.

use crate::tensor::{axpy, dot, gemm, Real, Strided, Tensor};

#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv1dGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub len_in: usize,
    pub len_out: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl Conv1dGeom {
    /// Output index range `[lo, hi)` and input offset for tap `k`.
    #[inline]
    fn tap(&self, k: usize) -> (usize, usize, isize) {
        let off = (k * self.dilation) as isize - self.padding as isize;
        let lo = (-off).max(0) as usize;
        let hi = (self.len_in as isize - off).clamp(0, self.len_out as isize) as usize;
        (lo, hi.max(lo), off)
    }
}

/// Each tap is one GEMM: `out[:, lo..hi] += W[:, :, k] · x[:, lo+off..hi+off]`.
pub(crate) fn conv1d_forward<T: Real>(x: &[T], w: &[T], b: Option<&[T]>, g: Conv1dGeom) -> Vec<T> {
    let mut out = vec![T::zero(); g.c_out * g.len_out];
    if let Some(b) = b {
        for (row, &bv) in out.chunks_exact_mut(g.len_out).zip(b) {
            row.fill(bv);
        }
    }
    for k in 0..g.k {
        let (lo, hi, off) = g.tap(k);
        if lo >= hi {
            continue;
        }
        gemm(
            (g.c_out, g.c_in, hi - lo),
            T::one(),
            (
                w,
                Strided {
                    offset: k,
                    rs: g.c_in * g.k,
                    cs: g.k,
                },
            ),
            (x, Strided::rows((lo as isize + off) as usize, g.len_in)),
            T::one(),
            (&mut out, Strided::rows(lo, g.len_out)),
        );
    }
    out
}

/// Returns (grad_x, grad_w, grad_b).
pub(crate) fn conv1d_backward<T: Real>(
    x: &[T],
    w: &[T],
    gout: &[T],
    g: Conv1dGeom,
    need_x: bool,
    need_w: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut gx = if need_x {
        vec![T::zero(); g.c_in * g.len_in]
    } else {
        Vec::new()
    };
    let mut gw = if need_w {
        vec![T::zero(); w.len()]
    } else {
        Vec::new()
    };
    let gb = gout
        .chunks_exact(g.len_out)
        .map(|row| T::of(crate::tensor::sum_f64(row)))
        .collect();
    for k in 0..g.k {
        let (lo, hi, off) = g.tap(k);
        if lo >= hi {
            continue;
        }
        let slo = (lo as isize + off) as usize;
        if need_w {
            // gW[:, :, k] = gout[:, lo..hi] · x[:, slo..]ᵀ
            gemm(
                (g.c_out, hi - lo, g.c_in),
                T::one(),
                (gout, Strided::rows(lo, g.len_out)),
                (x, Strided::cols(slo, g.len_in)),
                T::zero(),
                (
                    &mut gw,
                    Strided {
                        offset: k,
                        rs: g.c_in * g.k,
                        cs: g.k,
                    },
                ),
            );
        }
        if need_x {
            // gx[:, slo..] += W[:, :, k]ᵀ · gout[:, lo..hi]
            gemm(
                (g.c_in, g.c_out, hi - lo),
                T::one(),
                (
                    w,
                    Strided {
                        offset: k,
                        rs: g.k,
                        cs: g.c_in * g.k,
                    },
                ),
                (gout, Strided::rows(lo, g.len_out)),
                T::one(),
                (&mut gx, Strided::rows(slo, g.len_in)),
            );
        }
    }
    (gx, gw, gb)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvT2dGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
}

impl ConvT2dGeom {
    pub fn out_h(&self) -> usize {
        (self.h - 1) * self.sh + self.kh
    }
    pub fn out_w(&self) -> usize {
        (self.w - 1) * self.sw + self.kw
    }
}

/// Weight layout `[c_in, c_out, kh, kw]`.
pub(crate) fn conv_t2d_forward<T: Real>(x: &[T], wt: &[T], g: ConvT2dGeom) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = vec![T::zero(); g.c_out * oh * ow];
    for i in 0..g.c_in {
        for o in 0..g.c_out {
            let kern = &wt[(i * g.c_out + o) * g.kh * g.kw..(i * g.c_out + o + 1) * g.kh * g.kw];
            for hh in 0..g.h {
                let xrow = &x[(i * g.h + hh) * g.w..(i * g.h + hh + 1) * g.w];
                for a in 0..g.kh {
                    let orow_start = (o * oh + hh * g.sh + a) * ow;
                    let krow = &kern[a * g.kw..(a + 1) * g.kw];
                    let orow = &mut out[orow_start..orow_start + ow];
                    for (ww, &xv) in xrow.iter().enumerate() {
                        if xv == T::zero() {
                            continue;
                        }
                        axpy(xv, krow, &mut orow[ww * g.sw..ww * g.sw + g.kw]);
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv_t2d_backward<T: Real>(
    x: &[T],
    wt: &[T],
    gout: &[T],
    g: ConvT2dGeom,
) -> (Vec<T>, Vec<T>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![0.0f64; wt.len()];
    for i in 0..g.c_in {
        for o in 0..g.c_out {
            let base = (i * g.c_out + o) * g.kh * g.kw;
            for hh in 0..g.h {
                for a in 0..g.kh {
                    let orow_start = (o * oh + hh * g.sh + a) * ow;
                    let grow = &gout[orow_start..orow_start + ow];
                    let krow = &wt[base + a * g.kw..base + (a + 1) * g.kw];
                    for ww in 0..g.w {
                        let gslice = &grow[ww * g.sw..ww * g.sw + g.kw];
                        let xi = (i * g.h + hh) * g.w + ww;
                        gx[xi] += T::of(dot(krow, gslice));
                        let xv = x[xi].f64();
                        if xv != 0.0 {
                            for (acc, gv) in gw[base + a * g.kw..base + (a + 1) * g.kw]
                                .iter_mut()
                                .zip(gslice)
                            {
                                *acc += xv * gv.f64();
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gw.into_iter().map(T::of).collect())
}

/// `x [n, d_in] · wᵀ [d_in, d_out] + b`.
pub(crate) fn linear_forward<T: Real>(
    x: &[T],
    w: &[T],
    b: Option<&[T]>,
    n: usize,
    d_in: usize,
    d_out: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); n * d_out];
    if let Some(b) = b {
        out.chunks_exact_mut(d_out)
            .for_each(|row| row.copy_from_slice(b));
    }
    gemm(
        (n, d_in, d_out),
        T::one(),
        (x, Strided::rows(0, d_in)),
        (w, Strided::cols(0, d_in)),
        T::one(),
        (&mut out, Strided::rows(0, d_out)),
    );
    out
}

pub(crate) fn linear_backward<T: Real>(
    x: &[T],
    w: &[T],
    gout: &[T],
    n: usize,
    d_in: usize,
    d_out: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut gx = vec![T::zero(); n * d_in];
    let mut gw = vec![T::zero(); d_out * d_in];
    gemm(
        (n, d_out, d_in),
        T::one(),
        (gout, Strided::rows(0, d_out)),
        (w, Strided::rows(0, d_in)),
        T::zero(),
        (&mut gx, Strided::rows(0, d_in)),
    );
    gemm(
        (d_out, n, d_in),
        T::one(),
        (gout, Strided::cols(0, d_out)),
        (x, Strided::rows(0, d_in)),
        T::zero(),
        (&mut gw, Strided::rows(0, d_in)),
    );
    let mut gb = vec![0.0f64; d_out];
    for row in gout.chunks_exact(d_out) {
        gb.iter_mut().zip(row).for_each(|(a, v)| *a += v.f64());
    }
    (gx, gw, gb.into_iter().map(T::of).collect())
}

/// Softmax of each length-`d` row, max-subtracted.
pub(crate) fn softmax_rows<T: Real>(x: &[T], d: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (row, orow) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut s = 0.0f64;
        for (o, &v) in orow.iter_mut().zip(row) {
            let e = (v - m).exp();
            *o = e;
            s += e.f64();
        }
        let inv = T::of(1.0 / s);
        orow.iter_mut().for_each(|o| *o *= inv);
    }
    out
}

/// Backward of row softmax given its output `y`.
pub(crate) fn softmax_rows_backward<T: Real>(y: &[T], g: &[T], d: usize) -> Vec<T> {
    let mut out = vec![T::zero(); y.len()];
    for ((yr, gr), orow) in y
        .chunks_exact(d)
        .zip(g.chunks_exact(d))
        .zip(out.chunks_exact_mut(d))
    {
        let s = T::of(dot(yr, gr));
        for ((o, &yv), &gv) in orow.iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - s);
        }
    }
    out
}

pub(crate) struct AttentionSaved<T: Real> {
    /// Per-head probabilities, `[heads, n, n]`.
    pub probs: Vec<T>,
}

/// Multi-head scaled dot-product attention on `[n, d]` inputs, heads taken
/// as contiguous column groups.
pub(crate) fn attention_forward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    n: usize,
    d: usize,
    heads: usize,
) -> (Vec<T>, AttentionSaved<T>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![T::zero(); n * d];
    let mut probs = vec![T::zero(); heads * n * n];
    for h in 0..heads {
        let c0 = h * dh;
        let p = &mut probs[h * n * n..(h + 1) * n * n];
        for i in 0..n {
            let qi = &q[i * d + c0..i * d + c0 + dh];
            for j in 0..n {
                p[i * n + j] = T::of(dot(qi, &k[j * d + c0..j * d + c0 + dh]) * scale);
            }
        }
        let sm = softmax_rows(p, n);
        p.copy_from_slice(&sm);
        for i in 0..n {
            for j in 0..n {
                let pij = p[i * n + j];
                axpy(
                    pij,
                    &v[j * d + c0..j * d + c0 + dh],
                    &mut out[i * d + c0..i * d + c0 + dh],
                );
            }
        }
    }
    (out, AttentionSaved { probs })
}

/// Returns (gq, gk, gv).
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    saved: &AttentionSaved<T>,
    gout: &[T],
    n: usize,
    d: usize,
    heads: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut gq = vec![T::zero(); n * d];
    let mut gk = vec![T::zero(); n * d];
    let mut gv = vec![T::zero(); n * d];
    let mut gp = vec![T::zero(); n * n];
    for h in 0..heads {
        let c0 = h * dh;
        let p = &saved.probs[h * n * n..(h + 1) * n * n];
        for i in 0..n {
            let go = &gout[i * d + c0..i * d + c0 + dh];
            for j in 0..n {
                gp[i * n + j] = T::of(dot(go, &v[j * d + c0..j * d + c0 + dh]));
                axpy(p[i * n + j], go, &mut gv[j * d + c0..j * d + c0 + dh]);
            }
        }
        let gs = softmax_rows_backward(p, &gp, n);
        for i in 0..n {
            for j in 0..n {
                let s = gs[i * n + j] * scale;
                if s == T::zero() {
                    continue;
                }
                axpy(
                    s,
                    &k[j * d + c0..j * d + c0 + dh],
                    &mut gq[i * d + c0..i * d + c0 + dh],
                );
                axpy(
                    s,
                    &q[i * d + c0..i * d + c0 + dh],
                    &mut gk[j * d + c0..j * d + c0 + dh],
                );
            }
        }
    }
    (gq, gk, gv)
}

pub(crate) struct LayerNormSaved<T: Real> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

pub(crate) fn layer_norm_forward<T: Real>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    d: usize,
    eps: f64,
) -> (Vec<T>, LayerNormSaved<T>) {
    let rows = x.len() / d;
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = crate::tensor::sum_f64(xr) / d as f64;
        let var = xr.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[r] = T::of(is);
        for c in 0..d {
            let xh = (xr[c].f64() - mean) * is;
            xhat[r * d + c] = T::of(xh);
            out[r * d + c] = T::of(xh * gamma[c].f64() + beta[c].f64());
        }
    }
    (out, LayerNormSaved { xhat, inv_std })
}

/// Returns (gx, ggamma, gbeta).
pub(crate) fn layer_norm_backward<T: Real>(
    gamma: &[T],
    saved: &LayerNormSaved<T>,
    gout: &[T],
    d: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = gout.len() / d;
    let mut gx = vec![T::zero(); gout.len()];
    let mut ggamma = vec![0.0f64; d];
    let mut gbeta = vec![0.0f64; d];
    let mut gxhat = vec![0.0f64; d];
    for r in 0..rows {
        let gr = &gout[r * d..(r + 1) * d];
        let xh = &saved.xhat[r * d..(r + 1) * d];
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for c in 0..d {
            let g = gr[c].f64();
            ggamma[c] += g * xh[c].f64();
            gbeta[c] += g;
            gxhat[c] = g * gamma[c].f64();
            m1 += gxhat[c];
            m2 += gxhat[c] * xh[c].f64();
        }
        m1 /= d as f64;
        m2 /= d as f64;
        let is = saved.inv_std[r].f64();
        for c in 0..d {
            gx[r * d + c] = T::of(is * (gxhat[c] - m1 - xh[c].f64() * m2));
        }
    }
    (
        gx,
        ggamma.into_iter().map(T::of).collect(),
        gbeta.into_iter().map(T::of).collect(),
    )
}

pub(crate) fn transpose<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    t.transpose2d().expect("rank checked by caller")
}
