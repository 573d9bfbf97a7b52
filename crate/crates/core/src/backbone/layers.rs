//! Conv / ReLU / max-pool primitives over channel-major (`C×N×H×W`) buffers.

use crate::tensor::{gemm, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Dims {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn per_channel(&self) -> usize {
        self.n * self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.c * self.per_channel()
    }
}

/// 3×3, stride 1, zero padding 1. Output `K×(N·H·W)` with `K = C·9`.
pub(crate) fn im2col<T: Scalar>(x: &[T], d: Dims) -> Vec<T> {
    let m = d.per_channel();
    let mut col = vec![T::zero(); d.c * 9 * m];
    for ci in 0..d.c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * m;
                let dx = kx as isize - 1;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (d.w as isize - dx).min(d.w as isize) as usize;
                for n in 0..d.n {
                    for y in 0..d.h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= d.h as isize {
                            continue;
                        }
                        let src = ((ci * d.n + n) * d.h + sy as usize) * d.w;
                        let dst = row + (n * d.h + y) * d.w;
                        let sx_lo = (x_lo as isize + dx) as usize;
                        let len = x_hi - x_lo;
                        col[dst + x_lo..dst + x_hi].copy_from_slice(&x[src + sx_lo..src + sx_lo + len]);
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`].
pub(crate) fn col2im<T: Scalar>(col: &[T], d: Dims) -> Vec<T> {
    let m = d.per_channel();
    let mut x = vec![T::zero(); d.len()];
    for ci in 0..d.c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * m;
                let dx = kx as isize - 1;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (d.w as isize - dx).min(d.w as isize) as usize;
                for n in 0..d.n {
                    for y in 0..d.h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= d.h as isize {
                            continue;
                        }
                        let dst = ((ci * d.n + n) * d.h + sy as usize) * d.w;
                        let src = row + (n * d.h + y) * d.w;
                        let sx_lo = (x_lo as isize + dx) as usize;
                        for (a, b) in x[dst + sx_lo..dst + sx_lo + (x_hi - x_lo)]
                            .iter_mut()
                            .zip(&col[src + x_lo..src + x_hi])
                        {
                            *a += *b;
                        }
                    }
                }
            }
        }
    }
    x
}

/// Column-buffer budget per chunk, in elements; keeps a chunk's working set
/// in cache.
const CHUNK_ELEMS: usize = 1 << 17;

fn chunk_images(d: Dims) -> usize {
    (CHUNK_ELEMS / (d.c * 9 * d.plane()).max(1)).clamp(1, d.n.max(1))
}

/// Copies images `n0..n0+nc` of a channel-major buffer into their own
/// `C×nc×H×W` buffer.
fn gather<T: Scalar>(x: &[T], d: Dims, n0: usize, nc: usize) -> Vec<T> {
    let p = d.plane();
    let mut out = Vec::with_capacity(d.c * nc * p);
    for c in 0..d.c {
        let from = (c * d.n + n0) * p;
        out.extend_from_slice(&x[from..from + nc * p]);
    }
    out
}

pub(crate) struct ConvCache<T> {
    pub input: Vec<T>,
    /// Pooled post-ReLU output.
    pub out: Vec<T>,
    /// Position of each pooled cell's maximum inside its 2×2 window.
    pub window: Vec<u8>,
    pub in_dims: Dims,
}

const WINDOW: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

/// conv3×3 + bias → ReLU → 2×2 max-pool. Returns pooled output and its dims.
pub(crate) fn conv_block_forward<T: Scalar>(
    x: &[T],
    d: Dims,
    weight: &[T],
    bias: &[T],
    c_out: usize,
    keep_cache: bool,
) -> (Vec<T>, Dims, Option<ConvCache<T>>) {
    let k = d.c * 9;
    let out_d = Dims {
        c: c_out,
        n: d.n,
        h: d.h / 2,
        w: d.w / 2,
    };
    let (p, op) = (d.plane(), out_d.plane());
    let mut out = vec![T::zero(); out_d.len()];
    let mut window = vec![0u8; if keep_cache { out_d.len() } else { 0 }];
    let step = chunk_images(d);
    let mut act = Vec::new();
    for n0 in (0..d.n).step_by(step) {
        let nc = step.min(d.n - n0);
        let dc = Dims { n: nc, ..d };
        let col = im2col(&gather(x, d, n0, nc), dc);
        let m = nc * p;
        act.clear();
        for &b in &bias[..c_out] {
            act.extend(std::iter::repeat_n(b, m));
        }
        gemm(false, false, c_out, m, k, T::one(), weight, &col, T::one(), &mut act);
        // ReLU commutes with max, so it is applied to the pooled value only.
        for c in 0..c_out {
            for i in 0..nc {
                let base = (c * nc + i) * p;
                let o_base = (c * d.n + n0 + i) * op;
                for py in 0..out_d.h {
                    for px in 0..out_d.w {
                        let at = base + 2 * py * d.w + 2 * px;
                        let mut best = 0;
                        let mut v = act[at];
                        for (j, &(dy, dx)) in WINDOW.iter().enumerate().skip(1) {
                            let a = act[at + dy * d.w + dx];
                            if a > v {
                                v = a;
                                best = j;
                            }
                        }
                        let o = o_base + py * out_d.w + px;
                        out[o] = if v > T::zero() { v } else { T::zero() };
                        if keep_cache {
                            window[o] = best as u8;
                        }
                    }
                }
            }
        }
    }
    let cache = keep_cache.then(|| ConvCache {
        input: x.to_vec(),
        out: out.clone(),
        window,
        in_dims: d,
    });
    (out, out_d, cache)
}

/// Backward of [`conv_block_forward`]; accumulates into `d_weight`/`d_bias`
/// and returns the input gradient when `need_input_grad`.
pub(crate) fn conv_block_backward<T: Scalar>(
    cache: &ConvCache<T>,
    d_out: &[T],
    weight: &[T],
    c_out: usize,
    d_weight: &mut [T],
    d_bias: &mut [T],
    need_input_grad: bool,
) -> Option<Vec<T>> {
    let d = cache.in_dims;
    let k = d.c * 9;
    let p = d.plane();
    let (oh, ow) = (d.h / 2, d.w / 2);
    let op = oh * ow;
    let mut d_in = vec![T::zero(); if need_input_grad { d.len() } else { 0 }];
    let step = chunk_images(d);
    let mut d_act = Vec::new();
    let mut d_col = Vec::new();
    for n0 in (0..d.n).step_by(step) {
        let nc = step.min(d.n - n0);
        let dc = Dims { n: nc, ..d };
        let m = nc * p;
        d_act.clear();
        d_act.resize(c_out * m, T::zero());
        for c in 0..c_out {
            let mut sum = T::zero();
            for i in 0..nc {
                let o_base = (c * d.n + n0 + i) * op;
                let base = (c * nc + i) * p;
                for o in 0..op {
                    // gradient flows only where the pooled ReLU was active
                    if cache.out[o_base + o] <= T::zero() {
                        continue;
                    }
                    let g = d_out[o_base + o];
                    let (dy, dx) = WINDOW[cache.window[o_base + o] as usize];
                    d_act[base + (2 * (o / ow) + dy) * d.w + 2 * (o % ow) + dx] = g;
                    sum += g;
                }
            }
            d_bias[c] += sum;
        }
        let col = im2col(&gather(&cache.input, d, n0, nc), dc);
        gemm(false, true, c_out, k, m, T::one(), &d_act, &col, T::one(), d_weight);
        if need_input_grad {
            d_col.clear();
            d_col.resize(k * m, T::zero());
            gemm(true, false, k, m, c_out, T::one(), weight, &d_act, T::zero(), &mut d_col);
            let g = col2im(&d_col, dc);
            for c in 0..d.c {
                let to = (c * d.n + n0) * p;
                d_in[to..to + nc * p].copy_from_slice(&g[c * nc * p..(c + 1) * nc * p]);
            }
        }
    }
    need_input_grad.then_some(d_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 3×3 convolution, no gemm.
    fn conv_naive(x: &[f64], d: Dims, w: &[f64], c_out: usize) -> Vec<f64> {
        let mut out = vec![0.0; c_out * d.per_channel()];
        for co in 0..c_out {
            for n in 0..d.n {
                for y in 0..d.h {
                    for xx in 0..d.w {
                        let mut s = 0.0;
                        for ci in 0..d.c {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let sy = y as isize + ky as isize - 1;
                                    let sx = xx as isize + kx as isize - 1;
                                    if sy < 0 || sx < 0 || sy >= d.h as isize || sx >= d.w as isize {
                                        continue;
                                    }
                                    s += w[((co * d.c + ci) * 3 + ky) * 3 + kx]
                                        * x[((ci * d.n + n) * d.h + sy as usize) * d.w + sx as usize];
                                }
                            }
                        }
                        out[((co * d.n + n) * d.h + y) * d.w + xx] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn im2col_gemm_equals_direct_convolution() {
        let d = Dims { c: 2, n: 2, h: 5, w: 6 };
        let x: Vec<f64> = (0..d.len()).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let w: Vec<f64> = (0..3 * 2 * 9).map(|i| ((i * 13 % 7) as f64) * 0.1 - 0.3).collect();
        let col = im2col(&x, d);
        let mut got = vec![0.0; 3 * d.per_channel()];
        gemm(false, false, 3, d.per_channel(), 18, 1.0, &w, &col, 0.0, &mut got);
        let want = conv_naive(&x, d, &w, 3);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn chunked_block_matches_per_image_blocks() {
        let d = Dims { c: 3, n: 9, h: 32, w: 32 };
        assert!(chunk_images(d) < d.n);
        let c_out = 4;
        let x: Vec<f64> = (0..d.len()).map(|i| (i as f64 * 0.173).sin()).collect();
        let w: Vec<f64> = (0..c_out * 27).map(|i| (i as f64 * 0.61).cos() * 0.3).collect();
        let b = [0.1, -0.2, 0.0, 0.05];
        let (out, od, cache) = conv_block_forward(&x, d, &w, &b, c_out, true);
        let d_out: Vec<f64> = (0..od.len()).map(|i| (i as f64 * 0.29).cos()).collect();
        let (mut dw, mut db) = (vec![0.0; w.len()], vec![0.0; c_out]);
        let d_in = conv_block_backward(&cache.unwrap(), &d_out, &w, c_out, &mut dw, &mut db, true).unwrap();

        let (mut dw1, mut db1) = (vec![0.0; w.len()], vec![0.0; c_out]);
        let (p, op) = (d.plane(), od.plane());
        for n in 0..d.n {
            let d1 = Dims { n: 1, ..d };
            let x1 = gather(&x, d, n, 1);
            let (o1, _, c1) = conv_block_forward(&x1, d1, &w, &b, c_out, true);
            let g1: Vec<f64> = (0..c_out)
                .flat_map(|c| d_out[(c * d.n + n) * op..(c * d.n + n + 1) * op].to_vec())
                .collect();
            let i1 = conv_block_backward(&c1.unwrap(), &g1, &w, c_out, &mut dw1, &mut db1, true).unwrap();
            for c in 0..c_out {
                assert_eq!(&o1[c * op..(c + 1) * op], &out[(c * d.n + n) * op..(c * d.n + n + 1) * op]);
            }
            for c in 0..d.c {
                for (a, b) in i1[c * p..(c + 1) * p].iter().zip(&d_in[(c * d.n + n) * p..]) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
        for (a, b) in dw.iter().chain(&db).zip(dw1.iter().chain(&db1)) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let d = Dims { c: 3, n: 2, h: 4, w: 4 };
        let x: Vec<f64> = (0..d.len()).map(|i| (i as f64 * 0.731).sin()).collect();
        let y: Vec<f64> = (0..d.c * 9 * d.per_channel()).map(|i| (i as f64 * 0.377).cos()).collect();
        let lhs: f64 = im2col(&x, d).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, d)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
