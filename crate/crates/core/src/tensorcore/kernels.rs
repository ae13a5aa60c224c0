//! Raw forward/backward kernels over contiguous row-major buffers.
//!
//! Shapes are validated by the [`Tape`](super::Tape) front end; these
//! functions assume consistent extents.

use std::cell::RefCell;
use std::marker::PhantomData;

use super::scalar::{gemm, MatRef};
use super::Scalar;

thread_local! {
    static POOL: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
}

/// Reusable work buffer with unspecified initial contents. Every caller
/// overwrites the region it reads.
struct Scratch<T> {
    buf: Vec<f64>,
    len: usize,
    _elem: PhantomData<T>,
}

impl<T: Scalar> Scratch<T> {
    fn new(len: usize) -> Self {
        assert!(std::mem::size_of::<T>() <= 8 && std::mem::align_of::<T>() <= 8);
        let words = (len * std::mem::size_of::<T>()).div_ceil(8);
        let mut buf = POOL.with(|p| p.borrow_mut().pop()).unwrap_or_default();
        if buf.len() < words {
            buf.resize(words, 0.0);
        }
        Scratch { buf, len, _elem: PhantomData }
    }

    fn slice(&mut self) -> &mut [T] {
        // SAFETY: `Scalar` is only implemented for f32 and f64, for which
        // every bit pattern is valid; the buffer holds at least `len`
        // elements and is 8-byte aligned.
        unsafe { std::slice::from_raw_parts_mut(self.buf.as_mut_ptr().cast::<T>(), self.len) }
    }
}

impl<T> Drop for Scratch<T> {
    fn drop(&mut self) {
        let buf = std::mem::take(&mut self.buf);
        POOL.with(|p| {
            let mut p = p.borrow_mut();
            if p.len() < 8 {
                p.push(buf);
            }
        });
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    /// Samples unfolded together so one GEMM covers the group.
    fn group(&self) -> usize {
        const BUDGET: usize = 1 << 20;
        (BUDGET / (self.patch() * self.out_plane()).max(1)).clamp(1, self.n.max(1))
    }
}

/// Output columns `ox` whose input column `ox·stride + kj − padding` lies
/// inside `[0, w)`, as a half-open range.
fn valid_cols(g: &ConvGeom, kj: usize) -> (usize, usize) {
    let lo = g.padding.saturating_sub(kj).div_ceil(g.stride).min(g.wo);
    let hi = if g.w + g.padding > kj { ((g.w + g.padding - kj - 1) / g.stride + 1).min(g.wo) } else { 0 };
    (lo, hi.max(lo))
}

/// Unfolds one sample `[cin,h,w]` into columns of a `[cin·kh·kw, ld]`
/// matrix, starting at column `col0` and spanning `ho·wo` columns.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T], ld: usize, col0: usize) {
    let plane = g.out_plane();
    for ci in 0..g.cin {
        let xc = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let (lo, hi) = valid_cols(g, kj);
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ld + col0..row * ld + col0 + plane];
                for (oy, drow) in dst.chunks_exact_mut(g.wo).enumerate() {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize || lo == hi {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    drow[..lo].fill(T::zero());
                    drow[hi..].fill(T::zero());
                    let ix0 = lo * g.stride + kj - g.padding;
                    if g.stride == 1 {
                        drow[lo..hi].copy_from_slice(&src[ix0..ix0 + hi - lo]);
                    } else {
                        for (d, ix) in drow[lo..hi].iter_mut().zip((ix0..).step_by(g.stride)) {
                            *d = src[ix];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into `[cin,h,w]`.
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T], ld: usize, col0: usize) {
    let plane = g.out_plane();
    for ci in 0..g.cin {
        let dxc = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let (lo, hi) = valid_cols(g, kj);
                if lo == hi {
                    continue;
                }
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ld + col0..row * ld + col0 + plane];
                let ix0 = lo * g.stride + kj - g.padding;
                for (oy, srow) in src.chunks_exact(g.wo).enumerate() {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut dxc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (&v, ix) in srow[lo..hi].iter().zip((ix0..).step_by(g.stride)) {
                        drow[ix] += v;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(x: &[T], weight: &[T], bias: &[T], g: &ConvGeom) -> Vec<T> {
    let plane = g.out_plane();
    let patch = g.patch();
    let in_sample = g.cin * g.h * g.w;
    let group = g.group();
    let mut out = Vec::with_capacity(g.n * g.cout * plane);
    let mut cols = Scratch::new(patch * group * plane);
    let mut tmp = Scratch::new(g.cout * group * plane);
    let (cols, tmp) = (cols.slice(), tmp.slice());
    for s0 in (0..g.n).step_by(group) {
        let gs = group.min(g.n - s0);
        let ld = gs * plane;
        for j in 0..gs {
            im2col(&x[(s0 + j) * in_sample..(s0 + j + 1) * in_sample], g, cols, ld, j * plane);
        }
        gemm(MatRef::new(weight, g.cout, patch), MatRef::new(&cols[..patch * ld], patch, ld), tmp, false);
        for j in 0..gs {
            for (co, &b) in bias.iter().enumerate() {
                out.extend(tmp[co * ld + j * plane..co * ld + (j + 1) * plane].iter().map(|&v| v + b));
            }
        }
    }
    out
}

/// Returns `(d_input, d_weight, d_bias)`; each is computed only when requested.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    gout: &[T],
    g: &ConvGeom,
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let plane = g.out_plane();
    let patch = g.patch();
    let in_sample = g.cin * g.h * g.w;
    let out_sample = g.cout * plane;

    let db = want_db.then(|| {
        let mut db = vec![T::zero(); g.cout];
        for s in 0..g.n {
            for (co, chunk) in gout[s * out_sample..(s + 1) * out_sample].chunks(plane).enumerate() {
                db[co] += chunk.iter().copied().sum::<T>();
            }
        }
        db
    });

    let mut dw = want_dw.then(|| vec![T::zero(); g.cout * patch]);
    let mut dx = want_dx.then(|| vec![T::zero(); g.n * in_sample]);
    if dw.is_none() && dx.is_none() {
        return (None, None, db);
    }
    let group = g.group();
    let mut cols = Scratch::new(if dw.is_some() { patch * group * plane } else { 0 });
    let mut dcols = Scratch::new(if dx.is_some() { patch * group * plane } else { 0 });
    let mut gmat = Scratch::new(g.cout * group * plane);
    let (cols, dcols, gmat) = (cols.slice(), dcols.slice(), gmat.slice());
    for s0 in (0..g.n).step_by(group) {
        let gs = group.min(g.n - s0);
        let ld = gs * plane;
        // Gather the group's output gradient as one [cout, gs·plane] matrix.
        for j in 0..gs {
            let go = &gout[(s0 + j) * out_sample..(s0 + j + 1) * out_sample];
            for (co, chunk) in go.chunks(plane).enumerate() {
                gmat[co * ld + j * plane..co * ld + (j + 1) * plane].copy_from_slice(chunk);
            }
        }
        let gm = MatRef::new(&gmat[..g.cout * ld], g.cout, ld);
        if let Some(dw) = dw.as_mut() {
            for j in 0..gs {
                im2col(&x[(s0 + j) * in_sample..(s0 + j + 1) * in_sample], g, cols, ld, j * plane);
            }
            gemm(gm, MatRef::t(&cols[..patch * ld], patch, ld), dw, true);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(MatRef::t(weight, g.cout, patch), gm, &mut dcols[..patch * ld], false);
            for j in 0..gs {
                col2im(dcols, g, &mut dx[(s0 + j) * in_sample..(s0 + j + 1) * in_sample], ld, j * plane);
            }
        }
    }
    (dx, dw, db)
}

/// Non-overlapping `k×k` max pooling. Returns values and, per output cell,
/// the flat input index of the first maximum in row-major window order.
pub(crate) fn maxpool_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, k: usize) -> (Vec<T>, Vec<usize>) {
    let (ho, wo) = (h / k, w / k);
    let mut out = vec![T::zero(); planes * ho * wo];
    let mut arg = vec![0usize; planes * ho * wo];
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..ho {
            let o0 = (p * ho + oy) * wo;
            let (best, best_idx) = (&mut out[o0..o0 + wo], &mut arg[o0..o0 + wo]);
            // Rows are scanned top to bottom and left to right, so a strict
            // comparison keeps the first maximum.
            let r0 = base + oy * k * w;
            if k == 2 {
                let (top, bottom) = x[r0..r0 + 2 * w].split_at(w);
                for (ox, ((b, bi), (t, u))) in best.iter_mut().zip(best_idx.iter_mut()).zip(top.chunks_exact(2).zip(bottom.chunks_exact(2))).enumerate() {
                    let i = r0 + 2 * ox;
                    let (mut m, mut mi) = (t[0], i);
                    if t[1] > m {
                        (m, mi) = (t[1], i + 1);
                    }
                    if u[0] > m {
                        (m, mi) = (u[0], i + w);
                    }
                    if u[1] > m {
                        (m, mi) = (u[1], i + w + 1);
                    }
                    *b = m;
                    *bi = mi;
                }
                continue;
            }
            for ox in 0..wo {
                best[ox] = x[r0 + ox * k];
                best_idx[ox] = r0 + ox * k;
            }
            for dy in 0..k {
                let r = base + (oy * k + dy) * w;
                let row = &x[r..r + wo * k];
                for (ox, window) in row.chunks_exact(k).enumerate() {
                    let (mut b, mut bi) = (best[ox], best_idx[ox]);
                    for (dx, &v) in window.iter().enumerate() {
                        let take = v > b;
                        b = if take { v } else { b };
                        bi = if take { r + ox * k + dx } else { bi };
                    }
                    best[ox] = b;
                    best_idx[ox] = bi;
                }
            }
        }
    }
    (out, arg)
}

/// `out[N,Dout] = x[N,Din]·weightᵀ + bias`.
pub(crate) fn linear_forward<T: Scalar>(x: &[T], weight: &[T], bias: &[T], n: usize, din: usize, dout: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * dout);
    for _ in 0..n {
        out.extend_from_slice(bias);
    }
    gemm(MatRef::new(x, n, din), MatRef::t(weight, dout, din), &mut out, true);
    out
}

pub(crate) fn linear_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    gout: &[T],
    (n, din, dout): (usize, usize, usize),
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let dx = want_dx.then(|| {
        let mut dx = vec![T::zero(); n * din];
        gemm(MatRef::new(gout, n, dout), MatRef::new(weight, dout, din), &mut dx, false);
        dx
    });
    let dw = want_dw.then(|| {
        let mut dw = vec![T::zero(); dout * din];
        gemm(MatRef::t(gout, n, dout), MatRef::new(x, n, din), &mut dw, false);
        dw
    });
    let db = want_db.then(|| {
        let mut db = vec![T::zero(); dout];
        for row in gout.chunks(dout) {
            for (d, g) in db.iter_mut().zip(row) {
                *d += *g;
            }
        }
        db
    });
    (dx, dw, db)
}

/// Mean softmax cross-entropy with max-subtraction; also returns the softmax.
pub(crate) fn softmax_cross_entropy<T: Scalar>(logits: &[T], labels: &[usize], k: usize) -> (T, Vec<T>) {
    let n = labels.len();
    let mut probs = vec![T::zero(); n * k];
    let mut total = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits[i * k..(i + 1) * k];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let pr = &mut probs[i * k..(i + 1) * k];
        let mut z = T::zero();
        for (p, &l) in pr.iter_mut().zip(row) {
            *p = (l - max).exp();
            z += *p;
        }
        for p in pr.iter_mut() {
            *p = *p / z;
        }
        total += z.ln() + max - row[label];
    }
    (total / T::of(n as f64), probs)
}

/// `I − A·Aᵀ` for square `A` (`d×d`).
pub(crate) fn identity_minus_gram<T: Scalar>(a: &[T], d: usize) -> Vec<T> {
    let mut m = vec![T::zero(); d * d];
    gemm(MatRef::new(a, d, d), MatRef::t(a, d, d), &mut m, false);
    for (i, v) in m.iter_mut().enumerate() {
        let id = if i / d == i % d { T::one() } else { T::zero() };
        *v = id - *v;
    }
    m
}
