//! Primitive operations on the tape: forward evaluation plus backward rules.
//!
//! Elementwise binaries broadcast right-aligned (NumPy rules). Matmul
//! broadcasts leading batch dimensions. Every differentiable primitive here
//! is covered by the finite-difference suite in `gradcheck`.

use super::{row_major_strides, Scalar, Tape, Tensor};
use rayon::prelude::*;

/// Below this many multiply-accumulates a matmul stays single-threaded.
const PAR_FLOP_THRESHOLD: usize = 16_384;

/// Chunk size for parallel loops over batch slices, sized so each task is
/// coarse enough to amortize scheduling.
fn batch_min_len(n_batches: usize) -> usize {
    (n_batches / (2 * rayon::current_num_threads().max(1))).max(1)
}

fn broadcast_shape(a: &[usize], b: &[usize], op: &str) -> Vec<usize> {
    let nd = a.len().max(b.len());
    let mut out = vec![0usize; nd];
    for i in 0..nd {
        let da = if i < nd - a.len() { 1 } else { a[i - (nd - a.len())] };
        let db = if i < nd - b.len() { 1 } else { b[i - (nd - b.len())] };
        assert!(
            da == db || da == 1 || db == 1,
            "{op}: shapes {a:?} and {b:?} are not broadcast-compatible"
        );
        out[i] = da.max(db);
    }
    out
}

/// Per-dimension element strides into `shape`, padded to `nd` dims, with
/// stride zero on broadcast dimensions.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let nd = out_shape.len();
    let offset = nd - shape.len();
    let own = row_major_strides(shape);
    let mut strides = vec![0usize; nd];
    for d in 0..shape.len() {
        if shape[d] != 1 {
            strides[offset + d] = own[d];
        }
    }
    strides
}

/// Visit every element of the broadcast output, yielding flat indices into
/// the output and both inputs. Odometer walk: O(1) amortized per element.
/// True when `b` equals the trailing dimensions of `out` (so `b` tiles
/// `out` as contiguous blocks).
fn is_suffix(b: &[usize], out: &[usize]) -> bool {
    b.len() <= out.len() && out[out.len() - b.len()..] == *b
}

fn broadcast_walk(
    out_shape: &[usize],
    a_shape: &[usize],
    b_shape: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total: usize = out_shape.iter().product();
    if total == 0 {
        return;
    }
    let nd = out_shape.len();
    let a_str = broadcast_strides(a_shape, out_shape);
    let b_str = broadcast_strides(b_shape, out_shape);
    let mut coords = vec![0usize; nd];
    let (mut ai, mut bi) = (0usize, 0usize);
    for oi in 0..total {
        f(oi, ai, bi);
        for d in (0..nd).rev() {
            coords[d] += 1;
            ai += a_str[d];
            bi += b_str[d];
            if coords[d] < out_shape[d] {
                break;
            }
            coords[d] = 0;
            ai -= a_str[d] * out_shape[d];
            bi -= b_str[d] * out_shape[d];
        }
    }
}

/// c += a[m,k] · b[k,n], sequential.
fn gemm_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

/// c += a[m,k] · b[k,n], row blocks in parallel when the product is large.
/// Each output row accumulates in a fixed order, so results are identical
/// across thread counts.
fn gemm_acc_auto<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    if m * k * n < PAR_FLOP_THRESHOLD || m < 2 {
        gemm_acc(a, b, c, m, k, n);
        return;
    }
    let rows_per_task = (m / (2 * rayon::current_num_threads().max(1))).max(64);
    c.par_chunks_mut(rows_per_task * n)
        .enumerate()
        .for_each(|(blk, cblk)| {
            let row0 = blk * rows_per_task;
            let rows = cblk.len() / n;
            gemm_acc(&a[row0 * k..(row0 + rows) * k], b, cblk, rows, k, n);
        });
}

fn transpose2d<T: Scalar>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// c += a · bᵀ with `a: [m, n]`, `b: [k, n]`, `c: [m, k]`, via a
/// materialized `bᵀ` so the inner accumulation stays elementwise (and
/// vectorizable) instead of a latency-bound dot product.
fn gemm_abt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize) {
    let bt = transpose2d(&b[..k * n], k, n);
    gemm_acc(a, &bt, c, m, n, k);
}

fn gemm_abt_auto<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize) {
    let bt = transpose2d(&b[..k * n], k, n);
    gemm_acc_auto(a, &bt, c, m, n, k);
}

/// c += aᵀ · g with `a: [m, k]`, `g: [m, n]`, `c: [k, n]`, accumulated as
/// rank-one updates over contiguous rows.
fn gemm_atb<T: Scalar>(a: &[T], g: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &gv) in crow.iter_mut().zip(grow) {
                *cv += aip * gv;
            }
        }
    }
}

/// Parallel over fixed 512-row blocks of the reduction dimension, with
/// block partials combined in index order. The block size is a constant,
/// so the floating-point association — and therefore every bit of the
/// result — is independent of the thread count.
fn gemm_atb_auto<T: Scalar>(a: &[T], g: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    const BLOCK_ROWS: usize = 512;
    if m * k * n < PAR_FLOP_THRESHOLD || m <= 2 * BLOCK_ROWS {
        gemm_atb(a, g, c, m, k, n);
        return;
    }
    let blocks = m.div_ceil(BLOCK_ROWS);
    let partials: Vec<Vec<T>> = (0..blocks)
        .into_par_iter()
        .map(|bi| {
            let r0 = bi * BLOCK_ROWS;
            let r1 = (r0 + BLOCK_ROWS).min(m);
            let mut p = vec![T::ZERO; k * n];
            gemm_atb(&a[r0 * k..r1 * k], &g[r0 * n..r1 * n], &mut p, r1 - r0, k, n);
            p
        })
        .collect();
    for p in partials {
        for (cv, pv) in c.iter_mut().zip(&p) {
            *cv += *pv;
        }
    }
}

/// Flat offsets of each batch slice of `shape` (leading dims before the
/// trailing `mat` elements), broadcast against `out_batch`.
fn batch_offsets(batch: &[usize], out_batch: &[usize], mat_numel: usize) -> Vec<usize> {
    let n_batches: usize = out_batch.iter().product::<usize>().max(1);
    let mut offs = Vec::with_capacity(n_batches);
    if out_batch.is_empty() {
        offs.push(0);
        return offs;
    }
    let strides = broadcast_strides(batch, out_batch);
    let nd = out_batch.len();
    let mut coords = vec![0usize; nd];
    let mut idx = 0usize;
    for _ in 0..n_batches {
        offs.push(idx * mat_numel);
        for d in (0..nd).rev() {
            coords[d] += 1;
            idx += strides[d];
            if coords[d] < out_batch[d] {
                break;
            }
            coords[d] = 0;
            idx -= strides[d] * out_batch[d];
        }
    }
    offs
}

impl<T: Scalar> Tape<T> {
    // ── Matmul ───────────────────────────────────────────────────────

    /// Batched matrix product `[.., m, k] · [.., k, n] -> [.., m, n]` with
    /// broadcast leading dimensions. Gradients: `da = g·bᵀ`, `db = aᵀ·g`.
    pub fn matmul(&self, a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
        let a_shape = a.shape();
        let b_shape = b.shape();
        assert!(
            a_shape.len() >= 2 && b_shape.len() >= 2,
            "matmul: operands must be at least 2-d, got shapes {a_shape:?} and {b_shape:?}"
        );
        let (m, k) = (a_shape[a_shape.len() - 2], a_shape[a_shape.len() - 1]);
        let (k2, n) = (b_shape[b_shape.len() - 2], b_shape[b_shape.len() - 1]);
        assert_eq!(
            k, k2,
            "matmul: inner dimensions differ, lhs shape {a_shape:?}, rhs shape {b_shape:?}"
        );
        let a_batch = &a_shape[..a_shape.len() - 2];
        let b_batch = &b_shape[..b_shape.len() - 2];
        let out_batch = broadcast_shape(a_batch, b_batch, "matmul");
        let n_batches: usize = out_batch.iter().product::<usize>().max(1);

        let a_offs = batch_offsets(a_batch, &out_batch, m * k);
        let b_offs = batch_offsets(b_batch, &out_batch, k * n);

        let mut out = vec![T::ZERO; n_batches * m * n];
        {
            let ad = a.data();
            let bd = b.data();
            if n_batches == 1 {
                gemm_acc_auto(&ad[a_offs[0]..], &bd[b_offs[0]..], &mut out, m, k, n);
            } else if b_shape.len() == 2 {
                // Unbatched weight: one flattened gemm over all rows.
                gemm_acc_auto(&ad[..], &bd[..], &mut out, n_batches * m, k, n);
            } else {
                let a_offs = &a_offs;
                let b_offs = &b_offs;
                let (ad, bd) = (&*ad, &*bd);
                out.par_chunks_mut(m * n)
                    .with_min_len(batch_min_len(n_batches))
                    .enumerate()
                    .for_each(|(bi, c)| {
                        gemm_acc(&ad[a_offs[bi]..], &bd[b_offs[bi]..], c, m, k, n);
                    });
            }
        }

        let mut out_shape = out_batch.clone();
        out_shape.push(m);
        out_shape.push(n);

        let (ah, bh) = (a.clone(), b.clone());
        let (need_a, need_b) = (a.requires_grad(), b.requires_grad());
        self.emit(&out_shape, out, need_a || need_b, move |g| {
            let mut da = Vec::new();
            let mut db = Vec::new();
            {
                let ad = ah.data();
                let bd = bh.data();
                if need_a {
                    da = vec![T::ZERO; ad.len()];
                    if bh.ndim() == 2 {
                        // b is an unbatched weight: one flattened da = g·bᵀ.
                        gemm_abt_auto(g, &bd, &mut da, n_batches * m, n, k);
                    } else {
                        let disjoint = a_offs.iter().enumerate().all(|(i, &o)| o == i * m * k);
                        if disjoint {
                            let (bd, b_offs) = (&*bd, &b_offs);
                            da.par_chunks_mut(m * k)
                                .with_min_len(batch_min_len(n_batches))
                                .enumerate()
                                .for_each(|(bi, slot)| {
                                    gemm_abt(&g[bi * m * n..(bi + 1) * m * n], &bd[b_offs[bi]..b_offs[bi] + k * n], slot, m, n, k);
                                });
                        } else {
                            for bi in 0..n_batches {
                                gemm_abt(
                                    &g[bi * m * n..(bi + 1) * m * n],
                                    &bd[b_offs[bi]..],
                                    &mut da[a_offs[bi]..a_offs[bi] + m * k],
                                    m,
                                    n,
                                    k,
                                );
                            }
                        }
                    }
                }
                if need_b {
                    db = vec![T::ZERO; bd.len()];
                    if bh.ndim() == 2 {
                        // db = aᵀ_2d · g_2d over the flattened batch·m rows.
                        gemm_atb_auto(&ad, g, &mut db, n_batches * m, k, n);
                    } else {
                        let disjoint = b_offs.iter().enumerate().all(|(i, &o)| o == i * k * n);
                        if disjoint {
                            let (ad, a_offs) = (&*ad, &a_offs);
                            db.par_chunks_mut(k * n)
                                .with_min_len(batch_min_len(n_batches))
                                .enumerate()
                                .for_each(|(bi, slot)| {
                                    gemm_atb(&ad[a_offs[bi]..], &g[bi * m * n..], slot, m, k, n);
                                });
                        } else {
                            for bi in 0..n_batches {
                                gemm_atb(
                                    &ad[a_offs[bi]..a_offs[bi] + m * k],
                                    &g[bi * m * n..(bi + 1) * m * n],
                                    &mut db[b_offs[bi]..b_offs[bi] + k * n],
                                    m,
                                    k,
                                    n,
                                );
                            }
                        }
                    }
                }
            }
            if need_a {
                ah.accumulate_grad(&da);
            }
            if need_b {
                bh.accumulate_grad(&db);
            }
        })
    }

    // ── Elementwise binaries ─────────────────────────────────────────

    fn binary(
        &self,
        a: &Tensor<T>,
        b: &Tensor<T>,
        op: &'static str,
        fwd: impl Fn(T, T) -> T,
        dda: impl Fn(T, T, T) -> T + 'static,
        ddb: impl Fn(T, T, T) -> T + 'static,
    ) -> Tensor<T> {
        let a_shape = a.shape();
        let b_shape = b.shape();
        let out_shape = broadcast_shape(&a_shape, &b_shape, op);
        let total: usize = out_shape.iter().product();
        let mut out = vec![T::ZERO; total];
        let same = a_shape == b_shape;
        // Common layouts: identical shapes, or b repeating as a suffix
        // block of a (bias and position adds, time masks).
        let suffix = !same && a_shape == out_shape && is_suffix(&b_shape, &out_shape);
        {
            let ad = a.data();
            let bd = b.data();
            if same {
                for ((o, &x), &y) in out.iter_mut().zip(ad.iter()).zip(bd.iter()) {
                    *o = fwd(x, y);
                }
            } else if suffix {
                let bn = bd.len();
                for (ochunk, achunk) in out.chunks_mut(bn).zip(ad.chunks(bn)) {
                    for ((o, &x), &y) in ochunk.iter_mut().zip(achunk).zip(bd.iter()) {
                        *o = fwd(x, y);
                    }
                }
            } else {
                broadcast_walk(&out_shape, &a_shape, &b_shape, |oi, ai, bi| {
                    out[oi] = fwd(ad[ai], bd[bi]);
                });
            }
        }
        let (ah, bh) = (a.clone(), b.clone());
        let (need_a, need_b) = (a.requires_grad(), b.requires_grad());
        let os = out_shape.clone();
        self.emit(&out_shape, out, need_a || need_b, move |g| {
            let mut da = Vec::new();
            let mut db = Vec::new();
            {
                let ad = ah.data();
                let bd = bh.data();
                if need_a {
                    da = vec![T::ZERO; ad.len()];
                }
                if need_b {
                    db = vec![T::ZERO; bd.len()];
                }
                if same {
                    for i in 0..g.len() {
                        if need_a {
                            da[i] = dda(g[i], ad[i], bd[i]);
                        }
                        if need_b {
                            db[i] = ddb(g[i], ad[i], bd[i]);
                        }
                    }
                } else if suffix {
                    let bn = bd.len();
                    for (ci, (gchunk, achunk)) in g.chunks(bn).zip(ad.chunks(bn)).enumerate() {
                        let base = ci * bn;
                        for j in 0..bn {
                            if need_a {
                                da[base + j] = dda(gchunk[j], achunk[j], bd[j]);
                            }
                            if need_b {
                                db[j] += ddb(gchunk[j], achunk[j], bd[j]);
                            }
                        }
                    }
                } else {
                    broadcast_walk(&os, &a_shape, &b_shape, |oi, ai, bi| {
                        if need_a {
                            da[ai] += dda(g[oi], ad[ai], bd[bi]);
                        }
                        if need_b {
                            db[bi] += ddb(g[oi], ad[ai], bd[bi]);
                        }
                    });
                }
            }
            if need_a {
                ah.accumulate_grad(&da);
            }
            if need_b {
                bh.accumulate_grad(&db);
            }
        })
    }

    pub fn add(&self, a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
        self.binary(a, b, "add", |x, y| x + y, |g, _, _| g, |g, _, _| g)
    }

    pub fn sub(&self, a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
        self.binary(a, b, "sub", |x, y| x - y, |g, _, _| g, |g, _, _| -g)
    }

    pub fn mul(&self, a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
        self.binary(a, b, "mul", |x, y| x * y, |g, _, y| g * y, |g, x, _| g * x)
    }

    pub fn div(&self, a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
        self.binary(
            a,
            b,
            "div",
            |x, y| x / y,
            |g, _, y| g / y,
            |g, x, y| -g * x / (y * y),
        )
    }

    // ── Elementwise unaries and scalar ops ───────────────────────────

    fn unary(
        &self,
        a: &Tensor<T>,
        fwd: impl Fn(T) -> T,
        // dd(g, x, y) where y is the forward output at x
        dd: impl Fn(T, T, T) -> T + 'static,
    ) -> Tensor<T> {
        let shape = a.shape();
        let out: Vec<T> = a.data().iter().map(|&x| fwd(x)).collect();
        let ah = a.clone();
        let oh = out.clone();
        self.emit(&shape, out, a.requires_grad(), move |g| {
            let da: Vec<T> = {
                let ad = ah.data();
                g.iter()
                    .zip(ad.iter().zip(oh.iter()))
                    .map(|(&g, (&x, &y))| dd(g, x, y))
                    .collect()
            };
            ah.accumulate_grad(&da);
        })
    }

    pub fn add_scalar(&self, a: &Tensor<T>, c: T) -> Tensor<T> {
        self.unary(a, |x| x + c, |g, _, _| g)
    }

    pub fn mul_scalar(&self, a: &Tensor<T>, c: T) -> Tensor<T> {
        self.unary(a, |x| x * c, move |g, _, _| g * c)
    }

    pub fn sqrt(&self, a: &Tensor<T>) -> Tensor<T> {
        let half = T::from_f64(0.5);
        self.unary(a, |x| x.sqrt(), move |g, _, y| g * half / y)
    }

    /// Absolute value; subgradient at zero is zero.
    pub fn abs(&self, a: &Tensor<T>) -> Tensor<T> {
        self.unary(
            a,
            |x| x.abs(),
            |g, x, _| {
                if x > T::ZERO {
                    g
                } else if x < T::ZERO {
                    -g
                } else {
                    T::ZERO
                }
            },
        )
    }

    pub fn sigmoid(&self, a: &Tensor<T>) -> Tensor<T> {
        self.unary(
            a,
            |x| T::ONE / (T::ONE + (-x).exp()),
            |g, _, y| g * y * (T::ONE - y),
        )
    }

    pub fn tanh(&self, a: &Tensor<T>) -> Tensor<T> {
        self.unary(a, |x| x.tanh(), |g, _, y| g * (T::ONE - y * y))
    }

    /// Exact GELU: `x·Φ(x)` with Φ the standard normal CDF via `erf`.
    /// The CDF is computed once in the forward pass and reused by the
    /// backward rule `Φ(x) + x·φ(x)`.
    pub fn gelu(&self, a: &Tensor<T>) -> Tensor<T> {
        let half = T::from_f64(0.5);
        let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
        let inv_sqrt_2pi = T::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
        let shape = a.shape();
        let mut cdf = vec![T::ZERO; a.numel()];
        let out: Vec<T> = {
            let ad = a.data();
            ad.iter()
                .zip(cdf.iter_mut())
                .map(|(&x, c)| {
                    *c = half * (T::ONE + (x * inv_sqrt2).erf());
                    x * *c
                })
                .collect()
        };
        let ah = a.clone();
        self.emit(&shape, out, a.requires_grad(), move |g| {
            let da: Vec<T> = {
                let ad = ah.data();
                g.iter()
                    .zip(ad.iter().zip(cdf.iter()))
                    .map(|(&g, (&x, &c))| {
                        let pdf = inv_sqrt_2pi * (-half * x * x).exp();
                        g * (c + x * pdf)
                    })
                    .collect()
            };
            ah.accumulate_grad(&da);
        })
    }

    // ── Reductions ───────────────────────────────────────────────────

    pub fn sum(&self, a: &Tensor<T>) -> Tensor<T> {
        let total: T = a.data().iter().copied().sum();
        let ah = a.clone();
        self.emit(&[1], vec![total], a.requires_grad(), move |g| {
            let da = vec![g[0]; ah.numel()];
            ah.accumulate_grad(&da);
        })
    }

    pub fn mean(&self, a: &Tensor<T>) -> Tensor<T> {
        let n = T::from_f64(a.numel() as f64);
        let total: T = a.data().iter().copied().sum();
        let ah = a.clone();
        self.emit(&[1], vec![total / n], a.requires_grad(), move |g| {
            let da = vec![g[0] / n; ah.numel()];
            ah.accumulate_grad(&da);
        })
    }

    fn reduce_axis(
        &self,
        a: &Tensor<T>,
        axis: usize,
        keep_dim: bool,
        scale_by_len: bool,
    ) -> Tensor<T> {
        let shape = a.shape();
        assert!(
            axis < shape.len(),
            "reduce: axis {axis} out of range for shape {shape:?}"
        );
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let scale = if scale_by_len {
            T::ONE / T::from_f64(len as f64)
        } else {
            T::ONE
        };
        let mut out = vec![T::ZERO; outer * inner];
        {
            let ad = a.data();
            for o in 0..outer {
                for x in 0..len {
                    let base = (o * len + x) * inner;
                    let obase = o * inner;
                    for i in 0..inner {
                        out[obase + i] += ad[base + i];
                    }
                }
            }
            if scale_by_len {
                for v in out.iter_mut() {
                    *v *= scale;
                }
            }
        }
        let mut out_shape: Vec<usize> = shape.clone();
        if keep_dim {
            out_shape[axis] = 1;
        } else {
            out_shape.remove(axis);
            if out_shape.is_empty() {
                out_shape.push(1);
            }
        }
        let ah = a.clone();
        self.emit(&out_shape, out, a.requires_grad(), move |g| {
            let mut da = vec![T::ZERO; ah.numel()];
            for o in 0..outer {
                for x in 0..len {
                    let base = (o * len + x) * inner;
                    let gbase = o * inner;
                    for i in 0..inner {
                        da[base + i] = g[gbase + i] * scale;
                    }
                }
            }
            ah.accumulate_grad(&da);
        })
    }

    pub fn sum_axis(&self, a: &Tensor<T>, axis: usize, keep_dim: bool) -> Tensor<T> {
        self.reduce_axis(a, axis, keep_dim, false)
    }

    pub fn mean_axis(&self, a: &Tensor<T>, axis: usize, keep_dim: bool) -> Tensor<T> {
        self.reduce_axis(a, axis, keep_dim, true)
    }

    // ── Shape ops ────────────────────────────────────────────────────

    pub fn reshape(&self, a: &Tensor<T>, new_shape: &[usize]) -> Tensor<T> {
        let numel: usize = new_shape.iter().product();
        assert_eq!(
            numel,
            a.numel(),
            "reshape: cannot view shape {:?} as {:?}",
            a.shape(),
            new_shape
        );
        let out = a.to_vec();
        let ah = a.clone();
        self.emit(new_shape, out, a.requires_grad(), move |g| {
            ah.accumulate_grad(g);
        })
    }

    /// Swap two axes (copying). Its own inverse in both directions:
    /// backward through `transpose∘transpose` is the identity.
    pub fn transpose(&self, a: &Tensor<T>, ax0: usize, ax1: usize) -> Tensor<T> {
        let shape = a.shape();
        assert!(
            ax0 < shape.len() && ax1 < shape.len(),
            "transpose: axes ({ax0},{ax1}) out of range for shape {shape:?}"
        );
        let mut out_shape = shape.clone();
        out_shape.swap(ax0, ax1);
        let out = permute_swap(&a.data(), &shape, ax0, ax1);
        let ah = a.clone();
        let os = out_shape.clone();
        self.emit(&out_shape, out, a.requires_grad(), move |g| {
            let da = permute_swap(g, &os, ax0, ax1);
            ah.accumulate_grad(&da);
        })
    }

    /// Concatenate along `axis`; all other extents must match.
    pub fn concat(&self, parts: &[&Tensor<T>], axis: usize) -> Tensor<T> {
        assert!(!parts.is_empty(), "concat: need at least one input");
        let first = parts[0].shape();
        assert!(
            axis < first.len(),
            "concat: axis {axis} out of range for shape {first:?}"
        );
        let mut axis_total = 0usize;
        for p in parts {
            let s = p.shape();
            assert_eq!(
                s.len(),
                first.len(),
                "concat: rank mismatch between {first:?} and {s:?}"
            );
            for (d, (&a, &b)) in first.iter().zip(s.iter()).enumerate() {
                assert!(
                    d == axis || a == b,
                    "concat: shapes {first:?} and {s:?} differ outside axis {axis}"
                );
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = out_shape.iter().product();
        let mut out = vec![T::ZERO; total];
        {
            let datas: Vec<_> = parts.iter().map(|p| p.data()).collect();
            let mut cursor = 0usize;
            for o in 0..outer {
                for (pi, d) in datas.iter().enumerate() {
                    let blk = lens[pi] * inner;
                    out[cursor..cursor + blk].copy_from_slice(&d[o * blk..(o + 1) * blk]);
                    cursor += blk;
                }
            }
        }
        let handles: Vec<Tensor<T>> = parts.iter().map(|p| (*p).clone()).collect();
        let any = handles.iter().any(|h| h.requires_grad());
        self.emit(&out_shape, out, any, move |g| {
            let mut cursor = 0usize;
            let mut grads: Vec<Vec<T>> = handles
                .iter()
                .map(|h| vec![T::ZERO; if h.requires_grad() { h.numel() } else { 0 }])
                .collect();
            for o in 0..outer {
                for (pi, h) in handles.iter().enumerate() {
                    let blk = lens[pi] * inner;
                    if h.requires_grad() {
                        grads[pi][o * blk..(o + 1) * blk].copy_from_slice(&g[cursor..cursor + blk]);
                    }
                    cursor += blk;
                }
            }
            for (h, gr) in handles.iter().zip(grads.iter()) {
                if h.requires_grad() {
                    h.accumulate_grad(gr);
                }
            }
        })
    }

    /// Contiguous sub-range `[start, start+len)` along `axis`.
    pub fn slice(&self, a: &Tensor<T>, axis: usize, start: usize, len: usize) -> Tensor<T> {
        let shape = a.shape();
        assert!(
            axis < shape.len() && start + len <= shape[axis],
            "slice: range {start}..{} out of bounds on axis {axis} of shape {shape:?}",
            start + len
        );
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut out = vec![T::ZERO; outer * len * inner];
        {
            let ad = a.data();
            for o in 0..outer {
                let src = (o * full + start) * inner;
                let dst = o * len * inner;
                out[dst..dst + len * inner].copy_from_slice(&ad[src..src + len * inner]);
            }
        }
        let ah = a.clone();
        self.emit(&out_shape, out, a.requires_grad(), move |g| {
            let mut da = vec![T::ZERO; ah.numel()];
            for o in 0..outer {
                let dst = (o * full + start) * inner;
                let src = o * len * inner;
                da[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
            }
            ah.accumulate_grad(&da);
        })
    }

    // ── Fused neural primitives ──────────────────────────────────────

    /// Max-subtracted softmax along `axis`. Rows of `-inf` score entries
    /// come out as exact zeros, which is what the causal mask relies on.
    pub fn softmax(&self, a: &Tensor<T>, axis: usize) -> Tensor<T> {
        let shape = a.shape();
        assert!(
            axis < shape.len(),
            "softmax: axis {axis} out of range for shape {shape:?}"
        );
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![T::ZERO; a.numel()];
        {
            let ad = a.data();
            if inner == 1 {
                // Last-axis reduction: rows are contiguous.
                out.chunks_mut(len).zip(ad.chunks(len)).for_each(|(orow, arow)| {
                    let mut mx = T::neg_infinity();
                    for &v in arow {
                        mx = mx.max(v);
                    }
                    let mut denom = T::ZERO;
                    for (o, &v) in orow.iter_mut().zip(arow) {
                        let e = (v - mx).exp();
                        *o = e;
                        denom += e;
                    }
                    for o in orow.iter_mut() {
                        *o /= denom;
                    }
                });
            } else {
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |x: usize| (o * len + x) * inner + i;
                        let mut mx = T::neg_infinity();
                        for x in 0..len {
                            mx = mx.max(ad[idx(x)]);
                        }
                        let mut denom = T::ZERO;
                        for x in 0..len {
                            let e = (ad[idx(x)] - mx).exp();
                            out[idx(x)] = e;
                            denom += e;
                        }
                        for x in 0..len {
                            out[idx(x)] /= denom;
                        }
                    }
                }
            }
        }
        let ah = a.clone();
        let oh = out.clone();
        self.emit(&shape, out, a.requires_grad(), move |g| {
            let mut da = vec![T::ZERO; g.len()];
            if inner == 1 {
                da.chunks_mut(len)
                    .zip(g.chunks(len).zip(oh.chunks(len)))
                    .for_each(|(drow, (grow, srow))| {
                        let mut dot = T::ZERO;
                        for (&gv, &sv) in grow.iter().zip(srow) {
                            dot += gv * sv;
                        }
                        for ((d, &gv), &sv) in drow.iter_mut().zip(grow).zip(srow) {
                            *d = sv * (gv - dot);
                        }
                    });
            } else {
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |x: usize| (o * len + x) * inner + i;
                        let mut dot = T::ZERO;
                        for x in 0..len {
                            dot += g[idx(x)] * oh[idx(x)];
                        }
                        for x in 0..len {
                            da[idx(x)] = oh[idx(x)] * (g[idx(x)] - dot);
                        }
                    }
                }
            }
            ah.accumulate_grad(&da);
        })
    }

    /// Standardize over the last axis, then apply `gain ⊙ x̂ + bias`.
    pub fn layer_norm(
        &self,
        x: &Tensor<T>,
        gain: &Tensor<T>,
        bias: &Tensor<T>,
        eps: f64,
    ) -> Tensor<T> {
        let shape = x.shape();
        let d = *shape.last().expect("layer_norm: input must have at least one axis");
        assert_eq!(
            gain.numel(),
            d,
            "layer_norm: gain shape {:?} does not match last extent of {:?}",
            gain.shape(),
            shape
        );
        assert_eq!(
            bias.numel(),
            d,
            "layer_norm: bias shape {:?} does not match last extent of {:?}",
            bias.shape(),
            shape
        );
        assert!(eps > 0.0, "layer_norm: eps must be positive, got {eps}");
        let eps = T::from_f64(eps);
        let rows = x.numel() / d;
        let inv_d = T::ONE / T::from_f64(d as f64);
        let mut out = vec![T::ZERO; x.numel()];
        {
            let xd = x.data();
            let gd = gain.data();
            let bd = bias.data();
            for r in 0..rows {
                let row = &xd[r * d..(r + 1) * d];
                let mean: T = row.iter().copied().sum::<T>() * inv_d;
                let var: T = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
                let inv_std = T::ONE / (var + eps).sqrt();
                for j in 0..d {
                    out[r * d + j] = (row[j] - mean) * inv_std * gd[j] + bd[j];
                }
            }
        }
        let (xh, gh, bh) = (x.clone(), gain.clone(), bias.clone());
        let (need_x, need_g, need_b) = (x.requires_grad(), gain.requires_grad(), bias.requires_grad());
        self.emit(&shape, out, need_x || need_g || need_b, move |g| {
            let mut dx = Vec::new();
            let mut dgain = vec![T::ZERO; d];
            let mut dbias = vec![T::ZERO; d];
            {
                let xd = xh.data();
                let gd = gh.data();
                if need_x {
                    dx = vec![T::ZERO; xd.len()];
                }
                let d_t = T::from_f64(d as f64);
                let mut xhat = vec![T::ZERO; d];
                let mut dxhat = vec![T::ZERO; d];
                for r in 0..rows {
                    let row = &xd[r * d..(r + 1) * d];
                    let grow = &g[r * d..(r + 1) * d];
                    let mean: T = row.iter().copied().sum::<T>() * inv_d;
                    let var: T =
                        row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
                    let inv_std = T::ONE / (var + eps).sqrt();
                    for (h, &v) in xhat.iter_mut().zip(row) {
                        *h = (v - mean) * inv_std;
                    }
                    if need_g || need_b {
                        for j in 0..d {
                            dgain[j] += grow[j] * xhat[j];
                            dbias[j] += grow[j];
                        }
                    }
                    if need_x {
                        for j in 0..d {
                            dxhat[j] = grow[j] * gd[j];
                        }
                        let sum_dxhat: T = dxhat.iter().copied().sum();
                        let sum_dxhat_xhat: T =
                            dxhat.iter().zip(xhat.iter()).map(|(&a, &b)| a * b).sum();
                        for j in 0..d {
                            dx[r * d + j] = inv_std
                                * inv_d
                                * (d_t * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                        }
                    }
                }
            }
            if need_x {
                xh.accumulate_grad(&dx);
            }
            if need_g {
                gh.accumulate_grad(&dgain);
            }
            if need_b {
                bh.accumulate_grad(&dbias);
            }
        })
    }
}

fn permute_swap<T: Scalar>(src: &[T], shape: &[usize], ax0: usize, ax1: usize) -> Vec<T> {
    if ax0 == ax1 {
        return src.to_vec();
    }
    let (ax0, ax1) = (ax0.min(ax1), ax0.max(ax1));
    let nd = shape.len();
    let mut out = vec![T::ZERO; src.len()];

    if ax1 == nd - 1 && ax0 == nd - 2 {
        // Trailing 2-d transpose per leading block.
        let (r, c) = (shape[ax0], shape[ax1]);
        let block = r * c;
        for (sblk, oblk) in src.chunks(block).zip(out.chunks_mut(block)) {
            for i in 0..r {
                for j in 0..c {
                    oblk[j * r + i] = sblk[i * c + j];
                }
            }
        }
        return out;
    }

    // The axes after ax1 form a contiguous inner run; move whole runs.
    let inner: usize = shape[ax1 + 1..].iter().product();
    let outer: usize = shape[..ax0].iter().product();
    let mid: usize = shape[ax0 + 1..ax1].iter().product();
    let (e0, e1) = (shape[ax0], shape[ax1]);
    // src layout: [outer, e0, mid, e1, inner]; dst swaps e0 and e1.
    let mut dst = 0usize;
    for o in 0..outer {
        let so = o * e0 * mid * e1 * inner;
        for j1 in 0..e1 {
            for m in 0..mid {
                for j0 in 0..e0 {
                    let s = so + ((j0 * mid + m) * e1 + j1) * inner;
                    out[dst..dst + inner].copy_from_slice(&src[s..s + inner]);
                    dst += inner;
                }
            }
        }
    }
    out
}
