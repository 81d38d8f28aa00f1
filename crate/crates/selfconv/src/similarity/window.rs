//! Windowed FFT correlation kernel.
//!
//! Correlates a patch against the sub-image spanned by one (clipped) search
//! window: forward transforms of the sub-image and the zero-padded patch,
//! a conjugate product, and an inverse transform, restricted to the valid
//! (non-wraparound) anchor region. Channel slabs are accumulated in the
//! frequency domain, which realizes the channel summation of the
//! multi-channel formulation before the single inverse transform.
//!
//! Implementation notes, all behind the contract that the output equals the
//! direct spatial correlation:
//! - transforms run at the next 5-smooth size >= the region extent, and only
//!   the valid anchor region of the output is read;
//! - row transforms pack two real rows into one complex transform;
//! - column transforms run batched over all row-spectrum bins.

use std::cell::RefCell;

use rustfft::num_complex::Complex;

use crate::spectral::plan;
use crate::tensor::ImageTensor;

/// Smallest 5-smooth integer >= `x`. Transform sizes with factors {2, 3, 5}
/// keep rustfft on its fast mixed-radix butterflies.
pub(crate) fn fast_size(x: usize) -> usize {
    let mut n = x.max(1);
    loop {
        let mut m = n;
        for f in [2usize, 3, 5] {
            while m % f == 0 {
                m /= f;
            }
        }
        if m == 1 {
            return n;
        }
        n += 1;
    }
}

/// One correlation request: patch slab(s) against an image region.
pub(crate) struct CorrRequest<'a> {
    pub img: &'a ImageTensor,
    /// Patch anchor (top-left) in the image.
    pub patch_row: usize,
    pub patch_col: usize,
    pub patch_chan: usize,
    pub side: usize,
    pub depth: usize,
    /// First image channel to correlate against (candidate channel offset).
    pub img_chan0: usize,
    /// Inclusive anchor ranges of the window.
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

struct Workspace {
    sub: Vec<Complex<f64>>,
    pat: Vec<Complex<f64>>,
    acc: Vec<Complex<f64>>,
    pack: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

thread_local! {
    static WS: RefCell<Workspace> = RefCell::new(Workspace {
        sub: Vec::new(),
        pat: Vec::new(),
        acc: Vec::new(),
        pack: Vec::new(),
        scratch: Vec::new(),
    });
}

/// Standard FFT flop model, used for the instrumented work counters.
#[inline]
fn fft_flops(len: usize) -> u64 {
    (5.0 * len as f64 * (len as f64).log2()).round() as u64
}

/// Forward-transforms real rows two at a time into half-spectrum columns.
///
/// `row_of(q)` returns the real content of row `q` (length <= `lw`, the
/// remainder is zero padding). The spectrum of row `q` at bin `k` lands in
/// `dst[k * lh + q]`.
#[allow(clippy::too_many_arguments)]
fn forward_rows<'a, F>(
    row_of: F,
    n_rows: usize,
    lw: usize,
    lh: usize,
    nbins: usize,
    dst: &mut [Complex<f64>],
    pack: &mut [Complex<f64>],
    scratch: &mut [Complex<f64>],
) -> u64
where
    F: Fn(usize) -> &'a [f64],
{
    let fwd = plan(lw, false);
    let mut flops = 0;
    let mut q = 0;
    while q < n_rows {
        let paired = q + 1 < n_rows;
        pack.fill(Complex::new(0.0, 0.0));
        for (p, &v) in pack.iter_mut().zip(row_of(q)) {
            p.re = v;
        }
        if paired {
            // Second row rides in the imaginary lane.
            for (p, &v) in pack.iter_mut().zip(row_of(q + 1)) {
                p.im = v;
            }
        }
        fwd.process_with_scratch(pack, scratch);
        flops += fft_flops(lw);
        for k in 0..nbins {
            let a = pack[k];
            let b = pack[(lw - k) % lw].conj();
            dst[k * lh + q] = Complex::new((a.re + b.re) * 0.5, (a.im + b.im) * 0.5);
            if paired {
                // x1 = (a - b) / (2i)
                let d = a - b;
                dst[k * lh + q + 1] = Complex::new(d.im * 0.5, -d.re * 0.5);
            }
        }
        q += 2;
    }
    flops
}

/// Computes the raw correlation map over the window's anchor grid.
///
/// `out` receives `n_rows * n_cols` values in raster order. Returns the
/// multiply-add count under the standard FFT flop model.
pub(crate) fn correlate(req: &CorrRequest, out: &mut Vec<f64>) -> u64 {
    let n_rows = req.row1 - req.row0 + 1;
    let n_cols = req.col1 - req.col0 + 1;
    let rh = n_rows + req.side - 1;
    let rw = n_cols + req.side - 1;
    let lh = fast_size(rh);
    let lw = fast_size(rw);
    let nbins = lw / 2 + 1;
    let mut flops = 0u64;

    WS.with(|ws| {
        let ws = &mut *ws.borrow_mut();
        ws.sub.resize(nbins * lh, Complex::new(0.0, 0.0));
        ws.pat.resize(nbins * lh, Complex::new(0.0, 0.0));
        ws.acc.resize(nbins * lh, Complex::new(0.0, 0.0));
        ws.pack.resize(lw.max(lh), Complex::new(0.0, 0.0));
        let fwd_h = plan(lh, false);
        let inv_h = plan(lh, true);
        let inv_w = plan(lw, true);
        let scratch_len = fwd_h
            .get_inplace_scratch_len()
            .max(inv_h.get_inplace_scratch_len())
            .max(inv_w.get_inplace_scratch_len())
            .max(plan(lw, false).get_inplace_scratch_len());
        ws.scratch.resize(scratch_len, Complex::new(0.0, 0.0));
        ws.acc.fill(Complex::new(0.0, 0.0));

        for d in 0..req.depth {
            let ich = req.img_chan0 + d;
            let pch = req.patch_chan + d;

            // Region rows -> half-spectrum columns.
            ws.sub.fill(Complex::new(0.0, 0.0));
            flops += forward_rows(
                |q| &req.img.row(req.row0 + q, ich)[req.col0..req.col0 + rw],
                rh,
                lw,
                lh,
                nbins,
                &mut ws.sub,
                &mut ws.pack[..lw],
                &mut ws.scratch,
            );
            // Batched column transforms: nbins chunks of length lh.
            fwd_h.process_with_scratch(&mut ws.sub, &mut ws.scratch);
            flops += nbins as u64 * fft_flops(lh);

            // Patch rows (only `side` of them are nonzero).
            ws.pat.fill(Complex::new(0.0, 0.0));
            flops += forward_rows(
                |l| &req.img.row(req.patch_row + l, pch)[req.patch_col..req.patch_col + req.side],
                req.side,
                lw,
                lh,
                nbins,
                &mut ws.pat,
                &mut ws.pack[..lw],
                &mut ws.scratch,
            );
            fwd_h.process_with_scratch(&mut ws.pat, &mut ws.scratch);
            flops += nbins as u64 * fft_flops(lh);

            // acc += sub * conj(pat), the channel summation.
            for (a, (s, p)) in ws.acc.iter_mut().zip(ws.sub.iter().zip(&ws.pat)) {
                *a += s * p.conj();
            }
            flops += (nbins * lh) as u64 * 6;
        }

        // Inverse columns, batched.
        inv_h.process_with_scratch(&mut ws.acc, &mut ws.scratch);
        flops += nbins as u64 * fft_flops(lh);

        // Inverse rows two at a time; only the valid anchor region is kept.
        out.clear();
        out.resize(n_rows * n_cols, 0.0);
        let norm = 1.0 / (lh * lw) as f64;
        let mut u = 0;
        while u < n_rows {
            let paired = u + 1 < n_rows;
            let pack = &mut ws.pack[..lw];
            for k in 0..nbins {
                let s0 = ws.acc[k * lh + u];
                let s1 = if paired { ws.acc[k * lh + u + 1] } else { Complex::new(0.0, 0.0) };
                pack[k] = Complex::new(s0.re - s1.im, s0.im + s1.re); // s0 + i*s1
            }
            for k in nbins..lw {
                let s0 = ws.acc[(lw - k) * lh + u].conj();
                let s1 = if paired {
                    ws.acc[(lw - k) * lh + u + 1].conj()
                } else {
                    Complex::new(0.0, 0.0)
                };
                pack[k] = Complex::new(s0.re - s1.im, s0.im + s1.re);
            }
            inv_w.process_with_scratch(pack, &mut ws.scratch);
            flops += fft_flops(lw);
            for j in 0..n_cols {
                out[u * n_cols + j] = pack[j].re * norm;
            }
            if paired {
                for j in 0..n_cols {
                    out[(u + 1) * n_cols + j] = pack[j].im * norm;
                }
            }
            u += 2;
        }
    });
    flops
}
