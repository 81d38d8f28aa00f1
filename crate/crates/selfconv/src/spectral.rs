//! 2D discrete Fourier transforms and element-wise complex operations.
//!
//! Conventions: the forward transform is unnormalized and the inverse
//! carries the 1/(H*W) factor. Transforms are applied per channel
//! (channel-wise 2D FFT); transform sizes are the raw image dimensions.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Plans a forward or inverse c2c FFT through the thread-local planner cache.
pub(crate) fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// Complex spectrum of an image, planar channel-major like [`ImageTensor`].
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<Complex<f64>>,
}

impl Spectrum {
    pub fn channel(&self, chan: usize) -> &[Complex<f64>] {
        let plane = self.height * self.width;
        &self.data[chan * plane..(chan + 1) * plane]
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize, chan: usize) -> Complex<f64> {
        self.data[(chan * self.height + u) * self.width + v]
    }
}

/// 2D c2c transform of one plane, in place: rows first, then columns.
fn fft2_plane(data: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    let row_fft = plan(w, inverse);
    let mut scratch = vec![Complex::default(); row_fft.get_inplace_scratch_len()];
    row_fft.process_with_scratch(data, &mut scratch);

    let col_fft = plan(h, inverse);
    let mut col = vec![Complex::default(); h];
    let mut cscratch = vec![Complex::default(); col_fft.get_inplace_scratch_len()];
    for v in 0..w {
        for u in 0..h {
            col[u] = data[u * w + v];
        }
        col_fft.process_with_scratch(&mut col, &mut cscratch);
        for u in 0..h {
            data[u * w + v] = col[u];
        }
    }
}

/// Unnormalized forward DFT, per channel.
pub fn fft2(img: &ImageTensor) -> Spectrum {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut data: Vec<Complex<f64>> =
        img.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
    for ch in 0..c {
        fft2_plane(&mut data[ch * h * w..(ch + 1) * h * w], h, w, false);
    }
    Spectrum { height: h, width: w, channels: c, data }
}

/// Inverse DFT with 1/(H*W) normalization.
///
/// The result of a well-formed pipeline is physically real; the imaginary
/// residue must satisfy `max|Im| <= 1e-8 * max|Re|` and is then discarded.
/// A larger residue signals a non-conjugate-symmetric spectrum where a real
/// result was expected and raises [`Error::SpectralResidue`].
pub fn ifft2(spec: &Spectrum) -> Result<ImageTensor> {
    let (h, w, c) = (spec.height, spec.width, spec.channels);
    let mut data = spec.data.clone();
    for ch in 0..c {
        fft2_plane(&mut data[ch * h * w..(ch + 1) * h * w], h, w, true);
    }
    let scale = 1.0 / (h * w) as f64;
    let mut max_re = 0.0f64;
    let mut max_im = 0.0f64;
    for z in &data {
        max_re = max_re.max((z.re * scale).abs());
        max_im = max_im.max((z.im * scale).abs());
    }
    if max_im > 1e-8 * max_re {
        return Err(Error::SpectralResidue(format!(
            "max|Im| = {max_im:.3e} exceeds 1e-8 * max|Re| = {:.3e}",
            1e-8 * max_re
        )));
    }
    ImageTensor::new(h, w, c, data.iter().map(|z| z.re * scale).collect())
}

/// Element-wise `a * conj(b)`, per channel.
pub fn conj_multiply(a: &Spectrum, b: &Spectrum) -> Result<Spectrum> {
    if a.height != b.height || a.width != b.width || a.channels != b.channels {
        return Err(Error::Shape(format!(
            "spectra {}x{}x{} vs {}x{}x{}",
            a.height, a.width, a.channels, b.height, b.width, b.channels
        )));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y.conj()).collect();
    Ok(Spectrum { height: a.height, width: a.width, channels: a.channels, data })
}

/// Pixelwise sum over channels, yielding a single-channel image.
pub fn channel_sum(img: &ImageTensor) -> ImageTensor {
    let (h, w) = (img.height(), img.width());
    let mut out = vec![0.0f64; h * w];
    for ch in 0..img.channels() {
        for (o, v) in out.iter_mut().zip(img.channel(ch)) {
            *o += v;
        }
    }
    ImageTensor::new(h, w, 1, out).expect("finite by construction")
}
