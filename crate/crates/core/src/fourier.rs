//! Discrete Fourier analysis: spectra, phase, amplitude and reconstructions.
//!
//! Transforms follow the unnormalised forward convention
//! `X(u) = Σₕ x(h)·e^{-j2πhu/N}` (and its separable 2-D form); inverses carry
//! the `1/N` factor. Multi-channel inputs are transformed channel by channel.

use std::cell::Cell;

use crate::error::FourierError;
use crate::scalar::Scalar;

thread_local! {
    static TRANSFORMS: Cell<u64> = const { Cell::new(0) };
}

/// Number of forward and inverse transforms run on the current thread.
pub fn transform_count() -> u64 {
    TRANSFORMS.with(Cell::get)
}

fn tick() {
    TRANSFORMS.with(|c| c.set(c.get() + 1));
}

/// Complex spectrum of one or more equally shaped channels.
///
/// `shape` is the per-channel transform shape (`[N]` or `[H, W]`); `re` and
/// `im` hold `channels` consecutive blocks of `shape.product()` bins.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum<S> {
    re: Vec<S>,
    im: Vec<S>,
    shape: Vec<usize>,
    channels: usize,
}

impl<S: Scalar> Spectrum<S> {
    pub fn from_parts(re: Vec<S>, im: Vec<S>, shape: Vec<usize>, channels: usize) -> Result<Self, FourierError> {
        let per: usize = shape.iter().product();
        if shape.is_empty() || shape.len() > 2 {
            return Err(FourierError::Rank(shape.len()));
        }
        if per == 0 || channels == 0 {
            return Err(FourierError::Empty);
        }
        if re.len() != per * channels || im.len() != re.len() {
            return Err(FourierError::ShapeMismatch {
                shape,
                len: re.len().max(im.len()),
            });
        }
        Ok(Spectrum {
            re,
            im,
            shape,
            channels,
        })
    }

    pub fn re(&self) -> &[S] {
        &self.re
    }

    pub fn im(&self) -> &[S] {
        &self.im
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    fn bins_per_channel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Angle of `(re, im)` in `(-π, π]`, with `angle(0, 0) = 0`.
fn angle<S: Scalar>(re: S, im: S) -> S {
    if re == S::zero() && im == S::zero() {
        return S::zero();
    }
    let a = im.atan2(re);
    if a <= -S::PI() {
        S::PI()
    } else {
        a
    }
}

/// `e^{sign·j2πk/n}` with `k` reduced modulo `n` before the division.
fn twiddle<S: Scalar>(k: usize, n: usize, sign: S) -> (S, S) {
    let theta = sign * S::TAU() * S::count(k % n) / S::count(n);
    (theta.cos(), theta.sin())
}

/// Direct O(N²) complex DFT. `sign = -1` forward, `+1` inverse (unscaled).
fn dft_complex<S: Scalar>(re: &[S], im: &[S], sign: S) -> (Vec<S>, Vec<S>) {
    let n = re.len();
    let mut out_re = vec![S::zero(); n];
    let mut out_im = vec![S::zero(); n];
    for u in 0..n {
        let (mut acc_re, mut acc_im) = (S::zero(), S::zero());
        for h in 0..n {
            let (c, s) = twiddle(h * u, n, sign);
            acc_re += re[h] * c - im[h] * s;
            acc_im += re[h] * s + im[h] * c;
        }
        out_re[u] = acc_re;
        out_im[u] = acc_im;
    }
    (out_re, out_im)
}

/// Recursive radix-2 decimation in time; falls back to the direct DFT for
/// lengths that are not powers of two.
fn fft_complex<S: Scalar>(re: &[S], im: &[S], sign: S) -> (Vec<S>, Vec<S>) {
    let n = re.len();
    if n <= 1 {
        return (re.to_vec(), im.to_vec());
    }
    if !n.is_power_of_two() {
        return dft_complex(re, im, sign);
    }
    let half = n / 2;
    let split = |v: &[S], off: usize| -> Vec<S> { v.iter().skip(off).step_by(2).copied().collect() };
    let (er, ei) = fft_complex(&split(re, 0), &split(im, 0), sign);
    let (or, oi) = fft_complex(&split(re, 1), &split(im, 1), sign);
    let mut out_re = vec![S::zero(); n];
    let mut out_im = vec![S::zero(); n];
    for k in 0..half {
        let (c, s) = twiddle(k, n, sign);
        let tr = or[k] * c - oi[k] * s;
        let ti = or[k] * s + oi[k] * c;
        out_re[k] = er[k] + tr;
        out_im[k] = ei[k] + ti;
        out_re[k + half] = er[k] - tr;
        out_im[k + half] = ei[k] - ti;
    }
    (out_re, out_im)
}

/// Separable 2-D transform of an `h×w` complex grid: rows, then columns.
fn fft2_complex<S: Scalar>(re: &[S], im: &[S], h: usize, w: usize, sign: S) -> (Vec<S>, Vec<S>) {
    let mut out_re = re.to_vec();
    let mut out_im = im.to_vec();
    for r in 0..h {
        let span = r * w..(r + 1) * w;
        let (a, b) = fft_complex(&out_re[span.clone()], &out_im[span.clone()], sign);
        out_re[span.clone()].copy_from_slice(&a);
        out_im[span].copy_from_slice(&b);
    }
    let mut col_re = vec![S::zero(); h];
    let mut col_im = vec![S::zero(); h];
    for c in 0..w {
        for r in 0..h {
            col_re[r] = out_re[r * w + c];
            col_im[r] = out_im[r * w + c];
        }
        let (a, b) = fft_complex(&col_re, &col_im, sign);
        for r in 0..h {
            out_re[r * w + c] = a[r];
            out_im[r * w + c] = b[r];
        }
    }
    (out_re, out_im)
}

fn one_channel<S: Scalar>(re: Vec<S>, im: Vec<S>, shape: Vec<usize>) -> Spectrum<S> {
    Spectrum {
        re,
        im,
        shape,
        channels: 1,
    }
}

/// Direct evaluation of the DFT sum. Serves as the oracle for [`fft`].
pub fn dft_naive<S: Scalar>(signal: &[S]) -> Result<Spectrum<S>, FourierError> {
    tick();
    if signal.is_empty() {
        return Err(FourierError::Empty);
    }
    let zeros = vec![S::zero(); signal.len()];
    let (re, im) = dft_complex(signal, &zeros, -S::one());
    Ok(one_channel(re, im, vec![signal.len()]))
}

/// Fast transform of a real signal; identical to [`dft_naive`] when the
/// length is not a power of two.
pub fn fft<S: Scalar>(signal: &[S]) -> Result<Spectrum<S>, FourierError> {
    tick();
    if signal.is_empty() {
        return Err(FourierError::Empty);
    }
    let zeros = vec![S::zero(); signal.len()];
    let (re, im) = fft_complex(signal, &zeros, -S::one());
    Ok(one_channel(re, im, vec![signal.len()]))
}

/// 2-D transform of a row-major `h×w` grid.
pub fn fft2<S: Scalar>(x: &[S], h: usize, w: usize) -> Result<Spectrum<S>, FourierError> {
    tick();
    if h == 0 || w == 0 {
        return Err(FourierError::Empty);
    }
    if x.len() != h * w {
        return Err(FourierError::ShapeMismatch {
            shape: vec![h, w],
            len: x.len(),
        });
    }
    let zeros = vec![S::zero(); x.len()];
    let (re, im) = fft2_complex(x, &zeros, h, w, -S::one());
    Ok(one_channel(re, im, vec![h, w]))
}

/// Complex inverse transform (with the `1/N` factor), channel by channel.
pub fn inverse_complex<S: Scalar>(s: &Spectrum<S>) -> (Vec<S>, Vec<S>) {
    tick();
    let per = s.bins_per_channel();
    let norm = S::one() / S::count(per);
    let mut out_re = Vec::with_capacity(s.len());
    let mut out_im = Vec::with_capacity(s.len());
    for ch in 0..s.channels {
        let span = ch * per..(ch + 1) * per;
        let (r, i) = match s.shape[..] {
            [h, w] => fft2_complex(&s.re[span.clone()], &s.im[span], h, w, S::one()),
            _ => fft_complex(&s.re[span.clone()], &s.im[span], S::one()),
        };
        out_re.extend(r.into_iter().map(|v| v * norm));
        out_im.extend(i.into_iter().map(|v| v * norm));
    }
    (out_re, out_im)
}

/// Real part of the inverse transform.
pub fn inverse<S: Scalar>(s: &Spectrum<S>) -> Vec<S> {
    inverse_complex(s).0
}

/// Per-bin angle of the spectrum in `(-π, π]`.
pub fn phase<S: Scalar>(s: &Spectrum<S>) -> Vec<S> {
    s.re.iter().zip(&s.im).map(|(&r, &i)| angle(r, i)).collect()
}

/// Per-bin magnitude `√(R² + I²)`.
pub fn amplitude<S: Scalar>(s: &Spectrum<S>) -> Vec<S> {
    s.re.iter().zip(&s.im).map(|(&r, &i)| r.hypot(i)).collect()
}

/// Spectrum with the given magnitudes and angles, laid out like `like`.
pub fn from_polar<S: Scalar>(amplitude: &[S], phase: &[S], like: &Spectrum<S>) -> Result<Spectrum<S>, FourierError> {
    if amplitude.len() != like.len() || phase.len() != like.len() {
        return Err(FourierError::ShapeMismatch {
            shape: like.shape.clone(),
            len: amplitude.len().min(phase.len()),
        });
    }
    let re = amplitude.iter().zip(phase).map(|(&a, &p)| a * p.cos()).collect();
    let im = amplitude.iter().zip(phase).map(|(&a, &p)| a * p.sin()).collect();
    Spectrum::from_parts(re, im, like.shape.clone(), like.channels)
}

/// Inverse transform of the unit-amplitude spectrum `e^{j·phase}`.
pub fn reconstruct_phase_only<S: Scalar>(s: &Spectrum<S>) -> Vec<S> {
    let ones = vec![S::one(); s.len()];
    let unit = from_polar(&ones, &phase(s), s).expect("layout taken from the source spectrum");
    inverse(&unit)
}

/// Transforms each leading-axis channel of `x` independently.
///
/// `shape` is `[C, N]` (1-D channels) or `[C, H, W]` (2-D channels).
pub fn per_channel_spectrum<S: Scalar>(x: &[S], shape: &[usize]) -> Result<Spectrum<S>, FourierError> {
    let (channels, inner) = match shape {
        [c, rest @ ..] if !rest.is_empty() && rest.len() <= 2 => (*c, rest.to_vec()),
        _ => return Err(FourierError::Rank(shape.len().saturating_sub(1))),
    };
    let per: usize = inner.iter().product();
    if channels == 0 || per == 0 {
        return Err(FourierError::Empty);
    }
    if x.len() != channels * per {
        return Err(FourierError::ShapeMismatch {
            shape: shape.to_vec(),
            len: x.len(),
        });
    }
    let mut re = Vec::with_capacity(x.len());
    let mut im = Vec::with_capacity(x.len());
    for chunk in x.chunks(per) {
        let spec = match inner[..] {
            [h, w] => fft2(chunk, h, w)?,
            _ => fft(chunk)?,
        };
        re.extend(spec.re);
        im.extend(spec.im);
    }
    Spectrum::from_parts(re, im, inner, channels)
}

/// Phase of every channel's spectrum, same layout as `x`.
pub fn per_channel_phase<S: Scalar>(x: &[S], shape: &[usize]) -> Result<Vec<S>, FourierError> {
    Ok(phase(&per_channel_spectrum(x, shape)?))
}

/// Amplitude of every channel's spectrum, same layout as `x`.
pub fn per_channel_amplitude<S: Scalar>(x: &[S], shape: &[usize]) -> Result<Vec<S>, FourierError> {
    Ok(amplitude(&per_channel_spectrum(x, shape)?))
}
