//! Image metrics: PSNR, SSIM (plain and on the tape), and a frozen random
//! convolution bank standing in for a learned perceptual distance.

use std::sync::Arc;

use diffcore::{Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::params::gaussian;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Window size used for a `width × height` input: 11, or the largest odd
/// size that fits.
pub fn ssim_window(width: usize, height: usize) -> Result<usize> {
    let m = width.min(height).min(SSIM_WINDOW);
    if m == 0 {
        return Err(Error::InvalidArgument("SSIM of an empty image".into()));
    }
    Ok(if m % 2 == 0 { m - 1 } else { m })
}

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::InvalidArgument(format!(
            "image sizes differ: {}×{} vs {}×{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Valid-region separable blur of one `w × h` plane.
fn blur(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w + 1 - k, h + 1 - k);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over channels and valid window positions.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let (w, h) = (a.width, a.height);
    let taps = gaussian_window(ssim_window(w, h)?, SSIM_SIGMA);
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = (0..w * h).map(|i| a.data[3 * i + c]).collect();
        let y: Vec<f64> = (0..w * h).map(|i| b.data[3 * i + c]).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| blur(p, w, h, &taps));
        let n = mx.len();
        let mut s = 0.0;
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            s += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2)) / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += s / n as f64;
    }
    Ok(total / 3.0)
}

/// Banded `(n + 1 − k) × n` matrix applying `taps` as a valid correlation.
fn toeplitz(n: usize, taps: &[f64]) -> Tensor {
    let k = taps.len();
    let m = n + 1 - k;
    let mut data = vec![0.0; m * n];
    for r in 0..m {
        data[r * n + r..r * n + r + k].copy_from_slice(taps);
    }
    Tensor::matrix(m, n, data).expect("toeplitz shape")
}

/// SSIM of two `(width·height) × 3` pixel matrices (row-major pixels).
pub fn ssim_on_tape(tape: &mut Tape, a: Var, b: Var, width: usize, height: usize) -> Result<Var> {
    let n = width * height;
    for v in [a, b] {
        if tape.shape(v) != [n, 3] {
            return Err(Error::InvalidArgument(format!(
                "SSIM input shape {:?} does not match {width}×{height}×3",
                tape.shape(v)
            )));
        }
    }
    let taps = gaussian_window(ssim_window(width, height)?, SSIM_SIGMA);
    let gv = tape.constant(toeplitz(height, &taps));
    let ght = {
        let g = toeplitz(width, &taps);
        let (r, c) = (g.shape()[0], g.shape()[1]);
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = g.data()[i * c + j];
            }
        }
        tape.constant(Tensor::matrix(c, r, t)?)
    };
    let blur = |tape: &mut Tape, p: Var| -> Result<Var> {
        let l = tape.matmul(gv, p)?;
        Ok(tape.matmul(l, ght)?)
    };
    let mut channel_means = Vec::with_capacity(3);
    for c in 0..3 {
        let x = tape.slice_cols(a, c, 1)?;
        let x = tape.reshape(x, vec![height, width])?;
        let y = tape.slice_cols(b, c, 1)?;
        let y = tape.reshape(y, vec![height, width])?;
        let xx = tape.mul(x, x)?;
        let yy = tape.mul(y, y)?;
        let xy = tape.mul(x, y)?;
        let ux = blur(tape, x)?;
        let uy = blur(tape, y)?;
        let exx = blur(tape, xx)?;
        let eyy = blur(tape, yy)?;
        let exy = blur(tape, xy)?;
        let ux2 = tape.mul(ux, ux)?;
        let uy2 = tape.mul(uy, uy)?;
        let uxy = tape.mul(ux, uy)?;
        let vx = tape.sub(exx, ux2)?;
        let vy = tape.sub(eyy, uy2)?;
        let cxy = tape.sub(exy, uxy)?;
        let n1 = tape.scale(uxy, 2.0);
        let n1 = tape.add_scalar(n1, SSIM_C1);
        let n2 = tape.scale(cxy, 2.0);
        let n2 = tape.add_scalar(n2, SSIM_C2);
        let d1 = tape.add(ux2, uy2)?;
        let d1 = tape.add_scalar(d1, SSIM_C1);
        let d2 = tape.add(vx, vy)?;
        let d2 = tape.add_scalar(d2, SSIM_C2);
        let num = tape.mul(n1, n2)?;
        let den = tape.mul(d1, d2)?;
        let map = tape.div(num, den)?;
        channel_means.push(tape.mean(map));
    }
    let s = tape.add(channel_means[0], channel_means[1])?;
    let s = tape.add(s, channel_means[2])?;
    Ok(tape.scale(s, 1.0 / 3.0))
}

/// PSNR in dB over the bounding box of `mask` (whole image if `None`).
/// Identical inputs give `+∞`.
pub fn psnr(a: &Image, b: &Image, mask: Option<&Mask>) -> Result<f64> {
    check_pair(a, b)?;
    let (x0, y0, x1, y1) = match mask {
        None => (0, 0, a.width - 1, a.height - 1),
        Some(m) => {
            if m.width != a.width || m.height != a.height {
                return Err(Error::InvalidArgument("mask size differs from image size".into()));
            }
            m.bbox()
                .ok_or_else(|| Error::InvalidArgument("PSNR mask has no pixels".into()))?
        }
    };
    let mut se = 0.0;
    let mut n = 0usize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let i = 3 * (y * a.width + x);
            for c in 0..3 {
                let d = a.data[i + c] - b.data[i + c];
                se += d * d;
                n += 1;
            }
        }
    }
    let mse = se / n as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

pub const PERCEPTUAL_SEED: u64 = 0x9e37_79b9;
pub const PERCEPTUAL_FILTERS: usize = 16;
pub const PERCEPTUAL_SCALES: usize = 3;

/// Frozen random 3×3 RGB filters applied at three scales; the distance is
/// the per-scale mean squared ReLU-feature difference, summed.
#[derive(Debug, Clone)]
pub struct PerceptualProxy {
    /// `27 × filters`, rows ordered `(dy, dx, channel)`.
    pub filters: Arc<Tensor>,
}

impl Default for PerceptualProxy {
    fn default() -> Self {
        Self::new(PERCEPTUAL_SEED)
    }
}

impl PerceptualProxy {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let filters = gaussian(27, PERCEPTUAL_FILTERS, 1.0 / 27f64.sqrt(), &mut rng);
        Self {
            filters: Arc::new(filters),
        }
    }

    fn features(&self, tape: &mut Tape, img: Var, w: usize, h: usize, filters: Var) -> Result<Var> {
        let (ow, oh) = (w - 2, h - 2);
        let mut index = Vec::with_capacity(ow * oh * 27);
        for y in 0..oh {
            for x in 0..ow {
                for dy in 0..3 {
                    for dx in 0..3 {
                        let p = (y + dy) * w + x + dx;
                        index.extend([3 * p, 3 * p + 1, 3 * p + 2]);
                    }
                }
            }
        }
        let cols = tape.gather(img, Arc::new(index), vec![ow * oh, 27])?;
        let f = tape.matmul(cols, filters)?;
        Ok(tape.relu(f))
    }

    fn pool(tape: &mut Tape, img: Var, w: usize, h: usize) -> Result<Var> {
        let (ow, oh) = (w / 2, h / 2);
        let mut acc = None;
        for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let index: Vec<usize> = (0..oh)
                .flat_map(|y| (0..ow).map(move |x| (2 * y + dy) * w + 2 * x + dx))
                .flat_map(|p| [3 * p, 3 * p + 1, 3 * p + 2])
                .collect();
            let g = tape.gather(img, Arc::new(index), vec![ow * oh, 3])?;
            acc = Some(match acc {
                None => g,
                Some(a) => tape.add(a, g)?,
            });
        }
        Ok(tape.scale(acc.expect("four taps"), 0.25))
    }

    /// Distance between two `(w·h) × 3` pixel matrices. Scales smaller than
    /// the filter support are skipped.
    pub fn distance_on_tape(&self, tape: &mut Tape, a: Var, b: Var, width: usize, height: usize) -> Result<Var> {
        for v in [a, b] {
            if tape.shape(v) != [width * height, 3] {
                return Err(Error::InvalidArgument(format!(
                    "perceptual input shape {:?} does not match {width}×{height}×3",
                    tape.shape(v)
                )));
            }
        }
        let filters = tape.constant_shared(self.filters.clone());
        let (mut a, mut b, mut w, mut h) = (a, b, width, height);
        let mut total = tape.constant(Tensor::scalar(0.0));
        for s in 0..PERCEPTUAL_SCALES {
            if w < 3 || h < 3 {
                break;
            }
            let fa = self.features(tape, a, w, h, filters)?;
            let fb = self.features(tape, b, w, h, filters)?;
            let d = tape.sub(fa, fb)?;
            let d = tape.square(d);
            let d = tape.mean(d);
            total = tape.add(total, d)?;
            if s + 1 < PERCEPTUAL_SCALES {
                a = Self::pool(tape, a, w, h)?;
                b = Self::pool(tape, b, w, h)?;
                w /= 2;
                h /= 2;
            }
        }
        Ok(total)
    }

    pub fn distance(&self, a: &Image, b: &Image) -> Result<f64> {
        check_pair(a, b)?;
        let mut tape = Tape::new();
        let n = a.width * a.height;
        let va = tape.constant(Tensor::matrix(n, 3, a.data.clone())?);
        let vb = tape.constant(Tensor::matrix(n, 3, b.data.clone())?);
        let d = self.distance_on_tape(&mut tape, va, vb, a.width, a.height)?;
        Ok(tape.value(d).data()[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_data(w, h, (0..3 * w * h).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn ssim_identical_is_exactly_one() {
        let a = random_image(20, 17, 1);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ssim_of_negative_is_below_one() {
        let a = random_image(16, 16, 2);
        let mut b = a.clone();
        b.data.iter_mut().for_each(|v| *v = 1.0 - *v);
        assert!(ssim(&a, &b).unwrap() < 0.5);
    }

    #[test]
    fn ssim_size_mismatch() {
        assert!(matches!(
            ssim(&random_image(8, 8, 0), &random_image(9, 8, 0)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn ssim_tape_matches_plain() {
        for (w, h) in [(32, 32), (13, 9), (4, 4)] {
            let a = random_image(w, h, 3);
            let b = random_image(w, h, 4);
            let mut tape = Tape::new();
            let va = tape.constant(Tensor::matrix(w * h, 3, a.data.clone()).unwrap());
            let vb = tape.constant(Tensor::matrix(w * h, 3, b.data.clone()).unwrap());
            let s = ssim_on_tape(&mut tape, va, vb, w, h).unwrap();
            let t = tape.value(s).data()[0];
            assert!((t - ssim(&a, &b).unwrap()).abs() < 1e-12, "{w}×{h}");
        }
    }

    #[test]
    fn psnr_closed_form() {
        let a = Image::new(4, 4);
        let mut b = Image::new(4, 4);
        b.data.iter_mut().for_each(|v| *v = 0.1);
        assert!((psnr(&a, &b, None).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(psnr(&a, &a, None).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_uses_mask_bounding_box() {
        let a = Image::new(4, 4);
        let mut b = Image::new(4, 4);
        b.set_pixel(3, 3, [1.0; 3]);
        let mut m = Mask {
            width: 4,
            height: 4,
            data: vec![false; 16],
        };
        m.data[0] = true;
        m.data[5] = true;
        assert_eq!(psnr(&a, &b, Some(&m)).unwrap(), f64::INFINITY);
    }

    #[test]
    fn perceptual_zero_for_identical_and_deterministic() {
        let a = random_image(16, 16, 5);
        let b = random_image(16, 16, 6);
        let p = PerceptualProxy::default();
        assert_eq!(p.distance(&a, &a).unwrap(), 0.0);
        let d = p.distance(&a, &b).unwrap();
        assert!(d > 0.0);
        assert_eq!(PerceptualProxy::default().distance(&a, &b).unwrap(), d);
    }
}
