//! SSIM and PSNR against frozen reference values and a direct-window
//! implementation that shares no code with the library.

use compnerf::image::{Image, Mask};
use compnerf::metrics::{psnr, ssim, PerceptualProxy};
use proptest::prelude::*;

/// 31-bit linear congruential stream, reproducible outside Rust.
fn lcg(n: usize, seed: u64) -> Vec<f64> {
    let mut s = seed;
    (0..n)
        .map(|_| {
            s = (s * 1103515245 + 12345) % (1 << 31);
            s as f64 / (1u64 << 31) as f64
        })
        .collect()
}

fn pattern(kind: usize, w: usize, h: usize, seed: u64) -> Image {
    let noise = lcg(w * h * 3, seed);
    let mut img = Image::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let c: [f64; 3] = std::array::from_fn(|c| match kind {
                0 => noise[3 * (y * w + x) + c],
                1 => 0.5 + 0.4 * (0.37 * x as f64 + 0.23 * y as f64 + c as f64).sin(),
                _ => ((x / 4 + y / 4) % 2) as f64 * 0.8 + 0.1,
            });
            img.set_pixel(x, y, c);
        }
    }
    img
}

fn perturb(img: &Image, seed: u64, amp: f64) -> Image {
    let n = lcg(img.data.len(), seed);
    Image {
        data: img.data.iter().zip(n).map(|(v, r)| (v + amp * (r - 0.5)).clamp(0.0, 1.0)).collect(),
        ..img.clone()
    }
}

/// `(kind, w, h, seed_a, seed_b, amplitude, reference)`; references from
/// scikit-image `structural_similarity(gaussian_weights=True, sigma=1.5,
/// use_sample_covariance=False, data_range=1, channel_axis=2)`.
const REFERENCE: [(usize, usize, usize, u64, u64, f64, f64); 5] = [
    (0, 32, 32, 1, 2, 0.0, -0.00587192799833042),
    (1, 32, 24, 3, 4, 0.3, 0.8593486612787045),
    (2, 40, 40, 5, 6, 0.5, 0.9535519441444525),
    (1, 16, 16, 7, 8, 0.2, 0.9321959904230872),
    (0, 11, 13, 9, 10, 0.0, -0.14958518530945153),
];

fn case(c: &(usize, usize, usize, u64, u64, f64, f64)) -> (Image, Image) {
    let a = pattern(c.0, c.1, c.2, c.3);
    let b = if c.5 > 0.0 { perturb(&a, c.4, c.5) } else { pattern(c.0, c.1, c.2, c.4) };
    (a, b)
}

/// Per-pixel 2-D Gaussian window over the fully-contained positions.
fn naive_ssim(a: &Image, b: &Image) -> f64 {
    let win = 11usize;
    let r = win / 2;
    let g: Vec<f64> = (0..win).map(|i| (-((i as f64 - r as f64).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
    let gs: f64 = g.iter().sum();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        for cy in r..a.height - r {
            for cx in r..a.width - r {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..win {
                    for dx in 0..win {
                        let w = g[dy] * g[dx] / (gs * gs);
                        let (x, y) = (cx + dx - r, cy + dy - r);
                        let p = a.pixel(x, y)[ch];
                        let q = b.pixel(x, y)[ch];
                        mx += w * p;
                        my += w * q;
                        xx += w * p * p;
                        yy += w * q * q;
                        xy += w * p * q;
                    }
                }
                let (vx, vy, cov) = (xx - mx * mx, yy - my * my, xy - mx * my);
                total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

pub fn ssim_matches_reference_values() {
    for c in &REFERENCE {
        let (a, b) = case(c);
        let got = ssim(&a, &b).unwrap();
        assert!((got - c.6).abs() < 1e-6, "{c:?}: got {got}");
    }
}

pub fn ssim_matches_direct_window_implementation() {
    for c in &REFERENCE {
        let (a, b) = case(c);
        let got = ssim(&a, &b).unwrap();
        let naive = naive_ssim(&a, &b);
        assert!((got - naive).abs() < 1e-9, "{c:?}: {got} vs {naive}");
    }
}

pub fn ssim_of_identical_images_is_exactly_one() {
    for c in &REFERENCE {
        let (a, _) = case(c);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }
    let flat = Image::new(20, 20);
    assert_eq!(ssim(&flat, &flat).unwrap(), 1.0);
}

fn corner_mask(w: usize, h: usize, a: (usize, usize), b: (usize, usize)) -> Mask {
    let mut data = vec![false; w * h];
    data[a.1 * w + a.0] = true;
    data[b.1 * w + b.0] = true;
    Mask { width: w, height: h, data }
}

pub fn psnr_matches_reference_values() {
    let a = Image::from_data(24, 20, lcg(24 * 20 * 3, 11)).unwrap();
    let b = Image::from_data(24, 20, lcg(24 * 20 * 3, 12)).unwrap();
    // Values from numpy: 10·log10(1 / mean((a − b)²)) over the crop.
    let full = psnr(&a, &b, None).unwrap();
    assert!((full - 7.5501403399223985).abs() < 1e-9, "{full}");
    let mask = corner_mask(24, 20, (5, 3), (20, 17));
    let boxed = psnr(&a, &b, Some(&mask)).unwrap();
    assert!((boxed - 7.571024533665366).abs() < 1e-9, "{boxed}");
}

pub fn psnr_closed_forms() {
    let a = Image::new(8, 8);
    let b = Image::from_data(8, 8, vec![0.1; 8 * 8 * 3]).unwrap();
    assert!((psnr(&a, &b, None).unwrap() - 20.0).abs() < 1e-9);
    assert_eq!(psnr(&a, &a, None).unwrap(), f64::INFINITY);
}

fn image_strategy(w: usize, h: usize) -> impl Strategy<Value = Image> {
    proptest::collection::vec(0.0f64..=1.0, 3 * w * h).prop_map(move |d| Image::from_data(w, h, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ssim_is_symmetric_and_bounded(a in image_strategy(14, 12), b in image_strategy(14, 12)) {
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn perceptual_distance_is_nonnegative_and_zero_on_identity(a in image_strategy(12, 12), b in image_strategy(12, 12)) {
        let p = PerceptualProxy::default();
        prop_assert_eq!(p.distance(&a, &a).unwrap(), 0.0);
        prop_assert!(p.distance(&a, &b).unwrap() >= 0.0);
    }
}

mod tests {
    #[test]
    fn ssim_matches_reference_values() {
        super::ssim_matches_reference_values()
    }

    #[test]
    fn ssim_matches_direct_window_implementation() {
        super::ssim_matches_direct_window_implementation()
    }

    #[test]
    fn ssim_of_identical_images_is_exactly_one() {
        super::ssim_of_identical_images_is_exactly_one()
    }

    #[test]
    fn psnr_matches_reference_values() {
        super::psnr_matches_reference_values()
    }

    #[test]
    fn psnr_closed_forms() {
        super::psnr_closed_forms()
    }
}
