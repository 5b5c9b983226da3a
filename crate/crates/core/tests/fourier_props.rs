use std::f64::consts::PI;

use difex::fourier;
use difex::Spectrum;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn signal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn max_diff(a: &Spectrum, b: &Spectrum) -> f64 {
    a.re()
        .iter()
        .zip(b.re())
        .chain(a.im().iter().zip(b.im()))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Direct double sum over both axes, written out independently of the library.
fn direct_2d(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let (mut re, mut im) = (vec![0.0; h * w], vec![0.0; h * w]);
    for u in 0..h {
        for v in 0..w {
            for r in 0..h {
                for c in 0..w {
                    let ang = -2.0 * PI * ((u * r) as f64 / h as f64 + (v * c) as f64 / w as f64);
                    re[u * w + v] += x[r * w + c] * ang.cos();
                    im[u * w + v] += x[r * w + c] * ang.sin();
                }
            }
        }
    }
    (re, im)
}

#[test]
fn fft_matches_naive_for_every_length_to_64() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for n in 1..=64 {
            let x = signal(&mut rng, n);
            let err = max_diff(&fourier::fft(&x).unwrap(), &fourier::dft_naive(&x).unwrap());
            assert!(err < 1e-9, "n={n} seed={seed}: {err}");
        }
    }
}

#[test]
fn fft2_matches_direct_double_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for h in 1..=8 {
        for w in 1..=8 {
            let x = signal(&mut rng, h * w);
            let s = fourier::fft2(&x, h, w).unwrap();
            let (re, im) = direct_2d(&x, h, w);
            let err = s
                .re()
                .iter()
                .zip(&re)
                .chain(s.im().iter().zip(&im))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-9, "{h}x{w}: {err}");
        }
    }
}

#[test]
fn parseval_roundtrip_and_scale_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..20 {
        let n = rng.random_range(1..=64);
        let x = signal(&mut rng, n);
        let s = fourier::fft(&x).unwrap();

        let time: f64 = x.iter().map(|v| v * v).sum();
        let freq: f64 = fourier::amplitude(&s).iter().map(|a| a * a).sum::<f64>() / n as f64;
        assert!((time - freq).abs() <= 1e-9 * time.max(f64::MIN_POSITIVE), "case {case}");

        let back = fourier::inverse(&s);
        let err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "case {case}: {err}");

        let k = rng.random_range(0.01..100.0);
        let scaled: Vec<f64> = x.iter().map(|v| k * v).collect();
        let p1 = fourier::phase(&s);
        let p2 = fourier::phase(&fourier::fft(&scaled).unwrap());
        let err = p1.iter().zip(&p2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "case {case}: {err}");
    }
}

#[test]
fn phase_only_reconstruction_of_an_impulse() {
    // Unit-amplitude spectrum of a shifted impulse is the impulse itself.
    let mut x = vec![0.0; 16];
    x[3] = 5.0;
    let rec = fourier::reconstruct_phase_only(&fourier::fft(&x).unwrap());
    for (i, v) in rec.iter().enumerate() {
        let want: f64 = if i == 3 { 1.0 } else { 0.0 };
        assert!((v - want).abs() < 1e-12, "{i}: {v}");
    }
}

#[test]
fn per_channel_matches_separate_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = signal(&mut rng, 3 * 16);
    let joint = fourier::per_channel_phase(&x, &[3, 16]).unwrap();
    for (c, chunk) in x.chunks(16).enumerate() {
        let p = fourier::phase(&fourier::fft(chunk).unwrap());
        assert_eq!(&joint[c * 16..(c + 1) * 16], &p[..]);
    }
}

proptest! {
    #[test]
    fn phase_lies_in_half_open_interval(x in prop::collection::vec(-10.0f64..10.0, 1..40)) {
        let p = fourier::phase(&fourier::fft(&x).unwrap());
        for v in p {
            prop_assert!(v > -PI && v <= PI);
        }
    }

    #[test]
    fn polar_roundtrip(x in prop::collection::vec(-5.0f64..5.0, 1..33)) {
        let s = fourier::fft(&x).unwrap();
        let back = fourier::from_polar(&fourier::amplitude(&s), &fourier::phase(&s), &s).unwrap();
        prop_assert!(max_diff(&s, &back) < 1e-9);
    }
}
