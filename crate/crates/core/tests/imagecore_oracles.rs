//! Resampling and frequency split against a direct 2-D weighted-sum oracle
//! and closed-form expectations.

use fsncsr_core::imagecore::{
    bicubic_resize, decode_fshf, decode_png, downsample, encode_fshf, encode_png, highpass, lowpass,
    quantize_u8, split, upsample, Domain, Image, ScaleFactor,
};
use fsncsr_core::metrics::psnr;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

fn s(v: usize) -> ScaleFactor {
    ScaleFactor::new(v).unwrap()
}

fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        1.5 * x.powi(3) - 2.5 * x * x + 1.0
    } else if x < 2.0 {
        -0.5 * x.powi(3) + 2.5 * x * x - 4.0 * x + 2.0
    } else {
        0.0
    }
}

/// Every output pixel as a normalized 2-D sum over the whole input grid,
/// with out-of-range taps clamped to the nearest edge pixel.
fn oracle_resize(img: &Image, oh: usize, ow: usize) -> Image {
    let (h, w) = (img.height(), img.width());
    let (sy, sx) = (h as f64 / oh as f64, w as f64 / ow as f64);
    let (ky, kx) = (sy.max(1.0), sx.max(1.0));
    Image::from_fn(oh, ow, img.channels(), img.domain(), |i, j, c| {
        let cy = (i as f64 + 0.5) * sy - 0.5;
        let cx = (j as f64 + 0.5) * sx - 0.5;
        let (mut acc, mut norm) = (0.0, 0.0);
        for a in -(4 * h as i64)..(5 * h as i64) {
            let wy = cubic((a as f64 - cy) / ky);
            if wy == 0.0 {
                continue;
            }
            for b in -(4 * w as i64)..(5 * w as i64) {
                let wx = cubic((b as f64 - cx) / kx);
                if wx == 0.0 {
                    continue;
                }
                let y = a.clamp(0, h as i64 - 1) as usize;
                let x = b.clamp(0, w as i64 - 1) as usize;
                acc += wy * wx * img.get(y, x, c);
                norm += wy * wx;
            }
        }
        acc / norm
    })
    .unwrap()
}

fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(h, w, c, Domain::Hr, |_, _, _| r.random::<f64>()).unwrap()
}

fn smooth_image(n: usize) -> Image {
    let f = std::f64::consts::TAU / n as f64;
    Image::from_fn(n, n, 3, Domain::Hr, |y, x, c| {
        0.5 + 0.2 * (f * x as f64 + c as f64).sin() * (f * y as f64).cos() + 0.1 * (f * (x + y) as f64).cos()
    })
    .unwrap()
}

fn box_blur(img: &Image, r: usize) -> Image {
    let (h, w) = (img.height() as i64, img.width() as i64);
    let r = r as i64;
    Image::from_fn(img.height(), img.width(), img.channels(), img.domain(), |y, x, c| {
        let mut acc = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let yy = (y as i64 + dy).clamp(0, h - 1) as usize;
                let xx = (x as i64 + dx).clamp(0, w - 1) as usize;
                acc += img.get(yy, xx, c);
            }
        }
        acc / ((2 * r + 1) * (2 * r + 1)) as f64
    })
    .unwrap()
}

fn mean_abs_diff(a: &Image, b: &Image) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data().len() as f64
}

fn energy(img: &Image) -> f64 {
    img.data().iter().map(|v| v * v).sum::<f64>() / img.data().len() as f64
}

#[test]
fn ramp_upscale_matches_oracle() {
    let ramp = Image::from_fn(8, 8, 1, Domain::Hr, |y, x, _| (y * 8 + x) as f64 / 63.0).unwrap();
    let got = upsample(&ramp, s(2)).unwrap();
    let want = oracle_resize(&ramp, 16, 16);
    assert!(got.max_abs_diff(&want) < 1e-12);
    // away from the clamped border a linear ramp is reproduced exactly
    let x = |i: usize| (i as f64 + 0.5) / 2.0 - 0.5;
    for i in 4..12 {
        for j in 4..12 {
            let v = (x(i) * 8.0 + x(j)) / 63.0;
            assert!((got.get(i, j, 0) - v).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn resize_matches_oracle(seed in any::<u64>(), h in 1usize..9, w in 1usize..9, oh in 1usize..17, ow in 1usize..17) {
        let img = random_image(h, w, 3, seed);
        let got = bicubic_resize(&img, oh, ow).unwrap();
        prop_assert!(got.max_abs_diff(&oracle_resize(&img, oh, ow)) < 1e-12);
    }

    #[test]
    fn frequency_identity(seed in any::<u64>(), scale in prop::sample::select(vec![2usize, 4, 8]), k in 1usize..4) {
        let n = scale * 2 * k;
        let x = random_image(n, n, 3, seed);
        let (low, high) = split(&x, s(scale)).unwrap();
        prop_assert_eq!(high.domain(), Domain::HighFreq);
        let back = low.zip_map(&high, Domain::Hr, |a, b| a + b).unwrap();
        prop_assert!(back.max_abs_diff(&x) < 1e-12);
        prop_assert!(highpass(&x, s(scale)).unwrap().max_abs_diff(&high) == 0.0);
    }

    #[test]
    fn quantize_is_monotone(a in -1.5f64..1.5, b in -1.5f64..1.5) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        for d in [Domain::Hr, Domain::HighFreq] {
            let q = quantize_u8(&Image::new(1, 2, 1, vec![lo, hi], d).unwrap());
            prop_assert!(q[0] <= q[1]);
        }
    }
}

#[test]
fn random_upscale_x4_matches_oracle() {
    let img = random_image(4, 4, 3, 9);
    let got = upsample(&img, s(4)).unwrap();
    assert!(got.max_abs_diff(&oracle_resize(&img, 16, 16)) < 1e-12);
}

#[test]
fn block_constant_downsample() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let blocks: Vec<f64> = (0..16 * 3).map(|_| r.random_range(0.3..0.7)).collect();
    let x = Image::from_fn(16, 16, 3, Domain::Hr, |y, x, c| blocks[((y / 4) * 4 + x / 4) * 3 + c]).unwrap();
    let want = Image::new(4, 4, 3, blocks, Domain::Hr).unwrap();
    let got = downsample(&x, s(4)).unwrap();
    assert!(mean_abs_diff(&got, &want) < 0.05, "{}", mean_abs_diff(&got, &want));
    let flat = Image::filled(16, 16, 3, 0.25, Domain::Hr).unwrap();
    assert!(downsample(&flat, s(4)).unwrap().data().iter().all(|v| (v - 0.25).abs() < 1e-12));
}

#[test]
fn smooth_image_survives_down_up() {
    let x = smooth_image(64);
    for scale in [2, 4] {
        let p = psnr(&lowpass(&x, s(scale)).unwrap(), &x).unwrap();
        assert!(p > 40.0, "x{scale}: {p} dB");
    }
}

#[test]
fn lowpass_nearly_idempotent() {
    let x = box_blur(&random_image(32, 32, 3, 5), 1);
    let l1 = lowpass(&x, s(4)).unwrap();
    let l2 = lowpass(&l1, s(4)).unwrap();
    assert!(mean_abs_diff(&l1, &l2) < 0.02, "{}", mean_abs_diff(&l1, &l2));
    let d1 = downsample(&l1, s(4)).unwrap();
    let d0 = downsample(&x, s(4)).unwrap();
    assert!(mean_abs_diff(&d0, &d1) < 0.02);
}

#[test]
fn noise_has_more_high_frequency_than_its_blur() {
    let noise = random_image(32, 32, 3, 11);
    let blurred = box_blur(&noise, 2);
    let hn = energy(&highpass(&noise, s(4)).unwrap());
    let hb = energy(&highpass(&blurred, s(4)).unwrap());
    assert!(hn > 4.0 * hb, "{hn} vs {hb}");
}

#[test]
fn quantize_anchors() {
    let hr = Image::new(1, 5, 1, vec![0.0, 1.0, 0.5, 1.0 / 600.0, 1.3], Domain::Hr).unwrap();
    assert_eq!(quantize_u8(&hr), vec![0, 255, 128, 0, 255]);
    let hf = Image::new(1, 4, 1, vec![-1.0, -0.5, -1.0 / 600.0, 2.0], Domain::HighFreq).unwrap();
    assert_eq!(quantize_u8(&hf), vec![-255, -128, 0, 255]);
}

#[test]
fn png_round_trip_within_half_level() {
    for c in [1, 3] {
        let x = random_image(7, 5, c, c as u64);
        let back = decode_png(&encode_png(&x).unwrap(), Path::new("mem.png")).unwrap();
        assert_eq!(back.shape(), x.shape());
        assert!(back.max_abs_diff(&x) <= 1.0 / 510.0 + 1e-12);
    }
}

#[test]
fn fshf_round_trip_to_f32_precision() {
    let h = Image::from_fn(6, 4, 3, Domain::HighFreq, |y, x, c| ((y * 13 + x * 7 + c) as f64 - 40.0) / 255.0).unwrap();
    let back = decode_fshf(&encode_fshf(&h), Path::new("mem.fshf")).unwrap();
    assert_eq!(back.domain(), Domain::HighFreq);
    assert!(back.max_abs_diff(&h) < 1e-7);
}

#[test]
fn indivisible_sizes_rejected() {
    let x = random_image(10, 12, 3, 0);
    assert!(downsample(&x, s(4)).is_err());
    assert!(ScaleFactor::new(1).is_err());
}
