//! Pins the fast transform path and the spectral pooling branches against
//! naive O(N²) DFT oracles, plus the transform invariants as property tests.

mod common;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use rcaiunet::autograd::{ops, Tape};
use rcaiunet::tensor::fft::{crop_spectrum, dft2d, idft2d, spectral_downsample, spectral_lowpass};
use rcaiunet::tensor::{ComplexTensor, DType, Tensor};

fn random_image(h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = StdRng::seed_from_u64(seed);
    Tensor::from_fn(&[1, 1, h, w], DType::F64, |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn dft_matches_naive_oracle_bin_by_bin() {
    let x = random_image(8, 8, 42);
    let got = dft2d(&x);
    let (re, im) = common::naive_dft2d(x.data(), 8, 8);
    for i in 0..64 {
        assert!((got.re()[i] - re[i]).abs() < 1e-9, "re bin {i}");
        assert!((got.im()[i] - im[i]).abs() < 1e-9, "im bin {i}");
    }
}

#[test]
fn idft_matches_naive_oracle_on_hermitian_spectra() {
    // Build a Hermitian 6×6 spectrum from a random real image.
    let x = random_image(6, 6, 7);
    let spectrum = dft2d(&x);
    let got = idft2d(&spectrum).unwrap();
    let (re, _) = common::naive_idft2d(spectrum.re(), spectrum.im(), 6, 6);
    for i in 0..36 {
        assert!((got.data()[i] - re[i]).abs() < 1e-9, "pixel {i}");
    }
}

#[test]
fn crop_then_invert_matches_band_limit_oracle() {
    let x = random_image(8, 8, 11);
    let spectrum = dft2d(&x);
    let cropped = crop_spectrum(&spectrum, 4, 4).unwrap();
    let got = idft2d(&cropped).unwrap();
    let oracle = common::naive_band_limit_downsample(x.data(), 8, 8, 4, 4);
    for i in 0..16 {
        assert!(
            (got.data()[i] - oracle[i]).abs() < 1e-9,
            "pixel {i}: {} vs {}",
            got.data()[i],
            oracle[i]
        );
    }
}

#[test]
fn spectral_branch_matches_oracle_across_sizes() {
    // Valid-mode spectral branch on random inputs from 8×8 to 32×32.
    for (idx, size) in [8usize, 12, 16, 21, 32].into_iter().enumerate() {
        let mut rng = StdRng::seed_from_u64(100 + idx as u64);
        let x = Tensor::from_fn(&[1, 2, size, size], DType::F64, |_| rng.gen_range(-1.0..1.0));
        let (oh, ow) = (size / 2, size / 2);
        let got = spectral_downsample(&x, oh, ow).unwrap();
        for c in 0..2 {
            let chan = &x.data()[c * size * size..(c + 1) * size * size];
            let oracle = common::naive_band_limit_downsample(chan, size, size, oh, ow);
            let got_chan = &got.data()[c * oh * ow..(c + 1) * oh * ow];
            for i in 0..oh * ow {
                assert!(
                    (got_chan[i] - oracle[i]).abs() < 1e-9,
                    "size {size} ch {c} px {i}: {} vs {}",
                    got_chan[i],
                    oracle[i]
                );
            }
        }
    }
}

#[test]
fn same_mode_spectral_branch_matches_oracle() {
    for (idx, size) in [6usize, 8, 9, 16].into_iter().enumerate() {
        let mut rng = StdRng::seed_from_u64(200 + idx as u64);
        let x = Tensor::from_fn(&[1, 1, size, size], DType::F64, |_| rng.gen_range(-1.0..1.0));
        let got = spectral_lowpass(&x).unwrap();
        let oracle = common::naive_band_limit_lowpass(x.data(), size, size);
        for i in 0..size * size {
            assert!(
                (got.data()[i] - oracle[i]).abs() < 1e-9,
                "size {size} px {i}: {} vs {}",
                got.data()[i],
                oracle[i]
            );
        }
    }
}

#[test]
fn hybrid_pool_spectral_branch_through_tape_matches_oracle() {
    // The tape op used inside hybrid pooling is the same map.
    let x = random_image(8, 8, 31);
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = tape.value(ops::spectral_downsample(&tape, xv, 4, 4));
    let oracle = common::naive_band_limit_downsample(x.data(), 8, 8, 4, 4);
    for i in 0..16 {
        assert!((out.data()[i] - oracle[i]).abs() < 1e-9);
    }
}

#[test]
fn roundtrip_tolerances_by_dtype() {
    let x64 = random_image(8, 8, 55);
    let back64 = idft2d(&dft2d(&x64)).unwrap();
    for (a, b) in x64.data().iter().zip(back64.data()) {
        assert!((a - b).abs() < 1e-9);
    }
    let x32 = x64.cast(DType::F32);
    let back32 = idft2d(&dft2d(&x32)).unwrap().cast(DType::F32);
    for (a, b) in x32.data().iter().zip(back32.data()) {
        assert!((a - b).abs() < 1e-4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dft_is_linear(
        seed_a in 0u64..1000,
        seed_b in 1000u64..2000,
        ca in -3.0f64..3.0,
        cb in -3.0f64..3.0,
    ) {
        let x = random_image(6, 6, seed_a);
        let y = random_image(6, 6, seed_b);
        let combo = x.scale(ca).add(&y.scale(cb)).unwrap();
        let lhs = dft2d(&combo);
        let fx = dft2d(&x);
        let fy = dft2d(&y);
        for i in 0..36 {
            let re = ca * fx.re()[i] + cb * fy.re()[i];
            let im = ca * fx.im()[i] + cb * fy.im()[i];
            prop_assert!((lhs.re()[i] - re).abs() < 1e-9);
            prop_assert!((lhs.im()[i] - im).abs() < 1e-9);
        }
    }

    #[test]
    fn parseval_identity_holds(seed in 0u64..5000, h in 2usize..10, w in 2usize..10) {
        let x = random_image(h, w, seed);
        let spectrum = dft2d(&x);
        let spatial: f64 = x.data().iter().map(|v| v * v).sum();
        let spectral: f64 = spectrum
            .re()
            .iter()
            .zip(spectrum.im())
            .map(|(r, i)| r * r + i * i)
            .sum::<f64>()
            / (h * w) as f64;
        prop_assert!((spatial - spectral).abs() <= 1e-9 * spatial.max(1.0));
    }

    #[test]
    fn roundtrip_identity_holds(seed in 0u64..5000, h in 2usize..12, w in 2usize..12) {
        let x = random_image(h, w, seed);
        let back = idft2d(&dft2d(&x)).unwrap();
        for (a, b) in x.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn crop_of_real_input_stays_real_and_preserves_constants(
        seed in 0u64..5000,
        h in 2usize..12,
        w in 2usize..12,
        oh in 1usize..12,
        ow in 1usize..12,
        c in -2.0f64..2.0,
    ) {
        prop_assume!(oh <= h && ow <= w);
        // Realness: the checked inverse accepts the cropped spectrum.
        let x = random_image(h, w, seed);
        let cropped = crop_spectrum(&dft2d(&x), oh, ow).unwrap();
        let back = idft2d(&cropped);
        prop_assert!(back.is_ok(), "imag residue after crop");
        // Constants map to equal constants.
        let k = Tensor::full(&[1, 1, h, w], c, DType::F64);
        let kc = idft2d(&crop_spectrum(&dft2d(&k), oh, ow).unwrap()).unwrap();
        for &v in kc.data() {
            prop_assert!((v - c).abs() < 1e-9);
        }
    }

    #[test]
    fn dc_only_spectrum_has_flat_inverse(h in 1usize..8, w in 1usize..8, c in -2.0f64..2.0) {
        let mut re = vec![0.0; h * w];
        re[0] = c * (h * w) as f64;
        let s = ComplexTensor::new(&[1, 1, h, w], re, vec![0.0; h * w]).unwrap();
        let y = idft2d(&s).unwrap();
        for &v in y.data() {
            prop_assert!((v - c).abs() < 1e-10);
        }
    }
}
