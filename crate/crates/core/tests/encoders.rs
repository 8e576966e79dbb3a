mod common;

use common::*;
use misd_core::model::{FrozenTextEncoder, FrozenVisionEncoder, Image, TextEncoderSpec, TokenEmbedding, VisionEncoderSpec};
use misd_core::MisdError;
use rand::Rng;

fn random_prompt(r: &mut impl Rng, slots: usize, dim: usize) -> Vec<TokenEmbedding> {
    (0..slots).map(|_| TokenEmbedding::new((0..dim).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()).collect()
}

fn random_image(r: &mut impl Rng, spec: &VisionEncoderSpec) -> Image {
    let n = spec.height * spec.width * spec.channels;
    Image::new(spec.height, spec.width, spec.channels, (0..n).map(|_| r.random_range(0.0..1.0)).collect()).unwrap()
}

#[test]
fn text_vjp_matches_finite_differences() {
    let mut r = rng(77);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let spec = TextEncoderSpec { embed_dim: 8, token_dim: 6, context_len: 4, seed: r.random(), ..Default::default() };
        let enc = FrozenTextEncoder::new(spec).unwrap();
        let prompt = random_prompt(&mut r, 5, 6);
        let cot: Vec<f64> = (0..8).map(|_| r.random_range(-1.0..1.0)).collect();
        let dot = |p: &[TokenEmbedding]| enc.encode(p).unwrap().as_slice().iter().zip(&cot).map(|(a, b)| a * b).sum::<f64>();
        let grads = enc.vjp(&prompt, &cot).unwrap();
        assert_eq!(grads.len(), 5);
        for s in 0..5 {
            for j in 0..6 {
                let shifted = |delta: f64| {
                    let mut p = prompt.clone();
                    let mut v = p[s].as_slice().to_vec();
                    v[j] += delta;
                    p[s] = TokenEmbedding::new(v).unwrap();
                    dot(&p)
                };
                let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
                let analytic = grads[s].as_slice()[j];
                worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6));
            }
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn text_encoder_checks_shapes_and_is_deterministic() {
    let spec = TextEncoderSpec { embed_dim: 8, token_dim: 6, context_len: 4, seed: 3, ..Default::default() };
    let a = FrozenTextEncoder::new(spec.clone()).unwrap();
    let b = FrozenTextEncoder::new(spec).unwrap();
    assert_eq!(a.weight(), b.weight());
    let mut r = rng(1);
    let p = random_prompt(&mut r, 5, 6);
    assert_eq!(a.encode(&p).unwrap(), b.encode(&p).unwrap());
    assert!(a.encode(&p).unwrap().as_slice().iter().all(|v| v.abs() < 1.0));
    assert!(matches!(a.encode(&p[..4]), Err(MisdError::Shape(_))));
    assert!(matches!(a.encode(&random_prompt(&mut r, 5, 5)), Err(MisdError::Shape(_))));
    let other = FrozenTextEncoder::new(TextEncoderSpec { seed: 4, ..a.spec().clone() }).unwrap();
    assert_ne!(a.weight(), other.weight());
}

#[test]
fn vision_encoder_is_affine_in_pixels() {
    let mut r = rng(5);
    for _ in 0..20 {
        let spec = VisionEncoderSpec { embed_dim: 8, height: 16, width: 16, patch: 4, seed: r.random(), ..Default::default() };
        let enc = FrozenVisionEncoder::new(spec.clone()).unwrap();
        let (x, y) = (random_image(&mut r, &spec), random_image(&mut r, &spec));
        let (a, b) = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
        // centered images combine linearly
        let center = |img: &Image| img.data().iter().map(|v| v - spec.pixel_mean).collect::<Vec<_>>();
        let mixed: Vec<f64> =
            center(&x).iter().zip(center(&y)).map(|(p, q)| a * p + b * q + spec.pixel_mean).collect();
        let mixed = Image::new(16, 16, 3, mixed).unwrap();
        let ex = enc.encode(&x).unwrap();
        let ey = enc.encode(&y).unwrap();
        let em = enc.encode(&mixed).unwrap();
        for i in 0..8 {
            assert!((em.as_slice()[i] - (a * ex.as_slice()[i] + b * ey.as_slice()[i])).abs() < 1e-12);
        }
        assert_eq!(enc.encode(&x).unwrap(), FrozenVisionEncoder::new(spec.clone()).unwrap().encode(&x).unwrap());
    }
}

#[test]
fn every_patch_moves_the_embedding() {
    let mut r = rng(6);
    let spec = VisionEncoderSpec { embed_dim: 8, height: 16, width: 16, patch: 4, seed: 2, ..Default::default() };
    let enc = FrozenVisionEncoder::new(spec.clone()).unwrap();
    let base = random_image(&mut r, &spec);
    let e0 = enc.encode(&base).unwrap();
    for py in 0..4 {
        for px in 0..4 {
            let mut img = base.clone();
            img.set(py * 4 + 1, px * 4 + 2, 1, img.get(py * 4 + 1, px * 4 + 2, 1) + 0.5);
            assert_ne!(enc.encode(&img).unwrap(), e0, "patch ({py}, {px}) has no effect");
        }
    }
}

#[test]
fn vision_encoder_rejects_bad_input() {
    let spec = VisionEncoderSpec { embed_dim: 8, height: 16, width: 16, patch: 4, ..Default::default() };
    let enc = FrozenVisionEncoder::new(spec).unwrap();
    assert!(matches!(enc.encode(&Image::filled(8, 16, 3, 0.5)), Err(MisdError::Shape(_))));
    let mut img = Image::filled(16, 16, 3, 0.5);
    img.set(0, 0, 0, f64::NAN);
    assert!(matches!(enc.encode(&img), Err(MisdError::Data(_))));
    let bad = VisionEncoderSpec { height: 18, ..VisionEncoderSpec::default() };
    assert!(matches!(FrozenVisionEncoder::new(bad), Err(MisdError::Config(_))));
}
