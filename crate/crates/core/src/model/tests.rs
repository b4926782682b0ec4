use ndarray::{Array1, Array2};
use rand::{Rng as _, SeedableRng};

use super::*;
use crate::losses::{chamfer_grad, grad_check};
use crate::seed::Rng;

fn toy_encoder(normalize: bool) -> EncoderConfig {
    EncoderConfig {
        k_neighbors: 3,
        layer_widths: vec![8, 8],
        latent_dim: 16,
        normalize,
    }
}

fn random_cloud(rng: &mut Rng, n: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, 6), || rng.random_range(-1.0..1.0))
}

#[test]
fn encoder_gradients_match_differences() {
    for normalize in [false, true] {
        let mut rng = Rng::seed_from_u64(10);
        let x = random_cloud(&mut rng, 12);
        let weights = Array1::from_shape_simple_fn(16, || rng.random_range(-1.0..1.0));
        let enc = Encoder::init(&toy_encoder(normalize), &mut rng);
        let f = |theta: &[f64]| {
            let mut e = enc.clone();
            e.assign_flat(theta);
            let (z, cache) = e.forward(x.view()).unwrap();
            let mut g = e.zeros_like();
            e.backward(&cache, weights.view(), &mut g);
            (z.0.dot(&weights), g.flatten())
        };
        let check = grad_check(f, &enc.flatten(), 200, 1e-6, 1).unwrap();
        assert!(
            check.max_rel_error < 1e-4,
            "normalize={normalize}: {check:?}"
        );
    }
}

#[test]
fn encoder_input_gradient() {
    let mut rng = Rng::seed_from_u64(11);
    let x = random_cloud(&mut rng, 10);
    let enc = Encoder::init(&toy_encoder(false), &mut rng);
    let weights = Array1::from_shape_simple_fn(16, || rng.random_range(-1.0..1.0));
    let f = |theta: &[f64]| {
        let xx = Array2::from_shape_vec((10, 6), theta.to_vec()).unwrap();
        let (z, cache) = enc.forward(xx.view()).unwrap();
        let mut g = enc.zeros_like();
        let dx = enc.backward(&cache, weights.view(), &mut g);
        (z.0.dot(&weights), dx.into_raw_vec_and_offset().0)
    };
    let check = grad_check(f, x.as_slice().unwrap(), 60, 1e-6, 2).unwrap();
    assert!(check.max_rel_error < 1e-4, "{check:?}");
}

#[test]
fn decoder_chamfer_gradients() {
    let mut rng = Rng::seed_from_u64(12);
    let cfg = DecoderConfig::for_points(8, vec![12]);
    let dec = Decoder::init(&cfg, 16, &mut rng);
    let target = random_cloud(&mut rng, 8);
    let z = Array1::from_shape_simple_fn(16, || rng.random_range(-1.0..1.0));
    let loss = |d: &Decoder, z: &Array1<f64>| {
        let (y, cache) = d.forward(z.view()).unwrap();
        let (c, dy) = chamfer_grad(target.view(), y.view()).unwrap();
        let mut g = d.zeros_like();
        let dz = d.backward(z.view(), &cache, dy.view(), &mut g);
        (c.value, g, dz)
    };
    let f_params = |theta: &[f64]| {
        let mut d = dec.clone();
        d.assign_flat(theta);
        let (v, g, _) = loss(&d, &z);
        (v, g.flatten())
    };
    let check = grad_check(f_params, &dec.flatten(), 200, 1e-4, 3).unwrap();
    assert!(check.max_rel_error < 1e-3, "{check:?}");
    let f_latent = |theta: &[f64]| {
        let (v, _, dz) = loss(&dec, &Array1::from_vec(theta.to_vec()));
        (v, dz.to_vec())
    };
    let check = grad_check(f_latent, z.as_slice().unwrap(), 16, 1e-4, 4).unwrap();
    assert!(check.max_rel_error < 1e-3, "{check:?}");
}

#[test]
fn decoder_shapes() {
    let cfg = DecoderConfig::for_points(2000, vec![8]);
    assert_eq!(cfg.grid_side, 45);
    let dec = Decoder::init(&cfg, 4, &mut Rng::seed_from_u64(0));
    let z = Array1::from_vec(vec![0.1, -0.2, 0.3, 0.0]);
    let a = dec.decode(z.view()).unwrap();
    assert_eq!(a.dim(), (2000, 6));
    assert_eq!(a, dec.decode(z.view()).unwrap());
    assert!(dec.decode(Array1::zeros(5).view()).is_err());
    let bad = DecoderConfig {
        grid_side: 44,
        ..cfg
    };
    assert_eq!(
        bad.validate(),
        Err(ModelError::GridTooSmall {
            side: 44,
            points: 2000
        })
    );
    let grid = DecoderConfig::for_points(9, vec![]).grid();
    assert_eq!(grid.row(0).to_vec(), vec![-0.5, -0.5]);
    assert_eq!(grid.row(8).to_vec(), vec![0.5, 0.5]);
}

#[test]
fn head_gradients_and_softmax() {
    let mut rng = Rng::seed_from_u64(13);
    let cfg = HeadConfig::new(16, 10);
    assert_eq!(cfg.dims(), vec![16, 8, 4, 10]);
    let head = Mlp::init(&cfg.dims(), &mut rng);
    let z = Array1::from_shape_simple_fn(16, || rng.random_range(-1.0..1.0));
    let logits = classify(&head, z.view());
    assert_eq!(logits.len(), 10);
    let p = crate::losses::softmax(logits.view());
    assert!((p.sum() - 1.0).abs() < 1e-9);

    let f = |theta: &[f64]| {
        let mut h = head.clone();
        h.assign_flat(theta);
        let x = z.view().insert_axis(ndarray::Axis(0));
        let (out, cache) = h.forward(x);
        let (v, d) = crate::losses::cross_entropy_grad(out.row(0), 3).unwrap();
        let mut g = h.zeros_like();
        h.backward(&cache, d.insert_axis(ndarray::Axis(0)).view(), &mut g);
        (v, g.flatten())
    };
    let check = grad_check(f, &head.flatten(), 100, 1e-5, 5).unwrap();
    assert!(check.max_rel_error < 1e-4, "{check:?}");
}

#[test]
fn encoder_is_permutation_invariant() {
    let mut rng = Rng::seed_from_u64(14);
    let enc = Encoder::init(&EncoderConfig::desk(), &mut rng);
    let x = random_cloud(&mut rng, 40);
    let z = enc.encode(x.view()).unwrap();
    assert_eq!(z.len(), 128);
    let mut perm: Vec<usize> = (0..40).collect();
    perm.reverse();
    perm.swap(3, 17);
    let xp = x.select(ndarray::Axis(0), &perm);
    let zp = enc.encode(xp.view()).unwrap();
    let dev = (&z.0 - &zp.0).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
    assert!(dev <= 1e-6, "{dev}");
}

#[test]
fn encoder_handles_degenerate_input() {
    let enc = Encoder::init(
        &EncoderConfig {
            normalize: true,
            ..EncoderConfig::desk()
        },
        &mut Rng::seed_from_u64(1),
    );
    let z = enc.encode(Array2::zeros((20, 6)).view()).unwrap();
    assert!(z.0.iter().all(|v| v.is_finite()));
    assert!(matches!(
        enc.encode(Array2::zeros((8, 6)).view()),
        Err(ModelError::Neighbors { .. })
    ));
    assert!(matches!(
        enc.encode(Array2::zeros((20, 3)).view()),
        Err(ModelError::Shape { .. })
    ));
    assert_eq!(EncoderConfig::paper().latent_dim, 1024);
}

fn model_cfg() -> ModelConfig {
    ModelConfig {
        encoder: toy_encoder(false),
        decoder: Some(DecoderConfig::for_points(12, vec![8])),
        head: Some(HeadConfig::new(16, 4)),
    }
}

#[test]
fn init_is_deterministic_and_seeded() {
    let a = init_params(&model_cfg(), 5).unwrap();
    let b = init_params(&model_cfg(), 5).unwrap();
    let c = init_params(&model_cfg(), 6).unwrap();
    assert_eq!(a.flatten(), b.flatten());
    assert_ne!(a.flatten(), c.flatten());
    assert!(a.all_finite());
    let mut names = Vec::new();
    a.visit("", &mut |n, _, _| names.push(n.to_string()));
    let mut dedup = names.clone();
    dedup.sort();
    dedup.dedup();
    assert_eq!(names.len(), dedup.len());
    assert!(names.contains(&"encoder.edge0.weight".to_string()));
    assert!(names.contains(&"head.2.bias".to_string()));
}

#[test]
fn init_weights_are_centered() {
    // Weights are U(-b, b) per tensor, biases zero. The mean of n draws has
    // standard deviation b / sqrt(3 n); require it within 3 of those.
    let params = init_params(
        &ModelConfig {
            encoder: EncoderConfig::desk(),
            decoder: None,
            head: Some(HeadConfig::new(128, 4)),
        },
        9,
    )
    .unwrap();
    let mut checked = 0;
    params.visit("", &mut |name, shape, data| {
        if name.ends_with(".bias") {
            assert!(data.iter().all(|&v| v == 0.0), "{name}");
            return;
        }
        let n = data.len() as f64;
        let bound = (6.0 / shape[0] as f64).sqrt();
        let mean = data.iter().sum::<f64>() / n;
        assert!(
            mean.abs() < 3.0 * bound / (3.0 * n).sqrt(),
            "{name}: {mean}"
        );
        assert!(data.iter().all(|v| v.abs() <= bound));
        checked += 1;
    });
    assert!(checked > 4);
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let params = init_params(&model_cfg(), 3).unwrap();
    let ckpt = Checkpoint::new(&params.encoder, Some(crate::cloud::Stream::Temporal))
        .with_decoder(params.decoder())
        .with_head(params.head(), &HeadConfig::new(16, 4));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.skpt");
    save_checkpoint(&ckpt, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, ckpt);
    assert_eq!(loaded.encoder().unwrap(), params.encoder);
    assert_eq!(&loaded.decoder().unwrap(), params.decoder());
    assert_eq!(loaded.head().unwrap().flatten(), params.head().flatten());

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(CheckpointError::Corrupt(_))
    ));
    let mut wrong_version = bytes.clone();
    wrong_version[4] = 9;
    std::fs::write(&path, &wrong_version).unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(CheckpointError::Version(9))
    ));
    std::fs::write(&path, b"NOPE0000").unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(CheckpointError::BadMagic)
    ));

    let other = EncoderConfig {
        latent_dim: 32,
        ..toy_encoder(false)
    };
    assert!(matches!(
        ckpt.encoder_matching(&other),
        Err(CheckpointError::Shape(_))
    ));

    let mut tampered = ckpt.clone();
    tampered.tensors[0].shape = vec![1, tampered.tensors[0].data.len()];
    let bytes = checkpoint::encode_checkpoint(&tampered);
    assert!(matches!(
        checkpoint::decode_checkpoint(&bytes),
        Err(CheckpointError::Shape(_))
    ));
}
